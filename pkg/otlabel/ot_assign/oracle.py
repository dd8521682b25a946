# oracle.py
"""
Exact linear-programming oracle for the unregularized transport problem
Used to verify Sinkhorn plans on small instances
"""

import logging
from typing import Optional

import numpy as np
import ot

from .errors import OracleSizeError, SolveStatus
from .transport import (
    CostMatrix,
    MarginalPrior,
    TransportPlan,
    _check_prior,
    marginal_violation,
)

logger = logging.getLogger(__name__)

MAX_ORACLE_ROWS = 64
MAX_ORACLE_COLS = 16
NETWORK_SIMPLEX_MAX_ITERS = 1_000_000


def lp_oracle_solve(c: CostMatrix, prior: Optional[MarginalPrior] = None) -> TransportPlan:
    """
    Exact optimum of min <pi, c> subject to the prior's marginals.

    Solved by the network simplex method; any optimal vertex may be returned
    when the optimum is not unique.

    Args:
        c: Cost matrix with n <= 64 and k <= 16
        prior: Marginals (uniform when omitted)

    Returns:
        TransportPlan with status EXACT and no scaling vectors

    Raises:
        OracleSizeError: If the instance exceeds the oracle's size cap
    """
    if c.n > MAX_ORACLE_ROWS or c.k > MAX_ORACLE_COLS:
        raise OracleSizeError(
            f"LP oracle is capped at {MAX_ORACLE_ROWS}x{MAX_ORACLE_COLS}, got {c.n}x{c.k}"
        )
    prior = prior or MarginalPrior.uniform(c.n, c.k)
    _check_prior(c, prior)

    a = np.ascontiguousarray(prior.row_mass, dtype=np.float64)
    b = np.ascontiguousarray(prior.col_mass, dtype=np.float64)
    cost = np.ascontiguousarray(c.data, dtype=np.float64)
    plan, log = ot.emd(a, b, cost, numItermax=NETWORK_SIMPLEX_MAX_ITERS, log=True)
    if log.get("warning"):
        logger.warning(f"⚠️ Network simplex: {log['warning']}")

    plan = np.asarray(plan, dtype=np.float64)
    return TransportPlan(
        data=plan,
        iterations_used=0,
        final_violation=marginal_violation(plan, prior),
        status=SolveStatus.EXACT,
    )
