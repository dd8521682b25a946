# transport.py
"""
Transport core for pixel-to-class label assignment
Builds -log p cost matrices from per-pixel class probabilities
Solves the entropy-regularized transport problem with Sinkhorn-Knopp scaling
"""

import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy.special import logsumexp

from .errors import (
    InvalidCostError,
    ShapeError,
    SimplexError,
    SolveStatus,
    ZeroMassError,
)

logger = logging.getLogger(__name__)

# Solver defaults
DEFAULT_BETA = 0.05
DEFAULT_TOLERANCE = 1e-6
DEFAULT_MAX_ITERS = 1000
DEFAULT_PROB_FLOOR = 1e-12

SIMPLEX_ATOL = 1e-6
MARGINAL_SUM_ATOL = 1e-9

# Cost ranges up to this many multiples of beta are solved in a single stage
SINGLE_STAGE_EXPONENT = 30.0

# Wider ranges anneal beta from the cost range down to the target, halving per stage
ANNEAL_FACTOR = 0.5
ANNEAL_STAGE_TOLERANCE = 1e-3
ANNEAL_STAGE_MAX_ITERS = 100

# Scalings outside [1 / ABSORB_LIMIT, ABSORB_LIMIT] are folded into the potentials
ABSORB_LIMIT = 1e3

# Iterations granted to a warm start before annealing from scratch
WARM_START_MAX_ITERS = 200


class SinkhornSettings(BaseModel):
    """Entropic regularization weight, stopping rule and probability clamp."""

    model_config = ConfigDict(frozen=True)

    beta: float = Field(DEFAULT_BETA, gt=0)
    max_iters: int = Field(DEFAULT_MAX_ITERS, ge=1)
    tolerance: float = Field(DEFAULT_TOLERANCE, gt=0)
    prob_floor: float = Field(DEFAULT_PROB_FLOOR, gt=0, lt=1)


@dataclass(frozen=True)
class LayoutDescriptor:
    """
    Row layout of a flattened (b, k, H, W) tensor.

    Row i corresponds to pixel (b, h, w) with i = b*H*W + h*W + w.
    """

    batch: int
    height: int
    width: int

    @property
    def n(self) -> int:
        return self.batch * self.height * self.width

    def row_index(self, b: int, h: int, w: int) -> int:
        return (b * self.height + h) * self.width + w

    def position(self, row: int) -> Tuple[int, int, int]:
        b, rest = divmod(row, self.height * self.width)
        h, w = divmod(rest, self.width)
        return b, h, w

    def unflatten(self, matrix: np.ndarray) -> np.ndarray:
        """Invert flatten_predictions: (n, k) -> (b, k, H, W)."""
        matrix = np.asarray(matrix)
        if matrix.ndim != 2 or matrix.shape[0] != self.n:
            raise ShapeError(f"expected {self.n} rows, got shape {matrix.shape}")
        k = matrix.shape[1]
        return matrix.reshape(self.batch, self.height, self.width, k).transpose(0, 3, 1, 2)

    def flatten_map(self, grid: np.ndarray) -> np.ndarray:
        """(b, H, W) per-pixel map -> length-n vector in row order."""
        grid = np.asarray(grid)
        if grid.shape != (self.batch, self.height, self.width):
            raise ShapeError(f"expected map of shape {(self.batch, self.height, self.width)}, got {grid.shape}")
        return grid.reshape(-1)

    def to_grid(self, vector: np.ndarray) -> np.ndarray:
        """Length-n vector -> (b, H, W) per-pixel map."""
        vector = np.asarray(vector)
        if vector.shape != (self.n,):
            raise ShapeError(f"expected vector of length {self.n}, got shape {vector.shape}")
        return vector.reshape(self.batch, self.height, self.width)


def validate_prob_matrix(p: np.ndarray, atol: float = SIMPLEX_ATOL) -> np.ndarray:
    """
    Check that every row of p is a point on the probability simplex.

    Args:
        p: Array of shape (n, k)
        atol: Allowed deviation of row sums from one

    Returns:
        p as a float64 array

    Raises:
        ShapeError: If p is not a non-empty 2-D array
        SimplexError: If values leave [0, 1] or rows do not sum to one
    """
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 2 or 0 in p.shape:
        raise ShapeError(f"probability matrix must be non-empty 2-D, got shape {p.shape}")
    if not np.all(np.isfinite(p)):
        raise SimplexError("probabilities must be finite")
    if p.min() < -atol or p.max() > 1.0 + atol:
        raise SimplexError(f"probabilities outside [0, 1]: min={p.min():.3g}, max={p.max():.3g}")
    worst = float(np.max(np.abs(p.sum(axis=1) - 1.0)))
    if worst > atol:
        raise SimplexError(f"rows must sum to 1 (worst deviation {worst:.3g} > {atol:.1g})")
    return p


def validate_prob_tensor(p: np.ndarray, atol: float = SIMPLEX_ATOL) -> np.ndarray:
    """Check a (b, k, H, W) tensor holds a probability simplex per pixel."""
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 4:
        raise ShapeError(f"probability tensor must be (b, k, H, W), got shape {p.shape}")
    if 0 in p.shape:
        raise ShapeError(f"probability tensor has a zero extent: {p.shape}")
    validate_prob_matrix(p.transpose(0, 2, 3, 1).reshape(-1, p.shape[1]), atol=atol)
    return p


def flatten_predictions(p: np.ndarray) -> Tuple[np.ndarray, LayoutDescriptor]:
    """
    Permute a (b, k, H, W) probability tensor so each pixel owns a contiguous
    class vector, then flatten spatial and batch dimensions.

    Args:
        p: Per-pixel class probabilities

    Returns:
        (n x k probability matrix, layout that inverts the flattening)
    """
    p = validate_prob_tensor(p)
    b, k, h, w = p.shape
    layout = LayoutDescriptor(batch=b, height=h, width=w)
    matrix = np.ascontiguousarray(p.transpose(0, 2, 3, 1).reshape(-1, k))
    return matrix, layout


def unflatten_predictions(matrix: np.ndarray, layout: LayoutDescriptor) -> np.ndarray:
    return layout.unflatten(matrix)


def _readonly(array: np.ndarray) -> np.ndarray:
    array = np.array(array, dtype=np.float64, copy=True)
    array.flags.writeable = False
    return array


@dataclass(frozen=True)
class CostMatrix:
    """Dense n x k matrix of per-pixel, per-class assignment costs."""

    data: np.ndarray

    def __post_init__(self):
        data = _readonly(self.data)
        if data.ndim != 2:
            raise ShapeError(f"cost matrix must be 2-D, got shape {data.shape}")
        if data.shape[0] < 1 or data.shape[1] < 2:
            raise ShapeError(f"cost matrix needs n >= 1 and k >= 2, got {data.shape}")
        if not np.all(np.isfinite(data)):
            raise InvalidCostError("cost entries must be finite")
        if data.min() < 0:
            raise InvalidCostError(f"cost entries must be >= 0, found {data.min():.3g}")
        object.__setattr__(self, "data", data)

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def k(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class MarginalPrior:
    """Prescribed row (pixel) and column (class) masses of the transport plan."""

    row_mass: np.ndarray
    col_mass: np.ndarray

    def __post_init__(self):
        row_mass = _readonly(self.row_mass)
        col_mass = _readonly(self.col_mass)
        for name, mass in (("row_mass", row_mass), ("col_mass", col_mass)):
            if mass.ndim != 1 or mass.size == 0:
                raise ShapeError(f"{name} must be a non-empty vector")
            if not np.all(mass > 0):
                raise SimplexError(f"{name} entries must be > 0")
            if abs(mass.sum() - 1.0) > MARGINAL_SUM_ATOL:
                raise SimplexError(f"{name} must sum to 1, got {mass.sum():.12f}")
        object.__setattr__(self, "row_mass", row_mass)
        object.__setattr__(self, "col_mass", col_mass)

    @classmethod
    def uniform(cls, n: int, k: int) -> "MarginalPrior":
        return cls(row_mass=np.full(n, 1.0 / n), col_mass=np.full(k, 1.0 / k))

    @classmethod
    def empirical(cls, p: np.ndarray, prob_floor: float = DEFAULT_PROB_FLOOR) -> "MarginalPrior":
        """Uniform pixel mass, class mass from the mean predicted class probability."""
        p = validate_prob_matrix(p)
        col = np.maximum(p.mean(axis=0), prob_floor)
        return cls(row_mass=np.full(p.shape[0], 1.0 / p.shape[0]), col_mass=col / col.sum())


@dataclass(frozen=True)
class TransportPlan:
    """
    Coupling between pixels (rows) and classes (columns).

    Sinkhorn plans carry log scaling vectors with
    data = diag(exp(log_u)) @ exp(-c / beta) @ diag(exp(log_v)).
    Oracle and deserialized plans carry none.
    """

    data: np.ndarray
    iterations_used: int
    final_violation: float
    status: SolveStatus
    log_u: Optional[np.ndarray] = None
    log_v: Optional[np.ndarray] = None

    def __post_init__(self):
        object.__setattr__(self, "data", _readonly(self.data))
        if self.log_u is not None:
            object.__setattr__(self, "log_u", _readonly(self.log_u))
        if self.log_v is not None:
            object.__setattr__(self, "log_v", _readonly(self.log_v))

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def k(self) -> int:
        return self.data.shape[1]

    @property
    def converged(self) -> bool:
        return self.status != SolveStatus.NOT_CONVERGED

    @property
    def u(self) -> Optional[np.ndarray]:
        return None if self.log_u is None else np.exp(self.log_u)

    @property
    def v(self) -> Optional[np.ndarray]:
        return None if self.log_v is None else np.exp(self.log_v)


def build_cost_matrix(p: np.ndarray, settings: Optional[SinkhornSettings] = None) -> CostMatrix:
    """
    Cost of assigning pixel i to class j: -log(max(p[i, j], prob_floor)).

    Args:
        p: n x k matrix of per-pixel class probabilities
        settings: Supplies the probability floor

    Returns:
        CostMatrix with finite, nonnegative entries
    """
    settings = settings or SinkhornSettings()
    p = validate_prob_matrix(p)
    return CostMatrix(-np.log(np.maximum(p, settings.prob_floor)))


def marginal_violation(data: np.ndarray, prior: MarginalPrior) -> float:
    """Largest of the L1 row and L1 column marginal violations."""
    row_err = np.abs(data.sum(axis=1) - prior.row_mass).sum()
    col_err = np.abs(data.sum(axis=0) - prior.col_mass).sum()
    return float(max(row_err, col_err))


def _check_prior(c: CostMatrix, prior: MarginalPrior):
    if prior.row_mass.shape[0] != c.n or prior.col_mass.shape[0] != c.k:
        raise ShapeError(
            f"prior of sizes ({prior.row_mass.shape[0]}, {prior.col_mass.shape[0]}) "
            f"does not match cost matrix {c.data.shape}"
        )


def _row_potential(c: CostMatrix, prior: MarginalPrior, beta: float, col: np.ndarray) -> np.ndarray:
    # every kernel row sums to its row mass for the given column potential
    return beta * (np.log(prior.row_mass) - logsumexp((col[None, :] - c.data) / beta, axis=1))


def _stabilized_stage(
    c: CostMatrix,
    prior: MarginalPrior,
    beta: float,
    tolerance: float,
    max_iters: int,
    col: np.ndarray,
) -> Tuple[np.ndarray, np.ndarray, int, float]:
    """
    Sinkhorn scaling on the kernel exp((row_i + col_j - c_ij) / beta).

    Potentials are kept in cost units; scalings that drift too far are
    absorbed into them and the kernel is rebuilt, so neither the kernel nor
    the scaling vectors over- or underflow.

    Returns:
        (row potential, column potential, iterations, L1 column violation);
        the violation is inf when the scaling broke down
    """
    a, b = prior.row_mass, prior.col_mass
    row = _row_potential(c, prior, beta, col)
    kernel = np.exp((row[:, None] + col[None, :] - c.data) / beta)
    u = np.ones(c.n)
    v = np.ones(c.k)
    col_sums = kernel.sum(axis=0)

    violation = np.inf
    iteration = 0
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        for iteration in range(1, max_iters + 1):
            v_next = b / col_sums
            u_next = a / (kernel @ v_next)
            if not (np.all(np.isfinite(v_next)) and np.all(np.isfinite(u_next)) and u_next.min() > 0):
                violation = np.inf
                break
            u, v = u_next, v_next
            col_sums = kernel.T @ u
            # rows are exact after the u update
            violation = float(np.abs(v * col_sums - b).sum())
            if violation <= tolerance:
                break
            if max(u.max(), v.max(), 1.0 / u.min(), 1.0 / v.min()) > ABSORB_LIMIT:
                row = row + beta * np.log(u)
                col = col + beta * np.log(v)
                kernel = np.exp((row[:, None] + col[None, :] - c.data) / beta)
                u = np.ones(c.n)
                v = np.ones(c.k)
                col_sums = kernel.sum(axis=0)

    return row + beta * np.log(u), col + beta * np.log(v), iteration, violation


def _annealed_solve(
    c: CostMatrix, prior: MarginalPrior, settings: SinkhornSettings, budget: int
) -> Tuple[np.ndarray, np.ndarray, int]:
    col = np.zeros(c.k)
    used = 0
    cost_range = float(c.data.max() - c.data.min())
    if cost_range / settings.beta > SINGLE_STAGE_EXPONENT:
        # warm-up stages share at most half the budget
        stage_budget = budget // 2
        stage_beta = cost_range
        stage_tolerance = max(settings.tolerance, ANNEAL_STAGE_TOLERANCE)
        while stage_beta > settings.beta and used < stage_budget:
            _, col, iterations, _ = _stabilized_stage(
                c, prior, stage_beta, stage_tolerance, min(ANNEAL_STAGE_MAX_ITERS, stage_budget - used), col
            )
            used += iterations
            stage_beta *= ANNEAL_FACTOR
        logger.debug(f"Annealed beta down to {settings.beta} in {used} warm-up iterations")

    row, col, iterations, _ = _stabilized_stage(c, prior, settings.beta, settings.tolerance, budget - used, col)
    return row, col, used + iterations


def sinkhorn_solve(
    c: CostMatrix,
    prior: Optional[MarginalPrior] = None,
    settings: Optional[SinkhornSettings] = None,
    warm_start: Optional[np.ndarray] = None,
) -> TransportPlan:
    """
    Solve min <pi, c> - beta * H(pi) under the prior's marginal constraints.

    Alternates u <- row_mass / (K v) and v <- col_mass / (K^T u) with
    K = exp(-c / beta) until the larger L1 marginal violation drops to the
    tolerance or max_iters is reached. Cost ranges wider than
    SINGLE_STAGE_EXPONENT * beta are first solved at larger beta, each stage
    starting from the previous stage's potentials. Warm-up iterations count
    toward max_iters.

    Args:
        c: Cost matrix
        prior: Marginals (uniform 1/n, 1/k when omitted)
        settings: Regularization and stopping rule
        warm_start: Column potential (cost units, see class_potential) of a
            related earlier solve; tried first at the target beta

    Returns:
        TransportPlan; status NOT_CONVERGED when the tolerance was not met
    """
    settings = settings or SinkhornSettings()
    prior = prior or MarginalPrior.uniform(c.n, c.k)
    _check_prior(c, prior)

    used = 0
    solved = False
    if warm_start is not None:
        warm_start = np.asarray(warm_start, dtype=np.float64)
        if warm_start.shape != (c.k,) or not np.all(np.isfinite(warm_start)):
            raise ShapeError(f"warm start must be {c.k} finite class potentials, got shape {warm_start.shape}")
        row, col, used, violation = _stabilized_stage(
            c, prior, settings.beta, settings.tolerance, min(settings.max_iters, WARM_START_MAX_ITERS), warm_start
        )
        solved = violation <= settings.tolerance or used >= settings.max_iters
        if not solved:
            logger.debug(f"Warm start stalled after {used} iterations, annealing from scratch")
    if not solved:
        row, col, iterations = _annealed_solve(c, prior, settings, settings.max_iters - used)
        used += iterations

    log_u = row / settings.beta
    log_v = col / settings.beta
    with np.errstate(over="ignore"):
        plan = np.exp(log_u[:, None] - c.data / settings.beta + log_v[None, :])
    violation = marginal_violation(plan, prior) if np.all(np.isfinite(plan)) else np.inf

    if violation <= settings.tolerance:
        status = SolveStatus.CONVERGED
        logger.debug(f"✓ Sinkhorn converged in {used} iterations (violation {violation:.2e})")
    else:
        status = SolveStatus.NOT_CONVERGED
        logger.warning(
            f"⚠️ Sinkhorn did not converge in {used} iterations "
            f"(violation {violation:.2e} > {settings.tolerance:.1e})"
        )

    return TransportPlan(
        data=plan,
        iterations_used=used,
        final_violation=violation,
        status=status,
        log_u=log_u,
        log_v=log_v,
    )


def class_potential(plan: TransportPlan, beta: float) -> np.ndarray:
    """Column potential of a Sinkhorn plan in cost units, usable as a warm start."""
    if plan.log_v is None:
        raise ValueError("plan carries no scaling vectors")
    return beta * plan.log_v




def transport_cost(plan: TransportPlan, c: CostMatrix) -> float:
    """Total transport cost sum_ij pi_ij * c_ij."""
    if plan.data.shape != c.data.shape:
        raise ShapeError(f"plan {plan.data.shape} and cost {c.data.shape} differ in shape")
    return float(np.sum(plan.data * c.data))


def plan_row_normalize(plan: TransportPlan) -> np.ndarray:
    """
    Per-pixel class distributions from a transport plan.

    Returns:
        n x k matrix whose rows are plan rows divided by their mass

    Raises:
        ZeroMassError: If any row of the plan has no mass
    """
    mass = plan.data.sum(axis=1)
    empty = np.flatnonzero(mass <= 0)
    if empty.size:
        raise ZeroMassError(f"{empty.size} plan rows carry no mass (first: row {empty[0]})")
    return plan.data / mass[:, None]


def plan_entropy(plan: TransportPlan) -> float:
    """Shannon entropy -sum pi log pi, with 0 log 0 = 0."""
    data = plan.data[plan.data > 0]
    return float(-np.sum(data * np.log(data)))
