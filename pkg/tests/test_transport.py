import logging

import numpy as np
import ot
import pytest

from otlabel.ot_assign.errors import InvalidCostError, ShapeError, SimplexError, SolveStatus, ZeroMassError
from otlabel.ot_assign.transport import (
    DEFAULT_BETA,
    CostMatrix,
    LayoutDescriptor,
    MarginalPrior,
    SinkhornSettings,
    TransportPlan,
    build_cost_matrix,
    class_potential,
    flatten_predictions,
    marginal_violation,
    plan_entropy,
    plan_row_normalize,
    sinkhorn_solve,
    transport_cost,
)
from otlabel.ot_assign.oracle import lp_oracle_solve


def test_cost_is_negative_log_probability():
    p = np.array([[0.5, 0.5, 0.0], [0.2, 0.3, 0.5]])
    c = build_cost_matrix(p)
    np.testing.assert_allclose(c.data[1], -np.log([0.2, 0.3, 0.5]))
    assert c.data[0, 2] == pytest.approx(-np.log(1e-12))
    assert np.all(np.isfinite(c.data))


def test_cost_matrix_is_read_only():
    c = CostMatrix(np.ones((2, 2)))
    with pytest.raises(ValueError):
        c.data[0, 0] = 5.0


@pytest.mark.parametrize(
    "data, error",
    [
        (np.array([[1.0, -0.1]]), InvalidCostError),
        (np.array([[1.0, np.nan]]), InvalidCostError),
        (np.array([[1.0, np.inf]]), InvalidCostError),
        (np.ones((3, 1)), ShapeError),
        (np.ones(4), ShapeError),
    ],
)
def test_invalid_cost_matrices_rejected(data, error):
    with pytest.raises(error):
        CostMatrix(data)


def test_non_simplex_probabilities_rejected():
    with pytest.raises(SimplexError):
        build_cost_matrix(np.array([[0.5, 0.6]]))
    with pytest.raises(ShapeError):
        build_cost_matrix(np.zeros((0, 3)))


def test_flatten_orders_rows_by_batch_then_raster(rng, random_probs):
    b, k, h, w = 2, 3, 4, 5
    p = random_probs(rng, b * h * w, k).reshape(b, h, w, k).transpose(0, 3, 1, 2)
    matrix, layout = flatten_predictions(p)
    assert layout == LayoutDescriptor(batch=b, height=h, width=w)
    assert matrix.shape == (b * h * w, k)
    row = layout.row_index(1, 2, 3)
    np.testing.assert_array_equal(matrix[row], p[1, :, 2, 3])
    assert layout.position(row) == (1, 2, 3)
    np.testing.assert_array_equal(layout.unflatten(matrix), p)


def test_uniform_prior_masses():
    prior = MarginalPrior.uniform(4, 3)
    np.testing.assert_allclose(prior.row_mass, 0.25)
    np.testing.assert_allclose(prior.col_mass, 1 / 3)
    with pytest.raises(SimplexError):
        MarginalPrior(row_mass=np.array([0.5, 0.6]), col_mass=np.array([1.0]))


def test_empirical_prior_follows_mean_prediction():
    p = np.array([[0.9, 0.1], [0.7, 0.3]])
    prior = MarginalPrior.empirical(p)
    np.testing.assert_allclose(prior.col_mass, [0.8, 0.2])
    np.testing.assert_allclose(prior.row_mass, [0.5, 0.5])


def test_zero_cost_gives_uniform_plan():
    plan = sinkhorn_solve(CostMatrix(np.zeros((2, 2))))
    np.testing.assert_allclose(plan.data, 0.25, atol=1e-12)
    assert plan.status == SolveStatus.CONVERGED


@pytest.mark.parametrize("beta", [0.01, 0.05, 0.2])
def test_converged_plans_are_feasible(beta):
    rng = np.random.default_rng(int(beta * 1000))
    converged = 0
    trials = 40
    for _ in range(trials):
        n, k = int(rng.integers(1, 129)), int(rng.integers(2, 33))
        c = CostMatrix(rng.uniform(0.0, 1.0, size=(n, k)))
        plan = sinkhorn_solve(c, settings=SinkhornSettings(beta=beta))
        assert np.all(plan.data >= 0)
        if plan.converged:
            converged += 1
            prior = MarginalPrior.uniform(n, k)
            assert marginal_violation(plan.data, prior) <= 1e-6
            assert plan.final_violation <= 1e-6
            assert plan.iterations_used <= 1000
    if beta >= 0.2:
        assert converged == trials
    else:
        assert converged >= 0.95 * trials


def test_probability_costs_use_log_domain_and_converge(rng, random_probs):
    p = random_probs(rng, 256, 19, scale=4.0)
    plan = sinkhorn_solve(build_cost_matrix(p))
    assert plan.converged
    np.testing.assert_allclose(plan.data.sum(axis=0), 1 / 19, atol=1e-6)


def test_matches_reference_sinkhorn(rng):
    for _ in range(5):
        n, k = int(rng.integers(2, 12)), int(rng.integers(2, 6))
        cost = rng.uniform(0.0, 1.0, size=(n, k))
        settings = SinkhornSettings(beta=0.2, tolerance=1e-11, max_iters=100000)
        plan = sinkhorn_solve(CostMatrix(cost), settings=settings)
        a, b = np.full(n, 1 / n), np.full(k, 1 / k)
        reference = ot.sinkhorn(a, b, cost, reg=0.2, numItermax=100000, stopThr=1e-13)
        np.testing.assert_allclose(plan.data, reference, atol=1e-6)


def test_plan_factorizes_through_scaling_vectors(rng):
    beta = 0.2
    for scale in (1.0, 20.0):  # single stage, then annealed
        c = CostMatrix(rng.uniform(0.0, scale, size=(7, 4)))
        plan = sinkhorn_solve(c, settings=SinkhornSettings(beta=beta))
        rebuilt = np.exp(plan.log_u[:, None] - c.data / beta + plan.log_v[None, :])
        np.testing.assert_allclose(rebuilt, plan.data, rtol=1e-9, atol=1e-14)


def test_row_and_column_shifts_leave_plan_unchanged(rng):
    settings = SinkhornSettings(beta=0.1, tolerance=1e-10, max_iters=20000)
    for _ in range(20):
        n, k = int(rng.integers(2, 20)), int(rng.integers(2, 8))
        cost = rng.uniform(0.0, 1.0, size=(n, k))
        shifted = cost + rng.uniform(0.0, 2.0, size=(n, 1)) + rng.uniform(0.0, 2.0, size=(1, k))
        base = sinkhorn_solve(CostMatrix(cost), settings=settings)
        moved = sinkhorn_solve(CostMatrix(shifted), settings=settings)
        assert base.converged and moved.converged
        np.testing.assert_allclose(base.data, moved.data, atol=1e-6)


def test_entropic_gap_to_lp_optimum(rng):
    for _ in range(60):
        n, k = int(rng.integers(1, 17)), int(rng.integers(2, 9))
        beta = float(rng.choice([0.01, 0.05, 0.2]))
        c = CostMatrix(rng.uniform(0.0, 1.0, size=(n, k)))
        plan = sinkhorn_solve(c, settings=SinkhornSettings(beta=beta, max_iters=20000))
        exact = lp_oracle_solve(c)
        gap = transport_cost(plan, c) - transport_cost(exact, c)
        slack = 1e-6 + plan.final_violation * c.data.max()
        assert -slack <= gap <= beta * np.log(n * k) + slack


def test_small_beta_approaches_lp_optimum(rng):
    for _ in range(10):
        n, k = int(rng.integers(2, 9)), int(rng.integers(2, 5))
        c = CostMatrix(rng.uniform(0.0, 1.0, size=(n, k)))
        plan = sinkhorn_solve(c, settings=SinkhornSettings(beta=0.001, max_iters=20000))
        exact = lp_oracle_solve(c)
        assert abs(transport_cost(plan, c) - transport_cost(exact, c)) <= 1e-2


def test_entropy_grows_with_beta(rng):
    c = CostMatrix(rng.uniform(0.0, 1.0, size=(10, 4)))
    entropies = [
        plan_entropy(sinkhorn_solve(c, settings=SinkhornSettings(beta=beta, tolerance=1e-10, max_iters=50000)))
        for beta in (0.05, 0.2, 1.0, 5.0)
    ]
    assert entropies == sorted(entropies)
    assert entropies[-1] <= np.log(40) + 1e-9


def test_non_convergence_is_flagged_not_raised(caplog):
    c = CostMatrix(np.array([[0.0, 1.0, 3.0], [2.0, 0.5, 0.0]]))
    with caplog.at_level(logging.WARNING):
        plan = sinkhorn_solve(c, settings=SinkhornSettings(max_iters=1))
    assert plan.status == SolveStatus.NOT_CONVERGED
    assert not plan.converged
    assert plan.iterations_used == 1
    assert plan.final_violation > 1e-6
    assert "did not converge" in caplog.text


def test_prior_shape_mismatch():
    with pytest.raises(ShapeError):
        sinkhorn_solve(CostMatrix(np.zeros((3, 2))), MarginalPrior.uniform(2, 2))


def test_row_normalize():
    plan = sinkhorn_solve(CostMatrix(np.array([[0.0, 1.0], [1.0, 0.0], [0.5, 0.5]])))
    q = plan_row_normalize(plan)
    np.testing.assert_allclose(q.sum(axis=1), 1.0)
    assert q[0, 0] > q[0, 1]

    empty = TransportPlan(
        data=np.array([[0.5, 0.5], [0.0, 0.0]]),
        iterations_used=0,
        final_violation=0.0,
        status=SolveStatus.EXACT,
    )
    with pytest.raises(ZeroMassError):
        plan_row_normalize(empty)


def test_plan_entropy_of_uniform_plan():
    plan = sinkhorn_solve(CostMatrix(np.zeros((3, 4))))
    assert plan_entropy(plan) == pytest.approx(np.log(12))


def test_wide_cost_gap_gives_diagonal_plan():
    plan = sinkhorn_solve(CostMatrix(np.array([[0.0, 10.0], [10.0, 0.0]])), settings=SinkhornSettings(beta=0.05))
    assert plan.converged
    np.testing.assert_allclose(plan.data, [[0.5, 0.0], [0.0, 0.5]], atol=1e-6)


@pytest.mark.parametrize("counts", [(60, 30, 20, 10), (5, 1, 1, 1), (1, 0, 0, 3)])
def test_one_hot_probabilities_converge(counts):
    labels = np.repeat(np.arange(len(counts)), counts)
    p = np.eye(len(counts))[labels]
    plan = sinkhorn_solve(build_cost_matrix(p))
    assert plan.converged
    assert plan.iterations_used <= 1000
    np.testing.assert_allclose(plan.data.sum(axis=0), 1 / len(counts), atol=1e-6)
    np.testing.assert_allclose(plan.data.sum(axis=1), 1 / labels.size, atol=1e-6)


def test_sharp_softmax_costs_converge(rng, random_probs):
    for _ in range(10):
        p = random_probs(rng, 2048, 5, scale=8.0)
        plan = sinkhorn_solve(build_cost_matrix(p))
        assert plan.converged
        assert marginal_violation(plan.data, MarginalPrior.uniform(2048, 5)) <= 1e-6


def test_warm_start_from_own_solution_converges_at_once(rng, random_probs):
    c = build_cost_matrix(random_probs(rng, 300, 6, scale=4.0))
    cold = sinkhorn_solve(c)
    warm = sinkhorn_solve(c, warm_start=class_potential(cold, DEFAULT_BETA))
    assert cold.converged and warm.converged
    assert warm.iterations_used <= 2 < cold.iterations_used
    np.testing.assert_allclose(warm.data, cold.data, atol=1e-6)


def test_bad_warm_start_falls_back_to_annealing(rng, random_probs):
    c = build_cost_matrix(random_probs(rng, 64, 4, scale=4.0))
    plan = sinkhorn_solve(c, warm_start=np.array([0.0, 500.0, -500.0, 0.0]))
    assert plan.converged
    assert plan.iterations_used <= 1000
    np.testing.assert_allclose(plan.data.sum(axis=0), 0.25, atol=1e-6)
    with pytest.raises(ShapeError):
        sinkhorn_solve(c, warm_start=np.zeros(3))


def test_single_pixel_plan_follows_class_mass():
    c = CostMatrix(np.array([[0.2, 1.0, 0.5]]))
    prior = MarginalPrior(row_mass=np.array([1.0]), col_mass=np.array([0.5, 0.3, 0.2]))
    beta = 0.1
    plan = sinkhorn_solve(c, prior, SinkhornSettings(beta=beta))
    q = plan_row_normalize(plan)
    direct = np.exp(-c.data[0] / beta + plan.log_v)
    np.testing.assert_allclose(q[0], direct / direct.sum(), rtol=1e-9)
    np.testing.assert_allclose(q[0], prior.col_mass, atol=1e-6)
