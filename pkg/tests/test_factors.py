import numpy as np
import pytest

from conftest import central_difference
from mulgpmp.environment import OccupancyGrid, compute_sdf, sdf_query
from mulgpmp.factors import (
    NoiseWeights,
    anchor_factor,
    gp_prior_factor,
    hinge_mutual,
    hinge_static,
    interpolated_factor,
    mutual_factor,
    mutual_jacobian,
    static_factor,
)
from mulgpmp.gp_prior import interp_coeffs

N_POINTS = 100
FD_STEP = 1e-6
REL_TOL = 1e-5


def rel_error(J, fd):
    return np.max(np.abs(J - fd)) / max(1.0, np.max(np.abs(fd)))


@pytest.fixture(scope="module")
def world():
    grid = OccupancyGrid.empty(0, 0, 20, 20, 0.25)
    grid = grid.with_rectangles([(4, 4, 8, 9), (12, 10, 15, 17)]).with_discs(np.array([[14.0, 4.0]]), 1.5)
    return grid, compute_sdf(grid)


def smooth_point(rng, grid, margin=0.02):
    """Random position away from bilinear cell boundaries."""
    cs = grid.cell_size
    while True:
        p = rng.uniform(1.0, 19.0, size=2)
        frac = ((p - np.array(grid.origin)) / cs - 0.5) % 1.0
        if np.all(np.minimum(frac, 1 - frac) > margin):
            return p


def check_factor(make, blocks, rng_states, n_points=N_POINTS):
    """Compare each analytic Jacobian block against central differences."""
    worst = 0.0
    for states in rng_states(n_points):
        lin = make(*states)
        for k in range(blocks):
            def f(x, k=k):
                s = list(states)
                s[k] = x
                return make(*s).error
            fd = central_difference(f, states[k], FD_STEP)
            worst = max(worst, rel_error(lin.jacobians[k], fd))
    assert worst <= REL_TOL, worst


def test_hinge_static_values():
    assert hinge_static(3.0, 2.0) == 0.0
    assert hinge_static(0.5, 2.0) == 1.5
    assert hinge_static(2.0, 2.0) == 0.0
    np.testing.assert_array_equal(hinge_static(np.array([3.0, 0.5, -1.0]), 2.0), [0.0, 1.5, 3.0])


def test_hinge_mutual_values():
    assert hinge_mutual([0, 0], [20, 0], 15) == 0.0
    assert hinge_mutual([0, 0], [10, 0], 15) == 5.0
    assert hinge_mutual([1, 1], [1, 1], 15) == 15.0
    np.testing.assert_allclose(mutual_jacobian([0, 0], [3, 4], 15), [0.6, 0.8])
    np.testing.assert_array_equal(mutual_jacobian([0, 0], [30, 40], 15), [0.0, 0.0])
    np.testing.assert_allclose(mutual_jacobian([0, 0], [9, 12], 15), [0.3, 0.4])
    np.testing.assert_array_equal(mutual_jacobian([2, 2], [2, 2], 15), [0.0, 0.0])


def test_static_factor_values(world):
    grid, sdf = world
    w = NoiseWeights()
    far = static_factor([0.5, 19.5, 0, 0], sdf, 0.1, NoiseWeights(eps_obs=0.1))
    assert far.error[0] == 0 and not far.jacobians[0].any()
    # a state whose bilinear distance is exactly 1.2 m
    flat = OccupancyGrid((0.0, 0.0), 1.0, np.zeros((5, 5), bool))
    vals = np.tile(np.arange(5, dtype=float), (5, 1))
    from mulgpmp.environment import SignedDistanceField
    field = SignedDistanceField((0.0, 0.0), 1.0, vals)
    p = np.array([1.7, 2.5])
    assert np.isclose(sdf_query(field, p)[0], 1.2)
    lin = static_factor(np.r_[p, 0, 0], field, 1.0, w)
    assert np.isclose(lin.error[0], 1.8)
    np.testing.assert_allclose(lin.jacobians[0], [[-1.0, 0, 0, 0]])
    assert lin.sigma == w.sigma_obs


def test_mutual_factor_values():
    w = NoiseWeights()
    off = mutual_factor([0, 0, 0, 0], [20, 0, 1, 1], w)
    assert off.error[0] == 0 and not any(J.any() for J in off.jacobians)
    on = mutual_factor([0, 0, 0, 0], [10, 0, 0, 0], w)
    assert on.error[0] == 5.0
    np.testing.assert_allclose(on.jacobians[0], [[1.0, 0, 0, 0]])
    np.testing.assert_allclose(on.jacobians[1], [[-1.0, 0, 0, 0]])


def test_mutual_factor_symmetry(rng):
    w = NoiseWeights()
    for _ in range(50):
        a, b = rng.normal(size=(2, 4)) * 6
        ab, ba = mutual_factor(a, b, w), mutual_factor(b, a, w)
        assert ab.error[0] == ba.error[0]
        np.testing.assert_array_equal(ab.jacobians[0], ba.jacobians[1])
        np.testing.assert_array_equal(ab.jacobians[1], ba.jacobians[0])
        np.testing.assert_allclose(ab.jacobians[0], -ab.jacobians[1])


def test_static_jacobian_finite_differences(world, rng):
    grid, sdf = world
    w = NoiseWeights(eps_obs=30.0)  # keep every sample in the active branch

    def states(n):
        for _ in range(n):
            yield (np.r_[smooth_point(rng, grid), rng.normal(size=2)],)

    check_factor(lambda x: static_factor(x, sdf, 1.0, w), 1, states)


def test_mutual_jacobian_finite_differences(rng):
    w = NoiseWeights()

    def states(n):
        count = 0
        while count < n:
            a, b = rng.uniform(-8, 8, size=(2, 4))
            d = np.linalg.norm(a[:2] - b[:2])
            if 0.05 < d < w.eps_mul - 0.05:
                count += 1
                yield a, b

    check_factor(lambda a, b: mutual_factor(a, b, w), 2, states)


def test_interpolated_static_jacobian_finite_differences(world, rng):
    grid, sdf = world
    w = NoiseWeights(eps_obs=30.0)
    dt = 10.0 / 9
    coeffs = [interp_coeffs(dt, k * dt / 10, 1.0 * np.eye(2)) for k in range(1, 10)]

    def states(n):
        count = 0
        while count < n:
            c = coeffs[count % len(coeffs)]
            x_i = np.r_[rng.uniform(2, 18, 2), rng.normal(size=2)]
            x_n = np.r_[x_i[:2] + rng.normal(size=2), rng.normal(size=2)]
            p = c.lam[:2] @ x_i + c.psi[:2] @ x_n
            frac = ((p - np.array(grid.origin)) / grid.cell_size - 0.5) % 1.0
            if np.all(np.minimum(frac, 1 - frac) > 0.02) and np.all((p > 0.5) & (p < 19.5)):
                count += 1
                yield c, x_i, x_n

    worst = 0.0
    for c, x_i, x_n in states(N_POINTS):
        make = lambda a, b: interpolated_factor("static", (a, b), c, w, sdf=sdf, radius=1.0, dt_interval=dt)
        lin = make(x_i, x_n)
        worst = max(worst, rel_error(lin.jacobians[0], central_difference(lambda a: make(a, x_n).error, x_i)))
        worst = max(worst, rel_error(lin.jacobians[1], central_difference(lambda b: make(x_i, b).error, x_n)))
    assert worst <= REL_TOL, worst


def test_interpolated_mutual_jacobian_finite_differences(rng):
    w = NoiseWeights()
    dt = 10.0 / 9
    qc = np.diag([1.0, 2.0])

    def states(n):
        count = 0
        while count < n:
            c = interp_coeffs(dt, rng.uniform(0.05, dt - 0.05), qc)
            s = rng.uniform(-6, 6, size=(4, 4))
            pa = c.lam[:2] @ s[0] + c.psi[:2] @ s[1]
            pb = c.lam[:2] @ s[2] + c.psi[:2] @ s[3]
            if 0.05 < np.linalg.norm(pa - pb) < w.eps_mul - 0.05:
                count += 1
                yield c, s

    worst = 0.0
    for c, s in states(N_POINTS):
        def err(k, x):
            t = list(s)
            t[k] = x
            return interpolated_factor("mutual", t, c, w, dt_interval=dt).error

        lin = interpolated_factor("mutual", list(s), c, w, dt_interval=dt)
        for k in range(4):
            worst = max(worst, rel_error(lin.jacobians[k], central_difference(lambda x: err(k, x), s[k])))
    assert worst <= REL_TOL, worst


def test_anchor_and_prior_jacobians_finite_differences(rng):
    dt = 10.0 / 9
    qc = np.diag([0.5, 2.0])

    def anchor_states(n):
        for _ in range(n):
            yield (rng.normal(size=4) * 5,)

    target = rng.normal(size=4)
    check_factor(lambda x: anchor_factor(x, target), 1, anchor_states)

    mu_i, mu_n = rng.normal(size=(2, 4))

    def gp_states(n):
        for _ in range(n):
            yield tuple(rng.normal(size=(2, 4)) * 5)

    check_factor(lambda a, b: gp_prior_factor(a, b, dt, qc, mu_i, mu_n), 2, gp_states)


def test_anchor_values():
    lin = anchor_factor(np.array([3.0, 1, 2, 0]), np.array([2.0, 1, 2, 0]))
    np.testing.assert_array_equal(lin.error, [1.0, 0, 0, 0])
    assert anchor_factor(np.ones(4), np.ones(4)).cost == 0.0


def test_interpolated_endpoint_matches_plain_factor(world, rng):
    grid, sdf = world
    w = NoiseWeights()
    dt = 0.7
    c0 = interp_coeffs(dt, 0.0, np.eye(2))
    x_i = np.r_[9.3, 10.1, 0.2, -0.4]
    x_n = np.r_[10.0, 10.0, 0.5, 0.5]
    plain = static_factor(x_i, sdf, 1.0, w)
    interp = interpolated_factor("static", (x_i, x_n), c0, w, sdf=sdf, radius=1.0, dt_interval=dt)
    np.testing.assert_allclose(interp.error, plain.error, atol=1e-12)
    np.testing.assert_allclose(interp.jacobians[0], plain.jacobians[0], atol=1e-12)
    np.testing.assert_allclose(interp.jacobians[1], 0.0, atol=1e-12)


def test_interpolated_factor_argument_errors():
    c = interp_coeffs(1.0, 0.5, np.eye(2))
    with pytest.raises(ValueError):
        interpolated_factor("mutual", [np.zeros(4)] * 4, c, NoiseWeights(), dt_interval=2.0)
    with pytest.raises(ValueError):
        interpolated_factor("bogus", [np.zeros(4)] * 2, c, NoiseWeights())
    with pytest.raises(ValueError):
        NoiseWeights(sigma_obs=0.0)


def test_cost_scales_with_sigma(rng):
    a, b = rng.uniform(-3, 3, size=(2, 4))
    lo = mutual_factor(a, b, NoiseWeights(sigma_mul=0.5))
    hi = mutual_factor(a, b, NoiseWeights(sigma_mul=1.0))
    assert np.isclose(lo.cost, 4 * hi.cost)


def test_prior_cost_scales_inversely_with_qc(rng):
    a, b = rng.normal(size=(2, 4))
    one = gp_prior_factor(a, b, 0.9, np.eye(2))
    three = gp_prior_factor(a, b, 0.9, 3 * np.eye(2))
    assert np.isclose(one.cost, 3 * three.cost)
    for blocks in (one.hessian_blocks(),):
        np.testing.assert_allclose(blocks[0][1], blocks[1][0].T)
