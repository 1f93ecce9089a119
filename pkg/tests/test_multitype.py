import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import optimize

from spinelab import bbm, mc, multitype as mt
from spinelab.errors import ConfigInvalid, OutOfDomain
from spinelab.offspring import finite, log_power_tail
from spinelab.rng import stream
from spinelab.trees import Snapshot, SpineRecord
from spinelab.verdict import Verdict

Q2 = np.array([[-1.0, 1.0], [1.0, -1.0]])
TWO = mt.TypedParams(1.0, Q2, np.array([1.0, 2.0]), np.array([1.0, 1.0]), [finite(0, 1)] * 2)
DEG = mt.TypedParams.degenerate(a0=1.0, r0=1.0)
GRID = np.linspace(-3.0, 0.0, 50)


def rightmost(params, lam):
    """Independent oracle: rightmost eigenvalue of the unsymmetrised matrix."""
    return float(np.max(np.linalg.eigvals(params.h_matrix(lam)).real))


def test_pi_inner_examples():
    assert mt.pi_inner([1, 1], [1, 1], [0.5, 0.5]) == 1.0
    assert mt.pi_inner([1, 0], [0, 1], [0.5, 0.5]) == 0.0
    assert mt.pi_inner([2, 2], [1, 1], [0.3, 0.7]) == pytest.approx(2.0, abs=1e-15)
    with pytest.raises(ValueError):
        mt.pi_inner([1], [1, 1], [0.5, 0.5])


def test_degenerate_spectral():
    s = mt.typed_spectral(DEG, -1.0)
    assert s.e_lambda == pytest.approx(1.5, abs=1e-12)
    np.testing.assert_allclose(s.v_lambda, [1.0, 1.0], atol=1e-12)


def test_two_type_spectral_against_characteristic_polynomial():
    s = mt.typed_spectral(TWO, -1.0)
    e = (1.5 + math.sqrt(4.25)) / 2
    assert s.e_lambda == pytest.approx(e, abs=1e-12)
    assert s.v_lambda[1] / s.v_lambda[0] == pytest.approx(e - 0.5, abs=1e-12)
    assert mt.pi_inner(s.v_lambda, s.v_lambda, TWO.pi) == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("params", [DEG, TWO])
def test_spectral_grid_invariants(params):
    for lam in GRID:
        s = mt.typed_spectral(params, lam)
        h = params.h_matrix(lam)
        assert np.max(np.abs(h @ s.v_lambda - s.e_lambda * s.v_lambda)) <= 1e-10
        assert np.all(s.v_lambda > 0)
        assert abs(mt.pi_inner(s.v_lambda, s.v_lambda, params.pi) - 1) <= 1e-12
        assert s.e_lambda == pytest.approx(rightmost(params, lam), abs=1e-10)
        assert abs(s.e_prime - mt.e_prime_check(params, lam, 1e-5)) <= 1e-6
        d2 = mt.e_lambda(params, lam + 1e-3) - 2 * mt.e_lambda(params, lam) + mt.e_lambda(params, lam - 1e-3)
        assert d2 > 0


def test_e_prime_examples():
    assert mt.typed_spectral(DEG, -1.0).e_prime == pytest.approx(-1.0, abs=1e-12)
    assert mt.e_prime_check(DEG, -1.0) == pytest.approx(-1.0, abs=1e-6)
    assert mt.typed_spectral(TWO, 0.0).e_prime == 0.0
    with pytest.raises(ValueError):
        mt.e_prime_check(TWO, -1.0, 0.0)


def test_sup_representation():
    rng = stream(21)
    for lam in (-2.0, -0.7, 0.0):
        s = mt.typed_spectral(TWO, lam)
        h = TWO.h_matrix(lam)
        for _ in range(100):
            v = rng.standard_normal(2)
            v /= math.sqrt(mt.pi_inner(v, v, TWO.pi))
            assert mt.pi_inner(h @ v, v, TWO.pi) <= s.e_lambda + 1e-10


@pytest.mark.parametrize("a0, expected", [(1.0, -math.sqrt(2)), (2.0, -1.0)])
def test_lambda_tilde_degenerate(a0, expected):
    assert mt.lambda_tilde_typed(mt.TypedParams.degenerate(a0=a0)) == pytest.approx(expected, abs=1e-8)


def test_lambda_tilde_grid_oracle():
    grid = np.linspace(-5.0, -0.01, 100_000)
    c = np.array([-rightmost(TWO, lam) / lam for lam in grid[::50]])
    k = int(np.argmin(c)) * 50
    lo, hi = grid[max(k - 50, 0)], grid[min(k + 50, grid.size - 1)]
    fine = np.linspace(lo, hi, 2001)
    cf = np.array([-rightmost(TWO, lam) / lam for lam in fine])
    j = int(np.argmin(cf))
    res = optimize.minimize_scalar(lambda lam: -rightmost(TWO, lam) / lam,
                                   bracket=(fine[j - 1], fine[j], fine[j + 1]), tol=1e-12)
    assert mt.lambda_tilde_typed(TWO) == pytest.approx(res.x, abs=1e-8)


def test_speed_and_lmp():
    assert mt.lmp_speed_typed(DEG) == pytest.approx(-math.sqrt(2), abs=1e-8)
    assert mt.lmp_speed_typed(mt.TypedParams.degenerate(a0=2.0)) == pytest.approx(-2.0, abs=1e-8)
    lt = mt.lambda_tilde_typed(TWO)
    assert mt.lmp_speed_typed(TWO) == pytest.approx(rightmost(TWO, lt) / lt, abs=1e-10)
    with pytest.raises(OutOfDomain):
        mt.speed(TWO, 0.0)


def test_decay_rate():
    assert mt.decay_rate_typed(DEG, -2.0) == pytest.approx(2 * (1.5 - math.sqrt(2)), abs=1e-8)
    lt = mt.lambda_tilde_typed(DEG)
    assert mt.decay_rate_typed(DEG, lt - 1e-4) < 1e-7
    with pytest.raises(OutOfDomain):
        mt.decay_rate_typed(DEG, -1.0)


def test_decay_rate_bounds_mc_decay():
    lam = 1.5 * mt.lambda_tilde_typed(TWO)
    rate = mt.decay_rate_typed(TWO, lam)
    assert rate > 0
    spec = mt.typed_spectral(TWO, lam)
    t = 5.0
    logs = [math.log(mt.z_lambda_typed(mt.simulate_p_typed(TWO, t, stream(22, i)), spec)) / t
            for i in range(300)]
    est = mc.Estimate.from_values(logs)
    # Z_λ(t) decays at least at the bound rate
    assert est.mean <= -rate + 3 * est.se


def test_q_lambda_degenerate_and_structure():
    s = mt.typed_spectral(DEG, -1.0)
    np.testing.assert_allclose(mt.q_lambda_matrix(DEG, s), DEG.theta * DEG.q_matrix, atol=1e-12)
    for lam in GRID:
        s = mt.typed_spectral(TWO, lam)
        g = mt.q_lambda_matrix(TWO, s)
        assert np.max(np.abs(g.sum(axis=1))) <= 1e-10
        assert np.all(g - np.diag(np.diag(g)) >= 0)
        pl = s.v_lambda ** 2 * TWO.pi
        assert np.max(np.abs(pl @ g)) <= 1e-10


def test_q_lambda_falls_back_when_m_differs_from_one():
    params = mt.TypedParams(1.0, Q2, np.array([1.0, 2.0]), np.array([1.0, 2.0]),
                            [finite(0.5, 0.5), finite(0, 0, 1)])
    s = mt.typed_spectral(params, -0.8)
    with pytest.warns(RuntimeWarning, match="row-sum-zero"):
        g = mt.q_lambda_matrix(params, s)
    assert np.max(np.abs(g.sum(axis=1))) <= 1e-10
    expected = np.diag(params.theta * params.q_matrix) + 0.32 * params.a - s.e_lambda + params.m * params.r
    np.testing.assert_allclose(np.diag(g), expected, atol=1e-10)


def test_q_lambda_printed_diagonal_kept_when_consistent():
    s = mt.typed_spectral(TWO, -0.8)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        mt.q_lambda_matrix(TWO, s)


@pytest.mark.parametrize("params, lam, p, tag, clause", [
    (DEG, -2.0, None, Verdict.AS_ZERO, "typed.l1.below_critical"),
    (mt.TypedParams.degenerate(offspring=log_power_tail(1.5)), -0.1, None, Verdict.AS_ZERO, "typed.l1.xlogx_infinite"),
    (DEG, -0.5, None, Verdict.L1_CONVERGENT, "typed.l1.convergent"),
    (DEG, -0.9, 2.0, Verdict.LP_CONVERGENT, "typed.lp.convergent"),
    (DEG, -1.2, 2.0, Verdict.LP_UNBOUNDED, "typed.lp.unbounded"),
    (DEG, -1.0, 2.0, Verdict.BOUNDARY_UNDETERMINED, "typed.lp.boundary"),
    (mt.TypedParams.degenerate(offspring=log_power_tail(3.0)), -0.1, 1.5, Verdict.LP_UNBOUNDED, "typed.lp.moment_infinite"),
])
def test_classify_typed(params, lam, p, tag, clause):
    v = mt.classify_typed(params, lam, p)
    assert (v.tag, v.clause) == (tag, clause)


def test_classify_degenerate_gap_value():
    # pE_λ - E_pλ = 2(1.405) - 2.62 = 0.19
    assert 2 * mt.e_lambda(DEG, -0.9) - mt.e_lambda(DEG, -1.8) == pytest.approx(0.19, abs=1e-12)


@settings(deadline=None, max_examples=30)
@given(st.floats(-3.0, -0.01), st.floats(0.2, 3.0), st.floats(0.2, 3.0))
def test_degenerate_matches_bbm(lam, a0, r0):
    params = mt.TypedParams.degenerate(a0=a0, r0=r0, n=3)
    assert mt.e_lambda(params, lam) == pytest.approx(0.5 * a0 * lam * lam + r0, abs=1e-12)
    np.testing.assert_allclose(mt.typed_spectral(params, lam).v_lambda, 1.0, atol=1e-10)


@pytest.mark.parametrize("kwargs, message", [
    (dict(q_matrix=np.array([[-1.0, 2.0], [1.0, -1.0]])), "rows of Q sum to 0"),
    (dict(q_matrix=np.array([[0.0, 0.0], [1.0, -1.0]])), "irreducible"),
    (dict(q_matrix=np.array([[-2, 1, 1], [0, -1, 1], [2, 0, -2.0]]), a=np.ones(3), r=np.ones(3),
          offspring=[finite(0, 1)] * 3), "detailed balance"),
    (dict(pi=np.array([0.6, 0.4])), "supplied pi disagrees"),
    (dict(r=np.array([0.0, 1.0])), "r(y) = 0 requires"),
    (dict(a=np.array([0.0, 1.0])), "a(y) must be > 0"),
    (dict(theta=0.0), "theta must be > 0"),
])
def test_validation(kwargs, message):
    base = dict(theta=1.0, q_matrix=Q2, a=np.array([1.0, 2.0]), r=np.array([1.0, 1.0]),
                offspring=[finite(0, 1)] * 2)
    base.update(kwargs)
    with pytest.raises(ConfigInvalid, match=message.replace("(", r"\(").replace(")", r"\)")):
        mt.TypedParams(**base)


def test_simulate_p_t0_and_z():
    params = mt.TypedParams(1.0, Q2, np.array([1.0, 2.0]), np.array([1.0, 1.0]), [finite(0, 1)] * 2,
                            x0=0.4, y0=1)
    snap = mt.simulate_p_typed(params, 0.0, stream(1))
    assert snap.labels == ((),) and snap.positions[0] == 0.4 and snap.types[0] == 1
    s = mt.typed_spectral(params, -0.5)
    assert mt.z_lambda_typed(snap, s) == pytest.approx(s.v_lambda[1] * math.exp(-0.2))
    assert mt.z_lambda_typed(Snapshot.build(1.0, [], [], [], []), s) == 0.0


def test_z_degenerate_lambda_zero():
    snap = mt.simulate_p_typed(DEG, 1.0, stream(23))
    s = mt.typed_spectral(DEG, 0.0)
    assert mt.z_lambda_typed(snap, s) == pytest.approx(snap.size * math.exp(-1.0), rel=1e-12)


def test_no_branching_type_chain_is_ergodic():
    # r ≡ 0 with A ≡ 0: a single particle whose type is the chain; its law at t = 50 is π
    q = np.array([[-1.0, 1.0], [2.0, -2.0]])
    params = mt.TypedParams(1.0, q, np.array([1.0, 1.0]), np.array([0.0, 0.0]), [finite(1.0)] * 2)
    np.testing.assert_allclose(params.pi, [2 / 3, 1 / 3], atol=1e-12)
    snaps = [mt.simulate_p_typed(params, 50.0, stream(24, i)) for i in range(4000)]
    assert all(s.size == 1 for s in snaps)
    in0 = np.array([s.types[0] == 0 for s in snaps], dtype=float)
    assert mc.Estimate.from_values(in0).within(2 / 3)


def test_degenerate_population_first_moment():
    sizes = [mt.simulate_p_typed(DEG, 1.5, stream(25, i)).size for i in range(4000)]
    assert mc.Estimate.from_values(sizes).within(math.exp(1.5))


def test_snapshots_valid():
    for i in range(20):
        snap, rec = mt.simulate_q_typed(TWO, -0.5, 1.5, stream(26, i))
        snap.check()
        rec.check()
        assert rec.spine_label in snap.labels
        assert rec.occupation.sum() == pytest.approx(1.5, abs=1e-12)


def test_simulate_q_t0():
    snap, rec = mt.simulate_q_typed(TWO, -0.5, 0.0, stream(1))
    assert rec.n_fissions == 0 and snap.size == 1


def test_degenerate_spine_drift_matches_bbm():
    deg = mt.TypedParams.degenerate(a0=2.0, r0=1.0)
    rep = mc.spine_statistics(deg, -0.5, 4.0, 4000, seed=27, burn_in=0.0)
    assert rep["drift"].expected == pytest.approx(-1.0, abs=1e-12)
    assert rep["drift"].passed and rep["n_t_mean"].passed
    assert rep["n_t_mean"].expected == pytest.approx(8.0, abs=1e-9)
    # started in type 0 with no burn-in: P(type 0 at s) = (1 + e^{-2s}) / 2
    bias = -math.expm1(-8.0) / 16
    occ = rep["occupation_0"].estimate
    assert occ.within(0.5 + bias)
    assert not occ.within(0.5)
    assert rep["occupation_1"].estimate.within(0.5 - bias)


def test_occupation_after_burn_in_is_stationary():
    rep = mc.spine_statistics(DEG, -0.5, 6.0, 4000, seed=34)
    assert rep.burn_in == pytest.approx(2.5)
    for y in range(2):
        assert rep[f"occupation_{y}"].expected == pytest.approx(0.5, abs=1e-12)
        assert rep[f"occupation_{y}"].passed


def test_spine_drift_long_run():
    rep = mc.spine_statistics(TWO, -0.5, 20.0, 4000, seed=28)
    assert rep.burn_in > 0
    assert rep["drift"].passed and rep["n_t_mean"].passed


def test_spine_decomposition_forms_agree():
    rng = stream(29)
    s = mt.typed_spectral(TWO, -0.7)
    for _ in range(50):
        n = int(rng.integers(0, 6))
        times = np.sort(rng.random(n)) * 2.0
        rec = SpineRecord(2.0, times, rng.standard_normal(n), rng.integers(0, 3, n), float(rng.standard_normal()),
                          fission_types=rng.integers(0, 2, n), terminal_type=int(rng.integers(0, 2)))
        v = s.v_lambda
        c = s.c_lambda
        alt = np.sum(rec.extra_offspring * v[rec.fission_types]
                     * np.exp(s.lam * (rec.fission_positions + c * rec.fission_times)))
        alt += v[rec.terminal_type] * math.exp(s.lam * (rec.terminal_position + c * 2.0))
        assert mt.spine_decomposition_typed(rec, s) == pytest.approx(alt, rel=1e-12)


def test_martingale_mean_and_rn_nondegenerate():
    s = mt.typed_spectral(TWO, -0.5)
    est = mc.estimate_martingale_mean(TWO, -0.5, 1.0, 4000, seed=30)
    assert est.within(s.v_lambda[0])
    rn = mc.rn_consistency(TWO, -0.5, 1.0, n_reps=4000, seed=31)
    assert abs(rn.z_score) <= 3


def test_degenerate_rn_matches_bbm():
    deg = mt.TypedParams.degenerate(a0=1.0, r0=1.0)
    ref = bbm.BbmParams(1.0, finite(0, 1))
    a = mc.rn_consistency(deg, -0.5, 1.0, n_reps=3000, seed=32)
    b = mc.rn_consistency(ref, -0.5, 1.0, n_reps=3000, seed=33)
    assert abs(a.z_score) <= 3
    assert abs(mc.combined_z(a.right, b.right)) <= 3
    assert abs(mc.combined_z(a.left, b.left)) <= 3
