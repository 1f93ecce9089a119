"""Acceptance criteria, one test per criterion.

Each test evaluates every sub-check before asserting, so a failure message
lists all violated checks.  Criteria 5-10 build their canonical output with
``run_cN(workers)``; criterion 12 reruns those with another worker count and
compares the outputs byte for byte.  Seeds are fixed per criterion.
"""
import math
import pathlib
import re
import time
import warnings

import numpy as np
import pytest

from spinelab import bbm, mc, multitype as mt, outype as ou
from spinelab.offspring import finite, log_power_tail
from spinelab.verdict import Verdict

pytestmark = pytest.mark.acceptance

WORKERS = 1
ALT_WORKERS = 2
GRID = np.linspace(-3.0, 0.0, 50)
Q2 = np.array([[-1.0, 1.0], [1.0, -1.0]])
BINARY = bbm.BbmParams(1.0, finite(0, 1))
TYPED = mt.TypedParams(1.0, Q2, np.array([1.0, 2.0]), np.array([1.0, 0.5]), [finite(0, 1)] * 2)
DEGENERATE = mt.TypedParams.degenerate(a0=1.0, r0=1.0)
OU = ou.OuParams(theta=10.0, a=1.0, r=1.0, rho=1.0)
OUTPUTS = {}


def seed(n):
    return 1000 + n


class Checks:
    def __init__(self, budget=None):
        self.failures = []
        self.budget = budget
        self.start = time.perf_counter()

    def check(self, ok, message):
        if not ok:
            self.failures.append(message)

    def finish(self):
        elapsed = time.perf_counter() - self.start
        if self.budget is not None:
            self.check(elapsed < self.budget, f"runtime {elapsed:.1f} s exceeds {self.budget} s")
        assert not self.failures, "; ".join(self.failures)


def output(payload):
    return mc.format_json(payload)


# -- 1-4: exact layers --------------------------------------------------------------

@pytest.mark.criterion(1, "spectral exactness (typed)")
def test_criterion_01_spectral_exactness():
    c = Checks(budget=1.0)
    for lam in GRID:
        s = mt.typed_spectral(TYPED, lam)
        h = TYPED.h_matrix(lam)
        res = np.max(np.abs(h @ s.v_lambda - s.e_lambda * s.v_lambda))
        c.check(res <= 1e-10, f"eigen residual {res:.3g} at λ={lam:.4g}")
        c.check(np.all(s.v_lambda > 0), f"v_λ not positive at λ={lam:.4g}")
        norm = mt.pi_inner(s.v_lambda, s.v_lambda, TYPED.pi)
        c.check(abs(norm - 1) <= 1e-12, f"<v,v>_π = {norm!r} at λ={lam:.4g}")
        grad = abs(s.e_prime - mt.e_prime_check(TYPED, lam))
        c.check(grad <= 1e-6, f"|E' - central difference| = {grad:.3g} at λ={lam:.4g}")
        d = 1e-3
        second = mt.e_lambda(TYPED, lam + d) - 2 * s.e_lambda + mt.e_lambda(TYPED, lam - d)
        c.check(second > 0, f"second difference {second:.3g} at λ={lam:.4g}")
    c.finish()


@pytest.mark.criterion(2, "degenerate reduction to single-type closed forms")
def test_criterion_02_degenerate_reduction():
    c = Checks(budget=1.0)
    for a0, r0 in ((1.0, 1.0), (2.0, 1.0), (0.5, 3.0), (1.7, 0.4)):
        params = mt.TypedParams.degenerate(a0=a0, r0=r0, n=3)
        for lam in GRID:
            diff = abs(mt.e_lambda(params, lam) - (0.5 * a0 * lam * lam + r0))
            c.check(diff <= 1e-12, f"E_λ off by {diff:.3g} at a={a0}, r={r0}, λ={lam:.4g}")
        lt = mt.lambda_tilde_typed(params)
        exact = -math.sqrt(2 * r0 / a0)
        c.check(abs(lt - exact) <= 1e-8, f"λ̃ = {lt!r} vs {exact!r} at a={a0}, r={r0}")
    c.finish()


@pytest.mark.criterion(3, "structure of the spine's type generator")
def test_criterion_03_q_lambda_structure():
    c = Checks(budget=1.0)
    other = mt.TypedParams(1.0, np.array([[-2.0, 1.0, 1.0], [1.0, -1.5, 0.5], [2.0, 1.0, -3.0]]),
                           np.array([1.0, 0.5, 2.0]), np.array([1.0, 2.0, 0.5]),
                           [finite(0, 1), finite(0.2, 0.3, 0.5), finite(0, 0, 1)])
    for params in (TYPED, other):
        for lam in GRID:
            s = mt.typed_spectral(params, lam)
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                g = mt.q_lambda_matrix(params, s)
            rows = np.max(np.abs(g.sum(axis=1)))
            c.check(rows <= 1e-10, f"row sums {rows:.3g} at λ={lam:.4g}")
            off = g - np.diag(np.diag(g))
            c.check(np.all(off >= 0), f"negative off-diagonal at λ={lam:.4g}")
            inv = np.max(np.abs((s.v_lambda ** 2 * params.pi) @ g))
            c.check(inv <= 1e-10, f"(v²π)Q_λ = {inv:.3g} at λ={lam:.4g}")
    c.finish()


@pytest.mark.criterion(4, "closed forms of the OU model")
def test_criterion_04_ou_closed_forms():
    c = Checks(budget=1.0)
    theta, a, r, rho = 10.0, 1.0, 1.0, 1.0
    printed = {-0.5: dict(mu=1.581139, psi_minus=0.170943, psi_plus=0.329057, e_lambda=2.709431),
               -0.25: dict(mu=2.091650, psi_minus=0.145418, e_lambda=2.454175)}
    for lam, values in printed.items():
        s = ou.ou_spectral(OU, lam)
        mu = 0.5 * math.sqrt(theta * theta - theta * (8 * r + 4 * a * lam * lam))
        psi_m = 0.25 - mu / (2 * theta)
        ref = dict(mu=mu, psi_minus=psi_m, psi_plus=0.25 + mu / (2 * theta), e_lambda=rho + theta * psi_m,
                   c_lambda=-(rho + theta * psi_m) / lam, lambda_min=-math.sqrt((theta - 8 * r) / (4 * a)))
        for name, v in ref.items():
            got = getattr(s, name)
            c.check(abs(got - v) <= 1e-9, f"{name} = {got!r} vs {v!r} at λ={lam}")
        for name, v in values.items():
            # six printed decimals: one unit in the last place
            c.check(abs(getattr(s, name) - v) <= 1e-6, f"{name} = {getattr(s, name)!r} vs printed {v}")
        c.check(s.psi_minus + s.psi_plus == 0.5, f"ψ⁻ + ψ⁺ = {s.psi_minus + s.psi_plus!r}")
    c.check(abs(ou.ou_spectral(OU, -1e-12).mu - 0.5 * math.sqrt(20)) <= 1e-9, "μ limit at λ → 0⁻")
    c.check(abs(OU.lambda_min + math.sqrt(0.5)) <= 1e-9, "λ_min")
    v = ou.classify_ou(OU, -0.25, 2.0)
    c.check(v.tag == Verdict.LP_CONVERGENT, f"verdict at (λ=-0.25, p=2) is {v.tag.value}")
    c.finish()


# -- 5-10: Monte Carlo ------------------------------------------------------------------

def run_c5(workers):
    rows, fails = [], []
    for name, model in (("bbm", BINARY), ("typed_degenerate", DEGENERATE)):
        z0 = mc.z_initial(model, mc.spectral(model, -0.5))
        for t in (0.5, 1.0, 2.0):
            est = mc.estimate_martingale_mean(model, -0.5, t, 10_000, seed(5), workers=workers)
            rows.append({"model": name, "t": t, "z0": z0, "estimate": est.to_dict(), "z": est.z(z0)})
            if not est.within(z0):
                fails.append(f"{name} t={t}: mean {est.mean:.5f} ± {est.se:.5f} vs {z0} (z={est.z(z0):.2f})")
    return output({"criterion": 5, "rows": rows}), fails


@pytest.mark.criterion(5, "martingale mean conservation")
def test_criterion_05_martingale_mean():
    c = Checks(budget=60.0)
    text, fails = run_c5(WORKERS)
    OUTPUTS[5] = text
    c.failures += fails
    c.finish()


def run_c6(workers):
    fails, payload = [], {"criterion": 6}
    cases = (("bbm", BINARY, -0.5, {}), ("typed", TYPED, -0.5, {}), ("ou", OU, -0.25, {"h": 0.005}))
    for name, model, lam, kw in cases:
        rn = mc.rn_consistency(model, lam, 1.0, "exp_neg_popsize", 10_000, seed(6), workers=workers, **kw)
        payload[name] = {"lambda": lam, "left": rn.left.to_dict(), "right": rn.right.to_dict(), "z": rn.z_score}
        if not abs(rn.z_score) <= 3:
            fails.append(f"{name}: RN z = {rn.z_score:.2f}")
    sh = mc.step_halving(OU, -0.25, 1.0, 0.005, 10_000, seed(6), workers=workers)
    payload["ou_step_halving"] = {"coarse_h": 0.01, "fine_h": 0.005, "coarse": sh.coarse.to_dict(),
                                  "fine": sh.fine.to_dict(), "shift_in_se": sh.shift_in_se}
    if not sh.shift_in_se < 1:
        fails.append(f"ou: step-halving shift {sh.shift_in_se:.2f} SE")
    return output(payload), fails


@pytest.mark.criterion(6, "change-of-measure identity")
def test_criterion_06_change_of_measure():
    c = Checks(budget=300.0)
    text, fails = run_c6(WORKERS)
    OUTPUTS[6] = text
    c.failures += fails
    c.finish()


def run_c7(workers):
    fails, payload = [], {"criterion": 7}
    rep = mc.spine_statistics(BINARY, -1.0, 2.0, 10_000, seed(7), workers=workers)
    payload["bbm"] = rep.to_dict()
    for name in ("n_t_mean", "n_t_variance", "terminal_mean", "terminal_variance"):
        if not rep[name].passed:
            fails.append(f"bbm {name}: z = {rep[name].z:.2f}")
    rep = mc.spine_statistics(TYPED, -0.5, 50.0, 4000, seed(7), workers=workers)
    payload["typed"] = rep.to_dict()
    pi_lam = mt.typed_spectral(TYPED, -0.5).v_lambda ** 2 * TYPED.pi
    for y in range(TYPED.n):
        stat = rep[f"occupation_{y}"]
        if not (abs(stat.expected - pi_lam[y]) <= 1e-12 and stat.passed):
            fails.append(f"typed occupation_{y}: z = {stat.z:.2f}")
    rep = mc.spine_statistics(OU, -0.5, 20.0, 4000, seed(7), workers=workers)
    drift = rep["drift"].estimate
    s = ou.ou_spectral(OU, -0.5)
    target = s.lam * OU.a * OU.theta / s.mu
    payload["ou"] = {**rep.to_dict(), "criterion_target": target, "criterion_z": drift.z(target)}
    if not drift.within(target):
        fails.append(f"ou drift {drift.mean:.5f} ± {drift.se:.5f} vs λaθ/μ_λ = {target:.6f} "
                     f"(z = {drift.z(target):.1f}; z against λaθ/(2μ_λ) = {drift.z(s.e_prime):.2f})")
    return output(payload), fails


@pytest.mark.criterion(7, "spine laws under the size-biased measure")
def test_criterion_07_spine_laws():
    c = Checks(budget=300.0)
    text, fails = run_c7(WORKERS)
    OUTPUTS[7] = text
    c.failures += fails
    c.finish()


def run_c8(workers):
    fails, payload = [], {"criterion": 8}
    for name, model in (("bbm", BINARY), ("typed", TYPED)):
        res = mc.spine_decomp_check(model, -0.5, 1.0, 1000, seed(8), workers=workers)
        payload[name] = {"z": res.z_score, "estimate": res.estimate.to_dict(), "expected": res.expected,
                         "skeleton_fissions": res.record.n_fissions}
        if not abs(res.z_score) <= 3:
            fails.append(f"{name}: z = {res.z_score:.2f}")
    return output(payload), fails


@pytest.mark.criterion(8, "spine decomposition")
def test_criterion_08_spine_decomposition():
    c = Checks(budget=60.0)
    text, fails = run_c8(WORKERS)
    OUTPUTS[8] = text
    c.failures += fails
    c.finish()


def run_c9(workers):
    fails, payload = [], {"criterion": 9}
    e = lambda lam: bbm.bbm_spectral(BINARY, lam).e_lambda  # noqa: E731
    flat = mc.estimate_p_moment_curve(BINARY, -0.5, 2.0, [4.0, 5.0, 6.0], 10_000, seed(9), workers=workers)
    grow = mc.estimate_p_moment_curve(BINARY, -1.3, 2.0, [1.0, 1.5, 2.0, 2.5, 3.0], 40_000, seed(9),
                                      workers=workers)
    bound = 0.5 * (e(-2.6) - 2 * e(-1.3))
    v_flat = bbm.classify_bbm(BINARY, -0.5, 2.0).tag
    v_grow = bbm.classify_bbm(BINARY, -1.3, 2.0).tag
    for name, curve in (("lambda_-0.5", flat), ("lambda_-1.3", grow)):
        payload[name] = {"rows": mc.curve_rows(curve), "slope": curve.fitted_log_slope,
                         "halfwidth": curve.slope_halfwidth}
    payload.update(bound=bound, verdicts=[v_flat.value, v_grow.value])
    if not flat.ci_contains(0.0):
        fails.append(f"λ=-0.5 slope CI {flat.slope_ci} excludes 0")
    if not (bound > 0 and grow.fitted_log_slope >= bound):
        fails.append(f"λ=-1.3 slope {grow.fitted_log_slope:.3f} < {bound:.3f}")
    if v_flat != Verdict.LP_CONVERGENT or v_grow != Verdict.LP_UNBOUNDED:
        fails.append(f"verdicts {v_flat.value}, {v_grow.value}")
    return output(payload), fails


@pytest.mark.criterion(9, "Lp regime discrimination")
def test_criterion_09_lp_regimes():
    c = Checks(budget=300.0)
    text, fails = run_c9(WORKERS)
    OUTPUTS[9] = text
    c.failures += fails
    c.finish()


def run_c10(workers):
    est = mc.lmp_estimate(BINARY, 15.0, 500, seed(10), cap=10 ** 9, workers=workers)
    target = -math.sqrt(2.0)
    fails = []
    if not abs(est.mean - target) <= 0.15:
        fails.append(f"L(t)/t = {est.mean:.4f} ± {est.se:.4f}, |diff| = {abs(est.mean - target):.4f} > 0.15")
    return output({"criterion": 10, "estimate": est.to_dict(), "target": target}), fails


@pytest.mark.criterion(10, "left-most particle speed")
def test_criterion_10_leftmost_particle():
    c = Checks(budget=300.0)
    text, fails = run_c10(WORKERS)
    OUTPUTS[10] = text
    c.failures += fails
    c.finish()


# -- 11-12 ----------------------------------------------------------------------------

CLAUSE_INPUTS = [
    (bbm.classify_bbm, BINARY, -2.0, None),
    (bbm.classify_bbm, bbm.BbmParams(1.0, log_power_tail(1.5)), -0.1, None),
    (bbm.classify_bbm, BINARY, -1.0, None),
    (bbm.classify_bbm, BINARY, -0.9, 2.0),
    (bbm.classify_bbm, BINARY, -1.1, 2.0),
    (bbm.classify_bbm, BINARY, -1.0, 2.0),
    (bbm.classify_bbm, bbm.BbmParams(1.0, log_power_tail(3.0)), -0.1, 1.5),
    (mt.classify_typed, DEGENERATE, -2.0, None),
    (mt.classify_typed, mt.TypedParams.degenerate(offspring=log_power_tail(1.5)), -0.1, None),
    (mt.classify_typed, TYPED, -0.5, None),
    (mt.classify_typed, DEGENERATE, -0.9, 2.0),
    (mt.classify_typed, DEGENERATE, -1.2, 2.0),
    (mt.classify_typed, DEGENERATE, -1.0, 2.0),
    (mt.classify_typed, mt.TypedParams.degenerate(offspring=log_power_tail(3.0)), -0.1, 1.5),
    (ou.classify_ou, OU, -0.69, None),
    (ou.classify_ou, OU, -0.5, None),
    (ou.classify_ou, OU, -0.25, 2.0),
    (ou.classify_ou, OU, -0.4, 2.0),
    (ou.classify_ou, OU, -0.672, 1.05),
    (ou.classify_ou, OU, -0.33, 2.0),
    (ou.classify_ou, OU, -1 / math.sqrt(10), 2.0),
]


def declared_clauses():
    src = pathlib.Path(bbm.__file__).parent
    found = set()
    for name in ("bbm.py", "multitype.py", "outype.py"):
        found |= set(re.findall(r'"((?:bbm|typed|ou)\.(?:l1|lp)\.[a-z_]+)"', (src / name).read_text()))
    return found


@pytest.mark.criterion(11, "classifier completeness")
def test_criterion_11_classifier_completeness():
    c = Checks(budget=1.0)
    reached = set()
    for fn, model, lam, p in CLAUSE_INPUTS:
        v = fn(model, lam, p)
        c.check(bool(v.reason), f"empty reason for {v.clause}")
        reached.add(v.clause)
    declared = declared_clauses()
    c.check(len(declared) == 21, f"{len(declared)} declared branches")
    missing = declared - reached
    c.check(not missing, f"branches never reached: {sorted(missing)}")
    c.check(any("xlogx" in cl for cl in reached) and any("moment_infinite" in cl for cl in reached),
            "heavy-tail branches")
    c.finish()


@pytest.mark.criterion(12, "determinism across worker counts")
def test_criterion_12_determinism(monkeypatch):
    monkeypatch.delenv("SPINELAB_WORKERS", raising=False)
    c = Checks()
    runners = {5: run_c5, 6: run_c6, 7: run_c7, 8: run_c8, 9: run_c9, 10: run_c10}
    for n, fn in runners.items():
        base = OUTPUTS.get(n)
        if base is None:
            base = fn(WORKERS)[0]
        other = fn(ALT_WORKERS)[0]
        c.check(base.encode() == other.encode(), f"criterion {n} output differs with {ALT_WORKERS} workers")
    c.finish()
