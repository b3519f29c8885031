import json
import math

import numpy as np
import pytest

from contrakt import certify, linalg, ncm, nn, systems
from contrakt.ibp import MatrixBounds
from contrakt.systems import Box


def zero_controller(n, m=1, hidden=4):
    return nn.MlpParams([np.zeros((hidden, n))], [np.zeros(hidden)], np.zeros((m, hidden)), 0.3)


def scalar_decay():
    return systems.linear_system([[-1.0]], [[1.0]], Box([-1.0], [1.0]))


def test_gershgorin_examples():
    ok, m = certify.gershgorin_check(MatrixBounds.point(-np.eye(2)), 1.0)
    assert ok and np.all(m == 1.0)
    ok, m = certify.gershgorin_check(MatrixBounds.point([[-3.0, 1.0], [1.0, -3.0]]), 2.0)
    assert ok and np.all(m == 2.0)
    ok, m = certify.gershgorin_check(MatrixBounds.point([[0.0]]), 1.0)
    assert not ok and m[0] == -1.0


def test_gershgorin_soundness_by_sampling(rng):
    checked = 0
    while checked < 20:
        n = int(rng.integers(2, 5))
        centre = rng.normal(size=(n, n)) - 3.0 * np.eye(n)
        rad = rng.uniform(0, 0.3, size=(n, n))
        b = MatrixBounds(centre - rad, centre + rad)
        shift = float(rng.uniform(-1, 2))
        ok, _ = certify.gershgorin_check(b, shift)
        if not ok:
            continue
        checked += 1
        ys = b.lo + rng.uniform(size=(1000, n, n)) * (b.hi - b.lo)
        top = linalg.sym_eig_max_batch(ys + np.swapaxes(ys, 1, 2))
        assert np.all(top <= -shift + 1e-9)


def test_margins_vjp_matches_finite_differences(rng):
    b = MatrixBounds(rng.normal(size=(3, 3)) - 1.0, rng.normal(size=(3, 3)) + 1.0)
    b = MatrixBounds(np.minimum(b.lo, b.hi), np.maximum(b.lo, b.hi))
    gm = rng.normal(size=3)
    _, back = certify.gershgorin_margins_vjp(b, 0.5)
    g_lo, g_hi = back(gm)
    h = 1e-7
    for which, grad in (("lo", g_lo), ("hi", g_hi)):
        for idx in np.ndindex(3, 3):
            lo, hi = b.lo.copy(), b.hi.copy()
            arr = lo if which == "lo" else hi
            arr[idx] += h
            up = gm @ certify.gershgorin_check(MatrixBounds(np.minimum(lo, hi), np.maximum(lo, hi)), 0.5)[1]
            arr[idx] -= 2 * h
            dn = gm @ certify.gershgorin_check(MatrixBounds(np.minimum(lo, hi), np.maximum(lo, hi)), 0.5)[1]
            assert (up - dn) / (2 * h) == pytest.approx(grad[idx], abs=1e-6)


def test_eta_identity_metric_zero_rate():
    assert certify.compute_eta(systems.pendulum(), ncm.identity_metric(2), 0.0, tau=0.05).c1 == 0.0


def test_eta_linear_system_exact(rng):
    a = rng.normal(size=(3, 3))
    s = systems.linear_system(a, np.array([[0.0], [0.0], [1.0]]))
    res = certify.compute_eta(s, ncm.identity_metric(3), 0.2, tau=0.5)
    assert res.c2 == pytest.approx(np.linalg.eigvalsh(a + a.T).max(), abs=1e-10)
    assert res.c1 == pytest.approx(0.4, abs=1e-15)
    assert res.l_df == 0.0


def test_eta_pendulum_upper_bounds_monte_carlo(rng):
    s = systems.pendulum()
    res = certify.compute_eta(s, ncm.identity_metric(2), 0.1, tau=0.01)
    xs = s.domain.sample(rng, 100_000)
    jac = np.array([s.jac_f(x) for x in xs])
    mc = np.max(linalg.sym_eig_max_batch(jac + np.swapaxes(jac, 1, 2)))
    assert res.c2 >= mc
    # closed form: Sym[df] = [[0, 1 - (g/l) cos x1], [., -2 b / (m l^2)]]
    d = -2 * systems.FRICTION / (systems.MASS * systems.LENGTH**2)
    off = 1 + systems.GRAVITY / systems.LENGTH
    exact = 0.5 * d + math.sqrt(0.25 * d * d + off * off)
    assert res.max_eig_sym == pytest.approx(exact, abs=1e-9)


def test_eta_refinement_does_not_increase():
    s = systems.pendulum()
    phi = ncm.identity_metric(2)
    coarse = certify.compute_eta(s, phi, 0.1, tau=0.1)
    fine = certify.compute_eta(s, phi, 0.1, tau=0.05)
    assert fine.c1 <= coarse.c1 + 1e-12
    assert fine.c2 <= coarse.c2 + 1e-12


def test_scaling_coherence(rng):
    s = systems.pendulum()
    ctrl = nn.init_params(2, [8], 1, 0.3, 2)
    xs = s.domain.sample(rng, 50)
    base = certify.compute_eta(s, ncm.identity_metric(2), 0.3, tau=0.1)
    base_oracle = certify.sampled_contraction_margin(s, ncm.identity_metric(2), ctrl, 0.3, xs)
    for k in (0.5, 3.0):
        phi = ncm.identity_metric(2, scale=k)
        res = certify.compute_eta(s, phi, 0.3, tau=0.1)
        assert res.c1 == pytest.approx(k * base.c1, rel=1e-12)
        assert res.c2 == pytest.approx(k * base.c2, rel=1e-9)
        assert certify.sampled_contraction_margin(s, phi, ctrl, 0.3, xs) == pytest.approx(k * base_oracle, rel=1e-9)


def test_sampled_contraction_margin_scalar():
    s = scalar_decay()
    xs = np.linspace(-1, 1, 11)[:, None]
    assert certify.sampled_contraction_margin(s, ncm.identity_metric(1), None, 0.5, xs) == pytest.approx(1.0, abs=1e-14)
    assert certify.sampled_contraction_margin(s, ncm.identity_metric(1), None, 2.0, xs) == pytest.approx(-2.0, abs=1e-14)


def test_stable_scalar_certificate_under_both_conventions():
    s = scalar_decay()
    # eta = -(c1 + c2) = -(1 - 2) = 1
    sound = certify.certify(s, ncm.identity_metric(1), zero_controller(1), 0.5, convention="sound")
    assert sound.passed and sound.eta == pytest.approx(1.0)
    assert sound.row_margins == pytest.approx([1.0])
    lenient = certify.certify(s, ncm.identity_metric(1), zero_controller(1), 0.5, convention="lenient")
    assert not lenient.passed and lenient.row_margins == pytest.approx([-1.0])


def test_zero_controller_on_unstable_system_fails_soundly():
    s = systems.inverted_pendulum()
    rep = certify.certify(s, ncm.identity_metric(2), zero_controller(2), 0.1, tau=0.1, convention="sound")
    assert not rep.passed


def test_lenient_convention_accepts_zero_controller_on_unstable_system():
    # documents why the sound convention exists: the printed row test is satisfied
    # by doing nothing, while the sampled contraction condition is violated
    s = systems.inverted_pendulum()
    rep = certify.certify(s, ncm.identity_metric(2), zero_controller(2), 0.1, tau=0.1, convention="lenient")
    assert rep.passed
    assert rep.oracle_min_margin < 0


def test_sound_pass_implies_oracle(rng):
    hits = 0
    for _ in range(40):
        a = rng.normal(size=(2, 2)) * 0.5 - 2.0 * np.eye(2)
        s = systems.linear_system(a, np.array([[0.0], [1.0]]))
        ctrl = nn.init_params(2, [4], 1, 0.3, int(rng.integers(1000)))
        ctrl.biases[0][:] = 0.0
        # zero biases give u(0) = act(0) * sum(Wo), so centring Wo keeps the origin an equilibrium
        ctrl.wo[:] = 0.2 * (ctrl.wo - ctrl.wo.mean())
        rep = certify.certify(s, ncm.identity_metric(2), ctrl, 0.2, tau=0.2, convention="sound", oracle_samples=1000, seed=int(rng.integers(1000)))
        if rep.passed:
            hits += 1
            assert rep.oracle_min_margin >= -1e-9
    assert hits > 0


def test_precondition_and_report(tmp_path):
    s = systems.pendulum()
    with pytest.raises(certify.PreconditionError):
        certify.certify(s, ncm.identity_metric(2), zero_controller(2), 0.1, tau=0.1, x_star=[math.pi / 4, 0.0])
    rep = certify.certify(s, ncm.identity_metric(2), zero_controller(2), 0.1, tau=0.1)
    rep.save(tmp_path / "r.json")
    doc = json.loads((tmp_path / "r.json").read_text())
    assert doc["pass"] == rep.passed and "passed" not in doc
    assert doc["lipschitz"]["safety"] == 1.5


def test_trained_pendulum_certifies(pendulum_run):
    s = systems.pendulum()
    rep = certify.certify(s, ncm.identity_metric(2), pendulum_run.result.controller, 0.1, tau=0.01, x_star=[math.pi / 4, 0.0])
    assert rep.passed and min(rep.row_margins) >= 0


def test_robust_check_scalar():
    assert certify.robust_check([[1.0]], [[-3.0]], [[0.0]], 1.0, 1.0, 1.0) == pytest.approx(3.0, abs=1e-14)


def test_robust_check_nominal_limit(rng):
    m = np.eye(2) * 1.5
    j = rng.normal(size=(2, 2)) - 2 * np.eye(2)
    nominal = -linalg.sym_eig_max(m @ j + j.T @ m + 0.4 * m)
    for lam in (1e-1, 1e-2, 1e-3):
        diff = abs(certify.robust_check(m, j, np.zeros((2, 2)), lam, 0.0, 0.4) - nominal)
        assert diff <= lam**2 * linalg.spectral_norm(m) ** 2 + 1e-12


def test_robust_check_rejects_bad_args():
    with pytest.raises(ValueError):
        certify.robust_check([[1.0]], [[-1.0]], [[0.0]], 0.0, 1.0, 1.0)
    with pytest.raises(ValueError):
        certify.robust_check([[1.0]], [[-1.0]], [[0.0]], 1.0, -1.0, 1.0)


def test_unknown_convention():
    with pytest.raises(ValueError):
        certify.shift_for(1.0, "strict")
