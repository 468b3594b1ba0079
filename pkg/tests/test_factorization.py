"""Commutation error, residuals, rotated steps, bound evaluators, and the fit."""

import numpy as np
import pytest

import lassolab as ll
from lassolab import factorization as fz

from conftest import make_problem


def _random_unitary(rng, m):
    q, _ = np.linalg.qr(rng.standard_normal((m, m)))
    return q


def _valid_factorization(p, rng, scale=0.05):
    """Near-identity unitary A with S inflated enough that A^T S A - B is PSD."""
    m = p.m
    skew = rng.standard_normal((m, m)) * scale
    skew = skew - skew.T
    a = fz.stiefel_project(np.eye(m) + skew)
    s = np.full(m, p.L * (1.0 + rng.random()))
    return ll.Factorization(A=a, S=s, unitarity_defect=0.0,
                            residual_min_eig=0.0)


def test_delta_a_basics():
    rng = np.random.default_rng(50)
    z = rng.standard_normal(12)
    assert fz.delta_a(np.eye(12), z, 0.3) == 0.0
    # signed permutations preserve the l1 norm
    perm = np.eye(12)[rng.permutation(12)] * np.where(rng.random(12) < 0.5, -1, 1)
    assert abs(fz.delta_a(perm, z, 0.3)) < 1e-12
    # doubling matrix doubles the first term
    got = fz.delta_a(2 * np.eye(12), z, 0.3)
    assert abs(got - 0.3 * np.sum(np.abs(z))) < 1e-12


def test_delta_subgradient_is_gradient_off_kinks():
    rng = np.random.default_rng(51)
    a = _random_unitary(rng, 10)
    z = rng.standard_normal(10) + np.sign(rng.standard_normal(10))
    if np.min(np.abs(z)) < 1e-3 or np.min(np.abs(a @ z)) < 1e-3:
        z = np.ones(10)
    g = fz.delta_subgradient(a, z, 0.2)
    h = 1e-7
    for i in range(0, 10, 3):
        e = np.zeros(10)
        e[i] = h
        fd = (fz.delta_a(a, z + e, 0.2) - fz.delta_a(a, z - e, 0.2)) / (2 * h)
        assert abs(fd - g[i]) < 1e-6


def test_lipschitz_estimate_formula():
    rng = np.random.default_rng(52)
    z = np.zeros(9)
    z[:3] = 1.0
    a = np.eye(9)
    upper, local = fz.lipschitz_estimate(a, z, 0.1)
    assert abs(upper - 0.1 * 2 * np.sqrt(3)) < 1e-12
    assert local == 0.0
    # difference quotients in a small kink-free ball stay below local
    a = _random_unitary(rng, 9)
    z = np.sign(rng.standard_normal(9)) * (1 + rng.random(9))
    _, local = fz.lipschitz_estimate(a, z, 0.1)
    for _ in range(50):
        dz = rng.standard_normal(9)
        dz *= 1e-3 / np.linalg.norm(dz)
        quot = abs(fz.delta_a(a, z + dz, 0.1) - fz.delta_a(a, z, 0.1))
        assert quot / np.linalg.norm(dz) <= local + 1e-6


def test_residual_cases():
    p = make_problem(53)
    m = p.m
    # manufactured example: B=I, A=I, S=2
    r, mn, sp = fz.residual(ll.Factorization(np.eye(3), np.full(3, 2.0), 0, 0),
                            np.eye(3))
    np.testing.assert_allclose(r, np.eye(3), atol=1e-14)
    assert abs(mn - 1.0) < 1e-12 and abs(sp - 1.0) < 1e-12
    # isotropic point: R = L*I - B is PSD up to eigensolver noise
    r, mn, sp = fz.residual(
        ll.Factorization(np.eye(m), np.full(m, p.L), 0, 0), p.B)
    np.testing.assert_allclose(r, p.L * np.eye(m) - p.B, atol=1e-12)
    assert mn >= -1e-9
    # eigendecomposition zeroes the residual
    eigvals, eigvecs = np.linalg.eigh(p.B)
    f = ll.Factorization(eigvecs.T, eigvals, 0, 0)
    _, _, sp = fz.residual(f, p.B)
    assert sp <= 1e-10
    np.testing.assert_array_equal(r, r.T)


def test_rotated_step_reduces_to_ista():
    p = make_problem(54)
    rng = np.random.default_rng(54)
    z = rng.standard_normal(p.m)
    f = ll.Factorization(np.eye(p.m), np.full(p.m, p.L), 0, 0)
    np.testing.assert_array_equal(ll.rotated_prox_step(p, f, z),
                                  ll.ista_step(p, z))
    # signed permutation with scalar S commutes with the shrinkage
    perm = np.eye(p.m)[rng.permutation(p.m)]
    perm *= np.where(rng.random(p.m) < 0.5, -1.0, 1.0)
    f2 = ll.Factorization(perm, np.full(p.m, p.L), 0, 0)
    np.testing.assert_allclose(ll.rotated_prox_step(p, f2, z),
                               ll.ista_step(p, z), atol=1e-12)
    with pytest.raises(ValueError):
        ll.rotated_prox_step(
            p, ll.Factorization(np.eye(p.m), np.zeros(p.m), 0, 0), z)


def test_rotated_step_minimizes_surrogate():
    # dense grid oracle on a 2-atom problem
    rng = np.random.default_rng(55)
    d = rng.standard_normal((2, 2))
    d /= np.linalg.norm(d, axis=0)
    p = ll.build_problem(d, rng.standard_normal(2), 0.05)
    theta = 0.3
    rot = np.array([[np.cos(theta), -np.sin(theta)],
                    [np.sin(theta), np.cos(theta)]])
    s = np.full(2, p.L * 1.5)
    f = ll.Factorization(rot, s, 0, 0)
    z = rng.standard_normal(2)
    step = ll.rotated_prox_step(p, f, z)

    def surrogate(v):
        dv = v - z
        r, _, _ = fz.residual(f, p.B)
        return (ll.lasso_cost(p, v).f + 0.5 * dv @ (r @ dv)
                + fz.delta_a(rot, v, p.lam))

    best = surrogate(step)
    grid = np.linspace(-4, 4, 81)
    for u in grid:
        for v in grid:
            assert surrogate(np.array([u, v])) >= best - 1e-6


def test_bound_prop21_holds_and_reports():
    rng = np.random.default_rng(56)
    p = make_problem(56)
    ref = ll.solve_reference(p)
    for _ in range(10):
        f = _valid_factorization(p, rng)
        z = rng.standard_normal(p.m) * 2
        rep = ll.bound_prop21(p, f, z, ref)
        assert rep.kind == "prop21"
        assert rep.valid
        assert rep.lhs_value <= rep.bound_value + 1e-9 * max(1, abs(rep.bound_value))


def test_lemma_b1_and_acceleration():
    rng = np.random.default_rng(57)
    p = make_problem(57)
    ref = ll.solve_reference(p)
    f = _valid_factorization(p, rng)
    z = rng.standard_normal(p.m)
    lhs, rhs, holds = ll.lemma_b1_check(p, f, z, ref)
    assert holds and lhs <= rhs + 1e-9 * max(1, abs(rhs))
    z_next = ll.rotated_prox_step(p, f, z)
    margin, satisfied = ll.acceleration_condition(p, f, z, z_next, ref)
    assert satisfied == (margin >= 0.0)


def test_bound_thm22_trajectory():
    rng = np.random.default_rng(58)
    p = make_problem(58)
    ref = ll.solve_reference(p)
    fs = [_valid_factorization(p, rng) for _ in range(4)]
    zs = ll.run_rotated(p, fs, np.zeros(p.m))
    assert len(zs) == 5
    rep = ll.bound_thm22(p, fs, zs, ref)
    assert rep.valid
    assert rep.components["k"] == 4


def test_bound_thm22_identity_matches_classical_ista_bound():
    # with A=I, S=||B||*1 the k-step bound must equal the classical ISTA
    # bound, computed here by an independent formula
    p = make_problem(59)
    ref = ll.solve_reference(p)
    k = 6
    fs = [ll.Factorization(np.eye(p.m), np.full(p.m, p.L), 0, 0)] * k
    zs = ll.run_rotated(p, fs, np.zeros(p.m))
    rep = ll.bound_thm22(p, fs, zs, ref)
    lminusb = p.L * np.eye(p.m) - p.B
    zstar = ref.z_star
    acc = (zstar - zs[0]) @ (lminusb @ (zstar - zs[0]))
    for i in range(k):
        d = zs[i + 1] - zs[i]
        acc -= (i + 1) * (d @ (lminusb @ d))
    classical = acc / (2 * k)
    assert abs(rep.bound_value - classical) <= 1e-10 * max(1.0, abs(classical))


def test_bound_cor23_along_ista():
    rng = np.random.default_rng(60)
    p = make_problem(60)
    ref = ll.solve_reference(p)
    f = _valid_factorization(p, rng)
    z0 = np.zeros(p.m)
    z1 = ll.rotated_prox_step(p, f, z0)
    rep = ll.bound_cor23(p, f, z0, z1, ref, k_max=12)
    assert rep.valid
    assert rep.components["k_max"] == 12


def test_commutation_error_support_bound_sample():
    rng = np.random.default_rng(61)
    lam = 0.1
    for _ in range(100):
        m = int(rng.integers(4, 24))
        a = _random_unitary(rng, m)
        z = rng.standard_normal(m) * np.where(rng.random(m) < 0.5, 0.0, 1.0)
        lhs = abs(fz.delta_a(a, z, lam))
        nnz = max(int(np.sum(np.abs(z) > 1e-10)),
                  int(np.sum(np.abs(a @ z) > 1e-10)))
        bound = lam * np.sqrt(2 * nnz) * np.linalg.norm(a - np.eye(m), 2) \
            * np.linalg.norm(z)
        assert lhs <= bound + 1e-9


def test_stiefel_project():
    rng = np.random.default_rng(62)
    a = rng.standard_normal((8, 8))
    q = fz.stiefel_project(a)
    np.testing.assert_allclose(q.T @ q, np.eye(8), atol=1e-12)
    # idempotent on unitary input
    np.testing.assert_allclose(fz.stiefel_project(q), q, atol=1e-12)
    # polar-factor oracle
    u, _, vt = np.linalg.svd(a)
    np.testing.assert_allclose(q, u @ vt, atol=1e-12)


def test_fit_factorization_certified_improvement():
    cfg = ll.GeneratorConfig(n=16, m=32, rho=5 / 32, sigma=10.0, lam=0.01,
                             dict_kind="gaussian", seed=63)
    d = ll.gen_dictionary(cfg)
    batch = ll.sample_codes(cfg, d, 20, seed=63)
    refs = ll.solve_reference_batch(d.atoms, cfg.lam, batch.signals)
    z0s = np.zeros((cfg.m, 20))
    zstars = np.column_stack([r.z_star for r in refs])
    B = d.atoms.T @ d.atoms
    dtx = d.atoms.T @ batch.signals
    opts = ll.FitOptions(dtx=dtx, iterations=120)
    fit = ll.fit_factorization((z0s, zstars), B, cfg.lam, opts)
    # certified output: unitary A, positive S
    np.testing.assert_allclose(fit.A.T @ fit.A, np.eye(cfg.m), atol=1e-10)
    assert np.all(fit.S > 0)
    assert fit.unitarity_defect <= 1e-10
    # never worse than the isotropic point, which is candidate zero
    L = ll.power_iteration(B)
    iso = ll.Factorization(np.eye(cfg.m), np.full(cfg.m, L), 0, 0)
    obj_fit = fz.fit_objective(fit, z0s, zstars, B, cfg.lam, dtx)
    obj_iso = fz.fit_objective(iso, z0s, zstars, B, cfg.lam, dtx)
    assert obj_fit <= obj_iso + 1e-9


def test_fit_factorization_validation():
    with pytest.raises(ValueError):
        ll.fit_factorization((np.zeros((4, 2)), np.zeros((4, 2))), np.eye(4),
                             0.1, ll.FitOptions())
    with pytest.raises(ValueError):
        ll.fit_factorization([], np.eye(4), 0.1,
                             ll.FitOptions(dtx=np.zeros((4, 1))))


def test_write_bound_reports(tmp_path):
    rng = np.random.default_rng(64)
    p = make_problem(64)
    ref = ll.solve_reference(p)
    f = _valid_factorization(p, rng)
    reps = [ll.bound_prop21(p, f, rng.standard_normal(p.m), ref)
            for _ in range(3)]
    path = tmp_path / "bounds.csv"
    fz.write_bound_reports(path, reps)
    lines = path.read_text().splitlines()
    assert len(lines) == 4
    assert lines[0].startswith("kind,")
