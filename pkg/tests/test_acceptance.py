"""End-to-end acceptance checks, one test per criterion.

Each test prints a single ``[PASS]``/``[FAIL]`` line, repeated in the pytest
terminal summary.
"""

from dataclasses import replace

import numpy as np

from conftest import CANONICAL_SIGMA, random_diagonalizable, report
from stratstab import (
    LyapunovParams,
    SdeSystem,
    SimulationParams,
    SingularGramError,
    baseline_growth,
    biorthonormalize,
    build_actuators,
    build_feedback,
    build_from_matrix,
    build_real_basis,
    build_real_feedback,
    certify_decay,
    eigendecompose,
    estimate_lyapunov,
    fit_decay_rate,
    integrate,
    integrate_ensemble,
    ito_correction,
    seeds_agree,
    select_unstable_index,
    simulate_closed_loop,
    simulate_wong_zakai,
    solve_lyapunov,
    synthesize_noise_matrices,
    unstable_count,
)
from stratstab.spectral import solve_lyapunov_block

J = np.array([[0.0, -1.0], [1.0, 0.0]])
NU, SHIFT = 0.01, -0.5


def continuum_eigenvalue(k):
    return NU * np.pi**2 * k**2 + SHIFT


def test_criterion_01_biorthogonality(canonical_model):
    spec = eigendecompose(canonical_model)
    dec = select_unstable_index(spec)
    worst = biorthonormalize(spec, dec.N).biorthogonality_residual(dec.N)
    rng = np.random.default_rng(2024)
    for i in range(20):
        a, _ = random_diagonalizable(rng, 8, complex_pairs=i % 3)
        m = build_from_matrix(a, weights=rng.uniform(0.5, 2.0, 8))
        worst = max(worst, biorthonormalize(eigendecompose(m), 8).biorthogonality_residual(8))
    report(1, "biorthogonality", worst <= 1e-8, f"max |<phi_i, phi*_j> - delta_ij| = {worst:.2e} (tol 1e-8)")


def test_criterion_02_unstable_index(canonical):
    _, dec = canonical
    n_list = unstable_count([-2, -0.5, 1, 3, 5])
    n_model = select_unstable_index(eigendecompose(build_from_matrix(np.diag([-2, -0.5, 1, 3, 5.0])))).N
    oracle = sum(continuum_eigenvalue(k) for k in range(1, 5))
    ok = n_list == 4 and n_model == 4 and dec.N == 4 and abs(dec.trace_sum - 0.96) <= 0.05 * 0.96 \
        and abs(dec.trace_sum - oracle) <= 0.05 * oracle
    report(2, "unstable index", ok,
           f"list N={n_list} (via model {n_model}), advection-diffusion N={dec.N}, sum Re = {dec.trace_sum:.4f} (continuum {oracle:.4f})")


def test_criterion_03_actuator_identity(canonical_model, canonical):
    spec, dec = canonical
    act = build_actuators(spec, dec.N, canonical_model)
    w, m = canonical_model.weights, canonical_model.mask
    ident = (act.actuators.T * (w * m)) @ spec.left[:, :dec.N].conj()
    resid = float(np.max(np.abs(ident - np.eye(dec.N))))
    point = np.zeros(canonical_model.dim)
    point[np.argmin(np.abs(canonical_model.grid - 0.4))] = 1
    try:
        build_actuators(spec, dec.N, replace(canonical_model, mask=point))
        singular = "no error"
    except SingularGramError as exc:
        singular = f"SingularGramError (cond {exc.condition_number:.1e})"
    ok = resid <= 1e-8 and singular.startswith("SingularGramError")
    report(3, "actuator identity", ok, f"residual {resid:.2e} (tol 1e-8); single-point mask -> {singular}")


def test_criterion_04_finite_dimensional_stabilization():
    D = np.diag([0.5, -1.5])
    est = []
    for i, s in enumerate((0.0, 2.0, 8.0, 20.0)):
        e = estimate_lyapunov(SdeSystem(D, (s * J)[None]), LyapunovParams(paths=64, T=50.0, seed=100 + i))
        est.append((s, e.value, e.stderr))
    vals = [v for _, v, _ in est]
    decreasing = all(est[i][1] - est[i + 1][1] > 2 * np.hypot(est[i][2], est[i + 1][2]) for i in range(3))
    ok = vals[0] >= 0.45 and decreasing and vals[2] < 0 and vals[3] < 0 and abs(vals[3] + 0.5) <= 0.15
    detail = ", ".join(f"sigma={s:g}: {v:+.4f}+-{e:.4f}" for s, v, e in est)
    report(4, "finite-dimensional stabilization", ok, detail)


def test_criterion_05_integrator_contracts():
    det = abs(integrate(SdeSystem(-np.eye(1), np.zeros((0, 1, 1))), np.ones(1), 1e-3, 1.0).states[-1, 0] - np.exp(-1))

    drift = {}
    for scheme, sigma in (("split", 1.0), ("heun", 0.5)):
        trs = integrate_ensemble(SdeSystem(np.zeros((2, 2)), (sigma * J)[None]), np.array([1.0, 0.0]), 1e-3, 10.0,
                                 seed=5, paths=16, scheme=scheme)
        drift[scheme] = max(float(np.max(np.abs(t.norms - 1))) for t in trs)

    strat = SdeSystem(np.diag([0.5, -1.5]), J[None])
    ito = ito_correction(strat)
    x0 = np.array([1.0, 1.0])
    dt = 4e-3

    def gap(step):
        kw = dict(seed=17, paths=64, noise_dt=dt / 2)
        a = integrate_ensemble(strat, x0, step, 1.0, scheme="heun", **kw)
        b = integrate_ensemble(ito, x0, step, 1.0, scheme="euler", **kw)
        return np.mean([np.linalg.norm(p.states[-1] - q.states[-1]) for p, q in zip(a, b)])

    ratio = gap(dt / 2) / gap(dt)
    ok = det <= 1e-6 and drift["split"] <= 1e-3 and drift["heun"] <= 1e-3 and ratio <= 0.8
    report(5, "integrator contracts", ok,
           f"|x(1)-1/e| = {det:.1e}; norm drift split(sigma=1) {drift['split']:.1e}, "
           f"heun(sigma=0.5) {drift['heun']:.1e}; Heun/EM gap ratio {ratio:.3f}")


def test_criterion_06_closed_loop_stabilization(canonical_model, canonical):
    spec, dec = canonical
    basis = build_real_basis(spec, dec.N)
    law = build_real_feedback(basis, canonical_model, target_rate=-0.15)
    x0 = np.ones(canonical_model.dim) / canonical_model.norm(np.ones(canonical_model.dim))
    certs = []
    all_positive = True
    for seed in (1, 2):
        trs = simulate_closed_loop(canonical_model, dec, law, x0,
                                   SimulationParams(T=60.0, paths=64, seed=seed, reduced=False))
        all_positive &= all(fit_decay_rate(t) > 0 for t in trs)
        certs.append(certify_decay(trs))
    baseline = baseline_growth(canonical_model, x0, 60.0)
    agree = seeds_agree(*certs)
    ok = all_positive and all(c.passed and np.isfinite(c.C_hat) for c in certs) \
        and abs(baseline - 0.40) <= 0.04 and agree
    c = certs[0]
    report(6, "closed-loop stabilization", ok,
           f"sigma={law.noise.sigma:.4f}; batch rates {certs[0].mean_rate:.4f}+-{certs[0].rate_stderr:.4f} / "
           f"{certs[1].mean_rate:.4f}+-{certs[1].rate_stderr:.4f}; gamma_hat={c.gamma_hat:.4f}, "
           f"gamma={c.gamma:.4f}, C_hat={c.C_hat:.1f}, {c.fraction_satisfying * c.paths:.0f}/{c.paths} paths, "
           f"verdicts {certs[0].verdict}/{certs[1].verdict}; baseline growth {baseline:.4f}")


def test_criterion_07_modal_decoupling(canonical_model, canonical, canonical_real_law):
    _, dec = canonical
    basis, law = canonical_real_law
    x0 = basis.psi[:, 0]
    gaps = []
    for dt in (5e-4, 2.5e-4):
        trs = simulate_closed_loop(canonical_model, dec, law, x0,
                                   SimulationParams(T=2.0, dt=dt, paths=64, seed=7, noise_dt=1.25e-4))
        gaps.append(max(float(np.max(np.abs(t.modal - t.modal_reduced))) for t in trs))
    ratio = gaps[1] / gaps[0]
    report(7, "modal decoupling", 0.375 <= ratio <= 0.625,
           f"max gap {gaps[0]:.3e} -> {gaps[1]:.3e}, ratio {ratio:.3f} (target 0.5 +- 25%)")


def test_criterion_08_real_variant(canonical_model, canonical, canonical_real_law):
    spec, dec = canonical
    basis, real_law = canonical_real_law
    noise = synthesize_noise_matrices(spec.eigenvalues[:dec.N], CANONICAL_SIGMA)
    complex_law = build_feedback(noise, spec, build_actuators(spec, dec.N, canonical_model), canonical_model)
    diff = float(np.max(np.abs(real_law.maps() - complex_law.maps())))
    trace_gap = abs(np.trace(basis.A_u_re) - np.sum(spec.eigenvalues[:dec.N].real))
    imag = float(np.max(np.abs(np.imag(real_law.maps()))))
    ok = diff <= 1e-8 and trace_gap <= 1e-8 and imag <= 1e-12
    report(8, "real-variant consistency", ok,
           f"max map difference {diff:.2e}; trace gap {trace_gap:.2e}; max |Im| {imag:.1e}")


def test_criterion_09_wong_zakai(canonical_model, canonical, canonical_real_law):
    _, dec = canonical
    _, law = canonical_real_law
    x0 = np.ones(canonical_model.dim) / canonical_model.norm(np.ones(canonical_model.dim))
    dt = 1e-3
    p = SimulationParams(T=2.0, dt=dt, paths=64, seed=9, keep_states=True, reduced=False)
    ref = simulate_closed_loop(canonical_model, dec, law, x0, p)
    gaps = []
    for q in (4, 2, 1):
        wz = simulate_wong_zakai(canonical_model, dec, law, x0, p, q * dt)
        gaps.append(float(np.mean([canonical_model.norm(a.states[-1] - b.states[-1]) for a, b in zip(wz, ref)])))
    ok = gaps[0] > gaps[1] > gaps[2]
    report(9, "Wong-Zakai consistency", ok,
           "mean terminal gap " + ", ".join(f"{q}dt: {g:.3e}" for q, g in zip((4, 2, 1), gaps)))


def test_criterion_10_lyapunov_renorming(canonical):
    gamma = 0.8
    a = np.array([0.5, 1.0, 2.0, 7.0])
    diag = solve_lyapunov_block(np.diag(a), gamma)
    closed_form = float(np.max(np.abs(np.diag(diag.Q) - gamma / (2 * a)) / (gamma / (2 * a))))
    off = float(np.max(np.abs(diag.Q - np.diag(np.diag(diag.Q)))))

    # Stable part of a diagonal model: modes 2 and 7 after the unstable block.
    s = eigendecompose(build_from_matrix(np.diag([-1.0, 0.5, 1.0, 2.0, 7.0])))
    model_diag = solve_lyapunov(select_unstable_index(s), s, gamma)
    model_cf = float(np.max(np.abs(np.diag(model_diag.Q).real - gamma / (2 * np.array([2.0, 7.0])))))

    rng = np.random.default_rng(10)
    tri = np.triu(rng.standard_normal((5, 5)), 1) + np.diag([1.0, 1.5, 2.0, 3.0, 4.0])
    tri_res = solve_lyapunov_block(tri, 1.0).residual
    tri6 = np.triu(rng.standard_normal((6, 6)), 1) + np.diag([-1.0, 1.0, 1.5, 2.0, 3.0, 4.0])
    s = eigendecompose(build_from_matrix(tri6))
    model_tri = solve_lyapunov(select_unstable_index(s), s, 1.0).residual
    spec, dec = canonical
    model_res = solve_lyapunov(dec, spec, 1.0).residual

    worst = max(diag.residual, model_diag.residual, tri_res, model_tri, model_res)
    ok = worst <= 1e-10 and closed_form <= 1e-14 and model_cf <= 1e-14 and off == 0.0
    report(10, "Lyapunov re-norming", ok,
           f"max residual {worst:.1e} over diagonal/triangular blocks and models; "
           f"closed-form error {max(closed_form, model_cf):.1e}")
