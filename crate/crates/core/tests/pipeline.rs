use std::f64::consts::PI;

use mfgcert_core::adjoint::{solve_adjoint, AdjointSolver};
use mfgcert_core::certify::{fourier_modes, DISCRETE_EVIDENCE};
use mfgcert_core::field::{read_field_csv, write_field_csv};
use mfgcert_core::linearize::{assemble_coeffs, check_a3mon};
use mfgcert_core::mfg::strong_residual_norm;
use mfgcert_core::*;

fn profile(d: usize) -> ExponentProfile {
    ExponentProfile::new(4.0, 4.0, 8.0, 8.0, d).unwrap()
}

fn power() -> HamiltonianSpec {
    HamiltonianSpec::power(2.0, Coupling::identity())
}

fn cos_v(amp: f64) -> TrigPolynomial {
    TrigPolynomial::cosine(amp, &[1])
}

#[test]
fn adjoint_from_power_constant_solution_matches_analytic_solve() {
    let g = make_grid(1, 32).unwrap();
    let (w, _) = solve_strong(&power(), g, &SolverOptions::default()).unwrap();
    let coeffs = assemble_coeffs(&power(), &w).unwrap();
    let zeta = ScalarField::from_fn(g, |x| (2.0 * PI * x[0]).cos());
    let (from_pipeline, _) = solve_adjoint(&AdjointProblem::new(coeffs.elliptic, zeta.clone(), 2.0).unwrap()).unwrap();
    let (analytic, _) =
        solve_adjoint(&AdjointProblem::new(EllipticCoeffs::shifted_laplacian(g), zeta, 2.0).unwrap()).unwrap();
    assert_eq!(from_pipeline, analytic);
}

#[test]
fn power_constant_certificate() {
    let g = make_grid(1, 64).unwrap();
    let run = certify(&power(), g, &profile(1), &SolverOptions::default(), &CertifyOptions::default()).unwrap();
    let c = &run.certificate;
    assert!(c.overall.pass_a && c.overall.pass_b);
    let a = c.path_a.as_ref().unwrap();
    assert!((a.a3mon.lambda_min - 1.0).abs() < 1e-12);
    let b = c.path_b.as_ref().unwrap();
    assert_eq!(b.adjoint_solves.len(), 9);
    assert!(b.adjoint_solves.iter().all(|r| r.pass));
    // with A = I, a = -1, b = c = 0 the kernel is trivial analytically
    assert!(b.coercivity_sufficient.as_ref().unwrap().pass);
    assert!(!c.overall.caveats.iter().any(|s| s.contains("[kernel_triviality]")));
}

#[test]
fn congestion_certificate_with_potential() {
    let spec = HamiltonianSpec::congestion(2.0, 0.5).with_potential(cos_v(0.2));
    let g = make_grid(1, 128).unwrap();
    let run = certify(&spec, g, &profile(1), &SolverOptions::default(), &CertifyOptions::default()).unwrap();
    let c = &run.certificate;
    assert!(c.overall.pass_a);
    assert!(c.solve.residual < 1e-10);
    for item in &c.overall.evidence_items {
        assert!(DISCRETE_EVIDENCE.contains(&item.as_str()));
        assert!(c.overall.caveats.iter().any(|s| s.contains(&format!("[{item}]"))));
    }
    let txt = c.summary_text();
    assert!(c.overall.caveats.iter().all(|s| txt.contains(s.as_str())));
}

#[test]
fn margins_are_stable_under_refinement() {
    let spec = HamiltonianSpec::congestion(2.0, 0.5).with_potential(cos_v(0.2));
    let lam = |n: usize| {
        let g = make_grid(1, n).unwrap();
        let (w, _) = solve_strong(&spec, g, &SolverOptions::default()).unwrap();
        check_a3mon(&spec, &w, 1e-10).unwrap().1.lambda_min
    };
    let (l16, l32, l64, l128) = (lam(16), lam(32), lam(64), lam(128));
    let estimate = (l32 - l16).abs();
    assert!((l64 - l32).abs() <= estimate + 1e-12);
    assert!((l128 - l64).abs() <= estimate + 1e-12);

    let opts = CertifyOptions { refinement_study: true, ..CertifyOptions::default() };
    let run = certify(&spec, make_grid(1, 64).unwrap(), &profile(1), &SolverOptions::default(), &opts).unwrap();
    let r = run.certificate.path_b.unwrap().refinement.unwrap();
    assert!(r.pass && r.max_rel_change < 1e-8, "{r:?}");
}

#[test]
fn seed_changes_only_randomized_numbers() {
    let spec = HamiltonianSpec::congestion(2.0, 0.5).with_potential(cos_v(0.2));
    let g = make_grid(1, 32).unwrap();
    let run = |seed| {
        let opts = CertifyOptions { seed, ..CertifyOptions::default() };
        certify(&spec, g, &profile(1), &SolverOptions::default(), &opts).unwrap().certificate
    };
    let (a, b) = (run(1), run(2));
    assert_eq!(a.solve, b.solve);
    assert_eq!(a.path_a.as_ref().unwrap().a3mon, b.path_a.as_ref().unwrap().a3mon);
    assert_ne!(a.path_a.as_ref().unwrap().perturbation, b.path_a.as_ref().unwrap().perturbation);
    assert_eq!(a.to_json().unwrap(), run(1).to_json().unwrap());
}

#[test]
fn two_dimensional_pipeline() {
    let spec = HamiltonianSpec::congestion(2.0, 0.5).with_potential(TrigPolynomial::cosine(0.2, &[1, 1]));
    let g = make_grid(2, 16).unwrap();
    let opts = CertifyOptions { vi_samples: 50, inequality_samples: 30, ..CertifyOptions::default() };
    let run = certify(&spec, g, &profile(2), &SolverOptions::default(), &opts).unwrap();
    assert!(run.certificate.overall.pass_a, "{}", run.certificate.summary_text());
    assert!(strong_residual_norm(&spec, &run.solution).unwrap() < 1e-9);
}

#[test]
fn solution_dump_round_trip() {
    let g = make_grid(2, 8).unwrap();
    let spec = power().with_potential(TrigPolynomial::cosine(0.1, &[0, 1]));
    let (w, _) = solve_strong(&spec, g, &SolverOptions::default()).unwrap();
    let mut buf = Vec::new();
    write_field_csv(&w.m, &mut buf).unwrap();
    let back = read_field_csv(g, buf.as_slice()).unwrap();
    assert_eq!(back, w.m);
}

#[test]
fn adjoint_solver_reuse_matches_single_solves() {
    let spec = HamiltonianSpec::congestion(2.0, 0.5).with_potential(cos_v(0.2));
    let g = make_grid(1, 32).unwrap();
    let (w, _) = solve_strong(&spec, g, &SolverOptions::default()).unwrap();
    let coeffs = assemble_coeffs(&spec, &w).unwrap().elliptic;
    let solver = AdjointSolver::new(&coeffs, 2.0).unwrap();
    for (_, zeta) in fourier_modes(g, 4) {
        let (a, ra) = solver.solve(&zeta).unwrap();
        let (b, _) = solve_adjoint(&AdjointProblem::new(coeffs.clone(), zeta, 3.0).unwrap()).unwrap();
        assert!(ra.pass);
        assert!((&a - &b).norm_inf() < 1e-10);
    }
}

#[test]
fn config_drives_the_same_pipeline() {
    let doc = r#"{"grid": {"d": 1, "n": 32},
        "hamiltonian": {"family": "power", "gamma": 2.0,
                        "coupling_g": {"power_law": {"c": 1.0, "exponent": 1.0}},
                        "density_domain": "nonnegative"},
        "certify": {"vi_samples": 20, "inequality_samples": 10}}"#;
    let cfg = RunConfig::from_json(doc).unwrap();
    let run = cfg.run_certify().unwrap();
    let direct = certify(&power(), make_grid(1, 32).unwrap(), &profile(1), &cfg.solver, &cfg.certify).unwrap();
    assert_eq!(run.certificate, direct.certificate);
}

#[test]
fn shipped_configs_parse() {
    let root = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../..");
    for name in ["congestion_d1.json", "power_d2.json"] {
        RunConfig::load(&root.join("configs").join(name)).unwrap();
    }
    let readme = std::fs::read_to_string(root.join("README.md")).unwrap();
    let block = readme.split("```json\n").nth(1).unwrap().split("```").next().unwrap();
    let cfg = RunConfig::from_json(block).unwrap();
    assert_eq!(cfg.hamiltonian.potential_v.terms[0].cos, 0.2);
}
