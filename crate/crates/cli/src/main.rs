use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use mfgcert_core::adjoint::{random_fields, verify_bounded, verify_coercive_shift, verify_embeddings, AdjointSolver};
use mfgcert_core::exponents::{exponent_report, gate_int_a};
use mfgcert_core::field::{read_field_csv_file, write_field_csv_file};
use mfgcert_core::hamiltonian::{congestion_alpha_bound_unclamped, congestion_alpha_max};
use mfgcert_core::linearize::{assemble_coeffs, check_a3mon, check_e1_e3, search_exponent_witness};
use mfgcert_core::mfg::{probe_monotonicity, ProbeOptions};
use mfgcert_core::{emit_reports, make_grid, Coupling, EllipticCoeffs, ExponentProfile, HamiltonianSpec, RunConfig, ScalarField};

const PASS: u8 = 0;
const FAIL: u8 = 2;

/// Strong solutions of stationary mean-field games on the torus, with
/// numerical certificates for weak-strong uniqueness.
#[derive(Parser, Debug)]
#[command(name = "mfgcert", version)]
struct Cli {
    /// Run configuration (JSON with sections grid, hamiltonian, exponents, solver, certify).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "mfgcert-out")]
    out: PathBuf,
    /// Overrides the seed of every randomized check.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Solve the stationary system; writes m.csv, u.csv and report.json.
    Solve,
    /// Solve, then dump the linearization coefficients and summary.json.
    Linearize,
    /// Solve the adjoint elliptic problem for a given right-hand side.
    Adjoint {
        /// Right-hand side as a field dump on the configured grid.
        #[arg(long)]
        zeta: PathBuf,
    },
    /// Run the full certification pipeline.
    Certify {
        /// Also compare the integrability norms on the grid of half resolution.
        #[arg(long)]
        refinement_study: bool,
    },
    /// Check the exponent relations and print a pass/fail table.
    CheckExponents(ExponentArgs),
    /// Randomized search for monotonicity violations of the operator.
    ProbeMonotonicity {
        #[arg(long, default_value_t = 200)]
        samples: usize,
        #[arg(long, default_value_t = 0.2)]
        mmin: f64,
        #[arg(long, default_value_t = 3.0)]
        mmax: f64,
        /// Tolerance on the scaled gap.
        #[arg(long, default_value_t = 1e-8)]
        tol: f64,
    },
    /// Quick analytic checks of the installation.
    Selftest,
}

#[derive(Args, Debug)]
struct ExponentArgs {
    #[arg(long)]
    r: f64,
    #[arg(long)]
    gamma: f64,
    #[arg(long)]
    r1: f64,
    #[arg(long)]
    gamma1: f64,
    #[arg(long)]
    d: usize,
    #[arg(long, requires = "beta")]
    q: Option<f64>,
    /// `inf` is accepted.
    #[arg(long, requires = "q")]
    beta: Option<f64>,
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let path = cli.config.as_ref().context("this subcommand needs --config <file>")?;
    let mut cfg = RunConfig::load(path).with_context(|| format!("reading {}", path.display()))?;
    if let Some(seed) = cli.seed {
        cfg.certify.seed = seed;
    }
    Ok(cfg)
}

fn out_dir(cli: &Cli) -> Result<&Path> {
    fs::create_dir_all(&cli.out).with_context(|| format!("creating {}", cli.out.display()))?;
    Ok(&cli.out)
}

fn write_json(path: PathBuf, value: &serde_json::Value) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    fs::write(&path, s).with_context(|| format!("writing {}", path.display()))
}

fn solve(cli: &Cli) -> Result<u8> {
    let cfg = load_config(cli)?;
    let (w, rep) = mfgcert_core::solve_strong(&cfg.hamiltonian, cfg.torus()?, &cfg.solver)?;
    let dir = out_dir(cli)?;
    write_field_csv_file(&w.m, dir.join("m.csv"))?;
    write_field_csv_file(&w.u, dir.join("u.csv"))?;
    write_json(dir.join("report.json"), &serde_json::to_value(&rep)?)?;
    println!(
        "residual {:.3e}, c0_hat {:.6e}, {} stages ({})",
        rep.residual,
        rep.c0_hat,
        rep.stages.len(),
        rep.linear_solver
    );
    Ok(PASS)
}

fn linearize(cli: &Cli) -> Result<u8> {
    let cfg = load_config(cli)?;
    let (w, _) = mfgcert_core::solve_strong(&cfg.hamiltonian, cfg.torus()?, &cfg.solver)?;
    let coeffs = assemble_coeffs(&cfg.hamiltonian, &w)?;
    let (_, a3) = check_a3mon(&cfg.hamiltonian, &w, cfg.certify.tol_pos)?;
    let e = check_e1_e3(&coeffs, cfg.certify.tol_pos);
    let witness = search_exponent_witness(&coeffs.elliptic, cfg.grid.d).ok();
    let dir = out_dir(cli)?;
    coeffs.write_csv(fs::File::create(dir.join("coefficients.csv"))?)?;
    let summary = json!({
        "lambda_min": a3.lambda_min,
        "a3mon_pass": a3.pass,
        "sigma_min": e.sigma_min,
        "tau": e.tau,
        "e3_min": e.e3_min,
        "e1_e3_pass": e.pass,
        "witness": witness.as_ref().map(serde_json::to_value).transpose()?,
    });
    write_json(dir.join("summary.json"), &summary)?;
    println!(
        "lambda_min {:.6e}, sigma_min {:.6e}, tau {:.6e}, e3_min {:.6e}",
        a3.lambda_min, e.sigma_min, e.tau, e.e3_min
    );
    Ok(PASS)
}

fn adjoint(cli: &Cli, zeta: &Path) -> Result<u8> {
    let cfg = load_config(cli)?;
    let grid = cfg.torus()?;
    let zeta = read_field_csv_file(grid, zeta).with_context(|| format!("reading {}", zeta.display()))?;
    let (w, _) = mfgcert_core::solve_strong(&cfg.hamiltonian, grid, &cfg.solver)?;
    let coeffs = assemble_coeffs(&cfg.hamiltonian, &w)?;
    let ell = &coeffs.elliptic;
    let solver = AdjointSolver::with_kernel_tol(ell, cfg.certify.upsilon0, cfg.certify.kernel_tol)?;
    let (v, rep) = solver.solve(&zeta)?;
    let samples = random_fields(grid, cfg.certify.inequality_samples, cfg.certify.seed);
    let mut lemmas = vec![
        verify_coercive_shift(ell, &samples)?.with_tol(cfg.certify.inequality_tol),
        verify_bounded(ell, &samples)?.with_tol(cfg.certify.inequality_tol),
    ];
    if let Ok(wit) = search_exponent_witness(ell, grid.dim()) {
        let (a, b) = verify_embeddings(&ell.sigma_field(), &ell.kappa_field(), wit.q, wit.beta, &samples)?;
        lemmas.push(a.with_tol(cfg.certify.inequality_tol));
        lemmas.push(b.with_tol(cfg.certify.inequality_tol));
    }
    let solved = rep.residual <= cfg.certify.adjoint_tol * zeta.norm_inf();
    let ok = solved && lemmas.iter().all(|l| l.pass);
    let dir = out_dir(cli)?;
    write_field_csv_file(&v, dir.join("vbar.csv"))?;
    write_json(
        dir.join("adjoint_report.json"),
        &json!({
            "residual": rep.residual,
            "relative_residual": rep.relative_residual,
            "norm_x": rep.norm_x,
            "finiteness_diagnostic": rep.finiteness_diagnostic,
            "fredholm_agreement": rep.fredholm_agreement,
            "sigma_min": rep.kernel.sigma_min,
            "kernel": serde_json::to_value(rep.kernel)?,
            "inequalities": serde_json::to_value(&lemmas)?,
            "pass": ok,
        }),
    )?;
    println!(
        "residual {:.3e}, norm_X {:.6e}, sigma_min(L) {:.6e}",
        rep.residual, rep.norm_x, rep.kernel.sigma_min
    );
    for l in &lemmas {
        println!("{:<22} {}  min scaled slack {:.3e}", l.name, verdict(l.pass), l.min_scaled_slack);
    }
    Ok(if ok { PASS } else { FAIL })
}

fn certify(cli: &Cli, refinement_study: bool) -> Result<u8> {
    let mut cfg = load_config(cli)?;
    cfg.certify.refinement_study |= refinement_study;
    let run = cfg.run_certify()?;
    emit_reports(&run, out_dir(cli)?)?;
    print!("{}", run.certificate.summary_text());
    Ok(if run.certificate.passes() { PASS } else { FAIL })
}

fn verdict(pass: bool) -> &'static str {
    if pass {
        "PASS"
    } else {
        "FAIL"
    }
}

fn check_exponents(args: &ExponentArgs) -> Result<u8> {
    let prof = ExponentProfile::new(args.r, args.gamma, args.r1, args.gamma1, args.d)?;
    let rep = exponent_report(&prof, args.q.zip(args.beta))?;
    println!("r' = {}  gamma' = {}  gamma* = {}", rep.r_conj, rep.gamma_conj, rep.gamma_star);
    for row in &rep.rows {
        println!("{:<16} {}  {}", row.gate, verdict(row.pass), row.detail);
    }
    Ok(if rep.all_pass() { PASS } else { FAIL })
}

fn probe(cli: &Cli, samples: usize, mmin: f64, mmax: f64, tol: f64) -> Result<u8> {
    let cfg = load_config(cli)?;
    let opts = ProbeOptions {
        samples,
        seed: cfg.certify.seed,
        mmin,
        mmax,
        max_freq: None,
    };
    let rep = probe_monotonicity(&cfg.hamiltonian, cfg.torus()?, &opts)?;
    let mut csv = String::from("index,gap,scale\n");
    for s in &rep.samples {
        let _ = writeln!(csv, "{},{},{}", s.index, s.gap, s.scale);
    }
    fs::write(out_dir(cli)?.join("gaps.csv"), csv)?;
    let ok = rep.passes(tol);
    println!(
        "{} samples, min gap {:.3e}, min scaled gap {:.3e}: {}",
        rep.samples.len(),
        rep.min_gap,
        rep.min_scaled_gap,
        verdict(ok)
    );
    Ok(if ok { PASS } else { FAIL })
}

fn selftest() -> Result<u8> {
    let mut checks: Vec<(&str, bool)> = Vec::new();
    let grid = make_grid(1, 32)?;
    for (name, spec, u) in [
        ("power constant solution", HamiltonianSpec::power(2.0, Coupling::identity()), 0.5),
        ("congestion constant solution", HamiltonianSpec::congestion(2.0, 1.0), -0.5),
    ] {
        let ok = match mfgcert_core::solve_strong(&spec, grid, &Default::default()) {
            Ok((w, rep)) => {
                rep.residual <= 1e-12
                    && w.m.values().iter().all(|m| (m - 1.0).abs() <= 1e-12)
                    && w.u.values().iter().all(|x| (x - u).abs() <= 1e-12)
            }
            Err(_) => false,
        };
        checks.push((name, ok));
    }
    let zeta = ScalarField::from_fn(grid, |x| (2.0 * std::f64::consts::PI * x[0]).cos());
    let exact = &zeta * (1.0 / (1.0 + 4.0 * std::f64::consts::PI.powi(2)));
    let adj = AdjointSolver::new(&EllipticCoeffs::shifted_laplacian(grid), 2.0)
        .and_then(|s| s.solve(&zeta))
        .map(|(v, _)| (&v - &exact).norm_inf() <= 1e-10)
        .unwrap_or(false);
    checks.push(("adjoint single Fourier mode", adj));
    checks.push(("alpha_max(2) = 1", congestion_alpha_max(2.0)? == 1.0));
    checks.push((
        "unclamped alpha bound at gamma = 2",
        (congestion_alpha_bound_unclamped(2.0)? - (5f64.sqrt() - 1.0)).abs() <= 1e-12,
    ));
    let q = gate_int_a(&ExponentProfile::new(4.0, 4.0, 8.0, 8.0, 1)?);
    checks.push(("intA exponents at r = gamma = 4", q.is_ok_and(|q| (q.q1, q.q2, q.q3, q.q4) == (2.0, 2.0, 4.0, 4.0))));
    for (name, ok) in &checks {
        println!("[{}] {name}", verdict(*ok));
    }
    Ok(if checks.iter().all(|c| c.1) { PASS } else { FAIL })
}

fn run(cli: &Cli) -> Result<u8> {
    match &cli.command {
        Command::Solve => solve(cli),
        Command::Linearize => linearize(cli),
        Command::Adjoint { zeta } => adjoint(cli, zeta),
        Command::Certify { refinement_study } => certify(cli, *refinement_study),
        Command::CheckExponents(args) => check_exponents(args),
        Command::ProbeMonotonicity { samples, mmin, mmax, tol } => {
            if !(*tol > 0.0) {
                bail!("--tol must be positive");
            }
            probe(cli, *samples, *mmin, *mmax, *tol)
        }
        Command::Selftest => selftest(),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            // usage errors are runtime errors; 2 is reserved for failed checks
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
