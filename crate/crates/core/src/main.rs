//! Command-line entry point: each experiment is a subcommand driven by a
//! single JSON config; all reports land in the configured output directory
//! together with a manifest echoing the config and the checks that ran.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;

use deglab::assemble::assemble;
use deglab::carleman::{
    s_sweep, verify_weight_identities, CarlemanWeightSet,
};
use deglab::config::RunConfig;
use deglab::error::{Error, Result};
use deglab::evolution::{delta_sweep, solve_backward, solve_forward_cn, Scheme, TimeGrid};
use deglab::geometry::{classify_boundary, DomainSpec, XNU_TOL};
use deglab::mesh::generate_mesh;
use deglab::observability::{estimate_constant, EnsembleSpec};
use deglab::report::{domain_hash, fmt_f64, write_json, CsvWriter};
use deglab::spectral::{
    hardy_test_suite, lambda1_lower_bound, solve_eigenpairs, verify_hardy, verify_poincare,
};

#[derive(Parser)]
#[command(name = "deglab", version, about = "numerical laboratory for boundary-degenerate parabolic equations")]
struct Cli {
    /// path to the JSON run configuration
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// worker threads (default: machine parallelism)
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// lowest eigenpairs, closed-form bounds, Hardy/Poincaré verification
    Spectrum,
    /// forward Crank–Nicolson solve with bump initial data
    Solve,
    /// truncation convergence study over the configured deltas
    SweepDelta,
    /// weight identities and the Carleman s-sweep
    Carleman,
    /// ensemble estimate of the observability constant
    Observability,
    /// boundary classification and admissibility of the domain
    CheckGeometry,
}

#[derive(Serialize)]
struct Manifest {
    command: String,
    config_echo: RunConfig,
    domain_hash: String,
    checks: Vec<CheckEntry>,
    all_passed: bool,
}

#[derive(Serialize)]
struct CheckEntry {
    name: String,
    passed: bool,
    detail: String,
}

struct Ctx {
    cfg: RunConfig,
    domain: DomainSpec,
    out: PathBuf,
    checks: Vec<CheckEntry>,
}

impl Ctx {
    fn check(&mut self, name: &str, passed: bool, detail: String) {
        self.checks.push(CheckEntry { name: name.to_string(), passed, detail });
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(t) = cli.threads {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
    }
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: &Cli) -> Result<bool> {
    let config_path = cli
        .config
        .as_ref()
        .ok_or_else(|| Error::Config("--config PATH is required".into()))?;
    let cfg = RunConfig::load(config_path)?;
    let domain = cfg.build_domain()?;
    let out = PathBuf::from(&cfg.output_dir);
    std::fs::create_dir_all(&out)?;
    let mut ctx = Ctx { cfg, domain, out, checks: Vec::new() };

    let name = match &cli.command {
        Command::Spectrum => {
            cmd_spectrum(&mut ctx)?;
            "spectrum"
        }
        Command::Solve => {
            cmd_solve(&mut ctx)?;
            "solve"
        }
        Command::SweepDelta => {
            cmd_sweep_delta(&mut ctx)?;
            "sweep-delta"
        }
        Command::Carleman => {
            cmd_carleman(&mut ctx)?;
            "carleman"
        }
        Command::Observability => {
            cmd_observability(&mut ctx)?;
            "observability"
        }
        Command::CheckGeometry => {
            cmd_check_geometry(&mut ctx)?;
            "check-geometry"
        }
    };

    let all_passed = ctx.checks.iter().all(|c| c.passed);
    let manifest = Manifest {
        command: name.to_string(),
        config_echo: ctx.cfg.clone(),
        domain_hash: domain_hash(&ctx.domain),
        checks: ctx.checks,
        all_passed,
    };
    write_json(&ctx.out.join("manifest.json"), &manifest)?;
    for c in &manifest.checks {
        println!("[{}] {} — {}", if c.passed { "pass" } else { "FAIL" }, c.name, c.detail);
    }
    Ok(all_passed)
}

fn default_modes(cfg: &RunConfig) -> usize {
    cfg.modes.or(cfg.ensemble.as_ref().map(|e| e.modes)).unwrap_or(10)
}

fn cmd_spectrum(ctx: &mut Ctx) -> Result<()> {
    let cfg = ctx.cfg.clone();
    let mesh = generate_mesh(&ctx.domain, cfg.mesh.h, cfg.mesh.grading_exponent)?;
    let ops = assemble(&mesh, cfg.alpha)?;
    let m = default_modes(&cfg);
    let basis = solve_eigenpairs(&ops, m, &mesh)?;

    let mut csv = CsvWriter::new(&["n", "lambda_n", "residual"]);
    for i in 0..basis.m {
        csv.row(&[
            (i + 1).to_string(),
            fmt_f64(basis.lambdas[i]),
            fmt_f64(basis.residuals[i]),
        ]);
    }
    csv.write(&ctx.out.join("spectrum.csv"))?;

    let bound = lambda1_lower_bound(cfg.alpha, ctx.domain.m_radius);
    let fields = hardy_test_suite(&basis, &mesh, 10, 2024);
    let hardy = verify_hardy(&ops, &fields, 0.02)?;
    let poincare = verify_poincare(&ops, ctx.domain.m_radius, &fields, 0.02)?;

    #[derive(Serialize)]
    struct Bounds {
        lambda1: f64,
        lambda1_lower_bound: f64,
        hardy_bound: f64,
        hardy_max_ratio: f64,
        hardy_pass: bool,
        poincare_bound: f64,
        poincare_max_ratio: f64,
        poincare_pass: bool,
    }
    write_json(
        &ctx.out.join("bounds.json"),
        &Bounds {
            lambda1: basis.lambdas[0],
            lambda1_lower_bound: bound,
            hardy_bound: hardy.bound,
            hardy_max_ratio: hardy.max_ratio,
            hardy_pass: hardy.pass,
            poincare_bound: poincare.bound,
            poincare_max_ratio: poincare.max_ratio,
            poincare_pass: poincare.pass,
        },
    )?;
    ctx.check(
        "lambda1_lower_bound",
        basis.lambdas[0] >= bound,
        format!("λ₁ = {} ≥ {}", fmt_f64(basis.lambdas[0]), fmt_f64(bound)),
    );
    ctx.check("hardy", hardy.pass, format!("max ratio {} vs bound {}", fmt_f64(hardy.max_ratio), fmt_f64(hardy.bound)));
    ctx.check(
        "poincare",
        poincare.pass,
        format!("max ratio {} vs bound {}", fmt_f64(poincare.max_ratio), fmt_f64(poincare.bound)),
    );
    Ok(())
}

fn initial_bump(domain: &DomainSpec) -> impl Fn(deglab::geometry::Point) -> f64 {
    // bump centered at the vertex average, kept away from the origin
    let n = domain.vertices.len() as f64;
    let cx = domain.vertices.iter().map(|v| v[0]).sum::<f64>() / n;
    let cy = domain.vertices.iter().map(|v| v[1]).sum::<f64>() / n;
    move |p| deglab::spectral::bump(p, [cx, cy], 0.2)
}

fn cmd_solve(ctx: &mut Ctx) -> Result<()> {
    let cfg = ctx.cfg.clone();
    let mesh = generate_mesh(&ctx.domain, cfg.mesh.h, cfg.mesh.grading_exponent)?;
    let ops = assemble(&mesh, cfg.alpha)?;
    let grid = TimeGrid::new(cfg.t_final, cfg.time.steps)?;
    let y0_fn = initial_bump(&ctx.domain);
    let y0: Vec<f64> = mesh.nodes.iter().map(|p| y0_fn(*p)).collect();
    let no_f: Option<&fn(f64, deglab::geometry::Point) -> f64> = None;
    let traj = solve_forward_cn(&mesh, &ops, &grid, &y0, no_f)?;

    let mut csv = CsvWriter::new(&["t", "m_norm", "energy"]);
    for (k, f) in traj.frames.iter().enumerate() {
        csv.row_f64(&[grid.times[k], ops.m.quad(f, f).sqrt(), ops.k.quad(f, f)]);
    }
    csv.write(&ctx.out.join("solution.csv"))?;

    let mut decays = true;
    for k in 0..grid.steps {
        if traj.m_norm(k + 1, &ops) > traj.m_norm(k, &ops) * (1.0 + 1e-12) {
            decays = false;
        }
    }
    ctx.check(
        "norm_decay",
        decays,
        format!(
            "‖y‖ from {} to {}",
            fmt_f64(traj.m_norm(0, &ops)),
            fmt_f64(traj.m_norm(grid.steps, &ops))
        ),
    );
    Ok(())
}

fn cmd_sweep_delta(ctx: &mut Ctx) -> Result<()> {
    let cfg = ctx.cfg.clone();
    if cfg.deltas.is_empty() {
        return Err(Error::Config("deltas: list must not be empty for sweep-delta".into()));
    }
    let grid = TimeGrid::new(cfg.t_final, cfg.time.steps)?;
    let classification = classify_boundary(&ctx.domain, XNU_TOL);
    let tags = classification.gamma_plus_tags(&ctx.domain);
    let y0 = initial_bump(&ctx.domain);
    let (report, _) = delta_sweep(
        &ctx.domain,
        cfg.alpha,
        cfg.mesh.h,
        cfg.mesh.grading_exponent,
        &grid,
        &y0,
        &cfg.deltas,
        &tags,
    )?;
    let mut csv = CsvWriter::new(&["delta", "l2q_error", "flux_error_gamma_plus", "runtime_ms"]);
    for r in &report.rows {
        csv.row_f64(&[r.delta, r.l2q_error, r.flux_error_gamma_plus, r.runtime_ms]);
    }
    csv.write(&ctx.out.join("sweep.csv"))?;
    ctx.check(
        "sweep_monotone",
        report.inversions <= 1,
        format!("{} inversions across {} deltas", report.inversions, report.rows.len()),
    );
    Ok(())
}

fn cmd_carleman(ctx: &mut Ctx) -> Result<()> {
    let cfg = ctx.cfg.clone();
    if cfg.s_grid.len() < 5 {
        return Err(Error::Config("s_grid: needs at least 5 values".into()));
    }
    // identity report on deterministic interior sample points
    let pts = interior_sample_points(&ctx.domain, 100, 71);
    let identities = verify_weight_identities(cfg.alpha, cfg.t_final, &ctx.domain, &pts, 1e-5)?;
    write_json(&ctx.out.join("identities.json"), &identities)?;
    ctx.check(
        "weight_identities",
        identities.max_deviation <= 1e-5,
        format!("max FD deviation {}", fmt_f64(identities.max_deviation)),
    );

    let mesh = generate_mesh(&ctx.domain, cfg.mesh.h, cfg.mesh.grading_exponent)?;
    let ops = assemble(&mesh, cfg.alpha)?;
    let basis = solve_eigenpairs(&ops, 1, &mesh)?;
    let grid = TimeGrid::new(cfg.t_final, cfg.time.steps)?;
    let traj = solve_backward(&mesh, &ops, &grid, &basis.phis[0], Scheme::CrankNicolson, None)?;
    let classification = classify_boundary(&ctx.domain, XNU_TOL);
    let base = CarlemanWeightSet::new(cfg.alpha, cfg.t_final, &ctx.domain, cfg.s_grid[0])?;
    let sweep = s_sweep(&mesh, &traj, &base, &cfg.s_grid, &ctx.domain, &classification)?;

    let mut csv = CsvWriter::new(&["s", "lhs_grad", "lhs_zero", "rhs_boundary", "ratio"]);
    for r in &sweep.rows {
        csv.row_f64(&[r.s, r.lhs_grad, r.lhs_zero, r.rhs_boundary, r.ratio]);
    }
    csv.write(&ctx.out.join("s_sweep.csv"))?;
    write_json(&ctx.out.join("s_sweep.json"), &sweep)?;
    ctx.check(
        "carleman_ratio_bounded",
        sweep.rows.iter().all(|r| r.ratio.is_finite()) && sweep.fitted_constant.is_finite(),
        format!(
            "knee s₀ = {}, fitted constant {}",
            fmt_f64(sweep.knee_s),
            fmt_f64(sweep.fitted_constant)
        ),
    );
    ctx.check(
        "observation_nondegenerate",
        !sweep.degenerate_observation,
        "Γ⁺ flux energy above the ε floor".to_string(),
    );
    Ok(())
}

fn interior_sample_points(domain: &DomainSpec, n: usize, seed: u64) -> Vec<deglab::geometry::Point> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let xmin = domain.vertices.iter().map(|v| v[0]).fold(f64::INFINITY, f64::min);
    let xmax = domain.vertices.iter().map(|v| v[0]).fold(f64::NEG_INFINITY, f64::max);
    let ymin = domain.vertices.iter().map(|v| v[1]).fold(f64::INFINITY, f64::min);
    let ymax = domain.vertices.iter().map(|v| v[1]).fold(f64::NEG_INFINITY, f64::max);
    let mut pts = Vec::with_capacity(n);
    while pts.len() < n {
        let p = [
            xmin + (xmax - xmin) * rng.gen::<f64>(),
            ymin + (ymax - ymin) * rng.gen::<f64>(),
        ];
        if domain.contains(p) && (p[0] * p[0] + p[1] * p[1]).sqrt() > 1e-3 {
            pts.push(p);
        }
    }
    pts
}

fn cmd_observability(ctx: &mut Ctx) -> Result<()> {
    let cfg = ctx.cfg.clone();
    let ens = cfg
        .ensemble
        .as_ref()
        .ok_or_else(|| Error::Config("ensemble: block required for observability".into()))?;
    let spec = EnsembleSpec { modes: ens.modes, samples: ens.samples, seed: ens.seed };
    let report = estimate_constant(
        &ctx.domain,
        cfg.alpha,
        cfg.mesh.h,
        cfg.mesh.grading_exponent,
        cfg.t_final,
        cfg.time.steps,
        &spec,
    )?;
    write_json(&ctx.out.join("observability.json"), &report)?;
    let mut csv = CsvWriter::new(&["sample_id", "initial_energy", "boundary_energy", "ratio"]);
    for r in &report.rows {
        csv.row(&[
            r.sample_id.to_string(),
            fmt_f64(r.initial_energy),
            fmt_f64(r.boundary_energy),
            fmt_f64(r.ratio),
        ]);
    }
    csv.write(&ctx.out.join("observability.csv"))?;
    ctx.check(
        "c_obs_finite",
        report.c_obs_empirical.is_finite(),
        format!("c_obs = {}", fmt_f64(report.c_obs_empirical)),
    );
    ctx.check(
        "scalar_inequalities",
        report.rows.iter().all(|r| r.monotonicity_pass && r.time_average_pass),
        "monotonicity and time-average bound on every sample".to_string(),
    );
    ctx.check(
        "no_violation_candidates",
        report.rows.iter().all(|r| !r.violation_candidate),
        format!("{} notes", report.notes.len()),
    );
    Ok(())
}

fn cmd_check_geometry(ctx: &mut Ctx) -> Result<()> {
    let classification = classify_boundary(&ctx.domain, XNU_TOL);
    #[derive(Serialize)]
    struct GeometryReport {
        condition_holds: bool,
        sup_x_dot_nu: f64,
        gamma_plus_segments: Vec<usize>,
        gamma_zero_segments: Vec<usize>,
        gamma_minus_segments: Vec<usize>,
        gamma_plus_tags: Vec<String>,
        delta0: f64,
        r0: f64,
        m_radius: f64,
        domain_hash: String,
    }
    let rep = GeometryReport {
        condition_holds: classification.condition_holds,
        sup_x_dot_nu: classification.sup_x_dot_nu,
        gamma_plus_segments: classification.gamma_plus.clone(),
        gamma_zero_segments: classification.gamma_zero.clone(),
        gamma_minus_segments: classification.gamma_minus.clone(),
        gamma_plus_tags: classification.gamma_plus_tags(&ctx.domain),
        delta0: ctx.domain.delta0(),
        r0: ctx.domain.r0,
        m_radius: ctx.domain.m_radius,
        domain_hash: domain_hash(&ctx.domain),
    };
    write_json(&ctx.out.join("geometry.json"), &rep)?;
    ctx.check(
        "degeneracy_condition",
        rep.condition_holds,
        format!("x·ν ≤ 0 near the origin; sup_∂Ω x·ν = {}", fmt_f64(rep.sup_x_dot_nu)),
    );
    ctx.check(
        "gamma_plus_nonempty",
        !rep.gamma_plus_segments.is_empty(),
        format!("{} observed segments", rep.gamma_plus_segments.len()),
    );
    Ok(())
}
