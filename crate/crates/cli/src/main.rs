mod config;
mod manifest;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fracpin::evolution::{homogenization_sweep, run_pinning_experiment, EvolutionConfig, HomogenizationConfig};
use fracpin::percolation::{smallest_surface, tail_statistics, LatticeWindow, SiteGrid};
use fracpin::supersolution::{build_bundle, certify, containment, resolve_ledger, Certificate, SupersolutionBundle};
use fracpin::Error;
use serde_json::json;

use config::Config;
use manifest::{OutputDir, RunManifest, StageRecord, Versions};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Io(String),
    #[error("rejected: {0}")]
    Rejected(String),
    #[error("verification failed: {0}")]
    Failed(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Io(_) => 1,
            CliError::Rejected(_) => 2,
            CliError::Failed(_) => 3,
        }
    }

    fn stage(stage: &str, e: Error) -> Self {
        let msg = format!("{stage}: {e}");
        match e {
            Error::Io(_) | Error::Json(_) | Error::Shape(_) => CliError::Io(msg),
            Error::InvalidParameter(_)
            | Error::DegenerateSurface { .. }
            | Error::Rejected(_)
            | Error::NoSurface { .. }
            | Error::Coverage(_)
            | Error::HolderViolation { .. } => CliError::Rejected(msg),
            _ => CliError::Failed(msg),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "fracpin", version, about = "Barrier construction, certification and pinning experiments")]
struct Cli {
    /// TOML configuration; the built-in desk defaults are used when absent.
    #[arg(long, global = true, env = "FRACPIN_CONFIG")]
    config: Option<PathBuf>,
    /// Overrides `run.seed`.
    #[arg(long, global = true, env = "FRACPIN_SEED")]
    seed: Option<u64>,
    #[arg(long, global = true, env = "FRACPIN_OUT", default_value = "out")]
    out: PathBuf,
    /// Certification tolerance as a fraction of F2; overrides `run.tolerance`.
    #[arg(long, global = true, env = "FRACPIN_TOLERANCE")]
    tolerance: Option<f64>,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true, env = "FRACPIN_THREADS", default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the parameter recipe and write the geometry ledger.
    Select,
    /// Sample the obstacle field of the configured realisation.
    Sample,
    /// Tail statistics of the smallest Lipschitz surface on Bernoulli sites.
    Percolate,
    /// Build the barrier, certify it and dump the grids.
    Build,
    /// Build and certify, writing only the certificate.
    Certify,
    /// Pinning experiment against the certified barrier.
    Evolve,
    /// Rescaling sweep over ε (s = 1/2 only).
    Homogenize,
    /// Summarise and verify the manifests in the output directory.
    Report,
    /// Print the default configuration.
    DefaultConfig,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Select => "select",
            Command::Sample => "sample",
            Command::Percolate => "percolate",
            Command::Build => "build",
            Command::Certify => "certify",
            Command::Evolve => "evolve",
            Command::Homogenize => "homogenize",
            Command::Report => "report",
            Command::DefaultConfig => "default-config",
        }
    }
}

struct Ctx {
    cfg: Config,
    out: OutputDir,
    stages: Vec<StageRecord>,
    ledger: Option<serde_json::Value>,
}

impl Ctx {
    fn stage(&mut self, stage: &str, pass: bool, detail: impl Into<String>) {
        self.stages.push(StageRecord {
            stage: stage.into(),
            pass,
            detail: detail.into(),
        });
    }

    fn json<T: serde::Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Io(e.to_string()))?;
        self.out.write(name, (text + "\n").as_bytes())
    }

    fn finish(self, command: &str) -> Result<(), CliError> {
        let manifest = RunManifest {
            command: command.into(),
            seed: self.cfg.run.seed,
            versions: Versions {
                fracpin: env!("CARGO_PKG_VERSION").into(),
                schema: config::SCHEMA_VERSION,
            },
            config: self.cfg,
            ledger: self.ledger,
            stages: self.stages,
            outputs: Vec::new(),
        };
        self.out.finish(manifest)?;
        Ok(())
    }
}

fn tolerance_abs(cfg: &Config, bundle: &SupersolutionBundle) -> f64 {
    cfg.run.tolerance * bundle.ledger.f2
}

fn ledger_value(bundle: &SupersolutionBundle) -> Option<serde_json::Value> {
    serde_json::to_value(&bundle.ledger).ok()
}

fn build(ctx: &mut Ctx) -> Result<SupersolutionBundle, CliError> {
    let bundle = build_bundle(&ctx.cfg.pipeline()).map_err(|e| CliError::stage("build", e))?;
    ctx.ledger = ledger_value(&bundle);
    ctx.stage(
        "build",
        true,
        format!(
            "{} obstacles, {} levels, depth {:.6e}",
            bundle.barrier.field.len(),
            bundle.levels,
            bundle.depth
        ),
    );
    Ok(bundle)
}

fn certify_stage(ctx: &mut Ctx, bundle: &SupersolutionBundle) -> Result<Certificate, CliError> {
    let tol = tolerance_abs(&ctx.cfg, bundle);
    let cert = certify(bundle, bundle.ledger.f_star, tol).map_err(|e| CliError::stage("certify", e))?;
    ctx.stage(
        "certify",
        cert.pass,
        format!(
            "max residual {:.6e} (tolerance {:.6e}), {} offenders, min gap {:.6e}",
            cert.max_residual, cert.tolerance, cert.offender_count, cert.min_gap
        ),
    );
    Ok(cert)
}

fn cmd_select(ctx: &mut Ctx) -> Result<(), CliError> {
    let (ledger, _) = resolve_ledger(&ctx.cfg.pipeline(), true).map_err(|e| CliError::stage("select", e))?;
    ctx.ledger = serde_json::to_value(&ledger).ok();
    ctx.stage("select", true, format!("F* = {:.6e}", ledger.f_star));
    ctx.json("ledger.json", &ledger)?;
    ctx.out.write("ledger.txt", ledger.table().as_bytes())?;
    print!("{}", ledger.table());
    Ok(())
}

fn cmd_sample(ctx: &mut Ctx) -> Result<(), CliError> {
    let bundle = build(ctx)?;
    let field = &bundle.barrier.field;
    let mut csv = String::new();
    let n = field.n;
    for i in 0..n {
        let _ = write!(csv, "x{i},");
    }
    csv.push_str("y,strength\n");
    for o in &field.obstacles {
        for v in &o.x {
            let _ = write!(csv, "{v:.12e},");
        }
        let _ = writeln!(csv, "{:.12e},{:.12e}", o.y, o.strength);
    }
    ctx.out.write("obstacles.csv", csv.as_bytes())?;
    let expected = bundle.ledger.lambda * field.window.volume();
    let summary = json!({
        "count": field.len(),
        "window": field.window,
        "expected_count": expected,
    });
    ctx.json("sample.json", &summary)?;
    println!("{} obstacles (expected {:.1})", field.len(), expected);
    Ok(())
}

fn cmd_percolate(ctx: &mut Ctx) -> Result<(), CliError> {
    let p = ctx.cfg.percolate.clone();
    let n = ctx.cfg.model.n;
    let window = LatticeWindow::centred(n, p.columns, true);
    let stats = tail_statistics(p.p, p.alpha, &window, p.levels, p.replicates, ctx.cfg.run.seed)
        .map_err(|e| CliError::stage("percolate", e))?;
    let mut csv = Vec::new();
    stats.write_csv(&mut csv).map_err(|e| CliError::stage("percolate", e))?;
    ctx.out.write("tail.csv", &csv)?;
    ctx.json("tail.json", &stats)?;
    let grid = SiteGrid::bernoulli(window, p.levels, p.p, ctx.cfg.run.seed, -1);
    match smallest_surface(&grid, p.alpha) {
        Ok(surf) => {
            let mut text = String::from("column,height\n");
            for (i, y) in surf.y.iter().enumerate() {
                let _ = writeln!(text, "{i},{y}");
            }
            ctx.out.write("surface.csv", text.as_bytes())?;
        }
        Err(e) => ctx.stage("example-surface", false, e.to_string()),
    }
    let ok = stats.log_slope.map_or(false, |s| s <= stats.envelope_slope + 0.1);
    ctx.stage(
        "percolate",
        ok,
        format!(
            "log slope {:?} vs envelope {:.4}, mean height {:.4}",
            stats.log_slope, stats.envelope_slope, stats.mean_height
        ),
    );
    println!(
        "tail log-slope {:?}, envelope {:.4}, mean height {:.4}",
        stats.log_slope, stats.envelope_slope, stats.mean_height
    );
    Ok(())
}

fn write_certificate(ctx: &mut Ctx, cert: &Certificate) -> Result<(), CliError> {
    ctx.json("certificate.json", cert)?;
    println!(
        "certificate: pass = {}, max residual {:.6e} (tolerance {:.6e}), min gap {:.6e}",
        cert.pass, cert.max_residual, cert.tolerance, cert.min_gap
    );
    if cert.pass {
        Ok(())
    } else {
        Err(CliError::Failed(format!(
            "certification failed with {} offenders; see certificate.json",
            cert.offender_count
        )))
    }
}

fn grid_bytes(g: &fracpin::grid::GridField) -> Result<Vec<u8>, CliError> {
    let mut buf = Vec::new();
    g.write_binary(&mut buf).map_err(|e| CliError::stage("dump", e))?;
    Ok(buf)
}

fn cmd_build(ctx: &mut Ctx) -> Result<(), CliError> {
    let bundle = build(ctx)?;
    let summary = json!({
        "ledger": bundle.ledger,
        "levels": bundle.levels,
        "depth": bundle.depth,
        "obstacles": bundle.barrier.field.len(),
        "lattice_heights": bundle.lattice.y,
        "local_conditions": bundle.local_conditions,
        "assembly_error": bundle.barrier.assembly_error(),
        "containment": containment(&bundle),
    });
    ctx.json("bundle.json", &summary)?;
    ctx.out.write("barrier.bin", &grid_bytes(&bundle.barrier.v)?)?;
    ctx.out.write("lift.bin", &grid_bytes(&bundle.barrier.u_lift)?)?;
    let cert = certify_stage(ctx, &bundle)?;
    write_certificate(ctx, &cert)
}

fn cmd_certify(ctx: &mut Ctx) -> Result<(), CliError> {
    let bundle = build(ctx)?;
    let cert = certify_stage(ctx, &bundle)?;
    write_certificate(ctx, &cert)
}

fn cmd_evolve(ctx: &mut Ctx) -> Result<(), CliError> {
    let ev = ctx.cfg.evolve.clone();
    let mut pc = ctx.cfg.pipeline();
    pc.columns = ev.columns;
    pc.grid = ev.grid;
    let bundle = build_bundle(&pc).map_err(|e| CliError::stage("build", e))?;
    ctx.ledger = ledger_value(&bundle);
    let cert = certify(&bundle, bundle.ledger.f_star, tolerance_abs(&ctx.cfg, &bundle))
        .map_err(|e| CliError::stage("certify", e))?;
    ctx.stage("certify", cert.pass, format!("max residual {:.6e}", cert.max_residual));
    let mut ec = EvolutionConfig::new(pc.model.s, ev.force_fraction * bundle.ledger.f_star, ev.horizon);
    ec.dt_max = ev.dt_max;
    ec.stop_when_pinned = ev.stop_when_pinned;
    ec.barrier_tolerance = ev.barrier_tolerance;
    ec.snapshot_times = ev.snapshot_times.clone();
    let traj = run_pinning_experiment(&bundle, &ec, &bundle.barrier.u_init).map_err(|e| CliError::stage("evolve", e))?;
    let mut csv = Vec::new();
    traj.write_csv(&mut csv).map_err(|e| CliError::stage("evolve", e))?;
    ctx.out.write("trajectory.csv", &csv)?;
    ctx.out.write("final.bin", &grid_bytes(&traj.final_state)?)?;
    for (k, (_, snap)) in traj.snapshots.iter().enumerate() {
        ctx.out.write(&format!("snapshot_{k:03}.bin"), &grid_bytes(snap)?)?;
    }
    let summary = json!({
        "force": ec.force,
        "f_star": bundle.ledger.f_star,
        "steps": traj.steps,
        "final_time": traj.final_time,
        "pinned": traj.pinned,
        "trailing_rate": traj.trailing_rate,
        "max_barrier_excess": traj.max_barrier_excess,
        "dt_min": traj.dt_min,
        "dt_max": traj.dt_max,
        "snapshot_times": traj.snapshots.iter().map(|s| s.0).collect::<Vec<_>>(),
    });
    ctx.json("evolve.json", &summary)?;
    ctx.stage(
        "evolve",
        traj.pinned,
        format!("pinned = {}, trailing rate {:.3e}", traj.pinned, traj.trailing_rate),
    );
    println!(
        "pinned = {} after t = {:.1} ({} steps), max u − v = {:.3e}",
        traj.pinned,
        traj.final_time,
        traj.steps,
        traj.max_barrier_excess.unwrap_or(f64::NAN)
    );
    Ok(())
}

fn cmd_homogenize(ctx: &mut Ctx) -> Result<(), CliError> {
    let h = ctx.cfg.homogenize.clone();
    let mut pipeline = ctx.cfg.pipeline();
    pipeline.columns = h.columns;
    let hc = HomogenizationConfig {
        pipeline,
        epsilons: h.epsilons,
        replicates: h.replicates,
        horizon: h.horizon,
        force_fraction: h.force_fraction,
        nodes_per_column: h.nodes_per_column,
        samples_per_axis: h.samples_per_axis,
        evolve: h.evolve,
    };
    let curve = homogenization_sweep(&hc).map_err(|e| CliError::stage("homogenize", e))?;
    ctx.ledger = serde_json::to_value(&curve.ledger).ok();
    let mut csv = Vec::new();
    curve.write_csv(&mut csv).map_err(|e| CliError::stage("homogenize", e))?;
    ctx.out.write("sweep.csv", &csv)?;
    ctx.json("sweep.json", &curve)?;
    let mut sorted = curve.rows.clone();
    sorted.sort_by(|a, b| a.epsilon.total_cmp(&b.epsilon));
    let monotone = sorted.windows(2).all(|w| w[0].mean_gap < w[1].mean_gap);
    ctx.stage(
        "homogenize",
        monotone,
        format!("gap slope {:.4}, monotone = {monotone}", curve.gap_slope),
    );
    print!("{}", String::from_utf8_lossy(&csv));
    println!("log-log slope of the mean gap: {:.4}", curve.gap_slope);
    Ok(())
}

fn cmd_report(root: &Path) -> Result<(), CliError> {
    let mut entries: Vec<PathBuf> = std::fs::read_dir(root)
        .map_err(|e| CliError::Io(format!("read {}: {e}", root.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.to_string_lossy().ends_with(".manifest.json"))
        .collect();
    entries.sort();
    if entries.is_empty() {
        return Err(CliError::Usage(format!("no manifests in {}", root.display())));
    }
    let mut broken = Vec::new();
    for path in entries {
        let text = std::fs::read_to_string(&path).map_err(|e| CliError::Io(e.to_string()))?;
        let m: RunManifest =
            serde_json::from_str(&text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        println!("{} (seed {}, {} outputs)", m.command, m.seed, m.outputs.len());
        for s in &m.stages {
            println!("  [{}] {}: {}", if s.pass { "pass" } else { "FAIL" }, s.stage, s.detail);
        }
        let bad = manifest::verify(root, &m);
        for b in &bad {
            println!("  digest mismatch: {b}");
        }
        broken.extend(bad);
    }
    if broken.is_empty() {
        Ok(())
    } else {
        Err(CliError::Failed(format!("{} outputs do not match their manifests", broken.len())))
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    if cli.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
            .map_err(|e| CliError::Usage(e.to_string()))?;
    }
    let mut cfg = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::desk_default(),
    };
    if let Some(seed) = cli.seed {
        cfg.run.seed = seed;
    }
    if let Some(t) = cli.tolerance {
        if !(t > 0.0) {
            return Err(CliError::Usage(format!("--tolerance {t} must be positive")));
        }
        cfg.run.tolerance = t;
    }
    match cli.command {
        Command::DefaultConfig => {
            print!("{}", Config::desk_default().to_toml());
            return Ok(());
        }
        Command::Report => return cmd_report(&cli.out),
        _ => {}
    }
    let name = cli.command.name();
    let mut ctx = Ctx {
        cfg,
        out: OutputDir::create(&cli.out)?,
        stages: Vec::new(),
        ledger: None,
    };
    let result = match cli.command {
        Command::Select => cmd_select(&mut ctx),
        Command::Sample => cmd_sample(&mut ctx),
        Command::Percolate => cmd_percolate(&mut ctx),
        Command::Build => cmd_build(&mut ctx),
        Command::Certify => cmd_certify(&mut ctx),
        Command::Evolve => cmd_evolve(&mut ctx),
        Command::Homogenize => cmd_homogenize(&mut ctx),
        Command::Report | Command::DefaultConfig => unreachable!(),
    };
    if let Err(e) = &result {
        ctx.stage(name, false, e.to_string());
    }
    ctx.finish(name)?;
    result
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
