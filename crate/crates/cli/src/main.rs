//! `sdot1`: semi-discrete W₁ transport from the command line.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use sdot1::bounds::{
    blur_error_bound, quantization_error_bound, quantization_error_exact,
    DEFAULT_ASSIGNMENT_MASS_TOL,
};
use sdot1::geometry::DEFAULT_MAX_K;
use sdot1::measures::{
    check_balance, load_density, load_measure_csv, read_pgm, write_measure_csv, write_pgm,
    DEFAULT_BALANCE_TOL,
};
use sdot1::multiscale::{
    build_hierarchy, quantize, solve_multiscale_logged, HierarchyOptions, LevelLog, LevelSummary,
};
use sdot1::optimizer::{minimize_objective, IterationRecord};
use sdot1::oracle::{discrete_wp, DiscreteTransportProblem};
use sdot1::render::{render_svg, PartitionView, RenderOptions};
use sdot1::report::{GofSummary, RunManifest, SolveRecord, StoredPartition};
use sdot1::{
    Bounds, DensityGrid, DiscreteMeasure, Error, Objective, SolveReport, SolverConfig,
    SubpixelPolicy,
};

const EXIT_INPUT: u8 = 2;
const EXIT_NOT_CONVERGED: u8 = 3;

#[derive(Parser)]
#[command(
    name = "sdot1",
    version,
    about = "Semi-discrete optimal transport for the Euclidean cost"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Optimal partition of a density among weighted sites, with its W₁ cost.
    Solve(SolveArgs),
    /// Goodness-of-fit partition of a density against a sample (mass 1/n per point).
    Gof(GofArgs),
    /// Weighted K-means discretisation of a density into a site CSV.
    Quantize(QuantizeArgs),
    /// Draws a saved partition as SVG.
    Render(RenderArgs),
    /// Exact discrete transport between two site CSVs.
    #[command(hide = true)]
    Oracle(OracleArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Switch {
    On,
    Off,
}

#[derive(Clone, Copy)]
struct Subpixels(SubpixelPolicy);

fn parse_subpixels(s: &str) -> Result<Subpixels, String> {
    if s == "auto" {
        return Ok(Subpixels(SubpixelPolicy::Auto {
            max_k: DEFAULT_MAX_K,
        }));
    }
    match s.parse::<usize>() {
        Ok(k) if k >= 1 => Ok(Subpixels(SubpixelPolicy::Fixed(k))),
        _ => Err(format!("expected `auto` or a positive integer, got `{s}`")),
    }
}

fn parse_bounds(s: &str) -> Result<Bounds, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

#[derive(Args)]
struct DensityArgs {
    /// Source density: PGM image, or CSV grid with a JSON sidecar.
    #[arg(long)]
    density: PathBuf,
    /// Domain `x0,y0,x1,y1` of the image; defaults to the unit-aspect box of the image.
    #[arg(long, value_parser = parse_bounds)]
    bounds: Option<Bounds>,
}

#[derive(Args)]
struct SolverArgs {
    /// Stop once the mistransported mass is at most this.
    #[arg(long, default_value_t = 0.05)]
    epsilon: f64,
    /// Subpixels per pixel side: `auto` or a fixed factor.
    #[arg(long, default_value = "auto", value_parser = parse_subpixels)]
    subpixels: Subpixels,
    /// Coarse-to-fine warm start.
    #[arg(long, value_enum, default_value = "on")]
    multiscale: Switch,
    /// Seed for the coarsening.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1000)]
    max_iterations: usize,
    /// Maximum relative mass gap between the density and the sites.
    #[arg(long, default_value_t = DEFAULT_BALANCE_TOL)]
    balance_tol: f64,
    /// Rescale the site masses to the density's total mass.
    #[arg(long)]
    autonormalize: bool,
    /// JSON report (stdout if omitted).
    #[arg(long)]
    out: Option<PathBuf>,
    /// SVG picture of the partition.
    #[arg(long)]
    svg: Option<PathBuf>,
    /// Subpixel assignment as PGM (gray level = site index).
    #[arg(long)]
    assignment: Option<PathBuf>,
    /// Coarsening hierarchy as JSON.
    #[arg(long)]
    dump_hierarchy: Option<PathBuf>,
    /// Iteration log on stderr.
    #[arg(short, long)]
    verbose: bool,
}

#[derive(Args)]
struct SolveArgs {
    #[command(flatten)]
    density: DensityArgs,
    /// Sites CSV with header `x,y,mass`.
    #[arg(long)]
    nu: PathBuf,
    /// Add the blur bound for the sites spread over one pixel to `error_bounds`.
    #[arg(long)]
    error_bounds: bool,
    /// Density the sites were quantized from; adds the exact quantization error and its assignment bound.
    #[arg(long)]
    nu_density: Option<PathBuf>,
    #[command(flatten)]
    solver: SolverArgs,
}

#[derive(Args)]
struct GofArgs {
    #[command(flatten)]
    density: DensityArgs,
    /// Sample CSV with header `x,y` (a `mass` column is ignored).
    #[arg(long)]
    sample: PathBuf,
    #[command(flatten)]
    solver: SolverArgs,
}

#[derive(Args)]
struct QuantizeArgs {
    #[command(flatten)]
    density: DensityArgs,
    /// Number of sites.
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output CSV (`x,y,mass`).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RenderArgs {
    /// Report written by `solve` or `gof`.
    #[arg(long = "in", conflicts_with = "assignment")]
    input: Option<PathBuf>,
    /// Assignment PGM written by `solve --assignment`.
    #[arg(long, requires = "nu")]
    assignment: Option<PathBuf>,
    /// Sites CSV matching the assignment PGM.
    #[arg(long)]
    nu: Option<PathBuf>,
    /// Domain of the assignment PGM; defaults to its unit-aspect box.
    #[arg(long, value_parser = parse_bounds)]
    bounds: Option<Bounds>,
    /// Omit the centroid-to-site arrows.
    #[arg(long)]
    no_arrows: bool,
    #[arg(long)]
    svg: PathBuf,
}

#[derive(Args)]
struct OracleArgs {
    #[arg(long)]
    source: PathBuf,
    #[arg(long)]
    target: PathBuf,
    /// Order of the Wasserstein distance.
    #[arg(long, default_value_t = 1.0)]
    p: f64,
}

/// A failure together with its exit status.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::NotConverged(_) => EXIT_NOT_CONVERGED,
            Error::NonFinite { .. } => 1,
            _ => EXIT_INPUT,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

type CmdResult = Result<(), Failure>;

fn write_text(path: &Path, text: &str) -> Result<(), Failure> {
    std::fs::write(path, text).map_err(|source| {
        Error::Io {
            path: path.to_path_buf(),
            source,
        }
        .into()
    })
}

fn path_string(p: &Path) -> String {
    p.display().to_string()
}

fn load_grid(args: &DensityArgs) -> Result<DensityGrid, Failure> {
    Ok(load_density(&args.density, args.bounds)?.0)
}

fn solver_config(args: &SolverArgs) -> Result<SolverConfig, Failure> {
    let cfg = SolverConfig {
        epsilon: args.epsilon,
        max_iterations: args.max_iterations,
        subpixels: args.subpixels.0,
        balance_tol: args.balance_tol,
        ..SolverConfig::default()
    };
    cfg.validate()?;
    Ok(cfg)
}

fn balance(
    grid: &DensityGrid,
    nu: DiscreteMeasure,
    args: &SolverArgs,
) -> Result<DiscreteMeasure, Failure> {
    if args.autonormalize {
        return Ok(nu.normalized(grid.total_mass())?);
    }
    let b = check_balance(grid, &nu, args.balance_tol);
    if !b.ok {
        return Err(Failure {
            code: EXIT_INPUT,
            message: format!(
                "density mass {} and site mass {} differ by {:.3e} (relative), above --balance-tol {}; pass --autonormalize to rescale the sites",
                b.mu_mass, b.nu_mass, b.relative_gap, args.balance_tol
            ),
        });
    }
    Ok(nu)
}

struct Solved {
    report: SolveReport,
    levels: Vec<LevelSummary>,
    evaluations: usize,
}

fn run_solver(
    grid: &DensityGrid,
    nu: &DiscreteMeasure,
    cfg: &SolverConfig,
    args: &SolverArgs,
) -> Result<Solved, Failure> {
    let verbose = args.verbose;
    let mut log = |level: usize, r: &IterationRecord| {
        eprintln!(
            "level {level} iter {:>4} phi {:.9} mistransported {:.3e} step {:.3e}",
            r.iter, r.phi, r.mistransported_mass, r.step_size
        )
    };
    if args.multiscale == Switch::On {
        let opts = HierarchyOptions {
            seed: args.seed,
            ..Default::default()
        };
        let log: Option<LevelLog<'_>> = if verbose { Some(&mut log) } else { None };
        let m = solve_multiscale_logged(grid, nu, cfg, &opts, log)?;
        Ok(Solved {
            evaluations: m.total_evaluations,
            report: m.finest,
            levels: m.levels,
        })
    } else {
        let objective =
            Objective::with_strategy(grid, nu, cfg.subpixels.resolve(nu.len(), grid), cfg.query)?;
        let mut tagged = |r: &IterationRecord| log(0, r);
        let log: Option<&mut dyn FnMut(&IterationRecord)> =
            if verbose { Some(&mut tagged) } else { None };
        let report = minimize_objective(&objective, &vec![0.0; nu.len()], cfg, log)?;
        let level = LevelSummary {
            level: 0,
            size: nu.len(),
            subpixels: report.subpixels,
            iterations: report.iterations,
            evaluations: report.evaluations,
            converged: report.converged,
            mistransported_mass: report.final_mistransported_mass,
            w1_cost: report.w1_cost,
            gap_to_finer: None,
        };
        Ok(Solved {
            evaluations: report.evaluations,
            report,
            levels: vec![level],
        })
    }
}

fn manifest(
    command: &str,
    inputs: BTreeMap<String, String>,
    cfg: &SolverConfig,
    args: &SolverArgs,
) -> RunManifest {
    let config = serde_json::json!({
        "solver": cfg,
        "multiscale": args.multiscale == Switch::On,
        "hierarchy": HierarchyOptions { seed: args.seed, ..Default::default() },
        "autonormalize": args.autonormalize,
    });
    RunManifest {
        command: command.into(),
        inputs,
        config,
        seed: args.seed,
        version: env!("CARGO_PKG_VERSION").into(),
        wall_time_s: 0.0,
    }
}

fn write_outputs(
    record: &SolveRecord,
    grid: &DensityGrid,
    nu: &DiscreteMeasure,
    report: &SolveReport,
    args: &SolverArgs,
) -> CmdResult {
    let p = &report.partition;
    if let Some(path) = &args.assignment {
        write_pgm(path, &p.to_pgm())?;
    }
    if let Some(path) = &args.svg {
        let view = PartitionView {
            bounds: grid.bounds(),
            width: p.width,
            height: p.height,
            assignment: &p.assignment,
            sites: nu.points(),
            masses: nu.masses(),
        };
        write_text(path, &render_svg(&view, &RenderOptions::default())?)?;
    }
    if let Some(path) = &args.dump_hierarchy {
        let opts = HierarchyOptions {
            seed: args.seed,
            ..Default::default()
        };
        let h = build_hierarchy(nu, &opts)?;
        let text = serde_json::to_string_pretty(&h).map_err(|e| Error::Malformed(e.to_string()))?;
        write_text(path, &text)?;
    }
    let json = record.to_json()?;
    match &args.out {
        Some(path) => write_text(path, &json)?,
        None => println!("{json}"),
    }
    if !record.converged {
        return Err(Failure {
            code: EXIT_NOT_CONVERGED,
            message: format!(
                "not converged ({:?}): mistransported mass {:.3e} > epsilon {}",
                record.termination_reason, record.mistransported_mass, record.epsilon
            ),
        });
    }
    Ok(())
}

fn cmd_solve(args: SolveArgs) -> CmdResult {
    let start = Instant::now();
    let grid = load_grid(&args.density)?;
    let nu = balance(&grid, load_measure_csv(&args.nu, true)?, &args.solver)?;
    let cfg = solver_config(&args.solver)?;
    let solved = run_solver(&grid, &nu, &cfg, &args.solver)?;

    let mut inputs = BTreeMap::from([
        ("density".to_string(), path_string(&args.density.density)),
        ("nu".to_string(), path_string(&args.nu)),
    ]);
    let mut bounds = Vec::new();
    if args.error_bounds {
        bounds.push(blur_error_bound(&nu, grid.side())?);
    }
    if let Some(path) = &args.nu_density {
        inputs.insert("nu_density".into(), path_string(path));
        let fine = load_density(path, args.density.bounds)?
            .0
            .normalized(nu.total_mass())?;
        let opts = HierarchyOptions {
            seed: args.solver.seed,
            ..Default::default()
        };
        let exact = quantization_error_exact(&fine, &nu, &cfg, &opts)?;
        bounds.push(exact);
        let k = cfg.subpixels.resolve(nu.len(), &fine);
        let objective = Objective::with_strategy(&fine, &nu, k, cfg.query)?;
        let fit = minimize_objective(&objective, &vec![0.0; nu.len()], &cfg, None)?;
        let p = &fit.partition;
        bounds.push(quantization_error_bound(
            &fine,
            &nu,
            &p.assignment,
            p.k,
            cfg.epsilon.max(DEFAULT_ASSIGNMENT_MASS_TOL),
        )?);
    }

    let mut m = manifest("solve", inputs, &cfg, &args.solver);
    m.wall_time_s = start.elapsed().as_secs_f64();
    let mut record = SolveRecord::new(
        m,
        &grid,
        &nu,
        cfg.epsilon,
        &solved.report,
        solved.levels,
        solved.evaluations,
    );
    record.error_bounds = bounds;
    write_outputs(&record, &grid, &nu, &solved.report, &args.solver)
}

fn cmd_gof(args: GofArgs) -> CmdResult {
    let start = Instant::now();
    let grid = load_grid(&args.density)?;
    let sample = load_measure_csv(&args.sample, false)?;
    let nu = DiscreteMeasure::uniform(sample.points().to_vec(), grid.total_mass())?;
    let cfg = solver_config(&args.solver)?;
    let solved = run_solver(&grid, &nu, &cfg, &args.solver)?;
    let inputs = BTreeMap::from([
        ("density".to_string(), path_string(&args.density.density)),
        ("sample".to_string(), path_string(&args.sample)),
    ]);
    let mut m = manifest("gof", inputs, &cfg, &args.solver);
    m.wall_time_s = start.elapsed().as_secs_f64();
    let mut record = SolveRecord::new(
        m,
        &grid,
        &nu,
        cfg.epsilon,
        &solved.report,
        solved.levels,
        solved.evaluations,
    );
    record.gof = Some(GofSummary::from_partition(&grid, &solved.report.partition));
    write_outputs(&record, &grid, &nu, &solved.report, &args.solver)
}

fn cmd_quantize(args: QuantizeArgs) -> CmdResult {
    let grid = load_grid(&args.density)?;
    let nu = quantize(&grid, args.n, args.seed)?;
    write_measure_csv(&args.out, &nu)?;
    Ok(())
}

fn cmd_render(args: RenderArgs) -> CmdResult {
    let opts = RenderOptions {
        arrows: !args.no_arrows,
        ..Default::default()
    };
    let svg = match (&args.input, &args.assignment, &args.nu) {
        (Some(input), _, _) => {
            let text = std::fs::read_to_string(input).map_err(|source| Error::Io {
                path: input.clone(),
                source,
            })?;
            let stored = StoredPartition::from_json(&text)?;
            let (assignment, points, masses) = stored.unpack()?;
            render_svg(&stored.view(&assignment, &points, &masses), &opts)?
        }
        (None, Some(pgm_path), Some(nu_path)) => {
            let pgm = read_pgm(pgm_path)?;
            let nu = load_measure_csv(nu_path, false)?;
            let assignment: Vec<u32> = pgm
                .data
                .iter()
                .map(|&v| {
                    if v == pgm.maxval {
                        sdot1::geometry::NONE
                    } else {
                        v
                    }
                })
                .collect();
            let bounds = args
                .bounds
                .unwrap_or_else(|| Bounds::unit_aspect(pgm.width, pgm.height));
            let view = PartitionView {
                bounds,
                width: pgm.width,
                height: pgm.height,
                assignment: &assignment,
                sites: nu.points(),
                masses: nu.masses(),
            };
            render_svg(&view, &opts)?
        }
        _ => {
            return Err(Failure {
                code: EXIT_INPUT,
                message: "give --in REPORT or --assignment PGM with --nu CSV".into(),
            });
        }
    };
    write_text(&args.svg, &svg)
}

fn cmd_oracle(args: OracleArgs) -> CmdResult {
    let source = load_measure_csv(&args.source, false)?;
    let target = load_measure_csv(&args.target, false)?;
    let sol = discrete_wp(&DiscreteTransportProblem::new(source, target)?, args.p)?;
    let text = serde_json::to_string_pretty(&sol).map_err(|e| Error::Malformed(e.to_string()))?;
    println!("{text}");
    Ok(())
}

fn configure_threads() -> Result<(), Failure> {
    let Ok(value) = std::env::var("SDOT1_THREADS") else {
        return Ok(());
    };
    let threads: usize = value
        .parse()
        .ok()
        .filter(|&t| t >= 1)
        .ok_or_else(|| Failure {
            code: EXIT_INPUT,
            message: format!("SDOT1_THREADS must be a positive integer, got `{value}`"),
        })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| Failure {
            code: 1,
            message: format!("thread pool: {e}"),
        })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = configure_threads().and_then(|()| match cli.command {
        Command::Solve(a) => cmd_solve(a),
        Command::Gof(a) => cmd_gof(a),
        Command::Quantize(a) => cmd_quantize(a),
        Command::Render(a) => cmd_render(a),
        Command::Oracle(a) => cmd_oracle(a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("sdot1: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
