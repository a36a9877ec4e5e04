//! Command-line front end: run a single flow, run an h-refinement study, or
//! check the solver against the exhaustive oracle.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};

use vpmcf::config::RunConfig;
use vpmcf::energy::PerimeterKind;
use vpmcf::flow::{run as flow_run, FlowTrajectory};
use vpmcf::geometry::{BinarySet, BoundaryCondition, GridDomain};
use vpmcf::mmsolver::{mm_step, StepConfig};
use vpmcf::oracle::brute_force_min;
use vpmcf::output::{study_summary, write_run_outputs, write_study_csv};
use vpmcf::Error;

const EXIT_CONFIG: u8 = 2;
const EXIT_IO: u8 = 3;
const EXIT_SOLVER: u8 = 4;

#[derive(Parser)]
#[command(name = "vpmcf", about = "Volume-preserving mean curvature flow simulator", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonRunArgs {
    /// Run configuration file (flat key = value format).
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Override the seed from the config file.
    #[arg(long)]
    seed: Option<u64>,
    /// Proceed even when sqrt(h) resolves fewer than 3 cells.
    #[arg(long)]
    override_resolution_guard: bool,
    /// Also write snapshot images as PGM next to the mask files.
    #[arg(long)]
    pgm: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Run one flow and write steps.csv, summary.json and mask snapshots.
    Run(CommonRunArgs),
    /// Run the same initial set across an h-ladder and compare.
    Study {
        #[command(flatten)]
        common: CommonRunArgs,
        /// Ladder entry; repeat the flag (at least twice). Overrides h_time.
        #[arg(long = "h", required = true, num_args = 1)]
        h_values: Vec<f64>,
    },
    /// Random small instances: minimizing-movements step vs exhaustive oracle.
    OracleTest {
        /// RNG seed.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Number of instances.
        #[arg(long, default_value_t = 200)]
        count: usize,
    },
}

fn error_kind(e: &Error) -> (&'static str, u8) {
    match e {
        Error::Io(_) => ("io", EXIT_IO),
        Error::Convergence { .. } | Error::BracketExpansion(_) | Error::Containment { .. } => {
            ("solver", EXIT_SOLVER)
        }
        _ => ("config", EXIT_CONFIG),
    }
}

fn fail(e: Error) -> ExitCode {
    let (kind, code) = error_kind(&e);
    eprintln!(
        "{}",
        serde_json::json!({ "error": e.to_string(), "kind": kind, "code": code })
    );
    ExitCode::from(code)
}

fn load_config(args: &CommonRunArgs) -> Result<RunConfig, Error> {
    let mut cfg = RunConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if args.override_resolution_guard {
        cfg.override_resolution_guard = true;
    }
    Ok(cfg)
}

fn execute_run(cfg: &RunConfig) -> Result<FlowTrajectory, Error> {
    let e0 = cfg.build_initial_set()?;
    flow_run(&e0, &cfg.flow_config()?)
}

fn cmd_run(args: CommonRunArgs) -> Result<(), Error> {
    let cfg = load_config(&args)?;
    let tr = execute_run(&cfg)?;
    let summary = write_run_outputs(&cfg, &tr, &args.out, args.pgm)?;
    println!(
        "{} steps, final perimeter {:.6}, final isoperimetric ratio {:.6}",
        summary.num_steps, summary.final_perimeter, summary.ball_convergence.final_ratio
    );
    Ok(())
}

fn cmd_study(common: CommonRunArgs, h_values: Vec<f64>) -> Result<(), Error> {
    if h_values.len() < 2 {
        return Err(Error::InvalidConfig(
            "a study needs at least two --h values".into(),
        ));
    }
    let base = load_config(&common)?;
    let mut runs = Vec::new();
    for (i, &h) in h_values.iter().enumerate() {
        let mut cfg = base.clone();
        cfg.h_time = h;
        let tr = execute_run(&cfg)?;
        let dir = common.out.join(format!("run_h{i}"));
        write_run_outputs(&cfg, &tr, &dir, common.pgm)?;
        runs.push((h, tr));
    }
    let study = study_summary(&runs)?;
    std::fs::create_dir_all(&common.out)?;
    let mut csv = Vec::new();
    write_study_csv(&study, &mut csv)?;
    std::fs::write(common.out.join("study.csv"), csv)?;
    let json = serde_json::to_string_pretty(&study)
        .map_err(|e| Error::InvalidConfig(format!("study encoding: {e}")))?;
    std::fs::write(common.out.join("study_summary.json"), json + "\n")?;
    println!("{} ladder runs compared at {} times", runs.len(), study.rows.len());
    Ok(())
}

fn cmd_oracle_test(seed: u64, count: usize) -> Result<bool, Error> {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut failures = 0usize;
    for trial in 0..count {
        let n = if trial % 2 == 0 { 4 } else { 5 };
        let d = GridDomain::new(n, n, 1.0, BoundaryCondition::Neumann)?;
        let f = loop {
            let mask: Vec<bool> = (0..d.cells()).map(|_| rng.gen_bool(0.5)).collect();
            let k = mask.iter().filter(|&&b| b).count();
            if k >= 3 && k <= d.cells() - 3 {
                break BinarySet::new(d, mask)?;
            }
        };
        let h = [0.25, 0.5, 1.0][trial % 3];
        let oracle = brute_force_min(&f, h, f.count())?;
        let mut cfg = StepConfig::new(h, PerimeterKind::Anisotropic4)?;
        cfg.inner_tol = 5e-4;
        cfg.inner_max_iters = 60_000;
        cfg.lambda_tol = 0;
        let out = mm_step(&f, &cfg)?;
        let tol = cfg.inner_tol + out.epsilon_fix() + 1e-9;
        let ok = out.energy <= oracle.best_energy + tol;
        let mask_match = oracle.ties > 1 || out.set == oracle.best_mask;
        println!(
            "instance {trial:04}: {} energy {:.9} oracle {:.9} ties {} mask_match {}",
            if ok { "pass" } else { "FAIL" },
            out.energy,
            oracle.best_energy,
            oracle.ties,
            mask_match
        );
        if !ok {
            failures += 1;
        }
    }
    println!("{} of {count} instances passed", count - failures);
    Ok(failures == 0)
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    match cli.command {
        Command::Run(args) => match cmd_run(args) {
            Ok(()) => ExitCode::SUCCESS,
            Err(e) => fail(e),
        },
        Command::Study { common, h_values } => match cmd_study(common, h_values) {
            Ok(()) => ExitCode::SUCCESS,
            Err(e) => fail(e),
        },
        Command::OracleTest { seed, count } => match cmd_oracle_test(seed, count) {
            Ok(true) => ExitCode::SUCCESS,
            Ok(false) => ExitCode::FAILURE,
            Err(e) => fail(e),
        },
    }
}
