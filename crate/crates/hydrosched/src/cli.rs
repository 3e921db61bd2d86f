//! Command-line front end: the numbered experiment cases over the bundled
//! system, the two-stage study, and data validation.

use crate::io::{self, IoError, LoadLevel};
use crate::model::validate_system;
use crate::sddp::{steps_to_bits, EcVariant, SddpEngine, SolveMode, TrainingOptions};
use crate::twostage::{self, EcCase, TwoStageSpec};
use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::time::Instant;

#[derive(Parser)]
#[command(name = "hydrosched", about = "Hydrothermal scheduling policies under outflow rules")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Train and simulate one experiment case, writing report files.
    Run(RunArgs),
    /// Emit the two-stage future cost function and water values.
    Twostage(TwoStageArgs),
    /// Check system, rule and scenario files; nonzero exit on violations.
    Validate(ValidateArgs),
}

#[derive(Args)]
pub struct RunArgs {
    /// Experiment case, 1 through 6.
    #[arg(long)]
    pub case: usize,
    /// Mean demand level: 8000, 9000 or 10000.
    #[arg(long, default_value_t = 9000)]
    pub load_level: usize,
    /// Slack penalty; fixed per case except case 5.
    #[arg(long)]
    pub penalty: Option<f64>,
    /// Volume discretization steps for case 6: 10, 50 or 100.
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long, default_value_t = 400)]
    pub iterations: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value = "data")]
    pub data_dir: PathBuf,
    #[arg(long, default_value = "out")]
    pub out_dir: PathBuf,
    /// Simulation series after training.
    #[arg(long, default_value_t = 100)]
    pub series: usize,
    /// Explicit inflow grid; generated from the seed when absent.
    #[arg(long)]
    pub scenario_file: Option<PathBuf>,
    /// Worker thread cap; defaults to the machine.
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Args)]
pub struct TwoStageArgs {
    /// One of: none, min300, max250, statedep, nonconvex.
    #[arg(long)]
    pub case: String,
    #[arg(long, default_value_t = 10.0)]
    pub grid_step: f64,
    #[arg(long, default_value = "twostage.csv")]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct ValidateArgs {
    #[arg(long, default_value = "data")]
    pub data_dir: PathBuf,
    #[arg(long)]
    pub scenario_file: Option<PathBuf>,
    #[arg(long, default_value_t = 9000)]
    pub load_level: usize,
}

/// One row of the experiment matrix, with the per-case couplings resolved.
#[derive(Debug, Clone)]
pub struct CaseSpec {
    pub case: usize,
    pub load_level: LoadLevel,
    pub penalty: f64,
    pub variant: EcVariant,
    pub mode: SolveMode,
    pub steps: usize,
    pub iterations: usize,
    pub seed: u64,
    pub series: usize,
}

impl CaseSpec {
    /// Validates a requested combination against the experiment list:
    /// cases pin their variant, mode and (except case 5) penalty.
    pub fn build(args: &RunArgs) -> Result<CaseSpec, String> {
        let load_level = LoadLevel::from_mw(args.load_level)
            .ok_or_else(|| format!("load level {} not in {{8000, 9000, 10000}}", args.load_level))?;
        let (variant, mode) = match args.case {
            1 => (EcVariant::None, SolveMode::Sddp),
            2 | 3 | 4 => (EcVariant::IntervalSelection, SolveMode::Isddp),
            5 => (EcVariant::PiecewiseLinear, SolveMode::Isddp),
            6 => (EcVariant::None, SolveMode::Sddip),
            other => return Err(format!("case {other} not in 1..=6")),
        };
        let penalty = match (args.case, args.penalty) {
            (1 | 6, None) => 0.0,
            (1 | 6, Some(p)) if p == 0.0 => 0.0,
            (1 | 6, Some(p)) => return Err(format!("case {} has no slack penalty, got {p}", args.case)),
            (2, None) => 100.0,
            (3, None) => 5000.0,
            (4, None) => 10000.0,
            (2, Some(p)) if p == 100.0 => p,
            (3, Some(p)) if p == 5000.0 => p,
            (4, Some(p)) if p == 10000.0 => p,
            (2 | 3 | 4, Some(p)) => {
                return Err(format!("case {} pins its penalty, got {p}", args.case))
            }
            (5, p) => {
                let p = p.unwrap_or(100.0);
                if ![0.0, 100.0, 10000.0].contains(&p) {
                    return Err(format!("case 5 penalty must be one of 0, 100, 10000; got {p}"));
                }
                p
            }
            _ => unreachable!(),
        };
        if args.case == 5 && load_level != LoadLevel::L9000 {
            return Err("case 5 runs at the 9000 level only".into());
        }
        if args.case == 6 && load_level != LoadLevel::L9000 {
            return Err("case 6 runs at the 9000 level only".into());
        }
        let steps = match (args.case, args.steps) {
            (6, None) => 10,
            (6, Some(s)) if [10, 50, 100].contains(&s) => s,
            (6, Some(s)) => return Err(format!("case 6 steps must be 10, 50 or 100; got {s}")),
            (_, None) => 0,
            (_, Some(_)) => return Err("only case 6 takes --steps".into()),
        };
        Ok(CaseSpec {
            case: args.case,
            load_level,
            penalty,
            variant,
            mode,
            steps,
            iterations: args.iterations,
            seed: args.seed,
            series: args.series,
        })
    }

    pub fn training_options(&self) -> TrainingOptions {
        TrainingOptions {
            iterations: self.iterations,
            mode: self.mode,
            expansion_bits: if self.steps > 0 { steps_to_bits(self.steps) } else { 4 },
            seed: self.seed,
            forward_series: 1,
            relaxed_forward: false,
        }
    }
}

/// Exit codes: 0 success, 1 validation failure, 2 solver failure, 3 I/O.
pub fn run(cli: Cli) -> i32 {
    match cli.command {
        Command::Run(args) => run_case(args),
        Command::Twostage(args) => run_twostage(args),
        Command::Validate(args) => validate(args),
    }
}

fn io_fail(e: IoError) -> i32 {
    eprintln!("error: {e}");
    3
}

fn run_case(args: RunArgs) -> i32 {
    let spec = match CaseSpec::build(&args) {
        Ok(s) => s,
        Err(msg) => {
            eprintln!("error: {msg}");
            return 1;
        }
    };
    if let Some(n) = args.threads {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let started = Instant::now();

    let mut config = match io::load_system(&args.data_dir, spec.load_level) {
        Ok(c) => c,
        Err(e) => return io_fail(e),
    };
    config.ec_penalty_min = spec.penalty;
    config.ec_penalty_max = spec.penalty;

    let rules = if spec.variant == EcVariant::None {
        None
    } else {
        match io::load_rules(&args.data_dir, &config) {
            Ok(r) => Some(r),
            Err(e) => return io_fail(e),
        }
    };

    let scenarios = match &args.scenario_file {
        Some(path) => match io::load_scenarios(path, &config) {
            Ok(s) => s,
            Err(e) => return io_fail(e),
        },
        None => {
            let params = match io::load_scenario_params(&args.data_dir, &config) {
                Ok(p) => p,
                Err(e) => return io_fail(e),
            };
            io::generate_scenarios(&config, &params, spec.seed)
        }
    };
    let issues = scenarios.check_complete(&config);
    if !issues.is_empty() {
        for v in &issues {
            eprintln!("violation: {v}");
        }
        return 1;
    }

    let engine = match SddpEngine::new(&config, &scenarios, spec.variant, rules.as_ref()) {
        Ok(e) => e,
        Err(e) => {
            eprintln!("error: {e}");
            return 2;
        }
    };
    let options = spec.training_options();
    let (vf, log) = match engine.train(&options) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return 2;
        }
    };
    let sim = match engine.simulate(&vf, &options, spec.series) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            return 2;
        }
    };
    if let Err(e) = io::write_report(&args.out_dir, &config, &log, &sim) {
        return io_fail(e);
    }

    let zinf = log.last().map_or(f64::NAN, |r| r.zinf);
    let runtime = started.elapsed().as_secs_f64();
    println!("case  load_level  penalty_cost  horizon_months  zinf          runtime_s");
    println!(
        "{:<5} {:<11} {:<13} {:<15} {:<13.6e} {:.2}",
        spec.case,
        args.load_level,
        spec.penalty,
        config.horizon_months,
        zinf,
        runtime
    );
    0
}

fn run_twostage(args: TwoStageArgs) -> i32 {
    let Some(case) = EcCase::parse(&args.case) else {
        eprintln!(
            "error: unknown case '{}'; expected none, min300, max250, statedep or nonconvex",
            args.case
        );
        return 1;
    };
    if args.grid_step <= 0.0 {
        eprintln!("error: grid step must be positive");
        return 1;
    }
    let spec = TwoStageSpec::new(case);
    let mut grid = Vec::new();
    let mut v = 0.0;
    while v < spec.storage_cap + 1e-9 {
        grid.push(v.min(spec.storage_cap));
        v += args.grid_step;
    }
    let fcf = match twostage::fcf(&spec, &grid) {
        Ok(f) => f,
        Err(e) => {
            eprintln!("error: {e}");
            return 2;
        }
    };
    let wv = match twostage::water_values(&fcf, &grid) {
        Ok(w) => w,
        Err(e) => {
            eprintln!("error: {e}");
            return 2;
        }
    };
    if let Err(e) = io::write_twostage(&args.out, &grid, &fcf, &wv) {
        return io_fail(e);
    }
    // Flag any nonconvex kink in the emitted curve.
    let negatives = twostage::second_differences(&fcf)
        .iter()
        .filter(|d| **d < -1e-6)
        .count();
    println!(
        "case {} over {} grid points: {} negative second difference(s)",
        args.case,
        grid.len(),
        negatives
    );
    0
}

fn validate(args: ValidateArgs) -> i32 {
    let Some(level) = LoadLevel::from_mw(args.load_level) else {
        eprintln!("error: load level {} not in {{8000, 9000, 10000}}", args.load_level);
        return 1;
    };
    let config = match io::load_system(&args.data_dir, level) {
        Ok(c) => c,
        Err(e) => return io_fail(e),
    };
    let mut violations = validate_system(&config);
    match io::load_rules(&args.data_dir, &config) {
        Ok(_) => {}
        Err(e) => {
            eprintln!("error: {e}");
            return 1;
        }
    }
    if let Some(path) = &args.scenario_file {
        match io::load_scenarios(path, &config) {
            Ok(s) => violations.extend(s.check_complete(&config)),
            Err(e) => {
                eprintln!("error: {e}");
                return 1;
            }
        }
    }
    if violations.is_empty() {
        println!("ok");
        0
    } else {
        for v in &violations {
            println!("violation: {v}");
        }
        1
    }
}
