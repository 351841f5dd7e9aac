//! `privgame`: construct utility-optimal obfuscation mechanisms and run
//! the grid-world evaluation scenarios.

use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use privgame::geo::Grid;
use privgame::harness::{parse_ladder, write_csv, CsvRecord, ExperimentConfig, Harness};
use privgame::mechanism::{
    self, max_distortion, optimal_differential, optimal_differential_thresholded,
    optimal_distortion, optimal_joint, ApproxOptions, Objective, ProgramSpec,
};
use privgame::model::{LabelSpace, Mechanism, MetricSet, Prior};

#[derive(Parser)]
#[command(name = "privgame", version, about = "Utility-optimal data obfuscation under distortion and differential privacy")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Construct an optimal obfuscation mechanism from a prior and metric tables
    Mechanism(MechanismArgs),
    /// Run an evaluation scenario over seeded synthetic users
    Experiment(ExperimentArgs),
}

#[derive(Args)]
struct MechanismArgs {
    #[command(subcommand)]
    kind: MechanismKind,
}

#[derive(Clone, Copy, ValueEnum)]
enum CliObjective {
    Avg,
    Worst,
}

#[derive(Args)]
struct MechanismCommon {
    /// Prior JSON: {"secrets": [...], "probs": [...]}
    #[arg(long)]
    prior: PathBuf,
    /// Metric tables JSON: {"cost": [[..]], "privacy_dist": [[..]], "disting": [[..]], "support_dist": [[..]]?}
    #[arg(long)]
    metrics: PathBuf,
    /// Observable labels JSON array; defaults to the secret labels (perturbation)
    #[arg(long)]
    observables: Option<PathBuf>,
    /// Drop differential constraints for secret pairs beyond this distinguishability radius
    #[arg(long)]
    prune_eps: Option<f64>,
    /// Fix mechanism entries to zero beyond this secret/observable ground distance
    #[arg(long)]
    prune_support: Option<f64>,
    /// Write the mechanism JSON here (stdout when omitted)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Dump the assembled linear program in LP format
    #[arg(long)]
    dump_lp: Option<PathBuf>,
}

#[derive(Subcommand)]
enum MechanismKind {
    /// Minimum-cost mechanism with distortion privacy at least --dm
    Distortion {
        #[command(flatten)]
        common: MechanismCommon,
        #[arg(long)]
        dm: f64,
        #[arg(long, value_enum, default_value = "avg")]
        objective: CliObjective,
    },
    /// Minimum-cost mechanism under metric differential privacy --eps
    Differential {
        #[command(flatten)]
        common: MechanismCommon,
        #[arg(long)]
        eps: f64,
    },
    /// Differential privacy with a flat factor inside the --deps threshold
    DifferentialThresh {
        #[command(flatten)]
        common: MechanismCommon,
        #[arg(long)]
        eps: f64,
        #[arg(long)]
        deps: f64,
    },
    /// Joint distortion + differential guarantees
    Joint {
        #[command(flatten)]
        common: MechanismCommon,
        #[arg(long)]
        dm: f64,
        #[arg(long)]
        eps: f64,
    },
    /// Print the largest achievable distortion bound for this prior
    Dmax {
        #[command(flatten)]
        common: MechanismCommon,
    },
}

#[derive(Args)]
struct ExperimentArgs {
    #[command(subcommand)]
    kind: ExperimentKind,
}

#[derive(Args)]
struct ExperimentCommon {
    /// Grid JSON: {"nx": 8, "ny": 6, "width_km": 6, "height_km": 4}
    #[arg(long)]
    grid: Option<PathBuf>,
    /// Number of seeded synthetic users
    #[arg(long, default_value_t = 10)]
    users: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Visits per synthetic trace
    #[arg(long, default_value_t = 400)]
    trace_len: usize,
    /// Additive smoothing for the trace priors (0 = maximum likelihood)
    #[arg(long, default_value_t = 0.0)]
    smoothing: f64,
    /// Output CSV path
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum ExperimentKind {
    /// Differential vs distortion vs joint at d_m tied to the differential mechanism
    Scenario1 {
        #[command(flatten)]
        common: ExperimentCommon,
        /// start:end:step
        #[arg(long, default_value = "0.15:0.9:0.15")]
        eps_ladder: String,
    },
    /// Distortion bounds pushed above what the differential mechanism achieves
    Scenario2 {
        #[command(flatten)]
        common: ExperimentCommon,
        #[arg(long, default_value = "0.15:0.9:0.15")]
        eps_ladder: String,
        /// Comma-separated d_m offsets in km
        #[arg(long, default_value = "0,0.1,0.2")]
        dm_offsets: String,
    },
    /// Cartesian sweep over independent eps and d_m thresholds
    Scenario3 {
        #[command(flatten)]
        common: ExperimentCommon,
        #[arg(long, default_value = "0.2:1.0:0.2")]
        eps_ladder: String,
        /// start:end:step; capped at each user's maximum per run
        #[arg(long, default_value = "0.5:10:0.5")]
        dm_ladder: String,
    },
    /// Informed-adversary study with a sharpened attack prior
    Prior {
        #[command(flatten)]
        common: ExperimentCommon,
        #[arg(long, default_value = "0.15:0.9:0.15")]
        eps_ladder: String,
        /// Boost the k most probable cells
        #[arg(long, default_value_t = 2)]
        sharpen_k: usize,
        #[arg(long, default_value_t = 4.0)]
        sharpen_beta: f64,
    },
    /// Constraint-pruning radius sweep for the joint mechanism
    Approx {
        #[command(flatten)]
        common: ExperimentCommon,
        #[arg(long, default_value_t = 0.4)]
        eps: f64,
        #[arg(long, default_value_t = 0.4)]
        dm: f64,
        /// start:end:step in km; the grid diameter is appended
        #[arg(long, default_value = "1:5:1")]
        radius_ladder: String,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<(), String> {
    match cli.command {
        Command::Mechanism(args) => run_mechanism(args),
        Command::Experiment(args) => run_experiment(args),
    }
}

struct MechanismInputs {
    prior: Prior,
    observables: LabelSpace,
    metrics: MetricSet,
    approx: ApproxOptions,
}

fn load_inputs(common: &MechanismCommon) -> Result<MechanismInputs, String> {
    let prior_text = fs::read_to_string(&common.prior)
        .map_err(|e| format!("reading {}: {e}", common.prior.display()))?;
    let prior = Prior::from_json_str(&prior_text).map_err(|e| e.to_string())?;
    let metrics_text = fs::read_to_string(&common.metrics)
        .map_err(|e| format!("reading {}: {e}", common.metrics.display()))?;
    let metrics = MetricSet::from_json_str(&metrics_text).map_err(|e| e.to_string())?;
    let observables = match &common.observables {
        Some(path) => {
            let text =
                fs::read_to_string(path).map_err(|e| format!("reading {}: {e}", path.display()))?;
            let labels: Vec<String> = serde_json::from_str(&text)
                .map_err(|e| format!("observables must be a JSON string array: {e}"))?;
            LabelSpace::observables(labels).map_err(|e| e.to_string())?
        }
        None => prior
            .space()
            .with_role(privgame::model::SpaceRole::Observables),
    };
    Ok(MechanismInputs {
        prior,
        observables,
        metrics,
        approx: ApproxOptions {
            radius_disting: common.prune_eps,
            radius_support: common.prune_support,
        },
    })
}

fn emit_mechanism(mech: &Mechanism, out: &Option<PathBuf>) -> Result<(), String> {
    let text = mech.to_json_string();
    match out {
        Some(path) => fs::write(path, text).map_err(|e| format!("writing {}: {e}", path.display())),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn maybe_dump_lp(
    inputs: &MechanismInputs,
    spec: &ProgramSpec,
    path: &Option<PathBuf>,
) -> Result<(), String> {
    if let Some(path) = path {
        let mut buf = Vec::new();
        mechanism::write_lp(
            &inputs.prior,
            &inputs.observables,
            &inputs.metrics,
            spec,
            &inputs.approx,
            &mut buf,
        )
        .map_err(|e| e.to_string())?;
        fs::write(path, buf).map_err(|e| format!("writing {}: {e}", path.display()))?;
    }
    Ok(())
}

fn run_mechanism(args: MechanismArgs) -> Result<(), String> {
    match args.kind {
        MechanismKind::Distortion {
            common,
            dm,
            objective,
        } => {
            let inputs = load_inputs(&common)?;
            let objective = match objective {
                CliObjective::Avg => Objective::Average,
                CliObjective::Worst => Objective::Worst,
            };
            maybe_dump_lp(&inputs, &ProgramSpec::Distortion { d_m: dm, objective }, &common.dump_lp)?;
            let mech = optimal_distortion(
                &inputs.prior,
                &inputs.observables,
                &inputs.metrics,
                dm,
                objective,
                &inputs.approx,
            )
            .map_err(|e| e.to_string())?;
            emit_mechanism(&mech, &common.out)
        }
        MechanismKind::Differential { common, eps } => {
            let inputs = load_inputs(&common)?;
            maybe_dump_lp(&inputs, &ProgramSpec::Differential { eps_m: eps }, &common.dump_lp)?;
            let mech = optimal_differential(
                &inputs.prior,
                &inputs.observables,
                &inputs.metrics,
                eps,
                &inputs.approx,
            )
            .map_err(|e| e.to_string())?;
            emit_mechanism(&mech, &common.out)
        }
        MechanismKind::DifferentialThresh { common, eps, deps } => {
            let inputs = load_inputs(&common)?;
            maybe_dump_lp(
                &inputs,
                &ProgramSpec::DifferentialThresholded {
                    eps_m: eps,
                    d_eps_m: deps,
                },
                &common.dump_lp,
            )?;
            let mech = optimal_differential_thresholded(
                &inputs.prior,
                &inputs.observables,
                &inputs.metrics,
                eps,
                deps,
                &inputs.approx,
            )
            .map_err(|e| e.to_string())?;
            emit_mechanism(&mech, &common.out)
        }
        MechanismKind::Joint { common, dm, eps } => {
            let inputs = load_inputs(&common)?;
            maybe_dump_lp(
                &inputs,
                &ProgramSpec::Joint { d_m: dm, eps_m: eps },
                &common.dump_lp,
            )?;
            let mech = optimal_joint(
                &inputs.prior,
                &inputs.observables,
                &inputs.metrics,
                dm,
                eps,
                &inputs.approx,
            )
            .map_err(|e| e.to_string())?;
            emit_mechanism(&mech, &common.out)
        }
        MechanismKind::Dmax { common } => {
            let inputs = load_inputs(&common)?;
            maybe_dump_lp(&inputs, &ProgramSpec::MaxDistortion, &common.dump_lp)?;
            let dmax = max_distortion(&inputs.prior, &inputs.observables, &inputs.metrics)
                .map_err(|e| e.to_string())?;
            println!("{dmax}");
            Ok(())
        }
    }
}

fn build_harness(common: &ExperimentCommon) -> Result<(Harness, Vec<String>), String> {
    let grid = match &common.grid {
        Some(path) => {
            let text =
                fs::read_to_string(path).map_err(|e| format!("reading {}: {e}", path.display()))?;
            Grid::from_json_str(&text).map_err(|e| e.to_string())?
        }
        None => ExperimentConfig::default().grid,
    };
    let config = ExperimentConfig {
        grid,
        num_users: common.users,
        seed: common.seed,
        trace_len: common.trace_len,
        smoothing: common.smoothing,
    };
    let comments = vec![format!(
        "config: grid={}x{} area={}x{}km users={} seed={} trace_len={} smoothing={}",
        grid.nx(),
        grid.ny(),
        grid.nx() as f64 * grid.cell_width_km(),
        grid.ny() as f64 * grid.cell_height_km(),
        config.num_users,
        config.seed,
        config.trace_len,
        config.smoothing
    )];
    let harness = Harness::new(config).map_err(|e| e.to_string())?;
    Ok((harness, comments))
}

fn write_rows<R: CsvRecord>(rows: &[R], comments: &[String], out: &PathBuf) -> Result<(), String> {
    let mut file =
        fs::File::create(out).map_err(|e| format!("creating {}: {e}", out.display()))?;
    write_csv(rows, comments, &mut file).map_err(|e| format!("writing {}: {e}", out.display()))?;
    file.flush().map_err(|e| e.to_string())?;
    eprintln!("wrote {} rows to {}", rows.len(), out.display());
    Ok(())
}

fn run_experiment(args: ExperimentArgs) -> Result<(), String> {
    match args.kind {
        ExperimentKind::Scenario1 { common, eps_ladder } => {
            let (harness, comments) = build_harness(&common)?;
            let eps = parse_ladder(&eps_ladder).map_err(|e| e.to_string())?;
            let rows = harness.scenario1(&eps).map_err(|e| e.to_string())?;
            write_rows(&rows, &comments, &common.out)
        }
        ExperimentKind::Scenario2 {
            common,
            eps_ladder,
            dm_offsets,
        } => {
            let (harness, comments) = build_harness(&common)?;
            let eps = parse_ladder(&eps_ladder).map_err(|e| e.to_string())?;
            let offsets: Vec<f64> = dm_offsets
                .split(',')
                .map(|t| t.trim().parse::<f64>().map_err(|_| format!("bad offset '{t}'")))
                .collect::<Result<_, _>>()?;
            let rows = harness.scenario2(&eps, &offsets).map_err(|e| e.to_string())?;
            write_rows(&rows, &comments, &common.out)
        }
        ExperimentKind::Scenario3 {
            common,
            eps_ladder,
            dm_ladder,
        } => {
            let (harness, comments) = build_harness(&common)?;
            let eps = parse_ladder(&eps_ladder).map_err(|e| e.to_string())?;
            let dms = parse_ladder(&dm_ladder).map_err(|e| e.to_string())?;
            let rows = harness.scenario3(&eps, &dms).map_err(|e| e.to_string())?;
            write_rows(&rows, &comments, &common.out)
        }
        ExperimentKind::Prior {
            common,
            eps_ladder,
            sharpen_k,
            sharpen_beta,
        } => {
            let (harness, comments) = build_harness(&common)?;
            let eps = parse_ladder(&eps_ladder).map_err(|e| e.to_string())?;
            let rows = harness
                .prior_mismatch(&eps, sharpen_k, sharpen_beta)
                .map_err(|e| e.to_string())?;
            write_rows(&rows, &comments, &common.out)
        }
        ExperimentKind::Approx {
            common,
            eps,
            dm,
            radius_ladder,
        } => {
            let (harness, mut comments) = build_harness(&common)?;
            let mut radii = parse_ladder(&radius_ladder).map_err(|e| e.to_string())?;
            let diameter = harness.config.grid.diameter_km();
            if radii.last().is_none_or(|&r| r < diameter - 1e-9) {
                radii.push(diameter);
            }
            comments.push(format!(
                "host: {} {} (wall-clock timings are machine-specific)",
                std::env::consts::OS,
                std::env::consts::ARCH
            ));
            let rows = harness
                .approx_sweep(eps, dm, &radii)
                .map_err(|e| e.to_string())?;
            write_rows(&rows, &comments, &common.out)
        }
    }
}
