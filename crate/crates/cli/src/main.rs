//! Pipeline driver: simulate -> select -> train -> benchmark, plus
//! compensate for the correction stage.
//!
//! Stages communicate only through files (CSV and JSON), never through
//! shared memory, so any stage can be replaced by another tool that
//! speaks the same formats. Every subcommand echoes its resolved
//! parameters into a `config_resolved` sidecar; rerunning with those
//! values reproduces the outputs byte for byte. Diagnostics go to
//! stderr, data only to files.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use thermonet::dataset::{self, NodeTimeSeries, NormMode, Quantity};
use thermonet::error_chain::{drift_trace, write_drift_csv, write_offset_csv, KinematicChain};
use thermonet::models::{ModelKind, ModelSpec};
use thermonet::report::{self, BenchmarkReport, Protocol, TABLE_ORDER};
use thermonet::select::{build_plan, pearson_matrix_runs};
use thermonet::thermal::{make_run_suite, MachineConfig};
use thermonet::train::{
    generalised_protocol, random_search, specialised_protocol, write_best_configs, write_metrics,
    write_trial_log, BestConfigRow, MetricsRow, OptimConfig, SearchSpace, TrainError, TrialConfig,
    REPEAT_SEEDS,
};

#[derive(Debug, thiserror::Error)]
enum CliError {
    /// Bad invocation; exits 2 like clap's own usage errors.
    #[error("{0}")]
    Usage(String),
    /// Well-formed invocation over unusable data; exits 1.
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Sim(#[from] thermonet::thermal::SimError),
    #[error(transparent)]
    Dataset(#[from] thermonet::dataset::DatasetError),
    #[error(transparent)]
    Select(#[from] thermonet::select::SelectError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Report(#[from] thermonet::report::ReportError),
    #[error(transparent)]
    Chain(#[from] thermonet::error_chain::ErrorChainError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Parser)]
#[command(
    name = "thermonet",
    version,
    about = "Thermal field surrogates for machine tools: data generation, node selection, training, benchmarking, and drift compensation"
)]
struct Cli {
    /// RNG seed; overrides the THERMO_SEED env var (default 42).
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic run suite from a machine description.
    Simulate(SimulateArgs),
    /// Fit a correlation-based node selection plan on a run directory.
    Select(SelectArgs),
    /// Hyperparameter search plus repeated training under a protocol.
    Train(TrainArgs),
    /// Aggregate training metrics into benchmark tables.
    Benchmark(BenchmarkArgs),
    /// Turn a predicted thermal field into axis compensation offsets.
    Compensate(CompensateArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Machine description TOML; the embedded 29-node machine when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Number of runs; each yields one temperature and one heat-flux CSV.
    #[arg(long)]
    runs: usize,
    /// Output directory, created if missing.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SelectArgs {
    /// Directory of `<run>_temperature.csv` / `<run>_heat_flux.csv` files.
    #[arg(long)]
    data: PathBuf,
    /// Correlation threshold, strictly between 0 and 1.
    #[arg(long, default_value_t = 0.95)]
    tau: f64,
    /// Quantity whose runs the plan is fitted on.
    #[arg(long, value_enum, default_value_t = QuantityArg::Temperature)]
    quantity: QuantityArg,
    /// Plan output path (JSON).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// Directory of run CSVs produced by `simulate`.
    #[arg(long)]
    data: PathBuf,
    /// Architecture token (rnn, lstm, gru, bilstm, transformer, tcn) or "all".
    #[arg(long, default_value = "all")]
    arch: String,
    #[arg(long, value_enum, default_value_t = ProtocolArg::Specialised)]
    protocol: ProtocolArg,
    #[arg(long, value_enum, default_value_t = QuantityArg::Temperature)]
    quantity: QuantityArg,
    /// Search budget, written `trials=N`.
    #[arg(long, default_value = "trials=20")]
    search: String,
    /// Correlation threshold for the node selection stage.
    #[arg(long, default_value_t = 0.95)]
    tau: f64,
    #[arg(long, default_value_t = 30)]
    epochs: usize,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long, default_value_t = 10)]
    seq_len: usize,
    /// Pin the learning rate instead of searching it.
    #[arg(long)]
    lr: Option<f64>,
    /// Pin the weight decay instead of searching it.
    #[arg(long)]
    wd: Option<f64>,
    /// Pin the dropout rate instead of searching it.
    #[arg(long)]
    dropout: Option<f64>,
    /// Pin the hidden width instead of searching it.
    #[arg(long)]
    hidden: Option<usize>,
    /// Pin the layer count instead of searching it.
    #[arg(long)]
    layers: Option<usize>,
    /// Pin the attention head count (pin --hidden too so they divide).
    #[arg(long)]
    heads: Option<usize>,
    /// Output directory for metrics, best configs, and trial logs.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BenchmarkArgs {
    /// Directory holding `metrics_*` files written by `train`.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value_t = ProtocolArg::Specialised)]
    protocol: ProtocolArg,
    #[arg(long, value_enum, default_value_t = QuantityArg::Temperature)]
    quantity: QuantityArg,
    /// Output directory for report.txt, report.csv, best_configs.csv.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CompensateArgs {
    /// Predicted temperature field CSV: time column plus one column per node, kelvin.
    #[arg(long)]
    predictions: PathBuf,
    /// Kinematic chain TOML; the embedded default chain when omitted.
    #[arg(long)]
    chain: Option<PathBuf>,
    /// Offsets CSV output path.
    #[arg(long)]
    out: PathBuf,
    /// Optionally also write the uncompensated drift trace here.
    #[arg(long)]
    drift_out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum QuantityArg {
    Temperature,
    #[value(name = "heat_flux")]
    HeatFlux,
}

impl From<QuantityArg> for Quantity {
    fn from(q: QuantityArg) -> Self {
        match q {
            QuantityArg::Temperature => Quantity::Temperature,
            QuantityArg::HeatFlux => Quantity::HeatFlux,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ProtocolArg {
    Specialised,
    Generalised,
}

impl From<ProtocolArg> for Protocol {
    fn from(p: ProtocolArg) -> Self {
        match p {
            ProtocolArg::Specialised => Protocol::Specialised,
            ProtocolArg::Generalised => Protocol::Generalised,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let seed = match resolve_seed(cli.seed) {
        Ok(seed) => seed,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let result = match cli.command {
        Command::Simulate(args) => cmd_simulate(args, &seed),
        Command::Select(args) => cmd_select(args, &seed),
        Command::Train(args) => cmd_train(args, &seed),
        Command::Benchmark(args) => cmd_benchmark(args, &seed),
        Command::Compensate(args) => cmd_compensate(args, &seed),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ CliError::Usage(_)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

struct Seed {
    value: u64,
    source: &'static str,
}

/// Flag beats THERMO_SEED beats the built-in default of 42.
fn resolve_seed(flag: Option<u64>) -> Result<Seed, CliError> {
    if let Some(value) = flag {
        return Ok(Seed {
            value,
            source: "flag",
        });
    }
    match std::env::var("THERMO_SEED") {
        Ok(text) => {
            let value = text.trim().parse::<u64>().map_err(|_| {
                CliError::Usage(format!(
                    "THERMO_SEED must be an unsigned integer, got {text:?}"
                ))
            })?;
            Ok(Seed {
                value,
                source: "env",
            })
        }
        Err(std::env::VarError::NotPresent) => Ok(Seed {
            value: 42,
            source: "default",
        }),
        Err(e) => Err(CliError::Usage(format!("THERMO_SEED: {e}"))),
    }
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

/// Sidecar path for a directory-shaped output.
fn sidecar_in_dir(out: &Path) -> PathBuf {
    out.join("config_resolved.json")
}

/// Sidecar path for a file-shaped output: `plan.json` gets a sibling
/// `plan.config_resolved.json`.
fn sidecar_for_file(out: &Path) -> PathBuf {
    let stem = out
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "out".to_owned());
    out.with_file_name(format!("{stem}.config_resolved.json"))
}

fn display_opt(path: &Option<PathBuf>) -> serde_json::Value {
    match path {
        Some(p) => serde_json::Value::String(p.display().to_string()),
        None => serde_json::Value::Null,
    }
}

fn ensure_parent_dir(path: &Path) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    Ok(())
}

/// Sort key that orders RUN2 before RUN10.
fn natural_key(id: &str) -> (String, Option<u64>, String) {
    let prefix_len = id.trim_end_matches(|c: char| c.is_ascii_digit()).len();
    let (prefix, digits) = id.split_at(prefix_len);
    (prefix.to_owned(), digits.parse().ok(), id.to_owned())
}

/// Loads every `<run>_<quantity>.csv` under `dir`, in natural run order.
fn load_runs(dir: &Path, quantity: Quantity) -> Result<Vec<NodeTimeSeries<f64>>, CliError> {
    let suffix = format!("_{quantity}.csv");
    let mut found: Vec<(String, PathBuf)> = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        let Some(name) = path.file_name().map(|n| n.to_string_lossy().into_owned()) else {
            continue;
        };
        if let Some(run_id) = name.strip_suffix(&suffix) {
            if !run_id.is_empty() {
                found.push((run_id.to_owned(), path));
            }
        }
    }
    if found.is_empty() {
        return Err(CliError::Invalid(format!(
            "no *{suffix} files under {}",
            dir.display()
        )));
    }
    found.sort_by_key(|(id, _)| natural_key(id));
    found
        .into_iter()
        .map(|(run_id, path)| {
            Ok(dataset::load_csv::<f64>(&path)?
                .with_run_id(run_id)
                .with_quantity(quantity))
        })
        .collect()
}

fn cmd_simulate(args: SimulateArgs, seed: &Seed) -> Result<(), CliError> {
    if args.runs == 0 {
        return Err(CliError::Usage("--runs must be at least 1".into()));
    }
    let machine = match &args.config {
        Some(path) => MachineConfig::from_toml_path(path)?,
        None => MachineConfig::default_machine(),
    };
    std::fs::create_dir_all(&args.out)?;
    let suite = make_run_suite::<f64>(
        &machine.network,
        &machine.sim,
        &machine.ranges,
        args.runs,
        seed.value,
    )?;
    let mut manifest = BTreeMap::new();
    for run in &suite {
        let id = run.temperature.run_id().to_owned();
        dataset::save_csv(
            &run.temperature,
            args.out.join(format!("{id}_temperature.csv")),
        )?;
        dataset::save_csv(&run.heat_flux, args.out.join(format!("{id}_heat_flux.csv")))?;
        manifest.insert(id, run.temperature.initial_conditions().clone());
    }
    write_json(
        &args.out.join("initial_conditions.json"),
        &serde_json::to_value(&manifest)?,
    )?;
    write_json(
        &sidecar_in_dir(&args.out),
        &serde_json::json!({
            "command": "simulate",
            "config": display_opt(&args.config),
            "runs": args.runs,
            "seed": seed.value,
            "seed_source": seed.source,
            "out": args.out.display().to_string(),
        }),
    )?;
    eprintln!(
        "wrote {} runs ({} data files) under {}",
        args.runs,
        2 * args.runs,
        args.out.display()
    );
    Ok(())
}

fn cmd_select(args: SelectArgs, seed: &Seed) -> Result<(), CliError> {
    if !(args.tau > 0.0 && args.tau < 1.0) {
        return Err(CliError::Usage(format!(
            "--tau must lie strictly between 0 and 1, got {}",
            args.tau
        )));
    }
    let quantity = Quantity::from(args.quantity);
    let runs = load_runs(&args.data, quantity)?;
    let refs: Vec<&NodeTimeSeries<f64>> = runs.iter().collect();
    let corr = pearson_matrix_runs(&refs)?;
    let fitted_on = format!(
        "{} {quantity} runs under {}",
        runs.len(),
        args.data.display()
    );
    let plan = build_plan(&corr, args.tau, fitted_on)?;
    ensure_parent_dir(&args.out)?;
    plan.save_json(&args.out)?;
    write_json(
        &sidecar_for_file(&args.out),
        &serde_json::json!({
            "command": "select",
            "data": args.data.display().to_string(),
            "tau": args.tau,
            "quantity": quantity.to_string(),
            "seed": seed.value,
            "seed_source": seed.source,
            "out": args.out.display().to_string(),
        }),
    )?;
    eprintln!(
        "retained {}/{} nodes at tau {} -> {}",
        plan.n_retained(),
        plan.dim(),
        plan.tau,
        args.out.display()
    );
    Ok(())
}

fn parse_trials(text: &str) -> Result<usize, CliError> {
    let usage = || {
        CliError::Usage(format!(
            "--search must look like trials=20, got {text:?}"
        ))
    };
    let n: usize = text
        .strip_prefix("trials=")
        .ok_or_else(usage)?
        .parse()
        .map_err(|_| usage())?;
    if n == 0 {
        return Err(CliError::Usage(
            "--search needs at least one trial".into(),
        ));
    }
    Ok(n)
}

fn parse_archs(text: &str) -> Result<Vec<ModelKind>, CliError> {
    if text.eq_ignore_ascii_case("all") {
        return Ok(TABLE_ORDER.to_vec());
    }
    text.parse::<ModelKind>()
        .map(|k| vec![k])
        .map_err(|e| CliError::Usage(format!("{e} (or \"all\")")))
}

/// Search space with the pinned dimensions collapsed to a point, so
/// trial logs record exactly what was evaluated.
fn narrowed_space(args: &TrainArgs) -> SearchSpace {
    let mut space = SearchSpace::default();
    if let Some(v) = args.lr {
        space.learning_rate = (v, v);
    }
    if let Some(v) = args.wd {
        space.weight_decay = (v, v);
    }
    if let Some(v) = args.dropout {
        space.dropout = (v, v);
    }
    if let Some(v) = args.hidden {
        space.hidden = vec![v];
    }
    if let Some(v) = args.layers {
        space.layers = (v, v);
    }
    if let Some(v) = args.heads {
        space.heads = (v, v);
    }
    space
}

/// Deterministic per-target seed so searches for different targets
/// draw different configurations from the same base seed.
fn stable_seed(base: u64, tag: &str) -> u64 {
    tag.bytes()
        .fold(base ^ 0xcbf2_9ce4_8422_2325, |acc, b| {
            (acc ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
        })
}

fn last_val_loss(curves: &thermonet::train::LossCurves) -> f64 {
    curves.val.last().copied().unwrap_or(f64::INFINITY)
}

fn cmd_train(args: TrainArgs, seed: &Seed) -> Result<(), CliError> {
    if !(args.tau > 0.0 && args.tau < 1.0) {
        return Err(CliError::Usage(format!(
            "--tau must lie strictly between 0 and 1, got {}",
            args.tau
        )));
    }
    let trials = parse_trials(&args.search)?;
    let kinds = parse_archs(&args.arch)?;
    let quantity = Quantity::from(args.quantity);
    let protocol = Protocol::from(args.protocol);
    let runs = load_runs(&args.data, quantity)?;
    if protocol == Protocol::Generalised && runs.len() < 2 {
        return Err(CliError::Invalid(format!(
            "generalised protocol needs at least two runs, found {}",
            runs.len()
        )));
    }
    std::fs::create_dir_all(&args.out)?;

    let space = narrowed_space(&args);
    let base_optim = OptimConfig {
        epochs: args.epochs,
        batch_size: args.batch_size,
        seq_len: args.seq_len,
        ..OptimConfig::default()
    };
    base_optim.validate()?;
    let file_tag = format!("{}_{quantity}", protocol.label());
    let arch_tag = args.arch.to_ascii_lowercase();

    let mut metrics_rows: Vec<MetricsRow> = Vec::new();
    let mut config_rows: Vec<BestConfigRow> = Vec::new();
    for &kind in &kinds {
        // d_in/d_out are placeholders; the protocol sizes the model to
        // the retained node count.
        let base_spec = ModelSpec::new(kind, 1, 1);
        match protocol {
            Protocol::Specialised => {
                for run in &runs {
                    let search_seed =
                        stable_seed(seed.value, &format!("{}:{}", kind.token(), run.run_id()));
                    let objective = |trial: &TrialConfig| -> Result<f64, TrainError> {
                        let spec = trial.apply(&base_spec);
                        let optim = trial.apply_optim(&base_optim);
                        let outcome = specialised_protocol(
                            run,
                            &spec,
                            &optim,
                            args.tau,
                            NormMode::MinMax,
                            &REPEAT_SEEDS[..1],
                        )?;
                        Ok(last_val_loss(&outcome.repeats[0].curves))
                    };
                    let (best, records) = random_search(&space, objective, trials, search_seed)?;
                    write_trial_log(
                        args.out.join(format!(
                            "trials_{file_tag}_{}_{}.csv",
                            kind.token(),
                            run.run_id()
                        )),
                        &records,
                    )?;
                    let outcome = specialised_protocol(
                        run,
                        &best.apply(&base_spec),
                        &best.apply_optim(&base_optim),
                        args.tau,
                        NormMode::MinMax,
                        &REPEAT_SEEDS,
                    )?;
                    eprintln!(
                        "{} on {}: test mse {:.3e} +- {:.3e} over {} seeds ({:.1}s)",
                        kind.label(),
                        run.run_id(),
                        outcome.metrics.mse_mean,
                        outcome.metrics.mse_std,
                        outcome.metrics.n_repeats,
                        outcome.metrics.wall_time
                    );
                    metrics_rows.push(MetricsRow {
                        target: run.run_id().to_owned(),
                        model: kind.label().to_owned(),
                        metrics: outcome.metrics.clone(),
                    });
                    config_rows.push(BestConfigRow {
                        target: run.run_id().to_owned(),
                        model: kind.label().to_owned(),
                        config: best,
                    });
                }
            }
            Protocol::Generalised => {
                let search_seed = stable_seed(seed.value, kind.token());
                let objective = |trial: &TrialConfig| -> Result<f64, TrainError> {
                    let spec = trial.apply(&base_spec);
                    let optim = trial.apply_optim(&base_optim);
                    let folds = generalised_protocol(
                        &runs,
                        &spec,
                        &optim,
                        args.tau,
                        NormMode::MinMax,
                        &REPEAT_SEEDS[..1],
                    )?;
                    let total: f64 = folds
                        .iter()
                        .map(|f| last_val_loss(&f.repeats[0].curves))
                        .sum();
                    Ok(total / folds.len() as f64)
                };
                let (best, records) = random_search(&space, objective, trials, search_seed)?;
                write_trial_log(
                    args.out
                        .join(format!("trials_{file_tag}_{}_loo.csv", kind.token())),
                    &records,
                )?;
                let folds = generalised_protocol(
                    &runs,
                    &best.apply(&base_spec),
                    &best.apply_optim(&base_optim),
                    args.tau,
                    NormMode::MinMax,
                    &REPEAT_SEEDS,
                )?;
                for fold in &folds {
                    eprintln!(
                        "{} holding out {}: test mse {:.3e} +- {:.3e} over {} seeds ({:.1}s)",
                        kind.label(),
                        fold.held_out,
                        fold.metrics.mse_mean,
                        fold.metrics.mse_std,
                        fold.metrics.n_repeats,
                        fold.metrics.wall_time
                    );
                    metrics_rows.push(MetricsRow {
                        target: fold.held_out.clone(),
                        model: kind.label().to_owned(),
                        metrics: fold.metrics.clone(),
                    });
                    config_rows.push(BestConfigRow {
                        target: fold.held_out.clone(),
                        model: kind.label().to_owned(),
                        config: best.clone(),
                    });
                }
            }
        }
    }

    write_metrics(
        args.out.join(format!("metrics_{file_tag}_{arch_tag}.csv")),
        &metrics_rows,
    )?;
    write_best_configs(
        args.out
            .join(format!("best_configs_{file_tag}_{arch_tag}.csv")),
        &config_rows,
    )?;
    write_json(
        &sidecar_in_dir(&args.out),
        &serde_json::json!({
            "command": "train",
            "data": args.data.display().to_string(),
            "arch": args.arch,
            "protocol": protocol.label(),
            "quantity": quantity.to_string(),
            "search": { "trials": trials },
            "tau": args.tau,
            "epochs": args.epochs,
            "batch_size": args.batch_size,
            "seq_len": args.seq_len,
            "pinned": {
                "lr": args.lr,
                "wd": args.wd,
                "dropout": args.dropout,
                "hidden": args.hidden,
                "layers": args.layers,
                "heads": args.heads,
            },
            "seed": seed.value,
            "seed_source": seed.source,
            "out": args.out.display().to_string(),
        }),
    )?;
    eprintln!(
        "wrote {} metric rows under {}",
        metrics_rows.len(),
        args.out.display()
    );
    Ok(())
}

fn kind_for_label(label: &str) -> Result<ModelKind, CliError> {
    TABLE_ORDER
        .into_iter()
        .find(|k| k.label() == label)
        .ok_or_else(|| CliError::Invalid(format!("unknown architecture label {label:?}")))
}

/// Files under `dir` named `<prefix>...csv`, sorted for determinism.
fn files_with_prefix(dir: &Path, prefix: &str) -> Result<Vec<PathBuf>, CliError> {
    let mut paths: Vec<PathBuf> = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        let Some(name) = path.file_name().map(|n| n.to_string_lossy().into_owned()) else {
            continue;
        };
        if name.starts_with(prefix) && name.ends_with(".csv") {
            paths.push(path);
        }
    }
    paths.sort();
    Ok(paths)
}

fn cmd_benchmark(args: BenchmarkArgs, seed: &Seed) -> Result<(), CliError> {
    let protocol = Protocol::from(args.protocol);
    let quantity = Quantity::from(args.quantity);
    let tag = format!("{}_{quantity}", protocol.label());

    let mut all_rows: Vec<MetricsRow> = Vec::new();
    for path in files_with_prefix(&args.data, &format!("metrics_{tag}"))? {
        all_rows.extend(thermonet::train::read_metrics(&path)?);
    }
    if all_rows.is_empty() {
        return Err(thermonet::report::ReportError::EmptyReport.into());
    }

    let mut cells: BTreeMap<(String, String), thermonet::train::RunMetrics> = BTreeMap::new();
    for row in all_rows {
        let key = (row.target.clone(), row.model.clone());
        if cells.insert(key, row.metrics).is_some() {
            return Err(CliError::Invalid(format!(
                "duplicate metrics for target {:?}, model {:?}; remove the stale metrics file",
                row.target, row.model
            )));
        }
    }
    let mut targets: Vec<String> = cells
        .keys()
        .map(|(t, _)| t.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    targets.sort_by_key(|t| natural_key(t));
    let labels: BTreeSet<String> = cells.keys().map(|(_, m)| m.clone()).collect();
    for label in &labels {
        kind_for_label(label)?;
    }
    let kinds: Vec<ModelKind> = TABLE_ORDER
        .into_iter()
        .filter(|k| labels.contains(k.label()))
        .collect();

    let mut rows = Vec::with_capacity(targets.len());
    for target in &targets {
        let mut row = Vec::with_capacity(kinds.len());
        for kind in &kinds {
            let key = (target.clone(), kind.label().to_owned());
            let metrics = cells.get(&key).ok_or_else(|| {
                CliError::Invalid(format!(
                    "no metrics for target {target:?}, model {:?}; train it or drop the incomplete target",
                    kind.label()
                ))
            })?;
            row.push(metrics.clone());
        }
        rows.push((target.clone(), row));
    }

    let report = report::mark_best(BenchmarkReport::new(protocol, quantity, kinds, rows)?);
    let rendered = report::render(&report)?;
    std::fs::create_dir_all(&args.out)?;
    rendered.save(args.out.join("report.txt"), args.out.join("report.csv"))?;

    let config_files = files_with_prefix(&args.data, &format!("best_configs_{tag}"))?;
    if config_files.is_empty() {
        eprintln!("no best_configs files found; skipping best_configs.csv");
    } else {
        merge_best_configs(&config_files, &args.out.join("best_configs.csv"))?;
    }

    write_json(
        &sidecar_in_dir(&args.out),
        &serde_json::json!({
            "command": "benchmark",
            "data": args.data.display().to_string(),
            "protocol": protocol.label(),
            "quantity": quantity.to_string(),
            "seed": seed.value,
            "seed_source": seed.source,
            "out": args.out.display().to_string(),
        }),
    )?;
    eprintln!(
        "report over {} targets x {} architectures -> {}",
        report.rows.len(),
        report.architectures.len(),
        args.out.display()
    );
    Ok(())
}

/// Concatenates best-config CSVs (text-level, so float formatting is
/// preserved exactly), sorted by target then architecture.
fn merge_best_configs(files: &[PathBuf], out: &Path) -> Result<(), CliError> {
    const HEADER: [&str; 8] = [
        "target", "model", "lr", "wd", "dropout", "hidden", "layers", "heads",
    ];
    let mut rows: Vec<Vec<String>> = Vec::new();
    for path in files {
        let mut reader = csv::Reader::from_path(path)?;
        let header = reader.headers()?.clone();
        if header.iter().ne(HEADER) {
            return Err(CliError::Invalid(format!(
                "{} is not a best-config file (header {:?})",
                path.display(),
                header
            )));
        }
        for record in reader.records() {
            rows.push(record?.iter().map(str::to_owned).collect());
        }
    }
    let order = |row: &Vec<String>| {
        let arch = TABLE_ORDER
            .into_iter()
            .position(|k| k.label() == row[1])
            .unwrap_or(usize::MAX);
        (natural_key(&row[0]), arch)
    };
    rows.sort_by_key(order);
    rows.dedup();
    let mut seen = BTreeSet::new();
    for row in &rows {
        if !seen.insert((row[0].clone(), row[1].clone())) {
            return Err(CliError::Invalid(format!(
                "conflicting best configs for target {:?}, model {:?}",
                row[0], row[1]
            )));
        }
    }
    let mut writer = csv::Writer::from_path(out)?;
    writer.write_record(HEADER)?;
    for row in &rows {
        writer.write_record(row)?;
    }
    writer.flush()?;
    Ok(())
}

fn cmd_compensate(args: CompensateArgs, seed: &Seed) -> Result<(), CliError> {
    let field = dataset::load_csv::<f64>(&args.predictions)?;
    let chain = match &args.chain {
        Some(path) => KinematicChain::from_toml_path(path)?,
        None => KinematicChain::default_chain(),
    };
    let drifts = drift_trace(&field, &chain)?;
    let times: Vec<f64> = field.timestamps().to_vec();
    ensure_parent_dir(&args.out)?;
    write_offset_csv(&args.out, &times, &drifts)?;
    if let Some(drift_path) = &args.drift_out {
        ensure_parent_dir(drift_path)?;
        write_drift_csv(drift_path, &times, &drifts)?;
    }
    write_json(
        &sidecar_for_file(&args.out),
        &serde_json::json!({
            "command": "compensate",
            "predictions": args.predictions.display().to_string(),
            "chain": display_opt(&args.chain),
            "drift_out": display_opt(&args.drift_out),
            "seed": seed.value,
            "seed_source": seed.source,
            "out": args.out.display().to_string(),
        }),
    )?;
    eprintln!(
        "wrote {} compensation rows -> {}",
        drifts.len(),
        args.out.display()
    );
    Ok(())
}
