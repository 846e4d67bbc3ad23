use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;

use ecg_reid::audit::{
    self, explain_model, export_population, extract_features, load_records, run_audit, split_stage, stage_seed, train_model,
    AuditError, ExplainSettings, InputSource, RunConfig,
};
use ecg_reid::cohort::{split, SplitPlan, Task};
use ecg_reid::delineate::write_annotations;
use ecg_reid::ecg_io::{generate_population, ColumnSelector, SyntheticPopulationConfig};
use ecg_reid::evaluate::{evaluate, reference_compare, summary_csv, EvalReport};
use ecg_reid::explain::{render_summary_svg, Scale};
use ecg_reid::features::{FeatureTable, IntervalSet};
use ecg_reid::models::{LearnerRegistry, TrainedModel};

/// Re-identification risk audit for single-lead ECG.
#[derive(Parser)]
#[command(name = "ecg-reid", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic population as CSV/JSON records plus a manifest.
    Synth(SynthArgs),
    /// Clean, delineate and featurise records into features.csv.
    Features(FeaturesArgs),
    /// Write split plans for the selected tasks.
    Split(SplitArgs),
    /// Tune and fit models on a plan's training side.
    Train(TrainArgs),
    /// Score a saved model on a plan's test side.
    Evaluate(EvaluateArgs),
    /// Shapley attributions for a saved model on a plan's test side.
    Explain(ExplainArgs),
    /// Merge evaluation reports into one summary table.
    Report(ReportArgs),
    /// Run every stage end to end.
    Audit(AuditArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Synthetic population config (JSON); flags below are used without it.
    #[arg(long)]
    synthetic: Option<PathBuf>,
    #[arg(long, default_value_t = 20)]
    participants: usize,
    #[arg(long, default_value_t = 180.0)]
    duration_s: f64,
    #[arg(long, default_value_t = 250.0)]
    fs: f64,
    #[arg(long)]
    snr_db: Option<f64>,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct InputArgs {
    /// JSON manifest of signal/metadata pairs.
    #[arg(long, conflicts_with = "synthetic")]
    manifest: Option<PathBuf>,
    /// Synthetic population config (JSON).
    #[arg(long)]
    synthetic: Option<PathBuf>,
    /// Signal column (index or header name) for multi-column CSVs.
    #[arg(long)]
    column: Option<ColumnSelector>,
}

#[derive(Args)]
struct SignalArgs {
    #[arg(long, default_value_t = 10.0)]
    window_s: f64,
    #[arg(long, default_value_t = 0.5)]
    hp_cutoff: f64,
    #[arg(long, default_value_t = 5)]
    hp_order: usize,
    /// Mains frequency to notch out.
    #[arg(long, default_value = "50", value_parser = ["50", "60"])]
    powerline: String,
    /// Use all ten P/Q/R/S/T interval pairs instead of the four adjacent ones.
    #[arg(long)]
    all_pairs: bool,
}

#[derive(Args)]
struct FeaturesArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    signal: SignalArgs,
    /// Read fiducials from a previous run's annotations directory.
    #[arg(long)]
    annotations: Option<PathBuf>,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SplitArgs {
    #[arg(long)]
    features: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "gender,age_group,participant_id")]
    tasks: Vec<Task>,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    features: PathBuf,
    #[arg(long)]
    plan: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "logistic,tree,forest")]
    models: Vec<String>,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    features: PathBuf,
    #[arg(long)]
    plan: PathBuf,
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ExplainArgs {
    #[arg(long)]
    features: PathBuf,
    #[arg(long)]
    plan: PathBuf,
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[command(flatten)]
    shap: ShapArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ShapArgs {
    /// Output scale: probability, or logit for logistic models.
    #[arg(long, default_value = "probability")]
    scale: Scale,
    #[arg(long, default_value_t = 128)]
    background: usize,
    #[arg(long, default_value_t = 500)]
    max_points: usize,
}

#[derive(Args)]
struct ReportArgs {
    /// Report JSON files.
    #[arg(long, num_args = 1.., required = true)]
    reports: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AuditArgs {
    /// Complete run config (JSON); other input and pipeline flags are ignored.
    #[arg(long, conflicts_with_all = ["manifest", "synthetic"])]
    config: Option<PathBuf>,
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    signal: SignalArgs,
    #[arg(long, value_delimiter = ',', default_value = "gender,age_group,participant_id")]
    tasks: Vec<Task>,
    #[arg(long, value_delimiter = ',', default_value = "logistic,tree,forest")]
    models: Vec<String>,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[command(flatten)]
    shap: ShapArgs,
    /// Skip the attribution stage.
    #[arg(long)]
    no_explain: bool,
    #[arg(long)]
    out: PathBuf,
}

struct Failure {
    code: u8,
    message: String,
}

impl From<AuditError> for Failure {
    fn from(e: AuditError) -> Self {
        Failure {
            code: e.exit_code(),
            message: e.to_string(),
        }
    }
}

fn input_error(e: impl Display) -> Failure {
    Failure {
        code: 2,
        message: e.to_string(),
    }
}

fn stage_error(e: impl Display) -> Failure {
    Failure {
        code: 3,
        message: e.to_string(),
    }
}

type CliResult = Result<(), Failure>;

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| input_error(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| input_error(format!("{}: {e}", path.display())))
}

fn write_file(path: &Path, contents: &str) -> CliResult {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| stage_error(format!("{}: {e}", parent.display())))?;
    }
    std::fs::write(path, contents).map_err(|e| stage_error(format!("{}: {e}", path.display())))
}

fn input_source(args: &InputArgs) -> Result<InputSource, Failure> {
    match (&args.manifest, &args.synthetic) {
        (Some(path), None) => Ok(InputSource::Manifest {
            path: path.clone(),
            column: args.column.clone(),
        }),
        (None, Some(path)) => Ok(InputSource::Synthetic(read_json(path)?)),
        _ => Err(input_error("give exactly one of --manifest or --synthetic")),
    }
}

fn pipeline_config(input: InputSource, signal: &SignalArgs, seed: u64) -> RunConfig {
    let mut cfg = RunConfig::new(input, seed);
    cfg.window.window_s = signal.window_s;
    cfg.window.intervals = if signal.all_pairs { IntervalSet::AllPairs } else { IntervalSet::Adjacent };
    cfg.filter.highpass_cutoff_hz = signal.hp_cutoff;
    cfg.filter.highpass_order = signal.hp_order;
    cfg.filter.powerline_freq_hz = signal.powerline.parse().expect("validated by clap");
    cfg
}

fn read_table(path: &Path) -> Result<FeatureTable, Failure> {
    FeatureTable::read_csv(path).map_err(input_error)
}

fn read_plan(path: &Path) -> Result<SplitPlan, Failure> {
    SplitPlan::read(path).map_err(input_error)
}

fn read_model(path: &Path) -> Result<TrainedModel, Failure> {
    TrainedModel::read(path).map_err(input_error)
}

fn cmd_synth(args: SynthArgs) -> CliResult {
    let cfg = match &args.synthetic {
        Some(path) => read_json(path)?,
        None => {
            let cfg = SyntheticPopulationConfig::new(args.participants, args.seed, args.duration_s, args.fs);
            match args.snr_db {
                Some(snr) => cfg.with_snr_db(snr),
                None => cfg,
            }
        }
    };
    let pop = generate_population(&cfg).map_err(input_error)?;
    std::fs::create_dir_all(&args.out).map_err(|e| stage_error(format!("{}: {e}", args.out.display())))?;
    write_file(
        &args.out.join("synthetic.json"),
        &(serde_json::to_string_pretty(&cfg).expect("config serialises") + "\n"),
    )?;
    let manifest = export_population(&pop, &args.out).map_err(stage_error)?;
    info!("wrote {} records, manifest {}", pop.records.len(), manifest.display());
    Ok(())
}

fn cmd_features(args: FeaturesArgs) -> CliResult {
    let cfg = pipeline_config(input_source(&args.input)?, &args.signal, args.seed);
    cfg.validate(&LearnerRegistry::with_defaults())?;
    let records = load_records(&cfg.input)?;
    let run = extract_features(&records, &cfg, args.annotations.as_deref())?;
    if args.annotations.is_none() {
        for (i, (rec, beats)) in records.iter().zip(&run.beats).enumerate() {
            let path = args.out.join("annotations").join(audit::annotation_file(i, &rec.participant_id));
            std::fs::create_dir_all(path.parent().expect("has parent")).map_err(stage_error)?;
            write_annotations(&path, beats).map_err(|e| stage_error(format!("{}: {e}", path.display())))?;
        }
    }
    write_file(&args.out.join("drops.csv"), &run.drops_csv())?;
    run.table.write_csv(&args.out.join("features.csv")).map_err(stage_error)?;
    info!("{} feature windows from {} records", run.table.rows.len(), records.len());
    Ok(())
}

fn cmd_split(args: SplitArgs) -> CliResult {
    let table = read_table(&args.features)?;
    for task in args.tasks {
        let plan = split(&table, task, stage_seed(args.seed, &split_stage(task))).map_err(stage_error)?;
        let path = args.out.join("plans").join(format!("{}.json", task.name()));
        write_file(&path, &plan.to_json())?;
        info!("{}: {} train / {} test windows", task.name(), plan.train.len(), plan.test.len());
    }
    Ok(())
}

fn cmd_train(args: TrainArgs) -> CliResult {
    let table = read_table(&args.features)?;
    let plan = read_plan(&args.plan)?;
    let registry = LearnerRegistry::with_defaults();
    for name in &args.models {
        let (model, log) = train_model(&registry, name, &table, &plan, args.seed)?;
        let stem = format!("{}_{name}", plan.task.name());
        write_file(&args.out.join("models").join(format!("{stem}.json")), &model.to_json())?;
        write_file(
            &args.out.join("tuning").join(format!("{stem}.json")),
            &(serde_json::to_string_pretty(&log).expect("tuning log serialises") + "\n"),
        )?;
        info!("{stem}: best {:?}", log.best);
    }
    Ok(())
}

fn cmd_evaluate(args: EvaluateArgs) -> CliResult {
    let table = read_table(&args.features)?;
    let plan = read_plan(&args.plan)?;
    let model = read_model(&args.model)?;
    let report = reference_compare(evaluate(&model, &table, &plan).map_err(stage_error)?);
    let path = args.out.join("reports").join(format!("{}_{}.json", plan.task.name(), model.kind));
    write_file(&path, &report.to_json())?;
    info!("accuracy {:.3}, macro-F1 {:.3}", report.accuracy, report.f1_macro);
    Ok(())
}

fn cmd_explain(args: ExplainArgs) -> CliResult {
    let table = read_table(&args.features)?;
    let plan = read_plan(&args.plan)?;
    let model = read_model(&args.model)?;
    let settings = ExplainSettings {
        enabled: true,
        background_size: args.shap.background,
        max_points: args.shap.max_points,
        scale: args.shap.scale,
    };
    let summary = explain_model(&model, &table, &plan, &settings, args.seed)?;
    let stem = args.out.join("shap").join(format!("{}_{}", plan.task.name(), model.kind));
    write_file(&stem.with_extension("json"), &summary.to_json())?;
    write_file(&stem.with_extension("csv"), &summary.beeswarm_csv())?;
    write_file(&stem.with_extension("svg"), &render_summary_svg(&summary))?;
    if let Some(top) = summary.ranking.first() {
        info!("top feature {} (mean |phi| {:.4})", top.feature, top.mean_abs_phi);
    }
    Ok(())
}

fn cmd_report(args: ReportArgs) -> CliResult {
    let reports = args
        .reports
        .iter()
        .map(|p| EvalReport::read(p).map_err(input_error))
        .collect::<Result<Vec<_>, _>>()?;
    write_file(&args.out, &summary_csv(&reports))
}

fn cmd_audit(args: AuditArgs) -> CliResult {
    let cfg = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| input_error(format!("cannot read {}: {e}", path.display())))?;
            RunConfig::from_json(&text)?
        }
        None => {
            let mut cfg = pipeline_config(input_source(&args.input)?, &args.signal, args.seed);
            cfg.tasks = args.tasks.clone();
            cfg.models = args.models.clone();
            cfg.explain = ExplainSettings {
                enabled: !args.no_explain,
                background_size: args.shap.background,
                max_points: args.shap.max_points,
                scale: args.shap.scale,
            };
            cfg
        }
    };
    let outcome = run_audit(&cfg, &args.out)?;
    for r in &outcome.reports {
        println!(
            "{:<15} {:<9} accuracy {:.3}  precision {:.3}  recall {:.3}  F1 {:.3}  AUC {}",
            r.task.name(),
            r.model,
            r.accuracy,
            r.precision_macro,
            r.recall_macro,
            r.f1_macro,
            r.roc_auc.map_or("n/a".to_string(), |a| format!("{a:.3}"))
        );
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Features(a) => cmd_features(a),
        Command::Split(a) => cmd_split(a),
        Command::Train(a) => cmd_train(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Explain(a) => cmd_explain(a),
        Command::Report(a) => cmd_report(a),
        Command::Audit(a) => cmd_audit(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
