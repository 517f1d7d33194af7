//! The `opiaid` command line.
//!
//! Each command that writes files puts them under `--out` next to a
//! `manifest.json` holding the parameters and the SHA-256 of every input and
//! output. Timestamps go only to `run.log`, so manifests and primary outputs
//! are byte-identical across reruns.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use opiaid_core::cadr::cadr_curve;
use opiaid_core::baselines::LosRecommender;
use opiaid_core::diagnostics::{overlap_diagnostic, OverlapConfig, OverlapReport};
use opiaid_core::domain::{CaseFeatures, DoseGrid, Treatment, UtilityWeights};
use opiaid_core::experiment::{
    evaluate_stage, train_stage, ExperimentConfig, TrainedModel, TrainingOutput, SELECTED_ID,
};
use opiaid_core::io::{
    cohort_csv_bytes, curve_csv_bytes, read_bundle, read_bytes, read_cohort, read_json, sha256_hex, to_json_bytes,
    write_atomic, write_cohort, ModelBundle, COHORT_CSV, COHORT_SCHEMA, GROUND_TRUTH,
};
use opiaid_core::recommendation::recommend_dose;
use opiaid_core::synthgen::{generate_cohort, ScmGroundTruth};
use opiaid_core::validation::{split, OutcomeMetrics};
use opiaid_learners::{Family, LossPoint};

pub const MANIFEST: &str = "manifest.json";
pub const RUN_LOG: &str = "run.log";
pub const MODEL_INDEX: &str = "index.json";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Validation(String),
    #[error(transparent)]
    Core(#[from] opiaid_core::Error),
}

impl CliError {
    /// 1 for IO failures, 2 for usage errors, 3 for validation failures.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(opiaid_core::Error::Io { .. }) => 1,
            CliError::Usage(_) => 2,
            CliError::Validation(_) | CliError::Core(_) => 3,
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn parse_weights(s: &str) -> std::result::Result<UtilityWeights, String> {
    UtilityWeights::parse(s).map_err(|e| e.to_string())
}

fn parse_grid(s: &str) -> std::result::Result<DoseGrid, String> {
    DoseGrid::parse(s).map_err(|e| e.to_string())
}

fn parse_families(s: &str) -> std::result::Result<Vec<Family>, String> {
    if s == "all" {
        return Ok(Family::ALL.to_vec());
    }
    s.split(',').map(|f| f.trim().parse::<Family>()).collect()
}

#[derive(Parser)]
#[command(name = "opiaid", version, about = "Opioid dose-response modelling on synthetic cohorts")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a synthetic cohort.
    Generate(GenerateArgs),
    /// Fit every requested learner family on the training split.
    Train(TrainArgs),
    /// Score all methods on the retention split against the oracle.
    Evaluate(EvaluateArgs),
    /// Print the recommended dose for one case.
    Recommend(CaseArgs),
    /// Print the overlap table of a cohort.
    Diagnose(DiagnoseArgs),
    /// Write a case's dose-response curves as CSV.
    Curves(CurvesArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// Structural causal model as JSON; the built-in model when omitted.
    #[arg(long)]
    scm: Option<PathBuf>,
    #[arg(long)]
    n: usize,
    /// Replaces the model's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Zero all outcome noise.
    #[arg(long)]
    noiseless: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    cohort: PathBuf,
    /// Comma-separated family names, or `all`.
    #[arg(long, default_value = "all")]
    learners: String,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0)]
    split_seed: u64,
    /// Fit library defaults only.
    #[arg(long)]
    no_tune: bool,
    /// Experiment configuration JSON; its keys override the flags. The cohort
    /// always supplies the generating model and size.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    cohort: PathBuf,
    #[arg(long)]
    models: PathBuf,
    /// `w_pain,w_orades`; the training configuration's weights when omitted.
    #[arg(long, value_parser = parse_weights)]
    weights: Option<UtilityWeights>,
    #[arg(long)]
    out: PathBuf,
    /// Rank the ground-truth optimum alongside the methods.
    #[arg(long)]
    include_oracle: bool,
    /// Rank a seeded uniformly random dose alongside the methods.
    #[arg(long)]
    include_random: bool,
}

#[derive(Args)]
struct CaseArgs {
    #[arg(long)]
    model: PathBuf,
    /// Case features as a JSON file path or an inline JSON object.
    #[arg(long)]
    case: String,
    #[arg(long, default_value = "0.5,0.5", value_parser = parse_weights)]
    weights: UtilityWeights,
    /// Opiate id in the model's registry.
    #[arg(long, default_value_t = 0)]
    treatment: usize,
}

#[derive(Args)]
struct DiagnoseArgs {
    #[arg(long)]
    cohort: PathBuf,
    #[arg(long, default_value = "0:20:0.5", value_parser = parse_grid)]
    grid: DoseGrid,
    #[arg(long, default_value_t = 5)]
    n_strata: usize,
    #[arg(long, default_value_t = 10)]
    n_dose_bins: usize,
    #[arg(long, default_value_t = 5)]
    min_count: usize,
}

#[derive(Args)]
struct CurvesArgs {
    #[command(flatten)]
    case: CaseArgs,
    #[arg(long)]
    out: PathBuf,
}

/// Parameters and content hashes of one command run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub tool_version: String,
    pub parameters: Value,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    /// Training runs only: whether an evaluation has opened the retention
    /// split of this configuration.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub retention_used: Option<bool>,
}

impl Manifest {
    fn new(command: &str, parameters: Value) -> Self {
        Manifest {
            command: command.into(),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            parameters,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            retention_used: None,
        }
    }

    fn input(&mut self, name: &str, path: &Path) -> Result<()> {
        self.inputs.insert(name.into(), sha256_hex(&read_bytes(path)?));
        Ok(())
    }

    /// Writes `bytes` under `dir` and records their hash.
    fn output(&mut self, dir: &Path, rel: &str, bytes: &[u8]) -> Result<()> {
        write_atomic(&dir.join(rel), bytes)?;
        self.outputs.insert(rel.into(), sha256_hex(bytes));
        Ok(())
    }

    fn write(&self, dir: &Path) -> Result<()> {
        Ok(write_atomic(&dir.join(MANIFEST), &to_json_bytes(self)?)?)
    }
}

/// One entry per trained model in the models directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelEntry {
    pub id: String,
    pub file: String,
    pub metrics: OutcomeMetrics,
}

fn append_log(dir: &Path, command: &str, started: Instant) -> Result<()> {
    let path = dir.join(RUN_LOG);
    let now = SystemTime::now().duration_since(UNIX_EPOCH).unwrap_or_default();
    let line = format!(
        "unix_time={:.3} command={command} status=ok elapsed_seconds={:.3}\n",
        now.as_secs_f64(),
        started.elapsed().as_secs_f64()
    );
    let io = |e| opiaid_core::Error::Io {
        path: path.display().to_string(),
        source: e,
    };
    let mut f = OpenOptions::new().create(true).append(true).open(&path).map_err(io)?;
    f.write_all(line.as_bytes()).map_err(io)?;
    Ok(())
}

fn to_value<T: Serialize>(v: &T) -> Result<Value> {
    serde_json::to_value(v).map_err(|e| CliError::Core(e.into()))
}

fn print_json<T: Serialize>(out: &mut dyn Write, v: &T) -> Result<()> {
    let bytes = to_json_bytes(v)?;
    out.write_all(&bytes)
        .and_then(|_| out.write_all(b"\n"))
        .map_err(|e| CliError::Core(opiaid_core::Error::Io {
            path: "<stdout>".into(),
            source: e,
        }))
}

fn generate(a: GenerateArgs, out: &mut dyn Write) -> Result<()> {
    let started = Instant::now();
    if a.n == 0 {
        return Err(CliError::Usage("--n must be at least 1".into()));
    }
    let mut scm = match &a.scm {
        Some(p) => read_json::<ScmGroundTruth>(p)?,
        None => ScmGroundTruth::default(),
    };
    if let Some(s) = a.seed {
        scm.seed = s;
    }
    if a.noiseless {
        scm = scm.noiseless();
    }
    let cohort = generate_cohort(&scm, a.n)?;
    write_cohort(&a.out, &cohort)?;

    let mut m = Manifest::new(
        "generate",
        serde_json::json!({ "n": a.n, "seed": a.seed, "noiseless": a.noiseless, "scm": scm }),
    );
    if let Some(p) = &a.scm {
        m.input("scm", p)?;
    }
    for f in [COHORT_CSV, COHORT_SCHEMA, GROUND_TRUTH] {
        m.outputs.insert(f.into(), sha256_hex(&read_bytes(&a.out.join(f))?));
    }
    m.write(&a.out)?;
    append_log(&a.out, "generate", started)?;
    print_json(out, &serde_json::json!({ "records": cohort.records.len(), "out": a.out, "outputs": m.outputs }))
}

/// Overlays the top-level keys of a JSON config file on `cfg`.
fn apply_config_file(cfg: ExperimentConfig, path: &Path) -> Result<ExperimentConfig> {
    let file: Value = read_json(path)?;
    let Value::Object(overrides) = file else {
        return Err(CliError::Validation(format!("{}: expected a JSON object", path.display())));
    };
    let mut merged = to_value(&cfg)?;
    let target = merged.as_object_mut().expect("config serializes to an object");
    for (k, v) in overrides {
        if !target.contains_key(&k) {
            return Err(CliError::Validation(format!("{}: unknown key `{k}`", path.display())));
        }
        target.insert(k, v);
    }
    serde_json::from_value(merged).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
}

fn model_file(id: &str) -> String {
    format!("models/{}.json", id.trim_start_matches("causal_ml:"))
}

fn loss_csv(points: &[LossPoint]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| CliError::Core(e.into());
    w.write_record(["round", "train_loss", "validation_loss"]).map_err(csv_err)?;
    for p in points {
        let v = p.validation_loss.map(|v| v.to_string()).unwrap_or_default();
        w.write_record([p.round.to_string(), p.train_loss.to_string(), v])
            .map_err(csv_err)?;
    }
    w.into_inner().map_err(|e| CliError::Validation(e.to_string()))
}

fn train(a: TrainArgs, out: &mut dyn Write) -> Result<()> {
    let started = Instant::now();
    let families = parse_families(&a.learners).map_err(CliError::Usage)?;
    let cohort = read_cohort(&a.cohort)?;
    let mut cfg = ExperimentConfig {
        families,
        learner_seed: a.seed,
        tune: !a.no_tune,
        ..ExperimentConfig::default()
    };
    cfg.split.seed = a.split_seed;
    if let Some(p) = &a.config {
        cfg = apply_config_file(cfg, p)?;
    }
    cfg.scm = cohort.ground_truth.clone();
    cfg.n = cohort.records.len();
    cfg.validate()?;

    let s = split(cohort.records.len(), &cfg.split)?;
    let trained = train_stage(&cohort.records, &s, &cfg)?;

    let mut m = Manifest::new("train", to_value(&cfg)?);
    m.retention_used = Some(false);
    m.inputs.insert(
        COHORT_CSV.into(),
        sha256_hex(&cohort_csv_bytes(&cohort.records, &cohort.ground_truth.registry)?),
    );
    m.input(GROUND_TRUTH, &a.cohort.join(GROUND_TRUTH))?;
    if let Some(p) = &a.config {
        m.input("config", p)?;
    }

    let mut index = Vec::new();
    for tm in &trained.models {
        let file = model_file(&tm.id);
        let bundle = ModelBundle::new(tm.id.clone(), tm.model.clone(), trained.diagnostics());
        m.output(&a.out, &file, &bundle.to_bytes()?)?;
        let stem = tm.id.trim_start_matches("causal_ml:");
        for (endpoint, model) in [("pain", &tm.model.pain_model), ("orade", &tm.model.orade_model)] {
            let rel = format!("loss_curves/{stem}.{endpoint}.csv");
            m.output(&a.out, &rel, &loss_csv(model.loss_curve())?)?;
        }
        index.push(ModelEntry {
            id: tm.id.clone(),
            file,
            metrics: tm.metrics,
        });
    }
    m.output(&a.out, MODEL_INDEX, &to_json_bytes(&index)?)?;
    m.output(&a.out, "proxy.json", &to_json_bytes(&trained.proxy)?)?;
    m.output(&a.out, "overlap.json", &to_json_bytes(&trained.overlap)?)?;
    m.write(&a.out)?;
    append_log(&a.out, "train", started)?;

    let summary: Vec<Value> = index
        .iter()
        .map(|e| {
            serde_json::json!({
                "id": e.id,
                "pain_rmse": e.metrics.pain.rmse,
                "orade_rmse": e.metrics.orade.rmse,
            })
        })
        .collect();
    print_json(out, &serde_json::json!({ "models": summary, "selected": SELECTED_ID }))
}

/// Rebuilds the training output from a models directory.
fn load_training(dir: &Path) -> Result<TrainingOutput> {
    let index: Vec<ModelEntry> = read_json(&dir.join(MODEL_INDEX))?;
    let models = index
        .into_iter()
        .map(|e| {
            let b = read_bundle(&dir.join(&e.file))?;
            if b.id != e.id {
                return Err(CliError::Validation(format!("{}: holds model `{}`, expected `{}`", e.file, b.id, e.id)));
            }
            Ok(TrainedModel {
                id: e.id,
                model: b.cadr,
                metrics: e.metrics,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let proxy: LosRecommender = read_json(&dir.join("proxy.json"))?;
    let overlap: OverlapReport = read_json(&dir.join("overlap.json"))?;
    Ok(TrainingOutput {
        models,
        proxy,
        overlap,
    })
}

fn reports_csv(eval: &opiaid_core::experiment::EvaluationOutput) -> Result<Vec<u8>> {
    let csv_err = |e: csv::Error| CliError::Core(e.into());
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "rank",
        "id",
        "kind",
        "regret",
        "dose_mae",
        "n_cases",
        "los_pearson_r",
        "carried_forward",
    ])
    .map_err(csv_err)?;
    for (i, r) in eval.evaluation.reports.iter().enumerate() {
        let kind = to_value(&r.kind)?;
        let r_los = eval
            .proxy
            .get(&r.id)
            .and_then(|p| p.pacu_los.pearson_r)
            .map(|v| v.to_string())
            .unwrap_or_default();
        w.write_record([
            (i + 1).to_string(),
            r.id.clone(),
            kind.as_str().unwrap_or_default().to_string(),
            r.regret.to_string(),
            r.dose_mae.to_string(),
            r.n_cases.to_string(),
            r_los,
            eval.evaluation.carried_forward.contains(&r.id).to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.into_inner().map_err(|e| CliError::Validation(e.to_string()))
}

fn evaluate(a: EvaluateArgs, out: &mut dyn Write) -> Result<()> {
    let started = Instant::now();
    let manifest_path = a.models.join(MANIFEST);
    let mut trained_manifest: Manifest = read_json(&manifest_path)?;
    if trained_manifest.command != "train" {
        return Err(CliError::Validation(format!(
            "{}: not a training manifest",
            manifest_path.display()
        )));
    }
    if trained_manifest.retention_used == Some(true) {
        return Err(CliError::Validation(format!(
            "the retention split of {} has already been evaluated; retrain to evaluate again",
            a.models.display()
        )));
    }
    let mut cfg: ExperimentConfig = serde_json::from_value(trained_manifest.parameters.clone())
        .map_err(|e| CliError::Validation(format!("{}: {e}", manifest_path.display())))?;

    let cohort = read_cohort(&a.cohort)?;
    let cohort_hash = sha256_hex(&cohort_csv_bytes(&cohort.records, &cohort.ground_truth.registry)?);
    if trained_manifest.inputs.get(COHORT_CSV) != Some(&cohort_hash) {
        return Err(CliError::Validation(format!(
            "{} is not the cohort the models in {} were trained on",
            a.cohort.display(),
            a.models.display()
        )));
    }
    if let Some(w) = a.weights {
        cfg.weights = w;
    }
    cfg.include_oracle |= a.include_oracle;
    cfg.include_random |= a.include_random;
    let trained = load_training(&a.models)?;

    trained_manifest.retention_used = Some(true);
    trained_manifest.write(&a.models)?;
    let s = split(cohort.records.len(), &cfg.split)?;
    let evaluated = evaluate_stage(&cohort.records, s.retention, &trained, &cfg)?;

    let mut m = Manifest::new("evaluate", to_value(&cfg)?);
    m.inputs.insert(COHORT_CSV.into(), cohort_hash);
    for (name, hash) in &trained_manifest.outputs {
        m.inputs.insert(format!("models/{name}"), hash.clone());
    }
    m.output(&a.out, "evaluation.json", &to_json_bytes(&evaluated)?)?;
    m.output(&a.out, "method_reports.csv", &reports_csv(&evaluated)?)?;
    m.write(&a.out)?;
    append_log(&a.out, "evaluate", started)?;
    print_json(out, &evaluated.evaluation)
}

fn read_case(arg: &str) -> Result<CaseFeatures> {
    let bytes = if arg.trim_start().starts_with('{') {
        arg.as_bytes().to_vec()
    } else {
        read_bytes(Path::new(arg))?
    };
    serde_json::from_slice(&bytes).map_err(|e| CliError::Validation(format!("case: {e}")))
}

fn recommend(a: CaseArgs, out: &mut dyn Write) -> Result<()> {
    let bundle = read_bundle(&a.model)?;
    let x = read_case(&a.case)?;
    let t = Treatment { opiate_id: a.treatment };
    let r = recommend_dose(&bundle.cadr, &x, t, a.weights, &bundle.diagnostics)?;
    print_json(out, &r)
}

fn diagnose(a: DiagnoseArgs, out: &mut dyn Write) -> Result<()> {
    let cohort = read_cohort(&a.cohort)?;
    let cfg = OverlapConfig {
        n_strata: a.n_strata,
        n_dose_bins: a.n_dose_bins,
        min_count: a.min_count,
    };
    let report = overlap_diagnostic(&cohort.records, &a.grid, cfg)?;
    print_json(out, &report)
}

fn curves(a: CurvesArgs, out: &mut dyn Write) -> Result<()> {
    let bundle = read_bundle(&a.case.model)?;
    let x = read_case(&a.case.case)?;
    let t = Treatment { opiate_id: a.case.treatment };
    let curve = cadr_curve(&bundle.cadr, &x, t, a.case.weights)?;
    write_atomic(&a.out, &curve_csv_bytes(&curve)?)?;
    print_json(out, &serde_json::json!({ "out": a.out, "points": curve.len() }))
}

/// Parses `args` (program name first) and runs the command, writing its
/// report to `out`.
pub fn run<I, T>(args: I, out: &mut dyn Write) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) if matches!(e.kind(), clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion) => {
            return write!(out, "{e}").map_err(|e| CliError::Usage(e.to_string()));
        }
        Err(e) => return Err(CliError::Usage(e.render().to_string())),
    };
    match cli.command {
        Command::Generate(a) => generate(a, out),
        Command::Train(a) => train(a, out),
        Command::Evaluate(a) => evaluate(a, out),
        Command::Recommend(a) => recommend(a, out),
        Command::Diagnose(a) => diagnose(a, out),
        Command::Curves(a) => curves(a, out),
    }
}
