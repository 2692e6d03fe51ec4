//! Command-line entry point: data generation, training, evaluation, figures,
//! gradient checks and hyperparameter search, each leaving a manifest.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::autodiff::gradcheck::{primitive_suite, GradCheckRow};
use crate::baselines::{fit_mnl, FieldRanker, MnlOptions};
use crate::checkpoint::AnyModel;
use crate::choice::ChoiceDistribution;
use crate::data::{index_sessions, read_sessions, write_sessions, FeatureSchema, Session};
use crate::datagen::{
    airline_schema, airline_synthetic, all_subsets, context_indexed, context_item, context_schema,
    context_session, context_sessions, indexed_schema, indexed_to_sessions, sample_sessions, AirlineOptions,
    ContextModel, ContextOracle, GroundTruthModel, SetGenerator, CONTEXT_UNIVERSE, ITEM_FIELD,
};
use crate::error::{PcmcError, Result};
use crate::eval::{evaluate_model, evaluate_ranker, heatmap, EvalReport, DEFAULT_GRID};
use crate::mle::{aggregate_counts, fit_mle, MleModel, MleOptions};
use crate::model::ModelKind;
use crate::net::{gradcheck::end_to_end_suite, random_search, train, write_log_csv, Activation, ArchitectureConfig, SearchSpace};

pub const MANIFEST: &str = "manifest.json";
/// Heatmaps whose range falls below this are reported as constant.
pub const CONSTANT_FIELD_TOL: f64 = 1e-10;

#[derive(Parser, Debug)]
#[command(name = "pcmc", version, about = "Pairwise choice Markov chains: data, training, evaluation")]
pub struct Cli {
    /// Cap on evaluation parallelism (recorded; evaluation is sequential).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// JSON file of architecture/optimizer fields; flags win on conflict.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic dataset with its schema.
    Datagen(DatagenArgs),
    /// Train a model and write a checkpoint.
    Train(TrainArgs),
    /// Evaluate a checkpoint (or a built-in ranker) on a test set.
    Eval(EvalArgs),
    /// Preference-for-a heatmap of a model on the context experiment.
    Heatmap(HeatmapArgs),
    /// Finite-difference check of every gradient rule.
    Gradcheck(GradcheckArgs),
    /// Seeded random hyperparameter search.
    Search(SearchArgs),
    /// Re-run a command from its manifest and compare metrics.
    Replay(ReplayArgs),
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DataKind {
    Rps,
    RandomPcmc,
    Context,
    Airline,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    Airline,
    Synthetic,
}

#[derive(Args, Debug)]
pub struct DatagenArgs {
    #[arg(long, value_enum)]
    pub kind: DataKind,
    /// Number of sessions.
    #[arg(long)]
    pub n: usize,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// RPS preference strength.
    #[arg(long, default_value_t = 0.75)]
    pub alpha: f64,
    /// Universe size of a random PCMC.
    #[arg(long, default_value_t = 10)]
    pub universe: usize,
    /// Largest choice set (random-pcmc and airline).
    #[arg(long, default_value_t = crate::choice::DEFAULT_MAX_SET_SIZE)]
    pub max_set_size: usize,
    /// Context oracle: utility-difference slope.
    #[arg(long)]
    pub beta: Option<f64>,
    /// Context oracle: dominance boost.
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Probability of a one-alternative airline session.
    #[arg(long)]
    pub singleton_probability: Option<f64>,
    /// Held-out fraction written to test.jsonl (airline default 0.2).
    #[arg(long)]
    pub test_fraction: Option<f64>,
}

/// Architecture and optimizer overrides shared by `train` and `search`.
#[derive(Args, Debug, Clone, Default)]
pub struct ArchFlags {
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub nodes: Option<usize>,
    #[arg(long)]
    pub activation: Option<String>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub min_delta: Option<f64>,
    #[arg(long)]
    pub refit: bool,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long, value_parser = parse_kind)]
    pub model: ModelKind,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub schema: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Alternative field naming the universe item (pcmc-mle).
    #[arg(long, default_value = ITEM_FIELD)]
    pub item_field: String,
    #[command(flatten)]
    pub arch: ArchFlags,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Built-in model to evaluate when no checkpoint is given.
    #[arg(long, value_parser = parse_kind)]
    pub model: Option<ModelKind>,
    #[arg(long)]
    pub data: PathBuf,
    /// Required without a checkpoint; must match the checkpoint otherwise.
    #[arg(long)]
    pub schema: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also evaluate the uniform, cheapest and shortest baselines.
    #[arg(long)]
    pub rankers: bool,
}

#[derive(Args, Debug)]
pub struct HeatmapArgs {
    /// Checkpoint trained on context data; omit with --oracle.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Map the context oracle itself.
    #[arg(long)]
    pub oracle: bool,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_GRID)]
    pub grid: usize,
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 100)]
    pub trials: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SearchArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub schema: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 25)]
    pub budget: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub arch: ArchFlags,
}

#[derive(Args, Debug)]
pub struct ReplayArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Output directory of the re-run (defaults to `<original out>/replay`).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn parse_kind(s: &str) -> std::result::Result<ModelKind, String> {
    ModelKind::parse(s).map_err(|e| e.to_string())
}

/// Record of one invocation: enough to re-run it and check its results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    /// Full argument vector, program name excluded.
    pub argv: Vec<String>,
    pub seed: u64,
    pub threads: Option<usize>,
    /// Resolved configuration of the run.
    pub config: Value,
    /// sha256 of every input file, by path as given.
    pub inputs: BTreeMap<String, String>,
    /// sha256 of every output file, by file name.
    pub outputs: BTreeMap<String, String>,
    pub metrics: BTreeMap<String, f64>,
}

impl Manifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = fs::read_to_string(&path).map_err(|e| PcmcError::io(&path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

pub fn sha256_file(path: impl AsRef<Path>) -> Result<String> {
    let bytes = fs::read(&path).map_err(|e| PcmcError::io(&path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn require_file(path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(PcmcError::io(path, std::io::Error::new(std::io::ErrorKind::NotFound, "input file not found")))
    }
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| PcmcError::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").map_err(|e| PcmcError::io(path, e))
}

struct Run {
    command: &'static str,
    argv: Vec<String>,
    seed: u64,
    threads: Option<usize>,
    config: Value,
    out: PathBuf,
    inputs: Vec<PathBuf>,
    outputs: Vec<String>,
    metrics: BTreeMap<String, f64>,
}

impl Run {
    fn new(command: &'static str, ctx: &Context, seed: u64, out: &Path) -> Result<Self> {
        create_dir(out)?;
        Ok(Run {
            command,
            argv: ctx.argv.clone(),
            seed,
            threads: ctx.threads,
            config: Value::Null,
            out: out.to_path_buf(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            metrics: BTreeMap::new(),
        })
    }

    fn input(&mut self, path: &Path) -> Result<()> {
        require_file(path)?;
        self.inputs.push(path.to_path_buf());
        Ok(())
    }

    fn path(&mut self, name: &str) -> PathBuf {
        self.outputs.push(name.to_string());
        self.out.join(name)
    }

    fn metric(&mut self, name: &str, value: f64) {
        self.metrics.insert(name.to_string(), value);
    }

    fn finish(self) -> Result<Manifest> {
        let mut inputs = BTreeMap::new();
        for p in &self.inputs {
            inputs.insert(p.display().to_string(), sha256_file(p)?);
        }
        let mut outputs = BTreeMap::new();
        for name in &self.outputs {
            outputs.insert(name.clone(), sha256_file(self.out.join(name))?);
        }
        let manifest = Manifest {
            command: self.command.to_string(),
            argv: self.argv,
            seed: self.seed,
            threads: self.threads,
            config: self.config,
            inputs,
            outputs,
            metrics: self.metrics,
        };
        write_json(&self.out.join(MANIFEST), &manifest)?;
        Ok(manifest)
    }
}

struct Context {
    argv: Vec<String>,
    threads: Option<usize>,
    config: Option<PathBuf>,
}

/// Preset, then the JSON config file, then explicit flags.
fn resolve_config(flags: &ArchFlags, file: Option<&Path>, seed: Option<u64>) -> Result<ArchitectureConfig> {
    let base = match flags.preset {
        Some(Preset::Synthetic) => ArchitectureConfig::synthetic(),
        _ => ArchitectureConfig::airline(),
    };
    let mut c = match file {
        Some(path) => {
            require_file(path)?;
            let text = fs::read_to_string(path).map_err(|e| PcmcError::io(path, e))?;
            let overlay: Value = serde_json::from_str(&text)?;
            let Value::Object(overlay) = overlay else {
                return Err(PcmcError::InvalidParameter("config file must hold a JSON object".into()));
            };
            let mut merged = serde_json::to_value(&base)?;
            if let Value::Object(m) = &mut merged {
                for (k, v) in overlay {
                    if !m.contains_key(&k) {
                        return Err(PcmcError::InvalidParameter(format!("unknown config field '{k}'")));
                    }
                    m.insert(k, v);
                }
            }
            serde_json::from_value(merged)?
        }
        None => base,
    };
    if let Some(v) = flags.epochs {
        c.max_epochs = v;
    }
    if let Some(v) = flags.lr {
        c.learning_rate = v;
    }
    if let Some(v) = flags.batch {
        c.batch_size = v;
    }
    if let Some(v) = flags.hidden {
        c.hidden_layers = v;
    }
    if let Some(v) = flags.nodes {
        c.nodes_per_layer = v;
    }
    if let Some(v) = &flags.activation {
        c.activation = Activation::parse(v)?;
    }
    if let Some(v) = flags.epsilon {
        c.epsilon = v;
    }
    if let Some(v) = flags.dropout {
        c.dropout = v;
    }
    if let Some(v) = flags.patience {
        c.patience = v;
    }
    if let Some(v) = flags.min_delta {
        c.min_delta = v;
    }
    if flags.refit {
        c.refit = true;
    }
    if let Some(s) = seed {
        c.seed = s;
    }
    c.validate()?;
    Ok(c)
}

fn oracle(beta: Option<f64>, gamma: Option<f64>) -> ContextOracle {
    let d = ContextOracle::default();
    ContextOracle {
        beta: beta.unwrap_or(d.beta),
        gamma: gamma.unwrap_or(d.gamma),
    }
}

fn cmd_datagen(ctx: &Context, a: &DatagenArgs) -> Result<Manifest> {
    if a.n == 0 {
        return Err(PcmcError::InvalidParameter("--n must be >= 1".into()));
    }
    let mut run = Run::new("datagen", ctx, a.seed, &a.out)?;
    let (schema, sessions, params) = match a.kind {
        DataKind::Rps => {
            let truth = GroundTruthModel::Rps { alpha: a.alpha };
            let sets = SetGenerator::Cycle {
                sets: all_subsets(3, 2),
            };
            let data = sample_sessions(&truth, &sets, a.n, a.seed)?;
            (indexed_schema(3), indexed_to_sessions(&data), serde_json::json!({ "truth": truth }))
        }
        DataKind::RandomPcmc => {
            let truth = GroundTruthModel::RandomPcmc {
                n: a.universe,
                seed: a.seed,
            };
            let sets = SetGenerator::RandomSubset {
                universe: a.universe,
                min: 2.min(a.universe),
                max: a.max_set_size.min(a.universe),
            };
            let data = sample_sessions(&truth, &sets, a.n, a.seed)?;
            (
                indexed_schema(a.universe),
                indexed_to_sessions(&data),
                serde_json::json!({ "truth": truth, "max_set_size": a.max_set_size }),
            )
        }
        DataKind::Context => {
            let o = oracle(a.beta, a.gamma);
            let data = context_sessions(&o, a.n, a.seed)?;
            (context_schema(), data, serde_json::json!({ "oracle": o }))
        }
        DataKind::Airline => {
            let opts = AirlineOptions {
                max_set_size: a.max_set_size,
                singleton_probability: a.singleton_probability,
                ..Default::default()
            };
            let schema = airline_schema();
            let (data, _) = airline_synthetic(&schema, a.n, &opts, a.seed)?;
            (schema, data, serde_json::json!({ "airline": opts }))
        }
    };
    let test_fraction = a
        .test_fraction
        .unwrap_or(if a.kind == DataKind::Airline { 0.2 } else { 0.0 });
    if !(0.0..1.0).contains(&test_fraction) {
        return Err(PcmcError::InvalidParameter(format!("test fraction {test_fraction}")));
    }
    schema.save(run.path("schema.json"))?;
    write_sessions(run.path("data.jsonl"), &schema, &sessions)?;
    // Sessions are drawn independently, so a prefix split is an i.i.d. split.
    let n_train = ((1.0 - test_fraction) * sessions.len() as f64).floor() as usize;
    if test_fraction > 0.0 {
        write_sessions(run.path("train.jsonl"), &schema, &sessions[..n_train])?;
        write_sessions(run.path("test.jsonl"), &schema, &sessions[n_train..])?;
    }
    run.config = serde_json::json!({
        "kind": a.kind,
        "n": a.n,
        "test_fraction": test_fraction,
        "params": params,
    });
    run.metric("sessions", sessions.len() as f64);
    run.metric("train_sessions", n_train as f64);
    let mean_size = sessions.iter().map(Session::len).sum::<usize>() as f64 / sessions.len() as f64;
    run.metric("mean_set_size", mean_size);
    log::info!("wrote {} sessions to {}", sessions.len(), a.out.display());
    run.finish()
}

fn is_context_schema(schema: &FeatureSchema) -> bool {
    *schema == context_schema()
}

fn cmd_train(ctx: &Context, a: &TrainArgs) -> Result<Manifest> {
    require_file(&a.data)?;
    require_file(&a.schema)?;
    let config = resolve_config(&a.arch, ctx.config.as_deref(), a.seed)?;
    let mut run = Run::new("train", ctx, config.seed, &a.out)?;
    run.input(&a.schema)?;
    run.input(&a.data)?;
    let schema = FeatureSchema::load(&a.schema)?;
    let sessions = read_sessions(&a.data, &schema)?;
    if sessions.is_empty() {
        return Err(PcmcError::InvalidParameter("training set is empty".into()));
    }
    let model = match a.model {
        ModelKind::PcmcNet => {
            let outcome = train(&schema, &sessions, &config)?;
            write_log_csv(run.path("log.csv"), &outcome.log)?;
            if !outcome.refit_log.is_empty() {
                write_log_csv(run.path("refit_log.csv"), &outcome.refit_log)?;
            }
            run.config = serde_json::to_value(&config)?;
            run.metric("best_epoch", outcome.best_epoch as f64);
            if let Some(v) = outcome.best_validation_nll {
                run.metric("best_validation_nll", v);
            }
            if let Some(last) = outcome.log.last() {
                run.metric("final_train_nll", last.train_nll);
            }
            run.metric("floored_logs", outcome.floored_logs as f64);
            run.metric("singular_sessions", outcome.singular_sessions as f64);
            AnyModel::PcmcNet(outcome.model)
        }
        ModelKind::Mnl => {
            let opts = MnlOptions::default();
            let fit = fit_mnl(&schema, &sessions, &opts)?;
            if fit.separated {
                log::warn!("MNL weights diverge (norm above separation threshold); data may be separable");
            }
            run.config = serde_json::to_value(&opts)?;
            run.metric("log_likelihood", fit.log_likelihood);
            run.metric("gradient_norm", fit.gradient_norm);
            run.metric("iterations", fit.iterations as f64);
            AnyModel::Mnl(fit.model)
        }
        ModelKind::PcmcMle => {
            let opts = MleOptions {
                seed: config.seed,
                ..Default::default()
            };
            // Two-attribute context data is discretized onto the 66-item
            // universe; other data must name its items.
            let (universe, indexed, model_schema, field) = if is_context_schema(&schema) {
                (CONTEXT_UNIVERSE, context_indexed(&sessions)?, indexed_schema(CONTEXT_UNIVERSE), ITEM_FIELD)
            } else {
                let (u, idx) = index_sessions(&schema, &sessions, &a.item_field)?;
                (u, idx, schema.clone(), a.item_field.as_str())
            };
            let fit = fit_mle(&aggregate_counts(universe, &indexed)?, &opts)?;
            run.config = serde_json::to_value(&opts)?;
            run.metric("objective", fit.objective);
            run.metric("best_restart", fit.best_restart as f64);
            AnyModel::PcmcMle(MleModel::new(model_schema, field, fit.rates)?)
        }
        other => {
            return Err(PcmcError::InvalidParameter(format!("{other} has nothing to train")));
        }
    };
    model.save(run.path("checkpoint.json"))?;
    run.finish()
}

fn record_report(run: &mut Run, prefix: &str, r: &EvalReport) {
    if let Some(v) = r.nll {
        run.metric(&format!("{prefix}nll"), v);
    }
    run.metric(&format!("{prefix}top1"), r.top1);
    run.metric(&format!("{prefix}top5"), r.top5);
    run.metric(&format!("{prefix}top1_mean"), r.top1_mean);
    run.metric(&format!("{prefix}top5_mean"), r.top5_mean);
}

fn evaluate_any(model: &AnyModel, sessions: &[Session], seed: u64) -> Result<EvalReport> {
    match model.as_choice_model() {
        Some(m) => evaluate_model(m, sessions, seed),
        None => evaluate_ranker(model.kind(), model.as_ranker(), sessions, seed),
    }
}

fn cmd_eval(ctx: &Context, a: &EvalArgs) -> Result<Manifest> {
    require_file(&a.data)?;
    let mut run = Run::new("eval", ctx, a.seed, &a.out)?;
    run.input(&a.data)?;
    let (model, config_hash) = match (&a.checkpoint, a.model) {
        (Some(path), _) => {
            run.input(path)?;
            let model = AnyModel::load(path)?;
            if let Some(schema_path) = &a.schema {
                run.input(schema_path)?;
                if FeatureSchema::load(schema_path)? != *model.schema() {
                    return Err(PcmcError::Schema("checkpoint schema does not match --schema".into()));
                }
            }
            if let Some(kind) = a.model {
                if kind != model.kind() {
                    return Err(PcmcError::Schema(format!("--model {kind} but checkpoint holds {}", model.kind())));
                }
            }
            (model, Some(sha256_file(path)?))
        }
        (None, Some(kind)) => {
            let schema_path = a
                .schema
                .as_ref()
                .ok_or_else(|| PcmcError::InvalidParameter("--schema is required without a checkpoint".into()))?;
            run.input(schema_path)?;
            (builtin(kind, FeatureSchema::load(schema_path)?)?, None)
        }
        (None, None) => return Err(PcmcError::InvalidParameter("give --checkpoint or --model".into())),
    };
    let sessions = read_sessions(&a.data, model.schema())?;
    let mut report = evaluate_any(&model, &sessions, a.seed)?;
    report.config_hash = config_hash;
    record_report(&mut run, "", &report);
    write_json(&run.path("eval.json"), &report)?;
    println!("{}", summary_line(&report));
    if a.rankers {
        let mut reports = Vec::new();
        for kind in [ModelKind::Uniform, ModelKind::Cheapest, ModelKind::Shortest] {
            match builtin(kind, model.schema().clone()) {
                Ok(m) => {
                    let r = evaluate_any(&m, &sessions, a.seed)?;
                    println!("{}", summary_line(&r));
                    record_report(&mut run, &format!("{}.", kind.tag()), &r);
                    reports.push(r);
                }
                Err(e) => log::warn!("skipping {kind}: {e}"),
            }
        }
        write_json(&run.path("rankers.json"), &reports)?;
    }
    run.config = serde_json::json!({ "model_kind": model.kind(), "seed": a.seed });
    run.finish()
}

fn builtin(kind: ModelKind, schema: FeatureSchema) -> Result<AnyModel> {
    match kind {
        ModelKind::Uniform => Ok(AnyModel::Uniform(schema)),
        ModelKind::Cheapest => Ok(AnyModel::Field(FieldRanker::cheapest(&schema)?, schema)),
        ModelKind::Shortest => Ok(AnyModel::Field(FieldRanker::shortest(&schema)?, schema)),
        other => Err(PcmcError::InvalidParameter(format!("{other} needs a checkpoint"))),
    }
}

fn summary_line(r: &EvalReport) -> String {
    let nll = r.nll.map_or_else(|| "-".to_string(), |v| format!("{v:.4}"));
    format!(
        "{:<9} nll {nll}  top1 {:.4} (mean {:.4})  top5 {:.4} (mean {:.4})  n={}",
        r.model_kind.tag(),
        r.top1,
        r.top1_mean,
        r.top5,
        r.top5_mean,
        r.sessions
    )
}

/// A checkpoint viewed as a distribution over `{a, b, c}` for context point `c`.
struct CheckpointContext<'a>(&'a AnyModel);

impl ContextModel for CheckpointContext<'_> {
    fn context_distribution(&self, c: [f64; 2]) -> Result<ChoiceDistribution> {
        match self.0 {
            AnyModel::PcmcMle(m) if m.rates.n() == CONTEXT_UNIVERSE => m.predict_indexed(&[0, 1, context_item(c)?]),
            other => {
                let m = other
                    .as_choice_model()
                    .ok_or_else(|| PcmcError::InvalidParameter(format!("{} is not probabilistic", other.kind())))?;
                m.predict(&context_session(c, 0))
            }
        }
    }
}

fn cmd_heatmap(ctx: &Context, a: &HeatmapArgs) -> Result<Manifest> {
    let mut run = Run::new("heatmap", ctx, 0, &a.out)?;
    let map = match (&a.checkpoint, a.oracle) {
        (Some(path), false) => {
            run.input(path)?;
            let model = AnyModel::load(path)?;
            let is_context_mle = matches!(&model, AnyModel::PcmcMle(m) if m.rates.n() == CONTEXT_UNIVERSE);
            if !is_context_schema(model.schema()) && !is_context_mle {
                return Err(PcmcError::Schema("heatmaps need a model of the two-attribute context data".into()));
            }
            run.config = serde_json::json!({ "model_kind": model.kind(), "grid": a.grid });
            heatmap(&CheckpointContext(&model), a.grid)?
        }
        (None, true) => {
            let o = oracle(a.beta, a.gamma);
            run.config = serde_json::json!({ "oracle": o, "grid": a.grid });
            heatmap(&o, a.grid)?
        }
        _ => return Err(PcmcError::InvalidParameter("give exactly one of --checkpoint and --oracle".into())),
    };
    if map.range() < CONSTANT_FIELD_TOL {
        log::warn!("constant field detected: preference range {:.3e}", map.range());
    }
    map.write(run.path("heatmap.csv"), run.path("heatmap.pgm"))?;
    run.metric("min", map.min());
    run.metric("max", map.max());
    run.metric("range", map.range());
    run.finish()
}

fn cmd_gradcheck(ctx: &Context, a: &GradcheckArgs) -> Result<(Option<Manifest>, bool)> {
    let mut rows: Vec<GradCheckRow> = primitive_suite(a.trials, a.seed)?;
    rows.push(end_to_end_suite(a.trials, a.seed)?);
    let mut table = String::from("check,trials,max_rel_err,tolerance,status\n");
    println!("{:<24} {:>7} {:>12} {:>10}  status", "check", "trials", "max rel err", "tolerance");
    for r in &rows {
        let status = if r.passed() { "pass" } else { "FAIL" };
        println!("{:<24} {:>7} {:>12.3e} {:>10.0e}  {status}", r.name, r.trials, r.max_rel_err, r.tolerance);
        table += &format!("{},{},{:e},{:e},{status}\n", r.name, r.trials, r.max_rel_err, r.tolerance);
    }
    let passed = rows.iter().all(GradCheckRow::passed);
    let manifest = match &a.out {
        Some(out) => {
            let mut run = Run::new("gradcheck", ctx, a.seed, out)?;
            let path = run.path("gradcheck.csv");
            fs::write(&path, table).map_err(|e| PcmcError::io(&path, e))?;
            for r in &rows {
                run.metric(&r.name, r.max_rel_err);
            }
            run.config = serde_json::json!({ "trials": a.trials });
            Some(run.finish()?)
        }
        None => None,
    };
    Ok((manifest, passed))
}

fn cmd_search(ctx: &Context, a: &SearchArgs) -> Result<Manifest> {
    require_file(&a.data)?;
    require_file(&a.schema)?;
    let base = resolve_config(&a.arch, ctx.config.as_deref(), a.seed)?;
    let mut run = Run::new("search", ctx, base.seed, &a.out)?;
    run.input(&a.schema)?;
    run.input(&a.data)?;
    let schema = FeatureSchema::load(&a.schema)?;
    let sessions = read_sessions(&a.data, &schema)?;
    let space = SearchSpace::default();
    let result = random_search(&schema, &sessions, &base, &space, a.budget, base.seed)?;
    let mut csv = String::from(
        "rank,trial,validation_nll,epochs,learning_rate,batch_size,hidden_layers,nodes_per_layer,activation,error\n",
    );
    for (rank, t) in result.leaderboard.iter().enumerate() {
        csv += &format!(
            "{},{},{},{},{:e},{},{},{},{},{}\n",
            rank + 1,
            t.trial,
            t.validation_nll.map_or_else(String::new, |v| v.to_string()),
            t.epochs,
            t.config.learning_rate,
            t.config.batch_size,
            t.config.hidden_layers,
            t.config.nodes_per_layer,
            t.config.activation.name(),
            t.error.as_deref().unwrap_or("").replace([',', '\n'], ";"),
        );
    }
    let path = run.path("leaderboard.csv");
    fs::write(&path, csv).map_err(|e| PcmcError::io(&path, e))?;
    write_json(&run.path("best_config.json"), &result.best)?;
    if let Some(v) = result.leaderboard.first().and_then(|t| t.validation_nll) {
        run.metric("best_validation_nll", v);
    }
    run.config = serde_json::json!({ "base": base, "space": space, "budget": a.budget });
    run.finish()
}

/// Compare re-run metrics with recorded ones to 1e-9 and datagen outputs
/// byte for byte.
pub fn compare_manifests(old: &Manifest, new: &Manifest) -> Vec<String> {
    let mut problems = Vec::new();
    for (k, v) in &old.metrics {
        match new.metrics.get(k) {
            Some(w) if (v - w).abs() <= 1e-9 || (v.is_nan() && w.is_nan()) => {}
            Some(w) => problems.push(format!("metric {k}: {v} vs {w}")),
            None => problems.push(format!("metric {k} missing")),
        }
    }
    if old.command == "datagen" && old.outputs != new.outputs {
        problems.push("dataset digests differ".into());
    }
    problems
}

fn cmd_replay(a: &ReplayArgs) -> Result<bool> {
    let old = Manifest::load(&a.manifest)?;
    let original_out = a.manifest.parent().unwrap_or(Path::new("."));
    let out = a.out.clone().unwrap_or_else(|| original_out.join("replay"));
    let mut argv = Vec::with_capacity(old.argv.len() + 2);
    let mut it = old.argv.iter();
    while let Some(arg) = it.next() {
        if arg == "--out" {
            it.next();
        } else if !arg.starts_with("--out=") {
            argv.push(arg.clone());
        }
    }
    argv.push("--out".into());
    argv.push(out.display().to_string());
    run_args(&argv)?;
    let new = Manifest::load(out.join(MANIFEST))?;
    let problems = compare_manifests(&old, &new);
    for p in &problems {
        eprintln!("mismatch: {p}");
    }
    if problems.is_empty() {
        println!("replay reproduced {} metrics", old.metrics.len());
    }
    Ok(problems.is_empty())
}

/// Outcome of a command that ran to completion.
#[derive(Debug)]
pub enum Outcome {
    Done(Option<Manifest>),
    /// A check ran but did not pass (gradcheck, replay).
    Failed,
}

/// Run with an explicit argument vector (program name excluded).
pub fn run_args<S: AsRef<str>>(argv: &[S]) -> Result<Outcome> {
    let argv: Vec<String> = argv.iter().map(|s| s.as_ref().to_string()).collect();
    let full = std::iter::once("pcmc".to_string()).chain(argv.iter().cloned());
    let cli = Cli::try_parse_from(full).map_err(|e| PcmcError::InvalidParameter(e.to_string()))?;
    dispatch(cli, argv)
}

fn dispatch(cli: Cli, argv: Vec<String>) -> Result<Outcome> {
    let ctx = Context {
        argv,
        threads: cli.threads,
        config: cli.config,
    };
    if ctx.threads == Some(0) {
        return Err(PcmcError::InvalidParameter("--threads must be >= 1".into()));
    }
    let done = |m: Manifest| Ok(Outcome::Done(Some(m)));
    match &cli.command {
        Command::Datagen(a) => done(cmd_datagen(&ctx, a)?),
        Command::Train(a) => done(cmd_train(&ctx, a)?),
        Command::Eval(a) => done(cmd_eval(&ctx, a)?),
        Command::Heatmap(a) => done(cmd_heatmap(&ctx, a)?),
        Command::Search(a) => done(cmd_search(&ctx, a)?),
        Command::Gradcheck(a) => match cmd_gradcheck(&ctx, a)? {
            (m, true) => Ok(Outcome::Done(m)),
            (_, false) => Ok(Outcome::Failed),
        },
        Command::Replay(a) => Ok(if cmd_replay(a)? { Outcome::Done(None) } else { Outcome::Failed }),
    }
}

/// Process entry point; returns the exit code.
pub fn main_with_args(args: impl IntoIterator<Item = OsString>) -> i32 {
    let args: Vec<OsString> = args.into_iter().collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let argv = args.iter().skip(1).map(|a| a.to_string_lossy().into_owned()).collect();
    match dispatch(cli, argv) {
        Ok(Outcome::Done(_)) => 0,
        Ok(Outcome::Failed) => 3,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
