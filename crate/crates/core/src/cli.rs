//! Command-line front end: `synth`, `train (baseline|grbm)`, `infer`, `eval`.
//!
//! Exit codes: 0 success, 2 usage, 3 data, 4 numeric divergence. Failures
//! print one JSON line on stderr, e.g.
//! `{"error":"data","code":3,"message":"..."}`.

use std::ffi::OsString;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{config_digest, evaluate, majority_estimates, per_attribute_decision, EvalReport};
use crate::grbm::{grbm_estimates, train_grbm, GrbmDocument, GrbmModel};
use crate::model::{Dataset, RbmParameters, SourceId, TrainingConfig, TruthEstimate};
use crate::network::{Activation, NetworkSpec};
use crate::pipeline::encode::{one_hot_encode_with, EncodeOptions, EncodingManifest, NegativePolicy};
use crate::pipeline::features::{apply_frozen, compute_features, FeatureRecipe, FrozenRecipe};
use crate::pipeline::ingest::{ingest, ClaimFormat, RawClaimRow};
use crate::pipeline::truth::load_ground_truth;
use crate::rbm::{baseline_estimates, train_baseline};
use crate::synth::{generate, ScenarioSpec};

pub const MODEL_FORMAT_VERSION: u32 = 1;

pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_DIVERGENCE: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "veritas", version, about = "Latent truth discovery from conflicting claims")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic corpus with planted truth.
    Synth(SynthArgs),
    /// Train a model on a claim file.
    Train(TrainArgs),
    /// Write statement plausibilities for a claim file.
    Infer(InferArgs),
    /// Score a model (or majority vote when no model is given) against ground truth.
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Scenario JSON.
    #[arg(long)]
    pub spec: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the scenario seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum, default_value_t = FileFormat::Csv)]
    pub format: FileFormat,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FileFormat {
    Csv,
    Jsonl,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum EngineKind {
    Baseline,
    Grbm,
}

#[derive(Debug, Args)]
pub struct InputArgs {
    #[arg(long)]
    pub claims: PathBuf,
    /// Drop malformed rows and unresolvable conflicts instead of failing.
    #[arg(long)]
    pub lenient: bool,
    /// Worker threads; 1 runs everything serially.
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(value_enum)]
    pub engine: EngineKind,
    #[command(flatten)]
    pub input: InputArgs,
    /// Model file to write.
    #[arg(long)]
    pub out: PathBuf,
    /// JSON file with training settings; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub cd_steps: Option<usize>,
    /// Hidden layer widths, comma separated; `none` for a linear network.
    #[arg(long)]
    pub hidden: Option<String>,
    #[arg(long)]
    pub activation: Option<Activation>,
    /// `implicit-negatives` or `positives-only`.
    #[arg(long)]
    pub policy: Option<NegativePolicy>,
    /// `stats`, `auto`, or a recipe JSON file.
    #[arg(long)]
    pub recipe: Option<String>,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long)]
    pub model: PathBuf,
    /// Estimates CSV; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long)]
    pub truth: PathBuf,
    /// Model to score; majority vote when omitted.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Report file; `.csv` gives CSV, anything else JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Negative-claim policy for majority vote (models carry their own).
    #[arg(long)]
    pub policy: Option<NegativePolicy>,
}

/// Settings a config file may carry.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ConfigFile {
    #[serde(default)]
    pub training: TrainingConfig,
    #[serde(default)]
    pub hidden: Option<Vec<usize>>,
    #[serde(default)]
    pub activation: Option<Activation>,
    #[serde(default)]
    pub policy: Option<NegativePolicy>,
    #[serde(default)]
    pub recipe: Option<String>,
}

/// Fully resolved settings of a training run; its digest identifies the run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub engine: EngineKind,
    pub training: TrainingConfig,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub policy: NegativePolicy,
    pub recipe: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", content = "model", rename_all = "lowercase")]
pub enum EngineModel {
    Baseline {
        sources: Vec<SourceId>,
        params: RbmParameters<f64>,
        config: TrainingConfig,
    },
    Grbm(GrbmDocument<f64>),
}

/// Everything needed to score new claims: encoding policy, frozen feature
/// statistics and the trained parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelFile {
    pub format_version: u32,
    pub config_digest: String,
    pub run: RunConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recipe: Option<FrozenRecipe>,
    pub engine: EngineModel,
}

impl ModelFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let model: ModelFile = serde_json::from_str(&text)?;
        if model.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::ModelFormat(format!(
                "unsupported model format version {}",
                model.format_version
            )));
        }
        Ok(model)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    fn method(&self) -> &'static str {
        match self.engine {
            EngineModel::Baseline { .. } => "baseline",
            EngineModel::Grbm(_) => "grbm",
        }
    }

    /// Plausibilities for an encoded dataset. Sources the baseline never saw
    /// get the prior reliability.
    pub fn estimates(&self, dataset: Dataset, rows: &[RawClaimRow], manifest: &EncodingManifest) -> Result<Vec<TruthEstimate>> {
        match &self.engine {
            EngineModel::Baseline { sources, params, config } => {
                let prior = RbmParameters::<f64>::from_rates(1, config.pretrain_tpr, config.pretrain_fpr)?;
                let mut p = RbmParameters::<f64>::zeros(dataset.n_sources());
                p.b0 = params.b0;
                let mut unseen = 0;
                for (i, s) in dataset.sources().iter().enumerate() {
                    match sources.binary_search(s) {
                        Ok(k) => {
                            p.a[i] = params.a[k];
                            p.w[i] = params.w[k];
                            p.b_src[i] = params.b_src[k];
                        }
                        Err(_) => {
                            unseen += 1;
                            p.a[i] = prior.a[0];
                            p.w[i] = prior.w[0];
                        }
                    }
                }
                if unseen > 0 {
                    log::warn!("{unseen} sources not seen in training use the prior reliability");
                }
                baseline_estimates(&p, &dataset)
            }
            EngineModel::Grbm(doc) => {
                let recipe = self
                    .recipe
                    .as_ref()
                    .ok_or_else(|| Error::ModelFormat("grbm model lacks a feature recipe".into()))?;
                let dataset = apply_frozen(dataset, rows, manifest, recipe)?;
                let model = GrbmModel::from_document(doc.clone())?;
                grbm_estimates(&model, &dataset)
            }
        }
    }
}

fn read_claims(input: &InputArgs, policy: NegativePolicy) -> Result<(Vec<RawClaimRow>, Dataset, EncodingManifest)> {
    let rows = ingest(&input.claims, ClaimFormat::from_path(&input.claims), input.lenient)?;
    let (dataset, manifest) = one_hot_encode_with(
        &rows,
        EncodeOptions {
            policy,
            lenient: input.lenient,
        },
    )?;
    log::info!(
        "{}: {} rows, {} statements, {} claims, {} sources",
        input.claims.display(),
        rows.len(),
        dataset.bundles().len(),
        dataset.n_claims(),
        dataset.n_sources()
    );
    Ok((rows, dataset, manifest))
}

fn require_file(path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::io(path, std::io::Error::new(std::io::ErrorKind::NotFound, "no such file")))
    }
}

fn require_parent(path: &Path) -> Result<()> {
    match path.parent().filter(|p| !p.as_os_str().is_empty()) {
        Some(dir) if !dir.is_dir() => Err(Error::io(
            dir,
            std::io::Error::new(std::io::ErrorKind::NotFound, "output directory does not exist"),
        )),
        _ => Ok(()),
    }
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn parse_hidden(text: &str) -> Result<Vec<usize>> {
    let text = text.trim();
    if text.is_empty() || text == "none" {
        return Ok(Vec::new());
    }
    text.split(',')
        .map(|w| {
            w.trim()
                .parse::<usize>()
                .ok()
                .filter(|&n| n > 0)
                .ok_or_else(|| Error::InvalidConfig(format!("bad hidden layer width {w:?}")))
        })
        .collect()
}

fn resolve_run(args: &TrainArgs) -> Result<RunConfig> {
    let file = match &args.config {
        Some(path) => {
            require_file(path)?;
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            serde_json::from_str::<ConfigFile>(&text)
                .map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?
        }
        None => ConfigFile::default(),
    };
    let mut training = file.training;
    if let Some(seed) = args.seed {
        training.rng_seed = seed;
    }
    if let Some(epochs) = args.epochs {
        training.epochs = epochs;
    }
    if let Some(lr) = args.lr {
        training.learning_rate = lr;
    }
    if let Some(k) = args.cd_steps {
        training.cd_steps = k;
    }
    training.validate()?;
    let hidden = match &args.hidden {
        Some(text) => parse_hidden(text)?,
        None => file.hidden.unwrap_or_else(|| NetworkSpec::with_input(1).hidden_layers),
    };
    Ok(RunConfig {
        engine: args.engine,
        training,
        hidden,
        activation: args.activation.or(file.activation).unwrap_or(Activation::Tanh),
        policy: args.policy.or(file.policy).unwrap_or_default(),
        recipe: args.recipe.clone().or(file.recipe).unwrap_or_else(|| "auto".into()),
    })
}

fn cmd_synth(args: &SynthArgs) -> Result<String> {
    require_file(&args.spec)?;
    let text = std::fs::read_to_string(&args.spec).map_err(|e| Error::io(&args.spec, e))?;
    let mut spec: ScenarioSpec = serde_json::from_str(&text)?;
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    log::info!("synth seed {} digest {}", spec.seed, config_digest(&spec)?);
    let corpus = generate(&spec)?;
    let format = match args.format {
        FileFormat::Csv => ClaimFormat::Csv,
        FileFormat::Jsonl => ClaimFormat::Jsonl,
    };
    corpus.write(&args.out, format)?;
    Ok(format!(
        "wrote {} claims on {} statements from {} sources to {}\n",
        corpus.rows.len(),
        corpus.dataset.bundles().len(),
        corpus.sources.len(),
        args.out.display()
    ))
}

fn cmd_train(args: &TrainArgs) -> Result<String> {
    require_file(&args.input.claims)?;
    require_parent(&args.out)?;
    let run = resolve_run(args)?;
    let digest = config_digest(&run)?;
    log::info!("train {:?}: seed {} config digest {digest}", run.engine, run.training.rng_seed);
    let (rows, dataset, mut manifest) = read_claims(&args.input, run.policy)?;

    let (engine, recipe) = match run.engine {
        EngineKind::Baseline => {
            let params = train_baseline::<f64>(&dataset, &run.training)?;
            let engine = EngineModel::Baseline {
                sources: dataset.sources().to_vec(),
                params,
                config: run.training.clone(),
            };
            (engine, None)
        }
        EngineKind::Grbm => {
            let recipe = FeatureRecipe::resolve(&run.recipe, &rows)?;
            let dataset = compute_features(dataset, &rows, &mut manifest, &recipe)?;
            let spec = NetworkSpec {
                input_dim: dataset.feature_dim(),
                hidden_layers: run.hidden.clone(),
                activation: run.activation,
            };
            let model = train_grbm::<f64>(&dataset, &spec, &run.training)?;
            (EngineModel::Grbm(model.to_document()), manifest.features.clone())
        }
    };
    let file = ModelFile {
        format_version: MODEL_FORMAT_VERSION,
        config_digest: digest.clone(),
        run,
        recipe,
        engine,
    };
    write_file(&args.out, &file.to_json()?)?;
    Ok(format!(
        "trained {} on {} statements; config {digest}; model written to {}\n",
        file.method(),
        manifest.statements.len(),
        args.out.display()
    ))
}

fn cmd_infer(args: &InferArgs) -> Result<String> {
    require_file(&args.input.claims)?;
    require_file(&args.model)?;
    if let Some(out) = &args.out {
        require_parent(out)?;
    }
    let model = ModelFile::load(&args.model)?;
    log::info!("infer with {} model, config digest {}", model.method(), model.config_digest);
    let (rows, dataset, manifest) = read_claims(&args.input, model.run.policy)?;
    let estimates = model.estimates(dataset, &rows, &manifest)?;

    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["entity", "attribute", "value", "plausibility", "decision"])?;
    for e in &estimates {
        let key = &manifest.statements[e.statement_id.0];
        w.write_record([
            key.entity.as_str(),
            key.attribute.as_str(),
            key.value.as_str(),
            &e.plausibility.to_string(),
            if e.decision { "1" } else { "0" },
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Evaluation(e.to_string()))?;
    let text = String::from_utf8(bytes).map_err(|e| Error::Evaluation(e.to_string()))?;
    match &args.out {
        Some(out) => {
            write_file(out, &text)?;
            Ok(format!("wrote {} estimates to {}\n", estimates.len(), out.display()))
        }
        None => Ok(text),
    }
}

fn cmd_eval(args: &EvalArgs) -> Result<String> {
    require_file(&args.input.claims)?;
    require_file(&args.truth)?;
    if let Some(m) = &args.model {
        require_file(m)?;
    }
    if let Some(out) = &args.out {
        require_parent(out)?;
    }
    let model = args.model.as_deref().map(ModelFile::load).transpose()?;
    let policy = model.as_ref().map_or(args.policy.unwrap_or_default(), |m| m.run.policy);
    let (rows, dataset, manifest) = read_claims(&args.input, policy)?;
    let truth = load_ground_truth(&args.truth, &manifest)?;

    let (method, digest, estimates) = match &model {
        Some(m) => (m.method(), m.config_digest.clone(), m.estimates(dataset.clone(), &rows, &manifest)?),
        None => ("majority", config_digest(&policy)?, majority_estimates(&dataset)?),
    };
    log::info!("eval {method}: config digest {digest}");
    let decisions = per_attribute_decision(&estimates, &manifest)?;
    let report: EvalReport = evaluate(method, &digest, &decisions, &truth, &dataset, &manifest)?;
    if let Some(out) = &args.out {
        let is_csv = out.extension().is_some_and(|e| e == "csv");
        write_file(out, &if is_csv { report.to_csv()? } else { report.to_json()? })?;
    }
    Ok(report.to_table())
}

/// Exit code for an error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::NonFinite { .. } => EXIT_DIVERGENCE,
        Error::InvalidConfig(_) => EXIT_USAGE,
        _ => EXIT_DATA,
    }
}

#[derive(Serialize)]
struct ErrorLine<'a> {
    error: &'a str,
    code: i32,
    message: &'a str,
}

fn error_line(error: &str, code: i32, message: &str) -> String {
    serde_json::to_string(&ErrorLine { error, code, message }).unwrap_or_default()
}

fn execute(command: &Command) -> Result<String> {
    match command {
        Command::Synth(a) => cmd_synth(a),
        Command::Train(a) => cmd_train(a),
        Command::Infer(a) => cmd_infer(a),
        Command::Eval(a) => cmd_eval(a),
    }
}

fn threads(command: &Command) -> Option<usize> {
    match command {
        Command::Synth(_) => None,
        Command::Train(a) => a.input.threads,
        Command::Infer(a) => a.input.threads,
        Command::Eval(a) => a.input.threads,
    }
}

/// Parses `argv`, runs the command and returns the exit code. Normal output
/// goes to `out`, errors to `err`.
pub fn run<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            if e.use_stderr() {
                let _ = write!(err, "{}", e.render());
                let _ = writeln!(err, "{}", error_line("usage", EXIT_USAGE, &e.kind().to_string()));
                return EXIT_USAGE;
            }
            let _ = write!(out, "{}", e.render());
            return 0;
        }
    };
    let result = match threads(&cli.command) {
        Some(0) => Err(Error::InvalidConfig("--threads must be at least 1".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::InvalidConfig(e.to_string()))
            .and_then(|pool| pool.install(|| execute(&cli.command))),
        None => execute(&cli.command),
    };
    match result {
        Ok(text) => {
            let _ = write!(out, "{text}");
            0
        }
        Err(e) => {
            let code = exit_code(&e);
            let kind = match code {
                EXIT_USAGE => "usage",
                EXIT_DIVERGENCE => "divergence",
                _ => "data",
            };
            let _ = writeln!(err, "{}", error_line(kind, code, &e.to_string()));
            code
        }
    }
}

/// Entry point for the binary: sets up logging from `VERITAS_LOG`.
pub fn main_with_env() -> i32 {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("VERITAS_LOG", "info"))
        .format_timestamp(None)
        .init();
    let stdout = std::io::stdout();
    let mut out = BufWriter::new(stdout.lock());
    let code = run(std::env::args_os(), &mut out, &mut std::io::stderr());
    let _ = out.flush();
    code
}
