//! Command-line pipeline: generate synthetic corpora, derive benchmark
//! splits, train the fusion network, score candidates with prior injection,
//! and evaluate top-1 accuracy.
//!
//! Failures print a machine-readable `{"error": {"kind", "message"}}` object
//! to stderr and exit non-zero; outputs are written atomically so a failed
//! run never leaves partial files behind.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use refprior::dataset::{
    self, ingest, read_samples, samples_to_jsonl, write_atomic, Dataset, Predictions,
};
use refprior::derod::{sample_few_shot, sample_low_data, SplitSpec};
use refprior::fusion::{predict, train_fusion, FusionNet, PredictMode, TrainingSample};
use refprior::matching::{build_cost, hungarian, LossWeights};
use refprior::phrase::parse_terms;
use refprior::priors::{Decay, PriorBundle, SpatialPriorField};
use refprior::synthbench::{evaluate, generate, SceneSpec};
use refprior::SpatialVocab;

#[derive(Parser)]
#[command(
    name = "refprior",
    about = "Prior-injected referring detection: corpus generation, splits, fusion training, scoring, evaluation",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SplitMode {
    Lowdata,
    Fewshot,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ScoreMode {
    Zeroshot,
    Learned,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus: samples.jsonl and relmaps.jsonl.
    Gen {
        /// Scene spec JSON; missing fields take defaults.
        #[arg(long)]
        spec: PathBuf,
        /// Number of scenes.
        #[arg(long)]
        n: usize,
        /// Seed; overrides the spec's seed when given.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Derive benchmark splits from a samples file into a manifest.
    Split {
        #[arg(long)]
        mode: SplitMode,
        /// Split spec JSON ({"mode": "lowdata", ...} or {"mode": "fewshot", ...}).
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        samples: PathBuf,
        #[arg(long)]
        seed: u64,
        /// Manifest output path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Select one candidate per sample with prior injection.
    Score {
        #[arg(long)]
        samples: PathBuf,
        #[arg(long)]
        relmaps: Option<PathBuf>,
        #[arg(long)]
        mode: ScoreMode,
        /// Fusion network JSON; required in learned mode.
        #[arg(long)]
        net: Option<PathBuf>,
        /// Predictions output path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the fusion network on prior-matched samples.
    TrainFusion {
        #[arg(long)]
        samples: PathBuf,
        #[arg(long)]
        relmaps: Option<PathBuf>,
        #[arg(long)]
        epochs: usize,
        /// Initialization seed.
        #[arg(long)]
        seed: u64,
        /// Trained network output path.
        #[arg(long)]
        out: PathBuf,
        /// Optional per-epoch loss CSV.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Evaluate predictions: top-1 accuracy with a spatial-phrase breakdown.
    Eval {
        #[arg(long)]
        samples: PathBuf,
        #[arg(long)]
        preds: PathBuf,
        /// Report output path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Export a spatial prior field raster for inspection.
    ExportField {
        /// Directional terms, e.g. "left" or "bottom left".
        #[arg(long)]
        terms: String,
        /// Raster resolution (res x res).
        #[arg(long)]
        res: usize,
        /// Output path; .json gets a JSON grid, anything else plain text rows.
        #[arg(long)]
        out: PathBuf,
    },
}

struct CliError {
    kind: &'static str,
    message: String,
}

impl CliError {
    fn new(kind: &'static str, message: impl fmt::Display) -> Self {
        Self { kind, message: message.to_string() }
    }

    fn args(message: impl fmt::Display) -> Self {
        Self::new("args", message)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::new("io", e)
    }
}

impl From<dataset::DatasetError> for CliError {
    fn from(e: dataset::DatasetError) -> Self {
        Self::new("data", e)
    }
}

impl From<refprior::derod::SplitError> for CliError {
    fn from(e: refprior::derod::SplitError) -> Self {
        Self::new("split", e)
    }
}

impl From<refprior::synthbench::SynthError> for CliError {
    fn from(e: refprior::synthbench::SynthError) -> Self {
        Self::new("spec", e)
    }
}

impl From<refprior::synthbench::EvalError> for CliError {
    fn from(e: refprior::synthbench::EvalError) -> Self {
        Self::new("eval", e)
    }
}

impl From<refprior::fusion::FusionError> for CliError {
    fn from(e: refprior::fusion::FusionError) -> Self {
        Self::new("fusion", e)
    }
}

impl From<refprior::matching::MatchError> for CliError {
    fn from(e: refprior::matching::MatchError) -> Self {
        Self::new("matching", e)
    }
}

impl From<refprior::priors::PriorError> for CliError {
    fn from(e: refprior::priors::PriorError) -> Self {
        Self::new("priors", e)
    }
}

impl From<refprior::phrase::PhraseError> for CliError {
    fn from(e: refprior::phrase::PhraseError) -> Self {
        Self::new("phrase", e)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let obj = serde_json::json!({"error": {"kind": e.kind, "message": e.message}});
            eprintln!("{obj}");
            ExitCode::FAILURE
        }
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path, what: &str) -> Result<T, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::new("io", format!("{what} {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::new("parse", format!("{what} {}: {e}", path.display())))
}

/// Stage every file, then commit every rename, so a failed command leaves no
/// output at all and a successful one leaves no temporaries.
fn commit_outputs(outputs: &[(PathBuf, Vec<u8>)]) -> Result<(), CliError> {
    if outputs.len() == 1 {
        let (path, bytes) = &outputs[0];
        write_atomic(path, bytes)?;
        return Ok(());
    }
    let mut staged = Vec::with_capacity(outputs.len());
    for (path, bytes) in outputs {
        let mut name = path
            .file_name()
            .ok_or_else(|| CliError::args(format!("{} has no file name", path.display())))?
            .to_os_string();
        name.push(".tmp");
        let tmp = path.with_file_name(name);
        fs::write(&tmp, bytes)?;
        staged.push((tmp, path.clone()));
    }
    for (tmp, path) in staged {
        fs::rename(&tmp, &path)?;
    }
    Ok(())
}

fn compute_bundles(dataset: &Dataset) -> Result<Vec<PriorBundle>, CliError> {
    let vocab = SpatialVocab::default();
    dataset
        .samples
        .iter()
        .map(|s| {
            PriorBundle::compute(s, dataset.relmap_for(&s.id), &vocab, Decay::Linear)
                .map_err(CliError::from)
        })
        .collect()
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Gen { spec, n, seed, out } => {
            let mut scene_spec: SceneSpec = read_json(&spec, "scene spec")?;
            if let Some(seed) = seed {
                scene_spec.seed = seed;
            }
            let scenes = generate(&scene_spec, n)?;
            let samples: Vec<_> = scenes.iter().map(|s| s.sample.clone()).collect();
            let samples_jsonl = samples_to_jsonl(&samples);
            let relmaps_jsonl = dataset::relmaps_to_jsonl(
                scenes.iter().map(|s| (s.sample.id.as_str(), &s.grid)),
            );
            fs::create_dir_all(&out)?;
            commit_outputs(&[
                (out.join("samples.jsonl"), samples_jsonl.into_bytes()),
                (out.join("relmaps.jsonl"), relmaps_jsonl.into_bytes()),
            ])
        }
        Command::Split { mode, spec, samples, seed, out } => {
            let split_spec: SplitSpec = read_json(&spec, "split spec")?;
            let expected = match mode {
                SplitMode::Lowdata => "lowdata",
                SplitMode::Fewshot => "fewshot",
            };
            if split_spec.mode_name() != expected {
                return Err(CliError::args(format!(
                    "--mode {expected} but spec file is {}",
                    split_spec.mode_name()
                )));
            }
            let (loaded, _) = read_samples(&samples)?;
            let manifest = match &split_spec {
                SplitSpec::LowData { percentages } => {
                    let ids: Vec<String> = loaded.iter().map(|s| s.id.clone()).collect();
                    sample_low_data(&ids, percentages, seed)?
                }
                SplitSpec::FewShot { .. } => {
                    let labeled: Vec<(String, String)> = loaded
                        .iter()
                        .map(|s| (s.id.clone(), s.category.clone()))
                        .collect();
                    sample_few_shot(&labeled, &split_spec, seed)?
                }
            };
            commit_outputs(&[(out, manifest.to_json_pretty().into_bytes())])
        }
        Command::Score { samples, relmaps, mode, net, out } => {
            let dataset = ingest(&samples, relmaps.as_deref())?;
            let bundles = compute_bundles(&dataset)?;
            let (predict_mode, mode_name) = match mode {
                ScoreMode::Zeroshot => (PredictMode::ZeroShot, "zeroshot"),
                ScoreMode::Learned => {
                    let path = net.ok_or_else(|| {
                        CliError::args("--net is required with --mode learned")
                    })?;
                    let net: FusionNet = read_json(&path, "fusion net")?;
                    net.validate()?;
                    (PredictMode::Learned(net), "learned")
                }
            };
            let mut predictions = BTreeMap::new();
            for (sample, bundle) in dataset.samples.iter().zip(&bundles) {
                predictions.insert(sample.id.clone(), predict(bundle, &predict_mode)?);
            }
            let payload = Predictions { mode: mode_name.to_string(), predictions };
            let mut json = serde_json::to_string_pretty(&payload)
                .map_err(|e| CliError::new("io", e))?;
            json.push('\n');
            commit_outputs(&[(out, json.into_bytes())])
        }
        Command::TrainFusion { samples, relmaps, epochs, seed, out, log } => {
            let dataset = ingest(&samples, relmaps.as_deref())?;
            let bundles = compute_bundles(&dataset)?;
            let weights = LossWeights::default();
            let mut data = Vec::with_capacity(dataset.samples.len());
            for (sample, bundle) in dataset.samples.iter().zip(bundles) {
                let cost = build_cost(sample, &bundle, &weights)?;
                let assignment = hungarian(&cost);
                let positive = assignment.first().map(|&(row, _)| row);
                data.push(TrainingSample { bundle, positive });
            }
            let (net, trace) = train_fusion(&FusionNet::seeded(seed), &data, epochs, &weights)?;
            let mut outputs = Vec::new();
            let mut net_json =
                serde_json::to_string_pretty(&net).map_err(|e| CliError::new("io", e))?;
            net_json.push('\n');
            outputs.push((out, net_json.into_bytes()));
            if let Some(log_path) = log {
                let mut csv = String::from("epoch,loss\n");
                for (epoch, loss) in trace.iter().enumerate() {
                    csv.push_str(&format!("{epoch},{loss}\n"));
                }
                outputs.push((log_path, csv.into_bytes()));
            }
            commit_outputs(&outputs)
        }
        Command::Eval { samples, preds, out } => {
            let (loaded, _) = read_samples(&samples)?;
            let payload: Predictions = read_json(&preds, "predictions")?;
            let report = evaluate(&loaded, &payload.predictions)?;
            let mut json =
                serde_json::to_string_pretty(&report).map_err(|e| CliError::new("io", e))?;
            json.push('\n');
            commit_outputs(&[(out, json.into_bytes())])
        }
        Command::ExportField { terms, res, out } => {
            if res == 0 {
                return Err(CliError::args("--res must be at least 1"));
            }
            let parsed = parse_terms(&terms)?;
            if parsed.is_empty() {
                return Err(CliError::args(format!("no spatial terms in {terms:?}")));
            }
            let field = SpatialPriorField::new(parsed, Decay::Linear);
            let raster = field.rasterize(res, res);
            let bytes = if out.extension().is_some_and(|e| e == "json") {
                let mut json = serde_json::to_string_pretty(&raster)
                    .map_err(|e| CliError::new("io", e))?;
                json.push('\n');
                json.into_bytes()
            } else {
                raster.to_text().into_bytes()
            };
            commit_outputs(&[(out, bytes)])
        }
    }
}
