//! Command-line front end for the neuronlens pipeline.
//!
//! Every subcommand is a thin shim over one library operation; outputs are
//! the library results serialized as JSON or CSV. Exit codes: 0 success,
//! 2 usage error, 3 data/schema error, 4 numerical failure.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use neuronlens::dataset::{self, ConceptId, Corpus, CorpusSpec};
use neuronlens::error::ErrorClass;
use neuronlens::eval::{self, PolicySpec, ProbeHyper};
use neuronlens::intervention::SplitTag;
use neuronlens::intervention::{InterventionKind, InterventionPolicy, InterventionScope};
use neuronlens::model::{Model, ModelConfig, ReadoutMode, TrainConfig};
use neuronlens::saliency::{self, RankExport, SaliencyMethod};
use neuronlens::stats;
use neuronlens::store::{self, ActivationSet};

pub const TRAIN_FILE: &str = "train.jsonl";
pub const EVAL_FILE: &str = "eval.jsonl";
pub const SPEC_FILE: &str = "spec.json";

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Lib(neuronlens::Error),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(msg) => write!(f, "{msg}"),
            CliError::Lib(e) => write!(f, "{e}"),
        }
    }
}

impl From<neuronlens::Error> for CliError {
    fn from(e: neuronlens::Error) -> Self {
        CliError::Lib(e)
    }
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Lib(e) => match e.class() {
                ErrorClass::Validation => 2,
                ErrorClass::Data => 3,
                ErrorClass::Numerical => 4,
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Max,
    Probe,
    Probeless,
}

impl From<MethodArg> for SaliencyMethod {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Max => SaliencyMethod::Max,
            MethodArg::Probe => SaliencyMethod::Probe,
            MethodArg::Probeless => SaliencyMethod::Probeless,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ScopeArg {
    Neuron,
    Range,
}

impl From<ScopeArg> for InterventionScope {
    fn from(s: ScopeArg) -> Self {
        match s {
            ScopeArg::Neuron => InterventionScope::Neuron,
            ScopeArg::Range => InterventionScope::Range,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FunctionArg {
    Zero,
    Damp,
    Mean,
    Adaptive,
}

impl From<FunctionArg> for InterventionKind {
    fn from(f: FunctionArg) -> Self {
        match f {
            FunctionArg::Zero => InterventionKind::Zero,
            FunctionArg::Damp => InterventionKind::Damp,
            FunctionArg::Mean => InterventionKind::Mean,
            FunctionArg::Adaptive => InterventionKind::Adaptive,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ReadoutArg {
    FirstToken,
    LastToken,
}

impl From<ReadoutArg> for ReadoutMode {
    fn from(r: ReadoutArg) -> Self {
        match r {
            ReadoutArg::FirstToken => ReadoutMode::FirstToken,
            ReadoutArg::LastToken => ReadoutMode::LastToken,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Eval,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    Binary,
    Jsonl,
}

#[derive(Debug, Parser)]
#[command(
    name = "neuronlens",
    about = "Range-based neuron interpretation and manipulation pipeline",
    version
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// Policy-recipe flags shared by ranges, erase, and the sweeps.
#[derive(Debug, Clone, Args)]
pub struct PolicyFlags {
    /// Recorded training-split activations backing the policy statistics
    #[arg(long)]
    pub activations: Option<PathBuf>,
    /// Saliency ranking method
    #[arg(long, value_enum)]
    pub method: Option<MethodArg>,
    /// Target concept id to erase
    #[arg(long)]
    pub concept: Option<u16>,
    /// Hook layer (1-based)
    #[arg(long)]
    pub layer: Option<usize>,
    /// Fraction of neurons to select (0 disables the intervention)
    #[arg(long)]
    pub fraction: Option<f64>,
    /// Range half-width in standard deviations
    #[arg(long)]
    pub tau: Option<f64>,
    /// Intervention scope
    #[arg(long, value_enum)]
    pub scope: Option<ScopeArg>,
    /// Intervention function phi
    #[arg(long, value_enum)]
    pub function: Option<FunctionArg>,
    /// Dampening factor for the damp function (default 0.125)
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Ceiling factor for adaptive dampening (default 0.5)
    #[arg(long)]
    pub beta: Option<f64>,
    /// Activation set pooled for mean-replacement reference values
    #[arg(long)]
    pub mu_ref_activations: Option<PathBuf>,
    /// Probe l1 penalty
    #[arg(long, default_value_t = 1e-4)]
    pub probe_l1: f64,
    /// Probe l2 penalty
    #[arg(long, default_value_t = 1e-4)]
    pub probe_l2: f64,
    /// Probe training epochs
    #[arg(long, default_value_t = 300)]
    pub probe_epochs: usize,
    /// Probe initialization seed
    #[arg(long, default_value_t = 0)]
    pub probe_seed: u64,
}

impl PolicyFlags {
    fn any_recipe_flag_set(&self) -> bool {
        self.activations.is_some()
            || self.method.is_some()
            || self.concept.is_some()
            || self.layer.is_some()
            || self.fraction.is_some()
            || self.tau.is_some()
            || self.scope.is_some()
            || self.function.is_some()
            || self.alpha.is_some()
            || self.beta.is_some()
            || self.mu_ref_activations.is_some()
    }

    fn require<T: Copy>(value: Option<T>, flag: &str) -> Result<T, CliError> {
        value.ok_or_else(|| CliError::Usage(format!("missing required flag --{flag}")))
    }

    fn to_spec(&self) -> Result<PolicySpec, CliError> {
        let function: InterventionKind = Self::require(self.function, "function")?.into();
        let alpha = match (function, self.alpha) {
            (InterventionKind::Damp, None) => Some(neuronlens::intervention::DEFAULT_ALPHA),
            (_, alpha) => alpha,
        };
        let beta = match (function, self.beta) {
            (InterventionKind::Adaptive, None) => Some(neuronlens::intervention::DEFAULT_BETA),
            (_, beta) => beta,
        };
        Ok(PolicySpec {
            method: Self::require(self.method, "method")?.into(),
            scope: Self::require(self.scope, "scope")?.into(),
            function,
            alpha,
            beta,
            tau: Self::require(self.tau, "tau")?,
            fraction: Self::require(self.fraction, "fraction")?,
            concept: ConceptId(Self::require(self.concept, "concept")?),
            layer: Self::require(self.layer, "layer")?,
            probe: ProbeHyper {
                l1: self.probe_l1,
                l2: self.probe_l2,
                epochs: self.probe_epochs,
                seed: self.probe_seed,
            },
        })
    }

    fn load_sets(&self) -> Result<(ActivationSet, Option<ActivationSet>), CliError> {
        let path = self
            .activations
            .as_ref()
            .ok_or_else(|| CliError::Usage("missing required flag --activations".into()))?;
        let train_set = load_activations(path)?;
        let mu_ref = self
            .mu_ref_activations
            .as_ref()
            .map(|p| load_activations(p))
            .transpose()?;
        Ok((train_set, mu_ref))
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic labeled corpus (train/eval splits plus manifest)
    GenData {
        /// Number of concepts (classes)
        #[arg(long, default_value_t = 4)]
        concepts: usize,
        /// Vocabulary size
        #[arg(long, default_value_t = 32)]
        vocab: usize,
        /// Tokens per sequence
        #[arg(long, default_value_t = 16)]
        seq_len: usize,
        /// Samples per concept before the 80/20 split
        #[arg(long, default_value_t = 500)]
        samples: usize,
        /// Class separability in [0, 1]
        #[arg(long, default_value_t = 0.8)]
        sep: f64,
        /// Generator seed (falls back to NEURONLENS_SEED)
        #[arg(long, env = "NEURONLENS_SEED", default_value_t = 0)]
        seed: u64,
        /// Output directory for train.jsonl, eval.jsonl, spec.json
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the toy transformer classifier on a generated corpus
    Train {
        /// Corpus directory produced by gen-data
        #[arg(long)]
        data: PathBuf,
        /// Transformer blocks
        #[arg(long, default_value_t = 4)]
        layers: usize,
        /// Hidden dimension d
        #[arg(long, default_value_t = 64)]
        hidden_dim: usize,
        /// Attention heads (must divide d)
        #[arg(long, default_value_t = 4)]
        heads: usize,
        /// Readout token position
        #[arg(long, value_enum, default_value_t = ReadoutArg::LastToken)]
        readout: ReadoutArg,
        /// Training epochs
        #[arg(long, default_value_t = 10)]
        epochs: usize,
        /// Minibatch size
        #[arg(long, default_value_t = 32)]
        batch_size: usize,
        /// Adam learning rate
        #[arg(long, default_value_t = 3e-3)]
        lr: f64,
        /// Initialization and shuffling seed (falls back to NEURONLENS_SEED)
        #[arg(long, env = "NEURONLENS_SEED", default_value_t = 0)]
        seed: u64,
        /// Checkpoint output path
        #[arg(long)]
        out: PathBuf,
    },
    /// Record readout hidden states over a corpus split
    Record {
        /// Model checkpoint
        #[arg(long)]
        model: PathBuf,
        /// Corpus directory
        #[arg(long)]
        data: PathBuf,
        /// Which split to traverse
        #[arg(long, value_enum, default_value_t = SplitArg::Train)]
        split: SplitArg,
        /// Layers to record (comma separated, 1-based)
        #[arg(long, value_delimiter = ',', required = true)]
        layers: Vec<usize>,
        /// Output encoding
        #[arg(long, value_enum, default_value_t = FormatArg::Binary)]
        format: FormatArg,
        /// Activation set output path
        #[arg(long)]
        out: PathBuf,
    },
    /// Rank salient neurons for a concept
    Rank {
        /// Recorded activation set
        #[arg(long)]
        activations: PathBuf,
        /// Saliency ranking method
        #[arg(long, value_enum)]
        method: MethodArg,
        /// Concept id
        #[arg(long)]
        concept: u16,
        /// Layer to rank (1-based)
        #[arg(long)]
        layer: usize,
        /// Probe l1 penalty
        #[arg(long, default_value_t = 1e-4)]
        probe_l1: f64,
        /// Probe l2 penalty
        #[arg(long, default_value_t = 1e-4)]
        probe_l2: f64,
        /// Probe training epochs
        #[arg(long, default_value_t = 300)]
        probe_epochs: usize,
        /// Probe initialization seed
        #[arg(long, default_value_t = 0)]
        probe_seed: u64,
        /// Ranking JSON output path
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-(neuron, concept) Gaussian statistics and normality diagnostics
    Stats {
        /// Recorded activation set
        #[arg(long)]
        activations: PathBuf,
        /// Layer to analyze (1-based)
        #[arg(long)]
        layer: usize,
        /// KS effect-size threshold for practical normality
        #[arg(long, default_value_t = 0.1)]
        threshold: f64,
        /// CSV output path
        #[arg(long)]
        out: PathBuf,
        /// Optional JSON summary output path
        #[arg(long)]
        summary: Option<PathBuf>,
    },
    /// Build an intervention policy with correlated ranges
    Ranges {
        #[command(flatten)]
        policy: PolicyFlags,
        /// Policy JSON output path
        #[arg(long)]
        out: PathBuf,
    },
    /// Apply a policy on the eval split and report erasure metrics
    Erase {
        /// Model checkpoint
        #[arg(long)]
        model: PathBuf,
        /// Corpus directory (eval split is used)
        #[arg(long)]
        data: PathBuf,
        /// Pre-built policy JSON (conflicts with the recipe flags)
        #[arg(long)]
        policy: Option<PathBuf>,
        #[command(flatten)]
        recipe: PolicyFlags,
        /// Report JSON output path
        #[arg(long)]
        out: PathBuf,
        /// Optional CSV output path
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Sweep the range half-width tau
    SweepTau {
        /// Model checkpoint
        #[arg(long)]
        model: PathBuf,
        /// Corpus directory (eval split is used)
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        recipe: PolicyFlags,
        /// Ascending tau values (comma separated)
        #[arg(long, value_delimiter = ',', required = true)]
        taus: Vec<f64>,
        /// Sweep JSON output path
        #[arg(long)]
        out: PathBuf,
        /// Optional CSV output path
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Sweep the selected-neuron fraction
    SweepFraction {
        /// Model checkpoint
        #[arg(long)]
        model: PathBuf,
        /// Corpus directory (eval split is used)
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        recipe: PolicyFlags,
        /// Ascending fractions in [0, 1] (comma separated)
        #[arg(long, value_delimiter = ',', required = true)]
        fractions: Vec<f64>,
        /// Sweep JSON output path
        #[arg(long)]
        out: PathBuf,
        /// Optional CSV output path
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Sweep the hook layer
    SweepLayer {
        /// Model checkpoint
        #[arg(long)]
        model: PathBuf,
        /// Corpus directory (eval split is used)
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        recipe: PolicyFlags,
        /// Ascending layers to sweep (comma separated, 1-based)
        #[arg(long, value_delimiter = ',', required = true)]
        layers: Vec<usize>,
        /// Sweep JSON output path
        #[arg(long)]
        out: PathBuf,
        /// Optional CSV output path
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Export histogram plus KDE data for a neuron
    ExportDist {
        /// Recorded activation set
        #[arg(long)]
        activations: PathBuf,
        /// Layer to export (1-based)
        #[arg(long)]
        layer: usize,
        /// Neuron index
        #[arg(long)]
        neuron: usize,
        /// Concept ids (comma separated)
        #[arg(long, value_delimiter = ',', required = true)]
        concepts: Vec<u16>,
        /// Histogram bin count
        #[arg(long, default_value_t = 30)]
        bins: usize,
        /// Export JSON output path
        #[arg(long)]
        out: PathBuf,
    },
    /// Report metrics without any intervention
    Report {
        /// Model checkpoint
        #[arg(long)]
        model: PathBuf,
        /// Corpus directory
        #[arg(long)]
        data: PathBuf,
        /// Report unmodified per-class metrics (the only supported mode)
        #[arg(long)]
        baseline: bool,
        /// Which split to evaluate
        #[arg(long, value_enum, default_value_t = SplitArg::Eval)]
        split: SplitArg,
        /// Metrics JSON output path
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_corpus(dir: &Path) -> Result<Corpus, CliError> {
    let spec = dataset::read_manifest(&dir.join(SPEC_FILE))?;
    let train = dataset::read_jsonl(&dir.join(TRAIN_FILE))?;
    let eval = dataset::read_jsonl(&dir.join(EVAL_FILE))?;
    Ok(Corpus { spec, train, eval })
}

fn load_activations(path: &Path) -> Result<ActivationSet, CliError> {
    // Sniff the encoding: binary sets start with the NLNS magic.
    let bytes = std::fs::read(path).map_err(|e| CliError::Lib(neuronlens::Error::io(path, e)))?;
    if bytes.starts_with(&store::MAGIC) {
        Ok(ActivationSet::from_bytes(&bytes)?)
    } else {
        Ok(ActivationSet::load_jsonl(path)?)
    }
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError::Lib(neuronlens::Error::io(path, e)))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::Lib(neuronlens::Error::json(path, e)))?;
    text.push('\n');
    write_text(path, &text)
}

fn split_of(corpus: &Corpus, split: SplitArg) -> &[dataset::LabeledSequence] {
    match split {
        SplitArg::Train => &corpus.train,
        SplitArg::Eval => &corpus.eval,
    }
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::GenData {
            concepts,
            vocab,
            seq_len,
            samples,
            sep,
            seed,
            out,
        } => {
            let spec = CorpusSpec {
                num_concepts: concepts,
                vocab_size: vocab,
                seq_len,
                samples_per_concept: samples,
                separation: sep,
                seed,
            };
            let corpus = dataset::generate(&spec)?;
            std::fs::create_dir_all(&out)
                .map_err(|e| CliError::Lib(neuronlens::Error::io(&out, e)))?;
            dataset::write_jsonl(&corpus.train, &out.join(TRAIN_FILE))?;
            dataset::write_jsonl(&corpus.eval, &out.join(EVAL_FILE))?;
            dataset::write_manifest(&spec, &out.join(SPEC_FILE))?;
            println!(
                "wrote {} train / {} eval sequences to {}",
                corpus.train.len(),
                corpus.eval.len(),
                out.display()
            );
            Ok(())
        }
        Command::Train {
            data,
            layers,
            hidden_dim,
            heads,
            readout,
            epochs,
            batch_size,
            lr,
            seed,
            out,
        } => {
            let corpus = load_corpus(&data)?;
            let config = ModelConfig {
                num_layers: layers,
                hidden_dim,
                num_heads: heads,
                vocab_size: corpus.spec.vocab_size,
                num_classes: corpus.spec.num_concepts,
                readout_mode: readout.into(),
                seed,
                train: TrainConfig {
                    epochs,
                    batch_size,
                    learning_rate: lr,
                },
            };
            let model = neuronlens::model::train(&corpus, &config)?;
            let acc = eval::accuracy(&model, &corpus.eval)?;
            model.save(&out)?;
            println!("eval_accuracy={acc}");
            println!("checkpoint={}", out.display());
            Ok(())
        }
        Command::Record {
            model,
            data,
            split,
            layers,
            format,
            out,
        } => {
            let model = Model::load(&model)?;
            let corpus = load_corpus(&data)?;
            let tag = match split {
                SplitArg::Train => SplitTag::Train,
                SplitArg::Eval => SplitTag::Eval,
            };
            let set = store::record_corpus(
                &model,
                split_of(&corpus, split),
                &corpus.concept_labels(),
                &layers,
                tag,
            )?;
            match format {
                FormatArg::Binary => set.save(&out)?,
                FormatArg::Jsonl => set.save_jsonl(&out)?,
            }
            println!("recorded {} activation records", set.len());
            Ok(())
        }
        Command::Rank {
            activations,
            method,
            concept,
            layer,
            probe_l1,
            probe_l2,
            probe_epochs,
            probe_seed,
            out,
        } => {
            let set = load_activations(&activations)?;
            let probe = ProbeHyper {
                l1: probe_l1,
                l2: probe_l2,
                epochs: probe_epochs,
                seed: probe_seed,
            };
            let scores =
                eval::scores_from_set(&set, layer, method.into(), ConceptId(concept), &probe)?;
            let ranking = saliency::rank(&scores)?;
            write_json(&out, &RankExport::new(ranking, scores))?;
            Ok(())
        }
        Command::Stats {
            activations,
            layer,
            threshold,
            out,
            summary,
        } => {
            let set = load_activations(&activations)?;
            let rows = stats::layer_stats(&set, layer, threshold)?;
            write_text(&out, &stats::stats_to_csv(&rows))?;
            if let Some(summary_path) = summary {
                let normal = rows.iter().filter(|r| r.normal).count();
                let fraction = normal as f64 / rows.len() as f64;
                let finite: Vec<&stats::NeuronConceptStats> =
                    rows.iter().filter(|r| r.skew.is_finite()).collect();
                let mean_abs_skew =
                    finite.iter().map(|r| r.skew.abs()).sum::<f64>() / finite.len().max(1) as f64;
                let mean_kurt =
                    finite.iter().map(|r| r.kurt).sum::<f64>() / finite.len().max(1) as f64;
                let summary_value = serde_json::json!({
                    "layer": layer,
                    "threshold": threshold,
                    "pairs": rows.len(),
                    "practical_normality_fraction": fraction,
                    "mean_abs_skewness": mean_abs_skew,
                    "mean_kurtosis": mean_kurt,
                });
                write_json(&summary_path, &summary_value)?;
            }
            Ok(())
        }
        Command::Ranges { policy, out } => {
            let spec = policy.to_spec()?;
            let (train_set, mu_ref) = policy.load_sets()?;
            let built = eval::build_policy(&train_set, mu_ref.as_ref(), &spec)?;
            write_json(&out, &built)?;
            Ok(())
        }
        Command::Erase {
            model,
            data,
            policy,
            recipe,
            out,
            csv,
        } => {
            if policy.is_some() && recipe.any_recipe_flag_set() {
                return Err(CliError::Usage(
                    "--policy conflicts with the policy recipe flags".into(),
                ));
            }
            let model = Model::load(&model)?;
            let corpus = load_corpus(&data)?;
            let built: InterventionPolicy = match policy {
                Some(path) => {
                    let text = std::fs::read_to_string(&path)
                        .map_err(|e| CliError::Lib(neuronlens::Error::io(&path, e)))?;
                    serde_json::from_str(&text)
                        .map_err(|e| CliError::Lib(neuronlens::Error::json(&path, e)))?
                }
                None => {
                    let spec = recipe.to_spec()?;
                    let (train_set, mu_ref) = recipe.load_sets()?;
                    eval::build_policy(&train_set, mu_ref.as_ref(), &spec)?
                }
            };
            let report = eval::erase_and_evaluate(&model, &corpus.eval, &built)?;
            write_json(&out, &report)?;
            if let Some(csv_path) = csv {
                write_text(&csv_path, &eval::report_to_csv(&report))?;
            }
            Ok(())
        }
        Command::SweepTau {
            model,
            data,
            recipe,
            taus,
            out,
            csv,
        } => {
            let model = Model::load(&model)?;
            let corpus = load_corpus(&data)?;
            // The tau axis is swept; a recipe tau would be ignored.
            let mut recipe = recipe;
            if recipe.tau.is_none() {
                recipe.tau = Some(neuronlens::intervention::DEFAULT_TAU);
            }
            let spec = recipe.to_spec()?;
            let (train_set, mu_ref) = recipe.load_sets()?;
            let sweep = eval::sweep_tau(
                &model,
                &corpus.eval,
                &train_set,
                mu_ref.as_ref(),
                &spec,
                &taus,
            )?;
            write_json(&out, &sweep)?;
            if let Some(csv_path) = csv {
                write_text(&csv_path, &eval::sweep_to_csv(&sweep))?;
            }
            Ok(())
        }
        Command::SweepFraction {
            model,
            data,
            recipe,
            fractions,
            out,
            csv,
        } => {
            let model = Model::load(&model)?;
            let corpus = load_corpus(&data)?;
            // The fraction axis is swept; a recipe fraction would be ignored.
            let mut recipe = recipe;
            if recipe.fraction.is_none() {
                recipe.fraction = Some(0.0);
            }
            let spec = recipe.to_spec()?;
            let (train_set, mu_ref) = recipe.load_sets()?;
            let sweep = eval::sweep_fraction(
                &model,
                &corpus.eval,
                &train_set,
                mu_ref.as_ref(),
                &spec,
                &fractions,
            )?;
            write_json(&out, &sweep)?;
            if let Some(csv_path) = csv {
                write_text(&csv_path, &eval::sweep_to_csv(&sweep))?;
            }
            Ok(())
        }
        Command::SweepLayer {
            model,
            data,
            recipe,
            layers,
            out,
            csv,
        } => {
            let model = Model::load(&model)?;
            let corpus = load_corpus(&data)?;
            let mut recipe = recipe;
            if recipe.layer.is_none() {
                recipe.layer = Some(1);
            }
            let spec = recipe.to_spec()?;
            let (train_set, mu_ref) = recipe.load_sets()?;
            let sweep = eval::sweep_layer(
                &model,
                &corpus.eval,
                &train_set,
                mu_ref.as_ref(),
                &spec,
                &layers,
            )?;
            write_json(&out, &sweep)?;
            if let Some(csv_path) = csv {
                write_text(&csv_path, &eval::sweep_to_csv(&sweep))?;
            }
            Ok(())
        }
        Command::ExportDist {
            activations,
            layer,
            neuron,
            concepts,
            bins,
            out,
        } => {
            let set = load_activations(&activations)?;
            let ids: Vec<ConceptId> = concepts.into_iter().map(ConceptId).collect();
            let exports = stats::distribution_export(&set, layer, neuron, &ids, bins)?;
            write_json(&out, &exports)?;
            Ok(())
        }
        Command::Report {
            model,
            data,
            baseline,
            split,
            out,
        } => {
            if !baseline {
                return Err(CliError::Usage(
                    "report currently supports only --baseline".into(),
                ));
            }
            let model = Model::load(&model)?;
            let corpus = load_corpus(&data)?;
            let metrics = eval::baseline_metrics(&model, split_of(&corpus, split))?;
            write_json(&out, &metrics)?;
            Ok(())
        }
    }
}
