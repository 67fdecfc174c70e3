//! Command-line driver: one pipeline stage per subcommand.
//!
//! Settings resolve in three layers: built-in defaults (or the hyperparameters
//! stored in a model checkpoint), then the `--config` TOML file, then flags.
//! Every output file is written through a temp file and renamed into place.
//! Failures print one JSON record on stderr and exit 1 (runtime) or 2
//! (usage or configuration).

use std::fmt::Display;
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::data::{read_examples, read_instances, write_instances, write_srl, Example};
use crate::embed::{VocabEmbeddings, DEFAULT_OOV_SEED};
use crate::graph::{build_graph, export_dot, GraphInput, HeteroGraph};
use crate::select::{select_two_rounds, SelectorModel};
use crate::synth::{audit, generate, SynthConfig};
use crate::train::{
    evaluate, graph_coverage, is_covered, load_checkpoint, predict_all, save_checkpoint,
    train_joint, train_selector, write_atomic, Checkpoint, Hyper, ModelParams,
};
use crate::train::{gold_coverage, predict_inputs, prepare_gold};

const SELECTOR_KIND: &str = "selector";
const MODEL_KIND: &str = "model";

#[derive(Debug, Parser)]
#[command(name = "srlgrn", version, about = "SRL graph reasoning for multi-hop QA")]
pub struct Cli {
    /// TOML file with optional `seed`, `[hyper]` and `[synth]` sections.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for generation, initialization and shuffling.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Word-vector text file; tokens it lacks get hashed vectors.
    #[arg(long, global = true)]
    pub vectors: Option<PathBuf>,
    #[command(flatten)]
    pub hyper: HyperFlags,
    #[command(subcommand)]
    pub command: Command,
}

/// One flag per hyperparameter; unset flags leave the lower layers alone.
#[derive(Debug, Default, Clone, Args, Serialize)]
pub struct HyperFlags {
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda_ans: Option<f64>,
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda_sf: Option<f64>,
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda_type: Option<f64>,
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lr: Option<f64>,
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta1: Option<f64>,
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta2: Option<f64>,
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eps_adam: Option<f64>,
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epochs: Option<usize>,
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub selector_epochs: Option<usize>,
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beam_width: Option<usize>,
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_hops: Option<usize>,
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_span: Option<usize>,
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub window: Option<usize>,
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pmi_floor: Option<f64>,
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_paragraph_tokens: Option<usize>,
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_query_tokens: Option<usize>,
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub embed_dim: Option<usize>,
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d_model: Option<usize>,
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gcn_hidden: Option<usize>,
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gcn_out: Option<usize>,
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rnn_hidden: Option<usize>,
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub head_hidden: Option<usize>,
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub selector_hidden: Option<usize>,
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub use_graph: Option<bool>,
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub use_arg_type: Option<bool>,
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub use_semantic_edges: Option<bool>,
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub joint_training: Option<bool>,
}

/// Instance file plus its SRL file.
#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    #[arg(long)]
    pub instances: PathBuf,
    #[arg(long)]
    pub srl: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    #[arg(long)]
    pub selector: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GraphFormat {
    Dot,
    Json,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate and audit a synthetic corpus.
    Synth {
        #[arg(long)]
        out_instances: PathBuf,
        #[arg(long)]
        out_srl: PathBuf,
        #[arg(long)]
        n_instances: Option<usize>,
        #[arg(long)]
        n_distractors: Option<usize>,
        #[arg(long)]
        bridge_fraction: Option<f64>,
        #[arg(long)]
        vocab_size: Option<usize>,
    },
    /// Validate instance and SRL files and write canonical copies.
    Ingest {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        out_instances: PathBuf,
        #[arg(long)]
        out_srl: PathBuf,
    },
    /// Build one graph per instance, as JSON lines.
    BuildGraph {
        #[command(flatten)]
        data: DataArgs,
        /// Build over selected paragraphs instead of the gold pair.
        #[arg(long)]
        selector: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the paragraph selector.
    TrainSelector {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        metrics: Option<PathBuf>,
    },
    /// Train the graph model on gold paragraphs.
    TrainJoint {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, requires_all = ["dev_srl", "selector"])]
        dev_instances: Option<PathBuf>,
        #[arg(long, requires = "dev_instances")]
        dev_srl: Option<PathBuf>,
        /// Selector used to pick dev paragraphs.
        #[arg(long)]
        selector: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        metrics: Option<PathBuf>,
    },
    /// Write one prediction record per instance.
    Predict {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        models: ModelArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score predictions against gold answers and supporting facts.
    Evaluate {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        models: ModelArgs,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        predictions: Option<PathBuf>,
    },
    /// Render the graph of one instance.
    ExportGraph {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        id: String,
        #[arg(long)]
        selector: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "dot")]
        format: GraphFormat,
        #[arg(long)]
        out: PathBuf,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Synth { .. } => "synth",
            Command::Ingest { .. } => "ingest",
            Command::BuildGraph { .. } => "build-graph",
            Command::TrainSelector { .. } => "train-selector",
            Command::TrainJoint { .. } => "train-joint",
            Command::Predict { .. } => "predict",
            Command::Evaluate { .. } => "evaluate",
            Command::ExportGraph { .. } => "export-graph",
        }
    }

    fn inputs(&self) -> Vec<&Path> {
        fn data(d: &DataArgs) -> [&Path; 2] {
            [d.instances.as_path(), d.srl.as_path()]
        }
        let mut out: Vec<&Path> = Vec::new();
        match self {
            Command::Synth { .. } => {}
            Command::Ingest { data: d, .. } | Command::TrainSelector { data: d, .. } => {
                out.extend(data(d))
            }
            Command::BuildGraph { data: d, selector, .. }
            | Command::ExportGraph { data: d, selector, .. } => {
                out.extend(data(d));
                out.extend(selector.as_deref());
            }
            Command::TrainJoint {
                data: d,
                dev_instances,
                dev_srl,
                selector,
                ..
            } => {
                out.extend(data(d));
                out.extend(dev_instances.as_deref());
                out.extend(dev_srl.as_deref());
                out.extend(selector.as_deref());
            }
            Command::Predict { data: d, models, .. } | Command::Evaluate { data: d, models, .. } => {
                out.extend(data(d));
                out.extend([models.selector.as_path(), models.model.as_path()]);
            }
        }
        out
    }
}

/// Contents of the `--config` file.
#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub hyper: toml::Table,
    pub synth: toml::Table,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Config(String),
    #[error("{stage}: {message}")]
    Runtime { stage: &'static str, message: String },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Runtime { .. } => 1,
            CliError::Usage(_) | CliError::Config(_) => 2,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Config(_) => "config",
            CliError::Runtime { .. } => "runtime",
        }
    }

    /// The single-line record printed on stderr.
    pub fn record(&self, command: Option<&str>) -> String {
        let stage = match self {
            CliError::Runtime { stage, .. } => Some(*stage),
            _ => None,
        };
        serde_json::json!({
            "error": self.kind(),
            "command": command,
            "stage": stage,
            "message": self.to_string(),
        })
        .to_string()
    }
}

fn runtime<E: Display>(stage: &'static str) -> impl FnOnce(E) -> CliError {
    move |e| CliError::Runtime {
        stage,
        message: e.to_string(),
    }
}

/// Layer TOML tables over a serializable base and read the result back.
fn layered<T: Serialize + for<'de> Deserialize<'de>>(
    base: &T,
    layers: &[&toml::Table],
    what: &str,
) -> Result<T, CliError> {
    let mut table = toml::Table::try_from(base).map_err(|e| CliError::Config(format!("{what}: {e}")))?;
    for layer in layers {
        for (k, v) in layer.iter() {
            table.insert(k.clone(), v.clone());
        }
    }
    toml::Value::Table(table)
        .try_into()
        .map_err(|e| CliError::Config(format!("{what}: {e}")))
}

struct Settings {
    file: FileConfig,
    flags: toml::Table,
    seed: u64,
    vectors: Option<PathBuf>,
}

impl Settings {
    fn load(cli: &Cli) -> Result<Self, CliError> {
        let file = match &cli.config {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
                toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
            }
            None => FileConfig::default(),
        };
        let flags = toml::Table::try_from(&cli.hyper).map_err(|e| CliError::Config(e.to_string()))?;
        let seed = cli.seed.or(file.seed).unwrap_or(0);
        Ok(Settings {
            file,
            flags,
            seed,
            vectors: cli.vectors.clone(),
        })
    }

    fn hyper_over(&self, base: &Hyper) -> Result<Hyper, CliError> {
        let h = layered(base, &[&self.file.hyper, &self.flags], "hyper")?;
        h.validate().map_err(|e| CliError::Config(format!("hyper: {e}")))?;
        Ok(h)
    }

    fn hyper(&self) -> Result<Hyper, CliError> {
        self.hyper_over(&Hyper::default())
    }

    fn embeddings(&self, h: &Hyper) -> Result<VocabEmbeddings, CliError> {
        match &self.vectors {
            Some(p) => {
                let f = File::open(p).map_err(runtime("vectors"))?;
                VocabEmbeddings::from_text(BufReader::new(f), h.embed_dim, DEFAULT_OOV_SEED)
                    .map_err(runtime("vectors"))
            }
            None => Ok(VocabEmbeddings::hashed(h.embed_dim, DEFAULT_OOV_SEED)),
        }
    }
}

fn load_examples(d: &DataArgs) -> Result<Vec<Example>, CliError> {
    let open = |p: &Path| File::open(p).map(BufReader::new).map_err(runtime("read"));
    let instances = read_instances(open(&d.instances)?).map_err(|e| CliError::Runtime {
        stage: "read",
        message: format!("{}: {e}", d.instances.display()),
    })?;
    read_examples(instances, open(&d.srl)?).map_err(|e| CliError::Runtime {
        stage: "read",
        message: format!("{}: {e}", d.srl.display()),
    })
}

fn write_out(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    write_atomic(path, bytes).map_err(|e| CliError::Runtime {
        stage: "write",
        message: format!("{}: {e}", path.display()),
    })
}

fn jsonl<T: Serialize>(records: &[T]) -> Vec<u8> {
    let mut out = Vec::new();
    for r in records {
        serde_json::to_writer(&mut out, r).expect("records serialize");
        out.push(b'\n');
    }
    out
}

fn load_selector(path: &Path) -> Result<(SelectorModel, Hyper), CliError> {
    let ck = load_checkpoint(path).map_err(runtime("checkpoint"))?;
    let mut m = crate::train::zero_selector(&ck.hyper.dims());
    ck.restore(SELECTOR_KIND, &mut m).map_err(runtime("checkpoint"))?;
    Ok((m, ck.hyper))
}

fn load_model(path: &Path) -> Result<(ModelParams, Hyper), CliError> {
    let ck = load_checkpoint(path).map_err(runtime("checkpoint"))?;
    let mut m = ModelParams::zeros(&ck.hyper.dims());
    ck.restore(MODEL_KIND, &mut m).map_err(runtime("checkpoint"))?;
    Ok((m, ck.hyper))
}

/// Gold paragraphs, or the selector's choice when one is given.
fn graph_for(
    ex: &Example,
    selector: Option<&(SelectorModel, VocabEmbeddings)>,
    h: &Hyper,
) -> Result<([usize; 2], HeteroGraph), CliError> {
    let paragraphs = match selector {
        Some((m, v)) => {
            let s = select_two_rounds(m, v, &ex.instance, h.select_limits()).map_err(|e| {
                CliError::Runtime {
                    stage: "select",
                    message: format!("{}: {e}", ex.instance.id),
                }
            })?;
            [s.first, s.second]
        }
        None => {
            let (a, b) = ex.instance.gold_pair().ok_or_else(|| CliError::Runtime {
                stage: "build-graph",
                message: format!("{}: gold titles do not name two paragraphs", ex.instance.id),
            })?;
            [a, b]
        }
    };
    let input = GraphInput {
        instance: &ex.instance,
        paragraphs,
        srl: &ex.srl,
    };
    Ok((paragraphs, build_graph(&input, &h.graph_config())))
}

/// Coverage over gold-paragraph graphs; instances without a gold pair count as uncovered.
fn corpus_coverage(examples: &[Example], h: &Hyper) -> f64 {
    if examples.is_empty() {
        return 0.0;
    }
    let hits = examples
        .iter()
        .filter(|ex| {
            graph_for(ex, None, h)
                .map(|(_, g)| is_covered(&g, &ex.instance, h.max_hops))
                .unwrap_or(false)
        })
        .count();
    hits as f64 / examples.len() as f64
}

/// Run one command; the returned value is the summary printed on stdout.
pub fn dispatch(cli: &Cli) -> Result<serde_json::Value, CliError> {
    if let Some(p) = cli.command.inputs().into_iter().find(|p| !p.exists()) {
        return Err(CliError::Config(format!("input {} does not exist", p.display())));
    }
    let settings = Settings::load(cli)?;
    let seed = settings.seed;
    match &cli.command {
        Command::Synth {
            out_instances,
            out_srl,
            n_instances,
            n_distractors,
            bridge_fraction,
            vocab_size,
        } => {
            let h = settings.hyper()?;
            let mut cfg: SynthConfig = layered(&SynthConfig::default(), &[&settings.file.synth], "synth")?;
            cfg.seed = cli.seed.or(settings.file.seed).unwrap_or(cfg.seed);
            cfg.n_instances = n_instances.unwrap_or(cfg.n_instances);
            cfg.n_distractors = n_distractors.unwrap_or(cfg.n_distractors);
            cfg.bridge_fraction = bridge_fraction.unwrap_or(cfg.bridge_fraction);
            cfg.vocab_size = vocab_size.unwrap_or(cfg.vocab_size);
            cfg.validate().map_err(|e| CliError::Config(e.to_string()))?;
            let examples = generate(&cfg).map_err(runtime("synth"))?;
            let report = audit(&examples, &h.graph_config(), h.max_hops).map_err(runtime("audit"))?;
            let mut inst = Vec::new();
            write_instances(&mut inst, examples.iter().map(|e| &e.instance)).map_err(runtime("synth"))?;
            let mut srl = Vec::new();
            write_srl(&mut srl, &examples).map_err(runtime("synth"))?;
            write_out(out_instances, &inst)?;
            write_out(out_srl, &srl)?;
            Ok(serde_json::json!({ "config": cfg, "audit": report }))
        }
        Command::Ingest {
            data,
            out_instances,
            out_srl,
        } => {
            let h = settings.hyper()?;
            let examples = load_examples(data)?;
            let mut inst = Vec::new();
            write_instances(&mut inst, examples.iter().map(|e| &e.instance)).map_err(runtime("ingest"))?;
            let mut srl = Vec::new();
            write_srl(&mut srl, &examples).map_err(runtime("ingest"))?;
            write_out(out_instances, &inst)?;
            write_out(out_srl, &srl)?;
            Ok(serde_json::json!({
                "instances": examples.len(),
                "frames": examples.iter().map(|e| e.srl.frame_count()).sum::<usize>(),
                "graph_coverage": corpus_coverage(&examples, &h),
            }))
        }
        Command::BuildGraph { data, selector, out } => {
            let (h, sel) = match selector {
                Some(p) => {
                    let (m, sh) = load_selector(p)?;
                    let h = settings.hyper_over(&sh)?;
                    let v = settings.embeddings(&h)?;
                    (h, Some((m, v)))
                }
                None => (settings.hyper()?, None),
            };
            let examples = load_examples(data)?;
            let mut records = Vec::with_capacity(examples.len());
            let mut graphs = Vec::with_capacity(examples.len());
            for ex in &examples {
                let (paragraphs, g) = graph_for(ex, sel.as_ref(), &h)?;
                records.push(serde_json::json!({
                    "id": ex.instance.id,
                    "paragraphs": paragraphs,
                    "graph": g,
                }));
                graphs.push(g);
            }
            write_out(out, &jsonl(&records))?;
            let coverage = graph_coverage(graphs.iter().zip(examples.iter().map(|e| &e.instance)), h.max_hops);
            Ok(serde_json::json!({ "graphs": graphs.len(), "graph_coverage": coverage }))
        }
        Command::TrainSelector { data, out, metrics } => {
            let h = settings.hyper()?;
            let v = settings.embeddings(&h)?;
            let examples = load_examples(data)?;
            let (model, history) = train_selector(&examples, &v, &h, seed).map_err(runtime("train-selector"))?;
            save_checkpoint(out, &Checkpoint::capture(SELECTOR_KIND, &model, &h, seed))
                .map_err(runtime("write"))?;
            if let Some(m) = metrics {
                write_out(m, &jsonl(&history))?;
            }
            Ok(serde_json::json!({ "epochs": history.len(), "last": history.last() }))
        }
        Command::TrainJoint {
            data,
            dev_instances,
            dev_srl,
            selector,
            out,
            metrics,
        } => {
            let h = settings.hyper()?;
            let v = settings.embeddings(&h)?;
            let train = prepare_gold(&load_examples(data)?, &v, &h).map_err(runtime("prepare"))?;
            let dev = match (dev_instances, dev_srl, selector) {
                (Some(i), Some(s), Some(sel)) => {
                    let dev_set = load_examples(&DataArgs {
                        instances: i.clone(),
                        srl: s.clone(),
                    })?;
                    let (m, _) = load_selector(sel)?;
                    let cov = gold_coverage(&prepare_gold(&dev_set, &v, &h).map_err(runtime("prepare"))?, &h);
                    Some((predict_inputs(&m, &dev_set, &v, &h).map_err(runtime("prepare"))?, cov))
                }
                _ => None,
            };
            let init = ModelParams::new(&h.dims(), seed);
            let dev_ref = dev.as_ref().filter(|(d, _)| !d.is_empty()).map(|(d, c)| (d.as_slice(), *c));
            let (model, history) = train_joint(init, &train, dev_ref, &h, seed).map_err(runtime("train-joint"))?;
            save_checkpoint(out, &Checkpoint::capture(MODEL_KIND, &model, &h, seed)).map_err(runtime("write"))?;
            if let Some(m) = metrics {
                write_out(m, &jsonl(&history))?;
            }
            Ok(serde_json::json!({ "epochs": history.len(), "last": history.last() }))
        }
        Command::Predict { data, models, out } => {
            let (model, mh) = load_model(&models.model)?;
            let (selector, _) = load_selector(&models.selector)?;
            let h = settings.hyper_over(&mh)?;
            let v = settings.embeddings(&h)?;
            let examples = load_examples(data)?;
            let preds = predict_all(&selector, &model, &examples, &v, &h).map_err(runtime("predict"))?;
            write_out(out, &jsonl(&preds))?;
            Ok(serde_json::json!({ "predictions": preds.len() }))
        }
        Command::Evaluate {
            data,
            models,
            out,
            predictions,
        } => {
            let (model, mh) = load_model(&models.model)?;
            let (selector, _) = load_selector(&models.selector)?;
            let h = settings.hyper_over(&mh)?;
            let v = settings.embeddings(&h)?;
            let examples = load_examples(data)?;
            let cov = corpus_coverage(&examples, &h);
            let prepared = predict_inputs(&selector, &examples, &v, &h).map_err(runtime("prepare"))?;
            let (report, preds, loss) = evaluate(&model, &prepared, &h, cov).map_err(runtime("evaluate"))?;
            write_out(out, &jsonl(&[report]))?;
            if let Some(p) = predictions {
                write_out(p, &jsonl(&preds))?;
            }
            Ok(serde_json::json!({ "metrics": report, "loss": loss }))
        }
        Command::ExportGraph {
            data,
            id,
            selector,
            format,
            out,
        } => {
            let (h, sel) = match selector {
                Some(p) => {
                    let (m, sh) = load_selector(p)?;
                    let h = settings.hyper_over(&sh)?;
                    let v = settings.embeddings(&h)?;
                    (h, Some((m, v)))
                }
                None => (settings.hyper()?, None),
            };
            let examples = load_examples(data)?;
            let ex = examples
                .iter()
                .find(|e| e.instance.id == *id)
                .ok_or_else(|| CliError::Config(format!("no instance with id {id:?}")))?;
            let (_, g) = graph_for(ex, sel.as_ref(), &h)?;
            let text = match format {
                GraphFormat::Dot => export_dot(&g),
                GraphFormat::Json => crate::graph::export_structured(&g),
            };
            write_out(out, text.as_bytes())?;
            Ok(serde_json::json!({ "id": id, "nodes": g.node_count(), "edges": g.edges().len() }))
        }
    }
}

/// Parse `args`, run, report; returns the process exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            let err = CliError::Usage(e.to_string().trim().to_string());
            eprintln!("{}", err.record(None));
            return err.exit_code();
        }
    };
    match dispatch(&cli) {
        Ok(summary) => {
            println!("{summary}");
            0
        }
        Err(err) => {
            eprintln!("{}", err.record(Some(cli.command.name())));
            err.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file_which_overrides_base() {
        let file: FileConfig = toml::from_str("seed = 3\n[hyper]\nlr = 0.01\nepochs = 4\n").unwrap();
        let cli = Cli::try_parse_from([
            "srlgrn", "--epochs", "9", "--use-graph", "false", "synth", "--out-instances", "a", "--out-srl",
            "b",
        ])
        .unwrap();
        let flags = toml::Table::try_from(&cli.hyper).unwrap();
        let s = Settings {
            file,
            flags,
            seed: 3,
            vectors: None,
        };
        let h = s.hyper().unwrap();
        assert_eq!(h.lr, 0.01);
        assert_eq!(h.epochs, 9);
        assert!(!h.use_graph);
        assert_eq!(h.d_model, Hyper::default().d_model);
    }

    #[test]
    fn unknown_and_invalid_settings_are_config_errors() {
        let s = Settings {
            file: toml::from_str("[hyper]\nlearning_rate = 0.1\n").unwrap(),
            flags: toml::Table::new(),
            seed: 0,
            vectors: None,
        };
        assert_eq!(s.hyper().unwrap_err().exit_code(), 2);
        let s = Settings {
            file: FileConfig::default(),
            flags: toml::from_str("beta1 = 1.0").unwrap(),
            seed: 0,
            vectors: None,
        };
        assert_eq!(s.hyper().unwrap_err().exit_code(), 2);
        assert!(toml::from_str::<FileConfig>("colour = 1").is_err());
    }

    #[test]
    fn every_hyper_field_has_a_flag() {
        let fields = toml::Table::try_from(Hyper::default()).unwrap();
        let cli = <Cli as clap::CommandFactory>::command();
        let flags: Vec<String> = cli.get_arguments().filter_map(|a| a.get_long().map(String::from)).collect();
        for k in fields.keys() {
            assert!(flags.contains(&k.replace('_', "-")), "no flag for {k}");
        }
    }

    #[test]
    fn error_record_is_one_json_line() {
        let e = CliError::Runtime {
            stage: "read",
            message: "bad\nline".into(),
        };
        let rec = e.record(Some("predict"));
        assert!(!rec.contains('\n'));
        let v: serde_json::Value = serde_json::from_str(&rec).unwrap();
        assert_eq!(v["error"], "runtime");
        assert_eq!(v["stage"], "read");
        assert_eq!(e.exit_code(), 1);
    }
}
