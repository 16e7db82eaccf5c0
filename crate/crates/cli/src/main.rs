//! `langdiar`: corpus generation, training, evaluation and diarization
//! workflows. Exit codes: 0 ok, 2 usage or config error, 3 runtime failure.

mod config;
mod selfcheck;

use clap::{Parser, Subcommand};
use config::{load_config, RunConfig};
use langdiar_core::eval::{evaluate_model, model_taxonomy, EvalReport, UtteranceScore};
use langdiar_core::labels::{
    boundaries_to_samples, downsample_labels, load_manifest, map_taxonomy, Split, TaskTaxonomy,
};
use langdiar_core::models::{
    init_cascade, read_embd, BiLstmConfig, EncoderHeadConfig, ModelKind, XsaConfig,
};
use langdiar_core::synth::generate_corpus;
use langdiar_core::train::{
    load_checkpoint, save_checkpoint, train, Checkpoint, TrainError,
};
use langdiar_core::{ModelConfig, ModelError};
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(name = "langdiar", version, about = "Language diarization toolkit")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic code-switched corpus.
    GenCorpus {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model on a generated corpus.
    Train {
        /// Architecture: bilstm, xsa or encoder-head.
        #[arg(long)]
        model: String,
        /// Diarization task: 1, 2 or 3.
        #[arg(long)]
        task: u8,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Checkpoint of the previous (coarser) task for cascade init.
        #[arg(long)]
        init_from: Option<PathBuf>,
    },
    /// Score a checkpoint on one manifest split.
    Evaluate {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        split: String,
        /// Remap predictions to a coarser task before scoring.
        #[arg(long)]
        remap_task: Option<u8>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Score ground truth against itself (pipeline identity check).
        #[arg(long)]
        oracle: bool,
    },
    /// Label one WAV file with merged language segments.
    Diarize {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        wav: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run gradient, loss and parameter-count checks.
    Selfcheck,
}

struct Failure {
    code: i32,
    message: String,
}

fn usage(message: impl Into<String>) -> Failure {
    Failure {
        code: 2,
        message: message.into(),
    }
}

fn runtime(message: impl Into<String>) -> Failure {
    Failure {
        code: 3,
        message: message.into(),
    }
}

fn train_failure(e: TrainError) -> Failure {
    match e {
        TrainError::EmptySplit(_)
        | TrainError::ClassCountMismatch { .. }
        | TrainError::VersionMismatch { .. }
        | TrainError::CorruptFile { .. }
        | TrainError::Model(ModelError::ArchitectureMismatch(_)) => usage(e.to_string()),
        other => runtime(other.to_string()),
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(f) = run(cli) {
        eprintln!("error: {}", f.message);
        std::process::exit(f.code);
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.cmd {
        Cmd::GenCorpus { config, out } => cmd_gen_corpus(config.as_deref(), &out),
        Cmd::Train {
            model,
            task,
            config,
            init_from,
        } => {
            let kind: ModelKind = model.parse().map_err(usage)?;
            cmd_train(kind, task, config.as_deref(), init_from.as_deref())
        }
        Cmd::Evaluate {
            ckpt,
            split,
            remap_task,
            out,
            config,
            oracle,
        } => cmd_evaluate(&ckpt, &split, remap_task, &out, config.as_deref(), oracle),
        Cmd::Diarize { ckpt, wav, out } => cmd_diarize(&ckpt, &wav, &out),
        Cmd::Selfcheck => selfcheck::run().map_err(runtime),
    }
}

fn parse_task(task: u8) -> Result<TaskTaxonomy, Failure> {
    TaskTaxonomy::from_index(task).ok_or_else(|| usage(format!("task must be 1, 2 or 3, got {task}")))
}

fn cmd_gen_corpus(config: Option<&Path>, out: &Path) -> Result<(), Failure> {
    let cfg = load_config(config).map_err(usage)?;
    std::fs::create_dir_all(out).map_err(|e| runtime(e.to_string()))?;
    let manifest = generate_corpus(&cfg.corpus, out).map_err(|e| runtime(e.to_string()))?;
    for split in [Split::Train, Split::Dev, Split::Test] {
        println!("{split}: {} utterances", manifest.split(split).count());
    }
    println!("corpus written to {}", out.display());
    Ok(())
}

/// Concrete model config for the selected kind, classes set by the task.
fn resolve_model(
    cfg: &RunConfig,
    kind: ModelKind,
    task: TaskTaxonomy,
) -> Result<ModelConfig, Failure> {
    let mut model = match &cfg.model {
        Some(m) => {
            if m.kind() != kind {
                return Err(usage(format!(
                    "config model section is {:?} but --model asks for {:?}",
                    m.kind(),
                    kind
                )));
            }
            m.clone()
        }
        None => match kind {
            ModelKind::Bilstm => ModelConfig::Bilstm(BiLstmConfig {
                input_dim: cfg.mel.n_mels,
                ..BiLstmConfig::with_classes(0)
            }),
            ModelKind::Xsa => ModelConfig::Xsa(XsaConfig {
                input_dim: cfg.mel.n_mels,
                ..XsaConfig::with_classes(0)
            }),
            ModelKind::EncoderHead => {
                ModelConfig::EncoderHead(EncoderHeadConfig::with_classes(0))
            }
        },
    };
    model.set_num_classes(task.num_classes());
    Ok(model)
}

fn cmd_train(
    kind: ModelKind,
    task: u8,
    config: Option<&Path>,
    init_from: Option<&Path>,
) -> Result<(), Failure> {
    let cfg = load_config(config).map_err(usage)?;
    let task = parse_task(task)?;
    let manifest_path = cfg.paths.corpus_dir.join("manifest.jsonl");
    let manifest = load_manifest(&manifest_path).map_err(|e| usage(e.to_string()))?;

    let mut model_cfg = resolve_model(&cfg, kind, task)?;
    if let (ModelConfig::EncoderHead(ec), Some(entry)) =
        (&mut model_cfg, manifest.entries.first())
    {
        // infer the embedding width from the corpus when not pinned
        if cfg.model.is_none() {
            if let Some(embd) = &entry.embd_path {
                let e = read_embd(embd).map_err(|e| usage(e.to_string()))?;
                ec.embed_dim = e.ncols();
            }
        }
    }

    let mut train_cfg = cfg.train.clone();
    train_cfg.task = task;

    let init = match init_from {
        Some(path) => {
            let ckpt = load_checkpoint(path).map_err(train_failure)?;
            let params = init_cascade(&model_cfg, &ckpt.model_cfg, &ckpt.params, train_cfg.seed)
                .map_err(|e| usage(e.to_string()))?;
            Some(params)
        }
        None => None,
    };

    let outcome =
        train(&model_cfg, &manifest, &train_cfg, init, &cfg.mel).map_err(train_failure)?;

    let out_dir = cfg.paths.out_dir;
    std::fs::create_dir_all(&out_dir).map_err(|e| runtime(e.to_string()))?;
    let last = outcome.final_state;
    save_checkpoint(&last, &out_dir.join("last.ckpt")).map_err(|e| runtime(e.to_string()))?;
    let best = Checkpoint {
        params: outcome.best_params,
        ..last
    };
    save_checkpoint(&best, &out_dir.join("best.ckpt")).map_err(|e| runtime(e.to_string()))?;
    std::fs::write(out_dir.join("metrics.csv"), outcome.log.to_csv())
        .map_err(|e| runtime(e.to_string()))?;
    println!(
        "trained {kind} on task {task:?}: best dev GER {:.4}, artifacts in {}",
        outcome.best_dev_ger,
        out_dir.display()
    );
    Ok(())
}

/// Pipeline-identity report: ground truth scored against itself.
fn oracle_report(
    model_cfg: &ModelConfig,
    manifest: &langdiar_core::Manifest,
    split: Split,
    taxonomy: TaskTaxonomy,
    mel: &langdiar_core::MelConfig,
) -> Result<EvalReport, Failure> {
    let native = model_taxonomy(model_cfg).map_err(|e| usage(e.to_string()))?;
    let mut scores = Vec::new();
    let mut pairs = Vec::new();
    for entry in manifest.split(split) {
        let features = langdiar_core::eval::load_model_input(model_cfg, entry, mel)
            .map_err(|e| runtime(e.to_string()))?;
        let t_out = model_cfg.output_len(features.nrows());
        let track = boundaries_to_samples(&entry.boundaries, entry.num_samples(), native)
            .map_err(|e| runtime(e.to_string()))?;
        let truth = downsample_labels(&track, t_out).map_err(|e| runtime(e.to_string()))?;
        let truth = map_taxonomy(&truth, taxonomy).map_err(|e| runtime(e.to_string()))?;
        scores.push(UtteranceScore {
            utt_id: entry.utt_id.clone(),
            error_rate: 0.0,
            errors: 0,
            valid: truth.labels.len(),
        });
        pairs.extend(truth.labels.iter().map(|&c| (c, c)));
    }
    let (ger, mer) = langdiar_core::eval::aggregate(&scores).map_err(|e| usage(e.to_string()))?;
    let confusion = langdiar_core::eval::confusion_matrix(&pairs, taxonomy.num_classes())
        .map_err(|e| runtime(e.to_string()))?;
    Ok(EvalReport {
        taxonomy,
        ger,
        mer,
        per_utterance: scores,
        confusion: confusion.outer_iter().map(|r| r.to_vec()).collect(),
        class_names: taxonomy.class_names().iter().map(|s| s.to_string()).collect(),
    })
}

fn cmd_evaluate(
    ckpt: &Path,
    split: &str,
    remap_task: Option<u8>,
    out: &Path,
    config: Option<&Path>,
    oracle: bool,
) -> Result<(), Failure> {
    let cfg = load_config(config).map_err(usage)?;
    let split = Split::parse(split)
        .ok_or_else(|| usage(format!("split must be train, dev or test, got {split:?}")))?;
    let ckpt = load_checkpoint(ckpt).map_err(train_failure)?;
    let manifest_path = cfg.paths.corpus_dir.join("manifest.jsonl");
    let manifest = load_manifest(&manifest_path).map_err(|e| usage(e.to_string()))?;
    if manifest.split(split).next().is_none() {
        return Err(usage(format!("split {split} is empty in {}", manifest_path.display())));
    }
    let taxonomy = match remap_task {
        Some(i) => parse_task(i)?,
        None => model_taxonomy(&ckpt.model_cfg).map_err(|e| usage(e.to_string()))?,
    };
    let report = if oracle {
        oracle_report(&ckpt.model_cfg, &manifest, split, taxonomy, &cfg.mel)?
    } else {
        evaluate_model(&ckpt.model_cfg, &ckpt.params, &manifest, split, taxonomy, &cfg.mel)
            .map_err(|e| runtime(e.to_string()))?
    };
    let json = serde_json::to_string_pretty(&report).map_err(|e| runtime(e.to_string()))?;
    std::fs::write(out, json).map_err(|e| runtime(e.to_string()))?;
    let csv_path = out.with_extension("confusion.csv");
    std::fs::write(&csv_path, report.confusion_csv()).map_err(|e| runtime(e.to_string()))?;
    println!(
        "{split} GER {:.4} MER {:.4}; report {}, confusion {}",
        report.ger,
        report.mer,
        out.display(),
        csv_path.display()
    );
    Ok(())
}

fn cmd_diarize(ckpt: &Path, wav: &Path, out: &Path) -> Result<(), Failure> {
    let ckpt = load_checkpoint(ckpt).map_err(train_failure)?;
    if matches!(ckpt.model_cfg, ModelConfig::EncoderHead(_)) {
        return Err(usage(
            "encoder-head checkpoints need precomputed embeddings and cannot diarize raw WAV",
        ));
    }
    let native = model_taxonomy(&ckpt.model_cfg).map_err(|e| usage(e.to_string()))?;
    let wave = langdiar_core::dsp::load_wav(wav).map_err(|e| usage(e.to_string()))?;
    let mel = langdiar_core::MelConfig::default();
    let features =
        langdiar_core::dsp::mel_spectrogram(&wave, &mel).map_err(|e| usage(e.to_string()))?;
    let preds = langdiar_core::eval::predict(&ckpt.model_cfg, &ckpt.params, &features.values)
        .map_err(|e| usage(e.to_string()))?;
    if preds.is_empty() {
        return Err(usage("waveform too short for one prediction segment"));
    }
    let n = wave.samples.len();
    let window = n / preds.len();
    let names = native.class_names();

    let mut lines = Vec::new();
    let mut run_start = 0usize;
    for s in 1..=preds.len() {
        if s == preds.len() || preds[s] != preds[run_start] {
            let start_sample = run_start * window;
            let end_sample = if s == preds.len() { n } else { s * window };
            lines.push(format!(
                "{{\"start_sample\":{start_sample},\"end_sample\":{end_sample},\"label\":\"{}\"}}",
                names[preds[run_start]]
            ));
            run_start = s;
        }
    }
    std::fs::write(out, lines.join("\n") + "\n").map_err(|e| runtime(e.to_string()))?;
    println!("{} merged segments written to {}", lines.len(), out.display());
    Ok(())
}
