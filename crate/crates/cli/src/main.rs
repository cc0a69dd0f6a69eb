mod io;

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use csrl_core::config::RunConfig;
use csrl_core::dialogue::{compute_stats, flatten, validate_session, DialogueSession, Frame};
use csrl_core::linearize::{extract_triples, linearize, ContextUtterance, MaskKind, MaskOptions};
use csrl_core::metrics::{
    evaluate_generation, f1_report, frames_to_tuples, gold_frames, mention_f1, mention_keys, MentionKey,
};
use csrl_core::model::{train, Checkpoint, CsrlModel, TrainingSample};
use csrl_core::records::{split_of, to_jsonl, FrameRecord, RecordError, SessionRecord, Split};
use csrl_core::rewriter::{train_rewriter, RewriteItem, RewriterConfig};
use csrl_core::synthetic::{synthetic_corpus, synthetic_rewrite_items, SyntheticOptions};

use crate::io::{emit, print_json, read_sessions, read_text, resolve, write_atomic};

#[derive(Parser)]
#[command(name = "csrl", version, about = "Conversational semantic role labeling toolkit")]
struct Cli {
    /// Run seed; overrides the config file.
    #[arg(long, global = true, env = "CSRL_SEED")]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum MaskArg {
    Bi,
    Triple,
}

impl From<MaskArg> for MaskKind {
    fn from(m: MaskArg) -> MaskKind {
        match m {
            MaskArg::Bi => MaskKind::Bi,
            MaskArg::Triple => MaskKind::Triple,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Check annotations; exit 0 when clean, 1 on violations, 2 on parse errors.
    Validate { path: PathBuf },
    /// Corpus statistics.
    Stats { path: PathBuf },
    /// Train a tagger and write a checkpoint.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        no_span_loss: bool,
        #[arg(long)]
        no_turn_indicator: bool,
        #[arg(long)]
        no_speaker_indicator: bool,
    },
    /// Score a checkpoint or a predictions file against gold frames.
    Eval {
        path: PathBuf,
        #[arg(long, conflicts_with = "predictions", required_unless_present = "predictions")]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        predictions: Option<PathBuf>,
    },
    /// Predict one frame per gold predicate.
    Predict {
        path: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Linearize gold frames, context and last turn as generator input.
    Linearize {
        path: PathBuf,
        #[arg(long, value_enum, default_value = "triple")]
        mask: MaskArg,
        /// Hide the triples from context and response.
        #[arg(long)]
        deny_z: bool,
        /// 0 keeps the canonical triple order.
        #[arg(long, default_value_t = 0)]
        order_seed: u64,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Fit and decode the demonstrator rewriter.
    RewriteDemo {
        /// Records carrying a `rewrite` target; synthetic items when omitted.
        path: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "triple")]
        mask: MaskArg,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long, default_value_t = 8)]
        items: usize,
    },
    /// Write a synthetic toy corpus.
    Synth {
        #[arg(long, default_value_t = 32)]
        sessions: usize,
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .target(env_logger::Target::Stderr)
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    let seed = cli.seed;
    match cli.command {
        Command::Validate { path } => cmd_validate(&path),
        Command::Stats { path } => {
            let sessions: Vec<_> = read_sessions(&path)?.into_iter().map(|(_, s)| s).collect();
            print_json(&serde_json::to_value(compute_stats(&sessions)?)?)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Train {
            config,
            no_span_loss,
            no_turn_indicator,
            no_speaker_indicator,
        } => cmd_train(&config, seed, no_span_loss, no_turn_indicator, no_speaker_indicator),
        Command::Eval {
            path,
            checkpoint,
            predictions,
        } => cmd_eval(&path, checkpoint.as_deref(), predictions.as_deref()),
        Command::Predict {
            path,
            checkpoint,
            output,
        } => cmd_predict(&path, &checkpoint, output.as_deref()),
        Command::Linearize {
            path,
            mask,
            deny_z,
            order_seed,
            output,
        } => cmd_linearize(&path, mask.into(), deny_z, order_seed, output.as_deref()),
        Command::RewriteDemo {
            path,
            mask,
            epochs,
            items,
        } => cmd_rewrite_demo(path.as_deref(), mask.into(), epochs, items, seed.unwrap_or(0)),
        Command::Synth { sessions, output } => {
            let opts = SyntheticOptions {
                sessions,
                seed: seed.unwrap_or(SyntheticOptions::default().seed),
                ..SyntheticOptions::default()
            };
            let records: Vec<_> = synthetic_corpus(&opts).iter().map(SessionRecord::from_session).collect();
            emit(output.as_deref(), &to_jsonl(&records))?;
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn cmd_validate(path: &Path) -> Result<ExitCode> {
    let text = read_text(path)?;
    let sessions = match csrl_core::records::parse_sessions(&text) {
        Ok(s) => s,
        Err(e) => {
            let line = match &e {
                RecordError::Parse { line, .. } | RecordError::Invalid { line, .. } => Some(*line),
                RecordError::Empty => None,
            };
            print_json(&json!({ "error": e.to_string(), "line": line }))?;
            eprintln!("error: {}: {e}", path.display());
            return Ok(ExitCode::from(2));
        }
    };
    let violations: Vec<_> = sessions.iter().flat_map(|(_, s)| validate_session(s)).collect();
    log::info!("{} sessions, {} violations", sessions.len(), violations.len());
    print_json(&json!({ "sessions": sessions.len(), "violations": violations }))?;
    Ok(if violations.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}

fn samples_of(sessions: &[DialogueSession], model: &csrl_core::model::ModelConfig) -> Result<Vec<TrainingSample>> {
    let mut out = Vec::new();
    for s in sessions {
        out.extend(TrainingSample::from_session(s, model).with_context(|| format!("session {}", s.session_id))?);
    }
    Ok(out)
}

fn cmd_train(
    config_path: &Path,
    seed: Option<u64>,
    no_span_loss: bool,
    no_turn_indicator: bool,
    no_speaker_indicator: bool,
) -> Result<ExitCode> {
    let mut cfg = RunConfig::from_json(&read_text(config_path)?)
        .with_context(|| format!("config {}", config_path.display()))?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if no_span_loss {
        cfg.model.span_loss_weight = 0.0;
    }
    cfg.model.use_turn_indicator &= !no_turn_indicator;
    cfg.model.use_speaker_indicator &= !no_speaker_indicator;
    cfg.validate()?;
    let hash = cfg.hash();
    log::info!("seed {} config {hash}", cfg.seed);

    let model_cfg = cfg.model_config();
    let train_path = resolve(config_path, &cfg.paths.train);
    let mut train_sessions: Vec<_> = read_sessions(&train_path)?.into_iter().map(|(_, s)| s).collect();
    let mut dev_sessions = match &cfg.paths.dev {
        Some(p) => read_sessions(&resolve(config_path, p))?.into_iter().map(|(_, s)| s).collect(),
        None => Vec::new(),
    };
    if cfg.training.dev_split {
        let (keep, rest): (Vec<_>, Vec<_>) =
            train_sessions.into_iter().partition(|s| split_of(&s.session_id, cfg.seed) == Split::Train);
        dev_sessions = rest.into_iter().filter(|s| split_of(&s.session_id, cfg.seed) == Split::Dev).collect();
        train_sessions = keep;
    }
    let train_samples = samples_of(&train_sessions, &model_cfg)?;
    let dev_samples = samples_of(&dev_sessions, &model_cfg)?;
    log::info!("{} train samples, {} dev samples", train_samples.len(), dev_samples.len());
    let dev = (!dev_samples.is_empty()).then_some(dev_samples.as_slice());
    let (model, reports) = train(&train_samples, &model_cfg, &cfg.train_options(), dev)?;
    let ck_path = resolve(config_path, &cfg.paths.checkpoint);
    write_atomic(&ck_path, &Checkpoint::new(model).to_json()?)?;
    log::info!("checkpoint {}", ck_path.display());
    print_json(&json!({
        "seed": cfg.seed,
        "config_hash": hash,
        "checkpoint": ck_path,
        "train_samples": train_samples.len(),
        "dev_samples": dev_samples.len(),
        "epochs": reports,
    }))?;
    Ok(ExitCode::SUCCESS)
}

fn load_checkpoint(path: &Path) -> Result<CsrlModel> {
    let ck = Checkpoint::from_json(&read_text(path)?).with_context(|| format!("checkpoint {}", path.display()))?;
    log::info!("checkpoint seed {}", ck.seed);
    Ok(ck.model)
}

struct Predicted {
    frames: Vec<(String, Frame)>,
    mentions: BTreeMap<String, Vec<csrl_core::dialogue::Span>>,
}

fn predict_all(model: &CsrlModel, sessions: &[DialogueSession]) -> Result<Predicted> {
    let mut frames = Vec::new();
    let mut mentions: BTreeMap<String, Vec<_>> = BTreeMap::new();
    for s in sessions {
        let flat = flatten(s)?;
        let entry = mentions.entry(s.session_id.clone()).or_default();
        for gold in &s.frames {
            let p = model
                .predict_flat(&flat, &gold.predicate)
                .with_context(|| format!("session {}", s.session_id))?;
            for m in p.mentions {
                if !entry.contains(&m) {
                    entry.push(m);
                }
            }
            frames.push((s.session_id.clone(), p.frame));
        }
    }
    Ok(Predicted { frames, mentions })
}

fn mention_set(
    sessions: &[DialogueSession],
    mentions: impl Fn(&DialogueSession) -> Option<Vec<csrl_core::dialogue::Span>>,
) -> Result<BTreeSet<MentionKey>> {
    let mut out = BTreeSet::new();
    for s in sessions.iter().filter(|s| s.mentions.is_some()) {
        if let Some(m) = mentions(s) {
            out.extend(mention_keys(&flatten(s)?, &m)?);
        }
    }
    Ok(out)
}

fn cmd_eval(path: &Path, checkpoint: Option<&Path>, predictions: Option<&Path>) -> Result<ExitCode> {
    let gold: Vec<_> = read_sessions(path)?.into_iter().map(|(_, s)| s).collect();
    let (seed, predicted) = match (checkpoint, predictions) {
        (Some(ck), _) => {
            let model = load_checkpoint(ck)?;
            (Some(model.config.seed), predict_all(&model, &gold)?)
        }
        (None, Some(p)) => {
            let recs = read_sessions(p)?;
            let frames = recs
                .iter()
                .flat_map(|(_, s)| s.frames.iter().map(|f| (s.session_id.clone(), f.clone())))
                .collect();
            let mentions = recs
                .into_iter()
                .filter_map(|(_, s)| s.mentions.map(|m| (s.session_id, m)))
                .collect();
            (None, Predicted { frames, mentions })
        }
        (None, None) => bail!("one of --checkpoint or --predictions is required"),
    };
    let gold_tuples = frames_to_tuples(&gold, &gold_frames(&gold))?;
    let pred_tuples = frames_to_tuples(&gold, &predicted.frames)?;
    let report = f1_report(&gold_tuples, &pred_tuples);
    log::info!(
        "F1 all {:.4} intra {:.4} cross {:.4}",
        report.all.f1,
        report.intra.f1,
        report.cross.f1
    );
    let mut out = json!({
        "seed": seed,
        "all": report.all,
        "intra": report.intra,
        "cross": report.cross,
    });
    if gold.iter().any(|s| s.mentions.is_some()) {
        let g = mention_set(&gold, |s| s.mentions.clone())?;
        let p = mention_set(&gold, |s| predicted.mentions.get(&s.session_id).cloned())?;
        out["mentions"] = serde_json::to_value(mention_f1(&g, &p))?;
    }
    print_json(&out)?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_predict(path: &Path, checkpoint: &Path, output: Option<&Path>) -> Result<ExitCode> {
    let model = load_checkpoint(checkpoint)?;
    let mut records = Vec::new();
    let mut violations = 0;
    for (mut rec, session) in read_sessions(path)? {
        let predicted = predict_all(&model, std::slice::from_ref(&session))?;
        let frames: Vec<Frame> = predicted.frames.into_iter().map(|(_, f)| f).collect();
        let checked = DialogueSession {
            frames: frames.clone(),
            ..session.clone()
        };
        for v in validate_session(&checked) {
            violations += 1;
            log::warn!("{}: frame {:?}: {:?} {}", v.session_id, v.frame, v.kind, v.detail);
        }
        rec.frames = frames.iter().map(FrameRecord::from).collect();
        if let Some(m) = predicted.mentions.get(&session.session_id) {
            rec.mentions = Some(m.iter().map(|&s| s.into()).collect());
        }
        records.push(rec);
    }
    if violations > 0 {
        log::warn!("{violations} predicted arguments violate annotation criteria");
    }
    emit(output, &to_jsonl(&records))?;
    Ok(ExitCode::SUCCESS)
}

fn context_of(session: &DialogueSession, upto: usize) -> Vec<ContextUtterance> {
    session.utterances[..upto]
        .iter()
        .map(|u| ContextUtterance {
            speaker: u.speaker,
            tokens: u.tokens.clone(),
        })
        .collect()
}

fn cmd_linearize(path: &Path, kind: MaskKind, deny_z: bool, order_seed: u64, output: Option<&Path>) -> Result<ExitCode> {
    let mut options = MaskOptions::with_kind(kind);
    if deny_z {
        options = options.deny_z();
    }
    let mut lines = String::new();
    for (rec, session) in read_sessions(path)? {
        let last = session.turns() - 1;
        let triples = extract_triples(&session, &session.frames, order_seed)?;
        let response = rec.rewrite.clone().unwrap_or_else(|| session.utterances[last].tokens.clone());
        let input = linearize(
            &triples,
            &context_of(&session, last),
            Some(&response),
            &options,
            session.utterances[last].speaker,
        )
        .with_context(|| format!("session {}", session.session_id))?;
        let mut v = input.to_json();
        v["session_id"] = json!(session.session_id);
        v["order_seed"] = json!(order_seed);
        lines.push_str(&serde_json::to_string(&v)?);
        lines.push('\n');
    }
    emit(output, &lines)?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_rewrite_demo(path: Option<&Path>, kind: MaskKind, epochs: Option<usize>, count: usize, seed: u64) -> Result<ExitCode> {
    let items: Vec<RewriteItem> = match path {
        Some(p) => {
            let mut items = Vec::new();
            for (rec, session) in read_sessions(p)? {
                let Some(target) = rec.rewrite else { continue };
                items.push(RewriteItem {
                    triples: extract_triples(&session, &session.frames, 0)?,
                    context: context_of(&session, session.turns()),
                    response_speaker: session.utterances[session.turns() - 1].speaker,
                    target,
                });
            }
            if items.is_empty() {
                bail!("{} has no records with a rewrite target", p.display());
            }
            items
        }
        None => synthetic_rewrite_items(count, seed.wrapping_add(3)),
    };
    let defaults = RewriterConfig::default();
    let config = RewriterConfig {
        mask: MaskOptions::with_kind(kind),
        epochs: epochs.unwrap_or(defaults.epochs),
        seed,
        ..defaults
    };
    log::info!("seed {seed}, {} items, {} epochs", items.len(), config.epochs);
    let (model, history) = train_rewriter(&items, &config)?;
    let mut hyps = Vec::with_capacity(items.len());
    for it in &items {
        hyps.push(model.generate_greedy(&it.triples, &it.context, it.response_speaker, it.target.len() + 8)?);
    }
    let refs: Vec<Vec<String>> = items.iter().map(|i| i.target.clone()).collect();
    let report = evaluate_generation(&refs, &hyps)?;
    print_json(&json!({
        "seed": seed,
        "mask": config.mask.kind,
        "items": items.len(),
        "final_loss": history.last(),
        "metrics": report.to_json(),
        "outputs": hyps.iter().map(|h| h.join(" ")).collect::<Vec<_>>(),
    }))?;
    Ok(ExitCode::SUCCESS)
}
