use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::graph::Gradients;
use super::optim::Adam;
use super::tagger::{CsrlModel, ModelConfig, TrainingSample};
use super::vocab::Vocab;
use super::ModelError;
use crate::metrics::{f1_report, tuples_for_frame, ArgTuple, EvalReport};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainOptions {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            epochs: 10,
            batch_size: 32,
            learning_rate: 5e-5,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EpochReport {
    pub epoch: usize,
    pub mean_loss: f64,
    pub dev: Option<EvalReport>,
}

/// Word vocabulary over every flat item of the corpus, markers included.
pub fn corpus_vocab(corpus: &[TrainingSample]) -> Vocab {
    let mut seen = BTreeSet::new();
    let mut order = Vec::new();
    for s in corpus {
        for t in s.flat.texts() {
            if seen.insert(t) {
                order.push(t);
            }
        }
    }
    Vocab::build(order)
}

pub fn mean_loss(model: &CsrlModel, corpus: &[TrainingSample]) -> Result<f64, ModelError> {
    let mut total = 0.0;
    for s in corpus {
        total += model.loss(s)?;
    }
    Ok(total / corpus.len().max(1) as f64)
}

/// Tuple-level scores of the model's predictions against each sample's gold
/// frame.
pub fn evaluate(model: &CsrlModel, samples: &[TrainingSample]) -> Result<EvalReport, ModelError> {
    let mut gold: BTreeSet<ArgTuple> = BTreeSet::new();
    let mut pred: BTreeSet<ArgTuple> = BTreeSet::new();
    for s in samples {
        gold.extend(tuples_for_frame(&s.flat, &s.gold_frame())?);
        let p = model.predict_flat(&s.flat, &s.predicate)?;
        pred.extend(tuples_for_frame(&s.flat, &p.frame)?);
    }
    Ok(f1_report(&gold, &pred))
}

/// Fits a freshly initialized model to `corpus` with Adam.
pub fn train(
    corpus: &[TrainingSample],
    config: &ModelConfig,
    options: &TrainOptions,
    dev: Option<&[TrainingSample]>,
) -> Result<(CsrlModel, Vec<EpochReport>), ModelError> {
    if corpus.is_empty() {
        return Err(ModelError::EmptyCorpus);
    }
    let vocab = corpus_vocab(corpus);
    let model = CsrlModel::new(config.clone(), vocab)?;
    train_from(model, corpus, options, dev)
}

/// Continues training `model`; the epoch shuffle is seeded from its config.
pub fn train_from(
    mut model: CsrlModel,
    corpus: &[TrainingSample],
    options: &TrainOptions,
    dev: Option<&[TrainingSample]>,
) -> Result<(CsrlModel, Vec<EpochReport>), ModelError> {
    if corpus.is_empty() {
        return Err(ModelError::EmptyCorpus);
    }
    let batch_size = options.batch_size.max(1);
    let mut adam = Adam::new(&model.params, options.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(model.config.seed ^ 0x5eed_cafe);
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    let mut reports = Vec::with_capacity(options.epochs);
    let mut step = 0;
    for epoch in 1..=options.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(batch_size) {
            step += 1;
            let mut grads = Gradients::zeros_like(&model.params);
            for &i in batch {
                let (loss, g) = model.loss_and_gradients(&corpus[i])?;
                if !loss.is_finite() || !g.all_finite() {
                    return Err(ModelError::Divergence { epoch, step });
                }
                epoch_loss += loss;
                grads.accumulate(&g);
            }
            grads.scale(1.0 / batch.len() as f64);
            adam.step(&mut model.params, &grads);
            if !model.params.all_finite() {
                return Err(ModelError::Divergence { epoch, step });
            }
        }
        let mean_loss = epoch_loss / corpus.len() as f64;
        let dev_report = dev.map(|d| evaluate(&model, d)).transpose()?;
        match &dev_report {
            Some(r) => log::info!(
                "epoch {epoch}: loss {mean_loss:.5} dev F1 all {:.4} intra {:.4} cross {:.4}",
                r.all.f1,
                r.intra.f1,
                r.cross.f1
            ),
            None => log::info!("epoch {epoch}: loss {mean_loss:.5}"),
        }
        reports.push(EpochReport {
            epoch,
            mean_loss,
            dev: dev_report,
        });
    }
    Ok((model, reports))
}
