use std::collections::BTreeMap;
use std::time::Instant;

use coref_autograd::{clip_global_norm, Adafactor, AdafactorConfig, Graph, LinearWarmup, Mat, ParamGroup, ParamId};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::config::PipelineConfig;
use super::model::CorefModel;
use super::predict::{evaluate, run_predict};
use crate::corpus::Document;
use crate::encoder::Vocab;
use crate::error::{CorefError, Result};
use crate::metrics::Report;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxEpochs,
    Patience,
    TargetReached,
}

#[derive(Clone, Debug, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub validation: Option<Report>,
    pub seconds: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct TrainReport {
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best: Report,
    pub stop: StopReason,
    pub history: Vec<EpochRecord>,
}

/// Joint detection and clustering loss of one document, with its parameter
/// gradients.
fn document_gradients(model: &CorefModel, doc: &Document, cfg: &PipelineConfig) -> Result<(f64, Vec<(ParamId, Mat)>)> {
    let mut g = Graph::new();
    let h = model.encoder.encode_document(&mut g, &model.store, doc, &model.vocab)?;
    let det = model.detector.detection_loss(&mut g, &model.store, h, doc, &model.hymr)?;
    let mut loss = g.scale(det, cfg.train.detection_weight);
    if cfg.train.clustering_weight > 0.0 {
        if let Some(c) = model.clusterer.clustering_loss(&mut g, &model.store, h, doc)? {
            let c = g.scale(c, cfg.train.clustering_weight);
            loss = g.add(loss, c)?;
        }
    }
    let value = g.scalar(loss);
    let grads = g.backward(loss)?;
    Ok((value, grads.params().into_iter().map(|(id, m)| (id, m.clone())).collect()))
}

/// Trains a fresh model and returns it with the weights of the best
/// validation epoch (by Avg.F1). With no validation documents the training
/// documents are used for selection.
pub fn train(cfg: &PipelineConfig, train_docs: &[Document], val_docs: &[Document]) -> Result<(CorefModel, TrainReport)> {
    cfg.validate()?;
    if train_docs.is_empty() {
        return Err(CorefError::Validation("no training documents".into()));
    }
    let val_docs = if val_docs.is_empty() {
        log::warn!("no validation documents; selecting on the training split");
        train_docs
    } else {
        val_docs
    };
    let t = &cfg.train;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = CorefModel::new(cfg, Vocab::build(train_docs), &mut rng)?;
    let steps_per_epoch = train_docs.len().div_ceil(t.grad_accum);
    let schedule = LinearWarmup::new(t.max_epochs * steps_per_epoch, t.warmup_frac);
    let mut opt = Adafactor::new(AdafactorConfig::default());
    let mut step = 0;

    let mut best: Option<(usize, Report, coref_autograd::ParamStore)> = None;
    let mut stale = 0;
    let mut history = Vec::new();
    let mut stop = StopReason::MaxEpochs;
    let mut order: Vec<usize> = (0..train_docs.len()).collect();

    for epoch in 1..=t.max_epochs {
        let started = Instant::now();
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(t.grad_accum) {
            let results: Vec<(f64, Vec<(ParamId, Mat)>)> = batch
                .par_iter()
                .map(|&i| document_gradients(&model, &train_docs[i], cfg))
                .collect::<Result<_>>()?;
            let mut sum: BTreeMap<ParamId, Mat> = BTreeMap::new();
            for (loss, grads) in results {
                if !loss.is_finite() {
                    return Err(CorefError::Diverged { epoch, loss });
                }
                epoch_loss += loss;
                for (id, gm) in grads {
                    match sum.get_mut(&id) {
                        Some(acc) => *acc += &gm,
                        None => {
                            sum.insert(id, gm);
                        }
                    }
                }
            }
            let scale = 1.0 / batch.len() as f64;
            let mut grads: Vec<(ParamId, Mat)> = sum.into_iter().map(|(id, m)| (id, m * scale)).collect();
            let norm = clip_global_norm(&mut grads, t.clip_norm);
            if !norm.is_finite() {
                return Err(CorefError::Diverged { epoch, loss: norm });
            }
            let factor = schedule.factor(step);
            opt.step(&mut model.store, &grads, |group| {
                factor * match group {
                    ParamGroup::Encoder => t.lr_encoder,
                    ParamGroup::Heads => t.lr_heads,
                }
            });
            step += 1;
        }
        let loss = epoch_loss / train_docs.len() as f64;

        let mut validation = None;
        if epoch % t.validate_every_epochs == 0 || epoch == t.max_epochs {
            let preds = run_predict(&model, val_docs, None)?.predictions;
            let report = evaluate(val_docs, &preds, cfg.data.drop_singletons)?;
            log::info!(
                "epoch {epoch}: loss {loss:.4}, val Avg.F1 {:.4}, mention F1 {:.4}",
                report.avg_f1,
                report.mentions.f1
            );
            if best.as_ref().is_none_or(|(_, b, _)| report.avg_f1 > b.avg_f1) {
                best = Some((epoch, report, model.store.clone()));
                stale = 0;
            } else {
                stale += 1;
            }
            validation = Some(report);
        }
        history.push(EpochRecord { epoch, loss, validation, seconds: started.elapsed().as_secs_f64() });

        if let (Some(target), Some(r)) = (t.target_avg_f1, validation) {
            if r.avg_f1 >= target {
                stop = StopReason::TargetReached;
                break;
            }
        }
        if stale >= t.early_stop_patience {
            stop = StopReason::Patience;
            break;
        }
    }

    let (best_epoch, best_report, store) = best.expect("at least one validation round");
    model.store = store;
    let report = TrainReport { epochs_run: history.len(), best_epoch, best: best_report, stop, history };
    Ok((model, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::synthetic::{generate, SyntheticConfig};

    fn tiny() -> PipelineConfig {
        let mut cfg = PipelineConfig::default();
        cfg.encoder.d_h = 8;
        cfg.encoder.ffn_dim = 16;
        cfg.encoder.attention_heads = 2;
        cfg.encoder.mha_heads = 2;
        cfg.encoder.layers = 1;
        cfg.encoder.window = 24;
        cfg.detector.d_r = 8;
        cfg.clusterer.hidden = 8;
        cfg.train.max_epochs = 3;
        cfg.train.lr_encoder = 1e-2;
        cfg.train.lr_heads = 1e-2;
        cfg
    }

    fn docs() -> Vec<Document> {
        generate(&SyntheticConfig { docs: 6, min_sentences: 3, max_sentences: 4, seed: 5 }).unwrap()
    }

    #[test]
    fn loss_decreases_and_runs_are_reproducible() {
        let d = docs();
        let mut cfg = tiny();
        cfg.train.max_epochs = 8;
        let (m1, r1) = train(&cfg, &d, &[]).unwrap();
        let (m2, r2) = train(&cfg, &d, &[]).unwrap();
        assert!(r1.history.last().unwrap().loss < r1.history[0].loss);
        assert_eq!(r1.history.iter().map(|e| e.loss).collect::<Vec<_>>(), r2.history.iter().map(|e| e.loss).collect::<Vec<_>>());
        for id in m1.store.ids() {
            assert_eq!(m1.store.get(id), m2.store.get(id));
        }
        cfg.seed += 1;
        let (m3, _) = train(&cfg, &d, &[]).unwrap();
        assert!(m3.store.ids().any(|id| m3.store.get(id) != m1.store.get(id)));
    }

    #[test]
    fn patience_stops_training() {
        let mut cfg = tiny();
        cfg.train.max_epochs = 50;
        cfg.train.early_stop_patience = 2;
        cfg.train.lr_heads = 1e-12;
        cfg.train.lr_encoder = 0.0;
        let (_, report) = train(&cfg, &docs(), &[]).unwrap();
        assert_eq!(report.stop, StopReason::Patience);
        assert_eq!(report.epochs_run, 3);
        assert_eq!(report.best_epoch, 1);
    }

    #[test]
    fn divergence_is_reported() {
        let mut cfg = tiny();
        cfg.train.lr_heads = f64::MAX;
        cfg.train.lr_encoder = f64::MAX;
        cfg.train.clip_norm = f64::MAX;
        cfg.train.max_epochs = 5;
        assert!(matches!(train(&cfg, &docs(), &[]), Err(CorefError::Diverged { .. })));
    }
}
