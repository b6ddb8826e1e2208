use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Label, LivenessError, LstmModel, VelocityWindow};

/// Disjoint subject partitions for one train/test split.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub seed: u64,
    pub train: Vec<u32>,
    pub validation: Vec<u32>,
    pub test: Vec<u32>,
}

impl SplitPlan {
    pub fn all_subjects(&self) -> BTreeSet<u32> {
        self.train.iter().chain(&self.validation).chain(&self.test).copied().collect()
    }

    pub fn is_disjoint(&self) -> bool {
        self.all_subjects().len() == self.train.len() + self.validation.len() + self.test.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub hidden: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub clip_norm: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hidden: 16,
            learning_rate: 1e-2,
            batch_size: 32,
            max_epochs: 300,
            patience: 25,
            clip_norm: 5.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub validation_loss: f64,
    pub validation_accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    /// Parameters from the epoch with the lowest validation loss.
    pub model: LstmModel,
    pub best_epoch: usize,
    pub history: Vec<EpochStats>,
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    step: i32,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }

    fn update(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.step += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.step);
        let c2 = 1.0 - Self::BETA2.powi(self.step);
        for i in 0..params.len() {
            self.m[i] = Self::BETA1 * self.m[i] + (1.0 - Self::BETA1) * grad[i];
            self.v[i] = Self::BETA2 * self.v[i] + (1.0 - Self::BETA2) * grad[i] * grad[i];
            params[i] -= lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + Self::EPS);
        }
    }
}

fn has_both_classes(ws: &[&VelocityWindow]) -> bool {
    ws.iter().any(|w| w.label == Label::Real) && ws.iter().any(|w| w.label == Label::Spoof)
}

pub(crate) fn accuracy_at_half(model: &LstmModel, ws: &[VelocityWindow]) -> Result<f64, LivenessError> {
    let mut hits = 0usize;
    for w in ws {
        if Label::from_probability(model.forward(w)?, 0.5) == w.label {
            hits += 1;
        }
    }
    Ok(hits as f64 / ws.len().max(1) as f64)
}

/// Minibatch Adam on binary cross-entropy with early stopping on the
/// validation subjects' loss.
pub fn train(
    windows: &[VelocityWindow],
    split: &SplitPlan,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<TrainOutput, LivenessError> {
    let train_ids: BTreeSet<u32> = split.train.iter().copied().collect();
    let val_ids: BTreeSet<u32> = split.validation.iter().copied().collect();
    let train_set: Vec<&VelocityWindow> = windows.iter().filter(|w| train_ids.contains(&w.subject)).collect();
    let val_set: Vec<VelocityWindow> = windows
        .iter()
        .filter(|w| val_ids.contains(&w.subject))
        .cloned()
        .collect();
    if !has_both_classes(&train_set) {
        return Err(LivenessError::SingleClassPartition { partition: "train" });
    }
    if !has_both_classes(&val_set.iter().collect::<Vec<_>>()) {
        return Err(LivenessError::SingleClassPartition { partition: "validation" });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = LstmModel::init(cfg.hidden, seed);
    let mut adam = Adam::new(model.param_count());
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut best = (model.clone(), f64::INFINITY, 0usize);
    let mut history = Vec::new();
    let mut stale = 0usize;
    let batch_size = cfg.batch_size.max(1);
    let mut batch: Vec<VelocityWindow> = Vec::with_capacity(batch_size);

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut seen) = (0.0, 0usize);
        for chunk in order.chunks(batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| train_set[i].clone()));
            let (loss, mut grad) = model.loss_and_gradient(&batch)?;
            if !loss.is_finite() {
                return Err(LivenessError::DivergedLoss { epoch });
            }
            let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            if norm > cfg.clip_norm {
                let s = cfg.clip_norm / norm;
                grad.iter_mut().for_each(|g| *g *= s);
            }
            adam.update(model.params_mut(), &grad, cfg.learning_rate);
            loss_sum += loss * batch.len() as f64;
            seen += batch.len();
        }
        let validation_loss = model.loss(&val_set)?;
        if !validation_loss.is_finite() || model.params().iter().any(|p| !p.is_finite()) {
            return Err(LivenessError::DivergedLoss { epoch });
        }
        history.push(EpochStats {
            epoch,
            train_loss: loss_sum / seen as f64,
            validation_loss,
            validation_accuracy: accuracy_at_half(&model, &val_set)?,
        });
        if validation_loss < best.1 {
            best = (model.clone(), validation_loss, epoch);
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }
    log::debug!("training stopped after {} epochs, best {}", history.len(), best.2);
    Ok(TrainOutput {
        model: best.0,
        best_epoch: best.2,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::liveness::WINDOW_LEN;
    use rand::Rng;

    /// Windows whose class is set by their mean level.
    fn toy(subjects: u32, per_subject: usize, seed: u64, shuffle_labels: bool) -> Vec<VelocityWindow> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::new();
        for s in 0..subjects {
            for i in 0..per_subject {
                let label = if i % 2 == 0 { Label::Real } else { Label::Spoof };
                let centre = if label == Label::Real { 0.3 } else { 0.7 };
                let mut samples = [[0.0; 2]; WINDOW_LEN];
                for v in samples.iter_mut().flatten() {
                    *v = (centre + rng.random_range(-0.15..0.15)) as f64;
                }
                let label = if shuffle_labels {
                    if rng.random_bool(0.5) { Label::Real } else { Label::Spoof }
                } else {
                    label
                };
                out.push(VelocityWindow { subject: s, label, index: i, samples });
            }
        }
        out
    }

    fn plan() -> SplitPlan {
        SplitPlan {
            seed: 0,
            train: (0..6).collect(),
            validation: vec![6, 7],
            test: vec![8, 9],
        }
    }

    #[test]
    fn separable_toy_is_learned() {
        let data = toy(10, 40, 1, false);
        let cfg = TrainConfig { max_epochs: 100, ..TrainConfig::default() };
        let out = train(&data, &plan(), &cfg, 3).unwrap();
        let best = out.history.iter().map(|e| e.validation_accuracy).fold(0.0, f64::max);
        assert!(best >= 0.99, "validation accuracy {best}");
        let test: Vec<_> = data.iter().filter(|w| w.subject >= 8).cloned().collect();
        assert!(accuracy_at_half(&out.model, &test).unwrap() >= 0.99);
    }

    #[test]
    fn shuffled_labels_stay_near_chance() {
        let data = toy(10, 40, 2, true);
        let out = train(&data, &plan(), &TrainConfig::default(), 3).unwrap();
        let val: Vec<_> = data.iter().filter(|w| w.subject == 6 || w.subject == 7).cloned().collect();
        let acc = accuracy_at_half(&out.model, &val).unwrap();
        assert!((0.4..=0.6).contains(&acc), "accuracy {acc}");
    }

    #[test]
    fn training_is_bit_reproducible() {
        let data = toy(10, 20, 5, false);
        let cfg = TrainConfig { max_epochs: 15, ..TrainConfig::default() };
        let a = train(&data, &plan(), &cfg, 9).unwrap();
        let b = train(&data, &plan(), &cfg, 9).unwrap();
        let bits = |m: &LstmModel| m.params().iter().map(|p| p.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a.model), bits(&b.model));
        assert_eq!(a.history, b.history);
    }

    #[test]
    fn single_class_partition_rejected() {
        let mut data = toy(10, 10, 5, false);
        for w in data.iter_mut().filter(|w| w.subject == 6 || w.subject == 7) {
            w.label = Label::Real;
        }
        assert!(matches!(
            train(&data, &plan(), &TrainConfig::default(), 1),
            Err(LivenessError::SingleClassPartition { partition: "validation" })
        ));
    }

    #[test]
    fn diverging_learning_rate_is_reported() {
        let data = toy(10, 10, 5, false);
        let cfg = TrainConfig { learning_rate: f64::INFINITY, ..TrainConfig::default() };
        assert!(matches!(train(&data, &plan(), &cfg, 1), Err(LivenessError::DivergedLoss { .. })));
    }
}
