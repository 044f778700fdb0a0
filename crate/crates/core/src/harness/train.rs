//! Minibatch training of `A` coupled arms.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::Serialize;

use super::config::TrainConfig;
use super::metrics::{consensus_from_predictions, consensus_rate, evaluate_accuracy};
use crate::coupling::coupled_loss_vars;
use crate::data::{augment_batch, AugmenterKind, Dataset};
use crate::diffcore::{adam_step, OptimizerState, Tape, Tensor};
use crate::error::{domain, Error, Result};
use crate::mixvae::{arm_loss_vars, build_arm, checkpoint_bytes, ArmModel, ArmNoise, LossTerms};
use crate::simplex::argmax;

/// One logged optimizer step.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsRow {
    pub step: usize,
    pub epoch: usize,
    pub per_arm: Vec<LossTerms>,
    /// Sum over arm pairs of the batch-mean `d²`.
    pub distance: f64,
    pub total: f64,
    /// Share of the batch on which all arms' argmax categories agree; absent
    /// for a single arm.
    pub consensus_rate: Option<f64>,
}

/// Header of the metrics CSV for `n_arms` arms.
pub fn metrics_header(n_arms: usize) -> String {
    let mut cols = vec!["step".to_string(), "epoch".to_string()];
    for name in ["recon", "kl_state", "entropy"] {
        cols.extend((1..=n_arms).map(|a| format!("{name}_{a}")));
    }
    cols.extend(["distance", "total", "consensus_rate"].map(String::from));
    cols.join(",")
}

impl MetricsRow {
    pub fn to_csv_line(&self) -> String {
        let mut f = vec![self.step.to_string(), self.epoch.to_string()];
        f.extend(self.per_arm.iter().map(|t| format!("{:?}", t.recon)));
        f.extend(self.per_arm.iter().map(|t| format!("{:?}", t.kl_state)));
        f.extend(self.per_arm.iter().map(|t| format!("{:?}", t.cat_entropy)));
        f.push(format!("{:?}", self.distance));
        f.push(format!("{:?}", self.total));
        f.push(self.consensus_rate.map_or(String::new(), |c| format!("{c:?}")));
        f.join(",")
    }
}

/// Batch-averaged loss terms over one epoch.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochSummary {
    pub epoch: usize,
    pub per_arm: Vec<LossTerms>,
    pub distance: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainReport {
    pub seed: u64,
    pub n_arms: usize,
    pub steps: usize,
    pub epochs: Vec<EpochSummary>,
    /// Per-arm accuracy on the training data when it is labeled.
    pub arm_accuracy: Option<Vec<f64>>,
    pub mean_accuracy: Option<f64>,
    /// All-arm agreement on the training data; absent for a single arm.
    pub consensus_rate: Option<f64>,
    pub wall_time_secs: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub models: Vec<ArmModel>,
    pub report: TrainReport,
    pub metrics: Vec<MetricsRow>,
}

impl TrainOutput {
    pub fn metrics_csv(&self) -> String {
        let mut s = metrics_header(self.models.len());
        s.push('\n');
        for r in &self.metrics {
            s.push_str(&r.to_csv_line());
            s.push('\n');
        }
        s
    }

    pub fn checkpoint(&self) -> Vec<u8> {
        checkpoint_bytes(&self.models)
    }
}

struct StepValues {
    per_arm: Vec<LossTerms>,
    distance: f64,
    total: f64,
    consensus: Option<f64>,
}

fn describe(v: &StepValues) -> String {
    let mut s = format!("total={} distance={}", v.total, v.distance);
    for (a, t) in v.per_arm.iter().enumerate() {
        s.push_str(&format!(
            " arm{}(recon={} kl_state={} entropy={})",
            a + 1,
            t.recon,
            t.kl_state,
            t.cat_entropy
        ));
    }
    s
}

/// One forward/backward pass over all arms with fresh augmentations and
/// noise; returns the step's values and per-arm gradients.
fn forward_backward<R: Rng + ?Sized>(
    models: &[ArmModel],
    x: &Tensor,
    labels: Option<&[usize]>,
    cfg: &TrainConfig,
    augmenter: &AugmenterKind,
    rng: &mut R,
) -> Result<(StepValues, Vec<Vec<Tensor>>)> {
    let mut tape = Tape::new();
    let mut graphs = Vec::with_capacity(models.len());
    let mut losses = Vec::with_capacity(models.len());
    let mut params = Vec::with_capacity(models.len());
    for m in models {
        let xa = augment_batch(x, labels, augmenter, rng)?;
        let noise = ArmNoise::draw(m.dims(), x.rows(), cfg.dropout, rng);
        let p = m.register(&mut tape, true);
        let xv = tape.constant(xa);
        let g = build_arm(&mut tape, m, &p, xv, cfg.coupling.tau, &noise)?;
        losses.push(arm_loss_vars(&mut tape, &g, xv, cfg.likelihood)?);
        graphs.push(g);
        params.push(p);
    }
    let coupled = coupled_loss_vars(&mut tape, &graphs, &losses, &cfg.coupling)?;
    let consensus = if models.len() >= 2 {
        let preds: Vec<Vec<usize>> = graphs
            .iter()
            .map(|g| {
                let q = tape.value(g.q_c);
                (0..q.rows()).map(|r| argmax(q.row_slice(r))).collect()
            })
            .collect();
        Some(consensus_from_predictions(&preds)?)
    } else {
        None
    };
    let values = StepValues {
        per_arm: losses.iter().map(|l| l.values(&tape)).collect(),
        distance: coupled.pair_distance.iter().map(|d| tape.scalar(*d)).sum(),
        total: tape.scalar(coupled.total),
        consensus,
    };
    if !values.total.is_finite() {
        return Ok((values, Vec::new()));
    }
    let grads = tape.backward(coupled.total)?;
    let per_arm = params
        .iter()
        .map(|p| p.vars.iter().map(|v| grads.get_or_zeros(&tape, *v)).collect())
        .collect();
    Ok((values, per_arm))
}

/// Trains `cfg.coupling.n_arms` arms on `dataset`. Each step draws one
/// augmented copy of the batch per arm, minimizes the coupled loss and
/// applies one Adam update per arm. All randomness comes from `rng`, so a
/// fixed seed gives bitwise-identical models and metrics.
pub fn train<R: Rng + ?Sized>(
    cfg: &TrainConfig,
    dataset: &Dataset,
    augmenter: &AugmenterKind,
    rng: &mut R,
) -> Result<TrainOutput> {
    cfg.validate()?;
    augmenter.validate()?;
    if dataset.dim() != cfg.model.input_dim {
        return domain(format!(
            "dataset has {} features, model expects {}",
            dataset.dim(),
            cfg.model.input_dim
        ));
    }
    if dataset.len() < 2 {
        return domain("training needs at least 2 samples");
    }
    let start = Instant::now();
    let n_arms = cfg.coupling.n_arms;
    let mut models = (0..n_arms)
        .map(|_| ArmModel::init(cfg.model.clone(), rng))
        .collect::<Result<Vec<_>>>()?;
    let mut optims: Vec<OptimizerState> = models
        .iter()
        .map(|m| OptimizerState::new(&m.param_tensors(), cfg.learning_rate))
        .collect();

    let n = dataset.len();
    let batch = cfg.batch_size.min(n);
    let mut order: Vec<usize> = (0..n).collect();
    let mut metrics = Vec::new();
    let mut epochs = Vec::with_capacity(cfg.epochs);
    let mut step = 0usize;
    for epoch in 1..=cfg.epochs {
        order.shuffle(rng);
        let mut sum_terms = vec![LossTerms { recon: 0.0, kl_state: 0.0, cat_entropy: 0.0 }; n_arms];
        let (mut sum_dist, mut sum_total, mut n_batches) = (0.0, 0.0, 0usize);
        for (batch_index, idx) in order.chunks(batch).enumerate() {
            if idx.len() < 2 {
                continue;
            }
            let x = dataset.x().select_rows(idx);
            let labels: Option<Vec<usize>> = dataset.labels().map(|l| idx.iter().map(|i| l[*i]).collect());
            let (values, grads) = forward_backward(&models, &x, labels.as_deref(), cfg, augmenter, rng)?;
            step += 1;
            let grads_finite = grads.iter().all(|g| g.iter().all(Tensor::all_finite));
            if !values.total.is_finite() || !grads_finite {
                let mut terms = describe(&values);
                if values.total.is_finite() {
                    terms.push_str(" (non-finite gradient)");
                }
                return Err(Error::NonFinite {
                    epoch,
                    step,
                    batch_index,
                    terms,
                });
            }
            for ((m, opt), g) in models.iter_mut().zip(&mut optims).zip(&grads) {
                let mut p = m.param_tensors();
                adam_step(&mut p, g, opt)?;
                m.set_params(p)?;
            }
            for (s, t) in sum_terms.iter_mut().zip(&values.per_arm) {
                s.recon += t.recon;
                s.kl_state += t.kl_state;
                s.cat_entropy += t.cat_entropy;
            }
            sum_dist += values.distance;
            sum_total += values.total;
            n_batches += 1;
            if step.is_multiple_of(cfg.log_every) {
                metrics.push(MetricsRow {
                    step,
                    epoch,
                    per_arm: values.per_arm,
                    distance: values.distance,
                    total: values.total,
                    consensus_rate: values.consensus,
                });
            }
        }
        let nb = n_batches.max(1) as f64;
        let summary = EpochSummary {
            epoch,
            per_arm: sum_terms
                .iter()
                .map(|t| LossTerms {
                    recon: t.recon / nb,
                    kl_state: t.kl_state / nb,
                    cat_entropy: t.cat_entropy / nb,
                })
                .collect(),
            distance: sum_dist / nb,
            total: sum_total / nb,
        };
        log::debug!("epoch {epoch}: total {:.6}", summary.total);
        epochs.push(summary);
    }

    let arm_accuracy = if dataset.labels().is_some() {
        Some(
            models
                .iter()
                .map(|m| evaluate_accuracy(m, dataset).map(|r| r.accuracy))
                .collect::<Result<Vec<_>>>()?,
        )
    } else {
        None
    };
    let mean_accuracy = arm_accuracy
        .as_ref()
        .map(|a| a.iter().sum::<f64>() / a.len() as f64);
    let consensus = if n_arms >= 2 {
        Some(consensus_rate(&models, dataset.x())?)
    } else {
        None
    };
    Ok(TrainOutput {
        report: TrainReport {
            seed: cfg.seed,
            n_arms,
            steps: step,
            epochs,
            arm_accuracy,
            mean_accuracy,
            consensus_rate: consensus,
            wall_time_secs: start.elapsed().as_secs_f64(),
        },
        models,
        metrics,
    })
}
