//! SGD training loops for both learning rules, plus evaluation and metrics.
//!
//! A step runs the forward pass per sample, obtains per-layer gradients
//! either from the exact adjoint pass or from the equilibrium relaxation,
//! averages them over the batch in sample order, and applies one plain SGD
//! update. Everything is deterministic given the seed.

use std::time::Instant;

use crate::data::{batch_indices, Dataset};
use crate::dynamics::{
    equilibrium_f_adjoint, local_weight_gradients, make_feedback_matrices, FeedbackMatrices,
    RelaxConfig,
};
use crate::error::{Error, Result};
use crate::linalg::{Matrix, Rng, Vector};
use crate::network::{weight_gradients, Network};

/// Which gradient route drives the weight updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LearningRule {
    Nonlocal,
    Local,
}

impl std::str::FromStr for LearningRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nonlocal" => Ok(LearningRule::Nonlocal),
            "local" => Ok(LearningRule::Local),
            _ => Err(Error::Config {
                detail: format!("unknown rule {s:?}"),
            }),
        }
    }
}

impl std::fmt::Display for LearningRule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            LearningRule::Nonlocal => "nonlocal",
            LearningRule::Local => "local",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

/// Full training-run settings.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub rule: LearningRule,
    pub eta: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub relax: RelaxConfig,
    pub shuffle: bool,
    pub feedback_alignment: bool,
    pub fb_scale: f64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0) {
            return Err(Error::Config {
                detail: format!("eta must be positive, got {}", self.eta),
            });
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config {
                detail: "epochs and batch_size must be >= 1".into(),
            });
        }
        if self.fb_scale < 0.0 {
            return Err(Error::Config {
                detail: format!("fb_scale must be non-negative, got {}", self.fb_scale),
            });
        }
        Ok(())
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            rule: LearningRule::Nonlocal,
            eta: 0.001,
            epochs: 10,
            batch_size: 128,
            seed: 1,
            relax: RelaxConfig::default(),
            shuffle: true,
            feedback_alignment: false,
            fb_scale: 0.05,
        }
    }
}

/// One evaluation row. `step` is the cumulative SGD step count at the time
/// of evaluation; `wall_ms` is the measured epoch wall time (reported on
/// the console; zeroed in the CSV so files stay byte-reproducible).
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRecord {
    pub epoch: usize,
    pub split: Split,
    pub loss: f64,
    pub accuracy: f64,
    pub wall_ms: u64,
    pub step: u64,
}

/// Per-epoch observer payload: the two fresh records plus relaxation
/// counters accumulated over the epoch's local steps.
#[derive(Debug, Clone)]
pub struct EpochReport {
    pub train: MetricsRecord,
    pub test: MetricsRecord,
    pub relax_iters: u64,
    pub relax_nonconverged: u64,
}

/// Relaxation bookkeeping from one local step.
#[derive(Debug, Clone, Copy)]
pub struct LocalStepStats {
    pub mean_loss: f64,
    pub relax_iters: u64,
    pub nonconverged_layers: u64,
}

fn check_sample_shapes(net: &Network, batch: &[(&Vector, &Vector)]) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::Config {
            detail: "empty batch".into(),
        });
    }
    for (input, target) in batch {
        if input.len() != net.arch().input_size() || target.len() != net.arch().output_size() {
            return Err(Error::Shape {
                op: "sgd_step",
                detail: format!(
                    "sample {}->{} vs network {}->{}",
                    input.len(),
                    target.len(),
                    net.arch().input_size(),
                    net.arch().output_size()
                ),
            });
        }
    }
    Ok(())
}

fn apply_mean_update(net: &mut Network, grad_sum: &[Matrix], eta: f64, n: usize) -> Result<()> {
    let alpha = -eta / n as f64;
    for (w, g) in net.weights_mut().iter_mut().zip(grad_sum) {
        w.axpy(alpha, g)?;
    }
    Ok(())
}

/// One SGD step with exact adjoint gradients, averaged over the batch.
/// Returns the mean loss measured before the update.
pub fn sgd_step_nonlocal(
    net: &mut Network,
    batch: &[(&Vector, &Vector)],
    eta: f64,
) -> Result<f64> {
    check_sample_shapes(net, batch)?;
    let mut grad_sum: Vec<Matrix> = net
        .weights()
        .iter()
        .map(|w| Matrix::zeros(w.rows(), w.cols()))
        .collect();
    let mut loss_sum = 0.0;
    for (k, (input, target)) in batch.iter().enumerate() {
        let st = net.f_propagate(input)?;
        let (j, seed) = net.loss_and_output_adjoint(st.prediction(), target)?;
        if !j.is_finite() {
            return Err(Error::NonFiniteLoss {
                sample: k,
                epoch: 0,
                batch: 0,
            });
        }
        let adj = net.f_adjoint(&st, &seed)?;
        for (sum, g) in grad_sum.iter_mut().zip(weight_gradients(&st, &adj)) {
            sum.axpy(1.0, &g)?;
        }
        loss_sum += j;
    }
    apply_mean_update(net, &grad_sum, eta, batch.len())?;
    Ok(loss_sum / batch.len() as f64)
}

/// One SGD step with equilibrium-relaxation gradients, averaged over the
/// batch. Per-layer non-convergence is counted, never fatal.
pub fn sgd_step_local(
    net: &mut Network,
    batch: &[(&Vector, &Vector)],
    eta: f64,
    relax: &RelaxConfig,
    feedback: Option<&FeedbackMatrices>,
) -> Result<LocalStepStats> {
    check_sample_shapes(net, batch)?;
    let mut grad_sum: Vec<Matrix> = net
        .weights()
        .iter()
        .map(|w| Matrix::zeros(w.rows(), w.cols()))
        .collect();
    let mut loss_sum = 0.0;
    let mut relax_iters = 0u64;
    let mut nonconverged = 0u64;
    for (k, (input, target)) in batch.iter().enumerate() {
        let st = net.f_propagate(input)?;
        let (j, seed) = net.loss_and_output_adjoint(st.prediction(), target)?;
        if !j.is_finite() {
            return Err(Error::NonFiniteLoss {
                sample: k,
                epoch: 0,
                batch: 0,
            });
        }
        let eq = equilibrium_f_adjoint(net, &st, &seed, relax, feedback)?;
        relax_iters += eq.total_iters();
        nonconverged += eq.nonconverged_layers();
        for (sum, g) in grad_sum.iter_mut().zip(local_weight_gradients(&st, &eq)) {
            sum.axpy(1.0, &g)?;
        }
        loss_sum += j;
    }
    apply_mean_update(net, &grad_sum, eta, batch.len())?;
    Ok(LocalStepStats {
        mean_loss: loss_sum / batch.len() as f64,
        relax_iters,
        nonconverged_layers: nonconverged,
    })
}

/// Mean per-sample loss and argmax accuracy (ties resolve to the lowest
/// index). Weights are untouched.
pub fn evaluate(net: &Network, data: &Dataset) -> Result<(f64, f64)> {
    if data.is_empty() {
        return Err(Error::Config {
            detail: "cannot evaluate an empty dataset".into(),
        });
    }
    let mut loss_sum = 0.0;
    let mut correct = 0usize;
    for i in 0..data.len() {
        let st = net.f_propagate(data.input(i))?;
        let (j, _) = net.loss_and_output_adjoint(st.prediction(), data.target(i))?;
        loss_sum += j;
        if argmax(st.prediction()) == data.label(i) as usize {
            correct += 1;
        }
    }
    let n = data.len() as f64;
    Ok((loss_sum / n, correct as f64 / n))
}

/// Index of the largest entry; the first one wins on ties.
pub fn argmax(v: &Vector) -> usize {
    let mut best = 0;
    let mut best_val = f64::NEG_INFINITY;
    for (i, &x) in v.iter().enumerate() {
        if x > best_val {
            best = i;
            best_val = x;
        }
    }
    best
}

/// Runs the configured rule for `cfg.epochs` epochs and evaluates both
/// splits after each one. Fully deterministic given the seed: the shuffle
/// stream, the feedback matrices (when enabled), and every update depend
/// only on `cfg` and the data.
pub fn train(
    net: &mut Network,
    train_set: &Dataset,
    test_set: &Dataset,
    cfg: &TrainConfig,
) -> Result<Vec<MetricsRecord>> {
    train_with_observer(net, train_set, test_set, cfg, |_| {})
}

pub fn train_with_observer(
    net: &mut Network,
    train_set: &Dataset,
    test_set: &Dataset,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochReport),
) -> Result<Vec<MetricsRecord>> {
    cfg.validate()?;
    if train_set.is_empty() || test_set.is_empty() {
        return Err(Error::Config {
            detail: "datasets must be nonempty".into(),
        });
    }
    let mut rng = Rng::seed_from(cfg.seed);
    let feedback = if cfg.feedback_alignment {
        Some(make_feedback_matrices(net, &mut rng, cfg.fb_scale))
    } else {
        None
    };

    let mut records = Vec::with_capacity(2 * cfg.epochs);
    let mut step = 0u64;
    for epoch in 1..=cfg.epochs {
        let started = Instant::now();
        let mut relax_iters = 0u64;
        let mut relax_nonconverged = 0u64;
        let batches = if cfg.shuffle {
            batch_indices(train_set.len(), cfg.batch_size, Some(&mut rng))
        } else {
            batch_indices(train_set.len(), cfg.batch_size, None)
        };
        for (batch_no, ids) in batches.iter().enumerate() {
            let batch: Vec<(&Vector, &Vector)> = ids
                .iter()
                .map(|&i| (train_set.input(i), train_set.target(i)))
                .collect();
            let step_result = match cfg.rule {
                LearningRule::Nonlocal => sgd_step_nonlocal(net, &batch, cfg.eta).map(|_| ()),
                LearningRule::Local => {
                    sgd_step_local(net, &batch, cfg.eta, &cfg.relax, feedback.as_ref()).map(|s| {
                        relax_iters += s.relax_iters;
                        relax_nonconverged += s.nonconverged_layers;
                    })
                }
            };
            step_result.map_err(|e| match e {
                Error::NonFiniteLoss { sample, .. } => Error::NonFiniteLoss {
                    sample,
                    epoch,
                    batch: batch_no,
                },
                other => other,
            })?;
            step += 1;
        }
        let (train_loss, train_acc) = evaluate(net, train_set)?;
        let (test_loss, test_acc) = evaluate(net, test_set)?;
        let wall_ms = started.elapsed().as_millis() as u64;
        let train_rec = MetricsRecord {
            epoch,
            split: Split::Train,
            loss: train_loss,
            accuracy: train_acc,
            wall_ms,
            step,
        };
        let test_rec = MetricsRecord {
            epoch,
            split: Split::Test,
            loss: test_loss,
            accuracy: test_acc,
            wall_ms,
            step,
        };
        on_epoch(&EpochReport {
            train: train_rec.clone(),
            test: test_rec.clone(),
            relax_iters,
            relax_nonconverged,
        });
        records.push(train_rec);
        records.push(test_rec);
    }
    Ok(records)
}

/// Renders records as the metrics CSV. The optional comment line records
/// the fully-resolved run configuration. The wall_ms column is written as 0:
/// identical configurations must produce byte-identical files, and wall
/// time is the one field that cannot honor that.
pub fn metrics_csv(records: &[MetricsRecord], comment: Option<&str>) -> String {
    let mut out = String::new();
    if let Some(c) = comment {
        out.push_str("# ");
        out.push_str(c);
        out.push('\n');
    }
    out.push_str("epoch,split,loss,accuracy,wall_ms,step\n");
    for r in records {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.epoch, r.split, r.loss, r.accuracy, 0, r.step
        ));
    }
    out
}
