//! Mini-batch training, evaluation and checkpoints.

mod adam;
mod checkpoint;

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use adam::Adam;
pub use checkpoint::{Checkpoint, CHECKPOINT_FORMAT_VERSION, MANIFEST_FILE, PARAMS_FILE};

use crate::data::Sample;
use crate::error::{Error, Result};
use crate::params::{GradientSet, ParameterStore, Precision};
use crate::readout::{predict, LossReadout};
use crate::tape::{LifOptions, Tape};
use crate::topology::{build_with, ArchitectureSpec, InitOptions, Network};

/// Samples per gradient work unit. Partial sums are reduced in a fixed
/// order, so results do not depend on the number of threads.
pub const GRAD_CHUNK: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
    pub precision: Precision,
    pub detach_reset: bool,
    /// Epochs without a new best test accuracy before stopping; `None`
    /// never stops early.
    pub patience: Option<usize>,
    /// Stop as soon as an epoch's test accuracy reaches this value.
    pub target_accuracy: Option<f64>,
    /// Rescale the batch gradient to at most this L2 norm.
    pub clip_norm: Option<f64>,
    pub loss_readout: LossReadout,
    pub init: InitOptions,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 64,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
            precision: Precision::Single,
            detach_reset: false,
            patience: Some(10),
            target_accuracy: None,
            clip_norm: None,
            loss_readout: LossReadout::NormalizedSum,
            init: InitOptions::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: &str| Err(Error::Config(msg.into()));
        if self.epochs == 0 {
            return fail("epochs must be at least 1");
        }
        if self.batch_size == 0 {
            return fail("batch_size must be at least 1");
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return fail("learning_rate must be finite and nonnegative");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return fail("beta1 and beta2 must lie in [0, 1)");
        }
        if !(self.epsilon > 0.0) {
            return fail("epsilon must be positive");
        }
        if self.target_accuracy.is_some_and(|a| !(0.0..=1.0).contains(&a)) {
            return fail("target_accuracy must lie in [0, 1]");
        }
        if self.clip_norm.is_some_and(|c| !(c > 0.0)) {
            return fail("clip_norm must be positive");
        }
        self.init.validate()
    }

    pub fn lif_options(&self) -> LifOptions {
        LifOptions {
            detach_reset: self.detach_reset,
            precision: self.precision,
            ..LifOptions::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub test_acc: f64,
}

pub fn metrics_csv(metrics: &[EpochMetrics]) -> String {
    let mut out = String::from("epoch,train_loss,train_acc,test_acc\n");
    for m in metrics {
        writeln!(out, "{},{},{},{}", m.epoch, m.train_loss, m.train_acc, m.test_acc).unwrap();
    }
    out
}

pub fn write_metrics_csv(path: impl AsRef<Path>, metrics: &[EpochMetrics]) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, metrics_csv(metrics)).map_err(|e| Error::from(e).at_path(path))
}

/// Accuracy plus per-instance outcomes in input order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub accuracy: f64,
    pub correct: Vec<bool>,
    pub predictions: Vec<usize>,
}

fn predict_one(network: &Network, params: &ParameterStore, opts: LifOptions, sample: &Sample) -> Result<usize> {
    let (v, a) = sample.inputs(network.mode())?;
    let mut tape = Tape::new(params);
    let trajectory = network.forward(&mut tape, v, a, opts)?;
    let scores = tape.softmax_sum(trajectory)?;
    Ok(predict(&tape.scores(scores)?))
}

pub fn evaluate_params(
    network: &Network,
    params: &ParameterStore,
    opts: LifOptions,
    data: &[Sample],
) -> Result<Evaluation> {
    if data.is_empty() {
        return Err(Error::EmptyDataset("nothing to evaluate".into()));
    }
    network.check_params(params)?;
    let predictions: Vec<usize> = data
        .par_iter()
        .map(|s| predict_one(network, params, opts, s))
        .collect::<Result<_>>()?;
    let correct: Vec<bool> = predictions.iter().zip(data).map(|(&p, s)| p == s.label).collect();
    let accuracy = correct.iter().filter(|&&c| c).count() as f64 / data.len() as f64;
    Ok(Evaluation {
        accuracy,
        correct,
        predictions,
    })
}

pub fn evaluate(checkpoint: &Checkpoint, data: &[Sample]) -> Result<Evaluation> {
    let network = checkpoint.network()?;
    evaluate_params(&network, &checkpoint.params, checkpoint.config.lif_options(), data)
}

struct BatchResult {
    grads: GradientSet,
    loss: f64,
    correct: usize,
}

fn chunk_gradient(
    network: &Network,
    params: &ParameterStore,
    config: &TrainConfig,
    samples: &[&Sample],
) -> Result<BatchResult> {
    let opts = config.lif_options();
    let mut grads = GradientSet::zeros_like(params);
    let (mut loss, mut correct) = (0.0, 0);
    for s in samples {
        let (v, a) = s.inputs(network.mode())?;
        let mut tape = Tape::new(params);
        let trajectory = network.forward(&mut tape, v, a, opts)?;
        let scores = tape.softmax_sum(trajectory)?;
        tape.cross_entropy(scores, s.label, config.loss_readout)?;
        let l = tape.loss().expect("loss recorded");
        if !l.is_finite() {
            return Err(Error::Divergence {
                location: "loss".into(),
                detail: format!("non-finite loss {l}"),
            });
        }
        loss += l;
        correct += (predict(&tape.scores(scores)?) == s.label) as usize;
        tape.backward_into(1.0, &mut grads)?;
    }
    Ok(BatchResult { grads, loss, correct })
}

/// Summed gradient, loss and hit count over `batch`.
fn batch_gradient(
    network: &Network,
    params: &ParameterStore,
    config: &TrainConfig,
    batch: &[&Sample],
) -> Result<BatchResult> {
    let parts: Vec<BatchResult> = batch
        .par_chunks(GRAD_CHUNK)
        .map(|chunk| chunk_gradient(network, params, config, chunk))
        .collect::<Result<_>>()?;
    let mut parts = parts.into_iter();
    let mut total = parts.next().expect("nonempty batch");
    for p in parts {
        total.grads.add_assign(&p.grads)?;
        total.loss += p.loss;
        total.correct += p.correct;
    }
    Ok(total)
}

fn with_context(err: Error, epoch: usize, batch: usize) -> Error {
    match err {
        Error::Divergence { location, detail } => Error::Divergence {
            location: format!("epoch {epoch}, batch {batch}, {location}"),
            detail,
        },
        other => other,
    }
}

/// Result of a training run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the best test accuracy.
    pub best: Checkpoint,
    /// Parameters after the last completed epoch.
    pub last: ParameterStore,
    pub metrics: Vec<EpochMetrics>,
}

/// Trains a freshly initialised network.
pub fn train(
    spec: &ArchitectureSpec,
    train_data: &[Sample],
    test_data: &[Sample],
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    let (_, mut params) = build_with(spec, config.seed, &config.init)?;
    params.round_to(config.precision);
    train_from(spec, params, train_data, test_data, config)
}

/// Trains starting from `params`.
pub fn train_from(
    spec: &ArchitectureSpec,
    mut params: ParameterStore,
    train_data: &[Sample],
    test_data: &[Sample],
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    let network = Network::from_spec(spec)?;
    network.check_params(&params)?;
    if train_data.is_empty() {
        return Err(Error::EmptyDataset("training set is empty".into()));
    }
    if test_data.is_empty() {
        return Err(Error::EmptyDataset("test set is empty".into()));
    }
    for s in train_data.iter().chain(test_data) {
        s.inputs(network.mode())?;
    }

    let opts = config.lif_options();
    let mut adam = Adam::new(
        config.learning_rate,
        config.beta1,
        config.beta2,
        config.epsilon,
        params.num_params(),
    );
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..train_data.len()).collect();
    let mut metrics = Vec::with_capacity(config.epochs);
    let mut best = (0, f64::NEG_INFINITY, params.clone());
    let mut stale = 0;

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut hits) = (0.0, 0);
        for (b, idx) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<&Sample> = idx.iter().map(|&i| &train_data[i]).collect();
            let mut result =
                batch_gradient(&network, &params, config, &batch).map_err(|e| with_context(e, epoch, b))?;
            result.grads.scale(1.0 / batch.len() as f64);
            if let Some(max) = config.clip_norm {
                let norm = result.grads.l2_norm();
                if norm > max {
                    result.grads.scale(max / norm);
                }
            }
            adam.step(&mut params, &result.grads)?;
            params.round_to(config.precision);
            if let Some(x) = params.values().find(|x| !x.is_finite()) {
                return Err(Error::Divergence {
                    location: format!("epoch {epoch}, batch {b}, parameters"),
                    detail: format!("non-finite parameter {x} after the update"),
                });
            }
            loss_sum += result.loss;
            hits += result.correct;
        }
        let test = evaluate_params(&network, &params, opts, test_data)?;
        let m = EpochMetrics {
            epoch,
            train_loss: loss_sum / train_data.len() as f64,
            train_acc: hits as f64 / train_data.len() as f64,
            test_acc: test.accuracy,
        };
        log::info!(
            "epoch {epoch}: loss {:.4} train {:.4} test {:.4}",
            m.train_loss,
            m.train_acc,
            m.test_acc
        );
        metrics.push(m);
        if m.test_acc > best.1 {
            best = (epoch, m.test_acc, params.clone());
            stale = 0;
            if config.target_accuracy.is_some_and(|a| m.test_acc >= a) {
                log::info!("reached target accuracy {:.4}, stopping", m.test_acc);
                break;
            }
        } else {
            stale += 1;
            if config.patience.is_some_and(|p| stale >= p) {
                log::info!("no improvement for {stale} epochs, stopping");
                break;
            }
        }
    }

    let (epoch, _, best_params) = best;
    Ok(TrainOutcome {
        best: Checkpoint {
            spec: spec.clone(),
            config: config.clone(),
            epoch,
            metrics: metrics.clone(),
            params: best_params,
        },
        last: params,
        metrics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        for bad in [
            TrainConfig {
                batch_size: 0,
                ..Default::default()
            },
            TrainConfig {
                epochs: 0,
                ..Default::default()
            },
            TrainConfig {
                learning_rate: -1.0,
                ..Default::default()
            },
            TrainConfig {
                learning_rate: f64::NAN,
                ..Default::default()
            },
            TrainConfig {
                beta1: 1.0,
                ..Default::default()
            },
            TrainConfig {
                beta2: -0.1,
                ..Default::default()
            },
            TrainConfig {
                epsilon: 0.0,
                ..Default::default()
            },
            TrainConfig {
                clip_norm: Some(0.0),
                ..Default::default()
            },
            TrainConfig {
                target_accuracy: Some(1.5),
                ..Default::default()
            },
        ] {
            assert!(matches!(bad.validate(), Err(Error::Config(_))), "{bad:?}");
        }
    }

    #[test]
    fn config_rejects_unknown_keys() {
        let err = serde_json::from_str::<TrainConfig>(r#"{"epochz": 3}"#).unwrap_err();
        assert!(err.to_string().contains("epochz"));
        let cfg: TrainConfig = serde_json::from_str(r#"{"epochs": 3, "patience": null}"#).unwrap();
        assert_eq!(cfg.epochs, 3);
        assert_eq!(cfg.patience, None);
        assert_eq!(cfg.batch_size, 64);
    }

    #[test]
    fn csv_layout() {
        let csv = metrics_csv(&[EpochMetrics {
            epoch: 1,
            train_loss: 2.5,
            train_acc: 0.25,
            test_acc: 0.5,
        }]);
        assert_eq!(csv, "epoch,train_loss,train_acc,test_acc\n1,2.5,0.25,0.5\n");
    }
}
