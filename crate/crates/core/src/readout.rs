//! Cumulative-softmax readout, prediction and cross-entropy loss.
//!
//! Readout neurons never spike. At each time bin their membrane values are
//! passed through a softmax across neurons and the per-bin distributions are
//! summed over time, giving scores `P_i` with `sum_i P_i = T`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frames::Sequence;

/// Cumulative softmax sums over a readout trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassScores {
    pub p: Vec<f64>,
    pub steps: usize,
}

impl ClassScores {
    pub fn num_classes(&self) -> usize {
        self.p.len()
    }

    /// Scores divided by the sequence length; a probability vector.
    pub fn normalized(&self) -> Vec<f64> {
        self.p.iter().map(|&p| p / self.steps as f64).collect()
    }
}

/// How the summed readout is turned into a distribution for the loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossReadout {
    /// Cross-entropy against `P / T`.
    #[default]
    NormalizedSum,
    /// Cross-entropy against `softmax(P)`.
    Resoftmaxed,
}

/// Numerically stable softmax of `v` into `out`.
pub fn softmax_into(v: &[f64], out: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &x) in out.iter_mut().zip(v) {
        *o = (x - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

pub fn softmax(v: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; v.len()];
    softmax_into(v, &mut out);
    out
}

pub fn accumulate_scores(trajectory: &Sequence) -> Result<ClassScores> {
    if trajectory.steps() == 0 {
        return Err(Error::Usage("readout trajectory has no time bins".into()));
    }
    if !trajectory.is_finite() {
        return Err(Error::Divergence {
            location: "readout".into(),
            detail: "non-finite membrane value".into(),
        });
    }
    let n = trajectory.width();
    let mut p = vec![0.0; n];
    let mut probs = vec![0.0; n];
    for t in 0..trajectory.steps() {
        softmax_into(trajectory.row(t), &mut probs);
        for (acc, &q) in p.iter_mut().zip(&probs) {
            *acc += q;
        }
    }
    Ok(ClassScores {
        p,
        steps: trajectory.steps(),
    })
}

/// Argmax; ties go to the lowest index.
pub fn predict(scores: &ClassScores) -> usize {
    let mut best = 0;
    for (i, &p) in scores.p.iter().enumerate() {
        if p > scores.p[best] {
            best = i;
        }
    }
    best
}

fn check_label(scores: &ClassScores, label: usize) -> Result<()> {
    if label >= scores.num_classes() {
        return Err(Error::Usage(format!(
            "label {label} out of range for {} classes",
            scores.num_classes()
        )));
    }
    Ok(())
}

/// `-ln(P_label / T)`.
pub fn cross_entropy(scores: &ClassScores, label: usize) -> Result<f64> {
    cross_entropy_with(scores, label, LossReadout::NormalizedSum)
}

pub fn cross_entropy_with(scores: &ClassScores, label: usize, readout: LossReadout) -> Result<f64> {
    check_label(scores, label)?;
    Ok(match readout {
        LossReadout::NormalizedSum => -(scores.p[label] / scores.steps as f64).ln(),
        LossReadout::Resoftmaxed => {
            let max = scores.p.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = scores.p.iter().map(|&p| (p - max).exp()).sum::<f64>().ln() + max;
            lse - scores.p[label]
        }
    })
}

/// Gradient of the loss with respect to each `P_i`.
pub fn cross_entropy_grad(scores: &ClassScores, label: usize, readout: LossReadout) -> Result<Vec<f64>> {
    check_label(scores, label)?;
    Ok(match readout {
        LossReadout::NormalizedSum => {
            let mut g = vec![0.0; scores.num_classes()];
            g[label] = -1.0 / scores.p[label];
            g
        }
        LossReadout::Resoftmaxed => {
            let mut g = softmax(&scores.p);
            g[label] -= 1.0;
            g
        }
    })
}
