//! Reverse-mode differentiation through time over a closed set of
//! primitives.
//!
//! A [`Tape`] records one forward pass (one sample) as a list of nodes, each
//! producing one `[T x width]` buffer. Nodes only reference earlier nodes, so
//! the recording order is already topological and [`Tape::backward`] walks it
//! in reverse. Spiking layers keep their membrane trajectory; during the
//! backward pass the spike derivative is replaced by the boxcar surrogate
//! evaluated at those stored values, and gradients flow through both the
//! leak path `alpha * v[t-1]` and the reset path `-v_th * s[t-1]`.

use std::fmt;

use crate::error::{check_len, Error, Result};
use crate::frames::{Sequence, SpikeFrameSequence};
use crate::lif::{boxcar_scalar, squash_alpha_grad, squash_alpha_scalar, SpikeFn, V_TH};
use crate::params::{GradientSet, ParameterStore, Precision};
use crate::readout::{cross_entropy_grad, cross_entropy_with, ClassScores, LossReadout};

/// Handle to a buffer recorded on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BufId(usize);

/// Forward-pass switches for spiking layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct LifOptions {
    pub spike: SpikeFn,
    /// Stop gradients through the `-v_th * s[t-1]` reset term.
    pub detach_reset: bool,
    pub precision: Precision,
}

impl LifOptions {
    /// Double-precision relaxed dynamics, used for gradient checking.
    pub fn relaxed() -> Self {
        Self {
            spike: SpikeFn::Relaxed,
            detach_reset: false,
            precision: Precision::Double,
        }
    }
}

enum Op {
    Input,
    Affine {
        input: BufId,
        layer: usize,
    },
    Lif {
        current: BufId,
        layer: usize,
        alpha: Vec<f64>,
        membrane: Sequence,
        detach_reset: bool,
    },
    Readout {
        current: BufId,
        layer: usize,
        alpha: Vec<f64>,
    },
    Concat {
        parts: Vec<BufId>,
    },
    SoftmaxSum {
        logits: BufId,
        probs: Sequence,
    },
    CrossEntropy {
        scores: BufId,
        label: usize,
        readout: LossReadout,
        steps: usize,
    },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Input => "input",
            Op::Affine { .. } => "affine",
            Op::Lif { .. } => "lif",
            Op::Readout { .. } => "readout",
            Op::Concat { .. } => "concat",
            Op::SoftmaxSum { .. } => "softmax-sum",
            Op::CrossEntropy { .. } => "cross-entropy",
        }
    }
}

struct Node {
    op: Op,
    value: Sequence,
    /// Whether any trainable parameter lies upstream of this node.
    needs_grad: bool,
}

/// Recording of one forward pass against a fixed parameter snapshot.
pub struct Tape<'p> {
    params: &'p ParameterStore,
    nodes: Vec<Node>,
    loss: Option<BufId>,
}

impl fmt::Debug for Tape<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tape")
            .field("nodes", &self.nodes.iter().map(|n| n.op.name()).collect::<Vec<_>>())
            .field("loss", &self.loss)
            .finish()
    }
}

#[inline]
fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut sum = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for (x, y) in ra.iter().zip(rb) {
        sum += x * y;
    }
    sum
}

fn accumulate(grads: &mut [Option<Sequence>], id: BufId, g: Sequence) {
    match &mut grads[id.0] {
        Some(existing) => {
            for (a, b) in existing.data_mut().iter_mut().zip(g.data()) {
                *a += b;
            }
        }
        slot @ None => *slot = Some(g),
    }
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParameterStore) -> Self {
        Self {
            params,
            nodes: Vec::new(),
            loss: None,
        }
    }

    pub fn params(&self) -> &'p ParameterStore {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: BufId) -> &Sequence {
        &self.nodes[id.0].value
    }

    /// Loss value, if a loss node has been recorded.
    pub fn loss(&self) -> Option<f64> {
        self.loss.map(|id| self.value(id).get(0, 0))
    }

    /// Membrane trajectory of a spiking node, if `id` is one.
    pub fn membrane(&self, id: BufId) -> Option<&Sequence> {
        match &self.nodes[id.0].op {
            Op::Lif { membrane, .. } => Some(membrane),
            _ => None,
        }
    }

    /// Membrane trajectories of every spiking node, in recording order.
    pub fn membranes(&self) -> impl Iterator<Item = &Sequence> + '_ {
        self.nodes.iter().filter_map(|n| match &n.op {
            Op::Lif { membrane, .. } => Some(membrane),
            _ => None,
        })
    }

    fn push(&mut self, op: Op, value: Sequence, needs_grad: bool) -> BufId {
        self.nodes.push(Node { op, value, needs_grad });
        BufId(self.nodes.len() - 1)
    }

    fn needs_grad(&self, id: BufId) -> bool {
        self.nodes[id.0].needs_grad
    }

    pub fn input(&mut self, seq: Sequence) -> BufId {
        self.push(Op::Input, seq, false)
    }

    pub fn input_frames(&mut self, frames: &SpikeFrameSequence) -> BufId {
        self.input(frames.to_dense())
    }

    /// `out[t] = bias + x[t] W` with `W` stored `[fan_in x fan_out]`.
    pub fn affine(&mut self, layer: usize, input: BufId) -> Result<BufId> {
        let l = self.params.layer(layer);
        let x = self.value(input);
        check_len("affine input width", l.fan_in, x.width())?;
        let (fan_out, steps) = (l.fan_out, x.steps());
        let w = &l.tensors.weights;
        let mut out = Sequence::zeros(steps, fan_out);
        for t in 0..steps {
            let row = out.row_mut(t);
            row.copy_from_slice(&l.tensors.bias);
            for (j, &xj) in x.row(t).iter().enumerate() {
                if xj != 0.0 {
                    axpy(xj, &w[j * fan_out..(j + 1) * fan_out], row);
                }
            }
        }
        Ok(self.push(Op::Affine { input, layer }, out, true))
    }

    /// Unrolls the spiking recurrence over all bins from a zero state and
    /// returns the spike train.
    pub fn lif(&mut self, layer: usize, current: BufId, opts: LifOptions) -> Result<BufId> {
        let l = self.params.layer(layer);
        let input = self.value(current);
        let n = l.fan_out;
        check_len("lif current width", n, input.width())?;
        let alpha: Vec<f64> = l.tensors.alpha_raw.iter().map(|&r| squash_alpha_scalar(r)).collect();
        let steps = input.steps();
        let mut membrane = Sequence::zeros(steps, n);
        let mut spikes = Sequence::zeros(steps, n);
        let mut v_prev = vec![0.0; n];
        let mut s_prev = vec![0.0; n];
        for t in 0..steps {
            let i_t = input.row(t);
            let v_row = membrane.row_mut(t);
            for k in 0..n {
                let v = alpha[k] * v_prev[k] + (1.0 - alpha[k]) * i_t[k] - V_TH * s_prev[k];
                v_row[k] = opts.precision.round(v);
            }
            let s_row = spikes.row_mut(t);
            for k in 0..n {
                s_row[k] = opts.spike.apply(v_row[k]);
            }
            v_prev.copy_from_slice(v_row);
            s_prev.copy_from_slice(s_row);
        }
        let op = Op::Lif {
            current,
            layer,
            alpha,
            membrane,
            detach_reset: opts.detach_reset,
        };
        Ok(self.push(op, spikes, true))
    }

    /// Affine projection followed by a spiking layer.
    pub fn lif_layer(&mut self, layer: usize, input: BufId, opts: LifOptions) -> Result<BufId> {
        let current = self.affine(layer, input)?;
        self.lif(layer, current, opts)
    }

    /// Non-spiking leaky integrator; returns the membrane trajectory.
    pub fn readout(&mut self, layer: usize, current: BufId, precision: Precision) -> Result<BufId> {
        let l = self.params.layer(layer);
        let input = self.value(current);
        let n = l.fan_out;
        check_len("readout current width", n, input.width())?;
        let alpha: Vec<f64> = l.tensors.alpha_raw.iter().map(|&r| squash_alpha_scalar(r)).collect();
        let steps = input.steps();
        let mut out = Sequence::zeros(steps, n);
        let mut v_prev = vec![0.0; n];
        for t in 0..steps {
            let i_t = input.row(t);
            let row = out.row_mut(t);
            for k in 0..n {
                row[k] = precision.round(alpha[k] * v_prev[k] + (1.0 - alpha[k]) * i_t[k]);
            }
            v_prev.copy_from_slice(row);
        }
        Ok(self.push(Op::Readout { current, layer, alpha }, out, true))
    }

    /// Channel-axis concatenation, per time bin.
    pub fn concat(&mut self, parts: &[BufId]) -> Result<BufId> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Usage("concat of zero buffers".into()))?;
        let steps = self.value(*first).steps();
        let mut width = 0;
        for &p in parts {
            check_len("concat time bins", steps, self.value(p).steps())?;
            width += self.value(p).width();
        }
        let mut out = Sequence::zeros(steps, width);
        for t in 0..steps {
            let row = out.row_mut(t);
            let mut offset = 0;
            for &p in parts {
                let src = self.nodes[p.0].value.row(t);
                row[offset..offset + src.len()].copy_from_slice(src);
                offset += src.len();
            }
        }
        let needs_grad = parts.iter().any(|&p| self.needs_grad(p));
        Ok(self.push(Op::Concat { parts: parts.to_vec() }, out, needs_grad))
    }

    /// Per-bin softmax across neurons, summed over time: a `[1 x N]` buffer.
    pub fn softmax_sum(&mut self, logits: BufId) -> Result<BufId> {
        let v = self.value(logits);
        if !v.is_finite() {
            return Err(Error::Divergence {
                location: format!("node {} (readout)", logits.0),
                detail: "non-finite membrane value".into(),
            });
        }
        let n = v.width();
        let mut probs = Sequence::zeros(v.steps(), n);
        let mut sum = Sequence::zeros(1, n);
        for t in 0..v.steps() {
            crate::readout::softmax_into(v.row(t), probs.row_mut(t));
            axpy(1.0, probs.row(t), sum.row_mut(0));
        }
        let needs_grad = self.needs_grad(logits);
        Ok(self.push(Op::SoftmaxSum { logits, probs }, sum, needs_grad))
    }

    /// Scores as recorded by a softmax-sum node.
    pub fn scores(&self, id: BufId) -> Result<ClassScores> {
        match &self.nodes[id.0].op {
            Op::SoftmaxSum { probs, .. } => Ok(ClassScores {
                p: self.value(id).row(0).to_vec(),
                steps: probs.steps(),
            }),
            other => Err(Error::Usage(format!(
                "node {} is {}, not softmax-sum",
                id.0,
                other.name()
            ))),
        }
    }

    /// Records the scalar loss; the tape becomes ready for [`Tape::backward`].
    pub fn cross_entropy(&mut self, scores: BufId, label: usize, readout: LossReadout) -> Result<BufId> {
        let class_scores = self.scores(scores)?;
        let loss = cross_entropy_with(&class_scores, label, readout)?;
        if !loss.is_finite() {
            return Err(Error::Divergence {
                location: format!("node {} (cross-entropy)", self.nodes.len()),
                detail: format!("loss {loss}"),
            });
        }
        let value = Sequence::from_vec(1, 1, vec![loss])?;
        let needs_grad = self.needs_grad(scores);
        let id = self.push(
            Op::CrossEntropy {
                scores,
                label,
                readout,
                steps: class_scores.steps,
            },
            value,
            needs_grad,
        );
        self.loss = Some(id);
        Ok(id)
    }

    /// Reverse pass from the loss node. `seed` is `d(objective)/d(loss)`.
    pub fn backward(&self, seed: f64) -> Result<GradientSet> {
        let mut out = GradientSet::zeros_like(self.params);
        self.backward_into(seed, &mut out)?;
        Ok(out)
    }

    /// Like [`Tape::backward`] but adds into an existing gradient set.
    pub fn backward_into(&self, seed: f64, out: &mut GradientSet) -> Result<()> {
        let loss = self
            .loss
            .ok_or_else(|| Error::Usage("backward called before a loss was recorded".into()))?;
        self.params.check_congruent(out)?;
        let mut grads: Vec<Option<Sequence>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Sequence::from_vec(1, 1, vec![seed])?);

        for index in (0..=loss.0).rev() {
            let Some(g) = grads[index].take() else {
                continue;
            };
            let node = &self.nodes[index];
            if !node.needs_grad {
                continue;
            }
            match &node.op {
                Op::Input => {}
                Op::CrossEntropy {
                    scores,
                    label,
                    readout,
                    steps,
                } => {
                    let class_scores = ClassScores {
                        p: self.value(*scores).row(0).to_vec(),
                        steps: *steps,
                    };
                    let mut dp = cross_entropy_grad(&class_scores, *label, *readout)?;
                    let seed = g.get(0, 0);
                    dp.iter_mut().for_each(|x| *x *= seed);
                    let dp = Sequence::from_vec(1, dp.len(), dp)?;
                    self.emit(&mut grads, index, *scores, dp)?;
                }
                Op::SoftmaxSum { logits, probs } => {
                    let dp = g.row(0);
                    let mut dv = Sequence::zeros(probs.steps(), probs.width());
                    for t in 0..probs.steps() {
                        let p = probs.row(t);
                        let inner = dot(p, dp);
                        for ((d, &pj), &dpj) in dv.row_mut(t).iter_mut().zip(p).zip(dp) {
                            *d = pj * (dpj - inner);
                        }
                    }
                    self.emit(&mut grads, index, *logits, dv)?;
                }
                Op::Readout { current, layer, alpha } => {
                    let v = &node.value;
                    let input = self.value(*current);
                    let n = alpha.len();
                    let mut di = Sequence::zeros(v.steps(), n);
                    let mut dalpha = vec![0.0; n];
                    let mut gv_next = vec![0.0; n];
                    for t in (0..v.steps()).rev() {
                        let g_t = g.row(t);
                        let i_t = input.row(t);
                        for k in 0..n {
                            let gv = g_t[k] + alpha[k] * gv_next[k];
                            let v_prev = if t > 0 { v.get(t - 1, k) } else { 0.0 };
                            dalpha[k] += gv * (v_prev - i_t[k]);
                            gv_next[k] = gv;
                        }
                        for (d, (&gv, &a)) in di.row_mut(t).iter_mut().zip(gv_next.iter().zip(alpha)) {
                            *d = (1.0 - a) * gv;
                        }
                    }
                    self.store_alpha_grad(out, *layer, &dalpha);
                    self.emit(&mut grads, index, *current, di)?;
                }
                Op::Lif {
                    current,
                    layer,
                    alpha,
                    membrane,
                    detach_reset,
                } => {
                    let input = self.value(*current);
                    let n = alpha.len();
                    let steps = membrane.steps();
                    let mut di = Sequence::zeros(steps, n);
                    let mut dalpha = vec![0.0; n];
                    let mut gv_next = vec![0.0; n];
                    for t in (0..steps).rev() {
                        let g_t = g.row(t);
                        let i_t = input.row(t);
                        let v_t = membrane.row(t);
                        let last = t + 1 == steps;
                        for k in 0..n {
                            let mut gs = g_t[k];
                            if !detach_reset && !last {
                                gs -= V_TH * gv_next[k];
                            }
                            let gv = gs * boxcar_scalar(v_t[k], V_TH) + alpha[k] * gv_next[k];
                            let v_prev = if t > 0 { membrane.get(t - 1, k) } else { 0.0 };
                            dalpha[k] += gv * (v_prev - i_t[k]);
                            gv_next[k] = gv;
                        }
                        for (d, (&gv, &a)) in di.row_mut(t).iter_mut().zip(gv_next.iter().zip(alpha)) {
                            *d = (1.0 - a) * gv;
                        }
                    }
                    self.store_alpha_grad(out, *layer, &dalpha);
                    self.emit(&mut grads, index, *current, di)?;
                }
                Op::Affine { input, layer } => {
                    let l = self.params.layer(*layer);
                    let fan_out = l.fan_out;
                    let x = self.value(*input);
                    let lg = out.layer_mut(*layer);
                    for t in 0..x.steps() {
                        let g_t = g.row(t);
                        axpy(1.0, g_t, &mut lg.bias);
                        for (j, &xj) in x.row(t).iter().enumerate() {
                            if xj != 0.0 {
                                axpy(xj, g_t, &mut lg.weights[j * fan_out..(j + 1) * fan_out]);
                            }
                        }
                    }
                    if self.needs_grad(*input) {
                        let w = &l.tensors.weights;
                        let mut dx = Sequence::zeros(x.steps(), l.fan_in);
                        for t in 0..x.steps() {
                            let g_t = g.row(t);
                            for (j, d) in dx.row_mut(t).iter_mut().enumerate() {
                                *d = dot(&w[j * fan_out..(j + 1) * fan_out], g_t);
                            }
                        }
                        self.emit(&mut grads, index, *input, dx)?;
                    }
                    let lg = out.layer(*layer);
                    if lg.weights.iter().chain(&lg.bias).any(|x| !x.is_finite()) {
                        return Err(self.divergence(index));
                    }
                }
                Op::Concat { parts } => {
                    let mut offset = 0;
                    for &p in parts {
                        let w = self.value(p).width();
                        if self.needs_grad(p) {
                            let mut part = Sequence::zeros(g.steps(), w);
                            for t in 0..g.steps() {
                                part.row_mut(t).copy_from_slice(&g.row(t)[offset..offset + w]);
                            }
                            self.emit(&mut grads, index, p, part)?;
                        }
                        offset += w;
                    }
                }
            }
        }
        out.ensure_finite(self.params)
    }

    fn store_alpha_grad(&self, out: &mut GradientSet, layer: usize, dalpha: &[f64]) {
        let raw = &self.params.layer(layer).tensors.alpha_raw;
        for ((dst, &d), &r) in out.layer_mut(layer).alpha_raw.iter_mut().zip(dalpha).zip(raw) {
            *dst += d * squash_alpha_grad(r);
        }
    }

    fn divergence(&self, index: usize) -> Error {
        Error::Divergence {
            location: format!("node {index} ({})", self.nodes[index].op.name()),
            detail: "non-finite gradient".into(),
        }
    }

    /// Routes a gradient to `target`, checking it is finite.
    fn emit(&self, grads: &mut [Option<Sequence>], from: usize, target: BufId, g: Sequence) -> Result<()> {
        if !g.is_finite() {
            return Err(self.divergence(from));
        }
        if self.needs_grad(target) {
            accumulate(grads, target, g);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lif::unsquash_alpha;

    fn one_neuron(weight: f64, alpha: f64) -> ParameterStore {
        let mut p = ParameterStore::new();
        let i = p.push("h", 1, 1);
        p.layer_mut(i).tensors.weights[0] = weight;
        p.layer_mut(i).tensors.alpha_raw[0] = unsquash_alpha(alpha);
        p
    }

    #[test]
    fn single_step_below_threshold() {
        let params = one_neuron(1.0, 0.8);
        let mut tape = Tape::new(&params);
        let x = tape.input(Sequence::from_vec(1, 1, vec![5.0]).unwrap());
        let s = tape.lif_layer(0, x, LifOptions::default()).unwrap();
        let v = tape.membrane(s).unwrap().get(0, 0);
        // (1 - 0.8) * 5 = 1.0, and 1.0 is not > v_th.
        assert!((v - 1.0).abs() < 1e-6);
        assert_eq!(tape.value(s).get(0, 0), 0.0);
    }

    #[test]
    fn two_step_spike_and_reset() {
        let params = one_neuron(1.0, 0.8);
        let mut tape = Tape::new(&params);
        let x = tape.input(Sequence::from_vec(2, 1, vec![10.0, 0.0]).unwrap());
        let opts = LifOptions {
            precision: Precision::Double,
            ..Default::default()
        };
        let s = tape.lif_layer(0, x, opts).unwrap();
        let m = tape.membrane(s).unwrap();
        assert!((m.get(0, 0) - 2.0).abs() < 1e-12);
        assert!((m.get(1, 0) - 0.6).abs() < 1e-12);
        assert_eq!(tape.value(s).data(), &[1.0, 0.0]);
    }

    #[test]
    fn zero_weights_give_no_spikes() {
        let params = one_neuron(0.0, 0.9);
        let mut tape = Tape::new(&params);
        let x = tape.input(Sequence::from_vec(3, 1, vec![7.0, 1.0, 9.0]).unwrap());
        let s = tape.lif_layer(0, x, LifOptions::default()).unwrap();
        assert!(tape.value(s).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn backward_before_loss_is_usage_error() {
        let params = one_neuron(1.0, 0.8);
        let tape = Tape::new(&params);
        assert!(matches!(tape.backward(1.0), Err(Error::Usage(_))));
    }

    #[test]
    fn shape_errors() {
        let params = one_neuron(1.0, 0.8);
        let mut tape = Tape::new(&params);
        let x = tape.input(Sequence::zeros(2, 3));
        assert!(matches!(tape.affine(0, x), Err(Error::Shape { .. })));
        let a = tape.input(Sequence::zeros(2, 1));
        let b = tape.input(Sequence::zeros(3, 1));
        assert!(tape.concat(&[a, b]).is_err());
    }

    #[test]
    fn inputs_only_concat_needs_no_grad() {
        let params = one_neuron(1.0, 0.8);
        let mut tape = Tape::new(&params);
        let a = tape.input(Sequence::zeros(2, 1));
        let b = tape.input(Sequence::zeros(2, 2));
        let c = tape.concat(&[a, b]).unwrap();
        assert_eq!(tape.value(c).width(), 3);
        assert!(!tape.needs_grad(c));
    }
}
