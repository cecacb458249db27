//! Test-only oracles shared by the integration suites. Nothing here calls the
//! backward pass; gradients are estimated purely from forward evaluations.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spikefuse::topology::InputChannels;
use spikefuse::{
    build, relaxed_forward, ArchitectureSpec, LifOptions, LossReadout, Mode, Network, ParameterStore,
    SpikeFrameSequence,
};

pub const FD_STEP: f64 = 1e-6;
pub const KINK_MARGIN: f64 = 1e-4;
/// Denominator floor for the relative error of near-zero gradients.
pub const REL_ERR_FLOOR: f64 = 1e-3;

pub struct SmallCase {
    pub network: Network,
    pub params: ParameterStore,
    pub visual: Option<SpikeFrameSequence>,
    pub auditory: Option<SpikeFrameSequence>,
    pub label: usize,
}

impl SmallCase {
    pub fn loss(&self, params: &ParameterStore) -> f64 {
        relaxed_forward(
            &self.network,
            params,
            self.visual.as_ref(),
            self.auditory.as_ref(),
            self.label,
            LossReadout::NormalizedSum,
        )
        .unwrap()
    }

    /// Analytic gradient from the relaxed tape, flattened in store order.
    pub fn analytic(&self) -> Vec<f64> {
        let tape = self
            .network
            .forward_loss(
                &self.params,
                self.visual.as_ref(),
                self.auditory.as_ref(),
                self.label,
                LifOptions::relaxed(),
                LossReadout::NormalizedSum,
            )
            .unwrap();
        tape.backward(1.0).unwrap().to_flat()
    }

    /// Smallest distance from any relaxed membrane value to a ramp kink.
    pub fn kink_distance(&self) -> f64 {
        let tape = self
            .network
            .forward_loss(
                &self.params,
                self.visual.as_ref(),
                self.auditory.as_ref(),
                self.label,
                LifOptions::relaxed(),
                LossReadout::NormalizedSum,
            )
            .unwrap();
        tape.membranes()
            .flat_map(|m| m.data().iter().copied())
            .map(|v| (v - 0.5).abs().min((v - 1.5).abs()))
            .fold(f64::INFINITY, f64::min)
    }

    /// Fraction of relaxed membrane values inside the ramp.
    pub fn ramp_fraction(&self) -> f64 {
        let tape = self
            .network
            .forward_loss(
                &self.params,
                self.visual.as_ref(),
                self.auditory.as_ref(),
                self.label,
                LifOptions::relaxed(),
                LossReadout::NormalizedSum,
            )
            .unwrap();
        let all: Vec<f64> = tape.membranes().flat_map(|m| m.data().to_vec()).collect();
        if all.is_empty() {
            return 0.0;
        }
        all.iter().filter(|v| (**v - 1.0).abs() < 0.5).count() as f64 / all.len() as f64
    }
}

/// Central differences over every scalar parameter.
pub fn finite_difference(case: &SmallCase, h: f64) -> Vec<f64> {
    let base = case.params.to_flat();
    let mut probe = case.params.clone();
    let mut flat = base.clone();
    let mut out = Vec::with_capacity(base.len());
    for i in 0..base.len() {
        flat[i] = base[i] + h;
        probe.assign_flat(&flat).unwrap();
        let plus = case.loss(&probe);
        flat[i] = base[i] - h;
        probe.assign_flat(&flat).unwrap();
        let minus = case.loss(&probe);
        flat[i] = base[i];
        out.push((plus - minus) / (2.0 * h));
    }
    out
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_ERR_FLOOR)
}

// The lazy `then` keeps the draw order: a count is drawn only for active channels.
#[allow(clippy::unnecessary_lazy_evaluations, clippy::filter_map_bool_then)]
fn random_frames(rng: &mut ChaCha8Rng, steps: usize, channels: usize) -> SpikeFrameSequence {
    let bins = (0..steps)
        .map(|_| {
            (0..channels as u32)
                .filter_map(|c| rng.gen_bool(0.5).then(|| (c, rng.gen_range(1..=3) as f32)))
                .collect()
        })
        .collect();
    SpikeFrameSequence::from_bins(channels, bins).unwrap()
}

fn widths(rng: &mut ChaCha8Rng, count: usize) -> Vec<usize> {
    (0..count).map(|_| rng.gen_range(1..=8)).collect()
}

/// Random network with at most three hidden layers on any path, at most
/// eight neurons per layer and at most ten time bins.
pub fn random_small_case(seed: u64) -> SmallCase {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mode = Mode::ALL[rng.gen_range(0..Mode::ALL.len())];
    let (visual_branch, auditory_branch, shared) = match mode {
        Mode::UnimodalVisual => {
            let n = rng.gen_range(1..=3);
            (widths(&mut rng, n), vec![], vec![])
        }
        Mode::UnimodalAuditory => {
            let n = rng.gen_range(1..=3);
            (vec![], widths(&mut rng, n), vec![])
        }
        Mode::FusionEarly => {
            let n = rng.gen_range(0..=3);
            (vec![], vec![], widths(&mut rng, n))
        }
        Mode::FusionMiddle | Mode::FusionLate => {
            let b = rng.gen_range(1..=2);
            let s = rng.gen_range(0..=(3 - b));
            (widths(&mut rng, b), widths(&mut rng, b), widths(&mut rng, s))
        }
    };
    let spec = ArchitectureSpec {
        mode,
        visual_branch,
        auditory_branch,
        shared,
        readout_classes: rng.gen_range(2..=8),
        input_channels: InputChannels {
            visual: rng.gen_range(2..=6),
            auditory: rng.gen_range(2..=6),
        },
    };
    let (network, mut params) = build(&spec, rng.gen()).unwrap();
    let gain = rng.gen_range(1.0..3.0);
    for i in 0..params.layers().len() {
        let t = &mut params.layer_mut(i).tensors;
        t.weights.iter_mut().for_each(|w| *w *= gain);
        t.bias.iter_mut().for_each(|b| *b = rng.gen_range(-0.5..1.0));
        t.alpha_raw.iter_mut().for_each(|a| *a = rng.gen_range(-2.0..2.0));
    }
    let steps = rng.gen_range(1..=10);
    let visual = mode
        .uses_visual()
        .then(|| random_frames(&mut rng, steps, spec.input_channels.visual));
    let auditory = mode
        .uses_auditory()
        .then(|| random_frames(&mut rng, steps, spec.input_channels.auditory));
    let label = rng.gen_range(0..spec.readout_classes);
    SmallCase {
        network,
        params,
        visual,
        auditory,
        label,
    }
}

/// Worst relative error over all parameters of one case.
pub fn max_gradient_error(case: &SmallCase) -> f64 {
    let analytic = case.analytic();
    let numeric = finite_difference(case, FD_STEP);
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(&numeric)
        .map(|(&a, &n)| relative_error(a, n))
        .fold(0.0, f64::max)
}

/// First `count` kink-free cases, scanning seeds upward from `start`.
pub fn kink_free_cases(start: u64, count: usize) -> Vec<(u64, SmallCase)> {
    let mut out = Vec::new();
    let mut seed = start;
    while out.len() < count {
        let case = random_small_case(seed);
        if case.kink_distance() > KINK_MARGIN {
            out.push((seed, case));
        }
        seed += 1;
    }
    out
}
