//! Discrete-time leaky integrate-and-fire neurons.
//!
//! The continuous membrane equation
//!
//! ```text
//! tau_v * dv/dt = -(v - v_rest) + R * I
//! ```
//!
//! is normalized with `v -> (v - v_rest) / (v_th - v_rest)` and
//! `I -> R * I / (v_th - v_rest)`, which puts the resting potential at 0 and
//! the threshold at 1, then discretized with an exponential Euler step:
//!
//! ```text
//! v[t] = alpha * v[t-1] + (1 - alpha) * I[t] - v_th * s[t-1]
//! s[t] = v[t] > v_th
//! alpha = exp(-dt / tau_v)
//! ```
//!
//! `v_rest`, `R`, `tau_v` and `dt` therefore never appear at runtime: only
//! the per-neuron decay `alpha` survives, and it is kept inside
//! `[ALPHA_MIN, ALPHA_MAX]` by a logistic reparameterization.

use rand::Rng;

use crate::error::{check_len, Result};

/// Normalized firing threshold. Never trained.
pub const V_TH: f64 = 1.0;
pub const ALPHA_MIN: f64 = 0.60;
pub const ALPHA_MAX: f64 = 0.96;
const ALPHA_SPAN: f64 = ALPHA_MAX - ALPHA_MIN;

/// Height of the boxcar surrogate derivative.
pub const BOXCAR_HEIGHT: f64 = 0.5;
/// Half-width of the boxcar support around the threshold.
pub const BOXCAR_HALF_WIDTH: f64 = 0.5;

fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Maps an unconstrained raw value onto `[0.60, 0.96]`.
#[inline]
pub fn squash_alpha_scalar(raw: f64) -> f64 {
    ALPHA_MIN + ALPHA_SPAN * logistic(raw)
}

/// Derivative of [`squash_alpha_scalar`] with respect to its argument.
#[inline]
pub fn squash_alpha_grad(raw: f64) -> f64 {
    let s = logistic(raw);
    ALPHA_SPAN * s * (1.0 - s)
}

pub fn squash_alpha(alpha_raw: &[f64]) -> Vec<f64> {
    alpha_raw.iter().map(|&r| squash_alpha_scalar(r)).collect()
}

/// Inverse of the squash, for alpha strictly inside the open range.
pub fn unsquash_alpha(alpha: f64) -> f64 {
    let u = (alpha - ALPHA_MIN) / ALPHA_SPAN;
    (u / (1.0 - u)).ln()
}

/// Draws a raw value whose squashed alpha is uniform on the allowed range.
pub fn sample_alpha_raw<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    // Open interval keeps the logit finite.
    let mut u: f64 = rng.gen();
    while u <= 0.0 {
        u = rng.gen();
    }
    (u / (1.0 - u)).ln()
}

/// Per-neuron decay parameters of one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LifParams {
    pub alpha_raw: Vec<f64>,
}

impl LifParams {
    pub fn new(alpha_raw: Vec<f64>) -> Self {
        Self { alpha_raw }
    }

    pub fn from_alpha(alpha: &[f64]) -> Self {
        Self::new(alpha.iter().map(|&a| unsquash_alpha(a)).collect())
    }

    pub fn alpha(&self) -> Vec<f64> {
        squash_alpha(&self.alpha_raw)
    }

    pub fn v_th(&self) -> f64 {
        V_TH
    }

    pub fn len(&self) -> usize {
        self.alpha_raw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alpha_raw.is_empty()
    }
}

/// Membrane potential and previous-step spikes of a layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LifState {
    pub v: Vec<f64>,
    pub s: Vec<f64>,
}

impl LifState {
    pub fn zeros(neurons: usize) -> Self {
        Self {
            v: vec![0.0; neurons],
            s: vec![0.0; neurons],
        }
    }

    pub fn len(&self) -> usize {
        self.v.len()
    }

    pub fn is_empty(&self) -> bool {
        self.v.is_empty()
    }
}

/// Membrane update for one neuron, before the spike decision.
#[inline]
pub fn membrane_update(alpha: f64, v_prev: f64, current: f64, s_prev: f64) -> f64 {
    alpha * v_prev + (1.0 - alpha) * current - V_TH * s_prev
}

/// Spike nonlinearity used by the forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SpikeFn {
    /// Hard threshold `v > v_th`.
    #[default]
    Heaviside,
    /// Piecewise-linear ramp whose derivative is exactly the boxcar
    /// surrogate. Only meant for gradient checking.
    Relaxed,
}

impl SpikeFn {
    #[inline]
    pub fn apply(self, v: f64) -> f64 {
        match self {
            SpikeFn::Heaviside => {
                if v > V_TH {
                    1.0
                } else {
                    0.0
                }
            }
            SpikeFn::Relaxed => relaxed_spike(v),
        }
    }
}

/// Ramp from 0 at `v_th - 0.5` to 0.5 at `v_th + 0.5`.
#[inline]
pub fn relaxed_spike(v: f64) -> f64 {
    (BOXCAR_HEIGHT * (v - V_TH + BOXCAR_HALF_WIDTH)).clamp(0.0, BOXCAR_HEIGHT * 2.0 * BOXCAR_HALF_WIDTH)
}

/// One time step of a spiking layer. Returns the new state; the input state
/// is left untouched.
pub fn lif_step(state: &LifState, current: &[f64], params: &LifParams) -> Result<LifState> {
    check_len("lif_step current", state.len(), current.len())?;
    check_len("lif_step spikes", state.len(), state.s.len())?;
    check_len("lif_step alpha", state.len(), params.len())?;
    let mut next = LifState::zeros(state.len());
    for (i, &c) in current.iter().enumerate() {
        let alpha = squash_alpha_scalar(params.alpha_raw[i]);
        let v = membrane_update(alpha, state.v[i], c, state.s[i]);
        next.v[i] = v;
        next.s[i] = SpikeFn::Heaviside.apply(v);
    }
    Ok(next)
}

/// One time step of a non-spiking readout integrator.
pub fn readout_step(v_prev: &[f64], current: &[f64], params: &LifParams) -> Result<Vec<f64>> {
    check_len("readout_step current", v_prev.len(), current.len())?;
    check_len("readout_step alpha", v_prev.len(), params.len())?;
    Ok(v_prev
        .iter()
        .zip(current)
        .zip(&params.alpha_raw)
        .map(|((&v, &i), &raw)| {
            let alpha = squash_alpha_scalar(raw);
            alpha * v + (1.0 - alpha) * i
        })
        .collect())
}

#[inline]
pub fn boxcar_scalar(v: f64, v_th: f64) -> f64 {
    if (v - v_th).abs() <= BOXCAR_HALF_WIDTH {
        BOXCAR_HEIGHT
    } else {
        0.0
    }
}

/// Surrogate for `ds/dv`: 0.5 inside `|v - v_th| <= 0.5`, else 0.
pub fn boxcar_surrogate(v: &[f64], v_th: f64) -> Vec<f64> {
    v.iter().map(|&x| boxcar_scalar(x, v_th)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn step1(alpha: f64, v_prev: f64, current: f64, s_prev: f64) -> (f64, f64) {
        let state = LifState {
            v: vec![v_prev],
            s: vec![s_prev],
        };
        let next = lif_step(&state, &[current], &LifParams::from_alpha(&[alpha])).unwrap();
        (next.v[0], next.s[0])
    }

    #[test]
    fn squash_examples() {
        assert!((squash_alpha_scalar(0.0) - 0.78).abs() < 1e-15);
        assert_eq!(squash_alpha_scalar(f64::INFINITY), ALPHA_MAX);
        assert_eq!(squash_alpha_scalar(f64::NEG_INFINITY), ALPHA_MIN);
        // 0.60 + 0.36 / (1 + e^-1), evaluated in high precision.
        assert!((squash_alpha_scalar(1.0) - 0.863_181_088_306_801_8).abs() < 1e-15);
    }

    #[test]
    fn squash_round_trips() {
        for &a in &[0.61, 0.7, 0.8, 0.9, 0.95] {
            assert!((squash_alpha_scalar(unsquash_alpha(a)) - a).abs() < 1e-14);
        }
    }

    #[test]
    fn lif_step_examples() {
        let (v, s) = step1(0.8, 0.5, 1.0, 0.0);
        assert!((v - 0.6).abs() < 1e-12);
        assert_eq!(s, 0.0);

        let (v, s) = step1(0.8, 1.0, 3.0, 0.0);
        assert!((v - 1.4).abs() < 1e-12);
        assert_eq!(s, 1.0);

        let (v, s) = step1(0.9, 2.0, 0.0, 1.0);
        assert!((v - 0.8).abs() < 1e-12);
        assert_eq!(s, 0.0);

        let (v, s) = step1(0.7, 0.0, 0.0, 0.0);
        assert_eq!((v, s), (0.0, 0.0));
    }

    #[test]
    fn threshold_tie_does_not_spike() {
        assert_eq!(SpikeFn::Heaviside.apply(V_TH), 0.0);
        assert_eq!(SpikeFn::Heaviside.apply(V_TH + 1e-12), 1.0);
    }

    #[test]
    fn lif_step_rejects_mismatch() {
        let state = LifState::zeros(2);
        assert!(lif_step(&state, &[1.0], &LifParams::from_alpha(&[0.8, 0.8])).is_err());
        assert!(lif_step(&state, &[1.0, 1.0], &LifParams::from_alpha(&[0.8])).is_err());
    }

    #[test]
    fn readout_step_examples() {
        let p9 = LifParams::from_alpha(&[0.9]);
        assert!((readout_step(&[1.0], &[1.0], &p9).unwrap()[0] - 1.0).abs() < 1e-12);
        assert!((readout_step(&[0.0], &[10.0], &p9).unwrap()[0] - 1.0).abs() < 1e-12);
        let p6 = LifParams::from_alpha(&[0.6]);
        assert!((readout_step(&[5.0], &[0.0], &p6).unwrap()[0] - 3.0).abs() < 1e-12);
        assert!(readout_step(&[0.0, 1.0], &[0.0], &p9).is_err());
    }

    #[test]
    fn boxcar_examples() {
        assert_eq!(boxcar_scalar(1.0, 1.0), 0.5);
        assert_eq!(boxcar_scalar(1.5, 1.0), 0.5);
        assert_eq!(boxcar_scalar(0.5, 1.0), 0.5);
        assert_eq!(boxcar_scalar(1.500_000_1, 1.0), 0.0);
        assert_eq!(boxcar_scalar(0.4, 1.0), 0.0);
        assert_eq!(boxcar_surrogate(&[1.0, 0.4], 1.0), vec![0.5, 0.0]);
    }

    #[test]
    fn relaxed_ramp_examples() {
        assert_eq!(relaxed_spike(V_TH), 0.25);
        assert_eq!(relaxed_spike(V_TH - 0.5), 0.0);
        assert_eq!(relaxed_spike(V_TH + 0.5), 0.5);
        assert_eq!(relaxed_spike(-3.0), 0.0);
        assert_eq!(relaxed_spike(7.0), 0.5);
    }

    #[test]
    fn sampled_alpha_is_in_range() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let a = squash_alpha_scalar(sample_alpha_raw(&mut rng));
            assert!((ALPHA_MIN..=ALPHA_MAX).contains(&a));
        }
    }
}
