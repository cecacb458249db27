//! Unimodal and fusion network topologies.
//!
//! Every topology is a stack of fully connected spiking layers ending in a
//! non-spiking readout. Fusion networks run a visual and an auditory branch,
//! concatenate their spike trains per time bin and continue in a shared
//! stack. Early fusion has empty branches and concatenates the binned inputs
//! directly.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::frames::SpikeFrameSequence;
use crate::lif::sample_alpha_raw;
use crate::params::ParameterStore;
use crate::readout::LossReadout;
use crate::tape::{BufId, LifOptions, Tape};

/// 34 x 34 pixels x 2 polarities.
pub const VISUAL_CHANNELS: usize = 2312;
/// Cochlear channels of the auditory sensor.
pub const AUDITORY_CHANNELS: usize = 700;
pub const NUM_CLASSES: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    UnimodalVisual,
    UnimodalAuditory,
    FusionEarly,
    FusionMiddle,
    FusionLate,
}

impl Mode {
    pub const ALL: [Mode; 5] = [
        Mode::UnimodalVisual,
        Mode::UnimodalAuditory,
        Mode::FusionEarly,
        Mode::FusionMiddle,
        Mode::FusionLate,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::UnimodalVisual => "unimodal-visual",
            Mode::UnimodalAuditory => "unimodal-auditory",
            Mode::FusionEarly => "fusion-early",
            Mode::FusionMiddle => "fusion-middle",
            Mode::FusionLate => "fusion-late",
        }
    }

    pub fn uses_visual(self) -> bool {
        self != Mode::UnimodalAuditory
    }

    pub fn uses_auditory(self) -> bool {
        self != Mode::UnimodalVisual
    }

    pub fn is_fusion(self) -> bool {
        self.uses_visual() && self.uses_auditory()
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown mode `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputChannels {
    pub visual: usize,
    pub auditory: usize,
}

impl Default for InputChannels {
    fn default() -> Self {
        Self {
            visual: VISUAL_CHANNELS,
            auditory: AUDITORY_CHANNELS,
        }
    }
}

/// Declarative topology. Hidden widths are listed per stack; the readout
/// layer is implicit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchitectureSpec {
    pub mode: Mode,
    pub visual_branch: Vec<usize>,
    pub auditory_branch: Vec<usize>,
    pub shared: Vec<usize>,
    pub readout_classes: usize,
    pub input_channels: InputChannels,
}

/// One layer of the resolved plan: name, fan-in, fan-out.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlannedLayer {
    pub name: String,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl ArchitectureSpec {
    /// Defaults with three hidden spiking layers on every path, so fusion
    /// depth is the only thing that differs between fusion modes.
    pub fn default_for(mode: Mode) -> Self {
        let (visual_branch, auditory_branch, shared) = match mode {
            Mode::UnimodalVisual => (vec![512, 256, 128], vec![], vec![]),
            Mode::UnimodalAuditory => (vec![], vec![512, 256, 128], vec![]),
            Mode::FusionEarly => (vec![], vec![], vec![512, 256, 128]),
            Mode::FusionMiddle => (vec![256], vec![256], vec![256, 128]),
            Mode::FusionLate => (vec![256, 128], vec![256, 128], vec![128]),
        };
        Self {
            mode,
            visual_branch,
            auditory_branch,
            shared,
            readout_classes: NUM_CLASSES,
            input_channels: InputChannels::default(),
        }
    }

    /// Same topology with every hidden width divided by `factor` (min 1).
    pub fn scaled_down(mut self, factor: usize) -> Self {
        for w in self
            .visual_branch
            .iter_mut()
            .chain(&mut self.auditory_branch)
            .chain(&mut self.shared)
        {
            *w = (*w / factor).max(1);
        }
        self
    }

    fn spec_error(layer: impl Into<String>, reason: impl Into<String>) -> Error {
        Error::Spec {
            layer: layer.into(),
            reason: reason.into(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mode = self.mode;
        if mode.uses_visual() && self.input_channels.visual == 0 {
            return Err(Self::spec_error("input.visual", "zero input channels"));
        }
        if mode.uses_auditory() && self.input_channels.auditory == 0 {
            return Err(Self::spec_error("input.auditory", "zero input channels"));
        }
        if !mode.uses_visual() && !self.visual_branch.is_empty() {
            return Err(Self::spec_error("visual.0", format!("{mode} has no visual branch")));
        }
        if !mode.uses_auditory() && !self.auditory_branch.is_empty() {
            return Err(Self::spec_error("auditory.0", format!("{mode} has no auditory branch")));
        }
        match mode {
            Mode::FusionEarly => {
                if !self.visual_branch.is_empty() || !self.auditory_branch.is_empty() {
                    return Err(Self::spec_error(
                        "visual.0",
                        "fusion-early concatenates raw inputs; branches must be empty",
                    ));
                }
            }
            Mode::FusionMiddle | Mode::FusionLate => {
                if self.visual_branch.is_empty() {
                    return Err(Self::spec_error("visual.0", format!("{mode} needs a visual branch")));
                }
                if self.auditory_branch.is_empty() {
                    return Err(Self::spec_error(
                        "auditory.0",
                        format!("{mode} needs an auditory branch"),
                    ));
                }
            }
            Mode::UnimodalVisual | Mode::UnimodalAuditory => {}
        }
        for (stack, widths) in [
            ("visual", &self.visual_branch),
            ("auditory", &self.auditory_branch),
            ("shared", &self.shared),
        ] {
            if let Some(i) = widths.iter().position(|&w| w == 0) {
                return Err(Self::spec_error(format!("{stack}.{i}"), "zero width"));
            }
        }
        if self.readout_classes < 2 {
            return Err(Self::spec_error("readout", "need at least two classes"));
        }
        Ok(())
    }

    /// Layer shapes in parameter-store order: visual branch, auditory
    /// branch, shared stack, readout.
    pub fn plan(&self) -> Result<Vec<PlannedLayer>> {
        self.validate()?;
        let mut plan = Vec::new();
        let stack = |name: &str, mut width: usize, widths: &[usize], plan: &mut Vec<PlannedLayer>| {
            for (i, &w) in widths.iter().enumerate() {
                plan.push(PlannedLayer {
                    name: format!("{name}.{i}"),
                    fan_in: width,
                    fan_out: w,
                });
                width = w;
            }
            width
        };
        let mut concat = 0;
        if self.mode.uses_visual() {
            concat += stack("visual", self.input_channels.visual, &self.visual_branch, &mut plan);
        }
        if self.mode.uses_auditory() {
            concat += stack(
                "auditory",
                self.input_channels.auditory,
                &self.auditory_branch,
                &mut plan,
            );
        }
        let last = stack("shared", concat, &self.shared, &mut plan);
        plan.push(PlannedLayer {
            name: "readout".into(),
            fan_in: last,
            fan_out: self.readout_classes,
        });
        Ok(plan)
    }
}

/// Layer indices into a [`ParameterStore`] for one topology.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    spec: ArchitectureSpec,
    visual: Vec<usize>,
    auditory: Vec<usize>,
    shared: Vec<usize>,
    readout: usize,
}

/// Scaling applied on top of the Kaiming-uniform initialisation.
///
/// With plain Kaiming weights and zero biases, spiking layers beyond the
/// first start almost silent and their membranes sit outside the surrogate
/// window, so no gradient reaches the lower layers. The training default
/// widens the weights and lifts the hidden biases to the window's edge.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InitOptions {
    /// Multiplier on the uniform bound `sqrt(6 / fan_in)`.
    pub weight_gain: f64,
    /// Initial bias of every spiking layer. The readout bias starts at zero.
    pub hidden_bias: f64,
}

impl InitOptions {
    /// Plain Kaiming-uniform weights and zero biases.
    pub const KAIMING: InitOptions = InitOptions {
        weight_gain: 1.0,
        hidden_bias: 0.0,
    };

    pub fn validate(&self) -> Result<()> {
        if !(self.weight_gain > 0.0) || !self.weight_gain.is_finite() || !self.hidden_bias.is_finite() {
            return Err(Error::Config(format!("invalid initialisation {self:?}")));
        }
        Ok(())
    }
}

impl Default for InitOptions {
    fn default() -> Self {
        Self {
            weight_gain: 2.0,
            hidden_bias: 0.5,
        }
    }
}

/// Creates the network and its parameters: Kaiming-uniform weights with
/// bound `sqrt(6 / fan_in)`, zero biases, decay uniform on `[0.60, 0.96]`.
pub fn build(spec: &ArchitectureSpec, seed: u64) -> Result<(Network, ParameterStore)> {
    build_with(spec, seed, &InitOptions::KAIMING)
}

/// [`build`] with scaled weights and hidden biases. The random draws are
/// the same for every `init`.
pub fn build_with(spec: &ArchitectureSpec, seed: u64, init: &InitOptions) -> Result<(Network, ParameterStore)> {
    init.validate()?;
    let network = Network::from_spec(spec)?;
    let mut params = network.empty_params()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for index in 0..params.layers().len() {
        let is_readout = index == network.readout;
        let layer = params.layer_mut(index);
        let bound = (6.0 / layer.fan_in as f64).sqrt();
        for w in &mut layer.tensors.weights {
            *w = rng.gen_range(-bound..bound) * init.weight_gain;
        }
        if !is_readout {
            layer.tensors.bias.iter_mut().for_each(|b| *b = init.hidden_bias);
        }
        for a in &mut layer.tensors.alpha_raw {
            *a = sample_alpha_raw(&mut rng);
        }
    }
    Ok((network, params))
}

impl Network {
    /// Layout only; pair with [`Network::empty_params`] or a checkpoint.
    pub fn from_spec(spec: &ArchitectureSpec) -> Result<Self> {
        let plan = spec.plan()?;
        let index_of = |prefix: &str| -> Vec<usize> {
            plan.iter()
                .enumerate()
                .filter(|(_, l)| l.name.starts_with(prefix))
                .map(|(i, _)| i)
                .collect()
        };
        Ok(Self {
            spec: spec.clone(),
            visual: index_of("visual."),
            auditory: index_of("auditory."),
            shared: index_of("shared."),
            readout: plan.len() - 1,
        })
    }

    /// Zero-initialized parameters with this network's layout.
    pub fn empty_params(&self) -> Result<ParameterStore> {
        let mut params = ParameterStore::new();
        for l in self.spec.plan()? {
            params.push(l.name, l.fan_in, l.fan_out);
        }
        Ok(params)
    }

    pub fn spec(&self) -> &ArchitectureSpec {
        &self.spec
    }

    pub fn mode(&self) -> Mode {
        self.spec.mode
    }

    /// Checks that `params` has exactly the layout this network expects.
    pub fn check_params(&self, params: &ParameterStore) -> Result<()> {
        let plan = self.spec.plan()?;
        check_len("parameter layer count", plan.len(), params.layers().len())?;
        for (p, l) in plan.iter().zip(params.layers()) {
            if p.name != l.name || p.fan_in != l.fan_in || p.fan_out != l.fan_out {
                return Err(Error::Spec {
                    layer: l.name.clone(),
                    reason: format!(
                        "parameters are {}x{}, architecture expects {} {}x{}",
                        l.fan_in, l.fan_out, p.name, p.fan_in, p.fan_out
                    ),
                });
            }
        }
        Ok(())
    }

    fn check_inputs(&self, visual: Option<&SpikeFrameSequence>, auditory: Option<&SpikeFrameSequence>) -> Result<()> {
        let mode = self.mode();
        for (name, uses, input, channels) in [
            ("visual", mode.uses_visual(), visual, self.spec.input_channels.visual),
            (
                "auditory",
                mode.uses_auditory(),
                auditory,
                self.spec.input_channels.auditory,
            ),
        ] {
            match (uses, input) {
                (true, None) => return Err(Error::Modality(format!("{mode} requires {name} input"))),
                (false, Some(_)) => return Err(Error::Modality(format!("{mode} does not accept {name} input"))),
                (true, Some(seq)) => check_len("input channels", channels, seq.channels())?,
                (false, None) => {}
            }
        }
        if let (Some(v), Some(a)) = (visual, auditory) {
            check_len("time bins across modalities", v.steps(), a.steps())?;
        }
        Ok(())
    }

    fn run_stack(&self, tape: &mut Tape<'_>, layers: &[usize], mut x: BufId, opts: LifOptions) -> Result<BufId> {
        for &layer in layers {
            x = tape.lif_layer(layer, x, opts)?;
        }
        Ok(x)
    }

    /// Records the full forward pass and returns the readout membrane
    /// trajectory `[T x classes]`.
    pub fn forward(
        &self,
        tape: &mut Tape<'_>,
        visual: Option<&SpikeFrameSequence>,
        auditory: Option<&SpikeFrameSequence>,
        opts: LifOptions,
    ) -> Result<BufId> {
        self.check_inputs(visual, auditory)?;
        let mut streams = Vec::with_capacity(2);
        if let Some(v) = visual {
            let x = tape.input_frames(v);
            streams.push(self.run_stack(tape, &self.visual, x, opts)?);
        }
        if let Some(a) = auditory {
            let x = tape.input_frames(a);
            streams.push(self.run_stack(tape, &self.auditory, x, opts)?);
        }
        let joined = if streams.len() == 1 {
            streams[0]
        } else {
            tape.concat(&streams)?
        };
        let last = self.run_stack(tape, &self.shared, joined, opts)?;
        let current = tape.affine(self.readout, last)?;
        tape.readout(self.readout, current, opts.precision)
    }

    /// Forward pass through the loss; the returned tape is ready for
    /// backward.
    pub fn forward_loss<'p>(
        &self,
        params: &'p ParameterStore,
        visual: Option<&SpikeFrameSequence>,
        auditory: Option<&SpikeFrameSequence>,
        label: usize,
        opts: LifOptions,
        loss_readout: LossReadout,
    ) -> Result<Tape<'p>> {
        let mut tape = Tape::new(params);
        let trajectory = self.forward(&mut tape, visual, auditory, opts)?;
        let scores = tape.softmax_sum(trajectory)?;
        tape.cross_entropy(scores, label, loss_readout)?;
        Ok(tape)
    }
}

/// Loss of the network with the spike replaced by its boxcar-derivative
/// ramp, in double precision. The gradient-check oracle.
pub fn relaxed_forward(
    network: &Network,
    params: &ParameterStore,
    visual: Option<&SpikeFrameSequence>,
    auditory: Option<&SpikeFrameSequence>,
    label: usize,
    loss_readout: LossReadout,
) -> Result<f64> {
    let tape = network.forward_loss(params, visual, auditory, label, LifOptions::relaxed(), loss_readout)?;
    Ok(tape.loss().expect("loss recorded"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frames::DEFAULT_NUM_BINS;
    use crate::lif::{squash_alpha_scalar, ALPHA_MAX, ALPHA_MIN};

    fn zero_frames(channels: usize) -> SpikeFrameSequence {
        SpikeFrameSequence::zeros(DEFAULT_NUM_BINS, channels)
    }

    #[test]
    fn mode_names_round_trip() {
        for m in Mode::ALL {
            assert_eq!(m.as_str().parse::<Mode>().unwrap(), m);
            assert_eq!(serde_json::to_string(&m).unwrap(), format!("\"{m}\""));
        }
        assert!("fusion-deep".parse::<Mode>().is_err());
    }

    #[test]
    fn default_plans_have_three_hidden_layers() {
        for m in Mode::ALL {
            let spec = ArchitectureSpec::default_for(m);
            let plan = spec.plan().unwrap();
            let longest_path = match m {
                Mode::FusionMiddle | Mode::FusionLate => spec.visual_branch.len() + spec.shared.len(),
                _ => plan.len() - 1,
            };
            assert_eq!(longest_path, 3, "{m}");
        }
    }

    #[test]
    fn fusion_late_concat_width() {
        let plan = ArchitectureSpec::default_for(Mode::FusionLate).plan().unwrap();
        let shared = plan.iter().find(|l| l.name == "shared.0").unwrap();
        assert_eq!(shared.fan_in, 256);
        let early = ArchitectureSpec::default_for(Mode::FusionEarly).plan().unwrap();
        assert_eq!(early[0].fan_in, 3012);
    }

    #[test]
    fn validation_names_offending_layer() {
        let mut spec = ArchitectureSpec::default_for(Mode::FusionLate);
        spec.shared = vec![128, 0];
        let err = spec.validate().unwrap_err();
        assert!(err.to_string().contains("shared.1"), "{err}");

        let mut spec = ArchitectureSpec::default_for(Mode::FusionEarly);
        spec.visual_branch = vec![10];
        assert!(spec.validate().is_err());

        let mut spec = ArchitectureSpec::default_for(Mode::UnimodalVisual);
        spec.auditory_branch = vec![10];
        assert!(spec.validate().unwrap_err().to_string().contains("auditory.0"));

        let mut spec = ArchitectureSpec::default_for(Mode::FusionMiddle);
        spec.auditory_branch.clear();
        assert!(spec.validate().is_err());
    }

    #[test]
    fn build_is_deterministic_and_in_range() {
        let spec = ArchitectureSpec::default_for(Mode::FusionMiddle).scaled_down(8);
        let (_, a) = build(&spec, 11).unwrap();
        let (_, b) = build(&spec, 11).unwrap();
        let (_, c) = build(&spec, 12).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        for l in a.layers() {
            let bound = (6.0 / l.fan_in as f64).sqrt();
            assert!(l.tensors.weights.iter().all(|w| w.abs() <= bound));
            assert!(l.tensors.bias.iter().all(|&b| b == 0.0));
            for &r in &l.tensors.alpha_raw {
                let alpha = squash_alpha_scalar(r);
                assert!((ALPHA_MIN..=ALPHA_MAX).contains(&alpha));
            }
        }
    }

    #[test]
    fn zero_input_gives_zero_readout() {
        for m in Mode::ALL {
            let spec = ArchitectureSpec::default_for(m).scaled_down(16);
            let (net, params) = build(&spec, 3).unwrap();
            let v = m.uses_visual().then(|| zero_frames(VISUAL_CHANNELS));
            let a = m.uses_auditory().then(|| zero_frames(AUDITORY_CHANNELS));
            let mut tape = Tape::new(&params);
            let out = net
                .forward(&mut tape, v.as_ref(), a.as_ref(), LifOptions::default())
                .unwrap();
            let traj = tape.value(out);
            assert_eq!((traj.steps(), traj.width()), (DEFAULT_NUM_BINS, NUM_CLASSES));
            assert!(traj.data().iter().all(|&x| x == 0.0), "{m}");
        }
    }

    #[test]
    fn modality_contract() {
        let spec = ArchitectureSpec::default_for(Mode::UnimodalVisual).scaled_down(16);
        let (net, params) = build(&spec, 3).unwrap();
        let v = zero_frames(VISUAL_CHANNELS);
        let a = zero_frames(AUDITORY_CHANNELS);
        let mut tape = Tape::new(&params);
        let err = net.forward(&mut tape, Some(&v), Some(&a), LifOptions::default());
        assert!(matches!(err, Err(Error::Modality(_))));
        assert!(matches!(
            net.forward(&mut tape, None, None, LifOptions::default()),
            Err(Error::Modality(_))
        ));

        let spec = ArchitectureSpec::default_for(Mode::FusionLate).scaled_down(16);
        let (net, params) = build(&spec, 3).unwrap();
        let mut tape = Tape::new(&params);
        let short = SpikeFrameSequence::zeros(50, AUDITORY_CHANNELS);
        assert!(matches!(
            net.forward(&mut tape, Some(&v), Some(&short), LifOptions::default()),
            Err(Error::Shape { .. })
        ));
        let wrong_width = SpikeFrameSequence::zeros(DEFAULT_NUM_BINS, 699);
        assert!(net
            .forward(&mut tape, Some(&v), Some(&wrong_width), LifOptions::default())
            .is_err());
    }

    #[test]
    fn check_params_rejects_other_layout() {
        let (net, params) = build(&ArchitectureSpec::default_for(Mode::FusionLate).scaled_down(16), 1).unwrap();
        net.check_params(&params).unwrap();
        let (_, other) = build(&ArchitectureSpec::default_for(Mode::FusionMiddle).scaled_down(16), 1).unwrap();
        assert!(net.check_params(&other).is_err());
    }

    #[test]
    fn init_options_scale_the_same_draws() {
        let spec = ArchitectureSpec::default_for(Mode::FusionMiddle).scaled_down(16);
        let (_, plain) = build(&spec, 4).unwrap();
        let (_, same) = build_with(&spec, 4, &InitOptions::KAIMING).unwrap();
        assert_eq!(plain, same);
        let (net, scaled) = build_with(&spec, 4, &InitOptions::default()).unwrap();
        net.check_params(&scaled).unwrap();
        let readout = scaled.index_of("readout").unwrap();
        for (i, (a, b)) in plain.layers().iter().zip(scaled.layers()).enumerate() {
            for (wa, wb) in a.tensors.weights.iter().zip(&b.tensors.weights) {
                assert_eq!(2.0 * wa, *wb);
            }
            let want = if i == readout { 0.0 } else { 0.5 };
            assert!(b.tensors.bias.iter().all(|&x| x == want));
            assert_eq!(a.tensors.alpha_raw, b.tensors.alpha_raw);
        }
        assert!(build_with(
            &spec,
            4,
            &InitOptions {
                weight_gain: 0.0,
                hidden_bias: 0.0
            }
        )
        .is_err());
    }
}
