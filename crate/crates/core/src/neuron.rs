//! Single-neuron state transitions.
//!
//! The membrane voltage is kept as two components, one driven by the
//! post-synaptic current and one by the after-hyperpolarizing (AHP) current,
//! so that the scaled voltage used by the surrogate gradient can be read off
//! directly. One step is one millisecond.
//!
//! Two arithmetic modes exist: `f64` ([`NeuronState`]) and a signed 24-bit
//! fixed-point mode ([`fixed`]) where every decay is a multiply by
//! `round(4096 * alpha) / 4096`.

use serde::{Deserialize, Serialize};

use crate::error::{invalid_param, Error, Result};

/// Which transition a neuron follows.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NeuronKind {
    Lif,
    LifAhp,
    Readout,
    InputSource,
}

/// Per-neuron constants. Time constants are in steps; `f64::INFINITY` means
/// "no decay".
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NeuronParams {
    pub kind: NeuronKind,
    #[serde(with = "extended_f64")]
    pub tau_v: f64,
    #[serde(with = "extended_f64")]
    pub tau_i: f64,
    #[serde(with = "extended_f64")]
    pub tau_ahp: f64,
    pub beta: f64,
    #[serde(with = "extended_f64")]
    pub b0: f64,
    pub g_v: f64,
    pub refractory: u32,
    /// Readout only: voltage integrates during the last `readout_window` steps.
    #[serde(default)]
    pub readout_window: u32,
}

impl NeuronParams {
    pub fn lif(tau_v: f64, tau_i: f64, b0: f64, refractory: u32) -> Self {
        Self {
            kind: NeuronKind::Lif,
            tau_v,
            tau_i,
            tau_ahp: f64::INFINITY,
            beta: 0.0,
            b0,
            g_v: 1.0,
            refractory,
            readout_window: 0,
        }
    }

    pub fn lif_ahp(tau_v: f64, tau_i: f64, tau_ahp: f64, beta: f64, b0: f64, refractory: u32) -> Self {
        Self {
            kind: NeuronKind::LifAhp,
            tau_ahp,
            beta,
            ..Self::lif(tau_v, tau_i, b0, refractory)
        }
    }

    /// Non-spiking readout: PSC decays with `tau_readout`, voltage integrates
    /// with `tau_v` (infinite for the non-leaky readout) inside the window.
    pub fn readout(tau_readout: f64, tau_v: f64, window: u32) -> Self {
        Self {
            kind: NeuronKind::Readout,
            tau_v,
            tau_i: tau_readout,
            tau_ahp: f64::INFINITY,
            beta: 0.0,
            b0: f64::INFINITY,
            g_v: 1.0,
            refractory: 0,
            readout_window: window,
        }
    }

    pub fn input_source() -> Self {
        Self {
            kind: NeuronKind::InputSource,
            tau_v: f64::INFINITY,
            tau_i: f64::INFINITY,
            tau_ahp: f64::INFINITY,
            beta: 0.0,
            b0: f64::INFINITY,
            g_v: 1.0,
            refractory: 0,
            readout_window: 0,
        }
    }

    /// The same neuron without its AHP current.
    pub fn without_ahp(&self) -> Self {
        match self.kind {
            NeuronKind::LifAhp => Self {
                kind: NeuronKind::Lif,
                beta: 0.0,
                tau_ahp: f64::INFINITY,
                ..self.clone()
            },
            _ => self.clone(),
        }
    }

    pub fn is_spiking(&self) -> bool {
        matches!(self.kind, NeuronKind::Lif | NeuronKind::LifAhp)
    }

    pub fn validate(&self) -> Result<()> {
        let tau_ok = |t: f64| t > 0.0 && !t.is_nan();
        if !(self.g_v > 0.0 && self.g_v.is_finite()) {
            return Err(invalid_param(format!("g_v must be positive, got {}", self.g_v)));
        }
        match self.kind {
            NeuronKind::InputSource => Ok(()),
            NeuronKind::Readout => {
                if !tau_ok(self.tau_i) || !self.tau_i.is_finite() {
                    return Err(invalid_param("readout tau_i must be finite and positive"));
                }
                if !tau_ok(self.tau_v) {
                    return Err(invalid_param("readout tau_v must be positive or infinite"));
                }
                if self.b0.is_finite() {
                    return Err(invalid_param("readout neurons have no finite threshold"));
                }
                Ok(())
            }
            NeuronKind::Lif | NeuronKind::LifAhp => {
                for (name, tau) in [("tau_v", self.tau_v), ("tau_i", self.tau_i)] {
                    if !tau_ok(tau) || !tau.is_finite() {
                        return Err(invalid_param(format!("{name} must be finite and positive, got {tau}")));
                    }
                }
                if !self.b0.is_finite() {
                    return Err(invalid_param("spiking neurons need a finite threshold"));
                }
                if self.kind == NeuronKind::Lif {
                    if self.beta != 0.0 {
                        return Err(invalid_param("plain LIF neurons must have beta = 0"));
                    }
                } else {
                    if self.beta == 0.0 {
                        return Err(invalid_param("AHP neurons need beta != 0"));
                    }
                    if !tau_ok(self.tau_ahp) || self.tau_ahp < 5.0 * self.tau_v {
                        return Err(invalid_param(format!(
                            "tau_ahp ({}) must be at least 5 * tau_v ({})",
                            self.tau_ahp, self.tau_v
                        )));
                    }
                }
                Ok(())
            }
        }
    }

    /// Decay factors `(alpha_i, alpha_v, alpha_ahp)`.
    pub fn decays(&self) -> Result<Decays> {
        Ok(Decays {
            i: decay_factor(self.tau_i)?,
            v: decay_factor(self.tau_v)?,
            ahp: decay_factor(self.tau_ahp)?,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Decays {
    pub i: f64,
    pub v: f64,
    pub ahp: f64,
}

/// `exp(-1/tau)`; an infinite time constant gives exactly 1.
pub fn decay_factor(tau: f64) -> Result<f64> {
    if tau.is_infinite() && tau > 0.0 {
        return Ok(1.0);
    }
    if !(tau > 0.0) {
        return Err(invalid_param(format!("time constant must be positive, got {tau}")));
    }
    Ok((-1.0 / tau).exp())
}

/// Dynamic variables of a spiking neuron.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct NeuronState {
    pub i_psc: f64,
    pub i_ahp: f64,
    pub v_psc: f64,
    pub v_ahp: f64,
    pub refractory_left: u32,
    /// Spike emitted on the previous step; drives the AHP decrement.
    pub spiked: bool,
}

impl NeuronState {
    pub fn v(&self) -> f64 {
        self.v_psc + self.v_ahp
    }
}

/// Precomputed transition for one parameter set.
#[derive(Clone, Copy, Debug)]
pub struct LifStep {
    pub decays: Decays,
    pub beta: f64,
    pub b0: f64,
    pub inv_g: f64,
    pub refractory: u32,
}

impl LifStep {
    pub fn new(params: &NeuronParams) -> Result<Self> {
        Ok(Self {
            decays: params.decays()?,
            beta: params.beta,
            b0: params.b0,
            inv_g: 1.0 / params.g_v,
            refractory: params.refractory,
        })
    }

    /// Advances `state` by one step and returns whether it spiked.
    #[inline]
    pub fn advance(&self, s: &mut NeuronState, input: f64) -> bool {
        let d = self.decays;
        s.i_psc = d.i * s.i_psc + input;
        s.i_ahp = d.ahp * s.i_ahp - if s.spiked { self.beta } else { 0.0 };
        let spike = if s.refractory_left > 0 {
            s.refractory_left -= 1;
            s.v_psc = 0.0;
            s.v_ahp = 0.0;
            false
        } else {
            s.v_psc = d.v * s.v_psc + self.inv_g * s.i_psc;
            s.v_ahp = d.v * s.v_ahp + self.inv_g * s.i_ahp;
            s.v_psc + s.v_ahp > self.b0
        };
        if spike {
            s.v_psc = 0.0;
            s.v_ahp = 0.0;
            s.refractory_left = self.refractory;
        }
        s.spiked = spike;
        spike
    }
}

/// Pure form of [`LifStep::advance`].
pub fn step_neuron(state: &NeuronState, params: &NeuronParams, weighted_input: f64) -> Result<(NeuronState, bool)> {
    let step = LifStep::new(params)?;
    let mut next = *state;
    let spike = step.advance(&mut next, weighted_input);
    Ok((next, spike))
}

/// `(v - b0) / (b0 - v_ahp)`: 0 at threshold, -1 when only the AHP
/// component is present.
pub fn scaled_voltage(state: &NeuronState, params: &NeuronParams) -> Result<f64> {
    scaled(state.v(), state.v_ahp, params.b0)
}

pub(crate) fn scaled(v: f64, v_ahp: f64, b0: f64) -> Result<f64> {
    if !b0.is_finite() {
        return Err(invalid_param("scaled voltage needs a finite threshold"));
    }
    let denom = b0 - v_ahp;
    if denom == 0.0 {
        return Err(Error::DegenerateDenominator(b0));
    }
    Ok((v - b0) / denom)
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ReadoutState {
    pub i_psc: f64,
    pub v: f64,
    pub integration_enabled: bool,
}

/// Readout transition: the PSC always decays and accumulates; the voltage
/// integrates the PSC only during the last `readout_window` steps and never
/// resets.
pub fn step_readout(
    state: &ReadoutState,
    params: &NeuronParams,
    weighted_input: f64,
    step: u32,
    total_steps: u32,
) -> Result<ReadoutState> {
    if step >= total_steps {
        return Err(invalid_param(format!("step {step} outside run of {total_steps} steps")));
    }
    let r = ReadoutStep::new(params)?;
    let mut next = *state;
    r.advance(&mut next, weighted_input, step, total_steps);
    Ok(next)
}

#[derive(Clone, Copy, Debug)]
pub struct ReadoutStep {
    pub alpha_i: f64,
    pub alpha_v: f64,
    pub window: u32,
}

impl ReadoutStep {
    pub fn new(params: &NeuronParams) -> Result<Self> {
        Ok(Self {
            alpha_i: decay_factor(params.tau_i)?,
            alpha_v: decay_factor(params.tau_v)?,
            window: params.readout_window,
        })
    }

    pub fn enabled(&self, step: u32, total_steps: u32) -> bool {
        step.saturating_add(self.window) >= total_steps
    }

    #[inline]
    pub fn advance(&self, s: &mut ReadoutState, input: f64, step: u32, total_steps: u32) {
        s.i_psc = self.alpha_i * s.i_psc + input;
        s.integration_enabled = self.enabled(step, total_steps);
        if s.integration_enabled {
            s.v = self.alpha_v * s.v + s.i_psc;
        }
    }
}

/// Signed 24-bit fixed-point variant of the transitions.
pub mod fixed {
    use super::*;

    pub const FRACTION_BITS: u32 = 12;
    pub const ONE: i64 = 1 << FRACTION_BITS;
    pub const MAX: i64 = (1 << 23) - 1;
    pub const MIN: i64 = -(1 << 23);

    #[inline]
    pub fn saturate(x: i64) -> i32 {
        x.clamp(MIN, MAX) as i32
    }

    /// `round(4096 * alpha)`.
    pub fn quantize_decay(alpha: f64) -> i32 {
        (alpha * ONE as f64).round() as i32
    }

    /// `x * a / 4096`, rounded half up, saturated.
    #[inline]
    pub fn decay(x: i32, a: i32) -> i32 {
        saturate((x as i64 * a as i64 + (ONE >> 1)) >> FRACTION_BITS)
    }

    #[derive(Clone, Copy, Debug, PartialEq, Eq)]
    pub struct FixedStep {
        pub alpha_i: i32,
        pub alpha_v: i32,
        pub alpha_ahp: i32,
        pub beta: i32,
        pub b0: i32,
        pub refractory: u32,
    }

    impl FixedStep {
        pub fn new(params: &NeuronParams) -> Result<Self> {
            if params.g_v != 1.0 {
                return Err(invalid_param("fixed-point mode requires g_v = 1"));
            }
            let d = params.decays()?;
            let b0 = if params.b0.is_finite() { params.b0.round() as i64 } else { MAX };
            Ok(Self {
                alpha_i: quantize_decay(d.i),
                alpha_v: quantize_decay(d.v),
                alpha_ahp: quantize_decay(d.ahp),
                beta: saturate(params.beta.round() as i64),
                b0: saturate(b0),
                refractory: params.refractory,
            })
        }

        /// Real-valued parameters that reproduce this step's quantized
        /// decay factors exactly.
        pub fn real_equivalent(&self) -> LifStep {
            LifStep {
                decays: Decays {
                    i: self.alpha_i as f64 / ONE as f64,
                    v: self.alpha_v as f64 / ONE as f64,
                    ahp: self.alpha_ahp as f64 / ONE as f64,
                },
                beta: self.beta as f64,
                b0: self.b0 as f64,
                inv_g: 1.0,
                refractory: self.refractory,
            }
        }

        /// One step; `input` is the exact integer sum of this step's
        /// weighted spikes.
        #[inline]
        pub fn advance(&self, s: &mut FixedState, input: i64) -> bool {
            s.i_psc = saturate(decay(s.i_psc, self.alpha_i) as i64 + input);
            s.i_ahp = saturate(decay(s.i_ahp, self.alpha_ahp) as i64 - if s.spiked { self.beta as i64 } else { 0 });
            let spike = if s.refractory_left > 0 {
                s.refractory_left -= 1;
                s.v_psc = 0;
                s.v_ahp = 0;
                false
            } else {
                s.v_psc = saturate(decay(s.v_psc, self.alpha_v) as i64 + s.i_psc as i64);
                s.v_ahp = saturate(decay(s.v_ahp, self.alpha_v) as i64 + s.i_ahp as i64);
                s.v_psc as i64 + s.v_ahp as i64 > self.b0 as i64
            };
            if spike {
                s.v_psc = 0;
                s.v_ahp = 0;
                s.refractory_left = self.refractory;
            }
            s.spiked = spike;
            spike
        }
    }

    #[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
    pub struct FixedState {
        pub i_psc: i32,
        pub i_ahp: i32,
        pub v_psc: i32,
        pub v_ahp: i32,
        pub refractory_left: u32,
        pub spiked: bool,
    }

    impl FixedState {
        pub fn v(&self) -> i64 {
            self.v_psc as i64 + self.v_ahp as i64
        }

        pub fn to_real(&self) -> NeuronState {
            NeuronState {
                i_psc: self.i_psc as f64,
                i_ahp: self.i_ahp as f64,
                v_psc: self.v_psc as f64,
                v_ahp: self.v_ahp as f64,
                refractory_left: self.refractory_left,
                spiked: self.spiked,
            }
        }
    }

    #[derive(Clone, Copy, Debug)]
    pub struct FixedReadoutStep {
        pub alpha_i: i32,
        pub alpha_v: i32,
        pub window: u32,
    }

    impl FixedReadoutStep {
        pub fn new(params: &NeuronParams) -> Result<Self> {
            let d = params.decays()?;
            Ok(Self {
                alpha_i: quantize_decay(d.i),
                alpha_v: quantize_decay(d.v),
                window: params.readout_window,
            })
        }

        #[inline]
        pub fn advance(&self, s: &mut FixedReadoutState, input: i64, step: u32, total_steps: u32) {
            s.i_psc = saturate(decay(s.i_psc, self.alpha_i) as i64 + input);
            if step.saturating_add(self.window) >= total_steps {
                s.v = saturate(decay(s.v, self.alpha_v) as i64 + s.i_psc as i64);
            }
        }
    }

    #[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
    pub struct FixedReadoutState {
        pub i_psc: i32,
        pub v: i32,
    }
}

/// Serializes non-finite floats as the strings `"inf"`, `"-inf"`, `"nan"`.
pub(crate) mod extended_f64 {
    use serde::{de, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
        if x.is_finite() {
            s.serialize_f64(*x)
        } else if x.is_nan() {
            s.serialize_str("nan")
        } else if *x > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Str(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(x) => Ok(x),
            Repr::Str(s) => match s.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                other => Err(de::Error::custom(format!("expected number or inf, got {other:?}"))),
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::fixed::*;
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn smnist_ahp() -> NeuronParams {
        NeuronParams::lif_ahp(20.0, 5.0, 700.0, 96.0, 127.0, 1)
    }

    #[test]
    fn decay_factor_values() {
        assert_eq!(decay_factor(f64::INFINITY).unwrap(), 1.0);
        assert_eq!(decay_factor(700.0).unwrap(), (-1.0f64 / 700.0).exp());
        // exp(-1/20) to 20 digits: 0.95122942450071400909
        assert!((decay_factor(20.0).unwrap() - 0.951_229_424_500_714).abs() < 1e-15);
        assert!(matches!(decay_factor(0.0), Err(Error::InvalidParameter(_))));
        assert!(matches!(decay_factor(-3.0), Err(Error::InvalidParameter(_))));
        assert!(decay_factor(f64::NAN).is_err());
    }

    #[test]
    fn zero_state_is_a_fixed_point() {
        let (next, spike) = step_neuron(&NeuronState::default(), &smnist_ahp(), 0.0).unwrap();
        assert_eq!(next, NeuronState::default());
        assert!(!spike);
    }

    #[test]
    fn ahp_decrement_follows_previous_spike() {
        let p = smnist_ahp();
        let s = NeuronState { spiked: true, refractory_left: 1, ..Default::default() };
        let (next, _) = step_neuron(&s, &p, 0.0).unwrap();
        assert_eq!(next.i_ahp, -96.0);
    }

    #[test]
    fn strict_threshold() {
        // tau_v so large that v == input exactly on the first step
        let p = NeuronParams::lif(1e300, 1e300, 127.0, 0);
        let (_, at) = step_neuron(&NeuronState::default(), &p, 127.0).unwrap();
        assert!(!at);
        let (after, above) = step_neuron(&NeuronState::default(), &p, 127.5).unwrap();
        assert!(above);
        assert_eq!(after.v(), 0.0);
    }

    #[test]
    fn reset_and_refractory() {
        let p = NeuronParams::lif(20.0, 5.0, 10.0, 3);
        let mut s = NeuronState::default();
        let step = LifStep::new(&p).unwrap();
        assert!(step.advance(&mut s, 100.0));
        assert_eq!((s.v_psc, s.v_ahp, s.refractory_left), (0.0, 0.0, 3));
        for _ in 0..3 {
            assert!(!step.advance(&mut s, 100.0));
            assert_eq!(s.v(), 0.0);
        }
        assert!(step.advance(&mut s, 100.0));
    }

    #[test]
    fn scaled_voltage_definition() {
        let p = NeuronParams::lif(20.0, 5.0, 127.0, 0);
        let s = |v_psc: f64, v_ahp: f64| NeuronState { v_psc, v_ahp, ..Default::default() };
        assert_eq!(scaled_voltage(&s(127.0, 0.0), &p).unwrap(), 0.0);
        assert_eq!(scaled_voltage(&s(0.0, -40.0), &p).unwrap(), -1.0);
        assert_eq!(scaled_voltage(&s(63.5, 0.0), &p).unwrap(), -0.5);
        let degenerate = s(0.0, 127.0);
        assert!(matches!(scaled_voltage(&degenerate, &p), Err(Error::DegenerateDenominator(_))));
    }

    #[test]
    fn validation() {
        assert!(smnist_ahp().validate().is_ok());
        assert!(NeuronParams::lif_ahp(20.0, 5.0, 50.0, 96.0, 127.0, 1).validate().is_err());
        let mut lif = NeuronParams::lif(20.0, 5.0, 127.0, 1);
        assert!(lif.validate().is_ok());
        lif.beta = 1.0;
        assert!(lif.validate().is_err());
        assert!(NeuronParams::readout(7.0, f64::INFINITY, 10).validate().is_ok());
        assert!(NeuronParams::lif(f64::INFINITY, 5.0, 127.0, 1).validate().is_err());
    }

    #[test]
    fn readout_zero_input_stays_zero() {
        let p = NeuronParams::readout(7.0, f64::INFINITY, 10);
        let mut s = ReadoutState::default();
        for t in 0..37 {
            s = step_readout(&s, &p, 0.0, t, 37).unwrap();
        }
        assert_eq!(s.v, 0.0);
        assert!(step_readout(&s, &p, 0.0, 37, 37).is_err());
    }

    #[test]
    fn readout_window_geometric_tail() {
        let total = 60u32;
        let window = 10u32;
        let p = NeuronParams::readout(7.0, f64::INFINITY, window);
        let mut s = ReadoutState::default();
        let pulse_at = total - 25;
        for t in 0..total {
            let x = if t == pulse_at { 1.0 } else { 0.0 };
            s = step_readout(&s, &p, x, t, total).unwrap();
        }
        // i_psc[t] = a^(t - pulse); v sums it over t in [total - window, total)
        let a = (-1.0f64 / 7.0).exp();
        let first = (total - window - pulse_at) as i32;
        let expected = a.powi(first) * (1.0 - a.powi(window as i32)) / (1.0 - a);
        assert!((s.v - expected).abs() < 1e-12, "{} vs {}", s.v, expected);
    }

    #[test]
    fn readout_full_window_integrates_everything() {
        let total = 30;
        let p = NeuronParams::readout(7.0, f64::INFINITY, total);
        let mut s = ReadoutState::default();
        let mut psc = 0.0;
        let mut integral = 0.0;
        let a = (-1.0f64 / 7.0).exp();
        for t in 0..total {
            let x = (t % 4) as f64;
            psc = a * psc + x;
            integral += psc;
            s = step_readout(&s, &p, x, t, total).unwrap();
            assert!(s.integration_enabled);
        }
        assert!((s.v - integral).abs() < 1e-9);
    }

    /// Literal transcription of the update equations, kept independent of
    /// `LifStep`.
    fn transcription(params: &NeuronParams, inputs: &[f64]) -> Vec<(f64, f64, f64, f64, bool)> {
        let ai = (-1.0 / params.tau_i).exp();
        let av = (-1.0 / params.tau_v).exp();
        let aa = if params.tau_ahp.is_infinite() { 1.0 } else { (-1.0 / params.tau_ahp).exp() };
        let (mut ipsc, mut iahp, mut vpsc, mut vahp) = (0.0, 0.0, 0.0, 0.0);
        let mut z_prev = 0.0;
        let mut refr = 0u32;
        let mut out = Vec::new();
        for &x in inputs {
            ipsc = ai * ipsc + x;
            iahp = aa * iahp - params.beta * z_prev;
            let z;
            if refr == 0 {
                vpsc = av * vpsc + ipsc / params.g_v;
                vahp = av * vahp + iahp / params.g_v;
                z = if vpsc + vahp > params.b0 { 1.0 } else { 0.0 };
            } else {
                refr -= 1;
                vpsc = 0.0;
                vahp = 0.0;
                z = 0.0;
            }
            if z == 1.0 {
                vpsc = 0.0;
                vahp = 0.0;
                refr = params.refractory;
            }
            z_prev = z;
            out.push((ipsc, iahp, vpsc, vahp, z == 1.0));
        }
        out
    }

    #[test]
    fn matches_transcription_on_random_traces() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10 {
            let tau_v = rng.random_range(5.0..40.0);
            let p = NeuronParams::lif_ahp(
                tau_v,
                rng.random_range(1.0..20.0),
                rng.random_range(5.0 * tau_v..1000.0),
                rng.random_range(1.0..120.0),
                rng.random_range(20.0..200.0),
                rng.random_range(0..3),
            );
            let inputs: Vec<f64> = (0..1000).map(|_| rng.random_range(-20.0..40.0)).collect();
            let reference = transcription(&p, &inputs);
            let step = LifStep::new(&p).unwrap();
            let mut s = NeuronState::default();
            for (x, r) in inputs.iter().zip(&reference) {
                let z = step.advance(&mut s, *x);
                assert_eq!((s.i_psc, s.i_ahp, s.v_psc, s.v_ahp, z), *r);
            }
        }
    }

    #[test]
    fn fixed_decay_rounding() {
        assert_eq!(quantize_decay(1.0), 4096);
        assert_eq!(decay(1000, 4096), 1000);
        assert_eq!(decay(-1000, 4096), -1000);
        assert_eq!(decay(3, 2048), 2); // 1.5 rounds up
        assert_eq!(decay(-3, 2048), -1); // -1.5 rounds up
        assert_eq!(saturate(1 << 30), MAX as i32);
        assert_eq!(saturate(-(1 << 30)), MIN as i32);
    }

    #[test]
    fn fixed_mode_stays_within_one_quantum_per_step() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let p = NeuronParams::lif_ahp(20.0, 5.0, 700.0, 96.0, 127.0, 1);
            let fx = FixedStep::new(&p).unwrap();
            let real = fx.real_equivalent();
            let mut s = FixedState::default();
            for _ in 0..100 {
                let x: i64 = rng.random_range(-40..80);
                let mut r = s.to_real();
                // compare before the reset so a spike does not hide the error
                let pre = {
                    let mut no_reset = real;
                    no_reset.b0 = f64::INFINITY;
                    let mut t = r;
                    no_reset.advance(&mut t, x as f64);
                    t
                };
                real.advance(&mut r, x as f64);
                let mut f = s;
                fx.advance(&mut f, x);
                assert!((f.i_psc as f64 - pre.i_psc).abs() <= 1.0);
                assert!((f.i_ahp as f64 - pre.i_ahp).abs() <= 1.0);
                if !f.spiked && !r.spiked {
                    assert!((f.v_psc as f64 - pre.v_psc).abs() <= 1.0);
                    assert!((f.v_ahp as f64 - pre.v_ahp).abs() <= 1.0);
                }
                s = f;
            }
        }
    }

    proptest! {
        #[test]
        fn beta_zero_ahp_equals_lif(inputs in prop::collection::vec(-30.0f64..60.0, 1..200), tau_v in 5.0f64..40.0, b0 in 10.0f64..150.0) {
            let mut ahp = NeuronParams::lif_ahp(tau_v, 5.0, 10.0 * tau_v, 0.0, b0, 1);
            ahp.beta = 0.0;
            let lif = ahp.without_ahp();
            let (a, b) = (LifStep::new(&ahp).unwrap(), LifStep::new(&lif).unwrap());
            let (mut sa, mut sb) = (NeuronState::default(), NeuronState::default());
            for x in inputs {
                prop_assert_eq!(a.advance(&mut sa, x), b.advance(&mut sb, x));
                prop_assert_eq!(sa, sb);
            }
        }

        #[test]
        fn more_negative_ahp_never_adds_spikes(inputs in prop::collection::vec(0.0f64..60.0, 200), extra in 0.0f64..500.0) {
            let p = NeuronParams::lif_ahp(20.0, 5.0, 700.0, 96.0, 127.0, 1);
            let step = LifStep::new(&p).unwrap();
            let mut base = NeuronState::default();
            let mut inhibited = NeuronState { i_ahp: -extra, ..Default::default() };
            let (mut n_base, mut n_inh) = (0, 0);
            for x in &inputs {
                n_base += step.advance(&mut base, *x) as u32;
                n_inh += step.advance(&mut inhibited, *x) as u32;
            }
            prop_assert!(n_inh <= n_base);
        }

        #[test]
        fn spike_always_resets(inputs in prop::collection::vec(-10.0f64..200.0, 1..300), refractory in 0u32..4) {
            let p = NeuronParams::lif_ahp(20.0, 5.0, 700.0, 50.0, 127.0, refractory);
            let step = LifStep::new(&p).unwrap();
            let mut s = NeuronState::default();
            for x in inputs {
                if step.advance(&mut s, x) {
                    prop_assert_eq!(s.v(), 0.0);
                    prop_assert_eq!(s.refractory_left, refractory);
                }
            }
        }

        #[test]
        fn fixed_mode_is_deterministic(inputs in prop::collection::vec(-100i64..300, 1..200)) {
            let fx = FixedStep::new(&NeuronParams::lif_ahp(20.0, 5.0, 700.0, 96.0, 127.0, 1)).unwrap();
            let (mut a, mut b) = (FixedState::default(), FixedState::default());
            for x in inputs {
                fx.advance(&mut a, x);
                fx.advance(&mut b, x);
                prop_assert_eq!(a, b);
            }
        }
    }
}
