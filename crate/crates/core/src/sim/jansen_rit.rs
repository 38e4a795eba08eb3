//! Jansen-Rit neural mass model integrated with fixed-step RK4.
//!
//! Three populations (pyramidal, excitatory and inhibitory interneurons) in
//! second-order form:
//!
//! ```text
//! y0'' = A a Sig(y1 - y2)                - 2a y0' - a^2 y0
//! y1'' = A a (p(t) + C2 Sig(C1 y0))      - 2a y1' - a^2 y1
//! y2'' = B b C4 Sig(C3 y0)               - 2b y2' - b^2 y2
//! Sig(v) = 2 e0 / (1 + exp(r (v0 - v)))
//! ```
//!
//! The external drive `p(t)` is Gaussian, redrawn every `input_hold` seconds
//! and held constant in between, so the drive does not depend on `dt`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{param_err, EsiError, Result};

const BLOWUP: f64 = 1e6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JansenRitParams {
    /// Excitatory synaptic gain A (mV).
    pub excitatory_gain: f64,
    /// Inhibitory synaptic gain B (mV).
    pub inhibitory_gain: f64,
    /// Excitatory rate constant a (1/s).
    pub excitatory_rate: f64,
    /// Inhibitory rate constant b (1/s).
    pub inhibitory_rate: f64,
    /// Connectivity constant C.
    pub connectivity: f64,
    /// C1..C4 as fractions of C.
    pub connectivity_ratios: [f64; 4],
    /// Half the maximum firing rate e0 (1/s).
    pub e0: f64,
    /// Firing threshold v0 (mV).
    pub v0: f64,
    /// Sigmoid steepness r (1/mV).
    pub sigmoid_slope: f64,
    pub input_mean: f64,
    pub input_std: f64,
    /// Hold time of each drive sample (s).
    pub input_hold: f64,
    /// Mean rate of additive input pulses (Hz); 0 disables them.
    pub pulse_rate: f64,
    pub pulse_amplitude: f64,
    pub pulse_width: f64,
    pub dt: f64,
    pub burn_in: f64,
}

impl Default for JansenRitParams {
    fn default() -> Self {
        JansenRitParams {
            excitatory_gain: 3.25,
            inhibitory_gain: 22.0,
            excitatory_rate: 100.0,
            inhibitory_rate: 50.0,
            connectivity: 135.0,
            connectivity_ratios: [1.0, 0.8, 0.25, 0.25],
            e0: 2.5,
            v0: 6.0,
            sigmoid_slope: 0.56,
            input_mean: 220.0,
            input_std: 22.0,
            input_hold: 1e-3,
            pulse_rate: 0.0,
            pulse_amplitude: 0.0,
            pulse_width: 0.0,
            dt: 1e-4,
            burn_in: 1.0,
        }
    }
}

/// Named parameter sets.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NmmPreset {
    /// Canonical alpha-rhythm operating point.
    #[default]
    Alpha,
    /// Raised C2 plus injected input pulses, producing spike-like transients.
    Spike,
}

impl NmmPreset {
    pub fn params(self) -> JansenRitParams {
        match self {
            NmmPreset::Alpha => JansenRitParams::default(),
            NmmPreset::Spike => JansenRitParams {
                connectivity_ratios: [1.0, 0.9, 0.25, 0.25],
                pulse_rate: 1.0,
                pulse_amplitude: 300.0,
                pulse_width: 0.02,
                ..JansenRitParams::default()
            },
        }
    }
}

/// Relative jitter ranges; each parameter is multiplied by a uniform factor
/// in `[1 - j, 1 + j]`.
#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NmmJitter {
    pub excitatory_gain: f64,
    pub inhibitory_gain: f64,
    pub connectivity: f64,
    pub input_mean: f64,
}

impl NmmJitter {
    pub fn apply(&self, base: &JansenRitParams, rng: &mut impl Rng) -> JansenRitParams {
        let mut f = |j: f64| {
            if j > 0.0 {
                1.0 + rng.random_range(-j..=j)
            } else {
                1.0
            }
        };
        JansenRitParams {
            excitatory_gain: base.excitatory_gain * f(self.excitatory_gain),
            inhibitory_gain: base.inhibitory_gain * f(self.inhibitory_gain),
            connectivity: base.connectivity * f(self.connectivity),
            input_mean: base.input_mean * f(self.input_mean),
            ..*base
        }
    }
}

impl JansenRitParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("excitatory_gain", self.excitatory_gain),
            ("inhibitory_gain", self.inhibitory_gain),
            ("excitatory_rate", self.excitatory_rate),
            ("inhibitory_rate", self.inhibitory_rate),
            ("connectivity", self.connectivity),
            ("e0", self.e0),
            ("sigmoid_slope", self.sigmoid_slope),
            ("dt", self.dt),
            ("input_hold", self.input_hold),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return param_err(format!("{name} must be positive, got {v}"));
            }
        }
        if self.connectivity_ratios.iter().any(|r| !(*r > 0.0)) {
            return param_err("connectivity ratios must be positive");
        }
        if self.dt > 1e-3 {
            return param_err(format!("dt must be <= 1e-3 s, got {}", self.dt));
        }
        if !(self.burn_in >= 0.0) {
            return param_err("burn_in must be >= 0");
        }
        if self.input_std < 0.0 || self.pulse_rate < 0.0 || self.pulse_width < 0.0 {
            return param_err("input_std, pulse_rate and pulse_width must be >= 0");
        }
        Ok(())
    }

    fn sigmoid(&self, v: f64) -> f64 {
        2.0 * self.e0 / (1.0 + (self.sigmoid_slope * (self.v0 - v)).exp())
    }

    fn derivative(&self, y: &[f64; 6], p: f64) -> [f64; 6] {
        let (a, b) = (self.excitatory_rate, self.inhibitory_rate);
        let (big_a, big_b) = (self.excitatory_gain, self.inhibitory_gain);
        let c = self.connectivity;
        let [r1, r2, r3, r4] = self.connectivity_ratios;
        [
            y[3],
            y[4],
            y[5],
            big_a * a * self.sigmoid(y[1] - y[2]) - 2.0 * a * y[3] - a * a * y[0],
            big_a * a * (p + r2 * c * self.sigmoid(r1 * c * y[0])) - 2.0 * a * y[4] - a * a * y[1],
            big_b * b * r4 * c * self.sigmoid(r3 * c * y[0]) - 2.0 * b * y[5] - b * b * y[2],
        ]
    }

    fn rk4_step(&self, y: &mut [f64; 6], p: f64, dt: f64) {
        let add = |y: &[f64; 6], k: &[f64; 6], h: f64| {
            let mut o = *y;
            o.iter_mut().zip(k).for_each(|(o, k)| *o += h * k);
            o
        };
        let k1 = self.derivative(y, p);
        let k2 = self.derivative(&add(y, &k1, dt / 2.0), p);
        let k3 = self.derivative(&add(y, &k2, dt / 2.0), p);
        let k4 = self.derivative(&add(y, &k3, dt), p);
        for i in 0..6 {
            y[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    }
}

/// Returns the mean-centred pyramidal potential `y1 - y2`, sampled at
/// `sample_rate` after discarding the burn-in.
pub fn simulate_jansen_rit(
    params: &JansenRitParams,
    n_timepoints: usize,
    sample_rate: f64,
    seed: u64,
) -> Result<Vec<f64>> {
    params.validate()?;
    if !(sample_rate >= 100.0) {
        return param_err(format!("sample_rate must be >= 100 Hz, got {sample_rate}"));
    }
    if n_timepoints == 0 {
        return param_err("n_timepoints must be > 0");
    }
    let dt = params.dt;
    let steps_per_hold = (params.input_hold / dt).round().max(1.0) as usize;
    let burn_steps = (params.burn_in / dt).round() as usize;
    let out_times: Vec<usize> = (0..n_timepoints)
        .map(|k| burn_steps + (k as f64 / (sample_rate * dt)).round() as usize)
        .collect();
    let total_steps = *out_times.last().unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pulse_steps = (params.pulse_width / dt).round() as usize;
    let pulse_prob = params.pulse_rate * params.input_hold;

    let mut y = [0.0; 6];
    let mut p = 0.0;
    let mut pulse_left = 0usize;
    let mut out = Vec::with_capacity(n_timepoints);
    let mut next_out = 0;
    for step in 0..=total_steps {
        while next_out < n_timepoints && out_times[next_out] == step {
            out.push(y[1] - y[2]);
            next_out += 1;
        }
        if step == total_steps {
            break;
        }
        if step % steps_per_hold == 0 {
            let z: f64 = rng.sample(StandardNormal);
            p = params.input_mean + params.input_std * z;
            if pulse_prob > 0.0 {
                let u: f64 = rng.random();
                if u < pulse_prob {
                    pulse_left = pulse_steps;
                }
            }
        }
        let drive = if pulse_left > 0 {
            pulse_left -= 1;
            p + params.pulse_amplitude
        } else {
            p
        };
        params.rk4_step(&mut y, drive, dt);
        if y.iter().any(|v| !(v.abs() <= BLOWUP)) {
            return Err(EsiError::Instability {
                params: format!("{params:?}"),
            });
        }
    }
    let mean = out.iter().sum::<f64>() / out.len() as f64;
    out.iter_mut().for_each(|v| *v -= mean);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Naive DFT power peak, independent of the crate's FFT.
    fn peak_frequency(w: &[f64], fs: f64) -> f64 {
        let n = w.len();
        let mut best = (0.0, 0usize);
        for k in 1..=n / 2 {
            let (mut re, mut im) = (0.0, 0.0);
            for (t, v) in w.iter().enumerate() {
                let ang = std::f64::consts::TAU * (k * t) as f64 / n as f64;
                re += v * ang.cos();
                im -= v * ang.sin();
            }
            let pw = re * re + im * im;
            if pw > best.0 {
                best = (pw, k);
            }
        }
        best.1 as f64 * fs / n as f64
    }

    #[test]
    fn default_params_give_alpha_peak() {
        let w = simulate_jansen_rit(&JansenRitParams::default(), 500, 250.0, 0).unwrap();
        let f = peak_frequency(&w, 250.0);
        assert!((8.0..=12.0).contains(&f), "peak at {f} Hz");
    }

    #[test]
    fn no_input_decays_to_fixed_point() {
        let params = JansenRitParams {
            input_mean: 0.0,
            input_std: 0.0,
            ..Default::default()
        };
        let w = simulate_jansen_rit(&params, 500, 250.0, 3).unwrap();
        let tail = &w[250..];
        let m = tail.iter().sum::<f64>() / tail.len() as f64;
        let var = tail.iter().map(|v| (v - m).powi(2)).sum::<f64>() / tail.len() as f64;
        assert!(var < 1e-6, "tail variance {var}");
    }

    #[test]
    fn seeded_runs_repeat() {
        let p = JansenRitParams::default();
        let a = simulate_jansen_rit(&p, 200, 250.0, 11).unwrap();
        let b = simulate_jansen_rit(&p, 200, 250.0, 11).unwrap();
        assert_eq!(a, b);
        let c = simulate_jansen_rit(&p, 200, 250.0, 12).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn halving_dt_barely_changes_waveform() {
        let p = JansenRitParams::default();
        let half = JansenRitParams {
            dt: p.dt / 2.0,
            ..p
        };
        let a = simulate_jansen_rit(&p, 250, 250.0, 5).unwrap();
        let b = simulate_jansen_rit(&half, 250, 250.0, 5).unwrap();
        let diff: f64 = a
            .iter()
            .zip(&b)
            .map(|(x, y)| (x - y).powi(2))
            .sum::<f64>()
            .sqrt();
        let norm: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!(diff / norm < 0.01, "relative change {}", diff / norm);
    }

    #[test]
    fn spike_preset_runs_and_is_larger() {
        let w = simulate_jansen_rit(&NmmPreset::Spike.params(), 500, 250.0, 2).unwrap();
        assert!(w.iter().all(|v| v.is_finite()));
        let peak = w.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(peak > 0.0);
    }

    #[test]
    fn blow_up_is_reported() {
        let params = JansenRitParams {
            excitatory_rate: 1e6,
            dt: 1e-3,
            ..Default::default()
        };
        assert!(matches!(
            simulate_jansen_rit(&params, 100, 250.0, 0),
            Err(EsiError::Instability { .. })
        ));
    }

    #[test]
    fn invalid_params() {
        let bad = JansenRitParams {
            dt: 2e-3,
            ..Default::default()
        };
        assert!(simulate_jansen_rit(&bad, 10, 250.0, 0).is_err());
        assert!(simulate_jansen_rit(&JansenRitParams::default(), 10, 50.0, 0).is_err());
    }
}
