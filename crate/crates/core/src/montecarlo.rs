//! Repeated estimation trials on random Rayleigh-faded sensor fields.
//!
//! Each trial draws a fresh geometry, channel set and observation set
//! `y_i = A_i xi + w_i`, then runs the network with the ML statistics
//! `g_i = y_i / A_i`, `c_i = A_i^2 / sigma_i^2` three ways: without delays,
//! with delays, and with delays plus a unit-forcing pass for the two-step
//! ratio. Trials run in parallel; every trial owns its RNG stream.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::netgen::{
    channel_rayleigh_with, delays_from_geometry, place_nodes, threshold_prune, DelayMatrix, RayleighConvention,
};
use crate::sim::{simulate, SimConfig, Trajectory};
use crate::stats::{consensus_function, scalar_ml_statistics};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MonteCarloConfig {
    pub n: usize,
    pub trials: usize,
    pub seed: u64,
    pub t_step: f64,
    /// Largest link delay, in steps.
    pub max_delay_steps: f64,
    pub k_gain: f64,
    pub horizon: usize,
    pub xi: f64,
    /// `|xi|^2 / sigma^2` of the observations, in dB.
    pub obs_snr_db: f64,
    /// Per-node observation variances are the nominal value times a factor
    /// drawn uniformly from this range.
    pub noise_spread: (f64, f64),
    pub amplitude_range: (f64, f64),
    /// `|xi|^2 / sigma_v^2` of the coupling noise in dB; `None` disables it.
    pub coupling_snr_db: Option<f64>,
    pub threshold: f64,
    pub rayleigh: RayleighConvention,
    /// Trailing moving-average length applied to observed derivatives.
    pub smoothing: usize,
    /// Curve sampling interval in steps.
    pub record_every: usize,
}

impl Default for MonteCarloConfig {
    fn default() -> Self {
        Self {
            n: 40,
            trials: 100,
            seed: 2009,
            t_step: 1e-3,
            max_delay_steps: 100.0,
            k_gain: 100.0,
            horizon: 5000,
            xi: 1.0,
            obs_snr_db: 20.0,
            noise_spread: (0.5, 2.0),
            amplitude_range: (0.5, 1.5),
            coupling_snr_db: None,
            threshold: 0.0,
            rayleigh: RayleighConvention::SecondMoment,
            smoothing: 500,
            record_every: 50,
        }
    }
}

impl MonteCarloConfig {
    /// Parses a TOML table; absent keys keep their defaults.
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: MonteCarloConfig = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.n < 2 {
            return bad(format!("need at least 2 nodes, got {}", self.n));
        }
        if self.trials == 0 {
            return bad("trials must be at least 1".into());
        }
        if self.horizon == 0 || self.smoothing == 0 || self.record_every == 0 {
            return bad("horizon, smoothing and record_every must be positive".into());
        }
        if !(self.max_delay_steps > 0.0) {
            return bad("max_delay_steps must be positive".into());
        }
        let (lo, hi) = self.amplitude_range;
        if !(lo > 0.0 && hi >= lo) {
            return bad("amplitude range must be positive and ordered".into());
        }
        let (lo, hi) = self.noise_spread;
        if !(lo > 0.0 && hi >= lo) {
            return bad("noise spread must be positive and ordered".into());
        }
        Ok(())
    }

    /// Coupling noise standard deviation implied by `coupling_snr_db`.
    pub fn coupling_noise_std(&self) -> f64 {
        self.coupling_snr_db
            .map_or(0.0, |db| self.xi.abs() * 10f64.powf(-db / 20.0))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MeanStd {
    /// Mean over trials and nodes.
    pub mean: f64,
    /// Standard deviation over trials of the node-averaged estimate.
    pub std: f64,
    /// Standard deviation over trials and nodes pooled.
    pub spread: f64,
}

/// One sampled point of the estimate curves, aggregated over trials and nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub step: usize,
    pub t: f64,
    pub ml: MeanStd,
    pub no_delay: MeanStd,
    pub raw: MeanStd,
    pub two_step: MeanStd,
}

/// Final-time statistics. Biases are trial means of the node-averaged
/// estimate minus that trial's ML value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloSummary {
    pub trials: usize,
    pub ml_mean: f64,
    pub two_step_bias: f64,
    pub two_step_bias_se: f64,
    pub raw_bias: f64,
    pub raw_bias_se: f64,
    pub no_delay_bias: f64,
    pub no_delay_bias_se: f64,
    /// Variance of final per-node estimates over trials and nodes.
    pub ml_var: f64,
    pub two_step_var: f64,
    pub raw_var: f64,
    pub no_delay_var: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloReport {
    pub config: MonteCarloConfig,
    pub coupling_noise_std: f64,
    pub curves: Vec<CurveRow>,
    pub summary: MonteCarloSummary,
}

impl MonteCarloReport {
    pub fn write_csv<W: std::io::Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(
            out,
            "step,t,ml_mean,ml_std,ml_spread,no_delay_mean,no_delay_std,no_delay_spread,\
             raw_mean,raw_std,raw_spread,two_step_mean,two_step_std,two_step_spread"
        )?;
        for r in &self.curves {
            write!(out, "{},{}", r.step, r.t)?;
            for m in [&r.ml, &r.no_delay, &r.raw, &r.two_step] {
                write!(out, ",{},{},{}", m.mean, m.std, m.spread)?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

/// Everything one trial draws.
#[derive(Debug, Clone)]
pub struct TrialSetup {
    pub digraph: crate::digraph::SensorDigraph,
    pub delays: DelayMatrix,
    pub g_values: Vec<f64>,
    pub c_weights: Vec<f64>,
    pub ml: f64,
}

fn trial_rng(seed: u64, trial: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial as u64 + 1);
    rng
}

/// Draws the network and observations of trial `trial`.
pub fn trial_setup(cfg: &MonteCarloConfig, trial: usize) -> Result<TrialSetup> {
    let mut rng = trial_rng(cfg.seed, trial);
    let geo_seed: u64 = rng.random();
    let ch_seed: u64 = rng.random();
    let mut geom = place_nodes(cfg.n, 1.0, geo_seed)?;
    geom.scale_to_max_delay(cfg.max_delay_steps * cfg.t_step)?;
    let delays = delays_from_geometry(&geom);
    let digraph = threshold_prune(&channel_rayleigh_with(&geom, ch_seed, cfg.rayleigh), cfg.threshold)?;

    let nominal = cfg.xi * cfg.xi * 10f64.powf(-cfg.obs_snr_db / 10.0);
    let mut a = Vec::with_capacity(cfg.n);
    let mut s2 = Vec::with_capacity(cfg.n);
    let mut y = Vec::with_capacity(cfg.n);
    for _ in 0..cfg.n {
        let ai = rng.random_range(cfg.amplitude_range.0..=cfg.amplitude_range.1);
        let si = nominal * rng.random_range(cfg.noise_spread.0..=cfg.noise_spread.1);
        let w: f64 = rng.sample(StandardNormal);
        a.push(ai);
        s2.push(si);
        y.push(ai * cfg.xi + si.sqrt() * w);
    }
    let (g_values, c_weights) = scalar_ml_statistics(&a, &s2, &y)?;
    let ml = consensus_function(|x| x, &g_values, &c_weights)?;
    Ok(TrialSetup {
        digraph,
        delays,
        g_values,
        c_weights,
        ml,
    })
}

/// Trailing moving average of each node's derivative, row-major by step.
fn smoothed(traj: &Trajectory, window: usize) -> Vec<f64> {
    let (n, steps) = (traj.n(), traj.len());
    let mut out = vec![0.0; n * steps];
    let mut acc = vec![0.0; n];
    for k in 0..steps {
        for i in 0..n {
            acc[i] += traj.derivative(k, i);
            if k >= window {
                acc[i] -= traj.derivative(k - window, i);
            }
            out[k * n + i] = acc[i] / (k + 1).min(window) as f64;
        }
    }
    out
}

struct TrialOutcome {
    /// Per record: (sum, sum of squares) over nodes, for no_delay/raw/two_step.
    sums: Vec<[(f64, f64); 3]>,
    ml: f64,
    final_means: [f64; 3],
    final_values: [Vec<f64>; 3],
}

fn record_steps(cfg: &MonteCarloConfig) -> Vec<usize> {
    let last = cfg.horizon - 1;
    let mut v: Vec<usize> = (0..cfg.horizon).step_by(cfg.record_every).collect();
    if *v.last().unwrap() != last {
        v.push(last);
    }
    v
}

fn run_trial(cfg: &MonteCarloConfig, trial: usize, records: &[usize]) -> Result<TrialOutcome> {
    let setup = trial_setup(cfg, trial)?;
    let n = cfg.n;
    let noise = cfg.coupling_noise_std();
    let mut noise_rng = trial_rng(cfg.seed ^ 0x5eed_0fc0_u64, trial);
    let base = SimConfig::new(n, cfg.t_step, cfg.k_gain, cfg.horizon).with_c(setup.c_weights.clone());
    let pass = |delays: &DelayMatrix, gv: &[f64], seed: u64| {
        simulate(&setup.digraph, delays, &base.clone().with_noise(noise, seed), gv)
    };
    let seeds: [u64; 3] = [noise_rng.random(), noise_rng.random(), noise_rng.random()];
    let ones = vec![1.0; n];
    let zero = DelayMatrix::zeros(n);
    let free = smoothed(&pass(&zero, &setup.g_values, seeds[0])?, cfg.smoothing);
    let raw = smoothed(&pass(&setup.delays, &setup.g_values, seeds[1])?, cfg.smoothing);
    let unit = smoothed(&pass(&setup.delays, &ones, seeds[2])?, cfg.smoothing);

    let estimate = |which: usize, k: usize, i: usize| -> f64 {
        let at = k * n + i;
        match which {
            0 => free[at],
            1 => raw[at],
            _ => raw[at] / unit[at],
        }
    };
    let sums = records
        .iter()
        .map(|&k| {
            let mut s = [(0.0, 0.0); 3];
            for (w, slot) in s.iter_mut().enumerate() {
                for i in 0..n {
                    let e = estimate(w, k, i);
                    slot.0 += e;
                    slot.1 += e * e;
                }
            }
            s
        })
        .collect();
    let last = cfg.horizon - 1;
    let final_values: [Vec<f64>; 3] = std::array::from_fn(|w| (0..n).map(|i| estimate(w, last, i)).collect());
    let final_means = std::array::from_fn(|w| final_values[w].iter().sum::<f64>() / n as f64);
    Ok(TrialOutcome {
        sums,
        ml: setup.ml,
        final_means,
        final_values,
    })
}

/// `per_trial` holds (sum, sum of squares) over the `n` nodes of each trial.
fn mean_std(per_trial: impl Iterator<Item = (f64, f64)> + Clone, n: usize) -> MeanStd {
    let (s, q, trials) = per_trial
        .clone()
        .fold((0.0, 0.0, 0.0), |(s, q, t), (a, b)| (s + a, q + b, t + 1.0));
    let count = trials * n as f64;
    let mean = s / count;
    let spread = (q / count - mean * mean).max(0.0).sqrt();
    let std = if trials > 1.0 {
        let dev: f64 = per_trial.map(|(a, _)| (a / n as f64 - mean).powi(2)).sum();
        (dev / trials).sqrt()
    } else {
        0.0
    };
    MeanStd { mean, std, spread }
}

fn mean_se(x: &[f64]) -> (f64, f64) {
    let m = x.len() as f64;
    let mean = x.iter().sum::<f64>() / m;
    if x.len() < 2 {
        return (mean, 0.0);
    }
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1.0);
    (mean, (var / m).sqrt())
}

fn variance(x: impl Iterator<Item = f64> + Clone) -> f64 {
    let (s, c) = x.clone().fold((0.0, 0.0), |(s, c), v| (s + v, c + 1.0));
    let mean = s / c;
    x.map(|v| (v - mean).powi(2)).sum::<f64>() / c
}

pub fn run_montecarlo(cfg: &MonteCarloConfig) -> Result<MonteCarloReport> {
    cfg.validate()?;
    let records = record_steps(cfg);
    let outcomes: Vec<TrialOutcome> = (0..cfg.trials)
        .into_par_iter()
        .map(|t| run_trial(cfg, t, &records))
        .collect::<Result<_>>()?;

    let n = cfg.n as f64;
    let ml_sum: f64 = outcomes.iter().map(|o| o.ml).sum();
    let ml_stat = mean_std(outcomes.iter().map(|o| (o.ml * n, o.ml * o.ml * n)), cfg.n);
    let curves = records
        .iter()
        .enumerate()
        .map(|(r, &k)| {
            let agg = |w: usize| mean_std(outcomes.iter().map(|o| o.sums[r][w]), cfg.n);
            CurveRow {
                step: k,
                t: k as f64 * cfg.t_step,
                ml: ml_stat,
                no_delay: agg(0),
                raw: agg(1),
                two_step: agg(2),
            }
        })
        .collect();

    let bias = |w: usize| {
        let d: Vec<f64> = outcomes.iter().map(|o| o.final_means[w] - o.ml).collect();
        mean_se(&d)
    };
    let (no_delay_bias, no_delay_bias_se) = bias(0);
    let (raw_bias, raw_bias_se) = bias(1);
    let (two_step_bias, two_step_bias_se) = bias(2);
    let var_of = |w: usize| variance(outcomes.iter().flat_map(move |o| o.final_values[w].iter().copied()));
    let ml_var = variance(outcomes.iter().flat_map(|o| std::iter::repeat_n(o.ml, cfg.n)));
    Ok(MonteCarloReport {
        config: cfg.clone(),
        coupling_noise_std: cfg.coupling_noise_std(),
        curves,
        summary: MonteCarloSummary {
            trials: cfg.trials,
            ml_mean: ml_sum / cfg.trials as f64,
            two_step_bias,
            two_step_bias_se,
            raw_bias,
            raw_bias_se,
            no_delay_bias,
            no_delay_bias_se,
            ml_var,
            two_step_var: var_of(2),
            raw_var: var_of(1),
            no_delay_var: var_of(0),
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> MonteCarloConfig {
        MonteCarloConfig {
            n: 6,
            trials: 3,
            horizon: 800,
            smoothing: 50,
            record_every: 100,
            ..Default::default()
        }
    }

    #[test]
    fn trial_setup_is_deterministic_and_hits_max_delay() {
        let cfg = small();
        let a = trial_setup(&cfg, 1).unwrap();
        let b = trial_setup(&cfg, 1).unwrap();
        assert_eq!(a.digraph, b.digraph);
        assert_eq!(a.g_values, b.g_values);
        assert!((a.delays.tau_max() - 0.1).abs() < 1e-12);
        assert_ne!(trial_setup(&cfg, 2).unwrap().g_values, a.g_values);
    }

    #[test]
    fn single_trial_has_zero_std() {
        let cfg = MonteCarloConfig { trials: 1, ..small() };
        let rep = run_montecarlo(&cfg).unwrap();
        for r in &rep.curves {
            assert_eq!([r.ml.std, r.no_delay.std, r.raw.std, r.two_step.std], [0.0; 4]);
            assert_eq!(r.ml.spread, 0.0);
        }
        let mut csv = Vec::new();
        rep.write_csv(&mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        let header: Vec<&str> = text.lines().next().unwrap().split(',').collect();
        assert_eq!(header.len(), 14);
        assert_eq!(text.lines().count(), rep.curves.len() + 1);
        assert_eq!(rep.summary.two_step_bias_se, 0.0);
        assert_eq!(rep.curves.last().unwrap().step, cfg.horizon - 1);
    }

    #[test]
    fn coupling_noise_level_from_snr() {
        let cfg = MonteCarloConfig {
            coupling_snr_db: Some(20.0),
            xi: 2.0,
            ..Default::default()
        };
        assert!((cfg.coupling_noise_std() - 0.2).abs() < 1e-15);
        assert_eq!(MonteCarloConfig::default().coupling_noise_std(), 0.0);
    }

    #[test]
    fn toml_overrides_defaults() {
        let cfg = MonteCarloConfig::from_toml("trials = 7\ncoupling_snr_db = 20.0\n").unwrap();
        assert_eq!(cfg.trials, 7);
        assert_eq!(cfg.n, MonteCarloConfig::default().n);
        assert!(matches!(
            MonteCarloConfig::from_toml("trails = 7"),
            Err(Error::Parse(_))
        ));
        assert!(matches!(
            MonteCarloConfig::from_toml("trials = 0"),
            Err(Error::InvalidParameter(_))
        ));
    }

    #[test]
    fn zero_trials_rejected() {
        assert!(run_montecarlo(&MonteCarloConfig { trials: 0, ..small() }).is_err());
    }
}
