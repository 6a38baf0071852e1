//! Euler–Maruyama simulation of the regularised controlled system
//!
//! ```text
//! X2+ = X2 + k (theta - X2) dt + sigma X2 / sqrt(|X2| + eps) dW2
//! u   = policy(t, X1, X2)
//! X1+ = X1 max(0, 1 + mu dt + sqrt(u max(X2, 0)) dW1)
//! ```
//!
//! with independent Brownian increments. Path `p` draws its increments from
//! a ChaCha8 stream keyed by `(seed, p)` (by `(seed, p / 2)` in antithetic
//! mode, where odd paths negate the increments of their even partner), so
//! batches are reproducible regardless of the rayon pool size and every
//! policy sees the same noise for the same path index.

use std::io::{self, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ControlBounds, InitialState, ModelError, ModelParams};
use crate::policy::{Policy, PolicyError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SdeError {
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
    #[error("configuration mismatch: {0}")]
    ConfigMismatch(String),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

fn default_epsilon() -> f64 {
    1e-6
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub n_paths: usize,
    pub n_steps: usize,
    /// Regularisation of the variance diffusion coefficient.
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub antithetic: bool,
}

impl SimConfig {
    pub fn new(n_paths: usize, n_steps: usize, seed: u64) -> Self {
        Self {
            n_paths,
            n_steps,
            epsilon: default_epsilon(),
            seed,
            antithetic: false,
        }
    }

    pub fn check(&self) -> Result<(), SdeError> {
        if self.n_paths == 0 || self.n_steps == 0 {
            return Err(SdeError::InvalidConfig(format!(
                "n_paths and n_steps must be at least 1 (got {} and {})",
                self.n_paths, self.n_steps
            )));
        }
        if !(self.epsilon > 0.0) {
            return Err(SdeError::InvalidConfig(format!(
                "epsilon must be positive (got {})",
                self.epsilon
            )));
        }
        Ok(())
    }

    pub fn dt(&self, horizon: f64) -> f64 {
        horizon / self.n_steps as f64
    }
}

/// Events where the scheme had to intervene.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ClampCounts {
    /// Steps where the `max(0, .)` guard on the `X1` growth factor fired.
    pub x1_guard: u64,
    /// Feedback evaluations whose state was clamped into the grid.
    pub grid: u64,
}

impl ClampCounts {
    fn add(&mut self, other: ClampCounts) {
        self.x1_guard += other.x1_guard;
        self.grid += other.grid;
    }
}

/// One simulated path; `x1` and `x2` have `n_steps + 1` entries, the
/// control and increments `n_steps`.
#[derive(Debug, Clone, PartialEq)]
pub struct Path {
    pub x1: Vec<f64>,
    pub x2: Vec<f64>,
    pub u: Vec<f64>,
    pub dw1: Vec<f64>,
    pub dw2: Vec<f64>,
    pub clamps: ClampCounts,
}

impl Path {
    pub fn n_steps(&self) -> usize {
        self.u.len()
    }
}

/// Full path ensemble.
#[derive(Debug, Clone)]
pub struct PathBatch {
    pub config: SimConfig,
    pub horizon: f64,
    pub policy: String,
    pub paths: Vec<Path>,
    pub clamps: ClampCounts,
}

impl PathBatch {
    pub fn dt(&self) -> f64 {
        self.config.dt(self.horizon)
    }

    /// CSV with header `path_id,step,t,x1,x2,u`; `u` is empty on the last step.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "path_id,step,t,x1,x2,u")?;
        let dt = self.dt();
        for (p, path) in self.paths.iter().enumerate() {
            for i in 0..=path.n_steps() {
                let t = if i == path.n_steps() {
                    self.horizon
                } else {
                    i as f64 * dt
                };
                write!(w, "{p},{i},{t:.16e},{:.16e},{:.16e},", path.x1[i], path.x2[i])?;
                match path.u.get(i) {
                    Some(u) => writeln!(w, "{u:.16e}")?,
                    None => writeln!(w)?,
                }
            }
        }
        Ok(())
    }
}

/// Brownian increments of path `index`, each `N(0, dt)`.
pub fn brownian_increments(sim: &SimConfig, index: usize, dt: f64) -> (Vec<f64>, Vec<f64>) {
    let (stream, sign) = if sim.antithetic {
        ((index / 2) as u64, if index % 2 == 1 { -1.0 } else { 1.0 })
    } else {
        (index as u64, 1.0)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(sim.seed);
    rng.set_stream(stream);
    let sd = dt.sqrt() * sign;
    let mut dw1 = Vec::with_capacity(sim.n_steps);
    let mut dw2 = Vec::with_capacity(sim.n_steps);
    for _ in 0..sim.n_steps {
        let z1: f64 = StandardNormal.sample(&mut rng);
        let z2: f64 = StandardNormal.sample(&mut rng);
        dw1.push(sd * z1);
        dw2.push(sd * z2);
    }
    (dw1, dw2)
}

/// Runs the scheme on explicit increments.
pub fn simulate_path_with_increments(
    model: &ModelParams,
    policy: &Policy,
    init: &InitialState,
    epsilon: f64,
    dt: f64,
    dw1: Vec<f64>,
    dw2: Vec<f64>,
) -> Result<Path, SdeError> {
    if dw1.len() != dw2.len() {
        return Err(SdeError::ConfigMismatch("increment arrays differ in length".into()));
    }
    let n = dw1.len();
    let ModelParams {
        mu, k, theta, sigma, ..
    } = *model;
    let mut x1 = Vec::with_capacity(n + 1);
    let mut x2 = Vec::with_capacity(n + 1);
    let mut u = Vec::with_capacity(n);
    let mut clamps = ClampCounts::default();
    let (mut a, mut v) = (init.x1, init.x2);
    x1.push(a);
    x2.push(v);
    for i in 0..n {
        let t = i as f64 * dt;
        let e = policy.evaluate_detailed(t, a, v)?;
        if e.clamped {
            clamps.grid += 1;
        }
        let growth = 1.0 + mu * dt + (e.u * v.max(0.0)).sqrt() * dw1[i];
        if growth < 0.0 {
            clamps.x1_guard += 1;
        }
        let v_next = v + k * (theta - v) * dt + sigma * v / (v.abs() + epsilon).sqrt() * dw2[i];
        a *= growth.max(0.0);
        v = v_next;
        u.push(e.u);
        x1.push(a);
        x2.push(v);
    }
    Ok(Path {
        x1,
        x2,
        u,
        dw1,
        dw2,
        clamps,
    })
}

fn preflight(
    model: &ModelParams,
    bounds: &ControlBounds,
    policy: &Policy,
    init: &InitialState,
    sim: &SimConfig,
) -> Result<(), SdeError> {
    sim.check()?;
    init.check()?;
    policy.check(bounds, model.horizon).map_err(|e| match e {
        PolicyError::OutOfHorizon { t, horizon } => {
            SdeError::ConfigMismatch(format!("policy horizon {t} does not match model horizon {horizon}"))
        }
        other => SdeError::Policy(other),
    })
}

fn simulate_index(
    model: &ModelParams,
    policy: &Policy,
    init: &InitialState,
    sim: &SimConfig,
    index: usize,
) -> Result<Path, SdeError> {
    let dt = sim.dt(model.horizon);
    let (dw1, dw2) = brownian_increments(sim, index, dt);
    simulate_path_with_increments(model, policy, init, sim.epsilon, dt, dw1, dw2)
}

/// Simulates and keeps every path.
pub fn simulate(
    model: &ModelParams,
    bounds: &ControlBounds,
    policy: &Policy,
    init: &InitialState,
    sim: &SimConfig,
) -> Result<PathBatch, SdeError> {
    preflight(model, bounds, policy, init, sim)?;
    let paths = (0..sim.n_paths)
        .into_par_iter()
        .map(|p| simulate_index(model, policy, init, sim, p))
        .collect::<Result<Vec<_>, _>>()?;
    let mut clamps = ClampCounts::default();
    for p in &paths {
        clamps.add(p.clamps);
    }
    Ok(PathBatch {
        config: *sim,
        horizon: model.horizon,
        policy: policy.label(),
        paths,
        clamps,
    })
}

/// Simulates path by path, keeping only `f(path)`; results are in path order.
pub fn simulate_each<T, F>(
    model: &ModelParams,
    bounds: &ControlBounds,
    policy: &Policy,
    init: &InitialState,
    sim: &SimConfig,
    f: F,
) -> Result<(Vec<T>, ClampCounts), SdeError>
where
    T: Send,
    F: Fn(&Path) -> T + Sync,
{
    preflight(model, bounds, policy, init, sim)?;
    let out = (0..sim.n_paths)
        .into_par_iter()
        .map(|p| simulate_index(model, policy, init, sim, p).map(|path| (f(&path), path.clamps)))
        .collect::<Result<Vec<_>, _>>()?;
    let mut clamps = ClampCounts::default();
    let values = out
        .into_iter()
        .map(|(v, c)| {
            clamps.add(c);
            v
        })
        .collect();
    Ok((values, clamps))
}

/// `X1(t_i) = X1(0) exp(sum_{j<i} (mu - u_j X2_j^+ / 2) dt + sum_{j<i} sqrt(u_j X2_j^+) dW1_j)`,
/// with `X2^+ = max(X2, 0)` as in the simulator.
pub fn x1_exponential_oracle(x2: &[f64], u: &[f64], dw1: &[f64], model: &ModelParams, x1_0: f64, dt: f64) -> Vec<f64> {
    let n = u.len().min(dw1.len()).min(x2.len());
    let mut out = Vec::with_capacity(n + 1);
    let mut log_growth = 0.0;
    out.push(x1_0);
    for j in 0..n {
        let s2 = u[j] * x2[j].max(0.0);
        log_growth += (model.mu - 0.5 * s2) * dt + s2.sqrt() * dw1[j];
        out.push(x1_0 * log_growth.exp());
    }
    out
}

/// Per-path statistics used by [`BatchSummary`] and [`PositivityReport`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathStats {
    pub x1_terminal: f64,
    pub x2_terminal: f64,
    /// `max_t (X1^2 + X2^2)`.
    pub sup_square: f64,
    /// `max_t ((X2)^-)^2`.
    pub max_negative_square: f64,
    pub negative_samples: usize,
    pub samples: usize,
    pub min_x2: f64,
    pub clamps: ClampCounts,
}

impl PathStats {
    pub fn of(path: &Path) -> Self {
        let mut sup_square: f64 = 0.0;
        let mut max_neg: f64 = 0.0;
        let mut negative = 0;
        let mut min_x2 = f64::INFINITY;
        for (&a, &v) in path.x1.iter().zip(&path.x2) {
            sup_square = sup_square.max(a * a + v * v);
            if v < 0.0 {
                negative += 1;
                max_neg = max_neg.max(v * v);
            }
            min_x2 = min_x2.min(v);
        }
        Self {
            x1_terminal: *path.x1.last().expect("paths are non-empty"),
            x2_terminal: *path.x2.last().expect("paths are non-empty"),
            sup_square,
            max_negative_square: max_neg,
            negative_samples: negative,
            samples: path.x2.len(),
            min_x2,
            clamps: path.clamps,
        }
    }
}

/// Negativity diagnostics of the variance component.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PositivityReport {
    /// Fraction of `(path, step)` samples with `X2 < 0`.
    pub negative_fraction: f64,
    /// Batch mean of `max_t ((X2)^-)^2`.
    pub mean_max_negative_square: f64,
    pub min_x2: f64,
    pub min_x1: f64,
    pub clamps: ClampCounts,
}

impl PositivityReport {
    pub fn from_stats(stats: &[PathStats]) -> Self {
        let samples: usize = stats.iter().map(|s| s.samples).sum();
        let negative: usize = stats.iter().map(|s| s.negative_samples).sum();
        let mut clamps = ClampCounts::default();
        for s in stats {
            clamps.add(s.clamps);
        }
        Self {
            negative_fraction: negative as f64 / samples.max(1) as f64,
            mean_max_negative_square: stats.iter().map(|s| s.max_negative_square).sum::<f64>()
                / stats.len().max(1) as f64,
            min_x2: stats.iter().map(|s| s.min_x2).fold(f64::INFINITY, f64::min),
            min_x1: 0.0,
            clamps,
        }
    }
}

pub fn positivity_report(batch: &PathBatch) -> PositivityReport {
    let stats: Vec<PathStats> = batch.paths.iter().map(PathStats::of).collect();
    let mut report = PositivityReport::from_stats(&stats);
    report.min_x1 = batch
        .paths
        .iter()
        .flat_map(|p| p.x1.iter().copied())
        .fold(f64::INFINITY, f64::min);
    report
}

/// Streaming positivity report; nothing but per-path statistics is kept.
pub fn positivity_report_streaming(
    model: &ModelParams,
    bounds: &ControlBounds,
    policy: &Policy,
    init: &InitialState,
    sim: &SimConfig,
) -> Result<PositivityReport, SdeError> {
    let (stats, _) = simulate_each(model, bounds, policy, init, sim, |p| {
        (PathStats::of(p), p.x1.iter().copied().fold(f64::INFINITY, f64::min))
    })?;
    let min_x1 = stats.iter().map(|s| s.1).fold(f64::INFINITY, f64::min);
    let stats: Vec<PathStats> = stats.into_iter().map(|s| s.0).collect();
    let mut report = PositivityReport::from_stats(&stats);
    report.min_x1 = min_x1;
    Ok(report)
}

/// Mean with its standard error (`n - 1` denominator).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeanEstimate {
    pub mean: f64,
    pub std_error: f64,
}

impl MeanEstimate {
    pub fn of(values: impl IntoIterator<Item = f64>) -> Self {
        let values: Vec<f64> = values.into_iter().collect();
        let n = values.len();
        if n == 0 {
            return Self {
                mean: f64::NAN,
                std_error: f64::NAN,
            };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std_error = if n > 1 {
            let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        } else {
            0.0
        };
        Self { mean, std_error }
    }
}

/// Batch summary written by the `simulate` command.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BatchSummary {
    pub policy: String,
    pub n_paths: usize,
    pub n_steps: usize,
    pub dt: f64,
    pub seed: u64,
    pub antithetic: bool,
    pub x1_terminal: MeanEstimate,
    pub x2_terminal: MeanEstimate,
    pub x1_terminal_square: MeanEstimate,
    /// `E max_t (X1^2 + X2^2)`.
    pub sup_square: MeanEstimate,
    pub positivity: PositivityReport,
}

impl BatchSummary {
    pub fn from_stats(policy: String, sim: &SimConfig, horizon: f64, stats: &[PathStats]) -> Self {
        Self {
            policy,
            n_paths: stats.len(),
            n_steps: sim.n_steps,
            dt: sim.dt(horizon),
            seed: sim.seed,
            antithetic: sim.antithetic,
            x1_terminal: MeanEstimate::of(stats.iter().map(|s| s.x1_terminal)),
            x2_terminal: MeanEstimate::of(stats.iter().map(|s| s.x2_terminal)),
            x1_terminal_square: MeanEstimate::of(stats.iter().map(|s| s.x1_terminal * s.x1_terminal)),
            sup_square: MeanEstimate::of(stats.iter().map(|s| s.sup_square)),
            positivity: PositivityReport::from_stats(stats),
        }
    }

    pub fn of_batch(batch: &PathBatch) -> Self {
        let stats: Vec<PathStats> = batch.paths.iter().map(PathStats::of).collect();
        let mut s = Self::from_stats(batch.policy.clone(), &batch.config, batch.horizon, &stats);
        s.positivity = positivity_report(batch);
        s
    }
}

/// Streaming [`BatchSummary`].
pub fn summarize(
    model: &ModelParams,
    bounds: &ControlBounds,
    policy: &Policy,
    init: &InitialState,
    sim: &SimConfig,
) -> Result<BatchSummary, SdeError> {
    let (stats, _) = simulate_each(model, bounds, policy, init, sim, |p| {
        (PathStats::of(p), p.x1.iter().copied().fold(f64::INFINITY, f64::min))
    })?;
    let min_x1 = stats.iter().map(|s| s.1).fold(f64::INFINITY, f64::min);
    let stats: Vec<PathStats> = stats.into_iter().map(|s| s.0).collect();
    let mut summary = BatchSummary::from_stats(policy.label(), sim, model.horizon, &stats);
    summary.positivity.min_x1 = min_x1;
    Ok(summary)
}
