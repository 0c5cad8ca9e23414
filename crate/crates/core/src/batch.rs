//! Building a location's mixture from scratch: mean shift on the cylinder
//! picks the number of modes and their seeds, then EM refines them.

use std::f64::consts::TAU;

use nalgebra::{Matrix2, Vector2};

use crate::error::{Error, Result};
use crate::online::{responsibilities, stats_from_responsibilities, CellState, SufficientStats};
use crate::swgmm::{angle_diff, circular_mean, wrap_angle, Component, Swgmm, Swnd, Velocity};

#[derive(Debug, Clone, PartialEq)]
pub struct MeanShiftConfig {
    /// Kernel bandwidth along the direction axis, radians.
    pub bandwidth_theta: f64,
    /// Kernel bandwidth along the speed axis, m/s.
    pub bandwidth_rho: f64,
    pub convergence_eps: f64,
    pub max_iter: usize,
    /// Converged points closer than this (per axis) are the same mode.
    pub merge_theta: f64,
    pub merge_rho: f64,
    /// Above this many observations, ascents start from occupied-bin
    /// centroids instead of from every observation.
    pub bin_seed_threshold: usize,
}

impl Default for MeanShiftConfig {
    fn default() -> Self {
        MeanShiftConfig {
            bandwidth_theta: 0.7,
            bandwidth_rho: 0.4,
            convergence_eps: 1e-5,
            max_iter: 100,
            merge_theta: 0.35,
            merge_rho: 0.2,
            bin_seed_threshold: 256,
        }
    }
}

impl MeanShiftConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("bandwidth_theta", self.bandwidth_theta),
            ("bandwidth_rho", self.bandwidth_rho),
            ("convergence_eps", self.convergence_eps),
            ("merge_theta", self.merge_theta),
            ("merge_rho", self.merge_rho),
        ];
        if let Some((name, value)) = positive.iter().find(|(_, x)| !(*x > 0.0)) {
            return Err(Error::param(format!(
                "mean shift {name} must be positive, got {value}"
            )));
        }
        if self.max_iter == 0 {
            return Err(Error::param("mean shift max_iter must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmConfig {
    /// Stop when the mean per-observation log-likelihood changes by less than this.
    pub convergence_eps: f64,
    pub max_iter: usize,
    /// Components whose responsibility mass falls below `min_weight · N` are pruned.
    pub min_weight: f64,
    /// Initial component standard deviations `(θ, ρ)`.
    pub init_std: (f64, f64),
}

impl Default for EmConfig {
    fn default() -> Self {
        EmConfig {
            convergence_eps: 1e-5,
            max_iter: 100,
            min_weight: 1e-4,
            init_std: (0.7, 0.4),
        }
    }
}

impl EmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.convergence_eps > 0.0) || self.max_iter == 0 {
            return Err(Error::param(
                "EM needs a positive tolerance and at least one iteration",
            ));
        }
        if !(0.0..1.0).contains(&self.min_weight) {
            return Err(Error::param(format!(
                "EM min_weight must be in [0, 1), got {}",
                self.min_weight
            )));
        }
        if !(self.init_std.0 > 0.0 && self.init_std.1 > 0.0) {
            return Err(Error::param(
                "EM initial standard deviations must be positive",
            ));
        }
        Ok(())
    }
}

/// Result of mean shift: modes ordered by support, plus each observation's mode.
#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    pub modes: Vec<Mode>,
    /// `labels[i]` indexes into `modes`.
    pub labels: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mode {
    pub center: Velocity,
    pub members: usize,
}

/// Mode centers found by mean shift, most supported first.
pub fn mean_shift_modes(obs: &[Velocity], cfg: &MeanShiftConfig) -> Result<Vec<Velocity>> {
    Ok(mean_shift_clusters(obs, cfg)?
        .modes
        .into_iter()
        .map(|m| m.center)
        .collect())
}

/// Gaussian-kernel mean shift on the cylinder.
pub fn mean_shift_clusters(obs: &[Velocity], cfg: &MeanShiftConfig) -> Result<Clustering> {
    if obs.is_empty() {
        return Err(Error::NoObservations);
    }
    cfg.validate()?;

    let binned = obs.len() > cfg.bin_seed_threshold;
    let starts = if binned {
        bin_seeds(obs, cfg)
    } else {
        obs.to_vec()
    };

    // (center, members, first-seen order)
    let mut found: Vec<(Velocity, usize)> = Vec::new();
    let mut start_label = Vec::with_capacity(starts.len());
    for s in &starts {
        let c = ascend(*s, obs, cfg);
        let hit = found.iter().position(|(m, _)| {
            angle_diff(c.theta(), m.theta()).abs() <= cfg.merge_theta
                && (c.rho() - m.rho()).abs() <= cfg.merge_rho
        });
        let idx = hit.unwrap_or_else(|| {
            found.push((c, 0));
            found.len() - 1
        });
        start_label.push(idx);
    }

    let raw_labels: Vec<usize> = if binned {
        obs.iter().map(|y| nearest_mode(y, &found, cfg)).collect()
    } else {
        start_label
    };
    for &l in &raw_labels {
        found[l].1 += 1;
    }

    let mut order: Vec<usize> = (0..found.len()).filter(|&k| found[k].1 > 0).collect();
    order.sort_by(|&a, &b| found[b].1.cmp(&found[a].1).then(a.cmp(&b)));
    let mut remap = vec![usize::MAX; found.len()];
    for (new, &old) in order.iter().enumerate() {
        remap[old] = new;
    }
    Ok(Clustering {
        modes: order
            .iter()
            .map(|&k| Mode {
                center: found[k].0,
                members: found[k].1,
            })
            .collect(),
        labels: raw_labels.iter().map(|&l| remap[l]).collect(),
    })
}

fn kernel(y: &Velocity, at: &Velocity, cfg: &MeanShiftConfig) -> f64 {
    let dt = angle_diff(y.theta(), at.theta()) / cfg.bandwidth_theta;
    let dr = (y.rho() - at.rho()) / cfg.bandwidth_rho;
    (-0.5 * (dt * dt + dr * dr)).exp()
}

fn ascend(start: Velocity, obs: &[Velocity], cfg: &MeanShiftConfig) -> Velocity {
    let mut at = start;
    for _ in 0..cfg.max_iter {
        let weights: Vec<f64> = obs.iter().map(|y| kernel(y, &at, cfg)).collect();
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            break;
        }
        let theta = circular_mean(obs.iter().zip(&weights).map(|(y, &w)| (y.theta(), w)));
        let rho = obs
            .iter()
            .zip(&weights)
            .map(|(y, w)| w * y.rho())
            .sum::<f64>()
            / total;
        let next = Velocity::clamped(theta, rho);
        let done = angle_diff(next.theta(), at.theta()).abs() < cfg.convergence_eps
            && (next.rho() - at.rho()).abs() < cfg.convergence_eps;
        at = next;
        if done {
            break;
        }
    }
    at
}

fn bin_seeds(obs: &[Velocity], cfg: &MeanShiftConfig) -> Vec<Velocity> {
    let width_t = 0.5 * cfg.bandwidth_theta;
    let width_r = 0.5 * cfg.bandwidth_rho;
    let n_theta = (TAU / width_t).ceil() as i64;
    let mut bins: Vec<((i64, i64), Vec<Velocity>)> = Vec::new();
    let mut index = std::collections::HashMap::new();
    for y in obs {
        let key = (
            ((y.theta() / width_t).floor() as i64).rem_euclid(n_theta),
            (y.rho() / width_r).floor() as i64,
        );
        let slot = *index.entry(key).or_insert_with(|| {
            bins.push((key, Vec::new()));
            bins.len() - 1
        });
        bins[slot].1.push(*y);
    }
    bins.iter()
        .map(|(_, pts)| {
            let theta = circular_mean(pts.iter().map(|p| (p.theta(), 1.0)));
            let rho = pts.iter().map(|p| p.rho()).sum::<f64>() / pts.len() as f64;
            Velocity::clamped(theta, rho)
        })
        .collect()
}

fn nearest_mode(y: &Velocity, modes: &[(Velocity, usize)], cfg: &MeanShiftConfig) -> usize {
    let mut best = (f64::INFINITY, 0);
    for (k, (m, _)) in modes.iter().enumerate() {
        let dt = angle_diff(y.theta(), m.theta()) / cfg.bandwidth_theta;
        let dr = (y.rho() - m.rho()) / cfg.bandwidth_rho;
        let d = dt * dt + dr * dr;
        if d < best.0 {
            best = (d, k);
        }
    }
    best.1
}

/// Output of [`em_fit`].
#[derive(Debug, Clone)]
pub struct EmFit {
    pub model: Swgmm,
    /// Batch-averaged statistics of the data under the final model.
    pub stats: Vec<SufficientStats>,
    /// Mean log-likelihood before each M-step, then of the final model.
    pub log_likelihood: Vec<f64>,
    /// Trace indices `t` such that components were pruned between `t` and `t + 1`.
    pub prunes: Vec<usize>,
    pub iterations: usize,
    pub converged: bool,
}

impl EmFit {
    pub fn final_log_likelihood(&self) -> f64 {
        *self.log_likelihood.last().expect("trace is never empty")
    }
}

/// One EM iteration: E-step under `model`, then the weighted M-step over
/// unwrapped winding copies. Returns the new model, the mean log-likelihood
/// of `model`, and whether a component was pruned.
pub fn em_step(model: &Swgmm, obs: &[Velocity], cfg: &EmConfig) -> Result<(Swgmm, f64, bool)> {
    let resp = responsibilities(model, obs)?;
    let n = obs.len() as f64;
    let mut components = Vec::with_capacity(model.len());
    for j in 0..model.len() {
        let mass: f64 = (0..obs.len()).map(|i| resp.eta(i, j)).sum();
        if mass < cfg.min_weight * n || mass <= 0.0 {
            continue;
        }
        let mean = resp
            .weighted_copies(obs, j)
            .fold(Vector2::zeros(), |acc: Vector2<f64>, (w, y)| acc + y * w)
            / mass;
        let cov =
            resp.weighted_copies(obs, j)
                .fold(Matrix2::zeros(), |acc: Matrix2<f64>, (w, y)| {
                    let d = y - mean;
                    acc + d * d.transpose() * w
                })
                / mass;
        components.push(Component {
            weight: mass / n,
            dist: Swnd::new(wrap_angle(mean.x), mean.y, cov)?,
        });
    }
    if components.is_empty() {
        return Err(Error::StatisticsCollapsed);
    }
    let pruned = components.len() < model.len();
    Ok((
        Swgmm::normalized(components)?,
        resp.mean_log_likelihood(),
        pruned,
    ))
}

/// Fits a mixture with one initial component per seed.
pub fn em_fit(obs: &[Velocity], seeds: &[Velocity], cfg: &EmConfig) -> Result<EmFit> {
    if obs.is_empty() || seeds.is_empty() {
        return Err(Error::NoObservations);
    }
    cfg.validate()?;
    let init_cov = Matrix2::new(cfg.init_std.0.powi(2), 0.0, 0.0, cfg.init_std.1.powi(2));
    let w = 1.0 / seeds.len() as f64;
    let components = seeds
        .iter()
        .map(|s| {
            Ok(Component {
                weight: w,
                dist: Swnd::new(s.theta(), s.rho(), init_cov)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut model = Swgmm::normalized(components)?;

    let mut trace = Vec::new();
    let mut prunes = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    while iterations < cfg.max_iter {
        let (next, ll, pruned) = em_step(&model, obs, cfg)?;
        if pruned {
            prunes.push(trace.len());
        }
        trace.push(ll);
        model = next;
        iterations += 1;
        if let [.., prev, last] = trace[..] {
            if (last - prev).abs() < cfg.convergence_eps {
                converged = true;
                break;
            }
        }
    }
    let resp = responsibilities(&model, obs)?;
    trace.push(resp.mean_log_likelihood());
    Ok(EmFit {
        stats: stats_from_responsibilities(&resp, obs),
        model,
        log_likelihood: trace,
        prunes,
        iterations,
        converged,
    })
}

/// Builds a fresh cell: mean shift for the seeds, EM to convergence, and the
/// final batch statistics as the initial sufficient statistics.
pub fn build_cell(obs: &[Velocity], ms: &MeanShiftConfig, em: &EmConfig) -> Result<CellState> {
    if obs.is_empty() {
        return Err(Error::NoObservations);
    }
    let seeds = mean_shift_modes(obs, ms)?;
    let cfg = EmConfig {
        init_std: (ms.bandwidth_theta, ms.bandwidth_rho),
        ..em.clone()
    };
    let fit = em_fit(obs, &seeds, &cfg)?;
    CellState::new(fit.model, fit.stats, obs.len() as f64, 0)
}
