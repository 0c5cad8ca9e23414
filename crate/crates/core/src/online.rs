//! Stochastic-EM update of one location's mixture from a new observation batch.
//!
//! Each cell carries, next to its mixture, one sufficient-statistics triple
//! per component: the responsibility mass `s1`, the first moment `s2` and the
//! second moment `s3`, all averaged over observations. A new batch contributes
//! its own averaged statistics, which are blended in with the stepsize
//! `γ = N_k / N_ind` where `N_ind` is an exponentially decayed observation
//! count. Parameters are then re-derived from the blended statistics.
//!
//! Moments are taken over unwrapped angles: an observation contributes each
//! of its winding copies `θ + 2πw` weighted by that copy's posterior, so a
//! component straddling `0 = 2π` keeps a contiguous first moment. After every
//! M-step the statistics are re-expressed in the frame where the component
//! mean lies in `[0, 2π)`, so that later batches (whose moments are computed
//! around that mean) blend with them consistently.

use std::f64::consts::TAU;

use nalgebra::{Matrix2, Vector2};

use crate::batch::{mean_shift_clusters, MeanShiftConfig};
use crate::error::{Error, Result};
use crate::swgmm::{angle_diff, Component, Swgmm, Swnd, Velocity, WINDINGS};

/// Components whose blended responsibility mass drops below this are removed.
pub const PRUNE_THRESHOLD: f64 = 1e-6;

/// Per-component sufficient statistics, averaged over observations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SufficientStats {
    pub s1: f64,
    pub s2: Vector2<f64>,
    pub s3: Matrix2<f64>,
}

impl SufficientStats {
    pub fn zero() -> Self {
        SufficientStats {
            s1: 0.0,
            s2: Vector2::zeros(),
            s3: Matrix2::zeros(),
        }
    }

    /// Statistics of a component with the given weight, mean and covariance.
    pub fn from_moments(weight: f64, mean: Vector2<f64>, cov: &Matrix2<f64>) -> Self {
        SufficientStats {
            s1: weight,
            s2: mean * weight,
            s3: (cov + mean * mean.transpose()) * weight,
        }
    }

    pub fn scaled(&self, f: f64) -> Self {
        SufficientStats {
            s1: self.s1 * f,
            s2: self.s2 * f,
            s3: self.s3 * f,
        }
    }

    /// Re-expresses the moments for angles shifted by `delta`.
    pub fn shift_theta(&self, delta: f64) -> Self {
        let (s1, s2, s3) = (self.s1, self.s2, self.s3);
        let tt = s3[(0, 0)] + 2.0 * delta * s2.x + delta * delta * s1;
        let tr = s3[(0, 1)] + delta * s2.y;
        SufficientStats {
            s1,
            s2: Vector2::new(s2.x + delta * s1, s2.y),
            s3: Matrix2::new(tt, tr, tr, s3[(1, 1)]),
        }
    }

    /// Mean implied by the statistics, in the statistics' own angular frame.
    pub fn mean(&self) -> Vector2<f64> {
        self.s2 / self.s1
    }

    fn accumulate(&mut self, weight: f64, y: Vector2<f64>) {
        self.s1 += weight;
        self.s2 += y * weight;
        self.s3 += y * y.transpose() * weight;
    }
}

/// Stepsize and decay configuration for online updates.
#[derive(Debug, Clone, PartialEq)]
pub struct UpdateConfig {
    /// Forgetting factor on the effective observation count, in `(0, 1)`.
    pub decay_lambda: f64,
    /// A batch whose mean mixture density is below this spawns new components.
    pub eta_thres: f64,
    /// Observations whose best single-component density is below this are
    /// considered unexplained and seed the new components.
    pub spawn_fit_cutoff: f64,
    pub spawn_mean_shift: MeanShiftConfig,
    pub spawn_covariance: SpawnCovariance,
}

/// How the covariance of a freshly spawned component is initialized.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpawnCovariance {
    /// Scatter of the observations assigned to the new mode.
    ClusterMoments,
    /// Diagonal from the spawn mean-shift bandwidths.
    Bandwidth,
}

impl Default for UpdateConfig {
    fn default() -> Self {
        UpdateConfig {
            decay_lambda: 0.5,
            eta_thres: 0.1,
            spawn_fit_cutoff: 0.1,
            spawn_mean_shift: MeanShiftConfig::default(),
            spawn_covariance: SpawnCovariance::ClusterMoments,
        }
    }
}

impl UpdateConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.decay_lambda > 0.0 && self.decay_lambda < 1.0) {
            return Err(Error::param(format!(
                "decay_lambda must be in (0, 1), got {}",
                self.decay_lambda
            )));
        }
        if !(self.eta_thres > 0.0) {
            return Err(Error::param(format!(
                "eta_thres must be positive, got {}",
                self.eta_thres
            )));
        }
        if !(self.spawn_fit_cutoff > 0.0) {
            return Err(Error::param("spawn_fit_cutoff must be positive"));
        }
        self.spawn_mean_shift.validate()
    }
}

/// A location's model together with the state the online update needs.
#[derive(Debug, Clone, PartialEq)]
pub struct CellState {
    pub model: Swgmm,
    /// Index-aligned with `model.components()`.
    pub stats: Vec<SufficientStats>,
    /// Decayed observation count.
    pub n_ind: f64,
    pub last_update_iter: u64,
}

impl CellState {
    pub fn new(
        model: Swgmm,
        stats: Vec<SufficientStats>,
        n_ind: f64,
        last_update_iter: u64,
    ) -> Result<Self> {
        let cell = CellState {
            model,
            stats,
            n_ind,
            last_update_iter,
        };
        cell.check()?;
        Ok(cell)
    }

    pub fn check(&self) -> Result<()> {
        if self.stats.len() != self.model.len() {
            return Err(Error::ComponentMismatch {
                expected: self.model.len(),
                found: self.stats.len(),
            });
        }
        if !(self.n_ind > 0.0) || !self.n_ind.is_finite() {
            return Err(Error::InvalidModel(format!(
                "n_ind must be positive, got {}",
                self.n_ind
            )));
        }
        if self
            .stats
            .iter()
            .any(|s| !(s.s1 >= 0.0) || s.s2.iter().chain(s.s3.iter()).any(|x| !x.is_finite()))
        {
            return Err(Error::InvalidModel("invalid sufficient statistics".into()));
        }
        Ok(())
    }
}

/// Posterior responsibilities of every component for every observation.
#[derive(Debug, Clone)]
pub struct Responsibilities {
    n_components: usize,
    /// `N × J`, row-major; rows sum to one.
    eta: Vec<f64>,
    /// Per `(i, j)`: posterior over the windings `-1, 0, 1`.
    winding: Vec<[f64; 3]>,
    /// Unnormalized mixture density `Σ_j m_j N^SW_j(y_i)` per observation.
    density: Vec<f64>,
}

impl Responsibilities {
    pub fn n_components(&self) -> usize {
        self.n_components
    }

    pub fn n_obs(&self) -> usize {
        self.density.len()
    }

    pub fn eta(&self, i: usize, j: usize) -> f64 {
        self.eta[i * self.n_components + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.eta[i * self.n_components..(i + 1) * self.n_components]
    }

    pub fn winding(&self, i: usize, j: usize) -> [f64; 3] {
        self.winding[i * self.n_components + j]
    }

    pub fn density(&self, i: usize) -> f64 {
        self.density[i]
    }

    /// Observations for which every component density underflowed.
    pub fn unexplained(&self) -> impl Iterator<Item = usize> + '_ {
        self.density
            .iter()
            .enumerate()
            .filter(|(_, d)| **d <= 0.0)
            .map(|(i, _)| i)
    }

    /// Mean per-observation log-likelihood; underflowed rows count as the
    /// smallest positive double.
    pub fn mean_log_likelihood(&self) -> f64 {
        let n = self.density.len() as f64;
        self.density
            .iter()
            .map(|d| d.max(f64::MIN_POSITIVE).ln())
            .sum::<f64>()
            / n
    }

    /// `Σ_w η_{i,j,w} · (θ_i + 2πw, ρ_i)` split into its winding copies.
    pub(crate) fn weighted_copies<'a>(
        &'a self,
        obs: &'a [Velocity],
        j: usize,
    ) -> impl Iterator<Item = (f64, Vector2<f64>)> + 'a {
        obs.iter().enumerate().flat_map(move |(i, y)| {
            let eta = self.eta(i, j);
            let post = self.winding(i, j);
            WINDINGS
                .iter()
                .zip(post)
                .filter(move |(_, p)| eta * p > 0.0)
                .map(move |(&w, p)| (eta * p, Vector2::new(y.theta() + TAU * w as f64, y.rho())))
        })
    }
}

/// E-step: responsibilities over components and windings.
pub fn responsibilities(model: &Swgmm, obs: &[Velocity]) -> Result<Responsibilities> {
    if obs.is_empty() {
        return Err(Error::NoObservations);
    }
    let nj = model.len();
    let mut eta = Vec::with_capacity(obs.len() * nj);
    let mut winding = Vec::with_capacity(obs.len() * nj);
    let mut density = Vec::with_capacity(obs.len());
    let mut terms = vec![[0.0f64; 3]; nj];
    for y in obs {
        let mut total = 0.0;
        for (t, c) in terms.iter_mut().zip(model.components()) {
            *t = c.dist.winding_terms(y).map(|d| c.weight * d);
            total += t.iter().sum::<f64>();
        }
        density.push(total);
        if total > 0.0 && total.is_finite() {
            for (t, c) in terms.iter().zip(model.components()) {
                let mass: f64 = t.iter().sum();
                eta.push(mass / total);
                winding.push(if mass > 0.0 {
                    t.map(|x| x / mass)
                } else {
                    nearest_winding(&c.dist, y)
                });
            }
        } else {
            for c in model.components() {
                eta.push(1.0 / nj as f64);
                winding.push(nearest_winding(&c.dist, y));
            }
        }
    }
    Ok(Responsibilities {
        n_components: nj,
        eta,
        winding,
        density,
    })
}

fn nearest_winding(dist: &Swnd, y: &Velocity) -> [f64; 3] {
    let target = dist.nearest_unwrapped(y);
    let w = ((target - y.theta()) / TAU).round().clamp(-1.0, 1.0) as i32;
    let mut post = [0.0; 3];
    post[(w + 1) as usize] = 1.0;
    post
}

/// Batch-averaged sufficient statistics of `obs` under `model`.
pub fn batch_stats(model: &Swgmm, obs: &[Velocity]) -> Result<Vec<SufficientStats>> {
    let resp = responsibilities(model, obs)?;
    Ok(stats_from_responsibilities(&resp, obs))
}

pub(crate) fn stats_from_responsibilities(
    resp: &Responsibilities,
    obs: &[Velocity],
) -> Vec<SufficientStats> {
    let inv_n = 1.0 / obs.len() as f64;
    (0..resp.n_components())
        .map(|j| {
            let mut acc = SufficientStats::zero();
            for (w, y) in resp.weighted_copies(obs, j) {
                acc.accumulate(w, y);
            }
            acc.scaled(inv_n)
        })
        .collect()
}

/// Stepsize `γ = N_k / N_ind` with `N_ind ← λ N_ind + N_k`.
///
/// Returns `(γ, N_ind)`. A batch with no observations has no stepsize; the
/// caller must leave the cell untouched.
pub fn stepsize(n_k: usize, n_ind_prev: f64, lambda: f64) -> Result<(f64, f64)> {
    if n_k == 0 {
        return Err(Error::NoObservations);
    }
    if !(n_ind_prev > 0.0) {
        return Err(Error::param(format!(
            "n_ind must be positive, got {n_ind_prev}"
        )));
    }
    if !(lambda > 0.0 && lambda < 1.0) {
        return Err(Error::param(format!(
            "decay rate must be in (0, 1), got {lambda}"
        )));
    }
    let n_ind = lambda * n_ind_prev + n_k as f64;
    Ok((n_k as f64 / n_ind, n_ind))
}

/// sE-step: `ŝ_k = ŝ_{k-1} + γ (S_k - ŝ_{k-1})`, per component and partition.
pub fn se_step(
    prev: &[SufficientStats],
    batch: &[SufficientStats],
    gamma: f64,
) -> Result<Vec<SufficientStats>> {
    if prev.len() != batch.len() {
        return Err(Error::ComponentMismatch {
            expected: prev.len(),
            found: batch.len(),
        });
    }
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(Error::param(format!(
            "stepsize must be in (0, 1], got {gamma}"
        )));
    }
    Ok(prev
        .iter()
        .zip(batch)
        .map(|(p, b)| SufficientStats {
            s1: p.s1 + gamma * (b.s1 - p.s1),
            s2: p.s2 + (b.s2 - p.s2) * gamma,
            s3: p.s3 + (b.s3 - p.s3) * gamma,
        })
        .collect())
}

/// M-step: mixture parameters from sufficient statistics.
///
/// Components with `s1` below [`PRUNE_THRESHOLD`] are dropped and the rest
/// renormalized. Returns the mixture and the surviving statistics,
/// renormalized and shifted into the frame of each wrapped mean.
pub fn m_step(stats: &[SufficientStats]) -> Result<(Swgmm, Vec<SufficientStats>)> {
    let kept: Vec<&SufficientStats> = stats.iter().filter(|s| s.s1 >= PRUNE_THRESHOLD).collect();
    if kept.is_empty() {
        return Err(Error::StatisticsCollapsed);
    }
    let total: f64 = kept.iter().map(|s| s.s1).sum();
    let mut components = Vec::with_capacity(kept.len());
    let mut out = Vec::with_capacity(kept.len());
    for s in kept {
        let mut s = s.scaled(1.0 / total);
        let mut mean = s.mean();
        let turns = (mean.x / TAU).floor();
        if turns != 0.0 {
            s = s.shift_theta(-turns * TAU);
            mean = s.mean();
        }
        let cov = s.s3 / s.s1 - mean * mean.transpose();
        let dist = Swnd::new(mean.x, mean.y, cov)?;
        components.push(Component { weight: s.s1, dist });
        out.push(s);
    }
    Ok((Swgmm::normalized(components)?, out))
}

/// Mean mixture density of the batch; low values mean the model does not explain it.
pub fn batch_fit(model: &Swgmm, obs: &[Velocity]) -> f64 {
    obs.iter().map(|y| model.pdf(y)).sum::<f64>() / obs.len().max(1) as f64
}

/// True when the batch is poorly explained and new components should be added.
pub fn needs_spawn(model: &Swgmm, obs: &[Velocity], cfg: &UpdateConfig) -> bool {
    !obs.is_empty() && batch_fit(model, obs) < cfg.eta_thres
}

/// Appends one component per mode of the poorly explained observations.
///
/// New components share weight mass `γ` in proportion to their cluster sizes;
/// existing weights and statistics are scaled by `1 - γ`.
pub fn spawn_components(
    cell: &CellState,
    obs: &[Velocity],
    gamma: f64,
    cfg: &UpdateConfig,
) -> Result<CellState> {
    let poorly: Vec<Velocity> = obs
        .iter()
        .filter(|y| {
            cell.model
                .components()
                .iter()
                .map(|c| c.dist.pdf(y))
                .fold(0.0, f64::max)
                < cfg.spawn_fit_cutoff
        })
        .copied()
        .collect();
    if poorly.is_empty() {
        return Ok(cell.clone());
    }

    let ms = &cfg.spawn_mean_shift;
    let clustering = mean_shift_clusters(&poorly, ms)?;
    let n_poor = poorly.len() as f64;
    let mut components: Vec<Component> = cell
        .model
        .components()
        .iter()
        .map(|c| Component {
            weight: c.weight * (1.0 - gamma),
            dist: c.dist.clone(),
        })
        .collect();
    let mut stats: Vec<SufficientStats> =
        cell.stats.iter().map(|s| s.scaled(1.0 - gamma)).collect();

    for (k, mode) in clustering.modes.iter().enumerate() {
        let members: Vec<&Velocity> = poorly
            .iter()
            .zip(&clustering.labels)
            .filter(|(_, &l)| l == k)
            .map(|(y, _)| y)
            .collect();
        let bandwidth = Matrix2::new(
            ms.bandwidth_theta.powi(2),
            0.0,
            0.0,
            ms.bandwidth_rho.powi(2),
        );
        let (mean, cov) = match cfg.spawn_covariance {
            SpawnCovariance::ClusterMoments if members.len() >= 2 => {
                unwrapped_moments(&members, mode.center.theta())
            }
            _ => (
                Vector2::new(mode.center.theta(), mode.center.rho()),
                bandwidth,
            ),
        };
        let dist = Swnd::new(mean.x, mean.y, cov)?;
        let weight = gamma * members.len() as f64 / n_poor;
        stats.push(SufficientStats::from_moments(
            weight,
            dist.mean(),
            dist.cov(),
        ));
        components.push(Component { weight, dist });
    }

    // weights already sum to one up to rounding
    let model = Swgmm::normalized(components)?;
    Ok(CellState {
        model,
        stats,
        n_ind: cell.n_ind,
        last_update_iter: cell.last_update_iter,
    })
}

/// Sample mean and covariance of velocities, angles unwrapped around `center`.
fn unwrapped_moments(members: &[&Velocity], center: f64) -> (Vector2<f64>, Matrix2<f64>) {
    let n = members.len() as f64;
    let pts: Vec<Vector2<f64>> = members
        .iter()
        .map(|y| Vector2::new(center + angle_diff(y.theta(), center), y.rho()))
        .collect();
    let mean = pts.iter().sum::<Vector2<f64>>() / n;
    let cov = pts
        .iter()
        .map(|p| (p - mean) * (p - mean).transpose())
        .sum::<Matrix2<f64>>()
        / n;
    (mean, cov)
}

/// One stochastic-EM update with an explicit stepsize.
///
/// Runs the spawn test, then the sE-step against the possibly extended
/// model, then the M-step. `n_ind` and the iteration counter are left as is.
pub fn sem_update(
    cell: &CellState,
    obs: &[Velocity],
    gamma: f64,
    cfg: &UpdateConfig,
) -> Result<CellState> {
    if obs.is_empty() {
        return Err(Error::NoObservations);
    }
    let base = if needs_spawn(&cell.model, obs, cfg) {
        spawn_components(cell, obs, gamma, cfg)?
    } else {
        cell.clone()
    };
    let batch = batch_stats(&base.model, obs)?;
    let blended = se_step(&base.stats, &batch, gamma)?;
    let (model, stats) = m_step(&blended)?;
    Ok(CellState {
        model,
        stats,
        n_ind: cell.n_ind,
        last_update_iter: cell.last_update_iter,
    })
}

/// Folds a new batch into the cell; an empty batch leaves it untouched.
pub fn update_cell(
    cell: &CellState,
    obs: &[Velocity],
    iter: u64,
    cfg: &UpdateConfig,
) -> Result<CellState> {
    if obs.is_empty() {
        return Ok(cell.clone());
    }
    let (gamma, n_ind) = stepsize(obs.len(), cell.n_ind, cfg.decay_lambda)?;
    let mut next = sem_update(cell, obs, gamma, cfg)?;
    next.n_ind = n_ind;
    next.last_update_iter = iter;
    Ok(next)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    fn v(theta: f64, rho: f64) -> Velocity {
        Velocity::new(theta, rho).unwrap()
    }

    fn diag(a: f64, b: f64) -> Matrix2<f64> {
        Matrix2::new(a, 0.0, 0.0, b)
    }

    fn two_far(weights: (f64, f64)) -> Swgmm {
        Swgmm::new(vec![
            Component {
                weight: weights.0,
                dist: Swnd::new(0.5, 1.0, diag(0.05, 0.02)).unwrap(),
            },
            Component {
                weight: weights.1,
                dist: Swnd::new(3.5, 1.0, diag(0.05, 0.02)).unwrap(),
            },
        ])
        .unwrap()
    }

    #[test]
    fn single_component_owns_everything() {
        let m = Swgmm::single(Swnd::new(1.0, 1.0, diag(0.1, 0.1)).unwrap());
        let r = responsibilities(&m, &[v(0.0, 0.5), v(3.0, 2.0), v(6.0, 1.0)]).unwrap();
        for i in 0..3 {
            assert_eq!(r.eta(i, 0), 1.0);
        }
    }

    #[test]
    fn observation_at_mean_goes_to_its_component() {
        let m = two_far((0.5, 0.5));
        let r = responsibilities(&m, &[v(0.5, 1.0)]).unwrap();
        // density ratio: component 2 is 3 rad away at σ_θ ≈ 0.22
        assert!(r.eta(0, 0) > 0.99);
        assert_relative_eq!(r.row(0).iter().sum::<f64>(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn identical_components_split_by_weight() {
        let d = Swnd::new(2.0, 1.0, diag(0.2, 0.1)).unwrap();
        let m = Swgmm::new(vec![
            Component {
                weight: 0.25,
                dist: d.clone(),
            },
            Component {
                weight: 0.75,
                dist: d,
            },
        ])
        .unwrap();
        let r = responsibilities(&m, &[v(2.1, 1.2), v(5.0, 0.2)]).unwrap();
        for i in 0..2 {
            assert_relative_eq!(r.eta(i, 0), 0.25, epsilon = 1e-12);
            assert_relative_eq!(r.eta(i, 1), 0.75, epsilon = 1e-12);
        }
    }

    #[test]
    fn underflowed_rows_are_uniform() {
        let m = two_far((0.3, 0.7));
        let r = responsibilities(&m, &[v(0.5, 1.0), v(0.5, 500.0)]).unwrap();
        assert_eq!(r.unexplained().collect::<Vec<_>>(), vec![1]);
        assert_eq!(r.row(1), &[0.5, 0.5]);
    }

    #[test]
    fn two_point_batch_stats() {
        let m = Swgmm::single(Swnd::new(1.1, 0.9, diag(0.1, 0.1)).unwrap());
        let s = batch_stats(&m, &[v(1.0, 1.0), v(1.2, 0.8)]).unwrap();
        assert_eq!(s.len(), 1);
        assert_relative_eq!(s[0].s1, 1.0, epsilon = 1e-15);
        assert_relative_eq!(s[0].s2.x, 1.1, epsilon = 1e-12);
        assert_relative_eq!(s[0].s2.y, 0.9, epsilon = 1e-12);
        // mean of y yᵀ over the two points
        assert_relative_eq!(s[0].s3[(0, 0)], 1.22, epsilon = 1e-12);
        assert_relative_eq!(s[0].s3[(0, 1)], 0.98, epsilon = 1e-12);
        assert_relative_eq!(s[0].s3[(1, 0)], 0.98, epsilon = 1e-12);
        assert_relative_eq!(s[0].s3[(1, 1)], 0.82, epsilon = 1e-12);
    }

    #[test]
    fn stats_use_unwrapped_angles_across_zero() {
        let m = Swgmm::single(Swnd::new(0.0, 1.0, diag(0.01, 0.01)).unwrap());
        let s = batch_stats(&m, &[v(0.1, 1.0), v(TAU - 0.1, 1.0)]).unwrap();
        assert!(s[0].s2.x.abs() < 1e-12);
        assert_relative_eq!(s[0].s3[(0, 0)], 0.01, epsilon = 1e-12);
    }

    #[test]
    fn stepsize_formulas() {
        let (g, n) = stepsize(50, 100.0, 0.5).unwrap();
        assert_eq!(n, 100.0);
        assert_eq!(g, 0.5);
        let (g, _) = stepsize(10, 1e-300, 0.9).unwrap();
        assert_relative_eq!(g, 1.0);
        assert!(stepsize(0, 1.0, 0.5).is_err());
        assert!(stepsize(1, 1.0, 1.0).is_err());

        let mut n_ind = 40.0;
        let mut gamma = 0.0;
        for _ in 0..30 {
            (gamma, n_ind) = stepsize(40, n_ind, 0.5).unwrap();
        }
        assert_relative_eq!(n_ind, 80.0, epsilon = 1e-6);
        assert_relative_eq!(gamma, 0.5, epsilon = 1e-8);
    }

    #[test]
    fn se_step_is_convex() {
        let a = SufficientStats {
            s1: 0.8,
            s2: Vector2::new(1.0, 2.0),
            s3: diag(3.0, 4.0),
        };
        let b = SufficientStats {
            s1: 0.4,
            s2: Vector2::new(0.0, 1.0),
            s3: diag(1.0, 1.0),
        };
        assert_eq!(se_step(&[a], &[b], 1.0).unwrap(), vec![b]);
        assert_eq!(se_step(&[a], &[a], 0.3).unwrap(), vec![a]);
        let out = se_step(&[a], &[b], 0.25).unwrap();
        assert_relative_eq!(out[0].s1, 0.7, epsilon = 1e-15);
        assert!(matches!(
            se_step(&[a], &[a, b], 0.5),
            Err(Error::ComponentMismatch { .. })
        ));
    }

    #[test]
    fn m_step_recovers_two_point_moments() {
        let m = Swgmm::single(Swnd::new(1.0, 1.0, diag(0.1, 0.1)).unwrap());
        let s = batch_stats(&m, &[v(0.9, 1.0), v(1.1, 1.0)]).unwrap();
        let (fit, _) = m_step(&s).unwrap();
        let d = &fit.components()[0].dist;
        assert_relative_eq!(d.mean_theta(), 1.0, epsilon = 1e-12);
        assert_relative_eq!(d.mean_rho(), 1.0, epsilon = 1e-12);
        assert_relative_eq!(d.cov()[(0, 0)], 0.01, epsilon = 1e-12);
        assert_relative_eq!(
            d.cov()[(1, 1)],
            crate::swgmm::DEFAULT_JITTER,
            max_relative = 1e-6
        );
        assert!(d.cov()[(0, 1)].abs() < 1e-12);
    }

    #[test]
    fn m_step_weights_and_pruning() {
        let a = SufficientStats::from_moments(0.5, Vector2::new(1.0, 1.0), &diag(0.1, 0.1));
        let b = SufficientStats::from_moments(0.5, Vector2::new(4.0, 1.0), &diag(0.1, 0.1));
        let (fit, _) = m_step(&[a, b]).unwrap();
        assert_eq!(fit.weights().collect::<Vec<_>>(), vec![0.5, 0.5]);

        let tiny = SufficientStats::from_moments(1e-8, Vector2::new(2.0, 1.0), &diag(0.1, 0.1));
        let (fit, stats) = m_step(&[a, tiny]).unwrap();
        assert_eq!(fit.len(), 1);
        assert_relative_eq!(stats[0].s1, 1.0);
        assert!(matches!(m_step(&[tiny]), Err(Error::StatisticsCollapsed)));
    }

    #[test]
    fn m_step_matches_sample_covariance() {
        let pts = [
            v(2.0, 1.0),
            v(2.3, 1.4),
            v(1.8, 0.9),
            v(2.1, 1.2),
            v(2.4, 1.1),
        ];
        let m = Swgmm::single(Swnd::new(2.1, 1.1, diag(0.2, 0.2)).unwrap());
        let (fit, _) = m_step(&batch_stats(&m, &pts).unwrap()).unwrap();
        // population covariance computed directly
        let n = pts.len() as f64;
        let mt = pts.iter().map(|p| p.theta()).sum::<f64>() / n;
        let mr = pts.iter().map(|p| p.rho()).sum::<f64>() / n;
        let ctt = pts.iter().map(|p| (p.theta() - mt).powi(2)).sum::<f64>() / n;
        let ctr = pts
            .iter()
            .map(|p| (p.theta() - mt) * (p.rho() - mr))
            .sum::<f64>()
            / n;
        let crr = pts.iter().map(|p| (p.rho() - mr).powi(2)).sum::<f64>() / n;
        let c = fit.components()[0].dist.cov();
        assert_relative_eq!(c[(0, 0)], ctt, epsilon = 1e-12);
        assert_relative_eq!(c[(0, 1)], ctr, epsilon = 1e-12);
        assert_relative_eq!(c[(1, 1)], crr, epsilon = 1e-12);
    }

    #[test]
    fn m_step_wraps_mean_and_reframes_stats() {
        let s = SufficientStats::from_moments(1.0, Vector2::new(TAU + 0.2, 1.0), &diag(0.05, 0.05));
        let (fit, stats) = m_step(&[s]).unwrap();
        assert_relative_eq!(fit.components()[0].dist.mean_theta(), 0.2, epsilon = 1e-12);
        assert_relative_eq!(stats[0].mean().x, 0.2, epsilon = 1e-12);
        assert_relative_eq!(
            fit.components()[0].dist.cov()[(0, 0)],
            0.05,
            epsilon = 1e-10
        );
    }

    fn built_cell(theta: f64) -> CellState {
        let dist = Swnd::new(theta, 1.0, diag(0.03, 0.01)).unwrap();
        let stats = vec![SufficientStats::from_moments(1.0, dist.mean(), dist.cov())];
        CellState::new(Swgmm::single(dist), stats, 200.0, 1).unwrap()
    }

    #[test]
    fn spawn_adds_opposite_mode() {
        let cell = built_cell(0.0);
        let obs = Swgmm::single(Swnd::new(PI, 1.0, diag(0.03, 0.01)).unwrap()).sample(200, 5);
        let cfg = UpdateConfig::default();
        assert!(needs_spawn(&cell.model, &obs, &cfg));
        let spawned = spawn_components(&cell, &obs, 0.5, &cfg).unwrap();
        assert!(spawned.model.len() >= 2);
        assert_eq!(spawned.stats.len(), spawned.model.len());
        let new = &spawned.model.components()[1];
        assert!(crate::swgmm::angular_distance(new.dist.mean_theta(), PI) < 10f64.to_radians());
        let w: Vec<f64> = spawned.model.weights().collect();
        assert_relative_eq!(w[0], 0.5, epsilon = 1e-12);
        assert_relative_eq!(w.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn spawn_is_noop_for_explained_batch() {
        let cell = built_cell(1.0);
        let obs = cell.model.sample(100, 9);
        let cfg = UpdateConfig::default();
        assert!(!needs_spawn(&cell.model, &obs, &cfg));
        assert_eq!(
            spawn_components(&cell, &[v(1.0, 1.0)], 0.5, &cfg).unwrap(),
            cell
        );
    }

    #[test]
    fn update_keeps_invariants_and_counts() {
        let cell = built_cell(2.0);
        let obs = cell.model.sample(60, 4);
        let next = update_cell(&cell, &obs, 2, &UpdateConfig::default()).unwrap();
        next.check().unwrap();
        assert_eq!(next.n_ind, 0.5 * 200.0 + 60.0);
        assert_eq!(next.last_update_iter, 2);
        assert_relative_eq!(next.model.weights().sum::<f64>(), 1.0, epsilon = 1e-9);
        assert_relative_eq!(
            next.stats.iter().map(|s| s.s1).sum::<f64>(),
            1.0,
            epsilon = 1e-9
        );
        assert_eq!(
            update_cell(&cell, &[], 3, &UpdateConfig::default()).unwrap(),
            cell
        );
    }
}
