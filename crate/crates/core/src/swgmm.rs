//! Circular-linear velocities and semi-wrapped normal mixtures over them.
//!
//! A velocity lives on a cylinder: the direction `theta` is periodic in
//! `[0, 2π)` and the speed `rho` is a non-negative real. A semi-wrapped
//! normal (SWND) is a bivariate normal over `(theta, rho)` whose `theta`
//! axis is folded onto the circle by summing the shifted copies
//! `theta + 2πw`. The sum is truncated to the windings `w ∈ {-1, 0, 1}`,
//! applied after the input angle has been wrapped, so densities are exactly
//! periodic in the raw input angle.

use std::f64::consts::{PI, TAU};

use nalgebra::{Matrix2, SymmetricEigen, Vector2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Eigenvalue floor applied to every covariance at construction.
pub const DEFAULT_JITTER: f64 = 1e-6;

/// Tolerance on `Σ m_j = 1`.
pub const WEIGHT_TOLERANCE: f64 = 1e-9;

/// Winding offsets kept in the truncated wrap sum.
pub const WINDINGS: [i32; 3] = [-1, 0, 1];

/// Wraps an angle into `[0, 2π)`.
pub fn wrap_angle(theta: f64) -> f64 {
    let w = theta.rem_euclid(TAU);
    // rem_euclid rounds tiny negative inputs up to exactly TAU
    if w >= TAU {
        0.0
    } else {
        w
    }
}

/// Signed difference `a - b` wrapped into `[-π, π)`.
pub fn angle_diff(a: f64, b: f64) -> f64 {
    wrap_angle(a - b + PI) - PI
}

/// Absolute angular distance in `[0, π]`.
pub fn angular_distance(a: f64, b: f64) -> f64 {
    angle_diff(a, b).abs()
}

/// Weighted circular mean of a set of angles, in `[0, 2π)`.
pub fn circular_mean<I>(angles: I) -> f64
where
    I: IntoIterator<Item = (f64, f64)>,
{
    let (s, c) = angles.into_iter().fold((0.0, 0.0), |(s, c), (theta, w)| {
        (s + w * theta.sin(), c + w * theta.cos())
    });
    wrap_angle(s.atan2(c))
}

/// One observation of human motion: heading and speed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Velocity {
    theta: f64,
    rho: f64,
}

impl Velocity {
    /// Wraps `theta` into `[0, 2π)`; rejects negative or non-finite speeds.
    pub fn new(theta: f64, rho: f64) -> Result<Self> {
        if !theta.is_finite() || !rho.is_finite() {
            return Err(Error::param(format!(
                "non-finite velocity ({theta}, {rho})"
            )));
        }
        if rho < 0.0 {
            return Err(Error::param(format!("negative speed {rho}")));
        }
        Ok(Velocity {
            theta: wrap_angle(theta),
            rho,
        })
    }

    /// Like [`Velocity::new`] but clamps negative speeds to zero.
    pub fn clamped(theta: f64, rho: f64) -> Self {
        debug_assert!(theta.is_finite() && rho.is_finite());
        Velocity {
            theta: wrap_angle(theta),
            rho: rho.max(0.0),
        }
    }

    /// Velocity of a planar displacement `(dx, dy)` covered in `dt` seconds.
    pub fn from_displacement(dx: f64, dy: f64, dt: f64) -> Result<Self> {
        if !(dt > 0.0) {
            return Err(Error::param(format!("non-positive time step {dt}")));
        }
        Velocity::new(dy.atan2(dx), dx.hypot(dy) / dt)
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }
}

/// Semi-wrapped bivariate normal over `(theta, rho)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Swnd {
    mean: Vector2<f64>,
    cov: Matrix2<f64>,
    inv: Matrix2<f64>,
    norm: f64,
}

impl Swnd {
    pub fn new(mean_theta: f64, mean_rho: f64, cov: Matrix2<f64>) -> Result<Self> {
        Self::with_jitter(mean_theta, mean_rho, cov, DEFAULT_JITTER)
    }

    /// Symmetrizes `cov` and lifts any eigenvalue below `jitter` up to it.
    pub fn with_jitter(
        mean_theta: f64,
        mean_rho: f64,
        cov: Matrix2<f64>,
        jitter: f64,
    ) -> Result<Self> {
        if !(jitter > 0.0) {
            return Err(Error::param(format!(
                "jitter must be positive, got {jitter}"
            )));
        }
        let cov = floor_eigenvalues(&symmetrize(&cov)?, jitter);
        Self::assemble(mean_theta, mean_rho, cov)
    }

    /// Builds from stored parameters without altering them; fails unless
    /// `cov` is already symmetric and positive definite.
    pub fn from_stored(mean_theta: f64, mean_rho: f64, cov: Matrix2<f64>) -> Result<Self> {
        if (cov[(0, 1)] - cov[(1, 0)]).abs() > 1e-12 {
            return Err(Error::InvalidModel("covariance is not symmetric".into()));
        }
        let (lo, _) = eigenvalues(&cov);
        if !(lo > 0.0) {
            return Err(Error::InvalidModel(format!(
                "covariance is not positive definite (min eigenvalue {lo})"
            )));
        }
        Self::assemble(mean_theta, mean_rho, cov)
    }

    fn assemble(mean_theta: f64, mean_rho: f64, cov: Matrix2<f64>) -> Result<Self> {
        if !mean_theta.is_finite() || !mean_rho.is_finite() {
            return Err(Error::InvalidModel(format!(
                "non-finite mean ({mean_theta}, {mean_rho})"
            )));
        }
        let det = cov.determinant();
        let inv = cov
            .try_inverse()
            .filter(|_| det > 0.0)
            .ok_or_else(|| Error::InvalidModel("singular covariance".into()))?;
        Ok(Swnd {
            mean: Vector2::new(wrap_angle(mean_theta), mean_rho),
            cov,
            inv,
            norm: 1.0 / (TAU * det.sqrt()),
        })
    }

    pub fn mean_theta(&self) -> f64 {
        self.mean.x
    }

    pub fn mean_rho(&self) -> f64 {
        self.mean.y
    }

    pub fn mean(&self) -> Vector2<f64> {
        self.mean
    }

    pub fn cov(&self) -> &Matrix2<f64> {
        &self.cov
    }

    /// Unwrapped normal density at `(theta, rho)`, no winding.
    pub fn normal_density(&self, theta: f64, rho: f64) -> f64 {
        let d = Vector2::new(theta - self.mean.x, rho - self.mean.y);
        let q = d.dot(&(self.inv * d));
        self.norm * (-0.5 * q).exp()
    }

    /// The three winding terms `N(theta + 2πw, rho)` for `w = -1, 0, 1`.
    pub fn winding_terms(&self, v: &Velocity) -> [f64; 3] {
        WINDINGS.map(|w| self.normal_density(v.theta + TAU * w as f64, v.rho))
    }

    pub fn pdf(&self, v: &Velocity) -> f64 {
        self.winding_terms(v).iter().sum()
    }

    /// Density at a raw `(theta, rho)` pair; `rho` may be negative, which
    /// lets the density be integrated over the whole linear axis.
    pub fn pdf_at(&self, theta: f64, rho: f64) -> f64 {
        let theta = wrap_angle(theta);
        WINDINGS
            .iter()
            .map(|&w| self.normal_density(theta + TAU * w as f64, rho))
            .sum()
    }

    /// The copy of `v.theta` shifted by `2πw`, nearest to this component's mean.
    pub fn nearest_unwrapped(&self, v: &Velocity) -> f64 {
        self.mean.x + angle_diff(v.theta, self.mean.x)
    }
}

fn symmetrize(cov: &Matrix2<f64>) -> Result<Matrix2<f64>> {
    if cov.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidModel("non-finite covariance".into()));
    }
    let off = 0.5 * (cov[(0, 1)] + cov[(1, 0)]);
    Ok(Matrix2::new(cov[(0, 0)], off, off, cov[(1, 1)]))
}

fn eigenvalues(cov: &Matrix2<f64>) -> (f64, f64) {
    let eig = SymmetricEigen::new(*cov);
    let (a, b) = (eig.eigenvalues[0], eig.eigenvalues[1]);
    (a.min(b), a.max(b))
}

fn floor_eigenvalues(cov: &Matrix2<f64>, floor: f64) -> Matrix2<f64> {
    let eig = SymmetricEigen::new(*cov);
    if eig.eigenvalues.iter().all(|&l| l >= floor) {
        return *cov;
    }
    let lifted = eig.eigenvalues.map(|l| l.max(floor));
    let m = eig.eigenvectors * Matrix2::from_diagonal(&lifted) * eig.eigenvectors.transpose();
    let off = 0.5 * (m[(0, 1)] + m[(1, 0)]);
    Matrix2::new(m[(0, 0)], off, off, m[(1, 1)])
}

/// One weighted mixture component.
#[derive(Debug, Clone, PartialEq)]
pub struct Component {
    pub weight: f64,
    pub dist: Swnd,
}

/// Semi-wrapped Gaussian mixture: the per-location motion model.
#[derive(Debug, Clone, PartialEq)]
pub struct Swgmm {
    components: Vec<Component>,
}

impl Swgmm {
    /// Validates weights as given; they must already sum to one.
    pub fn new(components: Vec<Component>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::InvalidModel("mixture has no components".into()));
        }
        if let Some(c) = components
            .iter()
            .find(|c| !(c.weight >= 0.0) || !c.weight.is_finite())
        {
            return Err(Error::InvalidModel(format!("invalid weight {}", c.weight)));
        }
        let total: f64 = components.iter().map(|c| c.weight).sum();
        if (total - 1.0).abs() > WEIGHT_TOLERANCE {
            return Err(Error::InvalidModel(format!(
                "weights sum to {total}, expected 1"
            )));
        }
        Ok(Swgmm { components })
    }

    /// Rescales non-negative weights to sum to one.
    pub fn normalized(mut components: Vec<Component>) -> Result<Self> {
        let total: f64 = components.iter().map(|c| c.weight).sum();
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::InvalidModel(format!(
                "cannot normalize weights summing to {total}"
            )));
        }
        for c in &mut components {
            c.weight /= total;
        }
        Self::new(components)
    }

    pub fn single(dist: Swnd) -> Self {
        Swgmm {
            components: vec![Component { weight: 1.0, dist }],
        }
    }

    pub fn components(&self) -> &[Component] {
        &self.components
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn weights(&self) -> impl Iterator<Item = f64> + '_ {
        self.components.iter().map(|c| c.weight)
    }

    /// Highest-weight component; the first one wins ties.
    pub fn dominant(&self) -> &Component {
        self.components.iter().fold(&self.components[0], |best, c| {
            if c.weight > best.weight {
                c
            } else {
                best
            }
        })
    }

    pub fn pdf(&self, v: &Velocity) -> f64 {
        self.components
            .iter()
            .map(|c| c.weight * c.dist.pdf(v))
            .sum()
    }

    /// See [`Swnd::pdf_at`].
    pub fn pdf_at(&self, theta: f64, rho: f64) -> f64 {
        self.components
            .iter()
            .map(|c| c.weight * c.dist.pdf_at(theta, rho))
            .sum()
    }

    /// Mean negative log-likelihood with densities clamped below at `floor`.
    pub fn mean_nll(&self, obs: &[Velocity], floor: f64) -> Result<f64> {
        if obs.is_empty() {
            return Err(Error::NoObservations);
        }
        if !(floor > 0.0) {
            return Err(Error::param(format!(
                "likelihood floor must be positive, got {floor}"
            )));
        }
        let total: f64 = obs.iter().map(|v| -self.pdf(v).max(floor).ln()).sum();
        Ok(total / obs.len() as f64)
    }

    /// Draws `n` velocities; angles are wrapped and negative speeds clamped to zero.
    pub fn sample(&self, n: usize, seed: u64) -> Vec<Velocity> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let chol: Vec<Matrix2<f64>> = self
            .components
            .iter()
            .map(|c| {
                c.dist
                    .cov
                    .cholesky()
                    .map(|ch| ch.l())
                    .expect("covariance is positive definite by construction")
            })
            .collect();
        (0..n)
            .map(|_| {
                let j = self.pick_component(rng.random::<f64>());
                let z = Vector2::new(
                    rng.sample::<f64, _>(StandardNormal),
                    rng.sample::<f64, _>(StandardNormal),
                );
                let x = self.components[j].dist.mean + chol[j] * z;
                Velocity::clamped(x.x, x.y)
            })
            .collect()
    }

    fn pick_component(&self, u: f64) -> usize {
        let mut acc = 0.0;
        let mut last_positive = 0;
        for (j, c) in self.components.iter().enumerate() {
            if c.weight > 0.0 {
                last_positive = j;
                acc += c.weight;
                if u < acc {
                    return j;
                }
            }
        }
        last_positive
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn diag(a: f64, b: f64) -> Matrix2<f64> {
        Matrix2::new(a, 0.0, 0.0, b)
    }

    fn v(theta: f64, rho: f64) -> Velocity {
        Velocity::new(theta, rho).unwrap()
    }

    #[test]
    fn wrap_handles_edges() {
        assert_eq!(wrap_angle(0.0), 0.0);
        assert_eq!(wrap_angle(TAU), 0.0);
        assert_eq!(wrap_angle(-1e-18), 0.0);
        assert_relative_eq!(wrap_angle(-PI / 2.0), 1.5 * PI);
        assert_relative_eq!(angle_diff(0.1, 6.2), 0.1 + TAU - 6.2, epsilon = 1e-12);
        assert!(Velocity::new(0.0, -0.1).is_err());
        assert_eq!(Velocity::clamped(7.0, -0.5).rho(), 0.0);
    }

    #[test]
    fn pdf_at_mean_matches_closed_form() {
        let d = Swnd::new(PI, 1.0, diag(0.01, 0.01)).unwrap();
        // scipy.stats.multivariate_normal.pdf([pi, 1], [pi, 1], diag(.01, .01))
        assert_relative_eq!(d.pdf(&v(PI, 1.0)), 15.915494309189528, max_relative = 1e-12);
    }

    #[test]
    fn pdf_sums_three_windings() {
        let d = Swnd::new(0.0, 1.0, diag(1.0, 0.04)).unwrap();
        let terms = d.winding_terms(&v(PI, 1.0));
        // reference normal densities at theta = -pi, pi, 3pi
        assert_relative_eq!(terms[0], 0.0057231189311004755, max_relative = 1e-12);
        assert_relative_eq!(terms[1], 0.0057231189311004755, max_relative = 1e-12);
        assert_relative_eq!(terms[2], 4.096131128437881e-20, max_relative = 1e-9);
        assert_relative_eq!(
            d.pdf(&v(PI, 1.0)),
            0.011446237862200951,
            max_relative = 1e-12
        );
    }

    #[test]
    fn pdf_is_periodic_in_raw_angle() {
        let d = Swnd::new(0.4, 1.1, Matrix2::new(0.3, 0.02, 0.02, 0.05)).unwrap();
        for raw in [0.5, 1.0, 2.0, 3.0] {
            assert_eq!(d.pdf(&v(raw, 1.0)), d.pdf(&v(raw + TAU, 1.0)));
            assert_eq!(d.pdf(&v(raw, 1.0)), d.pdf(&v(raw - TAU, 1.0)));
        }
        // 0.3 + 2π is not exactly representable; it wraps to 0.3 - 2ulp.
        assert_relative_eq!(
            d.pdf(&v(0.3, 1.0)),
            d.pdf(&v(0.3 + TAU, 1.0)),
            max_relative = 1e-14
        );
    }

    #[test]
    fn mixture_weights_components() {
        let c1 = Swnd::new(1.0, 0.8, Matrix2::new(0.05, 0.01, 0.01, 0.02)).unwrap();
        let c2 = Swnd::new(4.0, 1.3, Matrix2::new(0.2, -0.02, -0.02, 0.09)).unwrap();
        let single = Swgmm::single(c1.clone());
        assert_eq!(single.pdf(&v(1.2, 0.9)), c1.pdf(&v(1.2, 0.9)));

        let twin = Swgmm::new(vec![
            Component {
                weight: 0.5,
                dist: c1.clone(),
            },
            Component {
                weight: 0.5,
                dist: c1.clone(),
            },
        ])
        .unwrap();
        assert_relative_eq!(
            twin.pdf(&v(1.2, 0.9)),
            c1.pdf(&v(1.2, 0.9)),
            max_relative = 1e-15
        );

        let mix = Swgmm::new(vec![
            Component {
                weight: 0.3,
                dist: c1,
            },
            Component {
                weight: 0.7,
                dist: c2,
            },
        ])
        .unwrap();
        // brute-force sums from scipy
        assert_relative_eq!(
            mix.pdf(&v(1.2, 0.9)),
            0.9653235264872242,
            max_relative = 1e-12
        );
        assert_relative_eq!(
            mix.pdf(&v(6.1, 1.1)),
            1.36720153563592e-05,
            max_relative = 1e-10
        );
    }

    #[test]
    fn rejects_bad_weights() {
        let d = Swnd::new(0.0, 1.0, diag(0.1, 0.1)).unwrap();
        let comps = vec![
            Component {
                weight: 0.6,
                dist: d.clone(),
            },
            Component {
                weight: 0.6,
                dist: d.clone(),
            },
        ];
        assert!(Swgmm::new(comps.clone()).is_err());
        let m = Swgmm::normalized(comps).unwrap();
        assert_relative_eq!(m.weights().sum::<f64>(), 1.0);
        assert!(Swgmm::new(vec![]).is_err());
        assert!(Swgmm::new(vec![Component {
            weight: -0.0 - 1.0,
            dist: d
        }])
        .is_err());
    }

    #[test]
    fn covariance_is_floored_and_symmetrized() {
        let d = Swnd::new(0.0, 1.0, Matrix2::new(0.01, 0.002, 0.0, 0.0)).unwrap();
        assert_eq!(d.cov()[(0, 1)], d.cov()[(1, 0)]);
        let eig = SymmetricEigen::new(*d.cov());
        assert!(eig
            .eigenvalues
            .iter()
            .all(|&l| l >= DEFAULT_JITTER * (1.0 - 1e-9)));
        let untouched = Matrix2::new(0.3, 0.1, 0.1, 0.2);
        assert_eq!(*Swnd::new(0.0, 1.0, untouched).unwrap().cov(), untouched);
        assert!(Swnd::from_stored(0.0, 1.0, Matrix2::new(1.0, 2.0, 2.0, 1.0)).is_err());
    }

    #[test]
    fn nll_definition_and_floor() {
        let d = Swnd::new(PI, 1.0, diag(0.01, 0.01)).unwrap();
        let m = Swgmm::single(d);
        assert!(matches!(m.mean_nll(&[], 1e-9), Err(Error::NoObservations)));
        let far = m.mean_nll(&[v(0.0, 50.0)], 1e-9).unwrap();
        assert_relative_eq!(far, -(1e-9f64).ln(), max_relative = 1e-15);
        assert_relative_eq!(far, 20.72326583694641, max_relative = 1e-12);

        // find a point with density exactly e^-1 along the rho axis
        let peak = m.pdf(&v(PI, 1.0));
        let target = (-1.0f64).exp();
        let dr = (2.0 * 0.01 * (peak / target).ln()).sqrt();
        let nll = m.mean_nll(&[v(PI, 1.0 + dr)], 1e-9).unwrap();
        assert_relative_eq!(nll, 1.0, max_relative = 1e-12);
    }

    #[test]
    fn sampling_is_deterministic_and_centered() {
        let d = Swnd::new(6.2, 1.0, diag(0.09, 0.01)).unwrap();
        let m = Swgmm::single(d);
        let a = m.sample(10_000, 7);
        assert_eq!(a, m.sample(10_000, 7));
        let mean = circular_mean(a.iter().map(|x| (x.theta(), 1.0)));
        assert!(angular_distance(mean, 6.2) < 0.05, "{mean}");
        assert!(a
            .iter()
            .all(|x| (0.0..TAU).contains(&x.theta()) && x.rho() >= 0.0));
    }

    #[test]
    fn zero_weight_component_is_never_sampled() {
        let m = Swgmm::new(vec![
            Component {
                weight: 1.0,
                dist: Swnd::new(0.0, 1.0, diag(0.01, 0.01)).unwrap(),
            },
            Component {
                weight: 0.0,
                dist: Swnd::new(PI, 1.0, diag(0.01, 0.01)).unwrap(),
            },
        ])
        .unwrap();
        assert!(m
            .sample(2000, 3)
            .iter()
            .all(|x| angular_distance(x.theta(), 0.0) < 1.0));
    }
}
