//! Maximum-entropy transition kernel on configuration space.
//!
//! For `N` particles in three dimensions the kernel is a product of
//! Gaussians, one per coordinate `A = (n, a)`:
//!
//! ```text
//! P(x' | x, dt) ∝ exp[ -Σ_A m_n / (2 η dt) (Δx_A - <Δx_A>)² ]
//! <Δx_A> = (η dt / m_n) ∂φ/∂x_A
//! ```
//!
//! The drift multiplier is absorbed into the normalization of `φ`, so the
//! drift potential supplied by the caller is used as is.
//!
//! Random streams are ChaCha8 ([`rand_chacha::ChaCha8Rng`]) seeded from a
//! 64-bit seed, with the stream index selecting independent sequences for
//! ensemble members. Normal variates come from `rand_distr::StandardNormal`.

use std::fmt;
use std::sync::Arc;

use num_traits::Float;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::scalar::Real;

/// Point in `3N`-dimensional configuration space.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Configuration<T> {
    coords: Vec<T>,
    n_particles: usize,
}

impl<T: Real> Configuration<T> {
    pub fn new(coords: Vec<T>, n_particles: usize) -> Result<Self> {
        if n_particles == 0 {
            return Err(invalid("n_particles", "must be positive"));
        }
        if coords.len() != 3 * n_particles {
            return Err(Error::DimensionMismatch {
                expected: 3 * n_particles,
                found: coords.len(),
            });
        }
        if let Some(index) = coords.iter().position(|c| !c.is_finite()) {
            return Err(Error::NonFinite {
                what: "configuration",
                index,
            });
        }
        Ok(Self {
            coords,
            n_particles,
        })
    }

    /// All particles at the origin.
    pub fn origin(n_particles: usize) -> Result<Self> {
        Self::new(vec![T::zero(); 3 * n_particles], n_particles)
    }

    pub fn coords(&self) -> &[T] {
        &self.coords
    }

    pub fn n_particles(&self) -> usize {
        self.n_particles
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }
}

/// Drift potential `φ` on configuration space.
pub trait DriftPotential<T>: fmt::Debug + Send + Sync {
    fn value(&self, x: &[T]) -> T;

    /// `∂φ/∂x_A` for every coordinate.
    fn gradient(&self, x: &[T]) -> Vec<T>;
}

/// `φ ≡ c`.
#[derive(Clone, Debug, Default)]
pub struct ConstantDrift<T>(pub T);

impl<T: Real> DriftPotential<T> for ConstantDrift<T> {
    fn value(&self, _x: &[T]) -> T {
        self.0
    }

    fn gradient(&self, x: &[T]) -> Vec<T> {
        vec![T::zero(); x.len()]
    }
}

/// `φ(x) = Σ_A k_A x_A`.
#[derive(Clone, Debug)]
pub struct LinearDrift<T> {
    pub slope: Vec<T>,
}

impl<T: Real> DriftPotential<T> for LinearDrift<T> {
    fn value(&self, x: &[T]) -> T {
        self.slope.iter().zip(x).map(|(&k, &xi)| k * xi).sum()
    }

    fn gradient(&self, x: &[T]) -> Vec<T> {
        let mut g = self.slope.clone();
        g.resize(x.len(), T::zero());
        g
    }
}

/// `φ(x) = Σ_A c_A (x_A - x0_A)²`.
#[derive(Clone, Debug)]
pub struct QuadraticDrift<T> {
    pub curvature: Vec<T>,
    pub center: Vec<T>,
}

impl<T: Real> DriftPotential<T> for QuadraticDrift<T> {
    fn value(&self, x: &[T]) -> T {
        x.iter()
            .enumerate()
            .map(|(i, &xi)| {
                let c = self.curvature.get(i).copied().unwrap_or_else(T::zero);
                let d = xi - self.center.get(i).copied().unwrap_or_else(T::zero);
                c * d * d
            })
            .sum()
    }

    fn gradient(&self, x: &[T]) -> Vec<T> {
        let two = T::lit(2.0);
        x.iter()
            .enumerate()
            .map(|(i, &xi)| {
                let c = self.curvature.get(i).copied().unwrap_or_else(T::zero);
                two * c * (xi - self.center.get(i).copied().unwrap_or_else(T::zero))
            })
            .collect()
    }
}

/// Drift given by a pair of closures.
pub struct FnDrift<F, G> {
    pub value: F,
    pub gradient: G,
}

impl<F, G> fmt::Debug for FnDrift<F, G> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("FnDrift")
    }
}

impl<T, F, G> DriftPotential<T> for FnDrift<F, G>
where
    F: Fn(&[T]) -> T + Send + Sync,
    G: Fn(&[T]) -> Vec<T> + Send + Sync,
{
    fn value(&self, x: &[T]) -> T {
        (self.value)(x)
    }

    fn gradient(&self, x: &[T]) -> Vec<T> {
        (self.gradient)(x)
    }
}

/// Masses, fluctuation scale `η`, time step and drift potential.
#[derive(Clone, Debug)]
pub struct KernelParams<T> {
    masses: Vec<T>,
    eta: T,
    dt: T,
    drift: Arc<dyn DriftPotential<T>>,
}

impl<T: Real> KernelParams<T> {
    pub fn new(masses: Vec<T>, eta: T, dt: T, drift: Arc<dyn DriftPotential<T>>) -> Result<Self> {
        if masses.is_empty() {
            return Err(invalid("masses", "at least one particle is required"));
        }
        if masses.iter().any(|&m| !(m > T::zero() && m.is_finite())) {
            return Err(invalid("masses", "every mass must be positive and finite"));
        }
        if !(eta > T::zero() && eta.is_finite()) {
            return Err(invalid("eta", "must be positive and finite"));
        }
        if !(dt > T::zero() && dt.is_finite()) {
            return Err(invalid("dt", "must be positive and finite"));
        }
        Ok(Self {
            masses,
            eta,
            dt,
            drift,
        })
    }

    pub fn masses(&self) -> &[T] {
        &self.masses
    }

    pub fn n_particles(&self) -> usize {
        self.masses.len()
    }

    pub fn eta(&self) -> T {
        self.eta
    }

    pub fn dt(&self) -> T {
        self.dt
    }

    pub fn drift(&self) -> &dyn DriftPotential<T> {
        self.drift.as_ref()
    }

    /// Same parameters with a different time step.
    pub fn with_dt(&self, dt: T) -> Result<Self> {
        Self::new(self.masses.clone(), self.eta, dt, Arc::clone(&self.drift))
    }

    /// Per-coordinate variance `η dt / m_n`.
    pub fn variances(&self) -> Vec<T> {
        self.masses
            .iter()
            .flat_map(|&m| std::iter::repeat(self.eta * self.dt / m).take(3))
            .collect()
    }

    fn check(&self, x: &Configuration<T>) -> Result<()> {
        if x.n_particles() != self.n_particles() {
            return Err(Error::DimensionMismatch {
                expected: 3 * self.n_particles(),
                found: x.dim(),
            });
        }
        Ok(())
    }

    fn drift_gradient(&self, x: &Configuration<T>) -> Result<Vec<T>> {
        let g = self.drift.gradient(x.coords());
        if g.len() != x.dim() {
            return Err(Error::DimensionMismatch {
                expected: x.dim(),
                found: g.len(),
            });
        }
        if let Some(index) = g.iter().position(|c| !c.is_finite()) {
            return Err(Error::NonFinite {
                what: "drift gradient",
                index,
            });
        }
        Ok(g)
    }
}

/// Expected displacement `<Δx_A> = (η dt / m_n) ∂φ/∂x_A`.
pub fn mean_displacement<T: Real>(
    params: &KernelParams<T>,
    x: &Configuration<T>,
) -> Result<Vec<T>> {
    params.check(x)?;
    let g = params.drift_gradient(x)?;
    Ok(g.iter()
        .zip(params.variances())
        .map(|(&gi, v)| v * gi)
        .collect())
}

/// Log-density of the transition `x -> x_next`.
pub fn transition_logpdf<T: Real>(
    params: &KernelParams<T>,
    x: &Configuration<T>,
    x_next: &Configuration<T>,
) -> Result<T> {
    if x.dim() != x_next.dim() {
        return Err(Error::DimensionMismatch {
            expected: x.dim(),
            found: x_next.dim(),
        });
    }
    let mean = mean_displacement(params, x)?;
    let two_pi = T::lit(2.0) * T::PI();
    let half = T::lit(0.5);
    let mut total = T::zero();
    for (((&a, &b), mu), v) in x
        .coords()
        .iter()
        .zip(x_next.coords())
        .zip(mean)
        .zip(params.variances())
    {
        let r = b - a - mu;
        total -= half * (two_pi * v).ln() + r * r / (T::lit(2.0) * v);
    }
    Ok(total)
}

/// Seeded generator for stream `stream` of `seed`.
pub fn rng_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Draws `x'` using a caller-supplied generator.
pub fn sample_with<T: Real, R: rand::Rng + ?Sized>(
    params: &KernelParams<T>,
    x: &Configuration<T>,
    rng: &mut R,
) -> Result<Configuration<T>> {
    let mean = mean_displacement(params, x)?;
    let coords = x
        .coords()
        .iter()
        .zip(mean)
        .zip(params.variances())
        .map(|((&xi, mu), v)| xi + mu + v.sqrt() * T::standard_normal(rng))
        .collect();
    Configuration::new(coords, x.n_particles())
}

/// Draws `x'` from the kernel. The same seed always yields the same point.
pub fn transition_sample<T: Real>(
    params: &KernelParams<T>,
    x: &Configuration<T>,
    rng_seed: u64,
) -> Result<Configuration<T>> {
    sample_with(params, x, &mut rng_stream(rng_seed, 0))
}

/// Advances every ensemble member `steps` times.
///
/// Member `i` draws from stream `i` of `rng_seed`, so the result does not
/// depend on how the members are scheduled across threads.
pub fn evolve_ensemble<T: Real>(
    params: &KernelParams<T>,
    ensemble: &[Configuration<T>],
    steps: usize,
    rng_seed: u64,
) -> Result<Vec<Configuration<T>>> {
    if ensemble.is_empty() {
        return Err(invalid("ensemble", "must not be empty"));
    }
    ensemble
        .par_iter()
        .enumerate()
        .map(|(i, member)| {
            let mut rng = rng_stream(rng_seed, i as u64);
            let mut x = member.clone();
            for _ in 0..steps {
                x = sample_with(params, &x, &mut rng)?;
            }
            Ok(x)
        })
        .collect()
}

/// Estimate of one constrained moment against its analytic value.
#[derive(Clone, Debug, Serialize)]
pub struct MomentCheck<T> {
    pub estimate: T,
    pub standard_error: T,
    pub expected: T,
    pub pass: bool,
}

impl<T: Real> MomentCheck<T> {
    fn new(estimate: T, standard_error: T, expected: T) -> Self {
        let pass = within_sigma(estimate, expected, standard_error);
        Self {
            estimate,
            standard_error,
            expected,
            pass,
        }
    }
}

/// Number of standard errors allowed between estimate and analytic value.
pub const MOMENT_SIGMA_THRESHOLD: f64 = 4.0;

fn within_sigma<T: Real>(estimate: T, expected: T, se: T) -> bool {
    let slack = T::lit(MOMENT_SIGMA_THRESHOLD) * se + T::epsilon() * Float::abs(expected);
    Float::abs(estimate - expected) <= slack
}

/// Empirical check of the kernel's displacement moments.
#[derive(Clone, Debug, Serialize)]
pub struct MomentReport<T> {
    pub mean_displacement: Vec<T>,
    pub covariance_diag: Vec<T>,
    pub n_samples: usize,
    pub standard_errors: Vec<T>,
    pub expected_mean: Vec<T>,
    pub expected_variance: Vec<T>,
    /// `<Δx_n · Δx_n>` per particle.
    pub kappa: Vec<MomentCheck<T>>,
    /// `<Δx_A> ∂_A φ`.
    pub kappa_prime: MomentCheck<T>,
    pub mean_pass: bool,
    pub pass: bool,
}

/// Samples the kernel at a fixed point and compares the displacement
/// moments with their analytic values at the 4-standard-error level.
pub fn verify_constraints<T: Real>(
    params: &KernelParams<T>,
    x: &Configuration<T>,
    n_samples: usize,
    rng_seed: u64,
) -> Result<MomentReport<T>> {
    if n_samples < 100 {
        return Err(invalid("n_samples", "at least 100 samples are required"));
    }
    let dim = x.dim();
    let expected_mean = mean_displacement(params, x)?;
    let grad = params.drift_gradient(x)?;
    let variances = params.variances();

    let mut rng = rng_stream(rng_seed, 0);
    let mut deltas = Vec::with_capacity(n_samples * dim);
    for _ in 0..n_samples {
        let next = sample_with(params, x, &mut rng)?;
        deltas.extend(next.coords().iter().zip(x.coords()).map(|(&b, &a)| b - a));
    }

    let n = T::from_count(n_samples);
    let rows = || deltas.chunks_exact(dim);

    let mut mean = vec![T::zero(); dim];
    for row in rows() {
        for (m, &d) in mean.iter_mut().zip(row) {
            *m += d;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);

    let mut var = vec![T::zero(); dim];
    for row in rows() {
        for ((v, &d), &m) in var.iter_mut().zip(row).zip(&mean) {
            *v += (d - m) * (d - m);
        }
    }
    let denom = T::from_count(n_samples - 1);
    var.iter_mut().for_each(|v| *v /= denom);
    let standard_errors: Vec<T> = var.iter().map(|&v| (v / n).sqrt()).collect();

    let kappa: Vec<MomentCheck<T>> = (0..x.n_particles())
        .map(|p| {
            let per_sample: Vec<T> = rows()
                .map(|row| row[3 * p..3 * p + 3].iter().map(|&d| d * d).sum())
                .collect();
            let (est, se) = mean_and_se(&per_sample);
            let expected = (3 * p..3 * p + 3)
                .map(|i| variances[i] + expected_mean[i] * expected_mean[i])
                .sum();
            MomentCheck::new(est, se, expected)
        })
        .collect();

    let drift_projection: Vec<T> = rows()
        .map(|row| row.iter().zip(&grad).map(|(&d, &g)| d * g).sum())
        .collect();
    let (est, se) = mean_and_se(&drift_projection);
    let expected_kp = expected_mean.iter().zip(&grad).map(|(&m, &g)| m * g).sum();
    let kappa_prime = MomentCheck::new(est, se, expected_kp);

    let mean_pass = mean
        .iter()
        .zip(&expected_mean)
        .zip(&standard_errors)
        .all(|((&m, &e), &se)| within_sigma(m, e, se));
    let pass = mean_pass && kappa_prime.pass && kappa.iter().all(|k| k.pass);

    Ok(MomentReport {
        mean_displacement: mean,
        covariance_diag: var,
        n_samples,
        standard_errors,
        expected_mean,
        expected_variance: variances,
        kappa,
        kappa_prime,
        mean_pass,
        pass,
    })
}

fn mean_and_se<T: Real>(xs: &[T]) -> (T, T) {
    let n = T::from_count(xs.len());
    let mean = xs.iter().copied().sum::<T>() / n;
    let var = xs.iter().map(|&x| (x - mean) * (x - mean)).sum::<T>() / (n - T::one());
    (mean, (var / n).sqrt())
}

/// Normalized histogram (a density) of one coordinate across an ensemble.
/// Members outside `[lo, hi)` are dropped.
pub fn coordinate_histogram<T: Real>(
    ensemble: &[Configuration<T>],
    axis: usize,
    lo: T,
    hi: T,
    bins: usize,
) -> Result<Vec<T>> {
    if bins == 0 || !(hi > lo) {
        return Err(invalid(
            "bins",
            "need at least one bin over a non-empty range",
        ));
    }
    let width = (hi - lo) / T::from_count(bins);
    let mut counts = vec![T::zero(); bins];
    for member in ensemble {
        let c = *member.coords().get(axis).ok_or(Error::IndexOutOfRange {
            index: axis,
            size: member.dim(),
        })?;
        if c >= lo && c < hi {
            let b = ((c - lo) / width).to_usize().unwrap_or(0).min(bins - 1);
            counts[b] += T::one();
        }
    }
    let total = T::from_count(ensemble.len()) * width;
    Ok(counts.into_iter().map(|c| c / total).collect())
}

/// Total-variation distance `½ Σ |p - q| Δ` between two histograms that
/// share bins of width `width`.
pub fn histogram_tv_distance<T: Real>(p: &[T], q: &[T], width: T) -> Result<T> {
    if p.len() != q.len() {
        return Err(Error::DimensionMismatch {
            expected: p.len(),
            found: q.len(),
        });
    }
    Ok(T::lit(0.5) * width * p.iter().zip(q).map(|(&a, &b)| Float::abs(a - b)).sum::<T>())
}
