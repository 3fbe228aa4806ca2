//! Grid evolution of the density `ρ` and phase `Φ`.
//!
//! The pair evolves under the ensemble Hamiltonian
//!
//! ```text
//! H[ρ, Φ] = ∫ dx [ ρ (∂Φ)² / 2m + ρ V + ξ (∂ρ)² / (m ρ) ]
//! ∂t ρ = δH/δΦ,   ∂t Φ = -δH/δρ
//! ```
//!
//! with `ħ = √(8ξ)`, which makes the `ξ` term the quantum potential and the
//! flow equivalent to the Schrödinger equation for `Ψ = √ρ exp(iΦ/ħ)`. A
//! split-step spectral Schrödinger solver is provided as the reference.
//!
//! All spatial derivatives are spectral on a periodic grid. A spreading packet
//! has a phase that is not periodic (it is quadratic in `x`), so derivatives
//! of `Φ` inside the Hamiltonian flow are taken through the phasor
//! `u = √ρ exp(iΦ/ħ)`, which is periodic whenever the density vanishes at the
//! grid edges. A phase with an explicit winding (`Φ(x + L) = Φ(x) + W`, e.g.
//! a plane wave) is handled by removing the linear ramp first.

use std::io::Write;
use std::sync::Arc;

use num_complex::Complex;
use num_traits::Float;
use rustfft::{Fft, FftPlanner};
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::scalar::Real;

/// Relative density floor: `ε_ρ = DENSITY_FLOOR · max ρ`.
pub const DENSITY_FLOOR: f64 = 1e-12;

/// `C` in the linear stability bound `dt ≤ C m dx² / ħ` of [`hamilton_step`].
///
/// The bound is exact for small perturbations of a uniform density. On
/// strongly non-uniform densities (a Gaussian whose tails fall to the floor)
/// the semi-implicit step needs `dt` one to two orders of magnitude smaller;
/// [`RECOMMENDED_STEP_FRACTION`] is a safe choice there.
pub const STABILITY_CONSTANT: f64 = 0.25;

/// Fraction of `m dx² / ħ` used by the bundled scenarios for localized packets.
pub const RECOMMENDED_STEP_FRACTION: f64 = 0.01;

/// Negative density (relative to the maximum) tolerated before flooring.
pub const NEGATIVE_DENSITY_TOLERANCE: f64 = 1e-6;

/// Uniform periodic grid `x_j = x_min + j dx`, `j = 0..n`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Grid1D<T> {
    x_min: T,
    x_max: T,
    n_points: usize,
}

impl<T: Real> Grid1D<T> {
    pub fn new(x_min: T, x_max: T, n_points: usize) -> Result<Self> {
        if n_points < 8 || !n_points.is_power_of_two() {
            return Err(invalid("n_points", "must be a power of two and at least 8"));
        }
        if !(x_min.is_finite() && x_max.is_finite() && x_max > x_min) {
            return Err(invalid("x_max", "must be finite and greater than x_min"));
        }
        Ok(Self {
            x_min,
            x_max,
            n_points,
        })
    }

    pub fn x_min(&self) -> T {
        self.x_min
    }

    pub fn x_max(&self) -> T {
        self.x_max
    }

    pub fn n_points(&self) -> usize {
        self.n_points
    }

    pub fn length(&self) -> T {
        self.x_max - self.x_min
    }

    pub fn dx(&self) -> T {
        self.length() / T::from_count(self.n_points)
    }

    pub fn x(&self, j: usize) -> T {
        self.x_min + self.dx() * T::from_count(j)
    }

    pub fn points(&self) -> Vec<T> {
        (0..self.n_points).map(|j| self.x(j)).collect()
    }

    /// Angular wavenumbers in FFT order.
    pub fn wavenumbers(&self) -> Vec<T> {
        let n = self.n_points;
        let scale = T::lit(2.0) * T::PI() / self.length();
        (0..n)
            .map(|j| {
                let m = if j < n / 2 {
                    j as f64
                } else {
                    j as f64 - n as f64
                };
                T::lit(m) * scale
            })
            .collect()
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len == self.n_points {
            Ok(())
        } else {
            Err(Error::GridMismatch)
        }
    }
}

/// Normalized probability density on a grid, floored at `ε_ρ`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DensityField<T> {
    grid: Grid1D<T>,
    values: Vec<T>,
}

impl<T: Real> DensityField<T> {
    /// Takes values that already integrate to one (within `1e-9`) and sit
    /// at or above the floor.
    pub fn new(grid: Grid1D<T>, values: Vec<T>) -> Result<Self> {
        grid.check_len(values.len())?;
        check_finite(&values, "density")?;
        check_floor(&values)?;
        let total = values.iter().copied().sum::<T>() * grid.dx();
        if Float::abs(total - T::one()) > T::tol(1e-9) {
            return Err(Error::NotNormalized {
                total: total.as_f64(),
            });
        }
        Ok(Self { grid, values })
    }

    /// Floors and normalizes arbitrary nonnegative values.
    pub fn normalize(grid: Grid1D<T>, values: Vec<T>) -> Result<Self> {
        grid.check_len(values.len())?;
        check_finite(&values, "density")?;
        if let Some(index) = values.iter().position(|&v| v < T::zero()) {
            return Err(Error::NegativeDensity {
                index,
                value: values[index].as_f64(),
            });
        }
        let (values, _) = floor_and_normalize(values, grid.dx())
            .ok_or_else(|| invalid("density", "total mass must be positive"))?;
        Ok(Self { grid, values })
    }

    /// `ρ(x) ∝ exp(-(x - center)² / 2σ²)`.
    pub fn gaussian(grid: Grid1D<T>, center: T, sigma: T) -> Result<Self> {
        if !(sigma > T::zero()) {
            return Err(invalid("sigma", "must be positive"));
        }
        let values = grid
            .points()
            .into_iter()
            .map(|x| {
                let z = (x - center) / sigma;
                (-T::lit(0.5) * z * z).exp()
            })
            .collect();
        Self::normalize(grid, values)
    }

    pub fn uniform(grid: Grid1D<T>) -> Self {
        let v = T::one() / grid.length();
        let values = vec![v; grid.n_points()];
        Self { grid, values }
    }

    pub fn grid(&self) -> &Grid1D<T> {
        &self.grid
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn floor(&self) -> T {
        density_floor(&self.values)
    }

    pub fn mass(&self) -> T {
        self.values.iter().copied().sum::<T>() * self.grid.dx()
    }

    pub fn mean(&self) -> T {
        moments(&self.grid, &self.values).0
    }

    /// Standard deviation of the position.
    pub fn width(&self) -> T {
        moments(&self.grid, &self.values).1
    }
}

/// Phase `Φ(x)` in units of action, with an optional winding `W` so that
/// `Φ(x + L) = Φ(x) + W` on the periodic grid.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PhaseField<T> {
    grid: Grid1D<T>,
    values: Vec<T>,
    winding: T,
}

impl<T: Real> PhaseField<T> {
    /// A periodic phase (zero winding).
    pub fn new(grid: Grid1D<T>, values: Vec<T>) -> Result<Self> {
        Self::with_winding(grid, values, T::zero())
    }

    pub fn with_winding(grid: Grid1D<T>, values: Vec<T>, winding: T) -> Result<Self> {
        grid.check_len(values.len())?;
        check_finite(&values, "phase")?;
        if !winding.is_finite() {
            return Err(invalid("winding", "must be finite"));
        }
        Ok(Self {
            grid,
            values,
            winding,
        })
    }

    pub fn constant(grid: Grid1D<T>, value: T) -> Result<Self> {
        let n = grid.n_points();
        Self::new(grid, vec![value; n])
    }

    /// Plane-wave phase `Φ = p x`, winding `p L`.
    pub fn linear(grid: Grid1D<T>, momentum: T) -> Result<Self> {
        let values = grid.points().into_iter().map(|x| momentum * x).collect();
        let winding = momentum * grid.length();
        Self::with_winding(grid, values, winding)
    }

    pub fn grid(&self) -> &Grid1D<T> {
        &self.grid
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn winding(&self) -> T {
        self.winding
    }

    /// Values with the winding ramp removed; periodic by construction.
    fn periodic_part(&self) -> Vec<T> {
        let slope = self.winding / self.grid.length();
        let x0 = self.grid.x_min();
        self.values
            .iter()
            .zip(self.grid.points())
            .map(|(&v, x)| v - slope * (x - x0))
            .collect()
    }
}

/// Mass, potential and the quantum-potential strength `ξ`, with `ħ = √(8ξ)`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HamiltonianSpec<T> {
    mass: T,
    potential: Vec<T>,
    xi: T,
    hbar: T,
}

impl<T: Real> HamiltonianSpec<T> {
    pub fn new(mass: T, potential: Vec<T>, xi: T) -> Result<Self> {
        if !(xi > T::zero() && xi.is_finite()) {
            return Err(invalid("xi", "must be positive and finite"));
        }
        Self::build(mass, potential, xi, (T::lit(8.0) * xi).sqrt())
    }

    /// Chooses `ξ = ħ² / 8`.
    pub fn with_hbar(mass: T, potential: Vec<T>, hbar: T) -> Result<Self> {
        if !(hbar > T::zero() && hbar.is_finite()) {
            return Err(invalid("hbar", "must be positive and finite"));
        }
        Self::build(mass, potential, hbar * hbar / T::lit(8.0), hbar)
    }

    fn build(mass: T, potential: Vec<T>, xi: T, hbar: T) -> Result<Self> {
        if !(mass > T::zero() && mass.is_finite()) {
            return Err(invalid("mass", "must be positive and finite"));
        }
        check_finite(&potential, "potential")?;
        let lhs = hbar * hbar;
        let rhs = T::lit(8.0) * xi;
        if Float::abs(lhs - rhs) > T::lit(8.0) * T::epsilon() * rhs {
            return Err(invalid("hbar", "hbar² must equal 8 xi"));
        }
        Ok(Self {
            mass,
            potential,
            xi,
            hbar,
        })
    }

    /// `V ≡ 0`, `ħ = 1`.
    pub fn free(grid: &Grid1D<T>, mass: T) -> Result<Self> {
        Self::with_hbar(mass, vec![T::zero(); grid.n_points()], T::one())
    }

    /// `V = ½ m ω² (x - center)²`, `ħ = 1`.
    pub fn harmonic(grid: &Grid1D<T>, mass: T, omega: T, center: T) -> Result<Self> {
        let half = T::lit(0.5);
        let potential = grid
            .points()
            .into_iter()
            .map(|x| half * mass * omega * omega * (x - center) * (x - center))
            .collect();
        Self::with_hbar(mass, potential, T::one())
    }

    pub fn mass(&self) -> T {
        self.mass
    }

    pub fn potential(&self) -> &[T] {
        &self.potential
    }

    pub fn xi(&self) -> T {
        self.xi
    }

    pub fn hbar(&self) -> T {
        self.hbar
    }
}

/// Complex wavefunction normalized on its grid.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct WaveField<T> {
    grid: Grid1D<T>,
    values: Vec<Complex<T>>,
}

impl<T: Real> WaveField<T> {
    pub fn new(grid: Grid1D<T>, values: Vec<Complex<T>>) -> Result<Self> {
        grid.check_len(values.len())?;
        if let Some(index) = values
            .iter()
            .position(|z| !(z.re.is_finite() && z.im.is_finite()))
        {
            return Err(Error::NonFinite {
                what: "wavefunction",
                index,
            });
        }
        let total = values.iter().map(|z| z.norm_sqr()).sum::<T>() * grid.dx();
        if Float::abs(total - T::one()) > T::tol(1e-9) {
            return Err(Error::NotNormalized {
                total: total.as_f64(),
            });
        }
        Ok(Self { grid, values })
    }

    pub fn normalize(grid: Grid1D<T>, mut values: Vec<Complex<T>>) -> Result<Self> {
        grid.check_len(values.len())?;
        let total = values.iter().map(|z| z.norm_sqr()).sum::<T>() * grid.dx();
        if !(total > T::zero() && total.is_finite()) {
            return Err(invalid("wavefunction", "norm must be positive and finite"));
        }
        let scale = total.sqrt().recip();
        values.iter_mut().for_each(|z| *z *= scale);
        Self::new(grid, values)
    }

    /// `Ψ ∝ exp(-(x - center)² / 4σ² + i p x / ħ)`; `|Ψ|²` has standard
    /// deviation `σ`.
    pub fn gaussian(grid: Grid1D<T>, center: T, sigma: T, momentum: T, hbar: T) -> Result<Self> {
        if !(sigma > T::zero()) {
            return Err(invalid("sigma", "must be positive"));
        }
        let quarter = T::lit(0.25);
        let values = grid
            .points()
            .into_iter()
            .map(|x| {
                let z = (x - center) / sigma;
                Complex::from_polar((-quarter * z * z).exp(), momentum * x / hbar)
            })
            .collect();
        Self::normalize(grid, values)
    }

    pub fn grid(&self) -> &Grid1D<T> {
        &self.grid
    }

    pub fn values(&self) -> &[Complex<T>] {
        &self.values
    }

    pub fn norm_squared(&self) -> T {
        self.values.iter().map(|z| z.norm_sqr()).sum::<T>() * self.grid.dx()
    }

    /// `⟨self|other⟩ = Σ conj(self) other dx`.
    pub fn inner(&self, other: &Self) -> Result<Complex<T>> {
        if self.grid != other.grid {
            return Err(Error::GridMismatch);
        }
        let s = self
            .values
            .iter()
            .zip(&other.values)
            .fold(Complex::new(T::zero(), T::zero()), |acc, (a, b)| {
                acc + a.conj() * b
            });
        Ok(s * self.grid.dx())
    }

    pub fn density(&self) -> Vec<T> {
        self.values.iter().map(|z| z.norm_sqr()).collect()
    }

    pub fn width(&self) -> T {
        moments(&self.grid, &self.density()).1
    }
}

fn check_finite<T: Real>(values: &[T], what: &'static str) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(Error::NonFinite { what, index }),
        None => Ok(()),
    }
}

fn density_floor<T: Real>(values: &[T]) -> T {
    let max = values.iter().copied().fold(T::zero(), Float::max);
    T::lit(DENSITY_FLOOR) * max
}

fn check_floor<T: Real>(values: &[T]) -> Result<()> {
    let floor = density_floor(values);
    // One part in 1e6 of slack absorbs the rounding of renormalization.
    let limit = floor * (T::one() - T::lit(1e-6));
    match values.iter().position(|&v| v < limit) {
        Some(index) => Err(Error::DensityBelowFloor {
            index,
            value: values[index].as_f64(),
            floor: floor.as_f64(),
        }),
        None => Ok(()),
    }
}

/// Floors at `ε_ρ`, then rescales to unit mass. Returns the values and the
/// number of floored nodes, or `None` when the mass is not positive.
fn floor_and_normalize<T: Real>(mut values: Vec<T>, dx: T) -> Option<(Vec<T>, usize)> {
    let floor = density_floor(&values);
    let mut floored = 0;
    for v in values.iter_mut() {
        if *v < floor {
            *v = floor;
            floored += 1;
        }
    }
    let total = values.iter().copied().sum::<T>() * dx;
    if !(total > T::zero() && total.is_finite()) {
        return None;
    }
    values.iter_mut().for_each(|v| *v /= total);
    Some((values, floored))
}

fn moments<T: Real>(grid: &Grid1D<T>, density: &[T]) -> (T, T) {
    let xs = grid.points();
    let total: T = density.iter().copied().sum();
    let mean = xs.iter().zip(density).map(|(&x, &r)| x * r).sum::<T>() / total;
    let var = xs
        .iter()
        .zip(density)
        .map(|(&x, &r)| (x - mean) * (x - mean) * r)
        .sum::<T>()
        / total;
    (mean, var.sqrt())
}

/// FFT plans and wavenumbers for one grid.
#[derive(Clone)]
pub struct Spectral<T: Real> {
    forward: Arc<dyn Fft<T>>,
    inverse: Arc<dyn Fft<T>>,
    k: Vec<T>,
}

impl<T: Real> Spectral<T> {
    pub fn new(grid: &Grid1D<T>) -> Self {
        let mut planner = FftPlanner::new();
        let n = grid.n_points();
        Self {
            forward: planner.plan_fft_forward(n),
            inverse: planner.plan_fft_inverse(n),
            k: grid.wavenumbers(),
        }
    }

    fn len(&self) -> usize {
        self.k.len()
    }

    /// First and second derivatives of a periodic complex function. The
    /// Nyquist mode is dropped from the first derivative.
    pub fn derivatives(&self, u: &[Complex<T>]) -> (Vec<Complex<T>>, Vec<Complex<T>>) {
        let n = self.len();
        let mut hat = u.to_vec();
        self.forward.process(&mut hat);
        let scale = T::from_count(n).recip();
        let mut d1: Vec<Complex<T>> = hat
            .iter()
            .zip(&self.k)
            .enumerate()
            .map(|(j, (&h, &k))| {
                if j == n / 2 {
                    Complex::new(T::zero(), T::zero())
                } else {
                    h * Complex::new(T::zero(), k * scale)
                }
            })
            .collect();
        let mut d2: Vec<Complex<T>> = hat
            .iter()
            .zip(&self.k)
            .map(|(&h, &k)| h * (-k * k * scale))
            .collect();
        self.inverse.process(&mut d1);
        self.inverse.process(&mut d2);
        (d1, d2)
    }

    /// Derivative of a periodic real function.
    pub fn derivative_real(&self, f: &[T]) -> Vec<T> {
        let u: Vec<Complex<T>> = f.iter().map(|&v| Complex::new(v, T::zero())).collect();
        self.derivatives(&u).0.into_iter().map(|z| z.re).collect()
    }

    fn forward(&self, buf: &mut [Complex<T>]) {
        self.forward.process(buf);
    }

    fn inverse(&self, buf: &mut [Complex<T>]) {
        self.inverse.process(buf);
    }
}

fn check_spec<T: Real>(grid: &Grid1D<T>, spec: &HamiltonianSpec<T>) -> Result<()> {
    grid.check_len(spec.potential.len())
}

/// Current velocity `v = ∂Φ/∂x / m`.
///
/// The periodic part of `Φ` is differentiated spectrally and the winding
/// contributes the constant slope `W / L`.
pub fn current_velocity<T: Real>(phi: &PhaseField<T>, spec: &HamiltonianSpec<T>) -> Result<Vec<T>> {
    check_spec(&phi.grid, spec)?;
    let spectral = Spectral::new(&phi.grid);
    let slope = phi.winding / phi.grid.length();
    Ok(spectral
        .derivative_real(&phi.periodic_part())
        .into_iter()
        .map(|d| (d + slope) / spec.mass)
        .collect())
}

/// Products `conj(ψ) ψ'` and `conj(ψ) ψ''` for `ψ = √ρ exp(iΦ/ħ)`.
///
/// The winding ramp `exp(i q x)` with `q = W / (L ħ)` is factored out before
/// the spectral transform and reinstated analytically.
fn phasor_products<T: Real>(
    spectral: &Spectral<T>,
    grid: &Grid1D<T>,
    rho: &[T],
    phi_periodic: &[T],
    winding: T,
    hbar: T,
) -> (Vec<Complex<T>>, Vec<Complex<T>>) {
    let u: Vec<Complex<T>> = rho
        .iter()
        .zip(phi_periodic)
        .map(|(&r, &p)| Complex::from_polar(r.sqrt(), p / hbar))
        .collect();
    let (d1, d2) = spectral.derivatives(&u);
    let q = winding / (grid.length() * hbar);
    let iq = Complex::new(T::zero(), q);
    let two = T::lit(2.0);
    let first = u
        .iter()
        .zip(&d1)
        .map(|(&u, &d)| u.conj() * (d + iq * u))
        .collect();
    let second = u
        .iter()
        .zip(&d1)
        .zip(&d2)
        .map(|((&u, &d), &dd)| u.conj() * (dd + iq * d * two - u * (q * q)))
        .collect();
    (first, second)
}

/// Kinetic, potential and quantum parts of the ensemble Hamiltonian.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EnergyTerms<T> {
    pub kinetic: T,
    pub potential: T,
    pub quantum: T,
}

impl<T: Real> EnergyTerms<T> {
    pub fn total(&self) -> T {
        self.kinetic + self.potential + self.quantum
    }
}

fn shared_grid<'a, T: Real>(
    rho: &'a DensityField<T>,
    phi: &PhaseField<T>,
    spec: &HamiltonianSpec<T>,
) -> Result<&'a Grid1D<T>> {
    if rho.grid != phi.grid {
        return Err(Error::GridMismatch);
    }
    check_spec(&rho.grid, spec)?;
    Ok(&rho.grid)
}

fn energy_terms_with<T: Real>(
    spectral: &Spectral<T>,
    grid: &Grid1D<T>,
    rho: &[T],
    phi: &PhaseField<T>,
    spec: &HamiltonianSpec<T>,
) -> Result<EnergyTerms<T>> {
    check_floor(rho)?;
    let (first, _) = phasor_products(
        spectral,
        grid,
        rho,
        &phi.periodic_part(),
        phi.winding,
        spec.hbar,
    );
    let m = spec.mass;
    let two = T::lit(2.0);
    let mut terms = EnergyTerms {
        kinetic: T::zero(),
        potential: T::zero(),
        quantum: T::zero(),
    };
    for ((&r, w), &v) in rho.iter().zip(&first).zip(&spec.potential) {
        // ρ Φ' = ħ Im(ψ̄ψ'), ρ' = 2 Re(ψ̄ψ').
        let flux = spec.hbar * w.im;
        let grad = two * w.re;
        terms.kinetic += flux * flux / (two * m * r);
        terms.quantum += spec.xi * grad * grad / (m * r);
        terms.potential += r * v;
    }
    let dx = grid.dx();
    terms.kinetic *= dx;
    terms.potential *= dx;
    terms.quantum *= dx;
    Ok(terms)
}

/// The three terms of the ensemble Hamiltonian, by quadrature.
pub fn ensemble_hamiltonian_terms<T: Real>(
    rho: &DensityField<T>,
    phi: &PhaseField<T>,
    spec: &HamiltonianSpec<T>,
) -> Result<EnergyTerms<T>> {
    let grid = shared_grid(rho, phi, spec)?;
    energy_terms_with(&Spectral::new(grid), grid, &rho.values, phi, spec)
}

/// `H[ρ, Φ] = ∫ ½ρ(∂Φ)²/m + ρV + ξ(∂ρ)²/(mρ) dx`.
pub fn ensemble_hamiltonian<T: Real>(
    rho: &DensityField<T>,
    phi: &PhaseField<T>,
    spec: &HamiltonianSpec<T>,
) -> Result<T> {
    Ok(ensemble_hamiltonian_terms(rho, phi, spec)?.total())
}

/// Largest step accepted by [`hamilton_step`].
pub fn stability_bound<T: Real>(grid: &Grid1D<T>, spec: &HamiltonianSpec<T>) -> T {
    let dx = grid.dx();
    T::lit(STABILITY_CONSTANT) * spec.mass * dx * dx / spec.hbar
}

/// What one Hamilton step did to the density before it was cleaned up.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct StepReport<T> {
    /// `Σ ρ dx` right after the update, before flooring and renormalization.
    pub mass_before_renormalization: T,
    /// `|mass after flooring - 1|`, the size of the renormalization.
    pub renormalization: T,
    pub floored_nodes: usize,
}

/// Reusable stepper for the `(ρ, Φ)` flow on one grid.
pub struct HamiltonStepper<T: Real> {
    spectral: Spectral<T>,
    grid: Grid1D<T>,
    spec: HamiltonianSpec<T>,
    dt: T,
}

impl<T: Real> HamiltonStepper<T> {
    pub fn new(grid: &Grid1D<T>, spec: &HamiltonianSpec<T>, dt: T) -> Result<Self> {
        check_spec(grid, spec)?;
        if !(dt > T::zero() && dt.is_finite()) {
            return Err(invalid("dt", "must be positive and finite"));
        }
        let bound = stability_bound(grid, spec);
        if dt > bound {
            return Err(Error::StabilityBound {
                dt: dt.as_f64(),
                bound: bound.as_f64(),
            });
        }
        Ok(Self {
            spectral: Spectral::new(grid),
            grid: grid.clone(),
            spec: spec.clone(),
            dt,
        })
    }

    pub fn dt(&self) -> T {
        self.dt
    }

    /// One semi-implicit (symplectic Euler) step: `Φ` is advanced with the
    /// old `ρ`, then `ρ` with the new `Φ`.
    ///
    /// ```text
    /// ∂t Φ = -δH/δρ = (ħ²/2m) Re(ψ̄ψ'')/ρ - V
    /// ∂t ρ =  δH/δΦ = -∂(ρ ∂Φ/m) = -(ħ/m) Im(ψ̄ψ'')
    /// ```
    pub fn step(
        &self,
        rho: &DensityField<T>,
        phi: &PhaseField<T>,
    ) -> Result<(DensityField<T>, PhaseField<T>, StepReport<T>)> {
        if rho.grid != self.grid || phi.grid != self.grid {
            return Err(Error::GridMismatch);
        }
        let spec = &self.spec;
        let hbar = spec.hbar;
        let m = spec.mass;
        let dt = self.dt;
        let ramp = phi.winding / self.grid.length();
        let x0 = self.grid.x_min();

        let periodic = phi.periodic_part();
        let (_, second) = phasor_products(
            &self.spectral,
            &self.grid,
            &rho.values,
            &periodic,
            phi.winding,
            hbar,
        );
        let coeff = hbar * hbar / (T::lit(2.0) * m);
        let new_periodic: Vec<T> = periodic
            .iter()
            .zip(&second)
            .zip(rho.values.iter().zip(&spec.potential))
            .map(|((&p, s), (&r, &v))| p + dt * (coeff * s.re / r - v))
            .collect();

        let (_, second) = phasor_products(
            &self.spectral,
            &self.grid,
            &rho.values,
            &new_periodic,
            phi.winding,
            hbar,
        );
        let flux_coeff = hbar / m;
        let updated: Vec<T> = rho
            .values
            .iter()
            .zip(&second)
            .map(|(&r, s)| r - dt * flux_coeff * s.im)
            .collect();
        check_finite(&updated, "density")?;

        let dx = self.grid.dx();
        let mass = updated.iter().copied().sum::<T>() * dx;
        let max = updated.iter().copied().fold(T::zero(), Float::max);
        if let Some((index, &value)) = updated
            .iter()
            .enumerate()
            .find(|(_, &v)| v < -T::lit(NEGATIVE_DENSITY_TOLERANCE) * max)
        {
            return Err(Error::NegativeDensity {
                index,
                value: value.as_f64(),
            });
        }
        let floor = density_floor(&updated);
        let floored_mass: T = updated.iter().map(|&v| Float::max(v, floor)).sum::<T>() * dx;
        let (values, floored_nodes) = floor_and_normalize(updated, dx)
            .ok_or_else(|| invalid("density", "mass vanished during the step"))?;
        let report = StepReport {
            mass_before_renormalization: mass,
            renormalization: Float::abs(floored_mass - T::one()),
            floored_nodes,
        };
        if floored_nodes > 0 {
            log::debug!(
                "hamilton_step floored {floored_nodes} nodes, renormalized by {:e}",
                report.renormalization.as_f64()
            );
        }

        let phase_values = new_periodic
            .into_iter()
            .zip(self.grid.points())
            .map(|(p, x)| p + ramp * (x - x0))
            .collect();
        let rho = DensityField {
            grid: self.grid.clone(),
            values,
        };
        let phi = PhaseField {
            grid: self.grid.clone(),
            values: phase_values,
            winding: phi.winding,
        };
        Ok((rho, phi, report))
    }

    pub fn energy(&self, rho: &DensityField<T>, phi: &PhaseField<T>) -> Result<T> {
        Ok(energy_terms_with(&self.spectral, &self.grid, &rho.values, phi, &self.spec)?.total())
    }
}

/// One symplectic-Euler step of the `(ρ, Φ)` Hamilton equations.
pub fn hamilton_step<T: Real>(
    rho: &DensityField<T>,
    phi: &PhaseField<T>,
    spec: &HamiltonianSpec<T>,
    dt: T,
) -> Result<(DensityField<T>, PhaseField<T>, StepReport<T>)> {
    let grid = shared_grid(rho, phi, spec)?;
    HamiltonStepper::new(grid, spec, dt)?.step(rho, phi)
}

/// `L²` norm of the one-step continuity residual
/// `ρ(t + dt) - ρ(t) + dt ∂(ρ v)(t)` produced by [`hamilton_step`].
///
/// The step is first order in time, so the residual over one step scales as
/// `dt²`.
pub fn continuity_residual<T: Real>(
    rho: &DensityField<T>,
    phi: &PhaseField<T>,
    spec: &HamiltonianSpec<T>,
    dt: T,
) -> Result<T> {
    let grid = shared_grid(rho, phi, spec)?;
    let spectral = Spectral::new(grid);
    let (first, _) = phasor_products(
        &spectral,
        grid,
        &rho.values,
        &phi.periodic_part(),
        phi.winding,
        spec.hbar,
    );
    let current: Vec<T> = first.iter().map(|w| spec.hbar * w.im / spec.mass).collect();
    let divergence = spectral.derivative_real(&current);
    let (next, _, _) = hamilton_step(rho, phi, spec, dt)?;
    let sum_sq: T = next
        .values
        .iter()
        .zip(&rho.values)
        .zip(&divergence)
        .map(|((&b, &a), &d)| {
            let r = b - a + dt * d;
            r * r
        })
        .sum();
    Ok((sum_sq * grid.dx()).sqrt())
}

/// `Ψ = √ρ exp(iΦ/ħ)`.
pub fn to_wavefunction<T: Real>(
    rho: &DensityField<T>,
    phi: &PhaseField<T>,
    spec: &HamiltonianSpec<T>,
) -> Result<WaveField<T>> {
    let grid = shared_grid(rho, phi, spec)?;
    let values = rho
        .values
        .iter()
        .zip(&phi.values)
        .map(|(&r, &p)| Complex::from_polar(r.sqrt(), p / spec.hbar))
        .collect();
    Ok(WaveField {
        grid: grid.clone(),
        values,
    })
}

fn wrap_angle<T: Real>(a: T) -> T {
    let two_pi = T::lit(2.0) * T::PI();
    let mut w = a - two_pi * ((a + T::PI()) / two_pi).floor();
    if w <= -T::PI() {
        w += two_pi;
    }
    w
}

/// `ρ = |Ψ|²` and `Φ = ħ arg Ψ`, unwrapped from the left edge.
///
/// The winding of the returned phase is the total unwrapped phase change
/// around the periodic grid, an integer multiple of `2πħ`.
pub fn from_wavefunction<T: Real>(
    psi: &WaveField<T>,
    spec: &HamiltonianSpec<T>,
) -> Result<(DensityField<T>, PhaseField<T>)> {
    let grid = &psi.grid;
    check_spec(grid, spec)?;
    let density = psi.density();
    let floor = density_floor(&density);
    let nodes: Vec<usize> = density
        .iter()
        .enumerate()
        .filter(|(_, &d)| d < floor)
        .map(|(i, _)| i)
        .collect();
    if !nodes.is_empty() {
        let positions = nodes.iter().map(|&i| grid.x(i).as_f64()).collect();
        return Err(Error::Nodes {
            indices: nodes,
            positions,
        });
    }
    let args: Vec<T> = psi.values.iter().map(|z| z.arg()).collect();
    let mut unwrapped = Vec::with_capacity(args.len());
    let mut acc = args[0];
    unwrapped.push(acc);
    for w in args.windows(2) {
        acc += wrap_angle(w[1] - w[0]);
        unwrapped.push(acc);
    }
    let closing = wrap_angle(args[0] - args[args.len() - 1]);
    let winding = (acc + closing - args[0]) * spec.hbar;
    let phase = unwrapped.into_iter().map(|a| a * spec.hbar).collect();
    let rho = DensityField::normalize(grid.clone(), density)?;
    let phi = PhaseField::with_winding(grid.clone(), phase, winding)?;
    Ok((rho, phi))
}

/// Strang-split spectral propagator for `iħ∂tΨ = -(ħ²/2m)∂²Ψ + VΨ`.
pub struct SplitStep<T: Real> {
    spectral: Spectral<T>,
    grid: Grid1D<T>,
    kinetic: Vec<Complex<T>>,
    half_potential: Vec<Complex<T>>,
    identity: bool,
}

impl<T: Real> SplitStep<T> {
    pub fn new(grid: &Grid1D<T>, spec: &HamiltonianSpec<T>, dt: T) -> Result<Self> {
        check_spec(grid, spec)?;
        if !(dt >= T::zero() && dt.is_finite()) {
            return Err(invalid("dt", "must be nonnegative and finite"));
        }
        let hbar = spec.hbar;
        let two = T::lit(2.0);
        let kinetic = grid
            .wavenumbers()
            .into_iter()
            .map(|k| Complex::from_polar(T::one(), -hbar * k * k * dt / (two * spec.mass)))
            .collect();
        let half_potential = spec
            .potential
            .iter()
            .map(|&v| Complex::from_polar(T::one(), -v * dt / (two * hbar)))
            .collect();
        Ok(Self {
            spectral: Spectral::new(grid),
            grid: grid.clone(),
            kinetic,
            half_potential,
            identity: dt == T::zero(),
        })
    }

    pub fn step(&self, psi: &WaveField<T>) -> Result<WaveField<T>> {
        if psi.grid != self.grid {
            return Err(Error::GridMismatch);
        }
        if self.identity {
            return Ok(psi.clone());
        }
        let mut buf: Vec<Complex<T>> = psi
            .values
            .iter()
            .zip(&self.half_potential)
            .map(|(&z, &h)| z * h)
            .collect();
        self.spectral.forward(&mut buf);
        let scale = T::from_count(buf.len()).recip();
        buf.iter_mut()
            .zip(&self.kinetic)
            .for_each(|(z, &k)| *z = *z * k * scale);
        self.spectral.inverse(&mut buf);
        buf.iter_mut()
            .zip(&self.half_potential)
            .for_each(|(z, &h)| *z *= h);
        Ok(WaveField {
            grid: self.grid.clone(),
            values: buf,
        })
    }
}

/// One second-order split-step spectral Schrödinger step.
pub fn schrodinger_step<T: Real>(
    psi: &WaveField<T>,
    spec: &HamiltonianSpec<T>,
    dt: T,
) -> Result<WaveField<T>> {
    SplitStep::new(&psi.grid, spec, dt)?.step(psi)
}

/// `⟨Ψ|H|Ψ⟩ = ∫ (ħ²/2m)|Ψ'|² + V|Ψ|² dx`; equals the ensemble Hamiltonian
/// of `(|Ψ|², ħ arg Ψ)`.
pub fn wave_energy<T: Real>(psi: &WaveField<T>, spec: &HamiltonianSpec<T>) -> Result<T> {
    check_spec(&psi.grid, spec)?;
    let spectral = Spectral::new(&psi.grid);
    wave_energy_with(&spectral, psi, spec)
}

fn wave_energy_with<T: Real>(
    spectral: &Spectral<T>,
    psi: &WaveField<T>,
    spec: &HamiltonianSpec<T>,
) -> Result<T> {
    let (d1, _) = spectral.derivatives(&psi.values);
    let coeff = spec.hbar * spec.hbar / (T::lit(2.0) * spec.mass);
    let e: T = d1
        .iter()
        .zip(&psi.values)
        .zip(&spec.potential)
        .map(|((d, z), &v)| coeff * d.norm_sqr() + v * z.norm_sqr())
        .sum();
    Ok(e * psi.grid.dx())
}

/// Distances between two wavefunctions after aligning the global phase of
/// `a` to maximize `|⟨a|b⟩|`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct WaveDistance<T> {
    /// `‖a' - b‖₂ / ‖b‖₂`.
    pub relative_l2: T,
    pub linf: T,
}

pub fn aligned_distance<T: Real>(a: &WaveField<T>, b: &WaveField<T>) -> Result<WaveDistance<T>> {
    let overlap = a.inner(b)?;
    let rotation = if overlap.norm() > T::zero() {
        overlap / overlap.norm()
    } else {
        Complex::new(T::one(), T::zero())
    };
    let mut sum_sq = T::zero();
    let mut linf = T::zero();
    for (&x, &y) in a.values.iter().zip(&b.values) {
        let d = (x * rotation - y).norm();
        sum_sq += d * d;
        linf = Float::max(linf, d);
    }
    let dx = a.grid.dx();
    let relative_l2 = (sum_sq * dx).sqrt() / b.norm_squared().sqrt();
    Ok(WaveDistance { relative_l2, linf })
}

/// One output time of [`evolve_compare`].
#[derive(Clone, Debug, Serialize)]
pub struct ComparisonSample<T> {
    pub t: T,
    pub relative_l2: T,
    pub linf: T,
    /// `Σρ dx - 1` before renormalization at the most recent step.
    pub norm_drift: T,
    pub reference_norm_drift: T,
    pub hamiltonian: T,
    pub reference_energy: T,
    pub width: T,
    pub reference_width: T,
}

/// Side-by-side run of the `(ρ, Φ)` flow and the Schrödinger reference.
#[derive(Clone, Debug, Serialize)]
pub struct ComparisonReport<T> {
    pub schema: u32,
    pub steps: usize,
    pub dt: T,
    pub samples: Vec<ComparisonSample<T>>,
    pub max_relative_l2: T,
    pub final_relative_l2: T,
    pub max_linf: T,
    /// Largest `|Σρ dx - 1|` seen before any renormalization.
    pub max_norm_drift: T,
    pub max_renormalization: T,
    /// Largest `|H(t) - H(0)| / |H(0)|` (absolute when `H(0) = 0`).
    pub max_hamiltonian_drift: T,
    /// Largest per-step change of the reference norm.
    pub max_reference_step_drift: T,
    pub floored_nodes: usize,
}

/// Evolves `(ρ0, Φ0)` with [`hamilton_step`] and `Ψ0 = √ρ0 exp(iΦ0/ħ)` with
/// [`schrodinger_step`] to time `t_final`, sampling `n_outputs + 1` equally
/// spaced times (including `t = 0`).
///
/// The number of steps is `ceil(t_final / dt)` and the step is shrunk to land
/// exactly on `t_final`.
pub fn evolve_compare<T: Real>(
    rho0: &DensityField<T>,
    phi0: &PhaseField<T>,
    spec: &HamiltonianSpec<T>,
    t_final: T,
    dt: T,
    n_outputs: usize,
) -> Result<ComparisonReport<T>> {
    let grid = shared_grid(rho0, phi0, spec)?.clone();
    if !(t_final >= T::zero() && t_final.is_finite()) {
        return Err(invalid("t_final", "must be nonnegative and finite"));
    }
    if !(dt > T::zero()) {
        return Err(invalid("dt", "must be positive"));
    }
    let n_outputs = n_outputs.max(1);
    let steps = if t_final == T::zero() {
        0
    } else {
        (t_final / dt - T::lit(1e-9))
            .ceil()
            .to_usize()
            .unwrap_or(1)
            .max(1)
    };
    let dt_eff = if steps == 0 {
        dt
    } else {
        t_final / T::from_count(steps)
    };

    let stepper = HamiltonStepper::new(&grid, spec, dt_eff)?;
    let reference = SplitStep::new(&grid, spec, dt_eff)?;
    let spectral = Spectral::new(&grid);

    let mut rho = rho0.clone();
    let mut phi = phi0.clone();
    let mut psi = to_wavefunction(&rho, &phi, spec)?;
    let h0 = stepper.energy(&rho, &phi)?;
    let relative = |h: T| {
        let d = Float::abs(h - h0);
        if h0 == T::zero() {
            d
        } else {
            d / Float::abs(h0)
        }
    };

    let mut report = ComparisonReport {
        schema: 1,
        steps,
        dt: dt_eff,
        samples: Vec::new(),
        max_relative_l2: T::zero(),
        final_relative_l2: T::zero(),
        max_linf: T::zero(),
        max_norm_drift: T::zero(),
        max_renormalization: T::zero(),
        max_hamiltonian_drift: T::zero(),
        max_reference_step_drift: T::zero(),
        floored_nodes: 0,
    };
    let record = |step: usize,
                  rho: &DensityField<T>,
                  phi: &PhaseField<T>,
                  psi: &WaveField<T>,
                  drift: T,
                  report: &mut ComparisonReport<T>|
     -> Result<()> {
        let ed = to_wavefunction(rho, phi, spec)?;
        let dist = aligned_distance(&ed, psi)?;
        let h = stepper.energy(rho, phi)?;
        report.samples.push(ComparisonSample {
            t: dt_eff * T::from_count(step),
            relative_l2: dist.relative_l2,
            linf: dist.linf,
            norm_drift: drift,
            reference_norm_drift: psi.norm_squared() - T::one(),
            hamiltonian: h,
            reference_energy: wave_energy_with(&spectral, psi, spec)?,
            width: rho.width(),
            reference_width: psi.width(),
        });
        report.max_relative_l2 = Float::max(report.max_relative_l2, dist.relative_l2);
        report.final_relative_l2 = dist.relative_l2;
        report.max_linf = Float::max(report.max_linf, dist.linf);
        report.max_hamiltonian_drift = Float::max(report.max_hamiltonian_drift, relative(h));
        Ok(())
    };

    record(0, &rho, &phi, &psi, T::zero(), &mut report)?;
    let mut next_output = 1;
    for step in 1..=steps {
        let (r, p, step_report) = stepper.step(&rho, &phi)?;
        let norm_before = psi.norm_squared();
        psi = reference.step(&psi)?;
        report.max_reference_step_drift = Float::max(
            report.max_reference_step_drift,
            Float::abs(psi.norm_squared() - norm_before),
        );
        let last_drift = step_report.mass_before_renormalization - T::one();
        report.max_norm_drift = Float::max(report.max_norm_drift, Float::abs(last_drift));
        report.max_renormalization =
            Float::max(report.max_renormalization, step_report.renormalization);
        report.floored_nodes += step_report.floored_nodes;
        rho = r;
        phi = p;
        if step * n_outputs >= next_output * steps {
            record(step, &rho, &phi, &psi, last_drift, &mut report)?;
            while next_output * steps <= step * n_outputs {
                next_output += 1;
            }
        }
    }
    Ok(report)
}

fn sig17<T: Real>(v: T) -> String {
    format!("{:.16e}", v)
}

/// Writes `x, rho, phi, re_psi, im_psi` rows after a `# schema: 1` line.
/// Numbers carry 17 significant digits.
pub fn write_snapshot_csv<T: Real, W: Write>(
    mut out: W,
    rho: &DensityField<T>,
    phi: &PhaseField<T>,
    spec: &HamiltonianSpec<T>,
) -> Result<()> {
    let psi = to_wavefunction(rho, phi, spec)?;
    writeln!(out, "# schema: 1")?;
    writeln!(out, "x,rho,phi,re_psi,im_psi")?;
    for (j, ((&r, &p), z)) in rho
        .values
        .iter()
        .zip(&phi.values)
        .zip(&psi.values)
        .enumerate()
    {
        writeln!(
            out,
            "{},{},{},{},{}",
            sig17(rho.grid.x(j)),
            sig17(r),
            sig17(p),
            sig17(z.re),
            sig17(z.im)
        )?;
    }
    Ok(())
}

/// Writes the time series of a comparison report as CSV.
pub fn write_comparison_csv<T: Real, W: Write>(
    mut out: W,
    report: &ComparisonReport<T>,
) -> Result<()> {
    writeln!(out, "# schema: 1")?;
    writeln!(
        out,
        "t,relative_l2,linf,norm_drift,reference_norm_drift,hamiltonian,reference_energy,width,reference_width"
    )?;
    for s in &report.samples {
        let row = [
            s.t,
            s.relative_l2,
            s.linf,
            s.norm_drift,
            s.reference_norm_drift,
            s.hamiltonian,
            s.reference_energy,
            s.width,
            s.reference_width,
        ];
        let cells: Vec<String> = row.iter().map(|&v| sig17(v)).collect();
        writeln!(out, "{}", cells.join(","))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(n: usize) -> Grid1D<f64> {
        Grid1D::new(-10.0, 10.0, n).unwrap()
    }

    #[test]
    fn grid_validation() {
        assert!(Grid1D::new(0.0, 1.0, 6).is_err());
        assert!(Grid1D::new(0.0, 1.0, 4).is_err());
        assert!(Grid1D::new(1.0, 1.0, 8).is_err());
        let g = Grid1D::new(0.0, 8.0, 8).unwrap();
        assert_eq!(g.dx(), 1.0);
        assert_eq!(g.points(), (0..8).map(|j| j as f64).collect::<Vec<_>>());
    }

    #[test]
    fn density_requires_normalization_and_floor() {
        let g = grid(16);
        assert!(matches!(
            DensityField::new(g.clone(), vec![1.0; 16]),
            Err(Error::NotNormalized { .. })
        ));
        let mut v = [1.0 / 20.0; 16];
        v[3] = 0.0;
        let s: f64 = v.iter().sum::<f64>() * g.dx();
        let v: Vec<f64> = v.iter().map(|x| x / s).collect();
        assert!(matches!(
            DensityField::new(g.clone(), v.clone()),
            Err(Error::DensityBelowFloor { index: 3, .. })
        ));
        let fixed = DensityField::normalize(g, v).unwrap();
        assert!(fixed.values()[3] >= fixed.floor() * (1.0 - 1e-9));
        assert!((fixed.mass() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn hbar_tied_to_xi() {
        let g = grid(16);
        let s = HamiltonianSpec::new(1.0, vec![0.0; 16], 0.125).unwrap();
        assert_eq!(s.hbar(), 1.0);
        let s = HamiltonianSpec::with_hbar(1.0, vec![0.0; 16], 0.7).unwrap();
        assert!((s.hbar() * s.hbar() - 8.0 * s.xi()).abs() <= 8.0 * f64::EPSILON * 8.0 * s.xi());
        assert!(HamiltonianSpec::new(0.0, vec![0.0; 16], 0.125).is_err());
        assert!(HamiltonianSpec::free(&g, 1.0).is_ok());
    }

    #[test]
    fn velocity_of_constant_phase_is_zero() {
        let g = grid(32);
        let spec = HamiltonianSpec::free(&g, 1.0).unwrap();
        let v = current_velocity(&PhaseField::constant(g, 3.0).unwrap(), &spec).unwrap();
        assert!(v.iter().all(|x| x.abs() < 1e-14));
    }

    #[test]
    fn velocity_of_plane_wave_phase() {
        let g = grid(32);
        let spec = HamiltonianSpec::free(&g, 2.0).unwrap();
        let p = 1.7;
        let v = current_velocity(&PhaseField::linear(g, p).unwrap(), &spec).unwrap();
        assert!(v.iter().all(|x| (x - p / 2.0).abs() < 1e-13));
    }

    #[test]
    fn velocity_of_sine_phase() {
        let g = Grid1D::new(0.0, 2.0 * std::f64::consts::PI, 64).unwrap();
        let m = 1.5;
        let spec = HamiltonianSpec::free(&g, m).unwrap();
        let phi = PhaseField::new(g.clone(), g.points().iter().map(|x| x.sin()).collect()).unwrap();
        let v = current_velocity(&phi, &spec).unwrap();
        for (x, vi) in g.points().iter().zip(v) {
            assert!((vi - x.cos() / m).abs() < 1e-6);
        }
    }

    #[test]
    fn grid_mismatch_is_reported() {
        let g = grid(32);
        let spec = HamiltonianSpec::free(&grid(16), 1.0).unwrap();
        assert!(matches!(
            current_velocity(&PhaseField::constant(g, 0.0).unwrap(), &spec),
            Err(Error::GridMismatch)
        ));
    }

    #[test]
    fn uniform_energy_is_potential_constant() {
        let g = grid(32);
        let rho = DensityField::uniform(g.clone());
        let phi = PhaseField::constant(g.clone(), 0.4).unwrap();
        let free = HamiltonianSpec::free(&g, 1.0).unwrap();
        assert!(ensemble_hamiltonian(&rho, &phi, &free).unwrap().abs() < 1e-14);
        let c = 2.5;
        let shifted = HamiltonianSpec::with_hbar(1.0, vec![c; 32], 1.0).unwrap();
        assert!((ensemble_hamiltonian(&rho, &phi, &shifted).unwrap() - c).abs() < 1e-12);
    }

    #[test]
    fn stationary_uniform_state() {
        let g = grid(32);
        let rho = DensityField::uniform(g.clone());
        let phi = PhaseField::constant(g.clone(), 0.0).unwrap();
        let spec = HamiltonianSpec::free(&g, 1.0).unwrap();
        let dt = stability_bound(&g, &spec);
        let (r, p, rep) = hamilton_step(&rho, &phi, &spec, dt).unwrap();
        for (a, b) in r.values().iter().zip(rho.values()) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!(p.values().iter().all(|x| x.abs() < 1e-14));
        assert_eq!(rep.floored_nodes, 0);
    }

    #[test]
    fn step_rejects_large_dt() {
        let g = grid(32);
        let rho = DensityField::uniform(g.clone());
        let phi = PhaseField::constant(g.clone(), 0.0).unwrap();
        let spec = HamiltonianSpec::free(&g, 1.0).unwrap();
        let dt = 1.01 * stability_bound(&g, &spec);
        assert!(matches!(
            hamilton_step(&rho, &phi, &spec, dt),
            Err(Error::StabilityBound { .. })
        ));
        assert!(hamilton_step(&rho, &phi, &spec, 0.0).is_err());
    }

    #[test]
    fn wavefunction_with_zero_phase_is_sqrt_density() {
        let g = grid(64);
        let rho = DensityField::gaussian(g.clone(), 0.0, 1.0).unwrap();
        let phi = PhaseField::constant(g.clone(), 0.0).unwrap();
        let spec = HamiltonianSpec::free(&g, 1.0).unwrap();
        let psi = to_wavefunction(&rho, &phi, &spec).unwrap();
        for (z, r) in psi.values().iter().zip(rho.values()) {
            assert_eq!(z.im, 0.0);
            assert!((z.re - r.sqrt()).abs() < 1e-15);
            assert!((z.norm_sqr() - r).abs() < 1e-12);
        }
        let (r2, p2) = from_wavefunction(&psi, &spec).unwrap();
        assert!(p2.values().iter().all(|x| x.abs() < 1e-15));
        for (a, b) in r2.values().iter().zip(rho.values()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn plane_wave_phase_is_unwrapped() {
        let l = 10.0;
        let g = Grid1D::new(0.0, l, 64).unwrap();
        let hbar = 1.0;
        let p = 2.0 * std::f64::consts::PI * 7.0 / l;
        let values = g
            .points()
            .iter()
            .map(|&x| Complex::from_polar(1.0 / l.sqrt(), p * x / hbar))
            .collect();
        let psi = WaveField::new(g.clone(), values).unwrap();
        let spec = HamiltonianSpec::free(&g, 1.0).unwrap();
        let (_, phi) = from_wavefunction(&psi, &spec).unwrap();
        for (x, v) in g.points().iter().zip(phi.values()) {
            assert!((v - p * x).abs() < 1e-9, "{x}: {v} vs {}", p * x);
        }
        assert!((phi.winding() - p * l).abs() < 1e-9);
        let v = current_velocity(&phi, &spec).unwrap();
        assert!(v.iter().all(|vi| (vi - p).abs() < 1e-9));
    }

    #[test]
    fn node_is_rejected() {
        let g = grid(64);
        let values: Vec<Complex<f64>> = g
            .points()
            .iter()
            .map(|&x| Complex::new(x * (-x * x / 4.0).exp(), 0.0))
            .collect();
        let psi = WaveField::normalize(g.clone(), values).unwrap();
        let spec = HamiltonianSpec::free(&g, 1.0).unwrap();
        match from_wavefunction(&psi, &spec) {
            Err(Error::Nodes { indices, positions }) => {
                assert!(indices.contains(&32));
                assert!(positions.contains(&0.0));
            }
            other => panic!("expected nodes, got {other:?}"),
        }
    }

    #[test]
    fn split_step_zero_dt_is_identity() {
        let g = grid(64);
        let spec = HamiltonianSpec::harmonic(&g, 1.0, 1.0, 0.0).unwrap();
        let psi = WaveField::gaussian(g, 0.5, 1.0, 0.3, 1.0).unwrap();
        assert_eq!(schrodinger_step(&psi, &spec, 0.0).unwrap(), psi);
    }

    #[test]
    fn split_step_plane_wave_dispersion() {
        let l = 2.0 * std::f64::consts::PI;
        let g = Grid1D::new(0.0, l, 32).unwrap();
        let m = 1.3;
        let spec = HamiltonianSpec::free(&g, m).unwrap();
        let k = 3.0;
        let values = g
            .points()
            .iter()
            .map(|&x| Complex::from_polar(1.0 / l.sqrt(), k * x))
            .collect();
        let psi = WaveField::new(g, values).unwrap();
        let dt = 0.37;
        let next = schrodinger_step(&psi, &spec, dt).unwrap();
        let phase = Complex::from_polar(1.0, -k * k * dt / (2.0 * m));
        for (a, b) in next.values().iter().zip(psi.values()) {
            assert!((a - b * phase).norm() < 1e-12);
            assert!((a.norm() - b.norm()).abs() < 1e-12);
        }
    }

    #[test]
    fn split_step_is_unitary() {
        let g = grid(128);
        let spec = HamiltonianSpec::harmonic(&g, 1.0, 1.0, 0.0).unwrap();
        let mut psi = WaveField::gaussian(g, 1.0, 0.8, 0.5, 1.0).unwrap();
        for _ in 0..50 {
            let next = schrodinger_step(&psi, &spec, 0.01).unwrap();
            assert!((next.norm_squared() - psi.norm_squared()).abs() < 1e-12);
            psi = next;
        }
    }

    #[test]
    fn snapshot_csv_layout() {
        let g = Grid1D::new(0.0, 8.0, 8).unwrap();
        let rho = DensityField::uniform(g.clone());
        let phi = PhaseField::constant(g.clone(), 0.0).unwrap();
        let spec = HamiltonianSpec::free(&g, 1.0).unwrap();
        let mut buf = Vec::new();
        write_snapshot_csv(&mut buf, &rho, &phi, &spec).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("# schema: 1"));
        assert_eq!(lines.next(), Some("x,rho,phi,re_psi,im_psi"));
        let row: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(row[1], "1.2500000000000000e-1");
        assert_eq!(text.lines().count(), 10);
    }

    #[test]
    fn wrap_angle_range() {
        for a in [-7.0, -3.2, -1.0, 0.0, 1.0, 3.2, 7.0, std::f64::consts::PI] {
            let w = wrap_angle(a);
            assert!(w > -std::f64::consts::PI - 1e-15 && w <= std::f64::consts::PI + 1e-15);
            assert!(((a - w) / (2.0 * std::f64::consts::PI)).fract().abs() < 1e-12);
        }
    }
}
