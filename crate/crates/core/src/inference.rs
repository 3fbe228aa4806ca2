//! Finite-dimensional states and operators, pointer devices that map an
//! observable's eigenbasis onto position cells, Bayesian detection updates,
//! weak values, and the distribution utilities built on them.

use std::fmt::Debug;

use nalgebra::DMatrix;
use num_complex::Complex;
use num_traits::{Float, One, Zero};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::scalar::Real;

/// Dense complex matrix.
pub type CMatrix<T> = DMatrix<Complex<T>>;

/// Tolerance of the eigensolver: orthonormality and residuals are at least
/// this good.
pub const EIGEN_TOLERANCE: f64 = 1e-10;

/// Largest `‖A - A†‖` accepted (and then symmetrized away).
pub const HERMITICITY_TOLERANCE: f64 = 1e-8;

/// Smallest `|⟨post|pre⟩|` accepted by [`weak_value`].
pub const MIN_OVERLAP: f64 = 1e-12;

/// Maximum absolute deviation from the product of marginals tolerated by
/// [`independence_check`].
pub const INDEPENDENCE_TOLERANCE: f64 = 1e-10;

fn czero<T: Real>() -> Complex<T> {
    Complex::new(T::zero(), T::zero())
}

fn norm_sqr<T: Real>(v: &[Complex<T>]) -> T {
    v.iter().map(|z| z.norm_sqr()).sum()
}

fn inner<T: Real>(a: &[Complex<T>], b: &[Complex<T>]) -> Complex<T> {
    a.iter()
        .zip(b)
        .fold(czero(), |acc, (x, y)| acc + x.conj() * y)
}

/// Normalized pure state `Σ c_a |a⟩`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StateVector<T> {
    amplitudes: Vec<Complex<T>>,
}

impl<T: Real> StateVector<T> {
    pub fn new(amplitudes: Vec<Complex<T>>) -> Result<Self> {
        check_amplitudes(&amplitudes)?;
        let total = norm_sqr(&amplitudes);
        if Float::abs(total - T::one()) > T::tol(1e-12) {
            return Err(Error::NotNormalized {
                total: total.as_f64(),
            });
        }
        Ok(Self { amplitudes })
    }

    pub fn normalize(mut amplitudes: Vec<Complex<T>>) -> Result<Self> {
        check_amplitudes(&amplitudes)?;
        let total = norm_sqr(&amplitudes);
        if !(total > T::zero()) {
            return Err(invalid("amplitudes", "state must be nonzero"));
        }
        let s = total.sqrt().recip();
        amplitudes.iter_mut().for_each(|z| *z *= s);
        Ok(Self { amplitudes })
    }

    /// Computational basis vector `|index⟩`.
    pub fn basis(dim: usize, index: usize) -> Result<Self> {
        if index >= dim {
            return Err(Error::IndexOutOfRange { index, size: dim });
        }
        let mut amplitudes = vec![czero(); dim];
        amplitudes[index] = Complex::one();
        Ok(Self { amplitudes })
    }

    /// Haar-random state from complex Gaussian amplitudes.
    pub fn random(dim: usize, seed: u64) -> Result<Self> {
        if dim == 0 {
            return Err(invalid("dim", "must be positive"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let amplitudes = (0..dim)
            .map(|_| Complex::new(T::standard_normal(&mut rng), T::standard_normal(&mut rng)))
            .collect();
        Self::normalize(amplitudes)
    }

    pub fn dim(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn amplitudes(&self) -> &[Complex<T>] {
        &self.amplitudes
    }

    /// `⟨self|other⟩`.
    pub fn inner(&self, other: &Self) -> Result<Complex<T>> {
        check_dim(self.dim(), other.dim())?;
        Ok(inner(&self.amplitudes, &other.amplitudes))
    }

    /// `⟨ψ|A|ψ⟩`.
    pub fn expectation(&self, op: &HermitianOperator<T>) -> Result<T> {
        check_dim(op.dim(), self.dim())?;
        let applied = mat_vec(&op.matrix, &self.amplitudes);
        Ok(inner(&self.amplitudes, &applied).re)
    }
}

fn check_amplitudes<T: Real>(amplitudes: &[Complex<T>]) -> Result<()> {
    if amplitudes.is_empty() {
        return Err(invalid(
            "amplitudes",
            "state must have at least one component",
        ));
    }
    match amplitudes
        .iter()
        .position(|z| !(z.re.is_finite() && z.im.is_finite()))
    {
        Some(index) => Err(Error::NonFinite {
            what: "amplitudes",
            index,
        }),
        None => Ok(()),
    }
}

fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, found })
    }
}

pub(crate) fn mat_vec<T: Real>(m: &CMatrix<T>, v: &[Complex<T>]) -> Vec<Complex<T>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).fold(czero(), |acc, j| acc + m[(i, j)] * v[j]))
        .collect()
}

pub(crate) fn adjoint<T: Real>(m: &CMatrix<T>) -> CMatrix<T> {
    m.map(|z| z.conj()).transpose()
}

/// Largest entry of `|A - B|`.
pub fn max_abs_diff<T: Real>(a: &CMatrix<T>, b: &CMatrix<T>) -> T {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).norm())
        .fold(T::zero(), Float::max)
}

/// Largest deviation of `U U†` from the identity.
pub fn unitarity_deviation<T: Real>(u: &CMatrix<T>) -> T {
    let product = u * adjoint(u);
    max_abs_diff(&product, &CMatrix::identity(u.nrows(), u.ncols()))
}

/// Eigenvalues in ascending order with eigenvectors as matching columns.
#[derive(Clone, Debug)]
pub struct Eigen<T: Real> {
    pub values: Vec<T>,
    pub vectors: CMatrix<T>,
}

/// Cyclic complex Jacobi diagonalization of a Hermitian matrix.
///
/// Each rotation first removes the phase of `a_pq`, then applies the real
/// symmetric Jacobi rotation. Eigenvectors are sorted by ascending
/// eigenvalue and phase-fixed so the first component with modulus above
/// [`EIGEN_TOLERANCE`] is real and positive.
pub fn hermitian_eigen<T: Real>(matrix: &CMatrix<T>) -> Eigen<T> {
    let n = matrix.nrows();
    let mut a = matrix.clone();
    let mut v = CMatrix::<T>::identity(n, n);
    let scale = a.iter().map(|z| z.norm_sqr()).sum::<T>().sqrt();
    let threshold = T::epsilon() * scale;
    for _sweep in 0..100 {
        let off = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[(i, j)].norm_sqr())
            .sum::<T>()
            .sqrt();
        if off <= threshold {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                let r = apq.norm();
                if r <= T::min_positive_value() || r <= threshold * T::lit(1e-3) {
                    continue;
                }
                let e = apq / r;
                let theta = (a[(q, q)].re - a[(p, p)].re) / (T::lit(2.0) * r);
                let t =
                    Float::signum(theta) / (Float::abs(theta) + (theta * theta + T::one()).sqrt());
                let c = (t * t + T::one()).sqrt().recip();
                let s = t * c;
                let ec = e.conj();
                // Columns p, q of the rotation G: (c, -s e*) and (s, c e*).
                let gpp = Complex::new(c, T::zero());
                let gqp = ec * (-s);
                let gpq = Complex::new(s, T::zero());
                let gqq = ec * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = akp * gpp + akq * gqp;
                    a[(k, q)] = akp * gpq + akq * gqq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = gpp.conj() * apk + gqp.conj() * aqk;
                    a[(q, k)] = gpq.conj() * apk + gqq.conj() * aqk;
                }
                a[(p, q)] = czero();
                a[(q, p)] = czero();
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = vkp * gpp + vkq * gqp;
                    v[(k, q)] = vkp * gpq + vkq * gqq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        a[(i, i)]
            .re
            .partial_cmp(&a[(j, j)].re)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(i.cmp(&j))
    });
    let values = order.iter().map(|&i| a[(i, i)].re).collect();
    let mut vectors = CMatrix::zeros(n, n);
    for (col, &i) in order.iter().enumerate() {
        let mut column: Vec<Complex<T>> = (0..n).map(|k| v[(k, i)]).collect();
        phase_fix(&mut column);
        for (k, z) in column.into_iter().enumerate() {
            vectors[(k, col)] = z;
        }
    }
    Eigen { values, vectors }
}

/// Rotates `v` so its first component with modulus above the eigensolver
/// tolerance is real and positive.
pub fn phase_fix<T: Real>(v: &mut [Complex<T>]) {
    let tol = T::tol(EIGEN_TOLERANCE);
    if let Some(z) = v.iter().find(|z| z.norm() > tol).copied() {
        let rot = z.conj() / z.norm();
        v.iter_mut().for_each(|w| *w *= rot);
    }
}

/// Hermitian operator with its cached eigendecomposition.
#[derive(Clone, Debug)]
pub struct HermitianOperator<T: Real> {
    matrix: CMatrix<T>,
    eigen: Eigen<T>,
}

impl<T: Real> HermitianOperator<T> {
    /// Symmetrizes to `(A + A†)/2`; inputs further than
    /// [`HERMITICITY_TOLERANCE`] from Hermitian are rejected.
    pub fn new(matrix: CMatrix<T>) -> Result<Self> {
        if matrix.nrows() != matrix.ncols() || matrix.nrows() == 0 {
            return Err(invalid("matrix", "must be square and nonempty"));
        }
        if let Some(index) = matrix
            .iter()
            .position(|z| !(z.re.is_finite() && z.im.is_finite()))
        {
            return Err(Error::NonFinite {
                what: "matrix",
                index,
            });
        }
        let dagger = adjoint(&matrix);
        let deviation = max_abs_diff(&matrix, &dagger);
        if deviation > T::lit(HERMITICITY_TOLERANCE) {
            return Err(Error::NotHermitian {
                deviation: deviation.as_f64(),
            });
        }
        if deviation > T::zero() {
            log::debug!("symmetrized operator, deviation {:e}", deviation.as_f64());
        }
        let half = T::lit(0.5);
        let matrix = (matrix + dagger).map(|z| z * half);
        let eigen = hermitian_eigen(&matrix);
        Ok(Self { matrix, eigen })
    }

    /// `Σ λ_a |a⟩⟨a|` from eigenvalues and orthonormal eigenvectors given as
    /// the columns of `basis`.
    pub fn from_spectrum(eigenvalues: &[T], basis: &CMatrix<T>) -> Result<Self> {
        check_dim(basis.ncols(), eigenvalues.len())?;
        check_orthonormal(basis)?;
        let diag = CMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
            eigenvalues.len(),
            eigenvalues.iter().map(|&l| Complex::new(l, T::zero())),
        ));
        Self::new(basis * diag * adjoint(basis))
    }

    /// Real diagonal operator.
    pub fn diagonal(values: &[T]) -> Result<Self> {
        let n = values.len();
        Self::from_spectrum(values, &CMatrix::identity(n, n))
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &CMatrix<T> {
        &self.matrix
    }

    pub fn eigenvalues(&self) -> &[T] {
        &self.eigen.values
    }

    /// Eigenvectors as columns, in the order of [`Self::eigenvalues`].
    pub fn eigenvectors(&self) -> &CMatrix<T> {
        &self.eigen.vectors
    }

    pub fn eigenvector(&self, index: usize) -> Vec<Complex<T>> {
        self.eigen.vectors.column(index).iter().copied().collect()
    }

    /// Distinct eigenvalues (within [`EIGEN_TOLERANCE`] relative to the
    /// spectral radius) with the indices of their eigenvectors.
    pub fn eigenspaces(&self) -> Vec<(T, Vec<usize>)> {
        group_eigenvalues(&self.eigen.values)
    }
}

pub(crate) fn group_eigenvalues<T: Real>(values: &[T]) -> Vec<(T, Vec<usize>)> {
    let radius = values
        .iter()
        .map(|&v| Float::abs(v))
        .fold(T::one(), Float::max);
    let tol = T::tol(EIGEN_TOLERANCE) * radius;
    let mut groups: Vec<(T, Vec<usize>)> = Vec::new();
    for (i, &v) in values.iter().enumerate() {
        match groups.last_mut() {
            Some((first, members)) if Float::abs(v - *first) <= tol => members.push(i),
            _ => groups.push((v, vec![i])),
        }
    }
    groups
}

fn check_orthonormal<T: Real>(basis: &CMatrix<T>) -> Result<()> {
    if basis.nrows() != basis.ncols() {
        return Err(invalid("basis", "must be square"));
    }
    let gram = adjoint(basis) * basis;
    let deviation = max_abs_diff(&gram, &CMatrix::identity(basis.nrows(), basis.ncols()));
    if deviation > T::tol(EIGEN_TOLERANCE) {
        return Err(Error::NotOrthonormal {
            deviation: deviation.as_f64(),
        });
    }
    Ok(())
}

/// Probability distribution over distinct labels.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DiscreteDistribution<L, T> {
    labels: Vec<L>,
    probabilities: Vec<T>,
}

impl<L: Clone + PartialEq + Debug, T: Real> DiscreteDistribution<L, T> {
    pub fn new(labels: Vec<L>, probabilities: Vec<T>) -> Result<Self> {
        check_dim(labels.len(), probabilities.len())?;
        if labels.is_empty() {
            return Err(invalid("labels", "distribution needs at least one label"));
        }
        for (i, l) in labels.iter().enumerate() {
            if labels[..i].contains(l) {
                return Err(invalid("labels", format!("duplicate label {l:?}")));
            }
        }
        if let Some(index) = probabilities
            .iter()
            .position(|p| !(p.is_finite() && *p >= T::zero()))
        {
            return Err(invalid(
                "probabilities",
                format!("entry {index} is negative or not finite"),
            ));
        }
        let total: T = probabilities.iter().copied().sum();
        if Float::abs(total - T::one()) > T::tol(1e-12) {
            return Err(Error::NotNormalized {
                total: total.as_f64(),
            });
        }
        Ok(Self {
            labels,
            probabilities,
        })
    }

    pub fn labels(&self) -> &[L] {
        &self.labels
    }

    pub fn probabilities(&self) -> &[T] {
        &self.probabilities
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn probability(&self, label: &L) -> Option<T> {
        self.labels
            .iter()
            .position(|l| l == label)
            .map(|i| self.probabilities[i])
    }

    /// `Σ p(l) f(l)`.
    pub fn mean_by(&self, f: impl Fn(&L) -> T) -> T {
        self.labels
            .iter()
            .zip(&self.probabilities)
            .map(|(l, &p)| p * f(l))
            .sum()
    }
}

/// Born distribution `p(a) = ‖P_a ψ‖²` over the distinct eigenvalues of `op`.
/// Degenerate eigenvalues are merged and labelled by the smallest member.
pub fn born_probabilities<T: Real>(
    state: &StateVector<T>,
    op: &HermitianOperator<T>,
) -> Result<DiscreteDistribution<T, T>> {
    check_dim(op.dim(), state.dim())?;
    let mut labels = Vec::new();
    let mut probs = Vec::new();
    for (value, members) in op.eigenspaces() {
        let p = members
            .iter()
            .map(|&i| inner(&op.eigenvector(i), &state.amplitudes).norm_sqr())
            .sum();
        labels.push(value);
        probs.push(p);
    }
    DiscreteDistribution::new(labels, probs)
}

/// Unitary that carries each source vector `|a_i⟩` onto the pointer state
/// `|x_i⟩` (the `i`-th computational basis vector).
#[derive(Clone, Debug, Serialize)]
pub struct PointerDevice<T: Real> {
    cells: Vec<String>,
    #[serde(skip)]
    source_basis: CMatrix<T>,
    #[serde(skip)]
    unitary: CMatrix<T>,
}

impl<T: Real> PointerDevice<T> {
    /// `source_basis` holds the orthonormal vectors `|a_i⟩` as columns.
    pub fn new(source_basis: CMatrix<T>, cells: Vec<String>) -> Result<Self> {
        check_dim(source_basis.ncols(), cells.len())?;
        check_orthonormal(&source_basis)?;
        check_cells(&cells)?;
        let unitary = adjoint(&source_basis);
        Ok(Self {
            cells,
            source_basis,
            unitary,
        })
    }

    /// Device for the eigenbasis of `op`, cells labelled `x0, x1, …`.
    pub fn from_operator(op: &HermitianOperator<T>) -> Result<Self> {
        Self::new(op.eigenvectors().clone(), default_cells(op.dim()))
    }

    /// Device whose source basis is the columns of a Haar-random unitary.
    pub fn random(dim: usize, seed: u64) -> Result<Self> {
        Self::new(random_unitary(dim, seed)?, default_cells(dim))
    }

    pub fn dim(&self) -> usize {
        self.cells.len()
    }

    pub fn cells(&self) -> &[String] {
        &self.cells
    }

    pub fn source_basis(&self) -> &CMatrix<T> {
        &self.source_basis
    }

    pub fn source_vector(&self, index: usize) -> Vec<Complex<T>> {
        self.source_basis.column(index).iter().copied().collect()
    }

    pub fn unitary(&self) -> &CMatrix<T> {
        &self.unitary
    }
}

fn default_cells(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("x{i}")).collect()
}

fn check_cells(cells: &[String]) -> Result<()> {
    for (i, c) in cells.iter().enumerate() {
        if cells[..i].contains(c) {
            return Err(invalid("cells", format!("duplicate pointer cell `{c}`")));
        }
    }
    Ok(())
}

/// Haar-random unitary by Gram-Schmidt on a complex Gaussian matrix.
pub fn random_unitary<T: Real>(dim: usize, seed: u64) -> Result<CMatrix<T>> {
    if dim == 0 {
        return Err(invalid("dim", "must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut columns: Vec<Vec<Complex<T>>> = Vec::with_capacity(dim);
    while columns.len() < dim {
        let mut v: Vec<Complex<T>> = (0..dim)
            .map(|_| Complex::new(T::standard_normal(&mut rng), T::standard_normal(&mut rng)))
            .collect();
        // Two passes keep the basis orthonormal to rounding.
        for _ in 0..2 {
            for c in &columns {
                let proj = inner(c, &v);
                v.iter_mut().zip(c).for_each(|(x, y)| *x -= proj * y);
            }
        }
        let n = norm_sqr(&v).sqrt();
        if n > T::lit(1e-6) {
            v.iter_mut().for_each(|x| *x /= n);
            columns.push(v);
        }
    }
    Ok(CMatrix::from_fn(dim, dim, |i, j| columns[j][i]))
}

/// Pointer distribution `p(x_i) = |(U ψ)_i|²`.
pub fn apply_device<T: Real>(
    state: &StateVector<T>,
    device: &PointerDevice<T>,
) -> Result<DiscreteDistribution<String, T>> {
    check_dim(device.dim(), state.dim())?;
    let out = mat_vec(&device.unitary, &state.amplitudes);
    let probs = out.iter().map(|z| z.norm_sqr()).collect();
    DiscreteDistribution::new(device.cells.clone(), probs)
}

/// Column-stochastic table `q(D | x)`: rows are outcomes, columns cells.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Likelihood<T> {
    outcomes: Vec<String>,
    table: Vec<Vec<T>>,
}

impl<T: Real> Likelihood<T> {
    /// `table[d][x] = q(D = d | x)`.
    pub fn new(outcomes: Vec<String>, table: Vec<Vec<T>>) -> Result<Self> {
        check_dim(outcomes.len(), table.len())?;
        check_cells(&outcomes)?;
        let n_cells = table.first().map_or(0, Vec::len);
        if n_cells == 0 {
            return Err(invalid("likelihood", "table must have at least one cell"));
        }
        for row in &table {
            check_dim(n_cells, row.len())?;
            if row.iter().any(|q| !(q.is_finite() && *q >= T::zero())) {
                return Err(invalid(
                    "likelihood",
                    "entries must be finite and nonnegative",
                ));
            }
        }
        for x in 0..n_cells {
            let total: T = table.iter().map(|row| row[x]).sum();
            if Float::abs(total - T::one()) > T::tol(1e-12) {
                return Err(invalid(
                    "likelihood",
                    format!("column {x} sums to {total}, not 1"),
                ));
            }
        }
        Ok(Self { outcomes, table })
    }

    /// Sharp detection: the outcome names the cell.
    pub fn identity(cells: &[String]) -> Result<Self> {
        let n = cells.len();
        let table = (0..n)
            .map(|d| {
                (0..n)
                    .map(|x| if d == x { T::one() } else { T::zero() })
                    .collect()
            })
            .collect();
        Self::new(cells.to_vec(), table)
    }

    /// Uninformative detection with `n_outcomes` equally likely outcomes.
    pub fn uniform(n_outcomes: usize, n_cells: usize) -> Result<Self> {
        if n_outcomes == 0 {
            return Err(invalid("n_outcomes", "must be positive"));
        }
        let q = T::from_count(n_outcomes).recip();
        let outcomes = (0..n_outcomes).map(|d| format!("d{d}")).collect();
        Self::new(outcomes, vec![vec![q; n_cells]; n_outcomes])
    }

    /// Gaussian readout noise binned on a detector scale: cell `x` sits at
    /// `positions[x]`, the reading is `N(position, σ²)`, and outcome `k`
    /// is the bin `[edges[k-1], edges[k])` with open outer bins, so there
    /// are `edges.len() + 1` outcomes.
    pub fn gaussian_binned(positions: &[T], sigma: T, edges: &[T]) -> Result<Self> {
        if !(sigma > T::zero() && sigma.is_finite()) {
            return Err(invalid("sigma", "must be positive and finite"));
        }
        if edges.windows(2).any(|w| !(w[1] > w[0])) || edges.iter().any(|e| !e.is_finite()) {
            return Err(invalid("edges", "must be finite and strictly increasing"));
        }
        let cdf = |z: T| T::lit(0.5 * libm::erfc(-z.as_f64() / std::f64::consts::SQRT_2));
        let n_out = edges.len() + 1;
        let mut table = vec![vec![T::zero(); positions.len()]; n_out];
        for (x, &mu) in positions.iter().enumerate() {
            let mut prev = T::zero();
            for (k, &e) in edges.iter().enumerate() {
                let c = cdf((e - mu) / sigma);
                table[k][x] = c - prev;
                prev = c;
            }
            table[edges.len()][x] = T::one() - prev;
        }
        let outcomes = (0..n_out).map(|k| format!("bin{k}")).collect();
        Self::new(outcomes, table)
    }

    pub fn outcomes(&self) -> &[String] {
        &self.outcomes
    }

    pub fn n_cells(&self) -> usize {
        self.table[0].len()
    }

    pub fn q(&self, outcome: usize, cell: usize) -> T {
        self.table[outcome][cell]
    }

    pub fn table(&self) -> &[Vec<T>] {
        &self.table
    }
}

/// Bayes update `p(x | D) = p(x) q(D | x) / q(D)`.
pub fn detection_update<L: Clone + PartialEq + Debug, T: Real>(
    prior: &DiscreteDistribution<L, T>,
    like: &Likelihood<T>,
    outcome: usize,
) -> Result<DiscreteDistribution<L, T>> {
    check_dim(like.n_cells(), prior.len())?;
    if outcome >= like.outcomes.len() {
        return Err(Error::IndexOutOfRange {
            index: outcome,
            size: like.outcomes.len(),
        });
    }
    let joint: Vec<T> = prior
        .probabilities
        .iter()
        .enumerate()
        .map(|(x, &p)| p * like.q(outcome, x))
        .collect();
    let evidence: T = joint.iter().copied().sum();
    if !(evidence > T::zero()) {
        return Err(Error::ImpossibleData { outcome });
    }
    let posterior = joint.into_iter().map(|j| j / evidence).collect();
    DiscreteDistribution::new(prior.labels.clone(), posterior)
}

/// Result of inferring an observable from position detections.
#[derive(Clone, Debug, Serialize)]
pub struct InferenceReport<T> {
    pub cells: Vec<String>,
    pub scalars: Vec<T>,
    /// Pointer distribution produced by the device.
    pub prior: Vec<T>,
    pub prior_mean: T,
    /// One posterior over cells per detection.
    pub posteriors: Vec<Vec<T>>,
    /// Average of the per-detection posteriors.
    pub pooled: Vec<T>,
    /// `Σ_x pooled(x) λ_x`.
    pub estimate: T,
}

/// Infers `⟨A⟩ = Σ λ_x p(x)` from detections on independent copies of
/// `state` passed through `device`. Each detection updates the device's
/// pointer distribution separately and the posteriors are pooled by
/// averaging.
pub fn infer_observable<T: Real>(
    state: &StateVector<T>,
    device: &PointerDevice<T>,
    scalars: &[T],
    like: &Likelihood<T>,
    detections: &[usize],
) -> Result<InferenceReport<T>> {
    if detections.is_empty() {
        return Err(invalid("detections", "need at least one detection"));
    }
    check_dim(device.dim(), scalars.len())?;
    let prior = apply_device(state, device)?;
    let mut pooled = vec![T::zero(); device.dim()];
    let mut posteriors = Vec::with_capacity(detections.len());
    for &d in detections {
        let post = detection_update(&prior, like, d)?;
        pooled
            .iter_mut()
            .zip(&post.probabilities)
            .for_each(|(acc, &p)| *acc += p);
        posteriors.push(post.probabilities);
    }
    let n = T::from_count(detections.len());
    pooled.iter_mut().for_each(|p| *p /= n);
    let dot = |p: &[T]| p.iter().zip(scalars).map(|(&a, &b)| a * b).sum::<T>();
    Ok(InferenceReport {
        cells: device.cells.clone(),
        scalars: scalars.to_vec(),
        prior_mean: dot(&prior.probabilities),
        estimate: dot(&pooled),
        prior: prior.probabilities,
        posteriors,
        pooled,
    })
}

/// Weak value `⟨post|A|pre⟩ / ⟨post|pre⟩`.
pub fn weak_value<T: Real>(
    pre: &StateVector<T>,
    post: &StateVector<T>,
    op: &HermitianOperator<T>,
) -> Result<Complex<T>> {
    check_dim(pre.dim(), post.dim())?;
    check_dim(op.dim(), pre.dim())?;
    let overlap = inner(&post.amplitudes, &pre.amplitudes);
    if !(overlap.norm() > T::lit(MIN_OVERLAP)) {
        return Err(Error::OrthogonalStates {
            overlap: overlap.norm().as_f64(),
        });
    }
    let applied = mat_vec(&op.matrix, &pre.amplitudes);
    Ok(inner(&post.amplitudes, &applied) / overlap)
}

/// Joint law `P(a, b) = p(a) δ(b - f(a))`, supported on the pairs
/// `(a, f(a))`.
pub fn function_joint<A, B, T>(
    p_a: &DiscreteDistribution<A, T>,
    f: impl Fn(&A) -> B,
) -> Result<DiscreteDistribution<(A, B), T>>
where
    A: Clone + PartialEq + Debug,
    B: Clone + PartialEq + Debug,
    T: Real,
{
    let labels = p_a.labels.iter().map(|a| (a.clone(), f(a))).collect();
    DiscreteDistribution::new(labels, p_a.probabilities.clone())
}

/// `Σ_b P(a, b)`, labels in order of first appearance.
pub fn marginal_first<A, B, T>(
    joint: &DiscreteDistribution<(A, B), T>,
) -> Result<DiscreteDistribution<A, T>>
where
    A: Clone + PartialEq + Debug,
    B: Clone + PartialEq + Debug,
    T: Real,
{
    marginal(joint, |(a, _)| a.clone())
}

/// `Σ_a P(a, b)`, labels in order of first appearance.
pub fn marginal_second<A, B, T>(
    joint: &DiscreteDistribution<(A, B), T>,
) -> Result<DiscreteDistribution<B, T>>
where
    A: Clone + PartialEq + Debug,
    B: Clone + PartialEq + Debug,
    T: Real,
{
    marginal(joint, |(_, b)| b.clone())
}

fn marginal<J, K, T>(
    joint: &DiscreteDistribution<J, T>,
    key: impl Fn(&J) -> K,
) -> Result<DiscreteDistribution<K, T>>
where
    J: Clone + PartialEq + Debug,
    K: Clone + PartialEq + Debug,
    T: Real,
{
    let mut labels: Vec<K> = Vec::new();
    let mut probs: Vec<T> = Vec::new();
    for (l, &p) in joint.labels.iter().zip(&joint.probabilities) {
        let k = key(l);
        match labels.iter().position(|x| *x == k) {
            Some(i) => probs[i] += p,
            None => {
                labels.push(k);
                probs.push(p);
            }
        }
    }
    DiscreteDistribution::new(labels, probs)
}

/// `D = ½ Σ |p₁ - p₂|` over a shared label list.
pub fn overlap_distance<L: Clone + PartialEq + Debug, T: Real>(
    p1: &DiscreteDistribution<L, T>,
    p2: &DiscreteDistribution<L, T>,
) -> Result<T> {
    if p1.labels != p2.labels {
        return Err(Error::LabelMismatch);
    }
    let l1: T = p1
        .probabilities
        .iter()
        .zip(&p2.probabilities)
        .map(|(&a, &b)| Float::abs(a - b))
        .sum();
    Ok(Float::min(T::lit(0.5) * l1, T::one()))
}

/// Outcome of comparing a joint law with the product of its marginals.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct IndependenceReport<T> {
    pub independent: bool,
    pub max_deviation: T,
}

/// Checks `P(x₁, x₂) = P(x₁) P(x₂)` on a rectangular support.
pub fn independence_check<A, B, T>(
    joint: &DiscreteDistribution<(A, B), T>,
) -> Result<IndependenceReport<T>>
where
    A: Clone + PartialEq + Debug,
    B: Clone + PartialEq + Debug,
    T: Real,
{
    let first = marginal_first(joint)?;
    let second = marginal_second(joint)?;
    if first.len() * second.len() != joint.len() {
        return Err(Error::NotRectangular);
    }
    let mut max_deviation = T::zero();
    for ((a, b), &p) in joint.labels.iter().zip(&joint.probabilities) {
        let pa = first.probability(a).ok_or(Error::NotRectangular)?;
        let pb = second.probability(b).ok_or(Error::NotRectangular)?;
        max_deviation = Float::max(max_deviation, Float::abs(p - pa * pb));
    }
    Ok(IndependenceReport {
        independent: max_deviation < T::lit(INDEPENDENCE_TOLERANCE),
        max_deviation,
    })
}

/// JSON form of a state: `{"amplitudes": [[re, im], …]}`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateJson {
    pub amplitudes: Vec<[f64; 2]>,
}

/// JSON form of an operator: `{"matrix": [[[re, im], …], …]}`, row-major.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperatorJson {
    pub matrix: Vec<Vec<[f64; 2]>>,
}

fn to_complex<T: Real>(pair: &[f64; 2]) -> Complex<T> {
    Complex::new(T::lit(pair[0]), T::lit(pair[1]))
}

impl StateJson {
    /// Normalizes the amplitudes.
    pub fn to_state<T: Real>(&self) -> Result<StateVector<T>> {
        StateVector::normalize(self.amplitudes.iter().map(to_complex).collect())
    }
}

impl OperatorJson {
    pub fn to_matrix<T: Real>(&self) -> Result<CMatrix<T>> {
        let n = self.matrix.len();
        for row in &self.matrix {
            check_dim(n, row.len())?;
        }
        Ok(CMatrix::from_fn(n, n, |i, j| {
            to_complex(&self.matrix[i][j])
        }))
    }

    pub fn to_operator<T: Real>(&self) -> Result<HermitianOperator<T>> {
        HermitianOperator::new(self.to_matrix()?)
    }
}

pub fn load_state<T: Real>(json: &str) -> Result<StateVector<T>> {
    serde_json::from_str::<StateJson>(json)?.to_state()
}

pub fn load_operator<T: Real>(json: &str) -> Result<HermitianOperator<T>> {
    serde_json::from_str::<OperatorJson>(json)?.to_operator()
}

/// `2 × 2` Pauli matrices, handy for small examples.
pub fn sigma<T: Real>(letter: char) -> Result<CMatrix<T>> {
    let o = Complex::<T>::one();
    let z = Complex::<T>::zero();
    let i = Complex::new(T::zero(), T::one());
    let m = match letter {
        'I' => [o, z, z, o],
        'X' => [z, o, o, z],
        'Y' => [z, -i, i, z],
        'Z' => [o, z, z, -o],
        _ => {
            return Err(invalid(
                "letter",
                format!("`{letter}` is not a Pauli letter"),
            ))
        }
    };
    Ok(CMatrix::from_row_slice(2, 2, &m))
}
