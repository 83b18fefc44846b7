//! Uncertain linear system, constraint sets, stage cost and scenario sampling.
//!
//! The transition map is `x⁺ = A(θ) x + B(θ) u + w` with affine parameter
//! templates `A(θ) = A₀ + Σ θ_j A_j`, `B(θ) = B₀ + Σ θ_j B_j` and independent
//! scalar distributions for every `θ_j` and every component of `w`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::error::{Error, Result};
use crate::rng::StreamKey;
use crate::scalar::Real;

/// Boundary band for polytope membership.
pub const MEMBERSHIP_TOLERANCE: f64 = 1e-9;

/// Scalar distribution of one uncertain parameter or noise component.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ScalarDistribution {
    /// Uniform on `[low, high]`; `low == high` is a point mass.
    Uniform { low: f64, high: f64 },
    /// Normal with the given mean and variance; zero variance is a point mass.
    Normal { mean: f64, variance: f64 },
}

impl ScalarDistribution {
    pub fn uniform(low: f64, high: f64) -> Self {
        Self::Uniform { low, high }
    }

    pub fn normal(mean: f64, variance: f64) -> Self {
        Self::Normal { mean, variance }
    }

    /// Point mass at `value`.
    pub fn constant(value: f64) -> Self {
        Self::Uniform {
            low: value,
            high: value,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Self::Uniform { low, high } => {
                if !low.is_finite() || !high.is_finite() {
                    return Err(Error::Config(format!("uniform bounds must be finite, got [{low}, {high}]")));
                }
                if low > high {
                    return Err(Error::Config(format!("uniform lower bound {low} exceeds upper bound {high}")));
                }
            }
            Self::Normal { mean, variance } => {
                if !mean.is_finite() || !variance.is_finite() {
                    return Err(Error::Config(format!("normal parameters must be finite, got N({mean}, {variance})")));
                }
                if variance < 0.0 {
                    return Err(Error::Config(format!("normal variance must be nonnegative, got {variance}")));
                }
            }
        }
        Ok(())
    }

    pub fn is_degenerate(&self) -> bool {
        match *self {
            Self::Uniform { low, high } => low == high,
            Self::Normal { variance, .. } => variance == 0.0,
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            Self::Uniform { low, high } => 0.5 * (low + high),
            Self::Normal { mean, .. } => mean,
        }
    }

    pub fn variance(&self) -> f64 {
        match *self {
            Self::Uniform { low, high } => (high - low).powi(2) / 12.0,
            Self::Normal { variance, .. } => variance,
        }
    }

    /// Whether `x` lies in the support.
    pub fn supports(&self, x: f64) -> bool {
        match *self {
            Self::Uniform { low, high } => (low..=high).contains(&x),
            Self::Normal { mean, variance } => variance > 0.0 || x == mean,
        }
    }

    /// Draws one value. Assumes [`validate`](Self::validate) passed.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            Self::Uniform { low, high } => {
                if low == high {
                    low
                } else {
                    Uniform::new_inclusive(low, high).expect("validated bounds").sample(rng)
                }
            }
            Self::Normal { mean, variance } => {
                if variance == 0.0 {
                    mean
                } else {
                    Normal::new(mean, variance.sqrt()).expect("validated variance").sample(rng)
                }
            }
        }
    }
}

/// Convex polyhedron `{ξ : Hξ ≤ h}`.
#[derive(Clone, Debug, PartialEq)]
pub struct Polytope<T: Real> {
    normals: DMatrix<T>,
    offsets: DVector<T>,
}

impl<T: Real> Polytope<T> {
    pub fn new(normals: DMatrix<T>, offsets: DVector<T>) -> Result<Self> {
        if normals.nrows() != offsets.len() {
            return Err(Error::Dimension {
                context: "polytope offsets",
                expected: normals.nrows(),
                actual: offsets.len(),
            });
        }
        if normals.iter().chain(offsets.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Config("polytope data must be finite".into()));
        }
        Ok(Self { normals, offsets })
    }

    /// The whole space `ℝ^dim` (no halfspaces).
    pub fn unconstrained(dim: usize) -> Self {
        Self {
            normals: DMatrix::zeros(0, dim),
            offsets: DVector::zeros(0),
        }
    }

    /// `{ξ : normalᵀξ ≤ offset}`.
    pub fn halfspace(normal: &[T], offset: T) -> Self {
        Self {
            normals: DMatrix::from_row_slice(1, normal.len(), normal),
            offsets: DVector::from_element(1, offset),
        }
    }

    /// Axis-aligned box `lower ≤ ξ ≤ upper`.
    pub fn bounds(lower: &[T], upper: &[T]) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::Dimension {
                context: "box bounds",
                expected: lower.len(),
                actual: upper.len(),
            });
        }
        let d = lower.len();
        let mut normals = DMatrix::zeros(2 * d, d);
        let mut offsets = DVector::zeros(2 * d);
        for i in 0..d {
            normals[(2 * i, i)] = T::one();
            offsets[2 * i] = upper[i];
            normals[(2 * i + 1, i)] = -T::one();
            offsets[2 * i + 1] = -lower[i];
        }
        Self::new(normals, offsets)
    }

    /// Intersection with another polytope of the same dimension.
    pub fn intersect(&self, other: &Self) -> Result<Self> {
        if self.dim() != other.dim() {
            return Err(Error::Dimension {
                context: "polytope intersection",
                expected: self.dim(),
                actual: other.dim(),
            });
        }
        let rows = self.facet_count() + other.facet_count();
        let mut normals = DMatrix::zeros(rows, self.dim());
        normals.rows_mut(0, self.facet_count()).copy_from(&self.normals);
        normals.rows_mut(self.facet_count(), other.facet_count()).copy_from(&other.normals);
        let offsets = DVector::from_iterator(rows, self.offsets.iter().chain(other.offsets.iter()).copied());
        Ok(Self { normals, offsets })
    }

    pub fn dim(&self) -> usize {
        self.normals.ncols()
    }

    pub fn facet_count(&self) -> usize {
        self.normals.nrows()
    }

    pub fn normals(&self) -> &DMatrix<T> {
        &self.normals
    }

    pub fn offsets(&self) -> &DVector<T> {
        &self.offsets
    }

    pub fn is_unconstrained(&self) -> bool {
        self.facet_count() == 0
    }

    /// `Hξ ≤ h + 1e-9` componentwise.
    pub fn contains(&self, point: &DVector<T>) -> Result<bool> {
        if point.len() != self.dim() {
            return Err(Error::Dimension {
                context: "polytope membership",
                expected: self.dim(),
                actual: point.len(),
            });
        }
        Ok(self.contains_unchecked(point))
    }

    pub(crate) fn contains_unchecked(&self, point: &DVector<T>) -> bool {
        let tol = T::lit(MEMBERSHIP_TOLERANCE);
        (0..self.facet_count()).all(|r| self.normals.row(r).dot(&point.transpose()) <= self.offsets[r] + tol)
    }
}

/// One draw of all uncertain influences at a single time step.
#[derive(Clone, Debug, PartialEq)]
pub struct UncertaintySample<T: Real> {
    pub theta: Vec<T>,
    pub noise: DVector<T>,
}

/// `(A, B, w)` for one uncertainty sample.
#[derive(Clone, Debug, PartialEq)]
pub struct SystemRealization<T: Real> {
    pub a: DMatrix<T>,
    pub b: DMatrix<T>,
    pub w: DVector<T>,
}

impl<T: Real> SystemRealization<T> {
    pub fn step(&self, x: &DVector<T>, u: &DVector<T>) -> DVector<T> {
        &self.a * x + &self.b * u + &self.w
    }
}

/// Affine-in-parameter stochastic linear system.
#[derive(Clone, Debug)]
pub struct SystemModel<T: Real> {
    a_terms: Vec<DMatrix<T>>,
    b_terms: Vec<DMatrix<T>>,
    parameter_dists: Vec<ScalarDistribution>,
    noise_dists: Vec<ScalarDistribution>,
}

impl<T: Real> SystemModel<T> {
    /// Nominal system `x⁺ = A₀x + B₀u` with zero noise and no parameters.
    pub fn new(a0: DMatrix<T>, b0: DMatrix<T>) -> Result<Self> {
        let n = a0.nrows();
        if a0.ncols() != n {
            return Err(Error::Dimension {
                context: "A₀ must be square",
                expected: n,
                actual: a0.ncols(),
            });
        }
        if b0.nrows() != n {
            return Err(Error::Dimension {
                context: "B₀ rows",
                expected: n,
                actual: b0.nrows(),
            });
        }
        Ok(Self {
            a_terms: vec![a0],
            b_terms: vec![b0],
            parameter_dists: Vec::new(),
            noise_dists: vec![ScalarDistribution::constant(0.0); n],
        })
    }

    /// Adds a parameter `θ_j ~ dist` entering as `θ_j A_j` and `θ_j B_j`.
    pub fn with_parameter(mut self, dist: ScalarDistribution, a_j: DMatrix<T>, b_j: DMatrix<T>) -> Result<Self> {
        dist.validate()?;
        if a_j.shape() != self.a_terms[0].shape() {
            return Err(Error::Config(format!(
                "parameter A-template has shape {:?}, expected {:?}",
                a_j.shape(),
                self.a_terms[0].shape()
            )));
        }
        if b_j.shape() != self.b_terms[0].shape() {
            return Err(Error::Config(format!(
                "parameter B-template has shape {:?}, expected {:?}",
                b_j.shape(),
                self.b_terms[0].shape()
            )));
        }
        self.parameter_dists.push(dist);
        self.a_terms.push(a_j);
        self.b_terms.push(b_j);
        Ok(self)
    }

    /// Sets one independent distribution per component of `w`.
    pub fn with_noise(mut self, dists: Vec<ScalarDistribution>) -> Result<Self> {
        if dists.len() != self.state_dim() {
            return Err(Error::Dimension {
                context: "noise distributions",
                expected: self.state_dim(),
                actual: dists.len(),
            });
        }
        for d in &dists {
            d.validate()?;
        }
        self.noise_dists = dists;
        Ok(self)
    }

    pub fn state_dim(&self) -> usize {
        self.a_terms[0].nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.b_terms[0].ncols()
    }

    pub fn parameter_count(&self) -> usize {
        self.parameter_dists.len()
    }

    pub fn parameter_dists(&self) -> &[ScalarDistribution] {
        &self.parameter_dists
    }

    pub fn noise_dists(&self) -> &[ScalarDistribution] {
        &self.noise_dists
    }

    /// True iff some parameter template `A_j` or `B_j` (j ≥ 1) is nonzero.
    pub fn is_multiplicative(&self) -> bool {
        self.a_terms[1..]
            .iter()
            .chain(&self.b_terms[1..])
            .any(|m| m.iter().any(|v| *v != T::zero()))
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> UncertaintySample<T> {
        let theta = self.parameter_dists.iter().map(|d| T::lit(d.sample(rng))).collect();
        let noise = DVector::from_iterator(self.state_dim(), self.noise_dists.iter().map(|d| T::lit(d.sample(rng))));
        UncertaintySample { theta, noise }
    }

    pub fn realize(&self, sample: &UncertaintySample<T>) -> SystemRealization<T> {
        let mut a = self.a_terms[0].clone();
        let mut b = self.b_terms[0].clone();
        for (j, theta) in sample.theta.iter().enumerate() {
            a += &self.a_terms[j + 1] * *theta;
            b += &self.b_terms[j + 1] * *theta;
        }
        SystemRealization {
            a,
            b,
            w: sample.noise.clone(),
        }
    }

    /// Mean-parameter, zero-noise realization.
    pub fn nominal(&self) -> SystemRealization<T> {
        let sample = UncertaintySample {
            theta: self.parameter_dists.iter().map(|d| T::lit(d.mean())).collect(),
            noise: DVector::from_iterator(self.state_dim(), self.noise_dists.iter().map(|d| T::lit(d.mean()))),
        };
        self.realize(&sample)
    }
}

/// Quadratic stage cost `ℓ(ξ, υ) = ‖Q_ℓ ξ‖² + ‖R_ℓ υ‖²`.
#[derive(Clone, Debug, PartialEq)]
pub struct StageCost<T: Real> {
    state: DMatrix<T>,
    input: DMatrix<T>,
}

impl<T: Real> StageCost<T> {
    /// `state` and `input` are the weights applied inside the norms. Both must
    /// be symmetric positive semidefinite.
    pub fn new(state: DMatrix<T>, input: DMatrix<T>) -> Result<Self> {
        check_psd(&state, "state weight")?;
        check_psd(&input, "input weight")?;
        Ok(Self { state, input })
    }

    pub fn identity(n: usize, m: usize) -> Self {
        Self {
            state: DMatrix::identity(n, n),
            input: DMatrix::identity(m, m),
        }
    }

    pub fn state_weight(&self) -> &DMatrix<T> {
        &self.state
    }

    pub fn input_weight(&self) -> &DMatrix<T> {
        &self.input
    }

    /// `Q_ℓᵀ Q_ℓ`
    pub fn state_gram(&self) -> DMatrix<T> {
        self.state.transpose() * &self.state
    }

    /// `R_ℓᵀ R_ℓ`
    pub fn input_gram(&self) -> DMatrix<T> {
        self.input.transpose() * &self.input
    }

    pub fn eval(&self, x: &DVector<T>, u: &DVector<T>) -> T {
        (&self.state * x).norm_squared() + (&self.input * u).norm_squared()
    }

    /// Largest eigenvalue over both Gram matrices.
    pub fn max_eigenvalue(&self) -> T {
        let top = |m: DMatrix<T>| {
            if m.nrows() == 0 {
                T::zero()
            } else {
                m.symmetric_eigenvalues().max()
            }
        };
        top(self.state_gram()).max(top(self.input_gram()))
    }
}

fn check_psd<T: Real>(m: &DMatrix<T>, what: &str) -> Result<()> {
    if !m.is_square() {
        return Err(Error::Config(format!("{what} must be square, got {:?}", m.shape())));
    }
    let scale = m.amax().max(T::one());
    let sym_tol = T::lit(1e-10) * scale;
    for i in 0..m.nrows() {
        for j in 0..i {
            if (m[(i, j)] - m[(j, i)]).abs() > sym_tol {
                return Err(Error::Config(format!("{what} must be symmetric")));
            }
        }
    }
    if m.nrows() > 0 && m.clone().symmetric_eigenvalues().min() < T::lit(-1e-10) * scale {
        return Err(Error::Config(format!("{what} must be positive semidefinite")));
    }
    Ok(())
}

/// Chance constraint `P[x_{t+1} ∉ X_j] ≤ ε_j` with its support-rank bound.
#[derive(Clone, Debug, PartialEq)]
pub struct ChanceConstraintSpec<T: Real> {
    pub set: Polytope<T>,
    pub epsilon: T,
    pub rho1: usize,
}

impl<T: Real> ChanceConstraintSpec<T> {
    /// Validates `ε ∈ (0, 0.5)` and `1 ≤ ρ₁ ≤ min(n, N·m)`.
    pub fn new(set: Polytope<T>, epsilon: T, rho1: usize, state_dim: usize, decision_dim: usize) -> Result<Self> {
        if !(epsilon > T::zero() && epsilon < T::lit(0.5)) {
            return Err(Error::Config(format!("epsilon must lie in (0, 0.5), got {}", epsilon)));
        }
        let cap = state_dim.min(decision_dim);
        if rho1 == 0 || rho1 > cap {
            return Err(Error::Config(format!("support-rank bound must lie in [1, {cap}], got {rho1}")));
        }
        if set.dim() != state_dim {
            return Err(Error::Dimension {
                context: "chance constraint set",
                expected: state_dim,
                actual: set.dim(),
            });
        }
        Ok(Self { set, epsilon, rho1 })
    }
}

/// One full-horizon sample: a realization per prediction stage.
#[derive(Clone, Debug, PartialEq)]
pub struct Scenario<T: Real> {
    pub stages: Vec<SystemRealization<T>>,
}

impl<T: Real> Scenario<T> {
    pub fn horizon(&self) -> usize {
        self.stages.len()
    }
}

/// Draws scenario `lane` of the stream: `horizon` i.i.d. realizations.
pub fn sample_scenario<T: Real>(model: &SystemModel<T>, horizon: usize, key: StreamKey) -> Scenario<T> {
    let mut rng = key.rng();
    Scenario {
        stages: (0..horizon).map(|_| model.realize(&model.draw(&mut rng))).collect(),
    }
}

/// Draws `count` scenarios of length `horizon`. Scenario `k` comes from lane
/// `k` of `key`, so a prefix of a larger draw equals a smaller draw.
pub fn sample_scenarios<T: Real>(
    model: &SystemModel<T>,
    count: usize,
    horizon: usize,
    key: StreamKey,
) -> Result<Vec<Scenario<T>>> {
    if count == 0 {
        return Err(Error::Usage("scenario count must be at least 1".into()));
    }
    if horizon == 0 {
        return Err(Error::Usage("horizon must be at least 1".into()));
    }
    Ok((0..count)
        .map(|k| sample_scenario(model, horizon, key.lane(k as u64)))
        .collect())
}
