//! Sample complexity of scenario programs with a-posteriori removal.
//!
//! For a sample-removal pair `(K, R)` and a support-rank bound `ρ₁`, the
//! probability that the first-step violation exceeds `ν` is bounded by
//!
//! ```text
//! U(ν) = min{1, C(R+ρ₁−1, R) · B(ν; K, R+ρ₁−1)},   B(ν; K, q) = Σ_{j≤q} C(K,j) νʲ (1−ν)^{K−j}
//! ```
//!
//! and the expected violation is bounded by `∫₀¹ U(ν) dν`. A pair is
//! admissible for level `ε` when that integral is at most `ε`.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::model::{Polytope, SystemModel};
use crate::quadrature::{adaptive_simpson, MAX_DEPTH};
use crate::scalar::{CompensatedSum, Real};
use crate::special::{ln_binomial, ln_binomial_pmf};

/// `B(ν) = exp(scale) · mantissa`, kept split so tiny tails survive.
#[derive(Clone, Copy, Debug)]
struct Tail<T> {
    ln_scale: T,
    mantissa: T,
}

impl<T: Real> Tail<T> {
    fn value(self) -> T {
        self.ln_scale.exp() * self.mantissa
    }

    fn ln(self) -> T {
        self.ln_scale + self.mantissa.ln()
    }
}

fn check_tail_args<T: Real>(nu: T, samples: usize, q: usize) -> Result<()> {
    if q > samples {
        return Err(Error::Usage(format!("binomial tail needs q <= K, got q={q}, K={samples}")));
    }
    if !(nu >= T::zero() && nu <= T::one()) {
        return Err(Error::Usage(format!("violation level must lie in [0, 1], got {nu}")));
    }
    Ok(())
}

fn binomial_tail<T: Real>(nu: T, samples: usize, q: usize) -> Tail<T> {
    let one = Tail {
        ln_scale: T::zero(),
        mantissa: T::one(),
    };
    if q >= samples || nu == T::zero() {
        return one;
    }
    if nu == T::one() {
        return Tail {
            ln_scale: T::zero(),
            mantissa: T::zero(),
        };
    }
    let eps = T::default_epsilon();
    let odds = nu / (T::one() - nu);
    let kf = T::from_usize_lossy(samples);
    if T::from_usize_lossy(q) < kf * nu {
        // lower tail: terms shrink moving down from j = q
        let ln_top = ln_binomial_pmf(q, samples, nu);
        let mut sum = CompensatedSum::new();
        sum.add(T::one());
        let mut term = T::one();
        for j in (1..=q).rev() {
            term *= T::from_usize_lossy(j) / (T::from_usize_lossy(samples - j + 1) * odds);
            sum.add(term);
            if term < eps * eps {
                break;
            }
        }
        Tail {
            ln_scale: ln_top,
            mantissa: sum.value(),
        }
    } else {
        // complement: terms shrink moving up from j = q + 1
        let ln_first = ln_binomial_pmf(q + 1, samples, nu);
        let mut sum = CompensatedSum::new();
        sum.add(T::one());
        let mut term = T::one();
        for j in (q + 1)..samples {
            term *= T::from_usize_lossy(samples - j) * odds / T::from_usize_lossy(j + 1);
            sum.add(term);
            if term < eps * eps {
                break;
            }
        }
        let upper = ln_first.exp() * sum.value();
        Tail {
            ln_scale: T::zero(),
            mantissa: (T::one() - upper).max(T::zero()),
        }
    }
}

/// Binomial tail `B(ν; K, q) = Σ_{j=0}^{q} C(K,j) νʲ (1−ν)^{K−j}`.
pub fn beta_tail<T: Real>(nu: T, samples: usize, q: usize) -> Result<T> {
    check_tail_args(nu, samples, q)?;
    Ok(binomial_tail(nu, samples, q).value().min(T::one()))
}

/// `ln B(ν; K, q)`; `-∞` where the tail is exactly zero.
pub fn ln_beta_tail<T: Real>(nu: T, samples: usize, q: usize) -> Result<T> {
    check_tail_args(nu, samples, q)?;
    Ok(binomial_tail(nu, samples, q).ln().min(T::zero()))
}

fn check_pair(samples: usize, removals: usize, rho1: usize) -> Result<()> {
    if rho1 == 0 {
        return Err(Error::Usage("support-rank bound must be at least 1".into()));
    }
    if samples < removals + rho1 {
        return Err(Error::Usage(format!(
            "need K >= R + rho1, got K={samples}, R={removals}, rho1={rho1}"
        )));
    }
    Ok(())
}

/// Log of the distribution bound before saturation: `ln C(R+ρ₁−1, R) + ln B(ν; K, R+ρ₁−1)`.
fn ln_unsaturated<T: Real>(nu: T, samples: usize, removals: usize, rho1: usize) -> T {
    let q = removals + rho1 - 1;
    ln_binomial::<T>(q, removals) + binomial_tail(nu, samples, q).ln()
}

/// The saturated bound `U_{K,R,ρ₁}(ν)` on `P[V > ν]`.
pub fn violation_bound<T: Real>(nu: T, samples: usize, removals: usize, rho1: usize) -> Result<T> {
    check_pair(samples, removals, rho1)?;
    check_tail_args(nu, samples, 0)?;
    Ok(ln_unsaturated(nu, samples, removals, rho1).min(T::zero()).exp())
}

/// Point where the bound leaves its plateau at 1 (0 when there is none).
fn saturation_point<T: Real>(samples: usize, removals: usize, rho1: usize) -> T {
    let q = removals + rho1 - 1;
    if ln_binomial::<T>(q, removals) <= T::zero() {
        return T::zero();
    }
    let (mut lo, mut hi) = (T::zero(), T::one());
    for _ in 0..200 {
        let mid = (lo + hi) * T::lit(0.5);
        if mid <= lo || mid >= hi {
            break;
        }
        if ln_unsaturated(mid, samples, removals, rho1) >= T::zero() {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

/// `∫₀¹ U_{K,R,ρ₁}(ν) dν` by adaptive Simpson, split at the saturation kink.
pub fn expected_violation_bound<T: Real>(samples: usize, removals: usize, rho1: usize) -> Result<T> {
    check_pair(samples, removals, rho1)?;
    let kink = saturation_point::<T>(samples, removals, rho1);
    let tail = adaptive_simpson(
        |nu: T| ln_unsaturated(nu, samples, removals, rho1).min(T::zero()).exp(),
        kink,
        T::one(),
        T::quadrature_tolerance(),
        MAX_DEPTH,
    )?;
    Ok((kink + tail.value).max(T::zero()).min(T::one()))
}

/// Closed form `ρ₁/(K+1)` of the integral for `R = 0`.
pub fn expected_violation_bound_no_removal<T: Real>(samples: usize, rho1: usize) -> Result<T> {
    check_pair(samples, 0, rho1)?;
    Ok(T::from_usize_lossy(rho1) / T::from_usize_lossy(samples + 1))
}

/// The bound used for admissibility decisions: the closed form when `R = 0`,
/// quadrature otherwise.
pub fn admissibility_bound<T: Real>(samples: usize, removals: usize, rho1: usize) -> Result<T> {
    if removals == 0 {
        expected_violation_bound_no_removal(samples, rho1)
    } else {
        expected_violation_bound(samples, removals, rho1)
    }
}

/// A sample-removal pair with its expected-violation bound.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SampleRemovalPair<T> {
    pub samples: usize,
    pub removals: usize,
    pub rho1: usize,
    pub epsilon: T,
    pub expected_violation_bound: T,
}

impl<T: Real> SampleRemovalPair<T> {
    pub fn evaluate(samples: usize, removals: usize, rho1: usize, epsilon: T) -> Result<Self> {
        Ok(Self {
            samples,
            removals,
            rho1,
            epsilon,
            expected_violation_bound: admissibility_bound(samples, removals, rho1)?,
        })
    }

    pub fn is_admissible(&self) -> bool {
        self.expected_violation_bound <= self.epsilon
    }
}

/// Smallest `K` such that `(K, R)` is admissible for `ε` and `ρ₁`.
///
/// Doubles `K` from `R + ρ₁` until admissible, then bisects; relies on the
/// bound decreasing in `K`.
pub fn min_sample_size<T: Real>(removals: usize, rho1: usize, epsilon: T) -> Result<usize> {
    if !(epsilon > T::zero() && epsilon < T::lit(0.5)) {
        return Err(Error::Usage(format!("epsilon must lie in (0, 0.5), got {epsilon}")));
    }
    if rho1 == 0 {
        return Err(Error::Usage("support-rank bound must be at least 1".into()));
    }
    let admissible = |k: usize| -> Result<bool> { Ok(admissibility_bound::<T>(k, removals, rho1)? <= epsilon) };
    let start = removals + rho1;
    if admissible(start)? {
        return Ok(start);
    }
    let mut lo = start; // inadmissible
    let mut hi = start * 2;
    while !admissible(hi)? {
        lo = hi;
        hi = hi.checked_mul(2).ok_or_else(|| Error::Numerical("sample size search overflowed".into()))?;
    }
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if admissible(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// Support-rank bound of a state constraint.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SupportRankBound {
    pub rho1: usize,
    /// False when the constraint set is the whole space.
    pub active: bool,
}

/// Numerical rank by singular values above `1e-10 · σ_max`.
pub fn numerical_rank<T: Real>(m: &DMatrix<T>) -> usize {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0;
    }
    let sv = m.clone().singular_values();
    let top = sv.max();
    if top <= T::zero() {
        return 0;
    }
    let cut = top * T::lit(1e-10);
    sv.iter().filter(|s| **s > cut).count()
}

/// `min(m, l)` with `l = rank(H)` of the constraint normals.
///
/// Under purely additive uncertainty every stage constraint has support rank
/// at most `l`; with multiplicative uncertainty the first-step constraint has
/// support rank at most `m`, and the projection onto the constrained
/// directions caps it at `l` as well.
pub fn support_rank_bound<T: Real>(model: &SystemModel<T>, constraint: &Polytope<T>, horizon: usize) -> Result<SupportRankBound> {
    if constraint.dim() != model.state_dim() {
        return Err(Error::Dimension {
            context: "support rank constraint",
            expected: model.state_dim(),
            actual: constraint.dim(),
        });
    }
    let l = numerical_rank(constraint.normals());
    if l == 0 {
        return Ok(SupportRankBound { rho1: 1, active: false });
    }
    let m = model.input_dim();
    let rho1 = l.min(m).min(horizon.max(1) * m).max(1);
    Ok(SupportRankBound { rho1, active: true })
}
