//! Two-state benchmark with a uniformly distributed parameter in the system
//! matrix and Gaussian additive noise.
//!
//! ```text
//! x⁺ = [0.7, −0.1(2+θ); −0.1(3+2θ), 0.9] x + u + w,   θ ~ U[0,1],  w⁽ⁱ⁾ ~ N(0, σ²)
//! ```
//!
//! [`model`] uses `σ = 0.1`; [`model_with_noise_variance`] sets `σ²` directly.
//!
//! Inputs are boxed by `|u⁽ⁱ⁾| ≤ 5`, the state constraints are `x⁽¹⁾ ≥ 1` and
//! `x⁽²⁾ ≥ 1`, the cost weights are identities and the horizon is 5.

use nalgebra::{dmatrix, dvector, DMatrix, DVector};

use crate::model::{Polytope, ScalarDistribution, StageCost, SystemModel};
use crate::scalar::Real;

pub const HORIZON: usize = 5;
pub const INPUT_BOUND: f64 = 5.0;
pub const NOISE_VARIANCE: f64 = 0.01;

pub fn model<T: Real>() -> SystemModel<T> {
    model_with_noise_variance(NOISE_VARIANCE)
}

pub fn model_with_noise_variance<T: Real>(variance: f64) -> SystemModel<T> {
    let l = |v: f64| T::lit(v);
    SystemModel::new(dmatrix![l(0.7), l(-0.2); l(-0.3), l(0.9)], DMatrix::identity(2, 2))
        .and_then(|m| {
            m.with_parameter(
                ScalarDistribution::uniform(0.0, 1.0),
                dmatrix![l(0.0), l(-0.1); l(-0.2), l(0.0)],
                DMatrix::zeros(2, 2),
            )
        })
        .and_then(|m| m.with_noise(vec![ScalarDistribution::normal(0.0, variance); 2]))
        .expect("benchmark model is well formed")
}

pub fn initial_state<T: Real>() -> DVector<T> {
    dvector![T::one(), T::one()]
}

/// `x⁽¹⁾ ≥ 1`
pub fn first_halfspace<T: Real>() -> Polytope<T> {
    Polytope::halfspace(&[-T::one(), T::zero()], -T::one())
}

/// `x⁽²⁾ ≥ 1`
pub fn second_halfspace<T: Real>() -> Polytope<T> {
    Polytope::halfspace(&[T::zero(), -T::one()], -T::one())
}

pub fn joint_set<T: Real>() -> Polytope<T> {
    first_halfspace()
        .intersect(&second_halfspace())
        .expect("same dimension")
}

pub fn input_set<T: Real>() -> Polytope<T> {
    let b = T::lit(INPUT_BOUND);
    Polytope::bounds(&[-b, -b], &[b, b]).expect("nonempty box")
}

pub fn cost<T: Real>() -> StageCost<T> {
    StageCost::identity(2, 2)
}
