//! Closed-loop Monte Carlo.
//!
//! The plant draws its uncertainty from stream `(sim_seed, PLANT, t)`, which
//! never overlaps the controller's scenario streams.

use nalgebra::{dmatrix, DMatrix, DVector};
use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::complexity::admissibility_bound;
use crate::error::{Error, Result};
use crate::model::{sample_scenarios, Polytope, ScalarDistribution, StageCost, SystemModel};
use crate::program::{assemble, SolveStatus, StateConstraint};
use crate::removal::{remove, RemovalAlgorithm};
use crate::rng::{domain, StreamKey};
use crate::scalar::Real;
use crate::controller::ScenarioController;

#[derive(Clone, Debug)]
pub struct StepRecord<T: Real> {
    pub t: usize,
    pub state: DVector<T>,
    pub input: DVector<T>,
    /// Realized plant uncertainty.
    pub theta: Vec<T>,
    pub noise: DVector<T>,
    /// Per constraint, whether `x_{t+1}` left the set.
    pub violations: Vec<bool>,
    /// `ℓ(x_t, u_t)`
    pub stage_cost: T,
    pub status: SolveStatus,
    pub objective: T,
    pub qp_solves: usize,
}

/// Step at which a hard-constrained run stopped.
#[derive(Clone, Debug, PartialEq)]
pub struct Failure {
    pub t: usize,
    pub error: Error,
}

#[derive(Clone, Debug)]
pub struct ClosedLoopRecord<T: Real> {
    pub steps: Vec<StepRecord<T>>,
    pub final_state: DVector<T>,
    pub failure: Option<Failure>,
}

impl<T: Real> ClosedLoopRecord<T> {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn constraint_count(&self) -> usize {
        self.steps.first().map_or(0, |s| s.violations.len())
    }

    /// `(1/T′) Σ_{t<T′} M_t` for constraint `j`.
    pub fn running_violation_rate(&self, j: usize, horizon: usize) -> f64 {
        let horizon = horizon.min(self.steps.len());
        if horizon == 0 {
            return 0.0;
        }
        let hits = self.steps[..horizon].iter().filter(|s| s.violations[j]).count();
        hits as f64 / horizon as f64
    }

    /// `V_avg` per constraint.
    pub fn violation_rates(&self) -> Vec<f64> {
        (0..self.constraint_count())
            .map(|j| self.running_violation_rate(j, self.steps.len()))
            .collect()
    }

    /// `ℓ_avg`
    pub fn cost_mean(&self) -> f64 {
        if self.steps.is_empty() {
            return 0.0;
        }
        self.steps.iter().map(|s| s.stage_cost.as_f64()).sum::<f64>() / self.steps.len() as f64
    }

    /// `ℓ_std`, population standard deviation.
    pub fn cost_std(&self) -> f64 {
        if self.steps.is_empty() {
            return 0.0;
        }
        let mean = self.cost_mean();
        let var = self
            .steps
            .iter()
            .map(|s| (s.stage_cost.as_f64() - mean).powi(2))
            .sum::<f64>()
            / self.steps.len() as f64;
        var.sqrt()
    }

    pub fn soft_activations(&self) -> usize {
        self.steps
            .iter()
            .filter(|s| s.status == SolveStatus::SoftActive)
            .count()
    }
}

/// Runs the closed loop for `steps` steps from `x0`.
///
/// A hard-mode infeasibility ends the run early; the record then holds the
/// completed steps and the failure.
pub fn simulate<T: Real>(
    controller: &ScenarioController<T>,
    plant: &SystemModel<T>,
    x0: &DVector<T>,
    steps: usize,
    sim_seed: u64,
) -> Result<ClosedLoopRecord<T>> {
    if steps == 0 {
        return Err(Error::Usage("simulation needs at least one step".into()));
    }
    let model = controller.model();
    if plant.state_dim() != model.state_dim() || plant.input_dim() != model.input_dim() {
        return Err(Error::Usage("plant and controller model dimensions differ".into()));
    }
    if x0.len() != plant.state_dim() {
        return Err(Error::Dimension {
            context: "initial state",
            expected: plant.state_dim(),
            actual: x0.len(),
        });
    }
    let config = controller.config();
    let mut x = x0.clone();
    let mut records = Vec::with_capacity(steps);
    let mut failure = None;
    for t in 0..steps {
        let (u, diag) = match controller.step(&x, t) {
            Ok(v) => v,
            Err(error) => {
                log::warn!("closed loop stopped at t = {t}: {error}");
                failure = Some(Failure { t, error });
                break;
            }
        };
        let mut rng = StreamKey::new(sim_seed, domain::PLANT, t as u64).rng();
        let delta = plant.draw(&mut rng);
        let next = plant.realize(&delta).step(&x, &u);
        let violations = config
            .constraints
            .iter()
            .map(|c| !c.spec.set.contains_unchecked(&next))
            .collect();
        records.push(StepRecord {
            t,
            stage_cost: config.cost.eval(&x, &u),
            state: x,
            input: u,
            theta: delta.theta,
            noise: delta.noise,
            violations,
            status: diag.status,
            objective: diag.objective,
            qp_solves: diag.qp_solves,
        });
        x = next;
    }
    Ok(ClosedLoopRecord {
        steps: records,
        final_state: x,
        failure,
    })
}

/// Fraction of `samples` fresh uncertainty draws for which
/// `A x + B u + w ∉ set`.
pub fn estimate_violation_probability<T: Real>(
    model: &SystemModel<T>,
    x_t: &DVector<T>,
    u: &DVector<T>,
    set: &Polytope<T>,
    samples: usize,
    seed: u64,
) -> Result<f64> {
    if samples == 0 {
        return Err(Error::Usage("need at least one sample".into()));
    }
    if x_t.len() != model.state_dim() || u.len() != model.input_dim() || set.dim() != model.state_dim() {
        return Err(Error::Usage("dimension mismatch in violation estimate".into()));
    }
    let mut rng = StreamKey::new(seed, domain::ESTIMATE, 0).rng();
    let mut hits = 0usize;
    for _ in 0..samples {
        let next = model.realize(&model.draw(&mut rng)).step(x_t, u);
        if !set.contains_unchecked(&next) {
            hits += 1;
        }
    }
    Ok(hits as f64 / samples as f64)
}

/// One-step additive toy `x⁺ = x + u + w`, `w ~ N(0, σ²)`, started at 0 with
/// constraint `x ≥ threshold` (none when `threshold` is `None`).
#[derive(Clone, Copy, Debug)]
pub struct BoundValidation {
    pub samples: usize,
    pub removals: usize,
    pub draws: usize,
    pub seed: u64,
    pub noise_std: f64,
    pub threshold: Option<f64>,
    pub removal: RemovalAlgorithm,
}

impl BoundValidation {
    pub fn new(samples: usize, removals: usize, draws: usize, seed: u64) -> Self {
        Self {
            samples,
            removals,
            draws,
            seed,
            noise_std: 1.0,
            threshold: Some(1.0),
            removal: RemovalAlgorithm::default(),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct BoundValidationResult {
    /// Mean exact first-step violation probability over the draws.
    pub mean: f64,
    pub standard_error: f64,
    /// Expected-violation bound for `(K, R)` with `ρ₁ = 1`.
    pub bound: f64,
    pub draws: usize,
}

/// Averages the exact violation probability `Φ((thr − u₀)/σ)` of the
/// scenario solution over independent scenario sets.
pub fn bound_validation_experiment<T: Real>(cfg: &BoundValidation) -> Result<BoundValidationResult> {
    if cfg.draws == 0 || cfg.samples == 0 || cfg.removals >= cfg.samples {
        return Err(Error::Usage("need draws >= 1 and 0 <= R < K".into()));
    }
    if cfg.noise_std.is_nan() || cfg.noise_std <= 0.0 {
        return Err(Error::Config("noise standard deviation must be positive".into()));
    }
    let model: SystemModel<T> = SystemModel::new(dmatrix![T::one()], dmatrix![T::one()])?
        .with_noise(vec![ScalarDistribution::normal(0.0, cfg.noise_std * cfg.noise_std)])?;
    let set = match cfg.threshold {
        Some(thr) => Polytope::halfspace(&[-T::one()], -T::lit(thr)),
        None => Polytope::unconstrained(1),
    };
    let inputs = Polytope::bounds(&[T::lit(-1e3)], &[T::lit(1e3)])?;
    let cost = StageCost::new(DMatrix::identity(1, 1), DMatrix::identity(1, 1))?;
    let normal = Normal::new(0.0, cfg.noise_std).map_err(|e| Error::Config(e.to_string()))?;
    let x0 = DVector::zeros(1);
    let values: Vec<f64> = (0..cfg.draws)
        .into_par_iter()
        .map(|d| -> Result<f64> {
            let scenarios = sample_scenarios(
                &model,
                cfg.samples,
                1,
                StreamKey::new(cfg.seed, domain::VALIDATION, d as u64),
            )?;
            let constraint = [StateConstraint::first(&set, cfg.samples)];
            let program = assemble(&x0, &scenarios, &cost, &constraint, &inputs, T::zero())?;
            let out = remove(&program, &[cfg.removals], cfg.removal)?;
            let u = out.solution.u_stack[0].as_f64();
            Ok(match cfg.threshold {
                Some(thr) => normal.cdf(thr - u),
                None => 0.0,
            })
        })
        .collect::<Result<_>>()?;
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = if values.len() > 1 {
        values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    let bound: T = admissibility_bound(cfg.samples, cfg.removals, 1)?;
    Ok(BoundValidationResult {
        mean,
        standard_error: (var / n).sqrt(),
        bound: bound.as_f64(),
        draws: cfg.draws,
    })
}
