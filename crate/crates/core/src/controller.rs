//! Receding-horizon scenario controller.
//!
//! At every step `t` the controller draws `max_j K_j` fresh scenarios from
//! its own stream `(seed, t)`, imposes constraint `j` on the first `K_j` of
//! them, removes `R_j` blocks per constraint, solves and applies `u_{0|t}`.

use std::time::{Duration, Instant};

use nalgebra::DVector;

use crate::complexity::SampleRemovalPair;
use crate::error::{Error, Result};
use crate::model::{sample_scenarios, ChanceConstraintSpec, Polytope, StageCost, SystemModel};
use crate::program::{assemble, SolveStatus, StateConstraint};
use crate::removal::{remove, RemovalAlgorithm};
use crate::rng::{domain, StreamKey};
use crate::scalar::Real;

/// A chance constraint with its sample-removal pair.
#[derive(Clone, Debug)]
pub struct ConstraintConfig<T: Real> {
    pub spec: ChanceConstraintSpec<T>,
    pub samples: usize,
    pub removals: usize,
}

#[derive(Clone, Debug)]
pub struct ControllerConfig<T: Real> {
    pub horizon: usize,
    pub constraints: Vec<ConstraintConfig<T>>,
    pub input_set: Polytope<T>,
    pub cost: StageCost<T>,
    pub removal: RemovalAlgorithm,
    /// `None`: `10⁶ ·` largest cost eigenvalue. `Some(0)`: hard constraints.
    pub slack_penalty: Option<T>,
    pub seed: u64,
}

impl<T: Real> ControllerConfig<T> {
    pub fn effective_slack_penalty(&self) -> T {
        self.slack_penalty
            .unwrap_or_else(|| T::lit(1e6) * self.cost.max_eigenvalue().max(T::one()))
    }

    /// Scenarios drawn per step.
    pub fn pool_size(&self) -> usize {
        self.constraints.iter().map(|c| c.samples).max().unwrap_or(1).max(1)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Admissibility {
    pub constraint: usize,
    pub samples: usize,
    pub removals: usize,
    pub rho1: usize,
    pub epsilon: f64,
    pub bound: f64,
    pub admissible: bool,
}

pub fn admissibility_check<T: Real>(config: &ControllerConfig<T>) -> Result<Vec<Admissibility>> {
    config
        .constraints
        .iter()
        .enumerate()
        .map(|(j, c)| {
            let rho1 = c.spec.rho1;
            if c.samples < c.removals + rho1 {
                return Err(Error::Config(format!(
                    "constraint {j}: K = {} must be at least R + rho1 = {}",
                    c.samples,
                    c.removals + rho1
                )));
            }
            let pair = SampleRemovalPair::evaluate(c.samples, c.removals, rho1, c.spec.epsilon)?;
            Ok(Admissibility {
                constraint: j,
                samples: c.samples,
                removals: c.removals,
                rho1,
                epsilon: c.spec.epsilon.as_f64(),
                bound: pair.expected_violation_bound.as_f64(),
                admissible: pair.is_admissible(),
            })
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct StepDiagnostics<T: Real> {
    pub objective: T,
    /// Per constraint, removed scenario indices in removal order.
    pub removed: Vec<Vec<usize>>,
    pub status: SolveStatus,
    pub solve_count: u128,
    pub qp_solves: usize,
    pub solve_time: Duration,
    /// Largest slack; zero unless the soft fallback was used.
    pub max_slack: T,
}

#[derive(Clone, Debug)]
pub struct ScenarioController<T: Real> {
    model: SystemModel<T>,
    config: ControllerConfig<T>,
}

impl<T: Real> ScenarioController<T> {
    /// Rejects configurations with an inadmissible sample-removal pair.
    pub fn new(model: SystemModel<T>, config: ControllerConfig<T>) -> Result<Self> {
        let controller = Self::new_unchecked(model, config)?;
        for a in admissibility_check(&controller.config)? {
            if !a.admissible {
                return Err(Error::Inadmissible {
                    constraint: a.constraint,
                    samples: a.samples,
                    removals: a.removals,
                    bound: a.bound,
                    epsilon: a.epsilon,
                });
            }
        }
        Ok(controller)
    }

    /// Skips the admissibility check; dimensions are still validated.
    pub fn new_unchecked(model: SystemModel<T>, config: ControllerConfig<T>) -> Result<Self> {
        let (n, m) = (model.state_dim(), model.input_dim());
        if config.horizon == 0 {
            return Err(Error::Config("horizon must be at least 1".into()));
        }
        if config.input_set.dim() != m {
            return Err(Error::Config(format!(
                "input set has dimension {}, system has {m} inputs",
                config.input_set.dim()
            )));
        }
        if config.cost.state_weight().nrows() != n || config.cost.input_weight().nrows() != m {
            return Err(Error::Config("stage cost dimensions do not match the system".into()));
        }
        for (j, c) in config.constraints.iter().enumerate() {
            if c.spec.set.dim() != n {
                return Err(Error::Config(format!("constraint {j} has the wrong dimension")));
            }
            if c.samples == 0 || c.removals >= c.samples {
                return Err(Error::Config(format!(
                    "constraint {j}: need K >= 1 and R < K (got K = {}, R = {})",
                    c.samples, c.removals
                )));
            }
        }
        if let Some(p) = config.slack_penalty {
            if p < T::zero() {
                return Err(Error::Config("slack penalty must be nonnegative".into()));
            }
        }
        Ok(Self { model, config })
    }

    pub fn config(&self) -> &ControllerConfig<T> {
        &self.config
    }

    pub fn model(&self) -> &SystemModel<T> {
        &self.model
    }

    pub fn step(&self, x_t: &DVector<T>, t: usize) -> Result<(DVector<T>, StepDiagnostics<T>)> {
        let start = Instant::now();
        let cfg = &self.config;
        let scenarios = sample_scenarios(
            &self.model,
            cfg.pool_size(),
            cfg.horizon,
            StreamKey::new(cfg.seed, domain::SCENARIOS, t as u64),
        )?;
        let constraints: Vec<_> = cfg
            .constraints
            .iter()
            .map(|c| StateConstraint::first(&c.spec.set, c.samples))
            .collect();
        let program = assemble(
            x_t,
            &scenarios,
            &cfg.cost,
            &constraints,
            &cfg.input_set,
            cfg.effective_slack_penalty(),
        )?;
        let budgets: Vec<usize> = cfg.constraints.iter().map(|c| c.removals).collect();
        let out = remove(&program, &budgets, cfg.removal).map_err(|e| e.with_time(t))?;
        let u = out.solution.input(0, program.input_dim);
        if out.solution.status == SolveStatus::SoftActive {
            log::info!("t = {t}: state constraints softened");
        }
        let max_slack = out.solution.slack.iter().fold(T::zero(), |a, s| a.max(*s));
        Ok((
            u,
            StepDiagnostics {
                objective: out.solution.objective,
                removed: out.removed,
                status: out.solution.status,
                solve_count: out.solve_count,
                qp_solves: out.qp_solves,
                solve_time: start.elapsed(),
                max_slack,
            },
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::benchmark;
    use crate::model::ScalarDistribution;
    use nalgebra::{dmatrix, dvector, DMatrix};

    fn benchmark_config(samples: usize, removals: usize) -> ControllerConfig<f64> {
        ControllerConfig {
            horizon: benchmark::HORIZON,
            constraints: vec![ConstraintConfig {
                spec: ChanceConstraintSpec::new(benchmark::joint_set(), 0.1, 2, 2, 10).unwrap(),
                samples,
                removals,
            }],
            input_set: benchmark::input_set(),
            cost: benchmark::cost(),
            removal: RemovalAlgorithm::default(),
            slack_penalty: None,
            seed: 11,
        }
    }

    fn deterministic_model() -> SystemModel<f64> {
        SystemModel::new(DMatrix::zeros(2, 2), DMatrix::identity(2, 2))
            .unwrap()
            .with_noise(vec![ScalarDistribution::constant(0.0); 2])
            .unwrap()
    }

    fn deterministic_config(q: f64, constrained: bool) -> ControllerConfig<f64> {
        let set = Polytope::halfspace(&[-1.0, 0.0], -1.0);
        ControllerConfig {
            horizon: 1,
            constraints: if constrained {
                vec![ConstraintConfig {
                    spec: ChanceConstraintSpec::new(set, 0.1, 1, 2, 2).unwrap(),
                    samples: 9,
                    removals: 0,
                }]
            } else {
                Vec::new()
            },
            input_set: Polytope::unconstrained(2),
            cost: StageCost::new(dmatrix![q, 0.0; 0.0, q], DMatrix::identity(2, 2)).unwrap(),
            removal: RemovalAlgorithm::default(),
            slack_penalty: Some(0.0),
            seed: 0,
        }
    }

    #[test]
    fn admissibility_examples() {
        let a = admissibility_check(&benchmark_config(19, 0)).unwrap();
        assert!(a[0].admissible);
        assert!((a[0].bound - 0.1).abs() < 1e-12);
        let a = admissibility_check(&benchmark_config(18, 0)).unwrap();
        assert!(!a[0].admissible);
        assert!((a[0].bound - 2.0 / 19.0).abs() < 1e-12);
        assert!(matches!(
            ScenarioController::new(benchmark::model(), benchmark_config(18, 0)),
            Err(Error::Inadmissible { samples: 18, .. })
        ));
        assert!(ScenarioController::new_unchecked(benchmark::model(), benchmark_config(18, 0)).is_ok());
    }

    #[test]
    fn deterministic_unconstrained_input_is_zero() {
        let c = ScenarioController::new(deterministic_model(), deterministic_config(1.0, false)).unwrap();
        let (u, d) = c.step(&dvector![3.0, -2.0], 0).unwrap();
        assert!(u.amax() < 1e-12);
        assert_eq!(d.status, SolveStatus::Optimal);
    }

    #[test]
    fn deterministic_constrained_input() {
        let c = ScenarioController::new(deterministic_model(), deterministic_config(0.0, true)).unwrap();
        let (u, _) = c.step(&dvector![0.0, 0.0], 0).unwrap();
        assert!((u[0] - 1.0).abs() < 1e-9 && u[1].abs() < 1e-9);
    }

    #[test]
    fn benchmark_step_is_deterministic_and_respects_inputs() {
        let c = ScenarioController::new(benchmark::model(), benchmark_config(19, 0)).unwrap();
        let x = benchmark::initial_state();
        let (u1, d1) = c.step(&x, 4).unwrap();
        let (u2, _) = c.step(&x, 4).unwrap();
        assert_eq!(u1, u2);
        assert!(benchmark::input_set::<f64>().contains(&u1).unwrap());
        assert_eq!(d1.solve_count, 0);
        let (u3, _) = c.step(&x, 5).unwrap();
        assert_ne!(u1, u3);
    }

    #[test]
    fn removal_budget_reaches_controller() {
        let mut cfg = benchmark_config(60, 3);
        cfg.constraints[0].spec.epsilon = 0.2;
        let c = ScenarioController::new(benchmark::model(), cfg).unwrap();
        let (_, d) = c.step(&benchmark::initial_state(), 0).unwrap();
        assert_eq!(d.removed[0].len(), 3);
        assert_eq!(d.solve_count, 60 * 3 - 3);
    }

    #[test]
    fn hard_infeasibility_carries_time() {
        // x⁺ = u with |u| ≤ 1, constraint x ≥ 10
        let model: SystemModel<f64> = SystemModel::new(dmatrix![0.0], dmatrix![1.0]).unwrap();
        let cfg = ControllerConfig {
            horizon: 1,
            constraints: vec![ConstraintConfig {
                spec: ChanceConstraintSpec::new(Polytope::halfspace(&[-1.0], -10.0), 0.1, 1, 1, 1).unwrap(),
                samples: 9,
                removals: 0,
            }],
            input_set: Polytope::bounds(&[-1.0], &[1.0]).unwrap(),
            cost: StageCost::identity(1, 1),
            removal: RemovalAlgorithm::default(),
            slack_penalty: Some(0.0),
            seed: 0,
        };
        let c = ScenarioController::new(model.clone(), cfg.clone()).unwrap();
        assert_eq!(c.step(&dvector![0.0], 7).unwrap_err(), Error::Infeasible { time: Some(7) });
        let soft = ScenarioController::new(model, ControllerConfig { slack_penalty: None, ..cfg }).unwrap();
        let (u, d) = soft.step(&dvector![0.0], 7).unwrap();
        assert_eq!(d.status, SolveStatus::SoftActive);
        assert!((u[0] - 1.0).abs() < 1e-6);
    }
}
