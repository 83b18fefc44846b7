//! Finite-horizon scenario program in condensed form.
//!
//! States are eliminated by forward substitution, `x_i^{(k)} = G_i^{(k)} u + o_i^{(k)}`,
//! so the only decision variable is the stacked input `u = (u_0, …, u_{N−1}) ∈ ℝ^{N·m}`
//! regardless of the number of scenarios. The objective is the scenario
//! average `(1/K) Σ_k Σ_{i<N} ℓ(x_i^{(k)}, u_i)`; averaging instead of summing
//! leaves the minimizer unchanged.
//!
//! State constraints are imposed on every predicted state `x_1 … x_N` of the
//! scenarios assigned to each chance constraint. The rows of one
//! (constraint, scenario) pair form a *block*, the unit that removal
//! algorithms switch on and off. Input constraints are never removable.

use std::ops::Range;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::{Polytope, Scenario, StageCost};
use crate::qp::{solve_qp, HessianFactor, QpOptions, QpOutcome, Rows};
use crate::scalar::Real;

/// Affine maps from the stacked input to every predicted state.
#[derive(Clone, Debug)]
pub struct CondensedTrajectory<T: Real> {
    pub horizon: usize,
    pub state_dim: usize,
    pub input_dim: usize,
    /// `gains[k][i]`: `n × N·m`, for `i = 0..=N` (`gains[k][0] = 0`).
    pub gains: Vec<Vec<DMatrix<T>>>,
    /// `offsets[k][i]`, with `offsets[k][0] = x_t`.
    pub offsets: Vec<Vec<DVector<T>>>,
}

impl<T: Real> CondensedTrajectory<T> {
    pub fn scenario_count(&self) -> usize {
        self.gains.len()
    }

    /// `x_i^{(k)}` for a given stacked input.
    pub fn predict(&self, k: usize, i: usize, u_stack: &DVector<T>) -> DVector<T> {
        &self.gains[k][i] * u_stack + &self.offsets[k][i]
    }
}

/// Forward recursion `G_{i+1} = A_i G_i + B_i E_i`, `o_{i+1} = A_i o_i + w_i`.
pub fn condense<T: Real>(x_t: &DVector<T>, scenarios: &[Scenario<T>]) -> Result<CondensedTrajectory<T>> {
    let first = scenarios
        .first()
        .ok_or_else(|| Error::Usage("condensing needs at least one scenario".into()))?;
    let horizon = first.horizon();
    let stage = first
        .stages
        .first()
        .ok_or_else(|| Error::Usage("scenario horizon must be at least 1".into()))?;
    let n = stage.a.nrows();
    let m = stage.b.ncols();
    if x_t.len() != n {
        return Err(Error::Dimension {
            context: "current state",
            expected: n,
            actual: x_t.len(),
        });
    }
    let dim = horizon * m;
    let mut gains = Vec::with_capacity(scenarios.len());
    let mut offsets = Vec::with_capacity(scenarios.len());
    for scenario in scenarios {
        if scenario.horizon() != horizon {
            return Err(Error::Dimension {
                context: "scenario horizon",
                expected: horizon,
                actual: scenario.horizon(),
            });
        }
        let mut g = Vec::with_capacity(horizon + 1);
        let mut o = Vec::with_capacity(horizon + 1);
        g.push(DMatrix::zeros(n, dim));
        o.push(x_t.clone());
        for (i, real) in scenario.stages.iter().enumerate() {
            if real.a.shape() != (n, n) || real.b.shape() != (n, m) || real.w.len() != n {
                return Err(Error::Usage(format!("inconsistent realization dimensions at stage {i}")));
            }
            let mut next = &real.a * &g[i];
            let mut block = next.columns_mut(i * m, m);
            block += &real.b;
            o.push(&real.a * &o[i] + &real.w);
            g.push(next);
        }
        gains.push(g);
        offsets.push(o);
    }
    Ok(CondensedTrajectory {
        horizon,
        state_dim: n,
        input_dim: m,
        gains,
        offsets,
    })
}

/// Origin of a constraint row.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RowTag {
    /// `stage` is the predicted-state index `i ∈ 1..=N`.
    State {
        constraint: usize,
        scenario: usize,
        stage: usize,
        facet: usize,
    },
    Input { stage: usize, facet: usize },
}

/// Rows of one scenario under one chance constraint.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Block {
    pub constraint: usize,
    pub scenario: usize,
    pub rows: Range<usize>,
}

/// A state constraint and the scenarios (indices into the pool) it binds on.
#[derive(Clone, Debug)]
pub struct StateConstraint<'a, T: Real> {
    pub set: &'a Polytope<T>,
    pub scenarios: Vec<usize>,
}

impl<'a, T: Real> StateConstraint<'a, T> {
    /// Binds on the first `count` scenarios of the pool.
    pub fn first(set: &'a Polytope<T>, count: usize) -> Self {
        Self {
            set,
            scenarios: (0..count).collect(),
        }
    }
}

/// Condensed convex QP `min ½uᵀHu + gᵀu + c` subject to tagged rows.
#[derive(Clone, Debug)]
pub struct ScenarioProgram<T: Real> {
    pub horizon: usize,
    pub state_dim: usize,
    pub input_dim: usize,
    pub scenario_count: usize,
    pub hessian: DMatrix<T>,
    pub gradient: DVector<T>,
    /// Objective terms independent of `u`.
    pub constant: T,
    pub rows: Rows<T>,
    pub tags: Vec<RowTag>,
    /// `blocks[j]`: removable blocks of constraint `j`, ordered by scenario.
    pub blocks: Vec<Vec<Block>>,
    /// Weight of the ℓ₁ slack penalty in the soft fallback; zero means hard constraints.
    pub slack_penalty: T,
    /// `R_ℓᵀ R_ℓ`, for first-stage cost evaluation.
    pub input_gram: DMatrix<T>,
    /// `ℓ(x_t, ·)` state part, identical for every scenario.
    pub first_state_cost: T,
    factor: HessianFactor<T>,
    row_norms: Vec<T>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SolveStatus {
    Optimal,
    /// Hard constraints were infeasible; the soft relaxation was solved instead.
    SoftActive,
}

#[derive(Clone, Debug)]
pub struct QpSolution<T: Real> {
    pub u_stack: DVector<T>,
    /// Scenario-averaged cost, plus the slack penalty when soft constraints are active.
    pub objective: T,
    /// One nonnegative multiplier per program row.
    pub dual: Vec<T>,
    pub status: SolveStatus,
    /// Slack per (constraint, stage, facet) group; empty unless soft.
    pub slack: Vec<T>,
    /// Rows in the final active set.
    pub active: Vec<usize>,
    pub iterations: usize,
}

impl<T: Real> QpSolution<T> {
    /// `u_{i|t}`
    pub fn input(&self, stage: usize, input_dim: usize) -> DVector<T> {
        self.u_stack.rows(stage * input_dim, input_dim).into_owned()
    }
}

/// Builds the condensed program.
///
/// The cost is averaged over all scenarios in `scenarios`; each entry of
/// `state_constraints` adds rows for its own scenario subset.
pub fn assemble<T: Real>(
    x_t: &DVector<T>,
    scenarios: &[Scenario<T>],
    cost: &StageCost<T>,
    state_constraints: &[StateConstraint<'_, T>],
    input_set: &Polytope<T>,
    slack_penalty: T,
) -> Result<ScenarioProgram<T>> {
    let traj = condense(x_t, scenarios)?;
    assemble_condensed(&traj, cost, state_constraints, input_set, slack_penalty)
}

pub fn assemble_condensed<T: Real>(
    traj: &CondensedTrajectory<T>,
    cost: &StageCost<T>,
    state_constraints: &[StateConstraint<'_, T>],
    input_set: &Polytope<T>,
    slack_penalty: T,
) -> Result<ScenarioProgram<T>> {
    let (n, m, horizon) = (traj.state_dim, traj.input_dim, traj.horizon);
    let dim = horizon * m;
    let k_total = traj.scenario_count();
    if cost.state_weight().nrows() != n || cost.input_weight().nrows() != m {
        return Err(Error::Usage("stage cost dimensions do not match the system".into()));
    }
    if input_set.dim() != m {
        return Err(Error::Dimension {
            context: "input set",
            expected: m,
            actual: input_set.dim(),
        });
    }
    if slack_penalty < T::zero() {
        return Err(Error::Config("slack penalty must be nonnegative".into()));
    }
    let qw = cost.state_gram();
    let rw = cost.input_gram();
    let two = T::lit(2.0);
    let inv_k = T::one() / T::from_usize_lossy(k_total);

    let mut hessian = DMatrix::zeros(dim, dim);
    let mut gradient = DVector::zeros(dim);
    let mut constant = T::zero();
    for k in 0..k_total {
        // stage 0 depends on x_t only
        for i in 0..horizon {
            let g = &traj.gains[k][i];
            let o = &traj.offsets[k][i];
            let qg = &qw * g;
            if i > 0 {
                hessian += g.transpose() * &qg * (two * inv_k);
                gradient += qg.transpose() * o * (two * inv_k);
            }
            constant += o.dot(&(&qw * o)) * inv_k;
        }
    }
    for i in 0..horizon {
        let mut view = hessian.view_mut((i * m, i * m), (m, m));
        view += &rw * two;
    }
    // exact symmetry
    let hessian = (&hessian + hessian.transpose()) * T::lit(0.5);

    let mut rows = Rows::new(dim);
    let mut tags = Vec::new();
    let mut blocks = Vec::with_capacity(state_constraints.len());
    let mut row_buf = vec![T::zero(); dim];
    for (j, sc) in state_constraints.iter().enumerate() {
        if sc.set.dim() != n {
            return Err(Error::Dimension {
                context: "state constraint set",
                expected: n,
                actual: sc.set.dim(),
            });
        }
        let normals = sc.set.normals();
        let offsets = sc.set.offsets();
        let mut cblocks = Vec::with_capacity(sc.scenarios.len());
        for &k in &sc.scenarios {
            if k >= k_total {
                return Err(Error::Usage(format!(
                    "constraint {j} references scenario {k} but only {k_total} were drawn"
                )));
            }
            let start = rows.len();
            for stage in 1..=horizon {
                let hg = normals * &traj.gains[k][stage];
                let ho = normals * &traj.offsets[k][stage];
                for facet in 0..sc.set.facet_count() {
                    for c in 0..dim {
                        row_buf[c] = hg[(facet, c)];
                    }
                    rows.push(&row_buf, offsets[facet] - ho[facet]);
                    tags.push(RowTag::State {
                        constraint: j,
                        scenario: k,
                        stage,
                        facet,
                    });
                }
            }
            cblocks.push(Block {
                constraint: j,
                scenario: k,
                rows: start..rows.len(),
            });
        }
        blocks.push(cblocks);
    }
    for stage in 0..horizon {
        for facet in 0..input_set.facet_count() {
            row_buf.iter_mut().for_each(|v| *v = T::zero());
            for c in 0..m {
                row_buf[stage * m + c] = input_set.normals()[(facet, c)];
            }
            rows.push(&row_buf, input_set.offsets()[facet]);
            tags.push(RowTag::Input { stage, facet });
        }
    }

    let factor = HessianFactor::new(&hessian)?;
    let row_norms = (0..rows.len())
        .map(|i| rows.row(i).iter().fold(T::zero(), |a, v| a + *v * *v).sqrt())
        .collect();
    let first_state_cost = traj.offsets[0][0].dot(&(&qw * &traj.offsets[0][0]));
    Ok(ScenarioProgram {
        horizon,
        state_dim: n,
        input_dim: m,
        scenario_count: k_total,
        hessian,
        gradient,
        constant,
        rows,
        tags,
        blocks,
        slack_penalty,
        input_gram: rw,
        first_state_cost,
        factor,
        row_norms,
    })
}

/// Which removable blocks are currently imposed.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct BlockSelection {
    pub enabled: Vec<Vec<bool>>,
}

impl BlockSelection {
    pub fn removed(&self, constraint: usize) -> impl Iterator<Item = usize> + '_ {
        self.enabled[constraint]
            .iter()
            .enumerate()
            .filter(|(_, on)| !**on)
            .map(|(b, _)| b)
    }
}

impl<T: Real> ScenarioProgram<T> {
    pub fn decision_dim(&self) -> usize {
        self.horizon * self.input_dim
    }

    pub fn constraint_count(&self) -> usize {
        self.blocks.len()
    }

    pub fn state_row_count(&self) -> usize {
        self.tags.iter().filter(|t| matches!(t, RowTag::State { .. })).count()
    }

    pub fn input_row_count(&self) -> usize {
        self.tags.len() - self.state_row_count()
    }

    /// Every block imposed.
    pub fn full_selection(&self) -> BlockSelection {
        BlockSelection {
            enabled: self.blocks.iter().map(|b| vec![true; b.len()]).collect(),
        }
    }

    pub fn row_mask(&self, selection: &BlockSelection) -> Vec<bool> {
        let mut mask = vec![true; self.rows.len()];
        for (j, blocks) in self.blocks.iter().enumerate() {
            for (b, block) in blocks.iter().enumerate() {
                if !selection.enabled[j][b] {
                    mask[block.rows.clone()].iter_mut().for_each(|v| *v = false);
                }
            }
        }
        mask
    }

    /// Full objective `½uᵀHu + gᵀu + c`, i.e. the scenario-averaged cost.
    pub fn objective_at(&self, u: &DVector<T>) -> T {
        T::lit(0.5) * u.dot(&(&self.hessian * u)) + self.gradient.dot(u) + self.constant
    }

    /// `ℓ(x_t, u_0)`
    pub fn first_stage_cost(&self, u: &DVector<T>) -> T {
        let u0 = u.rows(0, self.input_dim);
        self.first_state_cost + u0.dot(&(&self.input_gram * u0))
    }

    pub fn solve(&self) -> Result<QpSolution<T>> {
        self.solve_selection(&self.full_selection(), &QpOptions::default())
    }

    pub fn solve_selection(&self, selection: &BlockSelection, options: &QpOptions<T>) -> Result<QpSolution<T>> {
        let mask = self.row_mask(selection);
        self.solve_mask(&mask, options)
    }

    /// Solves with the rows in `mask`. Falls back to soft state constraints
    /// when infeasible and `slack_penalty > 0`.
    pub fn solve_mask(&self, mask: &[bool], options: &QpOptions<T>) -> Result<QpSolution<T>> {
        self.solve_mask_from(mask, &[], options)
    }

    /// Like [`solve_mask`](Self::solve_mask), starting the working set from
    /// the input rows plus `hint` (typically a previous active set).
    ///
    /// Rows outside the working set are checked after each solve and the most
    /// violated ones are added until none is violated, so the result is the
    /// optimum over all of `mask`.
    pub fn solve_mask_from(&self, mask: &[bool], hint: &[usize], options: &QpOptions<T>) -> Result<QpSolution<T>> {
        if mask.len() != self.rows.len() {
            return Err(Error::Dimension {
                context: "row mask",
                expected: self.rows.len(),
                actual: mask.len(),
            });
        }
        let mut working: Vec<bool> = self
            .tags
            .iter()
            .zip(mask)
            .map(|(t, on)| *on && matches!(t, RowTag::Input { .. }))
            .collect();
        for &i in hint {
            if mask[i] {
                working[i] = true;
            }
        }
        let batch = (2 * self.decision_dim()).max(8);
        let mut iterations = 0;
        let mut violated: Vec<(usize, T)> = Vec::new();
        loop {
            let index: Vec<usize> = (0..working.len()).filter(|&i| working[i]).collect();
            let mut compact = Rows::new(self.decision_dim());
            for &i in &index {
                compact.push(self.rows.row(i), self.rows.bounds[i]);
            }
            let res = match solve_qp(&self.factor, &self.hessian, &self.gradient, &compact, None, options)? {
                QpOutcome::Optimal(res) => res,
                // a subset of the rows is already infeasible
                QpOutcome::Infeasible if self.slack_penalty > T::zero() => return self.solve_soft(mask, options),
                QpOutcome::Infeasible => return Err(Error::Infeasible { time: None }),
            };
            iterations += res.iterations;
            violated.clear();
            for i in 0..self.rows.len() {
                if !mask[i] || working[i] {
                    continue;
                }
                let row = self.rows.row(i);
                let mut lhs = T::zero();
                for (a, x) in row.iter().zip(&res.x) {
                    lhs += *a * *x;
                }
                let viol = lhs - self.rows.bounds[i];
                let norm = self.row_norms[i];
                if viol > options.feasibility_tolerance * norm.max(T::one()) {
                    violated.push((i, if norm > T::zero() { viol / norm } else { viol }));
                }
            }
            if violated.is_empty() {
                let mut dual = vec![T::zero(); self.rows.len()];
                for (c, &i) in index.iter().enumerate() {
                    dual[i] = res.multipliers[c];
                }
                return Ok(QpSolution {
                    objective: res.objective + self.constant,
                    u_stack: DVector::from_vec(res.x),
                    dual,
                    status: SolveStatus::Optimal,
                    slack: Vec::new(),
                    active: res.active.iter().map(|&c| index[c]).collect(),
                    iterations,
                });
            }
            if violated.len() > batch {
                violated.select_nth_unstable_by(batch, |a, b| b.1.partial_cmp(&a.1).unwrap_or(std::cmp::Ordering::Equal));
                violated.truncate(batch);
            }
            for &(i, _) in &violated {
                working[i] = true;
            }
        }
    }

    /// Slack group of a state row: one nonnegative slack per
    /// (constraint, stage, facet), shared by all scenarios of that constraint.
    fn slack_group(&self, tag: &RowTag) -> Option<usize> {
        match *tag {
            RowTag::State {
                constraint,
                stage,
                facet,
                ..
            } => {
                let facets: usize = self.max_facets();
                Some((constraint * self.horizon + (stage - 1)) * facets + facet)
            }
            RowTag::Input { .. } => None,
        }
    }

    fn max_facets(&self) -> usize {
        self.tags
            .iter()
            .filter_map(|t| match t {
                RowTag::State { facet, .. } => Some(facet + 1),
                RowTag::Input { .. } => None,
            })
            .max()
            .unwrap_or(0)
    }

    fn solve_soft(&self, mask: &[bool], options: &QpOptions<T>) -> Result<QpSolution<T>> {
        let dim = self.decision_dim();
        let groups = self.constraint_count() * self.horizon * self.max_facets();
        let total = dim + groups;
        // small curvature on slacks keeps the Hessian positive definite
        let curvature = T::lit(1e-6) * self.hessian.diagonal().amax().max(T::one());
        let mut hessian = DMatrix::zeros(total, total);
        hessian.view_mut((0, 0), (dim, dim)).copy_from(&self.hessian);
        for s in dim..total {
            hessian[(s, s)] = curvature;
        }
        let mut gradient = DVector::zeros(total);
        gradient.rows_mut(0, dim).copy_from(&self.gradient);
        for s in dim..total {
            gradient[s] = self.slack_penalty;
        }
        let mut rows = Rows::new(total);
        let mut soft_mask = Vec::with_capacity(self.rows.len() + groups);
        let mut buf = vec![T::zero(); total];
        for (i, tag) in self.tags.iter().enumerate() {
            buf[..dim].copy_from_slice(self.rows.row(i));
            buf[dim..].iter_mut().for_each(|v| *v = T::zero());
            if let Some(g) = self.slack_group(tag) {
                buf[dim + g] = -T::one();
            }
            rows.push(&buf, self.rows.bounds[i]);
            soft_mask.push(mask[i]);
        }
        for g in 0..groups {
            buf.iter_mut().for_each(|v| *v = T::zero());
            buf[dim + g] = -T::one();
            rows.push(&buf, T::zero());
            soft_mask.push(true);
        }
        let factor = self.factor.extend_diagonal(groups, T::one() / curvature.sqrt());
        match solve_qp(&factor, &hessian, &gradient, &rows, Some(&soft_mask), options)? {
            QpOutcome::Optimal(res) => {
                let u_stack = DVector::from_column_slice(&res.x[..dim]);
                let slack: Vec<T> = res.x[dim..].iter().map(|s| s.max(T::zero())).collect();
                Ok(QpSolution {
                    objective: res.objective + self.constant,
                    u_stack,
                    dual: res.multipliers[..self.rows.len()].to_vec(),
                    status: SolveStatus::SoftActive,
                    slack,
                    active: res.active.into_iter().filter(|&i| i < self.rows.len()).collect(),
                    iterations: res.iterations,
                })
            }
            // input rows alone are infeasible
            QpOutcome::Infeasible => Err(Error::Infeasible { time: None }),
        }
    }
}
