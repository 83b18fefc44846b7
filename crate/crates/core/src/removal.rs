//! A-posteriori scenario removal.
//!
//! Removal works on whole blocks: all state rows that one scenario
//! contributes to one chance constraint. Each constraint `j` has its own
//! budget `R_j`; input rows are never removed.
//!
//! `solve_count` reports the nominal number of program instances of each
//! algorithm (`∏ C(K_j, R_j)`, `Σ K_j R_j − R_j(R_j−1)/2`, `1 + Σ R_j`).
//! `qp_solves` counts the solver calls actually made. They differ because a
//! tentative removal of a block whose rows all carry zero multipliers leaves
//! the optimum unchanged and is scored without a solve.

use itertools::Itertools;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::program::{BlockSelection, QpSolution, ScenarioProgram};
use crate::qp::QpOptions;
use crate::scalar::Real;

/// Guard on the number of subsets optimal removal may enumerate.
pub const OPTIMAL_ENUMERATION_LIMIT: u128 = 1_000_000;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum GreedyMetric {
    #[default]
    TotalCost,
    FirstStageCost,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RemovalAlgorithm {
    Optimal,
    Greedy(GreedyMetric),
    Marginal,
}

impl Default for RemovalAlgorithm {
    fn default() -> Self {
        Self::Greedy(GreedyMetric::TotalCost)
    }
}

#[derive(Clone, Debug)]
pub struct RemovalOutcome<T: Real> {
    /// Per constraint, scenario indices still imposed (ascending).
    pub kept: Vec<Vec<usize>>,
    /// Per constraint, removed scenario indices in removal order.
    pub removed: Vec<Vec<usize>>,
    pub solve_count: u128,
    pub qp_solves: usize,
    pub selection: BlockSelection,
    pub solution: QpSolution<T>,
}

pub fn remove<T: Real>(
    program: &ScenarioProgram<T>,
    budgets: &[usize],
    algorithm: RemovalAlgorithm,
) -> Result<RemovalOutcome<T>> {
    match algorithm {
        RemovalAlgorithm::Optimal => remove_optimal(program, budgets),
        RemovalAlgorithm::Greedy(metric) => remove_greedy(program, budgets, metric),
        RemovalAlgorithm::Marginal => remove_marginal(program, budgets),
    }
}

fn check_budgets<T: Real>(program: &ScenarioProgram<T>, budgets: &[usize]) -> Result<()> {
    if budgets.len() != program.constraint_count() {
        return Err(Error::Dimension {
            context: "removal budgets",
            expected: program.constraint_count(),
            actual: budgets.len(),
        });
    }
    for (j, (&r, blocks)) in budgets.iter().zip(&program.blocks).enumerate() {
        if r > 0 && r >= blocks.len() {
            return Err(Error::Usage(format!(
                "constraint {j}: cannot remove {r} of {} scenarios",
                blocks.len()
            )));
        }
    }
    Ok(())
}

fn outcome<T: Real>(
    program: &ScenarioProgram<T>,
    selection: BlockSelection,
    removed_blocks: Vec<Vec<usize>>,
    solve_count: u128,
    qp_solves: usize,
    solution: QpSolution<T>,
) -> RemovalOutcome<T> {
    let scenario = |j: usize, b: usize| program.blocks[j][b].scenario;
    let kept = selection
        .enabled
        .iter()
        .enumerate()
        .map(|(j, on)| {
            on.iter()
                .enumerate()
                .filter(|(_, e)| **e)
                .map(|(b, _)| scenario(j, b))
                .collect()
        })
        .collect();
    let removed = removed_blocks
        .iter()
        .enumerate()
        .map(|(j, bs)| bs.iter().map(|&b| scenario(j, b)).collect())
        .collect();
    RemovalOutcome {
        kept,
        removed,
        solve_count,
        qp_solves,
        selection,
        solution,
    }
}

/// `C(n, k)` in `u128`, `None` on overflow.
fn binomial_u128(n: usize, k: usize) -> Option<u128> {
    let k = k.min(n - k);
    let mut c: u128 = 1;
    for i in 0..k {
        c = c.checked_mul((n - i) as u128)? / (i as u128 + 1);
    }
    Some(c)
}

fn improvement_threshold<T: Real>(reference: T) -> T {
    T::lit(1e-9) * (T::one() + reference.abs())
}

/// Exhaustive search over every combination of removed blocks.
///
/// Ties go to the lexicographically smallest removed set.
pub fn remove_optimal<T: Real>(program: &ScenarioProgram<T>, budgets: &[usize]) -> Result<RemovalOutcome<T>> {
    check_budgets(program, budgets)?;
    let mut count: u128 = 1;
    for (blocks, &r) in program.blocks.iter().zip(budgets) {
        count = binomial_u128(blocks.len(), r)
            .and_then(|c| count.checked_mul(c))
            .unwrap_or(u128::MAX);
    }
    if count > OPTIMAL_ENUMERATION_LIMIT {
        return Err(Error::CombinatorialLimit {
            count,
            limit: OPTIMAL_ENUMERATION_LIMIT,
        });
    }
    let candidates: Vec<Vec<Vec<usize>>> = program
        .blocks
        .iter()
        .zip(budgets)
        .map(|(blocks, &r)| (0..blocks.len()).combinations(r).collect::<Vec<_>>())
        .multi_cartesian_product()
        .collect();
    // no constraints at all
    let candidates = if candidates.is_empty() { vec![Vec::new()] } else { candidates };
    let options = QpOptions::default();
    let full = program.full_selection();
    let solutions: Vec<Result<QpSolution<T>>> = candidates
        .par_iter()
        .map(|removed| {
            let mut sel = full.clone();
            for (j, bs) in removed.iter().enumerate() {
                for &b in bs {
                    sel.enabled[j][b] = false;
                }
            }
            program.solve_selection(&sel, &options)
        })
        .collect();
    let mut best: Option<(usize, QpSolution<T>)> = None;
    for (i, sol) in solutions.into_iter().enumerate() {
        let sol = sol?;
        let better = match &best {
            None => true,
            Some((_, b)) => sol.objective < b.objective - improvement_threshold(b.objective),
        };
        if better {
            best = Some((i, sol));
        }
    }
    let (i, solution) = best.expect("at least one candidate");
    let removed = candidates[i].clone();
    let mut sel = full;
    for (j, bs) in removed.iter().enumerate() {
        for &b in bs {
            sel.enabled[j][b] = false;
        }
    }
    let qp_solves = candidates.len();
    Ok(outcome(program, sel, removed, count, qp_solves, solution))
}

fn metric_value<T: Real>(program: &ScenarioProgram<T>, sol: &QpSolution<T>, metric: GreedyMetric) -> T {
    match metric {
        GreedyMetric::TotalCost => sol.objective,
        GreedyMetric::FirstStageCost => program.first_stage_cost(&sol.u_stack),
    }
}

fn block_has_multiplier<T: Real>(program: &ScenarioProgram<T>, sol: &QpSolution<T>, j: usize, b: usize) -> bool {
    sol.dual[program.blocks[j][b].rows.clone()]
        .iter()
        .any(|l| *l > T::zero())
}

/// Sequential removal: each pass drops the block whose removal lowers the
/// metric most. Constraints are processed in order; ties go to the
/// smallest index.
pub fn remove_greedy<T: Real>(
    program: &ScenarioProgram<T>,
    budgets: &[usize],
    metric: GreedyMetric,
) -> Result<RemovalOutcome<T>> {
    check_budgets(program, budgets)?;
    let options = QpOptions::default();
    let mut sel = program.full_selection();
    let mut current = program.solve_selection(&sel, &options)?;
    let mut qp_solves = 1usize;
    let mut count: u128 = 0;
    let mut removed = vec![Vec::new(); budgets.len()];
    for (j, &budget) in budgets.iter().enumerate() {
        let k = program.blocks[j].len() as u128;
        let r = budget as u128;
        count += k * r - r * r.saturating_sub(1) / 2;
        for _ in 0..budget {
            let current_value = metric_value(program, &current, metric);
            let candidates: Vec<usize> = (0..program.blocks[j].len())
                .filter(|&b| sel.enabled[j][b])
                .collect();
            let to_solve: Vec<usize> = candidates
                .iter()
                .copied()
                .filter(|&b| block_has_multiplier(program, &current, j, b))
                .collect();
            let solved: Vec<Result<QpSolution<T>>> = to_solve
                .par_iter()
                .map(|&b| {
                    let mut s = sel.clone();
                    s.enabled[j][b] = false;
                    program.solve_mask_from(&program.row_mask(&s), &current.active, &options)
                })
                .collect();
            qp_solves += to_solve.len();
            let mut solved_iter = to_solve.iter().zip(solved);
            let mut next = solved_iter.next();
            let threshold = improvement_threshold(current_value);
            let mut best: Option<(usize, T, Option<QpSolution<T>>)> = None;
            for &b in &candidates {
                let sol = match &next {
                    Some((&sb, _)) if sb == b => {
                        let (_, res) = next.take().expect("checked");
                        next = solved_iter.next();
                        Some(res?)
                    }
                    _ => None,
                };
                let decrease = sol
                    .as_ref()
                    .map_or(T::zero(), |s| current_value - metric_value(program, s, metric));
                let better = best.as_ref().is_none_or(|(_, d, _)| decrease > *d + threshold);
                if better {
                    best = Some((b, decrease, sol));
                }
            }
            let (b, _, sol) = best.expect("budget below block count");
            sel.enabled[j][b] = false;
            removed[j].push(b);
            if let Some(sol) = sol {
                current = sol;
            }
        }
    }
    Ok(outcome(program, sel, removed, count, qp_solves, current))
}

/// Removes, one at a time, the block with the largest sum of multipliers
/// and re-solves.
pub fn remove_marginal<T: Real>(program: &ScenarioProgram<T>, budgets: &[usize]) -> Result<RemovalOutcome<T>> {
    check_budgets(program, budgets)?;
    let options = QpOptions::default();
    let mut sel = program.full_selection();
    let mut current = program.solve_selection(&sel, &options)?;
    let mut qp_solves = 1usize;
    let mut removed = vec![Vec::new(); budgets.len()];
    for (j, &budget) in budgets.iter().enumerate() {
        for _ in 0..budget {
            let mut best: Option<(usize, T)> = None;
            for (b, block) in program.blocks[j].iter().enumerate() {
                if !sel.enabled[j][b] {
                    continue;
                }
                let mut score = T::zero();
                for l in &current.dual[block.rows.clone()] {
                    score += *l;
                }
                if best.is_none_or(|(_, s)| score > s) {
                    best = Some((b, score));
                }
            }
            let (b, score) = best.expect("budget below block count");
            if score <= T::zero() {
                log::debug!("constraint {j}: all multipliers zero, removing first remaining block {b}");
            }
            sel.enabled[j][b] = false;
            removed[j].push(b);
            current = program.solve_mask_from(&program.row_mask(&sel), &current.active, &options)?;
            qp_solves += 1;
        }
    }
    let count = 1 + budgets.iter().map(|&r| r as u128).sum::<u128>();
    Ok(outcome(program, sel, removed, count, qp_solves, current))
}
