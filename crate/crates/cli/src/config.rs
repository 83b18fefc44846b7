//! Experiment configuration: one JSON document, matrices as row-major nested
//! arrays. Unknown keys are rejected.

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::Deserialize;

use scmpc::complexity::{min_sample_size, support_rank_bound};
use scmpc::controller::{ConstraintConfig, ControllerConfig};
use scmpc::model::{ChanceConstraintSpec, Polytope, ScalarDistribution, StageCost, SystemModel};
use scmpc::removal::{GreedyMetric, RemovalAlgorithm};

use crate::CliError;

pub const DEFAULT_CONTROLLER_SEED: u64 = 1;
pub const DEFAULT_PLANT_SEED: u64 = 2;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub system: SystemBlock,
    pub horizon: usize,
    pub constraints: Vec<ConstraintBlock>,
    #[serde(default)]
    pub inputs: Option<SetBlock>,
    #[serde(default)]
    pub cost: Option<CostBlock>,
    #[serde(default)]
    pub removal: RemovalName,
    /// Omitted: automatic penalty. `0`: hard constraints.
    #[serde(default)]
    pub slack_penalty: Option<f64>,
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default)]
    pub seeds: Seeds,
    #[serde(default)]
    pub output: Option<PathBuf>,
}

fn default_steps() -> usize {
    1000
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemBlock {
    pub a0: Vec<Vec<f64>>,
    pub b0: Vec<Vec<f64>>,
    #[serde(default)]
    pub parameters: Vec<ParameterBlock>,
    #[serde(default)]
    pub noise: Vec<Distribution>,
    pub x0: Vec<f64>,
}

/// One scalar parameter `θ` entering as `θ·A` and `θ·B`.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParameterBlock {
    pub distribution: Distribution,
    #[serde(default)]
    pub a: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub b: Option<Vec<Vec<f64>>>,
}

#[derive(Clone, Copy, Debug, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum Distribution {
    Uniform { low: f64, high: f64 },
    Normal { mean: f64, variance: f64 },
    Constant { value: f64 },
}

impl From<Distribution> for ScalarDistribution {
    fn from(d: Distribution) -> Self {
        match d {
            Distribution::Uniform { low, high } => ScalarDistribution::uniform(low, high),
            Distribution::Normal { mean, variance } => ScalarDistribution::normal(mean, variance),
            Distribution::Constant { value } => ScalarDistribution::constant(value),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstraintBlock {
    /// Rows of `H` in `H x ≤ h`.
    pub normals: Vec<Vec<f64>>,
    pub offsets: Vec<f64>,
    pub epsilon: f64,
    #[serde(default)]
    pub rho1: Option<usize>,
    #[serde(default)]
    pub removals: usize,
    /// Omitted: smallest admissible sample size.
    #[serde(default)]
    pub samples: Option<usize>,
}

/// Either a box or a general polytope.
#[derive(Debug, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum SetBlock {
    Box { lower: Vec<f64>, upper: Vec<f64> },
    Polytope { normals: Vec<Vec<f64>>, offsets: Vec<f64> },
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostBlock {
    pub state: Vec<Vec<f64>>,
    pub input: Vec<Vec<f64>>,
}

#[derive(Clone, Copy, Debug, Default, Deserialize, PartialEq)]
#[serde(rename_all = "kebab-case")]
pub enum RemovalName {
    #[default]
    Greedy,
    GreedyFirstStage,
    Optimal,
    Marginal,
}

impl From<RemovalName> for RemovalAlgorithm {
    fn from(r: RemovalName) -> Self {
        match r {
            RemovalName::Greedy => RemovalAlgorithm::Greedy(GreedyMetric::TotalCost),
            RemovalName::GreedyFirstStage => RemovalAlgorithm::Greedy(GreedyMetric::FirstStageCost),
            RemovalName::Optimal => RemovalAlgorithm::Optimal,
            RemovalName::Marginal => RemovalAlgorithm::Marginal,
        }
    }
}

#[derive(Clone, Copy, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Seeds {
    #[serde(default = "controller_seed")]
    pub controller: u64,
    #[serde(default = "plant_seed")]
    pub plant: u64,
}

fn controller_seed() -> u64 {
    DEFAULT_CONTROLLER_SEED
}

fn plant_seed() -> u64 {
    DEFAULT_PLANT_SEED
}

impl Default for Seeds {
    fn default() -> Self {
        Self {
            controller: DEFAULT_CONTROLLER_SEED,
            plant: DEFAULT_PLANT_SEED,
        }
    }
}

/// Validated experiment ready to run.
#[derive(Debug)]
pub struct Experiment {
    pub model: SystemModel<f64>,
    pub controller: ControllerConfig<f64>,
    pub x0: DVector<f64>,
    pub steps: usize,
    pub plant_seed: u64,
    pub output: Option<PathBuf>,
}

pub fn load(path: &Path) -> Result<ExperimentConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Schema(format!("{}: {e}", path.display())))
}

fn matrix(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>, CliError> {
    let cols = rows.first().map_or(0, Vec::len);
    if rows.is_empty() || cols == 0 {
        return Err(CliError::Schema(format!("{what} must be a non-empty matrix")));
    }
    if rows.iter().any(|r| r.len() != cols) {
        return Err(CliError::Schema(format!("{what} has rows of different lengths")));
    }
    Ok(DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}

fn shape(m: &DMatrix<f64>, rows: usize, cols: usize, what: &str) -> Result<(), CliError> {
    if m.shape() != (rows, cols) {
        return Err(CliError::Schema(format!(
            "{what} must be {rows}x{cols}, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(())
}

fn polytope(normals: &[Vec<f64>], offsets: &[f64], dim: usize, what: &str) -> Result<Polytope<f64>, CliError> {
    let h = matrix(normals, what)?;
    shape(&h, offsets.len(), dim, what)?;
    Ok(Polytope::new(h, DVector::from_column_slice(offsets))?)
}

impl ExperimentConfig {
    pub fn build(&self) -> Result<Experiment, CliError> {
        let sys = &self.system;
        let a0 = matrix(&sys.a0, "system.a0")?;
        let n = a0.nrows();
        shape(&a0, n, n, "system.a0")?;
        let b0 = matrix(&sys.b0, "system.b0")?;
        let m = b0.ncols();
        shape(&b0, n, m, "system.b0")?;
        let mut model = SystemModel::new(a0, b0)?;
        for (i, p) in sys.parameters.iter().enumerate() {
            let a = match &p.a {
                Some(rows) => matrix(rows, "parameter a")?,
                None => DMatrix::zeros(n, n),
            };
            let b = match &p.b {
                Some(rows) => matrix(rows, "parameter b")?,
                None => DMatrix::zeros(n, m),
            };
            shape(&a, n, n, &format!("system.parameters[{i}].a"))?;
            shape(&b, n, m, &format!("system.parameters[{i}].b"))?;
            model = model.with_parameter(p.distribution.into(), a, b)?;
        }
        if !sys.noise.is_empty() {
            model = model.with_noise(sys.noise.iter().map(|&d| d.into()).collect())?;
        }
        if sys.x0.len() != n {
            return Err(CliError::Schema(format!("system.x0 must have {n} entries, got {}", sys.x0.len())));
        }
        if self.horizon == 0 {
            return Err(CliError::Schema("horizon must be at least 1".into()));
        }
        if self.constraints.is_empty() {
            return Err(CliError::Schema("at least one constraint block is required".into()));
        }
        if self.steps == 0 {
            return Err(CliError::Schema("steps must be at least 1".into()));
        }

        let mut constraints = Vec::with_capacity(self.constraints.len());
        for (j, c) in self.constraints.iter().enumerate() {
            let what = format!("constraints[{j}]");
            let set = polytope(&c.normals, &c.offsets, n, &what)?;
            let rho1 = match c.rho1 {
                Some(r) => r,
                None => support_rank_bound(&model, &set, self.horizon)?.rho1,
            };
            let spec = ChanceConstraintSpec::new(set, c.epsilon, rho1, n, self.horizon * m)?;
            let samples = match c.samples {
                Some(k) => k,
                None => min_sample_size(c.removals, rho1, c.epsilon)?,
            };
            constraints.push(ConstraintConfig {
                spec,
                samples,
                removals: c.removals,
            });
        }

        let input_set = match &self.inputs {
            None => Polytope::unconstrained(m),
            Some(SetBlock::Box { lower, upper }) => {
                if lower.len() != m || upper.len() != m {
                    return Err(CliError::Schema(format!("input box bounds must have {m} entries")));
                }
                Polytope::bounds(lower, upper)?
            }
            Some(SetBlock::Polytope { normals, offsets }) => polytope(normals, offsets, m, "inputs")?,
        };
        let cost = match &self.cost {
            None => StageCost::identity(n, m),
            Some(c) => {
                let q = matrix(&c.state, "cost.state")?;
                let r = matrix(&c.input, "cost.input")?;
                shape(&q, n, n, "cost.state")?;
                shape(&r, m, m, "cost.input")?;
                StageCost::new(q, r)?
            }
        };
        if matches!(self.slack_penalty, Some(p) if !(p >= 0.0 && p.is_finite())) {
            return Err(CliError::Schema("slack_penalty must be finite and nonnegative".into()));
        }

        Ok(Experiment {
            model,
            controller: ControllerConfig {
                horizon: self.horizon,
                constraints,
                input_set,
                cost,
                removal: self.removal.into(),
                slack_penalty: self.slack_penalty,
                seed: self.seeds.controller,
            },
            x0: DVector::from_column_slice(&sys.x0),
            steps: self.steps,
            plant_seed: self.seeds.plant,
            output: self.output.clone(),
        })
    }
}
