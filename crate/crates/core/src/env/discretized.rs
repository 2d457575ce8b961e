//! Aggregate-state reference model of Mountain Car estimated from the
//! behavior scheme's effective transitions.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::mountain_car::{mc_behavior_step, McState, P_MAX, P_MIN, V_MAX, V_MIN};
use crate::error::{EtdError, Result};
use crate::linalg;

pub const CELL_WIDTH_P: f64 = 0.1;
pub const CELL_WIDTH_V: f64 = 0.01;
pub const N_CELLS_P: usize = 17;
pub const N_CELLS_V: usize = 14;
pub const N_CELLS: usize = N_CELLS_P * N_CELLS_V;
/// Region count given in the original description of this model.
pub const STATED_REGIONS: usize = 270;

fn band(x: f64, lo: f64, width: f64, n: usize) -> usize {
    // grid points like −1.1 belong to the cell they start
    (((x - lo) / width + 1e-9).floor().max(0.0) as usize).min(n - 1)
}

/// Cell containing a non-terminal state; `None` for the goal.
pub fn cell_of(s: &McState) -> Option<usize> {
    if s.terminal {
        return None;
    }
    let i = band(s.p, P_MIN, CELL_WIDTH_P, N_CELLS_P);
    let j = band(s.v, V_MIN, CELL_WIDTH_V, N_CELLS_V);
    Some(i * N_CELLS_V + j)
}

/// Summary written next to the model.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct DiscretizedReport {
    pub schema_version: u32,
    pub run_length: u64,
    pub seed: u64,
    pub effective_iterations: u64,
    pub n_cells: usize,
    pub stated_regions: usize,
    pub note: String,
    /// Cells with no observed effective transition; they are sent to the goal
    /// with zero reward, so their value is 0.
    pub unvisited_cells: Vec<usize>,
    pub max_row_sum_error: f64,
    pub bellman_residual: f64,
    /// Some cells never reach the goal in the estimated kernel; the values
    /// are the min-norm solution.
    #[serde(default)]
    pub min_norm: bool,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct DiscretizedModel {
    /// `N_CELLS × (N_CELLS + 1)`; the last column is the goal.
    pub kernel: DMatrix<f64>,
    pub reward: DVector<f64>,
    pub values: DVector<f64>,
    pub counts: Vec<u64>,
    pub report: DiscretizedReport,
}

impl DiscretizedModel {
    /// Piecewise-constant value at `(p, v)`; 0 at the goal.
    pub fn value_at(&self, p: f64, v: f64) -> Result<f64> {
        if !(P_MIN..=P_MAX).contains(&p) || !(V_MIN..=V_MAX).contains(&v) {
            return Err(EtdError::OutOfDomain(format!("({p}, {v})")));
        }
        Ok(cell_of(&McState::new(p, v)).map_or(0.0, |c| self.values[c]))
    }
}

/// Runs the behavior scheme for `run_length` steps from a uniform start and
/// estimates the aggregate model from the effective transitions.
pub fn build_discretized_model(run_length: u64, seed: u64) -> Result<DiscretizedModel> {
    if run_length == 0 {
        return Err(EtdError::InvalidArgument("run_length must be at least 1".into()));
    }
    let goal = N_CELLS;
    let mut trans = vec![0u64; N_CELLS * (N_CELLS + 1)];
    let mut reward_sum = vec![0.0; N_CELLS];
    let mut counts = vec![0u64; N_CELLS];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = McState::uniform(&mut rng);
    let mut effective = 0u64;
    for _ in 0..run_length {
        let out = mc_behavior_step(&s, &mut rng);
        if out.effective {
            if let Some(c) = cell_of(&s) {
                let c2 = cell_of(&out.next).unwrap_or(goal);
                trans[c * (N_CELLS + 1) + c2] += 1;
                reward_sum[c] += out.reward;
                counts[c] += 1;
                effective += 1;
            }
        }
        s = out.next;
    }

    let mut kernel = DMatrix::zeros(N_CELLS, N_CELLS + 1);
    let mut reward = DVector::zeros(N_CELLS);
    let mut unvisited = Vec::new();
    for c in 0..N_CELLS {
        if counts[c] == 0 {
            kernel[(c, goal)] = 1.0;
            unvisited.push(c);
            continue;
        }
        let n = counts[c] as f64;
        for c2 in 0..=N_CELLS {
            kernel[(c, c2)] = trans[c * (N_CELLS + 1) + c2] as f64 / n;
        }
        reward[c] = reward_sum[c] / n;
    }
    let max_row_sum_error = (0..N_CELLS).map(|c| (kernel.row(c).sum() - 1.0).abs()).fold(0.0, f64::max);

    // v = r + P v over the cells, the goal has value 0
    let p = kernel.columns(0, N_CELLS).into_owned();
    let a = DMatrix::identity(N_CELLS, N_CELLS) - &p;
    let (values, min_norm) = match linalg::solve_square(&a, &reward, 1e-14) {
        Some(v) => (v, false),
        None => (linalg::min_norm_solve(&a, &reward, 1e-12).0, true),
    };
    let bellman_residual = linalg::max_abs((&reward + &p * &values - &values).iter().copied());
    if bellman_residual > 1e-8 {
        return Err(EtdError::Singular("discretized Bellman system (cells that never reach the goal; raise run_length)".into()));
    }

    let report = DiscretizedReport {
        schema_version: 1,
        run_length,
        seed,
        effective_iterations: effective,
        n_cells: N_CELLS,
        stated_regions: STATED_REGIONS,
        note: format!(
            "{N_CELLS_P} position x {N_CELLS_V} velocity cells = {N_CELLS}; the stated region count is {STATED_REGIONS}"
        ),
        unvisited_cells: unvisited,
        max_row_sum_error,
        bellman_residual,
        min_norm,
        values: values.iter().copied().collect(),
    };
    Ok(DiscretizedModel { kernel, reward, values, counts, report })
}
