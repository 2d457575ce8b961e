//! Monte Carlo value tables of the Mountain Car target policy.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::mountain_car::{action_reward, mc_dynamics, mc_target_action, McState, P_MAX, P_MIN, V_MAX, V_MIN};
use crate::error::{EtdError, Result};

pub const DEFAULT_EPISODE_CAP: u64 = 100_000;
pub const LATTICE_P: usize = 171;
pub const LATTICE_V: usize = 141;

/// The evenly spaced evaluation lattice, position-major.
pub fn evaluation_lattice() -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(LATTICE_P * LATTICE_V);
    for i in 0..LATTICE_P {
        let p = if i + 1 == LATTICE_P { P_MAX } else { P_MIN + 0.01 * i as f64 };
        for j in 0..LATTICE_V {
            let v = if j + 1 == LATTICE_V { V_MAX } else { V_MIN + 0.001 * j as f64 };
            out.push((p, v));
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McValueEntry {
    pub p: f64,
    pub v: f64,
    pub value: f64,
    pub std_error: f64,
    /// Episodes stopped by the step cap.
    pub capped: u64,
}

/// Undiscounted return of one target-policy episode and whether it hit the cap.
pub fn rollout(start: McState, cap: u64, rng: &mut ChaCha8Rng) -> (f64, bool) {
    let mut s = start;
    let mut ret = 0.0;
    for _ in 0..cap {
        if s.terminal {
            return (ret, false);
        }
        let a = mc_target_action(&s, rng);
        ret += action_reward(a);
        s = mc_dynamics(&s, a);
    }
    (ret, !s.terminal)
}

/// Averages `episodes` target-policy returns from every grid state. Each
/// state has its own stream derived from `seed` and its index, so the table
/// does not depend on the thread count.
pub fn mc_monte_carlo_value(grid: &[(f64, f64)], episodes: u64, cap: u64, seed: u64) -> Result<Vec<McValueEntry>> {
    if episodes == 0 {
        return Err(EtdError::InvalidArgument("episodes_per_state must be at least 1".into()));
    }
    Ok(grid
        .par_iter()
        .enumerate()
        .map(|(idx, &(p, v))| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(idx as u64);
            let start = McState::new(p, v);
            let (mut sum, mut sq, mut capped) = (0.0, 0.0, 0);
            for _ in 0..episodes {
                let (g, hit) = rollout(start, cap, &mut rng);
                sum += g;
                sq += g * g;
                capped += u64::from(hit);
            }
            let n = episodes as f64;
            let mean = sum / n;
            let std_error = if episodes > 1 {
                ((sq - n * mean * mean).max(0.0) / (n - 1.0) / n).sqrt()
            } else {
                0.0
            };
            McValueEntry { p, v, value: mean, std_error, capped }
        })
        .collect())
}

/// Writes `p,v,value` rows.
pub fn write_value_grid<W: Write>(out: &mut W, rows: impl IntoIterator<Item = (f64, f64, f64)>) -> std::io::Result<()> {
    writeln!(out, "p,v,value")?;
    for (p, v, value) in rows {
        writeln!(out, "{p},{v},{value}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lattice_shape() {
        let g = evaluation_lattice();
        assert_eq!(g.len(), 171 * 141);
        assert_eq!(g[0], (-1.2, -0.07));
        assert_eq!(*g.last().unwrap(), (0.5, 0.07));
    }

    #[test]
    fn terminal_start_is_zero() {
        let t = mc_monte_carlo_value(&[(0.5, 0.0)], 5, DEFAULT_EPISODE_CAP, 0).unwrap();
        assert_eq!(t[0].value, 0.0);
    }

    #[test]
    fn near_goal_finishes_fast() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (g, capped) = rollout(McState::new(0.49, 0.07), 2, &mut rng);
        assert!(!capped);
        assert!((-1.5..=0.0).contains(&g));
    }

    #[test]
    fn returns_nonpositive_and_thread_independent() {
        let grid = [(-0.5, 0.0), (-1.1, 0.01), (0.2, -0.03)];
        let a = mc_monte_carlo_value(&grid, 20, DEFAULT_EPISODE_CAP, 3).unwrap();
        let b = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap()
            .install(|| mc_monte_carlo_value(&grid, 20, DEFAULT_EPISODE_CAP, 3).unwrap());
        assert_eq!(a, b);
        assert!(a.iter().all(|e| e.value <= 0.0 && e.capped == 0));
    }

    #[test]
    fn csv_header() {
        let mut buf = Vec::new();
        write_value_grid(&mut buf, [(0.0, 0.0, -1.0)]).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "p,v,value\n0,0,-1\n");
    }
}
