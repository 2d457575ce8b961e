//! Feature maps: state aggregation for the finite problems, and the
//! region-wise affine and tile-coding schemes for Mountain Car.
//!
//! Partitions are given by sorted cut points. Every interval is closed on
//! the left and open on the right, except that the upper edge of the state
//! box belongs to the last interval.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::env::mountain_car::{McState, P_MAX, P_MIN, V_MAX, V_MIN};
use crate::error::{EtdError, Result};

/// Index of the interval containing `x` for the partition defined by `cuts`.
pub fn interval_index(cuts: &[f64], x: f64) -> usize {
    cuts.partition_point(|c| *c <= x)
}

/// One tiling of the position/velocity box.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tiling {
    pub pos_cuts: Vec<f64>,
    pub vel_cuts: Vec<f64>,
}

impl Tiling {
    pub fn new(pos_cuts: &[f64], vel_cuts: &[f64]) -> Self {
        Self { pos_cuts: pos_cuts.to_vec(), vel_cuts: vel_cuts.to_vec() }
    }

    pub fn n_pos(&self) -> usize {
        self.pos_cuts.len() + 1
    }

    pub fn n_vel(&self) -> usize {
        self.vel_cuts.len() + 1
    }

    pub fn len(&self) -> usize {
        self.n_pos() * self.n_vel()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Tile index, position-major.
    pub fn tile(&self, p: f64, v: f64) -> usize {
        interval_index(&self.pos_cuts, p) * self.n_vel() + interval_index(&self.vel_cuts, v)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum FeatureScheme {
    /// One-hot group membership: `groups[s]` is the group of finite state `s`.
    Aggregation { groups: Vec<usize>, d: usize },
    /// One `(1, cos 3p, 15v)` block per rectangle of a single partition.
    RegionLinear { partition: Tiling },
    /// Binary tile indicators over several overlapping tilings.
    Tiling { tilings: Vec<Tiling> },
}

impl FeatureScheme {
    pub fn aggregation(groups: Vec<usize>) -> Self {
        let d = groups.iter().copied().max().map_or(0, |g| g + 1);
        FeatureScheme::Aggregation { groups, d }
    }

    /// 7 × 6 rectangles with an affine block each (d = 126).
    pub fn region_linear() -> Self {
        FeatureScheme::RegionLinear {
            partition: Tiling::new(&[-0.9, -0.7, -0.5, -0.3, 0.0, 0.3], &[-0.05, -0.03, 0.0, 0.03, 0.05]),
        }
    }

    /// Coarse tile coding: 36 + 42 = 78 features.
    pub fn tiling_a() -> Self {
        FeatureScheme::Tiling {
            tilings: vec![
                Tiling::new(&[-0.9, -0.6, -0.3, 0.0, 0.3], &[-0.05, -0.02, 0.0, 0.02, 0.05]),
                Tiling::new(&[-1.0, -0.7, -0.4, -0.1, 0.2], &[-0.06, -0.04, -0.01, 0.01, 0.03, 0.06]),
            ],
        }
    }

    /// Fine tile coding: 64 + 81 = 145 features.
    pub fn tiling_b() -> Self {
        FeatureScheme::Tiling {
            tilings: vec![
                Tiling::new(
                    &[-1.0, -0.8, -0.6, -0.4, -0.2, 0.0, 0.2],
                    &[-0.05, -0.03, -0.01, 0.0, 0.01, 0.03, 0.05],
                ),
                Tiling::new(
                    &[-1.1, -0.9, -0.7, -0.5, -0.3, -0.1, 0.1, 0.3],
                    &[-0.06, -0.04, -0.02, 0.0, 0.01, 0.02, 0.04, 0.06],
                ),
            ],
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            FeatureScheme::Aggregation { d, .. } => *d,
            FeatureScheme::RegionLinear { partition } => 3 * partition.len(),
            FeatureScheme::Tiling { tilings } => tilings.iter().map(Tiling::len).sum(),
        }
    }

    /// Features of finite state `s` (aggregation only).
    pub fn finite(&self, s: usize) -> Result<DVector<f64>> {
        match self {
            FeatureScheme::Aggregation { groups, d } => {
                let g = *groups
                    .get(s)
                    .ok_or_else(|| EtdError::OutOfDomain(format!("finite state {s}")))?;
                let mut out = DVector::zeros(*d);
                out[g] = 1.0;
                Ok(out)
            }
            _ => Err(EtdError::InvalidArgument("continuous feature scheme applied to a finite state".into())),
        }
    }

    /// Features of a Mountain Car state.
    pub fn mountain_car(&self, s: &McState) -> Result<DVector<f64>> {
        let mut out = DVector::zeros(self.dim());
        self.mountain_car_into(s, &mut out)?;
        Ok(out)
    }

    /// Writes the features of `s` into `out`, which must have length `dim()`.
    pub fn mountain_car_into(&self, s: &McState, out: &mut DVector<f64>) -> Result<()> {
        let (p, v) = (s.p, s.v);
        if !(P_MIN..=P_MAX).contains(&p) || !(V_MIN..=V_MAX).contains(&v) {
            return Err(EtdError::OutOfDomain(format!("(p, v) = ({p}, {v})")));
        }
        out.fill(0.0);
        match self {
            FeatureScheme::Aggregation { .. } => {
                return Err(EtdError::InvalidArgument("aggregation scheme applied to a continuous state".into()))
            }
            FeatureScheme::RegionLinear { partition } => {
                let base = 3 * partition.tile(p, v);
                out[base] = 1.0;
                out[base + 1] = (3.0 * p).cos();
                out[base + 2] = 15.0 * v;
            }
            FeatureScheme::Tiling { tilings } => {
                let mut offset = 0;
                for t in tilings {
                    out[offset + t.tile(p, v)] = 1.0;
                    offset += t.len();
                }
            }
        }
        Ok(())
    }
}
