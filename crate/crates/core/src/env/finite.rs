//! The two finite test problems and a sampler for finite models.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::features::FeatureScheme;
use crate::error::{EtdError, Result};
use crate::mdp::FiniteMdp;
use crate::scalar::Real;
use crate::trace::StepRecord;

fn mat<T: Real>(n: usize, rows: &[f64]) -> DMatrix<T> {
    DMatrix::from_fn(n, n, |r, c| T::lit(rows[r * n + c]))
}

fn vec_of<T: Real>(v: &[f64]) -> DVector<T> {
    DVector::from_iterator(v.len(), v.iter().map(|x| T::lit(*x)))
}

fn features_of<T: Real>(scheme: &FeatureScheme, n: usize) -> DMatrix<T> {
    let d = scheme.dim();
    let mut phi = DMatrix::zeros(n, d);
    for s in 0..n {
        let row = scheme.finite(s).expect("aggregation covers every state");
        for k in 0..d {
            phi[(s, k)] = T::lit(row[k]);
        }
    }
    phi
}

/// Problem I: six states (labels 1..6 are indices 0..5).
///
/// Reward 1 on `6 → 1`, `γ = (0.7, 1, 1, 1, 1, 1)`, interest and `λ = 0` on
/// the states of interest {2, 4, 6}, aggregation groups {1,4}, {2,3}, {5,6}.
pub fn build_problem1<T: Real>() -> FiniteMdp<T> {
    #[rustfmt::skip]
    let target = [
        0.0, 0.0, 0.0, 1.0, 0.0, 0.0,
        0.9, 0.0, 0.1, 0.0, 0.0, 0.0,
        0.0, 0.9, 0.0, 0.1, 0.0, 0.0,
        0.0, 0.0, 0.2, 0.3, 0.5, 0.0,
        0.0, 0.0, 0.0, 0.1, 0.0, 0.9,
        0.9, 0.0, 0.0, 0.0, 0.1, 0.0,
    ];
    #[rustfmt::skip]
    let behavior = [
        0.0, 0.0, 0.0, 1.0, 0.0, 0.0,
        0.5, 0.0, 0.5, 0.0, 0.0, 0.0,
        0.0, 0.5, 0.0, 0.5, 0.0, 0.0,
        0.0, 0.0, 0.4, 0.2, 0.4, 0.0,
        0.0, 0.0, 0.0, 0.5, 0.0, 0.5,
        0.5, 0.0, 0.0, 0.0, 0.5, 0.0,
    ];
    let mut reward = DMatrix::zeros(6, 6);
    reward[(5, 0)] = T::one();
    FiniteMdp {
        n_states: 6,
        p_target: mat(6, &target),
        p_behavior: mat(6, &behavior),
        reward,
        gamma: vec_of(&[0.7, 1.0, 1.0, 1.0, 1.0, 1.0]),
        lambda: vec_of(&[1.0, 0.0, 1.0, 0.0, 1.0, 0.0]),
        interest: vec_of(&[0.0, 1.0, 0.0, 1.0, 0.0, 1.0]),
        features: features_of(&problem1_features(), 6),
    }
}

pub fn problem1_features() -> FeatureScheme {
    FeatureScheme::aggregation(vec![0, 1, 1, 0, 2, 2])
}

/// Problem I with interest only on {2, 6} and `λ = 0` there (1 elsewhere).
pub fn build_problem1_two_interest<T: Real>() -> FiniteMdp<T> {
    let mut m = build_problem1::<T>();
    m.interest = vec_of(&[0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
    m.lambda = vec_of(&[1.0, 0.0, 1.0, 1.0, 1.0, 0.0]);
    m
}

/// Problem I with `λ ≡ 1`.
pub fn build_problem1_lambda_one<T: Real>() -> FiniteMdp<T> {
    let mut m = build_problem1::<T>();
    m.lambda = DVector::from_element(6, T::one());
    m
}

/// Which transitions carry a group's ±1 reward in Problem II.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MiddleReward {
    /// Every transition entering the middle state.
    #[default]
    Entering,
    /// Every transition leaving the middle state.
    Leaving,
}

pub const PROBLEM2_GROUPS: usize = 4;
pub const PROBLEM2_GROUP_SIZE: usize = 5;
/// Position of the middle state inside a group.
pub const PROBLEM2_MIDDLE: usize = 2;

/// Index of local state `k` (0..5) of group `g` (0 = NE, 1 = NW, 2 = SW,
/// 3 = SE, counterclockwise). State 0 is the center.
pub fn problem2_state(g: usize, k: usize) -> usize {
    1 + PROBLEM2_GROUP_SIZE * g + k
}

/// Problem II: a central state and four five-state loops.
pub fn build_problem2<T: Real>(middle: MiddleReward) -> FiniteMdp<T> {
    let n = 1 + PROBLEM2_GROUPS * PROBLEM2_GROUP_SIZE;
    let mut pt = DMatrix::<T>::zeros(n, n);
    let mut pb = DMatrix::<T>::zeros(n, n);
    let mut reward = DMatrix::<T>::zeros(n, n);
    // (from, to, target prob, behavior prob) inside one group; usize::MAX is the center
    const C: usize = usize::MAX;
    let edges: [(usize, usize, f64, f64); 9] = [
        (0, 1, 1.0, 1.0),
        (1, 0, 0.2, 0.5),
        (1, 2, 0.8, 0.5),
        (2, 1, 0.2, 0.5),
        (2, 3, 0.8, 0.5),
        (3, 2, 0.2, 0.5),
        (3, 4, 0.8, 0.5),
        (4, 3, 0.2, 0.5),
        (4, C, 0.8, 0.5),
    ];
    for g in 0..PROBLEM2_GROUPS {
        let first = problem2_state(g, 0);
        pt[(0, first)] = T::lit(0.25);
        pb[(0, first)] = T::lit(0.25);
        for &(a, b, t, bh) in &edges {
            let from = problem2_state(g, a);
            let to = if b == C { 0 } else { problem2_state(g, b) };
            pt[(from, to)] = T::lit(t);
            pb[(from, to)] = T::lit(bh);
        }
        let sign = if g < 2 { T::one() } else { -T::one() };
        let mid = problem2_state(g, PROBLEM2_MIDDLE);
        for s in 0..n {
            match middle {
                MiddleReward::Entering if pb[(s, mid)] > T::zero() => reward[(s, mid)] = sign,
                MiddleReward::Leaving if pb[(mid, s)] > T::zero() => reward[(mid, s)] = sign,
                _ => {}
            }
        }
    }
    let groups: Vec<usize> = (0..n).map(|s| if s == 0 { 0 } else { 1 + (s - 1) / PROBLEM2_GROUP_SIZE }).collect();
    FiniteMdp {
        n_states: n,
        p_target: pt,
        p_behavior: pb,
        reward,
        gamma: DVector::from_element(n, T::lit(0.9)),
        lambda: DVector::zeros(n),
        interest: DVector::from_element(n, T::one()),
        features: features_of(&FeatureScheme::aggregation(groups), n),
    }
}

/// Samples transitions of a finite model under its behavior kernel.
#[derive(Clone, Debug)]
pub struct FiniteSimulator<'m, T: Real> {
    model: &'m FiniteMdp<T>,
    pub state: usize,
    cumulative: Vec<Vec<f64>>,
}

impl<'m, T: Real> FiniteSimulator<'m, T> {
    pub fn new(model: &'m FiniteMdp<T>, start: usize) -> Result<Self> {
        if start >= model.n_states {
            return Err(EtdError::OutOfDomain(format!("start state {start}")));
        }
        let cumulative = (0..model.n_states)
            .map(|s| {
                let mut acc = 0.0;
                (0..model.n_states)
                    .map(|s2| {
                        acc += model.p_behavior[(s, s2)].as_f64();
                        acc
                    })
                    .collect()
            })
            .collect();
        Ok(Self { model, state: start, cumulative })
    }

    fn sample_next<R: Rng + ?Sized>(&self, s: usize, rng: &mut R) -> Result<usize> {
        let row = &self.cumulative[s];
        let total = *row.last().unwrap_or(&0.0);
        if total <= 0.0 {
            return Err(EtdError::InvalidModel(format!("behavior row {s} has no mass")));
        }
        let u = rng.gen::<f64>() * total;
        let k = row.partition_point(|c| *c <= u);
        // skip zero-probability columns that share the cumulative value
        Ok(k.min(row.len() - 1))
    }

    /// Samples `S_{t+1}` from the current state and returns the record for
    /// the transition together with the new state.
    pub fn step<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<(StepRecord<T>, usize)> {
        let m = self.model;
        let s = self.state;
        let s2 = self.sample_next(s, rng)?;
        let rho = m.rho(s, s2);
        let rec = StepRecord {
            phi_t: m.phi(s),
            i_t: m.interest[s],
            gamma_t: m.gamma[s],
            lambda_t: m.lambda[s],
            rho_t: rho,
            reward: m.reward[(s, s2)],
            phi_next: m.phi(s2),
            gamma_next: m.gamma[s2],
            effective: rho > T::zero(),
        };
        self.state = s2;
        Ok((rec, s2))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn problem1_basics() {
        let m = build_problem1::<f64>();
        assert!(m.validate().passed());
        assert_eq!(m.reward.sum(), 1.0);
        assert_eq!(m.reward[(5, 0)], 1.0);
        assert_eq!(m.gamma[0], 0.7);
        assert_eq!(m.feature_dim(), 3);
    }

    #[test]
    fn problem2_basics() {
        for mr in [MiddleReward::Entering, MiddleReward::Leaving] {
            let m = build_problem2::<f64>(mr);
            assert_eq!(m.n_states, 21);
            assert!(m.validate().passed(), "{}", m.validate());
            assert!(m.gamma.iter().all(|g| *g == 0.9));
            assert_eq!(m.feature_dim(), 5);
            // two +1 groups and two −1 groups, each middle state has two in/out edges
            assert_eq!(m.reward.iter().filter(|r| **r == 1.0).count(), 4);
            assert_eq!(m.reward.iter().filter(|r| **r == -1.0).count(), 4);
        }
    }

    #[test]
    fn problem1_state1_goes_to_4() {
        let m = build_problem1::<f64>();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..100 {
            let mut sim = FiniteSimulator::new(&m, 0).unwrap();
            let (rec, s2) = sim.step(&mut rng).unwrap();
            assert_eq!(s2, 3);
            assert_eq!(rec.rho_t, 1.0);
        }
    }

    #[test]
    fn self_loop_weight() {
        let m = build_problem1::<f64>();
        assert!((m.rho(3, 3) - 1.5).abs() < 1e-15);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut sim = FiniteSimulator::new(&m, 3).unwrap();
        loop {
            sim.state = 3;
            let (rec, s2) = sim.step(&mut rng).unwrap();
            if s2 == 3 {
                assert!((rec.rho_t - 1.5).abs() < 1e-15);
                break;
            }
        }
    }

    #[test]
    fn zero_row_is_a_model_error() {
        let mut m = build_problem1::<f64>();
        m.p_behavior.row_mut(2).fill(0.0);
        let mut sim = FiniteSimulator::new(&m, 2).unwrap();
        assert!(sim.step(&mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }
}
