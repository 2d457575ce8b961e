//! Mountain Car dynamics, the fixed target policy, and the behavior sampling
//! scheme used to generate off-policy data.

use nalgebra::DVector;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::features::FeatureScheme;
use crate::error::Result;
use crate::trace::StepRecord;

pub const P_MIN: f64 = -1.2;
pub const P_MAX: f64 = 0.5;
pub const V_MIN: f64 = -0.07;
pub const V_MAX: f64 = 0.07;

/// Velocity magnitude below which the target policy randomizes.
pub const TIE_SPEED: f64 = 1e-6;
/// Probability the behavior scheme picks each of the three actions.
pub const ACTION_PROB: f64 = 0.3;
pub const JUMP_RIGHT_PROB: f64 = 0.04;
pub const JUMP_LEFT_PROB: f64 = 0.04;
pub const JUMP_UNIFORM_PROB: f64 = 0.02;

pub const INTEREST: f64 = 0.5;
pub const LAMBDA: f64 = 0.5;

pub const ACTIONS: [i8; 3] = [-1, 0, 1];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct McState {
    pub p: f64,
    pub v: f64,
    pub terminal: bool,
}

impl McState {
    pub fn new(p: f64, v: f64) -> Self {
        Self { p, v, terminal: p >= P_MAX }
    }

    pub fn uniform<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Self::new(rng.gen_range(P_MIN..=P_MAX), rng.gen_range(V_MIN..=V_MAX))
    }
}

/// Reward of an action taken before reaching the goal.
pub fn action_reward(a: i8) -> f64 {
    match a {
        -1 => -1.5,
        1 => -1.0,
        _ => 0.0,
    }
}

/// One step of the car under action `a ∈ {−1, 0, 1}`.
pub fn mc_dynamics(s: &McState, a: i8) -> McState {
    let mut v = (s.v + 0.001 * f64::from(a) - 0.0025 * (3.0 * s.p).cos()).clamp(V_MIN, V_MAX);
    let p = (s.p + v).clamp(P_MIN, P_MAX);
    if p == P_MIN {
        v = 0.0;
    }
    McState::new(p, v)
}

/// Probability that the target policy takes `a` at `s`.
pub fn mc_target_prob(s: &McState, a: i8) -> f64 {
    if s.p < -1.0 {
        return if a == 0 { 1.0 } else { 0.0 };
    }
    if s.v.abs() <= TIE_SPEED {
        return if a == 0 { 0.0 } else { 0.5 };
    }
    let sign = if s.v > 0.0 { 1 } else { -1 };
    if a == sign {
        1.0
    } else {
        0.0
    }
}

/// Samples an action from the target policy.
pub fn mc_target_action<R: Rng + ?Sized>(s: &McState, rng: &mut R) -> i8 {
    if s.p < -1.0 {
        0
    } else if s.v.abs() <= TIE_SPEED {
        if rng.gen_bool(0.5) {
            1
        } else {
            -1
        }
    } else if s.v > 0.0 {
        1
    } else {
        -1
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum McOutcomeKind {
    Action(i8),
    JumpRight,
    JumpLeft,
    JumpUniform,
    Restart,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct McBehaviorOutcome {
    pub kind: McOutcomeKind,
    pub rho: f64,
    pub next: McState,
    pub reward: f64,
    pub effective: bool,
}

/// One draw of the behavior sampling scheme from `s`.
pub fn mc_behavior_step<R: Rng + ?Sized>(s: &McState, rng: &mut R) -> McBehaviorOutcome {
    let jump = |kind, next| McBehaviorOutcome { kind, rho: 0.0, next, reward: 0.0, effective: false };
    if s.terminal {
        return jump(McOutcomeKind::Restart, McState::uniform(rng));
    }
    let u: f64 = rng.gen();
    let action_mass = 3.0 * ACTION_PROB;
    if u < action_mass {
        let a = ACTIONS[((u / ACTION_PROB) as usize).min(2)];
        let rho = mc_target_prob(s, a) / ACTION_PROB;
        return McBehaviorOutcome {
            kind: McOutcomeKind::Action(a),
            rho,
            next: mc_dynamics(s, a),
            reward: action_reward(a),
            effective: rho > 0.0,
        };
    }
    let u = u - action_mass;
    if u < JUMP_RIGHT_PROB {
        jump(McOutcomeKind::JumpRight, McState::new(rng.gen_range(s.p..=P_MAX), s.v))
    } else if u < JUMP_RIGHT_PROB + JUMP_LEFT_PROB {
        jump(McOutcomeKind::JumpLeft, McState::new(rng.gen_range(P_MIN..=s.p), s.v))
    } else {
        jump(McOutcomeKind::JumpUniform, McState::uniform(rng))
    }
}

/// Data stream of the behavior scheme, emitting learner records.
pub struct McSimulator {
    pub state: McState,
    pub scheme: FeatureScheme,
    phi_cur: DVector<f64>,
}

impl McSimulator {
    pub fn new(start: McState, scheme: FeatureScheme) -> Result<Self> {
        let phi_cur = scheme.mountain_car(&start)?;
        Ok(Self { state: start, scheme, phi_cur })
    }

    /// Samples one transition and returns its record together with the
    /// outcome that produced it.
    pub fn step<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<(StepRecord<f64>, McBehaviorOutcome)> {
        let out = mc_behavior_step(&self.state, rng);
        let gamma_t = if self.state.terminal { 0.0 } else { 1.0 };
        let phi_next = self.scheme.mountain_car(&out.next)?;
        let rec = StepRecord {
            phi_t: std::mem::replace(&mut self.phi_cur, phi_next.clone()),
            i_t: INTEREST,
            gamma_t,
            lambda_t: LAMBDA,
            rho_t: out.rho,
            reward: out.reward,
            phi_next,
            gamma_next: if out.next.terminal { 0.0 } else { 1.0 },
            effective: out.effective,
        };
        self.state = out.next;
        Ok((rec, out))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    #[test]
    fn valley_bottom_push() {
        let s = McState::new(-PI / 6.0, 0.0);
        let n = mc_dynamics(&s, 1);
        assert!((n.v - 0.001).abs() < 1e-15);
        assert!((n.p - (-PI / 6.0 + 0.001)).abs() < 1e-15);
    }

    #[test]
    fn left_wall_resets_velocity() {
        let s = McState::new(-1.19, -0.07);
        let n = mc_dynamics(&s, -1);
        assert_eq!(n.p, P_MIN);
        assert_eq!(n.v, 0.0);
    }

    #[test]
    fn velocity_clamps() {
        // at p = −π/3, cos(3p) = −1: 0.0765 + 0.001 + 0.0025 = 0.08
        let n = mc_dynamics(&McState::new(-PI / 3.0, 0.0765), 1);
        assert_eq!(n.v, V_MAX);
    }

    #[test]
    fn reaching_goal_is_terminal() {
        let n = mc_dynamics(&McState::new(0.49, 0.07), 1);
        assert_eq!(n.p, P_MAX);
        assert!(n.terminal);
    }

    #[test]
    fn target_policy_cases() {
        let probs = |p, v| ACTIONS.map(|a| mc_target_prob(&McState::new(p, v), a));
        assert_eq!(probs(-1.1, 0.05), [0.0, 1.0, 0.0]);
        assert_eq!(probs(0.0, 0.01), [0.0, 0.0, 1.0]);
        assert_eq!(probs(0.0, -0.01), [1.0, 0.0, 0.0]);
        assert_eq!(probs(0.0, 0.0), [0.5, 0.0, 0.5]);
    }

    #[test]
    fn coasting_weight() {
        let s = McState::new(-1.1, 0.01);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        loop {
            let o = mc_behavior_step(&s, &mut rng);
            if o.kind == McOutcomeKind::Action(0) {
                assert!((o.rho - 10.0 / 3.0).abs() < 1e-15);
                assert!(o.effective);
                break;
            }
        }
    }

    #[test]
    fn jumps_have_zero_weight() {
        let s = McState::new(-0.3, 0.01);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..2000 {
            let o = mc_behavior_step(&s, &mut rng);
            if !matches!(o.kind, McOutcomeKind::Action(_)) {
                assert_eq!(o.rho, 0.0);
                assert!(!o.effective);
                assert_eq!(o.reward, 0.0);
            }
            match o.kind {
                McOutcomeKind::JumpRight => assert!(o.next.p >= s.p && o.next.v == s.v),
                McOutcomeKind::JumpLeft => assert!(o.next.p <= s.p && o.next.v == s.v),
                _ => {}
            }
        }
    }

    #[test]
    fn terminal_restarts() {
        let s = McState::new(P_MAX, 0.0);
        let o = mc_behavior_step(&s, &mut ChaCha8Rng::seed_from_u64(3));
        assert_eq!(o.kind, McOutcomeKind::Restart);
        assert_eq!(o.rho, 0.0);
    }

    #[test]
    fn simulator_record_chaining() {
        let mut sim = McSimulator::new(McState::new(-0.5, 0.0), FeatureScheme::tiling_a()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (r1, _) = sim.step(&mut rng).unwrap();
        let (r2, _) = sim.step(&mut rng).unwrap();
        assert_eq!(r1.phi_next, r2.phi_t);
        assert_eq!(r1.i_t, 0.5);
        assert_eq!(r1.lambda_t, 0.5);
    }
}
