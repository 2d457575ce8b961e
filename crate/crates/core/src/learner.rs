//! Constrained ETD learners (Variant I / II, perturbed or not), the modified
//! ELSTD solver, stepsize schedules and tail averaging.
//!
//! All learners read the eligibility trace produced by
//! [`TraceState::step`](crate::trace::TraceState::step) for the same record,
//! and apply `ρ_t` to the whole temporal difference.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{EtdError, Result};
use crate::linalg;
use crate::scalar::Real;
use crate::trace::{truncate_components, StepRecord};

/// Relative singular-value cutoff for the ELSTD pseudo-inverse.
pub const ELSTD_RTOL: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Truncates the trace: `θ ← Π(θ + α ρ δ ψ_K(e))`.
    #[serde(rename = "variant-i", alias = "I")]
    TruncateTrace,
    /// Truncates the increment: `θ ← Π(θ + α ψ_K(ρ δ e))`.
    #[serde(rename = "variant-ii", alias = "II")]
    TruncateIncrement,
    /// Least-squares solve of the truncated-trace system.
    Elstd,
    /// Plain ETD(λ), no truncation and no projection.
    #[serde(rename = "unconstrained", alias = "unconstrained-baseline")]
    Unconstrained,
}

impl Variant {
    pub fn label(self) -> &'static str {
        match self {
            Variant::TruncateTrace => "variant-i",
            Variant::TruncateIncrement => "variant-ii",
            Variant::Elstd => "elstd",
            Variant::Unconstrained => "unconstrained",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum StepsizeSchedule {
    Constant { alpha: f64 },
    /// `α_t = 1 / (c + (a t)^β)`.
    Power { c: f64, a: f64, beta: f64 },
}

impl StepsizeSchedule {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            StepsizeSchedule::Constant { alpha } => alpha > 0.0,
            StepsizeSchedule::Power { c, a, beta } => c > 0.0 && a > 0.0 && beta > 0.0 && beta <= 1.0,
        };
        if ok {
            Ok(())
        } else {
            Err(EtdError::Config(format!("invalid stepsize schedule {self:?}")))
        }
    }

    pub fn label(&self) -> String {
        match *self {
            StepsizeSchedule::Constant { alpha } => format!("const-{alpha}"),
            StepsizeSchedule::Power { c, a, beta } => format!("power-c{c}-a{a}-b{beta}"),
        }
    }
}

pub fn stepsize_at(schedule: &StepsizeSchedule, t: u64) -> f64 {
    match *schedule {
        StepsizeSchedule::Constant { alpha } => alpha,
        StepsizeSchedule::Power { c, a, beta } => 1.0 / (c + (a * t as f64).powf(beta)),
    }
}

/// Which counter drives the tail-averaging window.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AveragingClock {
    /// Every learner update.
    #[default]
    Steps,
    /// Only updates whose record is effective (`ρ_t > 0`).
    Effective,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LearnerConfig {
    pub variant: Variant,
    #[serde(rename = "K", alias = "k")]
    pub k: f64,
    pub r_b: f64,
    pub schedule: StepsizeSchedule,
    #[serde(default)]
    pub perturb: bool,
    pub d: usize,
    #[serde(default = "default_solve_period")]
    pub elstd_solve_period: u64,
    #[serde(default)]
    pub averaging_start: u64,
    #[serde(default)]
    pub averaging_clock: AveragingClock,
}

fn default_solve_period() -> u64 {
    500
}

impl LearnerConfig {
    pub fn new(variant: Variant, d: usize, schedule: StepsizeSchedule) -> Self {
        Self {
            variant,
            k: 50.0,
            r_b: 100.0,
            schedule,
            perturb: false,
            d,
            elstd_solve_period: default_solve_period(),
            averaging_start: 0,
            averaging_clock: AveragingClock::Steps,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k.is_nan() || self.k <= 0.0 {
            return Err(EtdError::Config(format!("K must be positive, got {}", self.k)));
        }
        if self.r_b.is_nan() || self.r_b <= 0.0 {
            return Err(EtdError::Config(format!("r_B must be positive, got {}", self.r_b)));
        }
        if self.elstd_solve_period == 0 {
            return Err(EtdError::Config("elstd_solve_period must be at least 1".into()));
        }
        if self.d == 0 {
            return Err(EtdError::Config("feature dimension must be positive".into()));
        }
        if self.perturb && matches!(self.variant, Variant::Elstd | Variant::Unconstrained) {
            return Err(EtdError::Config(format!(
                "perturbation applies to the constrained variants only, not {}",
                self.variant.label()
            )));
        }
        self.schedule.validate()
    }

    pub fn label(&self) -> String {
        let mut s = self.variant.label().to_string();
        if self.perturb {
            s.push_str("-perturbed");
        }
        if self.variant != Variant::Elstd {
            s.push('-');
            s.push_str(&self.schedule.label());
        }
        s
    }
}

/// Mutable learner iterates.
#[derive(Clone, Debug)]
pub struct LearnerState<T: Real> {
    pub theta: DVector<T>,
    theta_sum: DVector<T>,
    pub avg_count: u64,
    /// Number of updates applied.
    pub t: u64,
    /// Number of updates whose record was effective.
    pub effective_t: u64,
    rng: ChaCha8Rng,
    // ELSTD accumulates unnormalized sums; the running means are sum / t.
    elstd_c_sum: DMatrix<T>,
    elstd_b_sum: DVector<T>,
    pub elstd_theta: DVector<T>,
    /// Set when the last ELSTD solve saw an all-zero system.
    pub elstd_no_data: bool,
}

impl<T: Real> LearnerState<T> {
    /// Zero-initialized state; `seed` drives the perturbation stream only.
    pub fn new(cfg: &LearnerConfig, seed: u64) -> Self {
        let d = cfg.d;
        let elstd = cfg.variant == Variant::Elstd;
        Self {
            theta: DVector::zeros(d),
            theta_sum: DVector::zeros(d),
            avg_count: 0,
            t: 0,
            effective_t: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
            elstd_c_sum: if elstd { DMatrix::zeros(d, d) } else { DMatrix::zeros(0, 0) },
            elstd_b_sum: if elstd { DVector::zeros(d) } else { DVector::zeros(0) },
            elstd_theta: DVector::zeros(d),
            elstd_no_data: true,
        }
    }

    /// The learner's current estimate: θ, or the last ELSTD solution.
    pub fn estimate<'a>(&'a self, cfg: &LearnerConfig) -> &'a DVector<T> {
        if cfg.variant == Variant::Elstd {
            &self.elstd_theta
        } else {
            &self.theta
        }
    }

    /// Running mean of the ELSTD matrix terms.
    pub fn elstd_c(&self) -> DMatrix<T> {
        if self.t == 0 {
            return self.elstd_c_sum.clone();
        }
        &self.elstd_c_sum / T::lit(self.t as f64)
    }

    /// Running mean of the ELSTD vector terms.
    pub fn elstd_b(&self) -> DVector<T> {
        if self.t == 0 {
            return self.elstd_b_sum.clone();
        }
        &self.elstd_b_sum / T::lit(self.t as f64)
    }

    /// Solves the ELSTD system now, regardless of the solve period.
    pub fn elstd_solve(&mut self) {
        let (x, rank) = linalg::min_norm_solve(&self.elstd_c_sum, &(-&self.elstd_b_sum), ELSTD_RTOL);
        self.elstd_no_data = rank == 0;
        self.elstd_theta = x;
    }

    /// Arithmetic mean of the iterates inside the averaging window.
    pub fn tail_average(&self, cfg: &LearnerConfig) -> Result<DVector<T>> {
        if self.avg_count == 0 {
            let clock = match cfg.averaging_clock {
                AveragingClock::Steps => self.t,
                AveragingClock::Effective => self.effective_t,
            };
            return Err(EtdError::EmptyWindow { t: clock, start: cfg.averaging_start });
        }
        Ok(&self.theta_sum / T::lit(self.avg_count as f64))
    }
}

/// Projection onto the Euclidean ball of radius `r_b` at the origin.
pub fn project_ball<T: Real>(theta: &DVector<T>, r_b: T) -> DVector<T> {
    let mut out = theta.clone();
    project_ball_mut(&mut out, r_b);
    out
}

pub fn project_ball_mut<T: Real>(theta: &mut DVector<T>, r_b: T) {
    let norm = theta.norm();
    if norm > r_b {
        *theta *= r_b / norm;
        let again = theta.norm();
        if again > r_b {
            *theta *= r_b / again * (T::one() - T::default_epsilon());
        }
    }
}

/// Applies one update of `cfg.variant` for record `rec`, given the trace
/// `e_t` already advanced with the same record.
pub fn learner_step<T: Real>(
    ls: &mut LearnerState<T>,
    cfg: &LearnerConfig,
    e: &DVector<T>,
    rec: &StepRecord<T>,
) -> Result<()> {
    if cfg.variant == Variant::Elstd {
        return elstd_step(ls, cfg, e, rec);
    }
    let alpha_f = stepsize_at(&cfg.schedule, ls.t);
    let alpha = T::lit(alpha_f);
    let k = T::lit(cfg.k);
    let delta = rec.td_error(&ls.theta);
    let rd = rec.rho_t * delta;
    match cfg.variant {
        Variant::TruncateTrace => {
            if rd != T::zero() {
                let scale = alpha * rd;
                for (th, ek) in ls.theta.iter_mut().zip(e.iter()) {
                    *th += scale * ek.clamp_to(-k, k);
                }
            }
        }
        Variant::TruncateIncrement => {
            if rd != T::zero() {
                for (th, ek) in ls.theta.iter_mut().zip(e.iter()) {
                    *th += alpha * (rd * *ek).clamp_to(-k, k);
                }
            }
        }
        Variant::Unconstrained => {
            if rd != T::zero() {
                ls.theta.axpy(alpha * rd, e, T::one());
            }
        }
        Variant::Elstd => unreachable!(),
    }
    if cfg.perturb {
        let sd = alpha_f / 2.0;
        for th in ls.theta.iter_mut() {
            let z: f64 = StandardNormal.sample(&mut ls.rng);
            *th += T::lit(sd * z);
        }
    }
    if cfg.variant == Variant::Unconstrained {
        if !ls.theta.iter().all(|x| x.finite()) {
            return Err(EtdError::Diverged { t: ls.t, what: "non-finite θ in unconstrained ETD".into() });
        }
    } else {
        project_ball_mut(&mut ls.theta, T::lit(cfg.r_b));
    }
    advance_clocks(ls, cfg, rec);
    Ok(())
}

fn advance_clocks<T: Real>(ls: &mut LearnerState<T>, cfg: &LearnerConfig, rec: &StepRecord<T>) {
    ls.t += 1;
    if rec.effective {
        ls.effective_t += 1;
    }
    // the window holds every iterate produced after `averaging_start` ticks
    let clock = match cfg.averaging_clock {
        AveragingClock::Steps => ls.t,
        AveragingClock::Effective => ls.effective_t,
    };
    if clock > cfg.averaging_start {
        let est = if cfg.variant == Variant::Elstd { &ls.elstd_theta } else { &ls.theta };
        ls.theta_sum += est;
        ls.avg_count += 1;
    }
}

/// ELSTD accumulation with the truncated trace `ψ_K(e_t)`:
///
/// ```text
/// C̄ ← C̄ + (ρ ψ_K(e) (γ' φ' − φ)ᵀ − C̄)/(t+1)
/// b̄ ← b̄ + (ρ ψ_K(e) R − b̄)/(t+1)
/// ```
///
/// solving `C̄ θ = −b̄` (minimum norm) every `elstd_solve_period` steps.
pub fn elstd_step<T: Real>(
    ls: &mut LearnerState<T>,
    cfg: &LearnerConfig,
    e: &DVector<T>,
    rec: &StepRecord<T>,
) -> Result<()> {
    let d = cfg.d;
    if ls.elstd_c_sum.nrows() != d {
        ls.elstd_c_sum = DMatrix::zeros(d, d);
        ls.elstd_b_sum = DVector::zeros(d);
    }
    if rec.rho_t != T::zero() {
        let te = truncate_components(e, T::lit(cfg.k)) * rec.rho_t;
        for j in 0..d {
            let diff = rec.gamma_next * rec.phi_next[j] - rec.phi_t[j];
            if diff != T::zero() {
                ls.elstd_c_sum.column_mut(j).axpy(diff, &te, T::one());
            }
        }
        if rec.reward != T::zero() {
            ls.elstd_b_sum.axpy(rec.reward, &te, T::one());
        }
    }
    if (ls.t + 1).is_multiple_of(cfg.elstd_solve_period) {
        ls.elstd_solve();
    }
    advance_clocks(ls, cfg, rec);
    Ok(())
}
