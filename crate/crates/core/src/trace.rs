//! Online follow-on / emphasis / eligibility traces and the statistics
//! gathered over them.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{EtdError, Result};
use crate::scalar::Real;

/// One sampled transition `S_t -> S_{t+1}` with every per-step scalar the
/// learners consume.
#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord<T: Real> {
    pub phi_t: DVector<T>,
    pub i_t: T,
    pub gamma_t: T,
    pub lambda_t: T,
    /// Importance weight of the sampled transition.
    pub rho_t: T,
    /// `R_{t+1}`.
    pub reward: T,
    pub phi_next: DVector<T>,
    /// `γ(S_{t+1})`, zero when `S_{t+1}` is terminal.
    pub gamma_next: T,
    pub effective: bool,
}

impl<T: Real> StepRecord<T> {
    fn check(&self) -> Result<()> {
        let scalars = [
            ("i_t", self.i_t),
            ("gamma_t", self.gamma_t),
            ("lambda_t", self.lambda_t),
            ("rho_t", self.rho_t),
            ("reward", self.reward),
            ("gamma_next", self.gamma_next),
        ];
        for (name, v) in scalars {
            if !v.finite() {
                return Err(EtdError::NonFinite(name.into()));
            }
        }
        if !self.phi_t.iter().all(|x| x.finite()) {
            return Err(EtdError::NonFinite("phi_t".into()));
        }
        if !self.phi_next.iter().all(|x| x.finite()) {
            return Err(EtdError::NonFinite("phi_next".into()));
        }
        Ok(())
    }

    /// Temporal difference `R + γ' φ'ᵀθ − φᵀθ`.
    pub fn td_error(&self, theta: &DVector<T>) -> T {
        self.reward + self.gamma_next * self.phi_next.dot(theta) - self.phi_t.dot(theta)
    }
}

/// The per-step intermediates produced by [`TraceState::step`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceStep<T> {
    pub followon: T,
    pub emphasis: T,
}

/// Online trace iterates. A fresh state has zero history and `ρ_{-1} = 1`,
/// so the first step yields `F_0 = i(S_0)` and `e_0 = M_0 φ(S_0)`.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceState<T: Real> {
    pub f: T,
    pub e: DVector<T>,
    pub rho_prev: T,
    pub t: u64,
}

impl<T: Real> TraceState<T> {
    pub fn new(d: usize) -> Self {
        Self { f: T::zero(), e: DVector::zeros(d), rho_prev: T::one(), t: 0 }
    }

    /// Advances the traces with the state-`S_t` part of `rec`:
    ///
    /// ```text
    /// F ← γ_t ρ_{t-1} F + i_t
    /// M ← λ_t i_t + (1 − λ_t) F
    /// e ← λ_t γ_t ρ_{t-1} e + M φ_t
    /// ```
    ///
    /// and stores `ρ_t` for the next call.
    pub fn step(&mut self, rec: &StepRecord<T>) -> Result<TraceStep<T>> {
        rec.check()?;
        if rec.phi_t.len() != self.e.len() {
            return Err(EtdError::InvalidArgument(format!(
                "feature length {} does not match trace length {}",
                rec.phi_t.len(),
                self.e.len()
            )));
        }
        let carry = rec.gamma_t * self.rho_prev;
        self.f = carry * self.f + rec.i_t;
        let m = rec.lambda_t * rec.i_t + (T::one() - rec.lambda_t) * self.f;
        let decay = rec.lambda_t * carry;
        // e ← decay·e + m·φ_t, touching only nonzero feature entries for the add
        if decay != T::one() {
            self.e *= decay;
        }
        for (ek, pk) in self.e.iter_mut().zip(rec.phi_t.iter()) {
            if *pk != T::zero() {
                *ek += m * *pk;
            }
        }
        self.rho_prev = rec.rho_t;
        self.t += 1;
        Ok(TraceStep { followon: self.f, emphasis: m })
    }

    /// `‖(e, F)‖_∞`.
    pub fn max_norm(&self) -> T {
        trace_max_norm(self.f, &self.e)
    }
}

pub fn trace_max_norm<T: Real>(f: T, e: &DVector<T>) -> T {
    e.iter().fold(f.abs(), |m, x| {
        let a = x.abs();
        if a > m {
            a
        } else {
            m
        }
    })
}

/// `ψ_K`: componentwise clamp to `[−K, K]`.
pub fn truncate_components<T: Real>(x: &DVector<T>, k: T) -> DVector<T> {
    x.map(|v| truncate_scalar(v, k))
}

pub fn truncate_scalar<T: Real>(x: T, k: T) -> T {
    x.clamp_to(-k, k)
}

/// Default x-grid for trace tail fractions.
pub const DEFAULT_TAIL_GRID: [f64; 10] = [1.0, 2.0, 5.0, 10.0, 20.0, 50.0, 100.0, 200.0, 500.0, 1000.0];
/// Box half-width defining an excursion.
pub const DEFAULT_EXCURSION_THRESHOLD: f64 = 50.0;

/// Running statistics of `‖(e_t, F_t)‖_∞` over a stream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceStats {
    pub count: u64,
    pub x_grid: Vec<f64>,
    /// `tail_counts[k]` counts iterations with norm strictly above `x_grid[k]`.
    pub tail_counts: Vec<u64>,
    pub threshold: f64,
    /// Closed excursions: length -> number of runs.
    pub excursions: BTreeMap<u64, u64>,
    #[serde(default)]
    open_run: u64,
    /// Keep every `decimation`-th norm in `maxnorm_series`; 0 keeps none.
    pub decimation: u64,
    pub maxnorm_series: Vec<(u64, f64)>,
}

impl Default for TraceStats {
    fn default() -> Self {
        Self::new(DEFAULT_TAIL_GRID.to_vec(), DEFAULT_EXCURSION_THRESHOLD, 0)
    }
}

impl TraceStats {
    pub fn new(mut x_grid: Vec<f64>, threshold: f64, decimation: u64) -> Self {
        x_grid.sort_by(|a, b| a.total_cmp(b));
        let n = x_grid.len();
        Self {
            count: 0,
            x_grid,
            tail_counts: vec![0; n],
            threshold,
            excursions: BTreeMap::new(),
            open_run: 0,
            decimation,
            maxnorm_series: Vec::new(),
        }
    }

    pub fn record<T: Real>(&mut self, f: T, e: &DVector<T>) {
        self.record_norm(trace_max_norm(f, e).as_f64());
    }

    pub fn record_norm(&mut self, norm: f64) {
        if self.decimation > 0 && self.count.is_multiple_of(self.decimation) {
            self.maxnorm_series.push((self.count, norm));
        }
        self.count += 1;
        // grid is sorted, so the exceeded points form a prefix
        let above = self.x_grid.partition_point(|x| *x < norm);
        for c in &mut self.tail_counts[..above] {
            *c += 1;
        }
        if norm > self.threshold {
            self.open_run += 1;
        } else if self.open_run > 0 {
            *self.excursions.entry(self.open_run).or_default() += 1;
            self.open_run = 0;
        }
    }

    /// Excursion lengths including a run still open at the end of the stream.
    pub fn excursion_lengths(&self) -> BTreeMap<u64, u64> {
        let mut out = self.excursions.clone();
        if self.open_run > 0 {
            *out.entry(self.open_run).or_default() += 1;
        }
        out
    }

    /// Histogram of excursion lengths strictly greater than `min_length`.
    pub fn excursion_histogram(&self, min_length: u64) -> BTreeMap<u64, u64> {
        self.excursion_lengths()
            .into_iter()
            .filter(|(len, _)| *len > min_length)
            .collect()
    }

    pub fn tail_fractions(&self) -> Vec<(f64, u64, f64)> {
        let denom = self.count.max(1) as f64;
        self.x_grid
            .iter()
            .zip(&self.tail_counts)
            .map(|(x, c)| (*x, *c, *c as f64 / denom))
            .collect()
    }

    /// Fraction of iterations with norm above `x`, if `x` is on the grid.
    pub fn tail_fraction_at(&self, x: f64) -> Option<f64> {
        self.x_grid
            .iter()
            .position(|g| *g == x)
            .map(|k| self.tail_counts[k] as f64 / self.count.max(1) as f64)
    }

    /// CSV with columns `x,count,fraction`.
    pub fn tail_csv(&self) -> String {
        let mut s = String::from("x,count,fraction\n");
        for (x, c, f) in self.tail_fractions() {
            let _ = writeln!(s, "{x},{c},{f}");
        }
        s
    }

    /// CSV with columns `excursion_length,count`.
    pub fn excursion_csv(&self) -> String {
        let mut s = String::from("excursion_length,count\n");
        for (len, c) in self.excursion_lengths() {
            let _ = writeln!(s, "{len},{c}");
        }
        s
    }
}
