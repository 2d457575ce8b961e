//! Finite off-policy evaluation problems and their exact ETD reference
//! quantities.
//!
//! States are 0-based. The trace conventions match [`crate::trace`]:
//! `F_t = γ_t ρ_{t-1} F_{t-1} + i_t`, `M_t = λ_t i_t + (1-λ_t) F_t`,
//! `e_t = λ_t γ_t ρ_{t-1} e_{t-1} + M_t φ_t`, and the learners apply `ρ_t`
//! to the whole temporal difference. Under those conventions the stationary
//! per-state expectations have closed forms:
//!
//! * `f = d_μ∘i + Γ P_πᵀ f`
//! * `m = λ∘i∘d_μ + (1-λ)∘f`
//! * `Ē = (I - ΛΓP_πᵀ)⁻¹ diag(m) Φ`
//! * `C = Ēᵀ (P_π Γ - I) Φ`, `b = Ēᵀ r_π`, and `θ*` solves `Cθ + b = 0`.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{EtdError, Result};
use crate::linalg::{self, RANK_RTOL};
use crate::scalar::Real;

const STOCHASTIC_TOL: f64 = 1e-12;
const SINGULAR_RCOND: f64 = 1e-13;

/// A finite off-policy evaluation problem.
#[derive(Clone, Debug, PartialEq)]
pub struct FiniteMdp<T: Real> {
    pub n_states: usize,
    pub p_target: DMatrix<T>,
    pub p_behavior: DMatrix<T>,
    /// `reward[(s, s')]` is the reward of the transition `s -> s'`.
    pub reward: DMatrix<T>,
    pub gamma: DVector<T>,
    pub lambda: DVector<T>,
    pub interest: DVector<T>,
    /// Feature matrix Φ; row `s` is `φ(s)ᵀ`.
    pub features: DMatrix<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Violation {
    Shape(String),
    NegativeEntry { matrix: &'static str, row: usize, col: usize },
    RowSum { matrix: &'static str, row: usize, sum: f64 },
    AbsoluteContinuity { row: usize, col: usize },
    OutOfUnitInterval { field: &'static str, state: usize },
    NegativeInterest { state: usize },
    NoInterest,
    NonFinite { field: &'static str },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Shape(s) => write!(f, "shape: {s}"),
            Violation::NegativeEntry { matrix, row, col } => {
                write!(f, "{matrix}[{row},{col}] is negative")
            }
            Violation::RowSum { matrix, row, sum } => {
                write!(f, "{matrix} row {row} sums to {sum}, not 1")
            }
            Violation::AbsoluteContinuity { row, col } => write!(
                f,
                "P_target[{row},{col}] > 0 but P_behavior[{row},{col}] = 0 (importance weight undefined)"
            ),
            Violation::OutOfUnitInterval { field, state } => {
                write!(f, "{field}[{state}] outside [0, 1]")
            }
            Violation::NegativeInterest { state } => write!(f, "interest[{state}] is negative"),
            Violation::NoInterest => write!(f, "interest is zero everywhere"),
            Violation::NonFinite { field } => write!(f, "{field} has non-finite entries"),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.passed() {
            return write!(f, "pass");
        }
        for (k, v) in self.violations.iter().enumerate() {
            if k > 0 {
                write!(f, "; ")?;
            }
            write!(f, "{v}")?;
        }
        Ok(())
    }
}

impl<T: Real> FiniteMdp<T> {
    /// Checks every structural invariant and returns the full list of
    /// violations rather than stopping at the first.
    pub fn validate(&self) -> ValidationReport {
        let n = self.n_states;
        let mut out = Vec::new();
        let shapes = [
            ("P_target", self.p_target.shape(), (n, n)),
            ("P_behavior", self.p_behavior.shape(), (n, n)),
            ("reward", self.reward.shape(), (n, n)),
            ("gamma", self.gamma.shape(), (n, 1)),
            ("lambda", self.lambda.shape(), (n, 1)),
            ("interest", self.interest.shape(), (n, 1)),
        ];
        for (name, got, want) in shapes {
            if got != want {
                out.push(Violation::Shape(format!("{name} is {got:?}, expected {want:?}")));
            }
        }
        if self.features.nrows() != n || self.features.ncols() == 0 {
            out.push(Violation::Shape(format!(
                "features is {:?}, expected ({n}, d>0)",
                self.features.shape()
            )));
        }
        if n == 0 {
            out.push(Violation::Shape("n_states must be positive".into()));
        }
        if !out.is_empty() {
            return ValidationReport { violations: out };
        }

        let finite = |m: &DMatrix<T>| m.iter().all(|x| x.finite());
        for (name, m) in [
            ("P_target", &self.p_target),
            ("P_behavior", &self.p_behavior),
            ("reward", &self.reward),
            ("features", &self.features),
        ] {
            if !finite(m) {
                out.push(Violation::NonFinite { field: name });
            }
        }
        for (name, v) in [("gamma", &self.gamma), ("lambda", &self.lambda), ("interest", &self.interest)] {
            if !v.iter().all(|x| x.finite()) {
                out.push(Violation::NonFinite { field: name });
            }
        }

        for (name, p) in [("P_target", &self.p_target), ("P_behavior", &self.p_behavior)] {
            for r in 0..n {
                let mut sum = 0.0;
                for c in 0..n {
                    let x = p[(r, c)].as_f64();
                    if x < 0.0 {
                        out.push(Violation::NegativeEntry { matrix: name, row: r, col: c });
                    }
                    sum += x;
                }
                if (sum - 1.0).abs() > STOCHASTIC_TOL.max(16.0 * T::default_epsilon().as_f64()) {
                    out.push(Violation::RowSum { matrix: name, row: r, sum });
                }
            }
        }
        for r in 0..n {
            for c in 0..n {
                if self.p_target[(r, c)] > T::zero() && self.p_behavior[(r, c)] <= T::zero() {
                    out.push(Violation::AbsoluteContinuity { row: r, col: c });
                }
            }
        }
        for s in 0..n {
            for (field, v) in [("gamma", self.gamma[s]), ("lambda", self.lambda[s])] {
                if v < T::zero() || v > T::one() {
                    out.push(Violation::OutOfUnitInterval { field, state: s });
                }
            }
            if self.interest[s] < T::zero() {
                out.push(Violation::NegativeInterest { state: s });
            }
        }
        if self.interest.iter().all(|x| *x <= T::zero()) {
            out.push(Violation::NoInterest);
        }
        ValidationReport { violations: out }
    }

    /// Returns `self` if valid, otherwise an error listing all violations.
    pub fn checked(self) -> Result<Self> {
        let report = self.validate();
        if report.passed() {
            Ok(self)
        } else {
            Err(EtdError::InvalidModel(report.to_string()))
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn phi(&self, s: usize) -> DVector<T> {
        self.features.row(s).transpose()
    }

    /// Importance weight of the transition `s -> s'`; zero where the target
    /// cannot move.
    pub fn rho(&self, s: usize, s_next: usize) -> T {
        let pt = self.p_target[(s, s_next)];
        if pt == T::zero() {
            T::zero()
        } else {
            pt / self.p_behavior[(s, s_next)]
        }
    }

    /// Expected one-step reward under the target policy.
    pub fn expected_reward(&self) -> DVector<T> {
        DVector::from_fn(self.n_states, |s, _| {
            (0..self.n_states).fold(T::zero(), |acc, s2| acc + self.p_target[(s, s2)] * self.reward[(s, s2)])
        })
    }

    /// `P_π Γ`: target kernel with column `s'` scaled by `γ(s')`.
    pub fn discounted_target(&self) -> DMatrix<T> {
        let mut m = self.p_target.clone();
        for c in 0..self.n_states {
            let g = self.gamma[c];
            m.column_mut(c).scale_mut(g);
        }
        m
    }

    /// Returns a copy with all rewards multiplied by `c`.
    pub fn scale_rewards(&self, c: T) -> Self {
        let mut out = self.clone();
        out.reward *= c;
        out
    }
}

// ---------------------------------------------------------------------------
// JSON document form

/// On-disk form of a [`FiniteMdp`]: field names mirror the model, matrices
/// are row-major nested arrays.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct ModelDocument {
    #[serde(default = "model_schema_version")]
    pub schema_version: u32,
    pub n_states: usize,
    #[serde(rename = "P_target")]
    pub p_target: Vec<Vec<f64>>,
    #[serde(rename = "P_behavior")]
    pub p_behavior: Vec<Vec<f64>>,
    pub reward: Vec<Vec<f64>>,
    pub gamma: Vec<f64>,
    pub lambda: Vec<f64>,
    pub interest: Vec<f64>,
    pub features: Vec<Vec<f64>>,
}

pub const MODEL_SCHEMA_VERSION: u32 = 1;

fn model_schema_version() -> u32 {
    MODEL_SCHEMA_VERSION
}

fn rows_of<T: Real>(m: &DMatrix<T>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|r| (0..m.ncols()).map(|c| m[(r, c)].as_f64()).collect())
        .collect()
}

fn matrix_from_rows<T: Real>(name: &str, rows: &[Vec<f64>]) -> Result<DMatrix<T>> {
    let nr = rows.len();
    let nc = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != nc) {
        return Err(EtdError::InvalidModel(format!("{name}: ragged rows")));
    }
    Ok(DMatrix::from_fn(nr, nc, |r, c| T::lit(rows[r][c])))
}

impl<T: Real> From<&FiniteMdp<T>> for ModelDocument {
    fn from(m: &FiniteMdp<T>) -> Self {
        let vec = |v: &DVector<T>| v.iter().map(|x| x.as_f64()).collect();
        ModelDocument {
            schema_version: MODEL_SCHEMA_VERSION,
            n_states: m.n_states,
            p_target: rows_of(&m.p_target),
            p_behavior: rows_of(&m.p_behavior),
            reward: rows_of(&m.reward),
            gamma: vec(&m.gamma),
            lambda: vec(&m.lambda),
            interest: vec(&m.interest),
            features: rows_of(&m.features),
        }
    }
}

impl ModelDocument {
    /// Converts to a model without validating invariants (shape only).
    pub fn to_model<T: Real>(&self) -> Result<FiniteMdp<T>> {
        if self.schema_version != MODEL_SCHEMA_VERSION {
            return Err(EtdError::InvalidModel(format!(
                "unsupported schema_version {}",
                self.schema_version
            )));
        }
        let vec = |v: &[f64]| DVector::from_iterator(v.len(), v.iter().map(|x| T::lit(*x)));
        Ok(FiniteMdp {
            n_states: self.n_states,
            p_target: matrix_from_rows("P_target", &self.p_target)?,
            p_behavior: matrix_from_rows("P_behavior", &self.p_behavior)?,
            reward: matrix_from_rows("reward", &self.reward)?,
            gamma: vec(&self.gamma),
            lambda: vec(&self.lambda),
            interest: vec(&self.interest),
            features: matrix_from_rows("features", &self.features)?,
        })
    }
}

impl<T: Real> FiniteMdp<T> {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&ModelDocument::from(self))?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let doc: ModelDocument = serde_json::from_str(s)?;
        doc.to_model()
    }
}

// ---------------------------------------------------------------------------
// Stationary distribution

#[derive(Clone, Copy, Debug)]
pub struct StationaryOptions {
    pub max_sweeps: usize,
    pub tol: f64,
}

impl Default for StationaryOptions {
    fn default() -> Self {
        Self { max_sweeps: 1_000_000, tol: 1e-12 }
    }
}

fn stationary_residual<T: Real>(p: &DMatrix<T>, d: &DVector<T>) -> T {
    let next = p.tr_mul(d);
    linalg::max_abs((next - d).iter().copied())
}

/// Stationary distribution of a row-stochastic matrix.
///
/// Power iteration runs on the lazy chain `(I + P)/2`, which shares the
/// stationary law of `P` but is aperiodic. If the sweep budget runs out the
/// balance equations are solved directly.
pub fn stationary_distribution<T: Real>(p: &DMatrix<T>) -> Result<DVector<T>> {
    stationary_distribution_with(p, StationaryOptions::default())
}

pub fn stationary_distribution_with<T: Real>(p: &DMatrix<T>, opts: StationaryOptions) -> Result<DVector<T>> {
    let n = p.nrows();
    if n == 0 || p.ncols() != n {
        return Err(EtdError::InvalidArgument(format!("matrix must be square, got {:?}", p.shape())));
    }
    let accept = T::lit(1e-10_f64.max(1e4 * T::default_epsilon().as_f64()));
    let target = T::lit(opts.tol.max(64.0 * T::default_epsilon().as_f64()));
    let half = T::lit(0.5);
    let mut d = DVector::from_element(n, T::one() / T::lit(n as f64));
    for _ in 0..opts.max_sweeps {
        let next = (p.tr_mul(&d) + &d) * half;
        let change = linalg::max_abs((&next - &d).iter().copied());
        d = next;
        if change <= target {
            break;
        }
    }
    let sum = d.sum();
    d /= sum;
    if stationary_residual(p, &d) <= target {
        return Ok(d);
    }

    // Direct solve: (Pᵀ - I) d = 0 with the last equation replaced by Σd = 1.
    let mut a = p.transpose() - DMatrix::identity(n, n);
    for c in 0..n {
        a[(n - 1, c)] = T::one();
    }
    let mut rhs = DVector::zeros(n);
    rhs[n - 1] = T::one();
    let mut x = linalg::solve_square(&a, &rhs, SINGULAR_RCOND).ok_or_else(|| {
        EtdError::NoConvergence("stationary distribution: chain is reducible or ill-posed".into())
    })?;
    let s = x.sum();
    x /= s;
    let res = stationary_residual(p, &x);
    if res > accept || x.iter().any(|v| *v < -accept) {
        return Err(EtdError::NoConvergence(format!(
            "stationary distribution residual {res} above tolerance"
        )));
    }
    Ok(x)
}

// ---------------------------------------------------------------------------
// Values, follow-on, emphasis, the ETD system

/// True value function `v = r_π + P_π Γ v`.
pub fn true_value_function<T: Real>(model: &FiniteMdp<T>) -> Result<DVector<T>> {
    let n = model.n_states;
    let a = DMatrix::identity(n, n) - model.discounted_target();
    linalg::solve_square(&a, &model.expected_reward(), SINGULAR_RCOND).ok_or_else(|| {
        EtdError::Singular("I - P_target Γ is singular (undiscounted recurrent class?)".into())
    })
}

/// Follow-on expectations `f` and emphasis `m` given the behavior stationary
/// distribution `d_mu`.
pub fn followon_and_emphasis_with<T: Real>(
    model: &FiniteMdp<T>,
    d_mu: &DVector<T>,
) -> Result<(DVector<T>, DVector<T>)> {
    let n = model.n_states;
    // (I - Γ P_πᵀ) f = d_μ ∘ i
    let a = DMatrix::identity(n, n) - model.discounted_target().transpose();
    let src = d_mu.component_mul(&model.interest);
    let f = linalg::solve_square(&a, &src, SINGULAR_RCOND)
        .ok_or_else(|| EtdError::Singular("I - Γ P_targetᵀ is singular".into()))?;
    let m = DVector::from_fn(n, |s, _| {
        let lam = model.lambda[s];
        lam * src[s] + (T::one() - lam) * f[s]
    });
    Ok((f, m))
}

pub fn followon_and_emphasis<T: Real>(model: &FiniteMdp<T>) -> Result<(DVector<T>, DVector<T>)> {
    let d_mu = stationary_distribution(&model.p_behavior)?;
    followon_and_emphasis_with(model, &d_mu)
}

/// Closed-form ETD quantities for a finite model.
#[derive(Clone, Debug)]
pub struct EtdSolution<T: Real> {
    pub d_mu: DVector<T>,
    pub v_pi: DVector<T>,
    pub f: DVector<T>,
    pub m: DVector<T>,
    /// Row `s` is `d_μ(s) E[e_t | S_t = s]ᵀ`.
    pub e_bar: DMatrix<T>,
    pub c: DMatrix<T>,
    pub b: DVector<T>,
    pub theta_star: DVector<T>,
    /// Numerical rank of `C` used for the minimum-norm solve.
    pub c_rank: usize,
}

/// `(Ē, C, b, θ*, rank C)` from the emphasis vector.
#[allow(clippy::type_complexity)]
pub fn etd_system_with<T: Real>(
    model: &FiniteMdp<T>,
    m: &DVector<T>,
) -> Result<(DMatrix<T>, DMatrix<T>, DVector<T>, DVector<T>, usize)> {
    let n = model.n_states;
    let phi = &model.features;
    let pg = model.discounted_target();
    // (I - ΛΓP_πᵀ) Ē = diag(m) Φ
    let mut a = DMatrix::identity(n, n);
    for r in 0..n {
        let lg = model.lambda[r] * model.gamma[r];
        for c in 0..n {
            a[(r, c)] -= lg * model.p_target[(c, r)];
        }
    }
    let mut rhs = phi.clone();
    for r in 0..n {
        let w = m[r];
        rhs.row_mut(r).scale_mut(w);
    }
    if linalg::inverse_condition(&a) < T::lit(SINGULAR_RCOND) {
        return Err(EtdError::Singular("I - ΛΓP_targetᵀ is singular".into()));
    }
    let e_bar = a
        .lu()
        .solve(&rhs)
        .ok_or_else(|| EtdError::Singular("I - ΛΓP_targetᵀ is singular".into()))?;
    let c = e_bar.tr_mul(&((pg - DMatrix::identity(n, n)) * phi));
    let b = e_bar.tr_mul(&model.expected_reward());
    let (theta, rank) = linalg::min_norm_solve(&c, &(-&b), RANK_RTOL);
    if rank == c.ncols() {
        let res = linalg::max_abs((&c * &theta + &b).iter().copied());
        let scale = T::one().max(linalg::max_abs(b.iter().copied()));
        if res > T::lit(1e-8_f64.max(1e3 * T::default_epsilon().as_f64())) * scale {
            return Err(EtdError::Singular(format!("C θ* + b residual {res} too large")));
        }
    }
    Ok((e_bar, c, b, theta, rank))
}

/// Computes every exact reference quantity of the model.
pub fn solve<T: Real>(model: &FiniteMdp<T>) -> Result<EtdSolution<T>> {
    let report = model.validate();
    if !report.passed() {
        return Err(EtdError::InvalidModel(report.to_string()));
    }
    let d_mu = stationary_distribution(&model.p_behavior)?;
    let v_pi = true_value_function(model)?;
    let (f, m) = followon_and_emphasis_with(model, &d_mu)?;
    let (e_bar, c, b, theta_star, c_rank) = etd_system_with(model, &m)?;
    Ok(EtdSolution { d_mu, v_pi, f, m, e_bar, c, b, theta_star, c_rank })
}

// ---------------------------------------------------------------------------
// Cycle certificates

/// A closed walk `s_0 -> s_1 -> ... -> s_L = s_0`. The closing repeat of
/// `s_0` may be given or omitted; `[4]` and `[4, 4]` both mean the self-loop.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CycleSpec {
    pub states: Vec<usize>,
}

impl CycleSpec {
    pub fn new(states: Vec<usize>) -> Self {
        Self { states }
    }

    /// Edges `(s, s')` of the walk, closing it back to the start.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut s = self.states.clone();
        if s.len() > 1 && s.first() == s.last() {
            s.pop();
        }
        (0..s.len()).map(|k| (s[k], s[(k + 1) % s.len()])).collect()
    }

    pub fn rotated(&self, by: usize) -> Self {
        let mut s = self.states.clone();
        if s.len() > 1 && s.first() == s.last() {
            s.pop();
        }
        let k = by % s.len().max(1);
        s.rotate_left(k);
        Self { states: s }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CycleMode {
    FollowOn,
    Eligibility,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CycleVerdict {
    UnboundedCertificate,
    Inconclusive,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CycleCertificate {
    pub product: f64,
    pub verdict: CycleVerdict,
}

/// Multiplies `ρ(s,s')γ(s')` (and `λ(s')` in eligibility mode) around the
/// cycle. A product above one together with positive interest (follow-on) or
/// nonzero `i(s)φ(s)` (eligibility) somewhere on the cycle certifies that the
/// corresponding trace is almost surely unbounded.
pub fn cycle_certificate<T: Real>(
    model: &FiniteMdp<T>,
    cycle: &CycleSpec,
    mode: CycleMode,
) -> Result<CycleCertificate> {
    if cycle.states.is_empty() {
        return Err(EtdError::InvalidCycle("empty cycle".into()));
    }
    let n = model.n_states;
    let mut product = T::one();
    for (s, s2) in cycle.edges() {
        if s >= n || s2 >= n {
            return Err(EtdError::InvalidCycle(format!("state out of range in edge {s}->{s2}")));
        }
        let pb = model.p_behavior[(s, s2)];
        let pt = model.p_target[(s, s2)];
        if pb <= T::zero() {
            return Err(EtdError::InvalidCycle(format!("edge {s}->{s2} has zero behavior probability")));
        }
        if pt <= T::zero() {
            return Err(EtdError::InvalidCycle(format!("edge {s}->{s2} has zero target probability")));
        }
        let mut w = pt / pb * model.gamma[s2];
        if mode == CycleMode::Eligibility {
            w *= model.lambda[s2];
        }
        product *= w;
    }
    let on_cycle: Vec<usize> = cycle.edges().iter().map(|e| e.0).collect();
    let source = on_cycle.iter().any(|&s| match mode {
        CycleMode::FollowOn => model.interest[s] > T::zero(),
        CycleMode::Eligibility => {
            model.interest[s] > T::zero() && model.features.row(s).iter().any(|x| *x != T::zero())
        }
    });
    let verdict = if product > T::one() && source {
        CycleVerdict::UnboundedCertificate
    } else {
        CycleVerdict::Inconclusive
    };
    Ok(CycleCertificate { product: product.as_f64(), verdict })
}

/// All simple cycles of the joint transition graph (edges where both
/// kernels are positive), each listed once starting from its smallest state.
pub fn simple_cycles<T: Real>(model: &FiniteMdp<T>) -> Vec<CycleSpec> {
    let n = model.n_states;
    let adj: Vec<Vec<usize>> = (0..n)
        .map(|s| {
            (0..n)
                .filter(|&s2| model.p_target[(s, s2)] > T::zero() && model.p_behavior[(s, s2)] > T::zero())
                .collect()
        })
        .collect();
    let mut out = Vec::new();
    for start in 0..n {
        let mut path = vec![start];
        let mut on_path = vec![false; n];
        on_path[start] = true;
        simple_cycles_from(start, start, &adj, &mut path, &mut on_path, &mut out);
    }
    out
}

fn simple_cycles_from(
    start: usize,
    at: usize,
    adj: &[Vec<usize>],
    path: &mut Vec<usize>,
    on_path: &mut [bool],
    out: &mut Vec<CycleSpec>,
) {
    for &nx in &adj[at] {
        if nx == start {
            out.push(CycleSpec::new(path.clone()));
        } else if nx > start && !on_path[nx] {
            on_path[nx] = true;
            path.push(nx);
            simple_cycles_from(start, nx, adj, path, on_path, out);
            path.pop();
            on_path[nx] = false;
        }
    }
}

// ---------------------------------------------------------------------------
// Definiteness

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Definiteness {
    NegativeDefinite,
    NegativeSemidefinite,
    Indefinite,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DefinitenessReport {
    pub rank: usize,
    /// Eigenvalues of `(C + Cᵀ)/2`, ascending.
    pub sym_eigenvalues: Vec<f64>,
    pub classification: Definiteness,
}

pub const DEFINITENESS_TOL: f64 = 1e-9;

/// Rank and definiteness of a square matrix, judged by the eigenvalues of
/// its symmetric part. Eigenvalues within `1e-9` (relative to the largest
/// magnitude when that exceeds one) count as zero.
pub fn definiteness_report<T: Real>(c: &DMatrix<T>) -> DefinitenessReport {
    let rank = linalg::rank(c, RANK_RTOL);
    let sym = (c + c.transpose()) * T::lit(0.5);
    let mut eig: Vec<f64> = if c.nrows() == 0 {
        Vec::new()
    } else {
        sym.symmetric_eigenvalues().iter().map(|x| x.as_f64()).collect()
    };
    eig.sort_by(|a, b| a.total_cmp(b));
    let scale = eig.iter().fold(1.0f64, |m, x| m.max(x.abs()));
    let tol = DEFINITENESS_TOL * scale;
    let classification = if eig.iter().all(|&x| x < -tol) {
        Definiteness::NegativeDefinite
    } else if eig.iter().all(|&x| x <= tol) {
        Definiteness::NegativeSemidefinite
    } else {
        Definiteness::Indefinite
    };
    DefinitenessReport { rank, sym_eigenvalues: eig, classification }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn two_state(p: [f64; 4], q: [f64; 4]) -> FiniteMdp<f64> {
        FiniteMdp {
            n_states: 2,
            p_target: DMatrix::from_row_slice(2, 2, &p),
            p_behavior: DMatrix::from_row_slice(2, 2, &q),
            reward: DMatrix::zeros(2, 2),
            gamma: DVector::from_element(2, 0.9),
            lambda: DVector::from_element(2, 0.5),
            interest: DVector::from_element(2, 1.0),
            features: DMatrix::identity(2, 2),
        }
    }

    #[test]
    fn row_sum_violation_names_row() {
        let m = two_state([0.5, 0.4, 0.5, 0.5], [0.5, 0.5, 0.5, 0.5]);
        let r = m.validate();
        assert!(!r.passed());
        assert!(r
            .violations
            .iter()
            .any(|v| matches!(v, Violation::RowSum { matrix: "P_target", row: 0, .. })));
    }

    #[test]
    fn absolute_continuity_violation() {
        let m = two_state([0.5, 0.5, 0.5, 0.5], [1.0, 0.0, 0.5, 0.5]);
        let r = m.validate();
        assert_eq!(r.violations, vec![Violation::AbsoluteContinuity { row: 0, col: 1 }]);
    }

    #[test]
    fn empty_interest_and_ranges_reported() {
        let mut m = two_state([0.5, 0.5, 0.5, 0.5], [0.5, 0.5, 0.5, 0.5]);
        m.interest = DVector::zeros(2);
        m.gamma[1] = 1.5;
        let r = m.validate();
        assert!(r.violations.contains(&Violation::NoInterest));
        assert!(r.violations.contains(&Violation::OutOfUnitInterval { field: "gamma", state: 1 }));
    }

    #[test]
    fn stationary_of_flip_and_uniform() {
        for p in [[0.0, 1.0, 1.0, 0.0], [0.5, 0.5, 0.5, 0.5]] {
            let d = stationary_distribution(&DMatrix::from_row_slice(2, 2, &p)).unwrap();
            assert_abs_diff_eq!(d[0], 0.5, epsilon = 1e-12);
            assert_abs_diff_eq!(d[1], 0.5, epsilon = 1e-12);
        }
    }

    #[test]
    fn stationary_falls_back_to_direct_solve() {
        let p = DMatrix::from_row_slice(3, 3, &[0.9, 0.1, 0.0, 0.05, 0.9, 0.05, 0.0, 0.2, 0.8]);
        let opts = StationaryOptions { max_sweeps: 2, tol: 1e-12 };
        let d = stationary_distribution_with(&p, opts).unwrap();
        assert!(stationary_residual(&p, &d) < 1e-12);
        assert_abs_diff_eq!(d.sum(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn chain_with_two_closed_classes_is_rejected() {
        let p = DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.5, 0.5, 0.0]);
        let opts = StationaryOptions { max_sweeps: 1, tol: 1e-12 };
        assert!(matches!(stationary_distribution_with(&p, opts), Err(EtdError::NoConvergence(_))));
    }

    #[test]
    fn geometric_series_value() {
        let m = FiniteMdp {
            n_states: 1,
            p_target: DMatrix::from_element(1, 1, 1.0),
            p_behavior: DMatrix::from_element(1, 1, 1.0),
            reward: DMatrix::from_element(1, 1, 1.0),
            gamma: DVector::from_element(1, 0.5),
            lambda: DVector::from_element(1, 0.0),
            interest: DVector::from_element(1, 1.0),
            features: DMatrix::from_element(1, 1, 1.0),
        };
        let v = true_value_function(&m).unwrap();
        assert_abs_diff_eq!(v[0], 2.0, epsilon = 1e-14);
    }

    #[test]
    fn undiscounted_recurrent_value_is_singular() {
        let mut m = two_state([0.0, 1.0, 1.0, 0.0], [0.5, 0.5, 0.5, 0.5]);
        m.gamma = DVector::from_element(2, 1.0);
        assert!(matches!(true_value_function(&m), Err(EtdError::Singular(_))));
    }

    #[test]
    fn zero_interest_gives_zero_emphasis() {
        let mut m = two_state([0.2, 0.8, 0.6, 0.4], [0.5, 0.5, 0.5, 0.5]);
        m.interest = DVector::zeros(2);
        let (f, mm) = followon_and_emphasis(&m).unwrap();
        assert_eq!(f, DVector::zeros(2));
        assert_eq!(mm, DVector::zeros(2));
    }

    #[test]
    fn lambda_one_emphasis_is_interest_weighting() {
        let mut m = two_state([0.2, 0.8, 0.6, 0.4], [0.5, 0.5, 0.3, 0.7]);
        m.lambda = DVector::from_element(2, 1.0);
        m.interest = DVector::from_vec(vec![1.0, 2.0]);
        let d = stationary_distribution(&m.p_behavior).unwrap();
        let (_, mm) = followon_and_emphasis(&m).unwrap();
        assert_abs_diff_eq!(mm, d.component_mul(&m.interest), epsilon = 1e-14);
    }

    #[test]
    fn tabular_lambda_one_recovers_true_values() {
        let mut m = two_state([0.2, 0.8, 0.6, 0.4], [0.5, 0.5, 0.3, 0.7]);
        m.lambda = DVector::from_element(2, 1.0);
        m.reward = DMatrix::from_row_slice(2, 2, &[1.0, -2.0, 0.5, 3.0]);
        let sol = solve(&m).unwrap();
        assert_abs_diff_eq!(sol.theta_star, sol.v_pi, epsilon = 1e-10);
    }

    #[test]
    fn zero_matrix_is_semidefinite_rank_zero() {
        let r = definiteness_report(&DMatrix::<f64>::zeros(3, 3));
        assert_eq!(r.rank, 0);
        assert_eq!(r.classification, Definiteness::NegativeSemidefinite);
    }

    #[test]
    fn indefinite_detected() {
        let c = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert_eq!(definiteness_report(&c).classification, Definiteness::Indefinite);
        let c = DMatrix::from_row_slice(2, 2, &[-1.0, 5.0, -5.0, -1.0]);
        let r = definiteness_report(&c);
        assert_eq!(r.classification, Definiteness::NegativeDefinite);
        assert_eq!(r.rank, 2);
    }

    #[test]
    fn cycle_rejects_zero_behavior_edge() {
        let m = two_state([0.5, 0.5, 0.5, 0.5], [1.0, 0.0, 0.5, 0.5]);
        assert!(cycle_certificate(&m, &CycleSpec::new(vec![0, 1]), CycleMode::FollowOn).is_err());
        assert!(cycle_certificate(&m, &CycleSpec::new(vec![]), CycleMode::FollowOn).is_err());
    }

    #[test]
    fn cycle_edges_close_the_walk() {
        assert_eq!(CycleSpec::new(vec![3]).edges(), vec![(3, 3)]);
        assert_eq!(CycleSpec::new(vec![3, 3]).edges(), vec![(3, 3)]);
        assert_eq!(CycleSpec::new(vec![0, 1, 2, 0]).edges(), vec![(0, 1), (1, 2), (2, 0)]);
    }

    #[test]
    fn json_round_trip_preserves_model() {
        let m = two_state([0.2, 0.8, 0.6, 0.4], [0.5, 0.5, 0.3, 0.7]);
        let s = m.to_json().unwrap();
        assert!(s.contains("\"P_target\""));
        let back = FiniteMdp::<f64>::from_json(&s).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn json_rows_are_row_major() {
        let m = two_state([0.2, 0.8, 0.6, 0.4], [0.5, 0.5, 0.3, 0.7]);
        let doc = ModelDocument::from(&m);
        assert_eq!(doc.p_target, vec![vec![0.2, 0.8], vec![0.6, 0.4]]);
    }

    #[test]
    fn works_in_single_precision() {
        let m = FiniteMdp::<f32> {
            n_states: 2,
            p_target: DMatrix::from_row_slice(2, 2, &[0.2, 0.8, 0.6, 0.4]),
            p_behavior: DMatrix::from_row_slice(2, 2, &[0.5, 0.5, 0.3, 0.7]),
            reward: DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]),
            gamma: DVector::from_element(2, 0.9),
            lambda: DVector::from_element(2, 1.0),
            interest: DVector::from_element(2, 1.0),
            features: DMatrix::identity(2, 2),
        };
        let sol = solve(&m).unwrap();
        assert!((&sol.theta_star - &sol.v_pi).amax() < 1e-3);
    }
}
