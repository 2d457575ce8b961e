//! Experiment configuration and the seeded runner.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};
use std::path::PathBuf;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::features::FeatureScheme;
use crate::env::finite::{
    build_problem1, build_problem1_lambda_one, build_problem1_two_interest, build_problem2, FiniteSimulator,
    MiddleReward,
};
use crate::env::monte_carlo::evaluation_lattice;
use crate::env::mountain_car::{McSimulator, McState};
use crate::error::{EtdError, Result};
use crate::harness::stats::{default_x_grid, normalized_distance, segment_failure_fraction, SegmentCurve};
use crate::learner::{
    learner_step, stepsize_at, AveragingClock, LearnerConfig, LearnerState, StepsizeSchedule, Variant,
};
use crate::mdp::{self, FiniteMdp, ModelDocument};
use crate::trace::{StepRecord, TraceState, TraceStats, DEFAULT_EXCURSION_THRESHOLD, DEFAULT_TAIL_GRID};

pub const SCHEMA_VERSION: u32 = 1;
pub const THREADS_ENV: &str = "ETDLAB_THREADS";
pub const NORM_CONVENTION: &str = "euclidean";
pub const MEDIAN_CONVENTION: &str = "even count: mean of the two central values";
pub const WINDOW_CONVENTION: &str = "sliding windows, every start position, fully contained in the retained series";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Problem1Variant {
    #[default]
    Default,
    TwoInterest,
    LambdaOne,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum McFeatures {
    TilingA,
    TilingB,
    RegionLinear,
}

impl McFeatures {
    pub fn scheme(self) -> FeatureScheme {
        match self {
            McFeatures::TilingA => FeatureScheme::tiling_a(),
            McFeatures::TilingB => FeatureScheme::tiling_b(),
            McFeatures::RegionLinear => FeatureScheme::region_linear(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum EnvironmentSpec {
    Problem1 {
        #[serde(default)]
        variant: Problem1Variant,
    },
    Problem2 {
        #[serde(default)]
        middle_reward: MiddleReward,
    },
    /// A finite model stored as a JSON model document.
    Model { path: PathBuf },
    MountainCar { features: McFeatures },
}

impl EnvironmentSpec {
    pub fn finite_model(&self) -> Result<Option<FiniteMdp<f64>>> {
        Ok(Some(match self {
            EnvironmentSpec::Problem1 { variant } => match variant {
                Problem1Variant::Default => build_problem1(),
                Problem1Variant::TwoInterest => build_problem1_two_interest(),
                Problem1Variant::LambdaOne => build_problem1_lambda_one(),
            },
            EnvironmentSpec::Problem2 { middle_reward } => build_problem2(*middle_reward),
            EnvironmentSpec::Model { path } => {
                let text = std::fs::read_to_string(path)
                    .map_err(|source| EtdError::Io { path: path.display().to_string(), source })?;
                let doc: ModelDocument = serde_json::from_str(&text)?;
                doc.to_model()?
            }
            EnvironmentSpec::MountainCar { .. } => return Ok(None),
        }))
    }
}

/// Learner settings without a stepsize; the runner pairs each template with
/// every configured stepsize (ELSTD takes none).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LearnerTemplate {
    pub variant: Variant,
    #[serde(rename = "K", alias = "k", default = "default_k")]
    pub k: f64,
    #[serde(default = "default_r_b")]
    pub r_b: f64,
    #[serde(default)]
    pub perturb: bool,
    #[serde(default = "default_solve_period")]
    pub elstd_solve_period: u64,
    /// Defaults to half the run length.
    #[serde(default)]
    pub averaging_start: Option<u64>,
    #[serde(default)]
    pub averaging_clock: AveragingClock,
}

fn default_k() -> f64 {
    50.0
}
fn default_r_b() -> f64 {
    100.0
}
fn default_solve_period() -> u64 {
    500
}
fn default_trace_threshold() -> f64 {
    DEFAULT_EXCURSION_THRESHOLD
}
fn default_decimation() -> u64 {
    1
}
fn default_true() -> bool {
    true
}

impl LearnerTemplate {
    pub fn new(variant: Variant) -> Self {
        Self {
            variant,
            k: default_k(),
            r_b: default_r_b(),
            perturb: false,
            elstd_solve_period: default_solve_period(),
            averaging_start: None,
            averaging_clock: AveragingClock::Steps,
        }
    }

    pub fn with(&self, d: usize, schedule: StepsizeSchedule, run_length: u64) -> LearnerConfig {
        LearnerConfig {
            variant: self.variant,
            k: self.k,
            r_b: self.r_b,
            schedule,
            perturb: self.perturb,
            d,
            elstd_solve_period: self.elstd_solve_period,
            averaging_start: self.averaging_start.unwrap_or(run_length / 2),
            averaging_clock: self.averaging_clock,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WindowName {
    /// `⌊1/α⌋` for a constant stepsize `α`.
    InverseStepsize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum WindowSpec {
    Length(usize),
    Named(WindowName),
}

impl WindowSpec {
    pub fn resolve(self, schedule: &StepsizeSchedule) -> Option<usize> {
        match self {
            WindowSpec::Length(l) => Some(l),
            WindowSpec::Named(WindowName::InverseStepsize) => match schedule {
                StepsizeSchedule::Constant { alpha } => Some((1.0 / alpha).floor() as usize),
                _ => None,
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatisticsRequest {
    #[serde(default = "default_windows")]
    pub segment_windows: Vec<WindowSpec>,
    #[serde(default)]
    pub x_grid: Option<Vec<f64>>,
    #[serde(default)]
    pub timeline: bool,
    #[serde(default)]
    pub trace_grid: Option<Vec<f64>>,
    #[serde(default = "default_trace_threshold")]
    pub trace_threshold: f64,
    /// Keep every n-th trace norm (0 keeps none).
    #[serde(default = "default_decimation")]
    pub trace_decimation: u64,
    /// Keep the per-step distance series in the results.
    #[serde(default = "default_true")]
    pub record_series: bool,
    /// Evaluate Mountain Car estimates on the 171×141 lattice.
    #[serde(default)]
    pub lattice_surfaces: bool,
}

fn default_windows() -> Vec<WindowSpec> {
    vec![WindowSpec::Length(100)]
}

impl Default for StatisticsRequest {
    fn default() -> Self {
        Self {
            segment_windows: default_windows(),
            x_grid: None,
            timeline: false,
            trace_grid: None,
            trace_threshold: default_trace_threshold(),
            trace_decimation: default_decimation(),
            record_series: true,
            lattice_surfaces: false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Budget {
    /// `run_length` behavior steps.
    Steps,
    /// `run_length` effective steps (`ρ > 0`).
    Effective,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub name: String,
    pub environment: EnvironmentSpec,
    pub learners: Vec<LearnerTemplate>,
    #[serde(default)]
    pub stepsizes: Vec<StepsizeSchedule>,
    pub run_length: u64,
    #[serde(default)]
    pub discard_prefix: u64,
    pub num_runs: usize,
    pub seeds: Vec<u64>,
    /// Defaults to steps for finite models and effective steps for Mountain Car.
    #[serde(default)]
    pub budget: Option<Budget>,
    #[serde(default)]
    pub outputs: Option<PathBuf>,
    #[serde(default)]
    pub statistics: StatisticsRequest,
}

impl ExperimentConfig {
    pub fn from_json(s: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(EtdError::Config(m));
        if self.schema_version != SCHEMA_VERSION {
            return bad(format!("unsupported schema_version {}", self.schema_version));
        }
        if self.num_runs != self.seeds.len() {
            return bad(format!("num_runs = {} but {} seeds given", self.num_runs, self.seeds.len()));
        }
        if self.run_length == 0 || self.discard_prefix >= self.run_length {
            return bad(format!(
                "need 0 <= discard_prefix < run_length, got {} and {}",
                self.discard_prefix, self.run_length
            ));
        }
        if self.learners.is_empty() {
            return bad("no learners configured".into());
        }
        if self.stepsizes.is_empty() && self.learners.iter().any(|l| l.variant != Variant::Elstd) {
            return bad("stepsize list is empty".into());
        }
        for l in self.learner_configs(1) {
            l.validate()?;
        }
        Ok(())
    }

    pub fn budget(&self) -> Budget {
        self.budget.unwrap_or(match self.environment {
            EnvironmentSpec::MountainCar { .. } => Budget::Effective,
            _ => Budget::Steps,
        })
    }

    /// Every learner × stepsize combination, in configuration order.
    pub fn learner_configs(&self, d: usize) -> Vec<LearnerConfig> {
        let mut out = Vec::new();
        for t in &self.learners {
            if t.variant == Variant::Elstd {
                let sched = self.stepsizes.first().cloned().unwrap_or(StepsizeSchedule::Constant { alpha: 1.0 });
                out.push(t.with(d, sched, self.run_length));
            } else {
                out.extend(self.stepsizes.iter().map(|s| t.with(d, *s, self.run_length)));
            }
        }
        out
    }

    /// Stable hash of the canonical JSON form.
    pub fn hash_hex(&self) -> String {
        let mut h = DefaultHasher::new();
        serde_json::to_string(self).unwrap_or_default().hash(&mut h);
        format!("{:016x}", h.finish())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LearnerResult {
    pub label: String,
    pub config: LearnerConfig,
    /// Update index of the first retained entry.
    pub first_t: u64,
    /// `dist[k]`: normalized distance of θ after update `first_t + k`.
    pub dist: Vec<f64>,
    /// Same for the tail average; NaN before the averaging window opens.
    pub dist_avg: Vec<f64>,
    pub segments: Vec<SegmentCurve>,
    pub final_theta: Vec<f64>,
    pub final_average: Option<Vec<f64>>,
    pub final_dist: Option<f64>,
    pub final_avg_dist: Option<f64>,
    pub updates: u64,
    pub effective_updates: u64,
    pub diverged: Option<String>,
    pub checksum: String,
    /// Estimate on the Mountain Car lattice (position-major).
    pub surface: Option<Vec<f64>>,
    pub surface_avg: Option<Vec<f64>>,
}

impl LearnerResult {
    pub fn alpha_at(&self, k: usize) -> f64 {
        stepsize_at(&self.config.schedule, self.first_t + k as u64)
    }

    pub fn alphas(&self) -> Vec<f64> {
        (0..self.dist.len()).map(|k| self.alpha_at(k)).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub schema_version: u32,
    pub run_index: usize,
    pub seed: u64,
    pub config_hash: String,
    pub norm: String,
    pub median: String,
    pub windows: String,
    pub budget: Budget,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub metadata: RunMetadata,
    pub steps: u64,
    pub effective_steps: u64,
    pub theta_star: Option<Vec<f64>>,
    pub learners: Vec<LearnerResult>,
    pub trace: TraceStats,
    pub stream_checksum: String,
}

impl RunResult {
    /// Hash of every stored value at the bit level, so NaN entries compare
    /// equal to themselves.
    pub fn fingerprint(&self) -> String {
        let mut h = DefaultHasher::new();
        serde_json::to_string(self).unwrap_or_default().hash(&mut h);
        for l in &self.learners {
            for x in l.dist.iter().chain(&l.dist_avg).chain(&l.final_theta) {
                x.to_bits().hash(&mut h);
            }
        }
        format!("{:016x}", h.finish())
    }
}

/// Job concurrency from `ETDLAB_THREADS`, falling back to rayon's default.
pub fn thread_count() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|s| s.trim().parse::<usize>().ok())
        .filter(|n| *n >= 1)
        .unwrap_or_else(rayon::current_num_threads)
}

fn record_digest(rec: &StepRecord<f64>) -> u64 {
    let mut h = DefaultHasher::new();
    for x in rec.phi_t.iter().chain(rec.phi_next.iter()) {
        x.to_bits().hash(&mut h);
    }
    for x in [rec.i_t, rec.gamma_t, rec.lambda_t, rec.rho_t, rec.reward, rec.gamma_next] {
        x.to_bits().hash(&mut h);
    }
    rec.effective.hash(&mut h);
    h.finish()
}

fn learner_seed(seed: u64, index: usize) -> u64 {
    seed ^ 0x9E37_79B9_7F4A_7C15u64.wrapping_mul(index as u64 + 1)
}

enum Stream<'m> {
    Finite(FiniteSimulator<'m, f64>),
    Mountain(Box<McSimulator>),
}

impl Stream<'_> {
    fn step(&mut self, rng: &mut ChaCha8Rng) -> Result<StepRecord<f64>> {
        match self {
            Stream::Finite(s) => s.step(rng).map(|r| r.0),
            Stream::Mountain(s) => s.step(rng).map(|r| r.0),
        }
    }
}

struct Slot {
    cfg: LearnerConfig,
    state: LearnerState<f64>,
    hasher: DefaultHasher,
    dist: Vec<f64>,
    dist_avg: Vec<f64>,
    diverged: Option<String>,
}

/// One seeded run: a single trajectory fed to every learner.
pub fn run_single(cfg: &ExperimentConfig, run_index: usize) -> Result<RunResult> {
    let seed = cfg.seeds[run_index];
    let model = cfg.environment.finite_model()?;
    let sol = match &model {
        Some(m) => Some(mdp::solve(m)?),
        None => None,
    };
    let theta_star = sol.as_ref().map(|s| s.theta_star.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut stream, d, scheme) = match (&model, &cfg.environment) {
        (Some(m), _) => {
            let start = rng.gen_range(0..m.n_states);
            (Stream::Finite(FiniteSimulator::new(m, start)?), m.feature_dim(), None)
        }
        (None, EnvironmentSpec::MountainCar { features }) => {
            let scheme = features.scheme();
            let start = McState::uniform(&mut rng);
            let d = scheme.dim();
            (Stream::Mountain(Box::new(McSimulator::new(start, scheme.clone())?)), d, Some(scheme))
        }
        _ => unreachable!(),
    };
    let track = theta_star.is_some() && cfg.statistics.record_series;
    let mut slots: Vec<Slot> = cfg
        .learner_configs(d)
        .into_iter()
        .enumerate()
        .map(|(i, c)| Slot {
            state: LearnerState::new(&c, learner_seed(seed, i)),
            cfg: c,
            hasher: DefaultHasher::new(),
            dist: Vec::new(),
            dist_avg: Vec::new(),
            diverged: None,
        })
        .collect();
    let mut traces = TraceState::<f64>::new(d);
    let mut tstats = TraceStats::new(
        cfg.statistics.trace_grid.clone().unwrap_or_else(|| DEFAULT_TAIL_GRID.to_vec()),
        cfg.statistics.trace_threshold,
        cfg.statistics.trace_decimation,
    );
    let mut stream_hash = DefaultHasher::new();
    let budget = cfg.budget();
    let (mut steps, mut effective) = (0u64, 0u64);
    loop {
        let used = match budget {
            Budget::Steps => steps,
            Budget::Effective => effective,
        };
        if used >= cfg.run_length {
            break;
        }
        let rec = stream.step(&mut rng)?;
        traces.step(&rec)?;
        tstats.record(traces.f, &traces.e);
        let digest = record_digest(&rec);
        digest.hash(&mut stream_hash);
        let keep = steps >= cfg.discard_prefix;
        for slot in slots.iter_mut().filter(|s| s.diverged.is_none()) {
            digest.hash(&mut slot.hasher);
            match learner_step(&mut slot.state, &slot.cfg, &traces.e, &rec) {
                Ok(()) => {}
                Err(e @ EtdError::Diverged { .. }) => {
                    slot.diverged = Some(e.to_string());
                    continue;
                }
                Err(e) => return Err(e),
            }
            if track && keep {
                let ts = theta_star.as_ref().expect("tracked runs have θ*");
                slot.dist.push(normalized_distance(slot.state.estimate(&slot.cfg), ts)?);
                let avg = if slot.state.avg_count > 0 {
                    normalized_distance(&slot.state.tail_average(&slot.cfg)?, ts)?
                } else {
                    f64::NAN
                };
                slot.dist_avg.push(avg);
            }
        }
        steps += 1;
        if rec.effective {
            effective += 1;
        }
    }

    let x_grid = cfg.statistics.x_grid.clone().unwrap_or_else(default_x_grid);
    let lattice = if cfg.statistics.lattice_surfaces { scheme.as_ref().map(|_| evaluation_lattice()) } else { None };
    let mut learners = Vec::with_capacity(slots.len());
    for mut slot in slots {
        if slot.cfg.variant == Variant::Elstd && slot.diverged.is_none() {
            slot.state.elstd_solve();
        }
        let est = slot.state.estimate(&slot.cfg).clone();
        let avg = slot.state.tail_average(&slot.cfg).ok();
        let mut segments = Vec::new();
        for w in &cfg.statistics.segment_windows {
            if let Some(len) = w.resolve(&slot.cfg.schedule) {
                if len >= 1 && slot.dist.len() >= len {
                    segments.push(segment_failure_fraction(&slot.dist, len, &x_grid)?);
                }
            }
        }
        let (final_dist, final_avg_dist) = match &theta_star {
            Some(ts) => (
                Some(normalized_distance(&est, ts)?),
                avg.as_ref().map(|a| normalized_distance(a, ts)).transpose()?,
            ),
            None => (None, None),
        };
        let surface_of = |theta: &DVector<f64>| -> Result<Vec<f64>> {
            let (scheme, grid) = (scheme.as_ref().expect("lattice implies Mountain Car"), lattice.as_ref().unwrap());
            grid.iter().map(|&(p, v)| Ok(scheme.mountain_car(&McState::new(p, v))?.dot(theta))).collect()
        };
        let (surface, surface_avg) = if lattice.is_some() {
            (Some(surface_of(&est)?), avg.as_ref().map(&surface_of).transpose()?)
        } else {
            (None, None)
        };
        learners.push(LearnerResult {
            label: slot.cfg.label(),
            first_t: cfg.discard_prefix,
            dist: slot.dist,
            dist_avg: slot.dist_avg,
            segments,
            final_theta: est.iter().copied().collect(),
            final_average: avg.map(|a| a.iter().copied().collect()),
            final_dist,
            final_avg_dist,
            updates: slot.state.t,
            effective_updates: slot.state.effective_t,
            diverged: slot.diverged,
            checksum: format!("{:016x}", slot.hasher.finish()),
            surface,
            surface_avg,
            config: slot.cfg,
        });
    }
    Ok(RunResult {
        metadata: RunMetadata {
            schema_version: SCHEMA_VERSION,
            run_index,
            seed,
            config_hash: cfg.hash_hex(),
            norm: NORM_CONVENTION.into(),
            median: MEDIAN_CONVENTION.into(),
            windows: WINDOW_CONVENTION.into(),
            budget,
        },
        steps,
        effective_steps: effective,
        theta_star: theta_star.map(|t| t.iter().copied().collect()),
        learners,
        trace: tstats,
        stream_checksum: format!("{:016x}", stream_hash.finish()),
    })
}

/// Runs every seed, at most `ETDLAB_THREADS` at a time. Results come back
/// in seed order and do not depend on the thread count.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<RunResult>> {
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(thread_count())
        .build()
        .map_err(|e| EtdError::Config(format!("thread pool: {e}")))?;
    pool.install(|| (0..cfg.num_runs).into_par_iter().map(|i| run_single(cfg, i)).collect())
}
