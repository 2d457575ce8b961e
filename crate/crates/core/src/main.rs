use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use etdlab::env::discretized::build_discretized_model;
use etdlab::env::finite::{build_problem1, build_problem1_lambda_one, build_problem1_two_interest, build_problem2};
use etdlab::env::monte_carlo::{evaluation_lattice, mc_monte_carlo_value, write_value_grid, DEFAULT_EPISODE_CAP};
use etdlab::harness::experiment::{run_experiment, thread_count, ExperimentConfig, SCHEMA_VERSION};
use etdlab::harness::export::{export_all, read_distance_csv, write_atomic, Format};
use etdlab::harness::stats::{default_x_grid, segment_failure_fraction, timeline_csv, timeline_error_bars};
use etdlab::mdp::{self, cycle_certificate, definiteness_report, simple_cycles, CycleMode, FiniteMdp};
use etdlab::{EtdError, Result};

#[derive(Parser)]
#[command(name = "etdlab", version, about = "Emphatic TD experiments")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Clone)]
struct Common {
    /// Input file (model, experiment or statistics config).
    #[arg(long)]
    config: Option<String>,
    /// Overrides the seed (single run).
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value = "csv")]
    format: Format,
}

#[derive(Subcommand)]
enum Cmd {
    /// Print θ*, the spectrum of C and cycle certificates for a model. The
    /// config is a model JSON file or one of problem1, problem1-two-interest,
    /// problem1-lambda-one, problem2.
    Solve(Common),
    /// Run an experiment config.
    Run(Common),
    /// Recompute statistics from distance CSV files.
    Stats(Common),
    /// Build the discretized Mountain Car model and Monte Carlo value tables.
    McRef(Common),
}

fn load_model(spec: &str) -> Result<FiniteMdp<f64>> {
    Ok(match spec {
        "problem1" => build_problem1(),
        "problem1-two-interest" => build_problem1_two_interest(),
        "problem1-lambda-one" => build_problem1_lambda_one(),
        "problem2" => build_problem2(Default::default()),
        path => FiniteMdp::from_json(&read(Path::new(path))?)?,
    })
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|source| EtdError::Io { path: path.display().to_string(), source })
}

fn emit(out: Option<&Path>, name: &str, body: &str) -> Result<()> {
    match out {
        Some(dir) => {
            let p = dir.join(name);
            write_atomic(&p, body.as_bytes())?;
            eprintln!("wrote {}", p.display());
        }
        None => print!("{body}"),
    }
    Ok(())
}

#[derive(Serialize)]
struct CycleRow {
    states: Vec<usize>,
    mode: CycleMode,
    product: f64,
    verdict: mdp::CycleVerdict,
}

#[derive(Serialize)]
struct SolveOutput {
    schema_version: u32,
    theta_star: Vec<f64>,
    v_pi: Vec<f64>,
    c_rank: usize,
    definiteness: mdp::DefinitenessReport,
    cycles: Vec<CycleRow>,
}

fn solve(c: &Common) -> Result<()> {
    let spec = c.config.as_deref().ok_or_else(|| EtdError::InvalidArgument("--config is required".into()))?;
    let model = load_model(spec)?;
    let sol = mdp::solve(&model)?;
    let mut cycles = Vec::new();
    for cy in simple_cycles(&model) {
        for mode in [CycleMode::FollowOn, CycleMode::Eligibility] {
            let cert = cycle_certificate(&model, &cy, mode)?;
            cycles.push(CycleRow { states: cy.states.clone(), mode, product: cert.product, verdict: cert.verdict });
        }
    }
    let out = SolveOutput {
        schema_version: SCHEMA_VERSION,
        theta_star: sol.theta_star.iter().copied().collect(),
        v_pi: sol.v_pi.iter().copied().collect(),
        c_rank: sol.c_rank,
        definiteness: definiteness_report(&sol.c),
        cycles,
    };
    match c.format {
        Format::Json => emit(c.out.as_deref(), "solve.json", &(serde_json::to_string_pretty(&out)? + "\n")),
        Format::Csv => {
            let mut s = String::from("quantity,index,value\n");
            for (i, x) in out.theta_star.iter().enumerate() {
                let _ = writeln!(s, "theta_star,{i},{x}");
            }
            for (i, x) in out.v_pi.iter().enumerate() {
                let _ = writeln!(s, "v_pi,{i},{x}");
            }
            let _ = writeln!(s, "c_rank,0,{}", out.c_rank);
            for (i, x) in out.definiteness.sym_eigenvalues.iter().enumerate() {
                let _ = writeln!(s, "sym_eigenvalue,{i},{x}");
            }
            s.push_str("\ncycle,mode,product,verdict\n");
            for r in &out.cycles {
                let states: Vec<String> = r.states.iter().map(|s| s.to_string()).collect();
                let _ = writeln!(
                    s,
                    "{},{},{},{}",
                    states.join("-"),
                    serde_json::to_value(r.mode)?.as_str().unwrap_or_default(),
                    r.product,
                    serde_json::to_value(r.verdict)?.as_str().unwrap_or_default()
                );
            }
            emit(c.out.as_deref(), "solve.csv", &s)
        }
    }
}

fn run(c: &Common) -> Result<()> {
    let path = c.config.as_deref().ok_or_else(|| EtdError::InvalidArgument("--config is required".into()))?;
    let mut cfg = ExperimentConfig::from_json(&read(Path::new(path))?)?;
    if let Some(seed) = c.seed {
        cfg.seeds = vec![seed];
        cfg.num_runs = 1;
    }
    let out = c.out.clone().or_else(|| cfg.outputs.clone()).unwrap_or_else(|| PathBuf::from("results"));
    eprintln!("running {} job(s) on {} thread(s)", cfg.num_runs, thread_count());
    let runs = run_experiment(&cfg)?;
    for r in &runs {
        for l in &r.learners {
            if let Some(d) = &l.diverged {
                eprintln!("seed {}: {} diverged: {d}", r.metadata.seed, l.label);
            }
        }
    }
    let files = export_all(&cfg, &runs, &out, c.format)?;
    eprintln!("wrote {} file(s) to {}", files.len(), out.display());
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct StatsConfig {
    schema_version: u32,
    /// Distance CSV files written by `run`.
    inputs: Vec<PathBuf>,
    #[serde(default = "default_windows")]
    windows: Vec<usize>,
    #[serde(default)]
    x_grid: Option<Vec<f64>>,
    #[serde(default)]
    timeline: bool,
}

fn default_windows() -> Vec<usize> {
    vec![100]
}

fn stats(c: &Common) -> Result<()> {
    let path = c.config.as_deref().ok_or_else(|| EtdError::InvalidArgument("--config is required".into()))?;
    let sc: StatsConfig = serde_json::from_str(&read(Path::new(path))?)?;
    if sc.schema_version != SCHEMA_VERSION {
        return Err(EtdError::Config(format!("unsupported schema_version {}", sc.schema_version)));
    }
    let grid = sc.x_grid.clone().unwrap_or_else(default_x_grid);
    let mut series = Vec::new();
    let mut curves = Vec::new();
    for input in &sc.inputs {
        let (alphas, dists) = read_distance_csv(input)?;
        for &w in &sc.windows {
            curves.push((input.display().to_string(), segment_failure_fraction(&dists, w, &grid)?));
        }
        series.push((alphas, dists));
    }
    let bars = sc.timeline.then(|| timeline_error_bars(&series));
    match c.format {
        Format::Json => {
            let v = serde_json::json!({
                "schema_version": SCHEMA_VERSION,
                "segments": curves.iter().map(|(f, c)| serde_json::json!({"input": f, "curve": c})).collect::<Vec<_>>(),
                "timeline": bars,
            });
            emit(c.out.as_deref(), "stats.json", &(serde_json::to_string_pretty(&v)? + "\n"))
        }
        Format::Csv => {
            let mut s = String::from("input,x,fraction,window\n");
            for (f, cv) in &curves {
                for (x, fr) in &cv.points {
                    let _ = writeln!(s, "{f},{x},{fr},{}", cv.window);
                }
            }
            emit(c.out.as_deref(), "segments.csv", &s)?;
            if let Some(b) = bars {
                emit(c.out.as_deref(), "timeline.csv", &timeline_csv(&b))?;
            }
            Ok(())
        }
    }
}

#[derive(Serialize, Deserialize)]
struct McRefConfig {
    #[serde(default = "default_run_length")]
    run_length: u64,
    #[serde(default = "default_episodes")]
    episodes_per_state: u64,
    #[serde(default = "default_cap")]
    cap: u64,
    #[serde(default)]
    seed: u64,
    /// Skip the Monte Carlo table.
    #[serde(default)]
    skip_monte_carlo: bool,
}

fn default_run_length() -> u64 {
    10_000_000
}
fn default_episodes() -> u64 {
    200
}
fn default_cap() -> u64 {
    DEFAULT_EPISODE_CAP
}

fn mc_ref(c: &Common) -> Result<()> {
    let mut mc: McRefConfig = match &c.config {
        Some(p) => serde_json::from_str(&read(Path::new(p))?)?,
        None => serde_json::from_str("{}")?,
    };
    if let Some(s) = c.seed {
        mc.seed = s;
    }
    let out = c.out.clone().unwrap_or_else(|| PathBuf::from("mc-ref"));
    let model = build_discretized_model(mc.run_length, mc.seed)?;
    write_atomic(&out.join("discretized_report.json"), serde_json::to_string_pretty(&model.report)?.as_bytes())?;
    let lattice = evaluation_lattice();
    let mut rows = Vec::with_capacity(lattice.len());
    for &(p, v) in &lattice {
        rows.push((p, v, model.value_at(p, v)?));
    }
    let mut buf = Vec::new();
    write_value_grid(&mut buf, rows).map_err(|source| EtdError::Io { path: "buffer".into(), source })?;
    write_atomic(&out.join("discretized_values.csv"), &buf)?;
    if !mc.skip_monte_carlo {
        eprintln!("simulating {} episodes for each of {} states", mc.episodes_per_state, lattice.len());
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(thread_count())
            .build()
            .map_err(|e| EtdError::Config(format!("thread pool: {e}")))?;
        let table = pool.install(|| mc_monte_carlo_value(&lattice, mc.episodes_per_state, mc.cap, mc.seed))?;
        match c.format {
            Format::Csv => {
                let mut buf = Vec::new();
                write_value_grid(&mut buf, table.iter().map(|e| (e.p, e.v, e.value)))
                    .map_err(|source| EtdError::Io { path: "buffer".into(), source })?;
                write_atomic(&out.join("mc_values.csv"), &buf)?;
            }
            Format::Json => {
                let v = serde_json::json!({ "schema_version": SCHEMA_VERSION, "entries": table });
                write_atomic(&out.join("mc_values.json"), serde_json::to_string_pretty(&v)?.as_bytes())?;
            }
        }
    }
    eprintln!("wrote reference tables to {}", out.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match &cli.cmd {
        Cmd::Solve(c) => solve(c),
        Cmd::Run(c) => run(c),
        Cmd::Stats(c) => stats(c),
        Cmd::McRef(c) => mc_ref(c),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
