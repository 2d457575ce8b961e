//! CSV/JSON export of run results.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{EtdError, Result};
use crate::harness::experiment::{
    ExperimentConfig, LearnerResult, RunResult, MEDIAN_CONVENTION, NORM_CONVENTION, SCHEMA_VERSION,
    WINDOW_CONVENTION,
};
use crate::harness::stats::{timeline_csv, timeline_error_bars, TimelineBar};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

impl std::str::FromStr for Format {
    type Err = EtdError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            _ => Err(EtdError::InvalidArgument(format!("unknown format {s:?}, expected csv or json"))),
        }
    }
}

/// Writes `contents` through a temporary file in the same directory, so a
/// failed write leaves nothing behind.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let io = |source| EtdError::Io { path: path.display().to_string(), source };
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).map_err(io)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io)?;
    tmp.write_all(contents).map_err(io)?;
    tmp.persist(path).map_err(|e| io(e.error))?;
    Ok(())
}

/// `#`-prefixed metadata lines for CSV files.
pub fn metadata_header(run: &RunResult, learner: Option<&str>) -> String {
    let m = &run.metadata;
    let mut s = String::new();
    let _ = writeln!(s, "# schema_version={SCHEMA_VERSION}");
    let _ = writeln!(s, "# config_hash={}", m.config_hash);
    let _ = writeln!(s, "# seed={}", m.seed);
    let _ = writeln!(s, "# run_index={}", m.run_index);
    if let Some(l) = learner {
        let _ = writeln!(s, "# learner={l}");
    }
    let _ = writeln!(s, "# norm={NORM_CONVENTION}");
    let _ = writeln!(s, "# windows={WINDOW_CONVENTION}");
    let _ = writeln!(s, "# steps={} effective_steps={}", run.steps, run.effective_steps);
    s
}

fn num(x: f64) -> String {
    if x.is_finite() {
        format!("{x}")
    } else {
        String::new()
    }
}

/// Columns `t,alpha,dist,dist_avg`.
pub fn distance_csv(l: &LearnerResult) -> String {
    let mut s = String::from("t,alpha,dist,dist_avg\n");
    for k in 0..l.dist.len() {
        let _ = writeln!(
            s,
            "{},{},{},{}",
            l.first_t + k as u64,
            l.alpha_at(k),
            num(l.dist[k]),
            num(l.dist_avg.get(k).copied().unwrap_or(f64::NAN))
        );
    }
    s
}

/// Columns `x,fraction,window`, one block per window.
pub fn segments_csv(l: &LearnerResult) -> String {
    let mut s = String::from("x,fraction,window\n");
    for c in &l.segments {
        for (x, f) in &c.points {
            let _ = writeln!(s, "{x},{f},{}", c.window);
        }
    }
    s
}

/// Columns `p,v,value`.
pub fn surface_csv(values: &[f64]) -> String {
    let grid = crate::env::monte_carlo::evaluation_lattice();
    let mut s = String::from("p,v,value\n");
    for ((p, v), x) in grid.iter().zip(values) {
        let _ = writeln!(s, "{p},{v},{x}");
    }
    s
}

fn file_stem(label: &str) -> String {
    label.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '.' { c } else { '_' }).collect()
}

/// Files for one run. CSV writes one file per statistic and learner; JSON
/// writes the whole result.
pub fn export_run(run: &RunResult, dir: &Path, format: Format) -> Result<Vec<PathBuf>> {
    let prefix = format!("run{}_seed{}", run.metadata.run_index, run.metadata.seed);
    let mut files: Vec<(PathBuf, String)> = Vec::new();
    match format {
        Format::Json => files.push((dir.join(format!("{prefix}.json")), serde_json::to_string_pretty(run)?)),
        Format::Csv => {
            let head = metadata_header(run, None);
            files.push((dir.join(format!("{prefix}_trace_tail.csv")), format!("{head}{}", run.trace.tail_csv())));
            files.push((
                dir.join(format!("{prefix}_trace_excursions.csv")),
                format!("{head}# threshold={}\n{}", run.trace.threshold, run.trace.excursion_csv()),
            ));
            if !run.trace.maxnorm_series.is_empty() {
                let mut body = format!("{head}# decimation={}\nt,maxnorm\n", run.trace.decimation);
                for (t, x) in &run.trace.maxnorm_series {
                    let _ = writeln!(body, "{t},{x}");
                }
                files.push((dir.join(format!("{prefix}_trace_maxnorm.csv")), body));
            }
            for l in &run.learners {
                let stem = format!("{prefix}_{}", file_stem(&l.label));
                let head = metadata_header(run, Some(&l.label));
                if !l.dist.is_empty() {
                    files.push((dir.join(format!("{stem}_distance.csv")), format!("{head}{}", distance_csv(l))));
                }
                if !l.segments.is_empty() {
                    files.push((dir.join(format!("{stem}_segments.csv")), format!("{head}{}", segments_csv(l))));
                }
                if let Some(s) = &l.surface {
                    files.push((dir.join(format!("{stem}_surface.csv")), format!("{head}{}", surface_csv(s))));
                }
                if let Some(s) = &l.surface_avg {
                    files.push((dir.join(format!("{stem}_surface_avg.csv")), format!("{head}{}", surface_csv(s))));
                }
            }
        }
    }
    let mut written = Vec::with_capacity(files.len());
    for (path, body) in files {
        if let Err(e) = write_atomic(&path, body.as_bytes()) {
            for p in &written {
                let _ = std::fs::remove_file(p);
            }
            return Err(e);
        }
        written.push(path);
    }
    Ok(written)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LearnerSummary {
    pub label: String,
    pub final_dist: Vec<Option<f64>>,
    pub final_avg_dist: Vec<Option<f64>>,
    pub diverged: Vec<Option<String>>,
    pub timeline: Option<Vec<TimelineBar>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub schema_version: u32,
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub median: String,
    pub learners: Vec<LearnerSummary>,
}

/// Cross-run aggregate, with timeline bars when requested.
pub fn summarize(cfg: &ExperimentConfig, runs: &[RunResult]) -> Summary {
    let n = runs.first().map_or(0, |r| r.learners.len());
    let learners = (0..n)
        .map(|i| {
            let per: Vec<&LearnerResult> = runs.iter().map(|r| &r.learners[i]).collect();
            let timeline = cfg.statistics.timeline.then(|| {
                let series: Vec<(Vec<f64>, Vec<f64>)> = per.iter().map(|l| (l.alphas(), l.dist.clone())).collect();
                timeline_error_bars(&series)
            });
            LearnerSummary {
                label: per[0].label.clone(),
                final_dist: per.iter().map(|l| l.final_dist).collect(),
                final_avg_dist: per.iter().map(|l| l.final_avg_dist).collect(),
                diverged: per.iter().map(|l| l.diverged.clone()).collect(),
                timeline,
            }
        })
        .collect();
    Summary {
        schema_version: SCHEMA_VERSION,
        config_hash: cfg.hash_hex(),
        seeds: runs.iter().map(|r| r.metadata.seed).collect(),
        median: MEDIAN_CONVENTION.into(),
        learners,
    }
}

/// Writes every run plus `summary.json` (and timeline CSVs for CSV output).
pub fn export_all(cfg: &ExperimentConfig, runs: &[RunResult], dir: &Path, format: Format) -> Result<Vec<PathBuf>> {
    if runs.is_empty() {
        return Err(EtdError::InvalidArgument("no results to export".into()));
    }
    let mut out = Vec::new();
    for r in runs {
        out.extend(export_run(r, dir, format)?);
    }
    let summary = summarize(cfg, runs);
    let p = dir.join("summary.json");
    write_atomic(&p, serde_json::to_string_pretty(&summary)?.as_bytes())?;
    out.push(p);
    if format == Format::Csv {
        for l in &summary.learners {
            if let Some(bars) = &l.timeline {
                let p = dir.join(format!("timeline_{}.csv", file_stem(&l.label)));
                let head = format!("# config_hash={}\n# median={MEDIAN_CONVENTION}\n", summary.config_hash);
                write_atomic(&p, format!("{head}{}", timeline_csv(bars)).as_bytes())?;
                out.push(p);
            }
        }
    }
    Ok(out)
}

/// Reads the `dist` column (and `alpha`) of a distance CSV, skipping `#`
/// lines.
pub fn read_distance_csv(path: &Path) -> Result<(Vec<f64>, Vec<f64>)> {
    let text = std::fs::read_to_string(path).map_err(|source| EtdError::Io { path: path.display().to_string(), source })?;
    let mut lines = text.lines().filter(|l| !l.starts_with('#') && !l.trim().is_empty());
    let header: Vec<&str> = lines.next().unwrap_or_default().split(',').collect();
    let col = |name: &str| {
        header
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| EtdError::Config(format!("{}: missing column {name}", path.display())))
    };
    let (ia, id) = (col("alpha")?, col("dist")?);
    let (mut alphas, mut dists) = (Vec::new(), Vec::new());
    for (n, line) in lines.enumerate() {
        let f: Vec<&str> = line.split(',').collect();
        let parse = |i: usize| -> Result<f64> {
            f.get(i)
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| EtdError::Config(format!("{}: bad row {}", path.display(), n + 1)))
        };
        alphas.push(parse(ia)?);
        dists.push(parse(id)?);
    }
    Ok((alphas, dists))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::experiment::*;
    use crate::learner::{StepsizeSchedule, Variant};

    fn cfg() -> ExperimentConfig {
        let mut l = LearnerTemplate::new(Variant::TruncateTrace);
        l.averaging_start = Some(50);
        ExperimentConfig {
            schema_version: 1,
            name: String::new(),
            environment: EnvironmentSpec::Problem2 { middle_reward: Default::default() },
            learners: vec![l],
            stepsizes: vec![StepsizeSchedule::Constant { alpha: 0.01 }],
            run_length: 400,
            discard_prefix: 0,
            num_runs: 1,
            seeds: vec![3],
            budget: None,
            outputs: None,
            statistics: StatisticsRequest { timeline: true, ..Default::default() },
        }
    }

    #[test]
    fn csv_schema_and_byte_identical_reexport() {
        let c = cfg();
        let runs = run_experiment(&c).unwrap();
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let fa = export_all(&c, &runs, a.path(), Format::Csv).unwrap();
        let fb = export_all(&c, &runs, b.path(), Format::Csv).unwrap();
        assert_eq!(fa.len(), fb.len());
        for (x, y) in fa.iter().zip(&fb) {
            assert_eq!(std::fs::read(x).unwrap(), std::fs::read(y).unwrap());
        }
        let dist = fa.iter().find(|p| p.to_string_lossy().ends_with("_distance.csv")).unwrap();
        let text = std::fs::read_to_string(dist).unwrap();
        assert!(text.lines().any(|l| l == "t,alpha,dist,dist_avg"));
        assert!(text.starts_with("# schema_version=1"));
        let seg = fa.iter().find(|p| p.to_string_lossy().ends_with("_segments.csv")).unwrap();
        assert!(std::fs::read_to_string(seg).unwrap().lines().any(|l| l == "x,fraction,window"));
        let (al, d) = read_distance_csv(dist).unwrap();
        assert_eq!(d, runs[0].learners[0].dist);
        assert!(al.iter().all(|x| *x == 0.01));
    }

    #[test]
    fn json_export() {
        let c = cfg();
        let runs = run_experiment(&c).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let files = export_all(&c, &runs, dir.path(), Format::Json).unwrap();
        let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&files[0]).unwrap()).unwrap();
        assert_eq!(v["metadata"]["schema_version"], 1);
    }

    #[test]
    fn failed_write_leaves_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let blocker = dir.path().join("file");
        std::fs::write(&blocker, b"x").unwrap();
        assert!(write_atomic(&blocker.join("inner.csv"), b"data").is_err());
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
