//! Distance statistics over logged iterate series.

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{EtdError, Result};
use crate::scalar::Real;

/// `‖θ − θ*‖₂ / ‖θ*‖₂`.
pub fn normalized_distance<T: Real>(theta: &nalgebra::DVector<T>, theta_star: &nalgebra::DVector<T>) -> Result<f64> {
    let norm = theta_star.norm().as_f64();
    if norm == 0.0 {
        return Err(EtdError::InvalidArgument("θ* is zero; normalized distance undefined".into()));
    }
    if theta.len() != theta_star.len() {
        return Err(EtdError::InvalidArgument(format!("length {} vs {}", theta.len(), theta_star.len())));
    }
    Ok((theta - theta_star).norm().as_f64() / norm)
}

/// `n` logarithmically spaced points in `[lo, hi]`.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => {
            let (a, b) = (lo.ln(), hi.ln());
            (0..n)
                .map(|k| {
                    if k == 0 {
                        lo
                    } else if k + 1 == n {
                        hi
                    } else {
                        (a + (b - a) * k as f64 / (n - 1) as f64).exp()
                    }
                })
                .collect()
        }
    }
}

/// 50 points between 0.005 and 2.
pub fn default_x_grid() -> Vec<f64> {
    log_grid(0.005, 2.0, 50)
}

/// Maxima of every window of `len` consecutive values.
pub fn sliding_max(series: &[f64], len: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(series.len().saturating_sub(len) + 1);
    let mut q: VecDeque<usize> = VecDeque::new();
    for (i, &x) in series.iter().enumerate() {
        while q.back().is_some_and(|&j| series[j] <= x) {
            q.pop_back();
        }
        q.push_back(i);
        if q[0] + len <= i {
            q.pop_front();
        }
        if i + 1 >= len {
            out.push(series[q[0]]);
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentCurve {
    pub window: usize,
    /// `(x, fraction)` pairs.
    pub points: Vec<(f64, f64)>,
}

impl SegmentCurve {
    pub fn fraction_at(&self, x: f64) -> Option<f64> {
        self.points.iter().find(|(px, _)| *px == x).map(|p| p.1)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("x,fraction,window\n");
        for (x, f) in &self.points {
            s.push_str(&format!("{x},{f},{}\n", self.window));
        }
        s
    }
}

/// Fraction of the sliding windows of length `window` whose maximum exceeds
/// each `x`. Windows must fit inside the series.
pub fn segment_failure_fraction(series: &[f64], window: usize, x_grid: &[f64]) -> Result<SegmentCurve> {
    if window == 0 {
        return Err(EtdError::InvalidArgument("window length must be at least 1".into()));
    }
    if series.len() < window {
        return Err(EtdError::InvalidArgument(format!(
            "series of length {} is shorter than the window {window}",
            series.len()
        )));
    }
    let mut maxima = sliding_max(series, window);
    maxima.sort_by(|a, b| a.total_cmp(b));
    let n = maxima.len() as f64;
    let points = x_grid
        .iter()
        .map(|&x| {
            let inside = maxima.partition_point(|m| *m <= x);
            (x, (maxima.len() - inside) as f64 / n)
        })
        .collect();
    Ok(SegmentCurve { window, points })
}

/// Median with the even-count convention: mean of the two central values.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimelineBar {
    pub x: u64,
    pub median: f64,
    pub min: f64,
    pub max: f64,
    pub runs: usize,
}

/// Maximum distance within each continuous-time segment: the `x`-th segment
/// holds the iterates `t` with `Σ_{k≤t} α_k ∈ [x−1, x)`.
pub fn segment_maxima(alphas: &[f64], dists: &[f64]) -> BTreeMap<u64, f64> {
    let mut out = BTreeMap::new();
    let mut clock = 0.0;
    for (a, d) in alphas.iter().zip(dists) {
        clock += a;
        let x = clock.floor() as u64 + 1;
        let e = out.entry(x).or_insert(f64::NEG_INFINITY);
        if *d > *e {
            *e = *d;
        }
    }
    out
}

/// Median/min/max across runs of the per-segment maxima.
pub fn timeline_error_bars(runs: &[(Vec<f64>, Vec<f64>)]) -> Vec<TimelineBar> {
    let mut by_x: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
    for (alphas, dists) in runs {
        for (x, m) in segment_maxima(alphas, dists) {
            by_x.entry(x).or_default().push(m);
        }
    }
    by_x.into_iter()
        .map(|(x, v)| TimelineBar {
            x,
            median: median(&v).unwrap_or(f64::NAN),
            min: v.iter().copied().fold(f64::INFINITY, f64::min),
            max: v.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            runs: v.len(),
        })
        .collect()
}

pub fn timeline_csv(bars: &[TimelineBar]) -> String {
    let mut s = String::from("x,median,min,max,runs\n");
    for b in bars {
        s.push_str(&format!("{},{},{},{},{}\n", b.x, b.median, b.min, b.max, b.runs));
    }
    s
}

/// Pearson correlation of two equally long samples.
pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return None;
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return None;
    }
    Some(sab / (saa * sbb).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;

    #[test]
    fn distance_examples() {
        let ts = DVector::from_vec(vec![1.0, -2.0, 2.0]);
        assert_eq!(normalized_distance(&ts, &ts).unwrap(), 0.0);
        assert_eq!(normalized_distance(&DVector::zeros(3), &ts).unwrap(), 1.0);
        assert_eq!(normalized_distance(&(&ts * 2.0), &ts).unwrap(), 1.0);
        assert!(normalized_distance(&ts, &DVector::zeros(3)).is_err());
    }

    #[test]
    fn segment_examples() {
        let c = segment_failure_fraction(&vec![0.05; 500], 100, &[0.1]).unwrap();
        assert_eq!(c.points, vec![(0.1, 0.0)]);
        let c = segment_failure_fraction(&[0.2, 0.05, 0.05, 0.05], 2, &[0.1]).unwrap();
        assert!((c.points[0].1 - 1.0 / 3.0).abs() < 1e-15);
        let s = [0.3, 0.01, 0.2, 0.05];
        let c = segment_failure_fraction(&s, 1, &[0.1]).unwrap();
        assert_eq!(c.points[0].1, 0.5);
        assert!(segment_failure_fraction(&s, 5, &[0.1]).is_err());
        assert!(segment_failure_fraction(&s, 0, &[0.1]).is_err());
    }

    #[test]
    fn sliding_max_matches_naive() {
        let s: Vec<f64> = (0..200).map(|k| ((k * 37 % 101) as f64).sin()).collect();
        for len in [1, 2, 7, 50, 200] {
            let naive: Vec<f64> = s.windows(len).map(|w| w.iter().copied().fold(f64::MIN, f64::max)).collect();
            assert_eq!(sliding_max(&s, len), naive);
        }
    }

    #[test]
    fn timeline_examples() {
        let bars = timeline_error_bars(&[(vec![0.1; 50], vec![0.3; 50])]);
        assert_eq!(bars.len(), 5);
        assert!(bars.iter().all(|b| b.median == 0.3 && b.min == 0.3 && b.max == 0.3));
        let bars = timeline_error_bars(&[(vec![0.5], vec![0.2]), (vec![0.5], vec![0.4])]);
        assert_eq!(bars[0].x, 1);
        assert!((bars[0].median - 0.3).abs() < 1e-15);
        assert_eq!((bars[0].min, bars[0].max), (0.2, 0.4));
    }

    #[test]
    fn grid_and_median() {
        let g = default_x_grid();
        assert_eq!(g.len(), 50);
        assert!((g[0] - 0.005).abs() < 1e-15 && g[49] == 2.0);
        assert!(g.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), Some(2.5));
    }

    #[test]
    fn pearson_basic() {
        assert!((pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.5]).unwrap() - 1.0).abs() < 1e-2);
        assert!(pearson(&[1.0, 1.0], &[1.0, 2.0]).is_none());
    }
}
