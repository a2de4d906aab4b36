//! Multi-seed aggregation into learning curves with normal confidence
//! intervals.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::residual::{EvalRecord, Record};

/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.96;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub x: f64,
    pub mean: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n: usize,
}

/// Mean and CI half-width `1.96 * s / sqrt(n)`. A single value has no
/// spread estimate, so its half-width is zero.
pub fn mean_ci(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, Z95 * (var / n as f64).sqrt())
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// Piecewise-linear interpolation of a curve sorted by x, held constant
/// beyond its ends.
pub fn interpolate(curve: &[(f64, f64)], x: f64) -> f64 {
    match curve {
        [] => f64::NAN,
        [(_, y)] => *y,
        _ => {
            if x <= curve[0].0 {
                return curve[0].1;
            }
            for w in curve.windows(2) {
                let ((x0, y0), (x1, y1)) = (w[0], w[1]);
                if x <= x1 {
                    return if x1 == x0 { y1 } else { y0 + (y1 - y0) * (x - x0) / (x1 - x0) };
                }
            }
            curve[curve.len() - 1].1
        }
    }
}

/// Aggregated curve plus whether it came from a single run, in which case
/// the CI collapses onto the mean.
#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    pub points: Vec<CurvePoint>,
    pub single_run: bool,
}

/// Interpolates every run onto `grid` and aggregates per grid point.
pub fn aggregate(runs: &[Vec<(f64, f64)>], grid: &[f64]) -> Result<Aggregate> {
    if runs.is_empty() {
        return Err(Error::Config("aggregate needs at least one run".into()));
    }
    let points = grid
        .iter()
        .map(|&x| {
            let ys: Vec<f64> = runs.iter().map(|r| interpolate(r, x)).collect();
            let (mean, half) = mean_ci(&ys);
            CurvePoint { x, mean, ci_low: mean - half, ci_high: mean + half, n: ys.len() }
        })
        .collect();
    Ok(Aggregate { points, single_run: runs.len() == 1 })
}

/// Union of all runs' x values, sorted.
pub fn union_grid(runs: &[Vec<(f64, f64)>]) -> Vec<f64> {
    let mut xs: Vec<f64> = runs.iter().flat_map(|r| r.iter().map(|p| p.0)).collect();
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    xs
}

pub fn write_csv<W: Write>(w: &mut W, points: &[CurvePoint]) -> Result<()> {
    writeln!(w, "x,mean,ci_low,ci_high,n")?;
    for p in points {
        writeln!(w, "{},{},{},{},{}", p.x, p.mean, p.ci_low, p.ci_high, p.n)?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Return,
    Success,
}

impl Metric {
    pub fn of(self, e: &EvalRecord) -> f64 {
        match self {
            Metric::Return => e.mean_return,
            Metric::Success => e.success_rate,
        }
    }
}

/// Evaluation records of one line-delimited record stream. Returns `None`
/// for an aborted run.
pub fn read_evals<R: BufRead>(r: R) -> Result<Option<Vec<EvalRecord>>> {
    let mut evals = Vec::new();
    for line in r.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<Record>(&line)? {
            Record::Eval(e) => evals.push(e),
            Record::Abort { .. } => return Ok(None),
            _ => {}
        }
    }
    Ok(Some(evals))
}

pub fn curve(evals: &[EvalRecord], metric: Metric) -> Vec<(f64, f64)> {
    evals.iter().map(|e| (e.step as f64, metric.of(e))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn identical_runs_have_zero_width() {
        let run = vec![(0.0, 1.0), (10.0, 3.0)];
        let a = aggregate(&[run.clone(), run.clone(), run], &[0.0, 5.0, 10.0]).unwrap();
        for p in &a.points {
            assert_eq!(p.ci_low, p.mean);
            assert_eq!(p.ci_high, p.mean);
        }
        assert_eq!(a.points[1].mean, 2.0);
    }

    #[test]
    fn two_point_ci_by_hand() {
        let a = aggregate(&[vec![(0.0, 0.0)], vec![(0.0, 2.0)]], &[0.0]).unwrap();
        let p = a.points[0];
        assert_eq!(p.mean, 1.0);
        let half = 1.96 * (2.0f64.sqrt() / 2.0f64.sqrt());
        assert!((p.ci_high - (1.0 + half)).abs() < 1e-12);
        assert!((p.ci_low - (1.0 - half)).abs() < 1e-12);
        assert!(!a.single_run);
    }

    #[test]
    fn single_run_is_flagged() {
        let a = aggregate(&[vec![(0.0, 4.0)]], &[0.0]).unwrap();
        assert!(a.single_run);
        assert_eq!((a.points[0].ci_low, a.points[0].mean, a.points[0].ci_high), (4.0, 4.0, 4.0));
        assert!(aggregate(&[], &[0.0]).is_err());
    }

    #[test]
    fn interpolation_is_linear_and_clamped() {
        let c = [(0.0, 0.0), (10.0, 10.0), (20.0, 0.0)];
        assert_eq!(interpolate(&c, 5.0), 5.0);
        assert_eq!(interpolate(&c, 15.0), 5.0);
        assert_eq!(interpolate(&c, -3.0), 0.0);
        assert_eq!(interpolate(&c, 30.0), 0.0);
    }

    #[test]
    fn ci_covers_the_mean_about_95_percent() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let dist = Normal::new(3.0, 2.0).unwrap();
        let trials = 1000;
        let covered = (0..trials)
            .filter(|_| {
                let xs: Vec<f64> = (0..10).map(|_| dist.sample(&mut rng)).collect();
                let (m, h) = mean_ci(&xs);
                (m - h..=m + h).contains(&3.0)
            })
            .count();
        // With n = 10 the normal quantile under-covers slightly (t would be
        // 2.26), so the expected rate is about 0.92.
        let rate = covered as f64 / trials as f64;
        assert!((0.89..0.96).contains(&rate), "coverage {rate}");
    }

    #[test]
    fn median_cases() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert!(median(&[]).is_nan());
    }

    #[test]
    fn csv_has_the_documented_header() {
        let mut out = Vec::new();
        write_csv(&mut out, &[CurvePoint { x: 0.0, mean: 1.0, ci_low: 0.5, ci_high: 1.5, n: 2 }]).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "x,mean,ci_low,ci_high,n\n0,1,0.5,1.5,2\n");
    }
}
