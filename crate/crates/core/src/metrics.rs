//! Prediction-quality metrics and the paired significance test.

use std::fmt;

use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

/// Error quantities over one prediction set. Relative errors are fractions.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricsReport {
    pub mse: f64,
    pub rmse: f64,
    pub mae: f64,
    pub mape: f64,
    pub mare: f64,
    /// Error window at 90% coverage, when computed.
    pub ew90_h: Option<f64>,
    pub n: usize,
}

impl MetricsReport {
    /// Flat `key=value` rendering with percentages for the relative errors.
    pub fn to_text(&self) -> String {
        let ew = self.ew90_h.map_or_else(|| "nan".to_string(), |v| v.to_string());
        format!(
            "mse={}\nrmse={}\nmae={}\nmape_pct={}\nmare_pct={}\new90_h={}\nn={}\n",
            self.mse,
            self.rmse,
            self.mae,
            self.mape * 100.0,
            self.mare * 100.0,
            ew,
            self.n
        )
    }
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "MSE {:.4}  RMSE {:.4}  MAE {:.4}  MAPE {:.2}%  MARE {:.2}%",
            self.mse,
            self.rmse,
            self.mae,
            self.mape * 100.0,
            self.mare * 100.0
        )?;
        if let Some(ew) = self.ew90_h {
            write!(f, "  EW90 {ew:.4} h")?;
        }
        write!(f, "  (n={})", self.n)
    }
}

fn check_pairs(targets: &[f64], predictions: &[f64]) -> Result<()> {
    if targets.len() != predictions.len() {
        return Err(Error::contract(format!(
            "{} targets but {} predictions",
            targets.len(),
            predictions.len()
        )));
    }
    if targets.is_empty() {
        return Err(Error::contract("metrics need at least one sample"));
    }
    Ok(())
}

/// MSE, RMSE, MAE, MAPE and MARE; `ew90_h` is left empty.
pub fn compute_metrics(targets: &[f64], predictions: &[f64]) -> Result<MetricsReport> {
    check_pairs(targets, predictions)?;
    if let Some(y) = targets.iter().find(|&&y| !(y > 0.0)) {
        return Err(Error::Domain(format!("MAPE needs strictly positive targets, found {y}")));
    }
    let n = targets.len();
    let (mut se, mut ae, mut ape, mut sum_y) = (0.0, 0.0, 0.0, 0.0);
    for (&y, &f) in targets.iter().zip(predictions) {
        let e = (y - f).abs();
        se += e * e;
        ae += e;
        ape += e / y;
        sum_y += y;
    }
    let nf = n as f64;
    let mse = se / nf;
    Ok(MetricsReport {
        mse,
        rmse: mse.sqrt(),
        mae: ae / nf,
        mape: ape / nf,
        mare: ae / sum_y,
        ew90_h: None,
        n,
    })
}

/// [`compute_metrics`] plus the 90% error window.
pub fn full_report(targets: &[f64], predictions: &[f64]) -> Result<MetricsReport> {
    let mut r = compute_metrics(targets, predictions)?;
    let abs: Vec<f64> = targets.iter().zip(predictions).map(|(y, f)| (y - f).abs()).collect();
    r.ew90_h = Some(error_window(&abs, 0.9)?);
    Ok(r)
}

/// Rank `⌈p·N⌉` (1-based), ignoring round-off that lifts `p·N` just above an integer.
fn coverage_rank(n: usize, p: f64) -> usize {
    ((p * n as f64 * (1.0 - 1e-12)).ceil() as usize).clamp(1, n)
}

/// Smallest window containing at least a fraction `p` of the absolute errors:
/// the `⌈p·N⌉`-th smallest value.
pub fn error_window(abs_errors: &[f64], p: f64) -> Result<f64> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::contract(format!("coverage {p} outside (0, 1]")));
    }
    if abs_errors.is_empty() {
        return Err(Error::contract("error window needs at least one sample"));
    }
    if abs_errors.iter().any(|e| !(*e >= 0.0)) {
        return Err(Error::contract("absolute errors must be non-negative"));
    }
    let k = coverage_rank(abs_errors.len(), p);
    let mut work = abs_errors.to_vec();
    let (_, kth, _) = work.select_nth_unstable_by(k - 1, f64::total_cmp);
    Ok(*kth)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TTest {
    pub t: f64,
    pub df: usize,
    /// Two-sided p-value.
    pub p: f64,
    /// Differences had zero variance; `t` is infinite and `p` is 0 by convention.
    pub degenerate: bool,
}

/// Paired t-test on per-sample errors `a` and `b` (differences `a − b`).
pub fn paired_ttest(a: &[f64], b: &[f64]) -> Result<TTest> {
    if a.len() != b.len() {
        return Err(Error::contract(format!("paired samples differ in length: {} vs {}", a.len(), b.len())));
    }
    if a.len() < 2 {
        return Err(Error::contract("paired t-test needs at least two pairs"));
    }
    let n = a.len();
    let nf = n as f64;
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = diffs.iter().sum::<f64>() / nf;
    let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (nf - 1.0);
    let df = n - 1;
    if var == 0.0 {
        // Identical pairs carry no evidence; a constant non-zero shift is certain.
        let (t, p) = match mean.partial_cmp(&0.0) {
            Some(std::cmp::Ordering::Less) => (f64::NEG_INFINITY, 0.0),
            Some(std::cmp::Ordering::Greater) => (f64::INFINITY, 0.0),
            _ => (0.0, 1.0),
        };
        return Ok(TTest { t, df, p, degenerate: true });
    }
    let t = mean / (var / nf).sqrt();
    let dist = StudentsT::new(0.0, 1.0, df as f64).map_err(|e| Error::Numerical(e.to_string()))?;
    let p = (2.0 * dist.sf(t.abs())).min(1.0);
    Ok(TTest { t, df, p, degenerate: false })
}
