//! Site-wide co-occurrence of target and context detections: per-cell patch
//! counts, normalised per axis, and an ordinary least-squares fit of context
//! on target.

use std::str::FromStr;

use crate::context::ContextBuffer;
use crate::detector::{self, ExemplarSet};
use crate::error::{Error, Result};
use crate::par::Execution;
use crate::planner::{ContextMode, Policy, SignalMode, Survey};
use crate::world::SiteGrid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Normalization {
    #[default]
    MinMax,
    ZScore,
}

impl FromStr for Normalization {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "minmax" | "min-max" => Ok(Normalization::MinMax),
            "zscore" | "z-score" => Ok(Normalization::ZScore),
            _ => Err(Error::Config(format!("unknown normalization '{s}'"))),
        }
    }
}

/// Which context buffer state to score cells with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BufferSource {
    /// State after a full-length running-context survey.
    #[default]
    Converged,
    /// State straight after seeding from the target image.
    Initial,
}

impl FromStr for BufferSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "converged" | "final" => Ok(BufferSource::Converged),
            "initial" | "init" => Ok(BufferSource::Initial),
            _ => Err(Error::Config(format!("unknown buffer source '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegressionResult {
    pub slope: f64,
    pub intercept: f64,
    pub n_points: usize,
    /// Pearson correlation; zero when the response is constant.
    pub r: f64,
}

/// Ordinary least squares of `y` on `x`.
pub fn least_squares(x: &[f64], y: &[f64]) -> Result<RegressionResult> {
    if x.len() != y.len() {
        return Err(Error::Argument("x and y differ in length".into()));
    }
    let n = x.len();
    if n < 2 {
        return Err(Error::DegenerateRegression(
            "need at least two points".into(),
        ));
    }
    let nf = n as f64;
    let mx = x.iter().sum::<f64>() / nf;
    let my = y.iter().sum::<f64>() / nf;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if sxx == 0.0 {
        return Err(Error::DegenerateRegression(
            "predictor is constant across all points".into(),
        ));
    }
    let slope = sxy / sxx;
    let r = if syy == 0.0 {
        0.0
    } else {
        (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0)
    };
    Ok(RegressionResult {
        slope,
        intercept: my - slope * mx,
        n_points: n,
        r,
    })
}

/// Rescales one axis. Constant axes map to all zeros.
pub fn normalize(values: &[f64], how: Normalization) -> Vec<f64> {
    if values.is_empty() {
        return Vec::new();
    }
    match how {
        Normalization::MinMax => {
            let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if hi > lo {
                values.iter().map(|v| (v - lo) / (hi - lo)).collect()
            } else {
                vec![0.0; values.len()]
            }
        }
        Normalization::ZScore => {
            let n = values.len() as f64;
            let mean = values.iter().sum::<f64>() / n;
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            if var > 0.0 {
                let sd = var.sqrt();
                values.iter().map(|v| (v - mean) / sd).collect()
            } else {
                vec![0.0; values.len()]
            }
        }
    }
}

/// Raw `(target, context)` patch counts for every cell, row-major, from a
/// joint assignment against both classes.
pub fn cell_scores(
    grid: &SiteGrid,
    target: &ExemplarSet,
    context: &ExemplarSet,
    exec: Execution,
) -> Result<Vec<(usize, usize)>> {
    grid.ensure_valid()?;
    exec.map_range(grid.len(), |i| {
        let c = detector::class_counts(&grid.cells[i].patches, &[target, context])?;
        Ok((c[0], c[1]))
    })
    .into_iter()
    .collect()
}

/// Normalised score pairs plus the fit.
#[derive(Debug, Clone, PartialEq)]
pub struct Cooccurrence {
    pub target: Vec<f64>,
    pub context: Vec<f64>,
    pub fit: RegressionResult,
}

pub fn cooccurrence_regression(
    grid: &SiteGrid,
    target: &ExemplarSet,
    context: &ExemplarSet,
    how: Normalization,
    exec: Execution,
) -> Result<Cooccurrence> {
    let raw = cell_scores(grid, target, context, exec)?;
    if raw.windows(2).all(|w| w[0] == w[1]) {
        return Err(Error::DegenerateRegression(
            "every cell has the same score pair".into(),
        ));
    }
    let t: Vec<f64> = raw.iter().map(|p| p.0 as f64).collect();
    let c: Vec<f64> = raw.iter().map(|p| p.1 as f64).collect();
    let t = normalize(&t, how);
    let c = normalize(&c, how);
    let fit = least_squares(&t, &c)?;
    Ok(Cooccurrence {
        target: t,
        context: c,
        fit,
    })
}

/// The context exemplar set to analyse with: either the freshly seeded
/// buffer, or the buffer left after a full-coverage-length target+context
/// survey with online updates.
pub fn analysis_context(
    survey: &Survey<'_>,
    source: BufferSource,
    seed: u64,
) -> Result<ExemplarSet> {
    let sigma = survey.settings().sigma_context;
    let buffer: ContextBuffer = match source {
        BufferSource::Initial => {
            let (_, buf) = survey.run_detailed(
                Policy::Greedy {
                    signal: SignalMode::TargetPlusEc,
                    context: ContextMode::Fixed,
                },
                1,
                seed,
            )?;
            buf
        }
        BufferSource::Converged => {
            let steps = survey.grid().len();
            let (_, buf) =
                survey.run_detailed(Policy::greedy(SignalMode::TargetPlusEc), steps, seed)?;
            buf
        }
    }
    .expect("context-bearing policy returns its buffer");
    buffer.as_exemplar_set(sigma)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn two_point_line() {
        let r = least_squares(&[0.0, 1.0], &[0.0, 1.0]).unwrap();
        assert_eq!(r.slope, 1.0);
        assert_eq!(r.intercept, 0.0);
        assert!((r.r - 1.0).abs() < 1e-12);
        assert_eq!(r.n_points, 2);
    }

    #[test]
    fn constant_response_has_zero_slope() {
        let r = least_squares(&[0.0, 0.5, 1.0], &[0.3, 0.3, 0.3]).unwrap();
        assert_eq!(r.slope, 0.0);
        assert_eq!(r.r, 0.0);
    }

    #[test]
    fn known_fit() {
        // y = 2x + 1 exactly.
        let x = [0.0, 1.0, 2.0, 3.0];
        let y = [1.0, 3.0, 5.0, 7.0];
        let r = least_squares(&x, &y).unwrap();
        assert!((r.slope - 2.0).abs() < 1e-12);
        assert!((r.intercept - 1.0).abs() < 1e-12);
        assert!((r.r - 1.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_inputs() {
        assert!(matches!(
            least_squares(&[1.0, 1.0], &[0.0, 2.0]),
            Err(Error::DegenerateRegression(_))
        ));
        assert!(least_squares(&[1.0], &[1.0]).is_err());
    }

    #[test]
    fn normalisations() {
        assert_eq!(
            normalize(&[2.0, 4.0, 3.0], Normalization::MinMax),
            vec![0.0, 1.0, 0.5]
        );
        assert_eq!(
            normalize(&[5.0, 5.0], Normalization::MinMax),
            vec![0.0, 0.0]
        );
        let z = normalize(&[1.0, 3.0], Normalization::ZScore);
        assert_eq!(z, vec![-1.0, 1.0]);
    }

    proptest! {
        #[test]
        fn slope_invariant_to_permutation_and_scale(
            pts in proptest::collection::vec((0u32..20, 0u32..20), 3..40),
            rot in 0usize..40,
            scale in 1u32..5,
        ) {
            let x: Vec<f64> = pts.iter().map(|p| p.0 as f64).collect();
            let y: Vec<f64> = pts.iter().map(|p| p.1 as f64).collect();
            prop_assume!(x.iter().any(|&v| v != x[0]));
            let base = least_squares(&normalize(&x, Normalization::MinMax), &normalize(&y, Normalization::MinMax)).unwrap();

            let mut xs = x.clone();
            let mut ys = y.clone();
            let k = rot % xs.len();
            xs.rotate_left(k);
            ys.rotate_left(k);
            let xs: Vec<f64> = xs.iter().map(|v| v * scale as f64).collect();
            let ys: Vec<f64> = ys.iter().map(|v| v * scale as f64).collect();
            let other = least_squares(&normalize(&xs, Normalization::MinMax), &normalize(&ys, Normalization::MinMax)).unwrap();
            prop_assert!((base.slope - other.slope).abs() < 1e-9);
            prop_assert!((base.r - other.r).abs() < 1e-9);
            prop_assert!(base.slope == 0.0 || base.slope.signum() == base.r.signum());
        }
    }
}
