use std::io::{Read, Write};

use super::FormatError;
use crate::experiment::{AggregateCurve, BatchResult, RewardCurve};

pub const TRIALS_HEADER: [&str; 7] = [
    "policy",
    "signal",
    "context_mode",
    "seed",
    "step",
    "normalized_time",
    "cumulative_fraction",
];

pub const AGGREGATE_HEADER: [&str; 8] = [
    "policy",
    "signal",
    "context_mode",
    "step",
    "normalized_time",
    "mean_fraction",
    "std_fraction",
    "n_trials",
];

/// Fixed six-decimal rendering used for every real-valued CSV column.
pub fn format_fraction(v: f64) -> String {
    format!("{v:.6}")
}

/// One row per (policy, trial, step), steps numbered from 1.
pub fn write_trials<W: Write>(out: W, batch: &BatchResult) -> Result<(), FormatError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TRIALS_HEADER)?;
    for o in &batch.outcomes {
        for (trial, curve) in o.trials.iter().zip(&o.curves) {
            let seed = trial.seed.to_string();
            for (t, (time, frac)) in curve
                .normalized_time
                .iter()
                .zip(&curve.fraction)
                .enumerate()
            {
                w.write_record([
                    o.policy.name(),
                    o.policy.signal_name(),
                    o.policy.context_name(),
                    &seed,
                    &(t + 1).to_string(),
                    &format_fraction(*time),
                    &format_fraction(*frac),
                ])?;
            }
        }
    }
    w.flush().map_err(|e| FormatError::Csv(e.to_string()))
}

/// `(policy, signal, context_mode)` naming one aggregated curve.
pub type CurveKey = (String, String, String);

pub fn write_aggregate<'a, W: Write>(
    out: W,
    curves: impl IntoIterator<Item = (CurveKey, &'a AggregateCurve)>,
) -> Result<(), FormatError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(AGGREGATE_HEADER)?;
    for ((policy, signal, ctx), agg) in curves {
        let n = agg.n_trials.to_string();
        for t in 0..agg.mean_fraction.len() {
            w.write_record([
                policy.as_str(),
                signal.as_str(),
                ctx.as_str(),
                &(t + 1).to_string(),
                &format_fraction(agg.normalized_time[t]),
                &format_fraction(agg.mean_fraction[t]),
                &format_fraction(agg.std_fraction[t]),
                &n,
            ])?;
        }
    }
    w.flush().map_err(|e| FormatError::Csv(e.to_string()))
}

impl BatchResult {
    pub fn aggregate_rows(&self) -> impl Iterator<Item = (CurveKey, &AggregateCurve)> {
        self.outcomes.iter().map(|o| {
            (
                (
                    o.policy.name().to_string(),
                    o.policy.signal_name().to_string(),
                    o.policy.context_name().to_string(),
                ),
                &o.aggregate,
            )
        })
    }
}

/// Rebuilds aggregate curves from a trials CSV, grouping by
/// `(policy, signal, context_mode)` and then by seed, in order of first
/// appearance.
pub fn aggregate_from_trials_csv<R: Read>(
    input: R,
) -> Result<Vec<(CurveKey, AggregateCurve)>, FormatError> {
    let mut rdr = csv::Reader::from_reader(input);
    let header = rdr.headers()?.clone();
    if header.iter().ne(TRIALS_HEADER) {
        return Err(FormatError::MalformedHeader(format!(
            "expected trials header {}, got {}",
            TRIALS_HEADER.join(","),
            header.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut groups: Vec<(CurveKey, Vec<(String, RewardCurve)>)> = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let num = |k: usize| -> Result<f64, FormatError> {
            rec[k].parse().map_err(|_| FormatError::MalformedRecord {
                line,
                msg: format!("bad {} '{}'", TRIALS_HEADER[k], &rec[k]),
            })
        };
        let key = (rec[0].to_string(), rec[1].to_string(), rec[2].to_string());
        let (time, frac) = (num(5)?, num(6)?);
        let gi = match groups.iter().position(|(k, _)| *k == key) {
            Some(g) => g,
            None => {
                groups.push((key, Vec::new()));
                groups.len() - 1
            }
        };
        let trials = &mut groups[gi].1;
        let ti = match trials.iter().position(|(s, _)| s == &rec[3]) {
            Some(t) => t,
            None => {
                trials.push((
                    rec[3].to_string(),
                    RewardCurve {
                        normalized_time: Vec::new(),
                        fraction: Vec::new(),
                    },
                ));
                trials.len() - 1
            }
        };
        let curve = &mut trials[ti].1;
        curve.normalized_time.push(time);
        curve.fraction.push(frac);
    }
    groups
        .into_iter()
        .map(|(key, trials)| {
            let curves: Vec<RewardCurve> = trials.into_iter().map(|(_, c)| c).collect();
            AggregateCurve::from_curves(&curves)
                .map(|agg| (key, agg))
                .map_err(|e| FormatError::Csv(e.to_string()))
        })
        .collect()
}
