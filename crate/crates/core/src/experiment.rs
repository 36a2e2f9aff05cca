//! Seeded trial batches, reward-curve normalisation and aggregation.
//!
//! By default trial `i` of every policy in a batch runs with
//! `derive_seed(base, i)`, so all policies start their trial `i` from the
//! same cell. Independent seeding gives each policy its own seed sequence.

use crate::error::{Error, Result};
use crate::par::Execution;
use crate::planner::{Policy, Survey};

pub use crate::planner::TrialResult;

/// Counter-based seed for trial `index`: the SplitMix64 output for state
/// `base + (index + 1) * GOLDEN`. Any trial can be reproduced in isolation.
pub fn derive_seed(base: u64, index: u64) -> u64 {
    const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;
    let mut z = base.wrapping_add(index.wrapping_add(1).wrapping_mul(GOLDEN));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Percent of the full-coverage budget used after `step` (0-based) steps.
pub fn normalized_time(step: usize, cells: usize) -> f64 {
    100.0 * (step + 1) as f64 / cells as f64
}

/// Fraction of all target area collected, per step.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardCurve {
    pub normalized_time: Vec<f64>,
    pub fraction: Vec<f64>,
}

impl RewardCurve {
    /// Smallest normalised time at which the fraction reaches `q`, `None`
    /// when it never does.
    pub fn time_to_fraction(&self, q: f64) -> Option<f64> {
        time_to_fraction(&self.normalized_time, &self.fraction, q)
    }

    /// Mean collected fraction over the trial; 1.0 means everything was
    /// collected on the first step.
    pub fn area_under_curve(&self) -> f64 {
        if self.fraction.is_empty() {
            return 0.0;
        }
        self.fraction.iter().sum::<f64>() / self.fraction.len() as f64
    }

    pub fn final_fraction(&self) -> f64 {
        self.fraction.last().copied().unwrap_or(0.0)
    }
}

pub fn reward_curve(trial: &TrialResult, total: u64, cells: usize) -> Result<RewardCurve> {
    if total == 0 {
        return Err(Error::DegenerateSite(
            "site has no ground-truth target area".into(),
        ));
    }
    if cells == 0 {
        return Err(Error::DegenerateSite("site has no cells".into()));
    }
    Ok(RewardCurve {
        normalized_time: (0..trial.steps())
            .map(|t| normalized_time(t, cells))
            .collect(),
        fraction: trial
            .cumulative_area
            .iter()
            .map(|&a| a as f64 / total as f64)
            .collect(),
    })
}

/// Pointwise mean and sample standard deviation over trials.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateCurve {
    pub normalized_time: Vec<f64>,
    pub mean_fraction: Vec<f64>,
    pub std_fraction: Vec<f64>,
    pub n_trials: usize,
}

impl AggregateCurve {
    /// Aggregates equal-length curves. Standard deviation uses `n - 1` and
    /// is zero for a single trial.
    pub fn from_curves(curves: &[RewardCurve]) -> Result<Self> {
        let first = curves
            .first()
            .ok_or_else(|| Error::Argument("no curves to aggregate".into()))?;
        let len = first.fraction.len();
        if curves.iter().any(|c| c.fraction.len() != len) {
            return Err(Error::Argument("curves differ in length".into()));
        }
        let n = curves.len() as f64;
        let mut mean_fraction = Vec::with_capacity(len);
        let mut std_fraction = Vec::with_capacity(len);
        for t in 0..len {
            let mean = curves.iter().map(|c| c.fraction[t]).sum::<f64>() / n;
            let std = if curves.len() > 1 {
                let ss: f64 = curves.iter().map(|c| (c.fraction[t] - mean).powi(2)).sum();
                (ss / (n - 1.0)).sqrt()
            } else {
                0.0
            };
            mean_fraction.push(mean);
            std_fraction.push(std);
        }
        Ok(Self {
            normalized_time: first.normalized_time.clone(),
            mean_fraction,
            std_fraction,
            n_trials: curves.len(),
        })
    }

    pub fn time_to_fraction(&self, q: f64) -> Option<f64> {
        time_to_fraction(&self.normalized_time, &self.mean_fraction, q)
    }
}

fn time_to_fraction(times: &[f64], fractions: &[f64], q: f64) -> Option<f64> {
    fractions.iter().position(|&f| f >= q).map(|i| times[i])
}

/// Median of per-trial times with `None` (never reached) ranked last.
/// Returns `None` when the median itself is unreached.
pub fn median_time(times: &[Option<f64>]) -> Option<f64> {
    if times.is_empty() {
        return None;
    }
    let mut v: Vec<f64> = times.iter().map(|t| t.unwrap_or(f64::INFINITY)).collect();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    let m = if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    };
    m.is_finite().then_some(m)
}

/// All trials of one policy within a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyOutcome {
    pub policy: Policy,
    pub trials: Vec<TrialResult>,
    pub curves: Vec<RewardCurve>,
    pub aggregate: AggregateCurve,
}

impl PolicyOutcome {
    pub fn times_to_fraction(&self, q: f64) -> Vec<Option<f64>> {
        self.curves.iter().map(|c| c.time_to_fraction(q)).collect()
    }

    pub fn median_time_to_fraction(&self, q: f64) -> Option<f64> {
        median_time(&self.times_to_fraction(q))
    }

    pub fn aucs(&self) -> Vec<f64> {
        self.curves
            .iter()
            .map(RewardCurve::area_under_curve)
            .collect()
    }

    pub fn final_fractions(&self) -> Vec<f64> {
        self.curves
            .iter()
            .map(RewardCurve::final_fraction)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchResult {
    pub base_seed: u64,
    pub steps: usize,
    pub cells: usize,
    pub outcomes: Vec<PolicyOutcome>,
}

impl BatchResult {
    pub fn get(&self, policy: &Policy) -> Option<&PolicyOutcome> {
        self.outcomes.iter().find(|o| &o.policy == policy)
    }
}

/// How trial seeds relate across the policies of a batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Seeding {
    /// Trial `i` uses the same seed for every policy.
    #[default]
    Paired,
    /// Policy `k` (by position in the batch) draws from its own sequence.
    Independent,
}

impl Seeding {
    pub fn trial_seed(self, base: u64, policy_index: usize, trial: usize) -> u64 {
        match self {
            Seeding::Paired => derive_seed(base, trial as u64),
            Seeding::Independent => {
                let stream = derive_seed(base, u64::MAX - policy_index as u64);
                derive_seed(stream, trial as u64)
            }
        }
    }
}

/// Runs `n_trials` paired trials of every policy for `steps` steps.
pub fn run_batch(
    survey: &Survey<'_>,
    policies: &[Policy],
    n_trials: usize,
    steps: usize,
    base_seed: u64,
    exec: Execution,
) -> Result<BatchResult> {
    run_batch_seeded(
        survey,
        policies,
        n_trials,
        steps,
        base_seed,
        Seeding::Paired,
        exec,
    )
}

/// [`run_batch`] with an explicit seeding scheme.
pub fn run_batch_seeded(
    survey: &Survey<'_>,
    policies: &[Policy],
    n_trials: usize,
    steps: usize,
    base_seed: u64,
    seeding: Seeding,
    exec: Execution,
) -> Result<BatchResult> {
    if n_trials == 0 {
        return Err(Error::Config("n_trials must be at least 1".into()));
    }
    let grid = survey.grid();
    let total = grid.total_gt_area;
    if total == 0 {
        return Err(Error::DegenerateSite(
            "site has no ground-truth target area".into(),
        ));
    }
    let jobs = policies.len() * n_trials;
    let results = exec.map_range(jobs, |job| {
        let (k, trial) = (job / n_trials, job % n_trials);
        let policy = policies[k];
        let seed = seeding.trial_seed(base_seed, k, trial);
        survey.run(policy, steps, seed)
    });
    let mut results = results.into_iter();
    let mut outcomes = Vec::with_capacity(policies.len());
    for &policy in policies {
        let trials = results
            .by_ref()
            .take(n_trials)
            .collect::<Result<Vec<_>>>()?;
        let curves = trials
            .iter()
            .map(|t| reward_curve(t, total, grid.len()))
            .collect::<Result<Vec<_>>>()?;
        let aggregate = AggregateCurve::from_curves(&curves)?;
        outcomes.push(PolicyOutcome {
            policy,
            trials,
            curves,
            aggregate,
        });
    }
    Ok(BatchResult {
        base_seed,
        steps,
        cells: grid.len(),
        outcomes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::CellIndex;

    fn trial(areas: Vec<u64>) -> TrialResult {
        TrialResult {
            policy: Policy::RandomWalk,
            seed: 0,
            visited: vec![CellIndex::new(0, 0); areas.len()],
            cumulative_area: areas,
            buffer_updates: 0,
        }
    }

    #[test]
    fn seeds_are_distinct_and_stable() {
        let seeds: Vec<_> = (0..1000).map(|i| derive_seed(42, i)).collect();
        let mut sorted = seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), 1000);
        assert_eq!(derive_seed(42, 7), seeds[7]);
        assert_ne!(derive_seed(43, 7), seeds[7]);
    }

    #[test]
    fn curve_normalisation() {
        let c = reward_curve(&trial(vec![0, 5, 10, 10]), 10, 4).unwrap();
        assert_eq!(c.fraction, vec![0.0, 0.5, 1.0, 1.0]);
        assert_eq!(c.normalized_time, vec![25.0, 50.0, 75.0, 100.0]);
        assert_eq!(c.time_to_fraction(0.5), Some(50.0));
        assert_eq!(c.time_to_fraction(1.0), Some(75.0));
        assert_eq!(c.area_under_curve(), 0.625);
    }

    #[test]
    fn zero_curve_never_reaches() {
        let c = reward_curve(&trial(vec![0, 0, 0]), 10, 3).unwrap();
        assert!(c.fraction.iter().all(|&f| f == 0.0));
        assert_eq!(c.time_to_fraction(0.5), None);
    }

    #[test]
    fn single_cell_site() {
        let c = reward_curve(&trial(vec![7]), 7, 1).unwrap();
        assert_eq!(c.fraction, vec![1.0]);
        assert_eq!(c.normalized_time, vec![100.0]);
    }

    #[test]
    fn zero_total_is_degenerate() {
        assert!(matches!(
            reward_curve(&trial(vec![0]), 0, 1),
            Err(Error::DegenerateSite(_))
        ));
    }

    #[test]
    fn single_trial_has_zero_std() {
        let c = reward_curve(&trial(vec![1, 2, 3]), 3, 3).unwrap();
        let agg = AggregateCurve::from_curves(&[c]).unwrap();
        assert_eq!(agg.std_fraction, vec![0.0; 3]);
        assert_eq!(agg.n_trials, 1);
    }

    #[test]
    fn sample_std() {
        let a = reward_curve(&trial(vec![0, 2]), 4, 2).unwrap();
        let b = reward_curve(&trial(vec![2, 4]), 4, 2).unwrap();
        let agg = AggregateCurve::from_curves(&[a, b]).unwrap();
        assert_eq!(agg.mean_fraction, vec![0.25, 0.75]);
        // Two points 0.5 apart: sample std = 0.5 / sqrt(2).
        for s in agg.std_fraction {
            assert!((s - 0.5 / 2f64.sqrt()).abs() < 1e-15);
        }
    }

    #[test]
    fn median_with_unreached() {
        assert_eq!(median_time(&[Some(3.0), None, Some(1.0)]), Some(3.0));
        assert_eq!(median_time(&[Some(3.0), None, None]), None);
        assert_eq!(median_time(&[Some(2.0), Some(4.0)]), Some(3.0));
    }

    #[test]
    fn time_to_fraction_is_monotone_in_q() {
        let c = reward_curve(&trial(vec![1, 1, 4, 6, 9, 10]), 10, 6).unwrap();
        let mut last = 0.0;
        for q in [0.05, 0.1, 0.2, 0.4, 0.5, 0.6, 0.9, 1.0] {
            let t = c.time_to_fraction(q).unwrap();
            assert!(t >= last);
            last = t;
        }
    }

    fn small_world() -> (crate::world::SiteGrid, crate::synthworld::SynthReport) {
        let params = crate::synthworld::SynthParams {
            rows: 12,
            cols: 12,
            cluster_radius: 2.0,
            target_cell_fraction: 0.05,
            seed: 6,
            ..Default::default()
        };
        crate::synthworld::generate_world(&params).unwrap()
    }

    #[test]
    fn batch_seeding_and_execution() {
        use crate::planner::{PlannerSettings, SignalMode};
        let (grid, report) = small_world();
        let t = report.exemplar_set(&grid, 0.3).unwrap();
        let survey = Survey::new(
            &grid,
            &t,
            report.target_image(&grid),
            PlannerSettings::default(),
        )
        .unwrap();
        let policies = [
            Policy::lawnmower(),
            Policy::greedy(SignalMode::Target),
            Policy::greedy(SignalMode::TargetPlusEc),
            Policy::RandomWalk,
        ];
        let par = run_batch(&survey, &policies, 6, 40, 5, Execution::Parallel).unwrap();
        let seq = run_batch(&survey, &policies, 6, 40, 5, Execution::Sequential).unwrap();
        assert_eq!(par, seq);

        let lawn = par.get(&Policy::lawnmower()).unwrap();
        assert!(lawn.aggregate.std_fraction.iter().all(|&s| s == 0.0));
        for i in 0..6 {
            let starts: Vec<_> = par.outcomes[1..]
                .iter()
                .map(|o| o.trials[i].start())
                .collect();
            assert!(starts.windows(2).all(|w| w[0] == w[1]));
            assert_eq!(par.outcomes[1].trials[i].seed, derive_seed(5, i as u64));
        }
        for o in &par.outcomes {
            assert!(o
                .aggregate
                .mean_fraction
                .iter()
                .all(|&m| (0.0..=1.0).contains(&m)));
            assert!(o.aggregate.std_fraction.iter().all(|&s| s >= 0.0));
        }

        let ind = run_batch_seeded(
            &survey,
            &policies,
            6,
            40,
            5,
            Seeding::Independent,
            Execution::Parallel,
        )
        .unwrap();
        let differing = (0..6)
            .filter(|&i| ind.outcomes[1].trials[i].start() != ind.outcomes[2].trials[i].start())
            .count();
        assert!(differing > 0);
        assert_ne!(
            ind.outcomes[1].trials[0].seed,
            ind.outcomes[2].trials[0].seed
        );
    }

    #[test]
    fn batch_rejects_degenerate_inputs() {
        use crate::planner::PlannerSettings;
        let (grid, report) = small_world();
        let t = report.exemplar_set(&grid, 0.3).unwrap();
        let survey = Survey::new(
            &grid,
            &t,
            report.target_image(&grid),
            PlannerSettings::default(),
        )
        .unwrap();
        assert!(run_batch(
            &survey,
            &[Policy::RandomWalk],
            0,
            5,
            0,
            Execution::Sequential
        )
        .is_err());
    }
}
