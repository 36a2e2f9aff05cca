//! Survey policies: the greedy myopic policy driven by detection signals, a
//! signal-free random walk control, and the boustrophedon lawnmower.
//!
//! A trial owns its visited set, its context buffer and two random streams
//! derived from the trial seed: one for movement (start cell, fallbacks,
//! random tie-breaks) and one for buffer sampling. Keeping them apart means
//! modes that never touch the buffer still walk the same way for the same
//! seed.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::context::{BufferParams, ContextBuffer};
use crate::detector::{self, ExemplarSet, DEFAULT_CONTEXT_THRESHOLD};
use crate::error::{Error, Result};
use crate::world::{neighbors8_in, CellIndex, CellObservation, PatchEmbedding, SiteGrid};
use crate::TARGET_LABEL;

/// Which score drives the greedy choice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SignalMode {
    Target,
    Ec,
    TargetPlusEc,
    Scalar,
    ScalarPlusTarget,
}

impl SignalMode {
    pub const ALL: [SignalMode; 5] = [
        SignalMode::Target,
        SignalMode::Ec,
        SignalMode::TargetPlusEc,
        SignalMode::Scalar,
        SignalMode::ScalarPlusTarget,
    ];

    pub fn uses_context(self) -> bool {
        matches!(self, SignalMode::Ec | SignalMode::TargetPlusEc)
    }

    pub fn uses_scalar(self) -> bool {
        matches!(self, SignalMode::Scalar | SignalMode::ScalarPlusTarget)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SignalMode::Target => "target",
            SignalMode::Ec => "ec",
            SignalMode::TargetPlusEc => "target+ec",
            SignalMode::Scalar => "scalar",
            SignalMode::ScalarPlusTarget => "scalar+target",
        }
    }
}

impl fmt::Display for SignalMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SignalMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['_', '-'], "+").as_str() {
            "target" => Ok(SignalMode::Target),
            "ec" | "context" => Ok(SignalMode::Ec),
            "target+ec" | "ec+target" => Ok(SignalMode::TargetPlusEc),
            "scalar" | "segmentation" => Ok(SignalMode::Scalar),
            "scalar+target" | "target+scalar" => Ok(SignalMode::ScalarPlusTarget),
            _ => Err(Error::Config(format!("unknown signal mode '{s}'"))),
        }
    }
}

/// Whether the context buffer learns online or stays at its initial contents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum ContextMode {
    #[default]
    Running,
    Fixed,
}

impl ContextMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ContextMode::Running => "running",
            ContextMode::Fixed => "fixed",
        }
    }
}

impl FromStr for ContextMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "running" => Ok(ContextMode::Running),
            "fixed" => Ok(ContextMode::Fixed),
            _ => Err(Error::Config(format!("unknown context mode '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Corner {
    #[default]
    TopLeft,
    TopRight,
    BottomLeft,
    BottomRight,
}

impl Corner {
    pub const ALL: [Corner; 4] = [
        Corner::TopLeft,
        Corner::TopRight,
        Corner::BottomLeft,
        Corner::BottomRight,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Policy {
    Greedy {
        signal: SignalMode,
        context: ContextMode,
    },
    /// Greedy movement with every score zero: a seeded walk over unvisited
    /// neighbours. Serves as the no-information control.
    RandomWalk,
    /// `corner: None` draws one of the four corners per trial.
    Lawnmower { corner: Option<Corner> },
}

impl Policy {
    pub fn greedy(signal: SignalMode) -> Self {
        Policy::Greedy {
            signal,
            context: ContextMode::Running,
        }
    }

    pub fn lawnmower() -> Self {
        Policy::Lawnmower {
            corner: Some(Corner::TopLeft),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Policy::Greedy { .. } => "greedy",
            Policy::RandomWalk => "random",
            Policy::Lawnmower { .. } => "lawnmower",
        }
    }

    pub fn signal_name(&self) -> &'static str {
        match self {
            Policy::Greedy { signal, .. } => signal.as_str(),
            _ => "none",
        }
    }

    pub fn context_name(&self) -> &'static str {
        match self {
            Policy::Greedy { signal, context } if signal.uses_context() => context.as_str(),
            _ => "none",
        }
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Policy::Greedy { signal, context } if signal.uses_context() => {
                write!(f, "greedy[{signal},{}]", context.as_str())
            }
            Policy::Greedy { signal, .. } => write!(f, "greedy[{signal}]"),
            other => f.write_str(other.name()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TieBreak {
    /// First neighbour in row-major order.
    #[default]
    RowMajor,
    /// Uniform among tied neighbours, drawn from the movement stream.
    Random,
}

/// Knobs shared by every greedy trial.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlannerSettings {
    pub sigma_context: f64,
    pub buffer: BufferParams,
    pub tie_break: TieBreak,
    /// Weight of the normalised scalar channel in `ScalarPlusTarget`.
    pub scalar_weight: f64,
}

impl Default for PlannerSettings {
    fn default() -> Self {
        Self {
            sigma_context: DEFAULT_CONTEXT_THRESHOLD,
            buffer: BufferParams::default(),
            tie_break: TieBreak::RowMajor,
            scalar_weight: 1.0,
        }
    }
}

/// Site-wide min-max scaling of the scalar channel onto
/// `[0, mean patches per cell]`, putting it on the same footing as patch counts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalarScale {
    pub min: f64,
    pub max: f64,
    pub span: f64,
}

impl ScalarScale {
    /// `None` when some cell carries no scalar signal.
    pub fn from_grid(grid: &SiteGrid) -> Option<Self> {
        let mut min = f64::INFINITY;
        let mut max = f64::NEG_INFINITY;
        for cell in &grid.cells {
            let s = cell.scalar_signal?;
            min = min.min(s);
            max = max.max(s);
        }
        Some(Self {
            min,
            max,
            span: grid.mean_patches_per_cell(),
        })
    }

    /// A constant channel maps to zero everywhere.
    pub fn normalize(&self, value: f64) -> f64 {
        if self.max > self.min {
            (value - self.min) / (self.max - self.min) * self.span
        } else {
            0.0
        }
    }
}

/// Greedy score of one cell under `mode`.
///
/// Patch counts come from a joint target/context assignment whenever a
/// context set is supplied, otherwise from the target class alone.
pub fn score_cell(
    cell: &CellObservation,
    target: &ExemplarSet,
    context: Option<&ExemplarSet>,
    mode: SignalMode,
    scalar: Option<&ScalarScale>,
    scalar_weight: f64,
) -> Result<f64> {
    if mode.uses_context() && context.is_none() {
        return Err(Error::Config(format!(
            "signal '{mode}' needs a context exemplar set"
        )));
    }
    let counts = || -> Result<(usize, usize)> {
        match context {
            Some(ctx) => {
                let c = detector::class_counts(&cell.patches, &[target, ctx])?;
                Ok((c[0], c[1]))
            }
            None => Ok((detector::class_counts(&cell.patches, &[target])?[0], 0)),
        }
    };
    let scalar_value = || {
        cell.scalar_signal.ok_or_else(|| {
            Error::Config(format!(
                "signal '{mode}' needs a scalar channel on every cell"
            ))
        })
    };
    Ok(match mode {
        SignalMode::Target => counts()?.0 as f64,
        SignalMode::Ec => counts()?.1 as f64,
        SignalMode::TargetPlusEc => {
            let (t, c) = counts()?;
            (t + c) as f64
        }
        SignalMode::Scalar => scalar_value()?,
        SignalMode::ScalarPlusTarget => {
            let scale = scalar.ok_or_else(|| Error::Config("scalar scale missing".into()))?;
            counts()?.0 as f64 + scalar_weight * scale.normalize(scalar_value()?)
        }
    })
}

/// Boustrophedon coverage: sweep each row, alternating direction, stepping
/// one row toward the far edge between sweeps.
pub fn lawnmower_path(rows: usize, cols: usize, start: Corner) -> Vec<CellIndex> {
    let mut out = Vec::with_capacity(rows * cols);
    for i in 0..rows {
        let row = match start {
            Corner::TopLeft | Corner::TopRight => i,
            Corner::BottomLeft | Corner::BottomRight => rows - 1 - i,
        };
        let left_first = matches!(start, Corner::TopLeft | Corner::BottomLeft) == (i % 2 == 0);
        if left_first {
            out.extend((0..cols).map(|c| CellIndex::new(row, c)));
        } else {
            out.extend((0..cols).rev().map(|c| CellIndex::new(row, c)));
        }
    }
    out
}

/// One policy rollout.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialResult {
    pub policy: Policy,
    pub seed: u64,
    pub visited: Vec<CellIndex>,
    /// Ground-truth target pixels collected up to and including each step.
    pub cumulative_area: Vec<u64>,
    /// Number of entries on which the context buffer fired.
    pub buffer_updates: usize,
}

impl TrialResult {
    pub fn steps(&self) -> usize {
        self.visited.len()
    }

    pub fn start(&self) -> CellIndex {
        self.visited[0]
    }

    pub fn final_area(&self) -> u64 {
        self.cumulative_area.last().copied().unwrap_or(0)
    }
}

/// Mutable per-trial state.
#[derive(Debug, Clone)]
pub struct PolicyState {
    pub position: CellIndex,
    pub visited: Vec<bool>,
    pub buffer: Option<ContextBuffer>,
    pub step: usize,
    pub move_rng: ChaCha8Rng,
    pub buffer_rng: ChaCha8Rng,
}

impl PolicyState {
    /// Fresh state for `seed` with no cell entered yet; `position` is a
    /// placeholder until the first [`PolicyState::enter`].
    pub fn new(grid: &SiteGrid, seed: u64) -> Self {
        Self {
            position: CellIndex::new(0, 0),
            visited: vec![false; grid.len()],
            buffer: None,
            step: 0,
            move_rng: stream(seed, 0),
            buffer_rng: stream(seed, 1),
        }
    }

    pub fn is_visited(&self, grid: &SiteGrid, at: CellIndex) -> bool {
        self.visited[grid.offset(at)]
    }

    /// Moves to `at`; returns the reward collected (zero on revisits).
    pub fn enter(&mut self, grid: &SiteGrid, at: CellIndex) -> u64 {
        let off = grid.offset(at);
        self.position = at;
        self.step += 1;
        if std::mem::replace(&mut self.visited[off], true) {
            0
        } else {
            grid.cells[off].gt_target_area
        }
    }
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Scores neighbour cells for the greedy policy, caching per cell until the
/// context set changes.
pub struct CellScorer<'a> {
    grid: &'a SiteGrid,
    target: &'a ExemplarSet,
    context: Option<ExemplarSet>,
    mode: Option<SignalMode>,
    scalar: Option<ScalarScale>,
    scalar_weight: f64,
    cache: Vec<Option<f64>>,
}

impl<'a> CellScorer<'a> {
    /// `mode: None` scores every cell zero (random-walk control).
    pub fn new(
        grid: &'a SiteGrid,
        target: &'a ExemplarSet,
        context: Option<ExemplarSet>,
        mode: Option<SignalMode>,
        scalar_weight: f64,
    ) -> Result<Self> {
        let scalar = ScalarScale::from_grid(grid);
        if let Some(m) = mode {
            if m.uses_context() && context.is_none() {
                return Err(Error::Config(format!(
                    "signal '{m}' needs a context buffer"
                )));
            }
            if m.uses_scalar() && scalar.is_none() {
                return Err(Error::Config(format!(
                    "signal '{m}' needs a scalar channel on every cell"
                )));
            }
        }
        Ok(Self {
            grid,
            target,
            context,
            mode,
            scalar,
            scalar_weight,
            cache: vec![None; grid.len()],
        })
    }

    pub fn context(&self) -> Option<&ExemplarSet> {
        self.context.as_ref()
    }

    pub fn set_context(&mut self, context: Option<ExemplarSet>) {
        self.context = context;
        self.cache.iter_mut().for_each(|c| *c = None);
    }

    pub fn score(&mut self, at: CellIndex) -> Result<f64> {
        let Some(mode) = self.mode else {
            return Ok(0.0);
        };
        let off = self.grid.offset(at);
        if let Some(s) = self.cache[off] {
            return Ok(s);
        }
        let s = score_cell(
            &self.grid.cells[off],
            self.target,
            self.context.as_ref(),
            mode,
            self.scalar.as_ref(),
            self.scalar_weight,
        )?;
        self.cache[off] = Some(s);
        Ok(s)
    }
}

/// Picks the next cell from the current position.
///
/// Visited neighbours score zero. The best positive score wins, ties broken
/// per `tie_break`. With no positive score the move is a uniformly random
/// unvisited neighbour, or any neighbour when all are visited. A cell with no
/// neighbours (a 1x1 grid) stays put.
pub fn greedy_step(
    grid: &SiteGrid,
    state: &mut PolicyState,
    scorer: &mut CellScorer<'_>,
    tie_break: TieBreak,
) -> Result<CellIndex> {
    grid.check_index(state.position)?;
    let neighbors = neighbors8_in(grid.rows, grid.cols, state.position);
    if neighbors.is_empty() {
        return Ok(state.position);
    }
    let mut best = 0.0;
    let mut ties: Vec<CellIndex> = Vec::new();
    let mut unvisited: Vec<CellIndex> = Vec::new();
    for &n in &neighbors {
        if state.is_visited(grid, n) {
            continue;
        }
        unvisited.push(n);
        let s = scorer.score(n)?;
        if s > best {
            best = s;
            ties.clear();
            ties.push(n);
        } else if s == best && s > 0.0 {
            ties.push(n);
        }
    }
    let rng = &mut state.move_rng;
    Ok(if !ties.is_empty() {
        match tie_break {
            TieBreak::RowMajor => ties[0],
            TieBreak::Random => ties[rng.random_range(0..ties.len())],
        }
    } else if !unvisited.is_empty() {
        unvisited[rng.random_range(0..unvisited.len())]
    } else {
        neighbors[rng.random_range(0..neighbors.len())]
    })
}

/// A validated grid plus the operator's one-shot inputs, ready to run trials.
#[derive(Debug, Clone)]
pub struct Survey<'a> {
    grid: &'a SiteGrid,
    target: &'a ExemplarSet,
    target_image: &'a [PatchEmbedding],
    settings: PlannerSettings,
}

impl<'a> Survey<'a> {
    /// `target` must carry the target label. `target_image` holds the patches
    /// of the labelled image the context buffer is seeded from.
    pub fn new(
        grid: &'a SiteGrid,
        target: &'a ExemplarSet,
        target_image: &'a [PatchEmbedding],
        settings: PlannerSettings,
    ) -> Result<Self> {
        grid.ensure_valid()?;
        if target.label() != TARGET_LABEL {
            return Err(Error::Config(format!(
                "target exemplar set must be labelled '{TARGET_LABEL}', got '{}'",
                target.label()
            )));
        }
        if target.dim() != grid.dim {
            return Err(Error::Config(format!(
                "exemplar dimension {} does not match site dimension {}",
                target.dim(),
                grid.dim
            )));
        }
        if !(-1.0..=1.0).contains(&settings.sigma_context) {
            return Err(Error::Config("sigma_context outside [-1, 1]".into()));
        }
        settings.buffer.check()?;
        Ok(Self {
            grid,
            target,
            target_image,
            settings,
        })
    }

    pub fn grid(&self) -> &SiteGrid {
        self.grid
    }

    pub fn settings(&self) -> &PlannerSettings {
        &self.settings
    }

    pub fn run(&self, policy: Policy, steps: usize, seed: u64) -> Result<TrialResult> {
        self.run_detailed(policy, steps, seed).map(|(r, _)| r)
    }

    /// Like [`Survey::run`], also returning the final context buffer for
    /// context-bearing policies.
    pub fn run_detailed(
        &self,
        policy: Policy,
        steps: usize,
        seed: u64,
    ) -> Result<(TrialResult, Option<ContextBuffer>)> {
        let grid = self.grid;
        if steps == 0 {
            return Err(Error::Config("steps must be positive".into()));
        }
        let mut state = PolicyState::new(grid, seed);
        let mut visited = Vec::with_capacity(steps);
        let mut cumulative_area = Vec::with_capacity(steps);
        let mut total = 0u64;
        let mut record = |state: &mut PolicyState, at: CellIndex| {
            total += state.enter(grid, at);
            visited.push(at);
            cumulative_area.push(total);
        };

        let (mode, context_mode) = match policy {
            Policy::Lawnmower { corner } => {
                if steps > grid.len() {
                    return Err(Error::Config(format!(
                        "lawnmower covers {} cells, {steps} steps requested",
                        grid.len()
                    )));
                }
                let corner =
                    corner.unwrap_or_else(|| Corner::ALL[state.move_rng.random_range(0..4)]);
                for at in lawnmower_path(grid.rows, grid.cols, corner)
                    .into_iter()
                    .take(steps)
                {
                    record(&mut state, at);
                }
                let result = TrialResult {
                    policy,
                    seed,
                    visited,
                    cumulative_area,
                    buffer_updates: 0,
                };
                return Ok((result, None));
            }
            Policy::RandomWalk => (None, ContextMode::Fixed),
            Policy::Greedy { signal, context } => (Some(signal), context),
        };

        let start = grid.index_of(state.move_rng.random_range(0..grid.len()));
        let uses_context = mode.is_some_and(SignalMode::uses_context);
        if uses_context {
            let det = detector::assign_patches(self.target_image, &[self.target])?;
            state.buffer = Some(ContextBuffer::init(
                self.target_image,
                &det,
                self.settings.buffer,
                &mut state.buffer_rng,
            )?);
        }
        let context_set = |state: &PolicyState| -> Result<Option<ExemplarSet>> {
            state
                .buffer
                .as_ref()
                .map(|b| b.as_exemplar_set(self.settings.sigma_context))
                .transpose()
        };
        let mut scorer = CellScorer::new(
            grid,
            self.target,
            context_set(&state)?,
            mode,
            self.settings.scalar_weight,
        )?;
        let learn = uses_context && context_mode == ContextMode::Running;
        let mut buffer_updates = 0;

        let mut at = start;
        for t in 0..steps {
            record(&mut state, at);
            if learn {
                let cell = grid.cell(at);
                let ctx = scorer
                    .context()
                    .expect("context-bearing mode has a context set");
                let det = detector::assign_patches(&cell.patches, &[self.target, ctx])?;
                let phi = det.image_score(TARGET_LABEL);
                let buffer = state
                    .buffer
                    .as_mut()
                    .expect("context-bearing mode has a buffer");
                if buffer.update_if_triggered(&cell.patches, &det, phi, &mut state.buffer_rng)? {
                    buffer_updates += 1;
                    if !det.complement(TARGET_LABEL).is_empty() {
                        scorer.set_context(context_set(&state)?);
                    }
                }
            }
            if t + 1 < steps {
                at = greedy_step(grid, &mut state, &mut scorer, self.settings.tie_break)?;
            }
        }
        let result = TrialResult {
            policy,
            seed,
            visited,
            cumulative_area,
            buffer_updates,
        };
        Ok((result, state.buffer))
    }
}

/// Validates inputs and runs one trial. For many trials on the same grid,
/// build a [`Survey`] once instead.
pub fn run_policy(
    grid: &SiteGrid,
    policy: Policy,
    steps: usize,
    target: &ExemplarSet,
    target_image: &[PatchEmbedding],
    settings: PlannerSettings,
    seed: u64,
) -> Result<TrialResult> {
    Survey::new(grid, target, target_image, settings)?.run(policy, steps, seed)
}
