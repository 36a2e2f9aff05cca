//! Spatial data model: a rectangular grid of cells, each holding patch
//! embeddings and ground-truth target area.

use std::fmt;

use crate::error::{Error, Result};

/// One patch embedding. Stored in single precision; all similarity
/// arithmetic widens to `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchEmbedding(Vec<f32>);

impl PatchEmbedding {
    pub fn new(values: Vec<f32>) -> Self {
        Self(values)
    }

    pub fn values(&self) -> &[f32] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn into_inner(self) -> Vec<f32> {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&v| v == 0.0)
    }

    /// Returns a copy with every coordinate multiplied by `factor`.
    pub fn scaled(&self, factor: f32) -> Self {
        Self(self.0.iter().map(|v| v * factor).collect())
    }
}

impl From<Vec<f32>> for PatchEmbedding {
    fn from(values: Vec<f32>) -> Self {
        Self(values)
    }
}

/// Everything the engine knows about one grid cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellObservation {
    pub patches: Vec<PatchEmbedding>,
    /// Ground-truth target mask pixels overlapping this cell.
    pub gt_target_area: u64,
    /// Externally precomputed per-cell signal (e.g. a substrata score).
    pub scalar_signal: Option<f64>,
}

impl CellObservation {
    pub fn new(patches: Vec<PatchEmbedding>, gt_target_area: u64) -> Self {
        Self {
            patches,
            gt_target_area,
            scalar_signal: None,
        }
    }

    pub fn with_scalar(mut self, value: f64) -> Self {
        self.scalar_signal = Some(value);
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CellIndex {
    pub row: usize,
    pub col: usize,
}

impl CellIndex {
    pub const fn new(row: usize, col: usize) -> Self {
        Self { row, col }
    }
}

impl fmt::Display for CellIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.row, self.col)
    }
}

/// The rule a [`Violation`] breaks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Rule {
    EmptyShape,
    CellCount {
        expected: usize,
        actual: usize,
    },
    NoPatches,
    PatchDimension {
        patch: usize,
        expected: usize,
        actual: usize,
    },
    NonFinite {
        patch: usize,
    },
    ZeroPatch {
        patch: usize,
    },
    NegativeScalar,
    TotalMismatch {
        declared: u64,
        actual: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub cell: Option<CellIndex>,
    pub rule: Rule,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(cell) = self.cell {
            write!(f, "cell {cell}: ")?;
        }
        match &self.rule {
            Rule::EmptyShape => write!(f, "rows, cols and dim must be positive"),
            Rule::CellCount { expected, actual } => {
                write!(f, "expected {expected} cells, found {actual}")
            }
            Rule::NoPatches => write!(f, "cell has no patches"),
            Rule::PatchDimension {
                patch,
                expected,
                actual,
            } => write!(
                f,
                "patch {patch} has dimension {actual}, expected {expected}"
            ),
            Rule::NonFinite { patch } => write!(f, "patch {patch} has non-finite values"),
            Rule::ZeroPatch { patch } => write!(f, "patch {patch} is the zero vector"),
            Rule::NegativeScalar => write!(f, "scalar signal must be finite and nonnegative"),
            Rule::TotalMismatch { declared, actual } => write!(
                f,
                "total mismatch: declared total_gt_area {declared}, cells sum to {actual}"
            ),
        }
    }
}

/// A site discretised into `rows x cols` cells, stored row-major.
///
/// Grids are plain data. Construct them with [`SiteGrid::from_cells`], which
/// fills in `total_gt_area`, and check them with [`SiteGrid::validate`]. Every
/// engine entry point refuses a grid with violations.
#[derive(Debug, Clone, PartialEq)]
pub struct SiteGrid {
    pub rows: usize,
    pub cols: usize,
    pub dim: usize,
    pub cells: Vec<CellObservation>,
    pub total_gt_area: u64,
}

impl SiteGrid {
    pub fn from_cells(rows: usize, cols: usize, dim: usize, cells: Vec<CellObservation>) -> Self {
        let total_gt_area = cells.iter().map(|c| c.gt_target_area).sum();
        Self {
            rows,
            cols,
            dim,
            cells,
            total_gt_area,
        }
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contains(&self, at: CellIndex) -> bool {
        at.row < self.rows && at.col < self.cols
    }

    pub fn check_index(&self, at: CellIndex) -> Result<()> {
        if self.contains(at) {
            Ok(())
        } else {
            Err(Error::IndexOutOfRange {
                index: at,
                rows: self.rows,
                cols: self.cols,
            })
        }
    }

    /// Row-major offset of `at`. Panics if out of range.
    pub fn offset(&self, at: CellIndex) -> usize {
        assert!(self.contains(at), "cell {at} outside grid");
        at.row * self.cols + at.col
    }

    pub fn index_of(&self, offset: usize) -> CellIndex {
        CellIndex::new(offset / self.cols, offset % self.cols)
    }

    pub fn cell(&self, at: CellIndex) -> &CellObservation {
        &self.cells[self.offset(at)]
    }

    pub fn indices(&self) -> impl Iterator<Item = CellIndex> + '_ {
        (0..self.rows).flat_map(move |r| (0..self.cols).map(move |c| CellIndex::new(r, c)))
    }

    pub fn neighbors8(&self, at: CellIndex) -> Result<Vec<CellIndex>> {
        self.check_index(at)?;
        Ok(neighbors8_in(self.rows, self.cols, at))
    }

    pub fn mean_patches_per_cell(&self) -> f64 {
        if self.cells.is_empty() {
            return 0.0;
        }
        let total: usize = self.cells.iter().map(|c| c.patches.len()).sum();
        total as f64 / self.cells.len() as f64
    }

    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        if self.rows == 0 || self.cols == 0 || self.dim == 0 {
            out.push(Violation {
                cell: None,
                rule: Rule::EmptyShape,
            });
        }
        let expected = self.rows * self.cols;
        if self.cells.len() != expected {
            out.push(Violation {
                cell: None,
                rule: Rule::CellCount {
                    expected,
                    actual: self.cells.len(),
                },
            });
        }
        for (offset, cell) in self.cells.iter().enumerate().take(expected) {
            let at = self.index_of(offset);
            let mut push = |rule| {
                out.push(Violation {
                    cell: Some(at),
                    rule,
                })
            };
            if cell.patches.is_empty() {
                push(Rule::NoPatches);
            }
            for (i, p) in cell.patches.iter().enumerate() {
                if p.dim() != self.dim {
                    push(Rule::PatchDimension {
                        patch: i,
                        expected: self.dim,
                        actual: p.dim(),
                    });
                } else if !p.is_finite() {
                    push(Rule::NonFinite { patch: i });
                } else if p.is_zero() {
                    push(Rule::ZeroPatch { patch: i });
                }
            }
            if let Some(s) = cell.scalar_signal {
                if !(s.is_finite() && s >= 0.0) {
                    push(Rule::NegativeScalar);
                }
            }
        }
        let actual: u64 = self.cells.iter().map(|c| c.gt_target_area).sum();
        if actual != self.total_gt_area {
            out.push(Violation {
                cell: None,
                rule: Rule::TotalMismatch {
                    declared: self.total_gt_area,
                    actual,
                },
            });
        }
        out
    }

    /// Fails with [`Error::InvalidGrid`] unless [`SiteGrid::validate`] is clean.
    pub fn ensure_valid(&self) -> Result<()> {
        let violations = self.validate();
        match violations.first() {
            None => Ok(()),
            Some(first) => Err(Error::InvalidGrid {
                count: violations.len(),
                first: first.to_string(),
            }),
        }
    }
}

/// In-bounds Chebyshev neighbours of `at`, row-major.
pub fn neighbors8_in(rows: usize, cols: usize, at: CellIndex) -> Vec<CellIndex> {
    let mut out = Vec::with_capacity(8);
    let r0 = at.row.saturating_sub(1);
    let c0 = at.col.saturating_sub(1);
    for r in r0..=(at.row + 1).min(rows.saturating_sub(1)) {
        for c in c0..=(at.col + 1).min(cols.saturating_sub(1)) {
            if r != at.row || c != at.col {
                out.push(CellIndex::new(r, c));
            }
        }
    }
    out
}
