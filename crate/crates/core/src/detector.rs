//! One-shot patch correspondence against labelled exemplar sets.
//!
//! Each patch takes its best cosine similarity per class, drops scores below
//! that class's threshold (`score >= threshold` survives), and is assigned to
//! the class with the largest surviving score. Exact ties go to the class
//! declared first. Image-level scores count patches per class.

use crate::error::{Error, Result};
use crate::world::PatchEmbedding;

/// Default threshold for the target class.
pub const DEFAULT_TARGET_THRESHOLD: f64 = 0.3;
/// Default threshold for the context class.
pub const DEFAULT_CONTEXT_THRESHOLD: f64 = 0.1;

/// Reference embeddings for one class plus its similarity threshold.
///
/// Exemplars are widened to `f64` once at construction together with their
/// norms, so repeated scoring does not redo that work.
#[derive(Debug, Clone)]
pub struct ExemplarSet {
    label: String,
    exemplars: Vec<PatchEmbedding>,
    threshold: f64,
    dim: usize,
    flat: Vec<f64>,
    norms: Vec<f64>,
}

impl PartialEq for ExemplarSet {
    fn eq(&self, other: &Self) -> bool {
        self.label == other.label
            && self.threshold == other.threshold
            && self.exemplars == other.exemplars
    }
}

impl ExemplarSet {
    pub fn new(
        label: impl Into<String>,
        exemplars: Vec<PatchEmbedding>,
        threshold: f64,
    ) -> Result<Self> {
        let label = label.into();
        let Some(first) = exemplars.first() else {
            return Err(Error::Argument(format!("exemplar set '{label}' is empty")));
        };
        if !(-1.0..=1.0).contains(&threshold) {
            return Err(Error::Argument(format!(
                "threshold {threshold} for '{label}' outside [-1, 1]"
            )));
        }
        let dim = first.dim();
        let mut flat = Vec::with_capacity(dim * exemplars.len());
        let mut norms = Vec::with_capacity(exemplars.len());
        for (j, q) in exemplars.iter().enumerate() {
            if q.dim() != dim {
                return Err(Error::Argument(format!(
                    "exemplar {j} of '{label}' has dimension {}, expected {dim}",
                    q.dim()
                )));
            }
            if !q.is_finite() || q.is_zero() {
                return Err(Error::Argument(format!(
                    "exemplar {j} of '{label}' is zero or non-finite"
                )));
            }
            let start = flat.len();
            flat.extend(q.values().iter().map(|&v| f64::from(v)));
            norms.push(norm(&flat[start..]));
        }
        Ok(Self {
            label,
            exemplars,
            threshold,
            dim,
            flat,
            norms,
        })
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn exemplars(&self) -> &[PatchEmbedding] {
        &self.exemplars
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.exemplars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.exemplars.is_empty()
    }

    /// Same exemplars under a different threshold.
    pub fn with_threshold(&self, threshold: f64) -> Result<Self> {
        Self::new(self.label.clone(), self.exemplars.clone(), threshold)
    }

    /// Best cosine similarity between a widened patch (with precomputed norm)
    /// and any exemplar in the set.
    fn max_similarity(&self, patch: &[f64], patch_norm: f64) -> f64 {
        self.flat
            .chunks_exact(self.dim)
            .zip(&self.norms)
            .map(|(q, &qn)| dot(patch, q) / (patch_norm * qn))
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Per-patch outcome. `class` indexes the class slice passed to
/// [`assign_patches`]; `None` means no class survived its threshold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PatchAssignment {
    pub patch_index: usize,
    pub class: Option<usize>,
    pub score: f64,
}

/// The assignments for one image together with the class labels they refer to.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    labels: Vec<String>,
    assignments: Vec<PatchAssignment>,
}

impl Detection {
    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn assignments(&self) -> &[PatchAssignment] {
        &self.assignments
    }

    pub fn class_index(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    /// Label of a single assignment, `None` when unassigned.
    pub fn label_of(&self, a: &PatchAssignment) -> Option<&str> {
        a.class.map(|c| self.labels[c].as_str())
    }

    /// Number of patches assigned to `label`. Unknown labels score zero.
    pub fn image_score(&self, label: &str) -> usize {
        match self.class_index(label) {
            Some(c) => self.count_class(c),
            None => 0,
        }
    }

    pub fn count_class(&self, class: usize) -> usize {
        self.assignments
            .iter()
            .filter(|a| a.class == Some(class))
            .count()
    }

    /// Indices of patches not assigned to `label`.
    pub fn complement(&self, label: &str) -> Vec<usize> {
        let class = self.class_index(label);
        self.assignments
            .iter()
            .filter(|a| class.is_none() || a.class != class)
            .map(|a| a.patch_index)
            .collect()
    }
}

/// Free-function form of [`Detection::image_score`].
pub fn image_score(detection: &Detection, label: &str) -> usize {
    detection.image_score(label)
}

pub fn cosine_similarity(a: &PatchEmbedding, b: &PatchEmbedding) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::Argument(format!(
            "dimension mismatch: {} vs {}",
            a.dim(),
            b.dim()
        )));
    }
    if a.is_zero() || b.is_zero() {
        return Err(Error::Argument(
            "cosine similarity undefined for the zero vector".into(),
        ));
    }
    let a = widen(a);
    let b = widen(b);
    Ok(dot(&a, &b) / (norm(&a) * norm(&b)))
}

pub fn assign_patches(patches: &[PatchEmbedding], classes: &[&ExemplarSet]) -> Result<Detection> {
    check_classes(classes)?;
    let mut buf = Vec::new();
    let mut assignments = Vec::with_capacity(patches.len());
    for (i, patch) in patches.iter().enumerate() {
        let best = classify(patch, classes, &mut buf)
            .map_err(|e| Error::Argument(format!("patch {i}: {e}")))?;
        assignments.push(match best {
            Some((c, s)) => PatchAssignment {
                patch_index: i,
                class: Some(c),
                score: s,
            },
            None => PatchAssignment {
                patch_index: i,
                class: None,
                score: 0.0,
            },
        });
    }
    Ok(Detection {
        labels: classes.iter().map(|c| c.label.clone()).collect(),
        assignments,
    })
}

/// Per-class patch counts without materialising the assignments. Same
/// semantics as `assign_patches` followed by `count_class` for each class.
pub fn class_counts(patches: &[PatchEmbedding], classes: &[&ExemplarSet]) -> Result<Vec<usize>> {
    check_classes(classes)?;
    let mut counts = vec![0; classes.len()];
    let mut buf = Vec::new();
    for patch in patches {
        if let Some((c, _)) = classify(patch, classes, &mut buf)? {
            counts[c] += 1;
        }
    }
    Ok(counts)
}

fn check_classes(classes: &[&ExemplarSet]) -> Result<()> {
    for (i, a) in classes.iter().enumerate() {
        if classes[..i].iter().any(|b| b.label == a.label) {
            return Err(Error::Config(format!(
                "duplicate class label '{}'",
                a.label
            )));
        }
        if a.dim != classes[0].dim {
            return Err(Error::Argument(format!(
                "class '{}' has dimension {}, expected {}",
                a.label, a.dim, classes[0].dim
            )));
        }
    }
    Ok(())
}

fn classify(
    patch: &PatchEmbedding,
    classes: &[&ExemplarSet],
    buf: &mut Vec<f64>,
) -> Result<Option<(usize, f64)>> {
    if let Some(first) = classes.first() {
        if patch.dim() != first.dim {
            return Err(Error::Argument(format!(
                "dimension {} does not match exemplars ({})",
                patch.dim(),
                first.dim
            )));
        }
    }
    buf.clear();
    buf.extend(patch.values().iter().map(|&v| f64::from(v)));
    let n = norm(buf);
    if n == 0.0 {
        return Err(Error::Argument("zero patch".into()));
    }
    let mut best: Option<(usize, f64)> = None;
    for (c, class) in classes.iter().enumerate() {
        let s = class.max_similarity(buf, n);
        // A surviving score of exactly zero is indistinguishable from a
        // thresholded one, so it does not assign.
        if s >= class.threshold && s > 0.0 && best.is_none_or(|(_, b)| s > b) {
            best = Some((c, s));
        }
    }
    Ok(best)
}

fn widen(p: &PatchEmbedding) -> Vec<f64> {
    p.values().iter().map(|&v| f64::from(v)).collect()
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}
