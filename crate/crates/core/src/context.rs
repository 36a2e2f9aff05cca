//! Environment-context buffer: a bounded FIFO of non-target patch embeddings
//! seeded from the labelled target image and refreshed online whenever an
//! image shows enough target patches.

use std::collections::VecDeque;

use rand::seq::index;
use rand::Rng;

use crate::detector::{Detection, ExemplarSet, DEFAULT_CONTEXT_THRESHOLD};
use crate::error::{Error, Result};
use crate::world::PatchEmbedding;
use crate::{CONTEXT_LABEL, TARGET_LABEL};

/// Default buffer capacity.
pub const DEFAULT_CAPACITY: usize = 200;
/// Default number of embeddings sampled per update.
pub const DEFAULT_SAMPLE_SIZE: usize = 25;
/// Default trigger: minimum target patches in an image before it updates the buffer.
pub const DEFAULT_TRIGGER: usize = 3;

/// Capacity, sample size and trigger for a [`ContextBuffer`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BufferParams {
    pub sample_size: usize,
    pub capacity: usize,
    /// `usize::MAX` never fires.
    pub trigger: usize,
}

impl Default for BufferParams {
    fn default() -> Self {
        Self {
            sample_size: DEFAULT_SAMPLE_SIZE,
            capacity: DEFAULT_CAPACITY,
            trigger: DEFAULT_TRIGGER,
        }
    }
}

impl BufferParams {
    pub fn check(&self) -> Result<()> {
        if self.capacity == 0 || self.sample_size == 0 {
            return Err(Error::Config(
                "buffer capacity and sample size must be positive".into(),
            ));
        }
        if self.sample_size > self.capacity {
            return Err(Error::Config(format!(
                "sample size {} exceeds capacity {}",
                self.sample_size, self.capacity
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContextBuffer {
    entries: VecDeque<PatchEmbedding>,
    params: BufferParams,
}

impl ContextBuffer {
    /// Seeds the buffer with up to `sample_size` embeddings drawn without
    /// replacement from the target image's non-target patches.
    ///
    /// `detection` must come from scoring `target_image` against the target
    /// class alone.
    pub fn init<R: Rng + ?Sized>(
        target_image: &[PatchEmbedding],
        detection: &Detection,
        params: BufferParams,
        rng: &mut R,
    ) -> Result<Self> {
        params.check()?;
        check_cover(target_image, detection)?;
        let pool = detection.complement(TARGET_LABEL);
        if pool.is_empty() {
            return Err(Error::BufferInit(
                "every patch of the target image is assigned to the target".into(),
            ));
        }
        let mut buf = Self {
            entries: VecDeque::with_capacity(params.capacity),
            params,
        };
        buf.push_sampled(target_image, &pool, rng);
        Ok(buf)
    }

    /// Builds a buffer from explicit entries, oldest first. Entries beyond
    /// capacity are evicted from the old end.
    pub fn from_entries(entries: Vec<PatchEmbedding>, params: BufferParams) -> Result<Self> {
        params.check()?;
        let mut buf = Self {
            entries: VecDeque::with_capacity(params.capacity),
            params,
        };
        buf.append(entries);
        Ok(buf)
    }

    /// If `phi_target` reaches the trigger, samples from the image's
    /// non-target patches and appends them, evicting the oldest entries
    /// past capacity. Returns whether the trigger fired.
    ///
    /// An empty non-target pool still counts as fired but appends nothing.
    pub fn update_if_triggered<R: Rng + ?Sized>(
        &mut self,
        patches: &[PatchEmbedding],
        detection: &Detection,
        phi_target: usize,
        rng: &mut R,
    ) -> Result<bool> {
        if phi_target < self.params.trigger {
            return Ok(false);
        }
        check_cover(patches, detection)?;
        let pool = detection.complement(TARGET_LABEL);
        self.push_sampled(patches, &pool, rng);
        Ok(true)
    }

    /// Exposes the current entries as the context class.
    pub fn as_exemplar_set(&self, threshold: f64) -> Result<ExemplarSet> {
        if self.entries.is_empty() {
            return Err(Error::EmptyBuffer);
        }
        ExemplarSet::new(
            CONTEXT_LABEL,
            self.entries.iter().cloned().collect(),
            threshold,
        )
    }

    pub fn as_default_exemplar_set(&self) -> Result<ExemplarSet> {
        self.as_exemplar_set(DEFAULT_CONTEXT_THRESHOLD)
    }

    /// Entries, oldest first.
    pub fn entries(&self) -> impl ExactSizeIterator<Item = &PatchEmbedding> {
        self.entries.iter()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn params(&self) -> BufferParams {
        self.params
    }

    fn push_sampled<R: Rng + ?Sized>(
        &mut self,
        patches: &[PatchEmbedding],
        pool: &[usize],
        rng: &mut R,
    ) {
        if pool.is_empty() {
            return;
        }
        let k = self.params.sample_size.min(pool.len());
        let picked = index::sample(rng, pool.len(), k);
        self.append(picked.iter().map(|i| patches[pool[i]].clone()));
    }

    fn append(&mut self, items: impl IntoIterator<Item = PatchEmbedding>) {
        self.entries.extend(items);
        let excess = self.entries.len().saturating_sub(self.params.capacity);
        self.entries.drain(..excess);
    }
}

fn check_cover(patches: &[PatchEmbedding], detection: &Detection) -> Result<()> {
    if detection.assignments().len() != patches.len() {
        return Err(Error::Argument(format!(
            "detection covers {} patches, image has {}",
            detection.assignments().len(),
            patches.len()
        )));
    }
    Ok(())
}
