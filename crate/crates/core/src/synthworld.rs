//! Synthetic sites with clustered sparse targets and a context halo whose
//! density decays with distance to the nearest target cell.

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::detector::ExemplarSet;
use crate::error::{Error, Result};
use crate::world::{CellIndex, CellObservation, PatchEmbedding, SiteGrid};
use crate::TARGET_LABEL;

/// Generator parameters. `noise_sigma` is the expected norm of the isotropic
/// noise added to a unit prototype (per-coordinate deviation
/// `noise_sigma / sqrt(dim)`).
#[derive(Debug, Clone, PartialEq)]
pub struct SynthParams {
    pub rows: usize,
    pub cols: usize,
    pub dim: usize,
    pub patches_per_cell: usize,
    pub n_target_clusters: usize,
    /// Euclidean disk radius in cells.
    pub cluster_radius: f64,
    pub target_cell_fraction: f64,
    /// Context probability is `exp(-dist / halo_decay)`, Chebyshev `dist`.
    pub halo_decay: f64,
    pub noise_sigma: f64,
    pub n_background_prototypes: usize,
    pub pixels_per_patch: u64,
    /// One context prototype per cluster instead of a single shared one;
    /// each cell's context follows its nearest target cell.
    pub context_drift: bool,
    /// Attach a smooth per-cell scalar channel (a substrate-like field that
    /// peaks on every cluster and on as many decoy sites).
    pub scalar_channel: bool,
    pub seed: u64,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            rows: 30,
            cols: 30,
            dim: 64,
            patches_per_cell: 16,
            n_target_clusters: 2,
            cluster_radius: 3.0,
            target_cell_fraction: 0.03,
            halo_decay: 3.0,
            noise_sigma: 0.2,
            n_background_prototypes: 6,
            pixels_per_patch: 196,
            context_drift: false,
            scalar_channel: false,
            seed: 0,
        }
    }
}

impl SynthParams {
    pub fn n_context_prototypes(&self) -> usize {
        if self.context_drift {
            self.n_target_clusters
        } else {
            1
        }
    }

    pub fn n_target_cells(&self) -> usize {
        let raw = self.target_cell_fraction * (self.rows * self.cols) as f64;
        // Guard against products like 0.03 * 900 landing a hair above 27.
        (raw - 1e-9).ceil().max(1.0) as usize
    }

    pub fn check(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.to_string()));
        if self.rows == 0 || self.cols == 0 {
            return bad("rows and cols must be positive");
        }
        if !(self.target_cell_fraction > 0.0 && self.target_cell_fraction < 1.0) {
            return bad("target_cell_fraction must lie in (0, 1)");
        }
        if self.halo_decay.is_nan() || self.halo_decay <= 0.0 {
            return bad("halo_decay must be positive");
        }
        if self.dim < 4 {
            return bad("dim must be at least 4");
        }
        if self.patches_per_cell < 4 {
            return bad("patches_per_cell must be at least 4");
        }
        if self.n_target_clusters == 0 {
            return bad("need at least one target cluster");
        }
        if !(self.cluster_radius.is_finite() && self.cluster_radius >= 0.0)
            || !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0)
        {
            return bad("cluster_radius and noise_sigma must be nonnegative");
        }
        if self.n_background_prototypes == 0 {
            return bad("need at least one background prototype");
        }
        if 1 + self.n_context_prototypes() + self.n_background_prototypes > self.dim {
            return bad("more prototypes than dimensions");
        }
        Ok(())
    }
}

/// What the generator put where.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthReport {
    pub cluster_centers: Vec<CellIndex>,
    /// Target cells in placement order.
    pub target_cells: Vec<CellIndex>,
    /// Patch indices holding the target prototype, per target cell.
    pub target_patches: Vec<Vec<usize>>,
    /// Cluster each target cell belongs to.
    pub target_cluster: Vec<usize>,
    /// Chebyshev distance to the nearest target cell, row-major.
    pub distance: Vec<usize>,
    /// Context patches per cell, row-major.
    pub context_counts: Vec<usize>,
    /// Context patches over non-target patch slots, row-major.
    pub context_density: Vec<f64>,
    /// Position in `target_cells` of the cell used as the labelled image.
    pub query: usize,
}

impl SynthReport {
    pub fn query_cell(&self) -> CellIndex {
        self.target_cells[self.query]
    }

    /// Patches of the labelled target image.
    pub fn target_image<'g>(&self, grid: &'g SiteGrid) -> &'g [PatchEmbedding] {
        &grid.cell(self.query_cell()).patches
    }

    /// Target exemplars: the target patches of the labelled image, as an
    /// operator would click them.
    pub fn exemplar_set(&self, grid: &SiteGrid, threshold: f64) -> Result<ExemplarSet> {
        let image = self.target_image(grid);
        let picked = self.target_patches[self.query]
            .iter()
            .map(|&i| image[i].clone())
            .collect();
        ExemplarSet::new(TARGET_LABEL, picked, threshold)
    }
}

#[derive(Clone, Copy, PartialEq)]
enum Slot {
    Target,
    Context(usize),
    Background(usize),
}

pub fn generate_world(params: &SynthParams) -> Result<(SiteGrid, SynthReport)> {
    params.check()?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let (rows, cols) = (params.rows, params.cols);
    let n_cells = rows * cols;

    let n_ctx = params.n_context_prototypes();
    let protos = prototypes(
        &mut rng,
        params.dim,
        1 + n_ctx + params.n_background_prototypes,
    )?;
    let (target_proto, rest) = protos.split_first().expect("at least one prototype");
    let (context_protos, background_protos) = rest.split_at(n_ctx);

    let (centers, target_cells, target_cluster) = place_targets(&mut rng, params)?;

    let mut is_target = vec![None; n_cells];
    for (k, c) in target_cells.iter().enumerate() {
        is_target[c.row * cols + c.col] = Some(k);
    }
    let mut distance = vec![usize::MAX; n_cells];
    let mut nearest_cluster = vec![0; n_cells];
    for r in 0..rows {
        for c in 0..cols {
            let off = r * cols + c;
            for (k, t) in target_cells.iter().enumerate() {
                let d = r.abs_diff(t.row).max(c.abs_diff(t.col));
                if d < distance[off] {
                    distance[off] = d;
                    nearest_cluster[off] = target_cluster[k];
                }
            }
        }
    }

    let ppc = params.patches_per_cell;
    let per_coord = params.noise_sigma / (params.dim as f64).sqrt();
    let mut cells = Vec::with_capacity(n_cells);
    let mut target_patches = vec![Vec::new(); target_cells.len()];
    let mut context_counts = vec![0; n_cells];
    let mut context_density = vec![0.0; n_cells];
    for off in 0..n_cells {
        let ctx = if params.context_drift {
            nearest_cluster[off]
        } else {
            0
        };
        let p_context = (-(distance[off] as f64) / params.halo_decay).exp();
        let m_t = match is_target[off] {
            Some(_) => rng.random_range(2..=(ppc / 2).max(2)),
            None => 0,
        };
        let mut slots = vec![Slot::Target; m_t];
        for _ in m_t..ppc {
            slots.push(if rng.random_bool(p_context) {
                Slot::Context(ctx)
            } else {
                Slot::Background(rng.random_range(0..background_protos.len()))
            });
        }
        slots.shuffle(&mut rng);

        let mut patches = Vec::with_capacity(ppc);
        for (i, slot) in slots.iter().enumerate() {
            let proto = match *slot {
                Slot::Target => {
                    if let Some(k) = is_target[off] {
                        target_patches[k].push(i);
                    }
                    target_proto
                }
                Slot::Context(j) => {
                    context_counts[off] += 1;
                    &context_protos[j]
                }
                Slot::Background(j) => &background_protos[j],
            };
            patches.push(noisy(&mut rng, proto, per_coord));
        }
        context_density[off] = context_counts[off] as f64 / (ppc - m_t) as f64;
        cells.push(CellObservation::new(
            patches,
            m_t as u64 * params.pixels_per_patch,
        ));
    }

    if params.scalar_channel {
        let field = substrate_field(&mut rng, params, &centers);
        for (cell, v) in cells.iter_mut().zip(field) {
            cell.scalar_signal = Some(v);
        }
    }

    // The labelled image: the richest target cell of the first cluster.
    let query = (0..target_cells.len())
        .filter(|&k| target_cluster[k] == 0)
        .max_by_key(|&k| (target_patches[k].len(), std::cmp::Reverse(k)))
        .expect("every cluster holds at least one target cell");

    let grid = SiteGrid::from_cells(rows, cols, params.dim, cells);
    let report = SynthReport {
        cluster_centers: centers,
        target_cells,
        target_patches,
        target_cluster,
        distance,
        context_counts,
        context_density,
        query,
    };
    Ok((grid, report))
}

/// Random unit vectors made mutually orthogonal by Gram-Schmidt.
fn prototypes(rng: &mut ChaCha8Rng, dim: usize, n: usize) -> Result<Vec<Vec<f64>>> {
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(n);
    while out.len() < n {
        let mut v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        for u in &out {
            let proj: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(u).for_each(|(a, b)| *a -= proj * b);
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm < 1e-6 {
            continue;
        }
        v.iter_mut().for_each(|a| *a /= norm);
        let near_orthogonal = out
            .iter()
            .all(|u| u.iter().zip(&v).map(|(a, b)| a * b).sum::<f64>().abs() < 0.2);
        if !near_orthogonal {
            return Err(Error::Generation(
                "prototype orthogonalisation failed".into(),
            ));
        }
        out.push(v);
    }
    Ok(out)
}

fn noisy(rng: &mut ChaCha8Rng, proto: &[f64], per_coord: f64) -> PatchEmbedding {
    let mut v: Vec<f64> = proto
        .iter()
        .map(|&p| {
            let n: f64 = rng.sample(StandardNormal);
            p + per_coord * n
        })
        .collect();
    let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|a| *a /= norm);
    } else {
        v.clone_from_slice(proto);
    }
    PatchEmbedding::new(v.into_iter().map(|a| a as f32).collect())
}

type Placement = (Vec<CellIndex>, Vec<CellIndex>, Vec<usize>);

/// Picks disjoint cluster disks, then fills them round-robin with randomly
/// chosen cells until the target count is met.
fn place_targets(rng: &mut ChaCha8Rng, params: &SynthParams) -> Result<Placement> {
    let (rows, cols) = (params.rows, params.cols);
    let need = params.n_target_cells();
    let r = params.cluster_radius;
    let reach = r.floor() as usize;
    let margin_r = reach.min((rows - 1) / 2);
    let margin_c = reach.min((cols - 1) / 2);
    let infeasible = || {
        Error::Generation(format!(
            "{} clusters of radius {r} cannot hold {need} target cells on a {rows}x{cols} grid",
            params.n_target_clusters
        ))
    };

    let mut centers: Vec<CellIndex> = Vec::new();
    let mut attempts = 0;
    while centers.len() < params.n_target_clusters {
        attempts += 1;
        if attempts > 10_000 {
            return Err(infeasible());
        }
        let c = CellIndex::new(
            rng.random_range(margin_r..rows - margin_r),
            rng.random_range(margin_c..cols - margin_c),
        );
        let apart = centers.iter().all(|o| {
            let dr = o.row.abs_diff(c.row) as f64;
            let dc = o.col.abs_diff(c.col) as f64;
            (dr * dr + dc * dc).sqrt() > 2.0 * r + 1.0
        });
        if apart {
            centers.push(c);
        }
    }

    let mut pools: Vec<Vec<CellIndex>> = centers
        .iter()
        .map(|ctr| {
            let mut v = Vec::new();
            for row in ctr.row.saturating_sub(reach)..=(ctr.row + reach).min(rows - 1) {
                for col in ctr.col.saturating_sub(reach)..=(ctr.col + reach).min(cols - 1) {
                    let dr = row.abs_diff(ctr.row) as f64;
                    let dc = col.abs_diff(ctr.col) as f64;
                    if dr * dr + dc * dc <= r * r {
                        v.push(CellIndex::new(row, col));
                    }
                }
            }
            v.shuffle(rng);
            v
        })
        .collect();
    if pools.iter().map(Vec::len).sum::<usize>() < need {
        return Err(infeasible());
    }

    let mut cells = Vec::with_capacity(need);
    let mut owner = Vec::with_capacity(need);
    let mut k = 0;
    while cells.len() < need {
        if let Some(c) = pools[k].pop() {
            cells.push(c);
            owner.push(k);
        }
        k = (k + 1) % pools.len();
    }
    Ok((centers, cells, owner))
}

fn substrate_field(rng: &mut ChaCha8Rng, params: &SynthParams, centers: &[CellIndex]) -> Vec<f64> {
    let (rows, cols) = (params.rows, params.cols);
    let mut bumps: Vec<(f64, f64)> = centers
        .iter()
        .map(|c| (c.row as f64, c.col as f64))
        .collect();
    for _ in 0..centers.len() {
        bumps.push((
            rng.random_range(0.0..rows as f64),
            rng.random_range(0.0..cols as f64),
        ));
    }
    let width = 2.0 * params.halo_decay;
    (0..rows * cols)
        .map(|off| {
            let (r, c) = ((off / cols) as f64, (off % cols) as f64);
            bumps
                .iter()
                .map(|(br, bc)| {
                    let d2 = (r - br).powi(2) + (c - bc).powi(2);
                    (-d2 / (2.0 * width * width)).exp()
                })
                .fold(0.0, f64::max)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detector::{assign_patches, cosine_similarity};

    #[test]
    fn target_count_and_cluster_membership() {
        let p = SynthParams::default();
        let (grid, rep) = generate_world(&p).unwrap();
        assert_eq!(rep.target_cells.len(), 27);
        assert!(grid.validate().is_empty());
        for (cell, &k) in rep.target_cells.iter().zip(&rep.target_cluster) {
            let ctr = rep.cluster_centers[k];
            let dr = cell.row.abs_diff(ctr.row) as f64;
            let dc = cell.col.abs_diff(ctr.col) as f64;
            assert!((dr * dr + dc * dc).sqrt() <= p.cluster_radius);
        }
        let gt_cells = grid.cells.iter().filter(|c| c.gt_target_area > 0).count();
        assert_eq!(gt_cells, 27);
        assert!(grid.total_gt_area > 0);
    }

    #[test]
    fn same_seed_same_world() {
        let p = SynthParams {
            seed: 11,
            ..SynthParams::default()
        };
        assert_eq!(generate_world(&p).unwrap(), generate_world(&p).unwrap());
        let q = SynthParams { seed: 12, ..p };
        assert_ne!(generate_world(&q).unwrap().0, generate_world(&p).unwrap().0);
    }

    #[test]
    fn noiseless_targets_match_exactly() {
        let p = SynthParams {
            noise_sigma: 0.0,
            ..SynthParams::default()
        };
        let (grid, rep) = generate_world(&p).unwrap();
        let target = rep.exemplar_set(&grid, 0.3).unwrap();
        let proto = &target.exemplars()[0];
        for (cell, idx) in rep.target_cells.iter().zip(&rep.target_patches) {
            let patches = &grid.cell(*cell).patches;
            let det = assign_patches(patches, &[&target]).unwrap();
            for &i in idx {
                let s = cosine_similarity(&patches[i], proto).unwrap();
                assert!((s - 1.0).abs() < 1e-6);
                assert_eq!(det.assignments()[i].class, Some(0));
            }
        }
    }

    #[test]
    fn gt_area_counts_target_patches() {
        let (grid, rep) = generate_world(&SynthParams::default()).unwrap();
        for (cell, idx) in rep.target_cells.iter().zip(&rep.target_patches) {
            assert_eq!(grid.cell(*cell).gt_target_area, idx.len() as u64 * 196);
            assert!((2..=8).contains(&idx.len()));
        }
    }

    #[test]
    fn infeasible_fraction_rejected() {
        let p = SynthParams {
            rows: 10,
            cols: 10,
            cluster_radius: 1.0,
            target_cell_fraction: 0.5,
            ..SynthParams::default()
        };
        assert!(matches!(generate_world(&p), Err(Error::Generation(_))));
    }

    #[test]
    fn invalid_params_rejected() {
        for p in [
            SynthParams {
                dim: 3,
                ..SynthParams::default()
            },
            SynthParams {
                patches_per_cell: 3,
                ..SynthParams::default()
            },
            SynthParams {
                halo_decay: 0.0,
                ..SynthParams::default()
            },
            SynthParams {
                target_cell_fraction: 1.0,
                ..SynthParams::default()
            },
            SynthParams {
                dim: 6,
                n_background_prototypes: 6,
                ..SynthParams::default()
            },
        ] {
            assert!(matches!(generate_world(&p), Err(Error::Config(_))));
        }
    }

    #[test]
    fn drift_uses_one_context_prototype_per_cluster() {
        let p = SynthParams {
            context_drift: true,
            noise_sigma: 0.0,
            ..SynthParams::default()
        };
        let (grid, rep) = generate_world(&p).unwrap();
        // Non-target patches of one target cell per cluster.
        let pick = |k: usize| {
            let i = rep.target_cluster.iter().position(|&c| c == k).unwrap();
            let cell = rep.target_cells[i];
            let patches = &grid.cell(cell).patches;
            (0..patches.len())
                .find(|j| !rep.target_patches[i].contains(j))
                .map(|j| patches[j].clone())
                .unwrap()
        };
        let s = cosine_similarity(&pick(0), &pick(1)).unwrap();
        assert!(s.abs() < 1e-6);
    }

    #[test]
    fn scalar_channel_is_attached() {
        let p = SynthParams {
            scalar_channel: true,
            ..SynthParams::default()
        };
        let (grid, rep) = generate_world(&p).unwrap();
        assert!(grid
            .cells
            .iter()
            .all(|c| c.scalar_signal.is_some_and(|s| (0.0..=1.0).contains(&s))));
        let peak = grid.cell(rep.cluster_centers[0]).scalar_signal.unwrap();
        assert!((peak - 1.0).abs() < 1e-12);
    }
}
