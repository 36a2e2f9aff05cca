//! Monte Carlo check of the synthetic context halo: the context share of
//! non-target patch slots decays as exp(-distance / halo_decay).

use ctxsurvey::synthworld::{generate_world, SynthParams};

/// Relative tolerance on the density ratio between two distances.
const RATIO_TOL: f64 = 0.15;

#[test]
fn context_share_decays_exponentially() {
    let halo_decay = 3.0;
    let (near, far) = (0usize, 6usize);
    let (mut sums, mut counts) = ([0.0f64; 2], [0usize; 2]);
    for seed in 0..40 {
        let params = SynthParams {
            seed,
            halo_decay,
            ..SynthParams::default()
        };
        let (grid, report) = generate_world(&params).unwrap();
        for i in 0..grid.len() {
            let slot = match report.distance[i] {
                d if d == near => 0,
                d if d == far => 1,
                _ => continue,
            };
            sums[slot] += report.context_density[i];
            counts[slot] += 1;
        }
    }
    let density = |k: usize| sums[k] / counts[k] as f64;
    let expected = ((far - near) as f64 / halo_decay).exp();
    let ratio = density(0) / density(1);
    assert!(
        (ratio / expected - 1.0).abs() < RATIO_TOL,
        "ratio {ratio:.3}, expected {expected:.3} (n = {counts:?})"
    );
    assert!(
        (density(0) - 1.0).abs() < 1e-12,
        "target cells hold only context besides targets"
    );
}

#[test]
fn counts_match_density() {
    let (grid, report) = generate_world(&SynthParams::default()).unwrap();
    let ppc = SynthParams::default().patches_per_cell;
    for i in 0..grid.len() {
        let free = ppc
            - report
                .target_cells
                .iter()
                .position(|&c| grid.offset(c) == i)
                .map_or(0, |k| report.target_patches[k].len());
        let expected = report.context_counts[i] as f64 / free as f64;
        assert!((report.context_density[i] - expected).abs() < 1e-12);
    }
}
