#![allow(dead_code)]

use msdiff::pipeline::RegionBatch;
use msdiff::simulate::{demo_templates, simulate_dataset, SimulationSpec};

/// `count` simulated regions of `n_bins` bins, half of them with an effect,
/// four samples per group.
pub fn toy_batch(count: usize, n_bins: usize, seed: u64) -> RegionBatch {
    let templates = demo_templates(count, n_bins, 10.0, seed);
    let mut regions = Vec::new();
    let mut covariate = None;
    for (i, t) in templates.iter().enumerate() {
        let effect = if i % 2 == 0 {
            t.effect.clone()
        } else {
            vec![0.0; n_bins]
        };
        let spec = SimulationSpec {
            base_intensity: t.base_intensity.clone(),
            effect,
            n_per_group: 4,
            depth_multiplier: 1.0,
            dispersion: 0.1,
            seed: msdiff::types::derive_seed(seed, i as u64),
        };
        let (mut counts, x) = simulate_dataset(&spec).unwrap();
        counts.region_id = format!("r{i:02}");
        regions.push(counts);
        covariate = Some(x);
    }
    RegionBatch::new(regions, covariate.unwrap()).unwrap()
}
