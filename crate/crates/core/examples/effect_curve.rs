//! Posterior effect curve of one region, with bins whose interval
//! excludes zero marked.

use msdiff::effects::flag_significant_bins;
use msdiff::pipeline::run_region;
use msdiff::simulate::{demo_templates, simulate_dataset, SimulationSpec};
use msdiff::types::AnalysisConfig;

fn main() -> msdiff::Result<()> {
    let template = &demo_templates(1, 32, 20.0, 5)[0];
    let spec = SimulationSpec {
        base_intensity: template.base_intensity.clone(),
        effect: template.effect.clone(),
        n_per_group: 10,
        depth_multiplier: 6.0,
        dispersion: 0.05,
        seed: 8,
    };
    let (counts, x) = simulate_dataset(&spec)?;
    let result = run_region(&counts, &x, &AnalysisConfig::default())?;
    let curve = &result.curve;
    println!("bin true estimate sd");
    for b in 0..curve.n_bins() {
        println!(
            "{:>3} {:+.2} {:+.2} {:.2}",
            b + 1,
            spec.effect[b],
            curve.mean[b],
            curve.sd[b]
        );
    }
    for z in [2.0, 3.0] {
        let s = flag_significant_bins(curve, z);
        let spans: Vec<String> = s
            .intervals
            .iter()
            .map(|i| format!("bins {}..{} ({})", i.start, i.end, i.direction))
            .collect();
        println!("z = {z}: [{}]", spans.join(", "));
    }
    Ok(())
}
