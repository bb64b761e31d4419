//! The file workflow: write a counts table, read it back, score every
//! region, build a pooled permutation null and report q-values.

use msdiff::inference::{empirical_pvalues, qvalues};
use msdiff::io::{format_counts_tsv, read_counts_tsv, write_text};
use msdiff::pipeline::{analyze_batch, batch_permutation_null, RegionBatch};
use msdiff::simulate::{demo_templates, simulate_dataset, SimulationSpec};
use msdiff::types::AnalysisConfig;

fn main() -> msdiff::Result<()> {
    let mut regions = Vec::new();
    let mut covariate = None;
    for (i, t) in demo_templates(8, 16, 10.0, 2).iter().enumerate() {
        let spec = SimulationSpec {
            base_intensity: t.base_intensity.clone(),
            effect: if i < 3 { t.effect.clone() } else { vec![0.0; 16] },
            n_per_group: 4,
            depth_multiplier: 2.0,
            dispersion: 0.1,
            seed: i as u64,
        };
        let (mut counts, x) = simulate_dataset(&spec)?;
        counts.region_id = format!("region{i}");
        regions.push(counts);
        covariate = Some(x);
    }
    let batch = RegionBatch::new(regions, covariate.unwrap())?;

    let dir = tempfile::tempdir().expect("temporary directory");
    let path = dir.path().join("counts.tsv");
    write_text(&path, &format_counts_tsv(&batch))?;
    let batch = read_counts_tsv(&path, 1)?;

    let cfg = AnalysisConfig::default();
    let outcomes = analyze_batch(&batch, &cfg);
    let stats: Vec<f64> = outcomes.iter().map(|o| o.result.as_ref().unwrap().log_lambda).collect();
    let null = batch_permutation_null(&batch, &cfg, 35, 9)?;
    let p = empirical_pvalues(&stats, &null)?;
    let q = qvalues(&p, 0.5)?;
    println!("region\tlog_lambda\tp\tq");
    for (i, o) in outcomes.iter().enumerate() {
        println!("{}\t{:.3}\t{:.4}\t{:.4}", o.region_id, stats[i], p[i], q[i]);
    }
    Ok(())
}
