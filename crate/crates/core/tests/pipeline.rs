mod common;

use msdiff::io::parse_counts_tsv;
use msdiff::pipeline::{analyze_batch, run_region, RegionBatch};
use msdiff::types::{AnalysisConfig, CountsMatrix, Covariate};

#[test]
fn duplicated_rows_show_no_difference() {
    let rows = [
        vec![3, 0, 5, 2, 8, 1, 0, 4],
        vec![1, 2, 6, 0, 9, 3, 1, 2],
        vec![0, 1, 4, 3, 7, 0, 2, 5],
    ];
    let all: Vec<Vec<u64>> = rows.iter().chain(rows.iter()).cloned().collect();
    let counts = CountsMatrix::new(all, 1, "dup").unwrap();
    let x = Covariate::groups(vec![0.0, 0.0, 0.0, 1.0, 1.0, 1.0]).unwrap();
    let res = run_region(&counts, &x, &AnalysisConfig::default()).unwrap();
    assert!(res.log_lambda.abs() < 1e-6, "log lambda {}", res.log_lambda);
    assert!(res.significant.intervals.is_empty());
}

#[test]
fn region_order_does_not_change_values() {
    let batch = common::toy_batch(6, 16, 21);
    let cfg = AnalysisConfig::default();
    let forward = analyze_batch(&batch, &cfg);
    let mut reversed_regions = batch.regions.clone();
    reversed_regions.reverse();
    let reversed = analyze_batch(
        &RegionBatch::new(reversed_regions, batch.covariate.clone()).unwrap(),
        &cfg,
    );
    for (a, b) in forward.iter().zip(reversed.iter().rev()) {
        assert_eq!(a.region_id, b.region_id);
        assert_eq!(a.result, b.result);
    }
}

#[test]
fn padding_matches_explicit_zero_bins() {
    let six = "#X:\t0\t0\t1\t1\nregion_id\tbin\ta\tb\tc\td\n\
               r\t0\t4\t2\t9\t7\nr\t1\t0\t1\t3\t2\nr\t2\t5\t6\t1\t0\n\
               r\t3\t2\t2\t8\t6\nr\t4\t7\t3\t2\t4\nr\t5\t1\t0\t6\t5\n";
    let eight = format!("{six}r\t6\t0\t0\t0\t0\nr\t7\t0\t0\t0\t0\n");
    let padded = parse_counts_tsv(six, 1).unwrap();
    let explicit = parse_counts_tsv(&eight, 1).unwrap();
    assert_eq!(padded.regions[0].pad_width, 2);
    let cfg = AnalysisConfig::default();
    let a = run_region(&padded.regions[0], &padded.covariate, &cfg).unwrap();
    let b = run_region(&explicit.regions[0], &explicit.covariate, &cfg).unwrap();
    assert_eq!(a.curve.n_bins(), 6);
    assert_eq!(b.curve.n_bins(), 8);
    for k in 0..6 {
        assert!((a.curve.mean[k] - b.curve.mean[k]).abs() < 1e-10);
        assert!((a.curve.sd[k] - b.curve.sd[k]).abs() < 1e-10);
    }
    assert!((a.log_lambda - b.log_lambda).abs() < 1e-10);
}

#[test]
fn rerun_gives_identical_json() {
    let batch = common::toy_batch(3, 16, 5);
    let cfg = AnalysisConfig::default();
    let a = serde_json::to_string(&analyze_batch(&batch, &cfg)).unwrap();
    let b = serde_json::to_string(&analyze_batch(&batch, &cfg)).unwrap();
    assert_eq!(a, b);
}

#[test]
fn swapping_group_labels_keeps_the_statistic() {
    let batch = common::toy_batch(4, 16, 33);
    let cfg = AnalysisConfig::default();
    let flipped = Covariate::new(
        batch.covariate.values.iter().map(|v| 1.0 - v).collect(),
        batch.covariate.library_sizes.clone(),
    )
    .unwrap();
    for r in &batch.regions {
        let a = run_region(r, &batch.covariate, &cfg).unwrap();
        let b = run_region(r, &flipped, &cfg).unwrap();
        assert!(
            (a.log_lambda - b.log_lambda).abs() < 1e-5 * (1.0 + a.log_lambda.abs()),
            "{}: {} vs {}",
            r.region_id,
            a.log_lambda,
            b.log_lambda
        );
        for k in 0..a.curve.n_bins() {
            assert!((a.curve.mean[k] + b.curve.mean[k]).abs() < 1e-4, "bin {k}");
        }
    }
}

#[test]
fn failing_region_does_not_stop_the_batch() {
    let mut batch = common::toy_batch(3, 16, 8);
    // a region the shape checks reject once it reaches the pipeline
    let odd = CountsMatrix::new(vec![vec![1, 2, 3]; batch.covariate.len()], 1, "odd").unwrap();
    batch.regions.insert(1, odd);
    let out = analyze_batch(&batch, &AnalysisConfig::default());
    assert_eq!(out.len(), 4);
    assert!(out[1].result.is_err());
    assert!(out[0].result.is_ok() && out[2].result.is_ok() && out[3].result.is_ok());
}
