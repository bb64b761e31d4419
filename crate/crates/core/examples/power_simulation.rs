//! A small power study: AUC of the region score for telling paired null
//! and non-null datasets apart, by sample size and depth.

use msdiff::simulate::{run_design, DesignGrid};
use msdiff::types::AnalysisConfig;

fn main() -> msdiff::Result<()> {
    let grid = DesignGrid {
        n_bins: 16,
        pairs_per_cell: 30,
        sample_sizes: vec![4, 8],
        depths: vec![0.25, 1.0],
        ..Default::default()
    };
    println!("sample_size\tdepth\tauc");
    for cell in run_design(&grid, &AnalysisConfig::default())? {
        println!("{}\t{}\t{:.3}", cell.cell.sample_size, cell.cell.depth, cell.auc()?);
    }
    Ok(())
}
