//! Shared data model: per-sample binned counts, the sample covariate and the
//! analysis configuration.

use serde::{Deserialize, Serialize};

use crate::ebshrink::{EmOptions, GridPolicy};
use crate::error::{Error, Result};
use crate::glm::GlmmOptions;

/// Binned counts for one region, `n` samples by `B` bins, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountsMatrix {
    counts: Vec<u64>,
    n_samples: usize,
    n_bins: usize,
    pub bin_width: u32,
    pub region_id: String,
    /// Zero bins appended on the right to reach a power of two.
    #[serde(default)]
    pub pad_width: usize,
}

impl CountsMatrix {
    pub fn new(rows: Vec<Vec<u64>>, bin_width: u32, region_id: impl Into<String>) -> Result<Self> {
        let n_samples = rows.len();
        if n_samples == 0 {
            return Err(Error::DimensionMismatch("counts matrix has no samples".into()));
        }
        let n_bins = rows[0].len();
        if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != n_bins) {
            return Err(Error::DimensionMismatch(format!(
                "sample {i} has {} bins, expected {n_bins}",
                r.len()
            )));
        }
        if bin_width == 0 {
            return Err(Error::InvalidInput("bin width must be positive".into()));
        }
        Ok(CountsMatrix {
            counts: rows.into_iter().flatten().collect(),
            n_samples,
            n_bins,
            bin_width,
            region_id: region_id.into(),
            pad_width: 0,
        })
    }

    /// Builds a matrix from signed values, rejecting negative entries.
    pub fn from_signed(rows: Vec<Vec<i64>>, bin_width: u32, region_id: impl Into<String>) -> Result<Self> {
        let mut out = Vec::with_capacity(rows.len());
        for (i, r) in rows.into_iter().enumerate() {
            let mut row = Vec::with_capacity(r.len());
            for (b, v) in r.into_iter().enumerate() {
                if v < 0 {
                    return Err(Error::NegativeCount {
                        sample: i,
                        bin: b,
                        value: v,
                    });
                }
                row.push(v as u64);
            }
            out.push(row);
        }
        Self::new(out, bin_width, region_id)
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn n_bins(&self) -> usize {
        self.n_bins
    }

    /// Number of bins before right padding.
    pub fn original_bins(&self) -> usize {
        self.n_bins - self.pad_width
    }

    pub fn row(&self, sample: usize) -> &[u64] {
        &self.counts[sample * self.n_bins..(sample + 1) * self.n_bins]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[u64]> {
        self.counts.chunks(self.n_bins)
    }

    pub fn get(&self, sample: usize, bin: usize) -> u64 {
        self.counts[sample * self.n_bins + bin]
    }

    /// Per-sample totals over all bins.
    pub fn totals(&self) -> Vec<u64> {
        self.rows().map(|r| r.iter().sum()).collect()
    }

    /// Right-pads every sample with zero bins up to the next power of two.
    pub fn pad_to_power_of_two(mut self) -> Self {
        let target = self.n_bins.next_power_of_two().max(2);
        if target == self.n_bins {
            return self;
        }
        let extra = target - self.n_bins;
        let mut counts = Vec::with_capacity(self.n_samples * target);
        for r in self.counts.chunks(self.n_bins) {
            counts.extend_from_slice(r);
            counts.extend(std::iter::repeat_n(0, extra));
        }
        self.counts = counts;
        self.n_bins = target;
        self.pad_width += extra;
        self
    }

    /// Sums each run of `k` adjacent bins; a short trailing run is kept.
    pub fn rebin(&self, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidInput("rebin factor must be positive".into()));
        }
        if k == 1 {
            return Ok(self.clone());
        }
        let rows = self
            .rows()
            .map(|r| r.chunks(k).map(|c| c.iter().sum()).collect())
            .collect();
        let width = self
            .bin_width
            .checked_mul(k as u32)
            .ok_or_else(|| Error::InvalidInput("rebinned width overflows".into()))?;
        CountsMatrix::new(rows, width, self.region_id.clone())
    }

    /// Copy of the matrix with samples reordered (`order[i]` is the old index
    /// of new sample `i`).
    pub fn select_samples(&self, order: &[usize]) -> Self {
        let rows = order.iter().map(|&i| self.row(i).to_vec()).collect();
        let mut m =
            CountsMatrix::new(rows, self.bin_width, self.region_id.clone()).expect("selection of a valid matrix");
        m.pad_width = self.pad_width;
        m
    }
}

/// Sample-level covariate `X` and library sizes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Covariate {
    pub values: Vec<f64>,
    pub library_sizes: Vec<f64>,
}

impl Covariate {
    pub fn new(values: Vec<f64>, library_sizes: Vec<f64>) -> Result<Self> {
        let c = Covariate { values, library_sizes };
        c.check()?;
        Ok(c)
    }

    /// Covariate with unit library sizes.
    pub fn groups(values: Vec<f64>) -> Result<Self> {
        let n = values.len();
        Self::new(values, vec![1.0; n])
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Same library sizes, covariate values reordered by `perm`.
    pub fn permuted(&self, perm: &[f64]) -> Self {
        Covariate {
            values: perm.to_vec(),
            library_sizes: self.library_sizes.clone(),
        }
    }

    fn check(&self) -> Result<()> {
        if self.values.len() != self.library_sizes.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} covariate values but {} library sizes",
                self.values.len(),
                self.library_sizes.len()
            )));
        }
        if let Some(v) = self.values.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("non-finite covariate value {v}")));
        }
        if let Some(&l) = self.library_sizes.iter().find(|&&l| !(l > 0.0 && l.is_finite())) {
            return Err(Error::InvalidLibrarySize(l));
        }
        let first = self.values.first().copied().unwrap_or(0.0);
        if self.values.iter().all(|&v| v == first) {
            return Err(Error::ConstantCovariate);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TotalModel {
    #[default]
    PoissonRegression,
    BinomialRegression,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnalysisConfig {
    pub sigma_grid_policy: GridPolicy,
    pub em_tolerance: f64,
    pub em_max_iter: usize,
    /// Dirichlet weight on the point-mass proportion; 1 is plain maximum
    /// likelihood.
    pub em_null_weight: f64,
    pub glmm_options: GlmmOptions,
    pub ti_enabled: bool,
    /// Stride between analysed circular shifts when `ti_enabled`.
    pub ti_stride: usize,
    pub rng_seed: u64,
    pub n_permutations: usize,
    /// Add the region-total likelihood ratio to log Λ.
    pub include_total: bool,
    pub total_model: TotalModel,
    /// λ* of the π̂₀ estimate used for q-values.
    pub qvalue_lambda: f64,
    pub z_threshold: f64,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            sigma_grid_policy: GridPolicy::default(),
            em_tolerance: 1e-7,
            em_max_iter: 500,
            em_null_weight: 10.0,
            glmm_options: GlmmOptions::default(),
            ti_enabled: true,
            ti_stride: 1,
            rng_seed: 1,
            n_permutations: 99,
            include_total: true,
            total_model: TotalModel::PoissonRegression,
            qvalue_lambda: 0.5,
            z_threshold: 2.0,
        }
    }
}

impl AnalysisConfig {
    pub fn check(&self) -> Result<()> {
        if !(self.em_tolerance > 0.0) {
            return Err(Error::InvalidInput("em_tolerance must be > 0".into()));
        }
        if self.em_max_iter < 1 {
            return Err(Error::InvalidInput("em_max_iter must be >= 1".into()));
        }
        if !(self.em_null_weight >= 1.0) {
            return Err(Error::InvalidInput("em_null_weight must be >= 1".into()));
        }
        if self.ti_stride < 1 {
            return Err(Error::InvalidInput("ti_stride must be >= 1".into()));
        }
        if !(self.qvalue_lambda > 0.0 && self.qvalue_lambda < 1.0) {
            return Err(Error::InvalidInput("qvalue_lambda must lie in (0, 1)".into()));
        }
        if !(self.z_threshold > 0.0) {
            return Err(Error::InvalidInput("z_threshold must be > 0".into()));
        }
        self.glmm_options.check()?;
        self.sigma_grid_policy.check()
    }

    pub fn em_options(&self) -> EmOptions {
        EmOptions {
            tol: self.em_tolerance,
            max_iter: self.em_max_iter,
            null_weight: self.em_null_weight,
        }
    }
}

/// splitmix64 of `seed` combined with `index`, for per-item seeds.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed
        ^ index
            .wrapping_mul(0x9E37_79B9_7F4A_7C15)
            .wrapping_add(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Checks that counts and covariate agree and that every invariant holds.
pub fn validate(counts: CountsMatrix, x: Covariate) -> Result<(CountsMatrix, Covariate)> {
    x.check()?;
    if counts.n_samples() != x.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} samples in counts but {} covariate values",
            counts.n_samples(),
            x.len()
        )));
    }
    let b = counts.n_bins();
    if b < 2 || !b.is_power_of_two() {
        return Err(Error::NotPowerOfTwo(b));
    }
    Ok((counts, x))
}
