//! Per-region analysis and batch orchestration.
//!
//! Under translation-invariant analysis every circular shift visits the
//! same cyclic windows, so each distinct `(scale, start)` window is fitted
//! once and shared by all shifts that contain it.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ebshrink::{build_sigma_grid, fit_by_scale, posterior_moments, ti_average, MixturePrior, NormalObservation};
use crate::effects::{
    effect_posterior_taylor, flag_significant_bins, EffectCurve, NodePosterior, SignificantIntervals, TotalPosterior,
};
use crate::error::{Error, Result};
use crate::glm::{fit_binomial_node, fit_total_binomial, fit_total_poisson, NodeEstimate, TotalEffectEstimate};
use crate::inference::{lr_statistic, permutation_null, NullReference, NullSource};
use crate::mstransform::{n_scales, nodes, window_start, WindowSums};
use crate::types::{derive_seed, validate, AnalysisConfig, CountsMatrix, Covariate, TotalModel};

/// Fit of one cyclic window: `scale` fixes its length `B / 2^(scale-1)`,
/// `start` its first bin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowFit {
    pub scale: u32,
    pub start: usize,
    pub estimate: NodeEstimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionResult {
    pub region_id: String,
    /// Bins analysed, padding included.
    pub n_bins: usize,
    pub original_bins: usize,
    pub log_lambda: f64,
    /// The multiscale part of `log_lambda`, without the total term.
    pub log_lambda_multiscale: f64,
    pub total: TotalEffectEstimate,
    pub shifts: Vec<usize>,
    pub windows: Vec<WindowFit>,
    pub beta_priors: BTreeMap<u32, MixturePrior>,
    pub mu_priors: BTreeMap<u32, MixturePrior>,
    /// Effect curve over the original bins.
    pub curve: EffectCurve,
    pub significant: SignificantIntervals,
}

/// Shifts analysed for `n_bins` bins under `config`.
pub fn analysis_shifts(n_bins: usize, config: &AnalysisConfig) -> Vec<usize> {
    if config.ti_enabled {
        (0..n_bins).step_by(config.ti_stride.max(1)).collect()
    } else {
        vec![0]
    }
}

struct Fitted {
    shifts: Vec<usize>,
    windows: Vec<WindowFit>,
    beta_obs: Vec<NormalObservation>,
    beta_priors: BTreeMap<u32, MixturePrior>,
    log_lambda_multiscale: f64,
    total: TotalEffectEstimate,
}

fn fit_windows(
    counts: &CountsMatrix,
    x: &Covariate,
    shifts: &[usize],
    config: &AnalysisConfig,
) -> Result<Vec<WindowFit>> {
    let b = counts.n_bins();
    let sums = counts.rows().map(WindowSums::new).collect::<Result<Vec<_>>>()?;
    let mut cache: HashMap<Vec<(u64, u64)>, NodeEstimate> = HashMap::new();
    let mut out = Vec::new();
    for s in 1..=n_scales(b) {
        let len = b >> (s - 1);
        let starts: BTreeSet<usize> = shifts
            .iter()
            .flat_map(|&k| (0..1usize << (s - 1)).map(move |l| (k + l * len) % b))
            .collect();
        for start in starts {
            let halves: Vec<(u64, u64)> = sums.iter().map(|w| w.half_sums(s, start)).collect();
            let estimate = match cache.get(&halves) {
                Some(e) => e.clone(),
                None => {
                    let succ: Vec<u64> = halves.iter().map(|h| h.0).collect();
                    let trials: Vec<u64> = halves.iter().map(|h| h.0 + h.1).collect();
                    let e = fit_binomial_node(&succ, &trials, x, &config.glmm_options)?;
                    cache.insert(halves, e.clone());
                    e
                }
            };
            out.push(WindowFit {
                scale: s,
                start,
                estimate,
            });
        }
    }
    Ok(out)
}

fn fit_total(counts: &CountsMatrix, x: &Covariate, config: &AnalysisConfig) -> Result<TotalEffectEstimate> {
    let totals = counts.totals();
    match config.total_model {
        TotalModel::PoissonRegression => fit_total_poisson(&totals, x, &config.glmm_options),
        TotalModel::BinomialRegression => fit_total_binomial(&totals, x, &config.glmm_options),
    }
}

fn shrinkage(obs: &[NormalObservation], n_bins: usize, config: &AnalysisConfig) -> BTreeMap<u32, MixturePrior> {
    let grid = build_sigma_grid(obs, &config.sigma_grid_policy).unwrap_or_default();
    fit_by_scale(obs, 1..=n_scales(n_bins), &grid, &config.em_options())
        .into_iter()
        .map(|(s, f)| (s, f.prior))
        .collect()
}

fn fit_region(
    counts: &CountsMatrix,
    x: &Covariate,
    config: &AnalysisConfig,
    external: Option<&TotalEffectEstimate>,
) -> Result<Fitted> {
    config.check()?;
    let (counts, x) = validate(counts.clone(), x.clone())?;
    let shifts = analysis_shifts(counts.n_bins(), config);
    let windows = fit_windows(&counts, &x, &shifts, config)?;
    let beta_obs: Vec<NormalObservation> = windows
        .iter()
        .map(|w| NormalObservation {
            estimate: w.estimate.beta_hat,
            se: w.estimate.se_beta,
            scale: w.scale,
            shift: w.start,
        })
        .collect();
    let beta_priors = shrinkage(&beta_obs, counts.n_bins(), config);
    let log_lambda_multiscale = lr_statistic(&beta_obs, &beta_priors, None, false);
    let total = match external {
        Some(t) => t.clone(),
        None => fit_total(&counts, &x, config)?,
    };
    Ok(Fitted {
        shifts,
        windows,
        beta_obs,
        beta_priors,
        log_lambda_multiscale,
        total,
    })
}

fn combine(fitted: &Fitted, config: &AnalysisConfig) -> f64 {
    let mut out = fitted.log_lambda_multiscale;
    if config.include_total {
        out += fitted.total.log_likelihood_ratio();
    }
    out
}

/// `log Λ` only, skipping the effect curve.
pub fn region_statistic(counts: &CountsMatrix, x: &Covariate, config: &AnalysisConfig) -> Result<f64> {
    let fitted = fit_region(counts, x, config, None)?;
    Ok(combine(&fitted, config))
}

fn baseline_log_total(counts: &CountsMatrix, x: &Covariate, total: &TotalEffectEstimate) -> f64 {
    let mean_lib = x.library_sizes.iter().sum::<f64>() / x.len() as f64;
    let totals = counts.totals();
    let rates: Vec<f64> = totals
        .iter()
        .zip(&x.values)
        .zip(&x.library_sizes)
        .filter(|((_, v), _)| **v == 0.0)
        .map(|((t, _), l)| *t as f64 / l)
        .collect();
    let rate = rates.iter().sum::<f64>() / rates.len().max(1) as f64;
    if !rates.is_empty() && rate > 0.0 {
        (rate * mean_lib).ln()
    } else {
        total.intercept_hat + mean_lib.ln()
    }
}

pub fn run_region(counts: &CountsMatrix, x: &Covariate, config: &AnalysisConfig) -> Result<RegionResult> {
    run_region_with_total(counts, x, config, None)
}

/// As [`run_region`], with an externally computed total effect in place of
/// the built-in total-intensity fit.
pub fn run_region_with_total(
    counts: &CountsMatrix,
    x: &Covariate,
    config: &AnalysisConfig,
    external: Option<&TotalEffectEstimate>,
) -> Result<RegionResult> {
    let fitted = fit_region(counts, x, config, external)?;
    let log_lambda = combine(&fitted, config);
    let b = counts.n_bins();

    let mu_obs: Vec<NormalObservation> = fitted
        .windows
        .iter()
        .map(|w| NormalObservation {
            estimate: w.estimate.mu_star_hat,
            se: w.estimate.se_mu_star,
            scale: w.scale,
            shift: w.start,
        })
        .collect();
    let mu_priors = shrinkage(&mu_obs, b, config);

    let mut posteriors: HashMap<(u32, usize), NodePosterior> = HashMap::new();
    for ((w, bo), mo) in fitted.windows.iter().zip(&fitted.beta_obs).zip(&mu_obs) {
        let post = NodePosterior {
            mu_star: posterior_moments(mo, &mu_priors[&w.scale]),
            beta: posterior_moments(bo, &fitted.beta_priors[&w.scale]),
            centering: w.estimate.centering_constant,
        };
        posteriors.insert((w.scale, w.start), post);
    }

    let t = &fitted.total;
    let total_post = TotalPosterior {
        log_fc_mean: t.log_fc_hat,
        log_fc_var: if t.se_log_fc.is_finite() {
            t.se_log_fc * t.se_log_fc
        } else {
            0.0
        },
        baseline_log_total: baseline_log_total(counts, x, t),
    };
    let mut curves = Vec::with_capacity(fitted.shifts.len());
    for &k in &fitted.shifts {
        let tree: Vec<NodePosterior> = nodes(b)
            .map(|node| {
                posteriors
                    .get(&(node.scale, window_start(node, k, b)))
                    .copied()
                    .ok_or_else(|| Error::Numeric(format!("missing window for node {node:?} at shift {k}")))
            })
            .collect::<Result<_>>()?;
        curves.push((k, effect_posterior_taylor(&tree, &total_post)?));
    }
    let curve = ti_average(&curves)?.truncated(counts.original_bins());
    let significant = flag_significant_bins(&curve, config.z_threshold);

    Ok(RegionResult {
        region_id: counts.region_id.clone(),
        n_bins: b,
        original_bins: counts.original_bins(),
        log_lambda,
        log_lambda_multiscale: fitted.log_lambda_multiscale,
        total: fitted.total,
        shifts: fitted.shifts,
        windows: fitted.windows,
        beta_priors: fitted.beta_priors,
        mu_priors,
        curve,
        significant,
    })
}

/// Regions sharing one covariate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionBatch {
    pub regions: Vec<CountsMatrix>,
    pub covariate: Covariate,
}

impl RegionBatch {
    pub fn new(regions: Vec<CountsMatrix>, covariate: Covariate) -> Result<Self> {
        let mut ids = BTreeSet::new();
        for r in &regions {
            if r.n_samples() != covariate.len() {
                return Err(Error::DimensionMismatch(format!(
                    "region {} has {} samples, covariate has {}",
                    r.region_id,
                    r.n_samples(),
                    covariate.len()
                )));
            }
            if !ids.insert(r.region_id.as_str()) {
                return Err(Error::InvalidInput(format!("duplicate region id {}", r.region_id)));
            }
        }
        Ok(RegionBatch { regions, covariate })
    }

    pub fn get(&self, region_id: &str) -> Option<&CountsMatrix> {
        self.regions.iter().find(|r| r.region_id == region_id)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionOutcome {
    pub region_id: String,
    pub result: std::result::Result<RegionResult, String>,
}

/// Analyses every region in parallel. A failing region is logged and
/// reported in its outcome; the rest of the batch proceeds. Output order
/// follows input order.
pub fn analyze_batch(batch: &RegionBatch, config: &AnalysisConfig) -> Vec<RegionOutcome> {
    analyze_batch_with_totals(batch, config, &BTreeMap::new())
}

/// As [`analyze_batch`], taking total effects from `totals` for the regions
/// listed there.
pub fn analyze_batch_with_totals(
    batch: &RegionBatch,
    config: &AnalysisConfig,
    totals: &BTreeMap<String, TotalEffectEstimate>,
) -> Vec<RegionOutcome> {
    batch
        .regions
        .par_iter()
        .map(|r| {
            let result = run_region_with_total(r, &batch.covariate, config, totals.get(&r.region_id)).map_err(|e| {
                log::warn!("region {} failed: {e}", r.region_id);
                e.to_string()
            });
            RegionOutcome {
                region_id: r.region_id.clone(),
                result,
            }
        })
        .collect()
}

/// `log Λ` for every region; failures become `Err` entries.
pub fn batch_statistics(
    batch: &RegionBatch,
    config: &AnalysisConfig,
) -> Vec<(String, std::result::Result<f64, String>)> {
    batch
        .regions
        .par_iter()
        .map(|r| {
            let s = region_statistic(r, &batch.covariate, config).map_err(|e| {
                log::warn!("region {} failed: {e}", r.region_id);
                e.to_string()
            });
            (r.region_id.clone(), s)
        })
        .collect()
}

/// Permutation statistics from every region of the batch, pooled. Region
/// `i` uses seed `derive_seed(seed, i)`; failing regions are skipped.
pub fn batch_permutation_null(
    batch: &RegionBatch,
    config: &AnalysisConfig,
    n_perms: usize,
    seed: u64,
) -> Result<NullReference> {
    if n_perms < 1 {
        return Err(Error::InvalidInput("at least one permutation is required".into()));
    }
    let parts: Vec<NullReference> = batch
        .regions
        .par_iter()
        .enumerate()
        .filter_map(|(i, r)| {
            match permutation_null(r, &batch.covariate, config, n_perms, derive_seed(seed, i as u64)) {
                Ok(n) => Some(n),
                Err(e) => {
                    log::warn!("region {} skipped in null: {e}", r.region_id);
                    None
                }
            }
        })
        .collect();
    let pooled = NullReference::pooled(parts)?;
    if pooled.is_empty() {
        return Err(Error::EmptyNull);
    }
    Ok(pooled)
}

/// A control-versus-control batch scored as is.
pub fn control_null(batch: &RegionBatch, config: &AnalysisConfig) -> Result<NullReference> {
    let statistics: Vec<f64> = batch_statistics(batch, config)
        .into_iter()
        .filter_map(|(_, s)| s.ok())
        .collect();
    if statistics.is_empty() {
        return Err(Error::EmptyNull);
    }
    Ok(NullReference::new(statistics, NullSource::ControlVsControl))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_groups() -> Covariate {
        Covariate::groups(vec![0.0, 0.0, 0.0, 1.0, 1.0, 1.0]).unwrap()
    }

    #[test]
    fn zero_region_is_flat_and_null() {
        let counts = CountsMatrix::new(vec![vec![0; 8]; 6], 1, "z").unwrap();
        let r = run_region(&counts, &two_groups(), &AnalysisConfig::default()).unwrap();
        assert!(r.windows.iter().all(|w| !w.estimate.informative));
        assert_eq!(r.log_lambda, 0.0);
        assert!(r.curve.mean.iter().all(|m| *m == 0.0), "{:?}", r.curve.mean);
        assert!(r.significant.intervals.is_empty());
    }

    #[test]
    fn ti_window_count() {
        let row: Vec<u64> = (0..16).map(|b| 5 + b % 3).collect();
        let counts = CountsMatrix::new(vec![row; 6], 1, "r").unwrap();
        let cfg = AnalysisConfig::default();
        let r = run_region(&counts, &two_groups(), &cfg).unwrap();
        assert_eq!(r.windows.len(), 16 * 4);
        let no_ti = AnalysisConfig {
            ti_enabled: false,
            ..cfg
        };
        let r = run_region(&counts, &two_groups(), &no_ti).unwrap();
        assert_eq!(r.windows.len(), 15);
    }

    #[test]
    fn derived_seeds_differ() {
        let s: BTreeSet<u64> = (0..1000).map(|i| derive_seed(7, i)).collect();
        assert_eq!(s.len(), 1000);
        assert_eq!(derive_seed(7, 3), derive_seed(7, 3));
    }
}
