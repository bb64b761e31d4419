//! Binomial mixed models for the per-node log-ratios and Poisson/binomial
//! models for the region totals.
//!
//! Each node's data is `n` binomial observations (first-half count out of
//! the node total per sample) with logit `μ + β X^i + u^i`, `u^i ~ N(0, τ²)`.
//! Estimates are reported in centered coordinates `μ* = μ + cβ`, where `c`
//! is the information-weighted covariate mean, so that the observed
//! information for `(μ*, β)` is diagonal at the fit.

mod family;
mod laplace;
mod quadrature;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::Covariate;

use family::Obs;
use laplace::{fit_profile, ProfileFit, SEPARATION_BOUND};

pub use quadrature::gauss_hermite;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GlmmOptions {
    pub max_iter: usize,
    pub convergence_tol: f64,
    /// Nodes with fewer total trials carry no information.
    pub min_total_trials: u64,
    pub random_effect: bool,
    /// 1 is the Laplace approximation; more points use adaptive
    /// Gauss–Hermite quadrature.
    pub laplace_quadrature_points: usize,
    /// Search range for the random-effect standard deviation.
    pub tau_min: f64,
    pub tau_max: f64,
    /// Bracket width on `log τ` at which the profile search stops.
    pub tau_search_tol: f64,
}

impl Default for GlmmOptions {
    fn default() -> Self {
        GlmmOptions {
            max_iter: 100,
            convergence_tol: 1e-10,
            min_total_trials: 1,
            random_effect: true,
            laplace_quadrature_points: 1,
            tau_min: 0.02,
            tau_max: 5.0,
            tau_search_tol: 0.02,
        }
    }
}

impl GlmmOptions {
    pub fn check(&self) -> Result<()> {
        if !(self.convergence_tol > 0.0) {
            return Err(Error::InvalidInput("convergence_tol must be > 0".into()));
        }
        if self.max_iter == 0 || self.laplace_quadrature_points == 0 {
            return Err(Error::InvalidInput(
                "max_iter and quadrature points must be >= 1".into(),
            ));
        }
        if !(self.tau_min > 0.0 && self.tau_max > self.tau_min && self.tau_search_tol > 0.0) {
            return Err(Error::InvalidInput(
                "need 0 < tau_min < tau_max and tau_search_tol > 0".into(),
            ));
        }
        Ok(())
    }

    pub fn fixed_effects() -> Self {
        GlmmOptions {
            random_effect: false,
            ..Default::default()
        }
    }
}

/// Normal summary of one node's binomial mixed-model fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeEstimate {
    pub mu_star_hat: f64,
    pub se_mu_star: f64,
    pub beta_hat: f64,
    pub se_beta: f64,
    pub centering_constant: f64,
    pub informative: bool,
    pub tau2_hat: f64,
    /// False when the optimizer hit `max_iter`; the node is then uninformative.
    pub converged: bool,
}

impl NodeEstimate {
    fn uninformative(x: &[f64], converged: bool) -> Self {
        NodeEstimate {
            mu_star_hat: 0.0,
            se_mu_star: f64::INFINITY,
            beta_hat: 0.0,
            se_beta: f64::INFINITY,
            centering_constant: x.iter().sum::<f64>() / x.len() as f64,
            informative: false,
            tau2_hat: 0.0,
            converged,
        }
    }

    /// Intercept in the uncentered parameterization.
    pub fn mu_hat(&self) -> f64 {
        self.mu_star_hat - self.centering_constant * self.beta_hat
    }
}

/// Information-weighted covariate mean.
pub fn wakefield_center(x: &[f64], weights: &[f64]) -> Result<f64> {
    if x.len() != weights.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} covariate values, {} weights",
            x.len(),
            weights.len()
        )));
    }
    if weights.iter().any(|w| *w < 0.0 || !w.is_finite()) {
        return Err(Error::InvalidInput("weights must be finite and non-negative".into()));
    }
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Err(Error::InvalidInput("all-zero weights".into()));
    }
    Ok(x.iter().zip(weights).map(|(x, w)| x * w).sum::<f64>() / total)
}

/// Diagnostics of a node fit, exposed for checking the outer search.
#[derive(Debug, Clone)]
pub struct FitTrace {
    /// Incumbent profile log-likelihood after each outer iteration.
    pub profile: Vec<f64>,
    /// Marginal log-likelihood at the returned estimate.
    pub loglik: f64,
}

pub fn fit_binomial_node(successes: &[u64], trials: &[u64], x: &Covariate, opts: &GlmmOptions) -> Result<NodeEstimate> {
    fit_binomial_node_traced(successes, trials, x, opts).map(|(e, _)| e)
}

pub fn fit_binomial_node_traced(
    successes: &[u64],
    trials: &[u64],
    x: &Covariate,
    opts: &GlmmOptions,
) -> Result<(NodeEstimate, FitTrace)> {
    let n = x.len();
    if successes.len() != n || trials.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "node data has {} successes and {} trials for {n} samples",
            successes.len(),
            trials.len()
        )));
    }
    if let Some(i) = (0..n).find(|&i| successes[i] > trials[i]) {
        return Err(Error::InvalidInput(format!(
            "sample {i}: {} successes exceed {} trials",
            successes[i], trials[i]
        )));
    }
    let empty = FitTrace {
        profile: Vec::new(),
        loglik: 0.0,
    };
    let xs = &x.values;
    let total: u64 = trials.iter().sum();
    if total == 0 || total < opts.min_total_trials || !identifiable(successes, trials, xs) {
        return Ok((NodeEstimate::uninformative(xs, true), empty));
    }

    let obs: Vec<Obs> = successes
        .iter()
        .zip(trials)
        .map(|(&y, &t)| Obs::binomial(y as f64, t as f64))
        .collect();
    let start = pooled_logit(successes, trials);
    let ProfileFit { fit, tau2, trace } = fit_profile(&obs, Some(xs), (start, 0.0), opts);
    let out_trace = FitTrace {
        profile: trace,
        loglik: fit.ll,
    };
    if fit.separated || !fit.converged {
        return Ok((NodeEstimate::uninformative(xs, fit.converged), out_trace));
    }
    match centered_summary(xs, &fit.weights, fit.mu, fit.beta) {
        Some((c, mu_star, se_mu, se_beta)) => Ok((
            NodeEstimate {
                mu_star_hat: mu_star,
                se_mu_star: se_mu,
                beta_hat: fit.beta,
                se_beta,
                centering_constant: c,
                informative: true,
                tau2_hat: tau2,
                converged: true,
            },
            out_trace,
        )),
        None => Ok((NodeEstimate::uninformative(xs, true), out_trace)),
    }
}

/// `(c, μ*, se(μ*), se(β))` from per-sample observed information.
fn centered_summary(x: &[f64], weights: &[f64], mu: f64, beta: f64) -> Option<(f64, f64, f64, f64)> {
    if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
        return None;
    }
    let c = wakefield_center(x, weights).ok()?;
    let info_mu: f64 = weights.iter().sum();
    let info_beta: f64 = x.iter().zip(weights).map(|(x, w)| w * (x - c) * (x - c)).sum();
    if !(info_mu > 1e-12 && info_beta > 1e-12 * info_mu) {
        return None;
    }
    Some((c, mu + c * beta, info_mu.sqrt().recip(), info_beta.sqrt().recip()))
}

/// Rejects data where the logit model has no finite MLE: every informative
/// sample at one covariate value, or all successes / all failures.
fn identifiable(successes: &[u64], trials: &[u64], x: &[f64]) -> bool {
    let informative: Vec<usize> = (0..x.len()).filter(|&i| trials[i] > 0).collect();
    let Some(&first) = informative.first() else {
        return false;
    };
    let varied_x = informative.iter().any(|&i| x[i] != x[first]);
    let y: u64 = informative.iter().map(|&i| successes[i]).sum();
    let t: u64 = informative.iter().map(|&i| trials[i]).sum();
    varied_x && y > 0 && y < t
}

fn pooled_logit(successes: &[u64], trials: &[u64]) -> f64 {
    let y: u64 = successes.iter().sum();
    let t: u64 = trials.iter().sum();
    let p = (y as f64 + 0.5) / (t as f64 + 1.0);
    (p / (1.0 - p)).ln()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TotalMethod {
    PoissonRegression,
    BinomialRegression,
    External,
}

/// Group effect on the region total intensity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TotalEffectEstimate {
    pub log_fc_hat: f64,
    pub se_log_fc: f64,
    pub loglik_alt: f64,
    pub loglik_null: f64,
    pub method: TotalMethod,
    /// Intercept of the alternative fit (`a` in `log E = offset + a + bX`).
    pub intercept_hat: f64,
    pub tau2_hat: f64,
}

impl TotalEffectEstimate {
    pub fn log_likelihood_ratio(&self) -> f64 {
        self.loglik_alt - self.loglik_null
    }

    fn null_equivalent(method: TotalMethod) -> Self {
        TotalEffectEstimate {
            log_fc_hat: 0.0,
            se_log_fc: f64::INFINITY,
            loglik_alt: 0.0,
            loglik_null: 0.0,
            method,
            intercept_hat: 0.0,
            tau2_hat: 0.0,
        }
    }
}

/// `log E[T_i] = log L_i + a + b X^i + u^i`.
pub fn fit_total_poisson(region_totals: &[u64], x: &Covariate, opts: &GlmmOptions) -> Result<TotalEffectEstimate> {
    check_totals_len(region_totals, x)?;
    if region_totals.iter().all(|&t| t == 0) {
        return Ok(TotalEffectEstimate::null_equivalent(TotalMethod::PoissonRegression));
    }
    let obs: Vec<Obs> = region_totals
        .iter()
        .zip(&x.library_sizes)
        .map(|(&t, &l)| Obs::poisson(t as f64, l.ln()))
        .collect();
    let rate: f64 = region_totals.iter().sum::<u64>() as f64 / x.library_sizes.iter().sum::<f64>();
    fit_total(&obs, x, rate.ln(), opts, TotalMethod::PoissonRegression)
}

/// Logit model for the region total out of the library size.
pub fn fit_total_binomial(region_totals: &[u64], x: &Covariate, opts: &GlmmOptions) -> Result<TotalEffectEstimate> {
    check_totals_len(region_totals, x)?;
    if let Some(i) = (0..x.len()).find(|&i| region_totals[i] as f64 > x.library_sizes[i]) {
        return Err(Error::InvalidInput(format!(
            "sample {i}: region total {} exceeds library size {}",
            region_totals[i], x.library_sizes[i]
        )));
    }
    if region_totals.iter().all(|&t| t == 0) {
        return Ok(TotalEffectEstimate::null_equivalent(TotalMethod::BinomialRegression));
    }
    let obs: Vec<Obs> = region_totals
        .iter()
        .zip(&x.library_sizes)
        .map(|(&t, &l)| Obs::binomial(t as f64, l))
        .collect();
    let y: f64 = region_totals.iter().sum::<u64>() as f64;
    let l: f64 = x.library_sizes.iter().sum();
    let p = (y / l).clamp(1e-12, 1.0 - 1e-12);
    fit_total(&obs, x, (p / (1.0 - p)).ln(), opts, TotalMethod::BinomialRegression)
}

fn fit_total(
    obs: &[Obs],
    x: &Covariate,
    start: f64,
    opts: &GlmmOptions,
    method: TotalMethod,
) -> Result<TotalEffectEstimate> {
    let null = fit_profile(obs, None, (start, 0.0), opts);
    let mut alt = fit_profile(obs, Some(&x.values), (null.fit.mu, 0.0), opts);
    if alt.fit.ll < null.fit.ll {
        // the alternative nests the null: restart from the null optimum
        let retry = laplace::fit_fixed(
            obs,
            Some(&x.values),
            null.tau2,
            (null.fit.mu, 0.0),
            &null.fit.modes,
            opts,
        );
        if retry.ll >= alt.fit.ll {
            alt = ProfileFit {
                fit: retry,
                tau2: null.tau2,
                trace: alt.trace,
            };
        }
    }
    let fit = &alt.fit;
    let se = if fit.separated || fit.beta.abs() > SEPARATION_BOUND {
        f64::INFINITY
    } else {
        match centered_summary(&x.values, &fit.weights, fit.mu, fit.beta) {
            Some((_, _, _, se_beta)) => se_beta,
            None => f64::INFINITY,
        }
    };
    if !fit.ll.is_finite() || !null.fit.ll.is_finite() {
        return Err(Error::Numeric("non-finite likelihood in total-intensity fit".into()));
    }
    Ok(TotalEffectEstimate {
        log_fc_hat: fit.beta,
        se_log_fc: se,
        loglik_alt: fit.ll.max(null.fit.ll),
        loglik_null: null.fit.ll,
        method,
        intercept_hat: fit.mu,
        tau2_hat: alt.tau2,
    })
}

fn check_totals_len(totals: &[u64], x: &Covariate) -> Result<()> {
    if totals.len() != x.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} region totals for {} samples",
            totals.len(),
            x.len()
        )));
    }
    Ok(())
}

/// Wraps statistics computed by an external overall-expression tool.
pub fn ingest_external_total(log_fc: f64, se: f64, loglik_ratio: f64) -> Result<TotalEffectEstimate> {
    if !(se > 0.0) {
        return Err(Error::InvalidInput(format!(
            "standard error must be positive, got {se}"
        )));
    }
    if !log_fc.is_finite() || !(loglik_ratio >= -1e-8) {
        return Err(Error::InvalidInput(format!(
            "invalid external statistics (log_fc={log_fc}, loglik_ratio={loglik_ratio})"
        )));
    }
    Ok(TotalEffectEstimate {
        log_fc_hat: log_fc,
        se_log_fc: se,
        loglik_alt: loglik_ratio.max(0.0),
        loglik_null: 0.0,
        method: TotalMethod::External,
        intercept_hat: 0.0,
        tau2_hat: 0.0,
    })
}
