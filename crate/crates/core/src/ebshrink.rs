//! Empirical-Bayes shrinkage of normally approximated estimates under a
//! zero-centered spike-and-slab prior `π₀ δ₀ + Σ_k π_k N(0, σ_k²)` with a
//! fixed σ grid and mixing proportions fitted by EM.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::effects::EffectCurve;
use crate::error::{Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[inline]
fn ln_normal0(x: f64, var: f64) -> f64 {
    -0.5 * (LN_2PI + var.ln()) - 0.5 * x * x / var
}

/// Rule for the σ grid: geometric with `ratio`, from
/// `min se / min_se_divisor` up to `max_multiplier * max sqrt(est² - se²)`,
/// with the upper end at least `floor_factor` times the lower end.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridPolicy {
    pub ratio: f64,
    pub min_se_divisor: f64,
    pub max_multiplier: f64,
    pub floor_factor: f64,
}

impl Default for GridPolicy {
    fn default() -> Self {
        GridPolicy {
            ratio: std::f64::consts::SQRT_2,
            min_se_divisor: 10.0,
            max_multiplier: 2.0,
            floor_factor: 8.0,
        }
    }
}

impl GridPolicy {
    pub fn check(&self) -> Result<()> {
        if !(self.ratio > 1.0 && self.min_se_divisor > 0.0 && self.max_multiplier > 0.0 && self.floor_factor >= 1.0) {
            return Err(Error::InvalidInput("invalid sigma grid policy".into()));
        }
        Ok(())
    }
}

/// One normally approximated estimate; `se = +inf` marks a node without
/// information.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalObservation {
    pub estimate: f64,
    pub se: f64,
    pub scale: u32,
    pub shift: usize,
}

impl NormalObservation {
    pub fn new(estimate: f64, se: f64) -> Self {
        NormalObservation {
            estimate,
            se,
            scale: 1,
            shift: 0,
        }
    }

    pub fn at_scale(mut self, scale: u32) -> Self {
        self.scale = scale;
        self
    }

    pub fn is_informative(&self) -> bool {
        self.se.is_finite()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixturePrior {
    pub sigma_grid: Vec<f64>,
    /// `pi[0]` is the point mass, `pi[k]` goes with `sigma_grid[k - 1]`.
    pub pi: Vec<f64>,
}

impl MixturePrior {
    pub fn new(sigma_grid: Vec<f64>, pi: Vec<f64>) -> Result<Self> {
        if pi.len() != sigma_grid.len() + 1 {
            return Err(Error::DimensionMismatch(format!(
                "{} mixture weights for {} grid points",
                pi.len(),
                sigma_grid.len()
            )));
        }
        if sigma_grid.first().is_some_and(|s| !(*s > 0.0)) || sigma_grid.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidInput(
                "sigma grid must be positive and strictly increasing".into(),
            ));
        }
        if pi.iter().any(|p| !(*p >= 0.0)) || (pi.iter().sum::<f64>() - 1.0).abs() > 1e-10 {
            return Err(Error::InvalidInput(
                "mixture weights must be non-negative and sum to 1".into(),
            ));
        }
        Ok(MixturePrior { sigma_grid, pi })
    }

    pub fn point_mass() -> Self {
        MixturePrior {
            sigma_grid: Vec::new(),
            pi: vec![1.0],
        }
    }

    /// Same grid with all weight on the point mass.
    pub fn null_on(grid: &[f64]) -> Self {
        let mut pi = vec![0.0; grid.len() + 1];
        pi[0] = 1.0;
        MixturePrior {
            sigma_grid: grid.to_vec(),
            pi,
        }
    }

    pub fn pi0(&self) -> f64 {
        self.pi[0]
    }

    fn component_vars(&self) -> impl Iterator<Item = f64> + '_ {
        std::iter::once(0.0).chain(self.sigma_grid.iter().map(|s| s * s))
    }

    fn ln_marginal(&self, obs: &NormalObservation) -> f64 {
        let se2 = obs.se * obs.se;
        let terms: Vec<f64> = self
            .pi
            .iter()
            .zip(self.component_vars())
            .filter(|(p, _)| **p > 0.0)
            .map(|(p, v)| p.ln() + ln_normal0(obs.estimate, v + se2))
            .collect();
        log_sum_exp(&terms)
    }
}

fn log_sum_exp(terms: &[f64]) -> f64 {
    let m = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + terms.iter().map(|t| (t - m).exp()).sum::<f64>().ln()
}

pub fn build_sigma_grid(observations: &[NormalObservation], policy: &GridPolicy) -> Result<Vec<f64>> {
    let finite: Vec<&NormalObservation> = observations
        .iter()
        .filter(|o| o.is_informative() && o.se > 0.0)
        .collect();
    if finite.is_empty() {
        return Err(Error::InvalidInput("no observations with finite standard error".into()));
    }
    let min_se = finite.iter().map(|o| o.se).fold(f64::INFINITY, f64::min);
    let sigma_min = min_se / policy.min_se_divisor;
    let excess = finite
        .iter()
        .map(|o| (o.estimate * o.estimate - o.se * o.se).max(0.0).sqrt())
        .fold(0.0, f64::max);
    let sigma_max = (policy.max_multiplier * excess).max(policy.floor_factor * sigma_min);
    let steps = ((sigma_max / sigma_min).ln() / policy.ratio.ln() - 1e-9)
        .ceil()
        .max(0.0) as i32;
    Ok((0..=steps).map(|k| sigma_min * policy.ratio.powi(k)).collect())
}

/// EM controls. `null_weight` is a Dirichlet weight on `π₀`: 1 gives the
/// plain maximum-likelihood fit, larger values add `(w − 1) log π₀` to the
/// objective. The point mass and the narrowest slab components are nearly
/// indistinguishable, so without the weight the fitted `π₀` can drift far
/// below the true null fraction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub null_weight: f64,
}

impl Default for EmOptions {
    fn default() -> Self {
        EmOptions {
            tol: 1e-7,
            max_iter: 500,
            null_weight: 10.0,
        }
    }
}

impl EmOptions {
    pub fn max_likelihood(tol: f64, max_iter: usize) -> Self {
        EmOptions {
            tol,
            max_iter,
            null_weight: 1.0,
        }
    }
}

/// Result of fitting mixing proportions for one group of observations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmFit {
    pub prior: MixturePrior,
    /// Marginal log-likelihood at the fitted prior.
    pub loglik: f64,
    /// EM objective (log-likelihood plus the `π₀` weight term) after each
    /// update, starting from the initial π.
    pub trace: Vec<f64>,
    pub iterations: usize,
}

fn null_penalty(pi0: f64, null_weight: f64) -> f64 {
    if null_weight == 1.0 {
        0.0
    } else {
        (null_weight - 1.0) * pi0.ln()
    }
}

fn penalized_objective(lik: &[f64], offset: f64, pi: &[f64], null_weight: f64) -> f64 {
    let ll: f64 = lik
        .chunks(pi.len())
        .map(|row| row.iter().zip(pi).map(|(l, p)| l * p).sum::<f64>().ln())
        .sum();
    offset + ll + null_penalty(pi[0], null_weight)
}

/// Solves `a x = b` for a small symmetric positive definite `a` (row-major,
/// overwritten by its Cholesky factor).
fn cholesky_solve(a: &mut [f64], n: usize, rhs: &[&[f64]]) -> Option<Vec<Vec<f64>>> {
    for j in 0..n {
        let mut d = a[j * n + j];
        for p in 0..j {
            d -= a[j * n + p] * a[j * n + p];
        }
        if !(d > 0.0) {
            return None;
        }
        let d = d.sqrt();
        a[j * n + j] = d;
        for i in j + 1..n {
            let mut v = a[i * n + j];
            for p in 0..j {
                v -= a[i * n + p] * a[j * n + p];
            }
            a[i * n + j] = v / d;
        }
    }
    Some(
        rhs.iter()
            .map(|b| {
                let mut y = b.to_vec();
                for i in 0..n {
                    for p in 0..i {
                        y[i] -= a[i * n + p] * y[p];
                    }
                    y[i] /= a[i * n + i];
                }
                for i in (0..n).rev() {
                    for p in i + 1..n {
                        y[i] -= a[p * n + i] * y[p];
                    }
                    y[i] /= a[i * n + i];
                }
                y
            })
            .collect(),
    )
}

/// Active-set Newton ascent of the concave EM objective over the simplex.
/// Only improving steps are taken, so `trace` stays non-decreasing.
/// Returns the number of accepted steps.
fn newton_polish(lik: &[f64], offset: f64, pi: &mut [f64], null_weight: f64, trace: &mut Vec<f64>) -> usize {
    let k = pi.len();
    let extra = (null_weight - 1.0).max(0.0);
    let mut current = penalized_objective(lik, offset, pi, null_weight);
    // components EM left negligible start out pinned at zero
    let mut active: Vec<bool> = pi.iter().map(|&p| p > 1e-10).collect();
    let mut steps = 0;
    for _ in 0..200 {
        let mut grad = vec![0.0; k];
        let mut hess = vec![0.0; k * k];
        for row in lik.chunks(k) {
            let d: f64 = row.iter().zip(pi.iter()).map(|(l, p)| l * p).sum();
            for a in 0..k {
                let ra = row[a] / d;
                grad[a] += ra;
                for b in 0..=a {
                    hess[a * k + b] += ra * row[b] / d;
                }
            }
        }
        if extra > 0.0 {
            grad[0] += extra / pi[0];
            hess[0] += extra / (pi[0] * pi[0]);
        }
        let free: Vec<usize> = (0..k).filter(|&c| active[c]).collect();
        let n = free.len();
        let mut a = vec![0.0; n * n];
        let mut ridge = 0.0;
        for (i, &ci) in free.iter().enumerate() {
            for (j, &cj) in free.iter().enumerate() {
                a[i * n + j] = hess[ci.max(cj) * k + ci.min(cj)];
            }
            ridge += a[i * n + i];
        }
        let ridge = 1e-10 * ridge / n as f64;
        for i in 0..n {
            a[i * n + i] += ridge;
        }
        let g: Vec<f64> = free.iter().map(|&c| grad[c]).collect();
        let ones = vec![1.0; n];
        let Some(sol) = cholesky_solve(&mut a, n, &[&g, &ones]) else {
            break;
        };
        // `mu` is the multiplier of the sum constraint on this face
        let mu = sol[0].iter().sum::<f64>() / sol[1].iter().sum::<f64>();
        let dir: Vec<f64> = (0..n).map(|i| sol[0][i] - mu * sol[1][i]).collect();
        let slope: f64 = dir.iter().zip(&g).map(|(d, g)| d * (g - mu)).sum();
        if !(slope > 1e-12 * current.abs().max(1.0)) {
            // face optimum; release the most promising pinned component
            let entering = (0..k)
                .filter(|&c| !active[c] && grad[c] > mu * (1.0 + 1e-9))
                .max_by(|&x, &y| grad[x].total_cmp(&grad[y]));
            match entering {
                Some(c) => {
                    active[c] = true;
                    continue;
                }
                None => break,
            }
        }
        let mut t_max: f64 = 1.0;
        let mut blocking = None;
        for (i, &c) in free.iter().enumerate() {
            if dir[i] < 0.0 && -pi[c] / dir[i] < t_max {
                t_max = -pi[c] / dir[i];
                blocking = Some(c);
            }
        }
        let mut t = t_max;
        let mut trial = vec![0.0; k];
        let mut accepted = false;
        for _ in 0..40 {
            trial.iter_mut().for_each(|v| *v = 0.0);
            for (i, &c) in free.iter().enumerate() {
                trial[c] = (pi[c] + t * dir[i]).max(0.0);
            }
            if t == t_max {
                if let Some(c) = blocking {
                    trial[c] = 0.0;
                }
            }
            let total: f64 = trial.iter().sum();
            trial.iter_mut().for_each(|v| *v /= total);
            let value = penalized_objective(lik, offset, &trial, null_weight);
            if value.is_finite() && value >= current + 1e-4 * t * slope {
                accepted = true;
                current = value;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
        if t == t_max {
            if let Some(c) = blocking {
                active[c] = false;
            }
        }
        pi.copy_from_slice(&trial);
        trace.push(current);
        steps += 1;
    }
    steps
}

/// EM for the mixing proportions over a fixed grid. Observations with
/// infinite `se` are ignored.
pub fn fit_mixture_em(observations: &[NormalObservation], grid: &[f64], opts: &EmOptions) -> EmFit {
    let obs: Vec<&NormalObservation> = observations.iter().filter(|o| o.is_informative()).collect();
    if obs.is_empty() || grid.is_empty() {
        let prior = MixturePrior::null_on(grid);
        let loglik = marginal_loglik(observations, &prior);
        return EmFit {
            prior,
            loglik,
            trace: vec![loglik],
            iterations: 0,
        };
    }
    let k = grid.len() + 1;
    let vars: Vec<f64> = std::iter::once(0.0).chain(grid.iter().map(|s| s * s)).collect();
    // row-scaled component likelihoods
    let mut lik = vec![0.0; obs.len() * k];
    let mut offset = 0.0;
    for (j, o) in obs.iter().enumerate() {
        let se2 = o.se * o.se;
        let row = &mut lik[j * k..(j + 1) * k];
        for (c, v) in vars.iter().enumerate() {
            row[c] = ln_normal0(o.estimate, v + se2);
        }
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        for r in row.iter_mut() {
            *r = (*r - m).exp();
        }
        offset += m;
    }

    let extra = (opts.null_weight - 1.0).max(0.0);
    let n_obs = obs.len() as f64 + extra;
    // one EM map: returns the objective at `pi` and writes the update to `out`
    let step = |pi: &[f64], out: &mut [f64]| -> f64 {
        out.iter_mut().for_each(|v| *v = 0.0);
        let mut ll = offset;
        for row in lik.chunks(k) {
            let denom: f64 = row.iter().zip(pi).map(|(l, p)| l * p).sum();
            ll += denom.ln();
            for ((n, l), p) in out.iter_mut().zip(row).zip(pi) {
                *n += l * p / denom;
            }
        }
        out[0] += extra;
        out.iter_mut().for_each(|v| *v /= n_obs);
        ll + null_penalty(pi[0], opts.null_weight)
    };

    // SQUAREM: two EM steps, a squared extrapolation, and a stabilising EM
    // step. The extrapolated point is kept only if it beats the second
    // plain step, so the objective never decreases.
    let mut pi = vec![0.5 / (k - 1) as f64; k];
    pi[0] = 0.5;
    let mut p1 = vec![0.0; k];
    let mut p2 = vec![0.0; k];
    let mut p3 = vec![0.0; k];
    let mut acc = vec![0.0; k];
    let mut acc_next = vec![0.0; k];
    let mut trace = vec![step(&pi, &mut p1)];
    let mut iterations = 0;
    while iterations < opts.max_iter {
        step(&p1, &mut p2);
        let o2 = step(&p2, &mut p3);
        let mut rr = 0.0;
        let mut vv = 0.0;
        for c in 0..k {
            let r = p1[c] - pi[c];
            let v = p2[c] - 2.0 * p1[c] + pi[c];
            rr += r * r;
            vv += v * v;
        }
        let mut accepted = false;
        if vv > 0.0 {
            let mut alpha = -(rr / vv).sqrt();
            while alpha < -1.01 {
                let mut feasible = true;
                for c in 0..k {
                    let r = p1[c] - pi[c];
                    let v = p2[c] - 2.0 * p1[c] + pi[c];
                    acc[c] = pi[c] - 2.0 * alpha * r + alpha * alpha * v;
                    feasible &= acc[c] >= 0.0;
                }
                if feasible {
                    break;
                }
                alpha = 0.5 * (alpha - 1.0);
            }
            if alpha < -1.01 {
                let total: f64 = acc.iter().sum();
                acc.iter_mut().for_each(|v| *v /= total);
                let oa = step(&acc, &mut acc_next);
                if oa.is_finite() && oa >= o2 {
                    std::mem::swap(&mut pi, &mut acc);
                    std::mem::swap(&mut p1, &mut acc_next);
                    trace.push(oa);
                    accepted = true;
                }
            }
        }
        if !accepted {
            std::mem::swap(&mut pi, &mut p2);
            std::mem::swap(&mut p1, &mut p3);
            trace.push(o2);
        }
        iterations += 1;
        let n = trace.len();
        if trace[n - 1] - trace[n - 2] < opts.tol {
            break;
        }
    }
    // EM crawls along the near-flat ridge between δ₀ and the narrowest
    // slab components; finish with Newton steps on the simplex
    iterations += newton_polish(&lik, offset, &mut pi, opts.null_weight, &mut trace);
    let total: f64 = pi.iter().sum();
    pi.iter_mut().for_each(|p| *p /= total);
    let mut prior = MixturePrior {
        sigma_grid: grid.to_vec(),
        pi,
    };
    let mut loglik = marginal_loglik(observations, &prior);
    // π₀ = 1 is feasible; keep it when EM stops short of a boundary optimum
    let null = MixturePrior::null_on(grid);
    let null_ll = marginal_loglik(observations, &null);
    if null_ll > loglik {
        prior = null;
        loglik = null_ll;
        trace.push(loglik);
    }
    EmFit {
        prior,
        loglik,
        trace,
        iterations,
    }
}

/// Separate fits per scale; every scale in `scales` gets an entry, with
/// the point-mass prior where no observation is informative.
pub fn fit_by_scale(
    observations: &[NormalObservation],
    scales: impl IntoIterator<Item = u32>,
    grid: &[f64],
    opts: &EmOptions,
) -> BTreeMap<u32, EmFit> {
    let mut groups: BTreeMap<u32, Vec<NormalObservation>> = scales.into_iter().map(|s| (s, Vec::new())).collect();
    for o in observations {
        groups.entry(o.scale).or_default().push(*o);
    }
    groups
        .into_iter()
        .map(|(s, g)| (s, fit_mixture_em(&g, grid, opts)))
        .collect()
}

pub fn marginal_loglik(observations: &[NormalObservation], prior: &MixturePrior) -> f64 {
    observations
        .iter()
        .filter(|o| o.is_informative())
        .map(|o| prior.ln_marginal(o))
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSummary {
    pub mean: f64,
    pub variance: f64,
    pub prob_zero: f64,
}

impl PosteriorSummary {
    pub fn degenerate(value: f64) -> Self {
        PosteriorSummary {
            mean: value,
            variance: 0.0,
            prob_zero: if value == 0.0 { 1.0 } else { 0.0 },
        }
    }
}

pub fn posterior_moments(obs: &NormalObservation, prior: &MixturePrior) -> PosteriorSummary {
    if !obs.is_informative() {
        let variance = prior
            .pi
            .iter()
            .skip(1)
            .zip(&prior.sigma_grid)
            .map(|(p, s)| p * s * s)
            .sum();
        return PosteriorSummary {
            mean: 0.0,
            variance,
            prob_zero: prior.pi0(),
        };
    }
    let se2 = obs.se * obs.se;
    let ln_w: Vec<f64> = prior
        .pi
        .iter()
        .zip(prior.component_vars())
        .map(|(p, v)| {
            if *p > 0.0 {
                p.ln() + ln_normal0(obs.estimate, v + se2)
            } else {
                f64::NEG_INFINITY
            }
        })
        .collect();
    let norm = log_sum_exp(&ln_w);
    let mut mean = 0.0;
    let mut second = 0.0;
    let mut prob_zero = 0.0;
    for (c, (lw, v)) in ln_w.iter().zip(prior.component_vars()).enumerate() {
        let w = (lw - norm).exp();
        if c == 0 {
            prob_zero = w;
            continue;
        }
        let m = obs.estimate * v / (v + se2);
        let var = v * se2 / (v + se2);
        mean += w * m;
        second += w * (var + m * m);
    }
    PosteriorSummary {
        mean,
        variance: (second - mean * mean).max(0.0),
        prob_zero: prob_zero.clamp(0.0, 1.0),
    }
}

/// Averages effect curves from several circular shifts after mapping each
/// back to the unshifted frame. A curve computed on data shifted by `k`
/// reports original bin `(b + k) mod B` at its index `b`.
pub fn ti_average(curves: &[(usize, EffectCurve)]) -> Result<EffectCurve> {
    let Some((_, first)) = curves.first() else {
        return Err(Error::InvalidInput("no shifted curves to average".into()));
    };
    let b = first.mean.len();
    let mut seen = BTreeSet::new();
    for (k, c) in curves {
        if *k >= b.max(1) || !seen.insert(*k) {
            return Err(Error::InvalidInput(format!("inconsistent shift set at shift {k}")));
        }
        if c.mean.len() != b || c.sd.len() != b || c.baseline_mean.len() != b {
            return Err(Error::DimensionMismatch("shifted curves differ in length".into()));
        }
    }
    let m = curves.len() as f64;
    let unshift = |k: usize, v: &[f64]| -> Vec<f64> {
        let mut out = vec![0.0; b];
        for (i, x) in v.iter().enumerate() {
            out[(i + k) % b] = *x;
        }
        out
    };
    let aligned: Vec<(Vec<f64>, Vec<f64>, Vec<f64>)> = curves
        .iter()
        .map(|(k, c)| (unshift(*k, &c.mean), unshift(*k, &c.sd), unshift(*k, &c.baseline_mean)))
        .collect();
    let mut mean = vec![0.0; b];
    let mut baseline = vec![0.0; b];
    for (mu, _, base) in &aligned {
        for i in 0..b {
            mean[i] += mu[i] / m;
            baseline[i] += base[i] / m;
        }
    }
    // mean of (variance + mean²) minus squared mean, written around the
    // averaged mean to avoid cancellation
    let mut var = vec![0.0; b];
    for (mu, sd, _) in &aligned {
        for i in 0..b {
            let d = mu[i] - mean[i];
            var[i] += (sd[i] * sd[i] + d * d) / m;
        }
    }
    let sd = var.iter().map(|v| v.sqrt()).collect();
    Ok(EffectCurve {
        mean,
        sd,
        baseline_mean: baseline,
        low_confidence: curves.iter().any(|(_, c)| c.low_confidence),
    })
}
