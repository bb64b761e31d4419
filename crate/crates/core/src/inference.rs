//! Region-level likelihood ratio, permutation nulls, empirical p-values and
//! Storey q-values.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ebshrink::{marginal_loglik, MixturePrior, NormalObservation};
use crate::error::{Error, Result};
use crate::glm::TotalEffectEstimate;
use crate::pipeline::region_statistic;
use crate::types::{AnalysisConfig, CountsMatrix, Covariate};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegionTestResult {
    pub log_lambda: f64,
    pub p_value: f64,
    pub q_value: f64,
    pub n_null: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NullSource {
    Permutation,
    ControlVsControl,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NullReference {
    pub statistics: Vec<f64>,
    pub source: NullSource,
}

impl NullReference {
    pub fn new(statistics: Vec<f64>, source: NullSource) -> Self {
        NullReference { statistics, source }
    }

    pub fn len(&self) -> usize {
        self.statistics.len()
    }

    pub fn is_empty(&self) -> bool {
        self.statistics.is_empty()
    }

    /// Concatenates several references of the same source.
    pub fn pooled(parts: impl IntoIterator<Item = NullReference>) -> Result<Self> {
        let mut out: Option<NullReference> = None;
        for p in parts {
            match out.as_mut() {
                None => out = Some(p),
                Some(o) if o.source == p.source => o.statistics.extend(p.statistics),
                Some(_) => {
                    return Err(Error::InvalidInput(
                        "cannot pool null references of different sources".into(),
                    ))
                }
            }
        }
        out.ok_or(Error::EmptyNull)
    }

    /// One statistic per line.
    pub fn to_text(&self) -> String {
        self.statistics.iter().map(|s| format!("{s:.16e}\n")).collect()
    }

    pub fn parse(text: &str, source: NullSource) -> Result<Self> {
        let mut statistics = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let t = line.trim();
            if t.is_empty() || t.starts_with('#') {
                continue;
            }
            let v: f64 = t.parse().map_err(|_| Error::Parse {
                line: i + 1,
                msg: format!("not a number: {t:?}"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    line: i + 1,
                    msg: "non-finite null statistic".into(),
                });
            }
            statistics.push(v);
        }
        Ok(NullReference { statistics, source })
    }

    pub fn read(path: &Path, source: NullSource) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::parse(&text, source)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path.display().to_string(), e))
    }
}

/// `log Λ`: per scale, marginal log-likelihood at the fitted prior minus
/// that at `π₀ = 1`, summed, plus the total-intensity ratio when asked.
/// Observations at scales without a prior count as null.
pub fn lr_statistic(
    observations: &[NormalObservation],
    priors: &BTreeMap<u32, MixturePrior>,
    total: Option<&TotalEffectEstimate>,
    include_total: bool,
) -> f64 {
    let mut groups: BTreeMap<u32, Vec<NormalObservation>> = BTreeMap::new();
    for o in observations {
        groups.entry(o.scale).or_default().push(*o);
    }
    let null = MixturePrior::point_mass();
    let mut out = 0.0;
    for (s, g) in &groups {
        if let Some(p) = priors.get(s) {
            out += marginal_loglik(g, p) - marginal_loglik(g, &null);
        }
    }
    if include_total {
        if let Some(t) = total {
            out += t.log_likelihood_ratio();
        }
    }
    out
}

/// Number of distinct reorderings of `x`, saturating.
pub fn distinct_assignments(x: &[f64]) -> u128 {
    let mut counts: BTreeMap<u64, u128> = BTreeMap::new();
    for v in x {
        *counts.entry(v.to_bits()).or_default() += 1;
    }
    // multinomial coefficient built up one level at a time
    let mut total: u128 = 1;
    let mut seen: u128 = 0;
    for c in counts.values() {
        for i in 1..=*c {
            seen += 1;
            total = match total.checked_mul(seen) {
                Some(t) => t / i,
                None => return u128::MAX,
            };
        }
    }
    total
}

fn level_codes(x: &[f64]) -> (Vec<usize>, Vec<f64>) {
    let mut levels: Vec<f64> = x.to_vec();
    levels.sort_by(f64::total_cmp);
    levels.dedup();
    let codes = x
        .iter()
        .map(|v| levels.iter().position(|l| l == v).expect("value is a level"))
        .collect();
    (codes, levels)
}

fn next_permutation(a: &mut [usize]) -> bool {
    let n = a.len();
    if n < 2 {
        return false;
    }
    let mut i = n - 1;
    while i > 0 && a[i - 1] >= a[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = n - 1;
    while a[j] <= a[i - 1] {
        j -= 1;
    }
    a.swap(i - 1, j);
    a[i..].reverse();
    true
}

/// Covariate relabelings for a permutation null, the observed assignment
/// excluded. When the distinct assignments number at most `4 n_perms` they
/// are enumerated and sampled without replacement (all of them when fewer
/// than `n_perms` exist); otherwise shuffles are drawn with replacement.
pub fn permutation_labels(x: &[f64], n_perms: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    if n_perms < 1 {
        return Err(Error::InvalidInput("at least one permutation is required".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let distinct = distinct_assignments(x);
    let (codes, levels) = level_codes(x);
    let decode = |c: &[usize]| c.iter().map(|&k| levels[k]).collect::<Vec<f64>>();
    if distinct <= 1 {
        return Ok(Vec::new());
    }
    if distinct - 1 < n_perms as u128 {
        log::warn!(
            "only {} distinct relabelings exist; using all of them instead of {n_perms}",
            distinct - 1
        );
    }
    if distinct <= 4 * n_perms as u128 {
        let mut current = codes.clone();
        current.sort_unstable();
        let mut all = Vec::with_capacity(distinct as usize);
        loop {
            if current != codes {
                all.push(current.clone());
            }
            if !next_permutation(&mut current) {
                break;
            }
        }
        let take = n_perms.min(all.len());
        let picked: Vec<Vec<usize>> = all.choose_multiple(&mut rng, take).cloned().collect();
        return Ok(picked.iter().map(|c| decode(c)).collect());
    }
    let mut out = Vec::with_capacity(n_perms);
    let mut current = codes.clone();
    while out.len() < n_perms {
        current.shuffle(&mut rng);
        if current != codes {
            out.push(decode(&current));
        }
    }
    Ok(out)
}

/// Statistics of the full analysis re-run under relabeled covariates.
/// Library sizes stay with their samples.
pub fn permutation_null(
    counts: &CountsMatrix,
    x: &Covariate,
    config: &AnalysisConfig,
    n_perms: usize,
    seed: u64,
) -> Result<NullReference> {
    let labels = permutation_labels(&x.values, n_perms, seed)?;
    let statistics = labels
        .par_iter()
        .map(|perm| region_statistic(counts, &x.permuted(perm), config))
        .collect::<Result<Vec<f64>>>()?;
    Ok(NullReference::new(statistics, NullSource::Permutation))
}

/// Add-one estimate `(1 + #{null ≥ stat}) / (1 + n)`.
pub fn empirical_pvalue(stat: f64, null_ref: &NullReference) -> Result<f64> {
    if null_ref.is_empty() {
        return Err(Error::EmptyNull);
    }
    let exceed = null_ref.statistics.iter().filter(|&&v| v >= stat).count();
    Ok((1 + exceed) as f64 / (1 + null_ref.len()) as f64)
}

/// P-values for many statistics against one reference, via a sorted copy.
pub fn empirical_pvalues(stats: &[f64], null_ref: &NullReference) -> Result<Vec<f64>> {
    if null_ref.is_empty() {
        return Err(Error::EmptyNull);
    }
    let mut sorted = null_ref.statistics.clone();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    Ok(stats
        .iter()
        .map(|s| {
            let below = sorted.partition_point(|v| v < s);
            (1 + n - below) as f64 / (1 + n) as f64
        })
        .collect())
}

/// `π̂₀(λ) = #{p > λ} / (m (1 − λ))`, kept within `(0, 1]`.
pub fn storey_pi0(pvals: &[f64], lambda: f64) -> f64 {
    let m = pvals.len() as f64;
    let above = pvals.iter().filter(|&&p| p > lambda).count().max(1) as f64;
    (above / (m * (1.0 - lambda))).min(1.0)
}

fn check_pvalues(pvals: &[f64]) -> Result<()> {
    if let Some(p) = pvals.iter().find(|p| !(**p > 0.0 && **p <= 1.0)) {
        return Err(Error::InvalidInput(format!("p-value {p} outside (0, 1]")));
    }
    Ok(())
}

/// Storey q-values with `π̂₀` from a single `λ`.
pub fn qvalues(pvals: &[f64], lambda: f64) -> Result<Vec<f64>> {
    check_pvalues(pvals)?;
    if pvals.is_empty() {
        return Ok(Vec::new());
    }
    Ok(qvalues_with_pi0(pvals, storey_pi0(pvals, lambda)))
}

/// Step-up q-values for a given `π̂₀`; `π̂₀ = 1` gives Benjamini–Hochberg.
pub fn qvalues_with_pi0(pvals: &[f64], pi0: f64) -> Vec<f64> {
    let m = pvals.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| pvals[a].total_cmp(&pvals[b]));
    let mut q = vec![0.0; m];
    let mut running = f64::INFINITY;
    for rank in (0..m).rev() {
        let i = order[rank];
        // ties share the count of all p-values ≤ t
        let mut r = rank + 1;
        while r < m && pvals[order[r]] == pvals[i] {
            r += 1;
        }
        let v = pi0 * m as f64 * pvals[i] / r as f64;
        running = running.min(v);
        q[i] = running.min(1.0);
    }
    q
}
