//! Observation-space effect curves `β^o_b = log λ¹_b − log λ⁰_b` rebuilt from
//! per-node posteriors along each bin's path through the dyadic tree.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ebshrink::PosteriorSummary;
use crate::error::{Error, Result};
use crate::mstransform::{log_logistic, logistic_pair, n_scales};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectCurve {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
    /// Posterior mean of `log λ⁰_b`.
    pub baseline_mean: Vec<f64>,
    /// Set when the curve rests on a single Monte Carlo draw.
    #[serde(default)]
    pub low_confidence: bool,
}

impl EffectCurve {
    pub fn n_bins(&self) -> usize {
        self.mean.len()
    }

    pub fn zeros(n_bins: usize) -> Self {
        EffectCurve {
            mean: vec![0.0; n_bins],
            sd: vec![0.0; n_bins],
            baseline_mean: vec![0.0; n_bins],
            low_confidence: false,
        }
    }

    /// First `n` bins only; drops right padding.
    pub fn truncated(&self, n: usize) -> Self {
        let n = n.min(self.n_bins());
        EffectCurve {
            mean: self.mean[..n].to_vec(),
            sd: self.sd[..n].to_vec(),
            baseline_mean: self.baseline_mean[..n].to_vec(),
            low_confidence: self.low_confidence,
        }
    }

    pub fn to_tsv(&self, z: f64) -> String {
        let flags = flag_significant_bins(self, z).bin_flags(self.n_bins());
        let mut out = String::from("bin\tmean\tsd\tsignificant\n");
        for b in 0..self.n_bins() {
            let _ = writeln!(
                out,
                "{}\t{:.16e}\t{:.16e}\t{}",
                b + 1,
                self.mean[b],
                self.sd[b],
                flags[b]
            );
        }
        out
    }
}

/// Posterior of one node in Wakefield coordinates. The intercept of the
/// baseline group is `μ* − cβ`, that of group one `μ* + (1 − c)β`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NodePosterior {
    pub mu_star: PosteriorSummary,
    pub beta: PosteriorSummary,
    pub centering: f64,
}

impl NodePosterior {
    pub fn degenerate(mu_star: f64, beta: f64, centering: f64) -> Self {
        NodePosterior {
            mu_star: PosteriorSummary::degenerate(mu_star),
            beta: PosteriorSummary::degenerate(beta),
            centering,
        }
    }
}

/// Posterior of the region-total log fold change plus the baseline log
/// total used for `baseline_mean`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TotalPosterior {
    pub log_fc_mean: f64,
    pub log_fc_var: f64,
    pub baseline_log_total: f64,
}

impl TotalPosterior {
    pub fn fixed(log_fc: f64) -> Self {
        TotalPosterior {
            log_fc_mean: log_fc,
            log_fc_var: 0.0,
            baseline_log_total: 0.0,
        }
    }
}

/// Per-node step of a bin's path: flat node index and whether the bin lies
/// in the first half.
fn paths(n_bins: usize) -> Result<Vec<Vec<(usize, bool)>>> {
    if n_bins < 2 || !n_bins.is_power_of_two() {
        return Err(Error::NotPowerOfTwo(n_bins));
    }
    let j = n_scales(n_bins);
    Ok((0..n_bins)
        .map(|b| {
            (1..=j)
                .map(|s| {
                    let len = n_bins >> (s - 1);
                    let flat = (1usize << (s - 1)) - 1 + b / len;
                    (flat, b % len < len / 2)
                })
                .collect()
        })
        .collect())
}

fn check_nodes(nodes: &[NodePosterior]) -> Result<usize> {
    let b = nodes.len() + 1;
    if b < 2 || !b.is_power_of_two() {
        return Err(Error::DimensionMismatch(format!(
            "{} node posteriors do not form a complete dyadic tree",
            nodes.len()
        )));
    }
    Ok(b)
}

/// `log h(α)` for the chosen side with first and second derivatives.
#[inline]
fn side_terms(a: f64, first: bool) -> (f64, f64, f64) {
    let (p, q) = logistic_pair(a);
    if first {
        (log_logistic(a), q, -p * q)
    } else {
        (log_logistic(-a), -p, -p * q)
    }
}

/// Second-order mean and first-order variance, nodes independent and
/// `μ* ⟂ β` within a node.
pub fn effect_posterior_taylor(nodes: &[NodePosterior], total: &TotalPosterior) -> Result<EffectCurve> {
    let b = check_nodes(nodes)?;
    let paths = paths(b)?;
    let mut curve = EffectCurve::zeros(b);
    for (bin, path) in paths.iter().enumerate() {
        let mut mean = total.log_fc_mean;
        let mut var = total.log_fc_var;
        let mut base = total.baseline_log_total;
        for &(flat, first) in path {
            let n = &nodes[flat];
            let (mm, vm) = (n.mu_star.mean, n.mu_star.variance);
            let (mb, vb) = (n.beta.mean, n.beta.variance);
            let c = n.centering;
            let m0 = mm - c * mb;
            let v0 = vm + c * c * vb;
            let m1 = mm + (1.0 - c) * mb;
            let v1 = vm + (1.0 - c) * (1.0 - c) * vb;
            let (g0, d0, h0) = side_terms(m0, first);
            let (g1, d1, h1) = side_terms(m1, first);
            let e0 = g0 + 0.5 * h0 * v0;
            let e1 = g1 + 0.5 * h1 * v1;
            mean += e1 - e0;
            base += e0;
            let dm = d1 - d0;
            let db = (1.0 - c) * d1 + c * d0;
            var += dm * dm * vm + db * db * vb;
        }
        curve.mean[bin] = mean;
        curve.sd[bin] = var.max(0.0).sqrt();
        curve.baseline_mean[bin] = base;
    }
    Ok(curve)
}

/// Point mass with probability `prob_zero`, otherwise a normal slab whose
/// moments reproduce the summary's mean and variance.
#[derive(Debug, Clone, Copy)]
struct SpikeSlab {
    p0: f64,
    mean: f64,
    sd: f64,
}

impl SpikeSlab {
    fn new(s: &PosteriorSummary) -> Self {
        let p0 = s.prob_zero.clamp(0.0, 1.0);
        if p0 >= 1.0 {
            return SpikeSlab {
                p0: 1.0,
                mean: 0.0,
                sd: 0.0,
            };
        }
        let slab = 1.0 - p0;
        let mean = s.mean / slab;
        let second = (s.variance + s.mean * s.mean) / slab;
        SpikeSlab {
            p0,
            mean,
            sd: (second - mean * mean).max(0.0).sqrt(),
        }
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> f64 {
        if self.p0 > 0.0 && rng.random::<f64>() < self.p0 {
            return 0.0;
        }
        if self.sd == 0.0 {
            return self.mean;
        }
        let z: f64 = rng.sample(StandardNormal);
        self.mean + self.sd * z
    }
}

const MC_CHUNK: usize = 1024;

#[derive(Debug, Clone)]
struct Moments {
    n: usize,
    mean: Vec<f64>,
    m2: Vec<f64>,
    base: Vec<f64>,
}

impl Moments {
    fn new(b: usize) -> Self {
        Moments {
            n: 0,
            mean: vec![0.0; b],
            m2: vec![0.0; b],
            base: vec![0.0; b],
        }
    }

    fn push(&mut self, effect: &[f64], base: &[f64]) {
        self.n += 1;
        let n = self.n as f64;
        for i in 0..effect.len() {
            let d = effect[i] - self.mean[i];
            self.mean[i] += d / n;
            self.m2[i] += d * (effect[i] - self.mean[i]);
            self.base[i] += (base[i] - self.base[i]) / n;
        }
    }

    fn merge(mut self, other: Moments) -> Moments {
        if other.n == 0 {
            return self;
        }
        let (na, nb) = (self.n as f64, other.n as f64);
        let n = na + nb;
        for i in 0..self.mean.len() {
            let d = other.mean[i] - self.mean[i];
            self.m2[i] += other.m2[i] + d * d * na * nb / n;
            self.mean[i] += d * nb / n;
            self.base[i] += (other.base[i] - self.base[i]) * nb / n;
        }
        self.n += other.n;
        self
    }
}

/// Monte Carlo version of [`effect_posterior_taylor`]. Draws are grouped in
/// fixed chunks, each with its own ChaCha stream, so the first `k` chunks
/// are shared between runs that differ only in `n_samples`.
pub fn effect_posterior_mc(
    nodes: &[NodePosterior],
    total: &TotalPosterior,
    n_samples: usize,
    seed: u64,
) -> Result<EffectCurve> {
    if n_samples < 1 {
        return Err(Error::InvalidInput("n_samples must be at least 1".into()));
    }
    let b = check_nodes(nodes)?;
    let paths = paths(b)?;
    let dists: Vec<(SpikeSlab, SpikeSlab)> = nodes
        .iter()
        .map(|n| (SpikeSlab::new(&n.mu_star), SpikeSlab::new(&n.beta)))
        .collect();
    let total_sd = total.log_fc_var.max(0.0).sqrt();
    let n_chunks = n_samples.div_ceil(MC_CHUNK);

    let parts: Vec<Moments> = (0..n_chunks)
        .into_par_iter()
        .map(|chunk| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(chunk as u64);
            let count = MC_CHUNK.min(n_samples - chunk * MC_CHUNK);
            let mut acc = Moments::new(b);
            let mut g0 = vec![0.0; nodes.len() * 2];
            let mut g1 = vec![0.0; nodes.len() * 2];
            let mut effect = vec![0.0; b];
            let mut base = vec![0.0; b];
            for _ in 0..count {
                let z: f64 = rng.sample(StandardNormal);
                let dlog = total.log_fc_mean + total_sd * z;
                for (k, (dm, db)) in dists.iter().enumerate() {
                    let mu = dm.draw(&mut rng);
                    let be = db.draw(&mut rng);
                    let c = nodes[k].centering;
                    let a0 = mu - c * be;
                    let a1 = mu + (1.0 - c) * be;
                    g0[2 * k] = log_logistic(a0);
                    g0[2 * k + 1] = log_logistic(-a0);
                    g1[2 * k] = log_logistic(a1);
                    g1[2 * k + 1] = log_logistic(-a1);
                }
                for (bin, path) in paths.iter().enumerate() {
                    let mut e = dlog;
                    let mut l0 = total.baseline_log_total;
                    for &(flat, first) in path {
                        let idx = 2 * flat + usize::from(!first);
                        e += g1[idx] - g0[idx];
                        l0 += g0[idx];
                    }
                    effect[bin] = e;
                    base[bin] = l0;
                }
                acc.push(&effect, &base);
            }
            acc
        })
        .collect();
    let acc = parts.into_iter().fold(Moments::new(b), Moments::merge);
    let sd = if acc.n > 1 {
        acc.m2
            .iter()
            .map(|m| (m / (acc.n - 1) as f64).max(0.0).sqrt())
            .collect()
    } else {
        vec![0.0; b]
    };
    Ok(EffectCurve {
        mean: acc.mean,
        sd,
        baseline_mean: acc.base,
        low_confidence: n_samples == 1,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    #[serde(rename = "+")]
    Up,
    #[serde(rename = "-")]
    Down,
}

impl std::fmt::Display for Direction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Direction::Up => "+",
            Direction::Down => "-",
        })
    }
}

/// A run of significant bins, 1-based and inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Interval {
    pub start: usize,
    pub end: usize,
    pub direction: Direction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignificantIntervals {
    pub intervals: Vec<Interval>,
    pub z_threshold: f64,
}

impl SignificantIntervals {
    /// `+1`, `-1` or `0` per bin.
    pub fn bin_flags(&self, n_bins: usize) -> Vec<i8> {
        let mut flags = vec![0; n_bins];
        for iv in &self.intervals {
            let v = match iv.direction {
                Direction::Up => 1,
                Direction::Down => -1,
            };
            for f in &mut flags[iv.start - 1..iv.end] {
                *f = v;
            }
        }
        flags
    }
}

pub fn flag_significant_bins(curve: &EffectCurve, z: f64) -> SignificantIntervals {
    let mut intervals: Vec<Interval> = Vec::new();
    let mut open: Option<Interval> = None;
    for (i, (m, s)) in curve.mean.iter().zip(&curve.sd).enumerate() {
        let dir = if *s > 0.0 && m.abs() > z * s {
            Some(if *m > 0.0 { Direction::Up } else { Direction::Down })
        } else {
            None
        };
        match (open.as_mut(), dir) {
            (Some(iv), Some(d)) if iv.direction == d => iv.end = i + 1,
            (_, d) => {
                if let Some(iv) = open.take() {
                    intervals.push(iv);
                }
                open = d.map(|direction| Interval {
                    start: i + 1,
                    end: i + 1,
                    direction,
                });
            }
        }
    }
    intervals.extend(open);
    SignificantIntervals {
        intervals,
        z_threshold: z,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectReport {
    pub region_id: String,
    pub bin_width: u32,
    pub curve: EffectCurve,
    pub significant: SignificantIntervals,
}
