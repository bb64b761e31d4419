//! Multi-scale reparameterization of a length-`B` intensity vector into
//! `B - 1` log-ratios plus a total, the matching count half-sum table, and
//! circular shifts for translation-invariant analysis.
//!
//! Nodes are enumerated scale-major, location-minor: node `(s, l)` (both
//! 1-based) sits at flat index `2^(s-1) - 1 + (l - 1)`.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NodeIndex {
    pub scale: u32,
    pub location: usize,
}

impl NodeIndex {
    pub fn new(scale: u32, location: usize) -> Self {
        debug_assert!(scale >= 1 && location >= 1 && location <= 1 << (scale - 1));
        NodeIndex { scale, location }
    }

    pub fn flat(self) -> usize {
        (1usize << (self.scale - 1)) - 1 + (self.location - 1)
    }

    pub fn from_flat(idx: usize) -> Self {
        let scale = usize::BITS - (idx + 1).leading_zeros();
        let location = idx + 2 - (1usize << (scale - 1));
        NodeIndex { scale, location }
    }

    /// Half-open 0-based bin ranges `(start, mid, end)` of `I_sl`; the first
    /// half is `start..mid`.
    pub fn interval(self, n_bins: usize) -> (usize, usize, usize) {
        let len = n_bins >> (self.scale - 1);
        let start = (self.location - 1) * len;
        (start, start + len / 2, start + len)
    }
}

/// Iterator over all nodes of a `B`-bin tree in flat order.
pub fn nodes(n_bins: usize) -> impl Iterator<Item = NodeIndex> {
    (0..n_bins.saturating_sub(1)).map(NodeIndex::from_flat)
}

/// `J = log2(B)`.
pub fn n_scales(n_bins: usize) -> u32 {
    debug_assert!(n_bins.is_power_of_two());
    n_bins.trailing_zeros()
}

fn check_dyadic(n: usize) -> Result<()> {
    if n < 2 || !n.is_power_of_two() {
        return Err(Error::NotPowerOfTwo(n));
    }
    Ok(())
}

/// Half-sums `(y-, y+)` of every node plus the region total.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MultiscaleTable {
    pub minus: Vec<u64>,
    pub plus: Vec<u64>,
    pub total: u64,
}

impl MultiscaleTable {
    pub fn n_bins(&self) -> usize {
        self.minus.len() + 1
    }

    pub fn half_sums(&self, node: NodeIndex) -> (u64, u64) {
        let i = node.flat();
        (self.minus[i], self.plus[i])
    }

    pub fn trials(&self, node: NodeIndex) -> u64 {
        let (m, p) = self.half_sums(node);
        m + p
    }
}

/// Bottom-up block sums: `levels[s]` holds the `2^s` sums of blocks of
/// length `B / 2^s`, for `s = 0..=J`.
fn block_sums<T>(y: &[T]) -> Vec<Vec<T>>
where
    T: Copy + std::ops::Add<Output = T>,
{
    let j = n_scales(y.len()) as usize;
    let mut levels = vec![Vec::new(); j + 1];
    levels[j] = y.to_vec();
    for s in (0..j).rev() {
        let finer = &levels[s + 1];
        levels[s] = finer.chunks(2).map(|c| c[0] + c[1]).collect();
    }
    levels
}

pub fn forward_counts(y: &[u64]) -> Result<MultiscaleTable> {
    check_dyadic(y.len())?;
    let levels = block_sums(y);
    let mut minus = Vec::with_capacity(y.len() - 1);
    let mut plus = Vec::with_capacity(y.len() - 1);
    for level in &levels[1..] {
        for pair in level.chunks(2) {
            minus.push(pair[0]);
            plus.push(pair[1]);
        }
    }
    Ok(MultiscaleTable {
        minus,
        plus,
        total: levels[0][0],
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntensityParams {
    pub alpha: Vec<f64>,
    pub lambda_tot: f64,
}

pub fn multiscale_from_intensity(lambda: &[f64]) -> Result<IntensityParams> {
    check_dyadic(lambda.len())?;
    if let Some(v) = lambda.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
        return Err(Error::InvalidInput(format!(
            "intensity entries must be positive, got {v}"
        )));
    }
    let levels = block_sums(lambda);
    let alpha = levels[1..]
        .iter()
        .flat_map(|level| level.chunks(2).map(|p| (p[0] / p[1]).ln()))
        .collect();
    Ok(IntensityParams {
        alpha,
        lambda_tot: levels[0][0],
    })
}

/// `logistic(a)` and `1 - logistic(a)` without cancellation.
#[inline]
pub fn logistic_pair(a: f64) -> (f64, f64) {
    if a >= 0.0 {
        let e = (-a).exp();
        (1.0 / (1.0 + e), e / (1.0 + e))
    } else {
        let e = a.exp();
        (e / (1.0 + e), 1.0 / (1.0 + e))
    }
}

/// `log logistic(a)`.
#[inline]
pub fn log_logistic(a: f64) -> f64 {
    if a >= 0.0 {
        -(-a).exp().ln_1p()
    } else {
        a - a.exp().ln_1p()
    }
}

/// Inverse transform `f_ms`: splits `lambda_tot` down the tree.
pub fn intensity_from_multiscale(params: &IntensityParams) -> Result<Vec<f64>> {
    let n_bins = params.alpha.len() + 1;
    check_dyadic(n_bins)?;
    if !(params.lambda_tot > 0.0) {
        return Err(Error::InvalidInput("lambda_tot must be positive".into()));
    }
    let mut mass = vec![params.lambda_tot];
    let mut offset = 0;
    while mass.len() < n_bins {
        let width = mass.len();
        let mut next = Vec::with_capacity(2 * width);
        for (l, &m) in mass.iter().enumerate() {
            let (p, q) = logistic_pair(params.alpha[offset + l]);
            next.push(m * p);
            next.push(m * q);
        }
        offset += width;
        mass = next;
    }
    Ok(mass)
}

pub(crate) fn ln_factorial(k: u64) -> f64 {
    ln_gamma(k as f64 + 1.0)
}

fn ln_choose(n: u64, k: u64) -> f64 {
    ln_factorial(n) - ln_factorial(k) - ln_factorial(n - k)
}

pub(crate) fn poisson_ln_pmf(y: u64, lambda: f64) -> f64 {
    if y == 0 {
        -lambda
    } else {
        y as f64 * lambda.ln() - lambda - ln_factorial(y)
    }
}

/// Log-likelihood of the counts through the Poisson-total times
/// per-node binomial factorization.
pub fn factorized_loglik(table: &MultiscaleTable, params: &IntensityParams) -> Result<f64> {
    if table.minus.len() != params.alpha.len() {
        return Err(Error::DimensionMismatch(format!(
            "table has {} nodes, parameters have {}",
            table.minus.len(),
            params.alpha.len()
        )));
    }
    let mut ll = poisson_ln_pmf(table.total, params.lambda_tot);
    for ((&m, &p), &a) in table.minus.iter().zip(&table.plus).zip(&params.alpha) {
        let n = m + p;
        if n == 0 {
            continue;
        }
        ll += ln_choose(n, m) + m as f64 * log_logistic(a) + p as f64 * log_logistic(-a);
    }
    Ok(ll)
}

/// `out[b] = y[(b + k) mod B]`.
pub fn circular_shift<T: Clone>(y: &[T], k: usize) -> Result<Vec<T>> {
    if k >= y.len() && !(k == 0 && y.is_empty()) {
        return Err(Error::ShiftOutOfRange {
            shift: k,
            bins: y.len(),
        });
    }
    let mut out = Vec::with_capacity(y.len());
    out.extend_from_slice(&y[k..]);
    out.extend_from_slice(&y[..k]);
    Ok(out)
}

/// Start bin (in the unshifted frame) of the window that node `(s, l)`
/// covers after shifting the data by `k`.
pub fn window_start(node: NodeIndex, shift: usize, n_bins: usize) -> usize {
    let (start, _, _) = node.interval(n_bins);
    (shift + start) % n_bins
}

/// Cyclic sums of every aligned window length `2^j` at every start offset.
/// All `B` shifted trees read their half-sums from this `O(B log B)` table.
#[derive(Debug, Clone)]
pub struct WindowSums {
    n_bins: usize,
    /// `by_len[j][t]` = sum of `y[t..t + 2^j]` cyclically.
    by_len: Vec<Vec<u64>>,
}

impl WindowSums {
    pub fn new(y: &[u64]) -> Result<Self> {
        check_dyadic(y.len())?;
        let b = y.len();
        let j = n_scales(b) as usize;
        let mut by_len = Vec::with_capacity(j);
        by_len.push(y.to_vec());
        for lvl in 1..j {
            let half = 1usize << (lvl - 1);
            let prev: &Vec<u64> = &by_len[lvl - 1];
            let next = (0..b).map(|t| prev[t] + prev[(t + half) % b]).collect();
            by_len.push(next);
        }
        Ok(WindowSums { n_bins: b, by_len })
    }

    /// `(y-, y+)` of the scale-`s` window starting at bin `start`.
    pub fn half_sums(&self, scale: u32, start: usize) -> (u64, u64) {
        let b = self.n_bins;
        let half = b >> scale;
        let sums = &self.by_len[half.trailing_zeros() as usize];
        (sums[start % b], sums[(start + half) % b])
    }

    pub fn table_for_shift(&self, shift: usize) -> MultiscaleTable {
        let b = self.n_bins;
        let mut minus = Vec::with_capacity(b - 1);
        let mut plus = Vec::with_capacity(b - 1);
        for node in nodes(b) {
            let (m, p) = self.half_sums(node.scale, window_start(node, shift, b));
            minus.push(m);
            plus.push(p);
        }
        let total = minus[0] + plus[0];
        MultiscaleTable { minus, plus, total }
    }
}

/// Tables of every requested circular shift, in the order given.
pub fn ti_node_set(y: &[u64], shifts: &[usize]) -> Result<Vec<(usize, MultiscaleTable)>> {
    let sums = WindowSums::new(y)?;
    shifts
        .iter()
        .map(|&k| {
            if k >= y.len() {
                Err(Error::ShiftOutOfRange {
                    shift: k,
                    bins: y.len(),
                })
            } else {
                Ok((k, sums.table_for_shift(k)))
            }
        })
        .collect()
}
