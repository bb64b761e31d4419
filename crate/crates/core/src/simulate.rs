//! Synthetic two-group count data, paired null/non-null design grids and
//! scoring by AUC.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pipeline::region_statistic;
use crate::types::{derive_seed, AnalysisConfig, CountsMatrix, Covariate};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationSpec {
    /// Expected counts per bin at depth 1, before the effect.
    pub base_intensity: Vec<f64>,
    /// Log fold change of group one per bin.
    pub effect: Vec<f64>,
    pub n_per_group: usize,
    pub depth_multiplier: f64,
    /// Sd of a per-sample log-normal intensity factor.
    pub dispersion: f64,
    pub seed: u64,
}

impl SimulationSpec {
    pub fn check(&self) -> Result<()> {
        if self.base_intensity.is_empty() || self.base_intensity.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::InvalidInput("base intensity must be finite and positive".into()));
        }
        if self.effect.len() != self.base_intensity.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} effect values for {} bins",
                self.effect.len(),
                self.base_intensity.len()
            )));
        }
        if self.effect.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("effect must be finite".into()));
        }
        if self.n_per_group < 1 {
            return Err(Error::InvalidInput("n_per_group must be at least 1".into()));
        }
        if !(self.depth_multiplier > 0.0 && self.depth_multiplier.is_finite()) {
            return Err(Error::InvalidInput("depth multiplier must be positive".into()));
        }
        if !(self.dispersion >= 0.0 && self.dispersion.is_finite()) {
            return Err(Error::InvalidInput("dispersion must be non-negative".into()));
        }
        Ok(())
    }

    /// Same spec with the effect removed.
    pub fn null(&self) -> Self {
        SimulationSpec {
            effect: vec![0.0; self.effect.len()],
            ..self.clone()
        }
    }

    /// Expected count of every bin for group `g` with no sample jitter.
    pub fn expected(&self, group: f64) -> Vec<f64> {
        self.base_intensity
            .iter()
            .zip(&self.effect)
            .map(|(b, e)| self.depth_multiplier * b * (group * e).exp())
            .collect()
    }
}

/// Draws the counts: sample `i` of group `g ∈ {0, 1}` gets
/// `depth · base_b · exp(g · effect_b) · exp(ε_i)`, `ε_i ~ N(0, dispersion²)`.
/// Library sizes are the expected totals `depth · Σ base_b`, shared by all
/// samples, so neither the effect nor the jitter is normalized away. The
/// first `n_per_group` samples form group zero.
pub fn simulate_dataset(spec: &SimulationSpec) -> Result<(CountsMatrix, Covariate)> {
    spec.check()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let jitter = Normal::new(0.0, spec.dispersion).map_err(|e| Error::InvalidInput(e.to_string()))?;
    let n = 2 * spec.n_per_group;
    let mut rows = Vec::with_capacity(n);
    let mut x = Vec::with_capacity(n);
    for i in 0..n {
        let g = if i < spec.n_per_group { 0.0 } else { 1.0 };
        let eps = if spec.dispersion > 0.0 {
            jitter.sample(&mut rng)
        } else {
            0.0
        };
        let row = spec
            .expected(g)
            .iter()
            .map(|m| {
                let lambda = m * eps.exp();
                Poisson::new(lambda)
                    .map(|p| p.sample(&mut rng) as u64)
                    .map_err(|e| Error::Numeric(format!("poisson rate {lambda}: {e}")))
            })
            .collect::<Result<Vec<u64>>>()?;
        rows.push(row);
        x.push(g);
    }
    let lib = spec.depth_multiplier * spec.base_intensity.iter().sum::<f64>();
    let counts = CountsMatrix::new(rows, 1, format!("sim-{:016x}", spec.seed))?.pad_to_power_of_two();
    Ok((counts, Covariate::new(x, vec![lib; n])?))
}

/// Shape of one simulated region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Template {
    pub name: String,
    pub base_intensity: Vec<f64>,
    pub effect: Vec<f64>,
}

fn bump(b: usize, center: f64, width: f64) -> f64 {
    let d = b as f64 - center;
    (-0.5 * d * d / (width * width)).exp()
}

/// Smooth positive intensity shapes with localized effects of three kinds
/// in turn: a single moderate bump, a narrow short-scale spike, and two
/// nearby bumps of opposite sign. `mean_count` is the average expected
/// count per bin at depth 1.
pub fn demo_templates(count: usize, n_bins: usize, mean_count: f64, seed: u64) -> Vec<Template> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bf = n_bins as f64;
    (0..count)
        .map(|t| {
            let mut base = vec![0.3; n_bins];
            for _ in 0..3 {
                let c = rng.random_range(0.0..bf);
                let w = rng.random_range(bf / 16.0..bf / 4.0).max(1.0);
                let h = rng.random_range(0.5..2.0);
                for (b, v) in base.iter_mut().enumerate() {
                    *v += h * bump(b, c, w);
                }
            }
            let mean = base.iter().sum::<f64>() / bf;
            base.iter_mut().for_each(|v| *v *= mean_count / mean);

            let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            let c = rng.random_range(bf * 0.2..bf * 0.8);
            let (name, effect) = match t % 3 {
                0 => {
                    let w = rng.random_range(1.5..(bf / 8.0).max(2.0));
                    let a = sign * rng.random_range(0.35..0.75);
                    ("bump", (0..n_bins).map(|b| a * bump(b, c, w)).collect::<Vec<_>>())
                }
                1 => {
                    let w = rng.random_range(0.6..1.2);
                    let a = sign * rng.random_range(0.6..1.0);
                    ("spike", (0..n_bins).map(|b| a * bump(b, c, w)).collect())
                }
                _ => {
                    let w = rng.random_range(1.0..2.5);
                    let a = sign * rng.random_range(0.35..0.75);
                    let gap = 2.5 * w;
                    (
                        "opposite",
                        (0..n_bins)
                            .map(|b| a * (bump(b, c - gap / 2.0, w) - bump(b, c + gap / 2.0, w)))
                            .collect(),
                    )
                }
            };
            Template {
                name: format!("{name}-{t}"),
                base_intensity: base,
                effect,
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DesignCell {
    /// Total number of samples, split evenly between the groups.
    pub sample_size: usize,
    pub depth: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignPair {
    pub cell: DesignCell,
    pub template: usize,
    pub null: SimulationSpec,
    pub alt: SimulationSpec,
}

/// Templates × sample sizes × depths, each giving a null and a non-null
/// spec. Seeds come from the cell and template position.
pub fn paired_design(
    templates: &[Template],
    sample_sizes: &[usize],
    depths: &[f64],
    dispersion: f64,
    seed: u64,
) -> Result<Vec<DesignPair>> {
    if templates.is_empty() || sample_sizes.is_empty() || depths.is_empty() {
        return Err(Error::InvalidInput(
            "design needs templates, sample sizes and depths".into(),
        ));
    }
    if let Some(n) = sample_sizes.iter().find(|&&n| n < 2 || n % 2 != 0) {
        return Err(Error::InvalidInput(format!(
            "sample size {n} is not a positive even number"
        )));
    }
    let mut out = Vec::with_capacity(templates.len() * sample_sizes.len() * depths.len());
    for (si, &n) in sample_sizes.iter().enumerate() {
        for (di, &depth) in depths.iter().enumerate() {
            let cell = DesignCell { sample_size: n, depth };
            let cell_seed = derive_seed(seed, (si * depths.len() + di) as u64);
            for (ti, t) in templates.iter().enumerate() {
                let pair_seed = derive_seed(cell_seed, ti as u64);
                let alt = SimulationSpec {
                    base_intensity: t.base_intensity.clone(),
                    effect: t.effect.clone(),
                    n_per_group: n / 2,
                    depth_multiplier: depth,
                    dispersion,
                    seed: derive_seed(pair_seed, 1),
                };
                let null = SimulationSpec {
                    seed: derive_seed(pair_seed, 0),
                    ..alt.null()
                };
                alt.check()?;
                out.push(DesignPair {
                    cell,
                    template: ti,
                    null,
                    alt,
                });
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredDataset {
    pub score: f64,
    pub label: bool,
}

/// Mann–Whitney AUC: share of (positive, negative) pairs won by the
/// positive, ties counting one half.
pub fn auc(scored: &[ScoredDataset]) -> Result<f64> {
    let mut sorted: Vec<&ScoredDataset> = scored.iter().collect();
    if sorted.iter().any(|s| s.score.is_nan()) {
        return Err(Error::InvalidInput("NaN score".into()));
    }
    sorted.sort_by(|a, b| a.score.total_cmp(&b.score));
    let pos = sorted.iter().filter(|s| s.label).count();
    let neg = sorted.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::InvalidInput(
            "AUC needs both positive and negative labels".into(),
        ));
    }
    let mut wins = 0.0;
    let mut neg_below = 0usize;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j < sorted.len() && sorted[j].score == sorted[i].score {
            j += 1;
        }
        let p = sorted[i..j].iter().filter(|s| s.label).count();
        let q = (j - i) - p;
        wins += p as f64 * (neg_below as f64 + 0.5 * q as f64);
        neg_below += q;
        i = j;
    }
    Ok(wins / (pos as f64 * neg as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
}

/// One-sample Kolmogorov–Smirnov test against U(0, 1), with the asymptotic
/// Kolmogorov distribution and the usual small-sample correction of its
/// argument.
pub fn ks_uniform(values: &[f64]) -> Result<KsResult> {
    if values.is_empty() {
        return Err(Error::InvalidInput("KS test needs at least one value".into()));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    let d = v
        .iter()
        .enumerate()
        .map(|(i, x)| {
            let x = x.clamp(0.0, 1.0);
            ((i + 1) as f64 / n - x).max(x - i as f64 / n)
        })
        .fold(0.0, f64::max);
    let sn = n.sqrt();
    let lambda = (sn + 0.12 + 0.11 / sn) * d;
    Ok(KsResult {
        statistic: d,
        p_value: kolmogorov_q(lambda),
    })
}

fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for k in 1..=200 {
        let kf = k as f64;
        let term = sign * (-2.0 * kf * kf * lambda * lambda).exp();
        sum += term;
        if term.abs() < 1e-16 * sum.abs() {
            break;
        }
        sign = -sign;
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Design grid for `simulate`, read from JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DesignGrid {
    pub n_bins: usize,
    pub pairs_per_cell: usize,
    pub sample_sizes: Vec<usize>,
    pub depths: Vec<f64>,
    pub dispersion: f64,
    pub mean_count: f64,
    pub seed: u64,
}

impl Default for DesignGrid {
    fn default() -> Self {
        DesignGrid {
            n_bins: 32,
            pairs_per_cell: 20,
            sample_sizes: vec![6, 10],
            depths: vec![1.0],
            dispersion: 0.1,
            mean_count: 8.0,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellScores {
    pub cell: DesignCell,
    pub scores: Vec<ScoredDataset>,
    /// Datasets whose analysis failed; left out of `scores`.
    pub failures: usize,
}

impl CellScores {
    pub fn auc(&self) -> Result<f64> {
        auc(&self.scores)
    }
}

/// Simulates and scores every dataset of the grid by `log Λ`, in parallel.
pub fn run_design(grid: &DesignGrid, config: &AnalysisConfig) -> Result<Vec<CellScores>> {
    let templates = demo_templates(
        grid.pairs_per_cell,
        grid.n_bins,
        grid.mean_count,
        derive_seed(grid.seed, u64::MAX),
    );
    let pairs = paired_design(&templates, &grid.sample_sizes, &grid.depths, grid.dispersion, grid.seed)?;
    let jobs: Vec<(usize, &SimulationSpec, bool)> = pairs
        .iter()
        .enumerate()
        .flat_map(|(i, p)| [(i, &p.null, false), (i, &p.alt, true)])
        .collect();
    let scored: Vec<(usize, Option<ScoredDataset>)> = jobs
        .par_iter()
        .map(|&(i, spec, label)| {
            let s = simulate_dataset(spec).and_then(|(c, x)| region_statistic(&c, &x, config));
            match s {
                Ok(score) => (i, Some(ScoredDataset { score, label })),
                Err(e) => {
                    log::warn!("simulated dataset {i} failed: {e}");
                    (i, None)
                }
            }
        })
        .collect();
    let mut cells: Vec<CellScores> = Vec::new();
    for (i, s) in scored {
        let cell = pairs[i].cell;
        let idx = match cells.iter().position(|c| c.cell == cell) {
            Some(k) => k,
            None => {
                cells.push(CellScores {
                    cell,
                    scores: Vec::new(),
                    failures: 0,
                });
                cells.len() - 1
            }
        };
        match s {
            Some(s) => cells[idx].scores.push(s),
            None => cells[idx].failures += 1,
        }
    }
    Ok(cells)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use statrs::distribution::{ContinuousCDF, StudentsT};

    fn spec(effect: f64, depth: f64, seed: u64) -> SimulationSpec {
        SimulationSpec {
            base_intensity: vec![10.0, 20.0, 30.0, 40.0],
            effect: vec![effect; 4],
            n_per_group: 3,
            depth_multiplier: depth,
            dispersion: 0.0,
            seed,
        }
    }

    #[test]
    fn expected_counts_scale_with_depth() {
        let s = SimulationSpec {
            base_intensity: vec![250_000.0; 4],
            ..spec(0.0, 0.0001, 1)
        };
        assert!((s.expected(0.0).iter().sum::<f64>() - 100.0).abs() < 1e-9);
        let doubled = SimulationSpec {
            depth_multiplier: 0.0002,
            ..s.clone()
        };
        for (a, b) in s.expected(1.0).iter().zip(doubled.expected(1.0)) {
            assert!((2.0 * a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn reproducible_and_validated() {
        let a = simulate_dataset(&spec(0.5, 1.0, 4)).unwrap();
        let b = simulate_dataset(&spec(0.5, 1.0, 4)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, simulate_dataset(&spec(0.5, 1.0, 5)).unwrap());
        assert_eq!(a.1.values, vec![0.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        let bad = SimulationSpec {
            n_per_group: 0,
            ..spec(0.0, 1.0, 1)
        };
        assert!(simulate_dataset(&bad).is_err());
    }

    #[test]
    fn null_totals_t_test_is_calibrated() {
        let t = StudentsT::new(0.0, 1.0, 4.0).unwrap();
        let rejections = (0..200)
            .filter(|&seed| {
                let (c, _) = simulate_dataset(&spec(0.0, 1.0, seed)).unwrap();
                let tot: Vec<f64> = c.totals().iter().map(|&v| v as f64).collect();
                let (a, b) = tot.split_at(3);
                let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
                let var = |v: &[f64], m: f64| v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64;
                let (ma, mb) = (mean(a), mean(b));
                let sp = ((var(a, ma) + var(b, mb)) / 2.0).sqrt();
                let stat = (ma - mb) / (sp * (2.0f64 / 3.0).sqrt());
                2.0 * (1.0 - t.cdf(stat.abs())) < 0.05
            })
            .count();
        // binomial(200, 0.05) sd ≈ 3.1
        assert!((2..=20).contains(&rejections), "{rejections} rejections");
    }

    #[test]
    fn design_counts_and_seeds() {
        let t = demo_templates(5, 16, 8.0, 3);
        let d = paired_design(&t, &[6], &[1.0], 0.1, 9).unwrap();
        assert_eq!(d.len(), 5);
        assert!(d.iter().all(|p| p.null.effect.iter().all(|e| *e == 0.0)));
        let seeds: std::collections::BTreeSet<u64> = d.iter().flat_map(|p| [p.null.seed, p.alt.seed]).collect();
        assert_eq!(seeds.len(), 10);
        assert_eq!(d, paired_design(&t, &[6], &[1.0], 0.1, 9).unwrap());
        assert!(paired_design(&[], &[6], &[1.0], 0.1, 9).is_err());
    }

    #[test]
    fn auc_examples() {
        let s = |score, label| ScoredDataset { score, label };
        assert_eq!(auc(&[s(2.0, true), s(1.0, false)]).unwrap(), 1.0);
        assert_eq!(auc(&[s(1.0, true), s(1.0, false), s(1.0, true)]).unwrap(), 0.5);
        let v = [s(3.0, true), s(1.0, true), s(2.0, false), s(0.0, false)];
        assert_eq!(auc(&v).unwrap(), 0.75);
        assert!(auc(&[s(1.0, true)]).is_err());
    }

    #[test]
    fn ks_on_grid_and_shifted() {
        let even: Vec<f64> = (0..500).map(|i| (i as f64 + 0.5) / 500.0).collect();
        assert!(ks_uniform(&even).unwrap().p_value > 0.99);
        let skewed: Vec<f64> = even.iter().map(|v| v * v).collect();
        assert!(ks_uniform(&skewed).unwrap().p_value < 1e-6);
    }

    proptest! {
        #[test]
        fn auc_invariant_to_monotone_transform(v in proptest::collection::vec((-5.0f64..5.0, any::<bool>()), 2..50)) {
            prop_assume!(v.iter().any(|x| x.1) && v.iter().any(|x| !x.1));
            let a: Vec<_> = v.iter().map(|&(score, label)| ScoredDataset { score, label }).collect();
            let b: Vec<_> = v.iter().map(|&(score, label)| ScoredDataset { score: score.exp() * 3.0 + 1.0, label }).collect();
            prop_assert!((auc(&a).unwrap() - auc(&b).unwrap()).abs() < 1e-12);
        }
    }
}
