//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails. Every oracle here is coded
//! independently of the library routine it checks.

#![allow(clippy::needless_range_loop)]

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use statrs::distribution::{Discrete, Poisson};

use msdiff::ebshrink::{
    build_sigma_grid, fit_mixture_em, posterior_moments, EmOptions, GridPolicy, MixturePrior, NormalObservation,
    PosteriorSummary,
};
use msdiff::effects::{effect_posterior_mc, effect_posterior_taylor, EffectCurve, NodePosterior, TotalPosterior};
use msdiff::glm::{fit_binomial_node, fit_binomial_node_traced, GlmmOptions};
use msdiff::inference::{
    empirical_pvalue, empirical_pvalues, permutation_null, qvalues, qvalues_with_pi0, NullReference,
};
use msdiff::io::{format_results, result_rows};
use msdiff::mstransform::{factorized_loglik, forward_counts, intensity_from_multiscale, multiscale_from_intensity};
use msdiff::pipeline::{analyze_batch, batch_permutation_null, region_statistic, RegionBatch};
use msdiff::simulate::{
    demo_templates, ks_uniform, run_design, simulate_dataset, CellScores, DesignGrid, SimulationSpec,
};
use msdiff::types::{derive_seed, AnalysisConfig, Covariate};

struct Report {
    failures: usize,
}

impl Report {
    fn line(&mut self, id: &str, name: &str, ok: bool, detail: String) {
        if !ok {
            self.failures += 1;
        }
        println!("{} [{id}] {name}: {detail}", if ok { "PASS" } else { "FAIL" });
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

// 1 ---------------------------------------------------------------------

fn factorization(r: &mut Report) {
    let start = Instant::now();
    let mut g = rng(101);
    let mut worst: f64 = 0.0;
    for i in 0..1000 {
        let b = 1usize << (1 + i % 6);
        let lambda: Vec<f64> = (0..b).map(|_| g.random_range(0.05..40.0)).collect();
        let y: Vec<u64> = lambda
            .iter()
            .map(|&l| rand_distr::Poisson::new(l).unwrap().sample(&mut g) as u64)
            .collect();
        let oracle: f64 = y
            .iter()
            .zip(&lambda)
            .map(|(&k, &l)| Poisson::new(l).unwrap().ln_pmf(k))
            .sum();
        let table = forward_counts(&y).unwrap();
        let params = multiscale_from_intensity(&lambda).unwrap();
        let got = factorized_loglik(&table, &params).unwrap();
        worst = worst.max((got - oracle).abs());
    }
    let secs = start.elapsed().as_secs_f64();
    r.line(
        "1",
        "factorization identity",
        worst < 1e-10 && secs < 5.0,
        format!("max |diff| = {worst:.3e} over 1000 instances (< 1e-10), {secs:.2} s (< 5 s)"),
    );
}

// 2 ---------------------------------------------------------------------

fn round_trip(r: &mut Report) {
    let start = Instant::now();
    let mut g = rng(202);
    let mut worst: f64 = 0.0;
    for i in 0..1000 {
        let b = 1usize << (1 + i % 7);
        let lambda: Vec<f64> = (0..b).map(|_| (g.random_range(-6.0..6.0f64)).exp()).collect();
        let back = intensity_from_multiscale(&multiscale_from_intensity(&lambda).unwrap()).unwrap();
        for (a, b) in lambda.iter().zip(&back) {
            worst = worst.max((a - b).abs() / a);
        }
    }
    let secs = start.elapsed().as_secs_f64();
    r.line(
        "2",
        "transform round trip",
        worst < 1e-12 && secs < 1.0,
        format!("max relative error = {worst:.3e} (< 1e-12), {secs:.3} s (< 1 s)"),
    );
}

// 3 ---------------------------------------------------------------------

/// Newton–Raphson logistic MLE on grouped binomial data.
fn irls_logistic(y: &[f64], n: &[f64], x: &[f64]) -> Option<(f64, f64)> {
    let (mut a, mut b) = (0.0f64, 0.0f64);
    for _ in 0..200 {
        let (mut u0, mut u1, mut i00, mut i01, mut i11) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for k in 0..y.len() {
            let p = 1.0 / (1.0 + (-(a + b * x[k])).exp());
            let w = n[k] * p * (1.0 - p);
            let r = y[k] - n[k] * p;
            u0 += r;
            u1 += r * x[k];
            i00 += w;
            i01 += w * x[k];
            i11 += w * x[k] * x[k];
        }
        let det = i00 * i11 - i01 * i01;
        if det <= 0.0 {
            return None;
        }
        let da = (i11 * u0 - i01 * u1) / det;
        let db = (i00 * u1 - i01 * u0) / det;
        a += da;
        b += db;
        if a.abs() > 15.0 || b.abs() > 15.0 {
            return None;
        }
        if da.abs() < 1e-13 && db.abs() < 1e-13 {
            return Some((a, b));
        }
    }
    None
}

fn glmm_oracle(r: &mut Report) {
    let mut g = rng(303);
    let mut compared = 0;
    let mut worst: f64 = 0.0;
    let mut mismatched_informative = 0;
    let mut monotone_violations = 0;
    let mut traced = 0;
    while compared < 200 {
        let n = g.random_range(4..16usize);
        let x: Vec<f64> = (0..n).map(|i| if i < n / 2 { 0.0 } else { 1.0 }).collect();
        let mu = g.random_range(-2.0..2.0);
        let beta = g.random_range(-1.5..1.5);
        let trials: Vec<u64> = (0..n).map(|_| g.random_range(0..40u64)).collect();
        let succ: Vec<u64> = trials
            .iter()
            .zip(&x)
            .map(|(&t, &xi)| {
                let p = 1.0 / (1.0 + (-(mu + beta * xi)).exp());
                (0..t).filter(|_| g.random_bool(p)).count() as u64
            })
            .collect();
        let cov = Covariate::groups(x.clone()).unwrap();
        let yf: Vec<f64> = succ.iter().map(|&v| v as f64).collect();
        let nf: Vec<f64> = trials.iter().map(|&v| v as f64).collect();
        let Some((oa, ob)) = irls_logistic(&yf, &nf, &x) else {
            continue;
        };
        let est = fit_binomial_node(&succ, &trials, &cov, &GlmmOptions::fixed_effects()).unwrap();
        compared += 1;
        if !est.informative {
            mismatched_informative += 1;
            continue;
        }
        worst = worst.max((est.mu_hat() - oa).abs()).max((est.beta_hat - ob).abs());

        let (_, trace) = fit_binomial_node_traced(&succ, &trials, &cov, &GlmmOptions::default()).unwrap();
        traced += 1;
        if trace.profile.windows(2).any(|w| w[1] < w[0] - 1e-8) {
            monotone_violations += 1;
        }
    }
    r.line(
        "3",
        "GLMM oracle equivalence",
        worst < 1e-6 && mismatched_informative == 0 && monotone_violations == 0,
        format!(
            "max coefficient diff vs IRLS = {worst:.3e} (< 1e-6) on {compared} instances, {mismatched_informative} wrongly uninformative; \
             profile monotonicity violations {monotone_violations}/{traced}"
        ),
    );
}

// 4 ---------------------------------------------------------------------

fn ln_normal(x: f64, mean: f64, var: f64) -> f64 {
    -0.5 * (2.0 * std::f64::consts::PI * var).ln() - 0.5 * (x - mean) * (x - mean) / var
}

#[allow(clippy::too_many_arguments)]
fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
        return left + right + (left + right - whole) / 15.0;
    }
    simpson(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
        + simpson(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
}

fn integrate(f: &dyn Fn(f64) -> f64, cuts: &[f64], tol: f64) -> f64 {
    cuts.windows(2)
        .map(|w| {
            let (a, b) = (w[0], w[1]);
            let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
            let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
            simpson(f, a, b, fa, fm, fb, whole, tol, 50)
        })
        .sum()
}

/// Posterior mean and variance by direct numerical integration of
/// prior × likelihood, with the point mass handled in closed form.
fn quadrature_posterior(est: f64, se: f64, prior: &MixturePrior) -> (f64, f64) {
    let logs: Vec<f64> = std::iter::once(prior.pi[0].ln() + ln_normal(est, 0.0, se * se))
        .chain(
            prior
                .pi
                .iter()
                .skip(1)
                .zip(&prior.sigma_grid)
                .map(|(p, s)| p.ln() + ln_normal(est, 0.0, s * s + se * se)),
        )
        .collect();
    let reference = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let slab = |b: f64| -> f64 {
        let lik = ln_normal(est, b, se * se);
        prior
            .pi
            .iter()
            .skip(1)
            .zip(&prior.sigma_grid)
            .filter(|(p, _)| **p > 0.0)
            .map(|(p, s)| (p.ln() + ln_normal(b, 0.0, s * s) + lik - reference).exp())
            .sum()
    };
    let span = est.abs() + 14.0 * (prior.sigma_grid.last().copied().unwrap_or(1.0).max(se));
    let mut cuts = vec![-span, 0.0, est, span];
    for s in &prior.sigma_grid {
        cuts.extend([-4.0 * s, 4.0 * s]);
    }
    cuts.extend([est - 4.0 * se, est + 4.0 * se]);
    cuts.retain(|c| c.abs() <= span);
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let tol = 1e-13;
    let z0 = if prior.pi[0] > 0.0 {
        (logs[0] - reference).exp()
    } else {
        0.0
    };
    let z = z0 + integrate(&slab, &cuts, tol);
    let m1 = integrate(&|b| b * slab(b), &cuts, tol) / z;
    let m2 = integrate(&|b| b * b * slab(b), &cuts, tol) / z;
    (m1, m2 - m1 * m1)
}

fn eb_correctness(r: &mut Report) {
    let mut g = rng(404);
    // EM monotonicity, both with the default null weight and as plain ML
    let mut violations = 0;
    let mut fits = 0;
    for i in 0..200 {
        let m = g.random_range(1..300usize);
        let slab_sd = g.random_range(0.1..4.0);
        let null_frac = g.random_range(0.0..1.0);
        let obs: Vec<NormalObservation> = (0..m)
            .map(|_| {
                let se = g.random_range(0.2..2.0);
                let beta = if g.random_bool(null_frac) {
                    0.0
                } else {
                    Normal::new(0.0, slab_sd).unwrap().sample(&mut g)
                };
                NormalObservation::new(beta + Normal::new(0.0, se).unwrap().sample(&mut g), se)
            })
            .collect();
        let grid = build_sigma_grid(&obs, &GridPolicy::default()).unwrap();
        let opts = if i % 2 == 0 {
            EmOptions::default()
        } else {
            EmOptions::max_likelihood(1e-7, 500)
        };
        let fit = fit_mixture_em(&obs, &grid, &opts);
        fits += 1;
        if fit.trace.windows(2).any(|w| w[1] < w[0] - 1e-8) {
            violations += 1;
        }
    }

    // posterior moments against quadrature
    let mut worst: f64 = 0.0;
    for _ in 0..500 {
        let k = g.random_range(1..7usize);
        let s0: f64 = g.random_range(0.02..1.0);
        let grid: Vec<f64> = (0..k)
            .map(|j| s0 * 2f64.powf(0.5 + j as f64 * g.random_range(0.5..1.5)))
            .collect();
        let mut grid = grid;
        grid.sort_by(f64::total_cmp);
        grid.dedup();
        let raw: Vec<f64> = (0..=grid.len()).map(|_| g.random_range(0.0..1.0)).collect();
        let total: f64 = raw.iter().sum();
        let mut pi: Vec<f64> = raw.iter().map(|v| v / total).collect();
        let fix = 1.0 - pi.iter().sum::<f64>();
        pi[0] += fix;
        let prior = MixturePrior::new(grid, pi).unwrap();
        let est = g.random_range(-6.0..6.0);
        let se = g.random_range(0.1..3.0);
        let post = posterior_moments(&NormalObservation::new(est, se), &prior);
        let (qm, qv) = quadrature_posterior(est, se, &prior);
        worst = worst.max((post.mean - qm).abs()).max((post.variance - qv).abs());
    }

    // π̂₀ on 5000 draws from 0.5 δ₀ + 0.5 N(0, 4) with se = 1
    let slab = Normal::new(0.0, 2.0).unwrap();
    let noise = Normal::new(0.0, 1.0).unwrap();
    let data: Vec<NormalObservation> = (0..5000)
        .map(|_| {
            let b = if g.random_bool(0.5) { 0.0 } else { slab.sample(&mut g) };
            NormalObservation::new(b + noise.sample(&mut g), 1.0)
        })
        .collect();
    let cfg = AnalysisConfig::default();
    let grid = build_sigma_grid(&data, &cfg.sigma_grid_policy).unwrap();
    let pi0 = fit_mixture_em(&data, &grid, &cfg.em_options()).prior.pi0();

    r.line(
        "4",
        "EB correctness",
        violations == 0 && worst < 1e-6 && (0.4..=0.6).contains(&pi0),
        format!(
            "EM monotonicity violations {violations}/{fits}; max |posterior - quadrature| = {worst:.3e} (< 1e-6) on 500 triples; pi0_hat = {pi0:.4} (in [0.4, 0.6])"
        ),
    );
}

// 6 ---------------------------------------------------------------------

struct NullCalibration {
    ok: bool,
    detail: String,
    min_stat: f64,
}

fn null_calibration() -> NullCalibration {
    let start = Instant::now();
    let cfg = AnalysisConfig::default();
    let n_regions = 500;
    let templates = demo_templates(n_regions, 16, 8.0, 606);
    let per_region: Vec<(f64, NullReference)> = templates
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let spec = SimulationSpec {
                base_intensity: t.base_intensity.clone(),
                effect: vec![0.0; 16],
                n_per_group: 3,
                depth_multiplier: 1.0,
                dispersion: 0.1,
                seed: derive_seed(606, i as u64),
            };
            let (counts, x) = simulate_dataset(&spec).unwrap();
            let stat = region_statistic(&counts, &x, &cfg).unwrap();
            let null = permutation_null(&counts, &x, &cfg, 99, derive_seed(607, i as u64)).unwrap();
            (stat, null)
        })
        .collect();
    let min_stat = per_region
        .iter()
        .flat_map(|(s, n)| std::iter::once(*s).chain(n.statistics.iter().copied()))
        .fold(f64::INFINITY, f64::min);
    let pooled = NullReference::pooled(per_region.iter().map(|(_, n)| n.clone())).unwrap();
    let stats: Vec<f64> = per_region.iter().map(|(s, _)| *s).collect();
    let p = empirical_pvalues(&stats, &pooled).unwrap();
    let ks = ks_uniform(&p).unwrap();

    // per-region references, for contrast: 19 distinct relabelings at n = 6
    let own: Vec<f64> = per_region
        .iter()
        .map(|(s, n)| empirical_pvalue(*s, n).unwrap())
        .collect();
    let own_ks = ks_uniform(&own).unwrap();
    let secs = start.elapsed().as_secs_f64();
    NullCalibration {
        ok: ks.p_value > 0.01,
        detail: format!(
            "{n_regions} null regions vs pooled permutation null of {} statistics: KS D = {:.4}, p = {:.4} (> 0.01); \
             per-region 19-permutation p-values alone: KS p = {:.2e}; {secs:.0} s",
            pooled.len(),
            ks.statistic,
            ks.p_value,
            own_ks.p_value
        ),
        min_stat,
    }
}

// 7 ---------------------------------------------------------------------

fn power_trends() -> (bool, String, f64) {
    let start = Instant::now();
    let sizes = [6usize, 10, 70];
    let depths = [0.1, 1.0, 4.0];
    let grid = DesignGrid {
        n_bins: 32,
        pairs_per_cell: 200,
        sample_sizes: sizes.to_vec(),
        depths: depths.to_vec(),
        dispersion: 0.1,
        mean_count: 8.0,
        seed: 707,
    };
    let cells: Vec<CellScores> = run_design(&grid, &AnalysisConfig::default()).unwrap();
    let min_stat = cells
        .iter()
        .flat_map(|c| c.scores.iter().map(|s| s.score))
        .fold(f64::INFINITY, f64::min);
    let failures: usize = cells.iter().map(|c| c.failures).sum();
    let auc_at = |n: usize, d: f64| -> f64 {
        cells
            .iter()
            .find(|c| c.cell.sample_size == n && c.cell.depth == d)
            .map(|c| c.auc().unwrap())
            .unwrap()
    };
    let mut ok = failures == 0;
    let mut table = Vec::new();
    for &n in &sizes {
        let row: Vec<String> = depths.iter().map(|&d| format!("{:.3}", auc_at(n, d))).collect();
        table.push(format!("n={n}: {}", row.join(" ")));
    }
    for &d in &depths {
        for w in sizes.windows(2) {
            ok &= auc_at(w[1], d) >= auc_at(w[0], d) - 0.02;
        }
    }
    for &n in &sizes {
        for w in depths.windows(2) {
            ok &= auc_at(n, w[1]) >= auc_at(n, w[0]) - 0.02;
        }
    }
    let top = auc_at(70, 4.0);
    ok &= top > 0.85;
    let secs = start.elapsed().as_secs_f64();
    (
        ok,
        format!(
            "AUC by depth (0.1, 1, 4): [{}]; strongest cell {top:.3} (> 0.85); {failures} failed analyses; {secs:.0} s",
            table.join("; ")
        ),
        min_stat,
    )
}

// 8 ---------------------------------------------------------------------

fn spike_slab_summary(g: &mut ChaCha8Rng, max_sd: f64) -> PosteriorSummary {
    loop {
        let p0 = if g.random_bool(0.3) {
            0.0
        } else {
            g.random_range(0.0..0.6)
        };
        let slab_mean: f64 = g.random_range(-1.0..1.0);
        let slab_sd: f64 = g.random_range(0.0..0.5);
        let mean = (1.0 - p0) * slab_mean;
        let variance = (1.0 - p0) * (slab_sd * slab_sd + slab_mean * slab_mean) - mean * mean;
        if variance.sqrt() <= max_sd {
            return PosteriorSummary {
                mean,
                variance: variance.max(0.0),
                prob_zero: p0,
            };
        }
    }
}

/// Observation-space effect from explicit intensities of both groups.
fn direct_effect(mu_star: &[f64], beta: &[f64], c: &[f64], dlog: f64) -> Vec<f64> {
    let a0: Vec<f64> = (0..mu_star.len()).map(|k| mu_star[k] - c[k] * beta[k]).collect();
    let a1: Vec<f64> = (0..mu_star.len())
        .map(|k| mu_star[k] + (1.0 - c[k]) * beta[k])
        .collect();
    let l0 = intensity_from_multiscale(&msdiff::mstransform::IntensityParams {
        alpha: a0,
        lambda_tot: 1.0,
    })
    .unwrap();
    let l1 = intensity_from_multiscale(&msdiff::mstransform::IntensityParams {
        alpha: a1,
        lambda_tot: dlog.exp(),
    })
    .unwrap();
    l0.iter().zip(&l1).map(|(a, b)| (b / a).ln()).collect()
}

fn effect_oracle(r: &mut Report) {
    let mut g = rng(808);
    let mut worst_z: f64 = 0.0;
    let mut outside = 0;
    let mut bins = 0;
    for i in 0..50 {
        let b = [2usize, 4, 8][i % 3];
        let nodes: Vec<NodePosterior> = (0..b - 1)
            .map(|_| NodePosterior {
                mu_star: spike_slab_summary(&mut g, 0.5),
                beta: spike_slab_summary(&mut g, 0.5),
                centering: g.random_range(0.2..0.8),
            })
            .collect();
        let total = TotalPosterior {
            log_fc_mean: g.random_range(-1.0..1.0),
            log_fc_var: g.random_range(0.0..0.25),
            baseline_log_total: 0.0,
        };
        let taylor = effect_posterior_taylor(&nodes, &total).unwrap();
        let n_mc = 10_000;
        let mc = effect_posterior_mc(&nodes, &total, n_mc, derive_seed(809, i as u64)).unwrap();
        for k in 0..b {
            let se = mc.sd[k] / (n_mc as f64).sqrt();
            let z = (taylor.mean[k] - mc.mean[k]).abs() / se;
            worst_z = worst_z.max(z);
            bins += 1;
            if z > 3.0 {
                outside += 1;
            }
        }
    }

    let mut worst_exact: f64 = 0.0;
    for i in 0..50 {
        let b = 1usize << (1 + i % 5);
        let mu: Vec<f64> = (0..b - 1).map(|_| g.random_range(-2.0..2.0)).collect();
        let beta: Vec<f64> = (0..b - 1).map(|_| g.random_range(-2.0..2.0)).collect();
        let c: Vec<f64> = (0..b - 1).map(|_| g.random_range(0.0..1.0)).collect();
        let dlog = g.random_range(-1.0..1.0);
        let nodes: Vec<NodePosterior> = (0..b - 1)
            .map(|k| NodePosterior::degenerate(mu[k], beta[k], c[k]))
            .collect();
        let oracle = direct_effect(&mu, &beta, &c, dlog);
        let taylor: EffectCurve = effect_posterior_taylor(&nodes, &TotalPosterior::fixed(dlog)).unwrap();
        let mc = effect_posterior_mc(&nodes, &TotalPosterior::fixed(dlog), 16, 1).unwrap();
        for k in 0..b {
            worst_exact = worst_exact
                .max((taylor.mean[k] - oracle[k]).abs())
                .max((mc.mean[k] - oracle[k]).abs())
                .max(taylor.sd[k])
                .max(mc.sd[k]);
        }
    }
    r.line(
        "8",
        "effect-curve oracle",
        outside == 0 && worst_exact < 1e-12,
        format!(
            "Taylor vs MC (10000 draws): {outside}/{bins} bins beyond 3 MC standard errors, max |diff|/se = {worst_z:.2}; \
             degenerate posteriors max deviation from direct intensity ratio = {worst_exact:.2e} (< 1e-12)"
        ),
    );
}

// 9 ---------------------------------------------------------------------

fn brute_force_q(p: &[f64], pi0: f64) -> Vec<f64> {
    let m = p.len() as f64;
    p.iter()
        .map(|&pi| {
            p.iter()
                .filter(|&&t| t >= pi)
                .map(|&t| pi0 * m * t / p.iter().filter(|&&v| v <= t).count() as f64)
                .fold(f64::INFINITY, f64::min)
                .min(1.0)
        })
        .collect()
}

fn bh_oracle(p: &[f64]) -> Vec<f64> {
    let m = p.len();
    let mut idx: Vec<usize> = (0..m).collect();
    idx.sort_by(|&a, &b| p[a].total_cmp(&p[b]));
    let mut q = vec![0.0; m];
    let mut acc: f64 = 1.0;
    for rank in (0..m).rev() {
        let i = idx[rank];
        // tied p-values all take the largest rank among them
        let mut top = rank;
        while top + 1 < m && p[idx[top + 1]] == p[i] {
            top += 1;
        }
        acc = acc.min(p[i] * m as f64 / (top + 1) as f64);
        q[i] = acc;
    }
    q
}

fn qvalue_oracle(r: &mut Report) {
    let mut g = rng(909);
    let mut worst: f64 = 0.0;
    let mut worst_bh: f64 = 0.0;
    for i in 0..100 {
        let m = g.random_range(1..=50usize);
        let p: Vec<f64> = (0..m)
            .map(|_| {
                if i % 3 == 0 {
                    f64::from(g.random_range(1..=20u32)) / 20.0
                } else {
                    g.random_range(0.0..1.0f64).powf(g.random_range(0.5..4.0)).max(1e-12)
                }
            })
            .collect();
        let above = p.iter().filter(|&&v| v > 0.5).count().max(1) as f64;
        let pi0 = (above / (m as f64 * 0.5)).min(1.0);
        let expect = brute_force_q(&p, pi0);
        let got = qvalues(&p, 0.5).unwrap();
        for (a, b) in got.iter().zip(&expect) {
            worst = worst.max((a - b).abs());
        }
        let bh = qvalues_with_pi0(&p, 1.0);
        for (a, b) in bh.iter().zip(bh_oracle(&p)) {
            worst_bh = worst_bh.max((a - b).abs());
        }
    }
    r.line(
        "9",
        "q-value oracle",
        worst < 1e-12 && worst_bh < 1e-12,
        format!("max |q - brute force| = {worst:.2e}, max |q(pi0=1) - BH| = {worst_bh:.2e} on 100 vectors (< 1e-12)"),
    );
}

// 10 --------------------------------------------------------------------

fn determinism(r: &mut Report) {
    let templates = demo_templates(6, 16, 8.0, 1010);
    let mut regions = Vec::new();
    let mut covariate = None;
    for (i, t) in templates.iter().enumerate() {
        let spec = SimulationSpec {
            base_intensity: t.base_intensity.clone(),
            effect: t.effect.clone(),
            n_per_group: 4,
            depth_multiplier: 1.0,
            dispersion: 0.1,
            seed: 0,
        };
        let (mut c, x) = simulate_dataset(&spec).unwrap();
        c.region_id = format!("region{i}");
        regions.push(c);
        covariate = Some(x);
    }
    let batch = RegionBatch::new(regions, covariate.unwrap()).unwrap();
    let cfg = AnalysisConfig::default();
    let run = |threads: usize| -> (String, String, String) {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            let outcomes = analyze_batch(&batch, &cfg);
            let results = format_results(&result_rows(&outcomes));
            let curves: Vec<_> = outcomes
                .iter()
                .map(|o| o.result.as_ref().unwrap().curve.clone())
                .collect();
            let json = serde_json::to_string(&curves).unwrap();
            let null = batch_permutation_null(&batch, &cfg, 19, 7).unwrap().to_text();
            (results, json, null)
        })
    };
    let a = run(1);
    let b = run(1);
    let c = run(4);
    r.line(
        "10",
        "determinism",
        a == b && a == c,
        format!(
            "results, effect JSON and null file byte-identical across reruns and thread counts: {}",
            a == b && a == c
        ),
    );
}

fn main() {
    // honour `cargo test -- <filter>` style invocations that target other tests
    let args: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    if !args.is_empty() && !args.iter().any(|a| "acceptance".contains(a.as_str())) {
        return;
    }
    let mut r = Report { failures: 0 };
    factorization(&mut r);
    round_trip(&mut r);
    glmm_oracle(&mut r);
    eb_correctness(&mut r);
    let null = null_calibration();
    let (power_ok, power_detail, power_min) = power_trends();
    let min_stat = null.min_stat.min(power_min);
    r.line(
        "5",
        "test-statistic sign",
        min_stat >= -1e-8,
        format!("minimum log Lambda over the analyses of criteria 6-7 = {min_stat:.3e} (>= -1e-8)"),
    );
    r.line("6", "null calibration", null.ok, null.detail);
    r.line("7", "power trends", power_ok, power_detail);
    effect_oracle(&mut r);
    qvalue_oracle(&mut r);
    determinism(&mut r);
    println!("acceptance: {} failed", r.failures);
    if r.failures > 0 {
        std::process::exit(1);
    }
}
