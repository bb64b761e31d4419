//! Marginal likelihood of a random-intercept GLM, `η_i = μ + β x_i + u_i`
//! with `u_i ~ N(0, τ²)` independent per sample, integrated by the Laplace
//! approximation or adaptive Gauss–Hermite quadrature, and its
//! maximization: Newton over `(μ, β)` for fixed `τ²`, bounded 1-D search
//! over `log τ` outside.

use super::family::Obs;
use super::quadrature::gauss_hermite;
use super::GlmmOptions;

/// Coefficients beyond this magnitude signal separation.
pub(crate) const SEPARATION_BOUND: f64 = 15.0;

/// Marginal log-likelihood of one sample and its first two derivatives
/// with respect to the linear predictor.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Marginal {
    pub ll: f64,
    pub grad: f64,
    pub hess: f64,
    pub mode: f64,
}

fn mode_of_integrand(obs: &Obs, eta: f64, tau2: f64, start: f64) -> f64 {
    let g = |u: f64| obs.loglik(eta + u) - u * u / (2.0 * tau2);
    let mut u = start;
    let mut g_cur = g(u);
    for _ in 0..200 {
        let d = obs.eval(eta + u);
        let phi = d.d1 - u / tau2;
        let step = phi / (d.w + 1.0 / tau2);
        if step.abs() < 1e-13 * (1.0 + u.abs()) {
            break;
        }
        let mut t = 1.0;
        loop {
            let cand = u + t * step;
            let g_new = g(cand);
            if g_new >= g_cur - 1e-15 * g_cur.abs() || t < 1e-12 {
                u = cand;
                g_cur = g_new;
                break;
            }
            t *= 0.5;
        }
        if (t * step).abs() < 1e-13 * (1.0 + u.abs()) {
            break;
        }
    }
    u
}

/// Laplace approximation (`points == 1`) or adaptive Gauss–Hermite with
/// `points` nodes. `tau2 == 0` gives the plain GLM likelihood.
pub(crate) fn marginal(obs: &Obs, eta: f64, tau2: f64, points: usize, start: f64) -> Marginal {
    if tau2 <= 0.0 {
        let d = obs.eval(eta);
        return Marginal {
            ll: d.f,
            grad: d.d1,
            hess: -d.w,
            mode: 0.0,
        };
    }
    let u = mode_of_integrand(obs, eta, tau2, start);
    let d = obs.eval(eta + u);
    let g = d.f - u * u / (2.0 * tau2);
    let s = 1.0 + tau2 * d.w;
    let grad = d.d1 - 0.5 * tau2 * d.w1 / (s * s);
    let hess = (-d.w - 0.5 * tau2 * (d.w2 / (s * s) - 2.0 * tau2 * d.w1 * d.w1 / (s * s * s))) / s;
    let ll = if points <= 1 {
        g - 0.5 * s.ln()
    } else {
        aghq(obs, eta, tau2, points, u, d.w)
    };
    Marginal {
        ll,
        grad,
        hess,
        mode: u,
    }
}

fn aghq(obs: &Obs, eta: f64, tau2: f64, points: usize, mode: f64, w_mode: f64) -> f64 {
    let (nodes, weights) = gauss_hermite(points);
    let sigma = 1.0 / (w_mode + 1.0 / tau2).sqrt();
    let scale = std::f64::consts::SQRT_2 * sigma;
    let terms: Vec<f64> = nodes
        .iter()
        .zip(&weights)
        .map(|(&x, &wt)| {
            let u = mode + scale * x;
            wt.ln() + x * x + obs.loglik(eta + u) - u * u / (2.0 * tau2)
        })
        .collect();
    let m = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + terms.iter().map(|t| (t - m).exp()).sum::<f64>().ln();
    lse + scale.ln() - 0.5 * (2.0 * std::f64::consts::PI * tau2).ln()
}

/// Outcome of maximizing over `(μ, β)` at fixed `τ²`.
#[derive(Debug, Clone)]
pub(crate) struct InnerFit {
    pub mu: f64,
    pub beta: f64,
    pub ll: f64,
    /// Per-sample observed information `-∂²ℓ/∂η²` at the optimum.
    pub weights: Vec<f64>,
    pub modes: Vec<f64>,
    pub converged: bool,
    pub separated: bool,
}

struct Eval {
    ll: f64,
    grad: [f64; 2],
    hess: [[f64; 2]; 2],
    weights: Vec<f64>,
    modes: Vec<f64>,
}

fn evaluate(obs: &[Obs], x: Option<&[f64]>, mu: f64, beta: f64, tau2: f64, points: usize, modes: &[f64]) -> Eval {
    let mut ll = 0.0;
    let mut grad = [0.0; 2];
    let mut hess = [[0.0; 2]; 2];
    let mut weights = Vec::with_capacity(obs.len());
    let mut new_modes = Vec::with_capacity(obs.len());
    for (i, o) in obs.iter().enumerate() {
        let xi = x.map_or(0.0, |x| x[i]);
        let m = marginal(o, mu + beta * xi, tau2, points, modes[i]);
        ll += m.ll;
        grad[0] += m.grad;
        grad[1] += m.grad * xi;
        hess[0][0] += m.hess;
        hess[0][1] += m.hess * xi;
        hess[1][1] += m.hess * xi * xi;
        weights.push(-m.hess);
        new_modes.push(m.mode);
    }
    hess[1][0] = hess[0][1];
    Eval {
        ll,
        grad,
        hess,
        weights,
        modes: new_modes,
    }
}

fn total_ll(obs: &[Obs], x: Option<&[f64]>, mu: f64, beta: f64, tau2: f64, points: usize, modes: &[f64]) -> f64 {
    obs.iter()
        .enumerate()
        .map(|(i, o)| {
            let xi = x.map_or(0.0, |x| x[i]);
            marginal(o, mu + beta * xi, tau2, points, modes[i]).ll
        })
        .sum()
}

/// Newton ascent over the fixed effects at fixed `τ²`. With `x == None`
/// only the intercept is free and `β` stays 0.
pub(crate) fn fit_fixed(
    obs: &[Obs],
    x: Option<&[f64]>,
    tau2: f64,
    start: (f64, f64),
    start_modes: &[f64],
    opts: &GlmmOptions,
) -> InnerFit {
    let points = opts.laplace_quadrature_points;
    let two = x.is_some();
    let (mut mu, mut beta) = (start.0, if two { start.1 } else { 0.0 });
    let mut modes = start_modes.to_vec();
    let mut cur = evaluate(obs, x, mu, beta, tau2, points, &modes);
    modes.clone_from(&cur.modes);
    let mut converged = false;
    let mut separated = false;
    for _ in 0..opts.max_iter {
        let mut grad = cur.grad;
        if points > 1 && tau2 > 0.0 {
            // quadrature value: differentiate numerically, keep Laplace curvature
            let h = 1e-6;
            let f = |m: f64, b: f64| total_ll(obs, x, m, b, tau2, points, &modes);
            grad[0] = (f(mu + h, beta) - f(mu - h, beta)) / (2.0 * h);
            if two {
                grad[1] = (f(mu, beta + h) - f(mu, beta - h)) / (2.0 * h);
            }
        }
        let (dm, db) = newton_direction(&cur.hess, &grad, two);
        let mut t = 1.0;
        let mut accepted = None;
        while t > 1e-10 {
            let (m2, b2) = (mu + t * dm, beta + t * db);
            let cand = evaluate(obs, x, m2, b2, tau2, points, &modes);
            if cand.ll.is_finite() && cand.ll >= cur.ll - 1e-12 * (1.0 + cur.ll.abs()) {
                accepted = Some((m2, b2, cand));
                break;
            }
            t *= 0.5;
        }
        let Some((m2, b2, cand)) = accepted else {
            converged = grad_small(&grad, two);
            break;
        };
        let step = ((m2 - mu).abs()).max((b2 - beta).abs());
        mu = m2;
        beta = b2;
        modes.clone_from(&cand.modes);
        cur = cand;
        if mu.abs() > SEPARATION_BOUND || beta.abs() > SEPARATION_BOUND {
            separated = true;
            break;
        }
        if step < opts.convergence_tol {
            converged = true;
            break;
        }
    }
    InnerFit {
        mu,
        beta,
        ll: cur.ll,
        weights: cur.weights,
        modes,
        converged,
        separated,
    }
}

fn grad_small(g: &[f64; 2], two: bool) -> bool {
    g[0].abs() < 1e-6 && (!two || g[1].abs() < 1e-6)
}

fn newton_direction(h: &[[f64; 2]; 2], g: &[f64; 2], two: bool) -> (f64, f64) {
    if !two {
        let c = if h[0][0] < -1e-12 {
            -h[0][0]
        } else {
            1.0 + h[0][0].abs()
        };
        return (g[0] / c, 0.0);
    }
    // solve (-H) d = g when -H is positive definite
    let (a, b, d) = (-h[0][0], -h[0][1], -h[1][1]);
    let det = a * d - b * b;
    if a > 1e-12 && det > 1e-12 * (a * d).abs().max(1e-300) {
        ((d * g[0] - b * g[1]) / det, (a * g[1] - b * g[0]) / det)
    } else {
        let ra = if a > 1e-12 { a } else { 1.0 + a.abs() };
        let rd = if d > 1e-12 { d } else { 1.0 + d.abs() };
        (g[0] / ra, g[1] / rd)
    }
}

/// Result of the profile search over `τ²`.
#[derive(Debug, Clone)]
pub(crate) struct ProfileFit {
    pub fit: InnerFit,
    pub tau2: f64,
    /// Incumbent profile log-likelihood after each outer iteration.
    pub trace: Vec<f64>,
}

fn record(fit: InnerFit, tau2: f64, best: &mut InnerFit, best_tau2: &mut f64, trace: &mut Vec<f64>) -> bool {
    let improved = fit.ll > best.ll && !fit.separated;
    if improved {
        *best = fit;
        *best_tau2 = tau2;
    }
    trace.push(best.ll);
    improved
}

const GOLDEN: f64 = 0.618_033_988_749_894_8;

/// Maximizes the marginal likelihood over `(μ, β)` and, when
/// `opts.random_effect`, over `τ ∈ {0} ∪ [tau_min, tau_max]`.
pub(crate) fn fit_profile(obs: &[Obs], x: Option<&[f64]>, start: (f64, f64), opts: &GlmmOptions) -> ProfileFit {
    let zeros = vec![0.0; obs.len()];
    let fixed = fit_fixed(obs, x, 0.0, start, &zeros, opts);
    let mut trace = vec![fixed.ll];
    if !opts.random_effect || fixed.separated {
        return ProfileFit {
            fit: fixed,
            tau2: 0.0,
            trace,
        };
    }

    let mut best = fixed;
    let mut best_tau2 = 0.0;
    let lo = opts.tau_min.ln();
    let hi = opts.tau_max.ln();
    let n_grid = 8;
    let step = (hi - lo) / (n_grid - 1) as f64;
    let mut grid_ll = Vec::with_capacity(n_grid);
    let mut warm = (best.mu, best.beta);
    let mut warm_modes = zeros.clone();
    let mut best_idx = None;
    for k in 0..n_grid {
        let theta = lo + step * k as f64;
        let tau2 = (2.0 * theta).exp();
        let fit = fit_fixed(obs, x, tau2, warm, &warm_modes, opts);
        grid_ll.push(fit.ll);
        warm = (fit.mu, fit.beta);
        warm_modes.clone_from(&fit.modes);
        if record(fit, tau2, &mut best, &mut best_tau2, &mut trace) {
            best_idx = Some(k);
        }
    }

    if let Some(k) = best_idx {
        // golden-section refinement inside the neighbouring grid cells
        let mut a = lo + step * (k as f64 - 1.0);
        let mut b = lo + step * (k as f64 + 1.0).min((n_grid - 1) as f64);
        if k == 0 {
            a = lo - step;
        }
        let eval = |theta: f64, start: (f64, f64), modes: &[f64]| {
            let tau2 = (2.0 * theta).exp();
            (fit_fixed(obs, x, tau2, start, modes, opts), tau2)
        };
        let mut c = b - GOLDEN * (b - a);
        let mut d = a + GOLDEN * (b - a);
        let (mut fc, tc) = eval(c, (best.mu, best.beta), &best.modes);
        let (mut fd, td) = eval(d, (best.mu, best.beta), &best.modes);
        let fc_ll = fc.ll;
        let fd_ll = fd.ll;
        record(fc.clone(), tc, &mut best, &mut best_tau2, &mut trace);
        record(fd.clone(), td, &mut best, &mut best_tau2, &mut trace);
        let (mut vc, mut vd) = (fc_ll, fd_ll);
        while (b - a) > opts.tau_search_tol {
            if vc >= vd {
                b = d;
                d = c;
                vd = vc;
                fd = fc.clone();
                c = b - GOLDEN * (b - a);
                let (f, t) = eval(c, (fd.mu, fd.beta), &fd.modes);
                vc = f.ll;
                fc = f.clone();
                record(f, t, &mut best, &mut best_tau2, &mut trace);
            } else {
                a = c;
                c = d;
                vc = vd;
                fc = fd.clone();
                d = a + GOLDEN * (b - a);
                let (f, t) = eval(d, (fc.mu, fc.beta), &fc.modes);
                vd = f.ll;
                fd = f.clone();
                record(f, t, &mut best, &mut best_tau2, &mut trace);
            }
        }
    }
    ProfileFit {
        fit: best,
        tau2: best_tau2,
        trace,
    }
}
