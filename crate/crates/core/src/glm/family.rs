use statrs::function::gamma::ln_gamma;

use crate::mstransform::{log_logistic, logistic_pair};

/// One sample's response under a canonical-link GLM.
#[derive(Debug, Clone, Copy)]
pub(crate) enum Obs {
    /// `y` successes out of `n` trials, logit link.
    Binomial { y: f64, n: f64, ln_choose: f64 },
    /// Count `y` with log link and additive offset.
    Poisson { y: f64, offset: f64, ln_fact: f64 },
}

/// Log-likelihood at linear predictor `a` with its derivatives:
/// `d1 = f'`, `w = -f''`, `w1 = w'`, `w2 = w''`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Deriv {
    pub f: f64,
    pub d1: f64,
    pub w: f64,
    pub w1: f64,
    pub w2: f64,
}

impl Obs {
    pub fn binomial(y: f64, n: f64) -> Self {
        let ln_choose = ln_gamma(n + 1.0) - ln_gamma(y + 1.0) - ln_gamma(n - y + 1.0);
        Obs::Binomial { y, n, ln_choose }
    }

    pub fn poisson(y: f64, offset: f64) -> Self {
        Obs::Poisson {
            y,
            offset,
            ln_fact: ln_gamma(y + 1.0),
        }
    }

    #[inline]
    pub fn loglik(&self, a: f64) -> f64 {
        match *self {
            Obs::Binomial { y, n, ln_choose } => {
                let mut f = ln_choose;
                if y > 0.0 {
                    f += y * log_logistic(a);
                }
                if n - y > 0.0 {
                    f += (n - y) * log_logistic(-a);
                }
                f
            }
            Obs::Poisson { y, offset, ln_fact } => {
                let eta = a + offset;
                let m = eta.exp();
                if y > 0.0 {
                    y * eta - m - ln_fact
                } else {
                    -m
                }
            }
        }
    }

    #[inline]
    pub fn eval(&self, a: f64) -> Deriv {
        match *self {
            Obs::Binomial { y, n, .. } => {
                let (p, q) = logistic_pair(a);
                let w = n * p * q;
                Deriv {
                    f: self.loglik(a),
                    d1: y - n * p,
                    w,
                    w1: w * (q - p),
                    w2: w * (1.0 - 6.0 * p * q),
                }
            }
            Obs::Poisson { y, offset, .. } => {
                let m = (a + offset).exp();
                Deriv {
                    f: self.loglik(a),
                    d1: y - m,
                    w: m,
                    w1: m,
                    w2: m,
                }
            }
        }
    }
}
