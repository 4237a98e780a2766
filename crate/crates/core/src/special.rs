//! Special functions used by the copula kernels: normal and Student-t
//! distribution functions, the bivariate normal CDF, Gauss–Legendre rules
//! and the order-1 Debye function.

use std::f64::consts::{PI, SQRT_2};
use std::sync::OnceLock;

use statrs::function::beta::{beta_reg, inv_beta_reg};
use libm::erfc;
use statrs::function::erf::erfc_inv;
use statrs::function::gamma::ln_gamma;

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;
const TWO_PI: f64 = 2.0 * PI;

pub fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x - LN_SQRT_2PI).exp()
}

pub fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / SQRT_2)
}

pub fn norm_quantile(p: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    // work in the lower tail, then polish with Newton steps on Φ
    let lower = p.min(1.0 - p);
    let mut x = -SQRT_2 * erfc_inv(2.0 * lower);
    for _ in 0..2 {
        let dens = norm_pdf(x);
        if dens <= 0.0 {
            break;
        }
        x -= (norm_cdf(x) - lower) / dens;
    }
    if p <= 0.5 {
        x
    } else {
        -x
    }
}

/// Log-density of the standard Student-t distribution.
pub fn t_ln_pdf(x: f64, nu: f64) -> f64 {
    ln_gamma(0.5 * (nu + 1.0)) - ln_gamma(0.5 * nu) - 0.5 * (nu * PI).ln()
        - 0.5 * (nu + 1.0) * (x * x / nu).ln_1p()
}

pub fn t_cdf(x: f64, nu: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    if x == f64::INFINITY {
        return 1.0;
    }
    if x == f64::NEG_INFINITY {
        return 0.0;
    }
    let tail = 0.5 * beta_reg(0.5 * nu, 0.5, nu / (nu + x * x));
    if x <= 0.0 {
        tail
    } else {
        1.0 - tail
    }
}

/// Student-t quantile: regularized incomplete beta inversion polished by
/// Newton steps on the CDF.
pub fn t_quantile(p: f64, nu: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    if p == 0.5 {
        return 0.0;
    }
    let lower = p.min(1.0 - p);
    let y = inv_beta_reg(0.5 * nu, 0.5, 2.0 * lower);
    let mut x = -(nu * (1.0 - y) / y).sqrt();
    if !x.is_finite() {
        x = -1e10;
    }
    // Newton on the lower tail, where relative precision is available.
    let c = ln_gamma(0.5 * (nu + 1.0)) - ln_gamma(0.5 * nu) - 0.5 * (nu * PI).ln();
    for _ in 0..3 {
        let f = 0.5 * beta_reg(0.5 * nu, 0.5, nu / (nu + x * x)) - lower;
        let dens = (c - 0.5 * (nu + 1.0) * (x * x / nu).ln_1p()).exp();
        if dens <= 0.0 || !dens.is_finite() {
            break;
        }
        let step = f / dens;
        let next = x - step;
        if !next.is_finite() || next >= 0.0 {
            break;
        }
        x = next;
        if step.abs() <= 1e-15 * x.abs() {
            break;
        }
    }
    if p < 0.5 {
        x
    } else {
        -x
    }
}

/// Gauss–Legendre nodes and weights on [-1, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut pp = 0.0;
        for _ in 0..100 {
            let mut p1 = 1.0;
            let mut p2 = 0.0;
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                p1 = ((2.0 * j as f64 + 1.0) * z * p2 - j as f64 * p3) / (j as f64 + 1.0);
            }
            pp = n as f64 * (z * p1 - p2) / (z * z - 1.0);
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() < 1e-15 {
                break;
            }
        }
        nodes[i] = -z;
        nodes[n - 1 - i] = z;
        let w = 2.0 / ((1.0 - z * z) * pp * pp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

struct BvnRules {
    rules: [(Vec<f64>, Vec<f64>); 3],
}

fn bvn_rules() -> &'static BvnRules {
    static RULES: OnceLock<BvnRules> = OnceLock::new();
    RULES.get_or_init(|| {
        // Genz keeps the negative half of the 6, 12 and 20 point rules.
        let half = |n: usize| {
            let (x, w) = gauss_legendre(n);
            (x[..n / 2].to_vec(), w[..n / 2].to_vec())
        };
        BvnRules {
            rules: [half(6), half(12), half(20)],
        }
    })
}

/// Upper bivariate normal probability P(X > h, Y > k) with correlation `r`
/// (Drezner–Wesolowsky as refined by Genz).
fn bvn_upper(h: f64, k: f64, r: f64) -> f64 {
    let rules = bvn_rules();
    let (x, w) = if r.abs() < 0.3 {
        &rules.rules[0]
    } else if r.abs() < 0.75 {
        &rules.rules[1]
    } else {
        &rules.rules[2]
    };
    let mut k = k;
    let mut hk = h * k;
    let mut bvn = 0.0;
    if r.abs() < 0.925 {
        let hs = 0.5 * (h * h + k * k);
        let asr = r.asin();
        for (xi, wi) in x.iter().zip(w) {
            let sn = (asr * (xi + 1.0) / 2.0).sin();
            bvn += wi * ((sn * hk - hs) / (1.0 - sn * sn)).exp();
            let sn = (asr * (-xi + 1.0) / 2.0).sin();
            bvn += wi * ((sn * hk - hs) / (1.0 - sn * sn)).exp();
        }
        bvn = bvn * asr / (2.0 * TWO_PI) + norm_cdf(-h) * norm_cdf(-k);
    } else {
        if r < 0.0 {
            k = -k;
            hk = -hk;
        }
        if r.abs() < 1.0 {
            let as_ = (1.0 - r) * (1.0 + r);
            let mut a = as_.sqrt();
            let bs = (h - k) * (h - k);
            let c = (4.0 - hk) / 8.0;
            let d = (12.0 - hk) / 16.0;
            bvn = a
                * (-(bs / as_ + hk) / 2.0).exp()
                * (1.0 - c * (bs - as_) * (1.0 - d * bs / 5.0) / 3.0 + c * d * as_ * as_ / 5.0);
            if hk > -160.0 {
                let b = bs.sqrt();
                bvn -= (-hk / 2.0).exp()
                    * TWO_PI.sqrt()
                    * norm_cdf(-b / a)
                    * b
                    * (1.0 - c * bs * (1.0 - d * bs / 5.0) / 3.0);
            }
            a /= 2.0;
            for (xi, wi) in x.iter().zip(w) {
                let xs = (a * (xi + 1.0)).powi(2);
                let rs = (1.0 - xs).sqrt();
                bvn += a
                    * wi
                    * ((-bs / (2.0 * xs) - hk / (1.0 + rs)).exp() / rs
                        - (-(bs / xs + hk) / 2.0).exp() * (1.0 + c * xs * (1.0 + d * xs)));
                let xs = as_ * (-xi + 1.0).powi(2) / 4.0;
                let rs = (1.0 - xs).sqrt();
                bvn += a
                    * wi
                    * (-(bs / xs + hk) / 2.0).exp()
                    * ((-hk * (1.0 - rs) / (2.0 * (1.0 + rs))).exp() / rs
                        - (1.0 + c * xs * (1.0 + d * xs)));
            }
            bvn = -bvn / TWO_PI;
        }
        if r > 0.0 {
            bvn += norm_cdf(-h.max(k));
        } else {
            bvn = -bvn;
            if k > h {
                if h < 0.0 {
                    bvn += norm_cdf(k) - norm_cdf(h);
                } else {
                    bvn += norm_cdf(-h) - norm_cdf(-k);
                }
            }
        }
    }
    bvn.clamp(0.0, 1.0)
}

/// Bivariate standard normal CDF P(X <= x, Y <= y) with correlation `rho`.
pub fn bvn_cdf(x: f64, y: f64, rho: f64) -> f64 {
    if x == f64::NEG_INFINITY || y == f64::NEG_INFINITY {
        return 0.0;
    }
    if x == f64::INFINITY {
        return norm_cdf(y);
    }
    if y == f64::INFINITY {
        return norm_cdf(x);
    }
    bvn_upper(-x, -y, rho)
}

/// Bivariate Student-t CDF with correlation `rho` and `nu` degrees of
/// freedom, as the chi-square scale mixture of bivariate normal CDFs.
///
/// The mixing variable S = W/nu ~ Gamma(nu/2, nu/2) is integrated on the
/// log scale, where the integrand is analytic and decays at both ends, so
/// the trapezoidal rule converges geometrically.
pub fn bvt_cdf(x: f64, y: f64, rho: f64, nu: f64) -> f64 {
    if x == f64::NEG_INFINITY || y == f64::NEG_INFINITY {
        return 0.0;
    }
    if x == f64::INFINITY {
        return t_cdf(y, nu);
    }
    if y == f64::INFINITY {
        return t_cdf(x, nu);
    }
    let k = 0.5 * nu;
    // log-density of z = ln S: k ln k - lnGamma(k) + k z - k e^z
    let norm = k * k.ln() - ln_gamma(k);
    let lo = -(40.0 / k) - 4.0;
    let hi = 4.0 + 6.0 / k.sqrt();
    let step = 0.02;
    let n = ((hi - lo) / step).ceil() as usize;
    let mut sum = 0.0;
    for i in 0..=n {
        let z = lo + i as f64 * step;
        let dens = (norm + k * z - k * z.exp()).exp();
        if dens < 1e-300 {
            continue;
        }
        let s = (0.5 * z).exp();
        let wgt = if i == 0 || i == n { 0.5 } else { 1.0 };
        sum += wgt * dens * bvn_cdf(x * s, y * s, rho);
    }
    (sum * step).clamp(0.0, 1.0)
}

fn gl64() -> &'static (Vec<f64>, Vec<f64>) {
    static RULE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    RULE.get_or_init(|| gauss_legendre(64))
}

/// Order-1 Debye function D1(x) = (1/x) ∫_0^x t / (e^t - 1) dt, for any real x.
pub fn debye1(x: f64) -> f64 {
    if x == 0.0 {
        return 1.0;
    }
    let a = x.abs();
    let (nodes, weights) = gl64();
    let half = 0.5 * a;
    let mut integral = 0.0;
    for (z, w) in nodes.iter().zip(weights) {
        let t = half * (z + 1.0);
        let f = if t == 0.0 { 1.0 } else { t / t.exp_m1() };
        integral += w * f;
    }
    integral *= half;
    let d = integral / a;
    if x > 0.0 {
        d
    } else {
        d + a / 2.0
    }
}
