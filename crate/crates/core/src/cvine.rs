//! Canonical vines on `n` ordered variables.
//!
//! Tree `l` (0-based) joins variable `l` to every later variable `k`; the
//! pair copula of edge (l, k) takes (u_{l|0..l-1}, u_{k|0..l-1}) with the
//! root argument first.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::bicop::{PairCopula, Pseudo};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CVine {
    /// `pairs[l][j]` is the copula of edge (l, l + 1 + j).
    pairs: Vec<Vec<PairCopula>>,
}

impl CVine {
    pub fn new(pairs: Vec<Vec<PairCopula>>) -> Result<Self> {
        let n = pairs.len() + 1;
        for (l, tree) in pairs.iter().enumerate() {
            if tree.len() != n - 1 - l {
                return Err(Error::InvalidInput(format!(
                    "tree {} of a {n}-variable C-vine needs {} edges, got {}",
                    l + 1,
                    n - 1 - l,
                    tree.len()
                )));
            }
        }
        Ok(CVine { pairs })
    }

    pub fn independence(n: usize) -> Self {
        let pairs = (0..n.saturating_sub(1))
            .map(|l| vec![PairCopula::independence(); n - 1 - l])
            .collect();
        CVine { pairs }
    }

    pub fn dim(&self) -> usize {
        self.pairs.len() + 1
    }

    pub fn pair(&self, l: usize, k: usize) -> &PairCopula {
        &self.pairs[l][k - l - 1]
    }

    pub fn set_pair(&mut self, l: usize, k: usize, c: PairCopula) {
        self.pairs[l][k - l - 1] = c;
    }

    pub fn pairs(&self) -> &[Vec<PairCopula>] {
        &self.pairs
    }

    /// Log-density at `u`; non-finite factors propagate.
    pub fn log_density(&self, u: &[f64]) -> f64 {
        let w: Vec<Pseudo> = u.iter().map(|&x| Pseudo::from_u(x)).collect();
        self.log_density_pseudo(&w)
    }

    pub fn log_density_pseudo(&self, u: &[Pseudo]) -> f64 {
        let n = self.dim();
        debug_assert_eq!(u.len(), n);
        let mut stack = [Pseudo::from_u(0.5); 8];
        let mut heap = Vec::new();
        let w: &mut [Pseudo] = if n <= stack.len() {
            stack[..n].copy_from_slice(u);
            &mut stack[..n]
        } else {
            heap.extend_from_slice(u);
            &mut heap
        };
        let mut ll = 0.0;
        for l in 0..n - 1 {
            let root = w[l];
            for k in l + 1..n {
                let (lp, h) = self.pair(l, k).eval_pseudo(root, w[k]);
                ll += lp;
                w[k] = h;
            }
        }
        ll
    }

    /// Like [`log_density`](Self::log_density) but reports the offending
    /// edge when a factor is not finite.
    pub fn try_log_density(&self, u: &[f64]) -> Result<f64> {
        let n = self.dim();
        if u.len() != n {
            return Err(Error::InvalidInput(format!(
                "expected {n} values, got {}",
                u.len()
            )));
        }
        let mut w = u.to_vec();
        let mut ll = 0.0;
        for l in 0..n - 1 {
            let root = w[l];
            for k in l + 1..n {
                let c = self.pair(l, k);
                let (lp, h) = c.ln_pdf_and_h1(root, w[k]);
                if !lp.is_finite() {
                    return Err(Error::Numeric(format!(
                        "non-finite density on tree {} edge ({}, {}) [{} theta={} nu={}]",
                        l + 1,
                        l,
                        k,
                        c.family,
                        c.theta,
                        c.nu
                    )));
                }
                ll += lp;
                w[k] = h;
            }
        }
        Ok(ll)
    }

    /// Conditional pseudo-observations `v[l][k] = u_{k|0..l-1}` for the first
    /// `m` variables (k < m).
    fn forward(&self, given: &[f64]) -> Vec<Vec<f64>> {
        let m = given.len();
        let mut v = vec![given.to_vec()];
        for l in 0..m.saturating_sub(1) {
            let prev = &v[l];
            let mut next = prev.clone();
            for k in l + 1..m {
                next[k] = self.pair(l, k).h1(prev[l], prev[k]);
            }
            v.push(next);
        }
        v
    }

    /// Inverse Rosenblatt transform: maps independent uniforms to a draw.
    pub fn sample(&self, w: &[f64]) -> Vec<f64> {
        let n = self.dim();
        assert_eq!(w.len(), n);
        // v[l][k] = u_{k|0..l-1}; only entries with l <= k are used.
        let mut v = vec![vec![0.0; n]; n];
        let mut x = vec![0.0; n];
        for k in 0..n {
            let mut t = w[k];
            v[k][k] = t;
            for l in (0..k).rev() {
                t = self.pair(l, k).hinv1(t, v[l][l]);
                v[l][k] = t;
            }
            x[k] = t;
        }
        x
    }

    /// Draw the last variable given the first `n - 1` values.
    pub fn sample_last(&self, given: &[f64], w: f64) -> f64 {
        let n = self.dim();
        assert_eq!(given.len(), n - 1);
        let v = self.forward(given);
        let mut t = w;
        for l in (0..n - 1).rev() {
            t = self.pair(l, n - 1).hinv1(t, v[l][l]);
        }
        t
    }

    /// Conditional distribution function of the last variable.
    pub fn conditional_cdf_last(&self, given: &[f64], x: f64) -> f64 {
        let n = self.dim();
        assert_eq!(given.len(), n - 1);
        let v = self.forward(given);
        let mut t = x;
        for l in 0..n - 1 {
            t = self.pair(l, n - 1).h1(v[l][l], t);
        }
        t
    }

    /// Conditional log-density of the last variable: the sum of the log
    /// densities on the edges that touch it.
    pub fn conditional_ln_density_last(&self, given: &[f64], x: f64) -> f64 {
        let n = self.dim();
        assert_eq!(given.len(), n - 1);
        let v = self.forward(given);
        let mut t = x;
        let mut ll = 0.0;
        for l in 0..n - 1 {
            let c = self.pair(l, n - 1);
            let (lp, h) = c.ln_pdf_and_h1(v[l][l], t);
            ll += lp;
            t = h;
        }
        ll
    }
}

/// Partial correlations of a C-vine with the given variable order from a
/// correlation matrix: `out[l][j]` = ρ_{l, l+1+j ; 0..l-1}.
pub fn partial_correlations(r: &DMatrix<f64>) -> Vec<Vec<f64>> {
    let n = r.nrows();
    // p[k][m] holds the current-level partial correlation of k and m.
    let mut p = r.clone();
    let mut out = Vec::with_capacity(n.saturating_sub(1));
    for l in 0..n.saturating_sub(1) {
        out.push((l + 1..n).map(|k| p[(l, k)]).collect::<Vec<_>>());
        let mut next = p.clone();
        for a in l + 1..n {
            for b in a + 1..n {
                let (ra, rb) = (p[(l, a)], p[(l, b)]);
                let val = (p[(a, b)] - ra * rb) / ((1.0 - ra * ra) * (1.0 - rb * rb)).sqrt();
                next[(a, b)] = val;
                next[(b, a)] = val;
            }
        }
        p = next;
    }
    out
}

/// Correlation matrix implied by C-vine partial correlations (inverse of
/// [`partial_correlations`]).
pub fn correlation_from_partials(partials: &[Vec<f64>]) -> DMatrix<f64> {
    let n = partials.len() + 1;
    let mut r = DMatrix::identity(n, n);
    for l in 0..n - 1 {
        for k in l + 1..n {
            let mut rho = partials[l][k - l - 1];
            for m in (0..l).rev() {
                let (a, b) = (partials[m][l - m - 1], partials[m][k - m - 1]);
                rho = rho * ((1.0 - a * a) * (1.0 - b * b)).sqrt() + a * b;
            }
            r[(l, k)] = rho;
            r[(k, l)] = rho;
        }
    }
    r
}
