//! Bivariate copula kernels: densities, distribution functions,
//! h-functions and their inverses, Kendall's tau links and single-pair
//! maximum likelihood with AIC selection.
//!
//! Conventions: `hfunc(u, v)` is C(u | v) = ∂C/∂v, and `h1(u, v)` is
//! C(v | u) = ∂C/∂u. Rotated Clayton/Gumbel copulas keep the positive base
//! parameter and apply the rotation to the arguments.

use std::f64::consts::{FRAC_2_PI, FRAC_PI_2};
use std::fmt;
use std::str::FromStr;

use log::warn;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::optim::{golden_section, nelder_mead, NelderMeadOptions};
use crate::special::{bvn_cdf, bvt_cdf, debye1, norm_cdf, norm_quantile, t_cdf, t_quantile};
use crate::stats::kendall_tau;

/// Arguments of densities and h-functions are clamped to `[U_EPS, 1 - U_EPS]`.
pub const U_EPS: f64 = 1e-10;
pub const RHO_MAX: f64 = 0.9999;
pub const NU_MIN: f64 = 2.0;
pub const NU_MAX: f64 = 100.0;
pub const CLAYTON_MAX: f64 = 28.0;
pub const GUMBEL_MAX: f64 = 17.0;
pub const FRANK_MAX: f64 = 35.0;
/// Admissible |tau| window for Clayton and Gumbel links.
pub const ARCH_TAU_MIN: f64 = 0.001;
pub const ARCH_TAU_MAX: f64 = 0.95;

const FRANK_TINY: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FamilyKind {
    Independence,
    Gaussian,
    StudentT,
    Clayton,
    Gumbel,
    Frank,
}

impl FamilyKind {
    pub const ALL: [FamilyKind; 6] = [
        FamilyKind::Independence,
        FamilyKind::Gaussian,
        FamilyKind::StudentT,
        FamilyKind::Clayton,
        FamilyKind::Gumbel,
        FamilyKind::Frank,
    ];

    /// The parametric families considered during selection.
    pub const PARAMETRIC: [FamilyKind; 5] = [
        FamilyKind::Gaussian,
        FamilyKind::StudentT,
        FamilyKind::Clayton,
        FamilyKind::Gumbel,
        FamilyKind::Frank,
    ];

    pub fn n_params(self) -> usize {
        match self {
            FamilyKind::Independence => 0,
            FamilyKind::StudentT => 2,
            _ => 1,
        }
    }

    pub fn is_rotatable(self) -> bool {
        matches!(self, FamilyKind::Clayton | FamilyKind::Gumbel)
    }

    pub fn name(self) -> &'static str {
        match self {
            FamilyKind::Independence => "independence",
            FamilyKind::Gaussian => "gaussian",
            FamilyKind::StudentT => "studentt",
            FamilyKind::Clayton => "clayton",
            FamilyKind::Gumbel => "gumbel",
            FamilyKind::Frank => "frank",
        }
    }

    fn letter(self) -> &'static str {
        match self {
            FamilyKind::Independence => "I",
            FamilyKind::Gaussian => "N",
            FamilyKind::StudentT => "t",
            FamilyKind::Clayton => "C",
            FamilyKind::Gumbel => "G",
            FamilyKind::Frank => "F",
        }
    }
}

impl FromStr for FamilyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "i" | "indep" | "independence" => Ok(FamilyKind::Independence),
            "n" | "normal" | "gauss" | "gaussian" => Ok(FamilyKind::Gaussian),
            "t" | "student" | "studentt" | "student-t" => Ok(FamilyKind::StudentT),
            "c" | "clayton" => Ok(FamilyKind::Clayton),
            "g" | "gumbel" => Ok(FamilyKind::Gumbel),
            "f" | "frank" => Ok(FamilyKind::Frank),
            other => Err(Error::InvalidInput(format!("unknown copula family '{other}'"))),
        }
    }
}

/// Parse a comma-separated family list such as `gaussian,t,clayton`.
pub fn parse_family_set(s: &str) -> Result<Vec<FamilyKind>> {
    let mut out: Vec<FamilyKind> = Vec::new();
    for part in s.split(',').filter(|p| !p.trim().is_empty()) {
        let k: FamilyKind = part.parse()?;
        if !out.contains(&k) {
            out.push(k);
        }
    }
    if out.is_empty() {
        return Err(Error::InvalidInput("empty family set".into()));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u16", into = "u16")]
pub enum Rotation {
    R0,
    R90,
    R180,
    R270,
}

impl Rotation {
    pub fn degrees(self) -> u16 {
        match self {
            Rotation::R0 => 0,
            Rotation::R90 => 90,
            Rotation::R180 => 180,
            Rotation::R270 => 270,
        }
    }

    /// Rotations that produce negative dependence.
    pub fn is_negative(self) -> bool {
        matches!(self, Rotation::R90 | Rotation::R270)
    }
}

impl TryFrom<u16> for Rotation {
    type Error = String;

    fn try_from(d: u16) -> std::result::Result<Self, String> {
        match d {
            0 => Ok(Rotation::R0),
            90 => Ok(Rotation::R90),
            180 => Ok(Rotation::R180),
            270 => Ok(Rotation::R270),
            _ => Err(format!("rotation must be 0, 90, 180 or 270, got {d}")),
        }
    }
}

impl From<Rotation> for u16 {
    fn from(r: Rotation) -> u16 {
        r.degrees()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "RawFamily", into = "RawFamily")]
pub struct Family {
    pub kind: FamilyKind,
    pub rotation: Rotation,
}

#[derive(Serialize, Deserialize)]
struct RawFamily {
    kind: FamilyKind,
    rotation: Rotation,
}

impl TryFrom<RawFamily> for Family {
    type Error = String;

    fn try_from(r: RawFamily) -> std::result::Result<Self, String> {
        Family::rotated(r.kind, r.rotation).map_err(|e| e.to_string())
    }
}

impl From<Family> for RawFamily {
    fn from(f: Family) -> Self {
        RawFamily {
            kind: f.kind,
            rotation: f.rotation,
        }
    }
}

impl Family {
    pub const INDEPENDENCE: Family = Family::new(FamilyKind::Independence);
    pub const GAUSSIAN: Family = Family::new(FamilyKind::Gaussian);
    pub const STUDENT_T: Family = Family::new(FamilyKind::StudentT);

    pub const fn new(kind: FamilyKind) -> Self {
        Family {
            kind,
            rotation: Rotation::R0,
        }
    }

    pub fn rotated(kind: FamilyKind, rotation: Rotation) -> Result<Self> {
        if rotation != Rotation::R0 && !kind.is_rotatable() {
            return Err(Error::InvalidParameter(format!(
                "{} copula cannot be rotated",
                kind.name()
            )));
        }
        Ok(Family { kind, rotation })
    }

    pub fn n_params(self) -> usize {
        self.kind.n_params()
    }

    /// Family of the copula of (V, U) when this is the copula of (U, V).
    pub fn transpose(self) -> Self {
        let rotation = match self.rotation {
            Rotation::R90 => Rotation::R270,
            Rotation::R270 => Rotation::R90,
            r => r,
        };
        Family {
            kind: self.kind,
            rotation,
        }
    }

    /// Candidate families for selection given the sign of the empirical tau.
    pub fn candidates(kind: FamilyKind, tau_hat: f64) -> Vec<Family> {
        if kind.is_rotatable() {
            let rots = if tau_hat >= 0.0 {
                [Rotation::R0, Rotation::R180]
            } else {
                [Rotation::R90, Rotation::R270]
            };
            rots.iter().map(|&rotation| Family { kind, rotation }).collect()
        } else {
            vec![Family::new(kind)]
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.rotation {
            Rotation::R0 => write!(f, "{}", self.kind.letter()),
            r => write!(f, "{}{}", self.kind.letter(), r.degrees()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairCopula {
    pub family: Family,
    pub theta: f64,
    /// Degrees of freedom for Student-t; 0 for every other family.
    pub nu: f64,
}

/// Check `theta` (and `nu`) against the admissible range of `kind`.
pub fn check_params(kind: FamilyKind, theta: f64, nu: f64) -> Result<()> {
    let ok = match kind {
        FamilyKind::Independence => true,
        FamilyKind::Gaussian => theta.abs() <= RHO_MAX,
        FamilyKind::StudentT => theta.abs() <= RHO_MAX && nu > NU_MIN && nu <= NU_MAX,
        FamilyKind::Clayton => theta > 0.0 && theta <= CLAYTON_MAX,
        FamilyKind::Gumbel => (1.0..=GUMBEL_MAX).contains(&theta),
        FamilyKind::Frank => theta.abs() <= FRANK_MAX,
    };
    if ok && theta.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "{} copula: theta={theta}, nu={nu} outside admissible range",
            kind.name()
        )))
    }
}

#[inline]
fn clamp_u(u: f64) -> f64 {
    u.clamp(U_EPS, 1.0 - U_EPS)
}

/// Normal score of `1 - U_EPS`; Gaussian h-chains clamp scores to ±this.
pub const Z_MAX: f64 = 6.361_340_902_404_056;

/// A copula-scale value that may carry its standard-normal score.
///
/// Gaussian pair copulas consume and produce scores directly, so chains of
/// Gaussian edges never leave the normal scale. Unknown parts are NaN.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pseudo {
    u: f64,
    z: f64,
}

impl Pseudo {
    pub fn from_u(u: f64) -> Self {
        Pseudo { u, z: f64::NAN }
    }

    /// Precompute the normal score as well.
    pub fn with_score(u: f64) -> Self {
        Pseudo {
            u,
            z: norm_quantile(clamp_u(u)),
        }
    }

    fn from_z(z: f64) -> Self {
        Pseudo { u: f64::NAN, z }
    }

    pub fn u(&self) -> f64 {
        if self.u.is_nan() && !self.z.is_nan() {
            norm_cdf(self.z)
        } else {
            self.u
        }
    }

    fn z(&self) -> f64 {
        if self.z.is_nan() {
            norm_quantile(clamp_u(self.u))
        } else {
            self.z
        }
    }
}

/// Log-sum-exp of two terms.
#[inline]
fn lse(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

impl PairCopula {
    pub fn new(family: Family, theta: f64, nu: f64) -> Result<Self> {
        let theta = if family.kind == FamilyKind::Independence {
            0.0
        } else {
            theta
        };
        let nu = if family.kind == FamilyKind::StudentT {
            nu
        } else {
            0.0
        };
        check_params(family.kind, theta, nu)?;
        Ok(PairCopula { family, theta, nu })
    }

    pub fn independence() -> Self {
        PairCopula {
            family: Family::INDEPENDENCE,
            theta: 0.0,
            nu: 0.0,
        }
    }

    pub fn gaussian(rho: f64) -> Result<Self> {
        Self::new(Family::GAUSSIAN, rho, 0.0)
    }

    pub fn student_t(rho: f64, nu: f64) -> Result<Self> {
        Self::new(Family::STUDENT_T, rho, nu)
    }

    pub fn clayton(theta: f64, rotation: Rotation) -> Result<Self> {
        Self::new(Family::rotated(FamilyKind::Clayton, rotation)?, theta, 0.0)
    }

    pub fn gumbel(theta: f64, rotation: Rotation) -> Result<Self> {
        Self::new(Family::rotated(FamilyKind::Gumbel, rotation)?, theta, 0.0)
    }

    pub fn frank(theta: f64) -> Result<Self> {
        Self::new(Family::new(FamilyKind::Frank), theta, 0.0)
    }

    pub fn kind(&self) -> FamilyKind {
        self.family.kind
    }

    pub fn transpose(&self) -> Self {
        PairCopula {
            family: self.family.transpose(),
            ..*self
        }
    }

    fn is_independent(&self) -> bool {
        match self.family.kind {
            FamilyKind::Independence => true,
            FamilyKind::Frank => self.theta.abs() < FRANK_TINY,
            _ => false,
        }
    }

    /// Kendall's tau implied by the parameters.
    pub fn tau(&self) -> f64 {
        tau_unchecked(self.family, self.theta)
    }

    pub fn pdf(&self, u: f64, v: f64) -> f64 {
        self.ln_pdf(u, v).exp()
    }

    pub fn ln_pdf(&self, u: f64, v: f64) -> f64 {
        if self.is_independent() {
            return 0.0;
        }
        let (u, v) = (clamp_u(u), clamp_u(v));
        let (a, b) = match self.family.rotation {
            Rotation::R0 => (u, v),
            Rotation::R90 => (1.0 - u, v),
            Rotation::R180 => (1.0 - u, 1.0 - v),
            Rotation::R270 => (u, 1.0 - v),
        };
        self.base_ln_pdf(a, b)
    }

    pub fn cdf(&self, u: f64, v: f64) -> f64 {
        if u <= 0.0 || v <= 0.0 {
            return 0.0;
        }
        if u >= 1.0 {
            return v.min(1.0);
        }
        if v >= 1.0 {
            return u;
        }
        if self.is_independent() {
            return u * v;
        }
        let c = match self.family.rotation {
            Rotation::R0 => self.base_cdf(u, v),
            Rotation::R90 => v - self.base_cdf(1.0 - u, v),
            Rotation::R180 => u + v - 1.0 + self.base_cdf(1.0 - u, 1.0 - v),
            Rotation::R270 => u - self.base_cdf(u, 1.0 - v),
        };
        c.clamp((u + v - 1.0).max(0.0), u.min(v))
    }

    /// Conditional distribution C(u | v).
    pub fn hfunc(&self, u: f64, v: f64) -> f64 {
        if u <= 0.0 {
            return 0.0;
        }
        if u >= 1.0 {
            return 1.0;
        }
        if self.is_independent() {
            return u;
        }
        let (u, v) = (clamp_u(u), clamp_u(v));
        let h = match self.family.rotation {
            Rotation::R0 => self.base_h(u, v),
            Rotation::R90 => 1.0 - self.base_h(1.0 - u, v),
            Rotation::R180 => 1.0 - self.base_h(1.0 - u, 1.0 - v),
            Rotation::R270 => self.base_h(u, 1.0 - v),
        };
        h.clamp(0.0, 1.0)
    }

    /// Conditional distribution C(v | u).
    pub fn h1(&self, u: f64, v: f64) -> f64 {
        self.transpose().hfunc(v, u)
    }

    /// Inverse of `hfunc` in its first argument: returns u with C(u | v) = w.
    pub fn hinv(&self, w: f64, v: f64) -> f64 {
        if self.is_independent() {
            return w;
        }
        let w = w.clamp(1e-300, 1.0 - 1e-16);
        let v = clamp_u(v);
        let guess = match self.family.rotation {
            Rotation::R0 => self.base_hinv(w, v),
            Rotation::R90 => 1.0 - self.base_hinv(1.0 - w, v),
            Rotation::R180 => 1.0 - self.base_hinv(1.0 - w, 1.0 - v),
            Rotation::R270 => self.base_hinv(w, 1.0 - v),
        };
        if matches!(
            self.family.kind,
            FamilyKind::Gaussian | FamilyKind::StudentT
        ) && guess.is_finite()
        {
            return clamp_u(guess);
        }
        self.polish_hinv(w, v, guess)
    }

    /// Inverse of `h1` in its second argument: returns v with C(v | u) = w.
    pub fn hinv1(&self, w: f64, u: f64) -> f64 {
        self.transpose().hinv(w, u)
    }

    /// Log-density and C(v | u) at one point, sharing work where possible.
    pub fn ln_pdf_and_h1(&self, u: f64, v: f64) -> (f64, f64) {
        if self.family.rotation == Rotation::R0 {
            match self.family.kind {
                FamilyKind::Gaussian => {
                    let (u, v) = (clamp_u(u), clamp_u(v));
                    let (x, y) = (norm_quantile(u), norm_quantile(v));
                    let r = self.theta;
                    let s = 1.0 - r * r;
                    let lp = -0.5 * s.ln() - (r * r * (x * x + y * y) - 2.0 * r * x * y) / (2.0 * s);
                    let h = norm_cdf((y - r * x) / s.sqrt());
                    return (lp, h);
                }
                FamilyKind::StudentT => {
                    let (u, v) = (clamp_u(u), clamp_u(v));
                    let nu = self.nu;
                    let (x, y) = (t_quantile(u, nu), t_quantile(v, nu));
                    let lp = t_ln_density(x, y, self.theta, nu);
                    let h = t_hfunc(y, x, self.theta, nu);
                    return (lp, h);
                }
                _ => {}
            }
        }
        (self.ln_pdf(u, v), self.h1(u, v))
    }

    /// Log-density and C(b | a) on pseudo-observations.
    #[inline]
    pub fn eval_pseudo(&self, a: Pseudo, b: Pseudo) -> (f64, Pseudo) {
        match self.family.kind {
            FamilyKind::Independence => (0.0, b),
            FamilyKind::Gaussian => {
                let (x, y) = (a.z(), b.z());
                let r = self.theta;
                let s = 1.0 - r * r;
                let lp = -0.5 * s.ln() - (r * r * (x * x + y * y) - 2.0 * r * x * y) / (2.0 * s);
                let hz = ((y - r * x) / s.sqrt()).clamp(-Z_MAX, Z_MAX);
                (lp, Pseudo::from_z(hz))
            }
            _ => {
                let (lp, h) = self.ln_pdf_and_h1(a.u(), b.u());
                (lp, Pseudo::from_u(h))
            }
        }
    }

    /// Draw (u, v) from the copula using two independent uniforms.
    pub fn simulate(&self, w1: f64, w2: f64) -> (f64, f64) {
        let v = w2;
        (self.hinv(w1, v), v)
    }

    fn polish_hinv(&self, w: f64, v: f64, guess: f64) -> f64 {
        let f = |u: f64| self.hfunc(u, v) - w;
        let mut x = if guess.is_finite() && guess > 0.0 && guess < 1.0 {
            clamp_u(guess)
        } else {
            w.clamp(U_EPS, 1.0 - U_EPS)
        };
        let mut fx = f(x);
        if fx.abs() <= 1e-13 {
            return x;
        }
        let (mut lo, mut hi) = (0.0f64, 1.0f64);
        for _ in 0..200 {
            if fx < 0.0 {
                lo = x;
            } else {
                hi = x;
            }
            let d = self.pdf(x, v);
            let mut next = x - fx / d;
            if !(next > lo && next < hi) || !next.is_finite() {
                next = 0.5 * (lo + hi);
            }
            x = next;
            fx = f(x);
            if fx.abs() <= 1e-13 || hi - lo <= 1e-16 {
                break;
            }
        }
        clamp_u(x)
    }

    fn base_ln_pdf(&self, u: f64, v: f64) -> f64 {
        let th = self.theta;
        match self.family.kind {
            FamilyKind::Independence => 0.0,
            FamilyKind::Gaussian => {
                let (x, y) = (norm_quantile(u), norm_quantile(v));
                let s = 1.0 - th * th;
                -0.5 * s.ln() - (th * th * (x * x + y * y) - 2.0 * th * x * y) / (2.0 * s)
            }
            FamilyKind::StudentT => {
                let (x, y) = (t_quantile(u, self.nu), t_quantile(v, self.nu));
                t_ln_density(x, y, th, self.nu)
            }
            FamilyKind::Clayton => {
                let (lu, lv) = (u.ln(), v.ln());
                let ls = clayton_ln_s(th, lu, lv);
                th.ln_1p() - (th + 1.0) * (lu + lv) - (2.0 + 1.0 / th) * ls
            }
            FamilyKind::Gumbel => {
                let (x, y) = (-u.ln(), -v.ln());
                let (lx, ly) = (x.ln(), y.ln());
                let la = lse(th * lx, th * ly) / th;
                let a = la.exp();
                -a + (th - 1.0) * (lx + ly) + x + y + (1.0 - 2.0 * th) * la + (a + th - 1.0).ln()
            }
            FamilyKind::Frank => {
                let k = (-th).exp_m1();
                let d = frank_den(th, u, v);
                (-th * k).ln() - th * (u + v) - 2.0 * d.abs().ln()
            }
        }
    }

    fn base_cdf(&self, u: f64, v: f64) -> f64 {
        let th = self.theta;
        match self.family.kind {
            FamilyKind::Independence => u * v,
            FamilyKind::Gaussian => bvn_cdf(norm_quantile(u), norm_quantile(v), th),
            FamilyKind::StudentT => bvt_cdf(
                t_quantile(u, self.nu),
                t_quantile(v, self.nu),
                th,
                self.nu,
            ),
            FamilyKind::Clayton => (-clayton_ln_s(th, u.ln(), v.ln()) / th).exp(),
            FamilyKind::Gumbel => {
                let (x, y) = (-u.ln(), -v.ln());
                let la = lse(th * x.ln(), th * y.ln()) / th;
                (-la.exp()).exp()
            }
            FamilyKind::Frank => {
                let k = (-th).exp_m1();
                let ab = (-th * u).exp_m1() * (-th * v).exp_m1();
                let r = ab / k;
                let l = if r.abs() < 0.5 {
                    r.ln_1p()
                } else {
                    (frank_den(th, u, v) / k).ln()
                };
                -l / th
            }
        }
    }

    fn base_h(&self, u: f64, v: f64) -> f64 {
        let th = self.theta;
        match self.family.kind {
            FamilyKind::Independence => u,
            FamilyKind::Gaussian => {
                let (x, y) = (norm_quantile(u), norm_quantile(v));
                norm_cdf((x - th * y) / (1.0 - th * th).sqrt())
            }
            FamilyKind::StudentT => {
                let (x, y) = (t_quantile(u, self.nu), t_quantile(v, self.nu));
                t_hfunc(x, y, th, self.nu)
            }
            FamilyKind::Clayton => {
                let ls = clayton_ln_s(th, u.ln(), v.ln());
                (-(th + 1.0) * v.ln() - (1.0 + 1.0 / th) * ls).exp()
            }
            FamilyKind::Gumbel => {
                let (x, y) = (-u.ln(), -v.ln());
                let ly = y.ln();
                let la = lse(th * x.ln(), th * ly) / th;
                (-la.exp() + (1.0 - th) * la + (th - 1.0) * ly + y).exp()
            }
            FamilyKind::Frank => {
                let a = (-th * u).exp_m1();
                (-th * v).exp() * a / frank_den(th, u, v)
            }
        }
    }

    /// Closed-form (or starting-point) inverse of the unrotated h-function.
    fn base_hinv(&self, w: f64, v: f64) -> f64 {
        let th = self.theta;
        match self.family.kind {
            FamilyKind::Independence => w,
            FamilyKind::Gaussian => {
                let y = norm_quantile(v);
                norm_cdf(norm_quantile(w) * (1.0 - th * th).sqrt() + th * y)
            }
            FamilyKind::StudentT => {
                let nu = self.nu;
                let y = t_quantile(v, nu);
                let scale = ((nu + y * y) * (1.0 - th * th) / (nu + 1.0)).sqrt();
                t_cdf(t_quantile(w, nu + 1.0) * scale + th * y, nu)
            }
            FamilyKind::Clayton => {
                let lv = v.ln();
                let ls = -(w.ln() + (th + 1.0) * lv) * th / (th + 1.0);
                // u^-theta = s - v^-theta + 1
                let b = -th * lv;
                let ln_em1b = b + (-(-b).exp_m1()).ln();
                let r = (ln_em1b - ls).exp();
                if r >= 1.0 {
                    return f64::NAN;
                }
                let lval = ls + (-r).ln_1p();
                (-lval / th).exp()
            }
            FamilyKind::Gumbel => w,
            FamilyKind::Frank => {
                let k = (-th).exp_m1();
                let a = w * k / ((1.0 - w) * (-th * v).exp() + w);
                -a.ln_1p() / th
            }
        }
    }
}

/// ln(u^-θ + v^-θ - 1) from ln u and ln v, stable for extreme arguments.
#[inline]
fn clayton_ln_s(th: f64, lu: f64, lv: f64) -> f64 {
    let (a, b) = (-th * lu, -th * lv);
    let (m, n) = if a >= b { (a, b) } else { (b, a) };
    m + ((n - m).exp() - (-m).exp()).ln_1p()
}

/// The Frank denominator expm1(-θ) + expm1(-θu)·expm1(-θv), evaluated
/// without cancellation for positive θ.
#[inline]
fn frank_den(th: f64, u: f64, v: f64) -> f64 {
    if th > 0.0 {
        (-th * u).exp() * (-th * v).exp_m1() - (-th).exp() * (th * (1.0 - v)).exp_m1()
    } else {
        (-th).exp_m1() + (-th * u).exp_m1() * (-th * v).exp_m1()
    }
}

fn t_ln_density(x: f64, y: f64, r: f64, nu: f64) -> f64 {
    let s = 1.0 - r * r;
    let c = ln_gamma(0.5 * (nu + 2.0)) + ln_gamma(0.5 * nu) - 2.0 * ln_gamma(0.5 * (nu + 1.0));
    c - 0.5 * s.ln() - 0.5 * (nu + 2.0) * ((x * x + y * y - 2.0 * r * x * y) / (nu * s)).ln_1p()
        + 0.5 * (nu + 1.0) * ((x * x / nu).ln_1p() + (y * y / nu).ln_1p())
}

/// t-copula C(u | v) on the t scale: x = T⁻¹(u), y = T⁻¹(v).
fn t_hfunc(x: f64, y: f64, r: f64, nu: f64) -> f64 {
    let scale = ((nu + y * y) * (1.0 - r * r) / (nu + 1.0)).sqrt();
    t_cdf((x - r * y) / scale, nu + 1.0)
}

fn frank_tau(theta: f64) -> f64 {
    if theta.abs() < 1e-4 {
        theta / 9.0 - theta.powi(3) / 900.0
    } else {
        1.0 - 4.0 / theta * (1.0 - debye1(theta))
    }
}

fn tau_unchecked(family: Family, theta: f64) -> f64 {
    let base = match family.kind {
        FamilyKind::Independence => 0.0,
        FamilyKind::Gaussian | FamilyKind::StudentT => FRAC_2_PI * theta.asin(),
        FamilyKind::Clayton => theta / (theta + 2.0),
        FamilyKind::Gumbel => 1.0 - 1.0 / theta,
        FamilyKind::Frank => frank_tau(theta),
    };
    if family.rotation.is_negative() {
        -base
    } else {
        base
    }
}

/// Kendall's tau of a family at parameter `theta`.
pub fn tau_from_theta(family: Family, theta: f64) -> Result<f64> {
    check_params(family.kind, theta, 0.5 * (NU_MIN + NU_MAX))?;
    Ok(tau_unchecked(family, theta))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThetaFromTau {
    pub theta: f64,
    /// Set when tau (or the resulting theta) had to be moved into range.
    pub clamped: bool,
}

/// Invert the tau link of a family, clamping to the admissible range.
pub fn theta_from_tau(family: Family, tau: f64) -> ThetaFromTau {
    match family.kind {
        FamilyKind::Independence => ThetaFromTau {
            theta: 0.0,
            clamped: false,
        },
        FamilyKind::Gaussian | FamilyKind::StudentT => {
            let r = (FRAC_PI_2 * tau).sin();
            let c = r.clamp(-RHO_MAX, RHO_MAX);
            ThetaFromTau {
                theta: c,
                clamped: c != r,
            }
        }
        FamilyKind::Clayton | FamilyKind::Gumbel => {
            let t = if family.rotation.is_negative() { -tau } else { tau };
            let tc = t.clamp(ARCH_TAU_MIN, ARCH_TAU_MAX);
            let (raw, cap) = if family.kind == FamilyKind::Clayton {
                (2.0 * tc / (1.0 - tc), CLAYTON_MAX)
            } else {
                (1.0 / (1.0 - tc), GUMBEL_MAX)
            };
            let theta = raw.min(cap);
            ThetaFromTau {
                theta,
                clamped: tc != t || theta != raw,
            }
        }
        FamilyKind::Frank => {
            let tmax = frank_tau(FRANK_MAX);
            let tc = tau.clamp(-tmax, tmax);
            let (mut lo, mut hi) = (-FRANK_MAX, FRANK_MAX);
            let theta = if tc == tmax {
                FRANK_MAX
            } else if tc == -tmax {
                -FRANK_MAX
            } else if tc == 0.0 {
                0.0
            } else {
                while hi - lo > 1e-12 {
                    let mid = 0.5 * (lo + hi);
                    if frank_tau(mid) < tc {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                0.5 * (lo + hi)
            };
            ThetaFromTau {
                theta,
                clamped: tc != tau,
            }
        }
    }
}

pub fn fisher_z(r: f64) -> Result<f64> {
    if r.abs() >= 1.0 || r.is_nan() {
        return Err(Error::InvalidParameter(format!(
            "fisher z requires |r| < 1, got {r}"
        )));
    }
    Ok(r.atanh())
}

pub fn fisher_z_inv(xi: f64) -> f64 {
    xi.tanh()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairFit {
    pub copula: PairCopula,
    pub loglik: f64,
    pub aic: f64,
}

fn loglik(c: &PairCopula, u: &[f64], v: &[f64]) -> f64 {
    let s: f64 = u.iter().zip(v).map(|(&a, &b)| c.ln_pdf(a, b)).sum();
    if s.is_finite() {
        s
    } else {
        f64::NEG_INFINITY
    }
}

fn fit_gaussian(u: &[f64], v: &[f64]) -> (PairCopula, f64) {
    let n = u.len() as f64;
    let (mut sq, mut cross) = (0.0, 0.0);
    for (&a, &b) in u.iter().zip(v) {
        let (x, y) = (norm_quantile(clamp_u(a)), norm_quantile(clamp_u(b)));
        sq += x * x + y * y;
        cross += x * y;
    }
    let ll = |r: f64| {
        let s = 1.0 - r * r;
        -0.5 * n * s.ln() - (r * r * sq - 2.0 * r * cross) / (2.0 * s)
    };
    let (r, _) = golden_section(|r| -ll(r), -RHO_MAX, RHO_MAX, 1e-9);
    let c = PairCopula {
        family: Family::GAUSSIAN,
        theta: r,
        nu: 0.0,
    };
    (c, ll(r))
}

fn fit_student_t(u: &[f64], v: &[f64], rho0: f64) -> Option<(PairCopula, f64)> {
    let to_params = |z: &[f64]| {
        let rho = z[0].tanh().clamp(-RHO_MAX, RHO_MAX);
        let nu = (NU_MIN + z[1].exp()).min(NU_MAX);
        (rho, nu)
    };
    let objective = |z: &[f64]| {
        let (rho, nu) = to_params(z);
        if !(nu > NU_MIN) {
            return f64::INFINITY;
        }
        let c = PairCopula {
            family: Family::STUDENT_T,
            theta: rho,
            nu,
        };
        -loglik(&c, u, v)
    };
    let z0 = [rho0.clamp(-0.99, 0.99).atanh(), (8.0f64 - NU_MIN).ln()];
    let opts = NelderMeadOptions {
        initial_step: 0.3,
        ftol: 1e-7,
        max_evals: 600,
    };
    let res = nelder_mead(objective, &z0, &opts);
    if !res.value.is_finite() {
        return None;
    }
    if !res.converged {
        warn!("student-t pair fit did not converge after {} evaluations", res.evaluations);
        return None;
    }
    let (rho, nu) = to_params(&res.x);
    let c = PairCopula {
        family: Family::STUDENT_T,
        theta: rho,
        nu,
    };
    Some((c, -res.value))
}

fn fit_one_param(family: Family, u: &[f64], v: &[f64]) -> (PairCopula, f64) {
    let make = |theta: f64| PairCopula {
        family,
        theta,
        nu: 0.0,
    };
    let theta = match family.kind {
        FamilyKind::Clayton => {
            let (lt, _) = golden_section(
                |lt| -loglik(&make(lt.exp()), u, v),
                (1e-4f64).ln(),
                CLAYTON_MAX.ln(),
                1e-8,
            );
            lt.exp()
        }
        FamilyKind::Gumbel => {
            golden_section(|t| -loglik(&make(t), u, v), 1.0, GUMBEL_MAX, 1e-8).0
        }
        FamilyKind::Frank => {
            golden_section(|t| -loglik(&make(t), u, v), -FRANK_MAX, FRANK_MAX, 1e-8).0
        }
        _ => unreachable!("not a one-parameter family"),
    };
    let c = make(theta);
    (c, loglik(&c, u, v))
}

/// Maximum likelihood fit of every allowed family (with candidate
/// rotations); returns the fit with the smallest AIC.
pub fn fit_pair(u: &[f64], v: &[f64], allowed: &[FamilyKind]) -> Result<PairFit> {
    if u.len() != v.len() {
        return Err(Error::InvalidInput(format!(
            "pair data lengths differ: {} vs {}",
            u.len(),
            v.len()
        )));
    }
    if u.len() < 20 {
        return Err(Error::InvalidInput(format!(
            "pair fit needs at least 20 observations, got {}",
            u.len()
        )));
    }
    if u.iter().chain(v).any(|&x| !(x > 0.0 && x < 1.0)) {
        return Err(Error::InvalidInput("pair data must lie in (0, 1)".into()));
    }
    if allowed.is_empty() {
        return Err(Error::InvalidInput("empty family set".into()));
    }
    let tau_hat = kendall_tau(u, v);
    let mut best: Option<PairFit> = None;
    let mut gauss: Option<(PairCopula, f64)> = None;
    let consider = |c: PairCopula, ll: f64, best: &mut Option<PairFit>| {
        if !ll.is_finite() {
            warn!("{} fit produced a non-finite log-likelihood; skipped", c.family);
            return;
        }
        let aic = -2.0 * ll + 2.0 * c.family.n_params() as f64;
        if best.as_ref().is_none_or(|b| aic < b.aic) {
            *best = Some(PairFit {
                copula: c,
                loglik: ll,
                aic,
            });
        }
    };
    for &kind in allowed {
        match kind {
            FamilyKind::Independence => consider(PairCopula::independence(), 0.0, &mut best),
            FamilyKind::Gaussian => {
                let g = *gauss.get_or_insert_with(|| fit_gaussian(u, v));
                consider(g.0, g.1, &mut best);
            }
            FamilyKind::StudentT => {
                let rho0 = gauss.get_or_insert_with(|| fit_gaussian(u, v)).0.theta;
                match fit_student_t(u, v, rho0) {
                    Some((c, ll)) => consider(c, ll, &mut best),
                    None => warn!("student-t family skipped"),
                }
            }
            _ => {
                for fam in Family::candidates(kind, tau_hat) {
                    let (c, ll) = fit_one_param(fam, u, v);
                    consider(c, ll, &mut best);
                }
            }
        }
    }
    best.ok_or_else(|| Error::NonConvergence("no copula family could be fitted".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn zoo() -> Vec<PairCopula> {
        vec![
            PairCopula::independence(),
            PairCopula::gaussian(0.5).unwrap(),
            PairCopula::gaussian(-0.85).unwrap(),
            PairCopula::student_t(0.6, 4.0).unwrap(),
            PairCopula::student_t(-0.3, 25.0).unwrap(),
            PairCopula::clayton(2.0, Rotation::R0).unwrap(),
            PairCopula::clayton(0.7, Rotation::R90).unwrap(),
            PairCopula::clayton(5.0, Rotation::R180).unwrap(),
            PairCopula::clayton(1.5, Rotation::R270).unwrap(),
            PairCopula::gumbel(1.8, Rotation::R0).unwrap(),
            PairCopula::gumbel(3.0, Rotation::R90).unwrap(),
            PairCopula::gumbel(1.2, Rotation::R180).unwrap(),
            PairCopula::gumbel(2.5, Rotation::R270).unwrap(),
            PairCopula::frank(5.0).unwrap(),
            PairCopula::frank(-8.0).unwrap(),
            PairCopula::frank(30.0).unwrap(),
        ]
    }

    #[test]
    fn closed_form_values() {
        let c = PairCopula::clayton(2.0, Rotation::R0).unwrap();
        assert!((c.cdf(0.5, 0.5) - 7f64.powf(-0.5)).abs() < 1e-14);
        let g = PairCopula::gaussian(0.5).unwrap();
        assert!((g.hfunc(0.5, 0.5) - 0.5).abs() < 1e-15);
        assert!((g.hinv(0.5, 0.5) - 0.5).abs() < 1e-15);
        assert_eq!(PairCopula::gaussian(0.0).unwrap().pdf(0.3, 0.7), 1.0);
        let i = PairCopula::independence();
        assert_eq!(i.pdf(0.2, 0.9), 1.0);
        assert_eq!(i.hfunc(0.2, 0.9), 0.2);
        assert_eq!(i.hinv(0.4, 0.9), 0.4);
    }

    #[test]
    fn boundary_behavior() {
        for c in zoo() {
            for &x in &[0.01, 0.37, 0.99] {
                assert_eq!(c.cdf(x, 0.0), 0.0);
                assert_eq!(c.cdf(0.0, x), 0.0);
                assert_eq!(c.cdf(x, 1.0), x, "{:?}", c.family);
                assert_eq!(c.hfunc(0.0, x), 0.0);
                assert_eq!(c.hfunc(1.0, x), 1.0);
            }
        }
    }

    #[test]
    fn tau_values() {
        let f = |k| Family::new(k);
        assert_eq!(tau_from_theta(f(FamilyKind::Gaussian), 0.0).unwrap(), 0.0);
        assert!((tau_from_theta(f(FamilyKind::Clayton), 2.0).unwrap() - 0.5).abs() < 1e-15);
        assert!((theta_from_tau(f(FamilyKind::Gumbel), 0.5).theta - 2.0).abs() < 1e-15);
        let g = theta_from_tau(f(FamilyKind::Gaussian), 0.5);
        assert!((g.theta - 0.5f64.sqrt()).abs() < 1e-15 && !g.clamped);
        let low = theta_from_tau(f(FamilyKind::Gumbel), -0.8);
        assert!(low.clamped && (low.theta - 1.0 / 0.999).abs() < 1e-12);
        let c90 = Family::rotated(FamilyKind::Clayton, Rotation::R90).unwrap();
        let r = theta_from_tau(c90, -0.5);
        assert!((r.theta - 2.0).abs() < 1e-12 && !r.clamped);
        assert!(tau_from_theta(f(FamilyKind::Clayton), 40.0).is_err());
    }

    #[test]
    fn frank_tau_roundtrip() {
        let fr = Family::new(FamilyKind::Frank);
        for &th in &[-10.0, -1.0, 0.5, 3.0, 20.0] {
            let tau = tau_from_theta(fr, th).unwrap();
            let back = theta_from_tau(fr, tau);
            assert!((back.theta - th).abs() < 1e-6, "{th} -> {tau} -> {}", back.theta);
            assert!(!back.clamped);
        }
        let hi = theta_from_tau(fr, 0.99);
        assert!(hi.clamped && hi.theta == FRANK_MAX);
    }

    #[test]
    fn fisher_z_values() {
        assert_eq!(fisher_z(0.0).unwrap(), 0.0);
        assert!((fisher_z(0.5).unwrap() - 0.5 * 3f64.ln()).abs() < 1e-15);
        assert!(fisher_z(1.0).is_err());
        assert!(fisher_z(-1.5).is_err());
    }

    #[test]
    fn parameter_validation() {
        assert!(PairCopula::gaussian(1.0).is_err());
        assert!(PairCopula::student_t(0.5, 2.0).is_err());
        assert!(PairCopula::student_t(0.5, 100.0).is_ok());
        assert!(PairCopula::clayton(0.0, Rotation::R0).is_err());
        assert!(PairCopula::gumbel(0.9, Rotation::R0).is_err());
        assert!(PairCopula::frank(36.0).is_err());
        assert!(Family::rotated(FamilyKind::Frank, Rotation::R90).is_err());
    }

    #[test]
    fn family_serde_roundtrip() {
        let f = Family::rotated(FamilyKind::Gumbel, Rotation::R270).unwrap();
        let s = serde_json::to_string(&f).unwrap();
        assert_eq!(s, r#"{"kind":"gumbel","rotation":270}"#);
        let back: Family = serde_json::from_str(&s).unwrap();
        assert_eq!(back, f);
        assert!(serde_json::from_str::<Family>(r#"{"kind":"frank","rotation":90}"#).is_err());
        assert!(serde_json::from_str::<Family>(r#"{"kind":"clayton","rotation":45}"#).is_err());
    }

    #[test]
    fn t_approaches_gaussian() {
        let t = PairCopula::student_t(0.4, 100.0).unwrap();
        let g = PairCopula::gaussian(0.4).unwrap();
        for &(u, v) in &[(0.3, 0.6), (0.5, 0.5), (0.1, 0.2), (0.8, 0.9)] {
            let rel = (t.pdf(u, v) / g.pdf(u, v) - 1.0).abs();
            assert!(rel < 1e-2, "{rel}");
        }
    }

    #[test]
    fn gaussian_fit_recovers_rho() {
        let c = PairCopula::gaussian(0.7).unwrap();
        let rng = crate::rng::CounterRng::new(11);
        let (mut u, mut v) = (Vec::new(), Vec::new());
        for i in 0..2000 {
            let (a, b) = c.simulate(rng.uniform(0, i), rng.uniform(1, i));
            u.push(a);
            v.push(b);
        }
        let fit = fit_pair(&u, &v, &[FamilyKind::Gaussian]).unwrap();
        assert!((fit.copula.theta - 0.7).abs() < 0.05);
        assert!(fit_pair(&u[..10], &v[..10], &[FamilyKind::Gaussian]).is_err());
    }

    fn arb_copula() -> impl Strategy<Value = PairCopula> {
        let rot = prop_oneof![
            Just(Rotation::R0),
            Just(Rotation::R90),
            Just(Rotation::R180),
            Just(Rotation::R270)
        ];
        prop_oneof![
            (-0.95..0.95f64).prop_map(|r| PairCopula::gaussian(r).unwrap()),
            (-0.9..0.9f64, 2.5..60.0f64).prop_map(|(r, n)| PairCopula::student_t(r, n).unwrap()),
            (0.05..15.0f64, rot.clone()).prop_map(|(t, r)| PairCopula::clayton(t, r).unwrap()),
            (1.0..10.0f64, rot).prop_map(|(t, r)| PairCopula::gumbel(t, r).unwrap()),
            (-30.0..30.0f64).prop_map(|t| PairCopula::frank(t).unwrap()),
        ]
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(300))]

        #[test]
        fn hinv_roundtrip(c in arb_copula(), w in 0.001..0.999f64, v in 0.001..0.999f64) {
            let u = c.hinv(w, v);
            prop_assert!(u > 0.0 && u < 1.0);
            prop_assert!((c.hfunc(u, v) - w).abs() < 1e-9, "{:?} w={} v={} u={}", c, w, v, u);
        }

        #[test]
        fn hfunc_monotone_in_u(c in arb_copula(), u in 0.001..0.99f64, v in 0.001..0.999f64) {
            prop_assert!(c.hfunc(u, v) <= c.hfunc(u + 0.009, v) + 1e-14);
        }

        #[test]
        fn h1_inverse(c in arb_copula(), w in 0.001..0.999f64, u in 0.001..0.999f64) {
            let v = c.hinv1(w, u);
            prop_assert!((c.h1(u, v) - w).abs() < 1e-9);
        }

        #[test]
        fn rotation_180_reflects_density(t in 0.1..10.0f64, u in 0.01..0.99f64, v in 0.01..0.99f64) {
            let base = PairCopula::clayton(t, Rotation::R0).unwrap();
            let rot = PairCopula::clayton(t, Rotation::R180).unwrap();
            prop_assert!((rot.pdf(u, v) - base.pdf(1.0 - u, 1.0 - v)).abs() < 1e-9 * base.pdf(1.0 - u, 1.0 - v).max(1.0));
        }

        #[test]
        fn combined_eval_matches(c in arb_copula(), u in 0.001..0.999f64, v in 0.001..0.999f64) {
            let (lp, h) = c.ln_pdf_and_h1(u, v);
            prop_assert!((lp - c.ln_pdf(u, v)).abs() < 1e-12);
            prop_assert!((h - c.h1(u, v)).abs() < 1e-12);
        }

        #[test]
        fn pseudo_path_matches(c in arb_copula(), u in 0.001..0.999f64, v in 0.001..0.999f64) {
            let (lp, h) = c.eval_pseudo(Pseudo::with_score(u), Pseudo::from_u(v));
            prop_assert!((lp - c.ln_pdf(u, v)).abs() < 1e-10);
            prop_assert!((clamp_u(h.u()) - clamp_u(c.h1(u, v))).abs() < 1e-12);
        }

        #[test]
        fn transpose_swaps_arguments(c in arb_copula(), u in 0.01..0.99f64, v in 0.01..0.99f64) {
            let t = c.transpose();
            prop_assert!((t.ln_pdf(v, u) - c.ln_pdf(u, v)).abs() < 1e-9);
            prop_assert!((t.cdf(v, u) - c.cdf(u, v)).abs() < 1e-9);
        }

        #[test]
        fn tau_roundtrip(c in arb_copula()) {
            let tau = c.tau();
            let back = theta_from_tau(c.family, tau);
            if !back.clamped {
                prop_assert!((back.theta - c.theta).abs() < 1e-6 * c.theta.abs().max(1.0));
            }
        }

        #[test]
        fn fisher_roundtrip(r in -0.999..0.999f64) {
            prop_assert!((fisher_z_inv(fisher_z(r).unwrap()) - r).abs() < 1e-12);
        }
    }
}
