use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Default `x` tolerance for [`phi_of_x`], relative to `max(1, x)`.
pub const PHI_TOL: f64 = 1e-12;

const QUAD_TOL: f64 = 1e-13;
const QUAD_DEPTH: u32 = 40;

/// Density of the squared singular values of `X₁⋯X_M` in the large-`N` limit,
/// written through the angle `φ ∈ (0, π/(M+1))`:
///
/// `x(φ) = sin^{M+1}((M+1)φ) / (sin φ · sin^M(Mφ))`,
/// `ρ(x) = sin((M+1)φ) sin φ / (π x sin(Mφ))`.
///
/// At `M = 1` this is Marchenko–Pastur on `(0, 4)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FussCatalanDensity {
    m: usize,
}

impl FussCatalanDensity {
    pub fn new(m: usize) -> Result<Self> {
        if m == 0 {
            return Err(Error::Domain("need at least one factor matrix".into()));
        }
        Ok(Self { m })
    }

    pub fn factors(&self) -> usize {
        self.m
    }

    /// `(M+1)^{M+1} / M^M`.
    pub fn support_upper(&self) -> f64 {
        let m = self.m as f64;
        (m + 1.0).powf(m + 1.0) / m.powf(m)
    }

    pub fn phi_upper(&self) -> f64 {
        PI / (self.m + 1) as f64
    }

    fn check_phi(&self, phi: f64) -> Result<()> {
        if phi > 0.0 && phi < self.phi_upper() {
            Ok(())
        } else {
            Err(Error::Domain(format!(
                "φ = {phi} outside (0, π/{}) for M = {}",
                self.m + 1,
                self.m
            )))
        }
    }

    fn check_x(&self, x: f64) -> Result<()> {
        if x > 0.0 && x < self.support_upper() {
            Ok(())
        } else {
            Err(Error::Domain(format!(
                "x = {x} outside (0, {}) for M = {}",
                self.support_upper(),
                self.m
            )))
        }
    }

    fn x_unchecked(&self, phi: f64) -> f64 {
        let m = self.m as i32;
        (((m + 1) as f64) * phi).sin().powi(m + 1) / (phi.sin() * ((m as f64) * phi).sin().powi(m))
    }

    pub fn x_of_phi(&self, phi: f64) -> Result<f64> {
        self.check_phi(phi)?;
        Ok(self.x_unchecked(phi))
    }

    /// Inverts [`Self::x_of_phi`] by bisection on the decreasing map, run
    /// until the bracket cannot shrink further.
    pub fn phi_of_x(&self, x: f64, tol: f64) -> Result<f64> {
        self.check_x(x)?;
        let (mut lo, mut hi) = (0.0, self.phi_upper());
        let mut mid = 0.5 * (lo + hi);
        for _ in 0..2000 {
            mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            let v = self.x_unchecked(mid);
            if v == x {
                break;
            }
            if v > x {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let miss = (self.x_unchecked(mid) - x).abs();
        if miss > tol * x.max(1.0) {
            return Err(Error::Domain(format!(
                "bisection for x = {x} stalled {miss:e} away from the target"
            )));
        }
        Ok(mid)
    }

    /// `ρ` evaluated at the point `x(φ)`.
    pub fn density_at_phi(&self, phi: f64) -> Result<f64> {
        self.check_phi(phi)?;
        let m = self.m as f64;
        let x = self.x_unchecked(phi);
        Ok(((m + 1.0) * phi).sin() * phi.sin() / (PI * x * (m * phi).sin()))
    }

    pub fn density(&self, x: f64) -> Result<f64> {
        let phi = self.phi_of_x(x, PHI_TOL)?;
        self.density_at_phi(phi)
    }

    /// `ρ(x(φ))·|dx/dφ|`, simplified so the factor `sin((M+1)φ)` cancels the
    /// pole of `d ln x/dφ` at the lower edge. Smooth and bounded on the
    /// closed interval, vanishing at `φ = 0`.
    fn phi_integrand(&self, phi: f64) -> f64 {
        if phi <= 0.0 {
            return 0.0;
        }
        let m = self.m as f64;
        let a = (m + 1.0) * phi;
        let b = m * phi;
        let cot = |t: f64| t.cos() / t.sin();
        let slope = a.sin() * (cot(phi) + m * m * cot(b)) - (m + 1.0) * (m + 1.0) * a.cos();
        phi.sin() / b.sin() * slope.abs() / PI
    }

    /// `P(λ ≤ x)`, integrating in φ-space from `φ(x)` to `π/(M+1)`.
    pub fn cdf(&self, x: f64) -> Result<f64> {
        if x.is_nan() {
            return Err(Error::Domain("x is NaN".into()));
        }
        if x <= 0.0 {
            return Ok(0.0);
        }
        if x >= self.support_upper() {
            return Ok(1.0);
        }
        let phi = self.phi_of_x(x, PHI_TOL)?;
        Ok(adaptive_simpson(|p| self.phi_integrand(p), phi, self.phi_upper()).clamp(0.0, 1.0))
    }

    /// Total mass, integrated in φ-space.
    pub fn total_mass(&self) -> f64 {
        adaptive_simpson(|p| self.phi_integrand(p), 0.0, self.phi_upper())
    }
}

pub fn x_of_phi(m: usize, phi: f64) -> Result<f64> {
    FussCatalanDensity::new(m)?.x_of_phi(phi)
}

pub fn phi_of_x(m: usize, x: f64, tol: f64) -> Result<f64> {
    FussCatalanDensity::new(m)?.phi_of_x(x, tol)
}

pub fn density(m: usize, x: f64) -> Result<f64> {
    FussCatalanDensity::new(m)?.density(x)
}

/// Square-case Marchenko–Pastur density `√(4−x) / (2π√x)` on `(0, 4)`.
pub fn marchenko_pastur_density(x: f64) -> f64 {
    if x > 0.0 && x < 4.0 {
        (4.0 - x).sqrt() / (2.0 * PI * x.sqrt())
    } else {
        0.0
    }
}

/// `(2/π)(θ + sin θ cos θ)` with `θ = asin(√x/2)`.
pub fn marchenko_pastur_cdf(x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 4.0 {
        return 1.0;
    }
    let t = (x.sqrt() / 2.0).asin();
    2.0 / PI * (t + t.sin() * t.cos())
}

/// Kolmogorov–Smirnov distance `sup |F_n − F|` between the empirical CDF of
/// an ascending sample and `cdf`.
pub fn ks_distance(sorted: &[f64], cdf: impl Fn(f64) -> f64) -> Result<f64> {
    if sorted.is_empty() {
        return Err(Error::Size("empty sample".into()));
    }
    if sorted.windows(2).any(|w| !(w[0] <= w[1])) {
        return Err(Error::Value("sample must be sorted ascending and free of NaN".into()));
    }
    let n = sorted.len() as f64;
    Ok(sorted.iter().enumerate().fold(0.0f64, |d, (i, &x)| {
        let f = cdf(x).clamp(0.0, 1.0);
        d.max((i + 1) as f64 / n - f).max(f - i as f64 / n)
    }))
}

fn simpson(fa: f64, fm: f64, fb: f64, a: f64, b: f64) -> f64 {
    (b - a) / 6.0 * (fa + 4.0 * fm + fb)
}

fn adaptive_simpson(f: impl Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    fn recurse(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = simpson(fa, flm, fm, a, m);
        let right = simpson(fm, frm, fb, m, b);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        recurse(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
            + recurse(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
    }
    if a >= b {
        return 0.0;
    }
    let (fa, fm, fb) = (f(a), f(0.5 * (a + b)), f(b));
    recurse(&f, a, b, fa, fm, fb, simpson(fa, fm, fb, a, b), QUAD_TOL, QUAD_DEPTH)
}
