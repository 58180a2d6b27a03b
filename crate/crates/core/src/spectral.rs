//! Spectra and the reference laws they are compared against.
//!
//! Reference CDFs of the Marchenko–Pastur and semicircle laws are integrated
//! in the angle variable `θ ∈ (-π/2, π/2)` where `λ = centre + half_width ·
//! sin θ`. Under that substitution the square-root edges cancel and
//! `ρ(λ) dλ` becomes a smooth weight:
//!
//! | law | `λ(θ)` | `ρ(λ) dλ` |
//! |-----|--------|-----------|
//! | M-P (`S`) | `σ²(1 + c + 2√c sin θ)` | `(2/π) cos²θ / (1 + c + 2√c sin θ) dθ` |
//! | M-P (`M = S/c`) | `σ²(1 + 1/c + (2/√c) sin θ)` | `(2/(πc)) cos²θ / (1 + 1/c + (2/√c) sin θ) dθ` |
//! | semicircle | `2ω sin θ` | `(2/π) cos²θ dθ` |
//!
//! The Ring law is a density on the complex plane,
//! `ρ(λ) = |λ|^{2/L-2} / (π c L)` on `(1-c)^{L/2} ≤ |λ| ≤ 1`. Its induced law
//! on the modulus is `2πr·ρ(r) = (2/(cL)) r^{2/L-1}` with CDF
//! `(r^{2/L} - (1-c)) / c`; both forms are exposed under distinct names.

use std::f64::consts::{FRAC_PI_2, PI};
use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quad::{self, Tolerance};
use crate::rmm::{CMatrix, CovarianceMatrix, RingProduct, C64};
use crate::seed;

/// Tolerance used for every reference CDF evaluation.
pub const CDF_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpectrumKind {
    Ring,
    Covariance,
    Wigner,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumSet {
    pub eigenvalues: Vec<C64>,
    pub kind: SpectrumKind,
    /// Window shape the spectrum came from, when known.
    pub shape: Option<(usize, usize)>,
    pub depth: usize,
}

impl SpectrumSet {
    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    pub fn ratio(&self) -> Option<f64> {
        self.shape.map(|(n, t)| n as f64 / t as f64)
    }

    pub fn real_parts(&self) -> Vec<f64> {
        self.eigenvalues.iter().map(|z| z.re).collect()
    }

    pub fn moduli(&self) -> Vec<f64> {
        self.eigenvalues.iter().map(|z| z.norm()).collect()
    }

    fn from_real(values: Vec<f64>, kind: SpectrumKind, shape: Option<(usize, usize)>) -> Self {
        Self {
            eigenvalues: values.into_iter().map(|x| C64::new(x, 0.0)).collect(),
            kind,
            shape,
            depth: 1,
        }
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(
            std::fs::File::create(path).map_err(|e| Error::io(path, e))?,
        );
        let mut body = String::from("re,im\n");
        for z in &self.eigenvalues {
            body.push_str(&format!("{:?},{:?}\n", z.re, z.im));
        }
        out.write_all(body.as_bytes())
            .and_then(|_| out.flush())
            .map_err(|e| Error::io(path, e))
    }
}

/// All eigenvalues of a general complex square matrix (Hessenberg QR).
///
/// `provenance` is carried into the error on non-convergence.
pub fn eigen_general(a: &CMatrix, provenance: &str) -> Result<SpectrumSet> {
    let n = a.nrows();
    if n != a.ncols() {
        return Err(Error::Shape(format!("{}x{} matrix is not square", n, a.ncols())));
    }
    if a.iter().any(|z| !(z.re.is_finite() && z.im.is_finite())) {
        return Err(Error::numerical(provenance, "matrix has non-finite entries"));
    }
    let eigenvalues = if n == 1 {
        vec![a[(0, 0)]]
    } else {
        let m = faer::Mat::<faer::c64>::from_fn(n, n, |i, j| {
            let z = a[(i, j)];
            faer::c64::new(z.re, z.im)
        });
        m.eigenvalues()
            .map_err(|e| Error::numerical(provenance, format!("eigenvalue iteration failed: {e:?}")))?
            .into_iter()
            .map(|z| C64::new(z.re, z.im))
            .collect()
    };
    Ok(SpectrumSet {
        eigenvalues,
        kind: SpectrumKind::Ring,
        shape: None,
        depth: 1,
    })
}

/// Spectrum of a normalized ring product.
pub fn ring_spectrum(r: &RingProduct, shape: (usize, usize)) -> Result<SpectrumSet> {
    let mut s = eigen_general(&r.z, &format!("ring product (N={}, T={}, L={})", shape.0, shape.1, r.depth))?;
    s.shape = Some(shape);
    s.depth = r.depth;
    Ok(s)
}

/// Ascending real eigenvalues of a covariance matrix.
///
/// Negative eigenvalues down to `-1e-10 · λ_max` are roundoff and clamped to
/// zero; anything more negative means the input was not PSD.
pub fn eigen_hermitian(m: &CovarianceMatrix) -> Result<SpectrumSet> {
    let a = &m.matrix;
    let scale = a.amax().max(f64::MIN_POSITIVE);
    if (a - a.transpose()).amax() > 1e-12 * scale {
        return Err(Error::Invariant("covariance matrix is not Hermitian".into()));
    }
    let mut values = sorted_symmetric_eigenvalues(a)?;
    let lmax = values.last().copied().unwrap_or(0.0).max(0.0);
    for v in values.iter_mut() {
        if *v < 0.0 {
            if *v >= -1e-10 * lmax {
                *v = 0.0;
            } else {
                return Err(Error::Invariant(format!(
                    "covariance eigenvalue {v:e} is negative beyond roundoff"
                )));
            }
        }
    }
    let n = a.nrows();
    let shape = (n, (n as f64 / m.ratio).round() as usize);
    Ok(SpectrumSet::from_real(values, SpectrumKind::Covariance, Some(shape)))
}

/// Ascending eigenvalues of a real symmetric matrix (e.g. a GOE sample).
pub fn eigen_symmetric(a: &DMatrix<f64>) -> Result<SpectrumSet> {
    Ok(SpectrumSet::from_real(
        sorted_symmetric_eigenvalues(a)?,
        SpectrumKind::Wigner,
        None,
    ))
}

fn sorted_symmetric_eigenvalues(a: &DMatrix<f64>) -> Result<Vec<f64>> {
    let n = a.nrows();
    let eig = SymmetricEigen::try_new(a.clone(), f64::EPSILON, 100 * n.max(10))
        .ok_or_else(|| Error::numerical("eigen_hermitian", "symmetric QR did not converge"))?;
    let mut v: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    v.sort_by(f64::total_cmp);
    Ok(v)
}

/// GOE sample `n^{-1/2} W` with `E W_jk² = ω²(1 + δ_jk)`.
pub fn sample_goe(n: usize, omega2: f64, seed: u64) -> DMatrix<f64> {
    let mut rng = seed::rng(seed);
    let off = omega2.sqrt();
    let diag = (2.0 * omega2).sqrt();
    let scale = 1.0 / (n as f64).sqrt();
    let mut m = DMatrix::zeros(n, n);
    for j in 0..n {
        for k in j..n {
            let z: f64 = rng.sample(StandardNormal);
            let v = z * if j == k { diag } else { off } * scale;
            m[(j, k)] = v;
            m[(k, j)] = v;
        }
    }
    m
}

/// A limiting spectral law.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "lowercase")]
pub enum ReferenceDensity {
    /// Ring law of `L`-fold products; planar density on the annulus.
    Ring { c: f64, depth: usize },
    /// Marchenko–Pastur law of `S = XXᴴ/T`.
    Mp { c: f64, sigma2: f64 },
    /// Marchenko–Pastur law of `M = XXᴴ/N = S/c`.
    Mp2 { c: f64, sigma2: f64 },
    /// Semicircle law of the GOE.
    Semicircle { omega2: f64 },
}

impl ReferenceDensity {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            Self::Ring { c, depth } => c > 0.0 && c <= 1.0 && depth >= 1,
            Self::Mp { c, sigma2 } | Self::Mp2 { c, sigma2 } => {
                c > 0.0 && c <= 1.0 && sigma2 > 0.0 && sigma2.is_finite()
            }
            Self::Semicircle { omega2 } => omega2 > 0.0 && omega2.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Parameter(format!("{self:?}")))
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Ring { .. } => "ring",
            Self::Mp { .. } => "mp",
            Self::Mp2 { .. } => "mp2",
            Self::Semicircle { .. } => "semicircle",
        }
    }

    /// Support `[lo, hi]`; for the Ring law this is the range of `|λ|`.
    pub fn support(&self) -> (f64, f64) {
        let (centre, half) = match *self {
            Self::Ring { c, depth } => return ((1.0 - c).powf(depth as f64 / 2.0), 1.0),
            _ => self.angle_frame(),
        };
        (centre - half, centre + half)
    }

    /// `(centre, half_width)` of the `λ = centre + half_width · sin θ` map.
    fn angle_frame(&self) -> (f64, f64) {
        match *self {
            Self::Mp { c, sigma2 } => (sigma2 * (1.0 + c), sigma2 * 2.0 * c.sqrt()),
            Self::Mp2 { c, sigma2 } => (sigma2 * (1.0 + 1.0 / c), sigma2 * 2.0 / c.sqrt()),
            Self::Semicircle { omega2 } => (0.0, 2.0 * omega2.sqrt()),
            Self::Ring { .. } => unreachable!("ring law has no angle frame"),
        }
    }

    /// `λ(θ)` for the angle substitution (not defined for the Ring law).
    pub fn at_angle(&self, theta: f64) -> f64 {
        let (centre, half) = self.angle_frame();
        centre + half * theta.sin()
    }

    /// `ρ(λ(θ)) · dλ/dθ`, smooth on `(-π/2, π/2)`.
    pub fn angle_weight(&self, theta: f64) -> f64 {
        let cos2 = theta.cos().powi(2);
        match *self {
            Self::Mp { c, .. } => 2.0 / PI * cos2 / (1.0 + c + 2.0 * c.sqrt() * theta.sin()),
            Self::Mp2 { c, .. } => {
                2.0 / (PI * c) * cos2 / (1.0 + 1.0 / c + 2.0 / c.sqrt() * theta.sin())
            }
            Self::Semicircle { .. } => 2.0 / PI * cos2,
            Self::Ring { .. } => unreachable!("ring law has no angle frame"),
        }
    }

    /// Pointwise density; zero outside the support. For the Ring law `x` is
    /// `|λ|` and the value is the planar density.
    pub fn density(&self, x: f64) -> f64 {
        let (lo, hi) = self.support();
        if !(lo..=hi).contains(&x) {
            return 0.0;
        }
        match *self {
            Self::Ring { c, depth } => {
                let l = depth as f64;
                x.powf(2.0 / l - 2.0) / (PI * c * l)
            }
            Self::Mp { c, sigma2 } => {
                if x <= 0.0 {
                    return 0.0;
                }
                ((hi - x) * (x - lo)).max(0.0).sqrt() / (2.0 * PI * x * c * sigma2)
            }
            Self::Mp2 { sigma2, .. } => {
                if x <= 0.0 {
                    return 0.0;
                }
                ((hi - x) * (x - lo)).max(0.0).sqrt() / (2.0 * PI * x * sigma2)
            }
            Self::Semicircle { omega2 } => (4.0 * omega2 - x * x).max(0.0).sqrt() / (2.0 * PI * omega2),
        }
    }

    /// Induced density of `|λ|` for the Ring law: `2πr · ρ(r)`.
    pub fn radial_density(&self, r: f64) -> Result<f64> {
        match self {
            Self::Ring { .. } => Ok(2.0 * PI * r * self.density(r)),
            other => Err(Error::Contract(format!("{} has no radial form", other.name()))),
        }
    }

    /// `∫ f dμ` over the law; `f` takes `λ` (or `|λ|` for the Ring law).
    pub fn integrate<F: FnMut(f64) -> f64>(&self, mut f: F, tol: Tolerance) -> Result<f64> {
        self.validate()?;
        match *self {
            Self::Ring { .. } => {
                let (lo, hi) = self.support();
                let e = quad::integrate(|r| f(r) * 2.0 * PI * r * self.density(r), lo, hi, tol)?;
                Ok(e.value)
            }
            _ => {
                let e = quad::integrate(
                    |th| f(self.at_angle(th)) * self.angle_weight(th),
                    -FRAC_PI_2,
                    FRAC_PI_2,
                    tol,
                )?;
                Ok(e.value)
            }
        }
    }

    /// Reference CDF (of `|λ|` for the Ring law).
    pub fn cdf(&self, x: f64) -> Result<f64> {
        self.validate()?;
        let (lo, hi) = self.support();
        if x <= lo {
            return Ok(0.0);
        }
        if x >= hi {
            return Ok(1.0);
        }
        match *self {
            Self::Ring { c, depth } => Ok(((x.powf(2.0 / depth as f64) - (1.0 - c)) / c).clamp(0.0, 1.0)),
            _ => {
                let (centre, half) = self.angle_frame();
                let theta = ((x - centre) / half).clamp(-1.0, 1.0).asin();
                let e = quad::integrate(
                    |th| self.angle_weight(th),
                    -FRAC_PI_2,
                    theta,
                    Tolerance::new(CDF_TOLERANCE * 1e-2, CDF_TOLERANCE * 1e-2),
                )?;
                Ok(e.value.clamp(0.0, 1.0))
            }
        }
    }

    /// Inverse CDF by bisection.
    pub fn quantile(&self, p: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::Parameter(format!("probability {p} outside [0, 1]")));
        }
        let (mut lo, mut hi) = self.support();
        for _ in 0..80 {
            let mid = 0.5 * (lo + hi);
            if self.cdf(mid)? < p {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(0.5 * (lo + hi))
    }

    fn accepts(&self, kind: SpectrumKind) -> bool {
        matches!(
            (self, kind),
            (Self::Ring { .. }, SpectrumKind::Ring)
                | (Self::Mp { .. } | Self::Mp2 { .. }, SpectrumKind::Covariance)
                | (Self::Semicircle { .. }, SpectrumKind::Wigner)
        )
    }
}

/// Kolmogorov distance `sup |F_N - F|` between the empirical spectral
/// distribution and a reference law (on `|λ|` for ring spectra).
pub fn esd_distance(s: &SpectrumSet, d: &ReferenceDensity) -> Result<f64> {
    if !d.accepts(s.kind) {
        return Err(Error::Contract(format!(
            "cannot compare a {:?} spectrum with the {} law",
            s.kind,
            d.name()
        )));
    }
    if s.is_empty() {
        return Err(Error::Contract("empty spectrum".into()));
    }
    let mut x = match s.kind {
        SpectrumKind::Ring => s.moduli(),
        _ => s.real_parts(),
    };
    x.sort_by(f64::total_cmp);
    kolmogorov(&x, |v| d.cdf(v))
}

/// `sup |F_N - F|` for an ascending sample.
pub fn kolmogorov<F: FnMut(f64) -> Result<f64>>(sorted: &[f64], mut cdf: F) -> Result<f64> {
    let n = sorted.len() as f64;
    let mut worst = 0.0_f64;
    for (i, &v) in sorted.iter().enumerate() {
        let f = cdf(v)?;
        worst = worst.max((i as f64 + 1.0) / n - f).max(f - i as f64 / n);
    }
    Ok(worst)
}

/// Histogram with Freedman–Diaconis bin width `2·IQR·n^{-1/3}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub rule: String,
    pub bin_width: f64,
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

pub fn histogram(values: &[f64]) -> Histogram {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    v.sort_by(f64::total_cmp);
    let (min, max) = match (v.first(), v.last()) {
        (Some(&a), Some(&b)) => (a, b),
        _ => {
            return Histogram {
                rule: "freedman-diaconis".into(),
                bin_width: 0.0,
                edges: vec![],
                counts: vec![],
            }
        }
    };
    let iqr = quantile_sorted(&v, 0.75) - quantile_sorted(&v, 0.25);
    let span = max - min;
    let mut width = 2.0 * iqr / (v.len() as f64).cbrt();
    if !(width > 0.0) {
        width = if span > 0.0 { span } else { 1.0 };
    }
    let bins = ((span / width).ceil() as usize).max(1);
    let edges: Vec<f64> = (0..=bins).map(|k| min + k as f64 * width).collect();
    let mut counts = vec![0; bins];
    for x in &v {
        let k = (((x - min) / width) as usize).min(bins - 1);
        counts[k] += 1;
    }
    Histogram {
        rule: "freedman-diaconis".into(),
        bin_width: width,
        edges,
        counts,
    }
}

fn quantile_sorted(v: &[f64], p: f64) -> f64 {
    let pos = p * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}
