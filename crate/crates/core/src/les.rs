//! Linear eigenvalue statistics and their theoretical moments.
//!
//! For a spectrum `λ₁..λ_N` and test function `φ` the statistic is
//! `τ = Σ φ(λᵢ)`, except the mean spectral radius which averages:
//! `τ_MSR = (1/N) Σ |λᵢ|`.
//!
//! Theory available here:
//!
//! - law of large numbers: `E τ ≈ N ∫ φ ρ` ([`lln_expectation`]);
//! - Ring-law radius moments `E r`, `E r²`, `D r` ([`msr_moments`]);
//! - the CLT variance of `τ` for `M = XXᴴ/N` ([`clt_variance`]), written
//!   with `ζ(θ) = 1 + 1/c + (2/√c) sin θ`:
//!
//! ```text
//! V[φ] = 2/(cπ²) ∬ ψ(θ₁,θ₂)² (1 - sin θ₁ sin θ₂) dθ₁ dθ₂
//!      + κ₄/π² (∫ φ(ζ(θ)) sin θ dθ)²
//! ψ(θ₁,θ₂) = [φ(ζ(θ₁)) - φ(ζ(θ₂))] / [ζ(θ₁) - ζ(θ₂)]
//! ```
//!
//! over `θ ∈ (-π/2, π/2)`.

use std::f64::consts::{FRAC_PI_2, PI};
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::RawWindow;
use crate::quad::{self, Tolerance};
use crate::rmm::{self, Convention, DegeneratePolicy, StandardizedMatrix};
use crate::seed;
use crate::spectral::{self, ReferenceDensity, SpectrumKind, SpectrumSet};

/// Floor applied to eigenvalues under the clamp policy of DET and LRF.
pub const LOG_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Domain {
    RealLine,
    PositiveReals,
    ComplexModulus,
}

/// How the per-eigenvalue values are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LesConvention {
    /// `Σ φ(λᵢ)`.
    Sum,
    /// `(1/N) Σ φ(λᵢ)`.
    Mean,
}

type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// A user-supplied test function.
#[derive(Clone)]
pub struct CustomFunction {
    pub name: String,
    pub eval: ScalarFn,
    /// Derivative; central differences are used when absent.
    pub derivative: Option<ScalarFn>,
    pub domain: Domain,
    pub closed_form: String,
}

impl fmt::Debug for CustomFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomFunction")
            .field("name", &self.name)
            .field("domain", &self.domain)
            .field("closed_form", &self.closed_form)
            .finish()
    }
}

#[derive(Debug, Clone)]
pub enum TestFunction {
    /// Mean spectral radius, `|λ|` averaged over the spectrum.
    Msr,
    /// Chebyshev `2x² - 1`.
    T2,
    /// Chebyshev `4x³ - 3x`.
    T3,
    /// Chebyshev `8x⁴ - 8x² + 1`.
    T4,
    /// `ln x`.
    Det,
    /// Likelihood-ratio function `x - ln x - 1`.
    Lrf,
    Custom(CustomFunction),
}

impl TestFunction {
    pub const NAMED: [TestFunction; 6] = [
        TestFunction::Msr,
        TestFunction::T2,
        TestFunction::T3,
        TestFunction::T4,
        TestFunction::Det,
        TestFunction::Lrf,
    ];

    pub fn custom(
        name: impl Into<String>,
        domain: Domain,
        f: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        let name = name.into();
        Self::Custom(CustomFunction {
            closed_form: name.clone(),
            name,
            eval: Arc::new(f),
            derivative: None,
            domain,
        })
    }

    pub fn name(&self) -> &str {
        match self {
            Self::Msr => "MSR",
            Self::T2 => "T2",
            Self::T3 => "T3",
            Self::T4 => "T4",
            Self::Det => "DET",
            Self::Lrf => "LRF",
            Self::Custom(c) => &c.name,
        }
    }

    pub fn closed_form(&self) -> &str {
        match self {
            Self::Msr => "|x| (averaged over the spectrum)",
            Self::T2 => "2x^2 - 1",
            Self::T3 => "4x^3 - 3x",
            Self::T4 => "8x^4 - 8x^2 + 1",
            Self::Det => "ln x",
            Self::Lrf => "x - ln x - 1",
            Self::Custom(c) => &c.closed_form,
        }
    }

    pub fn domain(&self) -> Domain {
        match self {
            Self::Msr => Domain::ComplexModulus,
            Self::T2 | Self::T3 | Self::T4 => Domain::RealLine,
            Self::Det | Self::Lrf => Domain::PositiveReals,
            Self::Custom(c) => c.domain,
        }
    }

    pub fn convention(&self) -> LesConvention {
        match self {
            Self::Msr => LesConvention::Mean,
            _ => LesConvention::Sum,
        }
    }

    /// `φ(x)`; for MSR this is `|x|`.
    pub fn eval(&self, x: f64) -> f64 {
        match self {
            Self::Msr => x.abs(),
            Self::T2 => 2.0 * x * x - 1.0,
            Self::T3 => 4.0 * x * x * x - 3.0 * x,
            Self::T4 => {
                let x2 = x * x;
                8.0 * x2 * x2 - 8.0 * x2 + 1.0
            }
            Self::Det => x.ln(),
            Self::Lrf => x - x.ln() - 1.0,
            Self::Custom(c) => (c.eval)(x),
        }
    }

    pub fn derivative(&self, x: f64) -> f64 {
        match self {
            Self::Msr => x.signum(),
            Self::T2 => 4.0 * x,
            Self::T3 => 12.0 * x * x - 3.0,
            Self::T4 => 32.0 * x * x * x - 16.0 * x,
            Self::Det => 1.0 / x,
            Self::Lrf => 1.0 - 1.0 / x,
            Self::Custom(c) => match &c.derivative {
                Some(d) => d(x),
                None => {
                    let h = 1e-5 * (1.0 + x.abs());
                    ((c.eval)(x + h) - (c.eval)(x - h)) / (2.0 * h)
                }
            },
        }
    }

    fn needs_positive(&self) -> bool {
        self.domain() == Domain::PositiveReals
    }
}

impl FromStr for TestFunction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "MSR" => Ok(Self::Msr),
            "T2" => Ok(Self::T2),
            "T3" => Ok(Self::T3),
            "T4" => Ok(Self::T4),
            "DET" => Ok(Self::Det),
            "LRF" => Ok(Self::Lrf),
            other => Err(Error::Config(format!("unknown test function '{other}'"))),
        }
    }
}

impl fmt::Display for TestFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Value of a statistic together with how many eigenvalues were clamped.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LesValue {
    pub value: f64,
    pub clamped: usize,
}

/// `τ = Σ φ(λᵢ)` (or the MSR average).
///
/// With `clamp` set, eigenvalues outside the positive domain of DET/LRF are
/// replaced by `max(λ, 1e-12)` and counted; otherwise they are an error.
pub fn les(s: &SpectrumSet, f: &TestFunction, clamp: bool) -> Result<LesValue> {
    if s.is_empty() {
        return Err(Error::Contract("empty spectrum".into()));
    }
    if f.domain() != Domain::ComplexModulus && s.kind == SpectrumKind::Ring {
        return Err(Error::Contract(format!(
            "{} needs a real spectrum, got a ring spectrum",
            f.name()
        )));
    }
    let n = s.len() as f64;
    if let TestFunction::Msr = f {
        let value = s.eigenvalues.iter().map(|z| z.norm()).sum::<f64>() / n;
        return Ok(LesValue { value, clamped: 0 });
    }
    let mut clamped = 0;
    let mut value = 0.0;
    for z in &s.eigenvalues {
        let mut x = if f.domain() == Domain::ComplexModulus { z.norm() } else { z.re };
        if f.needs_positive() && x <= 0.0 {
            if !clamp {
                return Err(Error::Domain {
                    function: f.name().to_string(),
                    value: x,
                });
            }
            x = x.max(LOG_CLAMP);
            clamped += 1;
        } else if f.needs_positive() && x < LOG_CLAMP && clamp {
            x = LOG_CLAMP;
            clamped += 1;
        }
        value += f.eval(x);
    }
    if f.convention() == LesConvention::Mean {
        value /= n;
    }
    Ok(LesValue { value, clamped })
}

/// How a set of moments was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    ClosedForm,
    Quadrature,
    MonteCarlo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoreticalMoments {
    pub expectation: f64,
    pub variance: f64,
    pub method: Method,
    pub c: f64,
    pub sigma2: f64,
    pub kappa4: f64,
    pub n: usize,
    pub depth: usize,
}

const LLN_TOL: f64 = 1e-8;

/// Law-of-large-numbers value `N ∫ φ ρ`; MSR gets the plain integral.
pub fn lln_expectation(f: &TestFunction, d: &ReferenceDensity, n: usize) -> Result<f64> {
    d.validate()?;
    let ring = matches!(d, ReferenceDensity::Ring { .. });
    if ring && !matches!(f.domain(), Domain::ComplexModulus) {
        return Err(Error::Contract(format!(
            "{} is not defined on the complex Ring spectrum",
            f.name()
        )));
    }
    if f.needs_positive() && d.support().0 <= 0.0 {
        return Err(Error::Divergence(format!(
            "{} against the {} law whose support reaches 0",
            f.name(),
            d.name()
        )));
    }
    let integral = d.integrate(|x| f.eval(x), Tolerance::new(LLN_TOL * 1e-2, LLN_TOL))?;
    Ok(match f.convention() {
        LesConvention::Mean => integral,
        LesConvention::Sum => n as f64 * integral,
    })
}

/// Moments of a single eigenvalue radius under the Ring law.
///
/// For `L = 1`: `E r = 2(1 - (1-c)^{3/2}) / (3c)`, `E r² = (1 - (1-c)²) / (2c)`.
/// Deeper products fall back to quadrature of the radial law.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadiusMoments {
    pub mean: f64,
    pub second: f64,
    pub variance: f64,
    pub method: Method,
}

pub fn msr_moments(c: f64, depth: usize) -> Result<RadiusMoments> {
    let law = ReferenceDensity::Ring { c, depth };
    law.validate()?;
    if depth == 1 {
        let mean = 2.0 / (3.0 * c) * (1.0 - (1.0 - c).powf(1.5));
        let second = (1.0 - (1.0 - c).powi(2)) / (2.0 * c);
        return Ok(RadiusMoments {
            mean,
            second,
            variance: second - mean * mean,
            method: Method::ClosedForm,
        });
    }
    let tol = Tolerance::new(1e-13, 1e-12);
    let mean = law.integrate(|r| r, tol)?;
    let second = law.integrate(|r| r * r, tol)?;
    Ok(RadiusMoments {
        mean,
        second,
        variance: second - mean * mean,
        method: Method::Quadrature,
    })
}

/// Limiting variance of `τ - E τ` for `M = XXᴴ/N` with `σ² = 1`.
pub fn clt_variance(f: &TestFunction, c: f64, kappa4: f64) -> Result<f64> {
    if !(c > 0.0 && c <= 1.0) {
        return Err(Error::Parameter(format!("c = {c} outside (0, 1]")));
    }
    if matches!(f, TestFunction::Msr) {
        return Err(Error::Contract("the covariance CLT does not apply to MSR".into()));
    }
    let law = ReferenceDensity::Mp2 { c, sigma2: 1.0 };
    if f.needs_positive() && law.support().0 <= 0.0 {
        return Err(Error::Divergence(format!("{} at c = 1", f.name())));
    }
    let zeta = |th: f64| law.at_angle(th);
    let scale = zeta(FRAC_PI_2);
    let psi = |t1: f64, t2: f64| {
        let (z1, z2) = (zeta(t1), zeta(t2));
        if (t1 - t2).abs() < 1e-6 || (z1 - z2).abs() < 1e-12 * scale {
            f.derivative(0.5 * (z1 + z2))
        } else {
            (f.eval(z1) - f.eval(z2)) / (z1 - z2)
        }
    };
    let tol = Tolerance::new(1e-9, 1e-7);
    let double = quad::integrate_2d(
        |t1, t2| {
            let p = psi(t1, t2);
            p * p * (1.0 - t1.sin() * t2.sin())
        },
        (-FRAC_PI_2, FRAC_PI_2),
        (-FRAC_PI_2, FRAC_PI_2),
        tol,
    )?
    .value;
    let mut v = 2.0 / (c * PI * PI) * double;
    if kappa4 != 0.0 {
        let single = quad::integrate(|th| f.eval(zeta(th)) * th.sin(), -FRAC_PI_2, FRAC_PI_2, tol)?.value;
        v += kappa4 / (PI * PI) * single * single;
    }
    if !v.is_finite() {
        return Err(Error::numerical("clt_variance", "non-finite result"));
    }
    Ok(v.max(0.0))
}

/// Excess kurtosis `E X⁴ - 3` of the standardized sample.
pub fn kurtosis_excess(sample: &[f64]) -> Result<f64> {
    if sample.len() < 100 {
        return Err(Error::Parameter(format!(
            "kurtosis needs at least 100 values, got {}",
            sample.len()
        )));
    }
    let n = sample.len() as f64;
    let mean = sample.iter().sum::<f64>() / n;
    let (m2, m4) = sample.iter().fold((0.0, 0.0), |(a, b), &x| {
        let d = (x - mean) * (x - mean);
        (a + d, b + d * d)
    });
    let (m2, m4) = (m2 / n, m4 / n);
    if m2 <= 0.0 {
        return Err(Error::Parameter("sample has zero variance".into()));
    }
    Ok(m4 / (m2 * m2) - 3.0)
}

/// Every requested statistic of one standardized window.
///
/// MSR is taken on the ring product `Z̃` of `depth` independent singular value
/// equivalents of `x` (Haar seeds derived from `seed`); the other functions on
/// the eigenvalues of `M = X̃X̃ᴴ/N`. Each spectrum is computed at most once.
pub fn window_statistics(
    x: &StandardizedMatrix,
    functions: &[TestFunction],
    depth: usize,
    seed: u64,
    clamp: bool,
) -> Result<Vec<LesValue>> {
    let shape = (x.n(), x.t());
    let ring = if functions.iter().any(|f| f.domain() == Domain::ComplexModulus) {
        let factors = vec![x.clone(); depth];
        let z = rmm::ring_product(&factors, seed)?;
        Some(spectral::ring_spectrum(&z, shape)?)
    } else {
        None
    };
    let cov = if functions.iter().any(|f| f.domain() != Domain::ComplexModulus) {
        Some(spectral::eigen_hermitian(&rmm::covariance(x, Convention::M))?)
    } else {
        None
    };
    functions
        .iter()
        .map(|f| {
            let s = match f.domain() {
                Domain::ComplexModulus => ring.as_ref(),
                _ => cov.as_ref(),
            }
            .expect("spectrum computed above");
            les(s, f, clamp)
        })
        .collect()
}

/// Pure-noise null model: i.i.d. standard Gaussian `N × T` windows run
/// through the same standardize → spectrum → LES chain as the detector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NullModel {
    pub n: usize,
    pub t: usize,
    pub depth: usize,
    pub draws: usize,
    pub seed: u64,
}

/// Sample mean and (unbiased) variance of each statistic under the null model.
pub fn monte_carlo_moments(functions: &[TestFunction], model: &NullModel) -> Result<Vec<TheoreticalMoments>> {
    if model.draws < 2 {
        return Err(Error::Parameter("Monte Carlo needs at least 2 draws".into()));
    }
    if model.n > model.t || model.n < 2 {
        return Err(Error::AspectRatio {
            n: model.n,
            t: model.t,
            region: None,
        });
    }
    let samples = (0..model.draws)
        .into_par_iter()
        .map(|k| {
            let s = seed::derive(model.seed, k as u64);
            let w = gaussian_window(model.n, model.t, s);
            let x = rmm::standardize(&w, DegeneratePolicy::Error, 0)?;
            window_statistics(&x, functions, model.depth, seed::derive(s, 1), true)
        })
        .collect::<Result<Vec<_>>>()?;
    let draws = model.draws as f64;
    Ok(functions
        .iter()
        .enumerate()
        .map(|(j, _)| {
            let mean = samples.iter().map(|v| v[j].value).sum::<f64>() / draws;
            let var = samples.iter().map(|v| (v[j].value - mean).powi(2)).sum::<f64>() / (draws - 1.0);
            TheoreticalMoments {
                expectation: mean,
                variance: var,
                method: Method::MonteCarlo,
                c: model.n as f64 / model.t as f64,
                sigma2: 1.0,
                kappa4: 0.0,
                n: model.n,
                depth: model.depth,
            }
        })
        .collect())
}

fn gaussian_window(n: usize, t: usize, s: u64) -> RawWindow {
    let mut rng = seed::rng(s);
    RawWindow {
        values: DMatrix::from_fn(n, t, |_, _| rng.sample(StandardNormal)),
        node_ids: (0..n).map(|i| format!("g{i}")).collect(),
        end_index: t - 1,
    }
}

/// One row of the theory table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoryRow {
    pub function: String,
    pub expectation: f64,
    pub variance: f64,
    /// Coefficient of variation `√D / E`.
    pub cv: f64,
    pub method: Method,
}

/// Expectation, variance and coefficient of variation of all named
/// statistics for an `n × t` window. MSR reports the single-radius moments
/// `E r`, `D r`; the others use `N ∫ φ ρ_mp2` and the CLT variance.
pub fn theory_table(n: usize, t: usize, kappa4: f64, depth: usize) -> Result<Vec<TheoryRow>> {
    if n == 0 || n > t {
        return Err(Error::AspectRatio { n, t, region: None });
    }
    let c = n as f64 / t as f64;
    let law = ReferenceDensity::Mp2 { c, sigma2: 1.0 };
    TestFunction::NAMED
        .iter()
        .map(|f| {
            let (expectation, variance, method) = match f {
                TestFunction::Msr => {
                    let m = msr_moments(c, depth)?;
                    (m.mean, m.variance, m.method)
                }
                _ => (
                    lln_expectation(f, &law, n)?,
                    clt_variance(f, c, kappa4)?,
                    Method::Quadrature,
                ),
            };
            Ok(TheoryRow {
                function: f.name().to_string(),
                expectation,
                variance,
                cv: variance.sqrt() / expectation.abs(),
                method,
            })
        })
        .collect()
}
