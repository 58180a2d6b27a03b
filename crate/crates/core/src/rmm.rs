//! Random matrix models built from raw windows.
//!
//! The chain is `X̂ → X̃ → X_u → Z → Z̃`:
//!
//! - [`standardize`]: each row to zero mean and unit population variance.
//! - [`singular_value_equivalent`]: `X_u = sqrt(X̃ X̃ᴴ) · U` with `U` Haar, an
//!   `N × N` matrix sharing the singular values of `X̃`.
//! - [`ring_product`]: `Z = Π X_u,i` over `L` factors, then every row scaled
//!   to unit Euclidean norm, giving `Z̃` whose eigenvalues follow the Ring law
//!   on the annulus `(1-c)^{L/2} ≤ |λ| ≤ 1`.
//! - [`covariance`]: `S = X̃X̃ᴴ / T` or `M = X̃X̃ᴴ / N = S / c`.

use std::str::FromStr;

use nalgebra::{Complex, DMatrix, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::RawWindow;
use crate::seed;

pub type C64 = Complex<f64>;
pub type CMatrix = DMatrix<C64>;

/// What to do with a row whose variance is zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DegeneratePolicy {
    #[default]
    Error,
    /// Add seeded Gaussian noise of std `1e-8 · (1 + |μ|)` before standardizing.
    Jitter,
}

impl FromStr for DegeneratePolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "error" => Ok(Self::Error),
            "jitter" => Ok(Self::Jitter),
            other => Err(Error::Config(format!("unknown degenerate-row policy '{other}'"))),
        }
    }
}

const JITTER_SCALE: f64 = 1e-8;

/// Row-standardized window `X̃`.
#[derive(Debug, Clone, PartialEq)]
pub struct StandardizedMatrix {
    values: DMatrix<f64>,
    node_ids: Vec<String>,
}

impl StandardizedMatrix {
    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn node_ids(&self) -> &[String] {
        &self.node_ids
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn t(&self) -> usize {
        self.values.ncols()
    }

    /// `c = N / T`.
    pub fn ratio(&self) -> f64 {
        self.n() as f64 / self.t() as f64
    }

    /// `X̃ X̃ᴴ` (real, since the measurements are real).
    pub fn gram(&self) -> DMatrix<f64> {
        &self.values * self.values.transpose()
    }
}

fn row_moments(row: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = row.clone().count() as f64;
    let mean = row.clone().sum::<f64>() / n;
    let var = row.map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var)
}

/// Maps row `i` to `(x̂ᵢ - μ(x̂ᵢ)) / σ(x̂ᵢ)` with the population (divisor `T`)
/// standard deviation.
///
/// `jitter_seed` seeds the noise used by [`DegeneratePolicy::Jitter`].
pub fn standardize(
    w: &RawWindow,
    policy: DegeneratePolicy,
    jitter_seed: u64,
) -> Result<StandardizedMatrix> {
    let (n, t) = w.values.shape();
    if n == 0 || t < 2 {
        return Err(Error::Shape(format!("cannot standardize a {n}x{t} window")));
    }
    if n > t {
        return Err(Error::AspectRatio { n, t, region: None });
    }
    let mut values = w.values.clone();
    for i in 0..n {
        let (mut mean, mut var) = row_moments(values.row(i).iter().copied());
        if var.sqrt() <= 1e-13 * (1.0 + mean.abs()) {
            match policy {
                DegeneratePolicy::Error => {
                    return Err(Error::DegenerateRow {
                        node: w.node_ids[i].clone(),
                    })
                }
                DegeneratePolicy::Jitter => {
                    let mut rng = seed::rng(seed::derive(jitter_seed, i as u64));
                    let scale = JITTER_SCALE * (1.0 + mean.abs());
                    for x in values.row_mut(i).iter_mut() {
                        let z: f64 = rng.sample(StandardNormal);
                        *x += scale * z;
                    }
                    (mean, var) = row_moments(values.row(i).iter().copied());
                }
            }
        }
        let sd = var.sqrt();
        for x in values.row_mut(i).iter_mut() {
            *x = (*x - mean) / sd;
        }
        if policy == DegeneratePolicy::Jitter && sd <= 1e-6 * (1.0 + mean.abs()) {
            // Cancellation against a large mean leaves ~1e-8 error; a second
            // pass on the now well-scaled row removes it.
            let (m2, v2) = row_moments(values.row(i).iter().copied());
            let s2 = v2.sqrt();
            for x in values.row_mut(i).iter_mut() {
                *x = (*x - m2) / s2;
            }
        }
    }
    Ok(StandardizedMatrix {
        values,
        node_ids: w.node_ids.clone(),
    })
}

/// Haar-distributed `n × n` unitary matrix.
///
/// QR of an i.i.d. standard complex Gaussian matrix, then column `j` of `Q`
/// multiplied by `r_jj / |r_jj|` so that `R` has a positive diagonal and the
/// factorization (and hence the law of `Q`) is unique.
pub fn haar_unitary(n: usize, seed: u64) -> CMatrix {
    let mut rng = seed::rng(seed);
    let scale = std::f64::consts::FRAC_1_SQRT_2;
    let g = CMatrix::from_fn(n, n, |_, _| {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        C64::new(re * scale, im * scale)
    });
    let qr = g.qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..n {
        let d = r[(j, j)];
        let norm = d.norm();
        let phase = if norm > 0.0 { d / norm } else { C64::new(1.0, 0.0) };
        for x in q.column_mut(j).iter_mut() {
            *x *= phase;
        }
    }
    q
}

/// Hermitian square root of a real PSD matrix; eigenvalues below
/// `1e-12 · λ_max` are clamped to zero.
pub fn psd_sqrt(a: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(a.clone());
    let lmax = eig.eigenvalues.iter().copied().fold(0.0_f64, f64::max);
    let floor = 1e-12 * lmax;
    let roots = eig
        .eigenvalues
        .map(|l| if l > floor { l.sqrt() } else { 0.0 });
    let v = &eig.eigenvectors;
    let scaled = DMatrix::from_fn(v.nrows(), v.ncols(), |i, j| v[(i, j)] * roots[j]);
    let s = &scaled * v.transpose();
    (&s + s.transpose()) * 0.5
}

fn to_complex(a: &DMatrix<f64>) -> CMatrix {
    a.map(|x| C64::new(x, 0.0))
}

/// `X_u = sqrt(X̃ X̃ᴴ) · U`, `U = haar_unitary(N, seed)`.
pub fn singular_value_equivalent(x: &StandardizedMatrix, seed: u64) -> CMatrix {
    let root = psd_sqrt(&x.gram());
    to_complex(&root) * haar_unitary(x.n(), seed)
}

/// Normalized product `Z̃` of `L` singular value equivalents.
#[derive(Debug, Clone, PartialEq)]
pub struct RingProduct {
    pub z: CMatrix,
    pub depth: usize,
    pub seed: u64,
}

impl RingProduct {
    pub fn n(&self) -> usize {
        self.z.nrows()
    }
}

/// Forms `Z = Π X_u,i` with independent Haar factors (seeded by
/// `derive(seed, i)`) and scales each row `zᵢ` to `zᵢ / ‖zᵢ‖`.
///
/// `‖zᵢ‖ = √N · rms(zᵢ)`, so this is the `1/(√N σ(zᵢ))` row scaling applied
/// to the uncentred row.
pub fn ring_product(windows: &[StandardizedMatrix], seed: u64) -> Result<RingProduct> {
    let first = windows
        .first()
        .ok_or_else(|| Error::Shape("ring product needs at least one factor".into()))?;
    let n = first.n();
    if let Some(bad) = windows.iter().find(|w| w.n() != n) {
        return Err(Error::Shape(format!(
            "ring product factors disagree on N: {n} vs {}",
            bad.n()
        )));
    }
    let mut z = singular_value_equivalent(first, seed::derive(seed, 0));
    for (i, w) in windows.iter().enumerate().skip(1) {
        z = &z * singular_value_equivalent(w, seed::derive(seed, i as u64));
    }
    for i in 0..n {
        let norm = z.row(i).iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
        if !(norm.is_finite() && norm > 0.0) {
            return Err(Error::numerical(
                "ring_product",
                format!("row {i} has norm {norm}"),
            ));
        }
        for x in z.row_mut(i).iter_mut() {
            *x /= norm;
        }
    }
    Ok(RingProduct {
        z,
        depth: windows.len(),
        seed,
    })
}

/// Normalization of `X̃ X̃ᴴ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Convention {
    /// `S = X̃X̃ᴴ / T`.
    S,
    /// `M = X̃X̃ᴴ / N`.
    M,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceMatrix {
    pub matrix: DMatrix<f64>,
    pub convention: Convention,
    /// `c = N / T` of the window it came from.
    pub ratio: f64,
}

pub fn covariance(x: &StandardizedMatrix, convention: Convention) -> CovarianceMatrix {
    let divisor = match convention {
        Convention::S => x.t(),
        Convention::M => x.n(),
    } as f64;
    let g = x.gram() / divisor;
    CovarianceMatrix {
        matrix: (&g + g.transpose()) * 0.5,
        convention,
        ratio: x.ratio(),
    }
}

/// Stacks a factor block under the status block, repeating every factor row
/// `replicas` times.
///
/// Replicated rows get ids `<id>#<k>` for `k ≥ 1` so node ids stay unique.
pub fn augment(basic: &RawWindow, factors: &RawWindow, replicas: usize) -> Result<RawWindow> {
    if basic.t() != factors.t() {
        return Err(Error::Shape(format!(
            "augmentation needs equal T, got {} and {}",
            basic.t(),
            factors.t()
        )));
    }
    if replicas == 0 {
        return Err(Error::Parameter("replication count must be >= 1".into()));
    }
    let n = basic.n() + factors.n() * replicas;
    let mut values = DMatrix::zeros(n, basic.t());
    values.rows_mut(0, basic.n()).copy_from(&basic.values);
    let mut ids = basic.node_ids.clone();
    let mut row = basic.n();
    for (f, id) in factors.node_ids.iter().enumerate() {
        for k in 0..replicas {
            values.row_mut(row).copy_from(&factors.values.row(f));
            ids.push(if k == 0 { id.clone() } else { format!("{id}#{k}") });
            row += 1;
        }
    }
    Ok(RawWindow {
        values,
        node_ids: ids,
        end_index: basic.end_index,
    })
}
