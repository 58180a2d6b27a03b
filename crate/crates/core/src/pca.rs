//! Supervised PCA baseline: pilot sensors plus least-squares regression.
//!
//! With the training block `Y` (samples × nodes):
//!
//! 1. eigendecompose `YᵀY`; keep the top `m` directions (default: enough for
//!    95% of the trace);
//! 2. pick `m'` pilot nodes whose loadings in that subspace are as close to
//!    mutually orthogonal as possible (greedy: start from the largest
//!    loading, then repeatedly add the node minimizing the largest `|cos|`
//!    against those already chosen; ties go to the smaller node id);
//! 3. regress every other node on the pilots, `v = (Y_Bᵀ Y_B)⁻¹ Y_Bᵀ y`.
//!
//! A node is judged on a window of `w` samples by `r = ‖y - Y_B v‖` and
//! flagged when `r > k · s · √w`, where `s` is its RMS training residual.
//! No centring is applied, so a global sign flip `y → -y` leaves every
//! residual norm unchanged.

use std::cmp::Ordering;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::detect::{IndicatorPoint, IndicatorSeries, ReferenceMoments, Track};
use crate::error::{Error, Result};
use crate::ingest::DataSource;
use crate::les::LesConvention;

/// Largest accepted condition number of `Y_Bᵀ Y_B`.
pub const MAX_CONDITION: f64 = 1e12;
pub const VARIANCE_SHARE: f64 = 0.95;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Regression {
    pub node_id: String,
    pub coefficients: Vec<f64>,
    /// RMS residual over the training range.
    pub residual_rms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PilotModel {
    pub pilot_ids: Vec<String>,
    pub regressions: Vec<Regression>,
    /// Training samples `start..end`.
    pub train: (usize, usize),
    /// Principal subspace dimension.
    pub m: usize,
    pub eigenvalues: Vec<f64>,
    pub condition: f64,
    /// Largest pairwise `|cos|` among the pilot loadings.
    pub max_pilot_cos: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    /// Subspace dimension; by default the count reaching [`VARIANCE_SHARE`]
    /// of the energy, raised to `m_prime` if smaller.
    pub m: Option<usize>,
    pub m_prime: usize,
}

/// Number of leading eigenvalues reaching `share` of the total.
fn variance_count(desc: &[f64], share: f64) -> usize {
    let total: f64 = desc.iter().sum();
    let mut acc = 0.0;
    for (k, &l) in desc.iter().enumerate() {
        acc += l;
        if acc >= share * total {
            return k + 1;
        }
    }
    desc.len()
}

fn abs_cos(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return 1.0;
    }
    (a.dot(b) / (na * nb)).abs().min(1.0)
}

/// Greedy max-min-angle selection over loading vectors; returns row indices.
fn select_pilots(loadings: &[DVector<f64>], ids: &[String], count: usize) -> Vec<usize> {
    const TIE: f64 = 1e-12;
    let better = |score: f64, i: usize, best: Option<(f64, usize)>, lower_wins: bool| match best {
        None => true,
        Some((s, j)) => {
            let d = if lower_wins { s - score } else { score - s };
            d > TIE || (d.abs() <= TIE && ids[i] < ids[j])
        }
    };
    let mut chosen: Vec<usize> = Vec::with_capacity(count);
    while chosen.len() < count {
        let mut best: Option<(f64, usize)> = None;
        for i in 0..loadings.len() {
            if chosen.contains(&i) {
                continue;
            }
            let (score, lower_wins) = if chosen.is_empty() {
                (loadings[i].norm(), false)
            } else {
                let worst = chosen
                    .iter()
                    .map(|&j| abs_cos(&loadings[i], &loadings[j]))
                    .fold(0.0, f64::max);
                (worst, true)
            };
            if better(score, i, best, lower_wins) {
                best = Some((score, i));
            }
        }
        chosen.push(best.expect("enough candidates").1);
    }
    chosen
}

fn sorted_eigen(gram: DMatrix<f64>) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let n = gram.nrows();
    let eig = SymmetricEigen::try_new(gram, 1e-14, 10_000)
        .ok_or_else(|| Error::numerical("pca", "eigendecomposition did not converge"))?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap_or(Ordering::Equal));
    let values = order.iter().map(|&k| eig.eigenvalues[k].max(0.0)).collect();
    let vectors = DMatrix::from_fn(n, n, |i, j| eig.eigenvectors[(i, order[j])]);
    Ok((values, vectors))
}

/// `Y` as samples × nodes over `start..end`.
fn block(src: &DataSource, start: usize, end: usize) -> DMatrix<f64> {
    src.values().columns(start, end - start).transpose()
}

pub fn train(src: &DataSource, range: (usize, usize), cfg: TrainConfig) -> Result<PilotModel> {
    let (start, end) = range;
    if start >= end || end > src.t() {
        return Err(Error::Parameter(format!(
            "training range {start}..{end} outside 0..{}",
            src.t()
        )));
    }
    let n = src.n();
    if cfg.m_prime == 0 || cfg.m_prime >= n {
        return Err(Error::Parameter(format!("m' = {} must be in 1..{n}", cfg.m_prime)));
    }
    if end - start < cfg.m_prime {
        return Err(Error::Parameter(format!(
            "training range of {} samples is shorter than m' = {}",
            end - start,
            cfg.m_prime
        )));
    }
    let y = block(src, start, end);
    let (eigenvalues, vectors) = sorted_eigen(y.transpose() * &y)?;
    // The variance rule never picks fewer dimensions than pilots.
    let m = cfg
        .m
        .unwrap_or_else(|| variance_count(&eigenvalues, VARIANCE_SHARE).max(cfg.m_prime));
    if m > n || cfg.m_prime > m {
        return Err(Error::Parameter(format!(
            "need m' <= m <= N, got m' = {}, m = {m}, N = {n}",
            cfg.m_prime
        )));
    }
    let loadings: Vec<DVector<f64>> = (0..n)
        .map(|i| DVector::from_fn(m, |k, _| vectors[(i, k)] * eigenvalues[k].sqrt()))
        .collect();
    let pilots = select_pilots(&loadings, src.node_ids(), cfg.m_prime);
    let max_pilot_cos = pilots
        .iter()
        .enumerate()
        .flat_map(|(a, &i)| pilots[a + 1..].iter().map(move |&j| (i, j)))
        .map(|(i, j)| abs_cos(&loadings[i], &loadings[j]))
        .fold(0.0, f64::max);

    let yb = DMatrix::from_fn(y.nrows(), pilots.len(), |s, k| y[(s, pilots[k])]);
    let normal = yb.transpose() * &yb;
    let (nev, _) = sorted_eigen(normal.clone())?;
    let condition = nev[0] / nev[nev.len() - 1];
    if !(condition.is_finite() && condition <= MAX_CONDITION) {
        return Err(Error::IllConditioned { condition });
    }
    let chol = normal
        .cholesky()
        .ok_or(Error::IllConditioned { condition })?;
    let regressions = (0..n)
        .filter(|i| !pilots.contains(i))
        .map(|i| {
            let target = y.column(i);
            let v = chol.solve(&(yb.transpose() * target));
            let resid = target - &yb * &v;
            Regression {
                node_id: src.node_ids()[i].clone(),
                coefficients: v.iter().copied().collect(),
                residual_rms: resid.norm() / ((end - start) as f64).sqrt(),
            }
        })
        .collect();
    Ok(PilotModel {
        pilot_ids: pilots.iter().map(|&i| src.node_ids()[i].clone()).collect(),
        regressions,
        train: range,
        m,
        eigenvalues,
        condition,
        max_pilot_cos,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeJudgement {
    pub node_id: String,
    pub residual: f64,
    pub threshold: f64,
    pub flag: bool,
}

impl PilotModel {
    fn pilot_rows(&self, src: &DataSource) -> Result<Vec<usize>> {
        self.pilot_ids
            .iter()
            .map(|id| {
                src.node_index(id)
                    .ok_or_else(|| Error::Contract(format!("pilot node '{id}' missing from the data")))
            })
            .collect()
    }

    /// Residual norms of every regressed node over samples `end-w+1..=end`.
    pub fn judge(&self, src: &DataSource, end: usize, w: usize, k: f64) -> Result<Vec<NodeJudgement>> {
        if w == 0 || end + 1 < w || end >= src.t() {
            return Err(Error::Parameter(format!("judge window of {w} ending at {end} does not fit")));
        }
        let pilots = self.pilot_rows(src)?;
        let start = end + 1 - w;
        let yb = DMatrix::from_fn(w, pilots.len(), |s, j| src.values()[(pilots[j], start + s)]);
        self.regressions
            .iter()
            .map(|r| {
                let row = src
                    .node_index(&r.node_id)
                    .ok_or_else(|| Error::Contract(format!("unknown node '{}'", r.node_id)))?;
                let fit = &yb * DVector::from_column_slice(&r.coefficients);
                let residual = (0..w)
                    .map(|s| (src.values()[(row, start + s)] - fit[s]).powi(2))
                    .sum::<f64>()
                    .sqrt();
                let threshold = k * self.scale(r) * (w as f64).sqrt();
                Ok(NodeJudgement {
                    node_id: r.node_id.clone(),
                    residual,
                    threshold,
                    flag: residual > threshold,
                })
            })
            .collect()
    }

    /// Residual scale with a floor for exactly representable nodes.
    fn scale(&self, r: &Regression) -> f64 {
        r.residual_rms.max(1e-9)
    }

    /// Judges every window end outside the training range, one track per
    /// regressed node (`function = "PCA"`, `tau` = residual norm).
    pub fn series(&self, src: &DataSource, w: usize, k: f64) -> Result<IndicatorSeries> {
        let ends: Vec<usize> = (w.saturating_sub(1)..src.t())
            .filter(|&e| e + 1 - w >= self.train.1 || e < self.train.0)
            .collect();
        let judged = ends
            .iter()
            .map(|&e| self.judge(src, e, w, k))
            .collect::<Result<Vec<_>>>()?;
        let tracks = self
            .regressions
            .iter()
            .enumerate()
            .map(|(j, r)| {
                let s = self.scale(r) * (w as f64).sqrt();
                Track {
                    region: r.node_id.clone(),
                    function: "PCA".into(),
                    convention: LesConvention::Sum,
                    n: 1,
                    reference: ReferenceMoments {
                        expectation: 0.0,
                        variance: s * s,
                        source: "training-residual".into(),
                        theory_variance: None,
                    },
                    points: ends
                        .iter()
                        .zip(&judged)
                        .map(|(&t, jd)| IndicatorPoint {
                            t,
                            tau: jd[j].residual,
                            eta: None,
                            flag: jd[j].flag,
                        })
                        .collect(),
                }
            })
            .collect();
        Ok(IndicatorSeries {
            tracks,
            window_len: w,
            stride: 1,
            depth: 1,
            threshold_k: k,
            reference: format!("train:{}:{}", self.train.0, self.train.1),
        })
    }
}
