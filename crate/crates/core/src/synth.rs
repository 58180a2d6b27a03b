//! Synthetic scenarios: white noise plus piecewise signals.
//!
//! Each cell is `x[i, s] = σ_noise · g(i, s) · ε[i, s] + signal(i, s)` where
//! `ε` is i.i.d. standard normal, `g` is the product of the collapse gains
//! `exp(rate · (s - start))` active on node `i`, and `signal` is the sum of
//! segment contributions. A segment with value `v(s)` adds `v(s)` to each of
//! its affected nodes and `coupling · v(s) / √n` per affected node to every
//! node, a rank-1 spread standing in for network propagation.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{DataSource, RegionPartition};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SegmentKind {
    Flat { level: f64 },
    Step { to_level: f64 },
    Ramp { from_level: f64, slope: f64 },
    /// Holds `level` while the noise of affected nodes grows as `exp(rate·Δs)`.
    Collapse { level: f64, rate: f64 },
}

/// Signal segment over samples `start..end`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub start: usize,
    pub end: usize,
    #[serde(flatten)]
    pub kind: SegmentKind,
    /// Row indices receiving the signal directly.
    pub affected_nodes: Vec<usize>,
    #[serde(default)]
    pub coupling: f64,
}

impl Segment {
    fn signal(&self, s: usize) -> f64 {
        let ds = (s - self.start) as f64;
        match self.kind {
            SegmentKind::Flat { level } => level,
            SegmentKind::Step { to_level } => to_level,
            SegmentKind::Ramp { from_level, slope } => from_level + slope * ds,
            SegmentKind::Collapse { level, .. } => level,
        }
    }

    fn noise_gain(&self, s: usize) -> f64 {
        match self.kind {
            SegmentKind::Collapse { rate, .. } => (rate * (s - self.start) as f64).exp(),
            _ => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub n: usize,
    pub t: usize,
    pub noise_std: f64,
    #[serde(default)]
    pub segments: Vec<Segment>,
}

impl Scenario {
    pub fn noise(n: usize, t: usize) -> Self {
        Self {
            n,
            t,
            noise_std: 1.0,
            segments: Vec::new(),
        }
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let sc: Scenario = serde_json::from_str(&text)?;
        sc.validate()?;
        Ok(sc)
    }

    /// Segments must lie inside `[0, t)`, name existing nodes, and together
    /// cover every sample. Overlapping segments superpose.
    pub fn validate(&self) -> Result<()> {
        if self.n < 2 || self.t < 2 {
            return Err(Error::Parameter(format!("scenario must be at least 2×2, got {}×{}", self.n, self.t)));
        }
        if !(self.noise_std.is_finite() && self.noise_std >= 0.0) {
            return Err(Error::Parameter(format!("noise_std = {}", self.noise_std)));
        }
        let mut covered = vec![false; self.t];
        for (k, seg) in self.segments.iter().enumerate() {
            if seg.start >= seg.end || seg.end > self.t {
                return Err(Error::Parameter(format!(
                    "segment {k} range {}..{} outside 0..{}",
                    seg.start, seg.end, self.t
                )));
            }
            if !(0.0..=1.0).contains(&seg.coupling) {
                return Err(Error::Parameter(format!("segment {k} coupling {} outside [0, 1]", seg.coupling)));
            }
            if let Some(&bad) = seg.affected_nodes.iter().find(|&&i| i >= self.n) {
                return Err(Error::Parameter(format!("segment {k} names node {bad} of {}", self.n)));
            }
            covered[seg.start..seg.end].iter_mut().for_each(|c| *c = true);
        }
        if !self.segments.is_empty() {
            if let Some(gap) = covered.iter().position(|c| !c) {
                return Err(Error::Parameter(format!("segments leave sample {gap} uncovered")));
            }
        }
        Ok(())
    }

    /// Deterministic part of the data, `n × t`.
    pub fn signal(&self) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.n, self.t);
        let spread = 1.0 / (self.n as f64).sqrt();
        for seg in &self.segments {
            for s in seg.start..seg.end {
                let v = seg.signal(s);
                for &i in &seg.affected_nodes {
                    out[(i, s)] += v;
                }
                let common = seg.coupling * v * spread * seg.affected_nodes.len() as f64;
                if common != 0.0 {
                    out.column_mut(s).add_scalar_mut(common);
                }
            }
        }
        out
    }

    /// Multiplier on the noise standard deviation, `n × t`.
    pub fn noise_gain(&self) -> DMatrix<f64> {
        let mut out = DMatrix::from_element(self.n, self.t, 1.0);
        for seg in &self.segments {
            if let SegmentKind::Collapse { .. } = seg.kind {
                for s in seg.start..seg.end {
                    let g = seg.noise_gain(s);
                    for &i in &seg.affected_nodes {
                        out[(i, s)] *= g;
                    }
                }
            }
        }
        out
    }
}

fn gaussian(n: usize, t: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = seed::rng(seed);
    // Row-major fill so that a node's series does not depend on `n`.
    DMatrix::from_row_iterator(n, t, (0..n * t).map(|_| rng.sample::<f64, _>(StandardNormal)))
}

fn bus_ids(n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("bus-{i}")).collect()
}

/// Realizes a scenario as a data source with node ids `bus-1..bus-n` and
/// timestamps `0..t`.
pub fn generate(sc: &Scenario, seed: u64) -> Result<DataSource> {
    sc.validate()?;
    let noise = gaussian(sc.n, sc.t, seed);
    let values = noise.component_mul(&sc.noise_gain()) * sc.noise_std + sc.signal();
    DataSource::new(values, bus_ids(sc.n), (0..sc.t as i64).collect())
}

/// Standard normal `n × t` source.
pub fn sample_gaussian_matrix(n: usize, t: usize, seed: u64) -> Result<DataSource> {
    DataSource::new(gaussian(n, t, seed), bus_ids(n), (0..t as i64).collect())
}

/// Scenario bundled with its region partition and (illustrative) layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Preset {
    pub scenario: Scenario,
    pub partition: RegionPartition,
    /// Region holding the affected nodes.
    pub event_region: String,
    pub step_index: usize,
}

pub const TABLE3_REGIONS: usize = 6;

/// Five-stage schedule on a 118-bus-like system, in noise units.
///
/// Nodes are split into six contiguous regions `A1..A6`; the third region
/// (containing `bus-52` for `n = 118`) carries the signal:
///
/// | samples (t = 1500) | kind |
/// |---|---|
/// | 0..600 | flat 0 |
/// | 600..1200 | step to 5σ |
/// | 1200..1306 | ramp 5σ → ≈10σ |
/// | 1306..1500 | collapse, noise growing 1%/sample |
///
/// Breakpoints scale with `t / 1500`. Coupling is 0.3.
/// The layout places regions on a circle and their nodes on golden-angle
/// spirals; it is illustrative only and carries no geographic meaning.
pub fn table3(n: usize, t: usize) -> Result<Preset> {
    if n < 2 * TABLE3_REGIONS {
        return Err(Error::Parameter(format!("table3 needs n >= {}, got {n}", 2 * TABLE3_REGIONS)));
    }
    if t < 30 {
        return Err(Error::Parameter(format!("table3 needs t >= 30, got {t}")));
    }
    let scale = |s: usize| ((s as f64) * t as f64 / 1500.0).round() as usize;
    let (step, ramp, collapse) = (scale(600), scale(1200), scale(1306));
    let ids = bus_ids(n);
    let mut regions = BTreeMap::new();
    let mut bounds = Vec::new();
    let mut start = 0;
    for r in 0..TABLE3_REGIONS {
        let size = n / TABLE3_REGIONS + usize::from(r < n % TABLE3_REGIONS);
        regions.insert(format!("A{}", r + 1), ids[start..start + size].to_vec());
        bounds.push(start..start + size);
        start += size;
    }
    let affected: Vec<usize> = bounds[2].clone().collect();
    let slope = 5.0 / (collapse - ramp).max(1) as f64;
    let seg = |start, end, kind| Segment {
        start,
        end,
        kind,
        affected_nodes: affected.clone(),
        coupling: 0.3,
    };
    let scenario = Scenario {
        n,
        t,
        noise_std: 1.0,
        segments: vec![
            seg(0, step, SegmentKind::Flat { level: 0.0 }),
            seg(step, ramp, SegmentKind::Step { to_level: 5.0 }),
            seg(ramp, collapse, SegmentKind::Ramp { from_level: 5.0, slope }),
            seg(collapse, t, SegmentKind::Collapse { level: 10.0, rate: 0.01 * 1500.0 / t as f64 }),
        ],
    };
    scenario.validate()?;

    let golden = std::f64::consts::PI * (3.0 - 5.0_f64.sqrt());
    let mut layout = BTreeMap::new();
    for (r, range) in bounds.iter().enumerate() {
        let phi = std::f64::consts::TAU * r as f64 / TABLE3_REGIONS as f64;
        let (cx, cy) = (10.0 * phi.cos(), 10.0 * phi.sin());
        let size = range.len() as f64;
        for (k, i) in range.clone().enumerate() {
            let rad = 3.0 * ((k as f64 + 0.5) / size).sqrt();
            let a = golden * k as f64;
            layout.insert(ids[i].clone(), [cx + rad * a.cos(), cy + rad * a.sin()]);
        }
    }
    Ok(Preset {
        scenario,
        partition: RegionPartition::new(regions, Some(layout))?,
        event_region: "A3".into(),
        step_index: step,
    })
}
