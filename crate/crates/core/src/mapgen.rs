//! Planar map frames by inverse-distance weighting.
//!
//! A grid cell at `g` takes `Σ wᵢ vᵢ / Σ wᵢ` with `wᵢ = ‖g - xᵢ‖^{-p}`, or the
//! node value itself when it lies within `1e-9` of a node. The result is a
//! convex combination, so every cell stays inside the range of node values.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detect::{IndicatorRow, ALL};
use crate::error::{Error, Result};
use crate::ingest::RegionPartition;

pub type Layout = BTreeMap<String, [f64; 2]>;

pub const EXACT_RADIUS: f64 = 1e-9;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Quantity {
    /// `τ / E`.
    Eta,
    /// `τ` itself.
    Raw,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub xmin: f64,
    pub xmax: f64,
    pub ymin: f64,
    pub ymax: f64,
}

impl Bounds {
    /// Extent of the layout, padded by 5% per side (1 unit when flat).
    pub fn of(layout: &Layout) -> Result<Self> {
        let mut it = layout.values();
        let first = it
            .next()
            .ok_or_else(|| Error::Config("layout is empty".into()))?;
        let mut b = Bounds {
            xmin: first[0],
            xmax: first[0],
            ymin: first[1],
            ymax: first[1],
        };
        for p in it {
            b.xmin = b.xmin.min(p[0]);
            b.xmax = b.xmax.max(p[0]);
            b.ymin = b.ymin.min(p[1]);
            b.ymax = b.ymax.max(p[1]);
        }
        let pad = |lo: f64, hi: f64| if hi > lo { 0.05 * (hi - lo) } else { 1.0 };
        let (px, py) = (pad(b.xmin, b.xmax), pad(b.ymin, b.ymax));
        Ok(Bounds {
            xmin: b.xmin - px,
            xmax: b.xmax + px,
            ymin: b.ymin - py,
            ymax: b.ymax + py,
        })
    }

    /// Centre of cell `(row, col)` on a `g × g` grid; rows run along `y`.
    pub fn cell(&self, g: usize, row: usize, col: usize) -> [f64; 2] {
        let step = |lo: f64, hi: f64, k: usize| {
            if g == 1 {
                0.5 * (lo + hi)
            } else {
                lo + (hi - lo) * k as f64 / (g - 1) as f64
            }
        };
        [step(self.xmin, self.xmax, col), step(self.ymin, self.ymax, row)]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapFrame {
    pub t: usize,
    pub quantity: Quantity,
    pub bounds: Bounds,
    /// `grid[row][col]`, row-major in `y`.
    pub grid: Vec<Vec<f64>>,
}

/// IDW value at `at` from `(position, value)` pairs.
pub fn idw(points: &[([f64; 2], f64)], at: [f64; 2], power: f64) -> f64 {
    // Offsets from the first value keep constant fields exact.
    let base = points.first().map_or(0.0, |p| p.1);
    let mut num = 0.0;
    let mut den = 0.0;
    for (pos, v) in points {
        let d = (pos[0] - at[0]).hypot(pos[1] - at[1]);
        if d <= EXACT_RADIUS {
            return *v;
        }
        let w = d.powf(-power);
        num += w * (v - base);
        den += w;
    }
    base + num / den
}

fn node_points(values: &BTreeMap<String, f64>, layout: &Layout) -> Result<Vec<([f64; 2], f64)>> {
    if values.is_empty() {
        return Err(Error::Contract("no node values to interpolate".into()));
    }
    values
        .iter()
        .map(|(id, &v)| {
            layout
                .get(id)
                .map(|&p| (p, v))
                .ok_or_else(|| Error::Config(format!("layout has no position for node '{id}'")))
        })
        .collect()
}

/// Frame over explicit bounds.
pub fn frame_in(
    values: &BTreeMap<String, f64>,
    layout: &Layout,
    bounds: Bounds,
    grid: usize,
    power: f64,
    t: usize,
    quantity: Quantity,
) -> Result<MapFrame> {
    if grid == 0 {
        return Err(Error::Parameter("grid size must be >= 1".into()));
    }
    if !(power > 0.0) {
        return Err(Error::Parameter(format!("IDW power {power} must be > 0")));
    }
    let points = node_points(values, layout)?;
    let grid = (0..grid)
        .map(|r| (0..grid).map(|c| idw(&points, bounds.cell(grid, r, c), power)).collect())
        .collect();
    Ok(MapFrame {
        t,
        quantity,
        bounds,
        grid,
    })
}

/// Frame over the layout's own bounds.
pub fn frame(values: &BTreeMap<String, f64>, layout: &Layout, grid: usize, power: f64) -> Result<MapFrame> {
    frame_in(values, layout, Bounds::of(layout)?, grid, power, 0, Quantity::Eta)
}

/// Layout file: either a bare `{node: [x, y]}` map or a partition file with
/// a `"layout"` key (whose regions are returned too).
pub fn load_layout(path: &Path) -> Result<(Layout, Option<RegionPartition>)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let value: serde_json::Value = serde_json::from_str(&text)?;
    if value.get("layout").is_some() {
        let p = RegionPartition::from_json(&text)?;
        let layout = p.layout.clone().expect("layout key present");
        Ok((layout, Some(p)))
    } else {
        Ok((serde_json::from_value(value)?, None))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderConfig {
    pub function: String,
    pub quantity: Quantity,
    pub grid: usize,
    pub power: f64,
    pub stride: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub t: usize,
    pub file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    #[serde(flatten)]
    pub config: RenderConfig,
    pub bounds: Bounds,
    pub frames: Vec<ManifestEntry>,
}

/// Node values at each window end: a node takes its region's value, or the
/// whole-system value when its region has no series.
pub fn node_values(
    rows: &[IndicatorRow],
    cfg: &RenderConfig,
    layout: &Layout,
    partition: Option<&RegionPartition>,
) -> BTreeMap<usize, BTreeMap<String, f64>> {
    let mut by_t: BTreeMap<usize, BTreeMap<&str, f64>> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.function == cfg.function) {
        let v = match cfg.quantity {
            Quantity::Eta => r.eta,
            Quantity::Raw => Some(r.tau),
        };
        if let Some(v) = v {
            by_t.entry(r.t).or_default().insert(r.region.as_str(), v);
        }
    }
    by_t.into_iter()
        .map(|(t, regions)| {
            let nodes = layout
                .keys()
                .filter_map(|id| {
                    let region = partition.and_then(|p| p.region_of(id));
                    region
                        .and_then(|r| regions.get(r))
                        .or_else(|| regions.get(ALL))
                        .map(|&v| (id.clone(), v))
                })
                .collect();
            (t, nodes)
        })
        .collect()
}

/// Writes `frame_<t>.json` for every `stride`-th window end, then the
/// manifest. Returns the frame paths in order.
pub fn render_run(
    rows: &[IndicatorRow],
    layout: Option<&Layout>,
    partition: Option<&RegionPartition>,
    cfg: &RenderConfig,
    out: &Path,
) -> Result<Vec<PathBuf>> {
    let layout = layout.ok_or_else(|| Error::Config("map frames need a node layout".into()))?;
    if cfg.stride == 0 {
        return Err(Error::Parameter("frame stride must be >= 1".into()));
    }
    let bounds = Bounds::of(layout)?;
    let values = node_values(rows, cfg, layout, partition);
    if values.is_empty() {
        return Err(Error::Contract(format!(
            "no {} values for function '{}'",
            serde_json::to_string(&cfg.quantity)?,
            cfg.function
        )));
    }
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let selected: Vec<(&usize, &BTreeMap<String, f64>)> = values.iter().step_by(cfg.stride).collect();
    let entries = selected
        .par_iter()
        .map(|&(&t, v)| {
            let f = frame_in(v, layout, bounds, cfg.grid, cfg.power, t, cfg.quantity)?;
            let name = format!("frame_{t:06}.json");
            let path = out.join(&name);
            std::fs::write(&path, serde_json::to_string(&f)? + "\n").map_err(|e| Error::io(&path, e))?;
            Ok((ManifestEntry { t, file: name }, path))
        })
        .collect::<Result<Vec<_>>>()?;
    let (frames, paths): (Vec<_>, Vec<_>) = entries.into_iter().unzip();
    let manifest = Manifest {
        config: cfg.clone(),
        bounds,
        frames,
    };
    let mpath = out.join(MANIFEST_FILE);
    std::fs::write(&mpath, serde_json::to_string_pretty(&manifest)? + "\n").map_err(|e| Error::io(&mpath, e))?;
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn layout(points: &[(&str, f64, f64)]) -> Layout {
        points.iter().map(|&(id, x, y)| (id.to_string(), [x, y])).collect()
    }

    fn values(v: &[(&str, f64)]) -> BTreeMap<String, f64> {
        v.iter().map(|&(id, x)| (id.to_string(), x)).collect()
    }

    #[test]
    fn single_node_is_constant() {
        let l = layout(&[("a", 1.0, 2.0)]);
        let f = frame(&values(&[("a", 3.5)]), &l, 9, 2.0).unwrap();
        assert!(f.grid.iter().flatten().all(|&v| v == 3.5));
    }

    #[test]
    fn exact_at_nodes() {
        let l = layout(&[("a", 0.0, 0.0), ("b", 1.0, 1.0), ("c", 0.0, 1.0)]);
        let v = values(&[("a", -2.0), ("b", 5.0), ("c", 1.0)]);
        let b = Bounds {
            xmin: 0.0,
            xmax: 1.0,
            ymin: 0.0,
            ymax: 1.0,
        };
        let f = frame_in(&v, &l, b, 11, 2.0, 0, Quantity::Eta).unwrap();
        assert_eq!(f.grid[0][0], -2.0);
        assert_eq!(f.grid[10][10], 5.0);
        assert_eq!(f.grid[10][0], 1.0);
    }

    #[test]
    fn two_nodes_bounded() {
        let l = layout(&[("a", 0.0, 0.0), ("b", 3.0, 1.0)]);
        let f = frame(&values(&[("a", 0.0), ("b", 1.0)]), &l, 32, 2.0).unwrap();
        assert!(f.grid.iter().flatten().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn errors() {
        let l = layout(&[("a", 0.0, 0.0)]);
        assert!(matches!(frame(&BTreeMap::new(), &l, 4, 2.0), Err(Error::Contract(_))));
        assert!(matches!(frame(&values(&[("z", 1.0)]), &l, 4, 2.0), Err(Error::Config(_))));
        let rows = vec![];
        let cfg = RenderConfig {
            function: "MSR".into(),
            quantity: Quantity::Eta,
            grid: 4,
            power: 2.0,
            stride: 1,
        };
        assert!(matches!(render_run(&rows, None, None, &cfg, Path::new("/nonexistent")), Err(Error::Config(_))));
    }

    fn rows(ts: &[usize], eta: f64) -> Vec<IndicatorRow> {
        ts.iter()
            .flat_map(|&t| {
                ["A", "B"].map(|r| IndicatorRow {
                    t,
                    region: r.into(),
                    function: "MSR".into(),
                    tau: eta * 0.9,
                    eta: Some(if r == "A" { eta } else { 1.0 }),
                    flag: "normal".into(),
                })
            })
            .collect()
    }

    fn partition() -> RegionPartition {
        let mut regions = BTreeMap::new();
        regions.insert("A".to_string(), vec!["a1".to_string(), "a2".to_string()]);
        regions.insert("B".to_string(), vec!["b1".to_string()]);
        let l = layout(&[("a1", 0.0, 0.0), ("a2", 1.0, 0.0), ("b1", 5.0, 5.0)]);
        RegionPartition::new(regions, Some(l)).unwrap()
    }

    #[test]
    fn stride_equal_to_length_gives_one_frame() {
        let p = partition();
        let cfg = RenderConfig {
            function: "MSR".into(),
            quantity: Quantity::Eta,
            grid: 8,
            power: 2.0,
            stride: 5,
        };
        let dir = tempfile::tempdir().unwrap();
        let paths = render_run(&rows(&[10, 11, 12, 13, 14], 0.7), p.layout.as_ref(), Some(&p), &cfg, dir.path()).unwrap();
        assert_eq!(paths.len(), 1);
        let m: Manifest = serde_json::from_str(&std::fs::read_to_string(dir.path().join(MANIFEST_FILE)).unwrap()).unwrap();
        assert_eq!(m.frames[0].t, 10);
        let f: MapFrame = serde_json::from_str(&std::fs::read_to_string(&paths[0]).unwrap()).unwrap();
        assert_eq!(f.bounds, m.bounds);
    }

    #[test]
    fn constant_eta_gives_identical_frames() {
        let p = partition();
        let cfg = RenderConfig {
            function: "MSR".into(),
            quantity: Quantity::Eta,
            grid: 8,
            power: 2.0,
            stride: 1,
        };
        let dir = tempfile::tempdir().unwrap();
        let paths = render_run(&rows(&[3, 4, 5], 0.8), p.layout.as_ref(), Some(&p), &cfg, dir.path()).unwrap();
        let grids: Vec<String> = paths
            .iter()
            .map(|p| {
                let f: MapFrame = serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap();
                serde_json::to_string(&f.grid).unwrap()
            })
            .collect();
        assert!(grids.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn region_values_reach_their_nodes() {
        let p = partition();
        let cfg = RenderConfig {
            function: "MSR".into(),
            quantity: Quantity::Eta,
            grid: 8,
            power: 2.0,
            stride: 1,
        };
        let v = node_values(&rows(&[0], 0.5), &cfg, p.layout.as_ref().unwrap(), Some(&p));
        assert_eq!(v[&0]["a1"], 0.5);
        assert_eq!(v[&0]["b1"], 1.0);
    }

    mod props {
        use super::super::*;
        use proptest::prelude::*;

        fn cloud() -> impl Strategy<Value = Vec<(f64, f64, f64)>> {
            prop::collection::vec((-10.0f64..10.0, -10.0f64..10.0, -5.0f64..5.0), 1..8)
        }

        proptest! {
            #[test]
            fn idw_is_bounded_and_exact(pts in cloud(), qx in -12.0f64..12.0, qy in -12.0f64..12.0) {
                let points: Vec<([f64; 2], f64)> = pts.iter().map(|&(x, y, v)| ([x, y], v)).collect();
                let lo = pts.iter().map(|p| p.2).fold(f64::INFINITY, f64::min);
                let hi = pts.iter().map(|p| p.2).fold(f64::NEG_INFINITY, f64::max);
                let v = idw(&points, [qx, qy], 2.0);
                prop_assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
                let (x, y, val) = pts[0];
                let first_hit = points.iter().find(|(p, _)| (p[0] - x).hypot(p[1] - y) <= EXACT_RADIUS).unwrap().1;
                prop_assert_eq!(idw(&points, [x, y], 2.0), first_hit);
                let _ = val;
            }

            #[test]
            fn idw_is_continuous_away_from_nodes(pts in cloud(), qx in -12.0f64..12.0, qy in -12.0f64..12.0) {
                let points: Vec<([f64; 2], f64)> = pts.iter().map(|&(x, y, v)| ([x, y], v)).collect();
                let near = pts.iter().map(|&(x, y, _)| (x - qx).hypot(y - qy)).fold(f64::INFINITY, f64::min);
                prop_assume!(near > 1e-2);
                let h = 1e-7;
                let a = idw(&points, [qx, qy], 2.0);
                let b = idw(&points, [qx + h, qy - h], 2.0);
                prop_assert!((a - b).abs() < 1e-3);
            }
        }
    }
}
