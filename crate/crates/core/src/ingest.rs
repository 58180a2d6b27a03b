//! Measurement matrices, region partitions, and window selection.
//!
//! A [`DataSource`] is the full `n × t` record (rows are nodes, columns are
//! samples). Windows are addressed by their END sample so that the window
//! ending at `e` covers columns `e-T+1 ..= e`.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How missing or non-finite cells are resolved while loading.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MissingPolicy {
    #[default]
    Error,
    ForwardFill,
    RowMean,
}

impl FromStr for MissingPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "error" => Ok(Self::Error),
            "forward-fill" => Ok(Self::ForwardFill),
            "row-mean" => Ok(Self::RowMean),
            other => Err(Error::Config(format!("unknown missing-data policy '{other}'"))),
        }
    }
}

/// The full `n × t` measurement record.
#[derive(Debug, Clone, PartialEq)]
pub struct DataSource {
    values: DMatrix<f64>,
    node_ids: Vec<String>,
    timestamps: Vec<i64>,
}

impl DataSource {
    pub fn new(values: DMatrix<f64>, node_ids: Vec<String>, timestamps: Vec<i64>) -> Result<Self> {
        let (n, t) = values.shape();
        if n < 2 || t < 2 {
            return Err(Error::Shape(format!("data source must be at least 2x2, got {n}x{t}")));
        }
        if node_ids.len() != n || timestamps.len() != t {
            return Err(Error::Shape(format!(
                "{n}x{t} values with {} node ids and {} timestamps",
                node_ids.len(),
                timestamps.len()
            )));
        }
        let mut seen = HashSet::with_capacity(n);
        for id in &node_ids {
            if !seen.insert(id.as_str()) {
                return Err(Error::Contract(format!("duplicate node id '{id}'")));
            }
        }
        if let Some((i, j)) = (0..n)
            .flat_map(|i| (0..t).map(move |j| (i, j)))
            .find(|&(i, j)| !values[(i, j)].is_finite())
        {
            return Err(Error::Contract(format!("non-finite value at ({i}, {j})")));
        }
        Ok(Self {
            values,
            node_ids,
            timestamps,
        })
    }

    /// Source with default node ids `bus-1..` and timestamps `0..t`.
    pub fn from_matrix(values: DMatrix<f64>) -> Result<Self> {
        let ids = (1..=values.nrows()).map(|i| format!("bus-{i}")).collect();
        let ts = (0..values.ncols() as i64).collect();
        Self::new(values, ids, ts)
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn t(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn node_ids(&self) -> &[String] {
        &self.node_ids
    }

    pub fn timestamps(&self) -> &[i64] {
        &self.timestamps
    }

    pub fn node_index(&self, id: &str) -> Option<usize> {
        self.node_ids.iter().position(|n| n == id)
    }

    /// Copy of the source restricted to the listed nodes, in the given order.
    pub fn select_nodes(&self, ids: &[String]) -> Result<DataSource> {
        let rows = self.resolve_rows(ids)?;
        let values = self.values.select_rows(rows.iter());
        Self::new(values, ids.to_vec(), self.timestamps.clone())
    }

    /// Copy of the source with the listed nodes removed.
    pub fn drop_nodes(&self, ids: &[String]) -> Result<DataSource> {
        let drop: HashSet<&str> = ids.iter().map(String::as_str).collect();
        let keep: Vec<String> = self
            .node_ids
            .iter()
            .filter(|id| !drop.contains(id.as_str()))
            .cloned()
            .collect();
        self.select_nodes(&keep)
    }

    fn resolve_rows(&self, ids: &[String]) -> Result<Vec<usize>> {
        let index: HashMap<&str, usize> = self
            .node_ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.as_str(), i))
            .collect();
        ids.iter()
            .map(|id| {
                index
                    .get(id.as_str())
                    .copied()
                    .ok_or_else(|| Error::Contract(format!("unknown node '{id}'")))
            })
            .collect()
    }

    /// Writes the source in the CSV layout accepted by [`load_csv`].
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = Vec::with_capacity(self.t() + 1);
        header.push("node_id".to_string());
        header.extend(self.timestamps.iter().map(|t| t.to_string()));
        w.write_record(&header)?;
        for (i, id) in self.node_ids.iter().enumerate() {
            let mut rec = Vec::with_capacity(self.t() + 1);
            rec.push(id.clone());
            rec.extend(self.values.row(i).iter().map(|v| format!("{v:?}")));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

/// Parses a node-by-sample CSV.
///
/// The header row holds the timestamps (its first cell is ignored); every
/// following row starts with a node id. Empty cells and non-finite literals
/// (`NaN`, `inf`) are treated as missing and resolved per `policy`.
pub fn load_csv(path: &Path, policy: MissingPolicy) -> Result<DataSource> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file, policy)
}

pub fn read_csv<R: std::io::Read>(reader: R, policy: MissingPolicy) -> Result<DataSource> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut records = rdr.records();

    let header = match records.next() {
        Some(r) => r?,
        None => {
            return Err(Error::MalformedInput {
                row: 1,
                col: 1,
                msg: "empty file".into(),
            })
        }
    };
    let timestamps = header
        .iter()
        .enumerate()
        .skip(1)
        .map(|(j, cell)| {
            cell.parse::<i64>().map_err(|_| Error::MalformedInput {
                row: 1,
                col: j + 1,
                msg: format!("timestamp '{cell}' is not an integer"),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let t = timestamps.len();

    let mut node_ids = Vec::new();
    let mut rows: Vec<Vec<Option<f64>>> = Vec::new();
    for (r, rec) in records.enumerate() {
        let rec = rec?;
        let line = r + 2;
        if rec.len() == 1 && rec[0].is_empty() {
            continue;
        }
        if rec.len() != t + 1 {
            return Err(Error::MalformedInput {
                row: line,
                col: rec.len(),
                msg: format!("expected {} cells, found {}", t + 1, rec.len()),
            });
        }
        let id = &rec[0];
        if id.is_empty() {
            return Err(Error::MalformedInput {
                row: line,
                col: 1,
                msg: "missing node id".into(),
            });
        }
        let mut row = Vec::with_capacity(t);
        for (j, cell) in rec.iter().enumerate().skip(1) {
            let v = if cell.is_empty() {
                None
            } else {
                let v = cell.parse::<f64>().map_err(|_| Error::MalformedInput {
                    row: line,
                    col: j + 1,
                    msg: format!("'{cell}' is not a number"),
                })?;
                v.is_finite().then_some(v)
            };
            if v.is_none() && policy == MissingPolicy::Error {
                return Err(Error::MalformedInput {
                    row: line,
                    col: j + 1,
                    msg: "missing value".into(),
                });
            }
            row.push(v);
        }
        node_ids.push(id.to_string());
        rows.push(row);
    }

    let n = rows.len();
    let mut values = DMatrix::zeros(n, t);
    for (i, row) in rows.iter().enumerate() {
        let present: Vec<f64> = row.iter().flatten().copied().collect();
        if present.is_empty() {
            return Err(Error::UnrecoverableRow {
                row: i + 2,
                node: node_ids[i].clone(),
            });
        }
        let filled = fill_row(row, policy, &present);
        for (j, v) in filled.into_iter().enumerate() {
            values[(i, j)] = v;
        }
    }

    DataSource::new(values, node_ids, timestamps).map_err(|e| match e {
        Error::Contract(msg) => Error::MalformedInput { row: 0, col: 1, msg },
        other => other,
    })
}

fn fill_row(row: &[Option<f64>], policy: MissingPolicy, present: &[f64]) -> Vec<f64> {
    match policy {
        MissingPolicy::Error => row.iter().map(|v| v.expect("checked while parsing")).collect(),
        MissingPolicy::RowMean => {
            let mean = present.iter().sum::<f64>() / present.len() as f64;
            row.iter().map(|v| v.unwrap_or(mean)).collect()
        }
        MissingPolicy::ForwardFill => {
            // Leading gaps have no left neighbour and take the first observed value.
            let mut last = present[0];
            row.iter()
                .map(|v| {
                    if let Some(v) = v {
                        last = *v;
                    }
                    last
                })
                .collect()
        }
    }
}

/// Named groups of nodes with optional planar coordinates.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RegionPartition {
    pub regions: BTreeMap<String, Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layout: Option<BTreeMap<String, [f64; 2]>>,
}

impl RegionPartition {
    pub fn new(
        regions: BTreeMap<String, Vec<String>>,
        layout: Option<BTreeMap<String, [f64; 2]>>,
    ) -> Result<Self> {
        let p = Self { regions, layout };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let mut owner: HashMap<&str, &str> = HashMap::new();
        for (name, nodes) in &self.regions {
            if nodes.is_empty() {
                return Err(Error::Config(format!("region '{name}' is empty")));
            }
            for node in nodes {
                if let Some(prev) = owner.insert(node, name) {
                    return Err(Error::Config(format!(
                        "node '{node}' is in both '{prev}' and '{name}'"
                    )));
                }
            }
        }
        if let Some(layout) = &self.layout {
            if let Some(node) = owner.keys().find(|n| !layout.contains_key(**n)) {
                return Err(Error::Config(format!("layout has no coordinates for '{node}'")));
            }
        }
        Ok(())
    }

    /// Reads the JSON form `{region: [node, ...], "layout": {node: [x, y]}}`.
    pub fn load_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let mut obj: serde_json::Map<String, serde_json::Value> = serde_json::from_str(text)?;
        let layout = match obj.remove("layout") {
            Some(v) => Some(serde_json::from_value(v)?),
            None => None,
        };
        let regions = obj
            .into_iter()
            .map(|(k, v)| Ok((k, serde_json::from_value(v)?)))
            .collect::<Result<BTreeMap<String, Vec<String>>>>()?;
        Self::new(regions, layout)
    }

    pub fn to_json(&self) -> serde_json::Value {
        let mut obj = serde_json::Map::new();
        for (k, v) in &self.regions {
            obj.insert(k.clone(), serde_json::json!(v));
        }
        if let Some(layout) = &self.layout {
            obj.insert("layout".into(), serde_json::json!(layout));
        }
        serde_json::Value::Object(obj)
    }

    pub fn region_of(&self, node: &str) -> Option<&str> {
        self.regions
            .iter()
            .find(|(_, nodes)| nodes.iter().any(|n| n == node))
            .map(|(k, _)| k.as_str())
    }
}

/// Window geometry for the moving split-window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowSpec {
    /// Window length in samples.
    pub len: usize,
    /// Samples between successive window ends.
    pub stride: usize,
    pub node_subset: Option<Vec<String>>,
    /// Product depth of the ring model.
    pub depth: usize,
}

impl WindowSpec {
    pub fn new(len: usize) -> Self {
        Self {
            len,
            stride: 1,
            node_subset: None,
            depth: 1,
        }
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.stride = stride;
        self
    }

    pub fn with_depth(mut self, depth: usize) -> Self {
        self.depth = depth;
        self
    }

    pub fn with_nodes(mut self, nodes: Vec<String>) -> Self {
        self.node_subset = Some(nodes);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.len < 2 {
            return Err(Error::Parameter(format!("window length {} < 2", self.len)));
        }
        if self.stride == 0 {
            return Err(Error::Parameter("stride must be >= 1".into()));
        }
        if self.depth == 0 {
            return Err(Error::Parameter("product depth L must be >= 1".into()));
        }
        Ok(())
    }
}

/// An `N × T` block of raw measurements.
#[derive(Debug, Clone, PartialEq)]
pub struct RawWindow {
    pub values: DMatrix<f64>,
    pub node_ids: Vec<String>,
    /// Column index (into the source) of the last sample.
    pub end_index: usize,
}

impl RawWindow {
    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn t(&self) -> usize {
        self.values.ncols()
    }

    pub fn ratio(&self) -> f64 {
        self.n() as f64 / self.t() as f64
    }
}

/// Selects columns `end_index-T+1 ..= end_index` of the chosen nodes.
pub fn window_at(src: &DataSource, spec: &WindowSpec, end_index: usize) -> Result<RawWindow> {
    spec.validate()?;
    let len = spec.len;
    if end_index + 1 < len {
        return Err(Error::InsufficientHistory {
            end_index,
            needed: len,
        });
    }
    if end_index >= src.t() {
        return Err(Error::Contract(format!(
            "window end {end_index} beyond last sample {}",
            src.t() - 1
        )));
    }
    let (rows, ids) = match &spec.node_subset {
        Some(ids) => (src.resolve_rows(ids)?, ids.clone()),
        None => ((0..src.n()).collect(), src.node_ids.clone()),
    };
    if rows.len() > len {
        return Err(Error::AspectRatio {
            n: rows.len(),
            t: len,
            region: None,
        });
    }
    let start = end_index + 1 - len;
    let values = DMatrix::from_fn(rows.len(), len, |i, j| src.values[(rows[i], start + j)]);
    Ok(RawWindow {
        values,
        node_ids: ids,
        end_index,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn source(n: usize, t: usize) -> DataSource {
        DataSource::from_matrix(DMatrix::from_fn(n, t, |i, j| (i * 1000 + j) as f64)).unwrap()
    }

    #[test]
    fn parses_small_csv() {
        let text = "node,0,1,2,3\na,1,2,3,4\nb,5,6,7,8\nc,9,10,11,12\n";
        let src = read_csv(text.as_bytes(), MissingPolicy::Error).unwrap();
        assert_eq!((src.n(), src.t()), (3, 4));
        assert_eq!(src.node_ids(), ["a", "b", "c"]);
        assert_eq!(src.values()[(2, 3)], 12.0);
    }

    #[test]
    fn forward_fill_takes_left_neighbour() {
        let text = "node,0,1,2\na,1,,3\nb,,5,6\n";
        let src = read_csv(text.as_bytes(), MissingPolicy::ForwardFill).unwrap();
        assert_eq!(src.values()[(0, 1)], 1.0);
        assert_eq!(src.values()[(1, 0)], 5.0);
    }

    #[test]
    fn row_mean_fills_gaps() {
        let text = "node,0,1,2\na,1,NaN,3\nb,4,5,6\n";
        let src = read_csv(text.as_bytes(), MissingPolicy::RowMean).unwrap();
        assert_eq!(src.values()[(0, 1)], 2.0);
    }

    #[test]
    fn missing_cell_under_error_policy() {
        let text = "node,0,1\na,1,\nb,2,3\n";
        let err = read_csv(text.as_bytes(), MissingPolicy::Error).unwrap_err();
        assert!(matches!(err, Error::MalformedInput { row: 2, col: 3, .. }), "{err}");
    }

    #[test]
    fn blank_node_id_is_malformed() {
        let text = "node,0,1\n,1,2\nb,2,3\n";
        let err = read_csv(text.as_bytes(), MissingPolicy::Error).unwrap_err();
        assert!(matches!(err, Error::MalformedInput { row: 2, col: 1, .. }), "{err}");
    }

    #[test]
    fn garbage_cell_reports_location() {
        let text = "node,0,1\na,1,x\nb,2,3\n";
        let err = read_csv(text.as_bytes(), MissingPolicy::RowMean).unwrap_err();
        assert!(matches!(err, Error::MalformedInput { row: 2, col: 3, .. }), "{err}");
    }

    #[test]
    fn all_missing_row_is_unrecoverable() {
        for policy in [MissingPolicy::ForwardFill, MissingPolicy::RowMean] {
            let text = "node,0,1\na,,\nb,2,3\n";
            let err = read_csv(text.as_bytes(), policy).unwrap_err();
            assert!(matches!(err, Error::UnrecoverableRow { .. }), "{err}");
        }
    }

    #[test]
    fn window_columns_are_end_inclusive() {
        let src = source(3, 1500);
        let w = window_at(&src, &WindowSpec::new(240), 599).unwrap();
        assert_eq!(w.t(), 240);
        assert_eq!(w.values[(0, 0)], 360.0);
        assert_eq!(w.values[(0, 239)], 599.0);
    }

    #[test]
    fn full_span_window() {
        let src = source(3, 10);
        let w = window_at(&src, &WindowSpec::new(10), 9).unwrap();
        assert_eq!(&w.values, src.values());
    }

    #[test]
    fn insufficient_history() {
        let src = source(3, 100);
        let err = window_at(&src, &WindowSpec::new(10), 8).unwrap_err();
        assert!(matches!(err, Error::InsufficientHistory { .. }));
    }

    #[test]
    fn aspect_ratio_enforced() {
        let src = source(12, 100);
        let err = window_at(&src, &WindowSpec::new(10), 50).unwrap_err();
        assert!(matches!(err, Error::AspectRatio { n: 12, t: 10, .. }));
    }

    #[test]
    fn stride_one_windows_overlap() {
        let src = source(2, 50);
        let spec = WindowSpec::new(20);
        let a = window_at(&src, &spec, 30).unwrap();
        let b = window_at(&src, &spec, 31).unwrap();
        assert_eq!(a.values.columns(1, 19), b.values.columns(0, 19));
    }

    #[test]
    fn subset_then_window_equals_window_then_rows() {
        let src = source(5, 40);
        let ids = vec!["bus-4".to_string(), "bus-2".to_string()];
        let a = window_at(&src, &WindowSpec::new(10).with_nodes(ids.clone()), 25).unwrap();
        let b = window_at(&src.select_nodes(&ids).unwrap(), &WindowSpec::new(10), 25).unwrap();
        let full = window_at(&src, &WindowSpec::new(10), 25).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.values.row(0), full.values.row(3));
    }

    #[test]
    fn partition_json_roundtrip() {
        let text = r#"{"A1": ["a", "b"], "A2": ["c"], "layout": {"a": [0,0], "b": [1,0], "c": [0,1]}}"#;
        let p = RegionPartition::from_json(text).unwrap();
        assert_eq!(p.regions.len(), 2);
        assert_eq!(p.region_of("c"), Some("A2"));
        let again = RegionPartition::from_json(&p.to_json().to_string()).unwrap();
        assert_eq!(p, again);
    }

    #[test]
    fn partition_rejects_overlap_and_gaps() {
        assert!(RegionPartition::from_json(r#"{"A": ["a"], "B": ["a"]}"#).is_err());
        assert!(RegionPartition::from_json(r#"{"A": []}"#).is_err());
        assert!(RegionPartition::from_json(r#"{"A": ["a"], "layout": {}}"#).is_err());
    }

    #[test]
    fn duplicate_ids_rejected() {
        let text = "node,0,1\na,1,2\na,2,3\n";
        assert!(read_csv(text.as_bytes(), MissingPolicy::Error).is_err());
    }
}
