//! CSV ingestion and export, model persistence and configuration files.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::eval::MetricRow;
use crate::forest::{Forest, ForestConfig};
use crate::importance::ImportanceReport;
use crate::loss::{QuantileProcess, TauGrid};
use crate::survival::StepSurvival;
use crate::tree::{Leaf, Node, Tree};

/// Version tag of the model document.
pub const MODEL_VERSION: &str = "gcqrf-model/1";

/// Serde adapter writing non-finite floats as the strings `"inf"`, `"-inf"`, `"nan"`.
pub(crate) mod ext_f64 {
    use serde::{de, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if v.is_nan() {
            s.serialize_str("nan")
        } else if *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Text(String),
        }
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) => match t.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                other => Err(de::Error::custom(format!("unexpected number {other:?}"))),
            },
        }
    }
}

/// Which CSV columns hold the observed time and the event indicator.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CsvSchema {
    pub y_col: String,
    pub delta_col: String,
}

impl Default for CsvSchema {
    fn default() -> Self {
        Self {
            y_col: "y".into(),
            delta_col: "delta".into(),
        }
    }
}

fn csv_err(e: csv::Error) -> Error {
    let row = e.position().map_or(0, |p| p.record() as usize);
    Error::parse(row, "", e.to_string())
}

/// Reads a dataset with a header row. Every column other than the two named in
/// `schema` becomes a feature, in file order. Parse errors report the 1-based
/// data row (0 for the header).
pub fn read_csv(path: &Path, schema: &CsvSchema) -> Result<Dataset> {
    read_csv_from(BufReader::new(File::open(path)?), schema)
}

pub fn read_csv_from<R: Read>(reader: R, schema: &CsvSchema) -> Result<Dataset> {
    let table = read_table_from(reader)?;
    let (yi, di) = (table.index_of(&schema.y_col)?, table.index_of(&schema.delta_col)?);
    let delta = table.columns[di]
        .iter()
        .enumerate()
        .map(|(r, &v)| match v {
            0.0 => Ok(false),
            1.0 => Ok(true),
            _ => Err(Error::parse(r + 1, schema.delta_col.clone(), format!("event indicator must be 0 or 1, got {v}"))),
        })
        .collect::<Result<Vec<_>>>()?;
    let y = table.columns[yi].clone();
    let (mut names, mut columns) = (Vec::new(), Vec::new());
    for (j, (h, c)) in table.headers.into_iter().zip(table.columns).enumerate() {
        if j != yi && j != di {
            names.push(h);
            columns.push(c);
        }
    }
    Dataset::new(columns, names, y, delta)
}

/// A numeric CSV table with a header row, stored by column.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub headers: Vec<String>,
    pub columns: Vec<Vec<f64>>,
}

impl Table {
    pub fn index_of(&self, name: &str) -> Result<usize> {
        self.headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::parse(0, name, "column not found"))
    }

    pub fn n_rows(&self) -> usize {
        self.columns.first().map_or(0, |c| c.len())
    }
}

pub fn read_table(path: &Path) -> Result<Table> {
    read_table_from(BufReader::new(File::open(path)?))
}

/// Reads a table of finite numbers. Errors report the 1-based data row.
pub fn read_table_from<R: Read>(reader: R) -> Result<Table> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers: Vec<String> = rdr.headers().map_err(csv_err)?.iter().map(|h| h.trim().to_string()).collect();
    if headers.is_empty() || headers.iter().all(|h| h.is_empty()) {
        return Err(Error::parse(0, "", "missing header row"));
    }
    let mut columns: Vec<Vec<f64>> = vec![Vec::new(); headers.len()];
    for (r, rec) in rdr.records().enumerate() {
        let row = r + 1;
        let rec = rec.map_err(csv_err)?;
        if rec.len() != headers.len() {
            return Err(Error::parse(row, "", format!("expected {} fields, found {}", headers.len(), rec.len())));
        }
        for (j, cell) in rec.iter().enumerate() {
            columns[j].push(parse_cell(row, &headers[j], cell)?);
        }
    }
    if columns[0].is_empty() {
        return Err(Error::parse(0, "", "no data rows"));
    }
    Ok(Table { headers, columns })
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    Ok(BufWriter::new(File::create(path)?))
}

fn csv_writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().from_writer(w)
}

fn finish<W: Write>(mut w: csv::Writer<W>) -> Result<()> {
    w.flush()?;
    Ok(())
}

fn fmt_f64(v: f64) -> String {
    // shortest round-trip representation
    format!("{v:?}")
}

/// Writes features, then `y` and `delta` (as 0/1).
pub fn write_dataset_csv<W: Write>(w: W, data: &Dataset) -> Result<()> {
    let mut out = csv_writer(w);
    let mut header: Vec<String> = data.names().to_vec();
    header.push("y".into());
    header.push("delta".into());
    out.write_record(&header).map_err(csv_err)?;
    for i in 0..data.n() {
        let mut rec: Vec<String> = (0..data.p()).map(|j| fmt_f64(data.value(i, j))).collect();
        rec.push(fmt_f64(data.y()[i]));
        rec.push(if data.delta()[i] { "1" } else { "0" }.into());
        out.write_record(&rec).map_err(csv_err)?;
    }
    finish(out)
}

pub fn save_dataset_csv(path: &Path, data: &Dataset) -> Result<()> {
    write_dataset_csv(create(path)?, data)
}

/// Column name of a quantile level, e.g. `q_0.05`.
pub fn level_column(tau: f64) -> String {
    format!("q_{}", fmt_f64(tau))
}

/// One row per prediction: `row`, then one `q_<tau>` column per level.
pub fn write_predictions_csv<W: Write>(w: W, preds: &[QuantileProcess]) -> Result<()> {
    let grid = preds
        .first()
        .map(|p| p.grid.clone())
        .ok_or_else(|| Error::BadInput("no predictions to write".into()))?;
    let mut out = csv_writer(w);
    let mut header = vec!["row".to_string()];
    header.extend(grid.levels().iter().map(|&t| level_column(t)));
    out.write_record(&header).map_err(csv_err)?;
    for (i, p) in preds.iter().enumerate() {
        if p.grid != grid {
            return Err(Error::BadInput("predictions use different tau grids".into()));
        }
        let mut rec = vec![i.to_string()];
        rec.extend(p.values.iter().map(|&v| fmt_f64(v)));
        out.write_record(&rec).map_err(csv_err)?;
    }
    finish(out)
}

pub fn save_predictions_csv(path: &Path, preds: &[QuantileProcess]) -> Result<()> {
    write_predictions_csv(create(path)?, preds)
}

fn parse_cell(row: usize, column: &str, cell: &str) -> Result<f64> {
    let v: f64 = cell
        .trim()
        .parse()
        .map_err(|_| Error::parse(row, column, format!("not a number: {cell:?}")))?;
    if !v.is_finite() {
        return Err(Error::parse(row, column, format!("not finite: {cell:?}")));
    }
    Ok(v)
}

/// Reads the output of [`write_predictions_csv`].
pub fn read_predictions_csv<R: Read>(reader: R) -> Result<Vec<QuantileProcess>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers: Vec<String> = rdr.headers().map_err(csv_err)?.iter().map(String::from).collect();
    if headers.first().map(String::as_str) != Some("row") || headers.len() < 2 {
        return Err(Error::parse(0, "row", "expected a row column followed by q_<tau> columns"));
    }
    let mut levels = Vec::new();
    for h in &headers[1..] {
        let t = h
            .strip_prefix("q_")
            .and_then(|t| t.parse::<f64>().ok())
            .ok_or_else(|| Error::parse(0, h.clone(), "expected q_<tau>"))?;
        levels.push(t);
    }
    let grid = TauGrid::new(levels).map_err(|e| Error::parse(0, "", e.to_string()))?;
    let mut out = Vec::new();
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let values = (1..headers.len())
            .map(|j| parse_cell(r + 1, &headers[j], rec.get(j).unwrap_or("")))
            .collect::<Result<Vec<_>>>()?;
        out.push(QuantileProcess::new(grid.clone(), values)?);
    }
    if out.is_empty() {
        return Err(Error::parse(0, "", "no prediction rows"));
    }
    Ok(out)
}

/// True quantiles in long form: `row, tau, quantile, t_true`.
pub fn write_oracle_csv<W: Write>(w: W, grid: &TauGrid, quantiles: &[Vec<f64>], t_true: &[f64]) -> Result<()> {
    if quantiles.len() != t_true.len() {
        return Err(Error::BadInput("oracle rows differ from true times".into()));
    }
    let mut out = csv_writer(w);
    out.write_record(["row", "tau", "quantile", "t_true"]).map_err(csv_err)?;
    for (i, (q, &t)) in quantiles.iter().zip(t_true).enumerate() {
        for (&tau, &v) in grid.levels().iter().zip(q) {
            out.write_record([i.to_string(), fmt_f64(tau), fmt_f64(v), fmt_f64(t)])
                .map_err(csv_err)?;
        }
    }
    finish(out)
}

/// Oracle quantiles per row and the true event times, as read back from
/// [`write_oracle_csv`].
#[derive(Debug, Clone, PartialEq)]
pub struct Oracle {
    pub quantiles: Vec<QuantileProcess>,
    pub t_true: Vec<f64>,
}

pub fn read_oracle_csv<R: Read>(reader: R) -> Result<Oracle> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers: Vec<String> = rdr.headers().map_err(csv_err)?.iter().map(String::from).collect();
    if headers != ["row", "tau", "quantile", "t_true"] {
        return Err(Error::parse(0, "", "expected columns row, tau, quantile, t_true"));
    }
    let mut rows: Vec<(Vec<f64>, Vec<f64>, f64)> = Vec::new();
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let line = r + 1;
        let id: usize = rec
            .get(0)
            .unwrap_or("")
            .trim()
            .parse()
            .map_err(|_| Error::parse(line, "row", "not a row index"))?;
        let tau = parse_cell(line, "tau", rec.get(1).unwrap_or(""))?;
        let q = parse_cell(line, "quantile", rec.get(2).unwrap_or(""))?;
        let t = parse_cell(line, "t_true", rec.get(3).unwrap_or(""))?;
        if id == rows.len() {
            rows.push((Vec::new(), Vec::new(), t));
        } else if id + 1 != rows.len() {
            return Err(Error::parse(line, "row", "rows must be contiguous and ascending"));
        }
        let entry = rows.last_mut().expect("row pushed above");
        entry.0.push(tau);
        entry.1.push(q);
    }
    let first = rows.first().ok_or_else(|| Error::parse(0, "", "no oracle rows"))?;
    let grid = TauGrid::new(first.0.clone()).map_err(|e| Error::parse(1, "tau", e.to_string()))?;
    let mut quantiles = Vec::with_capacity(rows.len());
    let mut t_true = Vec::with_capacity(rows.len());
    for (i, (levels, q, t)) in rows.into_iter().enumerate() {
        if levels != grid.levels() {
            return Err(Error::parse(i + 1, "tau", "every row needs the same tau levels"));
        }
        quantiles.push(QuantileProcess::new(grid.clone(), q)?);
        t_true.push(t);
    }
    Ok(Oracle { quantiles, t_true })
}

/// One row per (group, fold): `group, fold, delta, mean_delta, rank`.
pub fn write_importance_csv<W: Write>(w: W, report: &ImportanceReport) -> Result<()> {
    let mut out = csv_writer(w);
    out.write_record(["group", "fold", "delta", "mean_delta", "rank"])
        .map_err(csv_err)?;
    for (g, name) in report.group_names.iter().enumerate() {
        for (k, row) in report.per_fold_deltas.iter().enumerate() {
            out.write_record([
                name.clone(),
                k.to_string(),
                fmt_f64(row[g]),
                fmt_f64(report.mean_delta[g]),
                report.rank[g].to_string(),
            ])
            .map_err(csv_err)?;
        }
    }
    finish(out)
}

/// `setting, snr, method, metric, value, seed`.
pub fn write_metrics_csv<W: Write>(w: W, rows: &[MetricRow]) -> Result<()> {
    let mut out = csv_writer(w);
    out.write_record(["setting", "snr", "method", "metric", "value", "seed"])
        .map_err(csv_err)?;
    for r in rows {
        out.write_record([
            r.setting.clone(),
            fmt_f64(r.snr),
            r.method.clone(),
            r.metric.clone(),
            fmt_f64(r.value),
            r.seed.to_string(),
        ])
        .map_err(csv_err)?;
    }
    finish(out)
}

#[derive(Serialize, Deserialize)]
struct ModelDoc {
    version: String,
    config: ForestConfig,
    #[serde(with = "ext_f64")]
    u: f64,
    feature_names: Vec<String>,
    trees: Vec<TreeDoc>,
}

#[derive(Serialize, Deserialize)]
struct TreeDoc {
    subsample: Vec<usize>,
    nodes: Vec<NodeDoc>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum NodeDoc {
    Internal {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        times: Vec<f64>,
        increments: Vec<f64>,
        n_at_risk: Vec<usize>,
        member_times: Vec<f64>,
        member_events: Vec<bool>,
    },
}

fn node_doc(node: &Node) -> NodeDoc {
    match node {
        Node::Internal {
            feature,
            threshold,
            left,
            right,
        } => NodeDoc::Internal {
            feature: *feature,
            threshold: *threshold,
            left: *left,
            right: *right,
        },
        Node::Leaf(l) => NodeDoc::Leaf {
            times: l.fit.times().to_vec(),
            increments: l.fit.increments().to_vec(),
            n_at_risk: l.fit.n_at_risk().to_vec(),
            member_times: l.member_times.clone(),
            member_events: l.member_events.clone(),
        },
    }
}

fn node_from_doc(doc: NodeDoc) -> Result<Node> {
    Ok(match doc {
        NodeDoc::Internal {
            feature,
            threshold,
            left,
            right,
        } => Node::Internal {
            feature,
            threshold,
            left,
            right,
        },
        NodeDoc::Leaf {
            times,
            increments,
            n_at_risk,
            member_times,
            member_events,
        } => {
            if member_times.len() != member_events.len() || member_times.is_empty() {
                return Err(Error::parse(0, "member_times", "leaf members are inconsistent"));
            }
            Node::Leaf(Leaf {
                fit: StepSurvival::from_parts(times, increments, n_at_risk)?,
                member_times,
                member_events,
            })
        }
    })
}

fn json_err(e: serde_json::Error) -> Error {
    Error::parse(e.line(), format!("char {}", e.column()), e.to_string())
}

/// Serializes a forest as a JSON document with full-precision floats.
pub fn model_to_json(forest: &Forest) -> Result<String> {
    let doc = ModelDoc {
        version: MODEL_VERSION.into(),
        config: forest.config.clone(),
        u: forest.u_resolved,
        feature_names: forest.feature_names.clone(),
        trees: forest
            .trees
            .iter()
            .zip(&forest.subsample_indices)
            .map(|(t, s)| TreeDoc {
                subsample: s.clone(),
                nodes: t.nodes().iter().map(node_doc).collect(),
            })
            .collect(),
    };
    serde_json::to_string(&doc).map_err(json_err)
}

pub fn model_from_json(text: &str) -> Result<Forest> {
    let value: serde_json::Value = serde_json::from_str(text).map_err(json_err)?;
    match value.get("version").and_then(|v| v.as_str()) {
        Some(MODEL_VERSION) => {}
        Some(other) => return Err(Error::UnsupportedVersion(other.into())),
        None => return Err(Error::parse(0, "version", "missing model version")),
    }
    let doc: ModelDoc = serde_json::from_value(value).map_err(|e| Error::parse(0, "", e.to_string()))?;
    if doc.feature_names.is_empty() && doc.trees.is_empty() {
        return Err(Error::parse(0, "trees", "model has no trees"));
    }
    let p = doc.feature_names.len();
    let mut trees = Vec::with_capacity(doc.trees.len());
    let mut subsample_indices = Vec::with_capacity(doc.trees.len());
    for t in doc.trees {
        let nodes = t.nodes.into_iter().map(node_from_doc).collect::<Result<Vec<_>>>()?;
        trees.push(Tree::from_nodes(nodes, p).map_err(|e| Error::parse(0, "nodes", e.to_string()))?);
        subsample_indices.push(t.subsample);
    }
    if trees.is_empty() {
        return Err(Error::parse(0, "trees", "model has no trees"));
    }
    Ok(Forest {
        trees,
        subsample_indices,
        config: doc.config,
        u_resolved: doc.u,
        feature_names: doc.feature_names,
    })
}

pub fn save_model(forest: &Forest, path: &Path) -> Result<()> {
    let mut w = create(path)?;
    w.write_all(model_to_json(forest)?.as_bytes())?;
    w.flush()?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<Forest> {
    model_from_json(&std::fs::read_to_string(path)?)
}

/// Reads a JSON forest configuration; absent fields take their defaults.
pub fn read_config(path: &Path) -> Result<ForestConfig> {
    let text = std::fs::read_to_string(path)?;
    config_from_json(&text)
}

pub fn config_from_json(text: &str) -> Result<ForestConfig> {
    serde_json::from_str(text).map_err(json_err)
}

pub fn config_to_json(cfg: &ForestConfig) -> Result<String> {
    serde_json::to_string_pretty(cfg).map_err(json_err)
}
