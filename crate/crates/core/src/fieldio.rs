//! Scalar field datasets on unstructured 2-D node sets: validation, CSV
//! ingestion and export, and z-score normalization.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gridalign::InterpMethod;

/// A 2-D node position `[x, y]`.
pub type Node = [f64; 2];

/// Coordinates closer than this are treated as the same node.
pub const DUPLICATE_TOLERANCE: f64 = 1e-12;

fn node_key(node: &Node) -> (u64, u64) {
    // `+ 0.0` folds -0.0 into 0.0 so both hash alike.
    let q = |v: f64| ((v / DUPLICATE_TOLERANCE).round() + 0.0).to_bits();
    (q(node[0]), q(node[1]))
}

/// Index of the first earlier node sharing the rounded coordinates of
/// each later duplicate.
fn find_duplicate(nodes: &[Node]) -> Option<(usize, usize)> {
    let mut seen = HashMap::with_capacity(nodes.len());
    for (i, node) in nodes.iter().enumerate() {
        if let Some(&first) = seen.get(&node_key(node)) {
            return Some((first, i));
        }
        seen.insert(node_key(node), i);
    }
    None
}

/// Nodes with one scalar value each.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldDataset {
    name: String,
    nodes: Vec<Node>,
    values: Vec<f64>,
}

impl FieldDataset {
    pub fn new(name: impl Into<String>, nodes: Vec<Node>, values: Vec<f64>) -> Result<Self> {
        if nodes.len() != values.len() {
            return Err(Error::InvalidDataset(format!(
                "{} nodes but {} values",
                nodes.len(),
                values.len()
            )));
        }
        if nodes.is_empty() {
            return Err(Error::InvalidDataset("dataset has no nodes".into()));
        }
        if let Some(i) = nodes
            .iter()
            .position(|n| !n[0].is_finite() || !n[1].is_finite())
        {
            return Err(Error::InvalidDataset(format!(
                "node {i} has non-finite coordinates"
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidDataset(format!("value {i} is not finite")));
        }
        if let Some((a, b)) = find_duplicate(&nodes) {
            return Err(Error::InvalidDataset(format!(
                "nodes {a} and {b} share coordinates"
            )));
        }
        Ok(FieldDataset {
            name: name.into(),
            nodes,
            values,
        })
    }

    /// Build without the duplicate scan; used for affine images of data
    /// that was already validated.
    pub(crate) fn from_parts_unchecked(name: String, nodes: Vec<Node>, values: Vec<f64>) -> Self {
        debug_assert_eq!(nodes.len(), values.len());
        FieldDataset {
            name,
            nodes,
            values,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Same nodes, new values.
    pub fn with_values(&self, name: impl Into<String>, values: Vec<f64>) -> Result<Self> {
        if values.len() != self.nodes.len() {
            return Err(Error::InvalidDataset(format!(
                "{} nodes but {} values",
                self.nodes.len(),
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidDataset(format!("value {i} is not finite")));
        }
        Ok(FieldDataset {
            name: name.into(),
            nodes: self.nodes.clone(),
            values,
        })
    }

    /// The rows at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::InvalidDataset("empty subset".into()));
        }
        let mut nodes = Vec::with_capacity(indices.len());
        let mut values = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(Error::InvalidDataset(format!(
                    "index {i} out of range for {} nodes",
                    self.len()
                )));
            }
            nodes.push(self.nodes[i]);
            values.push(self.values[i]);
        }
        FieldDataset::new(self.name.clone(), nodes, values)
    }
}

/// Aligned low/high-fidelity training data sharing one node list.
#[derive(Debug, Clone, PartialEq)]
pub struct FidelityPair {
    pub lf: FieldDataset,
    pub hf_on_lf_nodes: FieldDataset,
    /// The high-fidelity field on its own grid, when it came from one.
    pub hf_raw: Option<FieldDataset>,
    /// How `hf_on_lf_nodes` was produced; `None` when no resampling happened.
    pub alignment: Option<InterpMethod>,
}

impl FidelityPair {
    pub fn new(lf: FieldDataset, hf_on_lf_nodes: FieldDataset) -> Result<Self> {
        if lf.nodes() != hf_on_lf_nodes.nodes() {
            return Err(Error::InvalidDataset(
                "low- and high-fidelity node lists differ".into(),
            ));
        }
        Ok(FidelityPair {
            lf,
            hf_on_lf_nodes,
            hf_raw: None,
            alignment: None,
        })
    }
}

/// Which CSV columns hold the coordinates and the field value.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ColumnMap {
    pub x: String,
    pub y: String,
    pub value: String,
}

impl Default for ColumnMap {
    fn default() -> Self {
        ColumnMap {
            x: "x".into(),
            y: "y".into(),
            value: "value".into(),
        }
    }
}

struct ParsedTable {
    /// `(line number, cells)` for every data row.
    rows: Vec<(u64, Vec<f64>)>,
}

fn parse_table<R: Read>(reader: R, columns: &[&str]) -> Result<ParsedTable> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .trim(csv::Trim::All)
        .from_reader(reader);

    let headers = rdr.headers().map_err(csv_error)?.clone();
    if headers.is_empty() || headers.iter().all(str::is_empty) {
        return Err(Error::EmptyFile);
    }
    if headers.iter().all(|h| h.parse::<f64>().is_ok()) {
        return Err(Error::MissingHeader);
    }
    let positions = columns
        .iter()
        .map(|&name| {
            headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::MissingColumn(name.to_string()))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut rows = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(csv_error)?;
        let line = record.position().map_or(0, |p| p.line());
        let cells = positions
            .iter()
            .zip(columns)
            .map(|(&pos, &column)| {
                let cell = &record[pos];
                let value: f64 = cell.parse().map_err(|_| Error::NonNumeric {
                    line,
                    column: column.to_string(),
                    cell: cell.to_string(),
                })?;
                if !value.is_finite() {
                    return Err(Error::NonFiniteCell {
                        line,
                        column: column.to_string(),
                        cell: cell.to_string(),
                    });
                }
                Ok(value)
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push((line, cells));
    }
    if rows.is_empty() {
        return Err(Error::EmptyFile);
    }
    Ok(ParsedTable { rows })
}

fn csv_error(err: csv::Error) -> Error {
    match err.kind() {
        csv::ErrorKind::UnequalLengths {
            pos,
            expected_len,
            len,
        } => Error::RaggedRow {
            line: pos.as_ref().map_or(0, |p| p.line()),
            expected: *expected_len as usize,
            found: *len as usize,
        },
        csv::ErrorKind::Utf8 { pos, .. } => Error::NonNumeric {
            line: pos.as_ref().map_or(0, |p| p.line()),
            column: String::new(),
            cell: "<invalid utf-8>".into(),
        },
        _ => match err.into_kind() {
            csv::ErrorKind::Io(e) => Error::Io(e),
            other => Error::InvalidDataset(format!("{other:?}")),
        },
    }
}

fn check_duplicates(nodes: &[Node], lines: &[u64]) -> Result<()> {
    match find_duplicate(nodes) {
        Some((a, b)) => Err(Error::DuplicateNode {
            first_line: lines[a],
            second_line: lines[b],
        }),
        None => Ok(()),
    }
}

/// Parse a field from any reader. `name` labels the result.
pub fn read_field_csv<R: Read>(reader: R, columns: &ColumnMap, name: &str) -> Result<FieldDataset> {
    let table = parse_table(reader, &[&columns.x, &columns.y, &columns.value])?;
    let lines: Vec<u64> = table.rows.iter().map(|(l, _)| *l).collect();
    let nodes: Vec<Node> = table.rows.iter().map(|(_, c)| [c[0], c[1]]).collect();
    check_duplicates(&nodes, &lines)?;
    let values = table.rows.iter().map(|(_, c)| c[2]).collect();
    Ok(FieldDataset::from_parts_unchecked(
        name.to_string(),
        nodes,
        values,
    ))
}

/// Load a field dataset from a CSV file with a header row.
pub fn load_field_csv(path: impl AsRef<Path>, columns: &ColumnMap) -> Result<FieldDataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::file(path, e))?;
    read_field_csv(file, columns, &path.display().to_string())
}

/// Load only the coordinate columns of a CSV file.
pub fn load_nodes_csv(path: impl AsRef<Path>, columns: &ColumnMap) -> Result<Vec<Node>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::file(path, e))?;
    read_nodes_csv(file, columns)
}

pub fn read_nodes_csv<R: Read>(reader: R, columns: &ColumnMap) -> Result<Vec<Node>> {
    let table = parse_table(reader, &[&columns.x, &columns.y])?;
    let lines: Vec<u64> = table.rows.iter().map(|(l, _)| *l).collect();
    let nodes: Vec<Node> = table.rows.iter().map(|(_, c)| [c[0], c[1]]).collect();
    check_duplicates(&nodes, &lines)?;
    Ok(nodes)
}

/// Write `x,y,value` rows. Numbers use Rust's shortest round-trip form, so
/// reading the file back reproduces every value exactly.
pub fn write_field_csv<W: Write>(dataset: &FieldDataset, writer: W) -> Result<()> {
    let mut w = BufWriter::new(writer);
    writeln!(w, "x,y,value")?;
    for (node, value) in dataset.nodes().iter().zip(dataset.values()) {
        writeln!(w, "{},{},{}", node[0], node[1], value)?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_field_csv(dataset: &FieldDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::file(path, e))?;
    write_field_csv(dataset, file)
}

/// z-score parameters for the two coordinates and the field value.
/// Standard deviations use the population (divide-by-N) convention.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormalizationMeta {
    pub input_mean: [f64; 2],
    pub input_std: [f64; 2],
    pub output_mean: f64,
    pub output_std: f64,
}

fn mean_std(values: impl Iterator<Item = f64> + Clone, what: &str) -> Result<(f64, f64)> {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    if std <= 0.0 || !std.is_finite() {
        return Err(Error::DegenerateField(what.to_string()));
    }
    Ok((mean, std))
}

/// Fit z-score parameters on a dataset. Every coordinate and the value
/// column need at least two distinct entries.
pub fn fit_normalization(dataset: &FieldDataset) -> Result<NormalizationMeta> {
    let (mx, sx) = mean_std(dataset.nodes().iter().map(|n| n[0]), "x coordinate")?;
    let (my, sy) = mean_std(dataset.nodes().iter().map(|n| n[1]), "y coordinate")?;
    let (mv, sv) = mean_std(dataset.values().iter().copied(), "field value")?;
    Ok(NormalizationMeta {
        input_mean: [mx, my],
        input_std: [sx, sy],
        output_mean: mv,
        output_std: sv,
    })
}

impl NormalizationMeta {
    pub fn identity() -> Self {
        NormalizationMeta {
            input_mean: [0.0, 0.0],
            input_std: [1.0, 1.0],
            output_mean: 0.0,
            output_std: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.input_mean[0],
            self.input_mean[1],
            self.input_std[0],
            self.input_std[1],
            self.output_mean,
            self.output_std,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "normalization".into(),
            });
        }
        if self
            .input_std
            .iter()
            .chain([&self.output_std])
            .any(|&s| s <= 0.0)
        {
            return Err(Error::DegenerateField("normalization".into()));
        }
        Ok(())
    }

    #[inline]
    pub fn normalize_node(&self, node: &Node) -> Node {
        [
            (node[0] - self.input_mean[0]) / self.input_std[0],
            (node[1] - self.input_mean[1]) / self.input_std[1],
        ]
    }

    #[inline]
    pub fn denormalize_node(&self, node: &Node) -> Node {
        [
            node[0] * self.input_std[0] + self.input_mean[0],
            node[1] * self.input_std[1] + self.input_mean[1],
        ]
    }

    #[inline]
    pub fn normalize_value(&self, v: f64) -> f64 {
        (v - self.output_mean) / self.output_std
    }

    #[inline]
    pub fn denormalize_value(&self, v: f64) -> f64 {
        v * self.output_std + self.output_mean
    }

    pub fn apply(&self, dataset: &FieldDataset) -> FieldDataset {
        FieldDataset::from_parts_unchecked(
            dataset.name().to_string(),
            dataset
                .nodes()
                .iter()
                .map(|n| self.normalize_node(n))
                .collect(),
            dataset
                .values()
                .iter()
                .map(|&v| self.normalize_value(v))
                .collect(),
        )
    }

    pub fn invert(&self, dataset: &FieldDataset) -> FieldDataset {
        FieldDataset::from_parts_unchecked(
            dataset.name().to_string(),
            dataset
                .nodes()
                .iter()
                .map(|n| self.denormalize_node(n))
                .collect(),
            dataset
                .values()
                .iter()
                .map(|&v| self.denormalize_value(v))
                .collect(),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn read(src: &str) -> Result<FieldDataset> {
        read_field_csv(src.as_bytes(), &ColumnMap::default(), "t")
    }

    #[test]
    fn parses_rows_in_order() {
        let d = read_field_csv(
            "x,y,p\n0,0,1.5\n1,0,2.5\n0,1,-3e2\n".as_bytes(),
            &ColumnMap {
                value: "p".into(),
                ..ColumnMap::default()
            },
            "t",
        )
        .unwrap();
        assert_eq!(d.nodes(), &[[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]);
        assert_eq!(d.values(), &[1.5, 2.5, -300.0]);
    }

    #[test]
    fn column_remap_and_extra_columns() {
        let src = "node,x-coordinate,y-coordinate,absolute-pressure\n1,0.5,0.25,101325\n2,0.75,0.25,101300\n";
        let map = ColumnMap {
            x: "x-coordinate".into(),
            y: "y-coordinate".into(),
            value: "absolute-pressure".into(),
        };
        let d = read_field_csv(src.as_bytes(), &map, "fluent").unwrap();
        assert_eq!(d.values(), &[101325.0, 101300.0]);
        assert_eq!(d.nodes()[1], [0.75, 0.25]);
    }

    #[test]
    fn malformed_inputs_have_distinct_categories() {
        let cases = [
            ("", "empty-file"),
            ("x,y,value\n", "empty-file"),
            ("0,0,1\n1,1,2\n", "missing-header"),
            ("x,y,pressure\n0,0,1\n", "missing-column"),
            ("x,y,value\n0,0,abc\n", "non-numeric"),
            ("x,y,value\n0,0,NaN\n", "non-finite-cell"),
            ("x,y,value\n0,0,1\n1,1,2\n0,0,3\n", "duplicate-node"),
            ("x,y,value\n0,0,1\n1,1\n", "ragged-row"),
        ];
        for (src, category) in cases {
            let err = read(src).unwrap_err();
            assert_eq!(err.category(), category, "{src:?}: {err}");
        }
    }

    #[test]
    fn errors_carry_line_numbers() {
        match read("x,y,value\n0,0,1\n1,0,NaN\n").unwrap_err() {
            Error::NonFiniteCell { line, column, .. } => {
                assert_eq!(line, 3);
                assert_eq!(column, "value");
            }
            e => panic!("unexpected {e}"),
        }
        match read("x,y,value\n0,0,1\n1,0,2\n0,0,3\n").unwrap_err() {
            Error::DuplicateNode {
                first_line,
                second_line,
            } => assert_eq!((first_line, second_line), (2, 4)),
            e => panic!("unexpected {e}"),
        }
        assert!(matches!(
            read("x,y,value\n0,0,1\n1,0,2,9\n").unwrap_err(),
            Error::RaggedRow { line: 3, .. }
        ));
        assert!(
            matches!(read("x,y,val\n0,0,1\n").unwrap_err(), Error::MissingColumn(c) if c == "value")
        );
    }

    #[test]
    fn duplicate_detection_uses_tolerance() {
        assert!(read("x,y,value\n0,0,1\n-0.0,0,2\n").is_err());
        assert!(read("x,y,value\n1,1,1\n1.0000000000000002,1,2\n").is_err());
        assert!(read("x,y,value\n1,1,1\n1.000000001,1,2\n").is_ok());
    }

    #[test]
    fn one_node_file_is_two_lines() {
        let d = FieldDataset::new("one", vec![[0.5, 2.0]], vec![101325.0]).unwrap();
        let mut buf = Vec::new();
        write_field_csv(&d, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "x,y,value\n0.5,2,101325\n");
    }

    #[test]
    fn two_point_normalization() {
        let d = FieldDataset::new("t", vec![[0.0, 1.0], [2.0, 3.0]], vec![0.0, 2.0]).unwrap();
        let n = fit_normalization(&d).unwrap();
        assert_eq!(n.output_mean, 1.0);
        assert_eq!(n.output_std, 1.0);
        assert_eq!(n.apply(&d).values(), &[-1.0, 1.0]);
        assert_eq!(n.invert(&n.apply(&d)), d);
    }

    #[test]
    fn constant_field_is_degenerate() {
        let d = FieldDataset::new("t", vec![[0.0, 1.0], [2.0, 3.0]], vec![5.0, 5.0]).unwrap();
        assert!(matches!(
            fit_normalization(&d),
            Err(Error::DegenerateField(_))
        ));
        let d = FieldDataset::new("t", vec![[0.0, 1.0], [0.0, 3.0]], vec![5.0, 6.0]).unwrap();
        assert!(matches!(
            fit_normalization(&d),
            Err(Error::DegenerateField(_))
        ));
    }

    #[test]
    fn dataset_invariants() {
        assert!(FieldDataset::new("t", vec![], vec![]).is_err());
        assert!(FieldDataset::new("t", vec![[0.0, 0.0]], vec![]).is_err());
        assert!(FieldDataset::new("t", vec![[f64::NAN, 0.0]], vec![1.0]).is_err());
        assert!(FieldDataset::new("t", vec![[0.0, 0.0]], vec![f64::INFINITY]).is_err());
        assert!(FieldDataset::new("t", vec![[0.0, 0.0], [0.0, 0.0]], vec![1.0, 2.0]).is_err());
    }

    #[test]
    fn pair_requires_identical_nodes() {
        let a = FieldDataset::new("a", vec![[0.0, 0.0], [1.0, 0.0]], vec![1.0, 2.0]).unwrap();
        let b = a.with_values("b", vec![3.0, 4.0]).unwrap();
        assert!(FidelityPair::new(a.clone(), b).is_ok());
        let c = FieldDataset::new("c", vec![[0.0, 0.0], [1.0, 1.0]], vec![1.0, 2.0]).unwrap();
        assert!(FidelityPair::new(a, c).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn dataset() -> impl Strategy<Value = FieldDataset> {
            proptest::collection::vec((-1e6f64..1e6, -1e6f64..1e6, -1e9f64..1e9), 1..40)
                .prop_filter_map("distinct nodes", |rows| {
                    let nodes = rows.iter().map(|r| [r.0, r.1]).collect();
                    let values = rows.iter().map(|r| r.2).collect();
                    FieldDataset::new("p", nodes, values).ok()
                })
        }

        proptest! {
            #[test]
            fn csv_roundtrip(d in dataset()) {
                let mut buf = Vec::new();
                write_field_csv(&d, &mut buf).unwrap();
                let back = read_field_csv(buf.as_slice(), &ColumnMap::default(), "p").unwrap();
                prop_assert_eq!(back, d);
            }

            #[test]
            fn normalization_roundtrip_and_moments(d in dataset()) {
                let Ok(n) = fit_normalization(&d) else { return Ok(()); };
                let z = n.apply(&d);
                let back = n.invert(&z);
                for (a, b) in back.values().iter().zip(d.values()) {
                    prop_assert!((a - b).abs() <= 1e-12 * b.abs().max(n.output_std));
                }
                for (a, b) in back.nodes().iter().zip(d.nodes()) {
                    for k in 0..2 {
                        prop_assert!((a[k] - b[k]).abs() <= 1e-12 * b[k].abs().max(n.input_std[k]));
                    }
                }
                if let Ok(again) = fit_normalization(&z) {
                    prop_assert!(again.output_mean.abs() < 1e-9);
                    prop_assert!((again.output_std - 1.0).abs() < 1e-9);
                    for k in 0..2 {
                        prop_assert!(again.input_mean[k].abs() < 1e-9);
                        prop_assert!((again.input_std[k] - 1.0).abs() < 1e-9);
                    }
                }
            }
        }
    }
}
