//! Report assembly and serialization.
//!
//! Reports are deliberately boring: a command name, the full resolved
//! config, and a flat ordered list of named results. Every entry carries
//! the name of the operation that produced it. Nothing run-dependent
//! (timing, paths, hostnames) goes into the report, so a fixed config and
//! seed always serialize to the same bytes.

use qest_core::fisher::FisherValue;
use qest_core::CMatrix;
use serde::Serialize;

#[derive(Debug, Serialize)]
pub struct Report {
    pub command: String,
    /// Echo of the configuration, with resolved defaults filled in.
    pub config: serde_json::Value,
    pub results: Vec<Entry>,
}

/// One named result with its producing operation.
#[derive(Debug, Serialize)]
pub struct Entry {
    pub name: String,
    pub value: Value,
    pub provenance: String,
}

impl Entry {
    pub fn new(name: &str, value: Value, provenance: &str) -> Self {
        Self {
            name: name.into(),
            value,
            provenance: provenance.into(),
        }
    }
}

/// Result payload. Divergent quantities serialize as the string
/// "infinite", never as a float sentinel.
#[derive(Debug, Serialize)]
#[serde(untagged)]
pub enum Value {
    Number(f64),
    Count(u64),
    Flag(bool),
    Text(String),
    /// Complex matrix flattened row major into `[re, im]` pairs.
    Matrix {
        rows: usize,
        cols: usize,
        data: Vec<[f64; 2]>,
    },
    /// Tabular data with named columns.
    Series {
        columns: Vec<String>,
        rows: Vec<Vec<f64>>,
    },
}

impl Value {
    pub fn matrix(m: &CMatrix) -> Self {
        let mut data = Vec::with_capacity(m.rows() * m.cols());
        for i in 0..m.rows() {
            for j in 0..m.cols() {
                let z = m.get(i, j);
                data.push([z.re, z.im]);
            }
        }
        Value::Matrix {
            rows: m.rows(),
            cols: m.cols(),
            data,
        }
    }

    pub fn fisher(v: &FisherValue) -> Self {
        match v {
            FisherValue::Finite(x) => Value::Number(*x),
            FisherValue::Infinite => Value::Text("infinite".into()),
        }
    }

    pub fn series(columns: &[&str], rows: Vec<Vec<f64>>) -> Self {
        Value::Series {
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows,
        }
    }
}

/// Tabular output for the csv format. Curves use the columns
/// `x, y[, stderr]`; risk tables use `n, value, scaled_value`.
#[derive(Debug, Clone)]
pub struct CsvTable {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl CsvTable {
    pub fn new(columns: &[&str], rows: Vec<Vec<f64>>) -> Self {
        Self {
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows,
        }
    }
}

/// Renders a table; numbers use the shortest exact decimal form.
pub fn render_csv(table: &CsvTable) -> String {
    let mut out = table.columns.join(",");
    out.push('\n');
    for row in &table.rows {
        let cells: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

pub fn render_json(report: &Report) -> Result<String, serde_json::Error> {
    let mut text = serde_json::to_string_pretty(report)?;
    text.push('\n');
    Ok(text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use qest_core::linalg::cr;

    #[test]
    fn infinite_values_serialize_as_a_string() {
        let e = Entry::new("j", Value::fisher(&FisherValue::Infinite), "op");
        let text = serde_json::to_string(&e).unwrap();
        assert!(text.contains(r#""value":"infinite""#));
        let e = Entry::new("j", Value::fisher(&FisherValue::Finite(0.25)), "op");
        assert!(serde_json::to_string(&e).unwrap().contains("0.25"));
    }

    #[test]
    fn matrices_flatten_row_major() {
        let m = CMatrix::from_rows(&[vec![cr(1.0), cr(2.0)], vec![cr(3.0), cr(4.0)]]).unwrap();
        match Value::matrix(&m) {
            Value::Matrix { rows, cols, data } => {
                assert_eq!((rows, cols), (2, 2));
                assert_eq!(data[1], [2.0, 0.0]);
                assert_eq!(data[2], [3.0, 0.0]);
            }
            other => panic!("unexpected value {other:?}"),
        }
    }

    #[test]
    fn csv_renders_stable_columns() {
        let t = CsvTable::new(&["x", "y"], vec![vec![0.5, 1.0], vec![1.5, 0.25]]);
        assert_eq!(render_csv(&t), "x,y\n0.5,1\n1.5,0.25\n");
    }
}
