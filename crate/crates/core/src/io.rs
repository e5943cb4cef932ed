//! Series files, CSV result tables and result dumps.
//!
//! A series file is a `# dims=<p> length=<T>` header followed by `T` lines of
//! `p` comma-separated floats. Floats are written in shortest round-trip form,
//! so reading a written file gives back the exact same bits.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::gi::GiResult;
use crate::series::TimeSeries;
use crate::transforms::Transform;

fn parse_header(line: &str) -> Result<(usize, usize)> {
    let bad = |message: String| Error::Parse { line: 1, message };
    let rest = line
        .strip_prefix('#')
        .ok_or_else(|| bad("expected header `# dims=<p> length=<T>`".into()))?;
    let (mut dims, mut length) = (None, None);
    for field in rest.split_whitespace() {
        let (key, value) = field
            .split_once('=')
            .ok_or_else(|| bad(format!("malformed header field `{field}`")))?;
        let value: usize = value.parse().map_err(|_| {
            bad(format!(
                "`{key}` must be a non-negative integer, got `{value}`"
            ))
        })?;
        match key {
            "dims" => dims = Some(value),
            "length" => length = Some(value),
            _ => return Err(bad(format!("unknown header field `{key}`"))),
        }
    }
    match (dims, length) {
        (Some(p), Some(t)) if p >= 1 && t >= 1 => Ok((p, t)),
        (Some(_), Some(_)) => Err(bad("dims and length must be at least 1".into())),
        _ => Err(bad("header needs both dims and length".into())),
    }
}

/// Parses the text of a series file.
pub fn parse_series(text: &str) -> Result<TimeSeries> {
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or(Error::EmptySeries)?;
    let (dims, length) = parse_header(header.trim())?;
    let mut data = Vec::with_capacity(dims * length);
    let mut rows = 0;
    for (idx, line) in lines {
        let lineno = idx + 1;
        let before = data.len();
        for cell in line.split(',') {
            let v: f64 = cell.trim().parse().map_err(|_| Error::Parse {
                line: lineno,
                message: format!("`{}` is not a number", cell.trim()),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    line: lineno,
                    message: "non-finite value".into(),
                });
            }
            data.push(v);
        }
        if data.len() - before != dims {
            return Err(Error::Parse {
                line: lineno,
                message: format!("expected {dims} values, found {}", data.len() - before),
            });
        }
        rows += 1;
    }
    if rows != length {
        return Err(Error::Parse {
            line: 1,
            message: format!("header declares length {length} but file has {rows} rows"),
        });
    }
    TimeSeries::from_row_slice(length, dims, &data)
}

pub fn format_series(series: &TimeSeries) -> String {
    let mut out = format!("# dims={} length={}\n", series.dims(), series.len());
    for row in series.values().row_iter() {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

pub fn read_series(path: impl AsRef<Path>) -> Result<TimeSeries> {
    parse_series(&fs::read_to_string(path)?)
}

pub fn write_series(path: impl AsRef<Path>, series: &TimeSeries) -> Result<()> {
    fs::write(path, format_series(series))?;
    Ok(())
}

/// A rectangular table of string cells with a header row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResultTable {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl ResultTable {
    pub fn new<S: Into<String>>(header: impl IntoIterator<Item = S>) -> Self {
        Self {
            header: header.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    /// Appends a row; panics when its width differs from the header.
    pub fn push<S: Into<String>>(&mut self, row: impl IntoIterator<Item = S>) {
        let row: Vec<String> = row.into_iter().map(Into::into).collect();
        assert_eq!(
            row.len(),
            self.header.len(),
            "row width must match the header"
        );
        self.rows.push(row);
    }

    pub fn header(&self) -> &[String] {
        &self.header
    }

    pub fn rows(&self) -> &[Vec<String>] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    pub fn column(&self, name: &str) -> Option<Vec<&str>> {
        let k = self.column_index(name)?;
        Some(self.rows.iter().map(|r| r[k].as_str()).collect())
    }

    /// A column parsed as floats.
    pub fn numeric_column(&self, name: &str) -> Result<Vec<f64>> {
        let cells = self
            .column(name)
            .ok_or_else(|| Error::invalid("column", format!("no column named `{name}`")))?;
        cells
            .iter()
            .enumerate()
            .map(|(i, c)| {
                c.parse().map_err(|_| Error::Parse {
                    line: i + 2,
                    message: format!("`{c}` in column `{name}` is not a number"),
                })
            })
            .collect()
    }

    pub fn write_to<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(&self.header)?;
        for row in &self.rows {
            w.write_record(row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(reader: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
        let mut rows = Vec::new();
        for record in r.records() {
            rows.push(record?.iter().map(str::to_string).collect());
        }
        Ok(Self { header, rows })
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("cells are strings")
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_to(fs::File::create(path)?)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(fs::File::open(path)?)
    }
}

fn matrix_rows(m: &nalgebra::DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

pub fn transform_json(f: &Transform) -> Value {
    match f {
        Transform::Stiefel(s) => json!({
            "family": "stiefel",
            "matrix": matrix_rows(s.matrix()),
        }),
        Transform::AffineStiefel(a) => json!({
            "family": "affine-stiefel",
            "matrix": matrix_rows(a.linear.matrix()),
            "offset": a.offset.iter().copied().collect::<Vec<f64>>(),
        }),
        Transform::Transposition(t) => json!({
            "family": "transposition",
            "shift": t.shift(),
            "dims": t.dims(),
            "matrix": matrix_rows(&f.linear_matrix()),
        }),
    }
}

/// JSON dump of a solver result: cost, transform, path pairs and diagnostics.
pub fn gi_result_json(result: &GiResult) -> Value {
    json!({
        "cost": result.cost,
        "transform": transform_json(&result.transform),
        "path": result.path.as_ref().map(|p| p.pairs().iter().map(|&(i, j)| [i, j]).collect::<Vec<_>>()),
        "iterations": result.iterations,
        "converged": result.converged,
        "rank_deficient": result.rank_deficient,
        "cost_trace": result.cost_trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn series_round_trip_is_exact() {
        let s = TimeSeries::from_rows(&[
            vec![0.1, -1.0 / 3.0],
            vec![1e-300, 123456789.12345679],
            vec![f64::MIN_POSITIVE, -0.0],
        ])
        .unwrap();
        let text = format_series(&s);
        assert!(text.starts_with("# dims=2 length=3\n"));
        let back = parse_series(&text).unwrap();
        for (a, b) in s.values().iter().zip(back.values().iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn series_parse_errors() {
        assert!(matches!(parse_series(""), Err(Error::EmptySeries)));
        assert!(parse_series("dims=1 length=1\n0\n").is_err());
        assert!(parse_series("# dims=2 length=1\n0\n").is_err());
        assert!(parse_series("# dims=1 length=2\n0\n").is_err());
        assert!(parse_series("# dims=1 length=1\nabc\n").is_err());
        assert!(parse_series("# dims=1 length=1\nNaN\n").is_err());
        assert!(parse_series("# dims=0 length=1\n\n").is_err());
        match parse_series("# dims=2 length=2\n1,2\n3\n") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn table_round_trip() {
        let mut t = ResultTable::new(["method", "value"]);
        t.push(["a,b", "1.5"]);
        t.push(["plain", "0.1"]);
        let back = ResultTable::read_from(t.to_csv_string().as_bytes()).unwrap();
        assert_eq!(back, t);
        assert_eq!(back.numeric_column("value").unwrap(), vec![1.5, 0.1]);
        assert!(back.numeric_column("method").is_err());
        assert!(back.numeric_column("missing").is_err());
    }
}
