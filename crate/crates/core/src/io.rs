//! CSV input and output.
//!
//! Files are plain comma-separated numbers. A first record containing any
//! non-numeric cell is taken as a header. Empty cells and the token `NA`
//! are missing values.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::data::{Dataset, Family, ViewHierarchy, MISSING};
use crate::error::{Error, Result};

/// A numeric table with an optional header.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub header: Option<Vec<String>>,
    pub values: Array2<f64>,
}

fn is_missing_token(s: &str) -> bool {
    s.is_empty() || s == "NA"
}

fn parse_cell(s: &str) -> Option<f64> {
    let s = s.trim();
    if is_missing_token(s) {
        Some(MISSING)
    } else {
        s.parse::<f64>().ok()
    }
}

pub fn read_table(reader: impl Read) -> Result<Table> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut header = None;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width = None;
    for (idx, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::Parse {
            line: e.position().map(|p| p.line() as usize).unwrap_or(idx + 1),
            column: None,
            message: e.to_string(),
        })?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(idx + 1);
        if rec.len() == 1 && rec[0].is_empty() {
            continue;
        }
        if idx == 0 && rec.iter().any(|c| parse_cell(c).is_none()) {
            header = Some(rec.iter().map(str::to_string).collect::<Vec<_>>());
            width = Some(rec.len());
            continue;
        }
        match width {
            None => width = Some(rec.len()),
            Some(w) if w != rec.len() => {
                return Err(Error::Parse {
                    line,
                    column: None,
                    message: format!("expected {w} fields, found {}", rec.len()),
                })
            }
            _ => {}
        }
        let mut row = Vec::with_capacity(rec.len());
        for (c, cell) in rec.iter().enumerate() {
            row.push(parse_cell(cell).ok_or_else(|| Error::Parse {
                line,
                column: Some(c + 1),
                message: format!("'{cell}' is not a number"),
            })?);
        }
        rows.push(row);
    }
    let cols = width.unwrap_or(0);
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    let values = Array2::from_shape_vec((rows.len(), cols), flat)
        .map_err(|e| Error::Shape(e.to_string()))?;
    Ok(Table { header, values })
}

pub fn read_table_file(path: impl AsRef<Path>) -> Result<Table> {
    let path = path.as_ref();
    let file = std::fs::File::open(path)
        .map_err(|e| std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))?;
    read_table(std::io::BufReader::new(file))
}

/// Where the outcome comes from.
#[derive(Clone, Debug, PartialEq)]
pub enum OutcomeSource {
    /// A column of the feature file, by header name or 1-based index. The
    /// column is removed from the features.
    Column(String),
    /// A separate single-column file.
    File(std::path::PathBuf),
}

#[derive(Clone, Debug)]
pub struct Loaded {
    pub data: Dataset,
    pub hierarchy: ViewHierarchy,
    pub feature_names: Vec<String>,
}

fn default_names(p: usize) -> Vec<String> {
    (1..=p).map(|j| format!("X{j}")).collect()
}

/// Splits the outcome column off a feature table.
fn split_outcome(table: Table, column: &str) -> Result<(Table, Array1<f64>)> {
    let idx = match table
        .header
        .as_ref()
        .and_then(|h| h.iter().position(|n| n == column))
    {
        Some(i) => i,
        None => match column.parse::<usize>() {
            Ok(i) if i >= 1 && i <= table.values.ncols() => i - 1,
            _ => {
                return Err(Error::Config(format!(
                    "outcome column '{column}' not found"
                )))
            }
        },
    };
    let y = table.values.column(idx).to_owned();
    let keep: Vec<usize> = (0..table.values.ncols()).filter(|&j| j != idx).collect();
    let header = table
        .header
        .map(|h| keep.iter().map(|&j| h[j].clone()).collect());
    Ok((
        Table {
            header,
            values: table.values.select(Axis(1), &keep),
        },
        y,
    ))
}

/// Reads features, outcome and view assignment into a validated dataset.
///
/// The views file has one row per feature and one integer column per
/// grouping level, lowest first. Labels may be any integers; each column is
/// mapped onto `1..=V` in ascending order.
pub fn load_csv(
    features: impl AsRef<Path>,
    outcome: &OutcomeSource,
    views: impl AsRef<Path>,
    family: Family,
) -> Result<Loaded> {
    let table = read_table_file(features)?;
    let (table, y) = match outcome {
        OutcomeSource::Column(c) => split_outcome(table, c)?,
        OutcomeSource::File(path) => {
            let t = read_table_file(path)?;
            if t.values.ncols() != 1 {
                return Err(Error::Shape(format!(
                    "outcome file must have one column, found {}",
                    t.values.ncols()
                )));
            }
            let y = t.values.column(0).to_owned();
            (table, y)
        }
    };
    if y.len() != table.values.nrows() {
        return Err(Error::Shape(format!(
            "{} outcome values for {} feature rows",
            y.len(),
            table.values.nrows()
        )));
    }
    let p = table.values.ncols();
    let views = read_table_file(views)?;
    if views.values.nrows() != p {
        return Err(Error::Shape(format!(
            "views file has {} rows but there are {p} features",
            views.values.nrows()
        )));
    }
    let mut labels = Array2::<i64>::zeros(views.values.raw_dim());
    for ((i, j), v) in views.values.indexed_iter() {
        if !(v.is_finite() && v.fract() == 0.0) {
            return Err(Error::Label(format!(
                "view label '{v}' in row {} column {} is not an integer",
                i + 1,
                j + 1
            )));
        }
        labels[(i, j)] = *v as i64;
    }
    let hierarchy = ViewHierarchy::from_raw_labels(labels.view(), p, labels.ncols() + 1)?;
    let feature_names = table.header.unwrap_or_else(|| default_names(p));
    Ok(Loaded {
        data: Dataset::new(table.values, y, family)?,
        hierarchy,
        feature_names,
    })
}

fn format_value(v: f64) -> String {
    if v.is_nan() {
        "NA".to_string()
    } else {
        format!("{v}")
    }
}

pub fn write_table(
    writer: impl Write,
    header: Option<&[String]>,
    values: ArrayView2<f64>,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let csv_err = |e: csv::Error| Error::Io(std::io::Error::other(e.to_string()));
    if let Some(h) = header {
        w.write_record(h).map_err(csv_err)?;
    }
    for row in values.rows() {
        w.write_record(row.iter().map(|v| format_value(*v)))
            .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_table_file(
    path: impl AsRef<Path>,
    header: Option<&[String]>,
    values: ArrayView2<f64>,
) -> Result<()> {
    write_table(std::fs::File::create(path)?, header, values)
}

/// Writes one value per line.
pub fn write_vector(mut writer: impl Write, values: ArrayView1<f64>) -> Result<()> {
    for v in values {
        writeln!(writer, "{}", format_value(*v))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_and_missing_cells() {
        let t = read_table("a,b,c\n1,2,3\n4,,NA\n".as_bytes()).unwrap();
        assert_eq!(t.header.unwrap(), vec!["a", "b", "c"]);
        assert_eq!(t.values.row(0).to_vec(), vec![1.0, 2.0, 3.0]);
        assert!(t.values[[1, 1]].is_nan() && t.values[[1, 2]].is_nan());
    }

    #[test]
    fn headerless() {
        let t = read_table("1,2\n3,4\n".as_bytes()).unwrap();
        assert!(t.header.is_none());
        assert_eq!(t.values.dim(), (2, 2));
    }

    #[test]
    fn parse_errors_carry_positions() {
        match read_table("1,2\n3,4,5\n".as_bytes()).unwrap_err() {
            Error::Parse { line, column, .. } => assert_eq!((line, column), (2, None)),
            e => panic!("{e}"),
        }
        match read_table("x,y\n1,2\n3,abc\n".as_bytes()).unwrap_err() {
            Error::Parse { line, column, .. } => assert_eq!((line, column), (3, Some(2))),
            e => panic!("{e}"),
        }
    }

    #[test]
    fn write_read_round_trip() {
        let m = ndarray::array![[0.1, f64::NAN], [1.0 / 3.0, -2e-300]];
        let mut buf = Vec::new();
        write_table(&mut buf, Some(&["a".into(), "b".into()]), m.view()).unwrap();
        let t = read_table(buf.as_slice()).unwrap();
        assert_eq!(t.values[[1, 0]], 1.0 / 3.0);
        assert_eq!(t.values[[1, 1]], -2e-300);
        assert!(t.values[[0, 1]].is_nan());
    }
}
