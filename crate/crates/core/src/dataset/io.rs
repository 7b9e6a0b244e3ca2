use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DMatrix;

use super::{RawMatrix, VariableInfo};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatrixFormat {
    /// Whitespace-delimited numbers, one sample per line, no header.
    WhitespaceDat,
    /// Comma-delimited, with an optional single header row.
    Csv,
}

impl MatrixFormat {
    /// `.csv` means CSV; anything else is read as whitespace-delimited.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => MatrixFormat::Csv,
            _ => MatrixFormat::WhitespaceDat,
        }
    }
}

pub fn load_matrix(path: &Path, format: MatrixFormat) -> Result<RawMatrix> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_matrix(&text, format, &path.display().to_string())
}

pub fn parse_matrix(text: &str, format: MatrixFormat, source: &str) -> Result<RawMatrix> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut header: Option<Vec<String>> = None;
    let mut width = None;

    for (line_no, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let cells: Vec<&str> = match format {
            MatrixFormat::WhitespaceDat => line.split_whitespace().collect(),
            MatrixFormat::Csv => line.split(',').map(str::trim).collect(),
        };
        if format == MatrixFormat::Csv
            && rows.is_empty()
            && header.is_none()
            && cells.iter().any(|c| c.parse::<f64>().is_err())
        {
            header = Some(cells.iter().map(|c| c.trim_matches('"').to_string()).collect());
            width = Some(cells.len());
            continue;
        }
        if let Some(w) = width {
            if cells.len() != w {
                return Err(Error::Parse {
                    source_name: source.to_string(),
                    row: line_no + 1,
                    col: cells.len().min(w) + 1,
                    msg: format!("expected {w} columns, found {}", cells.len()),
                });
            }
        }
        width = Some(cells.len());
        let mut row = Vec::with_capacity(cells.len());
        for (j, cell) in cells.iter().enumerate() {
            let v: f64 = cell.parse().map_err(|_| Error::Parse {
                source_name: source.to_string(),
                row: line_no + 1,
                col: j + 1,
                msg: format!("not a number: {cell:?}"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    source_name: source.to_string(),
                    row: line_no + 1,
                    col: j + 1,
                    msg: format!("non-finite value {cell:?}"),
                });
            }
            row.push(v);
        }
        rows.push(row);
    }

    if rows.is_empty() {
        return Err(Error::Empty(source.to_string()));
    }
    let d = rows[0].len();
    let values = DMatrix::from_row_iterator(rows.len(), d, rows.into_iter().flatten());
    let mut raw = RawMatrix::new(values, source)?;
    raw.variables = header.map(|names| {
        names
            .into_iter()
            .enumerate()
            .map(|(i, name)| VariableInfo {
                index: i + 1,
                name,
                description: String::new(),
                unit: String::new(),
            })
            .collect()
    });
    Ok(raw)
}

/// Writes a matrix as whitespace-delimited text. Values use the shortest
/// representation that parses back to the same `f64`.
pub fn write_dat(values: &DMatrix<f64>, path: &Path) -> Result<()> {
    std::fs::write(path, format_dat(values)).map_err(|e| Error::io(path, e))
}

pub(crate) fn format_dat(values: &DMatrix<f64>) -> String {
    let mut out = String::with_capacity(values.len() * 24);
    for row in values.row_iter() {
        for (j, v) in row.iter().enumerate() {
            if j > 0 {
                out.push(' ');
            }
            let _ = write!(out, "{v:e}");
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn whitespace_three_by_fifty_two() {
        let line: Vec<String> = (0..52).map(|j| format!("{}.5", j)).collect();
        let text = format!("{0}\n{0}\n  {0}  \n", line.join("  "));
        let m = parse_matrix(&text, MatrixFormat::WhitespaceDat, "t").unwrap();
        assert_eq!((m.nrows(), m.ncols()), (3, 52));
        assert_eq!(m.values[(2, 51)], 51.5);
    }

    #[test]
    fn csv_header_becomes_variable_names() {
        let text = "x01,x02,x03\n1,2,3\n4,5,6\n";
        let m = parse_matrix(text, MatrixFormat::Csv, "t").unwrap();
        assert_eq!((m.nrows(), m.ncols()), (2, 3));
        let vars = m.variables.unwrap();
        assert_eq!(vars[1].name, "x02");
        assert_eq!(vars[1].index, 2);
        assert_eq!(m.values[(1, 2)], 6.0);
    }

    #[test]
    fn nan_cell_names_position() {
        let err = parse_matrix("1 2\n3 NaN\n", MatrixFormat::WhitespaceDat, "f.dat").unwrap_err();
        match err {
            Error::Parse { row, col, .. } => assert_eq!((row, col), (2, 2)),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn ragged_and_non_numeric_rows() {
        let err = parse_matrix("1 2 3\n4 5\n", MatrixFormat::WhitespaceDat, "f").unwrap_err();
        assert!(matches!(err, Error::Parse { row: 2, .. }), "{err}");
        let err = parse_matrix("1,2\n3,abc\n", MatrixFormat::Csv, "f").unwrap_err();
        assert!(matches!(err, Error::Parse { row: 2, col: 2, .. }), "{err}");
    }

    #[test]
    fn empty_file() {
        assert!(matches!(
            parse_matrix("\n  \n", MatrixFormat::WhitespaceDat, "f"),
            Err(Error::Empty(_))
        ));
    }

    proptest! {
        #[test]
        fn dat_round_trip_is_bit_exact(
            vals in proptest::collection::vec(-1e300f64..1e300, 6..60),
            tiny in proptest::collection::vec(-1e-300f64..1e-300, 3),
        ) {
            let mut vals = vals;
            vals.extend(tiny);
            let d = 3;
            let n = vals.len() / d;
            let m = DMatrix::from_row_slice(n, d, &vals[..n * d]);
            let back = parse_matrix(&format_dat(&m), MatrixFormat::WhitespaceDat, "rt").unwrap();
            for (a, b) in m.iter().zip(back.values.iter()) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }
}
