//! Tennessee Eastman benchmark files and the 52-variable legend.

use std::path::Path;

use super::{load_matrix, MatrixFormat, RawMatrix, VariableInfo};
use crate::error::{Error, Result};

pub const TE_VARIABLES: usize = 52;
/// Sampling interval of the benchmark files, in minutes.
pub const TE_SAMPLING_MINUTES: f64 = 3.0;
/// Simulated hours before the fault is switched on in the test files.
pub const TE_FAULT_AFTER_HOURS: f64 = 8.0;

const LEGEND: [(&str, &str, &str); TE_VARIABLES] = [
    ("x01", "Time", "h"),
    ("x02", "A Feed", "kscmh"),
    ("x03", "D Feed", "kg/h"),
    ("x04", "E Feed", "kg/h"),
    ("x05", "A and C Feed", "kscmh"),
    ("x06", "Recycle Flow", "kscmh"),
    ("x07", "Reactor Feed Rate", "kscmh"),
    ("x08", "Reactor Pressure", "kPa gauge"),
    ("x09", "Reactor Level", "%"),
    ("x10", "Reactor Temperature", "°C"),
    ("x11", "Purge Rate", "kscmh"),
    ("x12", "Product Sep Temp", "°C"),
    ("x13", "Product Sep Level", "%"),
    ("x14", "Product Sep Pressure", "kPa gauge"),
    ("x15", "Product Sep Underflow", "m3/h"),
    ("x16", "Stripper Level", "%"),
    ("x17", "Stripper Pressure", "kPa gauge"),
    ("x18", "Stripper Underflow", "m3/h"),
    ("x19", "Stripper Temp", "°C"),
    ("x20", "Stripper Steam Flow", "kg/h"),
    ("x21", "Compressor Work", "kW"),
    ("x22", "Reactor Coolant Temp", "°C"),
    ("x23", "Separator Coolant Temp", "°C"),
    ("x24", "Component A to Reactor", "mol %"),
    ("x25", "Component B to Reactor", "mol %"),
    ("x26", "Component C to Reactor", "mol %"),
    ("x27", "Component D to Reactor", "mol %"),
    ("x28", "Component E to Reactor", "mol %"),
    ("x29", "Component F to Reactor", "mol %"),
    ("x30", "Component A in Purge", "mol %"),
    ("x31", "Component B in Purge", "mol %"),
    ("x32", "Component C in Purge", "mol %"),
    ("x33", "Component D in Purge", "mol %"),
    ("x34", "Component E in Purge", "mol %"),
    ("x35", "Component F in Purge", "mol %"),
    ("x36", "Component G in Purge", "mol %"),
    ("x37", "Component H in Purge", "mol %"),
    ("x38", "Component D in Product", "mol %"),
    ("x39", "Component E in Product", "mol %"),
    ("x40", "Component F in Product", "mol %"),
    ("x41", "Component G in Product", "mol %"),
    ("x42", "Component H in Product", "mol %"),
    ("x43", "D feed", "%"),
    ("x44", "E Feed", "%"),
    ("x45", "A Feed", "%"),
    ("x46", "A and C Feed", "%"),
    ("x47", "Compressor recycle valve", "%"),
    ("x48", "Purge valve", "%"),
    ("x49", "Separator liquid flow", "%"),
    ("x50", "Stripper liquid flow", "%"),
    ("x51", "Stripper steam valve", "%"),
    ("x52", "Reactor Coolant", "%"),
];

/// The built-in 52-row legend.
pub fn te_variables() -> Vec<VariableInfo> {
    LEGEND
        .iter()
        .enumerate()
        .map(|(i, (name, description, unit))| VariableInfo {
            index: i + 1,
            name: (*name).to_string(),
            description: (*description).to_string(),
            unit: (*unit).to_string(),
        })
        .collect()
}

/// The legend as a metadata CSV (`index,name,description,unit`).
pub fn variables_csv(vars: &[VariableInfo]) -> String {
    let mut out = String::from("index,name,description,unit\n");
    for v in vars {
        out.push_str(&format!("{},{},{},{}\n", v.index, v.name, v.description, v.unit));
    }
    out
}

/// Reads a metadata CSV with columns `index,name,description[,unit]`.
pub fn parse_variables_csv(text: &str, source: &str) -> Result<Vec<VariableInfo>> {
    let mut vars = Vec::new();
    for (line_no, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        if cells.len() < 3 {
            return Err(Error::Parse {
                source_name: source.into(),
                row: line_no + 1,
                col: cells.len() + 1,
                msg: "expected index,name,description[,unit]".into(),
            });
        }
        let index: usize = cells[0].parse().map_err(|_| Error::Parse {
            source_name: source.into(),
            row: line_no + 1,
            col: 1,
            msg: format!("bad index {:?}", cells[0]),
        })?;
        vars.push(VariableInfo {
            index,
            name: cells[1].to_string(),
            description: cells[2].to_string(),
            unit: cells.get(3).map(|s| s.to_string()).unwrap_or_default(),
        });
    }
    for (i, v) in vars.iter().enumerate() {
        if v.index != i + 1 {
            return Err(Error::Invalid(format!(
                "{source}: variable indices must run 1..d without gaps, found {} at position {}",
                v.index,
                i + 1
            )));
        }
    }
    Ok(vars)
}

pub fn load_variables(path: &Path) -> Result<Vec<VariableInfo>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_variables_csv(&text, &path.display().to_string())
}

/// Loads a benchmark `.dat` file and checks it against the 52-variable legend.
///
/// The normal-operation training file of the common distribution (`d00.dat`)
/// is stored variable-major (52 rows); it is transposed on load.
pub fn load_te(path: &Path) -> Result<RawMatrix> {
    let mut raw = load_matrix(path, MatrixFormat::WhitespaceDat)?;
    if raw.ncols() != TE_VARIABLES && raw.nrows() == TE_VARIABLES {
        raw.values = raw.values.transpose();
    }
    if raw.ncols() != TE_VARIABLES {
        return Err(Error::Dimension(format!(
            "{}: expected {TE_VARIABLES} columns, found {}",
            path.display(),
            raw.ncols()
        )));
    }
    raw.variables = Some(te_variables());
    Ok(raw)
}
