//! On-disk formats: control fields as CSV with a JSON header line, solve run
//! records as JSON, and the configuration hash stamped on every output.
//!
//! Field file layout:
//!
//! ```text
//! # {"n":2,"t_rel":0.7,"t2max":1.7562...,"slices":140,"omega":1.0,"basis_ordering":"weight-lex-v1",...}
//! slice,s1_x,s1_y,...,s23_zz
//! 0,0.123,...
//! ```
//!
//! Coefficients follow the generator table order and are written with the
//! shortest representation that parses back to the same `f64`.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::krotov::{ConvergenceCriteria, IterationReport, SolveStatus};
use crate::pauli::{GeneratorTable, BASIS_ORDERING_VERSION};
use crate::propagation::{ControlField, TimeGrid, T2_MAX};

/// Hex SHA-256 of the compact JSON form of `value`.
pub fn config_hash<T: Serialize>(value: &T) -> Result<String> {
    let bytes = serde_json::to_vec(value)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldHeader {
    pub n: usize,
    /// Total time in units of `t2max`.
    pub t_rel: f64,
    pub t2max: f64,
    pub slices: usize,
    pub omega: f64,
    pub basis_ordering: String,
    #[serde(default)]
    pub config_hash: String,
}

impl FieldHeader {
    pub fn of(field: &ControlField, config_hash: &str) -> Self {
        Self {
            n: field.n(),
            t_rel: field.grid().relative(),
            t2max: T2_MAX,
            slices: field.slices(),
            omega: field.omega(),
            basis_ordering: BASIS_ORDERING_VERSION.to_string(),
            config_hash: config_hash.to_string(),
        }
    }
}

pub fn write_field_csv(
    path: &Path,
    field: &ControlField,
    basis: &GeneratorTable,
    config_hash: &str,
) -> Result<()> {
    let mut out = String::new();
    out.push_str("# ");
    out.push_str(&serde_json::to_string(&FieldHeader::of(
        field,
        config_hash,
    ))?);
    out.push('\n');
    out.push_str("slice");
    for label in basis.labels() {
        out.push(',');
        out.push_str(&label);
    }
    out.push('\n');
    for m in 0..field.slices() {
        out.push_str(&m.to_string());
        for h in field.slice(m) {
            out.push(',');
            out.push_str(&format!("{h:?}"));
        }
        out.push('\n');
    }
    write_atomic(path, out.as_bytes())
}

/// Reads a field file written by [`write_field_csv`]. The stored time is
/// `t_rel * t2max` from the header, so a round trip is exact.
pub fn read_field_csv(path: &Path, basis: &GeneratorTable) -> Result<(FieldHeader, ControlField)> {
    let file = fs::File::open(path)?;
    let mut lines = BufReader::new(file).lines();
    let parse_err = |msg: String| Error::Parse(format!("{}: {msg}", path.display()));
    let first = lines
        .next()
        .ok_or_else(|| parse_err("empty file".into()))??;
    let json = first
        .strip_prefix("# ")
        .ok_or_else(|| parse_err("missing JSON header line".into()))?;
    let header: FieldHeader = serde_json::from_str(json)?;
    if header.basis_ordering != BASIS_ORDERING_VERSION {
        return Err(parse_err(format!(
            "basis ordering {} is not {BASIS_ORDERING_VERSION}",
            header.basis_ordering
        )));
    }
    if header.n != basis.n() {
        return Err(parse_err(format!(
            "field is for n={}, basis n={}",
            header.n,
            basis.n()
        )));
    }
    let columns = lines
        .next()
        .ok_or_else(|| parse_err("missing column row".into()))??;
    let expected = 1 + basis.len();
    if columns.split(',').count() != expected {
        return Err(parse_err(format!("expected {expected} columns")));
    }
    let mut values = Vec::with_capacity(header.slices * basis.len());
    let mut rows = 0;
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != expected {
            return Err(parse_err(format!("row {rows} has {} cells", cells.len())));
        }
        if cells[0].trim().parse::<usize>().ok() != Some(rows) {
            return Err(parse_err(format!(
                "row {rows} has slice index {}",
                cells[0]
            )));
        }
        for cell in &cells[1..] {
            values.push(
                cell.trim()
                    .parse::<f64>()
                    .map_err(|e| parse_err(format!("row {rows}: {e}")))?,
            );
        }
        rows += 1;
    }
    if rows != header.slices {
        return Err(parse_err(format!(
            "{rows} rows, header says {}",
            header.slices
        )));
    }
    let grid = TimeGrid::new(header.t_rel * header.t2max, header.slices)?;
    let field = ControlField::from_normalized(grid, basis, header.omega, values)?;
    Ok((header, field))
}

/// Writes to a sibling temporary file and renames, so readers never see a
/// half-written file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

/// Inputs of a single solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveInputs {
    pub target: String,
    pub n: usize,
    pub t_rel: f64,
    pub slices: usize,
    pub seed: u64,
    pub omega: f64,
    pub criteria: ConvergenceCriteria,
}

/// Per-cycle row without the wall-clock field, which is kept apart so that
/// repeated runs produce identical numeric records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub cycle: usize,
    pub fidelity_before: f64,
    pub fidelity_after: f64,
    pub violation: bool,
    pub violation_magnitude: f64,
    pub lambda_mean: f64,
    pub lambda_rel_std: f64,
    pub rejected_slices: usize,
    pub degenerate_slices: usize,
}

impl From<&IterationReport> for ReportRow {
    fn from(r: &IterationReport) -> Self {
        Self {
            cycle: r.cycle,
            fidelity_before: r.fidelity_before,
            fidelity_after: r.fidelity_after,
            violation: r.violation,
            violation_magnitude: r.violation_magnitude,
            lambda_mean: r.lambda_mean,
            lambda_rel_std: r.lambda_rel_std,
            rejected_slices: r.rejected_slices,
            degenerate_slices: r.degenerate_slices,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub total_s: f64,
    pub per_cycle_s: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveRecord {
    pub config_hash: String,
    pub basis_ordering: String,
    pub t2max: f64,
    pub inputs: SolveInputs,
    pub status: SolveStatus,
    pub converged: bool,
    pub initial_fidelity: f64,
    pub fidelity: f64,
    pub lambda_record: Vec<f64>,
    pub reports: Vec<ReportRow>,
    /// Field CSV, relative to the record's directory.
    pub field_file: String,
    /// Kept last; the only field that changes between identical runs.
    pub timing: Timing,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::krotov::seed_random_field;
    use crate::pauli::enumerate_basis;

    #[test]
    fn field_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let basis = enumerate_basis(2).unwrap();
        let grid = TimeGrid::from_relative(0.731).unwrap();
        let field = seed_random_field(grid, &basis, 11, 1.0).unwrap();
        let path = dir.path().join("f.csv");
        write_field_csv(&path, &field, &basis, "abc").unwrap();
        let (header, back) = read_field_csv(&path, &basis).unwrap();
        assert_eq!(back.values(), field.values());
        assert_eq!(back.grid().total(), field.grid().total());
        assert_eq!(header.config_hash, "abc");
        assert_eq!(header.basis_ordering, BASIS_ORDERING_VERSION);
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text
            .lines()
            .nth(1)
            .unwrap()
            .starts_with("slice,s1_x,s1_y,s1_z"));
    }

    #[test]
    fn malformed_field_files() {
        let dir = tempfile::tempdir().unwrap();
        let basis = enumerate_basis(1).unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "slice,s1_x,s1_y,s1_z\n0,1,0,0\n").unwrap();
        assert!(matches!(
            read_field_csv(&path, &basis),
            Err(Error::Parse(_))
        ));
        let grid = TimeGrid::new(1.0, 3).unwrap();
        let field = seed_random_field(grid, &basis, 1, 1.0).unwrap();
        write_field_csv(&path, &field, &basis, "").unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let truncated: String = text.lines().take(3).map(|l| format!("{l}\n")).collect();
        std::fs::write(&path, truncated).unwrap();
        assert!(read_field_csv(&path, &basis).is_err());
        assert!(read_field_csv(&path, &enumerate_basis(2).unwrap()).is_err());
    }

    #[test]
    fn hash_is_stable_and_sensitive() {
        let a = config_hash(&("qft", 2, 0.7)).unwrap();
        assert_eq!(a, config_hash(&("qft", 2, 0.7)).unwrap());
        assert_ne!(a, config_hash(&("qft", 2, 0.71)).unwrap());
        assert_eq!(a.len(), 64);
    }
}
