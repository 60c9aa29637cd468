//! Dataset CSV files: a header row, one row per sample, every column numeric.

use std::path::Path;

use paced_forest_core::data::{self, Dataset, Sample};

use crate::error::{CliError, Result};

/// Shortest-looking but lossless float text: 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Loads a dataset; the target column is named, every other column is a
/// feature in file order. Sample ids are row indices from 0. Groups use
/// `group_width`-wide bins covering the targets.
pub fn load_csv(path: &Path, target_column: &str, group_width: f64) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    let headers = reader
        .headers()
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?
        .clone();
    let target = headers
        .iter()
        .position(|h| h.trim() == target_column)
        .ok_or_else(|| CliError::Input(format!("{}: no column named {target_column:?}", path.display())))?;
    let mut samples = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| CliError::Input(format!("{}: row {row}: {e}", path.display())))?;
        if record.len() != headers.len() {
            return Err(CliError::Input(format!(
                "{}: row {row}: expected {} cells, found {}",
                path.display(),
                headers.len(),
                record.len()
            )));
        }
        let mut x = Vec::with_capacity(headers.len() - 1);
        let mut y = 0.0;
        for (col, cell) in record.iter().enumerate() {
            let v: f64 = cell.trim().parse().map_err(|_| {
                CliError::Input(format!(
                    "{}: row {row}, column {:?}: not a number: {cell:?}",
                    path.display(),
                    &headers[col]
                ))
            })?;
            if !v.is_finite() {
                return Err(CliError::Input(format!("{}: row {row}: non-finite value", path.display())));
            }
            if col == target {
                y = v;
            } else {
                x.push(v);
            }
        }
        samples.push(Sample::original(row as u64, x, y));
    }
    if samples.is_empty() {
        return Err(CliError::Input(format!("{}: no data rows", path.display())));
    }
    let ys: Vec<f64> = samples.iter().map(|s| s.y).collect();
    let edges = data::covering_edges(&ys, group_width)?;
    Ok(Dataset::new(samples, headers.len() - 1, edges)?)
}

/// Writes features as `x0..x{D-1}` followed by the target column.
pub fn write_csv(ds: &Dataset, path: &Path, target_column: &str) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    let mut header: Vec<String> = (0..ds.dim()).map(|j| format!("x{j}")).collect();
    header.push(target_column.to_string());
    let csv_err = |e: csv::Error| CliError::Input(format!("{}: {e}", path.display()));
    w.write_record(&header).map_err(csv_err)?;
    for s in ds.samples() {
        let mut row: Vec<String> = s.x.iter().map(|&v| fmt_f64(v)).collect();
        row.push(fmt_f64(s.y));
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush().map_err(CliError::io(path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use paced_forest_core::data::{generate_synthetic, ImbalanceSpec};

    #[test]
    fn reads_three_rows() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        std::fs::write(&p, "a,b,y\n1,2,3\n4,5,6\n7,8,9.5\n").unwrap();
        let ds = load_csv(&p, "y", 1.0).unwrap();
        assert_eq!((ds.len(), ds.dim()), (3, 2));
        assert_eq!(ds.samples()[2].x, vec![7.0, 8.0]);
        assert_eq!(ds.samples()[2].y, 9.5);
    }

    #[test]
    fn text_cell_names_the_row() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        std::fs::write(&p, "a,y\n1,2\nfoo,3\n").unwrap();
        let msg = load_csv(&p, "y", 1.0).unwrap_err().to_string();
        assert!(msg.contains("row 1"), "{msg}");
    }

    #[test]
    fn round_trip_is_exact() {
        let ds = generate_synthetic(&ImbalanceSpec::two_component_benchmark(), 50, 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        write_csv(&ds, &p, "y").unwrap();
        let back = load_csv(&p, "y", 1.0).unwrap();
        assert_eq!(back.len(), ds.len());
        for (a, b) in ds.samples().iter().zip(back.samples()) {
            assert_eq!((a.id, &a.x, a.y), (b.id, &b.x, b.y));
        }
    }

    #[test]
    fn written_floats_keep_nine_digits() {
        assert_eq!(fmt_f64(0.5).parse::<f64>().unwrap(), 0.5);
        let digits = fmt_f64(1.0 / 3.0).split('e').next().unwrap().replace(['.', '-'], "").len();
        assert!(digits >= 9);
    }
}
