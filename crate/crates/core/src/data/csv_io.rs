//! Comma-separated input with a header row.

use std::path::Path;

use super::Dataset;
use crate::error::{Error, Result};
use crate::nn::Matrix;

fn parse_error(path: &Path, line: u64, msg: impl Into<String>) -> Error {
    Error::Parse {
        location: format!("{}:{line}", path.display()),
        message: msg.into(),
    }
}

/// Load a dataset, normalizing the target columns and standardizing the input columns.
///
/// Line numbers in errors count the header as line 1.
pub fn load_csv(path: &Path, x_columns: &[&str], y_columns: &[&str]) -> Result<Dataset> {
    if y_columns.is_empty() || x_columns.is_empty() {
        return Err(Error::invalid(
            "at least one input and one target column are required",
        ));
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => parse_error(path, 1, format!("{other:?}")),
        })?;
    let headers = reader
        .headers()
        .map_err(|e| parse_error(path, 1, e.to_string()))?
        .clone();
    let locate = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::Schema(format!("column {name} not found in {}", path.display())))
    };
    let x_idx = x_columns
        .iter()
        .map(|c| locate(c))
        .collect::<Result<Vec<_>>>()?;
    let y_idx = y_columns
        .iter()
        .map(|c| locate(c))
        .collect::<Result<Vec<_>>>()?;

    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let line = row as u64 + 2;
        let record = record.map_err(|e| parse_error(path, line, e.to_string()))?;
        if record.len() != headers.len() {
            return Err(parse_error(
                path,
                line,
                format!("expected {} fields, found {}", headers.len(), record.len()),
            ));
        }
        let cell = |j: usize| -> Result<f64> {
            let raw = record[j].trim();
            raw.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| {
                    parse_error(
                        path,
                        line,
                        format!("column {}: non-numeric value {raw:?}", &headers[j]),
                    )
                })
        };
        for &j in &x_idx {
            xs.push(cell(j)?);
        }
        for &j in &y_idx {
            ys.push(cell(j)?);
        }
    }
    let n = xs.len() / x_idx.len();
    if n == 0 {
        return Err(parse_error(path, 2, "no data rows"));
    }
    let x = Matrix::from_shape_vec((n, x_idx.len()), xs).expect("row-major inputs");
    let y = Matrix::from_shape_vec((n, y_idx.len()), ys).expect("row-major targets");
    let mut ds = Dataset::from_raw(x, y, format!("csv:{}", path.display()))?;
    ds.standardize_inputs()?;
    Ok(ds)
}

/// Write raw inputs and original-unit targets with headers `x1..xp, y1..yq`.
pub fn write_csv(ds: &Dataset, path: &Path) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::invalid(format!("{other:?}")),
    })?;
    let io_err = |e: csv::Error| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::invalid(format!("{other:?}")),
    };
    let header: Vec<String> = (1..=ds.x_dim())
        .map(|j| format!("x{j}"))
        .chain((1..=ds.y_dim()).map(|j| format!("y{j}")))
        .collect();
    writer.write_record(&header).map_err(io_err)?;
    let x = match &ds.x_scaling {
        Some((mean, std)) => {
            let mut x = ds.x.clone();
            for (mut col, (m, s)) in x.columns_mut().into_iter().zip(mean.iter().zip(std)) {
                col.mapv_inplace(|v| v * s + m);
            }
            x
        }
        None => ds.x.clone(),
    };
    let y = ds.denormalize(&ds.y);
    for (xr, yr) in x.rows().into_iter().zip(y.rows()) {
        let fields: Vec<String> = xr
            .iter()
            .chain(yr.iter())
            .map(|v| format!("{v:?}"))
            .collect();
        writer.write_record(&fields).map_err(io_err)?;
    }
    writer.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(dir: &tempfile::TempDir, name: &str, body: &str) -> std::path::PathBuf {
        let path = dir.path().join(name);
        std::fs::File::create(&path)
            .unwrap()
            .write_all(body.as_bytes())
            .unwrap();
        path
    }

    #[test]
    fn three_rows_population_std() {
        let dir = tempfile::tempdir().unwrap();
        let path = write(&dir, "a.csv", "x,y\n0,1\n1,2\n5,3\n");
        let ds = load_csv(&path, &["x"], &["y"]).unwrap();
        assert_eq!(ds.y_mean, vec![2.0]);
        assert!((ds.y_std[0] - (2.0f64 / 3.0).sqrt()).abs() < 1e-15);
        let back = ds.denormalize(&ds.y);
        for (a, b) in back.iter().zip([1.0, 2.0, 3.0]) {
            assert!((a - b).abs() < 1e-10);
        }
        assert!(ds.x_scaling.is_some());
    }

    #[test]
    fn missing_column_is_schema_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = write(&dir, "a.csv", "x,z\n0,1\n1,2\n");
        match load_csv(&path, &["x"], &["y"]) {
            Err(Error::Schema(msg)) => assert!(msg.contains("column y")),
            other => panic!("expected schema error, got {other:?}"),
        }
    }

    #[test]
    fn non_numeric_cell_reports_location() {
        let dir = tempfile::tempdir().unwrap();
        let path = write(&dir, "a.csv", "x,y\n0,1\n1,abc\n2,3\n");
        match load_csv(&path, &["x"], &["y"]) {
            Err(Error::Parse { location, message }) => {
                assert!(location.ends_with(":3"), "{location}");
                assert!(message.contains("abc"));
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn ragged_row_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = write(&dir, "a.csv", "x,y\n0,1\n1\n");
        assert!(matches!(
            load_csv(&path, &["x"], &["y"]),
            Err(Error::Parse { .. })
        ));
    }

    #[test]
    fn write_then_load_preserves_targets() {
        let dir = tempfile::tempdir().unwrap();
        let x = ndarray::array![[0.5, 1.0], [1.5, -1.0], [2.0, 0.0]];
        let y = ndarray::array![[3.0, 1.0], [4.0, 0.0], [-2.0, 5.0]];
        let ds = Dataset::from_raw(x, y.clone(), "t").unwrap();
        let path = dir.path().join("d.csv");
        write_csv(&ds, &path).unwrap();
        let back = load_csv(&path, &["x1", "x2"], &["y1", "y2"]).unwrap();
        let yb = back.denormalize(&back.y);
        for (a, b) in yb.iter().zip(y.iter()) {
            assert!((a - b).abs() < 1e-10);
        }
    }
}
