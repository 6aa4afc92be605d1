//! CSV plumbing: numeric tables with an optional auto-detected header.

use std::path::Path;

use spicereg::Matrix;

use crate::CliError;

/// Numeric CSV contents: a dense row-major table.
pub struct NumericTable {
    pub data: Matrix,
}

impl NumericTable {
    pub fn rows(&self) -> usize {
        self.data.rows()
    }

    pub fn cols(&self) -> usize {
        self.data.cols()
    }

    /// Splits off the final column as the target.
    pub fn split_target(&self) -> (Matrix, Vec<f64>) {
        let (n, w) = (self.rows(), self.cols());
        let mut x = Matrix::with_cols(w - 1);
        let mut y = Vec::with_capacity(n);
        for i in 0..n {
            let row = self.data.row(i);
            x.push_row(&row[..w - 1]).expect("fixed width");
            y.push(row[w - 1]);
        }
        (x, y)
    }
}

/// Reads a comma-separated numeric table. A single leading header row is
/// tolerated and skipped when any of its fields fails to parse as a
/// number. Ragged rows and non-numeric data elsewhere are errors carrying
/// the 1-based line number.
pub fn read_numeric_csv(path: &Path) -> Result<NumericTable, CliError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_path(path)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;

    let mut data: Option<Matrix> = None;
    for (index, record) in reader.records().enumerate() {
        let record = record.map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        let line = record.position().map_or(index as u64 + 1, |p| p.line());
        let mut values = Vec::with_capacity(record.len());
        let mut parse_failure = false;
        for field in record.iter() {
            match field.trim().parse::<f64>() {
                Ok(v) => values.push(v),
                Err(_) => {
                    parse_failure = true;
                    break;
                }
            }
        }
        if parse_failure {
            if index == 0 {
                // Header row.
                continue;
            }
            return Err(CliError::Data(format!(
                "{}: line {line}: non-numeric field",
                path.display()
            )));
        }
        let table = data.get_or_insert_with(|| Matrix::with_cols(values.len()));
        table.push_row(&values).map_err(|_| {
            CliError::Data(format!(
                "{}: line {line}: expected {} fields, got {}",
                path.display(),
                table.cols(),
                values.len()
            ))
        })?;
    }

    match data {
        Some(data) if data.rows() > 0 => Ok(NumericTable { data }),
        _ => Err(CliError::Data(format!("{}: no rows", path.display()))),
    }
}

/// Writes rows of floats under the given header, either to the path or,
/// when `path` is `None`, to standard output.
pub fn write_csv(
    path: Option<&Path>,
    header: &[&str],
    rows: impl Iterator<Item = Vec<f64>>,
) -> Result<(), CliError> {
    let sink: Box<dyn std::io::Write> = match path {
        Some(path) => Box::new(
            std::fs::File::create(path)
                .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?,
        ),
        None => Box::new(std::io::stdout()),
    };
    let mut writer = csv::Writer::from_writer(sink);
    writer.write_record(header).map_err(|e| CliError::Data(e.to_string()))?;
    for row in rows {
        writer
            .write_record(row.iter().map(|v| format!("{v}")))
            .map_err(|e| CliError::Data(e.to_string()))?;
    }
    writer.flush().map_err(|e| CliError::Data(e.to_string()))?;
    Ok(())
}
