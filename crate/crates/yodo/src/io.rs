//! Files on disk: CSV tables, checkpoints and reports.

use std::fs;
use std::path::Path;

use yodo_core::checkpoint::{self, SavedModel};
use yodo_core::data::{split_indices, FeatureEncoder, RawRow};
use yodo_core::eval::{format_report, parse_report, MetricsRecord};
use yodo_core::{Dataset, RawTable, Schema};

use crate::error::{Error, Result};

/// Reads an RFC 4180 CSV with a header row. Rows keep their 1-based line numbers.
pub fn read_table(path: &Path) -> Result<RawTable> {
    let csv_err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .from_path(path)
        .map_err(csv_err)?;
    let header = reader.headers().map_err(csv_err)?.iter().map(str::to_owned).collect();
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(csv_err)?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        rows.push(RawRow {
            line,
            cells: record.iter().map(str::to_owned).collect(),
        });
    }
    Ok(RawTable { header, rows })
}

pub fn write_table(table: &RawTable, path: &Path) -> Result<()> {
    let csv_err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(&table.header).map_err(csv_err)?;
    for row in &table.rows {
        w.write_record(&row.cells).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads and encodes a whole CSV, standardising with its own statistics.
pub fn load_csv(path: &Path, schema: &Schema) -> Result<Dataset> {
    Ok(yodo_core::data::encode_table(&read_table(path)?, schema)?)
}

/// Writes features as `x0..x{d-1}` followed by `label` and `group`, the
/// default ingestion schema.
pub fn write_dataset_csv(ds: &Dataset, path: &Path) -> Result<()> {
    let mut header: Vec<String> = (0..ds.dim()).map(|j| format!("x{j}")).collect();
    header.push("label".into());
    header.push("group".into());
    let rows = (0..ds.len())
        .map(|i| {
            let mut cells: Vec<String> = ds.features().row(i).iter().map(|v| v.to_string()).collect();
            cells.push(ds.labels()[i].to_string());
            cells.push(ds.sensitive()[i].to_string());
            RawRow { line: i + 2, cells }
        })
        .collect();
    write_table(&RawTable { header, rows }, path)
}

/// Train/test data produced from one raw table.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub encoder: FeatureEncoder,
    pub train: Dataset,
    pub test: Dataset,
    /// Held-out rows as they appeared in the source file.
    pub test_rows: RawTable,
}

/// Splits raw rows with both groups on each side, fits the encoder on the
/// training rows only and encodes both parts with it.
pub fn prepare(table: &RawTable, schema: &Schema, test_fraction: f64, seed: u64) -> Result<Prepared> {
    let encoder = FeatureEncoder::fit(table, schema)?;
    prepare_with(table, encoder.schema.clone(), test_fraction, seed, None)
}

/// As [`prepare`], reusing `encoder` when given instead of fitting one.
pub fn prepare_with(
    table: &RawTable,
    schema: Schema,
    test_fraction: f64,
    seed: u64,
    encoder: Option<FeatureEncoder>,
) -> Result<Prepared> {
    let sensitive = table.sensitive_values(&schema)?;
    let (train_idx, test_idx) = split_indices(&sensitive, test_fraction, seed)?;
    let train_rows = table.subset(&train_idx);
    let test_rows = table.subset(&test_idx);
    let encoder = match encoder {
        Some(e) => e,
        None => FeatureEncoder::fit(&train_rows, &schema)?,
    };
    let train = encoder.transform(&train_rows)?;
    let test = encoder.transform(&test_rows)?;
    test.validate_groups()?;
    Ok(Prepared {
        encoder,
        train,
        test,
        test_rows,
    })
}

pub fn save_checkpoint(bytes: &[u8], path: &Path) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<SavedModel> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(checkpoint::decode_model(&bytes)?)
}

pub fn emit_report(records: &[MetricsRecord], path: &Path) -> Result<()> {
    fs::write(path, format_report(records)).map_err(|e| Error::io(path, e))
}

pub fn read_report(path: &Path) -> Result<Vec<MetricsRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(parse_report(&text)?)
}

/// Writes `text` to `path`, or to standard output when no path is given.
pub fn write_output(text: &str, path: Option<&Path>) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text).map_err(|e| Error::io(p, e)),
        None => {
            use std::io::Write;
            std::io::stdout()
                .write_all(text.as_bytes())
                .map_err(|e| Error::io("<stdout>", e))
        }
    }
}
