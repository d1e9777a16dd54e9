//! Reading observation tables and writing delimited outputs.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use npglm::{build_dataset, Dataset, DatasetSchema, RawRow};

use crate::error::{csv_error, CliError, CliResult};

pub const RESPONSE: &str = "y";
pub const GROUP: &str = "state";
pub const AGE: &str = "age";
pub const LEVEL: &str = "child";

fn schema_error(row: Option<usize>, message: String) -> CliError {
    CliError::Model(npglm::Error::Schema { row, message })
}

fn parse_value(field: &str, column: &str, row: usize) -> CliResult<f64> {
    let f = field.trim();
    if f.is_empty() || f.eq_ignore_ascii_case("na") || f == "." {
        return Err(schema_error(Some(row), format!("missing value in column '{column}'")));
    }
    f.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| schema_error(Some(row), format!("'{f}' in column '{column}' is not a number")))
}

fn parse_index(field: &str, column: &str, row: usize) -> CliResult<usize> {
    let v = parse_value(field, column, row)?;
    if v < 0.0 || v.fract() != 0.0 {
        return Err(schema_error(Some(row), format!("'{field}' in column '{column}' is not a count")));
    }
    Ok(v as usize)
}

/// Read a comma-separated table with columns y, state, age, child and one
/// column per schema covariate. Other columns are ignored with a warning.
/// Row numbers in errors count data rows from 1.
pub fn read_dataset(path: &Path, schema: &DatasetSchema) -> CliResult<Dataset> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let headers = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    if headers.iter().all(str::is_empty) {
        return Err(schema_error(None, "empty input: no header row".into()));
    }
    let position = |name: &str| headers.iter().position(|h| h == name);
    let mut required = vec![RESPONSE, GROUP, AGE, LEVEL];
    required.extend(schema.covariates.iter().map(|c| c.name()));
    let mut index = Vec::with_capacity(required.len());
    for name in &required {
        index.push(
            position(name)
                .ok_or_else(|| schema_error(None, format!("missing column '{name}'")))?,
        );
    }
    for h in headers.iter().filter(|h| !required.contains(h)) {
        log::warn!("ignoring column '{h}' in {}", path.display());
    }

    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| csv_error(path, e))?;
        let field = |k: usize| record.get(index[k]).unwrap_or("");
        let covariates = (4..required.len())
            .map(|k| parse_value(field(k), required[k], row))
            .collect::<CliResult<_>>()?;
        rows.push(RawRow {
            y: parse_value(field(0), RESPONSE, row)?,
            group: parse_index(field(1), GROUP, row)?,
            age: parse_value(field(2), AGE, row)?,
            level: parse_index(field(3), LEVEL, row)?,
            covariates,
        });
    }
    Ok(build_dataset(&rows, schema)?)
}

pub fn write_dataset(path: &Path, data: &Dataset) -> CliResult<()> {
    let mut header = vec![RESPONSE.to_string(), GROUP.into(), AGE.into(), LEVEL.into()];
    header.extend(data.schema().covariates.iter().map(|c| c.name().to_string()));
    let rows = data.to_raw_rows().into_iter().map(|r| {
        let mut out = vec![r.y.to_string(), r.group.to_string(), r.age.to_string(), r.level.to_string()];
        out.extend(r.covariates.iter().map(f64::to_string));
        out
    });
    write_table(path, &header, rows)
}

pub fn create(path: &Path) -> CliResult<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| CliError::io(path, e))
}

/// Write a header and rows as CSV.
pub fn write_table<I, R, S>(path: &Path, header: &[S], rows: I) -> CliResult<()>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator,
    R::Item: AsRef<[u8]>,
    S: AsRef<[u8]>,
{
    let mut out = create(path)?;
    write_csv(&mut out, header, rows).map_err(|e| csv_error(path, e))?;
    out.flush().map_err(|e| CliError::io(path, e))
}

pub fn write_csv<W, I, R, S>(out: W, header: &[S], rows: I) -> csv::Result<()>
where
    W: Write,
    I: IntoIterator<Item = R>,
    R: IntoIterator,
    R::Item: AsRef<[u8]>,
    S: AsRef<[u8]>,
{
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header)?;
    for row in rows {
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(())
}
