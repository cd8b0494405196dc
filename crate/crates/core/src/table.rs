//! Delimited numeric tables with a header row.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::regress::Dataset;

/// A table split into response and covariates.
#[derive(Debug, Clone)]
pub struct Table {
    /// Design column names, starting with `intercept`.
    pub names: Vec<String>,
    pub data: Dataset,
}

/// Reads a table, taking `response` as the response column and every other
/// column as a covariate, in file order.
///
/// Rows in errors are numbered from 1 for the first data row.
pub fn read_table<R: Read>(reader: R, delimiter: u8, response: &str) -> Result<Table> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = rdr
        .headers()
        .map_err(|e| Error::Parse { row: 0, column: String::new(), message: e.to_string() })?
        .clone();
    let columns: Vec<String> = header.iter().map(str::to_string).collect();
    let y_col = columns
        .iter()
        .position(|c| c == response)
        .ok_or_else(|| Error::InvalidData(format!("no column named `{response}`")))?;
    if let Some(dup) = columns.iter().enumerate().find(|(i, c)| columns[..*i].contains(c)) {
        return Err(Error::InvalidData(format!("duplicate column `{}`", dup.1)));
    }

    let k = columns.len();
    let mut design = Vec::new();
    let mut y = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| Error::Parse { row, column: String::new(), message: e.to_string() })?;
        let mut xs = Vec::with_capacity(k);
        xs.push(1.0);
        for (c, field) in record.iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| Error::Parse {
                row,
                column: columns[c].clone(),
                message: format!("`{field}` is not a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse { row, column: columns[c].clone(), message: format!("`{field}` is not finite") });
            }
            if c == y_col {
                y.push(v);
            } else {
                xs.push(v);
            }
        }
        design.extend_from_slice(&xs);
    }

    let mut names = vec!["intercept".to_string()];
    names.extend(columns.iter().enumerate().filter(|&(c, _)| c != y_col).map(|(_, n)| n.clone()));
    Ok(Table { names, data: Dataset::new(design, k, y)? })
}

/// Writes a dataset with named covariates (intercept excluded) and response.
pub fn write_table<W: Write>(writer: W, names: &[String], response: &str, data: &Dataset) -> Result<()> {
    let io = |e: csv::Error| Error::Io(e.to_string());
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<&str> = names.iter().skip(1).map(String::as_str).collect();
    header.push(response);
    w.write_record(&header).map_err(io)?;
    for (row, y) in data.rows().zip(data.response()) {
        let fields: Vec<String> = row[1..].iter().chain(std::iter::once(y)).map(f64::to_string).collect();
        w.write_record(&fields).map_err(io)?;
    }
    w.flush().map_err(|e| Error::Io(e.to_string()))
}
