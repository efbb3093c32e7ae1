//! Grouped data sets as CSV: a header row, numeric variable columns and one
//! group label column.

use std::collections::BTreeSet;
use std::path::Path;

use lmebn::GroupedDataset;

use crate::error::{CliError, CliResult};

pub const DEFAULT_GROUP_COLUMN: &str = "F";

/// Integer labels sort numerically, anything else lexicographically.
pub fn sort_labels(labels: BTreeSet<String>) -> Vec<String> {
    let mut out: Vec<String> = labels.into_iter().collect();
    if out.iter().all(|l| l.parse::<i64>().is_ok()) {
        out.sort_by_key(|l| l.parse::<i64>().unwrap());
    }
    out
}

pub fn read_dataset(path: &Path, group_col: &str) -> CliResult<GroupedDataset> {
    let file = std::fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    parse_dataset(file, group_col).map_err(|e| match e {
        CliError::Data(m) => CliError::Data(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn parse_dataset<R: std::io::Read>(reader: R, group_col: &str) -> CliResult<GroupedDataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| CliError::Data(format!("unreadable header: {e}")))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let gcol = header
        .iter()
        .position(|h| h == group_col)
        .ok_or_else(|| CliError::Data(format!("missing group column {group_col:?}")))?;
    if header.iter().filter(|h| *h == group_col).count() > 1 {
        return Err(CliError::Data(format!("group column {group_col:?} appears twice")));
    }
    let var_cols: Vec<usize> = (0..header.len()).filter(|&c| c != gcol).collect();
    if var_cols.is_empty() {
        return Err(CliError::Data("no variable columns".into()));
    }
    let mut columns: Vec<Vec<f64>> = vec![Vec::new(); var_cols.len()];
    let mut raw_groups = Vec::new();
    for (k, record) in rdr.records().enumerate() {
        // line 1 is the header
        let line = k + 2;
        let record = record.map_err(|e| CliError::Data(format!("line {line}: {e}")))?;
        if record.len() != header.len() {
            return Err(CliError::Data(format!(
                "line {line}: {} fields, header has {}",
                record.len(),
                header.len()
            )));
        }
        let label = record[gcol].trim();
        if label.is_empty() {
            return Err(CliError::Data(format!("line {line}, column {group_col}: missing group label")));
        }
        raw_groups.push(label.to_string());
        for (slot, &c) in var_cols.iter().enumerate() {
            let cell = record[c].trim();
            let value: f64 = cell.parse().map_err(|_| {
                if cell.is_empty() {
                    CliError::Data(format!("line {line}, column {}: missing value", header[c]))
                } else {
                    CliError::Data(format!("line {line}, column {}: not a number: {cell:?}", header[c]))
                }
            })?;
            if !value.is_finite() {
                return Err(CliError::Data(format!("line {line}, column {}: non-finite value", header[c])));
            }
            columns[slot].push(value);
        }
    }
    if raw_groups.is_empty() {
        return Err(CliError::Data("no data rows".into()));
    }
    let labels = sort_labels(raw_groups.iter().cloned().collect());
    let groups = raw_groups
        .iter()
        .map(|l| labels.iter().position(|x| x == l).unwrap())
        .collect();
    let names = var_cols.iter().map(|&c| header[c].clone()).collect();
    Ok(GroupedDataset::new(names, columns, groups, labels)?)
}

pub fn write_dataset(path: &Path, data: &GroupedDataset, group_col: &str) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let write = |w: &mut csv::Writer<std::fs::File>| -> csv::Result<()> {
        let mut header: Vec<&str> = data.names().iter().map(String::as_str).collect();
        header.push(group_col);
        w.write_record(&header)?;
        for k in 0..data.n_rows() {
            let mut rec: Vec<String> = data.row(k).iter().map(|v| v.to_string()).collect();
            rec.push(data.labels()[data.groups()[k]].clone());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    };
    write(&mut w).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}
