//! Small CSV table helpers for dataset files (RFC 4180, header row required).

use std::collections::BTreeSet;
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TableError {
    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error("column `{0}` not found in header")]
    MissingColumn(String),

    #[error("file has no header row")]
    NoHeader,
}

/// An in-memory CSV table with a header row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Table {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn read(path: &Path) -> Result<Self, TableError> {
        let reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_path(path)?;
        Self::from_reader(reader)
    }

    pub fn parse(bytes: &[u8]) -> Result<Self, TableError> {
        let reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_reader(bytes);
        Self::from_reader(reader)
    }

    fn from_reader<R: std::io::Read>(mut reader: csv::Reader<R>) -> Result<Self, TableError> {
        let headers: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
        if headers.is_empty() || (headers.len() == 1 && headers[0].is_empty()) {
            return Err(TableError::NoHeader);
        }
        let mut rows = Vec::new();
        for record in reader.records() {
            rows.push(record?.iter().map(str::to_string).collect());
        }
        Ok(Self { headers, rows })
    }

    pub fn column_index(&self, name: &str) -> Result<usize, TableError> {
        self.headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| TableError::MissingColumn(name.to_string()))
    }

    pub fn column(&self, name: &str) -> Result<Vec<&str>, TableError> {
        let index = self.column_index(name)?;
        Ok(self.rows.iter().map(|row| row[index].as_str()).collect())
    }

    /// Copy of the table without `name`.
    pub fn without_column(&self, name: &str) -> Result<Table, TableError> {
        let index = self.column_index(name)?;
        let mut headers = self.headers.clone();
        headers.remove(index);
        let rows = self
            .rows
            .iter()
            .map(|row| {
                let mut row = row.clone();
                row.remove(index);
                row
            })
            .collect();
        Ok(Table { headers, rows })
    }

    /// First `n` rows (or all, if fewer).
    pub fn head(&self, n: usize) -> Table {
        Table {
            headers: self.headers.clone(),
            rows: self.rows.iter().take(n).cloned().collect(),
        }
    }

    pub fn to_csv_bytes(&self) -> Vec<u8> {
        let mut writer = csv::Writer::from_writer(Vec::new());
        writer
            .write_record(&self.headers)
            .expect("writing to a Vec cannot fail");
        for row in &self.rows {
            writer
                .write_record(row)
                .expect("writing to a Vec cannot fail");
        }
        writer.into_inner().expect("flushing a Vec cannot fail")
    }
}

/// Distinct values of the label column in a CSV file.
pub fn label_values(path: &Path, label_column: &str) -> Result<BTreeSet<String>, TableError> {
    let table = Table::read(path)?;
    Ok(table
        .column(label_column)?
        .into_iter()
        .map(str::to_string)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strip_and_head() {
        let table = Table::parse(b"sequence,label\nACGT,1\nTTTT,0\nGGGG,1\n").unwrap();
        let stripped = table.without_column("label").unwrap().head(2);
        assert_eq!(stripped.headers, vec!["sequence"]);
        assert_eq!(stripped.rows.len(), 2);
        assert_eq!(stripped.to_csv_bytes(), b"sequence\nACGT\nTTTT\n");
        assert!(matches!(
            table.column("nope"),
            Err(TableError::MissingColumn(_))
        ));
    }

    #[test]
    fn quoted_fields_survive() {
        let table = Table::parse(b"a,b\n\"x,y\",\"he said \"\"hi\"\"\"\n").unwrap();
        assert_eq!(table.rows[0], vec!["x,y", "he said \"hi\""]);
        let again = Table::parse(&table.to_csv_bytes()).unwrap();
        assert_eq!(again, table);
    }
}
