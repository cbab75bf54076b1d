//! Minimal numeric CSV reading and writing.
//!
//! Every file starts with one `# schema: <name>/v<k>` comment line followed
//! by a header row. Floats are written with 17 significant digits so values
//! round-trip exactly. Lines end with `\n`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const SCHEMA_PREFIX: &str = "# schema: stochctl/";

/// 17 significant digits in scientific notation.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Accumulates a CSV document in memory.
#[derive(Debug, Clone)]
pub struct CsvDoc {
    buf: String,
    columns: usize,
}

impl CsvDoc {
    pub fn new(schema: &str, header: &[&str]) -> Self {
        let mut buf = String::new();
        let _ = writeln!(buf, "{SCHEMA_PREFIX}{schema}");
        buf.push_str(&header.join(","));
        buf.push('\n');
        CsvDoc {
            buf,
            columns: header.len(),
        }
    }

    pub fn with_header(schema: &str, header: Vec<String>) -> Self {
        let refs: Vec<&str> = header.iter().map(String::as_str).collect();
        CsvDoc::new(schema, &refs)
    }

    /// Appends a row; `fields` must match the header width.
    pub fn row(&mut self, fields: &[String]) {
        debug_assert_eq!(fields.len(), self.columns);
        self.buf.push_str(&fields.join(","));
        self.buf.push('\n');
    }

    /// Appends a free-form comment line (e.g. a summary).
    pub fn comment(&mut self, text: &str) {
        self.buf.push_str("# ");
        self.buf.push_str(text);
        self.buf.push('\n');
    }

    pub fn as_str(&self) -> &str {
        &self.buf
    }

    pub fn into_string(self) -> String {
        self.buf
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.buf.as_bytes()).map_err(|e| Error::io(path, e))
    }
}

/// A parsed CSV table: header plus string rows with their 1-based line numbers.
#[derive(Debug, Clone)]
pub struct CsvTable {
    pub path: std::path::PathBuf,
    pub comments: Vec<String>,
    pub header: Vec<String>,
    pub rows: Vec<(usize, Vec<String>)>,
}

impl CsvTable {
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(path, &text)
    }

    pub fn parse(path: &Path, text: &str) -> Result<Self> {
        let mut header = None;
        let mut rows = Vec::new();
        let mut comments = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if let Some(c) = line.strip_prefix('#') {
                comments.push(c.trim().to_string());
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<String> = line.split(',').map(|s| s.trim().to_string()).collect();
            if header.is_none() {
                header = Some(fields);
            } else {
                let width = header.as_ref().map_or(0, Vec::len);
                if fields.len() != width {
                    return Err(Error::Parse {
                        path: path.to_path_buf(),
                        line: idx + 1,
                        message: format!("expected {width} fields, found {}", fields.len()),
                    });
                }
                rows.push((idx + 1, fields));
            }
        }
        let header = header.ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            message: "missing header".into(),
        })?;
        Ok(CsvTable {
            path: path.to_path_buf(),
            comments,
            header,
            rows,
        })
    }

    pub fn expect_header(&self, expected: &[&str]) -> Result<()> {
        if self.header.iter().map(String::as_str).eq(expected.iter().copied()) {
            Ok(())
        } else {
            Err(self.error(1, format!("expected header {}", expected.join(","))))
        }
    }

    pub fn column(&self, name: &str) -> Result<usize> {
        self.header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| self.error(1, format!("missing column {name}")))
    }

    pub fn error(&self, line: usize, message: impl Into<String>) -> Error {
        Error::Parse {
            path: self.path.clone(),
            line,
            message: message.into(),
        }
    }

    pub fn f64_at(&self, line: usize, field: &str) -> Result<f64> {
        field
            .parse::<f64>()
            .map_err(|_| self.error(line, format!("not a number: {field:?}")))
    }

    pub fn usize_at(&self, line: usize, field: &str) -> Result<usize> {
        field
            .parse::<usize>()
            .map_err(|_| self.error(line, format!("not an index: {field:?}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_format_round_trips() {
        for v in [0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23, 0.0] {
            let s = fmt_f64(v);
            assert_eq!(s.parse::<f64>().unwrap(), v);
        }
        assert_eq!(fmt_f64(0.5), "5.0000000000000000e-1");
    }

    #[test]
    fn parse_skips_comments_and_checks_width() {
        let ok = CsvTable::parse(Path::new("x.csv"), "# schema: a/v1\na,b\n1,2\n# tail\n3,4\n").unwrap();
        assert_eq!(ok.header, vec!["a", "b"]);
        assert_eq!(ok.rows.len(), 2);
        assert_eq!(ok.rows[1].0, 5);
        let bad = CsvTable::parse(Path::new("x.csv"), "a,b\n1\n");
        assert!(matches!(bad, Err(Error::Parse { line: 2, .. })));
    }
}
