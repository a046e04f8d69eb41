//! Report writers. Every float leaves the tool with at most nine significant
//! digits.

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::ValueEnum;
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

use crate::error::CliError;

pub const SIGNIFICANT_DIGITS: usize = 9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum)]
pub enum Format {
    #[default]
    Csv,
    /// JSON documents; line-delimited for streamed assessments.
    Structured,
}

impl Format {
    pub fn extension(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Structured => "json",
        }
    }
}

pub fn round_sig(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    format!("{:.*e}", SIGNIFICANT_DIGITS - 1, x)
        .parse()
        .expect("scientific notation parses back")
}

fn round_value(value: &mut Value) {
    match value {
        Value::Number(n) if n.is_f64() => {
            let x = n.as_f64().expect("checked f64");
            if let Some(r) = serde_json::Number::from_f64(round_sig(x)) {
                *n = r;
            }
        }
        Value::Array(items) => items.iter_mut().for_each(round_value),
        Value::Object(map) => map.values_mut().for_each(round_value),
        _ => {}
    }
}

/// JSON tree of `item` with every float rounded.
pub fn rounded_value<T: Serialize>(item: &T) -> Value {
    let mut value = serde_json::to_value(item).expect("report types serialise");
    round_value(&mut value);
    value
}

/// `item` with every float rounded, as the same type.
pub fn rounded<T: Serialize + DeserializeOwned>(item: &T) -> T {
    serde_json::from_value(rounded_value(item)).expect("rounding preserves the shape")
}

pub fn to_json<T: Serialize>(item: &T) -> String {
    let mut text =
        serde_json::to_string_pretty(&rounded_value(item)).expect("report types serialise");
    text.push('\n');
    text
}

pub fn to_json_line<T: Serialize>(item: &T) -> String {
    serde_json::to_string(&rounded_value(item)).expect("report types serialise")
}

pub fn to_csv<T: Serialize + DeserializeOwned>(rows: &[T]) -> Result<String, CliError> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    for row in rows {
        writer
            .serialize(rounded(row))
            .map_err(|e| CliError::Data(format!("csv: {e}")))?;
    }
    let bytes = writer
        .into_inner()
        .map_err(|e| CliError::Data(format!("csv: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| CliError::io(parent.display(), e))?;
    }
    fs::write(path, contents).map_err(|e| CliError::io(path.display(), e))
}

/// Line sink for streamed records: a file or standard output, flushed after
/// every line.
pub struct LineSink {
    inner: Box<dyn Write>,
    target: String,
}

impl LineSink {
    pub fn open(path: Option<&PathBuf>) -> Result<Self, CliError> {
        Ok(match path {
            Some(path) => {
                if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                    fs::create_dir_all(parent).map_err(|e| CliError::io(parent.display(), e))?;
                }
                let file = File::create(path).map_err(|e| CliError::io(path.display(), e))?;
                Self {
                    inner: Box::new(BufWriter::new(file)),
                    target: path.display().to_string(),
                }
            }
            None => Self {
                inner: Box::new(io::stdout().lock()),
                target: "stdout".into(),
            },
        })
    }

    pub fn line(&mut self, text: &str) -> Result<(), CliError> {
        writeln!(self.inner, "{text}")
            .and_then(|_| self.inner.flush())
            .map_err(|e| CliError::io(&self.target, e))
    }
}

/// Writes a CSV header and rows one at a time.
pub struct CsvLines {
    header_written: bool,
}

impl CsvLines {
    pub fn new() -> Self {
        Self {
            header_written: false,
        }
    }

    pub fn render<T: Serialize + DeserializeOwned>(&mut self, row: &T) -> Result<String, CliError> {
        let mut writer = csv::WriterBuilder::new()
            .has_headers(!self.header_written)
            .from_writer(Vec::new());
        writer
            .serialize(rounded(row))
            .map_err(|e| CliError::Data(format!("csv: {e}")))?;
        self.header_written = true;
        let bytes = writer
            .into_inner()
            .map_err(|e| CliError::Data(format!("csv: {e}")))?;
        let text = String::from_utf8(bytes).expect("csv output is utf-8");
        Ok(text.trim_end_matches('\n').to_owned())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde::Deserialize;

    #[test]
    fn nine_significant_digits() {
        assert_eq!(round_sig(0.1 + 0.2), 0.3);
        assert_eq!(round_sig(1925.123456789), 1925.12346);
        assert_eq!(round_sig(-2.0 / 3.0), -0.666666667);
        assert_eq!(round_sig(1e-20 / 3.0), 3.33333333e-21);
        assert_eq!(round_sig(0.0), 0.0);
        assert!(round_sig(f64::NAN).is_nan());
    }

    #[derive(Debug, PartialEq, Serialize, Deserialize)]
    struct Row {
        n: u64,
        x: f64,
        y: Option<f64>,
        ok: bool,
    }

    #[test]
    fn integers_are_untouched() {
        let row = Row {
            n: u64::MAX,
            x: 1.0 / 7.0,
            y: None,
            ok: true,
        };
        let r = rounded(&row);
        assert_eq!(r.n, u64::MAX);
        assert_eq!(r.x, 0.142857143);
    }

    #[test]
    fn csv_rows() {
        let rows = [
            Row {
                n: 1,
                x: 2.0 / 3.0,
                y: Some(0.5),
                ok: false,
            },
            Row {
                n: 2,
                x: 0.25,
                y: None,
                ok: true,
            },
        ];
        let text = to_csv(&rows).unwrap();
        assert_eq!(text, "n,x,y,ok\n1,0.666666667,0.5,false\n2,0.25,,true\n");
        let mut lines = CsvLines::new();
        assert_eq!(lines.render(&rows[0]).unwrap(), "n,x,y,ok\n1,0.666666667,0.5,false");
        assert_eq!(lines.render(&rows[1]).unwrap(), "2,0.25,,true");
    }
}
