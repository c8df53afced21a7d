use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use super::{Column, ColumnValues, DType, DataFrame, FrameError};

#[derive(Debug, Clone)]
pub struct CsvOptions {
    pub delimiter: u8,
    pub header: bool,
    /// Field contents (after trimming) that are read as null.
    pub null_tokens: Vec<String>,
    /// Forced dtypes by column name; inference applies to the rest.
    pub dtypes: HashMap<String, DType>,
}

impl Default for CsvOptions {
    fn default() -> Self {
        Self {
            delimiter: b',',
            header: true,
            null_tokens: vec![String::new(), "NA".into(), "null".into()],
            dtypes: HashMap::new(),
        }
    }
}

/// Parses an integer or decimal literal with optional sign and exponent.
/// Anything else (including `inf`, `NaN`, hex) is rejected.
pub fn parse_number(s: &str) -> Option<f64> {
    let b = s.as_bytes();
    let mut i = 0;
    if i < b.len() && (b[i] == b'+' || b[i] == b'-') {
        i += 1;
    }
    let int_start = i;
    while i < b.len() && b[i].is_ascii_digit() {
        i += 1;
    }
    let mut digits = i - int_start;
    if i < b.len() && b[i] == b'.' {
        i += 1;
        let frac_start = i;
        while i < b.len() && b[i].is_ascii_digit() {
            i += 1;
        }
        digits += i - frac_start;
    }
    if digits == 0 {
        return None;
    }
    if i < b.len() && (b[i] == b'e' || b[i] == b'E') {
        i += 1;
        if i < b.len() && (b[i] == b'+' || b[i] == b'-') {
            i += 1;
        }
        let exp_start = i;
        while i < b.len() && b[i].is_ascii_digit() {
            i += 1;
        }
        if i == exp_start {
            return None;
        }
    }
    if i != b.len() {
        return None;
    }
    s.parse::<f64>().ok()
}

pub fn read_csv_path(path: impl AsRef<Path>, opts: &CsvOptions) -> Result<DataFrame, FrameError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| FrameError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "data".into());
    read_csv(name, std::io::BufReader::new(file), opts)
}

pub fn read_csv_str(name: &str, text: &str, opts: &CsvOptions) -> Result<DataFrame, FrameError> {
    read_csv(name, text.as_bytes(), opts)
}

pub fn read_csv<R: Read>(
    name: impl Into<String>,
    reader: R,
    opts: &CsvOptions,
) -> Result<DataFrame, FrameError> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(opts.delimiter)
        .has_headers(opts.header)
        .trim(csv::Trim::All)
        .flexible(false)
        .from_reader(reader);

    let mut names: Option<Vec<String>> = if opts.header {
        let h = rdr.headers().map_err(csv_error)?;
        Some(h.iter().map(str::to_string).collect())
    } else {
        None
    };

    let mut raw: Vec<Vec<Option<String>>> = names
        .as_ref()
        .map(|n| vec![Vec::new(); n.len()])
        .unwrap_or_default();
    let mut record = csv::StringRecord::new();
    let mut rows = 0usize;
    while rdr.read_record(&mut record).map_err(csv_error)? {
        if raw.is_empty() && names.is_none() {
            raw = vec![Vec::new(); record.len()];
        }
        for (col, field) in raw.iter_mut().zip(record.iter()) {
            let is_null = opts.null_tokens.iter().any(|t| t == field);
            col.push(if is_null { None } else { Some(field.to_string()) });
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(FrameError::EmptyInput);
    }
    let names = names
        .take()
        .unwrap_or_else(|| (0..raw.len()).map(|i| format!("c{i}")).collect());

    let mut columns = Vec::with_capacity(raw.len());
    for (name, tokens) in names.into_iter().zip(raw) {
        let dtype = match opts.dtypes.get(&name) {
            Some(d) => *d,
            None if tokens.iter().flatten().all(|t| parse_number(t).is_some()) => DType::Numeric,
            None => DType::Categorical,
        };
        let values = match dtype {
            DType::Numeric => {
                let mut out = Vec::with_capacity(tokens.len());
                for (row, t) in tokens.into_iter().enumerate() {
                    out.push(match t {
                        None => None,
                        Some(t) => Some(parse_number(&t).ok_or_else(|| FrameError::Parse {
                            record: row as u64 + 1,
                            message: format!("'{t}' in numeric column '{name}' is not a number"),
                        })?),
                    });
                }
                ColumnValues::Numeric(out)
            }
            DType::Categorical => {
                let mut interned: HashMap<String, Arc<str>> = HashMap::new();
                ColumnValues::Categorical(
                    tokens
                        .into_iter()
                        .map(|t| {
                            t.map(|t| {
                                interned
                                    .entry(t)
                                    .or_insert_with_key(|k| Arc::from(k.as_str()))
                                    .clone()
                            })
                        })
                        .collect(),
                )
            }
        };
        columns.push(Column::new(name, values));
    }
    DataFrame::with_row_count(name, columns, rows)
}

fn csv_error(e: csv::Error) -> FrameError {
    let record = e.position().map_or(0, |p| p.record());
    let message = match e.kind() {
        csv::ErrorKind::UnequalLengths {
            expected_len, len, ..
        } => format!("ragged row: expected {expected_len} fields, found {len}"),
        _ => e.to_string(),
    };
    if let csv::ErrorKind::Io(_) = e.kind() {
        return FrameError::Io {
            path: "<stream>".into(),
            source: match e.into_kind() {
                csv::ErrorKind::Io(io) => io,
                _ => unreachable!(),
            },
        };
    }
    FrameError::Parse { record, message }
}

/// Writes `frame` as RFC-4180 CSV with a header row. Nulls become empty
/// fields; numbers use shortest round-trip formatting.
pub fn write_csv<W: Write>(frame: &DataFrame, writer: W) -> Result<(), FrameError> {
    let mut w = csv::Writer::from_writer(writer);
    let io = |e: csv::Error| FrameError::Io {
        path: "<csv writer>".into(),
        source: std::io::Error::other(e.to_string()),
    };
    if frame.columns().is_empty() {
        return Ok(());
    }
    w.write_record(frame.column_names()).map_err(io)?;
    let mut buf: Vec<String> = Vec::with_capacity(frame.columns().len());
    for row in 0..frame.row_count() {
        buf.clear();
        for c in frame.columns() {
            buf.push(c.cell(row).to_string());
        }
        w.write_record(&buf).map_err(io)?;
    }
    w.flush().map_err(|source| FrameError::Io {
        path: "<csv writer>".into(),
        source,
    })
}
