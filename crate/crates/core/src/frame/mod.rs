//! Columnar in-memory dataframes.
//!
//! A [`DataFrame`] is an ordered list of typed [`Column`]s of equal length.
//! Frames are immutable once built; every operation that "changes" a frame
//! returns a new one. Row identity is positional.

mod csv_io;
mod dist;

use std::collections::HashSet;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use csv_io::{parse_number, read_csv, read_csv_path, read_csv_str, write_csv, CsvOptions};
pub use dist::{column_distribution, num_cmp, DiscreteDistribution, Value};
pub(crate) use dist::{CodedColumn, NULL_CODE};

#[derive(Debug, Error)]
pub enum FrameError {
    #[error("cannot read {path}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("CSV parse error at record {record}: {message}")]
    Parse { record: u64, message: String },
    #[error("input has no data rows")]
    EmptyInput,
    #[error("row index {index} out of range for frame with {len} rows")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("row set was built for a frame of {expected} rows, got {actual}")]
    FrameMismatch { expected: usize, actual: usize },
    #[error("column '{column}' has {len} values, expected {expected}")]
    LengthMismatch {
        column: String,
        len: usize,
        expected: usize,
    },
    #[error("duplicate column name '{0}'")]
    DuplicateColumn(String),
    #[error("column '{0}' has no non-null values")]
    AllNull(String),
    #[error("unknown column '{0}'")]
    UnknownColumn(String),
    #[error("row indices must be strictly increasing (violated at position {0})")]
    UnsortedIndices(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    Numeric,
    Categorical,
}

impl fmt::Display for DType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DType::Numeric => f.write_str("numeric"),
            DType::Categorical => f.write_str("categorical"),
        }
    }
}

/// A single value as seen through the row-oriented accessors.
///
/// `Null` never compares equal to `Text("")` or to `Number(NaN)`.
#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Null,
    Number(f64),
    Text(Arc<str>),
}

impl Cell {
    pub fn is_null(&self) -> bool {
        matches!(self, Cell::Null)
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Number(v)
    }
}

impl From<&str> for Cell {
    fn from(s: &str) -> Self {
        Cell::Text(s.into())
    }
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Cell::Null => Ok(()),
            Cell::Number(v) => write!(f, "{v}"),
            Cell::Text(s) => f.write_str(s),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ColumnValues {
    Numeric(Vec<Option<f64>>),
    Categorical(Vec<Option<Arc<str>>>),
}

impl ColumnValues {
    pub fn len(&self) -> usize {
        match self {
            ColumnValues::Numeric(v) => v.len(),
            ColumnValues::Categorical(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Column {
    name: String,
    values: ColumnValues,
}

impl Column {
    pub fn new(name: impl Into<String>, values: ColumnValues) -> Self {
        Self {
            name: name.into(),
            values,
        }
    }

    pub fn numeric(name: impl Into<String>, values: Vec<Option<f64>>) -> Self {
        Self::new(name, ColumnValues::Numeric(values))
    }

    pub fn categorical<S: AsRef<str>>(name: impl Into<String>, values: Vec<Option<S>>) -> Self {
        let values = values
            .into_iter()
            .map(|v| v.map(|s| Arc::<str>::from(s.as_ref())))
            .collect();
        Self::new(name, ColumnValues::Categorical(values))
    }

    /// Convenience constructor for a numeric column without nulls.
    pub fn from_f64(name: impl Into<String>, values: &[f64]) -> Self {
        Self::numeric(name, values.iter().copied().map(Some).collect())
    }

    /// Convenience constructor for a categorical column without nulls.
    pub fn from_strs(name: impl Into<String>, values: &[&str]) -> Self {
        Self::categorical(name, values.iter().map(|s| Some(*s)).collect())
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dtype(&self) -> DType {
        match self.values {
            ColumnValues::Numeric(_) => DType::Numeric,
            ColumnValues::Categorical(_) => DType::Categorical,
        }
    }

    pub fn values(&self) -> &ColumnValues {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn cell(&self, row: usize) -> Cell {
        match &self.values {
            ColumnValues::Numeric(v) => v[row].map_or(Cell::Null, Cell::Number),
            ColumnValues::Categorical(v) => v[row].clone().map_or(Cell::Null, Cell::Text),
        }
    }

    /// The non-null value at `row`, if any.
    pub fn value(&self, row: usize) -> Option<Value> {
        match &self.values {
            ColumnValues::Numeric(v) => v[row].map(Value::Number),
            ColumnValues::Categorical(v) => v[row].clone().map(Value::Text),
        }
    }

    pub fn is_null(&self, row: usize) -> bool {
        match &self.values {
            ColumnValues::Numeric(v) => v[row].is_none(),
            ColumnValues::Categorical(v) => v[row].is_none(),
        }
    }

    pub fn null_count(&self) -> usize {
        (0..self.len()).filter(|&i| self.is_null(i)).count()
    }

    pub fn as_numeric(&self) -> Option<&[Option<f64>]> {
        match &self.values {
            ColumnValues::Numeric(v) => Some(v),
            ColumnValues::Categorical(_) => None,
        }
    }

    pub fn as_categorical(&self) -> Option<&[Option<Arc<str>>]> {
        match &self.values {
            ColumnValues::Categorical(v) => Some(v),
            ColumnValues::Numeric(_) => None,
        }
    }

    pub fn with_name(&self, name: impl Into<String>) -> Column {
        Column {
            name: name.into(),
            values: self.values.clone(),
        }
    }

    /// Gathers `rows` (in the given order) into a new column.
    pub fn take(&self, rows: &[usize]) -> Column {
        let values = match &self.values {
            ColumnValues::Numeric(v) => ColumnValues::Numeric(rows.iter().map(|&r| v[r]).collect()),
            ColumnValues::Categorical(v) => {
                ColumnValues::Categorical(rows.iter().map(|&r| v[r].clone()).collect())
            }
        };
        Column {
            name: self.name.clone(),
            values,
        }
    }

    pub(crate) fn concat(name: &str, parts: &[&Column]) -> Column {
        let values = match parts.first().map(|c| c.dtype()) {
            Some(DType::Categorical) => ColumnValues::Categorical(
                parts
                    .iter()
                    .flat_map(|c| c.as_categorical().unwrap_or(&[]).iter().cloned())
                    .collect(),
            ),
            _ => ColumnValues::Numeric(
                parts
                    .iter()
                    .flat_map(|c| c.as_numeric().unwrap_or(&[]).iter().copied())
                    .collect(),
            ),
        };
        Column {
            name: name.to_string(),
            values,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataFrame {
    name: String,
    columns: Vec<Column>,
    row_count: usize,
}

impl DataFrame {
    /// Builds a frame, checking that all columns share one length and that
    /// names are unique. A frame with no columns has zero rows.
    pub fn new(name: impl Into<String>, columns: Vec<Column>) -> Result<Self, FrameError> {
        let row_count = columns.first().map_or(0, Column::len);
        Self::with_row_count(name, columns, row_count)
    }

    pub fn with_row_count(
        name: impl Into<String>,
        columns: Vec<Column>,
        row_count: usize,
    ) -> Result<Self, FrameError> {
        let mut seen = HashSet::new();
        for c in &columns {
            if c.len() != row_count {
                return Err(FrameError::LengthMismatch {
                    column: c.name.clone(),
                    len: c.len(),
                    expected: row_count,
                });
            }
            if !seen.insert(c.name.as_str()) {
                return Err(FrameError::DuplicateColumn(c.name.clone()));
            }
        }
        Ok(Self {
            name: name.into(),
            columns,
            row_count,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn renamed(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn row_count(&self) -> usize {
        self.row_count
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn column_names(&self) -> impl Iterator<Item = &str> {
        self.columns.iter().map(|c| c.name.as_str())
    }

    pub fn column(&self, name: &str) -> Option<&Column> {
        self.columns.iter().find(|c| c.name == name)
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    pub fn require(&self, name: &str) -> Result<&Column, FrameError> {
        self.column(name)
            .ok_or_else(|| FrameError::UnknownColumn(name.to_string()))
    }

    /// Column names and dtypes in order.
    pub fn schema(&self) -> Vec<(String, DType)> {
        self.columns
            .iter()
            .map(|c| (c.name.clone(), c.dtype()))
            .collect()
    }

    pub fn row(&self, row: usize) -> Vec<Cell> {
        self.columns.iter().map(|c| c.cell(row)).collect()
    }

    /// Gathers `rows` (positions into this frame, possibly repeated) into a
    /// new frame with the same schema.
    pub fn take_rows(&self, rows: &[usize]) -> DataFrame {
        DataFrame {
            name: self.name.clone(),
            columns: self.columns.iter().map(|c| c.take(rows)).collect(),
            row_count: rows.len(),
        }
    }

    pub fn head(&self, n: usize) -> DataFrame {
        let rows: Vec<usize> = (0..n.min(self.row_count)).collect();
        self.take_rows(&rows)
    }

    /// Returns a copy of this frame without the rows in `drop`, keeping the
    /// original order of the retained rows.
    pub fn remove_rows(&self, drop: &RowIndexSet) -> Result<DataFrame, FrameError> {
        if drop.frame_len() != self.row_count {
            return Err(FrameError::FrameMismatch {
                expected: drop.frame_len(),
                actual: self.row_count,
            });
        }
        Ok(self.take_rows(&drop.complement()))
    }

    /// Keeps only the named columns, in the given order.
    pub fn project(&self, names: &[&str]) -> Result<DataFrame, FrameError> {
        let columns = names
            .iter()
            .map(|n| self.require(n).cloned())
            .collect::<Result<Vec<_>, _>>()?;
        DataFrame::with_row_count(self.name.clone(), columns, self.row_count)
    }
}

/// A sorted set of row positions into one frame.
///
/// Indices are stored as `u32` behind an `Arc`, so clones are cheap.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct RowIndexSet {
    frame_len: usize,
    indices: Arc<[u32]>,
}

impl RowIndexSet {
    /// Builds a set from strictly increasing indices below `frame_len`.
    pub fn new(frame_len: usize, indices: Vec<usize>) -> Result<Self, FrameError> {
        for (i, &idx) in indices.iter().enumerate() {
            if idx >= frame_len {
                return Err(FrameError::IndexOutOfRange {
                    index: idx,
                    len: frame_len,
                });
            }
            if i > 0 && indices[i - 1] >= idx {
                return Err(FrameError::UnsortedIndices(i));
            }
        }
        Ok(Self {
            frame_len,
            indices: indices.into_iter().map(|i| i as u32).collect(),
        })
    }

    /// Sorts and deduplicates arbitrary indices.
    pub fn from_unsorted(
        frame_len: usize,
        indices: impl IntoIterator<Item = usize>,
    ) -> Result<Self, FrameError> {
        let mut v: Vec<usize> = indices.into_iter().collect();
        v.sort_unstable();
        v.dedup();
        Self::new(frame_len, v)
    }

    pub(crate) fn from_sorted_u32(frame_len: usize, indices: Vec<u32>) -> Self {
        debug_assert!(indices.windows(2).all(|w| w[0] < w[1]));
        debug_assert!(indices.last().is_none_or(|&i| (i as usize) < frame_len));
        Self {
            frame_len,
            indices: indices.into(),
        }
    }

    pub fn empty(frame_len: usize) -> Self {
        Self {
            frame_len,
            indices: Arc::from(Vec::new()),
        }
    }

    pub fn all(frame_len: usize) -> Self {
        Self::from_sorted_u32(frame_len, (0..frame_len as u32).collect())
    }

    pub fn frame_len(&self) -> usize {
        self.frame_len
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.indices.iter().map(|&i| i as usize)
    }

    pub fn as_u32(&self) -> &[u32] {
        &self.indices
    }

    pub fn contains(&self, index: usize) -> bool {
        u32::try_from(index).is_ok_and(|i| self.indices.binary_search(&i).is_ok())
    }

    /// Positions of the frame not in this set, ascending.
    pub fn complement(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.frame_len - self.len());
        let mut next = self.indices.iter().peekable();
        for i in 0..self.frame_len {
            if next.peek().is_some_and(|&&d| d as usize == i) {
                next.next();
            } else {
                out.push(i);
            }
        }
        out
    }

    pub fn union(&self, other: &RowIndexSet) -> Result<RowIndexSet, FrameError> {
        if self.frame_len != other.frame_len {
            return Err(FrameError::FrameMismatch {
                expected: self.frame_len,
                actual: other.frame_len,
            });
        }
        let mut v: Vec<u32> = self.indices.iter().chain(other.indices.iter()).copied().collect();
        v.sort_unstable();
        v.dedup();
        Ok(Self::from_sorted_u32(self.frame_len, v))
    }
}

/// Shortest round-trip formatting for labels and captions, falling back to
/// three decimals for long fractional values.
pub fn format_number(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    let s = format!("{v}");
    if s.len() <= 10 {
        s
    } else if v.abs() >= 1e9 || v.abs() < 1e-3 {
        format!("{v:.3e}")
    } else {
        let s = format!("{v:.3}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame3() -> DataFrame {
        DataFrame::new(
            "t",
            vec![
                Column::from_f64("a", &[1.0, 2.0, 3.0]),
                Column::from_strs("b", &["x", "y", "z"]),
            ],
        )
        .unwrap()
    }

    #[test]
    fn remove_single_row_keeps_order() {
        let f = frame3();
        let out = f.remove_rows(&RowIndexSet::new(3, vec![1]).unwrap()).unwrap();
        assert_eq!(out.row_count(), 2);
        assert_eq!(out.row(0), f.row(0));
        assert_eq!(out.row(1), f.row(2));
        assert_eq!(f.row_count(), 3);
    }

    #[test]
    fn remove_nothing_is_identity() {
        let f = frame3();
        assert_eq!(f.remove_rows(&RowIndexSet::empty(3)).unwrap(), f);
    }

    #[test]
    fn remove_everything_keeps_schema() {
        let f = frame3();
        let out = f.remove_rows(&RowIndexSet::all(3)).unwrap();
        assert_eq!(out.row_count(), 0);
        assert_eq!(out.schema(), f.schema());
    }

    #[test]
    fn row_set_validation() {
        assert!(matches!(
            RowIndexSet::new(3, vec![3]),
            Err(FrameError::IndexOutOfRange { index: 3, len: 3 })
        ));
        assert!(RowIndexSet::new(3, vec![1, 1]).is_err());
        let f = frame3();
        assert!(matches!(
            f.remove_rows(&RowIndexSet::empty(4)),
            Err(FrameError::FrameMismatch { .. })
        ));
    }

    #[test]
    fn frame_invariants_enforced() {
        let err = DataFrame::new(
            "t",
            vec![Column::from_f64("a", &[1.0]), Column::from_f64("a", &[2.0])],
        );
        assert!(matches!(err, Err(FrameError::DuplicateColumn(_))));
        let err = DataFrame::new(
            "t",
            vec![Column::from_f64("a", &[1.0]), Column::from_f64("b", &[2.0, 3.0])],
        );
        assert!(matches!(err, Err(FrameError::LengthMismatch { .. })));
    }

    #[test]
    fn null_is_not_empty_text_or_nan() {
        assert_ne!(Cell::Null, Cell::Text("".into()));
        assert_ne!(Cell::Null, Cell::Number(f64::NAN));
    }

    #[test]
    fn number_formatting() {
        assert_eq!(format_number(1990.0), "1990");
        assert_eq!(format_number(-7.49), "-7.49");
        assert_eq!(format_number(1.0 / 3.0), "0.333");
    }

    proptest::proptest! {
        #[test]
        fn sequential_removal_equals_union_removal(
            len in 1usize..40,
            picks in proptest::collection::vec((0usize..40, proptest::bool::ANY), 0..40),
        ) {
            let col: Vec<f64> = (0..len).map(|i| i as f64).collect();
            let f = DataFrame::new("p", vec![Column::from_f64("a", &col)]).unwrap();
            let r: Vec<usize> = picks.iter().filter(|(i, s)| *i < len && *s).map(|p| p.0).collect();
            let s: Vec<usize> = picks.iter().filter(|(i, s)| *i < len && !*s).map(|p| p.0)
                .filter(|i| !r.contains(i)).collect();
            let r = RowIndexSet::from_unsorted(len, r).unwrap();
            let s = RowIndexSet::from_unsorted(len, s).unwrap();
            let once = f.remove_rows(&r).unwrap();
            // re-index S into the reduced frame
            let kept = r.complement();
            let s_prime = RowIndexSet::from_unsorted(
                once.row_count(),
                s.iter().map(|i| kept.binary_search(&i).unwrap()),
            ).unwrap();
            let twice = once.remove_rows(&s_prime).unwrap();
            proptest::prop_assert_eq!(twice, f.remove_rows(&r.union(&s).unwrap()).unwrap());
        }
    }
}
