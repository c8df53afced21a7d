//! Row partitions of input frames: labelled, pairwise-disjoint bins plus an
//! ignore-set that is never offered as an explanation.

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Serialize, Serializer};
use thiserror::Error;

use crate::frame::{
    format_number, CodedColumn, Column, DType, DataFrame, FrameError, RowIndexSet, Value,
    NULL_CODE,
};
use crate::ops::ExploratoryStep;

#[derive(Debug, Error)]
pub enum PartitionError {
    #[error("attribute '{0}' is not numeric")]
    NotNumeric(String),
    #[error("attribute '{0}' has no non-null values")]
    AllNull(String),
    #[error("'{b}' is not many-to-one with '{a}'")]
    NotManyToOne { a: String, b: String },
    #[error("bin count must be at least 1")]
    ZeroBins,
    #[error("invalid partition from scheme '{scheme}': {reason}")]
    InvalidPartition { scheme: String, reason: String },
    #[error("partition scheme '{0}' is already registered")]
    DuplicateScheme(String),
    #[error(transparent)]
    Frame(#[from] FrameError),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BinKind {
    Value,
    Interval { lo: f64, hi: f64 },
    MappedValue { via_attribute: String },
}

/// One labelled set of rows of an input frame.
#[derive(Debug, Clone, PartialEq)]
pub struct RowSet {
    pub rows: RowIndexSet,
    pub label: String,
    pub source_attribute: String,
    pub bin_kind: BinKind,
}

impl RowSet {
    /// Human-readable predicate describing the rows, e.g. `decade = 1990s`.
    pub fn description(&self) -> String {
        match &self.bin_kind {
            BinKind::Value => format!("{} = {}", self.source_attribute, self.label),
            BinKind::Interval { .. } => format!("{} in {}", self.source_attribute, self.label),
            BinKind::MappedValue { via_attribute } => format!("{via_attribute} = {}", self.label),
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum PartitionMethod {
    Frequency,
    NumericEqualFreq,
    ManyToOne,
    Custom(String),
}

impl PartitionMethod {
    pub fn name(&self) -> &str {
        match self {
            PartitionMethod::Frequency => "frequency",
            PartitionMethod::NumericEqualFreq => "numeric",
            PartitionMethod::ManyToOne => "many_to_one",
            PartitionMethod::Custom(n) => n,
        }
    }
}

impl fmt::Display for PartitionMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl Serialize for PartitionMethod {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RowPartition {
    /// Index of the input frame the rows belong to.
    pub input: usize,
    /// Attribute the partition is keyed on (A for many-to-one).
    pub attribute: String,
    pub method: PartitionMethod,
    pub n: usize,
    pub bins: Vec<RowSet>,
    pub ignore_set: RowSet,
}

impl RowPartition {
    pub fn frame_len(&self) -> usize {
        self.ignore_set.rows.frame_len()
    }

    /// Stable identifier, e.g. `0:year:many_to_one(decade):5`.
    pub fn id(&self) -> String {
        let method = match (&self.method, self.bins.first().map(|b| &b.bin_kind)) {
            (PartitionMethod::ManyToOne, Some(BinKind::MappedValue { via_attribute })) => {
                format!("many_to_one({via_attribute})")
            }
            (m, _) => m.name().to_string(),
        };
        format!("{}:{}:{}:{}", self.input, self.attribute, method, self.n)
    }

    /// Bin index of every row; `u32::MAX` marks the ignore-set.
    pub fn assignment(&self) -> Vec<u32> {
        let mut out = vec![u32::MAX; self.frame_len()];
        for (b, bin) in self.bins.iter().enumerate() {
            for &r in bin.rows.as_u32() {
                out[r as usize] = b as u32;
            }
        }
        out
    }

    /// Checks that bins and ignore-set exactly cover the frame's rows
    /// without overlap, and that every bin is labelled and non-empty.
    pub fn validate(&self, frame_len: usize) -> Result<(), String> {
        let mut seen = vec![false; frame_len];
        for set in self.bins.iter().chain(std::iter::once(&self.ignore_set)) {
            if set.rows.frame_len() != frame_len {
                return Err(format!(
                    "row set '{}' indexes a frame of {} rows, expected {frame_len}",
                    set.label,
                    set.rows.frame_len()
                ));
            }
            for r in set.rows.iter() {
                if std::mem::replace(&mut seen[r], true) {
                    return Err(format!("row {r} appears in more than one set"));
                }
            }
        }
        if let Some(r) = seen.iter().position(|s| !s) {
            return Err(format!("row {r} is not covered"));
        }
        if let Some(b) = self.bins.iter().find(|b| b.label.is_empty() || b.rows.is_empty()) {
            return Err(format!("bin '{}' is empty or unlabelled", b.label));
        }
        let mut labels = HashSet::from([IGNORE_LABEL]);
        if let Some(b) = self.bins.iter().find(|b| !labels.insert(b.label.as_str())) {
            return Err(format!("label '{}' is used twice", b.label));
        }
        Ok(())
    }
}

fn ignore_of(frame_len: usize, attribute: &str, bins: &[RowSet]) -> RowSet {
    let mut used = vec![false; frame_len];
    for b in bins {
        for &r in b.rows.as_u32() {
            used[r as usize] = true;
        }
    }
    let rest: Vec<u32> = (0..frame_len as u32).filter(|&r| !used[r as usize]).collect();
    RowSet {
        rows: RowIndexSet::from_sorted_u32(frame_len, rest),
        label: IGNORE_LABEL.into(),
        source_attribute: attribute.to_string(),
        bin_kind: BinKind::Value,
    }
}

/// Makes labels unique within a partition (distinct values can format to
/// the same text) and keeps them clear of the ignore-set's "other".
fn dedupe_labels(bins: &mut [RowSet]) {
    let mut seen: HashSet<String> = HashSet::from([IGNORE_LABEL.to_string()]);
    for b in bins.iter_mut() {
        let mut label = b.label.clone();
        let mut k = 2;
        while !seen.insert(label.clone()) {
            label = format!("{} #{k}", b.label);
            k += 1;
        }
        b.label = label;
    }
}

/// Label of the ignore-set.
pub const IGNORE_LABEL: &str = "other";

fn value_label(v: &Value) -> String {
    match v {
        Value::Number(x) => format_number(*x),
        Value::Text(s) => s.to_string(),
    }
}

/// Rows of each code, in row order.
fn rows_by_code(coded: &CodedColumn) -> Vec<Vec<u32>> {
    let mut out = vec![Vec::new(); coded.cardinality()];
    for (r, &c) in coded.codes.iter().enumerate() {
        if c != NULL_CODE {
            out[c as usize].push(r as u32);
        }
    }
    out
}

fn frequency_bins(
    coded: &CodedColumn,
    frame_len: usize,
    n: usize,
    kind: impl Fn() -> BinKind,
    source: &str,
) -> Vec<RowSet> {
    let mut groups = rows_by_code(coded);
    // codes are value-ordered, so a stable sort by count keeps value order on ties
    let mut order: Vec<usize> = (0..groups.len()).collect();
    order.sort_by_key(|&c| std::cmp::Reverse(groups[c].len()));
    let mut bins: Vec<RowSet> = order
        .into_iter()
        .take(n)
        .map(|c| RowSet {
            rows: RowIndexSet::from_sorted_u32(frame_len, std::mem::take(&mut groups[c])),
            label: value_label(&coded.values[c]),
            source_attribute: source.to_string(),
            bin_kind: kind(),
        })
        .collect();
    dedupe_labels(&mut bins);
    bins
}

/// One bin for each of the `n` most frequent non-null values of `attribute`
/// (ties by ascending value); everything else, nulls included, is ignored.
pub fn frequency_partition(
    frame: &DataFrame,
    attribute: &str,
    n: usize,
) -> Result<RowPartition, PartitionError> {
    if n == 0 {
        return Err(PartitionError::ZeroBins);
    }
    let coded = CodedColumn::build(frame.require(attribute)?);
    Ok(frequency_from(frame.row_count(), attribute, &coded, n))
}

fn frequency_from(frame_len: usize, attribute: &str, coded: &CodedColumn, n: usize) -> RowPartition {
    let bins = frequency_bins(coded, frame_len, n, || BinKind::Value, attribute);
    RowPartition {
        input: 0,
        attribute: attribute.to_string(),
        method: PartitionMethod::Frequency,
        n,
        ignore_set: ignore_of(frame_len, attribute, &bins),
        bins,
    }
}

/// Equal-frequency intervals over a numeric attribute. Equal values always
/// share a bin, so sizes deviate from `rows / n` by the ties at the
/// boundaries and fewer than `n` bins come out when there are fewer
/// distinct values. Nulls form the ignore-set.
pub fn numeric_partition(
    frame: &DataFrame,
    attribute: &str,
    n: usize,
) -> Result<RowPartition, PartitionError> {
    if n == 0 {
        return Err(PartitionError::ZeroBins);
    }
    let col = frame.require(attribute)?;
    if col.dtype() != DType::Numeric {
        return Err(PartitionError::NotNumeric(attribute.to_string()));
    }
    numeric_from(frame.row_count(), attribute, &CodedColumn::build(col), n)
}

/// `coded` must code a numeric column.
fn numeric_from(
    frame_len: usize,
    attribute: &str,
    coded: &CodedColumn,
    n: usize,
) -> Result<RowPartition, PartitionError> {
    let groups = rows_by_code(coded);
    let m: usize = groups.iter().map(Vec::len).sum();
    if m == 0 {
        return Err(PartitionError::AllNull(attribute.to_string()));
    }
    let target = |j: usize| (j * m).div_ceil(n);
    let mut bins = Vec::new();
    let mut j = 1;
    let mut cum = 0;
    let mut start = 0;
    for c in 0..groups.len() {
        cum += groups[c].len();
        if cum >= target(j) {
            while j <= n && target(j) <= cum {
                j += 1;
            }
            let mut rows: Vec<u32> = groups[start..=c].iter().flatten().copied().collect();
            rows.sort_unstable();
            let lo = coded.values[start].as_f64().unwrap_or(f64::NAN);
            let hi = coded.values[c].as_f64().unwrap_or(f64::NAN);
            bins.push(RowSet {
                rows: RowIndexSet::from_sorted_u32(frame_len, rows),
                label: format!("[{}, {}]", format_number(lo), format_number(hi)),
                source_attribute: attribute.to_string(),
                bin_kind: BinKind::Interval { lo, hi },
            });
            start = c + 1;
        }
    }
    dedupe_labels(&mut bins);
    Ok(RowPartition {
        input: 0,
        attribute: attribute.to_string(),
        method: PartitionMethod::NumericEqualFreq,
        n,
        ignore_set: ignore_of(frame_len, attribute, &bins),
        bins,
    })
}

/// Whether `b` is a strict coarsening of `a`: every value of `a` maps to a
/// single value of `b`, and some value of `b` is shared by two different
/// values of `a`. Rows where either attribute is null are not considered.
fn is_many_to_one(a: &CodedColumn, b: &CodedColumn) -> bool {
    let mut map = vec![NULL_CODE; a.cardinality()];
    let mut domain = 0usize;
    for (&ca, &cb) in a.codes.iter().zip(&b.codes) {
        if ca == NULL_CODE || cb == NULL_CODE {
            continue;
        }
        let slot = &mut map[ca as usize];
        if *slot == NULL_CODE {
            *slot = cb;
            domain += 1;
        } else if *slot != cb {
            return false;
        }
    }
    let image: HashSet<u32> = map.iter().copied().filter(|&c| c != NULL_CODE).collect();
    image.len() < domain
}

/// Attributes B that `attribute` maps onto many-to-one, in frame order.
pub fn mine_many_to_one(frame: &DataFrame, attribute: &str) -> Result<Vec<String>, PartitionError> {
    let a = CodedColumn::build(frame.require(attribute)?);
    let coded: Vec<(String, CodedColumn)> = frame
        .columns()
        .iter()
        .filter(|c| c.name() != attribute)
        .map(|c| (c.name().to_string(), CodedColumn::build(c)))
        .collect();
    Ok(mine_coded(&a, &coded))
}

fn mine_coded(a: &CodedColumn, others: &[(String, CodedColumn)]) -> Vec<String> {
    others
        .iter()
        .filter(|(_, b)| is_many_to_one(a, b))
        .map(|(n, _)| n.clone())
        .collect()
}

/// Frequency partition over `b`, offered as a partition of `a`.
pub fn many_to_one_partition(
    frame: &DataFrame,
    a: &str,
    b: &str,
    n: usize,
) -> Result<RowPartition, PartitionError> {
    if n == 0 {
        return Err(PartitionError::ZeroBins);
    }
    let ca = CodedColumn::build(frame.require(a)?);
    let col_b = frame.require(b)?;
    if a == b || !is_many_to_one(&ca, &CodedColumn::build(col_b)) {
        return Err(PartitionError::NotManyToOne {
            a: a.to_string(),
            b: b.to_string(),
        });
    }
    Ok(m2o_from(frame.row_count(), a, col_b.name(), &CodedColumn::build(col_b), n))
}

fn m2o_from(frame_len: usize, a: &str, b: &str, coded_b: &CodedColumn, n: usize) -> RowPartition {
    let via = b.to_string();
    let bins = frequency_bins(
        coded_b,
        frame_len,
        n,
        || BinKind::MappedValue {
            via_attribute: via.clone(),
        },
        a,
    );
    RowPartition {
        input: 0,
        attribute: a.to_string(),
        method: PartitionMethod::ManyToOne,
        n,
        ignore_set: ignore_of(frame_len, a, &bins),
        bins,
    }
}

/// A user-defined way of partitioning the rows of a frame by one attribute.
pub trait PartitionScheme: Send + Sync {
    /// `None` when the scheme does not apply to the attribute.
    fn partition(&self, frame: &DataFrame, attribute: &str, n: usize) -> Option<Vec<RowSet>>;
}

/// Groups date-like text values (`YYYY-MM-DD...`) by year or by month.
/// Applies only to categorical attributes whose non-null values all start
/// with a date.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatePrefix {
    Year,
    Month,
}

impl DatePrefix {
    fn prefix(self, s: &str) -> Option<&str> {
        let b = s.as_bytes();
        let ok = b.len() >= 10
            && b[..4].iter().all(u8::is_ascii_digit)
            && b[4] == b'-'
            && b[5..7].iter().all(u8::is_ascii_digit)
            && b[7] == b'-'
            && b[8..10].iter().all(u8::is_ascii_digit);
        ok.then(|| match self {
            DatePrefix::Year => &s[..4],
            DatePrefix::Month => &s[..7],
        })
    }
}

impl PartitionScheme for DatePrefix {
    fn partition(&self, frame: &DataFrame, attribute: &str, n: usize) -> Option<Vec<RowSet>> {
        let values = frame.column(attribute)?.as_categorical()?;
        let mut prefixes: Vec<Option<&str>> = Vec::with_capacity(values.len());
        for v in values {
            match v {
                None => prefixes.push(None),
                Some(s) => prefixes.push(Some(self.prefix(s)?)),
            }
        }
        if prefixes.iter().all(Option::is_none) {
            return None;
        }
        let derived = Column::categorical(attribute, prefixes);
        Some(frequency_bins(
            &CodedColumn::build(&derived),
            derived.len(),
            n,
            || BinKind::Value,
            attribute,
        ))
    }
}

/// Named custom schemes, checked against a sample frame when registered.
#[derive(Clone, Default)]
pub struct PartitionRegistry {
    schemes: Vec<(String, Arc<dyn PartitionScheme>)>,
}

impl fmt::Debug for PartitionRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list()
            .entries(self.schemes.iter().map(|s| &s.0))
            .finish()
    }
}

fn custom_partition(
    name: &str,
    scheme: &dyn PartitionScheme,
    frame: &DataFrame,
    attribute: &str,
    n: usize,
) -> Option<Result<RowPartition, PartitionError>> {
    let bins = scheme.partition(frame, attribute, n)?;
    let p = RowPartition {
        input: 0,
        attribute: attribute.to_string(),
        method: PartitionMethod::Custom(name.to_string()),
        n,
        ignore_set: ignore_of(frame.row_count(), attribute, &bins),
        bins,
    };
    Some(
        p.validate(frame.row_count())
            .map(|_| p)
            .map_err(|reason| PartitionError::InvalidPartition {
                scheme: name.to_string(),
                reason,
            }),
    )
}

impl PartitionRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers `scheme` after running it over every attribute of
    /// `sample` with each of `bin_counts` and validating the results.
    pub fn register(
        &mut self,
        name: impl Into<String>,
        scheme: Arc<dyn PartitionScheme>,
        sample: &DataFrame,
        bin_counts: &[usize],
    ) -> Result<(), PartitionError> {
        let name = name.into();
        if self.schemes.iter().any(|s| s.0 == name) {
            return Err(PartitionError::DuplicateScheme(name));
        }
        for attr in sample.column_names() {
            for &n in bin_counts {
                if let Some(r) = custom_partition(&name, scheme.as_ref(), sample, attr, n) {
                    r?;
                }
            }
        }
        self.schemes.push((name, scheme));
        Ok(())
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.schemes.iter().map(|s| s.0.as_str())
    }

    pub fn is_empty(&self) -> bool {
        self.schemes.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct PartitionConfig {
    pub bin_counts: Vec<usize>,
    pub many_to_one: bool,
    /// Numeric attributes with more distinct values than this are not
    /// mined as the A side of a many-to-one pair.
    pub m2o_max_distinct: usize,
    pub custom: PartitionRegistry,
}

impl Default for PartitionConfig {
    fn default() -> Self {
        Self {
            bin_counts: vec![5, 10],
            many_to_one: true,
            m2o_max_distinct: 1000,
            custom: PartitionRegistry::default(),
        }
    }
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct PartitionDiagnostics {
    /// `(partition description, reason)` for partitions that were dropped.
    pub rejected: Vec<(String, String)>,
}

/// Every partition of one frame, in a fixed order: per attribute,
/// frequency then numeric then custom for each bin count, followed by
/// many-to-one partitions.
pub fn frame_partitions(
    frame: &DataFrame,
    config: &PartitionConfig,
    diag: &mut PartitionDiagnostics,
) -> Vec<RowPartition> {
    let names: Vec<&str> = frame.column_names().collect();
    let mut ns: Vec<usize> = config.bin_counts.iter().copied().filter(|&n| n > 0).collect();
    ns.dedup();

    let frame_len = frame.row_count();
    // coded once, shared by every method and bin count
    let coded: Vec<CodedColumn> = frame.columns().par_iter().map(CodedColumn::build).collect();

    let per_attr: Vec<(Vec<RowPartition>, Vec<(String, String)>)> = names
        .par_iter()
        .zip(&coded)
        .map(|(&attr, c)| {
            let mut out = Vec::new();
            let mut rejected = Vec::new();
            let is_numeric = frame.column(attr).map(Column::dtype) == Some(DType::Numeric);
            for &n in &ns {
                let p = frequency_from(frame_len, attr, c, n);
                if !p.bins.is_empty() {
                    out.push(p);
                }
                if is_numeric {
                    if let Ok(p) = numeric_from(frame_len, attr, c, n) {
                        out.push(p);
                    }
                }
                for (name, scheme) in &config.custom.schemes {
                    match custom_partition(name, scheme.as_ref(), frame, attr, n) {
                        Some(Ok(p)) if !p.bins.is_empty() => out.push(p),
                        Some(Err(e)) => rejected.push((format!("{attr}:{name}:{n}"), e.to_string())),
                        _ => {}
                    }
                }
            }
            (out, rejected)
        })
        .collect();
    let mut out = Vec::new();
    for (parts, rejected) in per_attr {
        out.extend(parts);
        diag.rejected.extend(rejected);
    }

    if config.many_to_one && names.len() >= 2 {
        let pairs: Vec<Vec<(usize, usize)>> = (0..coded.len())
            .into_par_iter()
            .map(|i| {
                let a = &coded[i];
                let skip = frame.columns()[i].dtype() == DType::Numeric
                    && a.cardinality() > config.m2o_max_distinct;
                if skip {
                    return Vec::new();
                }
                (0..coded.len())
                    .filter(|&j| j != i && is_many_to_one(a, &coded[j]))
                    .map(|j| (i, j))
                    .collect()
            })
            .collect();
        // the bins only depend on B, so keep one partition per (B, n)
        let mut seen_b = BTreeSet::new();
        for (i, j) in pairs.into_iter().flatten() {
            if !seen_b.insert(j) {
                continue;
            }
            for &n in &ns {
                let p = m2o_from(frame_len, names[i], names[j], &coded[j], n);
                if !p.bins.is_empty() {
                    out.push(p);
                }
            }
        }
    }
    out
}

/// Partitions of every input frame of the step, tagged with the input index.
pub fn all_partitions(
    step: &ExploratoryStep,
    config: &PartitionConfig,
    diag: &mut PartitionDiagnostics,
) -> Vec<RowPartition> {
    let mut out = Vec::new();
    for (i, frame) in step.inputs().iter().enumerate() {
        for mut p in frame_partitions(frame, config, diag) {
            p.input = i;
            out.push(p);
        }
    }
    out
}
