use std::collections::HashMap;

use crate::frame::{num_cmp, CodedColumn, Column, ColumnValues, DType, DataFrame, Value, NULL_CODE};

use super::{AggFn, Aggregate, Comparator, Literal, OpError, OperationSpec};

/// Where an output column's values come from: attribute `column` of input
/// frame `input`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColumnSource {
    pub input: usize,
    pub column: String,
}

/// Maps output structure back onto the inputs.
#[derive(Debug, Clone)]
pub(crate) enum Lineage {
    /// For each input, the source row of every output row (`None` when the
    /// output row did not come from that input, as with union).
    Rows(Vec<Vec<Option<u32>>>),
    /// Group-by: output row `g` is group `g` of the single input.
    Groups(GroupIndex),
}

#[derive(Debug, Clone)]
pub(crate) struct Execution {
    pub output: DataFrame,
    pub lineage: Lineage,
    /// Per output column, the input attributes it is derived from.
    pub sources: Vec<Vec<ColumnSource>>,
}

/// Assignment of input rows to groups, numbered in ascending key order.
#[derive(Debug, Clone)]
pub(crate) struct GroupIndex {
    /// Group of each input row, or `NULL_CODE` when a key is null.
    pub group_of_row: Vec<u32>,
    pub first_row: Vec<u32>,
    pub n_groups: usize,
}

impl GroupIndex {
    pub fn build(frame: &DataFrame, keys: &[String]) -> Result<Self, OpError> {
        let coded: Vec<CodedColumn> = keys
            .iter()
            .map(|k| Ok(CodedColumn::build(require(frame, k)?)))
            .collect::<Result<_, OpError>>()?;
        let n = frame.row_count();
        let mut group_of_row = vec![NULL_CODE; n];
        let mut combos: Vec<Vec<u32>> = Vec::new();
        if coded.len() == 1 {
            // single key: dense ranks are already the sorted group numbering,
            // minus codes that have no rows (none, since codes come from rows)
            let c = &coded[0];
            for (r, g) in group_of_row.iter_mut().enumerate() {
                *g = c.codes[r];
            }
            let mut first_row = vec![u32::MAX; c.cardinality()];
            for (r, &g) in group_of_row.iter().enumerate() {
                if g != NULL_CODE && first_row[g as usize] == u32::MAX {
                    first_row[g as usize] = r as u32;
                }
            }
            return Ok(Self {
                group_of_row,
                n_groups: first_row.len(),
                first_row,
            });
        }
        let mut ids: HashMap<Vec<u32>, u32> = HashMap::new();
        let mut raw_first: Vec<u32> = Vec::new();
        for r in 0..n {
            let key: Vec<u32> = coded.iter().map(|c| c.codes[r]).collect();
            if key.contains(&NULL_CODE) {
                continue;
            }
            let next = ids.len() as u32;
            let id = *ids.entry(key.clone()).or_insert_with(|| {
                combos.push(key);
                raw_first.push(r as u32);
                next
            });
            group_of_row[r] = id;
        }
        let mut order: Vec<u32> = (0..combos.len() as u32).collect();
        order.sort_by(|&a, &b| combos[a as usize].cmp(&combos[b as usize]));
        let mut rank = vec![0u32; order.len()];
        for (i, &g) in order.iter().enumerate() {
            rank[g as usize] = i as u32;
        }
        for g in group_of_row.iter_mut().filter(|g| **g != NULL_CODE) {
            *g = rank[*g as usize];
        }
        let first_row = order.iter().map(|&g| raw_first[g as usize]).collect();
        Ok(Self {
            group_of_row,
            first_row,
            n_groups: combos.len(),
        })
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct Acc {
    rows: u64,
    count: u64,
    sum: f64,
    min: f64,
    max: f64,
}

impl Acc {
    pub fn push(&mut self, v: Option<f64>) {
        self.rows += 1;
        if let Some(v) = v {
            if self.count == 0 {
                self.min = v;
                self.max = v;
            } else {
                self.min = self.min.min(v);
                self.max = self.max.max(v);
            }
            self.count += 1;
            self.sum += v;
        }
    }

    pub fn finish(&self, func: AggFn) -> Option<f64> {
        if func == AggFn::Count {
            return Some(self.count as f64);
        }
        if self.count == 0 {
            return None;
        }
        Some(match func {
            AggFn::Mean => self.sum / self.count as f64,
            AggFn::Sum => self.sum,
            AggFn::Min => self.min,
            AggFn::Max => self.max,
            AggFn::Count => unreachable!(),
        })
    }
}

/// Aggregates `col` per group over the rows where `keep` holds (all rows
/// when `keep` is `None`). The outer `None` marks a group left without any
/// rows; the inner value is the aggregate (null when undefined).
pub(crate) fn group_aggregate(
    groups: &GroupIndex,
    col: &Column,
    func: AggFn,
    keep: Option<&dyn Fn(usize) -> bool>,
) -> Vec<Option<Option<f64>>> {
    let mut accs = vec![Acc::default(); groups.n_groups];
    let mut push = |r: usize, v: Option<f64>| {
        let g = groups.group_of_row[r];
        if g != NULL_CODE && keep.is_none_or(|k| k(r)) {
            accs[g as usize].push(v);
        }
    };
    match col.values() {
        ColumnValues::Numeric(v) => {
            for (r, x) in v.iter().enumerate() {
                push(r, *x);
            }
        }
        // only count reaches here for categorical columns
        ColumnValues::Categorical(v) => {
            for (r, x) in v.iter().enumerate() {
                push(r, x.as_ref().map(|_| 0.0));
            }
        }
    }
    accs.iter()
        .map(|a| (a.rows > 0).then(|| a.finish(func)))
        .collect()
}

fn require<'a>(frame: &'a DataFrame, column: &str) -> Result<&'a Column, OpError> {
    frame.column(column).ok_or_else(|| OpError::UnknownColumn {
        column: column.to_string(),
        frame: frame.name().to_string(),
    })
}

pub(crate) fn check_arity(op: &OperationSpec, n: usize) -> Result<(), OpError> {
    let (ok, expected) = match op {
        OperationSpec::Filter { .. } | OperationSpec::GroupBy { .. } => (n == 1, "exactly 1"),
        OperationSpec::Join { .. } | OperationSpec::Union => (n >= 2, "at least 2"),
    };
    if ok {
        Ok(())
    } else {
        Err(OpError::Arity {
            op: op.kind_name(),
            expected,
            got: n,
        })
    }
}

/// Executes `op` and returns the output frame.
pub fn execute(op: &OperationSpec, inputs: &[DataFrame]) -> Result<DataFrame, OpError> {
    let refs: Vec<&DataFrame> = inputs.iter().collect();
    Ok(run(op, &refs)?.output)
}

pub(crate) fn run(op: &OperationSpec, inputs: &[&DataFrame]) -> Result<Execution, OpError> {
    op.validate()?;
    check_arity(op, inputs.len())?;
    let name = format!("{}_{}", inputs[0].name(), op.kind_name());
    let mut exec = match op {
        OperationSpec::Filter { column, cmp, value } => filter(inputs[0], column, *cmp, value)?,
        OperationSpec::GroupBy { keys, aggs } => group_by(inputs[0], keys, aggs)?,
        OperationSpec::Join { on, .. } => join(inputs, on)?,
        OperationSpec::Union => union(inputs)?,
    };
    exec.output = exec.output.renamed(name);
    Ok(exec)
}

fn identity_sources(frame: &DataFrame) -> Vec<Vec<ColumnSource>> {
    frame
        .column_names()
        .map(|c| {
            vec![ColumnSource {
                input: 0,
                column: c.to_string(),
            }]
        })
        .collect()
}

/// Row mask of a filter predicate; nulls never match.
pub(crate) fn filter_mask(
    frame: &DataFrame,
    column: &str,
    cmp: Comparator,
    value: &Literal,
) -> Result<Vec<bool>, OpError> {
    let col = require(frame, column)?;
    match (col.values(), value) {
        (ColumnValues::Numeric(v), Literal::Number(lit)) => Ok(v
            .iter()
            .map(|x| x.is_some_and(|x| cmp.holds(num_cmp(x, *lit))))
            .collect()),
        (ColumnValues::Categorical(v), Literal::Text(lit)) => Ok(v
            .iter()
            .map(|x| x.as_ref().is_some_and(|x| cmp.holds(x.as_ref().cmp(lit.as_str()))))
            .collect()),
        (_, lit) => Err(OpError::TypeMismatch(format!(
            "cannot compare {} column '{}' with {}",
            col.dtype(),
            column,
            match lit {
                Literal::Number(n) => format!("number {n}"),
                Literal::Text(s) => format!("text '{s}'"),
            }
        ))),
    }
}

fn filter(
    frame: &DataFrame,
    column: &str,
    cmp: Comparator,
    value: &Literal,
) -> Result<Execution, OpError> {
    let mask = filter_mask(frame, column, cmp, value)?;
    let rows: Vec<usize> = (0..mask.len()).filter(|&r| mask[r]).collect();
    Ok(Execution {
        output: frame.take_rows(&rows),
        lineage: Lineage::Rows(vec![rows.iter().map(|&r| Some(r as u32)).collect()]),
        sources: identity_sources(frame),
    })
}

pub(crate) fn check_group_by(
    frame: &DataFrame,
    keys: &[String],
    aggs: &[Aggregate],
) -> Result<(), OpError> {
    for k in keys {
        require(frame, k)?;
    }
    for a in aggs {
        let col = require(frame, &a.column)?;
        if col.dtype() == DType::Categorical && a.func != AggFn::Count {
            return Err(OpError::TypeMismatch(format!(
                "{} needs a numeric column but '{}' is categorical",
                a.func.name(),
                a.column
            )));
        }
    }
    Ok(())
}

fn group_by(frame: &DataFrame, keys: &[String], aggs: &[Aggregate]) -> Result<Execution, OpError> {
    check_group_by(frame, keys, aggs)?;
    let groups = GroupIndex::build(frame, keys)?;
    let first: Vec<usize> = groups.first_row.iter().map(|&r| r as usize).collect();
    let mut columns: Vec<Column> = keys
        .iter()
        .map(|k| require(frame, k).map(|c| c.take(&first)))
        .collect::<Result<_, _>>()?;
    let mut sources: Vec<Vec<ColumnSource>> = keys
        .iter()
        .map(|k| {
            vec![ColumnSource {
                input: 0,
                column: k.clone(),
            }]
        })
        .collect();
    for a in aggs {
        let col = require(frame, &a.column)?;
        let values = group_aggregate(&groups, col, a.func, None)
            .into_iter()
            .map(Option::flatten)
            .collect();
        columns.push(Column::numeric(a.output_name(), values));
        sources.push(vec![ColumnSource {
            input: 0,
            column: a.column.clone(),
        }]);
    }
    let output = DataFrame::with_row_count(frame.name(), columns, groups.n_groups)?;
    Ok(Execution {
        output,
        lineage: Lineage::Groups(groups),
        sources,
    })
}

fn join(inputs: &[&DataFrame], on: &str) -> Result<Execution, OpError> {
    let first = inputs[0];
    let key_dtype = require(first, on)?.dtype();
    for f in &inputs[1..] {
        let dt = require(f, on)?.dtype();
        if dt != key_dtype {
            return Err(OpError::TypeMismatch(format!(
                "join key '{on}' is {key_dtype} in '{}' but {dt} in '{}'",
                first.name(),
                f.name()
            )));
        }
    }

    // left-deep fold: `left` holds, per input seen so far, the source row of
    // every intermediate output row
    let mut left: Vec<Vec<u32>> = vec![(0..first.row_count() as u32).collect()];
    for (i, right) in inputs.iter().enumerate().skip(1) {
        let rkey = require(right, on)?;
        let mut index: HashMap<Value, Vec<u32>> = HashMap::new();
        for r in 0..right.row_count() {
            if let Some(v) = rkey.value(r) {
                index.entry(v).or_default().push(r as u32);
            }
        }
        let lkey = require(first, on)?;
        let mut next: Vec<Vec<u32>> = vec![Vec::new(); i + 1];
        for out_row in 0..left[0].len() {
            let Some(v) = lkey.value(left[0][out_row] as usize) else {
                continue;
            };
            if let Some(matches) = index.get(&v) {
                for &m in matches {
                    for (j, l) in left.iter().enumerate() {
                        next[j].push(l[out_row]);
                    }
                    next[i].push(m);
                }
            }
        }
        left = next;
    }

    let mut columns = Vec::new();
    let mut sources = Vec::new();
    let mut names: Vec<String> = Vec::new();
    for (i, f) in inputs.iter().enumerate() {
        let rows: Vec<usize> = left[i].iter().map(|&r| r as usize).collect();
        for c in f.columns() {
            if c.name() == on {
                if i == 0 {
                    columns.push(c.take(&rows));
                    names.push(on.to_string());
                    sources.push(
                        (0..inputs.len())
                            .map(|input| ColumnSource {
                                input,
                                column: on.to_string(),
                            })
                            .collect(),
                    );
                }
                continue;
            }
            let mut name = c.name().to_string();
            while names.contains(&name) {
                name.push_str("_r");
            }
            columns.push(c.take(&rows).with_name(name.clone()));
            names.push(name);
            sources.push(vec![ColumnSource {
                input: i,
                column: c.name().to_string(),
            }]);
        }
    }
    let n = left[0].len();
    let output = DataFrame::with_row_count(first.name(), columns, n)?;
    Ok(Execution {
        output,
        lineage: Lineage::Rows(
            left.into_iter()
                .map(|l| l.into_iter().map(Some).collect())
                .collect(),
        ),
        sources,
    })
}

fn union(inputs: &[&DataFrame]) -> Result<Execution, OpError> {
    let first = inputs[0];
    let schema = first.schema();
    let mut sorted = schema.clone();
    sorted.sort();
    for f in &inputs[1..] {
        let mut other = f.schema();
        other.sort();
        if other != sorted {
            return Err(OpError::SchemaMismatch(format!(
                "'{}' and '{}' have different columns or dtypes",
                first.name(),
                f.name()
            )));
        }
    }
    let mut columns = Vec::with_capacity(schema.len());
    for (name, _) in &schema {
        let parts: Vec<&Column> = inputs.iter().map(|f| f.column(name).unwrap()).collect();
        columns.push(Column::concat(name, &parts));
    }
    let total: usize = inputs.iter().map(|f| f.row_count()).sum();
    let mut lineage = vec![vec![None; total]; inputs.len()];
    let mut offset = 0;
    for (i, f) in inputs.iter().enumerate() {
        for r in 0..f.row_count() {
            lineage[i][offset + r] = Some(r as u32);
        }
        offset += f.row_count();
    }
    let sources = schema
        .iter()
        .map(|(name, _)| {
            (0..inputs.len())
                .map(|input| ColumnSource {
                    input,
                    column: name.clone(),
                })
                .collect()
        })
        .collect();
    Ok(Execution {
        output: DataFrame::with_row_count(first.name(), columns, total)?,
        lineage: Lineage::Rows(lineage),
        sources,
    })
}
