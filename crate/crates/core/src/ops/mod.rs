//! The four supported exploratory operations: filter, group-by, inner join
//! and union. Operations are written in a small DSL (or its JSON encoding),
//! executed over immutable frames, and bundled with their inputs and output
//! into an [`ExploratoryStep`].

mod exec;
mod parse;
mod step;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frame::FrameError;

pub use exec::execute;
pub use exec::ColumnSource;
pub(crate) use exec::{group_aggregate, Lineage};
pub use parse::{parse_operation, parse_operation_any};
pub use step::{make_step, ExploratoryStep};

#[derive(Debug, Error)]
pub enum OpError {
    #[error("syntax error at token {token} (offset {offset}): {message}")]
    Syntax {
        token: usize,
        offset: usize,
        message: String,
    },
    #[error("invalid operation JSON: {0}")]
    Json(String),
    #[error("invalid operation: {0}")]
    InvalidSpec(String),
    #[error("unknown column '{column}' in frame '{frame}'")]
    UnknownColumn { column: String, frame: String },
    #[error("type mismatch: {0}")]
    TypeMismatch(String),
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("{op} expects {expected} input frame(s), got {got}")]
    Arity {
        op: &'static str,
        expected: &'static str,
        got: usize,
    },
    #[error(transparent)]
    Frame(#[from] FrameError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Comparator {
    #[serde(rename = "<")]
    Lt,
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = ">")]
    Gt,
    #[serde(rename = ">=")]
    Ge,
    #[serde(rename = "==")]
    Eq,
    #[serde(rename = "!=")]
    Ne,
}

impl Comparator {
    pub fn symbol(self) -> &'static str {
        match self {
            Comparator::Lt => "<",
            Comparator::Le => "<=",
            Comparator::Gt => ">",
            Comparator::Ge => ">=",
            Comparator::Eq => "==",
            Comparator::Ne => "!=",
        }
    }

    pub fn holds(self, ord: std::cmp::Ordering) -> bool {
        use std::cmp::Ordering::*;
        match self {
            Comparator::Lt => ord == Less,
            Comparator::Le => ord != Greater,
            Comparator::Gt => ord == Greater,
            Comparator::Ge => ord != Less,
            Comparator::Eq => ord == Equal,
            Comparator::Ne => ord != Equal,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Literal {
    Number(f64),
    Text(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AggFn {
    Mean,
    Sum,
    Count,
    Min,
    Max,
}

impl AggFn {
    pub fn name(self) -> &'static str {
        match self {
            AggFn::Mean => "mean",
            AggFn::Sum => "sum",
            AggFn::Count => "count",
            AggFn::Min => "min",
            AggFn::Max => "max",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Some(match s.to_ascii_lowercase().as_str() {
            "mean" | "avg" => AggFn::Mean,
            "sum" => AggFn::Sum,
            "count" => AggFn::Count,
            "min" => AggFn::Min,
            "max" => AggFn::Max,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Aggregate {
    #[serde(rename = "fn")]
    pub func: AggFn,
    pub column: String,
}

impl Aggregate {
    pub fn new(func: AggFn, column: impl Into<String>) -> Self {
        Self {
            func,
            column: column.into(),
        }
    }

    /// Name of the output column holding this aggregate, e.g. `mean_loudness`.
    pub fn output_name(&self) -> String {
        format!("{}_{}", self.func.name(), self.column)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JoinKind {
    #[default]
    Inner,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "lowercase")]
pub enum OperationSpec {
    Filter {
        column: String,
        cmp: Comparator,
        value: Literal,
    },
    #[serde(rename = "groupby")]
    GroupBy {
        keys: Vec<String>,
        aggs: Vec<Aggregate>,
    },
    Join {
        on: String,
        #[serde(default)]
        kind: JoinKind,
    },
    Union,
}

impl OperationSpec {
    pub fn filter(column: impl Into<String>, cmp: Comparator, value: Literal) -> Self {
        OperationSpec::Filter {
            column: column.into(),
            cmp,
            value,
        }
    }

    pub fn group_by(keys: &[&str], aggs: Vec<Aggregate>) -> Self {
        OperationSpec::GroupBy {
            keys: keys.iter().map(|s| s.to_string()).collect(),
            aggs,
        }
    }

    pub fn join(on: impl Into<String>) -> Self {
        OperationSpec::Join {
            on: on.into(),
            kind: JoinKind::Inner,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            OperationSpec::Filter { .. } => "filter",
            OperationSpec::GroupBy { .. } => "groupby",
            OperationSpec::Join { .. } => "join",
            OperationSpec::Union => "union",
        }
    }

    pub fn is_group_by(&self) -> bool {
        matches!(self, OperationSpec::GroupBy { .. })
    }

    /// Structural checks that do not need the input frames.
    pub fn validate(&self) -> Result<(), OpError> {
        if let OperationSpec::GroupBy { keys, aggs } = self {
            if keys.is_empty() || aggs.is_empty() {
                return Err(OpError::InvalidSpec(
                    "group-by needs at least one key and one aggregate".into(),
                ));
            }
            if let Some(a) = aggs.iter().find(|a| keys.contains(&a.column)) {
                return Err(OpError::InvalidSpec(format!(
                    "'{}' is both a group key and an aggregated attribute",
                    a.column
                )));
            }
        }
        Ok(())
    }

    /// JSON encoding of this spec.
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("operation specs always serialize")
    }
}

impl fmt::Display for OperationSpec {
    /// Pretty-prints in the DSL; `parse_operation` inverts this.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OperationSpec::Filter { column, cmp, value } => {
                write!(f, "FILTER {} {} ", parse::quote_ident(column), cmp.symbol())?;
                match value {
                    Literal::Number(v) => write!(f, "{v}"),
                    Literal::Text(s) => write!(f, "'{}'", s.replace('\'', "''")),
                }
            }
            OperationSpec::GroupBy { keys, aggs } => {
                f.write_str("GROUPBY ")?;
                let keys: Vec<String> = keys.iter().map(|k| parse::quote_ident(k)).collect();
                f.write_str(&keys.join(", "))?;
                f.write_str(" AGG ")?;
                let aggs: Vec<String> = aggs
                    .iter()
                    .map(|a| format!("{}({})", a.func.name(), parse::quote_ident(&a.column)))
                    .collect();
                f.write_str(&aggs.join(", "))
            }
            OperationSpec::Join { on, .. } => write!(f, "JOIN ON {}", parse::quote_ident(on)),
            OperationSpec::Union => f.write_str("UNION"),
        }
    }
}
