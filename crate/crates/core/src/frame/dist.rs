use std::cmp::Ordering;
use std::collections::HashMap;
use std::fmt;
use std::hash::{Hash, Hasher};
use std::sync::Arc;

use super::{Column, ColumnValues, FrameError};

/// Total order on reals used everywhere values are sorted or compared.
/// `-0.0 == 0.0`; NaN sorts after every other number.
pub fn num_cmp(a: f64, b: f64) -> Ordering {
    a.partial_cmp(&b).unwrap_or_else(|| a.total_cmp(&b))
}

/// A non-null cell value. Numbers order numerically, text lexicographically
/// (byte order). Every number sorts before every text value.
#[derive(Debug, Clone)]
pub enum Value {
    Number(f64),
    Text(Arc<str>),
}

impl Value {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Number(v) => Some(*v),
            Value::Text(_) => None,
        }
    }
}

impl Ord for Value {
    fn cmp(&self, other: &Self) -> Ordering {
        match (self, other) {
            (Value::Number(a), Value::Number(b)) => num_cmp(*a, *b),
            (Value::Text(a), Value::Text(b)) => a.cmp(b),
            (Value::Number(_), Value::Text(_)) => Ordering::Less,
            (Value::Text(_), Value::Number(_)) => Ordering::Greater,
        }
    }
}

impl PartialOrd for Value {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl PartialEq for Value {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Value {}

impl Hash for Value {
    fn hash<H: Hasher>(&self, state: &mut H) {
        match self {
            Value::Number(v) => {
                0u8.hash(state);
                num_key(*v).hash(state);
            }
            Value::Text(s) => {
                1u8.hash(state);
                s.hash(state);
            }
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Number(v) => f.write_str(&super::format_number(*v)),
            Value::Text(s) => f.write_str(s),
        }
    }
}

/// Bit pattern that is equal exactly when `num_cmp` says equal.
pub(crate) fn num_key(v: f64) -> u64 {
    if v == 0.0 {
        0
    } else if v.is_nan() {
        f64::NAN.to_bits()
    } else {
        v.to_bits()
    }
}

/// Probability mass over a sorted, duplicate-free support.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteDistribution {
    support: Vec<Value>,
    mass: Vec<f64>,
}

impl DiscreteDistribution {
    /// Normalises raw weights. Entries with equal values are merged; zero
    /// weights are dropped. Returns `None` when the total weight is zero.
    pub fn from_weights(entries: impl IntoIterator<Item = (Value, f64)>) -> Option<Self> {
        let mut entries: Vec<(Value, f64)> =
            entries.into_iter().filter(|(_, w)| *w > 0.0).collect();
        entries.sort_by(|a, b| a.0.cmp(&b.0));
        let total: f64 = entries.iter().map(|e| e.1).sum();
        if entries.is_empty() || total <= 0.0 {
            return None;
        }
        let mut support: Vec<Value> = Vec::with_capacity(entries.len());
        let mut mass: Vec<f64> = Vec::with_capacity(entries.len());
        for (v, w) in entries {
            if support.last() == Some(&v) {
                *mass.last_mut().unwrap() += w;
            } else {
                support.push(v);
                mass.push(w);
            }
        }
        for m in &mut mass {
            *m /= total;
        }
        Some(Self { support, mass })
    }

    pub fn support(&self) -> &[Value] {
        &self.support
    }

    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    pub fn len(&self) -> usize {
        self.support.len()
    }

    pub fn is_empty(&self) -> bool {
        self.support.is_empty()
    }

    pub fn probability(&self, value: &Value) -> f64 {
        self.support
            .binary_search(value)
            .map_or(0.0, |i| self.mass[i])
    }
}

/// Relative frequency of each distinct non-null value of `col`.
pub fn column_distribution(col: &Column) -> Result<DiscreteDistribution, FrameError> {
    let counts: Vec<(Value, f64)> = match col.values() {
        ColumnValues::Numeric(v) => {
            let mut vals: Vec<f64> = v.iter().flatten().copied().collect();
            vals.sort_by(|a, b| num_cmp(*a, *b));
            let mut out: Vec<(Value, f64)> = Vec::new();
            for x in vals {
                match out.last_mut() {
                    Some((Value::Number(p), c)) if num_cmp(*p, x) == Ordering::Equal => *c += 1.0,
                    _ => out.push((Value::Number(x), 1.0)),
                }
            }
            out
        }
        ColumnValues::Categorical(v) => {
            let mut map: HashMap<&Arc<str>, f64> = HashMap::new();
            for s in v.iter().flatten() {
                *map.entry(s).or_default() += 1.0;
            }
            map.into_iter()
                .map(|(s, c)| (Value::Text(s.clone()), c))
                .collect()
        }
    };
    DiscreteDistribution::from_weights(counts)
        .ok_or_else(|| FrameError::AllNull(col.name().to_string()))
}

pub(crate) const NULL_CODE: u32 = u32::MAX;

/// A column re-encoded as dense ranks: `codes[row]` is the position of that
/// row's value in the sorted distinct `values`, or [`NULL_CODE`].
#[derive(Debug, Clone)]
pub(crate) struct CodedColumn {
    pub codes: Vec<u32>,
    pub values: Vec<Value>,
}

impl CodedColumn {
    pub fn build(col: &Column) -> Self {
        match col.values() {
            ColumnValues::Numeric(v) => {
                let mut distinct: Vec<f64> = v.iter().flatten().copied().collect();
                distinct.sort_by(|a, b| num_cmp(*a, *b));
                distinct.dedup_by(|a, b| num_cmp(*a, *b) == Ordering::Equal);
                let codes = v
                    .iter()
                    .map(|x| match x {
                        Some(x) => distinct
                            .binary_search_by(|d| num_cmp(*d, *x))
                            .map_or(NULL_CODE, |i| i as u32),
                        None => NULL_CODE,
                    })
                    .collect();
                Self {
                    codes,
                    values: distinct.into_iter().map(Value::Number).collect(),
                }
            }
            ColumnValues::Categorical(v) => {
                let mut first: HashMap<&str, u32> = HashMap::new();
                let mut order: Vec<&Arc<str>> = Vec::new();
                let raw: Vec<u32> = v
                    .iter()
                    .map(|x| match x {
                        Some(s) => *first.entry(s.as_ref()).or_insert_with(|| {
                            order.push(s);
                            (order.len() - 1) as u32
                        }),
                        None => NULL_CODE,
                    })
                    .collect();
                let mut sorted: Vec<u32> = (0..order.len() as u32).collect();
                sorted.sort_by(|&a, &b| order[a as usize].cmp(order[b as usize]));
                let mut rank = vec![0u32; order.len()];
                for (r, &c) in sorted.iter().enumerate() {
                    rank[c as usize] = r as u32;
                }
                let codes = raw
                    .into_iter()
                    .map(|c| if c == NULL_CODE { c } else { rank[c as usize] })
                    .collect();
                Self {
                    codes,
                    values: sorted
                        .iter()
                        .map(|&c| Value::Text(order[c as usize].clone()))
                        .collect(),
                }
            }
        }
    }

    pub fn cardinality(&self) -> usize {
        self.values.len()
    }

    /// Per-code counts over the rows yielded by `rows`.
    pub fn histogram(&self, rows: impl Iterator<Item = usize>) -> Vec<u64> {
        let mut h = vec![0u64; self.cardinality()];
        for r in rows {
            let c = self.codes[r];
            if c != NULL_CODE {
                h[c as usize] += 1;
            }
        }
        h
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn categorical_counts_skip_nulls() {
        let c = Column::categorical("c", vec![Some("a"), Some("a"), Some("b"), None]);
        let d = column_distribution(&c).unwrap();
        assert_eq!(d.probability(&Value::Text("a".into())), 2.0 / 3.0);
        assert_eq!(d.probability(&Value::Text("b".into())), 1.0 / 3.0);
        assert_eq!(d.len(), 2);
    }

    #[test]
    fn singleton_and_even_split() {
        let d = column_distribution(&Column::from_f64("x", &[5.0])).unwrap();
        assert_eq!(d.mass(), &[1.0]);
        let d = column_distribution(&Column::from_f64("x", &[1.0, 1.0, 2.0, 2.0])).unwrap();
        assert_eq!(d.mass(), &[0.5, 0.5]);
        assert_eq!(d.support()[0], Value::Number(1.0));
    }

    #[test]
    fn all_null_is_an_error() {
        let c = Column::numeric("n", vec![None, None]);
        assert!(matches!(column_distribution(&c), Err(FrameError::AllNull(_))));
    }

    #[test]
    fn coded_column_ranks_values() {
        let c = Column::categorical("c", vec![Some("b"), None, Some("a"), Some("b")]);
        let coded = CodedColumn::build(&c);
        assert_eq!(coded.codes, vec![1, NULL_CODE, 0, 1]);
        let n = Column::numeric("n", vec![Some(3.0), Some(-0.0), Some(0.0), Some(-2.0)]);
        let coded = CodedColumn::build(&n);
        assert_eq!(coded.codes, vec![2, 1, 1, 0]);
    }

    proptest::proptest! {
        #[test]
        fn masses_sum_to_one(vals in proptest::collection::vec(proptest::option::of(-50i32..50), 1..200)) {
            proptest::prop_assume!(vals.iter().any(|v| v.is_some()));
            let c = Column::numeric("x", vals.iter().map(|v| v.map(f64::from)).collect());
            let d = column_distribution(&c).unwrap();
            let total: f64 = d.mass().iter().sum();
            proptest::prop_assert!((total - 1.0).abs() <= 1e-12);
        }
    }
}
