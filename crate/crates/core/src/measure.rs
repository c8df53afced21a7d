//! Per-column interestingness of a step: KS exceptionality for filter, join
//! and union, coefficient-of-variation diversity for group-by, and a
//! registry for user-supplied measures.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Serialize, Serializer};
use thiserror::Error;

use crate::frame::{column_distribution, Column, DataFrame, DiscreteDistribution};
use crate::ops::{ExploratoryStep, OpError, OperationSpec};

#[derive(Debug, Error)]
pub enum MeasureError {
    #[error("distribution is empty")]
    EmptyDistribution,
    #[error("attribute '{0}' does not come from any input frame")]
    AttributeNotInInput(String),
    #[error("measure does not apply to attribute '{0}'")]
    NotApplicable(String),
    #[error("attribute '{attribute}' has {groups} group(s); diversity needs at least 2")]
    SingleGroup { attribute: String, groups: usize },
    #[error("attribute '{0}' has mean zero; diversity is undefined")]
    ZeroMean(String),
    #[error("unknown output attribute '{0}'")]
    UnknownColumn(String),
    #[error("unknown measure '{0}'")]
    UnknownMeasure(String),
    #[error("measure '{0}' is already registered")]
    DuplicateMeasure(String),
    #[error(transparent)]
    Op(#[from] OpError),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum MeasureKind {
    Exceptionality,
    Diversity,
    Custom(String),
}

impl MeasureKind {
    pub fn name(&self) -> &str {
        match self {
            MeasureKind::Exceptionality => EXCEPTIONALITY,
            MeasureKind::Diversity => DIVERSITY,
            MeasureKind::Custom(n) => n,
        }
    }
}

impl fmt::Display for MeasureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl Serialize for MeasureKind {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InterestingnessScore {
    pub attribute: String,
    pub value: f64,
    pub measure: MeasureKind,
}

/// Two-sample KS statistic: the largest CDF gap over the merged support.
pub fn ks_statistic(
    p: &DiscreteDistribution,
    q: &DiscreteDistribution,
) -> Result<f64, MeasureError> {
    if p.is_empty() || q.is_empty() {
        return Err(MeasureError::EmptyDistribution);
    }
    let (ps, pm) = (p.support(), p.mass());
    let (qs, qm) = (q.support(), q.mass());
    let (mut i, mut j) = (0, 0);
    let (mut cp, mut cq, mut best) = (0.0f64, 0.0f64, 0.0f64);
    while i < ps.len() || j < qs.len() {
        let ord = match (ps.get(i), qs.get(j)) {
            (Some(a), Some(b)) => a.cmp(b),
            (Some(_), None) => std::cmp::Ordering::Less,
            _ => std::cmp::Ordering::Greater,
        };
        if ord.is_le() {
            cp += pm[i];
            i += 1;
        }
        if ord.is_ge() {
            cq += qm[j];
            j += 1;
        }
        best = best.max((cp - cq).abs());
    }
    Ok(best.min(1.0))
}

/// KS statistic between two histograms over the same ordered codes.
/// Performs the same floating-point steps as [`ks_statistic`] on the
/// distributions the histograms describe.
pub(crate) fn ks_from_counts(p: &[u64], q: &[u64]) -> Option<f64> {
    let np: u64 = p.iter().sum();
    let nq: u64 = q.iter().sum();
    if np == 0 || nq == 0 {
        return None;
    }
    let (np, nq) = (np as f64, nq as f64);
    let (mut cp, mut cq, mut best) = (0.0f64, 0.0f64, 0.0f64);
    for (a, b) in p.iter().zip(q) {
        if *a > 0 {
            cp += *a as f64 / np;
        }
        if *b > 0 {
            cq += *b as f64 / nq;
        }
        best = best.max((cp - cq).abs());
    }
    Some(best.min(1.0))
}

fn distribution(col: &Column) -> Result<DiscreteDistribution, MeasureError> {
    column_distribution(col).map_err(|_| MeasureError::EmptyDistribution)
}

/// KS exceptionality of output attribute `attribute`. Filter and join
/// compare against the input the attribute comes from (a join key against
/// the first input); union takes the maximum over all inputs.
pub fn exceptionality(step: &ExploratoryStep, attribute: &str) -> Result<f64, MeasureError> {
    let out = step
        .output()
        .column(attribute)
        .ok_or_else(|| MeasureError::UnknownColumn(attribute.to_string()))?;
    let sources = step.column_sources(attribute);
    if sources.is_empty() {
        return Err(MeasureError::AttributeNotInInput(attribute.to_string()));
    }
    let q = distribution(out)?;
    let used = match step.op() {
        OperationSpec::Union => sources,
        _ => &sources[..1],
    };
    let mut best: Option<f64> = None;
    for s in used {
        let input = step.inputs()[s.input].require(&s.column).map_err(OpError::from)?;
        // an emptied union input has no distribution to compare against
        if let Ok(p) = distribution(input) {
            let ks = ks_statistic(&p, &q)?;
            best = Some(best.map_or(ks, |b: f64| b.max(ks)));
        }
    }
    best.ok_or(MeasureError::EmptyDistribution)
}

/// Coefficient of variation with the n-1 denominator and |mean| below.
pub fn coefficient_of_variation(values: &[f64]) -> Result<f64, MeasureError> {
    let n = values.len();
    if n < 2 {
        return Err(MeasureError::SingleGroup {
            attribute: String::new(),
            groups: n,
        });
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if mean == 0.0 {
        return Err(MeasureError::ZeroMean(String::new()));
    }
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    Ok((ss / (n - 1) as f64).sqrt() / mean.abs())
}

fn is_aggregate(step: &ExploratoryStep, attribute: &str) -> bool {
    match step.op() {
        OperationSpec::GroupBy { aggs, .. } => aggs.iter().any(|a| a.output_name() == attribute),
        _ => false,
    }
}

/// CV diversity of an aggregated group-by column. Null aggregates are left
/// out.
pub fn diversity(step: &ExploratoryStep, attribute: &str) -> Result<f64, MeasureError> {
    if !is_aggregate(step, attribute) {
        return Err(MeasureError::NotApplicable(attribute.to_string()));
    }
    let col = step
        .output()
        .column(attribute)
        .and_then(Column::as_numeric)
        .ok_or_else(|| MeasureError::UnknownColumn(attribute.to_string()))?;
    let values: Vec<f64> = col.iter().flatten().copied().collect();
    coefficient_of_variation(&values).map_err(|e| match e {
        MeasureError::SingleGroup { groups, .. } => MeasureError::SingleGroup {
            attribute: attribute.to_string(),
            groups,
        },
        MeasureError::ZeroMean(_) => MeasureError::ZeroMean(attribute.to_string()),
        e => e,
    })
}

/// An interestingness measure over one output attribute of a step.
pub trait Measure: Send + Sync {
    fn kind(&self) -> MeasureKind;

    /// Whether `attribute` is scored at all. Attributes for which this
    /// returns false are left out silently.
    fn applies_to(&self, _step: &ExploratoryStep, _attribute: &str) -> bool {
        true
    }

    fn score(&self, step: &ExploratoryStep, attribute: &str) -> Result<f64, MeasureError>;
}

pub struct Exceptionality;

impl Measure for Exceptionality {
    fn kind(&self) -> MeasureKind {
        MeasureKind::Exceptionality
    }

    fn applies_to(&self, step: &ExploratoryStep, attribute: &str) -> bool {
        !step.column_sources(attribute).is_empty()
    }

    fn score(&self, step: &ExploratoryStep, attribute: &str) -> Result<f64, MeasureError> {
        exceptionality(step, attribute)
    }
}

pub struct Diversity;

impl Measure for Diversity {
    fn kind(&self) -> MeasureKind {
        MeasureKind::Diversity
    }

    fn applies_to(&self, step: &ExploratoryStep, attribute: &str) -> bool {
        is_aggregate(step, attribute)
    }

    fn score(&self, step: &ExploratoryStep, attribute: &str) -> Result<f64, MeasureError> {
        diversity(step, attribute)
    }
}

pub const EXCEPTIONALITY: &str = "exceptionality";
pub const DIVERSITY: &str = "diversity";

/// Named measures. The two built-ins are always present.
#[derive(Clone)]
pub struct MeasureRegistry {
    entries: BTreeMap<String, Arc<dyn Measure>>,
}

impl Default for MeasureRegistry {
    fn default() -> Self {
        let mut entries: BTreeMap<String, Arc<dyn Measure>> = BTreeMap::new();
        entries.insert(EXCEPTIONALITY.into(), Arc::new(Exceptionality));
        entries.insert(DIVERSITY.into(), Arc::new(Diversity));
        Self { entries }
    }
}

impl fmt::Debug for MeasureRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.entries.keys()).finish()
    }
}

impl MeasureRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(
        &mut self,
        name: impl Into<String>,
        measure: Arc<dyn Measure>,
    ) -> Result<(), MeasureError> {
        let name = name.into();
        if self.entries.contains_key(&name) {
            return Err(MeasureError::DuplicateMeasure(name));
        }
        self.entries.insert(name, measure);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Arc<dyn Measure>, MeasureError> {
        self.entries
            .get(name)
            .ok_or_else(|| MeasureError::UnknownMeasure(name.to_string()))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// Measure name used for `op` when none is requested.
    pub fn default_name(op: &OperationSpec) -> &'static str {
        if op.is_group_by() {
            DIVERSITY
        } else {
            EXCEPTIONALITY
        }
    }

    /// The requested measure, or the default for the step's operation.
    pub fn resolve(
        &self,
        requested: Option<&str>,
        op: &OperationSpec,
    ) -> Result<(String, &Arc<dyn Measure>), MeasureError> {
        let name = requested.unwrap_or_else(|| Self::default_name(op));
        Ok((name.to_string(), self.get(name)?))
    }
}

/// Row count above which callers turn sampling on by default.
pub const AUTO_SAMPLE_THRESHOLD: usize = 50_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SamplingConfig {
    pub enabled: bool,
    pub sample_size: usize,
    pub seed: u64,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            enabled: false,
            sample_size: 5000,
            seed: 0,
        }
    }
}

impl SamplingConfig {
    pub fn exact() -> Self {
        Self::default()
    }

    pub fn sampled(sample_size: usize, seed: u64) -> Self {
        Self {
            enabled: true,
            sample_size: sample_size.max(1),
            seed,
        }
    }

    /// Sampling when any input has more than [`AUTO_SAMPLE_THRESHOLD`]
    /// rows, exact otherwise.
    pub fn auto(step: &ExploratoryStep, sample_size: usize, seed: u64) -> Self {
        let big = step.inputs().iter().any(|f| f.row_count() > AUTO_SAMPLE_THRESHOLD);
        Self {
            enabled: big,
            ..Self::sampled(sample_size, seed)
        }
    }
}

/// Uniform sample without replacement of `min(sample_size, rows)` rows,
/// kept in original row order.
pub fn sample_frame(frame: &DataFrame, sample_size: usize, rng: &mut ChaCha8Rng) -> DataFrame {
    let n = frame.row_count();
    if sample_size >= n {
        return frame.clone();
    }
    let mut rows = rand::seq::index::sample(rng, n, sample_size).into_vec();
    rows.sort_unstable();
    frame.take_rows(&rows)
}

/// The step re-run over samples of its inputs; the step itself when
/// sampling is off or every input already fits in the sample.
pub fn sample_step(
    step: &ExploratoryStep,
    cfg: &SamplingConfig,
) -> Result<ExploratoryStep, MeasureError> {
    if !cfg.enabled
        || step
            .inputs()
            .iter()
            .all(|f| f.row_count() <= cfg.sample_size)
    {
        return Ok(step.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let inputs = step
        .inputs()
        .iter()
        .map(|f| {
            if f.row_count() <= cfg.sample_size {
                f.clone()
            } else {
                Arc::new(sample_frame(f, cfg.sample_size, &mut rng))
            }
        })
        .collect();
    Ok(step.with_inputs(inputs)?)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SkippedColumn {
    pub attribute: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct ScoreSet {
    pub scores: Vec<InterestingnessScore>,
    pub skipped: Vec<SkippedColumn>,
}

impl ScoreSet {
    pub fn get(&self, attribute: &str) -> Option<f64> {
        self.scores
            .iter()
            .find(|s| s.attribute == attribute)
            .map(|s| s.value)
    }
}

/// Output attributes to score: `restrict` when given, else all of them.
pub(crate) fn candidate_attributes(
    step: &ExploratoryStep,
    restrict: Option<&[String]>,
    skipped: &mut Vec<SkippedColumn>,
) -> Vec<String> {
    match restrict {
        None => step.output().column_names().map(str::to_string).collect(),
        Some(list) => {
            let mut out = Vec::new();
            for a in list {
                if step.output().column(a).is_none() {
                    skipped.push(SkippedColumn {
                        attribute: a.clone(),
                        reason: "not an output attribute".into(),
                    });
                } else if !out.contains(a) {
                    out.push(a.clone());
                }
            }
            out
        }
    }
}

/// Scores every eligible output attribute of `step` with `measure`.
/// Undefined scores are reported in `skipped`.
pub fn score_all_columns(
    step: &ExploratoryStep,
    measure: &dyn Measure,
    sampling: &SamplingConfig,
    restrict: Option<&[String]>,
) -> Result<ScoreSet, MeasureError> {
    let mut set = ScoreSet::default();
    let attrs = candidate_attributes(step, restrict, &mut set.skipped);
    let scored_step = sample_step(step, sampling)?;
    let kind = measure.kind();
    let results: Vec<(String, Option<Result<f64, MeasureError>>)> = attrs
        .into_par_iter()
        .map(|a| {
            let r = measure
                .applies_to(step, &a)
                .then(|| measure.score(&scored_step, &a));
            (a, r)
        })
        .collect();
    for (attribute, r) in results {
        match r {
            None => {}
            Some(Ok(value)) => set.scores.push(InterestingnessScore {
                attribute,
                value,
                measure: kind.clone(),
            }),
            Some(Err(e)) => set.skipped.push(SkippedColumn {
                attribute,
                reason: e.to_string(),
            }),
        }
    }
    Ok(set)
}
