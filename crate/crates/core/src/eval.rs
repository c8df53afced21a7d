//! Accuracy of sampled interestingness against exact scoring: synthetic
//! data with a planted signal, ranking metrics, and a trial runner.

use std::collections::{HashMap, HashSet};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Serialize, Serializer};
use thiserror::Error;

use crate::frame::{num_cmp, Column, DataFrame};
use crate::measure::{score_all_columns, InterestingnessScore, Measure, MeasureError, SamplingConfig};
use crate::ops::{make_step, Comparator, ExploratoryStep, Literal, OperationSpec};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("need at least 100 rows, got {0}")]
    TooFewRows(usize),
    #[error("need at least 3 columns, got {0}")]
    TooFewColumns(usize),
    #[error("rankings score different attribute sets")]
    MismatchedAttributeSets,
    #[error("k must be at least 1")]
    ZeroK,
    #[error(transparent)]
    Measure(#[from] MeasureError),
}

/// Name of the column the emitted filter selects on.
pub const SELECTOR: &str = "selector";
/// Coarse recoding of the selector (`band_00` .. `band_09`).
pub const SELECTOR_BAND: &str = "selector_band";

#[derive(Debug, Clone, PartialEq)]
pub struct PlantedSignal {
    pub column: String,
    /// Mean shift applied to the planted column on the rows the filter
    /// keeps, in units of the noise standard deviation.
    pub shift_strength: f64,
}

impl Default for PlantedSignal {
    fn default() -> Self {
        Self {
            column: "planted".into(),
            shift_strength: 1.5,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub frame: DataFrame,
    pub op: OperationSpec,
}

fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

/// A frame of `rows` rows and `cols` columns: an integer `selector` in
/// 0..100, its `selector_band`, the planted column and standard-normal
/// noise columns (rounded to two decimals). The emitted operation is
/// `FILTER selector >= 50`; the planted column's mean shifts by
/// `shift_strength` on exactly those rows.
pub fn generate_synthetic(
    rows: usize,
    cols: usize,
    planted: &PlantedSignal,
    seed: u64,
) -> Result<SyntheticDataset, EvalError> {
    if rows < 100 {
        return Err(EvalError::TooFewRows(rows));
    }
    if cols < 3 {
        return Err(EvalError::TooFewColumns(cols));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let selector: Vec<u32> = (0..rows).map(|_| rng.gen_range(0..100)).collect();
    let band: Vec<Option<String>> = selector.iter().map(|s| Some(format!("band_{:02}", s / 10))).collect();
    let plant: Vec<Option<f64>> = selector
        .iter()
        .map(|&s| {
            let z: f64 = rng.sample(StandardNormal);
            let shift = if s >= 50 { planted.shift_strength } else { 0.0 };
            Some(round2(z + shift))
        })
        .collect();
    let mut columns = vec![
        Column::numeric(SELECTOR, selector.iter().map(|&s| Some(f64::from(s))).collect()),
        Column::categorical(SELECTOR_BAND, band),
        Column::numeric(planted.column.clone(), plant),
    ];
    for i in 1..=cols - 3 {
        let v = (0..rows)
            .map(|_| Some(round2(rng.sample::<f64, _>(StandardNormal))))
            .collect();
        columns.push(Column::numeric(format!("noise_{i}"), v));
    }
    let frame = DataFrame::new("synthetic", columns).expect("generated columns are consistent");
    let op = OperationSpec::filter(SELECTOR, Comparator::Ge, Literal::Number(50.0));
    Ok(SyntheticDataset { frame, op })
}

fn ser_secs<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_f64(d.as_secs_f64())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub sample_size: usize,
    pub seed: u64,
    pub k: usize,
    pub attributes: usize,
    pub precision_at_k: f64,
    pub kendall_tau_distance: f64,
    pub ndcg: f64,
    #[serde(serialize_with = "ser_secs")]
    pub wall_time_exact: Duration,
    #[serde(serialize_with = "ser_secs")]
    pub wall_time_sampled: Duration,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankingMetrics {
    pub precision_at_k: f64,
    pub kendall_tau_distance: f64,
    pub ndcg: f64,
    pub attributes: usize,
}

/// Attributes by descending score, ties by name.
pub fn ranking(scores: &[InterestingnessScore]) -> Vec<&str> {
    let mut v: Vec<&InterestingnessScore> = scores.iter().collect();
    v.sort_by(|a, b| num_cmp(b.value, a.value).then_with(|| a.attribute.cmp(&b.attribute)));
    v.into_iter().map(|s| s.attribute.as_str()).collect()
}

/// precision@k, the number of discordant pairs, and nDCG over the full
/// ranking with gain 1/log2(r+1) for the attribute at exact rank r.
pub fn compare_rankings(
    exact: &[InterestingnessScore],
    sampled: &[InterestingnessScore],
    k: usize,
) -> Result<RankingMetrics, EvalError> {
    if k == 0 {
        return Err(EvalError::ZeroK);
    }
    let e = ranking(exact);
    let s = ranking(sampled);
    let es: HashSet<&str> = e.iter().copied().collect();
    let ss: HashSet<&str> = s.iter().copied().collect();
    if es != ss || es.len() != e.len() || ss.len() != s.len() {
        return Err(EvalError::MismatchedAttributeSets);
    }
    let m = e.len();
    if m == 0 {
        return Ok(RankingMetrics {
            precision_at_k: 1.0,
            kendall_tau_distance: 0.0,
            ndcg: 1.0,
            attributes: 0,
        });
    }
    let kk = k.min(m);
    let top_e: HashSet<&str> = e[..kk].iter().copied().collect();
    let hits = s[..kk].iter().filter(|a| top_e.contains(*a)).count();

    let exact_rank: HashMap<&str, usize> = e.iter().enumerate().map(|(i, a)| (*a, i)).collect();
    let pos: Vec<usize> = s.iter().map(|a| exact_rank[a]).collect();
    let mut discordant = 0usize;
    for i in 0..m {
        for j in i + 1..m {
            if pos[i] > pos[j] {
                discordant += 1;
            }
        }
    }

    let gain = |r: usize| 1.0 / ((r + 2) as f64).log2();
    let discount = |p: usize| ((p + 2) as f64).log2();
    let dcg: f64 = pos.iter().enumerate().map(|(p, &r)| gain(r) / discount(p)).sum();
    let idcg: f64 = (0..m).map(|p| gain(p) / discount(p)).sum();
    Ok(RankingMetrics {
        precision_at_k: hits as f64 / kk as f64,
        kendall_tau_distance: discordant as f64,
        ndcg: dcg / idcg,
        attributes: m,
    })
}

/// Compares sampled against exact scoring of `step` for every
/// (sample size, seed) pair. Trials run in parallel; the result is in
/// (sample size, seed) order.
pub fn run_trials(
    step: &ExploratoryStep,
    measure: &dyn Measure,
    sample_sizes: &[usize],
    seeds: &[u64],
    k: usize,
) -> Result<Vec<EvalReport>, EvalError> {
    let t = Instant::now();
    let exact = score_all_columns(step, measure, &SamplingConfig::exact(), None)?;
    let wall_time_exact = t.elapsed();
    let trials: Vec<(usize, u64)> = sample_sizes
        .iter()
        .flat_map(|&n| seeds.iter().map(move |&s| (n, s)))
        .collect();
    trials
        .into_par_iter()
        .map(|(sample_size, seed)| {
            let t = Instant::now();
            let sampled = score_all_columns(step, measure, &SamplingConfig::sampled(sample_size, seed), None)?;
            let wall_time_sampled = t.elapsed();
            let m = compare_rankings(&exact.scores, &sampled.scores, k)?;
            Ok(EvalReport {
                sample_size,
                seed,
                k,
                attributes: m.attributes,
                precision_at_k: m.precision_at_k,
                kendall_tau_distance: m.kendall_tau_distance,
                ndcg: m.ndcg,
                wall_time_exact,
                wall_time_sampled,
            })
        })
        .collect()
}

/// Convenience wrapper: generates the synthetic data and runs the trials
/// with the default measure for a filter.
pub fn synthetic_trials(
    rows: usize,
    cols: usize,
    planted: &PlantedSignal,
    data_seed: u64,
    sample_sizes: &[usize],
    seeds: &[u64],
    k: usize,
) -> Result<Vec<EvalReport>, EvalError> {
    let data = generate_synthetic(rows, cols, planted, data_seed)?;
    let step = make_step(data.op, vec![std::sync::Arc::new(data.frame)]).map_err(MeasureError::from)?;
    run_trials(&step, &crate::measure::Exceptionality, sample_sizes, seeds, k)
}

/// CSV with one line per report.
pub fn reports_to_csv(reports: &[EvalReport]) -> String {
    let mut s = String::from(
        "sample_size,seed,k,attributes,precision_at_k,kendall_tau_distance,ndcg,exact_seconds,sampled_seconds\n",
    );
    for r in reports {
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{:.6},{:.6}\n",
            r.sample_size,
            r.seed,
            r.k,
            r.attributes,
            r.precision_at_k,
            r.kendall_tau_distance,
            r.ndcg,
            r.wall_time_exact.as_secs_f64(),
            r.wall_time_sampled.as_secs_f64()
        ));
    }
    s
}
