//! Contribution of a row set to a column's interestingness, measured by
//! intervention: remove the rows from their input frame, re-run the step,
//! and take the drop in score.
//!
//! The built-in measures use incremental recomputation (histogram deltas
//! for filter and union, per-group re-aggregation for group-by). These
//! paths perform the same arithmetic as a full re-execution; everything
//! else goes through [`ExploratoryStep::intervene`]-style re-execution.

use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::frame::{CodedColumn, Column, DataFrame, NULL_CODE};
use crate::measure::{ks_from_counts, Measure, MeasureKind};
use crate::ops::{group_aggregate, make_step, ExploratoryStep, Lineage, OperationSpec};
use crate::partition::{RowPartition, RowSet};

#[derive(Debug, Error, PartialEq)]
pub enum ContributionError {
    #[error("partition is degenerate: all contribution scores are equal")]
    DegeneratePartition,
    #[error("bin index {0} is out of range")]
    BadTarget(usize),
}

/// The step with rows `rows` removed from input `input`, re-executed.
pub fn reduced_step(
    step: &ExploratoryStep,
    input: usize,
    rows: &RowSet,
) -> Option<ExploratoryStep> {
    let reduced = step.inputs().get(input)?.remove_rows(&rows.rows).ok()?;
    let mut inputs: Vec<Arc<DataFrame>> = step.inputs().to_vec();
    inputs[input] = Arc::new(reduced);
    make_step(step.op().clone(), inputs).ok()
}

/// C(R, A) = I_A(step) - I_A(step without R), by full re-execution.
/// `None` when either score is undefined.
pub fn contribution(
    step: &ExploratoryStep,
    input: usize,
    rows: &RowSet,
    attribute: &str,
    measure: &dyn Measure,
) -> Option<f64> {
    let base = measure.score(step, attribute).ok()?;
    let reduced = reduced_step(step, input, rows)?;
    Some(base - measure.score(&reduced, attribute).ok()?)
}

/// z-score of `scores[target]` against all of `scores`, using the
/// population standard deviation.
pub fn standardize(scores: &[f64], target: usize) -> Result<f64, ContributionError> {
    let x = *scores
        .get(target)
        .ok_or(ContributionError::BadTarget(target))?;
    let (mean, sd) = mean_sd(scores).ok_or(ContributionError::DegeneratePartition)?;
    Ok((x - mean) / sd)
}

/// Population mean and standard deviation; `None` when fewer than two
/// values are given or they are all equal (up to rounding).
fn mean_sd(scores: &[f64]) -> Option<(f64, f64)> {
    let n = scores.len();
    if n < 2 {
        return None;
    }
    let mean = scores.iter().sum::<f64>() / n as f64;
    let var = scores.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / n as f64;
    let sd = var.sqrt();
    let scale = scores.iter().fold(1.0f64, |m, s| m.max(s.abs()));
    (sd.is_finite() && sd > 1e-12 * scale).then_some((mean, sd))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContributionScore {
    pub raw: f64,
    pub standardized: f64,
    pub partition_id: String,
    pub attribute: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExplanationCandidate {
    /// Index of the partition in the list the candidate was built from.
    pub partition: usize,
    pub bin: usize,
    pub input: usize,
    pub row_set: RowSet,
    pub attribute: String,
    pub interestingness: f64,
    pub contribution: ContributionScore,
}

/// Raw contributions of every bin of `partition` to every attribute in
/// `attributes`, as `[bin][attribute]`. `base` holds the exact scores of the
/// unmodified step.
pub fn partition_contributions(
    step: &ExploratoryStep,
    measure: &dyn Measure,
    attributes: &[String],
    base: &[Option<f64>],
    partition: &RowPartition,
) -> Vec<Vec<Option<f64>>> {
    let fast = fast_path(step, measure, attributes);
    contributions_with(step, measure, attributes, base, fast.as_ref(), partition)
}

fn contributions_with(
    step: &ExploratoryStep,
    measure: &dyn Measure,
    attributes: &[String],
    base: &[Option<f64>],
    fast: Option<&FastPath<'_>>,
    partition: &RowPartition,
) -> Vec<Vec<Option<f64>>> {
    let reduced = match fast {
        Some(fast) => fast.reduced_scores(partition),
        None => partition
            .bins
            .par_iter()
            .map(|bin| match reduced_step(step, partition.input, bin) {
                Some(r) => attributes
                    .iter()
                    .map(|a| measure.score(&r, a).ok())
                    .collect(),
                None => vec![None; attributes.len()],
            })
            .collect(),
    };
    reduced
        .into_iter()
        .map(|row| {
            row.into_iter()
                .zip(base)
                .map(|(r, b)| Some(b.as_ref()? - r?))
                .collect()
        })
        .collect()
}

/// Per-step precomputation for incremental interventions.
enum FastPath<'a> {
    Filter {
        kept: Vec<bool>,
        coded: Vec<Option<(CodedColumn, Vec<u64>, Vec<u64>)>>,
    },
    Union {
        offsets: Vec<usize>,
        /// Per attribute: codes over the output column, plus per-input
        /// histograms and the output histogram.
        coded: Vec<Option<(CodedColumn, Vec<Vec<u64>>, Vec<u64>)>>,
    },
    GroupBy {
        step: &'a ExploratoryStep,
        /// Per attribute: the aggregated input column and function.
        aggs: Vec<Option<(&'a Column, crate::ops::AggFn)>>,
    },
}

fn fast_path<'a>(
    step: &'a ExploratoryStep,
    measure: &dyn Measure,
    attributes: &[String],
) -> Option<FastPath<'a>> {
    let kind = measure.kind();
    match (step.op(), kind) {
        (OperationSpec::Filter { .. }, MeasureKind::Exceptionality) => {
            let input = &step.inputs()[0];
            let Lineage::Rows(l) = step.lineage.as_ref() else {
                return None;
            };
            let mut kept = vec![false; input.row_count()];
            for r in l[0].iter().flatten() {
                kept[*r as usize] = true;
            }
            let coded = attributes
                .par_iter()
                .map(|a| {
                    let c = CodedColumn::build(input.column(a)?);
                    let h_in = c.histogram(0..input.row_count());
                    let h_out = c.histogram((0..input.row_count()).filter(|&r| kept[r]));
                    Some((c, h_in, h_out))
                })
                .collect();
            Some(FastPath::Filter { kept, coded })
        }
        (OperationSpec::Union, MeasureKind::Exceptionality) => {
            let mut offsets = Vec::new();
            let mut total = 0;
            for f in step.inputs() {
                offsets.push(total);
                total += f.row_count();
            }
            offsets.push(total);
            let coded = attributes
                .par_iter()
                .map(|a| {
                    let c = CodedColumn::build(step.output().column(a)?);
                    let per_input: Vec<Vec<u64>> = offsets
                        .windows(2)
                        .map(|w| c.histogram(w[0]..w[1]))
                        .collect();
                    let h_out = c.histogram(0..total);
                    Some((c, per_input, h_out))
                })
                .collect();
            Some(FastPath::Union { offsets, coded })
        }
        (OperationSpec::GroupBy { aggs, .. }, MeasureKind::Diversity) => {
            let input = &step.inputs()[0];
            let per_attr = attributes
                .iter()
                .map(|a| {
                    let agg = aggs.iter().find(|g| &g.output_name() == a)?;
                    Some((input.column(&agg.column)?, agg.func))
                })
                .collect();
            Some(FastPath::GroupBy {
                step,
                aggs: per_attr,
            })
        }
        _ => None,
    }
}

fn bin_delta(codes: &[u32], rows: &[u32], card: usize, mut also: impl FnMut(u32, u32)) -> Vec<u64> {
    let mut d = vec![0u64; card];
    for &r in rows {
        let c = codes[r as usize];
        if c != NULL_CODE {
            d[c as usize] += 1;
            also(r, c);
        }
    }
    d
}

fn minus(a: &[u64], b: &[u64]) -> Vec<u64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

impl FastPath<'_> {
    fn reduced_scores(&self, partition: &RowPartition) -> Vec<Vec<Option<f64>>> {
        partition
            .bins
            .par_iter()
            .map(|bin| match self {
                FastPath::Filter { kept, coded } => coded
                    .iter()
                    .map(|entry| {
                        let (c, h_in, h_out) = entry.as_ref()?;
                        let mut d_out = vec![0u64; c.cardinality()];
                        let d_in = bin_delta(&c.codes, bin.rows.as_u32(), c.cardinality(), |r, code| {
                            if kept[r as usize] {
                                d_out[code as usize] += 1;
                            }
                        });
                        ks_from_counts(&minus(h_in, &d_in), &minus(h_out, &d_out))
                    })
                    .collect(),
                FastPath::Union { offsets, coded } => coded
                    .iter()
                    .map(|entry| {
                        let (c, per_input, h_out) = entry.as_ref()?;
                        let off = offsets[partition.input];
                        let mut d = vec![0u64; c.cardinality()];
                        for &r in bin.rows.as_u32() {
                            let code = c.codes[off + r as usize];
                            if code != NULL_CODE {
                                d[code as usize] += 1;
                            }
                        }
                        let out = minus(h_out, &d);
                        let mut best: Option<f64> = None;
                        for (i, h) in per_input.iter().enumerate() {
                            let ks = if i == partition.input {
                                ks_from_counts(&minus(h, &d), &out)
                            } else {
                                ks_from_counts(h, &out)
                            };
                            if let Some(ks) = ks {
                                best = Some(best.map_or(ks, |m: f64| m.max(ks)));
                            }
                        }
                        best
                    })
                    .collect(),
                FastPath::GroupBy { step, aggs } => {
                    let Lineage::Groups(groups) = step.lineage.as_ref() else {
                        return vec![None; aggs.len()];
                    };
                    let in_bin = bin_mask(partition.frame_len(), bin);
                    aggs.iter()
                        .map(|entry| {
                            let (col, func) = entry.as_ref()?;
                            let keep = |r: usize| !in_bin[r];
                            let values: Vec<f64> =
                                group_aggregate(groups, col, *func, Some(&keep))
                                    .into_iter()
                                    .flatten()
                                    .flatten()
                                    .collect();
                            crate::measure::coefficient_of_variation(&values).ok()
                        })
                        .collect()
                }
            })
            .collect()
    }
}

fn bin_mask(frame_len: usize, bin: &RowSet) -> Vec<bool> {
    let mut m = vec![false; frame_len];
    for &r in bin.rows.as_u32() {
        m[r as usize] = true;
    }
    m
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ContributionDiagnostics {
    /// (bin, attribute) pairs whose contribution was computed.
    pub evaluated: usize,
    /// Pairs skipped because the score was undefined on the reduced step.
    pub undefined: usize,
    /// (partition, attribute) pairs dropped because every bin scored the
    /// same.
    pub degenerate: usize,
}

/// Candidates for every partition, scored attribute and bin with positive
/// raw contribution. Each bin is standardized against all bins of its
/// partition that have a defined contribution; the ignore-set takes no
/// part. `scores` supplies the reported interestingness (possibly from a
/// sample); contributions always use the exact step.
pub fn assemble_candidates(
    step: &ExploratoryStep,
    measure: &dyn Measure,
    scores: &[crate::measure::InterestingnessScore],
    partitions: &[RowPartition],
    diag: &mut ContributionDiagnostics,
) -> Vec<ExplanationCandidate> {
    let attributes: Vec<String> = scores.iter().map(|s| s.attribute.clone()).collect();
    let base: Vec<Option<f64>> = attributes
        .par_iter()
        .map(|a| measure.score(step, a).ok())
        .collect();
    // coding every column is the expensive part; do it once per step
    let fast = fast_path(step, measure, &attributes);
    let per_partition: Vec<(Vec<ExplanationCandidate>, ContributionDiagnostics)> = partitions
        .par_iter()
        .enumerate()
        .map(|(pi, p)| {
            let mut d = ContributionDiagnostics::default();
            let mut out = Vec::new();
            let raw = contributions_with(step, measure, &attributes, &base, fast.as_ref(), p);
            let id = p.id();
            for (ai, score) in scores.iter().enumerate() {
                let column: Vec<Option<f64>> = raw.iter().map(|row| row[ai]).collect();
                let defined: Vec<f64> = column.iter().flatten().copied().collect();
                d.evaluated += defined.len();
                d.undefined += column.len() - defined.len();
                if !column.iter().flatten().any(|&r| r > 0.0) {
                    continue;
                }
                let Some((mean, sd)) = mean_sd(&defined) else {
                    d.degenerate += 1;
                    continue;
                };
                for (bi, r) in column.iter().enumerate() {
                    let Some(r) = *r else { continue };
                    if r <= 0.0 {
                        continue;
                    }
                    out.push(ExplanationCandidate {
                        partition: pi,
                        bin: bi,
                        input: p.input,
                        row_set: p.bins[bi].clone(),
                        attribute: score.attribute.clone(),
                        interestingness: score.value,
                        contribution: ContributionScore {
                            raw: r,
                            standardized: (r - mean) / sd,
                            partition_id: id.clone(),
                            attribute: score.attribute.clone(),
                        },
                    });
                }
            }
            (out, d)
        })
        .collect();
    let mut out = Vec::new();
    for (c, d) in per_partition {
        out.extend(c);
        diag.evaluated += d.evaluated;
        diag.undefined += d.undefined;
        diag.degenerate += d.degenerate;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frame::{Column, RowIndexSet};
    use crate::measure::{Diversity, Exceptionality, InterestingnessScore};
    use crate::ops::{parse_operation, AggFn, Aggregate};
    use crate::partition::{frequency_partition, numeric_partition, BinKind};

    fn toy(values: &[f64]) -> ExploratoryStep {
        let d = DataFrame::new(
            "d_in",
            vec![
                Column::from_strs("a", &["x", "x", "y"]),
                Column::from_f64("b", values),
            ],
        )
        .unwrap();
        let op = OperationSpec::group_by(&["a"], vec![Aggregate::new(AggFn::Sum, "b")]);
        make_step(op, vec![Arc::new(d)]).unwrap()
    }

    fn rows(frame_len: usize, idx: &[usize]) -> RowSet {
        RowSet {
            rows: RowIndexSet::new(frame_len, idx.to_vec()).unwrap(),
            label: "r".into(),
            source_attribute: "b".into(),
            bin_kind: BinKind::Value,
        }
    }

    #[test]
    fn toy_contribution_signs() {
        let neg = contribution(&toy(&[1.0, 2.0, 3.0]), 0, &rows(3, &[1]), "sum_b", &Diversity).unwrap();
        assert!(neg < 0.0);
        let pos = contribution(&toy(&[1.0, 1.0, 1.0]), 0, &rows(3, &[0]), "sum_b", &Diversity).unwrap();
        assert!(pos > 0.0);
        let zero = contribution(&toy(&[1.0, 2.0, 3.0]), 0, &rows(3, &[]), "sum_b", &Diversity).unwrap();
        assert_eq!(zero, 0.0);
        // removing a whole group leaves one group: undefined
        assert!(contribution(&toy(&[1.0, 2.0, 3.0]), 0, &rows(3, &[2]), "sum_b", &Diversity).is_none());
    }

    #[test]
    fn standardize_examples() {
        let s = [1.12, -0.04, -0.35, -0.055];
        assert!((standardize(&s, 0).unwrap() - 1.69).abs() < 0.01);
        assert_eq!(standardize(&[2.0, 2.0, 2.0], 0), Err(ContributionError::DegeneratePartition));
        assert_eq!(standardize(&[0.3, -0.3], 0).unwrap(), 1.0);
        assert_eq!(standardize(&[0.3], 3), Err(ContributionError::BadTarget(3)));
    }

    fn filter_fixture() -> ExploratoryStep {
        let d = DataFrame::new(
            "d0",
            vec![
                Column::from_f64("popularity", &[66.0, 50.0, 70.0, 65.0, 80.0, 12.0, 90.0]),
                Column::from_strs(
                    "decade",
                    &["2010s", "1990s", "2010s", "2000s", "2010s", "1990s", "2000s"],
                ),
            ],
        )
        .unwrap();
        make_step(parse_operation("FILTER popularity > 65").unwrap(), vec![Arc::new(d)]).unwrap()
    }

    fn generic(step: &ExploratoryStep, m: &dyn Measure, attrs: &[String], p: &RowPartition) -> Vec<Vec<Option<f64>>> {
        p.bins
            .iter()
            .map(|b| attrs.iter().map(|a| contribution(step, p.input, b, a, m)).collect())
            .collect()
    }

    #[test]
    fn fast_paths_match_reexecution() {
        let step = filter_fixture();
        let attrs = vec!["popularity".to_string(), "decade".to_string()];
        let base: Vec<Option<f64>> = attrs.iter().map(|a| Exceptionality.score(&step, a).ok()).collect();
        for p in [
            frequency_partition(&step.inputs()[0], "decade", 5).unwrap(),
            numeric_partition(&step.inputs()[0], "popularity", 3).unwrap(),
        ] {
            let fast = partition_contributions(&step, &Exceptionality, &attrs, &base, &p);
            assert_eq!(fast, generic(&step, &Exceptionality, &attrs, &p));
        }

        let union = make_step(
            OperationSpec::Union,
            vec![step.inputs()[0].clone(), Arc::new(step.output().clone())],
        )
        .unwrap();
        let base: Vec<Option<f64>> = attrs.iter().map(|a| Exceptionality.score(&union, a).ok()).collect();
        let mut p = frequency_partition(step.output(), "decade", 5).unwrap();
        p.input = 1;
        let fast = partition_contributions(&union, &Exceptionality, &attrs, &base, &p);
        assert_eq!(fast, generic(&union, &Exceptionality, &attrs, &p));

        let g = toy(&[1.0, 2.0, 3.0]);
        let attrs = vec!["sum_b".to_string()];
        let base = vec![Diversity.score(&g, "sum_b").ok()];
        let p = numeric_partition(&g.inputs()[0], "b", 3).unwrap();
        let fast = partition_contributions(&g, &Diversity, &attrs, &base, &p);
        assert_eq!(fast, generic(&g, &Diversity, &attrs, &p));
    }

    #[test]
    fn hand_computed_filter_contribution() {
        // before: CDFs over (1990s, 2000s, 2010s) are (2/7, 4/7, 1) vs
        // (0, 1/4, 1), KS 9/28; without 2010s: (1/2, 1) vs (0, 1), KS 1/2
        let step = filter_fixture();
        let p = frequency_partition(&step.inputs()[0], "decade", 5).unwrap();
        let bin = p.bins.iter().find(|b| b.label == "2010s").unwrap();
        assert_eq!(Exceptionality.score(&step, "decade").unwrap(), 4.0 / 7.0 - 0.25);
        let c = contribution(&step, 0, bin, "decade", &Exceptionality).unwrap();
        assert!((c - (9.0 / 28.0 - 0.5)).abs() < 1e-12);
    }

    #[test]
    fn assemble_keeps_only_positive_bins() {
        let step = filter_fixture();
        let scores: Vec<InterestingnessScore> = ["popularity", "decade"]
            .iter()
            .map(|a| InterestingnessScore {
                attribute: a.to_string(),
                value: Exceptionality.score(&step, a).unwrap(),
                measure: MeasureKind::Exceptionality,
            })
            .collect();
        let parts = vec![frequency_partition(&step.inputs()[0], "decade", 5).unwrap()];
        let mut diag = ContributionDiagnostics::default();
        let cands = assemble_candidates(&step, &Exceptionality, &scores, &parts, &mut diag);
        assert!(!cands.is_empty());
        assert_eq!(diag.evaluated + diag.undefined, 6);
        for c in &cands {
            assert!(c.contribution.raw > 0.0);
            let raws: Vec<f64> = parts[0]
                .bins
                .iter()
                .filter_map(|b| contribution(&step, 0, b, &c.attribute, &Exceptionality))
                .collect();
            let z = standardize(&raws, c.bin).unwrap();
            assert!((z - c.contribution.standardized).abs() < 1e-12);
        }
    }
}
