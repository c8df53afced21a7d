//! The full pipeline for one step: score columns, partition the inputs,
//! measure contributions, keep the skyline, rank and render.

use std::collections::HashSet;

use serde::Serialize;
use thiserror::Error;

use crate::contribution::{assemble_candidates, ContributionDiagnostics, ExplanationCandidate};
use crate::measure::{score_all_columns, MeasureError, MeasureRegistry, SamplingConfig, ScoreSet};
use crate::ops::ExploratoryStep;
use crate::partition::{all_partitions, PartitionConfig, PartitionDiagnostics};
use crate::render::{render, Explanation};
use crate::skyline::{rank_top_k, skyline, RankError, RankWeights};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Measure(#[from] MeasureError),
    #[error(transparent)]
    Rank(#[from] RankError),
}

#[derive(Debug, Clone, Default)]
pub struct ExplainConfig {
    /// Registry name of the measure; the operation's default when unset.
    pub measure: Option<String>,
    pub registry: MeasureRegistry,
    pub partitions: PartitionConfig,
    pub sampling: SamplingConfig,
    /// Only these output attributes are scored. Partitions still use every
    /// input attribute.
    pub restrict: Option<Vec<String>>,
    pub top_k: Option<usize>,
    pub weights: RankWeights,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct Diagnostics {
    pub measure: String,
    pub sampled: bool,
    pub skipped_columns: Vec<crate::measure::SkippedColumn>,
    pub partitions: usize,
    pub rejected_partitions: PartitionDiagnostics,
    pub contributions: ContributionDiagnostics,
    pub candidates: usize,
    /// Candidates dropped because an earlier one had the same attribute
    /// and rows (e.g. a many-to-one partition repeating a frequency one).
    pub duplicate_candidates: usize,
    pub skyline: usize,
}

#[derive(Debug, Clone)]
pub struct ExplainResult {
    pub explanations: Vec<Explanation>,
    pub scores: ScoreSet,
    pub diagnostics: Diagnostics,
}

/// Explains `step`. An empty explanation list is a valid outcome.
pub fn explain_step(step: &ExploratoryStep, config: &ExplainConfig) -> Result<ExplainResult, EngineError> {
    if config.top_k == Some(0) {
        return Err(RankError::ZeroK.into());
    }
    let (measure_name, measure) = config.registry.resolve(config.measure.as_deref(), step.op())?;
    let scores = score_all_columns(
        step,
        measure.as_ref(),
        &config.sampling,
        config.restrict.as_deref(),
    )?;
    let mut diag = Diagnostics {
        measure: measure_name,
        sampled: config.sampling.enabled
            && step.inputs().iter().any(|f| f.row_count() > config.sampling.sample_size),
        skipped_columns: scores.skipped.clone(),
        ..Default::default()
    };

    let partitions = all_partitions(step, &config.partitions, &mut diag.rejected_partitions);
    diag.partitions = partitions.len();
    let all = assemble_candidates(
        step,
        measure.as_ref(),
        &scores.scores,
        &partitions,
        &mut diag.contributions,
    );
    diag.candidates = all.len();

    let mut seen = HashSet::new();
    let candidates: Vec<ExplanationCandidate> = all
        .into_iter()
        .filter(|c| seen.insert((c.attribute.clone(), c.input, c.row_set.rows.clone())))
        .collect();
    diag.duplicate_candidates = diag.candidates - candidates.len();

    let sky = skyline(&candidates);
    diag.skyline = sky.len();
    let ranked = match config.top_k.unwrap_or(sky.len()) {
        0 => Vec::new(),
        k => rank_top_k(&sky, config.weights, k)?,
    };
    let explanations = ranked
        .iter()
        .map(|c| render(c, step, &partitions[c.partition]))
        .collect();
    Ok(ExplainResult {
        explanations,
        scores,
        diagnostics: diag,
    })
}
