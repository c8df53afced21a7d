//! Captioned chart specifications for explanations, and their JSON (v1)
//! and text encodings.

use serde::Serialize;
use serde_json::{json, Value as Json};

use crate::contribution::ExplanationCandidate;
use crate::ops::{ExploratoryStep, Lineage};
use crate::partition::{RowPartition, IGNORE_LABEL};

pub const SCHEMA_VERSION: &str = "v1";

/// JSON Schema for the v1 report envelope.
pub const SCHEMA_V1: &str = include_str!("../schema/explanation-v1.json");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ChartKind {
    SideBySideBars,
    BarsWithMeanLine,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChartGroup {
    pub label: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub left_value: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub right_value: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChartSpec {
    pub kind: ChartKind,
    pub groups: Vec<ChartGroup>,
    pub highlighted: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_line: Option<f64>,
    pub axis_titles: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Explanation {
    pub candidate: ExplanationCandidate,
    pub chart: ChartSpec,
    pub caption: String,
}

impl Explanation {
    pub fn to_json(&self) -> Json {
        let c = &self.candidate;
        json!({
            "attribute": c.attribute,
            "bin_label": c.row_set.label,
            "bin_description": c.row_set.description(),
            "partition": c.contribution.partition_id,
            "input": c.input,
            "row_count": c.row_set.len(),
            "interestingness": c.interestingness,
            "std_contribution": c.contribution.standardized,
            "raw_contribution": c.contribution.raw,
            "chart": self.chart,
            "caption": self.caption,
        })
    }
}

const OUTSIDE: u32 = u32::MAX - 1;
const IGNORED: u32 = u32::MAX;

/// Bin of every output row: the bin of its source row in the partition's
/// input, `IGNORED` for the ignore-set and `OUTSIDE` for rows that came
/// from another input. Group-by outputs are attributed with
/// [`group_bins`].
fn output_bins(step: &ExploratoryStep, partition: &RowPartition) -> Vec<u32> {
    let assign = partition.assignment();
    match step.lineage.as_ref() {
        Lineage::Rows(l) => l[partition.input]
            .iter()
            .map(|src| src.map_or(OUTSIDE, |r| assign[r as usize]))
            .collect(),
        Lineage::Groups(g) => group_bins(&g.group_of_row, g.n_groups, &assign),
    }
}

/// A group belongs to a bin when all of its rows do; a mixed group goes to
/// the bin holding most of its rows, or to the ignore-set on a tie.
fn group_bins(group_of_row: &[u32], n_groups: usize, assign: &[u32]) -> Vec<u32> {
    let mut pairs: Vec<(u32, u32)> = group_of_row
        .iter()
        .zip(assign)
        .filter(|(g, _)| **g != u32::MAX)
        .map(|(g, b)| (*g, *b))
        .collect();
    pairs.sort_unstable();
    let mut out = vec![IGNORED; n_groups];
    let mut i = 0;
    while i < pairs.len() {
        let g = pairs[i].0;
        let (mut best, mut best_n, mut tie) = (IGNORED, 0usize, false);
        while i < pairs.len() && pairs[i].0 == g {
            let b = pairs[i].1;
            let mut j = i;
            while j < pairs.len() && pairs[j] == (g, b) {
                j += 1;
            }
            let n = j - i;
            if n > best_n {
                (best, best_n, tie) = (b, n, false);
            } else if n == best_n {
                tie = true;
            }
            i = j;
        }
        out[g as usize] = if tie { IGNORED } else { best };
    }
    out
}

fn percent(x: f64) -> String {
    format!("{:.1}%", x * 100.0)
}

fn short(v: f64) -> String {
    let s = format!("{v:.3}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".into()
    } else {
        s.to_string()
    }
}

fn axis_attribute(partition: &RowPartition) -> String {
    match partition.bins.first().map(|b| &b.bin_kind) {
        Some(crate::partition::BinKind::MappedValue { via_attribute }) => via_attribute.clone(),
        _ => partition.attribute.clone(),
    }
}

/// Side-by-side bars of each bin's share of the input rows (left) and of
/// the output rows (right).
pub fn render_exceptionality(
    candidate: &ExplanationCandidate,
    step: &ExploratoryStep,
    partition: &RowPartition,
) -> Explanation {
    let n_in = partition.frame_len().max(1) as f64;
    let out_bins = output_bins(step, partition);
    let n_out = out_bins.len().max(1) as f64;
    let mut out_counts = vec![0usize; partition.bins.len() + 1];
    for &b in &out_bins {
        match b {
            OUTSIDE => {}
            IGNORED => out_counts[partition.bins.len()] += 1,
            b => out_counts[b as usize] += 1,
        }
    }
    let mut groups: Vec<ChartGroup> = partition
        .bins
        .iter()
        .enumerate()
        .map(|(i, bin)| ChartGroup {
            label: bin.label.clone(),
            left_value: Some(bin.len() as f64 / n_in),
            right_value: Some(out_counts[i] as f64 / n_out),
            value: None,
        })
        .collect();
    if !partition.ignore_set.is_empty() {
        groups.push(ChartGroup {
            label: IGNORE_LABEL.into(),
            left_value: Some(partition.ignore_set.len() as f64 / n_in),
            right_value: Some(out_counts[partition.bins.len()] as f64 / n_out),
            value: None,
        });
    }
    let g = &groups[candidate.bin];
    let (before, after) = (g.left_value.unwrap_or(0.0), g.right_value.unwrap_or(0.0));
    let change = if before > 0.0 { after / before } else { 0.0 };
    let caption = format!(
        "The distribution of column '{}' changed: rows where {} are {} of the result vs {} before ({:.1}× change).",
        candidate.attribute,
        candidate.row_set.description(),
        percent(after),
        percent(before),
        change
    );
    Explanation {
        candidate: candidate.clone(),
        chart: ChartSpec {
            kind: ChartKind::SideBySideBars,
            highlighted: candidate.row_set.label.clone(),
            groups,
            mean_line: None,
            axis_titles: vec![axis_attribute(partition), "share of rows".into()],
        },
        caption,
    }
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Bars of the mean aggregate over the output groups attributed to each
/// bin, against the overall mean. Bins without groups are left out, except
/// the candidate's own bin, which then averages over every group sharing
/// at least one row with it.
pub fn render_diversity(
    candidate: &ExplanationCandidate,
    step: &ExploratoryStep,
    partition: &RowPartition,
) -> Explanation {
    let values: Vec<Option<f64>> = step
        .output()
        .column(&candidate.attribute)
        .and_then(|c| c.as_numeric())
        .map(<[Option<f64>]>::to_vec)
        .unwrap_or_default();
    let out_bins = output_bins(step, partition);
    let nb = partition.bins.len();
    let mut per_bin: Vec<Vec<f64>> = vec![Vec::new(); nb + 1];
    for (g, &b) in out_bins.iter().enumerate() {
        if let Some(Some(v)) = values.get(g) {
            let slot = if b == IGNORED || b == OUTSIDE { nb } else { b as usize };
            per_bin[slot].push(*v);
        }
    }
    if per_bin[candidate.bin].is_empty() {
        if let Lineage::Groups(gi) = step.lineage.as_ref() {
            let mut touched = vec![false; gi.n_groups];
            for &r in candidate.row_set.rows.as_u32() {
                let g = gi.group_of_row[r as usize];
                if g != u32::MAX {
                    touched[g as usize] = true;
                }
            }
            per_bin[candidate.bin] = touched
                .iter()
                .zip(&values)
                .filter_map(|(t, v)| if *t { *v } else { None })
                .collect();
        }
    }
    let all: Vec<f64> = values.iter().flatten().copied().collect();
    let overall = mean(&all).unwrap_or(0.0);
    let sd = if all.len() >= 2 {
        (all.iter().map(|v| (v - overall) * (v - overall)).sum::<f64>() / (all.len() - 1) as f64)
            .sqrt()
    } else {
        0.0
    };
    let mut groups = Vec::new();
    for (i, vals) in per_bin.iter().enumerate() {
        let Some(m) = mean(vals) else { continue };
        let label = if i == nb {
            IGNORE_LABEL.to_string()
        } else {
            partition.bins[i].label.clone()
        };
        groups.push(ChartGroup {
            label,
            left_value: None,
            right_value: None,
            value: Some(m),
        });
    }
    let v = mean(&per_bin[candidate.bin]).unwrap_or(overall);
    let k = if sd > 0.0 { (v - overall).abs() / sd } else { 0.0 };
    let caption = format!(
        "Groups where {} have mean '{}' of {}, {:.2} standard deviations {} the overall mean {}.",
        candidate.row_set.description(),
        candidate.attribute,
        short(v),
        k,
        if v < overall { "below" } else { "above" },
        short(overall)
    );
    Explanation {
        candidate: candidate.clone(),
        chart: ChartSpec {
            kind: ChartKind::BarsWithMeanLine,
            highlighted: candidate.row_set.label.clone(),
            groups,
            mean_line: Some(overall),
            axis_titles: vec![axis_attribute(partition), format!("mean {}", candidate.attribute)],
        },
        caption,
    }
}

/// The chart matching the step's operation.
pub fn render(
    candidate: &ExplanationCandidate,
    step: &ExploratoryStep,
    partition: &RowPartition,
) -> Explanation {
    let numeric_agg = step.op().is_group_by()
        && step
            .output()
            .column(&candidate.attribute)
            .is_some_and(|c| c.as_numeric().is_some());
    if numeric_agg {
        render_diversity(candidate, step, partition)
    } else {
        render_exceptionality(candidate, step, partition)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputFormat {
    Json,
    Text,
}

/// The explanations alone: a JSON array, or one caption per line.
pub fn serialize_explanations(list: &[Explanation], format: OutputFormat) -> Vec<u8> {
    match format {
        OutputFormat::Json => {
            let arr: Vec<Json> = list.iter().map(Explanation::to_json).collect();
            serde_json::to_vec(&arr).expect("explanations serialize")
        }
        OutputFormat::Text => {
            let mut s = String::new();
            for e in list {
                s.push_str(&e.caption);
                s.push('\n');
            }
            s.into_bytes()
        }
    }
}

/// The full v1 report for one step.
pub fn report_json(step: &ExploratoryStep, list: &[Explanation], extra: Option<Json>) -> Json {
    let mut v = json!({
        "version": SCHEMA_VERSION,
        "status": if list.is_empty() { "no_explanations" } else { "ok" },
        "step": {
            "op": step.op().to_string(),
            "inputs": step.inputs().iter().map(|f| f.name()).collect::<Vec<_>>(),
        },
        "explanations": list.iter().map(Explanation::to_json).collect::<Vec<_>>(),
    });
    if let (Some(extra), Some(obj)) = (extra, v.as_object_mut()) {
        obj.insert("diagnostics".into(), extra);
    }
    v
}

fn check(errs: &mut Vec<String>, ok: bool, msg: impl FnOnce() -> String) {
    if !ok {
        errs.push(msg());
    }
}

fn is_num(v: &Json) -> bool {
    v.as_f64().is_some_and(f64::is_finite)
}

/// Validates one explanation object against the v1 layout.
pub fn validate_explanation(e: &Json, path: &str, errs: &mut Vec<String>) {
    let Some(obj) = e.as_object() else {
        errs.push(format!("{path}: not an object"));
        return;
    };
    for key in ["attribute", "bin_label", "caption"] {
        check(errs, obj.get(key).is_some_and(Json::is_string), || {
            format!("{path}.{key}: expected a string")
        });
    }
    for key in ["interestingness", "std_contribution", "raw_contribution"] {
        check(errs, obj.get(key).is_some_and(is_num), || {
            format!("{path}.{key}: expected a finite number")
        });
    }
    let Some(chart) = obj.get("chart").and_then(Json::as_object) else {
        errs.push(format!("{path}.chart: expected an object"));
        return;
    };
    let kind = chart.get("kind").and_then(Json::as_str);
    check(errs, matches!(kind, Some("side_by_side_bars" | "bars_with_mean_line")), || {
        format!("{path}.chart.kind: unknown kind {kind:?}")
    });
    let groups = chart.get("groups").and_then(Json::as_array);
    let Some(groups) = groups else {
        errs.push(format!("{path}.chart.groups: expected an array"));
        return;
    };
    let mut labels = Vec::new();
    for (i, g) in groups.iter().enumerate() {
        let gp = format!("{path}.chart.groups[{i}]");
        let label = g.get("label").and_then(Json::as_str);
        check(errs, label.is_some(), || format!("{gp}.label: expected a string"));
        labels.extend(label);
        let wanted: &[&str] = if kind == Some("side_by_side_bars") {
            &["left_value", "right_value"]
        } else {
            &["value"]
        };
        for key in wanted {
            check(errs, g.get(*key).is_some_and(is_num), || {
                format!("{gp}.{key}: expected a finite number")
            });
        }
    }
    let highlighted = chart.get("highlighted").and_then(Json::as_str);
    check(errs, highlighted.is_some_and(|h| labels.contains(&h)), || {
        format!("{path}.chart.highlighted: must name one of the groups")
    });
    check(errs, highlighted == obj.get("bin_label").and_then(Json::as_str), || {
        format!("{path}.chart.highlighted: must equal bin_label")
    });
    if kind == Some("bars_with_mean_line") {
        check(errs, chart.get("mean_line").is_some_and(is_num), || {
            format!("{path}.chart.mean_line: expected a finite number")
        });
    }
}

/// Validates a v1 report envelope. Returns every violation found.
pub fn validate_report(v: &Json) -> Result<(), Vec<String>> {
    let mut errs = Vec::new();
    check(&mut errs, v.get("version").and_then(Json::as_str) == Some(SCHEMA_VERSION), || {
        "version: expected \"v1\"".into()
    });
    let step = v.get("step");
    check(&mut errs, step.and_then(|s| s.get("op")).is_some_and(Json::is_string), || {
        "step.op: expected a string".into()
    });
    let inputs = step.and_then(|s| s.get("inputs")).and_then(Json::as_array);
    check(
        &mut errs,
        inputs.is_some_and(|a| !a.is_empty() && a.iter().all(Json::is_string)),
        || "step.inputs: expected a non-empty array of strings".into(),
    );
    match v.get("explanations").and_then(Json::as_array) {
        Some(list) => {
            for (i, e) in list.iter().enumerate() {
                validate_explanation(e, &format!("explanations[{i}]"), &mut errs);
            }
        }
        None => errs.push("explanations: expected an array".into()),
    }
    if errs.is_empty() {
        Ok(())
    } else {
        Err(errs)
    }
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// A plain SVG drawing of the chart with its caption underneath.
pub fn render_svg(e: &Explanation) -> String {
    const W: f64 = 640.0;
    const H: f64 = 300.0;
    const TOP: f64 = 20.0;
    let chart = &e.chart;
    let bars: Vec<(String, Vec<f64>)> = chart
        .groups
        .iter()
        .map(|g| {
            let vals = match chart.kind {
                ChartKind::SideBySideBars => vec![g.left_value.unwrap_or(0.0), g.right_value.unwrap_or(0.0)],
                ChartKind::BarsWithMeanLine => vec![g.value.unwrap_or(0.0)],
            };
            (g.label.clone(), vals)
        })
        .collect();
    let mut hi = chart.mean_line.unwrap_or(0.0).max(0.0);
    let mut lo = chart.mean_line.unwrap_or(0.0).min(0.0);
    for (_, v) in &bars {
        for x in v {
            hi = hi.max(*x);
            lo = lo.min(*x);
        }
    }
    let span = if hi > lo { hi - lo } else { 1.0 };
    let y = |v: f64| TOP + (hi - v) / span * (H - TOP - 40.0);
    let slot = W / bars.len().max(1) as f64;
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{}\" font-family=\"sans-serif\" font-size=\"11\">\n",
        H + 30.0
    );
    for (i, (label, vals)) in bars.iter().enumerate() {
        let bw = slot * 0.8 / vals.len() as f64;
        let highlighted = *label == chart.highlighted;
        for (j, v) in vals.iter().enumerate() {
            let x = i as f64 * slot + slot * 0.1 + j as f64 * bw;
            let (top, bottom) = (y(v.max(0.0)), y(v.min(0.0)));
            let fill = match (highlighted, vals.len() == 2 && j == 0) {
                (true, true) => "#f4a582",
                (true, false) => "#d6604d",
                (false, true) => "#c6dbef",
                (false, false) => "#4393c3",
            };
            s.push_str(&format!(
                "<rect x=\"{x:.1}\" y=\"{top:.1}\" width=\"{bw:.1}\" height=\"{:.1}\" fill=\"{fill}\"/>\n",
                (bottom - top).max(0.5)
            ));
        }
        s.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{}</text>\n",
            i as f64 * slot + slot / 2.0,
            H - 20.0,
            esc(label)
        ));
    }
    if let Some(m) = chart.mean_line {
        s.push_str(&format!(
            "<line x1=\"0\" x2=\"{W}\" y1=\"{0:.1}\" y2=\"{0:.1}\" stroke=\"red\" stroke-width=\"2\"/>\n",
            y(m)
        ));
    }
    s.push_str(&format!(
        "<text x=\"4\" y=\"{:.1}\">{}</text>\n</svg>\n",
        H + 15.0,
        esc(&e.caption)
    ));
    s
}
