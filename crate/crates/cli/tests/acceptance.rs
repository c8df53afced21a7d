//! Acceptance suite. Prints one PASS/FAIL line per criterion straight to
//! stdout (bypassing the harness capture) and fails if any criterion fails.
//! The performance criterion is a soft bound and only warns.

use std::cmp::Ordering;
use std::collections::{HashMap, HashSet};
use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::Command;
use std::sync::Arc;
use std::time::{Duration, Instant};

use eda_explain::contribution::{contribution, partition_contributions, standardize};
use eda_explain::engine::{explain_step, ExplainConfig};
use eda_explain::eval::{generate_synthetic, synthetic_trials, PlantedSignal};
use eda_explain::frame::{
    read_csv_str, write_csv, Cell, Column, CsvOptions, DataFrame, DiscreteDistribution, RowIndexSet, Value,
};
use eda_explain::measure::{coefficient_of_variation, ks_statistic, Diversity, Exceptionality, Measure, SamplingConfig};
use eda_explain::ops::{make_step, Aggregate, AggFn, Comparator, ExploratoryStep, Literal, OperationSpec};
use eda_explain::partition::{
    all_partitions, frame_partitions, mine_many_to_one, BinKind, DatePrefix, PartitionConfig,
    PartitionDiagnostics, PartitionMethod, PartitionRegistry, RowSet,
};
use eda_explain::skyline::skyline_indices;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn check(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

// ---------------------------------------------------------------- 1

fn c1_standardization() -> Outcome {
    let scores = [1.12, -0.04, -0.35, -0.055];
    let z = standardize(&scores, 0).map_err(|e| e.to_string())?;
    check((z - 1.69).abs() <= 0.01, || format!("population z = {z}"))?;
    // the n-1 variant must not pass the same check
    let n = scores.len() as f64;
    let mean = scores.iter().sum::<f64>() / n;
    let ss: f64 = scores.iter().map(|s| (s - mean) * (s - mean)).sum();
    let sample_z = (scores[0] - mean) / (ss / (n - 1.0)).sqrt();
    check((sample_z - 1.69).abs() > 0.01, || format!("sample-std z = {sample_z} also passes"))?;
    Ok(format!("z = {z:.4}; sample-std variant {sample_z:.4} rejected"))
}

// ---------------------------------------------------------------- 2

fn toy_group_sum(rows: &[(&str, f64)]) -> ExploratoryStep {
    let keys: Vec<&str> = rows.iter().map(|r| r.0).collect();
    let vals: Vec<f64> = rows.iter().map(|r| r.1).collect();
    let frame = DataFrame::new("t", vec![Column::from_strs("g", &keys), Column::from_f64("v", &vals)]).unwrap();
    let op = OperationSpec::group_by(&["g"], vec![Aggregate::new(AggFn::Sum, "v")]);
    make_step(op, vec![Arc::new(frame)]).unwrap()
}

fn single_row(frame_len: usize, row: usize) -> RowSet {
    RowSet {
        rows: RowIndexSet::new(frame_len, vec![row]).unwrap(),
        label: format!("row {row}"),
        source_attribute: "g".into(),
        bin_kind: BinKind::Value,
    }
}

fn c2_contribution_signs() -> Outcome {
    let a = toy_group_sum(&[("x", 1.0), ("x", 2.0), ("y", 3.0)]);
    let ca = contribution(&a, 0, &single_row(3, 1), "sum_v", &Diversity).ok_or("undefined contribution (x,2)")?;
    check(ca < 0.0, || format!("contribution((x,2)) = {ca}, expected < 0"))?;
    let b = toy_group_sum(&[("x", 1.0), ("x", 1.0), ("y", 1.0)]);
    let cb = contribution(&b, 0, &single_row(3, 0), "sum_v", &Diversity).ok_or("undefined contribution (x,1)")?;
    check(cb > 0.0, || format!("contribution((x,1)) = {cb}, expected > 0"))?;
    Ok(format!("{ca:.4} < 0 and {cb:.4} > 0"))
}

// ---------------------------------------------------------------- 3

fn random_frame(rng: &mut ChaCha8Rng, name: &str, rows: usize, numeric: &[&str], with_cat: bool) -> DataFrame {
    let keys = ["a", "b", "c"];
    let mut cols = vec![Column::categorical(
        "k",
        (0..rows)
            .map(|_| (!rng.gen_bool(0.08)).then(|| keys[rng.gen_range(0..keys.len())]))
            .collect(),
    )];
    for n in numeric {
        let step = [1.0, 0.5, 2.5][rng.gen_range(0..3)];
        cols.push(Column::numeric(
            *n,
            (0..rows)
                .map(|_| (!rng.gen_bool(0.08)).then(|| f64::from(rng.gen_range(-2..6)) * step))
                .collect(),
        ));
    }
    if with_cat {
        let cats = ["p", "q", "r r"];
        cols.push(Column::categorical(
            "c",
            (0..rows).map(|_| Some(cats[rng.gen_range(0..cats.len())])).collect(),
        ));
    }
    DataFrame::new(name, cols).unwrap()
}

/// A fixture of at most 12 rows per input and 4 columns per input, over
/// the operation kind `kind` (0..4).
fn fixture(seed: u64, kind: u64) -> Option<ExploratoryStep> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows = rng.gen_range(2..=12);
    let (op, inputs) = match kind {
        0 => {
            let cat = rng.gen_bool(0.5);
            let f = random_frame(&mut rng, "f", rows, &["x", "y"], cat);
            let op = if rng.gen_bool(0.75) {
                let cmp = [Comparator::Gt, Comparator::Ge, Comparator::Lt, Comparator::Ne][rng.gen_range(0..4)];
                OperationSpec::filter("x", cmp, Literal::Number(f64::from(rng.gen_range(-1..5))))
            } else {
                OperationSpec::filter("k", Comparator::Eq, Literal::Text("a".into()))
            };
            (op, vec![f])
        }
        1 => {
            let cat = rng.gen_bool(0.5);
            let f = random_frame(&mut rng, "f", rows, &["x", "y"], cat);
            let funcs = [AggFn::Mean, AggFn::Sum, AggFn::Count, AggFn::Min, AggFn::Max];
            let mut aggs = vec![Aggregate::new(*funcs.choose(&mut rng).unwrap(), "x")];
            aggs.push(Aggregate::new(*funcs.choose(&mut rng).unwrap(), "y"));
            (OperationSpec::group_by(&["k"], aggs), vec![f])
        }
        2 => {
            let l = random_frame(&mut rng, "l", rows, &["x", "y"], false);
            let r_rows = rng.gen_range(2..=12);
            let cat = rng.gen_bool(0.5);
            let r = random_frame(&mut rng, "r", r_rows, &["z"], cat);
            (OperationSpec::join("k"), vec![l, r])
        }
        _ => {
            let a = random_frame(&mut rng, "u1", rows, &["x", "y"], false);
            let b_rows = rng.gen_range(2..=12);
            let b = random_frame(&mut rng, "u2", b_rows, &["x", "y"], false);
            (OperationSpec::Union, vec![a, b])
        }
    };
    make_step(op, inputs.into_iter().map(Arc::new).collect()).ok()
}

fn csv_text(frame: &DataFrame) -> String {
    let mut buf = Vec::new();
    write_csv(frame, &mut buf).unwrap();
    String::from_utf8(buf).unwrap()
}

/// Drops the CSV lines of `rows` and reads the rest back with the original
/// dtypes forced.
fn reduced_via_csv(frame: &DataFrame, rows: &RowIndexSet) -> DataFrame {
    let text = csv_text(frame);
    let mut lines = text.lines();
    let mut kept = String::from(lines.next().unwrap());
    kept.push('\n');
    let drop: HashSet<usize> = rows.iter().collect();
    let body: Vec<&str> = lines.collect();
    assert_eq!(body.len(), frame.row_count(), "one CSV line per row");
    for (i, line) in body.iter().enumerate() {
        if !drop.contains(&i) {
            kept.push_str(line);
            kept.push('\n');
        }
    }
    let opts = CsvOptions {
        dtypes: frame.schema().into_iter().collect(),
        ..CsvOptions::default()
    };
    if kept.lines().count() == 1 {
        // the reader rejects a header-only file; build the empty frame
        return frame.take_rows(&[]);
    }
    read_csv_str(frame.name(), &kept, &opts).unwrap()
}

fn cmp_value(a: &Value, b: &Value) -> Ordering {
    match (a, b) {
        (Value::Number(x), Value::Number(y)) => x.partial_cmp(y).unwrap(),
        (Value::Text(x), Value::Text(y)) => x.cmp(y),
        (Value::Number(_), Value::Text(_)) => Ordering::Less,
        (Value::Text(_), Value::Number(_)) => Ordering::Greater,
    }
}

fn non_null(col: &Column) -> Vec<Value> {
    (0..col.len()).filter_map(|r| col.value(r)).collect()
}

/// Max CDF gap over the merged support, by direct counting.
fn brute_ks(p: &[Value], q: &[Value]) -> Option<f64> {
    if p.is_empty() || q.is_empty() {
        return None;
    }
    let mut support: Vec<&Value> = p.iter().chain(q).collect();
    support.sort_by(|a, b| cmp_value(a, b));
    support.dedup_by(|a, b| cmp_value(a, b) == Ordering::Equal);
    let cdf = |xs: &[Value], v: &Value| xs.iter().filter(|x| cmp_value(x, v) != Ordering::Greater).count() as f64 / xs.len() as f64;
    Some(support.iter().map(|v| (cdf(p, v) - cdf(q, v)).abs()).fold(0.0, f64::max))
}

fn brute_cv(values: &[f64]) -> Option<f64> {
    let n = values.len();
    if n < 2 {
        return None;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if mean == 0.0 {
        return None;
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    Some(var.sqrt() / mean.abs())
}

/// Independent score of `attr`: KS against the input the column came from
/// (join keys against the first input, union maxed over non-empty inputs)
/// or CV over the non-null aggregates.
fn oracle_score(step: &ExploratoryStep, attr: &str) -> Option<f64> {
    let out = step.output().column(attr)?;
    match step.op() {
        OperationSpec::GroupBy { aggs, .. } => {
            if !aggs.iter().any(|a| a.output_name() == attr) {
                return None;
            }
            let vals: Vec<f64> = out.as_numeric()?.iter().flatten().copied().collect();
            brute_cv(&vals)
        }
        OperationSpec::Union => {
            let q = non_null(out);
            step.inputs()
                .iter()
                .filter_map(|f| brute_ks(&non_null(f.column(attr)?), &q))
                .reduce(f64::max)
        }
        OperationSpec::Join { on, .. } if on == attr => brute_ks(&non_null(step.inputs()[0].column(attr)?), &non_null(out)),
        _ => {
            let src = step.inputs().iter().find_map(|f| f.column(attr))?;
            brute_ks(&non_null(src), &non_null(out))
        }
    }
}

fn oracle_contribution(step: &ExploratoryStep, input: usize, rows: &RowIndexSet, attr: &str) -> Option<f64> {
    let base = oracle_score(step, attr)?;
    let mut inputs: Vec<Arc<DataFrame>> = step.inputs().to_vec();
    inputs[input] = Arc::new(reduced_via_csv(&inputs[input], rows));
    let reduced = make_step(step.op().clone(), inputs).ok()?;
    Some(base - oracle_score(&reduced, attr)?)
}

fn agree(engine: Option<f64>, oracle: Option<f64>) -> bool {
    match (engine, oracle) {
        (None, None) => true,
        (Some(a), Some(b)) => (a - b).abs() <= 1e-12,
        _ => false,
    }
}

fn c3_intervention_oracle() -> Outcome {
    let t = Instant::now();
    let (mut fixtures, mut compared, mut defined) = (0, 0, 0);
    let mut kinds = HashSet::new();
    let mut seed = 0u64;
    while fixtures < 50 {
        let kind = fixtures % 4;
        seed += 1;
        let Some(step) = fixture(seed, kind) else { continue };
        fixtures += 1;
        kinds.insert(step.op().kind_name());
        let measure: &dyn Measure = if step.op().is_group_by() { &Diversity } else { &Exceptionality };
        let attrs: Vec<String> = step
            .output()
            .column_names()
            .filter(|a| measure.applies_to(&step, a))
            .map(str::to_string)
            .collect();
        let base: Vec<Option<f64>> = attrs.iter().map(|a| measure.score(&step, a).ok()).collect();
        for (a, b) in attrs.iter().zip(&base) {
            check(agree(*b, oracle_score(&step, a)), || {
                format!("fixture {seed}: base score of {a}: engine {b:?} vs oracle {:?}", oracle_score(&step, a))
            })?;
        }

        let mut diag = PartitionDiagnostics::default();
        let partitions = all_partitions(&step, &PartitionConfig::default(), &mut diag);
        for p in &partitions {
            let fast = partition_contributions(&step, measure, &attrs, &base, p);
            for (bi, bin) in p.bins.iter().enumerate() {
                for (ai, a) in attrs.iter().enumerate() {
                    let oracle = oracle_contribution(&step, p.input, &bin.rows, a);
                    let direct = contribution(&step, p.input, bin, a, measure);
                    compared += 1;
                    defined += usize::from(oracle.is_some());
                    check(agree(fast[bi][ai], oracle) && agree(direct, oracle), || {
                        format!(
                            "fixture {seed} ({}), partition {}, bin '{}', attr {a}: batch {:?}, direct {direct:?}, oracle {oracle:?}",
                            step.op(),
                            p.id(),
                            bin.label,
                            fast[bi][ai]
                        )
                    })?;
                }
            }
        }
        // plus arbitrary row sets the partitions would never produce
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xfeed);
        for _ in 0..4 {
            let input = rng.gen_range(0..step.inputs().len());
            let len = step.inputs()[input].row_count();
            let rows: Vec<usize> = (0..len).filter(|_| rng.gen_bool(0.3)).collect();
            let set = RowSet {
                rows: RowIndexSet::new(len, rows).unwrap(),
                label: "random".into(),
                source_attribute: "k".into(),
                bin_kind: BinKind::Value,
            };
            for a in &attrs {
                let oracle = oracle_contribution(&step, input, &set.rows, a);
                let direct = contribution(&step, input, &set, a, measure);
                compared += 1;
                defined += usize::from(oracle.is_some());
                check(agree(direct, oracle), || {
                    format!("fixture {seed} ({}), random set, attr {a}: engine {direct:?}, oracle {oracle:?}", step.op())
                })?;
            }
        }
    }
    check(kinds.len() == 4, || format!("only op kinds {kinds:?} covered"))?;
    check(defined * 2 > compared, || format!("only {defined} of {compared} comparisons defined"))?;
    let el = t.elapsed();
    check(el < Duration::from_secs(10), || format!("took {el:?}"))?;
    Ok(format!(
        "{fixtures} fixtures, {compared} contributions ({defined} defined) agree to 1e-12 in {:.2}s",
        el.as_secs_f64()
    ))
}

// ---------------------------------------------------------------- 4

fn random_distribution(rng: &mut ChaCha8Rng, text: bool) -> (DiscreteDistribution, Vec<(Value, f64)>) {
    let size = rng.gen_range(1..=20);
    let mut entries: Vec<(Value, f64)> = Vec::new();
    let mut seen = HashSet::new();
    while entries.len() < size {
        let v = rng.gen_range(0..30);
        if !seen.insert(v) {
            continue;
        }
        let value = if text {
            Value::Text(Arc::from(format!("v{v}")))
        } else {
            Value::Number(f64::from(v) * 0.5)
        };
        entries.push((value, f64::from(rng.gen_range(1..10))));
    }
    let total: f64 = entries.iter().map(|e| e.1).sum();
    let normalized: Vec<(Value, f64)> = entries.iter().map(|(v, w)| (v.clone(), w / total)).collect();
    (DiscreteDistribution::from_weights(entries).unwrap(), normalized)
}

fn brute_ks_weighted(p: &[(Value, f64)], q: &[(Value, f64)]) -> f64 {
    let mut support: Vec<&Value> = p.iter().chain(q).map(|e| &e.0).collect();
    support.sort_by(|a, b| cmp_value(a, b));
    support.dedup_by(|a, b| cmp_value(a, b) == Ordering::Equal);
    let cdf = |d: &[(Value, f64)], v: &Value| {
        d.iter()
            .filter(|e| cmp_value(&e.0, v) != Ordering::Greater)
            .map(|e| e.1)
            .sum::<f64>()
    };
    support.iter().map(|v| (cdf(p, v) - cdf(q, v)).abs()).fold(0.0, f64::max)
}

fn c4_ks_oracle() -> Outcome {
    let uni = |vals: &[f64]| {
        DiscreteDistribution::from_weights(vals.iter().map(|&v| (Value::Number(v), 1.0))).unwrap()
    };
    let half = ks_statistic(&uni(&[1.0, 2.0, 3.0, 4.0]), &uni(&[3.0, 4.0])).map_err(|e| e.to_string())?;
    check((half - 0.5).abs() <= 1e-12, || format!("uniform{{1..4}} vs uniform{{3,4}} = {half}"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst: f64 = 0.0;
    for i in 0..200 {
        let text = i % 4 == 3;
        let (p, pw) = random_distribution(&mut rng, text);
        let (q, qw) = random_distribution(&mut rng, text);
        let got = ks_statistic(&p, &q).map_err(|e| e.to_string())?;
        let want = brute_ks_weighted(&pw, &qw);
        worst = worst.max((got - want).abs());
        check((got - want).abs() <= 1e-12, || format!("pair {i}: engine {got}, brute force {want}"))?;
    }
    Ok(format!("0.5 case exact; 200 pairs, max error {worst:.1e}"))
}

// ---------------------------------------------------------------- 5

fn dominated(p: (f64, f64), q: (f64, f64)) -> bool {
    q.0 > p.0 && q.1 > p.1
}

fn brute_skyline(points: &[(f64, f64)]) -> Vec<usize> {
    (0..points.len())
        .filter(|&i| !points.iter().any(|&q| dominated(points[i], q)))
        .collect()
}

fn c5_skyline_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut total = 0;
    for set in 0..100 {
        let n = rng.gen_range(0..=200);
        let coarse = set % 3 == 0;
        let points: Vec<(f64, f64)> = (0..n)
            .map(|_| {
                if coarse {
                    (f64::from(rng.gen_range(0..6)) / 5.0, f64::from(rng.gen_range(-3..4)))
                } else {
                    (rng.gen::<f64>(), rng.gen_range(-3.0..3.0))
                }
            })
            .collect();
        let mut got = skyline_indices(&points);
        got.sort_unstable();
        let want = brute_skyline(&points);
        check(got == want, || format!("set {set}: engine {got:?} vs brute force {want:?}"))?;
        for &i in &got {
            check(!points.iter().any(|&q| dominated(points[i], q)), || format!("set {set}: dominated point {i} kept"))?;
        }
        let rescaled: Vec<(f64, f64)> = points.iter().map(|&(a, b)| (a.exp() * 3.0 - 7.0, b * b * b + 2.0 * b)).collect();
        let mut again = skyline_indices(&rescaled);
        again.sort_unstable();
        check(again == got, || format!("set {set}: skyline changed under monotone rescaling"))?;
        total += got.len();
    }
    Ok(format!("100 sets match brute force ({total} skyline points); rescaling invariant"))
}

// ---------------------------------------------------------------- 6

fn partition_test_frame(rng: &mut ChaCha8Rng, rows: usize) -> DataFrame {
    let null = |rng: &mut ChaCha8Rng| rng.gen_bool(0.1);
    let ties: Vec<Option<f64>> = (0..rows).map(|_| (!null(rng)).then(|| f64::from(rng.gen_range(0..5)))).collect();
    let distinct: Vec<Option<f64>> = {
        let mut v: Vec<f64> = (0..rows).map(|i| i as f64 * 1.25 - 3.0).collect();
        v.shuffle(rng);
        v.into_iter().map(Some).collect()
    };
    let fine: Vec<u32> = (0..rows).map(|_| rng.gen_range(0..8)).collect();
    let coarse: Vec<Option<String>> = fine.iter().map(|f| Some(format!("g{}", f / 3))).collect();
    let fine_s: Vec<Option<String>> = fine.iter().map(|f| Some(format!("f{f}"))).collect();
    let cat: Vec<Option<String>> = (0..rows)
        .map(|_| (!null(rng)).then(|| ["x", "y", "z"][rng.gen_range(0..3)].to_string()))
        .collect();
    let dates: Vec<Option<String>> = (0..rows)
        .map(|_| {
            Some(format!(
                "{}-{:02}-{:02}",
                2019 + rng.gen_range(0..3),
                rng.gen_range(1..13),
                rng.gen_range(1..29)
            ))
        })
        .collect();
    DataFrame::new(
        "p",
        vec![
            Column::numeric("ties", ties),
            Column::numeric("distinct", distinct),
            Column::categorical("fine", fine_s),
            Column::categorical("coarse", coarse),
            Column::categorical("cat", cat),
            Column::categorical("date", dates),
        ],
    )
    .unwrap()
}

fn same_cell(a: &Cell, b: &Cell) -> bool {
    match (a, b) {
        (Cell::Number(x), Cell::Number(y)) => x == y,
        (Cell::Text(x), Cell::Text(y)) => x == y,
        _ => false,
    }
}

/// Conditions checked over every pair of rows where both attributes are set.
fn brute_m2o(frame: &DataFrame, a: &str) -> Vec<String> {
    let ca = frame.column(a).unwrap();
    frame
        .columns()
        .iter()
        .filter(|b| b.name() != a)
        .filter(|b| {
            let rows: Vec<usize> = (0..frame.row_count()).filter(|&r| !ca.is_null(r) && !b.is_null(r)).collect();
            let mut functional = true;
            let mut coarse = false;
            for &i in &rows {
                for &j in &rows {
                    let same_a = same_cell(&ca.cell(i), &ca.cell(j));
                    let same_b = same_cell(&b.cell(i), &b.cell(j));
                    if same_a && !same_b {
                        functional = false;
                    }
                    if same_b && !same_a {
                        coarse = true;
                    }
                }
            }
            functional && coarse
        })
        .map(|b| b.name().to_string())
        .collect()
}

/// Bins of an equal-frequency partition end exactly at the first tie-run
/// boundary at or after each ideal cut `ceil(j*m/n)`.
fn check_equal_frequency(frame: &DataFrame, attr: &str, n: usize, bins: &[RowSet]) -> Result<(), String> {
    let col = frame.column(attr).unwrap().as_numeric().unwrap();
    let mut sorted: Vec<f64> = col.iter().flatten().copied().collect();
    sorted.sort_by(f64::total_cmp);
    let m = sorted.len();
    let mut ranges: Vec<(f64, f64, usize)> = bins
        .iter()
        .map(|b| {
            let vals: Vec<f64> = b.rows.iter().map(|r| col[r].unwrap()).collect();
            let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            (lo, hi, vals.len())
        })
        .collect();
    ranges.sort_by(|a, b| a.0.total_cmp(&b.0));
    for w in ranges.windows(2) {
        check(w[0].1 < w[1].0, || format!("{attr}: bins overlap or split a tie"))?;
    }
    let mut cuts = Vec::new();
    let mut cum = 0;
    for r in &ranges {
        cum += r.2;
        cuts.push(cum);
    }
    let run_end = |t: usize| (t..=m).find(|&b| b == m || sorted[b - 1] != sorted[b]).unwrap();
    let mut want: Vec<usize> = (1..=n).map(|j| run_end((j * m).div_ceil(n))).collect();
    want.dedup();
    check(cuts == want, || format!("{attr} n={n}: cuts {cuts:?}, tie-adjusted targets {want:?}"))?;
    let distinct = sorted.windows(2).all(|w| w[0] != w[1]);
    if distinct {
        let (lo, hi) = (m / n, m.div_ceil(n));
        check(ranges.iter().all(|r| r.2 == lo || r.2 == hi), || {
            format!("{attr} n={n}: distinct values but sizes {:?}", ranges.iter().map(|r| r.2).collect::<Vec<_>>())
        })?;
    }
    Ok(())
}

fn c6_partition_cover() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (mut partitions, mut mined) = (0, 0);
    let mut methods = HashSet::new();
    for f in 0..100 {
        let rows = if f < 50 { rng.gen_range(1..=12) } else { rng.gen_range(13..=60) };
        let frame = partition_test_frame(&mut rng, rows);
        let mut custom = PartitionRegistry::new();
        custom
            .register("year", Arc::new(DatePrefix::Year), &frame, &[1, 2, 3, 5, 10])
            .map_err(|e| e.to_string())?;
        custom
            .register("month", Arc::new(DatePrefix::Month), &frame, &[1, 2, 3, 5, 10])
            .map_err(|e| e.to_string())?;
        let cfg = PartitionConfig {
            bin_counts: vec![1, 2, 3, 5, 10],
            custom,
            ..PartitionConfig::default()
        };
        let mut diag = PartitionDiagnostics::default();
        for p in frame_partitions(&frame, &cfg, &mut diag) {
            partitions += 1;
            methods.insert(match &p.method {
                PartitionMethod::Custom(_) => "custom".to_string(),
                m => m.name().to_string(),
            });
            let mut hits = vec![0u32; rows];
            for set in p.bins.iter().chain(std::iter::once(&p.ignore_set)) {
                check(set.rows.frame_len() == rows, || format!("frame {f}: {} has wrong frame length", p.id()))?;
                for r in set.rows.iter() {
                    hits[r] += 1;
                }
            }
            check(hits.iter().all(|&h| h == 1), || format!("frame {f}: {} is not an exact disjoint cover", p.id()))?;
            check(p.bins.iter().all(|b| !b.rows.is_empty()), || format!("frame {f}: {} has an empty bin", p.id()))?;
            p.validate(rows).map_err(|e| format!("frame {f}: {e}"))?;
            if p.method == PartitionMethod::NumericEqualFreq {
                check_equal_frequency(&frame, &p.attribute, p.n, &p.bins).map_err(|e| format!("frame {f}: {e}"))?;
            }
        }
        if rows <= 12 {
            for a in frame.column_names() {
                let got = mine_many_to_one(&frame, a).map_err(|e| e.to_string())?;
                let want = brute_m2o(&frame, a);
                mined += got.len();
                check(got == want, || format!("frame {f}: mining {a} gave {got:?}, all-pairs check {want:?}"))?;
            }
        }
    }
    for m in ["frequency", "numeric", "many_to_one", "custom"] {
        check(methods.contains(m), || format!("method {m} never produced"))?;
    }
    Ok(format!("{partitions} partitions cover exactly; m2o matches all-pairs ({mined} pairs); tie spans hold"))
}

// ---------------------------------------------------------------- 7

fn c7_sampling_accuracy() -> Outcome {
    let t = Instant::now();
    let seeds: Vec<u64> = (0..20).collect();
    let reports = synthetic_trials(100_000, 15, &PlantedSignal::default(), 7, &[5000], &seeds, 3)
        .map_err(|e| e.to_string())?;
    let n = reports.len() as f64;
    let p = reports.iter().map(|r| r.precision_at_k).sum::<f64>() / n;
    let ndcg = reports.iter().map(|r| r.ndcg).sum::<f64>() / n;
    let tau = reports.iter().map(|r| r.kendall_tau_distance).sum::<f64>() / n;
    let el = t.elapsed();
    check(p >= 0.9, || format!("precision@3 = {p:.4}"))?;
    check(ndcg >= 0.95, || format!("nDCG = {ndcg:.4}"))?;
    check(el < Duration::from_secs(60), || format!("took {el:?}"))?;
    Ok(format!(
        "precision@3 {p:.4}, nDCG {ndcg:.4}, Kendall-tau distance {tau:.2} over {} attributes; {:.1}s",
        reports[0].attributes,
        el.as_secs_f64()
    ))
}

// ---------------------------------------------------------------- 8

/// Returns `(passed, detail)`; exceeding the bound is reported, not fatal.
fn c8_performance() -> Result<(bool, String), String> {
    let data = generate_synthetic(1_000_000, 10, &PlantedSignal::default(), 8).map_err(|e| e.to_string())?;
    let t = Instant::now();
    let step = make_step(data.op, vec![Arc::new(data.frame)]).map_err(|e| e.to_string())?;
    let cfg = ExplainConfig {
        sampling: SamplingConfig::sampled(5000, 0),
        ..ExplainConfig::default()
    };
    let result = explain_step(&step, &cfg).map_err(|e| e.to_string())?;
    let el = t.elapsed();
    check(!result.explanations.is_empty(), || "no explanations".into())?;
    let ok = el < Duration::from_secs(30);
    Ok((
        ok,
        format!(
            "1M x 10 filter explained in {:.1}s with {} worker thread(s) ({} explanations)",
            el.as_secs_f64(),
            rayon::current_num_threads(),
            result.explanations.len()
        ),
    ))
}

// ---------------------------------------------------------------- 9

fn c9_determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let data = generate_synthetic(60_000, 6, &PlantedSignal::default(), 9).map_err(|e| e.to_string())?;
    let path = dir.path().join("big.csv");
    std::fs::write(&path, csv_text(&data.frame)).map_err(|e| e.to_string())?;
    let run = |threads: &str| {
        Command::new(env!("CARGO_BIN_EXE_eda-explain"))
            .args(["explain", "--data"])
            .arg(&path)
            .args(["--op", "FILTER selector >= 50", "--seed", "42"])
            .env("EDA_EXPLAIN_THREADS", threads)
            .output()
            .map_err(|e| e.to_string())
    };
    let a = run("4")?;
    let b = run("4")?;
    let c = run("1")?;
    check(a.status.success(), || String::from_utf8_lossy(&a.stderr).into_owned())?;
    check(a.stdout == b.stdout, || "two identical runs differ".into())?;
    check(a.stdout == c.stdout, || "output depends on the thread count".into())?;
    let v: serde_json::Value = serde_json::from_slice(&a.stdout).map_err(|e| e.to_string())?;
    check(v["diagnostics"]["sampled"] == true, || "sampling was not on".into())?;
    check(!v["explanations"].as_array().unwrap().is_empty(), || "no explanations".into())?;
    Ok(format!("3 runs byte-identical ({} bytes, sampled)", a.stdout.len()))
}

// ---------------------------------------------------------------- 10

fn c10_diversity_formula() -> Outcome {
    let cv = coefficient_of_variation(&[1.0, 2.0, 3.0]).map_err(|e| e.to_string())?;
    check(cv == 0.5, || format!("CV([1,2,3]) = {cv}"))?;
    let flat = coefficient_of_variation(&[4.2; 7]).map_err(|e| e.to_string())?;
    check(flat == 0.0, || format!("CV(constant) = {flat}"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut worst: f64 = 0.0;
    for _ in 0..500 {
        let n = rng.gen_range(2..40);
        let a: Vec<f64> = (0..n).map(|_| rng.gen_range(-5.0..20.0)).collect();
        let c = rng.gen_range(0.001..1000.0);
        let scaled: Vec<f64> = a.iter().map(|v| v * c).collect();
        let (Ok(x), Ok(y)) = (coefficient_of_variation(&a), coefficient_of_variation(&scaled)) else {
            continue;
        };
        let err = (x - y).abs() / x.abs().max(1.0);
        worst = worst.max(err);
        check(err <= 1e-12, || format!("CV(c*a) = {y} vs CV(a) = {x} for c = {c}"))?;
    }
    Ok(format!("CV([1,2,3]) = 0.5, CV(constant) = 0, scale invariance max error {worst:.1e}"))
}

fn run(label: &str, f: impl FnOnce() -> Outcome) -> bool {
    let res = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        Err(p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panicked".into()))
    });
    let (ok, line) = match &res {
        Ok(d) => (true, format!("PASS {label}: {d}\n")),
        Err(d) => (false, format!("FAIL {label}: {d}\n")),
    };
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(line.as_bytes());
    let _ = out.flush();
    ok
}

#[test]
fn acceptance() {
    let _ = std::io::stdout().write_all(b"\n");
    let mut failed: Vec<&str> = Vec::new();
    let mut record = |label: &'static str, ok: bool| {
        if !ok {
            failed.push(label);
        }
    };
    record("1", run("[1] standardization", c1_standardization));
    record("2", run("[2] contribution signs", c2_contribution_signs));
    record("3", run("[3] intervention oracle", c3_intervention_oracle));
    record("4", run("[4] KS oracle", c4_ks_oracle));
    record("5", run("[5] skyline oracle", c5_skyline_oracle));
    record("6", run("[6] partition cover", c6_partition_cover));
    record("7", run("[7] sampling accuracy", c7_sampling_accuracy));
    let mut perf_detail = String::new();
    let perf_ok = run("[8] performance", || {
        let (within, detail) = c8_performance()?;
        perf_detail = if within {
            detail
        } else {
            format!("WARN over the 30s soft bound: {detail}")
        };
        Ok(perf_detail.clone())
    });
    record("8", perf_ok);
    record("9", run("[9] determinism", c9_determinism));
    record("10", run("[10] diversity formula", c10_diversity_formula));
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}

/// Among the columns the filter does not select on, the planted column
/// ranks first by exact interestingness.
#[test]
fn planted_column_leads_the_non_selector_columns() {
    let data = generate_synthetic(20_000, 8, &PlantedSignal::default(), 1).unwrap();
    let step = make_step(data.op, vec![Arc::new(data.frame)]).unwrap();
    let result = explain_step(&step, &ExplainConfig::default()).unwrap();
    let mut scores: HashMap<&str, f64> = HashMap::new();
    for s in &result.scores.scores {
        scores.insert(&s.attribute, s.value);
    }
    let best = scores
        .iter()
        .filter(|(a, _)| !a.starts_with("selector"))
        .max_by(|a, b| a.1.total_cmp(b.1))
        .unwrap();
    assert_eq!(*best.0, "planted");
}
