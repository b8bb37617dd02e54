//! Run-level evaluation: align a real and a generated run, compute every
//! metric per dimension, and aggregate.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{
    classify_actions, dtw_distance, f1_scores, kl_divergence, wasserstein1, window_distribution,
    DimensionSchema, Judge, KL_EPS,
};
use crate::backends::{PolicyInput, PolicyModel};
use crate::domain::{Engagement, Trajectory};
use crate::engine::context::{build_context, HistoryItem, PopularityScore};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimensionMetrics {
    pub name: String,
    pub kl: Option<f64>,
    pub wasserstein: Option<f64>,
    pub dtw: Option<f64>,
    pub macro_f1: Option<f64>,
    pub micro_f1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub kl: f64,
    pub wasserstein: f64,
    pub dtw: f64,
    pub macro_f1: f64,
    pub micro_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub event_id: String,
    pub window: usize,
    pub evaluated_steps: Vec<usize>,
    pub dimensions: Vec<DimensionMetrics>,
    pub aggregate: Aggregate,
    /// Mean teacher-forced NLL per real action; absent without logprobs.
    pub nll: Option<f64>,
    pub judge_failures: usize,
}

impl MetricReport {
    /// One row per dimension and metric, then the aggregate rows.
    pub fn to_csv(&self) -> String {
        let fmt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let mut out = String::from("dimension,metric,value\n");
        for d in &self.dimensions {
            for (m, v) in [
                ("kl", d.kl),
                ("wasserstein", d.wasserstein),
                ("dtw", d.dtw),
                ("macro_f1", d.macro_f1),
                ("micro_f1", d.micro_f1),
            ] {
                out.push_str(&format!("{},{m},{}\n", d.name, fmt(v)));
            }
        }
        let a = &self.aggregate;
        for (m, v) in [
            ("kl", a.kl),
            ("wasserstein", a.wasserstein),
            ("dtw", a.dtw),
            ("macro_f1", a.macro_f1),
            ("micro_f1", a.micro_f1),
        ] {
            out.push_str(&format!("aggregate,{m},{v}\n"));
        }
        out.push_str(&format!("aggregate,nll,{}\n", fmt(self.nll)));
        out
    }
}

/// Windowed distributions and per-step label counts of both runs at the
/// evaluated steps.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedSeries {
    pub steps: Vec<usize>,
    /// `[dimension][evaluated step]`.
    pub real: Vec<Vec<Option<Vec<f64>>>>,
    pub generated: Vec<Vec<Option<Vec<f64>>>>,
    pub real_counts: Vec<Vec<Vec<usize>>>,
    pub generated_counts: Vec<Vec<Vec<usize>>>,
    pub judge_failures: usize,
}

struct Classified {
    /// Windowed distribution at the last action of each step.
    at_step: Vec<Vec<Option<Vec<f64>>>>,
    counts: Vec<Vec<Vec<usize>>>,
    failures: usize,
}

fn classify_run(
    run: &Trajectory,
    steps: &[usize],
    topic: &str,
    judge: &dyn Judge,
    schema: &DimensionSchema,
    window: usize,
) -> Result<Classified> {
    let actions: Vec<_> = run.scored_actions().cloned().collect();
    let classified = classify_actions(&actions, topic, judge, schema)?;
    let series = window_distribution(&classified.labels, schema, window)?;
    // end offset (exclusive) of each step in the flattened stream
    let mut ends = Vec::with_capacity(run.steps.len());
    let mut acc = 0;
    for s in &run.steps {
        acc += s.actions.len();
        ends.push(acc);
    }
    let n_dims = schema.dimensions.len();
    let mut at_step = vec![Vec::with_capacity(steps.len()); n_dims];
    let mut counts = vec![Vec::with_capacity(steps.len()); n_dims];
    for &t in steps {
        let (start, end) = (if t == 0 { 0 } else { ends[t - 1] }, ends[t]);
        for d in 0..n_dims {
            at_step[d].push(if end > start {
                series.dimensions[d][end - 1].clone()
            } else {
                None
            });
            let mut c = vec![0usize; schema.dimensions[d].labels.len()];
            for lv in &classified.labels[start..end] {
                if let Some(l) = lv.labels[d] {
                    c[l] += 1;
                }
            }
            counts[d].push(c);
        }
    }
    Ok(Classified {
        at_step,
        counts,
        failures: classified.failed_batches,
    })
}

/// Steps after the generated run's warm-up that both runs cover.
pub fn evaluated_steps(real: &Trajectory, generated: &Trajectory) -> Vec<usize> {
    let n = real.steps.len().min(generated.steps.len());
    (0..n)
        .filter(|&t| !generated.config.is_warmup_step(t))
        .collect()
}

pub fn align_runs(
    real: &Trajectory,
    generated: &Trajectory,
    judge: &dyn Judge,
    schema: &DimensionSchema,
    window: usize,
) -> Result<AlignedSeries> {
    if real.event_id != generated.event_id {
        return Err(Error::argument(format!(
            "runs cover different events: {} vs {}",
            real.event_id, generated.event_id
        )));
    }
    let steps = evaluated_steps(real, generated);
    if steps.is_empty() {
        return Err(Error::argument("no evaluated steps after warm-up"));
    }
    let r = classify_run(real, &steps, &real.topic, judge, schema, window)?;
    let g = classify_run(generated, &steps, &real.topic, judge, schema, window)?;
    Ok(AlignedSeries {
        steps,
        real: r.at_step,
        generated: g.at_step,
        real_counts: r.counts,
        generated_counts: g.counts,
        judge_failures: r.failures + g.failures,
    })
}

/// Mean L1 distance between the windowed distributions of the two runs,
/// over every evaluated step and dimension where both sides are defined.
pub fn forecast_error(
    real: &Trajectory,
    generated: &Trajectory,
    judge: &dyn Judge,
    schema: &DimensionSchema,
    window: usize,
) -> Result<f64> {
    let series = align_runs(real, generated, judge, schema, window)?;
    let mut total = 0.0;
    let mut n = 0usize;
    for (rd, gd) in series.real.iter().zip(&series.generated) {
        for (r, g) in rd.iter().zip(gd) {
            if let (Some(r), Some(g)) = (r, g) {
                total += r.iter().zip(g).map(|(x, y)| (x - y).abs()).sum::<f64>();
                n += 1;
            }
        }
    }
    if n == 0 {
        return Err(Error::argument(
            "no step has labelled actions on both sides",
        ));
    }
    Ok(total / n as f64)
}

fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

fn dimension_metrics(
    series: &AlignedSeries,
    schema: &DimensionSchema,
    d: usize,
) -> Result<DimensionMetrics> {
    let pairs: Vec<(&Vec<f64>, &Vec<f64>)> = series.real[d]
        .iter()
        .zip(&series.generated[d])
        .filter_map(|(p, q)| Some((p.as_ref()?, q.as_ref()?)))
        .collect();
    let mut kls = Vec::with_capacity(pairs.len());
    let mut w1s = Vec::with_capacity(pairs.len());
    for (p, q) in &pairs {
        kls.push(kl_divergence(p, q, KL_EPS)?);
        w1s.push(wasserstein1(p, q)?);
    }
    let dtw = if pairs.is_empty() {
        None
    } else {
        let n_labels = schema.dimensions[d].labels.len();
        let mut per_label = Vec::with_capacity(n_labels);
        for l in 0..n_labels {
            let a: Vec<f64> = pairs.iter().map(|(p, _)| p[l]).collect();
            let b: Vec<f64> = pairs.iter().map(|(_, q)| q[l]).collect();
            per_label.push(dtw_distance(&a, &b)?);
        }
        mean(&per_label)
    };
    let (macro_f1, micro_f1) = match f1_scores(&series.real_counts[d], &series.generated_counts[d])
    {
        Ok((ma, mi)) => (Some(ma), Some(mi)),
        Err(_) => (None, None),
    };
    // F1 is undefined when neither run has a known label on this dimension
    let any_support = series.real_counts[d]
        .iter()
        .chain(&series.generated_counts[d])
        .any(|c| c.iter().any(|&x| x > 0));
    Ok(DimensionMetrics {
        name: schema.dimensions[d].name.clone(),
        kl: mean(&kls),
        wasserstein: mean(&w1s),
        dtw,
        macro_f1: macro_f1.filter(|_| any_support),
        micro_f1: micro_f1.filter(|_| any_support),
    })
}

/// Teacher-forced NLL of the real run's actions after warm-up, using the
/// real run's states and mean fields. History items carry no engagement, so
/// popularity contexts fall back to recency.
pub fn teacher_forced_nll(
    real: &Trajectory,
    steps: &[usize],
    model: &dyn PolicyModel,
    context_config: &crate::domain::SimulationConfig,
) -> Result<Option<f64>> {
    if !model.supports_logprob() {
        return Ok(None);
    }
    let mut history: Vec<HistoryItem> = Vec::new();
    let mut total = 0.0;
    let mut n = 0usize;
    let score = PopularityScore::default();
    for (t, record) in real.steps.iter().enumerate() {
        if steps.contains(&t) {
            let ctx = build_context(
                context_config.context_strategy,
                &history,
                &record.mean_field,
                context_config.k,
                &score,
            );
            for (state, action) in record.states.iter().zip(&record.actions) {
                let input = PolicyInput {
                    state,
                    context: &ctx,
                    mean_field: &record.mean_field,
                };
                match model.logprob(&input, &action.text)? {
                    Some(lp) => {
                        total -= lp;
                        n += 1;
                    }
                    None => return Ok(None),
                }
            }
        }
        history.extend(record.actions.iter().map(|a| HistoryItem {
            action: a.clone(),
            engagement: Engagement::default(),
        }));
    }
    Ok((n > 0).then(|| total / n as f64))
}

/// Compare a generated run against the real one. `likelihood` is the
/// generating policy; NLL is reported only when it exposes log-probabilities.
pub fn evaluate_run(
    real: &Trajectory,
    generated: &Trajectory,
    judge: &dyn Judge,
    schema: &DimensionSchema,
    window: usize,
    likelihood: Option<&dyn PolicyModel>,
) -> Result<MetricReport> {
    let series = align_runs(real, generated, judge, schema, window)?;
    let dimensions = (0..schema.dimensions.len())
        .map(|d| dimension_metrics(&series, schema, d))
        .collect::<Result<Vec<_>>>()?;
    let agg = |f: fn(&DimensionMetrics) -> Option<f64>| -> f64 {
        let vals: Vec<f64> = dimensions.iter().filter_map(f).collect();
        mean(&vals).unwrap_or(f64::NAN)
    };
    let aggregate = Aggregate {
        kl: agg(|d| d.kl),
        wasserstein: agg(|d| d.wasserstein),
        dtw: agg(|d| d.dtw),
        macro_f1: agg(|d| d.macro_f1),
        micro_f1: agg(|d| d.micro_f1),
    };
    if aggregate.kl.is_nan() {
        return Err(Error::argument(
            "no dimension had known labels in both runs",
        ));
    }
    let nll = match likelihood {
        Some(model) => teacher_forced_nll(real, &series.steps, model, &generated.config)?,
        None => None,
    };
    Ok(MetricReport {
        event_id: real.event_id.clone(),
        window,
        evaluated_steps: series.steps,
        dimensions,
        aggregate,
        nll,
        judge_failures: series.judge_failures,
    })
}

/// Radar values per report: distances become `(max - v) / (max - min)` over
/// the comparison set (1 when all equal); F1 values pass through.
pub fn inverse_normalize(reports: &[MetricReport]) -> Vec<BTreeMap<String, f64>> {
    let mut out = vec![BTreeMap::new(); reports.len()];
    let distances: [(&str, fn(&MetricReport) -> Option<f64>); 4] = [
        ("kl", |r| Some(r.aggregate.kl)),
        ("wasserstein", |r| Some(r.aggregate.wasserstein)),
        ("dtw", |r| Some(r.aggregate.dtw)),
        ("nll", |r| r.nll),
    ];
    for (name, get) in distances {
        let vals: Vec<Option<f64>> = reports.iter().map(get).collect();
        if vals.iter().any(Option::is_none) {
            continue;
        }
        let vals: Vec<f64> = vals.into_iter().flatten().collect();
        let max = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let min = vals.iter().cloned().fold(f64::INFINITY, f64::min);
        for (o, v) in out.iter_mut().zip(&vals) {
            let x = if max > min {
                (max - v) / (max - min)
            } else {
                1.0
            };
            o.insert(name.to_string(), x);
        }
    }
    for (o, r) in out.iter_mut().zip(reports) {
        o.insert("macro_f1".into(), r.aggregate.macro_f1);
        o.insert("micro_f1".into(), r.aggregate.micro_f1);
    }
    out
}

/// Long-format CSV of both runs' proportion series:
/// `step,source,dimension,label,value`.
pub fn series_csv(series: &AlignedSeries, schema: &DimensionSchema) -> String {
    let mut out = String::from("step,source,dimension,label,value\n");
    for (d, dim) in schema.dimensions.iter().enumerate() {
        for (source, data) in [("real", &series.real), ("generated", &series.generated)] {
            for (i, &t) in series.steps.iter().enumerate() {
                if let Some(p) = &data[d][i] {
                    for (label, v) in dim.labels.iter().zip(p) {
                        out.push_str(&format!("{t},{source},{},{label},{v}\n", dim.name));
                    }
                }
            }
        }
    }
    out
}
