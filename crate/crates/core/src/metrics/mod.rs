//! Action classification, windowed label distributions and the similarity
//! metrics between a real and a generated run.

pub mod judge;
pub mod report;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use judge::{classify_actions, Classified, Judge, LlmJudge, MockJudge};
pub use report::{
    align_runs, evaluate_run, forecast_error, inverse_normalize, series_csv, AlignedSeries,
    MetricReport,
};

/// Sentinel for a label the judge could not assign.
pub const UNKNOWN: &str = "unknown";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dimension {
    pub name: String,
    pub labels: Vec<String>,
}

/// Ordered dimensions with ordered label lists. Label order is the ground
/// metric for the Wasserstein distance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DimensionSchema {
    pub dimensions: Vec<Dimension>,
}

impl DimensionSchema {
    pub fn new(dimensions: Vec<(&str, &[&str])>) -> Result<Self> {
        let schema = DimensionSchema {
            dimensions: dimensions
                .into_iter()
                .map(|(name, labels)| Dimension {
                    name: name.to_string(),
                    labels: labels.iter().map(|l| l.to_string()).collect(),
                })
                .collect(),
        };
        schema.validate()?;
        Ok(schema)
    }

    /// The eight decision dimensions.
    pub fn opinion() -> Self {
        DimensionSchema::new(vec![
            ("rumor", &["spread", "counter"]),
            (
                "sentiment",
                &["angry", "calm", "happy", "sad", "fear", "surprise"],
            ),
            ("attitude", &["positive", "negative", "neutral"]),
            ("behavior", &["comment", "share"]),
            ("stance", &["support", "oppose", "neutral"]),
            ("belief", &["believe", "doubt"]),
            ("subjectivity", &["subjective", "objective"]),
            ("intent", &["question", "promotion", "opinion"]),
        ])
        .expect("built-in schema is valid")
    }

    /// One dimension `action` with labels `a0..a{n-1}`, for toy runs.
    pub fn toy(actions: usize) -> Result<Self> {
        let schema = DimensionSchema {
            dimensions: vec![Dimension {
                name: "action".into(),
                labels: (0..actions).map(crate::corpus::toy_action_text).collect(),
            }],
        };
        schema.validate()?;
        Ok(schema)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dimensions.is_empty() {
            return Err(Error::argument("schema has no dimensions"));
        }
        for (i, d) in self.dimensions.iter().enumerate() {
            if self.dimensions[..i].iter().any(|o| o.name == d.name) {
                return Err(Error::argument(format!("duplicate dimension {:?}", d.name)));
            }
            if d.labels.len() < 2 {
                return Err(Error::argument(format!(
                    "dimension {:?} needs two labels",
                    d.name
                )));
            }
            if d.labels.iter().any(|l| l == UNKNOWN) {
                return Err(Error::argument(format!(
                    "dimension {:?} uses the reserved label",
                    d.name
                )));
            }
        }
        Ok(())
    }

    pub fn dimension_index(&self, name: &str) -> Option<usize> {
        self.dimensions.iter().position(|d| d.name == name)
    }

    pub fn label_index(&self, dim: usize, label: &str) -> Option<usize> {
        self.dimensions[dim].labels.iter().position(|l| l == label)
    }
}

/// One label index per dimension; `None` is `unknown`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelVector {
    pub labels: Vec<Option<usize>>,
    #[serde(default)]
    pub keywords: Vec<String>,
}

impl LabelVector {
    pub fn unknown(schema: &DimensionSchema) -> Self {
        LabelVector {
            labels: vec![None; schema.dimensions.len()],
            keywords: Vec::new(),
        }
    }

    pub fn label_name<'s>(&self, schema: &'s DimensionSchema, dim: usize) -> &'s str {
        match self.labels[dim] {
            Some(i) => &schema.dimensions[dim].labels[i],
            None => UNKNOWN,
        }
    }
}

/// Per dimension, a distribution for every position of the action stream;
/// `None` marks a window with no known label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionSeries {
    pub window: usize,
    pub dimensions: Vec<Vec<Option<Vec<f64>>>>,
}

pub fn window_distribution(
    labels: &[LabelVector],
    schema: &DimensionSchema,
    window: usize,
) -> Result<DistributionSeries> {
    if window == 0 {
        return Err(Error::argument("window must be at least 1"));
    }
    if labels.is_empty() {
        return Err(Error::argument("no labels to window"));
    }
    let mut dims = Vec::with_capacity(schema.dimensions.len());
    for (d, dim) in schema.dimensions.iter().enumerate() {
        let mut counts = vec![0usize; dim.labels.len()];
        let mut known = 0usize;
        let mut series = Vec::with_capacity(labels.len());
        for t in 0..labels.len() {
            if let Some(l) = labels[t].labels[d] {
                counts[l] += 1;
                known += 1;
            }
            if t >= window {
                if let Some(l) = labels[t - window].labels[d] {
                    counts[l] -= 1;
                    known -= 1;
                }
            }
            series.push(
                (known > 0).then(|| counts.iter().map(|&c| c as f64 / known as f64).collect()),
            );
        }
        dims.push(series);
    }
    Ok(DistributionSeries {
        window,
        dimensions: dims,
    })
}

fn same_len(p: &[f64], q: &[f64]) -> Result<()> {
    if p.len() != q.len() {
        return Err(Error::argument(format!(
            "length mismatch: {} vs {}",
            p.len(),
            q.len()
        )));
    }
    Ok(())
}

pub const KL_EPS: f64 = 1e-6;

/// `KL(p || q)` after adding `eps` to every entry and renormalising.
pub fn kl_divergence(p: &[f64], q: &[f64], eps: f64) -> Result<f64> {
    same_len(p, q)?;
    if p.iter().chain(q).any(|x| *x < 0.0 || !x.is_finite()) || eps < 0.0 {
        return Err(Error::argument(
            "probabilities must be finite and non-negative",
        ));
    }
    let smooth = |v: &[f64]| -> Vec<f64> {
        let z: f64 = v.iter().map(|x| x + eps).sum();
        v.iter().map(|x| (x + eps) / z).collect()
    };
    let (ps, qs) = (smooth(p), smooth(q));
    let kl: f64 = ps
        .iter()
        .zip(&qs)
        .filter(|(a, _)| **a > 0.0)
        .map(|(a, b)| {
            if *b > 0.0 {
                a * (a / b).ln()
            } else {
                f64::INFINITY
            }
        })
        .sum();
    Ok(kl.max(0.0))
}

/// W1 over labels at unit spacing in declared order.
pub fn wasserstein1(p: &[f64], q: &[f64]) -> Result<f64> {
    same_len(p, q)?;
    let (mut cp, mut cq, mut total) = (0.0, 0.0, 0.0);
    for (a, b) in p.iter().zip(q) {
        cp += a;
        cq += b;
        total += (cp - cq).abs();
    }
    // the last CDF entry is 1 for both; drop its rounding residue
    total -= (cp - cq).abs();
    Ok(total)
}

/// Accumulated-cost DTW divided by `len(a) + len(b)`.
pub fn dtw_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::argument("DTW needs non-empty series"));
    }
    let m = b.len();
    let mut prev = vec![f64::INFINITY; m + 1];
    let mut cur = vec![f64::INFINITY; m + 1];
    prev[0] = 0.0;
    for &x in a {
        cur[0] = f64::INFINITY;
        for j in 1..=m {
            let best = prev[j].min(cur[j - 1]).min(prev[j - 1]);
            cur[j] = (x - b[j - 1]).abs() + best;
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    Ok(prev[m] / (a.len() + m) as f64)
}

/// Count-matched F1 over per-step label counts. Returns `(macro, micro)`.
pub fn f1_scores(real: &[Vec<usize>], generated: &[Vec<usize>]) -> Result<(f64, f64)> {
    let steps = real.len().min(generated.len());
    if steps == 0 {
        return Err(Error::argument("no overlapping steps for F1"));
    }
    let n_labels = real[0].len();
    let mut tp = vec![0usize; n_labels];
    let mut fp = vec![0usize; n_labels];
    let mut fne = vec![0usize; n_labels];
    for t in 0..steps {
        if real[t].len() != n_labels || generated[t].len() != n_labels {
            return Err(Error::argument("label count vectors differ in length"));
        }
        for l in 0..n_labels {
            let hit = real[t][l].min(generated[t][l]);
            tp[l] += hit;
            fp[l] += generated[t][l] - hit;
            fne[l] += real[t][l] - hit;
        }
    }
    let f1 = |tp: usize, fp: usize, fne: usize| -> f64 {
        let denom = 2 * tp + fp + fne;
        if denom == 0 {
            0.0
        } else {
            2.0 * tp as f64 / denom as f64
        }
    };
    let supported: Vec<f64> = (0..n_labels)
        .filter(|&l| tp[l] + fp[l] + fne[l] > 0)
        .map(|l| f1(tp[l], fp[l], fne[l]))
        .collect();
    let macro_f1 = if supported.is_empty() {
        0.0
    } else {
        supported.iter().sum::<f64>() / supported.len() as f64
    };
    let micro = f1(tp.iter().sum(), fp.iter().sum(), fne.iter().sum());
    Ok((macro_f1, micro))
}
