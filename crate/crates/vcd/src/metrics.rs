//! Confusion-matrix metrics and small statistics helpers.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn record(&mut self, ground_truth: bool, predicted: bool) {
        match (ground_truth, predicted) {
            (true, true) => self.tp += 1,
            (false, true) => self.fp += 1,
            (true, false) => self.fn_ += 1,
            (false, false) => self.tn += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = (bool, bool)>) -> Self {
        let mut c = ConfusionCounts::default();
        for (gt, pred) in pairs {
            c.record(gt, pred);
        }
        c
    }
}

/// Aggregated metrics. Ratios whose denominator is zero are reported as
/// undefined (`None`), not as zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub counts: ConfusionCounts,
    pub accuracy: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
}

impl EvalMetrics {
    pub fn from_counts(counts: ConfusionCounts) -> Self {
        let ratio = |num: u64, den: u64| {
            if den == 0 {
                None
            } else {
                Some(num as f64 / den as f64)
            }
        };
        let accuracy = ratio(counts.tp + counts.tn, counts.total());
        let precision = ratio(counts.tp, counts.tp + counts.fp);
        let recall = ratio(counts.tp, counts.tp + counts.fn_);
        let f1 = match (precision, recall) {
            (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
            (Some(_), Some(_)) => Some(0.0),
            _ => None,
        };
        EvalMetrics {
            counts,
            accuracy,
            precision,
            recall,
            f1,
        }
    }
}

/// Mean and sample standard deviation per metric over several runs.
/// Undefined per-run values are excluded from the aggregate.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub accuracy: SummaryStat,
    pub precision: SummaryStat,
    pub recall: SummaryStat,
    pub f1: SummaryStat,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SummaryStat {
    pub mean: Option<f64>,
    pub std: Option<f64>,
    pub defined_runs: usize,
}

fn summarize(values: &[Option<f64>]) -> SummaryStat {
    let defined: Vec<f64> = values.iter().filter_map(|v| *v).collect();
    let n = defined.len();
    if n == 0 {
        return SummaryStat::default();
    }
    let mean = defined.iter().sum::<f64>() / n as f64;
    let std = if n > 1 {
        let var = defined.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
        Some(var.sqrt())
    } else {
        Some(0.0)
    };
    SummaryStat {
        mean: Some(mean),
        std,
        defined_runs: n,
    }
}

impl MetricsSummary {
    pub fn over_runs(runs: &[EvalMetrics]) -> Self {
        MetricsSummary {
            accuracy: summarize(&runs.iter().map(|r| r.accuracy).collect::<Vec<_>>()),
            precision: summarize(&runs.iter().map(|r| r.precision).collect::<Vec<_>>()),
            recall: summarize(&runs.iter().map(|r| r.recall).collect::<Vec<_>>()),
            f1: summarize(&runs.iter().map(|r| r.f1).collect::<Vec<_>>()),
        }
    }
}

fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let n = xs.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| xs[a].partial_cmp(&xs[b]).unwrap());
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation with average ranks for ties. Returns 0 when
/// either input is constant.
pub fn spearman(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len());
    let rx = average_ranks(xs);
    let ry = average_ranks(ys);
    pearson(&rx, &ry)
}

fn pearson(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        cov += (x - mx) * (y - my);
        vx += (x - mx) * (x - mx);
        vy += (y - my) * (y - my);
    }
    if vx == 0.0 || vy == 0.0 {
        return 0.0;
    }
    cov / (vx * vy).sqrt()
}
