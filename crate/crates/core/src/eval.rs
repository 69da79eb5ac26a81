//! Held-out metrics, α-sweeps over a trained segment, Pareto frontiers and
//! the report table.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::baseline::FixedModel;
use crate::data::Dataset;
use crate::error::{param, Error, Result};
use crate::losses::{delta_dp_relaxed, delta_eo_relaxed, delta_eodd_relaxed};
use crate::subspace::{predict, SubspaceModel};

pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// Metric values of one prediction vector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub error_rate: f64,
    pub dp_relaxed: f64,
    /// Gap in positive-decision rates at the threshold.
    pub dp_hard: f64,
    /// `None` when a group has no positive labels.
    pub eo_relaxed: Option<f64>,
    /// `None` when any (group, label) cell is empty.
    pub eodd_relaxed: Option<f64>,
}

pub fn evaluate(yhat: &[f64], y: &[f64], s: &[f64], threshold: f64) -> Result<Metrics> {
    if yhat.len() != y.len() || yhat.len() != s.len() {
        return Err(Error::Shape(format!(
            "{} predictions, {} labels, {} sensitive values",
            yhat.len(),
            y.len(),
            s.len()
        )));
    }
    let dp_relaxed = delta_dp_relaxed(yhat, s)?.value;
    let decisions: Vec<f64> = yhat.iter().map(|&p| if p >= threshold { 1.0 } else { 0.0 }).collect();
    let errors = decisions.iter().zip(y).filter(|(d, t)| d != t).count();
    let dp_hard = delta_dp_relaxed(&decisions, s)?.value;
    let optional = |r: Result<crate::losses::OutputLoss>| match r {
        Ok(l) => Ok(Some(l.value)),
        Err(Error::EmptyGroup(_)) => Ok(None),
        Err(e) => Err(e),
    };
    Ok(Metrics {
        error_rate: errors as f64 / yhat.len() as f64,
        dp_relaxed,
        dp_hard,
        eo_relaxed: optional(delta_eo_relaxed(yhat, y, s))?,
        eodd_relaxed: optional(delta_eodd_relaxed(yhat, y, s))?,
    })
}

/// One row of a report: a model point and its held-out metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRecord {
    pub alpha: Option<f64>,
    /// Fixed-penalty strength `A`, for baseline rows.
    pub a: Option<f64>,
    pub error_rate: f64,
    pub dp_relaxed: f64,
    pub dp_hard: f64,
    pub eo_relaxed: Option<f64>,
    pub eodd_relaxed: Option<f64>,
    pub wall_time_s: Option<f64>,
    pub seed: Option<u64>,
}

impl MetricsRecord {
    pub fn new(metrics: Metrics) -> Self {
        MetricsRecord {
            alpha: None,
            a: None,
            error_rate: metrics.error_rate,
            dp_relaxed: metrics.dp_relaxed,
            dp_hard: metrics.dp_hard,
            eo_relaxed: metrics.eo_relaxed,
            eodd_relaxed: metrics.eodd_relaxed,
            wall_time_s: None,
            seed: None,
        }
    }

    pub fn fairness(&self, field: FairnessField) -> Option<f64> {
        match field {
            FairnessField::DpRelaxed => Some(self.dp_relaxed),
            FairnessField::DpHard => Some(self.dp_hard),
            FairnessField::EoRelaxed => self.eo_relaxed,
            FairnessField::EoddRelaxed => self.eodd_relaxed,
        }
    }
}

/// Fairness column used as the second Pareto objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FairnessField {
    DpRelaxed,
    DpHard,
    EoRelaxed,
    EoddRelaxed,
}

impl FairnessField {
    pub fn name(self) -> &'static str {
        match self {
            FairnessField::DpRelaxed => "dp_relaxed",
            FairnessField::DpHard => "dp_hard",
            FairnessField::EoRelaxed => "eo_relaxed",
            FairnessField::EoddRelaxed => "eodd_relaxed",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [
            FairnessField::DpRelaxed,
            FairnessField::DpHard,
            FairnessField::EoRelaxed,
            FairnessField::EoddRelaxed,
        ]
        .into_iter()
        .find(|f| f.name() == s)
    }
}

/// `{0, 0.05, …, 1}`.
pub fn default_alpha_grid() -> Vec<f64> {
    (0..=20).map(|k| k as f64 / 20.0).collect()
}

/// Evaluates the segment at every grid point on the full test set in one pass per point.
pub fn alpha_sweep(model: &SubspaceModel, test: &Dataset, grid: &[f64]) -> Result<Vec<MetricsRecord>> {
    if let Some(bad) = grid.iter().find(|a| !(0.0..=1.0).contains(*a)) {
        return Err(param("grid", format!("alpha {bad} is outside [0, 1]")));
    }
    grid.iter()
        .map(|&alpha| {
            let yhat = predict(model, alpha, test.features())?;
            let m = evaluate(&yhat, test.labels(), test.sensitive(), DEFAULT_THRESHOLD)?;
            Ok(MetricsRecord {
                alpha: Some(alpha),
                seed: Some(model.meta.config.seed),
                ..MetricsRecord::new(m)
            })
        })
        .collect()
}

pub fn evaluate_fixed(model: &FixedModel, test: &Dataset) -> Result<MetricsRecord> {
    let yhat = model.predict(test.features())?;
    let m = evaluate(&yhat, test.labels(), test.sensitive(), DEFAULT_THRESHOLD)?;
    Ok(MetricsRecord {
        a: Some(model.fairness_weight),
        seed: Some(model.meta.config.seed),
        ..MetricsRecord::new(m)
    })
}

/// Non-dominated records sorted by error rate, fairness strictly decreasing.
#[derive(Debug, Clone, PartialEq)]
pub struct ParetoFrontier {
    pub field: FairnessField,
    pub points: Vec<MetricsRecord>,
}

impl ParetoFrontier {
    /// `(error_rate, fairness)` pairs along the frontier.
    pub fn coords(&self) -> Vec<(f64, f64)> {
        self.points
            .iter()
            .map(|p| {
                (
                    p.error_rate,
                    p.fairness(self.field).expect("frontier points carry the field"),
                )
            })
            .collect()
    }
}

/// Maximal subset not dominated under joint minimisation of error rate and
/// `field`. Of exact duplicates the first occurrence is kept; records
/// lacking `field` (or holding NaN) are ignored.
pub fn pareto(points: &[MetricsRecord], field: FairnessField) -> ParetoFrontier {
    let mut candidates: Vec<(usize, f64, f64)> = points
        .iter()
        .enumerate()
        .filter_map(|(i, p)| {
            let f = p.fairness(field)?;
            (!f.is_nan() && !p.error_rate.is_nan()).then_some((i, p.error_rate, f))
        })
        .collect();
    // Stable: among equal coordinates the earliest index comes first.
    candidates.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.2.total_cmp(&b.2)));
    let mut best = f64::INFINITY;
    let mut kept = Vec::new();
    for (i, _, f) in candidates {
        if f < best {
            best = f;
            kept.push(points[i].clone());
        }
    }
    ParetoFrontier { field, points: kept }
}

/// Step function of a frontier: fairness of the last point with error ≤ `e`.
fn step_value(coords: &[(f64, f64)], e: f64) -> f64 {
    let idx = coords.partition_point(|&(err, _)| err <= e);
    coords[idx.saturating_sub(1)].1
}

/// Mean absolute vertical distance between two frontiers drawn as step
/// functions, averaged over the error-rate range both cover.
pub fn frontier_gap(f1: &ParetoFrontier, f2: &ParetoFrontier) -> Result<f64> {
    let (c1, c2) = (f1.coords(), f2.coords());
    let (Some(first1), Some(first2)) = (c1.first(), c2.first()) else {
        return Err(Error::Range("frontier gap needs two non-empty frontiers".into()));
    };
    let lo = first1.0.max(first2.0);
    let hi = c1[c1.len() - 1].0.min(c2[c2.len() - 1].0);
    if lo > hi {
        return Err(Error::Range(format!(
            "error-rate ranges do not overlap (shared range would be [{lo}, {hi}])"
        )));
    }
    if lo == hi {
        return Ok(libm::fabs(step_value(&c1, lo) - step_value(&c2, lo)));
    }
    let mut breaks: Vec<f64> = c1
        .iter()
        .chain(&c2)
        .map(|&(e, _)| e)
        .filter(|&e| e > lo && e < hi)
        .collect();
    breaks.push(lo);
    breaks.push(hi);
    breaks.sort_by(f64::total_cmp);
    breaks.dedup();
    let area: f64 = breaks
        .windows(2)
        .map(|w| (w[1] - w[0]) * libm::fabs(step_value(&c1, w[0]) - step_value(&c2, w[0])))
        .sum();
    Ok(area / (hi - lo))
}

/// Spearman rank correlation, with tied values sharing their average rank.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::Shape(format!("spearman on {} and {} values", x.len(), y.len())));
    }
    let rx = ranks(x);
    let ry = ranks(y);
    let n = x.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    Ok(sxy / libm::sqrt(sxx * syy))
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut out = alloc::vec![0.0; v.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && v[order[j + 1]] == v[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            out[k] = rank;
        }
        i = j + 1;
    }
    out
}

pub const REPORT_HEADER: &str = "alpha,A,error_rate,dp_relaxed,dp_hard,eo_relaxed,eodd_relaxed,wall_time_s,seed";

/// `%.9g`-style formatting: nine significant digits, trailing zeros trimmed.
pub fn format_sig9(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    if !v.is_finite() {
        return format!("{v}");
    }
    let sci = format!("{v:.8e}");
    let (mantissa, exp) = sci.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-5..9).contains(&exp) {
        let decimals = (8 - exp).max(0) as usize;
        let fixed = format!("{v:.decimals$}");
        trim_zeros(&fixed).to_string()
    } else {
        format!("{}e{exp}", trim_zeros(mantissa))
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// The report table as CSV text, rows in the given order.
pub fn format_report(records: &[MetricsRecord]) -> String {
    let opt = |v: Option<f64>| v.map(format_sig9).unwrap_or_default();
    let mut out = String::from(REPORT_HEADER);
    out.push('\n');
    for r in records {
        let fields = [
            opt(r.alpha),
            opt(r.a),
            format_sig9(r.error_rate),
            format_sig9(r.dp_relaxed),
            format_sig9(r.dp_hard),
            opt(r.eo_relaxed),
            opt(r.eodd_relaxed),
            opt(r.wall_time_s),
            r.seed.map(|s| s.to_string()).unwrap_or_default(),
        ];
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}

/// Parses text produced by [`format_report`].
pub fn parse_report(text: &str) -> Result<Vec<MetricsRecord>> {
    let mut lines = text.lines();
    if lines.next() != Some(REPORT_HEADER) {
        return Err(Error::Schema("report header does not match".into()));
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let line_no = i + 2;
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 9 {
                return Err(Error::Row {
                    line: line_no,
                    reason: format!("{} fields, expected 9", f.len()),
                });
            }
            let bad = |c: &str| Error::Row {
                line: line_no,
                reason: format!("cannot parse `{c}`"),
            };
            let opt = |c: &str| -> Result<Option<f64>> {
                if c.is_empty() {
                    Ok(None)
                } else {
                    c.parse().map(Some).map_err(|_| bad(c))
                }
            };
            let req = |c: &str| -> Result<f64> { c.parse().map_err(|_| bad(c)) };
            Ok(MetricsRecord {
                alpha: opt(f[0])?,
                a: opt(f[1])?,
                error_rate: req(f[2])?,
                dp_relaxed: req(f[3])?,
                dp_hard: req(f[4])?,
                eo_relaxed: opt(f[5])?,
                eodd_relaxed: opt(f[6])?,
                wall_time_s: opt(f[7])?,
                seed: if f[8].is_empty() {
                    None
                } else {
                    Some(f[8].parse().map_err(|_| bad(f[8]))?)
                },
            })
        })
        .collect()
}
