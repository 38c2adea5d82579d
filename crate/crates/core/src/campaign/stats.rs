//! Summary and box-plot statistics, campaign aggregates and color counts.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::results::ResultRow;
use crate::attack::{AttackDirection, Outcome};
use crate::imaging::Rgb;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StatsError {
    #[error("cannot summarize an empty sample")]
    Empty,
    #[error("sample contains a non-finite value")]
    NonFinite,
}

/// Descriptive statistics plus Tukey box-plot geometry.
///
/// Quartiles use the exclusive-median convention: for odd `n` the median is
/// left out of both halves, and each quartile is the midpoint median of its
/// half. Whiskers end at the most extreme data points inside
/// `[q1 - 1.5 IQR, q3 + 1.5 IQR]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryStats {
    pub count: usize,
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    pub median: f64,
    /// Population standard deviation.
    pub std: f64,
    pub q1: f64,
    pub q3: f64,
    pub whisker_low: f64,
    pub whisker_high: f64,
    pub outliers: Vec<f64>,
}

fn midpoint_median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    }
}

pub fn summarize(values: &[f64]) -> Result<SummaryStats, StatsError> {
    if values.is_empty() {
        return Err(StatsError::Empty);
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();

    // summing in sorted order keeps the mean independent of input order
    let mean = sorted.iter().sum::<f64>() / n as f64;
    let std = (sorted.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
    let median = midpoint_median(&sorted);
    let (q1, q3) = if n == 1 {
        (median, median)
    } else {
        (
            midpoint_median(&sorted[..n / 2]),
            midpoint_median(&sorted[n.div_ceil(2)..]),
        )
    };
    let iqr = q3 - q1;
    let (fence_low, fence_high) = (q1 - 1.5 * iqr, q3 + 1.5 * iqr);
    let inside = || sorted.iter().copied().filter(|&v| v >= fence_low && v <= fence_high);
    let whisker_low = inside().next().unwrap_or(q1);
    let whisker_high = inside().next_back().unwrap_or(q3);
    let outliers = sorted
        .iter()
        .copied()
        .filter(|&v| v < fence_low || v > fence_high)
        .collect();

    Ok(SummaryStats {
        count: n,
        min: sorted[0],
        max: sorted[n - 1],
        mean,
        median,
        std,
        q1,
        q3,
        whisker_low,
        whisker_high,
        outliers,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColorCount {
    pub color: Rgb,
    pub count: usize,
}

/// Exact-color counts of winning perturbations.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ColorHistogram {
    counts: HashMap<Rgb, usize>,
}

impl ColorHistogram {
    pub fn add(&mut self, color: Rgb) {
        *self.counts.entry(color).or_default() += 1;
    }

    pub fn total(&self) -> usize {
        self.counts.values().sum()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn count(&self, color: Rgb) -> usize {
        self.counts.get(&color).copied().unwrap_or(0)
    }

    /// Descending by count, ties broken by color.
    pub fn sorted(&self) -> Vec<ColorCount> {
        let mut out: Vec<ColorCount> = self
            .counts
            .iter()
            .map(|(&color, &count)| ColorCount { color, count })
            .collect();
        out.sort_by(|a, b| b.count.cmp(&a.count).then(a.color.cmp(&b.color)));
        out
    }

    pub fn top(&self) -> Option<ColorCount> {
        self.sorted().into_iter().next()
    }
}

/// Histogram over rows whose outcome is a success tier.
pub fn color_histogram<'a>(rows: impl IntoIterator<Item = &'a ResultRow>) -> ColorHistogram {
    let mut hist = ColorHistogram::default();
    for row in rows {
        if row.outcome.is_some_and(Outcome::is_success) {
            if let Some(p) = row.perturbation {
                hist.add(p.color());
            }
        }
    }
    hist
}

/// Aggregates for one attack direction. Score statistics cover the attacked
/// rows only: early-converged and errored rows are excluded, as they are
/// from the success-rate denominators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionReport {
    pub total: usize,
    pub early_converged: usize,
    pub failed: usize,
    pub success: usize,
    pub strong_success: usize,
    pub errored: usize,
    /// `total - early_converged - errored`.
    pub attacked: usize,
    /// `(success + strong_success) / attacked`.
    pub success_rate: Option<f64>,
    /// `strong_success / attacked`.
    pub strong_success_rate: Option<f64>,
    pub before: Option<SummaryStats>,
    pub after: Option<SummaryStats>,
    /// `|after - before|` per attacked row.
    pub score_change: Option<SummaryStats>,
    pub mean_iterations: Option<f64>,
    pub top_colors: Vec<ColorCount>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CampaignReport {
    pub total_rows: usize,
    pub directions: BTreeMap<AttackDirection, DirectionReport>,
}

const TOP_COLORS: usize = 10;

impl CampaignReport {
    /// Recomputes every aggregate from result rows. Input order does not matter.
    pub fn from_rows(rows: &[ResultRow]) -> Self {
        let mut sorted: Vec<&ResultRow> = rows.iter().collect();
        sorted.sort_by(|a, b| a.image_id.cmp(&b.image_id).then(a.direction.cmp(&b.direction)));

        let mut grouped: BTreeMap<AttackDirection, Vec<&ResultRow>> = BTreeMap::new();
        for row in sorted {
            grouped.entry(row.direction).or_default().push(row);
        }
        let directions = grouped
            .into_iter()
            .map(|(dir, rows)| (dir, direction_report(&rows)))
            .collect();
        Self {
            total_rows: rows.len(),
            directions,
        }
    }
}

fn direction_report(rows: &[&ResultRow]) -> DirectionReport {
    let count = |o: Outcome| rows.iter().filter(|r| r.outcome == Some(o)).count();
    let errored = rows.iter().filter(|r| r.outcome.is_none()).count();
    let early_converged = count(Outcome::EarlyConverged);
    let success = count(Outcome::Success);
    let strong_success = count(Outcome::StrongSuccess);

    let attacked: Vec<&&ResultRow> = rows
        .iter()
        .filter(|r| matches!(r.outcome, Some(o) if o != Outcome::EarlyConverged))
        .collect();
    let ratio = |k: usize| (!attacked.is_empty()).then(|| k as f64 / attacked.len() as f64);
    let before: Vec<f64> = attacked.iter().map(|r| r.orig_score).collect();
    let after: Vec<f64> = attacked.iter().filter_map(|r| r.final_score).collect();
    let change: Vec<f64> = attacked
        .iter()
        .filter_map(|r| r.final_score.map(|f| (f - r.orig_score).abs()))
        .collect();
    let mean_iterations = (!attacked.is_empty())
        .then(|| attacked.iter().map(|r| r.iterations as f64).sum::<f64>() / attacked.len() as f64);

    DirectionReport {
        total: rows.len(),
        early_converged,
        failed: count(Outcome::Failed),
        success,
        strong_success,
        errored,
        attacked: attacked.len(),
        success_rate: ratio(success + strong_success),
        strong_success_rate: ratio(strong_success),
        before: summarize(&before).ok(),
        after: summarize(&after).ok(),
        score_change: summarize(&change).ok(),
        mean_iterations,
        top_colors: color_histogram(rows.iter().copied())
            .sorted()
            .into_iter()
            .take(TOP_COLORS)
            .collect(),
    }
}
