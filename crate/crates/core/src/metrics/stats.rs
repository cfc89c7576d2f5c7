use serde::{Deserialize, Serialize};

use super::{EventKind, EventRecord, MetricsError};

pub const DEFAULT_FADE_BINS: usize = 400;

const MEBI: f64 = 1024.0 * 1024.0;

fn window(t_i: f64, t_f: f64) -> Result<f64, MetricsError> {
    let d = t_f - t_i;
    if d > 0.0 && d.is_finite() {
        Ok(d)
    } else {
        Err(MetricsError::NonPositiveDuration { t_i, t_f })
    }
}

/// Items per second over the run: `epochs * items / (t_f - t_i)`.
pub fn throughput_images(n_items: u64, n_epochs: u64, t_i: f64, t_f: f64) -> Result<f64, MetricsError> {
    Ok((n_epochs * n_items) as f64 / window(t_i, t_f)?)
}

/// Megabits per second with a 1024² divisor: `bytes / (t_f - t_i) / 1024² * 8`.
pub fn throughput_mbits(total_bytes: u64, t_i: f64, t_f: f64) -> Result<f64, MetricsError> {
    Ok(total_bytes as f64 / window(t_i, t_f)? / MEBI * 8.0)
}

/// Percentage of the window not covered by any event of `busy_kinds`.
///
/// `window` defaults to the extent of all events in the log.
pub fn idle_fraction(
    records: &[EventRecord],
    busy_kinds: &[EventKind],
    window: Option<(f64, f64)>,
) -> Result<f64, MetricsError> {
    if records.is_empty() {
        return Err(MetricsError::EmptyLog);
    }
    let (t_i, t_f) = window.unwrap_or_else(|| {
        let lo = records.iter().map(|r| r.t_start).fold(f64::INFINITY, f64::min);
        let hi = records.iter().map(|r| r.t_end).fold(f64::NEG_INFINITY, f64::max);
        (lo, hi)
    });
    let runtime = self::window(t_i, t_f)?;
    let mut busy: Vec<(f64, f64)> = records
        .iter()
        .filter(|r| busy_kinds.contains(&r.kind))
        .map(|r| (r.t_start.max(t_i), r.t_end.min(t_f)))
        .filter(|(a, b)| b > a)
        .collect();
    busy.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut covered = 0.0;
    let mut current: Option<(f64, f64)> = None;
    for (start, end) in busy {
        match current {
            Some((cs, ce)) if start <= ce => current = Some((cs, ce.max(end))),
            Some((cs, ce)) => {
                covered += ce - cs;
                current = Some((start, end));
            }
            None => current = Some((start, end)),
        }
    }
    if let Some((cs, ce)) = current {
        covered += ce - cs;
    }
    Ok((100.0 * (runtime - covered) / runtime).clamp(0.0, 100.0))
}

/// Median with the mean-of-middle convention for even counts.
pub fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let mid = values.len() / 2;
    Some(if values.len() % 2 == 1 {
        values[mid]
    } else {
        (values[mid - 1] + values[mid]) / 2.0
    })
}

pub fn median_span(records: &[EventRecord], kind: EventKind) -> Result<f64, MetricsError> {
    let mut spans: Vec<f64> = records.iter().filter(|r| r.kind == kind).map(|r| r.duration()).collect();
    median(&mut spans).ok_or(MetricsError::NoSuchKind(kind))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FadeAnalysis {
    pub t_i: f64,
    pub t_f: f64,
    pub bin_width: f64,
    pub starts: Vec<u64>,
    pub finishes: Vec<u64>,
    /// `(t_start, duration)` per `get_item` event.
    pub scatter: Vec<(f64, f64)>,
}

/// Histograms of `get_item` start and finish times over the extent of
/// those events.
pub fn fade_analysis(records: &[EventRecord], bins: usize) -> Result<FadeAnalysis, MetricsError> {
    let items: Vec<&EventRecord> = records.iter().filter(|r| r.kind == EventKind::GetItem).collect();
    if items.is_empty() {
        return Err(MetricsError::EmptyLog);
    }
    let bins = bins.max(1);
    let t_i = items.iter().map(|r| r.t_start).fold(f64::INFINITY, f64::min);
    let t_f = items.iter().map(|r| r.t_end).fold(f64::NEG_INFINITY, f64::max);
    let bin_width = (t_f - t_i) / bins as f64;
    let bin_of = |t: f64| -> usize {
        if bin_width <= 0.0 {
            0
        } else {
            (((t - t_i) / bin_width) as usize).min(bins - 1)
        }
    };
    let mut starts = vec![0u64; bins];
    let mut finishes = vec![0u64; bins];
    for r in &items {
        starts[bin_of(r.t_start)] += 1;
        finishes[bin_of(r.t_end)] += 1;
    }
    Ok(FadeAnalysis {
        t_i,
        t_f,
        bin_width,
        starts,
        finishes,
        scatter: items.iter().map(|r| (r.t_start, r.duration())).collect(),
    })
}
