use crate::error::{Error, Result};

use super::SeriesSummary;

/// Summarizes `(time_days, value)` measurements.
///
/// Measurements are ordered by time with a stable sort, so equal timestamps
/// keep their input order. `std` is the population standard deviation and
/// `time_of_max` is the time of the first maximum in time order.
pub fn aggregate_series(measurements: &[(f64, f64)]) -> Result<SeriesSummary> {
    if measurements.is_empty() {
        return Err(Error::EmptySeries);
    }
    if let Some((index, &(time, value))) = measurements
        .iter()
        .enumerate()
        .find(|(_, (t, v))| !t.is_finite() || !v.is_finite())
    {
        return Err(Error::InvalidMeasurement { index, time, value });
    }

    let mut ordered = measurements.to_vec();
    ordered.sort_by(|a, b| a.0.total_cmp(&b.0));

    let n = ordered.len() as f64;
    let (mut min, mut max, mut time_of_max) = (ordered[0].1, ordered[0].1, ordered[0].0);
    let mut sum = 0.0;
    for &(t, v) in &ordered {
        if v < min {
            min = v;
        }
        if v > max {
            max = v;
            time_of_max = t;
        }
        sum += v;
    }
    // Rounding in the sum can push the mean a hair outside [min, max].
    let mean = (sum / n).clamp(min, max);
    let var = ordered.iter().map(|&(_, v)| (v - mean) * (v - mean)).sum::<f64>() / n;

    Ok(SeriesSummary {
        first: ordered[0].1,
        last: ordered[ordered.len() - 1].1,
        min,
        max,
        mean,
        std: var.sqrt(),
        time_of_max,
    })
}
