use super::InferenceError;

/// Highest posterior density interval: the narrowest window of
/// `floor(mass * n) + 1` consecutive sorted samples. Ties go to the window
/// with the lowest lower bound.
pub fn hpdi(samples: &[f64], mass: f64) -> Result<(f64, f64), InferenceError> {
    if samples.len() < 20 {
        return Err(InferenceError::TooFewSamples(samples.len()));
    }
    if !(mass > 0.0 && mass < 1.0) {
        return Err(InferenceError::InvalidConfig(format!("HPDI mass {mass}")));
    }
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    Ok(hpdi_sorted(&s, mass))
}

/// [`hpdi`] on samples already sorted ascending.
pub fn hpdi_sorted(sorted: &[f64], mass: f64) -> (f64, f64) {
    let n = sorted.len();
    let span = ((mass * n as f64).floor() as usize).min(n - 1);
    let mut best = (sorted[0], sorted[span]);
    for i in 1..n - span {
        let (lo, hi) = (sorted[i], sorted[i + span]);
        if hi - lo < best.1 - best.0 {
            best = (lo, hi);
        }
    }
    best
}
