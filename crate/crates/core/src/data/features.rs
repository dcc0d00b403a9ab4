use serde::{Deserialize, Serialize};

use super::{Channel, SeriesFrame};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureScore {
    pub channel: Channel,
    pub correlation: f64,
}

/// Pearson correlation; `None` when either input has zero variance.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    assert_eq!(x.len(), y.len(), "pearson inputs must have equal length");
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Channels whose |r| with `target` reaches `threshold`, strongest first.
///
/// Zero-variance channels are skipped with a warning.
pub fn select_features(
    frame: &SeriesFrame,
    target: Channel,
    threshold: f64,
) -> Result<Vec<FeatureScore>> {
    if frame.len() < 2 {
        return Err(Error::InsufficientData(
            "feature selection needs at least 2 rows".into(),
        ));
    }
    let y = frame.channel(target);
    let mut out = Vec::new();
    for c in Channel::ALL.into_iter().filter(|&c| c != target) {
        match pearson(frame.channel(c), y) {
            Some(r) if r.abs() >= threshold => out.push(FeatureScore {
                channel: c,
                correlation: r,
            }),
            Some(_) => {}
            None => log::warn!("channel {c} has zero variance; excluded from feature selection"),
        }
    }
    out.sort_by(|a, b| {
        b.correlation
            .abs()
            .total_cmp(&a.correlation.abs())
            .then(a.channel.cmp(&b.channel))
    });
    Ok(out)
}
