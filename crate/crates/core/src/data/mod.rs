//! SCADA-style multichannel frames and everything that produces them.

mod csv_io;
mod features;
mod split;
mod synth;

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use csv_io::{load_csv, write_csv, IngestReport, Schema};
pub use features::{pearson, select_features, FeatureScore};
pub use split::{chrono_split, split_len, SplitIndex};
pub use synth::{synth_icing, SynthConfig};

/// Resampled step, in seconds.
pub const STEP_SECONDS: i64 = 60;

/// Longest gap (in seconds) bridged by linear interpolation when resampling.
pub const MAX_INTERPOLATED_GAP: i64 = 5 * STEP_SECONDS;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    Power,
    WindSpeed,
    Temperature,
    Pitch,
    Yaw,
    GenSpeed,
}

impl Channel {
    /// Fixed per-step order used everywhere: power first, then meteorological,
    /// then operational channels.
    pub const ALL: [Channel; 6] = [
        Channel::Power,
        Channel::WindSpeed,
        Channel::Temperature,
        Channel::Pitch,
        Channel::Yaw,
        Channel::GenSpeed,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    /// Column name in the canonical CSV layout.
    pub fn csv_name(self) -> &'static str {
        match self {
            Channel::Power => "power_kw",
            Channel::WindSpeed => "wind_ms",
            Channel::Temperature => "temp_c",
            Channel::Pitch => "pitch_deg",
            Channel::Yaw => "yaw_deg",
            Channel::GenSpeed => "gen_rpm",
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Channel::Power => "power",
            Channel::WindSpeed => "wind_speed",
            Channel::Temperature => "temperature",
            Channel::Pitch => "pitch",
            Channel::Yaw => "yaw",
            Channel::GenSpeed => "gen_speed",
        }
    }
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Channel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Channel::ALL
            .into_iter()
            .find(|c| c.name() == s || c.csv_name() == s)
            .ok_or_else(|| Error::Schema(format!("unknown channel `{s}`")))
    }
}

/// A cleaned, minute-resolution multichannel series with icing labels.
///
/// Timestamps are epoch seconds. Consecutive rows are either exactly
/// [`STEP_SECONDS`] apart or separated by a gap that splits the frame into
/// segments (see [`SeriesFrame::segments`]).
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesFrame {
    pub timestamps: Vec<i64>,
    pub channels: [Vec<f64>; 6],
    pub icing: Vec<bool>,
    pub rated_kw: f64,
}

impl SeriesFrame {
    pub fn with_capacity(rated_kw: f64, n: usize) -> Self {
        SeriesFrame {
            timestamps: Vec::with_capacity(n),
            channels: std::array::from_fn(|_| Vec::with_capacity(n)),
            icing: Vec::with_capacity(n),
            rated_kw,
        }
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn push(&mut self, timestamp: i64, values: [f64; 6], icing: bool) {
        self.timestamps.push(timestamp);
        for (col, v) in self.channels.iter_mut().zip(values) {
            col.push(v);
        }
        self.icing.push(icing);
    }

    pub fn channel(&self, c: Channel) -> &[f64] {
        &self.channels[c.index()]
    }

    pub fn power(&self) -> &[f64] {
        self.channel(Channel::Power)
    }

    pub fn wind(&self) -> &[f64] {
        self.channel(Channel::WindSpeed)
    }

    pub fn row(&self, i: usize) -> [f64; 6] {
        std::array::from_fn(|c| self.channels[c][i])
    }

    /// Rows at the given indices, in the given order.
    pub fn select(&self, indices: impl IntoIterator<Item = usize>) -> SeriesFrame {
        let mut out = SeriesFrame::with_capacity(self.rated_kw, 0);
        for i in indices {
            out.push(self.timestamps[i], self.row(i), self.icing[i]);
        }
        out
    }

    pub fn slice(&self, range: Range<usize>) -> SeriesFrame {
        self.select(range)
    }

    /// Rows whose icing flag equals `icing`. Timestamps are kept, so removed
    /// rows show up as segment breaks.
    pub fn filter_icing(&self, icing: bool) -> SeriesFrame {
        self.select((0..self.len()).filter(|&i| self.icing[i] == icing))
    }

    /// Maximal runs of rows spaced exactly one step apart.
    pub fn segments(&self) -> Vec<Range<usize>> {
        let mut out = Vec::new();
        if self.is_empty() {
            return out;
        }
        let mut start = 0;
        for i in 1..self.len() {
            if self.timestamps[i] - self.timestamps[i - 1] != STEP_SECONDS {
                out.push(start..i);
                start = i;
            }
        }
        out.push(start..self.len());
        out
    }

    /// True when rows `i-1` and `i` are adjacent minutes.
    pub fn is_contiguous_pair(&self, i: usize) -> bool {
        i > 0 && self.timestamps[i] - self.timestamps[i - 1] == STEP_SECONDS
    }

    /// Checks the frame invariants: increasing timestamps, finite values and
    /// power inside `[0, rated]`.
    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        if self.channels.iter().any(|c| c.len() != n) || self.icing.len() != n {
            return Err(Error::Shape("frame columns have different lengths".into()));
        }
        if !(self.rated_kw.is_finite() && self.rated_kw > 0.0) {
            return Err(Error::Validation(format!(
                "rated power {} must be positive",
                self.rated_kw
            )));
        }
        if self.timestamps.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Validation(
                "timestamps are not strictly increasing".into(),
            ));
        }
        if self.channels.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Validation("frame contains non-finite values".into()));
        }
        if self.power().iter().any(|&p| p < 0.0 || p > self.rated_kw) {
            return Err(Error::Validation("power outside [0, rated]".into()));
        }
        Ok(())
    }
}
