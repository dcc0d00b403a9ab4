//! Quantization `q(·)` and de-quantization `q⁻¹(·)` of SCADA channels.
//!
//! Every channel owns a contiguous slice of one global vocabulary. Power
//! always comes first (offset 0) and is μ-law companded into 256 bins; the
//! conditioning channels are binned at empirical quantiles of their
//! non-icing, min–max normalized values. Tokens de-quantize to the midpoint
//! of their bin.

use std::fs;
use std::io::Write;
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{Channel, SeriesFrame};
use crate::error::{Error, Result};
use crate::power_curve::quantile_sorted;
use crate::provenance::sha256;

pub type TokenId = u16;

pub const MIN_FIT_ROWS: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Quantizer {
    MuLaw {
        mu: f64,
        bins: usize,
        rated_kw: f64,
    },
    Quantile {
        bins: usize,
        min: f64,
        max: f64,
        /// Interior edges on the normalized scale, strictly increasing and
        /// strictly inside (0, 1). `edges.len() + 1` bins are reachable.
        edges: Vec<f64>,
        degenerate: bool,
    },
}

impl Quantizer {
    pub fn bins(&self) -> usize {
        match self {
            Quantizer::MuLaw { bins, .. } | Quantizer::Quantile { bins, .. } => *bins,
        }
    }

    /// Number of bins a value can actually land in.
    pub fn reachable(&self) -> usize {
        match self {
            Quantizer::MuLaw { bins, .. } => *bins,
            Quantizer::Quantile { edges, .. } => edges.len() + 1,
        }
    }

    /// Local (channel-relative) bin index of `value`.
    pub fn encode(&self, value: f64) -> usize {
        match self {
            Quantizer::MuLaw { mu, bins, rated_kw } => {
                let x = (value / rated_kw).clamp(0.0, 1.0);
                let c = (mu * x).ln_1p() / mu.ln_1p();
                ((c * *bins as f64).floor() as usize).min(bins - 1)
            }
            Quantizer::Quantile {
                min, max, edges, ..
            } => {
                let x = normalize(value, *min, *max);
                edges.partition_point(|&e| e <= x)
            }
        }
    }

    /// Bounds `[lo, hi)` of local bin `k` in channel units.
    pub fn bin_bounds(&self, k: usize) -> Result<(f64, f64)> {
        if k >= self.reachable() {
            return Err(Error::Domain(format!(
                "token {k} outside the {} reachable bins",
                self.reachable()
            )));
        }
        Ok(match self {
            Quantizer::MuLaw { mu, bins, rated_kw } => {
                let edge =
                    |j: usize| rated_kw * ((1.0 + mu).powf(j as f64 / *bins as f64) - 1.0) / mu;
                (
                    edge(k),
                    if k + 1 == *bins {
                        *rated_kw
                    } else {
                        edge(k + 1)
                    },
                )
            }
            Quantizer::Quantile {
                min, max, edges, ..
            } => {
                let lo = if k == 0 { 0.0 } else { edges[k - 1] };
                let hi = if k == edges.len() { 1.0 } else { edges[k] };
                (min + lo * (max - min), min + hi * (max - min))
            }
        })
    }

    /// Midpoint of local bin `k`, in channel units.
    pub fn decode(&self, k: usize) -> Result<f64> {
        let (lo, hi) = self.bin_bounds(k)?;
        Ok(0.5 * (lo + hi))
    }
}

fn normalize(value: f64, min: f64, max: f64) -> f64 {
    if max > min {
        (value - min) / (max - min)
    } else {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelSpec {
    pub channel: Channel,
    pub offset: usize,
    pub quantizer: Quantizer,
}

impl ChannelSpec {
    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.quantizer.bins()
    }
}

/// Bin counts and μ for [`fit_spec`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenizerOptions {
    pub mu: f64,
    pub power_bins: usize,
    pub wind_bins: usize,
    pub temperature_bins: usize,
    pub operational_bins: usize,
    /// Conditioning channels to keep, in any order; wind speed is mandatory.
    pub channels: Vec<Channel>,
}

impl Default for TokenizerOptions {
    fn default() -> Self {
        TokenizerOptions {
            mu: 120.0,
            power_bins: 256,
            wind_bins: 64,
            temperature_bins: 16,
            operational_bins: 16,
            channels: Channel::ALL[1..].to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenizerSpec {
    /// Power first, then conditioning channels in [`Channel::ALL`] order.
    pub channels: Vec<ChannelSpec>,
    pub vocab_size: usize,
}

/// Fits normalization ranges and quantile edges on non-icing rows.
pub fn fit_spec(non_icing: &SeriesFrame, opts: &TokenizerOptions) -> Result<TokenizerSpec> {
    if non_icing.len() < MIN_FIT_ROWS {
        return Err(Error::InsufficientData(format!(
            "{} non-icing rows for tokenizer fit, need at least {MIN_FIT_ROWS}",
            non_icing.len()
        )));
    }
    if !opts.channels.contains(&Channel::WindSpeed) {
        return Err(Error::Validation(
            "tokenizer must keep the wind-speed channel".into(),
        ));
    }
    if !(opts.mu > 0.0) || opts.power_bins == 0 || opts.power_bins > 4096 {
        return Err(Error::Validation("invalid μ-law settings".into()));
    }
    let mut channels = vec![ChannelSpec {
        channel: Channel::Power,
        offset: 0,
        quantizer: Quantizer::MuLaw {
            mu: opts.mu,
            bins: opts.power_bins,
            rated_kw: non_icing.rated_kw,
        },
    }];
    let mut offset = opts.power_bins;
    for c in Channel::ALL[1..]
        .iter()
        .copied()
        .filter(|c| opts.channels.contains(c))
    {
        let bins = match c {
            Channel::WindSpeed => opts.wind_bins,
            Channel::Temperature => opts.temperature_bins,
            _ => opts.operational_bins,
        };
        if bins == 0 {
            return Err(Error::Validation(format!(
                "channel {c} needs at least one bin"
            )));
        }
        let quantizer = fit_quantile(non_icing.channel(c), bins);
        if let Quantizer::Quantile {
            degenerate: true, ..
        } = quantizer
        {
            log::warn!("channel {c} is constant over non-icing data; using a single bin");
        }
        channels.push(ChannelSpec {
            channel: c,
            offset,
            quantizer,
        });
        offset += bins;
    }
    if offset > TokenId::MAX as usize + 1 {
        return Err(Error::Validation(format!(
            "vocabulary of {offset} tokens does not fit 16-bit ids"
        )));
    }
    Ok(TokenizerSpec {
        channels,
        vocab_size: offset,
    })
}

fn fit_quantile(values: &[f64], bins: usize) -> Quantizer {
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(max > min) {
        return Quantizer::Quantile {
            bins,
            min,
            max,
            edges: Vec::new(),
            degenerate: true,
        };
    }
    let mut norm: Vec<f64> = values.iter().map(|&v| normalize(v, min, max)).collect();
    norm.sort_by(f64::total_cmp);
    let mut edges: Vec<f64> = Vec::with_capacity(bins.saturating_sub(1));
    for k in 1..bins {
        let e = quantile_sorted(&norm, k as f64 / bins as f64);
        if e > 0.0 && e < 1.0 && edges.last().is_none_or(|&last| e > last) {
            edges.push(e);
        }
    }
    Quantizer::Quantile {
        bins,
        min,
        max,
        edges,
        degenerate: false,
    }
}

impl TokenizerSpec {
    pub fn n_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn power(&self) -> &ChannelSpec {
        &self.channels[0]
    }

    pub fn rated_kw(&self) -> f64 {
        match self.power().quantizer {
            Quantizer::MuLaw { rated_kw, .. } => rated_kw,
            Quantizer::Quantile { .. } => unreachable!("power channel is always μ-law"),
        }
    }

    pub fn power_bins(&self) -> usize {
        self.power().quantizer.bins()
    }

    pub fn channel_spec(&self, c: Channel) -> Option<&ChannelSpec> {
        self.channels.iter().find(|s| s.channel == c)
    }

    /// Position of the wind-speed channel within a step.
    pub fn wind_slot(&self) -> usize {
        self.channels
            .iter()
            .position(|s| s.channel == Channel::WindSpeed)
            .expect("wind is mandatory")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Validation(format!("tokenizer spec: {m}")));
        if self.channels.first().map(|c| c.channel) != Some(Channel::Power)
            || self.power().offset != 0
        {
            return bad("power must be the first channel at offset 0".into());
        }
        if !matches!(self.power().quantizer, Quantizer::MuLaw { .. }) {
            return bad("power must use μ-law".into());
        }
        if self.channel_spec(Channel::WindSpeed).is_none() {
            return bad("wind speed channel missing".into());
        }
        let mut next = 0;
        for c in &self.channels {
            if c.offset != next {
                return bad(format!(
                    "channel {} offset {} should be {next}",
                    c.channel, c.offset
                ));
            }
            if let Quantizer::Quantile { edges, .. } = &c.quantizer {
                if edges.windows(2).any(|w| w[1] <= w[0])
                    || edges.len() >= c.quantizer.bins().max(1)
                {
                    return bad(format!(
                        "channel {} edges not strictly increasing",
                        c.channel
                    ));
                }
            }
            next += c.quantizer.bins();
        }
        if next != self.vocab_size {
            return bad(format!(
                "offsets cover {next} ids but vocab_size is {}",
                self.vocab_size
            ));
        }
        Ok(())
    }

    pub fn mu_law_encode(&self, p_kw: f64) -> TokenId {
        self.power().quantizer.encode(p_kw) as TokenId
    }

    pub fn mu_law_decode(&self, token: TokenId) -> Result<f64> {
        self.power().quantizer.decode(token as usize)
    }

    /// kW bounds of a power token's bin.
    pub fn power_bin_bounds(&self, token: TokenId) -> Result<(f64, f64)> {
        self.power().quantizer.bin_bounds(token as usize)
    }

    /// Global token of `value` on channel `c`.
    pub fn quantile_encode(&self, value: f64, c: Channel) -> Result<TokenId> {
        let spec = self
            .channel_spec(c)
            .ok_or_else(|| Error::Schema(format!("channel {c} not in spec")))?;
        Ok((spec.offset + spec.quantizer.encode(value)) as TokenId)
    }

    /// Encodes one value on the channel at slot `slot`.
    pub fn encode_slot(&self, slot: usize, value: f64) -> TokenId {
        let spec = &self.channels[slot];
        (spec.offset + spec.quantizer.encode(value)) as TokenId
    }

    /// De-quantizes a global token id on slot `slot`.
    pub fn decode_slot(&self, slot: usize, token: TokenId) -> Result<f64> {
        let spec = &self.channels[slot];
        let t = token as usize;
        if !spec.range().contains(&t) {
            return Err(Error::Domain(format!(
                "token {t} outside channel {} range {:?}",
                spec.channel,
                spec.range()
            )));
        }
        spec.quantizer.decode(t - spec.offset)
    }

    /// De-quantized value of every power token, as a fraction of rated power.
    pub fn power_levels(&self) -> Vec<f64> {
        let rated = self.rated_kw();
        (0..self.power_bins())
            .map(|t| self.mu_law_decode(t as TokenId).expect("in range") / rated)
            .collect()
    }

    /// Stable content hash used to tie token files and checkpoints to a spec.
    pub fn fingerprint(&self) -> [u8; 32] {
        sha256(&serde_json::to_vec(self).expect("spec serializes"))
    }

    /// Encodes one frame row into a step tuple.
    pub fn encode_row(&self, row: &[f64; 6]) -> Vec<TokenId> {
        (0..self.channels.len())
            .map(|slot| self.encode_slot(slot, row[self.channels[slot].channel.index()]))
            .collect()
    }
}

/// Flattened `[power, conditioning…]` step tuples.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    pub n_channels: usize,
    pub tokens: Vec<TokenId>,
}

impl TokenSequence {
    pub fn new(n_channels: usize, tokens: Vec<TokenId>) -> Result<Self> {
        if n_channels == 0 || !tokens.len().is_multiple_of(n_channels) {
            return Err(Error::Shape(format!(
                "{} tokens do not form {n_channels}-channel steps",
                tokens.len()
            )));
        }
        Ok(TokenSequence { n_channels, tokens })
    }

    pub fn steps(&self) -> usize {
        self.tokens.len() / self.n_channels
    }

    pub fn step(&self, t: usize) -> &[TokenId] {
        &self.tokens[t * self.n_channels..(t + 1) * self.n_channels]
    }

    /// Steps `range` as a new sequence.
    pub fn window(&self, range: Range<usize>) -> TokenSequence {
        let c = self.n_channels;
        TokenSequence {
            n_channels: c,
            tokens: self.tokens[range.start * c..range.end * c].to_vec(),
        }
    }
}

pub fn tokenize(frame: &SeriesFrame, spec: &TokenizerSpec) -> Result<TokenSequence> {
    if frame.rated_kw != spec.rated_kw() {
        return Err(Error::Schema(format!(
            "frame rated power {} differs from tokenizer rated power {}",
            frame.rated_kw,
            spec.rated_kw()
        )));
    }
    let mut tokens = Vec::with_capacity(frame.len() * spec.n_channels());
    for i in 0..frame.len() {
        tokens.extend(spec.encode_row(&frame.row(i)));
    }
    TokenSequence::new(spec.n_channels(), tokens)
}

pub const FLAG_ICING: u16 = 1;
pub const FLAG_SEGMENT_START: u16 = 2;
const TOKEN_MAGIC: &[u8; 8] = b"ICETOK01";

/// Tokenized frame plus per-step flags, as stored in `tokens.bin`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenFile {
    pub spec_hash: [u8; 32],
    pub sequence: TokenSequence,
    pub flags: Vec<u16>,
}

impl TokenFile {
    pub fn from_frame(frame: &SeriesFrame, spec: &TokenizerSpec) -> Result<Self> {
        let sequence = tokenize(frame, spec)?;
        let flags = (0..frame.len())
            .map(|i| {
                let mut f = if frame.icing[i] { FLAG_ICING } else { 0 };
                if !frame.is_contiguous_pair(i) {
                    f |= FLAG_SEGMENT_START;
                }
                f
            })
            .collect();
        Ok(TokenFile {
            spec_hash: spec.fingerprint(),
            sequence,
            flags,
        })
    }

    /// Layout: magic `ICETOK01`, u32 channels, u64 steps, 32-byte spec hash,
    /// then per step `channels` u16 token ids followed by one u16 flag word;
    /// all integers little-endian.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out =
            Vec::with_capacity(52 + 2 * self.sequence.tokens.len() + 2 * self.flags.len());
        out.extend_from_slice(TOKEN_MAGIC);
        out.extend_from_slice(&(self.sequence.n_channels as u32).to_le_bytes());
        out.extend_from_slice(&(self.sequence.steps() as u64).to_le_bytes());
        out.extend_from_slice(&self.spec_hash);
        for (t, &flag) in self.flags.iter().enumerate() {
            for &tok in self.sequence.step(t) {
                out.extend_from_slice(&tok.to_le_bytes());
            }
            out.extend_from_slice(&flag.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let err = |m: &str| Error::format(path, m);
        if bytes.len() < 52 || &bytes[..8] != TOKEN_MAGIC {
            return Err(err("not a token file"));
        }
        let c = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let n = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let spec_hash: [u8; 32] = bytes[20..52].try_into().unwrap();
        if c == 0 || bytes.len() != 52 + n * (c + 1) * 2 {
            return Err(err("truncated token file"));
        }
        let words: Vec<u16> = bytes[52..]
            .chunks_exact(2)
            .map(|w| u16::from_le_bytes([w[0], w[1]]))
            .collect();
        let mut tokens = Vec::with_capacity(n * c);
        let mut flags = Vec::with_capacity(n);
        for rec in words.chunks_exact(c + 1) {
            tokens.extend_from_slice(&rec[..c]);
            flags.push(rec[c]);
        }
        Ok(TokenFile {
            spec_hash,
            sequence: TokenSequence::new(c, tokens)?,
            flags,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_bytes())
            .map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }

    /// Maximal runs of contiguous icing steps.
    pub fn icing_runs(&self) -> Vec<Range<usize>> {
        let mut runs = Vec::new();
        let mut start = None;
        for (i, &f) in self.flags.iter().enumerate() {
            let icing = f & FLAG_ICING != 0;
            let breaks = f & FLAG_SEGMENT_START != 0;
            if let Some(s) = start {
                if !icing || breaks {
                    runs.push(s..i);
                    start = None;
                }
            }
            if icing && start.is_none() {
                start = Some(i);
            }
        }
        if let Some(s) = start {
            runs.push(s..self.flags.len());
        }
        runs
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn uniform_frame(n: usize, seed: u64) -> SeriesFrame {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut f = SeriesFrame::with_capacity(2000.0, n);
        for i in 0..n {
            let row = [
                rng.random_range(0.0..2000.0),
                rng.random_range(0.0..1.0),
                rng.random_range(-10.0..5.0),
                rng.random_range(0.0..20.0),
                rng.random_range(0.0..360.0),
                rng.random_range(0.0..1800.0),
            ];
            f.push(i as i64 * 60, row, false);
        }
        f
    }

    fn spec() -> TokenizerSpec {
        fit_spec(&uniform_frame(4000, 1), &TokenizerOptions::default()).unwrap()
    }

    #[test]
    fn layout_partitions_the_vocabulary() {
        let s = spec();
        s.validate().unwrap();
        assert_eq!(s.vocab_size, 256 + 64 + 16 * 4);
        let mut covered = vec![0; s.vocab_size];
        for c in &s.channels {
            for t in c.range() {
                covered[t] += 1;
            }
        }
        assert!(covered.iter().all(|&n| n == 1));
    }

    #[test]
    fn uniform_quartile_edges() {
        let opts = TokenizerOptions {
            wind_bins: 4,
            ..TokenizerOptions::default()
        };
        let s = fit_spec(&uniform_frame(10_000, 2), &opts).unwrap();
        let Quantizer::Quantile {
            edges, min, max, ..
        } = &s.channel_spec(Channel::WindSpeed).unwrap().quantizer
        else {
            panic!("wind is quantile-binned")
        };
        // oracle: sort the raw sample and index k/4 of the way in
        let mut raw = uniform_frame(10_000, 2).wind().to_vec();
        raw.sort_by(f64::total_cmp);
        for (k, e) in edges.iter().enumerate() {
            let target = (k + 1) as f64 / 4.0;
            let oracle = (raw[(target * 10_000.0).ceil() as usize - 1] - min) / (max - min);
            assert!((e - oracle).abs() < 1e-12);
            assert!((e - target).abs() < 0.02, "edge {e} vs {target}");
        }
    }

    #[test]
    fn constant_channel_is_degenerate() {
        let mut f = uniform_frame(300, 3);
        f.channels[Channel::Yaw.index()]
            .iter_mut()
            .for_each(|v| *v = 42.0);
        let s = fit_spec(&f, &TokenizerOptions::default()).unwrap();
        let q = &s.channel_spec(Channel::Yaw).unwrap().quantizer;
        assert!(matches!(
            q,
            Quantizer::Quantile {
                degenerate: true,
                ..
            }
        ));
        assert_eq!(q.reachable(), 1);
        assert_eq!(q.encode(42.0), 0);
        assert_eq!(q.decode(0).unwrap(), 42.0);
    }

    #[test]
    fn fit_is_deterministic_and_needs_rows() {
        let f = uniform_frame(500, 4);
        assert_eq!(
            fit_spec(&f, &TokenizerOptions::default()).unwrap(),
            fit_spec(&f, &TokenizerOptions::default()).unwrap()
        );
        let short = uniform_frame(255, 4);
        assert!(matches!(
            fit_spec(&short, &TokenizerOptions::default()),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn mu_law_end_points_and_midpoint() {
        let s = spec();
        assert_eq!(s.mu_law_encode(0.0), 0);
        assert_eq!(s.mu_law_encode(2000.0), 255);
        assert_eq!(s.mu_law_encode(5000.0), 255);
        // floor(ln(61)/ln(121) · 256) = floor(219.439…), evaluated at 50 digits
        assert_eq!(s.mu_law_encode(1000.0), 219);
    }

    #[test]
    fn token_zero_decodes_to_first_bin_midpoint() {
        let s = spec();
        // ((121^(1/256) − 1) / 120 · 2000) / 2, evaluated at 50 digits
        assert!((s.mu_law_decode(0).unwrap() - 0.157_584_423_252_574_2).abs() < 1e-12);
        assert!(s.mu_law_decode(256).is_err());
    }

    #[test]
    fn every_token_round_trips() {
        let s = spec();
        for slot in 0..s.n_channels() {
            let cs = &s.channels[slot];
            for k in 0..cs.quantizer.reachable() {
                let t = (cs.offset + k) as TokenId;
                let v = s.decode_slot(slot, t).unwrap();
                assert_eq!(
                    s.encode_slot(slot, v),
                    t,
                    "channel {} token {k}",
                    cs.channel
                );
            }
        }
    }

    #[test]
    fn quantile_edge_ties_go_right_and_clamp() {
        let q = Quantizer::Quantile {
            bins: 4,
            min: 0.0,
            max: 4.0,
            edges: vec![0.25, 0.5, 0.75],
            degenerate: false,
        };
        assert_eq!(q.encode(-3.0), 0);
        assert_eq!(q.encode(1.0), 1);
        assert_eq!(q.encode(2.0), 2);
        assert_eq!(q.encode(4.0), 3);
        assert_eq!(q.encode(99.0), 3);
    }

    #[test]
    fn low_power_bins_are_narrower() {
        let s = spec();
        let width = |p: f64| {
            let (lo, hi) = s.power_bin_bounds(s.mu_law_encode(p)).unwrap();
            hi - lo
        };
        assert!(width(0.05 * 2000.0) < width(0.8 * 2000.0));
    }

    #[test]
    fn tokenize_single_row() {
        let s = spec();
        let f = uniform_frame(1, 9);
        let seq = tokenize(&f, &s).unwrap();
        assert_eq!(seq.steps(), 1);
        assert_eq!(seq.tokens.len(), 6);
        let row = f.row(0);
        assert_eq!(seq.tokens[0], s.mu_law_encode(row[0]));
        for (slot, c) in Channel::ALL.iter().enumerate().skip(1) {
            assert_eq!(
                seq.tokens[slot],
                s.quantile_encode(row[c.index()], *c).unwrap()
            );
        }
    }

    #[test]
    fn tokenize_rejects_rated_mismatch() {
        let s = spec();
        let mut f = uniform_frame(3, 9);
        f.rated_kw = 3000.0;
        assert!(matches!(tokenize(&f, &s), Err(Error::Schema(_))));
    }

    #[test]
    fn channel_subset_keeps_power_first() {
        let opts = TokenizerOptions {
            channels: vec![Channel::GenSpeed, Channel::WindSpeed],
            ..TokenizerOptions::default()
        };
        let s = fit_spec(&uniform_frame(400, 5), &opts).unwrap();
        let order: Vec<Channel> = s.channels.iter().map(|c| c.channel).collect();
        assert_eq!(
            order,
            vec![Channel::Power, Channel::WindSpeed, Channel::GenSpeed]
        );
        assert_eq!(s.vocab_size, 256 + 64 + 16);
        assert_eq!(s.wind_slot(), 1);
        let no_wind = TokenizerOptions {
            channels: vec![Channel::Yaw],
            ..TokenizerOptions::default()
        };
        assert!(fit_spec(&uniform_frame(400, 5), &no_wind).is_err());
    }

    #[test]
    fn token_file_round_trip_and_runs() {
        let s = spec();
        let mut f = uniform_frame(12, 6);
        for i in [2, 3, 4, 7, 8, 9, 10] {
            f.icing[i] = true;
        }
        f.timestamps.iter_mut().skip(9).for_each(|t| *t += 600);
        let tf = TokenFile::from_frame(&f, &s).unwrap();
        let back = TokenFile::from_bytes(&tf.to_bytes(), Path::new("mem")).unwrap();
        assert_eq!(back, tf);
        assert_eq!(tf.icing_runs(), vec![2..5, 7..9, 9..11]);
        assert!(TokenFile::from_bytes(&tf.to_bytes()[..60], Path::new("mem")).is_err());
    }

    proptest! {
        #[test]
        fn encoders_are_monotone(a in -100.0f64..2500.0, b in -100.0f64..2500.0) {
            let s = spec();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(s.mu_law_encode(lo) <= s.mu_law_encode(hi));
            prop_assert!(s.quantile_encode(lo / 100.0, Channel::WindSpeed).unwrap()
                <= s.quantile_encode(hi / 100.0, Channel::WindSpeed).unwrap());
        }

        #[test]
        fn binary_search_matches_linear_scan(v in -0.5f64..1.5) {
            let s = spec();
            let cs = s.channel_spec(Channel::WindSpeed).unwrap();
            let Quantizer::Quantile { edges, min, max, .. } = &cs.quantizer else { unreachable!() };
            let x = (v - min) / (max - min);
            let mut linear = 0;
            for (k, e) in edges.iter().enumerate() {
                if x >= *e { linear = k + 1; }
            }
            prop_assert_eq!(s.quantile_encode(v, Channel::WindSpeed).unwrap() as usize, cs.offset + linear);
        }

        #[test]
        fn tokens_stay_in_channel_ranges(seed in 0u64..1000) {
            let s = spec();
            let seq = tokenize(&uniform_frame(5, seed), &s).unwrap();
            for t in 0..seq.steps() {
                for (slot, &tok) in seq.step(t).iter().enumerate() {
                    prop_assert!(s.channels[slot].range().contains(&(tok as usize)));
                }
            }
        }
    }
}
