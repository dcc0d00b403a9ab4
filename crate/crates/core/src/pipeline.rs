//! End-to-end orchestration and the per-stage entry points of the CLI.
//!
//! A run directory holds `data.csv`, `envelope.json`, `spec.json`,
//! `tokens.bin`, `model.ckpt`, `train_history.json`, `scenarios.csv`,
//! `truth.csv` and `report.json`. JSON artifacts carry the config hash, the
//! seed and the hashes of their inputs. A failed stage leaves a `STALE`
//! marker naming the stage.

use std::fs;
use std::io::Write;
use std::ops::Range;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::data::{load_csv, split_len, synth_icing, write_csv, Schema, SeriesFrame};
use crate::error::{Error, Result};
use crate::metrics::{evaluate, EvalReport};
use crate::model::{
    load_checkpoint, save_checkpoint, step_caps, train, training_windows, Checkpoint, EpochStats,
    ModelParams, Objective, Window,
};
use crate::power_curve::PhysicsEnvelope;
use crate::provenance::{derive_seed, file_hash, Artifact, Provenance};
use crate::sampler::{generate, write_scenarios_csv, DecodeConfig, ModeRegistry, ScenarioSet};
use crate::tokenizer::{fit_spec, TokenFile, TokenSequence, TokenizerSpec};

pub const STALE_MARKER: &str = "STALE";

/// File layout of a run directory.
#[derive(Debug, Clone)]
pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        RunDir { root: root.into() }
    }

    pub fn data(&self) -> PathBuf {
        self.root.join("data.csv")
    }
    pub fn envelope(&self) -> PathBuf {
        self.root.join("envelope.json")
    }
    pub fn spec(&self) -> PathBuf {
        self.root.join("spec.json")
    }
    pub fn tokens(&self) -> PathBuf {
        self.root.join("tokens.bin")
    }
    pub fn model(&self) -> PathBuf {
        self.root.join("model.ckpt")
    }
    pub fn history(&self) -> PathBuf {
        self.root.join("train_history.json")
    }
    pub fn scenarios(&self) -> PathBuf {
        self.root.join("scenarios.csv")
    }
    pub fn truth(&self) -> PathBuf {
        self.root.join("truth.csv")
    }
    pub fn report(&self) -> PathBuf {
        self.root.join("report.json")
    }
    pub fn sensitivity(&self) -> PathBuf {
        self.root.join("sensitivity.json")
    }
    pub fn stale(&self) -> PathBuf {
        self.root.join(STALE_MARKER)
    }
}

fn provenance(cfg: &RunConfig) -> Provenance {
    Provenance::new(cfg.hash(), cfg.seed)
}

/// Refuses artifacts produced under different configurations.
pub fn check_same_run(a: &Provenance, b: &Provenance, what: &str) -> Result<()> {
    if a.config_hash != b.config_hash || a.seed != b.seed {
        return Err(Error::Provenance(format!(
            "{what}: config {}/seed {} vs config {}/seed {}",
            a.config_hash, a.seed, b.config_hash, b.seed
        )));
    }
    Ok(())
}

/// The configured CSV, or a synthetic frame from the `synth` sub-seed.
pub fn load_frame(cfg: &RunConfig) -> Result<SeriesFrame> {
    match &cfg.data {
        Some(path) => {
            let (frame, report) = load_csv(path, &Schema::default())?;
            log::info!(
                "ingested {} rows from {} ({report:?})",
                frame.len(),
                path.display()
            );
            Ok(frame)
        }
        None => synth_icing(&cfg.synth, cfg.synth_length, derive_seed(cfg.seed, "synth")),
    }
}

/// Chronological train/val/test split of the icing rows, as frame-index ranges.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IcingSplit {
    pub train: Range<usize>,
    pub val: Range<usize>,
    pub test: Range<usize>,
}

pub fn split_icing(flags_icing: &[bool], fractions: [f64; 3]) -> Result<IcingSplit> {
    let idx: Vec<usize> = (0..flags_icing.len()).filter(|&i| flags_icing[i]).collect();
    let s = split_len(idx.len(), fractions)?;
    let span = |r: Range<usize>| {
        if r.is_empty() {
            0..0
        } else {
            idx[r.start]..idx[r.end - 1] + 1
        }
    };
    Ok(IcingSplit {
        train: span(s.train),
        val: span(s.val),
        test: span(s.test),
    })
}

fn clip_runs(runs: &[Range<usize>], to: &Range<usize>) -> Vec<Range<usize>> {
    runs.iter()
        .map(|r| r.start.max(to.start)..r.end.min(to.end))
        .filter(|r| !r.is_empty())
        .collect()
}

/// A context + horizon window inside one icing run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalWindow {
    pub id: usize,
    pub context: Range<usize>,
    pub future: Range<usize>,
}

pub fn eval_windows(
    runs: &[Range<usize>],
    range: &Range<usize>,
    context_steps: usize,
    horizon: usize,
    stride: usize,
    max_windows: usize,
) -> Vec<EvalWindow> {
    let mut out = Vec::new();
    for run in clip_runs(runs, range) {
        let mut start = run.start;
        while start + context_steps + horizon <= run.end {
            let mid = start + context_steps;
            out.push(EvalWindow {
                id: out.len(),
                context: start..mid,
                future: mid..mid + horizon,
            });
            start += stride;
        }
    }
    if max_windows > 0 && out.len() > max_windows {
        // evenly spaced subset
        let n = out.len();
        out = (0..max_windows)
            .map(|k| out[k * n / max_windows].clone())
            .collect();
        out.iter_mut().enumerate().for_each(|(i, w)| w.id = i);
    }
    out
}

/// Windows in the top decile of realized power variance over the horizon
/// (at least one window).
pub fn high_volatility(windows: &[EvalWindow], power: &[f64]) -> Vec<EvalWindow> {
    let variance = |w: &EvalWindow| {
        let xs = &power[w.future.clone()];
        let m = xs.iter().sum::<f64>() / xs.len() as f64;
        xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64
    };
    let mut scored: Vec<(f64, &EvalWindow)> = windows.iter().map(|w| (variance(w), w)).collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.id.cmp(&b.1.id)));
    let keep = windows.len().div_ceil(10).max(1).min(windows.len());
    let mut top: Vec<EvalWindow> = scored[..keep].iter().map(|(_, w)| (*w).clone()).collect();
    top.sort_by_key(|w| w.id);
    top
}

pub fn fit_envelope_stage(frame: &SeriesFrame, cfg: &RunConfig) -> Result<PhysicsEnvelope> {
    PhysicsEnvelope::fit(frame, &cfg.envelope)
}

pub fn fit_spec_stage(frame: &SeriesFrame, cfg: &RunConfig) -> Result<TokenizerSpec> {
    fit_spec(&frame.filter_icing(false), &cfg.tokenizer)
}

/// Everything the training stage needs, already loaded.
pub struct TrainInputs<'a> {
    pub tokens: &'a TokenFile,
    pub spec: &'a TokenizerSpec,
    pub envelope: &'a PhysicsEnvelope,
}

/// Train and val windows cut from the icing runs of each split.
pub fn split_windows(
    inputs: &TrainInputs<'_>,
    cfg: &RunConfig,
) -> Result<(Vec<Window>, Vec<Window>)> {
    let TrainInputs {
        tokens,
        spec,
        envelope,
    } = inputs;
    if tokens.spec_hash != spec.fingerprint() {
        return Err(Error::Provenance(
            "token file was produced with a different tokenizer spec".into(),
        ));
    }
    let icing: Vec<bool> = tokens
        .flags
        .iter()
        .map(|f| f & crate::tokenizer::FLAG_ICING != 0)
        .collect();
    let split = split_icing(&icing, cfg.split)?;
    let runs = tokens.icing_runs();
    let steps = cfg.model.context_steps + cfg.decode.horizon;
    let caps = step_caps(&tokens.sequence, spec, envelope)?;
    let train_w = training_windows(
        &tokens.sequence,
        &caps,
        &clip_runs(&runs, &split.train),
        steps,
        cfg.train_stride,
    )?;
    let val_w = training_windows(
        &tokens.sequence,
        &caps,
        &clip_runs(&runs, &split.val),
        steps,
        cfg.train_stride,
    )?;
    if train_w.is_empty() {
        return Err(Error::InsufficientData(format!(
            "no {steps}-step icing windows in the training split"
        )));
    }
    Ok((train_w, val_w))
}

/// The composite objective for `cfg`; `levels` are the tokenizer's power levels.
pub fn objective<'a>(
    levels: &'a [f64],
    spec: &TokenizerSpec,
    envelope: &PhysicsEnvelope,
    cfg: &RunConfig,
) -> Objective<'a> {
    Objective {
        n_channels: spec.n_channels(),
        power_levels: levels,
        ce_mask: cfg.ce_mask,
        weights: cfg.loss,
        ramp_up: envelope.ramp_up / envelope.rated_kw,
        ramp_down: envelope.ramp_down / envelope.rated_kw,
    }
}

/// Trains on icing windows from the train split, selecting on the val split.
pub fn train_stage(
    inputs: &TrainInputs<'_>,
    cfg: &RunConfig,
) -> Result<(ModelParams, Vec<EpochStats>)> {
    let (train_w, val_w) = split_windows(inputs, cfg)?;
    log::info!(
        "training on {} windows, validating on {}",
        train_w.len(),
        val_w.len()
    );
    let spec = inputs.spec;
    let model_cfg = cfg
        .model
        .model_config(spec.vocab_size, spec.n_channels(), cfg.decode.horizon);
    let params = ModelParams::init(model_cfg, derive_seed(cfg.seed, "init"))?;
    let levels = spec.power_levels();
    let objective = objective(&levels, spec, inputs.envelope, cfg);
    let train_cfg = crate::model::TrainConfig {
        seed: derive_seed(cfg.seed, "train"),
        ..cfg.train
    };
    let out = train(params, &train_w, &val_w, &objective, &train_cfg)?;
    Ok((out.params, out.history))
}

/// Scenario sets for each window; window `w` decodes with its own sub-seed
/// of `cfg.seed`, identical across modes.
#[allow(clippy::too_many_arguments)]
pub fn generate_windows(
    params: &ModelParams,
    seq: &TokenSequence,
    windows: &[EvalWindow],
    env: &PhysicsEnvelope,
    spec: &TokenizerSpec,
    cfg: &DecodeConfig,
    registry: &ModeRegistry,
) -> Result<Vec<ScenarioSet>> {
    windows
        .iter()
        .map(|w| {
            let wcfg = DecodeConfig {
                seed: derive_seed(cfg.seed, &format!("window/{}", w.id)),
                ..cfg.clone()
            };
            let mut set = generate(
                params,
                &seq.window(w.context.clone()),
                &seq.window(w.future.clone()),
                env,
                spec,
                &wcfg,
                registry,
            )?;
            set.window_id = w.id;
            set.seed = cfg.seed;
            Ok(set)
        })
        .collect()
}

/// `window_id, step, power_kw` rows.
pub fn write_truth_csv(path: &Path, windows: &[EvalWindow], power: &[f64]) -> Result<()> {
    let mut out = String::from("window_id,step,power_kw\n");
    for w in windows {
        for (h, p) in power[w.future.clone()].iter().enumerate() {
            out.push_str(&format!("{},{h},{p}\n", w.id));
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Truth trajectories keyed by window. Accepts `window_id, step, power_kw`
/// files, or a SCADA CSV whose last `horizon` rows form a single window.
pub fn read_truth(path: &Path, horizon: usize) -> Result<Vec<(usize, Vec<f64>)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let header = text
        .lines()
        .find(|l| !l.starts_with('#'))
        .unwrap_or_default();
    if !header.split(',').any(|h| h.trim() == "window_id") {
        let (frame, _) = load_csv(path, &Schema::default())?;
        if frame.len() < horizon {
            return Err(Error::InsufficientData(format!(
                "truth has {} rows, horizon is {horizon}",
                frame.len()
            )));
        }
        return Ok(vec![(0, frame.power()[frame.len() - horizon..].to_vec())]);
    }
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let mut out: Vec<(usize, Vec<f64>)> = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        let bad = || Error::format(path, format!("bad truth row {rec:?}"));
        let w: usize = rec
            .get(0)
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(bad)?;
        let step: usize = rec
            .get(1)
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(bad)?;
        let p: f64 = rec
            .get(2)
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(bad)?;
        if out.last().is_none_or(|(id, _)| *id != w) {
            out.push((w, Vec::new()));
        }
        let row = &mut out.last_mut().expect("just pushed").1;
        if row.len() != step {
            return Err(Error::format(
                path,
                format!("window {w} steps out of order"),
            ));
        }
        row.push(p);
    }
    Ok(out)
}

/// Pairs scenario sets with their truth windows by id.
pub fn evaluate_sets(
    sets: &[ScenarioSet],
    truth: &[(usize, Vec<f64>)],
    env: &PhysicsEnvelope,
    kld_bins: usize,
) -> Result<EvalReport> {
    let truths = sets
        .iter()
        .map(|s| {
            truth
                .iter()
                .find(|(id, _)| *id == s.window_id)
                .map(|(_, t)| t.clone())
                .ok_or_else(|| Error::Shape(format!("no truth for window {}", s.window_id)))
        })
        .collect::<Result<Vec<_>>>()?;
    evaluate(sets, &truths, env, kld_bins)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub report: EvalReport,
    pub history: Vec<EpochStats>,
    pub windows: usize,
}

fn stage<T>(dir: &RunDir, name: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
    log::info!("stage {name}");
    f().map_err(|e| {
        let marker = dir.stale();
        if let Ok(mut file) = fs::File::create(&marker) {
            let _ = writeln!(file, "stage {name} failed: {e}");
        }
        e.in_stage(name)
    })
}

/// Shared state for the stages after training.
pub struct RunState {
    pub frame: SeriesFrame,
    pub envelope: PhysicsEnvelope,
    pub spec: TokenizerSpec,
    pub tokens: TokenFile,
    pub checkpoint: Checkpoint,
    pub test_windows: Vec<EvalWindow>,
}

impl RunState {
    /// Reloads a finished run directory and checks that its artifacts agree
    /// with each other. Only the split, window and decode settings of `cfg`
    /// are used.
    pub fn load(dir: &RunDir, cfg: &RunConfig) -> Result<Self> {
        let (frame, _) = load_csv(&dir.data(), &Schema::default())?;
        let env_art: Artifact<PhysicsEnvelope> = Artifact::read(&dir.envelope())?;
        let spec_art: Artifact<TokenizerSpec> = Artifact::read(&dir.spec())?;
        check_same_run(
            &env_art.provenance,
            &spec_art.provenance,
            "envelope vs spec",
        )?;
        let tokens = TokenFile::read(&dir.tokens())?;
        let checkpoint = load_checkpoint(&dir.model())?;
        let fp = spec_art.body.fingerprint();
        if tokens.spec_hash != fp || checkpoint.spec_hash != fp {
            return Err(Error::Provenance(
                "tokens or checkpoint were built with another tokenizer spec".into(),
            ));
        }
        if checkpoint.config_hash != spec_art.provenance.config_hash {
            return Err(Error::Provenance(
                "checkpoint and spec come from different runs".into(),
            ));
        }
        let test_windows = test_windows(&tokens, cfg)?;
        Ok(RunState {
            frame,
            envelope: env_art.body,
            spec: spec_art.body,
            tokens,
            checkpoint,
            test_windows,
        })
    }
}

pub fn test_windows(tokens: &TokenFile, cfg: &RunConfig) -> Result<Vec<EvalWindow>> {
    let icing: Vec<bool> = tokens
        .flags
        .iter()
        .map(|f| f & crate::tokenizer::FLAG_ICING != 0)
        .collect();
    let split = split_icing(&icing, cfg.split)?;
    let w = eval_windows(
        &tokens.icing_runs(),
        &split.test,
        cfg.model.context_steps,
        cfg.decode.horizon,
        cfg.eval.window_stride,
        cfg.eval.max_windows,
    );
    if w.is_empty() {
        return Err(Error::InsufficientData(
            "no complete icing windows in the test split".into(),
        ));
    }
    Ok(w)
}

/// synth/ingest → fit-curve → fit-spec → tokenize → train → generate →
/// evaluate, writing every artifact under `dir`.
pub fn run_pipeline(cfg: &RunConfig, dir: &RunDir) -> Result<RunSummary> {
    cfg.validate()?;
    fs::create_dir_all(&dir.root).map_err(|e| Error::io(&dir.root, e))?;
    let _ = fs::remove_file(dir.stale());
    let prov = provenance(cfg);

    let frame = stage(
        dir,
        if cfg.data.is_some() {
            "ingest"
        } else {
            "synth"
        },
        || {
            let frame = load_frame(cfg)?;
            write_csv(&frame, &dir.data())?;
            Ok(frame)
        },
    )?;
    let data_hash = file_hash(&dir.data())?;

    let envelope = stage(dir, "fit-curve", || {
        let env = fit_envelope_stage(&frame, cfg)?;
        Artifact {
            provenance: prov.clone().with_input("data", &data_hash),
            body: env,
        }
        .write(&dir.envelope())?;
        Ok(env)
    })?;
    let spec = stage(dir, "fit-spec", || {
        let spec = fit_spec_stage(&frame, cfg)?;
        Artifact {
            provenance: prov.clone().with_input("data", &data_hash),
            body: spec.clone(),
        }
        .write(&dir.spec())?;
        Ok(spec)
    })?;
    let tokens = stage(dir, "tokenize", || {
        let t = TokenFile::from_frame(&frame, &spec)?;
        t.write(&dir.tokens())?;
        Ok(t)
    })?;
    let (checkpoint, history) = stage(dir, "train", || {
        let (params, history) = train_stage(
            &TrainInputs {
                tokens: &tokens,
                spec: &spec,
                envelope: &envelope,
            },
            cfg,
        )?;
        let ck = Checkpoint {
            params,
            spec_hash: spec.fingerprint(),
            config_hash: cfg.hash(),
            seed: cfg.seed,
        };
        save_checkpoint(&dir.model(), &ck)?;
        let hist_prov = prov.clone().with_input("tokens", file_hash(&dir.tokens())?);
        Artifact {
            provenance: hist_prov,
            body: history.clone(),
        }
        .write(&dir.history())?;
        // decode from the stored (f32) weights so the CLI path reproduces the run
        Ok((load_checkpoint(&dir.model())?, history))
    })?;

    let windows = stage(dir, "generate", || test_windows(&tokens, cfg))?;
    let sets = stage(dir, "generate", || {
        let decode = DecodeConfig {
            seed: derive_seed(cfg.seed, "decode"),
            ..cfg.decode.clone()
        };
        let sets = generate_windows(
            &checkpoint.params,
            &tokens.sequence,
            &windows,
            &envelope,
            &spec,
            &decode,
            &ModeRegistry::builtin(),
        )?;
        write_scenarios_csv(&dir.scenarios(), &sets)?;
        write_truth_csv(&dir.truth(), &windows, frame.power())?;
        Ok(sets)
    })?;
    let report = stage(dir, "evaluate", || {
        let truth = read_truth(&dir.truth(), cfg.decode.horizon)?;
        let report = evaluate_sets(&sets, &truth, &envelope, cfg.eval.kld_bins)?;
        let p = prov
            .clone()
            .with_input("model", file_hash(&dir.model())?)
            .with_input("scenarios", file_hash(&dir.scenarios())?)
            .with_input("truth", file_hash(&dir.truth())?);
        Artifact {
            provenance: p,
            body: report.clone(),
        }
        .write(&dir.report())?;
        Ok(report)
    })?;
    Ok(RunSummary {
        report,
        history,
        windows: windows.len(),
    })
}

/// One report per constraint mode on the high-volatility test windows of a
/// finished run, all modes sharing the same decoding seeds.
pub fn run_sensitivity(cfg: &RunConfig, dir: &RunDir, modes: &[&str]) -> Result<Vec<EvalReport>> {
    let state = RunState::load(dir, cfg)?;
    let windows = high_volatility(&state.test_windows, state.frame.power());
    let truth: Vec<(usize, Vec<f64>)> = windows
        .iter()
        .map(|w| (w.id, state.frame.power()[w.future.clone()].to_vec()))
        .collect();
    let registry = ModeRegistry::builtin();
    let reports = modes
        .iter()
        .map(|mode| {
            let decode = DecodeConfig {
                seed: derive_seed(cfg.seed, "decode"),
                mode: mode.to_string(),
                ..cfg.decode.clone()
            };
            let sets = generate_windows(
                &state.checkpoint.params,
                &state.tokens.sequence,
                &windows,
                &state.envelope,
                &state.spec,
                &decode,
                &registry,
            )?;
            evaluate_sets(&sets, &truth, &state.envelope, cfg.eval.kld_bins)
        })
        .collect::<Result<Vec<_>>>()?;
    let prov = provenance(cfg).with_input("model", file_hash(&dir.model())?);
    Artifact {
        provenance: prov,
        body: reports.clone(),
    }
    .write(&dir.sensitivity())?;
    Ok(reports)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn icing_split_spans_rows() {
        let mut flags = vec![false; 40];
        flags[5..25].iter_mut().for_each(|f| *f = true);
        flags[30..40].iter_mut().for_each(|f| *f = true);
        let s = split_icing(&flags, [0.7, 0.15, 0.15]).unwrap();
        // 30 icing rows → 21 / 4 / 5
        assert_eq!(s.train, 5..31);
        assert_eq!(s.val, 31..35);
        assert_eq!(s.test, 35..40);
    }

    #[test]
    fn windows_fit_inside_runs() {
        let runs = vec![0..30, 40..100];
        let w = eval_windows(&runs, &(20..100), 8, 4, 10, 0);
        assert!(w
            .iter()
            .all(|w| w.context.start >= 40 && w.future.end <= 100));
        assert_eq!(w.len(), 5);
        assert_eq!(
            w[0],
            EvalWindow {
                id: 0,
                context: 40..48,
                future: 48..52
            }
        );
        let capped = eval_windows(&runs, &(20..100), 8, 4, 10, 2);
        assert_eq!(
            capped
                .iter()
                .map(|w| (w.id, w.context.start))
                .collect::<Vec<_>>(),
            vec![(0, 40), (1, 60)]
        );
    }

    #[test]
    fn top_decile_by_variance() {
        let power: Vec<f64> = (0..200)
            .map(|i| {
                if (100..110).contains(&i) {
                    (i % 2) as f64 * 500.0
                } else {
                    100.0
                }
            })
            .collect();
        let windows: Vec<EvalWindow> = (0..15)
            .map(|k| EvalWindow {
                id: k,
                context: k * 10..k * 10 + 5,
                future: k * 10 + 5..k * 10 + 10,
            })
            .collect();
        let top = high_volatility(&windows, &power);
        // 15 windows → 2 kept; window 10 is the only volatile one, the rest tie and go by id
        assert_eq!(top.iter().map(|w| w.id).collect::<Vec<_>>(), vec![0, 10]);
    }

    #[test]
    fn mixed_provenance_is_refused() {
        let a = Provenance::new("x", 1);
        assert!(check_same_run(&a, &Provenance::new("x", 1), "t").is_ok());
        assert!(matches!(
            check_same_run(&a, &Provenance::new("y", 1), "t"),
            Err(Error::Provenance(_))
        ));
    }

    #[test]
    fn truth_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("truth.csv");
        let power: Vec<f64> = (0..50).map(|i| i as f64 * 1.5).collect();
        let windows = vec![
            EvalWindow {
                id: 0,
                context: 0..5,
                future: 5..8,
            },
            EvalWindow {
                id: 1,
                context: 20..25,
                future: 25..28,
            },
        ];
        write_truth_csv(&path, &windows, &power).unwrap();
        let back = read_truth(&path, 3).unwrap();
        assert_eq!(
            back,
            vec![(0, vec![7.5, 9.0, 10.5]), (1, vec![37.5, 39.0, 40.5])]
        );
    }
}
