//! `icegen`: physics-aware wind-power scenario generation under icing.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use icegen::config::RunConfig;
use icegen::data::{load_csv, synth_icing, write_csv, Schema};
use icegen::metrics::EvalReport;
use icegen::model::{load_checkpoint, save_checkpoint, Checkpoint};
use icegen::pipeline::{
    check_same_run, evaluate_sets, fit_envelope_stage, fit_spec_stage, read_truth, run_pipeline,
    run_sensitivity, train_stage, RunDir, TrainInputs,
};
use icegen::power_curve::PhysicsEnvelope;
use icegen::provenance::{derive_seed, file_hash, Artifact, Provenance};
use icegen::sampler::{
    generate, read_scenarios_csv, write_scenarios_csv, Conditioning, ModeRegistry,
};
use icegen::tokenizer::{tokenize, TokenFile, TokenizerSpec};
use icegen::{Error, ErrorClass, Result};

#[derive(Parser)]
#[command(
    name = "icegen",
    version,
    about = "Physics-aware wind-power scenario generation under icing"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigArg {
    /// Run configuration (`section.key = value` lines); defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
}

impl ConfigArg {
    fn load(&self) -> Result<RunConfig> {
        match &self.config {
            Some(p) => RunConfig::load(p),
            None => Ok(RunConfig::default()),
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic SCADA frame with icing events.
    Synth {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        length: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Clean and resample a raw SCADA CSV to one-minute rows.
    Ingest {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Rated power when the file has no `# rated_power_kw=` line.
        #[arg(long)]
        rated_kw: Option<f64>,
    },
    /// Fit the non-icing power curve and ramp limits.
    FitCurve {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit the tokenizer on non-icing rows.
    FitSpec {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Tokenize a frame into `tokens.bin`.
    Tokenize {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the model on icing windows.
    Train {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        tokens: PathBuf,
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        envelope: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Decode scenarios after a context CSV.
    Generate {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        model: PathBuf,
        /// SCADA CSV; with teacher conditioning its last `horizon` rows
        /// supply the future conditioning channels.
        #[arg(long)]
        context: PathBuf,
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        envelope: PathBuf,
        #[arg(long)]
        horizon: Option<usize>,
        #[arg(long)]
        scenarios: Option<usize>,
        #[arg(long)]
        mode: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        temperature: Option<f64>,
        #[arg(long)]
        top_p: Option<f64>,
        #[arg(long)]
        smoothing: Option<usize>,
        /// `teacher` or `persistence`.
        #[arg(long)]
        conditioning: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score scenarios against observed power.
    Evaluate {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        scenarios: PathBuf,
        /// `window_id,step,power_kw` rows, or a SCADA CSV whose last
        /// `horizon` rows are the observation.
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        envelope: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare constraint modes on the most volatile test windows of a run.
    Sensitivity {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        run_dir: PathBuf,
        #[arg(
            long,
            value_delimiter = ',',
            default_value = "unconstrained,default,stricter"
        )]
        modes: Vec<String>,
    },
    /// Print or check a run configuration.
    Config {
        /// Print every key with its default value.
        #[arg(long)]
        defaults: bool,
        /// Validate a configuration file and print its canonical form.
        #[arg(long)]
        check: Option<PathBuf>,
    },
    /// Run every stage end to end.
    Run {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        out: PathBuf,
    },
}

fn read_envelope(path: &Path) -> Result<Artifact<PhysicsEnvelope>> {
    let a: Artifact<PhysicsEnvelope> = Artifact::read(path)?;
    a.body.validate()?;
    Ok(a)
}

fn read_spec(path: &Path) -> Result<Artifact<TokenizerSpec>> {
    let a: Artifact<TokenizerSpec> = Artifact::read(path)?;
    a.body.validate()?;
    Ok(a)
}

fn print_report(r: &EvalReport) {
    println!(
        "{:<14} crps {:.4}  kld {:.4}  vr_strict {:.2}%  vr_relaxed {:.2}%  diversity {:.4}  projection {:.2}%  ({} windows × {} scenarios × {} steps)",
        r.mode, r.crps, r.kld, r.vr_strict, r.vr_relaxed, r.diversity, r.projection_rate, r.windows, r.scenarios, r.horizon
    );
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth {
            config,
            out,
            length,
            seed,
        } => {
            let mut cfg = config.load()?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let frame = synth_icing(
                &cfg.synth,
                length.unwrap_or(cfg.synth_length),
                derive_seed(cfg.seed, "synth"),
            )?;
            write_csv(&frame, &out)?;
            println!("wrote {} rows to {}", frame.len(), out.display());
        }
        Command::Ingest {
            input,
            out,
            rated_kw,
        } => {
            let schema = Schema {
                rated_kw,
                ..Schema::default()
            };
            let (frame, report) = load_csv(&input, &schema)?;
            write_csv(&frame, &out)?;
            println!(
                "{} raw rows → {} minute rows ({} dropped, {} clipped, {} interpolated)",
                report.raw_rows,
                frame.len(),
                report.dropped_rows,
                report.clipped_values,
                report.interpolated_rows
            );
            if !report.missing_channels.is_empty() {
                println!(
                    "missing channels filled with 0: {:?}",
                    report.missing_channels
                );
            }
        }
        Command::FitCurve { config, data, out } => {
            let cfg = config.load()?;
            let (frame, _) = load_csv(&data, &Schema::default())?;
            let env = fit_envelope_stage(&frame, &cfg)?;
            let prov = Provenance::new(cfg.hash(), cfg.seed).with_input("data", file_hash(&data)?);
            Artifact {
                provenance: prov,
                body: env,
            }
            .write(&out)?;
            println!(
                "curve a={:.2} b={:.2} v0={:.3} s={:.3} (rmse {:.2} kW); ramp up {:.2} down {:.2} relaxed {:.2} kW",
                env.curve.a, env.curve.b, env.curve.v0, env.curve.s, env.curve.rmse, env.ramp_up, env.ramp_down, env.ramp_relaxed
            );
        }
        Command::FitSpec { config, data, out } => {
            let cfg = config.load()?;
            let (frame, _) = load_csv(&data, &Schema::default())?;
            let spec = fit_spec_stage(&frame, &cfg)?;
            let prov = Provenance::new(cfg.hash(), cfg.seed).with_input("data", file_hash(&data)?);
            Artifact {
                provenance: prov,
                body: spec.clone(),
            }
            .write(&out)?;
            println!(
                "vocabulary {} tokens over {} channels",
                spec.vocab_size,
                spec.n_channels()
            );
        }
        Command::Tokenize { data, spec, out } => {
            let spec = read_spec(&spec)?.body;
            let (frame, _) = load_csv(&data, &Schema::default())?;
            let file = TokenFile::from_frame(&frame, &spec)?;
            file.write(&out)?;
            println!(
                "wrote {} steps × {} channels to {}",
                file.sequence.steps(),
                spec.n_channels(),
                out.display()
            );
        }
        Command::Train {
            config,
            tokens,
            spec,
            envelope,
            out,
            epochs,
            seed,
        } => {
            let mut cfg = config.load()?;
            if let Some(e) = epochs {
                cfg.train.epochs = e;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            cfg.validate()?;
            let spec_art = read_spec(&spec)?;
            let env_art = read_envelope(&envelope)?;
            check_same_run(
                &env_art.provenance,
                &spec_art.provenance,
                "envelope vs spec",
            )?;
            let tokens = TokenFile::read(&tokens)?;
            let inputs = TrainInputs {
                tokens: &tokens,
                spec: &spec_art.body,
                envelope: &env_art.body,
            };
            let (params, history) = train_stage(&inputs, &cfg)?;
            let ck = Checkpoint {
                params,
                spec_hash: spec_art.body.fingerprint(),
                config_hash: cfg.hash(),
                seed: cfg.seed,
            };
            save_checkpoint(&out, &ck)?;
            for e in &history {
                let val = e.val.map_or("-".into(), |v| format!("{:.4}", v.total));
                println!(
                    "epoch {:>3}  train {:.4}  val {val}",
                    e.epoch, e.train.total
                );
            }
        }
        Command::Generate {
            config,
            model,
            context,
            spec,
            envelope,
            horizon,
            scenarios,
            mode,
            seed,
            temperature,
            top_p,
            smoothing,
            conditioning,
            out,
        } => {
            let cfg = config.load()?;
            let mut decode = cfg.decode.clone();
            decode.seed = seed.unwrap_or_else(|| derive_seed(cfg.seed, "decode"));
            decode.horizon = horizon.unwrap_or(decode.horizon);
            decode.scenarios = scenarios.unwrap_or(decode.scenarios);
            decode.mode = mode.unwrap_or(decode.mode);
            decode.temperature = temperature.unwrap_or(decode.temperature);
            decode.top_p = top_p.unwrap_or(decode.top_p);
            decode.smoothing_window = smoothing.unwrap_or(decode.smoothing_window);
            if let Some(c) = conditioning {
                decode.conditioning = match c.as_str() {
                    "teacher" => Conditioning::Teacher,
                    "persistence" => Conditioning::Persistence,
                    other => {
                        return Err(Error::Validation(format!("unknown conditioning {other:?}")))
                    }
                };
            }
            decode.validate()?;
            let registry = ModeRegistry::builtin();
            registry.get(&decode.mode)?;
            let spec = read_spec(&spec)?.body;
            let env = read_envelope(&envelope)?.body;
            let ck = load_checkpoint(&model)?;
            if ck.spec_hash != spec.fingerprint() {
                return Err(Error::Provenance(
                    "checkpoint was trained with another tokenizer spec".into(),
                ));
            }
            let (frame, _) = load_csv(&context, &Schema::default())?;
            let seq = tokenize(&frame, &spec)?;
            let h = decode.horizon;
            let (ctx, fut) = match decode.conditioning {
                Conditioning::Teacher => {
                    if seq.steps() <= h {
                        return Err(Error::InsufficientData(format!(
                            "context file has {} rows; teacher conditioning needs more than the horizon {h}",
                            seq.steps()
                        )));
                    }
                    (
                        seq.window(0..seq.steps() - h),
                        seq.window(seq.steps() - h..seq.steps()),
                    )
                }
                Conditioning::Persistence => (seq.clone(), seq.window(0..0)),
            };
            let set = generate(&ck.params, &ctx, &fut, &env, &spec, &decode, &registry)?;
            write_scenarios_csv(&out, std::slice::from_ref(&set))?;
            println!(
                "wrote {} scenarios × {h} steps to {}",
                set.scenarios(),
                out.display()
            );
        }
        Command::Evaluate {
            config,
            scenarios,
            truth,
            envelope,
            out,
        } => {
            let cfg = config.load()?;
            let sets = read_scenarios_csv(&scenarios)?;
            let horizon = sets.first().map_or(0, |s| s.horizon());
            let truth_windows = read_truth(&truth, horizon)?;
            let env_art = read_envelope(&envelope)?;
            let report = evaluate_sets(&sets, &truth_windows, &env_art.body, cfg.eval.kld_bins)?;
            let prov = Provenance::new(cfg.hash(), cfg.seed)
                .with_input("scenarios", file_hash(&scenarios)?)
                .with_input("truth", file_hash(&truth)?)
                .with_input("envelope", file_hash(&envelope)?);
            Artifact {
                provenance: prov,
                body: report.clone(),
            }
            .write(&out)?;
            print_report(&report);
        }
        Command::Sensitivity {
            config,
            run_dir,
            modes,
        } => {
            let cfg = config.load()?;
            let names: Vec<&str> = modes.iter().map(String::as_str).collect();
            for r in run_sensitivity(&cfg, &RunDir::new(run_dir), &names)? {
                print_report(&r);
            }
        }
        Command::Config { defaults, check } => match (defaults, check) {
            (_, Some(path)) => print!("{}", RunConfig::load(&path)?.to_text()),
            (true, None) => print!("{}", RunConfig::default().to_text()),
            (false, None) => {
                return Err(Error::Validation("pass --defaults or --check FILE".into()))
            }
        },
        Command::Run { config, out } => {
            let cfg = config.load()?;
            let summary = run_pipeline(&cfg, &RunDir::new(&out))?;
            print_report(&summary.report);
        }
    }
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e.class() {
        ErrorClass::Validation => 2,
        ErrorClass::Data => 3,
        ErrorClass::Training => 4,
        ErrorClass::Decode => 5,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::debug!("{e:?}");
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
