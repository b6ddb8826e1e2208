use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;

use irisswap::gaze::{accuracy, calibrate_and_estimate, precision, PupilObservation};
use irisswap::harness::{
    self, load_report, load_texture, parse_override, run_attack_dir, split_subjects, write_dataset, AttackReport,
    DirRecording, ExperimentConfig, FrameSource, HarnessError,
};
use irisswap::imaging::{load_pgm, save_pgm};
use irisswap::iriscode::{authenticate, encode, GaborParams, IrisTemplate};
use irisswap::liveness::{
    attack_success_rate, majority_vote, predict_windows, train, windows_from_csv, Label, UserPrediction,
};
use irisswap::rubbersheet::{swap_iris, unwrap};
use irisswap::segmentation::{detect_pupil, geometry_to_mask, segment};
use irisswap::synth::AttackMode;

const CONFIG_ENV: &str = "IRISSWAP_CONFIG";

#[derive(Parser)]
#[command(name = "irisswap", version, about = "Iris swap attack and gaze liveness toolkit")]
struct Cli {
    /// Key-value config file; falls back to $IRISSWAP_CONFIG.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one config key, `key=value`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Shorthand for `--set seed=N`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic dataset (victim plus attackers).
    Synth {
        #[arg(long, default_value = "offline")]
        mode: AttackMode,
        #[arg(long)]
        out: PathBuf,
    },
    /// Segment one eye image and print its geometry.
    Segment {
        image: PathBuf,
        #[arg(long)]
        texture_out: Option<PathBuf>,
        #[arg(long)]
        template_out: Option<PathBuf>,
        #[arg(long)]
        mask_out: Option<PathBuf>,
    },
    /// Replace the iris in one image with a victim texture.
    Swap {
        image: PathBuf,
        #[arg(long)]
        victim: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Calibrate and estimate gaze for a recording directory.
    Gaze {
        recording: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare a probe template against an enrolled one.
    Authenticate { probe: PathBuf, enrolled: PathBuf },
    /// Train a liveness model on a window CSV and score the held-out subjects.
    TrainLiveness {
        windows: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        split: u64,
    },
    /// Run the swap over a recording directory.
    Attack {
        recording: PathBuf,
        #[arg(long)]
        mode: AttackMode,
        #[arg(long)]
        victim: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the full attack and liveness experiment.
    Experiment {
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Summarise a report written by `experiment`.
    Report { report: PathBuf },
}

#[derive(Debug)]
struct CliError {
    kind: &'static str,
    message: String,
    code: u8,
}

impl From<HarnessError> for CliError {
    fn from(e: HarnessError) -> Self {
        let code = if matches!(e, HarnessError::Config(_)) { 2 } else { 1 };
        CliError {
            kind: e.kind(),
            message: e.to_string(),
            code,
        }
    }
}

macro_rules! harness_from {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                HarnessError::from(e).into()
            }
        }
    )*};
}
harness_from!(
    irisswap::imaging::ImagingError,
    irisswap::segmentation::SegmentationError,
    irisswap::rubbersheet::RubberSheetError,
    irisswap::iriscode::IrisCodeError,
    irisswap::gaze::GazeError,
    irisswap::liveness::LivenessError,
    std::io::Error,
    serde_json::Error
);

fn load_config(cli: &Cli) -> Result<ExperimentConfig, CliError> {
    let path = cli
        .config
        .clone()
        .or_else(|| std::env::var_os(CONFIG_ENV).map(PathBuf::from));
    let mut overrides = cli
        .set
        .iter()
        .map(|s| parse_override(s))
        .collect::<Result<Vec<_>, _>>()?;
    if let Some(seed) = cli.seed {
        overrides.push(("seed".into(), seed.to_string()));
    }
    Ok(ExperimentConfig::load(path.as_deref(), &overrides)?)
}

fn emit(text: &str) {
    use std::io::Write;
    // a closed pipe (`| head`) is not an error
    let _ = writeln!(std::io::stdout(), "{text}");
}

fn print(value: serde_json::Value) {
    emit(&serde_json::to_string_pretty(&value).expect("json value"));
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let cfg = load_config(cli)?;
    match &cli.command {
        Command::Synth { mode, out } => {
            let m = write_dataset(out, &cfg, *mode)?;
            print(serde_json::to_value(m)?);
        }
        Command::Segment {
            image,
            texture_out,
            template_out,
            mask_out,
        } => {
            let img = load_pgm(image)?;
            let geom = segment(&img, &cfg.segmentation)?;
            if let Some(p) = mask_out {
                save_pgm(&geometry_to_mask(&geom).to_image(), p)?;
            }
            if texture_out.is_some() || template_out.is_some() {
                let tex = unwrap(&img, &geom, cfg.radial_res, cfg.angular_res)?;
                if let Some(p) = texture_out {
                    tex.save(p)?;
                }
                if let Some(p) = template_out {
                    encode(&tex, &GaborParams::default())?.save(p)?;
                }
            }
            print(serde_json::to_value(geom)?);
        }
        Command::Swap { image, victim, out } => {
            let img = load_pgm(image)?;
            let geom = segment(&img, &cfg.segmentation)?;
            let res = swap_iris(&img, &geom, &load_texture(victim)?, &cfg.swap)?;
            save_pgm(&res.image, out)?;
            print(json!({ "written": res.written, "fallback": res.fallback }));
        }
        Command::Gaze { recording, out } => {
            let rec = DirRecording::open(recording)?;
            let mut track = Vec::with_capacity(rec.len());
            let mut skipped = 0usize;
            for i in 0..rec.len() {
                match rec.frame(i).and_then(|f| Ok(detect_pupil(&f, &cfg.segmentation)?)) {
                    Ok(c) => track.push(PupilObservation {
                        t: rec.timestamp(i),
                        center: c.center,
                    }),
                    Err(e) => {
                        log::warn!("frame {i}: {e}");
                        skipped += 1;
                    }
                }
            }
            let (_, trace) = calibrate_and_estimate(&track, rec.schedule())?;
            trace.save(out)?;
            print(json!({
                "samples": trace.len(),
                "skipped": skipped,
                "accuracy": accuracy(&trace, rec.schedule())?,
                "precision": precision(&trace, rec.schedule())?,
            }));
        }
        Command::Authenticate { probe, enrolled } => {
            let res = authenticate(
                &IrisTemplate::load(probe)?,
                &IrisTemplate::load(enrolled)?,
                cfg.hd_threshold,
                cfg.hd_max_shift,
            )?;
            print(serde_json::to_value(res)?);
        }
        Command::TrainLiveness { windows, out, split } => {
            let ws = windows_from_csv(&std::fs::read_to_string(windows)?)?;
            let mut ids: Vec<u32> = ws.iter().map(|w| w.subject).collect();
            ids.sort_unstable();
            ids.dedup();
            let plan = split_subjects(&ids, cfg.seed ^ split)?;
            let trained = train(&ws, &plan, &cfg.train, plan.seed)?;
            trained.model.save(out)?;
            let test: Vec<_> = ws.iter().filter(|w| plan.test.contains(&w.subject)).cloned().collect();
            let preds = predict_windows(&trained.model, &test, 0.5)?;
            let mut users = Vec::new();
            for &s in &plan.test {
                for label in [Label::Real, Label::Spoof] {
                    let votes: Vec<Label> = preds
                        .iter()
                        .filter(|p| p.subject == s && p.label == label)
                        .map(|p| p.predicted)
                        .collect();
                    if !votes.is_empty() {
                        users.push(UserPrediction {
                            subject: s,
                            label,
                            predicted: majority_vote(&votes)?,
                        });
                    }
                }
            }
            let correct = preds.iter().filter(|p| p.label == p.predicted).count();
            let asr = attack_success_rate(&preds, &users).ok();
            print(json!({
                "plan": plan,
                "best_epoch": trained.best_epoch,
                "test_accuracy": correct as f64 / preds.len().max(1) as f64,
                "asr_window": asr.map(|a| a.window),
                "asr_user": asr.map(|a| a.user),
            }));
        }
        Command::Attack {
            recording,
            mode,
            victim,
            out,
        } => {
            let run = run_attack_dir(recording, victim, *mode, &cfg, out)?;
            print(json!({
                "subject": run.subject,
                "mode": run.mode,
                "frames": run.frames,
                "kept": run.kept.len(),
                "skipped": run.skipped_frames(),
                "rate_factor": run.rate_factor,
                "unswapped_accuracy": run.unswapped.accuracy,
                "swapped_accuracy": run.swapped.accuracy,
                "spoofed_digest": run.spoofed_digest,
            }));
        }
        Command::Experiment { out } => {
            let mut cfg = cfg;
            if let Some(o) = out {
                cfg = ExperimentConfig::load(
                    None,
                    &cfg.values()
                        .iter()
                        .map(|(k, v)| (k.clone(), v.clone()))
                        .chain([("output_dir".to_string(), o.display().to_string())])
                        .collect::<Vec<_>>(),
                )?;
            }
            let report = harness::run_experiment(&cfg)?;
            emit(&summary(&report));
        }
        Command::Report { report } => {
            emit(&summary(&load_report(report)?));
        }
    }
    Ok(())
}

fn pm(s: &harness::Stat) -> String {
    format!("{:.3} ± {:.3} (n={})", s.mean, s.std, s.n)
}

fn summary(r: &AttackReport) -> String {
    let mut out = format!("seed {} config {}\n", r.seed, &r.config_hash[..12]);
    for m in &r.modes {
        out += &format!(
            "{}\n  HD                 {}\n  authenticated      {}/{}\n  accuracy unswapped {}\n  accuracy swapped   {}\n  precision unswapped {}\n  precision swapped  {}\n  rate factor        {}\n  ASR window         {}\n  ASR user           {}\n  static ASR user    {}\n  static detection   {}\n",
            m.mode.as_str(),
            pm(&m.hd),
            m.authenticated,
            m.subjects.len(),
            pm(&m.unswapped_accuracy),
            pm(&m.swapped_accuracy),
            pm(&m.unswapped_precision),
            pm(&m.swapped_precision),
            pm(&m.rate_factor),
            pm(&m.asr_window),
            pm(&m.asr_user),
            pm(&m.static_baseline.asr_user),
            pm(&m.static_baseline.detection_rate),
        );
    }
    out.pop();
    out
}

fn fail(e: &CliError) -> ExitCode {
    eprintln!("{}", json!({ "error": e.kind, "message": e.message }));
    ExitCode::from(e.code)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let kind = match e.kind() {
                ErrorKind::InvalidSubcommand => "UnknownSubcommand",
                ErrorKind::MissingSubcommand | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => "MissingSubcommand",
                _ => "UsageError",
            };
            let message = e.to_string();
            let message = message.lines().next().unwrap_or_default().trim_start_matches("error: ");
            return fail(&CliError {
                kind,
                message: message.to_string(),
                code: 2,
            });
        }
    };
    env_logger::Builder::new()
        .filter_level(if cli.verbose { log::LevelFilter::Info } else { log::LevelFilter::Warn })
        .parse_default_env()
        .init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(&e),
    }
}
