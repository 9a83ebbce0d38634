//! Argument parsing, config resolution and subcommand handlers.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use ancogen::data::{
    build_examples, corpus_mel_frames, fit_tokenizer, generate_synthetic_corpus, ingest_wavs, Corpus, CorpusConfig,
    TokenizerConfig,
};
use ancogen::dsp::wav::{read_wav, write_wav};
use ancogen::evaluation::{run_denoise_eval, run_f0_robustness, run_pitch_shift_eval, F0RobustnessConfig};
use ancogen::inference::{ControlEdit, Pipeline, ResynthConfig, TOKENIZER_FILE, VQVAE_FILE};
use ancogen::io::write_atomic;
use ancogen::mae::{Mae, MaeConfig};
use ancogen::trainer::{evaluate_direction, train_mae, TrainConfig, CHECKPOINT_FILE};
use ancogen::vqvae::{VqVae, VqvaeConfig};

pub const CACHE_ENV: &str = "ANCOGEN_CACHE_DIR";
pub const ANALYSIS_SCHEMA_VERSION: u32 = 1;

#[derive(Parser, Debug)]
#[command(name = "ancogen", version, about = "Speech analysis, attribute control and resynthesis")]
pub struct Cli {
    /// TOML file with optional [corpus], [vqvae], [tokenizer], [mae], [train], [resynth] and [eval] tables.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides every seed in the resolved config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Create or import a corpus.
    #[command(subcommand)]
    Corpus(CorpusCmd),
    /// Train the VQ-VAE (and fit the tokenizer) or the MAE.
    #[command(subcommand)]
    Train(TrainCmd),
    /// Estimate the attribute tracks of a WAV file.
    Analyze {
        wav: PathBuf,
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Analyze, edit attributes and resynthesize.
    Resynth(ResynthArgs),
    /// Run an evaluation experiment.
    #[command(subcommand)]
    Eval(EvalCmd),
}

#[derive(Subcommand, Debug)]
pub enum CorpusCmd {
    /// Synthesize a multi-speaker corpus with degraded mixtures.
    Gen {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        speakers: Option<usize>,
        #[arg(long)]
        utterances: Option<usize>,
        #[arg(long)]
        duration: Option<f64>,
    },
    /// Import WAVs from a `path,speaker` list.
    Ingest {
        #[arg(long)]
        list: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand, Debug)]
pub enum TrainCmd {
    /// Train the VQ-VAE and fit the tokenizer; writes vqvae.ckpt and tokenizer.json.
    Vqvae {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        model_dir: PathBuf,
        #[arg(long)]
        steps: Option<u64>,
    },
    /// Train the MAE on the tokenized corpus; writes mae.ckpt and metrics.
    Mae {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        model_dir: PathBuf,
        #[arg(long)]
        steps: Option<usize>,
        /// Width 32 with two encoder and two decoder blocks.
        #[arg(long)]
        tiny: bool,
    },
}

#[derive(Args, Debug)]
pub struct ModelArgs {
    /// Directory holding tokenizer.json, vqvae.ckpt and mae.ckpt.
    #[arg(long)]
    pub model_dir: PathBuf,
    /// MAE checkpoint; defaults to <model-dir>/mae.ckpt.
    #[arg(long)]
    pub mae: Option<PathBuf>,
}

impl ModelArgs {
    fn load(&self) -> Result<Pipeline> {
        let ckpt = self.mae.clone().unwrap_or_else(|| self.model_dir.join(CHECKPOINT_FILE));
        Pipeline::load(&self.model_dir, &ckpt).with_context(|| format!("loading model from {}", self.model_dir.display()))
    }
}

#[derive(Args, Debug)]
pub struct ResynthArgs {
    pub wav: PathBuf,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Percent change of f0, e.g. +10% or -50.
    #[arg(long, allow_hyphen_values = true, value_parser = parse_percent)]
    pub pitch_shift: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub set_snr: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub set_c50: Option<f64>,
    #[arg(long)]
    pub scale_loudness: Option<f64>,
    #[arg(long)]
    pub set_speaker: Option<u32>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

impl ResynthArgs {
    pub fn edits(&self) -> Vec<ControlEdit> {
        let mut e = Vec::new();
        e.extend(self.pitch_shift.map(ControlEdit::PitchShift));
        e.extend(self.set_snr.map(ControlEdit::SetSnr));
        e.extend(self.set_c50.map(ControlEdit::SetC50));
        e.extend(self.scale_loudness.map(ControlEdit::ScaleLoudness));
        e.extend(self.set_speaker.map(ControlEdit::SetSpeaker));
        e
    }
}

#[derive(Subcommand, Debug)]
pub enum EvalCmd {
    /// f0 error of the model and the autocorrelation tracker across SNR and reverb.
    F0 {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Re-analyzed f0 after pitch-shifted resynthesis.
    PitchShift {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Resynthesis of noisy mixtures with the SNR attribute raised.
    Denoise {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

pub fn parse_percent(s: &str) -> std::result::Result<f64, String> {
    let t = s.trim().trim_end_matches('%');
    t.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| format!("expected a percentage such as +10% or -50, got {s:?}"))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub f0: F0RobustnessConfig,
    /// Percent; a 0 % control row is always added.
    pub shifts: Vec<f64>,
    pub denoise_snr_in: f64,
    pub denoise_target_snr: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            f0: F0RobustnessConfig::default(),
            shifts: vec![50.0, 10.0, -10.0, -50.0],
            denoise_snr_in: 0.0,
            denoise_target_snr: 40.0,
        }
    }
}

/// Every tunable, one table per stage.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub corpus: CorpusConfig,
    pub vqvae: VqvaeConfig,
    pub tokenizer: TokenizerConfig,
    pub mae: MaeConfig,
    pub train: TrainConfig,
    pub resynth: ResynthConfig,
    pub eval: EvalConfig,
}

impl RunConfig {
    pub fn resolve(path: Option<&Path>, seed: Option<u64>) -> Result<Self> {
        let mut c: RunConfig = match path {
            Some(p) => {
                let s = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                toml::from_str(&s).with_context(|| format!("parsing {}", p.display()))?
            }
            None => RunConfig::default(),
        };
        if let Some(s) = seed {
            c.corpus.seed = s;
            c.vqvae.seed = s;
            c.tokenizer.seed = s;
            c.mae.seed = s;
            c.train.seed = s;
            c.resynth.phase_seed = s;
            c.eval.f0.seed = s;
        }
        Ok(c)
    }
}

/// Prints the resolved section of the config to stderr.
fn show<T: Serialize>(name: &str, v: &T) -> Result<()> {
    let mut t = toml::map::Map::new();
    t.insert(name.to_string(), toml::Value::try_from(v)?);
    eprintln!("# resolved config\n{}", toml::to_string(&t)?);
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<()> {
    if let Some(p) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(p).with_context(|| format!("creating {}", p.display()))?;
    }
    write_atomic(path, serde_json::to_string_pretty(v)?.as_bytes())?;
    Ok(())
}

fn cache_dir(model_dir: &Path) -> PathBuf {
    std::env::var_os(CACHE_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| model_dir.join("token_cache"))
}

pub fn run(cli: Cli) -> Result<()> {
    let mut cfg = RunConfig::resolve(cli.config.as_deref(), cli.seed)?;
    match cli.command {
        Command::Corpus(CorpusCmd::Gen {
            out,
            speakers,
            utterances,
            duration,
        }) => {
            if let Some(v) = speakers {
                cfg.corpus.speakers = v;
            }
            if let Some(v) = utterances {
                cfg.corpus.utterances_per_speaker = v;
            }
            if let Some(v) = duration {
                cfg.corpus.duration_secs = v;
            }
            show("corpus", &cfg.corpus)?;
            let c = generate_synthetic_corpus(&out, &cfg.corpus)?;
            println!("wrote {} records to {}", c.records.len(), out.display());
        }
        Command::Corpus(CorpusCmd::Ingest { list, out }) => {
            show("corpus", &cfg.corpus)?;
            let c = ingest_wavs(&list, &out, &cfg.corpus)?;
            println!("wrote {} records to {}", c.records.len(), out.display());
        }
        Command::Train(TrainCmd::Vqvae {
            corpus,
            model_dir,
            steps,
        }) => {
            if let Some(s) = steps {
                cfg.vqvae.steps = s;
            }
            show("vqvae", &cfg.vqvae)?;
            show("tokenizer", &cfg.tokenizer)?;
            let corpus = Corpus::load(&corpus)?;
            fs::create_dir_all(&model_dir).with_context(|| format!("creating {}", model_dir.display()))?;
            let mut vq = VqVae::new(cfg.vqvae.clone())?;
            let log = vq.train(&corpus_mel_frames(&corpus)?)?;
            vq.save(&model_dir.join(VQVAE_FILE))?;
            let segment_frames = corpus
                .records
                .first()
                .and_then(|r| r.segments.first())
                .map(|s| (s[1] - s[0]).div_ceil(ancogen::dsp::HOP))
                .context("corpus has no segments")?;
            let manifest = fit_tokenizer(&corpus, &cfg.tokenizer, segment_frames, cfg.vqvae.f, cfg.vqvae.c)?;
            manifest.save(&model_dir.join(TOKENIZER_FILE))?;
            if let Some(last) = log.last() {
                println!("vqvae: {} steps, final recon {:.5}", log.len(), last.recon_mse);
            }
            println!("wrote {} and {}", VQVAE_FILE, TOKENIZER_FILE);
        }
        Command::Train(TrainCmd::Mae {
            corpus,
            model_dir,
            steps,
            tiny,
        }) => {
            if tiny {
                cfg.mae = MaeConfig {
                    seed: cfg.mae.seed,
                    ..MaeConfig::tiny()
                };
            }
            if let Some(s) = steps {
                cfg.train.steps = s;
                cfg.train.epochs = None;
            }
            show("mae", &cfg.mae)?;
            show("train", &cfg.train)?;
            let corpus = Corpus::load(&corpus)?;
            let manifest = ancogen::tokenize::TokenizerManifest::load(&model_dir.join(TOKENIZER_FILE))?;
            let vq = VqVae::load(&model_dir.join(VQVAE_FILE))?;
            let examples = build_examples(&corpus, &manifest, &vq, Some(&cache_dir(&model_dir)))?;
            let mut mae = Mae::new(cfg.mae.clone(), &manifest)?;
            let summary = train_mae(&mut mae, &examples, &cfg.train, Some(&model_dir))?;
            let sa = evaluate_direction(&mae, &examples, ancogen::masking::Hide::Sa)?;
            let ms = evaluate_direction(&mae, &examples, ancogen::masking::Hide::Ms)?;
            let report = serde_json::json!({
                "steps": summary.steps,
                "final_loss": summary.final_loss,
                "examples": examples.len(),
                "analysis_accuracy": sa.accuracy(),
                "generation_accuracy": ms.accuracy(),
            });
            write_json(&model_dir.join("train_report.json"), &report)?;
            println!(
                "mae: {} steps, loss {:.4}, accuracy analysis {:.4} generation {:.4}",
                summary.steps,
                summary.final_loss,
                sa.accuracy(),
                ms.accuracy()
            );
        }
        Command::Analyze { wav, model, out } => {
            show("resynth", &cfg.resynth)?;
            let p = model.load()?;
            let w = read_wav(&wav)?;
            let a = p.analyze(&w)?;
            let name = p
                .manifest
                .speakers
                .get(a.attrs.speaker as usize - 1)
                .cloned()
                .unwrap_or_default();
            let doc = serde_json::json!({
                "schema_version": ANALYSIS_SCHEMA_VERSION,
                "input": wav.display().to_string(),
                "frame_rate": a.attrs.frame_rate,
                "content_rate": a.attrs.content_rate,
                "tracks": {
                    "content": a.attrs.content,
                    "f0": a.attrs.f0,
                    "loudness": a.attrs.loudness,
                    "speaker": {"label": a.attrs.speaker, "name": name, "segments": a.segment_speakers},
                    "snr": a.attrs.snr,
                    "c50": a.attrs.c50,
                },
            });
            write_json(&out, &doc)?;
            println!("wrote {}", out.display());
        }
        Command::Resynth(args) => {
            show("resynth", &cfg.resynth)?;
            let p = args.model.load()?;
            let w = read_wav(&args.wav)?;
            let edits = args.edits();
            let (y, report) = p.resynthesize(&w, &edits, &cfg.resynth)?;
            write_wav(&args.out, &y)?;
            if let Some(r) = &args.report {
                write_json(r, &report)?;
            }
            match report.f0_check.aae_hz {
                Some(v) => println!("wrote {}; re-analysis f0 AAE {v:.2} Hz", args.out.display()),
                None => println!("wrote {}; no voiced frames to compare", args.out.display()),
            }
        }
        Command::Eval(cmd) => run_eval(cmd, &cfg)?,
    }
    Ok(())
}

fn run_eval(cmd: EvalCmd, cfg: &RunConfig) -> Result<()> {
    match cmd {
        EvalCmd::F0 { model, corpus, out } => {
            show("eval", &cfg.eval)?;
            let p = model.load()?;
            let rows = run_f0_robustness(&p, &Corpus::load(&corpus)?, &cfg.eval.f0, Some(&out))?;
            for r in rows {
                println!(
                    "snr {:>6} reverb {:<5} model {:7.2} Hz  tracker {:7.2} Hz",
                    if r.snr_db >= ancogen::dsp::DB_CLAMP { "clean".into() } else { format!("{}", r.snr_db) },
                    r.reverb,
                    r.model_aae_hz,
                    r.oracle_aae_hz
                );
            }
        }
        EvalCmd::PitchShift { model, corpus, out } => {
            show("eval", &cfg.eval)?;
            show("resynth", &cfg.resynth)?;
            let p = model.load()?;
            let rows = run_pitch_shift_eval(&p, &Corpus::load(&corpus)?, &cfg.eval.shifts, &cfg.resynth, Some(&out))?;
            for r in rows {
                println!("shift {:+6.1}%  AAE {:7.2} Hz  frames {}", r.shift_percent, r.aae_hz, r.frames);
            }
        }
        EvalCmd::Denoise { model, corpus, out } => {
            show("eval", &cfg.eval)?;
            show("resynth", &cfg.resynth)?;
            if !(cfg.eval.denoise_snr_in.is_finite()) {
                bail!("denoise_snr_in must be finite");
            }
            let p = model.load()?;
            let (_, s) = run_denoise_eval(
                &p,
                &Corpus::load(&corpus)?,
                cfg.eval.denoise_snr_in,
                cfg.eval.denoise_target_snr,
                &cfg.resynth,
                cfg.eval.f0.seed,
                Some(&out),
            )?;
            println!(
                "{} utterances: LSD {:.3} -> {:.3}, SI-SDR {:.2} -> {:.2} dB, not worse on {:.0}%",
                s.utterances,
                s.mean_lsd_noisy,
                s.mean_lsd_denoised,
                s.mean_si_sdr_noisy,
                s.mean_si_sdr_denoised,
                100.0 * s.si_sdr_not_worse
            );
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn percent_forms() {
        assert_eq!(parse_percent("+10%").unwrap(), 10.0);
        assert_eq!(parse_percent("-50").unwrap(), -50.0);
        assert!(parse_percent("ten").is_err());
    }

    #[test]
    fn negative_shift_parses() {
        let c = Cli::try_parse_from(["ancogen", "resynth", "a.wav", "--model-dir", "m", "--pitch-shift", "-10%", "--out", "o.wav"]).unwrap();
        match c.command {
            Command::Resynth(a) => assert_eq!(a.edits(), vec![ControlEdit::PitchShift(-10.0)]),
            _ => panic!("wrong subcommand"),
        }
    }

    #[test]
    fn unknown_flag_is_usage_error() {
        let e = Cli::try_parse_from(["ancogen", "analyze", "a.wav", "--bogus"]).unwrap_err();
        assert_eq!(e.exit_code(), 2);
    }

    #[test]
    fn seed_overrides_all_sections() {
        let c = RunConfig::resolve(None, Some(7)).unwrap();
        assert_eq!((c.corpus.seed, c.vqvae.seed, c.mae.seed, c.train.seed), (7, 7, 7, 7));
        assert_eq!(c.eval.shifts, vec![50.0, 10.0, -10.0, -50.0]);
    }

    #[test]
    fn config_round_trips_through_toml() {
        let c = RunConfig::resolve(None, None).unwrap();
        let s = toml::to_string(&c).unwrap();
        let back: RunConfig = toml::from_str(&s).unwrap();
        assert_eq!(back, c);
    }
}
