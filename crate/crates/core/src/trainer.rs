//! Two-phase MAE training: coupled masking, then all-or-nothing masks
//! alternating between analysis and generation batches.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::TrainingExample;
use crate::error::{Error, Result};
use crate::mae::{LossReport, Mae};
use crate::masking::{all_or_nothing, sample_coupled_mask, Hide, MaskPattern, TokenLayout};
use crate::nn::{all_finite, AdamW, AdamWConfig};
use crate::tokenize::Family;

pub const CHECKPOINT_FILE: &str = "mae.ckpt";
pub const METRICS_CSV: &str = "metrics.csv";
pub const EVENTS_JSONL: &str = "events.jsonl";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LrSchedule {
    Constant,
    /// Cosine decay to `min_lr_ratio * lr` after warmup.
    Cosine,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub steps: usize,
    /// When set, overrides `steps` with `epochs * ceil(examples / batch_size)`.
    pub epochs: Option<usize>,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub clip_norm: Option<f64>,
    pub warmup_steps: usize,
    pub schedule: LrSchedule,
    pub min_lr_ratio: f64,
    /// Share of steps trained with coupled masking.
    pub phase1_fraction: f64,
    pub checkpoint_every: usize,
    pub log_every: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 2000,
            epochs: None,
            batch_size: 8,
            lr: 1e-3,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            clip_norm: Some(1.0),
            warmup_steps: 100,
            schedule: LrSchedule::Cosine,
            min_lr_ratio: 0.05,
            phase1_fraction: 0.8,
            checkpoint_every: 500,
            log_every: 50,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || !(self.lr > 0.0) {
            return Err(Error::Config("batch_size and lr must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.phase1_fraction) {
            return Err(Error::Config("phase1_fraction must lie in [0, 1]".into()));
        }
        if !(0.0..=1.0).contains(&self.min_lr_ratio) || self.weight_decay < 0.0 {
            return Err(Error::Config("min_lr_ratio in [0, 1] and weight_decay >= 0 required".into()));
        }
        Ok(())
    }

    pub fn total_steps(&self, examples: usize) -> usize {
        match self.epochs {
            Some(e) => e * examples.div_ceil(self.batch_size).max(1),
            None => self.steps,
        }
    }

    pub fn phase1_steps(&self, total: usize) -> usize {
        (self.phase1_fraction * total as f64).round() as usize
    }

    pub fn lr_at(&self, step: usize, total: usize) -> f64 {
        if step < self.warmup_steps {
            return self.lr * (step + 1) as f64 / self.warmup_steps as f64;
        }
        match self.schedule {
            LrSchedule::Constant => self.lr,
            LrSchedule::Cosine => {
                let span = total.saturating_sub(self.warmup_steps).max(1);
                let t = ((step - self.warmup_steps) as f64 / span as f64).min(1.0);
                let floor = self.min_lr_ratio * self.lr;
                floor + 0.5 * (self.lr - floor) * (1.0 + (std::f64::consts::PI * t).cos())
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Phase {
    Coupled,
    Analysis,
    Generation,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::Coupled => "coupled",
            Phase::Analysis => "analysis",
            Phase::Generation => "generation",
        }
    }
}

/// Phase of 0-based `step`; the second phase starts with an analysis batch.
pub fn phase_at(step: usize, phase1_steps: usize) -> Phase {
    if step < phase1_steps {
        Phase::Coupled
    } else if (step - phase1_steps).is_multiple_of(2) {
        Phase::Analysis
    } else {
        Phase::Generation
    }
}

pub fn mask_for(phase: Phase, layout: &TokenLayout, rng: &mut ChaCha8Rng) -> MaskPattern {
    match phase {
        Phase::Coupled => sample_coupled_mask(layout, rng),
        Phase::Analysis => all_or_nothing(layout, Hide::Sa),
        Phase::Generation => all_or_nothing(layout, Hide::Ms),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    pub phase: Phase,
    pub lr: f64,
    pub loss: f64,
    pub accuracy: f64,
    pub grad_norm: f64,
    pub family_loss: [Option<f64>; 7],
}

#[derive(Clone, Debug)]
pub struct TrainSummary {
    pub steps: usize,
    pub curve: Vec<StepLog>,
    pub final_loss: f64,
    pub checkpoint: Option<PathBuf>,
}

#[derive(Serialize)]
#[serde(tag = "event", rename_all = "snake_case")]
enum Event<'a> {
    Start {
        config: &'a TrainConfig,
        examples: usize,
        total_steps: usize,
        phase1_steps: usize,
        parameters: usize,
    },
    Log(&'a StepLog),
    Checkpoint { step: usize, path: &'a Path },
    Diverged { step: usize, message: &'a str },
    Done { step: usize, final_loss: f64 },
}

struct Sink {
    csv: csv::Writer<File>,
    events: BufWriter<File>,
}

impl Sink {
    fn open(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let p = dir.join(METRICS_CSV);
        let mut csv = csv::Writer::from_path(&p).map_err(|e| Error::Format(e.to_string()))?;
        let mut header = vec!["step", "phase", "lr", "loss", "accuracy", "grad_norm"]
            .into_iter()
            .map(String::from)
            .collect::<Vec<_>>();
        header.extend(Family::ALL.iter().map(|f| format!("loss_{}", f.name())));
        csv.write_record(&header).map_err(|e| Error::Format(e.to_string()))?;
        let p = dir.join(EVENTS_JSONL);
        let events = BufWriter::new(File::create(&p).map_err(|e| Error::io(&p, e))?);
        Ok(Sink { csv, events })
    }

    fn event(&mut self, e: &Event) -> Result<()> {
        serde_json::to_writer(&mut self.events, e)?;
        writeln!(self.events).and_then(|_| self.events.flush()).map_err(|e| Error::io(EVENTS_JSONL, e))
    }

    fn row(&mut self, s: &StepLog) -> Result<()> {
        let mut rec = vec![
            s.step.to_string(),
            s.phase.name().to_string(),
            format!("{:e}", s.lr),
            s.loss.to_string(),
            s.accuracy.to_string(),
            s.grad_norm.to_string(),
        ];
        rec.extend(s.family_loss.iter().map(|v| v.map(|x| x.to_string()).unwrap_or_default()));
        self.csv.write_record(&rec).map_err(|e| Error::Format(e.to_string()))?;
        self.csv.flush().map_err(|e| Error::io(METRICS_CSV, e))
    }
}

/// Trains `model` in place. With `out_dir`, writes metrics and periodic
/// checkpoints there; a non-finite loss aborts with the last checkpoint path.
pub fn train_mae(
    model: &mut Mae,
    examples: &[TrainingExample],
    cfg: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<TrainSummary> {
    cfg.validate()?;
    if examples.is_empty() {
        return Err(Error::NotEnoughData("no training examples".into()));
    }
    for ex in examples {
        model.vocab.check(&ex.tokens)?;
    }
    let total = cfg.total_steps(examples.len());
    let split = cfg.phase1_steps(total);
    let layout = *model.layout();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = AdamW::<f32>::new(
        AdamWConfig {
            lr: cfg.lr,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: 1e-8,
            weight_decay: cfg.weight_decay,
            clip_norm: cfg.clip_norm,
        },
        model.params.decay_mask(),
    );
    let mut sink = out_dir.map(Sink::open).transpose()?;
    if let Some(s) = sink.as_mut() {
        s.event(&Event::Start {
            config: cfg,
            examples: examples.len(),
            total_steps: total,
            phase1_steps: split,
            parameters: model.params.len(),
        })?;
    }

    let batch = cfg.batch_size.min(examples.len());
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut cursor = examples.len();
    let mut curve = Vec::new();
    let mut window = LossReport::default();
    let mut window_norm = 0.0;
    let mut window_steps = 0usize;
    let mut last_ckpt: Option<PathBuf> = None;
    let mut last_loss = f64::NAN;
    let mut grads = model.params.zeros_like();

    for step in 0..total {
        let phase = phase_at(step, split);
        grads.iter_mut().for_each(|g| *g = 0.0);
        let mut rep = LossReport::default();
        for _ in 0..batch {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            let ex = &examples[order[cursor]];
            cursor += 1;
            let mask = mask_for(phase, &layout, &mut rng);
            let r = model.loss_and_grad(&model.params.data, &mut grads, &ex.tokens, &mask, 1.0 / batch as f64)?;
            rep.merge(&r);
        }
        if !rep.loss.is_finite() || !all_finite(&grads) {
            let message = format!("non-finite loss or gradient at step {step}");
            if let Some(s) = sink.as_mut() {
                s.event(&Event::Diverged { step, message: &message })?;
            }
            return Err(Error::Diverged {
                message,
                last_good: last_ckpt,
            });
        }
        let lr = cfg.lr_at(step, total);
        let norm = opt.step_with_lr(&mut model.params.data, &mut grads, lr);
        last_loss = rep.loss;
        window.merge(&rep);
        window_norm += norm;
        window_steps += 1;

        let done = step + 1 == total;
        if (step + 1) % cfg.log_every.max(1) == 0 || done || step + 1 == split {
            let log = StepLog {
                step: step + 1,
                phase,
                lr,
                loss: window.loss,
                accuracy: window.accuracy(),
                grad_norm: window_norm / window_steps as f64,
                family_loss: Family::ALL.map(|f| window.family_loss(f)),
            };
            log::info!(
                "step {:>6} {:<10} loss {:.4} acc {:.3} lr {:.2e}",
                log.step,
                phase.name(),
                log.loss,
                log.accuracy,
                lr
            );
            if let Some(s) = sink.as_mut() {
                s.row(&log)?;
                s.event(&Event::Log(&log))?;
            }
            curve.push(log);
            window = LossReport::default();
            window_norm = 0.0;
            window_steps = 0;
        }
        if let Some(dir) = out_dir {
            if (cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0) || done {
                let path = dir.join(CHECKPOINT_FILE);
                model.save(&path)?;
                if let Some(s) = sink.as_mut() {
                    s.event(&Event::Checkpoint { step: step + 1, path: &path })?;
                }
                last_ckpt = Some(path);
            }
        }
    }
    if let Some(s) = sink.as_mut() {
        s.event(&Event::Done {
            step: total,
            final_loss: last_loss,
        })?;
    }
    Ok(TrainSummary {
        steps: total,
        curve,
        final_loss: last_loss,
        checkpoint: last_ckpt,
    })
}

/// Masked-entry accuracy of every example with one representation hidden.
pub fn evaluate_direction(model: &Mae, examples: &[TrainingExample], hide: Hide) -> Result<LossReport> {
    let mask = all_or_nothing(model.layout(), hide);
    let mut rep = LossReport::default();
    for ex in examples {
        rep.merge(&model.evaluate(&ex.tokens, &mask)?);
    }
    Ok(rep)
}

/// Reads a TOML training config.
pub fn load_config(path: &Path) -> Result<TrainConfig> {
    let s = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    toml::from_str(&s).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn phases_split_and_alternate() {
        let cfg = TrainConfig::default();
        let split = cfg.phase1_steps(2000);
        assert_eq!(split, 1600);
        assert_eq!(phase_at(1599, split), Phase::Coupled);
        assert_eq!(phase_at(1600, split), Phase::Analysis);
        assert_eq!(phase_at(1601, split), Phase::Generation);
        assert_eq!(phase_at(1602, split), Phase::Analysis);
    }

    #[test]
    fn phase_two_masks_are_all_or_nothing() {
        let layout = TokenLayout::new([200, 50, 50, 50, 50, 50, 50]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for step in 10..30 {
            let m = mask_for(phase_at(step, 10), &layout, &mut rng);
            let ms = m.masked_in(&layout, Family::Ms);
            let sa: usize = Family::ATTRS.iter().map(|&f| m.masked_in(&layout, f)).sum();
            assert!((ms == 200 && sa == 0) || (ms == 0 && sa == 300));
        }
    }

    #[test]
    fn lr_schedule_shape() {
        let cfg = TrainConfig {
            warmup_steps: 10,
            ..Default::default()
        };
        assert!((cfg.lr_at(9, 100) - cfg.lr).abs() < 1e-15);
        assert!(cfg.lr_at(0, 100) < cfg.lr);
        assert!((cfg.lr_at(99, 100) - cfg.lr * cfg.min_lr_ratio).abs() < 1e-5);
        let c = TrainConfig {
            schedule: LrSchedule::Constant,
            ..cfg
        };
        assert_eq!(c.lr_at(50, 100), c.lr);
    }

    #[test]
    fn epochs_override_steps() {
        let cfg = TrainConfig {
            epochs: Some(3),
            batch_size: 4,
            ..Default::default()
        };
        assert_eq!(cfg.total_steps(10), 9);
    }

    #[test]
    fn config_toml_round_trip() {
        let cfg = TrainConfig::default();
        let s = toml::to_string(&cfg).unwrap();
        let back: TrainConfig = toml::from_str(&s).unwrap();
        assert_eq!(cfg, back);
        let partial: TrainConfig = toml::from_str("steps = 10\nschedule = \"constant\"").unwrap();
        assert_eq!(partial.steps, 10);
        assert_eq!(partial.batch_size, 8);
    }
}
