//! Alternating critic/generator training with Adam.
//!
//! One epoch is one pass over the shuffled dataset, one real batch per critic
//! step; a generator step follows every `n_critic` critic steps (the counter
//! runs across epoch boundaries). Each step records one row in the
//! [`RunRecord`]; one `metrics` row per epoch carries the continuity probe and,
//! on schedule, distribution metrics.

use std::io::{Read, Write};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Mode, Tensor};
use crate::constraints::{
    continuity_probe, gradient_penalty, mean_var, mix_coefficients, mixup, topological_consistency_with,
    weight_clip, BoundDiscriminator, ConstraintKind, ConstraintSpec, MixOrder, ProbeStats, TcSample,
};
use crate::data::{sample_synthetic, sample_with, SyntheticKind, SyntheticSpec};
use crate::error::{Error, Result};
use crate::metrics::{
    confidence_map, frechet_distance_2d, mode_coverage, weight_histogram, Bounds, ConfidenceMap, LayerHistogram,
};
use crate::nn::{Discriminator, DiscriminatorConfig, Generator, GeneratorConfig, InitScheme, Module};
use crate::objectives::{generator_loss, losses, realness, GeneratorForm, ObjectiveKind, ObjectiveSpec, Pivot};
use crate::optim::{decayed_lr, Adam, AdamConfig};
use crate::par::Execution;
use crate::rng::{self, RunRng, Stream};

/// What gets measured, and when.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Schedule {
    /// Fréchet distance and mode coverage every this many epochs (and at the
    /// first and last epoch).
    pub metrics_every: usize,
    pub eval_samples: usize,
    pub probe_trials: usize,
    pub probe_batch: usize,
    /// Epochs (counted as completed epochs; 0 = before training) at which a
    /// confidence map is taken.
    pub confmap_epochs: Vec<usize>,
    pub confmap_resolution: usize,
    pub confmap_half_width: f64,
    pub hist_bins: usize,
}

impl Default for Schedule {
    fn default() -> Self {
        Self {
            metrics_every: 10,
            eval_samples: 2000,
            probe_trials: 8,
            probe_batch: 256,
            confmap_epochs: vec![0, 100, 500],
            confmap_resolution: 100,
            confmap_half_width: 3.0,
            hist_bins: 50,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub n_critic: usize,
    pub lr: f64,
    /// Multiplicative decay applied every `lr_decay_period` epochs.
    pub lr_decay: f64,
    pub lr_decay_period: usize,
    pub adam: AdamConfig,
    pub objective: ObjectiveKind,
    pub generator_form: GeneratorForm,
    pub constraint: ConstraintSpec,
    pub generator: GeneratorConfig,
    pub discriminator: DiscriminatorConfig,
    /// Largest tolerated fraction of skipped (non-finite) steps.
    pub max_skip_frac: f64,
    pub schedule: Schedule,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            epochs: 500,
            batch_size: 256,
            n_critic: 3,
            lr: 1e-4,
            lr_decay: 0.9,
            lr_decay_period: 50,
            adam: AdamConfig::default(),
            objective: ObjectiveKind::MafE,
            generator_form: GeneratorForm::NonSaturating,
            constraint: ConstraintSpec::of(ConstraintKind::Tc),
            generator: GeneratorConfig::default(),
            discriminator: DiscriminatorConfig::default(),
            max_skip_frac: 0.01,
            schedule: Schedule::default(),
        }
    }
}

impl TrainConfig {
    pub fn violations(&self, prefix: &str) -> Vec<String> {
        let mut out = Vec::new();
        let mut need = |ok: bool, msg: String| {
            if !ok {
                out.push(format!("{prefix}{msg}"));
            }
        };
        need(self.n_critic >= 1, format!("n_critic: must be ≥ 1, got {}", self.n_critic));
        need(self.batch_size >= 2, format!("batch_size: must be ≥ 2, got {}", self.batch_size));
        need(self.lr > 0.0 && self.lr.is_finite(), format!("lr: must be positive, got {}", self.lr));
        need(
            self.lr_decay > 0.0 && self.lr_decay <= 1.0,
            format!("lr_decay: must lie in (0, 1], got {}", self.lr_decay),
        );
        if let Err(e) = self.adam.validate() {
            need(false, format!("adam: {e}"));
        }
        need(
            (0.0..=1.0).contains(&self.max_skip_frac),
            format!("max_skip_frac: must lie in [0, 1], got {}", self.max_skip_frac),
        );
        let m = self.discriminator.embed_dim;
        need(m >= 1, "discriminator.embed_dim: must be ≥ 1".into());
        need(
            !self.objective.requires_scalar() || m == 1,
            format!("discriminator.embed_dim: objective `{}` needs 1, got {m}", self.objective),
        );
        need(self.discriminator.pieces >= 2, format!("discriminator.pieces: must be ≥ 2, got {}", self.discriminator.pieces));
        need(self.discriminator.hidden >= 1, "discriminator.hidden: must be ≥ 1".into());
        need(self.discriminator.in_dim == 2, format!("discriminator.in_dim: data is 2D, got {}", self.discriminator.in_dim));
        need(self.generator.out_dim == 2, format!("generator.out_dim: data is 2D, got {}", self.generator.out_dim));
        need(self.generator.z_dim >= 1 && self.generator.hidden >= 1, "generator: widths must be ≥ 1".into());
        let s = &self.schedule;
        need(s.metrics_every >= 1, "schedule.metrics_every: must be ≥ 1".into());
        need(s.eval_samples >= 3, "schedule.eval_samples: must be ≥ 3".into());
        need(s.probe_trials >= 1, "schedule.probe_trials: must be ≥ 1".into());
        need(s.probe_batch >= 1, "schedule.probe_batch: must be ≥ 1".into());
        need(s.confmap_resolution >= 1, "schedule.confmap_resolution: must be ≥ 1".into());
        need(s.confmap_half_width > 0.0, "schedule.confmap_half_width: must be positive".into());
        need(s.hist_bins >= 1, "schedule.hist_bins: must be ≥ 1".into());
        out.extend(self.constraint.violations(&format!("{prefix}constraint.")));
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RowKind {
    Critic,
    Generator,
    Metrics,
}

/// One record line. Fields that do not apply to a row kind are empty.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecordRow {
    pub step: u64,
    pub epoch: usize,
    pub kind: RowKind,
    pub lr: f64,
    pub d_loss: Option<f64>,
    pub g_loss: Option<f64>,
    /// `D_TC` or gradient penalty value of a critic step.
    pub constraint: Option<f64>,
    pub skipped: bool,
    pub probe_mean: Option<f64>,
    pub probe_var: Option<f64>,
    pub frechet: Option<f64>,
    pub modes_covered: Option<usize>,
}

impl RecordRow {
    fn new(step: u64, epoch: usize, kind: RowKind, lr: f64) -> Self {
        Self {
            step,
            epoch,
            kind,
            lr,
            d_loss: None,
            g_loss: None,
            constraint: None,
            skipped: false,
            probe_mean: None,
            probe_var: None,
            frechet: None,
            modes_covered: None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunRecord {
    pub rows: Vec<RecordRow>,
}

impl RunRecord {
    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        if self.rows.is_empty() {
            out.write_record([
                "step", "epoch", "kind", "lr", "d_loss", "g_loss", "constraint", "skipped", "probe_mean",
                "probe_var", "frechet", "modes_covered",
            ])?;
        }
        for r in &self.rows {
            out.serialize(r)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_csv(r: impl Read) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        let rows = rd.deserialize().collect::<std::result::Result<Vec<RecordRow>, _>>()?;
        Ok(Self { rows })
    }

    pub fn of_kind(&self, kind: RowKind) -> impl Iterator<Item = &RecordRow> {
        self.rows.iter().filter(move |r| r.kind == kind)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "kebab-case")]
pub enum RunStatus {
    Complete,
    Aborted { reason: String },
    TooManySkips { skipped: u64, steps: u64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub seed: u64,
    pub status: RunStatus,
    pub epochs_completed: usize,
    pub critic_steps: u64,
    pub generator_steps: u64,
    pub skipped_steps: u64,
    pub final_frechet: Option<f64>,
    pub best_frechet: Option<f64>,
    pub final_modes_covered: Option<usize>,
    pub final_d_loss: Option<f64>,
    pub final_g_loss: Option<f64>,
    pub probe_mean_final: Option<f64>,
    /// Mean over epochs of the per-epoch probe means.
    pub probe_mean_overall: Option<f64>,
    /// Variance over epochs of the per-epoch probe means.
    pub probe_variance_across_epochs: Option<f64>,
    pub max_abs_d_weight: f64,
    pub version: String,
}

impl RunSummary {
    pub fn is_complete(&self) -> bool {
        self.status == RunStatus::Complete
    }
}

/// Wall-clock per phase; kept apart from the record so records stay
/// byte-reproducible.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub critic_secs: f64,
    pub generator_secs: f64,
    pub eval_secs: f64,
    pub critic_steps: u64,
    pub generator_steps: u64,
}

impl Timing {
    pub fn per_critic_step(&self) -> f64 {
        self.critic_secs / self.critic_steps.max(1) as f64
    }
}

pub struct RunOutcome {
    pub generator: Generator,
    pub discriminator: Discriminator,
    pub objective: ObjectiveSpec,
    pub record: RunRecord,
    pub summary: RunSummary,
    pub confmaps: Vec<(usize, ConfidenceMap)>,
    pub histograms: Vec<LayerHistogram>,
    pub timing: Timing,
}

/// Result of one optimizer step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepResult {
    pub loss: f64,
    pub constraint: Option<f64>,
    pub skipped: bool,
}

struct Streams {
    data: RunRng,
    latent: RunRng,
    mix: RunRng,
    perturb: RunRng,
    probe: RunRng,
}

/// Mutable training state for one seed.
pub struct Trainer {
    pub cfg: TrainConfig,
    pub data_spec: SyntheticSpec,
    pub generator: Generator,
    pub discriminator: Discriminator,
    pub objective: ObjectiveSpec,
    data: Tensor,
    g_opt: Adam,
    d_opt: Adam,
    rngs: Streams,
    eval_real: Tensor,
    eval_z: Tensor,
    pub record: RunRecord,
    pub timing: Timing,
    step: u64,
    critic_steps: u64,
    generator_steps: u64,
    skipped: u64,
    epoch: usize,
    lr: f64,
    probe_means: Vec<f64>,
}

fn gaussian(rng: &mut impl Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.sample(StandardNormal)).collect())
        .expect("positive dims")
}

fn gather_rows(x: &Tensor, idx: &[usize]) -> Tensor {
    let c = x.cols();
    let mut data = Vec::with_capacity(idx.len() * c);
    for &i in idx {
        data.extend_from_slice(x.row(i));
    }
    Tensor::matrix(idx.len(), c, data).expect("non-empty batch")
}

impl Trainer {
    pub fn new(cfg: TrainConfig, data_spec: SyntheticSpec) -> Result<Self> {
        let mut problems = cfg.violations("");
        problems.extend(data_spec.violations("data."));
        if data_spec.count < cfg.batch_size {
            problems.push(format!(
                "data.count: {} points cannot fill one batch of {}",
                data_spec.count, cfg.batch_size
            ));
        }
        if !problems.is_empty() {
            return Err(Error::Validation(problems));
        }
        let seed = cfg.seed;
        let data = sample_synthetic(&data_spec, seed, data_spec.count)?;
        let generator = Generator::new(cfg.generator, InitScheme::Uniform, &mut rng::stream(seed, Stream::GeneratorInit));
        let discriminator = Discriminator::new(
            cfg.discriminator,
            InitScheme::Uniform,
            &mut rng::stream(seed, Stream::DiscriminatorInit),
        )?;
        let mut objective = ObjectiveSpec::new(cfg.objective, cfg.discriminator.embed_dim)?;
        objective.generator_form = cfg.generator_form;
        if let Some(p) = objective.pivot_mut() {
            let warmup = data.slice_rows(0, cfg.batch_size);
            *p = Pivot::from_embeddings(&discriminator.embed_points(&warmup)?);
        }
        let mut d_params = discriminator.params();
        if let Some(p) = objective.pivot() {
            d_params.push(&p.w);
        }
        let d_opt = Adam::new(cfg.adam, &d_params);
        let g_opt = Adam::new(cfg.adam, &generator.params());
        let mut eval_rng = rng::stream(seed, Stream::Eval);
        let eval_real = sample_with(&data_spec, &mut eval_rng, cfg.schedule.eval_samples)?;
        let eval_z = gaussian(&mut eval_rng, cfg.schedule.eval_samples, cfg.generator.z_dim);
        Ok(Self {
            lr: cfg.lr,
            data_spec,
            generator,
            discriminator,
            objective,
            data,
            g_opt,
            d_opt,
            rngs: Streams {
                data: rng::stream(seed, Stream::Data),
                latent: rng::stream(seed, Stream::Latent),
                mix: rng::stream(seed, Stream::Mix),
                perturb: rng::stream(seed, Stream::Perturb),
                probe: rng::stream(seed, Stream::Probe),
            },
            eval_real,
            eval_z,
            record: RunRecord::default(),
            timing: Timing::default(),
            step: 0,
            critic_steps: 0,
            generator_steps: 0,
            skipped: 0,
            epoch: 0,
            probe_means: Vec::new(),
            cfg,
        })
    }

    pub fn data(&self) -> &Tensor {
        &self.data
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn current_lr(&self) -> f64 {
        self.lr
    }

    fn latent(&mut self, b: usize) -> Tensor {
        gaussian(&mut self.rngs.latent, b, self.cfg.generator.z_dim)
    }

    /// One discriminator update on `real`. Numerical failures skip the
    /// update (parameters untouched) and are reported, not raised.
    pub fn critic_step(&mut self, real: &Tensor) -> Result<StepResult> {
        let started = Instant::now();
        let b = real.rows();
        let z = self.latent(b);
        let fakes = self.generator.sample(&z, Mode::Train)?;
        let spec = self.cfg.constraint;
        let tc_sample = (spec.kind == ConstraintKind::Tc)
            .then(|| TcSample::draw(b, spec.delta_std, &mut self.rngs.mix, &mut self.rngs.perturb));
        let gp_eps = (spec.kind == ConstraintKind::Gp).then(|| mix_coefficients(&mut self.rngs.mix, b));

        let attempt = (|| -> Result<(f64, Option<f64>, Vec<Tensor>)> {
            let d = &self.discriminator;
            let objective = &self.objective;
            let mut g = Graph::new();
            let dv = d.bind(&mut g, true);
            let wv = objective.pivot().map(|p| g.param(p.w.clone()));
            let xr = g.constant(real.clone());
            let xg = g.constant(fakes.clone());
            let vr = d.forward(&mut g, &dv, xr)?;
            let vg = d.forward(&mut g, &dv, xg)?;
            let pair = losses(&mut g, vr, vg, objective, wv)?;
            let adv = g.scale(pair.d_loss, spec.k);
            let (total, cval) = if let Some(sample) = &tc_sample {
                let bound = BoundDiscriminator { net: d, vars: &dv, layer: Discriminator::DEPTH - 1 };
                let tc = topological_consistency_with(
                    &mut g, &bound, xr, xg, vr, vg, sample, spec.tc_metric, MixOrder::Consistent,
                )?;
                let w = g.scale(tc, spec.lambda_tc);
                (g.add(adv, w)?, Some(g.value(tc).item()?))
            } else if let Some(eps) = &gp_eps {
                let x_hat = g.constant(mixup(real, &fakes, eps)?);
                let pen = gradient_penalty(
                    &mut g,
                    |g, x| {
                        let v = d.forward(g, &dv, x)?;
                        realness(g, v, objective, wv)
                    },
                    x_hat,
                )?;
                let w = g.scale(pen, spec.lambda_gp);
                (g.add(adv, w)?, Some(g.value(pen).item()?))
            } else {
                (adv, None)
            };
            let loss = g.value(pair.d_loss).item()?;
            if !g.value(total).item()?.is_finite() {
                return Err(Error::Numerical("non-finite critic loss".into()));
            }
            g.backward(total)?;
            let mut grads = d.grads(&g, &dv);
            if let (Some(w), Some(p)) = (wv, objective.pivot()) {
                grads.push(g.grad(w).cloned().unwrap_or_else(|| Tensor::zeros(1, p.w.cols())));
            }
            Ok((loss, cval, grads))
        })();

        let result = match attempt.and_then(|(loss, cval, grads)| {
            let mut params = self.discriminator.params_mut();
            if let Some(p) = self.objective.pivot_mut() {
                params.push(&mut p.w);
            }
            self.d_opt.step(&mut params, &grads, self.lr)?;
            Ok((loss, cval))
        }) {
            Ok((loss, constraint)) => {
                if spec.kind == ConstraintKind::Clip {
                    weight_clip(&mut self.discriminator, spec.c);
                }
                if self.objective.pivot().is_some_and(|p| p.norm() < Pivot::MIN_NORM) {
                    let fallback = self.discriminator.embed_points(real)?;
                    if let Some(p) = self.objective.pivot_mut() {
                        p.ensure_nonzero(&fallback);
                    }
                }
                StepResult { loss, constraint, skipped: false }
            }
            Err(Error::Numerical(_)) => StepResult { loss: f64::NAN, constraint: None, skipped: true },
            Err(e) => return Err(e),
        };

        self.step += 1;
        self.critic_steps += 1;
        self.skipped += result.skipped as u64;
        let mut row = RecordRow::new(self.step, self.epoch, RowKind::Critic, self.lr);
        row.skipped = result.skipped;
        if !result.skipped {
            row.d_loss = Some(result.loss);
            row.constraint = result.constraint;
        }
        self.record.rows.push(row);
        self.timing.critic_secs += started.elapsed().as_secs_f64();
        self.timing.critic_steps += 1;
        Ok(result)
    }

    /// One generator update with the discriminator (and pivot) frozen.
    pub fn generator_step(&mut self) -> Result<StepResult> {
        let started = Instant::now();
        let b = self.cfg.batch_size;
        let z = self.latent(b);
        let k = self.cfg.constraint.k;

        let attempt = (|| -> Result<(f64, Vec<Tensor>, Vec<crate::autodiff::BatchStats>)> {
            let mut g = Graph::new();
            let gv = self.generator.bind(&mut g, true);
            let dv = self.discriminator.bind(&mut g, false);
            let wv = self.objective.pivot().map(|p| g.constant(p.w.clone()));
            let zv = g.constant(z);
            let out = self.generator.forward(&mut g, &gv, zv, Mode::Train)?;
            let v = self.discriminator.forward(&mut g, &dv, out.samples)?;
            let gl = generator_loss(&mut g, v, &self.objective, wv)?;
            let loss = g.value(gl).item()?;
            if !loss.is_finite() {
                return Err(Error::Numerical("non-finite generator loss".into()));
            }
            let scaled = g.scale(gl, k);
            g.backward(scaled)?;
            Ok((loss, self.generator.grads(&g, &gv), out.stats))
        })();

        let result = match attempt.and_then(|(loss, grads, stats)| {
            self.g_opt.step(&mut self.generator.params_mut(), &grads, self.lr)?;
            Ok((loss, stats))
        }) {
            Ok((loss, stats)) => {
                self.generator.update_running_stats(&stats, b);
                StepResult { loss, constraint: None, skipped: false }
            }
            Err(Error::Numerical(_)) => StepResult { loss: f64::NAN, constraint: None, skipped: true },
            Err(e) => return Err(e),
        };

        self.step += 1;
        self.generator_steps += 1;
        self.skipped += result.skipped as u64;
        let mut row = RecordRow::new(self.step, self.epoch, RowKind::Generator, self.lr);
        row.skipped = result.skipped;
        if !result.skipped {
            row.g_loss = Some(result.loss);
        }
        self.record.rows.push(row);
        self.timing.generator_secs += started.elapsed().as_secs_f64();
        self.timing.generator_steps += 1;
        Ok(result)
    }

    /// One pass over the shuffled data (the trailing partial batch is dropped).
    pub fn run_epoch(&mut self) -> Result<()> {
        self.lr = decayed_lr(self.cfg.lr, self.cfg.lr_decay, self.cfg.lr_decay_period, self.epoch);
        let n = self.data.rows();
        let b = self.cfg.batch_size;
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut self.rngs.data);
        for chunk in order.chunks_exact(b) {
            let real = gather_rows(&self.data, chunk);
            self.critic_step(&real)?;
            if self.critic_steps.is_multiple_of(self.cfg.n_critic as u64) {
                self.generator_step()?;
            }
        }
        self.epoch += 1;
        Ok(())
    }

    pub fn probe(&mut self) -> Result<ProbeStats> {
        let n = self.data.rows();
        let pb = self.cfg.schedule.probe_batch.min(n);
        let idx: Vec<usize> = (0..pb).map(|_| self.rngs.probe.random_range(0..n)).collect();
        let x_r = gather_rows(&self.data, &idx);
        let z = gaussian(&mut self.rngs.probe, pb, self.cfg.generator.z_dim);
        let x_g = self.generator.sample(&z, Mode::Eval)?;
        continuity_probe(
            &self.discriminator,
            &x_r,
            &x_g,
            self.cfg.constraint.probe_layer,
            self.cfg.schedule.probe_trials,
            &mut self.rngs.probe,
        )
    }

    /// Generator samples on the fixed evaluation codes.
    pub fn eval_samples(&self) -> Result<Tensor> {
        self.generator.sample(&self.eval_z, Mode::Eval)
    }

    /// Fréchet distance to held-out real points and (grid data) mode coverage.
    pub fn distribution_metrics(&self) -> Result<(f64, Option<usize>)> {
        let fake = self.eval_samples()?;
        if !fake.is_finite() {
            return Err(Error::Evaluation("generator produced non-finite samples".into()));
        }
        let fd = frechet_distance_2d(&fake, &self.eval_real)?;
        let modes = (self.data_spec.kind == SyntheticKind::GaussianGrid).then(|| {
            mode_coverage(&fake, &self.data_spec.centers(), 3.0 * self.data_spec.sigma, 0.01).covered
        });
        Ok((fd, modes))
    }

    pub fn confidence_map(&self) -> Result<ConfidenceMap> {
        let s = &self.cfg.schedule;
        confidence_map(
            &self.discriminator,
            &self.objective,
            Bounds::square(s.confmap_half_width),
            s.confmap_resolution,
            Execution::default(),
        )
    }

    fn metrics_row(&mut self, probe: Option<ProbeStats>) -> Result<()> {
        let started = Instant::now();
        let e = self.epoch;
        let scheduled = e == 0 || e == self.cfg.epochs || e.is_multiple_of(self.cfg.schedule.metrics_every);
        let mut row = RecordRow::new(self.step, e, RowKind::Metrics, self.lr);
        if let Some(p) = probe {
            row.probe_mean = Some(p.mean);
            row.probe_var = Some(p.variance);
        }
        if scheduled {
            let (fd, modes) = self.distribution_metrics()?;
            row.frechet = Some(fd);
            row.modes_covered = modes;
        }
        self.record.rows.push(row);
        self.timing.eval_secs += started.elapsed().as_secs_f64();
        Ok(())
    }

    fn summary(&self, status: RunStatus) -> RunSummary {
        let last = |f: fn(&RecordRow) -> Option<f64>| self.record.rows.iter().rev().find_map(f);
        let frechets: Vec<f64> = self.record.rows.iter().filter_map(|r| r.frechet).collect();
        let (probe_mean_overall, probe_var) = if self.probe_means.is_empty() {
            (None, None)
        } else {
            let (m, v) = mean_var(&self.probe_means);
            (Some(m), Some(v))
        };
        RunSummary {
            seed: self.cfg.seed,
            status,
            epochs_completed: self.epoch,
            critic_steps: self.critic_steps,
            generator_steps: self.generator_steps,
            skipped_steps: self.skipped,
            final_frechet: frechets.last().copied(),
            best_frechet: frechets.iter().copied().reduce(f64::min),
            final_modes_covered: self.record.rows.iter().rev().find_map(|r| r.modes_covered),
            final_d_loss: last(|r| r.d_loss),
            final_g_loss: last(|r| r.g_loss),
            probe_mean_final: self.probe_means.last().copied(),
            probe_mean_overall,
            probe_variance_across_epochs: probe_var,
            max_abs_d_weight: self
                .discriminator
                .params()
                .iter()
                .flat_map(|t| t.data().iter())
                .fold(0.0f64, |a, w| a.max(w.abs())),
            version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }

    /// Runs every configured epoch. Errors after setup abort the run but
    /// still return the partial record, marked in the summary.
    pub fn run(mut self) -> RunOutcome {
        let mut confmaps = Vec::new();
        let outcome = (|| -> Result<()> {
            self.metrics_row(None)?;
            if self.cfg.schedule.confmap_epochs.contains(&0) {
                confmaps.push((0, self.confidence_map()?));
            }
            while self.epoch < self.cfg.epochs {
                self.run_epoch()?;
                let p = self.probe()?;
                self.probe_means.push(p.mean);
                self.metrics_row(Some(p))?;
                if self.cfg.schedule.confmap_epochs.contains(&self.epoch) {
                    confmaps.push((self.epoch, self.confidence_map()?));
                }
            }
            Ok(())
        })();
        let steps = self.critic_steps + self.generator_steps;
        let status = match outcome {
            Err(e) => RunStatus::Aborted { reason: e.to_string() },
            Ok(()) if self.skipped as f64 > self.cfg.max_skip_frac * steps as f64 => RunStatus::TooManySkips {
                skipped: self.skipped,
                steps,
            },
            Ok(()) => RunStatus::Complete,
        };
        let summary = self.summary(status);
        let histograms = weight_histogram(&self.discriminator, self.cfg.schedule.hist_bins).unwrap_or_default();
        RunOutcome {
            generator: self.generator,
            discriminator: self.discriminator,
            objective: self.objective,
            record: self.record,
            summary,
            confmaps,
            histograms,
            timing: self.timing,
        }
    }
}

/// Validates, sets up and runs one seed.
pub fn train(cfg: &TrainConfig, data: &SyntheticSpec) -> Result<RunOutcome> {
    Ok(Trainer::new(cfg.clone(), data.clone())?.run())
}
