//! Alternating adversarial optimisation, checkpointing, validation-driven
//! model selection and evaluation of trained models.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{Value, json};

use crate::checkpoint::{Checkpoint, Section};
use crate::datasets::{ARTERY, Geometry, LabeledSample, VEIN};
use crate::discriminator::{DiscriminatorConfig, DiscriminatorModel, lift_binary, lift_binary_tensor};
use crate::error::{Error, Result};
use crate::fusion::{FusionConfig, FusionModel};
use crate::graph::{Graph, Var};
use crate::losses::{LossReport, LossVars, LossWeights, discriminator_loss_graph, fusion_loss_graph, seg_loss_graph};
use crate::metrics::{self, ImageMetrics, MetricReport};
use crate::nn::{Adam, AdamConfig, Mode, ParamSet};
use crate::synthetic::{Mask, masked};
use crate::tensor::Tensor;

pub const TRAIN_LOG: &str = "train.log";
pub const EPOCH_LOG: &str = "epochs.log";
pub const BEST_CHECKPOINT: &str = "best.ckpt";
pub const LAST_CHECKPOINT: &str = "last.ckpt";
pub const TRAIN_LOG_HEADER: &str = "# epoch step l_gan l_bce l_mse side1 side2 side3 total d_loss";

/// Ablation components. `seg` switches on the merge-block decoders together
/// with adversarial training; `deep_supervision` adds the side-output
/// losses; `binary_fusion` adds the artery and vein branches and the fusion
/// head.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Toggles {
    pub seg: bool,
    pub deep_supervision: bool,
    pub binary_fusion: bool,
}

impl Toggles {
    pub const BASELINE: Toggles = Toggles {
        seg: false,
        deep_supervision: false,
        binary_fusion: false,
    };
    pub const SEG: Toggles = Toggles {
        seg: true,
        ..Self::BASELINE
    };
    pub const SEG_DEEP: Toggles = Toggles {
        deep_supervision: true,
        ..Self::SEG
    };
    pub const FULL: Toggles = Toggles {
        binary_fusion: true,
        ..Self::SEG_DEEP
    };

    /// Rows of the ablation table, in order.
    pub const ABLATION: [Toggles; 4] = [Self::BASELINE, Self::SEG, Self::SEG_DEEP, Self::FULL];

    pub fn label(&self) -> String {
        let parts: Vec<&str> = [(self.seg, "Seg"), (self.deep_supervision, "Deep"), (self.binary_fusion, "BF")]
            .into_iter()
            .filter_map(|(on, n)| on.then_some(n))
            .collect();
        if parts.is_empty() {
            "Baseline".into()
        } else {
            parts.join("+")
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub num_classes: usize,
    pub depth: usize,
    pub base_channels: usize,
    pub disc_depth: usize,
    pub disc_base_channels: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            num_classes: 4,
            depth: 5,
            base_channels: 16,
            disc_depth: 4,
            disc_base_channels: 8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub toggles: Toggles,
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub epochs: usize,
    pub weights: LossWeights,
    pub seed: u64,
    /// Stop after this many generator steps.
    pub max_steps: Option<u64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            model: ModelConfig::default(),
            toggles: Toggles::FULL,
            adam: AdamConfig::default(),
            batch_size: 2,
            epochs: 1500,
            weights: LossWeights::default(),
            seed: 0,
            max_steps: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.adam.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        self.fusion_config().main_branch().unet().validate()?;
        self.discriminator_config().unet().validate()
    }

    pub fn fusion_config(&self) -> FusionConfig {
        FusionConfig {
            num_classes: self.model.num_classes,
            depth: self.model.depth,
            base_channels: self.model.base_channels,
            merge_blocks: self.toggles.seg,
            deep_supervision: self.toggles.deep_supervision,
            binary_fusion: self.toggles.binary_fusion,
        }
    }

    pub fn discriminator_config(&self) -> DiscriminatorConfig {
        DiscriminatorConfig {
            num_classes: self.model.num_classes,
            depth: self.model.disc_depth,
            base_channels: self.model.disc_base_channels,
        }
    }

    /// What a checkpoint must match to be loaded into this configuration.
    pub fn architecture(&self) -> Value {
        json!({
            "fusion": self.fusion_config(),
            "discriminator": self.discriminator_config(),
        })
    }
}

/// One training image at network resolution with its targets.
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedSample {
    pub id: String,
    pub image: Tensor<f32>,
    pub one_hot: Tensor<f32>,
    pub artery: Tensor<f32>,
    pub vein: Tensor<f32>,
}

pub fn prepare(sample: &LabeledSample, geometry: Geometry, num_classes: usize) -> Result<PreparedSample> {
    let (image, label) = geometry.apply(&sample.image, &sample.label)?;
    Ok(PreparedSample {
        id: sample.id.clone(),
        image,
        one_hot: label.one_hot(num_classes),
        artery: label.binary_target(ARTERY),
        vein: label.binary_target(VEIN),
    })
}

/// Stacked samples.
#[derive(Clone, Debug)]
pub struct Batch {
    pub images: Tensor<f32>,
    pub one_hot: Tensor<f32>,
    pub artery: Tensor<f32>,
    pub vein: Tensor<f32>,
}

impl Batch {
    pub fn from_samples(samples: &[&PreparedSample]) -> Batch {
        let stack = |f: fn(&PreparedSample) -> &Tensor<f32>| Tensor::stack(&samples.iter().map(|s| f(s)).collect::<Vec<_>>());
        Batch {
            images: stack(|s| &s.image),
            one_hot: stack(|s| &s.one_hot),
            artery: stack(|s| &s.artery),
            vein: stack(|s| &s.vein),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    /// Fused (multi-class) output loss including side terms.
    pub generator: LossReport,
    pub artery: Option<LossReport>,
    pub vein: Option<LossReport>,
    /// Objective the generator step minimised.
    pub total: f64,
    /// Mean over branches of `L_d1 + L_d2`, when the discriminator trained.
    pub d_loss: Option<f64>,
}

impl StepReport {
    /// Fields of [`TRAIN_LOG_HEADER`]; `side_i` is the weighted contribution
    /// of side output `i`, absent terms are 0.
    pub fn log_line(&self, epoch: usize, step: u64, w: &LossWeights) -> String {
        let g = &self.generator;
        let sides: Vec<String> = (0..3)
            .map(|i| format!("{:.8}", g.side_terms.get(i).map(|s| s.weight() * s.combined(w)).unwrap_or(0.0)))
            .collect();
        format!(
            "{epoch} {step} {:.8} {:.8} {:.8} {} {:.8} {:.8}",
            g.l_gan,
            g.l_bce,
            g.l_mse,
            sides.join(" "),
            self.total,
            self.d_loss.unwrap_or(0.0)
        )
    }
}

fn check_finite(component: &str, value: f64) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFiniteLoss(component.to_string()))
    }
}

/// Generator, discriminator and their optimisers.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub config: TrainConfig,
    pub model: FusionModel<f32>,
    pub disc: DiscriminatorModel<f32>,
    gen_opts: Vec<Adam<f32>>,
    disc_opt: Adam<f32>,
    pub steps: u64,
    pub epochs_done: usize,
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Trainer> {
        config.validate()?;
        let model = FusionModel::new(config.fusion_config(), config.seed)?;
        let disc = DiscriminatorModel::new(config.discriminator_config(), config.seed.wrapping_add(0x5EED))?;
        let gen_opts = model.param_sets().into_iter().map(|p| Adam::new(config.adam, p)).collect();
        let disc_opt = Adam::new(config.adam, &disc.net.params);
        Ok(Trainer {
            config,
            model,
            disc,
            gen_opts,
            disc_opt,
            steps: 0,
            epochs_done: 0,
        })
    }

    /// One discriminator update on detached generator outputs, then one
    /// generator update against the updated discriminator.
    pub fn train_step(&mut self, batch: &Batch) -> Result<StepReport> {
        let c = self.config.model.num_classes;
        let w = self.config.weights;
        let mut g = Graph::new();
        let x = g.constant(batch.images.clone());
        let out = self.model.forward(&mut g, x, Mode::Train, true)?;

        let d_loss = if self.config.toggles.seg {
            let mut pairs = vec![(batch.one_hot.clone(), g.value(out.fused_probs).clone())];
            if let (Some(a), Some(v)) = (out.artery_prob, out.vein_prob) {
                pairs.push((lift_binary_tensor(&batch.artery, ARTERY as usize, c), lift_binary_tensor(g.value(a), ARTERY as usize, c)));
                pairs.push((lift_binary_tensor(&batch.vein, VEIN as usize, c), lift_binary_tensor(g.value(v), VEIN as usize, c)));
            }
            Some(self.discriminator_step(&batch.images, &pairs)?)
        } else {
            None
        };

        let adversarial = self.config.toggles.seg;
        let mut d_fake = |g: &mut Graph<f32>, map: Var| -> Result<Option<Var>> {
            if adversarial {
                Ok(Some(self.disc.forward(g, x, map, Mode::Train, false)?))
            } else {
                Ok(None)
            }
        };
        let fused_fake = d_fake(&mut g, out.fused_probs)?;
        let mut fused = seg_loss_graph(&mut g, out.fused_probs, &batch.one_hot, fused_fake, &w);
        if let Some(sides) = &out.side_probs {
            fused = fusion_loss_graph(&mut g, fused, sides, &batch.one_hot, &w);
        }
        let mut totals = vec![(fused.total, 1.0f32)];
        let mut binary: Vec<LossVars> = Vec::new();
        for (prob, target, class) in [(out.artery_prob, &batch.artery, ARTERY), (out.vein_prob, &batch.vein, VEIN)] {
            let Some(p) = prob else { continue };
            let fake = match adversarial {
                true => {
                    let lifted = lift_binary(&mut g, p, class as usize, c);
                    d_fake(&mut g, lifted)?
                }
                false => None,
            };
            let vars = seg_loss_graph(&mut g, p, target, fake, &w);
            totals.push((vars.total, 1.0));
            binary.push(vars);
        }
        let total = g.weighted_sum(&totals);
        let generator = fused.report(&g);
        let mut binary_reports = binary.iter().map(|v| v.report(&g));
        let artery = binary_reports.next();
        let vein = binary_reports.next();
        check_finite("fused", generator.total)?;
        if let Some(a) = &artery {
            check_finite("artery", a.total)?;
        }
        if let Some(v) = &vein {
            check_finite("vein", v.total)?;
        }
        let total_value = g.value(total).data()[0] as f64;
        check_finite("generator total", total_value)?;

        let grads = g.backward(total);
        let set_grads: Vec<_> = self.model.param_sets().iter().map(|p| p.grads(&g, &grads)).collect();
        for ((params, opt), gr) in self.model.param_sets_mut().into_iter().zip(&mut self.gen_opts).zip(&set_grads) {
            opt.step(params, gr);
        }
        self.steps += 1;
        Ok(StepReport {
            generator,
            artery,
            vein,
            total: total_value,
            d_loss,
        })
    }

    fn discriminator_step(&mut self, images: &Tensor<f32>, pairs: &[(Tensor<f32>, Tensor<f32>)]) -> Result<f64> {
        let mut g = Graph::new();
        let x = g.constant(images.clone());
        let mut terms = Vec::new();
        for (real, fake) in pairs {
            let r = g.constant(real.clone());
            let f = g.constant(fake.clone());
            let dr = self.disc.forward(&mut g, x, r, Mode::Train, true)?;
            let df = self.disc.forward(&mut g, x, f, Mode::Train, true)?;
            let (l1, l2) = discriminator_loss_graph(&mut g, dr, df);
            let k = 1.0 / pairs.len() as f32;
            terms.push((l1, k));
            terms.push((l2, k));
        }
        let loss = g.weighted_sum(&terms);
        let value = g.value(loss).data()[0] as f64;
        check_finite("discriminator", value)?;
        let grads = g.backward(loss);
        let gr = self.disc.net.params.grads(&g, &grads);
        self.disc_opt.step(&mut self.disc.net.params, &gr);
        Ok(value)
    }

    fn section_names(&self) -> Vec<&'static str> {
        let mut names = vec!["main"];
        if self.model.artery.is_some() {
            names.extend(["artery", "vein"]);
        }
        names.push("heads");
        names
    }

    /// Model weights, optimiser state and `meta`.
    pub fn checkpoint(&self, meta: Value) -> Checkpoint {
        let mut meta = meta;
        if let Value::Object(m) = &mut meta {
            m.insert("steps".into(), json!(self.steps));
            m.insert("epochs_done".into(), json!(self.epochs_done));
            m.insert("train_config".into(), serde_json::to_value(&self.config).expect("config serializes"));
        }
        let mut ck = Checkpoint::new(self.config.architecture(), meta);
        let sets = self.model.param_sets();
        for (name, p) in self.section_names().into_iter().zip(&sets) {
            ck.push(Section::from_params(name, p));
        }
        ck.push(Section::from_params("discriminator", &self.disc.net.params));
        for ((name, p), opt) in self.section_names().into_iter().zip(&sets).zip(&self.gen_opts) {
            ck.push(Section::from_adam(&format!("adam/{name}"), opt, p));
        }
        ck.push(Section::from_adam("adam/discriminator", &self.disc_opt, &self.disc.net.params));
        ck
    }

    /// Restores weights and, when present, optimiser state.
    pub fn restore(&mut self, ck: &Checkpoint) -> Result<()> {
        ck.expect_architecture(&self.config.architecture())?;
        let names = self.section_names();
        for (name, p) in names.iter().zip(self.model.param_sets_mut()) {
            ck.section(name)?.load_into(p)?;
        }
        ck.section("discriminator")?.load_into(&mut self.disc.net.params)?;
        if ck.has_section("adam/main") {
            let sets = self.model.param_sets();
            for ((name, p), opt) in names.iter().zip(&sets).zip(&mut self.gen_opts) {
                ck.section(&format!("adam/{name}"))?.load_adam(opt, p)?;
            }
            ck.section("adam/discriminator")?.load_adam(&mut self.disc_opt, &self.disc.net.params)?;
        }
        self.steps = ck.meta.get("steps").and_then(Value::as_u64).unwrap_or(0);
        self.epochs_done = ck.meta.get("epochs_done").and_then(Value::as_u64).unwrap_or(0) as usize;
        Ok(())
    }

    /// All generator parameter sets, for comparisons in tests.
    pub fn generator_params(&self) -> Vec<&ParamSet<f32>> {
        self.model.param_sets()
    }
}

/// Rebuilds the generator stored in a checkpoint.
pub fn load_model(ck: &Checkpoint) -> Result<(TrainConfig, FusionModel<f32>)> {
    let config: TrainConfig = ck
        .meta
        .get("train_config")
        .cloned()
        .map(serde_json::from_value)
        .transpose()?
        .ok_or_else(|| Error::Checkpoint("checkpoint has no training configuration".into()))?;
    let mut trainer = Trainer::new(config.clone())?;
    trainer.restore(ck)?;
    Ok((config, trainer.model))
}

/// Order of training samples in `epoch`, a function of seed and epoch only.
pub fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    let mix = seed ^ (epoch as u64 + 1).wrapping_mul(0xD1B5_4A32_D192_ED03);
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix));
    order
}

/// An evaluation image at original resolution.
#[derive(Clone, Debug)]
pub struct EvalSample {
    pub sample: LabeledSample,
    pub geometry: Geometry,
    pub mask: Option<Mask>,
}

/// Fused class probabilities at original resolution.
pub fn predict_probs(model: &mut FusionModel<f32>, sample: &LabeledSample, geometry: Geometry) -> Result<Tensor<f32>> {
    let input = geometry.apply_image(&sample.image)?;
    let pred = model.infer(&input)?;
    geometry.restore(&pred.fused_probs, sample.size())
}

/// Mean weighted F1 over images that contain foreground.
pub fn validation_f1(model: &mut FusionModel<f32>, samples: &[EvalSample]) -> Result<Option<f64>> {
    let mut scores = Vec::new();
    for s in samples {
        let probs = predict_probs(model, &s.sample, s.geometry)?;
        let pred = metrics::argmax_labels(&probs);
        let counts = s.sample.class_pixel_counts(model.config.num_classes);
        match metrics::weighted_f1(&pred, &s.sample.label.data, &counts) {
            Ok(f) => scores.push(f),
            Err(Error::AllCountsZero) => {}
            Err(e) => return Err(e),
        }
    }
    Ok((!scores.is_empty()).then(|| scores.iter().sum::<f64>() / scores.len() as f64))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub report: MetricReport,
    /// Weighted F1 over the pooled crossing-region pixels of all masked
    /// images.
    pub crossing_f1: Option<f64>,
}

pub fn evaluate(model: &mut FusionModel<f32>, samples: &[EvalSample], name: &str) -> Result<Evaluation> {
    let c = model.config.num_classes;
    let mut images: Vec<ImageMetrics> = Vec::new();
    let (mut scores, mut labels) = (Vec::new(), Vec::new());
    let (mut crossing_pred, mut crossing_truth) = (Vec::new(), Vec::new());
    for s in samples {
        let probs = predict_probs(model, &s.sample, s.geometry)?;
        images.push(metrics::evaluate_image(&s.sample.id, &probs, &s.sample.label.data)?);
        let one_hot = s.sample.one_hot(c);
        for k in 1..c {
            scores.extend(probs.channel_plane(0, k).iter().map(|&v| v as f64));
            labels.extend(one_hot.channel_plane(0, k).iter().map(|&v| v > 0.5));
        }
        if let Some(mask) = &s.mask {
            let pred = metrics::argmax_labels(&probs);
            crossing_pred.extend(masked(&pred, mask));
            crossing_truth.extend(masked(&s.sample.label.data, mask));
        }
    }
    let pooled = metrics::binary_curves(&scores, &labels);
    let crossing_f1 = if crossing_truth.is_empty() {
        None
    } else {
        let counts = metrics::class_counts(&crossing_truth, c);
        Some(metrics::weighted_f1(&crossing_pred, &crossing_truth, &counts[1..])?)
    };
    Ok(Evaluation {
        report: MetricReport::from_images(name, images, pooled),
        crossing_f1,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub steps: u64,
    pub mean_total: f64,
    pub mean_d_loss: Option<f64>,
    pub val_f1: Option<f64>,
    /// Best validation F1 so far; non-decreasing.
    pub best_f1: Option<f64>,
}

impl EpochRecord {
    fn line(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.8}")).unwrap_or_else(|| "-".into());
        format!(
            "{} {} {:.8} {} {} {}",
            self.epoch,
            self.steps,
            self.mean_total,
            opt(self.mean_d_loss),
            opt(self.val_f1),
            opt(self.best_f1)
        )
    }
}

pub struct FitOutcome {
    /// Checkpoint with the best validation F1 (the last one when no
    /// validation images exist).
    pub best: Checkpoint,
    pub best_epoch: Option<usize>,
    pub best_f1: Option<f64>,
    pub history: Vec<EpochRecord>,
    /// Per-step log lines, without the header.
    pub log: Vec<String>,
    pub trainer: Trainer,
}

fn append(path: &Path, lines: &[String]) -> Result<()> {
    let mut f = OpenOptions::new().create(true).append(true).open(path)?;
    for l in lines {
        writeln!(f, "{l}")?;
    }
    Ok(())
}

/// Full training run. With `out`, writes `train.log`, `epochs.log`,
/// `best.ckpt` and `last.ckpt` there; `resume` continues from `last.ckpt`.
pub fn fit(config: &TrainConfig, train: &[PreparedSample], val: &[EvalSample], out: Option<&Path>, resume: bool) -> Result<FitOutcome> {
    let mut trainer = Trainer::new(config.clone())?;
    let mut best_f1: Option<f64> = None;
    let mut best_epoch: Option<usize> = None;
    let mut best = trainer.checkpoint(json!({}));
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
        let last = dir.join(LAST_CHECKPOINT);
        if resume && last.is_file() {
            trainer.restore(&Checkpoint::read(&last)?)?;
            let best_path = dir.join(BEST_CHECKPOINT);
            if best_path.is_file() {
                best = Checkpoint::read(&best_path)?;
                best_f1 = best.meta.get("val_f1").and_then(Value::as_f64);
                best_epoch = best.meta.get("epoch").and_then(Value::as_u64).map(|e| e as usize);
            }
        } else {
            std::fs::write(dir.join(TRAIN_LOG), format!("{TRAIN_LOG_HEADER}\n"))?;
            std::fs::write(dir.join(EPOCH_LOG), "# epoch steps mean_total mean_d_loss val_f1 best_f1\n")?;
            best.write(&dir.join(BEST_CHECKPOINT))?;
        }
    }
    let mut history = Vec::new();
    let mut log = Vec::new();
    let budget_left = |t: &Trainer| config.max_steps.is_none_or(|m| t.steps < m);
    while trainer.epochs_done < config.epochs && budget_left(&trainer) && !train.is_empty() {
        let epoch = trainer.epochs_done + 1;
        let order = epoch_order(train.len(), config.seed, epoch);
        let mut lines = Vec::new();
        let (mut sum_total, mut sum_d, mut n) = (0.0, 0.0, 0usize);
        for chunk in order.chunks(config.batch_size) {
            if !budget_left(&trainer) {
                break;
            }
            let batch = Batch::from_samples(&chunk.iter().map(|&i| &train[i]).collect::<Vec<_>>());
            let r = trainer.train_step(&batch)?;
            lines.push(r.log_line(epoch, trainer.steps, &config.weights));
            sum_total += r.total;
            sum_d += r.d_loss.unwrap_or(0.0);
            n += 1;
        }
        trainer.epochs_done = epoch;
        let val_f1 = validation_f1(&mut trainer.model, val)?;
        let improved = match (val_f1, best_f1) {
            (Some(v), Some(b)) => v > b,
            (Some(_), None) => true,
            (None, _) => val.is_empty(),
        };
        let meta = json!({ "epoch": epoch, "val_f1": val_f1 });
        if improved {
            best_f1 = val_f1.or(best_f1);
            best_epoch = Some(epoch);
            best = trainer.checkpoint(meta.clone());
        }
        let record = EpochRecord {
            epoch,
            steps: trainer.steps,
            mean_total: sum_total / n.max(1) as f64,
            mean_d_loss: config.toggles.seg.then(|| sum_d / n.max(1) as f64),
            val_f1,
            best_f1,
        };
        if let Some(dir) = out {
            append(&dir.join(TRAIN_LOG), &lines)?;
            append(&dir.join(EPOCH_LOG), &[record.line()])?;
            if improved {
                best.write(&dir.join(BEST_CHECKPOINT))?;
            }
            trainer.checkpoint(meta).write(&dir.join(LAST_CHECKPOINT))?;
        }
        log.extend(lines);
        history.push(record);
    }
    Ok(FitOutcome {
        best,
        best_epoch,
        best_f1,
        history,
        log,
        trainer,
    })
}
