//! Acceptance suite: one line per criterion, non-zero exit if any fails.
//! Pass criterion numbers as arguments to run a subset, e.g.
//! `cargo test --test acceptance -- 1 4`.

use std::panic::{AssertUnwindSafe, catch_unwind};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use avfusion::config::RunConfig;
use avfusion::datasets::{DatasetPreset, Geometry, LabelMap, Size, SplitPart, pad_label, pad_to};
use avfusion::discriminator::{DiscriminatorConfig, DiscriminatorModel};
use avfusion::fusion::{FusionConfig, FusionModel};
use avfusion::graph::Graph;
use avfusion::losses::{self, LossWeights, SIDE_WEIGHTS};
use avfusion::metrics;
use avfusion::nn::Mode;
use avfusion::segmenter::grouped_channel_sum;
use avfusion::synthetic::{CrossingSceneSpec, Scene, SyntheticDatasetSpec, generate_scene, generate_scenes, split_for};
use avfusion::tensor::Tensor;
use avfusion::training::{
    self, Batch, EvalSample, ModelConfig, PreparedSample, TrainConfig, Toggles, Trainer, epoch_order,
};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok { Ok(detail) } else { Err(detail) }
}

fn within(limit: Duration, start: Instant, detail: String) -> Outcome {
    let t = start.elapsed();
    check(t <= limit, format!("{detail}; {:.1}s of {}s budget", t.as_secs_f64(), limit.as_secs()))
}

fn rand_tensor(shape: [usize; 4], rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect())
}

// 1. Grouped channel sum against nested loops.
fn grouped_sum_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let cb = rng.random_range(1..=8);
        let n_in = cb * rng.random_range(1..=8);
        let (b, h, w) = (rng.random_range(1..=3), rng.random_range(1..=12), rng.random_range(1..=12));
        let f = rand_tensor([b, n_in, h, w], &mut rng, -1.0, 1.0);
        let y = grouped_channel_sum(&f, cb).map_err(|e| e.to_string())?;
        let size = n_in / cb;
        for s in 0..b {
            for k in 0..cb {
                for yy in 0..h {
                    for x in 0..w {
                        let mut sum = 0.0;
                        for i in k * size..(k + 1) * size {
                            sum += f.at(s, i, yy, x);
                        }
                        let err = (y.at(s, k, yy, x) - sum).abs() / sum.abs().max(1e-12);
                        worst = worst.max(err);
                    }
                }
            }
        }
    }
    if worst > 1e-6 {
        return Err(format!("max relative error {worst:e}"));
    }
    within(Duration::from_secs(60), start, format!("100 shapes, max relative error {worst:.1e}"))
}

// 2. Finite-difference gradient checks on a depth-2 model.
struct GradCheck {
    model: FusionModel<f64>,
    disc: DiscriminatorModel<f64>,
    image: Tensor<f64>,
    target: Tensor<f64>,
    weights: LossWeights,
}

impl GradCheck {
    fn new() -> GradCheck {
        let cfg = FusionConfig {
            num_classes: 4,
            depth: 2,
            base_channels: 4,
            merge_blocks: true,
            deep_supervision: true,
            binary_fusion: true,
        };
        let mut model = FusionModel::<f64>::new(cfg, 5).unwrap();
        // Move the fusion head off its pass-through start so the binary
        // branches receive gradient.
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for i in 0..model.heads.len() {
            for v in model.heads.get_mut(i).data_mut() {
                *v = rng.random_range(-0.5..0.5);
            }
        }
        let disc = DiscriminatorModel::new(
            DiscriminatorConfig {
                num_classes: 4,
                depth: 2,
                base_channels: 2,
            },
            6,
        )
        .unwrap();
        let image = rand_tensor([2, 3, 8, 8], &mut rng, 0.0, 1.0);
        let labels: Vec<u8> = (0..2 * 64).map(|_| rng.random_range(0..4)).collect();
        let mut target = Tensor::zeros([2, 4, 8, 8]);
        for s in 0..2 {
            for p in 0..64 {
                target.channel_plane_mut(s, labels[s * 64 + p] as usize)[p] = 1.0;
            }
        }
        GradCheck {
            model,
            disc,
            image,
            target,
            weights: LossWeights::default(),
        }
    }

    /// Loss value, its value from the tensor reference functions, and
    /// per-set gradients.
    fn eval(&mut self, with_sides: bool) -> (f64, f64, Vec<Vec<Option<Tensor<f64>>>>) {
        let mut g = Graph::new();
        let x = g.constant(self.image.clone());
        let out = self.model.forward(&mut g, x, Mode::Train, true).unwrap();
        let d = self.disc.forward(&mut g, x, out.fused_probs, Mode::Train, false).unwrap();
        let mut vars = losses::seg_loss_graph(&mut g, out.fused_probs, &self.target, Some(d), &self.weights);
        let logits = g.value(out.fused_logits).clone();
        let mut reference = losses::seg_loss(&logits, &self.target, Some(g.value(d)), &self.weights).unwrap();
        if with_sides {
            let sides = out.side_probs.unwrap();
            vars = losses::fusion_loss_graph(&mut g, vars, &sides, &self.target, &self.weights);
            let side_values: Vec<Tensor<f64>> = sides.iter().map(|&s| g.value(s).clone()).collect();
            reference = losses::fusion_loss(&reference, &side_values, &self.target, &self.weights).unwrap();
        }
        let value = g.value(vars.total).data()[0];
        let grads = g.backward(vars.total);
        let per_set = self.model.param_sets().iter().map(|p| p.grads(&g, &grads)).collect();
        (value, reference.total, per_set)
    }

    fn loss_only(&mut self, with_sides: bool) -> f64 {
        self.eval(with_sides).0
    }

    /// Fraction of sampled scalars whose analytic and central-difference
    /// derivatives agree to 1e-3 relative error.
    fn run(&mut self, with_sides: bool, samples: usize, seed: u64) -> Result<(f64, f64), String> {
        let (value, reference, grads) = self.eval(with_sides);
        if (value - reference).abs() > 1e-9 * reference.abs().max(1.0) {
            return Err(format!("graph loss {value} differs from reference {reference}"));
        }
        // Candidate scalars: every generator parameter that can reach the
        // loss (side heads only when their terms are included).
        let mut candidates = Vec::new();
        for (s, set) in self.model.param_sets().iter().enumerate() {
            for (i, (name, t)) in set.iter().enumerate() {
                if !with_sides && name.starts_with("side") {
                    continue;
                }
                for j in 0..t.len() {
                    candidates.push((s, i, j));
                }
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = 1e-6;
        let mut ok = 0;
        let mut worst: f64 = 0.0;
        for _ in 0..samples {
            let (s, i, j) = candidates[rng.random_range(0..candidates.len())];
            let analytic = grads[s][i].as_ref().map_or(0.0, |t| t.data()[j]);
            let nudge = |gc: &mut GradCheck, delta: f64| {
                gc.model.param_sets_mut()[s].get_mut(i).data_mut()[j] += delta;
            };
            nudge(self, h);
            let up = self.loss_only(with_sides);
            nudge(self, -2.0 * h);
            let down = self.loss_only(with_sides);
            nudge(self, h);
            let numeric = (up - down) / (2.0 * h);
            let scale = analytic.abs().max(numeric.abs());
            let rel = if scale < 1e-9 { 0.0 } else { (analytic - numeric).abs() / scale };
            worst = worst.max(rel);
            if rel <= 1e-3 {
                ok += 1;
            }
        }
        Ok((ok as f64 / samples as f64, worst))
    }
}

fn gradient_checks() -> Outcome {
    let start = Instant::now();
    let mut gc = GradCheck::new();
    let (seg_frac, seg_worst) = gc.run(false, 300, 1)?;
    let (fus_frac, fus_worst) = gc.run(true, 300, 2)?;
    let detail = format!(
        "seg_loss {:.1}% within 1e-3 (worst {seg_worst:.1e}), fusion_loss {:.1}% (worst {fus_worst:.1e})",
        seg_frac * 100.0,
        fus_frac * 100.0
    );
    if seg_frac < 0.99 || fus_frac < 0.99 {
        return Err(detail);
    }
    within(Duration::from_secs(300), start, detail)
}

// 3. Loss arithmetic.
fn loss_arithmetic() -> Outcome {
    let w = LossWeights::default();
    let total = w.combine(1.0, 1.0, 1.0);
    let expected_weights = [0.5, 0.25, 0.125];
    let side_sum: f64 = (1..=3).map(|i| 1.0 / 2f64.powi(i)).sum();
    check(
        (total - 1.68).abs() < 1e-12 && SIDE_WEIGHTS == expected_weights && (SIDE_WEIGHTS.iter().sum::<f64>() - side_sum).abs() < 1e-15,
        format!("(1,1,1) -> {total:.12}, side weights {SIDE_WEIGHTS:?}"),
    )
}

// 4. Metric oracles.
fn brute_weighted_f1(pred: &[u8], truth: &[u8], c: usize) -> Option<f64> {
    let (mut num, mut den) = (0.0, 0.0);
    for k in 1..c as u8 {
        let count = truth.iter().filter(|&&t| t == k).count();
        if count == 0 {
            continue;
        }
        let tp = pred.iter().zip(truth).filter(|&(&p, &t)| p == k && t == k).count() as f64;
        let fp = pred.iter().zip(truth).filter(|&(&p, &t)| p == k && t != k).count() as f64;
        let fn_ = pred.iter().zip(truth).filter(|&(&p, &t)| p != k && t == k).count() as f64;
        let f1 = if tp == 0.0 { 0.0 } else { 2.0 * tp / (2.0 * tp + fp + fn_) };
        num += count as f64 * f1;
        den += count as f64;
    }
    (den > 0.0).then(|| num / den)
}

/// Probability that a random positive outranks a random negative.
fn brute_auc_roc(scores: &[f64], labels: &[bool]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for (i, &li) in labels.iter().enumerate() {
        for (j, &lj) in labels.iter().enumerate() {
            if li && !lj {
                pairs += 1.0;
                wins += if scores[i] > scores[j] {
                    1.0
                } else if scores[i] == scores[j] {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    wins / pairs
}

/// Trapezoid over (recall, precision) at every distinct threshold, starting
/// at recall 0 with the top threshold's precision.
fn brute_auc_pr(scores: &[f64], labels: &[bool]) -> f64 {
    let mut thresholds: Vec<f64> = scores.to_vec();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let p = labels.iter().filter(|&&l| l).count() as f64;
    let mut pts: Vec<(f64, f64)> = Vec::new();
    for &t in &thresholds {
        let tp = scores.iter().zip(labels).filter(|&(&s, &l)| s >= t && l).count() as f64;
        let pos = scores.iter().filter(|&&s| s >= t).count() as f64;
        let point = (tp / p, tp / pos);
        if pts.is_empty() {
            pts.push((0.0, point.1));
        }
        pts.push(point);
    }
    pts.windows(2).map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0).sum()
}

/// U by pair counting and p-values by enumerating every assignment of the
/// pooled values to the first sample.
fn brute_mann_whitney(a: &[f64], b: &[f64]) -> (f64, f64, f64, f64) {
    let u_of = |x: &[f64], y: &[f64]| -> f64 {
        let mut u = 0.0;
        for &xi in x {
            for &yj in y {
                u += if xi > yj {
                    1.0
                } else if xi == yj {
                    0.5
                } else {
                    0.0
                };
            }
        }
        u
    };
    let u = u_of(a, b);
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let (m, n) = (a.len(), b.len());
    let centre = (m * n) as f64 / 2.0;
    let (mut two, mut greater, mut less, mut total) = (0u64, 0u64, 0u64, 0u64);
    for mask in 0u32..(1 << (m + n)) {
        if mask.count_ones() as usize != m {
            continue;
        }
        let x: Vec<f64> = (0..m + n).filter(|i| mask >> i & 1 == 1).map(|i| pooled[i]).collect();
        let y: Vec<f64> = (0..m + n).filter(|i| mask >> i & 1 == 0).map(|i| pooled[i]).collect();
        let v = u_of(&x, &y);
        total += 1;
        if (v - centre).abs() >= (u - centre).abs() {
            two += 1;
        }
        if v >= u {
            greater += 1;
        }
        if v <= u {
            less += 1;
        }
    }
    let t = total as f64;
    (u, two as f64 / t, greater as f64 / t, less as f64 / t)
}

fn metric_oracles() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let cases = 60;
    for case in 0..cases {
        // weighted F1 on a random 4-class map
        let len = rng.random_range(5..60);
        let truth: Vec<u8> = (0..len).map(|_| rng.random_range(0..4)).collect();
        let pred: Vec<u8> = (0..len).map(|_| rng.random_range(0..4)).collect();
        let counts = metrics::class_counts(&truth, 4);
        let ours = metrics::weighted_f1(&pred, &truth, &counts[1..]).ok();
        let oracle = brute_weighted_f1(&pred, &truth, 4);
        match (ours, oracle) {
            (Some(a), Some(b)) if (a - b).abs() <= 1e-9 => {}
            (None, None) => {}
            other => return Err(format!("case {case}: weighted F1 {other:?}")),
        }

        // areas on coarse scores so ties occur
        let len = rng.random_range(4..40);
        let scores: Vec<f64> = (0..len).map(|_| rng.random_range(0..8) as f64 / 8.0).collect();
        let mut labels: Vec<bool> = (0..len).map(|_| rng.random_bool(0.4)).collect();
        labels[0] = true;
        labels[1] = false;
        let curves = metrics::binary_curves(&scores, &labels).ok_or("degenerate case")?;
        let (roc, pr) = (brute_auc_roc(&scores, &labels), brute_auc_pr(&scores, &labels));
        if (curves.auc_roc - roc).abs() > 1e-9 || (curves.auc_pr - pr).abs() > 1e-9 {
            return Err(format!("case {case}: ROC {} vs {roc}, PR {} vs {pr}", curves.auc_roc, curves.auc_pr));
        }

        // MSE
        let (h, w) = (rng.random_range(1..6), rng.random_range(1..6));
        let probs = rand_tensor([1, 4, h, w], &mut rng, 0.0, 1.0);
        let label: Vec<u8> = (0..h * w).map(|_| rng.random_range(0..4)).collect();
        let one_hot: Tensor<f64> = metrics::one_hot(&label, 4, h, w);
        let mut sq = 0.0;
        for c in 0..4 {
            for p in 0..h * w {
                let t = if label[p] as usize == c { 1.0 } else { 0.0 };
                sq += (probs.channel_plane(0, c)[p] - t).powi(2);
            }
        }
        let mse = metrics::mse_score(&probs, &one_hot).map_err(|e| e.to_string())?;
        if (mse - sq / (4 * h * w) as f64).abs() > 1e-9 {
            return Err(format!("case {case}: MSE {mse}"));
        }

        // Mann-Whitney, small samples with ties
        let (m, n) = (rng.random_range(1..8), rng.random_range(1..8));
        let a: Vec<f64> = (0..m).map(|_| rng.random_range(0..5) as f64).collect();
        let b: Vec<f64> = (0..n).map(|_| rng.random_range(0..5) as f64).collect();
        let t = metrics::mann_whitney_u(&a, &b).map_err(|e| e.to_string())?;
        let (u, two, greater, less) = brute_mann_whitney(&a, &b);
        if !t.exact || t.u != u || t.p_two_sided != two || t.p_greater != greater || t.p_less != less {
            return Err(format!("case {case}: {t:?} vs U {u} p {two} {greater} {less}"));
        }
    }
    within(
        Duration::from_secs(120),
        start,
        format!("{cases} cases each for weighted F1, ROC/PR areas, MSE, Mann-Whitney"),
    )
}

// 5. Overfitting four synthetic scenes.
const OVERFIT_THRESHOLD: f64 = 0.95;
const OVERFIT_STEPS: u64 = 500;

fn overfit() -> Outcome {
    let start = Instant::now();
    let scenes: Vec<_> = (0..4)
        .map(|i| {
            let spec = CrossingSceneSpec {
                seed: 10 + i,
                ..Default::default()
            };
            generate_scene(&spec, &format!("s{i}")).unwrap().sample
        })
        .collect();
    let data: Vec<PreparedSample> = scenes.iter().map(|s| training::prepare(s, Geometry::Identity, 4).unwrap()).collect();
    let eval: Vec<EvalSample> = scenes
        .iter()
        .map(|s| EvalSample {
            sample: s.clone(),
            geometry: Geometry::Identity,
            mask: None,
        })
        .collect();
    let config = TrainConfig {
        model: ModelConfig {
            num_classes: 4,
            depth: 4,
            base_channels: 16,
            disc_depth: 3,
            disc_base_channels: 4,
        },
        toggles: Toggles::FULL,
        ..Default::default()
    };
    let mut trainer = Trainer::new(config.clone()).map_err(|e| e.to_string())?;
    let mut best = (0.0, 0);
    let mut trace = Vec::new();
    let mut epoch = 0;
    while trainer.steps < OVERFIT_STEPS {
        epoch += 1;
        for chunk in epoch_order(data.len(), config.seed, epoch).chunks(config.batch_size) {
            let batch = Batch::from_samples(&chunk.iter().map(|&i| &data[i]).collect::<Vec<_>>());
            trainer.train_step(&batch).map_err(|e| e.to_string())?;
            if trainer.steps % 50 == 0 {
                let f1 = training::validation_f1(&mut trainer.model, &eval).map_err(|e| e.to_string())?.unwrap();
                trace.push(format!("{:.3}", f1));
                if f1 > best.0 {
                    best = (f1, trainer.steps);
                }
            }
        }
    }
    let detail = format!(
        "best training F1 {:.4} at step {} (threshold {OVERFIT_THRESHOLD}); every 50 steps: {}",
        best.0,
        best.1,
        trace.join(" ")
    );
    if best.0 < OVERFIT_THRESHOLD {
        return Err(detail);
    }
    within(Duration::from_secs(900), start, detail)
}

// 6. Ablation ordering on crossing regions.
const ABLATION_SEEDS: u64 = 5;
const ABLATION_EPOCHS: usize = 60;
const ABLATION_SIZE: usize = 32;

fn ablation_dataset() -> (Vec<Scene>, avfusion::datasets::SplitSpec) {
    let spec = SyntheticDatasetSpec {
        scene: CrossingSceneSpec {
            size: Size::new(ABLATION_SIZE, ABLATION_SIZE),
            strokes_per_class: 1,
            crossings: 1,
            seed: 1,
            ..Default::default()
        },
        train: 150,
        test: 50,
        val_fraction: 0.1,
    };
    (generate_scenes(&spec).unwrap(), split_for(&spec))
}

fn ablation_direction() -> Outcome {
    let start = Instant::now();
    let (scenes, split) = ablation_dataset();
    let find = |id: &String| scenes.iter().find(|s| &s.sample.id == id).unwrap();
    let train: Vec<PreparedSample> = split
        .ids(SplitPart::Train)
        .iter()
        .map(|id| training::prepare(&find(id).sample, Geometry::Identity, 4).unwrap())
        .collect();
    let eval_set = |part| -> Vec<EvalSample> {
        split
            .ids(part)
            .iter()
            .map(|id| {
                let s = find(id);
                EvalSample {
                    sample: s.sample.clone(),
                    geometry: Geometry::Identity,
                    mask: Some(s.crossing_mask.clone()),
                }
            })
            .collect()
    };
    let (val, test) = (eval_set(SplitPart::Val), eval_set(SplitPart::Test));
    let rows = [Toggles::SEG, Toggles::SEG_DEEP, Toggles::FULL];
    let mut scores: Vec<Vec<f64>> = Vec::new();
    for toggles in rows {
        let mut row = Vec::new();
        for seed in 0..ABLATION_SEEDS {
            let config = TrainConfig {
                model: ModelConfig {
                    num_classes: 4,
                    depth: 5, // three distinct side-output levels
                    base_channels: 8,
                    disc_depth: 3,
                    disc_base_channels: 4,
                },
                toggles,
                epochs: ABLATION_EPOCHS,
                seed,
                ..Default::default()
            };
            let outcome = training::fit(&config, &train, &val, None, false).map_err(|e| e.to_string())?;
            let (_, mut model) = training::load_model(&outcome.best).map_err(|e| e.to_string())?;
            let eval = training::evaluate(&mut model, &test, "test").map_err(|e| e.to_string())?;
            row.push(eval.crossing_f1.ok_or("no crossing masks")?);
        }
        scores.push(row);
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let means: Vec<f64> = scores.iter().map(|r| mean(r)).collect();
    let test = metrics::mann_whitney_u(&scores[2], &scores[1]).map_err(|e| e.to_string())?;
    let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>().join(",");
    let detail = format!(
        "crossing F1 Seg {:.4} [{}] < Seg+Deep {:.4} [{}] < Seg+Deep+BF {:.4} [{}]; BF increment U = {}, one-sided p = {:.4}",
        means[0],
        fmt(&scores[0]),
        means[1],
        fmt(&scores[1]),
        means[2],
        fmt(&scores[2]),
        test.u,
        test.p_greater
    );
    if !(means[2] > means[1] && means[1] > means[0] && test.p_greater < 0.05) {
        return Err(detail);
    }
    within(Duration::from_secs(3 * 3600), start, detail)
}

// 7. Determinism of a full synthetic run.
fn determinism() -> Outcome {
    let spec = SyntheticDatasetSpec {
        scene: CrossingSceneSpec {
            size: Size::new(16, 16),
            strokes_per_class: 1,
            crossings: 1,
            radius: 2,
            seed: 2,
            ..Default::default()
        },
        train: 10,
        test: 4,
        val_fraction: 0.2,
    };
    let config = TrainConfig {
        model: ModelConfig {
            num_classes: 4,
            depth: 3,
            base_channels: 4,
            disc_depth: 2,
            disc_base_channels: 2,
        },
        epochs: 4,
        seed: 11,
        ..Default::default()
    };
    let run = || -> Result<(Vec<String>, String), String> {
        let scenes = generate_scenes(&spec).map_err(|e| e.to_string())?;
        let split = split_for(&spec);
        let get = |id: &String| scenes.iter().find(|s| &s.sample.id == id).unwrap();
        let train: Vec<PreparedSample> = split
            .ids(SplitPart::Train)
            .iter()
            .map(|id| training::prepare(&get(id).sample, Geometry::Identity, 4).unwrap())
            .collect();
        let eval = |part| -> Vec<EvalSample> {
            split
                .ids(part)
                .iter()
                .map(|id| EvalSample {
                    sample: get(id).sample.clone(),
                    geometry: Geometry::Identity,
                    mask: Some(get(id).crossing_mask.clone()),
                })
                .collect()
        };
        let out = training::fit(&config, &train, &eval(SplitPart::Val), None, false).map_err(|e| e.to_string())?;
        let (_, mut model) = training::load_model(&out.best).map_err(|e| e.to_string())?;
        let report = training::evaluate(&mut model, &eval(SplitPart::Test), "test").map_err(|e| e.to_string())?;
        Ok((out.log, serde_json::to_string(&report).unwrap()))
    };
    let (log_a, report_a) = run()?;
    let (log_b, report_b) = run()?;
    if log_a.len() < 10 {
        return Err(format!("only {} steps logged", log_a.len()));
    }
    check(
        log_a[..10] == log_b[..10] && log_a == log_b && report_a == report_b,
        format!("{} identical log lines, identical {}-byte metric reports", log_a.len(), report_a.len()),
    )
}

// 8. Preprocessing geometry.
fn preprocessing() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let drive = DatasetPreset::DriveAv;
    let original = drive.original_size();
    let target = Size::new(592, 592);
    if original != Size::new(565, 584) || drive.geometry() != Geometry::Pad(target) {
        return Err(format!("DRIVE preset {original} -> {}", drive.geometry()));
    }
    let image = rand_tensor([1, 3, original.height, original.width], &mut rng, 0.0, 1.0).cast::<f32>();
    let label = LabelMap::new(original, (0..original.pixels()).map(|_| rng.random_range(0..4)).collect());
    let padded = pad_to(&image, target).map_err(|e| e.to_string())?;
    let padded_label = pad_label(&label, target).map_err(|e| e.to_string())?;
    let restored = drive.geometry().restore(&padded, original).map_err(|e| e.to_string())?;
    let restored_label = drive
        .geometry()
        .restore(&padded_label.one_hot::<f32>(4), original)
        .map_err(|e| e.to_string())?;
    if restored != image || metrics::argmax_labels(&restored_label) != label.data {
        return Err("pad/crop round trip changed values".into());
    }
    // Every original value survives, so the extra pixels must all be zero.
    let nonzero = |t: &Tensor<f32>| t.data().iter().filter(|&&v| v != 0.0).count();
    if padded.shape() != [1, 3, 592, 592] || nonzero(&padded) != nonzero(&image) {
        return Err("padding is not zero".into());
    }
    let mut found = Vec::new();
    for (name, expected) in [("les-av", Size::new(800, 720)), ("hrf-av", Size::new(880, 592))] {
        let cfg = RunConfig::parse(&format!("preset = {name}\n")).map_err(|e| e.to_string())?;
        let g = cfg.resolved_geometry();
        if g != Geometry::Resize(expected) {
            return Err(format!("{name}: {g}"));
        }
        found.push(format!("{name} {g}"));
    }
    Ok(format!("drive-av {original} -> pad:{target} round-trips exactly; {}", found.join(", ")))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("grouped sum oracle", grouped_sum_oracle),
        ("gradient checks", gradient_checks),
        ("loss arithmetic", loss_arithmetic),
        ("metric oracles", metric_oracles),
        ("overfit convergence", overfit),
        ("ablation direction", ablation_direction),
        ("determinism", determinism),
        ("preprocessing", preprocessing),
    ];
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let k = i + 1;
        if !selected.is_empty() && !selected.contains(&k) {
            continue;
        }
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(d) => println!("criterion {k} {name}: PASS ({secs:.1}s) {d}"),
            Err(d) => {
                failed += 1;
                println!("criterion {k} {name}: FAIL ({secs:.1}s) {d}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
