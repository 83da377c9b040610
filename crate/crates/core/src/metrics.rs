//! Evaluation for unbalanced multi-class vessel maps.
//!
//! Class 0 is background; every other class is scored one-vs-rest and the
//! per-class scores are averaged with weights equal to the number of ground
//! truth pixels of that class. Classes absent from the ground truth drop out
//! of both numerator and denominator.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// MSE is reported multiplied by this factor.
pub const MSE_REPORT_SCALE: f64 = 100.0;
/// Exact Mann-Whitney p-values up to this pooled sample size.
pub const EXACT_MWU_LIMIT: usize = 20;
/// Curve files keep at most this many points.
pub const MAX_CURVE_POINTS: usize = 2000;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinaryConfusion {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl BinaryConfusion {
    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    /// Sensitivity.
    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn specificity(&self) -> f64 {
        ratio(self.tn, self.tn + self.fp)
    }

    pub fn f1(&self) -> f64 {
        ratio(2 * self.tp, 2 * self.tp + self.fp + self.fn_)
    }
}

fn ratio(a: u64, b: u64) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// Ground-truth pixel count of every class.
pub fn class_counts(label: &[u8], num_classes: usize) -> Vec<u64> {
    let mut counts = vec![0u64; num_classes];
    for &l in label {
        counts[l as usize] += 1;
    }
    counts
}

/// One-vs-rest confusion of every class.
pub fn per_class_confusion(pred: &[u8], truth: &[u8], num_classes: usize) -> Result<Vec<BinaryConfusion>> {
    if pred.len() != truth.len() {
        return Err(Error::ShapeMismatch(format!("{} predicted vs {} true labels", pred.len(), truth.len())));
    }
    // joint[t][p]
    let mut joint = vec![vec![0u64; num_classes]; num_classes];
    for (&p, &t) in pred.iter().zip(truth) {
        joint[t as usize][p as usize] += 1;
    }
    let total = pred.len() as u64;
    Ok((0..num_classes)
        .map(|c| {
            let tp = joint[c][c];
            let row: u64 = joint[c].iter().sum();
            let col: u64 = joint.iter().map(|r| r[c]).sum();
            BinaryConfusion {
                tp,
                fp: col - tp,
                fn_: row - tp,
                tn: total + tp - row - col,
            }
        })
        .collect())
}

/// Count-weighted mean of per-foreground-class values. `values[k]` and
/// `counts[k]` belong to class `k + 1`.
pub fn weighted_mean(values: &[f64], counts: &[u64]) -> Result<f64> {
    let denom: u64 = counts.iter().sum();
    if denom == 0 {
        return Err(Error::AllCountsZero);
    }
    let num: f64 = values
        .iter()
        .zip(counts)
        .filter(|(_, &n)| n > 0)
        .map(|(v, &n)| v * n as f64)
        .sum();
    Ok(num / denom as f64)
}

/// Pixel-count weighted F1 over the foreground classes. `counts` holds the
/// ground-truth pixel count of classes `1..=counts.len()`.
pub fn weighted_f1(pred: &[u8], truth: &[u8], counts: &[u64]) -> Result<f64> {
    let conf = per_class_confusion(pred, truth, counts.len() + 1)?;
    let f1: Vec<f64> = conf[1..].iter().map(BinaryConfusion::f1).collect();
    weighted_mean(&f1, counts)
}

/// Count-weighted sensitivity over the foreground classes.
pub fn weighted_sensitivity(pred: &[u8], truth: &[u8], counts: &[u64]) -> Result<f64> {
    let conf = per_class_confusion(pred, truth, counts.len() + 1)?;
    let sen: Vec<f64> = conf[1..].iter().map(BinaryConfusion::recall).collect();
    weighted_mean(&sen, counts)
}

/// Per-pixel argmax over class channels of a `[1, C, H, W]` map.
pub fn argmax_labels<T: Scalar>(probs: &Tensor<T>) -> Vec<u8> {
    let c = probs.channels();
    let plane = probs.plane();
    (0..plane)
        .map(|i| {
            let mut best = 0;
            for k in 1..c {
                if probs.channel_plane(0, k)[i] > probs.channel_plane(0, best)[i] {
                    best = k;
                }
            }
            best as u8
        })
        .collect()
}

/// A polyline in the unit square.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    pub points: Vec<(f64, f64)>,
}

impl Curve {
    pub fn trapezoid_area(&self) -> f64 {
        self.points
            .windows(2)
            .map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0)
            .sum()
    }

    /// Keeps the endpoints and an evenly spaced subset of at most `max`
    /// points.
    pub fn thinned(&self, max: usize) -> Curve {
        let n = self.points.len();
        if n <= max || max < 2 {
            return self.clone();
        }
        let points = (0..max)
            .map(|i| self.points[i * (n - 1) / (max - 1)])
            .collect();
        Curve { points }
    }

    /// Two-column plain text, one point per line.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (x, y) in &self.points {
            s.push_str(&format!("{x:.9} {y:.9}\n"));
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Curve> {
        let mut points = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut it = line.split_whitespace().map(str::parse::<f64>);
            match (it.next(), it.next(), it.next()) {
                (Some(Ok(x)), Some(Ok(y)), None) => points.push((x, y)),
                _ => return Err(Error::Config(format!("curve line {}: expected two numbers", i + 1))),
            }
        }
        Ok(Curve { points })
    }
}

/// ROC and PR curves of one scored binary problem.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinaryCurves {
    pub roc: Curve,
    pub pr: Curve,
    pub auc_roc: f64,
    pub auc_pr: f64,
    pub positives: u64,
    pub negatives: u64,
}

/// Threshold sweep over every distinct score, highest first. ROC runs from
/// (0, 0) to (1, 1); the PR curve starts at recall 0 with the precision of
/// the highest threshold. Areas by the trapezoidal rule. `None` when either
/// class is missing.
pub fn binary_curves(scores: &[f64], labels: &[bool]) -> Option<BinaryCurves> {
    assert_eq!(scores.len(), labels.len());
    let positives = labels.iter().filter(|&&l| l).count() as u64;
    let negatives = labels.len() as u64 - positives;
    if positives == 0 || negatives == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_unstable_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (p, n) = (positives as f64, negatives as f64);
    let mut roc = vec![(0.0, 0.0)];
    let mut pr = Vec::new();
    let (mut tp, mut fp) = (0u64, 0u64);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        roc.push((fp as f64 / n, tp as f64 / p));
        let recall = tp as f64 / p;
        let precision = tp as f64 / (tp + fp) as f64;
        if pr.is_empty() {
            pr.push((0.0, precision));
        }
        pr.push((recall, precision));
    }
    let roc = Curve { points: roc };
    let pr = Curve { points: pr };
    Some(BinaryCurves {
        auc_roc: roc.trapezoid_area(),
        auc_pr: pr.trapezoid_area(),
        roc,
        pr,
        positives,
        negatives,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassCurves {
    pub class: usize,
    pub curves: Option<BinaryCurves>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AucReport {
    pub auc_roc: f64,
    pub auc_pr: f64,
    pub per_class: Vec<ClassCurves>,
    /// Foreground classes lacking positives or negatives; excluded from the
    /// weighted aggregate.
    pub degenerate: Vec<usize>,
}

fn check_maps<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch(format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

/// Scores and labels of class `c` across the batch.
fn class_scores<T: Scalar>(probs: &Tensor<T>, one_hot: &Tensor<T>, c: usize) -> (Vec<f64>, Vec<bool>) {
    let mut s = Vec::with_capacity(probs.batch() * probs.plane());
    let mut l = Vec::with_capacity(s.capacity());
    for n in 0..probs.batch() {
        s.extend(probs.channel_plane(n, c).iter().map(|v| v.to_f64_lossy()));
        l.extend(one_hot.channel_plane(n, c).iter().map(|v| v.to_f64_lossy() > 0.5));
    }
    (s, l)
}

/// One-vs-rest ROC/PR curves and their count-weighted aggregate areas over
/// the foreground classes.
pub fn auc_curves<T: Scalar>(probs: &Tensor<T>, one_hot: &Tensor<T>) -> Result<AucReport> {
    check_maps(probs, one_hot)?;
    let mut per_class = Vec::new();
    let mut degenerate = Vec::new();
    let (mut roc, mut pr, mut counts) = (Vec::new(), Vec::new(), Vec::new());
    for c in 1..probs.channels() {
        let (s, l) = class_scores(probs, one_hot, c);
        let curves = binary_curves(&s, &l);
        match &curves {
            Some(cv) => {
                roc.push(cv.auc_roc);
                pr.push(cv.auc_pr);
                counts.push(cv.positives);
            }
            None => degenerate.push(c),
        }
        per_class.push(ClassCurves { class: c, curves });
    }
    let (auc_roc, auc_pr) = if counts.is_empty() {
        (f64::NAN, f64::NAN)
    } else {
        (weighted_mean(&roc, &counts)?, weighted_mean(&pr, &counts)?)
    };
    Ok(AucReport {
        auc_roc,
        auc_pr,
        per_class,
        degenerate,
    })
}

/// Curves of all foreground channels pooled into one binary problem.
pub fn pooled_foreground_curves<T: Scalar>(probs: &Tensor<T>, one_hot: &Tensor<T>) -> Result<Option<BinaryCurves>> {
    check_maps(probs, one_hot)?;
    let (mut s, mut l) = (Vec::new(), Vec::new());
    for c in 1..probs.channels() {
        let (cs, cl) = class_scores(probs, one_hot, c);
        s.extend(cs);
        l.extend(cl);
    }
    Ok(binary_curves(&s, &l))
}

/// Raw mean squared error over every pixel and channel.
pub fn mse_score<T: Scalar>(probs: &Tensor<T>, one_hot: &Tensor<T>) -> Result<f64> {
    check_maps(probs, one_hot)?;
    let sum: f64 = probs
        .data()
        .iter()
        .zip(one_hot.data())
        .map(|(&p, &t)| {
            let d = p.to_f64_lossy() - t.to_f64_lossy();
            d * d
        })
        .sum();
    Ok(sum / probs.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MannWhitney {
    /// Statistic of the first sample: rank sum minus `m(m+1)/2`.
    pub u: f64,
    pub p_two_sided: f64,
    /// Alternative: first sample tends to be larger.
    pub p_greater: f64,
    /// Alternative: first sample tends to be smaller.
    pub p_less: f64,
    pub exact: bool,
}

/// Midranks (1-based, ties averaged) of the pooled sample.
pub fn midranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Mann-Whitney U test with midranks for ties. Exact null distribution by
/// counting rank subsets when `m + n <= 20`, tie-corrected normal
/// approximation with continuity correction otherwise.
pub fn mann_whitney_u(a: &[f64], b: &[f64]) -> Result<MannWhitney> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptySample);
    }
    let (m, n) = (a.len(), b.len());
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let ranks = midranks(&pooled);
    let rank_sum: f64 = ranks[..m].iter().sum();
    let u = rank_sum - (m * (m + 1)) as f64 / 2.0;
    if m + n <= EXACT_MWU_LIMIT {
        Ok(exact_mwu(&ranks, m, n, u))
    } else {
        Ok(normal_mwu(&pooled, m, n, u))
    }
}

fn exact_mwu(ranks: &[f64], m: usize, n: usize, u: f64) -> MannWhitney {
    // Doubled midranks are integers.
    let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
    let max_sum: usize = doubled.iter().sum();
    // ways[j][s]: subsets of size j with doubled rank sum s
    let mut ways = vec![vec![0u64; max_sum + 1]; m + 1];
    ways[0][0] = 1;
    for &r in &doubled {
        for j in (1..=m).rev() {
            for s in (r..=max_sum).rev() {
                ways[j][s] += ways[j - 1][s - r];
            }
        }
    }
    let total: u64 = ways[m].iter().sum();
    // 2U = 2R - m(m+1); compare in the doubled domain to stay exact.
    let offset = (m * (m + 1)) as i64;
    let mn = (m * n) as i64;
    let u2_obs = (2.0 * u).round() as i64;
    let dev_obs = (u2_obs - mn).abs();
    let (mut two, mut greater, mut less) = (0u64, 0u64, 0u64);
    for (s, &w) in ways[m].iter().enumerate() {
        if w == 0 {
            continue;
        }
        let u2 = s as i64 - offset;
        if (u2 - mn).abs() >= dev_obs {
            two += w;
        }
        if u2 >= u2_obs {
            greater += w;
        }
        if u2 <= u2_obs {
            less += w;
        }
    }
    let t = total as f64;
    MannWhitney {
        u,
        p_two_sided: two as f64 / t,
        p_greater: greater as f64 / t,
        p_less: less as f64 / t,
        exact: true,
    }
}

fn normal_mwu(pooled: &[f64], m: usize, n: usize, u: f64) -> MannWhitney {
    let big_n = (m + n) as f64;
    let mut sorted = pooled.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j + 1 < sorted.len() && sorted[j + 1] == sorted[i] {
            j += 1;
        }
        let t = (j - i + 1) as f64;
        tie_term += t * t * t - t;
        i = j + 1;
    }
    let (mf, nf) = (m as f64, n as f64);
    let mean = mf * nf / 2.0;
    let var = mf * nf / 12.0 * ((big_n + 1.0) - tie_term / (big_n * (big_n - 1.0)));
    if var <= 0.0 {
        return MannWhitney {
            u,
            p_two_sided: 1.0,
            p_greater: 1.0,
            p_less: 1.0,
            exact: false,
        };
    }
    let sd = var.sqrt();
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    let two = 2.0 * (1.0 - normal.cdf((((u - mean).abs() - 0.5) / sd).max(0.0)));
    MannWhitney {
        u,
        p_two_sided: two.min(1.0),
        p_greater: 1.0 - normal.cdf((u - mean - 0.5) / sd),
        p_less: normal.cdf((u - mean + 0.5) / sd),
        exact: false,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: usize,
    pub pixels: u64,
    pub sensitivity: f64,
    pub precision: f64,
    pub f1: f64,
    pub auc_roc: Option<f64>,
    pub auc_pr: Option<f64>,
}

/// Scores of one image. Rates are in [0, 1]; tables multiply by 100.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageMetrics {
    pub id: String,
    pub sensitivity: f64,
    pub f1: f64,
    pub auc_roc: f64,
    pub auc_pr: f64,
    pub mse_raw: f64,
    /// Logged for completeness only.
    pub accuracy: f64,
    pub specificity: f64,
    pub per_class: Vec<ClassMetrics>,
    pub degenerate_classes: Vec<usize>,
}

impl ImageMetrics {
    pub fn mse_reported(&self) -> f64 {
        self.mse_raw * MSE_REPORT_SCALE
    }
}

/// One-hot `[1, C, H, W]` map of a label plane.
pub fn one_hot<T: Scalar>(label: &[u8], num_classes: usize, height: usize, width: usize) -> Tensor<T> {
    let mut t = Tensor::zeros([1, num_classes, height, width]);
    for (i, &l) in label.iter().enumerate() {
        t.channel_plane_mut(0, l as usize)[i] = T::one();
    }
    t
}

/// Scores one image from class probabilities `[1, C, H, W]` and the
/// ground-truth label plane.
pub fn evaluate_image<T: Scalar>(id: &str, probs: &Tensor<T>, truth: &[u8]) -> Result<ImageMetrics> {
    let [_, c, h, w] = probs.shape();
    if truth.len() != h * w {
        return Err(Error::ShapeMismatch(format!("label has {} pixels, map {h}x{w}", truth.len())));
    }
    let pred = argmax_labels(probs);
    let conf = per_class_confusion(&pred, truth, c)?;
    let counts = class_counts(truth, c);
    let fg = &counts[1..];
    let target: Tensor<T> = one_hot(truth, c, h, w);
    let auc = auc_curves(probs, &target)?;
    let per_class: Vec<ClassMetrics> = (1..c)
        .map(|k| {
            let curves = auc.per_class[k - 1].curves.as_ref();
            ClassMetrics {
                class: k,
                pixels: counts[k],
                sensitivity: conf[k].recall(),
                precision: conf[k].precision(),
                f1: conf[k].f1(),
                auc_roc: curves.map(|cv| cv.auc_roc),
                auc_pr: curves.map(|cv| cv.auc_pr),
            }
        })
        .collect();
    let f1: Vec<f64> = per_class.iter().map(|m| m.f1).collect();
    let sen: Vec<f64> = per_class.iter().map(|m| m.sensitivity).collect();
    let correct: u64 = (0..c).map(|k| conf[k].tp).sum();
    let fg_conf = per_class_confusion(
        &pred.iter().map(|&p| u8::from(p > 0)).collect::<Vec<_>>(),
        &truth.iter().map(|&t| u8::from(t > 0)).collect::<Vec<_>>(),
        2,
    )?;
    Ok(ImageMetrics {
        id: id.to_string(),
        sensitivity: weighted_mean(&sen, fg)?,
        f1: weighted_mean(&f1, fg)?,
        auc_roc: auc.auc_roc,
        auc_pr: auc.auc_pr,
        mse_raw: mse_score(probs, &target)?,
        accuracy: correct as f64 / truth.len() as f64,
        specificity: fg_conf[1].specificity(),
        per_class,
        degenerate_classes: auc.degenerate,
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Summary {
        let v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
        if v.is_empty() {
            return Summary { mean: f64::NAN, std: f64::NAN };
        }
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / v.len() as f64;
        Summary { mean, std: var.sqrt() }
    }
}

/// Metric names in table order.
pub const METRIC_NAMES: [&str; 5] = ["Sen", "F1", "ROC", "PR", "MSE"];

/// Per-split report: per-image rows plus mean/std summaries.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub name: String,
    pub images: Vec<ImageMetrics>,
    pub sensitivity: Summary,
    pub f1: Summary,
    pub auc_roc: Summary,
    pub auc_pr: Summary,
    /// Of the raw MSE.
    pub mse_raw: Summary,
    /// Pooled foreground curves across the split, thinned for plotting.
    pub roc_curve: Curve,
    pub pr_curve: Curve,
}

impl MetricReport {
    pub fn from_images(name: &str, images: Vec<ImageMetrics>, pooled: Option<BinaryCurves>) -> MetricReport {
        let col = |f: fn(&ImageMetrics) -> f64| Summary::of(&images.iter().map(f).collect::<Vec<_>>());
        let (roc_curve, pr_curve) = pooled
            .map(|c| (c.roc.thinned(MAX_CURVE_POINTS), c.pr.thinned(MAX_CURVE_POINTS)))
            .unwrap_or_default();
        MetricReport {
            name: name.to_string(),
            sensitivity: col(|m| m.sensitivity),
            f1: col(|m| m.f1),
            auc_roc: col(|m| m.auc_roc),
            auc_pr: col(|m| m.auc_pr),
            mse_raw: col(|m| m.mse_raw),
            images,
            roc_curve,
            pr_curve,
        }
    }

    /// Per-image values of a table column (`Sen`, `F1`, `ROC`, `PR`, `MSE`),
    /// in table units.
    pub fn column(&self, metric: &str) -> Option<Vec<f64>> {
        let f: fn(&ImageMetrics) -> f64 = match metric {
            "Sen" => |m| m.sensitivity * 100.0,
            "F1" => |m| m.f1 * 100.0,
            "ROC" => |m| m.auc_roc * 100.0,
            "PR" => |m| m.auc_pr * 100.0,
            "MSE" => |m| m.mse_reported(),
            _ => return None,
        };
        Some(self.images.iter().map(f).collect())
    }

    /// `mean±std` per table column, in table units.
    pub fn table_row(&self) -> Vec<String> {
        let fmt = |s: Summary, k: f64| format!("{:.2}±{:.2}", s.mean * k, s.std * k);
        vec![
            fmt(self.sensitivity, 100.0),
            fmt(self.f1, 100.0),
            fmt(self.auc_roc, 100.0),
            fmt(self.auc_pr, 100.0),
            fmt(self.mse_raw, MSE_REPORT_SCALE),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn perfect_prediction_scores_one() {
        let truth = [0u8, 1, 2, 3, 1, 0];
        let counts = [2, 1, 1];
        assert_eq!(weighted_f1(&truth, &truth, &counts).unwrap(), 1.0);
    }

    #[test]
    fn all_background_truth_is_an_error() {
        assert!(matches!(weighted_f1(&[0, 1], &[0, 0], &[0, 0, 0]), Err(Error::AllCountsZero)));
    }

    #[test]
    fn equal_class_scores_average_to_themselves() {
        assert_abs_diff_eq!(weighted_mean(&[0.7, 0.7, 0.7], &[3, 11, 1]).unwrap(), 0.7, epsilon = 1e-15);
        // absent class drops out
        assert_abs_diff_eq!(weighted_mean(&[0.5, 0.9, 0.0], &[1, 1, 0]).unwrap(), 0.7, epsilon = 1e-15);
    }

    #[test]
    fn f1_is_harmonic_mean_of_precision_and_recall() {
        let c = BinaryConfusion { tp: 7, fp: 3, fn_: 5, tn: 10 };
        let (p, r) = (c.precision(), c.recall());
        assert_abs_diff_eq!(c.f1(), 2.0 * p * r / (p + r), epsilon = 1e-15);
    }

    #[test]
    fn separating_and_constant_scores() {
        let labels = [true, true, false, false, false];
        let sep = binary_curves(&[0.9, 0.8, 0.3, 0.2, 0.1], &labels).unwrap();
        assert_eq!(sep.auc_roc, 1.0);
        assert_eq!(sep.auc_pr, 1.0);
        assert!(sep.roc.points.contains(&(0.0, 1.0)));
        let flat = binary_curves(&[0.5; 5], &labels).unwrap();
        assert_eq!(flat.auc_roc, 0.5);
        assert!(binary_curves(&[0.1, 0.2], &[false, false]).is_none());
    }

    #[test]
    fn degenerate_classes_are_reported() {
        let probs = Tensor::<f64>::from_vec([1, 3, 1, 2], vec![0.5, 0.5, 0.9, 0.1, 0.3, 0.3]);
        let truth = one_hot::<f64>(&[1, 0], 3, 1, 2);
        let r = auc_curves(&probs, &truth).unwrap();
        assert_eq!(r.degenerate, vec![2]);
        assert_eq!(r.auc_roc, 1.0);
    }

    #[test]
    fn mse_of_half_against_one_hot() {
        let truth = one_hot::<f64>(&[0, 1, 2, 3], 4, 2, 2);
        let half = Tensor::full([1, 4, 2, 2], 0.5);
        let raw = mse_score(&half, &truth).unwrap();
        assert_eq!(raw, 0.25);
        assert_eq!(raw * MSE_REPORT_SCALE, 25.0);
        assert_eq!(mse_score(&truth, &truth).unwrap(), 0.0);
    }

    #[test]
    fn mann_whitney_small_cases() {
        let same = mann_whitney_u(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(same.u, 4.5);
        assert_eq!(same.p_two_sided, 1.0);
        let apart = mann_whitney_u(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]).unwrap();
        assert_eq!(apart.u, 0.0);
        assert_eq!(apart.p_two_sided, 0.1);
        assert_eq!(apart.p_less, 0.05);
        assert!(apart.exact);
        let shifted = mann_whitney_u(&[11.0, 12.0, 13.0], &[14.0, 15.0, 16.0]).unwrap();
        assert_eq!(shifted, apart);
        assert!(matches!(mann_whitney_u(&[], &[1.0]), Err(Error::EmptySample)));
    }

    #[test]
    fn normal_approximation_for_large_samples() {
        let a: Vec<f64> = (0..15).map(|i| i as f64).collect();
        let b: Vec<f64> = (0..15).map(|i| i as f64 + 0.5).collect();
        let r = mann_whitney_u(&a, &b).unwrap();
        assert!(!r.exact);
        assert!(r.p_two_sided > 0.5 && r.p_two_sided <= 1.0);
        let far: Vec<f64> = (0..15).map(|i| i as f64 + 100.0).collect();
        let r = mann_whitney_u(&a, &far).unwrap();
        assert!(r.p_two_sided < 1e-5);
        assert_eq!(r.u, 0.0);
    }

    #[test]
    fn curve_text_round_trip() {
        let c = Curve { points: vec![(0.0, 0.0), (0.25, 0.5), (1.0, 1.0)] };
        assert_eq!(Curve::from_text(&c.to_text()).unwrap(), c);
        assert!(Curve::from_text("1 2 3").is_err());
        let long = Curve { points: (0..100).map(|i| (i as f64, 0.0)).collect() };
        let t = long.thinned(10);
        assert_eq!(t.points.len(), 10);
        assert_eq!(t.points[0], (0.0, 0.0));
        assert_eq!(t.points[9], (99.0, 0.0));
    }
}
