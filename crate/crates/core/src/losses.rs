//! Adversarial, segmentation and deep-supervised fusion objectives.
//!
//! Every loss exists twice: as a plain function over tensors returning a
//! [`LossReport`] (evaluation and logging), and as a graph builder used by the
//! training loop. Tests pin the two to each other.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{sigmoid, Graph, Var};
use crate::tensor::{Scalar, Tensor};

/// Probabilities are clamped to `[PROB_EPS, 1 - PROB_EPS]` before logs.
pub const PROB_EPS: f64 = 1e-7;

/// Side-output weights `1/2^i`, `i = 1` being the deepest side output.
pub const SIDE_WEIGHTS: [f64; 3] = [0.5, 0.25, 0.125];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    /// Adversarial term.
    pub alpha: f64,
    /// Binary cross-entropy term.
    pub beta: f64,
    /// Mean squared error term.
    pub gamma: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha: 0.08,
            beta: 1.1,
            gamma: 0.5,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta), ("gamma", self.gamma)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("loss weight {name} must be non-negative, got {v}")));
            }
        }
        Ok(())
    }

    /// `alpha * gan + beta * bce + gamma * mse`.
    pub fn combine(&self, gan: f64, bce: f64, mse: f64) -> f64 {
        self.alpha * gan + self.beta * bce + self.gamma * mse
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SideTerm {
    /// 1 = deepest.
    pub level: usize,
    pub bce: f64,
    pub mse: f64,
}

impl SideTerm {
    pub fn weight(&self) -> f64 {
        SIDE_WEIGHTS[self.level - 1]
    }

    /// `beta * bce + gamma * mse`, before the `1/2^i` weight.
    pub fn combined(&self, w: &LossWeights) -> f64 {
        w.beta * self.bce + w.gamma * self.mse
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub l_gan: f64,
    pub l_bce: f64,
    pub l_mse: f64,
    pub side_terms: Vec<SideTerm>,
    pub total: f64,
}

impl LossReport {
    pub fn recompute_total(&self, w: &LossWeights) -> f64 {
        w.combine(self.l_gan, self.l_bce, self.l_mse)
            + self
                .side_terms
                .iter()
                .map(|s| s.weight() * s.combined(w))
                .sum::<f64>()
    }
}

fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_EPS, 1.0 - PROB_EPS)
}

fn bce(p: f64, t: f64) -> f64 {
    let p = clamp_prob(p);
    -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
}

fn check_open_unit<T: Scalar>(what: &'static str, t: &Tensor<T>) -> Result<()> {
    match t.data().iter().map(|v| v.to_f64_lossy()).find(|v| !(*v > 0.0 && *v < 1.0)) {
        Some(value) => Err(Error::DomainError { what, value }),
        None => Ok(()),
    }
}

fn same_shape<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch(format!("{what}: {:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

fn mean_bce_const<T: Scalar>(p: &Tensor<T>, t: f64) -> f64 {
    p.data().iter().map(|&v| bce(v.to_f64_lossy(), t)).sum::<f64>() / p.len() as f64
}

/// Pixel-mean BCE objectives of the pixel-level discriminator:
/// `(L_d1, L_d2, L_G)` = (real vs ones, fake vs zeros, fake vs ones).
pub fn adversarial_losses<T: Scalar>(d_real: &Tensor<T>, d_fake: &Tensor<T>) -> Result<(f64, f64, f64)> {
    check_open_unit("discriminator real map", d_real)?;
    check_open_unit("discriminator fake map", d_fake)?;
    Ok((
        mean_bce_const(d_real, 1.0),
        mean_bce_const(d_fake, 0.0),
        mean_bce_const(d_fake, 1.0),
    ))
}

fn bce_mse<T: Scalar>(probs: &Tensor<T>, target: &Tensor<T>) -> (f64, f64) {
    let n = probs.len() as f64;
    let (mut b, mut m) = (0.0, 0.0);
    for (&p, &t) in probs.data().iter().zip(target.data()) {
        let (p, t) = (p.to_f64_lossy(), t.to_f64_lossy());
        b += bce(p, t);
        m += (p - t) * (p - t);
    }
    (b / n, m / n)
}

/// Segmentation loss `alpha * L_GAN + beta * L_BCE + gamma * L_MSE`. BCE and
/// MSE use per-class sigmoid probabilities of `pred_logits` against the
/// one-hot target. `d_fake = None` drops the adversarial term.
pub fn seg_loss<T: Scalar>(
    pred_logits: &Tensor<T>,
    target_one_hot: &Tensor<T>,
    d_fake: Option<&Tensor<T>>,
    weights: &LossWeights,
) -> Result<LossReport> {
    same_shape(pred_logits, target_one_hot, "prediction vs target")?;
    let probs = pred_logits.map(sigmoid);
    let (l_bce, l_mse) = bce_mse(&probs, target_one_hot);
    let l_gan = match d_fake {
        Some(d) => {
            check_open_unit("discriminator fake map", d)?;
            mean_bce_const(d, 1.0)
        }
        None => 0.0,
    };
    Ok(LossReport {
        l_gan,
        l_bce,
        l_mse,
        side_terms: Vec::new(),
        total: weights.combine(l_gan, l_bce, l_mse),
    })
}

/// Adds the three deep-supervision terms (side probabilities at full label
/// resolution, deepest first) to a segmentation report.
pub fn fusion_loss<T: Scalar>(
    main: &LossReport,
    side_preds: &[Tensor<T>],
    target_one_hot: &Tensor<T>,
    weights: &LossWeights,
) -> Result<LossReport> {
    if side_preds.len() != 3 {
        return Err(Error::WrongSideCount(side_preds.len()));
    }
    let mut report = main.clone();
    for (i, side) in side_preds.iter().enumerate() {
        same_shape(side, target_one_hot, "side output vs target")?;
        let (bce, mse) = bce_mse(side, target_one_hot);
        let term = SideTerm { level: i + 1, bce, mse };
        report.total += term.weight() * term.combined(weights);
        report.side_terms.push(term);
    }
    Ok(report)
}

/// Graph nodes of one segmentation (and optionally fusion) loss.
#[derive(Clone, Debug)]
pub struct LossVars {
    pub gan: Option<Var>,
    pub bce: Var,
    pub mse: Var,
    pub sides: Vec<(Var, Var)>,
    pub total: Var,
}

impl LossVars {
    pub fn report<T: Scalar>(&self, g: &Graph<T>) -> LossReport {
        let v = |x: Var| g.value(x).data()[0].to_f64_lossy();
        LossReport {
            l_gan: self.gan.map(v).unwrap_or(0.0),
            l_bce: v(self.bce),
            l_mse: v(self.mse),
            side_terms: self
                .sides
                .iter()
                .enumerate()
                .map(|(i, &(b, m))| SideTerm {
                    level: i + 1,
                    bce: v(b),
                    mse: v(m),
                })
                .collect(),
            total: v(self.total),
        }
    }
}

fn ones_like<T: Scalar>(g: &Graph<T>, v: Var) -> Tensor<T> {
    Tensor::full(g.value(v).shape(), T::one())
}

/// Graph form of [`seg_loss`] on probabilities `probs`; `d_fake` is the
/// discriminator map of the generated segmentation.
pub fn seg_loss_graph<T: Scalar>(g: &mut Graph<T>, probs: Var, target: &Tensor<T>, d_fake: Option<Var>, w: &LossWeights) -> LossVars {
    let eps = T::from_f64_lossy(PROB_EPS);
    let bce = g.bce_mean(probs, target, eps);
    let mse = g.mse_mean(probs, target);
    let gan = d_fake.map(|d| {
        let ones = ones_like(g, d);
        g.bce_mean(d, &ones, eps)
    });
    let f = T::from_f64_lossy;
    let mut terms = vec![(bce, f(w.beta)), (mse, f(w.gamma))];
    if let Some(gan) = gan {
        terms.insert(0, (gan, f(w.alpha)));
    }
    let total = g.weighted_sum(&terms);
    LossVars {
        gan,
        bce,
        mse,
        sides: Vec::new(),
        total,
    }
}

/// Graph form of [`fusion_loss`].
pub fn fusion_loss_graph<T: Scalar>(g: &mut Graph<T>, main: LossVars, side_probs: &[Var; 3], target: &Tensor<T>, w: &LossWeights) -> LossVars {
    let eps = T::from_f64_lossy(PROB_EPS);
    let f = T::from_f64_lossy;
    let mut terms = vec![(main.total, T::one())];
    let mut sides = Vec::with_capacity(3);
    for (i, &p) in side_probs.iter().enumerate() {
        let bce = g.bce_mean(p, target, eps);
        let mse = g.mse_mean(p, target);
        terms.push((bce, f(SIDE_WEIGHTS[i] * w.beta)));
        terms.push((mse, f(SIDE_WEIGHTS[i] * w.gamma)));
        sides.push((bce, mse));
    }
    let total = g.weighted_sum(&terms);
    LossVars {
        sides,
        total,
        ..main
    }
}

/// Discriminator objective `L_d1 + L_d2` for one real/fake pair.
pub fn discriminator_loss_graph<T: Scalar>(g: &mut Graph<T>, d_real: Var, d_fake: Var) -> (Var, Var) {
    let eps = T::from_f64_lossy(PROB_EPS);
    let ones = ones_like(g, d_real);
    let zeros = Tensor::zeros(g.value(d_fake).shape());
    (g.bce_mean(d_real, &ones, eps), g.bce_mean(d_fake, &zeros, eps))
}
