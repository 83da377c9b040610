//! Binary-to-multi-class fusion network.
//!
//! Three segmenters read the same image: an artery branch and a vein branch
//! (one output channel each) and the multi-class main branch. The artery
//! probability map, the main-branch logits and the vein probability map are
//! concatenated in that order (`f_a ‖ f_m ‖ f_v`, `C + 2` channels) and a
//! single 1x1 convolution produces the fused class logits. Side heads on the
//! main branch's decoder features provide deep supervision.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::nn::{Conv, Mode, ParamSet};
use crate::segmenter::{SegmenterConfig, SegmenterModel};
use crate::tensor::{Scalar, Tensor};

/// Seed offsets so branches never share an initialisation stream.
const MAIN_SEED: u64 = 0;
const ARTERY_SEED: u64 = 1;
const VEIN_SEED: u64 = 2;
const HEADS_SEED: u64 = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FusionConfig {
    pub num_classes: usize,
    pub depth: usize,
    pub base_channels: usize,
    /// Skip-connection merging blocks in every decoder (otherwise plain
    /// double convolutions).
    pub merge_blocks: bool,
    pub deep_supervision: bool,
    pub binary_fusion: bool,
}

impl FusionConfig {
    pub fn main_branch(&self) -> SegmenterConfig {
        SegmenterConfig {
            depth: self.depth,
            base_channels: self.base_channels,
            out_channels: self.num_classes,
            merge_blocks: self.merge_blocks,
        }
    }

    pub fn binary_branch(&self) -> SegmenterConfig {
        SegmenterConfig {
            out_channels: 1,
            ..self.main_branch()
        }
    }
}

/// 1x1 convolution to class channels, bilinear upsampling to label size,
/// sigmoid.
#[derive(Clone, Debug)]
pub struct SideHead {
    pub conv: Conv,
}

impl SideHead {
    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &ParamSet<T>, feature: Var, full: (usize, usize), trainable: bool) -> Result<Var> {
        let c = g.value(feature).channels();
        if c != self.conv.in_channels {
            return Err(Error::ShapeMismatch(format!(
                "side head expects {} channels, got {c}",
                self.conv.in_channels
            )));
        }
        let y = self.conv.forward(g, p, feature, trainable);
        let y = g.resize(y, full.0, full.1);
        Ok(g.sigmoid(y))
    }
}

/// Graph handles produced by [`FusionModel::forward`].
#[derive(Clone, Copy, Debug)]
pub struct FusionOutput {
    pub fused_logits: Var,
    pub fused_probs: Var,
    pub main_logits: Var,
    /// `f_a`, `f_v`: sigmoid maps of the binary branches.
    pub artery_prob: Option<Var>,
    pub vein_prob: Option<Var>,
    /// `f_s1, f_s2, f_s3`, deepest first, at full resolution.
    pub side_probs: Option<[Var; 3]>,
}

#[derive(Clone, Debug)]
pub struct FusionModel<T> {
    pub config: FusionConfig,
    pub main: SegmenterModel<T>,
    pub artery: Option<SegmenterModel<T>>,
    pub vein: Option<SegmenterModel<T>>,
    /// Fusion head and side heads.
    pub heads: ParamSet<T>,
    pub fusion_head: Option<Conv>,
    pub side_heads: Option<[SideHead; 3]>,
}

impl<T: Scalar> FusionModel<T> {
    pub fn new(config: FusionConfig, seed: u64) -> Result<Self> {
        let main = SegmenterModel::new(config.main_branch(), seed.wrapping_mul(4).wrapping_add(MAIN_SEED))?;
        let (artery, vein) = if config.binary_fusion {
            (
                Some(SegmenterModel::new(config.binary_branch(), seed.wrapping_mul(4).wrapping_add(ARTERY_SEED))?),
                Some(SegmenterModel::new(config.binary_branch(), seed.wrapping_mul(4).wrapping_add(VEIN_SEED))?),
            )
        } else {
            (None, None)
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(4).wrapping_add(HEADS_SEED));
        let mut heads = ParamSet::new();
        let c = config.num_classes;
        let fusion_head = config
            .binary_fusion
            .then(|| Conv::new(&mut heads, "fusion_head", c + 2, c, 1, true, &mut rng));
        let side_heads = config.deep_supervision.then(|| {
            let unet = config.main_branch().unet();
            [1, 2, 3].map(|i| SideHead {
                conv: Conv::new(&mut heads, &format!("side{i}"), unet.side_channels(i), c, 1, true, &mut rng),
            })
        });
        let mut model = Self {
            config,
            main,
            artery,
            vein,
            heads,
            fusion_head,
            side_heads,
        };
        model.set_pass_through();
        Ok(model)
    }

    /// All parameter sets of the generator, in a fixed order.
    pub fn param_sets(&self) -> Vec<&ParamSet<T>> {
        let mut v = vec![self.main.params()];
        v.extend(self.artery.as_ref().map(|m| m.params()));
        v.extend(self.vein.as_ref().map(|m| m.params()));
        v.push(&self.heads);
        v
    }

    pub fn param_sets_mut(&mut self) -> Vec<&mut ParamSet<T>> {
        let mut v = vec![self.main.params_mut()];
        v.extend(self.artery.as_mut().map(|m| m.params_mut()));
        v.extend(self.vein.as_mut().map(|m| m.params_mut()));
        v.push(&mut self.heads);
        v
    }

    pub fn num_scalars(&self) -> usize {
        self.param_sets().iter().map(|p| p.num_scalars()).sum()
    }

    /// Sets the fusion head to copy the main-branch logits: identity on the
    /// `f_m` columns, zero on `f_a`, `f_v`, zero bias. New models start this
    /// way so the main branch trains from the first step.
    pub fn set_pass_through(&mut self) {
        let Some(head) = &self.fusion_head else { return };
        let c = self.config.num_classes;
        let w = self.heads.get_mut(head.weight);
        w.data_mut().fill(T::zero());
        for k in 0..c {
            let i = w.index(k, 1 + k, 0, 0);
            w.data_mut()[i] = T::one();
        }
        if let Some(b) = head.bias {
            self.heads.get_mut(b).data_mut().fill(T::zero());
        }
    }

    pub fn forward(&mut self, g: &mut Graph<T>, image: Var, mode: Mode, trainable: bool) -> Result<FusionOutput> {
        let [_, _, h, w] = g.value(image).shape();
        let main = self.main.forward(g, image, mode, trainable)?;
        let mut artery_prob = None;
        let mut vein_prob = None;
        let fused_logits = match (&mut self.artery, &mut self.vein, &self.fusion_head) {
            (Some(a), Some(v), Some(head)) => {
                let fa = a.forward(g, image, mode, trainable)?.logits;
                let fa = g.sigmoid(fa);
                let fv = v.forward(g, image, mode, trainable)?.logits;
                let fv = g.sigmoid(fv);
                artery_prob = Some(fa);
                vein_prob = Some(fv);
                let cat = g.concat(&[fa, main.logits, fv]);
                head.forward(g, &self.heads, cat, trainable)
            }
            _ => main.logits,
        };
        let side_probs = match &self.side_heads {
            Some(heads) => {
                let mut out = [main.logits; 3];
                for (i, head) in heads.iter().enumerate() {
                    out[i] = head.forward(g, &self.heads, main.side_features[i], (h, w), trainable)?;
                }
                Some(out)
            }
            None => None,
        };
        let fused_probs = g.sigmoid(fused_logits);
        Ok(FusionOutput {
            fused_logits,
            fused_probs,
            main_logits: main.logits,
            artery_prob,
            vein_prob,
            side_probs,
        })
    }

    /// Eval-mode forward returning owned maps.
    pub fn infer(&mut self, image: &Tensor<T>) -> Result<Prediction<T>> {
        let mut g = Graph::new();
        let x = g.constant(image.clone());
        let out = self.forward(&mut g, x, Mode::Eval, false)?;
        let take = |v: Var| g.value(v).clone();
        Ok(Prediction {
            fused_logits: take(out.fused_logits),
            fused_probs: take(out.fused_probs),
            main_logits: take(out.main_logits),
            artery_prob: out.artery_prob.map(take),
            vein_prob: out.vein_prob.map(take),
            side_probs: out.side_probs.map(|s| s.map(take)),
        })
    }

    /// The ensemble baseline: class probabilities assembled from the two
    /// binary branches alone, fusion head bypassed.
    pub fn ensemble_probs(&mut self, image: &Tensor<T>) -> Result<Tensor<T>> {
        let pred = self.infer(image)?;
        match (pred.artery_prob, pred.vein_prob) {
            (Some(a), Some(v)) => Ok(ensemble_from_binary(&a, &v)),
            _ => Err(Error::Config("ensemble needs the binary branches".into())),
        }
    }
}

/// Owned outputs of an inference pass.
#[derive(Clone, Debug)]
pub struct Prediction<T> {
    pub fused_logits: Tensor<T>,
    pub fused_probs: Tensor<T>,
    pub main_logits: Tensor<T>,
    pub artery_prob: Option<Tensor<T>>,
    pub vein_prob: Option<Tensor<T>>,
    pub side_probs: Option<[Tensor<T>; 3]>,
}

/// Four-class map (background, artery, vein, uncertain) from independent
/// artery and vein probabilities.
pub fn ensemble_from_binary<T: Scalar>(artery: &Tensor<T>, vein: &Tensor<T>) -> Tensor<T> {
    let [n, _, h, w] = artery.shape();
    let mut out = Tensor::zeros([n, 4, h, w]);
    let one = T::one();
    for s in 0..n {
        for i in 0..h * w {
            let a = artery.channel_plane(s, 0)[i];
            let v = vein.channel_plane(s, 0)[i];
            let probs = [(one - a) * (one - v), a * (one - v), v * (one - a), a * v];
            for (c, p) in probs.into_iter().enumerate() {
                out.channel_plane_mut(s, c)[i] = p;
            }
        }
    }
    out
}
