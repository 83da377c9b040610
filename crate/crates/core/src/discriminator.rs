//! Pixel-level discriminator: a plain U-Net over `image ‖ segmentation map`
//! ending in a per-pixel sigmoid.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::nn::Mode;
use crate::segmenter::{DecoderKind, UNet, UNetConfig};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiscriminatorConfig {
    pub num_classes: usize,
    pub depth: usize,
    pub base_channels: usize,
}

impl DiscriminatorConfig {
    pub fn unet(&self) -> UNetConfig {
        UNetConfig {
            in_channels: 3 + self.num_classes,
            out_channels: 1,
            depth: self.depth,
            base_channels: self.base_channels,
            decoder: DecoderKind::Vanilla,
        }
    }
}

#[derive(Clone, Debug)]
pub struct DiscriminatorModel<T> {
    pub config: DiscriminatorConfig,
    pub net: UNet<T>,
}

impl<T: Scalar> DiscriminatorModel<T> {
    pub fn new(config: DiscriminatorConfig, seed: u64) -> Result<Self> {
        Ok(Self {
            config,
            net: UNet::new(config.unet(), seed)?,
        })
    }

    /// Per-pixel realness map `[B, 1, H, W]` in (0, 1).
    pub fn forward(&mut self, g: &mut Graph<T>, image: Var, segmap: Var, mode: Mode, trainable: bool) -> Result<Var> {
        let is = g.value(image).shape();
        let ss = g.value(segmap).shape();
        if is[1] != 3 || ss[1] != self.config.num_classes || [is[0], is[2], is[3]] != [ss[0], ss[2], ss[3]] {
            return Err(Error::ShapeMismatch(format!(
                "discriminator inputs image {is:?} and map {ss:?} (expected 3 and {} channels, aligned)",
                self.config.num_classes
            )));
        }
        let x = g.concat(&[image, segmap]);
        let out = self.net.forward(g, x, mode, trainable)?;
        Ok(g.sigmoid(out.logits))
    }

    pub fn infer(&mut self, image: &Tensor<T>, segmap: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let i = g.constant(image.clone());
        let s = g.constant(segmap.clone());
        let d = self.forward(&mut g, i, s, Mode::Eval, false)?;
        Ok(g.value(d).clone())
    }
}

/// Places a one-channel branch probability into the class layout: `p` in
/// `class_index`, `1 - p` in background, zeros elsewhere.
pub fn lift_binary<T: Scalar>(g: &mut Graph<T>, p: Var, class_index: usize, num_classes: usize) -> Var {
    let [n, c, h, w] = g.value(p).shape();
    assert_eq!(c, 1, "lift_binary expects a single channel");
    assert!(class_index > 0 && class_index < num_classes);
    let background = g.affine(p, -T::one(), T::one());
    let zeros = g.constant(Tensor::zeros([n, 1, h, w]));
    let parts: Vec<Var> = (0..num_classes)
        .map(|k| match k {
            0 => background,
            k if k == class_index => p,
            _ => zeros,
        })
        .collect();
    g.concat(&parts)
}

/// Tensor version of [`lift_binary`].
pub fn lift_binary_tensor<T: Scalar>(p: &Tensor<T>, class_index: usize, num_classes: usize) -> Tensor<T> {
    let mut g = Graph::new();
    let v = g.constant(p.clone());
    let y = lift_binary(&mut g, v, class_index, num_classes);
    g.value(y).clone()
}
