//! U-Net generator whose decoder levels are skip-connection merging blocks.
//!
//! A merging block takes the concatenation `f = [up ‖ skip]` with `N`
//! channels and produces `C_b` channels as the sum of two paths:
//!
//! * main path: two (3x3 conv, batch norm, ReLU) blocks mapping `N -> C_b`;
//! * skip path: batch norm + ReLU applied to the *grouped channel sum*, where
//!   output channel `k` sums the `N / C_b` consecutive input channels
//!   `k * N/C_b .. (k+1) * N/C_b`.
//!
//! With `N = 2 C_b` the groups are channel pairs and never straddle the
//! boundary between the up-sampled half and the skip half.

use std::ops::Range;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::nn::{BatchNorm, Conv, DoubleConv, Mode, ParamSet};
use crate::tensor::{Scalar, Tensor};

/// Input channels `[k*N/C_b, (k+1)*N/C_b)` summed into output channel `k`.
pub fn group_members(in_channels: usize, out_channels: usize, k: usize) -> Range<usize> {
    let size = in_channels / out_channels;
    k * size..(k + 1) * size
}

/// Skip-path grouped channel sum of a `[B, N, H, W]` tensor.
pub fn grouped_channel_sum<T: Scalar>(f: &Tensor<T>, out_channels: usize) -> Result<Tensor<T>> {
    let n = f.channels();
    if out_channels == 0 || n % out_channels != 0 {
        return Err(Error::ChannelMismatch {
            in_channels: n,
            out_channels,
        });
    }
    let mut g = Graph::new();
    let x = g.constant(f.clone());
    let y = g.group_sum(x, out_channels);
    Ok(g.value(y).clone())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MergeBlockSpec {
    pub in_channels: usize,
    pub out_channels: usize,
}

impl MergeBlockSpec {
    pub fn validate(&self) -> Result<()> {
        if self.out_channels == 0 || self.in_channels % self.out_channels != 0 {
            return Err(Error::ChannelMismatch {
                in_channels: self.in_channels,
                out_channels: self.out_channels,
            });
        }
        Ok(())
    }

    pub fn group_size(&self) -> usize {
        self.in_channels / self.out_channels
    }
}

#[derive(Clone, Debug)]
pub struct MergeBlock {
    pub spec: MergeBlockSpec,
    pub main: DoubleConv,
    pub skip_bn: BatchNorm,
}

/// Which path(s) of a merging block contribute to its output. `Both` is the
/// real block; the single-path variants exist for ablation and testing.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MergePaths {
    Both,
    SkipOnly,
    MainOnly,
}

impl MergeBlock {
    pub fn new<T: Scalar>(params: &mut ParamSet<T>, name: &str, spec: MergeBlockSpec, rng: &mut ChaCha8Rng) -> Result<Self> {
        spec.validate()?;
        Ok(Self {
            spec,
            main: DoubleConv::new(params, &format!("{name}.main"), spec.in_channels, spec.out_channels, rng),
            skip_bn: BatchNorm::new(params, &format!("{name}.skip_bn"), spec.out_channels),
        })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &mut ParamSet<T>, f: Var, mode: Mode, trainable: bool) -> Result<Var> {
        self.forward_paths(g, p, f, mode, trainable, MergePaths::Both)
    }

    pub fn forward_paths<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        p: &mut ParamSet<T>,
        f: Var,
        mode: Mode,
        trainable: bool,
        paths: MergePaths,
    ) -> Result<Var> {
        let n = g.value(f).channels();
        if n != self.spec.in_channels {
            return Err(Error::ShapeMismatch(format!(
                "merge block expects {} channels, got {n}",
                self.spec.in_channels
            )));
        }
        let skip = |g: &mut Graph<T>, p: &mut ParamSet<T>| {
            let s = g.group_sum(f, self.spec.out_channels);
            let s = self.skip_bn.forward(g, p, s, mode, trainable);
            g.relu(s)
        };
        Ok(match paths {
            MergePaths::Both => {
                let main = self.main.forward(g, p, f, mode, trainable);
                let s = skip(g, p);
                g.add(main, s)
            }
            MergePaths::SkipOnly => skip(g, p),
            MergePaths::MainOnly => self.main.forward(g, p, f, mode, trainable),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum DecoderKind {
    /// Skip-connection merging blocks.
    Merge,
    /// Plain double convolution after concatenation.
    Vanilla,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct UNetConfig {
    pub in_channels: usize,
    pub out_channels: usize,
    pub depth: usize,
    pub base_channels: usize,
    pub decoder: DecoderKind,
}

impl UNetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.depth < 2 {
            return Err(Error::Config(format!("depth must be at least 2, got {}", self.depth)));
        }
        if self.base_channels == 0 || self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::Config("channel counts must be positive".into()));
        }
        Ok(())
    }

    pub fn channels_at(&self, level: usize) -> usize {
        self.base_channels << level
    }

    /// Required divisor of the input height and width.
    pub fn spatial_divisor(&self) -> usize {
        1 << (self.depth - 1)
    }

    /// Resolution level (number of halvings) of side feature `i` in 1..=3.
    /// Taps sit at 1/8, 1/4 and 1/2 scale, deepest first, clamped to the
    /// bottleneck for shallow networks.
    pub fn side_level(&self, i: usize) -> usize {
        (4 - i).min(self.depth - 1)
    }

    pub fn side_channels(&self, i: usize) -> usize {
        self.channels_at(self.side_level(i))
    }
}

#[derive(Clone, Debug)]
enum DecoderBlock {
    Merge(MergeBlock),
    Vanilla(DoubleConv),
}

/// Generic U-Net body shared by the segmenter and the discriminator.
#[derive(Clone, Debug)]
pub struct UNet<T> {
    pub config: UNetConfig,
    pub params: ParamSet<T>,
    encoders: Vec<DoubleConv>,
    // indexed by decoder level 0..depth-1
    up_convs: Vec<Conv>,
    decoders: Vec<DecoderBlock>,
    head: Conv,
}

/// Result of a U-Net forward pass.
#[derive(Clone, Copy, Debug)]
pub struct UNetOutput {
    pub logits: Var,
    /// `f^1, f^2, f^3`, deepest first.
    pub side_features: [Var; 3],
}

impl<T: Scalar> UNet<T> {
    pub fn new(config: UNetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let mut encoders = Vec::with_capacity(config.depth);
        for level in 0..config.depth {
            let cin = if level == 0 { config.in_channels } else { config.channels_at(level - 1) };
            encoders.push(DoubleConv::new(&mut params, &format!("enc{level}"), cin, config.channels_at(level), &mut rng));
        }
        let mut up_convs = Vec::new();
        let mut decoders = Vec::new();
        for level in 0..config.depth - 1 {
            let ch = config.channels_at(level);
            up_convs.push(Conv::new(&mut params, &format!("up{level}"), config.channels_at(level + 1), ch, 1, true, &mut rng));
            decoders.push(match config.decoder {
                DecoderKind::Merge => DecoderBlock::Merge(MergeBlock::new(
                    &mut params,
                    &format!("dec{level}"),
                    MergeBlockSpec {
                        in_channels: 2 * ch,
                        out_channels: ch,
                    },
                    &mut rng,
                )?),
                DecoderKind::Vanilla => DecoderBlock::Vanilla(DoubleConv::new(&mut params, &format!("dec{level}"), 2 * ch, ch, &mut rng)),
            });
        }
        let head = Conv::new(&mut params, "head", config.base_channels, config.out_channels, 1, true, &mut rng);
        Ok(Self {
            config,
            params,
            encoders,
            up_convs,
            decoders,
            head,
        })
    }

    /// Slot of the output-layer bias.
    pub fn head_bias(&self) -> usize {
        self.head.bias.expect("head has a bias")
    }

    pub fn check_input(&self, shape: [usize; 4]) -> Result<()> {
        let [_, c, h, w] = shape;
        if c != self.config.in_channels {
            return Err(Error::ShapeMismatch(format!(
                "network expects {} input channels, got {c}",
                self.config.in_channels
            )));
        }
        let d = self.config.spatial_divisor();
        if h == 0 || w == 0 || h % d != 0 || w % d != 0 {
            return Err(Error::BadSpatialDims {
                height: h,
                width: w,
                divisor: d,
            });
        }
        Ok(())
    }

    pub fn forward(&mut self, g: &mut Graph<T>, x: Var, mode: Mode, trainable: bool) -> Result<UNetOutput> {
        self.check_input(g.value(x).shape())?;
        let depth = self.config.depth;
        let p = &mut self.params;
        let mut skips = Vec::with_capacity(depth);
        let mut h = x;
        for (level, enc) in self.encoders.iter().enumerate() {
            if level > 0 {
                h = g.max_pool2(h);
            }
            h = enc.forward(g, p, h, mode, trainable);
            skips.push(h);
        }
        // features[level] = decoder output at that level (bottleneck at depth-1)
        let mut features = vec![None; depth];
        features[depth - 1] = Some(h);
        for level in (0..depth - 1).rev() {
            let skip = skips[level];
            let [_, _, sh, sw] = g.value(skip).shape();
            let up = g.resize(h, sh, sw);
            let up = self.up_convs[level].forward(g, p, up, trainable);
            let cat = g.concat(&[up, skip]);
            h = match &self.decoders[level] {
                DecoderBlock::Merge(m) => m.forward(g, p, cat, mode, trainable)?,
                DecoderBlock::Vanilla(d) => d.forward(g, p, cat, mode, trainable),
            };
            features[level] = Some(h);
        }
        let logits = self.head.forward(g, p, h, trainable);
        let side = |i: usize| features[self.config.side_level(i)].expect("decoder level computed");
        Ok(UNetOutput {
            logits,
            side_features: [side(1), side(2), side(3)],
        })
    }
}

/// Configuration of a segmenter branch.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmenterConfig {
    pub depth: usize,
    pub base_channels: usize,
    pub out_channels: usize,
    pub merge_blocks: bool,
}

impl SegmenterConfig {
    pub fn unet(&self) -> UNetConfig {
        UNetConfig {
            in_channels: 3,
            out_channels: self.out_channels,
            depth: self.depth,
            base_channels: self.base_channels,
            decoder: if self.merge_blocks { DecoderKind::Merge } else { DecoderKind::Vanilla },
        }
    }
}

/// Variant U-Net segmenter: fundus image in, per-class logits out.
#[derive(Clone, Debug)]
pub struct SegmenterModel<T> {
    pub net: UNet<T>,
}

impl<T: Scalar> SegmenterModel<T> {
    pub fn new(config: SegmenterConfig, seed: u64) -> Result<Self> {
        Ok(Self {
            net: UNet::new(config.unet(), seed)?,
        })
    }

    pub fn config(&self) -> SegmenterConfig {
        let c = self.net.config;
        SegmenterConfig {
            depth: c.depth,
            base_channels: c.base_channels,
            out_channels: c.out_channels,
            merge_blocks: c.decoder == DecoderKind::Merge,
        }
    }

    pub fn params(&self) -> &ParamSet<T> {
        &self.net.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.net.params
    }

    pub fn forward(&mut self, g: &mut Graph<T>, image: Var, mode: Mode, trainable: bool) -> Result<UNetOutput> {
        self.net.forward(g, image, mode, trainable)
    }

    /// Inference convenience: logits and side features as owned tensors.
    pub fn infer(&mut self, image: &Tensor<T>) -> Result<(Tensor<T>, [Tensor<T>; 3])> {
        let mut g = Graph::new();
        let x = g.constant(image.clone());
        let out = self.forward(&mut g, x, Mode::Eval, false)?;
        let sides = out.side_features.map(|v| g.value(v).clone());
        Ok((g.value(out.logits).clone(), sides))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn rand_tensor(shape: [usize; 4], seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-2.0..2.0)).collect())
    }

    fn const_channels(values: &[f64], h: usize, w: usize) -> Tensor<f64> {
        let mut data = Vec::new();
        for &v in values {
            data.extend(std::iter::repeat_n(v, h * w));
        }
        Tensor::from_vec([1, values.len(), h, w], data)
    }

    fn skip_only(input: Tensor<f64>, cb: usize) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut p = ParamSet::new();
        let block = MergeBlock::new(
            &mut p,
            "m",
            MergeBlockSpec {
                in_channels: input.channels(),
                out_channels: cb,
            },
            &mut rng,
        )
        .unwrap();
        let mut g = Graph::new();
        let f = g.constant(input);
        let y = block.forward_paths(&mut g, &mut p, f, Mode::Eval, false, MergePaths::SkipOnly).unwrap();
        g.value(y).clone()
    }

    #[test]
    fn grouped_sum_of_constant_channels() {
        let y = skip_only(const_channels(&[1.0, 2.0, 3.0, 4.0], 3, 3), 2);
        for (k, expected) in [3.0, 7.0].into_iter().enumerate() {
            for &v in y.channel_plane(0, k) {
                assert!((v - expected).abs() < 1e-4, "{v} vs {expected}");
            }
        }
    }

    #[test]
    fn rectifier_clamps_negative_group_sums() {
        let y = skip_only(const_channels(&[-5.0, 1.0, -5.0, 1.0], 2, 2), 2);
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn grouped_sum_matches_loop_oracle() {
        let f = rand_tensor([2, 8, 3, 5], 11);
        let y = grouped_channel_sum(&f, 2).unwrap();
        for n in 0..2 {
            for k in 0..2 {
                for yy in 0..3 {
                    for x in 0..5 {
                        let mut s = 0.0;
                        for i in 0..4 {
                            s += f.at(n, k * 4 + i, yy, x);
                        }
                        assert!((y.at(n, k, yy, x) - s).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn merge_block_rejects_indivisible_channels() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut p = ParamSet::<f32>::new();
        let err = MergeBlock::new(
            &mut p,
            "m",
            MergeBlockSpec {
                in_channels: 6,
                out_channels: 4,
            },
            &mut rng,
        )
        .unwrap_err();
        assert!(matches!(err, Error::ChannelMismatch { .. }));
        assert!(grouped_channel_sum(&Tensor::<f32>::zeros([1, 5, 1, 1]), 2).is_err());
    }

    #[test]
    fn skip_path_doubles_with_nonnegative_input() {
        let f = rand_tensor([1, 6, 4, 4], 3).map(f64::abs);
        let a = skip_only(f.clone(), 3);
        let b = skip_only(f.map(|v| 2.0 * v), 3);
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((2.0 * x - y).abs() < 1e-9);
        }
    }

    proptest! {
        #[test]
        fn group_members_partition_channels(cb in 1usize..9, mult in 1usize..6) {
            let n = cb * mult;
            let mut seen = vec![0; n];
            for k in 0..cb {
                for c in group_members(n, cb, k) {
                    seen[c] += 1;
                }
            }
            prop_assert!(seen.iter().all(|&s| s == 1));
        }
    }

    fn seg_cfg(depth: usize) -> SegmenterConfig {
        SegmenterConfig {
            depth,
            base_channels: 4,
            out_channels: 4,
            merge_blocks: true,
        }
    }

    #[test]
    fn forward_shapes_depth4() {
        let mut m = SegmenterModel::<f32>::new(seg_cfg(4), 1).unwrap();
        let x = rand_tensor([1, 3, 64, 64], 1).cast();
        let (logits, sides) = m.infer(&x).unwrap();
        assert_eq!(logits.shape(), [1, 4, 64, 64]);
        assert_eq!(sides[0].shape(), [1, 32, 8, 8]);
        assert_eq!(sides[1].shape(), [1, 16, 16, 16]);
        assert_eq!(sides[2].shape(), [1, 8, 32, 32]);
    }

    #[test]
    fn zero_weights_give_bias_logits() {
        let mut m = SegmenterModel::<f64>::new(seg_cfg(3), 2).unwrap();
        let bias = m.net.head_bias();
        m.params_mut().zero_all();
        m.params_mut().get_mut(bias).data_mut().copy_from_slice(&[0.5, -1.0, 2.0, 0.0]);
        let mut g = Graph::new();
        let x = g.constant(rand_tensor([2, 3, 16, 16], 5));
        let out = m.forward(&mut g, x, Mode::Train, true).unwrap();
        let logits = g.value(out.logits);
        for n in 0..2 {
            for (c, b) in [0.5, -1.0, 2.0, 0.0].into_iter().enumerate() {
                assert!(logits.channel_plane(n, c).iter().all(|&v| v == b));
            }
        }
    }

    #[test]
    fn rejects_indivisible_input() {
        let mut m = SegmenterModel::<f32>::new(seg_cfg(4), 1).unwrap();
        let err = m.infer(&Tensor::zeros([1, 3, 20, 16])).unwrap_err();
        assert!(matches!(err, Error::BadSpatialDims { divisor: 8, .. }));
    }

    #[test]
    fn inference_is_deterministic() {
        let x = rand_tensor([1, 3, 16, 16], 9).cast::<f32>();
        let mut a = SegmenterModel::<f32>::new(seg_cfg(3), 4).unwrap();
        let mut b = SegmenterModel::<f32>::new(seg_cfg(3), 4).unwrap();
        assert_eq!(a.infer(&x).unwrap().0, b.infer(&x).unwrap().0);
        assert_eq!(a.infer(&x).unwrap().0, a.infer(&x).unwrap().0);
    }
}
