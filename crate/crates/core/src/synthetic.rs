//! Synthetic artery/vein crossing scenes: cubic Bézier strokes of two classes
//! on a noisy background, with the overlap labelled uncertain and a dilated
//! crossing-region mask for localized scoring.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::datasets::{
    ARTERY, BACKGROUND, ClassScheme, DatasetDir, LabelMap, LabeledSample, Size, SplitSpec, UNCERTAIN, VEIN,
    find_file, read_rgb, write_png,
};
use crate::error::{Error, Result};
use crate::metrics;
use crate::tensor::Tensor;

/// Points per Bézier polyline.
const CURVE_SEGMENTS: usize = 48;
const BACKGROUND_RGB: [f32; 3] = [0.78, 0.42, 0.24];
const VESSEL_RGB: [f32; 3] = [0.52, 0.16, 0.10];
/// Per-unit-tint colour shift: arteries lighter and redder, veins darker.
const ARTERY_SHIFT: [f32; 3] = [0.30, 0.12, 0.04];
const VEIN_SHIFT: [f32; 3] = [-0.22, -0.08, 0.10];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossingSceneSpec {
    pub size: Size,
    pub strokes_per_class: usize,
    /// Full stroke width range in pixels.
    pub width_min: f64,
    pub width_max: f64,
    /// Exact number of crossing regions required.
    pub crossings: usize,
    /// Dilation radius of the crossing-region mask.
    pub radius: usize,
    /// Standard deviation of per-pixel Gaussian noise.
    pub noise: f64,
    /// Strength of the class colour cue; 0 leaves only continuity.
    pub tint: f64,
    pub seed: u64,
    pub max_attempts: usize,
}

impl Default for CrossingSceneSpec {
    fn default() -> Self {
        CrossingSceneSpec {
            size: Size::new(64, 64),
            strokes_per_class: 2,
            width_min: 2.0,
            width_max: 3.5,
            crossings: 2,
            radius: 3,
            noise: 0.04,
            tint: 0.5,
            seed: 0,
            max_attempts: 5000,
        }
    }
}

impl CrossingSceneSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.size.width < 4 || self.size.height < 4 {
            return bad(format!("scene size {} too small", self.size));
        }
        if !(self.width_min > 0.0 && self.width_min <= self.width_max) {
            return bad(format!("stroke width range [{}, {}] invalid", self.width_min, self.width_max));
        }
        if !(self.noise >= 0.0 && self.tint >= 0.0) {
            return bad("noise and tint must be non-negative".into());
        }
        Ok(())
    }
}

/// Boolean mask, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    pub size: Size,
    pub data: Vec<bool>,
}

impl Mask {
    pub fn empty(size: Size) -> Mask {
        Mask {
            size,
            data: vec![false; size.pixels()],
        }
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.data.iter().any(|&b| b)
    }

    /// Union with a disk of radius `r` around every set pixel.
    pub fn dilate(&self, r: usize) -> Mask {
        let (w, h) = (self.size.width as isize, self.size.height as isize);
        let r = r as isize;
        let mut out = Mask::empty(self.size);
        for y in 0..h {
            for x in 0..w {
                if !self.data[(y * w + x) as usize] {
                    continue;
                }
                for dy in -r..=r {
                    for dx in -r..=r {
                        let (yy, xx) = (y + dy, x + dx);
                        if dx * dx + dy * dy <= r * r && (0..h).contains(&yy) && (0..w).contains(&xx) {
                            out.data[(yy * w + xx) as usize] = true;
                        }
                    }
                }
            }
        }
        out
    }

    pub fn to_gray(&self) -> image::GrayImage {
        let w = self.size.width as u32;
        image::GrayImage::from_fn(w, self.size.height as u32, |x, y| {
            image::Luma([if self.data[(y * w + x) as usize] { 255 } else { 0 }])
        })
    }

    pub fn from_gray(img: &image::GrayImage) -> Mask {
        Mask {
            size: Size::new(img.width() as usize, img.height() as usize),
            data: img.pixels().map(|p| p.0[0] > 127).collect(),
        }
    }
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

/// 8-connected component id per pixel (`None` off the mask), ids dense from
/// 0 in raster order of first appearance, and the component count.
pub fn connected_components(mask: &Mask) -> (Vec<Option<usize>>, usize) {
    let (w, h) = (mask.size.width, mask.size.height);
    let mut parent: Vec<usize> = (0..w * h).collect();
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if !mask.data[i] {
                continue;
            }
            // Already-visited neighbours: W, NW, N, NE.
            let mut neighbours = Vec::with_capacity(4);
            if x > 0 {
                neighbours.push(i - 1);
            }
            if y > 0 {
                neighbours.push(i - w);
                if x > 0 {
                    neighbours.push(i - w - 1);
                }
                if x + 1 < w {
                    neighbours.push(i - w + 1);
                }
            }
            for j in neighbours {
                if mask.data[j] {
                    let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                    if a != b {
                        parent[a.max(b)] = a.min(b);
                    }
                }
            }
        }
    }
    let mut ids = vec![None; w * h];
    let mut dense = std::collections::HashMap::new();
    for i in 0..w * h {
        if mask.data[i] {
            let root = find(&mut parent, i);
            let next = dense.len();
            ids[i] = Some(*dense.entry(root).or_insert(next));
        }
    }
    let n = dense.len();
    (ids, n)
}

#[derive(Clone, Copy, Debug)]
struct Stroke {
    points: [(f64, f64); 4],
    width: f64,
}

impl Stroke {
    fn at(&self, t: f64) -> (f64, f64) {
        let [p0, p1, p2, p3] = self.points;
        let u = 1.0 - t;
        let (a, b, c, d) = (u * u * u, 3.0 * u * u * t, 3.0 * u * t * t, t * t * t);
        (
            a * p0.0 + b * p1.0 + c * p2.0 + d * p3.0,
            a * p0.1 + b * p1.1 + c * p2.1 + d * p3.1,
        )
    }

    /// Distance from every pixel centre to the curve, capped beyond reach.
    fn distance_map(&self, size: Size) -> Vec<f32> {
        let (w, h) = (size.width, size.height);
        let mut dist = vec![f32::INFINITY; w * h];
        let reach = self.width / 2.0 + 1.5;
        let poly: Vec<(f64, f64)> = (0..=CURVE_SEGMENTS).map(|i| self.at(i as f64 / CURVE_SEGMENTS as f64)).collect();
        for seg in poly.windows(2) {
            let (a, b) = (seg[0], seg[1]);
            let x0 = (a.0.min(b.0) - reach).floor().max(0.0) as usize;
            let x1 = ((a.0.max(b.0) + reach).ceil().max(0.0) as usize).min(w);
            let y0 = (a.1.min(b.1) - reach).floor().max(0.0) as usize;
            let y1 = ((a.1.max(b.1) + reach).ceil().max(0.0) as usize).min(h);
            let (dx, dy) = (b.0 - a.0, b.1 - a.1);
            let len2 = dx * dx + dy * dy;
            for y in y0..y1 {
                for x in x0..x1 {
                    let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
                    let t = if len2 > 0.0 {
                        (((px - a.0) * dx + (py - a.1) * dy) / len2).clamp(0.0, 1.0)
                    } else {
                        0.0
                    };
                    let d = ((px - a.0 - t * dx).powi(2) + (py - a.1 - t * dy).powi(2)).sqrt() as f32;
                    let slot = &mut dist[y * w + x];
                    if d < *slot {
                        *slot = d;
                    }
                }
            }
        }
        dist
    }
}

fn border_point(rng: &mut ChaCha8Rng, side: usize, size: Size) -> (f64, f64) {
    let (w, h) = (size.width as f64, size.height as f64);
    let u: f64 = rng.random_range(0.1..0.9);
    match side {
        0 => (u * w, 0.0),
        1 => (w, u * h),
        2 => (u * w, h),
        _ => (0.0, u * h),
    }
}

fn random_stroke(rng: &mut ChaCha8Rng, spec: &CrossingSceneSpec) -> Stroke {
    let s0 = rng.random_range(0..4);
    let s1 = (s0 + rng.random_range(1..4)) % 4;
    let (w, h) = (spec.size.width as f64, spec.size.height as f64);
    let mut inner = || (rng.random_range(0.15..0.85) * w, rng.random_range(0.15..0.85) * h);
    let (c1, c2) = (inner(), inner());
    let p0 = border_point(rng, s0, spec.size);
    let p3 = border_point(rng, s1, spec.size);
    let width = if spec.width_max > spec.width_min {
        rng.random_range(spec.width_min..spec.width_max)
    } else {
        spec.width_min
    };
    Stroke {
        points: [p0, c1, c2, p3],
        width,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub sample: LabeledSample,
    /// Dilated neighbourhood of the artery/vein overlap.
    pub crossing_mask: Mask,
    pub crossings: usize,
    pub attempts: usize,
}

struct Layout {
    strokes: Vec<(u8, Stroke, Vec<f32>)>,
    label: LabelMap,
    mask: Mask,
    crossings: usize,
}

fn layout(rng: &mut ChaCha8Rng, spec: &CrossingSceneSpec) -> Layout {
    let size = spec.size;
    let mut strokes = Vec::new();
    for class in [ARTERY, VEIN] {
        for _ in 0..spec.strokes_per_class {
            let s = random_stroke(rng, spec);
            let d = s.distance_map(size);
            strokes.push((class, s, d));
        }
    }
    let mut is_class = [vec![false; size.pixels()], vec![false; size.pixels()]];
    for (class, s, d) in &strokes {
        let hw = (s.width / 2.0) as f32;
        for (i, &di) in d.iter().enumerate() {
            if di <= hw {
                is_class[(*class - 1) as usize][i] = true;
            }
        }
    }
    let mut overlap = Mask::empty(size);
    let data = (0..size.pixels())
        .map(|i| match (is_class[0][i], is_class[1][i]) {
            (true, true) => {
                overlap.data[i] = true;
                UNCERTAIN
            }
            (true, false) => ARTERY,
            (false, true) => VEIN,
            _ => BACKGROUND,
        })
        .collect();
    let (_, n_overlap) = connected_components(&overlap);
    let mask = overlap.dilate(spec.radius);
    let (_, n_mask) = connected_components(&mask);
    Layout {
        strokes,
        label: LabelMap::new(size, data),
        mask,
        crossings: if n_overlap == n_mask { n_overlap } else { usize::MAX },
    }
}

/// Renders one scene. Layouts are resampled until the overlap has exactly
/// `spec.crossings` components and dilation merges none of them.
pub fn generate_scene(spec: &CrossingSceneSpec, id: &str) -> Result<Scene> {
    spec.validate()?;
    if spec.strokes_per_class == 0 && spec.crossings > 0 {
        return Err(Error::UnsatisfiableSpec(format!("{} crossings requested without strokes", spec.crossings)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut attempts = 0;
    let lay = loop {
        attempts += 1;
        let lay = layout(&mut rng, spec);
        if lay.crossings == spec.crossings {
            break lay;
        }
        if attempts >= spec.max_attempts {
            return Err(Error::UnsatisfiableSpec(format!(
                "no layout with {} crossings in {} attempts at {}",
                spec.crossings, attempts, spec.size
            )));
        }
    };
    let image = render(&mut rng, spec, &lay.strokes);
    Ok(Scene {
        sample: LabeledSample::new(id, image, lay.label)?,
        crossing_mask: lay.mask,
        crossings: lay.crossings,
        attempts,
    })
}

fn render(rng: &mut ChaCha8Rng, spec: &CrossingSceneSpec, strokes: &[(u8, Stroke, Vec<f32>)]) -> Tensor<f32> {
    let Size { width: w, height: h } = spec.size;
    // Low-frequency illumination gradient.
    let angle: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let strength: f64 = rng.random_range(0.05..0.2);
    let (gx, gy) = (angle.cos() * strength, angle.sin() * strength);
    let mut img = Tensor::zeros([1, 3, h, w]);
    for y in 0..h {
        for x in 0..w {
            let shade = 1.0 + gx * (x as f64 / w as f64 - 0.5) + gy * (y as f64 / h as f64 - 0.5);
            for c in 0..3 {
                img.channel_plane_mut(0, c)[y * w + x] = BACKGROUND_RGB[c] * shade as f32;
            }
        }
    }
    let tint = spec.tint as f32;
    let mut order: Vec<usize> = (0..strokes.len()).collect();
    for i in (1..order.len()).rev() {
        order.swap(i, rng.random_range(0..=i));
    }
    for k in order {
        let (class, stroke, dist) = &strokes[k];
        let shift = if *class == ARTERY { ARTERY_SHIFT } else { VEIN_SHIFT };
        let color: [f32; 3] = std::array::from_fn(|c| (VESSEL_RGB[c] + tint * shift[c]).clamp(0.0, 1.0));
        let hw = (stroke.width / 2.0) as f32;
        for (i, &d) in dist.iter().enumerate() {
            let cov = (hw + 0.5 - d).clamp(0.0, 1.0);
            if cov > 0.0 {
                for (c, &col) in color.iter().enumerate() {
                    let px = &mut img.channel_plane_mut(0, c)[i];
                    *px = *px * (1.0 - cov) + col * cov;
                }
            }
        }
    }
    if spec.noise > 0.0 {
        let normal = Normal::new(0.0, spec.noise).expect("noise sd is finite and non-negative");
        for v in img.data_mut() {
            *v = (*v + normal.sample(rng) as f32).clamp(0.0, 1.0);
        }
    }
    img
}

/// Masked weighted F1 per crossing region and over the whole mask.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossingScores {
    /// `None` for a region without foreground ground truth.
    pub per_region: Vec<Option<f64>>,
    pub aggregate: f64,
}

/// Pixels of `values` where `mask` is set.
pub fn masked<T: Copy>(values: &[T], mask: &Mask) -> Vec<T> {
    values.iter().zip(&mask.data).filter(|(_, m)| **m).map(|(v, _)| *v).collect()
}

/// Weighted F1 restricted to the mask.
pub fn masked_weighted_f1(pred: &[u8], truth: &[u8], mask: &Mask, num_classes: usize) -> Result<f64> {
    if mask.is_empty() {
        return Err(Error::EmptyMask);
    }
    if pred.len() != mask.data.len() || truth.len() != mask.data.len() {
        return Err(Error::ShapeMismatch("prediction, label and mask must align".into()));
    }
    let (p, t) = (masked(pred, mask), masked(truth, mask));
    let counts = metrics::class_counts(&t, num_classes);
    metrics::weighted_f1(&p, &t, &counts[1..])
}

pub fn crossing_region_scores(pred: &[u8], label: &LabelMap, mask: &Mask, num_classes: usize) -> Result<CrossingScores> {
    let aggregate = masked_weighted_f1(pred, &label.data, mask, num_classes)?;
    let (ids, n) = connected_components(mask);
    let per_region = (0..n)
        .map(|r| {
            let region = Mask {
                size: mask.size,
                data: ids.iter().map(|&i| i == Some(r)).collect(),
            };
            match masked_weighted_f1(pred, &label.data, &region, num_classes) {
                Ok(f) => Ok(Some(f)),
                Err(Error::AllCountsZero) => Ok(None),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<_>>()?;
    Ok(CrossingScores { per_region, aggregate })
}

/// A generated dataset on disk plus its summary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticDatasetSpec {
    pub scene: CrossingSceneSpec,
    pub train: usize,
    pub test: usize,
    pub val_fraction: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSummary {
    pub scenes: usize,
    pub split: SplitSpec,
    /// Total pixels per class over all scenes.
    pub class_pixels: Vec<u64>,
}

impl SyntheticSummary {
    /// `|n_a - n_v| / max(n_a, n_v)`.
    pub fn artery_vein_imbalance(&self) -> f64 {
        let (a, v) = (self.class_pixels[1] as f64, self.class_pixels[2] as f64);
        (a - v).abs() / a.max(v).max(1.0)
    }
}

/// Per-scene seed derived from the dataset seed.
pub fn scene_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(index as u64 + 1)
}

pub fn scene_id(index: usize) -> String {
    format!("scene_{index:04}")
}

/// Generates every scene in memory.
pub fn generate_scenes(spec: &SyntheticDatasetSpec) -> Result<Vec<Scene>> {
    (0..spec.train + spec.test)
        .map(|i| {
            let mut s = spec.scene.clone();
            s.seed = scene_seed(spec.scene.seed, i);
            generate_scene(&s, &scene_id(i))
        })
        .collect()
}

pub fn split_for(spec: &SyntheticDatasetSpec) -> SplitSpec {
    let ids: Vec<String> = (0..spec.train + spec.test).map(scene_id).collect();
    SplitSpec::carve_validation(ids[..spec.train].to_vec(), ids[spec.train..].to_vec(), spec.val_fraction, spec.scene.seed)
}

pub fn summarize(scenes: &[Scene], split: SplitSpec, num_classes: usize) -> SyntheticSummary {
    let mut class_pixels = vec![0u64; num_classes];
    for s in scenes {
        for (t, c) in class_pixels.iter_mut().zip(s.sample.label.counts(num_classes)) {
            *t += c;
        }
    }
    SyntheticSummary {
        scenes: scenes.len(),
        split,
        class_pixels,
    }
}

/// Writes `images/`, `labels/`, `masks/`, `split.txt` and `summary.json`
/// under `root`.
pub fn write_dataset(root: &Path, spec: &SyntheticDatasetSpec, scheme: &ClassScheme) -> Result<SyntheticSummary> {
    let scenes = generate_scenes(spec)?;
    for s in &scenes {
        DatasetDir::write(root, &s.sample, scheme)?;
        write_png(&root.join("masks").join(format!("{}.png", s.sample.id)), &s.crossing_mask.to_gray())?;
    }
    let summary = summarize(&scenes, split_for(spec), scheme.num_classes());
    std::fs::write(root.join("split.txt"), summary.split.to_text())?;
    std::fs::write(root.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
    Ok(summary)
}

/// Reads `masks/<id>.png` if present.
pub fn load_mask(root: &Path, id: &str) -> Result<Option<Mask>> {
    match find_file(&root.join("masks"), id) {
        Ok(path) => Ok(Some(Mask::from_gray(&read_rgb(&path).map(|im| image::DynamicImage::ImageRgb8(im).to_luma8())?))),
        Err(Error::MissingPath(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(crossings: usize, seed: u64) -> CrossingSceneSpec {
        CrossingSceneSpec {
            crossings,
            seed,
            ..Default::default()
        }
    }

    #[test]
    fn no_strokes_gives_background_scene() {
        let s = generate_scene(
            &CrossingSceneSpec {
                strokes_per_class: 0,
                crossings: 0,
                ..Default::default()
            },
            "bg",
        )
        .unwrap();
        assert!(s.sample.label.data.iter().all(|&c| c == BACKGROUND));
        assert!(s.crossing_mask.is_empty());
    }

    #[test]
    fn crossings_without_strokes_are_unsatisfiable() {
        let s = CrossingSceneSpec {
            strokes_per_class: 0,
            crossings: 1,
            ..Default::default()
        };
        assert!(matches!(generate_scene(&s, "x"), Err(Error::UnsatisfiableSpec(_))));
        let tiny = CrossingSceneSpec {
            size: Size::new(8, 8),
            crossings: 9,
            max_attempts: 50,
            ..Default::default()
        };
        assert!(matches!(generate_scene(&tiny, "x"), Err(Error::UnsatisfiableSpec(_))));
    }

    #[test]
    fn same_seed_same_scene() {
        let a = generate_scene(&spec(2, 11), "a").unwrap();
        let b = generate_scene(&spec(2, 11), "a").unwrap();
        assert_eq!(a, b);
        let c = generate_scene(&spec(2, 12), "a").unwrap();
        assert_ne!(a.sample.image, c.sample.image);
    }

    #[test]
    fn requested_crossings_are_honoured() {
        for seed in 0..5 {
            let s = generate_scene(&spec(3, seed), "s").unwrap();
            assert_eq!(connected_components(&s.crossing_mask).1, 3);
            assert!(s.sample.label.data.contains(&UNCERTAIN));
        }
    }

    #[test]
    fn components_use_eight_connectivity() {
        let mask = Mask {
            size: Size::new(3, 3),
            data: vec![true, false, false, false, true, false, false, false, true],
        };
        assert_eq!(connected_components(&mask).1, 1);
        let apart = Mask {
            size: Size::new(3, 1),
            data: vec![true, false, true],
        };
        assert_eq!(connected_components(&apart).1, 2);
    }

    #[test]
    fn dilation_is_a_disk() {
        let mut m = Mask::empty(Size::new(5, 5));
        m.data[12] = true;
        let d = m.dilate(1);
        assert_eq!(d.count(), 5);
        assert_eq!(m.dilate(2).count(), 13);
    }

    #[test]
    fn swap_inside_mask_only() {
        let s = generate_scene(&spec(2, 3), "s").unwrap();
        let label = &s.sample.label;
        let perfect = crossing_region_scores(&label.data, label, &s.crossing_mask, 4).unwrap();
        assert_eq!(perfect.aggregate, 1.0);
        assert!(perfect.per_region.iter().all(|r| *r == Some(1.0)));
        let swapped: Vec<u8> = label
            .data
            .iter()
            .zip(&s.crossing_mask.data)
            .map(|(&l, &m)| match (l, m) {
                (ARTERY, true) => VEIN,
                (VEIN, true) => ARTERY,
                _ => l,
            })
            .collect();
        let local = crossing_region_scores(&swapped, label, &s.crossing_mask, 4).unwrap();
        let counts = label.counts(4);
        let global = metrics::weighted_f1(&swapped, &label.data, &counts[1..]).unwrap();
        assert!(local.aggregate < global);
        assert!(global > 0.8, "global {global}");
    }

    #[test]
    fn empty_mask_is_an_error() {
        let l = LabelMap::filled(Size::new(2, 2), ARTERY);
        let m = Mask::empty(l.size);
        assert!(matches!(crossing_region_scores(&l.data, &l, &m, 4), Err(Error::EmptyMask)));
    }

    #[test]
    fn dataset_on_disk() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SyntheticDatasetSpec {
            scene: CrossingSceneSpec {
                size: Size::new(32, 32),
                crossings: 1,
                ..Default::default()
            },
            train: 4,
            test: 2,
            val_fraction: 0.25,
        };
        let scheme = ClassScheme::default();
        let summary = write_dataset(dir.path(), &spec, &scheme).unwrap();
        assert_eq!(summary.scenes, 6);
        assert_eq!(summary.split.val.len(), 1);
        let ds = DatasetDir::open(dir.path(), scheme).unwrap();
        let scenes = generate_scenes(&spec).unwrap();
        for s in &scenes {
            let loaded = ds.load(&s.sample.id).unwrap();
            assert_eq!(loaded.label, s.sample.label);
            assert_eq!(load_mask(dir.path(), &s.sample.id).unwrap().unwrap(), s.crossing_mask);
        }
        assert!(load_mask(dir.path(), "missing").unwrap().is_none());
    }
}
