//! Fundus image and colour-coded annotation ingestion, geometric
//! preprocessing and train/val/test splits.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use rand::SeedableRng;
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::resize_bilinear;
use crate::tensor::{Scalar, Tensor};

pub const BACKGROUND: u8 = 0;
pub const ARTERY: u8 = 1;
pub const VEIN: u8 = 2;
pub const UNCERTAIN: u8 = 3;

pub const DEFAULT_VAL_FRACTION: f64 = 0.10;

/// Image extensions tried, in order, when resolving `<dir>/<id>.<ext>`.
pub const IMAGE_EXTENSIONS: [&str; 4] = ["png", "tif", "tiff", "PNG"];

/// Width and height in pixels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Size {
    pub width: usize,
    pub height: usize,
}

impl Size {
    pub const fn new(width: usize, height: usize) -> Size {
        Size { width, height }
    }

    pub fn pixels(&self) -> usize {
        self.width * self.height
    }
}

impl fmt::Display for Size {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.width, self.height)
    }
}

/// Class names and the annotation colours that map onto them. Index 0 is
/// background, 1 artery, 2 vein; every index from 3 up counts as belonging to
/// both vessels when binary targets are derived.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassScheme {
    pub class_names: Vec<String>,
    pub color_map: Vec<([u8; 3], u8)>,
}

impl Default for ClassScheme {
    fn default() -> Self {
        ClassScheme {
            class_names: ["background", "artery", "vein", "uncertain"].map(String::from).to_vec(),
            color_map: vec![
                ([0, 0, 0], BACKGROUND),
                ([255, 0, 0], ARTERY),
                ([0, 0, 255], VEIN),
                ([0, 255, 0], UNCERTAIN),
                ([255, 255, 255], UNCERTAIN),
            ],
        }
    }
}

impl ClassScheme {
    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.num_classes();
        if c < 3 {
            return Err(Error::Config(format!("class scheme needs at least 3 classes, got {c}")));
        }
        let mut seen = HashMap::new();
        for &(color, class) in &self.color_map {
            if class as usize >= c {
                return Err(Error::Config(format!("colour {color:?} maps to class {class} of {c}")));
            }
            if let Some(prev) = seen.insert(color, class) {
                if prev != class {
                    return Err(Error::Config(format!("colour {color:?} maps to classes {prev} and {class}")));
                }
            }
        }
        for k in 0..c as u8 {
            if !self.color_map.iter().any(|&(_, cl)| cl == k) {
                return Err(Error::Config(format!("class {k} has no colour")));
            }
        }
        Ok(())
    }

    /// First colour listed for `class`; used when rendering labels.
    pub fn color_of(&self, class: u8) -> [u8; 3] {
        self.color_map
            .iter()
            .find(|&&(_, c)| c == class)
            .map(|&(color, _)| color)
            .unwrap_or([0, 0, 0])
    }

    /// `r,g,b=class` pairs separated by `;`.
    pub fn colors_to_string(&self) -> String {
        self.color_map
            .iter()
            .map(|(c, k)| format!("{},{},{}={k}", c[0], c[1], c[2]))
            .collect::<Vec<_>>()
            .join(";")
    }

    pub fn parse_colors(text: &str) -> Result<Vec<([u8; 3], u8)>> {
        text.split(';')
            .filter(|s| !s.trim().is_empty())
            .map(|entry| {
                let bad = || Error::Config(format!("bad colour entry {entry:?}, expected r,g,b=class"));
                let (rgb, class) = entry.split_once('=').ok_or_else(bad)?;
                let parts: Vec<u8> = rgb
                    .split(',')
                    .map(|v| v.trim().parse::<u8>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| bad())?;
                let class = class.trim().parse::<u8>().map_err(|_| bad())?;
                match parts[..] {
                    [r, g, b] => Ok(([r, g, b], class)),
                    _ => Err(bad()),
                }
            })
            .collect()
    }
}

/// Class index per pixel, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMap {
    pub size: Size,
    pub data: Vec<u8>,
}

impl LabelMap {
    pub fn new(size: Size, data: Vec<u8>) -> LabelMap {
        assert_eq!(size.pixels(), data.len());
        LabelMap { size, data }
    }

    pub fn filled(size: Size, class: u8) -> LabelMap {
        LabelMap::new(size, vec![class; size.pixels()])
    }

    pub fn get(&self, y: usize, x: usize) -> u8 {
        self.data[y * self.size.width + x]
    }

    /// Pixel counts of every class.
    pub fn counts(&self, num_classes: usize) -> Vec<u64> {
        crate::metrics::class_counts(&self.data, num_classes)
    }

    pub fn one_hot<T: Scalar>(&self, num_classes: usize) -> Tensor<T> {
        crate::metrics::one_hot(&self.data, num_classes, self.size.height, self.size.width)
    }

    /// `[1, 1, H, W]` indicator of `class` or any shared class (index ≥ 3).
    pub fn binary_target<T: Scalar>(&self, class: u8) -> Tensor<T> {
        let data = self
            .data
            .iter()
            .map(|&l| if l == class || l >= UNCERTAIN { T::one() } else { T::zero() })
            .collect();
        Tensor::from_vec([1, 1, self.size.height, self.size.width], data)
    }

    pub fn to_rgb(&self, scheme: &ClassScheme) -> RgbImage {
        let w = self.size.width as u32;
        RgbImage::from_fn(w, self.size.height as u32, |x, y| Rgb(scheme.color_of(self.data[(y * w + x) as usize])))
    }
}

/// Maps every annotation colour to its class.
pub fn decode_annotation(rgb: &RgbImage, scheme: &ClassScheme) -> Result<LabelMap> {
    let lookup: HashMap<[u8; 3], u8> = scheme.color_map.iter().copied().collect();
    let size = Size::new(rgb.width() as usize, rgb.height() as usize);
    let mut data = Vec::with_capacity(size.pixels());
    for (x, y, px) in rgb.enumerate_pixels() {
        match lookup.get(&px.0) {
            Some(&c) => data.push(c),
            None => {
                return Err(Error::UnmappedColor {
                    color: px.0,
                    row: y as usize,
                    col: x as usize,
                });
            }
        }
    }
    Ok(LabelMap::new(size, data))
}

fn check_target(source: Size, target: Size) -> Result<()> {
    if target.width < source.width || target.height < source.height {
        return Err(Error::TargetTooSmall {
            source_size: (source.width, source.height),
            target: (target.width, target.height),
        });
    }
    Ok(())
}

/// Zero-pads every plane at the bottom and right.
pub fn pad_to<T: Scalar>(x: &Tensor<T>, target: Size) -> Result<Tensor<T>> {
    let [n, c, h, w] = x.shape();
    check_target(Size::new(w, h), target)?;
    let mut out = Tensor::zeros([n, c, target.height, target.width]);
    for s in 0..n {
        for ch in 0..c {
            let src = x.channel_plane(s, ch);
            let dst = out.channel_plane_mut(s, ch);
            for y in 0..h {
                dst[y * target.width..y * target.width + w].copy_from_slice(&src[y * w..(y + 1) * w]);
            }
        }
    }
    Ok(out)
}

/// Top-left window of every plane; inverse of [`pad_to`].
pub fn crop_to<T: Scalar>(x: &Tensor<T>, size: Size) -> Result<Tensor<T>> {
    let [n, c, h, w] = x.shape();
    if size.width > w || size.height > h {
        return Err(Error::ShapeMismatch(format!("cannot crop {w}x{h} to {size}")));
    }
    let mut out = Tensor::zeros([n, c, size.height, size.width]);
    for s in 0..n {
        for ch in 0..c {
            let src = x.channel_plane(s, ch);
            let dst = out.channel_plane_mut(s, ch);
            for y in 0..size.height {
                dst[y * size.width..(y + 1) * size.width].copy_from_slice(&src[y * w..y * w + size.width]);
            }
        }
    }
    Ok(out)
}

/// Pads a label map with background.
pub fn pad_label(label: &LabelMap, target: Size) -> Result<LabelMap> {
    check_target(label.size, target)?;
    let mut out = LabelMap::filled(target, BACKGROUND);
    let w = label.size.width;
    for y in 0..label.size.height {
        out.data[y * target.width..y * target.width + w].copy_from_slice(&label.data[y * w..(y + 1) * w]);
    }
    Ok(out)
}

/// Bilinear image resize (half-pixel centres).
pub fn resize_image<T: Scalar>(x: &Tensor<T>, target: Size) -> Tensor<T> {
    resize_bilinear(x, target.height, target.width)
}

/// Nearest-neighbour label resize with half-pixel centres; never creates
/// class indices absent from the input.
pub fn resize_label(label: &LabelMap, target: Size) -> LabelMap {
    let src = |o: usize, n_in: usize, n_out: usize| (((o as f64 + 0.5) * n_in as f64 / n_out as f64) as usize).min(n_in - 1);
    let mut data = Vec::with_capacity(target.pixels());
    for y in 0..target.height {
        let sy = src(y, label.size.height, target.height);
        for x in 0..target.width {
            data.push(label.get(sy, src(x, label.size.width, target.width)));
        }
    }
    LabelMap::new(target, data)
}

pub fn resize_pair<T: Scalar>(image: &Tensor<T>, label: &LabelMap, target: Size) -> Result<(Tensor<T>, LabelMap)> {
    if target.width == 0 || target.height == 0 {
        return Err(Error::ShapeMismatch(format!("resize target {target} must be positive")));
    }
    Ok((resize_image(image, target), resize_label(label, target)))
}

/// How images are brought to network resolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Geometry {
    Identity,
    Pad(Size),
    Resize(Size),
}

impl Geometry {
    pub fn network_size(&self, original: Size) -> Size {
        match *self {
            Geometry::Identity => original,
            Geometry::Pad(s) | Geometry::Resize(s) => s,
        }
    }

    pub fn apply<T: Scalar>(&self, image: &Tensor<T>, label: &LabelMap) -> Result<(Tensor<T>, LabelMap)> {
        match *self {
            Geometry::Identity => Ok((image.clone(), label.clone())),
            Geometry::Pad(s) => Ok((pad_to(image, s)?, pad_label(label, s)?)),
            Geometry::Resize(s) => resize_pair(image, label, s),
        }
    }

    pub fn apply_image<T: Scalar>(&self, image: &Tensor<T>) -> Result<Tensor<T>> {
        match *self {
            Geometry::Identity => Ok(image.clone()),
            Geometry::Pad(s) => pad_to(image, s),
            Geometry::Resize(s) => Ok(resize_image(image, s)),
        }
    }

    /// Brings network-resolution maps back to the original image size.
    pub fn restore<T: Scalar>(&self, maps: &Tensor<T>, original: Size) -> Result<Tensor<T>> {
        match self {
            Geometry::Identity => Ok(maps.clone()),
            Geometry::Pad(_) => crop_to(maps, original),
            Geometry::Resize(_) => Ok(resize_image(maps, original)),
        }
    }

    /// `pad:WxH`, `resize:WxH` or `none`.
    pub fn parse(text: &str) -> Result<Geometry> {
        let text = text.trim();
        if text == "none" {
            return Ok(Geometry::Identity);
        }
        let bad = || Error::Config(format!("bad geometry {text:?}, expected none, pad:WxH or resize:WxH"));
        let (kind, dims) = text.split_once(':').ok_or_else(bad)?;
        let size = parse_size(dims).ok_or_else(bad)?;
        match kind {
            "pad" => Ok(Geometry::Pad(size)),
            "resize" => Ok(Geometry::Resize(size)),
            _ => Err(bad()),
        }
    }
}

impl fmt::Display for Geometry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Geometry::Identity => write!(f, "none"),
            Geometry::Pad(s) => write!(f, "pad:{s}"),
            Geometry::Resize(s) => write!(f, "resize:{s}"),
        }
    }
}

pub fn parse_size(text: &str) -> Option<Size> {
    let (w, h) = text.trim().split_once('x')?;
    Some(Size::new(w.trim().parse().ok()?, h.trim().parse().ok()?))
}

/// Known public artery/vein datasets.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum DatasetPreset {
    DriveAv,
    LesAv,
    HrfAv,
}

impl DatasetPreset {
    pub const ALL: [DatasetPreset; 3] = [DatasetPreset::DriveAv, DatasetPreset::LesAv, DatasetPreset::HrfAv];

    pub fn name(&self) -> &'static str {
        match self {
            DatasetPreset::DriveAv => "drive-av",
            DatasetPreset::LesAv => "les-av",
            DatasetPreset::HrfAv => "hrf-av",
        }
    }

    pub fn from_name(name: &str) -> Option<DatasetPreset> {
        Self::ALL.into_iter().find(|p| p.name() == name)
    }

    pub fn original_size(&self) -> Size {
        match self {
            DatasetPreset::DriveAv => Size::new(565, 584),
            DatasetPreset::LesAv => Size::new(1620, 1444),
            DatasetPreset::HrfAv => Size::new(3504, 2336),
        }
    }

    pub fn geometry(&self) -> Geometry {
        match self {
            DatasetPreset::DriveAv => Geometry::Pad(Size::new(592, 592)),
            DatasetPreset::LesAv => Geometry::Resize(Size::new(800, 720)),
            DatasetPreset::HrfAv => Geometry::Resize(Size::new(880, 592)),
        }
    }

    /// (train, test) image counts.
    pub fn split_sizes(&self) -> (usize, usize) {
        match self {
            DatasetPreset::DriveAv => (20, 20),
            DatasetPreset::LesAv => (11, 11),
            DatasetPreset::HrfAv => (24, 21),
        }
    }
}

/// Disjoint id lists. `val` is carved out of the original training list.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for id in self.train.iter().chain(&self.val).chain(&self.test) {
            if !seen.insert(id) {
                return Err(Error::Config(format!("id {id:?} appears twice in the split")));
            }
        }
        Ok(())
    }

    /// Number of validation images taken from `n_train`.
    pub fn val_count(n_train: usize, val_fraction: f64) -> usize {
        if n_train < 2 || val_fraction <= 0.0 {
            return 0;
        }
        ((n_train as f64 * val_fraction).round() as usize).clamp(1, n_train - 1)
    }

    /// Moves a seeded random `val_fraction` of `train` into `val`; the
    /// remaining lists keep their order.
    pub fn carve_validation(train: Vec<String>, test: Vec<String>, val_fraction: f64, seed: u64) -> SplitSpec {
        let k = Self::val_count(train.len(), val_fraction);
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let picked: BTreeSet<usize> = order[..k].iter().copied().collect();
        let val = picked.iter().map(|&i| train[i].clone()).collect();
        let train = train
            .into_iter()
            .enumerate()
            .filter(|(i, _)| !picked.contains(i))
            .map(|(_, id)| id)
            .collect();
        SplitSpec { train, val, test }
    }

    /// Sorted ids: the first `n_train` form the training pool, the next
    /// `n_test` the test set.
    pub fn from_counts(mut ids: Vec<String>, n_train: usize, n_test: usize, val_fraction: f64, seed: u64) -> Result<SplitSpec> {
        ids.sort();
        if ids.len() < n_train + n_test {
            return Err(Error::Config(format!(
                "{} ids available, split needs {} train + {} test",
                ids.len(),
                n_train,
                n_test
            )));
        }
        let test = ids[n_train..n_train + n_test].to_vec();
        ids.truncate(n_train);
        Ok(Self::carve_validation(ids, test, val_fraction, seed))
    }

    /// Sections `[train]`, `[val]`, `[test]` with one id per line; `#`
    /// starts a comment. A missing `[val]` section is carved from train.
    pub fn parse(text: &str, val_fraction: f64, seed: u64) -> Result<SplitSpec> {
        let mut lists: [Vec<String>; 3] = Default::default();
        let mut saw_val = false;
        let mut current: Option<usize> = None;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                current = Some(match name.trim() {
                    "train" => 0,
                    "val" => {
                        saw_val = true;
                        1
                    }
                    "test" => 2,
                    other => return Err(Error::Config(format!("split line {}: unknown section [{other}]", i + 1))),
                });
                continue;
            }
            match current {
                Some(k) => lists[k].push(line.to_string()),
                None => return Err(Error::Config(format!("split line {}: id outside a section", i + 1))),
            }
        }
        let [train, val, test] = lists;
        let split = if saw_val {
            SplitSpec { train, val, test }
        } else {
            Self::carve_validation(train, test, val_fraction, seed)
        };
        split.validate()?;
        Ok(split)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (name, ids) in [("train", &self.train), ("val", &self.val), ("test", &self.test)] {
            s.push_str(&format!("[{name}]\n"));
            for id in ids {
                s.push_str(id);
                s.push('\n');
            }
        }
        s
    }

    pub fn ids(&self, part: SplitPart) -> &[String] {
        match part {
            SplitPart::Train => &self.train,
            SplitPart::Val => &self.val,
            SplitPart::Test => &self.test,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SplitPart {
    Train,
    Val,
    Test,
}

impl SplitPart {
    pub fn parse(text: &str) -> Result<SplitPart> {
        match text {
            "train" => Ok(SplitPart::Train),
            "val" => Ok(SplitPart::Val),
            "test" => Ok(SplitPart::Test),
            _ => Err(Error::Config(format!("unknown split {text:?}, expected train, val or test"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            SplitPart::Train => "train",
            SplitPart::Val => "val",
            SplitPart::Test => "test",
        }
    }
}

/// One decoded image/annotation pair at original resolution.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledSample {
    pub id: String,
    /// `[1, 3, H, W]` in [0, 1].
    pub image: Tensor<f32>,
    pub label: LabelMap,
}

impl LabeledSample {
    pub fn new(id: impl Into<String>, image: Tensor<f32>, label: LabelMap) -> Result<LabeledSample> {
        let [n, c, h, w] = image.shape();
        if n != 1 || c != 3 || Size::new(w, h) != label.size {
            return Err(Error::ShapeMismatch(format!(
                "image {:?} does not match label {}",
                image.shape(),
                label.size
            )));
        }
        Ok(LabeledSample {
            id: id.into(),
            image,
            label,
        })
    }

    pub fn size(&self) -> Size {
        self.label.size
    }

    /// Foreground pixel counts (artery, vein, uncertain, ...).
    pub fn class_pixel_counts(&self, num_classes: usize) -> Vec<u64> {
        self.label.counts(num_classes)[1..].to_vec()
    }

    pub fn one_hot(&self, num_classes: usize) -> Tensor<f32> {
        self.label.one_hot(num_classes)
    }
}

pub fn image_to_tensor(rgb: &RgbImage) -> Tensor<f32> {
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let mut t = Tensor::zeros([1, 3, h, w]);
    for (i, px) in rgb.pixels().enumerate() {
        for c in 0..3 {
            t.channel_plane_mut(0, c)[i] = px.0[c] as f32 / 255.0;
        }
    }
    t
}

pub fn tensor_to_image<T: Scalar>(t: &Tensor<T>) -> RgbImage {
    let [_, c, h, w] = t.shape();
    RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let i = y as usize * w + x as usize;
        let v = |ch: usize| {
            let f = t.channel_plane(0, ch.min(c - 1))[i].to_f64_lossy();
            (f.clamp(0.0, 1.0) * 255.0).round() as u8
        };
        Rgb([v(0), v(1), v(2)])
    })
}

/// Grey-scale PNG-ready plane of a single-channel map.
pub fn plane_to_gray<T: Scalar>(t: &Tensor<T>, channel: usize) -> image::GrayImage {
    let w = t.width();
    let plane = t.channel_plane(0, channel);
    image::GrayImage::from_fn(w as u32, t.height() as u32, |x, y| {
        let f = plane[y as usize * w + x as usize].to_f64_lossy();
        image::Luma([(f.clamp(0.0, 1.0) * 255.0).round() as u8])
    })
}

pub fn find_file(dir: &Path, id: &str) -> Result<PathBuf> {
    IMAGE_EXTENSIONS
        .iter()
        .map(|ext| dir.join(format!("{id}.{ext}")))
        .find(|p| p.is_file())
        .ok_or_else(|| Error::MissingPath(dir.join(format!("{id}.png"))))
}

pub fn read_rgb(path: &Path) -> Result<RgbImage> {
    image::open(path).map(|im| im.to_rgb8()).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_png(path: &Path, img: &impl WritablePng) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    img.save_png(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

pub trait WritablePng {
    fn save_png(&self, path: &Path) -> image::ImageResult<()>;
}

impl WritablePng for RgbImage {
    fn save_png(&self, path: &Path) -> image::ImageResult<()> {
        self.save_with_format(path, image::ImageFormat::Png)
    }
}

impl WritablePng for image::GrayImage {
    fn save_png(&self, path: &Path) -> image::ImageResult<()> {
        self.save_with_format(path, image::ImageFormat::Png)
    }
}

/// A `<root>/{images,labels}/<id>.<ext>` directory.
#[derive(Clone, Debug)]
pub struct DatasetDir {
    pub root: PathBuf,
    pub scheme: ClassScheme,
}

impl DatasetDir {
    pub fn open(root: impl Into<PathBuf>, scheme: ClassScheme) -> Result<DatasetDir> {
        let root = root.into();
        for sub in ["images", "labels"] {
            if !root.join(sub).is_dir() {
                return Err(Error::MissingPath(root.join(sub)));
            }
        }
        scheme.validate()?;
        Ok(DatasetDir { root, scheme })
    }

    /// Sorted ids of every image that has a label.
    pub fn ids(&self) -> Result<Vec<String>> {
        let mut ids = BTreeSet::new();
        for entry in std::fs::read_dir(self.root.join("images"))? {
            let path = entry?.path();
            let ok_ext = path
                .extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e));
            if let (true, Some(stem)) = (ok_ext, path.file_stem().and_then(|s| s.to_str())) {
                if find_file(&self.root.join("labels"), stem).is_ok() {
                    ids.insert(stem.to_string());
                }
            }
        }
        Ok(ids.into_iter().collect())
    }

    pub fn load(&self, id: &str) -> Result<LabeledSample> {
        let image = read_rgb(&find_file(&self.root.join("images"), id)?)?;
        let label = decode_annotation(&read_rgb(&find_file(&self.root.join("labels"), id)?)?, &self.scheme)?;
        LabeledSample::new(id, image_to_tensor(&image), label)
    }

    pub fn load_all(&self, ids: &[String]) -> Result<Vec<LabeledSample>> {
        ids.iter().map(|id| self.load(id)).collect()
    }

    /// Writes `images/<id>.png` and `labels/<id>.png`.
    pub fn write(root: &Path, sample: &LabeledSample, scheme: &ClassScheme) -> Result<()> {
        write_png(&root.join("images").join(format!("{}.png", sample.id)), &tensor_to_image(&sample.image))?;
        write_png(&root.join("labels").join(format!("{}.png", sample.id)), &sample.label.to_rgb(scheme))
    }
}
