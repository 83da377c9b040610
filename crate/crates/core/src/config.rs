//! Flat `key = value` run configuration. Unknown keys are errors.

use std::path::{Path, PathBuf};

use crate::datasets::{ClassScheme, DEFAULT_VAL_FRACTION, DatasetPreset, Geometry, Size};
use crate::error::{Error, Result};
use crate::synthetic::{CrossingSceneSpec, SyntheticDatasetSpec};
use crate::training::{TrainConfig, Toggles};

/// Environment variable that overrides `output_dir`.
pub const OUTPUT_ROOT_ENV: &str = "AVFUSION_OUTPUT_ROOT";

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub data_root: Option<PathBuf>,
    /// Defaults to `<data_root>/split.txt` when that file exists.
    pub split_file: Option<PathBuf>,
    pub preset: Option<DatasetPreset>,
    /// Defaults to the preset's geometry, else none.
    pub geometry: Option<Geometry>,
    pub val_fraction: f64,
    pub scheme: ClassScheme,
    pub train: TrainConfig,
    pub output_dir: PathBuf,
    pub synthetic: SyntheticDatasetSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            data_root: None,
            split_file: None,
            preset: None,
            geometry: None,
            val_fraction: DEFAULT_VAL_FRACTION,
            scheme: ClassScheme::default(),
            train: TrainConfig::default(),
            output_dir: PathBuf::from("runs"),
            synthetic: SyntheticDatasetSpec {
                scene: CrossingSceneSpec::default(),
                train: 200,
                test: 50,
                val_fraction: DEFAULT_VAL_FRACTION,
            },
        }
    }
}

/// Every accepted key, in the order [`RunConfig::to_text`] writes them.
pub const KEYS: &[&str] = &[
    "data_root",
    "split_file",
    "preset",
    "geometry",
    "val_fraction",
    "class_names",
    "class_colors",
    "depth",
    "base_channels",
    "disc_depth",
    "disc_base_channels",
    "seg",
    "deep_supervision",
    "binary_fusion",
    "learning_rate",
    "adam_beta1",
    "adam_beta2",
    "adam_eps",
    "batch_size",
    "epochs",
    "max_steps",
    "alpha",
    "beta",
    "gamma",
    "seed",
    "output_dir",
    "synth_size",
    "synth_strokes",
    "synth_width_min",
    "synth_width_max",
    "synth_crossings",
    "synth_radius",
    "synth_noise",
    "synth_tint",
    "synth_train",
    "synth_test",
];

fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

fn flag(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "on" | "1" => Ok(true),
        "false" | "off" | "0" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected true or false, got {value:?}"))),
    }
}

fn opt_path(value: &str) -> Option<PathBuf> {
    (!value.is_empty()).then(|| PathBuf::from(value))
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        let mut seen = std::collections::HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", i + 1)))?;
            let key = key.trim();
            if !seen.insert(key.to_string()) {
                return Err(Error::Config(format!("line {}: duplicate key {key}", i + 1)));
            }
            cfg.set(key, value.trim())
                .map_err(|e| Error::Config(format!("line {}: {}", i + 1, e.to_string().trim_start_matches("invalid configuration: "))))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingPath(path.to_path_buf()),
            _ => e.into(),
        })?;
        RunConfig::parse(&text)
    }

    /// Sets one key; used by the parser and for command-line overrides.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let t = &mut self.train;
        let s = &mut self.synthetic;
        match key {
            "data_root" => self.data_root = opt_path(value),
            "split_file" => self.split_file = opt_path(value),
            "preset" => {
                self.preset = match value {
                    "none" | "" => None,
                    _ => Some(DatasetPreset::from_name(value).ok_or_else(|| {
                        Error::Config(format!("preset: unknown dataset {value:?}, expected drive-av, les-av, hrf-av or none"))
                    })?),
                }
            }
            "geometry" => self.geometry = Some(Geometry::parse(value)?),
            "val_fraction" => {
                self.val_fraction = num(key, value)?;
                s.val_fraction = self.val_fraction;
            }
            "class_names" => {
                self.scheme.class_names = value.split(',').map(|n| n.trim().to_string()).collect();
                t.model.num_classes = self.scheme.class_names.len();
            }
            "class_colors" => self.scheme.color_map = ClassScheme::parse_colors(value)?,
            "depth" => t.model.depth = num(key, value)?,
            "base_channels" => t.model.base_channels = num(key, value)?,
            "disc_depth" => t.model.disc_depth = num(key, value)?,
            "disc_base_channels" => t.model.disc_base_channels = num(key, value)?,
            "seg" => t.toggles.seg = flag(key, value)?,
            "deep_supervision" => t.toggles.deep_supervision = flag(key, value)?,
            "binary_fusion" => t.toggles.binary_fusion = flag(key, value)?,
            "learning_rate" => t.adam.learning_rate = num(key, value)?,
            "adam_beta1" => t.adam.beta1 = num(key, value)?,
            "adam_beta2" => t.adam.beta2 = num(key, value)?,
            "adam_eps" => t.adam.eps = num(key, value)?,
            "batch_size" => t.batch_size = num(key, value)?,
            "epochs" => t.epochs = num(key, value)?,
            "max_steps" => {
                t.max_steps = match value {
                    "none" | "" => None,
                    _ => Some(num(key, value)?),
                }
            }
            "alpha" => t.weights.alpha = num(key, value)?,
            "beta" => t.weights.beta = num(key, value)?,
            "gamma" => t.weights.gamma = num(key, value)?,
            "seed" => {
                t.seed = num(key, value)?;
                s.scene.seed = t.seed;
            }
            "output_dir" => self.output_dir = PathBuf::from(value),
            "synth_size" => {
                s.scene.size = crate::datasets::parse_size(value)
                    .ok_or_else(|| Error::Config(format!("synth_size: expected WxH, got {value:?}")))?
            }
            "synth_strokes" => s.scene.strokes_per_class = num(key, value)?,
            "synth_width_min" => s.scene.width_min = num(key, value)?,
            "synth_width_max" => s.scene.width_max = num(key, value)?,
            "synth_crossings" => s.scene.crossings = num(key, value)?,
            "synth_radius" => s.scene.radius = num(key, value)?,
            "synth_noise" => s.scene.noise = num(key, value)?,
            "synth_tint" => s.scene.tint = num(key, value)?,
            "synth_train" => s.train = num(key, value)?,
            "synth_test" => s.test = num(key, value)?,
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.scheme.validate()?;
        if self.scheme.num_classes() != self.train.model.num_classes {
            return Err(Error::Config("class_names and network class count differ".into()));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::Config(format!("val_fraction {} outside [0, 1)", self.val_fraction)));
        }
        self.synthetic.scene.validate()?;
        self.train.validate()
    }

    /// Explicit geometry, else the preset's, else none.
    pub fn resolved_geometry(&self) -> Geometry {
        self.geometry
            .or_else(|| self.preset.map(|p| p.geometry()))
            .unwrap_or(Geometry::Identity)
    }

    /// `output_dir`, re-rooted under the override variable when set and the
    /// configured path is relative.
    pub fn output_root(&self) -> PathBuf {
        match std::env::var_os(OUTPUT_ROOT_ENV) {
            Some(root) if !root.is_empty() => {
                if self.output_dir.is_absolute() {
                    PathBuf::from(root).join(self.output_dir.file_name().unwrap_or_default())
                } else {
                    PathBuf::from(root).join(&self.output_dir)
                }
            }
            _ => self.output_dir.clone(),
        }
    }

    pub fn with_toggles(&self, toggles: Toggles) -> RunConfig {
        let mut c = self.clone();
        c.train.toggles = toggles;
        c
    }

    pub fn get(&self, key: &str) -> Option<String> {
        let t = &self.train;
        let s = &self.synthetic;
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        Some(match key {
            "data_root" => path(&self.data_root),
            "split_file" => path(&self.split_file),
            "preset" => self.preset.map(|p| p.name().to_string()).unwrap_or_else(|| "none".into()),
            "geometry" => self.resolved_geometry().to_string(),
            "val_fraction" => self.val_fraction.to_string(),
            "class_names" => self.scheme.class_names.join(","),
            "class_colors" => self.scheme.colors_to_string(),
            "depth" => t.model.depth.to_string(),
            "base_channels" => t.model.base_channels.to_string(),
            "disc_depth" => t.model.disc_depth.to_string(),
            "disc_base_channels" => t.model.disc_base_channels.to_string(),
            "seg" => t.toggles.seg.to_string(),
            "deep_supervision" => t.toggles.deep_supervision.to_string(),
            "binary_fusion" => t.toggles.binary_fusion.to_string(),
            "learning_rate" => t.adam.learning_rate.to_string(),
            "adam_beta1" => t.adam.beta1.to_string(),
            "adam_beta2" => t.adam.beta2.to_string(),
            "adam_eps" => t.adam.eps.to_string(),
            "batch_size" => t.batch_size.to_string(),
            "epochs" => t.epochs.to_string(),
            "max_steps" => t.max_steps.map(|m| m.to_string()).unwrap_or_else(|| "none".into()),
            "alpha" => t.weights.alpha.to_string(),
            "beta" => t.weights.beta.to_string(),
            "gamma" => t.weights.gamma.to_string(),
            "seed" => t.seed.to_string(),
            "output_dir" => self.output_dir.display().to_string(),
            "synth_size" => s.scene.size.to_string(),
            "synth_strokes" => s.scene.strokes_per_class.to_string(),
            "synth_width_min" => s.scene.width_min.to_string(),
            "synth_width_max" => s.scene.width_max.to_string(),
            "synth_crossings" => s.scene.crossings.to_string(),
            "synth_radius" => s.scene.radius.to_string(),
            "synth_noise" => s.scene.noise.to_string(),
            "synth_tint" => s.scene.tint.to_string(),
            "synth_train" => s.train.to_string(),
            "synth_test" => s.test.to_string(),
            _ => return None,
        })
    }

    /// Every key with its resolved value; parses back to an equal config
    /// (up to the geometry default becoming explicit).
    pub fn to_text(&self) -> String {
        KEYS.iter()
            .map(|k| format!("{k} = {}\n", self.get(k).expect("listed key")))
            .collect()
    }

    /// Network size of images in this run: the geometry target, or the
    /// synthetic scene size when there is no geometry.
    pub fn network_size_hint(&self) -> Size {
        match self.resolved_geometry() {
            Geometry::Pad(s) | Geometry::Resize(s) => s,
            Geometry::Identity => self.synthetic.scene.size,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_published_settings() {
        let c = RunConfig::default();
        assert_eq!(c.train.adam.learning_rate, 0.0008);
        assert_eq!(c.train.batch_size, 2);
        assert_eq!(c.train.epochs, 1500);
        assert_eq!((c.train.weights.alpha, c.train.weights.beta, c.train.weights.gamma), (0.08, 1.1, 0.5));
        assert_eq!(c.val_fraction, 0.10);
    }

    #[test]
    fn unknown_and_duplicate_keys_fail() {
        assert!(RunConfig::parse("colour = red\n").is_err());
        assert!(RunConfig::parse("seed = 1\nseed = 2\n").is_err());
        assert!(RunConfig::parse("seed\n").is_err());
        assert!(RunConfig::parse("seg = maybe\n").is_err());
    }

    #[test]
    fn text_round_trip() {
        let c = RunConfig::parse("preset = les-av\nseed = 4 # comment\nseg = off\ndata_root = /tmp/x\n").unwrap();
        assert_eq!(c.resolved_geometry(), Geometry::Resize(Size::new(800, 720)));
        assert!(!c.train.toggles.seg);
        let back = RunConfig::parse(&c.to_text()).unwrap();
        assert_eq!(back.train, c.train);
        assert_eq!(back.resolved_geometry(), c.resolved_geometry());
        assert_eq!(back.scheme, c.scheme);
        for k in KEYS {
            assert!(c.get(k).is_some(), "{k}");
        }
    }

    #[test]
    fn class_count_follows_names() {
        let c = RunConfig::parse("class_names = bg,a,v\nclass_colors = 0,0,0=0;255,0,0=1;0,0,255=2\n").unwrap();
        assert_eq!(c.train.model.num_classes, 3);
        assert!(RunConfig::parse("class_names = bg,a,v\n").is_err());
    }
}
