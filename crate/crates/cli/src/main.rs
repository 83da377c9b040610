//! `avfusion` command-line tool: train, eval, predict, curves, stats,
//! synth and ablate.

mod svg;

use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use avfusion::checkpoint::Checkpoint;
use avfusion::datasets::{
    ClassScheme, DatasetDir, Geometry, LabelMap, SplitPart, SplitSpec, image_to_tensor, plane_to_gray, read_rgb, write_png,
};
use avfusion::metrics::{self, Curve, METRIC_NAMES, MannWhitney, Summary};
use avfusion::synthetic::{load_mask, write_dataset};
use avfusion::training::{self, BEST_CHECKPOINT, EvalSample, Evaluation, PreparedSample, Toggles};
use avfusion::{Error, RunConfig};

#[derive(Parser)]
#[command(name = "avfusion", version, about = "Artery/vein segmentation with binary-to-multi-class fusion")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model; writes checkpoints and logs to the output directory.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a split and write a metric report.
    Eval(EvalArgs),
    /// Segment one image and write class and branch maps.
    Predict(PredictArgs),
    /// Plot ROC and PR curves of one or more reports as SVG.
    Curves(CurvesArgs),
    /// Mann-Whitney U tests between the per-image metrics of two reports.
    Stats(StatsArgs),
    /// Generate a synthetic crossing dataset.
    Synth(SynthArgs),
    /// Train and evaluate the four Seg/Deep/BF configurations.
    Ablate(AblateArgs),
}

#[derive(Args)]
struct ConfigArgs {
    /// Run configuration file (`key = value` lines).
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Override a configuration key, e.g. `--set epochs=10`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    epochs: Option<usize>,
    /// Output directory; defaults to the configured one.
    #[arg(short, long)]
    out: Option<PathBuf>,
    /// Continue from `last.ckpt` in the output directory.
    #[arg(long)]
    resume: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value = "test")]
    split: String,
    #[arg(short, long)]
    out: PathBuf,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    image: PathBuf,
    /// `none`, `pad:WxH` or `resize:WxH`.
    #[arg(long, default_value = "none")]
    geometry: String,
    #[arg(short, long)]
    out: PathBuf,
}

#[derive(Args)]
struct CurvesArgs {
    /// Report directories containing `roc.txt` and `pr.txt`.
    #[arg(required = true)]
    reports: Vec<PathBuf>,
    #[arg(short, long)]
    out: PathBuf,
}

#[derive(Args)]
struct StatsArgs {
    /// Report directory (or its `report.json`) of the first method.
    a: PathBuf,
    b: PathBuf,
    /// Also write the table to this file.
    #[arg(short, long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Dataset directory; defaults to the configured `data_root`.
    #[arg(short, long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AblateArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Seeds per configuration: `seed`, `seed + 1`, ...
    #[arg(long, default_value_t = 1)]
    seeds: u64,
    /// Run the four configurations on separate threads.
    #[arg(long)]
    parallel: bool,
    #[arg(short, long)]
    out: Option<PathBuf>,
}

/// Bad command-line input; exit code 2.
#[derive(Debug)]
struct UsageError(String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<UsageError>() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<Error>() {
            return match e {
                Error::Config(_)
                | Error::MissingPath(_)
                | Error::UnmappedColor { .. }
                | Error::ArchitectureMismatch { .. }
                | Error::Checkpoint(_) => 2,
                _ => 1,
            };
        }
    }
    1
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Curves(a) => cmd_curves(a),
        Command::Stats(a) => cmd_stats(a),
        Command::Synth(a) => cmd_synth(a),
        Command::Ablate(a) => cmd_ablate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn load_config(args: &ConfigArgs) -> Result<RunConfig> {
    let mut cfg = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    for kv in &args.overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| usage(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    cfg.validate()?;
    Ok(cfg)
}

struct Data {
    dir: DatasetDir,
    split: SplitSpec,
    geometry: Geometry,
}

impl Data {
    fn open(cfg: &RunConfig) -> Result<Data> {
        let root = cfg.data_root.clone().ok_or_else(|| Error::Config("data_root is not set".into()))?;
        if !root.is_dir() {
            return Err(Error::MissingPath(root).into());
        }
        let dir = DatasetDir::open(&root, cfg.scheme.clone())?;
        let split_path = cfg.split_file.clone().or_else(|| Some(root.join("split.txt")).filter(|p| p.is_file()));
        let split = match (split_path, cfg.preset) {
            (Some(p), _) => {
                let text = std::fs::read_to_string(&p).map_err(|_| Error::MissingPath(p.clone()))?;
                SplitSpec::parse(&text, cfg.val_fraction, cfg.train.seed)?
            }
            (None, Some(preset)) => {
                let (n_train, n_test) = preset.split_sizes();
                SplitSpec::from_counts(dir.ids()?, n_train, n_test, cfg.val_fraction, cfg.train.seed)?
            }
            (None, None) => {
                return Err(Error::Config(format!("no split file under {} and no preset", root.display())).into());
            }
        };
        Ok(Data {
            dir,
            split,
            geometry: cfg.resolved_geometry(),
        })
    }

    fn prepared(&self, part: SplitPart, num_classes: usize) -> Result<Vec<PreparedSample>> {
        self.split
            .ids(part)
            .iter()
            .map(|id| Ok(training::prepare(&self.dir.load(id)?, self.geometry, num_classes)?))
            .collect()
    }

    fn eval_samples(&self, part: SplitPart) -> Result<Vec<EvalSample>> {
        self.split
            .ids(part)
            .iter()
            .map(|id| {
                Ok(EvalSample {
                    sample: self.dir.load(id)?,
                    geometry: self.geometry,
                    mask: load_mask(&self.dir.root, id)?,
                })
            })
            .collect()
    }
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let mut cfg = load_config(&args.config)?;
    if let Some(e) = args.epochs {
        cfg.train.epochs = e;
    }
    let data = Data::open(&cfg)?;
    let out = args.out.unwrap_or_else(|| cfg.output_root());
    let c = cfg.train.model.num_classes;
    let train = data.prepared(SplitPart::Train, c)?;
    let val = data.eval_samples(SplitPart::Val)?;
    std::fs::create_dir_all(&out)?;
    std::fs::write(out.join("config.txt"), cfg.to_text())?;
    std::fs::write(out.join("split.txt"), data.split.to_text())?;
    eprintln!(
        "training {} on {} images ({} val) into {}",
        cfg.train.toggles.label(),
        train.len(),
        val.len(),
        out.display()
    );
    let outcome = training::fit(&cfg.train, &train, &val, Some(&out), args.resume)?;
    for r in &outcome.history {
        eprintln!(
            "epoch {} steps {} loss {:.4} val F1 {}",
            r.epoch,
            r.steps,
            r.mean_total,
            r.val_f1.map(|f| format!("{f:.4}")).unwrap_or_else(|| "-".into())
        );
    }
    println!(
        "best epoch {} (val F1 {}), checkpoint {}",
        outcome.best_epoch.map(|e| e.to_string()).unwrap_or_else(|| "0".into()),
        outcome.best_f1.map(|f| format!("{f:.4}")).unwrap_or_else(|| "-".into()),
        out.join(BEST_CHECKPOINT).display()
    );
    Ok(())
}

fn table(header: &[String], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for r in rows {
        for (w, cell) in widths.iter_mut().zip(r) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let line = |cells: &[String]| {
        let padded: Vec<String> = cells
            .iter()
            .zip(&widths)
            .map(|(c, &w)| format!("{c}{}", " ".repeat(w - c.chars().count())))
            .collect();
        format!("| {} |\n", padded.join(" | "))
    };
    let mut s = line(header);
    s.push_str(&format!(
        "|{}|\n",
        widths.iter().map(|&w| "-".repeat(w + 2)).collect::<Vec<_>>().join("|")
    ));
    for r in rows {
        s.push_str(&line(r));
    }
    s
}

fn metric_header(first: &str) -> Vec<String> {
    std::iter::once(first.to_string())
        .chain(METRIC_NAMES.iter().map(|m| m.to_string()))
        .collect()
}

const REPORT_FILE: &str = "report.json";

/// Writes `report.json`, `roc.txt`, `pr.txt` and `table.md`.
fn write_report(dir: &Path, eval: &Evaluation) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join(REPORT_FILE), serde_json::to_string_pretty(eval)?)?;
    std::fs::write(dir.join("roc.txt"), eval.report.roc_curve.to_text())?;
    std::fs::write(dir.join("pr.txt"), eval.report.pr_curve.to_text())?;
    let mut row = vec![eval.report.name.clone()];
    row.extend(eval.report.table_row());
    std::fs::write(dir.join("table.md"), table(&metric_header("Split"), &[row]))?;
    Ok(())
}

fn read_report(path: &Path) -> Result<Evaluation> {
    let file = if path.is_dir() { path.join(REPORT_FILE) } else { path.to_path_buf() };
    let text = std::fs::read_to_string(&file).map_err(|_| Error::MissingPath(file.clone()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", file.display()))
}

fn load_checkpoint(path: &Path) -> Result<(training::TrainConfig, avfusion::FusionModel<f32>)> {
    let ck = Checkpoint::read(path)?;
    Ok(training::load_model(&ck)?)
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let cfg = load_config(&args.config)?;
    let part = SplitPart::parse(&args.split)?;
    let data = Data::open(&cfg)?;
    let (_, mut model) = load_checkpoint(&args.checkpoint)?;
    let samples = data.eval_samples(part)?;
    if samples.is_empty() {
        return Err(usage(format!("split {} is empty", part.name())));
    }
    let eval = training::evaluate(&mut model, &samples, part.name())?;
    write_report(&args.out, &eval)?;
    let mut row = vec![part.name().to_string()];
    row.extend(eval.report.table_row());
    print!("{}", table(&metric_header("Split"), &[row]));
    if let Some(f) = eval.crossing_f1 {
        println!("crossing-region F1 {:.2}", f * 100.0);
    }
    Ok(())
}

/// Label colours drawn at half opacity over the image.
fn overlay(image: &image::RgbImage, labels: &LabelMap, scheme: &ClassScheme) -> image::RgbImage {
    let mut out = image.clone();
    for (i, px) in out.pixels_mut().enumerate() {
        let class = labels.data[i];
        if class != 0 {
            let c = scheme.color_of(class);
            for k in 0..3 {
                px.0[k] = ((px.0[k] as u16 + c[k] as u16) / 2) as u8;
            }
        }
    }
    out
}

fn cmd_predict(args: PredictArgs) -> Result<()> {
    let geometry = Geometry::parse(&args.geometry)?;
    let (_, mut model) = load_checkpoint(&args.checkpoint)?;
    let rgb = read_rgb(&args.image)?;
    let image = image_to_tensor(&rgb);
    let size = avfusion::Size::new(rgb.width() as usize, rgb.height() as usize);
    let pred = model.infer(&geometry.apply_image(&image)?)?;
    let probs = geometry.restore(&pred.fused_probs, size)?;
    let scheme = ClassScheme::default();
    let c = model.config.num_classes;
    if scheme.num_classes() != c {
        return Err(usage(format!("checkpoint has {c} classes, the default colour scheme {}", scheme.num_classes())));
    }
    let labels = LabelMap::new(size, metrics::argmax_labels(&probs));
    std::fs::create_dir_all(&args.out)?;
    write_png(&args.out.join("classes.png"), &labels.to_rgb(&scheme))?;
    write_png(&args.out.join("overlay.png"), &overlay(&rgb, &labels, &scheme))?;
    for (k, name) in scheme.class_names.iter().enumerate() {
        write_png(&args.out.join(format!("prob_{name}.png")), &plane_to_gray(&probs, k))?;
    }
    for (name, branch) in [("artery", &pred.artery_prob), ("vein", &pred.vein_prob)] {
        if let Some(map) = branch {
            write_png(&args.out.join(format!("branch_{name}.png")), &plane_to_gray(&geometry.restore(map, size)?, 0))?;
        }
    }
    println!("wrote predictions for {} to {}", args.image.display(), args.out.display());
    Ok(())
}

fn report_name(dir: &Path) -> String {
    dir.file_name()
        .or_else(|| dir.parent().and_then(|p| p.file_name()))
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| dir.display().to_string())
}

fn cmd_curves(args: CurvesArgs) -> Result<()> {
    let mut roc = Vec::new();
    let mut pr = Vec::new();
    for dir in &args.reports {
        let read = |f: &str| -> Result<Curve> {
            let p = dir.join(f);
            let text = std::fs::read_to_string(&p).map_err(|_| Error::MissingPath(p.clone()))?;
            Ok(Curve::from_text(&text)?)
        };
        let name = report_name(dir);
        let (r, p) = (read("roc.txt")?, read("pr.txt")?);
        println!("{name}: ROC area {:.4}, PR area {:.4}", r.trapezoid_area(), p.trapezoid_area());
        roc.push((name.clone(), r));
        pr.push((name, p));
    }
    std::fs::create_dir_all(&args.out)?;
    std::fs::write(
        args.out.join("roc.svg"),
        svg::line_chart("ROC", "False positive rate", "True positive rate", &roc, true),
    )?;
    std::fs::write(args.out.join("pr.svg"), svg::line_chart("PR", "Recall", "Precision", &pr, false))?;
    println!("wrote {} and {}", args.out.join("roc.svg").display(), args.out.join("pr.svg").display());
    Ok(())
}

fn cmd_stats(args: StatsArgs) -> Result<()> {
    let a = read_report(&args.a)?;
    let b = read_report(&args.b)?;
    let mut rows = Vec::new();
    for m in METRIC_NAMES {
        let (x, y) = (a.report.column(m).unwrap_or_default(), b.report.column(m).unwrap_or_default());
        let t = metrics::mann_whitney_u(&x, &y)?;
        rows.push(vec![
            m.to_string(),
            format!("{:.2}", Summary::of(&x).mean),
            format!("{:.2}", Summary::of(&y).mean),
            format!("{}", t.u),
            format!("{:.4}", t.p_two_sided),
            if t.exact { "exact" } else { "normal" }.to_string(),
        ]);
    }
    let header: Vec<String> = ["Metric", "Mean A", "Mean B", "U", "P-value", "Method"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let mut text = format!("A = {}\nB = {}\n\n", args.a.display(), args.b.display());
    text.push_str(&table(&header, &rows));
    let p_row: Vec<String> = std::iter::once("P-value".to_string()).chain(rows.iter().map(|r| r[4].clone())).collect();
    text.push('\n');
    text.push_str(&table(&metric_header(""), &[p_row]));
    print!("{text}");
    if let Some(out) = &args.out {
        if let Some(parent) = out.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(out, text)?;
    }
    Ok(())
}

fn cmd_synth(args: SynthArgs) -> Result<()> {
    let cfg = load_config(&args.config)?;
    let root = args
        .out
        .or(cfg.data_root.clone())
        .ok_or_else(|| usage("no output directory: pass --out or set data_root"))?;
    let mut spec = cfg.synthetic.clone();
    spec.scene.seed = cfg.train.seed;
    spec.val_fraction = cfg.val_fraction;
    let summary = write_dataset(&root, &spec, &cfg.scheme)?;
    println!(
        "wrote {} scenes to {} ({} train, {} val, {} test); class pixels {:?}, artery/vein imbalance {:.3}",
        summary.scenes,
        root.display(),
        summary.split.train.len(),
        summary.split.val.len(),
        summary.split.test.len(),
        summary.class_pixels,
        summary.artery_vein_imbalance()
    );
    Ok(())
}

/// Test-split results of one trained configuration and seed.
#[derive(Clone, Debug, Serialize, Deserialize)]
struct AblationRun {
    seed: u64,
    f1: f64,
    auc_roc: f64,
    crossing_f1: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct AblationRow {
    label: String,
    runs: Vec<AblationRun>,
}

fn slug(label: &str) -> String {
    label.to_lowercase().replace('+', "-")
}

fn run_row(cfg: &RunConfig, toggles: Toggles, seeds: u64, data: &Data, out: &Path) -> Result<AblationRow> {
    let label = toggles.label();
    let c = cfg.train.model.num_classes;
    let train = data.prepared(SplitPart::Train, c)?;
    let val = data.eval_samples(SplitPart::Val)?;
    let test = data.eval_samples(SplitPart::Test)?;
    let mut runs = Vec::new();
    for k in 0..seeds {
        let mut tc = cfg.with_toggles(toggles).train;
        tc.seed = cfg.train.seed + k;
        let dir = out.join(slug(&label)).join(format!("seed{}", tc.seed));
        let outcome = training::fit(&tc, &train, &val, Some(&dir), false)?;
        let (_, mut model) = training::load_model(&outcome.best)?;
        let eval = training::evaluate(&mut model, &test, "test")?;
        write_report(&dir.join("test"), &eval)?;
        eprintln!(
            "{label} seed {}: F1 {:.4} crossing F1 {}",
            tc.seed,
            eval.report.f1.mean,
            eval.crossing_f1.map(|f| format!("{f:.4}")).unwrap_or_else(|| "-".into())
        );
        runs.push(AblationRun {
            seed: tc.seed,
            f1: eval.report.f1.mean,
            auc_roc: eval.report.auc_roc.mean,
            crossing_f1: eval.crossing_f1,
        });
    }
    Ok(AblationRow { label, runs })
}

fn mean_of(runs: &[AblationRun], f: impl Fn(&AblationRun) -> Option<f64>) -> Option<f64> {
    let v: Vec<f64> = runs.iter().filter_map(f).collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// `value (+growth)` in percent; the first row has no bracket.
fn with_growth(value: Option<f64>, previous: Option<Option<f64>>) -> String {
    match (value, previous) {
        (None, _) => "-".into(),
        (Some(v), Some(Some(p))) => format!("{:.2} ({:+.2})", v * 100.0, (v - p) * 100.0),
        (Some(v), _) => format!("{:.2}", v * 100.0),
    }
}

fn ablation_table(rows: &[AblationRow]) -> String {
    let extract: [fn(&AblationRun) -> Option<f64>; 3] = [|r| Some(r.auc_roc), |r| Some(r.f1), |r| r.crossing_f1];
    let mut cells = Vec::new();
    for (i, row) in rows.iter().enumerate() {
        let mut r = vec![row.label.clone()];
        for f in extract {
            let prev = i.checked_sub(1).map(|j| mean_of(&rows[j].runs, f));
            r.push(with_growth(mean_of(&row.runs, f), prev));
        }
        cells.push(r);
    }
    let header: Vec<String> = ["Method", "ROC", "F1", "Crossing F1"].iter().map(|s| s.to_string()).collect();
    table(&header, &cells)
}

/// One-sided test that the last row beats the one before on crossing F1.
fn fusion_increment_test(rows: &[AblationRow]) -> Option<MannWhitney> {
    let [.., before, full] = rows else { return None };
    let xs = |r: &AblationRow| r.runs.iter().filter_map(|x| x.crossing_f1).collect::<Vec<_>>();
    metrics::mann_whitney_u(&xs(full), &xs(before)).ok()
}

fn cmd_ablate(args: AblateArgs) -> Result<()> {
    let cfg = load_config(&args.config)?;
    if args.seeds == 0 {
        return Err(usage("--seeds must be at least 1"));
    }
    let data = Data::open(&cfg)?;
    let out = args.out.unwrap_or_else(|| cfg.output_root().join("ablation"));
    std::fs::create_dir_all(&out)?;
    let rows: Vec<AblationRow> = if args.parallel {
        std::thread::scope(|s| {
            let handles: Vec<_> = Toggles::ABLATION
                .iter()
                .map(|&t| {
                    let (cfg, data, out) = (&cfg, &data, &out);
                    s.spawn(move || run_row(cfg, t, args.seeds, data, out))
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("ablation thread panicked"))
                .collect::<Result<_>>()
        })?
    } else {
        Toggles::ABLATION
            .iter()
            .map(|&t| run_row(&cfg, t, args.seeds, &data, &out))
            .collect::<Result<_>>()?
    };
    let mut text = ablation_table(&rows);
    if let Some(t) = fusion_increment_test(&rows) {
        text.push_str(&format!(
            "\nBF increment on crossing F1: U = {}, one-sided p = {:.4} ({})\n",
            t.u,
            t.p_greater,
            if t.exact { "exact" } else { "normal approximation" }
        ));
    }
    print!("{text}");
    std::fs::write(out.join("ablation.md"), &text)?;
    std::fs::write(out.join("ablation.json"), serde_json::to_string_pretty(&rows)?)?;
    Ok(())
}
