//! Command-line front end. [`run`] parses `argv`, dispatches one subcommand
//! and returns the process exit code.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::bnd::histogram_csv;
use crate::config::FlatConfig;
use crate::encoders::{load_checkpoint, save_checkpoint};
use crate::error::{Error, Result};
use crate::metrics::{write_report, MetricsReport, ReportFormat};
use crate::pointset::{generate_dataset, load_xyz, normalize_unit_sphere, save_dataset, DatasetConfig, PointCloud};
use crate::projection::{camera_views, compose_enhanced, detect_background, export_depth, export_enhanced, render_views};
use crate::trainer::{
    experiment_dataset, experiment_schedule, micro_accuracy, prepare, ExperimentConfig, Frozen, Learner, Mode, Net,
    PredictionRecord,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USER: i32 = 1;
pub const EXIT_INTERNAL: i32 = 2;

#[derive(Parser, Debug)]
#[command(name = "cmgr", about = "Few-shot class-incremental point-cloud learning with depth-guided rectification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic shape dataset as `<out>/<class>/<id>.xyz`.
    GenData(GenData),
    /// Render a cloud to per-view depth maps (PGM) and optional colored images (PPM).
    RenderDepth(RenderDepth),
    /// Run the full incremental protocol and write the run directory.
    Train(Train),
    /// Recount accuracies from a run's prediction log and check them against its report.
    Eval(Eval),
    /// Compute AA and the forgetting rate from an accuracy list or a report.
    Metrics(Metrics),
    /// Write pooled point features of a checkpointed network as CSV.
    DumpFeatures(DumpFeatures),
}

#[derive(Args, Debug)]
struct GenData {
    #[arg(long)]
    classes: usize,
    #[arg(long)]
    per_class: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 256)]
    points: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct RenderDepth {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value_t = 4)]
    views: usize,
    /// Height and width in pixels.
    #[arg(long, num_args = 2, value_names = ["H", "W"], default_values_t = [64, 64])]
    size: Vec<usize>,
    #[arg(long, default_value_t = 3)]
    splat: usize,
    /// Background color `r,g,b` in [0,1]; also writes `view_<v>.ppm`.
    #[arg(long, value_delimiter = ',')]
    color: Option<Vec<f64>>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Ablation {
    /// Fine-tune a single network on every task, no routing.
    Finetune,
}

#[derive(Args, Debug)]
struct Train {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    ablation: Option<Ablation>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct Eval {
    /// A directory written by `train`.
    #[arg(long)]
    run: PathBuf,
}

#[derive(Args, Debug)]
struct Metrics {
    /// Comma-separated `Acc_t` percentages.
    #[arg(long, value_delimiter = ',', conflicts_with = "report", required_unless_present = "report")]
    acc: Option<Vec<f64>>,
    /// A report CSV or text file.
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
    /// Also write the report here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Format {
    Csv,
    Text,
}

impl From<Format> for ReportFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Csv => ReportFormat::Csv,
            Format::Text => ReportFormat::Text,
        }
    }
}

#[derive(Args, Debug)]
struct DumpFeatures {
    #[arg(long)]
    checkpoint: PathBuf,
    /// A single `.xyz` cloud; without it the run's test pool is dumped.
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

/// Runs the CLI on `args` (program name first) and returns the exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USER,
            };
            let text = e.render().to_string();
            let _ = if code == EXIT_OK { stdout.write_all(text.as_bytes()) } else { stderr.write_all(text.as_bytes()) };
            return code;
        }
    };
    let result = match cli.command {
        Command::GenData(a) => gen_data(a, stdout),
        Command::RenderDepth(a) => render_depth(a, stdout),
        Command::Train(a) => train(a, stdout),
        Command::Eval(a) => eval(a, stdout),
        Command::Metrics(a) => metrics(a, stdout),
        Command::DumpFeatures(a) => dump_features(a, stdout),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            if e.is_user_error() {
                EXIT_USER
            } else {
                EXIT_INTERNAL
            }
        }
    }
}

fn say(out: &mut dyn Write, text: &str) -> Result<()> {
    out.write_all(text.as_bytes()).map_err(|e| Error::io("<stdout>", e))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn write_file(path: &Path, body: &str) -> Result<()> {
    fs::write(path, body).map_err(|e| Error::io(path, e))
}

fn gen_data(a: GenData, out: &mut dyn Write) -> Result<()> {
    let mut cfg = DatasetConfig::with_classes(a.classes, a.per_class, a.seed)?;
    cfg.n_points = a.points;
    let data = generate_dataset(&cfg)?;
    save_dataset(&data, &a.out)?;
    say(out, &format!("wrote {} clouds in {} classes to {}\n", data.len(), data.classes.len(), a.out.display()))
}

fn render_depth(a: RenderDepth, out: &mut dyn Write) -> Result<()> {
    let color = match a.color.as_deref() {
        None => None,
        Some(&[r, g, b]) => Some([r, g, b]),
        Some(_) => return Err(Error::invalid("--color takes exactly three values r,g,b")),
    };
    let pc = normalize_unit_sphere(&load_xyz(&a.input)?)?;
    let (h, w) = (a.size[0], a.size[1]);
    let views = camera_views(a.views)?;
    let maps = render_views(&pc, &views, h, w, a.splat)?;
    create_dir(&a.out)?;
    for (v, map) in maps.iter().enumerate() {
        export_depth(map, a.out.join(format!("view_{v}.pgm")))?;
        if let Some(c) = color {
            let img = compose_enhanced(map, &detect_background(map), c)?;
            export_enhanced(&img, a.out.join(format!("view_{v}.ppm")))?;
        }
    }
    say(out, &format!("rendered {} views at {h}x{w} to {}\n", maps.len(), a.out.display()))
}

const PREDICTIONS_HEADER: &str = "task,id,label,predicted,route,score";

fn predictions_csv(learner: &Learner) -> String {
    let mut s = format!("{PREDICTIONS_HEADER}\n");
    for e in &learner.evaluations {
        for p in &e.predictions {
            let (route, score) = match p.route {
                Some((r, v)) => (r.to_string(), format!("{v:.17e}")),
                None => ("-".to_string(), "-".to_string()),
            };
            let _ = writeln!(s, "{},{},{},{},{route},{score}", e.task, p.id, p.label, p.predicted);
        }
    }
    s
}

/// Parses a predictions log back into `(task, record)` rows. Routes are not
/// needed for recounting, so only their presence is kept.
fn parse_predictions(text: &str) -> Result<BTreeMap<usize, Vec<PredictionRecord>>> {
    let mut lines = text.lines().enumerate();
    if lines.next().map(|(_, l)| l) != Some(PREDICTIONS_HEADER) {
        return Err(Error::Parse { line: 1, message: format!("expected header '{PREDICTIONS_HEADER}'") });
    }
    let mut by_task: BTreeMap<usize, Vec<PredictionRecord>> = BTreeMap::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        let err = |m: &str| Error::Parse { line: i + 1, message: m.to_string() };
        let [task, id, label, predicted, _, _] = cells.as_slice() else { return Err(err("expected 6 cells")) };
        let task: usize = task.parse().map_err(|_| err("bad task index"))?;
        by_task.entry(task).or_default().push(PredictionRecord {
            id: id.to_string(),
            label: label.to_string(),
            predicted: predicted.to_string(),
            route: None,
        });
    }
    Ok(by_task)
}

fn train(a: Train, out: &mut dyn Write) -> Result<()> {
    let mut cfg = ExperimentConfig::from_flat(&FlatConfig::load(&a.config)?)?;
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    if let Some(Ablation::Finetune) = a.ablation {
        cfg.mode = Mode::FineTune;
    }
    let ckpt_dir = a.out.join("checkpoints");
    create_dir(&ckpt_dir)?;
    let mut learner = Learner::from_config(cfg)?;
    write_file(&a.out.join("schedule.txt"), &learner.schedule.to_text())?;

    let before = learner.frozen_checksums();
    learner.train_base()?;
    let net_b = learner.net_b.as_ref().ok_or_else(|| Error::state("base training left no frozen copy"))?;
    save_checkpoint(ckpt_dir.join("net_b.ckpt"), &learner.manifest(), &net_b.store)?;
    save_checkpoint(ckpt_dir.join("task_0.ckpt"), &learner.manifest(), &learner.net.store)?;
    say(out, &format!("task 0: acc {:.1}\n", learner.acc()[0]))?;
    let after_base = learner.frozen_checksums();

    for t in 1..learner.schedule.num_tasks() {
        if learner.cfg.mode == Mode::Full {
            learner.train_bnd(t)?;
        }
        let acc = learner.train_incremental(t)?.acc;
        save_checkpoint(ckpt_dir.join(format!("task_{t}.ckpt")), &learner.manifest(), &learner.net.store)?;
        say(out, &format!("task {t}: acc {acc:.1}\n"))?;
    }
    let end = learner.frozen_checksums();
    if end != after_base || end.depth != before.depth || end.prototypes != before.prototypes {
        return Err(Error::state("a frozen component changed during incremental training"));
    }

    let report = MetricsReport::new(learner.acc(), learner.evaluations.iter().map(|e| e.num_classes).collect())?;
    write_report(&report, a.out.join("report.csv"), ReportFormat::Csv)?;
    write_file(&a.out.join("predictions.csv"), &predictions_csv(&learner))?;
    let scores: Vec<f64> =
        learner.evaluations.iter().flat_map(|e| e.predictions.iter().filter_map(|p| p.route.map(|r| r.1))).collect();
    if !scores.is_empty() {
        write_file(&a.out.join("bnd_histogram.csv"), &histogram_csv(&scores, 10))?;
    }
    let mut manifest = learner.manifest();
    let _ = writeln!(manifest, "manifest.sha256 = {}", learner.manifest_checksum());
    write_file(&a.out.join("manifest.txt"), &manifest)?;
    say(out, &format!("{}\nwrote run to {}\n", report.summary(), a.out.display()))
}

fn eval(a: Eval, out: &mut dyn Write) -> Result<()> {
    let read = |name: &str| {
        let p = a.run.join(name);
        fs::read_to_string(&p).map_err(|e| Error::io(&p, e))
    };
    let predictions = parse_predictions(&read("predictions.csv")?)?;
    let report = MetricsReport::parse_csv(&read("report.csv")?)?;
    let manifest = FlatConfig::parse(&read("manifest.txt")?)?;
    if predictions.len() != report.tasks() {
        return Err(Error::invalid(format!(
            "the prediction log covers {} tasks but the report lists {}",
            predictions.len(),
            report.tasks()
        )));
    }
    let mut text = String::from("task,num_classes,acc\n");
    for (t, records) in &predictions {
        let acc = micro_accuracy(records)?;
        let logged = report.acc.get(*t).copied().ok_or_else(|| Error::invalid(format!("report lacks task {t}")))?;
        let manifest_acc: Option<f64> = match manifest.get_str(&format!("acc.{t}")) {
            Some(v) => Some(
                v.split('#').next().unwrap_or_default().trim().parse().map_err(|_| Error::invalid(format!("bad acc.{t} in manifest")))?,
            ),
            None => None,
        };
        if acc != logged || manifest_acc.is_some_and(|m| m != acc) {
            return Err(Error::invalid(format!("task {t}: recounted accuracy {acc} disagrees with the logged {logged}")));
        }
        let _ = writeln!(text, "{t},{},{acc:.1}", report.num_classes[*t]);
    }
    say(out, &format!("{text}{}\n", report.summary()))
}

fn metrics(a: Metrics, out: &mut dyn Write) -> Result<()> {
    let report = match (a.acc, &a.report) {
        (Some(acc), _) => {
            let n = acc.len();
            MetricsReport::new(acc, vec![0; n])?
        }
        (None, Some(path)) => crate::metrics::read_report(path, a.format.into())?,
        (None, None) => return Err(Error::invalid("either --acc or --report is required")),
    };
    if let Some(path) = &a.out {
        write_report(&report, path, a.format.into())?;
    }
    say(out, &format!("{}\n", report.summary()))
}

fn dump_features(a: DumpFeatures, out: &mut dyn Write) -> Result<()> {
    let ck = load_checkpoint(&a.checkpoint)?;
    let cfg = ExperimentConfig::from_manifest(&ck.manifest)?;
    let frozen = Frozen::new(&cfg)?;
    let mut net = Net::new(&cfg, cfg.seed)?;
    ck.apply(&mut net.store)?;
    let clouds: Vec<PointCloud> = match &a.input {
        Some(p) => vec![normalize_unit_sphere(&load_xyz(p)?)?],
        None => {
            let data = experiment_dataset(&cfg)?;
            let schedule = experiment_schedule(&cfg, &data)?;
            let mut v = Vec::new();
            for task in &schedule.tasks {
                for split in &task.splits {
                    for id in &split.test {
                        v.push(data.require(id)?.clone());
                    }
                }
            }
            v
        }
    };
    let mut csv = String::from("id,label");
    for j in 0..cfg.encoder.dim {
        let _ = write!(csv, ",f{j}");
    }
    csv.push('\n');
    for pc in &clouds {
        let sample = prepare(pc, &net.encoder, &frozen, &cfg)?;
        let f = net.point_feature(&sample, &cfg)?;
        let _ = write!(csv, "{},{}", pc.id, pc.label);
        for v in f {
            let _ = write!(csv, ",{v}");
        }
        csv.push('\n');
    }
    write_file(&a.out, &csv)?;
    say(out, &format!("wrote {} feature rows to {}\n", clouds.len(), a.out.display()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_str(args: &[&str]) -> (i32, String, String) {
        let (mut o, mut e) = (Vec::new(), Vec::new());
        let code = run(std::iter::once("cmgr").chain(args.iter().copied()), &mut o, &mut e);
        (code, String::from_utf8(o).unwrap(), String::from_utf8(e).unwrap())
    }

    #[test]
    fn unknown_flag_prints_usage() {
        let (code, _, err) = run_str(&["metrics", "--bogus"]);
        assert_eq!(code, EXIT_USER);
        assert!(err.contains("Usage"));
        assert_eq!(run_str(&["frobnicate"]).0, EXIT_USER);
        assert_eq!(run_str(&["--help"]).0, EXIT_OK);
    }

    #[test]
    fn bad_values_are_user_errors() {
        assert_eq!(run_str(&["metrics", "--acc", "50,0,10"]).0, EXIT_USER);
        assert_eq!(run_str(&["metrics", "--acc", "120"]).0, EXIT_USER);
        assert_eq!(run_str(&["train", "--config", "/nonexistent/x.cfg", "--out", "/tmp/x"]).0, EXIT_USER);
    }

    #[test]
    fn predictions_log_round_trip() {
        let text = format!("{PREDICTIONS_HEADER}\n0,a_0,a,a,-,-\n0,b_0,b,a,-,-\n1,c_0,c,c,novel,9.9e-1\n");
        let parsed = parse_predictions(&text).unwrap();
        assert_eq!(micro_accuracy(&parsed[&0]).unwrap(), 50.0);
        assert_eq!(parsed[&1].len(), 1);
        assert!(parse_predictions("nope\n").is_err());
    }
}
