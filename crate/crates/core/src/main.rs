use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use ava_bench::counting;
use ava_bench::model::EvalConfig;
use ava_bench::report::{self, VideoInput, VideoReport};
use ava_bench::synth;
use ava_bench::{Error, Result};

#[derive(Parser)]
#[command(name = "ava-bench", version, about = "Evaluate anonymous video analytics output against annotations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate one video, or every video of a dataset directory.
    Evaluate(EvaluateArgs),
    /// Per-window temporal counting errors for one video.
    Tcoe(TcoeArgs),
    /// Evaluate one video at several input frame rates.
    Sweep(SweepArgs),
    /// Generate synthetic annotations and estimations.
    Synth(SynthArgs),
    /// Render an existing report.json.
    Report(ReportArgs),
}

#[derive(Args)]
struct VideoArgs {
    #[arg(long)]
    gt: PathBuf,
    #[arg(long)]
    est: PathBuf,
    #[arg(long)]
    meta: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long, required_unless_present = "dataset", requires_all = ["est", "meta"])]
    gt: Option<PathBuf>,
    #[arg(long, requires = "gt")]
    est: Option<PathBuf>,
    #[arg(long, requires = "gt")]
    meta: Option<PathBuf>,
    /// Directory holding `<name>.meta.json`, `<name>.gt.jsonl|csv` and `<name>.est.jsonl|csv`.
    #[arg(long, conflicts_with = "gt")]
    dataset: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Videos evaluated concurrently.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Also write per-frame matching results to matches.jsonl.
    #[arg(long)]
    dump_matches: bool,
}

#[derive(Args)]
struct TcoeArgs {
    #[command(flatten)]
    video: VideoArgs,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Segment durations in seconds; defaults to the configured ones.
    #[arg(long, value_delimiter = ',')]
    durations: Vec<f64>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    video: VideoArgs,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Comma separated input frame rates.
    #[arg(long, value_delimiter = ',', required = true)]
    fps: Vec<f64>,
}

#[derive(Args)]
struct SynthArgs {
    /// JSON file with one spec or an array of specs.
    #[arg(long)]
    spec: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Args)]
struct ReportArgs {
    /// Directory containing report.json.
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
    /// Where CSV tables go; defaults to the input directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn load_config(path: Option<&Path>) -> Result<EvalConfig> {
    let cfg = match path {
        None => EvalConfig::default(),
        Some(p) => {
            let s = fs::read_to_string(p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
            serde_json::from_str(&s).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
        }
    };
    cfg.validate()?;
    Ok(cfg)
}

fn thread_pool(jobs: usize) -> Result<rayon::ThreadPool> {
    if jobs == 0 {
        return Err(Error::Config("--jobs must be >= 1".into()));
    }
    rayon::ThreadPoolBuilder::new().num_threads(jobs).build().map_err(|e| Error::Config(e.to_string()))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn pick(dir: &Path, name: &str, kind: &str) -> Result<PathBuf> {
    for ext in ["jsonl", "csv"] {
        let p = dir.join(format!("{name}.{kind}.{ext}"));
        if p.is_file() {
            return Ok(p);
        }
    }
    Err(Error::io(dir.join(format!("{name}.{kind}.jsonl")), std::io::ErrorKind::NotFound.into()))
}

/// `(gt, est, meta)` paths of every video in a dataset directory, by name.
fn discover(dir: &Path) -> Result<Vec<(PathBuf, PathBuf, PathBuf)>> {
    let mut names = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        if let Some(name) = entry.file_name().to_str().and_then(|n| n.strip_suffix(".meta.json")) {
            names.push(name.to_string());
        }
    }
    names.sort();
    if names.is_empty() {
        return Err(Error::EmptyInput);
    }
    names.iter().map(|n| Ok((pick(dir, n, "gt")?, pick(dir, n, "est")?, dir.join(format!("{n}.meta.json"))))).collect()
}

fn write_outputs(out: &Path, reports: Vec<VideoReport>) -> Result<()> {
    let agg = report::aggregate(reports)?;
    write_file(&out.join("report.json"), report::to_json(&agg)?)?;
    report::write_csv_tables(&agg, out)?;
    Ok(())
}

fn windows_for(eval: &report::Evaluation, durations: &[f64]) -> Vec<(usize, Vec<u32>)> {
    durations
        .iter()
        .map(|&dur| {
            let d = counting::segment_frames(dur, eval.report.effective_fps);
            (d, counting::window_errors(&eval.gt_presence, &eval.est_presence, d))
        })
        .collect()
}

fn write_windows(path: &Path, eval: &report::Evaluation, durations: &[f64]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    counting::write_window_dump(std::io::BufWriter::new(file), &eval.kept, &windows_for(eval, durations))
}

fn evaluate(args: EvaluateArgs) -> Result<()> {
    let cfg = load_config(args.config.as_deref())?;
    let pool = thread_pool(args.jobs)?;
    create_dir(&args.out)?;
    if let Some(dir) = &args.dataset {
        let videos = discover(dir)?;
        let reports: Vec<VideoReport> = pool.install(|| {
            videos
                .par_iter()
                .map(|(gt, est, meta)| report::evaluate_video(gt, est, meta, &cfg))
                .collect::<Result<Vec<_>>>()
        })?;
        return write_outputs(&args.out, reports);
    }
    let (gt, est, meta) = (args.gt.unwrap(), args.est.unwrap(), args.meta.unwrap());
    let input = report::load_video(&gt, &est, &meta)?;
    let eval = report::evaluate_input(&input, &cfg)?;
    write_windows(&args.out.join("tcoe_windows.csv"), &eval, &cfg.segment_durations_s)?;
    if args.dump_matches {
        let mut buf = Vec::new();
        ava_bench::matching::write_match_dump(&eval.matches, &mut buf)?;
        write_file(&args.out.join("matches.jsonl"), buf)?;
    }
    write_outputs(&args.out, vec![eval.report])
}

fn tcoe(args: TcoeArgs) -> Result<()> {
    let mut cfg = load_config(args.config.as_deref())?;
    if !args.durations.is_empty() {
        cfg.segment_durations_s = args.durations;
        cfg.validate()?;
    }
    let v = &args.video;
    let eval = report::evaluate_input(&report::load_video(&v.gt, &v.est, &v.meta)?, &cfg)?;
    create_dir(&args.out)?;
    write_windows(&args.out.join("tcoe_windows.csv"), &eval, &cfg.segment_durations_s)?;
    println!("{}", serde_json::to_string_pretty(&eval.report.counting.tcoe)?);
    Ok(())
}

fn sweep(args: SweepArgs) -> Result<()> {
    let cfg = load_config(args.config.as_deref())?;
    let v = &args.video;
    let input: VideoInput = report::load_video(&v.gt, &v.est, &v.meta)?;
    let (points, skipped) = report::run_fps_sweep(&input, &cfg, &args.fps);
    for (fps, e) in &skipped {
        eprintln!("skipping fps {fps}: {e}");
    }
    if points.is_empty() {
        return Err(Error::Config("no valid frame rate to sweep".into()));
    }
    create_dir(&args.out)?;
    let mut buf = Vec::new();
    report::write_sweep_csv(&points, &mut buf)?;
    write_file(&args.out.join("sweep.csv"), buf)
}

fn synth(args: SynthArgs) -> Result<()> {
    let text = fs::read_to_string(&args.spec).map_err(|e| Error::io(&args.spec, e))?;
    let specs = synth::parse_specs(&text)?;
    let pool = thread_pool(args.jobs)?;
    pool.install(|| {
        specs
            .par_iter()
            .try_for_each(|s| synth::write_video(&args.out, &synth::generate(s)?).map_err(|e| e.in_video(&s.name)))
    })
}

fn render(args: ReportArgs) -> Result<()> {
    let path = args.input.join("report.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let parsed = report::from_json(&text)?;
    let agg = report::aggregate(parsed.videos)?;
    match args.format {
        Format::Json => print!("{}", report::to_json(&agg)?),
        Format::Csv => {
            for p in report::write_csv_tables(&agg, args.out.as_deref().unwrap_or(&args.input))? {
                println!("{}", p.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Evaluate(a) => evaluate(a),
        Command::Tcoe(a) => tcoe(a),
        Command::Sweep(a) => sweep(a),
        Command::Synth(a) => synth(a),
        Command::Report(a) => render(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let mut msg = e.to_string();
            let mut src = std::error::Error::source(&e);
            while let Some(s) = src {
                if !msg.contains(&s.to_string()) {
                    msg.push_str(&format!(": {s}"));
                }
                src = s.source();
            }
            eprintln!("error: {msg}");
            ExitCode::from(if e.is_config() { 3 } else { 2 })
        }
    }
}
