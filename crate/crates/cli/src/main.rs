//! `vsharp` command-line front end.
//!
//! Every failure exits with status 1 and prints `{"class": .., "message": ..}`
//! on stderr. `class` is the library error class, or `usage` / `cli` for
//! problems detected here.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;
use vsharp::io::{self, Container, Sample};
use vsharp::mask::{self, MaskKind, SamplingMask};
use vsharp::metrics::{self, MetricReport};
use vsharp::mri::ComplexImage;
use vsharp::solver::{SolverConfig, VSharp};
use vsharp::train::{self, acs_fraction_for, PhantomSpec, TrainConfig};
use vsharp::{Real, Tensor};

#[derive(Parser)]
#[command(name = "vsharp", version, about = "Unrolled ADMM reconstruction of undersampled multi-coil MRI")]
struct Cli {
    /// Worker threads for slice-parallel work.
    #[arg(long, global = true, env = "VSHARP_THREADS", default_value_t = 1)]
    threads: usize,
    /// Compute in f64 instead of f32.
    #[arg(long, global = true)]
    double: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Reconstruct one or more sample containers.
    Recon(ReconArgs),
    /// Train a model on simulated phantoms.
    Train(TrainArgs),
    /// Generate a sampling mask.
    MaskGen(MaskGenArgs),
    /// Compare predictions against references.
    Eval(EvalArgs),
    /// Time full and reduced-block inference.
    Bench(BenchArgs),
    /// Write a simulated acquisition as a sample container.
    Phantom(PhantomArgs),
}

#[derive(Args)]
struct ReconArgs {
    /// Sample containers; several are reconstructed in parallel.
    #[arg(long, required = true, num_args = 1..)]
    input: Vec<PathBuf>,
    /// Retrospective mask: a mask file written by `mask-gen`, or
    /// `kind:accel[:acs[:seed]]`.
    #[arg(long)]
    mask: Option<String>,
    /// Solver configuration (JSON) or checkpoint.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Comma-separated 1-based blocks to run.
    #[arg(long, value_delimiter = ',')]
    blocks: Option<Vec<usize>>,
    /// Also store every block output.
    #[arg(long)]
    intermediates: bool,
    /// Use the maps stored in the sample instead of estimating them.
    #[arg(long)]
    known_maps: bool,
    /// Write magnitude PNGs.
    #[arg(long)]
    png: bool,
}

#[derive(Args)]
struct TrainArgs {
    /// JSON with optional `model` (solver) and `train` sections.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Override the number of iterations.
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct MaskGenArgs {
    #[arg(long = "type", value_enum)]
    kind: KindArg,
    #[arg(long)]
    accel: f64,
    /// ACS fraction; defaults to 0.32 / accel.
    #[arg(long)]
    acs: Option<f64>,
    /// `HxW`.
    #[arg(long, value_parser = parse_size)]
    size: (usize, usize),
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Mask file (u8 tensor with JSON sidecar).
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    png: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// Container with an `x` array (complex `[2,H,W]` or real `[H,W]`).
    #[arg(long)]
    pred: PathBuf,
    /// Container with `x_gt` or `x`.
    #[arg(long)]
    gt: PathBuf,
    #[arg(long, value_enum, default_value_t = ReportFormat::Json)]
    report: ReportFormat,
    /// Output file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    /// Solver configuration (JSON) or checkpoint; desk defaults when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "64x64", value_parser = parse_size)]
    size: (usize, usize),
    #[arg(long, default_value_t = 4)]
    coils: usize,
    #[arg(long, default_value_t = 4.0)]
    accel: f64,
    #[arg(long, default_value_t = 4)]
    volumes: usize,
    /// Reduced block subset to time; the configured subset when absent.
    #[arg(long, value_delimiter = ',')]
    reduced: Option<Vec<usize>>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct PhantomArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "64x64", value_parser = parse_size)]
    size: (usize, usize),
    #[arg(long, default_value_t = 4)]
    coils: usize,
    #[arg(long, value_enum, default_value_t = KindArg::Equispaced)]
    mask: KindArg,
    #[arg(long, default_value_t = 4.0)]
    accel: f64,
    #[arg(long)]
    acs: Option<f64>,
    #[arg(long, default_value_t = 0.0)]
    sigma: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Store the true coil maps.
    #[arg(long)]
    with_maps: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    Equispaced,
    Poisson,
    Full,
}

impl From<KindArg> for MaskKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Equispaced => MaskKind::Equispaced,
            KindArg::Poisson => MaskKind::Poisson,
            KindArg::Full => MaskKind::Full,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ReportFormat {
    Csv,
    Json,
}

fn parse_size(s: &str) -> Result<(usize, usize), String> {
    let (h, w) = s.split_once(['x', 'X']).ok_or_else(|| format!("expected HxW, got {s:?}"))?;
    let h = h.trim().parse().map_err(|e| format!("bad height in {s:?}: {e}"))?;
    let w = w.trim().parse().map_err(|e| format!("bad width in {s:?}: {e}"))?;
    Ok((h, w))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            report_error("usage", &e.to_string());
            return ExitCode::FAILURE;
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let class = e.downcast_ref::<vsharp::Error>().map_or("cli", vsharp::Error::class);
            report_error(class, &format!("{e:#}"));
            ExitCode::FAILURE
        }
    }
}

fn report_error(class: &str, message: &str) {
    eprintln!("{}", json!({ "class": class, "message": message.trim_end() }));
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if cli.threads == 0 {
        bail!("--threads must be at least 1");
    }
    let pool = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build()?;
    match cli.command {
        Command::Recon(a) if cli.double => pool.install(|| recon::<f64>(&a)),
        Command::Recon(a) => pool.install(|| recon::<f32>(&a)),
        Command::Train(a) if cli.double => train_cmd::<f64>(&a),
        Command::Train(a) => train_cmd::<f32>(&a),
        Command::MaskGen(a) => mask_gen(&a),
        Command::Eval(a) => eval(&a),
        Command::Bench(a) if cli.double => bench::<f64>(&a),
        Command::Bench(a) => bench::<f32>(&a),
        Command::Phantom(a) if cli.double => phantom::<f64>(&a),
        Command::Phantom(a) => phantom::<f32>(&a),
    }
}

/// A solver from a JSON configuration or a checkpoint container.
fn load_model<R: Real>(path: &Path) -> anyhow::Result<VSharp<R>> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    if bytes.starts_with(b"VSHC") {
        return Ok(io::load_checkpoint(path)?.0);
    }
    let text = std::str::from_utf8(&bytes).map_err(|_| anyhow!("{} is neither JSON nor a checkpoint", path.display()))?;
    Ok(VSharp::new(SolverConfig::from_json(text)?)?)
}

fn read_mask_arg(arg: &str, height: usize, width: usize) -> anyhow::Result<SamplingMask> {
    let path = Path::new(arg);
    if path.exists() {
        let m = io::read_mask(path)?;
        if (m.height, m.width) != (height, width) {
            bail!("mask is {}x{}, data is {height}x{width}", m.height, m.width);
        }
        return Ok(m);
    }
    let parts: Vec<&str> = arg.split(':').collect();
    let kind: MaskKind = parts[0].parse()?;
    let accel: f64 = match parts.get(1) {
        Some(s) => s.parse().with_context(|| format!("bad acceleration in mask spec {arg:?}"))?,
        None if kind == MaskKind::Full => 1.0,
        None => bail!("mask spec {arg:?} needs an acceleration: kind:accel[:acs[:seed]]"),
    };
    let acs = match parts.get(2) {
        Some(s) => s.parse().with_context(|| format!("bad ACS fraction in {arg:?}"))?,
        None => acs_fraction_for(accel),
    };
    let seed = match parts.get(3) {
        Some(s) => s.parse().with_context(|| format!("bad seed in {arg:?}"))?,
        None => 0,
    };
    Ok(mask::generate(kind, height, width, accel, acs, seed)?)
}

#[derive(Serialize)]
struct ReconSummary {
    input: String,
    blocks: Vec<usize>,
    seconds: f64,
    metrics: Option<Vec<MetricReport>>,
}

fn recon<R: Real>(a: &ReconArgs) -> anyhow::Result<()> {
    let model = load_model::<R>(&a.config)?;
    let blocks = a.blocks.clone().unwrap_or_else(|| model.default_blocks());
    fs::create_dir_all(&a.out)?;
    let summaries = a
        .input
        .par_iter()
        .enumerate()
        .map(|(i, path)| recon_one(&model, a, &blocks, i, path))
        .collect::<anyhow::Result<Vec<_>>>()?;
    println!("{}", serde_json::to_string_pretty(&summaries)?);
    Ok(())
}

fn recon_one<R: Real>(model: &VSharp<R>, a: &ReconArgs, blocks: &[usize], index: usize, path: &Path) -> anyhow::Result<ReconSummary> {
    let c = Container::read(path).with_context(|| format!("reading {}", path.display()))?;
    let Sample { mut measurement, x_gt } = io::sample_from_container::<R>(&c)?;
    if let Some(spec) = &a.mask {
        let (h, w) = measurement.y_tilde.dims();
        let m = read_mask_arg(spec, h, w)?;
        measurement.y_tilde = measurement.y_tilde.masked(&m.to_tensor())?;
        measurement.mask = m;
    }
    if !a.known_maps {
        measurement.maps = None;
    }
    let start = Instant::now();
    let rec = model.reconstruct_blocks(&measurement, blocks)?;
    let seconds = start.elapsed().as_secs_f64();

    let stem = path.file_stem().map_or_else(|| format!("input{index}"), |s| s.to_string_lossy().into_owned());
    let dir = if a.input.len() > 1 { a.out.join(&stem) } else { a.out.clone() };
    fs::create_dir_all(&dir)?;
    let mut out = Container::new(json!({ "kind": "reconstruction", "blocks": blocks, "input": path.display().to_string() }));
    out.push_tensor("x", rec.last().tensor());
    out.push_tensor("x0", rec.x0.tensor());
    out.push_tensor("maps", rec.maps.tensor());
    if a.intermediates {
        for (t, x) in blocks.iter().zip(&rec.xs) {
            out.push_tensor(format!("x_block{t}"), x.tensor());
        }
    }
    if let Some(gt) = &x_gt {
        out.push_tensor("x_gt", gt.tensor());
    }
    out.write(&dir.join("recon.vshc"))?;
    if a.png {
        io::save_png(&dir.join("recon.png"), &rec.last().magnitude(), None)?;
        io::save_png(&dir.join("x0.png"), &rec.x0.magnitude(), None)?;
        io::save_mask_png(&dir.join("mask.png"), &measurement.mask)?;
    }
    let metrics = match &x_gt {
        Some(gt) => {
            let target = gt.magnitude();
            let mut rows = vec![MetricReport::evaluate("x0", &target, &rec.x0.magnitude())?];
            for (t, x) in blocks.iter().zip(&rec.xs) {
                rows.push(MetricReport::evaluate(format!("block{t}"), &target, &x.magnitude())?);
            }
            fs::write(dir.join("metrics.csv"), metrics::to_csv(&rows))?;
            Some(rows)
        }
        None => None,
    };
    Ok(ReconSummary {
        input: path.display().to_string(),
        blocks: blocks.to_vec(),
        seconds,
        metrics,
    })
}

#[derive(Default, Deserialize, Serialize)]
#[serde(default)]
struct TrainFile {
    model: Option<SolverConfig>,
    train: Option<TrainConfig>,
}

fn train_cmd<R: Real>(a: &TrainArgs) -> anyhow::Result<()> {
    let file: TrainFile = match &a.config {
        Some(p) => serde_json::from_str(&fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?)
            .map_err(vsharp::Error::from)?,
        None => TrainFile::default(),
    };
    let model_cfg = file.model.unwrap_or_else(SolverConfig::desk);
    let mut train_cfg = file.train.unwrap_or_else(TrainConfig::desk);
    if let Some(n) = a.iters {
        train_cfg.iters = n;
    }
    if let Some(s) = a.seed {
        train_cfg.seed = s;
    }
    let mut model = VSharp::<R>::new(model_cfg.clone())?;
    let start = Instant::now();
    let report = train::train(&mut model, &train_cfg, Some(&a.out))?;
    let summary = json!({
        "model": model_cfg,
        "train": train_cfg,
        "num_params": model.num_params(),
        "seconds": start.elapsed().as_secs_f64(),
        "best_iter": report.best_iter,
        "best": report.best,
    });
    fs::write(a.out.join("report.json"), serde_json::to_string_pretty(&summary)?)?;
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}

fn mask_gen(a: &MaskGenArgs) -> anyhow::Result<()> {
    let (h, w) = a.size;
    let acs = a.acs.unwrap_or_else(|| acs_fraction_for(a.accel));
    let m = mask::generate(a.kind.into(), h, w, a.accel, acs, a.seed)?;
    io::write_mask(&a.out, &m)?;
    if let Some(p) = &a.png {
        io::save_mask_png(p, &m)?;
    }
    println!(
        "{}",
        json!({
            "kind": m.kind,
            "height": h,
            "width": w,
            "requested_accel": m.requested_accel,
            "achieved_accel": m.achieved_accel,
            "acs": m.acs,
            "acs_fully_sampled": m.acs_fully_sampled(),
        })
    );
    Ok(())
}

/// Magnitude image from a complex `[2,H,W]` or real `[H,W]` array.
fn magnitude_of(c: &Container, names: &[&str]) -> anyhow::Result<Tensor<f64>> {
    let name = names
        .iter()
        .find(|n| c.get(n).is_some())
        .ok_or_else(|| vsharp::Error::Format(format!("container has none of the arrays {names:?}")))?;
    let t = c.tensor::<f64>(name)?;
    Ok(match t.rank() {
        2 => t,
        _ => ComplexImage::new(t)?.magnitude(),
    })
}

fn eval(a: &EvalArgs) -> anyhow::Result<()> {
    let pred = magnitude_of(&Container::read(&a.pred)?, &["x"])?;
    let gt = magnitude_of(&Container::read(&a.gt)?, &["x_gt", "x"])?;
    let name = a.pred.file_stem().map_or_else(String::new, |s| s.to_string_lossy().into_owned());
    let rows = vec![MetricReport::evaluate(name, &gt, &pred)?];
    let text = match a.report {
        ReportFormat::Csv => metrics::to_csv(&rows),
        ReportFormat::Json => metrics::to_json(&rows)? + "\n",
    };
    match &a.out {
        Some(p) => fs::write(p, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

#[derive(Serialize)]
struct BenchRun {
    blocks: Vec<usize>,
    seconds_per_volume: f64,
    mean_ssim: f64,
}

fn bench<R: Real>(a: &BenchArgs) -> anyhow::Result<()> {
    let model = match &a.config {
        Some(p) => load_model::<R>(p)?,
        None => VSharp::new(SolverConfig::desk())?,
    };
    let (h, w) = a.size;
    let spec = PhantomSpec {
        height: h,
        width: w,
        coils: a.coils,
        accel: a.accel,
        ..PhantomSpec::desk()
    };
    let samples = (0..a.volumes)
        .map(|i| train::make_phantom::<R>(a.seed.wrapping_add(i as u64), &spec))
        .collect::<vsharp::Result<Vec<_>>>()?;
    let full: Vec<usize> = (1..=model.config.blocks).collect();
    let reduced = a.reduced.clone().or_else(|| model.config.reduced_blocks.clone());
    let mut runs = vec![time_blocks(&model, &samples, &full)?];
    if let Some(sub) = reduced {
        runs.push(time_blocks(&model, &samples, &sub)?);
    }
    let out = json!({
        "num_params": model.num_params(),
        "analytic_num_params": model.config.num_params(),
        "volumes": a.volumes,
        "size": [h, w],
        "coils": a.coils,
        "runs": runs,
    });
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(())
}

fn time_blocks<R: Real>(model: &VSharp<R>, samples: &[train::PhantomSample<R>], blocks: &[usize]) -> anyhow::Result<BenchRun> {
    let start = Instant::now();
    let mut ssim = 0.0;
    for s in samples {
        let rec = model.reconstruct_blocks(&s.measurement(), blocks)?;
        ssim += metrics::ssim_value(&s.target(), &rec.last().magnitude())?;
    }
    let n = samples.len().max(1) as f64;
    Ok(BenchRun {
        blocks: blocks.to_vec(),
        seconds_per_volume: start.elapsed().as_secs_f64() / n,
        mean_ssim: ssim / n,
    })
}

fn phantom<R: Real>(a: &PhantomArgs) -> anyhow::Result<()> {
    let (h, w) = a.size;
    let spec = PhantomSpec {
        height: h,
        width: w,
        coils: a.coils,
        noise_sigma: a.sigma,
        mask: a.mask.into(),
        accel: a.accel,
        acs_fraction: a.acs,
    };
    let s = train::make_phantom::<R>(a.seed, &spec)?;
    let sample = Sample {
        measurement: if a.with_maps { s.measurement_with_maps() } else { s.measurement() },
        x_gt: Some(s.x_gt.clone()),
    };
    let mut c = io::sample_container(&sample);
    c.push_tensor("y_full", s.y_full.tensor());
    c.write(&a.out)?;
    println!(
        "{}",
        json!({
            "out": a.out.display().to_string(),
            "achieved_accel": s.mask.achieved_accel,
            "coils": a.coils,
            "size": [h, w],
        })
    );
    Ok(())
}
