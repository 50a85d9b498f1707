//! `splatstyle` command-line interface.
//!
//! Exit codes: 0 success, 2 invalid input or configuration, 3 pipeline failure.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::cloud::{assemble_features, load_ply, save_ply, FeatureMode, GaussianCloud};
use crate::partition::{kmeans, repair_small_clusters};
use crate::register::{fit_similarity, select_style_cluster, SimilarityTransform};
use crate::regularize::{aniso_loss, median_scale, project_scales, uniform_loss, RegularizerParams};
use crate::render::{render, save_png, Camera};
use crate::sinkhorn::{sinkhorn_divergence, SinkhornParams};
use crate::spatial::KdTree;
use crate::styler::{stylize_scene, StylizationConfig};
use crate::{synth, Error, Result};

const EXIT_INVALID: u8 = 2;
const EXIT_PIPELINE: u8 = 3;

#[derive(Parser, Debug)]
#[command(name = "splatstyle", version, about = "Stylize 3D Gaussian splat scenes by distribution matching")]
pub struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Seed for every random stream.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Only print warnings and errors.
    #[arg(short, long, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Run the full stylization pipeline.
    Stylize(StylizeArgs),
    /// Cluster a scene with k-means and dump labels as JSON.
    Partition(PartitionArgs),
    /// Register every content cluster into the style scene.
    Register(RegisterArgs),
    /// Print the Sinkhorn divergence between two scenes.
    Divergence(DivergenceArgs),
    /// Clamp scale anisotropy and optionally pull scales toward a uniform size.
    Regularize(RegularizeArgs),
    /// Render a PNG preview.
    Preview(PreviewArgs),
    /// Print counts, bounding box and scale statistics.
    Info(InfoArgs),
    /// Write a synthetic scene.
    Synth(SynthArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ModeName {
    Coords,
    Luminance,
    Rgb,
}

impl ModeName {
    fn with_weight(self, weight: f64) -> FeatureMode {
        match self {
            ModeName::Coords => FeatureMode::Coords,
            ModeName::Luminance => FeatureMode::CoordsLuminance { weight },
            ModeName::Rgb => FeatureMode::CoordsRgb { weight },
        }
    }
}

#[derive(Args, Debug, Default)]
pub struct StylizeArgs {
    /// JSON run configuration; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub content: Option<PathBuf>,
    #[arg(long)]
    pub style: Option<PathBuf>,
    #[arg(long, short)]
    pub output: Option<PathBuf>,
    #[arg(long, short = 'K')]
    pub clusters: Option<usize>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long, value_enum)]
    pub feature_mode: Option<ModeName>,
    #[arg(long)]
    pub feature_weight: Option<f64>,
    #[arg(long)]
    pub knn_k: Option<usize>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub surface_energy_weight: Option<f64>,
    #[arg(long, num_args = 2, value_names = ["LOW", "HIGH"])]
    pub scale_adjust_clamp: Option<Vec<f64>>,
    #[arg(long)]
    pub scale_adjust_k: Option<usize>,
    #[arg(long)]
    pub opacity_min: Option<f64>,
    #[arg(long)]
    pub outlier_sigma: Option<f64>,
    #[arg(long)]
    pub resample_count: Option<usize>,
    #[arg(long)]
    pub cluster_color_weight: Option<f64>,
    #[arg(long)]
    pub min_cluster_size: Option<usize>,
    #[arg(long)]
    pub kmeans_max_iter: Option<usize>,
    #[arg(long)]
    pub registration_restarts: Option<usize>,
    #[arg(long)]
    pub registration_max_iter: Option<usize>,
    #[arg(long)]
    pub registration_tol: Option<f64>,
    #[arg(long)]
    pub scale_min: Option<f64>,
    #[arg(long)]
    pub scale_max: Option<f64>,
    #[arg(long)]
    pub sinkhorn_max_iter: Option<usize>,
    #[arg(long)]
    pub sinkhorn_tol: Option<f64>,
    #[arg(long)]
    pub sinkhorn_relaxation: Option<f64>,
    #[arg(long)]
    pub flow_sinkhorn_iters: Option<usize>,
    #[arg(long)]
    pub opacity_weights: Option<bool>,
}

#[derive(Args, Debug)]
pub struct PartitionArgs {
    #[arg(long, short)]
    pub input: PathBuf,
    #[arg(long, short = 'K', default_value_t = 400)]
    pub clusters: usize,
    #[arg(long, default_value_t = 0.3)]
    pub color_weight: f64,
    /// Dissolve clusters smaller than this (0 keeps all).
    #[arg(long, default_value_t = 0)]
    pub min_cluster_size: usize,
    #[arg(long, default_value_t = 100)]
    pub max_iter: usize,
    /// Labels JSON (stdout when omitted).
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct RegisterArgs {
    #[arg(long)]
    pub content: PathBuf,
    #[arg(long)]
    pub style: PathBuf,
    #[arg(long, short = 'K', default_value_t = 400)]
    pub clusters: usize,
    #[arg(long, default_value_t = 3)]
    pub knn_k: usize,
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct DivergenceArgs {
    pub a: PathBuf,
    pub b: PathBuf,
    #[arg(long, value_enum, default_value = "luminance")]
    pub feature_mode: ModeName,
    #[arg(long, default_value_t = 0.3)]
    pub feature_weight: f64,
    #[arg(long, default_value_t = 0.05)]
    pub gamma: f64,
    /// Seeded subsample of each cloud down to this many Gaussians.
    #[arg(long, default_value_t = 5000)]
    pub cap: usize,
    #[arg(long, default_value_t = 1000)]
    pub max_iter: usize,
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
}

#[derive(Args, Debug)]
pub struct RegularizeArgs {
    #[arg(long, short)]
    pub input: PathBuf,
    #[arg(long, short)]
    pub output: PathBuf,
    /// Largest allowed axis ratio.
    #[arg(long, default_value_t = 3.0)]
    pub r: f64,
    /// Target uniform scale (default: median geometric-mean scale).
    #[arg(long)]
    pub s: Option<f64>,
    /// Also blend scales halfway toward `s`.
    #[arg(long)]
    pub uniform: bool,
}

#[derive(Args, Debug)]
pub struct PreviewArgs {
    #[arg(long, short)]
    pub input: PathBuf,
    #[arg(long, short)]
    pub output: PathBuf,
    /// Camera position `x,y,z` (default: framed from the bounding box).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub eye: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub look_at: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, default_value = "0,1,0")]
    pub up: Vec<f64>,
    /// Vertical field of view in degrees.
    #[arg(long, default_value_t = 50.0)]
    pub fov: f64,
    /// `WIDTHxHEIGHT` or a single side length.
    #[arg(long, default_value = "512")]
    pub size: String,
}

#[derive(Args, Debug)]
pub struct InfoArgs {
    pub input: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum SynthKind {
    Cube,
    Bumps,
    Blobs,
    Ring,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(value_enum)]
    pub kind: SynthKind,
    #[arg(long, short)]
    pub output: PathBuf,
    #[arg(long, short, default_value_t = 10_000)]
    pub n: usize,
    /// Blob separation or ring radius.
    #[arg(long, default_value_t = 4.0)]
    pub size: f64,
}

/// Entry point used by the binary.
pub fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging(cli.quiet);
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn init_logging(quiet: bool) {
    let level = if quiet { "warn" } else { "info" };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format(|buf, record| writeln!(buf, "{}", record.args()))
        .try_init();
}

/// Map an error to its process exit code.
pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Contract(_) | Error::Io { .. } | Error::Format(_) | Error::EmptyScene => EXIT_INVALID,
        _ => EXIT_PIPELINE,
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(w) = cli.workers {
        if w == 0 {
            return Err(Error::Contract("workers: must be at least 1".into()));
        }
        pool = pool.num_threads(w);
    }
    let pool = pool
        .build()
        .map_err(|e| Error::Contract(format!("workers: {e}")))?;
    let seed = cli.seed;
    pool.install(|| match cli.command {
        Command::Stylize(a) => cmd_stylize(a, seed, cli.workers),
        Command::Partition(a) => cmd_partition(a, seed.unwrap_or(0)),
        Command::Register(a) => cmd_register(a, seed.unwrap_or(0)),
        Command::Divergence(a) => cmd_divergence(a, seed.unwrap_or(0)),
        Command::Regularize(a) => cmd_regularize(a),
        Command::Preview(a) => cmd_preview(a),
        Command::Info(a) => cmd_info(a),
        Command::Synth(a) => cmd_synth(a, seed.unwrap_or(0)),
    })
}

/// Paths and settings of one `stylize` run after merging file and flags.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub content: PathBuf,
    pub style: PathBuf,
    pub output: PathBuf,
    pub workers: Option<usize>,
    pub stylization: StylizationConfig,
}

const RUN_KEYS: [&str; 4] = ["content", "style", "output", "workers"];

/// Merge a JSON config file with command-line flags; flags win.
pub fn resolve_run_config(args: &StylizeArgs, seed: Option<u64>, workers: Option<usize>) -> Result<RunConfig> {
    let mut file: Map<String, Value> = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            match serde_json::from_str::<Value>(&text) {
                Ok(Value::Object(m)) => m,
                Ok(_) => return Err(Error::Contract("config: top level must be a JSON object".into())),
                Err(e) => return Err(Error::Contract(format!("config: {e}"))),
            }
        }
        None => Map::new(),
    };
    let mut run = Map::new();
    for key in RUN_KEYS {
        if let Some(v) = file.remove(key) {
            run.insert(key.to_string(), v);
        }
    }
    let mut cfg: StylizationConfig =
        serde_json::from_value(Value::Object(file)).map_err(|e| Error::Contract(format!("config: {e}")))?;

    let path_field = |key: &str, flag: &Option<PathBuf>| -> Result<PathBuf> {
        if let Some(p) = flag {
            return Ok(p.clone());
        }
        match run.get(key) {
            Some(Value::String(s)) => Ok(PathBuf::from(s)),
            Some(_) => Err(Error::Contract(format!("{key}: must be a path string"))),
            None => Err(Error::Contract(format!("{key}: missing required path"))),
        }
    };
    let content = path_field("content", &args.content)?;
    let style = path_field("style", &args.style)?;
    let output = path_field("output", &args.output)?;
    let workers = match (workers, run.get("workers")) {
        (Some(w), _) => Some(w),
        (None, Some(v)) => Some(
            v.as_u64()
                .filter(|w| *w >= 1)
                .ok_or_else(|| Error::Contract("workers: must be a positive integer".into()))? as usize,
        ),
        (None, None) => None,
    };
    if content == style || content == output || style == output {
        return Err(Error::Contract("content, style and output paths must be distinct".into()));
    }

    macro_rules! set {
        ($($field:ident),*) => {$(
            if let Some(v) = args.$field.clone() {
                cfg.$field = v;
            }
        )*};
    }
    set!(
        clusters,
        gamma,
        knn_k,
        steps,
        lr,
        surface_energy_weight,
        scale_adjust_k,
        opacity_min,
        outlier_sigma,
        cluster_color_weight,
        min_cluster_size,
        kmeans_max_iter,
        registration_restarts,
        registration_max_iter,
        registration_tol,
        scale_min,
        scale_max,
        sinkhorn_max_iter,
        sinkhorn_tol,
        sinkhorn_relaxation,
        flow_sinkhorn_iters,
        opacity_weights
    );
    if let Some(n) = args.resample_count {
        cfg.resample_count = Some(n);
    }
    if let Some(c) = &args.scale_adjust_clamp {
        cfg.scale_adjust_clamp = [c[0], c[1]];
    }
    match (args.feature_mode, args.feature_weight) {
        (Some(m), w) => cfg.feature_mode = m.with_weight(w.unwrap_or(0.3)),
        (None, Some(w)) => {
            cfg.feature_mode = match cfg.feature_mode {
                FeatureMode::Coords => FeatureMode::Coords,
                FeatureMode::CoordsLuminance { .. } => FeatureMode::CoordsLuminance { weight: w },
                FeatureMode::CoordsRgb { .. } => FeatureMode::CoordsRgb { weight: w },
            }
        }
        (None, None) => {}
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(RunConfig {
        content,
        style,
        output,
        workers,
        stylization: cfg,
    })
}

/// `<dir>/<stem>.report.json` next to the output scene.
pub fn report_path(output: &Path) -> PathBuf {
    let stem = output.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    output.with_file_name(format!("{stem}.report.json"))
}

fn write_json<T: Serialize>(value: &T, path: Option<&Path>) -> Result<()> {
    match path {
        Some(p) => {
            let f = File::create(p).map_err(|e| Error::io(p, e))?;
            let mut w = BufWriter::new(f);
            serde_json::to_writer_pretty(&mut w, value).map_err(|e| Error::Format(e.to_string()))?;
            w.write_all(b"\n").map_err(|e| Error::io(p, e))
        }
        None => {
            let s = serde_json::to_string_pretty(value).map_err(|e| Error::Format(e.to_string()))?;
            println!("{s}");
            Ok(())
        }
    }
}

fn cmd_stylize(args: StylizeArgs, seed: Option<u64>, workers: Option<usize>) -> Result<()> {
    let run = resolve_run_config(&args, seed, workers)?;
    let body = || -> Result<()> {
        let content = load_ply(&run.content)?;
        let style = load_ply(&run.style)?;
        info!("content {} Gaussians, style {} Gaussians", content.len(), style.len());
        let (out, report) = stylize_scene(&content, &style, &run.stylization)?;
        save_ply(&out, &run.output)?;
        let rp = report_path(&run.output);
        write_json(&report, Some(&rp))?;
        info!("wrote {} and {}", run.output.display(), rp.display());
        Ok(())
    };
    match run.workers {
        Some(w) if workers.is_none() => rayon::ThreadPoolBuilder::new()
            .num_threads(w)
            .build()
            .map_err(|e| Error::Contract(format!("workers: {e}")))?
            .install(body),
        _ => body(),
    }
}

#[derive(Serialize)]
struct PartitionDump {
    k: usize,
    inertia: f64,
    sizes: Vec<usize>,
    labels: Vec<usize>,
}

fn cmd_partition(args: PartitionArgs, seed: u64) -> Result<()> {
    let cloud = load_ply(&args.input)?;
    let feats = assemble_features(&cloud, FeatureMode::CoordsRgb { weight: args.color_weight }, None)?;
    let mut p = kmeans(&feats, args.clusters, seed, args.max_iter)?;
    if args.min_cluster_size > 0 {
        p = repair_small_clusters(&p, &feats, args.min_cluster_size)?;
    }
    let dump = PartitionDump {
        k: p.k,
        inertia: p.inertia,
        sizes: p.sizes(),
        labels: p.labels,
    };
    write_json(&dump, args.output.as_deref())
}

#[derive(Serialize)]
struct RegisterDump {
    cluster: usize,
    size: usize,
    transform: Option<SimilarityTransform>,
    style_count: usize,
    k_used: usize,
    error: Option<String>,
}

fn cmd_register(args: RegisterArgs, seed: u64) -> Result<()> {
    let content = load_ply(&args.content)?;
    let style = load_ply(&args.style)?;
    let defaults = StylizationConfig {
        seed,
        ..Default::default()
    };
    let feats = assemble_features(
        &content,
        FeatureMode::CoordsRgb {
            weight: defaults.cluster_color_weight,
        },
        None,
    )?;
    let p = kmeans(&feats, args.clusters, seed, defaults.kmeans_max_iter)?;
    let p = repair_small_clusters(&p, &feats, defaults.min_cluster_size)?;
    let tree = KdTree::new(style.positions());
    let dumps: Vec<RegisterDump> = p
        .members()
        .iter()
        .enumerate()
        .map(|(ci, m)| {
            let pts = content.subset(m).positions();
            let staged = fit_similarity(&pts, &tree, &defaults.fit_options(ci))
                .and_then(|t| select_style_cluster(ci, &t, &pts, &tree, args.knn_k));
            match staged {
                Ok(a) => RegisterDump {
                    cluster: ci,
                    size: m.len(),
                    style_count: a.style_indices.len(),
                    k_used: a.k_used,
                    transform: Some(a.transform),
                    error: None,
                },
                Err(e) => RegisterDump {
                    cluster: ci,
                    size: m.len(),
                    transform: None,
                    style_count: 0,
                    k_used: 0,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();
    write_json(&dumps, args.output.as_deref())
}

fn subsample(cloud: GaussianCloud, cap: usize, rng: &mut ChaCha8Rng) -> GaussianCloud {
    if cloud.len() <= cap {
        return cloud;
    }
    let mut idx = rand::seq::index::sample(rng, cloud.len(), cap).into_vec();
    idx.sort_unstable();
    cloud.subset(&idx)
}

fn cmd_divergence(args: DivergenceArgs, seed: u64) -> Result<()> {
    if args.cap == 0 {
        return Err(Error::Contract("cap: must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = subsample(load_ply(&args.a)?, args.cap, &mut rng);
    let b = subsample(load_ply(&args.b)?, args.cap, &mut rng);
    let mode = args.feature_mode.with_weight(args.feature_weight);
    let fa = assemble_features(&a, mode, None)?;
    let fb = assemble_features(&b, mode, Some(&fa))?;
    let params = SinkhornParams {
        gamma: args.gamma,
        max_iter: args.max_iter,
        tol: args.tol,
        anneal: true,
    };
    let report = sinkhorn_divergence(&fa, &fb, &params)?;
    if !report.converged() {
        log::warn!("Sinkhorn did not converge within {} iterations", args.max_iter);
    }
    let text = format!("{:.6}", report.sd_value);
    println!("{}", if text == "-0.000000" { "0.000000" } else { &text });
    Ok(())
}

fn cmd_regularize(args: RegularizeArgs) -> Result<()> {
    let cloud = load_ply(&args.input)?;
    let s = match args.s {
        Some(s) => s,
        None => median_scale(&cloud).ok_or(Error::EmptyScene)?,
    };
    let params = RegularizerParams { r: args.r, s };
    params.validate()?;
    println!(
        "before: aniso_loss {:.6} uniform_loss {:.6}",
        aniso_loss(&cloud, args.r),
        uniform_loss(&cloud, s)
    );
    let out = project_scales(&cloud, &params, args.uniform)?;
    println!(
        "after: aniso_loss {:.6} uniform_loss {:.6}",
        aniso_loss(&out, args.r),
        uniform_loss(&out, s)
    );
    save_ply(&out, &args.output)
}

fn parse_size(s: &str) -> Result<(u32, u32)> {
    let bad = || Error::Contract(format!("size: expected WIDTHxHEIGHT or N, got '{s}'"));
    let parse = |v: &str| v.trim().parse::<u32>().map_err(|_| bad());
    match s.split_once(['x', 'X']) {
        Some((w, h)) => Ok((parse(w)?, parse(h)?)),
        None => {
            let n = parse(s)?;
            Ok((n, n))
        }
    }
}

fn triple(field: &str, v: &[f64]) -> Result<[f64; 3]> {
    match v {
        [x, y, z] => Ok([*x, *y, *z]),
        _ => Err(Error::Contract(format!("{field}: expected x,y,z"))),
    }
}

fn cmd_preview(args: PreviewArgs) -> Result<()> {
    let cloud = load_ply(&args.input)?;
    let (lo, hi) = cloud.bbox().ok_or(Error::EmptyScene)?;
    let center: [f64; 3] = std::array::from_fn(|a| 0.5 * (lo[a] + hi[a]));
    let diag = (0..3).map(|a| (hi[a] - lo[a]).powi(2)).sum::<f64>().sqrt().max(1e-6);
    let look_at = match args.look_at.as_deref() {
        Some(v) => triple("look_at", v)?,
        None => center,
    };
    let eye = match args.eye.as_deref() {
        Some(v) => triple("eye", v)?,
        None => [center[0] + 0.6 * diag, center[1] + 0.5 * diag, center[2] + 1.2 * diag],
    };
    let (width, height) = parse_size(&args.size)?;
    let cam = Camera {
        eye,
        look_at,
        up: triple("up", &args.up)?,
        vertical_fov: args.fov,
        width,
        height,
    };
    let img = render(&cloud, &cam)?;
    save_png(&img, &args.output)?;
    info!("wrote {}", args.output.display());
    Ok(())
}

fn quantiles(mut v: Vec<f64>) -> [f64; 3] {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    let median = if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) };
    [v[0], median, v[n - 1]]
}

fn cmd_info(args: InfoArgs) -> Result<()> {
    let cloud = load_ply(&args.input)?;
    println!("count: {}", cloud.len());
    println!("properties: {}", cloud.layout.properties().len());
    let (lo, hi) = cloud.bbox().ok_or(Error::EmptyScene)?;
    println!("bbox min: {:.6} {:.6} {:.6}", lo[0], lo[1], lo[2]);
    println!("bbox max: {:.6} {:.6} {:.6}", hi[0], hi[1], hi[2]);
    let gm: Vec<f64> = cloud
        .gaussians
        .iter()
        .map(|g| (g.log_scale.iter().sum::<f64>() / 3.0).exp())
        .collect();
    let ratio: Vec<f64> = cloud
        .gaussians
        .iter()
        .map(|g| {
            let s = g.scale();
            s[0].max(s[1]).max(s[2]) / s[0].min(s[1]).min(s[2])
        })
        .collect();
    let [a, b, c] = quantiles(gm);
    println!("scale (geometric mean) min/median/max: {a:.6e} {b:.6e} {c:.6e}");
    let [a, b, c] = quantiles(ratio);
    println!("anisotropy min/median/max: {a:.4} {b:.4} {c:.4}");
    let mean_opacity = cloud.gaussians.iter().map(|g| g.opacity).sum::<f64>() / cloud.len() as f64;
    println!("mean opacity: {mean_opacity:.4}");
    Ok(())
}

fn cmd_synth(args: SynthArgs, seed: u64) -> Result<()> {
    if args.n == 0 {
        return Err(Error::Contract("n: must be at least 1".into()));
    }
    let cloud = match args.kind {
        SynthKind::Cube => synth::cube_surface(args.n, seed),
        SynthKind::Bumps => synth::bump_field(args.n, seed),
        SynthKind::Blobs => synth::two_blobs(args.n.div_ceil(2), args.size, seed),
        SynthKind::Ring => synth::ring(args.n, args.size, 0.0, [0.8, 0.8, 0.8]),
    };
    save_ply(&cloud, &args.output)
}
