//! `evs`: estimate depth probability volumes, synthesize novel views,
//! evaluate renders and generate synthetic scenes.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use clap::{Args, Parser, Subcommand};
use evs_core::dpv::{
    read_volume_file, write_volume_file, CrfParams, DEFAULT_TEMPERATURE, DEFAULT_WINDOW,
};
use evs_core::image::load_gray8;
use evs_core::metrics::{psnr, ssim_masked};
use evs_core::patches::write_bundle_file;
use evs_core::pipeline::{
    estimate_volumes, synthesize, EstimateParams, NovelCamera, SynthesizeParams,
};
use evs_core::render::DEFAULT_THRESHOLD;
use evs_core::scene::{generate_synthetic_scene, load_scene, CameraEntry, SceneSpec};
use evs_core::{DisparityRange, Image};

#[derive(Parser)]
#[command(
    name = "evs",
    version,
    about = "Novel view synthesis through depth probability volumes"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate one volume per input view.
    Estimate(EstimateArgs),
    /// Fuse volumes into a novel camera, render it and cut patch bundles.
    Synthesize(SynthesizeArgs),
    /// Print `scene,view,psnr,ssim` for a render against ground truth.
    Evaluate(EvaluateArgs),
    /// Render a synthetic scene from a JSON spec.
    MakeScene(MakeSceneArgs),
}

#[derive(Args)]
struct EstimateArgs {
    /// Scene manifest.
    #[arg(long)]
    scene: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Number of disparity levels.
    #[arg(long, default_value_t = DisparityRange::DEFAULT_LEVELS)]
    nd: usize,
    /// Matching window side, odd.
    #[arg(long, default_value_t = DEFAULT_WINDOW)]
    window: usize,
    #[arg(long, default_value_t = DEFAULT_TEMPERATURE)]
    temperature: f64,
    /// Skip the edge-aware filter.
    #[arg(long)]
    no_filter: bool,
}

#[derive(Args)]
#[command(group(clap::ArgGroup::new("placement").required(true).args(["camera", "interpolate", "extrapolate", "dolly"])))]
struct SynthesizeArgs {
    #[arg(long)]
    scene: PathBuf,
    /// Directory written by `estimate`.
    #[arg(long)]
    volumes: PathBuf,
    /// JSON camera block, in the manifest's camera format.
    #[arg(long)]
    camera: Option<PathBuf>,
    /// `c0 + s (c1 - c0)`.
    #[arg(long, allow_hyphen_values = true)]
    interpolate: Option<f64>,
    /// `k` baselines beyond view 0, away from view 1.
    #[arg(long, allow_hyphen_values = true)]
    extrapolate: Option<f64>,
    /// Move the input centroid by `m` along the mean viewing direction.
    #[arg(long, allow_hyphen_values = true)]
    dolly: Option<f64>,
    /// Levels at or below this probability are not drawn.
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    threshold: f32,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    render: PathBuf,
    #[arg(long)]
    truth: PathBuf,
    /// Greyscale PNG; non-zero pixels are evaluated.
    #[arg(long)]
    mask: Option<PathBuf>,
    /// Scene label; defaults to the render's parent directory name.
    #[arg(long)]
    scene_name: Option<String>,
    /// View label; defaults to the render's file stem.
    #[arg(long)]
    view: Option<String>,
}

#[derive(Args)]
struct MakeSceneArgs {
    #[arg(long)]
    spec: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

fn volume_path(dir: &Path, view: usize) -> PathBuf {
    dir.join(format!("view{view}.dpv"))
}

fn estimate(args: &EstimateArgs) -> Result<()> {
    let scene =
        load_scene(&args.scene).with_context(|| format!("loading {}", args.scene.display()))?;
    let params = EstimateParams {
        levels: args.nd,
        window: args.window,
        temperature: args.temperature,
        crf: (!args.no_filter).then(CrfParams::default),
    };
    let volumes = estimate_volumes(&scene, &params)?;
    fs::create_dir_all(&args.out)?;
    for (i, v) in volumes.iter().enumerate() {
        v.validate()?;
        let path = volume_path(&args.out, i);
        write_volume_file(&path, v).with_context(|| format!("writing {}", path.display()))?;
    }
    log::info!("wrote {} volumes to {}", volumes.len(), args.out.display());
    Ok(())
}

fn placement(args: &SynthesizeArgs) -> Result<NovelCamera> {
    if let Some(path) = &args.camera {
        let text =
            fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let entry: CameraEntry =
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        return Ok(NovelCamera::Explicit(entry.to_camera(0)?));
    }
    Ok(match (args.interpolate, args.extrapolate, args.dolly) {
        (Some(s), _, _) => NovelCamera::Baseline(s),
        (_, Some(k), _) => NovelCamera::Extrapolate(k),
        (_, _, Some(m)) => NovelCamera::Dolly(m),
        _ => bail!("no novel camera given"),
    })
}

fn synthesize_cmd(args: &SynthesizeArgs) -> Result<()> {
    let scene =
        load_scene(&args.scene).with_context(|| format!("loading {}", args.scene.display()))?;
    let volumes = (0..scene.views.len())
        .map(|i| {
            let path = volume_path(&args.volumes, i);
            let v =
                read_volume_file(&path).with_context(|| format!("reading {}", path.display()))?;
            let cam = &scene.views[i].camera;
            ensure!(
                v.width() == cam.width()
                    && v.height() == cam.height()
                    && (v.camera().center() - cam.center()).norm() < 1e-6,
                "{} does not belong to view {i} of the scene",
                path.display()
            );
            Ok(v)
        })
        .collect::<Result<Vec<_>>>()?;
    let novel = placement(args)?.resolve(&scene.cameras())?;
    let mut params = SynthesizeParams::default();
    params.render.threshold = args.threshold;
    let s = synthesize(&scene.view_inputs(), &volumes, &novel, &params)?;
    s.fused.volume.validate()?;
    if s.rendered.covered_pixels() == 0 {
        log::warn!("no covered pixels at threshold {}", args.threshold);
    } else {
        log::info!("coverage {:.1}%", 100.0 * s.rendered.coverage_fraction());
    }

    fs::create_dir_all(&args.out)?;
    s.rendered.save(&args.out, "novel")?;
    write_volume_file(&args.out.join("fused.dpv"), &s.fused.volume)?;
    write_bundle_file(&args.out.join("bundles.pbnd"), &s.bundles)?;
    let camera = serde_json::to_string_pretty(&CameraEntry::from_camera(&novel))?;
    fs::write(args.out.join("camera.json"), camera + "\n")?;
    Ok(())
}

fn label(explicit: &Option<String>, fallback: Option<&std::ffi::OsStr>) -> String {
    explicit
        .clone()
        .or_else(|| fallback.map(|s| s.to_string_lossy().into_owned()))
        .unwrap_or_default()
}

fn evaluate(args: &EvaluateArgs) -> Result<()> {
    let render = Image::load_png(&args.render)?;
    let truth = Image::load_png(&args.truth)?;
    let mask = match &args.mask {
        Some(path) => {
            let (w, h, data) = load_gray8(path)?;
            ensure!(
                w == render.width() && h == render.height(),
                "mask is {w}x{h}, render is {}x{}",
                render.width(),
                render.height()
            );
            Some(data.into_iter().map(|v| v > 0).collect::<Vec<_>>())
        }
        None => None,
    };
    let p = psnr(&render, &truth, mask.as_deref())?;
    let s = ssim_masked(&render, &truth, mask.as_deref())?;
    let scene = label(
        &args.scene_name,
        args.render.parent().and_then(Path::file_name),
    );
    let view = label(&args.view, args.render.file_stem());
    println!("{scene},{view},{p:.4},{s:.6}");
    Ok(())
}

fn make_scene(args: &MakeSceneArgs) -> Result<()> {
    let text = fs::read_to_string(&args.spec)
        .with_context(|| format!("reading {}", args.spec.display()))?;
    let spec = SceneSpec::from_json(&text)?;
    let manifest = generate_synthetic_scene(&spec, args.seed, &args.out)?;
    log::info!(
        "wrote {} views to {}",
        manifest.views.len(),
        args.out.display()
    );
    Ok(())
}

fn configure_threads() -> Result<()> {
    let Ok(value) = std::env::var("EVS_THREADS") else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .with_context(|| format!("EVS_THREADS must be a non-negative integer, got {value:?}"))?;
    if n > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()?;
    }
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    configure_threads()?;
    match &cli.command {
        Command::Estimate(a) => estimate(a),
        Command::Synthesize(a) => synthesize_cmd(a),
        Command::Evaluate(a) => evaluate(a),
        Command::MakeScene(a) => make_scene(a),
    }
}
