//! Command-line entry point: degradation synthesis, sequence
//! super-resolution, evaluation, toy training, profiling, and the gradient
//! verification suite.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage error.

use clap::{Args, Parser, Subcommand, ValueEnum};
use ctun_core::data::{
    degrade, load_sequence, load_weights, rgb_to_y, save_frame_png, save_sequence, save_weights,
    DegradationSpec,
};
use ctun_core::error::{CtunError, Result};
use ctun_core::gradcheck;
use ctun_core::metrics::{profile_inference, psnr, ssim, temporal_profile};
use ctun_core::model::{describe, CtunConfig, CtunModel, UgruVariant};
use ctun_core::tensor::{Scalar, Shape, Tensor};
use ctun_core::train::{train_loop_with_progress, write_loss_csv, TrainConfig};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

#[derive(Parser)]
#[command(
    name = "ctun",
    about = "Video super-resolution with a cascaded temporal updating network",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum DegradeMode {
    Bi,
    Bd,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum UgruFlag {
    Split,
    Shared,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a low-resolution sequence from a high-resolution one
    Degrade(DegradeArgs),
    /// Super-resolve a frame directory with trained weights
    Sr(SrArgs),
    /// PSNR/SSIM between two frame directories
    Eval(EvalArgs),
    /// Toy-scale training on a synthetic sequence
    Train(TrainArgs),
    /// Efficiency report: params, FLOPs, MACs, peak memory, wall time
    Profile(ProfileArgs),
    /// Float64 finite-difference verification of every differentiable op
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
struct DegradeArgs {
    /// Input directory of frame_%06d.png files
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long = "out")]
    output: PathBuf,
    #[arg(long, value_enum)]
    mode: DegradeMode,
    #[arg(long, default_value_t = 4)]
    scale: usize,
    /// Gaussian sigma for BD mode
    #[arg(long, default_value_t = 1.6)]
    sigma: f64,
}

#[derive(Args)]
struct SrArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long = "out")]
    output: PathBuf,
    #[arg(long)]
    weights: PathBuf,
    /// key=value model config file; defaults to the desk-scale configuration
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the updating-GRU wiring
    #[arg(long, value_enum)]
    ugru: Option<UgruFlag>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    /// Compute PSNR on the BT.601 luma channel (SSIM always uses luma)
    #[arg(long = "y-channel")]
    y_channel: bool,
    /// Pixels to exclude on every border before computing metrics
    #[arg(long = "crop-border", default_value_t = 4)]
    crop_border: usize,
    /// Also write a temporal profile of this row of the predictions
    #[arg(long = "temporal-profile")]
    temporal_profile_row: Option<usize>,
    /// Output PNG for the temporal profile
    #[arg(long = "profile-out")]
    profile_out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    /// Output weight file
    #[arg(long = "out")]
    output: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    channels: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    patch: Option<usize>,
    #[arg(long)]
    frames: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Loss-history CSV path (defaults to the weight path with .csv)
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct ProfileArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 8)]
    frames: usize,
    /// LR frame size as HxW, e.g. 64x64
    #[arg(long, default_value = "64x64")]
    size: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write the JSON report here as well as printing it
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Print the layer table of the default configuration and exit
    #[arg(long)]
    describe: bool,
}

/// Flat key=value config file mirroring the CtunConfig/TrainConfig fields.
fn parse_config_file(path: &Path) -> Result<(CtunConfig, TrainConfig)> {
    let mut model = CtunConfig::desk();
    let mut train = TrainConfig::default();
    let text = std::fs::read_to_string(path)?;
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(CtunError::InvalidArg {
                op: "config",
                detail: format!("line {}: expected key=value, got '{raw}'", lineno + 1),
            });
        };
        let key = key.trim();
        let value = value.trim();
        let bad = |detail: String| CtunError::InvalidArg {
            op: "config",
            detail,
        };
        let parse_usize = |v: &str| v.parse::<usize>().map_err(|e| bad(format!("{key}: {e}")));
        let parse_f64 = |v: &str| v.parse::<f64>().map_err(|e| bad(format!("{key}: {e}")));
        match key {
            "channels" => model.channels = parse_usize(value)?,
            "blocks_extractor" => model.blocks.extractor = parse_usize(value)?,
            "blocks_propagation" => model.blocks.propagation = parse_usize(value)?,
            "blocks_reconstruction" => model.blocks.reconstruction = parse_usize(value)?,
            "scale" => model.scale = parse_usize(value)?,
            "ugru_variant" => {
                model.ugru_variant = match value {
                    "split" => UgruVariant::Split,
                    "shared" => UgruVariant::Shared,
                    other => return Err(bad(format!("unknown ugru_variant '{other}'"))),
                }
            }
            "lr0" => train.lr0 = parse_f64(value)?,
            "beta1" => train.betas.0 = parse_f64(value)?,
            "beta2" => train.betas.1 = parse_f64(value)?,
            "iters" => train.iters = parse_usize(value)?,
            "patch" => train.patch = parse_usize(value)?,
            "batch" => train.batch = parse_usize(value)?,
            "frames" => train.frames = parse_usize(value)?,
            "charbonnier_eps" => train.charbonnier_eps = parse_f64(value)?,
            "fft_weight" => train.fft_weight = parse_f64(value)?,
            "seed" => train.seed = value.parse().map_err(|e| bad(format!("{key}: {e}")))?,
            other => return Err(bad(format!("unknown key '{other}'"))),
        }
    }
    Ok((model, train))
}

fn load_configs(path: Option<&PathBuf>) -> Result<(CtunConfig, TrainConfig)> {
    match path {
        Some(p) => parse_config_file(p),
        None => Ok((CtunConfig::desk(), TrainConfig::default())),
    }
}

fn cmd_degrade(args: &DegradeArgs) -> Result<()> {
    let seq = load_sequence(&args.input)?;
    let (h, w) = seq.frame_size();
    let spec = match args.mode {
        DegradeMode::Bi => DegradationSpec::Bicubic { scale: args.scale },
        DegradeMode::Bd => DegradationSpec::BlurDown {
            scale: args.scale,
            sigma: args.sigma,
        },
    };
    let lr = degrade(&seq, spec)?;
    save_sequence(&lr, &args.output)?;
    let (lh, lw) = lr.frame_size();
    println!(
        "degraded {} frames: {h}x{w} -> {lh}x{lw} (scale {})",
        lr.len(),
        args.scale
    );
    Ok(())
}

fn cmd_sr(args: &SrArgs) -> Result<()> {
    let (mut config, _) = load_configs(args.config.as_ref())?;
    if let Some(flag) = args.ugru {
        config.ugru_variant = match flag {
            UgruFlag::Split => UgruVariant::Split,
            UgruFlag::Shared => UgruVariant::Shared,
        };
    }
    let store = load_weights(&args.weights)?;
    let model = CtunModel::new(config, store)?;
    let seq = load_sequence(&args.input)?;
    std::fs::create_dir_all(&args.output)?;
    let n = seq.len();
    let mut last = Instant::now();
    model.super_resolve_with(
        n,
        |t| Ok(seq.frames[t].clone()),
        |t, y| {
            save_frame_png(&y, &args.output.join(format!("frame_{t:06}.png")))?;
            let now = Instant::now();
            println!(
                "frame {t}: {:.1} ms",
                now.duration_since(last).as_secs_f64() * 1000.0
            );
            last = now;
            Ok(())
        },
    )?;
    println!("wrote {n} frames to {}", args.output.display());
    Ok(())
}

fn crop_border<E: Scalar>(x: &Tensor<E>, border: usize) -> Result<Tensor<E>> {
    if border == 0 {
        return Ok(x.clone());
    }
    let s = x.shape();
    if s.h <= 2 * border || s.w <= 2 * border {
        return Err(CtunError::InvalidArg {
            op: "eval",
            detail: format!("crop border {border} leaves no pixels of {}x{}", s.h, s.w),
        });
    }
    let out_shape = Shape::new(s.n, s.c, s.h - 2 * border, s.w - 2 * border);
    let d = x.data();
    let mut out = vec![E::ZERO; out_shape.count()];
    for n in 0..s.n {
        for c in 0..s.c {
            for y in 0..out_shape.h {
                let src = s.index(n, c, y + border, border);
                let dst = out_shape.index(n, c, y, 0);
                out[dst..dst + out_shape.w].copy_from_slice(&d[src..src + out_shape.w]);
            }
        }
    }
    Ok(Tensor::from_vec(out, out_shape))
}

fn scale_to_255(x: &Tensor<f32>) -> Tensor<f32> {
    Tensor::from_vec(x.data().iter().map(|v| v * 255.0).collect(), x.shape())
}

fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let pred = load_sequence(&args.pred)?;
    let gt = load_sequence(&args.gt)?;
    if pred.len() != gt.len() {
        return Err(CtunError::InvalidArg {
            op: "eval",
            detail: format!("{} predicted frames vs {} references", pred.len(), gt.len()),
        });
    }
    if pred.frame_size() != gt.frame_size() {
        return Err(CtunError::FrameSize {
            detail: format!("{:?} vs {:?}", pred.frame_size(), gt.frame_size()),
        });
    }
    let mut psnr_sum = 0.0;
    let mut ssim_sum = 0.0;
    for (i, (p, g)) in pred.frames.iter().zip(&gt.frames).enumerate() {
        let p = crop_border(p, args.crop_border)?;
        let g = crop_border(g, args.crop_border)?;
        let py = rgb_to_y(&p)?;
        let gy = rgb_to_y(&g)?;
        let frame_psnr = if args.y_channel {
            psnr(&py, &gy, 255.0)?
        } else {
            psnr(&scale_to_255(&p), &scale_to_255(&g), 255.0)?
        };
        let frame_ssim = ssim(&py, &gy)?;
        psnr_sum += frame_psnr;
        ssim_sum += frame_ssim;
        println!("frame {i}: psnr {frame_psnr:.4} dB  ssim {frame_ssim:.6}");
    }
    let n = pred.len() as f64;
    println!("mean: psnr {:.4} dB  ssim {:.6}", psnr_sum / n, ssim_sum / n);

    if let Some(row) = args.temporal_profile_row {
        let out = args
            .profile_out
            .clone()
            .unwrap_or_else(|| args.pred.join("temporal_profile.png"));
        let profile = temporal_profile(&pred, row)?;
        save_frame_png(&profile, &out)?;
        println!("temporal profile of row {row} written to {}", out.display());
    }
    Ok(())
}

fn cmd_train(args: &TrainArgs) -> Result<()> {
    let (mut model_config, mut train_config) = load_configs(args.config.as_ref())?;
    if let Some(c) = args.channels {
        model_config.channels = c;
    }
    if let Some(v) = args.iters {
        train_config.iters = v;
    }
    if let Some(v) = args.batch {
        train_config.batch = v;
    }
    if let Some(v) = args.patch {
        train_config.patch = v;
    }
    if let Some(v) = args.frames {
        train_config.frames = v;
    }
    if let Some(v) = args.seed {
        train_config.seed = v;
    }
    let (store, history) = train_loop_with_progress(model_config, train_config, |r| {
        println!(
            "iter {:>6}  charbonnier {:.6}  fft {:.5}  total {:.6}  lr {:.3e}",
            r.iter, r.charbonnier, r.fft, r.total, r.lr
        );
    })?;
    save_weights(&store, &args.output)?;
    let csv = args
        .csv
        .clone()
        .unwrap_or_else(|| args.output.with_extension("csv"));
    write_loss_csv(&history, &csv)?;
    println!(
        "weights -> {} ({} tensors), loss log -> {}",
        args.output.display(),
        store.len(),
        csv.display()
    );
    Ok(())
}

fn cmd_profile(args: &ProfileArgs) -> Result<()> {
    let (config, _) = load_configs(args.config.as_ref())?;
    let (h, w) = args
        .size
        .split_once(['x', 'X'])
        .and_then(|(a, b)| Some((a.parse().ok()?, b.parse().ok()?)))
        .ok_or_else(|| CtunError::InvalidArg {
            op: "profile",
            detail: format!("--size must be HxW, got '{}'", args.size),
        })?;
    let model = CtunModel::<f32>::init(config, args.seed, false)?;
    let report = profile_inference(&model, args.frames, h, w, args.seed)?;
    println!("{report}");
    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    if let Some(path) = &args.json {
        std::fs::write(path, &json)?;
        println!("json -> {}", path.display());
    } else {
        println!("{json}");
    }
    Ok(())
}

fn cmd_gradcheck(args: &GradcheckArgs) -> Result<bool> {
    if args.describe {
        print!("{}", describe(&CtunConfig::default()));
        return Ok(true);
    }
    let reports = gradcheck::run_suite(args.seed)?;
    let mut all_ok = true;
    for r in &reports {
        let status = if r.passed() { "PASS" } else { "FAIL" };
        println!(
            "{status} {:<26} max_rel_err {:.3e} (tolerance {:.0e})",
            r.name, r.max_rel_error, r.tolerance
        );
        all_ok &= r.passed();
    }
    Ok(all_ok)
}

fn run(cli: Cli) -> Result<bool> {
    match &cli.command {
        Command::Degrade(a) => cmd_degrade(a).map(|()| true),
        Command::Sr(a) => cmd_sr(a).map(|()| true),
        Command::Eval(a) => cmd_eval(a).map(|()| true),
        Command::Train(a) => cmd_train(a).map(|()| true),
        Command::Profile(a) => cmd_profile(a).map(|()| true),
        Command::Gradcheck(a) => cmd_gradcheck(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
