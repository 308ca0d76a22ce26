//! `oldn` — train, run and evaluate the online-learning chroma enhancement
//! pipeline from the command line.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use oldn_core::codec_sim::{
    load_pgm, load_ppm, load_yuv420, save_yuv420, Plane, RgbImage, Yuv420Frame,
};
use oldn_core::harness::{
    all_pass, format_check, gradient_suite, load_checkpoint, parse_experiment_config,
    run_experiment, save_checkpoint, simulate_roundtrip, transform_suite, SuiteCheck,
};
use oldn_core::network::{BlockKind, ModelConfig, ModelParams};
use oldn_core::param_codec::{
    apply_residual, huffman_decode, huffman_encode, quantize_residual, stream_size_bits,
    AlResidualStream,
};
use oldn_core::tensor::Tensor4;
use oldn_core::training::{
    build_dataset, parse_manifest, train_offline, train_online, OfflineConfig, OnlineConfig,
};

#[derive(Parser)]
#[command(name = "oldn", about = "Dual-domain chroma quality enhancement with encoder-side online learning", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct OnlineArgs {
    /// Online fine-tuning steps
    #[arg(long, default_value_t = 100)]
    steps: usize,
    /// Online learning rate
    #[arg(long, default_value_t = 1e-2)]
    lr: f64,
    /// Residual quantization precision exponent (step = 2^-prec)
    #[arg(long, default_value_t = 8)]
    prec: u8,
    /// Chroma tile edge for large frames (multiple of 8)
    #[arg(long)]
    tile: Option<usize>,
}

impl OnlineArgs {
    fn config(&self) -> OnlineConfig {
        OnlineConfig {
            steps: self.steps,
            lr: self.lr,
            tile: self.tile,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Offline-train a baseline model from a `path,qp` manifest
    Train {
        /// Manifest file: one `image_path,qp` record per line
        manifest: PathBuf,
        /// Output checkpoint path
        checkpoint: PathBuf,
        /// Flat key=value training config (n, expand, epochs, ...)
        #[arg(long)]
        config: Option<PathBuf>,
        /// Training seed
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Encoder side: fine-tune on one frame and emit residual streams
    Encode {
        checkpoint: PathBuf,
        /// Raw (ground truth) planar YUV420 file
        raw: PathBuf,
        /// Degraded planar YUV420 file
        degraded: PathBuf,
        /// Output prefix; writes <prefix>.u.alrs and <prefix>.v.alrs
        out_prefix: PathBuf,
        #[arg(long)]
        width: usize,
        #[arg(long)]
        height: usize,
        #[command(flatten)]
        online: OnlineArgs,
    },
    /// Decoder side: enhance a degraded YUV420 file, with optional residual
    /// streams updating the baseline
    Enhance {
        checkpoint: PathBuf,
        /// Degraded planar YUV420 input
        input: PathBuf,
        /// Enhanced planar YUV420 output
        output: PathBuf,
        #[arg(long)]
        width: usize,
        #[arg(long)]
        height: usize,
        /// Residual stream prefix (expects <prefix>.u.alrs / <prefix>.v.alrs)
        #[arg(long)]
        residual: Option<PathBuf>,
    },
    /// Full encoder -> bitstream -> decoder round trip on one image
    Simulate {
        checkpoint: PathBuf,
        /// Raw image (PPM P6 or PGM P5)
        image: PathBuf,
        #[arg(long, default_value_t = 32)]
        qp: u8,
        #[command(flatten)]
        online: OnlineArgs,
    },
    /// Run an experiment config: per-image, per-QP table plus BD-rate
    Evaluate {
        /// Experiment config file (key=value)
        #[arg(long)]
        config: PathBuf,
    },
    /// Finite-difference gradient suite
    Gradcheck {
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Frequency-transform property suite
    Dctcheck {
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    match Cli::parse().command {
        Command::Train {
            manifest,
            checkpoint,
            config,
            seed,
        } => train(&manifest, &checkpoint, config.as_deref(), seed),
        Command::Encode {
            checkpoint,
            raw,
            degraded,
            out_prefix,
            width,
            height,
            online,
        } => encode(&checkpoint, &raw, &degraded, &out_prefix, width, height, &online),
        Command::Enhance {
            checkpoint,
            input,
            output,
            width,
            height,
            residual,
        } => enhance(&checkpoint, &input, &output, width, height, residual.as_deref()),
        Command::Simulate {
            checkpoint,
            image,
            qp,
            online,
        } => simulate(&checkpoint, &image, qp, &online),
        Command::Evaluate { config } => evaluate(&config),
        Command::Gradcheck { seed } => {
            let start = Instant::now();
            let checks = gradient_suite(seed)?;
            print_suite("gradient suite", &checks, start)
        }
        Command::Dctcheck { seed } => {
            let start = Instant::now();
            let checks = transform_suite(seed)?;
            print_suite("transform suite", &checks, start)
        }
    }
}

fn print_suite(name: &str, checks: &[SuiteCheck], start: Instant) -> Result<()> {
    for check in checks {
        println!("{}", format_check(check));
    }
    println!(
        "{name}: {}/{} checks passed in {:.2}s",
        checks.iter().filter(|c| c.pass).count(),
        checks.len(),
        start.elapsed().as_secs_f64()
    );
    if !all_pass(checks) {
        bail!("{name} failed");
    }
    Ok(())
}

/// Training config file: flat key=value pairs.
struct TrainFileConfig {
    model: ModelConfig,
    offline: OfflineConfig,
    patches_per_image: usize,
}

fn parse_train_config(text: &str) -> Result<TrainFileConfig> {
    let mut model = ModelConfig::default();
    let mut offline = OfflineConfig::default();
    let mut patches_per_image = 200usize;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .with_context(|| format!("line {}: expected key=value", i + 1))?;
        let (key, value) = (key.trim(), value.trim());
        let ctx = || format!("line {}: bad value for {}", i + 1, key);
        match key {
            "n" => model.n = value.parse().with_context(ctx)?,
            "expand" => model.expand = value.parse().with_context(ctx)?,
            "cab_reduction" => model.cab_reduction = value.parse().with_context(ctx)?,
            "n_wb_branch" => model.n_wb_branch = value.parse().with_context(ctx)?,
            "recon_blocks" => {
                model.recon_blocks = value
                    .split(',')
                    .map(|b| match b.trim() {
                        "wb" => Ok(BlockKind::Wb),
                        "olwb" => Ok(BlockKind::OlWb),
                        other => bail!("unknown block kind {other:?}"),
                    })
                    .collect::<Result<_>>()?;
            }
            "epochs" => offline.epochs = value.parse().with_context(ctx)?,
            "batch_size" => offline.batch_size = value.parse().with_context(ctx)?,
            "lr" => offline.lr = value.parse().with_context(ctx)?,
            "chroma_patch" => offline.chroma_patch = value.parse().with_context(ctx)?,
            "patches_per_image" => patches_per_image = value.parse().with_context(ctx)?,
            other => bail!("line {}: unknown key {other:?}", i + 1),
        }
    }
    Ok(TrainFileConfig {
        model,
        offline,
        patches_per_image,
    })
}

fn train(manifest: &Path, checkpoint: &Path, config: Option<&Path>, seed: u64) -> Result<()> {
    let mut cfg = match config {
        Some(path) => parse_train_config(
            &std::fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))?,
        )?,
        None => parse_train_config("")?,
    };
    cfg.offline.seed = seed;
    let entries = parse_manifest(
        &std::fs::read_to_string(manifest)
            .with_context(|| format!("reading manifest {}", manifest.display()))?,
    )?;
    println!(
        "building dataset: {} images, {} patches each",
        entries.len(),
        cfg.patches_per_image
    );
    let dataset = build_dataset(&entries, cfg.patches_per_image, cfg.offline.chroma_patch, seed)?;
    println!(
        "training: {} samples, {} epochs, batch {}, lr {}",
        dataset.len(),
        cfg.offline.epochs,
        cfg.offline.batch_size,
        cfg.offline.lr
    );
    let start = Instant::now();
    let (params, losses) = train_offline::<f32>(&dataset, &cfg.model, &cfg.offline)?;
    for (epoch, loss) in losses.iter().enumerate() {
        println!("epoch {epoch}: loss {loss:.6e}");
    }
    save_checkpoint(&params, checkpoint)?;
    println!(
        "saved checkpoint to {} after {:.1}s",
        checkpoint.display(),
        start.elapsed().as_secs_f64()
    );
    Ok(())
}

fn residual_paths(prefix: &Path) -> (PathBuf, PathBuf) {
    let with_ext = |plane: &str| {
        let mut os = prefix.as_os_str().to_owned();
        os.push(format!(".{plane}.alrs"));
        PathBuf::from(os)
    };
    (with_ext("u"), with_ext("v"))
}

fn pad_for_network(luma: &Plane, chroma: &Plane) -> (Tensor4<f32>, Tensor4<f32>) {
    (
        luma.pad_to_multiple(16).to_tensor_norm(),
        chroma.pad_to_multiple(8).to_tensor_norm(),
    )
}

fn encode(
    checkpoint: &Path,
    raw: &Path,
    degraded: &Path,
    out_prefix: &Path,
    width: usize,
    height: usize,
    online: &OnlineArgs,
) -> Result<()> {
    let model = load_checkpoint(checkpoint)?;
    let raw_frame = load_yuv420(raw, width, height)?;
    let deg_frame = load_yuv420(degraded, width, height)?;
    let (u_path, v_path) = residual_paths(out_prefix);
    let cfg = online.config();
    for (plane_name, deg_c, raw_c, out_path) in [
        ("u", &deg_frame.u, &raw_frame.u, &u_path),
        ("v", &deg_frame.v, &raw_frame.v, &v_path),
    ] {
        let (luma_t, chroma_t) = pad_for_network(&deg_frame.y, deg_c);
        let raw_t: Tensor4<f32> = raw_c.pad_to_multiple(8).to_tensor_norm();
        let (snapshot, trace) = train_online(&model, &luma_t, &chroma_t, &raw_t, &cfg)?;
        let symbols = quantize_residual(&snapshot, &model.al_snapshot(), online.prec)?;
        let stream = huffman_encode(&symbols)?;
        std::fs::write(out_path, stream.as_bytes())?;
        println!(
            "{plane_name}: loss {:.6e} -> {:.6e}, {} bits -> {}",
            trace.initial_loss,
            trace.returned_loss,
            stream_size_bits(&stream),
            out_path.display()
        );
    }
    Ok(())
}

fn enhance(
    checkpoint: &Path,
    input: &Path,
    output: &Path,
    width: usize,
    height: usize,
    residual: Option<&Path>,
) -> Result<()> {
    let baseline = load_checkpoint(checkpoint)?;
    let deg = load_yuv420(input, width, height)?;
    let mut models: BTreeMap<&str, ModelParams<f32>> = BTreeMap::new();
    match residual {
        None => {
            models.insert("u", baseline.clone());
            models.insert("v", baseline);
            println!("no residual stream: baseline enhancement");
        }
        Some(prefix) => {
            let (u_path, v_path) = residual_paths(prefix);
            for (plane, path) in [("u", u_path), ("v", v_path)] {
                let bytes = std::fs::read(&path)
                    .with_context(|| format!("reading residual {}", path.display()))?;
                let symbols = huffman_decode(&AlResidualStream::from_bytes(bytes))?;
                models.insert(plane, apply_residual(&baseline, &symbols)?);
                println!("applied {} ({} symbols)", path.display(), symbols.symbols.len());
            }
        }
    }
    let enhance_plane = |model: &ModelParams<f32>, chroma: &Plane| -> Result<Plane> {
        let (luma_t, chroma_t) = pad_for_network(&deg.y, chroma);
        let out = oldn_core::network::oldn_forward(model, &luma_t, &chroma_t)?;
        Ok(Plane::from_tensor_norm(&out).crop(chroma.width(), chroma.height()))
    };
    let u = enhance_plane(&models["u"], &deg.u)?;
    let v = enhance_plane(&models["v"], &deg.v)?;
    let frame = Yuv420Frame::new(deg.y.clone(), u, v)?;
    save_yuv420(output, &frame)?;
    println!("wrote {}", output.display());
    Ok(())
}

fn load_rgb_any(path: &Path) -> Result<RgbImage> {
    if path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("pgm"))
    {
        let p = load_pgm(path)?;
        let mut img = RgbImage::filled(p.width(), p.height(), 0);
        for y in 0..p.height() {
            for x in 0..p.width() {
                let v = p.get(x, y);
                img.set_pixel(x, y, v, v, v);
            }
        }
        Ok(img)
    } else {
        Ok(load_ppm(path)?)
    }
}

fn simulate(checkpoint: &Path, image: &Path, qp: u8, online: &OnlineArgs) -> Result<()> {
    let model = load_checkpoint(checkpoint)?;
    let raw = load_rgb_any(image)?;
    let start = Instant::now();
    let out = simulate_roundtrip(&raw, qp, &model, &online.config(), online.prec)?;
    println!("image: {} ({}x{})", image.display(), raw.width(), raw.height());
    println!("qp: {}  rate proxy: {:.0} bits  side info: {} bits", out.qp, out.rate_bits, out.side_bits);
    println!(
        "psnr degraded:  u {:.4}  v {:.4}  mean {:.4}",
        out.degraded.u,
        out.degraded.v,
        out.degraded.mean()
    );
    println!(
        "psnr baseline:  u {:.4}  v {:.4}  mean {:.4}",
        out.baseline.u,
        out.baseline.v,
        out.baseline.mean()
    );
    println!(
        "psnr online:    u {:.4}  v {:.4}  mean {:.4}",
        out.enhanced.u,
        out.enhanced.v,
        out.enhanced.mean()
    );
    println!(
        "parity: {}  ({:.1}s)",
        if out.parity_ok { "ok" } else { "FAILED" },
        start.elapsed().as_secs_f64()
    );
    if !out.parity_ok {
        bail!("encoder/decoder parity failed");
    }
    Ok(())
}

fn evaluate(config_path: &Path) -> Result<()> {
    let text = std::fs::read_to_string(config_path)
        .with_context(|| format!("reading config {}", config_path.display()))?;
    let config = parse_experiment_config(&text)?;
    let start = Instant::now();
    let report = run_experiment(&config)?;
    println!(
        "{} rows, {} errors, {:.1}s",
        report.rows.len(),
        report.errors,
        start.elapsed().as_secs_f64()
    );
    match report.bd_rate_percent {
        Some(bd) => println!("bd-rate online vs degraded: {bd:.4}%"),
        None => println!("bd-rate: not computable (need >= 4 QPs per image)"),
    }
    println!("report written to {}", config.report.display());
    Ok(())
}
