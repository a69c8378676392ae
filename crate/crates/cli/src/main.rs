//! `puhdr`: one subcommand per pipeline, for batch use and reproducible
//! experiments.
//!
//! Machine-readable JSON results go to stdout, logs and the resolved
//! configuration go to stderr, images only ever go to files. Exit codes:
//! 0 success, 1 domain/contract error, 2 parse or I/O error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use puhdr::dataprep;
use puhdr::hdrio;
use puhdr::image::LinearImage;
use puhdr::jod;
use puhdr::lab;
use puhdr::metrics;
use puhdr::rawsim;
use puhdr::xfer;

#[derive(Parser, Serialize)]
#[command(name = "puhdr", version, about = "Perceptually uniform HDR toolkit")]
struct Cli {
    /// RNG seed for every randomized pipeline.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads for row-parallel image operations (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, global = true, default_value_t = false)]
    verbose: bool,
    #[command(subcommand)]
    #[serde(flatten)]
    command: Command,
}

#[derive(Subcommand, Serialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
enum Command {
    /// Apply a transfer function to a linear image (optionally rescaling to
    /// a peak first) and write the code values as PFM.
    Encode {
        #[arg(long = "in")]
        input: PathBuf,
        /// pu21 | pq | srgb | linear-normalized
        #[arg(long)]
        tf: String,
        /// Rescale so the maximum luminance equals this before encoding.
        #[arg(long)]
        peak: Option<f32>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Invert a transfer function on a code-value PFM.
    Decode {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        tf: String,
        /// Normalization peak required to invert linear-normalized data.
        #[arg(long)]
        scale: Option<f32>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Globally rescale so the maximum luminance equals the peak.
    Rescale {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value_t = 4000.0)]
        peak: f32,
        #[arg(long)]
        out: PathBuf,
    },
    /// Effective dynamic range in stops.
    Dr {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value_t = 3.0)]
        sigma: f64,
        #[arg(long, default_value_t = 0.5)]
        p_low: f64,
        #[arg(long, default_value_t = 99.5)]
        p_high: f64,
    },
    /// Exposure-adjusted sRGB rendering, written as binary PPM.
    RenderEv {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, allow_hyphen_values = true)]
        ev: f64,
        /// Absolute luminance mapped to 1.0 at EV 0; defaults to the
        /// 18%-gray median anchor.
        #[arg(long)]
        anchor: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Subsample an RGB image onto an RGGB Bayer frame (grayscale PFM plus
    /// JSON sidecar).
    Mosaic {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Sidecar path; defaults to the output with a .json extension.
        #[arg(long)]
        sidecar: Option<PathBuf>,
    },
    /// Bilinear demosaic of an RGGB Bayer frame.
    Demosaic {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        sidecar: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Clip channels at a virtual exposure ceiling.
    Expose {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value_t = 100.0)]
        clip: f32,
        #[arg(long)]
        out: PathBuf,
    },
    /// Add Poisson-Gaussian sensor noise to a Bayer frame.
    Noise {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value_t = 400.0)]
        photon_gain: f64,
        #[arg(long, default_value_t = 0.02)]
        read_sigma: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Synthesize a radial log-luminance gradient target.
    SynthGradient {
        #[arg(long, default_value_t = 512)]
        size: usize,
        #[arg(long, default_value_t = 4000.0)]
        peak: f64,
        #[arg(long, default_value_t = 0.005)]
        floor: f64,
        /// white | yellow | green | red
        #[arg(long, default_value = "yellow")]
        chroma: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sample dynamic-range-filtered crops from HDR sources into a manifest.
    PrepCrops {
        /// Source image; repeat for multiple sources.
        #[arg(long = "in", required = true)]
        inputs: Vec<PathBuf>,
        /// Comma-separated crop sizes.
        #[arg(long, default_value = "512,1024")]
        sizes: String,
        #[arg(long, default_value_t = dataprep::DEFAULT_DR_THRESHOLD)]
        threshold: f64,
        #[arg(long, default_value_t = dataprep::DEFAULT_SAMPLE_RATE)]
        rate: usize,
        #[arg(long, default_value_t = 4000.0)]
        peak: f32,
        #[arg(long)]
        out: PathBuf,
    },
    /// Scale an image so its median luminance hits a target.
    NormalizeMedian {
        #[arg(long = "in")]
        input: PathBuf,
        /// "study" (8 cd/m²), "web" (0.5 cd/m²), or a number.
        #[arg(long)]
        target: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Scale pairwise comparison counts to JOD scores.
    Jod {
        /// CSV: header row of labels, then K rows of K integers.
        #[arg(long)]
        counts: PathBuf,
        /// "mean" or "ref:LABEL".
        #[arg(long, default_value = "mean")]
        anchor: String,
        /// Bootstrap replicates for the 95% confidence intervals.
        #[arg(long, default_value_t = 500)]
        boot: usize,
        /// Disable add-half smoothing of unanimous pairs.
        #[arg(long, default_value_t = false)]
        no_smooth: bool,
    },
    /// Train a flow-matching network (or a LoRA adapter over a frozen base)
    /// on a built-in synthetic dataset.
    LabTrain {
        /// mixture2d | patches48
        #[arg(long, default_value = "mixture2d")]
        data: String,
        #[arg(long, default_value_t = 256)]
        n_points: usize,
        #[arg(long, default_value_t = 2000)]
        steps: usize,
        #[arg(long, default_value_t = 1e-2)]
        lr: f64,
        #[arg(long, default_value_t = 64)]
        batch: usize,
        #[arg(long, default_value_t = 0.5)]
        cond_dropout: f64,
        /// Comma-separated hidden widths for a fresh network.
        #[arg(long, default_value = "64,64,64")]
        hidden: String,
        /// Attach a LoRA adapter of this rank to the base model instead of
        /// training dense weights (presets: 32, 128; α = rank).
        #[arg(long)]
        rank: Option<usize>,
        /// Trained model JSON to adapt; required with --rank.
        #[arg(long)]
        base: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Euler-sample points from a trained flow model.
    LabSample {
        #[arg(long)]
        params: PathBuf,
        #[arg(long, default_value_t = 256)]
        n: usize,
        #[arg(long, default_value_t = 64)]
        steps: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Frozen-autoencoder encoding-ordering experiment.
    LabAeExperiment {
        #[arg(long, default_value_t = 8)]
        patch_size: usize,
        #[arg(long, default_value_t = 64)]
        hidden: usize,
        #[arg(long, default_value_t = 2048)]
        n_train: usize,
        #[arg(long, default_value_t = 256)]
        n_eval: usize,
    },
}

/// Failures mapped to exit codes: domain/contract errors exit 1, parse and
/// I/O errors exit 2.
enum CliError {
    Domain(String),
    Io(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Domain(_) => 1,
            CliError::Io(_) => 2,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Domain(m) | CliError::Io(m) => m,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<hdrio::HdrIoError> for CliError {
    fn from(e: hdrio::HdrIoError) -> Self {
        match e {
            hdrio::HdrIoError::Parse { .. } | hdrio::HdrIoError::UnsupportedFormat(_) => {
                CliError::Io(e.to_string())
            }
            _ => CliError::Domain(e.to_string()),
        }
    }
}

impl From<jod::JodError> for CliError {
    fn from(e: jod::JodError) -> Self {
        match e {
            jod::JodError::Csv { .. } => CliError::Io(e.to_string()),
            _ => CliError::Domain(e.to_string()),
        }
    }
}

impl From<rawsim::RawSimError> for CliError {
    fn from(e: rawsim::RawSimError) -> Self {
        match e {
            rawsim::RawSimError::Io(inner) => inner.into(),
            _ => CliError::Domain(e.to_string()),
        }
    }
}

macro_rules! domain_error {
    ($($ty:ty),+) => {$(
        impl From<$ty> for CliError {
            fn from(e: $ty) -> Self {
                CliError::Domain(e.to_string())
            }
        }
    )+};
}
domain_error!(
    puhdr::image::ImageError,
    xfer::XferError,
    metrics::MetricsError,
    dataprep::DataPrepError,
    lab::LabError
);

fn main() -> ExitCode {
    let cli = Cli::parse();

    // reproducibility record
    eprintln!(
        "{}",
        serde_json::to_string(&cli).expect("config serializes")
    );

    let threads = cli.threads;
    let run_inner = || match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    };
    match threads {
        Some(n) => {
            let pool = match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
                Ok(pool) => pool,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(2);
                }
            };
            pool.install(run_inner)
        }
        None => run_inner(),
    }
}

/// Reads a linear image by extension: `.hdr` (Radiance RGBE) or `.pfm`.
fn read_image(path: &Path) -> Result<LinearImage, CliError> {
    let bytes = std::fs::read(path)?;
    match path.extension().and_then(|e| e.to_str()) {
        Some("hdr") | Some("pic") => Ok(hdrio::read_rgbe(&bytes)?),
        Some("pfm") => Ok(hdrio::read_pfm(&bytes)?),
        other => Err(CliError::Io(format!(
            "unsupported input extension {other:?} (expected .hdr or .pfm)"
        ))),
    }
}

/// Writes a linear image by extension: `.hdr` or `.pfm`.
fn write_image(path: &Path, img: &LinearImage) -> Result<(), CliError> {
    let bytes = match path.extension().and_then(|e| e.to_str()) {
        Some("hdr") => hdrio::write_rgbe(img, hdrio::RgbeScanlineMode::AdaptiveRle).0,
        Some("pfm") => hdrio::write_pfm(img),
        other => {
            return Err(CliError::Io(format!(
                "unsupported output extension {other:?} (expected .hdr or .pfm)"
            )))
        }
    };
    std::fs::write(path, bytes)?;
    Ok(())
}

fn parse_tf(s: &str) -> Result<xfer::TransferTag, CliError> {
    s.parse().map_err(CliError::Io)
}

fn emit(value: serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(&value).expect("result serializes"));
}

fn run(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Encode {
            input,
            tf,
            peak,
            out,
        } => {
            let tag = parse_tf(tf)?;
            let mut img = read_image(input)?;
            if let Some(peak) = peak {
                img = img.rescale_to_peak(*peak)?;
            }
            let (encoded, clips) = xfer::encode_image(&img, tag)?;
            let pfm = hdrio::write_pfm(&LinearImage::new(
                encoded.width(),
                encoded.height(),
                encoded.data().to_vec(),
            )?);
            std::fs::write(out, pfm)?;
            emit(json!({
                "tag": tag.name(),
                "clipped_below": clips.below,
                "clipped_above": clips.above,
                "norm_peak": encoded.norm_peak,
                "out": out,
            }));
        }
        Command::Decode {
            input,
            tf,
            scale,
            out,
        } => {
            let tag = parse_tf(tf)?;
            let code = read_image(input)?;
            let encoded = xfer::EncodedImage::new(
                code.width(),
                code.height(),
                code.data().to_vec(),
                tag,
                *scale,
            )?;
            let linear = xfer::decode_image(&encoded)?;
            write_image(out, &linear)?;
            emit(json!({ "tag": tag.name(), "out": out }));
        }
        Command::Rescale { input, peak, out } => {
            let img = read_image(input)?.rescale_to_peak(*peak)?;
            write_image(out, &img)?;
            emit(json!({ "peak": peak, "out": out }));
        }
        Command::Dr {
            input,
            sigma,
            p_low,
            p_high,
        } => {
            if !(*sigma > 0.0) {
                return Err(CliError::Domain(format!("sigma must be positive, got {sigma}")));
            }
            let img = read_image(input)?;
            let report = metrics::effective_dr_with(&img, *sigma, *p_low, *p_high);
            emit(serde_json::to_value(report).expect("report serializes"));
        }
        Command::RenderEv {
            input,
            ev,
            anchor,
            out,
        } => {
            let img = read_image(input)?;
            let resolved_anchor = anchor.unwrap_or_else(|| dataprep::default_ev_anchor(&img));
            let rendered = dataprep::render_ev(&img, *ev, Some(resolved_anchor))?;
            std::fs::write(out, hdrio::write_ppm8(&rendered)?)?;
            emit(json!({ "ev": ev, "anchor": resolved_anchor, "out": out }));
        }
        Command::Mosaic {
            input,
            out,
            sidecar,
        } => {
            let img = read_image(input)?;
            let frame = rawsim::mosaic(&img)?;
            let (pfm, sidecar_json) = rawsim::bayer_to_pfm(&frame);
            let sidecar_path = sidecar
                .clone()
                .unwrap_or_else(|| out.with_extension("json"));
            std::fs::write(out, pfm)?;
            std::fs::write(&sidecar_path, sidecar_json)?;
            emit(json!({
                "pattern": "RGGB",
                "width": frame.width(),
                "height": frame.height(),
                "out": out,
                "sidecar": sidecar_path,
            }));
        }
        Command::Demosaic {
            input,
            sidecar,
            out,
        } => {
            let pfm = std::fs::read(input)?;
            let sidecar_text = match sidecar {
                Some(path) => Some(std::fs::read_to_string(path)?),
                None => None,
            };
            let frame = rawsim::bayer_from_pfm(&pfm, sidecar_text.as_deref())?;
            let img = rawsim::demosaic_bilinear(&frame);
            write_image(out, &img)?;
            emit(json!({ "out": out }));
        }
        Command::Expose { input, clip, out } => {
            let img = rawsim::virtual_exposure(&read_image(input)?, *clip)?;
            write_image(out, &img)?;
            emit(json!({ "clip": clip, "out": out }));
        }
        Command::Noise {
            input,
            photon_gain,
            read_sigma,
            out,
        } => {
            let pfm = std::fs::read(input)?;
            let frame = rawsim::bayer_from_pfm(&pfm, None)?;
            let params = rawsim::NoiseParams {
                photon_gain: *photon_gain,
                read_sigma: *read_sigma,
                seed: cli.seed,
            };
            let noisy = rawsim::add_noise(&frame, &params)?;
            let (bytes, _) = rawsim::bayer_to_pfm(&noisy);
            std::fs::write(out, bytes)?;
            emit(json!({
                "photon_gain": photon_gain,
                "read_sigma": read_sigma,
                "seed": cli.seed,
                "out": out,
            }));
        }
        Command::SynthGradient {
            size,
            peak,
            floor,
            chroma,
            out,
        } => {
            let chroma: rawsim::Chroma = chroma.parse().map_err(CliError::Io)?;
            let img = rawsim::synth_radial_gradient(*size, *peak, *floor, chroma)?;
            write_image(out, &img)?;
            emit(json!({
                "size": size,
                "peak": peak,
                "floor": floor,
                "chroma": chroma,
                "out": out,
            }));
        }
        Command::PrepCrops {
            inputs,
            sizes,
            threshold,
            rate,
            peak,
            out,
        } => {
            let sizes: Vec<usize> = sizes
                .split(',')
                .map(|s| s.trim().parse::<usize>())
                .collect::<Result<_, _>>()
                .map_err(|e| CliError::Io(format!("bad --sizes: {e}")))?;
            let mut sources = Vec::new();
            for path in inputs {
                let name = path
                    .file_name()
                    .and_then(|n| n.to_str())
                    .unwrap_or("unnamed")
                    .to_string();
                let img = read_image(path)?.rescale_to_peak(*peak)?;
                sources.push((name, img));
            }
            let manifest = dataprep::build_manifest(
                &sources,
                &sizes,
                *threshold,
                *rate,
                *peak as f64,
                cli.seed,
            );
            std::fs::write(
                out,
                serde_json::to_string_pretty(&manifest).expect("manifest serializes"),
            )?;
            emit(json!({
                "kept": manifest.entries.len(),
                "threshold": threshold,
                "out": out,
            }));
        }
        Command::NormalizeMedian { input, target, out } => {
            let target_value = match target.as_str() {
                "study" => dataprep::MEDIAN_TARGET_STUDY,
                "web" => dataprep::MEDIAN_TARGET_WEB,
                other => other
                    .parse::<f32>()
                    .map_err(|_| CliError::Io(format!("bad --target '{other}'")))?,
            };
            let img = dataprep::normalize_median(&read_image(input)?, target_value)?;
            write_image(out, &img)?;
            emit(json!({ "target": target_value, "out": out }));
        }
        Command::Jod {
            counts,
            anchor,
            boot,
            no_smooth,
        } => {
            let text = std::fs::read_to_string(counts)?;
            let matrix = jod::ComparisonMatrix::from_csv(&text)?;
            let anchor = match anchor.as_str() {
                "mean" => jod::Anchor::MeanZero,
                other => match other.strip_prefix("ref:") {
                    Some(label) => jod::Anchor::Reference(matrix.label_index(label)?),
                    None => {
                        return Err(CliError::Io(format!(
                            "bad --anchor '{other}' (expected 'mean' or 'ref:LABEL')"
                        )))
                    }
                },
            };
            let options = jod::FitOptions {
                smooth_unanimous: !no_smooth,
                ..Default::default()
            };
            let result = jod::bootstrap_ci_with(&matrix, anchor, *boot, cli.seed, &options)?;
            emit(serde_json::to_value(result).expect("result serializes"));
        }
        Command::LabTrain {
            data,
            n_points,
            steps,
            lr,
            batch,
            cond_dropout,
            hidden,
            rank,
            base,
            out,
        } => {
            let dataset = lab::synthetic_dataset(data, *n_points, cli.seed)
                .map_err(CliError::Io)?;
            let cfg = lab::TrainConfig {
                steps: *steps,
                lr: *lr,
                batch_size: *batch,
                cond_dropout_p: *cond_dropout,
                momentum: 0.9,
                seed: cli.seed,
            };
            let model = match (rank, base) {
                (Some(rank), Some(base)) => {
                    let text = std::fs::read_to_string(base)?;
                    let loaded: lab::TrainedModel = serde_json::from_str(&text)
                        .map_err(|e| CliError::Io(format!("bad base model: {e}")))?;
                    let net = match loaded.adapter {
                        Some(adapter) => adapter.merge(&loaded.net),
                        None => loaded.net,
                    };
                    let mut adapter = lab::LoraAdapter::new(&net, *rank, cli.seed);
                    let report = lab::train_lora(&net, &mut adapter, &dataset, &cfg)?;
                    lab::TrainedModel {
                        net,
                        adapter: Some(adapter),
                        config: cfg,
                        loss_trace: report.loss_trace,
                    }
                }
                (Some(_), None) => {
                    return Err(CliError::Io("--rank requires --base".into()));
                }
                (None, _) => {
                    let widths: Vec<usize> = hidden
                        .split(',')
                        .map(|s| s.trim().parse::<usize>())
                        .collect::<Result<_, _>>()
                        .map_err(|e| CliError::Io(format!("bad --hidden: {e}")))?;
                    let mut net =
                        lab::DenseNet::new(dataset.dim(), dataset.cond_dim(), &widths, cli.seed);
                    let report = lab::train_net(&mut net, &dataset, &cfg)?;
                    lab::TrainedModel {
                        net,
                        adapter: None,
                        config: cfg,
                        loss_trace: report.loss_trace,
                    }
                }
            };
            std::fs::write(
                out,
                serde_json::to_string(&model).expect("model serializes"),
            )?;
            emit(json!({
                "final_loss": model.loss_trace.last(),
                "steps": steps,
                "out": out,
            }));
        }
        Command::LabSample {
            params,
            n,
            steps,
            out,
        } => {
            let text = std::fs::read_to_string(params)?;
            let model: lab::TrainedModel =
                serde_json::from_str(&text).map_err(|e| CliError::Io(format!("bad model: {e}")))?;
            let points = lab::sample_flow(
                &model.net,
                model.adapter.as_ref(),
                *n,
                *steps,
                None,
                cli.seed,
            );
            let result = json!({
                "n": n,
                "dim": model.net.z_dim,
                "points": points,
            });
            match out {
                Some(path) => std::fs::write(
                    path,
                    serde_json::to_string(&result).expect("result serializes"),
                )?,
                None => emit(result),
            }
        }
        Command::LabAeExperiment {
            patch_size,
            hidden,
            n_train,
            n_eval,
        } => {
            let cfg = lab::AeConfig {
                patch_size: *patch_size,
                hidden_dim: *hidden,
                n_train: *n_train,
                n_eval: *n_eval,
                seed: cli.seed,
            };
            let report = lab::autoencoder_ordering_experiment(&cfg);
            emit(serde_json::to_value(report).expect("report serializes"));
        }
    }
    Ok(())
}
