//! Command-line interface: train / superres / evaluate / metrics.
//!
//! Exit codes: 0 success, 2 configuration or model error, 3 data error,
//! 4 numerical abort.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use aniso_sr::autoencoder::{load_weights, AeConfig, Autoencoder};
use aniso_sr::eval::{
    evaluate_volumes, export_report, preprocess_for_model, render_metrics_text, summarize,
    ReportFormat, ALL_METHODS,
};
use aniso_sr::io::{load_volume, write_volume, VolumeFormat};
use aniso_sr::metrics::all_metrics;
use aniso_sr::trainer::{train, TrainConfig};
use aniso_sr::volume::Volume;
use aniso_sr::Error;

const EXIT_CONFIG: u8 = 2;
const EXIT_DATA: u8 = 3;
const EXIT_NUMERICAL: u8 = 4;

const TARGET_INPLANE_MM: (f32, f32) = (1.4, 1.4);

#[derive(Parser)]
#[command(name = "aniso-sr", version, about = "Through-plane super-resolution for anisotropic 3D volumes")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct CommonIo {
    /// Volume format (nifti1 | raw); default sniffs the file extension.
    #[arg(long)]
    format: Option<String>,
    /// Skip percentile normalization and in-plane resampling.
    #[arg(long)]
    no_preprocess: bool,
    /// Worker threads (falls back to ANISO_SR_THREADS, then 1).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train an autoencoder on the volumes in a directory.
    Train {
        /// Directory of training volumes.
        #[arg(long)]
        data: PathBuf,
        /// Directory of validation volumes (enables early stopping).
        #[arg(long)]
        val: Option<PathBuf>,
        /// Output path for the best model checkpoint.
        #[arg(long)]
        out: PathBuf,
        /// Training config file (key: value lines).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Training log CSV path (default: <out>.train.csv).
        #[arg(long)]
        log: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        steps: Option<u64>,
        #[arg(long)]
        batch: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        patch: Option<usize>,
        #[arg(long)]
        val_interval: Option<u64>,
        #[arg(long)]
        patience: Option<u64>,
        #[command(flatten)]
        io: CommonIo,
    },
    /// Super-resolve the through-plane axis of one volume.
    Superres {
        /// Input volume.
        input: PathBuf,
        /// Trained model weights.
        #[arg(long)]
        model: PathBuf,
        /// Output volume path.
        #[arg(long)]
        out: PathBuf,
        /// Upsampling factor (>= 2).
        #[arg(long, default_value_t = 2)]
        factor: usize,
        #[command(flatten)]
        io: CommonIo,
    },
    /// Run the slice-drop evaluation over a directory of volumes.
    Evaluate {
        /// Directory of test volumes.
        #[arg(long)]
        data: PathBuf,
        /// Trained model weights.
        #[arg(long)]
        model: PathBuf,
        /// Report base path; writes <out>.csv and <out>.summary.txt.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        io: CommonIo,
    },
    /// Print per-slice PSNR/SSIM/VIF between two equally shaped volumes.
    Metrics {
        /// Reference volume.
        reference: PathBuf,
        /// Test volume.
        test: PathBuf,
        #[command(flatten)]
        io: CommonIo,
    },
}

struct CliError {
    code: u8,
    message: String,
}

impl CliError {
    fn config(e: impl std::fmt::Display) -> CliError {
        CliError {
            code: EXIT_CONFIG,
            message: e.to_string(),
        }
    }

    fn data(e: impl std::fmt::Display) -> CliError {
        CliError {
            code: EXIT_DATA,
            message: e.to_string(),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Config(_) | Error::Incompatible(_) => EXIT_CONFIG,
            Error::Numerical { .. } => EXIT_NUMERICAL,
            _ => EXIT_DATA,
        };
        CliError {
            code,
            message: e.to_string(),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.cmd {
        Cmd::Train {
            data,
            val,
            out,
            config,
            log,
            seed,
            steps,
            batch,
            lr,
            patch,
            val_interval,
            patience,
            io,
        } => cmd_train(TrainArgs {
            data,
            val,
            out,
            config,
            log,
            seed,
            steps,
            batch,
            lr,
            patch,
            val_interval,
            patience,
            io,
        }),
        Cmd::Superres {
            input,
            model,
            out,
            factor,
            io,
        } => cmd_superres(&input, &model, &out, factor, &io),
        Cmd::Evaluate {
            data,
            model,
            out,
            io,
        } => cmd_evaluate(&data, &model, &out, &io),
        Cmd::Metrics { reference, test, io } => cmd_metrics(&reference, &test, &io),
    }
}

fn parse_format(io: &CommonIo) -> Result<Option<VolumeFormat>, CliError> {
    match &io.format {
        None => Ok(None),
        Some(s) => s.parse::<VolumeFormat>().map(Some).map_err(CliError::config),
    }
}

fn thread_count(io: &CommonIo) -> usize {
    io.threads
        .or_else(|| {
            std::env::var("ANISO_SR_THREADS")
                .ok()
                .and_then(|v| v.parse().ok())
        })
        .unwrap_or(1)
        .max(1)
}

fn format_for(path: &Path, explicit: Option<VolumeFormat>) -> Result<VolumeFormat, CliError> {
    explicit
        .or_else(|| VolumeFormat::from_path(path))
        .ok_or_else(|| {
            CliError::config(format!(
                "cannot infer volume format of {}; pass --format",
                path.display()
            ))
        })
}

/// Load every volume file in a directory, sorted by file name.
fn load_dir(dir: &Path, explicit: Option<VolumeFormat>) -> Result<Vec<Volume>, CliError> {
    let entries = std::fs::read_dir(dir)
        .map_err(|e| CliError::data(format!("cannot read directory {}: {e}", dir.display())))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && (explicit.is_some() || VolumeFormat::from_path(p).is_some())
                && p.extension().is_none_or(|e| e != "meta")
        })
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(CliError::data(format!(
            "no volumes found in {}",
            dir.display()
        )));
    }
    let mut volumes = Vec::with_capacity(paths.len());
    for p in paths {
        let format = format_for(&p, explicit)?;
        let mut v = load_volume(&p, format).map_err(CliError::from)?;
        if v.provenance().is_empty() {
            let stem = p.file_stem().map(|s| s.to_string_lossy().into_owned());
            v.set_provenance(stem.unwrap_or_else(|| p.display().to_string()));
        }
        volumes.push(v);
    }
    Ok(volumes)
}

fn load_model(path: &Path) -> Result<Autoencoder, CliError> {
    let weights = load_weights(path).map_err(|e| CliError {
        code: EXIT_CONFIG,
        message: format!("cannot load model {}: {e}", path.display()),
    })?;
    Autoencoder::from_weights(weights).map_err(|e| CliError {
        code: EXIT_CONFIG,
        message: e.to_string(),
    })
}

struct TrainArgs {
    data: PathBuf,
    val: Option<PathBuf>,
    out: PathBuf,
    config: Option<PathBuf>,
    log: Option<PathBuf>,
    seed: Option<u64>,
    steps: Option<u64>,
    batch: Option<usize>,
    lr: Option<f64>,
    patch: Option<usize>,
    val_interval: Option<u64>,
    patience: Option<u64>,
    io: CommonIo,
}

fn cmd_train(args: TrainArgs) -> Result<(), CliError> {
    let mut cfg = TrainConfig::default();
    if let Some(path) = &args.config {
        let text = std::fs::read_to_string(path).map_err(|e| {
            CliError::config(format!("cannot read config {}: {e}", path.display()))
        })?;
        cfg.apply_file_text(&text).map_err(CliError::config)?;
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    if let Some(v) = args.steps {
        cfg.max_steps = v;
    }
    if let Some(v) = args.batch {
        cfg.batch_size = v;
    }
    if let Some(v) = args.lr {
        cfg.lr = v;
    }
    if let Some(v) = args.patch {
        cfg.patch = v;
    }
    if let Some(v) = args.val_interval {
        cfg.val_interval = v;
    }
    if let Some(v) = args.patience {
        cfg.early_stop_patience = v;
    }
    cfg.validate().map_err(CliError::config)?;

    let format = parse_format(&args.io)?;
    let raw_train = load_dir(&args.data, format)?;
    let train_vols = preprocess_many(&raw_train, &args.io, None)?;
    let val_vols = match &args.val {
        Some(dir) => {
            let raw = load_dir(dir, format)?;
            preprocess_many(&raw, &args.io, Some(16))?
        }
        None => Vec::new(),
    };

    let ae_cfg = AeConfig {
        input_rows: cfg.patch,
        input_cols: cfg.patch,
        ..AeConfig::default()
    };
    let mut model = Autoencoder::new(ae_cfg, cfg.seed).map_err(CliError::config)?;
    let log_path = args
        .log
        .clone()
        .unwrap_or_else(|| append_ext(&args.out, "train.csv"));
    let report = train(&mut model, &train_vols, &val_vols, &cfg, Some(&log_path))
        .map_err(CliError::from)?;
    model.save(&args.out).map_err(CliError::from)?;

    let last = report.losses.last().copied().unwrap_or(f32::NAN);
    println!(
        "trained {} steps (last loss {last}); model {}, log {}",
        report.losses.len(),
        args.out.display(),
        log_path.display()
    );
    if let (Some(step), Some(val)) = (report.best_step, report.best_val) {
        println!("best validation mse {val} at step {step}");
    }
    Ok(())
}

fn preprocess_many(
    volumes: &[Volume],
    io: &CommonIo,
    crop_multiple: Option<usize>,
) -> Result<Vec<Volume>, CliError> {
    volumes
        .iter()
        .map(|v| {
            let mut out = if io.no_preprocess {
                v.clone()
            } else {
                let n = v.percentile_normalize(1.0, 99.0).map_err(CliError::from)?;
                n.resample_inplane(TARGET_INPLANE_MM).map_err(CliError::from)?
            };
            if let Some(multiple) = crop_multiple {
                out = aniso_sr::eval::crop_to_multiple(&out, multiple).map_err(CliError::from)?;
            }
            Ok(out)
        })
        .collect()
}

fn append_ext(path: &Path, ext: &str) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".");
    name.push(ext);
    path.with_file_name(name)
}

fn cmd_superres(
    input: &Path,
    model_path: &Path,
    out: &Path,
    factor: usize,
    io: &CommonIo,
) -> Result<(), CliError> {
    let model = load_model(model_path)?;
    let format = parse_format(io)?;
    let in_format = format_for(input, format)?;
    let volume = load_volume(input, in_format).map_err(CliError::from)?;
    let prepared = if io.no_preprocess {
        volume
    } else {
        preprocess_for_model(&volume, TARGET_INPLANE_MM, model.config().downsample_factor())
            .map_err(CliError::from)?
    };
    let sr = model
        .superresolve_volume(&prepared, factor)
        .map_err(CliError::from)?;
    let out_format = format_for(out, format)?;
    write_volume(&sr, out, out_format).map_err(CliError::from)?;
    let (n, r, c) = sr.dims();
    println!(
        "wrote {} ({n}x{r}x{c}, through-plane {} mm)",
        out.display(),
        sr.spacing().through_mm
    );
    Ok(())
}

fn cmd_evaluate(data: &Path, model_path: &Path, out: &Path, io: &CommonIo) -> Result<(), CliError> {
    let model = load_model(model_path)?;
    let format = parse_format(io)?;
    let raw = load_dir(data, format)?;
    let prepared = preprocess_many(&raw, io, Some(model.config().downsample_factor()))?;
    let records = evaluate_volumes(&model, &prepared, &ALL_METHODS, thread_count(io))
        .map_err(CliError::from)?;
    let summary = summarize(&records);
    let csv_path = append_ext(out, "csv");
    let summary_path = append_ext(out, "summary.txt");
    export_report(&summary, &records, &csv_path, ReportFormat::Csv).map_err(CliError::from)?;
    export_report(&summary, &records, &summary_path, ReportFormat::StructuredText)
        .map_err(CliError::from)?;
    println!(
        "evaluated {} volumes ({} records); wrote {} and {}",
        prepared.len(),
        records.len(),
        csv_path.display(),
        summary_path.display()
    );
    Ok(())
}

fn cmd_metrics(reference: &Path, test: &Path, io: &CommonIo) -> Result<(), CliError> {
    let format = parse_format(io)?;
    let ref_vol = load_volume(reference, format_for(reference, format)?).map_err(CliError::from)?;
    let test_vol = load_volume(test, format_for(test, format)?).map_err(CliError::from)?;
    if ref_vol.dims() != test_vol.dims() {
        return Err(CliError::data(format!(
            "shape mismatch: reference is {:?}, test is {:?}",
            ref_vol.dims(),
            test_vol.dims()
        )));
    }
    let mut rows = Vec::with_capacity(ref_vol.slice_count());
    for k in 0..ref_vol.slice_count() {
        let m = all_metrics(&ref_vol.slice_at(k), &test_vol.slice_at(k)).map_err(CliError::from)?;
        rows.push((k, m));
    }
    print!("{}", render_metrics_text(&rows));
    Ok(())
}
