use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use hybrid_decomp::codebook::{train_codebook, CodebookKind};
use hybrid_decomp::pipeline::{
    codebook_training_frames, decompose_file, evaluate, load_codebooks, mix_at_isnr, read_wav, read_wav_at,
    shape_bank, write_results_csv, write_wav, NamedSignal, PipelineConfig,
};
use log::{info, warn};

/// Split speech in noise into voiced and unvoiced components.
#[derive(Parser)]
#[command(name = "hdecomp", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Decompose one recording into v_hat.wav and u_hat.wav.
    Decompose {
        input: PathBuf,
        #[arg(long)]
        codebook_u: Option<PathBuf>,
        #[arg(long)]
        codebook_c: Option<PathBuf>,
        /// TOML file overriding any subset of the defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Use consecutive segments of this length instead of the optimal ones.
        #[arg(long, value_name = "MS")]
        fixed_segmentation: Option<f64>,
        /// Noise-only recording used for the initial whitening model.
        #[arg(long)]
        noise_ref: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Add noise to a clean recording at a given input SNR.
    Mix {
        clean: PathBuf,
        noise: PathBuf,
        #[arg(long, allow_hyphen_values = true)]
        isnr: f64,
        #[arg(long)]
        out: PathBuf,
        /// First noise sample to use.
        #[arg(long, default_value_t = 0)]
        offset: usize,
        /// Read the noise cyclically when it is shorter than the clean file.
        #[arg(long)]
        wrap: bool,
    },
    /// Compare adaptive and fixed segmentation over clean and noise folders.
    Evaluate {
        #[arg(long)]
        clean: PathBuf,
        #[arg(long)]
        noise: PathBuf,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, default_value = "0,5,10")]
        isnr: Vec<f64>,
        /// Mixtures per combination, each with a different noise offset.
        #[arg(long, default_value_t = 1)]
        runs: usize,
        #[arg(long)]
        codebook_u: Option<PathBuf>,
        #[arg(long)]
        codebook_c: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train an unvoiced-speech or noise codebook from a folder of WAVs.
    TrainCodebook {
        #[arg(long)]
        kind: CodebookKind,
        #[arg(long)]
        size: usize,
        /// AR order; defaults to `codebook_order` of the config.
        #[arg(long)]
        order: Option<usize>,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the default configuration as TOML.
    Defaults,
}

fn load_config(path: Option<&Path>) -> Result<PipelineConfig> {
    let cfg = match path {
        Some(p) => PipelineConfig::load(p).with_context(|| format!("reading {}", p.display()))?,
        None => PipelineConfig::default(),
    };
    Ok(cfg)
}

fn wav_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("listing {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("wav")))
        .collect();
    files.sort();
    if files.is_empty() {
        bail!("no .wav files in {}", dir.display());
    }
    Ok(files)
}

fn read_folder(dir: &Path, rate: f64) -> Result<Vec<NamedSignal>> {
    wav_files(dir)?
        .into_iter()
        .map(|p| {
            let signal = read_wav_at(&p, rate).with_context(|| format!("reading {}", p.display()))?;
            let name = p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            Ok(NamedSignal { name, signal })
        })
        .collect()
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Decompose {
            input,
            codebook_u,
            codebook_c,
            config,
            fixed_segmentation,
            noise_ref,
            out_dir,
        } => {
            let mut cfg = load_config(config.as_deref())?;
            cfg.codebook_u = codebook_u.or(cfg.codebook_u);
            cfg.codebook_c = codebook_c.or(cfg.codebook_c);
            if fixed_segmentation.is_some() {
                cfg.fixed_segmentation_ms = fixed_segmentation;
            }
            cfg.validate()?;
            let report = decompose_file(&input, &cfg, noise_ref.as_deref(), &out_dir)?;
            println!(
                "{} samples: {} voiced segments, {} stochastic segments, outputs in {}",
                report.samples,
                report.voiced_segments.len(),
                report.stochastic_segments.len(),
                out_dir.display()
            );
        }
        Command::Mix {
            clean,
            noise,
            isnr,
            out,
            offset,
            wrap,
        } => {
            let c = read_wav(&clean).with_context(|| format!("reading {}", clean.display()))?;
            let n = read_wav_at(&noise, c.sample_rate()).with_context(|| format!("reading {}", noise.display()))?;
            let m = mix_at_isnr(&c, &n, isnr, offset, wrap)?;
            let scale = write_wav(&out, m.mixture.samples(), c.sample_rate())?;
            if scale < 1.0 {
                warn!("mixture scaled by {scale} to avoid clipping");
            }
            println!("wrote {} at {isnr} dB iSNR", out.display());
        }
        Command::Evaluate {
            clean,
            noise,
            isnr,
            runs,
            codebook_u,
            codebook_c,
            config,
            out,
        } => {
            let mut cfg = load_config(config.as_deref())?;
            cfg.codebook_u = codebook_u.or(cfg.codebook_u);
            cfg.codebook_c = codebook_c.or(cfg.codebook_c);
            cfg.validate()?;
            if runs == 0 {
                bail!("--runs must be at least 1");
            }
            let (cb_u, cb_c) = load_codebooks(&cfg)?;
            let bank = shape_bank(&cb_u, &cb_c, &cfg)?;
            let clean = read_folder(&clean, cfg.sample_rate)?;
            let noise = read_folder(&noise, cfg.sample_rate)?;
            info!("{} clean files, {} noise files, iSNR {:?}", clean.len(), noise.len(), isnr);
            let rows = evaluate(&clean, &noise, &isnr, runs, &bank, &cfg)?;
            let f = File::create(&out).with_context(|| format!("creating {}", out.display()))?;
            write_results_csv(&rows, BufWriter::new(f))?;
            println!("wrote {} rows to {}", rows.len(), out.display());
        }
        Command::TrainCodebook {
            kind,
            size,
            order,
            input,
            config,
            seed,
            out,
        } => {
            let cfg = load_config(config.as_deref())?;
            cfg.validate()?;
            let signals: Vec<_> = read_folder(&input, cfg.sample_rate)?.into_iter().map(|s| s.signal).collect();
            let frames = codebook_training_frames(&signals, kind, &cfg)?;
            let order = order.unwrap_or(cfg.codebook_order);
            let outcome = train_codebook(&frames, order, size, kind, cfg.spectral_bins, seed.unwrap_or(cfg.seed))?;
            outcome.codebook.save(&out)?;
            let last = outcome.distortion_history.last().copied().unwrap_or(0.0);
            println!(
                "trained {size} {kind:?} entries of order {order} from {} frames (distortion {last:.3e}); wrote {}",
                frames.len(),
                out.display()
            );
        }
        Command::Defaults => print!("{}", PipelineConfig::default().to_toml_string()?),
    }
    Ok(())
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
