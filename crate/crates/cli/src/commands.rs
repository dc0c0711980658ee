use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use scrnet_core::config::{parse_config, RunConfig};
use scrnet_core::degrade::{derive_seed, scs_params, simulate_cataract, SimParams};
use scrnet_core::imaging::{
    extract_hfc, load_image, save_image, visualize_hfc, write_hfc_raw, Image, HFC_RADIUS, HFC_SIGMA,
};
use scrnet_core::metrics::evaluate;
use scrnet_core::network::Model;
use scrnet_core::parallel;
use scrnet_core::training::{epoch_means, list_images, restore_image, train_dir, write_loss_log};

#[derive(Parser, Debug)]
#[command(name = "scrnet", version, about = "Cataract fundus synthesis and restoration")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write K synthetic cataract versions of every clear image.
    Synthesize {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Cataracts per image (defaults to the configured K).
        #[arg(long)]
        k: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Use raw (unnormalized) distances for the transmission panel.
        #[arg(long)]
        raw_panel: bool,
    },
    /// Extract high-frequency components.
    Hfc {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = HFC_RADIUS)]
        radius: usize,
        #[arg(long, default_value_t = HFC_SIGMA)]
        sigma: f64,
    },
    /// Train on a directory of clear images.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        log: Option<PathBuf>,
        /// Overrides the configured seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Restore every image of a directory with a trained checkpoint.
    Restore {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Compare restored images with their clear references.
    Evaluate {
        #[arg(long)]
        restored: PathBuf,
        #[arg(long)]
        reference: PathBuf,
        #[arg(long)]
        report: PathBuf,
    },
}

pub fn run(cli: Cli) -> Result<ExitCode> {
    parallel::worker_threads()?;
    match cli.command {
        Command::Synthesize {
            input,
            output,
            k,
            seed,
            config,
            raw_panel,
        } => synthesize(&input, &output, k, seed, config.as_deref(), raw_panel),
        Command::Hfc {
            input,
            output,
            radius,
            sigma,
        } => hfc(&input, &output, radius, sigma),
        Command::Train {
            data,
            config,
            out,
            log,
            seed,
        } => train(&data, &config, &out, log.as_deref(), seed),
        Command::Restore {
            checkpoint,
            input,
            output,
        } => restore(&checkpoint, &input, &output),
        Command::Evaluate {
            restored,
            reference,
            report,
        } => eval(&restored, &reference, &report),
    }
    .map(|()| ExitCode::SUCCESS)
    .or_else(|e| match e.downcast::<Skipped>() {
        Ok(s) => {
            eprintln!("{s}");
            Ok(ExitCode::FAILURE)
        }
        Err(e) => Err(e),
    })
}

/// Evaluation finished but some pairs could not be compared.
#[derive(Debug)]
struct Skipped(usize);

impl std::fmt::Display for Skipped {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} pair(s) skipped, see the report", self.0)
    }
}

impl std::error::Error for Skipped {}

fn stem(path: &Path) -> String {
    path.file_stem().and_then(|s| s.to_str()).unwrap_or("image").to_string()
}

/// Loads every image of `dir`, failing on an empty directory.
fn load_all(dir: &Path) -> Result<Vec<(String, Image)>> {
    if !dir.is_dir() {
        bail!("{} is not a directory", dir.display());
    }
    let paths = list_images(dir)?;
    if paths.is_empty() {
        bail!("{} contains no images", dir.display());
    }
    paths
        .iter()
        .map(|p| Ok((stem(p), load_image(p)?)))
        .collect()
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))
}

fn synthesize(
    input: &Path,
    output: &Path,
    k: Option<usize>,
    seed: u64,
    config: Option<&Path>,
    raw_panel: bool,
) -> Result<()> {
    let cfg = match config {
        Some(path) => parse_config(path)?,
        None => RunConfig::desk(),
    };
    let mut ranges = cfg.ranges;
    ranges.raw_panel |= raw_panel;
    let k = k.unwrap_or(cfg.train.k);
    if k == 0 {
        bail!("--k must be at least 1");
    }
    let images = load_all(input)?;
    let params: Vec<Vec<SimParams>> = (0..images.len())
        .map(|i| scs_params(k, derive_seed(seed, i as u64), &ranges))
        .collect::<scrnet_core::Result<_>>()?;

    create_dir(output)?;
    let jobs: Vec<usize> = (0..images.len()).collect();
    parallel::map(&jobs, |_, &i| {
        let (name, clear) = &images[i];
        let mut csv = format!("{}\n", SimParams::CSV_HEADER);
        for (m, p) in params[i].iter().enumerate() {
            let cataract = simulate_cataract(clear, p)?;
            save_image(&cataract, output.join(format!("{name}_cataract_{m:02}.png")))?;
            csv.push_str(&p.csv_row(m));
            csv.push('\n');
        }
        let path = output.join(format!("{name}_params.csv"));
        fs::write(&path, csv).map_err(|e| scrnet_core::Error::Io { path, cause: e })
    })?;
    println!("wrote {k} cataract image(s) for each of {} input(s)", images.len());
    Ok(())
}

fn hfc(input: &Path, output: &Path, radius: usize, sigma: f64) -> Result<()> {
    // validates the filter before touching the output
    scrnet_core::imaging::gaussian_kernel(radius, sigma)?;
    let images = load_all(input)?;
    create_dir(output)?;
    parallel::map(&images, |_, (name, img)| {
        let h = extract_hfc(img, radius, sigma)?;
        save_image(&visualize_hfc(&h), output.join(format!("{name}_hfc.png")))?;
        write_hfc_raw(&h, output.join(format!("{name}_hfc.f32")))
    })?;
    let meta = output.join("hfc_params.txt");
    fs::write(&meta, format!("radius = {radius}\nsigma = {sigma}\n"))
        .with_context(|| format!("cannot write {}", meta.display()))?;
    println!("wrote HFCs of {} image(s) (radius {radius}, sigma {sigma})", images.len());
    Ok(())
}

fn train(data: &Path, config: &Path, out: &Path, log: Option<&Path>, seed: Option<u64>) -> Result<()> {
    let mut cfg = parse_config(config)?;
    if let Some(seed) = seed {
        cfg.train.seed = seed;
    }
    if !data.is_dir() {
        bail!("{} is not a directory", data.display());
    }
    let epochs = cfg.train.total_epochs();
    let mut last_epoch = None;
    let outcome = train_dir(data, &cfg.train, &cfg.model, &cfg.ranges, |r| {
        if last_epoch != Some(r.epoch) {
            last_epoch = Some(r.epoch);
            eprintln!("epoch {}/{epochs} lr {:.6} loss {:.5}", r.epoch + 1, r.lr, r.total);
        }
    })?;
    outcome.model.save(out)?;
    if let Some(log) = log {
        write_loss_log(log, &outcome.log)?;
    }
    let means = epoch_means(&outcome.log);
    if let (Some(first), Some(last)) = (means.first(), means.last()) {
        println!("mean loss {:.5} (epoch 1) -> {:.5} (epoch {})", first.1, last.1, last.0 + 1);
    }
    println!("checkpoint written to {}", out.display());
    Ok(())
}

fn restore(checkpoint: &Path, input: &Path, output: &Path) -> Result<()> {
    let model = Model::<f32>::load(checkpoint)?;
    let images = load_all(input)?;
    create_dir(output)?;
    parallel::map(&images, |_, (name, img)| {
        let restored = restore_image(&model, img)?;
        save_image(&restored, output.join(format!("{name}_restored.png")))
    })?;
    println!("restored {} image(s)", images.len());
    Ok(())
}

fn eval(restored: &Path, reference: &Path, report: &Path) -> Result<()> {
    for dir in [restored, reference] {
        if !dir.is_dir() {
            bail!("{} is not a directory", dir.display());
        }
    }
    let r = evaluate(restored, reference, report)?;
    println!(
        "{} pair(s): mean PSNR {:.3} dB, mean SSIM {:.4}",
        r.rows.len(),
        r.mean_psnr,
        r.mean_ssim
    );
    if !r.skipped.is_empty() {
        return Err(Skipped(r.skipped.len()).into());
    }
    Ok(())
}
