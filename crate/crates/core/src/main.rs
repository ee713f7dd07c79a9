use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use vnetseg::imageio::{
    convert_mha_to_nifti, read_case_image, read_dataset, write_case, write_case_image, write_nifti, NiftiDatatype,
    LabelMap, read_nifti,
};
use vnetseg::phantom::{make_dataset, PhantomSpec};
use vnetseg::preprocess::{preprocess_volume, resample_labels};
use vnetseg::trainer::{evaluate, load_checkpoint, parse_config, predict, save_checkpoint, train, TrainState};
use vnetseg::vnet::{format_table, receptive_field_table, VNetModel};
use vnetseg::{Error, Result};

#[derive(Parser)]
#[command(name = "vnetseg", version, about = "V-Net brain tumor segmentation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Convert a MetaImage (.mha) file to single-file NIfTI (.nii).
    Convert { input: PathBuf, output: PathBuf },
    /// Normalize, resize and smooth every case under a directory.
    Preprocess {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Cubic output extent in voxels.
        #[arg(long, default_value_t = 128)]
        size: usize,
        /// Gaussian sigma in voxels; 0 disables smoothing.
        #[arg(long, default_value_t = 1.0)]
        sigma: f64,
    },
    /// Write a synthetic phantom dataset.
    Phantom {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 6)]
        count: usize,
        #[arg(long, default_value_t = 32)]
        extent: usize,
        #[arg(long = "tumor-fraction", default_value_t = 0.02)]
        tumor_fraction: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 4)]
        modalities: usize,
        #[arg(long, default_value_t = 0.1)]
        noise: f64,
    },
    /// Train a model on a case directory.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// Flat key = value file with model and training settings.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Continue from this checkpoint instead of a fresh model.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Override the configured epoch count.
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Segment one case directory.
    Infer {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Dice per case and mean dice against the ground truth.
    Evaluate {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Print JSON records instead of a table.
        #[arg(long)]
        json: bool,
    },
    /// Receptive field of every stage.
    RfTable {
        #[arg(long)]
        json: bool,
        #[arg(long, default_value_t = 128)]
        extent: usize,
    },
}

fn case_dirs(root: &Path) -> Result<Vec<PathBuf>> {
    let mut dirs: Vec<PathBuf> = fs::read_dir(root)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    Ok(dirs)
}

fn to_json<T: serde::Serialize>(value: &T) -> Result<String> {
    serde_json::to_string_pretty(value).map_err(|e| Error::Config(e.to_string()))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Convert { input, output } => {
            let s = convert_mha_to_nifti(&input, &output)?;
            println!(
                "{} -> {}: {} voxels, {:?} -> {:?}, spacing {:?}",
                input.display(),
                output.display(),
                s.voxels,
                s.source_type,
                s.written_type,
                s.spacing
            );
        }
        Command::Preprocess { input, out, size, sigma } => {
            let sigma = (sigma > 0.0).then_some(sigma);
            let mut n = 0;
            for dir in case_dirs(&input)? {
                let Ok(image) = read_case_image(&dir) else { continue };
                let target = [size; 3];
                let dest = out.join(dir.file_name().expect("directory name"));
                write_case_image(&dest, &preprocess_volume(&image, target, sigma)?)?;
                let seg = dir.join("seg.nii");
                if seg.is_file() {
                    let labels = resample_labels(&LabelMap::from_volume(&read_nifti(&seg)?)?, target)?;
                    let spacing = [0, 1, 2].map(|a| image.spacing()[a] * image.extents()[a] as f64 / size as f64);
                    write_nifti(&labels.to_volume(spacing)?, NiftiDatatype::UInt8, &dest.join("seg.nii"))?;
                }
                n += 1;
            }
            if n == 0 {
                return Err(Error::Config(format!("no cases found under {}", input.display())));
            }
            println!("preprocessed {n} cases into {}", out.display());
        }
        Command::Phantom { out, count, extent, tumor_fraction, seed, modalities, noise } => {
            if count < 2 {
                return Err(Error::Config("count must be at least 2 (one training and one test case)".into()));
            }
            let spec = PhantomSpec { tumor_fraction_target: tumor_fraction, noise_sigma: noise, ..PhantomSpec::default() }
                .with_extent(extent)
                .with_modalities(modalities);
            let (train_set, test_set) = make_dataset(&spec, count - 1, 1, seed)?;
            for case in train_set.iter().chain(&test_set) {
                write_case(&out, case)?;
                println!("{}  foreground {:.4}", case.id, case.truth.foreground_fraction());
            }
        }
        Command::Train { data, config, out, resume, epochs } => {
            let text = match &config {
                Some(p) => fs::read_to_string(p)?,
                None => String::new(),
            };
            let (model_cfg, mut train_cfg) = parse_config(&text)?;
            let (mut model, mut state) = match &resume {
                Some(p) => {
                    let (m, _, s) = load_checkpoint(p)?;
                    (m, s)
                }
                None => {
                    let m = VNetModel::build(model_cfg, train_cfg.seed)?;
                    let s = TrainState::new(&m);
                    (m, s)
                }
            };
            if let Some(e) = epochs {
                train_cfg.epochs = e;
            }
            let cases = read_dataset(&data)?;
            eprintln!(
                "training {} parameters on {} cases for {} epochs",
                model.count_parameters(),
                cases.len(),
                train_cfg.epochs
            );
            let every = train_cfg.checkpoint_every;
            let cfg = train_cfg.clone();
            train(&mut model, &cases, &train_cfg, &mut state, |m, s| {
                let r = s.history.last().expect("epoch recorded");
                eprintln!("epoch {:>4}  loss {:.5}  dice {:.4}", r.epoch, r.loss, r.train_dice);
                if every > 0 && r.epoch % every == 0 {
                    save_checkpoint(&out, m, &cfg, s)?;
                }
                Ok(())
            })?;
            save_checkpoint(&out, &model, &train_cfg, &state)?;
            println!("saved {} at epoch {}", out.display(), state.epoch);
        }
        Command::Infer { ckpt, input, out } => {
            let (model, _, _) = load_checkpoint(&ckpt)?;
            let image = read_case_image(&input)?;
            let (_, labels) = predict(&model, &image)?;
            write_nifti(&labels.to_volume(image.spacing())?, NiftiDatatype::UInt8, &out)?;
            println!("{}: {} foreground voxels", out.display(), labels.foreground_count());
        }
        Command::Evaluate { ckpt, data, json } => {
            let (model, _, _) = load_checkpoint(&ckpt)?;
            let result = evaluate(&model, &read_dataset(&data)?)?;
            if json {
                println!("{}", to_json(&result)?);
            } else {
                print!("{}", result.to_table());
            }
        }
        Command::RfTable { json, extent } => {
            let rows = receptive_field_table(extent);
            if json {
                println!("{}", to_json(&rows)?);
            } else {
                print!("{}", format_table(&rows));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("vnetseg: {e}");
            ExitCode::FAILURE
        }
    }
}
