//! Command-line interface: dataset generation, training, evaluation,
//! flythrough rendering, and the ablation driver.

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::dataset::{build_dataset, BuildParams, MultiscaleDataset};
use crate::eval::{ablate, evaluate, render_flythrough, ABLATION_VARIANTS};
use crate::field::hashgrid::HashGridConfig;
use crate::pyramid::{EvalMode, LevelSelection, PyramidConfig};
use crate::scene::SceneKind;
use crate::train::{load_checkpoint, train, train_loop, TrainConfig};
use crate::Error;

#[derive(Parser)]
#[command(name = "mipfield", version, about = "Multiscale pyramid radiance fields")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Render a procedural scene into a multiscale posed-image dataset.
    GenerateData {
        #[arg(long, value_enum)]
        scene: SceneKind,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 40)]
        train_cams: usize,
        #[arg(long, default_value_t = 10)]
        test_cams: usize,
        /// Base (full-scale) image resolution; lower scales divide it.
        #[arg(long, default_value_t = 128)]
        resolution: u32,
        /// Jittered primary rays per pixel (a perfect square).
        #[arg(long, default_value_t = 64)]
        supersample: usize,
    },
    /// Train a pyramid field on a dataset.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Pyramid level count.
        #[arg(long, default_value_t = 8)]
        levels: usize,
        #[arg(long, value_enum, default_value = "default_interp")]
        mode: EvalMode,
        #[arg(long, value_enum, default_value = "projected_area")]
        level_selection: LevelSelection,
        /// Share one multi-resolution feature grid across levels (default).
        #[arg(long, conflicts_with = "separate_grids")]
        shared_grid: bool,
        /// Train a separate feature grid per pyramid level.
        #[arg(long)]
        separate_grids: bool,
        #[arg(long, default_value_t = 3000)]
        iterations: usize,
        #[arg(long, default_value_t = 8192)]
        batch_rays: usize,
        #[arg(long, default_value_t = 128)]
        samples_per_ray: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Resume from an existing checkpoint instead of initializing.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Evaluate a checkpoint against a dataset's test split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render an orbit flythrough from a checkpoint as numbered PNGs.
    Render {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 60)]
        frames: usize,
        #[arg(long, default_value_t = 256)]
        width: usize,
        #[arg(long, default_value_t = 256)]
        height: usize,
        #[arg(long, default_value_t = 1.6)]
        distance: f64,
    },
    /// Train and evaluate the diagnostics variant matrix.
    Ablate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 900)]
        iterations: usize,
        #[arg(long, default_value_t = 2048)]
        batch_rays: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Comma-separated variant names (default: the full diagnostics set).
        #[arg(long)]
        variants: Option<String>,
    },
}

pub fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::GenerateData {
            scene,
            out,
            seed,
            train_cams,
            test_cams,
            resolution,
            supersample,
        } => {
            let params = BuildParams {
                scene,
                n_train: train_cams,
                n_test: test_cams,
                base_resolution: resolution,
                supersample,
                seed,
            };
            let ds = build_dataset(&params, &out)?;
            println!(
                "wrote {} train and {} test images to {}",
                ds.manifest.train.len(),
                ds.manifest.test.len(),
                out.display()
            );
            Ok(())
        }
        Command::Train {
            data,
            out,
            levels,
            mode,
            level_selection,
            shared_grid: _,
            separate_grids,
            iterations,
            batch_rays,
            samples_per_ray,
            seed,
            resume,
        } => {
            let dataset = MultiscaleDataset::load(&data)?;
            if let Some(ckpt) = resume {
                let mut state = load_checkpoint::<f32>(&ckpt)?;
                state.config.iterations = iterations;
                let outcome = train_loop(&mut state, &dataset, &out)?;
                println!(
                    "resumed to iteration {} ({} steps); checkpoint at {}",
                    state.iteration,
                    outcome.losses.len(),
                    outcome.checkpoint_path.display()
                );
                return Ok(());
            }
            let grid = HashGridConfig::desk_default();
            let pyramid = PyramidConfig {
                levels,
                mode,
                level_selection,
                ..PyramidConfig::desk_default()
            };
            let config = TrainConfig {
                iterations,
                batch_rays,
                samples_per_ray,
                seed,
                ..TrainConfig::default()
            };
            let (state, outcome) = train::<f32>(&dataset, grid, pyramid, !separate_grids, config, &out)?;
            let final_loss = outcome.losses.last().copied().unwrap_or(f64::NAN);
            println!(
                "trained {} iterations in {:.1}s (final loss {:.3e}); checkpoint at {}",
                state.iteration,
                state.train_seconds,
                final_loss,
                outcome.checkpoint_path.display()
            );
            Ok(())
        }
        Command::Eval { checkpoint, data, out } => {
            let state = load_checkpoint::<f32>(&checkpoint)?;
            let dataset = MultiscaleDataset::load(&data)?;
            let report = evaluate(&state, &dataset, Some(&out))?;
            print!("{}", report.to_csv());
            Ok(())
        }
        Command::Render { checkpoint, out, frames, width, height, distance } => {
            let state = load_checkpoint::<f32>(&checkpoint)?;
            render_flythrough(&state, &out, frames, width, height, distance)?;
            println!("wrote {frames} frames to {}", out.display());
            Ok(())
        }
        Command::Ablate { data, out, iterations, batch_rays, seed, variants } => {
            let dataset = MultiscaleDataset::load(&data)?;
            let selected: Vec<_> = match variants {
                None => ABLATION_VARIANTS.to_vec(),
                Some(names) => {
                    let mut picked = Vec::new();
                    for name in names.split(',') {
                        let name = name.trim();
                        let v = ABLATION_VARIANTS
                            .iter()
                            .find(|v| v.name == name)
                            .ok_or_else(|| {
                                Error::Validation(format!("unknown ablation variant `{name}`"))
                            })?;
                        picked.push(*v);
                    }
                    picked
                }
            };
            let config = TrainConfig {
                iterations,
                batch_rays,
                seed,
                eval_every: 0,
                ..TrainConfig::default()
            };
            let rows = ablate::<f32>(
                &dataset,
                &selected,
                &config,
                HashGridConfig::desk_default(),
                PyramidConfig::desk_default(),
                &out,
            )?;
            for row in &rows {
                match &row.result {
                    Ok((report, secs)) => println!(
                        "{:<16} avg_error_2 {:.4}  psnr {:.2}  ({:.1}s)",
                        row.variant.name,
                        report.aggregate.avg_error,
                        report.aggregate.psnr,
                        secs
                    ),
                    Err(e) => println!("{:<16} FAILED: {e}", row.variant.name),
                }
            }
            Ok(())
        }
    }
}
