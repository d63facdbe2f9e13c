use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use super::{train_step, Adam, TrainConfig};
use crate::error::{Error, Result};
use crate::fields::{Checkpoint, SceneModel};
use crate::losses::LossParts;
use crate::scene_io::SceneBundle;

pub const LOSS_CSV_HEADER: &str = "step,L_color,L_prior_D,L_prior_N,L_smooth_D,L_consist_N,L_Eik,total";

#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub model: SceneModel<f32>,
    /// Number of completed updates.
    pub steps: u64,
    pub last_parts: Option<LossParts>,
    pub last_total: Option<f64>,
    pub checkpoint: PathBuf,
}

fn checkpoint_dir(run_dir: &Path) -> PathBuf {
    run_dir.join("checkpoints")
}

fn checkpoint_files(run_dir: &Path) -> Result<Vec<(u64, PathBuf)>> {
    let dir = checkpoint_dir(run_dir);
    if !dir.exists() {
        return Ok(Vec::new());
    }
    let mut out = Vec::new();
    for entry in std::fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))? {
        let path = entry.map_err(|e| Error::io(&dir, e))?.path();
        let step = path
            .file_name()
            .and_then(|n| n.to_str())
            .and_then(|n| n.strip_prefix("step_"))
            .and_then(|n| n.strip_suffix(".ckpt"))
            .and_then(|n| n.parse::<u64>().ok());
        if let Some(step) = step {
            out.push((step, path));
        }
    }
    out.sort();
    Ok(out)
}

/// Most recent checkpoint of a run directory.
pub fn latest_checkpoint(run_dir: &Path) -> Result<Option<PathBuf>> {
    Ok(checkpoint_files(run_dir)?.pop().map(|p| p.1))
}

fn csv_row(step: u64, parts: &LossParts, total: f64) -> String {
    let mut row = step.to_string();
    for (_, v) in parts.named() {
        row.push(',');
        row.push_str(&v.to_string());
    }
    row.push(',');
    row.push_str(&total.to_string());
    row
}

/// Keeps the header and rows of steps before `step`.
fn truncate_csv(path: &Path, step: u64) -> Result<()> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut kept = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let keep = match line.split(',').next().and_then(|s| s.parse::<u64>().ok()) {
            Some(s) => s < step,
            None => line == LOSS_CSV_HEADER,
        };
        if keep {
            kept.push(line);
        }
    }
    let mut text = kept.join("\n");
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Runs (or resumes) training into `run_dir`: `config.toml`, `loss.csv`
/// and `checkpoints/step_NNNNNNN.ckpt`, of which the newest
/// `keep_checkpoints` are retained. `stop_after` ends the run early after
/// that many completed steps, as if interrupted.
pub fn fit(
    scene: &SceneBundle,
    config: &TrainConfig,
    run_dir: &Path,
    resume: bool,
    stop_after: Option<u64>,
) -> Result<FitOutcome> {
    config.validate()?;
    let ckpt_dir = checkpoint_dir(run_dir);
    std::fs::create_dir_all(&ckpt_dir).map_err(|e| Error::io(&ckpt_dir, e))?;
    let config_path = run_dir.join("config.toml");
    std::fs::write(&config_path, config.to_toml()).map_err(|e| Error::io(&config_path, e))?;
    let csv_path = run_dir.join("loss.csv");

    let latest = if resume { latest_checkpoint(run_dir)? } else { None };
    let (mut model, mut opt, start) = match latest {
        Some(path) => {
            let ckpt = Checkpoint::load(&path)?;
            if ckpt.model.config() != config.model {
                return Err(Error::Checkpoint(format!(
                    "{} was written with a different model configuration",
                    path.display()
                )));
            }
            let mut opt = Adam::new(config.adam.clone(), ckpt.model.num_params());
            opt.state = ckpt
                .optimizer
                .ok_or_else(|| Error::Checkpoint(format!("{} has no optimizer state", path.display())))?;
            truncate_csv(&csv_path, ckpt.step)?;
            log::info!("resuming from {} at step {}", path.display(), ckpt.step);
            (ckpt.model, opt, ckpt.step)
        }
        None => {
            let model = SceneModel::<f32>::init(&config.model, config.seed);
            let opt = Adam::new(config.adam.clone(), model.num_params());
            std::fs::write(&csv_path, format!("{LOSS_CSV_HEADER}\n")).map_err(|e| Error::io(&csv_path, e))?;
            (model, opt, 0)
        }
    };
    let file = std::fs::OpenOptions::new()
        .append(true)
        .open(&csv_path)
        .map_err(|e| Error::io(&csv_path, e))?;
    let mut csv = BufWriter::new(file);
    let extra = serde_json::json!({
        "seed": config.seed,
        "t_opt": [scene.t_opt.x, scene.t_opt.y, scene.t_opt.z],
        "s_scale": scene.s_scale,
        "cube_half_extent": scene.cube_half_extent,
    });

    let end = stop_after.map_or(config.iterations, |s| s.min(config.iterations));
    let mut last = None;
    let mut checkpoint = latest_checkpoint(run_dir)?.unwrap_or_default();
    let started = std::time::Instant::now();
    for step in start..end {
        let out = train_step(&mut model, &mut opt, scene, config, step)?;
        writeln!(csv, "{}", csv_row(step, &out.parts, out.total)).map_err(|e| Error::io(&csv_path, e))?;
        if (step + 1) % 100 == 0 {
            log::info!(
                "step {}/{} loss {:.5} color {:.5} s {:.1} ({:.1}s)",
                step + 1,
                config.iterations,
                out.total,
                out.parts.color,
                model.geometry.sharpness(),
                started.elapsed().as_secs_f64()
            );
        }
        last = Some((out.parts, out.total));
        let done = step + 1;
        if done % config.checkpoint_every == 0 || done == config.iterations || done == end {
            csv.flush().map_err(|e| Error::io(&csv_path, e))?;
            let path = ckpt_dir.join(format!("step_{done:07}.ckpt"));
            Checkpoint {
                step: done,
                model: model.clone(),
                optimizer: Some(opt.state.clone()),
                extra: extra.clone(),
            }
            .save(&path)?;
            let files = checkpoint_files(run_dir)?;
            let excess = files.len().saturating_sub(config.keep_checkpoints);
            for (_, old) in files.into_iter().take(excess) {
                std::fs::remove_file(&old).map_err(|e| Error::io(&old, e))?;
            }
            checkpoint = path;
        }
    }
    csv.flush().map_err(|e| Error::io(&csv_path, e))?;
    Ok(FitOutcome {
        model,
        steps: end.max(start),
        last_parts: last.map(|l| l.0),
        last_total: last.map(|l| l.1),
        checkpoint,
    })
}
