//! Experiment execution and artifact layout.
//!
//! Every run directory holds `config.json`, `metrics.jsonl`,
//! `checkpoint.json`, `summary.json` and an SVG figure; ring runs add
//! `frames.csv`.

use std::path::{Path, PathBuf};

use oplas_core::checks::{gradient_audit, rotation_audit, GradReport, RotationReport};
use oplas_core::fsutil::write_atomic;
use oplas_core::mixing::{
    evaluate_mixing, latent_subtract_eval, mixing_point_clouds, nonlinearity_gap, MixingTrainer,
};
use oplas_core::nn::{AdamConfig, AdamState, NamedArrays, Parameters};
use oplas_core::rng::Rng;
use oplas_core::stargate::{circle_of_fifths_experiment, StargateTrainer};
use oplas_core::trace::Frame;
use oplas_core::viz::{Marker, Panel};
use oplas_core::Array;

use crate::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use crate::config::{Experiment, ExperimentConfig};
use crate::error::{CliError, CliResult};
use crate::output::{emit_frames, emit_metrics, emit_plot, layer, planar, Summary};

pub const GRAD_TOL: f64 = 1e-5;
pub const ROTATION_TOL: f64 = 1e-9;
pub const ANGLE_TOL: f64 = 1e-8;

/// Writes the resolved config and checks a resume checkpoint against it.
fn prepare(
    config: &ExperimentConfig,
    out: &Path,
    resume: Option<&Path>,
) -> CliResult<Option<Checkpoint>> {
    write_atomic(&out.join("config.json"), config.to_json().as_bytes())?;
    let Some(path) = resume else {
        return Ok(None);
    };
    let ck = load_checkpoint(path)?;
    let comparable = |c: &ExperimentConfig| ExperimentConfig {
        steps: 0,
        output_dir: None,
        ..c.clone()
    };
    if comparable(&ck.config) != comparable(config) {
        return Err(CliError::Config(format!(
            "checkpoint {} was written for a different config (only steps and output_dir may change)",
            path.display()
        )));
    }
    if ck.step > config.steps {
        return Err(CliError::Config(format!(
            "steps: checkpoint is at step {}, past the requested {}",
            ck.step, config.steps
        )));
    }
    Ok(Some(ck))
}

fn finish(out: &Path, summary: &Summary) -> CliResult<()> {
    write_atomic(&out.join("summary.json"), summary.to_json().as_bytes())?;
    Ok(())
}

pub fn run_mixing(
    config: &ExperimentConfig,
    out: &Path,
    resume: Option<&Path>,
) -> CliResult<Summary> {
    let resumed = prepare(config, out, resume)?;
    let core = config.mixing_config();
    let mut trainer = match &resumed {
        None => MixingTrainer::new(core.clone())?,
        Some(ck) => MixingTrainer::restore(
            core.clone(),
            &ck.params()?,
            ck.adam()?,
            ck.step,
            ck.rng_state(),
        )?,
    };
    trainer.run_until(core.steps)?;

    emit_metrics(&out.join("metrics.jsonl"), &trainer.trace.records)?;
    save_checkpoint(
        &out.join("checkpoint.json"),
        &Checkpoint::new(
            config,
            trainer.step,
            trainer.rng,
            &trainer.params(),
            &trainer.adam,
        ),
    )?;

    let holdout = core.holdout_set()?;
    let train_eval = evaluate_mixing(&trainer.model, &trainer.data)?;
    let held_eval = evaluate_mixing(&trainer.model, &holdout)?;
    let mut s = Summary::default();
    s.num(
        "nonlinearity_gap",
        nonlinearity_gap(&core.encoder, &trainer.data),
    )?;
    s.num("train_mix_relative", train_eval.mix_relative)?;
    s.num(
        "train_reconstruction_relative",
        train_eval.reconstruction_relative,
    )?;
    s.num("holdout_mix_relative", held_eval.mix_relative)?;
    s.num(
        "holdout_reconstruction_relative",
        held_eval.reconstruction_relative,
    )?;
    s.num("holdout_total", held_eval.report.total)?;
    s.int("steps", trainer.step);
    let has = |n: &str| holdout.class_index(n).is_some();
    if has("vocal") && has("bass") && has("drums") {
        let sub = latent_subtract_eval(&trainer.model, &holdout)?;
        s.num("subtraction_cosine", sub.cosine)?;
        s.num("subtraction_rel_distance", sub.rel_distance)?;
    }

    let clouds = mixing_point_clouds(&trainer.model, &holdout)?;
    let z_basis = Array::vstack(
        &clouds
            .iter()
            .filter(|(k, _)| k.starts_with("z/"))
            .map(|(_, v)| v)
            .collect::<Vec<_>>(),
    )?;
    let mut panels = Vec::new();
    for (space, title) in [
        ("x", "source stems and mixes"),
        ("y", "encoded"),
        ("z", "projected"),
    ] {
        let mut p = Panel {
            title: title.to_string(),
            layers: Vec::new(),
        };
        for (c, name) in holdout.class_names.iter().enumerate() {
            let pts = &clouds[&format!("{space}/{name}")];
            let pts = if space == "z" {
                planar(pts, &z_basis)?
            } else {
                pts.clone()
            };
            p.layers.push(layer(pts, name, c, Marker::Circle));
        }
        let mix = &clouds[&format!("{space}/mix")];
        let mix = if space == "z" {
            planar(mix, &z_basis)?
        } else {
            mix.clone()
        };
        p.layers.push(layer(mix, "mix", 4, Marker::Square));
        if space == "z" {
            p.layers.push(layer(
                planar(&clouds["z/stem_sum"], &z_basis)?,
                "sum of stems",
                5,
                Marker::Cross,
            ));
        }
        panels.push(p);
    }
    panels.push(Panel {
        title: "mix reconstruction".into(),
        layers: vec![
            layer(clouds["y/mix"].clone(), "encoded mix", 4, Marker::Square),
            layer(
                clouds["y_recon/mix"].clone(),
                "reconstructed",
                5,
                Marker::Cross,
            ),
        ],
    });
    emit_plot(&out.join("mixing.svg"), &panels, 2)?;
    finish(out, &s)?;
    Ok(s)
}

/// Up to `count` frames spread evenly from first to last.
fn spread_frames(frames: &[Frame], count: usize) -> Vec<&Frame> {
    if frames.len() <= count {
        return frames.iter().collect();
    }
    let last = frames.len() - 1;
    let mut picked: Vec<usize> = (0..count).map(|k| k * last / (count - 1)).collect();
    picked.dedup();
    picked.into_iter().map(|i| &frames[i]).collect()
}

fn ring_panels(frames: &[Frame], z: &Array, tz: &Array, title: &str) -> CliResult<Vec<Panel>> {
    let mut panels = Vec::new();
    for f in spread_frames(frames, 6) {
        panels.push(Panel {
            title: format!("S-{}", f.step),
            layers: vec![layer(planar(&f.points, &f.points)?, "z", 0, Marker::Circle)],
        });
    }
    panels.push(Panel {
        title: title.to_string(),
        layers: vec![
            layer(planar(z, z)?, "z", 0, Marker::Circle),
            layer(planar(tz, z)?, "T(z)", 3, Marker::Cross),
        ],
    });
    Ok(panels)
}

pub fn run_stargate(
    config: &ExperimentConfig,
    out: &Path,
    resume: Option<&Path>,
) -> CliResult<Summary> {
    let resumed = prepare(config, out, resume)?;
    let core = config.stargate_config();
    let mut trainer = match &resumed {
        None => StargateTrainer::new(core.clone())?,
        Some(ck) => StargateTrainer::restore(
            core.clone(),
            &ck.params()?,
            ck.adam()?,
            ck.step,
            ck.rng_state(),
        )?,
    };
    trainer.run_until(core.steps)?;

    emit_metrics(&out.join("metrics.jsonl"), &trainer.trace.records)?;
    emit_frames(&out.join("frames.csv"), &trainer.trace.frames)?;
    save_checkpoint(
        &out.join("checkpoint.json"),
        &Checkpoint::new(
            config,
            trainer.step,
            trainer.rng,
            &trainer.params(),
            &trainer.adam,
        ),
    )?;

    let q = trainer.quality()?;
    let loss = oplas_core::stargate::stargate_loss(&trainer.model, &trainer.task, core.var_weight)?;
    let mut s = Summary::default();
    for (k, v) in q.fields() {
        s.num(k, v)?;
    }
    s.num("successor_loss", loss.successor_loss)?;
    s.num("variance_penalty", loss.variance_penalty)?;
    s.num("total", loss.total)?;
    s.int("steps", trainer.step);

    let z = trainer.model.latents(&trainer.task)?;
    let tz = trainer.model.transform.apply(&z)?;
    emit_plot(
        &out.join("ring.svg"),
        &ring_panels(&trainer.trace.frames, &z, &tz, "final z and T(z)")?,
        4,
    )?;
    finish(out, &s)?;
    Ok(s)
}

pub fn run_co5(config: &ExperimentConfig, out: &Path, resume: Option<&Path>) -> CliResult<Summary> {
    if resume.is_some() {
        return Err(CliError::Config(
            "co5 runs cannot be resumed; rerun from scratch".into(),
        ));
    }
    prepare(config, out, None)?;
    let core = config.fifths_config();
    let run = circle_of_fifths_experiment(&core)?;

    emit_metrics(&out.join("metrics.jsonl"), &run.ring.trace.records)?;
    emit_metrics(
        &out.join("relabel_metrics.jsonl"),
        &run.relabel.trace.records,
    )?;
    emit_frames(&out.join("frames.csv"), &run.ring.trace.frames)?;

    // Stage-1 state plus the fifths transform under its own prefix.
    let mut params: NamedArrays = run
        .ring
        .model
        .named("")
        .into_iter()
        .map(|(k, v)| (k, v.clone()))
        .collect();
    params.extend(
        run.relabel
            .transform
            .named("T5")
            .into_iter()
            .map(|(k, v)| (k, v.clone())),
    );
    let adam = AdamState::new(AdamConfig {
        lr: core.ring.lr,
        ..Default::default()
    });
    let rng = Rng::seeded(core.ring.seed).state();
    save_checkpoint(
        &out.join("checkpoint.json"),
        &Checkpoint::new(config, core.ring.steps, rng, &params, &adam),
    )?;

    let q = run.ring.quality;
    let max_step = run.max_step_error()?;
    let max_return = run.return_errors(12)?.into_iter().fold(0.0, f64::max);
    let bar = 0.01 * q.ring_radius * q.ring_radius;
    let mut s = Summary::default();
    for (k, v) in q.fields() {
        s.num(&format!("stage1_{k}"), v)?;
    }
    s.num("fifths_successor_loss", run.relabel.successor_loss)?;
    s.num("fifths_successor_loss_bar", bar)?;
    s.num("fifths_max_step_error", max_step)?;
    s.num("fifths_max_return_error", max_return)?;
    s.flag("fifths_cyclic", max_return <= 12.0 * max_step);

    let t1z = run.ring.model.transform.apply(&run.latents)?;
    let t5z = run.relabel.transform.forward(&run.latents)?;
    let mut panels = ring_panels(
        &run.ring.trace.frames,
        &run.latents,
        &t1z,
        "chromatic ring: z and T(z)",
    )?;
    panels.push(Panel {
        title: "circle of fifths: z and T5(z)".into(),
        layers: vec![
            layer(planar(&run.latents, &run.latents)?, "z", 0, Marker::Circle),
            layer(planar(&t5z, &run.latents)?, "T5(z)", 2, Marker::Triangle),
        ],
    });
    emit_plot(&out.join("co5.svg"), &panels, 4)?;
    finish(out, &s)?;
    Ok(s)
}

pub fn run_experiment(
    config: &ExperimentConfig,
    out: &Path,
    resume: Option<&Path>,
) -> CliResult<Summary> {
    std::fs::create_dir_all(out)?;
    match config.experiment {
        Experiment::Mixing => run_mixing(config, out, resume),
        Experiment::Stargate => run_stargate(config, out, resume),
        Experiment::Co5 => run_co5(config, out, resume),
    }
}

pub fn default_out_dir(experiment: Experiment) -> PathBuf {
    let root = std::env::var_os("OPLAS_OUT").map_or_else(|| PathBuf::from("out"), PathBuf::from);
    root.join(experiment.name())
}

pub fn grad_check_report(seed: u64) -> CliResult<(Vec<GradReport>, f64)> {
    let reports = gradient_audit(20, seed, 1e-6)?;
    let worst = reports.iter().map(|r| r.max_rel_err).fold(0.0, f64::max);
    Ok((reports, worst))
}

pub fn rotation_check_report(seed: u64) -> CliResult<(Vec<RotationReport>, bool)> {
    let reports = rotation_audit(&[2, 3, 8, 64], 100, seed)?;
    let ok = reports.iter().all(|r| {
        r.orthogonality < ROTATION_TOL
            && r.determinant < ROTATION_TOL
            && r.complement < ROTATION_TOL
            && r.angle < ANGLE_TOL
    });
    Ok((reports, ok))
}
