use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use lgt_autodiff::{Checkpoint, GradCheckOptions};
use lgt_core::lane_graph::{normalize_scenario, parse_scenario, Scenario};
use lgt_core::metrics::{evaluate_model, EvalResult};
use lgt_core::model::{prepare_scene, Model, ModelConfig, PredictionSet, SceneInputs};
use lgt_core::presets::{tiny_config, tiny_scene};
use lgt_core::report::{prediction_csv, svg_plot};
use lgt_core::synth::{emit_dataset, load_dataset, sha256_hex, MANIFEST_FILE};
use lgt_core::topology::build_topology;
use lgt_core::training::{model_gradient_check, EpochReport, Trainer};
use log::{info, warn};
use serde::Serialize;

use crate::config::RunConfig;
use crate::failure::{write_file, Failure};

pub fn generate(cfg: &RunConfig, out: &Path) -> Result<(), Failure> {
    let manifest = emit_dataset(cfg.dataset.count, &cfg.generator, out)?;
    info!("wrote {} scenarios and {}", manifest.files.len(), out.join(MANIFEST_FILE).display());
    Ok(())
}

pub fn matrices(cfg: &RunConfig, scenario: &Path, out: &Path) -> Result<(), Failure> {
    let scene = parse_scenario(scenario, &cfg.model.shape())?;
    build_topology(&scene, &cfg.model.connection_types)?.save(out)?;
    info!("wrote {}", out.display());
    Ok(())
}

pub fn gradcheck(cfg: &RunConfig, tolerance: f64, out: &Path) -> Result<(), Failure> {
    let model_cfg = tiny_config();
    let model = Model::new(model_cfg.clone(), cfg.seed)?;
    let inputs = prepare_scene(&tiny_scene(cfg.seed, &model_cfg), &model_cfg)?;
    let opts = GradCheckOptions {
        tolerance,
        ..GradCheckOptions::default()
    };
    let reports = model_gradient_check(&model, &inputs, &cfg.loss, opts)?;
    let mut csv = String::from("parameter,max_rel_error,max_abs_error,passed\n");
    for (name, r) in &reports {
        let _ = writeln!(csv, "{name},{:e},{:e},{}", r.max_rel_error, r.max_abs_error, r.passed);
    }
    let path = out.join("gradcheck.csv");
    write_file(&path, csv)?;
    let failed: Vec<&str> = reports.iter().filter(|(_, r)| !r.passed).map(|(n, _)| n.as_str()).collect();
    info!("checked {} parameter tensors, report in {}", reports.len(), path.display());
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::check(format!(
            "{} of {} parameter tensors exceed tolerance {tolerance:e}:\n  {}",
            failed.len(),
            reports.len(),
            failed.join("\n  ")
        )))
    }
}

fn load_inputs(dir: &Path, model: &ModelConfig) -> Result<Vec<(String, SceneInputs)>, Failure> {
    if !dir.is_dir() {
        return Err(Failure::config(format!("data directory not found: {}", dir.display())));
    }
    let (manifest, scenes) = load_dataset(dir, &model.shape())?;
    manifest
        .files
        .iter()
        .zip(&scenes)
        .map(|(f, s)| {
            let id = f.file.trim_end_matches(".json").to_string();
            Ok((id, prepare_scene(s, model)?))
        })
        .collect()
}

fn model_from(cfg: &RunConfig, checkpoint: Option<&Path>) -> Result<(Model, Option<String>), Failure> {
    let mut model = Model::new(cfg.model.clone(), cfg.seed)?;
    let Some(path) = checkpoint else {
        return Ok((model, None));
    };
    if !path.is_file() {
        return Err(Failure::config(format!("checkpoint not found: {}", path.display())));
    }
    Checkpoint::load(path)?.apply_to(&mut model.params, path)?;
    let bytes = std::fs::read(path).map_err(|e| Failure::data(format!("{}: {e}", path.display())))?;
    Ok((model, Some(sha256_hex(&bytes))))
}

#[derive(Serialize)]
struct Summary {
    min_ade: f64,
    min_fde: f64,
    b_min_fde: f64,
    miss_rate: f64,
}

impl From<&EvalResult> for Summary {
    fn from(r: &EvalResult) -> Self {
        Self {
            min_ade: r.min_ade,
            min_fde: r.min_fde,
            b_min_fde: r.b_min_fde,
            miss_rate: r.miss_rate,
        }
    }
}

#[derive(Serialize)]
struct RunManifest<'a> {
    command: &'static str,
    seed: u64,
    config_hash: String,
    config: &'a RunConfig,
    data_dir: String,
    dataset_manifest_sha256: String,
    schedule: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    parent_checkpoint_sha256: Option<String>,
    checkpoint: String,
    checkpoint_sha256: String,
    steps: usize,
    epochs: Vec<EpochReport>,
    final_train_metrics: Summary,
}

fn loss_curve_csv(reports: &[EpochReport]) -> String {
    let mut s = String::from("epoch,steps,lr,total,reg,cls,goal,wall_seconds\n");
    for r in reports {
        let l = &r.loss;
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{:.3}",
            r.epoch, r.steps, r.lr, l.total, l.reg, l.cls, l.goal, r.wall_seconds
        );
    }
    s
}

pub fn train(cfg: &RunConfig, out: &Path) -> Result<(), Failure> {
    let data_dir = cfg.data_dir()?;
    let data = load_inputs(&data_dir, &cfg.model)?;
    let (model, parent) = model_from(cfg, cfg.paths.checkpoint.as_deref())?;
    let inputs: Vec<SceneInputs> = data.iter().map(|(_, s)| s.clone()).collect();
    let mut trainer = Trainer::new(model, cfg.train.clone(), cfg.loss.clone());
    std::fs::create_dir_all(out).map_err(|e| Failure::data(format!("{}: {e}", out.display())))?;
    let every = cfg.train.checkpoint_every;
    let seed = cfg.seed;
    let reports = trainer.fit(&inputs, |t, r| {
        info!(
            "epoch {:>3} step {:>5} lr {:.1e} loss {:.4} (reg {:.4} cls {:.4} goal {:.4}) {:.1}s",
            r.epoch, r.steps, r.lr, r.loss.total, r.loss.reg, r.loss.cls, r.loss.goal, r.wall_seconds
        );
        if every.is_some_and(|n| n > 0 && (r.epoch + 1) % n == 0) {
            let path = out.join(format!("checkpoint_epoch{:04}.lgtp", r.epoch + 1));
            Checkpoint::from_store(&t.model.params, seed).save(&path)?;
        }
        Ok(())
    })?;

    let ckpt_path = out.join("checkpoint.lgtp");
    let ckpt = Checkpoint::from_store(&trainer.model.params, cfg.seed);
    ckpt.save(&ckpt_path)?;
    let (eval, _) = evaluate_model(&trainer.model, &data)?;
    write_file(&out.join("loss_curve.csv"), loss_curve_csv(&reports))?;
    let dataset_bytes = std::fs::read(data_dir.join(MANIFEST_FILE)).map_err(|e| Failure::data(e.to_string()))?;
    let schedule = cfg.train.schedule();
    let manifest = RunManifest {
        command: "train",
        seed: cfg.seed,
        config_hash: cfg.hash(),
        config: cfg,
        data_dir: data_dir.display().to_string(),
        dataset_manifest_sha256: sha256_hex(&dataset_bytes),
        schedule: (0..cfg.train.epochs).map(|e| schedule.at(e)).collect(),
        parent_checkpoint_sha256: parent,
        checkpoint: ckpt_path.display().to_string(),
        checkpoint_sha256: sha256_hex(&ckpt.to_bytes()),
        steps: trainer.steps,
        epochs: reports,
        final_train_metrics: Summary::from(&eval),
    };
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    write_file(&out.join("run_manifest.json"), text + "\n")?;
    info!(
        "trained {} steps; train minADE {:.3} minFDE {:.3} b-minFDE {:.3} MR {:.3}",
        trainer.steps, eval.min_ade, eval.min_fde, eval.b_min_fde, eval.miss_rate
    );
    Ok(())
}

/// Every mode equals the ground truth; mode 0 has all the confidence.
fn oracle_predictions(scenes: &[(String, SceneInputs)], k: usize) -> Result<Vec<(String, PredictionSet)>, Failure> {
    scenes
        .iter()
        .map(|(id, s)| {
            let gt = s.ground_truth.as_ref().ok_or_else(|| Failure::data(format!("{id}: no ground truth")))?;
            let mut conf = vec![0.0; k];
            conf[0] = 1.0;
            Ok((
                id.clone(),
                PredictionSet {
                    target_ids: s.targets.clone(),
                    trajectories: gt.iter().map(|g| vec![g.clone(); k]).collect(),
                    confidences: vec![conf; gt.len()],
                },
            ))
        })
        .collect()
}

fn require_ground_truth(scenes: &[(String, SceneInputs)]) -> Result<(), Failure> {
    match scenes.iter().find(|(_, s)| s.ground_truth.is_none()) {
        Some((id, _)) => Err(Failure::data(format!("missing ground truth in {id}"))),
        None => Ok(()),
    }
}

/// `a2a=4,8,16;a2l=8;l2a=4,8` as `(interaction, values)`.
pub fn parse_grid(spec: &str) -> Result<Vec<(String, Vec<usize>)>, Failure> {
    spec.split(';')
        .filter(|p| !p.trim().is_empty())
        .map(|part| {
            let (key, values) = part
                .split_once('=')
                .ok_or_else(|| Failure::config(format!("grid entry {part:?} needs name=values")))?;
            let key = key.trim();
            if !["a2a", "a2l", "l2a"].contains(&key) {
                return Err(Failure::config(format!("unknown interaction {key:?} in grid")));
            }
            let values = values
                .split(',')
                .map(|v| v.trim().parse::<usize>().ok().filter(|&e| e > 0))
                .collect::<Option<Vec<_>>>()
                .ok_or_else(|| Failure::config(format!("grid values for {key} must be positive integers")))?;
            Ok((key.to_string(), values))
        })
        .collect()
}

pub fn eval(cfg: &RunConfig, out: &Path, oracle: bool, grid: Option<&str>) -> Result<(), Failure> {
    if let Some(spec) = grid {
        return grid_search(cfg, out, &parse_grid(spec)?);
    }
    let data = load_inputs(&cfg.data_dir()?, &cfg.model)?;
    require_ground_truth(&data)?;
    let (result, predictions) = if oracle {
        let preds = oracle_predictions(&data, cfg.model.k)?;
        let mut records = Vec::new();
        for ((id, s), (_, p)) in data.iter().zip(&preds) {
            EvalResult::push_scene(&mut records, id, p, s.ground_truth.as_ref().expect("checked"))?;
        }
        (EvalResult::from_records(records)?, preds)
    } else {
        let checkpoint = cfg
            .paths
            .checkpoint
            .as_deref()
            .ok_or_else(|| Failure::config("eval needs a checkpoint (paths.checkpoint or --checkpoint)"))?;
        let (model, _) = model_from(cfg, Some(checkpoint))?;
        evaluate_model(&model, &data)?
    };
    write_file(&out.join("metrics.csv"), result.to_csv()?)?;
    write_file(&out.join("predictions.csv"), prediction_csv(&predictions)?)?;
    info!(
        "{} targets: minADE {:.3} minFDE {:.3} b-minFDE {:.3} MR {:.3}",
        result.records.len(),
        result.min_ade,
        result.min_fde,
        result.b_min_fde,
        result.miss_rate
    );
    Ok(())
}

fn grid_search(cfg: &RunConfig, out: &Path, grid: &[(String, Vec<usize>)]) -> Result<(), Failure> {
    let train = load_inputs(&cfg.data_dir()?, &cfg.model)?;
    let holdout_dir = cfg.paths.holdout_dir.clone().map_or_else(|| cfg.data_dir(), Ok)?;
    let mut table = String::from("interaction,e,min_ade,min_fde,b_min_fde,miss_rate\n");
    for (interaction, values) in grid {
        for &e in values {
            let mut model_cfg = cfg.model.clone();
            match interaction.as_str() {
                "a2a" => model_cfg.e_a2a = e,
                "a2l" => model_cfg.e_a2l = e,
                _ => model_cfg.e_l2a = e,
            }
            let held = load_inputs(&holdout_dir, &model_cfg)?;
            require_ground_truth(&held)?;
            let inputs: Vec<SceneInputs> = train.iter().map(|(_, s)| s.clone()).collect();
            let mut trainer = Trainer::new(Model::new(model_cfg, cfg.seed)?, cfg.train.clone(), cfg.loss.clone());
            trainer.fit(&inputs, |_, _| Ok(()))?;
            let (r, _) = evaluate_model(&trainer.model, &held)?;
            info!("{interaction} e={e}: b-minFDE {:.4}", r.b_min_fde);
            let _ = writeln!(
                table,
                "{interaction},{e},{},{},{},{}",
                r.min_ade, r.min_fde, r.b_min_fde, r.miss_rate
            );
        }
    }
    write_file(&out.join("grid.csv"), table)
}

pub fn predict(cfg: &RunConfig, scenario: &Path, out: &Path) -> Result<(), Failure> {
    let checkpoint = cfg.paths.checkpoint.as_deref();
    if checkpoint.is_none() {
        warn!("no checkpoint given; predicting with the seed-{} initialization", cfg.seed);
    }
    let (model, _) = model_from(cfg, checkpoint)?;
    let scene: Scenario = parse_scenario(scenario, &cfg.model.shape())?;
    let inputs = prepare_scene(&scene, &cfg.model)?;
    let pred = model.predict(&inputs)?;
    let frame = normalize_scenario(&scene, scene.target_ids[0])?;
    let stem = scenario
        .file_stem()
        .map_or_else(|| "scenario".to_string(), |s| s.to_string_lossy().into_owned());
    for (t, agent) in pred.target_ids.iter().enumerate() {
        let path: PathBuf = out.join(format!("{stem}_agent{agent}.svg"));
        write_file(&path, svg_plot(&frame, &pred, t)?)?;
    }
    write_file(&out.join(format!("{stem}_predictions.csv")), prediction_csv(&[(stem.clone(), pred.clone())])?)?;
    info!("wrote {} plot(s) for {stem} to {}", pred.target_ids.len(), out.display());
    Ok(())
}
