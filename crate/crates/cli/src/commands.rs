//! The subcommands. Each takes a fully resolved [`RunConfig`].

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use charflow::analytic::{AnalyticFlow, AnalyticScene, SceneConfig};
use charflow::io::{
    evaluate, export_grid, pathline_seeds, pathlines, synthesize_dataset, write_pathlines, EvalReport, SyntheticSequence,
};
use charflow::losses::LossBreakdown;
use charflow::nn::Checkpoint;
use charflow::radiance::SceneModel;
use charflow::train::{fit_flow, RayPool, Trainer};
use log::info;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

const LOG_EVERY: u64 = 100;

/// Ground truth for a run: the scene description and, when images exist or
/// can be synthesized, the image sequence.
struct Scene {
    config: SceneConfig,
    sequence: Option<SyntheticSequence>,
}

fn load_scene(cfg: &RunConfig, want_images: bool) -> CliResult<Option<Scene>> {
    if let Some(dir) = &cfg.scene.dataset {
        let seq = SyntheticSequence::load(dir)?;
        return Ok(Some(Scene { config: seq.config.clone(), sequence: Some(seq) }));
    }
    let Some(config) = cfg.scene_config()? else { return Ok(None) };
    let sequence = if want_images {
        info!("synthesizing {} frames", config.frames);
        Some(synthesize_dataset(&config, cfg.scene.seed, cfg.scene.format)?)
    } else {
        None
    };
    Ok(Some(Scene { config, sequence }))
}

fn out_dir(cfg: &RunConfig) -> CliResult<PathBuf> {
    let dir = cfg.out_dir();
    std::fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
    Ok(dir)
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| CliError::io(path, e))
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn load_model(cfg: &RunConfig) -> CliResult<SceneModel> {
    let path = cfg.checkpoint_path();
    let ck = Checkpoint::load(&path)?;
    Ok(SceneModel::from_checkpoint(&ck)?.0)
}

fn fit_flow_for(cfg: &RunConfig, scene: Option<&Scene>) -> CliResult<Option<AnalyticFlow>> {
    Ok(match &cfg.fit {
        None => None,
        Some(fit) => Some(match (&fit.flow, scene) {
            (Some(f), _) => f.clone(),
            (None, Some(s)) => s.config.flow.clone(),
            (None, None) => return Err(CliError::Config("[fit] needs a flow or a scene to take one from".into())),
        }),
    })
}

pub fn synth(cfg: &RunConfig) -> CliResult<()> {
    let Some(config) = cfg.scene_config()? else {
        return Err(CliError::Config("synth needs [scene] preset or config".into()));
    };
    let dir = out_dir(cfg)?.join("dataset");
    let seq = synthesize_dataset(&config, cfg.scene.seed, cfg.scene.format)?;
    seq.save(&dir)?;
    println!("wrote {} images to {}", seq.images.len(), dir.display());
    Ok(())
}

pub fn train(cfg: &RunConfig, resume: Option<&Path>) -> CliResult<()> {
    let out = out_dir(cfg)?;
    let scene = load_scene(cfg, true)?;
    let trains_images = cfg.train.stage1_iters + cfg.train.stage2_iters > 0 && scene.is_some();

    let mut trainer = match resume {
        Some(path) => {
            if scene.is_none() {
                return Err(CliError::Config("resuming needs the [scene] the run was trained on".into()));
            }
            Trainer::resume(&Checkpoint::load(path)?, Some(cfg.train.clone()))?
        }
        None => {
            let domain = scene.as_ref().map_or(cfg.model.domain, |s| s.config.domain);
            let spec = cfg.scene_spec(scene.as_ref().map(|s| &s.config));
            let mut model = SceneModel::new(&spec, domain, &mut ChaCha8Rng::seed_from_u64(cfg.train.seed))?;
            if let Some(flow) = fit_flow_for(cfg, scene.as_ref())? {
                let fit = &cfg.fit.as_ref().expect("fit section present").config;
                info!("fitting the trajectory field for {} iterations", fit.iters);
                let history = fit_flow(&mut model.field, &flow, fit)?;
                let mut w = create(&out.join("fit_losses.csv"))?;
                writeln!(w, "{}", LossBreakdown::CSV_HEADER).map_err(|e| CliError::io(&out, e))?;
                for (i, b) in history.iter().enumerate() {
                    write!(w, "{}", b.csv_rows(i)).map_err(|e| CliError::io(&out, e))?;
                }
                if let Some(last) = history.last() {
                    info!("fit done: {}", summary(last));
                }
            }
            Trainer::new(model, cfg.train.clone())?
        }
    };

    if trains_images {
        let seq = scene.as_ref().and_then(|s| s.sequence.as_ref()).expect("scene images were loaded");
        let pool = RayPool::from_sequence(seq)?;
        let total = trainer.total_iters();
        trainer.run_until(&pool, total, |t, b| {
            if t.iter % LOG_EVERY == 0 || t.iter == total {
                info!("iter {}/{total} {}", t.iter, summary(b));
            }
        })?;
        for e in &trainer.events {
            log::warn!("non-finite {} at iteration {}; step skipped", e.term, e.iter);
        }
        let mut w = create(&out.join("losses.csv"))?;
        trainer.write_log(&mut w, true)?;
    }

    let ck = trainer.checkpoint()?;
    let path = out.join("checkpoint.chk");
    ck.save(&path)?;
    let resolved = toml::to_string(cfg).map_err(|e| CliError::Config(e.to_string()))?;
    write_text(&out.join("config.toml"), &resolved)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn summary(b: &LossBreakdown) -> String {
    b.terms.iter().map(|t| format!("{}={:.3e}", t.name, t.value)).collect::<Vec<_>>().join(" ")
}

/// Last logged value of each term in `<dir>/losses.csv`, if the file exists.
fn final_losses(dir: &Path) -> Vec<(String, f64)> {
    let Ok(mut r) = csv::Reader::from_path(dir.join("losses.csv")) else { return Vec::new() };
    let mut last: Vec<(String, f64)> = Vec::new();
    for row in r.records().flatten() {
        let (Some(name), Some(v)) = (row.get(1), row.get(2).and_then(|v| v.parse::<f64>().ok())) else { continue };
        match last.iter_mut().find(|(n, _)| n == name) {
            Some(slot) => slot.1 = v,
            None => last.push((name.to_string(), v)),
        }
    }
    last
}

pub fn eval(cfg: &RunConfig) -> CliResult<EvalReport> {
    let model = load_model(cfg)?;
    let scene = load_scene(cfg, true)?;
    let flow = match &scene {
        Some(s) => Some(s.config.flow.clone()),
        None => cfg.fit.as_ref().and_then(|f| f.flow.clone()),
    };
    let analytic = scene.as_ref().map(|s| AnalyticScene::from_config(&s.config)).transpose()?;
    let ck_dir = cfg.checkpoint_path().parent().map(Path::to_path_buf).unwrap_or_default();
    let report = evaluate(
        &model,
        flow.as_ref(),
        analytic.as_ref(),
        scene.as_ref().and_then(|s| s.sequence.as_ref()),
        final_losses(&ck_dir),
        &cfg.eval,
    )?;
    report.check_finite()?;
    let out = out_dir(cfg)?;
    let mut w = create(&out.join("report.csv"))?;
    report.write_csv(&mut w)?;
    let text = report.to_text();
    write_text(&out.join("report.txt"), &text)?;
    print!("{text}");
    Ok(report)
}

pub fn export(cfg: &RunConfig) -> CliResult<PathBuf> {
    let model = load_model(cfg)?;
    let e = &cfg.export;
    let grid = export_grid(&model, e.what, e.res, e.t)?;
    let path = out_dir(cfg)?.join(format!("{}_t{:.4}.chgr", e.what.name(), e.t));
    grid.save(&path)?;
    println!("wrote {}", path.display());
    Ok(path)
}

pub fn pathline_cmd(cfg: &RunConfig) -> CliResult<PathBuf> {
    let model = load_model(cfg)?;
    let p = &cfg.pathlines;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.train.seed);
    let seeds = pathline_seeds(&model.field, p.n, p.t0, &mut rng)?;
    let points = pathlines(&model.field, &seeds, p.t1, p.steps)?;
    let path = out_dir(cfg)?.join("pathlines.csv");
    write_pathlines(create(&path)?, &points)?;
    println!("wrote {} pathlines to {}", p.n, path.display());
    Ok(path)
}
