use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use serde_json::json;

use iafa_core::data::{
    encode_pgm, generate_scene, generate_suite, occlusion_fixture, GrayImage, SceneConfig, SyntheticScene,
};
use iafa_core::detector::{
    attention_masses, decode, mean_train_iou, train, write_loss_csv, Detector, DetectorConfig, PreparedScene,
    TrainConfig,
};
use iafa_core::evaluation::{evaluate_split, Criterion, Metric, SplitOptions};
use iafa_core::gradcheck::{run_gradcheck, GradcheckConfig};
use iafa_core::targets::LossWeights;
use iafa_core::tensor::{read_checkpoint, write_checkpoint};

use crate::config::ConfigFile;
use crate::manifest::{blob_hash, hash_dirs, RunManifest};
use crate::svg::bev_svg;
use crate::{EvalArgs, GradcheckArgs, RenderArgs, TrainArgs};

pub const CHECKPOINT: &str = "checkpoint.bin";
pub const LOSS_CSV: &str = "loss.csv";
pub const REPORT_CSV: &str = "report.csv";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Suite {
    Default,
    OcclusionHeavy,
    Fixture,
}

impl Suite {
    fn name(self) -> &'static str {
        match self {
            Suite::Default => "default",
            Suite::OcclusionHeavy => "occlusion-heavy",
            Suite::Fixture => "fixture",
        }
    }

    fn scene_config(self) -> SceneConfig {
        match self {
            Suite::OcclusionHeavy => SceneConfig::occlusion_heavy(),
            _ => SceneConfig::default(),
        }
    }
}

impl FromStr for Suite {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "default" => Ok(Suite::Default),
            "occlusion-heavy" => Ok(Suite::OcclusionHeavy),
            "fixture" => Ok(Suite::Fixture),
            _ => Err(format!("unknown suite `{s}` (default, occlusion-heavy, fixture)")),
        }
    }
}

pub fn parse_gamma(s: &str) -> Result<LossWeights> {
    let v: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| anyhow!("bad --gamma `{s}`: {e}"))?;
    let [c, r, m] = v[..] else {
        bail!("--gamma takes three comma-separated weights, got `{s}`");
    };
    Ok(LossWeights::new(c, r, m)?)
}

pub fn gradcheck(a: &GradcheckArgs, file: &ConfigFile) -> Result<bool> {
    let d = GradcheckConfig::default();
    let cfg = GradcheckConfig {
        seed: file.pick(a.seed, "seed", d.seed)?,
        trials: file.pick(a.trials, "trials", d.trials)?,
        tolerance: file.pick(a.tolerance, "tolerance", d.tolerance)?,
        ..d
    };
    if cfg.trials == 0 {
        bail!("--trials must be positive");
    }
    if cfg.tolerance.is_nan() || cfg.tolerance < 0.0 {
        bail!("--tolerance must be nonnegative");
    }
    let report = run_gradcheck(&cfg)?;
    let text = report.to_text();
    print!("{text}");
    if let Some(out) = &a.out {
        std::fs::create_dir_all(out)?;
        let config = serde_json::to_value(&cfg)?;
        let hash = blob_hash(config.to_string().as_bytes());
        let mut m = RunManifest::new("gradcheck", config, Some(cfg.seed), hash);
        m.emit(out, "gradcheck.txt", text.as_bytes())?;
        m.write(out)?;
    }
    for c in report.failures() {
        eprintln!(
            "gradcheck failed: {} has relative error {:.3e} (tolerance {:.1e}) at trial seed {}",
            c.name, c.worst, cfg.tolerance, c.worst_seed
        );
    }
    Ok(report.passed())
}

pub fn train_toy(a: &TrainArgs, file: &ConfigFile) -> Result<()> {
    let d = TrainConfig::default();
    let n_scenes: usize = file.pick(a.scenes, "scenes", 20)?;
    let suite: Suite = file.pick(
        a.suite.as_deref().map(str::parse).transpose().map_err(|e: String| anyhow!(e))?,
        "suite",
        Suite::Default,
    )?;
    if suite == Suite::Fixture {
        bail!("training takes --suite default or occlusion-heavy");
    }
    let gamma: String = file.pick(a.gamma.clone(), "gamma", "1,1,1".into())?;
    let cfg = TrainConfig {
        steps: file.pick(a.steps, "steps", d.steps)?,
        lr: file.pick(a.lr, "lr", d.lr)?,
        iafa_lr_scale: file.pick(a.iafa_lr_scale, "iafa_lr_scale", d.iafa_lr_scale)?,
        seed: file.pick(a.seed, "seed", d.seed)?,
        weights: parse_gamma(&gamma)?,
        use_iafa: !file.switch(a.no_iafa, "no_iafa")?,
        ..d
    };
    cfg.validate()?;
    if n_scenes == 0 {
        bail!("--scenes must be positive");
    }
    let dcfg = DetectorConfig::default();
    let config = json!({
        "scenes": n_scenes,
        "suite": suite.name(),
        "train": cfg,
        "detector": dcfg,
    });
    let input_hash = blob_hash(config.to_string().as_bytes());
    let scenes = generate_suite(cfg.seed, n_scenes, &suite.scene_config())?;
    let prepared = PreparedScene::all(&scenes, &dcfg)?;
    let mut det = Detector::new(dcfg, cfg.seed)?;
    log::info!("training {} steps on {n_scenes} scenes", cfg.steps);
    let records = train(&mut det, &prepared, &cfg)?;

    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let mut m = RunManifest::new("train-toy", config, Some(cfg.seed), input_hash);
    let mut ckpt = Vec::new();
    write_checkpoint(&det.store, &mut ckpt)?;
    m.emit(&a.out, CHECKPOINT, &ckpt)?;
    m.emit(&a.out, LOSS_CSV, write_loss_csv(&records).as_bytes())?;
    m.write(&a.out)?;

    if let (Some(first), Some(last)) = (records.first(), records.last()) {
        println!("loss {:.5} -> {:.5} over {} steps", first.total, last.total, records.len());
    }
    println!("mean train 3D IoU {:.4}", mean_train_iou(&det, &prepared, cfg.use_iafa)?);
    println!("wrote {}", a.out.display());
    Ok(())
}

pub fn eval(a: &EvalArgs, file: &ConfigFile) -> Result<()> {
    let parse_err = |e: iafa_core::Error| anyhow!(e);
    let metric: String = file.pick(a.metric.clone(), "metric", "both".into())?;
    let metrics: Vec<Metric> = match metric.as_str() {
        "both" => vec![Metric::Box3d, Metric::Bev],
        m => vec![m.parse().map_err(parse_err)?],
    };
    let criterion: Criterion = file.pick(a.criterion.clone(), "criterion", "11".into())?.parse().map_err(parse_err)?;
    let classes: String = file.pick(a.classes.clone(), "classes", "Car".into())?;
    let opts = SplitOptions {
        classes: classes.split(',').map(|c| c.trim().to_string()).filter(|c| !c.is_empty()).collect(),
        metrics,
        criterion,
        ..SplitOptions::default()
    };
    if opts.classes.is_empty() {
        bail!("--classes is empty");
    }
    let report = evaluate_split(&a.det, &a.gt, &a.calib, &opts)?;
    if !report.missing_frames.is_empty() {
        eprintln!("{} frame(s) had no detection file and count as empty", report.missing_frames.len());
    }
    print!("{}", report.to_table());
    let input_hash = hash_dirs(&[("det", &a.det), ("gt", &a.gt), ("calib", &a.calib)])?;
    std::fs::create_dir_all(&a.out)?;
    let mut m = RunManifest::new("eval", serde_json::to_value(&opts)?, None, input_hash);
    m.emit(&a.out, REPORT_CSV, report.to_csv().as_bytes())?;
    m.write(&a.out)?;
    Ok(())
}

fn render_scene(suite: Suite, seed: u64) -> Result<SyntheticScene> {
    Ok(match suite {
        Suite::Fixture => occlusion_fixture(&SceneConfig::default())?,
        s => generate_scene(seed, &s.scene_config())?,
    })
}

fn load_detector(path: &Path) -> Result<(Detector, Vec<u8>)> {
    let bytes = std::fs::read(path).with_context(|| format!("reading checkpoint {}", path.display()))?;
    let store = read_checkpoint(bytes.as_slice()).with_context(|| format!("loading checkpoint {}", path.display()))?;
    Ok((Detector::from_store(DetectorConfig::default(), store)?, bytes))
}

pub fn render(a: &RenderArgs, file: &ConfigFile) -> Result<()> {
    let (det, ckpt) = load_detector(&a.checkpoint)?;
    let seed: u64 = file.pick(a.scene, "seed", 0)?;
    let suite: Suite = file.pick(
        a.suite.as_deref().map(str::parse).transpose().map_err(|e: String| anyhow!(e))?,
        "suite",
        Suite::Default,
    )?;
    let scene = render_scene(suite, seed)?;
    let prepared = PreparedScene::new(&scene, &det.cfg)?;
    let out = det.forward(&scene.image, true)?;
    let rel = out.relation.as_ref().expect("forward with the branch yields G");
    let (ih, iw) = prepared.targets.interior;

    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let config = json!({ "suite": suite.name(), "scene": seed });
    let mut m = RunManifest::new("render", config, Some(seed), blob_hash(&ckpt));
    let mut objects = Vec::new();
    for (i, o) in prepared.targets.objects.iter().enumerate() {
        let row = rel.attention_row_for_center(o.interior_index)?;
        let name = format!("attention/object_{i}.pgm");
        m.emit(&a.out, &name, &encode_pgm(&GrayImage::normalized(&row, iw, ih)))?;
        let own = o.mask.as_ref().map(|mask| row.iter().zip(mask).filter(|(_, &b)| b).map(|(v, _)| v).sum::<f64>());
        objects.push(json!({ "object": i, "file": name, "own_mass": own }));
    }
    let occluded = attention_masses(&det, &prepared)?;
    let detections = decode(&out, &scene.intrinsics, &det.cfg)?;
    let gt: Vec<_> = scene.objects.iter().map(|o| o.box3d).collect();
    let dets: Vec<_> = detections.iter().map(|d| (d.box3d, d.score)).collect();
    m.emit(&a.out, "bev.svg", bev_svg(&gt, &dets).as_bytes())?;

    let ahead = occluded.iter().filter(|o| o.own > o.other).count();
    let summary = json!({
        "interior": [iw, ih],
        "objects": objects,
        "occluded": occluded,
        "own_mask_ahead": ahead,
        "detections": detections.len(),
    });
    m.emit(&a.out, "attention.json", format!("{}\n", serde_json::to_string_pretty(&summary)?).as_bytes())?;
    m.write(&a.out)?;

    let mut text = String::new();
    for o in &objects {
        if let Some(mass) = o["own_mass"].as_f64() {
            let _ = writeln!(text, "object {}: attention mass on own mask {mass:.4}", o["object"]);
        }
    }
    for o in &occluded {
        let _ = writeln!(
            text,
            "occluded object {} behind {}: own {:.4} occluder {:.4}",
            o.object, o.occluder, o.own, o.other
        );
    }
    let _ = writeln!(
        text,
        "foreground mass: {ahead}/{} occluded objects attend more to their own mask; {} detections",
        occluded.len(),
        detections.len()
    );
    print!("{text}");
    Ok(())
}
