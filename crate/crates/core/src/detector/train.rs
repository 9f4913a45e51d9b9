use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{decode, normalize_image, Detector, DetectorConfig};
use crate::data::SyntheticScene;
use crate::error::{Error, Result};
use crate::geometry::{iou_3d, CameraIntrinsics};
use crate::iafa::RelationMap;
use crate::targets::{
    centerness_focal_loss, corners_regression_loss, mask_focal_loss, total_loss, LossParts, LossWeights, TargetMaps,
};
use crate::tensor::{Adam, Graph};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub lr: f64,
    /// Fractions of `steps` at which the learning rate is multiplied by `lr_drop_factor`.
    pub lr_drops: Vec<f64>,
    pub lr_drop_factor: f64,
    pub weights: LossWeights,
    pub use_iafa: bool,
    /// Seeds the scene visiting order.
    pub seed: u64,
    pub l1: f64,
    /// Learning-rate multiplier for the `iafa.` parameters.
    pub iafa_lr_scale: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 2000,
            lr: 1e-3,
            lr_drops: vec![0.5, 0.75],
            lr_drop_factor: 0.1,
            weights: LossWeights::default(),
            use_iafa: true,
            seed: 0,
            l1: 0.0,
            iafa_lr_scale: 0.03,
        }
    }
}

impl TrainConfig {
    pub fn lr_at(&self, step: usize) -> f64 {
        let drops = self.lr_drops.iter().filter(|&&f| step as f64 >= f * self.steps as f64).count();
        self.lr * self.lr_drop_factor.powi(drops as i32)
    }

    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        for (name, v) in [("learning rate", self.lr), ("IAFA learning-rate scale", self.iafa_lr_scale)] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} {v} must be finite and nonnegative")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: usize,
    pub parts: LossParts,
    pub total: f64,
}

/// A scene with its network input and training targets precomputed.
#[derive(Clone, Debug)]
pub struct PreparedScene {
    pub input: crate::tensor::Tensor,
    pub targets: TargetMaps,
    pub intrinsics: CameraIntrinsics,
    /// `(occluded, occluder)` object pairs with a misaligned center.
    pub misaligned: Vec<(usize, usize)>,
}

impl PreparedScene {
    pub fn new(scene: &SyntheticScene, cfg: &DetectorConfig) -> Result<Self> {
        if (scene.height, scene.width) != (cfg.height, cfg.width) {
            return Err(Error::dim("scene", &[scene.height, scene.width], &[cfg.height, cfg.width]));
        }
        Ok(PreparedScene {
            input: normalize_image(&scene.image),
            targets: scene.targets(&cfg.targets)?,
            intrinsics: scene.intrinsics,
            misaligned: scene.misaligned_pairs(),
        })
    }

    pub fn all(scenes: &[SyntheticScene], cfg: &DetectorConfig) -> Result<Vec<Self>> {
        scenes.iter().map(|s| PreparedScene::new(s, cfg)).collect()
    }
}

/// Loss parts of one scene and, when all parts are finite, the weighted
/// gradient of the total in the parameter store's gradient buffers.
pub fn loss_and_gradients(
    det: &mut Detector,
    scene: &PreparedScene,
    weights: &LossWeights,
    use_iafa: bool,
) -> Result<LossParts> {
    let dcfg = &det.cfg;
    let mut graph = Graph::new();
    let nodes = det.record(&mut graph, &scene.input, use_iafa)?;
    let heat =
        centerness_focal_loss(graph.value(nodes.heatmap), &scene.targets.heatmap, dcfg.focal_alpha, dcfg.focal_beta)?;
    let reg = corners_regression_loss(
        graph.value(nodes.regression),
        &scene.targets,
        &scene.intrinsics,
        dcfg.targets.stride as f64,
        &dcfg.classes,
    )?;
    let mask = match nodes.relation {
        Some(g) => {
            let (ih, iw) = scene.targets.interior;
            let rel = RelationMap::from_tensor(graph.value(g), ih, iw)?;
            Some(mask_focal_loss(&rel, &scene.targets.mask_instances(), dcfg.mask_alpha, dcfg.mask_background)?)
        }
        None => None,
    };
    let parts = LossParts { center: heat.value, reg: reg.value, mask: mask.as_ref().map_or(0.0, |m| m.value) };
    if ![parts.center, parts.reg, parts.mask].iter().all(|v| v.is_finite()) {
        return Ok(parts);
    }
    let scaled = |g: &[f64], k: f64| g.iter().map(|v| v * k).collect::<Vec<_>>();
    let heat_seed = scaled(&heat.grad, weights.center);
    let reg_seed = scaled(&reg.grad, weights.reg);
    let mut seeds = vec![(nodes.heatmap, heat_seed.as_slice()), (nodes.regression, reg_seed.as_slice())];
    let mask_seed;
    if let (Some(g), Some(m)) = (nodes.relation, &mask) {
        if weights.mask > 0.0 {
            mask_seed = scaled(&m.grad, weights.mask);
            seeds.push((g, mask_seed.as_slice()));
        }
    }
    let grads = graph.backward(&seeds)?;
    det.store.zero_grads();
    grads.accumulate_into(&mut det.store);
    Ok(parts)
}

/// Losses of one scene followed by one Adam update.
fn step(
    det: &mut Detector,
    adam: &mut Adam,
    scene: &PreparedScene,
    cfg: &TrainConfig,
    step_index: usize,
) -> Result<LossRecord> {
    let parts = loss_and_gradients(det, scene, &cfg.weights, cfg.use_iafa)?;
    if ![parts.center, parts.reg, parts.mask].iter().all(|v| v.is_finite()) {
        return Err(Error::Divergence { step: step_index });
    }
    let total = total_loss(&parts, &cfg.weights)?;
    adam.step(&mut det.store, cfg.lr_at(step_index))?;
    Ok(LossRecord { step: step_index, parts, total })
}

/// Trains with batch size 1, visiting scenes in a seeded order reshuffled
/// every pass. Returns one record per step (losses before that step's update).
pub fn train(det: &mut Detector, scenes: &[PreparedScene], cfg: &TrainConfig) -> Result<Vec<LossRecord>> {
    cfg.validate()?;
    if scenes.is_empty() {
        return Err(Error::Input("training needs at least one scene".into()));
    }
    det.store.set_trainable("iafa.", cfg.use_iafa);
    det.store.set_lr_scale("iafa.", cfg.iafa_lr_scale);
    let mut adam = Adam::new(0.9, 0.999, 1e-8, cfg.l1);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..scenes.len()).collect();
    let mut records = Vec::with_capacity(cfg.steps);
    for s in 0..cfg.steps {
        if s % scenes.len() == 0 {
            order.shuffle(&mut rng);
        }
        let rec = step(det, &mut adam, &scenes[order[s % scenes.len()]], cfg, s)?;
        if s % 500 == 0 {
            log::debug!("step {s}: total {:.5} {:?}", rec.total, rec.parts);
        }
        records.push(rec);
    }
    Ok(records)
}

pub fn write_loss_csv(records: &[LossRecord]) -> String {
    let mut out = String::from("step,loss_center,loss_reg,loss_mask,loss_total\n");
    for r in records {
        out.push_str(&format!("{},{},{},{},{}\n", r.step, r.parts.center, r.parts.reg, r.parts.mask, r.total));
    }
    out
}

/// Mean over all ground-truth boxes of the best 3D IoU achieved by any
/// decoded detection in the same scene (0 when nothing is detected).
pub fn mean_train_iou(det: &Detector, scenes: &[PreparedScene], use_iafa: bool) -> Result<f64> {
    let per_scene: Vec<Result<(f64, usize)>> = scenes
        .par_iter()
        .map(|s| {
            let mut graph = Graph::new();
            let nodes = det.record(&mut graph, &s.input, use_iafa)?;
            let out = super::HeadOutputs {
                heatmap: graph.value(nodes.heatmap).clone(),
                regression: graph.value(nodes.regression).clone(),
                relation: None,
            };
            let dets = decode(&out, &s.intrinsics, &det.cfg)?;
            let sum = s
                .targets
                .objects
                .iter()
                .map(|o| dets.iter().map(|d| iou_3d(&d.box3d, &o.box3d)).fold(0.0, f64::max))
                .sum::<f64>();
            Ok((sum, s.targets.objects.len()))
        })
        .collect();
    let (mut sum, mut n) = (0.0, 0);
    for r in per_scene {
        let (s, c) = r?;
        sum += s;
        n += c;
    }
    Ok(if n == 0 { 0.0 } else { sum / n as f64 })
}

/// Attention mass of an occluded object's center row inside its own mask and
/// inside its occluder's mask.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OccludedMass {
    pub object: usize,
    pub occluder: usize,
    pub own: f64,
    pub other: f64,
}

pub fn attention_masses(det: &Detector, scene: &PreparedScene) -> Result<Vec<OccludedMass>> {
    let mut graph = Graph::new();
    let nodes = det.record(&mut graph, &scene.input, true)?;
    let g = nodes.relation.expect("IAFA forward records G");
    let (ih, iw) = scene.targets.interior;
    let rel = RelationMap::from_tensor(graph.value(g), ih, iw)?;
    let objs = &scene.targets.objects;
    let mass = |row: &[f64], mask: &Option<Vec<bool>>| -> f64 {
        mask.as_ref().map_or(0.0, |m| row.iter().zip(m).filter(|(_, &b)| b).map(|(v, _)| v).sum())
    };
    scene
        .misaligned
        .iter()
        .map(|&(i, j)| {
            let row = rel.attention_row_for_center(objs[i].interior_index)?;
            Ok(OccludedMass {
                object: i,
                occluder: j,
                own: mass(&row, &objs[i].mask),
                other: mass(&row, &objs[j].mask),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_scene, SceneConfig};

    fn small() -> (Detector, Vec<PreparedScene>) {
        let cfg = DetectorConfig::default();
        let det = Detector::new(cfg.clone(), 3).unwrap();
        let scene = generate_scene(1, &SceneConfig::default()).unwrap();
        (det, PreparedScene::all(&[scene], &cfg).unwrap())
    }

    #[test]
    fn zero_lr_leaves_params() {
        let (mut det, scenes) = small();
        let before = det.store.clone();
        let cfg = TrainConfig { steps: 3, lr: 0.0, ..TrainConfig::default() };
        train(&mut det, &scenes, &cfg).unwrap();
        for ((_, a), (_, b)) in before.iter().zip(det.store.iter()) {
            assert_eq!(a.tensor.data(), b.tensor.data(), "{}", a.name);
        }
    }

    #[test]
    fn deterministic_curves() {
        let cfg = TrainConfig { steps: 4, ..TrainConfig::default() };
        let (mut a, scenes) = small();
        let (mut b, _) = small();
        let ra = train(&mut a, &scenes, &cfg).unwrap();
        let rb = train(&mut b, &scenes, &cfg).unwrap();
        assert_eq!(write_loss_csv(&ra), write_loss_csv(&rb));
        assert!(ra.iter().all(|r| r.total.is_finite()));
    }

    #[test]
    fn lr_schedule() {
        let cfg = TrainConfig { steps: 100, lr: 1.0, ..TrainConfig::default() };
        assert_eq!(cfg.lr_at(0), 1.0);
        assert_eq!(cfg.lr_at(49), 1.0);
        assert!((cfg.lr_at(50) - 0.1).abs() < 1e-15);
        assert!((cfg.lr_at(99) - 0.01).abs() < 1e-15);
    }

    #[test]
    fn frozen_branch_without_iafa() {
        let (mut det, scenes) = small();
        let before = det.store.clone();
        let cfg = TrainConfig { steps: 2, use_iafa: false, ..TrainConfig::default() };
        train(&mut det, &scenes, &cfg).unwrap();
        for ((_, a), (_, b)) in before.iter().zip(det.store.iter()) {
            if a.name.starts_with("iafa.") {
                assert_eq!(a.tensor.data(), b.tensor.data());
            }
        }
    }
}
