//! Randomized central finite-difference checks of every analytic gradient.
//!
//! Each case draws random inputs from a per-trial seed, evaluates a scalar
//! objective together with its analytic gradient, and compares that
//! gradient with `(f(x + h) - f(x - h)) / 2h` on up to `max_coords`
//! coordinates. The error of a trial is `‖a - n‖ / (‖a‖ + ‖n‖)`, or the plain
//! difference when both norms are below 1e-8.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{generate_scene, SceneConfig};
use crate::detector::{loss_and_gradients, Detector, DetectorConfig, PreparedScene};
use crate::error::Result;
use crate::geometry::CameraIntrinsics;
use crate::iafa::{record_iafa, IafaConfig, IafaParams, RelationMap};
use crate::targets::{
    centerness_focal_loss, corners_regression_loss, encode_attributes, mask_focal_loss, ClassInfo, LossWeights,
    TargetConfig, REG_CHANNELS,
};
use crate::tensor::{Graph, NodeId, ParamStore, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradcheckConfig {
    pub seed: u64,
    /// Trials per case; the full-detector case runs `trials / 20` (at least 1).
    pub trials: usize,
    pub tolerance: f64,
    pub step: f64,
    pub max_coords: usize,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        GradcheckConfig { seed: 0, trials: 100, tolerance: 1e-4, step: 1e-6, max_coords: 48 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaseReport {
    pub name: String,
    pub trials: usize,
    pub worst: f64,
    /// Trial seed that produced `worst`.
    pub worst_seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub tolerance: f64,
    pub cases: Vec<CaseReport>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.cases.iter().all(|c| c.worst < self.tolerance)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CaseReport> {
        self.cases.iter().filter(|c| !(c.worst < self.tolerance))
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{:<22}{:>8}{:>14}{:>22}  status\n", "case", "trials", "worst", "seed");
        for c in &self.cases {
            let status = if c.worst < self.tolerance { "ok" } else { "FAIL" };
            out.push_str(&format!("{:<22}{:>8}{:>14.3e}{:>22}  {status}\n", c.name, c.trials, c.worst, c.worst_seed));
        }
        out
    }
}

/// Norm-based relative error between analytic and numeric gradients.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    let diff = norm(&mut analytic.iter().zip(numeric).map(|(a, n)| a - n));
    let scale = norm(&mut analytic.iter().copied()) + norm(&mut numeric.iter().copied());
    // absolute error once both gradients vanish
    if scale < 1e-8 {
        diff
    } else {
        diff / scale
    }
}

/// Loss and analytic gradient at a point.
pub type ValueAndGrad<'a> = dyn FnMut(&[f64]) -> Result<(f64, Vec<f64>)> + 'a;

/// Compares the analytic gradient of `f` at `x` with central differences.
pub fn check_function(
    x: &[f64],
    f: &mut ValueAndGrad<'_>,
    step: f64,
    max_coords: usize,
    rng: &mut impl Rng,
) -> Result<f64> {
    let (_, grad) = f(x)?;
    let coords: Vec<usize> =
        if x.len() <= max_coords { (0..x.len()).collect() } else { sample(rng, x.len(), max_coords).into_vec() };
    let mut probe = x.to_vec();
    let mut numeric = Vec::with_capacity(coords.len());
    for &i in &coords {
        probe[i] = x[i] + step;
        let up = f(&probe)?.0;
        probe[i] = x[i] - step;
        let down = f(&probe)?.0;
        probe[i] = x[i];
        numeric.push((up - down) / (2.0 * step));
    }
    let analytic: Vec<f64> = coords.iter().map(|&i| grad[i]).collect();
    Ok(relative_error(&analytic, &numeric))
}

fn uniform(n: usize, lo: f64, hi: f64, rng: &mut impl Rng) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(lo..hi)).collect()
}

fn split(x: &[f64], shapes: &[Vec<usize>]) -> Result<Vec<Tensor>> {
    let mut at = 0;
    shapes
        .iter()
        .map(|s| {
            let n: usize = s.iter().product();
            let t = Tensor::from_vec(s, x[at..at + n].to_vec());
            at += n;
            t
        })
        .collect()
}

/// Graph objective `<w, out>` over variables of the given shapes.
fn graph_case(
    shapes: Vec<Vec<usize>>,
    x: Vec<f64>,
    build: impl Fn(&mut Graph, &[NodeId]) -> Result<NodeId>,
    cfg: &GradcheckConfig,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let mut weights: Option<Vec<f64>> = None;
    let mut wrng = ChaCha8Rng::seed_from_u64(rng.gen());
    let mut f = |x: &[f64]| -> Result<(f64, Vec<f64>)> {
        let mut g = Graph::new();
        let vars: Vec<NodeId> = split(x, &shapes)?.into_iter().map(|t| g.variable(t)).collect();
        let out = build(&mut g, &vars)?;
        let n = g.value(out).numel();
        let w = weights.get_or_insert_with(|| uniform(n, -1.0, 1.0, &mut wrng));
        let value = g.value(out).data().iter().zip(w.iter()).map(|(a, b)| a * b).sum();
        let grads = g.backward(&[(out, w.as_slice())])?;
        let mut flat = Vec::with_capacity(x.len());
        for (v, s) in vars.iter().zip(&shapes) {
            match grads.get(*v) {
                Some(gv) => flat.extend_from_slice(gv),
                None => flat.extend(std::iter::repeat_n(0.0, s.iter().product())),
            }
        }
        Ok((value, flat))
    };
    check_function(&x, &mut f, cfg.step, cfg.max_coords, rng)
}

fn dims(rng: &mut impl Rng, lo: usize, hi: usize) -> usize {
    rng.gen_range(lo..=hi)
}

fn case_matmul(cfg: &GradcheckConfig, rng: &mut ChaCha8Rng) -> Result<f64> {
    let (m, k, n) = (dims(rng, 1, 5), dims(rng, 1, 5), dims(rng, 1, 5));
    let x = uniform(m * k + k * n, -1.0, 1.0, rng);
    graph_case(vec![vec![m, k], vec![k, n]], x, |g, v| g.matmul(v[0], v[1]), cfg, rng)
}

fn case_matmul_nt(cfg: &GradcheckConfig, rng: &mut ChaCha8Rng) -> Result<f64> {
    let (m, k, n) = (dims(rng, 1, 5), dims(rng, 1, 5), dims(rng, 1, 5));
    let x = uniform(m * k + n * k, -1.0, 1.0, rng);
    graph_case(vec![vec![m, k], vec![n, k]], x, |g, v| g.matmul_nt(v[0], v[1]), cfg, rng)
}

fn case_conv1x1(cfg: &GradcheckConfig, rng: &mut ChaCha8Rng) -> Result<f64> {
    let (h, w, ci, co) = (dims(rng, 1, 4), dims(rng, 1, 4), dims(rng, 1, 4), dims(rng, 1, 5));
    let x = uniform(h * w * ci + ci * co + co, -1.0, 1.0, rng);
    graph_case(vec![vec![h, w, ci], vec![ci, co], vec![co]], x, |g, v| g.conv1x1(v[0], v[1], v[2]), cfg, rng)
}

fn case_conv3x3(cfg: &GradcheckConfig, rng: &mut ChaCha8Rng) -> Result<f64> {
    let (h, w, ci, co) = (dims(rng, 1, 5), dims(rng, 1, 5), dims(rng, 1, 3), dims(rng, 1, 3));
    let stride = dims(rng, 1, 2);
    let x = uniform(h * w * ci + 9 * ci * co + co, -1.0, 1.0, rng);
    graph_case(
        vec![vec![h, w, ci], vec![9 * ci, co], vec![co]],
        x,
        move |g, v| g.conv3x3(v[0], v[1], v[2], stride),
        cfg,
        rng,
    )
}

fn case_relu(cfg: &GradcheckConfig, rng: &mut ChaCha8Rng) -> Result<f64> {
    let n = dims(rng, 1, 30);
    // keep inputs away from the kink
    let x: Vec<f64> = (0..n)
        .map(|_| {
            let v: f64 = rng.gen_range(1e-3..1.0);
            if rng.gen_bool(0.5) {
                v
            } else {
                -v
            }
        })
        .collect();
    graph_case(vec![vec![1, 1, n]], x, |g, v| Ok(g.relu(v[0])), cfg, rng)
}

fn case_sigmoid(cfg: &GradcheckConfig, rng: &mut ChaCha8Rng) -> Result<f64> {
    let n = dims(rng, 1, 30);
    let x = uniform(n, -6.0, 6.0, rng);
    graph_case(vec![vec![1, 1, n]], x, |g, v| Ok(g.sigmoid(v[0])), cfg, rng)
}

fn case_tanh_channel(cfg: &GradcheckConfig, rng: &mut ChaCha8Rng) -> Result<f64> {
    let (h, w, c) = (dims(rng, 1, 3), dims(rng, 1, 3), dims(rng, 1, 8));
    let ch = rng.gen_range(0..c);
    let x = uniform(h * w * c, -2.0, 2.0, rng);
    graph_case(vec![vec![h, w, c]], x, move |g, v| g.tanh_channel(v[0], ch), cfg, rng)
}

fn case_group_norm(cfg: &GradcheckConfig, rng: &mut ChaCha8Rng) -> Result<f64> {
    let groups = dims(rng, 1, 4);
    let c = groups * dims(rng, 1, 3);
    let (h, w) = (dims(rng, 1, 4), dims(rng, 1, 4));
    let x = uniform(h * w * c + 2 * c, -1.0, 1.0, rng);
    graph_case(
        vec![vec![h, w, c], vec![c], vec![c]],
        x,
        move |g, v| g.group_norm(v[0], groups, v[1], v[2], 1e-5),
        cfg,
        rng,
    )
}

fn case_resample(cfg: &GradcheckConfig, rng: &mut ChaCha8Rng) -> Result<f64> {
    let (h, w, c) = (dims(rng, 1, 6), dims(rng, 1, 6), dims(rng, 1, 3));
    let (oh, ow) = (dims(rng, 1, 8), dims(rng, 1, 8));
    let x = uniform(h * w * c, -1.0, 1.0, rng);
    graph_case(vec![vec![h, w, c]], x, move |g, v| g.resample_bilinear(v[0], oh, ow), cfg, rng)
}

fn case_add_scale(cfg: &GradcheckConfig, rng: &mut ChaCha8Rng) -> Result<f64> {
    let (h, w, c) = (dims(rng, 1, 4), dims(rng, 1, 4), dims(rng, 1, 4));
    let n = h * w * c;
    let x = uniform(2 * n + 1, -1.0, 1.0, rng);
    graph_case(
        vec![vec![h, w, c], vec![h, w, c], vec![1]],
        x,
        |g, v| {
            let s = g.scale(v[1], v[2])?;
            g.add(v[0], s)
        },
        cfg,
        rng,
    )
}

fn case_row_normalize(cfg: &GradcheckConfig, rng: &mut ChaCha8Rng) -> Result<f64> {
    let (r, c) = (dims(rng, 1, 6), dims(rng, 1, 6));
    let x = uniform(r * c, 0.05, 1.0, rng);
    graph_case(vec![vec![r, c]], x, |g, v| g.row_l1_normalize(v[0]), cfg, rng)
}

/// Full branch on random features: `<w, enhanced>` plus the mask loss on `G`,
/// differentiated with respect to the input and every branch parameter.
fn case_iafa(cfg: &GradcheckConfig, rng: &mut ChaCha8Rng) -> Result<f64> {
    let groups = dims(rng, 1, 2);
    let channels = 4;
    let icfg = IafaConfig { channels, expansion: 2, groups, ..IafaConfig::default() };
    let (h, w) = (2 * dims(rng, 1, 4), 2 * dims(rng, 1, 4));
    let mut store = ParamStore::new();
    let params = IafaParams::init(&mut store, "iafa", &icfg, rng)?;
    let ids: Vec<_> = store.iter().map(|(id, _)| id).collect();
    // a live alpha so every path carries gradient
    store.tensor_mut(params.alpha).data_mut()[0] = rng.gen_range(0.2..1.0);
    for &id in &ids {
        for v in store.tensor_mut(id).data_mut() {
            *v += rng.gen_range(-0.3..0.3);
        }
    }
    let (ih, iw) = icfg.interior(h, w)?;
    let d = ih * iw;
    let masks: Vec<(usize, Vec<bool>)> = (0..dims(rng, 1, 2))
        .map(|_| {
            let mut m: Vec<bool> = (0..d).map(|_| rng.gen_bool(0.4)).collect();
            m[rng.gen_range(0..d)] = true;
            (rng.gen_range(0..d), m)
        })
        .collect();
    let n_in = h * w * channels;
    let mut x = uniform(n_in, -1.0, 1.0, rng);
    for &id in &ids {
        x.extend_from_slice(store.tensor(id).data());
    }
    let proj = uniform(n_in, -1.0, 1.0, rng);
    let mut f = |x: &[f64]| -> Result<(f64, Vec<f64>)> {
        let mut s = store.clone();
        let mut at = n_in;
        for &id in &ids {
            let t = s.tensor_mut(id).data_mut();
            let n = t.len();
            t.copy_from_slice(&x[at..at + n]);
            at += n;
        }
        let mut g = Graph::new();
        let input = g.variable(Tensor::from_vec(&[h, w, channels], x[..n_in].to_vec())?);
        let nodes = record_iafa(&mut g, &s, input, &params, &icfg)?;
        let rel = RelationMap::from_tensor(g.value(nodes.relation), ih, iw)?;
        let instances: Vec<_> =
            masks.iter().map(|(c, m)| crate::targets::MaskInstance { center: *c, mask: m }).collect();
        let mask = mask_focal_loss(&rel, &instances, 2.0, true)?;
        let value = g.value(nodes.enhanced).data().iter().zip(&proj).map(|(a, b)| a * b).sum::<f64>() + mask.value;
        let grads = g.backward(&[(nodes.enhanced, proj.as_slice()), (nodes.relation, mask.grad.as_slice())])?;
        s.zero_grads();
        grads.accumulate_into(&mut s);
        let mut flat = grads.get(input).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; n_in]);
        for &id in &ids {
            flat.extend_from_slice(s.tensor(id).grad().expect("zeroed above"));
        }
        Ok((value, flat))
    };
    check_function(&x, &mut f, cfg.step, cfg.max_coords, rng)
}

fn scene_targets(rng: &mut ChaCha8Rng) -> Result<(crate::data::SyntheticScene, crate::targets::TargetMaps)> {
    let scene = generate_scene(rng.gen(), &SceneConfig::default())?;
    let targets = scene.targets(&TargetConfig::default())?;
    Ok((scene, targets))
}

fn case_centerness(cfg: &GradcheckConfig, rng: &mut ChaCha8Rng) -> Result<f64> {
    let (_, t) = scene_targets(rng)?;
    let shape = t.heatmap.shape().to_vec();
    let x = uniform(t.heatmap.numel(), 0.01, 0.99, rng);
    let mut f = |x: &[f64]| -> Result<(f64, Vec<f64>)> {
        let pred = Tensor::from_vec(&shape, x.to_vec())?;
        let l = centerness_focal_loss(&pred, &t.heatmap, 2.0, 4.0)?;
        Ok((l.value, l.grad))
    };
    check_function(&x, &mut f, cfg.step, cfg.max_coords, rng)
}

/// Regression map holding perturbed ground-truth attributes at every center.
fn case_corners(cfg: &GradcheckConfig, rng: &mut ChaCha8Rng) -> Result<f64> {
    let (scene, t) = scene_targets(rng)?;
    let (fh, fw) = (t.heatmap.shape()[0], t.heatmap.shape()[1]);
    let mut x = uniform(fh * fw * REG_CHANNELS, -0.5, 0.5, rng);
    let k: CameraIntrinsics = scene.intrinsics;
    let class = ClassInfo::car();
    for o in &t.objects {
        let (cell, attrs) = encode_attributes(&o.box3d, &k, 4.0, class.mean_dims)?;
        let base = (cell.1 * fw + cell.0) * REG_CHANNELS;
        for (c, a) in attrs.iter().enumerate() {
            x[base + c] = a + rng.gen_range(-0.15..0.15);
        }
    }
    let classes = [class];
    let f = |x: &[f64]| -> Result<(f64, Vec<f64>)> {
        let reg = Tensor::from_vec(&[fh, fw, REG_CHANNELS], x.to_vec())?;
        let l = corners_regression_loss(&reg, &t, &k, 4.0, &classes)?;
        Ok((l.value, l.grad))
    };
    // only the center cells carry gradient; probe those
    let live: Vec<usize> = t
        .objects
        .iter()
        .flat_map(|o| {
            let base = (o.cell.1 * fw + o.cell.0) * REG_CHANNELS;
            base..base + REG_CHANNELS
        })
        .collect();
    let mut sub = |y: &[f64]| -> Result<(f64, Vec<f64>)> {
        let mut full = x.clone();
        for (&i, &v) in live.iter().zip(y) {
            full[i] = v;
        }
        let (v, g) = f(&full)?;
        Ok((v, live.iter().map(|&i| g[i]).collect()))
    };
    let y: Vec<f64> = live.iter().map(|&i| x[i]).collect();
    check_function(&y, &mut sub, cfg.step, cfg.max_coords, rng)
}

fn case_mask(cfg: &GradcheckConfig, rng: &mut ChaCha8Rng) -> Result<f64> {
    let (_, t) = scene_targets(rng)?;
    let (ih, iw) = t.interior;
    let d = ih * iw;
    let background = rng.gen_bool(0.5);
    let mut x = uniform(d * d, 0.05, 1.0, rng);
    for row in x.chunks_mut(d) {
        let s: f64 = row.iter().sum();
        row.iter_mut().for_each(|v| *v /= s);
    }
    let instances = t.mask_instances();
    let rows: Vec<usize> = instances.iter().map(|m| m.center).collect();
    // probe the supervised rows only
    let live: Vec<usize> = rows.iter().flat_map(|&r| r * d..(r + 1) * d).collect();
    let mut f = |y: &[f64]| -> Result<(f64, Vec<f64>)> {
        let mut full = x.clone();
        for (&i, &v) in live.iter().zip(y) {
            full[i] = v;
        }
        let g = RelationMap::from_rows(ih, iw, full)?;
        let l = mask_focal_loss(&g, &instances, 2.0, background)?;
        Ok((l.value, live.iter().map(|&i| l.grad[i]).collect()))
    };
    let y: Vec<f64> = live.iter().map(|&i| x[i]).collect();
    let err = check_function(&y, &mut f, cfg.step, cfg.max_coords, rng)?;
    x.clear();
    Ok(err)
}

/// Full weighted loss of a 32×32 detector with respect to randomly chosen
/// parameter entries.
fn case_detector(cfg: &GradcheckConfig, rng: &mut ChaCha8Rng) -> Result<f64> {
    let dcfg = DetectorConfig { width: 32, height: 32, ..DetectorConfig::default() };
    let scfg = SceneConfig {
        width: 32,
        height: 32,
        intrinsics: CameraIntrinsics::new(24.0, 24.0, 16.0, 12.0)?,
        objects: (1, 2),
        depth_range: (6.0, 20.0),
        ..SceneConfig::default()
    };
    let scene = generate_scene(rng.gen(), &scfg)?;
    let prepared = PreparedScene::new(&scene, &dcfg)?;
    let mut det = Detector::new(dcfg, rng.gen())?;
    det.store.tensor_mut(det.params.iafa.alpha).data_mut()[0] = rng.gen_range(0.2..1.0);
    let weights = LossWeights::new(rng.gen_range(0.5..1.5), rng.gen_range(0.5..1.5), rng.gen_range(0.5..1.5))?;
    let entries: Vec<(crate::tensor::ParamId, usize)> = {
        let all: Vec<_> = det.store.iter().flat_map(|(id, p)| (0..p.tensor.numel()).map(move |i| (id, i))).collect();
        sample(rng, all.len(), 20).into_iter().map(|i| all[i]).collect()
    };
    let x: Vec<f64> = entries.iter().map(|&(id, i)| det.store.tensor(id).data()[i]).collect();
    let mut f = |y: &[f64]| -> Result<(f64, Vec<f64>)> {
        for (&(id, i), &v) in entries.iter().zip(y) {
            det.store.tensor_mut(id).data_mut()[i] = v;
        }
        let parts = loss_and_gradients(&mut det, &prepared, &weights, true)?;
        let total = weights.center * parts.center + weights.reg * parts.reg + weights.mask * parts.mask;
        let grad = entries.iter().map(|&(id, i)| det.store.tensor(id).grad().map_or(0.0, |g| g[i])).collect();
        Ok((total, grad))
    };
    check_function(&x, &mut f, cfg.step, x.len(), rng)
}

type Case = fn(&GradcheckConfig, &mut ChaCha8Rng) -> Result<f64>;

pub const CASES: [(&str, Case); 16] = [
    ("matmul", case_matmul),
    ("matmul_nt", case_matmul_nt),
    ("conv1x1", case_conv1x1),
    ("conv3x3", case_conv3x3),
    ("relu", case_relu),
    ("sigmoid", case_sigmoid),
    ("tanh_channel", case_tanh_channel),
    ("group_norm", case_group_norm),
    ("resample_bilinear", case_resample),
    ("add_scale", case_add_scale),
    ("row_l1_normalize", case_row_normalize),
    ("iafa_end_to_end", case_iafa),
    ("centerness_focal", case_centerness),
    ("corner_regression", case_corners),
    ("mask_focal", case_mask),
    ("detector_full", case_detector),
];

/// Runs every case; trial `t` of a case uses seed `cfg.seed + t`.
pub fn run_gradcheck(cfg: &GradcheckConfig) -> Result<GradcheckReport> {
    let mut cases = Vec::with_capacity(CASES.len());
    for (name, case) in CASES {
        let trials = if name == "detector_full" { (cfg.trials / 20).max(1) } else { cfg.trials };
        let mut report = CaseReport { name: name.to_string(), trials, worst: 0.0, worst_seed: cfg.seed };
        for t in 0..trials as u64 {
            let seed = cfg.seed.wrapping_add(t);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let err = case(cfg, &mut rng)?;
            if !(err <= report.worst) {
                report.worst = err;
                report.worst_seed = seed;
            }
        }
        log::info!("{name}: worst {:.3e} over {trials} trials", report.worst);
        cases.push(report);
    }
    Ok(GradcheckReport { tolerance: cfg.tolerance, cases })
}
