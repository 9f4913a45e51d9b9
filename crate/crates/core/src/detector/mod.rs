//! A small stride-4 center-point detector: four 3×3 conv stages, the IAFA
//! branch, and 1×1 classification and regression heads.

mod train;

pub use train::{
    attention_masses, loss_and_gradients, mean_train_iou, train, write_loss_csv, LossRecord, OccludedMass,
    PreparedScene, TrainConfig,
};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Box3D, CameraIntrinsics};
use crate::iafa::{record_iafa, IafaConfig, IafaParams, RelationMap};
use crate::targets::{decode_attributes, ClassInfo, TargetConfig, DEPTH, REG_CHANNELS};
use crate::tensor::{Graph, NodeId, ParamId, ParamStore, Tensor};

/// Initial heatmap logit, `-ln((1 - 0.1) / 0.1)`.
const HEATMAP_PRIOR: f64 = -2.19;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    pub width: usize,
    pub height: usize,
    pub backbone_channels: [usize; 4],
    pub backbone_strides: [usize; 4],
    pub head_channels: usize,
    pub classes: Vec<ClassInfo>,
    pub iafa: IafaConfig,
    pub targets: TargetConfig,
    pub decode_threshold: f64,
    pub top_k: usize,
    pub focal_alpha: f64,
    pub focal_beta: f64,
    pub mask_alpha: f64,
    /// Adds the background term to the mask loss.
    pub mask_background: bool,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            width: 96,
            height: 32,
            backbone_channels: [16, 32, 64, 64],
            backbone_strides: [2, 1, 2, 1],
            head_channels: 256,
            classes: vec![ClassInfo::car()],
            iafa: IafaConfig::default(),
            targets: TargetConfig::default(),
            decode_threshold: 0.25,
            top_k: 100,
            focal_alpha: 2.0,
            focal_beta: 4.0,
            mask_alpha: 2.0,
            mask_background: false,
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        self.iafa.validate()?;
        let stride: usize = self.backbone_strides.iter().product();
        if stride != self.targets.stride {
            return Err(Error::Config(format!(
                "backbone stride {stride} differs from target stride {}",
                self.targets.stride
            )));
        }
        if self.iafa.downscale != self.targets.interior_downscale {
            return Err(Error::Config("IAFA and target interior downscale differ".into()));
        }
        let f = self.targets.mask_factor();
        if !self.width.is_multiple_of(f) || !self.height.is_multiple_of(f) || self.width == 0 || self.height == 0 {
            return Err(Error::Config(format!(
                "input {}x{} must be a positive multiple of {f}",
                self.width, self.height
            )));
        }
        if self.backbone_channels[3] != self.iafa.channels {
            return Err(Error::Config("last backbone stage must match IAFA channels".into()));
        }
        if self.classes.is_empty() || self.head_channels == 0 || self.backbone_channels.contains(&0) {
            return Err(Error::Config("class list, head width and stage widths must be nonempty".into()));
        }
        Ok(())
    }

    pub fn feature_extent(&self) -> (usize, usize) {
        (self.height / self.targets.stride, self.width / self.targets.stride)
    }

    pub fn interior_extent(&self) -> (usize, usize) {
        let f = self.targets.mask_factor();
        (self.height / f, self.width / f)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ConvParams {
    pub weight: ParamId,
    pub bias: ParamId,
}

#[derive(Clone, Debug)]
pub struct DetectorParams {
    pub backbone: [ConvParams; 4],
    pub iafa: IafaParams,
    pub cls: [ConvParams; 2],
    pub reg: [ConvParams; 2],
}

fn add_conv(
    store: &mut ParamStore,
    name: &str,
    fan_in: usize,
    cout: usize,
    std: f64,
    bias: &[f64],
    rng: &mut ChaCha8Rng,
) -> Result<ConvParams> {
    let d = Normal::new(0.0, std).map_err(|e| Error::Config(e.to_string()))?;
    let w = (0..fan_in * cout).map(|_| d.sample(rng)).collect();
    Ok(ConvParams {
        weight: store.add(format!("{name}.weight"), Tensor::from_vec(&[fan_in, cout], w)?)?,
        bias: store.add(format!("{name}.bias"), Tensor::from_vec(&[cout], bias.to_vec())?)?,
    })
}

impl DetectorParams {
    pub fn init(store: &mut ParamStore, cfg: &DetectorConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut cin = 3;
        let mut backbone = Vec::with_capacity(4);
        for (i, &c) in cfg.backbone_channels.iter().enumerate() {
            let fan_in = 9 * cin;
            backbone.push(add_conv(
                store,
                &format!("backbone.stage{}", i + 1),
                fan_in,
                c,
                (2.0 / fan_in as f64).sqrt(),
                &vec![0.0; c],
                &mut rng,
            )?);
            cin = c;
        }
        let iafa = IafaParams::init(store, "iafa", &cfg.iafa, &mut rng)?;
        let (c, hc) = (cin, cfg.head_channels);
        let he = (2.0 / c as f64).sqrt();
        let ncls = cfg.classes.len();
        let cls = [
            add_conv(store, "head.cls.conv1", c, hc, he, &vec![0.0; hc], &mut rng)?,
            add_conv(store, "head.cls.conv2", hc, ncls, 0.01, &vec![HEATMAP_PRIOR; ncls], &mut rng)?,
        ];
        // mid-cell offsets, mid-range depth, class-mean dims, facing angle 0
        let reg_bias = [0.5, 0.5, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0];
        let reg = [
            add_conv(store, "head.reg.conv1", c, hc, he, &vec![0.0; hc], &mut rng)?,
            add_conv(store, "head.reg.conv2", hc, REG_CHANNELS, 0.01, &reg_bias, &mut rng)?,
        ];
        Ok(DetectorParams { backbone: backbone.try_into().expect("four stages"), iafa, cls, reg })
    }

    /// Recovers ids by name from a store with the layout of [`DetectorParams::init`].
    pub fn find(store: &ParamStore) -> Result<Self> {
        let conv = |name: &str| -> Result<ConvParams> {
            let get = |n: String| store.id(&n).ok_or_else(|| Error::Input(format!("missing parameter `{n}`")));
            Ok(ConvParams { weight: get(format!("{name}.weight"))?, bias: get(format!("{name}.bias"))? })
        };
        Ok(DetectorParams {
            backbone: [
                conv("backbone.stage1")?,
                conv("backbone.stage2")?,
                conv("backbone.stage3")?,
                conv("backbone.stage4")?,
            ],
            iafa: IafaParams::find(store, "iafa")?,
            cls: [conv("head.cls.conv1")?, conv("head.cls.conv2")?],
            reg: [conv("head.reg.conv1")?, conv("head.reg.conv2")?],
        })
    }
}

/// Post-activation head outputs of one image.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadOutputs {
    /// `[H/4, W/4, classes]`, in `(0, 1)`.
    pub heatmap: Tensor,
    /// `[H/4, W/4, 8]`, depth channel in `[-1, 1]`.
    pub regression: Tensor,
    pub relation: Option<RelationMap>,
}

/// Tape nodes of a recorded forward pass.
#[derive(Clone, Copy, Debug)]
pub struct ForwardNodes {
    pub backbone: NodeId,
    pub features: NodeId,
    pub heatmap: NodeId,
    pub regression: NodeId,
    pub relation: Option<NodeId>,
}

#[derive(Clone, Debug)]
pub struct Detector {
    pub cfg: DetectorConfig,
    pub store: ParamStore,
    pub params: DetectorParams,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Detection {
    pub box3d: Box3D,
    pub class: usize,
    pub score: f64,
    /// Feature cell `(x, y)` the detection was decoded from.
    pub cell: (usize, usize),
}

/// Centers the image around zero.
pub fn normalize_image(image: &Tensor) -> Tensor {
    let data = image.data().iter().map(|v| v - 0.5).collect();
    Tensor::from_vec(image.shape(), data).expect("same shape")
}

impl Detector {
    pub fn new(cfg: DetectorConfig, seed: u64) -> Result<Self> {
        let mut store = ParamStore::new();
        let params = DetectorParams::init(&mut store, &cfg, seed)?;
        Ok(Detector { cfg, store, params })
    }

    pub fn from_store(cfg: DetectorConfig, store: ParamStore) -> Result<Self> {
        cfg.validate()?;
        let params = DetectorParams::find(&store)?;
        let fresh = Detector::new(cfg.clone(), 0)?;
        for (_, p) in fresh.store.iter() {
            let id = store.id(&p.name).expect("found above");
            if store.get(id).tensor.shape() != p.tensor.shape() {
                return Err(Error::Input(format!(
                    "parameter `{}` has shape {:?}, config expects {:?}",
                    p.name,
                    store.get(id).tensor.shape(),
                    p.tensor.shape()
                )));
            }
        }
        Ok(Detector { cfg, store, params })
    }

    /// Records the forward pass of a normalized `[H, W, 3]` image.
    pub fn record(&self, graph: &mut Graph, image: &Tensor, use_iafa: bool) -> Result<ForwardNodes> {
        let (h, w, c) = image.hwc()?;
        if (h, w, c) != (self.cfg.height, self.cfg.width, 3) {
            return Err(Error::dim("detector input", image.shape(), &[self.cfg.height, self.cfg.width, 3]));
        }
        let store = &self.store;
        let mut x = graph.constant(image.clone());
        for (p, &stride) in self.params.backbone.iter().zip(&self.cfg.backbone_strides) {
            let (wt, b) = (graph.param(store, p.weight), graph.param(store, p.bias));
            let y = graph.conv3x3(x, wt, b, stride)?;
            x = graph.relu(y);
        }
        let backbone = x;
        let (features, relation) = if use_iafa {
            let n = record_iafa(graph, store, backbone, &self.params.iafa, &self.cfg.iafa)?;
            (n.enhanced, Some(n.relation))
        } else {
            (backbone, None)
        };
        let head = |graph: &mut Graph, p: &[ConvParams; 2]| -> Result<NodeId> {
            let (w1, b1) = (graph.param(store, p[0].weight), graph.param(store, p[0].bias));
            let hidden = graph.conv1x1(features, w1, b1)?;
            let hidden = graph.relu(hidden);
            let (w2, b2) = (graph.param(store, p[1].weight), graph.param(store, p[1].bias));
            graph.conv1x1(hidden, w2, b2)
        };
        let logits = head(graph, &self.params.cls)?;
        let heatmap = graph.sigmoid(logits);
        let raw = head(graph, &self.params.reg)?;
        let regression = graph.tanh_channel(raw, DEPTH)?;
        Ok(ForwardNodes { backbone, features, heatmap, regression, relation })
    }

    /// Runs the network on a raw `[H, W, 3]` image in `[0, 1]`.
    pub fn forward(&self, image: &Tensor, use_iafa: bool) -> Result<HeadOutputs> {
        let mut graph = Graph::new();
        let nodes = self.record(&mut graph, &normalize_image(image), use_iafa)?;
        let relation = match nodes.relation {
            Some(g) => {
                let (ih, iw) = self.cfg.interior_extent();
                Some(RelationMap::from_tensor(graph.value(g), ih, iw)?)
            }
            None => None,
        };
        Ok(HeadOutputs {
            heatmap: graph.value(nodes.heatmap).clone(),
            regression: graph.value(nodes.regression).clone(),
            relation,
        })
    }

    pub fn detect(&self, image: &Tensor, k: &CameraIntrinsics, use_iafa: bool) -> Result<Vec<Detection>> {
        decode(&self.forward(image, use_iafa)?, k, &self.cfg)
    }
}

/// Cells that are at least as large as all eight neighbors in their class
/// channel and above `threshold`, as `(score, flat index)`.
fn peaks(heatmap: &Tensor, threshold: f64) -> Result<Vec<(f64, usize)>> {
    let (h, w, c) = heatmap.hwc()?;
    let d = heatmap.data();
    let mut out = Vec::new();
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let v = d[(y * w + x) * c + ch];
                if !(v > threshold) {
                    continue;
                }
                let mut is_max = true;
                'scan: for ny in y.saturating_sub(1)..=(y + 1).min(h - 1) {
                    for nx in x.saturating_sub(1)..=(x + 1).min(w - 1) {
                        if d[(ny * w + nx) * c + ch] > v {
                            is_max = false;
                            break 'scan;
                        }
                    }
                }
                if is_max {
                    out.push((v, (y * w + x) * c + ch));
                }
            }
        }
    }
    Ok(out)
}

/// Peak extraction and box decoding: 3×3 local maxima above the threshold,
/// highest scores first (ties by lower flat index), at most `top_k`.
pub fn decode(out: &HeadOutputs, k: &CameraIntrinsics, cfg: &DetectorConfig) -> Result<Vec<Detection>> {
    let (h, w, c) = out.heatmap.hwc()?;
    if out.regression.shape() != [h, w, REG_CHANNELS] {
        return Err(Error::dim("decode", out.heatmap.shape(), out.regression.shape()));
    }
    if c != cfg.classes.len() {
        return Err(Error::dim("decode classes", out.heatmap.shape(), &[cfg.classes.len()]));
    }
    let mut found = peaks(&out.heatmap, cfg.decode_threshold)?;
    found.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    found.truncate(cfg.top_k);
    let stride = cfg.targets.stride as f64;
    found
        .into_iter()
        .map(|(score, flat)| {
            let class = flat % c;
            let cell_index = flat / c;
            let cell = (cell_index % w, cell_index / w);
            let attrs = &out.regression.data()[cell_index * REG_CHANNELS..(cell_index + 1) * REG_CHANNELS];
            let decoded = decode_attributes(cell, attrs, k, stride, cfg.classes[class].mean_dims)?;
            Ok(Detection { box3d: decoded.box3d, class, score, cell })
        })
        .collect()
}
