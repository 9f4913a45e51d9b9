//! Instance-aware feature aggregation.
//!
//! The branch downsamples the backbone features, builds a row-stochastic
//! relation map `G = rownorm(sigmoid(F1 · F2ᵀ))` from two small conv stacks,
//! mixes the downsampled features with `G`, upsamples the result and adds it
//! back scaled by a learnable scalar `alpha` (initialized to zero, so the
//! branch starts as an exact identity).

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{ops, Graph, NodeId, ParamId, ParamStore, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IafaConfig {
    /// Backbone channel count `C`.
    pub channels: usize,
    /// Width multiplier of the relation branches (`4C`).
    pub expansion: usize,
    /// Interior downscale factor.
    pub downscale: usize,
    /// Group-norm group count.
    pub groups: usize,
    pub norm_eps: f64,
}

impl Default for IafaConfig {
    fn default() -> Self {
        IafaConfig { channels: 64, expansion: 4, downscale: 2, groups: 8, norm_eps: 1e-5 }
    }
}

impl IafaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.expansion == 0 || self.downscale == 0 || self.groups == 0 {
            return Err(Error::Config("IAFA counts must all be >= 1".into()));
        }
        if !self.branch_channels().is_multiple_of(self.groups) {
            return Err(Error::Config(format!(
                "IAFA branch width {} not divisible by {} groups",
                self.branch_channels(),
                self.groups
            )));
        }
        Ok(())
    }

    pub fn branch_channels(&self) -> usize {
        self.channels * self.expansion
    }

    /// Interior `(h, w)` for a feature map of extent `(h, w)`.
    pub fn interior(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        if !h.is_multiple_of(self.downscale) || !w.is_multiple_of(self.downscale) {
            return Err(Error::Config(format!(
                "feature extents {h}x{w} not divisible by interior downscale {}",
                self.downscale
            )));
        }
        Ok((h / self.downscale, w / self.downscale))
    }
}

/// Parameters of one relation branch: conv1x1 → ReLU → group norm → conv1x1.
#[derive(Clone, Copy, Debug)]
pub struct BranchParams {
    pub conv1_weight: ParamId,
    pub conv1_bias: ParamId,
    pub norm_scale: ParamId,
    pub norm_shift: ParamId,
    pub conv2_weight: ParamId,
    pub conv2_bias: ParamId,
}

impl BranchParams {
    fn init(store: &mut ParamStore, prefix: &str, cfg: &IafaConfig, rng: &mut impl Rng) -> Result<Self> {
        let (c, e) = (cfg.channels, cfg.branch_channels());
        let he = Normal::new(0.0, (2.0 / c as f64).sqrt()).expect("finite std");
        // keeps F1·F2ᵀ entries O(1) at init so the sigmoid is not saturated
        let small = Normal::new(0.0, 0.25 / e as f64).expect("finite std");
        Ok(BranchParams {
            conv1_weight: store
                .add(format!("{prefix}.conv1.weight"), Tensor::from_vec(&[c, e], sample(c * e, &he, rng))?)?,
            conv1_bias: store.add(format!("{prefix}.conv1.bias"), Tensor::zeros(&[e])?)?,
            norm_scale: store.add(format!("{prefix}.norm.scale"), Tensor::full(&[e], 1.0)?)?,
            norm_shift: store.add(format!("{prefix}.norm.shift"), Tensor::zeros(&[e])?)?,
            conv2_weight: store
                .add(format!("{prefix}.conv2.weight"), Tensor::from_vec(&[e, e], sample(e * e, &small, rng))?)?,
            conv2_bias: store.add(format!("{prefix}.conv2.bias"), Tensor::zeros(&[e])?)?,
        })
    }

    pub fn ids(&self) -> [ParamId; 6] {
        [self.conv1_weight, self.conv1_bias, self.norm_scale, self.norm_shift, self.conv2_weight, self.conv2_bias]
    }
}

fn sample(n: usize, dist: &Normal<f64>, rng: &mut impl Rng) -> Vec<f64> {
    (0..n).map(|_| dist.sample(rng)).collect()
}

#[derive(Clone, Copy, Debug)]
pub struct IafaParams {
    pub branch_a: BranchParams,
    pub branch_b: BranchParams,
    pub alpha: ParamId,
}

impl IafaParams {
    /// Registers the branch parameters under `{prefix}.a.*`, `{prefix}.b.*`
    /// and `{prefix}.alpha` (initialized to zero).
    pub fn init(store: &mut ParamStore, prefix: &str, cfg: &IafaConfig, rng: &mut impl Rng) -> Result<Self> {
        cfg.validate()?;
        Ok(IafaParams {
            branch_a: BranchParams::init(store, &format!("{prefix}.a"), cfg, rng)?,
            branch_b: BranchParams::init(store, &format!("{prefix}.b"), cfg, rng)?,
            alpha: store.add(format!("{prefix}.alpha"), Tensor::scalar(0.0))?,
        })
    }

    /// Looks parameters up by name, for stores loaded from a checkpoint.
    pub fn find(store: &ParamStore, prefix: &str) -> Result<Self> {
        let get = |name: String| store.id(&name).ok_or_else(|| Error::Input(format!("missing parameter `{name}`")));
        let branch = |p: &str| -> Result<BranchParams> {
            Ok(BranchParams {
                conv1_weight: get(format!("{prefix}.{p}.conv1.weight"))?,
                conv1_bias: get(format!("{prefix}.{p}.conv1.bias"))?,
                norm_scale: get(format!("{prefix}.{p}.norm.scale"))?,
                norm_shift: get(format!("{prefix}.{p}.norm.shift"))?,
                conv2_weight: get(format!("{prefix}.{p}.conv2.weight"))?,
                conv2_bias: get(format!("{prefix}.{p}.conv2.bias"))?,
            })
        };
        Ok(IafaParams { branch_a: branch("a")?, branch_b: branch("b")?, alpha: get(format!("{prefix}.alpha"))? })
    }
}

/// `G`: a `d × d` row-stochastic matrix over the interior grid, `d = h·w`.
/// Row `i` is how interior pixel `i` attends over all pixels.
#[derive(Clone, Debug, PartialEq)]
pub struct RelationMap {
    pub height: usize,
    pub width: usize,
    values: Vec<f64>,
}

impl RelationMap {
    pub fn from_tensor(g: &Tensor, height: usize, width: usize) -> Result<Self> {
        let (r, c) = g.matrix()?;
        let d = height * width;
        if r != d || c != d {
            return Err(Error::dim("relation map", g.shape(), &[d, d]));
        }
        Ok(RelationMap { height, width, values: g.data().to_vec() })
    }

    /// Builds a relation map from arbitrary rows; used for forcing `G` in tests and tools.
    pub fn from_rows(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        let d = height * width;
        if values.len() != d * d {
            return Err(Error::dim("relation map", &[values.len()], &[d, d]));
        }
        Ok(RelationMap { height, width, values })
    }

    pub fn identity(height: usize, width: usize) -> Self {
        let d = height * width;
        let mut values = vec![0.0; d * d];
        for i in 0..d {
            values[i * d + i] = 1.0;
        }
        RelationMap { height, width, values }
    }

    pub fn uniform(height: usize, width: usize) -> Self {
        let d = height * width;
        RelationMap { height, width, values: vec![1.0 / d as f64; d * d] }
    }

    pub fn size(&self) -> usize {
        self.height * self.width
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let d = self.size();
        &self.values[i * d..(i + 1) * d]
    }

    pub fn to_tensor(&self) -> Tensor {
        let d = self.size();
        Tensor::from_vec(&[d, d], self.values.clone()).expect("square")
    }

    /// Row `center` reshaped onto the interior grid (row-major `h × w`).
    pub fn attention_row_for_center(&self, center: usize) -> Result<Vec<f64>> {
        if center >= self.size() {
            return Err(Error::Input(format!("interior index {center} out of range for {} pixels", self.size())));
        }
        Ok(self.row(center).to_vec())
    }
}

/// Output nodes of a recorded IAFA pass.
#[derive(Clone, Copy, Debug)]
pub struct IafaNodes {
    pub enhanced: NodeId,
    /// `G`, shaped `[d, d]`.
    pub relation: NodeId,
    pub interior: (usize, usize),
}

/// Records one relation branch on `x: [h, w, C]`, returning `[h, w, 4C]`.
pub fn record_branch(
    graph: &mut Graph,
    store: &ParamStore,
    x: NodeId,
    p: &BranchParams,
    cfg: &IafaConfig,
) -> Result<NodeId> {
    let c = graph.value(x).hwc()?.2;
    if c != cfg.channels {
        return Err(Error::dim("IAFA branch", graph.value(x).shape(), &[cfg.channels]));
    }
    let [w1, b1, gs, gb, w2, b2] = p.ids().map(|id| graph.param(store, id));
    let h = graph.conv1x1(x, w1, b1)?;
    let h = graph.relu(h);
    let h = graph.group_norm(h, cfg.groups, gs, gb, cfg.norm_eps)?;
    graph.conv1x1(h, w2, b2)
}

/// Records `G = rownorm(sigmoid(F1' · F2'ᵀ))` for `f1, f2: [h, w, E]`.
pub fn record_relation(graph: &mut Graph, f1: NodeId, f2: NodeId) -> Result<NodeId> {
    let (h, w, e) = graph.value(f1).hwc()?;
    if graph.value(f2).shape() != [h, w, e] {
        return Err(Error::dim("relation_map", graph.value(f1).shape(), graph.value(f2).shape()));
    }
    let d = h * w;
    let a = graph.reshape(f1, &[d, e])?;
    let b = graph.reshape(f2, &[d, e])?;
    let s = graph.matmul_nt(a, b)?;
    let s = graph.sigmoid(s);
    graph.row_l1_normalize(s)
}

/// Records `G · flatten(x)` reshaped back to `[h, w, C]`.
pub fn record_aggregate(graph: &mut Graph, g: NodeId, x: NodeId) -> Result<NodeId> {
    let (h, w, c) = graph.value(x).hwc()?;
    let (rows, cols) = graph.value(g).matrix()?;
    if rows != h * w || cols != h * w {
        return Err(Error::dim("aggregate", graph.value(g).shape(), &[h, w, c]));
    }
    let flat = graph.reshape(x, &[h * w, c])?;
    let mixed = graph.matmul(g, flat)?;
    graph.reshape(mixed, &[h, w, c])
}

/// Records the full branch on backbone features `[H, W, C]`.
pub fn record_iafa(
    graph: &mut Graph,
    store: &ParamStore,
    backbone: NodeId,
    params: &IafaParams,
    cfg: &IafaConfig,
) -> Result<IafaNodes> {
    cfg.validate()?;
    let (h, w, c) = graph.value(backbone).hwc()?;
    if c != cfg.channels {
        return Err(Error::dim("IAFA input", graph.value(backbone).shape(), &[cfg.channels]));
    }
    let (ih, iw) = cfg.interior(h, w)?;
    let small = graph.resample_bilinear(backbone, ih, iw)?;
    let f1 = record_branch(graph, store, small, &params.branch_a, cfg)?;
    let f2 = record_branch(graph, store, small, &params.branch_b, cfg)?;
    let g = record_relation(graph, f1, f2)?;
    let mixed = record_aggregate(graph, g, small)?;
    let up = graph.resample_bilinear(mixed, h, w)?;
    let alpha = graph.param(store, params.alpha);
    let scaled = graph.scale(up, alpha)?;
    let enhanced = graph.add(backbone, scaled)?;
    Ok(IafaNodes { enhanced, relation: g, interior: (ih, iw) })
}

// ---------------------------------------------------------------------------
// value-level API

/// Runs one relation branch on plain values.
pub fn branch_ab(x: &Tensor, store: &ParamStore, p: &BranchParams, cfg: &IafaConfig) -> Result<Tensor> {
    let mut g = Graph::new();
    let xn = g.constant(x.clone());
    let out = record_branch(&mut g, store, xn, p, cfg)?;
    Ok(g.value(out).clone())
}

pub fn relation_map(f1: &Tensor, f2: &Tensor) -> Result<RelationMap> {
    let (h, w, e) = f1.hwc()?;
    if f2.shape() != [h, w, e] {
        return Err(Error::dim("relation_map", f1.shape(), f2.shape()));
    }
    let d = h * w;
    let a = f1.clone().reshape(&[d, e])?;
    let b = f2.clone().reshape(&[d, e])?;
    let g = ops::row_l1_normalize(&ops::sigmoid(&ops::matmul_nt(&a, &b)?))?;
    RelationMap::from_tensor(&g, h, w)
}

pub fn aggregate(g: &RelationMap, x: &Tensor) -> Result<Tensor> {
    let (h, w, c) = x.hwc()?;
    if g.size() != h * w {
        return Err(Error::dim("aggregate", &[g.size(), g.size()], x.shape()));
    }
    let flat = x.clone().reshape(&[h * w, c])?;
    ops::matmul(&g.to_tensor(), &flat)?.reshape(&[h, w, c])
}

/// Downsample → aggregate with a given `G` → upsample → `f + alpha · agg`.
pub fn enhance(f: &Tensor, g: &RelationMap, alpha: f64, cfg: &IafaConfig) -> Result<Tensor> {
    let (h, w, _) = f.hwc()?;
    let (ih, iw) = cfg.interior(h, w)?;
    if (g.height, g.width) != (ih, iw) {
        return Err(Error::dim("enhance", &[g.height, g.width], &[ih, iw]));
    }
    let small = ops::resample_bilinear(f, ih, iw)?;
    let up = ops::resample_bilinear(&aggregate(g, &small)?, h, w)?;
    ops::add(f, &ops::scale(&up, &Tensor::scalar(alpha))?)
}

pub fn iafa_forward(
    f: &Tensor,
    store: &ParamStore,
    params: &IafaParams,
    cfg: &IafaConfig,
) -> Result<(Tensor, RelationMap)> {
    let mut g = Graph::new();
    let x = g.constant(f.clone());
    let nodes = record_iafa(&mut g, store, x, params, cfg)?;
    let (ih, iw) = nodes.interior;
    let rel = RelationMap::from_tensor(g.value(nodes.relation), ih, iw)?;
    Ok((g.value(nodes.enhanced).clone(), rel))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random(dims: &[usize], rng: &mut impl Rng) -> Tensor {
        let n = dims.iter().product();
        Tensor::from_vec(dims, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    fn setup(c: usize) -> (ParamStore, IafaParams, IafaConfig, ChaCha8Rng) {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let cfg = IafaConfig { channels: c, ..IafaConfig::default() };
        let mut store = ParamStore::new();
        let params = IafaParams::init(&mut store, "iafa", &cfg, &mut rng).unwrap();
        (store, params, cfg, rng)
    }

    #[test]
    fn config_validation() {
        assert!(IafaConfig { channels: 3, expansion: 1, ..IafaConfig::default() }.validate().is_err());
        assert!(IafaConfig::default().validate().is_ok());
        assert!(IafaConfig::default().interior(7, 8).is_err());
    }

    #[test]
    fn branch_shape_law_and_zero_input() {
        for c in [2, 4, 6] {
            let (store, params, cfg, mut rng) = setup(c);
            let x = random(&[3, 5, c], &mut rng);
            let y = branch_ab(&x, &store, &params.branch_a, &cfg).unwrap();
            assert_eq!(y.shape(), &[3, 5, 4 * c]);
            let zero = Tensor::zeros(&[3, 5, c]).unwrap();
            let y0 = branch_ab(&zero, &store, &params.branch_a, &cfg).unwrap();
            assert!(y0.data().iter().all(|&v| v == 0.0));
            let wrong = Tensor::zeros(&[3, 5, c + 1]).unwrap();
            assert!(matches!(branch_ab(&wrong, &store, &params.branch_a, &cfg), Err(Error::Dimension { .. })));
        }
    }

    #[test]
    fn single_pixel_relation_is_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g = relation_map(&random(&[1, 1, 8], &mut rng), &random(&[1, 1, 8], &mut rng)).unwrap();
        assert!((g.values()[0] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn zero_features_give_uniform_rows() {
        let z = Tensor::zeros(&[2, 3, 4]).unwrap();
        let g = relation_map(&z, &z).unwrap();
        assert!(g.values().iter().all(|&v| (v - 1.0 / 6.0).abs() < 1e-12));
    }

    #[test]
    fn random_relation_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let g = relation_map(&random(&[2, 2, 4], &mut rng), &random(&[2, 2, 4], &mut rng)).unwrap();
        for i in 0..4 {
            let row = g.row(i);
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(row.iter().all(|&v| v > 0.0 && v < 1.0));
        }
        assert!(relation_map(&random(&[2, 2, 4], &mut rng), &random(&[2, 3, 4], &mut rng)).is_err());
    }

    #[test]
    fn aggregate_identity_constant_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random(&[2, 3, 5], &mut rng);
        assert_eq!(aggregate(&RelationMap::identity(2, 3), &x).unwrap().data(), x.data());

        let k = Tensor::full(&[2, 3, 5], 1.25).unwrap();
        let mixed = aggregate(&RelationMap::uniform(2, 3), &k).unwrap();
        assert!(mixed.data().iter().all(|&v| (v - 1.25).abs() < 1e-12));

        let u = aggregate(&RelationMap::uniform(2, 3), &x).unwrap();
        for ch in 0..5 {
            let mean = x.data().iter().skip(ch).step_by(5).sum::<f64>() / 6.0;
            for p in 0..6 {
                assert!((u.data()[p * 5 + ch] - mean).abs() < 1e-12);
            }
        }
        assert!(aggregate(&RelationMap::uniform(3, 3), &x).is_err());
    }

    #[test]
    fn identity_at_init() {
        let (store, params, cfg, mut rng) = setup(8);
        let f = random(&[4, 6, 8], &mut rng);
        let (out, g) = iafa_forward(&f, &store, &params, &cfg).unwrap();
        assert_eq!(out.data(), f.data());
        assert_eq!((g.height, g.width), (2, 3));
    }

    #[test]
    fn forced_identity_doubles() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let cfg = IafaConfig { channels: 3, expansion: 4, downscale: 1, groups: 4, norm_eps: 1e-5 };
        let f = random(&[3, 4, 3], &mut rng);
        let out = enhance(&f, &RelationMap::identity(3, 4), 1.0, &cfg).unwrap();
        for (o, v) in out.data().iter().zip(f.data()) {
            assert!((o - 2.0 * v).abs() < 1e-12);
        }
    }

    #[test]
    fn attention_row_bounds() {
        let g = RelationMap::uniform(2, 2);
        let row = g.attention_row_for_center(3).unwrap();
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(g.attention_row_for_center(4).is_err());
        let single = RelationMap::identity(1, 1);
        assert_eq!(single.attention_row_for_center(0).unwrap(), vec![1.0]);
    }

    #[test]
    fn indivisible_extent_is_config_error() {
        let (store, params, cfg, mut rng) = setup(8);
        let f = random(&[5, 6, 8], &mut rng);
        assert!(matches!(iafa_forward(&f, &store, &params, &cfg), Err(Error::Config(_))));
    }
}
