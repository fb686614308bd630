//! Multi-task encoder-decoder with skip connections.
//!
//! Encoder: `depth` levels of two 3x3 conv + ReLU followed by 2x2 max-pool,
//! then a two-conv bottleneck. Decoder: nearest x2 upsampling, concatenation
//! with the matching encoder output, two 3x3 conv + ReLU. Heads are 1x1
//! convs producing footprint logits and normalized height.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::ops;
use super::{Scalar, Tensor4};
use crate::dataset::HeightNormalizer;
use crate::error::{bail, Result};
use crate::ingest::BandStats;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Head {
    Multitask,
    FootprintOnly,
    HeightOnly,
}

impl Head {
    pub fn code(&self) -> u32 {
        match self {
            Head::Multitask => 0,
            Head::FootprintOnly => 1,
            Head::HeightOnly => 2,
        }
    }

    pub fn from_code(c: u32) -> Result<Self> {
        Ok(match c {
            0 => Head::Multitask,
            1 => Head::FootprintOnly,
            2 => Head::HeightOnly,
            other => bail!(Validation, "unknown head code {other}"),
        })
    }

    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "multitask" => Head::Multitask,
            "footprint_only" => Head::FootprintOnly,
            "height_only" => Head::HeightOnly,
            other => bail!(Validation, "unknown head '{other}' (multitask|footprint_only|height_only)"),
        })
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Head::Multitask => "multitask",
            Head::FootprintOnly => "footprint_only",
            Head::HeightOnly => "height_only",
        }
    }

    pub fn has_footprint(&self) -> bool {
        !matches!(self, Head::HeightOnly)
    }

    pub fn has_height(&self) -> bool {
        !matches!(self, Head::FootprintOnly)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelConfig {
    pub in_channels: usize,
    pub depth: usize,
    pub base_channels: usize,
    pub head: Head,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { in_channels: 6, depth: 3, base_channels: 16, head: Head::Multitask }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.depth < 1 {
            bail!(Validation, "depth must be at least 1");
        }
        if self.base_channels < 1 || self.in_channels < 1 {
            bail!(Validation, "channel counts must be positive");
        }
        if self.depth > 16 {
            bail!(Validation, "depth {} is unreasonably large", self.depth);
        }
        Ok(())
    }

    /// Side lengths must be multiples of this.
    pub fn side_multiple(&self) -> usize {
        1 << self.depth
    }

    fn width_at(&self, level: usize) -> usize {
        self.base_channels << level
    }

    /// Convolution layers in execution order.
    pub fn layers(&self) -> Vec<ConvSpec> {
        let mut out = Vec::new();
        let mut cin = self.in_channels;
        for l in 0..self.depth {
            let c = self.width_at(l);
            out.push(ConvSpec::new(format!("enc{l}.conv1"), cin, c, 3));
            out.push(ConvSpec::new(format!("enc{l}.conv2"), c, c, 3));
            cin = c;
        }
        let c = self.width_at(self.depth);
        out.push(ConvSpec::new("mid.conv1".into(), cin, c, 3));
        out.push(ConvSpec::new("mid.conv2".into(), c, c, 3));
        let mut below = c;
        for l in (0..self.depth).rev() {
            let c = self.width_at(l);
            out.push(ConvSpec::new(format!("dec{l}.conv1"), below + c, c, 3));
            out.push(ConvSpec::new(format!("dec{l}.conv2"), c, c, 3));
            below = c;
        }
        if self.head.has_footprint() {
            out.push(ConvSpec::new("head_fp".into(), below, 1, 1));
        }
        if self.head.has_height() {
            out.push(ConvSpec::new("head_h".into(), below, 1, 1));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConvSpec {
    pub name: String,
    pub cin: usize,
    pub cout: usize,
    pub ks: usize,
}

impl ConvSpec {
    fn new(name: String, cin: usize, cout: usize, ks: usize) -> Self {
        Self { name, cin, cout, ks }
    }
    pub fn weight_shape(&self) -> Vec<usize> {
        vec![self.cout, self.cin, self.ks, self.ks]
    }
}

/// One named parameter array.
#[derive(Debug, Clone, PartialEq)]
pub struct Param<S> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<S>,
}

/// Network outputs. A head absent from the configuration yields `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct Output<S> {
    pub fp_logits: Option<Tensor4<S>>,
    pub height: Option<Tensor4<S>>,
}

/// Everything the backward pass needs from a forward pass.
#[derive(Debug, Clone)]
pub struct Trace<S> {
    conv_in: Vec<Tensor4<S>>,
    conv_out: Vec<Tensor4<S>>,
    pool_idx: Vec<(Vec<u32>, [usize; 4])>,
}

/// Frozen ReLU states per layer and pooling winners per level.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Gates {
    relu: Vec<Vec<bool>>,
    pool: Vec<Vec<u32>>,
}

impl<S: Scalar> Trace<S> {
    /// Gates of the first `relu_layers` layers (every layer but the heads).
    pub fn gates(&self, relu_layers: usize) -> Gates {
        Gates {
            relu: self.conv_out.iter().take(relu_layers).map(|y| y.data.iter().map(|v| *v > S::zero()).collect()).collect(),
            pool: self.pool_idx.iter().map(|(i, _)| i.clone()).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FloorspaceModel<S = f32> {
    pub config: ModelConfig,
    pub normalizer: HeightNormalizer,
    /// Input standardization the model was trained with.
    pub band_stats: Option<BandStats>,
    params: Vec<Param<S>>,
    layers: Vec<ConvSpec>,
}

impl<S: Scalar> FloorspaceModel<S> {
    /// Kaiming-uniform (fan-in) kernels and zero biases.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let layers = config.layers();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::with_capacity(2 * layers.len());
        for l in &layers {
            let fan_in = (l.cin * l.ks * l.ks) as f64;
            let bound = libm::sqrt(6.0 / fan_in);
            let n = l.cout * l.cin * l.ks * l.ks;
            let w = (0..n).map(|_| S::from_f64(rng.gen_range(-bound..bound))).collect();
            params.push(Param { name: format!("{}.weight", l.name), shape: l.weight_shape(), data: w });
            params.push(Param { name: format!("{}.bias", l.name), shape: vec![l.cout], data: vec![S::zero(); l.cout] });
        }
        Ok(Self { config, normalizer: HeightNormalizer::default(), band_stats: None, params, layers })
    }

    /// Rebuilds a model from stored parameters, checking names and shapes.
    pub fn from_params(
        config: ModelConfig,
        normalizer: HeightNormalizer,
        band_stats: Option<BandStats>,
        params: Vec<Param<S>>,
    ) -> Result<Self> {
        config.validate()?;
        let layers = config.layers();
        if params.len() != 2 * layers.len() {
            bail!(Validation, "expected {} parameter arrays, got {}", 2 * layers.len(), params.len());
        }
        for (i, l) in layers.iter().enumerate() {
            let (w, b) = (&params[2 * i], &params[2 * i + 1]);
            if w.name != format!("{}.weight", l.name) || w.shape != l.weight_shape() {
                bail!(Validation, "parameter '{}' {:?} does not match layer {}", w.name, w.shape, l.name);
            }
            if b.name != format!("{}.bias", l.name) || b.shape != [l.cout] {
                bail!(Validation, "parameter '{}' {:?} does not match layer {}", b.name, b.shape, l.name);
            }
            for p in [w, b] {
                if p.data.len() != p.shape.iter().product::<usize>() {
                    bail!(Validation, "parameter '{}' has {} values for shape {:?}", p.name, p.data.len(), p.shape);
                }
            }
        }
        Ok(Self { config, normalizer, band_stats, params, layers })
    }

    pub fn params(&self) -> &[Param<S>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param<S>] {
        &mut self.params
    }

    pub fn layers(&self) -> &[ConvSpec] {
        &self.layers
    }

    pub fn num_parameters(&self) -> usize {
        self.params.iter().map(|p| p.data.len()).sum()
    }

    pub fn zero_grads(&self) -> Vec<Vec<S>> {
        self.params.iter().map(|p| vec![S::zero(); p.data.len()]).collect()
    }

    /// Same model in another precision.
    pub fn cast<T: Scalar>(&self) -> FloorspaceModel<T> {
        FloorspaceModel {
            config: self.config,
            normalizer: self.normalizer,
            band_stats: self.band_stats.clone(),
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    shape: p.shape.clone(),
                    data: p.data.iter().map(|v| T::from_f64(v.as_f64())).collect(),
                })
                .collect(),
            layers: self.layers.clone(),
        }
    }

    pub fn check_input(&self, dims: [usize; 4]) -> Result<()> {
        let [n, c, h, w] = dims;
        if c != self.config.in_channels {
            bail!(Shape, "input has {c} channels, model expects {}", self.config.in_channels);
        }
        let m = self.config.side_multiple();
        if h == 0 || h % m != 0 {
            bail!(Shape, "input height {h} is not a positive multiple of {m} (depth {})", self.config.depth);
        }
        if w == 0 || w % m != 0 {
            bail!(Shape, "input width {w} is not a positive multiple of {m} (depth {})", self.config.depth);
        }
        if n == 0 {
            bail!(Shape, "empty batch");
        }
        Ok(())
    }

    fn conv(&self, li: usize, x: &Tensor4<S>, relu: bool) -> Tensor4<S> {
        let l = &self.layers[li];
        ops::conv_forward(x, &self.params[2 * li].data, &self.params[2 * li + 1].data, l.cout, l.ks, relu)
    }

    fn run(&self, x: &Tensor4<S>, mut trace: Option<&mut Trace<S>>, gates: Option<&Gates>) -> Result<Output<S>> {
        self.check_input(x.dims)?;
        let depth = self.config.depth;
        let mut li = 0;
        let mut pool_no = 0;
        let step = |li: &mut usize, x: &Tensor4<S>, relu: bool, trace: &mut Option<&mut Trace<S>>| {
            let y = match gates {
                Some(g) if relu => {
                    let mut y = self.conv(*li, x, false);
                    for (v, &on) in y.data.iter_mut().zip(&g.relu[*li]) {
                        if !on {
                            *v = S::zero();
                        }
                    }
                    y
                }
                _ => self.conv(*li, x, relu),
            };
            if let Some(t) = trace.as_deref_mut() {
                t.conv_in.push(x.clone());
                t.conv_out.push(y.clone());
            }
            *li += 1;
            y
        };
        let mut cur = x.clone();
        let mut skips = Vec::with_capacity(depth);
        for _ in 0..depth {
            cur = step(&mut li, &cur, true, &mut trace);
            cur = step(&mut li, &cur, true, &mut trace);
            let (pooled, idx) = match gates {
                Some(g) => {
                    let idx = g.pool[pool_no].clone();
                    let [n, c, h, w] = cur.dims;
                    let data = idx.iter().map(|&i| cur.data[i as usize]).collect();
                    (Tensor4::from_vec([n, c, h / 2, w / 2], data)?, idx)
                }
                None => ops::maxpool_forward(&cur),
            };
            pool_no += 1;
            if let Some(t) = trace.as_deref_mut() {
                t.pool_idx.push((idx, cur.dims));
            }
            skips.push(cur);
            cur = pooled;
        }
        cur = step(&mut li, &cur, true, &mut trace);
        cur = step(&mut li, &cur, true, &mut trace);
        for l in (0..depth).rev() {
            let up = ops::upsample_forward(&cur);
            let cat = ops::concat(&up, &skips[l]);
            cur = step(&mut li, &cat, true, &mut trace);
            cur = step(&mut li, &cur, true, &mut trace);
        }
        let fp_logits = if self.config.head.has_footprint() { Some(step(&mut li, &cur, false, &mut trace)) } else { None };
        let height = if self.config.head.has_height() { Some(step(&mut li, &cur, false, &mut trace)) } else { None };
        Ok(Output { fp_logits, height })
    }

    /// Raw outputs: footprint logits and unclamped normalized height.
    pub fn forward(&self, x: &Tensor4<S>) -> Result<Output<S>> {
        self.run(x, None, None)
    }

    /// Forward pass with every ReLU state and pooling winner pinned to
    /// `gates`; agrees with [`Self::forward`] wherever the gates are current.
    pub fn forward_gated(&self, x: &Tensor4<S>, gates: &Gates) -> Result<Output<S>> {
        self.run(x, None, Some(gates))
    }

    pub fn forward_trace(&self, x: &Tensor4<S>) -> Result<(Output<S>, Trace<S>)> {
        let mut trace = Trace { conv_in: Vec::new(), conv_out: Vec::new(), pool_idx: Vec::new() };
        let out = self.run(x, Some(&mut trace), None)?;
        Ok((out, trace))
    }

    /// Gradients of the loss with respect to every parameter, given the
    /// loss gradients at the heads. Missing heads take `None`.
    pub fn backward(
        &self,
        trace: &Trace<S>,
        d_fp: Option<&Tensor4<S>>,
        d_h: Option<&Tensor4<S>>,
    ) -> Result<Vec<Vec<S>>> {
        let mut grads = self.zero_grads();
        let depth = self.config.depth;
        let conv_back = |li: usize, dy: &Tensor4<S>, relu: bool, need_dx: bool, grads: &mut Vec<Vec<S>>| {
            let l = &self.layers[li];
            let (gw, gb) = grads.split_at_mut(2 * li + 1);
            ops::conv_backward(
                &trace.conv_in[li],
                &trace.conv_out[li],
                dy,
                &self.params[2 * li].data,
                l.ks,
                relu,
                &mut gw[2 * li],
                &mut gb[0],
                need_dx,
            )
        };

        let mut li = self.layers.len();
        let mut dfeat = Tensor4::zeros(trace.conv_in[li - 1].dims);
        if self.config.head.has_height() {
            li -= 1;
            let Some(dh) = d_h else { bail!(Validation, "height head gradient missing") };
            let dx = conv_back(li, dh, false, true, &mut grads).expect("dx requested");
            dfeat.add_assign(&dx);
        }
        if self.config.head.has_footprint() {
            li -= 1;
            let Some(df) = d_fp else { bail!(Validation, "footprint head gradient missing") };
            let dx = conv_back(li, df, false, true, &mut grads).expect("dx requested");
            dfeat.add_assign(&dx);
        }

        let mut dx = dfeat;
        let mut dskips: Vec<Option<Tensor4<S>>> = vec![None; depth];
        for (l, dskip) in dskips.iter_mut().enumerate() {
            li -= 1;
            dx = conv_back(li, &dx, true, true, &mut grads).expect("dx requested");
            li -= 1;
            dx = conv_back(li, &dx, true, true, &mut grads).expect("dx requested");
            let c_up = self.layers[li].cin - (self.config.base_channels << l);
            let (dup, ds) = ops::split(&dx, c_up);
            *dskip = Some(ds);
            dx = ops::upsample_backward(&dup);
        }
        li -= 1;
        dx = conv_back(li, &dx, true, true, &mut grads).expect("dx requested");
        li -= 1;
        dx = conv_back(li, &dx, true, true, &mut grads).expect("dx requested");
        for l in (0..depth).rev() {
            let (idx, dims) = &trace.pool_idx[l];
            let mut d = ops::maxpool_backward(&dx, idx, *dims);
            d.add_assign(dskips[l].as_ref().expect("decoder visited every level"));
            li -= 1;
            dx = conv_back(li, &d, true, true, &mut grads).expect("dx requested");
            li -= 1;
            let need = li > 0;
            if let Some(next) = conv_back(li, &dx, true, need, &mut grads) {
                dx = next;
            }
        }
        debug_assert_eq!(li, 0);
        Ok(grads)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn input(dims: [usize; 4]) -> Tensor4<f32> {
        let n = dims.iter().product();
        Tensor4::from_vec(dims, (0..n).map(|i| libm::sinf(i as f32 * 0.13)).collect()).unwrap()
    }

    #[test]
    fn outputs_keep_spatial_shape() {
        let m = FloorspaceModel::<f32>::init(ModelConfig::default(), 1).unwrap();
        let out = m.forward(&input([1, 6, 32, 32])).unwrap();
        assert_eq!(out.fp_logits.unwrap().dims, [1, 1, 32, 32]);
        assert_eq!(out.height.unwrap().dims, [1, 1, 32, 32]);
    }

    #[test]
    fn zero_network_gives_half_probability() {
        let mut m = FloorspaceModel::<f32>::init(ModelConfig::default(), 1).unwrap();
        for p in m.params_mut() {
            p.data.iter_mut().for_each(|v| *v = 0.0);
        }
        let out = m.forward(&input([1, 6, 32, 32])).unwrap();
        let fp = out.fp_logits.unwrap();
        assert!(fp.data.iter().all(|&v| v == 0.0));
        assert!(fp.data.iter().all(|&v| 1.0 / (1.0 + libm::expf(-v)) == 0.5));
    }

    #[test]
    fn indivisible_side_is_shape_error() {
        let m = FloorspaceModel::<f32>::init(ModelConfig::default(), 1).unwrap();
        let e = m.forward(&input([1, 6, 30, 32])).unwrap_err();
        assert!(matches!(e, crate::Error::Shape(ref s) if s.contains("30")));
        assert!(matches!(m.forward(&input([1, 5, 32, 32])), Err(crate::Error::Shape(_))));
    }

    #[test]
    fn single_heads() {
        for head in [Head::FootprintOnly, Head::HeightOnly] {
            let cfg = ModelConfig { head, depth: 1, base_channels: 4, ..ModelConfig::default() };
            let m = FloorspaceModel::<f32>::init(cfg, 3).unwrap();
            let out = m.forward(&input([2, 6, 8, 8])).unwrap();
            assert_eq!(out.fp_logits.is_some(), head == Head::FootprintOnly);
            assert_eq!(out.height.is_some(), head == Head::HeightOnly);
        }
    }

    #[test]
    fn init_is_seeded() {
        let a = FloorspaceModel::<f32>::init(ModelConfig::default(), 9).unwrap();
        let b = FloorspaceModel::<f32>::init(ModelConfig::default(), 9).unwrap();
        let c = FloorspaceModel::<f32>::init(ModelConfig::default(), 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(a.params().iter().filter(|p| p.name.ends_with("bias")).all(|p| p.data.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn from_params_rejects_wrong_shapes() {
        let m = FloorspaceModel::<f32>::init(ModelConfig { depth: 1, base_channels: 2, ..ModelConfig::default() }, 0).unwrap();
        let mut ps = m.params().to_vec();
        ps[0].shape[0] += 1;
        assert!(FloorspaceModel::from_params(m.config, m.normalizer, None, ps).is_err());
    }
}
