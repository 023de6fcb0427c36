//! RGB + sparse-depth fusion encoder-decoder.
//!
//! ```text
//! rgb ─┐
//!      ├─ fuse ─ conv·pool ─ conv·pool ─ … ─ conv·pool ─┐
//! sparse┘    e1 ┘      e2 ┘           eS ┘             │
//!         head·sigmoid ─ up·cat(e1)·conv·conv ─ … ─ up·cat(eS)·conv·conv
//! ```
//!
//! Encoder stage `s` convolves to `base · 2^(s−1)` channels and then halves
//! the resolution; its pre-pool activation `es` is the skip. Decoder stage
//! `j` upsamples, concatenates the skip of the same resolution and applies
//! two 3×3 convolutions whose output width is half the concatenated width.
//! The head maps to one channel and a sigmoid bounds the predicted
//! normalized reciprocal depth to `(0, 1)`.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::image::DepthMap;
use crate::losses::ReciprocalCodec;
use crate::real::Real;
use crate::tape::{Tape, Var};
use crate::tensor::{Shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub enum FusionMode {
    RgbOnly,
    /// Concatenate to four channels, then a 1×1 convolution back to three.
    #[default]
    ConcatTruncate,
    /// Add the sparse channel to each RGB channel.
    ElementwiseAdd,
}

impl FusionMode {
    pub const ALL: [FusionMode; 3] = [Self::RgbOnly, Self::ConcatTruncate, Self::ElementwiseAdd];

    pub fn name(self) -> &'static str {
        match self {
            Self::RgbOnly => "rgb",
            Self::ConcatTruncate => "concat",
            Self::ElementwiseAdd => "add",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rgb" | "rgb-only" | "rgbonly" => Some(Self::RgbOnly),
            "concat" | "concat-truncate" | "concattruncate" => Some(Self::ConcatTruncate),
            "add" | "elementwise-add" | "elementwiseadd" => Some(Self::ElementwiseAdd),
            _ => None,
        }
    }

    pub fn uses_sparse(self) -> bool {
        self != Self::RgbOnly
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub input_height: usize,
    pub input_width: usize,
    pub base_channels: usize,
    pub encoder_stages: usize,
    pub fusion_mode: FusionMode,
    pub leaky_alpha: f64,
    /// Initial bias of the output layer, as a logit.
    pub head_bias: f64,
    pub h_reciprocal: f64,
    pub d_min: f64,
    pub d_max: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            input_height: 96,
            input_width: 160,
            base_channels: 16,
            encoder_stages: 4,
            fusion_mode: FusionMode::ConcatTruncate,
            leaky_alpha: 0.2,
            head_bias: -3.0,
            h_reciprocal: 10.0,
            d_min: 0.5,
            d_max: 80.0,
            seed: 0,
        }
    }
}

impl ModelConfig {
    /// 32×48 input, 32 base channels: the configuration the bundled
    /// experiments train on a single CPU core.
    pub fn tiny() -> Self {
        Self { input_height: 32, input_width: 48, base_channels: 32, ..Self::default() }
    }

    pub fn codec(&self) -> ReciprocalCodec {
        ReciprocalCodec { h: self.h_reciprocal, d_min: self.d_min, d_max: self.d_max }
    }

    pub fn validate(&self) -> Result<()> {
        if self.encoder_stages == 0 || self.encoder_stages > 16 || self.base_channels == 0 {
            return Err(Error::InvalidArgument(format!(
                "need at least one encoder stage and one base channel, got {} stages / {} channels",
                self.encoder_stages, self.base_channels
            )));
        }
        let step = 1usize << self.encoder_stages;
        if self.input_height == 0 || self.input_width == 0 || self.input_height % step != 0 || self.input_width % step != 0 {
            return Err(Error::InvalidArgument(format!(
                "input {}x{} is not divisible by 2^{} = {step}",
                self.input_height, self.input_width, self.encoder_stages
            )));
        }
        if !(0.0..1.0).contains(&self.leaky_alpha) {
            return Err(Error::InvalidArgument(format!("leaky_alpha {} outside [0, 1)", self.leaky_alpha)));
        }
        if !self.head_bias.is_finite() {
            return Err(Error::InvalidArgument(format!("head_bias {} is not finite", self.head_bias)));
        }
        ReciprocalCodec::new(self.h_reciprocal, self.d_min, self.d_max)?;
        Ok(())
    }

    fn encoder_channels(&self, stage: usize) -> usize {
        if stage == 0 { 3 } else { self.base_channels << (stage - 1) }
    }

    /// `[C, H, W]` of the encoder output after each stage.
    pub fn encoder_shapes(&self) -> Vec<[usize; 3]> {
        (1..=self.encoder_stages).map(|s| self.feature_shape(s)).collect()
    }

    fn feature_shape(&self, stage: usize) -> [usize; 3] {
        [self.encoder_channels(stage), self.input_height >> stage, self.input_width >> stage]
    }

    /// `[C, H, W]` of the skip tensor concatenated in each decoder stage,
    /// coarsest first: each encoder stage's activation before pooling.
    pub fn skip_shapes(&self) -> Vec<[usize; 3]> {
        (1..=self.encoder_stages)
            .rev()
            .map(|s| [self.encoder_channels(s), self.input_height >> (s - 1), self.input_width >> (s - 1)])
            .collect()
    }

    /// Output channels of each decoder stage.
    pub fn decoder_channels(&self) -> Vec<usize> {
        let mut c = self.encoder_channels(self.encoder_stages);
        self.skip_shapes()
            .iter()
            .map(|skip| {
                c = (c + skip[0]) / 2;
                c
            })
            .collect()
    }

    fn layers(&self) -> Vec<ConvSpec> {
        let mut layers = Vec::new();
        if self.fusion_mode == FusionMode::ConcatTruncate {
            layers.push(ConvSpec { name: String::from("fuse"), cin: 4, cout: 3, k: 1 });
        }
        for s in 1..=self.encoder_stages {
            layers.push(ConvSpec {
                name: format!("enc{s}"),
                cin: self.encoder_channels(s - 1),
                cout: self.encoder_channels(s),
                k: 3,
            });
        }
        let mut c = self.encoder_channels(self.encoder_stages);
        for (j, skip) in self.skip_shapes().iter().enumerate() {
            let cat = c + skip[0];
            let out = cat / 2;
            layers.push(ConvSpec { name: format!("dec{}.conv1", j + 1), cin: cat, cout: out, k: 3 });
            layers.push(ConvSpec { name: format!("dec{}.conv2", j + 1), cin: out, cout: out, k: 3 });
            c = out;
        }
        layers.push(ConvSpec { name: String::from("head"), cin: c, cout: 1, k: 3 });
        layers
    }
}

#[derive(Clone, Debug)]
struct ConvSpec {
    name: String,
    cin: usize,
    cout: usize,
    k: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub value: Tensor<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model<T> {
    config: ModelConfig,
    params: Vec<Param<T>>,
}

/// Model parameters registered on a tape.
#[derive(Clone, Debug)]
pub struct BoundParams {
    vars: Vec<Var>,
}

impl BoundParams {
    /// Uses `vars` as the parameters, in the model's layout order.
    pub fn from_vars(vars: Vec<Var>) -> Self {
        Self { vars }
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

impl<T: Real> Model<T> {
    /// He-initialized weights (`N(0, 2 / fan_in)`) from `config.seed`.
    /// The fusion kernel starts as the identity on RGB with a zero sparse
    /// column, so a fused model starts out as the RGB-only one. Biases are
    /// zero except the head's, which starts at `config.head_bias`.
    pub fn build(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = Vec::new();
        for layer in config.layers() {
            let fan_in = (layer.cin * layer.k * layer.k) as f64;
            let normal = Normal::new(0.0, libm::sqrt(2.0 / fan_in)).expect("positive std");
            let wshape = Shape::nchw(layer.cout, layer.cin, layer.k, layer.k);
            let w: Vec<T> = if layer.name == "fuse" {
                (0..wshape.numel()).map(|i| T::from_f64(if i % 4 == i / 4 { 1.0 } else { 0.0 })).collect()
            } else {
                (0..wshape.numel()).map(|_| T::from_f64(normal.sample(&mut rng))).collect()
            };
            params.push(Param { name: format!("{}.weight", layer.name), value: Tensor::from_vec(wshape, w)? });
            params.push(Param {
                name: format!("{}.bias", layer.name),
                value: Tensor::full(
                    Shape::new(&[layer.cout])?,
                    T::from_f64(if layer.name == "head" { config.head_bias } else { 0.0 }),
                ),
            });
        }
        Ok(Self { config, params })
    }

    /// Reassembles a model from named tensors, checking them against the
    /// layout implied by `config`.
    pub fn from_params(config: ModelConfig, params: Vec<Param<T>>) -> Result<Self> {
        let expected = Self::build(config.clone())?;
        if expected.params.len() != params.len() {
            return Err(Error::InvalidArgument(format!(
                "expected {} parameter tensors, got {}",
                expected.params.len(),
                params.len()
            )));
        }
        for (e, p) in expected.params.iter().zip(&params) {
            if e.name != p.name || e.value.shape() != p.value.shape() {
                return Err(Error::InvalidArgument(format!(
                    "parameter `{}` {} does not match expected `{}` {}",
                    p.name,
                    p.value.shape(),
                    e.name,
                    e.value.shape()
                )));
            }
        }
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &[Param<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param<T>] {
        &mut self.params
    }

    pub fn param(&self, name: &str) -> Option<&Tensor<T>> {
        self.params.iter().find(|p| p.name == name).map(|p| &p.value)
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.params.iter_mut().find(|p| p.name == name).map(|p| &mut p.value)
    }

    pub fn num_weights(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn cast<U: Real>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            params: self.params.iter().map(|p| Param { name: p.name.clone(), value: p.value.cast() }).collect(),
        }
    }

    /// Places every parameter on the tape.
    pub fn bind(&self, tape: &mut Tape<T>, trainable: bool) -> BoundParams {
        BoundParams { vars: self.params.iter().map(|p| tape.leaf(p.value.clone(), trainable)).collect() }
    }

    fn layer_vars<'a>(&self, bound: &'a BoundParams, name: &str) -> (Var, Var) {
        let i = self
            .params
            .iter()
            .position(|p| p.name.len() == name.len() + 7 && p.name.starts_with(name) && p.name.ends_with(".weight"))
            .expect("layer present in layout");
        (bound.vars[i], bound.vars[i + 1])
    }

    /// Combines RGB `[N,3,H,W]` with the sparse channel `[N,1,H,W]`.
    /// `RgbOnly` ignores `sparse`.
    pub fn fuse_input(&self, tape: &mut Tape<T>, bound: &BoundParams, rgb: Var, sparse: Option<Var>) -> Result<Var> {
        let (_, c, _, _) = tape.shape(rgb).as_nchw("fuse_input")?;
        if c != 3 {
            return Err(Error::InvalidShape { op: "fuse_input", reason: format!("rgb has {c} channels") });
        }
        let mode = self.config.fusion_mode;
        match (mode, sparse) {
            (FusionMode::RgbOnly, _) => Ok(rgb),
            (_, None) => Err(Error::InvalidArgument(format!(
                "fusion mode `{}` needs a sparse depth channel",
                mode.name()
            ))),
            (FusionMode::ConcatTruncate, Some(s)) => {
                let cat = tape.concat_channels(rgb, s)?;
                let (w, b) = self.layer_vars(bound, "fuse");
                tape.conv1x1(cat, w, b)
            }
            (FusionMode::ElementwiseAdd, Some(s)) => {
                let (_, sc, _, _) = tape.shape(s).as_nchw("fuse_input")?;
                if sc != 1 {
                    return Err(Error::InvalidShape { op: "fuse_input", reason: format!("sparse has {sc} channels") });
                }
                tape.add(rgb, s)
            }
        }
    }

    /// Predicted normalized reciprocal depth `[N,1,H,W]` in `(0, 1)` from the
    /// fused input.
    pub fn forward(&self, tape: &mut Tape<T>, bound: &BoundParams, fused: Var) -> Result<Var> {
        let cfg = &self.config;
        let s = tape.shape(fused);
        let (_, c, h, w) = s.as_nchw("forward")?;
        if (c, h, w) != (3, cfg.input_height, cfg.input_width) {
            return Err(Error::InvalidShape {
                op: "forward",
                reason: format!("input {s} does not match configured [N, 3, {}, {}]", cfg.input_height, cfg.input_width),
            });
        }
        let alpha = cfg.leaky_alpha;
        let mut skips = Vec::with_capacity(cfg.encoder_stages);
        let mut x = fused;
        for stage in 1..=cfg.encoder_stages {
            let (wv, bv) = self.layer_vars(bound, &format!("enc{stage}"));
            x = tape.conv2d(x, wv, bv, 1, 1)?;
            x = tape.leaky_relu(x, alpha)?;
            skips.push(x);
            x = tape.maxpool2x(x)?;
        }
        for j in 1..=cfg.encoder_stages {
            x = tape.upsample2x(x)?;
            x = tape.concat_channels(x, skips[cfg.encoder_stages - j])?;
            for conv in ["conv1", "conv2"] {
                let (wv, bv) = self.layer_vars(bound, &format!("dec{j}.{conv}"));
                x = tape.conv2d(x, wv, bv, 1, 1)?;
                x = tape.leaky_relu(x, alpha)?;
            }
        }
        let (wv, bv) = self.layer_vars(bound, "head");
        x = tape.conv2d(x, wv, bv, 1, 1)?;
        Ok(tape.sigmoid(x))
    }

    /// Forward pass without gradient tracking.
    pub fn infer(&self, rgb: &Tensor<T>, sparse: Option<&Tensor<T>>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, false);
        let rgb = tape.constant(rgb.clone());
        let sparse = sparse.map(|s| tape.constant(s.clone()));
        let out = self.run(&mut tape, &bound, rgb, sparse)?;
        Ok(tape.value(out).clone())
    }

    /// Full pass from `[0,1]` RGB: centers it to `[-1,1]`, fuses, then runs [`Model::forward`].
    pub fn run(&self, tape: &mut Tape<T>, bound: &BoundParams, rgb: Var, sparse: Option<Var>) -> Result<Var> {
        let (n, _, h, w) = tape.shape(rgb).as_nchw("run")?;
        let half = tape.constant(Tensor::full(Shape::nchw(n, 1, h, w), T::from_f64(-0.5)));
        let shifted = tape.add(rgb, half)?;
        let centered = tape.add(shifted, shifted)?;
        let fused = self.fuse_input(tape, bound, centered, sparse)?;
        self.forward(tape, bound, fused)
    }

    /// Metric depth per batch element, clamped to `[d_min, d_max]`.
    pub fn predict_depth(&self, rgb: &Tensor<T>, sparse: Option<&Tensor<T>>) -> Result<Vec<DepthMap>> {
        let out = self.infer(rgb, sparse)?;
        Ok(decode_prediction(&out, &self.config.codec()))
    }
}

/// Converts a `[N,1,H,W]` reciprocal prediction to depth maps in meters.
pub fn decode_prediction<T: Real>(pred: &Tensor<T>, codec: &ReciprocalCodec) -> Vec<DepthMap> {
    let dims = pred.shape().dims().to_vec();
    let (n, h, w) = (dims[0], dims[dims.len() - 2], dims[dims.len() - 1]);
    pred.data()
        .chunks_exact(h * w)
        .take(n)
        .map(|plane| DepthMap {
            width: w,
            height: h,
            data: plane.iter().map(|v| codec.decode(v.to_f64())).collect(),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn default_encoder_shapes_double_channels() {
        let cfg = ModelConfig::default();
        assert_eq!(cfg.encoder_shapes(), vec![[16, 48, 80], [32, 24, 40], [64, 12, 20], [128, 6, 10]]);
        assert_eq!(cfg.skip_shapes(), vec![[128, 12, 20], [64, 24, 40], [32, 48, 80], [16, 96, 160]]);
        assert_eq!(cfg.decoder_channels(), vec![128, 96, 64, 40]);
    }

    #[test]
    fn rejects_indivisible_extent() {
        let cfg = ModelConfig { input_width: 100, ..ModelConfig::default() };
        assert!(Model::<f32>::build(cfg).is_err());
        assert!(Model::<f32>::build(ModelConfig { encoder_stages: 0, ..ModelConfig::default() }).is_err());
    }

    #[test]
    fn single_stage_has_one_block_each_way() {
        let cfg = ModelConfig { encoder_stages: 1, ..ModelConfig::tiny() };
        let m = Model::<f32>::build(cfg).unwrap();
        let names: Vec<_> = m.params().iter().map(|p| p.name.as_str()).collect();
        assert_eq!(
            names,
            ["fuse.weight", "fuse.bias", "enc1.weight", "enc1.bias", "dec1.conv1.weight", "dec1.conv1.bias",
             "dec1.conv2.weight", "dec1.conv2.bias", "head.weight", "head.bias"]
        );
    }

    #[test]
    fn seeded_build_is_deterministic() {
        let a = Model::<f32>::build(ModelConfig::tiny()).unwrap();
        let b = Model::<f32>::build(ModelConfig::tiny()).unwrap();
        assert_eq!(a, b);
        let c = Model::<f32>::build(ModelConfig { seed: 1, ..ModelConfig::tiny() }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn missing_sparse_channel_is_rejected() {
        let m = Model::<f32>::build(ModelConfig::tiny()).unwrap();
        let rgb = Tensor::zeros(Shape::nchw(1, 3, 32, 48));
        assert!(m.infer(&rgb, None).is_err());
    }

    fn small(mode: FusionMode) -> Model<f64> {
        let cfg = ModelConfig { input_width: 16, input_height: 16, base_channels: 2, encoder_stages: 2, fusion_mode: mode, ..ModelConfig::tiny() };
        Model::build(cfg).unwrap()
    }

    fn ramp(c: usize, scale: f64) -> Tensor<f64> {
        let shape = Shape::nchw(1, c, 16, 16);
        Tensor::from_vec(shape, (0..shape.numel()).map(|i| ((i * 37) % 101) as f64 / 100.0 * scale).collect()).unwrap()
    }

    fn fused(m: &Model<f64>, rgb: &Tensor<f64>, sparse: Option<&Tensor<f64>>) -> Tensor<f64> {
        let mut tape = Tape::new();
        let bound = m.bind(&mut tape, false);
        let rgb = tape.constant(rgb.clone());
        let sparse = sparse.map(|s| tape.constant(s.clone()));
        let out = m.fuse_input(&mut tape, &bound, rgb, sparse).unwrap();
        tape.value(out).clone()
    }

    #[test]
    fn fusion_identities() {
        let (rgb, sparse) = (ramp(3, 1.0), ramp(1, 0.5));
        assert_eq!(fused(&small(FusionMode::RgbOnly), &rgb, Some(&sparse)), rgb);
        let zero = Tensor::zeros(Shape::nchw(1, 1, 16, 16));
        assert_eq!(fused(&small(FusionMode::ElementwiseAdd), &rgb, Some(&zero)), rgb);
        let mut m = small(FusionMode::ConcatTruncate);
        let k = m.param_mut("fuse.weight").unwrap().data_mut();
        k.fill(0.0);
        for c in 0..3 {
            k[c * 4 + c] = 1.0;
        }
        assert_eq!(fused(&m, &rgb, Some(&sparse)), rgb);
    }

    #[test]
    fn fused_model_starts_as_the_rgb_model() {
        let (concat, rgb_only) = (small(FusionMode::ConcatTruncate), small(FusionMode::RgbOnly));
        assert_eq!(&concat.params()[2..], rgb_only.params());
        let rgb = ramp(3, 1.0);
        assert_eq!(concat.infer(&rgb, Some(&ramp(1, 0.5))).unwrap(), rgb_only.infer(&rgb, None).unwrap());
    }

    #[test]
    fn outputs_lie_in_the_unit_interval_and_start_near_the_head_bias() {
        let m = small(FusionMode::ConcatTruncate);
        let out = m.infer(&ramp(3, 1.0), Some(&ramp(1, 0.5))).unwrap();
        assert_eq!(out.shape(), Shape::nchw(1, 1, 16, 16));
        assert!(out.data().iter().all(|&t| t > 0.0 && t < 1.0));
        assert!(m.params().iter().filter(|p| p.name.ends_with(".bias")).all(|p| {
            let want = if p.name == "head.bias" { -3.0 } else { 0.0 };
            p.value.data().iter().all(|&b| b == want)
        }));
    }

    #[test]
    fn one_pixel_reaches_the_output() {
        let m = small(FusionMode::RgbOnly);
        let rgb = ramp(3, 1.0);
        let base = m.infer(&rgb, None).unwrap();
        let mut moved = rgb.clone();
        moved.data_mut()[16 * 8 + 8] += 0.1;
        let after = m.infer(&moved, None).unwrap();
        assert!(base.data().iter().zip(after.data()).any(|(a, b)| a != b));
    }
}
