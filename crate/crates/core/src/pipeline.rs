//! End-to-end model: shallow features, a shared scan order, cascaded
//! propagation and pixel-shuffle reconstruction over a bicubic base.
//! Also weight serialization and a small Adam trainer.
//!
//! `MVSRW1` weights layout (all little-endian):
//!
//! ```text
//! b"MVSRW1" | count: u32 | count x (name_len: u16 | name: utf-8 | rank: u8 | rank x u32 | numel x f32)
//! ```

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::io::{Read, Write};
use std::path::Path;
use std::rc::Rc;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::glssb::{BlockConfig, BlockKind, GammaMode, GlssmConfig, WindowConfig};
use crate::numerics::ops::{self, bicubic_resize, CharbonnierConfig};
use crate::numerics::{Graph, NamedTensors, Var};
use crate::params::{materialize_all, Init, ParamSpec};
use crate::propagation::{propagate, propagation_specs, Direction, FlowSet, PropagationConfig};
use crate::scan_compass::{
    common_factor, compass_from_tokens, embed_downsample, embed_kernel_size, raster_order, CompassConfig,
    FiedlerSolveConfig, ScanOrder,
};
use crate::sequentialize::SequenceLayout;
use crate::tensor::{read_exact, Tensor};

pub const WEIGHTS_MAGIC: &[u8; 6] = b"MVSRW1";
const LRELU_SLOPE: f32 = 0.1;

/// Scan-order strategy for the state-space branch.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScanMode {
    /// Row-major order, frames concatenated one after another, no alignment.
    Raster,
    /// Spectral order, frames concatenated one after another, no alignment.
    Fiedler,
    /// Spectral order, aligned frames interleaved per position.
    ContentAware,
}

impl FromStr for ScanMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "raster" => Ok(ScanMode::Raster),
            "fiedler" => Ok(ScanMode::Fiedler),
            "content_aware" => Ok(ScanMode::ContentAware),
            _ => Err(Error::Config(format!("unknown scan_mode {s:?}"))),
        }
    }
}

impl ScanMode {
    pub fn name(self) -> &'static str {
        match self {
            ScanMode::Raster => "raster",
            ScanMode::Fiedler => "fiedler",
            ScanMode::ContentAware => "content_aware",
        }
    }
}

/// Model hyperparameters. Text form is one `key = value` per line with the
/// field names as keys; `#` starts a comment.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub scale: usize,
    pub channels: usize,
    pub window: usize,
    pub heads: usize,
    pub state_dim: usize,
    pub scan_mode: ScanMode,
    pub stages: usize,
    pub blocks_per_stage: usize,
    pub block: BlockKind,
    pub gamma_mode: GammaMode,
    pub seed: u64,
    pub patch: usize,
    pub radius: usize,
    pub compass_factor: usize,
    pub top_k: usize,
    pub blend: f32,
    pub temperature: f32,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            scale: 4,
            channels: 64,
            window: 8,
            heads: 4,
            state_dim: 16,
            scan_mode: ScanMode::ContentAware,
            stages: 2,
            blocks_per_stage: 2,
            block: BlockKind::WfsabGlssm,
            gamma_mode: GammaMode::Learnable,
            seed: 0,
            patch: 8,
            radius: 2,
            compass_factor: 4,
            top_k: 8,
            blend: 0.5,
            temperature: 1.0,
        }
    }
}

fn parse_num<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.scale != 4 {
            return Err(Error::Config(format!("scale {} unsupported; only 4", self.scale)));
        }
        if self.compass_factor == 0 || self.top_k == 0 {
            return Err(Error::Config("compass_factor and top_k must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.blend) || !(self.temperature > 0.0) {
            return Err(Error::Config("blend must be in [0, 1] and temperature > 0".into()));
        }
        self.propagation().validate()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = ModelConfig::default();
        let mut seen = BTreeSet::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", lineno + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            if !seen.insert(k.to_string()) {
                return Err(Error::Config(format!("line {}: duplicate key {k}", lineno + 1)));
            }
            match k {
                "scale" => cfg.scale = parse_num(k, v)?,
                "channels" => cfg.channels = parse_num(k, v)?,
                "window" => cfg.window = parse_num(k, v)?,
                "heads" => cfg.heads = parse_num(k, v)?,
                "state_dim" => cfg.state_dim = parse_num(k, v)?,
                "scan_mode" => cfg.scan_mode = v.parse()?,
                "stages" => cfg.stages = parse_num(k, v)?,
                "blocks_per_stage" => cfg.blocks_per_stage = parse_num(k, v)?,
                "block" => cfg.block = v.parse()?,
                "gamma_mode" => cfg.gamma_mode = v.parse()?,
                "seed" => cfg.seed = parse_num(k, v)?,
                "patch" => cfg.patch = parse_num(k, v)?,
                "radius" => cfg.radius = parse_num(k, v)?,
                "compass_factor" => cfg.compass_factor = parse_num(k, v)?,
                "top_k" => cfg.top_k = parse_num(k, v)?,
                "blend" => cfg.blend = parse_num(k, v)?,
                "temperature" => cfg.temperature = parse_num(k, v)?,
                _ => return Err(Error::Config(format!("line {}: unknown key {k:?}", lineno + 1))),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        ModelConfig::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "scale = {}", self.scale);
        let _ = writeln!(s, "channels = {}", self.channels);
        let _ = writeln!(s, "window = {}", self.window);
        let _ = writeln!(s, "heads = {}", self.heads);
        let _ = writeln!(s, "state_dim = {}", self.state_dim);
        let _ = writeln!(s, "scan_mode = {}", self.scan_mode.name());
        let _ = writeln!(s, "stages = {}", self.stages);
        let _ = writeln!(s, "blocks_per_stage = {}", self.blocks_per_stage);
        let _ = writeln!(s, "block = {}", self.block.name());
        let _ = writeln!(s, "gamma_mode = {}", self.gamma_mode.name());
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "patch = {}", self.patch);
        let _ = writeln!(s, "radius = {}", self.radius);
        let _ = writeln!(s, "compass_factor = {}", self.compass_factor);
        let _ = writeln!(s, "top_k = {}", self.top_k);
        let _ = writeln!(s, "blend = {}", self.blend);
        let _ = writeln!(s, "temperature = {}", self.temperature);
        s
    }

    pub fn block_config(&self) -> BlockConfig {
        let (layout, align) = match self.scan_mode {
            ScanMode::ContentAware => (SequenceLayout::Interleaved, true),
            ScanMode::Raster | ScanMode::Fiedler => (SequenceLayout::FrameMajor, false),
        };
        BlockConfig {
            kind: self.block,
            gamma_mode: self.gamma_mode,
            window: WindowConfig {
                win: self.window,
                heads: self.heads,
                dim: self.channels,
            },
            glssm: GlssmConfig {
                state_dim: self.state_dim,
                patch: self.patch,
                radius: self.radius,
                layout,
                align,
            },
        }
    }

    pub fn propagation(&self) -> PropagationConfig {
        PropagationConfig {
            stages: self.stages,
            blocks_per_stage: self.blocks_per_stage,
            channels: self.channels,
            first_direction: Direction::Backward,
            block: self.block_config(),
        }
    }

    pub fn compass(&self) -> CompassConfig {
        CompassConfig {
            factor: self.compass_factor,
            top_k: self.top_k,
            blend: self.blend,
            temperature: self.temperature,
            solve: FiedlerSolveConfig {
                seed: self.seed,
                ..FiedlerSolveConfig::default()
            },
        }
    }
}

/// Every parameter the model reads, in a fixed order.
pub fn param_specs(cfg: &ModelConfig) -> Vec<ParamSpec> {
    let c = cfg.channels;
    let k = embed_kernel_size(cfg.compass_factor);
    let mut v = vec![
        ParamSpec::new("shallow.w", &[c, 3, 3, 3], Init::FanInUniform(27)),
        ParamSpec::new("shallow.b", &[c], Init::Zeros),
        ParamSpec::new("compass.embed.w", &[c, c, k, k], Init::FanInUniform(c * k * k)),
        ParamSpec::new("compass.embed.b", &[c], Init::Zeros),
    ];
    v.extend(propagation_specs(&cfg.propagation()));
    v.extend([
        ParamSpec::new("recon.up1.w", &[4 * c, c, 3, 3], Init::FanInUniform(c * 9)),
        ParamSpec::new("recon.up1.b", &[4 * c], Init::Zeros),
        ParamSpec::new("recon.up2.w", &[4 * c, c, 3, 3], Init::FanInUniform(c * 9)),
        ParamSpec::new("recon.up2.b", &[4 * c], Init::Zeros),
        ParamSpec::new("recon.out.w", &[3, c, 3, 3], Init::Zeros),
        ParamSpec::new("recon.out.b", &[3], Init::Zeros),
    ]);
    v
}

/// Named model parameters.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ModelWeights {
    pub tensors: NamedTensors,
}

impl ModelWeights {
    /// Deterministic initialization from `cfg.seed`.
    pub fn init(cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(ModelWeights {
            tensors: materialize_all(&param_specs(cfg), cfg.seed),
        })
    }

    pub fn count_params(&self) -> usize {
        count_params(&self.tensors)
    }

    /// Every declared parameter present with its declared shape, and nothing
    /// else.
    pub fn check(&self, cfg: &ModelConfig) -> Result<()> {
        let specs = param_specs(cfg);
        for s in &specs {
            match self.tensors.get(&s.name) {
                None => return Err(Error::ModelMismatch(format!("missing {}", s.name))),
                Some(t) if t.shape() != &s.shape[..] => {
                    return Err(Error::ModelMismatch(format!(
                        "{}: file has {:?}, config needs {:?}",
                        s.name,
                        t.shape(),
                        s.shape
                    )))
                }
                _ => {}
            }
        }
        if self.tensors.len() != specs.len() {
            let known: BTreeSet<&str> = specs.iter().map(|s| s.name.as_str()).collect();
            let extra = self.tensors.keys().find(|k| !known.contains(k.as_str()));
            return Err(Error::ModelMismatch(format!("unexpected entry {}", extra.map_or("?", |s| s))));
        }
        Ok(())
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        let mut buf = Vec::new();
        buf.extend_from_slice(WEIGHTS_MAGIC);
        let count = u32::try_from(self.tensors.len()).map_err(|_| Error::arg("save_weights", "too many entries"))?;
        buf.extend_from_slice(&count.to_le_bytes());
        for (name, t) in &self.tensors {
            let len = u16::try_from(name.len()).map_err(|_| Error::arg("save_weights", format!("name too long: {name}")))?;
            buf.extend_from_slice(&len.to_le_bytes());
            buf.extend_from_slice(name.as_bytes());
            t.write_record(&mut buf)?;
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 6];
        read_exact(&mut r, &mut magic, "MVSRW1 magic")?;
        if &magic != WEIGHTS_MAGIC {
            return Err(Error::BadMagic { expected: "MVSRW1" });
        }
        let mut count = [0u8; 4];
        read_exact(&mut r, &mut count, "MVSRW1 entry count")?;
        let count = u32::from_le_bytes(count);
        let mut tensors = NamedTensors::new();
        for i in 0..count {
            let mut len = [0u8; 2];
            read_exact(&mut r, &mut len, &format!("name length of entry {i}"))?;
            let mut name = vec![0u8; u16::from_le_bytes(len) as usize];
            read_exact(&mut r, &mut name, &format!("name of entry {i}"))?;
            let name = String::from_utf8(name).map_err(|_| Error::arg("load_weights", format!("entry {i}: name is not UTF-8")))?;
            let what = |part: &str| format!("{part} of entry {name:?}");
            let mut rank = [0u8; 1];
            read_exact(&mut r, &mut rank, &what("rank"))?;
            let mut shape = Vec::with_capacity(rank[0] as usize);
            for _ in 0..rank[0] {
                let mut e = [0u8; 4];
                read_exact(&mut r, &mut e, &what("extents"))?;
                shape.push(u32::from_le_bytes(e) as usize);
            }
            let n: usize = shape.iter().product();
            let mut raw = vec![0u8; n * 4];
            read_exact(&mut r, &mut raw, &what("payload"))?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            if tensors.contains_key(&name) {
                return Err(Error::DuplicateName(name));
            }
            tensors.insert(name, Tensor::new(shape, data)?);
        }
        Ok(ModelWeights { tensors })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut buf = Vec::new();
        self.write(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        ModelWeights::read(&bytes[..])
    }
}

pub fn count_params(t: &NamedTensors) -> usize {
    t.values().map(Tensor::numel).sum()
}

// ---------------------------------------------------------------------------
// Forward

/// Full-resolution scan order for `cfg.scan_mode`, from one frame's shallow
/// features `[C, H, W]`.
pub fn scan_order(store: &NamedTensors, feat: &Tensor, cfg: &ModelConfig) -> Result<ScanOrder> {
    let (_, h, w) = feat.dims3()?;
    match cfg.scan_mode {
        ScanMode::Raster => raster_order(h, w),
        ScanMode::Fiedler | ScanMode::ContentAware => {
            let factor = common_factor(h, w, cfg.compass_factor);
            let ew = store
                .get("compass.embed.w")
                .ok_or_else(|| Error::ModelMismatch("missing compass.embed.w".into()))?;
            let eb = store
                .get("compass.embed.b")
                .ok_or_else(|| Error::ModelMismatch("missing compass.embed.b".into()))?;
            let tokens = embed_downsample(feat, factor, ew, eb)?;
            compass_from_tokens(&tokens, &cfg.compass(), (h, w))
        }
    }
}

fn conv_param(g: &mut Graph, store: &NamedTensors, x: &Var, name: &str) -> Result<Var> {
    let w = g.param(store, &format!("{name}.w"))?;
    let b = g.param(store, &format!("{name}.b"))?;
    g.conv2d(x, &w, &b, 1, 1)
}

fn upsample2(g: &mut Graph, x: &Var) -> Result<Var> {
    let (c, h, w) = x.value().dims3()?;
    let (idx, shape) = ops::pixel_shuffle_index(c, h, w, 2)?;
    let idx: Rc<[usize]> = idx.into();
    g.gather(x, idx, &shape)
}

/// Per-frame super-resolved outputs `[3, 4H, 4W]` on a graph.
pub fn forward_graph(
    g: &mut Graph,
    store: &NamedTensors,
    lr: &Tensor,
    flows: &FlowSet,
    cfg: &ModelConfig,
) -> Result<Vec<Var>> {
    cfg.validate()?;
    let (t, c3, _, _) = lr.dims4()?;
    if c3 != 3 || t == 0 {
        return Err(Error::shape("forward", format!("expected [T>=1, 3, H, W], got {:?}", lr.shape())));
    }
    lr.check_finite("forward")?;
    let frames = lr.unstack()?;
    let mut feats = Vec::with_capacity(t);
    for f in &frames {
        let x = g.constant(f.clone());
        let y = conv_param(g, store, &x, "shallow")?;
        feats.push(g.leaky_relu(&y, LRELU_SLOPE)?);
    }
    let order = scan_order(store, feats[t / 2].value(), cfg)?.windowed(cfg.window)?;
    let hs = propagate(g, store, &feats, flows, &order, &cfg.propagation())?;

    let mut out = Vec::with_capacity(t);
    for (h, f) in hs.iter().zip(&frames) {
        let y = conv_param(g, store, h, "recon.up1")?;
        let y = upsample2(g, &y)?;
        let y = g.leaky_relu(&y, LRELU_SLOPE)?;
        let y = conv_param(g, store, &y, "recon.up2")?;
        let y = upsample2(g, &y)?;
        let y = g.leaky_relu(&y, LRELU_SLOPE)?;
        let residual = conv_param(g, store, &y, "recon.out")?;
        let base = g.constant(bicubic_resize(f, cfg.scale as f32)?);
        out.push(g.add(&base, &residual)?);
    }
    Ok(out)
}

/// Super-resolves a clip `[T, 3, H, W]` to `[T, 3, 4H, 4W]`. Values are not
/// clamped.
pub fn forward(lr: &Tensor, flows: &FlowSet, cfg: &ModelConfig, weights: &ModelWeights) -> Result<Tensor> {
    let mut g = Graph::no_grad();
    let out = forward_graph(&mut g, &weights.tensors, lr, flows, cfg)?;
    let frames: Vec<Tensor> = out.iter().map(|v| v.value().clone()).collect();
    Tensor::stack(&frames)
}

/// Per-frame bicubic upscaling, the model's output at initialization.
pub fn bicubic_baseline(lr: &Tensor, scale: usize) -> Result<Tensor> {
    let frames = lr
        .unstack()?
        .iter()
        .map(|f| bicubic_resize(f, scale as f32))
        .collect::<Result<Vec<_>>>()?;
    Tensor::stack(&frames)
}

// ---------------------------------------------------------------------------
// Training

/// Adam moments and step count.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    pub step: u32,
    pub m: NamedTensors,
    pub v: NamedTensors,
}

impl Default for AdamState {
    fn default() -> Self {
        AdamState {
            beta1: 0.9,
            beta2: 0.99,
            eps: 1e-8,
            step: 0,
            m: NamedTensors::new(),
            v: NamedTensors::new(),
        }
    }
}

impl AdamState {
    /// One bias-corrected Adam update of `weights` in place.
    pub fn update(&mut self, weights: &mut NamedTensors, grads: &NamedTensors, lr_rate: f32) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (name, w) in weights.iter_mut() {
            let Some(gr) = grads.get(name) else { continue };
            let m = self.m.entry(name.clone()).or_insert_with(|| Tensor::zeros(w.shape()));
            let v = self.v.entry(name.clone()).or_insert_with(|| Tensor::zeros(w.shape()));
            let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
            for (((wi, &gi), mi), vi) in w
                .data_mut()
                .iter_mut()
                .zip(gr.data())
                .zip(m.data_mut().iter_mut())
                .zip(v.data_mut().iter_mut())
            {
                *mi = b1 * *mi + (1.0 - b1) * gi;
                *vi = b2 * *vi + (1.0 - b2) * gi * gi;
                let mh = *mi / bc1;
                let vh = *vi / bc2;
                *wi -= lr_rate * mh / (vh.sqrt() + eps);
            }
        }
    }
}

/// Cosine annealing from `base` to `floor` over `total` steps.
pub fn cosine_lr(base: f32, floor: f32, step: usize, total: usize) -> f32 {
    if total == 0 {
        return base;
    }
    let t = (step.min(total) as f32) / total as f32;
    floor + 0.5 * (base - floor) * (1.0 + (std::f32::consts::PI * t).cos())
}

/// Mean per-pixel Charbonnier loss of the model over `(lr, hr)` clips, on a
/// graph; clips are weighted equally.
pub fn loss_graph(g: &mut Graph, store: &NamedTensors, batch: &[(Tensor, Tensor)], cfg: &ModelConfig) -> Result<Var> {
    if batch.is_empty() {
        return Err(Error::arg("train_step", "empty batch"));
    }
    let mut total: Option<Var> = None;
    for (lr, hr) in batch {
        let (t, c, h, w) = lr.dims4()?;
        if hr.shape() != [t, c, h * cfg.scale, w * cfg.scale] {
            return Err(Error::shape("train_step", format!("lr {:?} vs hr {:?}", lr.shape(), hr.shape())));
        }
        let sr = forward_graph(g, store, lr, &FlowSet::zero(), cfg)?;
        let sr = g.concat(&sr)?;
        let target = hr.clone().reshape(&[t * c, h * cfg.scale, w * cfg.scale])?;
        let l = g.charbonnier_mean(&sr, &target, CharbonnierConfig::default())?;
        total = Some(match total {
            Some(acc) => g.add(&acc, &l)?,
            None => l,
        });
    }
    g.scale(&total.expect("non-empty batch"), 1.0 / batch.len() as f32)
}

/// One Adam step on the mean Charbonnier loss with zero flows. Returns the
/// loss before the update.
pub fn train_step(
    batch: &[(Tensor, Tensor)],
    cfg: &ModelConfig,
    weights: &mut ModelWeights,
    adam: &mut AdamState,
    lr_rate: f32,
) -> Result<f32> {
    let mut g = Graph::new();
    let loss = loss_graph(&mut g, &weights.tensors, batch, cfg)?;
    let value = loss.value().data()[0];
    if !value.is_finite() {
        return Err(Error::NonFinite { op: "train_step", index: 0 });
    }
    let grads = g.param_grads(&g.backward(&loss)?);
    adam.update(&mut weights.tensors, &grads, lr_rate);
    Ok(value)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_round_trip() {
        let mut cfg = ModelConfig::default();
        cfg.scan_mode = ScanMode::Fiedler;
        cfg.block = BlockKind::GlssmGlssm;
        cfg.blend = 0.25;
        assert_eq!(ModelConfig::parse(&cfg.to_text()).unwrap(), cfg);
    }

    #[test]
    fn config_errors() {
        assert!(ModelConfig::parse("scale = 2").is_err());
        assert!(ModelConfig::parse("bogus = 1").is_err());
        assert!(ModelConfig::parse("channels = 6\nheads = 4").is_err());
        assert!(ModelConfig::parse("channels").is_err());
        assert!(ModelConfig::parse("seed = 1\nseed = 2").is_err());
        let cfg = ModelConfig::parse("# comment\n\nchannels = 8 # trailing\nheads = 2\n").unwrap();
        assert_eq!(cfg.channels, 8);
    }

    #[test]
    fn weights_layout_is_exact() {
        let mut w = ModelWeights::default();
        w.tensors.insert("ab".into(), Tensor::new(vec![2], vec![1.0, -1.0]).unwrap());
        let mut buf = Vec::new();
        w.write(&mut buf).unwrap();
        let mut expected = b"MVSRW1".to_vec();
        expected.extend_from_slice(&1u32.to_le_bytes());
        expected.extend_from_slice(&2u16.to_le_bytes());
        expected.extend_from_slice(b"ab");
        expected.push(1);
        expected.extend_from_slice(&2u32.to_le_bytes());
        expected.extend_from_slice(&1.0f32.to_le_bytes());
        expected.extend_from_slice(&(-1.0f32).to_le_bytes());
        assert_eq!(buf, expected);
        assert_eq!(ModelWeights::read(&buf[..]).unwrap(), w);
    }

    #[test]
    fn empty_weights_file_is_header_only() {
        let mut buf = Vec::new();
        ModelWeights::default().write(&mut buf).unwrap();
        assert_eq!(buf, [b"MVSRW1".as_slice(), &0u32.to_le_bytes()].concat());
        assert_eq!(ModelWeights::read(&buf[..]).unwrap().count_params(), 0);
    }

    #[test]
    fn weights_errors_are_distinct() {
        let mut w = ModelWeights::default();
        w.tensors.insert("first".into(), Tensor::zeros(&[3]));
        w.tensors.insert("second".into(), Tensor::zeros(&[2, 2]));
        let mut buf = Vec::new();
        w.write(&mut buf).unwrap();
        match ModelWeights::read(&buf[..buf.len() - 3]) {
            Err(Error::Truncated { what }) => assert!(what.contains("second"), "{what}"),
            other => panic!("{other:?}"),
        }
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(ModelWeights::read(&bad[..]), Err(Error::BadMagic { .. })));

        let mut dup = b"MVSRW1".to_vec();
        dup.extend_from_slice(&2u32.to_le_bytes());
        for _ in 0..2 {
            dup.extend_from_slice(&1u16.to_le_bytes());
            dup.push(b'x');
            dup.push(0);
            dup.extend_from_slice(&0.5f32.to_le_bytes());
        }
        assert!(matches!(ModelWeights::read(&dup[..]), Err(Error::DuplicateName(n)) if n == "x"));
    }

    #[test]
    fn count_params_examples() {
        assert_eq!(count_params(&NamedTensors::new()), 0);
        let mut t = NamedTensors::new();
        t.insert("a".into(), Tensor::zeros(&[2, 3]));
        assert_eq!(count_params(&t), 6);
    }

    #[test]
    fn cosine_schedule_endpoints() {
        assert_eq!(cosine_lr(1.0, 0.0, 0, 10), 1.0);
        assert!(cosine_lr(1.0, 0.1, 10, 10) - 0.1 < 1e-6);
        assert!((cosine_lr(1.0, 0.0, 5, 10) - 0.5).abs() < 1e-6);
    }
}
