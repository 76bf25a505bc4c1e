//! Global-local state-space block: window self-attention (WFSAB) for local
//! structure and a content-aware selective scan (GLSSM) over multi-frame
//! token sequences, combined by a per-channel fusion scale `gamma`.
//!
//! All functions build on a [`Graph`], so the same code serves inference
//! (`Graph::no_grad`) and training.

use std::rc::Rc;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::numerics::ops;
use crate::numerics::{Graph, NamedTensors, Var};
use crate::params::{join, Init, ParamSpec};
use crate::scan_compass::{common_factor, ScanOrder};
use crate::sequentialize::{find_displacements, SequenceLayout};
use crate::tensor::Tensor;

const LN_EPS: f32 = 1e-5;

/// Window attention geometry.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WindowConfig {
    pub win: usize,
    pub heads: usize,
    pub dim: usize,
}

impl Default for WindowConfig {
    fn default() -> Self {
        WindowConfig {
            win: 8,
            heads: 4,
            dim: 64,
        }
    }
}

impl WindowConfig {
    pub fn validate(&self) -> Result<()> {
        if self.win == 0 || self.heads == 0 || self.dim == 0 || self.dim % self.heads != 0 {
            return Err(Error::Config(format!(
                "window {} / heads {} / dim {}: need win >= 1 and dim divisible by heads",
                self.win, self.heads, self.dim
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }
}

/// Settings of the state-space branch.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GlssmConfig {
    pub state_dim: usize,
    /// Alignment patch edge; reduced to the largest divisor of both extents.
    pub patch: usize,
    /// Alignment search radius in patches.
    pub radius: usize,
    pub layout: SequenceLayout,
    /// Patch-align non-current frames before sequentializing.
    pub align: bool,
}

impl Default for GlssmConfig {
    fn default() -> Self {
        GlssmConfig {
            state_dim: 16,
            patch: 8,
            radius: 2,
            layout: SequenceLayout::Interleaved,
            align: true,
        }
    }
}

/// How the state-space branch is added back.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GammaMode {
    /// Learned per-channel scale, initialized to one.
    Learnable,
    /// Fixed scale of one; no parameter.
    FrozenOne,
    /// Branch skipped entirely.
    Zero,
}

impl FromStr for GammaMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "learnable" => Ok(GammaMode::Learnable),
            "frozen_one" => Ok(GammaMode::FrozenOne),
            "zero" => Ok(GammaMode::Zero),
            _ => Err(Error::Config(format!("unknown gamma_mode {s:?}"))),
        }
    }
}

impl GammaMode {
    pub fn name(self) -> &'static str {
        match self {
            GammaMode::Learnable => "learnable",
            GammaMode::FrozenOne => "frozen_one",
            GammaMode::Zero => "zero",
        }
    }
}

/// Block composition.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BlockKind {
    Wfsab,
    WfsabWfsab,
    WfsabGlssm,
    GlssmGlssm,
}

impl FromStr for BlockKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().replace('_', "-").as_str() {
            "WFSAB" => Ok(BlockKind::Wfsab),
            "WFSAB-WFSAB" => Ok(BlockKind::WfsabWfsab),
            "WFSAB-GLSSM" => Ok(BlockKind::WfsabGlssm),
            "GLSSM-GLSSM" => Ok(BlockKind::GlssmGlssm),
            _ => Err(Error::Config(format!("unknown block {s:?}"))),
        }
    }
}

impl BlockKind {
    pub fn name(self) -> &'static str {
        match self {
            BlockKind::Wfsab => "WFSAB",
            BlockKind::WfsabWfsab => "WFSAB-WFSAB",
            BlockKind::WfsabGlssm => "WFSAB-GLSSM",
            BlockKind::GlssmGlssm => "GLSSM-GLSSM",
        }
    }

    fn stages(self) -> &'static [Sub] {
        match self {
            BlockKind::Wfsab => &[Sub::Attn],
            BlockKind::WfsabWfsab => &[Sub::Attn, Sub::Attn],
            BlockKind::WfsabGlssm => &[Sub::Attn, Sub::Ssm],
            BlockKind::GlssmGlssm => &[Sub::Ssm, Sub::Ssm],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Sub {
    Attn,
    Ssm,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BlockConfig {
    pub kind: BlockKind,
    pub gamma_mode: GammaMode,
    pub window: WindowConfig,
    pub glssm: GlssmConfig,
}

impl BlockConfig {
    pub fn validate(&self) -> Result<()> {
        self.window.validate()?;
        if self.glssm.state_dim == 0 || self.glssm.patch == 0 {
            return Err(Error::Config("state_dim and patch must be >= 1".into()));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Window partition

/// Reflection about the border without repeating the edge sample.
pub fn reflect(i: usize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let m = i % period;
    if m < n {
        m
    } else {
        period - m
    }
}

fn window_grid(h: usize, w: usize, win: usize) -> (usize, usize) {
    (h.div_ceil(win), w.div_ceil(win))
}

/// `[C, H, W]` element for each `[nw, win^2, C]` element. Extents that are
/// not multiples of `win` are reflection-padded at the bottom and right.
pub fn partition_index(c: usize, h: usize, w: usize, win: usize) -> Vec<usize> {
    let (nwy, nwx) = window_grid(h, w, win);
    let mut idx = Vec::with_capacity(nwy * nwx * win * win * c);
    for wy in 0..nwy {
        for wx in 0..nwx {
            for i in 0..win {
                let sy = reflect(wy * win + i, h);
                for j in 0..win {
                    let sx = reflect(wx * win + j, w);
                    for ch in 0..c {
                        idx.push((ch * h + sy) * w + sx);
                    }
                }
            }
        }
    }
    idx
}

/// `[nw, win^2, C]` element for each `[C, H, W]` element (padding cropped).
pub fn reverse_index(c: usize, h: usize, w: usize, win: usize) -> Vec<usize> {
    let (_, nwx) = window_grid(h, w, win);
    let mut idx = Vec::with_capacity(c * h * w);
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                let window = (y / win) * nwx + x / win;
                let q = (y % win) * win + x % win;
                idx.push((window * win * win + q) * c + ch);
            }
        }
    }
    idx
}

pub fn window_partition(x: &Tensor, win: usize) -> Result<Tensor> {
    let (c, h, w) = x.dims3()?;
    if win == 0 {
        return Err(Error::arg("window_partition", "win must be >= 1"));
    }
    let (nwy, nwx) = window_grid(h, w, win);
    ops::gather(x, &partition_index(c, h, w, win), &[nwy * nwx, win * win, c])
}

pub fn window_reverse(windows: &Tensor, win: usize, h: usize, w: usize) -> Result<Tensor> {
    let &[nw, q, c] = windows.shape() else {
        return Err(Error::shape("window_reverse", format!("expected [nw, win^2, C], got {:?}", windows.shape())));
    };
    let (nwy, nwx) = window_grid(h, w, win);
    if nw != nwy * nwx || q != win * win {
        return Err(Error::shape("window_reverse", format!("{nw} windows of {q} for {h}x{w} / {win}")));
    }
    ops::gather(windows, &reverse_index(c, h, w, win), &[c, h, w])
}

/// Relative-position table entry for window positions `i`, `j`.
fn relative_index(i: usize, j: usize, win: usize) -> usize {
    let (yi, xi) = (i / win, i % win);
    let (yj, xj) = (j / win, j % win);
    let span = 2 * win - 1;
    (yi + win - 1 - yj) * span + (xi + win - 1 - xj)
}

// ---------------------------------------------------------------------------
// Parameters

fn norm_specs(out: &mut Vec<ParamSpec>, p: &str, c: usize) {
    out.push(ParamSpec::new(join(p, "g"), &[c], Init::Ones));
    out.push(ParamSpec::new(join(p, "b"), &[c], Init::Zeros));
}

fn linear_specs(out: &mut Vec<ParamSpec>, p: &str, out_dim: usize, in_dim: usize) {
    out.push(ParamSpec::new(join(p, "w"), &[out_dim, in_dim], Init::TruncNormal(0.02)));
    out.push(ParamSpec::new(join(p, "b"), &[out_dim], Init::Zeros));
}

pub fn wfsab_specs(prefix: &str, cfg: &WindowConfig) -> Vec<ParamSpec> {
    let c = cfg.dim;
    let span = 2 * cfg.win - 1;
    let mut v = Vec::new();
    norm_specs(&mut v, &join(prefix, "norm1"), c);
    linear_specs(&mut v, &join(prefix, "qkv"), 3 * c, c);
    v.push(ParamSpec::new(join(prefix, "rpb"), &[cfg.heads, span * span], Init::TruncNormal(0.02)));
    linear_specs(&mut v, &join(prefix, "proj"), c, c);
    norm_specs(&mut v, &join(prefix, "norm2"), c);
    linear_specs(&mut v, &join(prefix, "fc1"), 2 * c, c);
    linear_specs(&mut v, &join(prefix, "fc2"), c, 2 * c);
    v
}

/// Initial step size of the selective scan.
pub const DELTA_INIT: f32 = 0.1;

pub fn glssm_specs(prefix: &str, c: usize, cfg: &GlssmConfig) -> Vec<ParamSpec> {
    let n = cfg.state_dim;
    let mut v = Vec::new();
    norm_specs(&mut v, &join(prefix, "norm"), c);
    linear_specs(&mut v, &join(prefix, "in"), c, c);
    linear_specs(&mut v, &join(prefix, "z"), c, c);
    v.push(ParamSpec::new(join(prefix, "delta.w"), &[c, c], Init::TruncNormal(0.02)));
    v.push(ParamSpec::new(
        join(prefix, "delta.b"),
        &[c],
        Init::Const(ops::softplus_inverse(DELTA_INIT)),
    ));
    linear_specs(&mut v, &join(prefix, "bsel"), n, c);
    linear_specs(&mut v, &join(prefix, "csel"), n, c);
    v.push(ParamSpec::new(join(prefix, "a_log"), &[c, n], Init::StateLog));
    v.push(ParamSpec::new(join(prefix, "d"), &[c], Init::Ones));
    linear_specs(&mut v, &join(prefix, "out"), c, c);
    v
}

fn sub_name(sub: Sub, k: usize) -> String {
    match sub {
        Sub::Attn => format!("attn{k}"),
        Sub::Ssm => format!("ssm{k}"),
    }
}

pub fn block_specs(prefix: &str, cfg: &BlockConfig) -> Vec<ParamSpec> {
    let mut v = Vec::new();
    for (k, &sub) in cfg.kind.stages().iter().enumerate() {
        let p = join(prefix, &sub_name(sub, k));
        match sub {
            Sub::Attn => v.extend(wfsab_specs(&p, &cfg.window)),
            Sub::Ssm => {
                if cfg.gamma_mode == GammaMode::Zero {
                    continue;
                }
                v.extend(glssm_specs(&p, cfg.window.dim, &cfg.glssm));
                if cfg.gamma_mode == GammaMode::Learnable {
                    v.push(ParamSpec::new(join(&p, "gamma"), &[cfg.window.dim], Init::Ones));
                }
            }
        }
    }
    v
}

// ---------------------------------------------------------------------------
// WFSAB

/// Intermediate values of one attention pass.
#[derive(Clone, Debug)]
pub struct WfsabTrace {
    /// `[nw * heads, win^2, win^2]`, rows sum to one.
    pub probs: Tensor,
    /// Attention output after the projection, before the residual; `[nw * win^2, C]`.
    pub attended: Tensor,
    /// Pre-norm tokens `[nw * win^2, C]`.
    pub normed: Tensor,
}

fn rc(v: Vec<usize>) -> Rc<[usize]> {
    v.into()
}

fn wfsab_impl(
    g: &mut Graph,
    store: &NamedTensors,
    prefix: &str,
    x: &Var,
    cfg: &WindowConfig,
) -> Result<(Var, WfsabTrace)> {
    cfg.validate()?;
    let (c, h, w) = x.value().dims3()?;
    if c != cfg.dim {
        return Err(Error::ModelMismatch(format!("{prefix}: {c} channels, block expects {}", cfg.dim)));
    }
    let win = cfg.win;
    let q_len = win * win;
    let (nwy, nwx) = window_grid(h, w, win);
    let nw = nwy * nwx;
    let m = nw * q_len;
    let (heads, dh) = (cfg.heads, cfg.head_dim());
    let p = |name: &str| join(prefix, name);

    let tokens = g.gather(x, rc(partition_index(c, h, w, win)), &[m, c])?;
    let (n1g, n1b) = (g.param(store, &p("norm1.g"))?, g.param(store, &p("norm1.b"))?);
    let normed = g.layer_norm(&tokens, &n1g, &n1b, LN_EPS)?;
    let (qkv_w, qkv_b) = (g.param(store, &p("qkv.w"))?, g.param(store, &p("qkv.b"))?);
    let qkv = g.linear(&normed, &qkv_w, Some(&qkv_b))?;

    let b = nw * heads;
    let split = |offset: usize| {
        let mut idx = Vec::with_capacity(b * q_len * dh);
        for wi in 0..nw {
            for hd in 0..heads {
                for i in 0..q_len {
                    for e in 0..dh {
                        idx.push((wi * q_len + i) * 3 * c + offset + hd * dh + e);
                    }
                }
            }
        }
        rc(idx)
    };
    let q = g.gather(&qkv, split(0), &[b, q_len, dh])?;
    let k = g.gather(&qkv, split(c), &[b, q_len, dh])?;
    let v = g.gather(&qkv, split(2 * c), &[b, q_len, dh])?;

    let scores = g.bmm(&q, &k, true)?;
    let scores = g.scale(&scores, 1.0 / (dh as f32).sqrt())?;
    let rpb = g.param(store, &p("rpb"))?;
    let span2 = (2 * win - 1) * (2 * win - 1);
    let mut bias_idx = Vec::with_capacity(b * q_len * q_len);
    for _ in 0..nw {
        for hd in 0..heads {
            for i in 0..q_len {
                for j in 0..q_len {
                    bias_idx.push(hd * span2 + relative_index(i, j, win));
                }
            }
        }
    }
    let bias = g.gather(&rpb, rc(bias_idx), &[b, q_len, q_len])?;
    let scores = g.add(&scores, &bias)?;
    let probs = g.softmax(&scores)?;
    let out = g.bmm(&probs, &v, false)?;

    let mut merge = Vec::with_capacity(m * c);
    for wi in 0..nw {
        for i in 0..q_len {
            for hd in 0..heads {
                for e in 0..dh {
                    merge.push(((wi * heads + hd) * q_len + i) * dh + e);
                }
            }
        }
    }
    let merged = g.gather(&out, rc(merge), &[m, c])?;
    let (pw, pb) = (g.param(store, &p("proj.w"))?, g.param(store, &p("proj.b"))?);
    let attended = g.linear(&merged, &pw, Some(&pb))?;
    let t1 = g.add(&tokens, &attended)?;

    let (n2g, n2b) = (g.param(store, &p("norm2.g"))?, g.param(store, &p("norm2.b"))?);
    let n2 = g.layer_norm(&t1, &n2g, &n2b, LN_EPS)?;
    let (f1w, f1b) = (g.param(store, &p("fc1.w"))?, g.param(store, &p("fc1.b"))?);
    let hidden = g.linear(&n2, &f1w, Some(&f1b))?;
    let hidden = g.gelu(&hidden)?;
    let (f2w, f2b) = (g.param(store, &p("fc2.w"))?, g.param(store, &p("fc2.b"))?);
    let mlp = g.linear(&hidden, &f2w, Some(&f2b))?;
    let t2 = g.add(&t1, &mlp)?;

    let y = g.gather(&t2, rc(reverse_index(c, h, w, win)), &[c, h, w])?;
    let trace = WfsabTrace {
        probs: probs.value().clone(),
        attended: attended.value().clone(),
        normed: normed.value().clone(),
    };
    Ok((y, trace))
}

/// Pre-norm window attention with relative position bias and a GELU MLP,
/// each with a residual connection. `x` is `[C, H, W]`.
pub fn wfsab(g: &mut Graph, store: &NamedTensors, prefix: &str, x: &Var, cfg: &WindowConfig) -> Result<Var> {
    wfsab_impl(g, store, prefix, x, cfg).map(|(y, _)| y)
}

/// [`wfsab`] on a plain tensor, also returning intermediate values.
pub fn wfsab_traced(store: &NamedTensors, prefix: &str, x: &Tensor, cfg: &WindowConfig) -> Result<(Tensor, WfsabTrace)> {
    let mut g = Graph::no_grad();
    let xv = g.constant(x.clone());
    let (y, trace) = wfsab_impl(&mut g, store, prefix, &xv, cfg)?;
    Ok((y.value().clone(), trace))
}

// ---------------------------------------------------------------------------
// GLSSM

fn transpose_to_tokens(x: &Tensor) -> Result<Tensor> {
    let (c, h, w) = x.dims3()?;
    let l = h * w;
    let xd = x.data();
    Ok(Tensor::from_fn(&[l, c], |i| xd[(i % c) * l + i / c]))
}

fn transpose_to_planes(t: &Tensor, h: usize, w: usize) -> Result<Tensor> {
    let &[l, c] = t.shape() else {
        return Err(Error::shape("transpose_to_planes", format!("{:?}", t.shape())));
    };
    let td = t.data();
    Tensor::new(vec![c, h, w], (0..c * l).map(|i| td[(i % l) * c + i / l]).collect())
}

/// For every frame: source site of each site after alignment to `cur`.
fn alignment_sources(
    frames: &[&Tensor],
    cur: usize,
    gamma: &Tensor,
    beta: &Tensor,
    cfg: &GlssmConfig,
) -> Result<Vec<Vec<usize>>> {
    let (_, h, w) = frames[0].dims3()?;
    let identity: Vec<usize> = (0..h * w).collect();
    if !cfg.align || frames.len() == 1 || cfg.radius == 0 {
        return Ok(vec![identity; frames.len()]);
    }
    let patch = common_factor(h, w, cfg.patch);
    let normed: Vec<Tensor> = frames
        .iter()
        .map(|f| {
            let t = ops::layer_norm(&transpose_to_tokens(f)?, gamma, beta, LN_EPS)?;
            transpose_to_planes(&t, h, w)
        })
        .collect::<Result<_>>()?;
    let mut out = Vec::with_capacity(frames.len());
    for (t, nbr) in normed.iter().enumerate() {
        if t == cur {
            out.push(identity.clone());
            continue;
        }
        let pa = find_displacements(&normed[cur], nbr, patch, cfg.radius)?;
        out.push(pa.index_map(1, h, w));
    }
    Ok(out)
}

fn sequence_row(layout: SequenceLayout, rank: usize, t: usize, frames: usize, l: usize) -> usize {
    match layout {
        SequenceLayout::Interleaved => rank * frames + t,
        SequenceLayout::FrameMajor => t * l + rank,
    }
}

fn reverse_rows(g: &mut Graph, x: &Var) -> Result<Var> {
    let &[l, c] = x.shape() else {
        return Err(Error::shape("reverse_rows", format!("{:?}", x.shape())));
    };
    let idx: Vec<usize> = (0..l).flat_map(|r| (0..c).map(move |ch| (l - 1 - r) * c + ch)).collect();
    g.gather(x, rc(idx), &[l, c])
}

/// State-space branch over a group of frames, each `[C, H, W]`.
///
/// Pre-norm, alignment of every other frame to frame `cur`, sequentializing
/// along `order`, a bidirectional selective scan with shared parameters
/// (outputs summed), a SiLU gate and an output projection. Outputs of
/// non-current frames are in the current frame's aligned coordinates. No
/// residual is added.
pub fn glssm(
    g: &mut Graph,
    store: &NamedTensors,
    prefix: &str,
    frames: &[Var],
    cur: usize,
    order: &ScanOrder,
    cfg: &GlssmConfig,
) -> Result<Vec<Var>> {
    let first = frames.first().ok_or_else(|| Error::arg("glssm", "no frames"))?;
    let (c, h, w) = first.value().dims3()?;
    if frames.iter().any(|f| f.shape() != first.shape()) {
        return Err(Error::shape("glssm", "frames differ in shape"));
    }
    if cur >= frames.len() {
        return Err(Error::arg("glssm", format!("current frame {cur} of {}", frames.len())));
    }
    if order.target_grid != (h, w) {
        return Err(Error::shape("glssm", format!("order grid {:?} vs {h}x{w}", order.target_grid)));
    }
    let p = |name: &str| join(prefix, name);
    let t_count = frames.len();
    let l = h * w;

    let (ng, nb) = (g.param(store, &p("norm.g"))?, g.param(store, &p("norm.b"))?);
    let values: Vec<&Tensor> = frames.iter().map(|f| f.value()).collect();
    let sources = alignment_sources(&values, cur, ng.value(), nb.value(), cfg)?;

    let stacked = g.concat(frames)?;
    let mut idx = vec![0usize; t_count * l * c];
    for (rank, &site) in order.perm.iter().enumerate() {
        for (t, src) in sources.iter().enumerate() {
            let row = sequence_row(cfg.layout, rank, t, t_count, l);
            for ch in 0..c {
                idx[row * c + ch] = (t * c + ch) * l + src[site];
            }
        }
    }
    let seq = g.gather(&stacked, rc(idx), &[t_count * l, c])?;
    let normed = g.layer_norm(&seq, &ng, &nb, LN_EPS)?;

    let lin = |g: &mut Graph, x: &Var, name: &str| -> Result<Var> {
        let wv = g.param(store, &p(&format!("{name}.w")))?;
        let bv = g.param(store, &p(&format!("{name}.b")))?;
        g.linear(x, &wv, Some(&bv))
    };
    let xin = lin(g, &normed, "in")?;
    let z = lin(g, &normed, "z")?;
    let delta = lin(g, &xin, "delta")?;
    let delta = g.softplus(&delta)?;
    let bsel = lin(g, &xin, "bsel")?;
    let csel = lin(g, &xin, "csel")?;
    let a_log = g.param(store, &p("a_log"))?;
    let a = g.exp(&a_log)?;
    let a = g.scale(&a, -1.0)?;
    let d = g.param(store, &p("d"))?;

    let forward = g.selective_scan(&xin, &delta, &a, &bsel, &csel, &d)?;
    let xr = reverse_rows(g, &xin)?;
    let dr = reverse_rows(g, &delta)?;
    let br = reverse_rows(g, &bsel)?;
    let cr = reverse_rows(g, &csel)?;
    let backward = g.selective_scan(&xr, &dr, &a, &br, &cr, &d)?;
    let backward = reverse_rows(g, &backward)?;
    let y = g.add(&forward, &backward)?;
    let gate = g.silu(&z)?;
    let y = g.mul(&y, &gate)?;
    let out = lin(g, &y, "out")?;

    (0..t_count)
        .map(|t| {
            let mut idx = Vec::with_capacity(c * l);
            for ch in 0..c {
                for site in 0..l {
                    idx.push(sequence_row(cfg.layout, order.inv[site], t, t_count, l) * c + ch);
                }
            }
            g.gather(&out, rc(idx), &[c, h, w])
        })
        .collect()
}

fn fuse(g: &mut Graph, store: &NamedTensors, prefix: &str, u: &Var, s: &Var, mode: GammaMode) -> Result<Var> {
    match mode {
        GammaMode::Zero => Ok(u.clone()),
        GammaMode::FrozenOne => g.add(u, s),
        GammaMode::Learnable => {
            let gamma = g.param(store, &join(prefix, "gamma"))?;
            let scaled = g.scale_lead(s, &gamma)?;
            g.add(u, &scaled)
        }
    }
}

/// One block over a group of frames; `order` is the sequence order (the
/// compass restricted to windows). Returns one output per frame.
pub fn block_forward(
    g: &mut Graph,
    store: &NamedTensors,
    prefix: &str,
    frames: &[Var],
    cur: usize,
    order: &ScanOrder,
    cfg: &BlockConfig,
) -> Result<Vec<Var>> {
    cfg.validate()?;
    let mut xs = frames.to_vec();
    for (k, &sub) in cfg.kind.stages().iter().enumerate() {
        let p = join(prefix, &sub_name(sub, k));
        xs = match sub {
            Sub::Attn => xs
                .iter()
                .map(|x| wfsab(g, store, &p, x, &cfg.window))
                .collect::<Result<_>>()?,
            Sub::Ssm => {
                if cfg.gamma_mode == GammaMode::Zero {
                    continue;
                }
                let s = glssm(g, store, &p, &xs, cur, order, &cfg.glssm)?;
                xs.iter()
                    .zip(&s)
                    .map(|(u, s)| fuse(g, store, &p, u, s, cfg.gamma_mode))
                    .collect::<Result<_>>()?
            }
        };
    }
    Ok(xs)
}

/// [`block_forward`] with the canonical WFSAB-GLSSM composition.
pub fn glssb_forward(
    g: &mut Graph,
    store: &NamedTensors,
    prefix: &str,
    frames: &[Var],
    cur: usize,
    order: &ScanOrder,
    window: &WindowConfig,
    glssm_cfg: &GlssmConfig,
    gamma_mode: GammaMode,
) -> Result<Vec<Var>> {
    let cfg = BlockConfig {
        kind: BlockKind::WfsabGlssm,
        gamma_mode,
        window: *window,
        glssm: *glssm_cfg,
    };
    block_forward(g, store, prefix, frames, cur, order, &cfg)
}
