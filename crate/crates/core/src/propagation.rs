//! Cascaded bidirectional recurrent propagation with second-order,
//! flow-guided connections. Each step fuses the current frame's stage input
//! with the warped previous one and two propagated states, then refines the
//! result with a stack of blocks over a three-frame temporal window.

use std::path::Path;

use crate::error::{Error, Result};
use crate::glssb::{block_forward, block_specs, BlockConfig};
use crate::numerics::ops::bilinear_warp;
use crate::numerics::{Graph, NamedTensors, Var};
use crate::params::{join, Init, ParamSpec};
use crate::scan_compass::ScanOrder;
use crate::tensor::Tensor;

/// Direction of one propagation stage.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    /// From the last frame to the first.
    Backward,
    /// From the first frame to the last.
    Forward,
}

impl Direction {
    pub fn flipped(self) -> Self {
        match self {
            Direction::Backward => Direction::Forward,
            Direction::Forward => Direction::Backward,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PropagationConfig {
    pub stages: usize,
    pub blocks_per_stage: usize,
    pub channels: usize,
    /// Direction of stage 0; stages alternate from there.
    pub first_direction: Direction,
    pub block: BlockConfig,
}

impl PropagationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.stages == 0 {
            return Err(Error::Config("stages must be >= 1".into()));
        }
        if self.channels != self.block.window.dim {
            return Err(Error::Config(format!(
                "channels {} differ from block dim {}",
                self.channels, self.block.window.dim
            )));
        }
        self.block.validate()
    }

    pub fn direction(&self, stage: usize) -> Direction {
        if stage % 2 == 0 {
            self.first_direction
        } else {
            self.first_direction.flipped()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FlowProvenance {
    External,
    Zero,
}

/// Optical flows between consecutive frames, in pixels, channel 0 = dx.
///
/// `forward[i]` lives on frame `i + 1`'s grid and points into frame `i`;
/// `backward[i]` lives on frame `i`'s grid and points into frame `i + 1`.
/// Both are `[T - 1, 2, H, W]`.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowSet {
    pub forward: Option<Tensor>,
    pub backward: Option<Tensor>,
    pub provenance: FlowProvenance,
}

impl FlowSet {
    pub fn zero() -> Self {
        FlowSet {
            forward: None,
            backward: None,
            provenance: FlowProvenance::Zero,
        }
    }

    pub fn external(forward: Tensor, backward: Tensor) -> Result<Self> {
        if forward.shape() != backward.shape() {
            return Err(Error::shape("FlowSet", format!("{:?} vs {:?}", forward.shape(), backward.shape())));
        }
        match forward.shape() {
            [_, 2, _, _] => Ok(FlowSet {
                forward: Some(forward),
                backward: Some(backward),
                provenance: FlowProvenance::External,
            }),
            s => Err(Error::shape("FlowSet", format!("expected [T-1, 2, H, W], got {s:?}"))),
        }
    }

    /// Reads `flow_fwd_%04d.mvt` and `flow_bwd_%04d.mvt` for `i` in
    /// `0..frames - 1`.
    pub fn load_dir(dir: impl AsRef<Path>, frames: usize) -> Result<Self> {
        if frames < 2 {
            return Ok(FlowSet::zero());
        }
        let dir = dir.as_ref();
        let read = |kind: &str| -> Result<Tensor> {
            let items = (0..frames - 1)
                .map(|i| Tensor::load_mvt(dir.join(format!("flow_{kind}_{i:04}.mvt"))))
                .collect::<Result<Vec<_>>>()?;
            Tensor::stack(&items)
        };
        FlowSet::external(read("fwd")?, read("bwd")?)
    }

    pub fn save_dir(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        for (kind, t) in [("fwd", &self.forward), ("bwd", &self.backward)] {
            if let Some(t) = t {
                for (i, f) in t.unstack()?.iter().enumerate() {
                    f.save_mvt(dir.join(format!("flow_{kind}_{i:04}.mvt")))?;
                }
            }
        }
        Ok(())
    }

    /// Flows of the time-reversed clip.
    pub fn reversed(&self) -> Result<Self> {
        let flip = |t: &Option<Tensor>| -> Result<Option<Tensor>> {
            t.as_ref()
                .map(|t| {
                    let mut items = t.unstack()?;
                    items.reverse();
                    Tensor::stack(&items)
                })
                .transpose()
        };
        Ok(FlowSet {
            forward: flip(&self.backward)?,
            backward: flip(&self.forward)?,
            provenance: self.provenance,
        })
    }

    fn check(&self, frames: usize, h: usize, w: usize) -> Result<()> {
        for t in [&self.forward, &self.backward].into_iter().flatten() {
            if t.shape() != [frames.saturating_sub(1), 2, h, w] {
                return Err(Error::shape(
                    "propagate",
                    format!("flows {:?} for {frames} frames of {h}x{w}", t.shape()),
                ));
            }
        }
        Ok(())
    }

    /// Flow on frame `t`'s grid pointing one step against `dir`, i.e. into
    /// the frame propagated from.
    fn step(&self, dir: Direction, t: usize) -> Result<Option<Tensor>> {
        let (set, i) = match dir {
            Direction::Forward => (&self.forward, t - 1),
            Direction::Backward => (&self.backward, t),
        };
        set.as_ref().map(|f| f.index_lead(i)).transpose()
    }
}

/// `f1 + f2(x + f1)`: chains a flow into the previous frame with the flow
/// from there one step further.
pub fn compose_flows(f1: &Tensor, f2: &Tensor) -> Result<Tensor> {
    let warped = bilinear_warp(f2, f1)?;
    f1.zip_map(&warped, |a, b| a + b)
}

pub fn propagation_specs(cfg: &PropagationConfig) -> Vec<ParamSpec> {
    let c = cfg.channels;
    let mut v = Vec::new();
    for s in 0..cfg.stages {
        let p = format!("prop{s}");
        v.push(ParamSpec::new(join(&p, "fuse.w"), &[c, 3 * c, 3, 3], Init::FanInUniform(3 * c * 9)));
        v.push(ParamSpec::new(join(&p, "fuse.b"), &[c], Init::Zeros));
        for b in 0..cfg.blocks_per_stage {
            v.extend(block_specs(&join(&p, &format!("block{b}")), &cfg.block));
        }
    }
    v
}

/// Frames in the local window of `t`: itself, then its neighbors against
/// and along the direction of travel, clamped to the clip.
pub fn temporal_window(t: usize, frames: usize, dir: Direction) -> Vec<usize> {
    if frames == 1 {
        return vec![0];
    }
    let before = t.saturating_sub(1);
    let after = (t + 1).min(frames - 1);
    match dir {
        Direction::Forward => vec![t, before, after],
        Direction::Backward => vec![t, after, before],
    }
}

fn warp_opt(g: &mut Graph, x: &Var, flow: &Option<Tensor>) -> Result<Var> {
    match flow {
        Some(f) => g.warp(x, f),
        None => Ok(x.clone()),
    }
}

/// Runs all stages over per-frame features `[C, H, W]` and returns the last
/// stage's output per frame. `order` is the sequence order used by the
/// state-space branch.
pub fn propagate(
    g: &mut Graph,
    store: &NamedTensors,
    features: &[Var],
    flows: &FlowSet,
    order: &ScanOrder,
    cfg: &PropagationConfig,
) -> Result<Vec<Var>> {
    cfg.validate()?;
    let first = features.first().ok_or_else(|| Error::arg("propagate", "no frames"))?;
    let (c, h, w) = first.value().dims3()?;
    if c != cfg.channels || features.iter().any(|f| f.shape() != first.shape()) {
        return Err(Error::shape("propagate", format!("features {:?}, channels {}", first.shape(), cfg.channels)));
    }
    let n = features.len();
    flows.check(n, h, w)?;

    let mut input = features.to_vec();
    for s in 0..cfg.stages {
        let dir = cfg.direction(s);
        let p = format!("prop{s}");
        let fw = g.param(store, &join(&p, "fuse.w"))?;
        let fb = g.param(store, &join(&p, "fuse.b"))?;
        let steps: Vec<usize> = match dir {
            Direction::Forward => (0..n).collect(),
            Direction::Backward => (0..n).rev().collect(),
        };
        let zeros = g.constant(Tensor::zeros(&[c, h, w]));
        let mut out: Vec<Option<Var>> = vec![None; n];
        // propagated states one and two steps back
        let mut prev: Option<Var> = None;
        let mut prev2: Option<Var> = None;
        for (k, &t) in steps.iter().enumerate() {
            let flow1 = if k >= 1 { flows.step(dir, t)? } else { None };
            let flow2 = match (k >= 2, &flow1) {
                (true, Some(f1)) => {
                    let back = steps[k - 1];
                    flows.step(dir, back)?.map(|f2| compose_flows(f1, &f2)).transpose()?
                }
                _ => None,
            };
            let h1 = match &prev {
                Some(v) => warp_opt(g, v, &flow1)?,
                None => zeros.clone(),
            };
            let h2 = match &prev2 {
                Some(v) => warp_opt(g, v, &flow2)?,
                None => zeros.clone(),
            };
            let cat = g.concat(&[input[t].clone(), h1, h2])?;
            let fused = g.conv2d(&cat, &fw, &fb, 1, 1)?;

            let window = temporal_window(t, n, dir);
            let mut frames: Vec<Var> = vec![fused];
            frames.extend(window[1..].iter().map(|&i| input[i].clone()));
            for b in 0..cfg.blocks_per_stage {
                frames = block_forward(g, store, &join(&p, &format!("block{b}")), &frames, 0, order, &cfg.block)?;
            }
            let ht = g.add(&input[t], &frames[0])?;
            prev2 = prev.take();
            prev = Some(ht.clone());
            out[t] = Some(ht);
        }
        input = out.into_iter().map(|v| v.expect("every frame visited")).collect();
    }
    Ok(input)
}
