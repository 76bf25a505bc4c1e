//! PSNR and SSIM over images in `[0, 1]`, evaluated in f64.
//!
//! SSIM uses an 11-tap Gaussian window (sigma 1.5), `k1 = 0.01`, `k2 = 0.03`,
//! dynamic range 1, averaged over the valid region and then over channels.
//! Images smaller than the window use the largest odd window that fits.

use std::fmt::Write as _;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const SSIM_TAPS: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;

/// ITU-R BT.601 luma weights.
pub const BT601: [f32; 3] = [0.299, 0.587, 0.114];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ChannelMode {
    Rgb,
    Y,
}

impl FromStr for ChannelMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rgb" => Ok(ChannelMode::Rgb),
            "y" => Ok(ChannelMode::Y),
            _ => Err(Error::arg("channel", format!("expected rgb or y, got {s:?}"))),
        }
    }
}

fn same_shape(a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape("metrics", format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

pub fn mse(a: &Tensor, b: &Tensor) -> Result<f64> {
    same_shape(a, b)?;
    let s: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| (x as f64 - y as f64).powi(2))
        .sum();
    Ok(s / a.numel().max(1) as f64)
}

/// `10 log10(1 / MSE)`; `+inf` for identical inputs.
pub fn psnr(a: &Tensor, b: &Tensor) -> Result<f64> {
    let m = mse(a, b)?;
    Ok(if m == 0.0 { f64::INFINITY } else { -10.0 * m.log10() })
}

/// Luma `[1, H, W]` of an RGB image `[3, H, W]`.
pub fn to_y(x: &Tensor) -> Result<Tensor> {
    let (c, h, w) = x.dims3()?;
    if c != 3 {
        return Err(Error::shape("to_y", format!("expected 3 channels, got {c}")));
    }
    let n = h * w;
    let d = x.data();
    Ok(Tensor::from_fn(&[1, h, w], |i| {
        BT601[0] * d[i] + BT601[1] * d[n + i] + BT601[2] * d[2 * n + i]
    }))
}

fn gaussian(taps: usize) -> Vec<f64> {
    let c = (taps / 2) as f64;
    let g: Vec<f64> = (0..taps)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// Valid-region separable filtering of one plane.
fn filter_valid(x: &[f64], h: usize, w: usize, k: &[f64]) -> (Vec<f64>, usize, usize) {
    let t = k.len();
    let (ho, wo) = (h - t + 1, w - t + 1);
    let mut rows = vec![0.0; h * wo];
    for y in 0..h {
        for xo in 0..wo {
            rows[y * wo + xo] = (0..t).map(|i| k[i] * x[y * w + xo + i]).sum();
        }
    }
    let mut out = vec![0.0; ho * wo];
    for yo in 0..ho {
        for xo in 0..wo {
            out[yo * wo + xo] = (0..t).map(|i| k[i] * rows[(yo + i) * wo + xo]).sum();
        }
    }
    (out, ho, wo)
}

fn ssim_plane(a: &[f64], b: &[f64], h: usize, w: usize) -> f64 {
    let mut taps = SSIM_TAPS.min(h).min(w);
    if taps % 2 == 0 {
        taps -= 1;
    }
    let k = gaussian(taps);
    let prod = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(x, y)| x * y).collect::<Vec<_>>();
    let (mu_a, _, _) = filter_valid(a, h, w, &k);
    let (mu_b, _, _) = filter_valid(b, h, w, &k);
    let (saa, _, _) = filter_valid(&prod(a, a), h, w, &k);
    let (sbb, _, _) = filter_valid(&prod(b, b), h, w, &k);
    let (sab, _, _) = filter_valid(&prod(a, b), h, w, &k);
    let (c1, c2) = (K1 * K1, K2 * K2);
    let n = mu_a.len();
    let total: f64 = (0..n)
        .map(|i| {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = saa[i] - ma * ma;
            let vb = sbb[i] - mb * mb;
            let cov = sab[i] - ma * mb;
            ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2))
        })
        .sum();
    total / n as f64
}

/// Mean SSIM of two `[C, H, W]` images.
pub fn ssim(a: &Tensor, b: &Tensor) -> Result<f64> {
    same_shape(a, b)?;
    let (c, h, w) = a.dims3()?;
    if h == 0 || w == 0 {
        return Err(Error::arg("ssim", "empty image"));
    }
    let n = h * w;
    let to64 = |t: &Tensor, ch: usize| t.data()[ch * n..(ch + 1) * n].iter().map(|&v| v as f64).collect::<Vec<_>>();
    let s: f64 = (0..c).map(|ch| ssim_plane(&to64(a, ch), &to64(b, ch), h, w)).sum();
    Ok(s / c as f64)
}

/// Per-frame and mean metrics of two clips.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub channel: ChannelMode,
    pub psnr: Vec<f64>,
    pub ssim: Vec<f64>,
}

impl MetricReport {
    pub fn mean_psnr(&self) -> f64 {
        self.psnr.iter().sum::<f64>() / self.psnr.len().max(1) as f64
    }

    pub fn mean_ssim(&self) -> f64 {
        self.ssim.iter().sum::<f64>() / self.ssim.len().max(1) as f64
    }

    /// `frame,psnr_db,ssim` rows plus a `mean` row; PSNR of identical frames
    /// prints as `inf`.
    pub fn to_csv(&self) -> String {
        let fmt = |v: f64| if v.is_infinite() { "inf".to_string() } else { format!("{v:.6}") };
        let mut s = String::from("frame,psnr_db,ssim\n");
        for (i, (p, q)) in self.psnr.iter().zip(&self.ssim).enumerate() {
            let _ = writeln!(s, "{i},{},{q:.6}", fmt(*p));
        }
        let _ = writeln!(s, "mean,{},{:.6}", fmt(self.mean_psnr()), self.mean_ssim());
        s
    }
}

/// Metrics of `[T, 3, H, W]` clips, frame by frame.
pub fn clip_metrics(a: &Tensor, b: &Tensor, channel: ChannelMode) -> Result<MetricReport> {
    same_shape(a, b)?;
    a.dims4()?;
    let mut report = MetricReport {
        channel,
        psnr: Vec::new(),
        ssim: Vec::new(),
    };
    for (fa, fb) in a.unstack()?.iter().zip(b.unstack()?.iter()) {
        let (fa, fb) = match channel {
            ChannelMode::Rgb => (fa.clone(), fb.clone()),
            ChannelMode::Y => (to_y(fa)?, to_y(fb)?),
        };
        report.psnr.push(psnr(&fa, &fb)?);
        report.ssim.push(ssim(&fa, &fb)?);
    }
    Ok(report)
}
