//! Browser bindings: scan-order maps of generated scenes, the chunked scan
//! against its sequential reference, and bicubic upscaling with PSNR.

use mambavsr::harness::{bench_instance, degrade, frame_scan_order};
use mambavsr::metrics::psnr;
use mambavsr::pipeline::{bicubic_baseline, ModelConfig, ScanMode};
use mambavsr::ssm_kernel::{selective_scan_chunked, selective_scan_seq, SsmParams};
use mambavsr::Tensor;
use wasm_bindgen::prelude::*;

fn js(e: mambavsr::Error) -> JsError {
    JsError::new(&e.to_string())
}

fn rgba(frame: &Tensor) -> Vec<u8> {
    let (h, w) = (frame.shape()[1], frame.shape()[2]);
    let n = h * w;
    let d = frame.data();
    let mut out = Vec::with_capacity(n * 4);
    for i in 0..n {
        for c in 0..3 {
            out.push((d[c * n + i].clamp(0.0, 1.0) * 255.0).round() as u8);
        }
        out.push(255);
    }
    out
}

/// A generated `[3, H, W]` test image.
#[wasm_bindgen]
pub struct Scene {
    frame: Tensor,
}

#[wasm_bindgen]
impl Scene {
    /// `kind` is one of `disc`, `halves` or `waves`; extents must be
    /// multiples of 4.
    #[wasm_bindgen(constructor)]
    pub fn new(kind: &str, width: usize, height: usize) -> Result<Scene, JsError> {
        if width == 0 || height == 0 || width % 4 != 0 || height % 4 != 0 {
            return Err(JsError::new("extents must be positive multiples of 4"));
        }
        let (w, h) = (width as f32, height as f32);
        let frame = match kind {
            "disc" => Tensor::from_fn(&[3, height, width], |i| {
                let (x, y, c) = ((i % width) as f32, ((i / width) % height) as f32, i / (width * height));
                let r = ((x - 0.6 * w).powi(2) + (y - 0.45 * h).powi(2)).sqrt();
                let inside = r < 0.28 * w.min(h);
                [[0.95, 0.55, 0.2], [0.15, 0.25, 0.45]][usize::from(!inside)][c]
            }),
            "halves" => Tensor::from_fn(&[3, height, width], |i| {
                if (i % width) < width / 2 { 0.85 } else { 0.15 }
            }),
            "waves" => Tensor::from_fn(&[3, height, width], |i| {
                let (x, y, c) = ((i % width) as f32, ((i / width) % height) as f32, i / (width * height));
                0.5 + 0.35 * ((0.25 * x + 0.9 * c as f32).sin() * (0.18 * y).cos())
            }),
            _ => return Err(JsError::new("unknown scene kind")),
        };
        Ok(Scene { frame })
    }

    pub fn width(&self) -> usize {
        self.frame.shape()[2]
    }

    pub fn height(&self) -> usize {
        self.frame.shape()[1]
    }

    /// The scene as RGBA bytes.
    pub fn image(&self) -> Vec<u8> {
        rgba(&self.frame)
    }

    /// Scan rank of every pixel as RGBA bytes, dark to bright in visiting
    /// order. `mode` is `raster`, `fiedler` or `content_aware`.
    pub fn rank_map(&self, mode: &str) -> Result<Vec<u8>, JsError> {
        let scan_mode: ScanMode = mode.parse().map_err(js)?;
        let cfg = ModelConfig { scan_mode, ..ModelConfig::default() };
        let order = frame_scan_order(&self.frame, &cfg).map_err(js)?;
        let denom = (order.len().max(2) - 1) as f32;
        let mut out = Vec::with_capacity(order.len() * 4);
        for &r in &order.inv {
            let t = r as f32 / denom;
            // blue to yellow ramp
            out.extend_from_slice(&[(255.0 * t) as u8, (200.0 * t + 30.0) as u8, (255.0 * (1.0 - t)) as u8, 255]);
        }
        Ok(out)
    }

    /// Downscales by `factor`, upscales back with bicubic interpolation and
    /// reports the reconstruction.
    pub fn bicubic_round_trip(&self, factor: usize) -> Result<Upscale, JsError> {
        let hr = Tensor::stack(&[self.frame.clone()]).map_err(js)?;
        let lr = degrade(&hr, factor).map_err(js)?;
        let sr = bicubic_baseline(&lr, factor).map_err(js)?;
        let sr_frame = sr.unstack().map_err(js)?.remove(0);
        let psnr_db = psnr(&sr_frame.map(|v| v.clamp(0.0, 1.0)), &self.frame).map_err(js)?;
        let lr_frame = lr.unstack().map_err(js)?.remove(0);
        Ok(Upscale {
            low: rgba(&lr_frame),
            low_width: lr_frame.shape()[2],
            high: rgba(&sr_frame),
            psnr_db,
        })
    }
}

/// Result of [`Scene::bicubic_round_trip`].
#[wasm_bindgen]
pub struct Upscale {
    low: Vec<u8>,
    low_width: usize,
    high: Vec<u8>,
    psnr_db: f64,
}

#[wasm_bindgen]
impl Upscale {
    pub fn low(&self) -> Vec<u8> {
        self.low.clone()
    }

    pub fn low_width(&self) -> usize {
        self.low_width
    }

    pub fn high(&self) -> Vec<u8> {
        self.high.clone()
    }

    pub fn psnr_db(&self) -> f64 {
        self.psnr_db
    }
}

/// A seeded scan instance; timing is left to the caller.
#[wasm_bindgen]
pub struct ScanBench {
    x: Tensor,
    params: SsmParams,
    reference: Tensor,
}

#[wasm_bindgen]
impl ScanBench {
    #[wasm_bindgen(constructor)]
    pub fn new(len: usize, channels: usize, state_dim: usize, seed: u64) -> Result<ScanBench, JsError> {
        if len == 0 || channels == 0 || state_dim == 0 {
            return Err(JsError::new("L, C and N must be positive"));
        }
        let (x, params) = bench_instance(len, channels, state_dim, seed);
        let reference = selective_scan_seq(&x, &params).map_err(js)?;
        Ok(ScanBench { x, params, reference })
    }

    pub fn sequential(&self) -> Result<(), JsError> {
        selective_scan_seq(&self.x, &self.params).map_err(js)?;
        Ok(())
    }

    /// Runs the chunked scan and returns its maximum deviation from the
    /// sequential reference.
    pub fn chunked(&self, chunk: usize) -> Result<f32, JsError> {
        if chunk == 0 {
            return Err(JsError::new("chunk must be positive"));
        }
        let y = selective_scan_chunked(&self.x, &self.params, chunk).map_err(js)?;
        Ok(y.max_abs_diff(&self.reference))
    }
}
