//! File-level operations behind the command-line tool: clip loading and
//! saving, end-to-end super-resolution with metrics, degradation, scan-order
//! export, and scan benchmarks.
//!
//! A clip directory holds one file per frame, either 8-bit RGB PNG or MVT1
//! `[3, H, W]` tensors; lexicographic name order is temporal order.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::metrics::ChannelMode;
#[cfg(feature = "io")]
use crate::metrics::{clip_metrics, MetricReport};
use crate::numerics::bicubic_resize;
use crate::pipeline::{ModelConfig, ScanMode};
#[cfg(feature = "io")]
use crate::pipeline::{forward, ModelWeights};
#[cfg(feature = "io")]
use crate::propagation::FlowSet;
use crate::scan_compass::{block_mean, common_factor, compass_from_tokens, raster_order, ScanOrder};
use crate::ssm_kernel::{selective_scan_chunked, selective_scan_seq, SsmParams};
use crate::tensor::Tensor;

/// Maximum chunked-vs-sequential deviation a bench row may show.
pub const BENCH_TOLERANCE: f32 = 1e-5;

/// A clip read from disk: frames `[T, 3, H, W]` and their file stems.
#[derive(Clone, Debug, PartialEq)]
pub struct Clip {
    pub frames: Tensor,
    pub names: Vec<String>,
}

fn frame_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    files.retain(|p| {
        p.is_file()
            && matches!(
                p.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref(),
                Some("png" | "mvt")
            )
    });
    files.sort();
    if files.is_empty() {
        return Err(Error::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("no .png or .mvt frames in {}", dir.display()),
        )));
    }
    Ok(files)
}

/// Reads one `[3, H, W]` frame from a PNG or MVT1 file.
pub fn load_frame(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("mvt") => {
            let t = Tensor::load_mvt(path)?;
            if t.rank() != 3 || t.shape()[0] != 3 {
                return Err(Error::shape("load_frame", format!("{}: {:?}", path.display(), t.shape())));
            }
            Ok(t)
        }
        #[cfg(feature = "io")]
        Some("png") => load_png(path),
        _ => Err(Error::arg("load_frame", format!("unsupported frame {}", path.display()))),
    }
}

/// Reads every frame of a clip directory.
pub fn load_clip(dir: impl AsRef<Path>) -> Result<Clip> {
    let files = frame_files(dir.as_ref())?;
    let mut frames = Vec::with_capacity(files.len());
    let mut names = Vec::with_capacity(files.len());
    for f in &files {
        let t = load_frame(f)?;
        if let Some(first) = frames.first().map(|f: &Tensor| f.shape().to_vec()) {
            if first != t.shape() {
                return Err(Error::shape(
                    "load_clip",
                    format!("{} is {:?}, first frame {first:?}", f.display(), t.shape()),
                ));
            }
        }
        frames.push(t);
        names.push(f.file_stem().and_then(|s| s.to_str()).unwrap_or("frame").to_string());
    }
    Ok(Clip {
        frames: Tensor::stack(&frames)?,
        names,
    })
}

/// Rounds `[0, 1]` values to 8 bits, clamping out-of-range values.
pub fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Interleaved RGB bytes of a `[3, H, W]` frame.
pub fn frame_to_rgb8(frame: &Tensor) -> Result<Vec<u8>> {
    let (c, h, w) = frame.dims3()?;
    if c != 3 {
        return Err(Error::shape("frame_to_rgb8", format!("expected 3 channels, got {c}")));
    }
    let n = h * w;
    let d = frame.data();
    Ok((0..n * 3).map(|i| quantize(d[(i % 3) * n + i / 3])).collect())
}

/// `[3, H, W]` frame from interleaved RGB bytes.
pub fn rgb8_to_frame(bytes: &[u8], h: usize, w: usize) -> Result<Tensor> {
    if bytes.len() != h * w * 3 {
        return Err(Error::shape("rgb8_to_frame", format!("{} bytes for {h}x{w}", bytes.len())));
    }
    let n = h * w;
    Ok(Tensor::from_fn(&[3, h, w], |i| bytes[(i % n) * 3 + i / n] as f32 / 255.0))
}

#[cfg(feature = "io")]
fn load_png(path: &Path) -> Result<Tensor> {
    let img = image::open(path)?.to_rgb8();
    let (w, h) = img.dimensions();
    rgb8_to_frame(img.as_raw(), h as usize, w as usize)
}

#[cfg(feature = "io")]
pub fn save_png(path: impl AsRef<Path>, frame: &Tensor) -> Result<()> {
    let (_, h, w) = frame.dims3()?;
    let img = image::RgbImage::from_raw(w as u32, h as u32, frame_to_rgb8(frame)?)
        .ok_or_else(|| Error::shape("save_png", "buffer size"))?;
    img.save_with_format(path, image::ImageFormat::Png)?;
    Ok(())
}

/// Writes `[T, 3, H, W]` as `<name>.png`, creating the directory.
#[cfg(feature = "io")]
pub fn save_clip(dir: impl AsRef<Path>, frames: &Tensor, names: &[String]) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let frames = frames.unstack()?;
    if frames.len() != names.len() {
        return Err(Error::shape("save_clip", format!("{} frames, {} names", frames.len(), names.len())));
    }
    for (f, name) in frames.iter().zip(names) {
        save_png(dir.join(format!("{name}.png")), f)?;
    }
    Ok(())
}

/// Frames as stored in 8-bit files.
pub fn quantized(frames: &Tensor) -> Tensor {
    frames.map(|v| quantize(v) as f32 / 255.0)
}

/// Inputs of one end-to-end super-resolution run.
#[derive(Clone, Debug, Default)]
pub struct SrRequest {
    pub input: PathBuf,
    pub output: PathBuf,
    /// Initialized from `config.seed` when absent.
    pub weights: Option<PathBuf>,
    pub config: Option<PathBuf>,
    pub scan_mode: Option<ScanMode>,
    pub flows: Option<PathBuf>,
    pub gt: Option<PathBuf>,
    pub channel: Option<ChannelMode>,
    /// Overrides `config.seed`.
    pub seed: Option<u64>,
}

/// Resolves the model configuration of a request.
pub fn resolve_config(config: Option<&Path>, scan_mode: Option<ScanMode>, seed: Option<u64>) -> Result<ModelConfig> {
    let mut cfg = match config {
        Some(p) => ModelConfig::load(p)?,
        None => ModelConfig::default(),
    };
    if let Some(m) = scan_mode {
        cfg.scan_mode = m;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Super-resolves a clip directory into PNG frames. With ground truth,
/// writes `metrics.csv` into the output directory, computed on the 8-bit
/// frames as written.
#[cfg(feature = "io")]
pub fn run_sr(req: &SrRequest) -> Result<Option<MetricReport>> {
    let cfg = resolve_config(req.config.as_deref(), req.scan_mode, req.seed)?;
    let weights = match &req.weights {
        Some(p) => ModelWeights::load(p)?,
        None => ModelWeights::init(&cfg)?,
    };
    weights.check(&cfg)?;
    let clip = load_clip(&req.input)?;
    let t = clip.names.len();
    let flows = match &req.flows {
        Some(dir) => FlowSet::load_dir(dir, t)?,
        None => FlowSet::zero(),
    };
    let sr = forward(&clip.frames, &flows, &cfg, &weights)?;
    sr.check_finite("sr output")?;
    save_clip(&req.output, &sr, &clip.names)?;
    let Some(gt_dir) = &req.gt else { return Ok(None) };
    let gt = load_clip(gt_dir)?;
    let report = clip_metrics(&quantized(&sr), &quantized(&gt.frames), req.channel.unwrap_or(ChannelMode::Rgb))?;
    fs::write(req.output.join("metrics.csv"), report.to_csv())?;
    Ok(Some(report))
}

/// Bicubic downscaling of every frame by `1 / factor`.
pub fn degrade(frames: &Tensor, factor: usize) -> Result<Tensor> {
    let (_, _, h, w) = frames.dims4()?;
    if factor == 0 || h % factor != 0 || w % factor != 0 {
        return Err(Error::arg("degrade", format!("{h}x{w} not divisible by {factor}")));
    }
    let out = frames
        .unstack()?
        .iter()
        .map(|f| bicubic_resize(f, 1.0 / factor as f32))
        .collect::<Result<Vec<_>>>()?;
    Tensor::stack(&out)
}

/// Compass order of one `[C, H, W]` frame, from block means of its pixels.
/// Raster mode returns raster order.
pub fn frame_scan_order(frame: &Tensor, cfg: &ModelConfig) -> Result<ScanOrder> {
    let (_, h, w) = frame.dims3()?;
    match cfg.scan_mode {
        ScanMode::Raster => raster_order(h, w),
        ScanMode::Fiedler | ScanMode::ContentAware => {
            let factor = common_factor(h, w, cfg.compass_factor);
            compass_from_tokens(&block_mean(frame, factor)?, &cfg.compass(), (h, w))
        }
    }
}

/// Writes `order.csv` and the 8-bit `rank.png` for an order.
#[cfg(feature = "io")]
pub fn write_scan_viz(dir: impl AsRef<Path>, order: &ScanOrder) -> Result<()> {
    use crate::scan_compass::{order_csv, rank_map};
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    fs::write(dir.join("order.csv"), order_csv(order))?;
    let (h, w) = order.target_grid;
    let img = image::GrayImage::from_raw(w as u32, h as u32, rank_map(order))
        .ok_or_else(|| Error::shape("write_scan_viz", "rank map size"))?;
    img.save_with_format(dir.join("rank.png"), image::ImageFormat::Png)?;
    Ok(())
}

/// One benchmark measurement of the chunked scan.
#[derive(Clone, Debug, PartialEq)]
pub struct BenchRow {
    pub len: usize,
    pub channels: usize,
    pub state_dim: usize,
    pub chunk: usize,
    pub tokens_per_s: f64,
    pub max_dev: f32,
}

impl BenchRow {
    pub fn passed(&self) -> bool {
        self.max_dev <= BENCH_TOLERANCE
    }
}

/// Seeded random input `[len, channels]` and scan parameters.
pub fn bench_instance(len: usize, channels: usize, state_dim: usize, seed: u64) -> (Tensor, SsmParams) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = Tensor::from_fn(&[len, channels], |_| rng.gen_range(-1.0..1.0));
    let p = SsmParams::init(channels, state_dim, 0.1, |shape| {
        Tensor::from_fn(shape, |_| rng.gen_range(-0.5..0.5))
    });
    (x, p)
}

/// Times the chunked scan on a seeded random instance and compares it with
/// the sequential scan.
pub fn bench(len: usize, channels: usize, state_dim: usize, chunk: usize, reps: usize, seed: u64) -> Result<BenchRow> {
    if len == 0 || channels == 0 || state_dim == 0 || chunk == 0 || reps == 0 {
        return Err(Error::arg("bench", "L, C, N, chunk and reps must be positive"));
    }
    let (x, p) = bench_instance(len, channels, state_dim, seed);
    let reference = selective_scan_seq(&x, &p)?;
    let start = Instant::now();
    let mut out = selective_scan_chunked(&x, &p, chunk)?;
    for _ in 1..reps {
        out = selective_scan_chunked(&x, &p, chunk)?;
    }
    let secs = start.elapsed().as_secs_f64().max(1e-9);
    Ok(BenchRow {
        len,
        channels,
        state_dim,
        chunk,
        tokens_per_s: (len * reps) as f64 / secs,
        max_dev: out.max_abs_diff(&reference),
    })
}

/// `L,C,N,chunk,tokens_per_s,max_dev,status` rows.
pub fn bench_csv(rows: &[BenchRow]) -> String {
    let mut s = String::from("L,C,N,chunk,tokens_per_s,max_dev,status\n");
    for r in rows {
        let status = if r.passed() { "ok" } else { "FAILED" };
        let _ = writeln!(
            s,
            "{},{},{},{},{:.1},{:e},{status}",
            r.len, r.channels, r.state_dim, r.chunk, r.tokens_per_s, r.max_dev
        );
    }
    s
}
