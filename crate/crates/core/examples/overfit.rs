//! Overfits a tiny model to one synthetic 2-frame clip and reports loss and
//! PSNR against the bicubic baseline.
//!
//! `cargo run --release -p mambavsr --example overfit -- [steps] [rate]`

use std::time::Instant;

use mambavsr::metrics::{clip_metrics, ChannelMode};
use mambavsr::numerics::bicubic_resize;
use mambavsr::pipeline::{bicubic_baseline, forward, train_step, AdamState, ModelConfig, ModelWeights};
use mambavsr::propagation::FlowSet;
use mambavsr::Tensor;

fn main() -> mambavsr::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let steps: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(300);
    let rate: f32 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(2e-3);
    let cfg = ModelConfig {
        channels: 8,
        heads: 2,
        window: 4,
        state_dim: 4,
        stages: 2,
        blocks_per_stage: 1,
        patch: 4,
        radius: 1,
        top_k: 4,
        ..ModelConfig::default()
    };
    let hr = Tensor::from_fn(&[2, 3, 64, 64], |i| {
        let (x, y, c, t) = (i % 64, (i / 64) % 64, (i / 4096) % 3, i / 12288);
        let (x, y) = (x as f32 + t as f32, y as f32);
        0.5 + 0.2 * ((0.45 * x + 0.3 * c as f32).sin() * (0.37 * y).cos()) + 0.15 * ((0.9 * (x - y)) / 3.0).sin()
    });
    let lr = Tensor::stack(&hr.unstack()?.iter().map(|f| bicubic_resize(f, 0.25)).collect::<mambavsr::Result<Vec<_>>>()?)?;
    let base = clip_metrics(&bicubic_baseline(&lr, 4)?, &hr, ChannelMode::Rgb)?.mean_psnr();
    let mut w = ModelWeights::init(&cfg)?;
    let mut adam = AdamState::default();
    let start = Instant::now();
    let batch = [(lr.clone(), hr.clone())];
    let first = train_step(&batch, &cfg, &mut w, &mut adam, rate)?;
    let mut last = first;
    for s in 1..steps {
        last = train_step(&batch, &cfg, &mut w, &mut adam, rate)?;
        if s % 50 == 0 {
            let psnr = clip_metrics(&forward(&lr, &FlowSet::zero(), &cfg, &w)?, &hr, ChannelMode::Rgb)?.mean_psnr();
            println!("step {s}: loss {last:.6} ({:.3} of initial) psnr {psnr:.3} (bicubic {base:.3}) {:.1}s", last / first, start.elapsed().as_secs_f32());
        }
    }
    println!("final loss ratio {:.3}", last / first);
    Ok(())
}
