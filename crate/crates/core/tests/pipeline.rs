use mambavsr::glssb::{BlockKind, GammaMode};
use mambavsr::pipeline::{
    bicubic_baseline, forward, param_specs, train_step, AdamState, ModelConfig, ModelWeights, ScanMode,
};
use mambavsr::propagation::FlowSet;
use mambavsr::{Error, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tiny() -> ModelConfig {
    ModelConfig {
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
    }
}

fn random_clip(seed: u64, t: usize, h: usize, w: usize) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(&[t, 3, h, w], |_| rng.gen::<f32>())
}

/// Nonzero reconstruction head so the residual path is live.
fn perturbed(cfg: &ModelConfig) -> ModelWeights {
    let mut w = ModelWeights::init(cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for name in ["recon.out.w", "recon.out.b"] {
        for v in w.tensors.get_mut(name).unwrap().data_mut() {
            *v = rng.gen_range(-0.05..0.05);
        }
    }
    w
}

#[test]
fn init_output_is_bicubic() {
    let cfg = tiny();
    let w = ModelWeights::init(&cfg).unwrap();
    let lr = random_clip(1, 2, 8, 12);
    let sr = forward(&lr, &FlowSet::zero(), &cfg, &w).unwrap();
    assert_eq!(sr.shape(), &[2, 3, 32, 48]);
    assert_eq!(sr, bicubic_baseline(&lr, 4).unwrap());
}

#[test]
fn weights_match_declared_specs() {
    let cfg = tiny();
    let w = ModelWeights::init(&cfg).unwrap();
    w.check(&cfg).unwrap();
    assert_eq!(w.tensors.len(), param_specs(&cfg).len());
    let other = ModelConfig { channels: 4, ..tiny() };
    assert!(matches!(w.check(&other), Err(Error::ModelMismatch(_))));
}

#[test]
fn scan_modes_are_live() {
    let lr = random_clip(2, 2, 16, 16);
    let mut outs = Vec::new();
    for mode in [ScanMode::Raster, ScanMode::Fiedler, ScanMode::ContentAware] {
        let cfg = ModelConfig { scan_mode: mode, ..tiny() };
        let w = perturbed(&cfg);
        outs.push(forward(&lr, &FlowSet::zero(), &cfg, &w).unwrap());
    }
    assert_ne!(outs[0], outs[2]);
    assert_ne!(outs[0], outs[1]);
    assert_ne!(outs[1], outs[2]);
}

#[test]
fn all_block_kinds_run() {
    let lr = random_clip(3, 2, 16, 16);
    let kinds = [
        (BlockKind::Wfsab, GammaMode::Learnable),
        (BlockKind::WfsabWfsab, GammaMode::Learnable),
        (BlockKind::WfsabGlssm, GammaMode::FrozenOne),
        (BlockKind::WfsabGlssm, GammaMode::Learnable),
        (BlockKind::GlssmGlssm, GammaMode::Learnable),
    ];
    for (block, gamma_mode) in kinds {
        let cfg = ModelConfig { block, gamma_mode, ..tiny() };
        let w = perturbed(&cfg);
        let sr = forward(&lr, &FlowSet::zero(), &cfg, &w).unwrap();
        assert_eq!(sr.shape(), &[2, 3, 64, 64], "{}", block.name());
    }
}

#[test]
fn forward_is_deterministic() {
    let cfg = tiny();
    let lr = random_clip(4, 3, 8, 8);
    let a = forward(&lr, &FlowSet::zero(), &cfg, &perturbed(&cfg)).unwrap();
    let b = forward(&lr, &FlowSet::zero(), &cfg, &perturbed(&cfg)).unwrap();
    assert_eq!(a.data(), b.data());
}

#[test]
fn zero_rate_leaves_weights_unchanged() {
    let cfg = tiny();
    let lr = random_clip(5, 2, 4, 4);
    let hr = random_clip(6, 2, 16, 16);
    let mut w = perturbed(&cfg);
    let before = w.clone();
    let mut adam = AdamState::default();
    let loss = train_step(&[(lr, hr)], &cfg, &mut w, &mut adam, 0.0).unwrap();
    assert!(loss.is_finite() && loss > 0.0);
    assert_eq!(w, before);
}

#[test]
fn weights_round_trip_after_training() {
    let cfg = tiny();
    let lr = random_clip(7, 2, 4, 4);
    let hr = random_clip(8, 2, 16, 16);
    let mut w = ModelWeights::init(&cfg).unwrap();
    let mut adam = AdamState::default();
    for _ in 0..2 {
        train_step(&[(lr.clone(), hr.clone())], &cfg, &mut w, &mut adam, 1e-3).unwrap();
    }
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("w.mvsrw");
    w.save(&path).unwrap();
    let back = ModelWeights::load(&path).unwrap();
    assert_eq!(back, w);
}

#[test]
fn shape_mismatch_is_reported() {
    let cfg = tiny();
    let w = ModelWeights::init(&cfg).unwrap();
    let bad = Tensor::zeros(&[2, 1, 8, 8]);
    assert!(forward(&bad, &FlowSet::zero(), &cfg, &w).is_err());
    let flows = FlowSet::external(Tensor::zeros(&[2, 2, 8, 8]), Tensor::zeros(&[2, 2, 8, 8])).unwrap();
    assert!(forward(&random_clip(1, 2, 8, 8), &flows, &cfg, &w).is_err());
}
