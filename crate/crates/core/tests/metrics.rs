use mambavsr::metrics::{clip_metrics, psnr, ssim, to_y, ChannelMode};
use mambavsr::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Direct 2-D windowed SSIM with two-pass local moments.
fn ssim_oracle(a: &Tensor, b: &Tensor) -> f64 {
    let (c, h, w) = (a.shape()[0], a.shape()[1], a.shape()[2]);
    let (sigma, taps) = (1.5f64, 11usize);
    let g1: Vec<f64> = (0..taps).map(|i| (-((i as f64 - 5.0).powi(2)) / (2.0 * sigma * sigma)).exp()).collect();
    let mut win = vec![0.0; taps * taps];
    for i in 0..taps {
        for j in 0..taps {
            win[i * taps + j] = g1[i] * g1[j];
        }
    }
    let total: f64 = win.iter().sum();
    win.iter_mut().for_each(|v| *v /= total);
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let mut acc = 0.0;
    for ch in 0..c {
        let at = |t: &Tensor, y: usize, x: usize| t.data()[(ch * h + y) * w + x] as f64;
        let mut sum = 0.0;
        let mut count = 0;
        for y0 in 0..=h - taps {
            for x0 in 0..=w - taps {
                let mut ma = 0.0;
                let mut mb = 0.0;
                for i in 0..taps {
                    for j in 0..taps {
                        ma += win[i * taps + j] * at(a, y0 + i, x0 + j);
                        mb += win[i * taps + j] * at(b, y0 + i, x0 + j);
                    }
                }
                let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
                for i in 0..taps {
                    for j in 0..taps {
                        let (da, db) = (at(a, y0 + i, x0 + j) - ma, at(b, y0 + i, x0 + j) - mb);
                        va += win[i * taps + j] * da * da;
                        vb += win[i * taps + j] * db * db;
                        cov += win[i * taps + j] * da * db;
                    }
                }
                sum += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                count += 1;
            }
        }
        acc += sum / count as f64;
    }
    acc / c as f64
}

fn psnr_oracle(a: &Tensor, b: &Tensor) -> f64 {
    let mse: f64 = a.data().iter().zip(b.data()).map(|(&x, &y)| (x as f64 - y as f64).powi(2)).sum::<f64>()
        / a.data().len() as f64;
    10.0 * (1.0 / mse).log10()
}

fn random_pair(rng: &mut ChaCha8Rng, c: usize, h: usize, w: usize) -> (Tensor, Tensor) {
    let a = Tensor::from_fn(&[c, h, w], |_| rng.gen_range(0.0..1.0));
    let noise = rng.gen_range(0.01..0.3);
    let b = Tensor::from_fn(&[c, h, w], |i| (a.data()[i] + rng.gen_range(-noise..noise)).clamp(0.0, 1.0));
    (a, b)
}

#[test]
fn metrics_match_f64_oracles() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..20 {
        let (h, w) = (rng.gen_range(11..24), rng.gen_range(11..24));
        let (a, b) = random_pair(&mut rng, 3, h, w);
        assert!((psnr(&a, &b).unwrap() - psnr_oracle(&a, &b)).abs() <= 1e-6);
        assert!((ssim(&a, &b).unwrap() - ssim_oracle(&a, &b)).abs() <= 1e-6);
        assert!((ssim(&a, &b).unwrap() - ssim(&b, &a).unwrap()).abs() <= 1e-9);
    }
}

#[test]
fn y_channel_reports_use_luma() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let (a, b) = random_pair(&mut rng, 3, 16, 16);
    let stack = |t: &Tensor| Tensor::stack(&[t.clone(), t.clone()]).unwrap();
    let r = clip_metrics(&stack(&a), &stack(&b), ChannelMode::Y).unwrap();
    let (ya, yb) = (to_y(&a).unwrap(), to_y(&b).unwrap());
    assert_eq!(r.psnr, vec![psnr(&ya, &yb).unwrap(); 2]);
    assert!((r.ssim[1] - ssim_oracle(&ya, &yb)).abs() <= 1e-6);
    assert!(clip_metrics(&stack(&a), &Tensor::zeros(&[2, 3, 16, 8]), ChannelMode::Rgb).is_err());
}
