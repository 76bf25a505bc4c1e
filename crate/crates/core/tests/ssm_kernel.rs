use mambavsr::ssm_kernel::{
    discretize, scan_chunked, scan_sequential, selective_scan_chunked, selective_scan_seq, ScanInputs, SsmParams,
};
use mambavsr::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f32, hi: f32) -> Tensor {
    Tensor::from_fn(shape, |_| rng.gen_range(lo..hi))
}

fn random_inputs(rng: &mut ChaCha8Rng, l: usize, c: usize, n: usize) -> ScanInputs {
    ScanInputs {
        delta: rand_tensor(rng, &[l, c], 0.01, 0.5),
        a: rand_tensor(rng, &[c, n], -2.0, -0.1),
        b: rand_tensor(rng, &[l, n], -1.0, 1.0),
        c: rand_tensor(rng, &[l, n], -1.0, 1.0),
        d: rand_tensor(rng, &[c], -1.0, 1.0),
    }
}

#[test]
fn discretize_matches_f64_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let s = random_inputs(&mut rng, 5, 3, 4);
    let (abar, bbar) = discretize(&s.delta, &s.a, &s.b).unwrap();
    assert_eq!(abar.shape(), &[5, 3, 4]);
    for t in 0..5 {
        for ch in 0..3 {
            for k in 0..4 {
                let dt = s.delta.data()[t * 3 + ch] as f64;
                let ea = (dt * s.a.data()[ch * 4 + k] as f64).exp();
                let eb = dt * s.b.data()[t * 4 + k] as f64;
                let i = (t * 3 + ch) * 4 + k;
                assert!((abar.data()[i] as f64 - ea).abs() <= 1e-6);
                assert!((bbar.data()[i] as f64 - eb).abs() <= 1e-6);
            }
        }
    }
}

#[test]
fn scan_is_linear_in_x_for_fixed_selections() {
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    let s = random_inputs(&mut rng, 64, 4, 8);
    let x1 = rand_tensor(&mut rng, &[64, 4], -1.0, 1.0);
    let x2 = rand_tensor(&mut rng, &[64, 4], -1.0, 1.0);
    let (al, be) = (0.7f32, -1.3f32);
    let mix = x1.zip_map(&x2, |a, b| al * a + be * b).unwrap();
    let lhs = scan_sequential(&mix, &s).unwrap();
    let y1 = scan_sequential(&x1, &s).unwrap();
    let y2 = scan_sequential(&x2, &s).unwrap();
    let rhs = y1.zip_map(&y2, |a, b| al * a + be * b).unwrap();
    assert!(lhs.max_abs_diff(&rhs) <= 1e-5);
}

#[test]
fn long_random_sequences_stay_finite() {
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let x = rand_tensor(&mut rng, &[4096, 4], -3.0, 3.0);
    let p = SsmParams::init(4, 16, 0.1, |shape| rand_tensor(&mut rng, shape, -1.0, 1.0));
    for y in [selective_scan_seq(&x, &p).unwrap(), selective_scan_chunked(&x, &p, 100).unwrap()] {
        y.check_finite("stress").unwrap();
        assert!(y.data().iter().all(|v| v.abs() < 1e4));
    }
}

#[test]
fn long_sequences_match_the_oracle() {
    // unit-scale outputs; an absolute 1e-5 bound is below f32 resolution once |y| nears 100
    let mut rng = ChaCha8Rng::seed_from_u64(35);
    let x = rand_tensor(&mut rng, &[4096, 8], -1.0, 1.0);
    let p = SsmParams::init(8, 16, 0.1, |shape| rand_tensor(&mut rng, shape, -0.5, 0.5));
    let y = selective_scan_seq(&x, &p).unwrap();
    for chunk in [1, 7, 64, 1000, 4096] {
        assert!(selective_scan_chunked(&x, &p, chunk).unwrap().max_abs_diff(&y) <= 1e-5, "chunk {chunk}");
    }
}

#[test]
fn chunk_sizes_that_do_not_divide_the_length() {
    let mut rng = ChaCha8Rng::seed_from_u64(34);
    let s = random_inputs(&mut rng, 97, 3, 5);
    let x = rand_tensor(&mut rng, &[97, 3], -1.0, 1.0);
    let y = scan_sequential(&x, &s).unwrap();
    for chunk in [2, 3, 10, 50, 96, 97, 200] {
        assert!(scan_chunked(&x, &s, chunk).unwrap().max_abs_diff(&y) <= 1e-5, "chunk {chunk}");
    }
}
