//! Selective state-space scan.
//!
//! Per channel `c` and state index `n`, with input-dependent step `delta`:
//!
//! ```text
//! Abar[t,c,n] = exp(delta[t,c] * A[c,n])          (zero-order hold)
//! Bbar[t,c,n] = delta[t,c] * B[t,n]               (Euler)
//! h[t,c,n]    = Abar[t,c,n] * h[t-1,c,n] + Bbar[t,c,n] * x[t,c]
//! y[t,c]      = sum_n C[t,n] * h[t,c,n] + D[c] * x[t,c]
//! ```
//!
//! [`scan_sequential`] is the reference evaluation. [`scan_chunked`] composes
//! per-chunk affine maps `h -> a*h + b` and carries the state between chunks.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::numerics::ops::{linear, softplus};
use crate::tensor::Tensor;

/// Learned parameters of one selective-scan layer.
#[derive(Clone, Debug)]
pub struct SsmParams {
    /// `[C, N]`; the state matrix is `A = -exp(a_log)`.
    pub a_log: Tensor,
    /// `[N, C]`
    pub w_b: Tensor,
    /// `[N, C]`
    pub w_c: Tensor,
    /// `[C, C]`
    pub w_delta: Tensor,
    /// `[C]`
    pub b_delta: Tensor,
    /// `[C]`
    pub d: Tensor,
}

impl SsmParams {
    pub fn channels(&self) -> usize {
        self.a_log.shape()[0]
    }

    pub fn state_dim(&self) -> usize {
        self.a_log.shape()[1]
    }

    /// `A = -exp(a_log)`.
    pub fn a(&self) -> Tensor {
        self.a_log.map(|v| -v.exp())
    }

    /// S4D-real style initialization: `a_log[c, n] = ln(n + 1)`, `delta` bias so
    /// that `softplus(bias) = delta_init`, projections from `init`.
    pub fn init(channels: usize, state_dim: usize, delta_init: f32, mut init: impl FnMut(&[usize]) -> Tensor) -> Self {
        SsmParams {
            a_log: Tensor::from_fn(&[channels, state_dim], |i| ((i % state_dim) as f32 + 1.0).ln()),
            w_b: init(&[state_dim, channels]),
            w_c: init(&[state_dim, channels]),
            w_delta: init(&[channels, channels]),
            b_delta: Tensor::full(&[channels], crate::numerics::ops::softplus_inverse(delta_init)),
            d: Tensor::full(&[channels], 1.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (c, n) = (self.channels(), self.state_dim());
        let ok = self.w_b.shape() == [n, c]
            && self.w_c.shape() == [n, c]
            && self.w_delta.shape() == [c, c]
            && self.b_delta.shape() == [c]
            && self.d.shape() == [c];
        if !ok {
            return Err(Error::shape("SsmParams", "inconsistent parameter extents"));
        }
        Ok(())
    }

    /// Input-dependent selections for a token matrix `x: [L, C]`.
    pub fn selections(&self, x: &Tensor) -> Result<ScanInputs> {
        self.validate()?;
        let delta = linear(x, &self.w_delta, Some(&self.b_delta))?.map(softplus);
        Ok(ScanInputs {
            delta,
            a: self.a(),
            b: linear(x, &self.w_b, None)?,
            c: linear(x, &self.w_c, None)?,
            d: self.d.clone(),
        })
    }
}

/// The per-token quantities a scan consumes once selection is done.
#[derive(Clone, Debug)]
pub struct ScanInputs {
    /// `[L, C]`, strictly positive.
    pub delta: Tensor,
    /// `[C, N]`, nonpositive.
    pub a: Tensor,
    /// `[L, N]`
    pub b: Tensor,
    /// `[L, N]`
    pub c: Tensor,
    /// `[C]`
    pub d: Tensor,
}

impl ScanInputs {
    fn dims(&self, x: &Tensor) -> Result<(usize, usize, usize)> {
        let &[l, c] = x.shape() else {
            return Err(Error::shape("selective_scan", format!("x must be [L, C], got {:?}", x.shape())));
        };
        if l == 0 {
            return Err(Error::arg("selective_scan", "empty sequence"));
        }
        let n = self.a.shape().get(1).copied().unwrap_or(0);
        let ok = self.delta.shape() == [l, c]
            && self.a.shape() == [c, n]
            && self.b.shape() == [l, n]
            && self.c.shape() == [l, n]
            && self.d.shape() == [c];
        if !ok {
            return Err(Error::shape("selective_scan", "selection extents do not match x"));
        }
        if self.delta.data().iter().any(|&v| !(v > 0.0)) {
            return Err(Error::arg("selective_scan", "delta must be > 0"));
        }
        Ok((l, c, n))
    }
}

/// `Abar = exp(delta * A)` and `Bbar = delta * B`, both `[L, C, N]`.
pub fn discretize(delta: &Tensor, a: &Tensor, b: &Tensor) -> Result<(Tensor, Tensor)> {
    let &[l, c] = delta.shape() else {
        return Err(Error::shape("discretize", "delta must be [L, C]"));
    };
    let &[ac, n] = a.shape() else {
        return Err(Error::shape("discretize", "A must be [C, N]"));
    };
    if ac != c || b.shape() != [l, n] {
        return Err(Error::shape("discretize", "extent mismatch"));
    }
    if delta.data().iter().any(|&v| !(v > 0.0)) {
        return Err(Error::arg("discretize", "delta must be > 0"));
    }
    let (dd, ad, bd) = (delta.data(), a.data(), b.data());
    let mut abar = vec![0.0f32; l * c * n];
    let mut bbar = vec![0.0f32; l * c * n];
    for t in 0..l {
        for ch in 0..c {
            let dt = dd[t * c + ch];
            for s in 0..n {
                let i = (t * c + ch) * n + s;
                abar[i] = (dt * ad[ch * n + s]).exp();
                bbar[i] = dt * bd[t * n + s];
            }
        }
    }
    Ok((Tensor::new(vec![l, c, n], abar)?, Tensor::new(vec![l, c, n], bbar)?))
}

#[inline]
fn readout(ct: &[f32], h: &[f32], dx: f32) -> f32 {
    let mut acc = 0.0f32;
    for (cv, hv) in ct.iter().zip(h) {
        acc += cv * hv;
    }
    acc + dx
}

/// Sequential reference scan from `h0 = 0`. Returns `y: [L, C]` and the
/// hidden states `[L, C, N]`.
pub fn scan_sequential_with_states(x: &Tensor, s: &ScanInputs) -> Result<(Tensor, Tensor)> {
    let (l, c, n) = s.dims(x)?;
    let (xd, dd, ad, bd, cd, d) = (x.data(), s.delta.data(), s.a.data(), s.b.data(), s.c.data(), s.d.data());
    let mut h = vec![0.0f32; c * n];
    let mut states = vec![0.0f32; l * c * n];
    let mut y = vec![0.0f32; l * c];
    for t in 0..l {
        let bt = &bd[t * n..(t + 1) * n];
        let ct = &cd[t * n..(t + 1) * n];
        for ch in 0..c {
            let dt = dd[t * c + ch];
            let xv = xd[t * c + ch];
            let hc = &mut h[ch * n..(ch + 1) * n];
            for k in 0..n {
                let abar = (dt * ad[ch * n + k]).exp();
                let bx = dt * bt[k] * xv;
                hc[k] = abar * hc[k] + bx;
            }
            let yv = readout(ct, hc, d[ch] * xv);
            if !yv.is_finite() || hc.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteScan { step: t });
            }
            y[t * c + ch] = yv;
        }
        states[t * c * n..(t + 1) * c * n].copy_from_slice(&h);
    }
    Ok((Tensor::new(vec![l, c], y)?, Tensor::new(vec![l, c, n], states)?))
}

pub fn scan_sequential(x: &Tensor, s: &ScanInputs) -> Result<Tensor> {
    Ok(scan_sequential_with_states(x, s)?.0)
}

/// Selective scan of `x: [L, C]` with selections computed from `x` itself.
pub fn selective_scan_seq(x: &Tensor, p: &SsmParams) -> Result<Tensor> {
    x.check_finite("selective_scan_seq")?;
    scan_sequential(x, &p.selections(x)?)
}

pub fn selective_scan_chunked(x: &Tensor, p: &SsmParams, chunk: usize) -> Result<Tensor> {
    x.check_finite("selective_scan_chunked")?;
    scan_chunked(x, &p.selections(x)?, chunk)
}

/// Local pass over one chunk from a zero state: per-step local states and
/// cumulative products of `Abar`.
struct ChunkPass {
    local: Vec<f32>,
    prod: Vec<f32>,
}

fn chunk_pass(x: &[f32], s: &ScanInputs, start: usize, len: usize, c: usize, n: usize) -> ChunkPass {
    let (dd, ad, bd) = (s.delta.data(), s.a.data(), s.b.data());
    let mut local = vec![0.0f32; len * c * n];
    let mut prod = vec![0.0f32; len * c * n];
    let mut h = vec![0.0f32; c * n];
    let mut p = vec![1.0f32; c * n];
    for i in 0..len {
        let t = start + i;
        for ch in 0..c {
            let dt = dd[t * c + ch];
            let xv = x[t * c + ch];
            for k in 0..n {
                let j = ch * n + k;
                let abar = (dt * ad[j]).exp();
                let bx = dt * bd[t * n + k] * xv;
                h[j] = abar * h[j] + bx;
                p[j] = if i == 0 { abar } else { p[j] * abar };
            }
        }
        local[i * c * n..(i + 1) * c * n].copy_from_slice(&h);
        prod[i * c * n..(i + 1) * c * n].copy_from_slice(&p);
    }
    ChunkPass { local, prod }
}

/// Chunked evaluation of the same recurrence. Chunks are processed
/// independently from a zero state, then stitched by carrying the state.
pub fn scan_chunked(x: &Tensor, s: &ScanInputs, chunk: usize) -> Result<Tensor> {
    if chunk == 0 {
        return Err(Error::arg("selective_scan_chunked", "chunk must be >= 1"));
    }
    let (l, c, n) = s.dims(x)?;
    let xd = x.data();
    let starts: Vec<usize> = (0..l).step_by(chunk).collect();
    let run = |&start: &usize| chunk_pass(xd, s, start, chunk.min(l - start), c, n);
    #[cfg(feature = "parallel")]
    let passes: Vec<ChunkPass> = starts.par_iter().map(run).collect();
    #[cfg(not(feature = "parallel"))]
    let passes: Vec<ChunkPass> = starts.iter().map(run).collect();

    // Carry-in state per chunk; chunk 0 starts from zero.
    let mut carries: Vec<Option<Vec<f32>>> = Vec::with_capacity(passes.len());
    let mut carry: Option<Vec<f32>> = None;
    for pass in &passes {
        carries.push(carry.clone());
        let last = pass.local.len() / (c * n) - 1;
        let loc = &pass.local[last * c * n..];
        let pr = &pass.prod[last * c * n..];
        carry = Some(match carry {
            None => loc.to_vec(),
            Some(h) => loc.iter().zip(pr).zip(&h).map(|((&b, &a), &hv)| b + a * hv).collect(),
        });
    }

    let (cd, d) = (s.c.data(), s.d.data());
    let mut y = vec![0.0f32; l * c];
    let mut h = vec![0.0f32; c * n];
    for ((&start, pass), carry_in) in starts.iter().zip(&passes).zip(&carries) {
        let len = pass.local.len() / (c * n);
        for i in 0..len {
            let t = start + i;
            let loc = &pass.local[i * c * n..(i + 1) * c * n];
            match carry_in {
                None => h.copy_from_slice(loc),
                Some(hc) => {
                    let pr = &pass.prod[i * c * n..(i + 1) * c * n];
                    for j in 0..c * n {
                        h[j] = loc[j] + pr[j] * hc[j];
                    }
                }
            }
            let ct = &cd[t * n..(t + 1) * n];
            for ch in 0..c {
                let yv = readout(ct, &h[ch * n..(ch + 1) * n], d[ch] * xd[t * c + ch]);
                if !yv.is_finite() {
                    return Err(Error::NonFiniteScan { step: t });
                }
                y[t * c + ch] = yv;
            }
        }
    }
    Tensor::new(vec![l, c], y)
}

/// Gradients of the scan with respect to every input.
#[derive(Clone, Debug)]
pub struct ScanGrads {
    pub x: Tensor,
    pub delta: Tensor,
    pub a: Tensor,
    pub b: Tensor,
    pub c: Tensor,
    pub d: Tensor,
}

/// Reverse-time adjoint recurrence for [`scan_sequential_with_states`].
pub fn scan_backward(x: &Tensor, s: &ScanInputs, states: &Tensor, grad_y: &Tensor) -> Result<ScanGrads> {
    let (l, c, n) = s.dims(x)?;
    let (xd, dd, ad, bd, cd, d) = (x.data(), s.delta.data(), s.a.data(), s.b.data(), s.c.data(), s.d.data());
    let hs = states.data();
    let gy = grad_y.data();
    let mut gx = vec![0.0f32; l * c];
    let mut gdelta = vec![0.0f32; l * c];
    let mut ga = vec![0.0f32; c * n];
    let mut gb = vec![0.0f32; l * n];
    let mut gc = vec![0.0f32; l * n];
    let mut gd = vec![0.0f32; c];
    // adjoint of h carried backwards: gh[t] = gy[t] C[t] + Abar[t+1] gh[t+1]
    let mut gh = vec![0.0f32; c * n];
    for t in (0..l).rev() {
        for ch in 0..c {
            let g = gy[t * c + ch];
            let xv = xd[t * c + ch];
            let dt = dd[t * c + ch];
            gd[ch] += g * xv;
            let mut gxv = g * d[ch];
            let mut gdt = 0.0f32;
            for k in 0..n {
                let j = ch * n + k;
                let h_t = hs[t * c * n + j];
                let h_prev = if t > 0 { hs[(t - 1) * c * n + j] } else { 0.0 };
                gc[t * n + k] += g * h_t;
                // gh currently holds Abar[t+1] * gh[t+1]
                let ght = gh[j] + g * cd[t * n + k];
                let av = ad[j];
                let abar = (dt * av).exp();
                let bt = bd[t * n + k];
                // through Abar
                let g_abar = ght * h_prev;
                gdt += g_abar * abar * av;
                ga[j] += g_abar * abar * dt;
                // through Bbar x
                gdt += ght * bt * xv;
                gb[t * n + k] += ght * dt * xv;
                gxv += ght * dt * bt;
                gh[j] = ght * abar;
            }
            gx[t * c + ch] = gxv;
            gdelta[t * c + ch] = gdt;
        }
    }
    Ok(ScanGrads {
        x: Tensor::new(vec![l, c], gx)?,
        delta: Tensor::new(vec![l, c], gdelta)?,
        a: Tensor::new(vec![c, n], ga)?,
        b: Tensor::new(vec![l, n], gb)?,
        c: Tensor::new(vec![l, n], gc)?,
        d: Tensor::new(vec![c], gd)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn random_inputs(rng: &mut ChaCha8Rng, l: usize, c: usize, n: usize) -> (Tensor, ScanInputs) {
        let x = Tensor::from_fn(&[l, c], |_| rng.gen_range(-1.0..1.0));
        let s = ScanInputs {
            delta: Tensor::from_fn(&[l, c], |_| rng.gen_range(0.01..0.5)),
            a: Tensor::from_fn(&[c, n], |_| -rng.gen_range(0.1..2.0)),
            b: Tensor::from_fn(&[l, n], |_| rng.gen_range(-1.0..1.0)),
            c: Tensor::from_fn(&[l, n], |_| rng.gen_range(-1.0..1.0)),
            d: Tensor::from_fn(&[c], |_| rng.gen_range(-1.0..1.0)),
        };
        (x, s)
    }

    #[test]
    fn discretize_examples() {
        let delta = Tensor::full(&[2, 3], 0.3);
        let (abar, bbar) = discretize(&delta, &Tensor::zeros(&[3, 2]), &Tensor::full(&[2, 2], 2.0)).unwrap();
        assert!(abar.data().iter().all(|&v| v == 1.0));
        assert!(bbar.data().iter().all(|&v| (v - 0.6).abs() < 1e-7));

        let tiny = Tensor::full(&[1, 1], 1e-12);
        let (abar, bbar) = discretize(&tiny, &Tensor::full(&[1, 1], -3.0), &Tensor::full(&[1, 1], 5.0)).unwrap();
        assert!((abar.data()[0] - 1.0).abs() < 1e-7 && bbar.data()[0].abs() < 1e-10);

        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (_, s) = random_inputs(&mut rng, 4, 3, 2);
        let (abar, bbar) = discretize(&s.delta, &s.a, &s.b).unwrap();
        for t in 0..4 {
            for c in 0..3 {
                for k in 0..2 {
                    let dt = s.delta.data()[t * 3 + c] as f64;
                    let ea = (dt * s.a.data()[c * 2 + k] as f64).exp();
                    let eb = dt * s.b.data()[t * 2 + k] as f64;
                    let i = (t * 3 + c) * 2 + k;
                    assert!((abar.data()[i] as f64 - ea).abs() <= 1e-6);
                    assert!((bbar.data()[i] as f64 - eb).abs() <= 1e-6);
                }
            }
        }
        assert!(discretize(&Tensor::zeros(&[1, 1]), &Tensor::zeros(&[1, 1]), &Tensor::zeros(&[1, 1])).is_err());
    }

    #[test]
    fn single_step() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let (x, s) = random_inputs(&mut rng, 1, 3, 4);
        let y = scan_sequential(&x, &s).unwrap();
        for c in 0..3 {
            let xv = x.data()[c] as f64;
            let dt = s.delta.data()[c] as f64;
            let mut e = s.d.data()[c] as f64 * xv;
            for k in 0..4 {
                e += s.c.data()[k] as f64 * dt * s.b.data()[k] as f64 * xv;
            }
            assert!((y.data()[c] as f64 - e).abs() < 1e-6);
        }
    }

    #[test]
    fn accumulator_is_scaled_prefix_sum() {
        let l = 9;
        let x = Tensor::from_fn(&[l, 1], |i| (i as f32 * 0.37).sin());
        let s = ScanInputs {
            delta: Tensor::full(&[l, 1], 0.25),
            a: Tensor::zeros(&[1, 1]),
            b: Tensor::full(&[l, 1], 1.0),
            c: Tensor::full(&[l, 1], 1.0),
            d: Tensor::zeros(&[1]),
        };
        let y = scan_sequential(&x, &s).unwrap();
        let mut acc = 0.0f64;
        for t in 0..l {
            acc += x.data()[t] as f64;
            assert!((y.data()[t] as f64 - 0.25 * acc).abs() < 1e-6);
        }
    }

    #[test]
    fn zero_input_zero_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let (x, s) = random_inputs(&mut rng, 10, 2, 3);
        let y = scan_sequential(&Tensor::zeros(x.shape()), &s).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn chunked_degenerate_chunks_are_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let (x, s) = random_inputs(&mut rng, 37, 3, 4);
        let seq = scan_sequential(&x, &s).unwrap();
        assert_eq!(scan_chunked(&x, &s, 37).unwrap(), seq);
        assert_eq!(scan_chunked(&x, &s, 100).unwrap(), seq);
        assert_eq!(scan_chunked(&x, &s, 1).unwrap(), seq);
        assert!(scan_chunked(&x, &s, 0).is_err());
    }

    #[test]
    fn chunked_matches_sequential() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let (x, s) = random_inputs(&mut rng, 256, 4, 16);
        let seq = scan_sequential(&x, &s).unwrap();
        for chunk in [2, 5, 32, 33, 255] {
            let ch = scan_chunked(&x, &s, chunk).unwrap();
            assert!(ch.max_abs_diff(&seq) <= 1e-5, "chunk {chunk}");
        }
    }

    #[test]
    fn causality() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let (x, s) = random_inputs(&mut rng, 20, 2, 3);
        let full = scan_sequential(&x, &s).unwrap();
        let t = 7;
        let cut = |m: &Tensor, w: usize| Tensor::new(vec![t, w], m.data()[..t * w].to_vec()).unwrap();
        let sc = ScanInputs {
            delta: cut(&s.delta, 2),
            a: s.a.clone(),
            b: cut(&s.b, 3),
            c: cut(&s.c, 3),
            d: s.d.clone(),
        };
        let part = scan_sequential(&cut(&x, 2), &sc).unwrap();
        assert_eq!(part.data(), &full.data()[..t * 2]);
    }

    #[test]
    fn params_selection_path() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let p = SsmParams::init(4, 8, 0.1, |s| Tensor::from_fn(s, |_| rng.gen_range(-0.2..0.2)));
        assert!(p.a().data().iter().all(|&v| v < 0.0));
        let x = Tensor::from_fn(&[32, 4], |i| (i as f32 * 0.1).cos());
        let seq = selective_scan_seq(&x, &p).unwrap();
        let ch = selective_scan_chunked(&x, &p, 5).unwrap();
        assert!(seq.max_abs_diff(&ch) <= 1e-5);
        let sel = p.selections(&x).unwrap();
        assert!(sel.delta.data().iter().all(|&v| v > 0.0));
    }

    #[test]
    fn rejects_nonpositive_delta() {
        let mut rng = ChaCha8Rng::seed_from_u64(18);
        let (x, mut s) = random_inputs(&mut rng, 4, 2, 2);
        s.delta.data_mut()[3] = 0.0;
        assert!(scan_sequential(&x, &s).is_err());
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let (x, s) = random_inputs(&mut rng, 6, 2, 3);
        let r = Tensor::from_fn(&[6, 2], |_| rng.gen_range(-1.0..1.0));
        let loss = |x: &Tensor, s: &ScanInputs| -> f64 {
            let y = scan_sequential(x, s).unwrap();
            y.data().iter().zip(r.data()).map(|(&a, &b)| a as f64 * b as f64).sum()
        };
        let (_, states) = scan_sequential_with_states(&x, &s).unwrap();
        let g = scan_backward(&x, &s, &states, &r).unwrap();
        let h = 1e-3f32;
        let check = |analytic: &Tensor, perturb: &dyn Fn(usize, f32) -> f64| {
            for i in 0..analytic.numel() {
                let fd = (perturb(i, h) - perturb(i, -h)) / (2.0 * h as f64);
                let a = analytic.data()[i] as f64;
                assert!((fd - a).abs() <= 2e-3 * (1.0 + a.abs()), "{i}: {a} vs {fd}");
            }
        };
        check(&g.x, &|i, e| {
            let mut x2 = x.clone();
            x2.data_mut()[i] += e;
            loss(&x2, &s)
        });
        check(&g.delta, &|i, e| {
            let mut s2 = s.clone();
            s2.delta.data_mut()[i] += e;
            loss(&x, &s2)
        });
        check(&g.a, &|i, e| {
            let mut s2 = s.clone();
            s2.a.data_mut()[i] += e;
            loss(&x, &s2)
        });
        check(&g.b, &|i, e| {
            let mut s2 = s.clone();
            s2.b.data_mut()[i] += e;
            loss(&x, &s2)
        });
        check(&g.c, &|i, e| {
            let mut s2 = s.clone();
            s2.c.data_mut()[i] += e;
            loss(&x, &s2)
        });
        check(&g.d, &|i, e| {
            let mut s2 = s.clone();
            s2.d.data_mut()[i] += e;
            loss(&x, &s2)
        });
    }
}
