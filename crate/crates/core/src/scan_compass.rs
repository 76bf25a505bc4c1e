//! Shared scan order ("compass") from the spectral ordering of a token
//! similarity graph.
//!
//! Coarse tokens are compared with a dense softmax branch and a top-k sparse
//! branch; the blended, symmetrized affinities define a graph whose normalized
//! Laplacian's second eigenvector (the Fiedler vector) is sorted into a 1-D
//! order over coarse sites. That order is then expanded to full resolution.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numerics::ops::conv2d;
use crate::tensor::Tensor;

/// A permutation over spatial sites together with its inverse.
///
/// `perm[rank] = site` and `inv[site] = rank`; sites are raster indices on
/// `target_grid`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ScanOrder {
    pub perm: Vec<usize>,
    pub inv: Vec<usize>,
    pub source_grid: (usize, usize),
    pub target_grid: (usize, usize),
}

impl ScanOrder {
    pub fn from_perm(perm: Vec<usize>, source_grid: (usize, usize), target_grid: (usize, usize)) -> Result<Self> {
        let n = perm.len();
        if n != target_grid.0 * target_grid.1 {
            return Err(Error::arg(
                "ScanOrder",
                format!("{n} sites for grid {}x{}", target_grid.0, target_grid.1),
            ));
        }
        let mut inv = vec![usize::MAX; n];
        for (rank, &site) in perm.iter().enumerate() {
            if site >= n || inv[site] != usize::MAX {
                return Err(Error::arg("ScanOrder", format!("not a permutation (site {site})")));
            }
            inv[site] = rank;
        }
        Ok(ScanOrder {
            perm,
            inv,
            source_grid,
            target_grid,
        })
    }

    pub fn len(&self) -> usize {
        self.perm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.perm.is_empty()
    }

    /// Checks the bijection and inverse.
    pub fn validate(&self) -> Result<()> {
        let n = self.perm.len();
        if self.inv.len() != n || n != self.target_grid.0 * self.target_grid.1 {
            return Err(Error::arg("ScanOrder", "length mismatch"));
        }
        let mut seen = vec![false; n];
        for (rank, &site) in self.perm.iter().enumerate() {
            if site >= n || seen[site] || self.inv[site] != rank {
                return Err(Error::arg("ScanOrder", format!("broken at rank {rank}")));
            }
            seen[site] = true;
        }
        Ok(())
    }

    /// Restricts the order to non-overlapping `win x win` windows: windows are
    /// visited by the earliest rank among their pixels, and pixels inside a
    /// window by their own rank. Border windows may be partial.
    pub fn windowed(&self, win: usize) -> Result<ScanOrder> {
        if win == 0 {
            return Err(Error::arg("windowed", "window must be >= 1"));
        }
        let (h, w) = self.target_grid;
        let (nwy, nwx) = (h.div_ceil(win), w.div_ceil(win));
        let window_of = |site: usize| (site / w / win) * nwx + (site % w) / win;
        let mut first_rank = vec![usize::MAX; nwy * nwx];
        for (rank, &site) in self.perm.iter().enumerate() {
            let wi = window_of(site);
            first_rank[wi] = first_rank[wi].min(rank);
        }
        let mut windows: Vec<usize> = (0..nwy * nwx).collect();
        windows.sort_by_key(|&wi| (first_rank[wi], wi));
        let mut position = vec![0usize; nwy * nwx];
        for (pos, &wi) in windows.iter().enumerate() {
            position[wi] = pos;
        }
        let mut perm = self.perm.clone();
        perm.sort_by_key(|&site| (position[window_of(site)], self.inv[site]));
        ScanOrder::from_perm(perm, self.source_grid, self.target_grid)
    }
}

/// Identity order in row-major raster.
pub fn raster_order(h: usize, w: usize) -> Result<ScanOrder> {
    if h == 0 || w == 0 {
        return Err(Error::arg("raster_order", "extents must be >= 1"));
    }
    ScanOrder::from_perm((0..h * w).collect(), (h, w), (h, w))
}

/// Sorts site indices by ascending `v`, ties by ascending raster index.
pub fn order_from_fiedler(v: &[f64], grid: (usize, usize)) -> Result<ScanOrder> {
    if v.len() != grid.0 * grid.1 {
        return Err(Error::arg("order_from_fiedler", format!("{} values for {}x{}", v.len(), grid.0, grid.1)));
    }
    let mut perm: Vec<usize> = (0..v.len()).collect();
    perm.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    ScanOrder::from_perm(perm, grid, grid)
}

/// Expands a coarse order to a grid `factor` times larger: each coarse site
/// becomes its `factor x factor` pixel block, blocks in coarse order, pixels
/// in raster order inside each block.
pub fn expand_order(o: &ScanOrder, target: (usize, usize)) -> Result<ScanOrder> {
    let (ch, cw) = o.target_grid;
    let (h, w) = target;
    if ch == 0 || h % ch != 0 || w % cw != 0 || h / ch != w / cw {
        return Err(Error::arg(
            "expand_order",
            format!("{h}x{w} is not an integer multiple of {ch}x{cw}"),
        ));
    }
    let f = h / ch;
    let mut perm = Vec::with_capacity(h * w);
    for &site in &o.perm {
        let (cy, cx) = (site / cw, site % cw);
        for dy in 0..f {
            for dx in 0..f {
                perm.push((cy * f + dy) * w + cx * f + dx);
            }
        }
    }
    ScanOrder::from_perm(perm, o.target_grid, target)
}

// ---------------------------------------------------------------------------
// Graph construction

/// Symmetric nonnegative affinities over `n = h_c * w_c` coarse tokens, zero
/// diagonal, stored dense row-major in f64.
#[derive(Clone, Debug, PartialEq)]
pub struct SimilarityGraph {
    pub weights: Vec<f64>,
    pub n: usize,
    pub grid: (usize, usize),
}

impl SimilarityGraph {
    pub fn new(weights: Vec<f64>, grid: (usize, usize)) -> Result<Self> {
        let n = grid.0 * grid.1;
        if weights.len() != n * n {
            return Err(Error::arg("SimilarityGraph", "weights must be n x n"));
        }
        let g = SimilarityGraph { weights, n, grid };
        g.validate()?;
        Ok(g)
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.weights[i * self.n + j]
    }

    pub fn validate(&self) -> Result<()> {
        for i in 0..self.n {
            if self.weight(i, i) != 0.0 {
                return Err(Error::arg("SimilarityGraph", "nonzero diagonal"));
            }
            for j in 0..self.n {
                let (a, b) = (self.weight(i, j), self.weight(j, i));
                if !(a >= 0.0) || !a.is_finite() || (a - b).abs() > 1e-6 {
                    return Err(Error::arg("SimilarityGraph", format!("invalid weight at ({i}, {j})")));
                }
            }
        }
        Ok(())
    }

    pub fn degrees(&self) -> Vec<f64> {
        self.weights.chunks(self.n).map(|r| r.iter().sum()).collect()
    }
}

/// Tokens `[C, h, w]` as rows of an `n x C` matrix, centered by the mean token.
fn centered_tokens(tokens: &Tensor) -> Result<(Vec<f64>, usize, usize)> {
    let (c, h, w) = tokens.dims3()?;
    let n = h * w;
    let td = tokens.data();
    let mut x = vec![0.0f64; n * c];
    for ch in 0..c {
        let plane = &td[ch * n..(ch + 1) * n];
        let mean = plane.iter().map(|&v| v as f64).sum::<f64>() / n as f64;
        for (i, &v) in plane.iter().enumerate() {
            x[i * c + ch] = v as f64 - mean;
        }
    }
    Ok((x, n, c))
}

/// Dual-branch affinity graph over coarse tokens `[C, h, w]`.
///
/// Tokens are centered by their mean. The dense branch is the row softmax of
/// `x_i . x_j / (sqrt(C) * temperature)` over all `j`; the sparse branch keeps
/// each row's `top_k` dense entries (ties to the lower column) and
/// renormalizes them. `W = sym(blend * dense + (1 - blend) * sparse)` with
/// `sym(M) = (M + M^T) / 2` and the diagonal zeroed.
pub fn build_similarity(tokens: &Tensor, top_k: usize, blend: f32, temperature: f32) -> Result<SimilarityGraph> {
    let (_, h, w) = tokens.dims3()?;
    let (x, n, c) = centered_tokens(tokens)?;
    if n < 2 {
        return Err(Error::arg("build_similarity", "need at least two tokens"));
    }
    if top_k == 0 || top_k >= n {
        return Err(Error::arg("build_similarity", format!("top_k {top_k} must be in [1, {n})")));
    }
    if !(0.0..=1.0).contains(&blend) {
        return Err(Error::arg("build_similarity", "blend must be in [0, 1]"));
    }
    if !(temperature > 0.0) {
        return Err(Error::arg("build_similarity", "temperature must be > 0"));
    }
    let scale = 1.0 / ((c as f64).sqrt() * temperature as f64);
    let blend = blend as f64;
    let mut m = vec![0.0f64; n * n];
    let mut order: Vec<usize> = Vec::with_capacity(n);
    for i in 0..n {
        let xi = &x[i * c..(i + 1) * c];
        let scores: Vec<f64> = (0..n)
            .map(|j| xi.iter().zip(&x[j * c..(j + 1) * c]).map(|(a, b)| a * b).sum::<f64>() * scale)
            .collect();
        let mx = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = scores.iter().map(|s| (s - mx).exp()).collect();
        let z: f64 = e.iter().sum();
        let dense: Vec<f64> = e.iter().map(|v| v / z).collect();

        order.clear();
        order.extend(0..n);
        order.sort_by(|&a, &b| dense[b].total_cmp(&dense[a]).then(a.cmp(&b)));
        let kept = &order[..top_k];
        let zs: f64 = kept.iter().map(|&j| dense[j]).sum();
        let row = &mut m[i * n..(i + 1) * n];
        for j in 0..n {
            row[j] = blend * dense[j];
        }
        for &j in kept {
            row[j] += (1.0 - blend) * dense[j] / zs;
        }
    }
    let mut wts = vec![0.0f64; n * n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                wts[i * n + j] = 0.5 * (m[i * n + j] + m[j * n + i]);
            }
        }
    }
    SimilarityGraph::new(wts, (h, w))
}

// ---------------------------------------------------------------------------
// Laplacian and eigen-solve

/// A symmetric Laplacian together with the null direction the eigen-solver
/// deflates.
#[derive(Clone, Debug)]
pub struct Laplacian {
    pub n: usize,
    /// Dense row-major `n x n`.
    pub matrix: Vec<f64>,
    /// Unit vector spanning the known null direction.
    pub null_vector: Vec<f64>,
    /// Node degrees when built from a graph (normalized form).
    pub degrees: Option<Vec<f64>>,
}

impl Laplacian {
    /// Wraps a combinatorial Laplacian (zero row sums); the null direction is
    /// the constant vector.
    pub fn from_raw(matrix: Vec<f64>, n: usize) -> Result<Self> {
        if matrix.len() != n * n || n == 0 {
            return Err(Error::arg("Laplacian", "matrix must be n x n"));
        }
        let u = 1.0 / (n as f64).sqrt();
        Ok(Laplacian {
            n,
            matrix,
            null_vector: vec![u; n],
            degrees: None,
        })
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.matrix[i * self.n + j]
    }

    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        self.matrix
            .chunks(self.n)
            .map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// Maps an eigenvector of the normalized Laplacian to the random-walk
    /// embedding `D^(-1/2) v` used for ordering; zero-degree nodes keep their
    /// value. Raw Laplacians return `v` unchanged.
    pub fn embedding(&self, v: &[f64]) -> Vec<f64> {
        match &self.degrees {
            Some(d) => v
                .iter()
                .zip(d)
                .map(|(&x, &deg)| if deg > 0.0 { x / deg.sqrt() } else { x })
                .collect(),
            None => v.to_vec(),
        }
    }
}

/// Symmetric normalized Laplacian `I - D^(-1/2) W D^(-1/2)`. Isolated nodes
/// get an identity row and column. The deflation direction is
/// `D^(1/2) 1 / ||D^(1/2) 1||`.
pub fn laplacian(g: &SimilarityGraph) -> Laplacian {
    let n = g.n;
    let d = g.degrees();
    let inv_sqrt: Vec<f64> = d.iter().map(|&x| if x > 0.0 { 1.0 / x.sqrt() } else { 0.0 }).collect();
    let mut m = vec![0.0f64; n * n];
    for i in 0..n {
        for j in 0..n {
            let v = if i == j {
                1.0
            } else {
                -inv_sqrt[i] * g.weight(i, j) * inv_sqrt[j]
            };
            m[i * n + j] = v;
        }
    }
    let mut u: Vec<f64> = d.iter().map(|&x| x.sqrt()).collect();
    let norm = u.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        u.iter_mut().for_each(|v| *v /= norm);
    } else {
        // all isolated: any direction is null-free; deflate e_0
        u[0] = 1.0;
    }
    Laplacian {
        n,
        matrix: m,
        null_vector: u,
        degrees: Some(d),
    }
}

/// Eigen-solver controls.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FiedlerSolveConfig {
    pub tol: f64,
    pub max_iter: usize,
    pub seed: u64,
}

impl Default for FiedlerSolveConfig {
    fn default() -> Self {
        FiedlerSolveConfig {
            tol: 1e-6,
            max_iter: 10_000,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct FiedlerResult {
    pub vector: Vec<f64>,
    pub eigenvalue: f64,
    pub residual: f64,
    pub iterations: usize,
}

/// Dense Cholesky factor `A = R R^T` (lower triangular, row-major).
fn cholesky(a: &[f64], n: usize) -> Result<Vec<f64>> {
    let mut r = vec![0.0f64; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= r[i * n + k] * r[j * n + k];
            }
            if i == j {
                if !(s > 0.0) {
                    return Err(Error::arg("fiedler_vector", "shifted Laplacian is not positive definite"));
                }
                r[i * n + i] = s.sqrt();
            } else {
                r[i * n + j] = s / r[j * n + j];
            }
        }
    }
    Ok(r)
}

fn cholesky_solve(r: &[f64], n: usize, b: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0f64; n];
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= r[i * n + k] * y[k];
        }
        y[i] = s / r[i * n + i];
    }
    let mut x = vec![0.0f64; n];
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in i + 1..n {
            s -= r[k * n + i] * x[k];
        }
        x[i] = s / r[i * n + i];
    }
    x
}

fn deflate_normalize(v: &mut [f64], u: &[f64]) -> f64 {
    let proj: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
    v.iter_mut().zip(u).for_each(|(a, b)| *a -= proj * b);
    let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|a| *a /= norm);
    }
    norm
}

/// Sign convention: the first component with magnitude above `1e-9` is
/// positive.
pub fn fix_sign(v: &mut [f64]) {
    if let Some(&first) = v.iter().find(|x| x.abs() > 1e-9) {
        if first < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
    }
}

/// Unit eigenvector for the second-smallest eigenvalue of `l`.
///
/// Shifted inverse iteration on `L + delta I` (`delta = 1e-3 * max diag`)
/// from a seeded start vector, projecting out the known null direction after
/// every solve. Stops once `||L v - lambda v|| <= tol` with `lambda` the
/// Rayleigh quotient.
pub fn fiedler_vector(l: &Laplacian, cfg: &FiedlerSolveConfig) -> Result<FiedlerResult> {
    let n = l.n;
    if n < 2 {
        return Err(Error::arg("fiedler_vector", "need n >= 2"));
    }
    if !(cfg.tol > 0.0) || cfg.max_iter == 0 {
        return Err(Error::arg("fiedler_vector", "tol must be > 0 and max_iter >= 1"));
    }
    let diag_max = (0..n).map(|i| l.at(i, i)).fold(0.0f64, f64::max).max(1e-12);
    let shift = 1e-3 * diag_max;
    let mut shifted = l.matrix.clone();
    for i in 0..n {
        shifted[i * n + i] += shift;
    }
    let r = cholesky(&shifted, n)?;
    let u = &l.null_vector;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    if deflate_normalize(&mut v, u) == 0.0 {
        v = (0..n).map(|i| if i == 0 { 1.0 } else { 0.0 }).collect();
        deflate_normalize(&mut v, u);
    }
    let mut residual = f64::INFINITY;
    let mut lambda = 0.0;
    for it in 1..=cfg.max_iter {
        let mut w = cholesky_solve(&r, n, &v);
        deflate_normalize(&mut w, u);
        v = w;
        let lv = l.apply(&v);
        lambda = v.iter().zip(&lv).map(|(a, b)| a * b).sum();
        residual = lv.iter().zip(&v).map(|(a, b)| (a - lambda * b).powi(2)).sum::<f64>().sqrt();
        if residual <= cfg.tol {
            fix_sign(&mut v);
            return Ok(FiedlerResult {
                vector: v,
                eigenvalue: lambda,
                residual,
                iterations: it,
            });
        }
    }
    let _ = lambda;
    Err(Error::NoConvergence {
        iterations: cfg.max_iter,
        residual,
    })
}

// ---------------------------------------------------------------------------
// Embedding and compass assembly

/// Kernel size used by the strided embedding for a downsample `factor`:
/// the smallest odd size covering the block.
pub fn embed_kernel_size(factor: usize) -> usize {
    if factor % 2 == 1 {
        factor
    } else {
        factor + 1
    }
}

/// Strided convolutional embedding `[C, H, W] -> [C', H/f, W/f]` with an odd
/// `k x k` kernel and padding `(k - 1) / 2`.
pub fn embed_downsample(feat: &Tensor, factor: usize, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (_, h, w) = feat.dims3()?;
    if factor == 0 || h % factor != 0 || w % factor != 0 {
        return Err(Error::arg("embed_downsample", format!("{h}x{w} not divisible by {factor}")));
    }
    let k = *weight.shape().get(2).ok_or_else(|| Error::shape("embed_downsample", "weight must be rank 4"))?;
    let out = conv2d(feat, weight, bias, factor, k.saturating_sub(1) / 2)?;
    debug_assert_eq!(out.shape()[1..], [h / factor, w / factor]);
    Ok(out)
}

/// Identity-initialized embedding weights (`C' = C`): the center tap of each
/// channel's own kernel is one.
pub fn identity_embedding(channels: usize, factor: usize) -> (Tensor, Tensor) {
    let k = embed_kernel_size(factor);
    let mut w = Tensor::zeros(&[channels, channels, k, k]);
    let c = (k - 1) / 2;
    for ch in 0..channels {
        w.data_mut()[((ch * channels + ch) * k + c) * k + c] = 1.0;
    }
    (w, Tensor::zeros(&[channels]))
}

/// Non-overlapping `factor x factor` block means, `[C, H, W] -> [C, H/f, W/f]`.
pub fn block_mean(feat: &Tensor, factor: usize) -> Result<Tensor> {
    let (c, h, w) = feat.dims3()?;
    if factor == 0 || h % factor != 0 || w % factor != 0 {
        return Err(Error::arg("block_mean", format!("{h}x{w} not divisible by {factor}")));
    }
    let (hc, wc) = (h / factor, w / factor);
    let fd = feat.data();
    let inv = 1.0 / (factor * factor) as f32;
    Ok(Tensor::from_fn(&[c, hc, wc], |i| {
        let (ch, y, x) = (i / (hc * wc), (i / wc) % hc, i % wc);
        let mut s = 0.0f32;
        for dy in 0..factor {
            for dx in 0..factor {
                s += fd[(ch * h + y * factor + dy) * w + x * factor + dx];
            }
        }
        s * inv
    }))
}

/// Largest divisor of both `h` and `w` that does not exceed `limit`.
pub fn common_factor(h: usize, w: usize, limit: usize) -> usize {
    (1..=limit.max(1)).rev().find(|f| h % f == 0 && w % f == 0).unwrap_or(1)
}

/// Compass construction settings.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CompassConfig {
    pub factor: usize,
    pub top_k: usize,
    pub blend: f32,
    pub temperature: f32,
    pub solve: FiedlerSolveConfig,
}

impl Default for CompassConfig {
    fn default() -> Self {
        CompassConfig {
            factor: 4,
            top_k: 8,
            blend: 0.5,
            temperature: 1.0,
            solve: FiedlerSolveConfig::default(),
        }
    }
}

/// Coarse scan order from coarse tokens `[C', h_c, w_c]`.
///
/// Tokens with no variation carry no content to order by, so they yield the
/// raster order; `top_k` is capped at `n - 1` for small grids.
pub fn coarse_order(tokens: &Tensor, cfg: &CompassConfig) -> Result<ScanOrder> {
    let (_, hc, wc) = tokens.dims3()?;
    let n = hc * wc;
    let (x, _, _) = centered_tokens(tokens)?;
    if n < 2 || x.iter().all(|&v| v == 0.0) {
        return raster_order(hc, wc);
    }
    let g = build_similarity(tokens, cfg.top_k.min(n - 1), cfg.blend, cfg.temperature)?;
    let l = laplacian(&g);
    let f = fiedler_vector(&l, &cfg.solve)?;
    order_from_fiedler(&l.embedding(&f.vector), (hc, wc))
}

/// Full-resolution compass from already-embedded coarse tokens.
/// Featureless tokens give raster order over the full target grid.
pub fn compass_from_tokens(tokens: &Tensor, cfg: &CompassConfig, target: (usize, usize)) -> Result<ScanOrder> {
    let (_, hc, wc) = tokens.dims3()?;
    let full = expand_order(&coarse_order(tokens, cfg)?, target)?;
    let (x, _, _) = centered_tokens(tokens)?;
    if hc * wc < 2 || x.iter().all(|&v| v == 0.0) {
        return raster_order(target.0, target.1);
    }
    Ok(full)
}

/// One `site_index,rank` row per site.
pub fn order_csv(o: &ScanOrder) -> String {
    let mut s = String::from("site_index,rank\n");
    for (site, rank) in o.inv.iter().enumerate() {
        s.push_str(&format!("{site},{rank}\n"));
    }
    s
}

/// 8-bit rank map over the target grid, rank scaled to `0..=255`.
pub fn rank_map(o: &ScanOrder) -> Vec<u8> {
    let denom = (o.len().max(2) - 1) as f64;
    o.inv
        .iter()
        .map(|&r| (r as f64 * 255.0 / denom).round() as u8)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path_graph(n: usize) -> SimilarityGraph {
        let mut w = vec![0.0; n * n];
        for i in 0..n - 1 {
            w[i * n + i + 1] = 1.0;
            w[(i + 1) * n + i] = 1.0;
        }
        SimilarityGraph::new(w, (1, n)).unwrap()
    }

    #[test]
    fn raster_examples() {
        assert_eq!(raster_order(2, 2).unwrap().perm, vec![0, 1, 2, 3]);
        let o = raster_order(1, 1).unwrap();
        assert_eq!(o.perm, vec![0]);
        let o = raster_order(3, 5).unwrap();
        assert_eq!(o.inv, o.perm);
        assert!(raster_order(0, 3).is_err());
    }

    #[test]
    fn order_examples() {
        let s = 1.0 / 2f64.sqrt();
        assert_eq!(order_from_fiedler(&[s, 0.0, -s], (1, 3)).unwrap().perm, vec![2, 1, 0]);
        assert_eq!(order_from_fiedler(&[0.5; 6], (2, 3)).unwrap().perm, (0..6).collect::<Vec<_>>());
        assert!(order_from_fiedler(&[0.0; 5], (2, 3)).is_err());
    }

    #[test]
    fn expand_examples() {
        let o = ScanOrder::from_perm(vec![1, 0], (1, 2), (1, 2)).unwrap();
        let e = expand_order(&o, (2, 4)).unwrap();
        assert_eq!(e.perm, vec![2, 3, 6, 7, 0, 1, 4, 5]);
        e.validate().unwrap();
        assert_eq!(expand_order(&o, (1, 2)).unwrap().perm, o.perm);
        assert!(expand_order(&o, (3, 4)).is_err());
        assert!(expand_order(&o, (2, 6)).is_err());
    }

    #[test]
    fn laplacian_examples() {
        let g = SimilarityGraph::new(vec![0.0, 1.0, 1.0, 0.0], (1, 2)).unwrap();
        let l = laplacian(&g);
        assert_eq!(l.matrix, vec![1.0, -1.0, -1.0, 1.0]);
        let g = SimilarityGraph::new(vec![0.0; 9], (3, 1)).unwrap();
        let l = laplacian(&g);
        assert_eq!(l.matrix, vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn similarity_rejects_bad_args() {
        let t = Tensor::from_fn(&[2, 1, 3], |i| i as f32);
        assert!(build_similarity(&t, 3, 0.5, 1.0).is_err());
        assert!(build_similarity(&t, 0, 0.5, 1.0).is_err());
        assert!(build_similarity(&t, 1, 1.5, 1.0).is_err());
        assert!(build_similarity(&Tensor::zeros(&[2, 1, 1]), 1, 0.5, 1.0).is_err());
    }

    #[test]
    fn identical_tokens_pair() {
        let t = Tensor::full(&[3, 1, 2], 0.4);
        let g = build_similarity(&t, 1, 0.5, 1.0).unwrap();
        assert_eq!(g.weight(0, 0), 0.0);
        assert_eq!(g.weight(1, 1), 0.0);
        assert!(g.weight(0, 1) > 0.0);
        assert_eq!(g.weight(0, 1), g.weight(1, 0));
    }

    #[test]
    fn orthogonal_pair_closed_form() {
        // one-hot tokens e0, e1; centered they are +-(0.5, -0.5)
        let t = Tensor::new(vec![2, 1, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let temp = 0.05f32;
        let g = build_similarity(&t, 1, 0.5, temp).unwrap();
        let s = 1.0 / (2f64.sqrt() * temp as f64);
        // self score 0.5*s, cross -0.5*s
        let off = 1.0 / (1.0 + s.exp());
        // sparse top-1 keeps the diagonal, so only the dense half remains
        let expected = 0.5 * off;
        assert!((g.weight(0, 1) - expected).abs() < 1e-15);
        assert!(g.weight(0, 1) < 1e-6);
    }

    #[test]
    fn fiedler_on_raw_path() {
        let l = Laplacian::from_raw(vec![1.0, -1.0, 0.0, -1.0, 2.0, -1.0, 0.0, -1.0, 1.0], 3).unwrap();
        let f = fiedler_vector(&l, &FiedlerSolveConfig::default()).unwrap();
        assert!((f.eigenvalue - 1.0).abs() < 1e-9);
        let s = 1.0 / 2f64.sqrt();
        for (a, b) in f.vector.iter().zip([s, 0.0, -s]) {
            assert!((a - b).abs() < 1e-6);
        }
        assert!(f.residual <= 1e-6);
        assert_eq!(order_from_fiedler(&f.vector, (1, 3)).unwrap().perm, vec![2, 1, 0]);
    }

    #[test]
    fn fiedler_disconnected_cliques() {
        let mut w = vec![0.0; 16];
        for &(i, j) in &[(0, 1), (2, 3)] {
            w[i * 4 + j] = 1.0;
            w[j * 4 + i] = 1.0;
        }
        let g = SimilarityGraph::new(w, (2, 2)).unwrap();
        let l = laplacian(&g);
        let f = fiedler_vector(&l, &FiedlerSolveConfig::default()).unwrap();
        assert!(f.eigenvalue.abs() < 1e-6);
        assert!((f.vector[0] - f.vector[1]).abs() < 1e-6);
        assert!((f.vector[2] - f.vector[3]).abs() < 1e-6);
        assert!((f.vector[0] + f.vector[2]).abs() < 1e-6);
        assert!(f.vector[0] > 0.0);
    }

    #[test]
    fn fiedler_normalized_path_orders_monotonically() {
        for n in [3, 4, 9, 20] {
            let l = laplacian(&path_graph(n));
            let f = fiedler_vector(&l, &FiedlerSolveConfig::default()).unwrap();
            let o = order_from_fiedler(&l.embedding(&f.vector), (1, n)).unwrap();
            assert_eq!(o.perm, (0..n).rev().collect::<Vec<_>>(), "n={n}");
        }
    }

    #[test]
    fn fiedler_errors() {
        let l = Laplacian::from_raw(vec![0.0], 1).unwrap();
        assert!(fiedler_vector(&l, &FiedlerSolveConfig::default()).is_err());
        let l = laplacian(&path_graph(30));
        let cfg = FiedlerSolveConfig {
            tol: 1e-14,
            max_iter: 2,
            seed: 0,
        };
        assert!(matches!(fiedler_vector(&l, &cfg), Err(Error::NoConvergence { .. })));
    }

    #[test]
    fn embed_shapes() {
        let feat = Tensor::from_fn(&[3, 8, 8], |i| (i as f32 * 0.01).sin());
        let (w, b) = identity_embedding(3, 4);
        assert_eq!(embed_downsample(&feat, 4, &w, &b).unwrap().shape(), &[3, 2, 2]);
        let (w1, b1) = identity_embedding(3, 1);
        assert_eq!(embed_downsample(&feat, 1, &w1, &b1).unwrap(), feat);
        let feat16 = Tensor::zeros(&[3, 16, 16]);
        let tok = embed_downsample(&feat16, 4, &w, &b).unwrap();
        assert_eq!(tok.shape()[1] * tok.shape()[2], 16);
        assert!(embed_downsample(&Tensor::zeros(&[3, 6, 8]), 4, &w, &b).is_err());
    }

    #[test]
    fn constant_tokens_give_raster() {
        let o = coarse_order(&Tensor::full(&[3, 4, 4], 0.5), &CompassConfig::default()).unwrap();
        assert_eq!(o.perm, (0..16).collect::<Vec<_>>());
        let full = compass_from_tokens(&Tensor::full(&[3, 2, 2], 0.5), &CompassConfig::default(), (4, 4)).unwrap();
        assert_eq!(full, raster_order(4, 4).unwrap());
    }

    #[test]
    fn windowed_order_examples() {
        let o = raster_order(4, 4).unwrap();
        let w = o.windowed(2).unwrap();
        assert_eq!(w.perm, vec![0, 1, 4, 5, 2, 3, 6, 7, 8, 9, 12, 13, 10, 11, 14, 15]);
        assert_eq!(o.windowed(4).unwrap(), o);
        let coarse = ScanOrder::from_perm(vec![3, 1, 2, 0], (2, 2), (2, 2)).unwrap();
        let e = expand_order(&coarse, (4, 4)).unwrap();
        assert_eq!(e.windowed(2).unwrap(), e);
        let partial = raster_order(3, 5).unwrap().windowed(2).unwrap();
        partial.validate().unwrap();
    }

    #[test]
    fn rank_map_and_csv() {
        let o = ScanOrder::from_perm(vec![2, 0, 1], (1, 3), (1, 3)).unwrap();
        assert_eq!(rank_map(&o), vec![128, 255, 0]);
        assert_eq!(order_csv(&o), "site_index,rank\n0,1\n1,2\n2,0\n");
    }
}
