//! Coarse patch alignment of neighbor frames and interleaving of multi-frame
//! features along a scan order.
//!
//! Every rearrangement here is an index map (output element -> input
//! element), so the same maps drive both the plain tensor functions and the
//! differentiable graph path via `gather`.

use crate::error::{Error, Result};
use crate::scan_compass::ScanOrder;
use crate::tensor::Tensor;

/// Scores within this distance compare as equal.
const SCORE_TIE: f64 = 1e-9;

/// Integer patch-grid displacement per reference patch.
///
/// `displacements` is `[2, H/patch, W/patch]`; channel 0 is the horizontal
/// and channel 1 the vertical displacement, both in patches. The neighbor
/// patch at `(py + dy, px + dx)` was copied to reference patch `(py, px)`.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchAlignment {
    pub patch: usize,
    pub radius: usize,
    pub displacements: Tensor,
    /// Patches whose best score was matched by another candidate.
    pub ties: usize,
}

impl PatchAlignment {
    pub fn grid(&self) -> (usize, usize) {
        (self.displacements.shape()[1], self.displacements.shape()[2])
    }

    pub fn displacement(&self, py: usize, px: usize) -> (isize, isize) {
        let (gh, gw) = self.grid();
        let d = self.displacements.data();
        (d[py * gw + px] as isize, d[gh * gw + py * gw + px] as isize)
    }

    /// Zero displacement everywhere.
    pub fn identity(patch: usize, h: usize, w: usize) -> Self {
        PatchAlignment {
            patch,
            radius: 0,
            displacements: Tensor::zeros(&[2, h / patch, w / patch]),
            ties: 0,
        }
    }

    /// For a `[C, H, W]` feature map: aligned element -> neighbor element.
    pub fn index_map(&self, c: usize, h: usize, w: usize) -> Vec<usize> {
        let p = self.patch;
        let (_, gw) = self.grid();
        let mut idx = Vec::with_capacity(c * h * w);
        for ch in 0..c {
            for y in 0..h {
                for x in 0..w {
                    let (dx, dy) = self.displacement(y / p, x / p);
                    let sy = (y as isize + dy * p as isize) as usize;
                    let sx = (x as isize + dx * p as isize) as usize;
                    debug_assert!(sy < h && sx < w && (x / p) < gw);
                    idx.push((ch * h + sy) * w + sx);
                }
            }
        }
        idx
    }

    pub fn mean_abs_displacement(&self) -> f64 {
        let (gh, gw) = self.grid();
        let d = self.displacements.data();
        let total: f64 = (0..gh * gw).map(|i| (d[i].abs() + d[gh * gw + i].abs()) as f64).sum();
        total / (gh * gw) as f64
    }

    pub fn tie_rate(&self) -> f64 {
        let (gh, gw) = self.grid();
        self.ties as f64 / (gh * gw) as f64
    }

    /// `mean_abs_displacement,tie_rate` header and one row.
    pub fn summary_csv(&self) -> String {
        format!(
            "mean_abs_displacement,tie_rate\n{:.6},{:.6}\n",
            self.mean_abs_displacement(),
            self.tie_rate()
        )
    }
}

/// Zero-mean values of one `patch x patch` block across all channels.
fn centered_patch(x: &[f32], c: usize, h: usize, w: usize, y0: usize, x0: usize, p: usize, out: &mut Vec<f64>) -> f64 {
    out.clear();
    for ch in 0..c {
        for y in y0..y0 + p {
            let row = &x[(ch * h + y) * w + x0..(ch * h + y) * w + x0 + p];
            out.extend(row.iter().map(|&v| v as f64));
        }
    }
    let mean = out.iter().sum::<f64>() / out.len() as f64;
    out.iter_mut().for_each(|v| *v -= mean);
    out.iter().map(|v| v * v).sum()
}

/// Zero-mean normalized cross-correlation; zero when either side is flat.
fn zncc(a: &[f64], a_energy: f64, b: &[f64], b_energy: f64) -> f64 {
    let denom = (a_energy * b_energy).sqrt();
    if denom == 0.0 {
        return 0.0;
    }
    a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / denom
}

/// Best-matching displacement per reference patch.
///
/// Candidates range over `[-radius, radius]^2` patch offsets that stay in
/// bounds, visited in raster order. The highest ZNCC wins; scores within
/// `1e-9` tie and go to the smaller L1 displacement, then the earlier
/// candidate.
pub fn find_displacements(reference: &Tensor, nbr: &Tensor, patch: usize, radius: usize) -> Result<PatchAlignment> {
    let (c, h, w) = reference.dims3()?;
    if nbr.shape() != reference.shape() {
        return Err(Error::shape("patch_align", format!("{:?} vs {:?}", reference.shape(), nbr.shape())));
    }
    if patch == 0 || h % patch != 0 || w % patch != 0 {
        return Err(Error::arg("patch_align", format!("{h}x{w} not divisible by patch {patch}")));
    }
    let (gh, gw) = (h / patch, w / patch);
    let r = radius as isize;

    // neighbor patch statistics are shared by every reference patch
    let mut nbr_patches = Vec::with_capacity(gh * gw);
    let mut buf = Vec::new();
    for py in 0..gh {
        for px in 0..gw {
            let e = centered_patch(nbr.data(), c, h, w, py * patch, px * patch, patch, &mut buf);
            nbr_patches.push((buf.clone(), e));
        }
    }

    let mut disp = Tensor::zeros(&[2, gh, gw]);
    let mut ties = 0;
    let mut a = Vec::new();
    for py in 0..gh {
        for px in 0..gw {
            let ae = centered_patch(reference.data(), c, h, w, py * patch, px * patch, patch, &mut a);
            let mut best: Option<(f64, isize, isize, isize)> = None;
            let mut tied = false;
            for dy in -r..=r {
                for dx in -r..=r {
                    let (ny, nx) = (py as isize + dy, px as isize + dx);
                    if ny < 0 || nx < 0 || ny >= gh as isize || nx >= gw as isize {
                        continue;
                    }
                    let (b, be) = &nbr_patches[ny as usize * gw + nx as usize];
                    let score = zncc(&a, ae, b, *be);
                    let l1 = dx.abs() + dy.abs();
                    match best {
                        None => best = Some((score, l1, dx, dy)),
                        Some((bs, bl1, _, _)) => {
                            if score > bs + SCORE_TIE {
                                best = Some((score, l1, dx, dy));
                                tied = false;
                            } else if (score - bs).abs() <= SCORE_TIE {
                                tied = true;
                                if l1 < bl1 {
                                    best = Some((score, l1, dx, dy));
                                }
                            }
                        }
                    }
                }
            }
            let (_, _, dx, dy) = best.expect("zero displacement is always a candidate");
            ties += tied as usize;
            disp.data_mut()[py * gw + px] = dx as f32;
            disp.data_mut()[gh * gw + py * gw + px] = dy as f32;
        }
    }
    Ok(PatchAlignment {
        patch,
        radius,
        displacements: disp,
        ties,
    })
}

/// Aligns `nbr` to `reference` by copying the best-matching neighbor patch
/// into each reference patch position.
pub fn patch_align(reference: &Tensor, nbr: &Tensor, patch: usize, radius: usize) -> Result<(Tensor, PatchAlignment)> {
    let pa = find_displacements(reference, nbr, patch, radius)?;
    let (c, h, w) = nbr.dims3()?;
    let nd = nbr.data();
    let aligned = pa.index_map(c, h, w).into_iter().map(|i| nd[i]).collect();
    Ok((Tensor::new(vec![c, h, w], aligned)?, pa))
}

/// Token layout of a multi-frame sequence.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SequenceLayout {
    /// Position-major, frame-minor: `f0[p0], f1[p0], .., f0[p1], ..`.
    Interleaved,
    /// Frame-major: all of frame 0 in scan order, then frame 1, ...
    FrameMajor,
}

/// Multi-frame tokens `[T * L, C]` in scan order.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenSequence {
    pub data: Tensor,
    pub order: ScanOrder,
    pub frames: usize,
    pub layout: SequenceLayout,
}

/// For stacked frames `[T, C, H, W]`: sequence element `[T * L, C]` ->
/// stacked element.
pub fn sequence_index(frames: usize, channels: usize, order: &ScanOrder, layout: SequenceLayout) -> Vec<usize> {
    let l = order.len();
    let mut idx = vec![0usize; frames * l * channels];
    for (j, &site) in order.perm.iter().enumerate() {
        for t in 0..frames {
            let row = match layout {
                SequenceLayout::Interleaved => j * frames + t,
                SequenceLayout::FrameMajor => t * l + j,
            };
            for ch in 0..channels {
                idx[row * channels + ch] = (t * channels + ch) * l + site;
            }
        }
    }
    idx
}

/// Inverse of a bijective index map.
pub fn invert_index(idx: &[usize]) -> Vec<usize> {
    let mut inv = vec![0usize; idx.len()];
    for (out, &src) in idx.iter().enumerate() {
        inv[src] = out;
    }
    inv
}

fn check_frames(frames: &[Tensor], order: &ScanOrder) -> Result<(usize, usize, usize)> {
    let first = frames.first().ok_or_else(|| Error::arg("interleave", "no frames"))?;
    let (c, h, w) = first.dims3()?;
    if (h, w) != order.target_grid {
        return Err(Error::shape(
            "interleave",
            format!("frames are {h}x{w}, order grid is {:?}", order.target_grid),
        ));
    }
    Ok((c, h, w))
}

/// Flattens frames into one sequence with the given layout.
pub fn sequentialize(frames: &[Tensor], order: &ScanOrder, layout: SequenceLayout) -> Result<TokenSequence> {
    let (c, _, _) = check_frames(frames, order)?;
    let stacked = Tensor::stack(frames)?;
    let sd = stacked.data();
    let data = sequence_index(frames.len(), c, order, layout)
        .into_iter()
        .map(|i| sd[i])
        .collect();
    Ok(TokenSequence {
        data: Tensor::new(vec![frames.len() * order.len(), c], data)?,
        order: order.clone(),
        frames: frames.len(),
        layout,
    })
}

/// Position-major, frame-minor interleave.
pub fn interleave(frames: &[Tensor], order: &ScanOrder) -> Result<TokenSequence> {
    sequentialize(frames, order, SequenceLayout::Interleaved)
}

/// Exact inverse of [`sequentialize`].
pub fn desequentialize(seq: &TokenSequence) -> Result<Vec<Tensor>> {
    let (n, c) = match seq.data.shape() {
        [n, c] => (*n, *c),
        s => return Err(Error::shape("desequentialize", format!("expected [T*L, C], got {s:?}"))),
    };
    if seq.frames == 0 || n % seq.frames != 0 || n / seq.frames != seq.order.len() {
        return Err(Error::arg(
            "desequentialize",
            format!("{n} tokens for {} frames of {} sites", seq.frames, seq.order.len()),
        ));
    }
    let (h, w) = seq.order.target_grid;
    let inv = invert_index(&sequence_index(seq.frames, c, &seq.order, seq.layout));
    let sd = seq.data.data();
    let data = inv.into_iter().map(|i| sd[i]).collect();
    Tensor::new(vec![seq.frames, c, h, w], data)?.unstack()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scan_compass::raster_order;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn interleave_two_frames() {
        let f0 = Tensor::new(vec![1, 1, 2], vec![10.0, 11.0]).unwrap();
        let f1 = Tensor::new(vec![1, 1, 2], vec![20.0, 21.0]).unwrap();
        let order = ScanOrder::from_perm(vec![1, 0], (1, 2), (1, 2)).unwrap();
        let seq = interleave(&[f0.clone(), f1.clone()], &order).unwrap();
        assert_eq!(seq.data.data(), &[11.0, 21.0, 10.0, 20.0]);
        let back = desequentialize(&seq).unwrap();
        assert_eq!(back, vec![f0, f1]);
    }

    #[test]
    fn single_frame_raster_is_transpose() {
        let f = Tensor::from_fn(&[2, 2, 3], |i| i as f32);
        let seq = interleave(&[f.clone()], &raster_order(2, 3).unwrap()).unwrap();
        assert_eq!(seq.data.shape(), &[6, 2]);
        assert_eq!(&seq.data.data()[..4], &[0.0, 6.0, 1.0, 7.0]);
        assert_eq!(desequentialize(&seq).unwrap()[0], f);
    }

    #[test]
    fn frame_major_layout() {
        let f0 = Tensor::new(vec![1, 1, 2], vec![1.0, 2.0]).unwrap();
        let f1 = Tensor::new(vec![1, 1, 2], vec![3.0, 4.0]).unwrap();
        let order = ScanOrder::from_perm(vec![1, 0], (1, 2), (1, 2)).unwrap();
        let seq = sequentialize(&[f0, f1], &order, SequenceLayout::FrameMajor).unwrap();
        assert_eq!(seq.data.data(), &[2.0, 1.0, 4.0, 3.0]);
    }

    #[test]
    fn grid_mismatch_and_bad_length() {
        let f = Tensor::zeros(&[1, 2, 2]);
        assert!(interleave(&[f.clone()], &raster_order(2, 3).unwrap()).is_err());
        assert!(interleave(&[], &raster_order(2, 2).unwrap()).is_err());
        let mut seq = interleave(&[f], &raster_order(2, 2).unwrap()).unwrap();
        seq.frames = 3;
        assert!(desequentialize(&seq).is_err());
    }

    #[test]
    fn align_identical_and_constant() {
        let x = Tensor::from_fn(&[2, 8, 8], |i| ((i * 37) % 11) as f32);
        let (a, pa) = patch_align(&x, &x, 2, 1).unwrap();
        assert_eq!(a, x);
        assert!(pa.displacements.data().iter().all(|&d| d == 0.0));
        let flat = Tensor::full(&[2, 8, 8], 0.3);
        let (a, pa) = patch_align(&x, &flat, 2, 2).unwrap();
        assert_eq!(a, flat);
        assert!(pa.displacements.data().iter().all(|&d| d == 0.0));
        assert_eq!(pa.tie_rate(), 1.0);
    }

    #[test]
    fn align_one_patch_right() {
        let p = 2;
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let reference = Tensor::from_fn(&[1, 6, 8], |_| rng.gen::<f32>());
        // nbr content moved right by one patch: nbr(x) = ref(x - p)
        let nbr = Tensor::from_fn(&[1, 6, 8], |i| {
            let (y, x) = (i / 8, i % 8);
            if x >= p {
                reference.data()[y * 8 + x - p]
            } else {
                0.5
            }
        });
        let (aligned, pa) = patch_align(&reference, &nbr, p, 1).unwrap();
        for py in 0..3 {
            for px in 0..3 {
                assert_eq!(pa.displacement(py, px), (1, 0), "patch ({py},{px})");
            }
        }
        for y in 0..6 {
            for x in 0..6 {
                assert_eq!(aligned.data()[y * 8 + x], reference.data()[y * 8 + x]);
            }
        }
    }

    #[test]
    fn align_rejects_indivisible() {
        let x = Tensor::zeros(&[1, 6, 8]);
        assert!(patch_align(&x, &x, 4, 1).is_err());
        assert!(patch_align(&x, &Tensor::zeros(&[1, 8, 6]), 2, 1).is_err());
    }

    #[test]
    fn summary_csv_format() {
        let pa = PatchAlignment::identity(2, 4, 4);
        assert_eq!(pa.summary_csv(), "mean_abs_displacement,tie_rate\n0.000000,0.000000\n");
    }
}
