//! Intensity-guided densification of sparse depth.
//!
//! Each unknown pixel is constrained to equal the affinity-weighted average
//! of its 8-connected neighbors, with affinities that fall off with guide
//! intensity difference. Measured pixels are held fixed, so the unknowns
//! solve a sparse linear system `(I − W_uu) x = W_uk d_k`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::image::{DepthMap, GrayImage, RgbImage, SparseDepthImage};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Solver {
    /// Multicolor Gauss-Seidel sweeps.
    #[default]
    GaussSeidel,
    /// Conjugate gradients on the normal equations.
    ConjugateGradient,
}

impl Solver {
    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gauss-seidel" | "gs" => Some(Self::GaussSeidel),
            "cg" | "conjugate-gradient" => Some(Self::ConjugateGradient),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DensifyConfig {
    pub sigma_min: f64,
    pub max_iterations: usize,
    /// Stop once `‖b − A x‖ / ‖b‖` falls below this.
    pub tolerance: f64,
    pub solver: Solver,
}

impl Default for DensifyConfig {
    fn default() -> Self {
        Self { sigma_min: 1e-4, max_iterations: 5000, tolerance: 1e-6, solver: Solver::GaussSeidel }
    }
}

impl DensifyConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance > 0.0) || self.max_iterations == 0 || !(self.sigma_min > 0.0) {
            return Err(Error::InvalidArgument(format!("invalid densify config {self:?}")));
        }
        Ok(())
    }
}

/// Normalized affinities from every pixel to its 8-connected neighbors.
#[derive(Clone, Debug, PartialEq)]
pub struct NeighborWeights {
    pub width: usize,
    pub height: usize,
    offsets: Vec<usize>,
    neighbors: Vec<(u32, f64)>,
}

impl NeighborWeights {
    /// `(neighbor index, weight)` pairs of pixel `p` (row-major index).
    pub fn of(&self, p: usize) -> &[(u32, f64)] {
        &self.neighbors[self.offsets[p]..self.offsets[p + 1]]
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

const NEIGHBORHOOD: [(isize, isize); 8] = [(-1, -1), (0, -1), (1, -1), (-1, 0), (1, 0), (-1, 1), (0, 1), (1, 1)];

/// `w_pq ∝ exp(−(I_p − I_q)² / 2σ_p²)` with `σ_p` the intensity standard
/// deviation over the 3×3 window around `p`, floored at `sigma_min`.
pub fn build_weights(guide: &GrayImage, cfg: &DensifyConfig) -> NeighborWeights {
    let (w, h) = (guide.width, guide.height);
    let mut offsets = Vec::with_capacity(w * h + 1);
    let mut neighbors = Vec::with_capacity(w * h * 8);
    let mut scratch: Vec<(u32, f64)> = Vec::with_capacity(8);
    offsets.push(0);
    for y in 0..h {
        for x in 0..w {
            let ip = guide.get(x, y);
            scratch.clear();
            let (mut sum, mut sum_sq, mut count) = (ip, ip * ip, 1.0);
            for (dx, dy) in NEIGHBORHOOD {
                let (nx, ny) = (x as isize + dx, y as isize + dy);
                if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                    continue;
                }
                let (nx, ny) = (nx as usize, ny as usize);
                let iq = guide.get(nx, ny);
                sum += iq;
                sum_sq += iq * iq;
                count += 1.0;
                scratch.push(((ny * w + nx) as u32, (ip - iq) * (ip - iq)));
            }
            let mean = sum / count;
            let var = (sum_sq / count - mean * mean).max(0.0);
            let sigma = libm::sqrt(var).max(cfg.sigma_min);
            let denom = 2.0 * sigma * sigma;
            // Shift by the smallest exponent so at least one weight is 1.
            let shift = scratch.iter().map(|&(_, d2)| d2).fold(f64::INFINITY, f64::min);
            let mut total = 0.0;
            for item in &mut scratch {
                item.1 = libm::exp(-(item.1 - shift) / denom);
                total += item.1;
            }
            for &(q, wq) in &scratch {
                neighbors.push((q, wq / total));
            }
            offsets.push(neighbors.len());
        }
    }
    NeighborWeights { width: w, height: h, offsets, neighbors }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Densified {
    pub depth: DepthMap,
    pub converged: bool,
    pub iterations: usize,
    pub relative_residual: f64,
}

struct System<'a> {
    weights: &'a NeighborWeights,
    known: Vec<bool>,
    /// Row-major pixel of each unknown.
    unknowns: Vec<usize>,
    /// Index into `unknowns` per pixel, `usize::MAX` for known pixels.
    slot: Vec<usize>,
    rhs: Vec<f64>,
}

impl System<'_> {
    /// `A x` with `A = I − W_uu`.
    fn apply(&self, x: &[f64], out: &mut [f64]) {
        for (i, &p) in self.unknowns.iter().enumerate() {
            let mut acc = x[i];
            for &(q, wq) in self.weights.of(p) {
                let s = self.slot[q as usize];
                if s != usize::MAX {
                    acc -= wq * x[s];
                }
            }
            out[i] = acc;
        }
    }

    fn apply_transpose(&self, y: &[f64], out: &mut [f64]) {
        out.copy_from_slice(y);
        for (i, &p) in self.unknowns.iter().enumerate() {
            for &(q, wq) in self.weights.of(p) {
                let s = self.slot[q as usize];
                if s != usize::MAX {
                    out[s] -= wq * y[i];
                }
            }
        }
    }

    fn relative_residual(&self, x: &[f64], scratch: &mut [f64]) -> f64 {
        self.apply(x, scratch);
        let r: f64 = scratch.iter().zip(&self.rhs).map(|(ax, b)| (b - ax) * (b - ax)).sum();
        libm::sqrt(r) / norm(&self.rhs).max(f64::MIN_POSITIVE)
    }
}

fn norm(v: &[f64]) -> f64 {
    libm::sqrt(v.iter().map(|x| x * x).sum())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Fills the zero pixels of `sparse` guided by `guide`.
pub fn densify(sparse: &SparseDepthImage, guide: &RgbImage, cfg: &DensifyConfig) -> Result<Densified> {
    densify_gray(sparse, &guide.to_gray(), cfg)
}

/// [`densify`] with an already grayscale guide.
pub fn densify_gray(sparse: &SparseDepthImage, guide: &GrayImage, cfg: &DensifyConfig) -> Result<Densified> {
    cfg.validate()?;
    if sparse.width != guide.width || sparse.height != guide.height {
        return Err(Error::InvalidArgument(format!(
            "guide {}x{} does not match depth {}x{}",
            guide.width, guide.height, sparse.width, sparse.height
        )));
    }
    let n = sparse.width * sparse.height;
    let known: Vec<bool> = sparse.data.iter().map(|&d| d != 0.0).collect();
    let known_count = known.iter().filter(|&&k| k).count();
    if known_count == 0 {
        return Err(Error::NoMeasurements);
    }
    let weights = build_weights(guide, cfg);
    let mut slot = vec![usize::MAX; n];
    let mut unknowns = Vec::with_capacity(n - known_count);
    for p in 0..n {
        if !known[p] {
            slot[p] = unknowns.len();
            unknowns.push(p);
        }
    }
    let rhs: Vec<f64> = unknowns
        .iter()
        .map(|&p| weights.of(p).iter().filter(|(q, _)| known[*q as usize]).map(|&(q, wq)| wq * sparse.data[q as usize]).sum())
        .collect();
    let system = System { weights: &weights, known, unknowns, slot, rhs };
    let mean_known = sparse.data.iter().filter(|&&d| d != 0.0).sum::<f64>() / known_count as f64;
    let mut x = vec![mean_known; system.unknowns.len()];
    let (iterations, residual) = if system.unknowns.is_empty() {
        (0, 0.0)
    } else {
        match cfg.solver {
            Solver::GaussSeidel => gauss_seidel(&system, sparse, &mut x, cfg),
            Solver::ConjugateGradient => cgnr(&system, &mut x, cfg),
        }
    };
    let mut depth = sparse.clone();
    for (i, &p) in system.unknowns.iter().enumerate() {
        depth.data[p] = x[i];
    }
    Ok(Densified { depth, converged: residual <= cfg.tolerance, iterations, relative_residual: residual })
}

fn gauss_seidel(sys: &System<'_>, sparse: &SparseDepthImage, x: &mut [f64], cfg: &DensifyConfig) -> (usize, f64) {
    let w = sys.weights.width;
    // Four colors by pixel parity: no two 8-connected neighbors share one,
    // so the sweep result does not depend on the order within a color.
    let mut order: Vec<usize> = (0..sys.unknowns.len()).collect();
    order.sort_by_key(|&i| {
        let p = sys.unknowns[i];
        ((p / w) % 2) * 2 + (p % w) % 2
    });
    let mut scratch = vec![0.0; x.len()];
    let mut residual = sys.relative_residual(x, &mut scratch);
    let mut it = 0;
    while residual > cfg.tolerance && it < cfg.max_iterations {
        for &i in &order {
            let p = sys.unknowns[i];
            let mut acc = 0.0;
            for &(q, wq) in sys.weights.of(p) {
                let q = q as usize;
                acc += wq * if sys.known[q] { sparse.data[q] } else { x[sys.slot[q]] };
            }
            x[i] = acc;
        }
        it += 1;
        residual = sys.relative_residual(x, &mut scratch);
    }
    (it, residual)
}

fn cgnr(sys: &System<'_>, x: &mut [f64], cfg: &DensifyConfig) -> (usize, f64) {
    let m = x.len();
    let b_norm = norm(&sys.rhs).max(f64::MIN_POSITIVE);
    let mut ax = vec![0.0; m];
    sys.apply(x, &mut ax);
    let mut r: Vec<f64> = sys.rhs.iter().zip(&ax).map(|(b, a)| b - a).collect();
    let mut z = vec![0.0; m];
    sys.apply_transpose(&r, &mut z);
    let mut p = z.clone();
    let mut zz = dot(&z, &z);
    let mut wvec = vec![0.0; m];
    let mut residual = norm(&r) / b_norm;
    let mut it = 0;
    while residual > cfg.tolerance && it < cfg.max_iterations && zz > 0.0 {
        sys.apply(&p, &mut wvec);
        let ww = dot(&wvec, &wvec);
        if ww == 0.0 {
            break;
        }
        let alpha = zz / ww;
        for i in 0..m {
            x[i] += alpha * p[i];
            r[i] -= alpha * wvec[i];
        }
        it += 1;
        residual = norm(&r) / b_norm;
        sys.apply_transpose(&r, &mut z);
        let zz_new = dot(&z, &z);
        let beta = zz_new / zz;
        zz = zz_new;
        for i in 0..m {
            p[i] = z[i] + beta * p[i];
        }
    }
    // Report the true residual rather than the recursively updated one.
    (it, sys.relative_residual(x, &mut wvec))
}
