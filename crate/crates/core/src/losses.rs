//! Training losses on normalized reciprocal-depth maps.
//!
//! The total loss is `w_ssim·L_ssim + w_edge·L_edge + w_pixel·L_pixel`.
//! Every term has a closed-form gradient that is attached to the tape as a
//! single scalar node, see [`Tape::scalar_fn`].

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::real::Real;
use crate::tape::{Tape, Var};
use crate::tensor::{Shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum PixelLossKind {
    #[default]
    L1,
    L2,
    Berhu,
}

impl PixelLossKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::L1 => "l1",
            Self::L2 => "l2",
            Self::Berhu => "berhu",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "l1" => Some(Self::L1),
            "l2" => Some(Self::L2),
            "berhu" => Some(Self::Berhu),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub ssim: f64,
    pub edge: f64,
    pub pixel: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { ssim: 1.0, edge: 1.0, pixel: 1.0 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let w = [self.ssim, self.edge, self.pixel];
        if w.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) || w.iter().all(|&x| x == 0.0) {
            return Err(Error::InvalidArgument(format!(
                "loss weights must be non-negative with at least one positive, got {w:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SsimParams {
    pub window: usize,
    pub c1: f64,
    pub c2: f64,
}

impl Default for SsimParams {
    /// 7×7 uniform window, constants for unit dynamic range.
    fn default() -> Self {
        Self { window: 7, c1: 0.01 * 0.01, c2: 0.03 * 0.03 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct LossConfig {
    pub weights: LossWeights,
    pub kind: PixelLossKind,
    pub ssim: SsimParams,
}

/// Fraction of the largest absolute residual used as the Berhu threshold.
pub const BERHU_THRESHOLD_FRACTION: f64 = 0.2;
const BERHU_MIN_THRESHOLD: f64 = 1e-6;

fn check_pair<T: Real>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Result<(usize, usize, usize)> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch { op, left: a.shape(), right: b.shape() });
    }
    let (n, c, h, w) = a.shape().as_nchw(op)?;
    Ok((n * c, h, w))
}

/// Mean of every valid `k × k` window, `(h-k+1) × (w-k+1)` values per plane.
fn box_mean_valid<T: Real>(x: &[T], h: usize, w: usize, k: usize) -> Vec<T> {
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut rows = vec![T::ZERO; h * ow];
    for y in 0..h {
        let src = &x[y * w..(y + 1) * w];
        for x0 in 0..ow {
            rows[y * ow + x0] = src[x0..x0 + k].iter().copied().sum();
        }
    }
    let inv = T::from_f64(1.0 / (k * k) as f64);
    let mut out = vec![T::ZERO; oh * ow];
    for y0 in 0..oh {
        for x0 in 0..ow {
            let mut s = T::ZERO;
            for dy in 0..k {
                s += rows[(y0 + dy) * ow + x0];
            }
            out[y0 * ow + x0] = s * inv;
        }
    }
    out
}

/// Adjoint of the window sum: every pixel collects the values of the
/// windows that contain it.
fn box_spread<T: Real>(g: &[T], h: usize, w: usize, k: usize) -> Vec<T> {
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut cols = vec![T::ZERO; h * ow];
    for y in 0..h {
        let lo = (y + 1).saturating_sub(k);
        let hi = y.min(oh - 1);
        for x0 in 0..ow {
            let mut s = T::ZERO;
            for y0 in lo..=hi {
                s += g[y0 * ow + x0];
            }
            cols[y * ow + x0] = s;
        }
    }
    let mut out = vec![T::ZERO; h * w];
    for y in 0..h {
        for x in 0..w {
            let lo = (x + 1).saturating_sub(k);
            let hi = x.min(ow - 1);
            let mut s = T::ZERO;
            for x0 in lo..=hi {
                s += cols[y * ow + x0];
            }
            out[y * w + x] = s;
        }
    }
    out
}

fn ssim_impl<T: Real>(a: &Tensor<T>, b: &Tensor<T>, p: &SsimParams, want_grad: bool) -> Result<(T, Option<[Tensor<T>; 2]>)> {
    let (planes, h, w) = check_pair("ssim", a, b)?;
    let k = p.window;
    if k == 0 || k % 2 == 0 {
        return Err(Error::InvalidArgument(format!("ssim window must be odd, got {k}")));
    }
    if k > h || k > w {
        return Err(Error::InvalidShape {
            op: "ssim",
            reason: format!("window {k} larger than {h}x{w} image"),
        });
    }
    let (c1, c2) = (T::from_f64(p.c1), T::from_f64(p.c2));
    let two = T::from_f64(2.0);
    let windows = (h - k + 1) * (w - k + 1);
    let inv_total = T::from_f64(1.0 / (planes * windows) as f64);
    let inv_area = T::from_f64(1.0 / (k * k) as f64);
    let mut total = T::ZERO;
    let mut ga = want_grad.then(|| vec![T::ZERO; a.len()]);
    let mut gb = want_grad.then(|| vec![T::ZERO; b.len()]);
    let plane = h * w;
    for pi in 0..planes {
        let xa = &a.data()[pi * plane..(pi + 1) * plane];
        let xb = &b.data()[pi * plane..(pi + 1) * plane];
        let sq_a: Vec<T> = xa.iter().map(|&v| v * v).collect();
        let sq_b: Vec<T> = xb.iter().map(|&v| v * v).collect();
        let ab: Vec<T> = xa.iter().zip(xb).map(|(&u, &v)| u * v).collect();
        let mu_a = box_mean_valid(xa, h, w, k);
        let mu_b = box_mean_valid(xb, h, w, k);
        let e_aa = box_mean_valid(&sq_a, h, w, k);
        let e_bb = box_mean_valid(&sq_b, h, w, k);
        let e_ab = box_mean_valid(&ab, h, w, k);
        // Per-window partials with respect to (mu_a, mu_b, E[a²], E[b²], E[ab]).
        let mut d_mu_a = vec![T::ZERO; windows];
        let mut d_mu_b = vec![T::ZERO; windows];
        let mut d_var_a = vec![T::ZERO; windows];
        let mut d_var_b = vec![T::ZERO; windows];
        let mut d_cov = vec![T::ZERO; windows];
        for i in 0..windows {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = e_aa[i] - ma * ma;
            let vb = e_bb[i] - mb * mb;
            let cov = e_ab[i] - ma * mb;
            let n1 = two * ma * mb + c1;
            let n2 = two * cov + c2;
            let d1 = ma * ma + mb * mb + c1;
            let d2 = va + vb + c2;
            let s = (n1 * n2) / (d1 * d2);
            total += s;
            if want_grad {
                let p_var = -s / d2;
                let p_cov = two * n1 / (d1 * d2);
                d_mu_a[i] = two * mb * n2 / (d1 * d2) - two * ma * s / d1 - two * ma * p_var - mb * p_cov;
                d_mu_b[i] = two * ma * n2 / (d1 * d2) - two * mb * s / d1 - two * mb * p_var - ma * p_cov;
                d_var_a[i] = p_var;
                d_var_b[i] = p_var;
                d_cov[i] = p_cov;
            }
        }
        if let (Some(ga), Some(gb)) = (ga.as_mut(), gb.as_mut()) {
            let s_mu_a = box_spread(&d_mu_a, h, w, k);
            let s_mu_b = box_spread(&d_mu_b, h, w, k);
            let s_va = box_spread(&d_var_a, h, w, k);
            let s_vb = box_spread(&d_var_b, h, w, k);
            let s_cov = box_spread(&d_cov, h, w, k);
            let scale = inv_total * inv_area;
            for j in 0..plane {
                ga[pi * plane + j] = scale * (s_mu_a[j] + two * xa[j] * s_va[j] + xb[j] * s_cov[j]);
                gb[pi * plane + j] = scale * (s_mu_b[j] + two * xb[j] * s_vb[j] + xa[j] * s_cov[j]);
            }
        }
    }
    let grads = match (ga, gb) {
        (Some(ga), Some(gb)) => Some([Tensor::from_vec(a.shape(), ga)?, Tensor::from_vec(b.shape(), gb)?]),
        _ => None,
    };
    Ok((total * inv_total, grads))
}

/// Mean SSIM index over all valid windows of every plane.
pub fn ssim<T: Real>(a: &Tensor<T>, b: &Tensor<T>, params: &SsimParams) -> Result<T> {
    Ok(ssim_impl(a, b, params, false)?.0)
}

/// SSIM value and its gradients with respect to `a` and `b`.
pub fn ssim_with_grad<T: Real>(a: &Tensor<T>, b: &Tensor<T>, params: &SsimParams) -> Result<(T, Tensor<T>, Tensor<T>)> {
    let (v, g) = ssim_impl(a, b, params, true)?;
    let [ga, gb] = g.expect("gradients requested");
    Ok((v, ga, gb))
}

fn loss_ssim_impl<T: Real>(pred: &Tensor<T>, gt: &Tensor<T>, p: &SsimParams, want_grad: bool) -> Result<(T, Option<[Tensor<T>; 2]>)> {
    let (s, grads) = ssim_impl(pred, gt, p, want_grad)?;
    let half = T::from_f64(0.5);
    let raw = (T::ONE - s) * half;
    let value = raw.max(T::ZERO).min(T::ONE);
    let interior = raw > T::ZERO && raw < T::ONE;
    let grads = grads.map(|[ga, gb]| {
        let f = if interior { -half } else { T::ZERO };
        [ga.map(|g| g * f), gb.map(|g| g * f)]
    });
    Ok((value, grads))
}

/// `clamp((1 - ssim) / 2, 0, 1)`.
pub fn loss_ssim<T: Real>(pred: &Tensor<T>, gt: &Tensor<T>, params: &SsimParams) -> Result<T> {
    Ok(loss_ssim_impl(pred, gt, params, false)?.0)
}

fn loss_edge_impl<T: Real>(pred: &Tensor<T>, gt: &Tensor<T>, want_grad: bool) -> Result<(T, Option<[Tensor<T>; 2]>)> {
    let (planes, h, w) = check_pair("loss_edge", pred, gt)?;
    if h < 2 || w < 2 {
        return Err(Error::InvalidShape { op: "loss_edge", reason: format!("needs at least 2x2, got {h}x{w}") });
    }
    let inv_x = T::from_f64(1.0 / (planes * h * (w - 1)) as f64);
    let inv_y = T::from_f64(1.0 / (planes * (h - 1) * w) as f64);
    let (p, g) = (pred.data(), gt.data());
    let mut sum_x = T::ZERO;
    let mut sum_y = T::ZERO;
    let mut grad = want_grad.then(|| vec![T::ZERO; pred.len()]);
    for pi in 0..planes {
        let base = pi * h * w;
        for y in 0..h {
            for x in 0..w {
                let i = base + y * w + x;
                if x + 1 < w {
                    let d = (p[i + 1] - p[i]) - (g[i + 1] - g[i]);
                    sum_x += d.abs();
                    if let Some(gr) = grad.as_mut() {
                        let s = d.signum0() * inv_x;
                        gr[i + 1] += s;
                        gr[i] -= s;
                    }
                }
                if y + 1 < h {
                    let d = (p[i + w] - p[i]) - (g[i + w] - g[i]);
                    sum_y += d.abs();
                    if let Some(gr) = grad.as_mut() {
                        let s = d.signum0() * inv_y;
                        gr[i + w] += s;
                        gr[i] -= s;
                    }
                }
            }
        }
    }
    let grads = match grad {
        Some(gp) => {
            let gp = Tensor::from_vec(pred.shape(), gp)?;
            let gg = gp.map(|v| -v);
            Some([gp, gg])
        }
        None => None,
    };
    Ok((sum_x * inv_x + sum_y * inv_y, grads))
}

/// Image-gradient loss with forward differences:
/// `mean|Δx pred − Δx gt| + mean|Δy pred − Δy gt|`, each mean taken over the
/// `H×(W−1)` horizontal and `(H−1)×W` vertical differences respectively.
pub fn loss_edge<T: Real>(pred: &Tensor<T>, gt: &Tensor<T>) -> Result<T> {
    Ok(loss_edge_impl(pred, gt, false)?.0)
}

fn berhu_scalar<T: Real>(x: T, c: T) -> T {
    let ax = x.abs();
    if ax <= c { ax } else { (x * x + c * c) / (T::from_f64(2.0) * c) }
}

/// Elementwise reverse Huber: `|x|` for `|x| ≤ c`, `(x² + c²) / 2c` beyond.
pub fn berhu<T: Real>(residual: &Tensor<T>, c: f64) -> Result<Tensor<T>> {
    if !(c > 0.0) {
        return Err(Error::InvalidArgument(format!("berhu threshold must be positive, got {c}")));
    }
    let c = T::from_f64(c);
    Ok(residual.map(|x| berhu_scalar(x, c)))
}

fn loss_pixel_impl<T: Real>(pred: &Tensor<T>, gt: &Tensor<T>, kind: PixelLossKind, want_grad: bool) -> Result<(T, Option<[Tensor<T>; 2]>)> {
    if pred.shape() != gt.shape() {
        return Err(Error::ShapeMismatch { op: "loss_pixel", left: pred.shape(), right: gt.shape() });
    }
    let n = pred.len();
    let inv_n = T::from_f64(1.0 / n as f64);
    let r: Vec<T> = pred.data().iter().zip(gt.data()).map(|(&p, &g)| p - g).collect();
    let (value, grad): (T, Option<Vec<T>>) = match kind {
        PixelLossKind::L1 => (
            r.iter().map(|x| x.abs()).sum::<T>() * inv_n,
            want_grad.then(|| r.iter().map(|x| x.signum0() * inv_n).collect()),
        ),
        PixelLossKind::L2 => (
            r.iter().map(|&x| x * x).sum::<T>() * inv_n,
            want_grad.then(|| r.iter().map(|&x| T::from_f64(2.0) * x * inv_n).collect()),
        ),
        PixelLossKind::Berhu => {
            let (mut arg, mut max_abs) = (0, T::ZERO);
            for (i, x) in r.iter().enumerate() {
                if x.abs() > max_abs {
                    max_abs = x.abs();
                    arg = i;
                }
            }
            let frac = T::from_f64(BERHU_THRESHOLD_FRACTION);
            let floor = T::from_f64(BERHU_MIN_THRESHOLD);
            let c = (frac * max_abs).max(floor);
            let value = r.iter().map(|&x| berhu_scalar(x, c)).sum::<T>() * inv_n;
            let grad = want_grad.then(|| {
                let two = T::from_f64(2.0);
                let mut d_c = T::ZERO;
                let mut g: Vec<T> = r
                    .iter()
                    .map(|&x| {
                        if x.abs() <= c {
                            x.signum0() * inv_n
                        } else {
                            d_c += (c * c - x * x) / (two * c * c);
                            x / c * inv_n
                        }
                    })
                    .collect();
                // The threshold follows the largest residual unless floored.
                if frac * max_abs > floor {
                    g[arg] += d_c * inv_n * frac * r[arg].signum0();
                }
                g
            });
            (value, grad)
        }
    };
    let grads = match grad {
        Some(gp) => {
            let gp = Tensor::from_vec(pred.shape(), gp)?;
            let gg = gp.map(|v| -v);
            Some([gp, gg])
        }
        None => None,
    };
    Ok((value, grads))
}

/// Mean pixel loss. Berhu uses `c = 0.2 · max|pred − gt|` over the batch.
pub fn loss_pixel<T: Real>(pred: &Tensor<T>, gt: &Tensor<T>, kind: PixelLossKind) -> Result<T> {
    Ok(loss_pixel_impl(pred, gt, kind, false)?.0)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossTerms<T> {
    pub ssim: T,
    pub edge: T,
    pub pixel: T,
    pub total: T,
}

/// Value of each term and of the weighted total.
pub fn loss_terms<T: Real>(pred: &Tensor<T>, gt: &Tensor<T>, cfg: &LossConfig) -> Result<LossTerms<T>> {
    cfg.weights.validate()?;
    let ssim = loss_ssim(pred, gt, &cfg.ssim)?;
    let edge = loss_edge(pred, gt)?;
    let pixel = loss_pixel(pred, gt, cfg.kind)?;
    let w = &cfg.weights;
    let total = T::from_f64(w.ssim) * ssim + T::from_f64(w.edge) * edge + T::from_f64(w.pixel) * pixel;
    Ok(LossTerms { ssim, edge, pixel, total })
}

pub fn loss_total<T: Real>(pred: &Tensor<T>, gt: &Tensor<T>, cfg: &LossConfig) -> Result<T> {
    Ok(loss_terms(pred, gt, cfg)?.total)
}

fn record<T: Real>(tape: &mut Tape<T>, pred: Var, gt: Var, out: (T, Option<[Tensor<T>; 2]>)) -> Result<Var> {
    let (value, grads) = out;
    let partials = match grads {
        Some([gp, gg]) => vec![(pred, gp), (gt, gg)],
        None => Vec::new(),
    };
    tape.scalar_fn(value, partials)
}

fn wants_grad<T: Real>(tape: &Tape<T>, pred: Var, gt: Var) -> bool {
    tape.requires_grad(pred) || tape.requires_grad(gt)
}

pub fn tape_loss_ssim<T: Real>(tape: &mut Tape<T>, pred: Var, gt: Var, params: &SsimParams) -> Result<Var> {
    let out = loss_ssim_impl(tape.value(pred), tape.value(gt), params, wants_grad(tape, pred, gt))?;
    record(tape, pred, gt, out)
}

pub fn tape_loss_edge<T: Real>(tape: &mut Tape<T>, pred: Var, gt: Var) -> Result<Var> {
    let out = loss_edge_impl(tape.value(pred), tape.value(gt), wants_grad(tape, pred, gt))?;
    record(tape, pred, gt, out)
}

pub fn tape_loss_pixel<T: Real>(tape: &mut Tape<T>, pred: Var, gt: Var, kind: PixelLossKind) -> Result<Var> {
    let out = loss_pixel_impl(tape.value(pred), tape.value(gt), kind, wants_grad(tape, pred, gt))?;
    record(tape, pred, gt, out)
}

/// Weighted composite loss recorded on the tape. Zero-weight terms are
/// skipped.
pub fn tape_loss_total<T: Real>(tape: &mut Tape<T>, pred: Var, gt: Var, cfg: &LossConfig) -> Result<Var> {
    cfg.weights.validate()?;
    let mut terms = Vec::with_capacity(3);
    if cfg.weights.ssim > 0.0 {
        terms.push((tape_loss_ssim(tape, pred, gt, &cfg.ssim)?, T::from_f64(cfg.weights.ssim)));
    }
    if cfg.weights.edge > 0.0 {
        terms.push((tape_loss_edge(tape, pred, gt)?, T::from_f64(cfg.weights.edge)));
    }
    if cfg.weights.pixel > 0.0 {
        terms.push((tape_loss_pixel(tape, pred, gt, cfg.kind)?, T::from_f64(cfg.weights.pixel)));
    }
    tape.combine(&terms)
}

/// Maps metric depth to the network's target `t = (h/d) / (h/d_min) = d_min/d`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReciprocalCodec {
    pub h: f64,
    pub d_min: f64,
    pub d_max: f64,
}

impl Default for ReciprocalCodec {
    fn default() -> Self {
        Self { h: 10.0, d_min: 0.5, d_max: 80.0 }
    }
}

impl ReciprocalCodec {
    pub fn new(h: f64, d_min: f64, d_max: f64) -> Result<Self> {
        if !(h > 0.0 && d_min > 0.0 && d_max > d_min) {
            return Err(Error::InvalidArgument(format!(
                "reciprocal codec needs h > 0 and 0 < d_min < d_max, got h={h} d_min={d_min} d_max={d_max}"
            )));
        }
        Ok(Self { h, d_min, d_max })
    }

    pub fn clamp_depth(&self, d: f64) -> f64 {
        d.clamp(self.d_min, self.d_max)
    }

    /// Depth (clamped to `[d_min, d_max]`) to a target in `(0, 1]`.
    pub fn encode(&self, depth: f64) -> f64 {
        // (h / d) / (h / d_min); h cancels.
        self.d_min / self.clamp_depth(depth)
    }

    /// Inverse of [`encode`](Self::encode); `t ≤ 0` decodes to `d_max`.
    pub fn decode(&self, t: f64) -> f64 {
        if !(t > 0.0) {
            return self.d_max;
        }
        self.clamp_depth(self.d_min / t)
    }

    /// Encodes a sparse raster, keeping `0` for missing measurements.
    pub fn encode_sparse(&self, depth: f64) -> f64 {
        if depth > 0.0 { self.encode(depth) } else { 0.0 }
    }
}

/// Builds an `[n, 1, h, w]` tensor from per-sample planes.
pub fn planes_to_tensor<T: Real>(planes: &[&[f64]], h: usize, w: usize) -> Result<Tensor<T>> {
    let mut data = Vec::with_capacity(planes.len() * h * w);
    for p in planes {
        if p.len() != h * w {
            return Err(Error::InvalidArgument(format!("plane of {} values for {h}x{w}", p.len())));
        }
        data.extend(p.iter().map(|&v| T::from_f64(v)));
    }
    Tensor::from_vec(Shape::nchw(planes.len(), 1, h, w), data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn map(h: usize, w: usize, data: Vec<f64>) -> Tensor<f64> {
        Tensor::from_vec(Shape::nchw(1, 1, h, w), data).unwrap()
    }

    fn random(h: usize, w: usize, seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        map(h, w, (0..h * w).map(|_| rng.random::<f64>()).collect())
    }

    #[test]
    fn ssim_of_opposite_constants() {
        let p = SsimParams::default();
        let (zero, one) = (map(8, 8, vec![0.0; 64]), map(8, 8, vec![1.0; 64]));
        let want = p.c1 / (1.0 + p.c1);
        assert!((ssim(&zero, &one, &p).unwrap() - want).abs() < 1e-15);
        assert!((loss_ssim(&zero, &one, &p).unwrap() - (1.0 - want) / 2.0).abs() < 1e-15);
        let x = random(9, 11, 1);
        assert!((ssim(&x, &x, &p).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(loss_ssim(&x, &x, &p).unwrap(), 0.0);
    }

    #[test]
    fn ssim_is_symmetric_and_needs_a_full_window() {
        let p = SsimParams::default();
        for seed in 0..5 {
            let (a, b) = (random(8, 10, seed), random(8, 10, seed + 100));
            assert!((ssim(&a, &b, &p).unwrap() - ssim(&b, &a, &p).unwrap()).abs() < 1e-14);
            let l = loss_ssim(&a, &b, &p).unwrap();
            assert!((0.0..=1.0).contains(&l));
        }
        assert!(ssim(&random(6, 10, 0), &random(6, 10, 1), &p).is_err());
    }

    #[test]
    fn edge_loss_single_step() {
        let gt = map(2, 2, vec![0.0; 4]);
        let pred = map(2, 2, vec![0.0, 1.0, 0.0, 0.0]);
        // One unit step in each direction, each averaged over its two differences.
        assert_eq!(loss_edge(&pred, &gt).unwrap(), 1.0);
        assert!(loss_edge(&map(1, 3, vec![0.0; 3]), &map(1, 3, vec![0.0; 3])).is_err());
    }

    #[test]
    fn edge_loss_ignores_offsets() {
        let (a, b) = (random(5, 6, 2), random(5, 6, 3));
        let base = loss_edge(&a, &b).unwrap();
        assert!((loss_edge(&a.map(|v| v + 0.3), &b).unwrap() - base).abs() < 1e-14);
        assert!((loss_edge(&a.map(|v| v - 2.0), &b.map(|v| v - 2.0)).unwrap() - base).abs() < 1e-14);
        assert!(loss_edge(&a.map(|v| v + 0.5), &a).unwrap() < 1e-14);
    }

    #[test]
    fn berhu_branches() {
        let r = map(1, 3, vec![0.5, 2.0, -1.0]);
        assert_eq!(berhu(&r, 1.0).unwrap().data(), &[0.5, 2.5, 1.0]);
        assert!(berhu(&r, 0.0).is_err());
        assert!(berhu(&r, -1.0).is_err());
    }

    #[test]
    fn pixel_losses() {
        let gt = map(1, 2, vec![0.5, 0.5]);
        let pred = map(1, 2, vec![1.5, -0.5]);
        assert_eq!(loss_pixel(&pred, &gt, PixelLossKind::L1).unwrap(), 1.0);
        assert_eq!(loss_pixel(&pred, &gt, PixelLossKind::L2).unwrap(), 1.0);
        let pred = map(1, 2, vec![0.6, 1.5]);
        assert!((loss_pixel(&pred, &gt, PixelLossKind::Berhu).unwrap() - 1.35).abs() < 1e-12);
        for kind in [PixelLossKind::L1, PixelLossKind::L2, PixelLossKind::Berhu] {
            assert_eq!(loss_pixel(&gt, &gt, kind).unwrap(), 0.0);
        }
    }

    #[test]
    fn total_is_the_weighted_sum_of_its_terms() {
        let (pred, gt) = (random(8, 8, 4), random(8, 8, 5));
        for kind in [PixelLossKind::L1, PixelLossKind::L2, PixelLossKind::Berhu] {
            let cfg = LossConfig { kind, ..LossConfig::default() };
            let (s, e, p) = (
                loss_ssim(&pred, &gt, &cfg.ssim).unwrap(),
                loss_edge(&pred, &gt).unwrap(),
                loss_pixel(&pred, &gt, kind).unwrap(),
            );
            assert!((loss_total(&pred, &gt, &cfg).unwrap() - (s + e + p)).abs() < 1e-12);
            for (i, want) in [e + p, s + p, s + e].into_iter().enumerate() {
                let mut w = [1.0; 3];
                w[i] = 0.0;
                let cfg = LossConfig { weights: LossWeights { ssim: w[0], edge: w[1], pixel: w[2] }, ..cfg };
                assert!((loss_total(&pred, &gt, &cfg).unwrap() - want).abs() < 1e-12);
            }
            assert_eq!(loss_total(&gt, &gt, &cfg).unwrap(), 0.0);
        }
    }

    #[test]
    fn codec_round_trip() {
        let c = ReciprocalCodec::new(10.0, 0.5, 80.0).unwrap();
        assert_eq!(c.encode(0.5), 1.0);
        assert!((c.encode(5.0) - 0.1).abs() < 1e-15);
        assert!((c.decode(0.1) - 5.0).abs() < 1e-12);
        assert_eq!(c.decode(0.0), 80.0);
        let mut prev = f64::INFINITY;
        for i in 0..=400 {
            let d = 1.0 + 79.0 * i as f64 / 400.0;
            let t = c.encode(d);
            assert!(t < prev);
            prev = t;
            assert!((c.decode(t) - d).abs() <= 1e-6 * d);
        }
        assert!(ReciprocalCodec::new(10.0, 2.0, 1.0).is_err());
    }
}
