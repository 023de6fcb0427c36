//! Reverse-mode differentiation tape.
//!
//! Every operation appends a node holding its forward value and whatever it
//! needs for the adjoint. Nodes only reference earlier nodes, so
//! [`Tape::backward`] is a single sweep in reverse creation order.

use alloc::format;
use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::kernels::{self, ConvGeometry};
use crate::real::Real;
use crate::tensor::{Shape, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Conv2d { input: Var, kernel: Var, bias: Var, stride: usize, padding: usize },
    LeakyRelu { input: Var, alpha: T },
    Sigmoid { input: Var },
    MaxPool2x { input: Var, argmax: Vec<u32> },
    Upsample2x { input: Var },
    Concat { a: Var, b: Var },
    Add { a: Var, b: Var, broadcast: bool },
    Mul { a: Var, b: Var },
    Sum { input: Var },
    DotConst { input: Var, weights: Tensor<T> },
    Combine { terms: Vec<(Var, T)> },
    /// Scalar whose partial derivatives were computed alongside its value.
    Scalar { partials: Vec<(Var, Tensor<T>)> },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T> Gradients<T> {
    pub fn get(&self, var: Var) -> Option<&Tensor<T>> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(var.0).and_then(Option::take)
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    pub fn value(&self, var: Var) -> &Tensor<T> {
        &self.nodes[var.0].value
    }

    pub fn shape(&self, var: Var) -> Shape {
        self.nodes[var.0].value.shape()
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|&v| self.requires_grad(v))
    }

    fn conv_geometry(&self, input: Var, kernel: Var, bias: Var, stride: usize, padding: usize) -> Result<ConvGeometry> {
        let (is, ks, bs) = (self.shape(input), self.shape(kernel), self.shape(bias));
        let (n, cin, h, w) = is.as_nchw("conv2d")?;
        let (cout, kcin, kh, kw) = ks.as_nchw("conv2d")?;
        if stride == 0 {
            return Err(Error::InvalidArgument("conv2d stride must be positive".to_string()));
        }
        if kcin != cin {
            return Err(Error::ShapeMismatch { op: "conv2d", left: is, right: ks });
        }
        if bs.numel() != cout {
            return Err(Error::ShapeMismatch { op: "conv2d bias", left: ks, right: bs });
        }
        let (Some(oh), Some(ow)) = (
            kernels::conv_out_extent(h, kh, stride, padding),
            kernels::conv_out_extent(w, kw, stride, padding),
        ) else {
            return Err(Error::ShapeMismatch { op: "conv2d kernel larger than padded input", left: is, right: ks });
        };
        Ok(ConvGeometry { n, cin, h, w, cout, kh, kw, oh, ow, stride, pad: padding })
    }

    /// Zero-padded cross-correlation, `[N,Cin,H,W] * [Cout,Cin,kh,kw] + bias`.
    pub fn conv2d(&mut self, input: Var, kernel: Var, bias: Var, stride: usize, padding: usize) -> Result<Var> {
        let g = self.conv_geometry(input, kernel, bias, stride, padding)?;
        let value = kernels::conv2d_forward(
            &g,
            self.value(input).data(),
            self.value(kernel).data(),
            self.value(bias).data(),
        );
        let rg = self.any_grad(&[input, kernel, bias]);
        Ok(self.push(value, Op::Conv2d { input, kernel, bias, stride, padding }, rg))
    }

    /// Per-pixel channel mixing; a `conv2d` restricted to 1×1 kernels.
    pub fn conv1x1(&mut self, input: Var, kernel: Var, bias: Var) -> Result<Var> {
        let ks = self.shape(kernel);
        let (_, _, kh, kw) = ks.as_nchw("conv1x1")?;
        if kh != 1 || kw != 1 {
            return Err(Error::InvalidShape { op: "conv1x1", reason: format!("kernel {ks} is not 1x1") });
        }
        self.conv2d(input, kernel, bias, 1, 0)
    }

    pub fn leaky_relu(&mut self, input: Var, alpha: f64) -> Result<Var> {
        if !(0.0..1.0).contains(&alpha) {
            return Err(Error::InvalidArgument(format!("leaky_relu alpha {alpha} outside [0, 1)")));
        }
        let a = T::from_f64(alpha);
        let value = self.value(input).map(|x| if x >= T::ZERO { x } else { a * x });
        let rg = self.requires_grad(input);
        Ok(self.push(value, Op::LeakyRelu { input, alpha: a }, rg))
    }

    pub fn sigmoid(&mut self, input: Var) -> Var {
        let value = self.value(input).map(|x| T::ONE / (T::ONE + (-x).exp()));
        let rg = self.requires_grad(input);
        self.push(value, Op::Sigmoid { input }, rg)
    }

    pub fn maxpool2x(&mut self, input: Var) -> Result<Var> {
        let s = self.shape(input);
        let (n, c, h, w) = s.as_nchw("maxpool2x")?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::InvalidShape { op: "maxpool2x", reason: format!("odd spatial extent in {s}") });
        }
        let (out, argmax) = kernels::maxpool2x_forward(self.value(input).data(), n, c, h, w);
        let value = Tensor::from_vec(Shape::nchw(n, c, h / 2, w / 2), out)?;
        let rg = self.requires_grad(input);
        Ok(self.push(value, Op::MaxPool2x { input, argmax }, rg))
    }

    /// Bilinear 2× upsampling with half-pixel centers and clamped edges.
    pub fn upsample2x(&mut self, input: Var) -> Result<Var> {
        let (n, c, h, w) = self.shape(input).as_nchw("bilinear_upsample2x")?;
        let out = kernels::upsample2x_forward(self.value(input).data(), n * c, h, w);
        let value = Tensor::from_vec(Shape::nchw(n, c, 2 * h, 2 * w), out)?;
        let rg = self.requires_grad(input);
        Ok(self.push(value, Op::Upsample2x { input }, rg))
    }

    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let (n, ca, h, w) = sa.as_nchw("concat_channels")?;
        let (nb, cb, hb, wb) = sb.as_nchw("concat_channels")?;
        if (n, h, w) != (nb, hb, wb) {
            return Err(Error::ShapeMismatch { op: "concat_channels", left: sa, right: sb });
        }
        let plane = h * w;
        let (da, db) = (self.value(a).data(), self.value(b).data());
        let mut out = Vec::with_capacity(n * (ca + cb) * plane);
        for i in 0..n {
            out.extend_from_slice(&da[i * ca * plane..(i + 1) * ca * plane]);
            out.extend_from_slice(&db[i * cb * plane..(i + 1) * cb * plane]);
        }
        let value = Tensor::from_vec(Shape::nchw(n, ca + cb, h, w), out)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(value, Op::Concat { a, b }, rg))
    }

    /// Elementwise sum. `b` may also be a single-channel NCHW tensor that is
    /// broadcast across the channels of `a`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let broadcast = if sa == sb {
            false
        } else {
            match (sa.as_nchw("add"), sb.as_nchw("add")) {
                (Ok((n, _, h, w)), Ok((nb, 1, hb, wb))) if (n, h, w) == (nb, hb, wb) => true,
                _ => return Err(Error::ShapeMismatch { op: "add", left: sa, right: sb }),
            }
        };
        let (da, db) = (self.value(a).data(), self.value(b).data());
        let out: Vec<T> = if broadcast {
            let (_, c, h, w) = sa.as_nchw("add")?;
            let plane = h * w;
            da.iter()
                .enumerate()
                .map(|(i, &x)| x + db[(i / (c * plane)) * plane + i % plane])
                .collect()
        } else {
            da.iter().zip(db).map(|(&x, &y)| x + y).collect()
        };
        let value = Tensor::from_vec(sa, out)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(value, Op::Add { a, b, broadcast }, rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::ShapeMismatch { op: "mul", left: sa, right: sb });
        }
        let out = self.value(a).data().iter().zip(self.value(b).data()).map(|(&x, &y)| x * y).collect();
        let value = Tensor::from_vec(sa, out)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(value, Op::Mul { a, b }, rg))
    }

    pub fn sum(&mut self, input: Var) -> Var {
        let total = self.value(input).data().iter().copied().sum();
        let rg = self.requires_grad(input);
        self.push(Tensor::scalar(total), Op::Sum { input }, rg)
    }

    /// `sum(input ⊙ weights)` with constant weights.
    pub fn dot_const(&mut self, input: Var, weights: Tensor<T>) -> Result<Var> {
        let s = self.shape(input);
        if s != weights.shape() {
            return Err(Error::ShapeMismatch { op: "dot_const", left: s, right: weights.shape() });
        }
        let total = self.value(input).data().iter().zip(weights.data()).map(|(&x, &w)| x * w).sum();
        let rg = self.requires_grad(input);
        Ok(self.push(Tensor::scalar(total), Op::DotConst { input, weights }, rg))
    }

    /// Weighted sum of scalar nodes.
    pub fn combine(&mut self, terms: &[(Var, T)]) -> Result<Var> {
        let mut total = T::ZERO;
        for &(v, c) in terms {
            let s = self.shape(v);
            if !s.is_scalar() {
                return Err(Error::NonScalarLoss(s));
            }
            total += c * self.value(v).item();
        }
        let rg = terms.iter().any(|&(v, _)| self.requires_grad(v));
        Ok(self.push(Tensor::scalar(total), Op::Combine { terms: terms.to_vec() }, rg))
    }

    /// Records a scalar computed outside the tape together with its partial
    /// derivative with respect to each input.
    pub fn scalar_fn(&mut self, value: T, partials: Vec<(Var, Tensor<T>)>) -> Result<Var> {
        for (v, g) in &partials {
            if self.shape(*v) != g.shape() {
                return Err(Error::ShapeMismatch { op: "scalar_fn", left: self.shape(*v), right: g.shape() });
            }
        }
        let rg = partials.iter().any(|(v, _)| self.requires_grad(*v));
        Ok(self.push(Tensor::scalar(value), Op::Scalar { partials }, rg))
    }

    /// Gradients of `loss` with respect to every node that requires them and
    /// that `loss` depends on.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let ls = self.shape(loss);
        if !ls.is_scalar() {
            return Err(Error::NonScalarLoss(ls));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        if self.requires_grad(loss) {
            grads[loss.0] = Some(Tensor::full(ls, T::ONE));
        }
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], var: Var, delta: Tensor<T>) {
        if !self.requires_grad(var) {
            return;
        }
        match &mut grads[var.0] {
            Some(existing) => existing.add_assign(&delta),
            slot @ None => *slot = Some(delta),
        }
    }

    fn propagate(&self, idx: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let node = &self.nodes[idx];
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            &Op::Conv2d { input, kernel, bias, stride, padding } => {
                let geom = self
                    .conv_geometry(input, kernel, bias, stride, padding)
                    .expect("validated at construction");
                let want = [input, kernel, bias].map(|v| self.requires_grad(v));
                let [di, dk, db] = kernels::conv2d_backward(
                    &geom,
                    self.value(input).data(),
                    self.value(kernel).data(),
                    gd,
                    want,
                );
                for (var, d) in [(input, di), (kernel, dk), (bias, db)] {
                    if let Some(d) = d {
                        let t = Tensor::from_vec(self.shape(var), d).expect("gradient shape");
                        self.accumulate(grads, var, t);
                    }
                }
            }
            &Op::LeakyRelu { input, alpha } => {
                let x = self.value(input).data();
                let d = x.iter().zip(gd).map(|(&x, &g)| if x >= T::ZERO { g } else { alpha * g }).collect();
                self.accumulate(grads, input, Tensor::from_vec(self.shape(input), d).expect("shape"));
            }
            &Op::Sigmoid { input } => {
                let y = node.value.data();
                let d = y.iter().zip(gd).map(|(&y, &g)| g * y * (T::ONE - y)).collect();
                self.accumulate(grads, input, Tensor::from_vec(self.shape(input), d).expect("shape"));
            }
            Op::MaxPool2x { input, argmax } => {
                let mut d = Tensor::zeros(self.shape(*input));
                let dd = d.data_mut();
                for (&src, &gv) in argmax.iter().zip(gd) {
                    dd[src as usize] += gv;
                }
                self.accumulate(grads, *input, d);
            }
            &Op::Upsample2x { input } => {
                let s = self.shape(input);
                let (n, c, h, w) = s.as_nchw("bilinear_upsample2x").expect("rank 4");
                let d = kernels::upsample2x_backward(gd, n * c, h, w);
                self.accumulate(grads, input, Tensor::from_vec(s, d).expect("shape"));
            }
            &Op::Concat { a, b } => {
                let ca = self.shape(a).dims()[1];
                let cb = self.shape(b).dims()[1];
                let ga = g.slice_channels(0, ca).expect("concat slice");
                let gb = g.slice_channels(ca, cb).expect("concat slice");
                self.accumulate(grads, a, ga);
                self.accumulate(grads, b, gb);
            }
            &Op::Add { a, b, broadcast } => {
                self.accumulate(grads, a, g.clone());
                if self.requires_grad(b) {
                    let gb = if broadcast {
                        let (n, c, h, w) = g.shape().as_nchw("add").expect("rank 4");
                        let plane = h * w;
                        let mut out = vec![T::ZERO; n * plane];
                        for (i, &gv) in gd.iter().enumerate() {
                            out[(i / (c * plane)) * plane + i % plane] += gv;
                        }
                        Tensor::from_vec(self.shape(b), out).expect("shape")
                    } else {
                        g.clone()
                    };
                    self.accumulate(grads, b, gb);
                }
            }
            &Op::Mul { a, b } => {
                let (va, vb) = (self.value(a).data(), self.value(b).data());
                if self.requires_grad(a) {
                    let d = vb.iter().zip(gd).map(|(&y, &g)| y * g).collect();
                    self.accumulate(grads, a, Tensor::from_vec(self.shape(a), d).expect("shape"));
                }
                if self.requires_grad(b) {
                    let d = va.iter().zip(gd).map(|(&x, &g)| x * g).collect();
                    self.accumulate(grads, b, Tensor::from_vec(self.shape(b), d).expect("shape"));
                }
            }
            &Op::Sum { input } => {
                self.accumulate(grads, input, Tensor::full(self.shape(input), gd[0]));
            }
            Op::DotConst { input, weights } => {
                let scale = gd[0];
                self.accumulate(grads, *input, weights.map(|w| w * scale));
            }
            Op::Combine { terms } => {
                for &(v, c) in terms {
                    self.accumulate(grads, v, Tensor::scalar(c * gd[0]));
                }
            }
            Op::Scalar { partials } => {
                let scale = gd[0];
                for (v, p) in partials {
                    self.accumulate(grads, *v, p.map(|x| x * scale));
                }
            }
        }
    }
}
