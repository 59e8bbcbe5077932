//! Reverse-mode tape.
//!
//! A [`Graph`] records every operation applied to its [`Var`]s. Node ids are
//! assigned in creation order and every op only refers to earlier ids, so the
//! tape is acyclic by construction and a single reverse sweep over the ids is a
//! valid reverse topological order. Gradients of multi-use nodes accumulate.
//!
//! Only leaves keep their gradient after [`Var::backward`]; intermediate
//! gradients are released as soon as they have been propagated.

use std::cell::RefCell;
use std::rc::Rc;

use super::tensor::{Real, Shape, Tensor};
use super::{blur, conv, dct};
use crate::error::{Error, Result};

pub struct Graph<T: Real = f32> {
    nodes: RefCell<Vec<Node<T>>>,
}

struct Node<T: Real> {
    value: Rc<Tensor<T>>,
    op: Op<T>,
    tracked: bool,
    grad: Option<Tensor<T>>,
}

enum Op<T: Real> {
    Leaf,
    Conv2d {
        x: usize,
        w: usize,
        b: Option<usize>,
        stride: usize,
        pad: usize,
    },
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Affine(usize, T),
    Relu(usize),
    LeakyRelu(usize, T),
    Sigmoid(usize),
    Tanh(usize),
    Abs(usize),
    Minimum(usize, usize),
    Upsample2(usize),
    Sum(usize),
    Mean(usize),
    Mse(usize, usize),
    L1(usize, usize),
    Concat(Vec<usize>),
    NarrowBatch(usize, usize),
    Dct2(usize),
    Idct2(usize),
    Blur1d {
        x: usize,
        kernel: Rc<Vec<T>>,
        vertical: bool,
    },
}

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy)]
pub struct Var<'g, T: Real = f32> {
    graph: &'g Graph<T>,
    id: usize,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: RefCell::new(Vec::new()),
        }
    }

    /// Leaf that receives a gradient.
    pub fn param(&self, value: Tensor<T>) -> Var<'_, T> {
        self.leaf(value, true)
    }

    /// Leaf excluded from differentiation.
    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        self.leaf(value, false)
    }

    pub fn leaf(&self, value: Tensor<T>, tracked: bool) -> Var<'_, T> {
        let id = self.push(value, Op::Leaf, tracked);
        Var { graph: self, id }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor<T>, op: Op<T>, tracked: bool) -> usize {
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.len();
        // Untracked results never need their recipe.
        let op = if tracked { op } else { Op::Leaf };
        nodes.push(Node {
            value: Rc::new(value),
            op,
            tracked,
            grad: None,
        });
        id
    }

    fn value(&self, id: usize) -> Rc<Tensor<T>> {
        self.nodes.borrow()[id].value.clone()
    }

    fn tracked(&self, id: usize) -> bool {
        self.nodes.borrow()[id].tracked
    }

    fn var(&self, id: usize) -> Var<'_, T> {
        Var { graph: self, id }
    }

    fn unary(&self, x: usize, value: Tensor<T>, op: Op<T>) -> Var<'_, T> {
        let id = self.push(value, op, self.tracked(x));
        self.var(id)
    }

    fn binary(&self, a: usize, b: usize, value: Tensor<T>, op: Op<T>) -> Var<'_, T> {
        let tracked = self.tracked(a) || self.tracked(b);
        let id = self.push(value, op, tracked);
        self.var(id)
    }
}

fn same_shape(op: &'static str, a: &Tensor<impl Real>, b: &Tensor<impl Real>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, format!("{} vs {}", a.shape(), b.shape())));
    }
    Ok(())
}

fn same_graph<T: Real>(a: &Var<'_, T>, b: &Var<'_, T>) {
    assert!(
        std::ptr::eq(a.graph, b.graph),
        "vars from different graphs cannot be combined"
    );
}

#[inline]
fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::ZERO {
        T::ONE / (T::ONE + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::ONE + e)
    }
}

#[inline]
fn sign<T: Real>(x: T) -> T {
    if x > T::ZERO {
        T::ONE
    } else if x < T::ZERO {
        -T::ONE
    } else {
        T::ZERO
    }
}

impl<'g, T: Real> Var<'g, T> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn graph(&self) -> &'g Graph<T> {
        self.graph
    }

    pub fn value(&self) -> Rc<Tensor<T>> {
        self.graph.value(self.id)
    }

    pub fn shape(&self) -> Shape {
        self.graph.nodes.borrow()[self.id].value.shape()
    }

    pub fn is_tracked(&self) -> bool {
        self.graph.tracked(self.id)
    }

    /// Gradient populated by the last [`Var::backward`] on this graph (leaves only).
    pub fn grad(&self) -> Option<Tensor<T>> {
        self.graph.nodes.borrow()[self.id].grad.clone()
    }

    /// Takes the gradient out of the tape instead of cloning it.
    pub fn take_grad(&self) -> Option<Tensor<T>> {
        self.graph.nodes.borrow_mut()[self.id].grad.take()
    }

    /// Scalar value of a `(1,1,1,1)` node.
    pub fn item(&self) -> T {
        self.value().data()[0]
    }

    pub fn conv2d(&self, weight: Var<'g, T>, bias: Option<Var<'g, T>>, stride: usize, pad: usize) -> Result<Self> {
        same_graph(self, &weight);
        let x = self.value();
        let w = weight.value();
        let b = bias.map(|b| {
            same_graph(self, &b);
            b.value()
        });
        let out = conv::forward(&x, &w, b.as_deref(), stride, pad)?;
        let tracked = self.is_tracked() || weight.is_tracked() || bias.is_some_and(|b| b.is_tracked());
        let id = self.graph.push(
            out,
            Op::Conv2d {
                x: self.id,
                w: weight.id,
                b: bias.map(|b| b.id),
                stride,
                pad,
            },
            tracked,
        );
        Ok(self.graph.var(id))
    }

    pub fn add(&self, other: Var<'g, T>) -> Result<Self> {
        same_graph(self, &other);
        let (a, b) = (self.value(), other.value());
        same_shape("add", &a, &b)?;
        let out = a.zip_map(&b, |x, y| x + y)?;
        Ok(self.graph.binary(self.id, other.id, out, Op::Add(self.id, other.id)))
    }

    pub fn sub(&self, other: Var<'g, T>) -> Result<Self> {
        same_graph(self, &other);
        let (a, b) = (self.value(), other.value());
        same_shape("sub", &a, &b)?;
        let out = a.zip_map(&b, |x, y| x - y)?;
        Ok(self.graph.binary(self.id, other.id, out, Op::Sub(self.id, other.id)))
    }

    pub fn mul(&self, other: Var<'g, T>) -> Result<Self> {
        same_graph(self, &other);
        let (a, b) = (self.value(), other.value());
        same_shape("mul", &a, &b)?;
        let out = a.zip_map(&b, |x, y| x * y)?;
        Ok(self.graph.binary(self.id, other.id, out, Op::Mul(self.id, other.id)))
    }

    /// `scale * x + shift`.
    pub fn affine(&self, scale: f64, shift: f64) -> Self {
        let (s, t) = (T::from_f64(scale), T::from_f64(shift));
        let out = self.value().map(|v| s * v + t);
        self.graph.unary(self.id, out, Op::Affine(self.id, s))
    }

    pub fn relu(&self) -> Self {
        let out = self.value().map(|v| if v > T::ZERO { v } else { T::ZERO });
        self.graph.unary(self.id, out, Op::Relu(self.id))
    }

    pub fn leaky_relu(&self, slope: f64) -> Self {
        let s = T::from_f64(slope);
        let out = self.value().map(|v| if v > T::ZERO { v } else { s * v });
        self.graph.unary(self.id, out, Op::LeakyRelu(self.id, s))
    }

    pub fn sigmoid(&self) -> Self {
        let out = self.value().map(sigmoid);
        self.graph.unary(self.id, out, Op::Sigmoid(self.id))
    }

    pub fn tanh(&self) -> Self {
        let out = self.value().map(|v| v.tanh());
        self.graph.unary(self.id, out, Op::Tanh(self.id))
    }

    pub fn abs(&self) -> Self {
        let out = self.value().map(|v| v.abs());
        self.graph.unary(self.id, out, Op::Abs(self.id))
    }

    /// Elementwise minimum; ties route the gradient to `self`.
    pub fn minimum(&self, other: Var<'g, T>) -> Result<Self> {
        same_graph(self, &other);
        let (a, b) = (self.value(), other.value());
        same_shape("minimum", &a, &b)?;
        let out = a.zip_map(&b, |x, y| if x <= y { x } else { y })?;
        Ok(self.graph.binary(self.id, other.id, out, Op::Minimum(self.id, other.id)))
    }

    /// Nearest-neighbour upsampling by a factor of two.
    pub fn upsample2(&self) -> Self {
        let x = self.value();
        let s = x.shape();
        let out = Tensor::from_fn(Shape::new(s.n, s.c, 2 * s.h, 2 * s.w), |n, c, y, xx| {
            x.at(n, c, y / 2, xx / 2)
        });
        self.graph.unary(self.id, out, Op::Upsample2(self.id))
    }

    pub fn sum(&self) -> Self {
        let out = Tensor::scalar(self.value().sum());
        self.graph.unary(self.id, out, Op::Sum(self.id))
    }

    pub fn mean(&self) -> Self {
        let out = Tensor::scalar(self.value().mean());
        self.graph.unary(self.id, out, Op::Mean(self.id))
    }

    /// Mean squared error, reduced to a scalar.
    pub fn mse(&self, target: Var<'g, T>) -> Result<Self> {
        same_graph(self, &target);
        let (a, b) = (self.value(), target.value());
        same_shape("mse", &a, &b)?;
        let n = T::from_f64(a.data().len() as f64);
        let s: T = a.data().iter().zip(b.data()).map(|(&x, &y)| (x - y) * (x - y)).sum();
        Ok(self
            .graph
            .binary(self.id, target.id, Tensor::scalar(s / n), Op::Mse(self.id, target.id)))
    }

    /// Mean absolute error, reduced to a scalar.
    pub fn l1(&self, target: Var<'g, T>) -> Result<Self> {
        same_graph(self, &target);
        let (a, b) = (self.value(), target.value());
        same_shape("l1", &a, &b)?;
        let n = T::from_f64(a.data().len() as f64);
        let s: T = a.data().iter().zip(b.data()).map(|(&x, &y)| (x - y).abs()).sum();
        Ok(self
            .graph
            .binary(self.id, target.id, Tensor::scalar(s / n), Op::L1(self.id, target.id)))
    }

    /// Concatenates along the channel axis.
    pub fn concat(parts: &[Var<'g, T>]) -> Result<Self> {
        let first = parts.first().ok_or_else(|| Error::invalid("concat", "no inputs"))?;
        let graph = first.graph;
        let values: Vec<_> = parts
            .iter()
            .map(|p| {
                same_graph(first, p);
                p.value()
            })
            .collect();
        let s0 = values[0].shape();
        for v in &values {
            let s = v.shape();
            if (s.n, s.h, s.w) != (s0.n, s0.h, s0.w) {
                return Err(Error::shape("concat", format!("{s} vs {s0}")));
            }
        }
        let c_total: usize = values.iter().map(|v| v.shape().c).sum();
        let mut data = Vec::with_capacity(s0.n * c_total * s0.plane());
        for n in 0..s0.n {
            for v in &values {
                let per = v.shape().c * s0.plane();
                data.extend_from_slice(&v.data()[n * per..(n + 1) * per]);
            }
        }
        let out = Tensor::from_vec(Shape::new(s0.n, c_total, s0.h, s0.w), data)?;
        let tracked = parts.iter().any(|p| p.is_tracked());
        let id = graph.push(out, Op::Concat(parts.iter().map(|p| p.id).collect()), tracked);
        Ok(graph.var(id))
    }

    pub fn narrow_batch(&self, start: usize, len: usize) -> Result<Self> {
        let out = self.value().narrow_batch(start, len)?;
        Ok(self.graph.unary(self.id, out, Op::NarrowBatch(self.id, start)))
    }

    /// Orthonormal 2-D DCT-II of every plane.
    pub fn dct2(&self) -> Self {
        let out = dct::apply(&self.value(), false);
        self.graph.unary(self.id, out, Op::Dct2(self.id))
    }

    /// Inverse of [`Var::dct2`].
    pub fn idct2(&self) -> Self {
        let out = dct::apply(&self.value(), true);
        self.graph.unary(self.id, out, Op::Idct2(self.id))
    }

    /// Gaussian smoothing with a fixed, normalized kernel and symmetric
    /// (half-sample) reflection at the borders.
    pub fn gaussian_blur(&self, sigma: f64, ksize: usize) -> Result<Self> {
        let kernel: Rc<Vec<T>> = Rc::new(
            blur::gaussian_kernel(sigma, ksize)?
                .into_iter()
                .map(T::from_f64)
                .collect(),
        );
        let h = blur::forward(&self.value(), &kernel, false);
        let hx = self.graph.unary(
            self.id,
            h,
            Op::Blur1d {
                x: self.id,
                kernel: kernel.clone(),
                vertical: false,
            },
        );
        let v = blur::forward(&hx.value(), &kernel, true);
        Ok(self.graph.unary(
            hx.id,
            v,
            Op::Blur1d {
                x: hx.id,
                kernel,
                vertical: true,
            },
        ))
    }

    /// Reverse sweep from this scalar node.
    pub fn backward(&self) -> Result<()> {
        let mut nodes = self.graph.nodes.borrow_mut();
        let shape = nodes[self.id].value.shape();
        if shape != Shape::SCALAR {
            return Err(Error::NonScalarLoss(shape.dims()));
        }
        for n in nodes.iter_mut() {
            n.grad = None;
        }
        if !nodes[self.id].tracked {
            return Ok(());
        }
        nodes[self.id].grad = Some(Tensor::scalar(T::ONE));
        for i in (0..=self.id).rev() {
            if !nodes[i].tracked {
                continue;
            }
            let Some(g) = nodes[i].grad.take() else { continue };
            if let Op::Leaf = nodes[i].op {
                nodes[i].grad = Some(g);
                continue;
            }
            for (j, contrib) in propagate(&nodes, i, &g) {
                let slot = &mut nodes[j].grad;
                match slot {
                    Some(acc) => acc.add_assign(&contrib),
                    None => *slot = Some(contrib),
                }
            }
        }
        Ok(())
    }
}

/// Gradient contributions of node `i` to its tracked inputs.
fn propagate<T: Real>(nodes: &[Node<T>], i: usize, g: &Tensor<T>) -> Vec<(usize, Tensor<T>)> {
    let val = |j: usize| &*nodes[j].value;
    let want = |j: usize| nodes[j].tracked;
    let out = &*nodes[i].value;
    let mut res = Vec::with_capacity(2);
    let mut emit = |j: usize, f: &dyn Fn() -> Tensor<T>| {
        if want(j) {
            res.push((j, f()));
        }
    };
    match &nodes[i].op {
        Op::Leaf => {}
        Op::Conv2d { x, w, b, stride, pad } => {
            let grads = conv::backward(
                val(*x),
                val(*w),
                g,
                *stride,
                *pad,
                want(*x),
                want(*w),
                b.is_some_and(|b| want(b)),
            );
            if let Some(gx) = grads.x {
                res.push((*x, gx));
            }
            if let Some(gw) = grads.w {
                res.push((*w, gw));
            }
            if let (Some(b), Some(gb)) = (b, grads.b) {
                res.push((*b, gb));
            }
        }
        Op::Add(a, b) => {
            emit(*a, &|| g.clone());
            emit(*b, &|| g.clone());
        }
        Op::Sub(a, b) => {
            emit(*a, &|| g.clone());
            emit(*b, &|| g.map(|v| -v));
        }
        Op::Mul(a, b) => {
            emit(*a, &|| g.zip_map(val(*b), |gv, bv| gv * bv).unwrap());
            emit(*b, &|| g.zip_map(val(*a), |gv, av| gv * av).unwrap());
        }
        Op::Affine(x, s) => emit(*x, &|| g.map(|v| v * *s)),
        Op::Relu(x) => emit(*x, &|| {
            g.zip_map(val(*x), |gv, xv| if xv > T::ZERO { gv } else { T::ZERO })
                .unwrap()
        }),
        Op::LeakyRelu(x, s) => emit(*x, &|| {
            g.zip_map(val(*x), |gv, xv| if xv > T::ZERO { gv } else { gv * *s })
                .unwrap()
        }),
        Op::Sigmoid(x) => emit(*x, &|| g.zip_map(out, |gv, y| gv * y * (T::ONE - y)).unwrap()),
        Op::Tanh(x) => emit(*x, &|| g.zip_map(out, |gv, y| gv * (T::ONE - y * y)).unwrap()),
        Op::Abs(x) => emit(*x, &|| g.zip_map(val(*x), |gv, xv| gv * sign(xv)).unwrap()),
        Op::Minimum(a, b) => {
            let (av, bv) = (val(*a), val(*b));
            emit(*a, &|| {
                Tensor::from_vec(
                    av.shape(),
                    g.data()
                        .iter()
                        .zip(av.data().iter().zip(bv.data()))
                        .map(|(&gv, (&x, &y))| if x <= y { gv } else { T::ZERO })
                        .collect(),
                )
                .unwrap()
            });
            emit(*b, &|| {
                Tensor::from_vec(
                    av.shape(),
                    g.data()
                        .iter()
                        .zip(av.data().iter().zip(bv.data()))
                        .map(|(&gv, (&x, &y))| if x <= y { T::ZERO } else { gv })
                        .collect(),
                )
                .unwrap()
            });
        }
        Op::Upsample2(x) => emit(*x, &|| {
            let s = val(*x).shape();
            let mut gx = Tensor::zeros(s);
            let gs = g.shape();
            for n in 0..s.n {
                for c in 0..s.c {
                    let src = g.plane(n, c);
                    let dst = gx.plane_mut(n, c);
                    for y in 0..gs.h {
                        for xx in 0..gs.w {
                            dst[(y / 2) * s.w + xx / 2] += src[y * gs.w + xx];
                        }
                    }
                }
            }
            gx
        }),
        Op::Sum(x) => emit(*x, &|| Tensor::full(val(*x).shape(), g.data()[0])),
        Op::Mean(x) => emit(*x, &|| {
            let s = val(*x).shape();
            Tensor::full(s, g.data()[0] / T::from_f64(s.numel() as f64))
        }),
        Op::Mse(a, b) => {
            let (av, bv) = (val(*a), val(*b));
            let k = T::from_f64(2.0) * g.data()[0] / T::from_f64(av.data().len() as f64);
            emit(*a, &|| av.zip_map(bv, |x, y| k * (x - y)).unwrap());
            emit(*b, &|| av.zip_map(bv, |x, y| k * (y - x)).unwrap());
        }
        Op::L1(a, b) => {
            let (av, bv) = (val(*a), val(*b));
            let k = g.data()[0] / T::from_f64(av.data().len() as f64);
            emit(*a, &|| av.zip_map(bv, |x, y| k * sign(x - y)).unwrap());
            emit(*b, &|| av.zip_map(bv, |x, y| k * sign(y - x)).unwrap());
        }
        Op::Concat(parts) => {
            let gs = g.shape();
            let mut offset = 0;
            for &p in parts {
                let s = val(p).shape();
                if want(p) {
                    let mut gp = Tensor::zeros(s);
                    for n in 0..s.n {
                        for c in 0..s.c {
                            gp.plane_mut(n, c).copy_from_slice(g.plane(n, offset + c));
                        }
                    }
                    res.push((p, gp));
                }
                offset += s.c;
            }
            debug_assert_eq!(offset, gs.c);
        }
        Op::NarrowBatch(x, start) => emit(*x, &|| {
            let s = val(*x).shape();
            let mut gx = Tensor::zeros(s);
            let per = s.c * s.plane();
            gx.data_mut()[start * per..start * per + g.data().len()].copy_from_slice(g.data());
            gx
        }),
        Op::Dct2(x) => emit(*x, &|| dct::apply(g, true)),
        Op::Idct2(x) => emit(*x, &|| dct::apply(g, false)),
        Op::Blur1d { x, kernel, vertical } => emit(*x, &|| blur::backward(g, kernel, *vertical)),
    }
    res
}
