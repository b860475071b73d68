//! Minimal reverse-mode autodiff over 2-d f64 arrays. Nodes are reference
//! counted; each op records its parents and a closure producing parent
//! gradients from the output gradient. Leaf parameters persist across steps,
//! intermediate nodes are rebuilt every forward pass.

use std::cell::{Ref, RefCell};
use std::collections::HashSet;
use std::ops::Range;
use std::rc::Rc;

use ndarray::{concatenate, Array2, ArrayView2, Axis};

type BackwardFn = Box<dyn Fn(&Array2<f64>) -> Vec<Array2<f64>>>;

pub struct VarInner {
    value: RefCell<Array2<f64>>,
    grad: RefCell<Array2<f64>>,
    parents: Vec<Var>,
    backward: Option<BackwardFn>,
    requires_grad: bool,
}

#[derive(Clone)]
pub struct Var(Rc<VarInner>);

impl Var {
    fn new_node(
        value: Array2<f64>,
        parents: Vec<Var>,
        backward: Option<BackwardFn>,
        requires_grad: bool,
    ) -> Var {
        let shape = value.raw_dim();
        Var(Rc::new(VarInner {
            value: RefCell::new(value),
            grad: RefCell::new(Array2::zeros(shape)),
            parents,
            backward,
            requires_grad,
        }))
    }

    /// Trainable leaf.
    pub fn param(value: Array2<f64>) -> Var {
        Var::new_node(value, vec![], None, true)
    }

    /// Non-trainable input.
    pub fn constant(value: Array2<f64>) -> Var {
        Var::new_node(value, vec![], None, false)
    }

    pub fn value(&self) -> Ref<'_, Array2<f64>> {
        self.0.value.borrow()
    }

    pub fn grad(&self) -> Ref<'_, Array2<f64>> {
        self.0.grad.borrow()
    }

    pub fn shape(&self) -> (usize, usize) {
        let v = self.value();
        (v.nrows(), v.ncols())
    }

    pub fn scalar(&self) -> f64 {
        let v = self.value();
        debug_assert_eq!(v.len(), 1, "scalar() on non-scalar var");
        v[[0, 0]]
    }

    /// Overwrite a leaf's value in place (optimizer updates, checkpoint load).
    pub fn set_value(&self, value: Array2<f64>) {
        debug_assert_eq!(self.value().raw_dim(), value.raw_dim());
        *self.0.value.borrow_mut() = value;
    }

    pub fn update_value(&self, f: impl FnOnce(&mut Array2<f64>)) {
        f(&mut self.0.value.borrow_mut());
    }

    pub fn zero_grad(&self) {
        self.0.grad.borrow_mut().fill(0.0);
    }

    fn child(value: Array2<f64>, parents: Vec<Var>, backward: BackwardFn) -> Var {
        let requires_grad = parents.iter().any(|p| p.0.requires_grad);
        if requires_grad {
            Var::new_node(value, parents, Some(backward), true)
        } else {
            Var::constant(value)
        }
    }

    // ---- ops ----

    pub fn add(&self, other: &Var) -> Var {
        let value = &*self.value() + &*other.value();
        Var::child(
            value,
            vec![self.clone(), other.clone()],
            Box::new(|g| vec![g.clone(), g.clone()]),
        )
    }

    pub fn sub(&self, other: &Var) -> Var {
        let value = &*self.value() - &*other.value();
        Var::child(
            value,
            vec![self.clone(), other.clone()],
            Box::new(|g| vec![g.clone(), -g]),
        )
    }

    pub fn mul(&self, other: &Var) -> Var {
        let value = &*self.value() * &*other.value();
        let a = self.clone();
        let b = other.clone();
        Var::child(
            value,
            vec![self.clone(), other.clone()],
            Box::new(move |g| vec![g * &*b.value(), g * &*a.value()]),
        )
    }

    pub fn scale(&self, k: f64) -> Var {
        let value = &*self.value() * k;
        Var::child(value, vec![self.clone()], Box::new(move |g| vec![g * k]))
    }

    /// Elementwise add of a constant array (same shape).
    pub fn add_const(&self, c: &Array2<f64>) -> Var {
        let value = &*self.value() + c;
        Var::child(value, vec![self.clone()], Box::new(|g| vec![g.clone()]))
    }

    /// Elementwise multiply by a constant array (same shape). Also used for
    /// dropout masks.
    pub fn mul_const(&self, c: &Array2<f64>) -> Var {
        let value = &*self.value() * c;
        let c = c.clone();
        Var::child(value, vec![self.clone()], Box::new(move |g| vec![g * &c]))
    }

    /// Add a constant column vector [n, 1] to every column.
    pub fn add_col_const(&self, c: &Array2<f64>) -> Var {
        debug_assert_eq!(c.ncols(), 1);
        let value = &*self.value() + c;
        Var::child(value, vec![self.clone()], Box::new(|g| vec![g.clone()]))
    }

    /// out[i, 0] = self[i, indices[i]].
    pub fn select_cols_per_row(&self, indices: &[usize]) -> Var {
        let src = self.value();
        debug_assert_eq!(src.nrows(), indices.len());
        let mut value = Array2::zeros((indices.len(), 1));
        for (i, &c) in indices.iter().enumerate() {
            value[[i, 0]] = src[[i, c]];
        }
        drop(src);
        let (rows, cols) = self.shape();
        let idx = indices.to_vec();
        Var::child(
            value,
            vec![self.clone()],
            Box::new(move |g| {
                let mut dg = Array2::zeros((rows, cols));
                for (i, &c) in idx.iter().enumerate() {
                    dg[[i, c]] += g[[i, 0]];
                }
                vec![dg]
            }),
        )
    }

    /// Multiply every row i by mask[i]; mask is a constant column vector.
    pub fn mul_col(&self, mask: &Array2<f64>) -> Var {
        debug_assert_eq!(mask.ncols(), 1);
        let value = &*self.value() * mask;
        let mask = mask.clone();
        Var::child(
            value,
            vec![self.clone()],
            Box::new(move |g| vec![g * &mask]),
        )
    }

    /// Add a bias row vector [1, d] to every row.
    pub fn add_bias(&self, bias: &Var) -> Var {
        debug_assert_eq!(bias.shape().0, 1);
        let value = &*self.value() + &*bias.value();
        Var::child(
            value,
            vec![self.clone(), bias.clone()],
            Box::new(|g| {
                let col_sum = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                vec![g.clone(), col_sum]
            }),
        )
    }

    pub fn matmul(&self, other: &Var) -> Var {
        let value = self.value().dot(&*other.value());
        let a = self.clone();
        let b = other.clone();
        Var::child(
            value,
            vec![self.clone(), other.clone()],
            Box::new(move |g| {
                let da = g.dot(&b.value().t());
                let db = a.value().t().dot(g);
                vec![da, db]
            }),
        )
    }

    pub fn t(&self) -> Var {
        let value = self.value().t().to_owned();
        Var::child(
            value,
            vec![self.clone()],
            Box::new(|g| vec![g.t().to_owned()]),
        )
    }

    pub fn sigmoid(&self) -> Var {
        let value = self.value().mapv(|x| 1.0 / (1.0 + (-x).exp()));
        let out = value.clone();
        Var::child(
            value,
            vec![self.clone()],
            Box::new(move |g| vec![g * &(&out * &out.mapv(|y| 1.0 - y))]),
        )
    }

    pub fn tanh(&self) -> Var {
        let value = self.value().mapv(f64::tanh);
        let out = value.clone();
        Var::child(
            value,
            vec![self.clone()],
            Box::new(move |g| vec![g * &out.mapv(|y| 1.0 - y * y)]),
        )
    }

    pub fn relu(&self) -> Var {
        let value = self.value().mapv(|x| x.max(0.0));
        let mask = self.value().mapv(|x| if x > 0.0 { 1.0 } else { 0.0 });
        Var::child(
            value,
            vec![self.clone()],
            Box::new(move |g| vec![g * &mask]),
        )
    }

    pub fn slice_cols(&self, range: Range<usize>) -> Var {
        let full_cols = self.shape().1;
        let value = self
            .value()
            .slice(ndarray::s![.., range.start..range.end])
            .to_owned();
        let r = range.clone();
        Var::child(
            value,
            vec![self.clone()],
            Box::new(move |g| {
                let mut dg = Array2::zeros((g.nrows(), full_cols));
                dg.slice_mut(ndarray::s![.., r.start..r.end]).assign(g);
                vec![dg]
            }),
        )
    }

    pub fn concat_cols(parts: &[Var]) -> Var {
        let owned: Vec<Array2<f64>> = parts.iter().map(|p| p.value().clone()).collect();
        let views: Vec<ArrayView2<f64>> = owned.iter().map(|a| a.view()).collect();
        let value = concatenate(Axis(1), &views).expect("column concat");
        let widths: Vec<usize> = owned.iter().map(|a| a.ncols()).collect();
        Var::child(
            value,
            parts.to_vec(),
            Box::new(move |g| {
                let mut out = Vec::with_capacity(widths.len());
                let mut off = 0;
                for &w in &widths {
                    out.push(g.slice(ndarray::s![.., off..off + w]).to_owned());
                    off += w;
                }
                out
            }),
        )
    }

    pub fn concat_rows(parts: &[Var]) -> Var {
        let owned: Vec<Array2<f64>> = parts.iter().map(|p| p.value().clone()).collect();
        let views: Vec<ArrayView2<f64>> = owned.iter().map(|a| a.view()).collect();
        let value = concatenate(Axis(0), &views).expect("row concat");
        let heights: Vec<usize> = owned.iter().map(|a| a.nrows()).collect();
        Var::child(
            value,
            parts.to_vec(),
            Box::new(move |g| {
                let mut out = Vec::with_capacity(heights.len());
                let mut off = 0;
                for &h in &heights {
                    out.push(g.slice(ndarray::s![off..off + h, ..]).to_owned());
                    off += h;
                }
                out
            }),
        )
    }

    /// out[i, :] = self[indices[i], :]. Backward scatter-adds.
    pub fn gather_rows(&self, indices: &[usize]) -> Var {
        let src = self.value();
        let mut value = Array2::zeros((indices.len(), src.ncols()));
        for (i, &r) in indices.iter().enumerate() {
            value.row_mut(i).assign(&src.row(r));
        }
        drop(src);
        let (rows, cols) = self.shape();
        let idx = indices.to_vec();
        Var::child(
            value,
            vec![self.clone()],
            Box::new(move |g| {
                let mut dg = Array2::zeros((rows, cols));
                for (i, &r) in idx.iter().enumerate() {
                    let mut row = dg.row_mut(r);
                    row += &g.row(i);
                }
                vec![dg]
            }),
        )
    }

    /// out[i, r] = self[r, indices[i]]: one column per index, transposed.
    pub fn gather_cols_t(&self, indices: &[usize]) -> Var {
        let src = self.value();
        let mut value = Array2::zeros((indices.len(), src.nrows()));
        for (i, &c) in indices.iter().enumerate() {
            value.row_mut(i).assign(&src.column(c));
        }
        drop(src);
        let (rows, cols) = self.shape();
        let idx = indices.to_vec();
        Var::child(
            value,
            vec![self.clone()],
            Box::new(move |g| {
                let mut dg = Array2::zeros((rows, cols));
                for (i, &c) in idx.iter().enumerate() {
                    let mut col = dg.column_mut(c);
                    col += &g.row(i);
                }
                vec![dg]
            }),
        )
    }

    pub fn softmax_rows(&self) -> Var {
        let value = softmax(&self.value());
        let s = value.clone();
        Var::child(
            value,
            vec![self.clone()],
            Box::new(move |g| {
                let dot = (g * &s).sum_axis(Axis(1)).insert_axis(Axis(1));
                vec![&s * &(g - &dot)]
            }),
        )
    }

    pub fn log_softmax_rows(&self) -> Var {
        let v = self.value();
        let max = v.fold_axis(Axis(1), f64::NEG_INFINITY, |&a, &b| a.max(b));
        let shifted = &*v - &max.insert_axis(Axis(1));
        let lse = shifted
            .mapv(f64::exp)
            .sum_axis(Axis(1))
            .mapv(f64::ln)
            .insert_axis(Axis(1));
        let value = shifted - &lse;
        drop(v);
        let softmax = value.mapv(f64::exp);
        Var::child(
            value,
            vec![self.clone()],
            Box::new(move |g| {
                let row_sum = g.sum_axis(Axis(1)).insert_axis(Axis(1));
                vec![g - &(&softmax * &row_sum)]
            }),
        )
    }

    /// Row-wise logsumexp, output [n, 1].
    pub fn logsumexp_rows(&self) -> Var {
        let v = self.value();
        let max = v.fold_axis(Axis(1), f64::NEG_INFINITY, |&a, &b| a.max(b));
        let shifted = &*v - &max.clone().insert_axis(Axis(1));
        let sum = shifted.mapv(f64::exp).sum_axis(Axis(1));
        let value = (max + sum.mapv(f64::ln)).insert_axis(Axis(1));
        let softmax = (&*v - &value).mapv(f64::exp);
        drop(v);
        Var::child(
            value,
            vec![self.clone()],
            Box::new(move |g| vec![&softmax * g]),
        )
    }

    pub fn sum_all(&self) -> Var {
        let total = self.value().sum();
        let shape = self.value().raw_dim();
        Var::child(
            Array2::from_elem((1, 1), total),
            vec![self.clone()],
            Box::new(move |g| vec![Array2::from_elem(shape, g[[0, 0]])]),
        )
    }

    pub fn mean_all(&self) -> Var {
        let n = self.value().len() as f64;
        self.sum_all().scale(1.0 / n)
    }

    pub fn neg(&self) -> Var {
        self.scale(-1.0)
    }

    /// Straight-through estimator: forward value is `hard`, gradients flow to
    /// `self` unchanged (as if the output were the relaxed `self`).
    pub fn straight_through(&self, hard: Array2<f64>) -> Var {
        debug_assert_eq!(self.value().raw_dim(), hard.raw_dim());
        Var::child(hard, vec![self.clone()], Box::new(|g| vec![g.clone()]))
    }

    /// Stop-gradient view of the current value.
    pub fn detach(&self) -> Var {
        Var::constant(self.value().clone())
    }

    // ---- backward pass ----

    pub fn backward(&self) {
        let order = topo_order(self);
        {
            let mut g = self.0.grad.borrow_mut();
            g.fill(1.0);
        }
        for node in order.iter().rev() {
            let Some(backward) = &node.0.backward else {
                continue;
            };
            let grad_out = node.0.grad.borrow().clone();
            let parent_grads = backward(&grad_out);
            debug_assert_eq!(parent_grads.len(), node.0.parents.len());
            for (parent, pg) in node.0.parents.iter().zip(parent_grads) {
                if parent.0.requires_grad {
                    let mut g = parent.0.grad.borrow_mut();
                    *g += &pg;
                }
            }
        }
    }
}

fn topo_order(root: &Var) -> Vec<Var> {
    let mut order = Vec::new();
    let mut visited: HashSet<*const VarInner> = HashSet::new();
    // Iterative DFS; (node, child cursor).
    let mut stack: Vec<(Var, usize)> = vec![(root.clone(), 0)];
    visited.insert(Rc::as_ptr(&root.0));
    while let Some((node, cursor)) = stack.pop() {
        if cursor < node.0.parents.len() {
            let parent = node.0.parents[cursor].clone();
            stack.push((node, cursor + 1));
            if parent.0.requires_grad && visited.insert(Rc::as_ptr(&parent.0)) {
                stack.push((parent, 0));
            }
        } else {
            order.push(node);
        }
    }
    order
}

pub fn softmax(x: &Array2<f64>) -> Array2<f64> {
    let max = x.fold_axis(Axis(1), f64::NEG_INFINITY, |&a, &b| a.max(b));
    let mut e = (x - &max.insert_axis(Axis(1))).mapv(f64::exp);
    let sum = e.sum_axis(Axis(1)).insert_axis(Axis(1));
    e /= &sum;
    e
}
