use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use num_traits::Float;

use super::tensor::{matmul, matmul_at_acc, matmul_bt_acc};
use super::{AutodiffError, Tensor};

/// Floor applied inside [`Graph::log`].
pub const LOG_FLOOR: f64 = crate::PROB_FLOOR;

const LAYER_NORM_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Param(String),
    Constant,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    ScaleBy(Var, Var),
    AddRow(Var, Var),
    MatMul(Var, Var),
    Transpose(Var),
    Softmax(Var),
    Log(Var),
    Exp(Var),
    Relu(Var),
    Gelu(Var),
    Slice {
        input: Var,
        axis: usize,
        start: usize,
    },
    Concat {
        inputs: Vec<Var>,
        axis: usize,
    },
    Sum(Var),
    Mean(Var),
    Embedding {
        table: Var,
        ids: Vec<usize>,
    },
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    MaskedFill {
        input: Var,
        mask: Vec<bool>,
    },
    ClampMin {
        input: Var,
        floor: f64,
    },
    NormalizeRows(Var),
    Pick {
        input: Var,
        index: Vec<usize>,
    },
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// A single-threaded tape of tensor operations.
#[derive(Debug, Clone, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of a scalar loss with respect to every parameter leaf on the
/// tape, in creation order. Parameters the loss does not depend on get zeros.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    entries: Vec<(Var, String, Tensor)>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.entries.iter().find(|(v, _, _)| *v == var).map(|(_, _, t)| t)
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(_, n, _)| n == name).map(|(_, _, t)| t)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(_, n, _)| n.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (Var, &str, &Tensor)> {
        self.entries.iter().map(|(v, n, t)| (*v, n.as_str(), t))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn into_tensors(self) -> Vec<Tensor> {
        self.entries.into_iter().map(|(_, _, t)| t).collect()
    }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<(), AutodiffError> {
    if a.shape() != b.shape() {
        return Err(AutodiffError::ShapeMismatch {
            op,
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        });
    }
    Ok(())
}

fn rank_2(op: &'static str, t: &Tensor) -> Result<(usize, usize), AutodiffError> {
    match t.shape() {
        [r, c] => Ok((*r, *c)),
        s => Err(AutodiffError::BadRank { op, rank: s.len() }),
    }
}

fn rows_of(op: &'static str, t: &Tensor) -> Result<(usize, usize), AutodiffError> {
    match t.shape() {
        [n] => Ok((1, *n)),
        [r, c] => Ok((*r, *c)),
        s => Err(AutodiffError::BadRank { op, rank: s.len() }),
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        debug_assert!(value.is_finite(), "non-finite value from {op:?}");
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// A differentiated leaf.
    pub fn param(&mut self, name: impl Into<String>, value: Tensor) -> Var {
        self.push(value, Op::Param(name.into()), true)
    }

    /// A leaf treated as a constant by [`Graph::backward`].
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Constant, false)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (x, y) = (self.value(a), self.value(b));
        same_shape("add", x, y)?;
        let data = x.data().iter().zip(y.data()).map(|(p, q)| p + q).collect();
        let t = Tensor::new(x.shape().to_vec(), data)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(t, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (x, y) = (self.value(a), self.value(b));
        same_shape("sub", x, y)?;
        let data = x.data().iter().zip(y.data()).map(|(p, q)| p - q).collect();
        let t = Tensor::new(x.shape().to_vec(), data)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(t, Op::Sub(a, b), rg))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (x, y) = (self.value(a), self.value(b));
        same_shape("mul", x, y)?;
        let data = x.data().iter().zip(y.data()).map(|(p, q)| p * q).collect();
        let t = Tensor::new(x.shape().to_vec(), data)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(t, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let x = self.value(a);
        let t = Tensor::new(x.shape().to_vec(), x.data().iter().map(|v| v * c).collect()).expect("same shape");
        let rg = self.rg(&[a]);
        self.push(t, Op::Scale(a, c), rg)
    }

    /// Multiply every entry of `a` by the scalar node `s`.
    pub fn scale_by(&mut self, a: Var, s: Var) -> Result<Var, AutodiffError> {
        let (x, c) = (self.value(a), self.value(s));
        if c.len() != 1 {
            return Err(AutodiffError::ShapeMismatch {
                op: "scale_by",
                left: x.shape().to_vec(),
                right: c.shape().to_vec(),
            });
        }
        let k = c.data()[0];
        let t = Tensor::new(x.shape().to_vec(), x.data().iter().map(|v| v * k).collect())?;
        let rg = self.rg(&[a, s]);
        Ok(self.push(t, Op::ScaleBy(a, s), rg))
    }

    /// `a (n x d) + b (d)` added to every row.
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (x, y) = (self.value(a), self.value(b));
        let (n, d) = rank_2("add_row", x)?;
        if y.shape() != [d] {
            return Err(AutodiffError::ShapeMismatch {
                op: "add_row",
                left: x.shape().to_vec(),
                right: y.shape().to_vec(),
            });
        }
        let mut data = x.data().to_vec();
        for r in 0..n {
            for (o, bv) in data[r * d..(r + 1) * d].iter_mut().zip(y.data()) {
                *o += bv;
            }
        }
        let t = Tensor::matrix(n, d, data);
        let rg = self.rg(&[a, b]);
        Ok(self.push(t, Op::AddRow(a, b), rg))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (x, y) = (self.value(a), self.value(b));
        let mismatch = || AutodiffError::ShapeMismatch {
            op: "matmul",
            left: x.shape().to_vec(),
            right: y.shape().to_vec(),
        };
        let (n, k) = rank_2("matmul", x).map_err(|_| mismatch())?;
        let (k2, m) = rank_2("matmul", y).map_err(|_| mismatch())?;
        if k != k2 {
            return Err(mismatch());
        }
        let t = Tensor::matrix(n, m, matmul(x.data(), y.data(), n, k, m));
        let rg = self.rg(&[a, b]);
        Ok(self.push(t, Op::MatMul(a, b), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let x = self.value(a);
        let (r, c) = rank_2("transpose", x)?;
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = x.data()[i * c + j];
            }
        }
        let t = Tensor::matrix(c, r, data);
        let rg = self.rg(&[a]);
        Ok(self.push(t, Op::Transpose(a), rg))
    }

    /// Softmax over the last axis (each row of a matrix).
    pub fn softmax(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let x = self.value(a);
        let (n, d) = rows_of("softmax", x)?;
        let mut data = Vec::with_capacity(n * d);
        for r in 0..n {
            data.extend(crate::prob::softmax(&x.data()[r * d..(r + 1) * d]));
        }
        let t = Tensor::new(x.shape().to_vec(), data)?;
        let rg = self.rg(&[a]);
        Ok(self.push(t, Op::Softmax(a), rg))
    }

    /// `ln(max(x, LOG_FLOOR))`. The gradient is zero where the floor binds.
    pub fn log(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let t = Tensor::new(
            x.shape().to_vec(),
            x.data().iter().map(|v| v.max(LOG_FLOOR).ln()).collect(),
        )
        .expect("same shape");
        let rg = self.rg(&[a]);
        self.push(t, Op::Log(a), rg)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let t = Tensor::new(x.shape().to_vec(), x.data().iter().map(|v| v.exp()).collect()).expect("same shape");
        let rg = self.rg(&[a]);
        self.push(t, Op::Exp(a), rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let t = Tensor::new(x.shape().to_vec(), x.data().iter().map(|v| v.max(0.0)).collect()).expect("same shape");
        let rg = self.rg(&[a]);
        self.push(t, Op::Relu(a), rg)
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let t = Tensor::new(
            x.shape().to_vec(),
            x.data()
                .iter()
                .map(|&v| 0.5 * v * (1.0 + (GELU_C * (v + 0.044715 * v * v * v)).tanh()))
                .collect(),
        )
        .expect("same shape");
        let rg = self.rg(&[a]);
        self.push(t, Op::Gelu(a), rg)
    }

    /// `[start, end)` along `axis` of a rank-1 or rank-2 tensor.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, end: usize) -> Result<Var, AutodiffError> {
        let x = self.value(a);
        let shape = x.shape().to_vec();
        if axis >= shape.len() || shape.len() > 2 {
            return Err(AutodiffError::BadRank {
                op: "slice",
                rank: shape.len(),
            });
        }
        if start > end || end > shape[axis] {
            return Err(AutodiffError::IndexOutOfRange {
                op: "slice",
                index: end,
                extent: shape[axis],
            });
        }
        let t = match (shape.as_slice(), axis) {
            ([_], _) => Tensor::vector(x.data()[start..end].to_vec()),
            ([_, c], 0) => Tensor::matrix(end - start, *c, x.data()[start * c..end * c].to_vec()),
            ([r, c], _) => {
                let w = end - start;
                let mut data = Vec::with_capacity(r * w);
                for i in 0..*r {
                    data.extend_from_slice(&x.data()[i * c + start..i * c + end]);
                }
                Tensor::matrix(*r, w, data)
            }
            _ => unreachable!(),
        };
        let rg = self.rg(&[a]);
        Ok(self.push(t, Op::Slice { input: a, axis, start }, rg))
    }

    /// Join rank-1 tensors, or rank-2 tensors along rows (`axis = 0`) or
    /// columns (`axis = 1`).
    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var, AutodiffError> {
        let first = self
            .nodes
            .get(inputs.first().map_or(usize::MAX, |v| v.0))
            .ok_or(AutodiffError::BadRank { op: "concat", rank: 0 })?
            .value
            .shape()
            .to_vec();
        if axis >= first.len() || first.len() > 2 {
            return Err(AutodiffError::BadRank {
                op: "concat",
                rank: first.len(),
            });
        }
        for v in inputs {
            let s = self.value(*v).shape();
            let ok = s.len() == first.len() && s.iter().zip(&first).enumerate().all(|(i, (p, q))| i == axis || p == q);
            if !ok {
                return Err(AutodiffError::ShapeMismatch {
                    op: "concat",
                    left: first.clone(),
                    right: s.to_vec(),
                });
            }
        }
        let total: usize = inputs.iter().map(|v| self.value(*v).shape()[axis]).sum();
        let t = if first.len() == 1 || axis == 0 {
            let mut data = Vec::new();
            for v in inputs {
                data.extend_from_slice(self.value(*v).data());
            }
            let mut shape = first.clone();
            shape[0] = total;
            Tensor::new(shape, data)?
        } else {
            let rows = first[0];
            let mut data = Vec::with_capacity(rows * total);
            for r in 0..rows {
                for v in inputs {
                    data.extend_from_slice(self.value(*v).row(r));
                }
            }
            Tensor::matrix(rows, total, data)
        };
        let rg = self.rg(inputs);
        Ok(self.push(
            t,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            rg,
        ))
    }

    /// Sum of all entries, as a scalar.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let rg = self.rg(&[a]);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let s = x.data().iter().sum::<f64>() / x.len().max(1) as f64;
        let rg = self.rg(&[a]);
        self.push(Tensor::scalar(s), Op::Mean(a), rg)
    }

    /// Rows of `table (V x d)` selected by `ids`, as an `ids.len() x d` matrix.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var, AutodiffError> {
        let t = self.value(table);
        let (v, d) = rank_2("embedding", t)?;
        let mut data = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= v {
                return Err(AutodiffError::IndexOutOfRange {
                    op: "embedding",
                    index: id,
                    extent: v,
                });
            }
            data.extend_from_slice(t.row(id));
        }
        let out = Tensor::matrix(ids.len(), d, data);
        let rg = self.rg(&[table]);
        Ok(self.push(
            out,
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
            rg,
        ))
    }

    /// Per-row layer normalization with gain and bias of length `d`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var, AutodiffError> {
        let xv = self.value(x);
        let (n, d) = rank_2("layer_norm", xv)?;
        for p in [gamma, beta] {
            if self.value(p).shape() != [d] {
                return Err(AutodiffError::ShapeMismatch {
                    op: "layer_norm",
                    left: xv.shape().to_vec(),
                    right: self.value(p).shape().to_vec(),
                });
            }
        }
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let mut xhat = Vec::with_capacity(n * d);
        let mut inv_std = Vec::with_capacity(n);
        let mut out = Vec::with_capacity(n * d);
        for r in 0..n {
            let row = xv.row(r);
            let mu = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std.push(is);
            for j in 0..d {
                let h = (row[j] - mu) * is;
                xhat.push(h);
                out.push(g[j] * h + b[j]);
            }
        }
        let t = Tensor::matrix(n, d, out);
        let rg = self.rg(&[x, gamma, beta]);
        Ok(self.push(
            t,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            rg,
        ))
    }

    /// Replace entries where `mask` is true by `value`.
    pub fn masked_fill(&mut self, a: Var, mask: &[bool], value: f64) -> Result<Var, AutodiffError> {
        let x = self.value(a);
        if mask.len() != x.len() {
            return Err(AutodiffError::ShapeMismatch {
                op: "masked_fill",
                left: x.shape().to_vec(),
                right: vec![mask.len()],
            });
        }
        let data = x
            .data()
            .iter()
            .zip(mask)
            .map(|(&v, &m)| if m { value } else { v })
            .collect();
        let t = Tensor::new(x.shape().to_vec(), data)?;
        let rg = self.rg(&[a]);
        Ok(self.push(
            t,
            Op::MaskedFill {
                input: a,
                mask: mask.to_vec(),
            },
            rg,
        ))
    }

    /// `max(x, floor)`; gradient passes only where `x >= floor`.
    pub fn clamp_min(&mut self, a: Var, floor: f64) -> Var {
        let x = self.value(a);
        let t = Tensor::new(x.shape().to_vec(), x.data().iter().map(|v| v.max(floor)).collect()).expect("same shape");
        let rg = self.rg(&[a]);
        self.push(t, Op::ClampMin { input: a, floor }, rg)
    }

    /// Divide each row by its sum. Rows must have positive mass.
    pub fn normalize_rows(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let x = self.value(a);
        let (n, d) = rows_of("normalize_rows", x)?;
        let mut data = x.data().to_vec();
        for r in 0..n {
            let row = &mut data[r * d..(r + 1) * d];
            let s: f64 = row.iter().sum();
            for v in row {
                *v /= s;
            }
        }
        let t = Tensor::new(x.shape().to_vec(), data)?;
        let rg = self.rg(&[a]);
        Ok(self.push(t, Op::NormalizeRows(a), rg))
    }

    /// `out[i] = a[i, index[i]]` for a matrix `a`.
    pub fn pick(&mut self, a: Var, index: &[usize]) -> Result<Var, AutodiffError> {
        let x = self.value(a);
        let (n, d) = rank_2("pick", x)?;
        if index.len() != n {
            return Err(AutodiffError::ShapeMismatch {
                op: "pick",
                left: x.shape().to_vec(),
                right: vec![index.len()],
            });
        }
        let mut data = Vec::with_capacity(n);
        for (r, &j) in index.iter().enumerate() {
            if j >= d {
                return Err(AutodiffError::IndexOutOfRange {
                    op: "pick",
                    index: j,
                    extent: d,
                });
            }
            data.push(x.data()[r * d + j]);
        }
        let rg = self.rg(&[a]);
        Ok(self.push(
            Tensor::vector(data),
            Op::Pick {
                input: a,
                index: index.to_vec(),
            },
            rg,
        ))
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients, AutodiffError> {
        let lv = self.value(loss);
        if lv.len() != 1 || lv.rank() > 1 {
            return Err(AutodiffError::NonScalarLoss(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::full(lv.shape(), 1.0));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            if let Op::Param(_) = node.op {
                grads[i] = Some(g);
                continue;
            }
            self.propagate(node, &g, &mut grads);
        }

        let mut entries = Vec::new();
        for (i, node) in self.nodes.iter().enumerate() {
            if let Op::Param(name) = &node.op {
                let g = grads
                    .get_mut(i)
                    .and_then(Option::take)
                    .unwrap_or_else(|| Tensor::zeros(node.value.shape()));
                entries.push((Var(i), name.clone(), g));
            }
        }
        Ok(Gradients { entries })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, contribution: Tensor) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(t) => t.add_assign(&contribution),
            slot @ None => *slot = Some(contribution),
        }
    }

    /// Like [`Graph::accumulate`] but lets the caller write into the slot.
    fn with_grad(&self, grads: &mut [Option<Tensor>], v: Var, f: impl FnOnce(&mut [f64])) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        let slot = grads[v.0].get_or_insert_with(|| Tensor::zeros(self.nodes[v.0].value.shape()));
        f(slot.data_mut());
    }

    fn map_grad(shape: &[usize], g: &Tensor, f: impl Fn(usize, f64) -> f64) -> Tensor {
        Tensor::new(
            shape.to_vec(),
            g.data().iter().enumerate().map(|(i, &gv)| f(i, gv)).collect(),
        )
        .expect("gradient shape")
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let y = &node.value;
        match &node.op {
            Op::Param(_) | Op::Constant => {}
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, Self::map_grad(g.shape(), g, |_, v| -v));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                self.accumulate(grads, *a, Self::map_grad(g.shape(), g, |i, v| v * bv.data()[i]));
                self.accumulate(grads, *b, Self::map_grad(g.shape(), g, |i, v| v * av.data()[i]));
            }
            Op::Scale(a, c) => {
                self.accumulate(grads, *a, Self::map_grad(g.shape(), g, |_, v| v * c));
            }
            Op::ScaleBy(a, s) => {
                let (x, c) = (self.value(*a), self.value(*s));
                let k = c.data()[0];
                self.accumulate(grads, *a, Self::map_grad(g.shape(), g, |_, v| v * k));
                let dot: f64 = g.data().iter().zip(x.data()).map(|(p, q)| p * q).sum();
                self.with_grad(grads, *s, |out| out[0] += dot);
            }
            Op::AddRow(a, b) => {
                self.accumulate(grads, *a, g.clone());
                let (n, d) = g.as_matrix();
                self.with_grad(grads, *b, |out| {
                    for r in 0..n {
                        for (o, gv) in out.iter_mut().zip(&g.data()[r * d..(r + 1) * d]) {
                            *o += gv;
                        }
                    }
                });
            }
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (n, k) = av.as_matrix();
                let m = bv.as_matrix().1;
                self.with_grad(grads, *a, |out| matmul_bt_acc(g.data(), bv.data(), n, k, m, out));
                self.with_grad(grads, *b, |out| matmul_at_acc(av.data(), g.data(), n, k, m, out));
            }
            Op::Transpose(a) => {
                let (r, c) = y.as_matrix();
                self.with_grad(grads, *a, |out| {
                    for i in 0..r {
                        for j in 0..c {
                            out[j * r + i] += g.data()[i * c + j];
                        }
                    }
                });
            }
            Op::Softmax(a) => {
                let (n, d) = y.as_matrix();
                self.with_grad(grads, *a, |out| {
                    for r in 0..n {
                        let yr = &y.data()[r * d..(r + 1) * d];
                        let gr = &g.data()[r * d..(r + 1) * d];
                        let dot: f64 = yr.iter().zip(gr).map(|(p, q)| p * q).sum();
                        for j in 0..d {
                            out[r * d + j] += yr[j] * (gr[j] - dot);
                        }
                    }
                });
            }
            Op::Log(a) => {
                let x = self.value(*a);
                self.accumulate(
                    grads,
                    *a,
                    Self::map_grad(g.shape(), g, |i, v| {
                        let xv = x.data()[i];
                        if xv > LOG_FLOOR {
                            v / xv
                        } else {
                            0.0
                        }
                    }),
                );
            }
            Op::Exp(a) => {
                self.accumulate(grads, *a, Self::map_grad(g.shape(), g, |i, v| v * y.data()[i]));
            }
            Op::Relu(a) => {
                let x = self.value(*a);
                self.accumulate(
                    grads,
                    *a,
                    Self::map_grad(g.shape(), g, |i, v| if x.data()[i] > 0.0 { v } else { 0.0 }),
                );
            }
            Op::Gelu(a) => {
                let x = self.value(*a);
                self.accumulate(
                    grads,
                    *a,
                    Self::map_grad(g.shape(), g, |i, v| {
                        let xv = x.data()[i];
                        let inner = GELU_C * (xv + 0.044715 * xv * xv * xv);
                        let t = inner.tanh();
                        let dinner = GELU_C * (1.0 + 3.0 * 0.044715 * xv * xv);
                        v * (0.5 * (1.0 + t) + 0.5 * xv * (1.0 - t * t) * dinner)
                    }),
                );
            }
            Op::Slice { input, axis, start } => {
                let in_shape = self.value(*input).shape().to_vec();
                let (start, axis) = (*start, *axis);
                self.with_grad(grads, *input, |out| match (in_shape.as_slice(), axis) {
                    ([_], _) => {
                        for (i, gv) in g.data().iter().enumerate() {
                            out[start + i] += gv;
                        }
                    }
                    ([_, c], 0) => {
                        for (i, gv) in g.data().iter().enumerate() {
                            out[start * c + i] += gv;
                        }
                    }
                    ([_, c], _) => {
                        let (rows, w) = g.as_matrix();
                        for r in 0..rows {
                            for j in 0..w {
                                out[r * c + start + j] += g.data()[r * w + j];
                            }
                        }
                    }
                    _ => unreachable!(),
                });
            }
            Op::Concat { inputs, axis } => {
                let mut offset = 0;
                let rank = y.rank();
                let (rows, total) = y.as_matrix();
                for v in inputs {
                    let shape = self.value(*v).shape().to_vec();
                    if rank == 1 || *axis == 0 {
                        let len: usize = shape.iter().product();
                        let part = g.data()[offset..offset + len].to_vec();
                        offset += len;
                        self.accumulate(grads, *v, Tensor::new(shape, part).expect("shape"));
                    } else {
                        let w = shape[1];
                        let mut part = Vec::with_capacity(rows * w);
                        for r in 0..rows {
                            part.extend_from_slice(&g.data()[r * total + offset..r * total + offset + w]);
                        }
                        offset += w;
                        self.accumulate(grads, *v, Tensor::new(shape, part).expect("shape"));
                    }
                }
            }
            Op::Sum(a) => {
                let gv = g.item();
                let shape = self.value(*a).shape().to_vec();
                self.accumulate(grads, *a, Tensor::full(&shape, gv));
            }
            Op::Mean(a) => {
                let x = self.value(*a);
                let gv = g.item() / x.len().max(1) as f64;
                self.accumulate(grads, *a, Tensor::full(x.shape(), gv));
            }
            Op::Embedding { table, ids } => {
                let d = y.as_matrix().1;
                self.with_grad(grads, *table, |out| {
                    for (r, &id) in ids.iter().enumerate() {
                        for j in 0..d {
                            out[id * d + j] += g.data()[r * d + j];
                        }
                    }
                });
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let (n, d) = y.as_matrix();
                let gam = self.value(*gamma).data();
                self.with_grad(grads, *beta, |out| {
                    for r in 0..n {
                        for j in 0..d {
                            out[j] += g.data()[r * d + j];
                        }
                    }
                });
                self.with_grad(grads, *gamma, |out| {
                    for r in 0..n {
                        for j in 0..d {
                            out[j] += g.data()[r * d + j] * xhat[r * d + j];
                        }
                    }
                });
                self.with_grad(grads, *x, |out| {
                    let mut gh = vec![0.0; d];
                    for r in 0..n {
                        let mut mean_gh = 0.0;
                        let mut mean_ghx = 0.0;
                        for j in 0..d {
                            gh[j] = g.data()[r * d + j] * gam[j];
                            mean_gh += gh[j];
                            mean_ghx += gh[j] * xhat[r * d + j];
                        }
                        mean_gh /= d as f64;
                        mean_ghx /= d as f64;
                        for j in 0..d {
                            out[r * d + j] += inv_std[r] * (gh[j] - mean_gh - xhat[r * d + j] * mean_ghx);
                        }
                    }
                });
            }
            Op::MaskedFill { input, mask } => {
                self.accumulate(
                    grads,
                    *input,
                    Self::map_grad(g.shape(), g, |i, v| if mask[i] { 0.0 } else { v }),
                );
            }
            Op::ClampMin { input, floor } => {
                let x = self.value(*input);
                self.accumulate(
                    grads,
                    *input,
                    Self::map_grad(g.shape(), g, |i, v| if x.data()[i] >= *floor { v } else { 0.0 }),
                );
            }
            Op::NormalizeRows(a) => {
                let x = self.value(*a);
                let (n, d) = y.as_matrix();
                self.with_grad(grads, *a, |out| {
                    for r in 0..n {
                        let s: f64 = x.data()[r * d..(r + 1) * d].iter().sum();
                        let yr = &y.data()[r * d..(r + 1) * d];
                        let gr = &g.data()[r * d..(r + 1) * d];
                        let dot: f64 = yr.iter().zip(gr).map(|(p, q)| p * q).sum();
                        for j in 0..d {
                            out[r * d + j] += (gr[j] - dot) / s;
                        }
                    }
                });
            }
            Op::Pick { input, index } => {
                let d = self.value(*input).as_matrix().1;
                self.with_grad(grads, *input, |out| {
                    for (r, &j) in index.iter().enumerate() {
                        out[r * d + j] += g.data()[r];
                    }
                });
            }
        }
    }
}
