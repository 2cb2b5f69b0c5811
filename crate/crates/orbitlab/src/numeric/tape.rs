//! Reverse-mode autodiff over a flat recording tape.
//!
//! Nodes hold whole tensors, so a full sequence forward of the policy is a
//! hundred-odd nodes rather than millions of scalar ops. The tape is
//! single-writer; distinct tapes are independent and can run concurrently.

use super::{NumericError, Result, Tensor};

/// Handle to a node on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Unary {
    Gelu,
    Relu,
    Tanh,
    Exp,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Const,
    /// Row lookup: out[t] = table[ids[t]].
    Embed { table: Var, ids: Vec<usize> },
    /// out = a @ b
    MatMul { a: Var, b: Var },
    /// out = a @ b^T
    MatMulNT { a: Var, b: Var },
    /// out = x @ w + b (bias broadcast across rows)
    Affine { x: Var, w: Var, b: Var },
    Add { a: Var, b: Var },
    Sub { a: Var, b: Var },
    Mul { a: Var, b: Var },
    /// Elementwise min; gradient follows the smaller input (ties -> a).
    Min { a: Var, b: Var },
    AddScalar { a: Var, c: f64 },
    MulScalar { a: Var, c: f64 },
    /// Clamp to [lo, hi]; zero gradient outside the open interval.
    Clamp { a: Var, lo: f64, hi: f64 },
    Unary { a: Var, kind: Unary },
    /// Row-wise x / sqrt(mean(x^2) + eps).
    RmsNorm { a: Var, eps: f64 },
    /// out[i][j] = x[i][j] * g[j].
    ColScale { x: Var, g: Var },
    /// Row-wise softmax over the last axis.
    Softmax { a: Var },
    LogSoftmax { a: Var },
    /// out[k] = x[idx[k].0][idx[k].1].
    Gather { a: Var, idx: Vec<(usize, usize)> },
    /// Same data, new shape.
    Reshape { a: Var },
    Sum { a: Var },
    Mean { a: Var },
}

struct Node {
    op: Op,
    out: Tensor,
}

/// Recording tape. Leaves are parameter tensors; `backward` returns one
/// gradient per node, queried through [`Tape::grad`].
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

pub(crate) fn gelu(x: f64) -> f64 {
    // tanh approximation
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    0.5 * x * (1.0 + (C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4;
    let u = C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    let du = C * (1.0 + 3.0 * 0.044715 * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}

impl Tape {
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
        &self.nodes[v.0].out
    }

    fn push(&mut self, op: Op, out: Tensor) -> Var {
        self.nodes.push(Node { op, out });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(Op::Leaf, t)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(Op::Const, t)
    }

    pub fn embed(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let tab = self.value(table);
        let (rows, d) = tab.dims2();
        for &id in ids {
            if id >= rows {
                return Err(NumericError::IndexOutOfBounds {
                    op: "embed",
                    index: id,
                    size: rows,
                });
            }
        }
        let mut data = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            data.extend_from_slice(&tab.data()[id * d..(id + 1) * d]);
        }
        let out = Tensor::from_rows(ids.len(), d, data)?;
        Ok(self.push(
            Op::Embed {
                table,
                ids: ids.to_vec(),
            },
            out,
        ))
    }

    fn matmul_raw(a: &Tensor, b: &Tensor) -> Result<Tensor> {
        let (m, k) = a.dims2();
        let (k2, n) = b.dims2();
        if k != k2 {
            return Err(NumericError::ShapeMismatch {
                op: "matmul",
                expected: vec![m, k],
                got: vec![k2, n],
            });
        }
        let mut out = vec![0.0; m * n];
        let ad = a.data();
        let bd = b.data();
        for i in 0..m {
            let arow = &ad[i * k..(i + 1) * k];
            let orow = &mut out[i * n..(i + 1) * n];
            for (kk, &av) in arow.iter().enumerate() {
                if av == 0.0 {
                    continue;
                }
                let brow = &bd[kk * n..(kk + 1) * n];
                for j in 0..n {
                    orow[j] += av * brow[j];
                }
            }
        }
        Tensor::from_rows(m, n, out)
    }

    fn matmul_nt_raw(a: &Tensor, b: &Tensor) -> Result<Tensor> {
        let (m, k) = a.dims2();
        let (n, k2) = b.dims2();
        if k != k2 {
            return Err(NumericError::ShapeMismatch {
                op: "matmul_nt",
                expected: vec![m, k],
                got: vec![n, k2],
            });
        }
        let mut out = vec![0.0; m * n];
        let ad = a.data();
        let bd = b.data();
        for i in 0..m {
            let arow = &ad[i * k..(i + 1) * k];
            for j in 0..n {
                let brow = &bd[j * k..(j + 1) * k];
                out[i * n + j] = arow.iter().zip(brow).map(|(x, y)| x * y).sum();
            }
        }
        Tensor::from_rows(m, n, out)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = Self::matmul_raw(self.value(a), self.value(b))?;
        Ok(self.push(Op::MatMul { a, b }, out))
    }

    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = Self::matmul_nt_raw(self.value(a), self.value(b))?;
        Ok(self.push(Op::MatMulNT { a, b }, out))
    }

    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let mut out = Self::matmul_raw(self.value(x), self.value(w))?;
        let bias = self.value(b);
        let (_, n) = out.dims2();
        if bias.len() != n {
            return Err(NumericError::ShapeMismatch {
                op: "affine bias",
                expected: vec![n],
                got: bias.shape().to_vec(),
            });
        }
        let bd = bias.data().to_vec();
        for row in out.data_mut().chunks_mut(n) {
            for (v, bv) in row.iter_mut().zip(&bd) {
                *v += bv;
            }
        }
        Ok(self.push(Op::Affine { x, w, b }, out))
    }

    fn zip_op(
        &mut self,
        a: Var,
        b: Var,
        op: &'static str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(NumericError::ShapeMismatch {
                op,
                expected: ta.shape().to_vec(),
                got: tb.shape().to_vec(),
            });
        }
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Tensor::new(ta.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_op(a, b, "add", |x, y| x + y)?;
        Ok(self.push(Op::Add { a, b }, out))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_op(a, b, "sub", |x, y| x - y)?;
        Ok(self.push(Op::Sub { a, b }, out))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_op(a, b, "mul", |x, y| x * y)?;
        Ok(self.push(Op::Mul { a, b }, out))
    }

    pub fn min(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_op(a, b, "min", f64::min)?;
        Ok(self.push(Op::Min { a, b }, out))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        let t = self.value(a);
        let out = Tensor::new(t.shape().to_vec(), t.data().iter().map(|v| v + c).collect())?;
        Ok(self.push(Op::AddScalar { a, c }, out))
    }

    pub fn mul_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        let t = self.value(a);
        let out = Tensor::new(t.shape().to_vec(), t.data().iter().map(|v| v * c).collect())?;
        Ok(self.push(Op::MulScalar { a, c }, out))
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Result<Var> {
        let t = self.value(a);
        let out = Tensor::new(
            t.shape().to_vec(),
            t.data().iter().map(|v| v.clamp(lo, hi)).collect(),
        )?;
        Ok(self.push(Op::Clamp { a, lo, hi }, out))
    }

    pub fn unary(&mut self, a: Var, kind: Unary) -> Result<Var> {
        let t = self.value(a);
        let f = match kind {
            Unary::Gelu => gelu,
            Unary::Relu => |x: f64| x.max(0.0),
            Unary::Tanh => f64::tanh,
            Unary::Exp => f64::exp,
        };
        let out = Tensor::new(t.shape().to_vec(), t.data().iter().map(|&v| f(v)).collect())?;
        Ok(self.push(Op::Unary { a, kind }, out))
    }

    pub fn rmsnorm(&mut self, a: Var, eps: f64) -> Result<Var> {
        let t = self.value(a);
        let (rows, d) = t.dims2();
        let mut data = Vec::with_capacity(rows * d);
        for row in t.data().chunks(d) {
            let ms = row.iter().map(|v| v * v).sum::<f64>() / d as f64;
            let r = 1.0 / (ms + eps).sqrt();
            data.extend(row.iter().map(|v| v * r));
        }
        let out = Tensor::from_rows(rows, d, data)?;
        Ok(self.push(Op::RmsNorm { a, eps }, out))
    }

    pub fn col_scale(&mut self, x: Var, g: Var) -> Result<Var> {
        let t = self.value(x);
        let gt = self.value(g);
        let (rows, d) = t.dims2();
        if gt.len() != d {
            return Err(NumericError::ShapeMismatch {
                op: "col_scale",
                expected: vec![d],
                got: gt.shape().to_vec(),
            });
        }
        let gd = gt.data();
        let mut data = Vec::with_capacity(rows * d);
        for row in t.data().chunks(d) {
            data.extend(row.iter().zip(gd).map(|(v, gv)| v * gv));
        }
        let out = Tensor::from_rows(rows, d, data)?;
        Ok(self.push(Op::ColScale { x, g }, out))
    }

    fn softmax_rows(t: &Tensor) -> (Vec<f64>, usize, usize) {
        let (rows, d) = t.dims2();
        let mut data = Vec::with_capacity(rows * d);
        for row in t.data().chunks(d) {
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let ex: Vec<f64> = row.iter().map(|v| (v - mx).exp()).collect();
            let s: f64 = ex.iter().sum();
            data.extend(ex.iter().map(|v| v / s));
        }
        (data, rows, d)
    }

    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let (data, rows, d) = Self::softmax_rows(self.value(a));
        let out = Tensor::from_rows(rows, d, data)?;
        Ok(self.push(Op::Softmax { a }, out))
    }

    pub fn log_softmax(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let (rows, d) = t.dims2();
        let mut data = Vec::with_capacity(rows * d);
        for row in t.data().chunks(d) {
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = row.iter().map(|v| (v - mx).exp()).sum::<f64>().ln() + mx;
            data.extend(row.iter().map(|v| v - lse));
        }
        let out = Tensor::from_rows(rows, d, data)?;
        Ok(self.push(Op::LogSoftmax { a }, out))
    }

    pub fn gather(&mut self, a: Var, idx: &[(usize, usize)]) -> Result<Var> {
        let t = self.value(a);
        let (rows, d) = t.dims2();
        let mut data = Vec::with_capacity(idx.len());
        for &(r, c) in idx {
            if r >= rows {
                return Err(NumericError::IndexOutOfBounds {
                    op: "gather row",
                    index: r,
                    size: rows,
                });
            }
            if c >= d {
                return Err(NumericError::IndexOutOfBounds {
                    op: "gather col",
                    index: c,
                    size: d,
                });
            }
            data.push(t.data()[r * d + c]);
        }
        let out = Tensor::new(vec![idx.len()], data)?;
        Ok(self.push(
            Op::Gather {
                a,
                idx: idx.to_vec(),
            },
            out,
        ))
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let t = self.value(a);
        let n: usize = shape.iter().product();
        if n != t.len() {
            return Err(NumericError::LengthMismatch {
                op: "reshape",
                shape,
                len: t.len(),
            });
        }
        let out = Tensor::new(shape, t.data().to_vec())?;
        Ok(self.push(Op::Reshape { a }, out))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().sum();
        let out = Tensor::scalar(s);
        Ok(self.push(Op::Sum { a }, out))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let s: f64 = t.data().iter().sum();
        let out = Tensor::scalar(s / t.len() as f64);
        Ok(self.push(Op::Mean { a }, out))
    }

    /// Reverse pass from a scalar output. Returns per-node gradients; query
    /// with [`Tape::grad`]. Each node is visited exactly once, in reverse
    /// recording order, so repeated calls produce identical results.
    pub fn backward(&self, out: Var) -> Result<Gradients> {
        let out_t = &self.nodes[out.0].out;
        if out_t.len() != 1 {
            return Err(NumericError::NotScalar {
                shape: out_t.shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[out.0] = Some(Tensor::new(out_t.shape().to_vec(), vec![1.0]).unwrap());

        for id in (0..=out.0).rev() {
            let g = match grads[id].take() {
                Some(g) => g,
                None => continue,
            };
            let node = &self.nodes[id];
            self.accumulate(&node.op, &node.out, &g, &mut grads)?;
            grads[id] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn acc_into(slot: &mut Option<Tensor>, shape: &[usize], add: &[f64]) {
        match slot {
            Some(t) => {
                for (dst, src) in t.data_mut().iter_mut().zip(add) {
                    *dst += src;
                }
            }
            None => {
                *slot = Some(Tensor::new(shape.to_vec(), add.to_vec()).unwrap());
            }
        }
    }

    #[allow(clippy::too_many_lines)]
    fn accumulate(
        &self,
        op: &Op,
        out: &Tensor,
        g: &Tensor,
        grads: &mut Vec<Option<Tensor>>,
    ) -> Result<()> {
        match op {
            Op::Leaf | Op::Const => {}
            Op::Embed { table, ids } => {
                let tab = self.value(*table);
                let (rows, d) = tab.dims2();
                let mut dt = vec![0.0; rows * d];
                for (t, &id) in ids.iter().enumerate() {
                    for j in 0..d {
                        dt[id * d + j] += g.data()[t * d + j];
                    }
                }
                Self::acc_into(&mut grads[table.0], tab.shape(), &dt);
            }
            Op::MatMul { a, b } => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let da = Self::matmul_nt_raw(g, tb)?;
                let db = Self::tn_matmul_raw(ta, g)?;
                Self::acc_into(&mut grads[a.0], ta.shape(), da.data());
                Self::acc_into(&mut grads[b.0], tb.shape(), db.data());
            }
            Op::MatMulNT { a, b } => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let da = Self::matmul_raw(g, tb)?;
                let db = Self::tn_matmul_raw(g, ta)?;
                Self::acc_into(&mut grads[a.0], ta.shape(), da.data());
                Self::acc_into(&mut grads[b.0], tb.shape(), db.data());
            }
            Op::Affine { x, w, b } => {
                let (tx, tw, tb) = (self.value(*x), self.value(*w), self.value(*b));
                let dx = Self::matmul_nt_raw(g, tw)?;
                let dw = Self::tn_matmul_raw(tx, g)?;
                let (_, n) = g.dims2();
                let mut db = vec![0.0; n];
                for row in g.data().chunks(n) {
                    for (d, v) in db.iter_mut().zip(row) {
                        *d += v;
                    }
                }
                Self::acc_into(&mut grads[x.0], tx.shape(), dx.data());
                Self::acc_into(&mut grads[w.0], tw.shape(), dw.data());
                Self::acc_into(&mut grads[b.0], tb.shape(), &db);
            }
            Op::Add { a, b } => {
                Self::acc_into(&mut grads[a.0], g.shape(), g.data());
                Self::acc_into(&mut grads[b.0], g.shape(), g.data());
            }
            Op::Sub { a, b } => {
                Self::acc_into(&mut grads[a.0], g.shape(), g.data());
                let neg: Vec<f64> = g.data().iter().map(|v| -v).collect();
                Self::acc_into(&mut grads[b.0], g.shape(), &neg);
            }
            Op::Mul { a, b } => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let da: Vec<f64> = g.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect();
                let db: Vec<f64> = g.data().iter().zip(ta.data()).map(|(x, y)| x * y).collect();
                Self::acc_into(&mut grads[a.0], ta.shape(), &da);
                Self::acc_into(&mut grads[b.0], tb.shape(), &db);
            }
            Op::Min { a, b } => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let mut da = vec![0.0; ta.len()];
                let mut db = vec![0.0; tb.len()];
                for i in 0..ta.len() {
                    if ta.data()[i] <= tb.data()[i] {
                        da[i] = g.data()[i];
                    } else {
                        db[i] = g.data()[i];
                    }
                }
                Self::acc_into(&mut grads[a.0], ta.shape(), &da);
                Self::acc_into(&mut grads[b.0], tb.shape(), &db);
            }
            Op::AddScalar { a, .. } => {
                Self::acc_into(&mut grads[a.0], g.shape(), g.data());
            }
            Op::MulScalar { a, c } => {
                let da: Vec<f64> = g.data().iter().map(|v| v * c).collect();
                Self::acc_into(&mut grads[a.0], g.shape(), &da);
            }
            Op::Clamp { a, lo, hi } => {
                let ta = self.value(*a);
                let da: Vec<f64> = ta
                    .data()
                    .iter()
                    .zip(g.data())
                    .map(|(&x, &gv)| if x > *lo && x < *hi { gv } else { 0.0 })
                    .collect();
                Self::acc_into(&mut grads[a.0], ta.shape(), &da);
            }
            Op::Unary { a, kind } => {
                let ta = self.value(*a);
                let da: Vec<f64> = match kind {
                    Unary::Gelu => ta
                        .data()
                        .iter()
                        .zip(g.data())
                        .map(|(&x, &gv)| gv * gelu_grad(x))
                        .collect(),
                    Unary::Relu => ta
                        .data()
                        .iter()
                        .zip(g.data())
                        .map(|(&x, &gv)| if x > 0.0 { gv } else { 0.0 })
                        .collect(),
                    Unary::Tanh => out
                        .data()
                        .iter()
                        .zip(g.data())
                        .map(|(&y, &gv)| gv * (1.0 - y * y))
                        .collect(),
                    Unary::Exp => out
                        .data()
                        .iter()
                        .zip(g.data())
                        .map(|(&y, &gv)| gv * y)
                        .collect(),
                };
                Self::acc_into(&mut grads[a.0], ta.shape(), &da);
            }
            Op::RmsNorm { a, eps } => {
                let ta = self.value(*a);
                let (rows, d) = ta.dims2();
                let mut da = vec![0.0; rows * d];
                for i in 0..rows {
                    let row = &ta.data()[i * d..(i + 1) * d];
                    let grow = &g.data()[i * d..(i + 1) * d];
                    let ms = row.iter().map(|v| v * v).sum::<f64>() / d as f64;
                    let r = 1.0 / (ms + eps).sqrt();
                    let dot: f64 = grow.iter().zip(row).map(|(x, y)| x * y).sum();
                    let k = r * r * r / d as f64;
                    for j in 0..d {
                        da[i * d + j] = r * grow[j] - k * dot * row[j];
                    }
                }
                Self::acc_into(&mut grads[a.0], ta.shape(), &da);
            }
            Op::ColScale { x, g: gain } => {
                let (tx, tg) = (self.value(*x), self.value(*gain));
                let (rows, d) = tx.dims2();
                let mut dx = vec![0.0; rows * d];
                let mut dg = vec![0.0; d];
                for i in 0..rows {
                    for j in 0..d {
                        let gv = g.data()[i * d + j];
                        dx[i * d + j] = gv * tg.data()[j];
                        dg[j] += gv * tx.data()[i * d + j];
                    }
                }
                Self::acc_into(&mut grads[x.0], tx.shape(), &dx);
                Self::acc_into(&mut grads[gain.0], tg.shape(), &dg);
            }
            Op::Softmax { a } => {
                let (rows, d) = out.dims2();
                let mut da = vec![0.0; rows * d];
                for i in 0..rows {
                    let y = &out.data()[i * d..(i + 1) * d];
                    let grow = &g.data()[i * d..(i + 1) * d];
                    let dot: f64 = grow.iter().zip(y).map(|(x, v)| x * v).sum();
                    for j in 0..d {
                        da[i * d + j] = y[j] * (grow[j] - dot);
                    }
                }
                Self::acc_into(&mut grads[a.0], self.value(*a).shape(), &da);
            }
            Op::LogSoftmax { a } => {
                let (rows, d) = out.dims2();
                let mut da = vec![0.0; rows * d];
                for i in 0..rows {
                    let y = &out.data()[i * d..(i + 1) * d];
                    let grow = &g.data()[i * d..(i + 1) * d];
                    let gsum: f64 = grow.iter().sum();
                    for j in 0..d {
                        da[i * d + j] = grow[j] - y[j].exp() * gsum;
                    }
                }
                Self::acc_into(&mut grads[a.0], self.value(*a).shape(), &da);
            }
            Op::Gather { a, idx } => {
                let ta = self.value(*a);
                let (_, d) = ta.dims2();
                let mut da = vec![0.0; ta.len()];
                for (k, &(r, c)) in idx.iter().enumerate() {
                    da[r * d + c] += g.data()[k];
                }
                Self::acc_into(&mut grads[a.0], ta.shape(), &da);
            }
            Op::Reshape { a } => {
                let ta = self.value(*a);
                Self::acc_into(&mut grads[a.0], ta.shape(), g.data());
            }
            Op::Sum { a } => {
                let ta = self.value(*a);
                let da = vec![g.item(); ta.len()];
                Self::acc_into(&mut grads[a.0], ta.shape(), &da);
            }
            Op::Mean { a } => {
                let ta = self.value(*a);
                let da = vec![g.item() / ta.len() as f64; ta.len()];
                Self::acc_into(&mut grads[a.0], ta.shape(), &da);
            }
        }
        Ok(())
    }

    /// b^T-free helper: out = a^T @ b for a:[m,k] b:[m,n] -> [k,n].
    fn tn_matmul_raw(a: &Tensor, b: &Tensor) -> Result<Tensor> {
        let (m, k) = a.dims2();
        let (m2, n) = b.dims2();
        if m != m2 {
            return Err(NumericError::ShapeMismatch {
                op: "matmul_tn",
                expected: vec![m, k],
                got: vec![m2, n],
            });
        }
        let mut out = vec![0.0; k * n];
        for i in 0..m {
            let arow = &a.data()[i * k..(i + 1) * k];
            let brow = &b.data()[i * n..(i + 1) * n];
            for (kk, &av) in arow.iter().enumerate() {
                if av == 0.0 {
                    continue;
                }
                let orow = &mut out[kk * n..(kk + 1) * n];
                for j in 0..n {
                    orow[j] += av * brow[j];
                }
            }
        }
        Tensor::from_rows(k, n, out)
    }
}

/// Gradients from one backward pass, indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the backward output w.r.t. `v` (zeros if unreached).
    pub fn grad(&self, tape: &Tape, v: Var) -> Tensor {
        match &self.grads[v.0] {
            Some(t) => t.clone(),
            None => Tensor::zeros(tape.value(v).shape().to_vec()),
        }
    }

    pub fn grad_ref(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::finite_diff_check;

    #[test]
    fn softmax_symmetry() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new(vec![1, 2], vec![0.0, 0.0]).unwrap());
        let y = tape.softmax(x).unwrap();
        assert_eq!(tape.value(y).data(), &[0.5, 0.5]);
    }

    #[test]
    fn affine_identity_case() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let w = tape.leaf(Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap());
        let b = tape.leaf(Tensor::new(vec![2], vec![0.0, 0.0]).unwrap());
        let y = tape.affine(x, w, b).unwrap();
        assert_eq!(tape.value(y).data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn log_softmax_matches_hand_evaluation() {
        // log(e^z_i / sum e^z_j) for z = [1, 2, 3]
        let z = [1.0f64, 2.0, 3.0];
        let lse = z.iter().map(|v| v.exp()).sum::<f64>().ln();
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new(vec![1, 3], z.to_vec()).unwrap());
        let y = tape.log_softmax(x).unwrap();
        for (got, zi) in tape.value(y).data().iter().zip(&z) {
            assert!((got - (zi - lse)).abs() < 1e-12);
        }
    }

    #[test]
    fn log_softmax_equals_log_of_softmax() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new(vec![2, 3], vec![0.3, -1.4, 2.2, 5.0, 5.0, -3.0]).unwrap());
        let sm = tape.softmax(x).unwrap();
        let lsm = tape.log_softmax(x).unwrap();
        for (p, lp) in tape.value(sm).data().iter().zip(tape.value(lsm).data()) {
            assert!((p.ln() - lp).abs() < 1e-10);
        }
        for row in tape.value(sm).data().chunks(3) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn backward_of_sum_is_ones() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new(vec![4], vec![1.0, -2.0, 3.0, 0.5]).unwrap());
        let s = tape.sum(x).unwrap();
        let grads = tape.backward(s).unwrap();
        assert_eq!(grads.grad(&tape, x).data(), &[1.0; 4]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new(vec![2], vec![1.0, 2.0]).unwrap());
        assert!(tape.backward(x).is_err());
    }

    #[test]
    fn cross_entropy_gradient_is_softmax_minus_onehot() {
        // loss = -log_softmax(z)[target]; dL/dz = softmax(z) - onehot(target)
        let z = vec![0.2, -1.0, 0.7, 1.5];
        let target = 2usize;
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new(vec![1, 4], z.clone()).unwrap());
        let lsm = tape.log_softmax(x).unwrap();
        let picked = tape.gather(lsm, &[(0, target)]).unwrap();
        let s = tape.sum(picked).unwrap();
        let loss = tape.mul_scalar(s, -1.0).unwrap();
        let grads = tape.backward(loss).unwrap();
        let got = grads.grad(&tape, x);

        let mx = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let ex: Vec<f64> = z.iter().map(|v| (v - mx).exp()).collect();
        let sum: f64 = ex.iter().sum();
        for (j, gv) in got.data().iter().enumerate() {
            let sm = ex[j] / sum;
            let want = sm - if j == target { 1.0 } else { 0.0 };
            assert!((gv - want).abs() < 1e-12, "coord {j}: {gv} vs {want}");
        }
    }

    #[test]
    fn two_layer_network_matches_finite_differences() {
        // y = sum(gelu(rmsnorm(x@w1 + b1) @ w2)) on random-ish params.
        let mut state = 0x9E3779B97F4A7C15u64;
        let mut next = move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        let n_in = 3 * 4 + 4 + 4 * 2;
        let params: Vec<f64> = (0..n_in).map(|_| next()).collect();

        let eval = |p: &[f64]| -> (f64, Vec<f64>) {
            let mut tape = Tape::new();
            let x = tape.leaf(Tensor::new(vec![2, 3], vec![0.4, -0.2, 0.9, 1.1, 0.0, -0.7]).unwrap());
            let w1 = tape.leaf(Tensor::new(vec![3, 4], p[0..12].to_vec()).unwrap());
            let b1 = tape.leaf(Tensor::new(vec![4], p[12..16].to_vec()).unwrap());
            let w2 = tape.leaf(Tensor::new(vec![4, 2], p[16..24].to_vec()).unwrap());
            let h = tape.affine(x, w1, b1).unwrap();
            let hn = tape.rmsnorm(h, 1e-5).unwrap();
            let ha = tape.unary(hn, Unary::Gelu).unwrap();
            let o = tape.matmul(ha, w2).unwrap();
            let sm = tape.softmax(o).unwrap();
            let lg = tape.log_softmax(o).unwrap();
            let prod = tape.mul(sm, lg).unwrap();
            let loss = tape.sum(prod).unwrap();
            let grads = tape.backward(loss).unwrap();
            let mut flat = Vec::with_capacity(n_in);
            for v in [w1, b1, w2] {
                flat.extend_from_slice(grads.grad(&tape, v).data());
            }
            (tape.value(loss).item(), flat)
        };

        let (_, analytic) = eval(&params);
        let err =
            finite_diff_check(&params, &analytic, 1e-5, |p| eval(p).0).unwrap();
        assert!(err < 1e-4, "relative error {err}");
    }

    #[test]
    fn backward_twice_is_deterministic() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new(vec![2, 2], vec![0.5, -1.0, 2.0, 0.1]).unwrap());
        let n = tape.rmsnorm(x, 1e-5).unwrap();
        let sm = tape.softmax(n).unwrap();
        let s = tape.sum(sm).unwrap();
        let g1 = tape.backward(s).unwrap().grad(&tape, x);
        let g2 = tape.backward(s).unwrap().grad(&tape, x);
        assert_eq!(g1.data(), g2.data());
    }

    #[test]
    fn matmul_shape_mismatch_reports_dimensions() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::new(vec![2, 3], vec![0.0; 6]).unwrap());
        let b = tape.leaf(Tensor::new(vec![4, 2], vec![0.0; 8]).unwrap());
        let err = tape.matmul(a, b).unwrap_err();
        assert!(err.to_string().contains("shape mismatch"));
    }

    #[test]
    fn every_primitive_passes_gradient_check() {
        // One scalar-valued composite touching each differentiable op kind.
        let params: Vec<f64> = vec![0.7, -0.3, 1.2, 0.4, -0.9, 0.25, 1.7, -1.1];
        let eval = |p: &[f64]| -> (f64, Vec<f64>) {
            let mut tape = Tape::new();
            let a = tape.leaf(Tensor::new(vec![2, 2], p[0..4].to_vec()).unwrap());
            let b = tape.leaf(Tensor::new(vec![2, 2], p[4..8].to_vec()).unwrap());
            let ab = tape.matmul_nt(a, b).unwrap();
            let sm = tape.mul_scalar(ab, 0.5).unwrap();
            let sh = tape.add_scalar(sm, 0.1).unwrap();
            let cl = tape.clamp(sh, -0.8, 0.8).unwrap();
            let mn = tape.min(cl, a).unwrap();
            let e = tape.unary(mn, Unary::Exp).unwrap();
            let t = tape.unary(e, Unary::Tanh).unwrap();
            let r = tape.unary(t, Unary::Relu).unwrap();
            let sub = tape.sub(r, b).unwrap();
            let add = tape.add(sub, a).unwrap();
            let mu = tape.mul(add, add).unwrap();
            let g = tape.leaf(Tensor::new(vec![2], vec![1.3, 0.7]).unwrap());
            let cs = tape.col_scale(mu, g).unwrap();
            let m = tape.mean(cs).unwrap();
            let grads = tape.backward(m).unwrap();
            let mut flat = Vec::new();
            flat.extend_from_slice(grads.grad(&tape, a).data());
            flat.extend_from_slice(grads.grad(&tape, b).data());
            (tape.value(m).item(), flat)
        };
        let (_, analytic) = eval(&params);
        let err = finite_diff_check(&params, &analytic, 1e-6, |p| eval(p).0).unwrap();
        assert!(err < 1e-4, "relative error {err}");
    }

    #[test]
    fn embedding_gradient_scatters_rows() {
        let mut tape = Tape::new();
        let table = tape.leaf(Tensor::new(vec![3, 2], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap());
        let e = tape.embed(table, &[2, 0, 2]).unwrap();
        let s = tape.sum(e).unwrap();
        let grads = tape.backward(s).unwrap();
        assert_eq!(
            grads.grad(&tape, table).data(),
            &[1.0, 1.0, 0.0, 0.0, 2.0, 2.0]
        );
    }
}
