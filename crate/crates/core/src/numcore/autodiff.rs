//! Reverse-mode differentiation over rank-2 tensors.
//!
//! A [`Graph`] records every operation in evaluation order. Leaves are either
//! parameters (gradients requested) or constants (gradients never computed),
//! so a stop-gradient is just "insert the value as a constant".
//! [`Graph::backward`] walks the record in reverse, applying each op's
//! hand-derived adjoint rule.

use super::gaussian::sigmoid;
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    AddBias(Var, Var),
    LeakyRelu(Var, f64),
    Softplus(Var),
    Log(Var),
    Exp(Var),
    Square(Var),
    SumAll(Var),
    MeanAll(Var),
    SumCols(Var),
    BroadcastCols(Var),
    L2NormalizeRows(Var),
    LogSoftmaxRows(Var),
    ConcatCols(Var, Var),
    Pick(Var, Vec<usize>),
    Clamp(Var, f64, f64),
    Minimum(Var, Var),
}

#[derive(Clone, Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

#[derive(Clone, Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of a scalar with respect to every node that needed one.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of `v`, or zeros of `like`'s shape when no path reached it.
    pub fn get_or_zeros(&self, v: Var, like: &Tensor) -> Tensor {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(like.shape()))
    }
}

fn as_matrix(t: &Tensor) -> Tensor {
    if t.shape().len() == 2 {
        t.clone()
    } else {
        t.clone()
            .reshape(vec![t.rows(), t.cols()])
            .expect("same element count")
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Leaf whose gradient is requested.
    pub fn param(&mut self, value: &Tensor) -> Var {
        self.push(as_matrix(value), Op::Leaf, true)
    }

    /// Leaf excluded from differentiation.
    pub fn constant(&mut self, value: &Tensor) -> Var {
        self.push(as_matrix(value), Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.data()[0]
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.ng(v)
    }

    fn binary_same_shape(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(Error::dim(
                name,
                format!("{:?}", va.shape()),
                format!("{:?}", vb.shape()),
            ));
        }
        let out = va.zip_map(vb, f)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, op, ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape("div", a, b, |x, y| x / y, Op::Div(a, b))
    }

    pub fn minimum(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape("minimum", a, b, f64::min, Op::Minimum(a, b))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).scale(c);
        let ng = self.ng(a);
        self.push(out, Op::Scale(a, c), ng)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).map(|x| x + c);
        let ng = self.ng(a);
        self.push(out, Op::AddScalar(a), ng)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, Op::MatMul(a, b), ng))
    }

    /// `a * b^T`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul_nt(self.value(b))?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, Op::MatMulNt(a, b), ng))
    }

    /// Adds a `[1, n]` row to every row of `x`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (vx, vb) = (self.value(x), self.value(bias));
        if vb.rows() != 1 || vb.cols() != vx.cols() {
            return Err(Error::dim(
                "add_bias",
                format!("[1, {}]", vx.cols()),
                format!("{:?}", vb.shape()),
            ));
        }
        let n = vx.cols();
        let mut out = vx.clone();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            *v += vb.data()[i % n];
        }
        let ng = self.ng(x) || self.ng(bias);
        Ok(self.push(out, Op::AddBias(x, bias), ng))
    }

    /// `x W + b` for `x: [m, in]`, `W: [in, out]`, `b: [1, out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xw = self.matmul(x, w)?;
        self.add_bias(xw, b)
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let out = self.value(a).map(f);
        let ng = self.ng(a);
        self.push(out, op, ng)
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        self.unary(
            a,
            |x| if x > 0.0 { x } else { slope * x },
            Op::LeakyRelu(a, slope),
        )
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(a, super::gaussian::softplus, Op::Softplus(a))
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary(a, f64::ln, Op::Log(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, f64::exp, Op::Exp(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, |x| x * x, Op::Square(a))
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        self.unary(a, |x| x.clamp(lo, hi), Op::Clamp(a, lo, hi))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).sum());
        let ng = self.ng(a);
        self.push(out, Op::SumAll(a), ng)
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).mean());
        let ng = self.ng(a);
        self.push(out, Op::MeanAll(a), ng)
    }

    /// Row sums: `[m, n] -> [m, 1]`.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let (m, n) = (v.rows(), v.cols());
        let data = (0..m)
            .map(|i| v.data()[i * n..(i + 1) * n].iter().sum())
            .collect();
        let out = Tensor::matrix(m, 1, data).expect("shape");
        let ng = self.ng(a);
        self.push(out, Op::SumCols(a), ng)
    }

    /// Repeats a `[m, 1]` column into `[m, n]`.
    pub fn broadcast_cols(&mut self, a: Var, n: usize) -> Result<Var> {
        let v = self.value(a);
        if v.cols() != 1 {
            return Err(Error::dim(
                "broadcast_cols",
                "[m, 1]",
                format!("{:?}", v.shape()),
            ));
        }
        let m = v.rows();
        let data = (0..m)
            .flat_map(|i| std::iter::repeat_n(v.data()[i], n))
            .collect();
        let out = Tensor::matrix(m, n, data)?;
        let ng = self.ng(a);
        Ok(self.push(out, Op::BroadcastCols(a), ng))
    }

    /// Scales each row to unit L2 norm; an all-zero row stays zero.
    pub fn l2_normalize_rows(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let n = v.cols();
        let mut out = v.clone();
        for row in out.data_mut().chunks_mut(n) {
            let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 0.0 {
                row.iter_mut().for_each(|x| *x /= norm);
            }
        }
        let ng = self.ng(a);
        self.push(out, Op::L2NormalizeRows(a), ng)
    }

    /// Row-wise log-softmax with the row max subtracted first.
    pub fn log_softmax_rows(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let n = v.cols();
        let mut out = v.clone();
        for row in out.data_mut().chunks_mut(n) {
            let (arg, max) = row
                .iter()
                .enumerate()
                .fold(
                    (0, f64::NEG_INFINITY),
                    |acc, (i, &x)| if x > acc.1 { (i, x) } else { acc },
                );
            // ln(sum exp(x - max)) = ln(1 + sum_{j != argmax} exp(x_j - max)).
            let rest: f64 = row
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != arg)
                .map(|(_, &x)| (x - max).exp())
                .sum();
            let lse = max + rest.ln_1p();
            row.iter_mut().for_each(|x| *x -= lse);
        }
        let ng = self.ng(a);
        self.push(out, Op::LogSoftmaxRows(a), ng)
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.rows() != vb.rows() {
            return Err(Error::dim("concat_cols", va.rows(), vb.rows()));
        }
        let (m, p, q) = (va.rows(), va.cols(), vb.cols());
        let mut data = Vec::with_capacity(m * (p + q));
        for i in 0..m {
            data.extend_from_slice(va.row_slice(i));
            data.extend_from_slice(vb.row_slice(i));
        }
        let out = Tensor::matrix(m, p + q, data)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, Op::ConcatCols(a, b), ng))
    }

    /// Gathers `x[i, idx[i]]` into a `[m, 1]` column.
    pub fn pick(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let v = self.value(a);
        if idx.len() != v.rows() {
            return Err(Error::dim("pick", v.rows(), idx.len()));
        }
        if let Some(&bad) = idx.iter().find(|&&j| j >= v.cols()) {
            return Err(Error::InvalidArgument(format!(
                "pick column {bad} out of range {}",
                v.cols()
            )));
        }
        let data = idx.iter().enumerate().map(|(i, &j)| v.get(i, j)).collect();
        let out = Tensor::matrix(idx.len(), 1, data)?;
        let ng = self.ng(a);
        Ok(self.push(out, Op::Pick(a, idx.to_vec()), ng))
    }

    /// Diagonal of a square matrix as a `[m, 1]` column.
    pub fn diag(&mut self, a: Var) -> Result<Var> {
        let m = self.value(a).rows();
        let idx: Vec<usize> = (0..m).collect();
        self.pick(a, &idx)
    }

    /// Gradients of the scalar `loss` with respect to every node that needs one.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::dim(
                "backward",
                "scalar loss",
                format!("{:?}", lv.shape()),
            ));
        }
        if !lv.is_finite() {
            return Err(Error::NonFinite("loss".into()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        if !self.ng(loss) {
            return Ok(Gradients { grads });
        }
        grads[loss.0] = Some(Tensor::full(lv.shape(), 1.0));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            let acc = |v: Var, contrib: Tensor, grads: &mut Vec<Option<Tensor>>| {
                if !self.ng(v) {
                    return;
                }
                match &mut grads[v.0] {
                    Some(existing) => existing.axpy(1.0, &contrib).expect("gradient shape"),
                    slot @ None => *slot = Some(contrib),
                }
            };
            match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(g);
                    continue;
                }
                Op::Add(a, b) => {
                    acc(*a, g.clone(), &mut grads);
                    acc(*b, g, &mut grads);
                }
                Op::Sub(a, b) => {
                    acc(*a, g.clone(), &mut grads);
                    acc(*b, g.scale(-1.0), &mut grads);
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    acc(*a, g.mul(vb)?, &mut grads);
                    acc(*b, g.mul(va)?, &mut grads);
                }
                Op::Div(a, b) => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    acc(*a, g.zip_map(vb, |gi, y| gi / y)?, &mut grads);
                    let gb = g.mul(va)?.zip_map(vb, |t, y| -t / (y * y))?;
                    acc(*b, gb, &mut grads);
                }
                Op::Minimum(a, b) => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    let mask_a = va.zip_map(vb, |x, y| if x <= y { 1.0 } else { 0.0 })?;
                    acc(*a, g.mul(&mask_a)?, &mut grads);
                    acc(*b, g.zip_map(&mask_a, |gi, m| gi * (1.0 - m))?, &mut grads);
                }
                Op::Scale(a, c) => acc(*a, g.scale(*c), &mut grads),
                Op::AddScalar(a) => acc(*a, g, &mut grads),
                Op::MatMul(a, b) => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    if self.ng(*a) {
                        acc(*a, g.matmul_nt(vb)?, &mut grads);
                    }
                    if self.ng(*b) {
                        acc(*b, va.matmul_tn(&g)?, &mut grads);
                    }
                }
                Op::MatMulNt(a, b) => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    if self.ng(*a) {
                        acc(*a, g.matmul(vb)?, &mut grads);
                    }
                    if self.ng(*b) {
                        acc(*b, g.matmul_tn(va)?, &mut grads);
                    }
                }
                Op::AddBias(x, b) => {
                    if self.ng(*b) {
                        let n = g.cols();
                        let mut gb = Tensor::zeros(&[1, n]);
                        for row in g.data().chunks(n) {
                            for (o, v) in gb.data_mut().iter_mut().zip(row) {
                                *o += v;
                            }
                        }
                        acc(*b, gb, &mut grads);
                    }
                    acc(*x, g, &mut grads);
                }
                Op::LeakyRelu(a, slope) => {
                    let s = *slope;
                    let ga =
                        g.zip_map(self.value(*a), |gi, x| if x > 0.0 { gi } else { s * gi })?;
                    acc(*a, ga, &mut grads);
                }
                Op::Softplus(a) => {
                    let ga = g.zip_map(self.value(*a), |gi, x| gi * sigmoid(x))?;
                    acc(*a, ga, &mut grads);
                }
                Op::Log(a) => {
                    let ga = g.zip_map(self.value(*a), |gi, x| gi / x)?;
                    acc(*a, ga, &mut grads);
                }
                Op::Exp(a) => {
                    let ga = g.mul(&node.value)?;
                    acc(*a, ga, &mut grads);
                }
                Op::Square(a) => {
                    let ga = g.zip_map(self.value(*a), |gi, x| 2.0 * gi * x)?;
                    acc(*a, ga, &mut grads);
                }
                Op::Clamp(a, lo, hi) => {
                    let (lo, hi) = (*lo, *hi);
                    let ga = g.zip_map(
                        self.value(*a),
                        |gi, x| if x > lo && x < hi { gi } else { 0.0 },
                    )?;
                    acc(*a, ga, &mut grads);
                }
                Op::SumAll(a) => {
                    let va = self.value(*a);
                    acc(*a, Tensor::full(va.shape(), g.data()[0]), &mut grads);
                }
                Op::MeanAll(a) => {
                    let va = self.value(*a);
                    let n = va.len().max(1) as f64;
                    acc(*a, Tensor::full(va.shape(), g.data()[0] / n), &mut grads);
                }
                Op::SumCols(a) => {
                    let va = self.value(*a);
                    let n = va.cols();
                    let data = g
                        .data()
                        .iter()
                        .flat_map(|&gi| std::iter::repeat_n(gi, n))
                        .collect();
                    acc(*a, Tensor::matrix(va.rows(), n, data)?, &mut grads);
                }
                Op::BroadcastCols(a) => {
                    let n = g.cols();
                    let data = g.data().chunks(n).map(|r| r.iter().sum()).collect();
                    acc(*a, Tensor::matrix(g.rows(), 1, data)?, &mut grads);
                }
                Op::L2NormalizeRows(a) => {
                    let vx = self.value(*a);
                    let y = &node.value;
                    let n = vx.cols();
                    let mut ga = Tensor::zeros(vx.shape());
                    for i in 0..vx.rows() {
                        let xr = vx.row_slice(i);
                        let norm = xr.iter().map(|x| x * x).sum::<f64>().sqrt();
                        if norm == 0.0 {
                            continue;
                        }
                        let yr = y.row_slice(i);
                        let gr = g.row_slice(i);
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for j in 0..n {
                            ga.set(i, j, (gr[j] - yr[j] * dot) / norm);
                        }
                    }
                    acc(*a, ga, &mut grads);
                }
                Op::LogSoftmaxRows(a) => {
                    let y = &node.value;
                    let n = y.cols();
                    let mut ga = g.clone();
                    for (grow, yrow) in ga.data_mut().chunks_mut(n).zip(y.data().chunks(n)) {
                        let gsum: f64 = grow.iter().sum();
                        for (gi, &yi) in grow.iter_mut().zip(yrow) {
                            *gi -= yi.exp() * gsum;
                        }
                    }
                    acc(*a, ga, &mut grads);
                }
                Op::ConcatCols(a, b) => {
                    let p = self.value(*a).cols();
                    let q = self.value(*b).cols();
                    let m = g.rows();
                    let mut gan = Vec::with_capacity(m * p);
                    let mut gbn = Vec::with_capacity(m * q);
                    for i in 0..m {
                        let r = g.row_slice(i);
                        gan.extend_from_slice(&r[..p]);
                        gbn.extend_from_slice(&r[p..]);
                    }
                    acc(*a, Tensor::matrix(m, p, gan)?, &mut grads);
                    acc(*b, Tensor::matrix(m, q, gbn)?, &mut grads);
                }
                Op::Pick(a, idx) => {
                    let va = self.value(*a);
                    let mut ga = Tensor::zeros(va.shape());
                    for (i, &j) in idx.iter().enumerate() {
                        ga.set(i, j, g.data()[i]);
                    }
                    acc(*a, ga, &mut grads);
                }
            }
        }
        Ok(Gradients { grads })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::RngStream;

    /// Central-difference check of d(sum of f(x) * weights)/dx.
    fn check_unary(build: impl Fn(&mut Graph, Var) -> Var, x: Tensor) {
        let mut rng = RngStream::new(1);
        let probe = {
            let mut g = Graph::new();
            let v = g.constant(&x);
            let out = build(&mut g, v);
            rng.normal_tensor(g.value(out).shape())
        };
        let f = |x: &Tensor| -> f64 {
            let mut g = Graph::new();
            let v = g.constant(x);
            let out = build(&mut g, v);
            g.value(out).dot(&probe).unwrap()
        };
        let mut g = Graph::new();
        let v = g.param(&x);
        let out = build(&mut g, v);
        let w = g.constant(&probe);
        let prod = g.mul(out, w).unwrap();
        let loss = g.sum_all(prod);
        let grads = g.backward(loss).unwrap();
        let analytic = grads.get(v).unwrap();
        let eps = 1e-6;
        for i in 0..x.len() {
            let mut xp = x.clone();
            xp.data_mut()[i] += eps;
            let mut xm = x.clone();
            xm.data_mut()[i] -= eps;
            let num = (f(&xp) - f(&xm)) / (2.0 * eps);
            let a = analytic.data()[i];
            let rel = (a - num).abs() / (a.abs() + num.abs()).max(1e-8);
            assert!(rel < 1e-6, "coord {i}: analytic {a} numeric {num}");
        }
    }

    fn sample(shape: &[usize], seed: u64) -> Tensor {
        RngStream::new(seed).normal_tensor(shape)
    }

    #[test]
    fn unary_rules() {
        check_unary(|g, v| g.leaky_relu(v, 0.01), sample(&[3, 4], 2));
        check_unary(|g, v| g.softplus(v), sample(&[3, 4], 3));
        check_unary(|g, v| g.exp(v), sample(&[2, 3], 4));
        check_unary(|g, v| g.square(v), sample(&[2, 3], 5));
        check_unary(|g, v| g.l2_normalize_rows(v), sample(&[3, 5], 6));
        check_unary(|g, v| g.log_softmax_rows(v), sample(&[4, 5], 7));
        check_unary(|g, v| g.sum_cols(v), sample(&[4, 5], 8));
        check_unary(|g, v| g.diag(v).unwrap(), sample(&[4, 4], 9));
        check_unary(|g, v| g.pick(v, &[2, 0, 1]).unwrap(), sample(&[3, 3], 10));
        check_unary(
            |g, v| {
                let e = g.exp(v);
                g.log(e)
            },
            sample(&[2, 2], 11),
        );
        check_unary(|g, v| g.clamp(v, -0.5, 0.5), sample(&[3, 3], 12));
    }

    #[test]
    fn binary_rules() {
        let b = sample(&[3, 4], 20);
        let bias = sample(&[1, 4], 21);
        let m = sample(&[4, 2], 22);
        let pos = sample(&[3, 4], 23).map(|x| x.abs() + 0.5);
        check_unary(
            |g, v| {
                let c = g.constant(&b);
                let s = g.add(v, c).unwrap();
                let p = g.mul(s, v).unwrap();
                g.sub(p, c).unwrap()
            },
            sample(&[3, 4], 24),
        );
        check_unary(
            |g, v| {
                let c = g.constant(&pos);
                let d1 = g.div(v, c).unwrap();
                let d2 = g.div(c, v).unwrap();
                g.add(d1, d2).unwrap()
            },
            sample(&[3, 4], 25).map(|x| x.abs() + 0.5),
        );
        check_unary(
            |g, v| {
                let w = g.constant(&m);
                let bb = g.constant(&bias);
                let vb = g.add_bias(v, bb).unwrap();
                g.matmul(vb, w).unwrap()
            },
            sample(&[3, 4], 26),
        );
        check_unary(
            |g, v| {
                let w = g.constant(&m.transpose());
                let left = g.matmul_nt(v, v).unwrap();
                let right = g.matmul_nt(w, v).unwrap();
                let both = g.matmul(right, left).unwrap();
                g.sum_cols(both)
            },
            sample(&[3, 4], 27),
        );
        check_unary(
            |g, v| {
                let c = g.constant(&b);
                let cat = g.concat_cols(v, c).unwrap();
                g.minimum(cat, cat).unwrap()
            },
            sample(&[3, 2], 28),
        );
        check_unary(
            |g, v| {
                let c = g.constant(&b);
                g.minimum(v, c).unwrap()
            },
            sample(&[3, 4], 29),
        );
        check_unary(
            |g, v| {
                let s = g.sum_cols(v);
                let r = g.broadcast_cols(s, 3).unwrap();
                let m = g.mean_all(r);
                let x = g.add_scalar(m, 2.0);
                g.scale(x, 3.0)
            },
            sample(&[3, 4], 30),
        );
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut g = Graph::new();
        let p = g.param(&Tensor::row(&[1.0, 2.0]));
        let c = g.constant(&Tensor::row(&[3.0, 4.0]));
        let prod = g.mul(p, c).unwrap();
        let loss = g.sum_all(prod);
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.get(p).unwrap().data(), &[3.0, 4.0]);
        assert!(grads.get(c).is_none());
    }

    #[test]
    fn log_softmax_saturates_without_underflow_to_positive() {
        let mut g = Graph::new();
        let x = g.constant(&Tensor::row(&[50.0, 0.0]));
        let y = g.log_softmax_rows(x);
        let v = g.value(y).data()[0];
        assert!(v <= 0.0 && v.abs() < 1e-20, "{v}");
    }

    #[test]
    fn zero_row_normalizes_to_zero() {
        let mut g = Graph::new();
        let x = g.param(&Tensor::row(&[0.0, 0.0, 0.0]));
        let y = g.l2_normalize_rows(x);
        assert_eq!(g.value(y).data(), &[0.0, 0.0, 0.0]);
        let loss = g.sum_all(y);
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[0.0, 0.0, 0.0]);
    }
}
