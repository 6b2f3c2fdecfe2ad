use std::collections::HashMap;

use ndarray::{concatenate, s, Array2, Axis, Zip};

use crate::{GradError, Mat, ParamId, ParamStore, Result};

/// Handle to a node on a [`Graph`] tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Param,
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Scale(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Gelu(Var),
    SoftmaxRows(Var),
    NormalizeRows(Var, f64),
    Transpose(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceRows(Var, usize, usize),
    SliceCols(Var, usize, usize),
    SelectRows(Var, Vec<usize>),
    RepeatRow(Var),
    SumAll(Var),
    MeanRows(Var),
    PairContract(Var, Var, usize),
    BceWithLogits(Var, Vec<f64>),
}

struct Node {
    value: Mat,
    op: Op,
}

/// Eager tape of matrix operations.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
}

const GELU_K: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_C: f64 = 0.044_715;

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_K * (x + GELU_C * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_K * (x + GELU_C * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_K * (1.0 + 3.0 * GELU_C * x * x)
}

fn check_same(op: &'static str, a: &Mat, b: &Mat) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(GradError::Shape { op, lhs: a.dim(), rhs: b.dim() });
    }
    Ok(())
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

    fn push(&mut self, value: Mat, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.dim()
    }

    /// Scalar value of a `1 x 1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[[0, 0]]
    }

    /// Constant or differentiable input that is not a stored parameter.
    pub fn input(&mut self, value: Mat) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Brings a stored parameter onto the tape. Repeated calls for the same
    /// id return the same node so gradients accumulate in one place.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.push(store.get(id).clone(), Op::Param);
        self.params.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.ncols() != y.nrows() {
            return Err(GradError::Shape { op: "matmul", lhs: x.dim(), rhs: y.dim() });
        }
        let out = x.dot(y);
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    /// `a @ b^T`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.ncols() != y.ncols() {
            return Err(GradError::Shape { op: "matmul_t", lhs: x.dim(), rhs: y.dim() });
        }
        let out = x.dot(&y.t());
        Ok(self.push(out, Op::MatMulT(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        check_same("add", self.value(a), self.value(b))?;
        let out = self.value(a) + self.value(b);
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        check_same("sub", self.value(a), self.value(b))?;
        let out = self.value(a) - self.value(b);
        Ok(self.push(out, Op::Sub(a, b)))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        check_same("mul", self.value(a), self.value(b))?;
        let out = self.value(a) * self.value(b);
        Ok(self.push(out, Op::Mul(a, b)))
    }

    /// Adds a `1 x n` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (x, r) = (self.value(a), self.value(row));
        if r.nrows() != 1 || r.ncols() != x.ncols() {
            return Err(GradError::Shape { op: "add_row", lhs: x.dim(), rhs: r.dim() });
        }
        let out = x + r;
        Ok(self.push(out, Op::AddRow(a, row)))
    }

    /// Multiplies every row of `a` elementwise by a `1 x n` row.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (x, r) = (self.value(a), self.value(row));
        if r.nrows() != 1 || r.ncols() != x.ncols() {
            return Err(GradError::Shape { op: "mul_row", lhs: x.dim(), rhs: r.dim() });
        }
        let out = x * r;
        Ok(self.push(out, Op::MulRow(a, row)))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let out = self.value(a) * factor;
        self.push(out, Op::Scale(a, factor))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(sigmoid);
        self.push(out, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(f64::tanh);
        self.push(out, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(|x| x.max(0.0));
        self.push(out, Op::Relu(a))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(gelu);
        self.push(out, Op::Gelu(a))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        for mut row in out.rows_mut() {
            let max = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
            row.mapv_inplace(|x| (x - max).exp());
            let sum = row.sum();
            row.mapv_inplace(|x| x / sum);
        }
        self.push(out, Op::SoftmaxRows(a))
    }

    /// Row-wise standardisation `(x - mean) / sqrt(var + eps)` without affine
    /// parameters.
    pub fn normalize_rows(&mut self, a: Var, eps: f64) -> Var {
        let mut out = self.value(a).clone();
        for mut row in out.rows_mut() {
            let n = row.len() as f64;
            let mean = row.sum() / n;
            let var = row.fold(0.0, |acc, &x| acc + (x - mean) * (x - mean)) / n;
            let inv = 1.0 / (var + eps).sqrt();
            row.mapv_inplace(|x| (x - mean) * inv);
        }
        self.push(out, Op::NormalizeRows(a, eps))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.value(a).t().to_owned();
        self.push(out, Op::Transpose(a))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let out = concatenate(Axis(1), &views).map_err(|_| GradError::Shape {
            op: "concat_cols",
            lhs: views.first().map(|v| v.dim()).unwrap_or_default(),
            rhs: views.last().map(|v| v.dim()).unwrap_or_default(),
        })?;
        Ok(self.push(out, Op::ConcatCols(parts.to_vec())))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let out = concatenate(Axis(0), &views).map_err(|_| GradError::Shape {
            op: "concat_rows",
            lhs: views.first().map(|v| v.dim()).unwrap_or_default(),
            rhs: views.last().map(|v| v.dim()).unwrap_or_default(),
        })?;
        Ok(self.push(out, Op::ConcatRows(parts.to_vec())))
    }

    /// Rows `start..end`.
    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Var {
        let out = self.value(a).slice(s![start..end, ..]).to_owned();
        self.push(out, Op::SliceRows(a, start, end))
    }

    /// Columns `start..end`.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let out = self.value(a).slice(s![.., start..end]).to_owned();
        self.push(out, Op::SliceCols(a, start, end))
    }

    /// Gathers rows by index; indices may repeat.
    pub fn select_rows(&mut self, a: Var, idx: &[usize]) -> Var {
        let out = self.value(a).select(Axis(0), idx);
        self.push(out, Op::SelectRows(a, idx.to_vec()))
    }

    /// Broadcasts a `1 x n` row to `count x n`.
    pub fn repeat_row(&mut self, a: Var, count: usize) -> Result<Var> {
        let x = self.value(a);
        if x.nrows() != 1 {
            return Err(GradError::Shape { op: "repeat_row", lhs: x.dim(), rhs: (1, x.ncols()) });
        }
        let out = x
            .broadcast((count, x.ncols()))
            .expect("row broadcast")
            .to_owned();
        Ok(self.push(out, Op::RepeatRow(a)))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Array2::from_elem((1, 1), self.value(a).sum());
        self.push(out, Op::SumAll(a))
    }

    /// Column means as a `1 x n` row.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let out = x
            .mean_axis(Axis(0))
            .expect("mean of empty matrix")
            .insert_axis(Axis(0));
        self.push(out, Op::MeanRows(a))
    }

    /// Row-wise contraction used by bilinear scorers.
    ///
    /// `t` is `k x (out_dim * n)` and `x` is `k x n`; the result is
    /// `k x out_dim` with `out[j, r] = sum_q t[j, r * n + q] * x[j, q]`.
    pub fn pair_contract(&mut self, t: Var, x: Var, out_dim: usize) -> Result<Var> {
        let (tv, xv) = (self.value(t), self.value(x));
        let n = xv.ncols();
        if tv.nrows() != xv.nrows() || tv.ncols() != out_dim * n {
            return Err(GradError::Shape { op: "pair_contract", lhs: tv.dim(), rhs: xv.dim() });
        }
        let k = xv.nrows();
        let mut out = Array2::zeros((k, out_dim));
        for j in 0..k {
            for r in 0..out_dim {
                let mut acc = 0.0;
                for q in 0..n {
                    acc += tv[[j, r * n + q]] * xv[[j, q]];
                }
                out[[j, r]] = acc;
            }
        }
        Ok(self.push(out, Op::PairContract(t, x, out_dim)))
    }

    /// Summed binary cross-entropy between `logits` (any shape, row-major)
    /// and `targets` in `[0, 1]`. Returns a `1 x 1` node.
    pub fn bce_with_logits(&mut self, logits: Var, targets: &[f64]) -> Result<Var> {
        let z = self.value(logits);
        if z.len() != targets.len() {
            return Err(GradError::Shape { op: "bce_with_logits", lhs: z.dim(), rhs: (targets.len(), 1) });
        }
        let loss: f64 = z
            .iter()
            .zip(targets)
            .map(|(&z, &y)| z.max(0.0) - z * y + (-z.abs()).exp().ln_1p())
            .sum();
        Ok(self.push(Array2::from_elem((1, 1), loss), Op::BceWithLogits(logits, targets.to_vec())))
    }

    /// Reverse pass from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let dim = self.value(loss).dim();
        if dim != (1, 1) {
            return Err(GradError::NotScalar(dim));
        }
        let mut grads: Vec<Option<Mat>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Array2::ones((1, 1)));

        fn acc(grads: &mut [Option<Mat>], v: Var, g: Mat) {
            match &mut grads[v.0] {
                Some(existing) => *existing += &g,
                slot @ None => *slot = Some(g),
            }
        }

        for idx in (0..=loss.0).rev() {
            let Some(gy) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            let y = &node.value;
            match &node.op {
                Op::Leaf | Op::Param => {
                    grads[idx] = Some(gy);
                }
                Op::MatMul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    acc(&mut grads, *a, gy.dot(&bv.t()));
                    acc(&mut grads, *b, av.t().dot(&gy));
                }
                Op::MatMulT(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    acc(&mut grads, *a, gy.dot(bv));
                    acc(&mut grads, *b, gy.t().dot(av));
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *a, gy.clone());
                    acc(&mut grads, *b, gy);
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, *a, gy.clone());
                    acc(&mut grads, *b, -gy);
                }
                Op::Mul(a, b) => {
                    let ga = &gy * self.value(*b);
                    let gb = &gy * self.value(*a);
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::AddRow(a, row) => {
                    let gr = gy.sum_axis(Axis(0)).insert_axis(Axis(0));
                    acc(&mut grads, *a, gy);
                    acc(&mut grads, *row, gr);
                }
                Op::MulRow(a, row) => {
                    let rv = self.value(*row);
                    let gr = (&gy * self.value(*a)).sum_axis(Axis(0)).insert_axis(Axis(0));
                    acc(&mut grads, *a, &gy * rv);
                    acc(&mut grads, *row, gr);
                }
                Op::Scale(a, f) => acc(&mut grads, *a, gy * *f),
                Op::Sigmoid(a) => {
                    let g = Zip::from(&gy).and(y).map_collect(|&g, &s| g * s * (1.0 - s));
                    acc(&mut grads, *a, g);
                }
                Op::Tanh(a) => {
                    let g = Zip::from(&gy).and(y).map_collect(|&g, &t| g * (1.0 - t * t));
                    acc(&mut grads, *a, g);
                }
                Op::Relu(a) => {
                    let g = Zip::from(&gy)
                        .and(self.value(*a))
                        .map_collect(|&g, &x| if x > 0.0 { g } else { 0.0 });
                    acc(&mut grads, *a, g);
                }
                Op::Gelu(a) => {
                    let g = Zip::from(&gy)
                        .and(self.value(*a))
                        .map_collect(|&g, &x| g * gelu_grad(x));
                    acc(&mut grads, *a, g);
                }
                Op::SoftmaxRows(a) => {
                    let mut g = &gy * y;
                    for (mut grow, yrow) in g.rows_mut().into_iter().zip(y.rows()) {
                        let dot = grow.sum();
                        Zip::from(&mut grow).and(&yrow).for_each(|gi, &yi| *gi -= yi * dot);
                    }
                    acc(&mut grads, *a, g);
                }
                Op::NormalizeRows(a, eps) => {
                    let x = self.value(*a);
                    let mut g = Array2::zeros(x.dim());
                    for ((mut grow, xrow), (yrow, dyrow)) in g
                        .rows_mut()
                        .into_iter()
                        .zip(x.rows())
                        .zip(y.rows().into_iter().zip(gy.rows()))
                    {
                        let n = xrow.len() as f64;
                        let mean = xrow.sum() / n;
                        let var = xrow.fold(0.0, |acc, &v| acc + (v - mean) * (v - mean)) / n;
                        let inv = 1.0 / (var + eps).sqrt();
                        let mean_dy = dyrow.sum() / n;
                        let mean_dy_y = dyrow.iter().zip(yrow.iter()).map(|(d, y)| d * y).sum::<f64>() / n;
                        for ((gi, &dy), &yi) in grow.iter_mut().zip(dyrow.iter()).zip(yrow.iter()) {
                            *gi = inv * (dy - mean_dy - yi * mean_dy_y);
                        }
                    }
                    acc(&mut grads, *a, g);
                }
                Op::Transpose(a) => acc(&mut grads, *a, gy.t().to_owned()),
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let w = self.value(*p).ncols();
                        acc(&mut grads, *p, gy.slice(s![.., offset..offset + w]).to_owned());
                        offset += w;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let h = self.value(*p).nrows();
                        acc(&mut grads, *p, gy.slice(s![offset..offset + h, ..]).to_owned());
                        offset += h;
                    }
                }
                Op::SliceRows(a, start, end) => {
                    let mut g = Array2::zeros(self.value(*a).dim());
                    g.slice_mut(s![*start..*end, ..]).assign(&gy);
                    acc(&mut grads, *a, g);
                }
                Op::SliceCols(a, start, end) => {
                    let mut g = Array2::zeros(self.value(*a).dim());
                    g.slice_mut(s![.., *start..*end]).assign(&gy);
                    acc(&mut grads, *a, g);
                }
                Op::SelectRows(a, idx) => {
                    let mut g = Array2::zeros(self.value(*a).dim());
                    for (src, &dst) in idx.iter().enumerate() {
                        let mut row = g.row_mut(dst);
                        row += &gy.row(src);
                    }
                    acc(&mut grads, *a, g);
                }
                Op::RepeatRow(a) => {
                    acc(&mut grads, *a, gy.sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
                Op::SumAll(a) => {
                    let g = Array2::from_elem(self.value(*a).dim(), gy[[0, 0]]);
                    acc(&mut grads, *a, g);
                }
                Op::MeanRows(a) => {
                    let (rows, cols) = self.value(*a).dim();
                    let g = gy
                        .broadcast((rows, cols))
                        .expect("mean broadcast")
                        .mapv(|v| v / rows as f64);
                    acc(&mut grads, *a, g);
                }
                Op::PairContract(t, x, out_dim) => {
                    let (tv, xv) = (self.value(*t), self.value(*x));
                    let n = xv.ncols();
                    let mut gt = Array2::zeros(tv.dim());
                    let mut gx = Array2::zeros(xv.dim());
                    for j in 0..xv.nrows() {
                        for r in 0..*out_dim {
                            let d = gy[[j, r]];
                            for q in 0..n {
                                gt[[j, r * n + q]] += d * xv[[j, q]];
                                gx[[j, q]] += d * tv[[j, r * n + q]];
                            }
                        }
                    }
                    acc(&mut grads, *t, gt);
                    acc(&mut grads, *x, gx);
                }
                Op::BceWithLogits(logits, targets) => {
                    let z = self.value(*logits);
                    let scale = gy[[0, 0]];
                    let mut g = Array2::zeros(z.dim());
                    for ((gi, &zi), &ti) in g.iter_mut().zip(z.iter()).zip(targets) {
                        *gi = scale * (sigmoid(zi) - ti);
                    }
                    acc(&mut grads, *logits, g);
                }
            }
        }

        let params = self
            .params
            .iter()
            .map(|(&id, &v)| (id, v))
            .collect::<Vec<_>>();
        Ok(Gradients { grads, params })
    }
}

/// Result of a reverse pass.
pub struct Gradients {
    grads: Vec<Option<Mat>>,
    params: Vec<(ParamId, Var)>,
}

impl Gradients {
    /// Gradient of the loss w.r.t. a leaf (input or parameter) node; `None`
    /// when the leaf does not influence the loss. Interior gradients are
    /// released during the reverse pass.
    pub fn wrt(&self, v: Var) -> Option<&Mat> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradients for every parameter that appeared on the tape, ordered by
    /// parameter id.
    pub fn params(&self) -> Vec<(ParamId, &Mat)> {
        let mut out: Vec<_> = self
            .params
            .iter()
            .filter_map(|&(id, v)| self.wrt(v).map(|g| (id, g)))
            .collect();
        out.sort_by_key(|(id, _)| *id);
        out
    }
}
