//! Reverse-mode tape. Each forward pass records its ops on a fresh tape;
//! `backward` walks the record once in reverse, accumulating gradients.

use super::tensor::{matmul_acc, matmul_at_acc, matmul_bt_acc, Tensor};
use super::AutodiffError;

pub const BATCH_NORM_EPS: f64 = 1e-5;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    MatMul(Var, Var),
    Concat { inputs: Vec<Var>, axis: usize },
    SliceRows { x: Var, start: usize },
    Reshape(Var),
    LeakyRelu(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Abs(Var),
    Sum { x: Var, axis: Option<usize> },
    Mean { x: Var, axis: Option<usize> },
    GatherRows { x: Var, idx: Vec<usize> },
    SegmentSum { x: Var, ids: Vec<usize> },
    SegmentSoftmax { x: Var, ids: Vec<usize>, n: usize },
    BatchNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<f64>, inv_std: Vec<f64>, batch: bool },
    PairwiseDist { a: Var, b: Var },
    Min { x: Var, axis: usize, argmin: Vec<usize> },
    EdgeMatVec { mats: Var, vecs: Var },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Per-feature statistics of one train-mode batch-norm evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    /// Unbiased variance (biased when the batch has a single row).
    pub var: Vec<f64>,
}

/// Reference to running statistics used by eval-mode batch norm.
#[derive(Debug, Clone, Copy)]
pub struct RunningStats<'a> {
    pub mean: &'a [f64],
    pub var: &'a [f64],
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Broadcast layout for a binary elementwise op.
struct Broadcast {
    shape: Vec<usize>,
    a_strides: Vec<usize>,
    b_strides: Vec<usize>,
}

fn strides_for(shape: &[usize], out: &[usize]) -> Vec<usize> {
    if shape.is_empty() {
        return vec![0; out.len()];
    }
    let mut strides = vec![0; shape.len()];
    let mut acc = 1;
    for i in (0..shape.len()).rev() {
        strides[i] = if shape[i] == 1 && out[i] != 1 { 0 } else { acc };
        acc *= shape[i];
    }
    strides
}

fn broadcast(a: &[usize], b: &[usize]) -> Result<Broadcast, AutodiffError> {
    let shape = if a.is_empty() {
        b.to_vec()
    } else if b.is_empty() || a == b {
        a.to_vec()
    } else {
        if a.len() != b.len() {
            return Err(AutodiffError::Shape(format!("cannot broadcast {a:?} with {b:?}")));
        }
        a.iter()
            .zip(b)
            .map(|(&x, &y)| match (x, y) {
                _ if x == y => Ok(x),
                (1, _) => Ok(y),
                (_, 1) => Ok(x),
                _ => Err(AutodiffError::Shape(format!("cannot broadcast {a:?} with {b:?}"))),
            })
            .collect::<Result<_, _>>()?
    };
    Ok(Broadcast {
        a_strides: strides_for(a, &shape),
        b_strides: strides_for(b, &shape),
        shape,
    })
}

/// Calls `f(out_index, a_offset, b_offset)` for every output element.
fn for_each_broadcast(bc: &Broadcast, mut f: impl FnMut(usize, usize, usize)) {
    let rank = bc.shape.len();
    let total: usize = bc.shape.iter().product();
    if rank == 0 {
        if total == 1 {
            f(0, 0, 0);
        }
        return;
    }
    let mut idx = vec![0usize; rank];
    let (mut oa, mut ob) = (0usize, 0usize);
    for out in 0..total {
        f(out, oa, ob);
        for d in (0..rank).rev() {
            idx[d] += 1;
            oa += bc.a_strides[d];
            ob += bc.b_strides[d];
            if idx[d] < bc.shape[d] {
                break;
            }
            oa -= bc.a_strides[d] * idx[d];
            ob -= bc.b_strides[d] * idx[d];
            idx[d] = 0;
        }
    }
}

/// (outer, axis length, inner) sizes for reducing/concatenating along `axis`.
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
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

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
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

    /// A leaf that receives a gradient.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf excluded from differentiation.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var, AutodiffError> {
        let bc = broadcast(self.shape(a), self.shape(b))?;
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        let mut out = vec![0.0; bc.shape.iter().product()];
        for_each_broadcast(&bc, |o, ia, ib| out[o] = f(av[ia], bv[ib]));
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::new(bc.shape, out)?, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.binary(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.binary(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.binary(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let mut t = self.value(x).clone();
        t.data_mut().iter_mut().for_each(|v| *v *= factor);
        let rg = self.rg(&[x]);
        self.push(t, Op::Scale(x, factor), rg)
    }

    /// `x + c` for a constant scalar `c`.
    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        let k = self.constant(Tensor::scalar(c));
        self.add(x, k).expect("scalar broadcasts")
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(AutodiffError::Shape(format!("matmul {sa:?} x {sb:?}")));
        }
        let (n, k, m) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; n * m];
        matmul_acc(self.value(a).data(), self.value(b).data(), &mut out, n, k, m);
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::matrix(n, m, out), Op::MatMul(a, b), rg))
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var, AutodiffError> {
        let first = inputs
            .first()
            .ok_or_else(|| AutodiffError::Shape("concat of nothing".into()))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(AutodiffError::Shape(format!("concat axis {axis} on rank {}", base.len())));
        }
        let mut total_axis = 0;
        for v in inputs {
            let s = self.shape(*v);
            let same_other = s.len() == base.len() && s.iter().zip(&base).enumerate().all(|(d, (x, y))| d == axis || x == y);
            if !same_other {
                return Err(AutodiffError::Shape(format!("concat {s:?} with {base:?} on axis {axis}")));
            }
            total_axis += s[axis];
        }
        let mut shape = base.clone();
        shape[axis] = total_axis;
        let (outer, _, inner) = split_axis(&shape, axis);
        let mut out = Vec::with_capacity(shape.iter().product());
        for o in 0..outer {
            for v in inputs {
                let len = self.shape(*v)[axis] * inner;
                out.extend_from_slice(&self.value(*v).data()[o * len..(o + 1) * len]);
            }
        }
        let rg = self.rg(inputs);
        Ok(self.push(
            Tensor::new(shape, out)?,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            rg,
        ))
    }

    /// Rows `start..start+len` of a matrix.
    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var, AutodiffError> {
        let (r, c) = self.value(x).dims2();
        if start + len > r {
            return Err(AutodiffError::Shape(format!("rows {start}..{} of {r}", start + len)));
        }
        let data = self.value(x).data()[start * c..(start + len) * c].to_vec();
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::matrix(len, c, data), Op::SliceRows { x, start }, rg))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var, AutodiffError> {
        let t = self.value(x).clone().reshaped(shape.to_vec())?;
        let rg = self.rg(&[x]);
        Ok(self.push(t, Op::Reshape(x), rg))
    }

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let mut t = self.value(x).clone();
        t.data_mut().iter_mut().for_each(|v| *v = f(*v));
        let rg = self.rg(&[x]);
        self.push(t, op, rg)
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        self.unary(x, |v| if v > 0.0 { v } else { slope * v }, Op::LeakyRelu(x, slope))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.leaky_relu(x, 0.0)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(
            x,
            |v| {
                if v >= 0.0 {
                    1.0 / (1.0 + (-v).exp())
                } else {
                    let e = v.exp();
                    e / (1.0 + e)
                }
            },
            Op::Sigmoid(x),
        )
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, f64::tanh, Op::Tanh(x))
    }

    pub fn abs(&mut self, x: Var) -> Var {
        self.unary(x, f64::abs, Op::Abs(x))
    }

    fn reduce(&mut self, x: Var, axis: Option<usize>, mean: bool) -> Result<Var, AutodiffError> {
        let shape = self.shape(x).to_vec();
        let data = self.value(x).data();
        let out = match axis {
            None => {
                let s: f64 = data.iter().sum();
                Tensor::scalar(if mean { s / data.len().max(1) as f64 } else { s })
            }
            Some(ax) => {
                if ax >= shape.len() {
                    return Err(AutodiffError::Shape(format!("reduce axis {ax} on {shape:?}")));
                }
                let (outer, len, inner) = split_axis(&shape, ax);
                let mut out = vec![0.0; outer * inner];
                for o in 0..outer {
                    for a in 0..len {
                        for i in 0..inner {
                            out[o * inner + i] += data[(o * len + a) * inner + i];
                        }
                    }
                }
                if mean && len > 0 {
                    out.iter_mut().for_each(|v| *v /= len as f64);
                }
                let mut s = shape.clone();
                s[ax] = 1;
                Tensor::new(s, out)?
            }
        };
        let rg = self.rg(&[x]);
        let op = if mean { Op::Mean { x, axis } } else { Op::Sum { x, axis } };
        Ok(self.push(out, op, rg))
    }

    /// Sum over `axis` (kept with size 1), or over everything into a scalar.
    pub fn reduce_sum(&mut self, x: Var, axis: Option<usize>) -> Result<Var, AutodiffError> {
        self.reduce(x, axis, false)
    }

    pub fn reduce_mean(&mut self, x: Var, axis: Option<usize>) -> Result<Var, AutodiffError> {
        self.reduce(x, axis, true)
    }

    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var, AutodiffError> {
        let (r, c) = self.value(x).dims2();
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            if i >= r {
                return Err(AutodiffError::Index { index: i, bound: r });
            }
            out.extend_from_slice(&src[i * c..(i + 1) * c]);
        }
        let rg = self.rg(&[x]);
        Ok(self.push(
            Tensor::matrix(idx.len(), c, out),
            Op::GatherRows {
                x,
                idx: idx.to_vec(),
            },
            rg,
        ))
    }

    /// Row `i` of the result is the sum of the rows of `x` whose segment id
    /// is `i`; empty segments give zero rows.
    pub fn segment_sum(&mut self, x: Var, ids: &[usize], n_segments: usize) -> Result<Var, AutodiffError> {
        let (r, c) = self.value(x).dims2();
        if ids.len() != r {
            return Err(AutodiffError::Shape(format!("{} segment ids for {r} rows", ids.len())));
        }
        let src = self.value(x).data();
        let mut out = vec![0.0; n_segments * c];
        for (e, &s) in ids.iter().enumerate() {
            if s >= n_segments {
                return Err(AutodiffError::Index {
                    index: s,
                    bound: n_segments,
                });
            }
            for j in 0..c {
                out[s * c + j] += src[e * c + j];
            }
        }
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::matrix(n_segments, c, out), Op::SegmentSum { x, ids: ids.to_vec() }, rg))
    }

    /// Column-wise softmax of `x: [E, h]` within each segment, stabilised by
    /// subtracting the segment maximum.
    pub fn segment_softmax(&mut self, x: Var, ids: &[usize], n_segments: usize) -> Result<Var, AutodiffError> {
        let (r, c) = self.value(x).dims2();
        if ids.len() != r {
            return Err(AutodiffError::Shape(format!("{} segment ids for {r} rows", ids.len())));
        }
        if let Some(&s) = ids.iter().find(|&&s| s >= n_segments) {
            return Err(AutodiffError::Index {
                index: s,
                bound: n_segments,
            });
        }
        let src = self.value(x).data();
        let mut maxv = vec![f64::NEG_INFINITY; n_segments * c];
        for (e, &s) in ids.iter().enumerate() {
            for j in 0..c {
                maxv[s * c + j] = maxv[s * c + j].max(src[e * c + j]);
            }
        }
        let mut out = vec![0.0; r * c];
        let mut denom = vec![0.0; n_segments * c];
        for (e, &s) in ids.iter().enumerate() {
            for j in 0..c {
                let v = (src[e * c + j] - maxv[s * c + j]).exp();
                out[e * c + j] = v;
                denom[s * c + j] += v;
            }
        }
        for (e, &s) in ids.iter().enumerate() {
            for j in 0..c {
                out[e * c + j] /= denom[s * c + j];
            }
        }
        let rg = self.rg(&[x]);
        Ok(self.push(
            Tensor::matrix(r, c, out),
            Op::SegmentSoftmax {
                x,
                ids: ids.to_vec(),
                n: n_segments,
            },
            rg,
        ))
    }

    /// Train-mode batch norm over the rows of `x: [n, d]`; returns the batch
    /// statistics for the caller's running averages.
    pub fn batch_norm_train(&mut self, x: Var, gamma: Var, beta: Var) -> Result<(Var, BatchStats), AutodiffError> {
        let (n, d) = self.value(x).dims2();
        if n == 0 {
            return Err(AutodiffError::Shape("batch norm over zero rows".into()));
        }
        let src = self.value(x).data();
        let mut mean = vec![0.0; d];
        for i in 0..n {
            for j in 0..d {
                mean[j] += src[i * d + j];
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut var = vec![0.0; d];
        for i in 0..n {
            for j in 0..d {
                let c = src[i * d + j] - mean[j];
                var[j] += c * c;
            }
        }
        let biased: Vec<f64> = var.iter().map(|v| v / n as f64).collect();
        let unbiased: Vec<f64> = if n > 1 {
            var.iter().map(|v| v / (n - 1) as f64).collect()
        } else {
            biased.clone()
        };
        let inv_std: Vec<f64> = biased.iter().map(|v| 1.0 / (v + BATCH_NORM_EPS).sqrt()).collect();
        let mut xhat = vec![0.0; n * d];
        for i in 0..n {
            for j in 0..d {
                xhat[i * d + j] = (src[i * d + j] - mean[j]) * inv_std[j];
            }
        }
        let out = self.affine_out(&xhat, gamma, beta, n, d)?;
        let rg = self.rg(&[x, gamma, beta]);
        let v = self.push(
            out,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch: true,
            },
            rg,
        );
        Ok((v, BatchStats { mean, var: unbiased }))
    }

    /// Eval-mode batch norm: a fixed affine map using running statistics.
    pub fn batch_norm_eval(&mut self, x: Var, gamma: Var, beta: Var, stats: RunningStats) -> Result<Var, AutodiffError> {
        let (n, d) = self.value(x).dims2();
        if stats.mean.len() != d || stats.var.len() != d {
            return Err(AutodiffError::Shape(format!("running stats of width {} for {d} features", stats.mean.len())));
        }
        let inv_std: Vec<f64> = stats.var.iter().map(|v| 1.0 / (v + BATCH_NORM_EPS).sqrt()).collect();
        let src = self.value(x).data();
        let mut xhat = vec![0.0; n * d];
        for i in 0..n {
            for j in 0..d {
                xhat[i * d + j] = (src[i * d + j] - stats.mean[j]) * inv_std[j];
            }
        }
        let out = self.affine_out(&xhat, gamma, beta, n, d)?;
        let rg = self.rg(&[x, gamma, beta]);
        Ok(self.push(
            out,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch: false,
            },
            rg,
        ))
    }

    fn affine_out(&self, xhat: &[f64], gamma: Var, beta: Var, n: usize, d: usize) -> Result<Tensor, AutodiffError> {
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        if g.len() != d || b.len() != d {
            return Err(AutodiffError::Shape(format!("batch norm scale/shift of width {} for {d} features", g.len())));
        }
        let mut out = vec![0.0; n * d];
        for i in 0..n {
            for j in 0..d {
                out[i * d + j] = g[j] * xhat[i * d + j] + b[j];
            }
        }
        Ok(Tensor::matrix(n, d, out))
    }

    /// Euclidean distances between the rows of `a: [n1, d]` and `b: [n2, d]`.
    pub fn pairwise_dist(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (n1, d1) = self.value(a).dims2();
        let (n2, d2) = self.value(b).dims2();
        if d1 != d2 {
            return Err(AutodiffError::Shape(format!("pairwise distance between widths {d1} and {d2}")));
        }
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        let mut out = vec![0.0; n1 * n2];
        for i in 0..n1 {
            let ra = &av[i * d1..(i + 1) * d1];
            for j in 0..n2 {
                let rb = &bv[j * d1..(j + 1) * d1];
                out[i * n2 + j] = ra.iter().zip(rb).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
            }
        }
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::matrix(n1, n2, out), Op::PairwiseDist { a, b }, rg))
    }

    /// Minimum of a matrix along `axis` (kept with size 1) together with the
    /// arg-min positions; ties resolve to the lowest index.
    pub fn min_axis(&mut self, x: Var, axis: usize) -> Result<(Var, Vec<usize>), AutodiffError> {
        let (r, c) = self.value(x).dims2();
        let src = self.value(x).data();
        let (lines, len) = match axis {
            0 => (c, r),
            1 => (r, c),
            _ => return Err(AutodiffError::Shape(format!("min over axis {axis} of a matrix"))),
        };
        if len == 0 {
            return Err(AutodiffError::Shape("min over an empty axis".into()));
        }
        let at = |line: usize, k: usize| if axis == 1 { src[line * c + k] } else { src[k * c + line] };
        let mut values = Vec::with_capacity(lines);
        let mut argmin = Vec::with_capacity(lines);
        for line in 0..lines {
            let mut best = 0;
            for k in 1..len {
                if at(line, k) < at(line, best) {
                    best = k;
                }
            }
            values.push(at(line, best));
            argmin.push(best);
        }
        let shape = if axis == 1 { vec![r, 1] } else { vec![1, c] };
        let rg = self.rg(&[x]);
        let v = self.push(
            Tensor::new(shape, values)?,
            Op::Min {
                x,
                axis,
                argmin: argmin.clone(),
            },
            rg,
        );
        Ok((v, argmin))
    }

    /// Per-row matrix-vector product: `out[e] = M_e * v_e` with `M_e` the
    /// `d x d` row-major reshaping of row `e` of `mats: [E, d*d]`.
    pub fn edge_matvec(&mut self, mats: Var, vecs: Var) -> Result<Var, AutodiffError> {
        let (e, dd) = self.value(mats).dims2();
        let (e2, d) = self.value(vecs).dims2();
        if e != e2 || dd != d * d {
            return Err(AutodiffError::Shape(format!("edge matvec [{e}, {dd}] x [{e2}, {d}]")));
        }
        let (mv, vv) = (self.value(mats).data(), self.value(vecs).data());
        let mut out = vec![0.0; e * d];
        for k in 0..e {
            let v = &vv[k * d..(k + 1) * d];
            for i in 0..d {
                let row = &mv[k * dd + i * d..k * dd + (i + 1) * d];
                out[k * d + i] = row.iter().zip(v).map(|(a, b)| a * b).sum();
            }
        }
        let rg = self.rg(&[mats, vecs]);
        Ok(self.push(Tensor::matrix(e, d, out), Op::EdgeMatVec { mats, vecs }, rg))
    }

    /// Reverse sweep from a scalar root.
    pub fn backward(&self, root: Var) -> Result<Gradients, AutodiffError> {
        let rv = self.value(root);
        if rv.numel() != 1 {
            return Err(AutodiffError::NonScalarRoot(rv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; root.0 + 1];
        grads[root.0] = Some(vec![1.0]);
        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients {
            grads,
            shapes: self.nodes[..=root.0].iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }

    fn backprop(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        // Accumulation buffer for input `v`, or `None` if it needs no gradient.
        macro_rules! buf {
            ($v:expr) => {{
                let v: Var = $v;
                if nodes[v.0].requires_grad {
                    Some(grads[v.0].get_or_insert_with(|| vec![0.0; nodes[v.0].value.numel()]))
                } else {
                    None
                }
            }};
        }
        let val = |v: Var| nodes[v.0].value.data();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => {
                let bc = broadcast(nodes[a.0].value.shape(), nodes[b.0].value.shape()).expect("checked in forward");
                let (av, bv) = (val(*a).to_vec(), val(*b).to_vec());
                let kind = match node.op {
                    Op::Add(..) => 0,
                    Op::Sub(..) => 1,
                    _ => 2,
                };
                if let Some(ga) = buf!(*a) {
                    for_each_broadcast(&bc, |o, ia, ib| {
                        ga[ia] += if kind == 2 { g[o] * bv[ib] } else { g[o] };
                    });
                }
                if let Some(gb) = buf!(*b) {
                    for_each_broadcast(&bc, |o, ia, ib| {
                        gb[ib] += match kind {
                            0 => g[o],
                            1 => -g[o],
                            _ => g[o] * av[ia],
                        };
                    });
                }
            }
            Op::Scale(x, f) => {
                if let Some(gx) = buf!(*x) {
                    gx.iter_mut().zip(g).for_each(|(a, b)| *a += f * b);
                }
            }
            Op::MatMul(a, b) => {
                let (n, k) = nodes[a.0].value.dims2();
                let m = nodes[b.0].value.dims2().1;
                let (av, bv) = (val(*a).to_vec(), val(*b).to_vec());
                if let Some(ga) = buf!(*a) {
                    matmul_bt_acc(g, &bv, ga, n, k, m);
                }
                if let Some(gb) = buf!(*b) {
                    matmul_at_acc(&av, g, gb, n, k, m);
                }
            }
            Op::Concat { inputs, axis } => {
                let (outer, total, inner) = split_axis(node.value.shape(), *axis);
                let mut offset = 0;
                for v in inputs {
                    let len = nodes[v.0].value.shape()[*axis];
                    if let Some(gv) = buf!(*v) {
                        for o in 0..outer {
                            let src = &g[(o * total + offset) * inner..(o * total + offset + len) * inner];
                            let dst = &mut gv[o * len * inner..(o + 1) * len * inner];
                            dst.iter_mut().zip(src).for_each(|(a, b)| *a += b);
                        }
                    }
                    offset += len;
                }
            }
            Op::SliceRows { x, start } => {
                let c = node.value.dims2().1;
                if let Some(gx) = buf!(*x) {
                    gx[start * c..start * c + g.len()].iter_mut().zip(g).for_each(|(a, b)| *a += b);
                }
            }
            Op::Reshape(x) => {
                if let Some(gx) = buf!(*x) {
                    gx.iter_mut().zip(g).for_each(|(a, b)| *a += b);
                }
            }
            Op::LeakyRelu(x, slope) => {
                let xv = val(*x).to_vec();
                if let Some(gx) = buf!(*x) {
                    for ((a, &b), &xi) in gx.iter_mut().zip(g).zip(&xv) {
                        *a += if xi > 0.0 { b } else { slope * b };
                    }
                }
            }
            Op::Sigmoid(x) => {
                let y = node.value.data();
                if let Some(gx) = buf!(*x) {
                    for ((a, &b), &yi) in gx.iter_mut().zip(g).zip(y) {
                        *a += b * yi * (1.0 - yi);
                    }
                }
            }
            Op::Tanh(x) => {
                let y = node.value.data();
                if let Some(gx) = buf!(*x) {
                    for ((a, &b), &yi) in gx.iter_mut().zip(g).zip(y) {
                        *a += b * (1.0 - yi * yi);
                    }
                }
            }
            Op::Abs(x) => {
                let xv = val(*x).to_vec();
                if let Some(gx) = buf!(*x) {
                    for ((a, &b), &xi) in gx.iter_mut().zip(g).zip(&xv) {
                        // subgradient 0 at the kink
                        *a += b * if xi > 0.0 {
                            1.0
                        } else if xi < 0.0 {
                            -1.0
                        } else {
                            0.0
                        };
                    }
                }
            }
            Op::Sum { x, axis } | Op::Mean { x, axis } => {
                let is_mean = matches!(node.op, Op::Mean { .. });
                let shape = nodes[x.0].value.shape().to_vec();
                if let Some(gx) = buf!(*x) {
                    match axis {
                        None => {
                            let s = if is_mean { g[0] / gx.len().max(1) as f64 } else { g[0] };
                            gx.iter_mut().for_each(|a| *a += s);
                        }
                        Some(ax) => {
                            let (outer, len, inner) = split_axis(&shape, *ax);
                            let f = if is_mean { 1.0 / len as f64 } else { 1.0 };
                            for o in 0..outer {
                                for a in 0..len {
                                    for i in 0..inner {
                                        gx[(o * len + a) * inner + i] += f * g[o * inner + i];
                                    }
                                }
                            }
                        }
                    }
                }
            }
            Op::GatherRows { x, idx } => {
                let c = node.value.dims2().1;
                if let Some(gx) = buf!(*x) {
                    for (e, &i) in idx.iter().enumerate() {
                        for j in 0..c {
                            gx[i * c + j] += g[e * c + j];
                        }
                    }
                }
            }
            Op::SegmentSum { x, ids } => {
                let c = node.value.dims2().1;
                if let Some(gx) = buf!(*x) {
                    for (e, &s) in ids.iter().enumerate() {
                        for j in 0..c {
                            gx[e * c + j] += g[s * c + j];
                        }
                    }
                }
            }
            Op::SegmentSoftmax { x, ids, n } => {
                let c = node.value.dims2().1;
                let y = node.value.data();
                let mut dot = vec![0.0; n * c];
                for (e, &s) in ids.iter().enumerate() {
                    for j in 0..c {
                        dot[s * c + j] += g[e * c + j] * y[e * c + j];
                    }
                }
                if let Some(gx) = buf!(*x) {
                    for (e, &s) in ids.iter().enumerate() {
                        for j in 0..c {
                            gx[e * c + j] += y[e * c + j] * (g[e * c + j] - dot[s * c + j]);
                        }
                    }
                }
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch,
            } => {
                let (n, d) = node.value.dims2();
                let gam = val(*gamma).to_vec();
                let mut sum_g = vec![0.0; d];
                let mut sum_gx = vec![0.0; d];
                for i in 0..n {
                    for j in 0..d {
                        sum_g[j] += g[i * d + j];
                        sum_gx[j] += g[i * d + j] * xhat[i * d + j];
                    }
                }
                if let Some(gg) = buf!(*gamma) {
                    gg.iter_mut().zip(&sum_gx).for_each(|(a, b)| *a += b);
                }
                if let Some(gb) = buf!(*beta) {
                    gb.iter_mut().zip(&sum_g).for_each(|(a, b)| *a += b);
                }
                if let Some(gx) = buf!(*x) {
                    let nf = n as f64;
                    for i in 0..n {
                        for j in 0..d {
                            let k = i * d + j;
                            gx[k] += if *batch {
                                gam[j] * inv_std[j] / nf * (nf * g[k] - sum_g[j] - xhat[k] * sum_gx[j])
                            } else {
                                gam[j] * inv_std[j] * g[k]
                            };
                        }
                    }
                }
            }
            Op::PairwiseDist { a, b } => {
                let (n1, d) = nodes[a.0].value.dims2();
                let n2 = nodes[b.0].value.dims2().0;
                let (av, bv) = (val(*a).to_vec(), val(*b).to_vec());
                let dist = node.value.data();
                // coefficient g_ij / d_ij, zero where the distance vanishes
                let coef: Vec<f64> = (0..n1 * n2)
                    .map(|k| if dist[k] > 0.0 { g[k] / dist[k] } else { 0.0 })
                    .collect();
                if let Some(ga) = buf!(*a) {
                    for i in 0..n1 {
                        for j in 0..n2 {
                            let w = coef[i * n2 + j];
                            if w != 0.0 {
                                for t in 0..d {
                                    ga[i * d + t] += w * (av[i * d + t] - bv[j * d + t]);
                                }
                            }
                        }
                    }
                }
                if let Some(gb) = buf!(*b) {
                    for i in 0..n1 {
                        for j in 0..n2 {
                            let w = coef[i * n2 + j];
                            if w != 0.0 {
                                for t in 0..d {
                                    gb[j * d + t] -= w * (av[i * d + t] - bv[j * d + t]);
                                }
                            }
                        }
                    }
                }
            }
            Op::Min { x, axis, argmin } => {
                let c = nodes[x.0].value.dims2().1;
                if let Some(gx) = buf!(*x) {
                    for (line, &k) in argmin.iter().enumerate() {
                        let pos = if *axis == 1 { line * c + k } else { k * c + line };
                        gx[pos] += g[line];
                    }
                }
            }
            Op::EdgeMatVec { mats, vecs } => {
                let (e, d) = node.value.dims2();
                let dd = d * d;
                let (mv, vv) = (val(*mats).to_vec(), val(*vecs).to_vec());
                if let Some(gm) = buf!(*mats) {
                    for k in 0..e {
                        for i in 0..d {
                            let gi = g[k * d + i];
                            for j in 0..d {
                                gm[k * dd + i * d + j] += gi * vv[k * d + j];
                            }
                        }
                    }
                }
                if let Some(gv) = buf!(*vecs) {
                    for k in 0..e {
                        for i in 0..d {
                            let gi = g[k * d + i];
                            for j in 0..d {
                                gv[k * d + j] += gi * mv[k * dd + i * d + j];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Gradients of a scalar root with respect to every recorded value.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient of the root with respect to `v`; zeros if `v` does not
    /// influence the root.
    pub fn wrt(&self, v: Var) -> Tensor {
        let shape = self.shapes.get(v.0).cloned().unwrap_or_default();
        match self.grads.get(v.0).and_then(Option::as_ref) {
            Some(g) => Tensor::new(shape, g.clone()).expect("gradient matches value shape"),
            None => Tensor::zeros(&shape),
        }
    }
}
