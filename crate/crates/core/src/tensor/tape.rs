use std::cell::{Ref, RefCell};
use std::fmt;

use super::kernels::{self, gemm, split_axis};
use super::Tensor;
use crate::error::TensorError;

/// Score written into masked attention positions before the softmax.
pub const MASK_VALUE: f64 = -1e9;

/// Operation that produced a tape node.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OpKind {
    Leaf,
    MatMul,
    Add,
    AddBias,
    Mul,
    Scale,
    Gelu,
    Relu,
    Softmax,
    LayerNorm,
    CrossEntropy,
    Concat,
    Slice,
    Embedding,
    Reshape,
    Permute,
    CausalMask,
    Sum,
    Mean,
}

enum Op {
    Leaf,
    MatMul {
        a: usize,
        b: usize,
        trans_b: bool,
        batch: usize,
        m: usize,
        k: usize,
        n: usize,
    },
    Add(usize, usize),
    AddBias {
        x: usize,
        bias: usize,
    },
    Mul(usize, usize),
    Scale {
        x: usize,
        factor: f64,
    },
    Gelu(usize),
    Relu(usize),
    Softmax {
        x: usize,
        axis: usize,
    },
    LayerNorm {
        x: usize,
        gain: usize,
        bias: usize,
        normalized: Vec<f64>,
        inv_std: Vec<f64>,
    },
    CrossEntropy {
        logits: usize,
        targets: Vec<usize>,
        ignore_index: usize,
        probs: Vec<f64>,
        count: usize,
    },
    Concat {
        inputs: Vec<usize>,
        axis: usize,
    },
    Slice {
        x: usize,
        axis: usize,
        start: usize,
    },
    Embedding {
        table: usize,
        indices: Vec<usize>,
    },
    Reshape(usize),
    Permute {
        x: usize,
        map: Vec<usize>,
    },
    CausalMask(usize),
    Sum(usize),
    Mean(usize),
}

impl Op {
    fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::MatMul { .. } => OpKind::MatMul,
            Op::Add(..) => OpKind::Add,
            Op::AddBias { .. } => OpKind::AddBias,
            Op::Mul(..) => OpKind::Mul,
            Op::Scale { .. } => OpKind::Scale,
            Op::Gelu(_) => OpKind::Gelu,
            Op::Relu(_) => OpKind::Relu,
            Op::Softmax { .. } => OpKind::Softmax,
            Op::LayerNorm { .. } => OpKind::LayerNorm,
            Op::CrossEntropy { .. } => OpKind::CrossEntropy,
            Op::Concat { .. } => OpKind::Concat,
            Op::Slice { .. } => OpKind::Slice,
            Op::Embedding { .. } => OpKind::Embedding,
            Op::Reshape(_) => OpKind::Reshape,
            Op::Permute { .. } => OpKind::Permute,
            Op::CausalMask(_) => OpKind::CausalMask,
            Op::Sum(_) => OpKind::Sum,
            Op::Mean(_) => OpKind::Mean,
        }
    }
}

struct Node {
    shape: Vec<usize>,
    data: Vec<f64>,
    requires_grad: bool,
    op: Op,
}

/// Append-only record of one forward pass.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("shape", &self.shape())
            .finish()
    }
}

/// Gradients produced by [`Tape::backward`], indexed by node.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, var: Var<'_>) -> Option<&[f64]> {
        self.grads.get(var.id).and_then(|g| g.as_deref())
    }
}

fn shape_err(op: &'static str, lhs: &[usize], rhs: &[usize]) -> TensorError {
    TensorError::Shape {
        op,
        lhs: lhs.to_vec(),
        rhs: rhs.to_vec(),
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, shape: Vec<usize>, data: Vec<f64>, requires_grad: bool, op: Op) -> Var<'_> {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        let mut nodes = self.nodes.borrow_mut();
        let op = if requires_grad { op } else { Op::Leaf };
        nodes.push(Node {
            shape,
            data,
            requires_grad,
            op,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    /// Copies `t` onto the tape, tracking gradients iff `t.requires_grad()`.
    pub fn leaf(&self, t: &Tensor) -> Var<'_> {
        self.push(t.shape.clone(), t.data.clone(), t.requires_grad, Op::Leaf)
    }

    /// Copies `t` onto the tape as a constant.
    pub fn constant(&self, t: &Tensor) -> Var<'_> {
        self.push(t.shape.clone(), t.data.clone(), false, Op::Leaf)
    }

    pub fn constant_from(&self, shape: Vec<usize>, data: Vec<f64>) -> Result<Var<'_>, TensorError> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(shape_err("constant", &shape, &[data.len()]));
        }
        Ok(self.push(shape, data, false, Op::Leaf))
    }

    pub fn op_kind(&self, var: Var<'_>) -> OpKind {
        self.nodes.borrow()[var.id].op.kind()
    }

    /// Concatenates along `axis`; all other extents must agree.
    pub fn concat<'t>(&'t self, parts: &[Var<'t>], axis: usize) -> Result<Var<'t>, TensorError> {
        let nodes = self.nodes.borrow();
        let first = parts
            .first()
            .ok_or_else(|| TensorError::Contract("concat of zero tensors".into()))?;
        let base = &nodes[first.id].shape;
        if axis >= base.len() {
            return Err(TensorError::Contract(format!(
                "concat axis {axis} out of range for rank {}",
                base.len()
            )));
        }
        let mut out_shape = base.clone();
        out_shape[axis] = 0;
        for p in parts {
            let s = &nodes[p.id].shape;
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(base)
                    .enumerate()
                    .all(|(d, (a, b))| d == axis || a == b);
            if !compatible {
                return Err(shape_err("concat", base, s));
            }
            out_shape[axis] += s[axis];
        }
        let (outer, _, inner) = split_axis(&out_shape, axis);
        let mut data = Vec::with_capacity(out_shape.iter().product());
        for o in 0..outer {
            for p in parts {
                let node = &nodes[p.id];
                let chunk = node.shape[axis] * inner;
                data.extend_from_slice(&node.data[o * chunk..(o + 1) * chunk]);
            }
        }
        let requires_grad = parts.iter().any(|p| nodes[p.id].requires_grad);
        let inputs = parts.iter().map(|p| p.id).collect();
        drop(nodes);
        Ok(self.push(out_shape, data, requires_grad, Op::Concat { inputs, axis }))
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients, TensorError> {
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id];
        if root.data.len() != 1 {
            return Err(TensorError::Contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                root.shape
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; nodes.len()];
        grads[loss.id] = Some(vec![1.0]);
        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            propagate(&nodes, node, &g, &mut grads);
            grads[id] = Some(g);
        }
        Ok(Gradients { grads })
    }
}

fn accum<'g>(
    grads: &'g mut [Option<Vec<f64>>],
    nodes: &[Node],
    id: usize,
) -> Option<&'g mut Vec<f64>> {
    if !nodes[id].requires_grad {
        return None;
    }
    let len = nodes[id].data.len();
    Some(grads[id].get_or_insert_with(|| vec![0.0; len]))
}

fn propagate(nodes: &[Node], node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
    match &node.op {
        Op::Leaf => {}
        &Op::MatMul {
            a,
            b,
            trans_b,
            batch,
            m,
            k,
            n,
        } => {
            let (av, bv) = (&nodes[a].data, &nodes[b].data);
            let shared_b = batch == 1;
            if let Some(ga) = accum(grads, nodes, a) {
                for i in 0..batch {
                    let (ao, bo, co) = (i * m * k, if shared_b { 0 } else { i * k * n }, i * m * n);
                    // dA = dC · op(B)^T
                    gemm(
                        m,
                        n,
                        k,
                        &g[co..co + m * n],
                        false,
                        &bv[bo..bo + k * n],
                        !trans_b,
                        &mut ga[ao..ao + m * k],
                        true,
                    );
                }
            }
            if let Some(gb) = accum(grads, nodes, b) {
                for i in 0..batch {
                    let (ao, bo, co) = (i * m * k, if shared_b { 0 } else { i * k * n }, i * m * n);
                    if trans_b {
                        // dB = dC^T · A
                        gemm(
                            n,
                            m,
                            k,
                            &g[co..co + m * n],
                            true,
                            &av[ao..ao + m * k],
                            false,
                            &mut gb[bo..bo + k * n],
                            true,
                        );
                    } else {
                        // dB = A^T · dC
                        gemm(
                            k,
                            m,
                            n,
                            &av[ao..ao + m * k],
                            true,
                            &g[co..co + m * n],
                            false,
                            &mut gb[bo..bo + k * n],
                            true,
                        );
                    }
                }
            }
        }
        &Op::Add(a, b) => {
            for id in [a, b] {
                if let Some(ga) = accum(grads, nodes, id) {
                    ga.iter_mut().zip(g).for_each(|(x, y)| *x += y);
                }
            }
        }
        &Op::AddBias { x, bias } => {
            if let Some(gx) = accum(grads, nodes, x) {
                gx.iter_mut().zip(g).for_each(|(x, y)| *x += y);
            }
            if let Some(gb) = accum(grads, nodes, bias) {
                let n = gb.len();
                for row in g.chunks(n) {
                    gb.iter_mut().zip(row).for_each(|(x, y)| *x += y);
                }
            }
        }
        &Op::Mul(a, b) => {
            let (av, bv) = (&nodes[a].data, &nodes[b].data);
            if let Some(ga) = accum(grads, nodes, a) {
                for i in 0..g.len() {
                    ga[i] += g[i] * bv[i];
                }
            }
            if let Some(gb) = accum(grads, nodes, b) {
                for i in 0..g.len() {
                    gb[i] += g[i] * av[i];
                }
            }
        }
        &Op::Scale { x, factor } => {
            if let Some(gx) = accum(grads, nodes, x) {
                gx.iter_mut().zip(g).for_each(|(a, b)| *a += factor * b);
            }
        }
        &Op::Gelu(x) => {
            let xv = &nodes[x].data;
            let local: Vec<f64> = xv.iter().map(|&v| kernels::gelu_grad(v)).collect();
            if let Some(gx) = accum(grads, nodes, x) {
                for i in 0..g.len() {
                    gx[i] += g[i] * local[i];
                }
            }
        }
        &Op::Relu(x) => {
            let active: Vec<bool> = nodes[x].data.iter().map(|&v| v > 0.0).collect();
            if let Some(gx) = accum(grads, nodes, x) {
                for i in 0..g.len() {
                    if active[i] {
                        gx[i] += g[i];
                    }
                }
            }
        }
        &Op::Softmax { x, axis } => {
            let y = &node.data;
            let (outer, len, inner) = split_axis(&node.shape, axis);
            let mut local = vec![0.0; y.len()];
            for o in 0..outer {
                for r in 0..inner {
                    let base = o * len * inner + r;
                    let dot: f64 = (0..len)
                        .map(|i| g[base + i * inner] * y[base + i * inner])
                        .sum();
                    for i in 0..len {
                        let j = base + i * inner;
                        local[j] = y[j] * (g[j] - dot);
                    }
                }
            }
            if let Some(gx) = accum(grads, nodes, x) {
                gx.iter_mut().zip(&local).for_each(|(a, b)| *a += b);
            }
        }
        Op::LayerNorm {
            x,
            gain,
            bias,
            normalized,
            inv_std,
        } => {
            let d = *node.shape.last().unwrap();
            let gv = &nodes[*gain].data;
            if let Some(gg) = accum(grads, nodes, *gain) {
                for (row_g, row_n) in g.chunks(d).zip(normalized.chunks(d)) {
                    for j in 0..d {
                        gg[j] += row_g[j] * row_n[j];
                    }
                }
            }
            if let Some(gb) = accum(grads, nodes, *bias) {
                for row_g in g.chunks(d) {
                    gb.iter_mut().zip(row_g).for_each(|(a, b)| *a += b);
                }
            }
            if let Some(gx) = accum(grads, nodes, *x) {
                for (r, (row_g, row_n)) in g.chunks(d).zip(normalized.chunks(d)).enumerate() {
                    let dn: Vec<f64> = (0..d).map(|j| row_g[j] * gv[j]).collect();
                    let mean_dn = dn.iter().sum::<f64>() / d as f64;
                    let mean_dn_n =
                        dn.iter().zip(row_n).map(|(a, b)| a * b).sum::<f64>() / d as f64;
                    for j in 0..d {
                        gx[r * d + j] += inv_std[r] * (dn[j] - mean_dn - row_n[j] * mean_dn_n);
                    }
                }
            }
        }
        Op::CrossEntropy {
            logits,
            targets,
            ignore_index,
            probs,
            count,
        } => {
            if *count == 0 {
                return;
            }
            let classes = *nodes[*logits].shape.last().unwrap();
            let scale = g[0] / *count as f64;
            if let Some(gl) = accum(grads, nodes, *logits) {
                for (r, &t) in targets.iter().enumerate() {
                    if t == *ignore_index {
                        continue;
                    }
                    for c in 0..classes {
                        let onehot = if c == t { 1.0 } else { 0.0 };
                        gl[r * classes + c] += scale * (probs[r * classes + c] - onehot);
                    }
                }
            }
        }
        Op::Concat { inputs, axis } => {
            let (outer, _, inner) = split_axis(&node.shape, *axis);
            let mut offset = 0;
            let total_chunk = node.shape[*axis] * inner;
            for &id in inputs {
                let chunk = nodes[id].shape[*axis] * inner;
                if let Some(gi) = accum(grads, nodes, id) {
                    for o in 0..outer {
                        let src = &g[o * total_chunk + offset..o * total_chunk + offset + chunk];
                        gi[o * chunk..(o + 1) * chunk]
                            .iter_mut()
                            .zip(src)
                            .for_each(|(a, b)| *a += b);
                    }
                }
                offset += chunk;
            }
        }
        &Op::Slice { x, axis, start } => {
            let in_shape = nodes[x].shape.clone();
            let (outer, in_len, inner) = split_axis(&in_shape, axis);
            let len = node.shape[axis];
            if let Some(gx) = accum(grads, nodes, x) {
                for o in 0..outer {
                    let dst = o * in_len * inner + start * inner;
                    let src = o * len * inner;
                    for i in 0..len * inner {
                        gx[dst + i] += g[src + i];
                    }
                }
            }
        }
        Op::Embedding { table, indices } => {
            let d = *node.shape.last().unwrap();
            if let Some(gt) = accum(grads, nodes, *table) {
                for (r, &idx) in indices.iter().enumerate() {
                    for j in 0..d {
                        gt[idx * d + j] += g[r * d + j];
                    }
                }
            }
        }
        &Op::Reshape(x) => {
            if let Some(gx) = accum(grads, nodes, x) {
                gx.iter_mut().zip(g).for_each(|(a, b)| *a += b);
            }
        }
        Op::Permute { x, map } => {
            if let Some(gx) = accum(grads, nodes, *x) {
                for (out, &src) in map.iter().enumerate() {
                    gx[src] += g[out];
                }
            }
        }
        &Op::CausalMask(x) => {
            let s = *node.shape.last().unwrap();
            if let Some(gx) = accum(grads, nodes, x) {
                for (blk_out, blk_g) in gx.chunks_mut(s * s).zip(g.chunks(s * s)) {
                    for i in 0..s {
                        for j in 0..=i {
                            blk_out[i * s + j] += blk_g[i * s + j];
                        }
                    }
                }
            }
        }
        &Op::Sum(x) => {
            if let Some(gx) = accum(grads, nodes, x) {
                gx.iter_mut().for_each(|a| *a += g[0]);
            }
        }
        &Op::Mean(x) => {
            let n = nodes[x].data.len() as f64;
            if let Some(gx) = accum(grads, nodes, x) {
                gx.iter_mut().for_each(|a| *a += g[0] / n);
            }
        }
    }
}

impl<'t> Var<'t> {
    fn node(&self) -> Ref<'t, Node> {
        Ref::map(self.tape.nodes.borrow(), |n| &n[self.id])
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn shape(&self) -> Vec<usize> {
        self.node().shape.clone()
    }

    pub fn data(&self) -> Vec<f64> {
        self.node().data.clone()
    }

    /// Reads the value without cloning.
    pub fn with_data<R>(&self, f: impl FnOnce(&[f64]) -> R) -> R {
        f(&self.node().data)
    }

    pub fn value(&self) -> Tensor {
        let node = self.node();
        Tensor {
            shape: node.shape.clone(),
            data: node.data.clone(),
            requires_grad: false,
            grad: None,
        }
    }

    pub fn item(&self) -> f64 {
        self.node().data[0]
    }

    pub fn requires_grad(&self) -> bool {
        self.node().requires_grad
    }

    fn unary(&self, shape: Vec<usize>, data: Vec<f64>, op: Op) -> Var<'t> {
        let rg = self.requires_grad();
        self.tape.push(shape, data, rg, op)
    }

    /// Matrix product over the last two axes.
    ///
    /// `self` is `[.., m, k]`. A rank-2 `other` (`[k, n]`) is shared by every
    /// leading index of `self`; a rank-3 `other` (`[B, k, n]`) is batched
    /// against a rank-3 `self`.
    pub fn matmul(&self, other: &Var<'t>) -> Result<Var<'t>, TensorError> {
        self.matmul_impl(other, false)
    }

    /// `self · otherᵀ`, where `other` is `[n, k]` or `[B, n, k]`.
    pub fn matmul_t(&self, other: &Var<'t>) -> Result<Var<'t>, TensorError> {
        self.matmul_impl(other, true)
    }

    fn matmul_impl(&self, other: &Var<'t>, trans_b: bool) -> Result<Var<'t>, TensorError> {
        let (a_shape, b_shape) = (self.shape(), other.shape());
        let err = || shape_err("matmul", &a_shape, &b_shape);
        if a_shape.len() < 2 {
            return Err(err());
        }
        let k = *a_shape.last().unwrap();
        let (batch, m, n, out_shape) = match b_shape.len() {
            2 => {
                let (bk, bn) = if trans_b {
                    (b_shape[1], b_shape[0])
                } else {
                    (b_shape[0], b_shape[1])
                };
                if bk != k {
                    return Err(err());
                }
                let m = a_shape[..a_shape.len() - 1].iter().product();
                let mut out = a_shape[..a_shape.len() - 1].to_vec();
                out.push(bn);
                (1, m, bn, out)
            }
            3 => {
                if a_shape.len() != 3 || a_shape[0] != b_shape[0] {
                    return Err(err());
                }
                let (bk, bn) = if trans_b {
                    (b_shape[2], b_shape[1])
                } else {
                    (b_shape[1], b_shape[2])
                };
                if bk != k {
                    return Err(err());
                }
                (a_shape[0], a_shape[1], bn, vec![a_shape[0], a_shape[1], bn])
            }
            _ => return Err(err()),
        };
        let mut out = vec![0.0; batch * m * n];
        {
            let nodes = self.tape.nodes.borrow();
            let (av, bv) = (&nodes[self.id].data, &nodes[other.id].data);
            let shared_b = batch == 1;
            for i in 0..batch {
                let bo = if shared_b { 0 } else { i * k * n };
                gemm(
                    m,
                    k,
                    n,
                    &av[i * m * k..(i + 1) * m * k],
                    false,
                    &bv[bo..bo + k * n],
                    trans_b,
                    &mut out[i * m * n..(i + 1) * m * n],
                    false,
                );
            }
        }
        let rg = self.requires_grad() || other.requires_grad();
        Ok(self.tape.push(
            out_shape,
            out,
            rg,
            Op::MatMul {
                a: self.id,
                b: other.id,
                trans_b,
                batch,
                m,
                k,
                n,
            },
        ))
    }

    fn elementwise(
        &self,
        other: &Var<'t>,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var<'t>, TensorError> {
        let (sa, sb) = (self.shape(), other.shape());
        if sa != sb {
            return Err(shape_err(name, &sa, &sb));
        }
        let data = {
            let nodes = self.tape.nodes.borrow();
            nodes[self.id]
                .data
                .iter()
                .zip(&nodes[other.id].data)
                .map(|(&a, &b)| f(a, b))
                .collect()
        };
        let rg = self.requires_grad() || other.requires_grad();
        Ok(self.tape.push(sa, data, rg, op))
    }

    pub fn add(&self, other: &Var<'t>) -> Result<Var<'t>, TensorError> {
        self.elementwise(other, "add", |a, b| a + b, Op::Add(self.id, other.id))
    }

    pub fn mul(&self, other: &Var<'t>) -> Result<Var<'t>, TensorError> {
        self.elementwise(other, "mul", |a, b| a * b, Op::Mul(self.id, other.id))
    }

    /// Adds a `[n]` bias to every trailing row of a `[.., n]` tensor.
    pub fn add_bias(&self, bias: &Var<'t>) -> Result<Var<'t>, TensorError> {
        let (sx, sb) = (self.shape(), bias.shape());
        if sb.len() != 1 || sx.last() != sb.first() {
            return Err(shape_err("add_bias", &sx, &sb));
        }
        let data = {
            let nodes = self.tape.nodes.borrow();
            let b = &nodes[bias.id].data;
            nodes[self.id]
                .data
                .chunks(b.len())
                .flat_map(|row| row.iter().zip(b).map(|(x, y)| x + y))
                .collect()
        };
        let rg = self.requires_grad() || bias.requires_grad();
        Ok(self.tape.push(
            sx,
            data,
            rg,
            Op::AddBias {
                x: self.id,
                bias: bias.id,
            },
        ))
    }

    pub fn scale(&self, factor: f64) -> Var<'t> {
        let data = self.with_data(|d| d.iter().map(|v| v * factor).collect());
        self.unary(self.shape(), data, Op::Scale { x: self.id, factor })
    }

    /// GELU, tanh approximation.
    pub fn gelu(&self) -> Var<'t> {
        let data = self.with_data(|d| d.iter().map(|&v| kernels::gelu(v)).collect());
        self.unary(self.shape(), data, Op::Gelu(self.id))
    }

    pub fn relu(&self) -> Var<'t> {
        let data = self.with_data(|d| d.iter().map(|&v| v.max(0.0)).collect());
        self.unary(self.shape(), data, Op::Relu(self.id))
    }

    /// Max-stabilized softmax along `axis`.
    pub fn softmax(&self, axis: usize) -> Result<Var<'t>, TensorError> {
        let shape = self.shape();
        if axis >= shape.len() || shape[axis] == 0 {
            return Err(TensorError::Contract(format!(
                "softmax axis {axis} invalid for shape {shape:?}"
            )));
        }
        let (outer, len, inner) = split_axis(&shape, axis);
        let data = self.with_data(|x| {
            let mut y = vec![0.0; x.len()];
            for o in 0..outer {
                for r in 0..inner {
                    let base = o * len * inner + r;
                    let max = (0..len)
                        .map(|i| x[base + i * inner])
                        .fold(f64::NEG_INFINITY, f64::max);
                    let mut total = 0.0;
                    for i in 0..len {
                        let e = (x[base + i * inner] - max).exp();
                        y[base + i * inner] = e;
                        total += e;
                    }
                    for i in 0..len {
                        y[base + i * inner] /= total;
                    }
                }
            }
            y
        });
        Ok(self.unary(shape, data, Op::Softmax { x: self.id, axis }))
    }

    /// Layer normalization over the last axis.
    pub fn layer_norm(
        &self,
        gain: &Var<'t>,
        bias: &Var<'t>,
        eps: f64,
    ) -> Result<Var<'t>, TensorError> {
        let shape = self.shape();
        let d = *shape
            .last()
            .ok_or_else(|| TensorError::Contract("layer_norm on a scalar".into()))?;
        if gain.shape() != [d] || bias.shape() != [d] {
            return Err(shape_err("layer_norm", &shape, &gain.shape()));
        }
        if eps <= 0.0 {
            return Err(TensorError::Contract(
                "layer_norm eps must be positive".into(),
            ));
        }
        let (out, normalized, inv_std) = {
            let nodes = self.tape.nodes.borrow();
            let (x, gv, bv) = (
                &nodes[self.id].data,
                &nodes[gain.id].data,
                &nodes[bias.id].data,
            );
            let rows = x.len() / d;
            let mut out = vec![0.0; x.len()];
            let mut normalized = vec![0.0; x.len()];
            let mut inv_std = vec![0.0; rows];
            for r in 0..rows {
                let row = &x[r * d..(r + 1) * d];
                let mean = row.iter().sum::<f64>() / d as f64;
                let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
                let is = 1.0 / (var + eps).sqrt();
                inv_std[r] = is;
                for j in 0..d {
                    let nv = (row[j] - mean) * is;
                    normalized[r * d + j] = nv;
                    out[r * d + j] = nv * gv[j] + bv[j];
                }
            }
            (out, normalized, inv_std)
        };
        let rg = self.requires_grad() || gain.requires_grad() || bias.requires_grad();
        Ok(self.tape.push(
            shape,
            out,
            rg,
            Op::LayerNorm {
                x: self.id,
                gain: gain.id,
                bias: bias.id,
                normalized,
                inv_std,
            },
        ))
    }

    /// Mean negative log-likelihood of `targets` under row-wise softmax of
    /// `[n, A]` logits. Rows whose target equals `ignore_index` are skipped;
    /// if every row is skipped the loss is zero.
    pub fn cross_entropy(
        &self,
        targets: &[usize],
        ignore_index: usize,
    ) -> Result<Var<'t>, TensorError> {
        let shape = self.shape();
        if shape.len() != 2 || shape[0] != targets.len() {
            return Err(shape_err("cross_entropy", &shape, &[targets.len()]));
        }
        let classes = shape[1];
        for &t in targets {
            if t != ignore_index && t >= classes {
                return Err(TensorError::Index {
                    op: "cross_entropy",
                    index: t,
                    size: classes,
                });
            }
        }
        let (loss, probs, count) = self.with_data(|x| {
            let mut probs = vec![0.0; x.len()];
            let mut total = 0.0;
            let mut count = 0;
            for (r, &t) in targets.iter().enumerate() {
                let row = &x[r * classes..(r + 1) * classes];
                let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = row.iter().map(|v| (v - max).exp()).sum();
                let lse = max + z.ln();
                for c in 0..classes {
                    probs[r * classes + c] = (row[c] - lse).exp();
                }
                if t != ignore_index {
                    total += lse - row[t];
                    count += 1;
                }
            }
            let loss = if count == 0 {
                0.0
            } else {
                total / count as f64
            };
            (loss, probs, count)
        });
        Ok(self.unary(
            Vec::new(),
            vec![loss],
            Op::CrossEntropy {
                logits: self.id,
                targets: targets.to_vec(),
                ignore_index,
                probs,
                count,
            },
        ))
    }

    /// Contiguous range `[start, start + len)` along `axis`.
    pub fn slice(&self, axis: usize, start: usize, len: usize) -> Result<Var<'t>, TensorError> {
        let shape = self.shape();
        if axis >= shape.len() {
            return Err(TensorError::Contract(format!(
                "slice axis {axis} out of range for rank {}",
                shape.len()
            )));
        }
        if start + len > shape[axis] {
            return Err(TensorError::Index {
                op: "slice",
                index: start + len,
                size: shape[axis],
            });
        }
        let (outer, in_len, inner) = split_axis(&shape, axis);
        let data = self.with_data(|x| {
            let mut out = Vec::with_capacity(outer * len * inner);
            for o in 0..outer {
                let base = o * in_len * inner + start * inner;
                out.extend_from_slice(&x[base..base + len * inner]);
            }
            out
        });
        let mut out_shape = shape;
        out_shape[axis] = len;
        Ok(self.unary(
            out_shape,
            data,
            Op::Slice {
                x: self.id,
                axis,
                start,
            },
        ))
    }

    /// Gathers rows of a `[V, d]` table; gradients flow only to the rows read.
    pub fn embedding_lookup(&self, indices: &[usize]) -> Result<Var<'t>, TensorError> {
        let shape = self.shape();
        if shape.len() != 2 {
            return Err(TensorError::Contract(format!(
                "embedding table must be rank 2, got {shape:?}"
            )));
        }
        let (rows, d) = (shape[0], shape[1]);
        if let Some(&bad) = indices.iter().find(|&&i| i >= rows) {
            return Err(TensorError::Index {
                op: "embedding_lookup",
                index: bad,
                size: rows,
            });
        }
        let data = self.with_data(|t| {
            let mut out = Vec::with_capacity(indices.len() * d);
            for &i in indices {
                out.extend_from_slice(&t[i * d..(i + 1) * d]);
            }
            out
        });
        Ok(self.unary(
            vec![indices.len(), d],
            data,
            Op::Embedding {
                table: self.id,
                indices: indices.to_vec(),
            },
        ))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Var<'t>, TensorError> {
        let current = self.shape();
        if shape.iter().product::<usize>() != current.iter().product::<usize>() {
            return Err(shape_err("reshape", &current, shape));
        }
        let data = self.data();
        Ok(self.unary(shape.to_vec(), data, Op::Reshape(self.id)))
    }

    /// Reorders axes: output axis `i` is input axis `axes[i]`.
    pub fn permute(&self, axes: &[usize]) -> Result<Var<'t>, TensorError> {
        let shape = self.shape();
        let mut seen = vec![false; shape.len()];
        let valid = axes.len() == shape.len()
            && axes
                .iter()
                .all(|&a| a < shape.len() && !std::mem::replace(&mut seen[a], true));
        if !valid {
            return Err(shape_err("permute", &shape, axes));
        }
        let map = kernels::permute_index(&shape, axes);
        let data = self.with_data(|x| map.iter().map(|&s| x[s]).collect());
        let out_shape = axes.iter().map(|&a| shape[a]).collect();
        Ok(self.unary(out_shape, data, Op::Permute { x: self.id, map }))
    }

    /// Replaces entries above the diagonal of the trailing `[S, S]` block
    /// with [`MASK_VALUE`].
    pub fn causal_mask(&self) -> Result<Var<'t>, TensorError> {
        let shape = self.shape();
        let n = shape.len();
        if n < 2 || shape[n - 1] != shape[n - 2] {
            return Err(shape_err(
                "causal_mask",
                &shape,
                &shape[n.saturating_sub(2)..],
            ));
        }
        let s = shape[n - 1];
        let data = self.with_data(|x| {
            let mut y = x.to_vec();
            for blk in y.chunks_mut(s * s) {
                for i in 0..s {
                    for j in i + 1..s {
                        blk[i * s + j] = MASK_VALUE;
                    }
                }
            }
            y
        });
        Ok(self.unary(shape, data, Op::CausalMask(self.id)))
    }

    pub fn sum(&self) -> Var<'t> {
        let total = self.with_data(|d| d.iter().sum());
        self.unary(Vec::new(), vec![total], Op::Sum(self.id))
    }

    pub fn mean(&self) -> Var<'t> {
        let mean = self.with_data(|d| d.iter().sum::<f64>() / d.len().max(1) as f64);
        self.unary(Vec::new(), vec![mean], Op::Mean(self.id))
    }

    pub fn concat(&self, other: &Var<'t>, axis: usize) -> Result<Var<'t>, TensorError> {
        self.tape.concat(&[*self, *other], axis)
    }
}
