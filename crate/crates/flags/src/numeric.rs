//! Dense f64 tensors and a tape-based reverse-mode differentiation engine.
//!
//! Tensors are plain row-major values. Differentiable computations are
//! recorded on a [`Graph`]: every op appends a node, so node ids are already
//! in topological order and `backward` is a single reverse sweep.

use serde::{Deserialize, Serialize};

use crate::error::{FlagsError, Result};

/// Arguments to `exp` above this raise an overflow error instead of
/// producing Inf.
pub const EXP_OVERFLOW_LIMIT: f64 = 700.0;

/// Default epsilon for `l2_normalize`.
pub const NORM_EPSILON: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != values.len() {
            return Err(FlagsError::Dimension {
                expected: format!("{numel} values for shape {shape:?}"),
                got: format!("{} values", values.len()),
            });
        }
        Ok(Tensor { shape, values })
    }

    pub fn scalar(x: f64) -> Self {
        Tensor { shape: vec![1], values: vec![x] }
    }

    pub fn vector(values: Vec<f64>) -> Self {
        Tensor { shape: vec![values.len()], values }
    }

    pub fn matrix(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        Tensor::new(vec![rows, cols], values)
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        Tensor { shape, values: vec![0.0; numel] }
    }

    pub fn numel(&self) -> usize {
        self.values.len()
    }

    pub fn is_scalar(&self) -> bool {
        self.numel() == 1
    }

    pub fn item(&self) -> f64 {
        debug_assert!(self.is_scalar());
        self.values[0]
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Cosine similarity between two plain vectors.
/// Errors if either norm is below `NORM_EPSILON`.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(FlagsError::Dimension {
            expected: format!("len {}", a.len()),
            got: format!("len {}", b.len()),
        });
    }
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if na <= NORM_EPSILON || nb <= NORM_EPSILON {
        return Err(FlagsError::Degenerate(
            "zero-norm vector in cosine similarity".into(),
        ));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Ok(dot / (na * nb))
}

/// Normalize a plain vector to unit Euclidean norm.
pub fn l2_normalize_values(v: &[f64], epsilon: f64) -> Result<Vec<f64>> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm <= epsilon {
        return Err(FlagsError::Degenerate(format!(
            "norm {norm:.3e} is at or below epsilon {epsilon:.3e}"
        )));
    }
    Ok(v.iter().map(|x| x / norm).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Debug, Clone)]
enum Op {
    /// Input tensor. `requires_grad: false` marks a constant whose gradient
    /// is never accumulated (key-side embeddings, queue negatives).
    Leaf { requires_grad: bool },
    Add(NodeId, NodeId),
    AddScalar(NodeId),
    Scale(NodeId, f64),
    Matmul(NodeId, NodeId),
    /// Matrix [m x k] times vector [k] -> vector [m].
    MatVec(NodeId, NodeId),
    Relu(NodeId),
    Exp(NodeId),
    Log(NodeId),
    Dot(NodeId, NodeId),
    Concat(Vec<NodeId>),
    L2Normalize(NodeId),
    Sum(NodeId),
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Tensor,
    grad: Vec<f64>,
}

/// A recorded computation. Nodes are appended in evaluation order, so the
/// node list is a topological order of the DAG by construction.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    fn push(&mut self, op: Op, value: Tensor) -> NodeId {
        let grad = vec![0.0; value.numel()];
        self.nodes.push(Node { op, value, grad });
        NodeId(self.nodes.len() - 1)
    }

    /// Record an input that participates in backward.
    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Leaf { requires_grad: true }, value)
    }

    /// Record an input that is held constant (no gradient accumulated).
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Leaf { requires_grad: false }, value)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Gradient accumulated at `id` by the last `backward` call.
    pub fn grad(&self, id: NodeId) -> Tensor {
        let node = &self.nodes[id.0];
        Tensor {
            shape: node.value.shape.clone(),
            values: node.grad.clone(),
        }
    }

    fn check_same_shape(&self, a: NodeId, b: NodeId) -> Result<()> {
        let (sa, sb) = (&self.nodes[a.0].value.shape, &self.nodes[b.0].value.shape);
        if sa != sb {
            return Err(FlagsError::Dimension {
                expected: format!("{sa:?}"),
                got: format!("{sb:?}"),
            });
        }
        Ok(())
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check_same_shape(a, b)?;
        let values = self.nodes[a.0]
            .value
            .values
            .iter()
            .zip(&self.nodes[b.0].value.values)
            .map(|(x, y)| x + y)
            .collect();
        let shape = self.nodes[a.0].value.shape.clone();
        Ok(self.push(Op::Add(a, b), Tensor { shape, values }))
    }

    pub fn add_scalar(&mut self, a: NodeId, c: f64) -> NodeId {
        let values = self.nodes[a.0].value.values.iter().map(|x| x + c).collect();
        let shape = self.nodes[a.0].value.shape.clone();
        self.push(Op::AddScalar(a), Tensor { shape, values })
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let values = self.nodes[a.0].value.values.iter().map(|x| x * c).collect();
        let shape = self.nodes[a.0].value.shape.clone();
        self.push(Op::Scale(a, c), Tensor { shape, values })
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (&self.nodes[a.0].value.shape, &self.nodes[b.0].value.shape);
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(FlagsError::Dimension {
                expected: "[m x k] by [k x n]".into(),
                got: format!("{sa:?} by {sb:?}"),
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let av = &self.nodes[a.0].value.values;
        let bv = &self.nodes[b.0].value.values;
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for p in 0..k {
                let x = av[i * k + p];
                for j in 0..n {
                    out[i * n + j] += x * bv[p * n + j];
                }
            }
        }
        Ok(self.push(Op::Matmul(a, b), Tensor { shape: vec![m, n], values: out }))
    }

    pub fn matvec(&mut self, a: NodeId, v: NodeId) -> Result<NodeId> {
        let (sa, sv) = (&self.nodes[a.0].value.shape, &self.nodes[v.0].value.shape);
        if sa.len() != 2 || sv.len() != 1 || sa[1] != sv[0] {
            return Err(FlagsError::Dimension {
                expected: "[m x k] by [k]".into(),
                got: format!("{sa:?} by {sv:?}"),
            });
        }
        let (m, k) = (sa[0], sa[1]);
        let av = &self.nodes[a.0].value.values;
        let vv = &self.nodes[v.0].value.values;
        let out: Vec<f64> = (0..m)
            .map(|i| {
                av[i * k..(i + 1) * k]
                    .iter()
                    .zip(vv)
                    .map(|(x, y)| x * y)
                    .sum()
            })
            .collect();
        Ok(self.push(Op::MatVec(a, v), Tensor { shape: vec![m], values: out }))
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let values = self.nodes[a.0].value.values.iter().map(|x| x.max(0.0)).collect();
        let shape = self.nodes[a.0].value.shape.clone();
        self.push(Op::Relu(a), Tensor { shape, values })
    }

    pub fn exp(&mut self, a: NodeId) -> Result<NodeId> {
        for &x in &self.nodes[a.0].value.values {
            if x > EXP_OVERFLOW_LIMIT {
                return Err(FlagsError::Overflow(x));
            }
        }
        let values = self.nodes[a.0].value.values.iter().map(|x| x.exp()).collect();
        let shape = self.nodes[a.0].value.shape.clone();
        Ok(self.push(Op::Exp(a), Tensor { shape, values }))
    }

    pub fn log(&mut self, a: NodeId) -> Result<NodeId> {
        for &x in &self.nodes[a.0].value.values {
            if x <= 0.0 {
                return Err(FlagsError::Degenerate(format!(
                    "log of non-positive value {x:.3e}"
                )));
            }
        }
        let values = self.nodes[a.0].value.values.iter().map(|x| x.ln()).collect();
        let shape = self.nodes[a.0].value.shape.clone();
        Ok(self.push(Op::Log(a), Tensor { shape, values }))
    }

    pub fn dot(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check_same_shape(a, b)?;
        let s: f64 = self.nodes[a.0]
            .value
            .values
            .iter()
            .zip(&self.nodes[b.0].value.values)
            .map(|(x, y)| x * y)
            .sum();
        Ok(self.push(Op::Dot(a, b), Tensor::scalar(s)))
    }

    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(FlagsError::Contract("concat of zero tensors".into()));
        }
        let mut values = Vec::new();
        for &p in parts {
            values.extend_from_slice(&self.nodes[p.0].value.values);
        }
        let shape = vec![values.len()];
        Ok(self.push(Op::Concat(parts.to_vec()), Tensor { shape, values }))
    }

    pub fn l2_normalize(&mut self, a: NodeId, epsilon: f64) -> Result<NodeId> {
        let values = l2_normalize_values(&self.nodes[a.0].value.values, epsilon)?;
        let shape = self.nodes[a.0].value.shape.clone();
        Ok(self.push(Op::L2Normalize(a), Tensor { shape, values }))
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let s: f64 = self.nodes[a.0].value.values.iter().sum();
        self.push(Op::Sum(a), Tensor::scalar(s))
    }

    /// Reverse sweep from a scalar output. Populates every node's grad
    /// buffer; leaves off any path to the output keep zero grad.
    pub fn backward(&mut self, output: NodeId) -> Result<()> {
        if !self.nodes[output.0].value.is_scalar() {
            return Err(FlagsError::Contract(format!(
                "backward requires a scalar output, got shape {:?}",
                self.nodes[output.0].value.shape
            )));
        }
        for node in &mut self.nodes {
            node.grad.iter_mut().for_each(|g| *g = 0.0);
        }
        self.nodes[output.0].grad[0] = 1.0;

        for idx in (0..=output.0).rev() {
            let op = self.nodes[idx].op.clone();
            match op {
                Op::Leaf { .. } => {}
                Op::Add(a, b) => {
                    let g = std::mem::take(&mut self.nodes[idx].grad);
                    for (dst, &gi) in self.nodes[a.0].grad.iter_mut().zip(&g) {
                        *dst += gi;
                    }
                    for (dst, &gi) in self.nodes[b.0].grad.iter_mut().zip(&g) {
                        *dst += gi;
                    }
                    self.nodes[idx].grad = g;
                }
                Op::AddScalar(a) => {
                    let g = std::mem::take(&mut self.nodes[idx].grad);
                    for (dst, &gi) in self.nodes[a.0].grad.iter_mut().zip(&g) {
                        *dst += gi;
                    }
                    self.nodes[idx].grad = g;
                }
                Op::Scale(a, c) => {
                    let g = std::mem::take(&mut self.nodes[idx].grad);
                    for (dst, &gi) in self.nodes[a.0].grad.iter_mut().zip(&g) {
                        *dst += c * gi;
                    }
                    self.nodes[idx].grad = g;
                }
                Op::Matmul(a, b) => {
                    let g = std::mem::take(&mut self.nodes[idx].grad);
                    let (m, k) = {
                        let s = &self.nodes[a.0].value.shape;
                        (s[0], s[1])
                    };
                    let n = self.nodes[b.0].value.shape[1];
                    if self.requires_grad(a) {
                        // dA = dC . B^T
                        let bv = self.nodes[b.0].value.values.clone();
                        let ga = &mut self.nodes[a.0].grad;
                        for i in 0..m {
                            for p in 0..k {
                                let mut s = 0.0;
                                for j in 0..n {
                                    s += g[i * n + j] * bv[p * n + j];
                                }
                                ga[i * k + p] += s;
                            }
                        }
                    }
                    if self.requires_grad(b) {
                        // dB = A^T . dC
                        let av = self.nodes[a.0].value.values.clone();
                        let gb = &mut self.nodes[b.0].grad;
                        for p in 0..k {
                            for j in 0..n {
                                let mut s = 0.0;
                                for i in 0..m {
                                    s += av[i * k + p] * g[i * n + j];
                                }
                                gb[p * n + j] += s;
                            }
                        }
                    }
                    self.nodes[idx].grad = g;
                }
                Op::MatVec(a, v) => {
                    let g = std::mem::take(&mut self.nodes[idx].grad);
                    let (m, k) = {
                        let s = &self.nodes[a.0].value.shape;
                        (s[0], s[1])
                    };
                    if self.requires_grad(a) {
                        // dA = g (outer) x
                        let xv = self.nodes[v.0].value.values.clone();
                        let ga = &mut self.nodes[a.0].grad;
                        for i in 0..m {
                            let gi = g[i];
                            if gi != 0.0 {
                                for p in 0..k {
                                    ga[i * k + p] += gi * xv[p];
                                }
                            }
                        }
                    }
                    if self.requires_grad(v) {
                        // dx = A^T g
                        let av = self.nodes[a.0].value.values.clone();
                        let gv = &mut self.nodes[v.0].grad;
                        for i in 0..m {
                            let gi = g[i];
                            if gi != 0.0 {
                                for p in 0..k {
                                    gv[p] += av[i * k + p] * gi;
                                }
                            }
                        }
                    }
                    self.nodes[idx].grad = g;
                }
                Op::Relu(a) => {
                    let g = std::mem::take(&mut self.nodes[idx].grad);
                    let inputs = self.nodes[a.0].value.values.clone();
                    for ((dst, &gi), x) in self.nodes[a.0].grad.iter_mut().zip(&g).zip(inputs) {
                        if x > 0.0 {
                            *dst += gi;
                        }
                    }
                    self.nodes[idx].grad = g;
                }
                Op::Exp(a) => {
                    let g = std::mem::take(&mut self.nodes[idx].grad);
                    let outputs = self.nodes[idx].value.values.clone();
                    for ((dst, &gi), y) in self.nodes[a.0].grad.iter_mut().zip(&g).zip(outputs) {
                        *dst += gi * y;
                    }
                    self.nodes[idx].grad = g;
                }
                Op::Log(a) => {
                    let g = std::mem::take(&mut self.nodes[idx].grad);
                    let inputs = self.nodes[a.0].value.values.clone();
                    for ((dst, &gi), x) in self.nodes[a.0].grad.iter_mut().zip(&g).zip(inputs) {
                        *dst += gi / x;
                    }
                    self.nodes[idx].grad = g;
                }
                Op::Dot(a, b) => {
                    let g = self.nodes[idx].grad[0];
                    if self.requires_grad(a) {
                        let bv = self.nodes[b.0].value.values.clone();
                        for (dst, y) in self.nodes[a.0].grad.iter_mut().zip(bv) {
                            *dst += g * y;
                        }
                    }
                    if self.requires_grad(b) {
                        let av = self.nodes[a.0].value.values.clone();
                        for (dst, x) in self.nodes[b.0].grad.iter_mut().zip(av) {
                            *dst += g * x;
                        }
                    }
                }
                Op::Concat(parts) => {
                    let g = std::mem::take(&mut self.nodes[idx].grad);
                    let mut offset = 0;
                    for p in parts {
                        let len = self.nodes[p.0].value.numel();
                        for (dst, &gi) in self.nodes[p.0]
                            .grad
                            .iter_mut()
                            .zip(&g[offset..offset + len])
                        {
                            *dst += gi;
                        }
                        offset += len;
                    }
                    self.nodes[idx].grad = g;
                }
                Op::L2Normalize(a) => {
                    // y = x / |x|, dx = (g - y (y . g)) / |x|
                    let g = std::mem::take(&mut self.nodes[idx].grad);
                    let y = self.nodes[idx].value.values.clone();
                    let norm = self.nodes[a.0].value.norm();
                    let ydotg: f64 = y.iter().zip(&g).map(|(yi, gi)| yi * gi).sum();
                    for ((dst, &gi), yi) in self.nodes[a.0].grad.iter_mut().zip(&g).zip(y) {
                        *dst += (gi - yi * ydotg) / norm;
                    }
                    self.nodes[idx].grad = g;
                }
                Op::Sum(a) => {
                    let g = self.nodes[idx].grad[0];
                    for dst in self.nodes[a.0].grad.iter_mut() {
                        *dst += g;
                    }
                }
            }
        }
        Ok(())
    }

    fn requires_grad(&self, id: NodeId) -> bool {
        !matches!(self.nodes[id.0].op, Op::Leaf { requires_grad: false })
    }
}

/// Central-difference gradient estimate of a scalar function.
pub fn finite_diff_grad<F>(f: F, x: &Tensor, eps: f64) -> Result<Tensor>
where
    F: Fn(&Tensor) -> Result<f64>,
{
    let mut grad = vec![0.0; x.numel()];
    let mut probe = x.clone();
    for i in 0..x.numel() {
        let orig = probe.values[i];
        probe.values[i] = orig + eps;
        let fp = f(&probe)?;
        probe.values[i] = orig - eps;
        let fm = f(&probe)?;
        probe.values[i] = orig;
        if !fp.is_finite() || !fm.is_finite() {
            return Err(FlagsError::Oracle(format!(
                "non-finite evaluation at coordinate {i}: f+={fp}, f-={fm}"
            )));
        }
        grad[i] = (fp - fm) / (2.0 * eps);
    }
    Tensor::new(x.shape.clone(), grad)
}

/// Max relative error between two gradient vectors, with an absolute floor
/// so near-zero entries compare absolutely.
pub fn max_relative_error(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let denom = x.abs().max(y.abs()).max(1.0);
            (x - y).abs() / denom
        })
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_vector(rng: &mut ChaCha8Rng, n: usize) -> Tensor {
        Tensor::vector((0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
    }

    #[test]
    fn matmul_identity() {
        let mut g = Graph::new();
        let i = g.leaf(Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap());
        let m = g.leaf(Tensor::matrix(2, 2, vec![5.0, 6.0, 7.0, 8.0]).unwrap());
        let out = g.matmul(i, m).unwrap();
        assert_eq!(g.value(out).values, vec![5.0, 6.0, 7.0, 8.0]);
    }

    #[test]
    fn matmul_hand_arithmetic() {
        let mut g = Graph::new();
        let a = g.leaf(Tensor::matrix(1, 2, vec![1.0, 2.0]).unwrap());
        let b = g.leaf(Tensor::matrix(2, 1, vec![3.0, 4.0]).unwrap());
        let out = g.matmul(a, b).unwrap();
        assert_eq!(g.value(out).values, vec![11.0]);
    }

    #[test]
    fn matmul_shape_mismatch() {
        let mut g = Graph::new();
        let a = g.leaf(Tensor::matrix(2, 3, vec![0.0; 6]).unwrap());
        let b = g.leaf(Tensor::matrix(2, 2, vec![0.0; 4]).unwrap());
        let err = g.matmul(a, b).unwrap_err();
        assert!(matches!(err, FlagsError::Dimension { .. }));
        assert!(err.to_string().contains("[2, 3]"));
        assert!(err.to_string().contains("[2, 2]"));
    }

    #[test]
    fn matmul_grad_of_sum_is_ones_times_b_transpose() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let av: Vec<f64> = (0..12).map(|_| rng.random_range(-1.0..1.0)).collect();
        let bv: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut g = Graph::new();
        let a = g.leaf(Tensor::matrix(3, 4, av.clone()).unwrap());
        let b = g.leaf(Tensor::matrix(4, 2, bv.clone()).unwrap());
        let c = g.matmul(a, b).unwrap();
        let s = g.sum(c);
        g.backward(s).unwrap();

        // analytic: dA = ones(3x2) . B^T
        let mut expected = vec![0.0; 12];
        for i in 0..3 {
            for p in 0..4 {
                expected[i * 4 + p] = bv[p * 2] + bv[p * 2 + 1];
            }
        }
        let got = g.grad(a);
        assert!(max_relative_error(&got.values, &expected) < 1e-12);

        // and against finite differences
        let fd = finite_diff_grad(
            |x| {
                let mut g2 = Graph::new();
                let a2 = g2.leaf(x.clone());
                let b2 = g2.leaf(Tensor::matrix(4, 2, bv.clone()).unwrap());
                let c2 = g2.matmul(a2, b2)?;
                let s2 = g2.sum(c2);
                Ok(g2.value(s2).item())
            },
            &Tensor::matrix(3, 4, av).unwrap(),
            1e-6,
        )
        .unwrap();
        assert!(max_relative_error(&got.values, &fd.values) < 1e-6);
    }

    #[test]
    fn l2_normalize_345_triangle() {
        let mut g = Graph::new();
        let v = g.leaf(Tensor::vector(vec![3.0, 4.0]));
        let out = g.l2_normalize(v, NORM_EPSILON).unwrap();
        assert!((g.value(out).values[0] - 0.6).abs() < 1e-12);
        assert!((g.value(out).values[1] - 0.8).abs() < 1e-12);
    }

    #[test]
    fn l2_normalize_unit_vector_fixed_point() {
        let mut g = Graph::new();
        let v = g.leaf(Tensor::vector(vec![0.0, 1.0, 0.0]));
        let out = g.l2_normalize(v, NORM_EPSILON).unwrap();
        assert_eq!(g.value(out).values, vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn l2_normalize_degenerate() {
        let mut g = Graph::new();
        let v = g.leaf(Tensor::vector(vec![0.0, 0.0]));
        assert!(matches!(
            g.l2_normalize(v, NORM_EPSILON),
            Err(FlagsError::Degenerate(_))
        ));
    }

    #[test]
    fn l2_normalize_jacobian_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random_vector(&mut rng, 16);
        // check each output coordinate's gradient via a dot with a basis vector
        for j in 0..16 {
            let mut g = Graph::new();
            let v = g.leaf(x.clone());
            let y = g.l2_normalize(v, NORM_EPSILON).unwrap();
            let mut e = vec![0.0; 16];
            e[j] = 1.0;
            let ej = g.constant(Tensor::vector(e.clone()));
            let yj = g.dot(y, ej).unwrap();
            g.backward(yj).unwrap();
            let analytic = g.grad(v);

            let fd = finite_diff_grad(
                |t| {
                    let vals = l2_normalize_values(&t.values, NORM_EPSILON)?;
                    Ok(vals[j])
                },
                &x,
                1e-6,
            )
            .unwrap();
            assert!(max_relative_error(&analytic.values, &fd.values) < 1e-5);
        }
    }

    #[test]
    fn backward_square() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::vector(vec![3.0]));
        let sq = g.dot(x, x).unwrap();
        g.backward(sq).unwrap();
        assert_eq!(g.grad(x).values, vec![6.0]);
    }

    #[test]
    fn backward_requires_scalar() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::vector(vec![1.0, 2.0]));
        assert!(matches!(g.backward(x), Err(FlagsError::Contract(_))));
    }

    #[test]
    fn backward_disconnected_leaf_gets_zero_grad() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::vector(vec![1.0, 2.0]));
        let unused = g.leaf(Tensor::vector(vec![5.0]));
        let s = g.sum(x);
        g.backward(s).unwrap();
        assert_eq!(g.grad(unused).values, vec![0.0]);
    }

    #[test]
    fn backward_sum_of_normalized_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = random_vector(&mut rng, 8);
        let mut g = Graph::new();
        let v = g.leaf(x.clone());
        let y = g.l2_normalize(v, NORM_EPSILON).unwrap();
        let s = g.sum(y);
        g.backward(s).unwrap();
        let analytic = g.grad(v);
        let fd = finite_diff_grad(
            |t| Ok(l2_normalize_values(&t.values, NORM_EPSILON)?.iter().sum()),
            &x,
            1e-6,
        )
        .unwrap();
        assert!(max_relative_error(&analytic.values, &fd.values) < 1e-5);
    }

    #[test]
    fn shared_subexpression_accumulates_like_unrolled_graph() {
        // f(x) = sum(y) + sum(y) with y = 2x, vs g(x) = sum(2x) + sum(2x)
        let x = Tensor::vector(vec![1.0, -2.0, 0.5]);
        let mut g1 = Graph::new();
        let v1 = g1.leaf(x.clone());
        let y = g1.scale(v1, 2.0);
        let s1 = g1.sum(y);
        let total1 = g1.add(s1, s1).unwrap();
        g1.backward(total1).unwrap();

        let mut g2 = Graph::new();
        let v2 = g2.leaf(x.clone());
        let ya = g2.scale(v2, 2.0);
        let yb = g2.scale(v2, 2.0);
        let sa = g2.sum(ya);
        let sb = g2.sum(yb);
        let total2 = g2.add(sa, sb).unwrap();
        g2.backward(total2).unwrap();

        assert_eq!(g1.grad(v1).values, g2.grad(v2).values);
    }

    #[test]
    fn exp_overflow_is_an_error() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::vector(vec![701.0]));
        assert!(matches!(g.exp(x), Err(FlagsError::Overflow(_))));
    }

    #[test]
    fn finite_diff_on_sum_is_ones() {
        let x = Tensor::vector(vec![0.3, -1.2, 4.5]);
        let fd = finite_diff_grad(|t| Ok(t.values.iter().sum()), &x, 1e-6).unwrap();
        for v in fd.values {
            assert!((v - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn finite_diff_on_dot_self() {
        let x = Tensor::vector(vec![1.0, 2.0]);
        let fd = finite_diff_grad(
            |t| Ok(t.values.iter().map(|v| v * v).sum()),
            &x,
            1e-6,
        )
        .unwrap();
        assert!((fd.values[0] - 2.0).abs() < 1e-8);
        assert!((fd.values[1] - 4.0).abs() < 1e-8);
    }

    #[test]
    fn finite_diff_nonfinite_is_oracle_error() {
        let x = Tensor::vector(vec![1.0]);
        let res = finite_diff_grad(|_| Ok(f64::NAN), &x, 1e-6);
        assert!(matches!(res, Err(FlagsError::Oracle(_))));
    }

    #[test]
    fn composed_chain_matches_finite_differences() {
        // matmul + normalize + log of softmax-ish chain
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let wv: Vec<f64> = (0..12).map(|_| rng.random_range(-1.0..1.0)).collect();
        let xv: Vec<f64> = (0..4).map(|_| rng.random_range(0.5..1.5)).collect();

        let run = |w: &Tensor, x: &Tensor| -> Result<f64> {
            let mut g = Graph::new();
            let wn = g.leaf(w.clone());
            let xn = g.leaf(x.clone());
            let h = g.matvec(wn, xn)?;
            let n = g.l2_normalize(h, NORM_EPSILON)?;
            let shifted = g.add_scalar(n, 2.0);
            let l = g.log(shifted)?;
            let s = g.sum(l);
            Ok(g.value(s).item())
        };

        let w = Tensor::matrix(3, 4, wv).unwrap();
        let x = Tensor::vector(xv);

        let mut g = Graph::new();
        let wn = g.leaf(w.clone());
        let xn = g.leaf(x.clone());
        let h = g.matvec(wn, xn).unwrap();
        let n = g.l2_normalize(h, NORM_EPSILON).unwrap();
        let shifted = g.add_scalar(n, 2.0);
        let l = g.log(shifted).unwrap();
        let s = g.sum(l);
        g.backward(s).unwrap();

        let fd_w = finite_diff_grad(|t| run(t, &x), &w, 1e-6).unwrap();
        let fd_x = finite_diff_grad(|t| run(&w, t), &x, 1e-6).unwrap();
        assert!(max_relative_error(&g.grad(wn).values, &fd_w.values) < 1e-5);
        assert!(max_relative_error(&g.grad(xn).values, &fd_x.values) < 1e-5);
    }

    #[test]
    fn every_op_grad_matches_finite_differences_at_random_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..100 {
            let x = random_vector(&mut rng, 6);
            let c = random_vector(&mut rng, 6);
            let cv = c.clone();
            let f = move |t: &Tensor| -> Result<f64> {
                let mut g = Graph::new();
                let v = g.leaf(t.clone());
                let k = g.constant(cv.clone());
                let a = g.add(v, k)?;
                let r = g.relu(a);
                let sc = g.scale(r, 0.7);
                let sh = g.add_scalar(sc, 0.2);
                let e = g.exp(sh)?;
                let cat = g.concat(&[e, v])?;
                let d = g.dot(cat, cat)?;
                let lg = g.log(d)?;
                let s = g.sum(lg);
                Ok(g.value(s).item())
            };

            let mut g = Graph::new();
            let v = g.leaf(x.clone());
            let k = g.constant(c.clone());
            let a = g.add(v, k).unwrap();
            let r = g.relu(a);
            let sc = g.scale(r, 0.7);
            let sh = g.add_scalar(sc, 0.2);
            let e = g.exp(sh).unwrap();
            let cat = g.concat(&[e, v]).unwrap();
            let d = g.dot(cat, cat).unwrap();
            let lg = g.log(d).unwrap();
            let s = g.sum(lg);
            g.backward(s).unwrap();

            let fd = finite_diff_grad(f, &x, 1e-6).unwrap();
            assert!(
                max_relative_error(&g.grad(v).values, &fd.values) < 1e-5,
                "gradient mismatch at random point"
            );
        }
    }
}
