use super::{NumError, Real, Result, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Target relation for [`Tape::cosine_embedding_loss`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CosineTarget {
    /// Pull the vectors together: `1 - cos(a, b)`.
    Similar,
    /// Push the vectors apart with margin 0: `max(0, cos(a, b))`.
    Dissimilar,
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Add {
        a: Var,
        b: Var,
        broadcast: bool,
    },
    Sub {
        a: Var,
        b: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    Scale {
        a: Var,
        factor: T,
    },
    MatMul {
        a: Var,
        b: Var,
    },
    MatMulNT {
        a: Var,
        b: Var,
    },
    Relu {
        a: Var,
    },
    GatherRows {
        a: Var,
        index: Vec<usize>,
    },
    ScatterAddRows {
        a: Var,
        index: Vec<usize>,
    },
    Sum {
        a: Var,
    },
    MeanRows {
        a: Var,
    },
    SoftmaxXent {
        logits: Var,
        targets: Vec<usize>,
        probs: Vec<T>,
    },
    Cosine {
        a: Var,
        b: Var,
        target: CosineTarget,
        cos: T,
        norm_a: T,
        norm_b: T,
    },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Linear record of a forward computation.
///
/// Ops are appended in execution order, so every input handle is smaller than
/// the handle of the op consuming it and the record is always topologically
/// sorted.
#[derive(Debug, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
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

    /// Drops all recorded ops but keeps the allocation.
    pub fn clear(&mut self) {
        self.nodes.clear();
    }

    /// Records a differentiable leaf.
    pub fn param(&mut self, value: Tensor<T>) -> Result<Var> {
        self.push(value, Op::Leaf, true, "param")
    }

    /// Records a leaf that never receives gradients.
    pub fn constant(&mut self, value: Tensor<T>) -> Result<Var> {
        self.push(value, Op::Leaf, false, "constant")
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn node(&self, v: Var) -> Result<&Node<T>> {
        self.nodes.get(v.0).ok_or(NumError::UnknownVar(v.0))
    }

    fn push(
        &mut self,
        value: Tensor<T>,
        op: Op<T>,
        requires_grad: bool,
        name: &'static str,
    ) -> Result<Var> {
        if !value.all_finite() {
            return Err(NumError::NonFinite(name));
        }
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn grad_of(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Element-wise sum. `b` may also be a single row broadcast over the rows of `a`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (&self.node(a)?.value, &self.node(b)?.value);
        let broadcast = if x.shape() == y.shape() {
            false
        } else if y.rows() == 1 && y.cols() == x.cols() && x.shape().len() == 2 {
            true
        } else {
            return Err(NumError::ShapeMismatch {
                op: "add",
                lhs: x.shape().to_vec(),
                rhs: y.shape().to_vec(),
            });
        };
        let cols = x.cols();
        let data: Vec<T> = if broadcast {
            let mut data = x.data().to_vec();
            for row in data.chunks_mut(cols) {
                for (o, &q) in row.iter_mut().zip(y.data()) {
                    *o += q;
                }
            }
            data
        } else {
            x.data()
                .iter()
                .zip(y.data())
                .map(|(&p, &q)| p + q)
                .collect()
        };
        let out = Tensor::new(x.shape().to_vec(), data)?;
        let rg = self.grad_of(&[a, b]);
        self.push(out, Op::Add { a, b, broadcast }, rg, "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (&self.node(a)?.value, &self.node(b)?.value);
        same_shape("sub", x, y)?;
        let data = x
            .data()
            .iter()
            .zip(y.data())
            .map(|(&p, &q)| p - q)
            .collect();
        let out = Tensor::new(x.shape().to_vec(), data)?;
        let rg = self.grad_of(&[a, b]);
        self.push(out, Op::Sub { a, b }, rg, "sub")
    }

    /// Element-wise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (&self.node(a)?.value, &self.node(b)?.value);
        same_shape("mul", x, y)?;
        let data = x
            .data()
            .iter()
            .zip(y.data())
            .map(|(&p, &q)| p * q)
            .collect();
        let out = Tensor::new(x.shape().to_vec(), data)?;
        let rg = self.grad_of(&[a, b]);
        self.push(out, Op::Mul { a, b }, rg, "mul")
    }

    pub fn scale(&mut self, a: Var, factor: T) -> Result<Var> {
        let x = &self.node(a)?.value;
        let data = x.data().iter().map(|&v| v * factor).collect();
        let out = Tensor::new(x.shape().to_vec(), data)?;
        let rg = self.grad_of(&[a]);
        self.push(out, Op::Scale { a, factor }, rg, "scale")
    }

    /// `[m, k] x [k, n] -> [m, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (&self.node(a)?.value, &self.node(b)?.value);
        let (m, k, n) = (x.rows(), x.cols(), y.cols());
        if y.rows() != k {
            return Err(NumError::ShapeMismatch {
                op: "matmul",
                lhs: x.shape().to_vec(),
                rhs: y.shape().to_vec(),
            });
        }
        let mut out = vec![T::zero(); m * n];
        gemm_nn(x.data(), y.data(), &mut out, m, k, n);
        let out = Tensor::new(vec![m, n], out)?;
        let rg = self.grad_of(&[a, b]);
        self.push(out, Op::MatMul { a, b }, rg, "matmul")
    }

    /// `[m, k] x [n, k]^T -> [m, n]`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (&self.node(a)?.value, &self.node(b)?.value);
        let (m, k, n) = (x.rows(), x.cols(), y.rows());
        if y.cols() != k {
            return Err(NumError::ShapeMismatch {
                op: "matmul_nt",
                lhs: x.shape().to_vec(),
                rhs: y.shape().to_vec(),
            });
        }
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            let xr = &x.data()[i * k..(i + 1) * k];
            for j in 0..n {
                let yr = &y.data()[j * k..(j + 1) * k];
                out[i * n + j] = dot(xr, yr);
            }
        }
        let out = Tensor::new(vec![m, n], out)?;
        let rg = self.grad_of(&[a, b]);
        self.push(out, Op::MatMulNT { a, b }, rg, "matmul_nt")
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let x = &self.node(a)?.value;
        let data = x
            .data()
            .iter()
            .map(|&v| if v > T::zero() { v } else { T::zero() })
            .collect();
        let out = Tensor::new(x.shape().to_vec(), data)?;
        let rg = self.grad_of(&[a]);
        self.push(out, Op::Relu { a }, rg, "relu")
    }

    /// Selects rows of a matrix: `out[i] = a[index[i]]`.
    pub fn gather_rows(&mut self, a: Var, index: &[usize]) -> Result<Var> {
        let x = &self.node(a)?.value;
        let (rows, cols) = (x.rows(), x.cols());
        let mut data = Vec::with_capacity(index.len() * cols);
        for &r in index {
            if r >= rows {
                return Err(NumError::IndexOutOfRange {
                    op: "gather_rows",
                    index: r,
                    size: rows,
                });
            }
            data.extend_from_slice(x.row(r));
        }
        let out = Tensor::new(vec![index.len(), cols], data)?;
        let rg = self.grad_of(&[a]);
        let op = Op::GatherRows {
            a,
            index: index.to_vec(),
        };
        self.push(out, op, rg, "gather_rows")
    }

    /// Sums rows into `out_rows` buckets: `out[index[i]] += a[i]`.
    pub fn scatter_add_rows(&mut self, a: Var, index: &[usize], out_rows: usize) -> Result<Var> {
        let x = &self.node(a)?.value;
        let cols = x.cols();
        if index.len() != x.rows() {
            return Err(NumError::ShapeMismatch {
                op: "scatter_add_rows",
                lhs: x.shape().to_vec(),
                rhs: vec![index.len()],
            });
        }
        let mut data = vec![T::zero(); out_rows * cols];
        for (i, &r) in index.iter().enumerate() {
            if r >= out_rows {
                return Err(NumError::IndexOutOfRange {
                    op: "scatter_add_rows",
                    index: r,
                    size: out_rows,
                });
            }
            for (o, &v) in data[r * cols..(r + 1) * cols].iter_mut().zip(x.row(i)) {
                *o += v;
            }
        }
        let out = Tensor::new(vec![out_rows, cols], data)?;
        let rg = self.grad_of(&[a]);
        let op = Op::ScatterAddRows {
            a,
            index: index.to_vec(),
        };
        self.push(out, op, rg, "scatter_add_rows")
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let total = self.node(a)?.value.data().iter().copied().sum();
        let rg = self.grad_of(&[a]);
        self.push(Tensor::scalar(total), Op::Sum { a }, rg, "sum")
    }

    /// Column means over rows: `[r, c] -> [1, c]`.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        let x = &self.node(a)?.value;
        let (rows, cols) = (x.rows(), x.cols());
        if rows == 0 {
            return Err(NumError::InvalidArgument("mean over zero rows".into()));
        }
        let mut data = vec![T::zero(); cols];
        for r in 0..rows {
            for (o, &v) in data.iter_mut().zip(x.row(r)) {
                *o += v;
            }
        }
        let inv = T::one() / T::lit(rows as f64);
        data.iter_mut().for_each(|v| *v *= inv);
        let out = Tensor::new(vec![1, cols], data)?;
        let rg = self.grad_of(&[a]);
        self.push(out, Op::MeanRows { a }, rg, "mean_rows")
    }

    /// Mean over rows of `-log softmax(logits[r])[targets[r]]`.
    ///
    /// A vector of logits is treated as a single row.
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let x = &self.node(logits)?.value;
        let (rows, cols) = (x.rows(), x.cols());
        if cols < 2 {
            return Err(NumError::InvalidArgument(format!(
                "softmax over {cols} classes"
            )));
        }
        if rows == 0 || targets.len() != rows {
            return Err(NumError::ShapeMismatch {
                op: "softmax_cross_entropy",
                lhs: x.shape().to_vec(),
                rhs: vec![targets.len()],
            });
        }
        let mut probs = vec![T::zero(); rows * cols];
        let mut total = T::zero();
        for (r, &target) in targets.iter().enumerate() {
            if target >= cols {
                return Err(NumError::IndexOutOfRange {
                    op: "softmax_cross_entropy",
                    index: target,
                    size: cols,
                });
            }
            let row = x.row(r);
            let lse = log_sum_exp(row);
            total += lse - row[target];
            for (p, &z) in probs[r * cols..(r + 1) * cols].iter_mut().zip(row) {
                *p = (z - lse).exp();
            }
        }
        let loss = total / T::lit(rows as f64);
        let rg = self.grad_of(&[logits]);
        let op = Op::SoftmaxXent {
            logits,
            targets: targets.to_vec(),
            probs,
        };
        self.push(Tensor::scalar(loss), op, rg, "softmax_cross_entropy")
    }

    /// Cosine embedding loss with margin 0 over the flattened inputs.
    pub fn cosine_embedding_loss(&mut self, a: Var, b: Var, target: CosineTarget) -> Result<Var> {
        let (x, y) = (&self.node(a)?.value, &self.node(b)?.value);
        if x.len() != y.len() {
            return Err(NumError::ShapeMismatch {
                op: "cosine_embedding_loss",
                lhs: x.shape().to_vec(),
                rhs: y.shape().to_vec(),
            });
        }
        let norm_a = dot(x.data(), x.data()).sqrt();
        let norm_b = dot(y.data(), y.data()).sqrt();
        if norm_a == T::zero() || norm_b == T::zero() {
            return Err(NumError::ZeroVector);
        }
        let cos = dot(x.data(), y.data()) / (norm_a * norm_b);
        let loss = match target {
            CosineTarget::Similar => T::one() - cos,
            CosineTarget::Dissimilar => cos.max(T::zero()),
        };
        let rg = self.grad_of(&[a, b]);
        let op = Op::Cosine {
            a,
            b,
            target,
            cos,
            norm_a,
            norm_b,
        };
        self.push(Tensor::scalar(loss), op, rg, "cosine_embedding_loss")
    }

    /// Reverse pass from a scalar `loss` to the given leaves.
    ///
    /// Leaves that do not influence the loss get zero gradients. If none of
    /// them does, the call fails with [`NumError::Disconnected`].
    pub fn gradient(&self, loss: Var, params: &[Var]) -> Result<Vec<Tensor<T>>> {
        let root = self.node(loss)?;
        if !root.value.is_scalar() {
            return Err(NumError::NonScalarLoss(root.value.shape().to_vec()));
        }
        for &p in params {
            let node = self.node(p)?;
            if !matches!(node.op, Op::Leaf) || !node.requires_grad {
                return Err(NumError::InvalidArgument(format!(
                    "variable {} is not a differentiable leaf",
                    p.0
                )));
            }
        }
        let mut grads: Vec<Option<Vec<T>>> = Vec::with_capacity(loss.0 + 1);
        grads.resize_with(loss.0 + 1, || None);
        if root.requires_grad {
            grads[loss.0] = Some(vec![T::one()]);
        }

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backward_op(node, &g, &mut grads);
        }

        let mut connected = false;
        let out = params
            .iter()
            .map(|&p| {
                let shape = self.nodes[p.0].value.shape().to_vec();
                match grads.get(p.0).and_then(|g| g.clone()) {
                    Some(g) => {
                        connected = true;
                        Tensor::new(shape, g)
                    }
                    None => Ok(Tensor::zeros(shape)),
                }
            })
            .collect::<Result<Vec<_>>>()?;
        if !connected && !params.is_empty() {
            return Err(NumError::Disconnected);
        }
        Ok(out)
    }

    fn backward_op(&self, node: &Node<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        match &node.op {
            Op::Leaf => {}
            Op::Add { a, b, broadcast } => {
                self.accumulate(grads, *a, |ga| axpy(ga, g, T::one()));
                if *broadcast {
                    let cols = self.value(*b).cols();
                    self.accumulate(grads, *b, |gb| {
                        for chunk in g.chunks(cols) {
                            axpy(gb, chunk, T::one());
                        }
                    });
                } else {
                    self.accumulate(grads, *b, |gb| axpy(gb, g, T::one()));
                }
            }
            Op::Sub { a, b } => {
                self.accumulate(grads, *a, |ga| axpy(ga, g, T::one()));
                self.accumulate(grads, *b, |gb| axpy(gb, g, -T::one()));
            }
            Op::Mul { a, b } => {
                let (x, y) = (self.value(*a).data(), self.value(*b).data());
                self.accumulate(grads, *a, |ga| {
                    for ((o, &gi), &yi) in ga.iter_mut().zip(g).zip(y) {
                        *o += gi * yi;
                    }
                });
                self.accumulate(grads, *b, |gb| {
                    for ((o, &gi), &xi) in gb.iter_mut().zip(g).zip(x) {
                        *o += gi * xi;
                    }
                });
            }
            Op::Scale { a, factor } => {
                self.accumulate(grads, *a, |ga| axpy(ga, g, *factor));
            }
            Op::MatMul { a, b } => {
                let (x, y) = (self.value(*a), self.value(*b));
                let (m, k, n) = (x.rows(), x.cols(), y.cols());
                // dA = G B^T, dB = A^T G
                self.accumulate(grads, *a, |ga| gemm_nt(g, y.data(), ga, m, n, k));
                self.accumulate(grads, *b, |gb| gemm_tn(x.data(), g, gb, m, k, n));
            }
            Op::MatMulNT { a, b } => {
                let (x, y) = (self.value(*a), self.value(*b));
                let (m, k, n) = (x.rows(), x.cols(), y.rows());
                // C = A B^T: dA = G B, dB = G^T A
                self.accumulate(grads, *a, |ga| gemm_nn(g, y.data(), ga, m, n, k));
                self.accumulate(grads, *b, |gb| gemm_tn(g, x.data(), gb, m, n, k));
            }
            Op::Relu { a } => {
                let out = node.value.data();
                self.accumulate(grads, *a, |ga| {
                    for ((o, &gi), &yi) in ga.iter_mut().zip(g).zip(out) {
                        if yi > T::zero() {
                            *o += gi;
                        }
                    }
                });
            }
            Op::GatherRows { a, index } => {
                let cols = node.value.cols();
                self.accumulate(grads, *a, |ga| {
                    for (i, &r) in index.iter().enumerate() {
                        axpy(
                            &mut ga[r * cols..(r + 1) * cols],
                            &g[i * cols..(i + 1) * cols],
                            T::one(),
                        );
                    }
                });
            }
            Op::ScatterAddRows { a, index } => {
                let cols = node.value.cols();
                self.accumulate(grads, *a, |ga| {
                    for (i, &r) in index.iter().enumerate() {
                        axpy(
                            &mut ga[i * cols..(i + 1) * cols],
                            &g[r * cols..(r + 1) * cols],
                            T::one(),
                        );
                    }
                });
            }
            Op::Sum { a } => {
                let g0 = g[0];
                self.accumulate(grads, *a, |ga| ga.iter_mut().for_each(|o| *o += g0));
            }
            Op::MeanRows { a } => {
                let x = self.value(*a);
                let inv = T::one() / T::lit(x.rows() as f64);
                self.accumulate(grads, *a, |ga| {
                    for chunk in ga.chunks_mut(g.len()) {
                        axpy(chunk, g, inv);
                    }
                });
            }
            Op::SoftmaxXent {
                logits,
                targets,
                probs,
            } => {
                let rows = targets.len();
                let cols = probs.len() / rows;
                let w = g[0] / T::lit(rows as f64);
                self.accumulate(grads, *logits, |gl| {
                    for ((row, prow), &t) in
                        gl.chunks_mut(cols).zip(probs.chunks(cols)).zip(targets)
                    {
                        axpy(row, prow, w);
                        row[t] -= w;
                    }
                });
            }
            Op::Cosine {
                a,
                b,
                target,
                cos,
                norm_a,
                norm_b,
            } => {
                let w = match target {
                    CosineTarget::Similar => -g[0],
                    CosineTarget::Dissimilar if *cos > T::zero() => g[0],
                    CosineTarget::Dissimilar => return,
                };
                let (x, y) = (self.value(*a).data(), self.value(*b).data());
                let inv_ab = T::one() / (*norm_a * *norm_b);
                let ca = *cos / (*norm_a * *norm_a);
                let cb = *cos / (*norm_b * *norm_b);
                self.accumulate(grads, *a, |ga| {
                    for ((o, &xi), &yi) in ga.iter_mut().zip(x).zip(y) {
                        *o += w * (yi * inv_ab - ca * xi);
                    }
                });
                self.accumulate(grads, *b, |gb| {
                    for ((o, &xi), &yi) in gb.iter_mut().zip(x).zip(y) {
                        *o += w * (xi * inv_ab - cb * yi);
                    }
                });
            }
        }
    }

    fn accumulate(&self, grads: &mut [Option<Vec<T>>], v: Var, f: impl FnOnce(&mut [T])) {
        let node = &self.nodes[v.0];
        if !node.requires_grad {
            return;
        }
        let slot = grads[v.0].get_or_insert_with(|| vec![T::zero(); node.value.len()]);
        f(slot);
    }
}

fn same_shape<T: Real>(op: &'static str, x: &Tensor<T>, y: &Tensor<T>) -> Result<()> {
    if x.shape() != y.shape() {
        return Err(NumError::ShapeMismatch {
            op,
            lhs: x.shape().to_vec(),
            rhs: y.shape().to_vec(),
        });
    }
    Ok(())
}

#[inline]
fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    // Eight independent partial sums let the compiler vectorize the loop.
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [T::zero(); 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for j in 0..8 {
            acc[j] += x[j] * y[j];
        }
    }
    let mut tail = T::zero();
    for (&p, &q) in ra.iter().zip(rb) {
        tail += p * q;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

#[inline]
fn axpy<T: Real>(y: &mut [T], x: &[T], alpha: T) {
    for (o, &v) in y.iter_mut().zip(x) {
        *o += alpha * v;
    }
}

fn log_sum_exp<T: Real>(row: &[T]) -> T {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let s: T = row.iter().map(|&z| (z - max).exp()).sum();
    max + s.ln()
}

/// `c += a[m,k] * b[k,n]`
fn gemm_nn<T: Real>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av != T::zero() {
                axpy(crow, &b[p * n..(p + 1) * n], av);
            }
        }
    }
}

/// `c += a[m,n] * b[k,n]^T`, giving `[m,k]`.
fn gemm_nt<T: Real>(a: &[T], b: &[T], c: &mut [T], m: usize, n: usize, k: usize) {
    for i in 0..m {
        let arow = &a[i * n..(i + 1) * n];
        for p in 0..k {
            c[i * k + p] += dot(arow, &b[p * n..(p + 1) * n]);
        }
    }
}

/// `c += a[m,k]^T * b[m,n]`, giving `[k,n]`.
fn gemm_tn<T: Real>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let brow = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av != T::zero() {
                axpy(&mut c[p * n..(p + 1) * n], brow, av);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t64(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn square_has_derivative_six_at_three() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(Tensor::scalar(3.0)).unwrap();
        let y = tape.mul(x, x).unwrap();
        let g = tape.gradient(y, &[x]).unwrap();
        assert_eq!(g[0].item(), 6.0);
    }

    #[test]
    fn product_gradients_swap_operands() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(Tensor::scalar(2.0)).unwrap();
        let y = tape.param(Tensor::scalar(3.0)).unwrap();
        let z = tape.mul(x, y).unwrap();
        let g = tape.gradient(z, &[x, y]).unwrap();
        assert_eq!((g[0].item(), g[1].item()), (3.0, 2.0));
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(t64(&[2], &[1.0, 2.0])).unwrap();
        let y = tape.relu(x).unwrap();
        assert!(matches!(
            tape.gradient(y, &[x]),
            Err(NumError::NonScalarLoss(_))
        ));
    }

    #[test]
    fn disconnected_loss_is_an_error_and_stray_params_get_zeros() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(Tensor::scalar(1.0)).unwrap();
        let unused = tape.param(t64(&[2], &[1.0, 1.0])).unwrap();
        let c = tape.constant(Tensor::scalar(4.0)).unwrap();
        let y = tape.mul(c, c).unwrap();
        assert_eq!(tape.gradient(y, &[x]), Err(NumError::Disconnected));

        let z = tape.mul(x, c).unwrap();
        let g = tape.gradient(z, &[x, unused]).unwrap();
        assert_eq!(g[0].item(), 4.0);
        assert_eq!(g[1].data(), &[0.0, 0.0]);
    }

    #[test]
    fn uniform_logits_give_log_class_count() {
        let mut tape = Tape::<f64>::new();
        let z = tape.param(t64(&[4], &[0.7; 4])).unwrap();
        let l = tape.softmax_cross_entropy(z, &[2]).unwrap();
        assert!((tape.value(l).item() - 4f64.ln()).abs() < 1e-12);
        assert!((tape.value(l).item() - 1.386294).abs() < 1e-6);
    }

    #[test]
    fn saturated_target_logit_has_vanishing_loss() {
        let mut tape = Tape::<f64>::new();
        let z = tape.param(t64(&[3], &[0.0, 20.0, 0.0])).unwrap();
        let l = tape.softmax_cross_entropy(z, &[1]).unwrap();
        assert!(tape.value(l).item() < 1e-8);
    }

    #[test]
    fn cross_entropy_gradient_is_softmax_minus_one_hot() {
        let mut tape = Tape::<f64>::new();
        let z = tape.param(t64(&[3], &[1.0, 2.0, 0.5])).unwrap();
        let l = tape.softmax_cross_entropy(z, &[0]).unwrap();
        let g = tape.gradient(l, &[z]).unwrap();
        let e: Vec<f64> = [1.0f64, 2.0, 0.5].iter().map(|v| v.exp()).collect();
        let s: f64 = e.iter().sum();
        for (i, gi) in g[0].data().iter().enumerate() {
            let hot = if i == 0 { 1.0 } else { 0.0 };
            assert!((gi - (e[i] / s - hot)).abs() < 1e-12);
        }
    }

    #[test]
    fn out_of_range_target_is_rejected() {
        let mut tape = Tape::<f64>::new();
        let z = tape.param(t64(&[2], &[0.0, 0.0])).unwrap();
        assert!(matches!(
            tape.softmax_cross_entropy(z, &[2]),
            Err(NumError::IndexOutOfRange { .. })
        ));
    }

    #[test]
    fn cosine_loss_reference_points() {
        let mut tape = Tape::<f64>::new();
        let a = tape.param(t64(&[3], &[1.0, 2.0, 3.0])).unwrap();
        let neg = tape.param(t64(&[3], &[-1.0, -2.0, -3.0])).unwrap();
        let same = tape
            .cosine_embedding_loss(a, a, CosineTarget::Similar)
            .unwrap();
        assert!(tape.value(same).item().abs() < 1e-12);
        let anti = tape
            .cosine_embedding_loss(a, neg, CosineTarget::Dissimilar)
            .unwrap();
        assert_eq!(tape.value(anti).item(), 0.0);

        let x = tape.param(t64(&[2], &[1.0, 0.0])).unwrap();
        let y = tape.param(t64(&[2], &[0.0, 5.0])).unwrap();
        let orth = tape
            .cosine_embedding_loss(x, y, CosineTarget::Similar)
            .unwrap();
        assert!((tape.value(orth).item() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cosine_of_zero_vector_is_undefined() {
        let mut tape = Tape::<f64>::new();
        let a = tape.param(t64(&[2], &[0.0, 0.0])).unwrap();
        let b = tape.param(t64(&[2], &[1.0, 0.0])).unwrap();
        assert_eq!(
            tape.cosine_embedding_loss(a, b, CosineTarget::Similar),
            Err(NumError::ZeroVector)
        );
    }

    #[test]
    fn non_finite_forward_value_is_an_error() {
        let mut tape = Tape::<f64>::new();
        assert_eq!(
            tape.param(Tensor::scalar(f64::NAN)),
            Err(NumError::NonFinite("param"))
        );
        let big = tape.param(Tensor::scalar(1e300)).unwrap();
        assert_eq!(tape.mul(big, big), Err(NumError::NonFinite("mul")));
    }

    #[test]
    fn broadcast_add_sums_bias_gradient_over_rows() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(t64(&[2, 2], &[1.0, 2.0, 3.0, 4.0])).unwrap();
        let b = tape.param(t64(&[1, 2], &[10.0, 20.0])).unwrap();
        let y = tape.add(x, b).unwrap();
        assert_eq!(tape.value(y).data(), &[11.0, 22.0, 13.0, 24.0]);
        let s = tape.sum(y).unwrap();
        let g = tape.gradient(s, &[x, b]).unwrap();
        assert_eq!(g[1].data(), &[2.0, 2.0]);
    }

    #[test]
    fn scatter_add_then_gather_routes_rows() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(t64(&[3, 1], &[1.0, 2.0, 4.0])).unwrap();
        let s = tape.scatter_add_rows(x, &[1, 0, 1], 2).unwrap();
        assert_eq!(tape.value(s).data(), &[2.0, 5.0]);
        let g = tape.gather_rows(s, &[1, 1]).unwrap();
        assert_eq!(tape.value(g).data(), &[5.0, 5.0]);
        let l = tape.sum(g).unwrap();
        let grad = tape.gradient(l, &[x]).unwrap();
        assert_eq!(grad[0].data(), &[2.0, 0.0, 2.0]);
    }
}
