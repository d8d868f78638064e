//! Wengert tape: operations recorded in topological order during the forward
//! pass, replayed in reverse for gradient accumulation.
//!
//! A tape is single-owner and single-threaded; independent tapes may run on
//! different threads. One backward pass per tape; reuse is an error.

use super::{AdError, AdResult, Tensor};

/// Handle to a value on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Where a merged output row comes from.
#[derive(Debug, Clone, Copy)]
pub enum MergeSource {
    /// Mean of a row from each input.
    Both(usize, usize),
    /// Passthrough of a row from the first input.
    First(usize),
    /// Passthrough of a row from the second input.
    Second(usize),
}

#[derive(Clone)]
enum Op {
    Leaf,
    Matmul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddBias(Var, Var),
    Relu(Var),
    BroadcastRows(Var, usize),
    ConcatCols(Var, Var),
    GatherRows(Var, Vec<usize>),
    L2NormalizeRows {
        input: Var,
        eps: f64,
        norms: Vec<f64>,
    },
    SegmentMean {
        input: Var,
        segments: Vec<usize>,
        counts: Vec<usize>,
    },
    KnnMean {
        input: Var,
        neighbors: Vec<Vec<usize>>,
    },
    MergeRows(Var, Var, Vec<MergeSource>),
    Sum(Var),
    Mean(Var),
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        softmax: Vec<f64>,
    },
    Bce {
        logits: Var,
        labels: Vec<f64>,
    },
}

struct Node {
    value: Tensor,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
    op: Op,
}

/// Recording tape. Ops validate shapes on entry and finiteness on exit.
pub struct Tape {
    nodes: Vec<Node>,
    consumed: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            consumed: false,
        }
    }

    fn push(&mut self, value: Tensor, requires_grad: bool, op: Op) -> AdResult<Var> {
        value.check_finite()?;
        self.nodes.push(Node {
            value,
            requires_grad,
            grad: None,
            op,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn node(&self, v: Var) -> &Node {
        &self.nodes[v.0]
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.node(v).value
    }

    pub fn scalar_value(&self, v: Var) -> f64 {
        let t = self.value(v);
        debug_assert_eq!(t.numel(), 1);
        t.data()[0]
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.node(v).requires_grad
    }

    /// Gradient of the last backward pass w.r.t. `v`, if one was accumulated.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.node(v).grad.as_deref()
    }

    /// Record a constant (no gradient).
    pub fn constant(&mut self, value: Tensor) -> AdResult<Var> {
        self.push(value, false, Op::Leaf)
    }

    /// Record an input leaf, optionally participating in gradients.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> AdResult<Var> {
        self.push(value, requires_grad, Op::Leaf)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.node(*v).requires_grad)
    }

    // ---- ops ------------------------------------------------------------

    pub fn matmul(&mut self, a: Var, b: Var) -> AdResult<Var> {
        let (m, k) = self.value(a).dims2("matmul")?;
        let (k2, n) = self.value(b).dims2("matmul")?;
        if k != k2 {
            return Err(AdError::ShapeMismatch {
                op: "matmul",
                detail: format!("inner dimensions {} vs {}", k, k2),
            });
        }
        let out = matmul_nn(self.value(a).data(), self.value(b).data(), m, k, n);
        let rg = self.any_grad(&[a, b]);
        self.push(Tensor::new(vec![m, n], out)?, rg, Op::Matmul(a, b))
    }

    pub fn transpose(&mut self, a: Var) -> AdResult<Var> {
        let (m, n) = self.value(a).dims2("transpose")?;
        let x = self.value(a).data();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = x[i * n + j];
            }
        }
        let rg = self.any_grad(&[a]);
        self.push(Tensor::new(vec![n, m], out)?, rg, Op::Transpose(a))
    }

    pub fn add(&mut self, a: Var, b: Var) -> AdResult<Var> {
        self.elementwise(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> AdResult<Var> {
        self.elementwise(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> AdResult<Var> {
        self.elementwise(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    fn elementwise(
        &mut self,
        a: Var,
        b: Var,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> AdResult<Var> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(AdError::ShapeMismatch {
                op: name,
                detail: format!(
                    "{:?} vs {:?}",
                    self.value(a).shape(),
                    self.value(b).shape()
                ),
            });
        }
        let out: Vec<f64> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| f(*x, *y))
            .collect();
        let shape = self.value(a).shape().to_vec();
        let rg = self.any_grad(&[a, b]);
        self.push(Tensor::new(shape, out)?, rg, op)
    }

    /// Multiply every element by a compile-time-known scalar (houses 1/tau).
    pub fn scale(&mut self, a: Var, c: f64) -> AdResult<Var> {
        if !c.is_finite() {
            return Err(AdError::NonFinite(format!("scale factor {}", c)));
        }
        let out: Vec<f64> = self.value(a).data().iter().map(|x| x * c).collect();
        let shape = self.value(a).shape().to_vec();
        let rg = self.any_grad(&[a]);
        self.push(Tensor::new(shape, out)?, rg, Op::Scale(a, c))
    }

    /// Add a length-D bias vector to every row of an NxD matrix.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> AdResult<Var> {
        let (n, d) = self.value(a).dims2("add_bias")?;
        let bshape = self.value(bias).shape().to_vec();
        let ok = bshape == [d] || bshape == [1, d];
        if !ok {
            return Err(AdError::ShapeMismatch {
                op: "add_bias",
                detail: format!("bias shape {:?} for {} columns", bshape, d),
            });
        }
        let x = self.value(a).data();
        let b = self.value(bias).data();
        let mut out = vec![0.0; n * d];
        for i in 0..n {
            for j in 0..d {
                out[i * d + j] = x[i * d + j] + b[j];
            }
        }
        let rg = self.any_grad(&[a, bias]);
        self.push(Tensor::new(vec![n, d], out)?, rg, Op::AddBias(a, bias))
    }

    pub fn relu(&mut self, a: Var) -> AdResult<Var> {
        let out: Vec<f64> = self.value(a).data().iter().map(|x| x.max(0.0)).collect();
        let shape = self.value(a).shape().to_vec();
        let rg = self.any_grad(&[a]);
        self.push(Tensor::new(shape, out)?, rg, Op::Relu(a))
    }

    /// Repeat a single row n times.
    pub fn broadcast_rows(&mut self, a: Var, n: usize) -> AdResult<Var> {
        let d = match self.value(a).shape() {
            [d] => *d,
            [1, d] => *d,
            other => {
                return Err(AdError::ShapeMismatch {
                    op: "broadcast_rows",
                    detail: format!("expected a single row, got {:?}", other),
                })
            }
        };
        let row = self.value(a).data().to_vec();
        let mut out = Vec::with_capacity(n * d);
        for _ in 0..n {
            out.extend_from_slice(&row);
        }
        let rg = self.any_grad(&[a]);
        self.push(Tensor::new(vec![n, d], out)?, rg, Op::BroadcastRows(a, n))
    }

    /// Concatenate two matrices along columns.
    pub fn concat_cols(&mut self, a: Var, b: Var) -> AdResult<Var> {
        let (n, da) = self.value(a).dims2("concat_cols")?;
        let (n2, db) = self.value(b).dims2("concat_cols")?;
        if n != n2 {
            return Err(AdError::ShapeMismatch {
                op: "concat_cols",
                detail: format!("row counts {} vs {}", n, n2),
            });
        }
        let xa = self.value(a).data();
        let xb = self.value(b).data();
        let mut out = Vec::with_capacity(n * (da + db));
        for i in 0..n {
            out.extend_from_slice(&xa[i * da..(i + 1) * da]);
            out.extend_from_slice(&xb[i * db..(i + 1) * db]);
        }
        let rg = self.any_grad(&[a, b]);
        self.push(Tensor::new(vec![n, da + db], out)?, rg, Op::ConcatCols(a, b))
    }

    /// Select rows by index; duplicate indices are allowed.
    pub fn gather_rows(&mut self, a: Var, indices: &[usize]) -> AdResult<Var> {
        let (n, d) = self.value(a).dims2("gather_rows")?;
        for &i in indices {
            if i >= n {
                return Err(AdError::IndexOutOfRange {
                    op: "gather_rows",
                    detail: format!("row {} of {}", i, n),
                });
            }
        }
        let x = self.value(a).data();
        let mut out = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            out.extend_from_slice(&x[i * d..(i + 1) * d]);
        }
        let rg = self.any_grad(&[a]);
        self.push(
            Tensor::new(vec![indices.len(), d], out)?,
            rg,
            Op::GatherRows(a, indices.to_vec()),
        )
    }

    /// Scale each row to unit Euclidean norm. Rows with norm below `eps` are
    /// scaled by 1/eps instead and propagate zero gradient (subgradient
    /// choice for the guarded singularity).
    pub fn l2_normalize_rows(&mut self, a: Var, eps: f64) -> AdResult<Var> {
        let (n, d) = self.value(a).dims2("l2_normalize_rows")?;
        let x = self.value(a).data();
        let mut out = vec![0.0; n * d];
        let mut norms = vec![0.0; n];
        for i in 0..n {
            let row = &x[i * d..(i + 1) * d];
            let mut sq = 0.0;
            for v in row {
                sq += v * v;
            }
            let norm = sq.sqrt();
            norms[i] = norm;
            let denom = if norm >= eps { norm } else { eps };
            for j in 0..d {
                out[i * d + j] = row[j] / denom;
            }
        }
        let rg = self.any_grad(&[a]);
        self.push(
            Tensor::new(vec![n, d], out)?,
            rg,
            Op::L2NormalizeRows {
                input: a,
                eps,
                norms,
            },
        )
    }

    /// Mean of input rows per group id. Returns the pooled matrix and the
    /// list of empty groups (their output rows are zero).
    pub fn segment_mean(
        &mut self,
        a: Var,
        segments: &[usize],
        num_groups: usize,
    ) -> AdResult<(Var, Vec<usize>)> {
        let (n, d) = self.value(a).dims2("segment_mean")?;
        if segments.len() != n {
            return Err(AdError::ShapeMismatch {
                op: "segment_mean",
                detail: format!("{} segment ids for {} rows", segments.len(), n),
            });
        }
        for &s in segments {
            if s >= num_groups {
                return Err(AdError::IndexOutOfRange {
                    op: "segment_mean",
                    detail: format!("group id {} of {}", s, num_groups),
                });
            }
        }
        let x = self.value(a).data();
        let mut sums = vec![0.0; num_groups * d];
        let mut counts = vec![0usize; num_groups];
        for i in 0..n {
            let g = segments[i];
            counts[g] += 1;
            for j in 0..d {
                sums[g * d + j] += x[i * d + j];
            }
        }
        let mut empty = Vec::new();
        for g in 0..num_groups {
            if counts[g] == 0 {
                empty.push(g);
            } else {
                let inv = 1.0 / counts[g] as f64;
                for j in 0..d {
                    sums[g * d + j] *= inv;
                }
            }
        }
        let rg = self.any_grad(&[a]);
        let var = self.push(
            Tensor::new(vec![num_groups, d], sums)?,
            rg,
            Op::SegmentMean {
                input: a,
                segments: segments.to_vec(),
                counts,
            },
        )?;
        Ok((var, empty))
    }

    /// Mean over each row's neighborhood: the row itself plus its listed
    /// neighbors. Neighbor lists must not contain the row itself.
    pub fn knn_mean(&mut self, a: Var, neighbors: &[Vec<usize>]) -> AdResult<Var> {
        let (n, d) = self.value(a).dims2("knn_mean")?;
        if neighbors.len() != n {
            return Err(AdError::ShapeMismatch {
                op: "knn_mean",
                detail: format!("{} neighbor lists for {} rows", neighbors.len(), n),
            });
        }
        for (i, nbrs) in neighbors.iter().enumerate() {
            for &j in nbrs {
                if j >= n {
                    return Err(AdError::IndexOutOfRange {
                        op: "knn_mean",
                        detail: format!("neighbor {} of {}", j, n),
                    });
                }
                if j == i {
                    return Err(AdError::IndexOutOfRange {
                        op: "knn_mean",
                        detail: format!("row {} lists itself as a neighbor", i),
                    });
                }
            }
        }
        let x = self.value(a).data();
        let mut out = vec![0.0; n * d];
        for i in 0..n {
            let inv = 1.0 / (1 + neighbors[i].len()) as f64;
            for j in 0..d {
                let mut acc = x[i * d + j];
                for &nb in &neighbors[i] {
                    acc += x[nb * d + j];
                }
                out[i * d + j] = acc * inv;
            }
        }
        let rg = self.any_grad(&[a]);
        self.push(
            Tensor::new(vec![n, d], out)?,
            rg,
            Op::KnnMean {
                input: a,
                neighbors: neighbors.to_vec(),
            },
        )
    }

    /// Merge rows from two matrices: matched rows become the arithmetic mean,
    /// unmatched rows pass through.
    pub fn merge_rows(&mut self, a: Var, b: Var, plan: &[MergeSource]) -> AdResult<Var> {
        let (na, d) = self.value(a).dims2("merge_rows")?;
        let (nb, d2) = self.value(b).dims2("merge_rows")?;
        if d != d2 {
            return Err(AdError::ShapeMismatch {
                op: "merge_rows",
                detail: format!("feature widths {} vs {}", d, d2),
            });
        }
        let xa = self.value(a).data();
        let xb = self.value(b).data();
        let mut out = Vec::with_capacity(plan.len() * d);
        for src in plan {
            match *src {
                MergeSource::Both(i, j) => {
                    if i >= na || j >= nb {
                        return Err(AdError::IndexOutOfRange {
                            op: "merge_rows",
                            detail: format!("pair ({}, {})", i, j),
                        });
                    }
                    for k in 0..d {
                        out.push(0.5 * (xa[i * d + k] + xb[j * d + k]));
                    }
                }
                MergeSource::First(i) => {
                    if i >= na {
                        return Err(AdError::IndexOutOfRange {
                            op: "merge_rows",
                            detail: format!("first row {}", i),
                        });
                    }
                    out.extend_from_slice(&xa[i * d..(i + 1) * d]);
                }
                MergeSource::Second(j) => {
                    if j >= nb {
                        return Err(AdError::IndexOutOfRange {
                            op: "merge_rows",
                            detail: format!("second row {}", j),
                        });
                    }
                    out.extend_from_slice(&xb[j * d..(j + 1) * d]);
                }
            }
        }
        let rg = self.any_grad(&[a, b]);
        self.push(
            Tensor::new(vec![plan.len(), d], out)?,
            rg,
            Op::MergeRows(a, b, plan.to_vec()),
        )
    }

    pub fn sum(&mut self, a: Var) -> AdResult<Var> {
        let mut acc = 0.0;
        for v in self.value(a).data() {
            acc += v;
        }
        let rg = self.any_grad(&[a]);
        self.push(Tensor::scalar(acc)?, rg, Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> AdResult<Var> {
        let n = self.value(a).numel();
        let mut acc = 0.0;
        for v in self.value(a).data() {
            acc += v;
        }
        let rg = self.any_grad(&[a]);
        self.push(Tensor::scalar(acc / n as f64)?, rg, Op::Mean(a))
    }

    /// Mean over rows of -log softmax(logits)[target], with the log-sum-exp
    /// max shift.
    pub fn cross_entropy_from_logits(&mut self, logits: Var, targets: &[usize]) -> AdResult<Var> {
        let (n, c) = self.value(logits).dims2("cross_entropy")?;
        if targets.len() != n {
            return Err(AdError::ShapeMismatch {
                op: "cross_entropy",
                detail: format!("{} targets for {} rows", targets.len(), n),
            });
        }
        for &t in targets {
            if t >= c {
                return Err(AdError::IndexOutOfRange {
                    op: "cross_entropy",
                    detail: format!("target {} of {} classes", t, c),
                });
            }
        }
        let x = self.value(logits).data();
        let mut softmax = vec![0.0; n * c];
        let mut loss = 0.0;
        for i in 0..n {
            let row = &x[i * c..(i + 1) * c];
            let mut mx = f64::NEG_INFINITY;
            for v in row {
                mx = mx.max(*v);
            }
            let mut denom = 0.0;
            for j in 0..c {
                let e = (row[j] - mx).exp();
                softmax[i * c + j] = e;
                denom += e;
            }
            let inv = 1.0 / denom;
            for j in 0..c {
                softmax[i * c + j] *= inv;
            }
            let lse = mx + denom.ln();
            loss += lse - row[targets[i]];
        }
        loss /= n as f64;
        let rg = self.any_grad(&[logits]);
        self.push(
            Tensor::scalar(loss)?,
            rg,
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                softmax,
            },
        )
    }

    /// Mean of the numerically stable binary cross-entropy
    /// `max(s,0) - s*y + ln(1 + exp(-|s|))` over all elements.
    pub fn binary_cross_entropy_from_logits(
        &mut self,
        logits: Var,
        labels: &[f64],
    ) -> AdResult<Var> {
        let n = self.value(logits).numel();
        if labels.len() != n {
            return Err(AdError::ShapeMismatch {
                op: "binary_cross_entropy",
                detail: format!("{} labels for {} logits", labels.len(), n),
            });
        }
        for &y in labels {
            if y != 0.0 && y != 1.0 {
                return Err(AdError::NonBinaryLabel(y));
            }
        }
        let x = self.value(logits).data();
        let mut loss = 0.0;
        for i in 0..n {
            let s = x[i];
            loss += s.max(0.0) - s * labels[i] + (-s.abs()).exp().ln_1p();
        }
        loss /= n as f64;
        let rg = self.any_grad(&[logits]);
        self.push(
            Tensor::scalar(loss)?,
            rg,
            Op::Bce {
                logits,
                labels: labels.to_vec(),
            },
        )
    }

    // ---- backward --------------------------------------------------------

    /// Accumulate gradients of the scalar `loss` into every requires-grad
    /// node reachable from it. Consumes the tape's backward budget.
    pub fn backward(&mut self, loss: Var) -> AdResult<()> {
        if self.consumed {
            return Err(AdError::TapeConsumed);
        }
        if self.value(loss).numel() != 1 {
            return Err(AdError::NonScalarLoss(self.value(loss).shape().to_vec()));
        }
        self.consumed = true;
        if !self.node(loss).requires_grad {
            // Nothing reachable wants a gradient; valid no-op.
            return Ok(());
        }
        self.nodes[loss.0].grad = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            if self.nodes[idx].grad.is_none() || !self.nodes[idx].requires_grad {
                continue;
            }
            let grad = self.nodes[idx].grad.take().unwrap();
            let op = self.nodes[idx].op.clone();
            self.step_backward(idx, op, &grad)?;
            self.nodes[idx].grad = Some(grad);
        }
        Ok(())
    }

    fn accumulate(&mut self, v: Var, update: impl FnOnce(&mut [f64])) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        if self.nodes[v.0].grad.is_none() {
            let n = self.nodes[v.0].value.numel();
            self.nodes[v.0].grad = Some(vec![0.0; n]);
        }
        let mut g = self.nodes[v.0].grad.take().unwrap();
        update(&mut g);
        self.nodes[v.0].grad = Some(g);
    }

    fn step_backward(&mut self, idx: usize, op: Op, g: &[f64]) -> AdResult<()> {
        match op {
            Op::Leaf => Ok(()),
            Op::Matmul(a, b) => {
                let (m, k) = self.value(a).dims2("matmul")?;
                let n = self.value(b).shape()[1];
                let adata = self.value(a).data().to_vec();
                let bdata = self.value(b).data().to_vec();
                self.accumulate(a, |ga| {
                    // ga += g . b^T
                    for i in 0..m {
                        for p in 0..k {
                            let mut acc = 0.0;
                            for j in 0..n {
                                acc += g[i * n + j] * bdata[p * n + j];
                            }
                            ga[i * k + p] += acc;
                        }
                    }
                });
                self.accumulate(b, |gb| {
                    // gb += a^T . g
                    for p in 0..k {
                        for j in 0..n {
                            let mut acc = 0.0;
                            for i in 0..m {
                                acc += adata[i * k + p] * g[i * n + j];
                            }
                            gb[p * n + j] += acc;
                        }
                    }
                });
                Ok(())
            }
            Op::Transpose(a) => {
                let (m, n) = self.value(a).dims2("transpose")?;
                self.accumulate(a, |ga| {
                    for i in 0..m {
                        for j in 0..n {
                            ga[i * n + j] += g[j * m + i];
                        }
                    }
                });
                Ok(())
            }
            Op::Add(a, b) => {
                self.accumulate(a, |ga| {
                    for (gi, gv) in ga.iter_mut().zip(g) {
                        *gi += gv;
                    }
                });
                self.accumulate(b, |gb| {
                    for (gi, gv) in gb.iter_mut().zip(g) {
                        *gi += gv;
                    }
                });
                Ok(())
            }
            Op::Sub(a, b) => {
                self.accumulate(a, |ga| {
                    for (gi, gv) in ga.iter_mut().zip(g) {
                        *gi += gv;
                    }
                });
                self.accumulate(b, |gb| {
                    for (gi, gv) in gb.iter_mut().zip(g) {
                        *gi -= gv;
                    }
                });
                Ok(())
            }
            Op::Mul(a, b) => {
                let adata = self.value(a).data().to_vec();
                let bdata = self.value(b).data().to_vec();
                self.accumulate(a, |ga| {
                    for i in 0..ga.len() {
                        ga[i] += g[i] * bdata[i];
                    }
                });
                self.accumulate(b, |gb| {
                    for i in 0..gb.len() {
                        gb[i] += g[i] * adata[i];
                    }
                });
                Ok(())
            }
            Op::Scale(a, c) => {
                self.accumulate(a, |ga| {
                    for i in 0..ga.len() {
                        ga[i] += g[i] * c;
                    }
                });
                Ok(())
            }
            Op::AddBias(a, bias) => {
                let (n, d) = self.value(a).dims2("add_bias")?;
                self.accumulate(a, |ga| {
                    for (gi, gv) in ga.iter_mut().zip(g) {
                        *gi += gv;
                    }
                });
                self.accumulate(bias, |gb| {
                    for i in 0..n {
                        for j in 0..d {
                            gb[j] += g[i * d + j];
                        }
                    }
                });
                Ok(())
            }
            Op::Relu(a) => {
                let x = self.value(a).data().to_vec();
                self.accumulate(a, |ga| {
                    for i in 0..ga.len() {
                        if x[i] > 0.0 {
                            ga[i] += g[i];
                        }
                    }
                });
                Ok(())
            }
            Op::BroadcastRows(a, n) => {
                let d = self.value(a).numel();
                self.accumulate(a, |ga| {
                    for i in 0..n {
                        for j in 0..d {
                            ga[j] += g[i * d + j];
                        }
                    }
                });
                Ok(())
            }
            Op::ConcatCols(a, b) => {
                let (n, da) = self.value(a).dims2("concat_cols")?;
                let db = self.value(b).shape()[1];
                let d = da + db;
                self.accumulate(a, |ga| {
                    for i in 0..n {
                        for j in 0..da {
                            ga[i * da + j] += g[i * d + j];
                        }
                    }
                });
                self.accumulate(b, |gb| {
                    for i in 0..n {
                        for j in 0..db {
                            gb[i * db + j] += g[i * d + da + j];
                        }
                    }
                });
                Ok(())
            }
            Op::GatherRows(a, indices) => {
                let d = self.value(a).shape()[1];
                self.accumulate(a, |ga| {
                    for (r, &i) in indices.iter().enumerate() {
                        for j in 0..d {
                            ga[i * d + j] += g[r * d + j];
                        }
                    }
                });
                Ok(())
            }
            Op::L2NormalizeRows { input, eps, norms } => {
                let (n, d) = self.value(input).dims2("l2_normalize_rows")?;
                let y = self.nodes[idx].value.data().to_vec();
                self.accumulate(input, |ga| {
                    for i in 0..n {
                        let norm = norms[i];
                        if norm < eps {
                            continue; // zero gradient through the guard
                        }
                        let yrow = &y[i * d..(i + 1) * d];
                        let grow = &g[i * d..(i + 1) * d];
                        let mut dot = 0.0;
                        for j in 0..d {
                            dot += grow[j] * yrow[j];
                        }
                        let inv = 1.0 / norm;
                        for j in 0..d {
                            ga[i * d + j] += (grow[j] - dot * yrow[j]) * inv;
                        }
                    }
                });
                Ok(())
            }
            Op::SegmentMean {
                input,
                segments,
                counts,
            } => {
                let d = self.value(input).shape()[1];
                self.accumulate(input, |ga| {
                    for (i, &s) in segments.iter().enumerate() {
                        let inv = 1.0 / counts[s] as f64;
                        for j in 0..d {
                            ga[i * d + j] += g[s * d + j] * inv;
                        }
                    }
                });
                Ok(())
            }
            Op::KnnMean { input, neighbors } => {
                let (n, d) = self.value(input).dims2("knn_mean")?;
                self.accumulate(input, |ga| {
                    for i in 0..n {
                        let inv = 1.0 / (1 + neighbors[i].len()) as f64;
                        for j in 0..d {
                            let c = g[i * d + j] * inv;
                            ga[i * d + j] += c;
                        }
                        for &nb in &neighbors[i] {
                            for j in 0..d {
                                ga[nb * d + j] += g[i * d + j] * inv;
                            }
                        }
                    }
                });
                Ok(())
            }
            Op::MergeRows(a, b, plan) => {
                let d = self.value(a).shape()[1];
                self.accumulate(a, |ga| {
                    for (r, src) in plan.iter().enumerate() {
                        match *src {
                            MergeSource::Both(i, _) => {
                                for j in 0..d {
                                    ga[i * d + j] += 0.5 * g[r * d + j];
                                }
                            }
                            MergeSource::First(i) => {
                                for j in 0..d {
                                    ga[i * d + j] += g[r * d + j];
                                }
                            }
                            MergeSource::Second(_) => {}
                        }
                    }
                });
                self.accumulate(b, |gb| {
                    for (r, src) in plan.iter().enumerate() {
                        match *src {
                            MergeSource::Both(_, j2) => {
                                for j in 0..d {
                                    gb[j2 * d + j] += 0.5 * g[r * d + j];
                                }
                            }
                            MergeSource::Second(j2) => {
                                for j in 0..d {
                                    gb[j2 * d + j] += g[r * d + j];
                                }
                            }
                            MergeSource::First(_) => {}
                        }
                    }
                });
                Ok(())
            }
            Op::Sum(a) => {
                let gv = g[0];
                self.accumulate(a, |ga| {
                    for gi in ga.iter_mut() {
                        *gi += gv;
                    }
                });
                Ok(())
            }
            Op::Mean(a) => {
                let n = self.value(a).numel();
                let gv = g[0] / n as f64;
                self.accumulate(a, |ga| {
                    for gi in ga.iter_mut() {
                        *gi += gv;
                    }
                });
                Ok(())
            }
            Op::CrossEntropy {
                logits,
                targets,
                softmax,
            } => {
                let (n, c) = self.value(logits).dims2("cross_entropy")?;
                let gv = g[0] / n as f64;
                self.accumulate(logits, |gl| {
                    for i in 0..n {
                        for j in 0..c {
                            let onehot = if j == targets[i] { 1.0 } else { 0.0 };
                            gl[i * c + j] += gv * (softmax[i * c + j] - onehot);
                        }
                    }
                });
                Ok(())
            }
            Op::Bce { logits, labels } => {
                let x = self.value(logits).data().to_vec();
                let n = x.len();
                let gv = g[0] / n as f64;
                self.accumulate(logits, |gl| {
                    for i in 0..n {
                        gl[i] += gv * (sigmoid(x[i]) - labels[i]);
                    }
                });
                Ok(())
            }
        }
    }
}

fn sigmoid(s: f64) -> f64 {
    if s >= 0.0 {
        1.0 / (1.0 + (-s).exp())
    } else {
        let e = s.exp();
        e / (1.0 + e)
    }
}

/// Plain row-major matmul with ascending-k inner summation.
fn matmul_nn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for p in 0..k {
            let av = a[i * k + p];
            let brow = &b[p * n..(p + 1) * n];
            let orow = &mut out[i * n..(i + 1) * n];
            for j in 0..n {
                orow[j] += av * brow[j];
            }
        }
    }
    out
}
