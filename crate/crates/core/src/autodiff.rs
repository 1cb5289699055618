//! A small matrix-valued reverse-mode tape.
//!
//! Only the operations the re-ranker needs are recorded: products,
//! broadcast bias, residual sums, rectifier, row softmax, query-vs-neighbor
//! cosine, and the three training objectives. Hinge and rectifier use the
//! subgradient 0 at their kinks.

use alloc::vec;
use alloc::vec::Vec;

use crate::loss;
use crate::matrix::{dot, norm, softmax, Matrix};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Leaf,
    MatMul(Var, Var),
    /// `a · bᵀ`
    MatMulT(Var, Var),
    /// `x + 1·b` with `b` a single row.
    AddBias(Var, Var),
    Add(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    RowSoftmax(Var),
    /// Cosine of row 0 against each later row; output `1 × K`.
    QueryCosine(Var),
    Contrastive { s: Var, mask: Vec<bool>, tau: f64 },
    Triplet { s: Var, mask: Vec<bool>, margin: f64 },
    Kl { p: Var, q: Var, tau: f64 },
    Sum(Vec<Var>),
}

struct Node {
    value: Matrix,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    degenerate_rows: usize,
}

/// Adjoints of every recorded value, indexed by [`Var`].
pub struct Grads {
    grads: Vec<Option<Matrix>>,
}

impl Grads {
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.grads[v.0].as_ref()
    }

    pub fn take(&mut self, v: Var) -> Option<Matrix> {
        self.grads[v.0].take()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        debug_assert_eq!(m.shape(), (1, 1));
        m[(0, 0)]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Rows whose zero norm forced a cosine score of −1.
    pub fn degenerate_rows(&self) -> usize {
        self.degenerate_rows
    }

    pub fn leaf(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul(self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul_transposed(self.value(b));
        self.push(v, Op::MatMulT(a, b))
    }

    pub fn add_bias(&mut self, x: Var, b: Var) -> Var {
        let bias = self.value(b);
        assert_eq!(bias.rows(), 1, "bias must be a single row");
        let mut v = self.value(x).clone();
        assert_eq!(v.cols(), bias.cols(), "bias width mismatch");
        for i in 0..v.rows() {
            for (o, &bj) in v.row_mut(i).iter_mut().zip(bias.row(0)) {
                *o += bj;
            }
        }
        self.push(v, Op::AddBias(x, b))
    }

    /// `x · w + b`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Var {
        let y = self.matmul(x, w);
        self.add_bias(y, b)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut v = self.value(a).clone();
        v.add_assign(self.value(b));
        self.push(v, Op::Add(a, b))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let mut v = self.value(x).clone();
        v.scale_assign(s);
        self.push(v, Op::Scale(x, s))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let v = self.value(x).map(|t| if t > 0.0 { t } else { 0.0 });
        self.push(v, Op::Relu(x))
    }

    pub fn row_softmax(&mut self, x: Var) -> Var {
        let mut v = self.value(x).clone();
        v.softmax_rows();
        self.push(v, Op::RowSoftmax(x))
    }

    /// Cosine similarity of row 0 with each of rows `1..`; a zero-norm row
    /// scores −1 and passes no gradient.
    pub fn query_cosine(&mut self, x: Var) -> Var {
        let m = self.value(x);
        let k = m.rows().saturating_sub(1);
        let q = m.row(0);
        let nq = norm(q);
        let mut out = Matrix::zeros(1, k);
        let mut degenerate = 0;
        for j in 0..k {
            let r = m.row(j + 1);
            let nr = norm(r);
            out[(0, j)] = if nq == 0.0 || nr == 0.0 {
                degenerate += 1;
                -1.0
            } else {
                (dot(q, r) / (nq * nr)).clamp(-1.0, 1.0)
            };
        }
        self.degenerate_rows += degenerate;
        self.push(out, Op::QueryCosine(x))
    }

    /// Contrastive objective on a `1 × K` score row; `None` without positives.
    pub fn contrastive(&mut self, s: Var, mask: &[bool], tau: f64) -> Option<Var> {
        let l = loss::contrastive_loss(self.value(s).row(0), mask, tau)?;
        Some(self.push(
            Matrix::from_vec(1, 1, vec![l]).unwrap(),
            Op::Contrastive {
                s,
                mask: mask.to_vec(),
                tau,
            },
        ))
    }

    pub fn triplet(&mut self, s: Var, mask: &[bool], margin: f64) -> Option<Var> {
        let l = loss::triplet_loss(self.value(s).row(0), mask, margin)?;
        Some(self.push(
            Matrix::from_vec(1, 1, vec![l]).unwrap(),
            Op::Triplet {
                s,
                mask: mask.to_vec(),
                margin,
            },
        ))
    }

    pub fn kl(&mut self, p: Var, q: Var, tau: f64) -> Var {
        let l = loss::mma_loss(self.value(p).row(0), self.value(q).row(0), tau);
        self.push(Matrix::from_vec(1, 1, vec![l]).unwrap(), Op::Kl { p, q, tau })
    }

    /// Sum of `1 × 1` values.
    pub fn sum(&mut self, terms: &[Var]) -> Var {
        let total: f64 = terms.iter().map(|&t| self.scalar(t)).sum();
        self.push(Matrix::from_vec(1, 1, vec![total]).unwrap(), Op::Sum(terms.to_vec()))
    }

    /// Reverse sweep from the scalar `out`.
    pub fn backward(&self, out: Var) -> Grads {
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[out.0] = Some(Matrix::from_vec(1, 1, vec![1.0]).unwrap());

        fn acc(grads: &mut [Option<Matrix>], v: Var, g: Matrix) {
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&g),
                slot @ None => *slot = Some(g),
            }
        }

        for idx in (0..=out.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    acc(&mut grads, *a, g.matmul_transposed(bv));
                    acc(&mut grads, *b, av.transposed_matmul(&g));
                }
                Op::MatMulT(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    acc(&mut grads, *a, g.matmul(bv));
                    acc(&mut grads, *b, g.transposed_matmul(av));
                }
                Op::AddBias(x, b) => {
                    let mut gb = Matrix::zeros(1, g.cols());
                    for i in 0..g.rows() {
                        for (o, &v) in gb.row_mut(0).iter_mut().zip(g.row(i)) {
                            *o += v;
                        }
                    }
                    acc(&mut grads, *b, gb);
                    acc(&mut grads, *x, g.clone());
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, g.clone());
                }
                Op::Scale(x, s) => {
                    let mut gx = g.clone();
                    gx.scale_assign(*s);
                    acc(&mut grads, *x, gx);
                }
                Op::Relu(x) => {
                    let xv = self.value(*x);
                    let gx = Matrix::from_fn(g.rows(), g.cols(), |i, j| {
                        if xv[(i, j)] > 0.0 {
                            g[(i, j)]
                        } else {
                            0.0
                        }
                    });
                    acc(&mut grads, *x, gx);
                }
                Op::RowSoftmax(x) => {
                    let y = &node.value;
                    let mut gx = Matrix::zeros(y.rows(), y.cols());
                    for i in 0..y.rows() {
                        let inner = dot(y.row(i), g.row(i));
                        for j in 0..y.cols() {
                            gx[(i, j)] = y[(i, j)] * (g[(i, j)] - inner);
                        }
                    }
                    acc(&mut grads, *x, gx);
                }
                Op::QueryCosine(x) => {
                    let m = self.value(*x);
                    let s = &node.value;
                    let mut gx = Matrix::zeros(m.rows(), m.cols());
                    let q = m.row(0);
                    let nq = norm(q);
                    for j in 0..s.cols() {
                        let r = m.row(j + 1);
                        let nr = norm(r);
                        if nq == 0.0 || nr == 0.0 {
                            continue;
                        }
                        let (gs, sj) = (g[(0, j)], s[(0, j)]);
                        for c in 0..m.cols() {
                            gx[(0, c)] += gs * (r[c] / (nq * nr) - sj * q[c] / (nq * nq));
                            gx[(j + 1, c)] += gs * (q[c] / (nq * nr) - sj * r[c] / (nr * nr));
                        }
                    }
                    acc(&mut grads, *x, gx);
                }
                Op::Contrastive { s, mask, tau } => {
                    let sv = self.value(*s).row(0);
                    let scaled: Vec<f64> = sv.iter().map(|v| v / tau).collect();
                    let all = softmax(&scaled);
                    let pos_logits: Vec<f64> = scaled
                        .iter()
                        .zip(mask)
                        .map(|(&v, &p)| if p { v } else { f64::NEG_INFINITY })
                        .collect();
                    let pos = softmax(&pos_logits);
                    let gl = g[(0, 0)];
                    let gs = Matrix::from_fn(1, sv.len(), |_, j| gl * (all[j] - pos[j]) / tau);
                    acc(&mut grads, *s, gs);
                }
                Op::Triplet { s, mask, margin } => {
                    let sv = self.value(*s).row(0);
                    let gl = g[(0, 0)];
                    let mut gs = Matrix::zeros(1, sv.len());
                    if let Some(h) = loss::hardest_positive(sv, mask) {
                        for (i, (&si, &p)) in sv.iter().zip(mask).enumerate() {
                            if !p && margin - sv[h] + si > 0.0 {
                                gs[(0, i)] += gl;
                                gs[(0, h)] -= gl;
                            }
                        }
                    }
                    acc(&mut grads, *s, gs);
                }
                Op::Kl { p, q, tau } => {
                    let a: Vec<f64> = self.value(*p).row(0).iter().map(|v| v / tau).collect();
                    let b: Vec<f64> = self.value(*q).row(0).iter().map(|v| v / tau).collect();
                    let (pa, qb) = (softmax(&a), softmax(&b));
                    let (la, lb) = (crate::matrix::log_sum_exp(&a), crate::matrix::log_sum_exp(&b));
                    let d: f64 = pa
                        .iter()
                        .zip(a.iter().zip(&b))
                        .map(|(&pi, (&ai, &bi))| pi * ((ai - la) - (bi - lb)))
                        .sum();
                    let gl = g[(0, 0)];
                    let gp = Matrix::from_fn(1, a.len(), |_, j| {
                        gl * pa[j] * (((a[j] - la) - (b[j] - lb)) - d) / tau
                    });
                    let gq = Matrix::from_fn(1, b.len(), |_, j| gl * (qb[j] - pa[j]) / tau);
                    acc(&mut grads, *p, gp);
                    acc(&mut grads, *q, gq);
                }
                Op::Sum(terms) => {
                    for &t in terms {
                        acc(&mut grads, t, g.clone());
                    }
                }
            }
            grads[idx] = Some(g);
        }
        Grads { grads }
    }
}
