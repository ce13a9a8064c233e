//! Define-by-run reverse-mode differentiation.
//!
//! A [`Tape`] records every operation as it is evaluated (values are eager),
//! then [`Tape::backward`] walks the record once in reverse to accumulate the
//! gradient of a scalar root with respect to every recorded quantity. The op
//! set is deliberately small — exactly what the training losses need:
//!
//! * scalar arithmetic, hinges, dot products, `logdet`, and the smallest
//!   eigenvalue of a symmetric matrix (the penalty branch when a certificate
//!   matrix is not yet positive definite);
//! * the vector chain of a feedforward network, including maps through an
//!   activation's **derivative** (so the analytic input gradient of a network
//!   can itself be built on the tape and differentiated in parameters);
//! * raw matrix algebra plus a block [`Tape::assemble`] primitive for laying
//!   out certificate matrices;
//! * a black-box vector leg for the plant: the recorded value is whatever the
//!   dynamics returned, and the backward pass pushes gradients through a
//!   caller-supplied input Jacobian. Asking for a gradient through a leg
//!   recorded without a Jacobian is an error, not a silent zero.
//!
//! Shape mismatches panic: they indicate a bug in the code building the
//! graph, never bad user input.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::lipcert::ldlt;
use crate::net::Activation;

/// Handle to a recorded quantity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// A recorded value: scalar, vector, or matrix.
#[derive(Debug, Clone)]
pub enum Value {
    /// Scalar.
    S(f64),
    /// Column vector.
    V(DVector<f64>),
    /// Dense matrix.
    M(DMatrix<f64>),
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    // Scalars.
    AddS(Var, Var),
    SubS(Var, Var),
    MulS(Var, Var),
    NegS(Var),
    ScaleS(Var, f64),
    AddConstS(Var),
    Hinge(Var),
    IndexS(Var, usize),
    Dot(Var, Var),
    LogDet { m: Var, inv: DMatrix<f64> },
    MinEigSym { m: Var, eigvec: DVector<f64> },
    // Vectors.
    MatVec(Var, Var),
    MatTVec(Var, Var),
    AddV(Var, Var),
    HadV(Var, Var),
    MapAct(Var, Activation),
    MapActDeriv(Var, Activation),
    ClampV { v: Var, lo: DVector<f64>, hi: DVector<f64> },
    SegmentV(Var, usize, usize),
    SquareV(Var),
    RowToVec(Var, usize),
    ScaleV(Var, f64),
    BlackBoxV { u: Var, jac_u: Option<DMatrix<f64>> },
    // Matrices.
    MatMul(Var, Var),
    MatTrans(Var),
    AddM(Var, Var),
    ScaleM(Var, f64),
    DiagM(Var),
    Assemble { blocks: Vec<(usize, usize, Var)> },
}

struct Node {
    op: Op,
    value: Value,
}

/// The recording. Create one per loss evaluation; it is cheap.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of one backward pass, indexed by [`Var`].
pub struct Gradients {
    slots: Vec<Option<Value>>,
}

impl Gradients {
    /// Gradient of a scalar var; zero when the root did not depend on it.
    #[must_use]
    pub fn scalar(&self, v: Var) -> f64 {
        match &self.slots[v.0] {
            None => 0.0,
            Some(Value::S(g)) => *g,
            Some(_) => panic!("gradient of var {} is not scalar", v.0),
        }
    }

    /// Gradient of a vector var, if any flowed to it.
    #[must_use]
    pub fn vector(&self, v: Var) -> Option<&DVector<f64>> {
        match &self.slots[v.0] {
            None => None,
            Some(Value::V(g)) => Some(g),
            Some(_) => panic!("gradient of var {} is not a vector", v.0),
        }
    }

    /// Gradient of a matrix var, if any flowed to it.
    #[must_use]
    pub fn matrix(&self, v: Var) -> Option<&DMatrix<f64>> {
        match &self.slots[v.0] {
            None => None,
            Some(Value::M(g)) => Some(g),
            Some(_) => panic!("gradient of var {} is not a matrix", v.0),
        }
    }
}

impl Tape {
    /// Empty tape.
    #[must_use]
    pub fn new() -> Self {
        Tape::default()
    }

    /// Number of recorded nodes.
    #[must_use]
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    /// True when nothing has been recorded.
    #[must_use]
    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, value: Value) -> Var {
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    /// Records a scalar leaf (parameter or constant alike; the caller decides
    /// which gradients it reads back).
    pub fn scalar(&mut self, x: f64) -> Var {
        self.push(Op::Leaf, Value::S(x))
    }

    /// Records a vector leaf.
    pub fn vector(&mut self, x: DVector<f64>) -> Var {
        self.push(Op::Leaf, Value::V(x))
    }

    /// Records a matrix leaf.
    pub fn matrix(&mut self, x: DMatrix<f64>) -> Var {
        self.push(Op::Leaf, Value::M(x))
    }

    /// Value of a scalar var.
    #[must_use]
    pub fn value_s(&self, v: Var) -> f64 {
        match &self.nodes[v.0].value {
            Value::S(x) => *x,
            _ => panic!("var {} is not scalar", v.0),
        }
    }

    /// Value of a vector var.
    #[must_use]
    pub fn value_v(&self, v: Var) -> &DVector<f64> {
        match &self.nodes[v.0].value {
            Value::V(x) => x,
            _ => panic!("var {} is not a vector", v.0),
        }
    }

    /// Value of a matrix var.
    #[must_use]
    pub fn value_m(&self, v: Var) -> &DMatrix<f64> {
        match &self.nodes[v.0].value {
            Value::M(x) => x,
            _ => panic!("var {} is not a matrix", v.0),
        }
    }

    // ----- scalar ops -----

    /// `a + b`.
    pub fn add_s(&mut self, a: Var, b: Var) -> Var {
        let v = self.value_s(a) + self.value_s(b);
        self.push(Op::AddS(a, b), Value::S(v))
    }

    /// `a - b`.
    pub fn sub_s(&mut self, a: Var, b: Var) -> Var {
        let v = self.value_s(a) - self.value_s(b);
        self.push(Op::SubS(a, b), Value::S(v))
    }

    /// `a * b`.
    pub fn mul_s(&mut self, a: Var, b: Var) -> Var {
        let v = self.value_s(a) * self.value_s(b);
        self.push(Op::MulS(a, b), Value::S(v))
    }

    /// `-a`.
    pub fn neg_s(&mut self, a: Var) -> Var {
        let v = -self.value_s(a);
        self.push(Op::NegS(a), Value::S(v))
    }

    /// `c * a` for constant `c`.
    pub fn scale_s(&mut self, a: Var, c: f64) -> Var {
        let v = c * self.value_s(a);
        self.push(Op::ScaleS(a, c), Value::S(v))
    }

    /// `a + c` for constant `c`.
    pub fn add_const_s(&mut self, a: Var, c: f64) -> Var {
        let v = self.value_s(a) + c;
        self.push(Op::AddConstS(a), Value::S(v))
    }

    /// `max(0, a)`, subgradient 0 at the kink.
    pub fn hinge(&mut self, a: Var) -> Var {
        let v = self.value_s(a).max(0.0);
        self.push(Op::Hinge(a), Value::S(v))
    }

    /// `v[k]` as a scalar.
    pub fn index_s(&mut self, v: Var, k: usize) -> Var {
        let x = self.value_v(v);
        assert!(k < x.len(), "index {k} out of bounds for length {}", x.len());
        let val = x[k];
        self.push(Op::IndexS(v, k), Value::S(val))
    }

    /// `aᵀ b`.
    pub fn dot(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value_v(a), self.value_v(b));
        assert_eq!(va.len(), vb.len(), "dot product of unequal lengths");
        let v = va.dot(vb);
        self.push(Op::Dot(a, b), Value::S(v))
    }

    /// `ln det M` for symmetric positive definite `M`; fails with the first
    /// non-positive pivot otherwise, letting the caller switch to the
    /// eigenvalue penalty branch.
    pub fn logdet(&mut self, m: Var) -> Result<Var> {
        let mat = self.value_m(m);
        let f = ldlt::factor(mat)?;
        let value = f.logdet();
        let inv = f.inverse()?;
        Ok(self.push(Op::LogDet { m, inv }, Value::S(value)))
    }

    /// Smallest eigenvalue of a symmetric matrix. The backward rule uses the
    /// corresponding eigenvector `v`: `dλ_min/dM = v vᵀ`.
    pub fn min_eig_sym(&mut self, m: Var) -> Var {
        let mat = self.value_m(m);
        assert_eq!(mat.nrows(), mat.ncols(), "min_eig_sym needs a square matrix");
        // Symmetrize before the eigensolve so assembly rounding cannot leak
        // asymmetric noise into the eigenvectors.
        let sym = (mat + mat.transpose()) * 0.5;
        let eig = SymmetricEigen::new(sym);
        let mut k = 0;
        for i in 1..eig.eigenvalues.len() {
            if eig.eigenvalues[i] < eig.eigenvalues[k] {
                k = i;
            }
        }
        let value = eig.eigenvalues[k];
        let eigvec = eig.eigenvectors.column(k).into_owned();
        self.push(Op::MinEigSym { m, eigvec }, Value::S(value))
    }

    // ----- vector ops -----

    /// `M x`.
    pub fn mat_vec(&mut self, m: Var, x: Var) -> Var {
        let (mm, xx) = (self.value_m(m), self.value_v(x));
        assert_eq!(mm.ncols(), xx.len(), "mat_vec dimension mismatch");
        let v = mm * xx;
        self.push(Op::MatVec(m, x), Value::V(v))
    }

    /// `Mᵀ x`.
    pub fn mat_t_vec(&mut self, m: Var, x: Var) -> Var {
        let (mm, xx) = (self.value_m(m), self.value_v(x));
        assert_eq!(mm.nrows(), xx.len(), "mat_t_vec dimension mismatch");
        let v = mm.transpose() * xx;
        self.push(Op::MatTVec(m, x), Value::V(v))
    }

    /// `a + b` elementwise.
    pub fn add_v(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value_v(a), self.value_v(b));
        assert_eq!(va.len(), vb.len(), "add_v length mismatch");
        let v = va + vb;
        self.push(Op::AddV(a, b), Value::V(v))
    }

    /// `a ∘ b` elementwise.
    pub fn had_v(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value_v(a), self.value_v(b));
        assert_eq!(va.len(), vb.len(), "had_v length mismatch");
        let v = va.component_mul(vb);
        self.push(Op::HadV(a, b), Value::V(v))
    }

    /// `φ(x)` elementwise.
    pub fn map_act(&mut self, x: Var, act: Activation) -> Var {
        let v = self.value_v(x).map(|t| act.apply(t));
        self.push(Op::MapAct(x, act), Value::V(v))
    }

    /// `φ'(x)` elementwise — the slope vector of an activation layer. Its
    /// backward rule applies `φ''`, which is how second-order structure of
    /// the network enters first-order training of the gradient condition.
    pub fn map_act_deriv(&mut self, x: Var, act: Activation) -> Var {
        let v = self.value_v(x).map(|t| act.derivative(t));
        self.push(Op::MapActDeriv(x, act), Value::V(v))
    }

    /// Elementwise clamp into `[lo, hi]`; gradients pass only where the value
    /// is strictly inside.
    pub fn clamp_v(&mut self, v: Var, lo: &DVector<f64>, hi: &DVector<f64>) -> Var {
        let x = self.value_v(v);
        assert_eq!(x.len(), lo.len(), "clamp_v lower bound length mismatch");
        assert_eq!(x.len(), hi.len(), "clamp_v upper bound length mismatch");
        let clamped = DVector::from_fn(x.len(), |i, _| x[i].clamp(lo[i], hi[i]));
        self.push(
            Op::ClampV { v, lo: lo.clone(), hi: hi.clone() },
            Value::V(clamped),
        )
    }

    /// Contiguous slice `v[start .. start + len]`.
    pub fn segment_v(&mut self, v: Var, start: usize, len: usize) -> Var {
        let x = self.value_v(v);
        assert!(start + len <= x.len(), "segment_v out of bounds");
        let seg = x.rows(start, len).into_owned();
        self.push(Op::SegmentV(v, start, len), Value::V(seg))
    }

    /// `v ∘ v` elementwise.
    pub fn square_v(&mut self, v: Var) -> Var {
        let x = self.value_v(v);
        let sq = x.component_mul(x);
        self.push(Op::SquareV(v), Value::V(sq))
    }

    /// Row `r` of a matrix as a column vector.
    pub fn row_to_vec(&mut self, m: Var, r: usize) -> Var {
        let mm = self.value_m(m);
        assert!(r < mm.nrows(), "row_to_vec row out of bounds");
        let v = mm.row(r).transpose();
        self.push(Op::RowToVec(m, r), Value::V(v))
    }

    /// `c * v` for constant `c`.
    pub fn scale_v(&mut self, v: Var, c: f64) -> Var {
        let x = self.value_v(v) * c;
        self.push(Op::ScaleV(v, c), Value::V(x))
    }

    /// Records a black-box vector leg: `value` is what the external function
    /// returned at the current value of `u` (plus whatever constants the
    /// caller baked in), and `jac_u`, when provided, is its Jacobian with
    /// respect to `u`. A backward pass that reaches a leg recorded without a
    /// Jacobian fails with [`Error::MissingJacobian`].
    pub fn black_box_v(
        &mut self,
        u: Var,
        value: DVector<f64>,
        jac_u: Option<DMatrix<f64>>,
    ) -> Var {
        let un = self.value_v(u).len();
        if let Some(j) = &jac_u {
            assert_eq!(
                (j.nrows(), j.ncols()),
                (value.len(), un),
                "black-box Jacobian shape mismatch"
            );
        }
        self.push(Op::BlackBoxV { u, jac_u }, Value::V(value))
    }

    // ----- matrix ops -----

    /// `A B`.
    pub fn mat_mul(&mut self, a: Var, b: Var) -> Var {
        let (ma, mb) = (self.value_m(a), self.value_m(b));
        assert_eq!(ma.ncols(), mb.nrows(), "mat_mul dimension mismatch");
        let v = ma * mb;
        self.push(Op::MatMul(a, b), Value::M(v))
    }

    /// `Aᵀ`.
    pub fn mat_trans(&mut self, a: Var) -> Var {
        let v = self.value_m(a).transpose();
        self.push(Op::MatTrans(a), Value::M(v))
    }

    /// `A + B`.
    pub fn add_m(&mut self, a: Var, b: Var) -> Var {
        let (ma, mb) = (self.value_m(a), self.value_m(b));
        assert_eq!(ma.shape(), mb.shape(), "add_m shape mismatch");
        let v = ma + mb;
        self.push(Op::AddM(a, b), Value::M(v))
    }

    /// `c * A` for constant `c`.
    pub fn scale_m(&mut self, a: Var, c: f64) -> Var {
        let v = self.value_m(a) * c;
        self.push(Op::ScaleM(a, c), Value::M(v))
    }

    /// Diagonal matrix from a vector.
    pub fn diag_m(&mut self, v: Var) -> Var {
        let d = DMatrix::from_diagonal(self.value_v(v));
        self.push(Op::DiagM(v), Value::M(d))
    }

    /// Builds an `nrows × ncols` matrix by summing blocks at given offsets;
    /// blocks may be matrix vars of any shape that fits. Overlapping blocks
    /// add. This is the primitive behind certificate-matrix layout.
    pub fn assemble(
        &mut self,
        nrows: usize,
        ncols: usize,
        blocks: Vec<(usize, usize, Var)>,
    ) -> Var {
        let mut out = DMatrix::<f64>::zeros(nrows, ncols);
        for &(r0, c0, b) in &blocks {
            let bm = self.value_m(b);
            assert!(
                r0 + bm.nrows() <= nrows && c0 + bm.ncols() <= ncols,
                "assemble block at ({r0}, {c0}) of shape {:?} exceeds {nrows}x{ncols}",
                bm.shape()
            );
            let mut view = out.view_mut((r0, c0), (bm.nrows(), bm.ncols()));
            view += bm;
        }
        self.push(Op::Assemble { blocks }, Value::M(out))
    }

    /// Sum of scalar vars (empty sum records the constant zero).
    pub fn sum_s(&mut self, terms: &[Var]) -> Var {
        match terms.split_first() {
            None => self.scalar(0.0),
            Some((&first, rest)) => {
                let mut acc = first;
                for &t in rest {
                    acc = self.add_s(acc, t);
                }
                acc
            }
        }
    }

    // ----- backward -----

    /// Accumulates `d root / d var` for every recorded var. `root` must be
    /// scalar. Fails if a gradient reaches a black-box leg that was recorded
    /// without a Jacobian.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        match &self.nodes[root.0].value {
            Value::S(_) => {}
            _ => panic!("backward root must be scalar"),
        }
        let mut g: Vec<Option<Value>> = Vec::with_capacity(self.nodes.len());
        g.resize_with(self.nodes.len(), || None);
        g[root.0] = Some(Value::S(1.0));

        for i in (0..=root.0).rev() {
            let Some(gi) = g[i].clone() else { continue };
            match &self.nodes[i].op {
                Op::Leaf => {}

                Op::AddS(a, b) => {
                    let gs = as_s(&gi);
                    acc_s(&mut g, *a, gs);
                    acc_s(&mut g, *b, gs);
                }
                Op::SubS(a, b) => {
                    let gs = as_s(&gi);
                    acc_s(&mut g, *a, gs);
                    acc_s(&mut g, *b, -gs);
                }
                Op::MulS(a, b) => {
                    let gs = as_s(&gi);
                    let (va, vb) = (self.value_s(*a), self.value_s(*b));
                    acc_s(&mut g, *a, gs * vb);
                    acc_s(&mut g, *b, gs * va);
                }
                Op::NegS(a) => acc_s(&mut g, *a, -as_s(&gi)),
                Op::ScaleS(a, c) => acc_s(&mut g, *a, as_s(&gi) * c),
                Op::AddConstS(a) => acc_s(&mut g, *a, as_s(&gi)),
                Op::Hinge(a) => {
                    if self.value_s(*a) > 0.0 {
                        acc_s(&mut g, *a, as_s(&gi));
                    }
                }
                Op::IndexS(v, k) => {
                    let mut gv = DVector::zeros(self.value_v(*v).len());
                    gv[*k] = as_s(&gi);
                    acc_v(&mut g, *v, gv);
                }
                Op::Dot(a, b) => {
                    let gs = as_s(&gi);
                    acc_v(&mut g, *a, self.value_v(*b) * gs);
                    acc_v(&mut g, *b, self.value_v(*a) * gs);
                }
                Op::LogDet { m, inv } => {
                    acc_m(&mut g, *m, inv * as_s(&gi));
                }
                Op::MinEigSym { m, eigvec } => {
                    let outer = eigvec * eigvec.transpose() * as_s(&gi);
                    acc_m(&mut g, *m, outer);
                }

                Op::MatVec(m, x) => {
                    let gv = as_v(&gi);
                    acc_m(&mut g, *m, gv * self.value_v(*x).transpose());
                    acc_v(&mut g, *x, self.value_m(*m).transpose() * gv);
                }
                Op::MatTVec(m, x) => {
                    let gv = as_v(&gi);
                    acc_m(&mut g, *m, self.value_v(*x) * gv.transpose());
                    acc_v(&mut g, *x, self.value_m(*m) * gv);
                }
                Op::AddV(a, b) => {
                    let gv = as_v(&gi);
                    acc_v(&mut g, *a, gv.clone());
                    acc_v(&mut g, *b, gv.clone());
                }
                Op::HadV(a, b) => {
                    let gv = as_v(&gi);
                    acc_v(&mut g, *a, gv.component_mul(self.value_v(*b)));
                    acc_v(&mut g, *b, gv.component_mul(self.value_v(*a)));
                }
                Op::MapAct(x, act) => {
                    let slopes = self.value_v(*x).map(|t| act.derivative(t));
                    acc_v(&mut g, *x, as_v(&gi).component_mul(&slopes));
                }
                Op::MapActDeriv(x, act) => {
                    let curv = self.value_v(*x).map(|t| act.second_derivative(t));
                    acc_v(&mut g, *x, as_v(&gi).component_mul(&curv));
                }
                Op::ClampV { v, lo, hi } => {
                    let x = self.value_v(*v);
                    let gv = as_v(&gi);
                    let masked =
                        DVector::from_fn(x.len(), |i, _| {
                            if x[i] > lo[i] && x[i] < hi[i] {
                                gv[i]
                            } else {
                                0.0
                            }
                        });
                    acc_v(&mut g, *v, masked);
                }
                Op::SegmentV(v, start, len) => {
                    let mut gv = DVector::zeros(self.value_v(*v).len());
                    gv.rows_mut(*start, *len).copy_from(as_v(&gi));
                    acc_v(&mut g, *v, gv);
                }
                Op::SquareV(v) => {
                    let gv = as_v(&gi).component_mul(self.value_v(*v)) * 2.0;
                    acc_v(&mut g, *v, gv);
                }
                Op::RowToVec(m, r) => {
                    let mm = self.value_m(*m);
                    let mut gm = DMatrix::zeros(mm.nrows(), mm.ncols());
                    gm.row_mut(*r).copy_from(&as_v(&gi).transpose());
                    acc_m(&mut g, *m, gm);
                }
                Op::ScaleV(v, c) => {
                    acc_v(&mut g, *v, as_v(&gi) * *c);
                }
                Op::BlackBoxV { u, jac_u } => match jac_u {
                    Some(j) => acc_v(&mut g, *u, j.transpose() * as_v(&gi)),
                    None => return Err(Error::MissingJacobian),
                },

                Op::MatMul(a, b) => {
                    let gm = as_m(&gi);
                    acc_m(&mut g, *a, gm * self.value_m(*b).transpose());
                    acc_m(&mut g, *b, self.value_m(*a).transpose() * gm);
                }
                Op::MatTrans(a) => {
                    acc_m(&mut g, *a, as_m(&gi).transpose());
                }
                Op::AddM(a, b) => {
                    let gm = as_m(&gi);
                    acc_m(&mut g, *a, gm.clone());
                    acc_m(&mut g, *b, gm.clone());
                }
                Op::ScaleM(a, c) => {
                    acc_m(&mut g, *a, as_m(&gi) * *c);
                }
                Op::DiagM(v) => {
                    acc_v(&mut g, *v, as_m(&gi).diagonal());
                }
                Op::Assemble { blocks } => {
                    let gm = as_m(&gi);
                    for &(r0, c0, b) in blocks {
                        let (nr, nc) = self.value_m(b).shape();
                        let slice = gm.view((r0, c0), (nr, nc)).into_owned();
                        acc_m(&mut g, b, slice);
                    }
                }
            }
        }
        Ok(Gradients { slots: g })
    }
}

fn as_s(v: &Value) -> f64 {
    match v {
        Value::S(x) => *x,
        _ => panic!("expected scalar gradient"),
    }
}

fn as_v(v: &Value) -> &DVector<f64> {
    match v {
        Value::V(x) => x,
        _ => panic!("expected vector gradient"),
    }
}

fn as_m(v: &Value) -> &DMatrix<f64> {
    match v {
        Value::M(x) => x,
        _ => panic!("expected matrix gradient"),
    }
}

fn acc_s(g: &mut [Option<Value>], v: Var, delta: f64) {
    match &mut g[v.0] {
        None => g[v.0] = Some(Value::S(delta)),
        Some(Value::S(x)) => *x += delta,
        Some(_) => panic!("gradient kind mismatch at var {}", v.0),
    }
}

fn acc_v(g: &mut [Option<Value>], v: Var, delta: DVector<f64>) {
    match &mut g[v.0] {
        None => g[v.0] = Some(Value::V(delta)),
        Some(Value::V(x)) => *x += delta,
        Some(_) => panic!("gradient kind mismatch at var {}", v.0),
    }
}

fn acc_m(g: &mut [Option<Value>], v: Var, delta: DMatrix<f64>) {
    match &mut g[v.0] {
        None => g[v.0] = Some(Value::M(delta)),
        Some(Value::M(x)) => *x += delta,
        Some(_) => panic!("gradient kind mismatch at var {}", v.0),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::FeedforwardNet;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn dvec(values: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(values)
    }

    /// Builds a scalar function of scalar leaves twice — once for the value
    /// and gradient, once per finite-difference probe.
    fn check_scalar_grads(
        build: impl Fn(&mut Tape, &[Var]) -> Var,
        at: &[f64],
        tol: f64,
    ) {
        let mut tape = Tape::new();
        let vars: Vec<Var> = at.iter().map(|&x| tape.scalar(x)).collect();
        let root = build(&mut tape, &vars);
        let grads = tape.backward(root).expect("backward");
        let h = 1e-6;
        for k in 0..at.len() {
            let probe = |delta: f64| {
                let mut tp = Tape::new();
                let mut pt = at.to_vec();
                pt[k] += delta;
                let vs: Vec<Var> = pt.iter().map(|&x| tp.scalar(x)).collect();
                let r = build(&mut tp, &vs);
                tp.value_s(r)
            };
            let fd = (probe(h) - probe(-h)) / (2.0 * h);
            let got = grads.scalar(vars[k]);
            assert!(
                (got - fd).abs() <= tol * (1.0 + fd.abs()),
                "leaf {k}: analytic {got} vs finite difference {fd}"
            );
        }
    }

    #[test]
    fn scalar_arithmetic_matches_finite_differences() {
        check_scalar_grads(
            |t, v| {
                let p = t.mul_s(v[0], v[1]);
                let q = t.sub_s(p, v[2]);
                let r = t.scale_s(q, 1.7);
                let s = t.add_const_s(r, -0.3);
                let n = t.neg_s(v[0]);
                let m = t.add_s(s, n);
                t.mul_s(m, m)
            },
            &[0.7, -1.3, 0.4],
            1e-7,
        );
    }

    #[test]
    fn hinge_gate_matches_finite_differences_away_from_kink() {
        check_scalar_grads(
            |t, v| {
                let a = t.hinge(v[0]);
                let b = t.hinge(v[1]);
                let s = t.add_s(a, b);
                t.mul_s(s, v[2])
            },
            &[0.8, -0.5, 1.2],
            1e-7,
        );
    }

    #[test]
    fn hinge_counts_active_terms_in_eta_gradient() {
        // L = sum_i c * max(0, r_i - eta): dL/deta = -c * (#active hinges).
        let residuals = [0.3, -0.2, 0.5, 0.05, -0.9];
        let eta_val = 0.1;
        let c = 2.5;
        let mut tape = Tape::new();
        let eta = tape.scalar(eta_val);
        let mut terms = Vec::new();
        for &r in &residuals {
            let rv = tape.scalar(r);
            let diff = tape.sub_s(rv, eta);
            let h = tape.hinge(diff);
            terms.push(tape.scale_s(h, c));
        }
        let loss = tape.sum_s(&terms);
        let grads = tape.backward(loss).expect("backward");
        let active = residuals.iter().filter(|&&r| r - eta_val > 0.0).count();
        assert_eq!(active, 2);
        assert_eq!(grads.scalar(eta), -c * active as f64);
    }

    #[test]
    fn dot_and_vector_ops_match_finite_differences() {
        // y = (a ∘ b + 2 segment(a, 0, 3) padded) · a  — exercise HadV,
        // AddV, ScaleV, SegmentV through scalar leaves packed in a vector.
        let a0 = dvec(&[0.3, -0.8, 1.1]);
        let b0 = dvec(&[-0.4, 0.9, 0.2]);
        let build = |t: &mut Tape, a: DVector<f64>, b: DVector<f64>| {
            let av = t.vector(a);
            let bv = t.vector(b);
            let had = t.had_v(av, bv);
            let scaled = t.scale_v(av, 2.0);
            let sum = t.add_v(had, scaled);
            let seg = t.segment_v(sum, 1, 2);
            let sq = t.square_v(seg);
            let ones = t.vector(dvec(&[1.0, 1.0]));
            let d = t.dot(sq, ones);
            (av, bv, d)
        };
        let mut tape = Tape::new();
        let (av, bv, root) = build(&mut tape, a0.clone(), b0.clone());
        let grads = tape.backward(root).expect("backward");
        let h = 1e-6;
        for k in 0..3 {
            for (which, base, var) in [(0, &a0, av), (1, &b0, bv)] {
                let probe = |delta: f64| {
                    let mut tp = Tape::new();
                    let mut pa = a0.clone();
                    let mut pb = b0.clone();
                    if which == 0 {
                        pa[k] += delta;
                    } else {
                        pb[k] += delta;
                    }
                    let (_, _, r) = build(&mut tp, pa, pb);
                    tp.value_s(r)
                };
                let fd = (probe(h) - probe(-h)) / (2.0 * h);
                let got = grads.vector(var).map_or(0.0, |gv| gv[k]);
                assert!(
                    (got - fd).abs() < 1e-6 * (1.0 + fd.abs()),
                    "vec {which} ({base:?}) comp {k}: {got} vs {fd}"
                );
            }
        }
    }

    #[test]
    fn network_forward_on_tape_matches_net_and_param_grads_match_fd() {
        // Scalar net V on the tape: loss = V(x). Parameter gradients must
        // match finite differences of FeedforwardNet::forward.
        let net = FeedforwardNet::with_shape(3, &[5], 1, Activation::Tanh, 31).expect("net");
        let x0 = dvec(&[0.2, -0.6, 0.4]);

        let mut tape = Tape::new();
        let w0 = tape.matrix(net.layers()[0].weight.clone());
        let b0 = tape.vector(net.layers()[0].bias.clone());
        let w1 = tape.matrix(net.layers()[1].weight.clone());
        let b1 = tape.vector(net.layers()[1].bias.clone());
        let x = tape.vector(x0.clone());
        let z0 = tape.mat_vec(w0, x);
        let z0 = tape.add_v(z0, b0);
        let a0 = tape.map_act(z0, Activation::Tanh);
        let z1 = tape.mat_vec(w1, a0);
        let z1 = tape.add_v(z1, b1);
        let v = tape.index_s(z1, 0);
        assert!((tape.value_s(v) - net.forward(&x0).unwrap()[0]).abs() < 1e-14);

        let grads = tape.backward(v).expect("backward");
        let gw0 = grads.matrix(w0).expect("weight grad");
        let h = 1e-6;
        for r in 0..2 {
            for c in 0..3 {
                let mut pert = net.clone();
                pert.layers_mut()[0].weight[(r, c)] += h;
                let up = pert.forward(&x0).unwrap()[0];
                pert.layers_mut()[0].weight[(r, c)] -= 2.0 * h;
                let dn = pert.forward(&x0).unwrap()[0];
                let fd = (up - dn) / (2.0 * h);
                assert!(
                    (gw0[(r, c)] - fd).abs() < 1e-7 * (1.0 + fd.abs()),
                    "w0[{r},{c}]: {} vs {fd}",
                    gw0[(r, c)]
                );
            }
        }
    }

    #[test]
    fn gradient_graph_param_grads_match_fd_of_input_gradient() {
        // Build grad_x V analytically on the tape, take loss = grad_x V · f
        // for a constant f, and check the PARAMETER gradients against finite
        // differences of FeedforwardNet::input_gradient. This is the path
        // training uses for the decrease condition.
        let net = FeedforwardNet::with_shape(2, &[7], 1, Activation::Tanh, 13).expect("net");
        let x0 = dvec(&[0.4, -0.3]);
        let f0 = dvec(&[0.9, -1.4]);

        let mut tape = Tape::new();
        let w0 = tape.matrix(net.layers()[0].weight.clone());
        let b0 = tape.vector(net.layers()[0].bias.clone());
        let w1 = tape.matrix(net.layers()[1].weight.clone());
        let x = tape.vector(x0.clone());
        // Forward pre-activation.
        let z0 = tape.mat_vec(w0, x);
        let z0 = tape.add_v(z0, b0);
        // Gradient chain: v = theta_1 row, v = v ∘ phi'(z0), v = theta_0ᵀ v.
        let vrow = tape.row_to_vec(w1, 0);
        let slopes = tape.map_act_deriv(z0, Activation::Tanh);
        let vh = tape.had_v(vrow, slopes);
        let gradx = tape.mat_t_vec(w0, vh);
        let fconst = tape.vector(f0.clone());
        let loss = tape.dot(gradx, fconst);

        let want = net.input_gradient(&x0).unwrap().dot(&f0);
        assert!((tape.value_s(loss) - want).abs() < 1e-13);

        let grads = tape.backward(loss).expect("backward");
        let h = 1e-5;
        // Check every parameter tensor against central differences.
        let gw0 = grads.matrix(w0).expect("w0 grad");
        let gb0 = grads.vector(b0).expect("b0 grad");
        let gw1 = grads.matrix(w1).expect("w1 grad");
        let fd_loss = |pert: &FeedforwardNet| pert.input_gradient(&x0).unwrap().dot(&f0);
        for r in 0..7 {
            for c in 0..2 {
                let mut p = net.clone();
                p.layers_mut()[0].weight[(r, c)] += h;
                let up = fd_loss(&p);
                p.layers_mut()[0].weight[(r, c)] -= 2.0 * h;
                let dn = fd_loss(&p);
                let fd = (up - dn) / (2.0 * h);
                assert!(
                    (gw0[(r, c)] - fd).abs() < 1e-4 * (1.0 + fd.abs()),
                    "w0[{r},{c}]: {} vs {fd}",
                    gw0[(r, c)]
                );
            }
            let mut p = net.clone();
            p.layers_mut()[0].bias[r] += h;
            let up = fd_loss(&p);
            p.layers_mut()[0].bias[r] -= 2.0 * h;
            let dn = fd_loss(&p);
            let fd = (up - dn) / (2.0 * h);
            assert!(
                (gb0[r] - fd).abs() < 1e-4 * (1.0 + fd.abs()),
                "b0[{r}]: {} vs {fd}",
                gb0[r]
            );
            let mut p = net.clone();
            p.layers_mut()[1].weight[(0, r)] += h;
            let up = fd_loss(&p);
            p.layers_mut()[1].weight[(0, r)] -= 2.0 * h;
            let dn = fd_loss(&p);
            let fd = (up - dn) / (2.0 * h);
            assert!(
                (gw1[(0, r)] - fd).abs() < 1e-4 * (1.0 + fd.abs()),
                "w1[0,{r}]: {} vs {fd}",
                gw1[(0, r)]
            );
        }
    }

    #[test]
    fn last_layer_gradient_is_hidden_activation() {
        // V = theta_1 · phi(theta_0 x + b_0) + b_1: dV/dtheta_1 = phi(z)ᵀ.
        let net = FeedforwardNet::with_shape(2, &[4], 1, Activation::Softplus, 99).expect("net");
        let x0 = dvec(&[0.5, 0.25]);
        let mut tape = Tape::new();
        let w0 = tape.matrix(net.layers()[0].weight.clone());
        let b0 = tape.vector(net.layers()[0].bias.clone());
        let w1 = tape.matrix(net.layers()[1].weight.clone());
        let b1 = tape.vector(net.layers()[1].bias.clone());
        let x = tape.vector(x0.clone());
        let z0 = tape.mat_vec(w0, x);
        let z0 = tape.add_v(z0, b0);
        let a0 = tape.map_act(z0, Activation::Softplus);
        let z1 = tape.mat_vec(w1, a0);
        let z1 = tape.add_v(z1, b1);
        let v = tape.index_s(z1, 0);
        let grads = tape.backward(v).expect("backward");
        let gw1 = grads.matrix(w1).expect("grad");
        let hidden = tape.value_v(a0);
        for c in 0..4 {
            assert!((gw1[(0, c)] - hidden[c]).abs() < 1e-15);
        }
        // Bias gradient of the output layer is exactly one.
        assert_eq!(grads.vector(b1).expect("grad")[0], 1.0);
    }

    #[test]
    fn black_box_leg_pushes_gradient_through_jacobian() {
        let jac = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, -0.5, 0.25]);
        let mut tape = Tape::new();
        let u = tape.vector(dvec(&[0.3, -0.1]));
        let f = tape.black_box_v(u, dvec(&[0.7, 0.2]), Some(jac.clone()));
        let w = tape.vector(dvec(&[2.0, -3.0]));
        let loss = tape.dot(f, w);
        let grads = tape.backward(loss).expect("backward");
        let want = jac.transpose() * dvec(&[2.0, -3.0]);
        assert!((grads.vector(u).expect("grad") - want).norm() < 1e-14);
    }

    #[test]
    fn black_box_leg_without_jacobian_errors_when_gradient_arrives() {
        let mut tape = Tape::new();
        let u = tape.vector(dvec(&[0.3]));
        let f = tape.black_box_v(u, dvec(&[0.7]), None);
        let w = tape.vector(dvec(&[1.0]));
        let loss = tape.dot(f, w);
        assert!(matches!(tape.backward(loss), Err(Error::MissingJacobian)));
    }

    #[test]
    fn black_box_leg_without_jacobian_is_fine_when_unreached() {
        // The leg exists on the tape but the loss does not depend on it.
        let mut tape = Tape::new();
        let u = tape.vector(dvec(&[0.3]));
        let _f = tape.black_box_v(u, dvec(&[0.7]), None);
        let a = tape.scalar(2.0);
        let loss = tape.mul_s(a, a);
        let grads = tape.backward(loss).expect("no gradient flows to the leg");
        assert_eq!(grads.scalar(a), 4.0);
    }

    #[test]
    fn clamp_passes_gradient_only_in_the_interior() {
        let lo = dvec(&[-1.0, -1.0, -1.0]);
        let hi = dvec(&[1.0, 1.0, 1.0]);
        let mut tape = Tape::new();
        let u = tape.vector(dvec(&[0.5, 3.0, -2.0]));
        let c = tape.clamp_v(u, &lo, &hi);
        assert_eq!(tape.value_v(c).as_slice(), &[0.5, 1.0, -1.0]);
        let w = tape.vector(dvec(&[1.0, 1.0, 1.0]));
        let loss = tape.dot(c, w);
        let grads = tape.backward(loss).expect("backward");
        let gu = grads.vector(u).expect("grad");
        assert_eq!(gu.as_slice(), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn logdet_gradient_matches_symmetric_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = DMatrix::from_fn(4, 4, |_, _| rng.gen_range(-1.0..1.0));
        let m0 = &a * a.transpose() + DMatrix::identity(4, 4);

        let mut tape = Tape::new();
        let m = tape.matrix(m0.clone());
        let ld = tape.logdet(m).expect("positive definite");
        let grads = tape.backward(ld).expect("backward");
        let gm = grads.matrix(m).expect("grad");

        let h = 1e-6;
        let probe = |delta: &DMatrix<f64>| {
            let mut tp = Tape::new();
            let mv = tp.matrix(&m0 + delta);
            let r = tp.logdet(mv).expect("still positive definite");
            tp.value_s(r)
        };
        // Perturb along symmetric directions E_ij + E_ji (the factorization
        // reads the lower triangle only, so one-sided probes are meaningless).
        for i in 0..4 {
            for j in 0..=i {
                let mut dir = DMatrix::zeros(4, 4);
                dir[(i, j)] += h;
                dir[(j, i)] += h;
                let fd = (probe(&dir) - probe(&(-&dir))) / (2.0 * h);
                let got = if i == j {
                    2.0 * gm[(i, i)]
                } else {
                    gm[(i, j)] + gm[(j, i)]
                };
                assert!(
                    (got - fd).abs() < 1e-6 * (1.0 + fd.abs()),
                    "direction ({i},{j}): {got} vs {fd}"
                );
            }
        }
    }

    #[test]
    fn logdet_refuses_indefinite_matrices() {
        let mut tape = Tape::new();
        let m = tape.matrix(DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]));
        assert!(matches!(
            tape.logdet(m),
            Err(Error::NotPositiveDefinite { index: 1, .. })
        ));
    }

    #[test]
    fn min_eig_gradient_matches_symmetric_finite_differences() {
        // Matrix with a well-separated smallest eigenvalue.
        let m0 = DMatrix::from_row_slice(3, 3, &[5.0, 1.0, 0.5, 1.0, 4.0, -0.2, 0.5, -0.2, 1.0]);
        let mut tape = Tape::new();
        let m = tape.matrix(m0.clone());
        let le = tape.min_eig_sym(m);
        let grads = tape.backward(le).expect("backward");
        let gm = grads.matrix(m).expect("grad");

        let h = 1e-6;
        let probe = |delta: &DMatrix<f64>| {
            let mut tp = Tape::new();
            let mv = tp.matrix(&m0 + delta);
            let r = tp.min_eig_sym(mv);
            tp.value_s(r)
        };
        for i in 0..3 {
            for j in 0..=i {
                let mut dir = DMatrix::zeros(3, 3);
                dir[(i, j)] += h;
                dir[(j, i)] += h;
                let fd = (probe(&dir) - probe(&(-&dir))) / (2.0 * h);
                let got = if i == j {
                    2.0 * gm[(i, i)]
                } else {
                    gm[(i, j)] + gm[(j, i)]
                };
                assert!(
                    (got - fd).abs() < 1e-5 * (1.0 + fd.abs()),
                    "direction ({i},{j}): {got} vs {fd}"
                );
            }
        }
    }

    #[test]
    fn assembled_block_matrix_logdet_differentiates_to_theta() {
        // Assemble M = [[2I, -Bᵀ], [-B, 2I]] from a parameter block B and
        // differentiate logdet M in B — the exact pattern of the Lipschitz
        // certificate loss. Oracle: symmetric finite differences.
        let b0 = DMatrix::from_row_slice(2, 2, &[0.3, -0.1, 0.2, 0.4]);
        let eye2 = DMatrix::<f64>::identity(2, 2) * 2.0;

        let build = |tp: &mut Tape, bmat: DMatrix<f64>| {
            let b = tp.matrix(bmat);
            let nb = tp.scale_m(b, -1.0);
            let nbt = tp.mat_trans(nb);
            let c1 = tp.matrix(eye2.clone());
            let c2 = tp.matrix(eye2.clone());
            let m = tp.assemble(4, 4, vec![(0, 0, c1), (2, 2, c2), (2, 0, nb), (0, 2, nbt)]);
            (b, m)
        };

        let mut tape = Tape::new();
        let (b, m) = build(&mut tape, b0.clone());
        let ld = tape.logdet(m).expect("positive definite");
        let grads = tape.backward(ld).expect("backward");
        let gb = grads.matrix(b).expect("grad");

        let h = 1e-6;
        for r in 0..2 {
            for c in 0..2 {
                let probe = |delta: f64| {
                    let mut tp = Tape::new();
                    let mut bp = b0.clone();
                    bp[(r, c)] += delta;
                    let (_, mv) = build(&mut tp, bp);
                    let x = tp.logdet(mv).expect("positive definite");
                    tp.value_s(x)
                };
                let fd = (probe(h) - probe(-h)) / (2.0 * h);
                assert!(
                    (gb[(r, c)] - fd).abs() < 1e-6 * (1.0 + fd.abs()),
                    "B[{r},{c}]: {} vs {fd}",
                    gb[(r, c)]
                );
            }
        }
    }

    #[test]
    fn diag_and_square_build_trainable_multipliers() {
        // Lambda = diag(l ∘ l): d logdet(diag(l∘l) + I)/dl via tape vs
        // closed form 2 l_i / (l_i^2 + 1).
        let l0 = dvec(&[0.6, -1.2, 0.9]);
        let mut tape = Tape::new();
        let l = tape.vector(l0.clone());
        let lam = tape.square_v(l);
        let lam_m = tape.diag_m(lam);
        let eye = tape.matrix(DMatrix::identity(3, 3));
        let m = tape.add_m(lam_m, eye);
        let ld = tape.logdet(m).expect("positive definite");
        let grads = tape.backward(ld).expect("backward");
        let gl = grads.vector(l).expect("grad");
        for i in 0..3 {
            let want = 2.0 * l0[i] / (l0[i] * l0[i] + 1.0);
            assert!((gl[i] - want).abs() < 1e-12, "{} vs {want}", gl[i]);
        }
    }

    #[test]
    fn matmul_and_transpose_match_finite_differences() {
        // y = sum of entries of (A Bᵀ) via dot with ones: grads against FD.
        let a0 = DMatrix::from_row_slice(2, 3, &[0.2, -0.5, 0.8, 1.1, 0.3, -0.9]);
        let b0 = DMatrix::from_row_slice(2, 3, &[0.7, 0.1, -0.4, -0.2, 0.6, 0.5]);
        let build = |tp: &mut Tape, am: DMatrix<f64>, bm: DMatrix<f64>| {
            let a = tp.matrix(am);
            let b = tp.matrix(bm);
            let bt = tp.mat_trans(b);
            let prod = tp.mat_mul(a, bt);
            let ones = tp.vector(dvec(&[1.0, 1.0]));
            let col = tp.mat_vec(prod, ones);
            let ones2 = tp.vector(dvec(&[1.0, 1.0]));
            let s = tp.dot(col, ones2);
            (a, b, s)
        };
        let mut tape = Tape::new();
        let (a, b, root) = build(&mut tape, a0.clone(), b0.clone());
        let grads = tape.backward(root).expect("backward");
        let h = 1e-6;
        for r in 0..2 {
            for c in 0..3 {
                for which in 0..2 {
                    let probe = |delta: f64| {
                        let mut tp = Tape::new();
                        let mut pa = a0.clone();
                        let mut pb = b0.clone();
                        if which == 0 {
                            pa[(r, c)] += delta;
                        } else {
                            pb[(r, c)] += delta;
                        }
                        let (_, _, s) = build(&mut tp, pa, pb);
                        tp.value_s(s)
                    };
                    let fd = (probe(h) - probe(-h)) / (2.0 * h);
                    let got = if which == 0 {
                        grads.matrix(a).expect("grad")[(r, c)]
                    } else {
                        grads.matrix(b).expect("grad")[(r, c)]
                    };
                    assert!(
                        (got - fd).abs() < 1e-6 * (1.0 + fd.abs()),
                        "mat {which} [{r},{c}]: {got} vs {fd}"
                    );
                }
            }
        }
    }

    #[test]
    fn overlapping_assemble_blocks_add() {
        let mut tape = Tape::new();
        let a = tape.matrix(DMatrix::from_row_slice(1, 1, &[2.0]));
        let b = tape.matrix(DMatrix::from_row_slice(1, 1, &[3.0]));
        let m = tape.assemble(1, 1, vec![(0, 0, a), (0, 0, b)]);
        assert_eq!(tape.value_m(m)[(0, 0)], 5.0);
        let ld = tape.logdet(m).expect("positive");
        let grads = tape.backward(ld).expect("backward");
        // d ln(a+b) / da = d ln(a+b) / db = 1/5.
        assert!((grads.matrix(a).expect("ga")[(0, 0)] - 0.2).abs() < 1e-15);
        assert!((grads.matrix(b).expect("gb")[(0, 0)] - 0.2).abs() < 1e-15);
    }
}