//! Matrix-valued reverse-mode tape for differentiating through filter steps.
//!
//! Every node holds a dense matrix; scalars are `1 × 1`. Network evaluations
//! are single nodes whose backward pass delegates to
//! [`crate::neuralnet::backward_batch`].

use nalgebra::{Cholesky, DMatrix, Dyn};
use rand::Rng;

use super::{sigmoid, softplus, ModelBundle, NetId, NOISE_FLOOR};
use crate::enkf::factor_innovation;
use crate::error::{Error, Result};
use crate::neuralnet::{backward_batch, forward_batch, GradTape, MlpGrads};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Leaf,
    Mlp {
        net: NetId,
        input: Var,
        tape: GradTape,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Scale(Var, f64),
    MatMul(Var, Var),
    /// `aᵀ b`
    TrMul(Var, Var),
    Transpose(Var),
    HCat(Vec<Var>),
    /// Last `len` columns of a node.
    Tail(Var, usize),
    /// Row-wise mean removal.
    Center(Var),
    /// Column means as a `1 × d` row.
    ColMean(Var),
    /// `s + diag(r)` for a `1 × m` row `r`.
    AddDiag(Var, Var),
    SoftplusEps(Var),
    /// `S⁻¹ B` for symmetric positive-definite `S`.
    Solve {
        s: Var,
        b: Var,
        chol: Cholesky<f64, Dyn>,
    },
    /// Mean squared difference from a constant target.
    MseTo(Var, DMatrix<f64>),
    WeightedSum(Vec<(Var, f64)>),
}

struct Node {
    value: DMatrix<f64>,
    op: Op,
}

/// Gradients for the four networks of a bundle.
#[derive(Debug, Clone, PartialEq)]
pub struct BundleGrads {
    pub transition: MlpGrads,
    pub observation: MlpGrads,
    pub sensor: MlpGrads,
    pub noise: MlpGrads,
}

impl BundleGrads {
    pub fn zeros_like(b: &ModelBundle) -> Self {
        Self {
            transition: MlpGrads::zeros_like(&b.transition),
            observation: MlpGrads::zeros_like(&b.observation),
            sensor: MlpGrads::zeros_like(&b.sensor),
            noise: MlpGrads::zeros_like(&b.noise),
        }
    }

    pub fn get(&self, id: NetId) -> &MlpGrads {
        match id {
            NetId::Transition => &self.transition,
            NetId::Observation => &self.observation,
            NetId::Sensor => &self.sensor,
            NetId::Noise => &self.noise,
        }
    }

    pub fn get_mut(&mut self, id: NetId) -> &mut MlpGrads {
        match id {
            NetId::Transition => &mut self.transition,
            NetId::Observation => &mut self.observation,
            NetId::Sensor => &mut self.sensor,
            NetId::Noise => &mut self.noise,
        }
    }

    pub fn accumulate(&mut self, other: &BundleGrads) {
        for id in NetId::ALL {
            self.get_mut(id).accumulate(other.get(id));
        }
    }

    pub fn scale(&mut self, k: f64) {
        for id in NetId::ALL {
            self.get_mut(id).scale(k);
        }
    }

    pub fn norm(&self) -> f64 {
        NetId::ALL
            .iter()
            .map(|id| self.get(*id).norm_squared())
            .sum::<f64>()
            .sqrt()
    }
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: DMatrix<f64>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &DMatrix<f64> {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[(0, 0)]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: DMatrix<f64>) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Stochastic network evaluation with the bundle's dropout rate.
    pub fn mlp(
        &mut self,
        bundle: &ModelBundle,
        net: NetId,
        input: Var,
        rng: &mut impl Rng,
    ) -> Result<Var> {
        let (value, tape) = forward_batch(
            bundle.net(net),
            self.value(input),
            bundle.arch.dropout(net),
            rng,
        )?;
        Ok(self.push(value, Op::Mlp { net, input, tape }))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        let (x, y) = (self.value(a).shape(), self.value(b).shape());
        if x != y {
            return Err(Error::shape(
                format!("{what} operand {x:?}"),
                format!("{y:?}"),
            ));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let v = self.value(a) + self.value(b);
        Ok(self.push(v, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let v = self.value(a) - self.value(b);
        Ok(self.push(v, Op::Sub(a, b)))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let v = self.value(a) * k;
        self.push(v, Op::Scale(a, k))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.value(a).ncols() != self.value(b).nrows() {
            return Err(Error::shape(
                format!("matmul inner dim {}", self.value(a).ncols()),
                self.value(b).nrows(),
            ));
        }
        let v = self.value(a) * self.value(b);
        Ok(self.push(v, Op::MatMul(a, b)))
    }

    pub fn tr_mul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.value(a).nrows() != self.value(b).nrows() {
            return Err(Error::shape(
                format!("tr_mul rows {}", self.value(a).nrows()),
                self.value(b).nrows(),
            ));
        }
        let v = self.value(a).tr_mul(self.value(b));
        Ok(self.push(v, Op::TrMul(a, b)))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.value(a).transpose();
        self.push(v, Op::Transpose(a))
    }

    pub fn hcat(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = self.value(parts[0]).nrows();
        if parts.iter().any(|p| self.value(*p).nrows() != rows) {
            return Err(Error::shape(
                format!("hcat with {rows} rows"),
                "ragged parts",
            ));
        }
        let cols: usize = parts.iter().map(|p| self.value(*p).ncols()).sum();
        let mut v = DMatrix::zeros(rows, cols);
        let mut c = 0;
        for p in parts {
            let m = self.value(*p);
            v.columns_mut(c, m.ncols()).copy_from(m);
            c += m.ncols();
        }
        Ok(self.push(v, Op::HCat(parts.to_vec())))
    }

    pub fn tail(&mut self, a: Var, len: usize) -> Result<Var> {
        let m = self.value(a);
        if len > m.ncols() {
            return Err(Error::shape(format!("at least {len} columns"), m.ncols()));
        }
        let v = m.columns(m.ncols() - len, len).into_owned();
        Ok(self.push(v, Op::Tail(a, len)))
    }

    pub fn center(&mut self, a: Var) -> Var {
        let m = self.value(a);
        let mean = m.row_mean();
        let mut v = m.clone();
        for mut r in v.row_iter_mut() {
            r -= &mean;
        }
        self.push(v, Op::Center(a))
    }

    pub fn col_mean(&mut self, a: Var) -> Var {
        let v = DMatrix::from_row_slice(
            1,
            self.value(a).ncols(),
            self.value(a).row_mean().as_slice(),
        );
        self.push(v, Op::ColMean(a))
    }

    pub fn add_diag(&mut self, s: Var, r: Var) -> Result<Var> {
        let (sm, rm) = (self.value(s), self.value(r));
        if sm.nrows() != sm.ncols() || rm.nrows() != 1 || rm.ncols() != sm.nrows() {
            return Err(Error::shape(
                format!("square matrix and 1x{} row", sm.nrows()),
                format!("{:?} and {:?}", sm.shape(), rm.shape()),
            ));
        }
        let mut v = sm.clone();
        for i in 0..v.nrows() {
            v[(i, i)] += rm[(0, i)];
        }
        Ok(self.push(v, Op::AddDiag(s, r)))
    }

    /// `NOISE_FLOOR + softplus(a)`, elementwise.
    pub fn softplus_eps(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| NOISE_FLOOR + softplus(x));
        self.push(v, Op::SoftplusEps(a))
    }

    pub fn solve(&mut self, s: Var, b: Var) -> Result<Var> {
        if self.value(s).nrows() != self.value(b).nrows() {
            return Err(Error::shape(
                format!("right-hand side with {} rows", self.value(s).nrows()),
                self.value(b).nrows(),
            ));
        }
        let chol = factor_innovation(self.value(s))?;
        let v = chol.solve(self.value(b));
        Ok(self.push(v, Op::Solve { s, b, chol }))
    }

    pub fn mse_to(&mut self, a: Var, target: DMatrix<f64>) -> Result<Var> {
        if self.value(a).shape() != target.shape() {
            return Err(Error::shape(
                format!("{:?}", target.shape()),
                format!("{:?}", self.value(a).shape()),
            ));
        }
        let n = target.len() as f64;
        let v = (self.value(a) - &target).norm_squared() / n;
        Ok(self.push(DMatrix::from_element(1, 1, v), Op::MseTo(a, target)))
    }

    pub fn weighted_sum(&mut self, terms: &[(Var, f64)]) -> Var {
        let v: f64 = terms.iter().map(|(t, w)| w * self.scalar(*t)).sum();
        self.push(
            DMatrix::from_element(1, 1, v),
            Op::WeightedSum(terms.to_vec()),
        )
    }

    /// Gradients of the scalar `root` with respect to every network parameter.
    pub fn backward(&self, root: Var, bundle: &ModelBundle) -> Result<BundleGrads> {
        if self.value(root).shape() != (1, 1) {
            return Err(Error::shape(
                "scalar root",
                format!("{:?}", self.value(root).shape()),
            ));
        }
        let mut grads = BundleGrads::zeros_like(bundle);
        let mut adj: Vec<Option<DMatrix<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        adj[root.0] = Some(DMatrix::from_element(1, 1, 1.0));

        fn acc(adj: &mut [Option<DMatrix<f64>>], v: Var, g: DMatrix<f64>) {
            match &mut adj[v.0] {
                Some(x) => *x += g,
                slot => *slot = Some(g),
            }
        }

        for i in (0..=root.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {}
                Op::Mlp { net, input, tape } => {
                    let (pg, dx) = backward_batch(bundle.net(*net), tape, &g)?;
                    grads.get_mut(*net).accumulate(&pg);
                    acc(&mut adj, *input, dx);
                }
                Op::Add(a, b) => {
                    acc(&mut adj, *a, g.clone());
                    acc(&mut adj, *b, g);
                }
                Op::Sub(a, b) => {
                    acc(&mut adj, *a, g.clone());
                    acc(&mut adj, *b, -g);
                }
                Op::Scale(a, k) => acc(&mut adj, *a, g * *k),
                Op::MatMul(a, b) => {
                    let da = &g * self.value(*b).transpose();
                    let db = self.value(*a).tr_mul(&g);
                    acc(&mut adj, *a, da);
                    acc(&mut adj, *b, db);
                }
                Op::TrMul(a, b) => {
                    let da = self.value(*b) * g.transpose();
                    let db = self.value(*a) * &g;
                    acc(&mut adj, *a, da);
                    acc(&mut adj, *b, db);
                }
                Op::Transpose(a) => acc(&mut adj, *a, g.transpose()),
                Op::HCat(parts) => {
                    let mut c = 0;
                    for p in parts {
                        let w = self.value(*p).ncols();
                        acc(&mut adj, *p, g.columns(c, w).into_owned());
                        c += w;
                    }
                }
                Op::Tail(a, len) => {
                    let src = self.value(*a);
                    let mut d = DMatrix::zeros(src.nrows(), src.ncols());
                    d.columns_mut(src.ncols() - len, *len).copy_from(&g);
                    acc(&mut adj, *a, d);
                }
                Op::Center(a) => {
                    let mean = g.row_mean();
                    let mut d = g;
                    for mut r in d.row_iter_mut() {
                        r -= &mean;
                    }
                    acc(&mut adj, *a, d);
                }
                Op::ColMean(a) => {
                    let rows = self.value(*a).nrows();
                    let d = DMatrix::from_fn(rows, g.ncols(), |_, c| g[(0, c)] / rows as f64);
                    acc(&mut adj, *a, d);
                }
                Op::AddDiag(s, r) => {
                    let dr = DMatrix::from_fn(1, g.ncols(), |_, c| g[(c, c)]);
                    acc(&mut adj, *s, g);
                    acc(&mut adj, *r, dr);
                }
                Op::SoftplusEps(a) => {
                    let d = g.zip_map(self.value(*a), |gi, x| gi * sigmoid(x));
                    acc(&mut adj, *a, d);
                }
                Op::Solve { s, b, chol } => {
                    let db = chol.solve(&g);
                    let ds = -(&db * node.value.transpose());
                    acc(&mut adj, *s, ds);
                    acc(&mut adj, *b, db);
                }
                Op::MseTo(a, target) => {
                    let k = 2.0 * g[(0, 0)] / target.len() as f64;
                    acc(&mut adj, *a, (self.value(*a) - target) * k);
                }
                Op::WeightedSum(terms) => {
                    for (t, w) in terms {
                        acc(&mut adj, *t, DMatrix::from_element(1, 1, w * g[(0, 0)]));
                    }
                }
            }
        }
        Ok(grads)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::Architecture;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn mat(r: usize, c: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
    }

    // Differentiates a scalar function of the noise network's output through
    // every op; the noise net is the only parameterized node.
    fn check_ops(build: impl Fn(&mut Graph, Var) -> Var) {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let arch = Architecture {
            noise_hidden: vec![6],
            ..Architecture::default()
        };
        let b = ModelBundle::new(arch, &mut rng).unwrap();
        let x = mat(3, 14, 5);
        let eval = |b: &ModelBundle| {
            let mut g = Graph::new();
            let xi = g.leaf(x.clone());
            let y = g
                .mlp(b, NetId::Noise, xi, &mut ChaCha8Rng::seed_from_u64(1))
                .unwrap();
            let root = build(&mut g, y);
            (g, root)
        };
        let (g, root) = eval(&b);
        let grads = g.backward(root, &b).unwrap().noise.to_flat();
        let flat = b.noise.to_flat();
        let h = 1e-6;
        for k in (0..flat.len()).step_by(7) {
            let mut plus = b.clone();
            let mut minus = b.clone();
            let mut p = flat.clone();
            p[k] += h;
            plus.noise.set_flat(&p).unwrap();
            p[k] -= 2.0 * h;
            minus.noise.set_flat(&p).unwrap();
            let (gp, rp) = eval(&plus);
            let (gm, rm) = eval(&minus);
            let fd = (gp.scalar(rp) - gm.scalar(rm)) / (2.0 * h);
            let err = (fd - grads[k]).abs() / (fd.abs().max(grads[k].abs()).max(1e-6));
            assert!(err < 1e-5, "param {k}: fd {fd} vs {}", grads[k]);
        }
    }

    #[test]
    fn elementwise_and_reductions() {
        check_ops(|g, y| {
            let c = g.center(y);
            let m = g.col_mean(y);
            let sp = g.softplus_eps(m);
            let s = g.scale(c, 0.5);
            let t = g.leaf(mat(3, 14, 2));
            let d = g.sub(s, t).unwrap();
            let e = g.add(d, y).unwrap();
            let l1 = g.mse_to(e, mat(3, 14, 3)).unwrap();
            let l2 = g.mse_to(sp, mat(1, 14, 4)).unwrap();
            g.weighted_sum(&[(l1, 1.0), (l2, 0.3)])
        });
    }

    #[test]
    fn products_and_layout() {
        check_ops(|g, y| {
            let t = g.tail(y, 4).unwrap();
            let cat = g.hcat(&[y, t]).unwrap();
            let tr = g.transpose(cat);
            let p = g.matmul(cat, tr).unwrap();
            let q = g.tr_mul(y, cat).unwrap();
            let l1 = g.mse_to(p, mat(3, 3, 7)).unwrap();
            let l2 = g.mse_to(q, mat(14, 18, 8)).unwrap();
            g.weighted_sum(&[(l1, 1.0), (l2, 1.0)])
        });
    }

    #[test]
    fn solve_and_diagonal() {
        check_ops(|g, y| {
            let c = g.center(y);
            let s0 = g.tr_mul(c, c).unwrap();
            let m = g.col_mean(y);
            let r = g.softplus_eps(m);
            let s = g.add_diag(s0, r).unwrap();
            let rhs = g.leaf(mat(14, 2, 9));
            let z = g.solve(s, rhs).unwrap();
            g.mse_to(z, mat(14, 2, 10)).unwrap()
        });
    }

    #[test]
    fn shape_errors() {
        let mut g = Graph::new();
        let a = g.leaf(DMatrix::zeros(2, 3));
        let b = g.leaf(DMatrix::zeros(3, 3));
        assert!(g.add(a, b).is_err());
        assert!(g.matmul(a, a).is_err());
        assert!(g.mse_to(a, DMatrix::zeros(1, 1)).is_err());
        let b2 = ModelBundle::new(
            Architecture::default().with_hidden_width(32),
            &mut ChaCha8Rng::seed_from_u64(0),
        )
        .unwrap();
        assert!(g.backward(a, &b2).is_err());
    }
}
