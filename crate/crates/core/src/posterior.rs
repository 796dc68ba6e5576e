//! Sequential Gaussian-process conditioning.
//!
//! Two computation paths produce identical posteriors (a fact the tests
//! enforce at 1e-8):
//!
//! * dense path — textbook formulas on the history Gram matrix
//!   `μ(x) = k_x᷉ᵀ(K + λI)⁻¹Y`, used for kernels without sparse structure;
//! * factored path — for kernels with a sparse precision `Q̂` and projection
//!   `P_r`, everything is expressed through `M = τ²λQ̂ + ẼẼᵀ` with
//!   `Ẽ = P_rᵀE` the projected hat evaluations of the history. `M⁻¹` is
//!   applied via the Woodbury identity around `S = τ²λQ̂`, so the per-round
//!   work is sparse solves plus a `t×t` factorization, never an `N×N` dense
//!   inverse.
//!
//! The caches are split by λ-dependence: hat evaluations, `U = Q̂⁻¹Ẽ`, and
//! the Gram pieces do not depend on the regularizer λ and grow one column
//! per observation, while the small `t×t` factorization and the mean vector
//! are rebuilt whenever λ or the history changes (λ follows a per-round
//! schedule in the optimization loop).

use crate::error::{Error, Result};
use crate::graph::GraphPoint;
use crate::kernels::KernelModel;
use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use std::sync::Arc;

#[derive(Clone)]
struct DenseCache {
    /// `k(node_i, x_j)` for the whole mesh, one column per observation.
    cross: DMatrix<f64>,
    /// Gram matrix of the history under the kernel.
    gram: DMatrix<f64>,
    /// Cholesky of `K + λI` plus its explicit lower factor.
    chol: Option<(Cholesky<f64, Dyn>, DMatrix<f64>)>,
    /// `(K + λI)⁻¹ Y`.
    weights: DVector<f64>,
}

#[derive(Clone)]
struct FactoredCache {
    /// Columns `P_rᵀ e(x_j)`.
    e_tilde: DMatrix<f64>,
    /// `U = Q̂⁻¹ Ẽ` (λ-independent).
    u: DMatrix<f64>,
    /// `P_r U`.
    pu: DMatrix<f64>,
    /// `G = Ẽᵀ U`; the history Gram is `G/τ²`.
    g: DMatrix<f64>,
    /// Cholesky of the Woodbury middle matrix `I + G/(τ²λ)`.
    mid: Option<(Cholesky<f64, Dyn>, DMatrix<f64>)>,
    /// `z = M⁻¹ Ẽ Y`; posterior mean over nodes is `P_r z`.
    z: DVector<f64>,
}

#[derive(Clone)]
enum Cache {
    Dense(DenseCache),
    Factored(FactoredCache),
}

/// GP posterior after conditioning on a history of observations.
/// A value type: [`PosteriorState::condition`] returns a new state.
#[derive(Clone)]
pub struct PosteriorState {
    kernel: Arc<KernelModel>,
    lambda: f64,
    points: Vec<GraphPoint>,
    y: Vec<f64>,
    cache: Cache,
}

impl PosteriorState {
    pub fn new(kernel: Arc<KernelModel>, lambda: f64) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::Config(format!("lambda must be positive, got {lambda}")));
        }
        let n = kernel.mesh().n_nodes();
        let cache = if kernel.has_sparse_precision() {
            Cache::Factored(FactoredCache {
                e_tilde: DMatrix::zeros(n, 0),
                u: DMatrix::zeros(n, 0),
                pu: DMatrix::zeros(n, 0),
                g: DMatrix::zeros(0, 0),
                mid: None,
                z: DVector::zeros(n),
            })
        } else {
            Cache::Dense(DenseCache {
                cross: DMatrix::zeros(n, 0),
                gram: DMatrix::zeros(0, 0),
                chol: None,
                weights: DVector::zeros(0),
            })
        };
        Ok(Self { kernel, lambda, points: Vec::new(), y: Vec::new(), cache })
    }

    pub fn kernel(&self) -> &Arc<KernelModel> {
        &self.kernel
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[GraphPoint] {
        &self.points
    }

    pub fn observations(&self) -> &[f64] {
        &self.y
    }

    /// Gram matrix of the realized history under the kernel.
    pub fn history_gram(&self) -> DMatrix<f64> {
        match &self.cache {
            Cache::Dense(c) => c.gram.clone(),
            Cache::Factored(c) => {
                let tau2 = self.kernel.tau2().expect("factored cache implies precision form");
                &c.g / tau2
            }
        }
    }

    /// Returns a new state conditioned on one more observation.
    pub fn condition(&self, x: GraphPoint, y: f64) -> Result<Self> {
        if !y.is_finite() {
            return Err(Error::Config(format!("non-finite observation {y}")));
        }
        let mut next = self.clone();
        next.points.push(x);
        next.y.push(y);
        match &mut next.cache {
            Cache::Dense(c) => {
                let t = next.points.len();
                let cross_new = next.kernel.cross_nodes(&x);
                c.cross = grow_cols(&c.cross, cross_new.as_slice());
                let mut row = Vec::with_capacity(t);
                for p in &next.points[..t - 1] {
                    row.push(next.kernel.k(p, &x));
                }
                row.push(next.kernel.k(&x, &x));
                c.gram = grow_sym(&c.gram, &row);
            }
            Cache::Factored(c) => {
                let n = next.kernel.mesh().n_nodes();
                let hat = next.kernel.mesh().eval_hat_basis(&x);
                let mut e = DVector::zeros(n);
                for &(i, w) in &hat {
                    e[i.0] = w;
                }
                let e_new = next.kernel.project_t(&e);
                let u_new = next
                    .kernel
                    .precision_solve(&e_new)
                    .expect("factored cache implies precision form");
                let pu_new = next.kernel.project(&u_new);
                // New Gram row: G[j, t] = ẽ_jᵀ u_new (includes j = t).
                let t = next.points.len();
                let mut row = Vec::with_capacity(t);
                for j in 0..t - 1 {
                    row.push(c.e_tilde.column(j).dot(&u_new));
                }
                row.push(e_new.dot(&u_new));
                c.e_tilde = grow_cols(&c.e_tilde, e_new.as_slice());
                c.u = grow_cols(&c.u, u_new.as_slice());
                c.pu = grow_cols(&c.pu, pu_new.as_slice());
                c.g = grow_sym(&c.g, &row);
            }
        }
        next.refresh()?;
        Ok(next)
    }

    /// Returns this state under a different regularizer λ (schedules change
    /// λ every round; the λ-independent caches are reused).
    pub fn with_lambda(&self, lambda: f64) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::Config(format!("lambda must be positive, got {lambda}")));
        }
        let mut next = self.clone();
        next.lambda = lambda;
        next.refresh()?;
        Ok(next)
    }

    /// Rebuilds the λ-dependent cache pieces.
    fn refresh(&mut self) -> Result<()> {
        let t = self.points.len();
        let yv = DVector::from_column_slice(&self.y);
        match &mut self.cache {
            Cache::Dense(c) => {
                if t == 0 {
                    c.chol = None;
                    c.weights = DVector::zeros(0);
                    return Ok(());
                }
                let mut reg = c.gram.clone();
                for i in 0..t {
                    reg[(i, i)] += self.lambda;
                }
                let chol = Cholesky::new(reg).ok_or_else(|| {
                    Error::Factorization("history Gram plus lambda is not positive definite".into())
                })?;
                let l = chol.l();
                c.weights = chol.solve(&yv);
                c.chol = Some((chol, l));
            }
            Cache::Factored(c) => {
                if t == 0 {
                    c.mid = None;
                    c.z = DVector::zeros(c.z.len());
                    return Ok(());
                }
                let tau2 = self.kernel.tau2().expect("factored cache implies precision form");
                let cscale = tau2 * self.lambda;
                let mut mid = &c.g / cscale;
                for i in 0..t {
                    mid[(i, i)] += 1.0;
                }
                let chol = Cholesky::new(mid).ok_or_else(|| {
                    Error::Factorization("Woodbury middle matrix is not positive definite".into())
                })?;
                let l = chol.l();
                // z = (1/c)·U·(y − mid⁻¹(G y)/c)
                let gy = &c.g * &yv;
                let w = chol.solve(&gy);
                c.z = (&c.u * (yv - w / cscale)) / cscale;
                c.mid = Some((chol, l));
            }
        }
        Ok(())
    }

    /// Posterior mean at one point.
    pub fn mean_at(&self, x: &GraphPoint) -> f64 {
        if self.points.is_empty() {
            return 0.0;
        }
        match &self.cache {
            Cache::Dense(c) => {
                let kx = self.point_cross(x);
                kx.dot(&c.weights)
            }
            Cache::Factored(c) => {
                let r = self.point_projected_hat(x);
                r.dot(&c.z)
            }
        }
    }

    /// Posterior variance at one point.
    pub fn var_at(&self, x: &GraphPoint) -> f64 {
        match &self.cache {
            Cache::Dense(c) => {
                let prior = self.kernel.k(x, x);
                let Some((_, l)) = &c.chol else { return prior };
                let mut kx = self.point_cross(x);
                solve_lower(l, &mut kx);
                prior - kx.norm_squared()
            }
            Cache::Factored(c) => {
                let tau2 = self.kernel.tau2().expect("factored cache implies precision form");
                let cscale = tau2 * self.lambda;
                let r = self.point_projected_hat(x);
                let qr = self.kernel.precision_solve(&r).expect("precision form");
                let prior = r.dot(&qr) / tau2;
                let Some((_, l)) = &c.mid else { return prior };
                let mut ur = c.u.transpose() * &r;
                solve_lower(l, &mut ur);
                prior - self.lambda / (cscale * cscale) * ur.norm_squared()
            }
        }
    }

    /// Posterior mean and variance at every mesh node.
    pub fn mean_var_nodes(&self) -> (DVector<f64>, DVector<f64>) {
        let n = self.kernel.mesh().n_nodes();
        let prior_var = self.kernel.prior_var_nodes();
        match &self.cache {
            Cache::Dense(c) => {
                let Some((_, l)) = &c.chol else { return (DVector::zeros(n), prior_var) };
                let mean = &c.cross * &c.weights;
                let mut x = c.cross.transpose();
                solve_lower_matrix(l, &mut x);
                let var = DVector::from_iterator(
                    n,
                    (0..n).map(|i| prior_var[i] - x.column(i).norm_squared()),
                );
                (mean, var)
            }
            Cache::Factored(c) => {
                let Some((_, l)) = &c.mid else { return (DVector::zeros(n), prior_var) };
                let tau2 = self.kernel.tau2().expect("precision form");
                let cscale = tau2 * self.lambda;
                let mean = self.kernel.project(&c.z);
                let mut x = c.pu.transpose();
                solve_lower_matrix(l, &mut x);
                let factor = self.lambda / (cscale * cscale);
                let var = DVector::from_iterator(
                    n,
                    (0..n).map(|i| prior_var[i] - factor * x.column(i).norm_squared()),
                );
                (mean, var)
            }
        }
    }

    /// Posterior covariance block over a set of points.
    pub fn cov_block(&self, pts: &[GraphPoint]) -> DMatrix<f64> {
        let nodes: Option<Vec<usize>> =
            pts.iter().map(|p| self.kernel.mesh().node_at(p).map(|i| i.0)).collect();
        if let Some(idx) = nodes {
            return self.cov_block_nodes(&idx);
        }
        let m = pts.len();
        match &self.cache {
            Cache::Dense(c) => {
                let mut prior = self.kernel.gram(pts);
                let Some((_, l)) = &c.chol else { return prior };
                let t = self.points.len();
                let mut cx = DMatrix::zeros(t, m);
                for (j, p) in pts.iter().enumerate() {
                    let col = self.point_cross(p);
                    cx.set_column(j, &col);
                }
                solve_lower_matrix(l, &mut cx);
                prior -= cx.transpose() * cx;
                prior
            }
            Cache::Factored(c) => {
                let tau2 = self.kernel.tau2().expect("precision form");
                let cscale = tau2 * self.lambda;
                let rs: Vec<DVector<f64>> =
                    pts.iter().map(|p| self.point_projected_hat(p)).collect();
                let qrs: Vec<DVector<f64>> = rs
                    .iter()
                    .map(|r| self.kernel.precision_solve(r).expect("precision form"))
                    .collect();
                let mut cov = DMatrix::zeros(m, m);
                for i in 0..m {
                    for j in 0..=i {
                        let v = rs[i].dot(&qrs[j]) / tau2;
                        cov[(i, j)] = v;
                        cov[(j, i)] = v;
                    }
                }
                let Some((_, l)) = &c.mid else { return cov };
                let t = self.points.len();
                let mut ux = DMatrix::zeros(t, m);
                for (j, r) in rs.iter().enumerate() {
                    let col = c.u.transpose() * r;
                    ux.set_column(j, &col);
                }
                solve_lower_matrix(l, &mut ux);
                let factor = self.lambda / (cscale * cscale);
                cov -= factor * ux.transpose() * ux;
                cov
            }
        }
    }

    fn cov_block_nodes(&self, idx: &[usize]) -> DMatrix<f64> {
        let m = idx.len();
        let prior_all = self.kernel.prior_cov_nodes();
        let mut cov = DMatrix::from_fn(m, m, |i, j| prior_all[(idx[i], idx[j])]);
        match &self.cache {
            Cache::Dense(c) => {
                let Some((_, l)) = &c.chol else { return cov };
                let t = self.points.len();
                let mut cx = DMatrix::zeros(t, m);
                for (j, &node) in idx.iter().enumerate() {
                    for i in 0..t {
                        cx[(i, j)] = c.cross[(node, i)];
                    }
                }
                solve_lower_matrix(l, &mut cx);
                cov -= cx.transpose() * cx;
            }
            Cache::Factored(c) => {
                let Some((_, l)) = &c.mid else { return cov };
                let tau2 = self.kernel.tau2().expect("precision form");
                let cscale = tau2 * self.lambda;
                let t = self.points.len();
                let mut ux = DMatrix::zeros(t, m);
                for (j, &node) in idx.iter().enumerate() {
                    for i in 0..t {
                        ux[(i, j)] = c.pu[(node, i)];
                    }
                }
                solve_lower_matrix(l, &mut ux);
                let factor = self.lambda / (cscale * cscale);
                cov -= factor * ux.transpose() * ux;
            }
        }
        cov
    }

    /// Realized-history information gain `½ log|I + λ⁻¹ K|`.
    pub fn info_gain(&self) -> f64 {
        let t = self.points.len();
        if t == 0 {
            return 0.0;
        }
        let mut m = self.history_gram() / self.lambda;
        for i in 0..t {
            m[(i, i)] += 1.0;
        }
        let chol = Cholesky::new(m).expect("I + K/lambda is positive definite");
        let l = chol.l();
        (0..t).map(|i| l[(i, i)].ln()).sum::<f64>()
    }

    /// `[k(x, x_j)]_j` over the history.
    fn point_cross(&self, x: &GraphPoint) -> DVector<f64> {
        DVector::from_iterator(self.points.len(), self.points.iter().map(|p| self.kernel.k(p, x)))
    }

    /// `P_rᵀ e(x)` as a dense vector.
    fn point_projected_hat(&self, x: &GraphPoint) -> DVector<f64> {
        let n = self.kernel.mesh().n_nodes();
        let mut e = DVector::zeros(n);
        for &(i, w) in &self.kernel.mesh().eval_hat_basis(x) {
            e[i.0] = w;
        }
        self.kernel.project_t(&e)
    }
}

fn grow_cols(m: &DMatrix<f64>, col: &[f64]) -> DMatrix<f64> {
    let (nr, nc) = (m.nrows(), m.ncols());
    let mut out = DMatrix::zeros(nr, nc + 1);
    out.view_mut((0, 0), (nr, nc)).copy_from(m);
    for (i, &v) in col.iter().enumerate() {
        out[(i, nc)] = v;
    }
    out
}

/// Grows a symmetric matrix by one row/column; `row` has length `t+1`
/// (cross terms plus the new diagonal entry).
fn grow_sym(m: &DMatrix<f64>, row: &[f64]) -> DMatrix<f64> {
    let t = m.nrows();
    debug_assert_eq!(row.len(), t + 1);
    let mut out = DMatrix::zeros(t + 1, t + 1);
    out.view_mut((0, 0), (t, t)).copy_from(m);
    for (j, &v) in row.iter().enumerate() {
        out[(t, j)] = v;
        out[(j, t)] = v;
    }
    out
}

fn solve_lower(l: &DMatrix<f64>, b: &mut DVector<f64>) {
    let ok = l.solve_lower_triangular_mut(b);
    debug_assert!(ok, "Cholesky factor must be nonsingular");
}

fn solve_lower_matrix(l: &DMatrix<f64>, b: &mut DMatrix<f64>) {
    let ok = l.solve_lower_triangular_mut(b);
    debug_assert!(ok, "Cholesky factor must be nonsingular");
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::{assemble, FemMatrices, MassMode};
    use crate::graph::MetricGraph;
    use crate::kernels::WhittleMaternParams;
    use crate::mesh::Mesh;
    use crate::rng::stream;
    use rand::Rng;

    fn interval_setup(n_e: usize) -> (Arc<Mesh>, Arc<FemMatrices>) {
        let graph = Arc::new(MetricGraph::interval(1.0));
        let mesh = Arc::new(Mesh::build(graph, 1.0 / n_e as f64).unwrap());
        let fem = Arc::new(assemble(&mesh));
        (mesh, fem)
    }

    /// Textbook posterior from the Gram matrix, implemented independently
    /// of the module under test.
    struct DenseOracle {
        kernel: Arc<KernelModel>,
        pts: Vec<GraphPoint>,
        inv: DMatrix<f64>,
        y: DVector<f64>,
    }

    impl DenseOracle {
        fn build(kernel: Arc<KernelModel>, pts: &[GraphPoint], y: &[f64], lambda: f64) -> Self {
            let t = pts.len();
            let mut k = kernel.gram(pts);
            for i in 0..t {
                k[(i, i)] += lambda;
            }
            let inv = k.try_inverse().expect("regularized Gram invertible");
            Self { kernel, pts: pts.to_vec(), inv, y: DVector::from_column_slice(y) }
        }

        fn cross(&self, x: &GraphPoint) -> DVector<f64> {
            DVector::from_iterator(
                self.pts.len(),
                self.pts.iter().map(|p| self.kernel.k(p, x)),
            )
        }

        fn mean(&self, x: &GraphPoint) -> f64 {
            self.cross(x).dot(&(&self.inv * &self.y))
        }

        fn cov(&self, x: &GraphPoint, z: &GraphPoint) -> f64 {
            self.kernel.k(x, z) - (self.cross(x).transpose() * &self.inv * self.cross(z))[(0, 0)]
        }
    }

    fn random_history(
        mesh: &Mesh,
        t: usize,
        seed: u64,
    ) -> (Vec<GraphPoint>, Vec<f64>) {
        let mut rng = stream(seed, "posterior-history", &[]);
        let g = mesh.graph();
        let mut pts = Vec::with_capacity(t);
        let mut ys = Vec::with_capacity(t);
        for _ in 0..t {
            let p = if rng.gen_bool(0.5) {
                *mesh.node_point(crate::mesh::NodeIndex(rng.gen_range(0..mesh.n_nodes())))
            } else {
                let (e, edge) = g.edges().next().unwrap();
                g.point(e, rng.gen_range(0.0..edge.length)).unwrap()
            };
            pts.push(p);
            ys.push(rng.gen_range(-2.0..2.0));
        }
        (pts, ys)
    }

    fn conditioned(
        kernel: &Arc<KernelModel>,
        pts: &[GraphPoint],
        ys: &[f64],
        lambda: f64,
    ) -> PosteriorState {
        let mut state = PosteriorState::new(kernel.clone(), lambda).unwrap();
        for (p, &y) in pts.iter().zip(ys) {
            state = state.condition(*p, y).unwrap();
        }
        state
    }

    fn check_against_oracle(kernel: Arc<KernelModel>, lambda: f64, t: usize, seed: u64, tol: f64) {
        let mesh = kernel.mesh().clone();
        let (pts, ys) = random_history(&mesh, t, seed);
        let state = conditioned(&kernel, &pts, &ys, lambda);
        let oracle = DenseOracle::build(kernel.clone(), &pts, &ys, lambda);

        let probes: Vec<GraphPoint> =
            (0..mesh.n_nodes()).step_by(7).map(|i| *mesh.node_point(crate::mesh::NodeIndex(i))).collect();
        let (mean_nodes, var_nodes) = state.mean_var_nodes();
        let scale = kernel.prior_var_nodes().amax().max(1.0);
        for p in &probes {
            let i = mesh.node_at(p).unwrap().0;
            assert!((state.mean_at(p) - oracle.mean(p)).abs() < tol * scale);
            assert!((state.var_at(p) - oracle.cov(p, p)).abs() < tol * scale);
            assert!((mean_nodes[i] - oracle.mean(p)).abs() < tol * scale);
            assert!((var_nodes[i] - oracle.cov(p, p)).abs() < tol * scale);
        }
        let block = state.cov_block(&probes);
        for (a, pa) in probes.iter().enumerate() {
            for (b, pb) in probes.iter().enumerate() {
                assert!((block[(a, b)] - oracle.cov(pa, pb)).abs() < tol * scale);
            }
        }
        // Off-node probes exercise the general hat-evaluation path.
        let g = mesh.graph();
        let (e, edge) = g.edges().next().unwrap();
        let off = vec![
            g.point(e, 0.137 * edge.length).unwrap(),
            g.point(e, 0.77 * edge.length).unwrap(),
        ];
        for p in &off {
            assert!((state.mean_at(p) - oracle.mean(p)).abs() < tol * scale);
            assert!((state.var_at(p) - oracle.cov(p, p)).abs() < tol * scale);
        }
        let block = state.cov_block(&off);
        assert!((block[(0, 1)] - oracle.cov(&off[0], &off[1])).abs() < tol * scale);
    }

    #[test]
    fn factored_precision_matches_dense_oracle() {
        let (mesh, fem) = interval_setup(60);
        let params = WhittleMaternParams { alpha: 1.0, kappa: 2.0, tau: 1.0 };
        for mode in [MassMode::Lumped, MassMode::Consistent] {
            let kernel = Arc::new(
                KernelModel::precision(mesh.clone(), fem.clone(), params, mode).unwrap(),
            );
            check_against_oracle(kernel, 0.7, 7, 11, 1e-8);
        }
    }

    #[test]
    fn factored_rational_matches_dense_oracle() {
        let (mesh, fem) = interval_setup(40);
        let params = WhittleMaternParams { alpha: 0.75, kappa: 1.0, tau: 1.0 };
        let kernel =
            Arc::new(KernelModel::rational(mesh.clone(), fem.clone(), params, 2).unwrap());
        check_against_oracle(kernel, 1.3, 9, 23, 1e-8);
    }

    #[test]
    fn dense_path_matches_oracle_for_euclidean() {
        let (mesh, _) = interval_setup(50);
        let kernel = Arc::new(KernelModel::euclidean(mesh, 1.0, 0.4).unwrap());
        check_against_oracle(kernel, 0.5, 8, 5, 1e-9);
    }

    #[test]
    fn empty_history_is_the_prior() {
        let (mesh, fem) = interval_setup(20);
        let params = WhittleMaternParams { alpha: 1.0, kappa: 1.0, tau: 1.0 };
        let kernel = Arc::new(
            KernelModel::precision(mesh.clone(), fem, params, MassMode::Lumped).unwrap(),
        );
        let state = PosteriorState::new(kernel.clone(), 1.0).unwrap();
        let p = *mesh.node_point(crate::mesh::NodeIndex(5));
        assert_eq!(state.mean_at(&p), 0.0);
        approx::assert_relative_eq!(state.var_at(&p), kernel.k(&p, &p), max_relative = 1e-12);
        assert_eq!(state.info_gain(), 0.0);
        let (m, v) = state.mean_var_nodes();
        assert_eq!(m.amax(), 0.0);
        approx::assert_relative_eq!(
            v[3],
            kernel.prior_var_nodes()[3],
            max_relative = 1e-12
        );
    }

    #[test]
    fn near_interpolation_with_small_lambda() {
        let (mesh, fem) = interval_setup(30);
        let params = WhittleMaternParams { alpha: 1.0, kappa: 1.0, tau: 1.0 };
        let kernel = Arc::new(
            KernelModel::precision(mesh.clone(), fem, params, MassMode::Lumped).unwrap(),
        );
        let p = *mesh.node_point(crate::mesh::NodeIndex(13));
        let state = PosteriorState::new(kernel.clone(), 1e-6)
            .unwrap()
            .condition(p, 1.37)
            .unwrap();
        assert!((state.mean_at(&p) - 1.37).abs() < 1e-3);
        assert!(state.var_at(&p) < 1e-3 * kernel.k(&p, &p));
    }

    #[test]
    fn duplicate_observation_equals_halved_lambda() {
        let (mesh, fem) = interval_setup(25);
        let params = WhittleMaternParams { alpha: 1.0, kappa: 1.5, tau: 1.0 };
        let kernel = Arc::new(
            KernelModel::precision(mesh.clone(), fem, params, MassMode::Lumped).unwrap(),
        );
        let x = *mesh.node_point(crate::mesh::NodeIndex(9));
        let twice = PosteriorState::new(kernel.clone(), 1.0)
            .unwrap()
            .condition(x, 0.8)
            .unwrap()
            .condition(x, 0.8)
            .unwrap();
        let once = PosteriorState::new(kernel.clone(), 0.5)
            .unwrap()
            .condition(x, 0.8)
            .unwrap();
        for i in (0..mesh.n_nodes()).step_by(3) {
            let p = *mesh.node_point(crate::mesh::NodeIndex(i));
            assert!((twice.mean_at(&p) - once.mean_at(&p)).abs() < 1e-10);
            assert!((twice.var_at(&p) - once.var_at(&p)).abs() < 1e-10);
        }
    }

    #[test]
    fn variance_never_increases_under_conditioning() {
        let (mesh, fem) = interval_setup(50);
        let params = WhittleMaternParams { alpha: 1.0, kappa: 1.0, tau: 1.0 };
        let kernel = Arc::new(
            KernelModel::precision(mesh.clone(), fem, params, MassMode::Lumped).unwrap(),
        );
        let (pts, ys) = random_history(&mesh, 20, 3);
        let mut state = PosteriorState::new(kernel, 1.0).unwrap();
        let (_, mut prev) = state.mean_var_nodes();
        for (p, y) in pts.into_iter().zip(ys) {
            state = state.condition(p, y).unwrap();
            let (_, var) = state.mean_var_nodes();
            for i in 0..var.len() {
                assert!(var[i] <= prev[i] + 1e-10);
                assert!(var[i] >= -1e-10);
            }
            prev = var;
        }
    }

    #[test]
    fn info_gain_matches_dense_logdet_and_is_monotone() {
        let (mesh, fem) = interval_setup(40);
        let params = WhittleMaternParams { alpha: 1.0, kappa: 1.0, tau: 1.0 };
        let kernel = Arc::new(
            KernelModel::precision(mesh.clone(), fem, params, MassMode::Lumped).unwrap(),
        );
        let (pts, ys) = random_history(&mesh, 6, 8);
        let lambda = 1.4;
        let mut state = PosteriorState::new(kernel.clone(), lambda).unwrap();
        let mut prev = 0.0;
        for (p, y) in pts.iter().zip(&ys) {
            state = state.condition(*p, *y).unwrap();
            let gain = state.info_gain();
            assert!(gain >= prev - 1e-12);
            prev = gain;
        }
        let mut m = kernel.gram(&pts) / lambda;
        for i in 0..m.nrows() {
            m[(i, i)] += 1.0;
        }
        let direct = 0.5 * m.determinant().ln();
        assert!((state.info_gain() - direct).abs() < 1e-9);

        // Single point: closed form ½ log(1 + k(x,x)/λ).
        let single = PosteriorState::new(kernel.clone(), lambda)
            .unwrap()
            .condition(pts[0], 1.0)
            .unwrap();
        let expect = 0.5 * (1.0 + kernel.k(&pts[0], &pts[0]) / lambda).ln();
        approx::assert_relative_eq!(single.info_gain(), expect, max_relative = 1e-12);
    }

    #[test]
    fn mean_is_invariant_under_history_permutation() {
        let (mesh, fem) = interval_setup(30);
        let params = WhittleMaternParams { alpha: 1.0, kappa: 1.0, tau: 1.0 };
        let kernel = Arc::new(
            KernelModel::precision(mesh.clone(), fem, params, MassMode::Lumped).unwrap(),
        );
        let (pts, ys) = random_history(&mesh, 8, 17);
        let fwd = conditioned(&kernel, &pts, &ys, 1.0);
        let rev_pts: Vec<_> = pts.iter().rev().cloned().collect();
        let rev_ys: Vec<_> = ys.iter().rev().cloned().collect();
        let rev = conditioned(&kernel, &rev_pts, &rev_ys, 1.0);
        for i in (0..mesh.n_nodes()).step_by(4) {
            let p = *mesh.node_point(crate::mesh::NodeIndex(i));
            assert!((fwd.mean_at(&p) - rev.mean_at(&p)).abs() < 1e-10);
        }
    }

    #[test]
    fn lambda_switch_reuses_history() {
        let (mesh, fem) = interval_setup(30);
        let params = WhittleMaternParams { alpha: 1.0, kappa: 1.0, tau: 1.0 };
        let kernel = Arc::new(
            KernelModel::precision(mesh.clone(), fem, params, MassMode::Lumped).unwrap(),
        );
        let (pts, ys) = random_history(&mesh, 5, 29);
        let at_2 = conditioned(&kernel, &pts, &ys, 2.0);
        let switched = conditioned(&kernel, &pts, &ys, 0.9).with_lambda(2.0).unwrap();
        let p = *mesh.node_point(crate::mesh::NodeIndex(11));
        assert!((at_2.mean_at(&p) - switched.mean_at(&p)).abs() < 1e-12);
        assert!((at_2.var_at(&p) - switched.var_at(&p)).abs() < 1e-12);
    }
}
