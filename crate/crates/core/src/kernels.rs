//! Gaussian-process kernel models over a mesh on a metric graph.
//!
//! Four families share one interface:
//!
//! * [`PrecisionKernel`] — Whittle-Matérn covariance given implicitly by a
//!   sparse precision matrix `Q = A (C⁻¹A)^(2α-1)` with `A = κ²C + G`;
//!   requires `2α ∈ ℕ`. Kernel values need only sparse solves with `A`.
//! * [`RationalKernel`] — fractional `α` via a rational surrogate for the
//!   inverse power: covariance `τ⁻² P_r Q̃⁻¹ P_rᵀ` with `Q̃ = P_ℓᵀ C P_ℓ`,
//!   lumped mass. Solves with `P_ℓ` are performed factor-by-factor through
//!   the (real or conjugate-pair) roots of the denominator polynomial, so
//!   every linear solve is with a well-conditioned sparse SPD matrix and the
//!   severely ill-conditioned product `Q̃` is never assembled.
//! * [`SpectralOracleKernel`] — dense eigenexpansion used as the reference
//!   in tests (exact power weights or the same rational weights).
//! * [`EuclideanKernel`] — exponential kernel of the embedded Euclidean
//!   distance; the graph-blind baseline.

use crate::error::{Error, Result};
use crate::fem::{dense_eigensolve, EigenBasis, FemMatrices, MassMode};
use crate::graph::GraphPoint;
use crate::mesh::{Mesh, NodeIndex};
use crate::rational::FractionalPowerFit;
use crate::sparse::{SparseCholesky, SparseMatrix};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use std::sync::{Arc, OnceLock};

/// Largest system for which a dense covariance factorization is permitted
/// (fallback sampling and oracle paths).
pub const DENSE_SAMPLE_GUARD: usize = 2000;

/// Hyperparameters of the Whittle-Matérn operator `τ(κ² - Δ)^α`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WhittleMaternParams {
    pub alpha: f64,
    pub kappa: f64,
    pub tau: f64,
}

impl WhittleMaternParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::Kernel(format!("alpha must be positive, got {}", self.alpha)));
        }
        if !(self.kappa > 0.0 && self.kappa.is_finite()) {
            return Err(Error::Kernel(format!("kappa must be positive, got {}", self.kappa)));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::Kernel(format!("tau must be positive, got {}", self.tau)));
        }
        Ok(())
    }

    /// `2α` when it is (numerically) a positive integer.
    pub fn two_alpha_integer(&self) -> Option<u32> {
        let ta = 2.0 * self.alpha;
        let r = ta.round();
        if (ta - r).abs() < 1e-9 && r >= 1.0 {
            Some(r as u32)
        } else {
            None
        }
    }
}

fn hat_to_dense(n: usize, hat: &[(NodeIndex, f64)]) -> DVector<f64> {
    let mut v = DVector::zeros(n);
    for &(i, w) in hat {
        v[i.0] = w;
    }
    v
}

fn standard_normal_vector(n: usize, rng: &mut ChaCha8Rng) -> DVector<f64> {
    DVector::from_iterator(n, (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)))
}

/// Covariance-matrix square-root sample with jitter escalation: returns
/// `L z` for `Σ + jitter·I = L Lᵀ`.
pub(crate) fn dense_cov_sample(sigma: &DMatrix<f64>, rng: &mut ChaCha8Rng) -> Result<DVector<f64>> {
    let n = sigma.nrows();
    if n > DENSE_SAMPLE_GUARD {
        return Err(Error::SizeGuard(format!(
            "dense covariance sampling needs {n} > {DENSE_SAMPLE_GUARD} nodes"
        )));
    }
    let scale = sigma.diagonal().mean().max(f64::MIN_POSITIVE);
    let z = standard_normal_vector(n, rng);
    let mut jitter = 1e-10;
    while jitter <= 1e-6 {
        let mut work = sigma.clone();
        for i in 0..n {
            work[(i, i)] += jitter * scale;
        }
        if let Some(chol) = nalgebra::Cholesky::new(work) {
            return Ok(chol.l() * z);
        }
        jitter *= 100.0;
    }
    Err(Error::Factorization(
        "covariance factorization failed with jitter up to 1e-6".into(),
    ))
}

/// Whittle-Matérn kernel in sparse precision form (`2α ∈ ℕ`).
#[derive(Debug)]
pub struct PrecisionKernel {
    mesh: Arc<Mesh>,
    fem: Arc<FemMatrices>,
    params: WhittleMaternParams,
    mode: MassMode,
    two_alpha: u32,
    mass: SparseMatrix,
    a_chol: SparseCholesky,
    mass_chol: SparseCholesky,
    cov_nodes: OnceLock<DMatrix<f64>>,
}

impl PrecisionKernel {
    pub fn new(
        mesh: Arc<Mesh>,
        fem: Arc<FemMatrices>,
        params: WhittleMaternParams,
        mode: MassMode,
    ) -> Result<Self> {
        params.validate()?;
        let two_alpha = params.two_alpha_integer().ok_or_else(|| {
            Error::Kernel(format!(
                "precision form needs 2α to be a positive integer, got α = {}",
                params.alpha
            ))
        })?;
        let mass = fem.mass_matrix(mode);
        let a = fem.shifted_matrix(params.kappa, mode);
        let a_chol = SparseCholesky::factor(&a)?;
        let mass_chol = SparseCholesky::factor(&mass)?;
        Ok(Self { mesh, fem, params, mode, two_alpha, mass, a_chol, mass_chol, cov_nodes: OnceLock::new() })
    }

    pub fn params(&self) -> WhittleMaternParams {
        self.params
    }

    pub fn mass_mode(&self) -> MassMode {
        self.mode
    }

    /// Applies `Q⁻¹ = (A⁻¹C)^(2α-1) A⁻¹`.
    pub fn q_solve(&self, b: &DVector<f64>) -> DVector<f64> {
        let mut x = DVector::from_vec(self.a_chol.solve(b.as_slice()));
        for _ in 1..self.two_alpha {
            let cx = self.mass.matvec(x.as_slice());
            x = DVector::from_vec(self.a_chol.solve(&cx));
        }
        x
    }

    fn cov_nodes(&self) -> &DMatrix<f64> {
        self.cov_nodes.get_or_init(|| {
            let n = self.fem.n();
            let tau2_inv = 1.0 / (self.params.tau * self.params.tau);
            let mut cov = DMatrix::zeros(n, n);
            let mut unit = DVector::zeros(n);
            for j in 0..n {
                unit[j] = 1.0;
                let col = self.q_solve(&unit);
                unit[j] = 0.0;
                for i in 0..n {
                    cov[(i, j)] = tau2_inv * col[i];
                }
            }
            // The exact matrix is symmetric; remove solver round-off.
            for i in 0..n {
                for j in 0..i {
                    let s = 0.5 * (cov[(i, j)] + cov[(j, i)]);
                    cov[(i, j)] = s;
                    cov[(j, i)] = s;
                }
            }
            cov
        })
    }

    fn k(&self, x: &GraphPoint, y: &GraphPoint) -> f64 {
        let n = self.fem.n();
        let ey = hat_to_dense(n, &self.mesh.eval_hat_basis(y));
        let col = self.q_solve(&ey);
        let tau2_inv = 1.0 / (self.params.tau * self.params.tau);
        self.mesh
            .eval_hat_basis(x)
            .iter()
            .map(|&(i, w)| w * col[i.0])
            .sum::<f64>()
            * tau2_inv
    }

    /// Exact prior path sample when `2α` is even: `u = τ⁻¹ (A⁻¹C)^α w` with
    /// `w ~ N(0, C⁻¹)` has covariance `τ⁻²Q⁻¹`.
    fn sample_exact(&self, rng: &mut ChaCha8Rng) -> Option<DVector<f64>> {
        if !self.two_alpha.is_multiple_of(2) {
            return None;
        }
        let n = self.fem.n();
        let z = standard_normal_vector(n, rng);
        let mut w = DVector::from_vec(self.mass_chol.inv_sqrt_transpose_mul(z.as_slice()));
        for _ in 0..self.two_alpha / 2 {
            let cw = self.mass.matvec(w.as_slice());
            w = DVector::from_vec(self.a_chol.solve(&cw));
        }
        Some(w / self.params.tau)
    }
}

/// Whittle-Matérn kernel for fractional `α` via rational approximation of
/// the inverse fractional power (lumped mass).
#[derive(Debug)]
pub struct RationalKernel {
    mesh: Arc<Mesh>,
    fem: Arc<FemMatrices>,
    params: WhittleMaternParams,
    m: usize,
    fit: FractionalPowerFit,
    mass: SparseMatrix,
    inv_mass_diag: Vec<f64>,
    p_r_mat: SparseMatrix,
    /// Factors of `p_ℓ(D)` through its roots: each real root `r` gives the
    /// SPD matrix `A - r C`, each conjugate pair `a ± bi` the SPD matrix
    /// `A C⁻¹ A - 2a A + (a² + b²) C`.
    real_factors: Vec<SparseCholesky>,
    pair_factors: Vec<SparseCholesky>,
    lead_inv: f64,
    lambda_max: f64,
    cov_nodes: OnceLock<DMatrix<f64>>,
}

impl RationalKernel {
    pub fn new(
        mesh: Arc<Mesh>,
        fem: Arc<FemMatrices>,
        params: WhittleMaternParams,
        m: usize,
    ) -> Result<Self> {
        params.validate()?;
        let mass = fem.mass_matrix(MassMode::Lumped);
        let inv_mass_diag: Vec<f64> = mass.diagonal().iter().map(|&d| 1.0 / d).collect();
        let a = fem.shifted_matrix(params.kappa, MassMode::Lumped);
        let d_mat = a.scale_rows(&inv_mass_diag);

        let lambda_max = estimate_lambda_max(&d_mat) * 1.05;
        let lambda_min = params.kappa * params.kappa;
        let fit = FractionalPowerFit::build(params.alpha, m, lambda_min, lambda_max)?;

        // Assemble p_r(D) by Horner recursion on sparse matrices.
        let n = fem.n();
        let identity = SparseMatrix::identity(n);
        let pr_coeffs = fit.p_r.coeffs();
        let mut p_r_mat = identity.add_scaled(0.0, &identity, *pr_coeffs.last().expect("nonempty"));
        for &c in pr_coeffs.iter().rev().skip(1) {
            p_r_mat = p_r_mat.matmul(&d_mat).add_scaled(1.0, &identity, c);
        }

        let roots = fit.denominator_roots()?;
        let mut real_factors = Vec::new();
        for &r in &roots.real {
            let f = a.add_scaled(1.0, &mass, -r);
            real_factors.push(SparseCholesky::factor(&f)?);
        }
        let mut pair_factors = Vec::new();
        for &(re, im) in &roots.pairs {
            let f = a
                .matmul(&d_mat)
                .add_scaled(1.0, &a, -2.0 * re)
                .add_scaled(1.0, &mass, re * re + im * im)
                .symmetrized();
            pair_factors.push(SparseCholesky::factor(&f)?);
        }
        let lead_inv = 1.0 / roots.leading;

        Ok(Self {
            mesh,
            fem,
            params,
            m,
            fit,
            mass,
            inv_mass_diag,
            p_r_mat,
            real_factors,
            pair_factors,
            lead_inv,
            lambda_max,
            cov_nodes: OnceLock::new(),
        })
    }

    pub fn params(&self) -> WhittleMaternParams {
        self.params
    }

    pub fn degree(&self) -> usize {
        self.m
    }

    pub fn fit(&self) -> &FractionalPowerFit {
        &self.fit
    }

    pub fn lambda_max(&self) -> f64 {
        self.lambda_max
    }

    /// Applies `p_ℓ(D)⁻¹` with `D = C⁻¹A`, one root factor at a time:
    /// `(D - r)⁻¹ v = (A - rC)⁻¹ C v` and likewise for conjugate pairs.
    fn p_ell_solve(&self, v: &DVector<f64>) -> DVector<f64> {
        let mut w = v * self.lead_inv;
        for chol in &self.real_factors {
            let cw = self.mass.matvec(w.as_slice());
            w = DVector::from_vec(chol.solve(&cw));
        }
        for chol in &self.pair_factors {
            let cw = self.mass.matvec(w.as_slice());
            w = DVector::from_vec(chol.solve(&cw));
        }
        w
    }

    /// Applies `Q̃⁻¹ = p_ℓ(D)⁻² C⁻¹` (from `Q̃ = P_ℓᵀ C P_ℓ = C P_ℓ²`).
    pub fn q_solve(&self, b: &DVector<f64>) -> DVector<f64> {
        let scaled = DVector::from_iterator(
            b.len(),
            b.iter().zip(&self.inv_mass_diag).map(|(&x, &d)| x * d),
        );
        self.p_ell_solve(&self.p_ell_solve(&scaled))
    }

    pub fn project(&self, v: &DVector<f64>) -> DVector<f64> {
        DVector::from_vec(self.p_r_mat.matvec(v.as_slice()))
    }

    pub fn project_t(&self, v: &DVector<f64>) -> DVector<f64> {
        DVector::from_vec(self.p_r_mat.matvec_transpose(v.as_slice()))
    }

    fn cov_nodes(&self) -> &DMatrix<f64> {
        self.cov_nodes.get_or_init(|| {
            let n = self.fem.n();
            let tau2_inv = 1.0 / (self.params.tau * self.params.tau);
            let mut cov = DMatrix::zeros(n, n);
            let mut unit = DVector::zeros(n);
            for j in 0..n {
                unit[j] = 1.0;
                let col = self.project(&self.q_solve(&self.project_t(&unit)));
                unit[j] = 0.0;
                for i in 0..n {
                    cov[(i, j)] = tau2_inv * col[i];
                }
            }
            for i in 0..n {
                for j in 0..i {
                    let s = 0.5 * (cov[(i, j)] + cov[(j, i)]);
                    cov[(i, j)] = s;
                    cov[(j, i)] = s;
                }
            }
            cov
        })
    }

    fn k(&self, x: &GraphPoint, y: &GraphPoint) -> f64 {
        let n = self.fem.n();
        let ey = hat_to_dense(n, &self.mesh.eval_hat_basis(y));
        let col = self.project(&self.q_solve(&self.project_t(&ey)));
        let tau2_inv = 1.0 / (self.params.tau * self.params.tau);
        self.mesh
            .eval_hat_basis(x)
            .iter()
            .map(|&(i, w)| w * col[i.0])
            .sum::<f64>()
            * tau2_inv
    }
}

/// Deterministic power iteration for the largest `C⁻¹A`-eigenvalue.
fn estimate_lambda_max(d_mat: &SparseMatrix) -> f64 {
    let n = d_mat.nrows();
    // Oscillatory deterministic start vector (rich in high modes).
    let mut v: Vec<f64> = (0..n)
        .map(|i| if i % 2 == 0 { 1.0 } else { -1.0 } * (1.0 + 0.1 * ((i * 2654435761) % 97) as f64 / 97.0))
        .collect();
    let mut lambda = 1.0;
    for _ in 0..50 {
        let w = d_mat.matvec(&v);
        let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            break;
        }
        lambda = norm / v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v = w.iter().map(|x| x / norm).collect();
    }
    lambda
}

/// Dense spectral reference kernel: `k(x,y) = τ⁻² Σ w_i ψ_i(x) ψ_i(y)` with
/// `ψ_i` the generalized eigenfunctions and weights either the exact power
/// `λ^(-2α)` or squared rational surrogate values.
#[derive(Debug)]
pub struct SpectralOracleKernel {
    mesh: Arc<Mesh>,
    params: WhittleMaternParams,
    mode: MassMode,
    basis: EigenBasis,
    weights: Vec<f64>,
    cov_nodes: OnceLock<DMatrix<f64>>,
}

impl SpectralOracleKernel {
    pub fn exact(
        mesh: Arc<Mesh>,
        fem: &FemMatrices,
        params: WhittleMaternParams,
        mode: MassMode,
    ) -> Result<Self> {
        params.validate()?;
        let basis = dense_eigensolve(fem, params.kappa, mode)?;
        let weights = basis.values.iter().map(|&l| l.powf(-2.0 * params.alpha)).collect();
        Ok(Self { mesh, params, mode, basis, weights, cov_nodes: OnceLock::new() })
    }

    /// Same eigenbasis but with the rational surrogate weights
    /// `s(λ⁻¹)² ≈ λ^(-2α)`; the exact dense counterpart of
    /// [`RationalKernel`] for equivalence tests.
    pub fn with_rational_weights(
        mesh: Arc<Mesh>,
        fem: &FemMatrices,
        params: WhittleMaternParams,
        mode: MassMode,
        fit: &FractionalPowerFit,
    ) -> Result<Self> {
        params.validate()?;
        let basis = dense_eigensolve(fem, params.kappa, mode)?;
        let weights = basis
            .values
            .iter()
            .map(|&l| {
                let s = fit.eval_inv_power(l);
                s * s
            })
            .collect();
        Ok(Self { mesh, params, mode, basis, weights, cov_nodes: OnceLock::new() })
    }

    pub fn params(&self) -> WhittleMaternParams {
        self.params
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.basis.values
    }

    fn psi(&self, p: &GraphPoint) -> DVector<f64> {
        let hat = self.mesh.eval_hat_basis(p);
        let n_modes = self.basis.vectors.ncols();
        DVector::from_iterator(
            n_modes,
            (0..n_modes).map(|i| hat.iter().map(|&(j, w)| w * self.basis.vectors[(j.0, i)]).sum()),
        )
    }

    fn k(&self, x: &GraphPoint, y: &GraphPoint) -> f64 {
        let px = self.psi(x);
        let py = self.psi(y);
        let tau2_inv = 1.0 / (self.params.tau * self.params.tau);
        px.iter()
            .zip(py.iter())
            .zip(&self.weights)
            .map(|((&a, &b), &w)| w * a * b)
            .sum::<f64>()
            * tau2_inv
    }

    fn cov_nodes(&self) -> &DMatrix<f64> {
        self.cov_nodes.get_or_init(|| {
            let tau2_inv = 1.0 / (self.params.tau * self.params.tau);
            let u = &self.basis.vectors;
            let mut wu_t = u.transpose();
            for (i, &w) in self.weights.iter().enumerate() {
                for j in 0..wu_t.ncols() {
                    wu_t[(i, j)] *= w * tau2_inv;
                }
            }
            u * wu_t
        })
    }

    fn sample_nodes(&self, rng: &mut ChaCha8Rng) -> DVector<f64> {
        let n_modes = self.weights.len();
        let z = standard_normal_vector(n_modes, rng);
        let scaled = DVector::from_iterator(
            n_modes,
            z.iter().zip(&self.weights).map(|(&zi, &w)| zi * w.sqrt() / self.params.tau),
        );
        &self.basis.vectors * scaled
    }
}

/// Exponential kernel of the embedded Euclidean distance (graph-blind
/// baseline): `k(x,y) = σ² exp(-|x-y|₂ / ℓ)`.
#[derive(Debug)]
pub struct EuclideanKernel {
    mesh: Arc<Mesh>,
    sigma: f64,
    ell: f64,
    node_positions: Vec<[f64; 2]>,
    cov_nodes: OnceLock<DMatrix<f64>>,
}

impl EuclideanKernel {
    pub fn new(mesh: Arc<Mesh>, sigma: f64, ell: f64) -> Result<Self> {
        if !(sigma > 0.0 && ell > 0.0) {
            return Err(Error::Kernel(format!("need sigma, ell > 0; got {sigma}, {ell}")));
        }
        let node_positions = mesh
            .node_points()
            .iter()
            .map(|p| mesh.graph().embed(p))
            .collect();
        Ok(Self { mesh, sigma, ell, node_positions, cov_nodes: OnceLock::new() })
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn ell(&self) -> f64 {
        self.ell
    }

    fn k(&self, x: &GraphPoint, y: &GraphPoint) -> f64 {
        let d = self.mesh.graph().euclidean_distance(x, y);
        self.sigma * self.sigma * (-d / self.ell).exp()
    }

    fn cov_nodes(&self) -> &DMatrix<f64> {
        self.cov_nodes.get_or_init(|| {
            let n = self.node_positions.len();
            let s2 = self.sigma * self.sigma;
            DMatrix::from_fn(n, n, |i, j| {
                let dx = self.node_positions[i][0] - self.node_positions[j][0];
                let dy = self.node_positions[i][1] - self.node_positions[j][1];
                s2 * (-(dx * dx + dy * dy).sqrt() / self.ell).exp()
            })
        })
    }
}

/// A GP kernel model over the nodes of a mesh.
#[derive(Debug)]
pub enum KernelModel {
    Precision(PrecisionKernel),
    Rational(RationalKernel),
    SpectralOracle(SpectralOracleKernel),
    Euclidean(EuclideanKernel),
}

impl KernelModel {
    pub fn precision(
        mesh: Arc<Mesh>,
        fem: Arc<FemMatrices>,
        params: WhittleMaternParams,
        mode: MassMode,
    ) -> Result<Self> {
        Ok(Self::Precision(PrecisionKernel::new(mesh, fem, params, mode)?))
    }

    pub fn rational(
        mesh: Arc<Mesh>,
        fem: Arc<FemMatrices>,
        params: WhittleMaternParams,
        m: usize,
    ) -> Result<Self> {
        Ok(Self::Rational(RationalKernel::new(mesh, fem, params, m)?))
    }

    pub fn spectral_oracle(
        mesh: Arc<Mesh>,
        fem: &FemMatrices,
        params: WhittleMaternParams,
        mode: MassMode,
    ) -> Result<Self> {
        Ok(Self::SpectralOracle(SpectralOracleKernel::exact(mesh, fem, params, mode)?))
    }

    pub fn euclidean(mesh: Arc<Mesh>, sigma: f64, ell: f64) -> Result<Self> {
        Ok(Self::Euclidean(EuclideanKernel::new(mesh, sigma, ell)?))
    }

    pub fn mesh(&self) -> &Arc<Mesh> {
        match self {
            Self::Precision(k) => &k.mesh,
            Self::Rational(k) => &k.mesh,
            Self::SpectralOracle(k) => &k.mesh,
            Self::Euclidean(k) => &k.mesh,
        }
    }

    /// Kernel value. Points must lie on the kernel's graph.
    pub fn k(&self, x: &GraphPoint, y: &GraphPoint) -> f64 {
        // When both points are mesh nodes and the node covariance is already
        // cached, read it off directly.
        if let Some(cov) = self.cached_cov_nodes() {
            if let (Some(i), Some(j)) = (self.mesh().node_at(x), self.mesh().node_at(y)) {
                return cov[(i.0, j.0)];
            }
        }
        match self {
            Self::Precision(k) => k.k(x, y),
            Self::Rational(k) => k.k(x, y),
            Self::SpectralOracle(k) => k.k(x, y),
            Self::Euclidean(k) => k.k(x, y),
        }
    }

    fn cached_cov_nodes(&self) -> Option<&DMatrix<f64>> {
        match self {
            Self::Precision(k) => k.cov_nodes.get(),
            Self::Rational(k) => k.cov_nodes.get(),
            Self::SpectralOracle(k) => k.cov_nodes.get(),
            Self::Euclidean(k) => k.cov_nodes.get(),
        }
    }

    /// Symmetrized Gram matrix over arbitrary points.
    ///
    /// For the sparse-precision families the Gram costs `t` solves (one
    /// covariance action per column) rather than `t²/2` pairwise solves.
    pub fn gram(&self, pts: &[GraphPoint]) -> DMatrix<f64> {
        let t = pts.len();
        let mut g = DMatrix::zeros(t, t);
        match self {
            Self::Precision(_) | Self::Rational(_) => {
                let mesh = self.mesh();
                if let Some(cov) = self.cached_cov_nodes() {
                    let nodes: Option<Vec<usize>> =
                        pts.iter().map(|p| mesh.node_at(p).map(|n| n.0)).collect();
                    if let Some(nodes) = nodes {
                        for i in 0..t {
                            for j in 0..=i {
                                let v = cov[(nodes[i], nodes[j])];
                                g[(i, j)] = v;
                                g[(j, i)] = v;
                            }
                        }
                        return g;
                    }
                }
                let hats: Vec<_> = pts.iter().map(|p| mesh.eval_hat_basis(p)).collect();
                for j in 0..t {
                    let col = self.cov_action(&pts[j]);
                    for i in 0..=j {
                        let v: f64 = hats[i].iter().map(|(n, w)| w * col[n.0]).sum();
                        g[(i, j)] = v;
                        g[(j, i)] = v;
                    }
                }
            }
            _ => {
                for i in 0..t {
                    for j in 0..=i {
                        let v = self.k(&pts[i], &pts[j]);
                        g[(i, j)] = v;
                        g[(j, i)] = v;
                    }
                }
            }
        }
        g
    }

    /// Covariance action `τ⁻² Q̂⁻¹ e(x)` in node coordinates (sparse families).
    fn cov_action(&self, x: &GraphPoint) -> DVector<f64> {
        match self {
            Self::Precision(k) => {
                let ex = hat_to_dense(k.fem.n(), &k.mesh.eval_hat_basis(x));
                k.q_solve(&ex) / (k.params.tau * k.params.tau)
            }
            Self::Rational(k) => {
                let ex = hat_to_dense(k.fem.n(), &k.mesh.eval_hat_basis(x));
                k.project(&k.q_solve(&k.project_t(&ex))) / (k.params.tau * k.params.tau)
            }
            _ => unreachable!("covariance action is only used for sparse-precision kernels"),
        }
    }

    /// Prior covariance over all mesh nodes (computed once, then cached).
    pub fn prior_cov_nodes(&self) -> &DMatrix<f64> {
        match self {
            Self::Precision(k) => k.cov_nodes(),
            Self::Rational(k) => k.cov_nodes(),
            Self::SpectralOracle(k) => k.cov_nodes(),
            Self::Euclidean(k) => k.cov_nodes(),
        }
    }

    /// Prior variance at every mesh node.
    pub fn prior_var_nodes(&self) -> DVector<f64> {
        self.prior_cov_nodes().diagonal()
    }

    /// Covariances `k(node_i, x)` against all mesh nodes.
    pub fn cross_nodes(&self, x: &GraphPoint) -> DVector<f64> {
        if let Some(j) = self.mesh().node_at(x) {
            return self.prior_cov_nodes().column(j.0).into_owned();
        }
        match self {
            Self::Precision(k) => {
                let ex = hat_to_dense(k.fem.n(), &k.mesh.eval_hat_basis(x));
                k.q_solve(&ex) / (k.params.tau * k.params.tau)
            }
            Self::Rational(k) => {
                let ex = hat_to_dense(k.fem.n(), &k.mesh.eval_hat_basis(x));
                k.project(&k.q_solve(&k.project_t(&ex))) / (k.params.tau * k.params.tau)
            }
            Self::SpectralOracle(k) => {
                let psi = k.psi(x);
                let tau2_inv = 1.0 / (k.params.tau * k.params.tau);
                let scaled = DVector::from_iterator(
                    psi.len(),
                    psi.iter().zip(&k.weights).map(|(&p, &w)| p * w * tau2_inv),
                );
                &k.basis.vectors * scaled
            }
            Self::Euclidean(k) => {
                let pts = k.mesh.node_points();
                DVector::from_iterator(pts.len(), pts.iter().map(|p| k.k(p, x)))
            }
        }
    }

    /// Sparse-precision solve `Q̂⁻¹ b` when the kernel has one
    /// (`Q̂ = Q` for the precision family, `Q̃` for the rational family).
    pub fn precision_solve(&self, b: &DVector<f64>) -> Option<DVector<f64>> {
        match self {
            Self::Precision(k) => Some(k.q_solve(b)),
            Self::Rational(k) => Some(k.q_solve(b)),
            _ => None,
        }
    }

    pub fn has_sparse_precision(&self) -> bool {
        matches!(self, Self::Precision(_) | Self::Rational(_))
    }

    /// `P_r v` (identity except for the rational family).
    pub fn project(&self, v: &DVector<f64>) -> DVector<f64> {
        match self {
            Self::Rational(k) => k.project(v),
            _ => v.clone(),
        }
    }

    /// `P_rᵀ v` (identity except for the rational family).
    pub fn project_t(&self, v: &DVector<f64>) -> DVector<f64> {
        match self {
            Self::Rational(k) => k.project_t(v),
            _ => v.clone(),
        }
    }

    /// `τ²` for kernels in precision form.
    pub fn tau2(&self) -> Option<f64> {
        match self {
            Self::Precision(k) => Some(k.params.tau * k.params.tau),
            Self::Rational(k) => Some(k.params.tau * k.params.tau),
            _ => None,
        }
    }

    /// Draws one prior sample of the field at all mesh nodes.
    pub fn sample_prior_nodes(&self, rng: &mut ChaCha8Rng) -> Result<DVector<f64>> {
        match self {
            Self::Precision(k) => {
                if let Some(u) = k.sample_exact(rng) {
                    Ok(u)
                } else {
                    dense_cov_sample(self.prior_cov_nodes(), rng)
                }
            }
            Self::SpectralOracle(k) => Ok(k.sample_nodes(rng)),
            _ => dense_cov_sample(self.prior_cov_nodes(), rng),
        }
    }

    /// The scalar hyperparameter tuned by maximum likelihood: `κ` for the
    /// operator families, `ℓ` for the Euclidean baseline.
    pub fn hyperparameter(&self) -> f64 {
        match self {
            Self::Precision(k) => k.params.kappa,
            Self::Rational(k) => k.params.kappa,
            Self::SpectralOracle(k) => k.params.kappa,
            Self::Euclidean(k) => k.ell,
        }
    }

    /// Rebuilds the kernel with a new value of its tuned hyperparameter.
    pub fn rebuilt_with(&self, theta: f64) -> Result<Self> {
        if !(theta > 0.0 && theta.is_finite()) {
            return Err(Error::Kernel(format!("hyperparameter must be positive, got {theta}")));
        }
        match self {
            Self::Precision(k) => Self::precision(
                k.mesh.clone(),
                k.fem.clone(),
                WhittleMaternParams { kappa: theta, ..k.params },
                k.mode,
            ),
            Self::Rational(k) => Self::rational(
                k.mesh.clone(),
                k.fem.clone(),
                WhittleMaternParams { kappa: theta, ..k.params },
                k.m,
            ),
            Self::SpectralOracle(k) => {
                let fem = crate::fem::assemble(&k.mesh);
                Ok(Self::SpectralOracle(SpectralOracleKernel::exact(
                    k.mesh.clone(),
                    &fem,
                    WhittleMaternParams { kappa: theta, ..k.params },
                    k.mode,
                )?))
            }
            Self::Euclidean(k) => Self::euclidean(k.mesh.clone(), k.sigma, theta),
        }
    }

    /// Short family label used in artifacts.
    pub fn family_label(&self) -> &'static str {
        match self {
            Self::Precision(_) => "spde",
            Self::Rational(_) => "spde-rational",
            Self::SpectralOracle(_) => "spectral-oracle",
            Self::Euclidean(_) => "euclidean",
        }
    }
}
