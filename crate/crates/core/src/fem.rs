//! Piecewise-linear finite elements on metric graph meshes.
//!
//! Assembly produces the mass matrix `C` and stiffness matrix `G` from the
//! standard per-segment contributions
//!
//! ```text
//! C_loc = h/6 [2 1; 1 2]      G_loc = 1/h [1 -1; -1 1]
//! ```
//!
//! accumulated over every segment of every edge. Continuity at vertices is
//! automatic because vertex nodes are shared between edges, which encodes
//! natural (Kirchhoff) vertex conditions. A diagonal "lumped" mass (row
//! sums of `C`) is kept alongside; the sparse kernel representations use it
//! so that inverses of the mass matrix stay diagonal.

use crate::error::{Error, Result};
use crate::mesh::Mesh;
use crate::sparse::{SparseCholesky, SparseMatrix};
use nalgebra::{DMatrix, DVector};
use std::sync::Arc;

/// Largest system size for which the dense eigensolver fallback may run.
pub const DENSE_EIGEN_GUARD: usize = 4000;

/// Whether operators use the full (consistent) mass matrix or its diagonal
/// lumping.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MassMode {
    Consistent,
    Lumped,
}

/// Assembled finite element matrices for a mesh.
#[derive(Debug, Clone)]
pub struct FemMatrices {
    pub mass: SparseMatrix,
    pub stiffness: SparseMatrix,
    /// Row sums of the mass matrix.
    pub lumped_mass: Vec<f64>,
}

/// Assembles mass and stiffness matrices over all edge segments.
pub fn assemble(mesh: &Mesh) -> FemMatrices {
    let n = mesh.n_nodes();
    let mut c_triplets = Vec::new();
    let mut g_triplets = Vec::new();
    for (eid, _) in mesh.graph().edges() {
        let em = mesh.edge_mesh(eid);
        let h = em.h;
        for w in em.nodes.windows(2) {
            let (a, b) = (w[0].0, w[1].0);
            c_triplets.push((a, a, h / 3.0));
            c_triplets.push((b, b, h / 3.0));
            c_triplets.push((a, b, h / 6.0));
            c_triplets.push((b, a, h / 6.0));
            g_triplets.push((a, a, 1.0 / h));
            g_triplets.push((b, b, 1.0 / h));
            g_triplets.push((a, b, -1.0 / h));
            g_triplets.push((b, a, -1.0 / h));
        }
    }
    let mass = SparseMatrix::from_triplets(n, n, &c_triplets).expect("valid mass triplets");
    let stiffness =
        SparseMatrix::from_triplets(n, n, &g_triplets).expect("valid stiffness triplets");
    let lumped_mass = mass.row_sums();
    FemMatrices { mass, stiffness, lumped_mass }
}

impl FemMatrices {
    pub fn n(&self) -> usize {
        self.mass.nrows()
    }

    /// Mass matrix in the requested mode (diagonal when lumped).
    pub fn mass_matrix(&self, mode: MassMode) -> SparseMatrix {
        match mode {
            MassMode::Consistent => self.mass.clone(),
            MassMode::Lumped => SparseMatrix::from_diagonal(&self.lumped_mass),
        }
    }

    /// The shifted elliptic matrix `A = κ² C + G`.
    pub fn shifted_matrix(&self, kappa: f64, mode: MassMode) -> SparseMatrix {
        self.stiffness.add_scaled(1.0, &self.mass_matrix(mode), kappa * kappa)
    }
}

/// Application of `(κ² I + C⁻¹ G)` and its integer powers, with the mass
/// inverse either diagonal (lumped) or solved through a cached sparse
/// Cholesky factorization (consistent).
pub struct ShiftedOperator {
    fem: Arc<FemMatrices>,
    kappa: f64,
    mode: MassMode,
    mass_chol: Option<SparseCholesky>,
}

impl ShiftedOperator {
    pub fn new(fem: Arc<FemMatrices>, kappa: f64, mode: MassMode) -> Result<Self> {
        if kappa <= 0.0 || !kappa.is_finite() {
            return Err(Error::Kernel(format!("kappa must be positive and finite, got {kappa}")));
        }
        let mass_chol = match mode {
            MassMode::Consistent => Some(SparseCholesky::factor(&fem.mass)?),
            MassMode::Lumped => None,
        };
        Ok(Self { fem, kappa, mode, mass_chol })
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn mode(&self) -> MassMode {
        self.mode
    }

    /// `w = (κ² I + C⁻¹ G) v`.
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        let gv = self.fem.stiffness.matvec(v);
        let m_inv_gv = match (&self.mass_chol, self.mode) {
            (Some(chol), _) => chol.solve(&gv),
            (None, _) => gv
                .iter()
                .zip(&self.fem.lumped_mass)
                .map(|(g, m)| g / m)
                .collect(),
        };
        v.iter()
            .zip(&m_inv_gv)
            .map(|(vi, gi)| self.kappa * self.kappa * vi + gi)
            .collect()
    }

    /// `w = (κ² I + C⁻¹ G)^p v` by repeated application.
    pub fn apply_power(&self, p: u32, v: &[f64]) -> Vec<f64> {
        let mut w = v.to_vec();
        for _ in 0..p {
            w = self.apply(&w);
        }
        w
    }
}

/// Generalized eigendecomposition `(κ² C + G) u = λ C u` with eigenvectors
/// normalized so `Uᵀ C U = I`, eigenvalues ascending.
#[derive(Debug, Clone)]
pub struct EigenBasis {
    pub values: Vec<f64>,
    /// Columns are the eigenvectors.
    pub vectors: DMatrix<f64>,
}

/// Dense reference eigensolver. Used as the spectral oracle in tests and as
/// the fallback sampler; guarded to desk-scale systems.
pub fn dense_eigensolve(fem: &FemMatrices, kappa: f64, mode: MassMode) -> Result<EigenBasis> {
    let n = fem.n();
    if n > DENSE_EIGEN_GUARD {
        return Err(Error::SizeGuard(format!(
            "dense eigensolve limited to {DENSE_EIGEN_GUARD} nodes, got {n}"
        )));
    }
    let a = fem.shifted_matrix(kappa, mode).to_dense();
    let c = fem.mass_matrix(mode).to_dense();
    let chol = c
        .cholesky()
        .ok_or_else(|| Error::Factorization("mass matrix is not positive definite".into()))?;
    let l = chol.l();
    let lt = l.transpose();
    // B = L⁻¹ A L⁻ᵀ, then a symmetric standard problem. The second solve
    // works on the transpose, which is harmless because B is symmetric and
    // gets symmetrized against roundoff anyway.
    let mut b = a;
    if !l.solve_lower_triangular_mut(&mut b) {
        return Err(Error::Factorization("singular mass Cholesky factor".into()));
    }
    b.transpose_mut();
    if !l.solve_lower_triangular_mut(&mut b) {
        return Err(Error::Factorization("singular mass Cholesky factor".into()));
    }
    let b = (&b + b.transpose()) * 0.5;
    let eig = b.symmetric_eigen();

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let mut values = Vec::with_capacity(n);
    let mut vectors = DMatrix::zeros(n, n);
    for (k, &i) in order.iter().enumerate() {
        values.push(eig.eigenvalues[i]);
        let mut u: DVector<f64> = eig.eigenvectors.column(i).clone_owned();
        if !lt.solve_upper_triangular_mut(&mut u) {
            return Err(Error::Factorization("singular mass Cholesky factor".into()));
        }
        // Deterministic sign: largest-magnitude entry is positive.
        let mut pivot = 0usize;
        for r in 1..n {
            if u[r].abs() > u[pivot].abs() {
                pivot = r;
            }
        }
        if u[pivot] < 0.0 {
            u.neg_mut();
        }
        vectors.set_column(k, &u);
    }
    Ok(EigenBasis { values, vectors })
}
