//! Objective functions on metric graphs.
//!
//! Two families are provided. Benchmark objectives pull a classical 1-D test
//! function back through a vertex-anchored scalar field that is interpolated
//! linearly along edges; the result is negated and normalized so that the
//! target is a maximization problem with values in `[-1, 0]`. The inverse
//! problem objective is the log-posterior of a source-localization task for
//! an elliptic equation on the graph, with partial noisy observations of the
//! solution and a mass-weighted prior over source locations.

use std::sync::Arc;

use nalgebra::DVector;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::fem::{FemMatrices, MassMode};
use crate::graph::{GraphPoint, MetricGraph};
use crate::mesh::{Mesh, NodeIndex};
use crate::sparse::SparseCholesky;

/// Classical 1-D benchmark functions, each with minimum value 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BenchmarkKind {
    /// Minimum at `u = 0`.
    Ackley,
    /// Minimum at `u = 0`.
    Rastrigin,
    /// Minimum at `u = 1`.
    Levy,
}

impl BenchmarkKind {
    pub fn label(&self) -> &'static str {
        match self {
            Self::Ackley => "ackley",
            Self::Rastrigin => "rastrigin",
            Self::Levy => "levy",
        }
    }

    pub fn from_label(label: &str) -> Result<Self> {
        match label {
            "ackley" => Ok(Self::Ackley),
            "rastrigin" => Ok(Self::Rastrigin),
            "levy" => Ok(Self::Levy),
            other => Err(Error::Config(format!(
                "unknown benchmark '{other}' (expected ackley, rastrigin, or levy)"
            ))),
        }
    }

    /// Evaluates the benchmark at scalar input `u`.
    pub fn eval(&self, u: f64) -> f64 {
        use std::f64::consts::{E, PI, TAU};
        match self {
            Self::Ackley => -20.0 * (-0.2 * u.abs()).exp() - (TAU * u).cos().exp() + 20.0 + E,
            Self::Rastrigin => u * u - 10.0 * (TAU * u).cos() + 10.0,
            Self::Levy => {
                let w = 1.0 + (u - 1.0) / 4.0;
                let s = (PI * w).sin();
                let s2 = (2.0 * PI * w).sin();
                s * s + (w - 1.0) * (w - 1.0) * (1.0 + s2 * s2)
            }
        }
    }
}

/// A scalar field given by one value per vertex, extended to the whole graph
/// by linear interpolation along each edge.
#[derive(Debug, Clone)]
pub struct AnchorField {
    values: Vec<f64>,
}

impl AnchorField {
    pub fn new(graph: &MetricGraph, values: Vec<f64>) -> Result<Self> {
        if values.len() != graph.n_vertices() {
            return Err(Error::Config(format!(
                "anchor field has {} values for {} vertices",
                values.len(),
                graph.n_vertices()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("anchor field values must be finite".into()));
        }
        Ok(Self { values })
    }

    /// Looks up a named anchor set stored with the graph document.
    pub fn from_named(graph: &MetricGraph, name: &str) -> Result<Self> {
        let values = graph
            .anchor_set(name)
            .ok_or_else(|| Error::Config(format!("graph has no anchor set named '{name}'")))?;
        Self::new(graph, values.to_vec())
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Linear interpolation of the vertex values along edges.
    pub fn eval(&self, graph: &MetricGraph, p: &GraphPoint) -> f64 {
        match *p {
            GraphPoint::Vertex(v) => self.values[v.0],
            GraphPoint::Interior { edge, s } => {
                let e = graph.edge(edge);
                let z = s / e.length;
                (1.0 - z) * self.values[e.tail.0] + z * self.values[e.head.0]
            }
        }
    }
}

/// An objective defined by its values on the mesh nodes, which form the
/// decision set of the optimization loop.
#[derive(Debug, Clone)]
pub struct NodeObjective {
    label: String,
    values: Vec<f64>,
    best_node: NodeIndex,
    best_value: f64,
}

impl NodeObjective {
    /// Builds the objective from per-node values; the optimum is the argmax,
    /// with ties broken toward the lowest node index.
    pub fn from_values(label: impl Into<String>, values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Config("objective needs at least one node".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("objective values must be finite".into()));
        }
        let mut best = 0;
        for (i, v) in values.iter().enumerate() {
            if *v > values[best] {
                best = i;
            }
        }
        let best_value = values[best];
        Ok(Self {
            label: label.into(),
            values,
            best_node: NodeIndex(best),
            best_value,
        })
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn n_nodes(&self) -> usize {
        self.values.len()
    }

    pub fn value(&self, i: NodeIndex) -> f64 {
        self.values[i.0]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn best_node(&self) -> NodeIndex {
        self.best_node
    }

    pub fn best_value(&self) -> f64 {
        self.best_value
    }

    /// Simple regret of a queried node: gap to the optimum value.
    pub fn regret(&self, i: NodeIndex) -> f64 {
        self.best_value - self.values[i.0]
    }
}

/// Pulls a benchmark back through an anchor field: the node values are
/// `-g(a(x)) / max_i |g(a(x_i))|`, so the best achievable value is at most 0
/// and the scale is normalized across benchmarks.
pub fn benchmark_objective(
    mesh: &Mesh,
    kind: BenchmarkKind,
    field: &AnchorField,
) -> Result<NodeObjective> {
    let graph = mesh.graph();
    let raw: Vec<f64> = mesh
        .node_points()
        .iter()
        .map(|p| kind.eval(field.eval(graph, p)))
        .collect();
    let denom = raw.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    if denom == 0.0 {
        return Err(Error::Config(
            "benchmark is identically zero on the mesh; anchors are degenerate".into(),
        ));
    }
    let values = raw.iter().map(|v| -v / denom).collect();
    NodeObjective::from_values(kind.label(), values)
}

/// Source localization for the elliptic problem `(χ² - Δ) p = δ-source` on a
/// metric graph, discretized with the same FEM basis as the surrogate model.
///
/// The forward map sends a candidate source node `x_j` to the solution values
/// at a fixed observation set; all candidate solves share one factorization
/// and are cached at construction. The prior over candidate nodes is
/// proportional to the lumped mass (the local cell length), so it is uniform
/// with respect to arclength.
#[derive(Debug, Clone)]
pub struct InverseProblem {
    chi: f64,
    sigma_eta: f64,
    true_source: NodeIndex,
    obs_nodes: Vec<NodeIndex>,
    /// `n_obs × n` matrix whose column `j` is the forward map of source `j`.
    forward: nalgebra::DMatrix<f64>,
    /// Full solution for the true source (used to pick the observation set).
    true_solution: DVector<f64>,
    log_prior: Vec<f64>,
}

impl InverseProblem {
    pub fn new(
        fem: &Arc<FemMatrices>,
        chi: f64,
        sigma_eta: f64,
        true_source: NodeIndex,
    ) -> Result<Self> {
        if !(chi > 0.0 && chi.is_finite()) {
            return Err(Error::Config("inverse problem needs chi > 0".into()));
        }
        if !(sigma_eta >= 0.0 && sigma_eta.is_finite()) {
            return Err(Error::Config("observation noise must be >= 0".into()));
        }
        let n = fem.n();
        if true_source.0 >= n {
            return Err(Error::Config(format!(
                "true source node {} out of range (n = {n})",
                true_source.0
            )));
        }
        let mass = fem.mass_matrix(MassMode::Consistent);
        let operator = fem.shifted_matrix(chi, MassMode::Consistent);
        let chol = SparseCholesky::factor(&operator)?;

        let solve_source = |j: usize| -> Result<Vec<f64>> {
            let mut unit = vec![0.0; n];
            unit[j] = 1.0;
            let rhs = mass.matvec(&unit);
            let p = chol.solve(&rhs);
            let resid = operator.matvec(&p);
            let (mut err2, mut rhs2) = (0.0, 0.0);
            for i in 0..n {
                err2 += (resid[i] - rhs[i]).powi(2);
                rhs2 += rhs[i] * rhs[i];
            }
            if err2.sqrt() > 1e-10 * rhs2.sqrt() {
                return Err(Error::Factorization(format!(
                    "forward solve residual {:.3e} exceeds 1e-10 relative tolerance",
                    err2.sqrt() / rhs2.sqrt()
                )));
            }
            Ok(p)
        };

        let true_solution = DVector::from_vec(solve_source(true_source.0)?);

        // Observe at the n/2 nodes where the true solution is largest.
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| {
            true_solution[b]
                .total_cmp(&true_solution[a])
                .then(a.cmp(&b))
        });
        let mut obs: Vec<usize> = order.into_iter().take(n / 2).collect();
        obs.sort_unstable();
        let obs_nodes: Vec<NodeIndex> = obs.iter().map(|&i| NodeIndex(i)).collect();

        let mut forward = nalgebra::DMatrix::zeros(obs.len(), n);
        for j in 0..n {
            let p = solve_source(j)?;
            for (row, &i) in obs.iter().enumerate() {
                forward[(row, j)] = p[i];
            }
        }

        let weights = mass.row_sums();
        let total: f64 = weights.iter().sum();
        let log_prior = weights.iter().map(|w| (w / total).ln()).collect();

        Ok(Self {
            chi,
            sigma_eta,
            true_source,
            obs_nodes,
            forward,
            true_solution,
            log_prior,
        })
    }

    pub fn chi(&self) -> f64 {
        self.chi
    }

    pub fn sigma_eta(&self) -> f64 {
        self.sigma_eta
    }

    pub fn true_source(&self) -> NodeIndex {
        self.true_source
    }

    pub fn obs_nodes(&self) -> &[NodeIndex] {
        &self.obs_nodes
    }

    pub fn true_solution(&self) -> &DVector<f64> {
        &self.true_solution
    }

    pub fn log_prior(&self) -> &[f64] {
        &self.log_prior
    }

    /// Synthetic observations: forward map of the true source plus iid
    /// Gaussian noise (exact when the noise level is zero).
    pub fn make_data(&self, rng: &mut ChaCha8Rng) -> DVector<f64> {
        let mut data = self.forward.column(self.true_source.0).into_owned();
        if self.sigma_eta > 0.0 {
            for v in data.iter_mut() {
                let z: f64 = StandardNormal.sample(rng);
                *v += self.sigma_eta * z;
            }
        }
        data
    }

    /// Squared data misfit `‖data - forward(x_j)‖²`.
    pub fn misfit(&self, data: &DVector<f64>, j: NodeIndex) -> f64 {
        let col = self.forward.column(j.0);
        data.iter()
            .zip(col.iter())
            .map(|(d, g)| (d - g) * (d - g))
            .sum()
    }

    /// Unnormalized log-posterior at every candidate node. Requires a
    /// positive noise level, which keeps every value finite.
    pub fn log_posterior_values(&self, data: &DVector<f64>) -> Result<Vec<f64>> {
        if self.sigma_eta <= 0.0 {
            return Err(Error::Config(
                "log-posterior needs a positive noise level; use map_node for exact data".into(),
            ));
        }
        let scale = 2.0 * self.sigma_eta * self.sigma_eta;
        Ok((0..self.forward.ncols())
            .map(|j| -self.misfit(data, NodeIndex(j)) / scale + self.log_prior[j])
            .collect())
    }

    /// Brute-force maximum a posteriori node. With zero noise the posterior
    /// concentrates on exact data matches, so candidates are ranked by
    /// (misfit, -prior) lexicographically; ties go to the lowest index.
    pub fn map_node(&self, data: &DVector<f64>) -> NodeIndex {
        if self.sigma_eta > 0.0 {
            let lp = self
                .log_posterior_values(data)
                .expect("positive noise level");
            let mut best = 0;
            for (j, v) in lp.iter().enumerate() {
                if *v > lp[best] {
                    best = j;
                }
            }
            return NodeIndex(best);
        }
        let mut best = 0;
        let mut best_key = (self.misfit(data, NodeIndex(0)), -self.log_prior[0]);
        for j in 1..self.forward.ncols() {
            let key = (self.misfit(data, NodeIndex(j)), -self.log_prior[j]);
            if key.0 < best_key.0 || (key.0 == best_key.0 && key.1 < best_key.1) {
                best = j;
                best_key = key;
            }
        }
        NodeIndex(best)
    }

    /// Packages the log-posterior as a node objective for the optimizer.
    pub fn node_objective(&self, data: &DVector<f64>) -> Result<NodeObjective> {
        NodeObjective::from_values("log-posterior", self.log_posterior_values(data)?)
    }
}
