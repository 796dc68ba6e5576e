//! The sequential optimization loop over mesh nodes.
//!
//! One episode interleaves: an optional marginal-likelihood refit of the
//! kernel length-scale, a per-round regularizer λ_t, confidence/sampling
//! widths driven by the realized information gain, an acquisition step
//! (upper confidence bound or Thompson sampling), and a noisy observation of
//! the objective. The decision set is always the full set of mesh nodes, and
//! repeated acquisitions of the same node are allowed.

use std::sync::Arc;
use std::time::Instant;

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::GraphPoint;
use crate::kernels::KernelModel;
use crate::mesh::{Mesh, NodeIndex};
use crate::objectives::NodeObjective;
use crate::posterior::PosteriorState;

/// Acquisition rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    Ucb,
    Ts,
}

impl Algorithm {
    pub fn label(&self) -> &'static str {
        match self {
            Self::Ucb => "ucb",
            Self::Ts => "ts",
        }
    }
}

/// Per-round regularizer for the posterior.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LambdaMode {
    /// `λ_t = 1 + 2/t`, decaying toward the interpolation weight 1.
    Decaying,
    Fixed(f64),
}

impl LambdaMode {
    pub fn at(&self, t: usize) -> f64 {
        match self {
            Self::Decaying => 1.0 + 2.0 / t.max(1) as f64,
            Self::Fixed(v) => *v,
        }
    }
}

/// Configuration of one optimization episode. Every field has a default, so
/// serialized configs may list only the fields they override.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BoConfig {
    pub algorithm: Algorithm,
    /// Norm bound `B` on the target in the surrogate's function space.
    pub norm_bound: f64,
    /// Sub-Gaussian scale `R` of the observation noise in the width schedule.
    pub noise_scale: f64,
    /// Misspecification budget `b` (distance of the target from the norm
    /// ball); enters the widths with a √t growth term.
    pub misspec: f64,
    /// Width schedules hold with probability `1 - δ`.
    pub delta: f64,
    pub lambda: LambdaMode,
    /// Number of acquisition rounds.
    pub horizon: usize,
    /// Size of the space-filling initial design.
    pub n_init: usize,
    /// Observation noise standard deviation used by the simulator.
    pub sigma_eps: f64,
    /// Refit the kernel hyperparameter every `k` rounds (None = never).
    pub mle_every: Option<usize>,
    /// Diagonal nugget for the likelihood Gram matrix; 0 escalates a ladder
    /// of nuggets only when a factorization fails.
    pub mle_nugget: f64,
}

impl Default for BoConfig {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::Ucb,
            norm_bound: 1.0,
            noise_scale: 0.05,
            misspec: 0.0,
            delta: 0.05,
            lambda: LambdaMode::Decaying,
            horizon: 40,
            n_init: 8,
            sigma_eps: 0.05,
            mle_every: Some(1),
            mle_nugget: 0.0,
        }
    }
}

impl BoConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::Config("delta must lie in (0, 1)".into()));
        }
        for (name, v) in [
            ("norm_bound", self.norm_bound),
            ("noise_scale", self.noise_scale),
            ("misspec", self.misspec),
            ("sigma_eps", self.sigma_eps),
            ("mle_nugget", self.mle_nugget),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be finite and >= 0")));
            }
        }
        if let LambdaMode::Fixed(v) = self.lambda {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config("fixed lambda must be > 0".into()));
            }
        }
        if self.mle_every == Some(0) {
            return Err(Error::Config("mle_every must be >= 1".into()));
        }
        Ok(())
    }
}

/// Confidence and sampling widths at round `t`, given the information gain of
/// the realized history:
///
/// ```text
/// β_t = B + R·√(2·(γ_{t-1} + n(λ_t - 1)/2 + ln(1/δ))) + b·√(n-1)/√(1 + 2/n)
/// ```
///
/// with `n = n_init + t`; the sampling width `v_t` replaces `ln(1/δ)` by
/// `ln(2/δ)`.
pub fn schedule(config: &BoConfig, t: usize, info_gain: f64, lambda: f64) -> (f64, f64) {
    let n = (config.n_init + t) as f64;
    let slack = info_gain + n * (lambda - 1.0) / 2.0;
    let mis = config.misspec * (n - 1.0).max(0.0).sqrt() / (1.0 + 2.0 / n).sqrt();
    let width = |log_term: f64| {
        let inner = 2.0 * (slack + log_term).max(0.0);
        config.norm_bound + config.noise_scale * inner.sqrt() + mis
    };
    (
        width((1.0 / config.delta).ln()),
        width((2.0 / config.delta).ln()),
    )
}

/// Farthest-first (maximin) design over mesh nodes under the shortest-path
/// metric. The first node is uniform; each later node maximizes the distance
/// to the chosen set, with ties going to the lowest index.
pub fn maximin_design(mesh: &Mesh, n_init: usize, rng: &mut ChaCha8Rng) -> Vec<NodeIndex> {
    let n = mesh.n_nodes();
    if n_init == 0 || n == 0 {
        return Vec::new();
    }
    let first = NodeIndex(rng.gen_range(0..n));
    let mut chosen = vec![first];
    let mut min_dist = mesh.node_distances(first);
    while chosen.len() < n_init.min(n) {
        let mut best = 0;
        for i in 1..n {
            if min_dist[i] > min_dist[best] {
                best = i;
            }
        }
        chosen.push(NodeIndex(best));
        for (i, d) in mesh.node_distances(NodeIndex(best)).into_iter().enumerate() {
            if d < min_dist[i] {
                min_dist[i] = d;
            }
        }
    }
    chosen
}

/// Observes the objective at the given nodes with iid Gaussian noise.
pub fn observe_initial(
    objective: &NodeObjective,
    nodes: &[NodeIndex],
    sigma_eps: f64,
    rng: &mut ChaCha8Rng,
) -> Vec<(NodeIndex, f64)> {
    nodes
        .iter()
        .map(|&i| {
            let noise: f64 = StandardNormal.sample(rng);
            (i, objective.value(i) + sigma_eps * noise)
        })
        .collect()
}

/// Upper-confidence-bound step: argmax of `μ + β·σ` over nodes, ties to the
/// lowest index. Returns the chosen node and its score.
pub fn acquire_ucb(state: &PosteriorState, beta: f64) -> (NodeIndex, f64) {
    let (mean, var) = state.mean_var_nodes();
    let mut best = 0;
    let mut best_score = f64::NEG_INFINITY;
    for i in 0..mean.len() {
        let score = mean[i] + beta * var[i].max(0.0).sqrt();
        if score > best_score {
            best = i;
            best_score = score;
        }
    }
    (NodeIndex(best), best_score)
}

/// Thompson-sampling step: draws one joint sample of the posterior over all
/// nodes, scaled by the sampling width `v`, and takes its argmax. `v = 0`
/// degenerates to the posterior-mean maximizer and draws nothing.
pub fn acquire_ts(
    state: &PosteriorState,
    v: f64,
    rng: &mut ChaCha8Rng,
) -> Result<(NodeIndex, f64)> {
    let (mean, _) = state.mean_var_nodes();
    let sample = if v == 0.0 {
        mean
    } else {
        let pts = state.kernel().mesh().node_points().to_vec();
        let cov = state.cov_block(&pts);
        let delta = crate::kernels::dense_cov_sample(&cov, rng)?;
        mean + delta * v
    };
    let mut best = 0;
    for i in 1..sample.len() {
        if sample[i] > sample[best] {
            best = i;
        }
    }
    Ok((NodeIndex(best), sample[best]))
}

const MLE_GRID: usize = 25;
const MLE_SPAN_DECADES: f64 = 2.0;

fn log_grid(center: f64, half_decades: f64, count: usize) -> Vec<f64> {
    let mid = (count / 2) as f64;
    (0..count)
        .map(|i| center * 10f64.powf((i as f64 - mid) * half_decades / mid))
        .collect()
}

/// Penalized negative marginal log-likelihood
/// `½ yᵀ(K̃ + σ_ε²I)⁻¹ y + ½ log|K̃|` with `K̃ = K + nugget·I`.
fn penalized_nll(gram: &DMatrix<f64>, y: &DVector<f64>, sigma_eps: f64, nugget: f64) -> Option<f64> {
    let fixed = [nugget];
    let ladder: &[f64] = if nugget > 0.0 {
        &fixed
    } else {
        &[0.0, 1e-10, 1e-8, 1e-6, 1e-4, 1e-2]
    };
    let t = gram.nrows();
    for &ng in ladder {
        let mut ktilde = gram.clone();
        for i in 0..t {
            ktilde[(i, i)] += ng;
        }
        let Some(chol_model) = Cholesky::new(ktilde.clone()) else {
            continue;
        };
        let mut obs = ktilde;
        for i in 0..t {
            obs[(i, i)] += sigma_eps * sigma_eps;
        }
        let Some(chol_obs) = Cholesky::new(obs) else {
            continue;
        };
        let alpha = chol_obs.solve(y);
        let log_det = 2.0 * chol_model.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        let val = 0.5 * y.dot(&alpha) + 0.5 * log_det;
        if val.is_finite() {
            return Some(val);
        }
    }
    None
}

/// Refits the kernel hyperparameter by minimizing the penalized marginal
/// likelihood over a two-level log-spaced grid: 25 points spanning ±2 decades
/// around the current value, then 25 points spanning ± one coarse step around
/// the level-one minimizer. Candidates whose Gram matrix cannot be factored
/// (even after the nugget ladder) are skipped; it is an error only if every
/// candidate fails.
pub fn mle_update(
    kernel: &KernelModel,
    points: &[GraphPoint],
    ys: &[f64],
    sigma_eps: f64,
    nugget: f64,
) -> Result<KernelModel> {
    if points.len() < 2 {
        return kernel.rebuilt_with(kernel.hyperparameter());
    }
    let y = DVector::from_column_slice(ys);
    let mut best: Option<(f64, f64, KernelModel)> = None;
    let scan = |grid: &[f64], best: &mut Option<(f64, f64, KernelModel)>| {
        for &theta in grid {
            let Ok(cand) = kernel.rebuilt_with(theta) else {
                continue;
            };
            let gram = cand.gram(points);
            let Some(nll) = penalized_nll(&gram, &y, sigma_eps, nugget) else {
                continue;
            };
            if best.as_ref().is_none_or(|(b, _, _)| nll < *b) {
                *best = Some((nll, theta, cand));
            }
        }
    };
    scan(&log_grid(kernel.hyperparameter(), MLE_SPAN_DECADES, MLE_GRID), &mut best);
    let center = best
        .as_ref()
        .map(|(_, theta, _)| *theta)
        .ok_or_else(|| {
            Error::Factorization(
                "no hyperparameter candidate produced a usable likelihood".into(),
            )
        })?;
    let step = MLE_SPAN_DECADES / (MLE_GRID / 2) as f64;
    scan(&log_grid(center, step, MLE_GRID), &mut best);
    Ok(best.expect("level-one search succeeded").2)
}

/// One row of an episode: initialization rows use `t ≤ 0` and no acquisition
/// score; acquisition rounds are `t = 1..=horizon`.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub t: i64,
    pub node: usize,
    /// UCB score or sampled value of the chosen node; None during
    /// initialization.
    pub acq_value: Option<f64>,
    /// Observed (possibly noisy) value.
    pub y: f64,
    /// Best noiseless objective value among all nodes queried so far.
    pub incumbent: f64,
    /// Gap between the optimum and the incumbent; nonincreasing over rows.
    pub regret: f64,
    /// Kernel hyperparameter in effect when the node was chosen.
    pub theta: f64,
}

/// Full trace of one episode.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub steps: Vec<StepRecord>,
    pub final_theta: f64,
    pub wall_secs: f64,
}

impl RunRecord {
    /// Regret after the final row (∞ for an empty record).
    pub fn final_regret(&self) -> f64 {
        self.steps.last().map_or(f64::INFINITY, |s| s.regret)
    }

    /// First acquisition round whose regret is within `tol`, if any.
    pub fn rounds_to(&self, tol: f64) -> Option<usize> {
        self.steps
            .iter()
            .find(|s| s.t >= 1 && s.regret <= tol)
            .map(|s| s.t as usize)
    }

    /// Whether any acquisition round reached regret `tol`.
    pub fn reached(&self, tol: f64) -> bool {
        self.rounds_to(tol).is_some()
    }
}

fn recondition(
    kernel: Arc<KernelModel>,
    lambda: f64,
    points: &[GraphPoint],
    ys: &[f64],
) -> Result<PosteriorState> {
    let mut state = PosteriorState::new(kernel, lambda)?;
    for (p, y) in points.iter().zip(ys) {
        state = state.condition(*p, *y)?;
    }
    Ok(state)
}

/// Runs one episode. The initial design (nodes and already-noisy
/// observations) is supplied by the caller so that competing kernel families
/// can share identical initializations; `rng` drives Thompson draws and the
/// observation noise of the acquisition rounds.
pub fn run(
    objective: &NodeObjective,
    kernel: Arc<KernelModel>,
    config: &BoConfig,
    init: &[(NodeIndex, f64)],
    rng: &mut ChaCha8Rng,
) -> Result<RunRecord> {
    config.validate()?;
    if objective.n_nodes() != kernel.mesh().n_nodes() {
        return Err(Error::Config(format!(
            "objective covers {} nodes but the kernel mesh has {}",
            objective.n_nodes(),
            kernel.mesh().n_nodes()
        )));
    }
    let start = Instant::now();
    let mut kernel = kernel;
    let mut theta = kernel.hyperparameter();
    let mut state = PosteriorState::new(kernel.clone(), config.lambda.at(1))?;
    let mut steps = Vec::with_capacity(init.len() + config.horizon);
    let mut incumbent = f64::NEG_INFINITY;

    for (j, &(node, y)) in init.iter().enumerate() {
        incumbent = incumbent.max(objective.value(node));
        state = state.condition(*kernel.mesh().node_point(node), y)?;
        steps.push(StepRecord {
            t: j as i64 + 1 - init.len() as i64,
            node: node.0,
            acq_value: None,
            y,
            incumbent,
            regret: objective.best_value() - incumbent,
            theta,
        });
    }

    for t in 1..=config.horizon {
        if let Some(every) = config.mle_every {
            if (t - 1) % every == 0 && state.len() >= 2 {
                let refit = mle_update(
                    &kernel,
                    state.points(),
                    state.observations(),
                    config.sigma_eps,
                    config.mle_nugget,
                )?;
                if refit.hyperparameter() != kernel.hyperparameter() {
                    kernel = Arc::new(refit);
                    let pts = state.points().to_vec();
                    let obs = state.observations().to_vec();
                    state = recondition(kernel.clone(), state.lambda(), &pts, &obs)?;
                }
                theta = kernel.hyperparameter();
            }
        }
        let lambda_t = config.lambda.at(t);
        state = state.with_lambda(lambda_t)?;
        let (beta, v) = schedule(config, t, state.info_gain(), lambda_t);
        let (node, acq_value) = match config.algorithm {
            Algorithm::Ucb => acquire_ucb(&state, beta),
            Algorithm::Ts => acquire_ts(&state, v, rng)?,
        };
        let noise: f64 = StandardNormal.sample(rng);
        let y = objective.value(node) + config.sigma_eps * noise;
        incumbent = incumbent.max(objective.value(node));
        steps.push(StepRecord {
            t: t as i64,
            node: node.0,
            acq_value: Some(acq_value),
            y,
            incumbent,
            regret: objective.best_value() - incumbent,
            theta,
        });
        state = state.condition(*kernel.mesh().node_point(node), y)?;
    }

    Ok(RunRecord {
        steps,
        final_theta: theta,
        wall_secs: start.elapsed().as_secs_f64(),
    })
}
