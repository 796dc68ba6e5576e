//! Randomized invariants across the geometry, kernel, posterior, and
//! experiment layers. Each suite runs at least 500 generated cases.

use std::collections::BTreeMap;
use std::sync::Arc;

use graphbo_core::artifacts;
use graphbo_core::bo::{
    self, maximin_design, observe_initial, Algorithm, BoConfig, LambdaMode,
};
use graphbo_core::experiment::{
    run_experiment, ExperimentConfig, FamilySpec, GraphSource, ObjectiveSpec,
};
use graphbo_core::fem::{assemble, MassMode};
use graphbo_core::graph::{EdgeId, EdgeRecord, GraphDocument, GraphPoint, MetricGraph, VertexRecord};
use graphbo_core::kernels::{KernelModel, WhittleMaternParams};
use graphbo_core::mesh::{Mesh, NodeIndex};
use graphbo_core::objectives::{BenchmarkKind, NodeObjective};
use graphbo_core::posterior::PosteriorState;
use graphbo_core::rng::stream;
use proptest::prelude::*;
use proptest::sample::Index;

// ---------------------------------------------------------------------------
// Generators
// ---------------------------------------------------------------------------

/// A connected random graph: a spanning tree over random planar vertices plus
/// a few extra edges. Declared lengths stretch the chord length, so geodesic
/// and Euclidean geometry genuinely disagree.
fn arb_graph() -> impl Strategy<Value = MetricGraph> {
    (3usize..=7)
        .prop_flat_map(move |n_v| {
            (
                prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0), n_v),
                prop::collection::vec(any::<Index>(), n_v - 1),
                prop::collection::vec((any::<Index>(), any::<Index>()), 0..=3),
                prop::collection::vec(1.0f64..2.0, n_v + 3),
            )
        })
        .prop_map(|(coords, parents, extras, stretches)| {
            let n_v = coords.len();
            let vertices: Vec<VertexRecord> = coords
                .iter()
                .enumerate()
                .map(|(i, &(x, y))| VertexRecord { id: format!("v{i}"), x, y })
                .collect();
            let mut pairs: Vec<(usize, usize)> = parents
                .iter()
                .enumerate()
                .map(|(i, p)| (p.index(i + 1), i + 1))
                .collect();
            for (a, b) in &extras {
                let (i, j) = (a.index(n_v), b.index(n_v));
                if i != j {
                    pairs.push((i, j));
                }
            }
            let edges: Vec<EdgeRecord> = pairs
                .iter()
                .zip(&stretches)
                .enumerate()
                .map(|(k, (&(i, j), &stretch))| {
                    let (xi, yi) = coords[i];
                    let (xj, yj) = coords[j];
                    let chord = ((xi - xj).powi(2) + (yi - yj).powi(2)).sqrt();
                    EdgeRecord {
                        id: format!("e{k}"),
                        tail: format!("v{i}"),
                        head: format!("v{j}"),
                        length: Some((chord * stretch).max(0.05)),
                        polyline: None,
                    }
                })
                .collect();
            let doc = GraphDocument { vertices, edges, anchors: BTreeMap::new() };
            MetricGraph::from_document(&doc).expect("generated graph is valid")
        })
}

/// A point on the graph: an edge pick plus an arclength fraction. Fractions
/// 0 and 1 canonicalize to vertices, so both point kinds appear.
fn pick_point(graph: &MetricGraph, edge: &Index, frac: f64) -> GraphPoint {
    let e = EdgeId(edge.index(graph.n_edges()));
    let s = frac.clamp(0.0, 1.0) * graph.edge(e).length;
    graph.point(e, s).expect("arclength stays within the edge")
}

/// A small mesh over either a fresh random graph or a bundled fixture, capped
/// to keep dense checks fast.
fn small_mesh() -> impl Strategy<Value = Arc<Mesh>> {
    (arb_graph(), 0.3f64..0.8).prop_map(|(graph, h)| {
        let total = graph.total_length();
        // Cap the node count near 60 regardless of the drawn geometry.
        let h_eff = h.max(total / 50.0);
        Arc::new(Mesh::build(Arc::new(graph), h_eff).expect("mesh builds"))
    })
}

/// Any of the kernel constructions on the given mesh.
fn build_kernel(mesh: &Arc<Mesh>, pick: usize, kappa: f64, scale: f64) -> KernelModel {
    let fem = Arc::new(assemble(mesh));
    let params = |alpha| WhittleMaternParams { alpha, kappa, tau: 1.0 };
    match pick % 4 {
        0 => KernelModel::precision(mesh.clone(), fem, params(1.0), MassMode::Lumped)
            .expect("integer-exponent kernel"),
        1 => KernelModel::precision(mesh.clone(), fem, params(0.5), MassMode::Consistent)
            .expect("half-integer kernel"),
        2 => KernelModel::rational(mesh.clone(), fem, params(0.8), 2).expect("fractional kernel"),
        _ => KernelModel::euclidean(mesh.clone(), scale, 1.0 / kappa).expect("euclidean kernel"),
    }
}

// ---------------------------------------------------------------------------
// Suites
// ---------------------------------------------------------------------------

proptest! {
    #![proptest_config(ProptestConfig { cases: 512, ..ProptestConfig::default() })]

    /// Shortest-path distance is a metric: symmetric, zero on the diagonal,
    /// and no detour through a third point is shorter.
    #[test]
    fn shortest_paths_satisfy_the_triangle_inequality(
        graph in arb_graph(),
        edges in prop::collection::vec(any::<Index>(), 3),
        fracs in prop::collection::vec(0.0f64..=1.0, 3),
    ) {
        let a = pick_point(&graph, &edges[0], fracs[0]);
        let b = pick_point(&graph, &edges[1], fracs[1]);
        let c = pick_point(&graph, &edges[2], fracs[2]);
        let scale = 1.0 + graph.total_length();
        prop_assert!(graph.distance(&a, &a).abs() <= 1e-12 * scale);
        prop_assert!((graph.distance(&a, &b) - graph.distance(&b, &a)).abs() <= 1e-12 * scale);
        let direct = graph.distance(&a, &c);
        let detour = graph.distance(&a, &b) + graph.distance(&b, &c);
        prop_assert!(
            direct <= detour + 1e-9 * scale,
            "direct {direct} > detour {detour}"
        );
    }

    /// Every kernel construction yields a symmetric positive-semidefinite
    /// Gram matrix on any probe set.
    #[test]
    fn kernel_grams_are_symmetric_and_psd(
        mesh in small_mesh(),
        pick in 0usize..4,
        kappa in 0.2f64..3.0,
        scale in 0.5f64..2.0,
        edges in prop::collection::vec(any::<Index>(), 2..=6),
        fracs in prop::collection::vec(0.0f64..=1.0, 6),
    ) {
        let kernel = build_kernel(&mesh, pick, kappa, scale);
        let pts: Vec<GraphPoint> = edges
            .iter()
            .zip(&fracs)
            .map(|(e, &f)| pick_point(mesh.graph(), e, f))
            .collect();
        let gram = kernel.gram(&pts);
        let bound = 1e-9 * (1.0 + gram.diagonal().amax());
        for i in 0..pts.len() {
            for j in 0..i {
                prop_assert!(
                    (gram[(i, j)] - gram[(j, i)]).abs() <= bound,
                    "asymmetry at ({i},{j}): {} vs {}", gram[(i, j)], gram[(j, i)]
                );
            }
        }
        let eigs = gram.symmetric_eigenvalues();
        let min = eigs.min();
        let max = eigs.max();
        prop_assert!(min >= -1e-8 * (1.0 + max.abs()), "negative eigenvalue {min}");
    }

    /// Conditioning on one more observation never raises the posterior
    /// variance anywhere (the regularizer held fixed).
    #[test]
    fn posterior_variance_never_increases(
        mesh in small_mesh(),
        pick in 0usize..4,
        kappa in 0.2f64..3.0,
        lambda in 1e-3f64..1.0,
        steps in prop::collection::vec((any::<Index>(), -2.0f64..2.0), 1..=8),
        probe in any::<Index>(),
    ) {
        let kernel = Arc::new(build_kernel(&mesh, pick, kappa, 1.0));
        let n = mesh.n_nodes();
        let probe_pt = *mesh.node_point(NodeIndex(probe.index(n)));
        let mut state = PosteriorState::new(kernel, lambda).expect("empty posterior");
        let mut last = state.var_at(&probe_pt);
        for (node, y) in &steps {
            let pt = *mesh.node_point(NodeIndex(node.index(n)));
            state = state.condition(pt, *y).expect("conditioning succeeds");
            let var = state.var_at(&probe_pt);
            prop_assert!(var <= last + 1e-9 * (1.0 + last.abs()), "variance rose {last} -> {var}");
            last = var;
        }
    }

    /// The realized-history information gain grows monotonically with every
    /// observation.
    #[test]
    fn information_gain_is_monotone_in_history(
        mesh in small_mesh(),
        pick in 0usize..4,
        kappa in 0.2f64..3.0,
        lambda in 1e-3f64..1.0,
        steps in prop::collection::vec((any::<Index>(), -2.0f64..2.0), 1..=8),
    ) {
        let kernel = Arc::new(build_kernel(&mesh, pick, kappa, 1.0));
        let n = mesh.n_nodes();
        let mut state = PosteriorState::new(kernel, lambda).expect("empty posterior");
        let mut last = state.info_gain();
        prop_assert!(last.abs() <= 1e-12, "empty history has zero info gain");
        for (node, y) in &steps {
            let pt = *mesh.node_point(NodeIndex(node.index(n)));
            state = state.condition(pt, *y).expect("conditioning succeeds");
            let gain = state.info_gain();
            prop_assert!(gain >= last - 1e-9 * (1.0 + last.abs()), "gain fell {last} -> {gain}");
            last = gain;
        }
    }

    /// Within an episode the incumbent never falls, the simple regret never
    /// rises, and the two stay consistent with the optimum value.
    #[test]
    fn episode_incumbents_and_regrets_are_monotone(
        mesh in small_mesh(),
        values in prop::collection::vec(-3.0f64..3.0, 60),
        algorithm in prop::sample::select(vec![Algorithm::Ucb, Algorithm::Ts]),
        fixed_lambda in prop::option::of(0.05f64..1.0),
        sigma_eps in prop::sample::select(vec![0.0f64, 0.1]),
        refit in any::<bool>(),
        seed in 0u64..1_000,
    ) {
        let n = mesh.n_nodes();
        let objective = NodeObjective::from_values(
            "synthetic",
            values.iter().cycle().take(n).cloned().collect::<Vec<_>>(),
        )
        .expect("values are finite");
        let kernel = Arc::new(build_kernel(&mesh, 0, 1.0, 1.0));
        let config = BoConfig {
            algorithm,
            horizon: 5,
            n_init: 3,
            sigma_eps,
            noise_scale: sigma_eps,
            lambda: fixed_lambda.map_or(LambdaMode::Decaying, LambdaMode::Fixed),
            mle_every: if refit { Some(2) } else { None },
            mle_nugget: 1e-2,
            ..BoConfig::default()
        };
        let mut rng = stream(seed, "episode", &[]);
        let design = maximin_design(&mesh, config.n_init, &mut rng);
        let init = observe_initial(&objective, &design, config.sigma_eps, &mut rng);
        let record = bo::run(&objective, kernel, &config, &init, &mut rng).expect("episode runs");
        prop_assert_eq!(record.steps.len(), config.n_init + config.horizon);
        let best = objective.best_value();
        let mut incumbent = f64::NEG_INFINITY;
        for step in &record.steps {
            prop_assert!(step.incumbent >= incumbent - 1e-12, "incumbent fell");
            incumbent = step.incumbent;
            prop_assert!((step.regret - (best - step.incumbent)).abs() <= 1e-12);
            prop_assert!(step.regret >= -1e-12);
        }
        let reached = record.steps.iter().any(|s| s.t >= 1 && s.regret <= 1e-6);
        prop_assert_eq!(record.reached(1e-6), reached);
    }

    /// Re-running an experiment configuration reproduces every CSV artifact
    /// byte for byte.
    #[test]
    fn experiment_csv_artifacts_are_deterministic(
        kind in prop::sample::select(vec![
            BenchmarkKind::Ackley,
            BenchmarkKind::Rastrigin,
            BenchmarkKind::Levy,
        ]),
        algorithm in prop::sample::select(vec![Algorithm::Ucb, Algorithm::Ts]),
        n_rep in 1usize..=2,
        seed in 0u64..1_000,
    ) {
        let config = ExperimentConfig {
            graph: GraphSource::Fixture("open-rectangle".into()),
            h: 0.5,
            objective: ObjectiveSpec::Benchmark { kind, anchors: kind.label().into() },
            families: vec![
                FamilySpec::Spde { alpha: 1.0, kappa: None, tau: 1.0, rational_m: None, label: None },
                FamilySpec::Euclidean { sigma: 1.0, ell: None, label: None },
            ],
            bo: BoConfig {
                algorithm,
                horizon: 3,
                n_init: 4,
                mle_every: None,
                ..BoConfig::default()
            },
            n_rep,
            tol: 1e-3,
            seed,
            out_dir: None,
        };
        let a = run_experiment(&config).expect("first run");
        let b = run_experiment(&config).expect("second run");
        prop_assert_eq!(artifacts::regret_csv(&a.report), artifacts::regret_csv(&b.report));
        prop_assert_eq!(artifacts::reach_rate_csv(&a.report), artifacts::reach_rate_csv(&b.report));
        prop_assert_eq!(
            artifacts::iters_to_tol_csv(&a.report),
            artifacts::iters_to_tol_csv(&b.report)
        );
        for (fa, fb) in a.families.iter().zip(&b.families) {
            for (ra, rb) in fa.records.iter().zip(&fb.records) {
                prop_assert_eq!(artifacts::run_csv(ra), artifacts::run_csv(rb));
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Aggregate-consistency checks
// ---------------------------------------------------------------------------

/// The reported reach rate and per-step mean regret must be recomputable from
/// the per-run CSV regret columns alone.
#[test]
fn reported_metrics_match_a_recount_from_run_csvs() {
    let config = ExperimentConfig {
        graph: GraphSource::Fixture("open-rectangle".into()),
        h: 0.5,
        objective: ObjectiveSpec::Benchmark {
            kind: BenchmarkKind::Ackley,
            anchors: "ackley".into(),
        },
        families: vec![
            FamilySpec::Spde { alpha: 1.0, kappa: None, tau: 1.0, rational_m: None, label: None },
            FamilySpec::Euclidean { sigma: 1.0, ell: None, label: None },
        ],
        bo: BoConfig { horizon: 6, n_init: 4, mle_every: None, ..BoConfig::default() },
        n_rep: 4,
        tol: 0.05,
        seed: 3,
        out_dir: None,
    };
    let outcome = run_experiment(&config).expect("experiment runs");
    for (family, metrics) in outcome.families.iter().zip(&outcome.report.families) {
        let mut reached = 0usize;
        for record in &family.records {
            let csv = artifacts::run_csv(record);
            let regrets: Vec<(i64, f64)> = csv
                .lines()
                .skip(1)
                .map(|line| {
                    let cells: Vec<&str> = line.split(',').collect();
                    (cells[0].parse().unwrap(), cells[5].parse().unwrap())
                })
                .collect();
            if regrets.iter().any(|&(t, r)| t >= 1 && r <= config.tol) {
                reached += 1;
            }
            for pair in regrets.windows(2) {
                assert!(pair[1].1 <= pair[0].1 + 1e-12, "regret rose inside a run CSV");
            }
        }
        let recounted = reached as f64 / family.records.len() as f64;
        assert_eq!(metrics.reach_rate, recounted, "{}: reach rate mismatch", family.label);
        let first = metrics.mean_regret.first().copied().unwrap();
        let last = metrics.mean_regret.last().copied().unwrap();
        assert!(last <= first + 1e-12, "{}: mean regret ended above its start", family.label);
    }
}
