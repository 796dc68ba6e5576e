//! Uniform finite element meshes on metric graphs.
//!
//! Each edge of length `L` is split into `n = ceil(L / h_target)` equal
//! segments, so the realized width `h = L / n` never exceeds the target.
//! Degrees of freedom ("nodes") are the graph vertices followed by the
//! interior subdivision points, ordered by edge id and arclength. Node `i`
//! carries the usual piecewise-linear hat function, and any point on the
//! graph has at most two nonzero hat values.

use crate::error::{Error, Result};
use crate::graph::{EdgeId, GraphPoint, MetricGraph, VertexId};
use std::sync::Arc;

/// Index of a mesh node (vertices first, then edge interiors).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeIndex(pub usize);

/// Subdivision of one edge.
#[derive(Debug, Clone)]
pub struct EdgeMesh {
    /// Number of segments `n_e >= 1`.
    pub n_segments: usize,
    /// Realized segment width `h_e = L_e / n_e`.
    pub h: f64,
    /// The `n_e + 1` node indices along the edge from tail to head.
    pub nodes: Vec<NodeIndex>,
}

/// A mesh over a metric graph.
#[derive(Debug, Clone)]
pub struct Mesh {
    graph: Arc<MetricGraph>,
    h_target: f64,
    nodes: Vec<GraphPoint>,
    edge_meshes: Vec<EdgeMesh>,
    /// Node adjacency along edges: `(neighbor, segment length)` pairs.
    adjacency: Vec<Vec<(usize, f64)>>,
}

impl Mesh {
    /// Builds the uniform mesh with target width `h_target`.
    pub fn build(graph: Arc<MetricGraph>, h_target: f64) -> Result<Self> {
        if h_target <= 0.0 || !h_target.is_finite() {
            return Err(Error::Mesh(format!("target width must be positive, got {h_target}")));
        }
        let mut nodes: Vec<GraphPoint> =
            graph.vertices().map(|(v, _)| GraphPoint::Vertex(v)).collect();
        let mut edge_meshes = Vec::with_capacity(graph.n_edges());
        for (eid, edge) in graph.edges() {
            let n = (edge.length / h_target).ceil() as usize;
            let n = n.max(1);
            let h = edge.length / n as f64;
            let mut chain = Vec::with_capacity(n + 1);
            chain.push(NodeIndex(edge.tail.0));
            for j in 1..n {
                chain.push(NodeIndex(nodes.len()));
                nodes.push(GraphPoint::Interior { edge: eid, s: j as f64 * h });
            }
            chain.push(NodeIndex(edge.head.0));
            edge_meshes.push(EdgeMesh { n_segments: n, h, nodes: chain });
        }
        let mut adjacency = vec![Vec::new(); nodes.len()];
        for em in &edge_meshes {
            for w in em.nodes.windows(2) {
                adjacency[w[0].0].push((w[1].0, em.h));
                adjacency[w[1].0].push((w[0].0, em.h));
            }
        }
        Ok(Self { graph, h_target, nodes, edge_meshes, adjacency })
    }

    pub fn graph(&self) -> &Arc<MetricGraph> {
        &self.graph
    }

    pub fn h_target(&self) -> f64 {
        self.h_target
    }

    /// Number of degrees of freedom `N_h`.
    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    /// Graph location of node `i`.
    pub fn node_point(&self, i: NodeIndex) -> &GraphPoint {
        &self.nodes[i.0]
    }

    /// All node locations in index order.
    pub fn node_points(&self) -> &[GraphPoint] {
        &self.nodes
    }

    /// Node carrying the hat function of a vertex.
    pub fn vertex_node(&self, v: VertexId) -> NodeIndex {
        NodeIndex(v.0)
    }

    pub fn edge_mesh(&self, e: EdgeId) -> &EdgeMesh {
        &self.edge_meshes[e.0]
    }

    /// Largest realized segment width.
    pub fn h_max(&self) -> f64 {
        self.edge_meshes.iter().map(|em| em.h).fold(0.0, f64::max)
    }

    /// Hat function values at a point: at most two `(node, weight)` pairs
    /// with nonnegative weights summing to one.
    pub fn eval_hat_basis(&self, p: &GraphPoint) -> Vec<(NodeIndex, f64)> {
        match *p {
            GraphPoint::Vertex(v) => vec![(self.vertex_node(v), 1.0)],
            GraphPoint::Interior { edge, s } => {
                let em = &self.edge_meshes[edge.0];
                let k = ((s / em.h).floor() as usize).min(em.n_segments - 1);
                let t = (s - k as f64 * em.h) / em.h;
                let (left, right) = (em.nodes[k], em.nodes[k + 1]);
                if left == right {
                    // Degenerate single-segment loop: the sole hat is constant.
                    vec![(left, 1.0)]
                } else if t == 0.0 {
                    vec![(left, 1.0)]
                } else if t == 1.0 {
                    vec![(right, 1.0)]
                } else {
                    vec![(left, 1.0 - t), (right, t)]
                }
            }
        }
    }

    /// If the point coincides with a mesh node, returns that node.
    pub fn node_at(&self, p: &GraphPoint) -> Option<NodeIndex> {
        let basis = self.eval_hat_basis(p);
        match basis.as_slice() {
            [(n, w)] if *w == 1.0 => Some(*n),
            _ => None,
        }
    }

    /// Shortest-path distances from a node to every node, along the graph.
    /// Exact because mesh nodes subdivide edges without changing geometry.
    pub fn node_distances(&self, src: NodeIndex) -> Vec<f64> {
        let n = self.nodes.len();
        let mut dist = vec![f64::INFINITY; n];
        dist[src.0] = 0.0;
        // Nonnegative f64 bit patterns order like the values themselves.
        let mut heap = std::collections::BinaryHeap::new();
        heap.push(std::cmp::Reverse((0.0_f64.to_bits(), src.0)));
        while let Some(std::cmp::Reverse((bits, u))) = heap.pop() {
            let d = f64::from_bits(bits);
            if d > dist[u] {
                continue;
            }
            for &(w, len) in &self.adjacency[u] {
                let nd = d + len;
                if nd < dist[w] {
                    dist[w] = nd;
                    heap.push(std::cmp::Reverse((nd.to_bits(), w)));
                }
            }
        }
        dist
    }

    /// Shortest-path diameter over the mesh nodes.
    pub fn diameter(&self) -> f64 {
        (0..self.nodes.len())
            .map(|i| {
                self.node_distances(NodeIndex(i))
                    .into_iter()
                    .fold(0.0, f64::max)
            })
            .fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn node_count_matches_partition_formula() {
        let g = Arc::new(MetricGraph::interval(1.0));
        let mesh = Mesh::build(g, 0.25).unwrap();
        assert_eq!(mesh.n_nodes(), 2 + 3);
        assert_eq!(mesh.edge_mesh(EdgeId(0)).n_segments, 4);
        assert_abs_diff_eq!(mesh.edge_mesh(EdgeId(0)).h, 0.25);

        // ceil rule: length 1, target 0.3 -> 4 segments of width 0.25 <= 0.3.
        let g = Arc::new(MetricGraph::interval(1.0));
        let mesh = Mesh::build(g, 0.3).unwrap();
        assert_eq!(mesh.edge_mesh(EdgeId(0)).n_segments, 4);
        assert!(mesh.h_max() <= 0.3);
    }

    #[test]
    fn hat_basis_is_a_partition_of_unity() {
        let g = Arc::new(MetricGraph::circle(5.0));
        let mesh = Mesh::build(g.clone(), 0.3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let s = rng.gen::<f64>() * 5.0;
            let p = g.point(EdgeId(0), s).unwrap();
            let basis = mesh.eval_hat_basis(&p);
            assert!(basis.len() <= 2);
            let total: f64 = basis.iter().map(|&(_, w)| w).sum();
            assert_abs_diff_eq!(total, 1.0, epsilon = 1e-12);
            for &(_, w) in &basis {
                assert!(w >= 0.0);
            }
        }
    }

    #[test]
    fn hat_basis_is_one_at_nodes() {
        let g = Arc::new(MetricGraph::interval(2.0));
        let mesh = Mesh::build(g, 0.5).unwrap();
        for i in 0..mesh.n_nodes() {
            let p = *mesh.node_point(NodeIndex(i));
            let basis = mesh.eval_hat_basis(&p);
            assert_eq!(basis, vec![(NodeIndex(i), 1.0)]);
            assert_eq!(mesh.node_at(&p), Some(NodeIndex(i)));
        }
    }

    #[test]
    fn node_distances_match_point_distances() {
        let g = Arc::new(
            MetricGraph::from_json_str(
                r#"{
                "vertices": [{"id": "u", "x": 0, "y": 0}, {"id": "v", "x": 1, "y": 0}],
                "edges": [
                    {"id": "short", "tail": "u", "head": "v", "length": 1.0},
                    {"id": "long", "tail": "u", "head": "v", "length": 3.0}
                ]
            }"#,
            )
            .unwrap(),
        );
        let mesh = Mesh::build(g.clone(), 0.25).unwrap();
        let from = NodeIndex(3);
        let dist = mesh.node_distances(from);
        for (i, &d) in dist.iter().enumerate() {
            let expect = g.distance(mesh.node_point(from), mesh.node_point(NodeIndex(i)));
            assert_abs_diff_eq!(d, expect, epsilon = 1e-12);
        }
    }

    #[test]
    fn diameter_of_interval_is_its_length() {
        let g = Arc::new(MetricGraph::interval(3.0));
        let mesh = Mesh::build(g, 0.5).unwrap();
        assert_abs_diff_eq!(mesh.diameter(), 3.0, epsilon = 1e-12);
    }
}
