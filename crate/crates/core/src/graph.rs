//! Compact metric graphs: vertices embedded in the plane, edges with
//! positive lengths, points that live *on* edges, shortest-path and
//! straight-line (embedded) distances.
//!
//! Graphs are loaded from a small JSON document format:
//!
//! ```json
//! {
//!   "vertices": [{"id": "a", "x": 0.0, "y": 0.0}, ...],
//!   "edges": [{"id": "e1", "tail": "a", "head": "b", "length": 2.0,
//!              "polyline": [[0.0, 0.0], [1.0, 0.5], ...]}],
//!   "anchors": {"ackley": {"a": 2.0, "b": 0.0}}
//! }
//! ```
//!
//! `length` defaults to the polyline arclength when a polyline is given and
//! to the straight-line distance between the endpoints otherwise. Anchor
//! sets are optional per-vertex scalars used by the benchmark objectives.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Index of a vertex in a [`MetricGraph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct VertexId(pub usize);

/// Index of an edge in a [`MetricGraph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EdgeId(pub usize);

/// A point on a metric graph: either a vertex or an interior point of an
/// edge at arclength `s` from the edge tail. Edge endpoints are always
/// canonicalized to the `Vertex` variant, so equality of points is
/// well-defined at shared vertices.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GraphPoint {
    Vertex(VertexId),
    Interior { edge: EdgeId, s: f64 },
}

#[derive(Debug, Clone)]
pub struct Vertex {
    pub id: String,
    pub pos: [f64; 2],
}

#[derive(Debug, Clone)]
pub struct Edge {
    pub id: String,
    pub tail: VertexId,
    pub head: VertexId,
    pub length: f64,
    /// Embedded geometry as a polyline from tail to head; always holds at
    /// least the two endpoint coordinates.
    polyline: Vec<[f64; 2]>,
    /// Cumulative arclength along `polyline` (same length as `polyline`).
    cumlen: Vec<f64>,
}

/// JSON document for a vertex.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VertexRecord {
    pub id: String,
    pub x: f64,
    pub y: f64,
}

/// JSON document for an edge.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EdgeRecord {
    pub id: String,
    pub tail: String,
    pub head: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub length: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub polyline: Option<Vec<[f64; 2]>>,
}

/// Top-level JSON document for a metric graph.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GraphDocument {
    pub vertices: Vec<VertexRecord>,
    pub edges: Vec<EdgeRecord>,
    /// Optional named per-vertex scalar fields (benchmark anchors).
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub anchors: BTreeMap<String, BTreeMap<String, f64>>,
}

/// A validated compact metric graph.
#[derive(Debug, Clone)]
pub struct MetricGraph {
    vertices: Vec<Vertex>,
    edges: Vec<Edge>,
    /// Per-vertex list of (incident edge, opposite vertex).
    adjacency: Vec<Vec<(EdgeId, VertexId)>>,
    /// Named anchor sets, indexed by vertex.
    anchor_sets: BTreeMap<String, Vec<f64>>,
}

const REL_TOL: f64 = 1e-9;

fn polyline_cumlen(points: &[[f64; 2]]) -> Vec<f64> {
    let mut cum = Vec::with_capacity(points.len());
    let mut acc = 0.0;
    cum.push(0.0);
    for w in points.windows(2) {
        let (dx, dy) = (w[1][0] - w[0][0], w[1][1] - w[0][1]);
        acc += dx.hypot(dy);
        cum.push(acc);
    }
    cum
}

impl MetricGraph {
    /// Parses and validates a JSON graph document.
    pub fn from_json_str(text: &str) -> Result<Self> {
        let doc: GraphDocument = serde_json::from_str(text)?;
        Self::from_document(&doc)
    }

    /// Reads a graph from a JSON file.
    pub fn from_path(path: &std::path::Path) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    /// Builds a validated graph from a parsed document. Vertices and edges
    /// are reordered by id so that indexing is deterministic regardless of
    /// document order.
    pub fn from_document(doc: &GraphDocument) -> Result<Self> {
        if doc.vertices.is_empty() {
            return Err(Error::InvalidGraph("no vertices".into()));
        }
        if doc.edges.is_empty() {
            return Err(Error::InvalidGraph("no edges".into()));
        }
        let mut vrecs = doc.vertices.clone();
        vrecs.sort_by(|a, b| a.id.cmp(&b.id));
        let mut index = BTreeMap::new();
        for (i, v) in vrecs.iter().enumerate() {
            if index.insert(v.id.clone(), VertexId(i)).is_some() {
                return Err(Error::InvalidGraph(format!("duplicate vertex id '{}'", v.id)));
            }
        }
        let vertices: Vec<Vertex> =
            vrecs.iter().map(|v| Vertex { id: v.id.clone(), pos: [v.x, v.y] }).collect();

        let mut erecs = doc.edges.clone();
        erecs.sort_by(|a, b| a.id.cmp(&b.id));
        let mut edge_ids = std::collections::BTreeSet::new();
        let mut edges = Vec::with_capacity(erecs.len());
        for rec in &erecs {
            if !edge_ids.insert(rec.id.clone()) {
                return Err(Error::InvalidGraph(format!("duplicate edge id '{}'", rec.id)));
            }
            let tail = *index.get(&rec.tail).ok_or_else(|| {
                Error::InvalidGraph(format!("edge '{}' tail '{}' not found", rec.id, rec.tail))
            })?;
            let head = *index.get(&rec.head).ok_or_else(|| {
                Error::InvalidGraph(format!("edge '{}' head '{}' not found", rec.id, rec.head))
            })?;
            let polyline = match &rec.polyline {
                Some(p) if p.len() >= 2 => p.clone(),
                Some(_) => {
                    return Err(Error::InvalidGraph(format!(
                        "edge '{}' polyline needs at least two points",
                        rec.id
                    )))
                }
                None => vec![vertices[tail.0].pos, vertices[head.0].pos],
            };
            let cumlen = polyline_cumlen(&polyline);
            let arclen = *cumlen.last().expect("nonempty");
            let length = match rec.length {
                Some(l) => {
                    if rec.polyline.is_some()
                        && (l - arclen).abs() > REL_TOL * l.abs().max(1.0)
                    {
                        return Err(Error::InvalidGraph(format!(
                            "edge '{}': polyline arclength {arclen} != declared length {l}",
                            rec.id
                        )));
                    }
                    l
                }
                None => arclen,
            };
            if length <= 0.0 || !length.is_finite() {
                return Err(Error::InvalidGraph(format!(
                    "edge '{}' has nonpositive length {length}",
                    rec.id
                )));
            }
            edges.push(Edge { id: rec.id.clone(), tail, head, length, polyline, cumlen });
        }

        let mut adjacency = vec![Vec::new(); vertices.len()];
        for (i, e) in edges.iter().enumerate() {
            adjacency[e.tail.0].push((EdgeId(i), e.head));
            if e.tail != e.head {
                adjacency[e.head.0].push((EdgeId(i), e.tail));
            }
        }

        let mut anchor_sets = BTreeMap::new();
        for (name, values) in &doc.anchors {
            let mut set = vec![f64::NAN; vertices.len()];
            for (vid, value) in values {
                let idx = index.get(vid).ok_or_else(|| {
                    Error::InvalidGraph(format!("anchor set '{name}': unknown vertex '{vid}'"))
                })?;
                set[idx.0] = *value;
            }
            if set.iter().any(|v| v.is_nan()) {
                return Err(Error::InvalidGraph(format!(
                    "anchor set '{name}' must assign a value to every vertex"
                )));
            }
            anchor_sets.insert(name.clone(), set);
        }

        let graph = Self { vertices, edges, adjacency, anchor_sets };
        graph.check_connected()?;
        Ok(graph)
    }

    fn check_connected(&self) -> Result<()> {
        let mut seen = vec![false; self.vertices.len()];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(u) = stack.pop() {
            for &(_, w) in &self.adjacency[u] {
                if !seen[w.0] {
                    seen[w.0] = true;
                    stack.push(w.0);
                }
            }
        }
        if seen.iter().all(|&s| s) {
            Ok(())
        } else {
            let missing: Vec<&str> = seen
                .iter()
                .enumerate()
                .filter(|(_, s)| !**s)
                .map(|(i, _)| self.vertices[i].id.as_str())
                .collect();
            Err(Error::InvalidGraph(format!(
                "graph is disconnected; unreachable vertices: {}",
                missing.join(", ")
            )))
        }
    }

    /// Interval graph: a single straight edge of the given length.
    pub fn interval(length: f64) -> Self {
        let doc = GraphDocument {
            vertices: vec![
                VertexRecord { id: "a".into(), x: 0.0, y: 0.0 },
                VertexRecord { id: "b".into(), x: length, y: 0.0 },
            ],
            edges: vec![EdgeRecord {
                id: "e".into(),
                tail: "a".into(),
                head: "b".into(),
                length: Some(length),
                polyline: None,
            }],
            anchors: BTreeMap::new(),
        };
        Self::from_document(&doc).expect("interval graph is valid")
    }

    /// Circle graph: one loop edge of the given circumference. The embedded
    /// geometry is a regular polygon scaled so its arclength matches the
    /// circumference exactly.
    pub fn circle(circumference: f64) -> Self {
        let n = 64usize;
        let side = circumference / n as f64;
        let radius = side / (2.0 * (std::f64::consts::PI / n as f64).sin());
        let polyline: Vec<[f64; 2]> = (0..=n)
            .map(|k| {
                let t = 2.0 * std::f64::consts::PI * k as f64 / n as f64;
                [radius * t.cos(), radius * t.sin()]
            })
            .collect();
        let doc = GraphDocument {
            vertices: vec![VertexRecord { id: "a".into(), x: radius, y: 0.0 }],
            edges: vec![EdgeRecord {
                id: "e".into(),
                tail: "a".into(),
                head: "a".into(),
                length: Some(circumference),
                polyline: Some(polyline),
            }],
            anchors: BTreeMap::new(),
        };
        Self::from_document(&doc).expect("circle graph is valid")
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn vertex(&self, v: VertexId) -> &Vertex {
        &self.vertices[v.0]
    }

    pub fn edge(&self, e: EdgeId) -> &Edge {
        &self.edges[e.0]
    }

    pub fn edges(&self) -> impl Iterator<Item = (EdgeId, &Edge)> {
        self.edges.iter().enumerate().map(|(i, e)| (EdgeId(i), e))
    }

    pub fn vertices(&self) -> impl Iterator<Item = (VertexId, &Vertex)> {
        self.vertices.iter().enumerate().map(|(i, v)| (VertexId(i), v))
    }

    /// Incident (edge, opposite vertex) pairs; loop edges appear once.
    pub fn incident(&self, v: VertexId) -> &[(EdgeId, VertexId)] {
        &self.adjacency[v.0]
    }

    /// Vertex degree counting loop edges twice.
    pub fn degree(&self, v: VertexId) -> usize {
        self.adjacency[v.0]
            .iter()
            .map(|&(e, _)| if self.edges[e.0].tail == self.edges[e.0].head { 2 } else { 1 })
            .sum()
    }

    /// Sum of all edge lengths.
    pub fn total_length(&self) -> f64 {
        self.edges.iter().map(|e| e.length).sum()
    }

    /// Named anchor set, if the document provided one.
    pub fn anchor_set(&self, name: &str) -> Option<&[f64]> {
        self.anchor_sets.get(name).map(|v| v.as_slice())
    }

    /// Canonicalized point on an edge at arclength `s` from the tail.
    /// Endpoint coordinates collapse to the shared vertex.
    pub fn point(&self, edge: EdgeId, s: f64) -> Result<GraphPoint> {
        let e = self
            .edges
            .get(edge.0)
            .ok_or_else(|| Error::InvalidPoint(format!("edge index {} out of range", edge.0)))?;
        if !s.is_finite() || s < 0.0 || s > e.length {
            return Err(Error::InvalidPoint(format!(
                "arclength {s} outside [0, {}] on edge '{}'",
                e.length, e.id
            )));
        }
        if s == 0.0 {
            Ok(GraphPoint::Vertex(e.tail))
        } else if s == e.length {
            Ok(GraphPoint::Vertex(e.head))
        } else {
            Ok(GraphPoint::Interior { edge, s })
        }
    }

    /// Planar coordinates of a point (interpolated along the edge polyline).
    pub fn embed(&self, p: &GraphPoint) -> [f64; 2] {
        match *p {
            GraphPoint::Vertex(v) => self.vertices[v.0].pos,
            GraphPoint::Interior { edge, s } => {
                let e = &self.edges[edge.0];
                let target = s / e.length * *e.cumlen.last().expect("nonempty");
                let k = match e
                    .cumlen
                    .binary_search_by(|c| c.partial_cmp(&target).expect("finite"))
                {
                    Ok(k) => k.min(e.polyline.len() - 2),
                    Err(k) => (k - 1).min(e.polyline.len() - 2),
                };
                let seg = e.cumlen[k + 1] - e.cumlen[k];
                let t = if seg > 0.0 { (target - e.cumlen[k]) / seg } else { 0.0 };
                let (a, b) = (e.polyline[k], e.polyline[k + 1]);
                [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]
            }
        }
    }

    /// Straight-line distance between the embedded coordinates of two points.
    pub fn euclidean_distance(&self, x: &GraphPoint, y: &GraphPoint) -> f64 {
        let (a, b) = (self.embed(x), self.embed(y));
        (a[0] - b[0]).hypot(a[1] - b[1])
    }

    /// Distances from a vertex to all vertices along the graph (Dijkstra).
    pub fn vertex_distances(&self, src: VertexId) -> Vec<f64> {
        let n = self.vertices.len();
        let mut dist = vec![f64::INFINITY; n];
        dist[src.0] = 0.0;
        let mut heap = std::collections::BinaryHeap::new();
        heap.push(HeapEntry { dist: 0.0, node: src.0 });
        while let Some(HeapEntry { dist: d, node: u }) = heap.pop() {
            if d > dist[u] {
                continue;
            }
            for &(e, w) in &self.adjacency[u] {
                let nd = d + self.edges[e.0].length;
                if nd < dist[w.0] {
                    dist[w.0] = nd;
                    heap.push(HeapEntry { dist: nd, node: w.0 });
                }
            }
        }
        dist
    }

    /// Shortest-path distance between two points along the graph.
    pub fn distance(&self, x: &GraphPoint, y: &GraphPoint) -> f64 {
        // Distances from the point to the endpoint vertices of its edge.
        let ends = |p: &GraphPoint| -> Vec<(VertexId, f64)> {
            match *p {
                GraphPoint::Vertex(v) => vec![(v, 0.0)],
                GraphPoint::Interior { edge, s } => {
                    let e = &self.edges[edge.0];
                    vec![(e.tail, s), (e.head, e.length - s)]
                }
            }
        };
        let mut best = f64::INFINITY;
        if let (GraphPoint::Interior { edge: ex, s: sx }, GraphPoint::Interior { edge: ey, s: sy }) =
            (x, y)
        {
            if ex == ey {
                best = (sx - sy).abs();
            }
        }
        let ends_x = ends(x);
        let ends_y = ends(y);
        for &(a, off_a) in &ends_x {
            let dist = self.vertex_distances(a);
            for &(b, off_b) in &ends_y {
                best = best.min(off_a + dist[b.0] + off_b);
            }
        }
        best
    }
}

/// Min-heap entry ordered by distance (then node index for determinism).
#[derive(PartialEq)]
struct HeapEntry {
    dist: f64,
    node: usize,
}

impl Eq for HeapEntry {}

impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        other
            .dist
            .total_cmp(&self.dist)
            .then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
