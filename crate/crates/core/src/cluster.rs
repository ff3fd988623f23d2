//! Connectivity-based clustering of the overlay graph.
//!
//! Originators are the `q` vertices with the highest two-hop return
//! probability. Each originator floods weighted messages; a message of
//! weight `w` arriving at `v` is credited to `v` and, while its TTL lasts,
//! forwarded to every neighbour with weight `w / deg(v)`. Every vertex then
//! joins the originator it accumulated the most weight from.

use std::collections::VecDeque;
use std::io::Write;

use crate::error::{Error, Result};
use crate::id::{xor_distance, Identifier};
use crate::overlay::{NodeIndex, Overlay};

pub const DEFAULT_CLUSTERS: usize = 4;
pub const DEFAULT_TTL: u32 = 5;
pub const DEFAULT_EPSILON: f64 = 1e-4;

/// Undirected, unweighted, loop-free graph with sorted adjacency lists.
#[derive(Clone, Debug)]
pub struct OverlayGraph {
    ids: Vec<Identifier>,
    adj: Vec<Vec<usize>>,
}

impl OverlayGraph {
    pub fn from_edges(
        ids: Vec<Identifier>,
        edges: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<Self> {
        let n = ids.len();
        let mut adj = vec![Vec::new(); n];
        for (a, b) in edges {
            if a >= n || b >= n {
                return Err(Error::InvalidInput(format!("edge ({a}, {b}) out of range")));
            }
            if a != b {
                adj[a].push(b);
                adj[b].push(a);
            }
        }
        for list in &mut adj {
            list.sort_unstable();
            list.dedup();
        }
        Ok(OverlayGraph { ids, adj })
    }

    /// Neighbour relations from every routing table, symmetrized.
    pub fn from_overlay(overlay: &Overlay) -> Self {
        let edges = (0..overlay.len()).flat_map(|i| {
            overlay
                .table(NodeIndex(i))
                .peers()
                .map(move |p| (i, p.index.0))
                .collect::<Vec<_>>()
        });
        Self::from_edges(overlay.ids().to_vec(), edges)
            .expect("routing tables only hold valid nodes")
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn id(&self, v: usize) -> Identifier {
        self.ids[v]
    }

    pub fn ids(&self) -> &[Identifier] {
        &self.ids
    }

    pub fn degree(&self, v: usize) -> usize {
        self.adj[v].len()
    }

    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.adj[v]
    }

    pub fn edge_count(&self) -> usize {
        self.adj.iter().map(Vec::len).sum::<usize>() / 2
    }
}

/// Probability that a two-step random walk from `v` returns to `v`.
pub fn two_hop_return_probability(graph: &OverlayGraph, v: usize) -> Result<f64> {
    let deg = graph.degree(v);
    if deg == 0 {
        return Err(Error::UndefinedThp(v));
    }
    let back: f64 = graph
        .neighbors(v)
        .iter()
        .map(|&u| 1.0 / graph.degree(u) as f64)
        .sum();
    Ok(back / deg as f64)
}

/// The `q` vertices with the highest return probability; ties go to the
/// smaller identifier. Isolated vertices are never chosen.
pub fn select_originators(graph: &OverlayGraph, q: usize) -> Result<Vec<NodeIndex>> {
    if q == 0 || q > graph.len() {
        return Err(Error::InvalidInput(format!(
            "cluster count {q} must be in 1..={}",
            graph.len()
        )));
    }
    let mut scored: Vec<(f64, usize)> = (0..graph.len())
        .filter_map(|v| two_hop_return_probability(graph, v).ok().map(|p| (p, v)))
        .collect();
    if scored.len() < q {
        return Err(Error::InvalidInput(format!(
            "only {} connected vertices for {q} clusters",
            scored.len()
        )));
    }
    scored.sort_by(|a, b| {
        b.0.total_cmp(&a.0)
            .then_with(|| graph.id(a.1).cmp(&graph.id(b.1)))
    });
    Ok(scored
        .into_iter()
        .take(q)
        .map(|(_, v)| NodeIndex(v))
        .collect())
}

/// Accumulated message weight per vertex, one column per originator.
#[derive(Clone, Debug)]
pub struct TotalWeights {
    pub originators: Vec<NodeIndex>,
    weights: Vec<Vec<f64>>,
}

impl TotalWeights {
    pub fn get(&self, v: usize, originator: usize) -> f64 {
        self.weights[v][originator]
    }

    pub fn row(&self, v: usize) -> &[f64] {
        &self.weights[v]
    }

    pub fn column_sum(&self, originator: usize) -> f64 {
        self.weights.iter().map(|r| r[originator]).sum()
    }
}

pub fn propagate_weights(
    graph: &OverlayGraph,
    originators: &[NodeIndex],
    ttl0: u32,
    epsilon: f64,
) -> Result<TotalWeights> {
    if ttl0 == 0 || epsilon.is_nan() || epsilon <= 0.0 {
        return Err(Error::InvalidInput(
            "ttl must be >= 1 and epsilon > 0".into(),
        ));
    }
    let mut weights = vec![vec![0.0; originators.len()]; graph.len()];
    let mut queue = VecDeque::new();
    for (l, origin) in originators.iter().enumerate() {
        let deg = graph.degree(origin.0);
        if deg == 0 {
            continue;
        }
        let w = 1.0 / deg as f64;
        if w >= epsilon {
            for &u in graph.neighbors(origin.0) {
                queue.push_back((u, l, w, ttl0));
            }
        }
    }
    while let Some((v, l, w, ttl)) = queue.pop_front() {
        weights[v][l] += w;
        let ttl = ttl - 1;
        if ttl == 0 {
            continue;
        }
        let forwarded = w / graph.degree(v) as f64;
        if forwarded < epsilon {
            continue;
        }
        for &u in graph.neighbors(v) {
            queue.push_back((u, l, forwarded, ttl));
        }
    }
    Ok(TotalWeights {
        originators: originators.to_vec(),
        weights,
    })
}

#[derive(Clone, Debug)]
pub struct ClusterAssignment {
    /// Cluster `c` is led by `originators[c]`.
    pub originators: Vec<NodeIndex>,
    pub cluster_of: Vec<usize>,
    pub members: Vec<Vec<NodeIndex>>,
    /// Vertices no flood reached; they fall back to the XOR-nearest originator.
    pub unreached: Vec<bool>,
    /// Empty until [`designate_monitors`] runs.
    pub monitors: Vec<NodeIndex>,
}

impl ClusterAssignment {
    pub fn len(&self) -> usize {
        self.originators.len()
    }

    pub fn is_empty(&self) -> bool {
        self.originators.is_empty()
    }

    pub fn is_monitor(&self, node: NodeIndex) -> bool {
        self.monitors.contains(&node)
    }

    /// Members of cluster `c` other than its monitor.
    pub fn data_nodes(&self, c: usize) -> impl Iterator<Item = NodeIndex> + '_ {
        self.members[c]
            .iter()
            .copied()
            .filter(move |n| !self.monitors.contains(n))
    }
}

/// Argmax over a vertex's weights, ties to the smaller originator ID.
fn heaviest(graph: &OverlayGraph, originators: &[NodeIndex], row: &[f64]) -> Option<usize> {
    (0..row.len()).filter(|&l| row[l] > 0.0).max_by(|&a, &b| {
        row[a]
            .total_cmp(&row[b])
            .then_with(|| graph.id(originators[b].0).cmp(&graph.id(originators[a].0)))
    })
}

/// Assigns every vertex to a cluster. Originators always lead their own.
pub fn assign_clusters(graph: &OverlayGraph, weights: &TotalWeights) -> ClusterAssignment {
    let originators = weights.originators.clone();
    let mut cluster_of = vec![0; graph.len()];
    let mut unreached = vec![false; graph.len()];
    for v in 0..graph.len() {
        cluster_of[v] = if let Some(l) = originators.iter().position(|o| o.0 == v) {
            l
        } else if let Some(l) = heaviest(graph, &originators, weights.row(v)) {
            l
        } else {
            unreached[v] = true;
            (0..originators.len())
                .min_by_key(|&l| xor_distance(graph.id(v), graph.id(originators[l].0)))
                .expect("at least one originator")
        };
    }
    let mut members = vec![Vec::new(); originators.len()];
    for (v, &c) in cluster_of.iter().enumerate() {
        members[c].push(NodeIndex(v));
    }
    ClusterAssignment {
        originators,
        cluster_of,
        members,
        unreached,
        monitors: Vec::new(),
    }
}

/// Each cluster's originator becomes its monitor.
pub fn designate_monitors(assignment: &mut ClusterAssignment) {
    assignment.monitors = assignment.originators.clone();
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CdcParams {
    pub clusters: usize,
    pub ttl: u32,
    pub epsilon: f64,
}

impl Default for CdcParams {
    fn default() -> Self {
        CdcParams {
            clusters: DEFAULT_CLUSTERS,
            ttl: DEFAULT_TTL,
            epsilon: DEFAULT_EPSILON,
        }
    }
}

/// Originator selection, flooding, assignment and monitor designation.
pub fn cdc_cluster(graph: &OverlayGraph, params: CdcParams) -> Result<ClusterAssignment> {
    let originators = select_originators(graph, params.clusters)?;
    let weights = propagate_weights(graph, &originators, params.ttl, params.epsilon)?;
    let mut assignment = assign_clusters(graph, &weights);
    designate_monitors(&mut assignment);
    Ok(assignment)
}

/// CSV with header `node_id,cluster_id,is_monitor,unreached`; the cluster
/// is named by its originator's identifier.
pub fn write_assignment_csv<W: Write>(
    out: W,
    graph: &OverlayGraph,
    assignment: &ClusterAssignment,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["node_id", "cluster_id", "is_monitor", "unreached"])?;
    for v in 0..graph.len() {
        let c = assignment.cluster_of[v];
        w.write_record([
            graph.id(v).to_hex(),
            graph.id(assignment.originators[c].0).to_hex(),
            assignment.is_monitor(NodeIndex(v)).to_string(),
            assignment.unreached[v].to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(n: usize) -> Vec<Identifier> {
        (0..n as u64).map(|v| Identifier::from_u64(v + 1)).collect()
    }

    fn graph(n: usize, edges: &[(usize, usize)]) -> OverlayGraph {
        OverlayGraph::from_edges(ids(n), edges.iter().copied()).unwrap()
    }

    fn star(leaves: usize) -> OverlayGraph {
        let edges: Vec<_> = (1..=leaves).map(|l| (0, l)).collect();
        graph(leaves + 1, &edges)
    }

    #[test]
    fn thp_examples() {
        let tri = graph(3, &[(0, 1), (1, 2), (2, 0)]);
        assert!((two_hop_return_probability(&tri, 0).unwrap() - 0.5).abs() < 1e-12);
        let s = star(4);
        assert!((two_hop_return_probability(&s, 0).unwrap() - 1.0).abs() < 1e-12);
        assert!((two_hop_return_probability(&s, 3).unwrap() - 0.25).abs() < 1e-12);
        let lonely = graph(2, &[]);
        assert!(matches!(
            two_hop_return_probability(&lonely, 1),
            Err(Error::UndefinedThp(1))
        ));
    }

    #[test]
    fn graph_is_symmetric_without_loops() {
        let g = graph(3, &[(0, 1), (1, 0), (2, 2)]);
        assert_eq!(g.neighbors(0), &[1]);
        assert_eq!(g.neighbors(1), &[0]);
        assert!(g.neighbors(2).is_empty());
        assert_eq!(g.edge_count(), 1);
    }

    #[test]
    fn originator_selection() {
        let s = star(4);
        assert_eq!(select_originators(&s, 1).unwrap(), vec![NodeIndex(0)]);
        assert_eq!(select_originators(&s, 5).unwrap().len(), 5);
        // Leaves tie at 0.25; the smallest identifier wins.
        assert_eq!(
            select_originators(&s, 2).unwrap(),
            vec![NodeIndex(0), NodeIndex(1)]
        );
        assert!(select_originators(&s, 6).is_err());
    }

    #[test]
    fn path_flood_by_hand() {
        let p = graph(3, &[(0, 1), (1, 2)]);
        let w1 = propagate_weights(&p, &[NodeIndex(0)], 1, 1e-9).unwrap();
        assert_eq!((w1.get(0, 0), w1.get(1, 0), w1.get(2, 0)), (0.0, 1.0, 0.0));
        let w2 = propagate_weights(&p, &[NodeIndex(0)], 2, 1e-9).unwrap();
        assert_eq!((w2.get(0, 0), w2.get(1, 0), w2.get(2, 0)), (0.5, 1.0, 0.5));
    }

    #[test]
    fn floor_above_one_silences_flood() {
        let s = star(4);
        let w = propagate_weights(&s, &[NodeIndex(0), NodeIndex(2)], 5, 1.5).unwrap();
        assert!((0..5).all(|v| w.row(v).iter().all(|&x| x == 0.0)));
    }

    #[test]
    fn weight_is_conserved_per_level() {
        let g = graph(6, &[(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (5, 0), (0, 3)]);
        for ttl in 1..6 {
            let w = propagate_weights(&g, &[NodeIndex(0)], ttl, 1e-15).unwrap();
            assert!((w.column_sum(0) - f64::from(ttl)).abs() < 1e-12);
        }
    }

    #[test]
    fn star_center_keeps_its_own_weight() {
        let s = star(4);
        let w = propagate_weights(&s, &[NodeIndex(0)], 3, 1e-9).unwrap();
        // Four leaves each return 1/4 at the second hop.
        assert!((w.get(0, 0) - 1.0).abs() < 1e-12);
        assert_eq!(heaviest(&s, &w.originators, w.row(0)), Some(0));
    }

    #[test]
    fn argmax_and_tie_break() {
        let g = graph(3, &[(0, 1), (1, 2)]);
        let originators = vec![NodeIndex(0), NodeIndex(2)];
        assert_eq!(heaviest(&g, &originators, &[0.4, 0.6]), Some(1));
        assert_eq!(heaviest(&g, &originators, &[0.5, 0.5]), Some(0));
        assert_eq!(heaviest(&g, &originators, &[0.0, 0.0]), None);
    }

    #[test]
    fn unreached_vertices_are_flagged() {
        // Vertex 3 is isolated.
        let g = graph(4, &[(0, 1), (1, 2)]);
        let w = propagate_weights(&g, &[NodeIndex(0)], 3, 1e-9).unwrap();
        let a = assign_clusters(&g, &w);
        assert!(a.unreached[3]);
        assert!(!a.unreached[1]);
        assert_eq!(a.cluster_of[3], 0);
    }

    #[test]
    fn monitors_lead_their_clusters() {
        let g = graph(
            8,
            &[
                (0, 1),
                (0, 2),
                (0, 3),
                (3, 4),
                (4, 5),
                (4, 6),
                (4, 7),
                (1, 2),
                (5, 6),
            ],
        );
        let a = cdc_cluster(
            &g,
            CdcParams {
                clusters: 2,
                ttl: 4,
                epsilon: 1e-6,
            },
        )
        .unwrap();
        assert_eq!(a.monitors.len(), 2);
        assert_ne!(a.monitors[0], a.monitors[1]);
        for (c, m) in a.monitors.iter().enumerate() {
            assert!(a.members[c].contains(m));
            assert!(a.data_nodes(c).all(|n| n != *m));
        }
        let total: usize = a.members.iter().map(Vec::len).sum();
        assert_eq!(total, 8);
    }

    #[test]
    fn single_cluster_monitor_is_originator() {
        let s = star(3);
        let a = cdc_cluster(
            &s,
            CdcParams {
                clusters: 1,
                ..CdcParams::default()
            },
        )
        .unwrap();
        assert_eq!(a.monitors, vec![NodeIndex(0)]);
        assert_eq!(a.members[0].len(), 4);
    }

    #[test]
    fn csv_layout() {
        let s = star(2);
        let a = cdc_cluster(
            &s,
            CdcParams {
                clusters: 1,
                ..CdcParams::default()
            },
        )
        .unwrap();
        let mut buf = Vec::new();
        write_assignment_csv(&mut buf, &s, &a).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next(),
            Some("node_id,cluster_id,is_monitor,unreached")
        );
        let first = lines.next().unwrap();
        assert!(first.ends_with(",true,false"));
        assert_eq!(first.split(',').next().unwrap().len(), 40);
    }
}
