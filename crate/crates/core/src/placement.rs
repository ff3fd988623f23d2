//! Baseline closest-node placement, two-step residual-performance
//! placement, replica fan-out and two-phase retrieval.
//!
//! Residual-performance placement writes the block to a node picked by the
//! monitor (the actual node) as `<id(actual), id(data), value>`, then stores
//! `<id(data), id(actual), empty>` at the node XOR-closest to the data ID
//! (the virtual node). Retrieval finds the virtual node with one lookup and
//! follows the map with at most one more.

use std::collections::HashMap;

use rand::seq::index::sample;
use rand::Rng;

use crate::cluster::ClusterAssignment;
use crate::error::{Error, Result};
use crate::id::{xor_distance, Identifier};
use crate::overlay::{NodeIndex, Overlay};
use crate::residual::Scoreboard;
use crate::store::{NodeStore, Payload};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PlacementRequest {
    pub data_id: Identifier,
    pub size: u64,
    pub origin: NodeIndex,
    pub replicas: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PlacementReceipt {
    pub data_id: Identifier,
    pub actual: NodeIndex,
    pub virtual_node: NodeIndex,
    pub lookup_hops: u32,
    pub cluster: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Retrieval {
    pub value: Payload,
    /// Iterative lookups issued: 1 or 2.
    pub lookups: u8,
    pub hops: u32,
    pub holder: NodeIndex,
}

/// Clusters, their monitors' scoreboards, and each node's nearest monitor.
#[derive(Clone, Debug)]
pub struct ClusterLayout {
    pub assignment: ClusterAssignment,
    pub boards: Vec<Scoreboard>,
    serving: Vec<usize>,
    nearest: Vec<usize>,
    probe_hops: Vec<u32>,
}

impl ClusterLayout {
    /// Cluster whose monitor is fewest routing hops from `node`.
    pub fn nearest_cluster(&self, node: NodeIndex) -> usize {
        self.nearest[node.0]
    }

    /// Clusters with at least one data node.
    pub fn serving(&self) -> &[usize] {
        &self.serving
    }

    pub fn probe_hops(&self, node: NodeIndex) -> u32 {
        self.probe_hops[node.0]
    }

    pub fn len(&self) -> usize {
        self.boards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boards.is_empty()
    }
}

#[derive(Clone, Debug)]
pub struct StorageNetwork {
    overlay: Overlay,
    stores: Vec<NodeStore>,
    index_of: HashMap<Identifier, NodeIndex>,
    layout: Option<ClusterLayout>,
}

impl StorageNetwork {
    pub fn new(overlay: Overlay, capacity: u64) -> Self {
        let index_of = overlay
            .ids()
            .iter()
            .enumerate()
            .map(|(i, id)| (*id, NodeIndex(i)))
            .collect();
        let stores = (0..overlay.len())
            .map(|_| NodeStore::with_capacity(capacity))
            .collect();
        StorageNetwork {
            overlay,
            stores,
            index_of,
            layout: None,
        }
    }

    /// Installs the cluster layout. Each node probes every monitor with a
    /// lookup and keeps the one reached in the fewest hops. Ties go to the
    /// node's own cluster, then to the monitor XOR-closest to the node.
    /// Clusters without data nodes never serve requests.
    pub fn install_clusters(&mut self, assignment: ClusterAssignment) -> Result<()> {
        if assignment.monitors.len() != assignment.len() {
            return Err(Error::InvalidInput("clusters have no monitors yet".into()));
        }
        let boards: Vec<Scoreboard> = (0..assignment.len())
            .map(|c| {
                let leader = self.overlay.id(assignment.monitors[c]);
                let members = assignment.data_nodes(c).map(|n| self.overlay.id(n));
                Scoreboard::new(leader, members)
            })
            .collect();
        let serving: Vec<usize> = (0..boards.len())
            .filter(|&c| assignment.data_nodes(c).next().is_some())
            .collect();
        if serving.is_empty() {
            return Err(Error::InvalidInput("no cluster has a data node".into()));
        }
        let mut nearest = Vec::with_capacity(self.overlay.len());
        let mut probe_hops = Vec::with_capacity(self.overlay.len());
        for i in 0..self.overlay.len() {
            let node = NodeIndex(i);
            let me = self.overlay.id(node);
            let own = assignment.cluster_of[i];
            let mut best = None;
            for &c in &serving {
                let target = self.overlay.id(assignment.monitors[c]);
                let hops = self.overlay.find_node(node, target)?.hops;
                let key = (hops, c != own, xor_distance(me, target), c);
                if best.is_none_or(|b| key < b) {
                    best = Some(key);
                }
            }
            let (hops, _, _, c) = best.expect("at least one serving cluster");
            nearest.push(c);
            probe_hops.push(hops);
        }
        self.layout = Some(ClusterLayout {
            assignment,
            boards,
            serving,
            nearest,
            probe_hops,
        });
        Ok(())
    }

    pub fn overlay(&self) -> &Overlay {
        &self.overlay
    }

    pub fn store(&self, node: NodeIndex) -> &NodeStore {
        &self.stores[node.0]
    }

    pub fn layout(&self) -> Option<&ClusterLayout> {
        self.layout.as_ref()
    }

    pub fn board_mut(&mut self, cluster: usize) -> Option<&mut Scoreboard> {
        self.layout.as_mut().map(|l| &mut l.boards[cluster])
    }

    pub fn node_of(&self, id: &Identifier) -> Option<NodeIndex> {
        self.index_of.get(id).copied()
    }

    pub fn is_monitor(&self, node: NodeIndex) -> bool {
        self.layout
            .as_ref()
            .is_some_and(|l| l.assignment.is_monitor(node))
    }

    fn layout_ref(&self) -> Result<&ClusterLayout> {
        self.layout
            .as_ref()
            .ok_or_else(|| Error::InvalidInput("network has not been clustered".into()))
    }

    /// Stores the block at the XOR-closest node as `<id(d), id(d), value>`.
    pub fn baseline_place(
        &mut self,
        req: &PlacementRequest,
        value: Payload,
    ) -> Result<PlacementReceipt> {
        let found = self.overlay.find_node(req.origin, req.data_id)?;
        let target = found.nearest().index;
        self.stores[target.0].put_data(req.data_id, req.data_id, value)?;
        Ok(PlacementReceipt {
            data_id: req.data_id,
            actual: target,
            virtual_node: target,
            lookup_hops: found.hops,
            cluster: None,
        })
    }

    /// Asks the monitor of `cluster` for its best data node and places there.
    pub fn rpdp_place(
        &mut self,
        req: &PlacementRequest,
        cluster: usize,
        value: Payload,
    ) -> Result<PlacementReceipt> {
        let layout = self.layout_ref()?;
        let best = layout
            .boards
            .get(cluster)
            .ok_or_else(|| Error::InvalidInput(format!("no cluster {cluster}")))?
            .select_best_nodes(1, value.len())
            .map_err(|e| match e {
                Error::NoCapacity(n) => Error::StorageFull {
                    needed: n,
                    remaining: 0,
                },
                e => e,
            })?;
        let actual = self
            .node_of(&best[0])
            .expect("boards only list known nodes");
        self.commit_rpdp(req, actual, value, Some(cluster))
    }

    /// Both placement steps for an already selected actual node. A failed
    /// map step undoes the data write.
    pub fn commit_rpdp(
        &mut self,
        req: &PlacementRequest,
        actual: NodeIndex,
        value: Payload,
        cluster: Option<usize>,
    ) -> Result<PlacementReceipt> {
        let actual_id = self.overlay.id(actual);
        self.stores[actual.0].put_data(actual_id, req.data_id, value)?;
        let found = match self.overlay.find_node(req.origin, req.data_id) {
            Ok(f) => f,
            Err(e) => {
                self.stores[actual.0].remove(actual_id, req.data_id);
                return Err(e);
            }
        };
        let virtual_node = found.nearest().index;
        self.stores[virtual_node.0].put_map(req.data_id, actual_id);
        Ok(PlacementReceipt {
            data_id: req.data_id,
            actual,
            virtual_node,
            lookup_hops: found.hops,
            cluster,
        })
    }

    /// Clusters for `replicas` copies: the origin's nearest monitor first,
    /// then distinct serving clusters drawn uniformly.
    pub fn replica_clusters<R: Rng + ?Sized>(
        &self,
        origin: NodeIndex,
        replicas: usize,
        rng: &mut R,
    ) -> Result<Vec<usize>> {
        let layout = self.layout_ref()?;
        let q = layout.serving.len();
        if replicas == 0 || replicas > q {
            return Err(Error::InvalidInput(format!(
                "replica count {replicas} must be in 1..={q}"
            )));
        }
        let first = layout.nearest_cluster(origin);
        let mut out = vec![first];
        if replicas > 1 {
            let others: Vec<usize> = layout
                .serving
                .iter()
                .copied()
                .filter(|&c| c != first)
                .collect();
            out.extend(
                sample(rng, others.len(), replicas - 1)
                    .into_iter()
                    .map(|i| others[i]),
            );
        }
        Ok(out)
    }

    pub fn place_replicas<R: Rng + ?Sized>(
        &mut self,
        req: &PlacementRequest,
        value: Payload,
        rng: &mut R,
    ) -> Result<Vec<PlacementReceipt>> {
        let clusters = self.replica_clusters(req.origin, req.replicas, rng)?;
        clusters
            .into_iter()
            .map(|c| self.rpdp_place(req, c, value.clone()))
            .collect()
    }

    /// Looks the data ID up; a map entry at the closest node triggers a
    /// second lookup toward the actual node, unless the map points at the
    /// node already reached.
    pub fn retrieve(&self, data_id: Identifier, origin: NodeIndex) -> Result<Retrieval> {
        let first = self.overlay.find_node(origin, data_id)?;
        let reached = first.nearest().index;
        let entries = self.stores[reached.0].lookup_primary(data_id);
        if let Some(t) = entries.iter().find(|t| t.id_s == data_id && !t.is_map()) {
            return Ok(Retrieval {
                value: t.value.clone().expect("data entries carry a value"),
                lookups: 1,
                hops: first.hops,
                holder: reached,
            });
        }
        let map = entries
            .iter()
            .find(|t| t.is_map())
            .ok_or(Error::NotFound(data_id))?;
        let actual_id = map.id_s;
        let dangling = || Error::DanglingMap {
            data: data_id,
            actual: actual_id,
        };
        let (holder, lookups, hops) = if actual_id == self.overlay.id(reached) {
            (reached, 1, first.hops)
        } else {
            let second = self.overlay.find_node(origin, actual_id)?;
            let holder = second.nearest().index;
            if self.overlay.id(holder) != actual_id {
                return Err(dangling());
            }
            (holder, 2, first.hops + second.hops)
        };
        let triple = self.stores[holder.0]
            .lookup_pair(actual_id, data_id)
            .ok_or_else(dangling)?;
        Ok(Retrieval {
            value: triple.value.ok_or_else(dangling)?,
            lookups,
            hops,
            holder,
        })
    }
}
