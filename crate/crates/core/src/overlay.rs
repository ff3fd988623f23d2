//! k-bucket routing tables and iterative node lookup.
//!
//! Lookups are computed synchronously against a frozen snapshot of every
//! node's routing table. Only the warm-up phase mutates tables, by feeding
//! the contacts of each lookup back through [`Overlay::learn`].

use std::fmt;

use rand::seq::index::sample;
use rand::{Rng, RngCore};

use crate::error::{Error, Result};
use crate::id::{random_id, xor_distance, Identifier, ID_BITS};

pub const DEFAULT_K: usize = 20;
pub const DEFAULT_ALPHA: usize = 3;

/// Simulator handle of a node: its position in the network's node list.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeIndex(pub usize);

impl fmt::Display for NodeIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PeerInfo {
    pub id: Identifier,
    pub index: NodeIndex,
}

/// floor(log2(owner XOR peer)).
pub fn bucket_index(owner: Identifier, peer: Identifier) -> Result<usize> {
    xor_distance(owner, peer)
        .ilog2()
        .map(|i| i as usize)
        .ok_or_else(|| Error::InvalidInput("a node has no bucket for itself".into()))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Observation {
    Inserted,
    Refreshed,
    /// Bucket full; newcomers are dropped since no peer ever goes offline.
    Rejected,
    SelfIgnored,
}

#[derive(Clone, Debug)]
pub struct RoutingTable {
    owner: Identifier,
    k: usize,
    buckets: Vec<Vec<PeerInfo>>,
    len: usize,
}

impl RoutingTable {
    pub fn new(owner: Identifier, k: usize) -> Self {
        assert!(k > 0, "bucket capacity must be positive");
        RoutingTable {
            owner,
            k,
            buckets: vec![Vec::new(); ID_BITS],
            len: 0,
        }
    }

    pub fn owner(&self) -> Identifier {
        self.owner
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn bucket(&self, i: usize) -> &[PeerInfo] {
        &self.buckets[i]
    }

    pub fn peers(&self) -> impl Iterator<Item = &PeerInfo> {
        self.buckets.iter().flatten()
    }

    /// Inserts or refreshes `peer`. A refreshed peer moves to the tail
    /// (most recently seen) of its bucket.
    pub fn observe(&mut self, peer: PeerInfo) -> Observation {
        let Ok(i) = bucket_index(self.owner, peer.id) else {
            return Observation::SelfIgnored;
        };
        let bucket = &mut self.buckets[i];
        if let Some(pos) = bucket.iter().position(|p| p.id == peer.id) {
            let p = bucket.remove(pos);
            bucket.push(p);
            Observation::Refreshed
        } else if bucket.len() < self.k {
            bucket.push(peer);
            self.len += 1;
            Observation::Inserted
        } else {
            Observation::Rejected
        }
    }

    /// The `count` known peers nearest to `target`, nearest first.
    pub fn closest(&self, target: Identifier, count: usize) -> Vec<PeerInfo> {
        let goal = pack(target);
        let mut out = Vec::new();
        self.closest_packed(goal, count, &mut out);
        out.into_iter().map(|e| e.peer(goal)).collect()
    }

    /// Peers in the bucket the target itself would fall into are nearest,
    /// then all lower buckets together, then each higher bucket in turn, so
    /// only those groups need sorting.
    fn closest_packed(&self, target: Packed, count: usize, out: &mut Vec<Near>) {
        out.clear();
        let group = |out: &mut Vec<Near>, buckets: &[Vec<PeerInfo>]| {
            let start = out.len();
            for p in buckets.iter().flatten() {
                out.push(Near {
                    distance: packed_distance(pack(p.id), target),
                    index: p.index.0 as u32,
                });
            }
            let tail = &mut out[start..];
            let keep = count - start;
            if keep < tail.len() {
                tail.select_nth_unstable_by_key(keep, |e| e.distance);
                out.truncate(count);
            }
            out[start..].sort_unstable_by_key(|e| e.distance);
            out.len() >= count
        };
        let split = xor_distance(self.owner, unpack(target))
            .ilog2()
            .map(|b| b as usize);
        let rest_from = match split {
            Some(b) => {
                if group(out, &self.buckets[b..=b]) || group(out, &self.buckets[..b]) {
                    return;
                }
                b + 1
            }
            None => 0,
        };
        for i in rest_from..ID_BITS {
            if group(out, &self.buckets[i..=i]) {
                return;
            }
        }
    }
}

/// A peer found by [`RoutingTable::closest_packed`]; its identifier is the
/// distance XORed back with the target.
#[derive(Clone, Copy, Debug)]
struct Near {
    distance: Packed,
    index: u32,
}

impl Near {
    fn peer(&self, target: Packed) -> PeerInfo {
        PeerInfo {
            id: unpack(packed_distance(self.distance, target)),
            index: NodeIndex(self.index as usize),
        }
    }
}

/// An identifier split into its high 128 and low 32 bits. Tuple order on
/// XORed halves matches the order of [`crate::id::Distance`].
type Packed = (u128, u32);

fn pack(id: Identifier) -> Packed {
    let b = id.as_bytes();
    let mut hi = [0; 16];
    let mut lo = [0; 4];
    hi.copy_from_slice(&b[..16]);
    lo.copy_from_slice(&b[16..]);
    (u128::from_be_bytes(hi), u32::from_be_bytes(lo))
}

fn unpack(p: Packed) -> Identifier {
    let mut b = [0; 20];
    b[..16].copy_from_slice(&p.0.to_be_bytes());
    b[16..].copy_from_slice(&p.1.to_be_bytes());
    Identifier::from_bytes(b)
}

fn packed_distance(a: Packed, b: Packed) -> Packed {
    (a.0 ^ b.0, a.1 ^ b.1)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LookupResult {
    /// Nearest-first, strictly ascending in distance to the target.
    pub closest: Vec<PeerInfo>,
    /// Number of query rounds.
    pub hops: u32,
}

impl LookupResult {
    pub fn nearest(&self) -> PeerInfo {
        self.closest[0]
    }
}

struct Candidate {
    distance: Packed,
    peer: PeerInfo,
    queried: bool,
}

#[derive(Clone, Debug)]
pub struct Overlay {
    ids: Vec<Identifier>,
    tables: Vec<RoutingTable>,
    alpha: usize,
}

impl Overlay {
    pub fn new(ids: Vec<Identifier>, k: usize, alpha: usize) -> Result<Self> {
        if ids.is_empty() {
            return Err(Error::InvalidInput(
                "overlay needs at least one node".into(),
            ));
        }
        if k == 0 || alpha == 0 {
            return Err(Error::InvalidInput("k and alpha must be positive".into()));
        }
        let mut sorted = ids.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidInput("duplicate node identifier".into()));
        }
        let tables = ids.iter().map(|&id| RoutingTable::new(id, k)).collect();
        Ok(Overlay { ids, tables, alpha })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[Identifier] {
        &self.ids
    }

    pub fn id(&self, node: NodeIndex) -> Identifier {
        self.ids[node.0]
    }

    pub fn peer(&self, node: NodeIndex) -> PeerInfo {
        PeerInfo {
            id: self.ids[node.0],
            index: node,
        }
    }

    pub fn table(&self, node: NodeIndex) -> &RoutingTable {
        &self.tables[node.0]
    }

    pub fn table_mut(&mut self, node: NodeIndex) -> &mut RoutingTable {
        &mut self.tables[node.0]
    }

    pub fn k(&self) -> usize {
        self.tables[0].k()
    }

    pub fn alpha(&self) -> usize {
        self.alpha
    }

    /// Gives every node `peers` distinct random contacts.
    pub fn bootstrap<R: Rng + ?Sized>(&mut self, rng: &mut R, peers: usize) {
        let n = self.len();
        if n < 2 {
            return;
        }
        let amount = peers.min(n - 1);
        for i in 0..n {
            for j in sample(rng, n - 1, amount) {
                let j = if j >= i { j + 1 } else { j };
                let peer = self.peer(NodeIndex(j));
                self.tables[i].observe(peer);
            }
        }
    }

    /// Each node looks up its own ID, runs `rounds` lookups of random
    /// targets, then looks up its own ID again. Every lookup teaches the
    /// origin its contacts and the contacts the origin.
    pub fn warm_up<R: RngCore + ?Sized>(&mut self, rng: &mut R, rounds: usize) {
        for i in 0..self.len() {
            let node = NodeIndex(i);
            self.lookup_and_learn(node, self.ids[i]);
        }
        for _ in 0..rounds {
            for i in 0..self.len() {
                let target = random_id(rng);
                self.lookup_and_learn(NodeIndex(i), target);
            }
        }
        for i in 0..self.len() {
            self.lookup_and_learn(NodeIndex(i), self.ids[i]);
        }
    }

    fn lookup_and_learn(&mut self, origin: NodeIndex, target: Identifier) {
        if let Ok((_, contacted)) = self.iterate(origin, target) {
            self.learn(origin, &contacted);
        }
    }

    pub fn learn(&mut self, origin: NodeIndex, contacted: &[NodeIndex]) {
        let me = self.peer(origin);
        for &c in contacted {
            let them = self.peer(c);
            self.tables[origin.0].observe(them);
            self.tables[c.0].observe(me);
        }
    }

    pub fn find_node(&self, origin: NodeIndex, target: Identifier) -> Result<LookupResult> {
        self.find_node_traced(origin, target).map(|(r, _)| r)
    }

    /// Iterative lookup with `alpha` parallel queries per round. When a round
    /// brings back nothing closer, one round queries every unqueried node
    /// among the `k` closest; if that also fails to improve, the lookup ends.
    pub fn find_node_traced(
        &self,
        origin: NodeIndex,
        target: Identifier,
    ) -> Result<(LookupResult, Vec<NodeIndex>)> {
        let k = self.k();
        let me = self.peer(origin);
        let table = &self.tables[origin.0];
        if me.id == target {
            let mut closest = vec![me];
            closest.extend(table.closest(target, k.saturating_sub(1)));
            return Ok((LookupResult { closest, hops: 0 }, Vec::new()));
        }
        self.iterate(origin, target)
    }

    /// The query rounds of a lookup, run even when the origin is itself the
    /// target (a node looking up its own ID to meet its neighbours).
    fn iterate(
        &self,
        origin: NodeIndex,
        target: Identifier,
    ) -> Result<(LookupResult, Vec<NodeIndex>)> {
        let k = self.k();
        let me = self.peer(origin);
        let table = &self.tables[origin.0];
        if table.is_empty() {
            if self.len() == 1 {
                return Ok((
                    LookupResult {
                        closest: vec![me],
                        hops: 0,
                    },
                    Vec::new(),
                ));
            }
            return Err(Error::LookupFailed { origin: origin.0 });
        }
        let goal = pack(target);
        let mut seen = vec![false; self.len()];
        seen[origin.0] = true;
        let mut shortlist = Vec::with_capacity(4 * k);
        shortlist.push(Candidate {
            distance: packed_distance(pack(me.id), goal),
            peer: me,
            queried: true,
        });
        let mut buf = Vec::with_capacity(table.len());
        table.closest_packed(goal, k, &mut buf);
        merge(&mut shortlist, &mut seen, &buf, goal, k);

        let mut contacted = Vec::new();
        let mut hops = 0;
        let mut stalled = false;
        let mut batch = Vec::with_capacity(k);
        let mut responses = Vec::with_capacity(k * k);
        loop {
            let best = shortlist[0].distance;
            let width = if stalled { k } else { self.alpha };
            batch.clear();
            batch.extend(
                shortlist
                    .iter()
                    .enumerate()
                    .filter(|(_, c)| !c.queried)
                    .map(|(i, _)| i)
                    .take(width),
            );
            if batch.is_empty() {
                break;
            }
            hops += 1;
            responses.clear();
            for &i in &batch {
                shortlist[i].queried = true;
                let peer = shortlist[i].peer.index;
                contacted.push(peer);
                self.tables[peer.0].closest_packed(goal, k, &mut buf);
                responses.extend_from_slice(&buf);
            }
            merge(&mut shortlist, &mut seen, &responses, goal, k);
            if shortlist[0].distance < best {
                stalled = false;
            } else if stalled {
                break;
            } else {
                stalled = true;
            }
        }
        let closest = shortlist.iter().map(|c| c.peer).collect();
        Ok((LookupResult { closest, hops }, contacted))
    }

    /// Brute-force scan of every node.
    pub fn closest_oracle(&self, target: Identifier) -> NodeIndex {
        let (i, _) = self
            .ids
            .iter()
            .enumerate()
            .min_by_key(|(_, id)| xor_distance(**id, target))
            .expect("overlay is never empty");
        NodeIndex(i)
    }
}

/// Adds unseen peers and keeps the `k` nearest candidates.
fn merge(
    shortlist: &mut Vec<Candidate>,
    seen: &mut [bool],
    found: &[Near],
    target: Packed,
    k: usize,
) {
    for near in found {
        let i = near.index as usize;
        if !seen[i] {
            seen[i] = true;
            shortlist.push(Candidate {
                distance: near.distance,
                peer: near.peer(target),
                queried: false,
            });
        }
    }
    shortlist.sort_unstable_by_key(|c| c.distance);
    shortlist.truncate(k);
}
