//! Per-node DHT storage keyed by (primary ID, secondary ID).
//!
//! A data entry carries a payload; a map entry carries none and only points
//! from a data ID to the node that actually holds it.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::id::Identifier;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Payload {
    Bytes(Vec<u8>),
    /// Size-only stand-in used by long simulations.
    Synthetic(u64),
}

impl Payload {
    pub fn len(&self) -> u64 {
        match self {
            Payload::Bytes(b) => b.len() as u64,
            Payload::Synthetic(n) => *n,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DhtTriple {
    pub id_p: Identifier,
    pub id_s: Identifier,
    pub value: Option<Payload>,
}

impl DhtTriple {
    pub fn is_map(&self) -> bool {
        self.value.is_none()
    }
}

#[derive(Clone, Debug)]
struct Entry {
    id_s: Identifier,
    value: Option<Payload>,
}

#[derive(Clone, Debug)]
pub struct NodeStore {
    entries: HashMap<Identifier, Vec<Entry>>,
    used_bytes: u64,
    capacity: u64,
    count: usize,
}

impl Default for NodeStore {
    fn default() -> Self {
        NodeStore::with_capacity(u64::MAX)
    }
}

impl NodeStore {
    pub fn with_capacity(capacity: u64) -> Self {
        NodeStore {
            entries: HashMap::new(),
            used_bytes: 0,
            capacity,
            count: 0,
        }
    }

    pub fn used_bytes(&self) -> u64 {
        self.used_bytes
    }

    pub fn capacity(&self) -> u64 {
        self.capacity
    }

    /// Remaining free space in bytes.
    pub fn remaining(&self) -> u64 {
        self.capacity - self.used_bytes
    }

    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    /// Stores or replaces the data entry for (id_p, id_s).
    pub fn put_data(&mut self, id_p: Identifier, id_s: Identifier, value: Payload) -> Result<()> {
        if value.is_empty() {
            return Err(Error::InvalidInput(
                "data entries need a nonempty value".into(),
            ));
        }
        let slot = self.entries.entry(id_p).or_default();
        let pos = slot.iter().position(|e| e.id_s == id_s);
        let freed = pos
            .and_then(|p| slot[p].value.as_ref())
            .map_or(0, Payload::len);
        let remaining = self.capacity - self.used_bytes + freed;
        if value.len() > remaining {
            if slot.is_empty() {
                self.entries.remove(&id_p);
            }
            return Err(Error::StorageFull {
                needed: value.len(),
                remaining,
            });
        }
        self.used_bytes = self.used_bytes - freed + value.len();
        match pos {
            Some(p) => slot[p].value = Some(value),
            None => {
                slot.push(Entry {
                    id_s,
                    value: Some(value),
                });
                self.count += 1;
            }
        }
        Ok(())
    }

    /// Stores a map entry. Re-adding an existing pair is a no-op.
    pub fn put_map(&mut self, id_p: Identifier, id_s: Identifier) {
        let slot = self.entries.entry(id_p).or_default();
        if slot.iter().all(|e| e.id_s != id_s) {
            slot.push(Entry { id_s, value: None });
            self.count += 1;
        }
    }

    pub fn lookup_primary(&self, id_p: Identifier) -> Vec<DhtTriple> {
        self.entries
            .get(&id_p)
            .map(|slot| {
                slot.iter()
                    .map(|e| DhtTriple {
                        id_p,
                        id_s: e.id_s,
                        value: e.value.clone(),
                    })
                    .collect()
            })
            .unwrap_or_default()
    }

    pub fn lookup_pair(&self, id_p: Identifier, id_s: Identifier) -> Option<DhtTriple> {
        self.entries
            .get(&id_p)?
            .iter()
            .find(|e| e.id_s == id_s)
            .map(|e| DhtTriple {
                id_p,
                id_s,
                value: e.value.clone(),
            })
    }

    /// Removes an entry of either kind; used to undo a failed placement.
    pub fn remove(&mut self, id_p: Identifier, id_s: Identifier) -> Option<DhtTriple> {
        let slot = self.entries.get_mut(&id_p)?;
        let pos = slot.iter().position(|e| e.id_s == id_s)?;
        let e = slot.swap_remove(pos);
        if slot.is_empty() {
            self.entries.remove(&id_p);
        }
        self.count -= 1;
        if let Some(v) = &e.value {
            self.used_bytes -= v.len();
        }
        Some(DhtTriple {
            id_p,
            id_s,
            value: e.value,
        })
    }

    pub fn triples(&self) -> impl Iterator<Item = DhtTriple> + '_ {
        self.entries.iter().flat_map(|(id_p, slot)| {
            slot.iter().map(move |e| DhtTriple {
                id_p: *id_p,
                id_s: e.id_s,
                value: e.value.clone(),
            })
        })
    }
}
