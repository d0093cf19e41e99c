use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{FrameId, RigidTransform};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GraphError {
    #[error("no transform path from {from} to {to}")]
    NoPath { from: FrameId, to: FrameId },
    #[error("edge {0} -> {0} is a self loop")]
    SelfLoop(FrameId),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Edge {
    pub transform: RigidTransform,
    pub timestamp: u64,
}

/// Serialized edge: `transform` is `from_t_to`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdgeRecord {
    pub from: FrameId,
    pub to: FrameId,
    pub transform: RigidTransform,
    pub timestamp: u64,
}

/// Frames connected by timestamped rigid transforms.
///
/// An edge `from -> to` stores `from_t_to`, mapping coordinates in `to` into
/// `from`. Each frame pair carries at most one edge: inserting `a -> b`
/// replaces any earlier `a -> b` or `b -> a` edge unless the stored one is newer.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TransformGraph {
    edges: BTreeMap<(FrameId, FrameId), Edge>,
}

impl TransformGraph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts `from_t_to`. Returns `false` when a newer edge for the pair is kept.
    pub fn insert(
        &mut self,
        from: FrameId,
        to: FrameId,
        transform: RigidTransform,
        timestamp: u64,
    ) -> Result<bool, GraphError> {
        if from == to {
            return Err(GraphError::SelfLoop(from));
        }
        let newest = [(from, to), (to, from)]
            .iter()
            .filter_map(|k| self.edges.get(k))
            .map(|e| e.timestamp)
            .max();
        if newest.is_some_and(|ts| ts > timestamp) {
            return Ok(false);
        }
        self.edges.remove(&(to, from));
        self.edges.insert((from, to), Edge { transform, timestamp });
        Ok(true)
    }

    pub fn remove(&mut self, a: FrameId, b: FrameId) -> bool {
        self.edges.remove(&(a, b)).is_some() | self.edges.remove(&(b, a)).is_some()
    }

    pub fn edge(&self, from: FrameId, to: FrameId) -> Option<&Edge> {
        self.edges.get(&(from, to))
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    pub fn records(&self) -> Vec<EdgeRecord> {
        self.edges
            .iter()
            .map(|(&(from, to), e)| EdgeRecord {
                from,
                to,
                transform: e.transform,
                timestamp: e.timestamp,
            })
            .collect()
    }

    pub fn from_records(records: &[EdgeRecord]) -> Result<Self, GraphError> {
        let mut g = Self::new();
        for r in records {
            g.insert(r.from, r.to, r.transform, r.timestamp)?;
        }
        Ok(g)
    }

    fn neighbours(&self, f: FrameId) -> BTreeSet<FrameId> {
        self.edges
            .keys()
            .filter_map(|&(a, b)| {
                if a == f {
                    Some(b)
                } else if b == f {
                    Some(a)
                } else {
                    None
                }
            })
            .collect()
    }

    /// Shortest path (fewest edges) in the undirected view; among equally short
    /// paths the lexicographically smallest frame sequence wins.
    pub fn path(&self, from: FrameId, to: FrameId) -> Option<Vec<FrameId>> {
        if from == to {
            return Some(vec![from]);
        }
        // BFS from the target gives distances; then walk greedily from the
        // source choosing the smallest neighbour that decreases the distance.
        let mut dist: BTreeMap<FrameId, usize> = BTreeMap::new();
        dist.insert(to, 0);
        let mut queue = VecDeque::from([to]);
        while let Some(f) = queue.pop_front() {
            let d = dist[&f];
            for n in self.neighbours(f) {
                if let std::collections::btree_map::Entry::Vacant(e) = dist.entry(n) {
                    e.insert(d + 1);
                    queue.push_back(n);
                }
            }
        }
        let mut remaining = *dist.get(&from)?;
        let mut path = vec![from];
        let mut cur = from;
        while remaining > 0 {
            cur = self
                .neighbours(cur)
                .into_iter()
                .find(|n| dist.get(n) == Some(&(remaining - 1)))?;
            path.push(cur);
            remaining -= 1;
        }
        Some(path)
    }

    fn hop(&self, a: FrameId, b: FrameId) -> RigidTransform {
        match self.edges.get(&(a, b)) {
            Some(e) => e.transform,
            None => self.edges[&(b, a)].transform.inverse(),
        }
    }

    /// Returns `from_t_to`.
    pub fn query(&self, from: FrameId, to: FrameId) -> Result<RigidTransform, GraphError> {
        let path = self.path(from, to).ok_or(GraphError::NoPath { from, to })?;
        Ok(path
            .windows(2)
            .map(|w| self.hop(w[0], w[1]))
            .reduce(|acc, t| acc.compose(&t))
            .unwrap_or_else(RigidTransform::identity))
    }

    pub fn connected(&self, a: FrameId, b: FrameId) -> bool {
        self.path(a, b).is_some()
    }
}

impl Serialize for TransformGraph {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.records().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for TransformGraph {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let records = Vec::<EdgeRecord>::deserialize(deserializer)?;
        Self::from_records(&records).map_err(serde::de::Error::custom)
    }
}

/// Single-writer / multi-reader handle. Readers get an immutable snapshot;
/// writers replace the whole graph atomically.
#[derive(Clone, Debug, Default)]
pub struct SharedGraph {
    inner: Arc<RwLock<Arc<TransformGraph>>>,
}

impl SharedGraph {
    pub fn new(graph: TransformGraph) -> Self {
        Self {
            inner: Arc::new(RwLock::new(Arc::new(graph))),
        }
    }

    pub fn snapshot(&self) -> Arc<TransformGraph> {
        self.inner.read().expect("graph lock poisoned").clone()
    }

    pub fn update<R>(&self, f: impl FnOnce(&mut TransformGraph) -> R) -> R {
        let mut guard = self.inner.write().expect("graph lock poisoned");
        let mut next = (**guard).clone();
        let out = f(&mut next);
        *guard = Arc::new(next);
        out
    }
}
