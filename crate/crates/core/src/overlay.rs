//! Overlay of twin nodes, one per domain participant. Every logical link is
//! backed by one or more underlay links; joins peer with a domain gateway plus
//! the k nearest peers, and departures trigger deterministic repair.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{DomainId, Topic};
use crate::rtps::Guid;

pub type NodeId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NodeKind {
    TwinModel,
    ServiceApp,
    DataGateway,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OverlayNode {
    pub node_id: NodeId,
    pub guid: Guid,
    pub domain: DomainId,
    pub kind: NodeKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OverlayLink {
    pub a: NodeId,
    pub b: NodeId,
    pub underlay_path: Vec<usize>,
}

/// Physical link parameters, consumed by the network engine.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnderlaySpec {
    pub id: usize,
    pub bandwidth_bytes_per_ms: f64,
    pub prop_delay_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OverlayConfig {
    pub peering_k: usize,
    pub bandwidth_bytes_per_ms: f64,
    pub prop_delay_min_ms: f64,
    pub prop_delay_max_ms: f64,
    pub max_underlay_hops: usize,
}

impl Default for OverlayConfig {
    fn default() -> Self {
        OverlayConfig {
            peering_k: 2,
            bandwidth_bytes_per_ms: 12_500.0,
            prop_delay_min_ms: 1.0,
            prop_delay_max_ms: 5.0,
            max_underlay_hops: 3,
        }
    }
}

impl OverlayConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.bandwidth_bytes_per_ms > 0.0
            && self.bandwidth_bytes_per_ms.is_finite()
            && self.prop_delay_min_ms >= 0.0
            && self.prop_delay_min_ms <= self.prop_delay_max_ms
            && self.prop_delay_max_ms.is_finite()
            && self.max_underlay_hops >= 1;
        if ok {
            Ok(())
        } else {
            Err(Error::Validation(format!(
                "invalid overlay config {self:?}"
            )))
        }
    }
}

/// What a joining entity brings with it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EntityDescriptor {
    pub guid: Guid,
    pub kind: NodeKind,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OverlayGraph {
    pub config: OverlayConfig,
    nodes: BTreeMap<NodeId, OverlayNode>,
    links: BTreeMap<(NodeId, NodeId), OverlayLink>,
    adjacency: BTreeMap<NodeId, BTreeSet<NodeId>>,
    by_guid: BTreeMap<Guid, NodeId>,
    subscriptions: BTreeMap<Topic, BTreeSet<NodeId>>,
    gateways: BTreeMap<DomainId, NodeId>,
    underlay: Vec<UnderlaySpec>,
    next_node: NodeId,
    rng: ChaCha8Rng,
}

fn key(a: NodeId, b: NodeId) -> (NodeId, NodeId) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

impl OverlayGraph {
    pub fn new(config: OverlayConfig, seed: u64) -> Self {
        OverlayGraph {
            config,
            nodes: BTreeMap::new(),
            links: BTreeMap::new(),
            adjacency: BTreeMap::new(),
            by_guid: BTreeMap::new(),
            subscriptions: BTreeMap::new(),
            gateways: BTreeMap::new(),
            underlay: Vec::new(),
            next_node: 0,
            rng: ChaCha8Rng::seed_from_u64(seed ^ 0x6f76_6572_6c61_7900),
        }
    }

    pub fn nodes(&self) -> impl Iterator<Item = &OverlayNode> {
        self.nodes.values()
    }

    pub fn node(&self, id: NodeId) -> Option<&OverlayNode> {
        self.nodes.get(&id)
    }

    pub fn links(&self) -> impl Iterator<Item = &OverlayLink> {
        self.links.values()
    }

    pub fn link(&self, a: NodeId, b: NodeId) -> Option<&OverlayLink> {
        self.links.get(&key(a, b))
    }

    pub fn underlay(&self) -> &[UnderlaySpec] {
        &self.underlay
    }

    pub fn gateway(&self, domain: DomainId) -> Option<NodeId> {
        self.gateways.get(&domain).copied()
    }

    pub fn node_by_guid(&self, guid: Guid) -> Option<NodeId> {
        self.by_guid.get(&guid).copied()
    }

    pub fn domain_nodes(&self, domain: DomainId) -> Vec<NodeId> {
        self.nodes
            .values()
            .filter(|n| n.domain == domain)
            .map(|n| n.node_id)
            .collect()
    }

    pub fn domains(&self) -> Vec<DomainId> {
        let set: BTreeSet<DomainId> = self.nodes.values().map(|n| n.domain).collect();
        set.into_iter().collect()
    }

    pub fn degree(&self, id: NodeId) -> usize {
        self.neighbors(id).len()
    }

    pub fn neighbors(&self, id: NodeId) -> Vec<NodeId> {
        self.adjacency
            .get(&id)
            .map(|s| s.iter().copied().collect())
            .unwrap_or_default()
    }

    fn alloc_node(&mut self, guid: Guid, domain: DomainId, kind: NodeKind) -> Result<NodeId> {
        if self.node_by_guid(guid).is_some() {
            return Err(Error::DuplicateGuid(guid.to_string()));
        }
        let id = self.next_node;
        self.next_node += 1;
        self.nodes.insert(
            id,
            OverlayNode {
                node_id: id,
                guid,
                domain,
                kind,
            },
        );
        self.adjacency.insert(id, BTreeSet::new());
        self.by_guid.insert(guid, id);
        Ok(id)
    }

    fn connect(&mut self, a: NodeId, b: NodeId) {
        if a == b || self.links.contains_key(&key(a, b)) {
            return;
        }
        let hops = self.rng.gen_range(1..=self.config.max_underlay_hops.max(1));
        let mut path = Vec::with_capacity(hops);
        for _ in 0..hops {
            let id = self.underlay.len();
            let prop = if self.config.prop_delay_max_ms > self.config.prop_delay_min_ms {
                self.rng
                    .gen_range(self.config.prop_delay_min_ms..=self.config.prop_delay_max_ms)
            } else {
                self.config.prop_delay_min_ms
            };
            self.underlay.push(UnderlaySpec {
                id,
                bandwidth_bytes_per_ms: self.config.bandwidth_bytes_per_ms,
                prop_delay_ms: prop,
            });
            path.push(id);
        }
        let (a, b) = key(a, b);
        self.adjacency.entry(a).or_default().insert(b);
        self.adjacency.entry(b).or_default().insert(a);
        self.links.insert(
            (a, b),
            OverlayLink {
                a,
                b,
                underlay_path: path,
            },
        );
    }

    /// Creates a domain by installing its gateway node.
    pub fn add_domain(&mut self, domain: DomainId, gateway: Guid) -> Result<NodeId> {
        if let Some(g) = self.gateways.get(&domain) {
            return Ok(*g);
        }
        let id = self.alloc_node(gateway, domain, NodeKind::DataGateway)?;
        self.gateways.insert(domain, id);
        Ok(id)
    }

    /// Joins an entity to its domain: one link to the gateway plus links to the
    /// `peering_k` nearest (by node id) non-gateway peers.
    pub fn register_twin(&mut self, entity: EntityDescriptor, domain: DomainId) -> Result<NodeId> {
        let gw = self
            .gateway(domain)
            .ok_or_else(|| Error::Validation(format!("domain {domain} does not exist")))?;
        let id = self.alloc_node(entity.guid, domain, entity.kind)?;
        let mut peers: Vec<NodeId> = self
            .nodes
            .values()
            .filter(|n| n.domain == domain && n.node_id != id && n.node_id != gw)
            .map(|n| n.node_id)
            .collect();
        peers.sort_by_key(|p| (id.abs_diff(*p), *p));
        self.connect(id, gw);
        for p in peers.into_iter().take(self.config.peering_k) {
            self.connect(id, p);
        }
        Ok(id)
    }

    pub fn subscribe(&mut self, topic: &Topic, node: NodeId) -> Result<()> {
        let n = self.nodes.get(&node).ok_or(Error::UnknownNode(node))?;
        if n.domain != topic.domain {
            return Err(Error::Validation(format!(
                "node {node} in {} cannot subscribe to topic of {}",
                n.domain, topic.domain
            )));
        }
        self.subscriptions
            .entry(topic.clone())
            .or_default()
            .insert(node);
        Ok(())
    }

    pub fn subscribers(&self, topic: &Topic) -> BTreeSet<NodeId> {
        self.subscriptions.get(topic).cloned().unwrap_or_default()
    }

    fn components(&self, domain: DomainId) -> Vec<Vec<NodeId>> {
        let mut seen = BTreeSet::new();
        let mut comps = Vec::new();
        for start in self.domain_nodes(domain) {
            if seen.contains(&start) {
                continue;
            }
            let mut comp = vec![start];
            seen.insert(start);
            let mut q = VecDeque::from([start]);
            while let Some(u) = q.pop_front() {
                for v in self.neighbors(u) {
                    if self.nodes[&v].domain == domain && seen.insert(v) {
                        comp.push(v);
                        q.push_back(v);
                    }
                }
            }
            comp.sort_unstable();
            comps.push(comp);
        }
        comps.sort_by_key(|c| c[0]);
        comps
    }

    pub fn is_domain_connected(&self, domain: DomainId) -> bool {
        self.components(domain).len() <= 1
    }

    /// Removes a node and its links, bridging any components left behind via
    /// their lowest node ids.
    pub fn remove_node(&mut self, id: NodeId) -> Result<()> {
        let node = self.nodes.remove(&id).ok_or(Error::UnknownNode(id))?;
        self.by_guid.remove(&node.guid);
        self.links.retain(|&(a, b), _| a != id && b != id);
        if let Some(adj) = self.adjacency.remove(&id) {
            for v in adj {
                if let Some(set) = self.adjacency.get_mut(&v) {
                    set.remove(&id);
                }
            }
        }
        for subs in self.subscriptions.values_mut() {
            subs.remove(&id);
        }
        self.subscriptions.retain(|_, s| !s.is_empty());
        if self.gateways.get(&node.domain) == Some(&id) {
            self.gateways.remove(&node.domain);
            if let Some(next) = self.domain_nodes(node.domain).first().copied() {
                self.gateways.insert(node.domain, next);
            }
        }
        let comps = self.components(node.domain);
        for pair in comps.windows(2) {
            self.connect(pair[0][0], pair[1][0]);
        }
        Ok(())
    }

    /// Shortest hop-count path; among equal lengths, the lexicographically smallest.
    pub fn route(&self, src: NodeId, dst: NodeId) -> Result<Vec<NodeId>> {
        let s = self.nodes.get(&src).ok_or(Error::UnknownNode(src))?;
        let d = self.nodes.get(&dst).ok_or(Error::UnknownNode(dst))?;
        if s.domain != d.domain {
            return Err(Error::Unreachable { src, dst });
        }
        if src == dst {
            return Ok(vec![src]);
        }
        let domain = s.domain;
        let mut dist: BTreeMap<NodeId, usize> = BTreeMap::from([(dst, 0)]);
        let mut q = VecDeque::from([dst]);
        while let Some(u) = q.pop_front() {
            let du = dist[&u];
            for v in self.neighbors(u) {
                if self.nodes[&v].domain == domain && !dist.contains_key(&v) {
                    dist.insert(v, du + 1);
                    q.push_back(v);
                }
            }
        }
        let Some(&total) = dist.get(&src) else {
            return Err(Error::Unreachable { src, dst });
        };
        let mut path = Vec::with_capacity(total + 1);
        let mut cur = src;
        path.push(cur);
        while cur != dst {
            let want = dist[&cur] - 1;
            cur = self
                .neighbors(cur)
                .into_iter()
                .find(|v| dist.get(v) == Some(&want))
                .expect("bfs layers are consistent");
            path.push(cur);
        }
        Ok(path)
    }

    /// Concatenated underlay link ids along a node path.
    pub fn underlay_path(&self, nodes: &[NodeId]) -> Vec<usize> {
        let mut out = Vec::new();
        for w in nodes.windows(2) {
            let link = &self.links[&key(w[0], w[1])];
            if link.a == w[0] {
                out.extend(link.underlay_path.iter().copied());
            } else {
                out.extend(link.underlay_path.iter().rev().copied());
            }
        }
        out
    }

    /// Subscribers of `topic` reachable from `src`, with the underlay path to each.
    pub fn propagate_update(
        &self,
        topic: &Topic,
        src: NodeId,
    ) -> Result<BTreeMap<NodeId, Vec<usize>>> {
        let s = self.nodes.get(&src).ok_or(Error::UnknownNode(src))?;
        let mut out = BTreeMap::new();
        if s.domain != topic.domain {
            return Ok(out);
        }
        for sub in self.subscribers(topic) {
            if sub == src || self.nodes[&sub].domain != s.domain {
                continue;
            }
            if let Ok(path) = self.route(src, sub) {
                out.insert(sub, self.underlay_path(&path));
            }
        }
        Ok(out)
    }

    /// Plain-text snapshot: one `node` line per node, one `link` line per link,
    /// one `underlay` line per physical link.
    pub fn snapshot(&self) -> String {
        let mut s = String::new();
        for n in self.nodes.values() {
            let _ = writeln!(
                s,
                "node id={} guid={} domain={} kind={:?}",
                n.node_id, n.guid, n.domain.0, n.kind
            );
        }
        for l in self.links.values() {
            let path: Vec<String> = l.underlay_path.iter().map(|u| u.to_string()).collect();
            let _ = writeln!(
                s,
                "link a={} b={} underlay_path={}",
                l.a,
                l.b,
                path.join(",")
            );
        }
        for u in &self.underlay {
            let _ = writeln!(
                s,
                "underlay id={} bandwidth_bytes_per_ms={} prop_delay_ms={}",
                u.id, u.bandwidth_bytes_per_ms, u.prop_delay_ms
            );
        }
        s
    }
}
