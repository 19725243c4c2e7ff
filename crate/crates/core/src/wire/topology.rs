use std::collections::BTreeSet;

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Endpoint;
use crate::sharding::ShardId;

/// Socket addresses of one node's processes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeEndpoints {
    pub node: u32,
    pub coordinator: String,
    pub shards: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Topology {
    pub nodes: Vec<NodeEndpoints>,
    /// Undirected peer pairs, stored with the smaller id first.
    pub edges: BTreeSet<(u32, u32)>,
}

impl Topology {
    pub fn connect(&mut self, a: u32, b: u32) {
        if a != b {
            self.edges.insert((a.min(b), a.max(b)));
        }
    }

    pub fn node(&self, id: u32) -> Option<&NodeEndpoints> {
        self.nodes.iter().find(|n| n.node == id)
    }

    pub fn are_peers(&self, a: u32, b: u32) -> bool {
        self.edges.contains(&(a.min(b), a.max(b)))
    }

    pub fn peers(&self, id: u32) -> Vec<u32> {
        self.edges
            .iter()
            .filter_map(|&(a, b)| match (a == id, b == id) {
                (true, _) => Some(b),
                (_, true) => Some(a),
                _ => None,
            })
            .collect()
    }

    pub fn shard_count(&self, id: u32) -> Option<u32> {
        self.node(id).map(|n| n.shards.len() as u32)
    }

    pub fn address_of(&self, ep: &Endpoint) -> Option<&str> {
        let node = self.node(ep.node)?;
        match ep.shard {
            None => Some(node.coordinator.as_str()),
            Some(id) => node.shards.get(id.index()).map(String::as_str),
        }
    }

    /// Every process-to-process link implied by the topology: the coordinator
    /// to each of its shards, the sibling clique, peer coordinators, and every
    /// shard of a node to every shard of each peer.
    pub fn links(&self) -> BTreeSet<(Endpoint, Endpoint)> {
        let mut out = BTreeSet::new();
        let mut add = |a: Endpoint, b: Endpoint| {
            out.insert((a.min(b), a.max(b)));
        };
        for n in &self.nodes {
            let count = n.shards.len() as u32;
            for i in 0..count {
                add(Endpoint::coordinator(n.node), Endpoint::shard(n.node, ShardId(i)));
                for j in i + 1..count {
                    add(Endpoint::shard(n.node, ShardId(i)), Endpoint::shard(n.node, ShardId(j)));
                }
            }
        }
        for &(a, b) in &self.edges {
            add(Endpoint::coordinator(a), Endpoint::coordinator(b));
            let (ca, cb) = (self.shard_count(a).unwrap_or(0), self.shard_count(b).unwrap_or(0));
            for i in 0..ca {
                for j in 0..cb {
                    add(Endpoint::shard(a, ShardId(i)), Endpoint::shard(b, ShardId(j)));
                }
            }
        }
        out
    }
}

/// Random peer graph where every node opens `peers_per_node` connections to
/// distinct random nodes. Adjacency lists are sorted.
pub fn random_peer_graph<R: Rng + ?Sized>(node_count: usize, peers_per_node: usize, rng: &mut R) -> Vec<Vec<usize>> {
    let mut adj: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); node_count];
    if node_count < 2 {
        return vec![Vec::new(); node_count];
    }
    let k = peers_per_node.min(node_count - 1);
    for a in 0..node_count {
        for pick in sample(rng, node_count - 1, k) {
            let b = if pick >= a { pick + 1 } else { pick };
            adj[a].insert(b);
            adj[b].insert(a);
        }
    }
    adj.into_iter().map(|s| s.into_iter().collect()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn node(id: u32, shards: usize) -> NodeEndpoints {
        NodeEndpoints {
            node: id,
            coordinator: format!("127.0.0.1:{}", 9000 + id * 100),
            shards: (0..shards).map(|s| format!("127.0.0.1:{}", 9001 + id * 100 + s as u32)).collect(),
        }
    }

    #[test]
    fn peers_are_fully_shard_connected() {
        let mut t = Topology {
            nodes: vec![node(0, 2), node(1, 3)],
            ..Default::default()
        };
        t.connect(1, 0);
        let links = t.links();
        for i in 0..2 {
            for j in 0..3 {
                let (a, b) = (Endpoint::shard(0, ShardId(i)), Endpoint::shard(1, ShardId(j)));
                assert!(links.contains(&(a.min(b), a.max(b))));
            }
        }
        // 2 + 3 coordinator links, 1 + 3 sibling links, 1 coordinator pair, 6 shard pairs
        assert_eq!(links.len(), 5 + 4 + 1 + 6);
        assert_eq!(t.peers(0), vec![1]);
        assert_eq!(t.address_of(&Endpoint::shard(1, ShardId(2))), Some("127.0.0.1:9103"));
    }

    #[test]
    fn random_graph_degree() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g = random_peer_graph(100, 8, &mut rng);
        for (a, peers) in g.iter().enumerate() {
            assert!(peers.len() >= 8);
            assert!(!peers.contains(&a));
            for &b in peers {
                assert!(g[b].contains(&a));
            }
        }
    }
}
