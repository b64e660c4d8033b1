//! In-process mailbox network for the rank simulator.
//!
//! Ranks never touch each other's state directly: everything crosses
//! through typed messages posted here and delivered in deterministic
//! order (by sender within one delivery). The network also enforces the
//! request-once discipline of the tree walks — a repeated child or leaf
//! request for the same node is a protocol bug, not extra traffic.

use std::collections::HashSet;

use crate::error::{Error, Result};

/// Identity of a point on the cluster: owning rank and local z position.
/// Ranks hold consecutive z ranges, so the derived lexicographic order is
/// exactly the global z order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct GlobalLabel {
    pub rank: u32,
    pub idx: u32,
}

#[derive(Debug, Clone)]
pub enum Msg {
    /// Point rows in transit (redistribution and domain adjustment).
    Points {
        ids: Vec<u32>,
        coords: Vec<f64>,
        masses: Option<Vec<f64>>,
        velocities: Option<Vec<f64>>,
    },
    /// Top-plane node table, broadcast once per walk.
    TopInfo {
        centers: Vec<f64>,
        halves: Vec<f64>,
        counts: Vec<u32>,
    },
    /// Children of the listed nodes on `plane`, please.
    NodeReq { plane: u32, parents: Vec<u32> },
    /// Children grouped per requested parent: `child_splits` is the
    /// prefix over `parents`, `children` the node indices one plane down.
    NodeReply {
        plane: u32,
        parents: Vec<u32>,
        child_splits: Vec<u32>,
        children: Vec<u32>,
        centers: Vec<f64>,
        halves: Vec<f64>,
        counts: Vec<u32>,
    },
    /// Points of the listed leaf nodes, please.
    LeafReq { leaves: Vec<u32> },
    /// Leaf points: `splits` prefix over `leaves`, `starts` the first
    /// local z index of each leaf, `ids` the original input indices.
    LeafReply {
        leaves: Vec<u32>,
        splits: Vec<u32>,
        starts: Vec<u32>,
        ids: Vec<u32>,
        coords: Vec<f64>,
    },
    /// Link edges routed to the owner of the higher endpoint.
    Edges { pairs: Vec<(GlobalLabel, GlobalLabel)> },
    /// Current root of the listed local points, please.
    LabelReq { targets: Vec<u32> },
    LabelReply {
        targets: Vec<u32>,
        roots: Vec<GlobalLabel>,
    },
    /// Positions of the listed local points (group anchors), please.
    RootPosReq { roots: Vec<u32> },
    RootPosReply {
        roots: Vec<u32>,
        coords: Vec<f64>,
    },
    /// Per-rank group reductions, gathered for the final merge.
    CatPartial {
        roots: Vec<GlobalLabel>,
        counts: Vec<u32>,
        masses: Vec<f64>,
        /// Mass-weighted offsets from the group anchor, dim per group.
        moments: Vec<f64>,
        /// Mass-weighted squared offsets from the group anchor.
        seconds: Vec<f64>,
        vels: Option<Vec<f64>>,
    },
}

fn opt_len<T>(v: &Option<Vec<T>>) -> usize {
    v.as_ref().map_or(0, Vec::len)
}

/// Approximate wire size, for traffic accounting only.
fn msg_bytes(msg: &Msg) -> u64 {
    let payload = match msg {
        Msg::Points {
            ids,
            coords,
            masses,
            velocities,
        } => ids.len() * 4 + (coords.len() + opt_len(masses) + opt_len(velocities)) * 8,
        Msg::TopInfo {
            centers,
            halves,
            counts,
        } => (centers.len() + halves.len()) * 8 + counts.len() * 4,
        Msg::NodeReq { parents, .. } => 4 + parents.len() * 4,
        Msg::NodeReply {
            parents,
            child_splits,
            children,
            centers,
            halves,
            counts,
            ..
        } => {
            4 + (parents.len() + child_splits.len() + children.len() + counts.len()) * 4
                + (centers.len() + halves.len()) * 8
        }
        Msg::LeafReq { leaves } => leaves.len() * 4,
        Msg::LeafReply {
            leaves,
            splits,
            starts,
            ids,
            coords,
        } => (leaves.len() + splits.len() + starts.len() + ids.len()) * 4 + coords.len() * 8,
        Msg::Edges { pairs } => pairs.len() * 16,
        Msg::LabelReq { targets } => targets.len() * 4,
        Msg::LabelReply { targets, roots } => targets.len() * 4 + roots.len() * 8,
        Msg::RootPosReq { roots } => roots.len() * 4,
        Msg::RootPosReply { roots, coords } => roots.len() * 4 + coords.len() * 8,
        Msg::CatPartial {
            roots,
            counts,
            masses,
            moments,
            seconds,
            vels,
        } => {
            roots.len() * 8
                + counts.len() * 4
                + (masses.len() + moments.len() + seconds.len() + opt_len(vels)) * 8
        }
    };
    16 + payload as u64
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Counters {
    pub messages: u64,
    pub bytes: u64,
}

#[derive(Debug)]
pub struct Network {
    inboxes: Vec<Vec<(u32, Msg)>>,
    node_reqs_seen: HashSet<(u32, u32, u32, u32)>,
    leaf_reqs_seen: HashSet<(u32, u32, u32)>,
    pub counters: Counters,
}

impl Network {
    pub fn new(n_ranks: usize) -> Self {
        Self {
            inboxes: (0..n_ranks).map(|_| Vec::new()).collect(),
            node_reqs_seen: HashSet::new(),
            leaf_reqs_seen: HashSet::new(),
            counters: Counters::default(),
        }
    }

    pub fn n_ranks(&self) -> usize {
        self.inboxes.len()
    }

    /// Forget request-once history; call at the start of each collective
    /// operation.
    pub fn reset_guards(&mut self) {
        self.node_reqs_seen.clear();
        self.leaf_reqs_seen.clear();
    }

    pub fn send(&mut self, from: u32, to: u32, msg: Msg) -> Result<()> {
        if to as usize >= self.inboxes.len() {
            return Err(Error::Protocol(format!("send to unknown rank {to}")));
        }
        match &msg {
            Msg::NodeReq { plane, parents } => {
                for &p in parents {
                    if !self.node_reqs_seen.insert((from, to, *plane, p)) {
                        return Err(Error::Protocol(format!(
                            "rank {from} re-requested children of node {p} plane {plane} from rank {to}"
                        )));
                    }
                }
            }
            Msg::LeafReq { leaves } => {
                for &l in leaves {
                    if !self.leaf_reqs_seen.insert((from, to, l)) {
                        return Err(Error::Protocol(format!(
                            "rank {from} re-requested points of leaf {l} from rank {to}"
                        )));
                    }
                }
            }
            _ => {}
        }
        self.counters.messages += 1;
        self.counters.bytes += msg_bytes(&msg);
        self.inboxes[to as usize].push((from, msg));
        Ok(())
    }

    /// Drain a rank's inbox, sorted by sender (stable within a sender).
    pub fn deliver(&mut self, to: u32) -> Vec<(u32, Msg)> {
        let mut v = std::mem::take(&mut self.inboxes[to as usize]);
        v.sort_by_key(|&(from, _)| from);
        v
    }

    pub fn idle(&self) -> bool {
        self.inboxes.iter().all(Vec::is_empty)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn delivery_sorts_by_sender() {
        let mut net = Network::new(3);
        net.send(2, 0, Msg::LeafReq { leaves: vec![7] }).unwrap();
        net.send(1, 0, Msg::LeafReq { leaves: vec![3] }).unwrap();
        let got = net.deliver(0);
        assert_eq!(got.len(), 2);
        assert_eq!(got[0].0, 1);
        assert_eq!(got[1].0, 2);
        assert!(net.idle());
    }

    #[test]
    fn duplicate_node_request_is_a_protocol_error() {
        let mut net = Network::new(2);
        let req = || Msg::NodeReq {
            plane: 1,
            parents: vec![4],
        };
        net.send(0, 1, req()).unwrap();
        assert!(matches!(net.send(0, 1, req()), Err(Error::Protocol(_))));
        // A different parent, plane, or direction is fine.
        net.send(
            0,
            1,
            Msg::NodeReq {
                plane: 1,
                parents: vec![5],
            },
        )
        .unwrap();
        net.send(1, 0, req()).unwrap();
        net.reset_guards();
        net.send(0, 1, req()).unwrap();
    }

    #[test]
    fn global_labels_order_by_rank_then_index() {
        let a = GlobalLabel { rank: 0, idx: 9 };
        let b = GlobalLabel { rank: 1, idx: 0 };
        assert!(a < b);
        assert!(GlobalLabel { rank: 1, idx: 1 } > b);
    }
}
