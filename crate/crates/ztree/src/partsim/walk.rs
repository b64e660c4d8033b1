//! Import-table plumbing shared by the distributed walks.
//!
//! Each rank walks its own tree but sees remote trees only through an
//! import table: a locally mirrored slice of another rank's node arrays,
//! fetched plane by plane. Every round requests exactly the children of
//! the import entries still referenced by the rank's interaction list —
//! requesting a node twice trips the network's protocol guard. Combined
//! source tables put local children first and imports after them, so
//! kernel source indices below the local node count are local.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

use super::net::Msg;
use super::{Cluster, Rank};

#[inline]
pub(super) fn windows(splits: &[u32]) -> Vec<(u32, u32)> {
    splits.windows(2).map(|w| (w[0], w[1])).collect()
}

/// Mirrored remote nodes, owner-ascending, request order within an owner.
#[derive(Default)]
pub(super) struct ImportTable {
    pub owners: Vec<u32>,
    /// Node index at the owner, on the table's plane.
    pub remote: Vec<u32>,
    pub centers: Vec<f64>,
    pub halves: Vec<f64>,
    pub counts: Vec<u32>,
}

impl ImportTable {
    pub fn len(&self) -> usize {
        self.owners.len()
    }

    fn push(&mut self, owner: u32, remote: u32, center: &[f64], half: &[f64], count: u32) {
        self.owners.push(owner);
        self.remote.push(remote);
        self.centers.extend_from_slice(center);
        self.halves.extend_from_slice(half);
        self.counts.push(count);
    }

    /// Contiguous per-owner entry runs `(owner, start, end)`.
    pub fn owner_runs(&self) -> Vec<(u32, u32, u32)> {
        let mut runs = Vec::new();
        let mut i = 0;
        while i < self.owners.len() {
            let o = self.owners[i];
            let start = i;
            while i < self.owners.len() && self.owners[i] == o {
                i += 1;
            }
            runs.push((o, start as u32, i as u32));
        }
        runs
    }
}

fn tree_of(rank: &Rank) -> Result<&crate::treebuild::TreeHierarchy> {
    rank.tree
        .as_ref()
        .ok_or_else(|| Error::Protocol("request sent to an empty rank".into()))
}

/// Broadcast every rank's top plane; rank r mirrors the top nodes of all
/// other ranks (`upper_only`: only ranks above r, for walks that handle
/// each unordered pair on its lower rank).
pub(super) fn top_exchange(cluster: &mut Cluster, upper_only: bool) -> Result<Vec<ImportTable>> {
    let n_ranks = cluster.ranks.len();
    let dim = cluster.dim;
    for r in 0..n_ranks {
        let Some(tree) = cluster.ranks[r].tree.as_ref() else {
            continue;
        };
        let centers = tree.top_plane().centers.clone();
        let halves = tree.plane_half_extents(tree.n_planes() - 1);
        let counts = tree.top_plane().counts[0].clone();
        for to in 0..n_ranks {
            if to == r || (upper_only && r < to) {
                continue;
            }
            let m = Msg::TopInfo {
                centers: centers.clone(),
                halves: halves.clone(),
                counts: counts.clone(),
            };
            cluster.net.send(r as u32, to as u32, m)?;
        }
    }
    let mut tables = Vec::with_capacity(n_ranks);
    for r in 0..n_ranks {
        let mut table = ImportTable::default();
        for (from, msg) in cluster.net.deliver(r as u32) {
            let Msg::TopInfo {
                centers,
                halves,
                counts,
            } = msg
            else {
                return Err(Error::Protocol("expected a top-plane table".into()));
            };
            for j in 0..counts.len() {
                table.push(
                    from,
                    j as u32,
                    &centers[j * dim..(j + 1) * dim],
                    &halves[j * dim..(j + 1) * dim],
                    counts[j],
                );
            }
        }
        tables.push(table);
    }
    Ok(tables)
}

/// One fetch round: every rank requests the children (on `child_plane`)
/// of the import entries it still references, owners answer from their
/// trees, and the replies become the next plane's import tables. Also
/// returns, per rank, each old entry's child range in its new table
/// (unreferenced entries get an empty range).
#[allow(clippy::type_complexity)]
pub(super) fn fetch_children(
    cluster: &mut Cluster,
    child_plane: usize,
    referenced: &[Vec<u32>],
    imports: &[ImportTable],
) -> Result<(Vec<ImportTable>, Vec<Vec<(u32, u32)>>)> {
    let n_ranks = cluster.ranks.len();
    let dim = cluster.dim;
    for r in 0..n_ranks {
        let mut by_owner: BTreeMap<u32, Vec<u32>> = BTreeMap::new();
        for &ei in &referenced[r] {
            by_owner
                .entry(imports[r].owners[ei as usize])
                .or_default()
                .push(imports[r].remote[ei as usize]);
        }
        for (owner, parents) in by_owner {
            cluster.net.send(
                r as u32,
                owner,
                Msg::NodeReq {
                    plane: (child_plane + 1) as u32,
                    parents,
                },
            )?;
        }
    }
    // Drain every inbox before any rank answers, so replies sent while
    // answering cannot mix into a later rank's request batch.
    let all_requests: Vec<Vec<(u32, Msg)>> =
        (0..n_ranks).map(|r| cluster.net.deliver(r as u32)).collect();
    for (r, requests) in all_requests.into_iter().enumerate() {
        for (from, msg) in requests {
            let Msg::NodeReq { plane, parents } = msg else {
                return Err(Error::Protocol("expected a child request".into()));
            };
            let tree = tree_of(&cluster.ranks[r])?;
            let pp = plane as usize;
            if pp != child_plane + 1 || pp >= tree.n_planes() {
                return Err(Error::Protocol(format!("child request names plane {pp}")));
            }
            let prev = &tree.plane(pp).prev_splits;
            let child = tree.plane(pp - 1);
            let halves = tree.plane_half_extents(pp - 1);
            let mut child_splits = vec![0u32];
            let mut children = Vec::new();
            let mut centers = Vec::new();
            let mut hs = Vec::new();
            let mut counts = Vec::new();
            for &j in &parents {
                let (cs, ce) = (prev[j as usize], prev[j as usize + 1]);
                for c in cs..ce {
                    children.push(c);
                    centers.extend_from_slice(&child.centers[c as usize * dim..(c as usize + 1) * dim]);
                    hs.extend_from_slice(&halves[c as usize * dim..(c as usize + 1) * dim]);
                    counts.push(child.counts[0][c as usize]);
                }
                child_splits.push(children.len() as u32);
            }
            cluster.net.send(
                r as u32,
                from,
                Msg::NodeReply {
                    plane,
                    parents,
                    child_splits,
                    children,
                    centers,
                    halves: hs,
                    counts,
                },
            )?;
        }
    }
    let mut new_tables = Vec::with_capacity(n_ranks);
    let mut ranges = Vec::with_capacity(n_ranks);
    for r in 0..n_ranks {
        let mut table = ImportTable::default();
        let mut by_key: BTreeMap<(u32, u32), (u32, u32)> = BTreeMap::new();
        for (from, msg) in cluster.net.deliver(r as u32) {
            let Msg::NodeReply {
                parents,
                child_splits,
                children,
                centers,
                halves,
                counts,
                ..
            } = msg
            else {
                return Err(Error::Protocol("expected a child reply".into()));
            };
            for (pi, &par) in parents.iter().enumerate() {
                let (cs, ce) = (child_splits[pi] as usize, child_splits[pi + 1] as usize);
                let start = table.len() as u32;
                for c in cs..ce {
                    table.push(
                        from,
                        children[c],
                        &centers[c * dim..(c + 1) * dim],
                        &halves[c * dim..(c + 1) * dim],
                        counts[c],
                    );
                }
                by_key.insert((from, par), (start, start + (ce - cs) as u32));
            }
        }
        let mut rr = vec![(0u32, 0u32); imports[r].len()];
        for &ei in &referenced[r] {
            let key = (imports[r].owners[ei as usize], imports[r].remote[ei as usize]);
            rr[ei as usize] = *by_key
                .get(&key)
                .ok_or_else(|| Error::Protocol("missing child reply".into()))?;
        }
        new_tables.push(table);
        ranges.push(rr);
    }
    Ok((new_tables, ranges))
}

/// Leaf points mirrored from other ranks. Per old leaf entry a range into
/// the flat arrays; per point its owner, the owner-local z index, the
/// original input index, and coordinates.
#[derive(Default)]
pub(super) struct LeafImport {
    pub ranges: Vec<(u32, u32)>,
    pub owners: Vec<u32>,
    pub zidx: Vec<u32>,
    pub ids: Vec<u32>,
    pub coords: Vec<f64>,
}

/// Like [`fetch_children`] at the point level: fetch the points of every
/// referenced import leaf.
pub(super) fn fetch_leaf_points(
    cluster: &mut Cluster,
    referenced: &[Vec<u32>],
    imports: &[ImportTable],
) -> Result<Vec<LeafImport>> {
    let n_ranks = cluster.ranks.len();
    let dim = cluster.dim;
    for r in 0..n_ranks {
        let mut by_owner: BTreeMap<u32, Vec<u32>> = BTreeMap::new();
        for &ei in &referenced[r] {
            by_owner
                .entry(imports[r].owners[ei as usize])
                .or_default()
                .push(imports[r].remote[ei as usize]);
        }
        for (owner, leaves) in by_owner {
            cluster.net.send(r as u32, owner, Msg::LeafReq { leaves })?;
        }
    }
    let all_requests: Vec<Vec<(u32, Msg)>> =
        (0..n_ranks).map(|r| cluster.net.deliver(r as u32)).collect();
    for (r, requests) in all_requests.into_iter().enumerate() {
        for (from, msg) in requests {
            let Msg::LeafReq { leaves } = msg else {
                return Err(Error::Protocol("expected a leaf request".into()));
            };
            let rank = &cluster.ranks[r];
            let tree = tree_of(rank)?;
            let splits = &tree.plane(0).point_splits;
            let mut out_splits = vec![0u32];
            let mut starts = Vec::new();
            let mut ids = Vec::new();
            let mut coords = Vec::new();
            for &l in &leaves {
                let (ps, pe) = (splits[l as usize] as usize, splits[l as usize + 1] as usize);
                starts.push(ps as u32);
                ids.extend_from_slice(&rank.ids[ps..pe]);
                coords.extend_from_slice(&rank.coords[ps * dim..pe * dim]);
                out_splits.push(ids.len() as u32);
            }
            cluster.net.send(
                r as u32,
                from,
                Msg::LeafReply {
                    leaves,
                    splits: out_splits,
                    starts,
                    ids,
                    coords,
                },
            )?;
        }
    }
    let mut out = Vec::with_capacity(n_ranks);
    for r in 0..n_ranks {
        let mut li = LeafImport::default();
        let mut by_key: BTreeMap<(u32, u32), (u32, u32)> = BTreeMap::new();
        for (from, msg) in cluster.net.deliver(r as u32) {
            let Msg::LeafReply {
                leaves,
                splits,
                starts,
                ids,
                coords,
            } = msg
            else {
                return Err(Error::Protocol("expected a leaf reply".into()));
            };
            for (j, &l) in leaves.iter().enumerate() {
                let (ps, pe) = (splits[j] as usize, splits[j + 1] as usize);
                let base = li.ids.len() as u32;
                for p in ps..pe {
                    li.owners.push(from);
                    li.zidx.push(starts[j] + (p - ps) as u32);
                    li.ids.push(ids[p]);
                }
                li.coords.extend_from_slice(&coords[ps * dim..pe * dim]);
                by_key.insert((from, l), (base, base + (pe - ps) as u32));
            }
        }
        let mut rr = vec![(0u32, 0u32); imports[r].len()];
        for &ei in &referenced[r] {
            let key = (imports[r].owners[ei as usize], imports[r].remote[ei as usize]);
            rr[ei as usize] = *by_key
                .get(&key)
                .ok_or_else(|| Error::Protocol("missing leaf reply".into()))?;
        }
        li.ranges = rr;
        out.push(li);
    }
    Ok(out)
}

/// Import entries referenced by an interaction list whose local source
/// space has `n_local` nodes, ascending and unique.
pub(super) fn referenced_imports(isrc: &[u32], n_local: u32) -> Vec<u32> {
    let mut v: Vec<u32> = isrc
        .iter()
        .filter(|&&s| s >= n_local)
        .map(|&s| s - n_local)
        .collect();
    v.sort_unstable();
    v.dedup();
    v
}

/// Combined per-source-parent child ranges: local parent windows first,
/// then each import entry's fetched child range offset past the local
/// children.
pub(super) fn combined_parents(
    local: &[(u32, u32)],
    import_ranges: &[(u32, u32)],
    n_local_children: u32,
) -> Vec<(u32, u32)> {
    let mut out = Vec::with_capacity(local.len() + import_ranges.len());
    out.extend_from_slice(local);
    for &(a, b) in import_ranges {
        out.push((n_local_children + a, n_local_children + b));
    }
    out
}

/// Concatenate a local plane array with an import array.
pub(super) fn combined_f64(local: &[f64], import: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(local.len() + import.len());
    out.extend_from_slice(local);
    out.extend_from_slice(import);
    out
}

pub(super) fn combined_u32(local: &[u32], import: &[u32]) -> Vec<u32> {
    let mut out = Vec::with_capacity(local.len() + import.len());
    out.extend_from_slice(local);
    out.extend_from_slice(import);
    out
}
