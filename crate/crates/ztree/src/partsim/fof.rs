//! Distributed friends-of-friends over per-rank trees.
//!
//! Node-level merging stays within each rank: imported nodes are foreign
//! to the union-find, so every cross-rank candidate pair survives to the
//! leaves and becomes a point edge. Each unordered pair of nodes on two
//! ranks is walked once, by the lower rank — the top-plane exchange is
//! one-sided. Edges are routed to the owner of the higher endpoint and
//! either applied there or forwarded with a strictly smaller endpoint,
//! so the exchange terminates; remote-parent pointers are then chased to
//! a fixpoint. The resulting labels equal the single-tree labels: both
//! name each group by its first member in global z order.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicBool, AtomicU32};

use crate::bounds::PeriodicDomain;
use crate::error::{Error, Result};
use crate::fof::{contract_labels, diag_sq, fof_link_pass, fof_refine_pairs, Catalogue};
use crate::ilist::{super_node_splits, InteractionList};
use crate::knn::elapsed_ms;

use super::net::{GlobalLabel, Msg};
use super::walk::{
    combined_f64, combined_parents, fetch_children, fetch_leaf_points, referenced_imports,
    top_exchange, windows, LeafImport,
};
use super::Cluster;

#[inline]
fn node(flat: &[f64], dim: usize, i: usize) -> &[f64] {
    &flat[i * dim..(i + 1) * dim]
}

/// Non-atomic union-find keeping roots minimal, with path halving.
fn lfind(labels: &mut [u32], mut i: u32) -> u32 {
    loop {
        let p = labels[i as usize];
        if p == i {
            return i;
        }
        let gp = labels[p as usize];
        labels[i as usize] = gp;
        i = gp;
    }
}

fn lunion(labels: &mut [u32], a: u32, b: u32) {
    let ra = lfind(labels, a);
    let rb = lfind(labels, b);
    if ra == rb {
        return;
    }
    let (hi, lo) = if ra > rb { (ra, rb) } else { (rb, ra) };
    labels[hi as usize] = lo;
}

/// Receiver `i` of `n_recv` takes sources `i..n_src`: the local upper
/// triangle plus every import.
fn upper_rect(n_recv: usize, n_src: usize) -> InteractionList {
    debug_assert!(n_src >= n_recv);
    let mut isrc = Vec::new();
    let mut ispl = vec![0u32];
    for i in 0..n_recv {
        isrc.extend(i as u32..n_src as u32);
        ispl.push(isrc.len() as u32);
    }
    InteractionList {
        r_low: vec![0.0; isrc.len()],
        isrc,
        ispl,
    }
}

struct RankWalk {
    il: InteractionList,
    recv_parents: Vec<(u32, u32)>,
    src_parents: Vec<(u32, u32)>,
    parent_labels: Vec<u32>,
    parent_linked: Vec<bool>,
}

/// Per-rank point state during the edge exchange: the local union-find
/// and, for local roots known to belong to a group reaching other ranks,
/// the best remote parent seen so far (always strictly below the root in
/// global order).
struct Resolve {
    plabels: Vec<u32>,
    rp: BTreeMap<u32, GlobalLabel>,
}

impl Resolve {
    fn resolve(&mut self, self_rank: u32, i: u32) -> GlobalLabel {
        let r0 = lfind(&mut self.plabels, i);
        match self.rp.get(&r0) {
            Some(&g) => g,
            None => GlobalLabel {
                rank: self_rank,
                idx: r0,
            },
        }
    }

    /// Apply one edge whose higher endpoint this rank owns. Either the
    /// union happens here (the higher of the two resolved candidates is
    /// a local root) or the edge is forwarded to the higher candidate's
    /// owner — with the endpoint strictly decreased, which bounds the
    /// exchange.
    fn apply(
        &mut self,
        self_rank: u32,
        hi: GlobalLabel,
        lo: GlobalLabel,
        out: &mut Vec<(GlobalLabel, GlobalLabel)>,
    ) {
        debug_assert_eq!(hi.rank, self_rank);
        let ra = lfind(&mut self.plabels, hi.idx);
        let ca = self.rp.get(&ra).copied().unwrap_or(GlobalLabel {
            rank: self_rank,
            idx: ra,
        });
        let (rb, cb) = if lo.rank == self_rank {
            let rb = lfind(&mut self.plabels, lo.idx);
            let cb = self.rp.get(&rb).copied().unwrap_or(GlobalLabel {
                rank: self_rank,
                idx: rb,
            });
            (Some(rb), cb)
        } else {
            (None, lo)
        };
        if ca == cb {
            return;
        }
        let (nhi, nlo) = if ca > cb { (ca, cb) } else { (cb, ca) };
        if nhi.rank == self_rank {
            // A resolved candidate on this rank is a local root without a
            // remote parent, so the attachment is immediate.
            debug_assert_eq!(self.plabels[nhi.idx as usize], nhi.idx);
            debug_assert!(!self.rp.contains_key(&nhi.idx));
            if nlo.rank == self_rank {
                self.plabels[nhi.idx as usize] = nlo.idx;
            } else {
                self.rp.insert(nhi.idx, nlo);
            }
        } else {
            out.push((nhi, nlo));
            // Shorten the chains that led here.
            if ca.rank != self_rank && nlo < ca {
                self.rp.insert(ra, nlo);
            }
            if let Some(rb) = rb {
                if cb.rank != self_rank && nlo < cb {
                    self.rp.insert(rb, nlo);
                }
            }
        }
    }
}

struct Partial {
    count: u32,
    mass: f64,
    moment: Vec<f64>,
    second: f64,
    vel: Vec<f64>,
}

pub(super) fn cluster_fof(
    cluster: &mut Cluster,
    r_link: f64,
    domain: &PeriodicDomain,
    catalogue_min: Option<usize>,
) -> Result<(Vec<u32>, Option<Catalogue>)> {
    let dim = cluster.dim;
    let n = cluster.n_points;
    if !(r_link.is_finite() && r_link > 0.0) {
        return Err(Error::BadLinkingLength { value: r_link });
    }
    if domain.dim() != dim {
        return Err(Error::DimensionMismatch {
            left: dim,
            right: domain.dim(),
        });
    }
    cluster.net.reset_guards();
    let r_sq = r_link * r_link;
    let n_ranks = cluster.ranks.len();
    let n_planes = cluster.schedule.len();
    let ngr = cluster.params.ngr;
    let concurrent = cluster.params.concurrent_fof;

    let clock = std::time::Instant::now();
    let mut imports = top_exchange(cluster, true)?;

    let mut st: Vec<RankWalk> = Vec::with_capacity(n_ranks);
    for r in 0..n_ranks {
        let n_top = cluster.ranks[r]
            .tree
            .as_ref()
            .map_or(0, |t| t.top_plane().n_nodes());
        let local_groups = windows(&super_node_splits(n_top, ngr));
        let mut src_parents = local_groups.clone();
        for (_, s, e) in imports[r].owner_runs() {
            let base = n_top as u32 + s;
            for w in windows(&super_node_splits((e - s) as usize, ngr)) {
                src_parents.push((base + w.0, base + w.1));
            }
        }
        let il = upper_rect(local_groups.len(), src_parents.len());
        st.push(RankWalk {
            il,
            src_parents,
            parent_labels: (0..local_groups.len() as u32).collect(),
            parent_linked: vec![false; local_groups.len()],
            recv_parents: local_groups,
        });
    }

    for p in (0..n_planes).rev() {
        if p < n_planes - 1 {
            let referenced: Vec<Vec<u32>> = (0..n_ranks)
                .map(|r| {
                    let n_local = cluster.ranks[r]
                        .tree
                        .as_ref()
                        .map_or(0, |t| t.plane(p + 1).n_nodes()) as u32;
                    referenced_imports(&st[r].il.isrc, n_local)
                })
                .collect();
            let (new_imports, ranges) = fetch_children(cluster, p, &referenced, &imports)?;
            for r in 0..n_ranks {
                let Some(tree) = cluster.ranks[r].tree.as_ref() else {
                    continue;
                };
                let n_local_child = tree.plane(p).n_nodes() as u32;
                let rw = &mut st[r];
                rw.recv_parents = windows(&tree.plane(p + 1).prev_splits);
                rw.src_parents = combined_parents(&rw.recv_parents, &ranges[r], n_local_child);
            }
            imports = new_imports;
        }
        for r in 0..n_ranks {
            let Some(tree) = cluster.ranks[r].tree.as_ref() else {
                continue;
            };
            let plane = tree.plane(p);
            let n_local = plane.n_nodes();
            let halves = tree.plane_half_extents(p);
            let centers = &plane.centers;
            let src_centers = combined_f64(centers, &imports[r].centers);
            let src_halves = combined_f64(&halves, &imports[r].halves);
            let rw = &mut st[r];

            let mut labels = vec![0u32; n_local];
            let mut linked = vec![false; n_local];
            for (pi, &(cs, ce)) in rw.recv_parents.iter().enumerate() {
                for i in cs..ce {
                    if rw.parent_linked[pi] {
                        labels[i as usize] = rw.recv_parents[rw.parent_labels[pi] as usize].0;
                        linked[i as usize] = true;
                    } else {
                        labels[i as usize] = i;
                        linked[i as usize] = diag_sq(node(&halves, dim, i as usize)) < r_sq;
                    }
                }
            }
            let alabels: Vec<AtomicU32> = labels.into_iter().map(AtomicU32::new).collect();
            let alinked: Vec<AtomicBool> = linked.into_iter().map(AtomicBool::new).collect();
            fof_link_pass(
                dim,
                domain,
                r_sq,
                &rw.recv_parents,
                centers,
                &halves,
                &rw.src_parents,
                &src_centers,
                &src_halves,
                &rw.il,
                n_local as u32,
                &alabels,
                &alinked,
                concurrent,
            );
            let mut labels: Vec<u32> = alabels.into_iter().map(AtomicU32::into_inner).collect();
            let linked: Vec<bool> = alinked.into_iter().map(AtomicBool::into_inner).collect();
            contract_labels(&mut labels);
            let refined = fof_refine_pairs(
                dim,
                domain,
                r_sq,
                &rw.recv_parents,
                centers,
                &halves,
                &rw.src_parents,
                &src_centers,
                &src_halves,
                &rw.il,
                n_local as u32,
                &labels,
                &linked,
            );
            rw.il = refined;
            rw.parent_labels = labels;
            rw.parent_linked = linked;
        }
    }
    cluster.times.walk_ms = elapsed_ms(clock);

    let clock = std::time::Instant::now();
    let referenced: Vec<Vec<u32>> = (0..n_ranks)
        .map(|r| {
            let n_local = cluster.ranks[r]
                .tree
                .as_ref()
                .map_or(0, |t| t.plane(0).n_nodes()) as u32;
            referenced_imports(&st[r].il.isrc, n_local)
        })
        .collect();
    let leaf = fetch_leaf_points(cluster, &referenced, &imports)?;

    // Point phase: local pairs settle in the local union-find, pairs with
    // an imported point become edges keyed by global identity. Distances
    // take the earlier point in global z order first.
    let mut states: Vec<Resolve> = Vec::with_capacity(n_ranks);
    let mut outboxes: Vec<BTreeMap<u32, Vec<(GlobalLabel, GlobalLabel)>>> =
        (0..n_ranks).map(|_| BTreeMap::new()).collect();
    let mut total_edges = 0usize;
    for r in 0..n_ranks {
        let rank = &cluster.ranks[r];
        let mut plabels: Vec<u32> = (0..rank.len() as u32).collect();
        let Some(tree) = rank.tree.as_ref() else {
            states.push(Resolve {
                plabels,
                rp: BTreeMap::new(),
            });
            continue;
        };
        let point_windows = windows(&tree.plane(0).point_splits);
        let n_leaves = point_windows.len();
        for (li, &(cs, ce)) in point_windows.iter().enumerate() {
            if st[r].parent_linked[li] {
                let first = point_windows[st[r].parent_labels[li] as usize].0;
                for q in cs..ce {
                    plabels[q as usize] = first;
                }
            }
        }
        let li_data: &LeafImport = &leaf[r];
        for (li, &(as_, ae)) in point_windows.iter().enumerate() {
            for ii in st[r].il.segment(li) {
                let sj = st[r].il.isrc[ii] as usize;
                if sj < n_leaves {
                    let (bs, be) = point_windows[sj];
                    for a in as_..ae {
                        let b0 = if sj == li { a + 1 } else { bs };
                        for b in b0..be {
                            let d = domain.dist_sq(
                                node(&rank.coords, dim, a as usize),
                                node(&rank.coords, dim, b as usize),
                            );
                            if d <= r_sq {
                                lunion(&mut plabels, a, b);
                            }
                        }
                    }
                } else {
                    let (bs, be) = li_data.ranges[sj - n_leaves];
                    for a in as_..ae {
                        let ga = GlobalLabel {
                            rank: r as u32,
                            idx: a,
                        };
                        let pa = node(&rank.coords, dim, a as usize);
                        for b in bs..be {
                            let gb = GlobalLabel {
                                rank: li_data.owners[b as usize],
                                idx: li_data.zidx[b as usize],
                            };
                            let pb = node(&li_data.coords, dim, b as usize);
                            let d = if ga < gb {
                                domain.dist_sq(pa, pb)
                            } else {
                                domain.dist_sq(pb, pa)
                            };
                            if d <= r_sq {
                                let (hi, lo) = if ga > gb { (ga, gb) } else { (gb, ga) };
                                outboxes[r].entry(hi.rank).or_default().push((hi, lo));
                                total_edges += 1;
                            }
                        }
                    }
                }
            }
        }
        contract_labels(&mut plabels);
        states.push(Resolve {
            plabels,
            rp: BTreeMap::new(),
        });
    }

    // Edge exchange until quiet; each forward strictly lowers the higher
    // endpoint, so the round count is bounded.
    let mut rounds_left = total_edges + n + 8;
    loop {
        let mut any = false;
        for r in 0..n_ranks {
            for (to, mut pairs) in std::mem::take(&mut outboxes[r]) {
                if pairs.is_empty() {
                    continue;
                }
                pairs.sort_unstable();
                cluster.net.send(r as u32, to, Msg::Edges { pairs })?;
                any = true;
            }
        }
        if !any {
            break;
        }
        if rounds_left == 0 {
            return Err(Error::Protocol("edge exchange failed to settle".into()));
        }
        rounds_left -= 1;
        for r in 0..n_ranks {
            let mut batch: Vec<(GlobalLabel, GlobalLabel)> = Vec::new();
            for (_, msg) in cluster.net.deliver(r as u32) {
                let Msg::Edges { pairs } = msg else {
                    return Err(Error::Protocol("expected link edges".into()));
                };
                batch.extend(pairs);
            }
            batch.sort_unstable();
            let mut fwd = Vec::new();
            for (hi, lo) in batch {
                if hi.rank != r as u32 {
                    return Err(Error::Protocol("edge routed to the wrong rank".into()));
                }
                states[r].apply(r as u32, hi, lo, &mut fwd);
            }
            for (hi, lo) in fwd {
                outboxes[r].entry(hi.rank).or_default().push((hi, lo));
            }
        }
    }

    // Chase remote parents to the global fixpoint: afterwards every
    // stored target is a settled root at its owner.
    let mut rounds_left = n + 8;
    loop {
        let mut changed = false;
        // Local chains first: a stored target pointing back into this
        // rank resolves here without a message.
        for (r, state) in states.iter_mut().enumerate() {
            loop {
                let pending: Vec<(u32, GlobalLabel)> = state
                    .rp
                    .iter()
                    .filter(|&(_, v)| v.rank == r as u32)
                    .map(|(&k, &v)| (k, v))
                    .collect();
                let mut moved = false;
                for (k, v) in pending {
                    let c = state.resolve(r as u32, v.idx);
                    if c < v {
                        state.rp.insert(k, c);
                        moved = true;
                        changed = true;
                    }
                }
                if !moved {
                    break;
                }
            }
        }
        // Then one remote round.
        for (r, state) in states.iter().enumerate() {
            let mut by_owner: BTreeMap<u32, Vec<u32>> = BTreeMap::new();
            for &v in state.rp.values() {
                if v.rank != r as u32 {
                    by_owner.entry(v.rank).or_default().push(v.idx);
                }
            }
            for (owner, mut targets) in by_owner {
                targets.sort_unstable();
                targets.dedup();
                cluster
                    .net
                    .send(r as u32, owner, Msg::LabelReq { targets })?;
            }
        }
        let all_reqs: Vec<Vec<(u32, Msg)>> = (0..n_ranks)
            .map(|r| cluster.net.deliver(r as u32))
            .collect();
        for (r, reqs) in all_reqs.into_iter().enumerate() {
            for (from, msg) in reqs {
                let Msg::LabelReq { targets } = msg else {
                    return Err(Error::Protocol("expected a label request".into()));
                };
                let roots: Vec<GlobalLabel> = targets
                    .iter()
                    .map(|&t| states[r].resolve(r as u32, t))
                    .collect();
                cluster
                    .net
                    .send(r as u32, from, Msg::LabelReply { targets, roots })?;
            }
        }
        for r in 0..n_ranks {
            let mut map: BTreeMap<GlobalLabel, GlobalLabel> = BTreeMap::new();
            for (from, msg) in cluster.net.deliver(r as u32) {
                let Msg::LabelReply { targets, roots } = msg else {
                    return Err(Error::Protocol("expected a label reply".into()));
                };
                for (t, g) in targets.into_iter().zip(roots) {
                    map.insert(GlobalLabel { rank: from, idx: t }, g);
                }
            }
            let pending: Vec<(u32, GlobalLabel)> = states[r]
                .rp
                .iter()
                .map(|(&k, &v)| (k, v))
                .collect();
            for (k, v) in pending {
                if let Some(&g) = map.get(&v) {
                    if g < v {
                        states[r].rp.insert(k, g);
                        changed = true;
                    }
                }
            }
        }
        if !changed {
            break;
        }
        if rounds_left == 0 {
            return Err(Error::Protocol("label resolution failed to settle".into()));
        }
        rounds_left -= 1;
    }
    cluster.times.leaf_ms = elapsed_ms(clock);

    let clock = std::time::Instant::now();
    // Final labels, mapped back to input indices.
    let final_g: Vec<Vec<GlobalLabel>> = (0..n_ranks)
        .map(|r| {
            let len = states[r].plabels.len();
            (0..len as u32)
                .map(|i| states[r].resolve(r as u32, i))
                .collect()
        })
        .collect();
    let mut out = vec![0u32; n];
    for r in 0..n_ranks {
        for (i, &g) in final_g[r].iter().enumerate() {
            out[cluster.ranks[r].ids[i] as usize] =
                cluster.ranks[g.rank as usize].ids[g.idx as usize];
        }
    }

    let Some(min_count) = catalogue_min else {
        cluster.times.reorder_ms = elapsed_ms(clock);
        return Ok((out, None));
    };

    // Catalogue: per-rank partial sums around each group's representative
    // point, merged on rank 0 in rank order.
    let with_velocity = cluster.ranks[0].velocities.is_some();
    for r in 0..n_ranks {
        let mut remote_roots: BTreeMap<u32, Vec<u32>> = BTreeMap::new();
        for &g in &final_g[r] {
            if g.rank != r as u32 {
                remote_roots.entry(g.rank).or_default().push(g.idx);
            }
        }
        for (owner, mut roots) in remote_roots {
            roots.sort_unstable();
            roots.dedup();
            cluster.net.send(r as u32, owner, Msg::RootPosReq { roots })?;
        }
    }
    let all_reqs: Vec<Vec<(u32, Msg)>> = (0..n_ranks)
        .map(|r| cluster.net.deliver(r as u32))
        .collect();
    for (r, reqs) in all_reqs.into_iter().enumerate() {
        for (from, msg) in reqs {
            let Msg::RootPosReq { roots } = msg else {
                return Err(Error::Protocol("expected an anchor request".into()));
            };
            let mut coords = Vec::with_capacity(roots.len() * dim);
            for &i in &roots {
                coords.extend_from_slice(node(&cluster.ranks[r].coords, dim, i as usize));
            }
            cluster
                .net
                .send(r as u32, from, Msg::RootPosReply { roots, coords })?;
        }
    }
    for r in 0..n_ranks {
        let mut anchors: BTreeMap<GlobalLabel, Vec<f64>> = BTreeMap::new();
        for (from, msg) in cluster.net.deliver(r as u32) {
            let Msg::RootPosReply { roots, coords } = msg else {
                return Err(Error::Protocol("expected an anchor reply".into()));
            };
            for (j, &i) in roots.iter().enumerate() {
                anchors.insert(
                    GlobalLabel { rank: from, idx: i },
                    coords[j * dim..(j + 1) * dim].to_vec(),
                );
            }
        }
        let rank = &cluster.ranks[r];
        let mut partials: BTreeMap<GlobalLabel, Partial> = BTreeMap::new();
        for (i, &g) in final_g[r].iter().enumerate() {
            let anchor: &[f64] = if g.rank == r as u32 {
                node(&rank.coords, dim, g.idx as usize)
            } else {
                &anchors[&g]
            };
            let m = rank.masses.as_ref().map_or(1.0, |ms| ms[i]);
            let p = node(&rank.coords, dim, i);
            let part = partials.entry(g).or_insert_with(|| Partial {
                count: 0,
                mass: 0.0,
                moment: vec![0.0; dim],
                second: 0.0,
                vel: vec![0.0; dim],
            });
            part.count += 1;
            part.mass += m;
            for d in 0..dim {
                let rel = domain.delta(d, p[d], anchor[d]);
                part.moment[d] += m * rel;
                part.second += m * rel * rel;
            }
            if let Some(vs) = rank.velocities.as_ref() {
                for d in 0..dim {
                    part.vel[d] += m * vs[i * dim + d];
                }
            }
        }
        let mut roots = Vec::with_capacity(partials.len());
        let mut counts = Vec::with_capacity(partials.len());
        let mut masses = Vec::with_capacity(partials.len());
        let mut moments = Vec::with_capacity(partials.len() * dim);
        let mut seconds = Vec::with_capacity(partials.len());
        let mut vels = with_velocity.then(Vec::new);
        for (g, part) in partials {
            roots.push(g);
            counts.push(part.count);
            masses.push(part.mass);
            moments.extend_from_slice(&part.moment);
            seconds.push(part.second);
            if let Some(v) = vels.as_mut() {
                v.extend_from_slice(&part.vel);
            }
        }
        cluster.net.send(
            r as u32,
            0,
            Msg::CatPartial {
                roots,
                counts,
                masses,
                moments,
                seconds,
                vels,
            },
        )?;
    }
    let mut merged: BTreeMap<GlobalLabel, Partial> = BTreeMap::new();
    for (_, msg) in cluster.net.deliver(0) {
        let Msg::CatPartial {
            roots,
            counts,
            masses,
            moments,
            seconds,
            vels,
        } = msg
        else {
            return Err(Error::Protocol("expected catalogue partials".into()));
        };
        for (j, &g) in roots.iter().enumerate() {
            let part = merged.entry(g).or_insert_with(|| Partial {
                count: 0,
                mass: 0.0,
                moment: vec![0.0; dim],
                second: 0.0,
                vel: vec![0.0; dim],
            });
            part.count += counts[j];
            part.mass += masses[j];
            for d in 0..dim {
                part.moment[d] += moments[j * dim + d];
                if let Some(v) = vels.as_ref() {
                    part.vel[d] += v[j * dim + d];
                }
            }
            part.second += seconds[j];
        }
    }
    let mut rows: Vec<(u32, GlobalLabel, Partial)> = merged
        .into_iter()
        .filter(|(_, part)| part.count as usize >= min_count.max(1))
        .map(|(g, part)| {
            (
                cluster.ranks[g.rank as usize].ids[g.idx as usize],
                g,
                part,
            )
        })
        .collect();
    rows.sort_by_key(|&(root_id, _, _)| root_id);
    let mut cat = Catalogue {
        dim,
        roots: Vec::with_capacity(rows.len()),
        counts: Vec::with_capacity(rows.len()),
        masses: Vec::with_capacity(rows.len()),
        centers: Vec::with_capacity(rows.len() * dim),
        radii: Vec::with_capacity(rows.len()),
        velocities: with_velocity.then(Vec::new),
    };
    for (root_id, g, part) in rows {
        let anchor = node(&cluster.ranks[g.rank as usize].coords, dim, g.idx as usize);
        let mut com_sq = 0.0;
        cat.roots.push(root_id);
        cat.counts.push(part.count);
        cat.masses.push(part.mass);
        for d in 0..dim {
            let c = part.moment[d] / part.mass;
            com_sq += c * c;
            cat.centers.push(domain.wrap_coord(d, anchor[d] + c));
        }
        cat.radii.push((part.second / part.mass - com_sq).max(0.0).sqrt());
        if let Some(v) = cat.velocities.as_mut() {
            v.extend(part.vel.iter().map(|x| x / part.mass));
        }
    }
    cluster.times.reorder_ms = elapsed_ms(clock);
    Ok((out, Some(cat)))
}
