//! Friends-of-friends clustering over the plane hierarchy.
//!
//! Two points are friends when their (minimal-image) distance is at most
//! the linking length; groups are the connected components of the friend
//! graph. The walk descends the hierarchy carrying a node-level
//! union-find: node pairs whose distance upper bound fits the linking
//! length merge wholesale and mark both nodes as internally connected,
//! pairs whose lower bound exceeds it drop out, and only the undecided
//! remainder descends. At the leaf plane the surviving pairs are settled
//! point by point.
//!
//! Group labels are the input index of each group's representative, which
//! is the member that comes first in z order — a canonical choice that
//! does not depend on how the work was split up. Unions run either
//! sequentially or data-parallel over atomics; both orderings produce
//! identical labels.

use std::sync::atomic::{AtomicBool, AtomicU32, Ordering};

use rayon::prelude::*;

use crate::bounds::{dist_bounds_sq, PeriodicDomain};
use crate::error::{Error, Result};
use crate::ilist::{dense_upper, exclusive_scan, super_node_splits, InteractionList};
use crate::points::PointSet;
use crate::treebuild::{build_hierarchy, TreeHierarchy, TreeParams};

/// Groups below this size are dropped from catalogues by default.
pub const DEFAULT_MIN_GROUP_SIZE: usize = 20;

/// Linking length for `n` points in a volume: scales the mean point
/// separation taken as a cube root regardless of dimension.
pub fn linking_length(alpha: f64, volume: f64, n: u64) -> f64 {
    alpha * (volume / n as f64).cbrt()
}

#[derive(Debug, Clone)]
pub struct FofOptions {
    pub tree: TreeParams,
    /// Top-plane nodes per group when seeding the dense pair list.
    pub ngr: usize,
    /// Run link passes data-parallel over atomic labels.
    pub concurrent: bool,
}

impl Default for FofOptions {
    fn default() -> Self {
        Self {
            tree: TreeParams::default(),
            ngr: 32,
            concurrent: true,
        }
    }
}

#[inline]
fn windows(splits: &[u32]) -> Vec<(u32, u32)> {
    splits.windows(2).map(|w| (w[0], w[1])).collect()
}

#[inline]
fn node(flat: &[f64], dim: usize, i: usize) -> &[f64] {
    &flat[i * dim..(i + 1) * dim]
}

/// Squared length of a node's diagonal; anything at most the squared
/// linking length means every point pair inside is directly linked.
#[inline]
pub(crate) fn diag_sq(halves: &[f64]) -> f64 {
    halves.iter().map(|&h| (2.0 * h) * (2.0 * h)).sum()
}

/// Resolve every label to its root in one ascending pass. Requires the
/// pointer invariant label[i] <= i, which unions toward lower roots keep.
pub(crate) fn contract_labels(labels: &mut [u32]) {
    for i in 0..labels.len() {
        let l = labels[i] as usize;
        debug_assert!(l <= i);
        labels[i] = labels[l];
    }
}

fn find(labels: &[AtomicU32], mut i: u32) -> u32 {
    loop {
        let p = labels[i as usize].load(Ordering::Acquire);
        if p == i {
            return i;
        }
        let gp = labels[p as usize].load(Ordering::Acquire);
        if gp != p {
            // Path halving; failures just mean someone else advanced it.
            let _ = labels[i as usize].compare_exchange_weak(
                p,
                gp,
                Ordering::AcqRel,
                Ordering::Relaxed,
            );
        }
        i = gp;
    }
}

fn union_min(labels: &[AtomicU32], a: u32, b: u32) {
    let (mut a, mut b) = (a, b);
    loop {
        let ra = find(labels, a);
        let rb = find(labels, b);
        if ra == rb {
            return;
        }
        let (hi, lo) = if ra > rb { (ra, rb) } else { (rb, ra) };
        if labels[hi as usize]
            .compare_exchange(hi, lo, Ordering::AcqRel, Ordering::Acquire)
            .is_ok()
        {
            return;
        }
        a = hi;
        b = lo;
    }
}

fn into_atomic(v: Vec<u32>) -> Vec<AtomicU32> {
    v.into_iter().map(AtomicU32::new).collect()
}

fn from_atomic(v: Vec<AtomicU32>) -> Vec<u32> {
    v.into_iter().map(AtomicU32::into_inner).collect()
}

/// Merge node pairs whose distance upper bound fits the linking length,
/// marking both as internally connected. Only sources below `n_mutual`
/// share the receivers' index space and may merge; higher sources are
/// foreign and only ever refined. Receiver segments where the source
/// parent equals the receiving parent enumerate children upper-triangle.
#[allow(clippy::too_many_arguments)]
pub(crate) fn fof_link_pass(
    dim: usize,
    domain: &PeriodicDomain,
    r_sq: f64,
    recv_parents: &[(u32, u32)],
    recv_centers: &[f64],
    recv_halves: &[f64],
    src_parents: &[(u32, u32)],
    src_centers: &[f64],
    src_halves: &[f64],
    il: &InteractionList,
    n_mutual: u32,
    labels: &[AtomicU32],
    linked: &[AtomicBool],
    concurrent: bool,
) {
    let body = |pi: usize| {
        let (cs, ce) = recv_parents[pi];
        for ii in il.segment(pi) {
            let sp = il.isrc[ii] as usize;
            let (ss, se) = src_parents[sp];
            for i in cs..ce {
                let j0 = if sp == pi { i } else { ss };
                for j in j0..se {
                    if j >= n_mutual {
                        continue;
                    }
                    let (_, d_up) = dist_bounds_sq(
                        domain,
                        node(recv_centers, dim, i as usize),
                        node(recv_halves, dim, i as usize),
                        node(src_centers, dim, j as usize),
                        node(src_halves, dim, j as usize),
                    );
                    if d_up <= r_sq {
                        linked[i as usize].store(true, Ordering::Relaxed);
                        linked[j as usize].store(true, Ordering::Relaxed);
                        union_min(labels, i, j);
                    }
                }
            }
        }
    };
    if concurrent {
        (0..recv_parents.len()).into_par_iter().for_each(body);
    } else {
        (0..recv_parents.len()).for_each(body);
    }
}

/// Keep the child pairs that still need refinement: lower bound within
/// the linking length and not already known to lie in one group with
/// both sides internally connected. Labels must be contracted. Pure, so
/// the counting and fill passes agree exactly.
#[allow(clippy::too_many_arguments)]
pub(crate) fn fof_refine_pairs(
    dim: usize,
    domain: &PeriodicDomain,
    r_sq: f64,
    recv_parents: &[(u32, u32)],
    recv_centers: &[f64],
    recv_halves: &[f64],
    src_parents: &[(u32, u32)],
    src_centers: &[f64],
    src_halves: &[f64],
    il: &InteractionList,
    n_mutual: u32,
    labels: &[u32],
    linked: &[bool],
) -> InteractionList {
    let n_recv = recv_parents.last().map_or(0, |&(_, e)| e) as usize;
    let mut counts = vec![0u32; n_recv];
    let pass = |counts: &mut [u32], mut out: Option<(&mut [u32], &mut [f64], &[u32])>| {
        for (pi, &(cs, ce)) in recv_parents.iter().enumerate() {
            for ii in il.segment(pi) {
                let sp = il.isrc[ii] as usize;
                let (ss, se) = src_parents[sp];
                for i in cs..ce {
                    let j0 = if sp == pi { i } else { ss };
                    for j in j0..se {
                        let (d_low, _) = dist_bounds_sq(
                            domain,
                            node(recv_centers, dim, i as usize),
                            node(recv_halves, dim, i as usize),
                            node(src_centers, dim, j as usize),
                            node(src_halves, dim, j as usize),
                        );
                        if d_low > r_sq {
                            continue;
                        }
                        if j < n_mutual
                            && labels[i as usize] == labels[j as usize]
                            && linked[i as usize]
                            && linked[j as usize]
                        {
                            continue;
                        }
                        match &mut out {
                            None => counts[i as usize] += 1,
                            Some((isrc, r_low, off)) => {
                                let slot = (off[i as usize] + counts[i as usize]) as usize;
                                isrc[slot] = j;
                                r_low[slot] = d_low;
                                counts[i as usize] += 1;
                            }
                        }
                    }
                }
            }
        }
    };
    pass(&mut counts, None);
    let ispl = exclusive_scan(&counts);
    let total = *ispl.last().unwrap() as usize;
    let mut isrc = vec![0u32; total];
    let mut r_low = vec![0.0f64; total];
    let offsets = ispl.clone();
    counts.iter_mut().for_each(|c| *c = 0);
    pass(&mut counts, Some((&mut isrc, &mut r_low, &offsets[..n_recv])));
    InteractionList { isrc, r_low, ispl }
}

/// Friends-of-friends labels in point input order. Each label is the
/// input index of the group member that comes first in z order; labels
/// are fixpoints (`labels[labels[i]] == labels[i]`).
pub fn fof(
    points: &PointSet,
    r_link: f64,
    domain: &PeriodicDomain,
    opts: &FofOptions,
) -> Result<Vec<u32>> {
    if !(r_link.is_finite() && r_link > 0.0) {
        return Err(Error::BadLinkingLength { value: r_link });
    }
    if domain.dim() != points.dim() {
        return Err(Error::DimensionMismatch {
            left: points.dim(),
            right: domain.dim(),
        });
    }
    if points.is_empty() {
        return Ok(Vec::new());
    }
    let h = build_hierarchy(&[points], &opts.tree)?;
    let (plabels, _, _) = fof_planes(&h, r_link * r_link, domain, opts);
    let perm = &h.type_perm[0];
    let n_pts = h.n_points();
    let mut out = vec![0u32; n_pts];
    for z in 0..n_pts {
        out[perm[z] as usize] = perm[plabels[z] as usize];
    }
    Ok(out)
}

/// Group labels in z order over a built hierarchy (`labels[z]` is the z
/// index of the group's z-minimal member), plus wall-clock milliseconds
/// of the node walk and of the point phase.
fn fof_planes(
    h: &TreeHierarchy,
    r_sq: f64,
    domain: &PeriodicDomain,
    opts: &FofOptions,
) -> (Vec<u32>, f64, f64) {
    let clock = std::time::Instant::now();
    let dim = h.dim();

    let sup = super_node_splits(h.top_plane().n_nodes(), opts.ngr);
    let mut parent_ranges = windows(&sup);
    let mut parent_labels: Vec<u32> = (0..parent_ranges.len() as u32).collect();
    let mut parent_linked = vec![false; parent_ranges.len()];
    let mut il = dense_upper(parent_ranges.len());

    for p in (0..h.n_planes()).rev() {
        let plane = h.plane(p);
        let n = plane.n_nodes();
        let halves = h.plane_half_extents(p);
        let centers = &plane.centers;

        let mut labels = vec![0u32; n];
        let mut linked = vec![false; n];
        for (pi, &(cs, ce)) in parent_ranges.iter().enumerate() {
            for i in cs..ce {
                if parent_linked[pi] {
                    labels[i as usize] = parent_ranges[parent_labels[pi] as usize].0;
                    linked[i as usize] = true;
                } else {
                    labels[i as usize] = i;
                    linked[i as usize] = diag_sq(node(&halves, dim, i as usize)) < r_sq;
                }
            }
        }

        let alabels = into_atomic(labels);
        let alinked: Vec<AtomicBool> = (0..n).map(|i| AtomicBool::new(linked[i])).collect();
        fof_link_pass(
            dim,
            domain,
            r_sq,
            &parent_ranges,
            centers,
            &halves,
            &parent_ranges,
            centers,
            &halves,
            &il,
            n as u32,
            &alabels,
            &alinked,
            opts.concurrent,
        );
        let mut labels = from_atomic(alabels);
        let linked: Vec<bool> = alinked.into_iter().map(AtomicBool::into_inner).collect();
        contract_labels(&mut labels);

        il = fof_refine_pairs(
            dim,
            domain,
            r_sq,
            &parent_ranges,
            centers,
            &halves,
            &parent_ranges,
            centers,
            &halves,
            &il,
            n as u32,
            &labels,
            &linked,
        );
        parent_ranges = if p > 0 {
            windows(&plane.prev_splits)
        } else {
            windows(&plane.point_splits)
        };
        parent_labels = labels;
        parent_linked = linked;
    }
    let walk_ms = crate::knn::elapsed_ms(clock);

    // Point phase over the surviving leaf pairs.
    let clock = std::time::Instant::now();
    let n_pts = h.n_points();
    let coords = &h.type_coords[0];
    let mut plabels: Vec<u32> = (0..n_pts as u32).collect();
    for (leaf, &(cs, ce)) in parent_ranges.iter().enumerate() {
        if parent_linked[leaf] {
            let first = parent_ranges[parent_labels[leaf] as usize].0;
            for q in cs..ce {
                plabels[q as usize] = first;
            }
        }
    }
    let aplabels = into_atomic(plabels);
    let point_body = |li: usize| {
        let (as_, ae) = parent_ranges[li];
        for ii in il.segment(li) {
            let lj = il.isrc[ii] as usize;
            let (bs, be) = parent_ranges[lj];
            for a in as_..ae {
                let b0 = if lj == li { a + 1 } else { bs };
                for b in b0..be {
                    let d = domain.dist_sq(node(coords, dim, a as usize), node(coords, dim, b as usize));
                    if d <= r_sq {
                        union_min(&aplabels, a, b);
                    }
                }
            }
        }
    };
    if opts.concurrent {
        (0..parent_ranges.len()).into_par_iter().for_each(point_body);
    } else {
        (0..parent_ranges.len()).for_each(point_body);
    }
    let mut plabels = from_atomic(aplabels);
    contract_labels(&mut plabels);
    (plabels, walk_ms, crate::knn::elapsed_ms(clock))
}

/// [`fof`] with a wall-clock phase breakdown. Labels are identical; the
/// input is z-sorted up front so hierarchy construction can be timed
/// apart from the sort.
pub fn fof_profiled(
    points: &PointSet,
    r_link: f64,
    domain: &PeriodicDomain,
    opts: &FofOptions,
) -> Result<(Vec<u32>, crate::knn::PhaseTimes)> {
    if !(r_link.is_finite() && r_link > 0.0) {
        return Err(Error::BadLinkingLength { value: r_link });
    }
    if domain.dim() != points.dim() {
        return Err(Error::DimensionMismatch {
            left: points.dim(),
            right: domain.dim(),
        });
    }
    let mut times = crate::knn::PhaseTimes::default();
    if points.is_empty() {
        return Ok((Vec::new(), times));
    }
    let clock = std::time::Instant::now();
    let perm = crate::zorder::z_sort(points);
    let sorted = points.gather(&perm);
    times.sort_ms = crate::knn::elapsed_ms(clock);

    let clock = std::time::Instant::now();
    let h = build_hierarchy(&[&sorted], &opts.tree)?;
    times.tree_ms = crate::knn::elapsed_ms(clock);

    let (plabels, walk_ms, leaf_ms) = fof_planes(&h, r_link * r_link, domain, opts);
    times.walk_ms = walk_ms;
    times.leaf_ms = leaf_ms;

    let clock = std::time::Instant::now();
    let n_pts = h.n_points();
    let mut out = vec![0u32; n_pts];
    for z in 0..n_pts {
        out[perm[z] as usize] = perm[plabels[z] as usize];
    }
    times.reorder_ms = crate::knn::elapsed_ms(clock);
    Ok((out, times))
}

/// Stable permutation grouping indices by label value.
pub fn group_order_sort(labels: &[u32]) -> Vec<u32> {
    let mut idx: Vec<u32> = (0..labels.len() as u32).collect();
    idx.sort_by_key(|&i| labels[i as usize]);
    idx
}

/// Per-group summary rows, ascending by group label.
#[derive(Debug, Clone, PartialEq)]
pub struct Catalogue {
    pub dim: usize,
    /// Group label (input index of the representative point).
    pub roots: Vec<u32>,
    pub counts: Vec<u32>,
    pub masses: Vec<f64>,
    /// Centre of mass per group, wrapped into the box, flattened.
    pub centers: Vec<f64>,
    /// Mass-weighted rms distance from the centre of mass.
    pub radii: Vec<f64>,
    /// Centre-of-mass velocities when the points carry velocities.
    pub velocities: Option<Vec<f64>>,
}

impl Catalogue {
    pub fn len(&self) -> usize {
        self.roots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.roots.is_empty()
    }
}

/// Reduce labelled points to a group catalogue, dropping groups smaller
/// than `min_count`. Positions are accumulated relative to each group's
/// representative point under the minimal image, so groups straddling a
/// periodic seam reduce correctly; missing masses count as unit mass.
pub fn reduce_catalogue(
    points: &PointSet,
    labels: &[u32],
    domain: &PeriodicDomain,
    min_count: usize,
) -> Catalogue {
    assert_eq!(points.len(), labels.len(), "one label per point");
    let dim = points.dim();
    let order = group_order_sort(labels);
    let mut cat = Catalogue {
        dim,
        roots: Vec::new(),
        counts: Vec::new(),
        masses: Vec::new(),
        centers: Vec::new(),
        radii: Vec::new(),
        velocities: points.velocities().map(|_| Vec::new()),
    };
    let mut start = 0;
    while start < order.len() {
        let root = labels[order[start] as usize];
        let mut end = start + 1;
        while end < order.len() && labels[order[end] as usize] == root {
            end += 1;
        }
        let block = &order[start..end];
        start = end;
        if block.len() < min_count.max(1) {
            continue;
        }
        let anchor = points.point(root as usize).to_vec();
        let mut mass = 0.0;
        let mut com_rel = vec![0.0; dim];
        let mut vel = vec![0.0; dim];
        let mut second = 0.0;
        for &pi in block {
            let m = points.mass(pi as usize);
            let p = points.point(pi as usize);
            mass += m;
            for d in 0..dim {
                let rel = domain.delta(d, p[d], anchor[d]);
                com_rel[d] += m * rel;
                second += m * rel * rel;
            }
            if let Some(vs) = points.velocities() {
                for d in 0..dim {
                    vel[d] += m * vs[pi as usize * dim + d];
                }
            }
        }
        for c in com_rel.iter_mut() {
            *c /= mass;
        }
        second /= mass;
        let com_sq: f64 = com_rel.iter().map(|&c| c * c).sum();
        cat.roots.push(root);
        cat.counts.push(block.len() as u32);
        cat.masses.push(mass);
        for d in 0..dim {
            cat.centers
                .push(domain.wrap_coord(d, anchor[d] + com_rel[d]));
        }
        cat.radii.push((second - com_sq).max(0.0).sqrt());
        if let Some(v) = cat.velocities.as_mut() {
            v.extend(vel.iter().map(|x| x / mass));
        }
    }
    cat
}
