//! Exact k nearest neighbours via dual tree walks.
//!
//! The walk starts from a dense interaction list over coarse node groups
//! and refines it plane by plane. At each plane a per-receiver radius
//! estimate R_max (an upper bound on the k-th neighbour distance of any
//! query inside the receiver) is built from count-weighted distance upper
//! bounds; source nodes whose lower bound exceeds the estimate drop out.
//! At the leaf plane the surviving source points are scanned exactly, so
//! pruning never changes results, only work.
//!
//! All radii and distances are squared until final output. Neighbour ties
//! resolve by (squared distance, source index); source indices are the
//! original input positions. Queries wider than the per-pass heap
//! capacity run as successive chunks with an exclusive floor, so any k is
//! exact.

use arrayvec::ArrayVec;

use crate::bounds::{dist_bounds_sq, PeriodicDomain};
use crate::error::{Error, Result};
use crate::ilist::{dense_init, super_node_splits, InteractionList};
use crate::points::PointSet;
use crate::treebuild::{build_hierarchy, TreeHierarchy, TreeParams};

/// Neighbour heap capacity of one leaf pass; larger k runs chunked.
pub const K_MAX_CHUNK: usize = 32;

/// A bounded set of (radius, count) entries tracking "at least `count`
/// sources lie within `radius`", kept sorted by radius. On overflow the
/// largest-radius entry is dropped when the rest still covers the wanted
/// cumulative count, otherwise the top two entries merge under the larger
/// radius. Estimates derived from it are upper bounds throughout.
#[derive(Debug, Clone)]
pub struct CountHeap {
    entries: Vec<(f64, u64)>,
    total: u64,
    cap: usize,
}

impl CountHeap {
    pub fn new(cap: usize) -> Self {
        assert!(cap >= 1);
        Self {
            entries: Vec::with_capacity(cap + 1),
            total: 0,
            cap,
        }
    }

    pub fn clear(&mut self) {
        self.entries.clear();
        self.total = 0;
    }

    #[inline]
    pub fn total(&self) -> u64 {
        self.total
    }

    /// Smallest tracked radius whose cumulative count reaches k; infinity
    /// while fewer than k sources are tracked.
    pub fn radius_of_count(&self, k: u64) -> f64 {
        if self.total < k {
            return f64::INFINITY;
        }
        let mut cum = 0;
        for &(r, n) in &self.entries {
            cum += n;
            if cum >= k {
                return r;
            }
        }
        unreachable!("cumulative count must reach total")
    }

    /// Record `n` sources within squared radius `r`. Inserts that cannot
    /// lower the current k-estimate are skipped.
    pub fn insert(&mut self, r: f64, n: u64, k: u64) {
        if n == 0 {
            return;
        }
        if self.total >= k && r >= self.radius_of_count(k) {
            return;
        }
        let idx = self.entries.partition_point(|e| e.0 < r);
        if idx < self.entries.len() && self.entries[idx].0 == r {
            self.entries[idx].1 += n;
        } else {
            self.entries.insert(idx, (r, n));
        }
        self.total += n;
        if self.entries.len() > self.cap {
            let (last_r, last_n) = self.entries.pop().unwrap();
            if self.total - last_n < k {
                // The dropped tail is still needed to cover k; fold it
                // into the new top entry under the larger radius.
                let top = self.entries.last_mut().unwrap();
                top.0 = last_r;
                top.1 += last_n;
            } else {
                self.total -= last_n;
            }
        }
    }

    #[cfg(test)]
    fn entries(&self) -> &[(f64, u64)] {
        &self.entries
    }
}

/// Row order of query results.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputOrder {
    /// Rows follow the query input order.
    Input,
    /// Rows follow the query z order.
    ZOrder,
}

#[derive(Debug, Clone)]
pub struct KnnOptions {
    pub tree: TreeParams,
    /// Top-plane nodes per group when seeding the dense list.
    pub ngr: usize,
    /// CountHeap capacity used for radius estimates.
    pub heap_cap: usize,
    /// Sort interaction segments by their lower bound.
    pub sort_rlow: bool,
    /// Stop a receiver's scan once bounds prove the rest irrelevant.
    /// Only effective together with `sort_rlow`.
    pub early_exit: bool,
    pub order: OutputOrder,
}

impl Default for KnnOptions {
    fn default() -> Self {
        Self {
            tree: TreeParams::default(),
            ngr: 32,
            heap_cap: 8,
            sort_rlow: true,
            early_exit: true,
            order: OutputOrder::Input,
        }
    }
}

/// k nearest neighbours of every query: `indices` and `distances` hold k
/// entries per query, rows in the order named by `order`. Indices are
/// source input positions; each row is sorted by (distance, index).
#[derive(Debug, Clone, PartialEq)]
pub struct KnnResult {
    pub k: usize,
    pub indices: Vec<u32>,
    pub distances: Vec<f64>,
    pub order: OutputOrder,
}

#[inline]
fn windows(splits: &[u32]) -> Vec<(u32, u32)> {
    splits.windows(2).map(|w| (w[0], w[1])).collect()
}

#[inline]
fn node(flat: &[f64], dim: usize, i: usize) -> &[f64] {
    &flat[i * dim..(i + 1) * dim]
}

/// One radius-estimation pass: for every receiving child with any query
/// weight, an upper bound on the k-th source distance of its queries,
/// from the parent-level interaction list. Children without queries get
/// -1 so nothing survives refinement for them.
#[allow(clippy::too_many_arguments)]
pub(crate) fn find_rmax(
    dim: usize,
    k: u64,
    heap_cap: usize,
    domain: &PeriodicDomain,
    recv_parents: &[(u32, u32)],
    recv_centers: &[f64],
    recv_halves: &[f64],
    recv_weights: &[u32],
    src_parents: &[(u32, u32)],
    src_counts: &[u32],
    src_centers: &[f64],
    src_halves: &[f64],
    il: &InteractionList,
    early_exit: bool,
    r_max: &mut [f64],
) {
    let mut heaps: Vec<CountHeap> = Vec::new();
    for (pi, &(cs, ce)) in recv_parents.iter().enumerate() {
        let nc = (ce - cs) as usize;
        while heaps.len() < nc {
            heaps.push(CountHeap::new(heap_cap));
        }
        for h in heaps[..nc].iter_mut() {
            h.clear();
        }
        for ii in il.segment(pi) {
            if early_exit {
                let worst = (0..nc)
                    .filter(|&c| recv_weights[cs as usize + c] > 0)
                    .map(|c| heaps[c].radius_of_count(k))
                    .fold(-1.0f64, f64::max);
                if il.r_low[ii] >= worst {
                    break;
                }
            }
            let sp = il.isrc[ii] as usize;
            let (ss, se) = src_parents[sp];
            for sc in ss as usize..se as usize {
                let cnt = src_counts[sc];
                if cnt == 0 {
                    continue;
                }
                for c in 0..nc {
                    let rc = cs as usize + c;
                    if recv_weights[rc] == 0 {
                        continue;
                    }
                    let (_, d_up) = dist_bounds_sq(
                        domain,
                        node(recv_centers, dim, rc),
                        node(recv_halves, dim, rc),
                        node(src_centers, dim, sc),
                        node(src_halves, dim, sc),
                    );
                    heaps[c].insert(d_up, cnt as u64, k);
                }
            }
        }
        for c in 0..nc {
            let rc = cs as usize + c;
            r_max[rc] = if recv_weights[rc] == 0 {
                -1.0
            } else {
                heaps[c].radius_of_count(k)
            };
        }
    }
}

/// Refine a parent-level interaction list one plane down: children of
/// every surviving source parent are kept for a receiving child when
/// their distance lower bound does not exceed the receiver's radius
/// estimate. Runs as a counting pass and an identical fill pass.
#[allow(clippy::too_many_arguments)]
pub(crate) fn refine(
    dim: usize,
    domain: &PeriodicDomain,
    recv_parents: &[(u32, u32)],
    recv_centers: &[f64],
    recv_halves: &[f64],
    src_parents: &[(u32, u32)],
    src_counts: &[u32],
    src_centers: &[f64],
    src_halves: &[f64],
    il: &InteractionList,
    r_max: &[f64],
    early_exit: bool,
) -> InteractionList {
    let n_recv = recv_parents.last().map_or(0, |&(_, e)| e) as usize;
    let mut counts = vec![0u32; n_recv];
    let pass = |counts: &mut [u32], out: Option<(&mut [u32], &mut [f64], &[u32])>| {
        let mut out = out;
        for (pi, &(cs, ce)) in recv_parents.iter().enumerate() {
            let worst = r_max[cs as usize..ce as usize]
                .iter()
                .fold(-1.0f64, |a, &b| a.max(b));
            for ii in il.segment(pi) {
                if early_exit && il.r_low[ii] > worst {
                    break;
                }
                let sp = il.isrc[ii] as usize;
                let (ss, se) = src_parents[sp];
                for sc in ss as usize..se as usize {
                    if src_counts[sc] == 0 {
                        continue;
                    }
                    for rc in cs as usize..ce as usize {
                        let (d_low, _) = dist_bounds_sq(
                            domain,
                            node(recv_centers, dim, rc),
                            node(recv_halves, dim, rc),
                            node(src_centers, dim, sc),
                            node(src_halves, dim, sc),
                        );
                        if d_low <= r_max[rc] {
                            match &mut out {
                                None => counts[rc] += 1,
                                Some((isrc, r_low, off)) => {
                                    let slot = off[rc] + counts[rc];
                                    isrc[slot as usize] = sc as u32;
                                    r_low[slot as usize] = d_low;
                                    counts[rc] += 1;
                                }
                            }
                        }
                    }
                }
            }
        }
    };
    pass(&mut counts, None);
    let ispl = crate::ilist::exclusive_scan(&counts);
    let total = *ispl.last().unwrap() as usize;
    let mut isrc = vec![0u32; total];
    let mut r_low = vec![0.0f64; total];
    let offsets = ispl.clone();
    counts.iter_mut().for_each(|c| *c = 0);
    pass(&mut counts, Some((&mut isrc, &mut r_low, &offsets[..n_recv])));
    InteractionList { isrc, r_low, ispl }
}

#[inline]
fn key_less(a: (f64, u32), b: (f64, u32)) -> bool {
    a.0 < b.0 || (a.0 == b.0 && a.1 < b.1)
}

/// Exact scan of the leaf-level interaction list for one chunk of up to
/// [`K_MAX_CHUNK`] neighbours per query. `floor` carries the last
/// neighbour of the previous chunk; only strictly later (distance, index)
/// keys are admitted.
#[allow(clippy::too_many_arguments)]
pub(crate) fn leaf_pass(
    dim: usize,
    k_chunk: usize,
    domain: &PeriodicDomain,
    q_splits: &[u32],
    q_coords: &[f64],
    il: &InteractionList,
    src_ranges: &[(u32, u32)],
    src_coords: &[f64],
    src_ids: &[u32],
    early_exit: bool,
    floor: Option<(&[f64], &[u32])>,
    out_d: &mut [f64],
    out_i: &mut [u32],
) {
    assert!((1..=K_MAX_CHUNK).contains(&k_chunk));
    let mut heap: ArrayVec<(f64, u32), K_MAX_CHUNK> = ArrayVec::new();
    for li in 0..il.n_receivers() {
        for q in q_splits[li] as usize..q_splits[li + 1] as usize {
            let qp = node(q_coords, dim, q);
            let fl = floor.map(|(fd, fi)| (fd[q], fi[q]));
            heap.clear();
            for ii in il.segment(li) {
                if early_exit && heap.len() == k_chunk && heap[k_chunk - 1].0 < il.r_low[ii] {
                    break;
                }
                let (ps, pe) = src_ranges[il.isrc[ii] as usize];
                for p in ps as usize..pe as usize {
                    // Source-first argument order: the wrap is not bitwise
                    // antisymmetric, so every point-pair distance in the
                    // crate fixes this orientation.
                    let d = domain.dist_sq(node(src_coords, dim, p), qp);
                    let key = (d, src_ids[p]);
                    if let Some(f) = fl {
                        if !key_less(f, key) {
                            continue;
                        }
                    }
                    if heap.len() < k_chunk {
                        let pos = heap.partition_point(|&e| key_less(e, key));
                        heap.insert(pos, key);
                    } else if key_less(key, heap[k_chunk - 1]) {
                        let pos = heap.partition_point(|&e| key_less(e, key));
                        heap.pop();
                        heap.insert(pos, key);
                    }
                }
            }
            assert_eq!(heap.len(), k_chunk, "query ran out of candidates");
            for (c, &(d, id)) in heap.iter().enumerate() {
                out_d[q * k_chunk + c] = d;
                out_i[q * k_chunk + c] = id;
            }
        }
    }
}

/// Walk all planes of a built hierarchy down to a leaf-level interaction
/// list (receivers and sources are leaf nodes).
pub(crate) fn walk_planes(
    h: &TreeHierarchy,
    src_type: usize,
    q_type: usize,
    k: u64,
    domain: &PeriodicDomain,
    opts: &KnnOptions,
) -> InteractionList {
    let dim = h.dim();
    let ee = opts.early_exit && opts.sort_rlow;
    let sup = super_node_splits(h.top_plane().n_nodes(), opts.ngr);
    let mut parents = windows(&sup);
    let mut il = dense_init(parents.len(), parents.len());
    for p in (0..h.n_planes()).rev() {
        let plane = h.plane(p);
        let halves = h.plane_half_extents(p);
        let centers = &plane.centers;
        let src_counts = &plane.counts[src_type];
        let q_counts = &plane.counts[q_type];
        let mut r_max = vec![0.0; plane.n_nodes()];
        find_rmax(
            dim, k, opts.heap_cap, domain, &parents, centers, &halves, q_counts, &parents,
            src_counts, centers, &halves, &il, ee, &mut r_max,
        );
        il = refine(
            dim, domain, &parents, centers, &halves, &parents, src_counts, centers, &halves, &il,
            &r_max, ee,
        );
        if opts.sort_rlow {
            il.sort_segments();
        }
        if p > 0 {
            parents = windows(&plane.prev_splits);
        }
    }
    il
}

/// Run the chunked leaf phase over a walked hierarchy and assemble the
/// result rows in query z order (indices are source input positions,
/// distances squared).
#[allow(clippy::too_many_arguments)]
pub(crate) fn run_leaf_chunks(
    dim: usize,
    k: usize,
    domain: &PeriodicDomain,
    q_splits: &[u32],
    q_coords: &[f64],
    il: &InteractionList,
    src_ranges: &[(u32, u32)],
    src_coords: &[f64],
    src_ids: &[u32],
    early_exit: bool,
) -> (Vec<u32>, Vec<f64>) {
    let n_q = q_coords.len() / dim.max(1);
    let mut all_d = vec![0.0f64; n_q * k];
    let mut all_i = vec![0u32; n_q * k];
    let mut floor_d = vec![0.0f64; n_q];
    let mut floor_i = vec![0u32; n_q];
    let mut done = 0usize;
    while done < k {
        let kc = (k - done).min(K_MAX_CHUNK);
        let mut cd = vec![0.0f64; n_q * kc];
        let mut ci = vec![0u32; n_q * kc];
        let floor = if done == 0 {
            None
        } else {
            Some((&floor_d[..], &floor_i[..]))
        };
        leaf_pass(
            dim, kc, domain, q_splits, q_coords, il, src_ranges, src_coords, src_ids, early_exit,
            floor, &mut cd, &mut ci,
        );
        for q in 0..n_q {
            for c in 0..kc {
                all_d[q * k + done + c] = cd[q * kc + c];
                all_i[q * k + done + c] = ci[q * kc + c];
            }
            floor_d[q] = cd[q * kc + kc - 1];
            floor_i[q] = ci[q * kc + kc - 1];
        }
        done += kc;
    }
    (all_i, all_d)
}

/// k nearest neighbours among `sets[src_type]` for every point of
/// `sets[q_type]`, with all sets sharing one tree.
pub(crate) fn knn_with_types(
    sets: &[&PointSet],
    src_type: usize,
    q_type: usize,
    k: usize,
    domain: &PeriodicDomain,
    opts: &KnnOptions,
) -> Result<KnnResult> {
    let h = build_hierarchy(sets, &opts.tree)?;
    let dim = h.dim();
    let il = walk_planes(&h, src_type, q_type, k as u64, domain, opts);
    let leaf_q = windows(&h.type_leaf_splits[q_type]);
    let q_splits: Vec<u32> = h.type_leaf_splits[q_type].clone();
    debug_assert_eq!(leaf_q.len(), il.n_receivers());
    let src_ranges = windows(&h.type_leaf_splits[src_type]);
    let ee = opts.early_exit && opts.sort_rlow;
    let (iz, dz) = run_leaf_chunks(
        dim,
        k,
        domain,
        &q_splits,
        &h.type_coords[q_type],
        &il,
        &src_ranges,
        &h.type_coords[src_type],
        &h.type_perm[src_type],
        ee,
    );
    let n_q = h.type_perm[q_type].len();
    let (mut indices, mut distances) = match opts.order {
        OutputOrder::ZOrder => (iz, dz),
        OutputOrder::Input => {
            let mut ii = vec![0u32; n_q * k];
            let mut dd = vec![0.0f64; n_q * k];
            for z in 0..n_q {
                let orig = h.type_perm[q_type][z] as usize;
                ii[orig * k..(orig + 1) * k].copy_from_slice(&iz[z * k..(z + 1) * k]);
                dd[orig * k..(orig + 1) * k].copy_from_slice(&dz[z * k..(z + 1) * k]);
            }
            (ii, dd)
        }
    };
    for d in distances.iter_mut() {
        *d = d.sqrt();
    }
    indices.shrink_to_fit();
    Ok(KnnResult {
        k,
        indices,
        distances,
        order: opts.order,
    })
}

/// k nearest neighbours of every query point among the sources; with no
/// query set, every source queries against the full source set (itself
/// included, at distance zero).
pub fn knn(
    sources: &PointSet,
    queries: Option<&PointSet>,
    k: usize,
    domain: &PeriodicDomain,
    opts: &KnnOptions,
) -> Result<KnnResult> {
    if k == 0 {
        return Err(Error::KZero);
    }
    if k > sources.len() {
        return Err(Error::KTooLarge {
            k,
            n: sources.len(),
        });
    }
    if domain.dim() != sources.dim() {
        return Err(Error::DimensionMismatch {
            left: sources.dim(),
            right: domain.dim(),
        });
    }
    match queries {
        None => knn_with_types(&[sources], 0, 0, k, domain, opts),
        Some(q) => {
            if q.dim() != sources.dim() {
                return Err(Error::DimensionMismatch {
                    left: sources.dim(),
                    right: q.dim(),
                });
            }
            knn_with_types(&[sources, q], 0, 1, k, domain, opts)
        }
    }
}

/// Wall-clock phase breakdown of one driver run, in milliseconds.
///
/// `sort` is the z presort of the input, `tree` the hierarchy built over
/// the sorted points, `walk` the plane-by-plane interaction refinement,
/// `leaf` the exact point passes, and `reorder` the mapping of results
/// back to input order plus any final reduction.
#[derive(Debug, Clone, Copy, Default)]
pub struct PhaseTimes {
    pub sort_ms: f64,
    pub tree_ms: f64,
    pub walk_ms: f64,
    pub leaf_ms: f64,
    pub reorder_ms: f64,
}

impl PhaseTimes {
    pub fn sum_ms(&self) -> f64 {
        self.sort_ms + self.tree_ms + self.walk_ms + self.leaf_ms + self.reorder_ms
    }
}

pub(crate) fn elapsed_ms(start: std::time::Instant) -> f64 {
    start.elapsed().as_secs_f64() * 1e3
}

/// Self-query kNN with a wall-clock phase breakdown. Output is
/// bit-identical to [`knn`] without a query set; the input is z-sorted up
/// front so hierarchy construction can be timed apart from the sort.
pub fn knn_profiled(
    sources: &PointSet,
    k: usize,
    domain: &PeriodicDomain,
    opts: &KnnOptions,
) -> Result<(KnnResult, PhaseTimes)> {
    if k == 0 {
        return Err(Error::KZero);
    }
    if k > sources.len() {
        return Err(Error::KTooLarge {
            k,
            n: sources.len(),
        });
    }
    if domain.dim() != sources.dim() {
        return Err(Error::DimensionMismatch {
            left: sources.dim(),
            right: domain.dim(),
        });
    }
    let mut times = PhaseTimes::default();
    let clock = std::time::Instant::now();
    let perm = crate::zorder::z_sort(sources);
    let sorted = sources.gather(&perm);
    times.sort_ms = elapsed_ms(clock);

    let clock = std::time::Instant::now();
    let h = build_hierarchy(&[&sorted], &opts.tree)?;
    times.tree_ms = elapsed_ms(clock);
    let dim = h.dim();

    let clock = std::time::Instant::now();
    let il = walk_planes(&h, 0, 0, k as u64, domain, opts);
    times.walk_ms = elapsed_ms(clock);

    let clock = std::time::Instant::now();
    let q_splits: Vec<u32> = h.type_leaf_splits[0].clone();
    let src_ranges = windows(&q_splits);
    let ee = opts.early_exit && opts.sort_rlow;
    // The original input ids double as the source id array: ties then
    // break exactly as they do when the hierarchy is built unsorted.
    let (iz, dz) = run_leaf_chunks(
        dim,
        k,
        domain,
        &q_splits,
        &h.type_coords[0],
        &il,
        &src_ranges,
        &h.type_coords[0],
        &perm,
        ee,
    );
    times.leaf_ms = elapsed_ms(clock);

    let clock = std::time::Instant::now();
    let n_q = sources.len();
    let (indices, mut distances) = match opts.order {
        OutputOrder::ZOrder => (iz, dz),
        OutputOrder::Input => {
            let mut ii = vec![0u32; n_q * k];
            let mut dd = vec![0.0f64; n_q * k];
            for z in 0..n_q {
                let orig = perm[z] as usize;
                ii[orig * k..(orig + 1) * k].copy_from_slice(&iz[z * k..(z + 1) * k]);
                dd[orig * k..(orig + 1) * k].copy_from_slice(&dz[z * k..(z + 1) * k]);
            }
            (ii, dd)
        }
    };
    for d in distances.iter_mut() {
        *d = d.sqrt();
    }
    times.reorder_ms = elapsed_ms(clock);
    let result = KnnResult {
        k,
        indices,
        distances,
        order: opts.order,
    };
    Ok((result, times))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn count_heap_overflow_keeps_coverage() {
        // Dropping the tail would lose the sixth source, so the top two
        // entries merge under the larger radius.
        let mut h = CountHeap::new(2);
        h.insert(1.0, 3, 6);
        h.insert(2.0, 5, 6);
        h.insert(1.5, 2, 6);
        assert_eq!(h.entries(), &[(1.0, 3), (2.0, 7)]);
        assert_eq!(h.radius_of_count(6), 2.0);
    }

    #[test]
    fn count_heap_overflow_drops_spare_tail() {
        let mut h = CountHeap::new(2);
        h.insert(1.0, 3, 4);
        h.insert(2.0, 5, 4);
        h.insert(1.5, 2, 4);
        assert_eq!(h.entries(), &[(1.0, 3), (1.5, 2)]);
        assert_eq!(h.radius_of_count(4), 1.5);
    }

    #[test]
    fn count_heap_skips_useless_inserts() {
        let mut h = CountHeap::new(4);
        h.insert(1.0, 10, 5);
        h.insert(3.0, 10, 5);
        assert_eq!(h.entries(), &[(1.0, 10)]);
        assert_eq!(h.radius_of_count(5), 1.0);
        assert!(h.radius_of_count(11).is_infinite());
        h.insert(0.5, 1, 5);
        assert_eq!(h.entries(), &[(0.5, 1), (1.0, 10)]);
    }

    #[test]
    fn count_heap_merges_equal_radii() {
        let mut h = CountHeap::new(3);
        h.insert(1.0, 2, 100);
        h.insert(1.0, 3, 100);
        assert_eq!(h.entries(), &[(1.0, 5)]);
        assert_eq!(h.total(), 5);
    }

    fn uniform(n: usize, dim: usize, span: f64, seed: u64) -> PointSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let coords = (0..n * dim).map(|_| rng.random_range(0.0..span)).collect();
        PointSet::new(dim, coords).unwrap()
    }

    fn clustered(n: usize, dim: usize, seed: u64) -> PointSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut coords = Vec::with_capacity(n * dim);
        let mut center = vec![0.0; dim];
        for i in 0..n {
            if i % 24 == 0 {
                for c in center.iter_mut() {
                    *c = rng.random_range(-50.0..50.0);
                }
            }
            for &c in &center {
                coords.push(c + rng.random_range(-1.0..1.0));
            }
        }
        PointSet::new(dim, coords).unwrap()
    }

    fn small_tree() -> KnnOptions {
        KnnOptions {
            tree: TreeParams {
                n_max0: 6,
                growth: 4,
                n_target: 2,
                f_max: 50.0,
            },
            ngr: 4,
            ..KnnOptions::default()
        }
    }

    fn assert_matches_oracle(
        sources: &PointSet,
        queries: &PointSet,
        k: usize,
        domain: &PeriodicDomain,
        opts: &KnnOptions,
    ) {
        let got = knn(sources, Some(queries), k, domain, opts).unwrap();
        let (oi, od) = oracle::brute_knn(sources, queries, k, domain);
        assert_eq!(got.indices, oi);
        let same_bits = got
            .distances
            .iter()
            .zip(&od)
            .all(|(a, b)| a.to_bits() == b.to_bits());
        assert!(same_bits, "distances diverge from oracle");
    }

    #[test]
    fn line_query_finds_exact_neighbours() {
        let src = PointSet::new(1, vec![0.0, 1.0, 3.0, 7.0]).unwrap();
        let q = PointSet::new(1, vec![2.9]).unwrap();
        let opts = small_tree();
        let res = knn(&src, Some(&q), 2, &PeriodicDomain::open(1), &opts).unwrap();
        assert_eq!(res.indices, vec![2, 1]);
        assert!((res.distances[0] - 0.1).abs() < 1e-12);
    }

    #[test]
    fn periodic_tie_resolves_to_lower_index() {
        // Dyadic offsets so the wrapped distances tie exactly.
        let src = PointSet::new(1, vec![0.25, 9.75]).unwrap();
        let q = PointSet::new(1, vec![0.0]).unwrap();
        let dom = PeriodicDomain::cube(1, 10.0).unwrap();
        let res = knn(&src, Some(&q), 2, &dom, &small_tree()).unwrap();
        assert_eq!(res.indices, vec![0, 1]);
        assert_eq!(res.distances, vec![0.25, 0.25]);
    }

    #[test]
    fn matches_oracle_on_clustered_and_uniform() {
        let dom2 = PeriodicDomain::open(2);
        let dom3p = PeriodicDomain::cube(3, 100.0).unwrap();
        let opts = small_tree();
        for seed in 0..3 {
            let s = clustered(260, 2, seed);
            let q = clustered(90, 2, seed + 10);
            for k in [1, 5, 17] {
                assert_matches_oracle(&s, &q, k, &dom2, &opts);
            }
            let s = uniform(200, 3, 100.0, seed + 20);
            let q = uniform(80, 3, 100.0, seed + 30);
            for k in [1, 8, 31] {
                assert_matches_oracle(&s, &q, k, &dom3p, &opts);
            }
        }
    }

    #[test]
    fn duplicate_sources_keep_index_order() {
        let mut coords = vec![0.5; 40];
        coords.extend([3.0, 3.5, 9.0, 0.6]);
        let src = PointSet::new(1, coords).unwrap();
        let q = PointSet::new(1, vec![0.5, 3.2]).unwrap();
        assert_matches_oracle(&src, &q, 41, &PeriodicDomain::open(1), &small_tree());
    }

    #[test]
    fn k_equal_to_source_count_returns_everything() {
        let s = uniform(50, 2, 10.0, 5);
        let q = uniform(20, 2, 10.0, 6);
        assert_matches_oracle(&s, &q, 50, &PeriodicDomain::open(2), &small_tree());
    }

    #[test]
    fn chunked_k_beyond_heap_capacity() {
        let s = uniform(150, 3, 10.0, 7);
        let q = uniform(40, 3, 10.0, 8);
        let dom = PeriodicDomain::cube(3, 10.0).unwrap();
        assert_matches_oracle(&s, &q, 70, &dom, &small_tree());
        assert_matches_oracle(&s, &q, 33, &dom, &small_tree());
    }

    #[test]
    fn self_query_equals_explicit_duplicate_set() {
        let s = clustered(180, 2, 42);
        let dom = PeriodicDomain::open(2);
        let opts = small_tree();
        let a = knn(&s, None, 6, &dom, &opts).unwrap();
        let b = knn(&s, Some(&s), 6, &dom, &opts).unwrap();
        assert_eq!(a.indices, b.indices);
        assert_eq!(a.distances, b.distances);
        // Every point is its own nearest neighbour.
        for q in 0..180 {
            assert_eq!(a.indices[q * 6] as usize, q);
            assert_eq!(a.distances[q * 6], 0.0);
        }
    }

    #[test]
    fn type_concatenation_order_is_irrelevant() {
        let s = clustered(140, 3, 1);
        let q = clustered(60, 3, 2);
        let dom = PeriodicDomain::open(3);
        let opts = small_tree();
        let a = knn_with_types(&[&s, &q], 0, 1, 9, &dom, &opts).unwrap();
        let b = knn_with_types(&[&q, &s], 1, 0, 9, &dom, &opts).unwrap();
        assert_eq!(a.indices, b.indices);
        assert_eq!(a.distances, b.distances);
    }

    #[test]
    fn pruning_toggles_change_no_bit() {
        let s = uniform(300, 2, 1.0, 9);
        let q = uniform(100, 2, 1.0, 10);
        let dom = PeriodicDomain::cube(2, 1.0).unwrap();
        let mut fast = small_tree();
        fast.sort_rlow = true;
        fast.early_exit = true;
        let mut slow = small_tree();
        slow.sort_rlow = false;
        slow.early_exit = false;
        let a = knn(&s, Some(&q), 12, &dom, &fast).unwrap();
        let b = knn(&s, Some(&q), 12, &dom, &slow).unwrap();
        assert_eq!(a.indices, b.indices);
        let bits_equal = a
            .distances
            .iter()
            .zip(&b.distances)
            .all(|(x, y)| x.to_bits() == y.to_bits());
        assert!(bits_equal);
    }

    #[test]
    fn z_order_rows_are_a_permutation_of_input_rows() {
        let s = uniform(120, 2, 5.0, 11);
        let dom = PeriodicDomain::open(2);
        let mut opts = small_tree();
        opts.order = OutputOrder::ZOrder;
        let z = knn(&s, None, 4, &dom, &opts).unwrap();
        opts.order = OutputOrder::Input;
        let inp = knn(&s, None, 4, &dom, &opts).unwrap();
        // Same multiset of rows, different arrangement.
        let mut za: Vec<&[u32]> = z.indices.chunks(4).collect();
        let mut ia: Vec<&[u32]> = inp.indices.chunks(4).collect();
        za.sort();
        ia.sort();
        assert_eq!(za, ia);
        // Each input row's first neighbour is itself, in input order.
        for q in 0..120 {
            assert_eq!(inp.indices[q * 4] as usize, q);
        }
    }

    #[test]
    fn argument_validation() {
        let s = uniform(10, 2, 1.0, 0);
        let dom = PeriodicDomain::open(2);
        assert!(matches!(
            knn(&s, None, 0, &dom, &KnnOptions::default()),
            Err(Error::KZero)
        ));
        assert!(matches!(
            knn(&s, None, 11, &dom, &KnnOptions::default()),
            Err(Error::KTooLarge { .. })
        ));
        let dom3 = PeriodicDomain::open(3);
        assert!(matches!(
            knn(&s, None, 2, &dom3, &KnnOptions::default()),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn default_tree_parameters_also_exact() {
        // Default plane schedule on a size that still builds two planes.
        let s = uniform(5000, 3, 1.0, 12);
        let q = uniform(500, 3, 1.0, 13);
        let dom = PeriodicDomain::cube(3, 1.0).unwrap();
        let mut opts = KnnOptions::default();
        opts.tree.n_target = 10;
        assert_matches_oracle(&s, &q, 16, &dom, &opts);
    }

    #[test]
    fn profiled_run_matches_the_plain_driver_bit_for_bit() {
        // Duplicate-heavy coordinates force distance ties, so the id
        // array handed to the presorted leaf pass is on the hook.
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let mut coords = Vec::new();
        let classes: Vec<[f64; 2]> = (0..40).map(|_| [rng.random(), rng.random()]).collect();
        for i in 0..400 {
            coords.extend_from_slice(&classes[i % classes.len()]);
        }
        let pts = PointSet::new(2, coords).unwrap();
        let dom = PeriodicDomain::open(2);
        for order in [OutputOrder::Input, OutputOrder::ZOrder] {
            let opts = KnnOptions {
                order,
                ..KnnOptions::default()
            };
            let plain = knn(&pts, None, 12, &dom, &opts).unwrap();
            let (prof, times) = knn_profiled(&pts, 12, &dom, &opts).unwrap();
            assert_eq!(prof.indices, plain.indices);
            let pb: Vec<u64> = plain.distances.iter().map(|d| d.to_bits()).collect();
            let fb: Vec<u64> = prof.distances.iter().map(|d| d.to_bits()).collect();
            assert_eq!(pb, fb);
            assert!(times.sum_ms() >= 0.0);
        }
    }
}
