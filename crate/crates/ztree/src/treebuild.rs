//! Plane-based tree hierarchies over z-sorted points.
//!
//! A node is a maximal run of consecutive z-sorted points whose internal
//! pair levels all sit at or below the level of one defining gap. Nothing
//! is allocated per node beyond a few flat arrays: a plane is its split
//! positions, per-type counts, node levels and cell centers. Coarser
//! planes keep a subset of the finer plane's splits, so the hierarchy is a
//! nested family of partitions of the same sorted array.
//!
//! Split selection is by count (any candidate node holding more than N_max
//! points of some type stays split) plus an optional volume cap that keeps
//! gaps whose level exceeds a regularization threshold derived from the
//! plane's own node volume distribution.

use rayon::prelude::*;

use crate::bounds::Aabb;
use crate::error::{Error, Result};
use crate::points::PointSet;
use crate::zorder::{msb, z_sort_coords, ZScalar, LEVEL_MIN};

/// Level of the gap between two distinct points: the size class of the
/// smallest z-order cell containing both. [`LEVEL_MIN`] for equal points.
#[inline]
pub fn morton_level(p: &[f64], q: &[f64]) -> i32 {
    debug_assert_eq!(p.len(), q.len());
    let d = p.len() as i32;
    let mut best = LEVEL_MIN;
    let mut k = 0i32;
    for i in 0..p.len() {
        let m = msb(p[i], q[i]);
        if m > best {
            best = m;
            k = i as i32;
        }
    }
    if best == LEVEL_MIN {
        LEVEL_MIN
    } else {
        (best + 1) * d - k
    }
}

/// Boundary sentinel framing the pair-level array: strictly greater than
/// the level of any pair of finite points in this dimension.
#[inline]
pub const fn level_sentinel(dim: usize) -> i32 {
    (dim as i32) * (<f64 as ZScalar>::EMAX + 1) + 1
}

/// Per-dimension cell levels of a node at the given level: dimension i
/// has extent 2^((lvl + i) div d), Euclidean division. The extents sum to
/// lvl and differ by at most one across dimensions.
pub fn extent_levels_into(lvl: i32, dim: usize, out: &mut [i32]) {
    debug_assert_eq!(out.len(), dim);
    for (i, o) in out.iter_mut().enumerate() {
        *o = (lvl + i as i32).div_euclid(dim as i32);
    }
}

pub fn extent_levels(lvl: i32, dim: usize) -> Vec<i32> {
    let mut out = vec![0; dim];
    extent_levels_into(lvl, dim, &mut out);
    out
}

/// Exact 2^l as f64, flushing to 0 below the subnormal range and to
/// infinity above the finite range.
#[inline]
pub fn pow2(l: i32) -> f64 {
    if l >= 1024 {
        f64::INFINITY
    } else if l >= -1022 {
        f64::from_bits(((l + 1023) as u64) << 52)
    } else if l >= -1074 {
        f64::from_bits(1u64 << (l + 1074))
    } else {
        0.0
    }
}

/// Half extents of a node cell at the given level.
pub fn half_extents_into(lvl: i32, dim: usize, out: &mut [f64]) {
    for (i, o) in out.iter_mut().enumerate() {
        let l = (lvl + i as i32).div_euclid(dim as i32);
        *o = if l >= 1025 { f64::INFINITY } else { pow2(l - 1) };
    }
}

/// Cell of a node from its z-first member (the anchor) and its level: the
/// anchor's containing dyadic cell, given by center and half extents.
/// Degenerates to the anchor itself at [`LEVEL_MIN`] and to an unbounded
/// box once the cell outgrows the float range.
pub fn node_box_into(anchor: &[f64], lvl: i32, center: &mut [f64], half: &mut [f64]) {
    let dim = anchor.len();
    for i in 0..dim {
        let l = (lvl + i as i32).div_euclid(dim as i32);
        let scale = pow2(l);
        if scale == 0.0 {
            center[i] = anchor[i];
            half[i] = 0.0;
        } else if scale.is_infinite() {
            center[i] = 0.0;
            half[i] = f64::INFINITY;
        } else {
            let h = pow2(l - 1);
            let corner = (anchor[i] / scale).floor() * scale;
            center[i] = corner + h;
            half[i] = h;
        }
    }
}

pub fn node_box(anchor: &[f64], lvl: i32) -> Aabb {
    let mut center = vec![0.0; anchor.len()];
    let mut half = vec![0.0; anchor.len()];
    node_box_into(anchor, lvl, &mut center, &mut half);
    Aabb { center, half }
}

/// Levels of all gaps of a z-sorted flat array, framed by
/// [`level_sentinel`] at both ends; entry i is the level of the gap before
/// point i.
pub fn pair_levels(coords: &[f64], dim: usize) -> Vec<i32> {
    let n = coords.len() / dim;
    let sent = level_sentinel(dim);
    let mut levels = vec![sent; n + 1];
    levels[1..n]
        .par_iter_mut()
        .enumerate()
        .for_each(|(j, l)| {
            let i = j + 1;
            *l = morton_level(
                &coords[(i - 1) * dim..i * dim],
                &coords[i * dim..(i + 1) * dim],
            );
        });
    levels
}

#[inline]
fn row(coords: &[f64], dim: usize, i: usize) -> &[f64] {
    &coords[i * dim..(i + 1) * dim]
}

/// Point range [start, end) of the node defined by gap i: the maximal run
/// around the gap whose internal pair levels do not exceed levels[i].
/// Probes O(log n) pair levels by binary search; `levels` is the framed
/// array from [`pair_levels`].
pub fn node_range(coords: &[f64], dim: usize, levels: &[i32], i: usize) -> (usize, usize) {
    let n = levels.len() - 1;
    assert!(i >= 1 && i < n, "gap index out of range");
    let lvl = levels[i];
    // Smallest a with level(a .. i-1) <= lvl; the predicate is monotone
    // because a pair's level is the maximum of the gap levels between.
    let mut lo = 0;
    let mut hi = i - 1;
    while lo < hi {
        let mid = (lo + hi) / 2;
        if morton_level(row(coords, dim, mid), row(coords, dim, i - 1)) <= lvl {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    let start = lo;
    // Largest r with level(i .. r-1) <= lvl.
    let mut lo = i + 1;
    let mut hi = n;
    while lo < hi {
        let mid = (lo + hi).div_ceil(2);
        if morton_level(row(coords, dim, i), row(coords, dim, mid - 1)) <= lvl {
            lo = mid;
        } else {
            hi = mid - 1;
        }
    }
    (start, lo)
}

/// Windowed [`node_range`]: searches at most `window` points on each side
/// of the gap and returns `None` when the node cannot be certified to end
/// within the window (its extent then exceeds the window).
pub fn node_range_windowed(
    coords: &[f64],
    dim: usize,
    levels: &[i32],
    i: usize,
    window: usize,
) -> Option<(usize, usize)> {
    let n = levels.len() - 1;
    assert!(i >= 1 && i < n, "gap index out of range");
    let lvl = levels[i];
    let clamp_lo = (i - 1).saturating_sub(window);
    let mut lo = clamp_lo;
    let mut hi = i - 1;
    while lo < hi {
        let mid = (lo + hi) / 2;
        if morton_level(row(coords, dim, mid), row(coords, dim, i - 1)) <= lvl {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    let start = lo;
    if start == clamp_lo
        && clamp_lo > 0
        && morton_level(row(coords, dim, clamp_lo), row(coords, dim, i - 1)) <= lvl
    {
        return None;
    }
    let clamp_hi = (i + 1 + window).min(n);
    let mut lo = i + 1;
    let mut hi = clamp_hi;
    while lo < hi {
        let mid = (lo + hi).div_ceil(2);
        if morton_level(row(coords, dim, i), row(coords, dim, mid - 1)) <= lvl {
            lo = mid;
        } else {
            hi = mid - 1;
        }
    }
    let end = lo;
    if end == clamp_hi
        && clamp_hi < n
        && morton_level(row(coords, dim, i), row(coords, dim, clamp_hi - 1)) <= lvl
    {
        return None;
    }
    Some((start, end))
}

/// A split candidate: gap position, the larger per-type point count of the
/// node the gap would define, and the gap's level.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitCandidate {
    pub pos: u32,
    pub n: u32,
    pub lvl: i32,
}

/// Keep the candidates whose node still holds too many points of some type
/// or whose gap is coarser than the volume cap; boundaries are always
/// splits. Returns ascending split positions including 0 and `end`.
pub fn select_splits(cands: &[SplitCandidate], n_max: u32, lvl_max: i32, end: u32) -> Vec<u32> {
    let mut out = Vec::with_capacity(cands.len() + 2);
    out.push(0);
    for c in cands {
        if c.n > n_max || c.lvl > lvl_max {
            out.push(c.pos);
        }
    }
    out.push(end);
    out.dedup();
    out
}

/// Volume cap for a plane: from the point-count-weighted distribution of
/// node volumes, take the mean volume V90 of the smallest-volume nodes
/// that cumulatively hold at least 90% of all points, and return the
/// largest level whose cell volume stays within `f_max * V90`. Returns
/// i32::MAX (no cap) for infinite `f_max`.
pub fn regularization_level(levels: &[i32], counts: &[u32], f_max: f64) -> i32 {
    assert_eq!(levels.len(), counts.len());
    if !f_max.is_finite() {
        return i32::MAX;
    }
    let total: u64 = counts.iter().map(|&c| c as u64).sum();
    if total == 0 {
        return i32::MAX;
    }
    let mut order: Vec<u32> = (0..levels.len() as u32).collect();
    order.sort_by_key(|&i| (levels[i as usize], i));
    let target = 0.9 * total as f64;
    let mut cum = 0u64;
    let mut vol_sum = 0.0;
    let mut cnt_sum = 0u64;
    for &i in &order {
        let c = counts[i as usize] as u64;
        if c == 0 {
            continue;
        }
        vol_sum += c as f64 * pow2(levels[i as usize]);
        cnt_sum += c;
        cum += c;
        if cum as f64 >= target {
            break;
        }
    }
    let v90 = vol_sum / cnt_sum as f64;
    let t = f_max * v90;
    if t.is_infinite() {
        return i32::MAX;
    }
    if t <= 0.0 {
        return LEVEL_MIN;
    }
    let mut l = t.log2().floor() as i32;
    while pow2(l + 1) <= t {
        l += 1;
    }
    while l > LEVEL_MIN && pow2(l) > t {
        l -= 1;
    }
    l
}

/// Parameters of the plane hierarchy.
#[derive(Debug, Clone)]
pub struct TreeParams {
    /// Per-type node capacity of the finest plane.
    pub n_max0: u32,
    /// Capacity multiplier between consecutive planes.
    pub growth: u32,
    /// Stop adding planes once the expected node count of the next plane
    /// drops below this.
    pub n_target: u32,
    /// Volume regularization factor; infinity disables the cap.
    pub f_max: f64,
}

impl Default for TreeParams {
    fn default() -> Self {
        Self {
            n_max0: 48,
            growth: 8,
            n_target: 1000,
            f_max: 50.0,
        }
    }
}

/// Per-type node capacities of each plane, finest first.
pub fn plane_schedule(n_total: u64, params: &TreeParams) -> Vec<u64> {
    assert!(params.n_max0 >= 1 && params.growth >= 2);
    let mut v = vec![params.n_max0 as u64];
    loop {
        let last = *v.last().unwrap();
        if last >= n_total {
            break;
        }
        let next = last.saturating_mul(params.growth as u64);
        if (n_total as f64) / (next as f64 / 2.0) < params.n_target as f64 {
            break;
        }
        v.push(next);
    }
    v
}

/// One plane of the hierarchy: a partition of the z-sorted points into
/// nodes.
#[derive(Debug, Clone)]
pub struct TreePlane {
    /// Node boundaries as indices into the joint sorted point array;
    /// length n_nodes + 1.
    pub point_splits: Vec<u32>,
    /// The same boundaries as indices into the previous (finer) plane's
    /// node array; for the leaf plane this equals `point_splits`.
    pub prev_splits: Vec<u32>,
    /// Per type, per node point counts.
    pub counts: Vec<Vec<u32>>,
    /// Node levels: the maximal internal pair level, [`LEVEL_MIN`] for
    /// single-point nodes.
    pub levels: Vec<i32>,
    /// Node cell centers, row-major.
    pub centers: Vec<f64>,
}

impl TreePlane {
    #[inline]
    pub fn n_nodes(&self) -> usize {
        self.point_splits.len() - 1
    }
}

/// The full hierarchy over one or more point types sharing a z-sort.
#[derive(Debug, Clone)]
pub struct TreeHierarchy {
    dim: usize,
    /// Joint z-sorted coordinates of all types.
    pub joint_coords: Vec<f64>,
    /// Type tag of each joint sorted row.
    pub joint_types: Vec<u8>,
    /// Planes, finest (leaf) first.
    pub planes: Vec<TreePlane>,
    /// Per type: that type's points in z order.
    pub type_coords: Vec<Vec<f64>>,
    /// Per type: original index of each z-sorted point.
    pub type_perm: Vec<Vec<u32>>,
    /// Per type: leaf boundaries as indices into the type's own sorted
    /// array; length n_leaves + 1.
    pub type_leaf_splits: Vec<Vec<u32>>,
}

impl TreeHierarchy {
    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn n_types(&self) -> usize {
        self.type_coords.len()
    }

    #[inline]
    pub fn n_points(&self) -> usize {
        self.joint_types.len()
    }

    #[inline]
    pub fn n_planes(&self) -> usize {
        self.planes.len()
    }

    #[inline]
    pub fn plane(&self, p: usize) -> &TreePlane {
        &self.planes[p]
    }

    #[inline]
    pub fn top_plane(&self) -> &TreePlane {
        self.planes.last().unwrap()
    }

    /// Cell of a node as a box.
    pub fn node_aabb(&self, plane: usize, node: usize) -> Aabb {
        let pl = &self.planes[plane];
        let s = pl.point_splits[node] as usize;
        node_box(row(&self.joint_coords, self.dim, s), pl.levels[node])
    }

    /// For each node of plane p, its parent node index in plane p + 1.
    pub fn parent_of(&self, p: usize) -> Vec<u32> {
        let coarse = &self.planes[p + 1];
        let n_fine = self.planes[p].n_nodes();
        let mut out = vec![0u32; n_fine];
        for j in 0..coarse.n_nodes() {
            for i in coarse.prev_splits[j]..coarse.prev_splits[j + 1] {
                out[i as usize] = j as u32;
            }
        }
        out
    }

    /// Half extents of every node of a plane, row-major.
    pub fn plane_half_extents(&self, p: usize) -> Vec<f64> {
        let pl = &self.planes[p];
        let mut out = vec![0.0; pl.n_nodes() * self.dim];
        for (j, chunk) in out.chunks_mut(self.dim).enumerate() {
            half_extents_into(pl.levels[j], self.dim, chunk);
        }
        out
    }
}

/// Dense per-gap candidate data: for every interior gap, the point range
/// of the node it defines and the larger per-type count.
struct GapData {
    /// Framed pair levels, length n + 1.
    levels: Vec<i32>,
    /// Per gap (1..n): candidate node range and max per-type count. The
    /// range itself only feeds the count here; tests cross-check it
    /// against the binary-search probe.
    #[allow(dead_code)]
    start: Vec<u32>,
    #[allow(dead_code)]
    end: Vec<u32>,
    n_max_type: Vec<u32>,
    /// Per type: prefix count over joint positions, length n + 1.
    type_prefix: Vec<Vec<u32>>,
}

fn gap_data(coords: &[f64], dim: usize, types: &[u8], n_types: usize) -> GapData {
    let n = types.len();
    let levels = pair_levels(coords, dim);
    let mut type_prefix = vec![vec![0u32; n + 1]; n_types];
    for (i, &t) in types.iter().enumerate() {
        for ty in 0..n_types {
            type_prefix[ty][i + 1] = type_prefix[ty][i] + (t as usize == ty) as u32;
        }
    }
    let mut start = vec![0u32; n + 1];
    let mut end = vec![n as u32; n + 1];
    // Monotone stack sweeps: nearest strictly greater gap level on each
    // side; the frame sentinels are never popped.
    let mut stack: Vec<usize> = vec![0];
    for i in 1..n {
        while levels[*stack.last().unwrap()] <= levels[i] {
            stack.pop();
        }
        start[i] = *stack.last().unwrap() as u32;
        stack.push(i);
    }
    stack.clear();
    stack.push(n);
    for i in (1..n).rev() {
        while levels[*stack.last().unwrap()] <= levels[i] {
            stack.pop();
        }
        end[i] = *stack.last().unwrap() as u32;
        stack.push(i);
    }
    let mut n_max_type = vec![0u32; n + 1];
    for i in 1..n {
        let (s, e) = (start[i] as usize, end[i] as usize);
        let mut best = 0;
        for pref in &type_prefix {
            best = best.max(pref[e] - pref[s]);
        }
        n_max_type[i] = best;
    }
    GapData {
        levels,
        start,
        end,
        n_max_type,
        type_prefix,
    }
}

/// Node stats for a given split set: levels, per-type counts, centers.
fn plane_stats(
    splits: &[u32],
    coords: &[f64],
    dim: usize,
    pair_lvls: &[i32],
    type_prefix: &[Vec<u32>],
) -> (Vec<i32>, Vec<Vec<u32>>, Vec<f64>) {
    let n_nodes = splits.len() - 1;
    let mut levels = vec![LEVEL_MIN; n_nodes];
    let mut counts = vec![vec![0u32; n_nodes]; type_prefix.len()];
    let mut centers = vec![0.0; n_nodes * dim];
    let mut half = vec![0.0; dim];
    for j in 0..n_nodes {
        let (s, e) = (splits[j] as usize, splits[j + 1] as usize);
        let mut lvl = LEVEL_MIN;
        for g in s + 1..e {
            lvl = lvl.max(pair_lvls[g]);
        }
        levels[j] = lvl;
        for (t, pref) in type_prefix.iter().enumerate() {
            counts[t][j] = pref[e] - pref[s];
        }
        node_box_into(
            row(coords, dim, s),
            lvl,
            &mut centers[j * dim..(j + 1) * dim],
            &mut half,
        );
    }
    (levels, counts, centers)
}

fn select_dense(avail: &[u32], gaps: &GapData, n_max: u64, lvl_max: i32, end: u32) -> Vec<u32> {
    let mut out = Vec::with_capacity(avail.len() + 2);
    out.push(0);
    for &pos in avail {
        let p = pos as usize;
        if gaps.n_max_type[p] as u64 > n_max || gaps.levels[p] > lvl_max {
            out.push(pos);
        }
    }
    out.push(end);
    out.dedup();
    out
}

/// Build the plane hierarchy over one or more point sets sharing a
/// dimension. Set i becomes type i; all types share one z-sort and one
/// node structure, while counts and leaf boundaries stay per type.
pub fn build_hierarchy(sets: &[&PointSet], params: &TreeParams) -> Result<TreeHierarchy> {
    let n_total: usize = sets.iter().map(|s| s.len()).sum();
    build_with_schedule(sets, params, &plane_schedule(n_total as u64, params), false)
}

/// Build with an externally fixed capacity schedule (one entry per plane,
/// finest first). Used when several independently built hierarchies must
/// agree on plane structure: every scheduled plane is built, even after
/// the hierarchy has collapsed to a single node.
pub fn build_hierarchy_with_schedule(
    sets: &[&PointSet],
    params: &TreeParams,
    schedule: &[u64],
) -> Result<TreeHierarchy> {
    build_with_schedule(sets, params, schedule, true)
}

fn build_with_schedule(
    sets: &[&PointSet],
    params: &TreeParams,
    schedule: &[u64],
    force_all: bool,
) -> Result<TreeHierarchy> {
    assert!(!schedule.is_empty());
    let n_types = sets.len();
    assert!(n_types >= 1 && n_types <= u8::MAX as usize);
    let dim = sets[0].dim();
    for s in sets {
        if s.dim() != dim {
            return Err(Error::DimensionMismatch {
                left: dim,
                right: s.dim(),
            });
        }
    }
    let n: usize = sets.iter().map(|s| s.len()).sum();
    if n == 0 {
        return Err(Error::TooFewPoints { needed: 1, got: 0 });
    }
    if n > crate::points::MAX_POINTS {
        return Err(Error::TooManyPoints {
            n,
            max: crate::points::MAX_POINTS,
        });
    }

    // Joint z-sort over the concatenation of all types; stability makes
    // the order deterministic for duplicate coordinates.
    let mut concat = Vec::with_capacity(n * dim);
    for s in sets {
        concat.extend_from_slice(s.coords());
    }
    let perm = z_sort_coords(&concat, dim);
    let mut offsets = vec![0usize; n_types + 1];
    for (t, s) in sets.iter().enumerate() {
        offsets[t + 1] = offsets[t] + s.len();
    }
    let type_of_global = |g: usize| -> (u8, u32) {
        let t = offsets.partition_point(|&o| o <= g) - 1;
        (t as u8, (g - offsets[t]) as u32)
    };

    let mut joint_coords = vec![0.0; n * dim];
    let mut joint_types = vec![0u8; n];
    let mut type_coords: Vec<Vec<f64>> = (0..n_types).map(|_| Vec::new()).collect();
    let mut type_perm: Vec<Vec<u32>> = (0..n_types).map(|_| Vec::new()).collect();
    for (pos, &g) in perm.iter().enumerate() {
        let (t, within) = type_of_global(g as usize);
        let src = &concat[g as usize * dim..(g as usize + 1) * dim];
        joint_coords[pos * dim..(pos + 1) * dim].copy_from_slice(src);
        joint_types[pos] = t;
        type_coords[t as usize].extend_from_slice(src);
        type_perm[t as usize].push(within);
    }

    let gaps = gap_data(&joint_coords, dim, &joint_types, n_types);

    let mut planes: Vec<TreePlane> = Vec::with_capacity(schedule.len());
    let mut cur: Vec<u32> = Vec::new();
    for (pi, &n_max) in schedule.iter().enumerate() {
        let avail: Vec<u32> = if pi == 0 {
            (1..n as u32).collect()
        } else {
            cur[1..cur.len() - 1].to_vec()
        };
        let mut splits = select_dense(&avail, &gaps, n_max, i32::MAX, n as u32);
        if params.f_max.is_finite() {
            let (lvls, counts, _) =
                plane_stats(&splits, &joint_coords, dim, &gaps.levels, &gaps.type_prefix);
            let totals: Vec<u32> = (0..lvls.len())
                .map(|j| counts.iter().map(|c| c[j]).sum())
                .collect();
            let lvl_max = regularization_level(&lvls, &totals, params.f_max);
            if lvl_max < i32::MAX {
                splits = select_dense(&avail, &gaps, n_max, lvl_max, n as u32);
            }
        }
        let (levels, counts, centers) =
            plane_stats(&splits, &joint_coords, dim, &gaps.levels, &gaps.type_prefix);
        let prev_splits = if pi == 0 {
            splits.clone()
        } else {
            let prev = &planes[pi - 1].point_splits;
            let mut out = Vec::with_capacity(splits.len());
            let mut j = 0;
            for &s in &splits {
                while prev[j] < s {
                    j += 1;
                }
                debug_assert_eq!(prev[j], s, "coarse split must be a finer split");
                out.push(j as u32);
            }
            out
        };
        let single = splits.len() <= 2;
        planes.push(TreePlane {
            point_splits: splits.clone(),
            prev_splits,
            counts,
            levels,
            centers,
        });
        cur = splits;
        if single && !force_all {
            break;
        }
    }

    let leaf_splits = &planes[0].point_splits;
    let type_leaf_splits: Vec<Vec<u32>> = (0..n_types)
        .map(|t| {
            leaf_splits
                .iter()
                .map(|&s| gaps.type_prefix[t][s as usize])
                .collect()
        })
        .collect();

    Ok(TreeHierarchy {
        dim,
        joint_coords,
        joint_types,
        planes,
        type_coords,
        type_perm,
        type_leaf_splits,
    })
}
