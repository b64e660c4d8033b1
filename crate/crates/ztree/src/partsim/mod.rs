//! Deterministic in-process simulation of the distributed pipeline.
//!
//! A [`Cluster`] spreads one point set over simulated ranks: a sampled
//! z-order partition, a boundary pass that snaps rank borders onto tree
//! node edges, and one hierarchy per rank built against the shared plane
//! schedule. The walks then run rank by rank, exchanging node tables,
//! leaf points and link edges as messages through an in-memory
//! [`Network`], and reproduce the single-tree results exactly: neighbour
//! lists bit for bit, group labels value for value. Catalogues are
//! reduced from per-rank partial sums, so their floats can differ from
//! the single-tree reduction in the last couple of digits.
//!
//! Ranks own consecutive global z ranges at all times, which is what
//! makes [`GlobalLabel`]'s (rank, index) order the global z order.

mod fof;
mod knn;
mod net;
mod walk;

pub use net::{Counters, GlobalLabel, Msg, Network};

use crate::bounds::PeriodicDomain;
use crate::error::{Error, Result};
use crate::fof::Catalogue;
use crate::knn::{elapsed_ms, KnnResult, PhaseTimes};
use crate::points::PointSet;
use crate::treebuild::{
    build_hierarchy_with_schedule, node_range, pair_levels, plane_schedule, TreeHierarchy,
    TreeParams,
};
use crate::zorder::{partition_rank, sample_splitters, z_sort_coords};

#[derive(Debug, Clone)]
pub struct SimParams {
    pub tree: TreeParams,
    /// Top-plane nodes per seed group.
    pub ngr: usize,
    /// Candidate-radius heap capacity.
    pub heap_cap: usize,
    pub sort_rlow: bool,
    pub early_exit: bool,
    /// Run link passes data-parallel within each rank.
    pub concurrent_fof: bool,
    /// Sample size when estimating partition splitters.
    pub n_samples: usize,
    pub seed: u64,
}

impl Default for SimParams {
    fn default() -> Self {
        Self {
            tree: TreeParams::default(),
            ngr: 32,
            heap_cap: 8,
            sort_rlow: true,
            early_exit: true,
            concurrent_fof: true,
            n_samples: 512,
            seed: 0,
        }
    }
}

/// One simulated rank: its slice of the data in local z order, and the
/// tree built over it. `ids` are original input indices. A rank left
/// without points (heavily skewed data) carries no tree.
pub(crate) struct Rank {
    pub ids: Vec<u32>,
    pub coords: Vec<f64>,
    pub masses: Option<Vec<f64>>,
    pub velocities: Option<Vec<f64>>,
    pub tree: Option<TreeHierarchy>,
}

impl Rank {
    pub fn len(&self) -> usize {
        self.ids.len()
    }
}

pub struct Cluster {
    dim: usize,
    n_points: usize,
    params: SimParams,
    /// Per-plane node capacities shared by every rank's build.
    schedule: Vec<u64>,
    pub(crate) net: Network,
    pub(crate) ranks: Vec<Rank>,
    imbalance: f64,
    /// Build phases from construction plus walk phases of the most
    /// recent operation.
    pub(crate) times: PhaseTimes,
}

/// Extract rows `idx` of the input set as a message payload.
fn rows_msg(points: &PointSet, idx: Vec<u32>) -> Msg {
    let dim = points.dim();
    let mut coords = Vec::with_capacity(idx.len() * dim);
    for &i in &idx {
        coords.extend_from_slice(points.point(i as usize));
    }
    let masses = points
        .masses()
        .map(|ms| idx.iter().map(|&i| ms[i as usize]).collect());
    let velocities = points.velocities().map(|vs| {
        let mut v = Vec::with_capacity(idx.len() * dim);
        for &i in &idx {
            v.extend_from_slice(&vs[i as usize * dim..(i as usize + 1) * dim]);
        }
        v
    });
    Msg::Points {
        ids: idx,
        coords,
        masses,
        velocities,
    }
}

/// Remove `cnt` rows starting at `start` from a rank, as a message.
fn take_rows(rank: &mut Rank, dim: usize, start: usize, cnt: usize) -> Msg {
    let ids: Vec<u32> = rank.ids.drain(start..start + cnt).collect();
    let coords: Vec<f64> = rank.coords.drain(start * dim..(start + cnt) * dim).collect();
    let masses = rank
        .masses
        .as_mut()
        .map(|m| m.drain(start..start + cnt).collect());
    let velocities = rank
        .velocities
        .as_mut()
        .map(|v| v.drain(start * dim..(start + cnt) * dim).collect());
    Msg::Points {
        ids,
        coords,
        masses,
        velocities,
    }
}

/// Splice received rows into a rank at the front or the back; the payload
/// is already in z order on the correct side of the existing rows.
fn insert_rows(rank: &mut Rank, dim: usize, at_front: bool, msg: Msg) -> Result<()> {
    let Msg::Points {
        ids,
        coords,
        masses,
        velocities,
    } = msg
    else {
        return Err(Error::Protocol("expected point rows".into()));
    };
    let at = if at_front { 0 } else { rank.ids.len() };
    let atc = at * dim;
    rank.ids.splice(at..at, ids);
    rank.coords.splice(atc..atc, coords);
    match (rank.masses.as_mut(), masses) {
        (Some(dst), Some(src)) => {
            dst.splice(at..at, src);
        }
        (None, None) => {}
        _ => return Err(Error::Protocol("mass payload mismatch".into())),
    }
    match (rank.velocities.as_mut(), velocities) {
        (Some(dst), Some(src)) => {
            dst.splice(atc..atc, src);
        }
        (None, None) => {}
        _ => return Err(Error::Protocol("velocity payload mismatch".into())),
    }
    Ok(())
}

/// Where boundary `b` should move, if anywhere: walk the straddling
/// nodes from the smallest upward while they fit `cap`, and keep the
/// nearest edge of the largest one with an edge strictly between
/// `left_start` and `right_end` (a snap may not empty either adjacent
/// rank). `None` when even the smallest straddler is over capacity or
/// no admissible edge exists.
fn snap_target(
    coords: &[f64],
    dim: usize,
    levels: &[i32],
    cap: usize,
    b: usize,
    left_start: usize,
    right_end: usize,
) -> Option<usize> {
    let n = levels.len() - 1;
    let (mut s, mut e) = node_range(coords, dim, levels, b);
    if e - s > cap {
        return None;
    }
    let mut best = None;
    loop {
        let edges = if b - s <= e - b { [s, e] } else { [e, s] };
        for t in edges {
            if t != b && t > left_start && t < right_end {
                best = Some(t);
                break;
            }
        }
        let g = if levels[s] <= levels[e] { s } else { e };
        if g == 0 || g == n {
            break;
        }
        let (s2, e2) = node_range(coords, dim, levels, g);
        if e2 - s2 > cap {
            break;
        }
        (s, e) = (s2, e2);
    }
    best
}

impl Cluster {
    pub fn new(points: &PointSet, n_ranks: usize, params: SimParams) -> Result<Self> {
        assert!(n_ranks >= 1, "at least one rank");
        let n = points.len();
        if n < n_ranks {
            return Err(Error::TooFewPoints {
                needed: n_ranks,
                got: n,
            });
        }
        let schedule = plane_schedule(n as u64, &params.tree);
        let mut cluster = Self {
            dim: points.dim(),
            n_points: n,
            schedule,
            net: Network::new(n_ranks),
            ranks: Vec::new(),
            imbalance: 0.0,
            times: PhaseTimes::default(),
            params,
        };
        let clock = std::time::Instant::now();
        cluster.partitioned_sort(points)?;
        cluster.adjust_bounds()?;
        cluster.times.sort_ms = elapsed_ms(clock);
        let clock = std::time::Instant::now();
        cluster.build_trees()?;
        cluster.times.tree_ms = elapsed_ms(clock);
        Ok(cluster)
    }

    pub fn n_ranks(&self) -> usize {
        self.ranks.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_points(&self) -> usize {
        self.n_points
    }

    pub fn rank_sizes(&self) -> Vec<usize> {
        self.ranks.iter().map(Rank::len).collect()
    }

    /// Original input index of each point held by rank `r`, local z order.
    pub fn rank_ids(&self, r: usize) -> &[u32] {
        &self.ranks[r].ids
    }

    /// Largest rank size over the even share, before boundary snapping.
    pub fn imbalance(&self) -> f64 {
        self.imbalance
    }

    pub fn counters(&self) -> Counters {
        self.net.counters
    }

    /// Build phases (sort, tree) from construction combined with the
    /// walk phases (walk, leaf, reorder) of the most recent operation.
    pub fn phase_times(&self) -> PhaseTimes {
        self.times
    }

    /// k nearest neighbours of every point among all points, in input
    /// order. Bit-identical to the single-tree result for any rank count.
    pub fn knn(&mut self, k: usize, domain: &PeriodicDomain) -> Result<KnnResult> {
        knn::cluster_knn(self, k, domain)
    }

    /// Friends-of-friends labels in input order, identical to the
    /// single-tree labels for any rank count.
    pub fn fof(&mut self, r_link: f64, domain: &PeriodicDomain) -> Result<Vec<u32>> {
        fof::cluster_fof(self, r_link, domain, None).map(|(labels, _)| labels)
    }

    /// Labels plus a group catalogue reduced from per-rank partial sums.
    pub fn fof_catalogue(
        &mut self,
        r_link: f64,
        domain: &PeriodicDomain,
        min_count: usize,
    ) -> Result<(Vec<u32>, Catalogue)> {
        fof::cluster_fof(self, r_link, domain, Some(min_count))
            .map(|(labels, cat)| (labels, cat.expect("catalogue requested")))
    }

    /// Sampled splitters route every initial block row to its rank; each
    /// rank then z-sorts what it received. Duplicates share coordinates,
    /// so they always land on one rank and the stable local sort keeps
    /// their input order: the concatenation is the global stable z sort.
    fn partitioned_sort(&mut self, points: &PointSet) -> Result<()> {
        let dim = self.dim;
        let n = self.n_points;
        let n_ranks = self.net.n_ranks();
        let splitters = sample_splitters(
            points.coords(),
            dim,
            n_ranks,
            self.params.n_samples,
            self.params.seed,
        )?;
        let mut self_msgs: Vec<Option<Msg>> = (0..n_ranks).map(|_| None).collect();
        for r in 0..n_ranks {
            let (lo, hi) = (r * n / n_ranks, (r + 1) * n / n_ranks);
            let mut buckets: Vec<Vec<u32>> = vec![Vec::new(); n_ranks];
            for i in lo..hi {
                let t = if splitters.is_empty() {
                    0
                } else {
                    partition_rank(&splitters, dim, points.point(i))
                };
                buckets[t].push(i as u32);
            }
            for (t, idx) in buckets.into_iter().enumerate() {
                if t == r {
                    self_msgs[r] = Some(rows_msg(points, idx));
                } else if !idx.is_empty() {
                    self.net.send(r as u32, t as u32, rows_msg(points, idx))?;
                }
            }
        }
        for r in 0..n_ranks {
            let mut parts = self.net.deliver(r as u32);
            let pos = parts.partition_point(|&(s, _)| (s as usize) < r);
            parts.insert(pos, (r as u32, self_msgs[r].take().unwrap()));
            let mut rank = Rank {
                ids: Vec::new(),
                coords: Vec::new(),
                masses: points.masses().map(|_| Vec::new()),
                velocities: points.velocities().map(|_| Vec::new()),
                tree: None,
            };
            for (_, msg) in parts {
                insert_rows(&mut rank, dim, false, msg)?;
            }
            let perm = z_sort_coords(&rank.coords, dim);
            rank.ids = perm.iter().map(|&z| rank.ids[z as usize]).collect();
            let old = std::mem::take(&mut rank.coords);
            rank.coords = Vec::with_capacity(old.len());
            for &z in &perm {
                rank.coords
                    .extend_from_slice(&old[z as usize * dim..(z as usize + 1) * dim]);
            }
            if let Some(ms) = rank.masses.take() {
                rank.masses = Some(perm.iter().map(|&z| ms[z as usize]).collect());
            }
            if let Some(vs) = rank.velocities.take() {
                let mut v = Vec::with_capacity(vs.len());
                for &z in &perm {
                    v.extend_from_slice(&vs[z as usize * dim..(z as usize + 1) * dim]);
                }
                rank.velocities = Some(v);
            }
            self.ranks.push(rank);
        }
        let max = self.ranks.iter().map(Rank::len).max().unwrap_or(0);
        self.imbalance = max as f64 * n_ranks as f64 / n as f64;
        Ok(())
    }

    /// Snap rank boundaries onto tree node edges: each boundary moves to
    /// an edge of the largest node that straddles it, fits the coarsest
    /// plane capacity, and has an edge strictly inside the two adjacent
    /// ranks (so no rank empties); the nearer such edge wins. Edge rows
    /// move between the two neighbours. Passes repeat until no boundary
    /// moves; every move strictly grows the boundary's smallest
    /// straddling node, so the fixpoint arrives within a plane's worth
    /// of moves per boundary and a second call is a no-op.
    fn adjust_bounds(&mut self) -> Result<()> {
        let n_ranks = self.ranks.len();
        if n_ranks < 2 {
            return Ok(());
        }
        let dim = self.dim;
        let n = self.n_points;
        let cap = *self.schedule.last().unwrap() as usize;
        // The global z order never changes, only where it is cut.
        let mut global = Vec::with_capacity(n * dim);
        for r in &self.ranks {
            global.extend_from_slice(&r.coords);
        }
        let levels = pair_levels(&global, dim);
        // Terminates: a move leaves the boundary on a node edge, so its
        // next smallest straddler is a strict ancestor of the node it
        // snapped to — strictly larger, and capped.
        loop {
            let mut moved = false;
            for rb in 1..n_ranks {
                let left_start: usize = self.ranks[..rb - 1].iter().map(Rank::len).sum();
                let b = left_start + self.ranks[rb - 1].len();
                let right_end = b + self.ranks[rb].len();
                if b == 0 || b == n {
                    continue;
                }
                let Some(target) = snap_target(
                    &global, dim, &levels, cap, b, left_start, right_end,
                ) else {
                    continue;
                };
                if target < b {
                    let cnt = b - target;
                    let at = self.ranks[rb - 1].len() - cnt;
                    let msg = take_rows(&mut self.ranks[rb - 1], dim, at, cnt);
                    self.net.send((rb - 1) as u32, rb as u32, msg)?;
                    for (_, m) in self.net.deliver(rb as u32) {
                        insert_rows(&mut self.ranks[rb], dim, true, m)?;
                    }
                } else {
                    let cnt = target - b;
                    let msg = take_rows(&mut self.ranks[rb], dim, 0, cnt);
                    self.net.send(rb as u32, (rb - 1) as u32, msg)?;
                    for (_, m) in self.net.deliver((rb - 1) as u32) {
                        insert_rows(&mut self.ranks[rb - 1], dim, false, m)?;
                    }
                }
                moved = true;
            }
            if !moved {
                break;
            }
        }
        Ok(())
    }

    fn build_trees(&mut self) -> Result<()> {
        for rank in self.ranks.iter_mut() {
            if rank.ids.is_empty() {
                continue;
            }
            let set = PointSet::new(self.dim, rank.coords.clone())?;
            let tree = build_hierarchy_with_schedule(&[&set], &self.params.tree, &self.schedule)?;
            debug_assert_eq!(tree.n_planes(), self.schedule.len());
            // Already sorted locally, so the tree's z order is ours.
            debug_assert!(tree.type_perm[0].iter().enumerate().all(|(i, &p)| p == i as u32));
            rank.tree = Some(tree);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn uniform(n: usize, dim: usize, span: f64, seed: u64) -> PointSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let coords: Vec<f64> = (0..n * dim).map(|_| rng.random_range(0.0..span)).collect();
        PointSet::new(dim, coords).unwrap()
    }

    fn small_params() -> SimParams {
        SimParams {
            tree: TreeParams {
                n_max0: 8,
                growth: 4,
                n_target: 2,
                f_max: 50.0,
            },
            n_samples: 64,
            ..SimParams::default()
        }
    }

    #[test]
    fn partition_concatenates_to_the_global_z_sort() {
        let points = uniform(500, 3, 2.0, 11);
        let cluster = Cluster::new(&points, 4, small_params()).unwrap();
        let expect = z_sort_coords(points.coords(), 3);
        let got: Vec<u32> = (0..4).flat_map(|r| cluster.rank_ids(r).to_vec()).collect();
        assert_eq!(got, expect);
        assert_eq!(cluster.rank_sizes().iter().sum::<usize>(), 500);
        assert!(cluster.imbalance() >= 1.0);
    }

    #[test]
    fn duplicate_rows_stay_in_input_order_on_one_rank() {
        let mut coords = Vec::new();
        for i in 0..120 {
            let v = (i % 5) as f64;
            coords.extend_from_slice(&[v, 7.0 - v]);
        }
        let points = PointSet::new(2, coords).unwrap();
        let cluster = Cluster::new(&points, 3, small_params()).unwrap();
        let expect = z_sort_coords(points.coords(), 2);
        let got: Vec<u32> = (0..3).flat_map(|r| cluster.rank_ids(r).to_vec()).collect();
        assert_eq!(got, expect);
        // Every duplicate class sits wholly on one rank.
        for class in 0..5u32 {
            let holders: Vec<usize> = (0..3)
                .filter(|&r| {
                    cluster.rank_ids(r).iter().any(|&i| i % 5 == class)
                })
                .collect();
            assert_eq!(holders.len(), 1, "class {class} split across {holders:?}");
        }
    }

    #[test]
    fn boundary_snapping_is_idempotent_and_preserves_order() {
        for seed in 0..4 {
            let points = uniform(800, 2, 1.0, seed);
            let mut cluster = Cluster::new(&points, 5, small_params()).unwrap();
            let before = cluster.rank_sizes();
            let expect = z_sort_coords(points.coords(), 2);
            let got: Vec<u32> = (0..5).flat_map(|r| cluster.rank_ids(r).to_vec()).collect();
            assert_eq!(got, expect, "seed {seed}: transfers must keep z order");
            cluster.adjust_bounds().unwrap();
            assert_eq!(cluster.rank_sizes(), before, "seed {seed}: second pass moved rows");
        }
    }

    #[test]
    fn snapped_boundaries_admit_no_further_move() {
        let points = uniform(600, 3, 4.0, 3);
        let cluster = Cluster::new(&points, 4, small_params()).unwrap();
        let cap = *cluster.schedule.last().unwrap() as usize;
        let mut global = Vec::new();
        for r in &cluster.ranks {
            global.extend_from_slice(&r.coords);
        }
        let levels = pair_levels(&global, 3);
        let mut left = 0usize;
        for r in 0..3 {
            let b = left + cluster.ranks[r].len();
            let right_end = b + cluster.ranks[r + 1].len();
            if b > 0 && b < 600 {
                let t = snap_target(&global, 3, &levels, cap, b, left, right_end);
                assert_eq!(t, None, "rank {r}: boundary {b} would still snap");
            }
            left = b;
        }
    }

    #[test]
    fn skewed_duplicates_may_leave_ranks_empty_but_build_succeeds() {
        // All mass on one coordinate: every splitter equals it, so rank 0
        // receives everything.
        let coords = vec![1.5; 2 * 40];
        let points = PointSet::new(2, coords).unwrap();
        let cluster = Cluster::new(&points, 3, small_params()).unwrap();
        assert_eq!(cluster.rank_sizes(), vec![40, 0, 0]);
        assert!(cluster.ranks[0].tree.is_some());
        assert!(cluster.ranks[1].tree.is_none());
    }

    #[test]
    fn too_few_points_for_the_rank_count_is_an_error() {
        let points = uniform(3, 2, 1.0, 0);
        assert!(matches!(
            Cluster::new(&points, 8, SimParams::default()),
            Err(Error::TooFewPoints { needed: 8, got: 3 })
        ));
    }

    #[test]
    fn masses_and_velocities_travel_with_their_rows() {
        let n = 200;
        let points = uniform(n, 2, 1.0, 5);
        let masses: Vec<f64> = (0..n).map(|i| 1.0 + i as f64).collect();
        let vels: Vec<f64> = (0..2 * n).map(|i| i as f64 * 0.5).collect();
        let points = PointSet::new(2, points.coords().to_vec())
            .unwrap()
            .with_masses(masses.clone())
            .unwrap()
            .with_velocities(vels.clone())
            .unwrap();
        let cluster = Cluster::new(&points, 3, small_params()).unwrap();
        for rank in &cluster.ranks {
            let ms = rank.masses.as_ref().unwrap();
            let vs = rank.velocities.as_ref().unwrap();
            for (j, &id) in rank.ids.iter().enumerate() {
                assert_eq!(ms[j], masses[id as usize]);
                assert_eq!(vs[2 * j..2 * j + 2], vels[2 * id as usize..2 * id as usize + 2]);
            }
        }
    }
}
