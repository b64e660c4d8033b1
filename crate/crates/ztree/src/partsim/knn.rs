//! Distributed exact neighbour search over per-rank trees.
//!
//! Every rank walks queries against its own nodes plus mirrored remote
//! nodes, so the radius estimates differ from the single-tree walk — but
//! the surviving candidate set always covers the true neighbours, and the
//! leaf scan picks the same k smallest (distance, input index) keys. The
//! assembled result is therefore bit-identical for any rank count.

use crate::bounds::PeriodicDomain;
use crate::error::{Error, Result};
use crate::ilist::{dense_init, super_node_splits, InteractionList};
use crate::knn::{elapsed_ms, find_rmax, refine, run_leaf_chunks, KnnResult, OutputOrder};

use super::walk::{
    combined_f64, combined_parents, combined_u32, fetch_children, fetch_leaf_points,
    referenced_imports, top_exchange, windows,
};
use super::Cluster;

struct RankWalk {
    il: InteractionList,
    recv_parents: Vec<(u32, u32)>,
    src_parents: Vec<(u32, u32)>,
}

pub(super) fn cluster_knn(
    cluster: &mut Cluster,
    k: usize,
    domain: &PeriodicDomain,
) -> Result<KnnResult> {
    let dim = cluster.dim;
    let n = cluster.n_points;
    if k == 0 {
        return Err(Error::KZero);
    }
    if k > n {
        return Err(Error::KTooLarge { k, n });
    }
    if domain.dim() != dim {
        return Err(Error::DimensionMismatch {
            left: dim,
            right: domain.dim(),
        });
    }
    cluster.net.reset_guards();
    let n_ranks = cluster.ranks.len();
    let n_planes = cluster.schedule.len();
    let ngr = cluster.params.ngr;
    let heap_cap = cluster.params.heap_cap;
    let sort_rlow = cluster.params.sort_rlow;
    let ee = cluster.params.early_exit && sort_rlow;

    let clock = std::time::Instant::now();
    let mut imports = top_exchange(cluster, false)?;

    // Seed: receivers are the local top supernode groups, sources those
    // plus each import owner's groups.
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
        let il = dense_init(local_groups.len(), src_parents.len());
        st.push(RankWalk {
            il,
            recv_parents: local_groups,
            src_parents,
        });
    }

    for p in (0..n_planes).rev() {
        if p < n_planes - 1 {
            // Interaction sources live on plane p+1; fetch their children.
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
                st[r].recv_parents = windows(&tree.plane(p + 1).prev_splits);
                st[r].src_parents = combined_parents(&st[r].recv_parents, &ranges[r], n_local_child);
            }
            imports = new_imports;
        }
        for r in 0..n_ranks {
            let Some(tree) = cluster.ranks[r].tree.as_ref() else {
                continue;
            };
            let plane = tree.plane(p);
            let halves = tree.plane_half_extents(p);
            let centers = &plane.centers;
            let counts = &plane.counts[0];
            let src_centers = combined_f64(centers, &imports[r].centers);
            let src_halves = combined_f64(&halves, &imports[r].halves);
            let src_counts = combined_u32(counts, &imports[r].counts);
            let mut r_max = vec![0.0; plane.n_nodes()];
            find_rmax(
                dim,
                k as u64,
                heap_cap,
                domain,
                &st[r].recv_parents,
                centers,
                &halves,
                counts,
                &st[r].src_parents,
                &src_counts,
                &src_centers,
                &src_halves,
                &st[r].il,
                ee,
                &mut r_max,
            );
            let mut il = refine(
                dim,
                domain,
                &st[r].recv_parents,
                centers,
                &halves,
                &st[r].src_parents,
                &src_counts,
                &src_centers,
                &src_halves,
                &st[r].il,
                &r_max,
                ee,
            );
            if sort_rlow {
                il.sort_segments();
            }
            st[r].il = il;
        }
    }
    cluster.times.walk_ms = elapsed_ms(clock);

    let clock = std::time::Instant::now();
    let mut reorder_acc = 0.0f64;
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

    let mut out_i = vec![0u32; n * k];
    let mut out_d = vec![0.0f64; n * k];
    for r in 0..n_ranks {
        let rank = &cluster.ranks[r];
        let Some(tree) = rank.tree.as_ref() else {
            continue;
        };
        let splits = &tree.plane(0).point_splits;
        let src_ranges = combined_parents(&windows(splits), &leaf[r].ranges, rank.len() as u32);
        let src_coords = combined_f64(&rank.coords, &leaf[r].coords);
        let src_ids = combined_u32(&rank.ids, &leaf[r].ids);
        let (rows_i, rows_d) = run_leaf_chunks(
            dim,
            k,
            domain,
            splits,
            &rank.coords,
            &st[r].il,
            &src_ranges,
            &src_coords,
            &src_ids,
            ee,
        );
        let scatter = std::time::Instant::now();
        for (q, &id) in rank.ids.iter().enumerate() {
            let dst = id as usize * k;
            out_i[dst..dst + k].copy_from_slice(&rows_i[q * k..(q + 1) * k]);
            out_d[dst..dst + k].copy_from_slice(&rows_d[q * k..(q + 1) * k]);
        }
        reorder_acc += elapsed_ms(scatter);
    }
    cluster.times.leaf_ms = elapsed_ms(clock) - reorder_acc;
    let clock = std::time::Instant::now();
    for d in out_d.iter_mut() {
        *d = d.sqrt();
    }
    cluster.times.reorder_ms = reorder_acc + elapsed_ms(clock);
    Ok(KnnResult {
        k,
        indices: out_i,
        distances: out_d,
        order: OutputOrder::Input,
    })
}

#[cfg(test)]
mod tests {
    use crate::bounds::PeriodicDomain;
    use crate::datasets::{generate, Distribution};
    use crate::error::Error;
    use crate::knn::{knn, KnnOptions};
    use crate::partsim::{Cluster, SimParams};
    use crate::points::PointSet;
    use crate::treebuild::TreeParams;

    fn params() -> SimParams {
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

    fn single(points: &PointSet, k: usize, domain: &PeriodicDomain) -> crate::knn::KnnResult {
        let opts = KnnOptions {
            tree: params().tree,
            ..KnnOptions::default()
        };
        knn(points, None, k, domain, &opts).unwrap()
    }

    fn bits(xs: &[f64]) -> Vec<u64> {
        xs.iter().map(|x| x.to_bits()).collect()
    }

    #[test]
    fn matches_the_single_tree_result_for_every_rank_count() {
        let points = generate(Distribution::Uniform, 300, 2, 9, None).unwrap();
        let domain = PeriodicDomain::open(2);
        let want = single(&points, 5, &domain);
        for n_ranks in [1usize, 2, 3, 5] {
            let mut cluster = Cluster::new(&points, n_ranks, params()).unwrap();
            let got = cluster.knn(5, &domain).unwrap();
            assert_eq!(got.indices, want.indices, "{n_ranks} ranks");
            assert_eq!(
                bits(&got.distances),
                bits(&want.distances),
                "{n_ranks} ranks"
            );
        }
    }

    #[test]
    fn periodic_wrap_agrees_across_ranks() {
        let points = generate(Distribution::Uniform, 250, 3, 21, None).unwrap();
        let domain = PeriodicDomain::cube(3, 1.0).unwrap();
        let want = single(&points, 4, &domain);
        let mut cluster = Cluster::new(&points, 4, params()).unwrap();
        let got = cluster.knn(4, &domain).unwrap();
        assert_eq!(got.indices, want.indices);
        assert_eq!(bits(&got.distances), bits(&want.distances));
    }

    #[test]
    fn heavy_duplicates_break_ties_identically() {
        // Many exact ties force the (distance, index) tie-break through
        // the cross-rank path.
        let coords: Vec<f64> = (0..140)
            .flat_map(|i| {
                let v = (i % 7) as f64;
                [v, 0.5 * v]
            })
            .collect();
        let points = PointSet::new(2, coords).unwrap();
        let domain = PeriodicDomain::open(2);
        let want = single(&points, 10, &domain);
        let mut cluster = Cluster::new(&points, 3, params()).unwrap();
        let got = cluster.knn(10, &domain).unwrap();
        assert_eq!(got.indices, want.indices);
        assert_eq!(bits(&got.distances), bits(&want.distances));
    }

    #[test]
    fn k_bounds_are_validated() {
        let points = generate(Distribution::Uniform, 40, 2, 1, None).unwrap();
        let domain = PeriodicDomain::open(2);
        let mut cluster = Cluster::new(&points, 2, params()).unwrap();
        assert!(matches!(cluster.knn(0, &domain), Err(Error::KZero)));
        assert!(matches!(
            cluster.knn(41, &domain),
            Err(Error::KTooLarge { k: 41, n: 40 })
        ));
    }
}
