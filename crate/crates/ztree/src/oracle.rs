//! Brute-force reference implementations for validating the tree paths.
//!
//! Everything here is deliberately naive and single threaded, and shares no
//! code with the tree modules. The one overlap is the minimal-image
//! displacement, whose contract pins the exact operation sequence
//! (`rem_euclid`, then one conditional subtraction, landing in
//! [-P/2, P/2)); it is implemented a second time here and cross-checked
//! bit for bit against the tree-side implementation in tests.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bounds::{dist_bounds_sq, PeriodicDomain};
use crate::points::PointSet;

/// Minimal-image difference a - b under an optional period.
#[inline]
fn wrap1(period: Option<f64>, a: f64, b: f64) -> f64 {
    match period {
        None => a - b,
        Some(p) => {
            let mut d = (a - b).rem_euclid(p);
            if d >= 0.5 * p {
                d -= p;
            }
            d
        }
    }
}

/// Squared minimal-image distance, dimensions accumulated in order.
pub fn dist_sq(domain: &PeriodicDomain, a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for i in 0..a.len() {
        let d = wrap1(domain.period(i), a[i], b[i]);
        acc += d * d;
    }
    acc
}

/// Exact k nearest neighbours of every query by exhaustive scan.
///
/// Neighbours are selected by (squared distance, source index) in
/// lexicographic order, so ties resolve to the lower index. Returns
/// `(indices, distances)` flattened row-major, one row of k per query, rows
/// in query input order. Panics if k exceeds the source count.
pub fn brute_knn(
    sources: &PointSet,
    queries: &PointSet,
    k: usize,
    domain: &PeriodicDomain,
) -> (Vec<u32>, Vec<f64>) {
    let n = sources.len();
    assert!(k >= 1 && k <= n, "k out of range");
    let mut indices = Vec::with_capacity(queries.len() * k);
    let mut distances = Vec::with_capacity(queries.len() * k);
    let mut cand: Vec<(f64, u32)> = Vec::with_capacity(n);
    for q in 0..queries.len() {
        let qp = queries.point(q);
        cand.clear();
        for s in 0..n {
            cand.push((dist_sq(domain, sources.point(s), qp), s as u32));
        }
        let cmp = |a: &(f64, u32), b: &(f64, u32)| {
            a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1))
        };
        if k < n {
            cand.select_nth_unstable_by(k - 1, cmp);
        }
        cand[..k].sort_unstable_by(cmp);
        for &(d, i) in &cand[..k] {
            indices.push(i);
            distances.push(d.sqrt());
        }
    }
    (indices, distances)
}

/// Friends-of-friends by exhaustive pair scan and union-find. Labels are
/// root point indices; the root of a group is its minimal member index.
pub fn brute_fof(points: &PointSet, r_link: f64, domain: &PeriodicDomain) -> Vec<u32> {
    let n = points.len();
    let r_sq = r_link * r_link;
    let mut parent: Vec<u32> = (0..n as u32).collect();
    fn find(parent: &mut [u32], mut i: u32) -> u32 {
        while parent[i as usize] != i {
            let up = parent[parent[i as usize] as usize];
            parent[i as usize] = up;
            i = up;
        }
        i
    }
    for a in 0..n {
        for b in a + 1..n {
            if dist_sq(domain, points.point(a), points.point(b)) <= r_sq {
                let ra = find(&mut parent, a as u32);
                let rb = find(&mut parent, b as u32);
                if ra != rb {
                    let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
                    parent[hi as usize] = lo;
                }
            }
        }
    }
    (0..n as u32).map(|i| find(&mut parent, i)).collect()
}

/// Relabel group labels canonically: groups numbered by first appearance.
/// Two labelings describe the same partition iff their canonical forms are
/// equal.
pub fn canonical_labels(labels: &[u32]) -> Vec<u32> {
    let mut map = std::collections::HashMap::new();
    let mut next = 0u32;
    labels
        .iter()
        .map(|&l| {
            *map.entry(l).or_insert_with(|| {
                let v = next;
                next += 1;
                v
            })
        })
        .collect()
}

/// Z-order permutation by explicit integer Morton keys, for points on a
/// nonnegative dyadic lattice.
///
/// Each coordinate times 2^scale_bits must be an exact nonnegative
/// integer. Keys interleave bits with dimension 0 most significant within
/// each bit level; ties fall back to input order (stable). Panics if the
/// points are off-lattice or the key would exceed 128 bits.
pub fn morton_key_sort(points: &PointSet, scale_bits: u32) -> Vec<u32> {
    let d = points.dim();
    let n = points.len();
    let scale = 2f64.powi(scale_bits as i32);
    let mut cells = vec![0u64; n * d];
    let mut max_cell = 0u64;
    for (i, (&x, c)) in points.coords().iter().zip(cells.iter_mut()).enumerate() {
        let y = x * scale;
        assert!(
            y.is_finite() && y >= 0.0 && y.fract() == 0.0 && y < 2f64.powi(63),
            "coordinate {} at flat index {} is not on the lattice",
            x,
            i
        );
        *c = y as u64;
        max_cell = max_cell.max(*c);
    }
    let bits = 64 - max_cell.leading_zeros().min(63);
    assert!(bits as usize * d <= 128, "morton key too wide");
    let mut keyed: Vec<(u128, u32)> = (0..n)
        .map(|i| {
            let mut key = 0u128;
            for b in (0..bits).rev() {
                for j in 0..d {
                    key = key << 1 | (cells[i * d + j] >> b & 1) as u128;
                }
            }
            (key, i as u32)
        })
        .collect();
    keyed.sort_by_key(|&(key, _)| key);
    keyed.into_iter().map(|(_, i)| i).collect()
}

/// Sample random box pairs and random points inside them, and count how
/// often the true point distance escapes the computed distance bounds.
/// A tiny relative slack guards against rounding in the bound evaluation
/// itself. Returns the number of violations (zero for sound bounds).
pub fn check_box_bounds(
    dim: usize,
    n_pairs: usize,
    n_samples: usize,
    period: Option<f64>,
    seed: u64,
) -> usize {
    const SLACK: f64 = 1e-12;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let domain = match period {
        Some(p) => PeriodicDomain::cube(dim, p).unwrap(),
        None => PeriodicDomain::open(dim),
    };
    let span = period.unwrap_or(10.0);
    let mut violations = 0;
    let mut c = vec![0.0; 2 * dim];
    let mut h = vec![0.0; 2 * dim];
    let mut p = vec![0.0; 2 * dim];
    for _ in 0..n_pairs {
        for v in c.iter_mut() {
            *v = rng.random_range(0.0..span);
        }
        for v in h.iter_mut() {
            // Squaring skews toward small boxes while keeping a tail of
            // wide ones that trip the periodic guard.
            let u: f64 = rng.random_range(0.0..1.0);
            *v = u * u * 0.6 * span;
        }
        let (c1, c2) = c.split_at(dim);
        let (h1, h2) = h.split_at(dim);
        let (lo, up) = dist_bounds_sq(&domain, c1, h1, c2, h2);
        for _ in 0..n_samples {
            for i in 0..dim {
                p[i] = c1[i] + rng.random_range(-h1[i]..=h1[i]);
                p[dim + i] = c2[i] + rng.random_range(-h2[i]..=h2[i]);
            }
            let (p1, p2) = p.split_at(dim);
            let d = dist_sq(&domain, p1, p2);
            if d < lo * (1.0 - SLACK) - SLACK || d > up * (1.0 + SLACK) + SLACK {
                violations += 1;
            }
        }
    }
    violations
}

/// Uniformly shuffled copy of 0..n, for permutation tests.
pub fn shuffled_indices(n: usize, seed: u64) -> Vec<u32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx: Vec<u32> = (0..n as u32).collect();
    idx.shuffle(&mut rng);
    idx
}
