//! Interaction lists: for every receiving node, the source nodes it still
//! has to consider, stored flat with one segment per receiver.
//!
//! Radii kept alongside are squared lower distance bounds; sorting a
//! segment by them lets walks stop a receiver's scan as soon as a bound
//! proves everything later irrelevant.

/// Flat interaction list. `ispl` has one more entry than there are
/// receivers; receiver i owns entries `ispl[i]..ispl[i+1]` of `isrc` and
/// `r_low`.
#[derive(Debug, Clone, Default)]
pub struct InteractionList {
    pub isrc: Vec<u32>,
    pub r_low: Vec<f64>,
    pub ispl: Vec<u32>,
}

impl InteractionList {
    #[inline]
    pub fn n_receivers(&self) -> usize {
        self.ispl.len().saturating_sub(1)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.isrc.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.isrc.is_empty()
    }

    #[inline]
    pub fn segment(&self, receiver: usize) -> std::ops::Range<usize> {
        self.ispl[receiver] as usize..self.ispl[receiver + 1] as usize
    }

    /// Sort every segment by (r_low, source index). Walks rely on this
    /// order for early exits; ties on the radius resolve by index so the
    /// layout is deterministic.
    pub fn sort_segments(&mut self) {
        let mut tmp: Vec<(f64, u32)> = Vec::new();
        for r in 0..self.n_receivers() {
            let seg = self.segment(r);
            if seg.len() <= 1 {
                continue;
            }
            tmp.clear();
            tmp.extend(
                self.r_low[seg.clone()]
                    .iter()
                    .copied()
                    .zip(self.isrc[seg.clone()].iter().copied()),
            );
            tmp.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            for (off, &(rl, is)) in tmp.iter().enumerate() {
                self.r_low[seg.start + off] = rl;
                self.isrc[seg.start + off] = is;
            }
        }
    }
}

/// Fully dense list: every receiver interacts with every source, lower
/// bounds all zero.
pub fn dense_init(n_recv: usize, n_src: usize) -> InteractionList {
    let total = n_recv * n_src;
    let mut isrc = Vec::with_capacity(total);
    for _ in 0..n_recv {
        isrc.extend(0..n_src as u32);
    }
    InteractionList {
        isrc,
        r_low: vec![0.0; total],
        ispl: (0..=n_recv as u32).map(|i| i * n_src as u32).collect(),
    }
}

/// Dense upper-triangle list over one index space: receiver i gets the
/// sources i..n, so every unordered pair appears exactly once.
pub fn dense_upper(n: usize) -> InteractionList {
    let mut isrc = Vec::with_capacity(n * (n + 1) / 2);
    let mut ispl = Vec::with_capacity(n + 1);
    ispl.push(0);
    for i in 0..n as u32 {
        isrc.extend(i..n as u32);
        ispl.push(isrc.len() as u32);
    }
    InteractionList {
        r_low: vec![0.0; isrc.len()],
        isrc,
        ispl,
    }
}

/// Group the top plane's nodes into runs of at most `ngr`, returning the
/// boundaries (length n_groups + 1).
pub fn super_node_splits(n_top: usize, ngr: usize) -> Vec<u32> {
    assert!(ngr >= 1);
    let mut out: Vec<u32> = (0..n_top as u32).step_by(ngr).collect();
    out.push(n_top as u32);
    out.dedup();
    out
}

/// Exclusive prefix scan with a prepended zero; output is one longer than
/// the input and ends with the total.
pub fn exclusive_scan(counts: &[u32]) -> Vec<u32> {
    let mut out = Vec::with_capacity(counts.len() + 1);
    let mut acc = 0u32;
    out.push(0);
    for &c in counts {
        acc = acc.checked_add(c).expect("interaction count overflow");
        out.push(acc);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dense_init_layout() {
        let il = dense_init(3, 3);
        assert_eq!(il.ispl, vec![0, 3, 6, 9]);
        assert_eq!(il.isrc, vec![0, 1, 2, 0, 1, 2, 0, 1, 2]);
        assert!(il.r_low.iter().all(|&r| r == 0.0));
        let il = dense_init(2, 4);
        assert_eq!(il.ispl, vec![0, 4, 8]);
        assert_eq!(il.segment(1), 4..8);
    }

    #[test]
    fn dense_upper_covers_each_pair_once() {
        let il = dense_upper(3);
        assert_eq!(il.ispl, vec![0, 3, 5, 6]);
        assert_eq!(il.isrc, vec![0, 1, 2, 1, 2, 2]);
    }

    #[test]
    fn super_node_splits_examples() {
        assert_eq!(super_node_splits(70, 32), vec![0, 32, 64, 70]);
        assert_eq!(super_node_splits(64, 32), vec![0, 32, 64]);
        assert_eq!(super_node_splits(5, 32), vec![0, 5]);
        assert_eq!(super_node_splits(1, 1), vec![0, 1]);
    }

    #[test]
    fn exclusive_scan_prepends_zero() {
        assert_eq!(exclusive_scan(&[2, 0, 3]), vec![0, 2, 2, 5]);
        assert_eq!(exclusive_scan(&[]), vec![0]);
    }

    #[test]
    fn segment_sort_orders_by_radius_then_index() {
        let mut il = InteractionList {
            isrc: vec![5, 1, 3, 9, 0],
            r_low: vec![2.0, 1.0, 1.0, 0.5, 0.0],
            ispl: vec![0, 3, 5],
        };
        il.sort_segments();
        assert_eq!(il.isrc, vec![1, 3, 5, 0, 9]);
        assert_eq!(il.r_low, vec![1.0, 1.0, 2.0, 0.0, 0.5]);
    }
}
