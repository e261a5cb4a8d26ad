//! Exact k-nearest-neighbor search by inner product.
//!
//! Search is brute force over every (query, candidate) pair; nothing
//! approximate is used anywhere in the pipeline. The kernel walks candidates
//! in transposed cache blocks and queries in small tiles so the block data
//! stays hot, which is where essentially all graph-construction time goes.
//!
//! Results are reproducible at any thread count: parallelism only splits the
//! query set, and every single dot product accumulates in ascending
//! dimension order. Ties in similarity resolve toward the smaller candidate
//! index.

use rayon::prelude::*;

use crate::embeddings::FeatureMatrix;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

const CAND_BLOCK: usize = 128;
const QUERY_TILE: usize = 16;

/// Per-query neighbor lists: `(candidate index, similarity)` sorted by
/// descending similarity, then ascending index. Lists are shorter than the
/// requested `k` when fewer candidates exist.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborList<T = f32> {
    k: usize,
    lists: Vec<Vec<(usize, T)>>,
}

impl<T: Scalar> NeighborList<T> {
    /// The neighbor count that was asked for (lists may be shorter).
    pub fn requested_k(&self) -> usize {
        self.k
    }

    /// Number of queries.
    pub fn len(&self) -> usize {
        self.lists.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lists.is_empty()
    }

    pub fn list(&self, query: usize) -> &[(usize, T)] {
        &self.lists[query]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[(usize, T)]> {
        self.lists.iter().map(|l| l.as_slice())
    }
}

/// Bounded selection keeping the best `k` (similarity desc, index asc).
/// Candidates must be offered in ascending index order.
struct TopK<T> {
    k: usize,
    entries: Vec<(T, usize)>,
}

impl<T: Scalar> TopK<T> {
    fn new(k: usize) -> Self {
        Self { k, entries: Vec::with_capacity(k + 1) }
    }

    #[inline]
    fn push(&mut self, sim: T, idx: usize) {
        if self.entries.len() == self.k {
            // Offered in ascending index order, so an equal similarity never
            // displaces an existing entry.
            let worst = self.entries[self.k - 1].0;
            if !(sim > worst) {
                return;
            }
        }
        let pos = self.entries.partition_point(|&(s, _)| s >= sim);
        self.entries.insert(pos, (sim, idx));
        self.entries.truncate(self.k);
    }

    fn into_list(self) -> Vec<(usize, T)> {
        self.entries.into_iter().map(|(s, i)| (i, s)).collect()
    }
}

/// For each query row, the `k` candidates with the largest inner product.
///
/// With `exclude_self` set, candidate `j` is skipped for query `j`; that is
/// only meaningful when queries and candidates are the same matrix. `k` is
/// clamped to the number of available candidates per query.
pub fn top_k<T: Scalar>(
    queries: &FeatureMatrix<T>,
    candidates: &FeatureMatrix<T>,
    k: usize,
    exclude_self: bool,
) -> Result<NeighborList<T>> {
    if k == 0 {
        return Err(Error::Config("neighbor count k must be at least 1".into()));
    }
    if queries.dim() != candidates.dim() {
        return Err(Error::Shape(format!(
            "query dim {} != candidate dim {}",
            queries.dim(),
            candidates.dim()
        )));
    }
    if candidates.rows() == 0 {
        return Err(Error::Empty("candidate set is empty".into()));
    }

    let dim = queries.dim();
    let m = candidates.rows();

    // One transposed copy of the candidates, laid out per block as
    // dim-major so the inner accumulation loop runs over contiguous lanes.
    let blocks: Vec<(usize, Vec<T>)> = (0..m)
        .step_by(CAND_BLOCK)
        .map(|start| {
            let len = CAND_BLOCK.min(m - start);
            let mut t = vec![T::zero(); len * dim];
            for c in 0..len {
                let row = candidates.row(start + c);
                for d in 0..dim {
                    t[d * len + c] = row[d];
                }
            }
            (start, t)
        })
        .collect();

    let lists: Vec<Vec<Vec<(usize, T)>>> = (0..queries.rows())
        .step_by(QUERY_TILE)
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|tile_start| {
            let tile_len = QUERY_TILE.min(queries.rows() - tile_start);
            let mut selectors: Vec<TopK<T>> = (0..tile_len).map(|_| TopK::new(k)).collect();
            let mut sims = vec![T::zero(); tile_len * CAND_BLOCK];
            for (start, t) in &blocks {
                let len = t.len() / dim;
                sims[..tile_len * len].iter_mut().for_each(|s| *s = T::zero());
                for (qi, sel) in selectors.iter_mut().enumerate() {
                    let q = queries.row(tile_start + qi);
                    let row_sims = &mut sims[qi * len..(qi + 1) * len];
                    for d in 0..dim {
                        let qv = q[d];
                        let lane = &t[d * len..(d + 1) * len];
                        for c in 0..len {
                            row_sims[c] += qv * lane[c];
                        }
                    }
                    for c in 0..len {
                        let idx = start + c;
                        if exclude_self && idx == tile_start + qi {
                            continue;
                        }
                        sel.push(row_sims[c], idx);
                    }
                }
            }
            selectors.into_iter().map(TopK::into_list).collect()
        })
        .collect();

    Ok(NeighborList { k, lists: lists.into_iter().flatten().collect() })
}
