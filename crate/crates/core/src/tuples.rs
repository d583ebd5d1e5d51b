//! Pair and triplet enumeration over a mini-batch.
//!
//! Every tuple in the batch is used unless a `max_tuples` cap is set, in
//! which case a seeded uniform subset is drawn and returned in
//! lexicographic order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TupleError {
    #[error("need at least {needed} samples, got {got}")]
    TooFew { needed: usize, got: usize },
    #[error("max_tuples must be positive")]
    ZeroCap,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TripletMode {
    /// One triple per index set; the middle sorted index is the angle vertex.
    #[default]
    VertexMiddle,
    /// Every index of the set takes a turn as vertex.
    AllVertices,
}

impl TripletMode {
    pub fn name(self) -> &'static str {
        match self {
            TripletMode::VertexMiddle => "vertex-middle",
            TripletMode::AllVertices => "all-vertices",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "vertex-middle" => Some(TripletMode::VertexMiddle),
            "all-vertices" | "all-three-vertices" => Some(TripletMode::AllVertices),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct TuplePolicy {
    pub triplet_mode: TripletMode,
    pub max_tuples: Option<usize>,
    pub seed: u64,
}

impl TuplePolicy {
    pub fn all() -> Self {
        Self::default()
    }

    pub fn with_cap(mut self, max_tuples: usize, seed: u64) -> Self {
        self.max_tuples = Some(max_tuples);
        self.seed = seed;
        self
    }
}

pub fn pair_count(n: usize) -> usize {
    n * n.saturating_sub(1) / 2
}

pub fn triplet_count(n: usize, mode: TripletMode) -> usize {
    let sets = if n < 3 { 0 } else { n * (n - 1) * (n - 2) / 6 };
    match mode {
        TripletMode::VertexMiddle => sets,
        TripletMode::AllVertices => 3 * sets,
    }
}

fn capped<T: Copy>(all: Vec<T>, policy: &TuplePolicy, salt: u64) -> Result<Vec<T>, TupleError> {
    match policy.max_tuples {
        None => Ok(all),
        Some(0) => Err(TupleError::ZeroCap),
        Some(cap) if cap >= all.len() => Ok(all),
        Some(cap) => {
            let mut rng = ChaCha8Rng::seed_from_u64(policy.seed ^ salt);
            let mut picked = rand::seq::index::sample(&mut rng, all.len(), cap).into_vec();
            picked.sort_unstable();
            Ok(picked.into_iter().map(|i| all[i]).collect())
        }
    }
}

pub fn enumerate_pairs(n: usize, policy: &TuplePolicy) -> Result<Vec<(usize, usize)>, TupleError> {
    if n < 2 {
        return Err(TupleError::TooFew { needed: 2, got: n });
    }
    let mut out = Vec::with_capacity(pair_count(n));
    for i in 0..n {
        for j in i + 1..n {
            out.push((i, j));
        }
    }
    capped(out, policy, 0x5041_4952)
}

/// Triples `(i, j, k)` with `j` the angle vertex.
pub fn enumerate_triplets(
    n: usize,
    policy: &TuplePolicy,
) -> Result<Vec<(usize, usize, usize)>, TupleError> {
    if n < 3 {
        return Err(TupleError::TooFew { needed: 3, got: n });
    }
    let mut out = Vec::with_capacity(triplet_count(n, policy.triplet_mode));
    for a in 0..n {
        for b in a + 1..n {
            for c in b + 1..n {
                match policy.triplet_mode {
                    TripletMode::VertexMiddle => out.push((a, b, c)),
                    TripletMode::AllVertices => {
                        out.push((b, a, c));
                        out.push((a, b, c));
                        out.push((a, c, b));
                    }
                }
            }
        }
    }
    capped(out, policy, 0x5452_4950)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn small_pairs() {
        assert_eq!(
            enumerate_pairs(3, &TuplePolicy::all()).unwrap(),
            vec![(0, 1), (0, 2), (1, 2)]
        );
        assert_eq!(
            enumerate_pairs(1, &TuplePolicy::all()),
            Err(TupleError::TooFew { needed: 2, got: 1 })
        );
    }

    #[test]
    fn full_batch_counts() {
        assert_eq!(
            enumerate_pairs(128, &TuplePolicy::all()).unwrap().len(),
            8128
        );
        assert_eq!(
            enumerate_triplets(128, &TuplePolicy::all()).unwrap().len(),
            341_376
        );
        assert_eq!(triplet_count(128, TripletMode::VertexMiddle), 341_376);
    }

    #[test]
    fn small_triplets() {
        assert_eq!(
            enumerate_triplets(3, &TuplePolicy::all()).unwrap(),
            vec![(0, 1, 2)]
        );
        let all = TuplePolicy {
            triplet_mode: TripletMode::AllVertices,
            ..TuplePolicy::default()
        };
        let t = enumerate_triplets(4, &all).unwrap();
        assert_eq!(t.len(), 12);
        // each index set appears once per vertex
        let keyed: HashSet<_> = t.iter().map(|&(i, j, k)| (j, i.min(k), i.max(k))).collect();
        assert_eq!(keyed.len(), 12);
        assert!(enumerate_triplets(2, &TuplePolicy::all()).is_err());
    }

    #[test]
    fn capped_is_deterministic_and_distinct() {
        let p = TuplePolicy::all().with_cap(20, 42);
        let a = enumerate_pairs(10, &p).unwrap();
        let b = enumerate_pairs(10, &p).unwrap();
        assert_eq!(a.len(), 20);
        assert_eq!(a, b);
        let set: HashSet<_> = a.iter().collect();
        assert_eq!(set.len(), 20);
        assert!(a.windows(2).all(|w| w[0] < w[1]));
        let other = enumerate_pairs(10, &TuplePolicy::all().with_cap(20, 43)).unwrap();
        assert_ne!(a, other);
        assert_eq!(
            enumerate_pairs(4, &TuplePolicy::all().with_cap(0, 1)),
            Err(TupleError::ZeroCap)
        );
    }

    #[test]
    fn no_repeated_indices() {
        let all = TuplePolicy {
            triplet_mode: TripletMode::AllVertices,
            ..TuplePolicy::default()
        };
        let t = enumerate_triplets(7, &all).unwrap();
        assert!(t.iter().all(|&(i, j, k)| i != j && j != k && i != k));
        let set: HashSet<_> = t.iter().collect();
        assert_eq!(set.len(), t.len());
    }
}
