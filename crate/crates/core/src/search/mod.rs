//! Exact cosine-similarity retrieval over an in-memory embedding store.

mod femb;

pub use femb::{import_embeddings, load_store, read_store, save_store, write_store};

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{contract_err, shape_err, Result};
use crate::scalar::Scalar;

/// Norms below this count as zero; cosine against a zero vector is 0.
pub const ZERO_NORM: f64 = 1e-12;

/// Euclidean norm accumulated in f64.
pub fn norm<T: Scalar>(v: &[T]) -> f64 {
    v.iter()
        .map(|x| {
            let x = x.to_f64_lossy();
            x * x
        })
        .sum::<f64>()
        .sqrt()
}

fn dot<T: Scalar, U: Scalar>(a: &[T], b: &[U]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.to_f64_lossy() * y.to_f64_lossy())
        .sum()
}

fn cosine_with_norms(dot: f64, norm_a: f64, norm_b: f64) -> f64 {
    if norm_a < ZERO_NORM || norm_b < ZERO_NORM {
        return 0.0;
    }
    (dot / (norm_a * norm_b)).clamp(-1.0, 1.0)
}

/// `a·b / (‖a‖‖b‖)`, or 0 when either vector is (numerically) zero.
pub fn cosine<T: Scalar>(a: &[T], b: &[T]) -> Result<f64> {
    if a.len() != b.len() {
        return shape_err(format!("cosine of {}- and {}-vectors", a.len(), b.len()));
    }
    Ok(cosine_with_norms(dot(a, b), norm(a), norm(b)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilarityHit {
    pub id: u64,
    pub score: f64,
}

/// Best-first order: higher score, then smaller id.
fn rank(a: &SimilarityHit, b: &SimilarityHit) -> Ordering {
    b.score.total_cmp(&a.score).then(a.id.cmp(&b.id))
}

/// Heap entry whose maximum is the worst-ranked hit.
struct Worst(SimilarityHit);

impl PartialEq for Worst {
    fn eq(&self, other: &Self) -> bool {
        rank(&self.0, &other.0) == Ordering::Equal
    }
}
impl Eq for Worst {}
impl PartialOrd for Worst {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Worst {
    fn cmp(&self, other: &Self) -> Ordering {
        rank(&self.0, &other.0)
    }
}

/// Id → vector map with a fixed dimension, insertion order and cached norms.
/// Vectors are kept as given (not normalized).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EmbeddingStore {
    dim: Option<usize>,
    ids: Vec<u64>,
    vectors: Vec<f32>,
    norms: Vec<f64>,
    index: HashMap<u64, usize>,
}

impl EmbeddingStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_dimension(dim: usize) -> Self {
        Self {
            dim: Some(dim),
            ..Self::default()
        }
    }

    /// Fixed by the first insert unless set at construction.
    pub fn dimension(&self) -> Option<usize> {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn contains(&self, id: u64) -> bool {
        self.index.contains_key(&id)
    }

    /// Inserts or replaces `id`.
    pub fn add<T: Scalar>(&mut self, id: u64, vector: &[T]) -> Result<()> {
        let dim = *self.dim.get_or_insert(vector.len());
        if vector.len() != dim {
            return shape_err(format!(
                "store holds {dim}-dimensional vectors, got {}",
                vector.len()
            ));
        }
        if dim == 0 {
            return shape_err("embedding dimension must be at least 1");
        }
        let values: Vec<f32> = vector.iter().map(|v| v.to_f32_lossy()).collect();
        if values.iter().any(|v| !v.is_finite()) {
            return contract_err(format!("embedding for id {id} has non-finite values"));
        }
        let n = norm(&values);
        match self.index.get(&id) {
            Some(&slot) => {
                self.vectors[slot * dim..(slot + 1) * dim].copy_from_slice(&values);
                self.norms[slot] = n;
            }
            None => {
                self.index.insert(id, self.ids.len());
                self.ids.push(id);
                self.vectors.extend_from_slice(&values);
                self.norms.push(n);
            }
        }
        Ok(())
    }

    pub fn get(&self, id: u64) -> Option<&[f32]> {
        let dim = self.dim?;
        self.index
            .get(&id)
            .map(|&slot| &self.vectors[slot * dim..(slot + 1) * dim])
    }

    /// Cached Euclidean norm of a stored vector.
    pub fn cached_norm(&self, id: u64) -> Option<f64> {
        self.index.get(&id).map(|&slot| self.norms[slot])
    }

    /// Entries in insertion order.
    pub fn iter(&self) -> impl Iterator<Item = (u64, &[f32])> + '_ {
        let dim = self.dim.unwrap_or(0);
        self.ids
            .iter()
            .enumerate()
            .map(move |(slot, &id)| (id, &self.vectors[slot * dim..(slot + 1) * dim]))
    }

    /// Exact top-`k` by cosine similarity (full scan), best first, ties
    /// broken by ascending id. An empty store yields no hits.
    pub fn top_k<T: Scalar>(&self, query: &[T], k: usize) -> Result<Vec<SimilarityHit>> {
        if k == 0 {
            return contract_err("k must be at least 1");
        }
        let Some(dim) = self.dim else {
            return Ok(Vec::new());
        };
        if query.len() != dim {
            return shape_err(format!(
                "query has dimension {}, store holds {dim}",
                query.len()
            ));
        }
        let q_norm = norm(query);
        let mut heap: BinaryHeap<Worst> = BinaryHeap::with_capacity(k + 1);
        for (slot, &id) in self.ids.iter().enumerate() {
            let v = &self.vectors[slot * dim..(slot + 1) * dim];
            let hit = SimilarityHit {
                id,
                score: cosine_with_norms(dot(query, v), q_norm, self.norms[slot]),
            };
            if heap.len() < k {
                heap.push(Worst(hit));
            } else if rank(&hit, &heap.peek().expect("heap is full").0) == Ordering::Less {
                heap.pop();
                heap.push(Worst(hit));
            }
        }
        let mut hits: Vec<SimilarityHit> = heap.into_iter().map(|w| w.0).collect();
        hits.sort_by(rank);
        Ok(hits)
    }
}
