use serde::{Deserialize, Serialize};

/// Unordered pair `{i, j}` with `i < j`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Edge(pub usize, pub usize);

impl Edge {
    /// Normalizes the pair so that the smaller index comes first.
    ///
    /// # Panics
    /// If `a == b`.
    pub fn new(a: usize, b: usize) -> Self {
        assert_ne!(a, b, "an edge needs two distinct endpoints");
        if a < b {
            Edge(a, b)
        } else {
            Edge(b, a)
        }
    }

    /// Position in the row-major enumeration of the strict upper triangle of a `p × p` matrix.
    pub fn index(&self, p: usize) -> usize {
        let Edge(i, j) = *self;
        i * (2 * p - i - 1) / 2 + (j - i - 1)
    }
}

/// `p (p − 1) / 2`.
pub fn universe_size(p: usize) -> usize {
    p * p.saturating_sub(1) / 2
}

/// All edges of a `p`-node graph in [`Edge::index`] order.
pub fn all_edges(p: usize) -> impl Iterator<Item = Edge> {
    (0..p).flat_map(move |i| ((i + 1)..p).map(move |j| Edge(i, j)))
}
