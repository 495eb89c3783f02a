//! Exact k-nearest-neighbor graphs over node signals.
//!
//! The graph is directed: row i lists i's neighbors, sorted by ascending
//! Euclidean distance with ties broken by ascending node index. At desk scale
//! a full pairwise scan is both the implementation and the obvious baseline.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use std::io::Write;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KnnGraph {
    k: usize,
    neighbors: Vec<Vec<usize>>,
}

impl KnnGraph {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn num_nodes(&self) -> usize {
        self.neighbors.len()
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    pub fn rows(&self) -> &[Vec<usize>] {
        &self.neighbors
    }

    /// One line per node: "i: j1 j2 ... jk".
    pub fn write_debug<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for (i, row) in self.neighbors.iter().enumerate() {
            write!(w, "{i}:")?;
            for j in row {
                write!(w, " {j}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

/// Exact Euclidean kNN over N×D row-major coordinates.
pub fn knn_graph<F: Scalar>(points: &[F], n: usize, dim: usize, k: usize) -> Result<KnnGraph> {
    if n == 0 || k == 0 || k > n.saturating_sub(1) {
        return Err(Error::InvalidArgument(format!("knn_graph: k={k} out of range for n={n}")));
    }
    if points.len() != n * dim {
        return Err(Error::InvalidArgument(format!(
            "knn_graph: expected {} coordinates, got {}",
            n * dim,
            points.len()
        )));
    }
    if points.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { context: "knn_graph input coordinates".into() });
    }
    let mut neighbors = Vec::with_capacity(n);
    let mut cand: Vec<(F, usize)> = Vec::with_capacity(n - 1);
    for i in 0..n {
        cand.clear();
        let pi = &points[i * dim..(i + 1) * dim];
        for j in 0..n {
            if j == i {
                continue;
            }
            let pj = &points[j * dim..(j + 1) * dim];
            let mut d2 = F::zero();
            for (a, b) in pi.iter().zip(pj) {
                let d = *a - *b;
                d2 = d2 + d * d;
            }
            cand.push((d2, j));
        }
        cand.select_nth_unstable_by(k - 1, |a, b| {
            a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1))
        });
        let mut head: Vec<(F, usize)> = cand[..k].to_vec();
        head.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        neighbors.push(head.into_iter().map(|(_, j)| j).collect());
    }
    Ok(KnnGraph { k, neighbors })
}

/// Rebuild on transformed coordinates; an independent graph object.
pub fn rebuild_after_transform<F: Scalar>(
    coords: &[F],
    n: usize,
    dim: usize,
    k: usize,
) -> Result<KnnGraph> {
    knn_graph(coords, n, dim, k)
}
