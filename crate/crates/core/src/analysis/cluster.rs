//! Clusters of locally 1/3-ordered triangles in z-basis snapshots.
//!
//! A triangle is ordered when exactly one of its three sites is down
//! (Rydberg). Ordered triangles sharing an edge belong to the same cluster.

use std::collections::BTreeMap;

use petgraph::unionfind::UnionFind;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::lattice::Lattice;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterStats {
    /// Ordered triangles per cluster, pooled over snapshots; 0 when no
    /// triangle is ordered.
    pub mean_size: f64,
    /// Cluster size to number of clusters.
    pub histogram: BTreeMap<usize, usize>,
    pub n_snapshots: usize,
}

impl ClusterStats {
    pub fn n_clusters(&self) -> usize {
        self.histogram.values().sum()
    }
}

/// Triangles whose sites all lie in `sites` (every triangle when `None`),
/// with the pairs of them that share an edge.
pub struct TriangleGraph {
    pub triangles: Vec<[usize; 3]>,
    pub edges: Vec<(usize, usize)>,
}

impl TriangleGraph {
    pub fn new(lat: &Lattice, sites: Option<&[usize]>) -> Self {
        let keep = |t: &[usize; 3]| sites.is_none_or(|s| t.iter().all(|i| s.contains(i)));
        let triangles: Vec<[usize; 3]> = lat.triangles().into_iter().filter(keep).collect();
        let mut by_edge: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
        for (k, t) in triangles.iter().enumerate() {
            for (a, b) in [(t[0], t[1]), (t[1], t[2]), (t[0], t[2])] {
                by_edge.entry((a.min(b), a.max(b))).or_default().push(k);
            }
        }
        let mut edges = Vec::new();
        for ks in by_edge.values() {
            for x in 0..ks.len() {
                for y in x + 1..ks.len() {
                    edges.push((ks[x], ks[y]));
                }
            }
        }
        edges.sort_unstable();
        edges.dedup();
        TriangleGraph { triangles, edges }
    }

    /// Sizes of the ordered clusters of one snapshot (`rydberg[i]` = site
    /// `i` is down).
    pub fn cluster_sizes(&self, rydberg: &[bool]) -> Vec<usize> {
        let ordered: Vec<bool> =
            self.triangles.iter().map(|t| t.iter().filter(|&&i| rydberg[i]).count() == 1).collect();
        let mut uf = UnionFind::<usize>::new(self.triangles.len());
        for &(a, b) in &self.edges {
            if ordered[a] && ordered[b] {
                uf.union(a, b);
            }
        }
        let mut sizes: BTreeMap<usize, usize> = BTreeMap::new();
        for k in (0..self.triangles.len()).filter(|&k| ordered[k]) {
            *sizes.entry(uf.find(k)).or_default() += 1;
        }
        sizes.into_values().collect()
    }
}

pub fn cluster_stats(snapshots: &[Vec<bool>], lat: &Lattice, sites: Option<&[usize]>) -> ClusterStats {
    let graph = TriangleGraph::new(lat, sites);
    let histogram = snapshots
        .par_iter()
        .map(|s| {
            let mut h = BTreeMap::new();
            for size in graph.cluster_sizes(s) {
                *h.entry(size).or_insert(0usize) += 1;
            }
            h
        })
        .reduce(BTreeMap::new, |mut a, b| {
            for (k, v) in b {
                *a.entry(k).or_insert(0) += v;
            }
            a
        });
    let clusters: usize = histogram.values().sum();
    let triangles: usize = histogram.iter().map(|(k, v)| k * v).sum();
    let mean_size = if clusters == 0 { 0.0 } else { triangles as f64 / clusters as f64 };
    ClusterStats { mean_size, histogram, n_snapshots: snapshots.len() }
}
