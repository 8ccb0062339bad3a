//! Density-based clustering over 2D points.
//!
//! Classic DBSCAN semantics: a point is core when at least `min_pts` points
//! (itself included) lie within Euclidean distance `eps`; clusters are the
//! density-connected components of core points plus the border points they
//! reach; everything else is noise (label -1).
//!
//! Neighbor queries go through an eps-sized grid hash, so clustering the
//! supra-level set of an attention map is linear in the number of points.
//! Labels are canonicalized to ascend with the lowest member index, which
//! makes the output independent of the internal expansion order.

use std::collections::HashMap;

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterResult {
    /// Per-point cluster id, dense from 0; noise is -1.
    pub labels: Vec<i32>,
    pub cluster_count: usize,
}

pub fn dbscan(points: &[(f64, f64)], eps: f64, min_pts: usize) -> ClusterResult {
    assert!(eps > 0.0, "eps must be positive");
    assert!(min_pts >= 1, "min_pts must be at least 1");
    let n = points.len();
    if n == 0 {
        return ClusterResult {
            labels: Vec::new(),
            cluster_count: 0,
        };
    }

    let grid = GridIndex::build(points, eps);
    let eps2 = eps * eps;

    const UNVISITED: i32 = -2;
    let mut labels = vec![UNVISITED; n];
    let mut cluster = 0i32;
    let mut queue: Vec<usize> = Vec::new();

    for seed in 0..n {
        if labels[seed] != UNVISITED {
            continue;
        }
        let neighbors = grid.neighbors(points, seed, eps2);
        if neighbors.len() < min_pts {
            labels[seed] = -1;
            continue;
        }
        labels[seed] = cluster;
        queue.clear();
        queue.extend(neighbors);
        let mut head = 0;
        while head < queue.len() {
            let p = queue[head];
            head += 1;
            if labels[p] == -1 {
                labels[p] = cluster; // border point claimed by this cluster
            }
            if labels[p] != UNVISITED {
                continue;
            }
            labels[p] = cluster;
            let nn = grid.neighbors(points, p, eps2);
            if nn.len() >= min_pts {
                queue.extend(nn);
            }
        }
        cluster += 1;
    }

    canonicalize(&mut labels, cluster as usize);
    ClusterResult {
        labels,
        cluster_count: cluster as usize,
    }
}

/// Relabels clusters so that ids ascend with the lowest member index.
fn canonicalize(labels: &mut [i32], cluster_count: usize) {
    let mut remap = vec![-1i32; cluster_count];
    let mut next = 0i32;
    for &l in labels.iter() {
        if l >= 0 && remap[l as usize] < 0 {
            remap[l as usize] = next;
            next += 1;
        }
    }
    for l in labels.iter_mut() {
        if *l >= 0 {
            *l = remap[*l as usize];
        }
    }
}

struct GridIndex {
    cells: HashMap<(i64, i64), Vec<usize>>,
    inv_eps: f64,
}

impl GridIndex {
    fn build(points: &[(f64, f64)], eps: f64) -> Self {
        let inv_eps = 1.0 / eps;
        let mut cells: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
        for (i, &(y, x)) in points.iter().enumerate() {
            cells.entry(cell_of(y, x, inv_eps)).or_default().push(i);
        }
        Self { cells, inv_eps }
    }

    fn neighbors(&self, points: &[(f64, f64)], idx: usize, eps2: f64) -> Vec<usize> {
        let (y, x) = points[idx];
        let (cy, cx) = cell_of(y, x, self.inv_eps);
        let mut out = Vec::new();
        for dy in -1..=1 {
            for dx in -1..=1 {
                if let Some(bucket) = self.cells.get(&(cy + dy, cx + dx)) {
                    for &j in bucket {
                        let (py, px) = points[j];
                        let d2 = (py - y) * (py - y) + (px - x) * (px - x);
                        if d2 <= eps2 {
                            out.push(j);
                        }
                    }
                }
            }
        }
        out
    }
}

#[inline]
fn cell_of(y: f64, x: f64, inv_eps: f64) -> (i64, i64) {
    ((y * inv_eps).floor() as i64, (x * inv_eps).floor() as i64)
}

/// Brute-force reference: O(n^2) density reachability with no index.
/// Kept for tests and the acceptance suite; intentionally shares no code
/// with [`dbscan`] beyond the label canonicalization contract.
pub fn dbscan_reference(points: &[(f64, f64)], eps: f64, min_pts: usize) -> ClusterResult {
    let n = points.len();
    let eps2 = eps * eps;
    let neighbors: Vec<Vec<usize>> = (0..n)
        .map(|i| {
            (0..n)
                .filter(|&j| {
                    let dy = points[i].0 - points[j].0;
                    let dx = points[i].1 - points[j].1;
                    dy * dy + dx * dx <= eps2
                })
                .collect()
        })
        .collect();
    let core: Vec<bool> = neighbors.iter().map(|nn| nn.len() >= min_pts).collect();

    // Union of core points within eps forms the cluster skeletons.
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], i: usize) -> usize {
        let mut root = i;
        while parent[root] != root {
            root = parent[root];
        }
        let mut cur = i;
        while parent[cur] != root {
            let next = parent[cur];
            parent[cur] = root;
            cur = next;
        }
        root
    }
    for i in 0..n {
        if !core[i] {
            continue;
        }
        for &j in &neighbors[i] {
            if core[j] {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
    }

    let mut labels = vec![-1i32; n];
    let mut root_to_label: HashMap<usize, i32> = HashMap::new();
    let mut count = 0i32;
    for i in 0..n {
        if core[i] {
            let root = find(&mut parent, i);
            let label = *root_to_label.entry(root).or_insert_with(|| {
                let l = count;
                count += 1;
                l
            });
            labels[i] = label;
        }
    }
    // Border points attach to the first expanding cluster, i.e. the one whose
    // earliest core seed comes first in input order; with cluster labels
    // assigned in first-core order that is simply the lowest-label neighbor.
    for i in 0..n {
        if core[i] {
            continue;
        }
        let best = neighbors[i]
            .iter()
            .filter(|&&j| core[j])
            .map(|&j| labels[j])
            .min();
        if let Some(l) = best {
            labels[i] = l;
        }
    }
    canonicalize(&mut labels, count as usize);
    ClusterResult {
        labels,
        cluster_count: count as usize,
    }
}
