//! Agglomerative hierarchical clustering with single, complete and average
//! linkage on Euclidean distances.
//!
//! The implementation keeps a condensed distance matrix and applies the
//! Lance-Williams update after each merge; finding the closest pair is a
//! full scan, so the whole run is O(n^3) time and O(n^2) memory. That is
//! comfortable up to a few thousand items.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::skeleton::{JointId, Pose3D, SkeletonError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ClusterError {
    #[error("cannot cluster an empty set")]
    Empty,
    #[error("point {index} has dimension {found}, expected {expected}")]
    Dimension {
        index: usize,
        expected: usize,
        found: usize,
    },
    #[error("cluster count {k} must be in 1..={n}")]
    InvalidK { k: usize, n: usize },
    #[error("point {0} has a non-finite coordinate")]
    NonFinite(usize),
    #[error("upright filtering needs at least 3 poses, got {0}")]
    TooFewPoses(usize),
    #[error(transparent)]
    Skeleton(#[from] SkeletonError),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Linkage {
    Single,
    Complete,
    #[default]
    Average,
}

/// One dendrogram step. Clusters are named by their smallest member index;
/// `b` is absorbed into `a`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Merge {
    pub a: usize,
    pub b: usize,
    pub distance: f64,
    /// Size of the merged cluster.
    pub size: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClusterResult {
    /// Label per item, contiguous from 0 in order of first appearance.
    pub labels: Vec<usize>,
    pub merges: Vec<Merge>,
}

impl ClusterResult {
    pub fn num_clusters(&self) -> usize {
        self.labels.iter().max().map_or(0, |m| m + 1)
    }

    pub fn members(&self, label: usize) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == label)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Upper-triangle distance storage.
struct Condensed {
    n: usize,
    d: Vec<f64>,
}

impl Condensed {
    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        let (i, j) = if i < j { (i, j) } else { (j, i) };
        i * self.n - i * (i + 1) / 2 + (j - i - 1)
    }

    #[inline]
    fn get(&self, i: usize, j: usize) -> f64 {
        self.d[self.idx(i, j)]
    }

    #[inline]
    fn set(&mut self, i: usize, j: usize, v: f64) {
        let k = self.idx(i, j);
        self.d[k] = v;
    }
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Merges the closest pair of clusters until `k` remain. Ties go to the
/// lexicographically smallest `(a, b)` pair of cluster names.
pub fn agglomerative<P: AsRef<[f64]>>(points: &[P], k: usize, linkage: Linkage) -> Result<ClusterResult, ClusterError> {
    let n = points.len();
    if n == 0 {
        return Err(ClusterError::Empty);
    }
    if k == 0 || k > n {
        return Err(ClusterError::InvalidK { k, n });
    }
    let dim = points[0].as_ref().len();
    for (index, p) in points.iter().enumerate() {
        if p.as_ref().len() != dim {
            return Err(ClusterError::Dimension {
                index,
                expected: dim,
                found: p.as_ref().len(),
            });
        }
        if !p.as_ref().iter().all(|v| v.is_finite()) {
            return Err(ClusterError::NonFinite(index));
        }
    }

    let mut dist = Condensed {
        n,
        d: Vec::with_capacity(n * n.saturating_sub(1) / 2),
    };
    for i in 0..n {
        for j in (i + 1)..n {
            dist.d.push(euclidean(points[i].as_ref(), points[j].as_ref()));
        }
    }

    // owner[i] = current cluster name of item i
    let mut owner: Vec<usize> = (0..n).collect();
    let mut size = vec![1usize; n];
    let mut active: Vec<usize> = (0..n).collect();
    let mut merges = Vec::with_capacity(n - k);

    while active.len() > k {
        let mut best = (usize::MAX, usize::MAX, f64::INFINITY);
        for (ai, &a) in active.iter().enumerate() {
            for &b in &active[ai + 1..] {
                let d = dist.get(a, b);
                if d < best.2 {
                    best = (a, b, d);
                }
            }
        }
        let (a, b, d) = best;

        let (na, nb) = (size[a] as f64, size[b] as f64);
        for &m in &active {
            if m == a || m == b {
                continue;
            }
            let (dam, dbm) = (dist.get(a, m), dist.get(b, m));
            let v = match linkage {
                Linkage::Single => dam.min(dbm),
                Linkage::Complete => dam.max(dbm),
                Linkage::Average => (na * dam + nb * dbm) / (na + nb),
            };
            dist.set(a, m, v);
        }
        size[a] += size[b];
        active.retain(|&c| c != b);
        for o in owner.iter_mut() {
            if *o == b {
                *o = a;
            }
        }
        merges.push(Merge {
            a,
            b,
            distance: d,
            size: size[a],
        });
    }

    // Cluster names are smallest member indices, so sorting names gives
    // labels in order of first appearance.
    let labels = owner
        .iter()
        .map(|o| active.binary_search(o).expect("owner is an active cluster"))
        .collect();
    Ok(ClusterResult { labels, merges })
}

/// Items of the most populous cluster; ties go to the smaller label.
pub fn largest_cluster(result: &ClusterResult) -> Vec<usize> {
    let mut counts = vec![0usize; result.num_clusters()];
    for &l in &result.labels {
        counts[l] += 1;
    }
    let mut best = 0;
    for (l, &c) in counts.iter().enumerate() {
        if c > counts[best] {
            best = l;
        }
    }
    result.members(best)
}

/// Joints whose pelvis-relative coordinates drive upright filtering.
pub const UPRIGHT_FEATURE_JOINTS: [JointId; 3] = [JointId::RAnkle, JointId::LAnkle, JointId::Thorax];

/// Splits poses into three groups by feet and torso placement (average
/// linkage) and returns the indices of the largest group.
///
/// With fewer than three distinct feature vectors the cluster count drops to
/// the number of distinct vectors, so identical poses are never separated.
pub fn upright_filter(poses: &[Pose3D]) -> Result<Vec<usize>, ClusterError> {
    if poses.len() < 3 {
        return Err(ClusterError::TooFewPoses(poses.len()));
    }
    let features: Vec<Vec<f64>> = poses
        .iter()
        .map(|p| {
            let rel = p.centered()?;
            Ok(UPRIGHT_FEATURE_JOINTS
                .iter()
                .flat_map(|&j| rel.joint(j).iter().copied().collect::<Vec<_>>())
                .collect())
        })
        .collect::<Result<_, SkeletonError>>()?;
    let mut distinct: Vec<&Vec<f64>> = Vec::new();
    for f in &features {
        if !distinct.contains(&f) {
            distinct.push(f);
            if distinct.len() == 3 {
                break;
            }
        }
    }
    let result = agglomerative(&features, distinct.len().min(3), Linkage::Average)?;
    Ok(largest_cluster(&result))
}
