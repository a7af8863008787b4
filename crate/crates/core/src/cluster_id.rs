//! Cross-sample isotopic cluster identification.
//!
//! Apex positions from every sample are pooled. Two positions are related
//! when they coincide up to `delta` after shifting one of them by -1, 0 or
//! +1 Da; clusters are the connected components of that relation. Inside a
//! cluster a finer relation (`|x - x'| < delta_prime`) groups positions that
//! represent the same isotopic peak, whose mean becomes the consensus
//! position.

use std::collections::BTreeSet;

use log::{debug, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::union_find::DisjointSet;

pub const DEFAULT_DELTA: f64 = 0.08;
pub const DEFAULT_DELTA_PRIME: f64 = 0.1;
pub const DEFAULT_MAX_PEAKS: usize = 8;
/// Consensus positions closer than this are merged.
pub const MIN_CONSENSUS_SEPARATION: f64 = 0.5;
/// Accepted spacing between consecutive consensus positions of one cluster.
pub const SPACING_WINDOW: (f64, f64) = (0.9, 1.1);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PooledPeak {
    pub sample_id: String,
    pub apex_mz: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsotopicCluster {
    pub cluster_id: u32,
    /// Consensus m/z of each isotopic peak, strictly increasing.
    pub positions: Vec<f64>,
    pub member_count: usize,
    /// Number of distinct samples contributing to each position.
    pub support: Vec<usize>,
}

impl IsotopicCluster {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PruneMode {
    /// Remove when too many peaks AND more than one local maximum.
    #[default]
    Conjunctive,
    /// Remove when too many peaks OR more than one local maximum.
    Disjunctive,
}

impl std::str::FromStr for PruneMode {
    type Err = crate::Error;

    fn from_str(s: &str) -> crate::Result<Self> {
        match s {
            "conjunctive" | "and" => Ok(PruneMode::Conjunctive),
            "disjunctive" | "or" => Ok(PruneMode::Disjunctive),
            other => Err(crate::Error::Config(format!(
                "unknown prune mode '{other}' (allowed: conjunctive, disjunctive)"
            ))),
        }
    }
}

impl std::fmt::Display for PruneMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            PruneMode::Conjunctive => "conjunctive",
            PruneMode::Disjunctive => "disjunctive",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterParams {
    pub delta: f64,
    pub delta_prime: f64,
    pub max_peaks: usize,
    #[serde(default)]
    pub prune_mode: PruneMode,
}

impl Default for ClusterParams {
    fn default() -> Self {
        Self {
            delta: DEFAULT_DELTA,
            delta_prime: DEFAULT_DELTA_PRIME,
            max_peaks: DEFAULT_MAX_PEAKS,
            prune_mode: PruneMode::Conjunctive,
        }
    }
}

/// The basic relation between two pooled positions.
pub fn isotope_related(a: f64, b: f64, delta: f64) -> bool {
    [-1.0, 0.0, 1.0].iter().any(|k| (a - (b - k)).abs() < delta)
}

/// Partitions the pool into connected components of [`isotope_related`].
///
/// Each component lists indices into `pool`, ordered by m/z (ties by
/// index); components are ordered by their lowest m/z.
pub fn build_clusters(pool: &[PooledPeak], delta: f64) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..pool.len()).collect();
    order.sort_by(|&a, &b| pool[a].apex_mz.total_cmp(&pool[b].apex_mz).then(a.cmp(&b)));
    let x: Vec<f64> = order.iter().map(|&k| pool[k].apex_mz).collect();

    let mut ds = DisjointSet::new(x.len());
    // slack so the window never cuts a pair the relation accepts
    let window = 1.0 + delta + 1e-9;
    for i in 0..x.len() {
        for j in i + 1..x.len() {
            if x[j] - x[i] >= window {
                break;
            }
            if isotope_related(x[i], x[j], delta) {
                ds.union(i, j);
            }
        }
    }
    ds.groups()
        .into_iter()
        .map(|g| g.into_iter().map(|k| order[k]).collect())
        .collect()
}

/// One group of pooled positions sharing a consensus peak.
#[derive(Debug, Clone, PartialEq)]
pub struct SubCluster {
    pub consensus_mz: f64,
    /// Indices into the slice handed to [`split_subclusters`].
    pub members: Vec<usize>,
}

/// Splits one cluster's positions into connected components of
/// `|x - x'| < delta_prime` and returns their means in ascending order.
///
/// Consensus positions closer than 0.5 Da are merged with a warning.
pub fn split_subclusters(mz: &[f64], delta_prime: f64) -> Vec<SubCluster> {
    let mut order: Vec<usize> = (0..mz.len()).collect();
    order.sort_by(|&a, &b| mz[a].total_cmp(&mz[b]).then(a.cmp(&b)));

    // in one dimension the components are runs with consecutive gaps < delta_prime
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for (pos, &k) in order.iter().enumerate() {
        let chained = pos > 0 && (mz[k] - mz[order[pos - 1]]).abs() < delta_prime;
        if chained {
            groups.last_mut().expect("non-empty").push(k);
        } else {
            groups.push(vec![k]);
        }
    }

    let mean_of = |g: &[usize]| g.iter().map(|&k| mz[k]).sum::<f64>() / g.len() as f64;
    let mut subs: Vec<SubCluster> = groups
        .into_iter()
        .map(|members| SubCluster {
            consensus_mz: mean_of(&members),
            members,
        })
        .collect();

    let mut j = 1;
    while j < subs.len() {
        let gap = subs[j].consensus_mz - subs[j - 1].consensus_mz;
        if gap < MIN_CONSENSUS_SEPARATION {
            warn!(
                "consensus positions {:.4} and {:.4} are {gap:.4} Da apart; merging",
                subs[j - 1].consensus_mz,
                subs[j].consensus_mz
            );
            let taken = subs.remove(j);
            let prev = &mut subs[j - 1];
            prev.members.extend(taken.members);
            prev.consensus_mz = mean_of(&prev.members);
            j = j.max(2) - 1;
        } else {
            j += 1;
        }
    }
    subs
}

/// Full clustering step: components, sub-cluster consensus, and fission
/// wherever consecutive consensus positions are not about 1 Da apart.
///
/// Cluster ids are assigned from 1 in order of the first consensus position.
pub fn identify_clusters(pool: &[PooledPeak], params: &ClusterParams) -> Vec<IsotopicCluster> {
    let components = build_clusters(pool, params.delta);
    let pieces: Vec<Vec<(f64, usize, usize)>> = components
        .par_iter()
        .map(|component| {
            let mz: Vec<f64> = component.iter().map(|&k| pool[k].apex_mz).collect();
            split_subclusters(&mz, params.delta_prime)
                .into_iter()
                .map(|sub| {
                    let samples: BTreeSet<&str> = sub
                        .members
                        .iter()
                        .map(|&m| pool[component[m]].sample_id.as_str())
                        .collect();
                    (sub.consensus_mz, sub.members.len(), samples.len())
                })
                .collect()
        })
        .collect();

    let mut clusters = Vec::new();
    for positions in pieces {
        let mut current: Vec<(f64, usize, usize)> = Vec::new();
        for p in positions {
            if let Some(last) = current.last() {
                let gap = p.0 - last.0;
                if !(SPACING_WINDOW.0..=SPACING_WINDOW.1).contains(&gap) {
                    debug!("spacing {gap:.4} Da at {:.4} outside [0.9, 1.1]; splitting cluster", p.0);
                    clusters.push(std::mem::take(&mut current));
                }
            }
            current.push(p);
        }
        if !current.is_empty() {
            clusters.push(current);
        }
    }
    clusters.sort_by(|a, b| a[0].0.total_cmp(&b[0].0));
    clusters
        .into_iter()
        .enumerate()
        .map(|(q, peaks)| IsotopicCluster {
            cluster_id: q as u32 + 1,
            positions: peaks.iter().map(|p| p.0).collect(),
            member_count: peaks.iter().map(|p| p.1).sum(),
            support: peaks.iter().map(|p| p.2).collect(),
        })
        .collect()
}

/// Strict local maxima of a pattern; an endpoint counts when it exceeds its
/// single neighbour.
pub fn count_local_maxima(pattern: &[f64]) -> usize {
    let n = pattern.len();
    match n {
        0 => 0,
        1 => 1,
        _ => (0..n)
            .filter(|&j| {
                let left = j == 0 || pattern[j] > pattern[j - 1];
                let right = j + 1 == n || pattern[j] > pattern[j + 1];
                left && right
            })
            .count(),
    }
}

/// Removes clusters with fewer than two peaks, and clusters that look like
/// joined isotope distributions: more than `max_peaks` peaks and more than
/// one local maximum of the typical (mean log intensity) pattern.
///
/// `typical_patterns[q]` belongs to `clusters[q]`.
pub fn prune_clusters(
    clusters: &[IsotopicCluster],
    max_peaks: usize,
    typical_patterns: &[Vec<f64>],
    mode: PruneMode,
) -> Vec<IsotopicCluster> {
    clusters
        .iter()
        .zip(typical_patterns)
        .filter(|(c, pattern)| {
            if c.len() < 2 {
                return false;
            }
            let too_long = c.len() > max_peaks;
            let multimodal = count_local_maxima(pattern) > 1;
            let remove = match mode {
                PruneMode::Conjunctive => too_long && multimodal,
                PruneMode::Disjunctive => too_long || multimodal,
            };
            if remove {
                debug!("pruning cluster {} ({} peaks)", c.cluster_id, c.len());
            }
            !remove
        })
        .map(|(c, _)| c.clone())
        .collect()
}
