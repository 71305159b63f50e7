//! Bottom-up clustering of segments into speakers.
//!
//! Every segment starts as its own cluster with a GMM fitted to its frames.
//! The closest pair under the configured [`ClusterDistance`] is merged and its model is refitted
//! on the pooled frames, until the closest pair is farther apart than the
//! stopping threshold.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::gmm::{derive_seed, select_n_components, Criterion, FitConfig, GaussianMixture};
use crate::matrix::Matrix;
use crate::segmentation::Segment;

/// Distance between two cluster models.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ClusterDistance {
    /// Symmetric KL between the single Gaussians with each mixture's
    /// overall mean and variance. Insensitive to how a model splits its mass.
    #[default]
    MomentMatched,
    /// Weighted symmetric KL over greedily matched component pairs.
    MatchedPair,
}

impl ClusterDistance {
    pub fn eval(self, a: &GaussianMixture, b: &GaussianMixture) -> Result<f64> {
        match self {
            ClusterDistance::MomentMatched => moment_matched_distance(a, b),
            ClusterDistance::MatchedPair => gmm_distance(a, b),
        }
    }
}

impl FromStr for ClusterDistance {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "moment_matched" => Ok(ClusterDistance::MomentMatched),
            "matched_pair" => Ok(ClusterDistance::MatchedPair),
            other => Err(Error::invalid(format!(
                "unknown cluster distance '{other}' (expected moment_matched or matched_pair)"
            ))),
        }
    }
}

impl fmt::Display for ClusterDistance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ClusterDistance::MomentMatched => "moment_matched",
            ClusterDistance::MatchedPair => "matched_pair",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClusterConfig {
    /// Upper bound on mixture components per model.
    pub max_components: usize,
    /// One extra component is allowed per this many frames.
    pub frames_per_component: usize,
    pub distance: ClusterDistance,
    pub fit: FitConfig,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self {
            max_components: 4,
            frames_per_component: 50,
            distance: ClusterDistance::default(),
            // One start per fit: this runs for every segment and every merge.
            fit: FitConfig {
                n_init: 1,
                ..FitConfig::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cluster {
    pub id: usize,
    pub member_segments: Vec<usize>,
    pub model: GaussianMixture,
    pub n_frames: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Merge {
    pub cluster_a: usize,
    pub cluster_b: usize,
    pub distance: f64,
    pub new_id: usize,
}

/// Merge history. Leaves are ids `0..leaf_count`; merge `i` creates id `leaf_count + i`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dendrogram {
    pub merges: Vec<Merge>,
    pub leaf_count: usize,
}

impl Dendrogram {
    /// CSV dump: `step,cluster_a,cluster_b,distance,new_id`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "step,cluster_a,cluster_b,distance,new_id")?;
        for (step, m) in self.merges.iter().enumerate() {
            writeln!(
                out,
                "{step},{},{},{},{}",
                m.cluster_a, m.cluster_b, m.distance, m.new_id
            )?;
        }
        Ok(())
    }

    /// Leaf labels after replaying the first `n_merges` merges.
    fn replay(&self, n_merges: usize) -> Vec<usize> {
        let mut owner: Vec<usize> = (0..self.leaf_count).collect();
        for m in &self.merges[..n_merges] {
            for o in owner.iter_mut() {
                if *o == m.cluster_a || *o == m.cluster_b {
                    *o = m.new_id;
                }
            }
        }
        relabel_by_first_appearance(&owner)
    }

    /// Labels of a threshold-stopped run: merges are replayed until the
    /// first one farther than `threshold`.
    pub fn labels_at_threshold(&self, threshold: f64) -> Vec<usize> {
        let n = self
            .merges
            .iter()
            .position(|m| m.distance > threshold)
            .unwrap_or(self.merges.len());
        self.replay(n)
    }
}

/// Map arbitrary cluster ids to `0, 1, ...` in order of first appearance.
pub fn relabel_by_first_appearance(ids: &[usize]) -> Vec<usize> {
    let mut seen: Vec<usize> = Vec::new();
    ids.iter()
        .map(|id| match seen.iter().position(|s| s == id) {
            Some(p) => p,
            None => {
                seen.push(*id);
                seen.len() - 1
            }
        })
        .collect()
}

/// Fit a GMM to a block of frames, choosing the component count by BIC over
/// `1..=min(max_components, n / frames_per_component)`.
pub fn fit_frames_model(x: &Matrix, cfg: &ClusterConfig, seed: u64) -> Result<GaussianMixture> {
    if x.is_empty() {
        return Err(Error::EmptyInput("cannot model an empty block of frames"));
    }
    let by_size = x.rows() / cfg.frames_per_component.max(1);
    let hi = cfg.max_components.min(by_size).max(1);
    let fit = FitConfig { seed, ..cfg.fit };
    Ok(select_n_components(x, 1, hi, Criterion::Bic, &fit)?.best_model)
}

/// Model for one segment; short-flagged segments get a single Gaussian.
pub fn fit_segment_model(
    seg: &Segment,
    features: &FeatureMatrix,
    cfg: &ClusterConfig,
) -> Result<GaussianMixture> {
    let x = seg.rows(features);
    let cfg = if seg.short {
        ClusterConfig {
            max_components: 1,
            ..*cfg
        }
    } else {
        *cfg
    };
    fit_frames_model(&x, &cfg, derive_seed(cfg.fit.seed, seg.start_frame as u64))
}

/// Symmetric KL divergence between two diagonal Gaussians.
pub fn kl_symmetric(mean_p: &[f64], var_p: &[f64], mean_q: &[f64], var_q: &[f64]) -> f64 {
    let mut total = 0.0;
    for i in 0..mean_p.len() {
        let (vp, vq) = (var_p[i], var_q[i]);
        let diff = mean_p[i] - mean_q[i];
        total += 0.5 * (vp / vq + vq / vp - 2.0 + diff * diff * (1.0 / vp + 1.0 / vq));
    }
    total
}

/// Greedy matching driven by `lead`: its components, heaviest first, each
/// take the closest unmatched component of `other`.
fn matched_divergence(lead: &GaussianMixture, other: &GaussianMixture) -> f64 {
    let mut order: Vec<usize> = (0..lead.n_components()).collect();
    order.sort_by(|&i, &j| lead.weights()[j].total_cmp(&lead.weights()[i]).then(i.cmp(&j)));
    let mut used = vec![false; other.n_components()];
    let (mut num, mut den, mut plain, mut pairs) = (0.0, 0.0, 0.0, 0usize);
    for i in order {
        let mut best: Option<(usize, f64)> = None;
        for j in (0..other.n_components()).filter(|&j| !used[j]) {
            let kl = kl_symmetric(
                lead.means().row(i),
                lead.variances().row(i),
                other.means().row(j),
                other.variances().row(j),
            );
            if best.map_or(true, |(_, b)| kl < b) {
                best = Some((j, kl));
            }
        }
        let Some((j, kl)) = best else { break };
        used[j] = true;
        let w = lead.weights()[i].min(other.weights()[j]);
        num += w * kl;
        den += w;
        plain += kl;
        pairs += 1;
    }
    if den > 0.0 {
        num / den
    } else {
        plain / pairs as f64
    }
}

/// Weighted symmetric KL over greedily matched component pairs.
///
/// The model with more components drives the matching; with equal counts
/// both directions are averaged so the result is symmetric.
pub fn gmm_distance(a: &GaussianMixture, b: &GaussianMixture) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimMismatch {
            expected: a.dim(),
            actual: b.dim(),
        });
    }
    Ok(match a.n_components().cmp(&b.n_components()) {
        std::cmp::Ordering::Greater => matched_divergence(a, b),
        std::cmp::Ordering::Less => matched_divergence(b, a),
        std::cmp::Ordering::Equal => 0.5 * (matched_divergence(a, b) + matched_divergence(b, a)),
    })
}

/// Overall mean and per-dimension variance of a mixture.
pub fn moment_match(g: &GaussianMixture) -> (Vec<f64>, Vec<f64>) {
    let d = g.dim();
    let mut mean = vec![0.0; d];
    for (w, mu) in g.weights().iter().zip(g.means().iter_rows()) {
        for (m, x) in mean.iter_mut().zip(mu) {
            *m += w * x;
        }
    }
    let mut var = vec![0.0; d];
    for k in 0..g.n_components() {
        let w = g.weights()[k];
        for i in 0..d {
            let dev = g.means().row(k)[i] - mean[i];
            var[i] += w * (g.variances().row(k)[i] + dev * dev);
        }
    }
    (mean, var)
}

/// Symmetric KL between the moment-matched Gaussians of two mixtures.
pub fn moment_matched_distance(a: &GaussianMixture, b: &GaussianMixture) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimMismatch {
            expected: a.dim(),
            actual: b.dim(),
        });
    }
    let (ma, va) = moment_match(a);
    let (mb, vb) = moment_match(b);
    Ok(kl_symmetric(&ma, &va, &mb, &vb))
}

fn pooled_rows(members: &[usize], segments: &[Segment], features: &FeatureMatrix) -> Result<Matrix> {
    let mut pooled = Matrix::zeros(0, features.dim());
    for &s in members {
        pooled = pooled.vstack(&segments[s].rows(features))?;
    }
    Ok(pooled)
}

/// Agglomerative clustering stopped once the closest pair is farther than
/// `threshold`. Returns per-segment labels (numbered by first appearance)
/// and the merge history.
pub fn agglomerate(
    segments: &[Segment],
    features: &FeatureMatrix,
    threshold: f64,
    cfg: &ClusterConfig,
) -> Result<(Vec<usize>, Dendrogram)> {
    let (clusters, dendrogram) = agglomerate_clusters(segments, features, threshold, cfg)?;
    let mut owner = vec![0; segments.len()];
    for c in &clusters {
        for &s in &c.member_segments {
            owner[s] = c.id;
        }
    }
    Ok((relabel_by_first_appearance(&owner), dendrogram))
}

/// Like [`agglomerate`] but returns the surviving clusters.
pub fn agglomerate_clusters(
    segments: &[Segment],
    features: &FeatureMatrix,
    threshold: f64,
    cfg: &ClusterConfig,
) -> Result<(Vec<Cluster>, Dendrogram)> {
    if segments.is_empty() {
        return Err(Error::EmptyInput("no segments to cluster"));
    }
    if !(threshold >= 0.0) {
        return Err(Error::invalid(format!("threshold {threshold} must be nonnegative")));
    }
    if let Some(s) = segments.iter().find(|s| s.is_empty() || s.end_frame > features.n_frames()) {
        return Err(Error::invalid(format!("segment {:?} is empty or out of range", s.frames())));
    }

    let models: Vec<GaussianMixture> = segments
        .par_iter()
        .map(|s| fit_segment_model(s, features, cfg))
        .collect::<Result<_>>()?;
    let mut live: BTreeMap<usize, Cluster> = models
        .into_iter()
        .enumerate()
        .map(|(i, model)| {
            (
                i,
                Cluster {
                    id: i,
                    member_segments: vec![i],
                    model,
                    n_frames: segments[i].len(),
                },
            )
        })
        .collect();

    let ids: Vec<usize> = live.keys().copied().collect();
    let pairs: Vec<(usize, usize)> = ids
        .iter()
        .enumerate()
        .flat_map(|(k, &a)| ids[k + 1..].iter().map(move |&b| (a, b)))
        .collect();
    let dists: Vec<f64> = pairs
        .par_iter()
        .map(|&(a, b)| cfg.distance.eval(&live[&a].model, &live[&b].model))
        .collect::<Result<_>>()?;
    let mut distance: BTreeMap<(usize, usize), f64> = pairs.into_iter().zip(dists).collect();

    let mut dendrogram = Dendrogram {
        merges: Vec::new(),
        leaf_count: segments.len(),
    };
    while live.len() > 1 {
        // Strict comparison in key order breaks ties toward the smallest ids.
        let (&(a, b), &d) = distance
            .iter()
            .fold(None, |best: Option<(&(usize, usize), &f64)>, cur| match best {
                Some(bst) if *cur.1 >= *bst.1 => Some(bst),
                _ => Some(cur),
            })
            .expect("at least one live pair");
        if d > threshold {
            break;
        }
        let new_id = segments.len() + dendrogram.merges.len();
        let ca = live.remove(&a).expect("live cluster");
        let cb = live.remove(&b).expect("live cluster");
        distance.retain(|&(x, y), _| x != a && x != b && y != a && y != b);

        let mut members = ca.member_segments;
        members.extend(cb.member_segments);
        members.sort_unstable();
        let pooled = pooled_rows(&members, segments, features)?;
        let model = fit_frames_model(&pooled, cfg, derive_seed(cfg.fit.seed, new_id as u64))?;
        let merged = Cluster {
            id: new_id,
            member_segments: members,
            model,
            n_frames: pooled.rows(),
        };
        let others: Vec<usize> = live.keys().copied().collect();
        let fresh: Vec<f64> = others
            .par_iter()
            .map(|o| cfg.distance.eval(&live[o].model, &merged.model))
            .collect::<Result<_>>()?;
        for (o, dist) in others.into_iter().zip(fresh) {
            distance.insert((o, new_id), dist);
        }
        live.insert(new_id, merged);
        dendrogram.merges.push(Merge {
            cluster_a: a,
            cluster_b: b,
            distance: d,
            new_id,
        });
    }
    Ok((live.into_values().collect(), dendrogram))
}

/// Labels with exactly `k` clusters, by replaying the first merges.
pub fn cut_dendrogram(dend: &Dendrogram, k: usize) -> Result<Vec<usize>> {
    let reachable = dend.leaf_count - dend.merges.len();
    if k == 0 || k > dend.leaf_count || k < reachable {
        return Err(Error::invalid(format!(
            "cannot cut {} leaves with {} merges into {k} clusters",
            dend.leaf_count,
            dend.merges.len()
        )));
    }
    Ok(dend.replay(dend.leaf_count - k))
}

/// Threshold in the middle of the widest gap between consecutive sorted
/// merge distances of a full run. With fewer than two merges there is no
/// gap, and everything is merged.
pub fn auto_threshold(dend: &Dendrogram) -> f64 {
    let mut d: Vec<f64> = dend.merges.iter().map(|m| m.distance).collect();
    d.sort_by(f64::total_cmp);
    if d.len() < 2 {
        return f64::INFINITY;
    }
    let (i, _) = d
        .windows(2)
        .map(|w| w[1] - w[0])
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, g)| if g > best.1 { (i, g) } else { best });
    0.5 * (d[i] + d[i + 1])
}
