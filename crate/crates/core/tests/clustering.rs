mod common;

use common::{feature_matrix, gaussian_rows};
use diarkit_core::clustering::{agglomerate, auto_threshold, cut_dendrogram, relabel_by_first_appearance, ClusterConfig};
use diarkit_core::Segment;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn two_sources_give_two_clusters() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut rows = Vec::new();
    for k in 0..6 {
        rows.extend(gaussian_rows(&mut rng, 150, 4, if k % 2 == 0 { 0.0 } else { 8.0 }));
    }
    let f = feature_matrix(&rows);
    let segs: Vec<Segment> = (0..6).map(|k| Segment::new(150 * k, 150 * (k + 1), &f)).collect();
    let cfg = ClusterConfig::default();

    let (_, full) = agglomerate(&segs, &f, f64::INFINITY, &cfg).unwrap();
    assert_eq!(full.merges.len(), 5);
    let t = auto_threshold(&full);
    let by_threshold = relabel_by_first_appearance(&full.labels_at_threshold(t));
    assert_eq!(by_threshold, vec![0, 1, 0, 1, 0, 1]);

    let by_k = relabel_by_first_appearance(&cut_dendrogram(&full, 2).unwrap());
    assert_eq!(by_k, by_threshold);

    // Stopping the run at the same threshold agrees with cutting the full one.
    let (stopped, partial) = agglomerate(&segs, &f, t, &cfg).unwrap();
    assert_eq!(stopped, by_threshold);
    assert_eq!(partial.merges.len(), 4);
}

#[test]
fn merge_distances_never_decrease_here() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut rows = Vec::new();
    for mean in [0.0, 0.0, 6.0, 6.0, 12.0] {
        rows.extend(gaussian_rows(&mut rng, 120, 3, mean));
    }
    let f = feature_matrix(&rows);
    let segs: Vec<Segment> = (0..5).map(|k| Segment::new(120 * k, 120 * (k + 1), &f)).collect();
    let (_, dend) = agglomerate(&segs, &f, f64::INFINITY, &ClusterConfig::default()).unwrap();
    // Well separated groups: the within-group merges come first.
    let first_two: Vec<(usize, usize)> = dend.merges[..2].iter().map(|m| (m.cluster_a, m.cluster_b)).collect();
    assert!(first_two.contains(&(0, 1)) && first_two.contains(&(2, 3)), "{first_two:?}");
    for w in dend.merges.windows(2) {
        assert!(w[0].distance <= w[1].distance);
    }
}
