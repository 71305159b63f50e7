mod common;

use common::{feature_matrix, gaussian_rows};
use diarkit_core::segmentation::{detect_change_points, refine_boundaries};
use diarkit_core::{Segment, SegmentationConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn single_speaker_is_one_segment() {
    for seed in 0..5 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f = feature_matrix(&gaussian_rows(&mut rng, 800, 4, 0.0));
        let segs = detect_change_points(&f, &[0..800], &SegmentationConfig::default()).unwrap();
        assert_eq!(segs.len(), 1, "seed {seed}: {segs:?}");
        assert_eq!(segs[0].frames(), 0..800);
    }
}

#[test]
fn strong_change_is_found_near_truth() {
    for seed in 0..5 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rows = gaussian_rows(&mut rng, 500, 4, 0.0);
        rows.extend(gaussian_rows(&mut rng, 500, 4, 10.0));
        let f = feature_matrix(&rows);
        let cfg = SegmentationConfig::default();
        let segs = detect_change_points(&f, &[0..1000], &cfg).unwrap();
        let segs = refine_boundaries(&segs, &f, &cfg).unwrap();
        assert_eq!(segs.len(), 2, "seed {seed}: {segs:?}");
        assert!(segs[1].start_frame.abs_diff(500) <= 25, "seed {seed}: {segs:?}");
    }
}

#[test]
fn refinement_pulls_coarse_boundary_back() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut rows = gaussian_rows(&mut rng, 500, 4, 0.0);
    rows.extend(gaussian_rows(&mut rng, 500, 4, 10.0));
    let f = feature_matrix(&rows);
    let coarse = vec![Segment::new(0, 492, &f), Segment::new(492, 1000, &f)];
    let refined = refine_boundaries(&coarse, &f, &SegmentationConfig::default()).unwrap();
    assert_eq!(refined.len(), 2);
    assert!(refined[1].start_frame.abs_diff(500) <= 3, "{refined:?}");
    assert_eq!(refined[0].end_frame, refined[1].start_frame);
}

#[test]
fn spurious_boundary_is_removed() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let f = feature_matrix(&gaussian_rows(&mut rng, 600, 4, 0.0));
    let segs = vec![Segment::new(0, 300, &f), Segment::new(300, 600, &f)];
    let refined = refine_boundaries(&segs, &f, &SegmentationConfig::default()).unwrap();
    assert_eq!(refined.len(), 1);
    assert_eq!(refined[0].frames(), 0..600);
}
