mod common;

use common::{brute_force_depth, reconstruction_min_iou, sampling_oracle_error};

#[test]
fn brute_force_matches_closed_square() {
    let sq = [[1.0, 1.0], [-1.0, 1.0], [-1.0, -1.0], [1.0, -1.0]];
    assert!((brute_force_depth(&sq, 0.0) - 1.0).abs() < 1e-15);
    assert!((brute_force_depth(&sq, std::f64::consts::FRAC_PI_4) - 2f64.sqrt()).abs() < 1e-12);
}

#[test]
fn sampler_agrees_with_ray_casting_on_200_rooms() {
    for n in [64, 256] {
        let err = sampling_oracle_error(200, n);
        assert!(err < 1e-9, "N = {n}: max error {err:e}");
    }
}

#[test]
fn reconstruction_keeps_the_floor_at_n_256() {
    let iou = reconstruction_min_iou(200, 256);
    assert!(iou >= 0.99, "min 2DIoU {iou}");
}
