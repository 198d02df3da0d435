mod common;

use common::{GradInstance, ObjectiveKind, FD_REL_TOL};

#[test]
fn analytic_gradients_match_central_differences() {
    for kind in ObjectiveKind::ALL {
        let worst = (0..100)
            .map(|seed| GradInstance::random(kind, 1000 + seed).max_relative_error())
            .fold(0.0f64, f64::max);
        assert!(worst < FD_REL_TOL, "{kind:?}: worst relative error {worst:e}");
    }
}
