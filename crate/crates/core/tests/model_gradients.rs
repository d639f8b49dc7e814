use std::time::{Duration, Instant};

use ered::reference::{model_grad_check, TOLERANCE};

fn check(redraw: Option<f64>) {
    let start = Instant::now();
    let report = model_grad_check(redraw).unwrap();
    assert!(start.elapsed() < Duration::from_secs(60));
    assert!(report.checked > 1000, "only {} elements checked", report.checked);
    assert!(report.passed, "worst {:?}", report.worst);
    assert!(report.per_param.iter().all(|(_, e)| *e <= TOLERANCE));
}

#[test]
fn full_model_gradients_at_initialisation() {
    check(None);
}

#[test]
fn full_model_gradients_with_large_weights() {
    check(Some(0.4));
}
