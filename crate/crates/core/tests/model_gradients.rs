use std::time::Instant;

use promptq::config::RunConfig;
use promptq::gradcheck::check_model;

#[test]
fn tiny_model_gradients_match_finite_differences() {
    let cfg = RunConfig::tiny();
    let start = Instant::now();
    let report = check_model(&cfg, false).unwrap();
    eprintln!("{}elapsed {:?}", report.render(), start.elapsed());
    assert_eq!((report.segments, report.queries, report.dim, report.layers, report.prompt_len), (12, 4, 16, 2, 3));
    assert!(report.passed(), "{}", report.render());
}
