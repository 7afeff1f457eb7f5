use seqdens::oracle::run_suite;

#[test]
fn full_suite_passes() {
    let start = std::time::Instant::now();
    let summary = run_suite(0);
    for c in &summary.checks {
        println!("{} {} {}", if c.pass { "ok  " } else { "FAIL" }, c.name, c.detail);
    }
    println!("suite took {:.1}s", start.elapsed().as_secs_f64());
    assert!(summary.pass);
    assert!(start.elapsed().as_secs() < 300);
}
