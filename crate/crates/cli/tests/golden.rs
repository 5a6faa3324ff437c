//! The bundled B1 trace must be exactly what the scenario engine records.

use std::path::Path;

use intentguard::harness::campaign::{scenario_for_run, AttackMix, CampaignConfig, FormChoice};
use intentguard::harness::{run_scenario, AttackKind};
use intentguard::screen::{format_trace, parse_trace};
use intentguard::supervisor::format_alarm_log;

#[test]
fn golden_b1_trace_matches_the_engine() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("assets/golden/b1.trace");
    let text = std::fs::read_to_string(path).unwrap();

    let mut cfg = CampaignConfig::new(1, AttackMix::Single(AttackKind::B1), 7);
    cfg.form = FormChoice::BankTransfer;
    let params = scenario_for_run(&cfg, 0);
    let outcome = run_scenario(&params);

    assert!(text.contains(&format!("# seed: {}\n", params.seed)));
    let expected: String = text.lines().filter_map(|l| l.strip_prefix("# expect: ")).map(|l| format!("{l}\n")).collect();
    assert_eq!(expected, format_alarm_log(&outcome.alarms));
    assert_eq!(parse_trace(&text).unwrap(), outcome.trace);
    assert_eq!(format_trace(&outcome.trace), text.lines().filter(|l| !l.starts_with('#')).map(|l| format!("{l}\n")).collect::<String>());
}
