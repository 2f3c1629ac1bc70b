mod oracle;

use oracle::{check, check_random, hand_scenario, replay, US};
use relaxsim::ExecMode;

#[test]
fn engine_matches_replay_on_random_instances() {
    let cov = check_random(200, 0x5eed).unwrap();
    // the instances must actually exercise the scheduler
    assert!(cov.batches > 300, "{}", cov.batches);
    assert!(cov.multi_swap > 40, "{}", cov.multi_swap);
    assert_eq!(cov.kinds.len(), 4);
}

#[test]
fn replay_reproduces_hand_computed_scenario() {
    let inst = hand_scenario();
    let r = replay(&inst);
    let latency: Vec<u64> = r
        .completion
        .iter()
        .zip(&inst.arrivals)
        .map(|(c, a)| c.unwrap() - a.0)
        .collect();
    assert_eq!(latency, vec![21 * US, 16 * US, 31_010_000, 30_010_000]);
    assert_eq!(r.swaps, 2);
    check(&inst, ExecMode::NoCc).unwrap();
}
