use ostraka_core::fuzz::{run_equivalence, CaseParams};

#[test]
fn distributed_matches_single_machine() {
    let params = CaseParams {
        max_txs: 60,
        adversarial_rate: 0.3,
    };
    let report = run_equivalence(400, 7, &params, &[1, 2, 3, 4, 8]);
    assert!(report.divergences.is_empty(), "{:#?}", &report.divergences[..report.divergences.len().min(5)]);
    assert!(report.accepted > 0 && report.rejected > 0);
}
