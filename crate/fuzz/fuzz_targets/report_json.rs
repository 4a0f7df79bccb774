#![no_main]

use condexit::costing::CostReport;
use condexit::experiments::ExperimentReport;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(report) = serde_json::from_slice::<ExperimentReport>(data) {
        let _ = report.verdicts_consistent();
        let text = serde_json::to_string(&report).unwrap();
        let _: ExperimentReport = serde_json::from_str(&text).expect("serialized report parses");
    }
    if let Ok(cost) = serde_json::from_slice::<CostReport>(data) {
        let text = serde_json::to_string(&cost).unwrap();
        let _: CostReport = serde_json::from_str(&text).expect("serialized cost parses");
    }
});
