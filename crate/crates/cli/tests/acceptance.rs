//! Final acceptance criterion: the loopback benchmark completes a bulk
//! transfer with zero application-level loss and emits a well-formed
//! report. Throughput itself is environment noise, so no rate floor is
//! asserted.

use microsctp_cli::{run_udp_bench, BenchConfig};

const MESSAGES: u32 = 100_000;
const SIZE: usize = 100;

#[test]
fn criterion_10_loopback_bench_is_lossless_with_well_formed_report() {
    let cfg = BenchConfig { count: MESSAGES, size: SIZE, streams: 1, seed: 42, trace: false };
    let outcome = run_udp_bench(&cfg);
    let (ok, detail) = match &outcome {
        Ok(r) => {
            let line = r.summary_line();
            let well_formed = line.starts_with("bench msgs=100000 bytes=10000000 ms=")
                && line.contains(" rate=")
                && line.contains(" lost=")
                && line.contains(" dups=");
            let clean = r.received == u64::from(MESSAGES) && r.lost == 0 && r.dup_deliveries == 0;
            (well_formed && clean, line)
        }
        Err(e) => (false, format!("bench failed: {e}")),
    };
    println!("criterion 10: {} — {detail}", if ok { "PASS" } else { "FAIL" });
    assert!(ok, "criterion 10: {detail}");
}
