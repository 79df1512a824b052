//! Throughput against generation size on the butterfly, averaged over seeds.
use bpnc::channel::Scenario;
use bpnc::engine::sweep;

fn main() {
    let seeds: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(5);
    let mut base = Scenario::builtin("butterfly7").unwrap();
    base.duration_s = 1800.0;
    let values: Vec<String> = ["2", "4", "6", "8"].map(String::from).to_vec();
    let res = sweep(&base, "block_size", &values, &(1..=seeds).collect::<Vec<_>>(), true).unwrap();
    println!("   h  throughput (pkt/s)");
    for r in &res.rows {
        println!("{:>4}  {:.3} +- {:.3}", r.value, r.throughput_pps.mean, r.throughput_pps.stdev);
    }
}
