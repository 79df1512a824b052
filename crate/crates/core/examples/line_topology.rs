//! Seven-node line: per-node backlog, energy and control overhead.
use bpnc::channel::Scenario;
use bpnc::engine;

fn main() {
    let mut sc = Scenario::builtin("line7").unwrap();
    sc.duration_s = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(1200.0);
    let out = engine::run(&sc).unwrap();
    let s = &out.summary;
    println!("{} for {} s: injected {}, delivered {}", s.scenario, s.duration_s, s.flows[0].injected, s.flows[0].delivered);
    println!("node  median backlog  energy mJ  control pkts");
    for n in &s.nodes {
        println!("{:>4}  {:>14.1}  {:>9.2}  {:>12}", n.id, n.median_backlog, n.energy_mj, n.overhead);
    }
}
