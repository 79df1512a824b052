//! One source, two destinations over the butterfly, with network coding.
use bpnc::channel::Scenario;
use bpnc::engine;

fn main() {
    let mut sc = Scenario::builtin("butterfly7").unwrap();
    sc.duration_s = 1800.0;
    let out = engine::run(&sc).unwrap();
    let s = &out.summary;
    let f = &s.flows[0];
    println!("source {} -> {:?}, h = {}", f.source, f.destinations, s.block_size);
    println!("injected {}, decoded per destination {:?}, by both {}", f.injected, f.decoded_by_destination, f.delivered);
    println!("throughput {:.3} pkt/s, decode errors {}", s.throughput_pps, s.decode_errors);
    for l in s.links.iter().filter(|l| l.data_packets > 0) {
        println!("  {} -> {}: {} packets", l.tx, l.rx, l.data_packets);
    }
}
