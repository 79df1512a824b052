//! Prefix equivalence of coded blocks before and after column reordering.
use std::sync::Arc;

use bpnc::gf::Field;
use bpnc::rlnc::preconditioning_experiment;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() {
    let trials: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(10_000);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let rep = preconditioning_experiment(Arc::new(Field::new(4).unwrap()), 4, 500, trials, &mut rng);
    println!("{} blocks, h = {}, GF(2^{})", rep.trials, rep.block_size, rep.field_bits);
    println!("packet  before   after");
    for (i, (b, a)) in rep.before.iter().zip(&rep.after).enumerate() {
        println!("{:>6}  {:>6.2}%  {:>6.2}%", i + 1, 100.0 * b, 100.0 * a);
    }
}
