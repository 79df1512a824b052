//! Estimate a generation from fewer than h packets.
use std::sync::Arc;

use bpnc::gf::Field;
use bpnc::rlnc::{rank_deficient_solve, Confidence, Decoder, DecoderMode, Encoder, Generation, MinWeightSearch, TagSampling};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() {
    let field = Arc::new(Field::new(4).unwrap());
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (h, n) = (4, 32);
    // sparse data, where the lowest-weight guess tends to be right
    let rows: Vec<Vec<u8>> = (0..h)
        .map(|_| (0..n).map(|_| if rng.gen_bool(0.2) { rng.gen_range(1..16) } else { 0 }).collect())
        .collect();
    let gen = Generation::from_rows(0, rows.clone()).unwrap();
    let coded = Encoder::new(field.clone(), TagSampling::LowerTriangular).encode_generation(0, &gen, h, &mut rng).unwrap();
    let mut dec = Decoder::new(field.clone(), DecoderMode::RankDeficient, 0, h, n);
    let solver = MinWeightSearch::default();
    for (i, p) in coded.iter().enumerate() {
        dec.ingest(p).unwrap();
        let est = rank_deficient_solve(&field, &dec, &solver);
        let correct = est.correct_symbols(&rows);
        println!(
            "after {} packets: {:>3}/{} symbols right ({} certain, {} guessed)",
            i + 1,
            correct,
            h * n,
            est.count(Confidence::Certain),
            est.count(Confidence::Heuristic)
        );
    }
}
