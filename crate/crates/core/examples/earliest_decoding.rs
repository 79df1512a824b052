//! Lower-triangular tags let the destination release packet i after i packets.
use std::sync::Arc;

use bpnc::gf::Field;
use bpnc::rlnc::{Decoder, DecoderMode, Encoder, Generation, TagSampling};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() {
    let field = Arc::new(Field::new(4).unwrap());
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let h = 6;
    let rows = (0..h).map(|_| (0..8).map(|_| rng.gen_range(0..16u8)).collect()).collect();
    let gen = Generation::from_rows(0, rows).unwrap();
    for sampling in [TagSampling::Uniform, TagSampling::LowerTriangular] {
        let enc = Encoder::new(field.clone(), sampling);
        let coded = enc.encode_generation(0, &gen, h, &mut rng).unwrap();
        let mut dec = Decoder::new(field.clone(), DecoderMode::FullRank, 0, h, 8);
        let mut line = format!("{sampling:?}:");
        for p in &coded {
            dec.ingest(p).unwrap();
            line += &format!(" {}", dec.decoded_count());
        }
        println!("{line}   (decoded after each packet)");
    }
}
