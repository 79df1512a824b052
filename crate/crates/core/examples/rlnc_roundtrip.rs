//! Pad a message, encode each generation with random tags, decode, unpad.
use std::sync::Arc;

use bpnc::gf::Field;
use bpnc::rlnc::{pad_block, unpad, Decoder, DecoderMode, Encoder, Generation, TagSampling};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() {
    let field = Arc::new(Field::new(4).unwrap());
    let message = b"network coded packets travel in generations of h source packets".to_vec();
    let (packet_len, h) = (8, 4);
    let enc = Encoder::new(field.clone(), TagSampling::Uniform);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut recovered: Vec<Vec<u8>> = Vec::new();
    for (id, group) in pad_block(&message, packet_len, h).iter().enumerate() {
        let gen = Generation::from_bytes(&field, id as u16, group).unwrap();
        // a couple of spare packets in case one is dependent
        let coded = enc.encode_generation(0, &gen, h + 2, &mut rng).unwrap();
        let mut dec = Decoder::new(field.clone(), DecoderMode::FullRank, id as u16, h, gen.packet_len);
        let mut used = 0;
        for p in &coded {
            if dec.is_complete() {
                break;
            }
            dec.ingest(p).unwrap();
            used += 1;
        }
        println!("generation {id}: rank {} after {used} packets", dec.rank());
        recovered.extend(dec.delivered().iter().map(|p| field.pack(p.as_ref().unwrap())));
    }
    let out = unpad(recovered.iter().map(Vec::as_slice)).unwrap();
    println!("{}", String::from_utf8_lossy(&out));
    assert_eq!(out, message);
}
