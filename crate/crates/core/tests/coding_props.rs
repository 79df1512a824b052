use std::sync::Arc;

use bpnc::gf::{Field, Matrix};
use bpnc::protocol::wire::{Cts, Dis, DisNeighbor, Frame, Rts, Syn, SynEntry};
use bpnc::rlnc::{
    pad_block, recode, unpad, CodedPacket, Decoder, DecoderMode, Encoder, Generation, TagSampling,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn field(bits: u8) -> Arc<Field> {
    Arc::new(Field::new(bits).unwrap())
}

/// Carry-less product reduced by the polynomial, bit by bit.
fn slow_mul(a: u8, b: u8, bits: u8, poly: u16) -> u8 {
    let (mut acc, mut a) = (0u16, a as u16);
    for i in 0..bits {
        if b >> i & 1 == 1 {
            acc ^= a;
        }
        a <<= 1;
        if a >> bits & 1 == 1 {
            a ^= poly;
        }
    }
    acc as u8
}

proptest! {
    #[test]
    fn table_product_matches_shift_and_add(bits in 1u8..=8, a in any::<u8>(), b in any::<u8>()) {
        let f = Field::new(bits).unwrap();
        let mask = (f.order() - 1) as u8;
        let (a, b) = (a & mask, b & mask);
        prop_assert_eq!(f.mul(a, b), slow_mul(a, b, bits, f.poly()));
    }

    #[test]
    fn distributive_and_invertible(bits in 1u8..=8, a in any::<u8>(), b in any::<u8>(), c in any::<u8>()) {
        let f = Field::new(bits).unwrap();
        let mask = (f.order() - 1) as u8;
        let (a, b, c) = (a & mask, b & mask, c & mask);
        prop_assert_eq!(f.mul(a, f.add(b, c)), f.add(f.mul(a, b), f.mul(a, c)));
        if a != 0 {
            prop_assert_eq!(f.mul(a, f.inv(a).unwrap()), 1);
            prop_assert_eq!(f.div(f.mul(b, a), a), Some(b));
        }
    }

    #[test]
    fn pack_unpack_roundtrip(bits in 1u8..=8, raw in proptest::collection::vec(any::<u8>(), 0..64)) {
        let f = Field::new(bits).unwrap();
        let mask = (f.order() - 1) as u8;
        let symbols: Vec<u8> = raw.iter().map(|s| s & mask).collect();
        let bytes = f.pack(&symbols);
        prop_assert_eq!(bytes.len(), (symbols.len() * bits as usize).div_ceil(8));
        let mut back = f.unpack(&bytes);
        back.truncate(symbols.len());
        prop_assert_eq!(back, symbols);
    }

    #[test]
    fn invertible_matrices_invert(seed in any::<u64>(), n in 1usize..7, bits in 1u8..=8) {
        let f = Field::new(bits).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = Matrix::random(&f, n, n, &mut rng);
        match m.invert(&f) {
            Ok(inv) => {
                prop_assert_eq!(m.rank(&f), n);
                prop_assert_eq!(m.mul(&f, &inv).unwrap(), Matrix::identity(n));
            }
            Err(_) => prop_assert!(m.rank(&f) < n),
        }
    }

    #[test]
    fn rank_is_submultiplicative(seed in any::<u64>(), r in 1usize..6, k in 1usize..6, c in 1usize..6) {
        let f = Field::new(2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = Matrix::random(&f, r, k, &mut rng);
        let b = Matrix::random(&f, k, c, &mut rng);
        let ab = a.mul(&f, &b).unwrap();
        prop_assert!(ab.rank(&f) <= a.rank(&f).min(b.rank(&f)));
        prop_assert!(a.rank(&f) <= r.min(k));
    }

    /// Any arrival order of a full-rank set of coded packets decodes.
    #[test]
    fn decode_is_order_independent(seed in any::<u64>(), h in 1usize..9, bits in 1u8..=8, extra in 0usize..4) {
        let f = field(bits);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 6;
        let rows: Vec<Vec<u8>> =
            (0..h).map(|_| (0..n).map(|_| rng.gen_range(0..f.order()) as u8).collect()).collect();
        let gen = Generation::from_rows(3, rows.clone()).unwrap();
        let enc = Encoder::new(f.clone(), TagSampling::RankIncreasing);
        let mut coded = enc.encode_generation(1, &gen, h + extra, &mut rng).unwrap();
        for i in (1..coded.len()).rev() {
            coded.swap(i, rng.gen_range(0..=i));
        }
        let mut dec = Decoder::new(f.clone(), DecoderMode::FullRank, 3, h, n);
        for p in &coded {
            dec.ingest(p).unwrap();
        }
        prop_assert!(dec.is_complete());
        let got: Vec<Vec<u8>> = dec.delivered().iter().map(|p| p.clone().unwrap()).collect();
        prop_assert_eq!(got, rows);
    }

    /// Packets recoded along a two-relay chain still decode at the sink.
    #[test]
    fn recoding_chain_preserves_content(seed in any::<u64>(), h in 2usize..7) {
        let f = field(4);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<Vec<u8>> = (0..h).map(|_| (0..5).map(|_| rng.gen_range(0..16)).collect()).collect();
        let gen = Generation::from_rows(0, rows.clone()).unwrap();
        let enc = Encoder::new(f.clone(), TagSampling::Uniform);
        let first = enc.encode_generation(0, &gen, h + 2, &mut rng).unwrap();
        let mut relay1 = Vec::new();
        for _ in 0..h + 4 {
            relay1.push(recode(&f, &first, &mut rng).unwrap());
        }
        let mut dec = Decoder::new(f.clone(), DecoderMode::FullRank, 0, h, 5);
        for _ in 0..60 {
            if dec.is_complete() {
                break;
            }
            let p = recode(&f, &relay1, &mut rng).unwrap();
            dec.ingest(&p).unwrap();
        }
        // a relay set that lost rank cannot be decoded; otherwise it must be
        let mut span = Matrix::zeros(0, h);
        for p in &relay1 {
            span.push_row(&p.tag).unwrap();
        }
        prop_assert_eq!(dec.is_complete(), span.rank(&f) == h);
        if dec.is_complete() {
            let got: Vec<Vec<u8>> = dec.delivered().iter().map(|p| p.clone().unwrap()).collect();
            prop_assert_eq!(got, rows);
        }
    }

    #[test]
    fn bytes_survive_pad_code_decode(data in proptest::collection::vec(any::<u8>(), 0..200), h in 1usize..6, bits in prop::sample::select(vec![1u8, 2, 4, 8])) {
        let f = field(bits);
        let mut rng = ChaCha8Rng::seed_from_u64(data.len() as u64);
        let enc = Encoder::new(f.clone(), TagSampling::RankIncreasing);
        let mut out = Vec::new();
        for (id, group) in pad_block(&data, 16, h).iter().enumerate() {
            let gen = Generation::from_bytes(&f, id as u16, group).unwrap();
            let mut dec = Decoder::new(f.clone(), DecoderMode::RankDeficient, id as u16, h, gen.packet_len);
            for p in enc.encode_generation(0, &gen, h, &mut rng).unwrap() {
                dec.ingest(&p).unwrap();
            }
            out.extend(dec.delivered().iter().map(|p| {
                let mut b = f.pack(p.as_ref().unwrap());
                b.truncate(16);
                b
            }));
        }
        prop_assert_eq!(unpad(out.iter().map(Vec::as_slice)).unwrap(), data);
    }

    #[test]
    fn data_frames_roundtrip(bits in 1u8..=8, h in 1usize..9, n in 1usize..40, seed in any::<u64>(), flow in any::<u8>(), generation in any::<u16>()) {
        let f = Field::new(bits).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut sym = || rng.gen_range(0..f.order()) as u8;
        let mut perm: Vec<u8> = (0..h as u8).collect();
        perm.reverse();
        let pkt = CodedPacket {
            flow,
            generation,
            perm,
            tag: (0..h).map(|_| sym()).collect(),
            payload: (0..n).map(|_| sym()).collect(),
        };
        let frame = Frame::Data(pkt);
        let bytes = frame.encode(&f);
        prop_assert_eq!(Frame::decode(&bytes, &f, n).unwrap(), frame);
        prop_assert!(Frame::decode(&bytes[..bytes.len() - 1], &f, n).is_err());
    }

    #[test]
    fn control_frames_roundtrip(
        sender in any::<u8>(),
        nbrs in proptest::collection::vec((any::<u8>(), 0u8..3, 0u16..u16::MAX), 0..10),
        entries in proptest::collection::vec((any::<u8>(), proptest::collection::vec(any::<u8>(), 1..5), any::<u16>()), 0..6),
        rts in (any::<u8>(), any::<u8>(), any::<u8>(), any::<u8>(), any::<u32>()),
    ) {
        let f = Field::new(4).unwrap();
        let dis = Frame::Dis(Dis {
            sender,
            next_channel: 1,
            neighbors: nbrs.iter().map(|&(id, channel, q)| DisNeighbor { id, channel, snr_db: q as f64 / 256.0 }).collect(),
        });
        let syn = Frame::Syn(Syn {
            sender,
            entries: entries.into_iter().map(|(source, destinations, backlog)| SynEntry { source, destinations, backlog }).collect(),
        });
        let rts = Frame::Rts(Rts { tx: rts.0, rx: rts.1, channel: rts.2, flow: rts.3, utility_q: rts.4 });
        let cts = Frame::Cts(Cts { rx: sender, tx: sender.wrapping_add(1), channel: 2 });
        for frame in [dis, syn, rts, cts] {
            let bytes = frame.encode(&f);
            prop_assert!(frame.is_control());
            prop_assert_eq!(Frame::decode(&bytes, &f, 0).unwrap(), frame.clone());
            let mut longer = bytes.clone();
            longer.push(0);
            prop_assert!(Frame::decode(&longer, &f, 0).is_err());
        }
    }
}
