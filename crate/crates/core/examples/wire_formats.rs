//! Encode and decode every frame type.
use bpnc::gf::Field;
use bpnc::protocol::{Cts, Dis, Frame, Rts, Syn, SynEntry};
use bpnc::protocol::wire::DisNeighbor;
use bpnc::rlnc::CodedPacket;

fn main() {
    let field = Field::new(4).unwrap();
    let frames = vec![
        Frame::Dis(Dis { sender: 2, next_channel: 3, neighbors: vec![DisNeighbor { id: 1, channel: 0, snr_db: 24.5 }] }),
        Frame::Syn(Syn { sender: 2, entries: vec![SynEntry { source: 1, destinations: vec![6, 7], backlog: 12 }] }),
        Frame::Rts(Rts { tx: 2, rx: 4, channel: 1, flow: 0, utility_q: 3 << 16 }),
        Frame::Cts(Cts { rx: 4, tx: 2, channel: 1 }),
        Frame::Data(CodedPacket::systematic(0, 9, 4, 1, vec![0xA; 8])),
    ];
    for f in &frames {
        let bytes = f.encode(&field);
        let back = Frame::decode(&bytes, &field, 8).unwrap();
        println!("{:<4} {:>3} bytes  {:02x?}  roundtrip {}", f.type_name(), bytes.len(), &bytes[..bytes.len().min(12)], &back == f);
    }
    println!("truncated RTS: {:?}", Frame::decode(&[0x03, 2, 4], &field, 8));
}
