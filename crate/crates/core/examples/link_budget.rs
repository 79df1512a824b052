//! SNR to bit error rate, frame success and link rate.
use bpnc::channel::{ber, db_to_lin, frame_success, link_rate, Modulation, Ofdm};

fn main() {
    let ofdm = Ofdm::default();
    let frame = 515;
    println!("bit rate {:.0} bit/s, {frame}-byte frame airtime {:.1} ms", ofdm.bit_rate(), 1e3 * ofdm.airtime_s(frame));
    println!(" SNR dB        BER   frame ok   pkt/s");
    for snr_db in [0.0, 4.0, 6.0, 8.0, 10.0, 15.0] {
        let snr = db_to_lin(snr_db);
        let b = ber(Modulation::Bpsk, snr);
        let r = link_rate(&ofdm, snr, frame);
        println!("{snr_db:>7.1} {b:>10.2e} {:>10.4} {:>7.3}", frame_success(b, frame), r.packets_per_s);
    }
}
