//! Closed-loop transmit power control on a static link.
use bpnc::channel::{db_to_lin, lin_to_db, mw_to_dbm};
use bpnc::protocol::{update_power, PowerRange};

fn main() {
    let range = PowerRange::from_dbm(-15.0, -5.0);
    let target = db_to_lin(15.0);
    // SNR the link would give at 1 mW
    let snr_per_mw = db_to_lin(19.0) / range.max_mw;
    let mut p = range.max_mw;
    for round in 0..6 {
        let snr = snr_per_mw * p;
        println!("round {round}: {:>6.2} dBm -> SNR {:>5.2} dB", mw_to_dbm(p), lin_to_db(snr));
        p = update_power(p, target, snr, range);
    }
}
