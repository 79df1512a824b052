//! Analytic link abstraction: SINR to BER to frame success and OFDM goodput.

pub fn db_to_lin(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn lin_to_db(lin: f64) -> f64 {
    10.0 * lin.log10()
}

pub fn dbm_to_mw(dbm: f64) -> f64 {
    db_to_lin(dbm)
}

pub fn mw_to_dbm(mw: f64) -> f64 {
    lin_to_db(mw)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modulation {
    #[default]
    Bpsk,
}

impl Modulation {
    pub fn bits_per_symbol(self) -> f64 {
        match self {
            Modulation::Bpsk => 1.0,
        }
    }
}

/// Gaussian tail probability.
pub fn q_function(x: f64) -> f64 {
    0.5 * libm::erfc(x / std::f64::consts::SQRT_2)
}

/// Bit error probability at a linear SINR.
pub fn ber(modulation: Modulation, sinr: f64) -> f64 {
    if sinr.is_nan() || sinr <= 0.0 {
        return 0.5;
    }
    match modulation {
        Modulation::Bpsk => q_function((2.0 * sinr).sqrt()),
    }
}

/// Probability that all `8 * len` bits of a frame survive.
pub fn frame_success(ber: f64, frame_len: usize) -> f64 {
    (1.0 - ber).powf(8.0 * frame_len as f64)
}

/// `signal / (noise + sum(interference))`, all linear.
pub fn sinr(signal: f64, noise: f64, interference: impl IntoIterator<Item = f64>) -> f64 {
    signal / (noise + interference.into_iter().sum::<f64>())
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Ofdm {
    /// Sample rate feeding the FFT, Hz.
    pub bandwidth_hz: f64,
    pub fft_len: u32,
    pub cp_len: u32,
    pub occupied: u32,
    pub modulation: Modulation,
}

impl Default for Ofdm {
    fn default() -> Self {
        Ofdm { bandwidth_hz: 100_000.0, fft_len: 512, cp_len: 128, occupied: 200, modulation: Modulation::Bpsk }
    }
}

impl Ofdm {
    /// Information bits per second with no errors.
    pub fn bit_rate(&self) -> f64 {
        let occupied = self.occupied as f64 / self.fft_len as f64;
        let cp = self.fft_len as f64 / (self.fft_len + self.cp_len) as f64;
        self.bandwidth_hz * self.modulation.bits_per_symbol() * occupied * cp
    }

    pub fn airtime_s(&self, frame_len: usize) -> f64 {
        8.0 * frame_len as f64 / self.bit_rate()
    }

    pub fn airtime_us(&self, frame_len: usize) -> u64 {
        (self.airtime_s(frame_len) * 1e6).ceil() as u64
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkRate {
    /// Delivered frames per second, `c_ij`.
    pub packets_per_s: f64,
    pub success: f64,
}

/// Goodput of back-to-back frames at a given SINR.
pub fn link_rate(ofdm: &Ofdm, sinr: f64, frame_len: usize) -> LinkRate {
    let success = frame_success(ber(ofdm.modulation, sinr), frame_len);
    LinkRate { packets_per_s: success / ofdm.airtime_s(frame_len), success }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Trapezoid integration of the normal density from x to 12.
    fn q_oracle(x: f64) -> f64 {
        let n = 200_000;
        let (a, b) = (x, 12.0);
        let h = (b - a) / n as f64;
        let pdf = |t: f64| (-t * t / 2.0).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let mut s = 0.5 * (pdf(a) + pdf(b));
        for i in 1..n {
            s += pdf(a + i as f64 * h);
        }
        s * h
    }

    #[test]
    fn ber_examples() {
        assert_eq!(ber(Modulation::Bpsk, 0.0), 0.5);
        let b1 = ber(Modulation::Bpsk, 1.0);
        assert!((b1 - 0.0786).abs() < 1e-4, "{b1}");
        assert!((b1 - q_oracle(2f64.sqrt())).abs() < 1e-9);
        let mut prev = 0.5;
        for i in 0..200 {
            let b = ber(Modulation::Bpsk, i as f64 * 0.1);
            assert!(b <= prev);
            prev = b;
        }
    }

    #[test]
    fn sinr_examples() {
        assert!((sinr(db_to_lin(20.0), 1.0, []) - 100.0).abs() < 1e-9);
        assert!((sinr(1.0, 1e-9, [1.0]) - 1.0).abs() < 1e-6);
        let mut prev = f64::INFINITY;
        let mut interferers = Vec::new();
        for k in 0..5 {
            let s = sinr(10.0, 1.0, interferers.clone());
            assert!(s < prev);
            prev = s;
            interferers.push(0.5 + k as f64);
        }
    }

    #[test]
    fn rate_examples() {
        let o = Ofdm::default();
        assert!((o.bit_rate() - 31_250.0).abs() < 1e-9);
        let clean = link_rate(&o, 1e6, 500);
        assert_eq!(clean.success, 1.0);
        assert!((clean.packets_per_s - 31_250.0 / 4000.0).abs() < 1e-9);
        assert!(link_rate(&o, 0.0, 500).success < 1e-300);
    }

    #[test]
    fn half_success_halves_rate_monte_carlo() {
        let o = Ofdm::default();
        let target_ber = 1.0 - 0.5f64.powf(1.0 / 4000.0);
        // invert the BER curve by bisection
        let (mut lo, mut hi) = (0.0, 50.0);
        for _ in 0..200 {
            let mid = (lo + hi) / 2.0;
            if ber(Modulation::Bpsk, mid) > target_ber {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let r = link_rate(&o, lo, 500);
        let clean = link_rate(&o, 1e6, 500);
        assert!((r.packets_per_s / clean.packets_per_s - 0.5).abs() < 0.05 * 0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let draws = 20_000;
        let ok = (0..draws).filter(|_| rng.gen::<f64>() < r.success).count();
        let mc_rate = ok as f64 / draws as f64 * clean.packets_per_s;
        assert!((mc_rate / clean.packets_per_s - 0.5).abs() < 0.05 * 0.5);
    }
}
