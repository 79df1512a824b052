use bpnc::channel::{FlowSpec, LinkSpec, Scenario, STRONG_SNR_DB, WEAK_SNR_DB};
use bpnc::engine::{run, run_with, sweep, PacketLogMode, RunOptions};

fn line(duration: f64, seed: u64) -> Scenario {
    let mut sc = Scenario::builtin("line7").unwrap();
    sc.duration_s = duration;
    sc.seed = seed;
    sc
}

#[test]
fn zero_duration_is_empty() {
    let out = run(&line(0.0, 1)).unwrap();
    assert!(out.metrics.is_empty());
    assert_eq!(out.summary.frames_sent, 0);
    assert_eq!(out.packet_log.as_deref(), Some(""));
}

#[test]
fn invalid_scenario_fails_before_running() {
    let mut sc = line(10.0, 1);
    sc.coding.field_bits = 12;
    assert!(run(&sc).is_err());
}

#[test]
fn same_seed_same_log_and_digest_only_matches() {
    let sc = line(400.0, 9);
    let a = run(&sc).unwrap();
    let b = run(&sc).unwrap();
    assert_eq!(a.packet_log, b.packet_log);
    assert_eq!(a.summary, b.summary);
    let d = run_with(&sc, RunOptions { packet_log: PacketLogMode::DigestOnly }).unwrap();
    assert_eq!(d.summary.packet_log_sha256, a.summary.packet_log_sha256);
    assert!(d.packet_log.is_none());
    let other = run(&line(400.0, 10)).unwrap();
    assert_ne!(other.summary.packet_log_sha256, a.summary.packet_log_sha256);
}

#[test]
fn line_delivers_and_conserves() {
    let out = run(&line(1500.0, 2)).unwrap();
    let s = &out.summary;
    let f = &s.flows[0];
    assert!(f.delivered > 0, "nothing reached node 7");
    assert!(f.delivered <= f.injected);
    assert_eq!(f.decoded_by_destination.get(&7), Some(&f.delivered));
    assert_eq!(s.decode_errors, 0);
    let last = out.metrics.throughput.iter().rfind(|t| t.flow == 0).unwrap();
    assert_eq!(last.delivered, f.delivered);
}

#[test]
fn multicast_conserves_per_destination() {
    let mut sc = Scenario::builtin("butterfly7").unwrap();
    sc.duration_s = 1200.0;
    for seed in 1..=3 {
        sc.seed = seed;
        let s = run(&sc).unwrap().summary;
        let f = &s.flows[0];
        assert_eq!(s.decode_errors, 0);
        for d in &f.destinations {
            let got = f.decoded_by_destination.get(d).copied().unwrap_or(0);
            assert!(got <= f.injected && got >= f.delivered);
        }
    }
}

#[test]
fn cumulative_series_are_monotone_and_energy_adds_up() {
    let out = run(&line(900.0, 3)).unwrap();
    let s = &out.summary;
    for n in 1..=7 {
        let series: Vec<_> = out.metrics.node_series(n).collect();
        assert!(series.windows(2).all(|w| w[1].energy_mj >= w[0].energy_mj && w[1].overhead >= w[0].overhead));
        assert!(series.windows(2).all(|w| w[1].decoded >= w[0].decoded));
    }
    assert!(out.metrics.throughput.windows(2).filter(|w| w[0].flow == w[1].flow).all(|w| w[1].delivered >= w[0].delivered));
    let per_node: f64 = s.nodes.iter().map(|n| n.energy_mj).sum();
    assert!((per_node - s.energy_total_mj).abs() < 1e-6);
    assert!((s.energy_meter_mj - per_node).abs() <= 1e-6 * per_node.max(1.0), "{} vs {per_node}", s.energy_meter_mj);
}

#[test]
fn overhead_matches_protocol_counters() {
    let out = run(&line(600.0, 4)).unwrap();
    let s = &out.summary;
    let mut total = 0;
    for n in &s.nodes {
        let st = &n.stats;
        assert_eq!(n.overhead, st.dis_sent + st.syn_sent + st.rts_sent + st.cts_sent);
        assert_eq!(n.overhead, st.overhead());
        let last = out.metrics.node_series(n.id).last().unwrap();
        assert!(last.overhead <= n.overhead);
        total += n.overhead;
    }
    assert_eq!(total, s.overhead_total);
    let log = out.packet_log.unwrap();
    let control = log.lines().filter(|l| !l.contains(" DATA ")).count() as u64;
    assert_eq!(control, total);
}

fn r_squared(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    sxy * sxy / (sxx * syy)
}

#[test]
fn energy_grows_close_to_linearly() {
    for name in ["line7", "ring7", "butterfly7"] {
        let mut sc = Scenario::builtin(name).unwrap();
        sc.duration_s = 1200.0;
        let out = run(&sc).unwrap();
        for n in 1..=sc.nodes {
            let series: Vec<_> = out.metrics.node_series(n).collect();
            let skip = series.len() / 5;
            let xs: Vec<f64> = series[skip..].iter().map(|s| s.time_us as f64).collect();
            let ys: Vec<f64> = series[skip..].iter().map(|s| s.energy_mj).collect();
            let r2 = r_squared(&xs, &ys);
            assert!(r2 >= 0.9, "{name} node {n}: R^2 {r2}");
        }
    }
}

/// Two flows on one channel whose senders hear each other; each sender
/// also reaches the other flow's receiver weakly.
fn co_channel(seed: u64, sensing: bool) -> Scenario {
    let mut sc = Scenario::builtin("line7").unwrap();
    let strong = sc.phy.gain_for_snr(STRONG_SNR_DB);
    let weak = sc.phy.gain_for_snr(WEAK_SNR_DB);
    let link = |src, dst, gain_db| LinkSpec { src, dst, channel: None, gain_db, symmetric: true };
    sc.nodes = 4;
    sc.channels.truncate(1);
    sc.links = vec![link(1, 2, strong), link(1, 3, strong), link(2, 4, strong), link(1, 4, weak), link(2, 3, weak)];
    sc.flows = vec![
        FlowSpec { src: 1, dsts: vec![3], arrival_rate: 0.6 },
        FlowSpec { src: 2, dsts: vec![4], arrival_rate: 0.6 },
    ];
    sc.duration_s = 900.0;
    sc.seed = seed;
    sc.phy.sensing = sensing;
    sc
}

#[test]
fn sensing_reduces_collisions_on_paired_seeds() {
    let (mut on, mut off) = (0, 0);
    for seed in 1..=4 {
        on += run(&co_channel(seed, true)).unwrap().summary.collision_losses;
        off += run(&co_channel(seed, false)).unwrap().summary.collision_losses;
    }
    println!("collision losses: sensing on {on}, off {off}");
    assert!(on * 2 < off, "sensing on {on}, off {off}");
}

#[test]
fn single_value_sweep_equals_run() {
    let sc = line(300.0, 5);
    let res = sweep(&sc, "arrival_rate", &["0.75".into()], &[5], false).unwrap();
    let direct = run(&sc).unwrap().summary;
    assert_eq!(res.runs.len(), 1);
    assert_eq!(res.runs[0].summary, direct);
    assert_eq!(res.rows[0].throughput_pps.mean, direct.throughput_pps);
}

#[test]
fn sweep_rejects_bad_input() {
    let sc = line(10.0, 1);
    assert!(sweep(&sc, "block_size", &[], &[1], false).is_err());
    assert!(sweep(&sc, "block_size", &["2".into()], &[], false).is_err());
    assert!(sweep(&sc, "no_such_knob", &["2".into()], &[1], false).is_err());
}

#[test]
fn decoder_sweep_gives_accuracy_curves() {
    let mut sc = Scenario::builtin("butterfly7").unwrap();
    sc.duration_s = 900.0;
    sc.phy.data_loss = 0.2;
    let res = sweep(&sc, "decoder", &["full".into(), "rankdef".into()], &[1, 2], false).unwrap();
    let csv = res.accuracy_csv();
    assert!(csv.lines().any(|l| l.starts_with("full,")));
    assert!(csv.lines().any(|l| l.starts_with("rankdef,")));
    for run in &res.runs {
        assert!(run.accuracy.iter().all(|p| (0.0..=1.0).contains(&p.mean_fraction)));
    }
}
