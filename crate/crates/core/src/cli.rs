//! Command-line front end: `run`, `sweep` and `paper-suite`.
//!
//! Exit status is 0 on success, 2 for configuration errors and 3 for
//! failures while running or writing results.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rand::Rng;
use thiserror::Error;

use crate::channel::{Scenario, ScenarioError, PARAMS};
use crate::engine::{self, rng::fork, EngineError, SweepResult, METRICS_HEADER};
use crate::gf::{Field, Symbol};
use crate::rlnc::{self, rank_deficient_solve, Decoder, DecoderMode, Encoder, MinWeightSearch, TagSampling};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

impl From<ScenarioError> for CliError {
    fn from(e: ScenarioError) -> Self {
        match e {
            ScenarioError::Io { .. } => CliError::Runtime(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<EngineError> for CliError {
    fn from(e: EngineError) -> Self {
        match e {
            EngineError::Scenario(s) => s.into(),
            other => CliError::Config(other.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "bpnc", version, about = "Cognitive radio network simulator with backpressure routing and network coding")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one experiment and write metrics.csv, summary.json and packets.log.
    Run(RunArgs),
    /// Run every (value, seed) pair of one parameter and write sweep.csv.
    Sweep(SweepArgs),
    /// Regenerate the whole evaluation set, one subdirectory per experiment.
    PaperSuite(SuiteArgs),
}

#[derive(Debug, Clone, Args)]
pub struct ScenarioArgs {
    /// Scenario file (TOML).
    #[arg(long, conflicts_with = "builtin", value_name = "PATH")]
    pub scenario: Option<PathBuf>,
    /// Builtin scenario: line7, ring7, grid6 or butterfly7.
    #[arg(long, value_name = "NAME")]
    pub builtin: Option<String>,
    /// Random seed (scenario `seed`).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Simulated seconds (scenario `duration_s`).
    #[arg(long, value_name = "SECONDS")]
    pub duration: Option<f64>,
    /// Generation size h; turns network coding on (scenario `coding.block_size`).
    #[arg(long, value_name = "H")]
    pub block_size: Option<usize>,
    /// Decoder: full or rankdef (scenario `coding.decoder`).
    #[arg(long, value_name = "MODE")]
    pub decoder: Option<String>,
    /// Field width m of GF(2^m), 1..=8 (scenario `coding.field_bits`).
    #[arg(long, value_name = "M")]
    pub field_bits: Option<u8>,
}

impl ScenarioArgs {
    pub fn resolve(&self) -> Result<Scenario, CliError> {
        let mut sc = match (&self.scenario, &self.builtin) {
            (Some(path), _) => Scenario::load(path)?,
            (None, Some(name)) => Scenario::builtin(name)?,
            (None, None) => return Err(CliError::Config("one of --scenario or --builtin is required".into())),
        };
        if let Some(s) = self.seed {
            sc.seed = s;
        }
        if let Some(d) = self.duration {
            sc.set_param("duration", &d.to_string())?;
        }
        if let Some(h) = self.block_size {
            sc.set_param("block_size", &h.to_string())?;
        }
        if let Some(d) = &self.decoder {
            sc.set_param("decoder", d)?;
        }
        if let Some(m) = self.field_bits {
            sc.set_param("field_bits", &m.to_string())?;
        }
        sc.validate()?;
        Ok(sc)
    }
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    /// Output directory.
    #[arg(long, env = "BPNC_OUT", default_value = "bpnc-out")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    /// `key=v1,v2,...` where key is one of block_size, decoder, field_bits,
    /// arrival_rate, data_loss, redundancy, sensing, power_control,
    /// coding_op_us, duration, seed.
    #[arg(long, value_name = "KEY=VALUES")]
    pub param: String,
    /// Seeds per value, counting up from the scenario seed.
    #[arg(long, default_value_t = 5)]
    pub seeds: u64,
    /// Run on one thread (results are identical either way).
    #[arg(long)]
    pub serial: bool,
    /// Output directory.
    #[arg(long, env = "BPNC_OUT", default_value = "bpnc-out")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SuiteArgs {
    /// Seeds per experiment point.
    #[arg(long, default_value_t = 5)]
    pub seeds: u64,
    /// Output directory.
    #[arg(long, env = "BPNC_OUT", default_value = "bpnc-out")]
    pub out: PathBuf,
}

/// Parse `args` (including the program name) and execute.
pub fn run_from<I, T>(args: I) -> Result<String, CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| match e.kind() {
        clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => CliError::Config(e.to_string()),
        _ => CliError::Config(e.render().to_string()),
    })?;
    execute(cli)
}

pub fn execute(cli: Cli) -> Result<String, CliError> {
    match cli.command {
        Command::Run(a) => cmd_run(&a),
        Command::Sweep(a) => cmd_sweep(&a),
        Command::PaperSuite(a) => cmd_paper_suite(&a),
    }
}

/// Process entry point used by the binary.
pub fn main_entry() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(cli) {
        Ok(msg) => {
            println!("{msg}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", dir.display())))?;
    let path = dir.join(name);
    std::fs::write(&path, contents).map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))
}

pub fn cmd_run(a: &RunArgs) -> Result<String, CliError> {
    let sc = a.scenario.resolve()?;
    let out = engine::run(&sc)?;
    write(&a.out, "metrics.csv", &out.metrics.metrics_csv())?;
    write(&a.out, "throughput.csv", &out.metrics.throughput_csv())?;
    write(&a.out, "accuracy.csv", &out.metrics.accuracy_csv())?;
    write(&a.out, "summary.json", &out.summary.to_json())?;
    write(&a.out, "packets.log", out.packet_log.as_deref().unwrap_or_default())?;
    let s = &out.summary;
    Ok(format!(
        "{} seed {}: {:.3} pkt/s delivered, {} frames, {} control packets -> {}",
        s.scenario,
        s.seed,
        s.throughput_pps,
        s.frames_sent,
        s.overhead_total,
        a.out.display()
    ))
}

/// Split `key=v1,v2` into the key and its non-empty values.
pub fn parse_param(spec: &str) -> Result<(String, Vec<String>), CliError> {
    let (key, values) = spec
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("--param needs KEY=V1,V2,...; got {spec:?}")))?;
    let key = key.trim();
    if !PARAMS.contains(&key) {
        return Err(CliError::Config(format!("unknown parameter {key:?} (expected one of {})", PARAMS.join(", "))));
    }
    let values: Vec<String> = values.split(',').map(str::trim).filter(|v| !v.is_empty()).map(String::from).collect();
    if values.is_empty() {
        return Err(CliError::Config(format!("no values given for sweep parameter `{key}`")));
    }
    Ok((key.to_string(), values))
}

fn seed_list(first: u64, count: u64) -> Vec<u64> {
    (0..count).map(|i| first + i).collect()
}

pub fn cmd_sweep(a: &SweepArgs) -> Result<String, CliError> {
    let base = a.scenario.resolve()?;
    let (key, values) = parse_param(&a.param)?;
    let res = engine::sweep(&base, &key, &values, &seed_list(base.seed, a.seeds), !a.serial)?;
    write(&a.out, "sweep.csv", &res.to_csv())?;
    write(&a.out, "accuracy.csv", &res.accuracy_csv())?;
    write(&a.out, "runs.csv", &runs_csv(&res))?;
    Ok(format!("{} values x {} seeds of {key} -> {}", values.len(), a.seeds, a.out.display()))
}

/// One line per run with the per-node aggregates used by the energy and
/// backlog plots.
fn runs_csv(res: &SweepResult) -> String {
    let mut out = format!("{METRICS_HEADER}\nparam,value,seed,node,median_backlog,energy_mj,overhead,decoded\n");
    for r in &res.runs {
        for n in &r.summary.nodes {
            let decoded: u64 = r.summary.flows.iter().filter_map(|f| f.decoded_by_destination.get(&n.id)).sum();
            let _ = writeln!(
                out,
                "{},{},{},{},{:.1},{:.3},{},{}",
                res.param, r.value, r.seed, n.id, n.median_backlog, n.energy_mj, n.overhead, decoded
            );
        }
    }
    out
}

/// Table III analog: prefix equivalence before and after column reordering.
pub fn preconditioning_csv(trials: usize, seed: u64) -> String {
    let field = Arc::new(Field::new(4).expect("GF(16)"));
    let mut rng = fork(seed, "preconditioning", 0);
    let rep = rlnc::preconditioning_experiment(field, 4, 500, trials, &mut rng);
    let mut out = format!("{METRICS_HEADER}\npacket,before,after,trials\n");
    for (i, (b, a)) in rep.before.iter().zip(&rep.after).enumerate() {
        let _ = writeln!(out, "{},{:.4},{:.4},{}", i + 1, b, a, rep.trials);
    }
    out
}

/// Rank-deficient decoding cost on a fixed benchmark for every field width:
/// `generations` systems of h = 4 at rank 2, N = 64 symbols.
pub fn field_cost(generations: usize, seed: u64) -> Vec<(u8, u64, f64)> {
    (1..=8u8)
        .map(|m| {
            let field = Arc::new(Field::new(m).expect("width in range"));
            let enc = Encoder::new(field.clone(), TagSampling::RankIncreasing);
            let mut rng = fork(seed, "field-cost", m as u64);
            let solver = MinWeightSearch { max_free: 2 };
            let start = Instant::now();
            let mut candidates = 0;
            for g in 0..generations {
                let rows: Vec<Vec<Symbol>> =
                    (0..4).map(|_| (0..64).map(|_| rng.gen_range(0..field.order()) as Symbol).collect()).collect();
                let gen = rlnc::Generation::from_rows(g as u16, rows).expect("rows");
                let pkts = enc.encode_generation(0, &gen, 2, &mut rng).expect("encode");
                let mut dec = Decoder::new(field.clone(), DecoderMode::RankDeficient, g as u16, 4, 64);
                for p in &pkts {
                    let _ = dec.ingest(p);
                }
                candidates += rank_deficient_solve(&field, &dec, &solver).candidates;
            }
            (m, candidates, start.elapsed().as_secs_f64())
        })
        .collect()
}

fn node_table(res: &SweepResult) -> String {
    let mut out = format!("{METRICS_HEADER}\nvalue,node,median_backlog_mean,energy_mj_mean,overhead_mean\n");
    for row in &res.rows {
        let runs: Vec<_> = res.runs.iter().filter(|r| r.value == row.value).collect();
        let Some(first) = runs.first() else { continue };
        for n in &first.summary.nodes {
            let pick = |f: &dyn Fn(&engine::metrics::NodeSummary) -> f64| {
                runs.iter().filter_map(|r| r.summary.node(n.id)).map(f).sum::<f64>() / runs.len() as f64
            };
            let _ = writeln!(
                out,
                "{},{},{:.2},{:.3},{:.1}",
                row.value,
                n.id,
                pick(&|x| x.median_backlog),
                pick(&|x| x.energy_mj),
                pick(&|x| x.overhead as f64)
            );
        }
    }
    out
}

pub fn cmd_paper_suite(a: &SuiteArgs) -> Result<String, CliError> {
    if a.seeds == 0 {
        return Err(CliError::Config("--seeds must be at least 1".into()));
    }
    let root = &a.out;
    let mut report = String::new();

    write(&root.join("preconditioning"), "table.csv", &preconditioning_csv(10_000, 1))?;
    let _ = writeln!(report, "preconditioning: 10000 blocks");

    let mut cost = format!("{METRICS_HEADER}\nfield_bits,candidates\n");
    let mut timing = String::from("field_bits seconds\n");
    for (m, c, secs) in field_cost(20, 1) {
        let _ = writeln!(cost, "{m},{c}");
        let _ = writeln!(timing, "{m} {secs:.4}");
    }
    write(&root.join("field_size"), "cost.csv", &cost)?;
    // wall-clock, so kept out of the csv files
    write(&root.join("field_size"), "timing.txt", &timing)?;

    for name in ["line7", "ring7", "grid6"] {
        let base = Scenario::builtin(name)?;
        let dir = root.join(name);
        let single = engine::run(&base)?;
        write(&dir, "metrics.csv", &single.metrics.metrics_csv())?;
        write(&dir, "summary.json", &single.summary.to_json())?;
        let res = engine::sweep(&base, "duration", &[base.duration_s.to_string()], &seed_list(base.seed, a.seeds), true)?;
        write(&dir, "nodes.csv", &node_table(&res))?;
        write(&dir, "runs.csv", &runs_csv(&res))?;
        let _ = writeln!(report, "{name}: {:.3} pkt/s (seed {})", single.summary.throughput_pps, base.seed);
    }

    let bf = Scenario::builtin("butterfly7")?;
    let seeds = seed_list(bf.seed, a.seeds);
    let mut lossy = bf.clone();
    lossy.set_param("data_loss", "0.2")?;
    let dec = engine::sweep(&lossy, "decoder", &["full".into(), "rankdef".into()], &seeds, true)?;
    write(&root.join("decoder_accuracy"), "sweep.csv", &dec.to_csv())?;
    write(&root.join("decoder_accuracy"), "accuracy.csv", &dec.accuracy_csv())?;

    let hs: Vec<String> = ["2", "4", "6", "8"].iter().map(|s| s.to_string()).collect();
    let blk = engine::sweep(&bf, "block_size", &hs, &seeds, true)?;
    write(&root.join("block_size"), "sweep.csv", &blk.to_csv())?;
    write(&root.join("block_size"), "nodes.csv", &node_table(&blk))?;
    write(&root.join("block_size"), "runs.csv", &runs_csv(&blk))?;
    let best = blk
        .rows
        .iter()
        .max_by(|x, y| x.throughput_pps.mean.total_cmp(&y.throughput_pps.mean))
        .map(|r| r.value.clone())
        .unwrap_or_default();
    let _ = writeln!(report, "block size with the highest throughput: {best}");
    write(root, "report.txt", &report)?;
    Ok(format!("paper suite -> {}\n{report}", root.display()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn param_parsing() {
        assert_eq!(parse_param("block_size=2,4").unwrap(), ("block_size".into(), vec!["2".into(), "4".into()]));
        assert_eq!(parse_param("block_size=").unwrap_err().exit_code(), 2);
        assert_eq!(parse_param("nope=1").unwrap_err().exit_code(), 2);
        assert_eq!(parse_param("block_size").unwrap_err().exit_code(), 2);
    }

    #[test]
    fn field_cost_grows_with_width() {
        let c = field_cost(2, 3);
        assert!(c.windows(2).all(|w| w[1].1 > w[0].1), "{c:?}");
    }
}
