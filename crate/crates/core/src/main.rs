use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use sdgrid::bench::{compare_latency, run_pingpong, run_sweep, run_telemetry_matrix, MatrixRun, PingPongResult};
use sdgrid::config::{ConfigError, ScenarioConfig};
use sdgrid::controlplane::ClusterMode;
use sdgrid::metrics::{export_csv, fmt6, mean_series, phase_summary, LatencyRow, Reports, SummaryRow};
use sdgrid::network::NetConfig;
use sdgrid::sim::SimTime;
use sdgrid::traffic::{run_dos_scenario, DosRun, Scale};

#[derive(Parser, Debug)]
#[command(name = "sdgrid", version, about = "Centralized vs distributed SDN control over a grid network")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Flooding attack against a victim host, per control-plane mode.
    RunDos(Common),
    /// Controller benchmarks.
    Bench {
        #[command(subcommand)]
        kind: BenchKind,
    },
    /// Telemetry matrix of the whole network over time.
    ExportMatrix {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        rows: Option<usize>,
        #[arg(long)]
        cols: Option<usize>,
    },
    /// Check a configuration without running anything.
    Validate(Common),
}

#[derive(Subcommand, Debug)]
enum BenchKind {
    /// Controller responses per second against switch count.
    Sweep(Common),
    /// Round-trip latency between two distant hosts.
    Pingpong(Common),
}

#[derive(Args, Debug, Clone)]
struct Common {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Base seed; repeat to list one seed per replication.
    #[arg(long)]
    seed: Vec<u64>,
    #[arg(long)]
    reps: Option<u32>,
    #[arg(long, value_parser = parse_scale)]
    scale: Option<Scale>,
}

fn parse_scale(s: &str) -> Result<Scale, String> {
    match s {
        "desk" => Ok(Scale::Desk),
        "full" => Ok(Scale::Full),
        _ => Err(format!("unknown scale '{s}', expected desk or full")),
    }
}

enum Failure {
    Usage(String),
    Config(ConfigError),
    Runtime(String),
}

impl Failure {
    fn report(&self) -> ExitCode {
        let (kind, msg, code) = match self {
            Failure::Usage(m) => ("usage", m.clone(), 2),
            Failure::Config(e) => ("config", e.to_string(), 2),
            Failure::Runtime(m) => ("runtime", m.clone(), 3),
        };
        eprintln!("{}", json!({ "error": kind, "message": msg }));
        ExitCode::from(code)
    }
}

fn runtime<E: std::fmt::Display>(e: E) -> Failure {
    Failure::Runtime(e.to_string())
}

fn load(common: &Common) -> Result<ScenarioConfig, Failure> {
    let mut cfg = match &common.config {
        Some(p) => ScenarioConfig::load(p).map_err(Failure::Config)?,
        None => ScenarioConfig::default(),
    };
    if !common.seed.is_empty() {
        cfg.seeds = common.seed.clone();
    }
    if let Some(r) = common.reps {
        cfg.replications = r;
    }
    if let Some(s) = common.scale {
        cfg.scale = s;
    }
    cfg.validate().map_err(Failure::Config)?;
    Ok(cfg)
}

fn prepare_out(cfg: &ScenarioConfig, out: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(out).map_err(|e| runtime(format!("{}: {e}", out.display())))?;
    let echo = out.join("config_echo.toml");
    std::fs::write(&echo, cfg.to_toml()).map_err(|e| runtime(format!("{}: {e}", echo.display())))
}

fn run_dos(common: &Common) -> Result<(), Failure> {
    let cfg = load(common)?;
    prepare_out(&cfg, &common.out)?;
    let topo = cfg.topology().map_err(Failure::Config)?;
    let scn = cfg.attack();
    let net = cfg.apply_network(scn.net_config());
    let failure = cfg.failure();
    let jobs: Vec<(ClusterMode, u32)> =
        cfg.cluster.modes.iter().flat_map(|m| (0..cfg.replications).map(move |r| (*m, r))).collect();
    let runs: Vec<Result<DosRun, String>> = std::thread::scope(|s| {
        let handles: Vec<_> = jobs
            .iter()
            .map(|&(m, r)| {
                let (cfg, topo, scn, net) = (&cfg, &topo, &scn, &net);
                s.spawn(move || {
                    run_dos_scenario(scn, &cfg.cluster(m), topo.clone(), net, cfg.seed_for(r), r, failure)
                        .map_err(|e| e.to_string())
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("run worker panicked")).collect()
    });
    let runs: Vec<DosRun> = runs.into_iter().collect::<Result<_, _>>().map_err(Failure::Runtime)?;
    let mut reports = Reports::default();
    for run in &runs {
        reports.add_series(&run.report.series);
    }
    let (a, b) = scn.attack_window;
    for m in &cfg.cluster.modes {
        let series: Vec<_> = runs.iter().filter(|r| r.report.mode == m.label()).map(|r| r.report.series.clone()).collect();
        let mean = mean_series(&series);
        let s = phase_summary(&mean, scn.window.as_secs_f64(), (a.as_secs_f64(), b.as_secs_f64()), scn.warmup.as_secs_f64())
            .map_err(runtime)?;
        println!(
            "{}: pre {} bit/s, loss during {:.2}%, worst after {:.2}% ({} reps)",
            m.label(),
            s.pre_bps.round(),
            s.loss_during_pct,
            s.loss_post_min_pct,
            series.len()
        );
        reports.summary.push(SummaryRow::from_summary(m.label(), &s));
    }
    for p in export_csv(&reports, &common.out).map_err(runtime)? {
        println!("wrote {}", p.display());
    }
    Ok(())
}

fn bench_sweep(common: &Common) -> Result<(), Failure> {
    let cfg = load(common)?;
    prepare_out(&cfg, &common.out)?;
    let clusters: Vec<_> = cfg.cluster.modes.iter().map(|m| cfg.cluster(*m)).collect();
    let points = run_sweep(&cfg.sweep(), &clusters).map_err(runtime)?;
    let path = common.out.join("sweep.csv");
    let mut w = csv::Writer::from_path(&path).map_err(runtime)?;
    w.write_record(["mode", "switches", "responses_per_s", "capacity_oracle"]).map_err(runtime)?;
    for p in &points {
        w.write_record([p.mode.label().to_string(), p.switches.to_string(), fmt6(p.responses_per_s), fmt6(p.capacity_oracle)])
            .map_err(runtime)?;
        println!("{} n={}: {:.0} responses/s", p.mode.label(), p.switches, p.responses_per_s);
    }
    w.flush().map_err(runtime)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn bench_pingpong(common: &Common) -> Result<(), Failure> {
    let cfg = load(common)?;
    prepare_out(&cfg, &common.out)?;
    let topo = cfg.topology().map_err(Failure::Config)?;
    let net = cfg.apply_network(NetConfig::default());
    let seed = cfg.seed_for(0);
    let jobs: Vec<_> = cfg
        .bench
        .pingpong
        .transports
        .iter()
        .flat_map(|t| cfg.cluster.modes.iter().map(move |m| (*t, *m)))
        .collect();
    let results: Vec<Result<PingPongResult, String>> = std::thread::scope(|s| {
        let handles: Vec<_> = jobs
            .iter()
            .map(|&(t, m)| {
                let (cfg, topo, net) = (&cfg, &topo, &net);
                s.spawn(move || run_pingpong(&cfg.pingpong(t), topo.clone(), &cfg.cluster(m), net, seed).map_err(|e| e.to_string()))
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("ping worker panicked")).collect()
    });
    let results: Vec<PingPongResult> = results.into_iter().collect::<Result<_, _>>().map_err(Failure::Runtime)?;
    let mut reports = Reports::default();
    for r in &results {
        for s in &r.samples {
            if let Some(rtt) = s.rtt {
                let rtt_us = rtt.as_micros_f64();
                reports.latency.push(LatencyRow {
                    seq: s.seq,
                    rtt_us,
                    one_way_us: rtt_us / 2.0,
                    mode: r.mode.label().to_string(),
                    transport: r.config.transport.label().to_string(),
                });
            }
        }
        println!(
            "{} {} {:?}: mean one-way {:.1} us, lost {}",
            r.mode.label(),
            r.config.transport.label(),
            r.endpoints,
            r.mean_one_way_us(),
            r.lost()
        );
    }
    for t in &cfg.bench.pingpong.transports {
        let find = |m| results.iter().find(|r| r.config.transport == *t && r.mode == m);
        if let (Some(d), Some(c)) = (find(ClusterMode::DistributedFlat), find(ClusterMode::Centralized)) {
            let red = compare_latency(d, c).map_err(runtime)?;
            println!("{}: distributed latency is {:.2}% below centralized", t.label(), red);
        }
    }
    for p in export_csv(&reports, &common.out).map_err(runtime)? {
        println!("wrote {}", p.display());
    }
    Ok(())
}

fn export_matrix(common: &Common, rows: Option<usize>, cols: Option<usize>) -> Result<(), Failure> {
    let mut cfg = load(common)?;
    if let Some(r) = rows {
        cfg.matrix.rows = r;
    }
    if let Some(c) = cols {
        cfg.matrix.cols = c;
    }
    cfg.validate().map_err(Failure::Config)?;
    prepare_out(&cfg, &common.out)?;
    let m = &cfg.matrix;
    let run = MatrixRun {
        rows: m.rows,
        cols: m.cols,
        sample_interval: SimTime::from_secs_f64(m.sample_interval_s),
        group_size: m.group_size,
        period: SimTime::from_secs_f64(m.period_s),
        packet_size: m.packet_size,
        sink: m.sink,
    };
    let topo = cfg.topology().map_err(Failure::Config)?;
    let net = cfg.apply_network(NetConfig::default());
    let path = common.out.join("matrix.csv");
    let out = run_telemetry_matrix(&run, topo, &cfg.cluster(m.mode), &net, cfg.seed_for(0), &path).map_err(runtime)?;
    println!(
        "wrote {} ({} x {}, {:.3} ms per row)",
        path.display(),
        out.rows,
        out.cols,
        out.wall.as_secs_f64() * 1e3 / out.rows as f64
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => return Failure::Usage(e.to_string().trim().to_string()).report(),
    };
    let res = match &cli.command {
        Command::RunDos(c) => run_dos(c),
        Command::Bench { kind: BenchKind::Sweep(c) } => bench_sweep(c),
        Command::Bench { kind: BenchKind::Pingpong(c) } => bench_pingpong(c),
        Command::ExportMatrix { common, rows, cols } => export_matrix(common, *rows, *cols),
        Command::Validate(c) => load(c).map(|_| println!("configuration is valid")),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => f.report(),
    }
}
