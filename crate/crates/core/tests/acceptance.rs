//! Acceptance run: one PASS/FAIL line per criterion.

mod common;

use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use sdgrid::bench::{compare_latency, run_pingpong, run_sweep, PingPongResult, Transport};
use sdgrid::config::ScenarioConfig;
use sdgrid::controlplane::ClusterMode;
use sdgrid::dataplane::simulate_mm1_port;
use sdgrid::metrics::matrix_shape;
use sdgrid::network::{ControlEventKind, NetConfig, NetworkSim, PingResult, SourceOptions};
use sdgrid::queueing::{
    expected_wait, interarrival_pdf, mean_iat, propagation_delay, service_pdf, throughput_bound, total_latency,
    LatencyBreakdown, QueueParams, ThroughputInputs,
};
use sdgrid::sim::SimTime;
use sdgrid::topology::{build_ieee118, NodeId, DEFAULT_MEAN_PD_US, DEFAULT_PD_NOISE_US};
use sdgrid::traffic::{run_dos_scenario, DosRun};

use common::{brute_hops, fixed, random_graph, rel_err_ok, Fixed};

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn c1_queueing() -> Outcome {
    let t = Instant::now();
    let out = simulate_mm1_port(0.8, 1.0, 400_000, 11);
    let w = expected_wait(QueueParams::new(0.8, 1.0).unwrap()).unwrap();
    let err = (out.mean_sojourn_s - w).abs() / w;
    let wall = t.elapsed().as_secs_f64();
    check(out.served >= 100_000, format!("only {} packets served", out.served))?;
    check(err < 0.05, format!("mean sojourn {:.4} s vs {w} s", out.mean_sojourn_s))?;
    check(wall < 10.0, format!("took {wall:.2} s"))?;
    Ok(format!("mean sojourn {:.4} s vs {w} s ({:.2}% off, {} packets, {wall:.2} s)", out.mean_sojourn_s, err * 100.0, out.served))
}

fn c2_formulas() -> Outcome {
    let lambdas = [0.05, 0.3, 1.0, 2.5, 7.0, 19.0, 64.0, 150.0, 1e3, 2.2e4];
    let times = [0.0, 1e-4, 3e-3, 0.02, 0.11, 0.5, 1.3, 4.0, 9.5, 25.0];
    let mut points = 0;
    for &l in &lambdas {
        for &t in &times {
            if l * t > 40.0 {
                continue;
            }
            let want = fixed(l) * Fixed::exp_neg(&(fixed(l) * fixed(t) / Fixed::scale())) / Fixed::scale();
            check(rel_err_ok(interarrival_pdf(t, l).unwrap(), &want), format!("f({t}; {l})"))?;
            check(rel_err_ok(service_pdf(t, l).unwrap(), &want), format!("g({t}; {l})"))?;
            points += 2;
        }
        let want = Fixed::scale() * Fixed::scale() / fixed(l);
        check(rel_err_ok(mean_iat(l).unwrap(), &want), format!("mean IAT {l}"))?;
        points += 1;
    }
    let million = fixed(1e6);
    for &d in &[0.0, 0.5, 3.3, 17.0, 40.6614, 99.9, 250.0, 1234.5, 5000.0, 20037.5] {
        for &v in &[1.0e5, 1.5e5, 2.0e5, 2.3e5, 2.99792458e5] {
            let want = fixed(d) * &million / fixed(v);
            check(rel_err_ok(propagation_delay(d, v).unwrap(), &want), format!("PD {d} km at {v}"))?;
            points += 1;
        }
    }
    let parts = [0.0, 0.0256, 1.2, 10.0, 203.307, 512.75, 3333.3];
    for &a in &parts {
        for &b in &parts {
            for &c in &[0.5, 203.307, 1e4] {
                let want = fixed(a) + fixed(b) + fixed(c);
                check(rel_err_ok(total_latency(LatencyBreakdown::new(a, b, c).unwrap()), &want), format!("L({a},{b},{c})"))?;
                points += 1;
            }
        }
    }
    for &rw in &[1.0, 1500.0, 65_535.0, 1e6, 1.6e7] {
        for &rtt in &[1.0, 57.454, 406.614, 1e3, 2.5e4, 1e6] {
            let want = fixed(rw) * 8 * &million / fixed(rtt);
            check(rel_err_ok(throughput_bound(ThroughputInputs::new(rw, rtt).unwrap()), &want), format!("TH({rw},{rtt})"))?;
            points += 1;
        }
    }
    let pd = propagation_delay(40.6614, 200_000.0).unwrap();
    check((pd - 203.307).abs() <= 203.307 * 1e-9, format!("PD(40.6614 km) = {pd}"))?;
    check(points >= 100, format!("only {points} points"))?;
    Ok(format!("{points} points within 1e-9 relative; PD(40.6614 km) = {pd} us"))
}

fn c3_topology() -> Outcome {
    let t = build_ieee118(42, DEFAULT_MEAN_PD_US, DEFAULT_PD_NOISE_US);
    let (h, s) = (t.hosts().count(), t.switches().count());
    check((h, s) == (118, 45), format!("{h} hosts, {s} switches"))?;
    let hosts: Vec<NodeId> = t.hosts().collect();
    let mut max = 0;
    for &a in &hosts {
        for &b in &hosts {
            max = max.max(t.shortest_path(a, b).unwrap().len() - 1);
        }
    }
    let d = t.shortest_path(NodeId::host(1), NodeId::host(112)).unwrap().len() - 1;
    check(d == max, format!("(1, 112) spans {d} hops, maximum is {max}"))?;
    let mut graphs = 0;
    for seed in 0..60 {
        let g = random_graph(seed, 20);
        let topo = sdgrid::topology::load_topology(&g.toml).map_err(|e| e.to_string())?;
        for &a in &g.hosts {
            for &b in &g.hosts {
                if a == b {
                    continue;
                }
                let want = brute_hops(&g, a, b);
                match (topo.shortest_path(a, b), want) {
                    (Ok(p), Some(w)) => {
                        check(p.len() - 1 == w, format!("seed {seed} {a}->{b}: {} hops vs {w}", p.len() - 1))?;
                        check(p.windows(2).all(|x| g.adjacent(x[0], x[1])), format!("seed {seed}: path uses a missing link"))?;
                    }
                    (Err(_), None) => {}
                    (got, want) => return Err(format!("seed {seed} {a}->{b}: {got:?} vs {want:?}")),
                }
            }
        }
        graphs += 1;
    }
    Ok(format!("118 hosts / 45 switches, (1, 112) spans the maximum {max} hops, {graphs} brute-forced subgraphs agree"))
}

struct DosRuns {
    central: Vec<DosRun>,
    dist: Vec<DosRun>,
    wall: f64,
}

fn dos_runs(cfg: &ScenarioConfig) -> Result<DosRuns, String> {
    let t = Instant::now();
    let topo = cfg.topology().map_err(|e| e.to_string())?;
    let scn = cfg.attack();
    let net = cfg.apply_network(scn.net_config());
    let jobs: Vec<(ClusterMode, u32)> =
        [ClusterMode::Centralized, ClusterMode::DistributedFlat].iter().flat_map(|m| (0..3).map(move |r| (*m, r))).collect();
    let mut runs: Vec<(ClusterMode, DosRun)> = std::thread::scope(|s| {
        let hs: Vec<_> = jobs
            .iter()
            .map(|&(m, r)| {
                let (topo, scn, net) = (&topo, &scn, &net);
                s.spawn(move || (m, run_dos_scenario(scn, &cfg.cluster(m), topo.clone(), net, cfg.seed_for(r), r, None)))
            })
            .collect();
        hs.into_iter().map(|h| h.join().unwrap()).map(|(m, r)| (m, r.unwrap())).collect()
    });
    let dist = runs.split_off(3).into_iter().map(|r| r.1).collect();
    let central = runs.into_iter().map(|r| r.1).collect();
    Ok(DosRuns { central, dist, wall: t.elapsed().as_secs_f64() })
}

fn c4_dos_ordering(r: &DosRuns) -> Outcome {
    let mut line = Vec::new();
    for (c, d) in r.central.iter().zip(&r.dist) {
        let (lc, ld) = (c.report.summary.loss_during_pct, d.report.summary.loss_during_pct);
        check(ld < lc, format!("rep {}: distributed {ld:.2}% >= centralized {lc:.2}%", c.report.rep))?;
        check((35.0..=50.0).contains(&lc), format!("rep {}: centralized loss {lc:.2}% outside [35, 50]", c.report.rep))?;
        check((22.0..=35.0).contains(&ld), format!("rep {}: distributed loss {ld:.2}% outside [22, 35]", c.report.rep))?;
        line.push(format!("{lc:.2}/{ld:.2}"));
    }
    check(r.wall < 60.0, format!("took {:.1} s", r.wall))?;
    Ok(format!("centralized/distributed during-attack loss per rep: {} ({:.1} s)", line.join(", "), r.wall))
}

fn c5_resilience(r: &DosRuns, cfg: &ScenarioConfig) -> Outcome {
    let scn = cfg.attack();
    let stop = scn.attack_window.1.as_secs_f64();
    let w = scn.window.as_secs_f64();
    let mut recov = Vec::new();
    for (c, d) in r.central.iter().zip(&r.dist) {
        let s = &d.report.summary;
        let bps = d.report.series.bits_per_s();
        let first = bps
            .iter()
            .enumerate()
            .find(|(i, v)| *i as f64 * w >= stop && **v >= 0.95 * s.pre_bps)
            .map(|(i, _)| (i + 1) as f64 * w - stop);
        let after = first.ok_or_else(|| format!("rep {}: distributed never recovers", d.report.rep))?;
        check(after <= 5.0, format!("rep {}: distributed recovers {after:.1} s after stop", d.report.rep))?;
        let cs = &c.report.summary;
        check(cs.loss_post_min_pct >= 50.0, format!("rep {}: centralized post-min loss {:.1}%", c.report.rep, cs.loss_post_min_pct))?;
        check(cs.post_min_bps < s.post_min_bps, format!("rep {}: centralized post-min not below distributed", c.report.rep))?;
        recov.push(after);
    }
    Ok(format!(
        "distributed back above 95% within {:.1} s; centralized post-min loss {:.1}%",
        recov.iter().cloned().fold(0.0, f64::max),
        r.central.iter().map(|c| c.report.summary.loss_post_min_pct).fold(f64::INFINITY, f64::min)
    ))
}

fn c6_sweep(cfg: &ScenarioConfig) -> Outcome {
    let sweep = cfg.sweep();
    let clusters: Vec<_> = [ClusterMode::Centralized, ClusterMode::DistributedFlat].iter().map(|m| cfg.cluster(*m)).collect();
    let pts = run_sweep(&sweep, &clusters).map_err(|e| e.to_string())?;
    let mut by: BTreeMap<(u32, bool), f64> = BTreeMap::new();
    for p in &pts {
        let dev = (p.responses_per_s - p.capacity_oracle).abs() / p.capacity_oracle;
        check(dev <= 0.02, format!("{} n={}: {:.1} vs oracle {:.1}", p.mode.label(), p.switches, p.responses_per_s, p.capacity_oracle))?;
        by.insert((p.switches, p.mode == ClusterMode::DistributedFlat), p.responses_per_s);
    }
    for dist in [false, true] {
        let v: Vec<f64> = sweep.switch_counts.iter().map(|n| by[&(*n, dist)]).collect();
        check(v.windows(2).all(|w| w[1] <= w[0]), format!("not non-increasing: {v:?}"))?;
    }
    for n in &sweep.switch_counts {
        check(by[&(*n, true)] >= by[&(*n, false)], format!("n={n}: distributed below centralized"))?;
    }
    Ok(format!("{} points non-increasing, distributed >= centralized, all within 2% of capacity", pts.len()))
}

fn reference_result(mode: ClusterMode, one_way_us: f64) -> PingPongResult {
    let rtt = SimTime::from_nanos((one_way_us * 2e3).round() as u64);
    PingPongResult {
        mode,
        config: Default::default(),
        endpoints: (1, 112),
        samples: vec![PingResult { seq: 0, rtt: Some(rtt), one_way: Some(SimTime::from_nanos(rtt.as_nanos() / 2)) }],
    }
}

fn c7_latency(cfg: &ScenarioConfig) -> Outcome {
    let topo = cfg.topology().map_err(|e| e.to_string())?;
    let net = cfg.apply_network(NetConfig::default());
    let mut reds = Vec::new();
    for t in [Transport::Unacknowledged, Transport::Acknowledged] {
        let pc = cfg.pingpong(t);
        let run = |m| run_pingpong(&pc, topo.clone(), &cfg.cluster(m), &net, cfg.seed_for(0)).map_err(|e| e.to_string());
        let c = run(ClusterMode::Centralized)?;
        let d = run(ClusterMode::DistributedFlat)?;
        let red = compare_latency(&d, &c).map_err(|e| e.to_string())?;
        check(red > 20.0, format!("{}: reduction {red:.2}%", t.label()))?;
        reds.push(format!("{} {red:.2}%", t.label()));
    }
    let udp = compare_latency(&reference_result(ClusterMode::DistributedFlat, 28.727), &reference_result(ClusterMode::Centralized, 37.876))
        .map_err(|e| e.to_string())?;
    let tcp = compare_latency(&reference_result(ClusterMode::DistributedFlat, 28.846), &reference_result(ClusterMode::Centralized, 42.345))
        .map_err(|e| e.to_string())?;
    check((udp - 24.15).abs() < 0.01, format!("reference UDP reduction {udp}"))?;
    check((tcp - 31.88).abs() < 0.01, format!("reference TCP reduction {tcp}"))?;
    Ok(format!("simulated reduction {}; reference means give {udp:.4}% / {tcp:.4}%", reds.join(", ")))
}

fn failover_run(cfg: &ScenarioConfig, mode: ClusterMode) -> Result<(NetworkSim, u32, u32), String> {
    let scn = cfg.attack();
    let cluster = cfg.cluster(mode);
    let mut sim = NetworkSim::new(cfg.topology().map_err(|e| e.to_string())?, cluster, cfg.apply_network(scn.net_config()), cfg.seed_for(0))
        .map_err(|e| e.to_string())?;
    let bg = sim
        .add_source("background", scn.background, SourceOptions { ack_every: Some(scn.ack_every), window_bytes: None, record: false })
        .map_err(|e| e.to_string())?;
    let fl = sim.add_source("flood", scn.flood, SourceOptions::default()).map_err(|e| e.to_string())?;
    sim.schedule_failure(1, SimTime::from_secs(15)).map_err(|e| e.to_string())?;
    Ok((sim, bg, fl))
}

fn c8_failover(cfg: &ScenarioConfig) -> Outcome {
    let scn = cfg.attack();
    let timeout = cfg.cluster(ClusterMode::DistributedFlat).failure_detection_timeout;
    let (mut d, bg, fl) = failover_run(cfg, ClusterMode::DistributedFlat)?;
    let owned_before = d.cluster().mastership().switches_of(1).len();
    d.run_until(SimTime::from_secs(15) + timeout + SimTime::from_nanos(1));
    let detected = d
        .control_log()
        .iter()
        .find(|e| e.kind == ControlEventKind::Detected(1))
        .map(|e| e.time)
        .ok_or("C1 failure never detected")?;
    check(detected <= SimTime::from_secs(15) + timeout, format!("detected at {:.3} s", detected.as_secs_f64()))?;
    let m = d.cluster().mastership();
    check(m.switches_of(1).is_empty(), format!("C1 still masters {} switches", m.switches_of(1).len()))?;
    check(m.assignment().len() == 45, "mastership lost switches")?;
    let counts: Vec<usize> = m.counts().values().cloned().collect();
    d.run_until(scn.total_duration);
    let stats = d.control_stats();
    check(stats.packet_ins_to_dead_after_detection == 0, format!("{} packet-ins reached C1 after detection", stats.packet_ins_to_dead_after_detection))?;
    for tag in [bg, fl] {
        let s = d.tag_stats(tag);
        let acc = s.delivered + s.dropped() + d.in_flight(tag);
        check(s.generated == acc, format!("{}: generated {} vs accounted {acc}", d.tag_name(tag), s.generated))?;
    }
    let (mut c, cbg, _) = failover_run(cfg, ClusterMode::Centralized)?;
    c.run_until(scn.total_duration);
    let (db, cb) = (d.tag_stats(bg).delivered_bytes, c.tag_stats(cbg).delivered_bytes);
    check(db > cb, format!("distributed delivered {db} B, centralized {cb} B"))?;
    Ok(format!(
        "C1's {owned_before} switches remastered as {counts:?} within {:.1} s; conserved; delivered {:.1} MB vs {:.1} MB",
        timeout.as_secs_f64(),
        db as f64 / 1e6,
        cb as f64 / 1e6
    ))
}

fn sdgrid(args: &[&str], out: &Path) -> Result<(), String> {
    let st = Command::new(env!("CARGO_BIN_EXE_sdgrid"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .map_err(|e| e.to_string())?;
    check(st.status.success(), format!("sdgrid {args:?} failed: {}", String::from_utf8_lossy(&st.stderr)))
}

fn c9_determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cmds: [&[&str]; 4] = [
        &["run-dos", "--seed", "7", "--reps", "2"],
        &["bench", "sweep", "--seed", "7"],
        &["bench", "pingpong", "--seed", "7"],
        &["export-matrix", "--seed", "7", "--rows", "200"],
    ];
    let mut files = 0;
    for (i, cmd) in cmds.iter().enumerate() {
        let (a, b) = (dir.path().join(format!("{i}a")), dir.path().join(format!("{i}b")));
        sdgrid(cmd, &a)?;
        sdgrid(cmd, &b)?;
        let mut names: Vec<_> = std::fs::read_dir(&a).unwrap().map(|e| e.unwrap().file_name()).collect();
        names.sort();
        for n in names {
            let (x, y) = (std::fs::read(a.join(&n)).unwrap(), std::fs::read(b.join(&n)).unwrap());
            check(x == y, format!("{:?} differs between reruns of {cmd:?}", n))?;
            files += 1;
        }
    }
    Ok(format!("{files} output files byte-identical across reruns of {} commands", cmds.len()))
}

fn c10_matrix() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let t = Instant::now();
    sdgrid(&["export-matrix"], dir.path())?;
    let wall = t.elapsed().as_secs_f64();
    let (rows, cols) = matrix_shape(&dir.path().join("matrix.csv")).map_err(|e| e.to_string())?;
    check((rows, cols) == (10_000, 691), format!("matrix is {rows} x {cols}"))?;
    let per_row = wall / rows as f64;
    check(per_row < 0.8, format!("{per_row:.3} s per row"))?;
    Ok(format!("{rows} x {cols} in {wall:.1} s ({:.3} ms per row)", per_row * 1e3))
}

fn main() {
    let cfg = ScenarioConfig::default();
    let dos = dos_runs(&cfg);
    let dos_ref = dos.as_ref().map_err(|e| e.clone());
    let results: Vec<(&str, Outcome)> = vec![
        ("1 queueing oracle", c1_queueing()),
        ("2 formula suite", c2_formulas()),
        ("3 topology contract", c3_topology()),
        ("4 dos ordering", dos_ref.clone().and_then(c4_dos_ordering)),
        ("5 post-attack resilience", dos_ref.and_then(|r| c5_resilience(r, &cfg))),
        ("6 sweep shape", c6_sweep(&cfg)),
        ("7 latency comparison", c7_latency(&cfg)),
        ("8 failover", c8_failover(&cfg)),
        ("9 determinism", c9_determinism()),
        ("10 matrix export", c10_matrix()),
    ];
    let mut failed = 0;
    for (name, r) in &results {
        match r {
            Ok(m) => println!("PASS criterion {name}: {m}"),
            Err(m) => {
                failed += 1;
                println!("FAIL criterion {name}: {m}");
            }
        }
    }
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
