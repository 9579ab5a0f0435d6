//! Throughput windows, phase summaries, CSV reports and the telemetry matrix.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::network::Telemetry;
use crate::sim::SimTime;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("attack window [{start}, {stop}) lies outside the {len}-window series")]
    WindowOutsideSeries { start: f64, stop: f64, len: usize },
    #[error("matrix dimensions must be positive, got {rows} x {cols}")]
    BadDimensions { rows: usize, cols: usize },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("malformed report: {0}")]
    Malformed(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> MetricsError + '_ {
    move |source| MetricsError::Io { path: path.to_path_buf(), source }
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> MetricsError + '_ {
    move |source| MetricsError::Csv { path: path.to_path_buf(), source }
}

/// Bits delivered per fixed window, starting at time zero.
#[derive(Clone, Debug, PartialEq)]
pub struct ThroughputSeries {
    pub mode: String,
    pub rep: u32,
    pub window: SimTime,
    pub bits: Vec<u64>,
}

impl ThroughputSeries {
    pub fn window_s(&self) -> f64 {
        self.window.as_secs_f64()
    }

    pub fn bits_per_s(&self) -> Vec<f64> {
        let w = self.window_s();
        self.bits.iter().map(|b| *b as f64 / w).collect()
    }

    pub fn total_bits(&self) -> u64 {
        self.bits.iter().sum()
    }
}

/// Buckets `(time, bits)` deliveries into windows covering `[0, duration)`;
/// later deliveries extend the series so no bits are lost.
pub fn windowed_throughput(records: &[(SimTime, u64)], window: SimTime, duration: SimTime) -> Vec<u64> {
    assert!(window > SimTime::ZERO, "window must be positive");
    let w = window.as_nanos();
    let mut n = duration.as_nanos().div_ceil(w) as usize;
    if let Some(last) = records.iter().map(|r| r.0.as_nanos() / w).max() {
        n = n.max(last as usize + 1);
    }
    let mut bins = vec![0u64; n];
    for (t, b) in records {
        bins[(t.as_nanos() / w) as usize] += b;
    }
    bins
}

/// Element-wise mean of equally windowed series, in bits per second.
pub fn mean_series(series: &[ThroughputSeries]) -> Vec<f64> {
    let n = series.iter().map(|s| s.bits.len()).max().unwrap_or(0);
    let mut out = vec![0.0; n];
    for s in series {
        for (o, v) in out.iter_mut().zip(s.bits_per_s()) {
            *o += v;
        }
    }
    let k = series.len().max(1) as f64;
    out.iter_mut().for_each(|v| *v /= k);
    out
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PhaseSummary {
    pub pre_bps: f64,
    pub during_bps: f64,
    pub post_bps: f64,
    pub post_min_bps: f64,
    pub loss_during_pct: f64,
    pub loss_post_pct: f64,
    pub loss_post_min_pct: f64,
}

/// Loss of `x` relative to `pre`, in percent. A zero baseline reports 0.
pub fn loss_pct(pre: f64, x: f64) -> f64 {
    if pre > 0.0 {
        (1.0 - x / pre) * 100.0
    } else {
        0.0
    }
}

/// Means over `[warmup, start)`, `[start, stop)` and `[stop, end)` of a
/// series given in bits per second per `window_s` window.
pub fn phase_summary(
    bps: &[f64],
    window_s: f64,
    attack: (f64, f64),
    warmup_s: f64,
) -> Result<PhaseSummary, MetricsError> {
    let (start, stop) = attack;
    let end = bps.len() as f64 * window_s;
    if !(warmup_s <= start && start <= stop && stop <= end) {
        return Err(MetricsError::WindowOutsideSeries { start, stop, len: bps.len() });
    }
    let pick = |lo: f64, hi: f64| -> Vec<f64> {
        bps.iter()
            .enumerate()
            .filter(|(i, _)| {
                let t = *i as f64 * window_s;
                t >= lo - 1e-9 && t < hi - 1e-9
            })
            .map(|(_, v)| *v)
            .collect()
    };
    let mean = |v: &[f64]| if v.is_empty() { 0.0 } else { v.iter().sum::<f64>() / v.len() as f64 };
    let pre = mean(&pick(warmup_s, start));
    let during_v = pick(start, stop);
    let post_v = pick(stop, end);
    let during = if during_v.is_empty() { pre } else { mean(&during_v) };
    let post = if post_v.is_empty() { pre } else { mean(&post_v) };
    let post_min = post_v.iter().copied().fold(f64::INFINITY, f64::min);
    let post_min = if post_min.is_finite() { post_min } else { pre };
    Ok(PhaseSummary {
        pre_bps: pre,
        during_bps: during,
        post_bps: post,
        post_min_bps: post_min,
        loss_during_pct: loss_pct(pre, during),
        loss_post_pct: loss_pct(pre, post),
        loss_post_min_pct: loss_pct(pre, post_min),
    })
}

/// Result of one scenario run.
#[derive(Clone, Debug, PartialEq)]
pub struct RunReport {
    pub mode: String,
    pub rep: u32,
    pub seed: u64,
    pub series: ThroughputSeries,
    pub summary: PhaseSummary,
    /// Acknowledgement round trips of the background transfer.
    pub rtts: Vec<SimTime>,
    pub events: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub mode: String,
    pub pre_bps: f64,
    pub during_bps: f64,
    pub post_bps: f64,
    pub loss_during_pct: f64,
    pub loss_post_min_pct: f64,
}

impl SummaryRow {
    pub fn from_summary(mode: &str, s: &PhaseSummary) -> Self {
        SummaryRow {
            mode: mode.to_string(),
            pre_bps: s.pre_bps,
            during_bps: s.during_bps,
            post_bps: s.post_bps,
            loss_during_pct: s.loss_during_pct,
            loss_post_min_pct: s.loss_post_min_pct,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LatencyRow {
    pub seq: u64,
    pub rtt_us: f64,
    pub one_way_us: f64,
    pub mode: String,
    pub transport: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ThroughputRow {
    pub time_s: f64,
    pub bits_per_s: f64,
    pub mode: String,
    pub rep: u32,
}

/// Everything a command writes, in memory.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Reports {
    pub throughput: Vec<ThroughputRow>,
    pub summary: Vec<SummaryRow>,
    pub latency: Vec<LatencyRow>,
}

impl Reports {
    pub fn add_series(&mut self, s: &ThroughputSeries) {
        let w = s.window_s();
        for (i, v) in s.bits_per_s().into_iter().enumerate() {
            self.throughput.push(ThroughputRow { time_s: i as f64 * w, bits_per_s: v, mode: s.mode.clone(), rep: s.rep });
        }
    }
}

pub fn fmt6(v: f64) -> String {
    format!("{v:.6}")
}

pub const THROUGHPUT_HEADER: [&str; 4] = ["time_s", "bits_per_s", "mode", "rep"];
pub const LATENCY_HEADER: [&str; 5] = ["seq", "rtt_us", "one_way_us", "mode", "transport"];
pub const SUMMARY_HEADER: [&str; 6] = ["mode", "pre_bps", "during_bps", "post_bps", "loss_during_pct", "loss_post_min_pct"];

fn write_csv(path: &Path, header: &[&str], rows: impl Iterator<Item = Vec<String>>) -> Result<(), MetricsError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    w.write_record(header).map_err(csv_err(path))?;
    for r in rows {
        w.write_record(&r).map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// Writes the non-empty parts of `reports` into `dir`; returns the files written.
pub fn export_csv(reports: &Reports, dir: &Path) -> Result<Vec<PathBuf>, MetricsError> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut out = Vec::new();
    if !reports.throughput.is_empty() {
        let p = dir.join("throughput.csv");
        let rows = reports
            .throughput
            .iter()
            .map(|r| vec![fmt6(r.time_s), fmt6(r.bits_per_s), r.mode.clone(), r.rep.to_string()]);
        write_csv(&p, &THROUGHPUT_HEADER, rows)?;
        out.push(p);
    }
    if !reports.latency.is_empty() {
        let p = dir.join("latency.csv");
        let rows = reports.latency.iter().map(|r| {
            vec![r.seq.to_string(), fmt6(r.rtt_us), fmt6(r.one_way_us), r.mode.clone(), r.transport.clone()]
        });
        write_csv(&p, &LATENCY_HEADER, rows)?;
        out.push(p);
    }
    if !reports.summary.is_empty() {
        let p = dir.join("summary.csv");
        let rows = reports.summary.iter().map(|r| {
            vec![
                r.mode.clone(),
                fmt6(r.pre_bps),
                fmt6(r.during_bps),
                fmt6(r.post_bps),
                fmt6(r.loss_during_pct),
                fmt6(r.loss_post_min_pct),
            ]
        });
        write_csv(&p, &SUMMARY_HEADER, rows)?;
        out.push(p);
    }
    Ok(out)
}

fn read_records(path: &Path, header: &[&str]) -> Result<Option<Vec<csv::StringRecord>>, MetricsError> {
    if !path.exists() {
        return Ok(None);
    }
    let mut r = csv::Reader::from_path(path).map_err(csv_err(path))?;
    let h = r.headers().map_err(csv_err(path))?;
    if h.iter().ne(header.iter().copied()) {
        return Err(MetricsError::Malformed(format!("{}: unexpected header", path.display())));
    }
    let recs = r.records().collect::<Result<Vec<_>, _>>().map_err(csv_err(path))?;
    Ok(Some(recs))
}

fn field<T: std::str::FromStr>(r: &csv::StringRecord, i: usize) -> Result<T, MetricsError> {
    r.get(i)
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| MetricsError::Malformed(format!("bad field {i} in {r:?}")))
}

/// Reads back whatever [`export_csv`] wrote into `dir`.
pub fn parse_csv(dir: &Path) -> Result<Reports, MetricsError> {
    let mut out = Reports::default();
    if let Some(recs) = read_records(&dir.join("throughput.csv"), &THROUGHPUT_HEADER)? {
        for r in recs {
            out.throughput.push(ThroughputRow {
                time_s: field(&r, 0)?,
                bits_per_s: field(&r, 1)?,
                mode: field(&r, 2)?,
                rep: field(&r, 3)?,
            });
        }
    }
    if let Some(recs) = read_records(&dir.join("latency.csv"), &LATENCY_HEADER)? {
        for r in recs {
            out.latency.push(LatencyRow {
                seq: field(&r, 0)?,
                rtt_us: field(&r, 1)?,
                one_way_us: field(&r, 2)?,
                mode: field(&r, 3)?,
                transport: field(&r, 4)?,
            });
        }
    }
    if let Some(recs) = read_records(&dir.join("summary.csv"), &SUMMARY_HEADER)? {
        for r in recs {
            out.summary.push(SummaryRow {
                mode: field(&r, 0)?,
                pre_bps: field(&r, 1)?,
                during_bps: field(&r, 2)?,
                post_bps: field(&r, 3)?,
                loss_during_pct: field(&r, 4)?,
                loss_post_min_pct: field(&r, 5)?,
            });
        }
    }
    Ok(out)
}

/// Column labels of the telemetry matrix in their fixed order, before padding.
pub fn telemetry_labels(t: &Telemetry) -> Vec<String> {
    let mut l = Vec::new();
    for h in 1..=t.host_rx_packets.len() {
        l.push(format!("h{h}.rx_packets"));
        l.push(format!("h{h}.rx_bytes"));
        l.push(format!("h{h}.latency_us"));
    }
    for (s, p, _) in &t.port_queue {
        l.push(format!("{s}.p{p}.queue"));
    }
    for (s, _, _) in &t.switch_state {
        l.push(format!("{s}.drops"));
    }
    for (s, _, _) in &t.switch_state {
        l.push(format!("{s}.table"));
    }
    for (c, _) in &t.controller_inbox {
        l.push(format!("c{c}.inbox"));
    }
    l
}

/// One matrix row: per-interval deltas for counters, current values for
/// gauges, interval mean for latencies.
pub fn telemetry_row(prev: &Telemetry, cur: &Telemetry) -> Vec<f64> {
    let mut r = Vec::new();
    for h in 0..cur.host_rx_packets.len() {
        let dp = cur.host_rx_packets[h] - prev.host_rx_packets[h];
        r.push(dp as f64);
        r.push((cur.host_rx_bytes[h] - prev.host_rx_bytes[h]) as f64);
        let dl = cur.host_latency_sum_us[h] - prev.host_latency_sum_us[h];
        r.push(if dp > 0 { dl / dp as f64 } else { 0.0 });
    }
    r.extend(cur.port_queue.iter().map(|q| q.2 as f64));
    r.extend(cur.switch_state.iter().zip(&prev.switch_state).map(|(c, p)| (c.1 - p.1) as f64));
    r.extend(cur.switch_state.iter().map(|s| s.2 as f64));
    r.extend(cur.controller_inbox.iter().map(|c| c.1 as f64));
    r
}

/// Truncates or zero-pads labels to `cols`; padded columns are named `pad_N`.
pub fn fit_labels(mut labels: Vec<String>, cols: usize) -> Vec<String> {
    let real = labels.len();
    labels.truncate(cols);
    for i in real..cols {
        labels.push(format!("pad_{}", i - real));
    }
    labels
}

/// Streams a matrix to `path`: a label row, then one row per sample. Rows
/// shorter than the header are zero-padded.
pub struct MatrixWriter {
    path: PathBuf,
    out: BufWriter<File>,
    cols: usize,
    rows: usize,
    line: String,
}

impl MatrixWriter {
    pub fn create(path: &Path, labels: &[String]) -> Result<Self, MetricsError> {
        if labels.is_empty() {
            return Err(MetricsError::BadDimensions { rows: 0, cols: 0 });
        }
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(io_err(parent))?;
        }
        let file = File::create(path).map_err(io_err(path))?;
        let mut out = BufWriter::new(file);
        writeln!(out, "{}", labels.join(",")).map_err(io_err(path))?;
        Ok(MatrixWriter { path: path.to_path_buf(), out, cols: labels.len(), rows: 0, line: String::new() })
    }

    pub fn write_row(&mut self, values: &[f64]) -> Result<(), MetricsError> {
        use std::fmt::Write as _;
        self.line.clear();
        for i in 0..self.cols {
            if i > 0 {
                self.line.push(',');
            }
            let v = values.get(i).copied().unwrap_or(0.0);
            write!(self.line, "{v:.6}").expect("string write");
        }
        self.line.push('\n');
        self.out.write_all(self.line.as_bytes()).map_err(io_err(&self.path))?;
        self.rows += 1;
        Ok(())
    }

    pub fn finish(mut self) -> Result<usize, MetricsError> {
        self.out.flush().map_err(io_err(&self.path))?;
        Ok(self.rows)
    }
}

/// Writes an in-memory matrix.
pub fn export_matrix(labels: &[String], rows: &[Vec<f64>], path: &Path) -> Result<(), MetricsError> {
    if rows.is_empty() || labels.is_empty() {
        return Err(MetricsError::BadDimensions { rows: rows.len(), cols: labels.len() });
    }
    let mut w = MatrixWriter::create(path, labels)?;
    for r in rows {
        w.write_row(r)?;
    }
    w.finish().map(|_| ())
}

/// `(rows, cols)` of a matrix file, checking it is rectangular.
pub fn matrix_shape(path: &Path) -> Result<(usize, usize), MetricsError> {
    let mut s = String::new();
    File::open(path).map_err(io_err(path))?.read_to_string(&mut s).map_err(io_err(path))?;
    let mut lines = s.lines();
    let cols = lines.next().map_or(0, |h| h.split(',').count());
    let mut rows = 0;
    for l in lines {
        if l.split(',').count() != cols {
            return Err(MetricsError::Malformed(format!("row {rows} is not {cols} wide")));
        }
        rows += 1;
    }
    Ok((rows, cols))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_rate_windows() {
        // 1500 B every 666.667 us for 30 s
        let recs: Vec<(SimTime, u64)> =
            (0..45_000u64).map(|k| (SimTime::from_nanos(k * 2_000_000 / 3), 12_000)).collect();
        let bins = windowed_throughput(&recs, SimTime::from_secs(1), SimTime::from_secs(30));
        assert_eq!(bins.len(), 30);
        assert!(bins.iter().all(|b| *b == 18_000_000));
        assert_eq!(bins.iter().sum::<u64>(), 45_000 * 12_000);
    }

    #[test]
    fn empty_windows_are_zero() {
        let bins = windowed_throughput(&[], SimTime::from_secs(1), SimTime::from_secs(5));
        assert_eq!(bins, vec![0; 5]);
    }

    #[test]
    fn late_records_extend_series() {
        let recs = [(SimTime::from_millis(5500), 8)];
        let bins = windowed_throughput(&recs, SimTime::from_secs(1), SimTime::from_secs(5));
        assert_eq!(bins.len(), 6);
        assert_eq!(bins[5], 8);
    }

    fn shaped(pre: f64, during: f64, post: f64) -> Vec<f64> {
        (0..30).map(|i| if i < 10 { pre } else if i < 20 { during } else { post }).collect()
    }

    #[test]
    fn phase_losses() {
        let s = phase_summary(&shaped(18.0, 10.6, 18.0), 1.0, (10.0, 20.0), 5.0).unwrap();
        assert!((s.loss_during_pct - 41.111_111).abs() < 1e-4);
        let s = phase_summary(&shaped(18.0, 12.64, 18.0), 1.0, (10.0, 20.0), 5.0).unwrap();
        assert!((s.loss_during_pct - 29.777_778).abs() < 1e-4);
        let s = phase_summary(&shaped(18.0, 18.0, 6.0), 1.0, (10.0, 20.0), 5.0).unwrap();
        assert_eq!(s.loss_during_pct, 0.0);
        assert!((s.loss_post_min_pct - 66.666_667).abs() < 1e-4);
        assert!(phase_summary(&shaped(1.0, 1.0, 1.0), 1.0, (10.0, 40.0), 5.0).is_err());
    }

    #[test]
    fn warmup_is_excluded() {
        let mut v = shaped(18.0, 9.0, 18.0);
        v[0] = 0.0;
        let s = phase_summary(&v, 1.0, (10.0, 20.0), 5.0).unwrap();
        assert_eq!(s.pre_bps, 18.0);
        let s = phase_summary(&v, 1.0, (10.0, 20.0), 0.0).unwrap();
        assert!(s.pre_bps < 18.0);
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut r = Reports::default();
        r.add_series(&ThroughputSeries {
            mode: "centralized".into(),
            rep: 0,
            window: SimTime::from_secs(1),
            bits: vec![1, 2, 3],
        });
        r.latency.push(LatencyRow {
            seq: 0,
            rtt_us: 1.25,
            one_way_us: 0.625,
            mode: "distributed3".into(),
            transport: "unack".into(),
        });
        r.summary.push(SummaryRow {
            mode: "centralized".into(),
            pre_bps: 1.0 / 3.0,
            during_bps: 2.0,
            post_bps: 3.0,
            loss_during_pct: 4.0,
            loss_post_min_pct: 5.0,
        });
        export_csv(&r, dir.path()).unwrap();
        let before: Vec<Vec<u8>> =
            ["throughput.csv", "latency.csv", "summary.csv"].iter().map(|f| std::fs::read(dir.path().join(f)).unwrap()).collect();
        let parsed = parse_csv(dir.path()).unwrap();
        assert_eq!(parsed.throughput.len(), 3);
        let dir2 = tempfile::tempdir().unwrap();
        export_csv(&parsed, dir2.path()).unwrap();
        for (i, f) in ["throughput.csv", "latency.csv", "summary.csv"].iter().enumerate() {
            assert_eq!(before[i], std::fs::read(dir2.path().join(f)).unwrap(), "{f}");
        }
        let head = String::from_utf8(before[0].clone()).unwrap();
        assert!(head.starts_with("time_s,bits_per_s,mode,rep\n0.000000,1.000000,centralized,0\n"));
    }

    #[test]
    fn unwritable_path_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("f");
        std::fs::write(&file, "x").unwrap();
        let r = Reports { summary: vec![SummaryRow::from_summary("centralized", &phase_summary(&[1.0; 3], 1.0, (1.0, 2.0), 0.0).unwrap())], ..Reports::default() };
        let err = export_csv(&r, &file.join("sub")).unwrap_err();
        assert!(err.to_string().contains("sub"));
    }

    #[test]
    fn small_matrix() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        let labels = fit_labels(vec!["a".into(), "b".into()], 5);
        assert_eq!(labels[4], "pad_2");
        let rows: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64, 0.5]).collect();
        export_matrix(&labels, &rows, &p).unwrap();
        assert_eq!(matrix_shape(&p).unwrap(), (10, 5));
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text.lines().nth(2).unwrap(), "1.000000,0.500000,0.000000,0.000000,0.000000");
        assert!(export_matrix(&labels, &[], &p).is_err());
    }
}
