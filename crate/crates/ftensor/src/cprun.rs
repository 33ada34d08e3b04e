//! Timed CP-ALS runs and model export.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ftensor_core::cp::{cp_als_with_observer, CpConfig, CpObserver, CpResult};
use ftensor_core::{CooTensor, ExecStats, Executor, KruskalModel};

use crate::error::{io_err, Result};

/// Per-iteration timings gathered around each SpMTTKRP call.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationReport {
    /// 1-based.
    pub iteration: usize,
    pub fit: f64,
    pub delta: f64,
    pub mode_nanos: [u64; 3],
}

#[derive(Default)]
struct Timer {
    started: Option<Instant>,
    current: [u64; 3],
    last_fit: Option<f64>,
    reports: Vec<IterationReport>,
}

impl CpObserver for Timer {
    fn mode_started(&mut self, _iteration: usize, _mode: usize) {
        self.started = Some(Instant::now());
    }

    fn mode_finished(&mut self, _iteration: usize, mode: usize, stats: &mut ExecStats) {
        let nanos = self.started.take().map_or(0, |s| s.elapsed().as_nanos() as u64);
        stats.wall_nanos = nanos;
        self.current[mode] = nanos;
    }

    fn iteration_finished(&mut self, iteration: usize, fit: f64) {
        let delta = self.last_fit.map_or(fit, |prev| fit - prev);
        self.last_fit = Some(fit);
        self.reports.push(IterationReport { iteration: iteration + 1, fit, delta, mode_nanos: self.current });
        self.current = [0; 3];
    }
}

pub fn run_cp<E: Executor>(t: &CooTensor, cfg: &CpConfig, exec: &E) -> Result<(CpResult, Vec<IterationReport>)> {
    let mut timer = Timer::default();
    let res = cp_als_with_observer(t, cfg, exec, &mut timer)?;
    Ok((res, timer.reports))
}

/// Writes `<prefix>.mode{1,2,3}.tns`, `<prefix>.lambda` and
/// `<prefix>.fit.csv`. Factor files list every entry as `row column value`,
/// 1-based. Returns the paths written.
pub fn export_model(model: &KruskalModel, reports: &[IterationReport], prefix: &Path) -> Result<Vec<PathBuf>> {
    let with_suffix = |suffix: &str| {
        let mut s = prefix.as_os_str().to_owned();
        s.push(suffix);
        PathBuf::from(s)
    };
    let mut written = Vec::new();
    for (n, f) in model.factors.iter().enumerate() {
        let path = with_suffix(&format!(".mode{}.tns", n + 1));
        let mut text = String::new();
        for i in 0..f.rows() {
            for (r, v) in f.row(i).iter().enumerate() {
                text.push_str(&format!("{} {} {}\n", i + 1, r + 1, v));
            }
        }
        fs::write(&path, text).map_err(io_err(&path))?;
        written.push(path);
    }

    let path = with_suffix(".lambda");
    let line: Vec<String> = model.lambda.iter().map(|l| l.to_string()).collect();
    fs::write(&path, line.join(" ") + "\n").map_err(io_err(&path))?;
    written.push(path);

    let path = with_suffix(".fit.csv");
    fs::write(&path, fit_trace_csv(reports)).map_err(io_err(&path))?;
    written.push(path);
    Ok(written)
}

pub fn fit_trace_csv(reports: &[IterationReport]) -> String {
    let mut out = String::from("iteration,fit,delta,mode1_ns,mode2_ns,mode3_ns\n");
    for r in reports {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.iteration, r.fit, r.delta, r.mode_nanos[0], r.mode_nanos[1], r.mode_nanos[2]
        ));
    }
    out
}

pub fn print_reports(reports: &[IterationReport], out: &mut (impl Write + ?Sized)) -> std::io::Result<()> {
    writeln!(out, "{:>5} {:>12} {:>12} {:>12} {:>12} {:>12}", "iter", "fit", "delta", "mode1_us", "mode2_us", "mode3_us")?;
    for r in reports {
        writeln!(
            out,
            "{:>5} {:>12.8} {:>12.3e} {:>12.1} {:>12.1} {:>12.1}",
            r.iteration,
            r.fit,
            r.delta,
            r.mode_nanos[0] as f64 / 1e3,
            r.mode_nanos[1] as f64 / 1e3,
            r.mode_nanos[2] as f64 / 1e3
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ftensor_core::{random_coo, Sequential};

    #[test]
    fn one_report_per_iteration_with_all_modes_timed() {
        let t = random_coo(&[10, 9, 8], 200, 2).unwrap();
        let cfg = CpConfig { rank: 3, max_iters: 4, tol: 0.0, ..CpConfig::default() };
        let (res, reports) = run_cp(&t, &cfg, &Sequential).unwrap();
        assert_eq!(reports.len(), res.iterations);
        assert_eq!(reports.iter().map(|r| r.fit).collect::<Vec<_>>(), res.fit_trace);
        assert!(reports.iter().all(|r| r.mode_nanos.iter().all(|&n| n > 0)));
        assert!(res.mode_calls.iter().all(|c| c.stats.wall_nanos > 0));
        assert_eq!(reports[0].delta, reports[0].fit);
    }

    #[test]
    fn export_writes_five_files() {
        let dir = tempfile::tempdir().unwrap();
        let t = random_coo(&[5, 4, 3], 30, 2).unwrap();
        let cfg = CpConfig { rank: 2, max_iters: 3, ..CpConfig::default() };
        let (res, reports) = run_cp(&t, &cfg, &Sequential).unwrap();
        let files = export_model(&res.model, &reports, &dir.path().join("m")).unwrap();
        assert_eq!(files.len(), 5);
        let mode2 = fs::read_to_string(dir.path().join("m.mode2.tns")).unwrap();
        assert_eq!(mode2.lines().count(), 4 * 2);
        assert!(mode2.starts_with("1 1 "));
        let lambda = fs::read_to_string(dir.path().join("m.lambda")).unwrap();
        assert_eq!(lambda.split_whitespace().count(), 2);
        let fit = fs::read_to_string(dir.path().join("m.fit.csv")).unwrap();
        assert_eq!(fit.lines().count(), 1 + res.iterations);
    }
}
