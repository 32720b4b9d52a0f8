//! Result files.
//!
//! | file                         | content                                 |
//! |------------------------------|-----------------------------------------|
//! | `config.echo.txt`            | fully resolved config                   |
//! | `<strategy>_<seed>.csv`      | per-task and aggregate records          |
//! | `<strategy>_<seed>.trace.csv`| per-sample trace                        |
//! | `summary.csv`                | one row per cell, failed cells included |
//! | `sweep.csv`                  | threshold sweep points (`sweep` only)   |

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::{ExperimentConfig, ExperimentResult, SweepPoint};
use crate::error::{Error, Result};

fn write(dir: &Path, name: &str, contents: &str, written: &mut Vec<PathBuf>) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|e| Error::io(&path, e))?;
    written.push(path);
    Ok(())
}

/// Writes the config echo and, for every cell, its files plus the summary.
/// Returns the paths written, in order.
pub fn export(
    cfg: &ExperimentConfig,
    result: &ExperimentResult,
    dir: &Path,
) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    write(dir, "config.echo.txt", &cfg.to_text(), &mut written)?;
    if result.cells.is_empty() {
        return Ok(written);
    }
    for cell in &result.cells {
        if let Ok(report) = &cell.result {
            let stem = format!("{}_{}", cell.strategy, cell.seed);
            write(dir, &format!("{stem}.csv"), &report.to_csv(), &mut written)?;
            write(
                dir,
                &format!("{stem}.trace.csv"),
                &report.trace_csv(),
                &mut written,
            )?;
        }
    }
    write(dir, "summary.csv", &summary_csv(cfg, result)?, &mut written)?;
    Ok(written)
}

/// One row per cell: routing threshold, aggregate metrics, training rounds,
/// whether the mean latency met the budget (`na` without one), then mIoU
/// and CUR per task.
pub fn summary_csv(cfg: &ExperimentConfig, result: &ExperimentResult) -> Result<String> {
    let tasks = cfg.stream.tasks.len();
    let max_cur = cfg.latency.max_cur()?;
    let mut out =
        String::from("strategy,seed,status,threshold,miou,cur,avg_latency_s,updates,budget_ok");
    for t in 0..tasks {
        let _ = write!(out, ",task{t}_miou,task{t}_cur");
    }
    out.push('\n');
    for cell in &result.cells {
        let _ = write!(out, "{},{}", cell.strategy, cell.seed);
        let agg = cell.result.as_ref().ok().and_then(|r| r.aggregate.as_ref());
        match (&cell.result, agg) {
            (Ok(report), Some(agg)) => {
                let budget = match max_cur {
                    Some(m) => (agg.cur <= m + 1e-9).to_string(),
                    None => "na".to_string(),
                };
                let _ = write!(
                    out,
                    ",ok,{:.6},{:.6},{:.6},{:.6},{},{budget}",
                    cell.threshold.unwrap_or(f64::NAN),
                    agg.miou,
                    agg.cur,
                    agg.avg_latency_s,
                    report.updates
                );
                for t in 0..tasks {
                    match report.tasks.iter().find(|r| r.task == Some(t)) {
                        Some(r) => {
                            let _ = write!(out, ",{:.6},{:.6}", r.miou, r.cur);
                        }
                        None => out.push_str(",,"),
                    }
                }
            }
            _ => {
                out.push_str(",failed,,,,,,");
                for _ in 0..tasks {
                    out.push_str(",,");
                }
            }
        }
        out.push('\n');
    }
    Ok(out)
}

pub fn sweep_csv(points: &[SweepPoint]) -> String {
    let mut out = String::from("seed,scorer,delta,cur,miou\n");
    for p in points {
        let _ = writeln!(
            out,
            "{},{},{},{:.6},{:.6}",
            p.seed, p.scorer, p.delta, p.cur, p.miou
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::{drift_preset, CellOutcome, Strategy};

    #[test]
    fn empty_result_writes_only_the_echo() {
        let dir = tempfile::tempdir().unwrap();
        let written = export(
            &drift_preset(),
            &ExperimentResult { cells: Vec::new() },
            dir.path(),
        )
        .unwrap();
        assert_eq!(written, vec![dir.path().join("config.echo.txt")]);
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }

    #[test]
    fn failed_cells_keep_their_row() {
        let cfg = drift_preset();
        let result = ExperimentResult {
            cells: vec![CellOutcome {
                strategy: Strategy::Spp,
                seed: 9,
                threshold: None,
                result: Err(Error::Config("boom".into())),
            }],
        };
        let csv = summary_csv(&cfg, &result).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 2);
        assert!(lines[1].starts_with("spp,9,failed,"));
        assert_eq!(lines[0].split(',').count(), lines[1].split(',').count());
    }

    #[test]
    fn unwritable_directory_names_the_path() {
        let dir = tempfile::tempdir().unwrap();
        let blocker = dir.path().join("file");
        fs::write(&blocker, "x").unwrap();
        let err = export(
            &drift_preset(),
            &ExperimentResult { cells: Vec::new() },
            &blocker.join("sub"),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Io { ref path, .. } if path.contains("file")));
    }
}
