//! CSV exports: Pareto fronts, per-step training metrics and plot points.
//!
//! Reals are written with Rust's shortest round-trip scientific notation.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::search::Candidate;
use crate::sparsity::SparsityConfig;
use crate::trainer::StepMetrics;

pub const FRONT_HEADER: &str = "config,size_bytes,val_loss";
pub const PLOT_HEADER: &str = "size_bytes,val_loss,config";
pub const METRICS_HEADER: &str =
    "step,cap,sampled_configs,applied_configs,task_losses,distill_losses,losses,total_loss,batch_equivalents,cumulative_batch_equivalents";

fn join<T>(items: &[T], f: impl Fn(&T) -> String) -> String {
    items.iter().map(f).collect::<Vec<_>>().join("|")
}

fn write_lines(path: &Path, header: &str, rows: impl IntoIterator<Item = String>) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "{header}")?;
    for r in rows {
        writeln!(out, "{r}")?;
    }
    out.flush()?;
    Ok(())
}

/// Writes candidates in the given order.
pub fn write_front_csv(path: &Path, front: &[Candidate]) -> Result<()> {
    write_lines(
        path,
        FRONT_HEADER,
        front
            .iter()
            .map(|c| format!("{},{},{:e}", c.config, c.size_bytes, c.val_loss)),
    )
}

pub fn read_front_csv(path: &Path) -> Result<Vec<Candidate>> {
    let err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let header = reader.headers()?.iter().collect::<Vec<_>>().join(",");
    if header != FRONT_HEADER {
        return Err(err(1, format!("header must be {FRONT_HEADER}")));
    }
    let mut out = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| err(line, e.to_string()))?;
        if rec.len() != 3 {
            return Err(err(line, format!("expected 3 cells, found {}", rec.len())));
        }
        let config: SparsityConfig = rec[0].parse().map_err(|e: Error| err(line, e.to_string()))?;
        let size_bytes = rec[1]
            .parse()
            .map_err(|_| err(line, format!("invalid size {:?}", &rec[1])))?;
        let val_loss: f64 = rec[2]
            .parse()
            .map_err(|_| err(line, format!("invalid loss {:?}", &rec[2])))?;
        out.push(Candidate {
            config,
            val_loss,
            size_bytes,
        });
    }
    Ok(out)
}

/// Loss-vs-size points sorted by size, then loss.
pub fn write_plot_csv(path: &Path, points: &[Candidate]) -> Result<()> {
    let mut pts = points.to_vec();
    pts.sort_by(crate::search::canonical_cmp);
    write_lines(
        path,
        PLOT_HEADER,
        pts.iter()
            .map(|c| format!("{},{:e},{}", c.size_bytes, c.val_loss, c.config)),
    )
}

/// Per-step training records. Wall-clock time is machine dependent, so it
/// is only appended when asked for; without it the file is reproducible.
pub fn write_metrics_csv(path: &Path, history: &[StepMetrics], wall_clock: bool) -> Result<()> {
    let header = if wall_clock {
        format!("{METRICS_HEADER},wall_clock_s")
    } else {
        METRICS_HEADER.to_string()
    };
    let mut cumulative = 0.0;
    let rows: Vec<String> = history
        .iter()
        .map(|m| {
            cumulative += m.batch_equivalents;
            let mut row = format!(
                "{},{:e},{},{},{},{},{},{:e},{:e},{:e}",
                m.step,
                m.cap,
                join(&m.configs, |c| c.to_string()),
                join(&m.effective, |r| {
                    r.iter().map(|v| format!("{v:?}")).collect::<Vec<_>>().join(";")
                }),
                join(&m.task_losses, |v| format!("{v:e}")),
                join(&m.distill_losses, |v| v.map_or("-".to_string(), |x| format!("{x:e}"))),
                join(&m.losses, |v| format!("{v:e}")),
                m.total_loss,
                m.batch_equivalents,
                cumulative,
            );
            if wall_clock {
                row.push_str(&format!(",{:e}", m.elapsed.as_secs_f64()));
            }
            row
        })
        .collect();
    write_lines(path, &header, rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn front_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("front.csv");
        let front = vec![
            Candidate {
                config: "0.5;0.8".parse().unwrap(),
                val_loss: 0.1 + 0.2,
                size_bytes: 12,
            },
            Candidate {
                config: "0.8;0.8".parse().unwrap(),
                val_loss: 1.0 / 3.0,
                size_bytes: 9,
            },
        ];
        write_front_csv(&p, &front).unwrap();
        assert!(std::fs::read_to_string(&p).unwrap().starts_with("config,size_bytes,val_loss\n0.5;0.8,12,"));
        assert_eq!(read_front_csv(&p).unwrap(), front);

        let q = dir.path().join("points.csv");
        write_plot_csv(&q, &front).unwrap();
        let text = std::fs::read_to_string(&q).unwrap();
        let sizes: Vec<&str> = text.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
        assert_eq!(sizes, ["9", "12"]);
    }

    #[test]
    fn front_header_is_checked() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("front.csv");
        std::fs::write(&p, "cfg,size,loss\n0.5,1,1\n").unwrap();
        assert!(matches!(read_front_csv(&p), Err(Error::Parse { line: 1, .. })));
        std::fs::write(&p, "config,size_bytes,val_loss\n0.5,x,1\n").unwrap();
        assert!(matches!(read_front_csv(&p), Err(Error::Parse { line: 2, .. })));
    }
}
