//! On-disk artifact formats: snapshot frames, event log, eigenvalue table,
//! wavetrack traces, and the run summary.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use serde::Serialize;

use flowsong::flow::{FlowEvent, FlowOutcome, Snapshot, Termination};
use flowsong::mesh::io::{save_obj, write_parent_map};
use flowsong::sound::{TrackNode, WaveTrack};

use crate::config::RunConfig;

pub fn frame_path(dir: &Path, index: usize) -> PathBuf {
    dir.join(format!("frame_{index:06}.obj"))
}

pub fn parents_path(dir: &Path, index: usize) -> PathBuf {
    dir.join(format!("frame_{index:06}.parents.txt"))
}

/// Writes every snapshot as an OBJ frame plus its parent-map sidecar.
pub fn write_frames(dir: &Path, snapshots: &[Snapshot]) -> Result<()> {
    for (index, snap) in snapshots.iter().enumerate() {
        let obj = frame_path(dir, index);
        save_obj(&obj, &snap.mesh.positions, &snap.mesh.tris)
            .with_context(|| format!("writing {}", obj.display()))?;
        let sidecar = parents_path(dir, index);
        let mut w = BufWriter::new(
            File::create(&sidecar).with_context(|| format!("creating {}", sidecar.display()))?,
        );
        write_parent_map(&mut w, &snap.mesh.parents)
            .and_then(|()| w.flush())
            .with_context(|| format!("writing {}", sidecar.display()))?;
    }
    Ok(())
}

/// One event per line, in simulation order, using the events' display form.
pub fn write_events(path: &Path, events: &[FlowEvent]) -> Result<()> {
    let mut w = BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    );
    for event in events {
        writeln!(w, "{event}")?;
    }
    w.flush()?;
    Ok(())
}

/// `t,lambda_1,...,lambda_N`; rows shorter than N are padded with empty
/// fields so every row has the same column count.
pub fn write_eigenvalues_csv(path: &Path, modes: usize, rows: &[(f64, Vec<f64>)]) -> Result<()> {
    let mut w = BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    );
    write!(w, "t")?;
    for k in 1..=modes {
        write!(w, ",lambda_{k}")?;
    }
    writeln!(w)?;
    for (time, values) in rows {
        write!(w, "{time}")?;
        for k in 0..modes {
            match values.get(k) {
                Some(v) => write!(w, ",{v}")?,
                None => write!(w, ",")?,
            }
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

/// Parses an eigenvalues table back into (time, values) rows, skipping empty
/// padding fields.
pub fn read_eigenvalues_csv(path: &Path) -> Result<Vec<(f64, Vec<f64>)>> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut rows = Vec::new();
    for (lineno, line) in text.lines().enumerate().skip(1) {
        let mut fields = line.split(',');
        let time: f64 = fields
            .next()
            .ok_or_else(|| anyhow!("{}:{}: empty row", path.display(), lineno + 1))?
            .parse()
            .with_context(|| format!("{}:{}: bad time", path.display(), lineno + 1))?;
        let mut values = Vec::new();
        for field in fields {
            if field.is_empty() {
                continue;
            }
            values.push(
                field
                    .parse()
                    .with_context(|| format!("{}:{}: bad value", path.display(), lineno + 1))?,
            );
        }
        rows.push((time, values));
    }
    Ok(rows)
}

/// `t,k,lambda,amplitude` rows, track-major. Values use the shortest decimal
/// form that parses back to the identical float, so a resynthesis from this
/// file reproduces the original waveform byte for byte.
pub fn write_traces_csv(path: &Path, tracks: &[WaveTrack]) -> Result<()> {
    let mut w = BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    );
    writeln!(w, "t,k,lambda,amplitude")?;
    for (k, track) in tracks.iter().enumerate() {
        for node in &track.nodes {
            writeln!(w, "{},{k},{},{}", node.time, node.lambda, node.amplitude)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Rebuilds wavetracks from a traces table. Rows are grouped by the `k`
/// column; node order within a track follows file order.
pub fn read_traces_csv(path: &Path) -> Result<Vec<WaveTrack>> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut parsed: Vec<(usize, TrackNode)> = Vec::new();
    for (lineno, line) in text.lines().enumerate().skip(1) {
        let context = || format!("{}:{}", path.display(), lineno + 1);
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            bail!("{}: expected 4 fields, got {}", context(), fields.len());
        }
        let time: f64 = fields[0].parse().with_context(context)?;
        let k: usize = fields[1].parse().with_context(context)?;
        let lambda: f64 = fields[2].parse().with_context(context)?;
        let amplitude: f64 = fields[3].parse().with_context(context)?;
        parsed.push((
            k,
            TrackNode {
                time,
                lambda,
                amplitude,
            },
        ));
    }
    if parsed.is_empty() {
        bail!("{}: no wavetrack rows", path.display());
    }
    let count = parsed.iter().map(|(k, _)| k + 1).max().unwrap();
    let mut tracks = vec![WaveTrack { nodes: Vec::new() }; count];
    for (k, node) in parsed {
        tracks[k].nodes.push(node);
    }
    for (k, track) in tracks.iter().enumerate() {
        if track.nodes.is_empty() {
            bail!("{}: track {k} has no nodes", path.display());
        }
    }
    Ok(tracks)
}

#[derive(Debug, Serialize)]
pub struct EventCounts {
    pub merges: usize,
    pub splits: usize,
    pub vanishes: usize,
}

/// Config echo plus run summary, written as `run.json`.
#[derive(Debug, Serialize)]
pub struct RunSummary<'a> {
    pub config: &'a RunConfig,
    pub termination: &'static str,
    pub extinction_time: f64,
    pub steps: u64,
    pub snapshots: usize,
    pub events: EventCounts,
    /// True when synthesis produced an all-zero signal (no normalization).
    pub silent: Option<bool>,
}

impl<'a> RunSummary<'a> {
    pub fn new(config: &'a RunConfig, outcome: &FlowOutcome, silent: Option<bool>) -> Self {
        let mut counts = EventCounts {
            merges: 0,
            splits: 0,
            vanishes: 0,
        };
        for event in &outcome.events {
            match event {
                FlowEvent::Merge { .. } => counts.merges += 1,
                FlowEvent::Split { .. } => counts.splits += 1,
                FlowEvent::Vanish { .. } => counts.vanishes += 1,
            }
        }
        RunSummary {
            config,
            termination: match outcome.termination {
                Termination::Extinct => "extinct",
                Termination::StepLimit => "step-limit",
            },
            extinction_time: outcome.extinction_time,
            steps: outcome.steps,
            snapshots: outcome.snapshots.len(),
            events: counts,
            silent,
        }
    }
}

pub fn write_run_json(path: &Path, summary: &RunSummary) -> Result<()> {
    let text = serde_json::to_string_pretty(summary)?;
    std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn traces_round_trip_bit_for_bit() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("traces.csv");
        let tracks = vec![
            WaveTrack {
                nodes: vec![
                    TrackNode {
                        time: 0.0,
                        lambda: 0.1 + 0.2,
                        amplitude: 1.0 / 3.0,
                    },
                    TrackNode {
                        time: 5e-3,
                        lambda: f64::MIN_POSITIVE,
                        amplitude: 0.0,
                    },
                ],
            },
            WaveTrack {
                nodes: vec![TrackNode {
                    time: 0.0,
                    lambda: 1234.5678901234567,
                    amplitude: 0.25,
                }],
            },
        ];
        write_traces_csv(&path, &tracks).unwrap();
        let back = read_traces_csv(&path).unwrap();
        assert_eq!(back.len(), tracks.len());
        for (a, b) in tracks.iter().zip(&back) {
            assert_eq!(a.nodes.len(), b.nodes.len());
            for (x, y) in a.nodes.iter().zip(&b.nodes) {
                assert_eq!(x.time.to_bits(), y.time.to_bits());
                assert_eq!(x.lambda.to_bits(), y.lambda.to_bits());
                assert_eq!(x.amplitude.to_bits(), y.amplitude.to_bits());
            }
        }
    }

    #[test]
    fn eigenvalue_rows_pad_to_the_mode_count() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("eigenvalues.csv");
        let rows = vec![(0.0, vec![0.0, 1.5, 2.5]), (5e-3, vec![0.0])];
        write_eigenvalues_csv(&path, 4, &rows).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "t,lambda_1,lambda_2,lambda_3,lambda_4");
        assert_eq!(lines[1], "0,0,1.5,2.5,");
        assert_eq!(lines[2], "0.005,0,,,");
        let back = read_eigenvalues_csv(&path).unwrap();
        assert_eq!(back, rows);
    }
}
