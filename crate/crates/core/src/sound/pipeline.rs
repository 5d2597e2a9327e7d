//! Modal evolution across a whole run of flow snapshots.

use crate::flow::Snapshot;
use crate::spectrum::{assemble_stiffness, smallest_eigenpairs};

use super::{decompose, evolve_modes, pluck, project, SnapshotModes, SoundError, WaveformConfig};

/// Eigenvalues of one snapshot, ascending, at most N of them.
#[derive(Debug, Clone)]
pub struct SnapshotSpectrum {
    pub time: f64,
    pub eigenvalues: Vec<f64>,
}

#[derive(Debug)]
pub struct WaveRun {
    pub spectra: Vec<SnapshotSpectrum>,
    pub history: Vec<SnapshotModes>,
}

/// Walks the snapshots once: eigensolve, decompose the carried wave, record
/// the modal nodes, evolve to the next snapshot time and project through the
/// parent map. The pluck excites snapshot 0.
pub fn modal_history(snapshots: &[Snapshot], config: &WaveformConfig) -> Result<WaveRun, SoundError> {
    if !(config.fs > 0.0) {
        return Err(SoundError::InvalidConfig(format!(
            "frequency scale must be positive, got {}",
            config.fs
        )));
    }
    if config.modes == 0 {
        return Err(SoundError::InvalidConfig("mode count must be >= 1".into()));
    }
    let mut spectra = Vec::with_capacity(snapshots.len());
    let mut history = Vec::with_capacity(snapshots.len());
    let mut carried: Option<(Vec<f64>, Vec<f64>)> = None;
    for (index, snap) in snapshots.iter().enumerate() {
        let at_snapshot = |source| SoundError::Spectrum {
            snapshot: index,
            time: snap.time,
            source,
        };
        let n = snap.mesh.positions.len();
        let a = assemble_stiffness(&snap.mesh.positions, &snap.mesh.tris).map_err(at_snapshot)?;
        let k = config.modes.min(n);
        let pairs = smallest_eigenpairs(&a, k, config.seed).map_err(at_snapshot)?;
        spectra.push(SnapshotSpectrum {
            time: snap.time,
            eigenvalues: pairs.eigenvalues.clone(),
        });
        let (u, u_t) = match carried.take() {
            None => pluck(n, config.pluck_vertex)?,
            Some((u_prev, ut_prev)) => (
                project(&u_prev, &snap.mesh.parents, index)?,
                project(&ut_prev, &snap.mesh.parents, index)?,
            ),
        };
        let state = decompose(&u, &u_t, &pairs, config.fs, snap.time);
        history.push(SnapshotModes {
            time: snap.time,
            modes: state
                .modes
                .iter()
                .map(|m| (m.lambda(), m.amplitude()))
                .collect(),
        });
        if let Some(next) = snapshots.get(index + 1) {
            let dt = next.time - snap.time;
            carried = Some(evolve_modes(&state, &pairs, config.fs, dt));
        }
    }
    Ok(WaveRun { spectra, history })
}
