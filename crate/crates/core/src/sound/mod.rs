//! Quasi-static surface wave equation over flow snapshots.
//!
//! On each snapshot the displacement solves `u_tt = -F_s^2 A u` for the
//! stiffness matrix `A`. In the eigenbasis every oscillatory mode evolves in
//! closed form as `c_+ e^{i w dt} + c_- e^{-i w dt}` with `w = F_s sqrt(l)`;
//! real data forces `c_- = conj(c_+)`, so only `c_+` is stored. Zero modes
//! evolve affinely. Between snapshots the evolved vertex values are carried
//! to the new mesh through the parent map and re-decomposed in the new
//! eigenbasis. Per-mode eigenvalue and amplitude nodes become piecewise
//! linear wavetracks, synthesized as `sum_k C_k(t) sin(F_s int sqrt(L_k))`.

mod pipeline;
mod wav;

use nalgebra::Complex;
use thiserror::Error;

use crate::spectrum::{zero_mode_count, EigenPairSet, SpectrumError};

pub use pipeline::{modal_history, SnapshotSpectrum, WaveRun};
pub use wav::{read_wav, save_wav, write_wav, WavError};

#[derive(Debug, Error)]
pub enum SoundError {
    #[error("sound: pluck vertex {vertex} out of range ({count} vertices)")]
    BadPluck { vertex: usize, count: usize },
    #[error("sound: snapshot {snapshot}: vertex {child} has parent {parent} out of range ({count} vertices in previous snapshot)")]
    BadParent {
        snapshot: usize,
        child: usize,
        parent: u32,
        count: usize,
    },
    #[error("sound: invalid config: {0}")]
    InvalidConfig(String),
    #[error("sound: snapshot {snapshot} (t = {time}): {source}")]
    Spectrum {
        snapshot: usize,
        time: f64,
        #[source]
        source: SpectrumError,
    },
}

#[derive(Debug, Clone)]
pub struct WaveformConfig {
    /// Frequency scale F_s; an eigenvalue of 1 sounds at F_s/(2 pi) Hz.
    pub fs: f64,
    /// Number of modes N tracked per snapshot (clamped to the vertex count).
    pub modes: usize,
    pub sample_rate: u32,
    pub pluck_vertex: usize,
    /// Target peak amplitude of the normalized waveform, in [0, 1].
    pub peak_normalization: f64,
    /// Eigensolver seed.
    pub seed: u64,
}

impl Default for WaveformConfig {
    fn default() -> Self {
        WaveformConfig {
            fs: 2.0 * std::f64::consts::PI * 440.0,
            modes: 50,
            sample_rate: 44100,
            pluck_vertex: 0,
            peak_normalization: 0.9,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub enum Mode {
    Oscillatory { lambda: f64, c_plus: Complex<f64> },
    /// Constant + linear drift branch for eigenvalues below the zero-mode
    /// tolerance, where the oscillatory 2x2 system is singular.
    Zero { lambda: f64, offset: f64, rate: f64 },
}

/// Modal content of the wave at one snapshot time.
#[derive(Debug, Clone)]
pub struct ModalState {
    pub time: f64,
    pub modes: Vec<Mode>,
}

impl Mode {
    /// Track amplitude: 2|c_+| for oscillatory modes, 0 for zero modes
    /// (pure DC / drift is excluded from audio).
    pub fn amplitude(&self) -> f64 {
        match self {
            Mode::Oscillatory { c_plus, .. } => 2.0 * c_plus.norm(),
            Mode::Zero { .. } => 0.0,
        }
    }

    pub fn lambda(&self) -> f64 {
        match self {
            Mode::Oscillatory { lambda, .. } | Mode::Zero { lambda, .. } => *lambda,
        }
    }
}

/// Unit displacement on one vertex, zero velocity.
pub fn pluck(vertex_count: usize, v: usize) -> Result<(Vec<f64>, Vec<f64>), SoundError> {
    if v >= vertex_count {
        return Err(SoundError::BadPluck {
            vertex: v,
            count: vertex_count,
        });
    }
    let mut u = vec![0.0; vertex_count];
    u[v] = 1.0;
    Ok((u, vec![0.0; vertex_count]))
}

fn mode_dot(pairs: &EigenPairSet, k: usize, values: &[f64]) -> f64 {
    pairs
        .eigenvectors
        .column(k)
        .iter()
        .zip(values)
        .map(|(a, b)| a * b)
        .sum()
}

/// Projects (u, u_t) onto the eigenbasis. Oscillatory modes solve
/// `c_+ + c_- = phi.u`, `i w (c_+ - c_-) = phi.u_t` with `c_- = conj(c_+)`,
/// giving `c_+ = (phi.u - i phi.u_t / w) / 2`; zero modes store the affine
/// pair (offset, rate).
pub fn decompose(u: &[f64], u_t: &[f64], pairs: &EigenPairSet, fs: f64, time: f64) -> ModalState {
    let zeros = zero_mode_count(&pairs.eigenvalues);
    let modes = pairs
        .eigenvalues
        .iter()
        .enumerate()
        .map(|(k, &lambda)| {
            let a = mode_dot(pairs, k, u);
            let b = mode_dot(pairs, k, u_t);
            if k < zeros {
                Mode::Zero {
                    lambda,
                    offset: a,
                    rate: b,
                }
            } else {
                let w = fs * lambda.sqrt();
                Mode::Oscillatory {
                    lambda,
                    c_plus: Complex::new(0.5 * a, -0.5 * b / w),
                }
            }
        })
        .collect();
    ModalState { time, modes }
}

/// Per-mode (value, velocity) after an exact dt of evolution.
pub fn evolve_coefficients(state: &ModalState, fs: f64, dt: f64) -> Vec<(f64, f64)> {
    state
        .modes
        .iter()
        .map(|mode| match *mode {
            Mode::Oscillatory { lambda, c_plus } => {
                let w = fs * lambda.sqrt();
                let (sin, cos) = (w * dt).sin_cos();
                let re = c_plus.re * cos - c_plus.im * sin;
                let im = c_plus.im * cos + c_plus.re * sin;
                (2.0 * re, -2.0 * w * im)
            }
            Mode::Zero { offset, rate, .. } => (offset + rate * dt, rate),
        })
        .collect()
}

/// Reconstructs per-vertex (u, u_t) at `state.time + dt`.
pub fn evolve_modes(state: &ModalState, pairs: &EigenPairSet, fs: f64, dt: f64) -> (Vec<f64>, Vec<f64>) {
    let n = pairs.eigenvectors.nrows();
    let mut u = vec![0.0; n];
    let mut u_t = vec![0.0; n];
    for (k, (value, velocity)) in evolve_coefficients(state, fs, dt).into_iter().enumerate() {
        let phi = pairs.eigenvectors.column(k);
        for i in 0..n {
            u[i] += value * phi[i];
            u_t[i] += velocity * phi[i];
        }
    }
    (u, u_t)
}

/// Per-mode energy `l * value^2 + velocity^2 / F_s^2`; constant under
/// evolve_coefficients for oscillatory modes.
pub fn modal_energies(state: &ModalState, fs: f64) -> Vec<f64> {
    evolve_coefficients(state, fs, 0.0)
        .into_iter()
        .zip(&state.modes)
        .map(|((value, velocity), mode)| mode.lambda() * value * value + velocity * velocity / (fs * fs))
        .collect()
}

/// Carries per-vertex values across a snapshot transition: each child copies
/// its parent's value.
pub fn project(
    values: &[f64],
    parents: &[u32],
    snapshot: usize,
) -> Result<Vec<f64>, SoundError> {
    parents
        .iter()
        .enumerate()
        .map(|(child, &parent)| {
            values
                .get(parent as usize)
                .copied()
                .ok_or(SoundError::BadParent {
                    snapshot,
                    child,
                    parent,
                    count: values.len(),
                })
        })
        .collect()
}

/// One node of a piecewise-linear eigenvalue/amplitude track.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackNode {
    pub time: f64,
    pub lambda: f64,
    pub amplitude: f64,
}

#[derive(Debug, Clone, Default)]
pub struct WaveTrack {
    pub nodes: Vec<TrackNode>,
}

impl WaveTrack {
    /// Linear interpolation, clamped to the first/last node outside the span.
    pub fn sample(&self, t: f64) -> (f64, f64) {
        match self.nodes.iter().position(|n| n.time > t) {
            Some(0) => {
                let n = &self.nodes[0];
                (n.lambda, n.amplitude)
            }
            Some(i) => {
                let (a, b) = (&self.nodes[i - 1], &self.nodes[i]);
                let s = (t - a.time) / (b.time - a.time);
                (
                    a.lambda + s * (b.lambda - a.lambda),
                    a.amplitude + s * (b.amplitude - a.amplitude),
                )
            }
            None => {
                let n = self.nodes.last().expect("tracks are non-empty");
                (n.lambda, n.amplitude)
            }
        }
    }
}

/// Per-snapshot modal node data: (lambda, amplitude) pairs, ascending modes.
#[derive(Debug, Clone)]
pub struct SnapshotModes {
    pub time: f64,
    pub modes: Vec<(f64, f64)>,
}

/// Builds index-matched piecewise-linear tracks from the snapshot history.
/// A track whose mode disappears ramps its amplitude to zero over one
/// snapshot interval; tracks alive at the last snapshot ramp to zero at
/// `t_end` (the extinction time).
pub fn build_wavetracks(history: &[SnapshotModes], t_end: f64) -> Vec<WaveTrack> {
    let max_modes = history.iter().map(|s| s.modes.len()).max().unwrap_or(0);
    let mut tracks = vec![WaveTrack::default(); max_modes];
    for snap in history {
        for (k, &(lambda, amplitude)) in snap.modes.iter().enumerate() {
            tracks[k].nodes.push(TrackNode {
                time: snap.time,
                lambda,
                amplitude,
            });
        }
        for track in tracks.iter_mut().skip(snap.modes.len()) {
            // The mode just disappeared: ramp to silence across this interval.
            if let Some(last) = track.nodes.last().copied() {
                if last.time < snap.time && last.amplitude != 0.0 {
                    track.nodes.push(TrackNode {
                        time: snap.time,
                        lambda: last.lambda,
                        amplitude: 0.0,
                    });
                }
            }
        }
    }
    for track in &mut tracks {
        if let Some(&TrackNode {
            time,
            lambda,
            amplitude,
        }) = track.nodes.last()
        {
            if amplitude != 0.0 && t_end > time {
                track.nodes.push(TrackNode {
                    time: t_end,
                    lambda,
                    amplitude: 0.0,
                });
            }
        }
    }
    tracks
}

/// Sums the tracks into samples on [0, t_end): each track contributes
/// `C_k(t) sin(F_s int_0^t sqrt(L_k))` with the phase integral accumulated
/// per sample by the trapezoid rule. Returns the peak-normalized buffer and
/// whether the signal was all zero (callers should warn, the buffer is then
/// silence).
pub fn synthesize(
    tracks: &[WaveTrack],
    fs: f64,
    sample_rate: u32,
    peak_normalization: f64,
    t_end: f64,
) -> (Vec<f64>, bool) {
    let count = (t_end * sample_rate as f64).ceil() as usize;
    let dt = 1.0 / sample_rate as f64;
    let mut buffer = vec![0.0f64; count];
    for track in tracks {
        if track.nodes.is_empty() {
            continue;
        }
        let mut phase = 0.0;
        let mut prev_sqrt = track.sample(0.0).0.max(0.0).sqrt();
        for (i, out) in buffer.iter_mut().enumerate() {
            let t = i as f64 * dt;
            let (lambda, amplitude) = track.sample(t);
            let s = lambda.max(0.0).sqrt();
            if i > 0 {
                phase += fs * 0.5 * (prev_sqrt + s) * dt;
            }
            prev_sqrt = s;
            *out += amplitude * phase.sin();
        }
    }
    let peak = buffer.iter().fold(0.0f64, |m, &x| m.max(x.abs()));
    if peak == 0.0 {
        return (buffer, true);
    }
    let scale = peak_normalization / peak;
    for x in &mut buffer {
        *x *= scale;
    }
    (buffer, false)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::{run_to_extinction, FlowConfig};
    use crate::mesh::primitives::{icosphere, tetrahedron};
    use crate::spectrum::{assemble_stiffness, smallest_eigenpairs};
    use approx::assert_relative_eq;
    use nalgebra::{DMatrix, DVector};

    const SEED: u64 = 7;

    fn tetra_pairs(k: usize) -> (EigenPairSet, usize) {
        let mesh = tetrahedron(1.0);
        let positions: Vec<_> = mesh.live_vertices().map(|v| mesh.position(v)).collect();
        let tris: Vec<_> = mesh.live_tris().map(|(_, t)| t).collect();
        let a = assemble_stiffness(&positions, &tris).unwrap();
        let n = positions.len();
        (smallest_eigenpairs(&a, k, SEED).unwrap(), n)
    }

    fn column(pairs: &EigenPairSet, k: usize) -> Vec<f64> {
        pairs.eigenvectors.column(k).iter().copied().collect()
    }

    #[test]
    fn pluck_is_an_indicator_with_zero_velocity() {
        let (u, u_t) = pluck(4, 0).unwrap();
        assert_eq!(u, vec![1.0, 0.0, 0.0, 0.0]);
        assert_eq!(u_t, vec![0.0; 4]);
        assert!(matches!(
            pluck(4, 9),
            Err(SoundError::BadPluck { vertex: 9, count: 4 })
        ));
    }

    #[test]
    fn decompose_reads_off_pure_mode_coefficients() {
        let (pairs, n) = tetra_pairs(4);
        let fs = 11.0;
        let phi = column(&pairs, 1);
        let zero = vec![0.0; n];

        let state = decompose(&phi, &zero, &pairs, fs, 0.0);
        for (k, mode) in state.modes.iter().enumerate() {
            match *mode {
                Mode::Oscillatory { c_plus, .. } => {
                    if k == 1 {
                        assert_relative_eq!(c_plus.re, 0.5, epsilon = 1e-10);
                        assert_relative_eq!(c_plus.im, 0.0, epsilon = 1e-10);
                    } else {
                        assert!(c_plus.norm() < 1e-10, "mode {k} leaked {c_plus}");
                    }
                }
                Mode::Zero { offset, rate, .. } => {
                    assert!(offset.abs() < 1e-10 && rate.abs() < 1e-10);
                }
            }
        }

        // Velocity excitation: c_+ = -i / (2 F_s sqrt(lambda)).
        let state = decompose(&zero, &phi, &pairs, fs, 0.0);
        match state.modes[1] {
            Mode::Oscillatory { lambda, c_plus } => {
                assert_relative_eq!(c_plus.re, 0.0, epsilon = 1e-12);
                assert_relative_eq!(c_plus.im, -1.0 / (2.0 * fs * lambda.sqrt()), epsilon = 1e-10);
            }
            ref other => panic!("mode 1 should oscillate, got {other:?}"),
        }
    }

    #[test]
    fn zero_mode_stores_the_affine_pair() {
        let (pairs, _) = tetra_pairs(4);
        let phi0 = column(&pairs, 0);
        let u: Vec<f64> = phi0.iter().map(|x| 0.3 * x).collect();
        let u_t: Vec<f64> = phi0.iter().map(|x| 0.1 * x).collect();
        let state = decompose(&u, &u_t, &pairs, 11.0, 0.0);
        match state.modes[0] {
            Mode::Zero { offset, rate, .. } => {
                assert_relative_eq!(offset, 0.3, epsilon = 1e-10);
                assert_relative_eq!(rate, 0.1, epsilon = 1e-10);
            }
            ref other => panic!("mode 0 should be the zero mode, got {other:?}"),
        }
        // Affine evolution: offset + rate * dt.
        let coeffs = evolve_coefficients(&state, 11.0, 2.0);
        assert_relative_eq!(coeffs[0].0, 0.5, epsilon = 1e-10);
        assert_relative_eq!(coeffs[0].1, 0.1, epsilon = 1e-10);
    }

    #[test]
    fn evolution_is_the_identity_at_dt_zero_and_after_a_full_period() {
        let (pairs, n) = tetra_pairs(4);
        let fs = 11.0;
        let (u, u_t) = pluck(n, 0).unwrap();
        let state = decompose(&u, &u_t, &pairs, fs, 0.0);

        let (u0, ut0) = evolve_modes(&state, &pairs, fs, 0.0);
        for i in 0..n {
            assert_relative_eq!(u0[i], u[i], epsilon = 1e-12);
            assert_relative_eq!(ut0[i], u_t[i], epsilon = 1e-12);
        }

        // All nonzero tetrahedron eigenvalues coincide, so one modal period
        // returns the whole state.
        let lambda = pairs.eigenvalues[3];
        let period = 2.0 * std::f64::consts::PI / (fs * lambda.sqrt());
        let (u1, ut1) = evolve_modes(&state, &pairs, fs, period);
        for i in 0..n {
            assert_relative_eq!(u1[i], u[i], epsilon = 1e-10);
            assert_relative_eq!(ut1[i], u_t[i], epsilon = 1e-10);
        }
    }

    #[test]
    fn modal_energy_is_conserved_between_projections() {
        let (pairs, n) = tetra_pairs(4);
        let fs = 11.0;
        let (u, u_t) = pluck(n, 0).unwrap();
        let state = decompose(&u, &u_t, &pairs, fs, 0.0);
        let before = modal_energies(&state, fs);
        for dt in [0.013, 0.37, 2.9] {
            let (u2, ut2) = evolve_modes(&state, &pairs, fs, dt);
            let again = decompose(&u2, &ut2, &pairs, fs, dt);
            let after = modal_energies(&again, fs);
            for (b, a) in before.iter().zip(&after) {
                assert_relative_eq!(b, a, epsilon = 1e-10, max_relative = 1e-10);
            }
        }
    }

    #[test]
    fn parseval_holds_at_full_dimension() {
        let (pairs, n) = tetra_pairs(4);
        let (u, _) = pluck(n, 0).unwrap();
        let total: f64 = (0..n).map(|k| mode_dot(&pairs, k, &u).powi(2)).sum();
        let norm2: f64 = u.iter().map(|x| x * x).sum();
        assert_relative_eq!(total, norm2, epsilon = 1e-10);
    }

    #[test]
    fn modal_evolution_matches_a_fourth_order_time_integrator() {
        let (pairs, n) = tetra_pairs(4);
        let fs = 10.0;
        let mesh = tetrahedron(1.0);
        let positions: Vec<_> = mesh.live_vertices().map(|v| mesh.position(v)).collect();
        let tris: Vec<_> = mesh.live_tris().map(|(_, t)| t).collect();
        let a = assemble_stiffness(&positions, &tris).unwrap();
        let mut dense = DMatrix::<f64>::zeros(n, n);
        for (&val, (i, j)) in a.iter() {
            dense[(i, j)] += val;
        }

        let (u, u_t) = pluck(n, 0).unwrap();
        let lambda = pairs.eigenvalues[3];
        let period = 2.0 * std::f64::consts::PI / (fs * lambda.sqrt());
        let total = 10.0 * period;
        let steps = 40_000usize;
        let h = total / steps as f64;

        // RK4 on u' = v, v' = -fs^2 A u.
        let mut uv = (DVector::from_vec(u.clone()), DVector::from_vec(u_t.clone()));
        let f = |s: &(DVector<f64>, DVector<f64>)| {
            (s.1.clone(), -(fs * fs) * (&dense * &s.0))
        };
        for _ in 0..steps {
            let k1 = f(&uv);
            let k2 = f(&(&uv.0 + 0.5 * h * &k1.0, &uv.1 + 0.5 * h * &k1.1));
            let k3 = f(&(&uv.0 + 0.5 * h * &k2.0, &uv.1 + 0.5 * h * &k2.1));
            let k4 = f(&(&uv.0 + h * &k3.0, &uv.1 + h * &k3.1));
            uv.0 += h / 6.0 * (&k1.0 + 2.0 * &k2.0 + 2.0 * &k3.0 + &k4.0);
            uv.1 += h / 6.0 * (&k1.1 + 2.0 * &k2.1 + 2.0 * &k3.1 + &k4.1);
        }

        let state = decompose(&u, &u_t, &pairs, fs, 0.0);
        let (u_modal, ut_modal) = evolve_modes(&state, &pairs, fs, total);
        for i in 0..n {
            assert!(
                (u_modal[i] - uv.0[i]).abs() < 1e-6,
                "u[{i}]: modal {} vs rk4 {}",
                u_modal[i],
                uv.0[i]
            );
            assert!(
                (ut_modal[i] - uv.1[i]).abs() < 1e-6 * fs,
                "u_t[{i}]: modal {} vs rk4 {}",
                ut_modal[i],
                uv.1[i]
            );
        }
    }

    #[test]
    fn projection_copies_parent_values() {
        let values = vec![0.2, 0.6, -1.0];
        assert_eq!(
            project(&values, &[0, 0, 2, 1], 3).unwrap(),
            vec![0.2, 0.2, -1.0, 0.6]
        );
        assert!(matches!(
            project(&values, &[3], 5),
            Err(SoundError::BadParent {
                snapshot: 5,
                child: 0,
                parent: 3,
                count: 3,
            })
        ));
    }

    #[test]
    fn wavetracks_interpolate_and_ramp_out() {
        let history = vec![
            SnapshotModes {
                time: 0.0,
                modes: vec![(1.0, 0.5), (3.0, 0.2)],
            },
            SnapshotModes {
                time: 1.0,
                modes: vec![(4.0, 0.5)],
            },
            SnapshotModes {
                time: 2.0,
                modes: vec![(4.0, 0.5)],
            },
        ];
        let tracks = build_wavetracks(&history, 2.5);
        assert_eq!(tracks.len(), 2);

        let (lambda, amp) = tracks[0].sample(0.5);
        assert_relative_eq!(lambda, 2.5);
        assert_relative_eq!(amp, 0.5);

        // Second mode disappears at t=1: amplitude ramps to zero there.
        assert_eq!(tracks[1].nodes.len(), 2);
        assert_eq!(tracks[1].nodes[1].time, 1.0);
        assert_eq!(tracks[1].nodes[1].amplitude, 0.0);
        assert_eq!(tracks[1].nodes[1].lambda, 3.0);

        // First mode survives to the end and ramps out at t_end.
        let last = tracks[0].nodes.last().unwrap();
        assert_eq!(last.time, 2.5);
        assert_eq!(last.amplitude, 0.0);
        for track in &tracks {
            for pair in track.nodes.windows(2) {
                assert!(pair[0].time < pair[1].time);
            }
        }
    }

    fn spectrum_magnitudes(samples: &[f64]) -> Vec<f64> {
        use rustfft::num_complex::Complex as FftComplex;
        use rustfft::FftPlanner;
        let mut buf: Vec<FftComplex<f64>> =
            samples.iter().map(|&x| FftComplex::new(x, 0.0)).collect();
        FftPlanner::new()
            .plan_fft_forward(buf.len())
            .process(&mut buf);
        buf[..buf.len() / 2].iter().map(|c| c.norm()).collect()
    }

    fn constant_track(hz: f64, fs: f64, amplitude: f64, t_end: f64) -> WaveTrack {
        let lambda = (2.0 * std::f64::consts::PI * hz / fs).powi(2);
        WaveTrack {
            nodes: vec![
                TrackNode {
                    time: 0.0,
                    lambda,
                    amplitude,
                },
                TrackNode {
                    time: t_end,
                    lambda,
                    amplitude,
                },
            ],
        }
    }

    #[test]
    fn synthesis_peaks_at_the_modal_frequency() {
        let fs = 2.0 * std::f64::consts::PI * 440.0;
        let track = constant_track(500.0, fs, 0.5, 1.0);
        let (samples, silent) = synthesize(&[track], fs, 44100, 0.9, 1.0);
        assert!(!silent);
        assert_eq!(samples.len(), 44100);
        let peak = samples.iter().fold(0.0f64, |m, &x| m.max(x.abs()));
        assert_relative_eq!(peak, 0.9, epsilon = 1e-12);

        // 1 s at 44100 Hz: bin k is k Hz exactly.
        let mags = spectrum_magnitudes(&samples);
        let argmax = (1..mags.len()).max_by(|&a, &b| mags[a].total_cmp(&mags[b])).unwrap();
        assert!(
            (argmax as i64 - 500).abs() <= 1,
            "spectral peak at {argmax} Hz, expected 500"
        );
    }

    #[test]
    fn two_equal_tracks_give_equal_spectral_peaks() {
        let fs = 2.0 * std::f64::consts::PI * 440.0;
        let tracks = [
            constant_track(400.0, fs, 0.3, 1.0),
            constant_track(1000.0, fs, 0.3, 1.0),
        ];
        let (samples, _) = synthesize(&tracks, fs, 44100, 0.9, 1.0);
        let mags = spectrum_magnitudes(&samples);
        let ratio = mags[400] / mags[1000];
        assert!(
            (ratio - 1.0).abs() < 0.01,
            "peak magnitudes differ: ratio {ratio}"
        );
    }

    #[test]
    fn zero_amplitude_synthesis_reports_silence() {
        let fs = 100.0;
        let track = constant_track(10.0, fs, 0.0, 1.0);
        let (samples, silent) = synthesize(&[track], fs, 1000, 0.9, 1.0);
        assert!(silent);
        assert!(samples.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn wav_format_is_pcm16_with_a_44_byte_header() {
        let mut bytes = Vec::new();
        write_wav(&mut bytes, &vec![0.0; 44100], 44100).unwrap();
        assert_eq!(bytes.len(), 44 + 88200);
        assert_eq!(&bytes[..4], b"RIFF");
        assert_eq!(&bytes[8..12], b"WAVE");
        assert_eq!(u32::from_le_bytes(bytes[24..28].try_into().unwrap()), 44100);

        let mut one = Vec::new();
        write_wav(&mut one, &[1.0, -1.0], 44100).unwrap();
        assert_eq!(i16::from_le_bytes(one[44..46].try_into().unwrap()), 32767);
        assert_eq!(i16::from_le_bytes(one[46..48].try_into().unwrap()), -32767);
    }

    #[test]
    fn wav_round_trip_is_within_the_quantization_bound() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("probe.wav");
        let samples: Vec<f64> = (0..2000)
            .map(|i| 0.9 * (i as f64 * 0.01).sin() * (i as f64 * 0.003).cos())
            .collect();
        save_wav(&path, &samples, 22050).unwrap();
        let (back, rate) = read_wav(&path).unwrap();
        assert_eq!(rate, 22050);
        assert_eq!(back.len(), samples.len());
        for (a, b) in samples.iter().zip(&back) {
            assert!((a - b).abs() <= 1.0 / 32768.0, "{a} vs {b}");
        }
    }

    #[test]
    fn pipeline_walks_a_whole_sphere_run() {
        let outcome = run_to_extinction(icosphere(1, 1.0), FlowConfig::default()).unwrap();
        let config = WaveformConfig {
            modes: 8,
            ..WaveformConfig::default()
        };
        let run = modal_history(&outcome.snapshots, &config).unwrap();
        assert_eq!(run.spectra.len(), outcome.snapshots.len());
        assert_eq!(run.history.len(), outcome.snapshots.len());
        for (snap, spec) in outcome.snapshots.iter().zip(&run.spectra) {
            assert_eq!(snap.time, spec.time);
            assert_eq!(spec.eigenvalues.len(), 8.min(snap.mesh.positions.len()));
            for pair in spec.eigenvalues.windows(2) {
                assert!(pair[0] <= pair[1] + 1e-12);
            }
        }
        for snap in &run.history {
            for &(lambda, amp) in &snap.modes {
                assert!(lambda.is_finite() && amp.is_finite());
                assert!(amp >= 0.0);
            }
            // The zero mode never carries audio amplitude.
            assert_eq!(snap.modes[0].1, 0.0);
        }
        let tracks = build_wavetracks(&run.history, outcome.extinction_time);
        let (samples, silent) =
            synthesize(&tracks, config.fs, config.sample_rate, 0.9, outcome.extinction_time);
        assert!(!silent);
        assert!(!samples.is_empty());
    }
}
