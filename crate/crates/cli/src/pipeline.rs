//! Pipeline stages behind the subcommands. Each stage loads its inputs fully
//! before creating any output file, so a bad input never leaves partial
//! artifacts behind.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use anyhow::{bail, Context, Result};

use flowsong::flow::{run_to_extinction, FlowOutcome};
use flowsong::mesh::io::{load_indexed_bytes, load_mesh_bytes, save_obj, write_stl_binary, MeshFormat};
use flowsong::mesh::SurfaceMesh;
use flowsong::sound::{
    build_wavetracks, modal_history, save_wav, synthesize, WaveRun, WaveTrack,
};
use flowsong::spectrum::{assemble_stiffness, smallest_eigenpairs};

use crate::artifacts;
use crate::config::RunConfig;

/// Everything the monolithic run computes, returned so tests can inspect the
/// in-memory results alongside the files.
pub struct PipelineProducts {
    pub outcome: FlowOutcome,
    pub wave: WaveRun,
    pub tracks: Vec<WaveTrack>,
    pub samples: Vec<f64>,
    pub silent: bool,
    pub t_end: f64,
}

/// Reads and parses the input mesh; `format` "auto" sniffs the extension and
/// file head, "stl" sniffs only binary vs ascii.
pub fn load_input(path: &Path, format: &str) -> Result<SurfaceMesh> {
    if path.as_os_str().is_empty() {
        bail!("no input mesh given (use --input or an `input` config key)");
    }
    let bytes =
        std::fs::read(path).with_context(|| format!("reading input {}", path.display()))?;
    let format = match format {
        "auto" => MeshFormat::guess(path, &bytes),
        "obj" => MeshFormat::Obj,
        "stl" => {
            if bytes.starts_with(b"solid") {
                MeshFormat::StlAscii
            } else {
                MeshFormat::StlBinary
            }
        }
        other => bail!("unknown format `{other}` (expected auto, obj, or stl)"),
    };
    load_mesh_bytes(&bytes, format).with_context(|| format!("loading {}", path.display()))
}

/// Runs a closure under a rayon pool capped at `threads` workers (all cores
/// when None).
pub fn with_thread_cap<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match threads {
        None => Ok(f()),
        Some(n) => Ok(rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .context("building thread pool")?
            .install(f)),
    }
}

fn live_geometry(mesh: &SurfaceMesh) -> (Vec<nalgebra::Vector3<f64>>, Vec<[u32; 3]>) {
    let compact = mesh.compact();
    (compact.positions, compact.tris)
}

/// Full pipeline: flow to extinction, one eigensolve per snapshot, wave
/// propagation, synthesis, and every artifact written under `out_dir`.
pub fn run_pipeline(config: &RunConfig) -> Result<PipelineProducts> {
    let products = compute_pipeline(config)?;
    write_run_artifacts(config, &products, true)?;
    Ok(products)
}

/// The computation half of `run_pipeline`: no files are touched.
pub fn compute_pipeline(config: &RunConfig) -> Result<PipelineProducts> {
    let mesh = load_input(&config.input, &config.format)?;
    with_thread_cap(config.threads, || -> Result<PipelineProducts> {
        let outcome =
            run_to_extinction(mesh, config.flow_config()).context("flow stage")?;
        let wave =
            modal_history(&outcome.snapshots, &config.waveform_config()).context("sound stage")?;
        let t_end = outcome.extinction_time;
        let tracks = build_wavetracks(&wave.history, t_end);
        let (samples, silent) = synthesize(
            &tracks,
            config.fs,
            config.sample_rate,
            flowsong::sound::WaveformConfig::default().peak_normalization,
            t_end,
        );
        Ok(PipelineProducts {
            outcome,
            wave,
            tracks,
            samples,
            silent,
            t_end,
        })
    })?
}

fn write_run_artifacts(
    config: &RunConfig,
    products: &PipelineProducts,
    with_sound: bool,
) -> Result<()> {
    let dir = &config.out_dir;
    std::fs::create_dir_all(dir)
        .with_context(|| format!("creating output directory {}", dir.display()))?;
    artifacts::write_frames(dir, &products.outcome.snapshots)?;
    artifacts::write_events(&dir.join("events.log"), &products.outcome.events)?;
    if with_sound {
        let rows: Vec<(f64, Vec<f64>)> = products
            .wave
            .spectra
            .iter()
            .map(|s| (s.time, s.eigenvalues.clone()))
            .collect();
        artifacts::write_eigenvalues_csv(&dir.join("eigenvalues.csv"), config.modes, &rows)?;
        artifacts::write_traces_csv(&dir.join("traces.csv"), &products.tracks)?;
        save_wav(&dir.join("song.wav"), &products.samples, config.sample_rate)
            .context("writing song.wav")?;
    }
    let silent = with_sound.then_some(products.silent);
    let summary = artifacts::RunSummary::new(config, &products.outcome, silent);
    artifacts::write_run_json(&dir.join("run.json"), &summary)?;
    Ok(())
}

/// Mesh evolution only: frames, parent maps, events log, and the run summary.
pub fn flow_stage(config: &RunConfig) -> Result<FlowOutcome> {
    let mesh = load_input(&config.input, &config.format)?;
    let outcome = with_thread_cap(config.threads, || {
        run_to_extinction(mesh, config.flow_config())
    })?
    .context("flow stage")?;
    let dir = &config.out_dir;
    std::fs::create_dir_all(dir)
        .with_context(|| format!("creating output directory {}", dir.display()))?;
    artifacts::write_frames(dir, &outcome.snapshots)?;
    artifacts::write_events(&dir.join("events.log"), &outcome.events)?;
    let summary = artifacts::RunSummary::new(config, &outcome, None);
    artifacts::write_run_json(&dir.join("run.json"), &summary)?;
    Ok(outcome)
}

/// Eigenvalues of a single mesh file, ascending, at most `modes` of them.
pub fn spectrum_stage(
    input: &Path,
    format: &str,
    modes: usize,
    seed: u64,
    threads: Option<usize>,
) -> Result<Vec<f64>> {
    let mesh = load_input(input, format)?;
    let (positions, tris) = live_geometry(&mesh);
    with_thread_cap(threads, || -> Result<Vec<f64>> {
        let a = assemble_stiffness(&positions, &tris).context("spectrum stage")?;
        let k = modes.min(positions.len());
        let pairs = smallest_eigenpairs(&a, k, seed).context("spectrum stage")?;
        Ok(pairs.eigenvalues)
    })?
}

/// Resynthesizes a WAV from saved wavetrack traces; returns the silent flag.
pub fn sound_stage(traces: &Path, out: &Path, fs: f64, sample_rate: u32) -> Result<bool> {
    if !(fs > 0.0 && fs.is_finite()) {
        bail!("fs must be positive and finite (got {fs})");
    }
    if sample_rate == 0 {
        bail!("sample_rate must be positive");
    }
    let tracks = artifacts::read_traces_csv(traces)?;
    let t_end = tracks
        .iter()
        .flat_map(|t| t.nodes.iter().map(|n| n.time))
        .fold(0.0f64, f64::max);
    let (samples, silent) = synthesize(
        &tracks,
        fs,
        sample_rate,
        flowsong::sound::WaveformConfig::default().peak_normalization,
        t_end,
    );
    save_wav(out, &samples, sample_rate)
        .with_context(|| format!("writing {}", out.display()))?;
    Ok(silent)
}

/// Human-readable mesh report plus a validity verdict. Works on raw parsed
/// geometry so holes and non-manifold defects get reported instead of
/// aborting the load.
pub fn validate_stage(input: &Path, format: &str) -> Result<(String, bool)> {
    if input.as_os_str().is_empty() {
        bail!("no input mesh given");
    }
    let bytes =
        std::fs::read(input).with_context(|| format!("reading input {}", input.display()))?;
    let mesh_format = match format {
        "auto" => MeshFormat::guess(input, &bytes),
        "obj" => MeshFormat::Obj,
        "stl" => {
            if bytes.starts_with(b"solid") {
                MeshFormat::StlAscii
            } else {
                MeshFormat::StlBinary
            }
        }
        other => bail!("unknown format `{other}` (expected auto, obj, or stl)"),
    };
    let (positions, tris) = load_indexed_bytes(&bytes, mesh_format)
        .with_context(|| format!("loading {}", input.display()))?;

    let mut report = String::new();
    let mut ok = true;

    // Undirected edge census: closed manifolds have every edge in exactly
    // two triangles.
    let mut edge_tris: BTreeMap<(u32, u32), usize> = BTreeMap::new();
    let mut area = 0.0;
    for tri in &tris {
        let [a, b, c] = *tri;
        for (u, v) in [(a, b), (b, c), (c, a)] {
            *edge_tris.entry((u.min(v), u.max(v))).or_insert(0) += 1;
        }
        let (pa, pb, pc) = (
            positions[a as usize],
            positions[b as usize],
            positions[c as usize],
        );
        area += 0.5 * (pb - pa).cross(&(pc - pa)).norm();
    }
    let mean_edge = if edge_tris.is_empty() {
        0.0
    } else {
        edge_tris
            .keys()
            .map(|&(a, b)| (positions[a as usize] - positions[b as usize]).norm())
            .sum::<f64>()
            / edge_tris.len() as f64
    };

    // Components of vertices joined by triangle edges.
    let mut comp: Vec<u32> = (0..positions.len() as u32).collect();
    fn find(comp: &mut Vec<u32>, v: u32) -> u32 {
        let mut root = v;
        while comp[root as usize] != root {
            root = comp[root as usize];
        }
        let mut cur = v;
        while comp[cur as usize] != root {
            cur = std::mem::replace(&mut comp[cur as usize], root);
        }
        root
    }
    for &(a, b) in edge_tris.keys() {
        let (ra, rb) = (find(&mut comp, a), find(&mut comp, b));
        comp[ra.max(rb) as usize] = ra.min(rb);
    }
    let mut used: Vec<u32> = tris.iter().flatten().copied().collect();
    used.sort_unstable();
    used.dedup();
    let components: std::collections::BTreeSet<u32> =
        used.iter().map(|&v| find(&mut comp, v)).collect();

    writeln!(
        report,
        "vertices: {} ({} unreferenced)\ntriangles: {}\ncomponents: {}",
        positions.len(),
        positions.len() - used.len(),
        tris.len(),
        components.len()
    )?;
    writeln!(
        report,
        "total area: {:.6e}\nmean edge length: {:.6e}",
        area, mean_edge
    )?;
    if tris.is_empty() {
        ok = false;
        writeln!(report, "mesh has no triangles")?;
    }

    let boundary: Vec<(u32, u32)> = edge_tris
        .iter()
        .filter(|(_, &n)| n == 1)
        .map(|(&e, _)| e)
        .collect();
    let nonmanifold: Vec<(u32, u32)> = edge_tris
        .iter()
        .filter(|(_, &n)| n > 2)
        .map(|(&e, _)| e)
        .collect();
    for (label, list) in [("boundary", &boundary), ("non-manifold", &nonmanifold)] {
        writeln!(report, "{label} edges: {}", list.len())?;
        if !list.is_empty() {
            ok = false;
            for (a, b) in list.iter().take(8) {
                writeln!(report, "  {label} edge ({a}, {b})")?;
            }
            if list.len() > 8 {
                writeln!(report, "  ... and {} more", list.len() - 8)?;
            }
        }
    }

    match SurfaceMesh::from_indexed(positions, tris) {
        Ok(mesh) => {
            writeln!(report, "signed volume: {:.6e}", mesh.signed_volume())?;
            writeln!(report, "closed-manifold validation: ok")?;
        }
        Err(e) => {
            ok = false;
            writeln!(report, "closed-manifold validation: FAILED: {e}")?;
        }
    }
    Ok((report, ok))
}

/// Writes a generated mesh as OBJ or binary STL, chosen by extension.
pub fn save_generated(mesh: &SurfaceMesh, out: &Path) -> Result<()> {
    let (positions, tris) = live_geometry(mesh);
    let by_extension = out
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase());
    match by_extension.as_deref() {
        Some("stl") => {
            let mut w = std::io::BufWriter::new(
                std::fs::File::create(out)
                    .with_context(|| format!("creating {}", out.display()))?,
            );
            write_stl_binary(&mut w, &positions, &tris)?;
            std::io::Write::flush(&mut w)?;
        }
        _ => save_obj(out, &positions, &tris)
            .with_context(|| format!("writing {}", out.display()))?,
    }
    Ok(())
}

/// Formats one eigenvalue CSV row (plus header) in the same shape as
/// `eigenvalues.csv`, padded to `modes` columns.
pub fn spectrum_csv(time: f64, modes: usize, eigenvalues: &[f64]) -> String {
    let mut text = String::from("t");
    for k in 1..=modes {
        let _ = write!(text, ",lambda_{k}");
    }
    text.push('\n');
    let _ = write!(text, "{time}");
    for k in 0..modes {
        match eigenvalues.get(k) {
            Some(v) => {
                let _ = write!(text, ",{v}");
            }
            None => text.push(','),
        }
    }
    text.push('\n');
    text
}
