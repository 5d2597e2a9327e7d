use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

use flowsong::mesh::primitives::{dumbbell, icosphere, tetrahedron};
use flowsong_cli::{config::ConfigOverlay, pipeline, RunConfig};

#[derive(Parser)]
#[command(
    name = "flowsong",
    version,
    about = "Evolve a surface by mean curvature flow and turn its vibration spectra into sound"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Full pipeline: flow to extinction, spectra per snapshot, song synthesis.
    Run(RunArgs),
    /// Mesh evolution only: frames, parent maps, and the event log.
    Flow(RunArgs),
    /// Eigenvalues of a single mesh file, printed as one CSV row.
    Spectrum(SpectrumArgs),
    /// Resynthesize a WAV from saved wavetrack traces.
    Sound(SoundArgs),
    /// Check a mesh: closed-manifold validation and a boundary-edge report.
    Validate(ValidateArgs),
    /// Generate a built-in test mesh (OBJ, or STL by extension).
    #[command(subcommand)]
    Gen(GenShape),
}

/// Flags shared by `run` and `flow`; every flag overrides the config file.
#[derive(Args)]
struct RunArgs {
    /// Config file with one `key = value` per line; `#` starts a comment.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Input mesh path.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Input format: auto, obj, stl.
    #[arg(long)]
    format: Option<String>,
    /// Output directory for all artifacts.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Simulation time between snapshots.
    #[arg(long)]
    checkpoint_interval: Option<f64>,
    /// Staleness constant for the adaptive refresh schedule.
    #[arg(long)]
    cs: Option<f64>,
    /// Merge edges shorter than this fraction of the mean edge.
    #[arg(long)]
    edge_frac: Option<f64>,
    /// Merge triangles with an angle below this many degrees.
    #[arg(long)]
    angle_deg: Option<f64>,
    /// Merge faces smaller than this fraction of the mean face area.
    #[arg(long)]
    face_frac: Option<f64>,
    /// Remove components below this fraction of the initial area.
    #[arg(long)]
    vanish_area_frac: Option<f64>,
    /// Number of eigenmodes tracked per snapshot.
    #[arg(long)]
    modes: Option<usize>,
    /// Frequency scale (angular frequency = fs * sqrt(lambda)).
    #[arg(long)]
    fs: Option<f64>,
    /// Output WAV sample rate in Hz.
    #[arg(long)]
    sample_rate: Option<u32>,
    /// Vertex index receiving the initial pluck.
    #[arg(long)]
    pluck_vertex: Option<usize>,
    /// Abort the flow after this many steps.
    #[arg(long)]
    max_steps: Option<u64>,
    /// Seed for the eigensolver start vector.
    #[arg(long)]
    seed: Option<u64>,
    /// Cap on rayon worker threads.
    #[arg(long)]
    threads: Option<usize>,
}

impl RunArgs {
    fn into_config(self) -> Result<RunConfig> {
        let overlay = ConfigOverlay {
            input: self.input,
            format: self.format,
            out_dir: self.out_dir,
            checkpoint_interval: self.checkpoint_interval,
            cs: self.cs,
            edge_frac: self.edge_frac,
            angle_deg: self.angle_deg,
            face_frac: self.face_frac,
            vanish_area_frac: self.vanish_area_frac,
            modes: self.modes,
            fs: self.fs,
            sample_rate: self.sample_rate,
            pluck_vertex: self.pluck_vertex,
            max_steps: self.max_steps,
            seed: self.seed,
            threads: self.threads,
        };
        RunConfig::layered(self.config.as_deref(), &overlay)
    }
}

#[derive(Args)]
struct SpectrumArgs {
    /// Mesh file to analyze.
    #[arg(long)]
    input: PathBuf,
    /// Input format: auto, obj, stl.
    #[arg(long, default_value = "auto")]
    format: String,
    /// Number of eigenvalues to compute.
    #[arg(long, default_value_t = RunConfig::default().modes)]
    modes: usize,
    /// Seed for the eigensolver start vector.
    #[arg(long, default_value_t = RunConfig::default().seed)]
    seed: u64,
    /// Value for the time column of the emitted row.
    #[arg(long, default_value_t = 0.0)]
    time: f64,
    /// Write the CSV here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Cap on rayon worker threads.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args)]
struct SoundArgs {
    /// Wavetrack traces produced by `run` (traces.csv).
    #[arg(long)]
    traces: PathBuf,
    /// Output WAV path.
    #[arg(long, default_value = "song.wav")]
    out: PathBuf,
    /// Frequency scale (angular frequency = fs * sqrt(lambda)).
    #[arg(long, default_value_t = RunConfig::default().fs)]
    fs: f64,
    /// Output WAV sample rate in Hz.
    #[arg(long, default_value_t = RunConfig::default().sample_rate)]
    sample_rate: u32,
}

#[derive(Args)]
struct ValidateArgs {
    /// Mesh file to check.
    #[arg(long)]
    input: PathBuf,
    /// Input format: auto, obj, stl.
    #[arg(long, default_value = "auto")]
    format: String,
}

#[derive(Subcommand)]
enum GenShape {
    /// Subdivided icosahedron projected onto a sphere.
    Icosphere {
        #[arg(long, default_value_t = 4)]
        subdiv: u32,
        #[arg(long, default_value_t = 1.0)]
        radius: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Two spheres joined by a smooth neck; pinches off under the flow.
    Dumbbell {
        #[arg(long, default_value_t = 1.0)]
        r_left: f64,
        #[arg(long, default_value_t = 1.0)]
        r_right: f64,
        /// Neck waist radius.
        #[arg(long, default_value_t = 0.15)]
        neck: f64,
        /// Half-length of the neck along its axis.
        #[arg(long, default_value_t = 0.7)]
        half_length: f64,
        /// Polar angle (radians) where the neck meets each sphere.
        #[arg(long, default_value_t = 0.7)]
        junction: f64,
        /// Target edge length controlling mesh resolution.
        #[arg(long, default_value_t = 0.12)]
        target_edge: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Regular tetrahedron with the given circumradius.
    Tetrahedron {
        #[arg(long, default_value_t = 1.0)]
        radius: f64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn dispatch(command: Command) -> Result<i32> {
    match command {
        Command::Run(args) => {
            let config = args.into_config()?;
            let products = pipeline::run_pipeline(&config)?;
            println!(
                "run complete: {} snapshots, {} events, extinction at t = {}, wrote {}",
                products.outcome.snapshots.len(),
                products.outcome.events.len(),
                products.t_end,
                config.out_dir.display()
            );
            Ok(0)
        }
        Command::Flow(args) => {
            let config = args.into_config()?;
            let outcome = pipeline::flow_stage(&config)?;
            println!(
                "flow complete: {} snapshots, {} events, final time t = {}, wrote {}",
                outcome.snapshots.len(),
                outcome.events.len(),
                outcome.extinction_time,
                config.out_dir.display()
            );
            Ok(0)
        }
        Command::Spectrum(args) => {
            let eigenvalues = pipeline::spectrum_stage(
                &args.input,
                &args.format,
                args.modes,
                args.seed,
                args.threads,
            )?;
            let text = pipeline::spectrum_csv(args.time, args.modes, &eigenvalues);
            match args.out {
                Some(path) => std::fs::write(&path, text)?,
                None => print!("{text}"),
            }
            Ok(0)
        }
        Command::Sound(args) => {
            let silent = pipeline::sound_stage(&args.traces, &args.out, args.fs, args.sample_rate)?;
            if silent {
                println!("wrote {} (all-zero signal)", args.out.display());
            } else {
                println!("wrote {}", args.out.display());
            }
            Ok(0)
        }
        Command::Validate(args) => {
            let (report, ok) = pipeline::validate_stage(&args.input, &args.format)?;
            print!("{report}");
            Ok(if ok { 0 } else { 1 })
        }
        Command::Gen(shape) => {
            let (mesh, out) = match shape {
                GenShape::Icosphere {
                    subdiv,
                    radius,
                    out,
                } => (icosphere(subdiv, radius), out),
                GenShape::Dumbbell {
                    r_left,
                    r_right,
                    neck,
                    half_length,
                    junction,
                    target_edge,
                    out,
                } => (
                    dumbbell(r_left, r_right, neck, half_length, junction, target_edge),
                    out,
                ),
                GenShape::Tetrahedron { radius, out } => (tetrahedron(radius), out),
            };
            pipeline::save_generated(&mesh, &out)?;
            println!(
                "wrote {} ({} vertices, {} triangles)",
                out.display(),
                mesh.live_vertex_count(),
                mesh.live_tri_count()
            );
            Ok(0)
        }
    }
}

fn main() {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(code) => std::process::exit(code),
        Err(err) => {
            eprintln!("error: {err:#}");
            std::process::exit(1);
        }
    }
}
