//! Run artifacts: metric CSVs, the binary trajectory with its JSON sidecar, the load-balance
//! event log and the JSON report.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use overlapsim_core::coordinator::{RunReport, StepEvent};
use overlapsim_core::{BodyState, Scene, STATE_LEN};
use serde::Serialize;

pub const FRAMES_CSV: &str = "frames.csv";
pub const PER_WORKER_CSV: &str = "per_worker.csv";
pub const ERRORS_CSV: &str = "errors.csv";
pub const TRAJECTORY_BIN: &str = "trajectory.bin";
pub const TRAJECTORY_JSON: &str = "trajectory.json";
pub const EVENTS_LOG: &str = "events.jsonl";
pub const REPORT_JSON: &str = "report.json";

#[derive(Debug, thiserror::Error)]
pub enum OutputError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("{path}: malformed trajectory: {detail}")]
    Trajectory { path: PathBuf, detail: String },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> OutputError + '_ {
    move |source| OutputError::Io { path: path.to_path_buf(), source }
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> OutputError + '_ {
    move |source| OutputError::Csv { path: path.to_path_buf(), source }
}

fn create(path: &Path) -> Result<BufWriter<File>, OutputError> {
    File::create(path).map(BufWriter::new).map_err(io_err(path))
}

/// Writes `frames.csv`, `per_worker.csv` and `errors.csv` into `dir`.
pub fn emit_metrics(report: &RunReport, dir: &Path) -> Result<(), OutputError> {
    let path = dir.join(FRAMES_CSV);
    let mut w = csv::Writer::from_writer(create(&path)?);
    w.write_record(["step", "wall_ms", "total_contacts"]).map_err(csv_err(&path))?;
    for f in &report.frames {
        w.write_record([f.step.to_string(), f.wall_ms.to_string(), f.total_contacts.to_string()])
            .map_err(csv_err(&path))?;
    }
    w.flush().map_err(io_err(&path))?;

    let path = dir.join(PER_WORKER_CSV);
    let mut w = csv::Writer::from_writer(create(&path)?);
    w.write_record(["step", "worker", "active_bodies", "contacts"]).map_err(csv_err(&path))?;
    for f in &report.frames {
        for (k, wf) in f.workers.iter().enumerate() {
            w.write_record([
                f.step.to_string(),
                k.to_string(),
                wf.active_bodies.to_string(),
                wf.contacts.to_string(),
            ])
            .map_err(csv_err(&path))?;
        }
    }
    w.flush().map_err(io_err(&path))?;

    let path = dir.join(ERRORS_CSV);
    let mut w = csv::Writer::from_writer(create(&path)?);
    w.write_record(["step", "lcp_residual_total", "joint_violation_max_rel"]).map_err(csv_err(&path))?;
    for f in &report.frames {
        w.write_record([
            f.step.to_string(),
            f.lcp_residual_total.to_string(),
            f.joint_violation_max_rel.to_string(),
        ])
        .map_err(csv_err(&path))?;
    }
    w.flush().map_err(io_err(&path))?;
    Ok(())
}

/// One JSON object per line.
pub fn write_events(events: &[StepEvent], path: &Path) -> Result<(), OutputError> {
    let mut w = create(path)?;
    for e in events {
        serde_json::to_writer(&mut w, e)
            .map_err(|source| OutputError::Json { path: path.to_path_buf(), source })?;
        w.write_all(b"\n").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn read_events(path: &Path) -> Result<Vec<StepEvent>, OutputError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|source| OutputError::Json { path: path.to_path_buf(), source }))
        .collect()
}

pub fn write_json(value: &impl Serialize, path: &Path) -> Result<(), OutputError> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)
        .map_err(|source| OutputError::Json { path: path.to_path_buf(), source })?;
    w.flush().map_err(io_err(path))
}

#[derive(Serialize)]
struct SidecarBody {
    id: u32,
    shape: overlapsim_core::Shape,
    mass: f64,
    is_static: bool,
}

#[derive(Serialize)]
struct Sidecar {
    format: &'static str,
    frame_layout: &'static str,
    state_layout: &'static str,
    timestep_s: f64,
    body_count: usize,
    bodies: Vec<SidecarBody>,
}

/// Streams frames of `(step: u64, count: u32, count x 13 f64)`, all little-endian.
pub struct TrajectoryWriter {
    out: BufWriter<File>,
    path: PathBuf,
}

impl TrajectoryWriter {
    /// Creates the binary file and writes the JSON sidecar next to it.
    pub fn create(dir: &Path, scene: &Scene) -> Result<Self, OutputError> {
        let sidecar = Sidecar {
            format: "overlapsim-trajectory-v1",
            frame_layout: "u64 step, u32 body_count, body_count x 13 f64; little-endian; bodies in id order",
            state_layout: "x y z qw qx qy qz vx vy vz wx wy wz",
            timestep_s: scene.timestep,
            body_count: scene.bodies.len(),
            bodies: scene
                .bodies
                .iter()
                .map(|b| SidecarBody { id: b.id.0, shape: b.shape.clone(), mass: b.mass, is_static: b.is_static() })
                .collect(),
        };
        write_json(&sidecar, &dir.join(TRAJECTORY_JSON))?;
        let path = dir.join(TRAJECTORY_BIN);
        Ok(Self { out: create(&path)?, path })
    }

    pub fn write_frame(&mut self, step: u64, states: &[BodyState]) -> Result<(), OutputError> {
        let mut buf = Vec::with_capacity(12 + states.len() * STATE_LEN * 8);
        buf.extend_from_slice(&step.to_le_bytes());
        buf.extend_from_slice(&(states.len() as u32).to_le_bytes());
        for s in states {
            for v in s.to_array() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        self.out.write_all(&buf).map_err(io_err(&self.path))
    }

    pub fn finish(mut self) -> Result<(), OutputError> {
        self.out.flush().map_err(io_err(&self.path))
    }
}

/// Reads every frame of a trajectory file.
pub fn read_trajectory(path: &Path) -> Result<Vec<(u64, Vec<BodyState>)>, OutputError> {
    let mut bytes = Vec::new();
    BufReader::new(File::open(path).map_err(io_err(path))?)
        .read_to_end(&mut bytes)
        .map_err(io_err(path))?;
    let bad = |detail: String| OutputError::Trajectory { path: path.to_path_buf(), detail };
    let mut frames = Vec::new();
    let mut at = 0;
    while at < bytes.len() {
        if bytes.len() - at < 12 {
            return Err(bad(format!("truncated frame header at byte {at}")));
        }
        let step = u64::from_le_bytes(bytes[at..at + 8].try_into().unwrap());
        let n = u32::from_le_bytes(bytes[at + 8..at + 12].try_into().unwrap()) as usize;
        at += 12;
        let need = n * STATE_LEN * 8;
        if bytes.len() - at < need {
            return Err(bad(format!("frame {step} truncated")));
        }
        let states = bytes[at..at + need]
            .chunks_exact(STATE_LEN * 8)
            .map(|chunk| {
                let mut a = [0.0; STATE_LEN];
                for (k, v) in a.iter_mut().enumerate() {
                    *v = f64::from_le_bytes(chunk[k * 8..k * 8 + 8].try_into().unwrap());
                }
                BodyState::from_array(&a)
            })
            .collect();
        at += need;
        frames.push((step, states));
    }
    Ok(frames)
}
