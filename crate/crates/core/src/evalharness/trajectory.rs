use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::env::{Event, EventKind, RacingEnv};
use crate::track::{check_gate_passage, update_progress, ProgressState, Track};

/// State of one live agent after one environment step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub step: usize,
    pub t: f64,
    pub agent: usize,
    pub position: [f64; 3],
    pub velocity: [f64; 3],
    pub next_gate: usize,
    /// Events raised by this agent during the step.
    pub events: Vec<EventKind>,
}

/// Sidecar describing the episode a trajectory file belongs to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryMeta {
    pub episode: usize,
    pub seed: u64,
    pub num_agents: usize,
    pub policy_dt: f64,
    pub gate_tolerance: f64,
    pub initial_positions: Vec<[f64; 3]>,
    pub track: Track,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeHistory {
    pub meta: TrajectoryMeta,
    pub records: Vec<TrajectoryRecord>,
}

fn arr(v: &Vector3<f64>) -> [f64; 3] {
    [v.x, v.y, v.z]
}

impl EpisodeHistory {
    /// Begin a history right after `env.reset`.
    pub fn start(env: &RacingEnv, episode: usize) -> Self {
        let cfg = env.config();
        Self {
            meta: TrajectoryMeta {
                episode,
                seed: env.seed(),
                num_agents: env.num_agents(),
                policy_dt: cfg.policy_dt,
                gate_tolerance: cfg.stage.gate_tolerance,
                initial_positions: env.states().iter().map(|s| arr(&s.position)).collect(),
                track: cfg.track.clone(),
            },
            records: Vec::new(),
        }
    }

    /// Append one record per agent that was racing when the step began.
    pub fn push_step(&mut self, env: &RacingEnv, was_racing: &[bool], events: &[Event]) {
        let states = env.states();
        let progress = env.progress();
        let step = env.step_count();
        for (i, s) in states.iter().enumerate().filter(|(i, _)| was_racing[*i]) {
            self.records.push(TrajectoryRecord {
                step,
                t: env.sim_time(),
                agent: i,
                position: arr(&s.position),
                velocity: arr(&s.velocity),
                next_gate: progress[i].next_gate_index,
                events: events
                    .iter()
                    .filter(|e| e.agent == i)
                    .map(|e| e.kind.clone())
                    .collect(),
            });
        }
    }

    /// Path length over flight time per agent, from the recorded positions.
    pub fn mean_velocities(&self) -> Vec<f64> {
        let n = self.meta.num_agents;
        let mut prev: Vec<Vector3<f64>> = self
            .meta
            .initial_positions
            .iter()
            .map(|p| Vector3::from(*p))
            .collect();
        let mut length = vec![0.0; n];
        let mut steps = vec![0usize; n];
        for r in &self.records {
            let p = Vector3::from(r.position);
            let faulted = r
                .events
                .iter()
                .any(|e| matches!(e, EventKind::Fault { .. }));
            if !faulted {
                length[r.agent] += (p - prev[r.agent]).norm();
                steps[r.agent] += 1;
            }
            prev[r.agent] = p;
        }
        (0..n)
            .map(|i| {
                let time = steps[i] as f64 * self.meta.policy_dt;
                if time > 0.0 {
                    length[i] / time
                } else {
                    0.0
                }
            })
            .collect()
    }
}

/// `(step, agent, gate)` for every gate passage.
pub type GatePassage = (usize, usize, usize);

/// Gate passages as logged in the records.
pub fn logged_gate_events(history: &EpisodeHistory) -> Vec<GatePassage> {
    history
        .records
        .iter()
        .flat_map(|r| {
            r.events.iter().filter_map(move |e| match e {
                EventKind::GatePass { gate, .. } => Some((r.step, r.agent, *gate)),
                _ => None,
            })
        })
        .collect()
}

/// Recompute gate passages offline from positions alone.
pub fn replay_gate_events(history: &EpisodeHistory) -> Vec<GatePassage> {
    let meta = &history.meta;
    let gates = &meta.track.gates;
    let mut prev: Vec<Vector3<f64>> = meta
        .initial_positions
        .iter()
        .map(|p| Vector3::from(*p))
        .collect();
    let mut progress = vec![ProgressState::default(); meta.num_agents];
    let mut out = Vec::new();
    for r in &history.records {
        let p = Vector3::from(r.position);
        let faulted = r
            .events
            .iter()
            .any(|e| matches!(e, EventKind::Fault { .. }));
        let i = r.agent;
        if !faulted {
            let gate = progress[i].next_gate_index;
            let passed = check_gate_passage(&prev[i], &p, &gates[gate], meta.gate_tolerance);
            if passed {
                out.push((r.step, i, gate));
            }
            progress[i] = update_progress(&progress[i], passed, r.t, gates.len());
        }
        prev[i] = p;
    }
    out
}

fn io(path: &Path) -> impl Fn(std::io::Error) -> EvalError + '_ {
    move |source| EvalError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn meta_path(path: &Path) -> PathBuf {
    path.with_extension("meta.json")
}

/// Write `path` (one JSON record per line) and a `.meta.json` sidecar next
/// to it holding the seed, spawn positions and track geometry.
pub fn export_trajectories(history: &EpisodeHistory, path: &Path) -> Result<(), EvalError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io(dir))?;
    }
    let file = fs::File::create(path).map_err(io(path))?;
    let mut w = BufWriter::new(file);
    for r in &history.records {
        serde_json::to_writer(&mut w, r).map_err(|e| EvalError::Format {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        w.write_all(b"\n").map_err(io(path))?;
    }
    w.flush().map_err(io(path))?;
    let meta = meta_path(path);
    let text = serde_json::to_string_pretty(&history.meta).expect("meta serializes");
    fs::write(&meta, text).map_err(io(&meta))
}

pub fn load_trajectories(path: &Path) -> Result<EpisodeHistory, EvalError> {
    let format = |p: &Path, e: serde_json::Error| EvalError::Format {
        path: p.display().to_string(),
        message: e.to_string(),
    };
    let mp = meta_path(path);
    let meta_text = fs::read_to_string(&mp).map_err(io(&mp))?;
    let meta: TrajectoryMeta = serde_json::from_str(&meta_text).map_err(|e| format(&mp, e))?;
    let file = fs::File::open(path).map_err(io(path))?;
    let mut records = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(io(path))?;
        if !line.trim().is_empty() {
            records.push(serde_json::from_str(&line).map_err(|e| format(path, e))?);
        }
    }
    Ok(EpisodeHistory { meta, records })
}
