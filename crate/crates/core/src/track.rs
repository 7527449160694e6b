//! Gate geometry, the built-in Ring and Figure-Eight layouts, directed gate
//! passage and lap bookkeeping.

use std::f64::consts::{FRAC_PI_2, TAU};
use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_GATE_HALF_EXTENT: f64 = 0.5;

#[derive(Debug, Error)]
pub enum TrackError {
    #[error("invalid track: {0}")]
    InvalidTrackSpec(String),
    #[error("track file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("track file {path}: {message}")]
    Parse { path: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Gate {
    pub center: Vector3<f64>,
    /// Heading of the passage direction in the horizontal plane.
    pub yaw: f64,
    pub half_width: f64,
    pub half_height: f64,
}

impl Gate {
    pub fn new(center: Vector3<f64>, yaw: f64) -> Self {
        Self {
            center,
            yaw,
            half_width: DEFAULT_GATE_HALF_EXTENT,
            half_height: DEFAULT_GATE_HALF_EXTENT,
        }
    }

    /// Unit normal pointing in the forward passage direction.
    pub fn normal(&self) -> Vector3<f64> {
        Vector3::new(self.yaw.cos(), self.yaw.sin(), 0.0)
    }

    /// Unit horizontal axis spanning the gate opening.
    pub fn lateral(&self) -> Vector3<f64> {
        Vector3::new(-self.yaw.sin(), self.yaw.cos(), 0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Track {
    pub name: String,
    pub gates: Vec<Gate>,
}

impl Track {
    pub fn new(name: impl Into<String>, gates: Vec<Gate>) -> Result<Self, TrackError> {
        let track = Self {
            name: name.into(),
            gates,
        };
        track.validate()?;
        Ok(track)
    }

    pub fn validate(&self) -> Result<(), TrackError> {
        let bad = |m: String| Err(TrackError::InvalidTrackSpec(m));
        if self.gates.len() < 2 {
            return bad(format!("need at least 2 gates, got {}", self.gates.len()));
        }
        for (i, g) in self.gates.iter().enumerate() {
            if !(g.half_width > 0.0 && g.half_height > 0.0) {
                return bad(format!("gate {i} has non-positive half extents"));
            }
            if !(g.center.iter().all(|x| x.is_finite()) && g.yaw.is_finite()) {
                return bad(format!("gate {i} has non-finite geometry"));
            }
        }
        let n = self.gates.len();
        for i in 0..n {
            let j = (i + 1) % n;
            if (self.gates[i].center - self.gates[j].center).norm() < 1e-9 {
                return bad(format!("gates {i} and {j} share a center"));
            }
        }
        Ok(())
    }

    pub fn num_gates(&self) -> usize {
        self.gates.len()
    }

    /// Largest distance between any two gate centers.
    pub fn diameter(&self) -> f64 {
        let mut best: f64 = 0.0;
        for (i, a) in self.gates.iter().enumerate() {
            for b in &self.gates[i + 1..] {
                best = best.max((a.center - b.center).norm());
            }
        }
        best
    }

    /// Closed polyline length through all gate centers.
    pub fn lap_length(&self) -> f64 {
        let n = self.gates.len();
        (0..n)
            .map(|i| (self.gates[(i + 1) % n].center - self.gates[i].center).norm())
            .sum()
    }

    /// Axis-aligned box around the gate centers, grown by `margin` on every side
    /// except the floor, which stays at z = 0.
    pub fn bounds(&self, margin: f64) -> (Vector3<f64>, Vector3<f64>) {
        let mut lo = Vector3::repeat(f64::INFINITY);
        let mut hi = Vector3::repeat(f64::NEG_INFINITY);
        for g in &self.gates {
            lo = lo.inf(&g.center);
            hi = hi.sup(&g.center);
        }
        lo -= Vector3::repeat(margin);
        hi += Vector3::repeat(margin);
        lo.z = 0.0;
        (lo, hi)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("track serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self, String> {
        let t: Track = toml::from_str(text).map_err(|e| e.to_string())?;
        t.validate().map_err(|e| e.to_string())?;
        Ok(t)
    }

    pub fn save(&self, path: &Path) -> Result<(), TrackError> {
        std::fs::write(path, self.to_toml()).map_err(|source| TrackError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, TrackError> {
        let text = std::fs::read_to_string(path).map_err(|source| TrackError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&text).map_err(|message| TrackError::Parse {
            path: path.display().to_string(),
            message,
        })
    }

    /// Built-in track by name: `ring` or `figure_eight`.
    pub fn builtin(name: &str) -> Option<Self> {
        match name {
            "ring" => Some(make_ring_track(5, 5.0, 2.0, 0.75).expect("default ring")),
            "figure_eight" | "figure-eight" => {
                Some(make_figure_eight_track(6, 4.0, 2.0).expect("default figure eight"))
            }
            _ => None,
        }
    }
}

/// Gates equally spaced on a circle, traversed counter-clockwise, with heights
/// alternating `base ± amplitude` (even indices high).
pub fn make_ring_track(
    num_gates: usize,
    radius: f64,
    base_height: f64,
    height_amplitude: f64,
) -> Result<Track, TrackError> {
    if num_gates < 3 {
        return Err(TrackError::InvalidTrackSpec(format!(
            "ring needs at least 3 gates, got {num_gates}"
        )));
    }
    if !(radius > 0.0) {
        return Err(TrackError::InvalidTrackSpec(
            "ring radius must be positive".into(),
        ));
    }
    let gates = (0..num_gates)
        .map(|i| {
            let angle = TAU * i as f64 / num_gates as f64;
            let z = if i % 2 == 0 {
                base_height + height_amplitude
            } else {
                base_height - height_amplitude
            };
            Gate::new(
                Vector3::new(radius * angle.cos(), radius * angle.sin(), z),
                angle + FRAC_PI_2,
            )
        })
        .collect();
    Track::new("ring", gates)
}

/// Two tangent circular lobes centred at `(±r, 0)` with three gates each. The
/// right lobe is flown counter-clockwise and the left clockwise, so the
/// gate-to-gate path crosses itself once at the origin.
pub fn make_figure_eight_track(
    num_gates: usize,
    lobe_radius: f64,
    height: f64,
) -> Result<Track, TrackError> {
    if num_gates != 6 {
        return Err(TrackError::InvalidTrackSpec(format!(
            "figure-eight layout has exactly 6 gates, got {num_gates}"
        )));
    }
    if !(lobe_radius > 0.0) {
        return Err(TrackError::InvalidTrackSpec(
            "lobe radius must be positive".into(),
        ));
    }
    let r = lobe_radius;
    let mut gates = Vec::with_capacity(6);
    // right lobe, counter-clockwise: heading is the angle + 90°
    for angle in [-FRAC_PI_2, 0.0, FRAC_PI_2] {
        let c = Vector3::new(r + r * angle.cos(), r * angle.sin(), height);
        gates.push(Gate::new(c, angle + FRAC_PI_2));
    }
    // left lobe, clockwise: heading is the angle - 90°
    for angle in [-FRAC_PI_2, -std::f64::consts::PI, -3.0 * FRAC_PI_2] {
        let c = Vector3::new(-r + r * angle.cos(), r * angle.sin(), height);
        gates.push(Gate::new(c, angle - FRAC_PI_2));
    }
    Track::new("figure_eight", gates)
}

/// Directed passage test. The segment must go from behind the gate plane to
/// on/in front of it, and the crossing point must lie within the opening
/// shrunk to half-extents `min(half_width, g_tol) × min(half_height, g_tol)`.
pub fn check_gate_passage(
    prev_pos: &Vector3<f64>,
    new_pos: &Vector3<f64>,
    gate: &Gate,
    g_tol: f64,
) -> bool {
    let n = gate.normal();
    let s0 = (prev_pos - gate.center).dot(&n);
    let s1 = (new_pos - gate.center).dot(&n);
    if !(s0 < 0.0 && s1 >= 0.0) {
        return false;
    }
    let t = s0 / (s0 - s1);
    let hit = prev_pos + (new_pos - prev_pos) * t;
    let rel = hit - gate.center;
    let lateral = rel.dot(&gate.lateral()).abs();
    let vertical = rel.z.abs();
    lateral <= gate.half_width.min(g_tol) && vertical <= gate.half_height.min(g_tol)
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ProgressState {
    pub next_gate_index: usize,
    pub gates_passed_total: u32,
    pub laps_completed: u32,
    pub lap_start_time: f64,
    pub lap_times: Vec<f64>,
}

pub fn update_progress(
    progress: &ProgressState,
    passed: bool,
    sim_time: f64,
    num_gates: usize,
) -> ProgressState {
    let mut next = progress.clone();
    if !passed {
        return next;
    }
    next.gates_passed_total += 1;
    next.next_gate_index = (progress.next_gate_index + 1) % num_gates;
    if next.next_gate_index == 0 {
        next.laps_completed += 1;
        next.lap_times.push(sim_time - progress.lap_start_time);
        next.lap_start_time = sim_time;
    }
    next
}
