use serde::{Deserialize, Serialize};

/// Environment and reward parameters for one curriculum stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurriculumStage {
    pub index: u32,
    pub name: String,
    pub timestep_budget: u64,
    /// Target speed for the speed term, m/s.
    pub v_min: f64,
    /// Agility: scale from normalized action to reference-velocity rate, m/s².
    pub agility: f64,
    pub collisions_enabled: bool,
    pub collision_weight: f64,
    /// Allowed deviation from the gate center along each gate axis, m.
    pub gate_tolerance: f64,
    pub overtake_weight: f64,
    pub collision_terminal: bool,
}

/// (name, budget, v_min, agility, collisions, w_coll, g_tol, w_over, terminal)
const BUILTIN: [(&str, u64, f64, f64, bool, f64, f64, f64, bool); 5] = [
    ("Basics", 1_000_000, 1.0, 2.0, false, 0.0, 0.5, 0.0, false),
    (
        "Intermediate",
        3_000_000,
        3.0,
        3.0,
        true,
        0.25,
        0.3,
        0.1,
        false,
    ),
    ("Advanced", 6_000_000, 5.0, 4.0, true, 0.5, 0.25, 0.2, false),
    (
        "Advanced II",
        10_000_000,
        7.0,
        6.0,
        true,
        0.6,
        0.2,
        0.2,
        true,
    ),
    (
        "Advanced III",
        20_000_000,
        10.0,
        7.5,
        true,
        0.7,
        0.2,
        0.2,
        true,
    ),
];

impl CurriculumStage {
    /// Built-in stage `k` in `1..=5`.
    pub fn builtin(k: u32) -> Option<Self> {
        let (name, budget, v_min, agility, coll, w_coll, g_tol, w_over, terminal) =
            *BUILTIN.get((k as usize).checked_sub(1)?)?;
        Some(Self {
            index: k,
            name: name.to_string(),
            timestep_budget: budget,
            v_min,
            agility,
            collisions_enabled: coll,
            collision_weight: w_coll,
            gate_tolerance: g_tol,
            overtake_weight: w_over,
            collision_terminal: terminal,
        })
    }

    pub fn final_stage() -> Self {
        Self::builtin(5).expect("stage 5")
    }

    pub fn with_budget(mut self, budget: u64) -> Self {
        self.timestep_budget = budget;
        self
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.timestep_budget == 0 {
            return Err(format!("stage {}: budget must be positive", self.index));
        }
        if !(self.agility > 0.0) {
            return Err(format!("stage {}: agility must be positive", self.index));
        }
        if !(self.v_min >= 0.0) {
            return Err(format!("stage {}: v_min must be non-negative", self.index));
        }
        if !(self.gate_tolerance > 0.0) {
            return Err(format!(
                "stage {}: gate tolerance must be positive",
                self.index
            ));
        }
        if !(self.collision_weight >= 0.0 && self.overtake_weight >= 0.0) {
            return Err(format!(
                "stage {}: weights must be non-negative",
                self.index
            ));
        }
        Ok(())
    }
}

impl Default for CurriculumStage {
    fn default() -> Self {
        Self::final_stage()
    }
}
