use serde::{Deserialize, Serialize};

use super::{evaluate, EvalError, EvalSetup, MetricsSummary, SuccessMode};
use crate::env::{CurriculumStage, EnvConfig};
use crate::nn::PolicyParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub stage: u32,
    pub num_agents: usize,
    pub summary: MetricsSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
    /// Per agent count: all-episode mean velocity rises with every stage.
    pub monotone: Vec<(usize, bool)>,
}

impl AblationReport {
    pub fn velocity_by_stage(&self, num_agents: usize) -> Vec<(u32, f64)> {
        self.rows
            .iter()
            .filter(|r| r.num_agents == num_agents)
            .map(|r| (r.stage, r.summary.velocity_all.mean))
            .collect()
    }
}

/// Evaluate the checkpoint saved after each stage under that stage's
/// environment parameters, for every agent count in `agent_counts`.
/// All agents in an episode share the stage checkpoint.
pub fn run_ablation(
    checkpoints: &[(CurriculumStage, PolicyParams)],
    base: &EnvConfig,
    agent_counts: &[usize],
    episodes: usize,
    seed_base: u64,
    mode: SuccessMode,
) -> Result<AblationReport, EvalError> {
    if checkpoints.is_empty() || agent_counts.is_empty() {
        return Err(EvalError::InvalidConfig(
            "ablation needs checkpoints and agent counts".into(),
        ));
    }
    let mut rows = Vec::new();
    let mut monotone = Vec::new();
    for &n in agent_counts {
        let mut velocities = Vec::new();
        for (stage, params) in checkpoints {
            let mut env = base.clone();
            env.num_agents = n;
            env.stage = stage.clone();
            let mut setup = EvalSetup::new(env, vec![params.clone(); n], episodes, seed_base);
            setup.success_mode = mode;
            let summary = evaluate(&setup)?.summary;
            velocities.push(summary.velocity_all.mean);
            rows.push(AblationRow {
                stage: stage.index,
                num_agents: n,
                summary,
            });
        }
        monotone.push((n, velocities.windows(2).all(|w| w[1] > w[0])));
    }
    Ok(AblationReport { rows, monotone })
}
