//! Scene selection by length, agent mix and an optional reward.

use serde::{Deserialize, Serialize};

use super::AgentCounts;
use crate::world::{AgentKind, Scene};

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneFilter {
    pub min_frames: usize,
    /// Minimum number of agents of each kind.
    pub min_counts: AgentCounts,
}

impl SceneFilter {
    pub fn accepts(&self, scene: &Scene) -> bool {
        scene.frames.len() >= self.min_frames
            && AgentKind::ALL
                .iter()
                .all(|k| scene.agent_count(*k) >= self.min_counts.get(*k))
    }
}

/// Keeps scenes meeting every threshold. With `reward`, a scene must also
/// score at least the paired threshold.
pub fn filter_scenes<F>(
    scenes: Vec<Scene>,
    filter: &SceneFilter,
    reward: Option<(F, f64)>,
) -> Vec<Scene>
where
    F: Fn(&Scene) -> f64,
{
    scenes
        .into_iter()
        .filter(|s| filter.accepts(s))
        .filter(|s| reward.as_ref().is_none_or(|(f, tau)| f(s) >= *tau))
        .collect()
}
