use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Stage {
    RandomPool,
    UserIntent,
    TaskValidation,
    DialogSynthesis,
    TrajectoryValidation,
    Modify,
    ValidationFunction,
}

impl Stage {
    pub const CANONICAL: [Stage; 7] = [
        Stage::RandomPool,
        Stage::UserIntent,
        Stage::TaskValidation,
        Stage::DialogSynthesis,
        Stage::TrajectoryValidation,
        Stage::Modify,
        Stage::ValidationFunction,
    ];

    pub fn workers(self) -> &'static [&'static str] {
        match self {
            Stage::RandomPool => &["RandomPool"],
            Stage::UserIntent => &["UserIntent"],
            Stage::TaskValidation => &["TaskValidation"],
            Stage::DialogSynthesis => &["UserSimulator", "Trajectory"],
            Stage::TrajectoryValidation => &["TrajectoryValidation"],
            Stage::Modify => &["Modify"],
            Stage::ValidationFunction => &["VerificationFunction"],
        }
    }

    pub fn parse(s: &str) -> Option<Stage> {
        Stage::CANONICAL.iter().copied().find(|x| format!("{x:?}") == s)
    }
}

pub const WORKERS: [&str; 8] = [
    "RandomPool",
    "UserIntent",
    "TaskValidation",
    "UserSimulator",
    "Trajectory",
    "TrajectoryValidation",
    "Modify",
    "VerificationFunction",
];

/// Shipped worker prompts, used verbatim as prompt set 0.
pub fn default_prompts() -> BTreeMap<String, String> {
    let texts = [
        include_str!("../../prompts/random_pool.txt"),
        include_str!("../../prompts/user_intent.txt"),
        include_str!("../../prompts/task_validation.txt"),
        include_str!("../../prompts/user_simulator.txt"),
        include_str!("../../prompts/trajectory.txt"),
        include_str!("../../prompts/trajectory_validation.txt"),
        include_str!("../../prompts/modify.txt"),
        include_str!("../../prompts/verification_function.txt"),
    ];
    WORKERS.iter().zip(texts).map(|(w, t)| (w.to_string(), t.to_string())).collect()
}
