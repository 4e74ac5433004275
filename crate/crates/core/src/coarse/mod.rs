//! Template selection, flow-warped geometry voting and PnP.

pub mod estimate;
pub mod score;
pub mod template;
pub mod vote;

pub use estimate::{
    coarse_from_ranking, estimate_coarse_pose, estimate_coarse_pose_detailed, CoarseConfig, CoarseResult,
    FlowCorruption, SelectedTemplate, SelectionReport,
};
pub use score::{rank_templates, score_template, select_templates, PreparedQuery, RollBank, ScoredTemplate};
pub use template::{build_template_set, load_template_set, save_template_set, Template};
pub use vote::{mean_vote, medoid_vote, CandidateMap, VoteMode};
