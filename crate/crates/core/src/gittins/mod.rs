//! Gittins indices of transformed arms, the index allocation rule and
//! weighted welfare.

mod cache;
mod index;
mod welfare;

pub use cache::{ArmIndex, IndexCache};
pub use index::{
    arm_rewards, brute_force_index, build_index_table, chain_index, gittins_index,
    largest_remaining_index, IndexTable, TruncatedIndex, LARGEST_REMAINING_MAX_STATES,
};
pub use welfare::{
    mean_se, rollout_path, weighted_welfare, ArmProblem, JointDp, RolloutArm, WelfareEstimate,
    WelfareMethod, WelfareMode, DP_TOL,
};

/// Winner of a round: the agent with the largest index, `None` when no index
/// is strictly positive. Ties go to the lowest agent number. Dormant agents
/// should be passed as `-inf`.
pub fn allocate(indices: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &g) in indices.iter().enumerate() {
        if g > 0.0 && best.is_none_or(|(_, b)| g > b) {
            best = Some((i, g));
        }
    }
    best.map(|(i, _)| i)
}
