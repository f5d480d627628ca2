//! HAVEN: two-level hierarchical value decomposition for fully cooperative
//! multi-agent reinforcement learning.
//!
//! A macro policy picks one of `N` abstract macro actions every `k` steps;
//! a low-level policy picks primitive actions every step, conditioned on
//! the macro action. Both levels are value-decomposition learners (VDN or
//! QMIX mixing) trained off-policy from episode replay. The two levels are
//! coupled through an advantage-based intrinsic reward: the high-level
//! advantage of each macro segment, split evenly over the segment's steps
//! and recomputed from the current value function on every training pass,
//! is added to the environment reward for the low-level learner.

pub mod envs;
pub mod harness;
pub mod hierarchy;
pub mod learner;
pub mod nets;
pub mod replay;
