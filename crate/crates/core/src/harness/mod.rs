//! Sequential decision loops driven by a trained model.

pub mod bandit;
pub mod bo;

pub use bandit::{regret_metrics, run_bandit_episode, ucb_select_arm, BanditPolicy, BanditState, BanditStudy, RegretSummary};
pub use bo::{gp_objectives, run_bo, run_random_search, ucb_acquisition_select, BoConfig, BoState, BoStudy, GridFunction, Objective};
