//! Linear-algebra verification of the bonus theory and a working LSVI-UCB.

pub mod bounds;
pub mod gram;
pub mod lsvi;

pub use bounds::{
    bound_report, verify_theorem1, verify_theorem2, BoundReport, CountEntry, Theorem2Report,
    Witness,
};
pub use gram::{
    gram_update, info_gain_block_bruteforce, info_gain_linear, ucb_bonus, GramAccumulator,
};
pub use lsvi::{
    deceptive_chain, lsvi_ucb_run, optimal_return, two_state_mdp, LSVIState, LsviRun, Sample,
};
