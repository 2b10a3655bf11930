//! Tabular Q-learning agent that samples blocks layer by layer.

mod reward;
mod search;
mod table;

pub use reward::{combined_reward, shaped_rewards, RewardError};
pub use search::{
    run_search, samples_to_threshold, EpsilonSchedule, LogRow, SampleRecord, Scored, SearchConfig, SearchError,
    SearchResult, LOG_HEADER,
};
pub use table::{greedy_rollout, sample_block, td_update, ActionKey, ActionSpace, Decision, QTable, StateKey};
