//! Rule-guided perturbation planners.

pub mod add;
pub mod delete;

pub use add::{
    apportion_with_caps, corrupt_rule, correlation_table, generate_candidates, largest_remainder, plan_addition,
    AdditionConfig, AdditionOutcome, Candidates, CorrelationTable, NegativeRule, RewriteStrategy,
};
pub use delete::{
    influence_scores, plan_deletion, plan_from_influence, DeletionConfig, InfluenceTable, Pool, PoolDomain,
};
