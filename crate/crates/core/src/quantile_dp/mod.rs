//! Exact quantile dynamic programming and closed-form oracles.

mod mdp;
mod oracle;
mod quantile;

pub use mdp::{
    optimality_operator, policy_evaluation, policy_operator, value_iteration, Outcome, Policy,
    TabularMdp, ValueIteration,
};
pub use oracle::{
    corner_rule_mdp, corner_rule_value, mixture_quantile, regime_example_solver,
    static_choice_comparator, write_oracle_csv, Allocation, CornerProblem, CornerRule,
    MixtureComponent, OracleRow, QuantileChoice, RegimeSolution, StaticChoice,
};
pub(crate) use quantile::empirical_rank;
pub use quantile::{discrete_quantile, empirical_quantile, QuantileGrid};
