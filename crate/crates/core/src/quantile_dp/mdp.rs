use crate::error::{check_tau, Error, Result};
use crate::mathcore::Rng;

use super::quantile::quantile_of_pairs;

/// One reachable successor of a state-action pair.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Outcome {
    pub next: usize,
    pub prob: f64,
    pub reward: f64,
}

/// Finite MDP with transition-dependent rewards, stored sparsely per `(s, a)`.
#[derive(Clone, Debug, PartialEq)]
pub struct TabularMdp {
    states: usize,
    actions: usize,
    beta: f64,
    rows: Vec<Vec<Outcome>>,
}

impl TabularMdp {
    /// Dense constructor: `transitions[(s * A + a) * S + s']` and
    /// `rewards[s * A + a]`.
    pub fn from_dense(
        states: usize,
        actions: usize,
        transitions: &[f64],
        rewards: &[f64],
        beta: f64,
    ) -> Result<Self> {
        if rewards.len() != states * actions {
            return Err(Error::Shape {
                expected: states * actions,
                got: rewards.len(),
            });
        }
        let full: Vec<f64> = (0..states * actions * states)
            .map(|i| rewards[i / states])
            .collect();
        Self::from_dense_transition_rewards(states, actions, transitions, &full, beta)
    }

    /// Dense constructor with rewards `r(s, a, s')` laid out like `transitions`.
    pub fn from_dense_transition_rewards(
        states: usize,
        actions: usize,
        transitions: &[f64],
        rewards: &[f64],
        beta: f64,
    ) -> Result<Self> {
        let n = states * actions * states;
        if transitions.len() != n {
            return Err(Error::Shape {
                expected: n,
                got: transitions.len(),
            });
        }
        if rewards.len() != n {
            return Err(Error::Shape {
                expected: n,
                got: rewards.len(),
            });
        }
        let rows = (0..states * actions)
            .map(|sa| {
                (0..states)
                    .filter(|&s2| transitions[sa * states + s2] != 0.0)
                    .map(|s2| Outcome {
                        next: s2,
                        prob: transitions[sa * states + s2],
                        reward: rewards[sa * states + s2],
                    })
                    .collect()
            })
            .collect();
        Self::from_sparse(states, actions, rows, beta)
    }

    /// `rows[s * A + a]` lists the successors of `(s, a)`.
    pub fn from_sparse(
        states: usize,
        actions: usize,
        rows: Vec<Vec<Outcome>>,
        beta: f64,
    ) -> Result<Self> {
        if states == 0 || actions == 0 {
            return Err(Error::Domain(
                "MDP needs at least one state and one action".into(),
            ));
        }
        if !(0.0..1.0).contains(&beta) {
            return Err(Error::Domain(format!(
                "discount must lie in [0, 1), got {beta}"
            )));
        }
        if rows.len() != states * actions {
            return Err(Error::Shape {
                expected: states * actions,
                got: rows.len(),
            });
        }
        for (sa, row) in rows.iter().enumerate() {
            let mut total = 0.0;
            for o in row {
                if o.next >= states {
                    return Err(Error::Domain(format!("successor {} out of range", o.next)));
                }
                if !(o.prob >= 0.0) || !o.prob.is_finite() {
                    return Err(Error::Domain(format!(
                        "invalid transition probability {}",
                        o.prob
                    )));
                }
                if !o.reward.is_finite() {
                    return Err(Error::Domain("rewards must be finite".into()));
                }
                total += o.prob;
            }
            if (total - 1.0).abs() > 1e-12 {
                return Err(Error::Domain(format!(
                    "transition row (s={}, a={}) sums to {total}",
                    sa / actions,
                    sa % actions
                )));
            }
        }
        Ok(Self {
            states,
            actions,
            beta,
            rows,
        })
    }

    /// Random MDP with sparse supports and rewards in [-1, 1].
    pub fn random(states: usize, actions: usize, beta: f64, rng: &mut Rng) -> Result<Self> {
        let mut rows = Vec::with_capacity(states * actions);
        for _ in 0..states * actions {
            let support = 1 + rng.index(states.min(4));
            let mut next: Vec<usize> = (0..states).collect();
            for i in 0..support {
                let j = i + rng.index(states - i);
                next.swap(i, j);
            }
            let raw: Vec<f64> = (0..support).map(|_| -rng.uniform().ln()).collect();
            let total: f64 = raw.iter().sum();
            let mut row: Vec<Outcome> = next[..support]
                .iter()
                .zip(&raw)
                .map(|(&s2, w)| Outcome {
                    next: s2,
                    prob: w / total,
                    reward: 2.0 * rng.uniform() - 1.0,
                })
                .collect();
            // absorb rounding so the row sums to 1 exactly
            let sum: f64 = row.iter().map(|o| o.prob).sum();
            row[0].prob += 1.0 - sum;
            rows.push(row);
        }
        Self::from_sparse(states, actions, rows, beta)
    }

    pub fn states(&self) -> usize {
        self.states
    }

    pub fn actions(&self) -> usize {
        self.actions
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn outcomes(&self, s: usize, a: usize) -> &[Outcome] {
        &self.rows[s * self.actions + a]
    }

    fn check_values(&self, v: &[f64]) -> Result<()> {
        if v.len() != self.states {
            return Err(Error::Shape {
                expected: self.states,
                got: v.len(),
            });
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::Domain("value vector must be finite".into()));
        }
        Ok(())
    }

    /// Quantile of `r + beta V(s')` at state `s` under action `a`.
    pub fn action_quantile(&self, v: &[f64], s: usize, a: usize, tau: f64) -> f64 {
        let mut pairs: Vec<(f64, f64)> = self
            .outcomes(s, a)
            .iter()
            .map(|o| (o.reward + self.beta * v[o.next], o.prob))
            .collect();
        quantile_of_pairs(&mut pairs, tau)
    }
}

/// Row-stochastic policy `pi(a | s)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Policy {
    actions: usize,
    probs: Vec<f64>,
}

impl Policy {
    pub fn new(states: usize, actions: usize, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != states * actions {
            return Err(Error::Shape {
                expected: states * actions,
                got: probs.len(),
            });
        }
        for row in probs.chunks(actions) {
            let total: f64 = row.iter().sum();
            if row.iter().any(|p| !(*p >= 0.0)) || (total - 1.0).abs() > 1e-12 {
                return Err(Error::Domain(format!(
                    "policy row {row:?} is not a distribution"
                )));
            }
        }
        Ok(Self { actions, probs })
    }

    pub fn deterministic(choice: &[usize], actions: usize) -> Result<Self> {
        let mut probs = vec![0.0; choice.len() * actions];
        for (s, &a) in choice.iter().enumerate() {
            if a >= actions {
                return Err(Error::Domain(format!("action {a} out of range")));
            }
            probs[s * actions + a] = 1.0;
        }
        Ok(Self { actions, probs })
    }

    pub fn uniform(states: usize, actions: usize) -> Self {
        Self {
            actions,
            probs: vec![1.0 / actions as f64; states * actions],
        }
    }

    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.probs[s * self.actions + a]
    }

    pub fn states(&self) -> usize {
        self.probs.len() / self.actions
    }
}

/// `(T_pi V)(s)`: quantile of `r + beta V(s')` with `a ~ pi(.|s)`, `s' ~ P`.
pub fn policy_operator(mdp: &TabularMdp, v: &[f64], policy: &Policy, tau: f64) -> Result<Vec<f64>> {
    check_tau(tau)?;
    mdp.check_values(v)?;
    if policy.states() != mdp.states || policy.actions != mdp.actions {
        return Err(Error::Shape {
            expected: mdp.states * mdp.actions,
            got: policy.probs.len(),
        });
    }
    Ok((0..mdp.states)
        .map(|s| {
            let mut pairs = Vec::new();
            for a in 0..mdp.actions {
                let pa = policy.prob(s, a);
                if pa == 0.0 {
                    continue;
                }
                for o in mdp.outcomes(s, a) {
                    pairs.push((o.reward + mdp.beta * v[o.next], pa * o.prob));
                }
            }
            quantile_of_pairs(&mut pairs, tau)
        })
        .collect())
}

/// `(T_* V)(s) = max_a` of the per-action quantile; ties go to the lowest index.
pub fn optimality_operator(
    mdp: &TabularMdp,
    v: &[f64],
    tau: f64,
) -> Result<(Vec<f64>, Vec<usize>)> {
    check_tau(tau)?;
    mdp.check_values(v)?;
    let mut values = Vec::with_capacity(mdp.states);
    let mut greedy = Vec::with_capacity(mdp.states);
    for s in 0..mdp.states {
        let mut best = f64::NEG_INFINITY;
        let mut best_a = 0;
        for a in 0..mdp.actions {
            let q = mdp.action_quantile(v, s, a, tau);
            if q > best {
                best = q;
                best_a = a;
            }
        }
        values.push(best);
        greedy.push(best_a);
    }
    Ok((values, greedy))
}

#[derive(Clone, Debug, PartialEq)]
pub struct ValueIteration {
    pub values: Vec<f64>,
    /// Greedy action per state (all zeros for policy evaluation).
    pub policy: Vec<usize>,
    /// Sup-norm change produced by each sweep.
    pub residuals: Vec<f64>,
}

impl ValueIteration {
    pub fn sweeps(&self) -> usize {
        self.residuals.len()
    }
}

fn sup_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn iterate<F>(states: usize, tol: f64, max_sweeps: usize, mut step: F) -> Result<ValueIteration>
where
    F: FnMut(&[f64]) -> Result<(Vec<f64>, Vec<usize>)>,
{
    if !(tol > 0.0) {
        return Err(Error::Domain(format!(
            "tolerance must be positive, got {tol}"
        )));
    }
    let mut v = vec![0.0; states];
    let mut residuals = Vec::new();
    for _ in 0..max_sweeps {
        let (next, policy) = step(&v)?;
        let res = sup_dist(&next, &v);
        residuals.push(res);
        v = next;
        if res < tol {
            return Ok(ValueIteration {
                values: v,
                policy,
                residuals,
            });
        }
    }
    Err(Error::NonConvergence {
        sweeps: max_sweeps,
        residual: residuals.last().copied().unwrap_or(f64::INFINITY),
    })
}

/// Fixed point of the optimality operator starting from `V = 0`.
pub fn value_iteration(
    mdp: &TabularMdp,
    tau: f64,
    tol: f64,
    max_sweeps: usize,
) -> Result<ValueIteration> {
    iterate(mdp.states, tol, max_sweeps, |v| {
        optimality_operator(mdp, v, tau)
    })
}

/// Fixed point of the policy operator starting from `V = 0`.
pub fn policy_evaluation(
    mdp: &TabularMdp,
    policy: &Policy,
    tau: f64,
    tol: f64,
    max_sweeps: usize,
) -> Result<ValueIteration> {
    iterate(mdp.states, tol, max_sweeps, |v| {
        Ok((policy_operator(mdp, v, policy, tau)?, vec![0; mdp.states]))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quantile_dp::discrete_quantile;

    fn chain(beta: f64) -> TabularMdp {
        // 0 -> 1 -> 0 deterministically, one action
        TabularMdp::from_dense(2, 1, &[0.0, 1.0, 1.0, 0.0], &[1.0, -2.0], beta).unwrap()
    }

    #[test]
    fn point_mass_operator() {
        let mdp = chain(0.9);
        let v = [3.0, 5.0];
        let out = policy_operator(&mdp, &v, &Policy::uniform(2, 1), 0.3).unwrap();
        assert_eq!(out, vec![1.0 + 0.9 * 5.0, -2.0 + 0.9 * 3.0]);
    }

    #[test]
    fn myopic_operator_is_reward_quantile() {
        let mut rng = Rng::new(5);
        let mdp = TabularMdp::random(4, 2, 0.0, &mut rng).unwrap();
        let v = [100.0, -7.0, 3.0, 12.0];
        let pol = Policy::deterministic(&[1, 0, 1, 1], 2).unwrap();
        let out = policy_operator(&mdp, &v, &pol, 0.4).unwrap();
        for s in 0..4 {
            let a = [1, 0, 1, 1][s];
            let atoms: Vec<f64> = mdp.outcomes(s, a).iter().map(|o| o.reward).collect();
            let probs: Vec<f64> = mdp.outcomes(s, a).iter().map(|o| o.prob).collect();
            assert_eq!(out[s], discrete_quantile(&atoms, &probs, 0.4).unwrap());
        }
    }

    #[test]
    fn stochastic_policy_matches_enumeration() {
        let mut rng = Rng::new(8);
        for trial in 0..20 {
            let mdp = TabularMdp::random(5, 3, 0.9, &mut rng).unwrap();
            let v: Vec<f64> = (0..5).map(|_| rng.normal() * 3.0).collect();
            let raw: Vec<f64> = (0..15).map(|_| rng.uniform()).collect();
            let probs: Vec<f64> = raw
                .chunks(3)
                .flat_map(|r| {
                    let t: f64 = r.iter().sum();
                    r.iter().map(move |x| x / t).collect::<Vec<_>>()
                })
                .collect();
            let pol = Policy::new(5, 3, probs.clone()).unwrap();
            let tau = 0.05 + 0.9 * (trial as f64 / 19.0);
            let out = policy_operator(&mdp, &v, &pol, tau).unwrap();
            for s in 0..5 {
                // dense enumeration over every (a, s') cell
                let mut atoms = Vec::new();
                let mut weights = Vec::new();
                for a in 0..3 {
                    for s2 in 0..5 {
                        let cell = mdp.outcomes(s, a).iter().find(|o| o.next == s2);
                        let (p, r) = cell.map_or((0.0, 0.0), |o| (o.prob, o.reward));
                        atoms.push(r + 0.9 * v[s2]);
                        weights.push(probs[s * 3 + a] * p);
                    }
                }
                let total: f64 = weights.iter().sum();
                weights.iter_mut().for_each(|w| *w /= total);
                let q = discrete_quantile(&atoms, &weights, tau).unwrap();
                assert!((q - out[s]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn single_action_optimality_equals_policy_operator() {
        let mut rng = Rng::new(9);
        let mdp = TabularMdp::random(6, 1, 0.8, &mut rng).unwrap();
        let v: Vec<f64> = (0..6).map(|_| rng.normal()).collect();
        let (opt, greedy) = optimality_operator(&mdp, &v, 0.3).unwrap();
        assert_eq!(
            opt,
            policy_operator(&mdp, &v, &Policy::uniform(6, 1), 0.3).unwrap()
        );
        assert!(greedy.iter().all(|a| *a == 0));
    }

    #[test]
    fn dominating_action_selected() {
        // action 1 pays action 0's lottery plus 1 in every outcome
        let p = [
            0.0, 0.3, 0.7, 0.0, 0.3, 0.7, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0,
            0.0,
        ];
        let mut r = vec![0.0; 18];
        r[1] = -4.0;
        r[2] = 2.0;
        r[4] = -3.0;
        r[5] = 3.0;
        let mdp = TabularMdp::from_dense_transition_rewards(3, 2, &p, &r, 0.5).unwrap();
        for tau in [0.05, 0.3, 0.5, 0.9, 0.99] {
            let (_, g) = optimality_operator(&mdp, &[0.0; 3], tau).unwrap();
            assert_eq!(g[0], 1);
            // ties on the absorbing states go to action 0
            assert_eq!(g[1], 0);
        }
    }

    #[test]
    fn myopic_value_iteration_settles_after_first_sweep() {
        let mut rng = Rng::new(2);
        let mdp = TabularMdp::random(5, 3, 0.0, &mut rng).unwrap();
        let res = value_iteration(&mdp, 0.5, 1e-12, 10).unwrap();
        assert_eq!(res.sweeps(), 2);
        assert_eq!(res.residuals[1], 0.0);
    }

    #[test]
    fn coin_chain_fixed_point() {
        // State 0: stay (p 1/2, reward 1) or move to 1 (p 1/2, reward 0).
        // State 1 is absorbing with reward 2, so V(1) = 2 / (1 - beta).
        // For tau = 0.5: atoms at state 0 are 1 + b V0 and b V1; the median is the
        // smaller one. With b = 0.9, V1 = 20, b V1 = 18 and 1 + b V0 <= 18 iff
        // V0 <= 17/0.9; the fixed point V0 = 1 + 0.9 V0 gives 10 < 18.9, so V0 = 10.
        let p = [0.5, 0.5, 0.0, 1.0];
        let r = [1.0, 0.0, 0.0, 2.0];
        let mdp = TabularMdp::from_dense_transition_rewards(2, 1, &p, &r, 0.9).unwrap();
        let res = value_iteration(&mdp, 0.5, 1e-12, 10_000).unwrap();
        assert!((res.values[1] - 20.0).abs() < 1e-9);
        assert!((res.values[0] - 10.0).abs() < 1e-9);
        // At tau = 0.75 the larger atom is selected: V0 = 18.
        let res = value_iteration(&mdp, 0.75, 1e-12, 10_000).unwrap();
        assert!((res.values[0] - 18.0).abs() < 1e-9);
    }

    #[test]
    fn nonconvergence_reported() {
        let mdp = chain(0.99);
        match value_iteration(&mdp, 0.5, 1e-12, 3) {
            Err(Error::NonConvergence { sweeps, residual }) => {
                assert_eq!(sweeps, 3);
                assert!(residual > 0.0);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn invalid_mdps_rejected() {
        assert!(TabularMdp::from_dense(1, 1, &[0.5], &[0.0], 0.5).is_err());
        assert!(TabularMdp::from_dense(1, 1, &[1.0], &[f64::NAN], 0.5).is_err());
        assert!(TabularMdp::from_dense(1, 1, &[1.0], &[0.0], 1.0).is_err());
        assert!(value_iteration(&chain(0.5), 0.5, 0.0, 10).is_err());
    }

    #[test]
    fn recursive_quantile_differs_from_quantile_of_total_reward() {
        // Two fair coin flips paying 1 or 0 each, beta close to 1.
        // Recursive median: each stage median of {0, 1} is 0, so V = 0.
        // Median of the total (0, 1, 1, 2 equally likely) is 1.
        let rows = vec![
            vec![
                Outcome {
                    next: 1,
                    prob: 0.5,
                    reward: 0.0,
                },
                Outcome {
                    next: 2,
                    prob: 0.5,
                    reward: 1.0,
                },
            ],
            vec![
                Outcome {
                    next: 3,
                    prob: 0.5,
                    reward: 0.0,
                },
                Outcome {
                    next: 3,
                    prob: 0.5,
                    reward: 1.0,
                },
            ],
            vec![
                Outcome {
                    next: 3,
                    prob: 0.5,
                    reward: 0.0,
                },
                Outcome {
                    next: 3,
                    prob: 0.5,
                    reward: 1.0,
                },
            ],
            vec![Outcome {
                next: 3,
                prob: 1.0,
                reward: 0.0,
            }],
        ];
        let coin = TabularMdp::from_sparse(4, 1, rows, 0.999).unwrap();
        let v = value_iteration(&coin, 0.5, 1e-12, 100).unwrap();
        assert!(v.values[0].abs() < 1e-12);
        let total = discrete_quantile(&[0.0, 1.0, 1.0, 2.0], &[0.25; 4], 0.5).unwrap();
        assert_eq!(total, 1.0);
    }
}
