//! Dueling feedback from reward feedback.
//!
//! If two scores are perturbed by independent standard Gumbel noise, the
//! probability that the first perturbed score is larger is exactly
//! `sigma(s_a - s_b)`. A learner that consumes Bradley-Terry comparisons can
//! therefore run against an environment that only returns noisy rewards:
//! each duel spends two pulls and reports which one came out higher.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::vecops::sigmoid;
use crate::{Error, Result};

/// Standard Gumbel draw `-ln(-ln u)`, `u` kept inside `(0, 1)`.
pub fn gumbel_sample<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let u: f64 = rng.random::<f64>().clamp(f64::EPSILON, 1.0 - f64::EPSILON);
    -(-u.ln()).ln()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DuelOutcome {
    pub winner_is_first: bool,
    /// Scores after noise.
    pub realized_scores: (f64, f64),
}

/// Duel with explicit noise. Exact ties go to the second action.
pub fn simulate_duel_with_noise(score_a: f64, score_b: f64, g1: f64, g2: f64) -> DuelOutcome {
    let (a, b) = (score_a + g1, score_b + g2);
    DuelOutcome {
        winner_is_first: a > b,
        realized_scores: (a, b),
    }
}

/// Duel with fresh Gumbel noise; the first action wins with probability
/// `sigma(score_a - score_b)`.
pub fn simulate_duel<R: Rng + ?Sized>(score_a: f64, score_b: f64, rng: &mut R) -> DuelOutcome {
    let g1 = gumbel_sample(rng);
    let g2 = gumbel_sample(rng);
    simulate_duel_with_noise(score_a, score_b, g1, g2)
}

/// Learner that consumes comparison feedback.
pub trait DuelLearner {
    fn num_actions(&self) -> usize;
    fn propose(&mut self) -> (usize, usize);
    fn observe(&mut self, first_won: bool);
}

/// Environment that returns a noisy reward per pull.
pub trait RewardEnv {
    fn pull(&mut self, action: usize) -> f64;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DuelRecord {
    pub t: usize,
    pub a: usize,
    pub b: usize,
    pub first_won: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub duels: Vec<DuelRecord>,
    pub pulls: usize,
}

/// Runs `ceil(t_budget / 2)` duels, two pulls each. An odd budget overruns
/// by one pull; this is logged.
pub fn adapt_duel_learner<L, E>(learner: &mut L, env: &mut E, t_budget: usize) -> Result<Transcript>
where
    L: DuelLearner + ?Sized,
    E: RewardEnv + ?Sized,
{
    if t_budget < 2 {
        return Err(Error::InvalidArgument("t_budget must be >= 2".into()));
    }
    if t_budget % 2 == 1 {
        log::warn!("odd budget {t_budget}: the last duel spends one pull past the budget");
    }
    let n = learner.num_actions();
    let mut out = Transcript::default();
    for t in 1..=t_budget.div_ceil(2) {
        let (a, b) = learner.propose();
        if let Some(&bad) = [a, b].iter().find(|&&x| x >= n) {
            return Err(Error::IndexOutOfRange { index: bad, len: n });
        }
        let ra = env.pull(a);
        let rb = env.pull(b);
        out.pulls += 2;
        let first_won = ra > rb;
        learner.observe(first_won);
        out.duels.push(DuelRecord { t, a, b, first_won });
    }
    Ok(out)
}

/// Cycles through all ordered pairs of distinct actions and counts wins.
#[derive(Debug, Clone)]
pub struct RoundRobinLearner {
    n: usize,
    next: usize,
    last: (usize, usize),
    pub wins: Vec<Vec<u64>>,
}

impl RoundRobinLearner {
    pub fn new(n: usize) -> Self {
        assert!(n >= 2, "need at least two actions");
        Self {
            n,
            next: 0,
            last: (0, 0),
            wins: vec![vec![0; n]; n],
        }
    }

    /// Action with the most total wins.
    pub fn leader(&self) -> usize {
        (0..self.n)
            .max_by_key(|&i| (self.wins[i].iter().sum::<u64>(), std::cmp::Reverse(i)))
            .unwrap_or(0)
    }
}

impl DuelLearner for RoundRobinLearner {
    fn num_actions(&self) -> usize {
        self.n
    }

    fn propose(&mut self) -> (usize, usize) {
        let k = self.next % (self.n * (self.n - 1));
        self.next += 1;
        let a = k / (self.n - 1);
        let mut b = k % (self.n - 1);
        if b >= a {
            b += 1;
        }
        self.last = (a, b);
        self.last
    }

    fn observe(&mut self, first_won: bool) {
        let (a, b) = self.last;
        if first_won {
            self.wins[a][b] += 1;
        } else {
            self.wins[b][a] += 1;
        }
    }
}

/// Reward environment `s(a) + Gumbel(0, 1)`.
pub struct GumbelRewardEnv<R> {
    pub scores: Vec<f64>,
    rng: R,
}

impl<R: Rng> GumbelRewardEnv<R> {
    pub fn new(scores: Vec<f64>, rng: R) -> Self {
        Self { scores, rng }
    }
}

impl<R: Rng> RewardEnv for GumbelRewardEnv<R> {
    fn pull(&mut self, action: usize) -> f64 {
        self.scores[action] + gumbel_sample(&mut self.rng)
    }
}

/// One row of the distributional check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdentityRow {
    pub gap: f64,
    pub sigma: f64,
    pub empirical: f64,
    /// Three binomial standard errors.
    pub ci: f64,
    pub trials: usize,
}

impl IdentityRow {
    pub fn within(&self, slack: f64) -> bool {
        (self.empirical - self.sigma).abs() <= self.ci + slack
    }
}

/// Empirical first-wins rate of Gumbel duels at each gap.
pub fn identity_table<R: Rng + ?Sized>(
    gaps: &[f64],
    trials: usize,
    rng: &mut R,
) -> Vec<IdentityRow> {
    gaps.iter()
        .map(|&gap| {
            let wins = (0..trials)
                .filter(|_| simulate_duel(gap, 0.0, rng).winner_is_first)
                .count();
            let sigma = sigmoid(gap);
            IdentityRow {
                gap,
                sigma,
                empirical: wins as f64 / trials as f64,
                ci: 3.0 * (sigma * (1.0 - sigma) / trials as f64).sqrt(),
                trials,
            }
        })
        .collect()
}
