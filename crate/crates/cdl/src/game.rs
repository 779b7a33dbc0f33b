//! Linear congestion games and their primitive quantities.
//!
//! A game has `n` players sharing a set of resources. Each resource `e`
//! carries an affine delay `f_e(x) = a_e*x + b_e` with nonnegative integer
//! coefficients, where `x` is the number of players currently using `e`.
//! A strategy is an explicit subset of resources; a state assigns one
//! strategy to every player. The cost of a player is the sum of the delays
//! on its chosen resources, the social cost is the sum of all player costs,
//! and the potential is `Phi(S) = sum_e sum_{j=1}^{n_e(S)} f_e(j)`.
//!
//! All coefficients are integers so every quantity in this module is exact;
//! rational inputs are scaled up front by [`crate::reductions::scale_delays`].
//! Games and states are immutable once built, and every operation here is a
//! pure function of its inputs.

use thiserror::Error;

/// Dense 0-based resource identifier.
pub type ResourceId = usize;

/// A strategy is a sorted, duplicate-free list of resource ids.
pub type Strategy = Vec<ResourceId>;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GameError {
    #[error("game must have at least one player")]
    NoPlayers,
    #[error("player {player} has an empty strategy list")]
    NoStrategies { player: usize },
    #[error("player {player}, strategy {strategy} is empty")]
    EmptyStrategy { player: usize, strategy: usize },
    #[error("player {player}, strategy {strategy} uses resource {resource} but the game has {resource_count} resources")]
    UnknownResource {
        player: usize,
        strategy: usize,
        resource: ResourceId,
        resource_count: usize,
    },
    #[error("profile has {got} entries for a {expected}-player game")]
    ProfileLength { got: usize, expected: usize },
    #[error("player {player} has no strategy with index {index}")]
    BadStrategyIndex { player: usize, index: usize },
    #[error("declared symmetric flag {declared} does not match the strategy sets")]
    SymmetryMismatch { declared: bool },
    #[error("player {player}: preferred strategy {index} does not attain the minimum cost ({cost} > {min})")]
    PreferredNotMinimal {
        player: usize,
        index: usize,
        cost: u64,
        min: u64,
    },
    #[error("player {player}: switch target {index} costs {target_cost}, strictly worse than current {current_cost}")]
    TargetWorse {
        player: usize,
        index: usize,
        target_cost: u64,
        current_cost: u64,
    },
}

/// Affine delay `f(x) = a*x + b`, `a, b >= 0`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Delay {
    pub a: u64,
    pub b: u64,
}

impl Delay {
    pub const IDENTITY: Delay = Delay { a: 1, b: 0 };

    pub fn new(a: u64, b: u64) -> Self {
        Delay { a, b }
    }

    #[inline]
    pub fn eval(&self, x: u64) -> u64 {
        self.a * x + self.b
    }

    /// `sum_{j=1}^{x} f(j)`, the potential contribution of one resource.
    #[inline]
    pub fn prefix_sum(&self, x: u64) -> u64 {
        self.a * (x * (x + 1) / 2) + self.b * x
    }
}

/// One strategy choice per player, indexing into that player's strategy set.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct StrategyProfile {
    choices: Vec<usize>,
}

impl StrategyProfile {
    pub fn new(choices: Vec<usize>) -> Self {
        StrategyProfile { choices }
    }

    pub fn uniform(n: usize, index: usize) -> Self {
        StrategyProfile {
            choices: vec![index; n],
        }
    }

    pub fn choices(&self) -> &[usize] {
        &self.choices
    }

    pub fn choice(&self, player: usize) -> usize {
        self.choices[player]
    }

    pub fn len(&self) -> usize {
        self.choices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.choices.is_empty()
    }

    /// Copy of `self` with `player` moved to `strategy`.
    pub fn with_choice(&self, player: usize, strategy: usize) -> Self {
        let mut next = self.clone();
        next.choices[player] = strategy;
        next
    }
}

/// Per-resource player counts `n_e(S)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CongestionVector {
    counts: Vec<u64>,
}

impl CongestionVector {
    pub fn zeros(resource_count: usize) -> Self {
        CongestionVector {
            counts: vec![0; resource_count],
        }
    }

    #[inline]
    pub fn get(&self, e: ResourceId) -> u64 {
        self.counts[e]
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn add_strategy(&mut self, strategy: &[ResourceId]) {
        for &e in strategy {
            self.counts[e] += 1;
        }
    }

    pub fn remove_strategy(&mut self, strategy: &[ResourceId]) {
        for &e in strategy {
            debug_assert!(self.counts[e] > 0);
            self.counts[e] -= 1;
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

/// How ties among strictly improving cost minimizers are resolved by
/// [`CongestionGame::best_response`].
///
/// A player whose current strategy already attains the minimum keeps it
/// (the best response at a fixed point is the current strategy); the policy
/// only picks among strict improvers that tie at the minimum.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TiePolicy {
    /// Keep the current strategy when it is minimal, otherwise the lowest
    /// minimizing index. This is the default.
    KeepCurrent,
    /// Lowest minimizing index among strict improvers.
    LowestIndex,
    /// A scripted schedule's preferred index; rejected with an error when it
    /// does not attain the minimum, which is how broken schedules surface.
    Prefer(usize),
}

/// Result of a best-response query.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BestResponse {
    /// Chosen strategy index (the current one when not improving).
    pub strategy: usize,
    /// True iff the chosen strategy strictly lowers the player's cost.
    pub improving: bool,
    /// Cost of the chosen strategy, holding the other players fixed.
    pub cost: u64,
}

/// Classification of an applied move.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum MoveFlag {
    /// Strictly cost-decreasing.
    Improving,
    /// Equal cost, different strategy.
    Indifferent,
    /// The player kept (or re-chose) its current strategy.
    Stay,
}

impl MoveFlag {
    pub fn as_str(&self) -> &'static str {
        match self {
            MoveFlag::Improving => "improving",
            MoveFlag::Indifferent => "indifferent",
            MoveFlag::Stay => "stay",
        }
    }
}

/// Outcome of an applied (possibly merely cost-preserving) switch.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SwitchOutcome {
    pub profile: StrategyProfile,
    pub flag: MoveFlag,
    /// Whether the switch is also a legal best response under the strict
    /// rule: either a strictly improving move to a cost minimizer, or a stay
    /// while already minimal. Equal-cost moves to a different strategy are
    /// not, which is exactly what permissive dynamics mode exists for.
    pub strict_legal: bool,
    pub pre_cost: u64,
    pub post_cost: u64,
}

/// An `n`-player linear congestion game with explicit strategy sets.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CongestionGame {
    delays: Vec<Delay>,
    /// `strategy_sets[i]` is player `i`'s nonempty list of strategies.
    strategy_sets: Vec<Vec<Strategy>>,
    /// All players share the same set of strategies (compared as sets).
    symmetric: bool,
}

impl CongestionGame {
    /// Builds and validates a game. Strategies are normalized to sorted,
    /// duplicate-free resource lists. Duplicate strategies within a player's
    /// set are permitted (file loading warns about and removes them; in-memory
    /// constructions such as reduction targets rely on keeping them).
    pub fn new(
        delays: Vec<Delay>,
        strategy_sets: Vec<Vec<Strategy>>,
    ) -> Result<Self, GameError> {
        Self::build(delays, strategy_sets, false)
    }

    /// Like [`CongestionGame::new`] but additionally checks a caller-declared
    /// symmetry flag instead of trusting it.
    pub fn new_with_declared_symmetry(
        delays: Vec<Delay>,
        strategy_sets: Vec<Vec<Strategy>>,
        declared_symmetric: bool,
    ) -> Result<Self, GameError> {
        let game = Self::build(delays, strategy_sets, false)?;
        if game.symmetric != declared_symmetric {
            return Err(GameError::SymmetryMismatch {
                declared: declared_symmetric,
            });
        }
        Ok(game)
    }

    /// Constructor for internally built games (identity-reduction targets)
    /// where a strategy may legitimately map to the empty resource set.
    pub(crate) fn new_allowing_empty(
        delays: Vec<Delay>,
        strategy_sets: Vec<Vec<Strategy>>,
    ) -> Result<Self, GameError> {
        Self::build(delays, strategy_sets, true)
    }

    fn build(
        delays: Vec<Delay>,
        mut strategy_sets: Vec<Vec<Strategy>>,
        allow_empty: bool,
    ) -> Result<Self, GameError> {
        if strategy_sets.is_empty() {
            return Err(GameError::NoPlayers);
        }
        let resource_count = delays.len();
        for (player, set) in strategy_sets.iter_mut().enumerate() {
            if set.is_empty() {
                return Err(GameError::NoStrategies { player });
            }
            for (idx, strategy) in set.iter_mut().enumerate() {
                strategy.sort_unstable();
                strategy.dedup();
                if strategy.is_empty() && !allow_empty {
                    return Err(GameError::EmptyStrategy {
                        player,
                        strategy: idx,
                    });
                }
                if let Some(&r) = strategy.iter().find(|&&r| r >= resource_count) {
                    return Err(GameError::UnknownResource {
                        player,
                        strategy: idx,
                        resource: r,
                        resource_count,
                    });
                }
            }
        }
        let symmetric = compute_symmetric(&strategy_sets);
        Ok(CongestionGame {
            delays,
            strategy_sets,
            symmetric,
        })
    }

    pub fn n(&self) -> usize {
        self.strategy_sets.len()
    }

    pub fn resource_count(&self) -> usize {
        self.delays.len()
    }

    pub fn delays(&self) -> &[Delay] {
        &self.delays
    }

    pub fn delay(&self, e: ResourceId) -> Delay {
        self.delays[e]
    }

    pub fn strategies(&self, player: usize) -> &[Strategy] {
        &self.strategy_sets[player]
    }

    pub fn strategy(&self, player: usize, index: usize) -> &Strategy {
        &self.strategy_sets[player][index]
    }

    pub fn strategy_sets(&self) -> &[Vec<Strategy>] {
        &self.strategy_sets
    }

    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    /// True iff every delay is `f(x) = x`.
    pub fn is_identity(&self) -> bool {
        self.delays.iter().all(|d| *d == Delay::IDENTITY)
    }

    /// Number of strategy profiles, saturating at `u64::MAX`.
    pub fn profile_space(&self) -> u64 {
        self.strategy_sets
            .iter()
            .fold(1u64, |acc, set| acc.saturating_mul(set.len() as u64))
    }

    pub fn validate_profile(&self, profile: &StrategyProfile) -> Result<(), GameError> {
        if profile.len() != self.n() {
            return Err(GameError::ProfileLength {
                got: profile.len(),
                expected: self.n(),
            });
        }
        for (player, &choice) in profile.choices().iter().enumerate() {
            if choice >= self.strategy_sets[player].len() {
                return Err(GameError::BadStrategyIndex {
                    player,
                    index: choice,
                });
            }
        }
        Ok(())
    }

    /// Per-resource player counts `n_e(S)`.
    pub fn congestion_vector(
        &self,
        profile: &StrategyProfile,
    ) -> Result<CongestionVector, GameError> {
        self.validate_profile(profile)?;
        let mut cv = CongestionVector::zeros(self.resource_count());
        for (player, &choice) in profile.choices().iter().enumerate() {
            cv.add_strategy(&self.strategy_sets[player][choice]);
        }
        Ok(cv)
    }

    /// Cost of a strategy under given congestion, assuming its owner is
    /// already counted in `cv` (the in-place cost).
    #[inline]
    pub fn cost_on(&self, cv: &CongestionVector, strategy: &[ResourceId]) -> u64 {
        strategy
            .iter()
            .map(|&e| self.delays[e].eval(cv.get(e)))
            .sum()
    }

    /// Cost player `i` would pay for `candidate` with everyone else fixed:
    /// resources it shares with `current` keep their congestion, newly used
    /// ones gain the player.
    pub fn deviation_cost(
        &self,
        cv: &CongestionVector,
        current: &[ResourceId],
        candidate: &[ResourceId],
    ) -> u64 {
        candidate
            .iter()
            .map(|&e| {
                let on_it = current.binary_search(&e).is_ok();
                let x = cv.get(e) + if on_it { 0 } else { 1 };
                self.delays[e].eval(x)
            })
            .sum()
    }

    /// `c_i(S)`.
    pub fn player_cost(&self, profile: &StrategyProfile, player: usize) -> Result<u64, GameError> {
        let cv = self.congestion_vector(profile)?;
        Ok(self.cost_on(&cv, self.strategy(player, profile.choice(player))))
    }

    /// `C(S) = sum_i c_i(S) = sum_e n_e(S) f_e(n_e(S))`.
    pub fn social_cost(&self, profile: &StrategyProfile) -> Result<u64, GameError> {
        let cv = self.congestion_vector(profile)?;
        Ok(self.social_cost_from(&cv))
    }

    #[inline]
    pub fn social_cost_from(&self, cv: &CongestionVector) -> u64 {
        cv.counts()
            .iter()
            .zip(&self.delays)
            .map(|(&x, d)| x * d.eval(x))
            .sum()
    }

    /// Rosenthal potential `Phi(S) = sum_e sum_{j=1}^{n_e(S)} f_e(j)`.
    pub fn potential(&self, profile: &StrategyProfile) -> Result<u64, GameError> {
        let cv = self.congestion_vector(profile)?;
        Ok(self.potential_from(&cv))
    }

    #[inline]
    pub fn potential_from(&self, cv: &CongestionVector) -> u64 {
        cv.counts()
            .iter()
            .zip(&self.delays)
            .map(|(&x, d)| d.prefix_sum(x))
            .sum()
    }

    /// All deviation costs for `player` at the state described by `cv`,
    /// including the in-place cost of its current strategy.
    fn strategy_costs(
        &self,
        cv: &CongestionVector,
        profile: &StrategyProfile,
        player: usize,
    ) -> Vec<u64> {
        let current = self.strategy(player, profile.choice(player));
        self.strategy_sets[player]
            .iter()
            .map(|candidate| self.deviation_cost(cv, current, candidate))
            .collect()
    }

    /// A cost-minimizing strategy for `player` with the others fixed.
    ///
    /// If nothing strictly beats the current strategy the current one is
    /// returned with `improving == false`; otherwise `tie_policy` picks among
    /// the strict improvers tying at the minimum.
    pub fn best_response(
        &self,
        profile: &StrategyProfile,
        player: usize,
        tie_policy: TiePolicy,
    ) -> Result<BestResponse, GameError> {
        self.validate_profile(profile)?;
        let cv = self.congestion_vector(profile)?;
        self.best_response_from(&cv, profile, player, tie_policy)
    }

    /// [`CongestionGame::best_response`] against a precomputed congestion
    /// vector (the dynamics driver's fast path).
    pub fn best_response_from(
        &self,
        cv: &CongestionVector,
        profile: &StrategyProfile,
        player: usize,
        tie_policy: TiePolicy,
    ) -> Result<BestResponse, GameError> {
        let costs = self.strategy_costs(cv, profile, player);
        let current = profile.choice(player);
        let min = *costs.iter().min().expect("nonempty strategy set");
        if let TiePolicy::Prefer(index) = tie_policy {
            if index >= costs.len() {
                return Err(GameError::BadStrategyIndex { player, index });
            }
            if costs[index] != min {
                return Err(GameError::PreferredNotMinimal {
                    player,
                    index,
                    cost: costs[index],
                    min,
                });
            }
        }
        if costs[current] == min {
            return Ok(BestResponse {
                strategy: current,
                improving: false,
                cost: min,
            });
        }
        let strategy = match tie_policy {
            TiePolicy::Prefer(index) => index,
            TiePolicy::KeepCurrent | TiePolicy::LowestIndex => costs
                .iter()
                .position(|&c| c == min)
                .expect("minimum exists"),
        };
        Ok(BestResponse {
            strategy,
            improving: true,
            cost: min,
        })
    }

    /// Moves `player` to `target` provided the target's cost does not exceed
    /// the current one, recording whether the move was strictly improving,
    /// merely indifferent, and whether a strict best-response dynamics would
    /// have accepted it.
    pub fn indifferent_switch(
        &self,
        profile: &StrategyProfile,
        player: usize,
        target: usize,
    ) -> Result<SwitchOutcome, GameError> {
        self.validate_profile(profile)?;
        if target >= self.strategy_sets[player].len() {
            return Err(GameError::BadStrategyIndex {
                player,
                index: target,
            });
        }
        let cv = self.congestion_vector(profile)?;
        self.indifferent_switch_from(&cv, profile, player, target)
    }

    /// [`CongestionGame::indifferent_switch`] against a precomputed
    /// congestion vector.
    pub fn indifferent_switch_from(
        &self,
        cv: &CongestionVector,
        profile: &StrategyProfile,
        player: usize,
        target: usize,
    ) -> Result<SwitchOutcome, GameError> {
        let costs = self.strategy_costs(cv, profile, player);
        let current = profile.choice(player);
        let current_cost = costs[current];
        let target_cost = costs[target];
        if target_cost > current_cost {
            return Err(GameError::TargetWorse {
                player,
                index: target,
                target_cost,
                current_cost,
            });
        }
        let min = *costs.iter().min().expect("nonempty strategy set");
        let flag = if target == current {
            MoveFlag::Stay
        } else if target_cost < current_cost {
            MoveFlag::Improving
        } else {
            MoveFlag::Indifferent
        };
        let strict_legal = match flag {
            MoveFlag::Stay => current_cost == min,
            MoveFlag::Improving => target_cost == min,
            MoveFlag::Indifferent => false,
        };
        Ok(SwitchOutcome {
            profile: profile.with_choice(player, target),
            flag,
            strict_legal,
            pre_cost: current_cost,
            post_cost: target_cost,
        })
    }
}

fn compute_symmetric(strategy_sets: &[Vec<Strategy>]) -> bool {
    if strategy_sets.len() <= 1 {
        return true;
    }
    let as_set = |set: &Vec<Strategy>| {
        let mut sorted = set.clone();
        sorted.sort();
        sorted.dedup();
        sorted
    };
    let first = as_set(&strategy_sets[0]);
    strategy_sets[1..].iter().all(|set| as_set(set) == first)
}
