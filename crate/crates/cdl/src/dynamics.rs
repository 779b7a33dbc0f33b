//! Best-response dynamics under scheduling policies.
//!
//! A dynamics is a sequence of single-player moves. We segment it into
//! coverings of a fixed length `T`: a covering is *live* when every player
//! moves at least once in it and *beta-bounded* when no player moves more
//! than `beta` times. A dynamics whose every covering is live satisfies the
//! minimum-liveness condition; if every covering is also beta-bounded it
//! satisfies the fairness condition with unfairness index `beta`.
//!
//! A scheduled player whose current strategy is already a best response emits
//! an explicit `stay` move. A stay is itself a best response (at a fixed
//! point the best response is the current strategy), so it counts toward
//! both liveness and the per-player move bound, and keeps coverings
//! well-defined once the dynamics parks at an equilibrium.
//!
//! Two execution modes exist:
//!
//! * `Strict` - only best responses are played; ties keep the current
//!   strategy.
//! * `Permissive` - scripted moves may switch to an equal-cost strategy.
//!   Scripted lower-bound runs depend on such indifferent switches.
//!
//! Everything is deterministic: identical inputs (including seeds) produce
//! identical traces, byte for byte.

use crate::game::{
    CongestionGame, CongestionVector, GameError, MoveFlag, StrategyProfile, TiePolicy,
};
use crate::rng::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DynamicsError {
    #[error(transparent)]
    Game(#[from] GameError),
    #[error("covering length T={t} must be at least the player count n={n}")]
    CoveringTooShort { t: usize, n: usize },
    #[error("beta={beta} must satisfy 1 <= beta <= T={t}")]
    BadBeta { beta: usize, t: usize },
    #[error("random-fair scheduling needs n*beta >= T (got n={n}, beta={beta}, T={t}): a covering of T moves cannot keep every player within beta moves")]
    InfeasibleFairness { n: usize, beta: usize, t: usize },
    #[error("round-robin order must be a permutation of the players")]
    BadPermutation,
    #[error("scripted schedule is empty")]
    EmptyScript,
    #[error("scripted schedule length {len} is not divisible by covering length T={t}")]
    ScriptNotCoverable { len: usize, t: usize },
    #[error("step {step}: scripted move for player {player} to strategy {strategy} is not a strict best response: {source}")]
    IllegalScriptedMove {
        step: usize,
        player: usize,
        strategy: usize,
        source: GameError,
    },
    #[error("step {step}: scripted indifferent switch for player {player} (strategy {strategy}) is not a best response in strict mode; replay it in permissive mode")]
    IndifferentInStrictMode {
        step: usize,
        player: usize,
        strategy: usize,
    },
    #[error("step {step}: {source}")]
    BadSwitch { step: usize, source: GameError },
    #[error("trace length {len} is not divisible by covering length T={t}")]
    NotCoverable { len: usize, t: usize },
    #[error("replay mismatch at step {step}: recorded {field} = {recorded}, replayed {replayed}")]
    ReplayMismatch {
        step: usize,
        field: &'static str,
        recorded: u64,
        replayed: u64,
    },
}

/// Fairness parameters: covering length `T` and per-player move bound `beta`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FairnessSpec {
    pub t: usize,
    pub beta: usize,
}

impl FairnessSpec {
    pub fn new(t: usize, beta: usize) -> Self {
        FairnessSpec { t, beta }
    }

    pub fn validate(&self, n: usize) -> Result<(), DynamicsError> {
        if self.t < n {
            return Err(DynamicsError::CoveringTooShort { t: self.t, n });
        }
        if self.beta == 0 || self.beta > self.t {
            return Err(DynamicsError::BadBeta {
                beta: self.beta,
                t: self.t,
            });
        }
        Ok(())
    }
}

/// Execution mode for [`run_dynamics`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Only best responses; a player already at one stays.
    Strict,
    /// Equal-cost scripted switches are allowed.
    Permissive,
}

impl Mode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::Strict => "strict",
            Mode::Permissive => "permissive",
        }
    }
}

/// Who moves when.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SchedulePolicy {
    /// A fixed permutation replayed every covering; `T = n`, `beta = 1`.
    RoundRobin { order: Vec<usize> },
    /// Uniform choice among players that can still move without breaking
    /// either the liveness or the beta bound of the current covering.
    RandomFair { t: usize, beta: usize, seed: u64 },
    /// An explicit move list `(player, strategy index)`, usually produced by
    /// the lower-bound generator. `t` segments it into coverings; by default
    /// the whole script is one covering.
    Scripted {
        moves: Vec<(usize, usize)>,
        t: Option<usize>,
    },
}

impl SchedulePolicy {
    pub fn round_robin(n: usize) -> Self {
        SchedulePolicy::RoundRobin {
            order: (0..n).collect(),
        }
    }

    /// The fairness parameters this policy guarantees by construction.
    pub fn fairness_spec(&self, n: usize) -> FairnessSpec {
        match self {
            SchedulePolicy::RoundRobin { .. } => FairnessSpec { t: n, beta: 1 },
            SchedulePolicy::RandomFair { t, beta, .. } => FairnessSpec { t: *t, beta: *beta },
            SchedulePolicy::Scripted { moves, t } => FairnessSpec {
                t: t.unwrap_or(moves.len()),
                // Scripts promise nothing; validation is post-hoc.
                beta: t.unwrap_or(moves.len()),
            },
        }
    }
}

/// One recorded move.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MoveRecord {
    /// 1-based step number within the trace.
    pub step: usize,
    pub player: usize,
    /// Strategy index the player holds after the move.
    pub strategy: usize,
    /// Cost of the player's previous strategy, just before the move.
    pub pre_cost: u64,
    /// Cost right after the move.
    pub post_cost: u64,
    pub flag: MoveFlag,
    /// Social cost of the state after the move.
    pub social_cost: u64,
    /// Potential of the state after the move.
    pub potential: u64,
}

/// A recorded dynamics: initial state plus ordered moves, segmented into
/// coverings of length `t`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MoveTrace {
    pub initial: StrategyProfile,
    pub t: usize,
    pub mode: Mode,
    pub moves: Vec<MoveRecord>,
}

impl MoveTrace {
    pub fn num_coverings(&self) -> usize {
        debug_assert!(self.t > 0 && self.moves.len() % self.t == 0);
        self.moves.len() / self.t
    }

    pub fn len(&self) -> usize {
        self.moves.len()
    }

    pub fn is_empty(&self) -> bool {
        self.moves.is_empty()
    }

    /// State after `steps` moves (0 gives the initial state).
    pub fn state_at(&self, steps: usize) -> StrategyProfile {
        let mut profile = self.initial.clone();
        for record in &self.moves[..steps] {
            profile = profile.with_choice(record.player, record.strategy);
        }
        profile
    }

    pub fn final_state(&self) -> StrategyProfile {
        self.state_at(self.moves.len())
    }

    /// Re-executes the trace against `game`, checking every recorded cost,
    /// social cost and potential. Detects tampered or mismatched traces.
    pub fn verify_replay(&self, game: &CongestionGame) -> Result<(), DynamicsError> {
        game.validate_profile(&self.initial)?;
        let mut profile = self.initial.clone();
        let mut cv = game.congestion_vector(&profile)?;
        for record in &self.moves {
            if record.player >= game.n() {
                return Err(GameError::ProfileLength {
                    got: record.player,
                    expected: game.n(),
                }
                .into());
            }
            if record.strategy >= game.strategies(record.player).len() {
                return Err(GameError::BadStrategyIndex {
                    player: record.player,
                    index: record.strategy,
                }
                .into());
            }
            let old = profile.choice(record.player);
            let pre = game.cost_on(&cv, game.strategy(record.player, old));
            cv.remove_strategy(game.strategy(record.player, old));
            cv.add_strategy(game.strategy(record.player, record.strategy));
            profile = profile.with_choice(record.player, record.strategy);
            let post = game.cost_on(&cv, game.strategy(record.player, record.strategy));
            let social = game.social_cost_from(&cv);
            let potential = game.potential_from(&cv);
            let mismatch = |field: &'static str, recorded: u64, replayed: u64| {
                DynamicsError::ReplayMismatch {
                    step: record.step,
                    field,
                    recorded,
                    replayed,
                }
            };
            if pre != record.pre_cost {
                return Err(mismatch("pre_cost", record.pre_cost, pre));
            }
            if post != record.post_cost {
                return Err(mismatch("post_cost", record.post_cost, post));
            }
            if social != record.social_cost {
                return Err(mismatch("social_cost", record.social_cost, social));
            }
            if potential != record.potential {
                return Err(mismatch("potential", record.potential, potential));
            }
        }
        Ok(())
    }
}

/// Per-covering liveness/fairness findings.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoveringValidation {
    pub covering: usize,
    /// Players with zero moves in the covering.
    pub silent_players: Vec<usize>,
    /// Players exceeding beta, with their move counts.
    pub over_beta: Vec<(usize, usize)>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FairnessReport {
    pub violations: Vec<CoveringValidation>,
    pub coverings: usize,
}

impl FairnessReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn liveness_ok(&self) -> bool {
        self.violations.iter().all(|v| v.silent_players.is_empty())
    }
}

/// Splits the trace into coverings of `spec.t` moves and reports, per
/// covering, the players that never moved and the players that moved more
/// than `spec.beta` times.
pub fn validate_fairness(
    trace: &MoveTrace,
    n: usize,
    spec: &FairnessSpec,
) -> Result<FairnessReport, DynamicsError> {
    if spec.t == 0 || trace.moves.len() % spec.t != 0 {
        return Err(DynamicsError::NotCoverable {
            len: trace.moves.len(),
            t: spec.t,
        });
    }
    let mut report = FairnessReport {
        violations: Vec::new(),
        coverings: trace.moves.len() / spec.t,
    };
    for (c, chunk) in trace.moves.chunks(spec.t).enumerate() {
        let mut counts = vec![0usize; n];
        for record in chunk {
            counts[record.player] += 1;
        }
        let silent: Vec<usize> = (0..n).filter(|&i| counts[i] == 0).collect();
        let over: Vec<(usize, usize)> = (0..n)
            .filter(|&i| counts[i] > spec.beta)
            .map(|i| (i, counts[i]))
            .collect();
        if !silent.is_empty() || !over.is_empty() {
            report.violations.push(CoveringValidation {
                covering: c,
                silent_players: silent,
                over_beta: over,
            });
        }
    }
    Ok(report)
}

/// Static view of one covering: boundary states, the player sequence, and
/// each player's last move.
#[derive(Clone, Debug)]
pub struct CoveringView {
    pub index: usize,
    /// State entering the covering.
    pub start: StrategyProfile,
    /// State leaving the covering.
    pub end: StrategyProfile,
    /// `schedule[t]` is the player moving at (1-based) step `t+1` of the
    /// covering.
    pub schedule: Vec<usize>,
    /// For each player, the 1-based in-covering index of its last move,
    /// `None` when the player never moved (a liveness violation).
    pub last_move: Vec<Option<usize>>,
    pub moves_per_player: Vec<usize>,
}

/// Builds the per-covering views of a trace.
pub fn covering_views(
    game: &CongestionGame,
    trace: &MoveTrace,
) -> Result<Vec<CoveringView>, DynamicsError> {
    if trace.t == 0 || trace.moves.len() % trace.t != 0 {
        return Err(DynamicsError::NotCoverable {
            len: trace.moves.len(),
            t: trace.t,
        });
    }
    let n = game.n();
    let mut views = Vec::with_capacity(trace.num_coverings());
    let mut state = trace.initial.clone();
    for (index, chunk) in trace.moves.chunks(trace.t).enumerate() {
        let start = state.clone();
        let mut schedule = Vec::with_capacity(chunk.len());
        let mut last_move = vec![None; n];
        let mut moves_per_player = vec![0usize; n];
        for (offset, record) in chunk.iter().enumerate() {
            schedule.push(record.player);
            last_move[record.player] = Some(offset + 1);
            moves_per_player[record.player] += 1;
            state = state.with_choice(record.player, record.strategy);
        }
        views.push(CoveringView {
            index,
            start,
            end: state.clone(),
            schedule,
            last_move,
            moves_per_player,
        });
    }
    Ok(views)
}

struct Runner<'g> {
    game: &'g CongestionGame,
    profile: StrategyProfile,
    cv: CongestionVector,
    social: u64,
    potential: u64,
    moves: Vec<MoveRecord>,
}

impl<'g> Runner<'g> {
    fn new(game: &'g CongestionGame, initial: StrategyProfile) -> Result<Self, GameError> {
        let cv = game.congestion_vector(&initial)?;
        let social = game.social_cost_from(&cv);
        let potential = game.potential_from(&cv);
        Ok(Runner {
            game,
            profile: initial,
            cv,
            social,
            potential,
            moves: Vec::new(),
        })
    }

    fn apply(&mut self, player: usize, strategy: usize, pre: u64, post: u64, flag: MoveFlag) {
        let old = self.profile.choice(player);
        self.cv.remove_strategy(self.game.strategy(player, old));
        self.cv.add_strategy(self.game.strategy(player, strategy));
        self.profile = self.profile.with_choice(player, strategy);
        self.social = self.game.social_cost_from(&self.cv);
        self.potential = self.game.potential_from(&self.cv);
        self.moves.push(MoveRecord {
            step: self.moves.len() + 1,
            player,
            strategy,
            pre_cost: pre,
            post_cost: post,
            flag,
            social_cost: self.social,
            potential: self.potential,
        });
    }

    /// Plays one strict best response for `player`.
    fn step_strict(&mut self, player: usize, policy: TiePolicy) -> Result<(), GameError> {
        let br = self
            .game
            .best_response_from(&self.cv, &self.profile, player, policy)?;
        let pre = self.game.cost_on(
            &self.cv,
            self.game.strategy(player, self.profile.choice(player)),
        );
        let flag = if br.improving {
            MoveFlag::Improving
        } else {
            MoveFlag::Stay
        };
        self.apply(player, br.strategy, pre, br.cost, flag);
        Ok(())
    }
}

/// Drives a best-response dynamics and records the trace.
///
/// `num_coverings` covers of the policy's `T` are executed; a scripted policy
/// plays its whole move list instead and `num_coverings` is ignored.
pub fn run_dynamics(
    game: &CongestionGame,
    initial: &StrategyProfile,
    policy: &SchedulePolicy,
    num_coverings: usize,
    mode: Mode,
) -> Result<MoveTrace, DynamicsError> {
    let n = game.n();
    let mut runner = Runner::new(game, initial.clone())?;
    let t = match policy {
        SchedulePolicy::RoundRobin { order } => {
            let mut seen = vec![false; n];
            if order.len() != n || order.iter().any(|&p| p >= n || std::mem::replace(&mut seen[p], true)) {
                return Err(DynamicsError::BadPermutation);
            }
            for _ in 0..num_coverings {
                for &player in order {
                    runner.step_strict(player, TiePolicy::KeepCurrent)?;
                }
            }
            n
        }
        SchedulePolicy::RandomFair { t, beta, seed } => {
            let spec = FairnessSpec::new(*t, *beta);
            spec.validate(n)?;
            if n.saturating_mul(*beta) < *t {
                return Err(DynamicsError::InfeasibleFairness {
                    n,
                    beta: *beta,
                    t: *t,
                });
            }
            let mut rng = Rng::new(*seed);
            for _ in 0..num_coverings {
                schedule_fair_covering(&mut runner, n, *t, *beta, &mut rng, mode)?;
            }
            *t
        }
        SchedulePolicy::Scripted { moves, t } => {
            if moves.is_empty() {
                return Err(DynamicsError::EmptyScript);
            }
            let t = t.unwrap_or(moves.len());
            if t == 0 || moves.len() % t != 0 {
                return Err(DynamicsError::ScriptNotCoverable {
                    len: moves.len(),
                    t,
                });
            }
            for (i, &(player, strategy)) in moves.iter().enumerate() {
                run_scripted_step(&mut runner, i + 1, player, strategy, mode)?;
            }
            t
        }
    };
    Ok(MoveTrace {
        initial: initial.clone(),
        t,
        mode,
        moves: runner.moves,
    })
}

fn run_scripted_step(
    runner: &mut Runner,
    step: usize,
    player: usize,
    strategy: usize,
    mode: Mode,
) -> Result<(), DynamicsError> {
    match mode {
        Mode::Strict => {
            let br = runner
                .game
                .best_response_from(&runner.cv, &runner.profile, player, TiePolicy::Prefer(strategy))
                .map_err(|source| DynamicsError::IllegalScriptedMove {
                    step,
                    player,
                    strategy,
                    source,
                })?;
            // The preferred strategy attains the minimum, but an equal-cost
            // move away from the current strategy is still not a best
            // response under the strict rule.
            if !br.improving && strategy != runner.profile.choice(player) {
                return Err(DynamicsError::IndifferentInStrictMode {
                    step,
                    player,
                    strategy,
                });
            }
            let pre = runner.game.cost_on(
                &runner.cv,
                runner
                    .game
                    .strategy(player, runner.profile.choice(player)),
            );
            let flag = if br.improving {
                MoveFlag::Improving
            } else {
                MoveFlag::Stay
            };
            runner.apply(player, br.strategy, pre, br.cost, flag);
        }
        Mode::Permissive => {
            let switch = runner
                .game
                .indifferent_switch_from(&runner.cv, &runner.profile, player, strategy)
                .map_err(|source| DynamicsError::BadSwitch { step, source })?;
            runner.apply(
                player,
                strategy,
                switch.pre_cost,
                switch.post_cost,
                switch.flag,
            );
        }
    }
    Ok(())
}

/// One covering of the constructive fair sampler: pick uniformly among
/// players with remaining beta budget, except that once the remaining steps
/// are exactly enough to serve the players still owed a move, only those
/// players are eligible. This never violates either condition.
fn schedule_fair_covering(
    runner: &mut Runner,
    n: usize,
    t: usize,
    beta: usize,
    rng: &mut Rng,
    mode: Mode,
) -> Result<(), DynamicsError> {
    debug_assert!(mode == Mode::Strict || mode == Mode::Permissive);
    let mut moves = vec![0usize; n];
    for step in 0..t {
        let remaining = t - step;
        let unserved: Vec<usize> = (0..n).filter(|&i| moves[i] == 0).collect();
        let eligible: Vec<usize> = if unserved.len() == remaining {
            unserved
        } else {
            (0..n).filter(|&i| moves[i] < beta).collect()
        };
        debug_assert!(!eligible.is_empty(), "fair sampler ran out of budget");
        let player = *rng.choose(&eligible);
        moves[player] += 1;
        // The sampler decides who moves; what they play is always a strict
        // best response (permissive mode only matters for scripts).
        runner.step_strict(player, TiePolicy::KeepCurrent)?;
    }
    Ok(())
}

/// Iterates strictly improving best responses (round-robin scan) until no
/// player can improve, returning the equilibrium reached and the number of
/// improving moves. Terminates because the potential strictly decreases by
/// at least 1 per improving move.
pub fn descend_to_equilibrium(
    game: &CongestionGame,
    initial: &StrategyProfile,
) -> Result<(StrategyProfile, usize), GameError> {
    let mut profile = initial.clone();
    let mut cv = game.congestion_vector(&profile)?;
    let mut improving_moves = 0usize;
    loop {
        let mut improved = false;
        for player in 0..game.n() {
            let br = game.best_response_from(&cv, &profile, player, TiePolicy::KeepCurrent)?;
            if br.improving {
                cv.remove_strategy(game.strategy(player, profile.choice(player)));
                cv.add_strategy(game.strategy(player, br.strategy));
                profile = profile.with_choice(player, br.strategy);
                improving_moves += 1;
                improved = true;
            }
        }
        if !improved {
            return Ok((profile, improving_moves));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::Delay;

    fn two_player_identity() -> CongestionGame {
        CongestionGame::new(
            vec![Delay::IDENTITY, Delay::IDENTITY],
            vec![vec![vec![0], vec![1]], vec![vec![0], vec![1]]],
        )
        .unwrap()
    }

    #[test]
    fn round_robin_reaches_split_equilibrium() {
        let game = two_player_identity();
        let initial = StrategyProfile::new(vec![0, 0]);
        let trace = run_dynamics(
            &game,
            &initial,
            &SchedulePolicy::round_robin(2),
            1,
            Mode::Strict,
        )
        .unwrap();
        assert_eq!(trace.len(), 2);
        let end = trace.final_state();
        assert_eq!(game.social_cost(&end).unwrap(), 2);
        // Player 0 improved, player 1 stayed.
        assert_eq!(trace.moves[0].flag, MoveFlag::Improving);
        assert_eq!(trace.moves[1].flag, MoveFlag::Stay);
    }

    #[test]
    fn coverings_have_fixed_length() {
        // n = 16, two coverings under round robin: 32 steps.
        let game = CongestionGame::new(
            vec![Delay::IDENTITY, Delay::IDENTITY],
            vec![vec![vec![0], vec![1]]; 16],
        )
        .unwrap();
        let trace = run_dynamics(
            &game,
            &StrategyProfile::uniform(16, 0),
            &SchedulePolicy::round_robin(16),
            2,
            Mode::Strict,
        )
        .unwrap();
        assert_eq!(trace.len(), 32);
        assert_eq!(trace.num_coverings(), 2);
    }

    #[test]
    fn round_robin_passes_its_own_fairness_spec() {
        let game = two_player_identity();
        let trace = run_dynamics(
            &game,
            &StrategyProfile::new(vec![0, 0]),
            &SchedulePolicy::round_robin(2),
            3,
            Mode::Strict,
        )
        .unwrap();
        let report = validate_fairness(&trace, 2, &FairnessSpec::new(2, 1)).unwrap();
        assert!(report.is_valid(), "{report:?}");
    }

    #[test]
    fn fairness_violations_are_reported() {
        let game = two_player_identity();
        // A scripted run where player 0 hogs the whole covering.
        let trace = run_dynamics(
            &game,
            &StrategyProfile::new(vec![0, 0]),
            &SchedulePolicy::Scripted {
                moves: vec![(0, 1), (0, 1), (0, 1), (0, 1)],
                t: Some(4),
            },
            1,
            Mode::Permissive,
        )
        .unwrap();
        let report = validate_fairness(&trace, 2, &FairnessSpec::new(4, 2)).unwrap();
        assert_eq!(report.violations.len(), 1);
        assert_eq!(report.violations[0].silent_players, vec![1]);
        assert_eq!(report.violations[0].over_beta, vec![(0, 4)]);
    }

    #[test]
    fn trace_length_must_divide() {
        let game = two_player_identity();
        let trace = run_dynamics(
            &game,
            &StrategyProfile::new(vec![0, 0]),
            &SchedulePolicy::round_robin(2),
            1,
            Mode::Strict,
        )
        .unwrap();
        let err = validate_fairness(&trace, 2, &FairnessSpec::new(3, 1)).unwrap_err();
        assert!(matches!(err, DynamicsError::NotCoverable { .. }));
    }

    #[test]
    fn covering_views_track_last_moves() {
        let game = two_player_identity();
        let trace = run_dynamics(
            &game,
            &StrategyProfile::new(vec![0, 0]),
            &SchedulePolicy::RoundRobin { order: vec![1, 0] },
            1,
            Mode::Strict,
        )
        .unwrap();
        let views = covering_views(&game, &trace).unwrap();
        assert_eq!(views.len(), 1);
        assert_eq!(views[0].last_move, vec![Some(2), Some(1)]);
        assert_eq!(views[0].schedule, vec![1, 0]);
    }

    #[test]
    fn covering_views_mark_missing_player() {
        let game = two_player_identity();
        let trace = run_dynamics(
            &game,
            &StrategyProfile::new(vec![0, 0]),
            &SchedulePolicy::Scripted {
                moves: vec![(0, 1), (0, 1)],
                t: Some(2),
            },
            1,
            Mode::Permissive,
        )
        .unwrap();
        let views = covering_views(&game, &trace).unwrap();
        assert_eq!(views[0].last_move[1], None);
    }

    #[test]
    fn player_moving_twice_keeps_second_index() {
        let game = two_player_identity();
        let trace = run_dynamics(
            &game,
            &StrategyProfile::new(vec![0, 0]),
            &SchedulePolicy::Scripted {
                moves: vec![(0, 1), (1, 0), (0, 1)],
                t: Some(3),
            },
            1,
            Mode::Permissive,
        )
        .unwrap();
        let views = covering_views(&game, &trace).unwrap();
        assert_eq!(views[0].last_move[0], Some(3));
    }

    #[test]
    fn random_fair_traces_are_deterministic() {
        let game = two_player_identity();
        let policy = SchedulePolicy::RandomFair {
            t: 4,
            beta: 2,
            seed: 42,
        };
        let a = run_dynamics(&game, &StrategyProfile::new(vec![0, 0]), &policy, 3, Mode::Strict)
            .unwrap();
        let b = run_dynamics(&game, &StrategyProfile::new(vec![0, 0]), &policy, 3, Mode::Strict)
            .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn random_fair_rejects_infeasible_parameters() {
        let game = two_player_identity();
        let err = run_dynamics(
            &game,
            &StrategyProfile::new(vec![0, 0]),
            &SchedulePolicy::RandomFair {
                t: 5,
                beta: 2,
                seed: 0,
            },
            1,
            Mode::Strict,
        )
        .unwrap_err();
        assert!(matches!(err, DynamicsError::InfeasibleFairness { .. }));
    }

    #[test]
    fn strict_mode_rejects_scripted_indifference() {
        // Two equal-cost strategies; moving between them is not a strict
        // best response.
        let game = CongestionGame::new(
            vec![Delay::IDENTITY, Delay::IDENTITY],
            vec![vec![vec![0], vec![1]]],
        )
        .unwrap();
        let err = run_dynamics(
            &game,
            &StrategyProfile::new(vec![0]),
            &SchedulePolicy::Scripted {
                moves: vec![(0, 1)],
                t: None,
            },
            1,
            Mode::Strict,
        )
        .unwrap_err();
        assert!(matches!(err, DynamicsError::IndifferentInStrictMode { step: 1, .. }));

        // Permissive mode accepts it and flags it indifferent.
        let trace = run_dynamics(
            &game,
            &StrategyProfile::new(vec![0]),
            &SchedulePolicy::Scripted {
                moves: vec![(0, 1)],
                t: None,
            },
            1,
            Mode::Permissive,
        )
        .unwrap();
        assert_eq!(trace.moves[0].flag, MoveFlag::Indifferent);
    }

    #[test]
    fn strict_scripted_rejects_non_minimizing_move() {
        let game = two_player_identity();
        // Both on resource 0; player 0's best response is resource 1, the
        // script demands staying on 0.
        let err = run_dynamics(
            &game,
            &StrategyProfile::new(vec![0, 0]),
            &SchedulePolicy::Scripted {
                moves: vec![(0, 0)],
                t: None,
            },
            1,
            Mode::Strict,
        )
        .unwrap_err();
        assert!(matches!(err, DynamicsError::IllegalScriptedMove { step: 1, .. }));
    }

    #[test]
    fn strict_costs_never_increase() {
        let game = CongestionGame::new(
            vec![Delay::new(1, 0), Delay::new(2, 1), Delay::new(0, 2)],
            vec![
                vec![vec![0], vec![1], vec![2]],
                vec![vec![0, 1], vec![2]],
                vec![vec![1], vec![0, 2]],
            ],
        )
        .unwrap();
        let trace = run_dynamics(
            &game,
            &StrategyProfile::new(vec![0, 0, 0]),
            &SchedulePolicy::RandomFair {
                t: 6,
                beta: 2,
                seed: 9,
            },
            4,
            Mode::Strict,
        )
        .unwrap();
        let mut prev_potential = game.potential(&trace.initial).unwrap();
        for record in &trace.moves {
            assert!(record.post_cost <= record.pre_cost);
            assert_eq!(
                record.flag == MoveFlag::Improving,
                record.post_cost < record.pre_cost
            );
            assert!(record.potential <= prev_potential);
            if record.flag == MoveFlag::Improving {
                assert!(record.potential < prev_potential);
            }
            prev_potential = record.potential;
        }
    }

    #[test]
    fn replay_verification_catches_tampering() {
        let game = two_player_identity();
        let mut trace = run_dynamics(
            &game,
            &StrategyProfile::new(vec![0, 0]),
            &SchedulePolicy::round_robin(2),
            2,
            Mode::Strict,
        )
        .unwrap();
        trace.verify_replay(&game).unwrap();
        trace.moves[1].social_cost += 1;
        assert!(trace.verify_replay(&game).is_err());
    }

    #[test]
    fn descent_terminates_at_a_fixed_point() {
        let game = two_player_identity();
        let (profile, moves) =
            descend_to_equilibrium(&game, &StrategyProfile::new(vec![0, 0])).unwrap();
        assert_eq!(moves, 1);
        assert_eq!(game.social_cost(&profile).unwrap(), 2);
    }
}
