//! Adversarial slow-convergence instances.
//!
//! The generator builds a leveled blocking game. Players and resources live
//! on levels `0..=L`; level `i` holds `beta^i` blocks, and block `(i, j)`
//! consists of `f_i` triplets of players `P`, `Q`, `R` (`f_i` grows with the
//! level as `(beta / log2 beta)^(1 - 1/2^(i+1))`, floored and clamped to at
//! least 2), `m / beta^i` *main* resources, and per-triplet *address* and
//! *toll* resources.
//!
//! Strategy `s_0` of a triplet is its share of the block's main resources.
//! Strategies `s_1..s_beta` binary-encode their index on the address
//! resources: `Q` players encode on the `q` side, `R` players on the `r`
//! side, and `P` players use the inverted encoding of the side matching the
//! index parity, so that a `P` player never collides with its own triplet's
//! encoder. A `P` player's strategy `s_alpha` additionally occupies the
//! entire main-resource block of child block `(i+1, (j-1)*beta + alpha)` -
//! playing it *blocks* that child's `s_0` strategies. Level-`L` blocks point
//! at a sink level `L+1` of main resources with no players of their own.
//!
//! The scripted run walks the block tree: a block cycles `alpha` from 1 to
//! `beta`, each time re-encoding the address bits (`R` on odd, `Q` on even
//! steps) and marching its `P` players one by one onto the next child block,
//! then recursing into the child just blocked. Toll resources are tuned so
//! that every `P` move leaves the mover's delay exactly unchanged, every
//! other cycling strategy is strictly worse, and a blocked `s_0` is worse
//! still; the social cost therefore never decays toward the optimum even
//! though every player keeps moving.
//!
//! One full run moves every player at least once and at most `beta` times,
//! so it forms a single beta-bounded covering; [`fair_schedule`] repartitions
//! it into several coverings by interleaving explicit stays.

use crate::analysis::{isolation_lower_bound, CostBound, ExactRatio, OptReference, OptimumCertificate};
use crate::dynamics::{FairnessSpec, MoveTrace};
use crate::game::{CongestionGame, Delay, GameError, StrategyProfile};
use num_bigint::BigUint;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LowerBoundError {
    #[error(transparent)]
    Game(#[from] GameError),
    #[error("beta must be an even power of two greater than 10, got {beta}")]
    BadBeta { beta: u64 },
    #[error("levels must be at least 1, got {levels}")]
    BadLevels { levels: u64 },
    #[error("m = {m} violates the divisibility constraint: {constraint}")]
    Indivisible { m: u64, constraint: String },
    #[error("blocked-strategy dominance fails at level {level}: blocked s_0 delay {blocked} must exceed the cycling delay {cycling}; choose different parameters")]
    BlockedDominanceFails {
        level: u64,
        blocked: u64,
        cycling: u64,
    },
    #[error("instance too large: {what} = {value} exceeds {cap}")]
    TooLarge {
        what: &'static str,
        value: u64,
        cap: u64,
    },
    #[error("schedule length {len} is not divisible into {chunks} chunks")]
    UnevenChunks { len: usize, chunks: usize },
    #[error("claim violated at step {step}: {details}")]
    ClaimViolated { step: usize, details: String },
}

/// Parameters of the leveled blocking instance.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LowerBoundParams {
    /// Per-covering move allowance; even power of two, > 10.
    pub beta: u64,
    /// Highest player level `L` (levels `0..=L` carry players).
    pub levels: u64,
    /// Main resources per level; must satisfy the divisibility constraints.
    pub m: u64,
}

impl LowerBoundParams {
    pub fn new(beta: u64, levels: u64, m: u64) -> Result<Self, LowerBoundError> {
        let p = LowerBoundParams { beta, levels, m };
        p.validate()?;
        Ok(p)
    }

    /// Smallest `m` satisfying every divisibility constraint for the given
    /// `beta` and `levels`.
    pub fn smallest_m(beta: u64, levels: u64) -> Result<u64, LowerBoundError> {
        check_beta_levels(beta, levels)?;
        let mut m = 1u64;
        let lcm = |a: u64, b: u64| a / gcd(a, b) * b;
        for i in 0..=levels {
            let f = f_value(beta, i);
            m = lcm(m, beta.pow(i as u32) * f);
            m = lcm(m, beta.pow(i as u32 + 1));
        }
        Ok(m)
    }

    pub fn validate(&self) -> Result<(), LowerBoundError> {
        check_beta_levels(self.beta, self.levels)?;
        for i in 0..=self.levels {
            let f = f_value(self.beta, i);
            let share_div = self.beta.pow(i as u32) * f;
            if self.m % share_div != 0 {
                return Err(LowerBoundError::Indivisible {
                    m: self.m,
                    constraint: format!(
                        "beta^{i} * f_{i} = {share_div} must divide m (triplet main shares)"
                    ),
                });
            }
            let pow_div = self.beta.pow(i as u32 + 1);
            if self.m % pow_div != 0 {
                return Err(LowerBoundError::Indivisible {
                    m: self.m,
                    constraint: format!(
                        "beta^{} = {pow_div} must divide m (address slopes and tolls)",
                        i + 1
                    ),
                });
            }
        }
        // Blocked s_0 dominance: a blocked triplet share must cost more than
        // the cycling delay, level by level. Both sides scale linearly in m,
        // so this is a property of (beta, levels) alone, but we refuse the
        // parameters rather than build a game whose run is not locked in.
        let bits = bits_for(self.beta);
        for i in 1..=self.levels {
            let f_i = f_value(self.beta, i);
            let f_prev = f_value(self.beta, i - 1);
            let blocked = self.m / (self.beta.pow(i as u32) * f_i) * f_prev;
            let cycling = self.m * f_i / self.beta.pow(i as u32 + 1) * (1 + bits as u64);
            if blocked <= cycling {
                return Err(LowerBoundError::BlockedDominanceFails {
                    level: i,
                    blocked,
                    cycling,
                });
            }
        }
        Ok(())
    }

    pub fn f(&self, level: u64) -> u64 {
        f_value(self.beta, level)
    }

    pub fn bits(&self) -> u32 {
        bits_for(self.beta)
    }

    /// `3 m (levels + 1)`: the optimum social cost of the instance (each
    /// level contributes `m` from the main shares and `2m` from the two
    /// encoders per triplet at the reference parameters).
    pub fn analytic_opt(&self) -> u64 {
        3 * self.m * (self.levels + 1)
    }

    /// Moves in one full scripted run: each block plays `2 beta f_i` moves.
    pub fn run_length(&self) -> u64 {
        (0..=self.levels)
            .map(|i| self.beta.pow(i as u32) * 2 * self.beta * self.f(i))
            .sum()
    }

    pub fn player_count(&self) -> u64 {
        (0..=self.levels)
            .map(|i| 3 * self.f(i) * self.beta.pow(i as u32))
            .sum()
    }
}

fn check_beta_levels(beta: u64, levels: u64) -> Result<(), LowerBoundError> {
    if beta <= 10 || beta % 2 != 0 || !beta.is_power_of_two() {
        return Err(LowerBoundError::BadBeta { beta });
    }
    if levels == 0 {
        return Err(LowerBoundError::BadLevels { levels });
    }
    Ok(())
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Number of address bits: `ceil(log2 beta)`. Strategy indices `1..=beta`
/// are encoded modulo `2^bits`, which stays injective on that range.
fn bits_for(beta: u64) -> u32 {
    beta.next_power_of_two().trailing_zeros()
}

/// `f_i = max(2, floor((beta / log2 beta)^(1 - 1/2^(i+1))))`, computed
/// exactly: `t = f_i` is the largest integer with
/// `t^(2^(i+1)) * (log2 beta)^(2^(i+1)-1) <= beta^(2^(i+1)-1)`.
fn f_value(beta: u64, level: u64) -> u64 {
    let q = beta.trailing_zeros() as u64; // log2 beta, beta a power of two
    let n_exp = 1u64 << (level + 1);
    let k_exp = n_exp - 1;
    let rhs = BigUint::from(beta).pow(k_exp as u32);
    let q_pow = BigUint::from(q).pow(k_exp as u32);
    let mut lo = 1u64;
    let mut hi = beta + 1;
    while lo + 1 < hi {
        let mid = (lo + hi) / 2;
        if BigUint::from(mid).pow(n_exp as u32) * &q_pow <= rhs {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo.max(2)
}

/// Player roles within a triplet.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    P,
    Q,
    R,
}

/// Identity of a player in the block structure.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PlayerInfo {
    pub level: u64,
    /// 1-based block index within the level.
    pub block: u64,
    /// 1-based triplet index, `1..=f_level`.
    pub k: u64,
    pub role: Role,
}

/// Index maps between the block structure and the flat game.
#[derive(Clone, Debug)]
pub struct GPrimeLayout {
    pub params: LowerBoundParams,
    pub bits: u32,
    /// `f[i]` for levels `0..=L`.
    pub f: Vec<u64>,
    players: Vec<PlayerInfo>,
    player_base: Vec<usize>,
    /// `main_base[level]`: first main-resource id of the level
    /// (levels `0..=L+1`; level `L+1` is the sink).
    main_base: Vec<usize>,
    addr_base: Vec<usize>,
    toll_base: Vec<usize>,
    resource_count: usize,
}

impl GPrimeLayout {
    pub fn block_count(&self, level: u64) -> u64 {
        self.params.beta.pow(level as u32)
    }

    pub fn mains_per_block(&self, level: u64) -> u64 {
        self.params.m / self.params.beta.pow(level as u32)
    }

    pub fn player_count(&self) -> usize {
        self.players.len()
    }

    pub fn info(&self, player: usize) -> PlayerInfo {
        self.players[player]
    }

    /// Player id of `(level, block, k, role)`; `block` and `k` are 1-based.
    pub fn player(&self, level: u64, block: u64, k: u64, role: Role) -> usize {
        let per_block = 3 * self.f[level as usize] as usize;
        let base = self.player_base[level as usize] + (block as usize - 1) * per_block;
        let role_offset = match role {
            Role::P => 0,
            Role::Q => 1,
            Role::R => 2,
        };
        base + (k as usize - 1) * 3 + role_offset
    }

    /// `idx`-th main resource (0-based) of block `(level, block)`.
    pub fn main(&self, level: u64, block: u64, idx: u64) -> usize {
        self.main_base[level as usize]
            + ((block - 1) * self.mains_per_block(level) + idx) as usize
    }

    /// Address resource of triplet `(level, block, k)`: `q` side for `Q`
    /// encoders (and even `P` strategies), `r` side otherwise; `bit` in
    /// `0..bits`, `val` in `{0, 1}`.
    pub fn addr(&self, level: u64, block: u64, k: u64, q_side: bool, bit: u32, val: u64) -> usize {
        let per_triplet = 4 * self.bits as usize;
        let per_block = self.f[level as usize] as usize * per_triplet;
        let side = if q_side { 0 } else { 2 * self.bits as usize };
        self.addr_base[level as usize]
            + (block as usize - 1) * per_block
            + (k as usize - 1) * per_triplet
            + side
            + (bit as usize) * 2
            + val as usize
    }

    /// Toll resource of triplet `(level, block, k)` for strategy `alpha`.
    pub fn toll(&self, level: u64, block: u64, k: u64, alpha: u64) -> usize {
        let per_block = self.f[level as usize] * self.params.beta;
        self.toll_base[level as usize]
            + ((block - 1) * per_block + (k - 1) * self.params.beta + (alpha - 1)) as usize
    }

    /// Child block index blocked by strategy `alpha` of block `(level, j)`.
    pub fn child_block(&self, j: u64, alpha: u64) -> u64 {
        (j - 1) * self.params.beta + alpha
    }

    /// The strategy list of one player, index 0 is `s_0`, index `alpha` is
    /// `s_alpha`.
    fn strategies_for(&self, info: PlayerInfo) -> Vec<Vec<usize>> {
        let params = &self.params;
        let f_i = self.f[info.level as usize];
        let share = params.m / (params.beta.pow(info.level as u32) * f_i);
        let mut strategies = Vec::with_capacity(params.beta as usize + 1);
        // s_0: the triplet's share of the block's main resources.
        strategies.push(
            ((info.k - 1) * share..info.k * share)
                .map(|idx| self.main(info.level, info.block, idx))
                .collect(),
        );
        let enc_mask = (1u64 << self.bits) - 1;
        for alpha in 1..=params.beta {
            let enc = alpha & enc_mask;
            let mut s = Vec::new();
            match info.role {
                Role::Q | Role::R => {
                    let q_side = info.role == Role::Q;
                    for bit in 0..self.bits {
                        let val = (enc >> bit) & 1;
                        s.push(self.addr(info.level, info.block, info.k, q_side, bit, val));
                    }
                }
                Role::P => {
                    s.push(self.toll(info.level, info.block, info.k, alpha));
                    let child = self.child_block(info.block, alpha);
                    for idx in 0..self.mains_per_block(info.level + 1) {
                        s.push(self.main(info.level + 1, child, idx));
                    }
                    // Inverted encoding on the side matching the parity.
                    let q_side = alpha % 2 == 0;
                    for bit in 0..self.bits {
                        let val = 1 - ((enc >> bit) & 1);
                        s.push(self.addr(info.level, info.block, info.k, q_side, bit, val));
                    }
                }
            }
            strategies.push(s);
        }
        strategies
    }
}

/// A built lower-bound instance.
#[derive(Clone, Debug)]
pub struct GPrime {
    pub game: CongestionGame,
    pub layout: GPrimeLayout,
    /// Every player on its strategy `s_beta`.
    pub initial: StrategyProfile,
}

const MAX_PLAYERS: u64 = 1 << 20;
const MAX_RESOURCES: u64 = 1 << 24;

/// Builds the leveled blocking game.
pub fn build_gprime(params: &LowerBoundParams) -> Result<GPrime, LowerBoundError> {
    params.validate()?;
    let levels = params.levels;
    let beta = params.beta;
    let bits = params.bits();
    let f: Vec<u64> = (0..=levels).map(|i| params.f(i)).collect();

    let n_players = params.player_count();
    if n_players > MAX_PLAYERS {
        return Err(LowerBoundError::TooLarge {
            what: "players",
            value: n_players,
            cap: MAX_PLAYERS,
        });
    }

    // Resource layout: mains for levels 0..=L+1, then addresses, then tolls.
    let mut main_base = Vec::new();
    let mut next = 0usize;
    for _level in 0..=levels + 1 {
        main_base.push(next);
        next += params.m as usize;
    }
    let mut addr_base = Vec::new();
    for (i, &f_i) in f.iter().enumerate() {
        addr_base.push(next);
        next += (beta.pow(i as u32) * f_i * 4 * bits as u64) as usize;
    }
    let mut toll_base = Vec::new();
    for (i, &f_i) in f.iter().enumerate() {
        toll_base.push(next);
        next += (beta.pow(i as u32) * f_i * beta) as usize;
    }
    if next as u64 > MAX_RESOURCES {
        return Err(LowerBoundError::TooLarge {
            what: "resources",
            value: next as u64,
            cap: MAX_RESOURCES,
        });
    }

    let mut players = Vec::with_capacity(n_players as usize);
    let mut player_base = Vec::new();
    for level in 0..=levels {
        player_base.push(players.len());
        for block in 1..=beta.pow(level as u32) {
            for k in 1..=f[level as usize] {
                for role in [Role::P, Role::Q, Role::R] {
                    players.push(PlayerInfo {
                        level,
                        block,
                        k,
                        role,
                    });
                }
            }
        }
    }

    let layout = GPrimeLayout {
        params: *params,
        bits,
        f: f.clone(),
        players,
        player_base,
        main_base,
        addr_base,
        toll_base,
        resource_count: next,
    };

    // Delays: mains are identity, addresses have slope m f_i / beta^(i+1),
    // tolls are constants m (f_i - k) / beta^(i+1) on odd strategies and
    // m (k-1) / beta^(i+1) on even ones.
    let mut delays = vec![Delay::IDENTITY; layout.resource_count];
    for level in 0..=levels {
        let f_i = f[level as usize];
        let denom = beta.pow(level as u32 + 1);
        let slope = params.m * f_i / denom;
        for block in 1..=beta.pow(level as u32) {
            for k in 1..=f_i {
                for bit in 0..bits {
                    for q_side in [true, false] {
                        for val in 0..2 {
                            delays[layout.addr(level, block, k, q_side, bit, val)] =
                                Delay::new(slope, 0);
                        }
                    }
                }
                for alpha in 1..=beta {
                    let constant = if alpha % 2 == 1 {
                        params.m * (f_i - k) / denom
                    } else {
                        params.m * (k - 1) / denom
                    };
                    delays[layout.toll(level, block, k, alpha)] = Delay::new(0, constant);
                }
            }
        }
    }

    let strategy_sets: Vec<Vec<Vec<usize>>> = layout
        .players
        .iter()
        .map(|&info| layout.strategies_for(info))
        .collect();
    let game = CongestionGame::new(delays, strategy_sets)?;
    let initial = StrategyProfile::uniform(game.n(), beta as usize);
    Ok(GPrime {
        game,
        layout,
        initial,
    })
}

/// The recursive blocking schedule, started at the level-0 block.
///
/// For each `alpha` from 1 to `beta`: the parity-matching encoders move
/// first (`R` players on odd `alpha`, `Q` players on even), then the `P`
/// players march over, then the child block just blocked runs recursively.
/// `P` players move in increasing `k` when the target strategy is odd and
/// decreasing `k` when it is even; together with the toll constants this
/// keeps every mover's delay unchanged. (The source construction lists the
/// two directions the other way around, which contradicts its own
/// delay bookkeeping; the orders here are the ones that balance.)
pub fn build_algorithm1_schedule(layout: &GPrimeLayout) -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity(layout.params.run_length() as usize);
    run_block(layout, 0, 1, &mut out);
    out
}

fn run_block(layout: &GPrimeLayout, level: u64, block: u64, out: &mut Vec<(usize, usize)>) {
    let beta = layout.params.beta;
    let f_i = layout.f[level as usize];
    for alpha in 1..=beta {
        if alpha % 2 == 0 {
            for k in 1..=f_i {
                out.push((layout.player(level, block, k, Role::Q), alpha as usize));
            }
            for k in (1..=f_i).rev() {
                out.push((layout.player(level, block, k, Role::P), alpha as usize));
            }
        } else {
            for k in 1..=f_i {
                out.push((layout.player(level, block, k, Role::R), alpha as usize));
            }
            for k in 1..=f_i {
                out.push((layout.player(level, block, k, Role::P), alpha as usize));
            }
        }
        if level < layout.params.levels {
            run_block(layout, level + 1, layout.child_block(block, alpha), out);
        }
    }
}

/// Optimum certificate for the instance: `P` players on their main share,
/// `Q` players encoding 2, `R` players encoding 1. Every used resource then
/// carries congestion one, so when the profile's cost meets the per-player
/// isolation lower bound the profile is certifiably optimal; otherwise the
/// value is returned as an upper bound only.
pub fn gprime_opt(gp: &GPrime) -> OptReference {
    let choices: Vec<usize> = (0..gp.game.n())
        .map(|p| match gp.layout.info(p).role {
            Role::P => 0,
            Role::Q => 2,
            Role::R => 1,
        })
        .collect();
    let profile = StrategyProfile::new(choices);
    let value = gp
        .game
        .social_cost(&profile)
        .expect("optimum candidate profile is valid");
    if value == isolation_lower_bound(&gp.game) {
        OptReference::Exact(OptimumCertificate {
            profile,
            value,
            explored: 0,
        })
    } else {
        OptReference::Bound(CostBound {
            profile,
            value,
            exact: false,
        })
    }
}

/// Per-move records of the proposition checks.
#[derive(Clone, Debug, Default)]
pub struct PropositionReport {
    /// `P` moves checked for exact pre/post delay equality.
    pub p_moves: usize,
    /// Deviations `s_alpha'` probed and found strictly worse.
    pub deviations_checked: usize,
    /// Blocked `s_0` deviations probed on levels >= 1.
    pub blocked_s0_checked: usize,
}

/// Verifies, along a permissive replay of the schedule, that
///
/// * every `P` move keeps the mover's delay exactly at
///   `m f_i (1 + bits) / beta^(i+1)`,
/// * at each `P` move every cycling alternative `s_alpha'` with `alpha'`
///   outside the current transition pair costs strictly more,
/// * for levels >= 1, switching to the (blocked) `s_0` would cost strictly
///   more as well, and
/// * whenever a block's `P` players all hold the same `s_alpha`, every main
///   resource of the blocked child carries congestion at least `f_i`.
pub fn verify_blocking_claims(
    gp: &GPrime,
    trace: &MoveTrace,
) -> Result<PropositionReport, LowerBoundError> {
    let game = &gp.game;
    let layout = &gp.layout;
    let beta = layout.params.beta;
    let mut cv = game.congestion_vector(&trace.initial)?;
    let mut profile = trace.initial.clone();
    let mut report = PropositionReport::default();

    for record in &trace.moves {
        let info = layout.info(record.player);
        let current = profile.choice(record.player);
        if info.role == Role::P && record.strategy != current {
            let f_i = layout.f[info.level as usize];
            let expected =
                layout.params.m * f_i / beta.pow(info.level as u32 + 1) * (1 + layout.bits as u64);
            if record.pre_cost != expected || record.post_cost != expected {
                return Err(LowerBoundError::ClaimViolated {
                    step: record.step,
                    details: format!(
                        "P move of player {} should hold delay {expected}, recorded {} -> {}",
                        record.player, record.pre_cost, record.post_cost
                    ),
                });
            }
            report.p_moves += 1;
            let current_strategy = game.strategy(record.player, current);
            for alpha in 1..=beta as usize {
                if alpha == current || alpha == record.strategy {
                    continue;
                }
                let cost = game.deviation_cost(
                    &cv,
                    current_strategy,
                    game.strategy(record.player, alpha),
                );
                if cost <= record.pre_cost {
                    return Err(LowerBoundError::ClaimViolated {
                        step: record.step,
                        details: format!(
                            "deviation of player {} to s_{alpha} costs {cost}, not above {}",
                            record.player, record.pre_cost
                        ),
                    });
                }
                report.deviations_checked += 1;
            }
            if info.level >= 1 {
                let cost =
                    game.deviation_cost(&cv, current_strategy, game.strategy(record.player, 0));
                if cost <= record.pre_cost {
                    return Err(LowerBoundError::ClaimViolated {
                        step: record.step,
                        details: format!(
                            "blocked s_0 of player {} costs {cost}, not above {}",
                            record.player, record.pre_cost
                        ),
                    });
                }
                report.blocked_s0_checked += 1;
            }
        }

        cv.remove_strategy(game.strategy(record.player, current));
        cv.add_strategy(game.strategy(record.player, record.strategy));
        profile = profile.with_choice(record.player, record.strategy);

        // Whenever the mover completes a unanimous P front, the child block
        // must be fully congested.
        if info.role == Role::P && record.strategy >= 1 {
            let f_i = layout.f[info.level as usize];
            let unanimous = (1..=f_i).all(|k| {
                profile.choice(layout.player(info.level, info.block, k, Role::P))
                    == record.strategy
            });
            if unanimous {
                let child = layout.child_block(info.block, record.strategy as u64);
                for idx in 0..layout.mains_per_block(info.level + 1) {
                    let r = layout.main(info.level + 1, child, idx);
                    if cv.get(r) < f_i {
                        return Err(LowerBoundError::ClaimViolated {
                            step: record.step,
                            details: format!(
                                "blocked child ({}, {child}) main {r} has congestion {} < f_i = {f_i}",
                                info.level + 1,
                                cv.get(r)
                            ),
                        });
                    }
                }
            }
        }
    }
    Ok(report)
}

/// Cost floor along a replay: `C(S_t)/OPT` must never drop below
/// `f_(L-1) / (3 (L+1))`.
#[derive(Clone, Debug)]
pub struct TrajectoryReport {
    pub steps: usize,
    pub min_ratio: ExactRatio,
    pub floor: ExactRatio,
    pub ok: bool,
}

pub fn ratio_trajectory(
    gp: &GPrime,
    trace: &MoveTrace,
    opt: &OptReference,
) -> Result<TrajectoryReport, LowerBoundError> {
    let game = &gp.game;
    let params = &gp.layout.params;
    let opt_value = opt.value() as i128;
    assert!(opt_value > 0, "lower-bound instances have positive optimum");
    let floor = ExactRatio::new(
        params.f(params.levels - 1) as i128,
        3 * (params.levels as i128 + 1),
    );
    let mut cv = game.congestion_vector(&trace.initial)?;
    let mut profile = trace.initial.clone();
    let mut min_ratio = ExactRatio::new(game.social_cost_from(&cv) as i128, opt_value);
    for record in &trace.moves {
        let old = profile.choice(record.player);
        cv.remove_strategy(game.strategy(record.player, old));
        cv.add_strategy(game.strategy(record.player, record.strategy));
        profile = profile.with_choice(record.player, record.strategy);
        let ratio = ExactRatio::new(game.social_cost_from(&cv) as i128, opt_value);
        if ratio < min_ratio {
            min_ratio = ratio;
        }
    }
    Ok(TrajectoryReport {
        steps: trace.moves.len(),
        min_ratio,
        floor,
        ok: min_ratio >= floor,
    })
}

/// Repartitions a scripted run into `coverings` equal chunks, appending
/// explicit stays so that every covering is live. Returns the padded script
/// and the fairness parameters it satisfies.
pub fn fair_schedule(
    gp: &GPrime,
    schedule: &[(usize, usize)],
    coverings: usize,
) -> Result<(Vec<(usize, usize)>, FairnessSpec), LowerBoundError> {
    let n = gp.game.n();
    if coverings == 0 || schedule.len() % coverings != 0 {
        return Err(LowerBoundError::UnevenChunks {
            len: schedule.len(),
            chunks: coverings,
        });
    }
    let chunk_len = schedule.len() / coverings;
    let beta = gp.layout.params.beta as usize;

    // Per chunk: which players move, and how often.
    let chunks: Vec<&[(usize, usize)]> = schedule.chunks(chunk_len).collect();
    let mut untouched: Vec<Vec<usize>> = Vec::with_capacity(coverings);
    let mut move_counts: Vec<Vec<usize>> = Vec::with_capacity(coverings);
    for chunk in &chunks {
        let mut counts = vec![0usize; n];
        for &(p, _) in *chunk {
            counts[p] += 1;
        }
        untouched.push((0..n).filter(|&p| counts[p] == 0).collect());
        move_counts.push(counts);
    }
    let t = chunk_len + untouched.iter().map(Vec::len).max().unwrap_or(0);

    // Track current strategies so stays re-pick the player's own strategy.
    let mut current: Vec<usize> = gp.initial.choices().to_vec();
    let mut out = Vec::with_capacity(t * coverings);
    for (c, chunk) in chunks.iter().enumerate() {
        for &(p, s) in *chunk {
            current[p] = s;
            out.push((p, s));
        }
        // One stay per untouched player, then cycle spare-budget players
        // until the covering reaches length t.
        let mut padded = 0usize;
        for &p in &untouched[c] {
            out.push((p, current[p]));
            move_counts[c][p] += 1;
            padded += 1;
        }
        let mut wheel = 0usize;
        while chunk.len() + padded < t {
            let p = wheel % n;
            wheel += 1;
            if move_counts[c][p] < beta {
                out.push((p, current[p]));
                move_counts[c][p] += 1;
                padded += 1;
            }
        }
    }
    Ok((out, FairnessSpec::new(t, beta)))
}

/// Parameters for the liveness-focused corollary instance: two levels and
/// `beta` near the square root of the requested player count.
pub fn corollary_params(n_target: u64) -> Result<LowerBoundParams, LowerBoundError> {
    let mut beta = (n_target as f64).sqrt().round() as u64;
    beta = beta.next_power_of_two().max(16);
    let m = LowerBoundParams::smallest_m(beta, 1)?;
    LowerBoundParams::new(beta, 1, m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{run_dynamics, validate_fairness, Mode, SchedulePolicy};
    use crate::game::MoveFlag;

    fn reference_params() -> LowerBoundParams {
        LowerBoundParams::new(16, 1, 256).unwrap()
    }

    #[test]
    fn f_values_at_reference_parameters() {
        // beta = 16: beta/log2(beta) = 4; f_0 = 4^(1/2) = 2 and
        // f_1 = floor(4^(3/4)) = 2.
        assert_eq!(f_value(16, 0), 2);
        assert_eq!(f_value(16, 1), 2);
        // beta = 64: base 64/6; f_0 = floor(sqrt(64/6)) = 3,
        // f_1 = floor((64/6)^(3/4)) = 5.
        assert_eq!(f_value(64, 0), 3);
        assert_eq!(f_value(64, 1), 5);
        // The exponent approaches 1 from below, so values saturate near
        // beta / log2(beta).
        assert_eq!(f_value(16, 5), 3);
    }

    #[test]
    fn smallest_m_at_reference_parameters() {
        assert_eq!(LowerBoundParams::smallest_m(16, 1).unwrap(), 256);
    }

    #[test]
    fn parameter_validation() {
        assert!(matches!(
            LowerBoundParams::new(12, 1, 256),
            Err(LowerBoundError::BadBeta { beta: 12 })
        ));
        assert!(matches!(
            LowerBoundParams::new(16, 0, 256),
            Err(LowerBoundError::BadLevels { levels: 0 })
        ));
        let err = LowerBoundParams::new(16, 1, 128).unwrap_err();
        assert!(matches!(err, LowerBoundError::Indivisible { m: 128, .. }));
    }

    #[test]
    fn block_counts_per_level() {
        let gp = build_gprime(&reference_params()).unwrap();
        assert_eq!(gp.layout.block_count(0), 1);
        assert_eq!(gp.layout.block_count(1), 16);
        assert_eq!(gp.layout.mains_per_block(0), 256);
        assert_eq!(gp.layout.mains_per_block(1), 16);
        assert_eq!(gp.layout.mains_per_block(2), 1);
    }

    #[test]
    fn instance_shape_at_reference_parameters() {
        let params = reference_params();
        let gp = build_gprime(&params).unwrap();
        // 3*2 level-0 players + 16 blocks * 3*2 level-1 players.
        assert_eq!(gp.game.n(), 102);
        assert_eq!(params.player_count(), 102);
        // Everyone has s_0..s_beta.
        for p in 0..gp.game.n() {
            assert_eq!(gp.game.strategies(p).len(), 17);
        }
        // Mains for levels 0..=2, then 4*f*bits addresses and beta*f tolls
        // per block.
        assert_eq!(gp.game.resource_count(), 3 * 256 + 17 * 32 + 17 * 32);
        assert_eq!(params.run_length(), 1088);
    }

    #[test]
    fn initial_state_cost_is_frozen_value() {
        // Hand count at (beta=16, L=1, m=256): every player holds bits = 4
        // address resources at congestion 1 (slopes 32 and 2 per level:
        // 768 + 768), the k=2 P players pay tolls 16 + 16, and the two
        // blocked child blocks carry congestion 2 on 16 + 16 mains
        // (64 + 64).
        let gp = build_gprime(&reference_params()).unwrap();
        assert_eq!(gp.game.social_cost(&gp.initial).unwrap(), 1696);
    }

    #[test]
    fn optimum_is_certified_and_matches_analytic_value() {
        let params = reference_params();
        let gp = build_gprime(&params).unwrap();
        let opt = gprime_opt(&gp);
        assert!(opt.is_exact(), "isolation bound should certify the optimum");
        assert_eq!(opt.value(), params.analytic_opt());
        assert_eq!(opt.value(), 1536);
    }

    #[test]
    fn schedule_moves_every_player_at_most_beta_times() {
        let gp = build_gprime(&reference_params()).unwrap();
        let schedule = build_algorithm1_schedule(&gp.layout);
        assert_eq!(schedule.len(), 1088);
        let mut counts = vec![0usize; gp.game.n()];
        for &(p, _) in &schedule {
            counts[p] += 1;
        }
        for (p, &c) in counts.iter().enumerate() {
            assert!(c >= 1, "player {p} never moves");
            assert!(c <= 16, "player {p} moves {c} > beta times");
            match gp.layout.info(p).role {
                Role::P => assert_eq!(c, 16),
                Role::Q | Role::R => assert_eq!(c, 8),
            }
        }
    }

    #[test]
    fn q_moves_precede_p_moves_on_even_steps() {
        let gp = build_gprime(&reference_params()).unwrap();
        let schedule = build_algorithm1_schedule(&gp.layout);
        // Find the first even-alpha segment of the level-0 block: all Q
        // moves must come before any P move with that target.
        let q0 = gp.layout.player(0, 1, 1, Role::Q);
        let p0 = gp.layout.player(0, 1, 1, Role::P);
        let first_q2 = schedule
            .iter()
            .position(|&(p, s)| p == q0 && s == 2)
            .unwrap();
        let first_p2 = schedule
            .iter()
            .position(|&(p, s)| p == p0 && s == 2)
            .unwrap();
        assert!(first_q2 < first_p2);
    }

    #[test]
    fn replay_is_all_indifferent_and_claims_hold() {
        let gp = build_gprime(&reference_params()).unwrap();
        let schedule = build_algorithm1_schedule(&gp.layout);
        let trace = run_dynamics(
            &gp.game,
            &gp.initial,
            &SchedulePolicy::Scripted {
                moves: schedule,
                t: None,
            },
            1,
            Mode::Permissive,
        )
        .unwrap();
        for record in &trace.moves {
            assert_eq!(record.flag, MoveFlag::Indifferent, "step {}", record.step);
            assert_eq!(record.pre_cost, record.post_cost);
        }
        let report = verify_blocking_claims(&gp, &trace).unwrap();
        assert_eq!(report.p_moves, 544);
        assert!(report.deviations_checked > 0);
        assert!(report.blocked_s0_checked > 0);

        // P moves hold the proposition delay per level: 160 and 10.
        for record in &trace.moves {
            let info = gp.layout.info(record.player);
            if info.role == Role::P {
                let expected = if info.level == 0 { 160 } else { 10 };
                assert_eq!(record.pre_cost, expected);
            }
        }
    }

    #[test]
    fn trajectory_stays_above_floor() {
        let gp = build_gprime(&reference_params()).unwrap();
        let schedule = build_algorithm1_schedule(&gp.layout);
        let trace = run_dynamics(
            &gp.game,
            &gp.initial,
            &SchedulePolicy::Scripted {
                moves: schedule,
                t: None,
            },
            1,
            Mode::Permissive,
        )
        .unwrap();
        let opt = gprime_opt(&gp);
        let report = ratio_trajectory(&gp, &trace, &opt).unwrap();
        assert_eq!(report.floor, ExactRatio::new(1, 3));
        assert!(report.ok, "min ratio {} below floor", report.min_ratio);
        // The run keeps the cost at roughly the initial level.
        assert!(report.min_ratio > ExactRatio::new(1, 1));
    }

    #[test]
    fn whole_run_is_one_fair_covering() {
        let gp = build_gprime(&reference_params()).unwrap();
        let schedule = build_algorithm1_schedule(&gp.layout);
        let trace = run_dynamics(
            &gp.game,
            &gp.initial,
            &SchedulePolicy::Scripted {
                moves: schedule,
                t: None,
            },
            1,
            Mode::Permissive,
        )
        .unwrap();
        let report =
            validate_fairness(&trace, gp.game.n(), &FairnessSpec::new(1088, 16)).unwrap();
        assert!(report.is_valid(), "{report:?}");
    }

    #[test]
    fn padded_schedule_forms_live_coverings() {
        let gp = build_gprime(&reference_params()).unwrap();
        let schedule = build_algorithm1_schedule(&gp.layout);
        let (padded, spec) = fair_schedule(&gp, &schedule, 4).unwrap();
        let trace = run_dynamics(
            &gp.game,
            &gp.initial,
            &SchedulePolicy::Scripted {
                moves: padded,
                t: Some(spec.t),
            },
            4,
            Mode::Permissive,
        )
        .unwrap();
        let report = validate_fairness(&trace, gp.game.n(), &spec).unwrap();
        assert!(report.is_valid(), "{:?}", report.violations);
    }

    #[test]
    fn corollary_parameters_target_square_root() {
        let params = corollary_params(256).unwrap();
        assert_eq!(params.beta, 16);
        assert_eq!(params.levels, 1);
        assert_eq!(params.m, 256);
        // Optimum value of the corollary instance: 6m.
        assert_eq!(params.analytic_opt(), 6 * params.m);
    }
}
