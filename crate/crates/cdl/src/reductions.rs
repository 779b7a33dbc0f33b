//! Cost- and best-response-preserving reductions to identity-delay games.
//!
//! Any affine congestion game maps to one where every delay is `f(x) = x`:
//! a resource `e` with delay `a_e x + b_e` becomes a set `A_e` of `a_e`
//! shared resources plus, for each player `i` (or strategy copy, in the
//! symmetric variant), a private set `B^i_e` of `b_e` resources. A strategy
//! containing `e` expands to all of `A_e` and its own `B` set, so on `A_e`
//! the player pays `a_e * n_e` and on its private set `b_e`, reproducing the
//! source cost exactly. The profile mapping `g` is index-preserving, costs
//! and best responses correspond move for move, and the Rosenthal potential
//! is preserved as well.
//!
//! The symmetric variant keeps the target symmetric by giving every player
//! all `n` private copies of every strategy; mapped profiles put player `i`
//! on copy `i`, which keeps the copies' private resources at congestion one
//! along any mapped dynamics.
//!
//! [`verify_reduction`] replays random best-response dynamics in source and
//! target in lockstep and cross-checks costs, best-response existence and
//! equilibrium agreement at every visited state.

use crate::game::{
    CongestionGame, Delay, GameError, ResourceId, Strategy, StrategyProfile, TiePolicy,
};
use crate::rng::Rng;
use num_integer::Integer;
use num_rational::Ratio;
use thiserror::Error;

/// Default cap on the number of target resources; the expansion size is
/// `sum_e (a_e + n*b_e)` and can explode on large coefficients.
pub const DEFAULT_RESOURCE_CAP: u64 = 1_000_000;

#[derive(Debug, Error)]
pub enum ReductionError {
    #[error(transparent)]
    Game(#[from] GameError),
    #[error("symmetric reduction requires a symmetric source game")]
    NotSymmetric,
    #[error("identity expansion needs {resources} resources, above the cap {cap}")]
    TargetTooLarge { resources: u64, cap: u64 },
    #[error("lockstep mismatch at step {step}, player {player}: {description}")]
    Mismatch {
        step: usize,
        player: usize,
        description: String,
    },
}

/// Where a target resource came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ProvenanceKind {
    /// One of the `a_e` shared copies.
    Slope { copy: u64 },
    /// One of the `b_e` private copies; `slot` is the owning player in the
    /// asymmetric reduction and the strategy-copy index in the symmetric one.
    Offset { slot: usize, copy: u64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ResourceProvenance {
    pub source: ResourceId,
    pub kind: ProvenanceKind,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum ReductionKind {
    Asymmetric,
    Symmetric,
}

/// A built reduction: the two games, the per-player strategy index mapping,
/// and the provenance of every target resource.
#[derive(Clone, Debug)]
pub struct ReductionMap {
    pub source: CongestionGame,
    pub target: CongestionGame,
    /// `strategy_map[i][k]` is the target index of player `i`'s source
    /// strategy `k`.
    pub strategy_map: Vec<Vec<usize>>,
    pub provenance: Vec<ResourceProvenance>,
    kind: ReductionKind,
}

impl ReductionMap {
    /// The injective profile mapping `g`.
    pub fn map_profile(&self, profile: &StrategyProfile) -> StrategyProfile {
        StrategyProfile::new(
            profile
                .choices()
                .iter()
                .enumerate()
                .map(|(i, &k)| self.strategy_map[i][k])
                .collect(),
        )
    }

    pub fn is_symmetric_reduction(&self) -> bool {
        self.kind == ReductionKind::Symmetric
    }
}

/// Asymmetric identity reduction: strategy indices carry over unchanged.
pub fn reduce_to_identity(game: &CongestionGame) -> Result<ReductionMap, ReductionError> {
    reduce_to_identity_with_cap(game, DEFAULT_RESOURCE_CAP)
}

pub fn reduce_to_identity_with_cap(
    game: &CongestionGame,
    cap: u64,
) -> Result<ReductionMap, ReductionError> {
    let n = game.n();
    let expansion = expansion_layout(game, n, cap)?;
    let strategy_sets: Vec<Vec<Strategy>> = (0..n)
        .map(|player| {
            game.strategies(player)
                .iter()
                .map(|s| expansion.expand(s, player))
                .collect()
        })
        .collect();
    let target = CongestionGame::new_allowing_empty(
        vec![Delay::IDENTITY; expansion.provenance.len()],
        strategy_sets,
    )?;
    let strategy_map = (0..n)
        .map(|player| (0..game.strategies(player).len()).collect())
        .collect();
    Ok(ReductionMap {
        source: game.clone(),
        target,
        strategy_map,
        provenance: expansion.provenance,
        kind: ReductionKind::Asymmetric,
    })
}

/// Symmetric identity reduction: every source strategy gets `n` private
/// copies shared by all players, and `g` sends player `i` to copy `i`.
pub fn reduce_to_identity_symmetric(
    game: &CongestionGame,
) -> Result<ReductionMap, ReductionError> {
    reduce_to_identity_symmetric_with_cap(game, DEFAULT_RESOURCE_CAP)
}

pub fn reduce_to_identity_symmetric_with_cap(
    game: &CongestionGame,
    cap: u64,
) -> Result<ReductionMap, ReductionError> {
    if !game.is_symmetric() {
        return Err(ReductionError::NotSymmetric);
    }
    let n = game.n();
    let expansion = expansion_layout(game, n, cap)?;
    // The shared strategy list comes from player 0; other players' indices
    // are translated by strategy equality.
    let shared: &[Strategy] = game.strategies(0);
    let mut target_strategies = Vec::with_capacity(shared.len() * n);
    for source_strategy in shared {
        for copy in 0..n {
            target_strategies.push(expansion.expand(source_strategy, copy));
        }
    }
    let strategy_map: Vec<Vec<usize>> = (0..n)
        .map(|player| {
            game.strategies(player)
                .iter()
                .map(|s| {
                    let q = shared
                        .iter()
                        .position(|t| t == s)
                        .expect("symmetric game: strategy present in shared set");
                    q * n + player
                })
                .collect()
        })
        .collect();
    let target = CongestionGame::new_allowing_empty(
        vec![Delay::IDENTITY; expansion.provenance.len()],
        vec![target_strategies; n],
    )?;
    debug_assert!(target.is_symmetric());
    Ok(ReductionMap {
        source: game.clone(),
        target,
        strategy_map,
        provenance: expansion.provenance,
        kind: ReductionKind::Symmetric,
    })
}

struct Expansion {
    /// Per source resource: first id of its `A` block.
    slope_offset: Vec<usize>,
    /// Per source resource: first id of its `B` blocks, `slots` blocks of
    /// `b_e` resources each.
    offset_offset: Vec<usize>,
    provenance: Vec<ResourceProvenance>,
    slots: usize,
}

impl Expansion {
    fn expand(&self, strategy: &Strategy, slot: usize) -> Strategy {
        let mut out = Vec::new();
        for &e in strategy {
            let a_start = self.slope_offset[e];
            let b_start = self.offset_offset[e];
            let end = self
                .slope_offset
                .get(e + 1)
                .copied()
                .unwrap_or(self.provenance.len());
            let b_len = (end - b_start) / self.slots;
            out.extend(a_start..b_start);
            let base = b_start + slot * b_len;
            out.extend(base..base + b_len);
        }
        out
    }
}

fn expansion_layout(
    game: &CongestionGame,
    slots: usize,
    cap: u64,
) -> Result<Expansion, ReductionError> {
    let total: u64 = game
        .delays()
        .iter()
        .map(|d| d.a + slots as u64 * d.b)
        .sum();
    if total > cap {
        return Err(ReductionError::TargetTooLarge {
            resources: total,
            cap,
        });
    }
    let mut slope_offset = Vec::with_capacity(game.resource_count());
    let mut offset_offset = Vec::with_capacity(game.resource_count());
    let mut provenance = Vec::with_capacity(total as usize);
    for (e, d) in game.delays().iter().enumerate() {
        slope_offset.push(provenance.len());
        for copy in 0..d.a {
            provenance.push(ResourceProvenance {
                source: e,
                kind: ProvenanceKind::Slope { copy },
            });
        }
        offset_offset.push(provenance.len());
        for slot in 0..slots {
            for copy in 0..d.b {
                provenance.push(ResourceProvenance {
                    source: e,
                    kind: ProvenanceKind::Offset { slot, copy },
                });
            }
        }
    }
    Ok(Expansion {
        slope_offset,
        offset_offset,
        provenance,
        slots,
    })
}

/// Nonnegative rational delay coefficients, as parsed from instance files.
pub type RationalDelay = (Ratio<u64>, Ratio<u64>);

/// Clears rational coefficients by the least common multiple of all
/// denominators. Every cost scales by exactly the returned factor, so
/// argmin sets of best responses are unchanged.
pub fn scale_delays(delays: &[RationalDelay]) -> (Vec<Delay>, u64) {
    let factor = delays.iter().fold(1u64, |acc, (a, b)| {
        acc.lcm(a.denom()).lcm(b.denom())
    });
    let scaled = delays
        .iter()
        .map(|(a, b)| {
            Delay::new(
                a.numer() * (factor / a.denom()),
                b.numer() * (factor / b.denom()),
            )
        })
        .collect();
    (scaled, factor)
}

/// Outcome of a lockstep verification run.
#[derive(Clone, Debug, Default)]
pub struct LockstepReport {
    pub steps: usize,
    pub improving_moves: usize,
    pub equilibria_visited: usize,
}

/// Replays seeded random best-response dynamics on the source and its image
/// in the target, asserting at every step that per-player costs agree, that
/// improving deviations exist on one side iff they exist on the other, that
/// the mapped move is a best response in the target, and (for the symmetric
/// reduction) that no private resource copy is ever shared. Whenever an
/// equilibrium is reached the walk restarts from a fresh random state.
pub fn verify_reduction(
    map: &ReductionMap,
    steps: usize,
    seed: u64,
) -> Result<LockstepReport, ReductionError> {
    let mut rng = Rng::new(seed);
    let source = &map.source;
    let target = &map.target;
    let n = source.n();
    let mut report = LockstepReport::default();

    let random_start = |rng: &mut Rng| {
        StrategyProfile::new(
            (0..n)
                .map(|i| rng.index(source.strategies(i).len()))
                .collect(),
        )
    };

    let mut s = random_start(&mut rng);
    for step in 0..steps {
        let gs = map.map_profile(&s);
        check_state(map, step, &s, &gs)?;
        report.steps += 1;

        // Players with an improving move in the source.
        let cv = source.congestion_vector(&s)?;
        let improvers: Vec<usize> = (0..n)
            .filter(|&i| {
                source
                    .best_response_from(&cv, &s, i, TiePolicy::KeepCurrent)
                    .map(|br| br.improving)
                    .unwrap_or(false)
            })
            .collect();
        if improvers.is_empty() {
            report.equilibria_visited += 1;
            s = random_start(&mut rng);
            continue;
        }
        let player = *rng.choose(&improvers);
        let br = source.best_response_from(&cv, &s, player, TiePolicy::KeepCurrent)?;
        // The mapped strategy must be a best response in the target.
        let target_cv = target.congestion_vector(&gs)?;
        let mapped_index = map.strategy_map[player][br.strategy];
        let current_target = target.strategy(player, gs.choice(player));
        let mapped_cost = target.deviation_cost(
            &target_cv,
            current_target,
            target.strategy(player, mapped_index),
        );
        let target_min = (0..target.strategies(player).len())
            .map(|k| {
                target.deviation_cost(&target_cv, current_target, target.strategy(player, k))
            })
            .min()
            .expect("nonempty strategy set");
        if mapped_cost != br.cost || mapped_cost != target_min {
            return Err(ReductionError::Mismatch {
                step,
                player,
                description: format!(
                    "source best response costs {}, its image costs {} while the target minimum is {}",
                    br.cost, mapped_cost, target_min
                ),
            });
        }
        report.improving_moves += 1;
        s = s.with_choice(player, br.strategy);
    }
    // Equilibrium agreement at the final state.
    let gs = map.map_profile(&s);
    check_state(map, steps, &s, &gs)?;
    Ok(report)
}

fn check_state(
    map: &ReductionMap,
    step: usize,
    s: &StrategyProfile,
    gs: &StrategyProfile,
) -> Result<(), ReductionError> {
    let source = &map.source;
    let target = &map.target;
    let cv = source.congestion_vector(s)?;
    let tcv = target.congestion_vector(gs)?;
    let social_source = source.social_cost_from(&cv);
    let social_target = target.social_cost_from(&tcv);
    if social_source != social_target {
        return Err(ReductionError::Mismatch {
            step,
            player: usize::MAX,
            description: format!(
                "social cost {social_source} in source vs {social_target} in target"
            ),
        });
    }
    for i in 0..source.n() {
        let c_s = source.cost_on(&cv, source.strategy(i, s.choice(i)));
        let c_t = target.cost_on(&tcv, target.strategy(i, gs.choice(i)));
        if c_s != c_t {
            return Err(ReductionError::Mismatch {
                step,
                player: i,
                description: format!("player cost {c_s} in source vs {c_t} in target"),
            });
        }
        // Improving-deviation existence must agree.
        let src_min = source
            .strategies(i)
            .iter()
            .map(|cand| source.deviation_cost(&cv, source.strategy(i, s.choice(i)), cand))
            .min()
            .expect("nonempty");
        let tgt_min = target
            .strategies(i)
            .iter()
            .map(|cand| target.deviation_cost(&tcv, target.strategy(i, gs.choice(i)), cand))
            .min()
            .expect("nonempty");
        if (src_min < c_s) != (tgt_min < c_t) {
            return Err(ReductionError::Mismatch {
                step,
                player: i,
                description: format!(
                    "improvement exists mismatch: source min {src_min} vs cost {c_s}, target min {tgt_min} vs cost {c_t}"
                ),
            });
        }
    }
    if map.kind == ReductionKind::Symmetric {
        // No two players may share a private copy in a mapped state.
        for (r, p) in map.provenance.iter().enumerate() {
            if matches!(p.kind, ProvenanceKind::Offset { .. }) && tcv.get(r) > 1 {
                return Err(ReductionError::Mismatch {
                    step,
                    player: usize::MAX,
                    description: format!(
                        "private resource {r} (source {}) carries congestion {}",
                        p.source,
                        tcv.get(r)
                    ),
                });
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_resource_expansion_costs() {
        // One resource with delay 2x + 1, two players, player 0 alone on it.
        let g = CongestionGame::new(
            vec![Delay::new(2, 1)],
            vec![vec![vec![0]], vec![vec![0]]],
        )
        .unwrap();
        let map = reduce_to_identity(&g).unwrap();
        // 2 shared + 2 * 1 private resources.
        assert_eq!(map.target.resource_count(), 4);
        assert!(map.target.is_identity());
        let s = StrategyProfile::new(vec![0, 0]);
        let gs = map.map_profile(&s);
        // Both on the shared pair: 2 + 2 each, plus a private unit each.
        assert_eq!(g.player_cost(&s, 0).unwrap(), 5);
        assert_eq!(map.target.player_cost(&gs, 0).unwrap(), 5);
        assert_eq!(
            g.social_cost(&s).unwrap(),
            map.target.social_cost(&gs).unwrap()
        );
    }

    #[test]
    fn lone_player_cost_matches() {
        // (a=2, b=1): source cost 3 for a lone player; the image pays two
        // shared copies at congestion 1 plus one private unit.
        let g = CongestionGame::new(
            vec![Delay::new(2, 1), Delay::IDENTITY],
            vec![vec![vec![0]], vec![vec![1]]],
        )
        .unwrap();
        let map = reduce_to_identity(&g).unwrap();
        let s = StrategyProfile::new(vec![0, 0]);
        assert_eq!(g.player_cost(&s, 0).unwrap(), 3);
        assert_eq!(
            map.target
                .player_cost(&map.map_profile(&s), 0)
                .unwrap(),
            3
        );
    }

    #[test]
    fn potential_is_preserved() {
        let g = CongestionGame::new(
            vec![Delay::new(2, 1), Delay::new(0, 3), Delay::new(1, 2)],
            vec![
                vec![vec![0, 1], vec![2]],
                vec![vec![0], vec![1, 2]],
                vec![vec![0, 2], vec![1]],
            ],
        )
        .unwrap();
        let map = reduce_to_identity(&g).unwrap();
        for a in 0..2 {
            for b in 0..2 {
                for c in 0..2 {
                    let s = StrategyProfile::new(vec![a, b, c]);
                    assert_eq!(
                        g.potential(&s).unwrap(),
                        map.target.potential(&map.map_profile(&s)).unwrap()
                    );
                }
            }
        }
    }

    #[test]
    fn blowup_guard_refuses() {
        let g = CongestionGame::new(
            vec![Delay::new(1000, 1000)],
            vec![vec![vec![0]]; 3],
        )
        .unwrap();
        let err = reduce_to_identity_with_cap(&g, 100).unwrap_err();
        assert!(matches!(err, ReductionError::TargetTooLarge { resources: 4000, cap: 100 }));
    }

    #[test]
    fn symmetric_reduction_keeps_symmetry_and_copies() {
        let g = CongestionGame::new(
            vec![Delay::new(1, 1), Delay::new(2, 0)],
            vec![vec![vec![0], vec![1], vec![0, 1]]; 2],
        )
        .unwrap();
        let map = reduce_to_identity_symmetric(&g).unwrap();
        assert!(map.target.is_symmetric());
        assert_eq!(map.target.strategies(0).len(), 6);
        let s = StrategyProfile::new(vec![2, 0]);
        let gs = map.map_profile(&s);
        for i in 0..2 {
            assert_eq!(
                g.player_cost(&s, i).unwrap(),
                map.target.player_cost(&gs, i).unwrap()
            );
        }
    }

    #[test]
    fn symmetric_reduction_without_offsets_degenerates_to_copies() {
        let g = CongestionGame::new(
            vec![Delay::new(2, 0), Delay::new(1, 0)],
            vec![vec![vec![0], vec![1]]; 2],
        )
        .unwrap();
        let map = reduce_to_identity_symmetric(&g).unwrap();
        // No b coefficients: all n copies of a strategy are identical.
        assert_eq!(
            map.target.strategy(0, 0),
            map.target.strategy(0, 1)
        );
        verify_reduction(&map, 200, 5).unwrap();
    }

    #[test]
    fn symmetric_reduction_rejects_asymmetric_source() {
        let g = CongestionGame::new(
            vec![Delay::IDENTITY, Delay::IDENTITY],
            vec![vec![vec![0]], vec![vec![1]]],
        )
        .unwrap();
        assert!(matches!(
            reduce_to_identity_symmetric(&g),
            Err(ReductionError::NotSymmetric)
        ));
    }

    #[test]
    fn scaling_clears_denominators() {
        let (scaled, factor) = scale_delays(&[(Ratio::new(1, 2), Ratio::new(1, 3))]);
        assert_eq!(factor, 6);
        assert_eq!(scaled, vec![Delay::new(3, 2)]);

        let (scaled, factor) = scale_delays(&[
            (Ratio::from_integer(2), Ratio::from_integer(5)),
            (Ratio::from_integer(0), Ratio::from_integer(1)),
        ]);
        assert_eq!(factor, 1);
        assert_eq!(scaled, vec![Delay::new(2, 5), Delay::new(0, 1)]);
    }

    #[test]
    fn lockstep_verification_passes_on_a_mixed_game() {
        let g = CongestionGame::new(
            vec![Delay::new(1, 2), Delay::new(3, 0), Delay::new(0, 1)],
            vec![
                vec![vec![0], vec![1, 2]],
                vec![vec![0, 1], vec![2]],
                vec![vec![1], vec![0, 2], vec![2]],
            ],
        )
        .unwrap();
        let map = reduce_to_identity(&g).unwrap();
        let report = verify_reduction(&map, 500, 11).unwrap();
        assert_eq!(report.steps, 500);
        assert!(report.improving_moves > 0);
        assert!(report.equilibria_visited > 0);
    }

    #[test]
    fn single_player_lockstep_is_trivially_clean() {
        let g = CongestionGame::new(
            vec![Delay::new(2, 2)],
            vec![vec![vec![0]]],
        )
        .unwrap();
        let map = reduce_to_identity(&g).unwrap();
        verify_reduction(&map, 50, 1).unwrap();
    }
}
