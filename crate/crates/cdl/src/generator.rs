//! Seeded random game instances.

use crate::game::{CongestionGame, Delay, Strategy, StrategyProfile};
use crate::rng::Rng;

/// Shape of a random instance.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RandomGameSpec {
    pub n: usize,
    pub m: usize,
    pub max_strategies: usize,
    pub max_strategy_size: usize,
    /// Coefficients are drawn from `0..=coeff_max` with `a + b >= 1`.
    pub coeff_max: u64,
    pub symmetric: bool,
    /// Force identity delays `f(x) = x`.
    pub identity: bool,
}

impl Default for RandomGameSpec {
    fn default() -> Self {
        RandomGameSpec {
            n: 4,
            m: 6,
            max_strategies: 4,
            max_strategy_size: 3,
            coeff_max: 2,
            symmetric: false,
            identity: false,
        }
    }
}

/// Deterministic instance generation: equal `(spec, seed)` pairs produce
/// equal games.
pub fn random_game(spec: &RandomGameSpec, seed: u64) -> CongestionGame {
    assert!(spec.n >= 1 && spec.m >= 1);
    assert!(spec.max_strategies >= 1 && spec.max_strategy_size >= 1);
    let mut rng = Rng::new(seed);
    let delays: Vec<Delay> = (0..spec.m)
        .map(|_| {
            if spec.identity {
                Delay::IDENTITY
            } else {
                loop {
                    let a = rng.below(spec.coeff_max + 1);
                    let b = rng.below(spec.coeff_max + 1);
                    if a + b >= 1 {
                        return Delay::new(a, b);
                    }
                }
            }
        })
        .collect();

    let strategy_set = |rng: &mut Rng| -> Vec<Strategy> {
        let count = 1 + rng.index(spec.max_strategies);
        let mut set: Vec<Strategy> = Vec::with_capacity(count);
        // A handful of attempts per slot; collisions simply shrink the set.
        for _ in 0..count * 4 {
            if set.len() == count {
                break;
            }
            let size = 1 + rng.index(spec.max_strategy_size.min(spec.m));
            let mut pool: Vec<usize> = (0..spec.m).collect();
            rng.shuffle(&mut pool);
            let mut s: Strategy = pool.into_iter().take(size).collect();
            s.sort_unstable();
            if !set.contains(&s) {
                set.push(s);
            }
        }
        set
    };

    let strategy_sets: Vec<Vec<Strategy>> = if spec.symmetric {
        let shared = strategy_set(&mut rng);
        vec![shared; spec.n]
    } else {
        (0..spec.n).map(|_| strategy_set(&mut rng)).collect()
    };
    CongestionGame::new(delays, strategy_sets).expect("generated game is valid")
}

pub fn random_profile(game: &CongestionGame, rng: &mut Rng) -> StrategyProfile {
    StrategyProfile::new(
        (0..game.n())
            .map(|i| rng.index(game.strategies(i).len()))
            .collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_deterministic() {
        let spec = RandomGameSpec::default();
        assert_eq!(random_game(&spec, 7), random_game(&spec, 7));
        assert_ne!(random_game(&spec, 7), random_game(&spec, 8));
    }

    #[test]
    fn symmetric_games_share_strategy_sets() {
        let spec = RandomGameSpec {
            symmetric: true,
            ..Default::default()
        };
        let g = random_game(&spec, 3);
        assert!(g.is_symmetric());
    }

    #[test]
    fn no_zero_delay_resources_by_default() {
        let g = random_game(&RandomGameSpec::default(), 11);
        for d in g.delays() {
            assert!(d.a + d.b >= 1);
        }
    }
}
