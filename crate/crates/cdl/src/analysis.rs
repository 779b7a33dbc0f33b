//! Optimum certificates, per-covering functionals and inequality checks.
//!
//! For a covering `R = (S^0, ..., S^T)` of a best-response dynamics and a
//! reference profile `S*` (ideally the social optimum), three functionals
//! summarize the covering:
//!
//! * `rho(R)   = sum_i sum_{e in s*_i} (n_e(S^{last(i)-1}) + 1)`
//! * `H(R)     = sum_i sum_{e in s*_i} n_e(S^0) = sum_e n_e(S^0) n_e(S*)`
//! * `Gamma(R) = (1/n) sum_i sum_e n_e(S*) f_e(n_e(S^{last(i)-1}) + 1)`
//!
//! where `last(i)` is the in-covering index of player `i`'s last move. The
//! count-based `rho` and `H` quantify coverings of games with identity
//! delays `f(x) = x`; [`check_lemma_suite`] transparently maps games with
//! general affine delays through the identity reduction before evaluating
//! them. `Gamma` carries the delay functions explicitly and applies to any
//! symmetric affine game.
//!
//! The checked inequalities are mathematical theorems for every covering of
//! every strict best-response dynamics, so a single violation is a fatal
//! correctness finding, never tolerable noise. All comparisons are exact:
//! ratios are rationals, and square-root bounds are compared by squaring
//! both sides in integer arithmetic.
//!
//! Every inequality remains valid when `S*` is only an upper-bound profile
//! (each proof bounds deviations against a fixed available strategy), so a
//! heuristic optimum still yields sound checks; reports are then marked
//! advisory because the approximation-ratio column is only a lower bound.

use crate::dynamics::{validate_fairness, DynamicsError, FairnessSpec, MoveTrace};
use crate::game::{CongestionGame, CongestionVector, GameError, StrategyProfile, TiePolicy};
use crate::reductions::{reduce_to_identity, ReductionError};
use crate::rng::Rng;
use num_rational::Ratio;
use thiserror::Error;

/// Exact rational used for approximation ratios and `Gamma`.
pub type ExactRatio = Ratio<i128>;

/// Default cap on exhaustive optimum enumeration; the `CDL_BUDGET`
/// environment variable overrides it in the command-line tool.
pub const DEFAULT_OPT_BUDGET: u64 = 20_000_000;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error(transparent)]
    Game(#[from] GameError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Reduction(#[from] ReductionError),
    #[error("profile space {space} exceeds the enumeration budget {budget}; raise the budget or use heuristic_opt")]
    BudgetExceeded { space: u64, budget: u64 },
    #[error("covering {covering} violates liveness: player {player} never moves, last-move functionals are undefined")]
    LivenessViolated { covering: usize, player: usize },
    #[error("trace is not a valid (T={t}, beta={beta}) fair dynamics: {details}")]
    UnfairTrace {
        t: usize,
        beta: usize,
        details: String,
    },
    #[error("Gamma is defined for symmetric games only")]
    NotSymmetric,
    #[error("covering index {index} out of range ({coverings} coverings)")]
    BadCovering { index: usize, coverings: usize },
}

/// An exact social optimum, produced by exhaustive enumeration (or, for
/// structured instances, by a matching lower-bound argument).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OptimumCertificate {
    pub profile: StrategyProfile,
    pub value: u64,
    /// Number of profiles enumerated to establish optimality (0 when the
    /// certificate comes from an analytic argument instead).
    pub explored: u64,
}

/// An upper bound on the optimum; `exact` is always false, the bound-only
/// nature travels with the value.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CostBound {
    pub profile: StrategyProfile,
    pub value: u64,
    pub exact: bool,
}

/// Exhaustive search for the social optimum.
///
/// Profiles are enumerated in mixed-radix order with the last player's
/// index moving fastest; the first profile attaining the minimum is kept,
/// which makes the returned certificate deterministic.
pub fn compute_opt(game: &CongestionGame, budget: u64) -> Result<OptimumCertificate, AnalysisError> {
    let space = game.profile_space();
    if space > budget {
        return Err(AnalysisError::BudgetExceeded { space, budget });
    }
    let n = game.n();
    let mut choices = vec![0usize; n];
    let mut cv = game.congestion_vector(&StrategyProfile::new(choices.clone()))?;
    let mut cost = game.social_cost_from(&cv);
    let mut best_cost = cost;
    let mut best = choices.clone();
    let mut explored = 1u64;

    // Resource-level delta update: moving one player from `old` to `new`.
    let switch = |cv: &mut CongestionVector, cost: &mut u64, player: usize, old: usize, new: usize| {
        for &e in game.strategy(player, old) {
            let x = cv.get(e);
            *cost -= x * game.delay(e).eval(x);
            *cost += (x - 1) * game.delay(e).eval(x - 1);
        }
        cv.remove_strategy(game.strategy(player, old));
        for &e in game.strategy(player, new) {
            let x = cv.get(e);
            *cost -= x * game.delay(e).eval(x);
            *cost += (x + 1) * game.delay(e).eval(x + 1);
        }
        cv.add_strategy(game.strategy(player, new));
    };

    'outer: loop {
        // Advance the odometer.
        let mut p = n;
        loop {
            if p == 0 {
                break 'outer;
            }
            p -= 1;
            let len = game.strategies(p).len();
            if choices[p] + 1 < len {
                switch(&mut cv, &mut cost, p, choices[p], choices[p] + 1);
                choices[p] += 1;
                break;
            }
            switch(&mut cv, &mut cost, p, choices[p], 0);
            choices[p] = 0;
        }
        explored += 1;
        if cost < best_cost {
            best_cost = cost;
            best = choices.clone();
        }
    }
    Ok(OptimumCertificate {
        profile: StrategyProfile::new(best),
        value: best_cost,
        explored,
    })
}

/// Best-response descent from seeded random starts, returning the cheapest
/// state visited anywhere along the walks. Only an upper bound on the
/// optimum.
pub fn heuristic_opt(game: &CongestionGame, seed: u64) -> CostBound {
    const STARTS: usize = 8;
    let mut rng = Rng::new(seed);
    let n = game.n();
    let mut best: Option<(u64, StrategyProfile)> = None;
    for _ in 0..STARTS {
        let choices: Vec<usize> = (0..n)
            .map(|i| rng.index(game.strategies(i).len()))
            .collect();
        let mut profile = StrategyProfile::new(choices);
        let mut cv = game
            .congestion_vector(&profile)
            .expect("generated profile is valid");
        loop {
            let cost = game.social_cost_from(&cv);
            if best.as_ref().map_or(true, |(b, _)| cost < *b) {
                best = Some((cost, profile.clone()));
            }
            let mut improved = false;
            for player in 0..n {
                let br = game
                    .best_response_from(&cv, &profile, player, TiePolicy::KeepCurrent)
                    .expect("valid profile");
                if br.improving {
                    cv.remove_strategy(game.strategy(player, profile.choice(player)));
                    cv.add_strategy(game.strategy(player, br.strategy));
                    profile = profile.with_choice(player, br.strategy);
                    improved = true;
                }
            }
            if !improved {
                break;
            }
        }
        let cost = game.social_cost_from(&cv);
        if best.as_ref().map_or(true, |(b, _)| cost < *b) {
            best = Some((cost, profile.clone()));
        }
    }
    let (value, profile) = best.expect("at least one start");
    CostBound {
        profile,
        value,
        exact: false,
    }
}

/// `sum_i min_s sum_{e in s} f_e(1)`: every player pays at least its
/// cheapest strategy evaluated at congestion 1, so this is a lower bound on
/// the optimum of any congestion game with nondecreasing delays. When some
/// profile attains it, that profile is certifiably optimal.
pub fn isolation_lower_bound(game: &CongestionGame) -> u64 {
    (0..game.n())
        .map(|i| {
            game.strategies(i)
                .iter()
                .map(|s| s.iter().map(|&e| game.delay(e).eval(1)).sum::<u64>())
                .min()
                .expect("nonempty strategy set")
        })
        .sum()
}

/// A unilateral improving deviation, the witness that a profile is not a
/// Nash equilibrium.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DeviationWitness {
    pub player: usize,
    pub strategy: usize,
    pub current_cost: u64,
    pub better_cost: u64,
}

/// Checks all unilateral deviations.
pub fn is_nash(
    game: &CongestionGame,
    profile: &StrategyProfile,
) -> Result<Option<DeviationWitness>, GameError> {
    let cv = game.congestion_vector(profile)?;
    for player in 0..game.n() {
        let br = game.best_response_from(&cv, profile, player, TiePolicy::KeepCurrent)?;
        if br.improving {
            let current_cost =
                game.cost_on(&cv, game.strategy(player, profile.choice(player)));
            return Ok(Some(DeviationWitness {
                player,
                strategy: br.strategy,
                current_cost,
                better_cost: br.cost,
            }));
        }
    }
    Ok(None)
}

/// Per-covering raw quantities against a fixed reference profile.
#[derive(Clone, Debug)]
pub struct CoveringFunctionals {
    pub covering: usize,
    pub c_start: u64,
    pub c_end: u64,
    pub phi_start: u64,
    pub phi_end: u64,
    /// `rho(R)`, count form.
    pub rho: u64,
    /// `H(R)`, per-player double sum.
    pub h: u64,
    /// `sum_e n_e(S^0) n_e(S*)`, the inverted-summation form of `H(R)`.
    pub h_resource_form: u64,
    /// `n * Gamma(R)` as an integer (delay-weighted form).
    pub gamma_times_n: u64,
    /// `sum_e n_e(S^T) n_e(S*)`.
    pub mix_end: u64,
    /// `sum_i c_i(S^{last(i)})`, the immediate costs after last moves.
    pub immediate_total: u64,
}

/// Walks a trace once and evaluates all covering functionals with respect to
/// `reference`. Requires liveness in every covering.
pub fn covering_functionals(
    game: &CongestionGame,
    trace: &MoveTrace,
    reference: &StrategyProfile,
) -> Result<Vec<CoveringFunctionals>, AnalysisError> {
    if trace.t == 0 || trace.moves.len() % trace.t != 0 {
        return Err(DynamicsError::NotCoverable {
            len: trace.moves.len(),
            t: trace.t,
        }
        .into());
    }
    game.validate_profile(reference)?;
    let n = game.n();
    let ref_cv = game.congestion_vector(reference)?;
    // Resources that matter for Gamma and the mixing sums.
    let ref_support: Vec<(usize, u64)> = ref_cv
        .counts()
        .iter()
        .enumerate()
        .filter(|(_, &c)| c > 0)
        .map(|(e, &c)| (e, c))
        .collect();

    let mut cv = game.congestion_vector(&trace.initial)?;
    let mut profile = trace.initial.clone();
    let mut out = Vec::with_capacity(trace.num_coverings());

    for (covering, chunk) in trace.moves.chunks(trace.t).enumerate() {
        // Last in-covering move index per player.
        let mut last = vec![None; n];
        for (offset, record) in chunk.iter().enumerate() {
            last[record.player] = Some(offset);
        }
        if let Some(player) = (0..n).find(|&i| last[i].is_none()) {
            return Err(AnalysisError::LivenessViolated { covering, player });
        }

        let c_start = game.social_cost_from(&cv);
        let phi_start = game.potential_from(&cv);
        let h: u64 = (0..n)
            .map(|i| {
                game.strategy(i, reference.choice(i))
                    .iter()
                    .map(|&e| cv.get(e))
                    .sum::<u64>()
            })
            .sum();
        let h_resource_form: u64 = ref_support.iter().map(|&(e, c)| cv.get(e) * c).sum();
        assert_eq!(
            h, h_resource_form,
            "H double-sum and resource forms must agree"
        );

        let mut rho = 0u64;
        let mut gamma_times_n = 0u64;
        let mut immediate_total = 0u64;
        for (offset, record) in chunk.iter().enumerate() {
            let mover = record.player;
            if last[mover] == Some(offset) {
                // Pre-move state of the player's last move in this covering.
                rho += game
                    .strategy(mover, reference.choice(mover))
                    .iter()
                    .map(|&e| cv.get(e) + 1)
                    .sum::<u64>();
                gamma_times_n += ref_support
                    .iter()
                    .map(|&(e, c)| c * game.delay(e).eval(cv.get(e) + 1))
                    .sum::<u64>();
            }
            let old = profile.choice(mover);
            cv.remove_strategy(game.strategy(mover, old));
            cv.add_strategy(game.strategy(mover, record.strategy));
            profile = profile.with_choice(mover, record.strategy);
            if last[mover] == Some(offset) {
                immediate_total += game.cost_on(&cv, game.strategy(mover, record.strategy));
            }
        }

        let c_end = game.social_cost_from(&cv);
        let phi_end = game.potential_from(&cv);
        let mix_end: u64 = ref_support.iter().map(|&(e, c)| cv.get(e) * c).sum();
        out.push(CoveringFunctionals {
            covering,
            c_start,
            c_end,
            phi_start,
            phi_end,
            rho,
            h,
            h_resource_form,
            gamma_times_n,
            mix_end,
            immediate_total,
        });
    }
    Ok(out)
}

fn functionals_for_covering(
    game: &CongestionGame,
    trace: &MoveTrace,
    covering: usize,
    reference: &StrategyProfile,
) -> Result<CoveringFunctionals, AnalysisError> {
    let all = covering_functionals(game, trace, reference)?;
    let coverings = all.len();
    all.into_iter()
        .find(|f| f.covering == covering)
        .ok_or(AnalysisError::BadCovering {
            index: covering,
            coverings,
        })
}

/// `rho(R)` for one covering: the congestion the reference strategies would
/// see just before each player's last move, plus one for the player itself.
pub fn rho(
    game: &CongestionGame,
    trace: &MoveTrace,
    covering: usize,
    reference: &StrategyProfile,
) -> Result<u64, AnalysisError> {
    functionals_for_covering(game, trace, covering, reference).map(|f| f.rho)
}

/// `H(R)` for one covering. Both the per-player double sum and the
/// resource-form `sum_e n_e(S^0) n_e(S*)` are computed and asserted equal.
pub fn h_value(
    game: &CongestionGame,
    trace: &MoveTrace,
    covering: usize,
    reference: &StrategyProfile,
) -> Result<u64, AnalysisError> {
    functionals_for_covering(game, trace, covering, reference).map(|f| f.h)
}

/// `Gamma(R)` for one covering of a symmetric game, as an exact rational
/// with denominator `n`.
pub fn gamma(
    game: &CongestionGame,
    trace: &MoveTrace,
    covering: usize,
    reference: &StrategyProfile,
) -> Result<ExactRatio, AnalysisError> {
    if !game.is_symmetric() {
        return Err(AnalysisError::NotSymmetric);
    }
    functionals_for_covering(game, trace, covering, reference)
        .map(|f| ExactRatio::new(f.gamma_times_n as i128, game.n() as i128))
}

/// One checked inequality with both sides materialized. For square-root
/// bounds the sides are the cross-squared integer forms.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Verdict {
    pub name: &'static str,
    pub lhs: i128,
    pub rhs: i128,
    pub pass: bool,
}

impl Verdict {
    fn le(name: &'static str, lhs: i128, rhs: i128) -> Self {
        Verdict {
            name,
            lhs,
            rhs,
            pass: lhs <= rhs,
        }
    }
}

/// Everything known about one covering after the inequality suite ran.
#[derive(Clone, Debug)]
pub struct CoveringReport {
    pub covering: usize,
    pub c_start: u64,
    pub c_end: u64,
    pub phi_start: u64,
    pub phi_end: u64,
    pub rho: u64,
    /// `rho` of the previous covering, recorded because the contraction
    /// inequality relates consecutive coverings.
    pub prev_rho: Option<u64>,
    pub h: u64,
    pub gamma: Option<ExactRatio>,
    pub mix_end: u64,
    pub immediate_total: u64,
    /// `C(S^T)/OPT`; `None` when the reference value is zero.
    pub ratio_end: Option<ExactRatio>,
    /// `C(S^T) <= 2 rho(R)`.
    pub final_cost_vs_rho: Verdict,
    /// `(sum_e n_e(S^T) n_e(S*))^2 <= 2 rho(R) OPT` (cross-squared).
    pub mixing_bound: Verdict,
    /// `rho(R) <= 2 H(R) + (4 beta + 1) OPT`.
    pub rho_vs_h: Verdict,
    /// Consecutive-covering contraction
    /// `rho(R) <= 2 sqrt(2 rho(prev) OPT) + (4 beta + 1) OPT`, cross-squared.
    pub contraction: Option<Verdict>,
    /// Symmetric games: `C(S^T) <= 2 Gamma(R)` scaled by `n`.
    pub sym_final_cost_vs_gamma: Option<Verdict>,
    /// Symmetric games: `C(S^T)^2 <= (12 + 8 sqrt 2) C(S^0) OPT`,
    /// cross-squared where needed.
    pub sym_start_contraction: Option<Verdict>,
    /// `Phi <= C <= 2 Phi` at both covering boundaries.
    pub sandwich_ok: bool,
    /// True when the reference profile is only a heuristic upper bound.
    pub advisory: bool,
}

impl CoveringReport {
    /// All theorem-grade verdicts of this covering.
    pub fn verdicts(&self) -> Vec<&Verdict> {
        let mut v = vec![&self.final_cost_vs_rho, &self.mixing_bound, &self.rho_vs_h];
        if let Some(ref c) = self.contraction {
            v.push(c);
        }
        if let Some(ref c) = self.sym_final_cost_vs_gamma {
            v.push(c);
        }
        if let Some(ref c) = self.sym_start_contraction {
            v.push(c);
        }
        v
    }

    pub fn all_pass(&self) -> bool {
        self.sandwich_ok && self.verdicts().iter().all(|v| v.pass)
    }
}

/// Reference profile for the inequality suite: an exact optimum or a
/// heuristic upper bound (which downgrades reports to advisory).
#[derive(Clone, Debug)]
pub enum OptReference {
    Exact(OptimumCertificate),
    Bound(CostBound),
}

impl OptReference {
    pub fn profile(&self) -> &StrategyProfile {
        match self {
            OptReference::Exact(c) => &c.profile,
            OptReference::Bound(b) => &b.profile,
        }
    }

    pub fn value(&self) -> u64 {
        match self {
            OptReference::Exact(c) => c.value,
            OptReference::Bound(b) => b.value,
        }
    }

    pub fn is_exact(&self) -> bool {
        matches!(self, OptReference::Exact(_))
    }
}

/// Runs the full per-covering inequality suite over a fair trace.
///
/// The trace must decompose into live coverings of `spec.t` moves with no
/// player exceeding `spec.beta` moves per covering. Count-based functionals
/// are evaluated on the game itself when its delays are already the
/// identity, otherwise on its identity reduction (states map index-for-index
/// and costs are preserved, so boundary costs and ratios agree either way).
/// The delay-weighted symmetric checks run directly on symmetric games.
pub fn check_lemma_suite(
    game: &CongestionGame,
    trace: &MoveTrace,
    opt: &OptReference,
    spec: &FairnessSpec,
) -> Result<Vec<CoveringReport>, AnalysisError> {
    let fairness = validate_fairness(trace, game.n(), spec)?;
    if !fairness.is_valid() {
        return Err(AnalysisError::UnfairTrace {
            t: spec.t,
            beta: spec.beta,
            details: format!("{:?}", fairness.violations),
        });
    }
    // Re-segment the trace at the requested covering length.
    let mut segmented = trace.clone();
    segmented.t = spec.t;

    let reference = opt.profile();
    let opt_value = opt.value() as i128;
    let beta = spec.beta as i128;

    // Count-based functionals live in the identity world.
    let identity_funcs = if game.is_identity() {
        covering_functionals(game, &segmented, reference)?
    } else {
        let map = reduce_to_identity(game)?;
        // Strategy indices carry over unchanged, so the same trace and
        // reference profile replay verbatim in the target game.
        covering_functionals(&map.target, &segmented, reference)?
    };
    // Delay-weighted functionals (Gamma and boundary costs) on the source.
    let source_funcs = covering_functionals(game, &segmented, reference)?;

    let n = game.n() as i128;
    let symmetric = game.is_symmetric();
    let mut reports = Vec::with_capacity(identity_funcs.len());
    let mut prev_rho: Option<u64> = None;
    for (idf, sf) in identity_funcs.iter().zip(&source_funcs) {
        let c_end = sf.c_end as i128;
        let rho = idf.rho as i128;
        let final_cost_vs_rho = Verdict::le("C(S^T) <= 2 rho", c_end, 2 * rho);
        let mix = idf.mix_end as i128;
        let mixing_bound = Verdict::le(
            "(sum n_e n*_e)^2 <= 2 rho OPT",
            mix * mix,
            2 * rho * opt_value,
        );
        let rho_vs_h = Verdict::le(
            "rho <= 2H + (4b+1) OPT",
            rho,
            2 * idf.h as i128 + (4 * beta + 1) * opt_value,
        );
        let contraction = prev_rho.map(|pr| {
            let slack = rho - (4 * beta + 1) * opt_value;
            let rhs = 8 * pr as i128 * opt_value;
            Verdict {
                name: "rho <= 2 sqrt(2 rho_prev OPT) + (4b+1) OPT",
                lhs: slack.max(0) * slack.max(0),
                rhs,
                pass: slack <= 0 || slack * slack <= rhs,
            }
        });
        let (sym_final_cost_vs_gamma, sym_start_contraction) = if symmetric {
            let gamma_n = sf.gamma_times_n as i128;
            let l6 = Verdict::le("n C(S^T) <= 2 n Gamma", n * c_end, 2 * gamma_n);
            // C(S^T)^2 <= (12 + 8 sqrt 2) C(S^0) OPT.
            let x = c_end * c_end;
            let y = sf.c_start as i128 * opt_value;
            let d = x - 12 * y;
            let l7 = Verdict {
                name: "C(S^T)^2 <= (12+8sqrt2) C(S^0) OPT",
                lhs: d.max(0) * d.max(0),
                rhs: 128 * y * y,
                pass: d <= 0 || d * d <= 128 * y * y,
            };
            (Some(l6), Some(l7))
        } else {
            (None, None)
        };
        let sandwich_ok = sandwich_holds(sf.c_start, sf.phi_start)
            && sandwich_holds(sf.c_end, sf.phi_end);
        reports.push(CoveringReport {
            covering: idf.covering,
            c_start: sf.c_start,
            c_end: sf.c_end,
            phi_start: sf.phi_start,
            phi_end: sf.phi_end,
            rho: idf.rho,
            prev_rho,
            h: idf.h,
            gamma: symmetric
                .then(|| ExactRatio::new(sf.gamma_times_n as i128, n)),
            mix_end: idf.mix_end,
            immediate_total: idf.immediate_total,
            ratio_end: (opt_value > 0).then(|| ExactRatio::new(c_end, opt_value)),
            final_cost_vs_rho,
            mixing_bound,
            rho_vs_h,
            contraction,
            sym_final_cost_vs_gamma,
            sym_start_contraction,
            sandwich_ok,
            advisory: !opt.is_exact(),
        });
        prev_rho = Some(idf.rho);
    }
    Ok(reports)
}

#[inline]
pub fn sandwich_holds(social: u64, potential: u64) -> bool {
    potential <= social && social <= 2 * potential
}

/// Approximation ratio at every covering boundary, plus the first covering
/// whose final state is within `factor * beta` of the reference value.
#[derive(Clone, Debug)]
pub struct RatioCurve {
    /// `(covering index, C(S^T)/OPT)`; the ratio is `None` when the
    /// reference value is zero.
    pub points: Vec<(usize, Option<ExactRatio>)>,
    pub first_within_factor: Option<usize>,
}

pub fn theorem1_ratio_curve(
    game: &CongestionGame,
    trace: &MoveTrace,
    opt: &OptReference,
    spec: &FairnessSpec,
    factor: u64,
) -> Result<RatioCurve, AnalysisError> {
    let funcs = covering_functionals(game, trace, opt.profile())?;
    let threshold = ExactRatio::from_integer((factor * spec.beta as u64) as i128);
    let mut points = Vec::with_capacity(funcs.len());
    let mut first = None;
    for f in &funcs {
        let ratio = (opt.value() > 0)
            .then(|| ExactRatio::new(f.c_end as i128, opt.value() as i128));
        if first.is_none() {
            if let Some(r) = ratio {
                if r <= threshold {
                    first = Some(f.covering);
                }
            }
        }
        points.push((f.covering, ratio));
    }
    Ok(RatioCurve {
        points,
        first_within_factor: first,
    })
}
