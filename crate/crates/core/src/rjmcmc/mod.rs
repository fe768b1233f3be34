//! Rejuvenation kernel: a mixture of birth, death, split, merge and three
//! fixed-dimension random-walk updates, each invariant for the bridged target
//! `(1 - gamma) log L_coarse + gamma log L_fine + log prior`.

mod moves;

#[allow(unused_imports)]
use num_traits::Float;
use core::ops::AddAssign;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use moves::{
    birth_log_ratio, count_eligible_pairs, death_log_ratio, eligible_pairs, is_mergeable, merge_terms,
    move_birth, move_death, move_merge, move_split, move_update, recover_split_draw, split_children,
    split_log_jacobian, split_log_proposal_density, split_log_ratio, SplitDraw, UpdateTarget,
};

use crate::field::ThetaState;
use crate::likelihood::LogLikelihood;
use crate::prior::{Hyperparams, Prior};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MoveKind {
    Birth,
    Death,
    Split,
    Merge,
    UpdateAmplitude,
    UpdateScale,
    UpdateLocation,
}

impl MoveKind {
    pub const ALL: [MoveKind; 7] = [
        MoveKind::Birth,
        MoveKind::Death,
        MoveKind::Split,
        MoveKind::Merge,
        MoveKind::UpdateAmplitude,
        MoveKind::UpdateScale,
        MoveKind::UpdateLocation,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            MoveKind::Birth => "birth",
            MoveKind::Death => "death",
            MoveKind::Split => "split",
            MoveKind::Merge => "merge",
            MoveKind::UpdateAmplitude => "update-amplitude",
            MoveKind::UpdateScale => "update-scale",
            MoveKind::UpdateLocation => "update-location",
        }
    }
}

/// Selection probabilities of the seven moves at one state.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MoveProbabilities {
    pub p: [f64; 7],
}

impl MoveProbabilities {
    /// Gated and renormalized masses for a state with `k` kernels and
    /// `eligible_pairs` mergeable pairs.
    pub fn new(hp: &Hyperparams, k: usize, eligible_pairs: usize) -> Self {
        let damp = hp.c_move / (hp.s + 1.0);
        let update = (1.0 - hp.trans_dimensional_mass()) / 3.0;
        let mut p = [damp, hp.c_move, damp, hp.c_move, update, update, update];
        if k >= hp.k_max {
            p[MoveKind::Birth.index()] = 0.0;
            p[MoveKind::Split.index()] = 0.0;
        }
        if k == 0 {
            p[MoveKind::Death.index()] = 0.0;
            p[MoveKind::Split.index()] = 0.0;
            p[MoveKind::UpdateScale.index()] = 0.0;
            p[MoveKind::UpdateLocation.index()] = 0.0;
        }
        if k < 2 || eligible_pairs == 0 {
            p[MoveKind::Merge.index()] = 0.0;
        }
        let total: f64 = p.iter().sum();
        p.iter_mut().for_each(|v| *v /= total);
        Self { p }
    }

    pub fn at(hp: &Hyperparams, theta: &ThetaState) -> Self {
        Self::new(hp, theta.k(), count_eligible_pairs(theta, hp))
    }

    pub fn get(&self, kind: MoveKind) -> f64 {
        self.p[kind.index()]
    }

    pub fn select<R: Rng + ?Sized>(&self, rng: &mut R) -> MoveKind {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for kind in MoveKind::ALL {
            acc += self.p[kind.index()];
            if u < acc && self.p[kind.index()] > 0.0 {
                return kind;
            }
        }
        // Rounding left u above the last cumulative sum.
        *MoveKind::ALL.iter().rev().find(|k| self.p[k.index()] > 0.0).expect("amplitude update always available")
    }
}

/// Random-walk and birth proposal scales.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StepSizes {
    pub amplitude: f64,
    pub log_scale: f64,
    pub location: f64,
    pub birth_amplitude: f64,
}

impl Default for StepSizes {
    fn default() -> Self {
        Self { amplitude: 0.1, log_scale: 0.5, location: 0.05, birth_amplitude: 1.0 }
    }
}

pub const STEP_MIN: f64 = 1e-8;
pub const STEP_MAX: f64 = 1e3;
pub const BIRTH_AMPLITUDE_FLOOR: f64 = 1e-6;
const ADAPT_FACTOR: f64 = 1.5;

/// Scales each random walk towards an acceptance rate in `[0.2, 0.4]`.
pub fn adapt_step_sizes(steps: &StepSizes, stats: &AcceptanceStats) -> StepSizes {
    let adapt = |sigma: f64, kind: MoveKind| match stats.rate(kind) {
        Some(r) if r > 0.4 => (sigma * ADAPT_FACTOR).clamp(STEP_MIN, STEP_MAX),
        Some(r) if r < 0.2 => (sigma / ADAPT_FACTOR).clamp(STEP_MIN, STEP_MAX),
        _ => sigma,
    };
    StepSizes {
        amplitude: adapt(steps.amplitude, MoveKind::UpdateAmplitude),
        log_scale: adapt(steps.log_scale, MoveKind::UpdateScale),
        location: adapt(steps.location, MoveKind::UpdateLocation),
        birth_amplitude: steps.birth_amplitude,
    }
}

/// Per-move proposal and acceptance counts.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AcceptanceStats {
    pub proposed: [u64; 7],
    pub accepted: [u64; 7],
}

impl AcceptanceStats {
    pub fn record(&mut self, kind: MoveKind, accepted: bool) {
        self.proposed[kind.index()] += 1;
        if accepted {
            self.accepted[kind.index()] += 1;
        }
    }

    pub fn rate(&self, kind: MoveKind) -> Option<f64> {
        let n = self.proposed[kind.index()];
        (n > 0).then(|| self.accepted[kind.index()] as f64 / n as f64)
    }
}

impl AddAssign for AcceptanceStats {
    fn add_assign(&mut self, rhs: Self) {
        for i in 0..7 {
            self.proposed[i] += rhs.proposed[i];
            self.accepted[i] += rhs.accepted[i];
        }
    }
}

/// A parameterization together with its cached density components.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainState {
    pub theta: ThetaState,
    pub log_prior: f64,
    pub loglik_coarse: f64,
    pub loglik_fine: f64,
}

/// The bridging density between two levels at reciprocal temperature `gamma`.
#[derive(Clone, Copy)]
pub struct TargetDensity<'a> {
    pub prior: &'a Prior,
    pub coarse: &'a dyn LogLikelihood,
    pub fine: &'a dyn LogLikelihood,
    pub gamma: f64,
}

/// `(1 - gamma) coarse + gamma fine + prior`; a zero-weighted term is dropped
/// so that `0 * -inf` never arises.
pub fn bridge_log_density(gamma: f64, loglik_coarse: f64, loglik_fine: f64, log_prior: f64) -> f64 {
    let mut v = log_prior;
    if gamma < 1.0 {
        v += (1.0 - gamma) * loglik_coarse;
    }
    if gamma > 0.0 {
        v += gamma * loglik_fine;
    }
    if v.is_nan() {
        f64::NEG_INFINITY
    } else {
        v
    }
}

impl<'a> TargetDensity<'a> {
    pub fn new(prior: &'a Prior, coarse: &'a dyn LogLikelihood, fine: &'a dyn LogLikelihood, gamma: f64) -> Self {
        Self { prior, coarse, fine, gamma }
    }

    pub fn hp(&self) -> &Hyperparams {
        &self.prior.hp
    }

    /// Evaluates prior and both likelihoods; prior-rejected states skip the solvers.
    pub fn evaluate(&self, theta: ThetaState) -> ChainState {
        let log_prior = self.prior.log_prior(&theta);
        if log_prior == f64::NEG_INFINITY {
            return ChainState { theta, log_prior, loglik_coarse: f64::NEG_INFINITY, loglik_fine: f64::NEG_INFINITY };
        }
        let loglik_coarse = self.coarse.log_likelihood(&theta);
        let loglik_fine = self.fine.log_likelihood(&theta);
        ChainState { theta, log_prior, loglik_coarse, loglik_fine }
    }

    pub fn log_target(&self, state: &ChainState) -> f64 {
        bridge_log_density(self.gamma, state.loglik_coarse, state.loglik_fine, state.log_prior)
    }
}

pub(crate) fn accept<R: Rng + ?Sized>(log_ratio: f64, rng: &mut R) -> bool {
    if log_ratio.is_nan() {
        return false;
    }
    if log_ratio >= 0.0 {
        return true;
    }
    let u: f64 = rng.random();
    u.ln() < log_ratio
}

/// Applies `n_sweeps` randomly selected moves to `state`.
pub fn rejuvenate<R: Rng + ?Sized>(
    state: &mut ChainState,
    target: &TargetDensity<'_>,
    steps: &StepSizes,
    rng: &mut R,
    n_sweeps: usize,
) -> AcceptanceStats {
    let mut stats = AcceptanceStats::default();
    for _ in 0..n_sweeps {
        let probs = MoveProbabilities::at(target.hp(), &state.theta);
        let kind = probs.select(rng);
        let accepted = match kind {
            MoveKind::Birth => move_birth(state, target, steps, rng),
            MoveKind::Death => move_death(state, target, steps, rng),
            MoveKind::Split => move_split(state, target, rng),
            MoveKind::Merge => move_merge(state, target, rng),
            MoveKind::UpdateAmplitude => move_update(state, target, steps, rng, UpdateTarget::Amplitude),
            MoveKind::UpdateScale => move_update(state, target, steps, rng, UpdateTarget::Scale),
            MoveKind::UpdateLocation => move_update(state, target, steps, rng, UpdateTarget::Location),
        };
        stats.record(kind, accepted);
    }
    stats
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{Domain, KernelTerm};
    use crate::likelihood::FlatLikelihood;
    use alloc::vec;
    use approx::assert_relative_eq;

    #[test]
    fn interior_probabilities_match_constants() {
        let hp = Hyperparams::default();
        let p = MoveProbabilities::new(&hp, 5, 3);
        assert_relative_eq!(p.get(MoveKind::Birth), 0.2 / 1.1, max_relative = 1e-12);
        assert_relative_eq!(p.get(MoveKind::Death), 0.2, max_relative = 1e-12);
        assert_relative_eq!(p.get(MoveKind::Split), 0.2 / 1.1, max_relative = 1e-12);
        assert_relative_eq!(p.get(MoveKind::Merge), 0.2, max_relative = 1e-12);
        assert_relative_eq!(p.p.iter().sum::<f64>(), 1.0, max_relative = 1e-14);
    }

    #[test]
    fn gating_at_the_boundaries() {
        let hp = Hyperparams { k_max: 4, ..Default::default() };
        let full = MoveProbabilities::new(&hp, 4, 1);
        assert_eq!(full.get(MoveKind::Birth), 0.0);
        assert_eq!(full.get(MoveKind::Split), 0.0);
        let empty = MoveProbabilities::new(&hp, 0, 0);
        assert_eq!(empty.get(MoveKind::Death), 0.0);
        assert_eq!(empty.get(MoveKind::Merge), 0.0);
        assert_eq!(empty.get(MoveKind::UpdateScale), 0.0);
        let single = MoveProbabilities::new(&hp, 1, 0);
        assert_eq!(single.get(MoveKind::Merge), 0.0);
        for p in [full, empty, single] {
            assert_relative_eq!(p.p.iter().sum::<f64>(), 1.0, max_relative = 1e-14);
        }
    }

    #[test]
    fn bridge_endpoints_and_midpoint() {
        assert_eq!(bridge_log_density(0.0, -2.0, -4.0, -1.0), -3.0);
        assert_eq!(bridge_log_density(1.0, -2.0, -4.0, -1.0), -5.0);
        assert_relative_eq!(bridge_log_density(0.25, -2.0, -4.0, -1.0), -3.5, max_relative = 1e-15);
        assert_eq!(bridge_log_density(1.0, f64::NEG_INFINITY, -4.0, -1.0), -5.0);
    }

    #[test]
    fn adaptation_rule() {
        let steps = StepSizes::default();
        let mut stats = AcceptanceStats::default();
        for i in 0..10 {
            stats.record(MoveKind::UpdateAmplitude, i < 3);
            stats.record(MoveKind::UpdateScale, i < 5);
        }
        let next = adapt_step_sizes(&steps, &stats);
        assert_eq!(next.amplitude, steps.amplitude);
        assert_relative_eq!(next.log_scale, steps.log_scale * 1.5);
        assert_eq!(next.location, steps.location);
        let mut low = AcceptanceStats::default();
        low.record(MoveKind::UpdateLocation, false);
        assert_relative_eq!(adapt_step_sizes(&steps, &low).location, steps.location / 1.5);
        let tiny = StepSizes { location: 1e-8, ..steps };
        assert_eq!(adapt_step_sizes(&tiny, &low).location, STEP_MIN);
    }

    #[test]
    fn rejected_everything_leaves_state() {
        // A likelihood that is -inf everywhere except the current state.
        struct Spike(ThetaState);
        impl LogLikelihood for Spike {
            fn log_likelihood(&self, theta: &ThetaState) -> f64 {
                if *theta == self.0 { 0.0 } else { f64::NEG_INFINITY }
            }
        }
        let prior = Prior::new(Hyperparams::default(), Domain::UnitSquare);
        let theta = ThetaState { a0: 0.3, terms: vec![KernelTerm::new(0.5, 20.0, [0.4, 0.4])] };
        let spike = Spike(theta.clone());
        let target = TargetDensity::new(&prior, &FlatLikelihood, &spike, 0.5);
        let mut state = target.evaluate(theta.clone());
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(4);
        let stats = rejuvenate(&mut state, &target, &StepSizes::default(), &mut rng, 200);
        assert_eq!(state.theta, theta);
        assert_eq!(stats.accepted.iter().sum::<u64>(), 0);
    }
}
