#[allow(unused_imports)]
use num_traits::Float;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::StandardNormal;

use super::{accept, ChainState, MoveKind, MoveProbabilities, StepSizes, TargetDensity};
use crate::field::{dist2, Domain, KernelTerm, ThetaState};
use crate::prior::{Hyperparams, Prior};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

fn normal_log_density(x: f64, sd: f64) -> f64 {
    -0.5 * LN_2PI - sd.ln() - 0.5 * (x / sd) * (x / sd)
}

fn log_prob(hp: &Hyperparams, theta: &ThetaState, kind: MoveKind) -> f64 {
    MoveProbabilities::at(hp, theta).get(kind).ln()
}

/// Log proposal density of a newborn kernel.
fn birth_log_q(prior: &Prior, term: &KernelTerm, steps: &StepSizes) -> f64 {
    normal_log_density(term.amplitude, steps.birth_amplitude)
        + prior.log_scale_density(term.precision)
        + prior.log_location_density(&term.center)
}

/// Log acceptance ratio for `current -> proposed`, where `proposed` is
/// `current` with `new_term` added.
pub fn birth_log_ratio(
    target: &TargetDensity<'_>,
    current: &ChainState,
    proposed: &ChainState,
    new_term: &KernelTerm,
    steps: &StepSizes,
) -> f64 {
    let hp = target.hp();
    target.log_target(proposed) - target.log_target(current) + log_prob(hp, &proposed.theta, MoveKind::Death)
        - log_prob(hp, &current.theta, MoveKind::Birth)
        - birth_log_q(target.prior, new_term, steps)
}

/// Log acceptance ratio for removing `removed` from `current`, giving `proposed`.
pub fn death_log_ratio(
    target: &TargetDensity<'_>,
    current: &ChainState,
    proposed: &ChainState,
    removed: &KernelTerm,
    steps: &StepSizes,
) -> f64 {
    -birth_log_ratio(target, proposed, current, removed, steps)
}

pub fn move_birth<R: Rng + ?Sized>(
    state: &mut ChainState,
    target: &TargetDensity<'_>,
    steps: &StepSizes,
    rng: &mut R,
) -> bool {
    let prior = target.prior;
    if state.theta.k() >= prior.hp.k_max {
        return false;
    }
    let z: f64 = rng.sample(StandardNormal);
    let term = KernelTerm::new(steps.birth_amplitude * z, prior.sample_precision(rng), prior.sample_center(rng));
    let mut theta = state.theta.clone();
    theta.terms.push(term.clone());
    let proposed = target.evaluate(theta);
    let log_ratio = birth_log_ratio(target, state, &proposed, &term, steps);
    let accepted = accept(log_ratio, rng);
    if accepted {
        *state = proposed;
    }
    accepted
}

pub fn move_death<R: Rng + ?Sized>(
    state: &mut ChainState,
    target: &TargetDensity<'_>,
    steps: &StepSizes,
    rng: &mut R,
) -> bool {
    let k = state.theta.k();
    if k == 0 {
        return false;
    }
    let j = rng.random_range(0..k);
    let mut theta = state.theta.clone();
    let removed = theta.terms.remove(j);
    let proposed = target.evaluate(theta);
    let log_ratio = death_log_ratio(target, state, &proposed, &removed, steps);
    let accepted = accept(log_ratio, rng);
    if accepted {
        *state = proposed;
    }
    accepted
}

/// Auxiliary variables of a split: precision share, center offset, amplitude offset.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitDraw {
    pub u_tau: f64,
    pub u_x: [f64; 2],
    pub u_a: f64,
}

impl SplitDraw {
    /// Radius of the ball the center offset is drawn from.
    pub fn radius(hp: &Hyperparams, parent_precision: f64) -> f64 {
        hp.delta_x / (2.0 * parent_precision.sqrt())
    }

    pub fn sample<R: Rng + ?Sized>(hp: &Hyperparams, domain: Domain, parent_precision: f64, rng: &mut R) -> Self {
        let radius = Self::radius(hp, parent_precision);
        let u_tau: f64 = rng.random();
        let u_x = match domain {
            Domain::UnitInterval => [radius * (2.0 * rng.random::<f64>() - 1.0), 0.0],
            Domain::UnitSquare => {
                let r = radius * rng.random::<f64>().sqrt();
                let phi = 2.0 * core::f64::consts::PI * rng.random::<f64>();
                [r * phi.cos(), r * phi.sin()]
            }
        };
        let u_a = hp.delta_a * (rng.random::<f64>() - 0.5);
        Self { u_tau, u_x, u_a }
    }
}

/// Replaces `parent` by two kernels whose merge returns `parent`.
pub fn split_children(parent: &KernelTerm, u: &SplitDraw) -> (KernelTerm, KernelTerm) {
    let (s1, s2) = (u.u_tau.sqrt(), (1.0 - u.u_tau).sqrt());
    let a_hat = (parent.amplitude + u.u_a * (s1 - s2)) / (s1 + s2);
    let c = parent.center;
    let first = KernelTerm::new(a_hat - u.u_a, parent.precision / u.u_tau, [c[0] - u.u_x[0], c[1] - u.u_x[1]]);
    let second =
        KernelTerm::new(a_hat + u.u_a, parent.precision / (1.0 - u.u_tau), [c[0] + u.u_x[0], c[1] + u.u_x[1]]);
    (first, second)
}

/// Combines two kernels, preserving the integral of the expansion over space.
pub fn merge_terms(first: &KernelTerm, second: &KernelTerm) -> KernelTerm {
    let precision = 1.0 / (1.0 / first.precision + 1.0 / second.precision);
    let amplitude =
        precision.sqrt() * (first.amplitude / first.precision.sqrt() + second.amplitude / second.precision.sqrt());
    let center = [0.5 * (first.center[0] + second.center[0]), 0.5 * (first.center[1] + second.center[1])];
    KernelTerm::new(amplitude, precision, center)
}

/// Auxiliary variables that `split_children(merge_terms(first, second), u)`
/// maps back to `(first, second)`.
pub fn recover_split_draw(parent_precision: f64, first: &KernelTerm, second: &KernelTerm) -> SplitDraw {
    SplitDraw {
        u_tau: parent_precision / first.precision,
        u_x: [0.5 * (second.center[0] - first.center[0]), 0.5 * (second.center[1] - first.center[1])],
        u_a: 0.5 * (second.amplitude - first.amplitude),
    }
}

/// `ln |d(children) / d(parent, u)|` for the split map.
pub fn split_log_jacobian(dim: usize, parent_precision: f64, u_tau: f64) -> f64 {
    (dim as f64 + 1.0) * core::f64::consts::LN_2 + parent_precision.ln()
        - 2.0 * u_tau.ln()
        - 2.0 * (1.0 - u_tau).ln()
        - (u_tau.sqrt() + (1.0 - u_tau).sqrt()).ln()
}

/// Log density of the split auxiliaries: uniform share, uniform ball, uniform offset.
pub fn split_log_proposal_density(hp: &Hyperparams, domain: Domain, parent_precision: f64) -> f64 {
    let r = SplitDraw::radius(hp, parent_precision);
    let ball = match domain {
        Domain::UnitInterval => 2.0 * r,
        Domain::UnitSquare => core::f64::consts::PI * r * r,
    };
    -ball.ln() - hp.delta_a.ln()
}

pub fn is_mergeable(hp: &Hyperparams, a: &KernelTerm, b: &KernelTerm) -> bool {
    let norm = (1.0 / a.precision + 1.0 / b.precision).sqrt();
    dist2(&a.center, &b.center).sqrt() / norm <= hp.delta_x && (a.amplitude - b.amplitude).abs() <= hp.delta_a
}

pub fn eligible_pairs(theta: &ThetaState, hp: &Hyperparams) -> Vec<(usize, usize)> {
    let t = &theta.terms;
    let mut pairs = Vec::new();
    for i in 0..t.len() {
        for j in i + 1..t.len() {
            if is_mergeable(hp, &t[i], &t[j]) {
                pairs.push((i, j));
            }
        }
    }
    pairs
}

pub fn count_eligible_pairs(theta: &ThetaState, hp: &Hyperparams) -> usize {
    let t = &theta.terms;
    let mut count = 0;
    for i in 0..t.len() {
        for j in i + 1..t.len() {
            if is_mergeable(hp, &t[i], &t[j]) {
                count += 1;
            }
        }
    }
    count
}

/// Log acceptance ratio for splitting one kernel of `small` (k kernels) into
/// `big` (k + 1 kernels) with auxiliaries `u` drawn around `parent_precision`.
///
/// States are unordered collections of kernels: the forward move picks one of
/// k parents and the draw and its mirror image give the same pair, while the
/// reverse picks one of the eligible pairs of `big`.
pub fn split_log_ratio(
    target: &TargetDensity<'_>,
    small: &ChainState,
    big: &ChainState,
    parent_precision: f64,
    u: &SplitDraw,
) -> f64 {
    let hp = target.hp();
    let domain = target.prior.domain;
    let k = small.theta.k() as f64;
    let eligible = count_eligible_pairs(&big.theta, hp) as f64;
    target.log_target(big) - target.log_target(small) + ((k + 1.0) * k / 2.0).ln() - eligible.ln()
        + log_prob(hp, &big.theta, MoveKind::Merge)
        - log_prob(hp, &small.theta, MoveKind::Split)
        + split_log_jacobian(domain.dim(), parent_precision, u.u_tau)
        - split_log_proposal_density(hp, domain, parent_precision)
}

pub fn move_split<R: Rng + ?Sized>(state: &mut ChainState, target: &TargetDensity<'_>, rng: &mut R) -> bool {
    let hp = target.hp();
    let k = state.theta.k();
    if k == 0 || k >= hp.k_max {
        return false;
    }
    let j = rng.random_range(0..k);
    let parent = state.theta.terms[j].clone();
    let u = SplitDraw::sample(hp, target.prior.domain, parent.precision, rng);
    if !(u.u_tau > 0.0 && u.u_tau < 1.0) {
        return false;
    }
    let (first, second) = split_children(&parent, &u);
    let mut theta = state.theta.clone();
    theta.terms[j] = first;
    theta.terms.push(second);
    let proposed = target.evaluate(theta);
    let log_ratio = split_log_ratio(target, state, &proposed, parent.precision, &u);
    let accepted = accept(log_ratio, rng);
    if accepted {
        *state = proposed;
    }
    accepted
}

pub fn move_merge<R: Rng + ?Sized>(state: &mut ChainState, target: &TargetDensity<'_>, rng: &mut R) -> bool {
    let hp = target.hp();
    let pairs = eligible_pairs(&state.theta, hp);
    if pairs.is_empty() {
        return false;
    }
    let (i, j) = pairs[rng.random_range(0..pairs.len())];
    let (first, second) = (&state.theta.terms[i], &state.theta.terms[j]);
    let merged = merge_terms(first, second);
    let u = recover_split_draw(merged.precision, first, second);
    let parent_precision = merged.precision;
    let mut theta = state.theta.clone();
    theta.terms[i] = merged;
    theta.terms.remove(j);
    let proposed = target.evaluate(theta);
    let log_ratio = -split_log_ratio(target, &proposed, state, parent_precision, &u);
    let accepted = accept(log_ratio, rng);
    if accepted {
        *state = proposed;
    }
    accepted
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UpdateTarget {
    Amplitude,
    Scale,
    Location,
}

/// Fixed-dimension random-walk Metropolis update of one coordinate block.
pub fn move_update<R: Rng + ?Sized>(
    state: &mut ChainState,
    target: &TargetDensity<'_>,
    steps: &StepSizes,
    rng: &mut R,
    which: UpdateTarget,
) -> bool {
    let k = state.theta.k();
    let mut theta = state.theta.clone();
    let mut log_correction = 0.0;
    match which {
        UpdateTarget::Amplitude => {
            let j = rng.random_range(0..=k);
            let z: f64 = rng.sample(StandardNormal);
            if j == 0 {
                theta.a0 += steps.amplitude * z;
            } else {
                theta.terms[j - 1].amplitude += steps.amplitude * z;
            }
        }
        UpdateTarget::Scale => {
            if k == 0 {
                return false;
            }
            let j = rng.random_range(0..k);
            let z: f64 = rng.sample(StandardNormal);
            let old = theta.terms[j].precision;
            let new = old * (steps.log_scale * z).exp();
            theta.terms[j].precision = new;
            // Log-normal walk: q(old | new) / q(new | old) = new / old.
            log_correction = new.ln() - old.ln();
        }
        UpdateTarget::Location => {
            if k == 0 {
                return false;
            }
            let j = rng.random_range(0..k);
            let dims = target.prior.domain.dim();
            for d in 0..dims {
                let z: f64 = rng.sample(StandardNormal);
                theta.terms[j].center[d] += steps.location * z;
            }
        }
    }
    let proposed = target.evaluate(theta);
    let log_ratio = target.log_target(&proposed) - target.log_target(state) + log_correction;
    let accepted = accept(log_ratio, rng);
    if accepted {
        *state = proposed;
    }
    accepted
}
