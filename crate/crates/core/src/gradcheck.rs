//! Central finite-difference checks for every loss gradient. The checks use
//! only loss values, so they stay independent of the analytic gradient path
//! they validate.

use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::ctc;
use crate::losses::{self, LambdaSchedule, PerTimestepTarget};
use crate::mat::Mat;
use crate::model::SeqModel;
use crate::seq::LabelSequence;

pub const DEFAULT_STEP: f64 = 1e-5;

/// Noise floor for the denominator: central differences with step 1e-5
/// carry absolute error around 1e-10, so near-zero derivative pairs must
/// not be compared in purely relative terms.
const DENOM_FLOOR: f64 = 1e-5;

/// Relative error between an analytic and a numeric derivative.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(DENOM_FLOOR);
    (analytic - numeric).abs() / denom
}

/// Max relative error of `grad` against central differences of `loss_fn`
/// over every entry of `point`.
pub fn max_rel_error(
    point: &Mat,
    grad: &Mat,
    step: f64,
    mut loss_fn: impl FnMut(&Mat) -> f64,
) -> f64 {
    let mut worst = 0.0f64;
    let mut probe = point.clone();
    for i in 0..point.data().len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + step;
        let plus = loss_fn(&probe);
        probe.data_mut()[i] = orig - step;
        let minus = loss_fn(&probe);
        probe.data_mut()[i] = orig;
        let numeric = (plus - minus) / (2.0 * step);
        worst = worst.max(relative_error(grad.data()[i], numeric));
    }
    worst
}

pub fn check_ctc(logits: &Mat, target: &LabelSequence, step: f64) -> f64 {
    let res = ctc::loss_and_grad(logits, target);
    assert!(res.feasible, "gradcheck requires a feasible target");
    max_rel_error(logits, &res.grad, step, |l| ctc::loss_and_grad(l, target).loss)
}

pub fn check_pt(logits: &Mat, target: &PerTimestepTarget, step: f64) -> f64 {
    let res = losses::pt_loss_and_grad(logits, target);
    max_rel_error(logits, &res.grad, step, |l| {
        losses::pt_loss_and_grad(l, target).loss
    })
}

pub fn check_combined(
    logits: &Mat,
    target: &LabelSequence,
    per_timestep: &PerTimestepTarget,
    schedule: &LambdaSchedule,
    step: f64,
) -> f64 {
    let res = losses::combined_loss(logits, target, per_timestep, schedule);
    assert!(res.feasible, "gradcheck requires a feasible target");
    max_rel_error(logits, &res.grad, step, |l| {
        losses::combined_loss(l, target, per_timestep, schedule).loss
    })
}

/// The decoded prediction is held fixed at the unperturbed decoding: the
/// edit-distance multiplier is a constant during differentiation, and
/// re-decoding under a perturbed point could flip an argmax near a tie.
pub fn check_wctc(logits: &Mat, target: &LabelSequence, step: f64) -> f64 {
    let res = losses::wctc_loss_and_grad(logits, target);
    assert!(res.feasible, "gradcheck requires a feasible target");
    let scale = res.edit_dist as f64;
    max_rel_error(logits, &res.grad, step, |l| {
        ctc::loss_and_grad(l, target).loss * scale
    })
}

/// Which loss the random gradcheck suites exercise.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CheckKind {
    Ctc,
    PerTimestep,
    Combined,
    Wctc,
}

impl FromStr for CheckKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ctc" => Ok(CheckKind::Ctc),
            "pt" => Ok(CheckKind::PerTimestep),
            "combined" => Ok(CheckKind::Combined),
            "wctc" => Ok(CheckKind::Wctc),
            other => Err(format!("unknown loss {other:?} (expected ctc, pt, combined or wctc)")),
        }
    }
}

impl CheckKind {
    pub const ALL: [CheckKind; 4] = [
        CheckKind::Ctc,
        CheckKind::PerTimestep,
        CheckKind::Combined,
        CheckKind::Wctc,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            CheckKind::Ctc => "ctc",
            CheckKind::PerTimestep => "pt",
            CheckKind::Combined => "combined",
            CheckKind::Wctc => "wctc",
        }
    }
}

struct RandomInstance {
    logits: Mat,
    target: LabelSequence,
    per_timestep: PerTimestepTarget,
    lambda: f64,
}

fn random_instance(rng: &mut ChaCha8Rng) -> RandomInstance {
    let t_len = rng.random_range(3..=6);
    let classes = rng.random_range(3..=5);
    let logits = Mat::from_fn(t_len, classes, |_, _| rng.random_range(-2.0..2.0));
    // feasible target without adjacent repeats, so min length == target length
    let target_len = rng.random_range(1..=2.min(t_len));
    let mut items = Vec::with_capacity(target_len);
    for _ in 0..target_len {
        let mut label = rng.random_range(1..classes);
        while items.last() == Some(&label) {
            label = rng.random_range(1..classes);
        }
        items.push(label);
    }
    let per_timestep =
        PerTimestepTarget::new((0..t_len).map(|_| rng.random_range(0..classes)).collect());
    RandomInstance {
        logits,
        target: LabelSequence::new(items),
        per_timestep,
        lambda: rng.random_range(0.1..2.0),
    }
}

/// Max relative gradient error over `trials` random instances, checked at
/// the logits level.
pub fn random_logits_suite(kind: CheckKind, trials: usize, seed: u64, step: f64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..trials {
        let inst = random_instance(&mut rng);
        let err = match kind {
            CheckKind::Ctc => check_ctc(&inst.logits, &inst.target, step),
            CheckKind::PerTimestep => check_pt(&inst.logits, &inst.per_timestep, step),
            CheckKind::Combined => check_combined(
                &inst.logits,
                &inst.target,
                &inst.per_timestep,
                &LambdaSchedule::constant(inst.lambda),
                step,
            ),
            CheckKind::Wctc => check_wctc(&inst.logits, &inst.target, step),
        };
        worst = worst.max(err);
    }
    worst
}

/// Max relative gradient error over `trials` random instances, checked
/// end-to-end: the loss is evaluated through the sequence model and the
/// finite differences run over the model parameters.
pub fn random_model_suite(kind: CheckKind, trials: usize, seed: u64, step: f64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for trial in 0..trials {
        let inst = random_instance(&mut rng);
        let classes = inst.logits.cols();
        let input_dim = rng.random_range(2..=4);
        let hidden = rng.random_range(3..=5);
        let t_len = inst.logits.rows();
        let input = Mat::from_fn(t_len, input_dim, |_, _| rng.random_range(-1.0..1.0));
        let model = SeqModel::new(input_dim, hidden, classes, seed ^ (trial as u64));
        let lambda = LambdaSchedule::constant(inst.lambda);

        let (logits, trace) = model.forward_traced(&input).expect("dims match");
        // the WCTC multiplier is pinned at the unperturbed decoding
        let wctc_scale = losses::wctc_loss_and_grad(&logits, &inst.target).edit_dist as f64;
        let loss_of = |l: &Mat| -> f64 {
            match kind {
                CheckKind::Ctc => ctc::loss_and_grad(l, &inst.target).loss,
                CheckKind::PerTimestep => losses::pt_loss_and_grad(l, &inst.per_timestep).loss,
                CheckKind::Combined => {
                    losses::combined_loss(l, &inst.target, &inst.per_timestep, &lambda).loss
                }
                CheckKind::Wctc => ctc::loss_and_grad(l, &inst.target).loss * wctc_scale,
            }
        };
        let dlogits = match kind {
            CheckKind::Ctc => ctc::loss_and_grad(&logits, &inst.target).grad,
            CheckKind::PerTimestep => losses::pt_loss_and_grad(&logits, &inst.per_timestep).grad,
            CheckKind::Combined => {
                losses::combined_loss(&logits, &inst.target, &inst.per_timestep, &lambda).grad
            }
            CheckKind::Wctc => {
                let mut g = ctc::loss_and_grad(&logits, &inst.target).grad;
                g.scale(wctc_scale);
                g
            }
        };
        let grad = model.backward(&input, &trace, &dlogits);

        let mut probe = model.clone();
        for i in 0..probe.param_count() {
            let orig = probe.params()[i];
            probe.params_mut()[i] = orig + step;
            let plus = loss_of(&probe.forward(&input).expect("dims match"));
            probe.params_mut()[i] = orig - step;
            let minus = loss_of(&probe.forward(&input).expect("dims match"));
            probe.params_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * step);
            worst = worst.max(relative_error(grad[i], numeric));
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_error_handles_zero_pair() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert!(relative_error(1.0, 1.001) < 1e-2);
    }

    #[test]
    fn ctc_gradient_matches_finite_differences() {
        let logits = Mat::from_fn(5, 4, |t, c| ((t * 5 + c * 2) % 7) as f64 * 0.3 - 0.9);
        let y = LabelSequence::new(vec![1, 3]);
        let err = check_ctc(&logits, &y, DEFAULT_STEP);
        assert!(err < 1e-4, "max relative error {err}");
    }

    #[test]
    fn pt_gradient_matches_finite_differences() {
        let logits = Mat::from_fn(4, 3, |t, c| (t as f64 * 0.7 - c as f64 * 0.4).sin());
        let z = PerTimestepTarget::new(vec![0, 2, 1, 0]);
        let err = check_pt(&logits, &z, DEFAULT_STEP);
        assert!(err < 1e-4, "max relative error {err}");
    }

    #[test]
    fn random_suites_stay_tight() {
        for kind in CheckKind::ALL {
            let err = random_logits_suite(kind, 10, 31, DEFAULT_STEP);
            assert!(err < 1e-4, "{} logits suite error {err}", kind.name());
        }
        let err = random_model_suite(CheckKind::Ctc, 2, 7, DEFAULT_STEP);
        assert!(err < 1e-3, "model suite error {err}");
    }
}
