//! Log-domain CTC likelihood, loss and analytic gradient via the
//! forward-backward lattice over the blank-extended target, plus the
//! brute-force enumeration route used as an oracle.

use crate::mat::{log_softmax_rows, lse2, lse3, softmax_rows, Mat};
use crate::seq::{
    collapse, enumerate_inverse, Alphabet, EmissionMatrix, LabelSequence, SeqError, BLANK,
};

/// Log-likelihood with a feasibility flag. Targets that cannot fit in the
/// given number of timesteps yield `value == -inf` and `feasible == false`
/// rather than an error, because length-grouped batches can legitimately
/// contain them.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogProbOutcome {
    pub value: f64,
    pub feasible: bool,
}

/// Scalar loss plus gradient with respect to the pre-softmax scores.
#[derive(Clone, Debug)]
pub struct LossResult {
    pub loss: f64,
    pub grad: Mat,
    pub feasible: bool,
}

impl LossResult {
    pub(crate) fn infeasible(t_len: usize, classes: usize) -> Self {
        LossResult {
            loss: f64::INFINITY,
            grad: Mat::zeros(t_len, classes),
            feasible: false,
        }
    }
}

/// Blank-interleaved target: `(-, y1, -, y2, ..., -)`, length `2L + 1`.
pub fn extended_target(target: &LabelSequence) -> Vec<usize> {
    let mut out = Vec::with_capacity(2 * target.len() + 1);
    out.push(BLANK);
    for &label in target.items() {
        out.push(label);
        out.push(BLANK);
    }
    out
}

/// The alpha/beta lattice over the blank-extended target. Both passes
/// include the emission term at their own timestep, so
/// `alpha[t][s] + beta[t][s] - emission[t][s]` sums (over s, in log space)
/// to the same total log-probability at every t.
#[derive(Clone, Debug)]
pub struct CtcWorkspace {
    log_alpha: Mat,
    log_beta: Mat,
    extended: Vec<usize>,
}

impl CtcWorkspace {
    /// Runs both dynamic-programming passes over `log_probs` (a `T x C`
    /// matrix of per-timestep log-probabilities). Returns `None` when the
    /// target cannot be aligned in T steps.
    pub fn compute(log_probs: &Mat, target: &LabelSequence) -> Option<Self> {
        let t_len = log_probs.rows();
        let classes = log_probs.cols();
        assert!(t_len >= 1, "emission matrix must have at least one timestep");
        for &label in target.items() {
            assert!(
                label != BLANK && label < classes,
                "target label {label} out of range for {classes} classes"
            );
        }
        if t_len < target.min_alignment_len() {
            return None;
        }

        let extended = extended_target(target);
        let states = extended.len();
        let mut log_alpha = Mat::filled(t_len, states, f64::NEG_INFINITY);
        let mut log_beta = Mat::filled(t_len, states, f64::NEG_INFINITY);

        // forward pass
        log_alpha.set(0, 0, log_probs.get(0, BLANK));
        if states > 1 {
            log_alpha.set(0, 1, log_probs.get(0, extended[1]));
        }
        for t in 1..t_len {
            for s in 0..states {
                let stay = log_alpha.get(t - 1, s);
                let from_prev = if s >= 1 { log_alpha.get(t - 1, s - 1) } else { f64::NEG_INFINITY };
                let label = extended[s];
                let acc = if s >= 2 && label != BLANK && label != extended[s - 2] {
                    lse3(stay, from_prev, log_alpha.get(t - 1, s - 2))
                } else {
                    lse2(stay, from_prev)
                };
                log_alpha.set(t, s, acc + log_probs.get(t, label));
            }
        }

        // backward pass
        let last = t_len - 1;
        log_beta.set(last, states - 1, log_probs.get(last, BLANK));
        if states > 1 {
            log_beta.set(last, states - 2, log_probs.get(last, extended[states - 2]));
        }
        for t in (0..last).rev() {
            for s in 0..states {
                let stay = log_beta.get(t + 1, s);
                let from_next = if s + 1 < states { log_beta.get(t + 1, s + 1) } else { f64::NEG_INFINITY };
                let label = extended[s];
                let acc = if s + 2 < states && label != BLANK && label != extended[s + 2] {
                    lse3(stay, from_next, log_beta.get(t + 1, s + 2))
                } else {
                    lse2(stay, from_next)
                };
                log_beta.set(t, s, acc + log_probs.get(t, label));
            }
        }

        Some(CtcWorkspace { log_alpha, log_beta, extended })
    }

    pub fn log_alpha(&self) -> &Mat {
        &self.log_alpha
    }

    pub fn log_beta(&self) -> &Mat {
        &self.log_beta
    }

    pub fn extended_target(&self) -> &[usize] {
        &self.extended
    }

    /// Total log-probability of the target from the forward pass.
    pub fn log_prob(&self) -> f64 {
        let last = self.log_alpha.rows() - 1;
        let states = self.extended.len();
        if states == 1 {
            self.log_alpha.get(last, 0)
        } else {
            lse2(self.log_alpha.get(last, states - 1), self.log_alpha.get(last, states - 2))
        }
    }

    /// Total log-probability re-derived from the lattice at timestep `t`;
    /// constant across t up to rounding (the forward/backward consistency
    /// invariant).
    pub fn log_prob_at(&self, t: usize, log_probs: &Mat) -> f64 {
        let mut acc = f64::NEG_INFINITY;
        for (s, &label) in self.extended.iter().enumerate() {
            let term = self.log_alpha.get(t, s) + self.log_beta.get(t, s) - log_probs.get(t, label);
            acc = lse2(acc, term);
        }
        acc
    }

    /// Posterior marginals `P(label c at timestep t | target)`, a `T x C`
    /// matrix whose rows sum to 1.
    pub fn posteriors(&self, log_probs: &Mat) -> Mat {
        let t_len = self.log_alpha.rows();
        let classes = log_probs.cols();
        let total = self.log_prob();
        let mut out = Mat::zeros(t_len, classes);
        for t in 0..t_len {
            for (s, &label) in self.extended.iter().enumerate() {
                let log_gamma = self.log_alpha.get(t, s) + self.log_beta.get(t, s)
                    - log_probs.get(t, label)
                    - total;
                let cur = out.get(t, label);
                out.set(t, label, cur + log_gamma.exp());
            }
        }
        out
    }
}

/// `log P(target | emissions)` via the forward recursion.
pub fn log_prob(emissions: &EmissionMatrix, target: &LabelSequence) -> LogProbOutcome {
    match CtcWorkspace::compute(&emissions.log_probs(), target) {
        Some(ws) => LogProbOutcome { value: ws.log_prob(), feasible: true },
        None => LogProbOutcome { value: f64::NEG_INFINITY, feasible: false },
    }
}

/// Negative log-likelihood after softmax, with the analytic gradient with
/// respect to the pre-softmax scores: `softmax(logits) - posterior`.
pub fn loss_and_grad(logits: &Mat, target: &LabelSequence) -> LossResult {
    let log_probs = log_softmax_rows(logits);
    let ws = match CtcWorkspace::compute(&log_probs, target) {
        Some(ws) => ws,
        None => return LossResult::infeasible(logits.rows(), logits.cols()),
    };
    let total = ws.log_prob();
    if total == f64::NEG_INFINITY {
        // all paths have probability zero; treat like an infeasible sample
        return LossResult::infeasible(logits.rows(), logits.cols());
    }
    let mut grad = softmax_rows(logits);
    let posterior = ws.posteriors(&log_probs);
    grad.add_scaled(&posterior, -1.0);
    LossResult { loss: -total, grad, feasible: true }
}

/// Exact log-likelihood by summing every alignment that collapses to the
/// target. Oracle route for [`log_prob`]; refuses when `C^T` exceeds the
/// enumeration cap.
pub fn brute_force_log_prob(
    alphabet: &Alphabet,
    emissions: &EmissionMatrix,
    target: &LabelSequence,
) -> Result<LogProbOutcome, SeqError> {
    assert_eq!(alphabet.class_count(), emissions.class_count());
    let alignments = enumerate_inverse(alphabet, target, emissions.t_len())?;
    if alignments.is_empty() {
        return Ok(LogProbOutcome { value: f64::NEG_INFINITY, feasible: false });
    }
    let log_probs = emissions.log_probs();
    let mut terms = Vec::with_capacity(alignments.len());
    for a in &alignments {
        let mut acc = 0.0;
        for (t, &label) in a.items().iter().enumerate() {
            acc += log_probs.get(t, label);
        }
        terms.push(acc);
    }
    Ok(LogProbOutcome { value: crate::mat::log_sum_exp(&terms), feasible: true })
}

/// Argmax of the posterior marginals per timestep, collapsed. Used by the
/// blank-dominance diagnostics.
pub fn posterior_argmax_path(logits: &Mat, target: &LabelSequence) -> Option<Vec<usize>> {
    let log_probs = log_softmax_rows(logits);
    let ws = CtcWorkspace::compute(&log_probs, target)?;
    let post = ws.posteriors(&log_probs);
    let mut path = Vec::with_capacity(post.rows());
    for t in 0..post.rows() {
        let row = post.row(t);
        let mut best = 0;
        for (c, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = c;
            }
        }
        path.push(best);
    }
    Some(path)
}

/// Collapsed best-path over raw posteriors is exposed for tests; full
/// decoding lives in [`crate::decode`].
pub fn collapse_path(path: &[usize]) -> LabelSequence {
    collapse(&crate::seq::Alignment::new(path.to_vec()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seq::Alphabet;

    fn uniform_emissions(t_len: usize, classes: usize) -> EmissionMatrix {
        let p = 1.0 / classes as f64;
        EmissionMatrix::from_probs(Mat::filled(t_len, classes, p)).unwrap()
    }

    #[test]
    fn uniform_two_step_single_label() {
        // three alignments, each with probability 0.25
        let em = uniform_emissions(2, 2);
        let y = LabelSequence::new(vec![1]);
        let got = log_prob(&em, &y);
        assert!(got.feasible);
        assert!((got.value - 0.75f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn empty_target_is_blank_product() {
        let em = EmissionMatrix::from_probs(Mat::from_rows(&[
            vec![0.9, 0.1],
            vec![0.6, 0.4],
            vec![0.3, 0.7],
        ]))
        .unwrap();
        let got = log_prob(&em, &LabelSequence::empty());
        assert!(got.feasible);
        let expect = 0.9f64.ln() + 0.6f64.ln() + 0.3f64.ln();
        assert!((got.value - expect).abs() < 1e-12);
    }

    #[test]
    fn single_step_single_label() {
        let em = EmissionMatrix::from_probs(Mat::from_rows(&[vec![0.3, 0.7]])).unwrap();
        let got = log_prob(&em, &LabelSequence::new(vec![1]));
        assert!(got.feasible);
        assert!((got.value - 0.7f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn infeasible_target_reports_status() {
        let em = uniform_emissions(2, 2);
        let y = LabelSequence::new(vec![1, 1]); // needs T >= 3
        let got = log_prob(&em, &y);
        assert!(!got.feasible);
        assert_eq!(got.value, f64::NEG_INFINITY);

        let loss = loss_and_grad(&Mat::zeros(2, 2), &y);
        assert!(!loss.feasible);
        assert_eq!(loss.loss, f64::INFINITY);
        assert!(loss.grad.data().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn brute_force_agrees_on_uniform_instance() {
        let alphabet = Alphabet::from_str("a").unwrap();
        let em = uniform_emissions(2, 2);
        let y = LabelSequence::new(vec![1]);
        let brute = brute_force_log_prob(&alphabet, &em, &y).unwrap();
        assert!((brute.value - 0.75f64.ln()).abs() < 1e-12);
        assert!(brute.feasible);
    }

    #[test]
    fn brute_force_infeasible_is_neg_inf() {
        let alphabet = Alphabet::from_str("a").unwrap();
        let em = uniform_emissions(1, 2);
        let y = LabelSequence::new(vec![1, 1]);
        let brute = brute_force_log_prob(&alphabet, &em, &y).unwrap();
        assert!(!brute.feasible);
        assert_eq!(brute.value, f64::NEG_INFINITY);
    }

    #[test]
    fn single_step_gradient_is_cross_entropy() {
        // T=1, Y=(a): gradient row = softmax(logits) - one_hot(a)
        let logits = Mat::from_rows(&[vec![0.2, 1.3, -0.4]]);
        let res = loss_and_grad(&logits, &LabelSequence::new(vec![1]));
        let sm = softmax_rows(&logits);
        for c in 0..3 {
            let expect = sm.get(0, c) - if c == 1 { 1.0 } else { 0.0 };
            assert!((res.grad.get(0, c) - expect).abs() < 1e-12);
        }
        assert!((res.loss - -sm.get(0, 1).ln()).abs() < 1e-12);
    }

    #[test]
    fn forward_backward_consistent_across_timesteps() {
        let logits = Mat::from_fn(6, 4, |t, c| ((t * 7 + c * 3) % 5) as f64 * 0.37 - 1.0);
        let log_probs = log_softmax_rows(&logits);
        let y = LabelSequence::new(vec![2, 1, 2]);
        let ws = CtcWorkspace::compute(&log_probs, &y).unwrap();
        let total = ws.log_prob();
        for t in 0..6 {
            assert!((ws.log_prob_at(t, &log_probs) - total).abs() < 1e-10);
        }
    }

    #[test]
    fn posterior_rows_sum_to_one() {
        let logits = Mat::from_fn(5, 3, |t, c| (t as f64 - c as f64) * 0.21);
        let log_probs = log_softmax_rows(&logits);
        let y = LabelSequence::new(vec![1, 2]);
        let ws = CtcWorkspace::compute(&log_probs, &y).unwrap();
        let post = ws.posteriors(&log_probs);
        for t in 0..5 {
            let sum: f64 = post.row(t).iter().sum();
            assert!((sum - 1.0).abs() < 1e-10, "row {t} sums to {sum}");
        }
    }

    #[test]
    fn appending_pure_blank_row_never_decreases_likelihood() {
        let em = EmissionMatrix::from_probs(Mat::from_rows(&[
            vec![0.2, 0.5, 0.3],
            vec![0.6, 0.2, 0.2],
            vec![0.1, 0.1, 0.8],
        ]))
        .unwrap();
        let y = LabelSequence::new(vec![1, 2]);
        let base = log_prob(&em, &y).value;

        let mut rows: Vec<Vec<f64>> = (0..3).map(|t| em.probs().row(t).to_vec()).collect();
        rows.push(vec![1.0, 0.0, 0.0]);
        let extended = EmissionMatrix::from_probs(Mat::from_rows(&rows)).unwrap();
        let longer = log_prob(&extended, &y).value;
        assert!(longer >= base - 1e-12);
    }

    #[test]
    fn random_posteriors_favor_blank_with_many_classes() {
        // With random logits, any single non-blank class only carries
        // posterior mass in the instances whose target contains it, so the
        // posterior averaged across instances is blank-dominated at nearly
        // every timestep. This is what pushes a CTC-trained model toward
        // predicting blanks early on.
        use crate::mat::log_softmax_rows;
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        let classes = 24;
        let t_len = 30;
        let trials = 100;
        let mut mean_post = Mat::zeros(t_len, classes);
        for _ in 0..trials {
            let logits = Mat::from_fn(t_len, classes, |_, _| rng.random_range(-1.0..1.0));
            let len = rng.random_range(2..=4);
            let mut items = Vec::new();
            for _ in 0..len {
                let mut next = rng.random_range(1..classes);
                while items.last() == Some(&next) {
                    next = rng.random_range(1..classes);
                }
                items.push(next);
            }
            let y = LabelSequence::new(items);
            let log_probs = log_softmax_rows(&logits);
            let ws = CtcWorkspace::compute(&log_probs, &y).unwrap();
            mean_post.add_scaled(&ws.posteriors(&log_probs), 1.0 / trials as f64);
        }
        let blanks = (0..t_len)
            .filter(|&t| {
                let row = mean_post.row(t);
                row.iter().all(|&v| v <= row[BLANK])
            })
            .count();
        let frac = blanks as f64 / t_len as f64;
        assert!(frac >= 0.8, "blank argmax fraction {frac} below 0.8");
    }
}
