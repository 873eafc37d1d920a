//! Loss variants layered on CTC: per-timestep cross-entropy supervision with
//! a decaying mixing weight, and the decoding-penalty loss that scales CTC
//! by the edit distance between the target and the decoded prediction.

use crate::ctc::{self, LossResult};
use crate::decode;
use crate::editdist::edit_distance;
use crate::mat::{softmax_rows, Mat};
use crate::seq::{EmissionMatrix, LabelSequence, BLANK};

/// A known per-timestep labeling (blank allowed), length T.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PerTimestepTarget {
    labels: Vec<usize>,
}

impl PerTimestepTarget {
    pub fn new(labels: Vec<usize>) -> Self {
        PerTimestepTarget { labels }
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Mixing weight for the per-timestep term: `lambda0 * decay^epoch`,
/// non-increasing across epochs. `lambda0 == 0` is permitted as the
/// degenerate schedule that reduces the combined loss to plain CTC.
#[derive(Clone, Copy, Debug)]
pub struct LambdaSchedule {
    lambda0: f64,
    decay: f64,
    current_epoch: u32,
}

impl LambdaSchedule {
    pub fn new(lambda0: f64, decay: f64) -> Self {
        assert!(lambda0 >= 0.0 && lambda0.is_finite(), "lambda0 must be a finite nonnegative value");
        assert!(decay > 0.0 && decay <= 1.0, "decay must be in (0, 1]");
        LambdaSchedule { lambda0, decay, current_epoch: 0 }
    }

    pub fn constant(lambda: f64) -> Self {
        Self::new(lambda, 1.0)
    }

    pub fn value(&self) -> f64 {
        self.lambda0 * self.decay.powi(self.current_epoch as i32)
    }

    pub fn current_epoch(&self) -> u32 {
        self.current_epoch
    }

    pub fn advance_epoch(&mut self) {
        self.current_epoch += 1;
    }
}

/// One character's extent, in input-position units.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CharSpan {
    pub label: usize,
    pub start: f64,
    pub end: f64,
}

/// Character spans plus the receptive field of each output timestep; the 1-D
/// analogue of character-level bounding boxes.
#[derive(Clone, Debug, PartialEq)]
pub struct CharSpanAnnotation {
    pub spans: Vec<CharSpan>,
    pub receptive_fields: Vec<(f64, f64)>,
}

impl CharSpanAnnotation {
    /// Target word implied by the spans.
    pub fn target(&self) -> LabelSequence {
        LabelSequence::new(self.spans.iter().map(|s| s.label).collect())
    }
}

/// Derives the per-timestep labeling: timestep i gets label y_j when the
/// overlap of its receptive field with span j covers a strict majority of
/// the smaller of the two extents — for wide fields that is more than half
/// the character's area, for fields narrower than a character it is more
/// than half the field. Ties between qualifying spans break toward the
/// largest overlap, then the earliest span; timesteps qualifying nowhere
/// get blank.
pub fn assign_pt_labels(ann: &CharSpanAnnotation) -> PerTimestepTarget {
    let mut labels = Vec::with_capacity(ann.receptive_fields.len());
    for &(rf_start, rf_end) in &ann.receptive_fields {
        let mut best: Option<(f64, usize)> = None;
        for (j, span) in ann.spans.iter().enumerate() {
            let overlap = (rf_end.min(span.end) - rf_start.max(span.start)).max(0.0);
            let area = (span.end - span.start).min(rf_end - rf_start);
            if overlap > 0.5 * area {
                let better = match best {
                    None => true,
                    Some((best_overlap, _)) => overlap > best_overlap,
                };
                if better {
                    best = Some((overlap, j));
                }
            }
        }
        labels.push(match best {
            Some((_, j)) => ann.spans[j].label,
            None => BLANK,
        });
    }
    PerTimestepTarget::new(labels)
}

/// Mean per-timestep cross-entropy after softmax;
/// gradient per row is `(softmax - one_hot(z_i)) / T`.
pub fn pt_loss_and_grad(logits: &Mat, target: &PerTimestepTarget) -> LossResult {
    let t_len = logits.rows();
    assert_eq!(t_len, target.len(), "per-timestep target length mismatch");
    let mut grad = softmax_rows(logits);
    let mut loss = 0.0;
    let inv_t = 1.0 / t_len as f64;
    for (t, &z) in target.labels().iter().enumerate() {
        loss -= grad.get(t, z).ln();
        let row = grad.row_mut(t);
        for v in row.iter_mut() {
            *v *= inv_t;
        }
        row[z] -= inv_t;
    }
    LossResult { loss: loss * inv_t, grad, feasible: true }
}

/// The (ctc, per-timestep, lambda) component triple logged per call.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossComponents {
    pub ctc: f64,
    pub per_timestep: f64,
    pub lambda: f64,
}

#[derive(Clone, Debug)]
pub struct CombinedLoss {
    pub loss: f64,
    pub grad: Mat,
    pub components: LossComponents,
    pub feasible: bool,
}

/// `CTC + lambda * L_pt` with additive gradients. The per-timestep term is
/// skipped entirely at `lambda == 0`, which keeps the degenerate schedule
/// bitwise identical to plain CTC.
pub fn combined_loss(
    logits: &Mat,
    target: &LabelSequence,
    per_timestep: &PerTimestepTarget,
    schedule: &LambdaSchedule,
) -> CombinedLoss {
    let lambda = schedule.value();
    let ctc = ctc::loss_and_grad(logits, target);
    if lambda == 0.0 {
        return CombinedLoss {
            loss: ctc.loss,
            grad: ctc.grad,
            components: LossComponents { ctc: ctc.loss, per_timestep: 0.0, lambda },
            feasible: ctc.feasible,
        };
    }
    let pt = pt_loss_and_grad(logits, per_timestep);
    let mut grad = ctc.grad;
    grad.add_scaled(&pt.grad, lambda);
    CombinedLoss {
        loss: ctc.loss + lambda * pt.loss,
        grad,
        components: LossComponents { ctc: ctc.loss, per_timestep: pt.loss, lambda },
        feasible: ctc.feasible,
    }
}

/// A sample for the lambda-balancing rule.
#[derive(Clone, Debug)]
pub struct GradNormSample<'a> {
    pub logits: &'a Mat,
    pub target: &'a LabelSequence,
    pub per_timestep: &'a PerTimestepTarget,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LambdaInit {
    pub value: f64,
    /// Set when the per-timestep gradient norm vanished and the value fell
    /// back to 1.
    pub degenerate: bool,
}

/// Initial mixing weight chosen so the two gradients have the same
/// magnitude: the ratio of the mean L2 norms over the batch. Infeasible
/// samples are skipped.
pub fn lambda_init(batch: &[GradNormSample<'_>]) -> LambdaInit {
    let mut ctc_norm_sum = 0.0;
    let mut pt_norm_sum = 0.0;
    let mut counted = 0usize;
    for sample in batch {
        let ctc = ctc::loss_and_grad(sample.logits, sample.target);
        if !ctc.feasible {
            continue;
        }
        let pt = pt_loss_and_grad(sample.logits, sample.per_timestep);
        ctc_norm_sum += l2_norm(&ctc.grad);
        pt_norm_sum += l2_norm(&pt.grad);
        counted += 1;
    }
    if counted == 0 || pt_norm_sum == 0.0 {
        return LambdaInit { value: 1.0, degenerate: true };
    }
    LambdaInit { value: ctc_norm_sum / pt_norm_sum, degenerate: false }
}

fn l2_norm(m: &Mat) -> f64 {
    m.data().iter().map(|v| v * v).sum::<f64>().sqrt()
}

#[derive(Clone, Debug)]
pub struct WctcLoss {
    pub loss: f64,
    pub grad: Mat,
    /// Plain CTC loss before scaling.
    pub ctc_loss: f64,
    /// Edit distance between the target and the decoded prediction; treated
    /// as a constant during differentiation.
    pub edit_dist: usize,
    pub decoded: LabelSequence,
    pub feasible: bool,
}

/// CTC scaled by the edit distance between the target and the best-path
/// decoding of the current emissions. Already-correct samples yield zero
/// loss and gradient, so this loss is meant to take over only after a few
/// epochs of CTC warm-up.
pub fn wctc_loss_and_grad(logits: &Mat, target: &LabelSequence) -> WctcLoss {
    let ctc = ctc::loss_and_grad(logits, target);
    let decoded = decode::best_path(&EmissionMatrix::from_logits(logits.clone())).sequence;
    let edit_dist = edit_distance(target.items(), decoded.items());
    if !ctc.feasible {
        return WctcLoss {
            loss: f64::INFINITY,
            grad: ctc.grad,
            ctc_loss: ctc.loss,
            edit_dist,
            decoded,
            feasible: false,
        };
    }
    let scale = edit_dist as f64;
    let mut grad = ctc.grad;
    grad.scale(scale);
    WctcLoss {
        loss: ctc.loss * scale,
        grad,
        ctc_loss: ctc.loss,
        edit_dist,
        decoded,
        feasible: true,
    }
}
