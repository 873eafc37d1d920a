//! Mini-batch training of the sequence model under the three loss regimes,
//! with Adadelta updates, length-grouped batches and per-epoch curve
//! logging. Validation loss is always plain CTC regardless of the training
//! objective, so curves from different regimes share a comparison axis.

use std::io::Write;
use std::str::FromStr;

use thiserror::Error;

use crate::ctc;
use crate::losses::{
    self, assign_pt_labels, GradNormSample, LambdaSchedule, PerTimestepTarget,
};
use crate::mat::Mat;
use crate::model::{Adadelta, ModelError, SeqModel};
use crate::par::*;
use crate::seq::BLANK;
use crate::synthgen::{batch_by_length, SynthSample};

/// Training objective. `WctcPt` warms up with `CtcPt` for
/// `wctc_switch_epoch` epochs before the decoding-penalty loss takes over.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossKind {
    Ctc,
    CtcPt,
    WctcPt,
}

impl FromStr for LossKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ctc" => Ok(LossKind::Ctc),
            "ctc_pt" => Ok(LossKind::CtcPt),
            "wctc_pt" => Ok(LossKind::WctcPt),
            other => Err(format!("unknown loss kind {other:?} (expected ctc, ctc_pt or wctc_pt)")),
        }
    }
}

impl LossKind {
    pub fn name(&self) -> &'static str {
        match self {
            LossKind::Ctc => "ctc",
            LossKind::CtcPt => "ctc_pt",
            LossKind::WctcPt => "wctc_pt",
        }
    }

    fn uses_pt(&self) -> bool {
        !matches!(self, LossKind::Ctc)
    }
}

#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub loss_kind: LossKind,
    /// Balanced on the first batch when unset, so both gradient terms start
    /// with the same magnitude.
    pub lambda0: Option<f64>,
    pub lambda_decay: f64,
    /// Warm-up epochs before WCTC activates under `WctcPt`.
    pub wctc_switch_epoch: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub hidden_dim: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            loss_kind: LossKind::Ctc,
            lambda0: None,
            lambda_decay: 0.5,
            wctc_switch_epoch: 2,
            batch_size: 32,
            epochs: 5,
            seed: 0,
            hidden_dim: 64,
        }
    }
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training set is empty")]
    EmptyDataset,
    #[error("non-finite parameters after update in epoch {epoch}")]
    NonFiniteParams { epoch: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// One curve row; the loss columns are means over the feasible training
/// samples seen in the epoch.
#[derive(Clone, Copy, Debug)]
pub struct EpochStats {
    pub epoch: usize,
    pub ctc: f64,
    pub per_timestep: f64,
    pub lambda: f64,
    pub wctc: f64,
    pub val_ctc: f64,
    /// Fraction of best-path timesteps on validation data that are blank.
    pub val_blank_frac: f64,
}

#[derive(Clone, Debug)]
pub struct TrainingCurve {
    pub rows: Vec<EpochStats>,
    pub skipped_infeasible: usize,
    pub lambda0: f64,
    pub lambda0_degenerate: bool,
}

impl TrainingCurve {
    /// CSV with one row per epoch: epoch, ctc, pt, lambda, wctc, val_ctc,
    /// val_blank_frac.
    pub fn write_csv(&self, mut writer: impl Write) -> std::io::Result<()> {
        writeln!(writer, "epoch,ctc,pt,lambda,wctc,val_ctc,val_blank_frac")?;
        for row in &self.rows {
            writeln!(
                writer,
                "{},{},{},{},{},{},{}",
                row.epoch, row.ctc, row.per_timestep, row.lambda, row.wctc, row.val_ctc, row.val_blank_frac
            )?;
        }
        Ok(())
    }
}

struct SampleEval {
    param_grad: Vec<f64>,
    ctc: f64,
    per_timestep: f64,
    wctc: f64,
}

/// Trains `model` in place and returns the logged curves. Deterministic for
/// a fixed (seed, config, dataset): batches are visited in a fixed order and
/// per-sample gradients are reduced in sample order, so thread count does
/// not change the result.
pub fn train(
    model: &mut SeqModel,
    train_set: &[SynthSample],
    val_set: &[SynthSample],
    config: &TrainConfig,
) -> Result<TrainingCurve, TrainError> {
    if train_set.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let batches = batch_by_length(train_set, config.batch_size);
    let pt_targets: Vec<PerTimestepTarget> =
        train_set.iter().map(|s| assign_pt_labels(&s.spans)).collect();

    let (lambda0, lambda0_degenerate) = match config.lambda0 {
        Some(v) => (v, false),
        None if config.loss_kind.uses_pt() => {
            let init = balance_lambda(model, train_set, &pt_targets, &batches[0])?;
            (init.value, init.degenerate)
        }
        None => (0.0, false),
    };
    let mut schedule = LambdaSchedule::new(lambda0, config.lambda_decay);
    let mut optimizer = Adadelta::new(model.param_count());
    let mut skipped = 0usize;
    let mut rows = Vec::with_capacity(config.epochs);

    for epoch in 1..=config.epochs {
        let wctc_active =
            config.loss_kind == LossKind::WctcPt && epoch > config.wctc_switch_epoch;
        let lambda = schedule.value();
        let mut sums = (0.0, 0.0, 0.0); // ctc, pt, wctc
        let mut counted = 0usize;

        for batch in &batches {
            let evals: Vec<Option<SampleEval>> = batch
                .par_iter()
                .map(|&i| {
                    eval_sample(
                        model,
                        &train_set[i],
                        &pt_targets[i],
                        config.loss_kind,
                        lambda,
                        wctc_active,
                    )
                })
                .collect::<Result<_, ModelError>>()?;

            let mut grad_sum = vec![0.0; model.param_count()];
            let mut batch_n = 0usize;
            for eval in evals.into_iter() {
                match eval {
                    Some(eval) => {
                        for (g, s) in grad_sum.iter_mut().zip(&eval.param_grad) {
                            *g += s;
                        }
                        sums.0 += eval.ctc;
                        sums.1 += eval.per_timestep;
                        sums.2 += eval.wctc;
                        batch_n += 1;
                    }
                    None => skipped += 1,
                }
            }
            if batch_n == 0 {
                continue;
            }
            let inv = 1.0 / batch_n as f64;
            for g in grad_sum.iter_mut() {
                *g *= inv;
            }
            optimizer.step(model.params_mut(), &grad_sum);
            counted += batch_n;
        }

        if !model.params().iter().all(|v| v.is_finite()) {
            return Err(TrainError::NonFiniteParams { epoch });
        }

        let inv = if counted > 0 { 1.0 / counted as f64 } else { 0.0 };
        let (val_ctc, val_blank_frac) = validate(model, val_set)?;
        rows.push(EpochStats {
            epoch,
            ctc: sums.0 * inv,
            per_timestep: sums.1 * inv,
            lambda,
            wctc: sums.2 * inv,
            val_ctc,
            val_blank_frac,
        });
        schedule.advance_epoch();
    }

    Ok(TrainingCurve { rows, skipped_infeasible: skipped, lambda0, lambda0_degenerate })
}

fn eval_sample(
    model: &SeqModel,
    sample: &SynthSample,
    pt_target: &PerTimestepTarget,
    kind: LossKind,
    lambda: f64,
    wctc_active: bool,
) -> Result<Option<SampleEval>, ModelError> {
    let (logits, trace) = model.forward_traced(&sample.input)?;
    let (dlogits, ctc_value, pt_value, wctc_value) = match kind {
        LossKind::Ctc => {
            let res = ctc::loss_and_grad(&logits, &sample.target);
            if !res.feasible {
                return Ok(None);
            }
            (res.grad, res.loss, 0.0, 0.0)
        }
        LossKind::CtcPt => {
            let res = losses::combined_loss(
                &logits,
                &sample.target,
                pt_target,
                &LambdaSchedule::constant(lambda),
            );
            if !res.feasible {
                return Ok(None);
            }
            (res.grad, res.components.ctc, res.components.per_timestep, 0.0)
        }
        LossKind::WctcPt => {
            if !wctc_active {
                let res = losses::combined_loss(
                    &logits,
                    &sample.target,
                    pt_target,
                    &LambdaSchedule::constant(lambda),
                );
                if !res.feasible {
                    return Ok(None);
                }
                (res.grad, res.components.ctc, res.components.per_timestep, 0.0)
            } else {
                let wctc = losses::wctc_loss_and_grad(&logits, &sample.target);
                if !wctc.feasible {
                    return Ok(None);
                }
                let pt = losses::pt_loss_and_grad(&logits, pt_target);
                let mut grad = wctc.grad;
                grad.add_scaled(&pt.grad, lambda);
                (grad, wctc.ctc_loss, pt.loss, wctc.loss)
            }
        }
    };
    let param_grad = model.backward(&sample.input, &trace, &dlogits);
    Ok(Some(SampleEval {
        param_grad,
        ctc: ctc_value,
        per_timestep: pt_value,
        wctc: wctc_value,
    }))
}

fn balance_lambda(
    model: &SeqModel,
    train_set: &[SynthSample],
    pt_targets: &[PerTimestepTarget],
    first_batch: &[usize],
) -> Result<losses::LambdaInit, ModelError> {
    let logits: Vec<Mat> = first_batch
        .par_iter()
        .map(|&i| model.forward(&train_set[i].input))
        .collect::<Result<_, ModelError>>()?;
    let samples: Vec<GradNormSample<'_>> = first_batch
        .iter()
        .zip(&logits)
        .map(|(&i, logits)| GradNormSample {
            logits,
            target: &train_set[i].target,
            per_timestep: &pt_targets[i],
        })
        .collect();
    Ok(losses::lambda_init(&samples))
}

/// Mean plain-CTC validation loss and the blank fraction of best-path
/// timesteps, over the feasible validation samples.
pub fn validate(model: &SeqModel, val_set: &[SynthSample]) -> Result<(f64, f64), ModelError> {
    if val_set.is_empty() {
        return Ok((f64::NAN, f64::NAN));
    }
    let per_sample: Vec<Option<(f64, usize, usize)>> = val_set
        .par_iter()
        .map(|sample| {
            let logits = model.forward(&sample.input)?;
            let outcome = ctc::log_prob(
                &crate::seq::EmissionMatrix::from_logits(logits.clone()),
                &sample.target,
            );
            if !outcome.feasible {
                return Ok(None);
            }
            let mut blanks = 0usize;
            for t in 0..logits.rows() {
                let row = logits.row(t);
                let mut best = 0;
                for (c, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = c;
                    }
                }
                if best == BLANK {
                    blanks += 1;
                }
            }
            Ok(Some((-outcome.value, blanks, logits.rows())))
        })
        .collect::<Result<_, ModelError>>()?;

    let mut loss_sum = 0.0;
    let mut blanks = 0usize;
    let mut steps = 0usize;
    let mut n = 0usize;
    for entry in per_sample.into_iter().flatten() {
        loss_sum += entry.0;
        blanks += entry.1;
        steps += entry.2;
        n += 1;
    }
    if n == 0 {
        return Ok((f64::NAN, f64::NAN));
    }
    Ok((loss_sum / n as f64, blanks as f64 / steps as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seq::Alphabet;
    use crate::synthgen::generate;

    fn tiny_task() -> (Alphabet, Vec<SynthSample>, Vec<SynthSample>) {
        let alphabet = Alphabet::from_str("abc").unwrap();
        let train = generate(100, &alphabet, 24, 1..=3, 0.2);
        let val = generate(101, &alphabet, 8, 1..=3, 0.2);
        (alphabet, train, val)
    }

    fn tiny_config(kind: LossKind) -> TrainConfig {
        TrainConfig {
            loss_kind: kind,
            batch_size: 8,
            epochs: 2,
            seed: 5,
            hidden_dim: 6,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn training_is_bitwise_reproducible() {
        let (alphabet, train_set, val_set) = tiny_task();
        let config = tiny_config(LossKind::CtcPt);
        let mut model_a = SeqModel::new(alphabet.class_count(), 6, alphabet.class_count(), config.seed);
        let mut model_b = SeqModel::new(alphabet.class_count(), 6, alphabet.class_count(), config.seed);
        let curve_a = train(&mut model_a, &train_set, &val_set, &config).unwrap();
        let curve_b = train(&mut model_b, &train_set, &val_set, &config).unwrap();
        assert_eq!(model_a.params(), model_b.params());
        for (a, b) in curve_a.rows.iter().zip(&curve_b.rows) {
            assert_eq!(a.val_ctc.to_bits(), b.val_ctc.to_bits());
            assert_eq!(a.ctc.to_bits(), b.ctc.to_bits());
        }
    }

    #[test]
    fn lambda_zero_ctc_pt_matches_plain_ctc() {
        let (alphabet, train_set, val_set) = tiny_task();
        let mut config = tiny_config(LossKind::CtcPt);
        config.lambda0 = Some(0.0);
        let mut model_a = SeqModel::new(alphabet.class_count(), 6, alphabet.class_count(), config.seed);
        let curve_a = train(&mut model_a, &train_set, &val_set, &config).unwrap();

        let mut config_plain = tiny_config(LossKind::Ctc);
        config_plain.lambda0 = Some(0.0);
        let mut model_b = SeqModel::new(alphabet.class_count(), 6, alphabet.class_count(), config_plain.seed);
        let curve_b = train(&mut model_b, &train_set, &val_set, &config_plain).unwrap();

        assert_eq!(model_a.params(), model_b.params());
        for (a, b) in curve_a.rows.iter().zip(&curve_b.rows) {
            assert_eq!(a.val_ctc.to_bits(), b.val_ctc.to_bits());
        }
    }

    #[test]
    fn curve_has_exactly_epochs_rows() {
        let (alphabet, train_set, val_set) = tiny_task();
        for kind in [LossKind::Ctc, LossKind::CtcPt, LossKind::WctcPt] {
            let mut config = tiny_config(kind);
            config.epochs = 3;
            config.wctc_switch_epoch = 1;
            let mut model =
                SeqModel::new(alphabet.class_count(), 6, alphabet.class_count(), config.seed);
            let curve = train(&mut model, &train_set, &val_set, &config).unwrap();
            assert_eq!(curve.rows.len(), 3);
            let mut csv = Vec::new();
            curve.write_csv(&mut csv).unwrap();
            let lines = String::from_utf8(csv).unwrap();
            assert_eq!(lines.lines().count(), 4); // header + 3 rows
        }
    }

    #[test]
    fn wctc_regime_tracks_ctc_pt_until_switch() {
        let (alphabet, train_set, val_set) = tiny_task();
        let mut config = tiny_config(LossKind::WctcPt);
        config.epochs = 3;
        config.wctc_switch_epoch = 2;
        let mut model_w =
            SeqModel::new(alphabet.class_count(), 6, alphabet.class_count(), config.seed);
        let curve_w = train(&mut model_w, &train_set, &val_set, &config).unwrap();

        let mut config_c = config.clone();
        config_c.loss_kind = LossKind::CtcPt;
        let mut model_c =
            SeqModel::new(alphabet.class_count(), 6, alphabet.class_count(), config_c.seed);
        let curve_c = train(&mut model_c, &train_set, &val_set, &config_c).unwrap();

        // identical through the warm-up epochs
        for e in 0..2 {
            assert_eq!(curve_w.rows[e].val_ctc.to_bits(), curve_c.rows[e].val_ctc.to_bits());
            assert_eq!(curve_w.rows[e].wctc, 0.0);
        }
    }
}
