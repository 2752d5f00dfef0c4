//! Multi-label objective, AdamW, cosine schedule and the fit/evaluate loop.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::metrics::{prf1, MetricsTable};
use crate::model::Model;
use crate::scalar::Scalar;
use crate::tensor::{Layer, Mode, Param, Tensor3};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub lr_init: f64,
    pub lr_final: f64,
    pub weight_decay: f64,
    pub betas: (f64, f64),
    pub epsilon: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 64,
            epochs: 50,
            lr_init: 1e-4,
            lr_final: 1e-6,
            weight_decay: 0.01,
            betas: (0.9, 0.999),
            epsilon: 1e-8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size", "must be at least 1"));
        }
        if !(self.lr_final >= 0.0 && self.lr_final <= self.lr_init) {
            return Err(Error::invalid(
                "lr_final",
                format!("need 0 <= lr_final <= lr_init, got {}", self.lr_final),
            ));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::invalid("weight_decay", "must be non-negative"));
        }
        let (b1, b2) = self.betas;
        if !(0.0..1.0).contains(&b1) || !(0.0..1.0).contains(&b2) {
            return Err(Error::invalid("betas", "each beta must lie in [0, 1)"));
        }
        if self.epsilon <= 0.0 {
            return Err(Error::invalid("epsilon", "must be positive"));
        }
        Ok(())
    }
}

/// `log(1 + exp(z))` without overflow.
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// Batch mean of the per-record BCE summed over classes, and its gradient
/// with respect to the logits.
pub fn bce_multilabel_loss<S: Scalar>(
    logits: &[Vec<S>],
    targets: &[Vec<S>],
) -> Result<(S, Vec<Vec<S>>)> {
    if logits.len() != targets.len() || logits.is_empty() {
        return Err(Error::shape(
            "bce",
            format!(
                "{} logit rows vs {} target rows",
                logits.len(),
                targets.len()
            ),
        ));
    }
    let n = logits.len() as f64;
    let mut total = 0.0;
    let mut grads = Vec::with_capacity(logits.len());
    for (zr, tr) in logits.iter().zip(targets) {
        if zr.len() != tr.len() {
            return Err(Error::shape(
                "bce",
                format!("{} logits vs {} targets in a row", zr.len(), tr.len()),
            ));
        }
        let mut g = Vec::with_capacity(zr.len());
        for (&z, &t) in zr.iter().zip(tr) {
            let (z, t) = (z.as_f64(), t.as_f64());
            if t != 0.0 && t != 1.0 {
                return Err(Error::invalid("target", format!("{t} is not 0 or 1")));
            }
            // -t log s(z) - (1-t) log(1-s(z)) = softplus(z) - t z
            total += softplus(z) - t * z;
            let s = if z >= 0.0 {
                1.0 / (1.0 + (-z).exp())
            } else {
                z.exp() / (1.0 + z.exp())
            };
            g.push(S::lit((s - t) / n));
        }
        grads.push(g);
    }
    Ok((S::lit(total / n), grads))
}

/// Learning rate after `step` of `total_steps`; clamps to `lr_final` past the end.
pub fn cosine_lr(step: usize, total_steps: usize, lr_init: f64, lr_final: f64) -> f64 {
    if total_steps == 0 || step >= total_steps {
        return lr_final;
    }
    let frac = step as f64 / total_steps as f64;
    lr_final + 0.5 * (lr_init - lr_final) * (1.0 + (std::f64::consts::PI * frac).cos())
}

/// First and second moments for every trainable array, in visit order.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW<S> {
    pub first: Vec<Vec<S>>,
    pub second: Vec<Vec<S>>,
    pub step: u64,
    pub betas: (f64, f64),
    pub epsilon: f64,
    pub weight_decay: f64,
}

impl<S: Scalar> AdamW<S> {
    pub fn new<L: Layer<S> + ?Sized>(layer: &L, config: &TrainConfig) -> Self {
        let mut first = Vec::new();
        layer.visit_params(&mut |p| {
            if p.trainable {
                first.push(vec![S::zero(); p.len()]);
            }
        });
        AdamW {
            second: first.clone(),
            first,
            step: 0,
            betas: config.betas,
            epsilon: config.epsilon,
            weight_decay: config.weight_decay,
        }
    }

    /// One update from the gradients currently accumulated in `layer`.
    pub fn step<L: Layer<S> + ?Sized>(&mut self, layer: &mut L, lr: f64) -> Result<()> {
        self.step += 1;
        let (b1, b2) = self.betas;
        let t = self.step as i32;
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        let decay = S::lit(1.0 - lr * self.weight_decay);
        let (lr_s, eps) = (S::lit(lr), S::lit(self.epsilon));
        let (b1s, b2s) = (S::lit(b1), S::lit(b2));
        let (c1s, c2s) = (S::lit(c1), S::lit(c2));
        let mut i = 0;
        let mut mismatch = None;
        let (first, second) = (&mut self.first, &mut self.second);
        layer.visit_params_mut(&mut |p: &mut Param<S>| {
            if !p.trainable {
                return;
            }
            let (Some(m), Some(v)) = (first.get_mut(i), second.get_mut(i)) else {
                mismatch.get_or_insert_with(|| p.name.clone());
                i += 1;
                return;
            };
            if m.len() != p.len() {
                mismatch.get_or_insert_with(|| p.name.clone());
                i += 1;
                return;
            }
            for k in 0..p.value.len() {
                let g = p.grad[k];
                m[k] = b1s * m[k] + (S::one() - b1s) * g;
                v[k] = b2s * v[k] + (S::one() - b2s) * g * g;
                let m_hat = m[k] / c1s;
                let v_hat = v[k] / c2s;
                p.value[k] = p.value[k] * decay - lr_s * m_hat / (v_hat.sqrt() + eps);
            }
            i += 1;
        });
        if let Some(name) =
            mismatch.or_else(|| (i != self.first.len()).then(|| "parameter count".into()))
        {
            return Err(Error::shape(
                "adamw",
                format!("optimizer state does not match {name}"),
            ));
        }
        Ok(())
    }
}

/// Forward, loss and backward on one batch followed by an optimizer step.
/// Returns the batch loss.
pub fn train_step<S: Scalar>(
    model: &mut Model<S>,
    optimizer: &mut AdamW<S>,
    x: &Tensor3<S>,
    targets: &[Vec<S>],
    lr: f64,
) -> Result<f64> {
    model.zero_grad();
    let out = model.forward(x, Mode::Train)?;
    let (loss, grad) = bce_multilabel_loss(&out.to_rows(), targets)?;
    let loss = loss.as_f64();
    if !loss.is_finite() {
        return Err(Error::NonFinite("training loss".into()));
    }
    let flat: Vec<S> = grad.into_iter().flatten().collect();
    model.backward(&out.with_data(flat))?;
    optimizer.step(model, lr)?;
    Ok(loss)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Optimizer steps completed at the end of the epoch.
    pub step: usize,
    /// Learning rate used for the epoch's last step.
    pub lr: f64,
    pub train_loss: f64,
    pub val_macro_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainingLog {
    pub epochs: Vec<EpochRecord>,
    /// Learning rate of every optimizer step.
    pub step_lrs: Vec<f64>,
    pub best_epoch: usize,
    pub best_val_macro_f1: f64,
}

impl TrainingLog {
    pub const HEADER: &'static str = "epoch,step,lr,train_loss,val_macro_f1";

    pub fn csv_line(r: &EpochRecord) -> String {
        format!(
            "{},{},{:.6e},{:.6},{:.6}",
            r.epoch, r.step, r.lr, r.train_loss, r.val_macro_f1
        )
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("{}\n", Self::HEADER);
        for r in &self.epochs {
            let _ = writeln!(out, "{}", Self::csv_line(r));
        }
        out
    }
}

/// Trains with per-step cosine decay and keeps the parameters of the epoch
/// with the best validation macro-F1 (earliest on ties).
pub fn fit<S: Scalar>(
    model: &mut Model<S>,
    train: &Dataset,
    val: &Dataset,
    config: &TrainConfig,
) -> Result<TrainingLog> {
    fit_with(model, train, val, config, |_| {})
}

/// As [`fit`], calling `on_epoch` after every epoch.
pub fn fit_with<S: Scalar>(
    model: &mut Model<S>,
    train: &Dataset,
    val: &Dataset,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainingLog> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::invalid("train set", "is empty"));
    }
    if val.is_empty() {
        return Err(Error::invalid("validation set", "is empty"));
    }
    model.mode = Mode::Train;
    let batches_per_epoch = train.len().div_ceil(config.batch_size);
    let total_steps = batches_per_epoch * config.epochs;
    let mut optimizer = AdamW::new(model, config);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut log = TrainingLog {
        best_val_macro_f1: f64::NEG_INFINITY,
        ..Default::default()
    };
    let mut best = model.snapshot();
    let mut step = 0;

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut lr = config.lr_init;
        for chunk in order.chunks(config.batch_size) {
            lr = cosine_lr(step, total_steps, config.lr_init, config.lr_final);
            let x = train.batch::<S>(chunk);
            let t = train.targets::<S>(chunk);
            loss_sum += train_step(model, &mut optimizer, &x, &t, lr)? * chunk.len() as f64;
            log.step_lrs.push(lr);
            step += 1;
        }
        let f1 = evaluate(model, val, 0.5)?.macro_f1;
        let record = EpochRecord {
            epoch,
            step,
            lr,
            train_loss: loss_sum / train.len() as f64,
            val_macro_f1: f1,
        };
        if f1 > log.best_val_macro_f1 {
            log.best_val_macro_f1 = f1;
            log.best_epoch = epoch;
            best = model.snapshot();
        }
        on_epoch(&record);
        log.epochs.push(record);
    }
    model.restore(&best);
    model.mode = Mode::Infer;
    Ok(log)
}

/// A model followed by the BCE loss against fixed targets, exposed as a
/// layer with a `[1, 1, 1]` output so gradient checks cover the loss too.
pub struct WithLoss<S: Scalar> {
    pub model: Model<S>,
    pub targets: Vec<Vec<S>>,
    out: Option<Tensor3<S>>,
}

impl<S: Scalar> WithLoss<S> {
    pub fn new(model: Model<S>, targets: Vec<Vec<S>>) -> Self {
        WithLoss {
            model,
            targets,
            out: None,
        }
    }
}

impl<S: Scalar> Layer<S> for WithLoss<S> {
    fn name(&self) -> &str {
        "model+bce"
    }
    fn forward(&mut self, x: &Tensor3<S>, mode: Mode) -> Result<Tensor3<S>> {
        let out = self.model.forward(x, mode)?;
        let (l, _) = bce_multilabel_loss(&out.to_rows(), &self.targets)?;
        self.out = Some(out);
        Tensor3::from_vec(1, 1, 1, vec![l])
    }
    fn infer(&self, x: &Tensor3<S>) -> Result<Tensor3<S>> {
        let out = self.model.infer(x)?;
        let (l, _) = bce_multilabel_loss(&out.to_rows(), &self.targets)?;
        Tensor3::from_vec(1, 1, 1, vec![l])
    }
    fn backward(&mut self, grad: &Tensor3<S>) -> Result<Tensor3<S>> {
        let out = self
            .out
            .take()
            .ok_or_else(|| Error::shape("model+bce", "backward called before forward"))?;
        let (_, g) = bce_multilabel_loss(&out.to_rows(), &self.targets)?;
        let s = grad.data()[0];
        let flat = g.into_iter().flatten().map(|v| v * s).collect();
        self.model.backward(&out.with_data(flat))
    }
    fn visit_params(&self, f: &mut dyn FnMut(&Param<S>)) {
        self.model.visit_params(f)
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param<S>)) {
        self.model.visit_params_mut(f)
    }
}

const EVAL_CHUNK: usize = 64;

/// Infer-mode predictions at `threshold` scored per label.
pub fn evaluate<S: Scalar>(
    model: &Model<S>,
    dataset: &Dataset,
    threshold: f64,
) -> Result<MetricsTable> {
    if dataset.is_empty() {
        return Err(Error::invalid("dataset", "is empty"));
    }
    let idx: Vec<usize> = (0..dataset.len()).collect();
    let mut preds = Vec::with_capacity(dataset.len());
    for chunk in idx.chunks(EVAL_CHUNK) {
        preds.extend(model.predict(&dataset.batch::<S>(chunk), S::lit(threshold))?);
    }
    prf1(&preds, &dataset.label_rows(&idx))
}

/// Mean loss over `dataset` in infer mode.
pub fn mean_loss<S: Scalar>(model: &Model<S>, dataset: &Dataset) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::invalid("dataset", "is empty"));
    }
    let idx: Vec<usize> = (0..dataset.len()).collect();
    let mut total = 0.0;
    for chunk in idx.chunks(EVAL_CHUNK) {
        let logits = model.logits(&dataset.batch::<S>(chunk))?;
        let (l, _) = bce_multilabel_loss(&logits, &dataset.targets::<S>(chunk))?;
        total += l.as_f64() * chunk.len() as f64;
    }
    Ok(total / dataset.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate, GenConfig};
    use crate::model::{build_model, BackboneConfig, ModelSpec, Variant};
    use crate::tensor::grad_check;
    use std::f64::consts::LN_2;

    fn tiny_spec(variant: Variant, classes: usize) -> ModelSpec {
        BackboneConfig {
            leads: 2,
            input_length: 64,
            stem_channels: 8,
            blocks: vec![1, 1],
            channels: vec![8, 8],
            strides: vec![1, 2],
            initial_cover: 8,
            num_classes: classes,
            ..BackboneConfig::desk()
        }
        .with_variant(variant)
        .to_spec()
        .unwrap()
    }

    #[test]
    fn loss_examples() {
        let (l, g) = bce_multilabel_loss(&[vec![0.0f64]], &[vec![1.0]]).unwrap();
        assert!((l - LN_2).abs() < 1e-15);
        assert!((g[0][0] + 0.5).abs() < 1e-15);
        let (l, g) = bce_multilabel_loss(&[vec![50.0f64]], &[vec![1.0]]).unwrap();
        assert!(l < 1e-20 && g[0][0].abs() < 1e-20);
        let (l, _) = bce_multilabel_loss(&[vec![0.0f64, 0.0]], &[vec![1.0, 0.0]]).unwrap();
        assert!((l - 2.0 * LN_2).abs() < 1e-15);
    }

    #[test]
    fn loss_is_stable_for_large_logits() {
        let (l, g) = bce_multilabel_loss(&[vec![500.0f64, -500.0]], &[vec![0.0, 1.0]]).unwrap();
        assert!((l - 1000.0).abs() < 1e-9);
        assert!((g[0][0] - 1.0).abs() < 1e-15 && (g[0][1] + 1.0).abs() < 1e-15);
    }

    #[test]
    fn loss_gradient_is_averaged_over_batch() {
        let (_, g) =
            bce_multilabel_loss(&[vec![0.0f64], vec![0.0]], &[vec![1.0], vec![0.0]]).unwrap();
        assert_eq!(g, vec![vec![-0.25], vec![0.25]]);
    }

    #[test]
    fn non_binary_target_rejected() {
        let err = bce_multilabel_loss(&[vec![0.0f64]], &[vec![0.5]]).unwrap_err();
        assert!(matches!(err, Error::Invalid { .. }));
    }

    #[test]
    fn cosine_examples() {
        assert!((cosine_lr(0, 100, 1e-4, 1e-6) - 1e-4).abs() < 1e-18);
        assert!((cosine_lr(100, 100, 1e-4, 1e-6) - 1e-6).abs() < 1e-18);
        assert!((cosine_lr(50, 100, 1e-4, 1e-6) - 5.05e-5).abs() < 1e-18);
        assert_eq!(cosine_lr(150, 100, 1e-4, 1e-6), 1e-6);
    }

    fn scalar_layer(value: f64, grad: f64) -> crate::tensor::Linear<f64> {
        let mut fc = crate::tensor::Linear::<f64>::new("fc", 1, 1);
        fc.weight.value = vec![value];
        fc.weight.grad = vec![grad];
        fc.bias.trainable = false;
        fc
    }

    fn config(wd: f64) -> TrainConfig {
        TrainConfig {
            weight_decay: wd,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn first_step_moves_by_lr() {
        for g in [1e-3, 0.7, -42.0] {
            let mut fc = scalar_layer(1.0, g);
            let mut opt = AdamW::new(&fc, &config(0.0));
            opt.step(&mut fc, 1e-3).unwrap();
            assert!(
                ((fc.weight.value[0] - 1.0).abs() - 1e-3).abs() < 1e-7,
                "g={g}"
            );
        }
    }

    #[test]
    fn decoupled_decay_with_zero_grad() {
        let mut fc = scalar_layer(2.0, 0.0);
        let mut opt = AdamW::new(&fc, &config(0.01));
        opt.step(&mut fc, 0.1).unwrap();
        assert!((fc.weight.value[0] - 2.0 * (1.0 - 0.1 * 0.01)).abs() < 1e-15);
    }

    #[test]
    fn two_steps_match_scalar_recurrence() {
        let (lr, wd, b1, b2, eps) = (0.05, 0.01, 0.9, 0.999, 1e-8);
        let grads = [0.3, -1.2];
        let mut fc = scalar_layer(0.5, 0.0);
        let mut opt = AdamW::new(&fc, &config(wd));

        let (mut w, mut m, mut v) = (0.5f64, 0.0f64, 0.0f64);
        for (t, g) in grads.iter().enumerate() {
            fc.weight.grad = vec![*g];
            opt.step(&mut fc, lr).unwrap();
            let t = (t + 1) as i32;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(t));
            let vh = v / (1.0 - b2.powi(t));
            w = w * (1.0 - lr * wd) - lr * mh / (vh.sqrt() + eps);
        }
        assert!((fc.weight.value[0] - w).abs() < 1e-12);
        assert_eq!(opt.step, 2);
    }

    #[test]
    fn zero_lr_changes_nothing() {
        let mut model = build_model::<f64>(&tiny_spec(Variant::Full, 3), 1).unwrap();
        let before = model.snapshot();
        let mut opt = AdamW::new(&model, &TrainConfig::default());
        let data = generate(&tiny_data(4, 3)).unwrap();
        let idx = [0, 1, 2, 3];
        train_step(
            &mut model,
            &mut opt,
            &data.batch(&idx),
            &data.targets(&idx),
            0.0,
        )
        .unwrap();
        // Running statistics move in train mode; trainable values must not.
        let after = model.snapshot();
        let inv = model.param_inventory();
        for ((b, a), (name, _, trainable)) in before.iter().zip(&after).zip(&inv) {
            if *trainable {
                assert_eq!(b, a, "{name}");
            }
        }
    }

    fn tiny_data(n: usize, classes: usize) -> GenConfig {
        GenConfig {
            num_records: n,
            length: 64,
            leads: 2,
            class_scales: [4, 8, 12, 16, 24, 32][..classes].to_vec(),
            ..GenConfig::default()
        }
    }

    #[test]
    fn end_to_end_gradient_matches_finite_differences() {
        for variant in [Variant::Full, Variant::NoBottleneck] {
            let spec = tiny_spec(variant, 3);
            let mut layer = WithLoss::new(
                build_model::<f64>(&spec, 3).unwrap(),
                vec![vec![1.0, 0.0, 1.0], vec![0.0, 1.0, 0.0]],
            );
            for mode in [Mode::Train, Mode::Infer] {
                let r = grad_check(&mut layer, (2, 2, 64), 1e-5, mode, 4).unwrap();
                assert!(r.max_rel_error < 1e-4, "{variant} {mode:?}: {r:?}");
            }
        }
    }

    #[test]
    fn overfits_a_single_batch() {
        let data = generate(&tiny_data(8, 3)).unwrap();
        let mut model = build_model::<f64>(&tiny_spec(Variant::Full, 3), 5).unwrap();
        let cfg = TrainConfig {
            lr_init: 1e-2,
            weight_decay: 0.0,
            ..TrainConfig::default()
        };
        let mut opt = AdamW::new(&model, &cfg);
        let idx: Vec<usize> = (0..8).collect();
        let (x, t) = (data.batch::<f64>(&idx), data.targets::<f64>(&idx));
        let mut loss = f64::INFINITY;
        for _ in 0..200 {
            loss = train_step(&mut model, &mut opt, &x, &t, cfg.lr_init).unwrap();
        }
        assert!(loss < 0.01, "final loss {loss}");
    }

    #[test]
    fn zero_classifier_starts_near_m_ln2() {
        let data = generate(&tiny_data(32, 6)).unwrap();
        let mut model = build_model::<f64>(&tiny_spec(Variant::Full, 6), 6).unwrap();
        model.zero_classifier();
        let l = mean_loss(&model, &data).unwrap();
        let expect = 6.0 * LN_2;
        assert!((l - expect).abs() <= 0.2 * expect, "{l} vs {expect}");
    }

    #[test]
    fn fit_is_deterministic_and_lr_non_increasing() {
        let data = generate(&tiny_data(24, 3)).unwrap();
        let (train, val) = (
            data.subset(&(0..16).collect::<Vec<_>>()).unwrap(),
            data.subset(&(16..24).collect::<Vec<_>>()).unwrap(),
        );
        let cfg = TrainConfig {
            batch_size: 8,
            epochs: 3,
            lr_init: 1e-3,
            lr_final: 1e-5,
            seed: 9,
            ..TrainConfig::default()
        };
        let run = || {
            let mut m = build_model::<f64>(&tiny_spec(Variant::Full, 3), 2).unwrap();
            let log = fit(&mut m, &train, &val, &cfg).unwrap();
            (log, m.snapshot())
        };
        let (a, wa) = run();
        let (b, wb) = run();
        assert_eq!(a, b);
        assert_eq!(wa, wb);
        assert_eq!(a.step_lrs.len(), 6);
        assert!(a.step_lrs.windows(2).all(|w| w[1] <= w[0]));
        assert_eq!(a.to_csv().lines().next(), Some(TrainingLog::HEADER));
        assert_eq!(a.epochs.len(), 3);
    }

    #[test]
    fn fit_keeps_best_epoch() {
        let data = generate(&tiny_data(24, 3)).unwrap();
        let (train, val) = (
            data.subset(&(0..16).collect::<Vec<_>>()).unwrap(),
            data.subset(&(16..24).collect::<Vec<_>>()).unwrap(),
        );
        let cfg = TrainConfig {
            batch_size: 8,
            epochs: 4,
            lr_init: 1e-2,
            seed: 1,
            ..TrainConfig::default()
        };
        let mut m = build_model::<f64>(&tiny_spec(Variant::Full, 3), 2).unwrap();
        let log = fit(&mut m, &train, &val, &cfg).unwrap();
        let best = log
            .epochs
            .iter()
            .map(|r| r.val_macro_f1)
            .fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(log.best_val_macro_f1, best);
        assert_eq!(evaluate(&m, &val, 0.5).unwrap().macro_f1, best);
    }

    #[test]
    fn empty_sets_rejected() {
        let data = generate(&tiny_data(4, 3)).unwrap();
        let empty = Dataset::empty(2, 64, 3);
        let mut m = build_model::<f64>(&tiny_spec(Variant::Full, 3), 2).unwrap();
        assert!(fit(&mut m, &empty, &data, &TrainConfig::default()).is_err());
        assert!(fit(&mut m, &data, &empty, &TrainConfig::default()).is_err());
        assert!(evaluate(&m, &empty, 0.5).is_err());
    }

    #[test]
    fn invalid_config_rejected() {
        assert!(TrainConfig {
            batch_size: 0,
            ..TrainConfig::default()
        }
        .validate()
        .is_err());
        assert!(TrainConfig {
            lr_final: 1.0,
            ..TrainConfig::default()
        }
        .validate()
        .is_err());
    }
}
