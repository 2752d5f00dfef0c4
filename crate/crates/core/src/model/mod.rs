//! Stem, residual stages, multi-kernel blocks and classifier assembled into
//! a trainable network.

mod blocks;
mod spec;
pub mod weights;

pub use blocks::{Block, Branch, Classifier, EcoScaleBlock, ResidualBlock, Stem};
pub use spec::{BackboneConfig, ModelSpec, StageSpec, StemSpec, Variant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{ops, Layer, Mode, Param, Tensor3};

/// An instantiated network: `stem -> (residual blocks -> multi-kernel block) x N -> GAP -> FC`.
#[derive(Debug, Clone)]
pub struct Model<S> {
    spec: ModelSpec,
    blocks: Vec<Block<S>>,
    pub mode: Mode,
}

/// Builds the layer graph for `spec` with parameters drawn from `seed`.
pub fn build_model<S: Scalar>(spec: &ModelSpec, seed: u64) -> Result<Model<S>> {
    spec.validate()?;
    let mut blocks = vec![Block::Stem(Stem::new(
        spec.leads,
        &spec.stem,
        spec.conv_bias,
    ))];
    let mut c_in = spec.stem.out_channels;
    for (i, st) in spec.stages.iter().enumerate() {
        let stage = format!("stage{}", i + 1);
        for j in 0..st.blocks {
            let stride = if j == 0 { st.stride } else { 1 };
            blocks.push(Block::Residual(ResidualBlock::new(
                format!("{stage}.block{}", j + 1),
                c_in,
                st.channels,
                stride,
                spec.conv_bias,
            )));
            c_in = st.channels;
        }
        if spec.variant.has_multiscale_blocks() {
            let plan = st
                .plan
                .as_ref()
                .ok_or_else(|| Error::invalid(format!("model.{stage}"), "missing kernel plan"))?;
            blocks.push(Block::EcoScale(EcoScaleBlock::new(
                format!("{stage}.eco"),
                st.channels,
                &plan.kernel_set,
                spec.variant,
                spec.conv_bias,
            )?));
        }
    }
    blocks.push(Block::Classifier(Classifier::new(c_in, spec.num_classes)));

    let mut model = Model {
        spec: spec.clone(),
        blocks,
        mode: Mode::Train,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for b in &mut model.blocks {
        b.init(&mut rng);
    }
    // Probe the shape chain once so a bad spec fails here rather than mid-training.
    model.trace_shapes(&Tensor3::zeros(1, spec.leads, spec.input_length))?;
    Ok(model)
}

impl<S: Scalar> Model<S> {
    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn blocks(&self) -> &[Block<S>] {
        &self.blocks
    }

    fn check_input(&self, x: &Tensor3<S>) -> Result<()> {
        if x.channels() != self.spec.leads || x.length() != self.spec.input_length {
            return Err(Error::shape(
                "input",
                format!(
                    "expected (batch, {}, {}), got {:?}",
                    self.spec.leads,
                    self.spec.input_length,
                    x.shape()
                ),
            ));
        }
        Ok(())
    }

    /// Infer-mode logits as `[batch][classes]`.
    pub fn logits(&self, x: &Tensor3<S>) -> Result<Vec<Vec<S>>> {
        Ok(self.infer(x)?.to_rows())
    }

    /// Sigmoid probabilities thresholded per label.
    pub fn predict(&self, x: &Tensor3<S>, threshold: S) -> Result<Vec<Vec<bool>>> {
        Ok(self
            .logits(x)?
            .into_iter()
            .map(|row| {
                row.into_iter()
                    .map(|z| ops::sigmoid_scalar(z) >= threshold)
                    .collect()
            })
            .collect())
    }

    /// Output shape `(channels, length)` after every top-level block, in infer mode.
    pub fn trace_shapes(&self, x: &Tensor3<S>) -> Result<Vec<(String, (usize, usize))>> {
        self.check_input(x)?;
        let mut out = Vec::with_capacity(self.blocks.len());
        let mut h = x.clone();
        for b in &self.blocks {
            h = b.infer(&h)?;
            out.push((b.name().to_string(), (h.channels(), h.length())));
        }
        Ok(out)
    }

    pub fn num_trainable(&self) -> usize {
        let mut n = 0;
        self.visit_params(&mut |p| {
            if p.trainable {
                n += p.len();
            }
        });
        n
    }

    /// Elements in non-trainable arrays (running statistics).
    pub fn num_buffers(&self) -> usize {
        let mut n = 0;
        self.visit_params(&mut |p| {
            if !p.trainable {
                n += p.len();
            }
        });
        n
    }

    /// `(name, shape, trainable)` of every parameter array in a fixed order.
    pub fn param_inventory(&self) -> Vec<(String, Vec<usize>, bool)> {
        let mut out = Vec::new();
        self.visit_params(&mut |p| out.push((p.name.clone(), p.shape.clone(), p.trainable)));
        out
    }

    pub fn zero_grad(&mut self) {
        self.visit_params_mut(&mut |p| p.zero_grad());
    }

    /// Zeroes every classifier weight and bias, so initial logits are 0.
    pub fn zero_classifier(&mut self) {
        if let Some(Block::Classifier(c)) = self.blocks.last_mut() {
            c.fc.weight.value.iter_mut().for_each(|v| *v = S::zero());
            c.fc.bias.value.iter_mut().for_each(|v| *v = S::zero());
        }
    }

    /// Copies every parameter value (trainable or not).
    pub fn snapshot(&self) -> Vec<Vec<S>> {
        let mut out = Vec::new();
        self.visit_params(&mut |p| out.push(p.value.clone()));
        out
    }

    pub fn restore(&mut self, snapshot: &[Vec<S>]) {
        let mut it = snapshot.iter();
        self.visit_params_mut(&mut |p| {
            let v = it.next().expect("snapshot from the same architecture");
            p.value.copy_from_slice(v);
        });
    }
}

impl<S: Scalar> Layer<S> for Model<S> {
    fn name(&self) -> &str {
        "model"
    }

    fn forward(&mut self, x: &Tensor3<S>, mode: Mode) -> Result<Tensor3<S>> {
        self.check_input(x)?;
        let mut h = x.clone();
        for b in &mut self.blocks {
            h = b.forward(&h, mode)?;
        }
        Ok(h)
    }

    fn infer(&self, x: &Tensor3<S>) -> Result<Tensor3<S>> {
        self.check_input(x)?;
        let mut h = x.clone();
        for b in &self.blocks {
            h = b.infer(&h)?;
        }
        Ok(h)
    }

    fn backward(&mut self, grad: &Tensor3<S>) -> Result<Tensor3<S>> {
        let mut g = grad.clone();
        for b in self.blocks.iter_mut().rev() {
            g = b.backward(&g)?;
        }
        Ok(g)
    }

    fn visit_params(&self, f: &mut dyn FnMut(&Param<S>)) {
        for b in &self.blocks {
            b.visit_params(f);
        }
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param<S>)) {
        for b in &mut self.blocks {
            b.visit_params_mut(f);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel_plan::KernelSet;
    use crate::tensor::grad_check;
    use rand::Rng;

    fn tiny(variant: Variant) -> ModelSpec {
        BackboneConfig {
            leads: 3,
            input_length: 64,
            stem_channels: 8,
            blocks: vec![1, 1],
            channels: vec![8, 8],
            strides: vec![1, 2],
            initial_cover: 8,
            strict_coverage: false,
            num_classes: 3,
            variant,
            conv_bias: true,
        }
        .to_spec()
        .unwrap()
    }

    #[test]
    fn reference_backbone_feeds_512_channels() {
        let spec = BackboneConfig::reference()
            .with_variant(Variant::BackboneOnly)
            .to_spec()
            .unwrap();
        assert_eq!(spec.classifier_inputs(), 512);
        assert!(spec.stages.iter().all(|s| s.plan.is_none()));
    }

    #[test]
    fn variant_parameter_ordering() {
        let counts: Vec<usize> = [Variant::BackboneOnly, Variant::Full, Variant::NoBottleneck]
            .into_iter()
            .map(|v| build_model::<f64>(&tiny(v), 1).unwrap().num_trainable())
            .collect();
        assert!(counts[0] < counts[1] && counts[1] < counts[2], "{counts:?}");
    }

    #[test]
    fn eco_block_weight_counts_match_bottleneck_arithmetic() {
        let set = KernelSet::with_max_prime(11).unwrap();
        let block = EcoScaleBlock::<f64>::new("e", 64, &set, Variant::Full, false).unwrap();
        let inv = {
            let mut v = Vec::new();
            block.visit_params(&mut |p| v.push((p.name.clone(), p.len())));
            v
        };
        let get = |n: &str| inv.iter().find(|(k, _)| k == n).unwrap().1;
        assert_eq!(get("e.reduce.weight"), 2048);
        let branch: usize = inv
            .iter()
            .filter(|(k, _)| k.contains(".branch") && k.ends_with("conv.weight"))
            .map(|(_, n)| n)
            .sum();
        assert_eq!(branch, 29_696);
    }

    #[test]
    fn odd_channels_rejected_for_bottleneck() {
        let set = KernelSet::with_max_prime(3).unwrap();
        assert!(EcoScaleBlock::<f64>::new("e", 7, &set, Variant::Full, false).is_err());
    }

    #[test]
    fn unit_kernel_block_preserves_shape() {
        let set = KernelSet::with_max_prime(2).unwrap();
        let mut block = EcoScaleBlock::<f64>::new("e", 4, &set, Variant::Full, false).unwrap();
        block.init(&mut ChaCha8Rng::seed_from_u64(0));
        let x = Tensor3::from_fn(2, 4, 13, |b, c, t| ((b + c * t) % 5) as f64 - 2.0);
        assert_eq!(block.forward(&x, Mode::Train).unwrap().shape(), (2, 4, 13));
        assert_eq!(block.infer(&x).unwrap().shape(), (2, 4, 13));
    }

    #[test]
    fn zero_everything_gives_zero_logits() {
        let mut m = build_model::<f64>(&tiny(Variant::Full), 3).unwrap();
        m.visit_params_mut(&mut |p| {
            if p.trainable {
                p.value.iter_mut().for_each(|v| *v = 0.0);
            }
        });
        let x = Tensor3::zeros(2, 3, 64);
        let logits = m.logits(&x).unwrap();
        assert!(logits.iter().flatten().all(|&z| z == 0.0));
        assert!(m.predict(&x, 0.5).unwrap().iter().flatten().all(|&p| p));
    }

    #[test]
    fn batched_infer_equals_single_record_infer() {
        let mut m = build_model::<f64>(&tiny(Variant::Full), 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = Tensor3::from_fn(4, 3, 64, |_, _, _| rng.gen_range(-1.0..1.0));
        // populate running statistics
        m.forward(&x, Mode::Train).unwrap();
        let all = m.logits(&x).unwrap();
        assert_eq!(all, m.logits(&x).unwrap());
        for b in 0..4 {
            let one = m.logits(&x.select_batch(&[b])).unwrap();
            for (a, e) in one[0].iter().zip(&all[b]) {
                assert!((a - e).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn wrong_input_shape_is_rejected() {
        let m = build_model::<f64>(&tiny(Variant::BackboneOnly), 0).unwrap();
        assert!(m.logits(&Tensor3::zeros(1, 3, 60)).is_err());
        assert!(m.logits(&Tensor3::zeros(1, 2, 64)).is_err());
    }

    #[test]
    fn blocks_gradients_match_finite_differences() {
        let set = KernelSet::with_max_prime(3).unwrap();
        for variant in [Variant::Full, Variant::NoBottleneck] {
            let mut block = EcoScaleBlock::<f64>::new("e", 4, &set, variant, true).unwrap();
            block.init(&mut ChaCha8Rng::seed_from_u64(2));
            let r = grad_check(&mut block, (2, 4, 9), 1e-5, Mode::Train, 3).unwrap();
            assert!(r.max_rel_error < 1e-4, "{variant}: {r:?}");
        }
        let mut res = ResidualBlock::<f64>::new("r", 3, 4, 2, true);
        res.init(&mut ChaCha8Rng::seed_from_u64(4));
        let r = grad_check(&mut res, (2, 3, 10), 1e-5, Mode::Train, 5).unwrap();
        assert!(r.max_rel_error < 1e-4, "{r:?}");
    }

    #[test]
    fn single_precision_builds_and_runs() {
        let m = build_model::<f32>(&tiny(Variant::Full), 1).unwrap();
        let out = m.logits(&Tensor3::zeros(1, 3, 64)).unwrap();
        assert_eq!(out[0].len(), 3);
    }
}
