use rand::Rng;

use super::ops::{self, ConvGeometry};
use super::{Mode, Param, Tensor3};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// A differentiable stage with cached forward state.
///
/// `forward` caches whatever `backward` needs; `backward` accumulates into
/// parameter gradients and returns the gradient with respect to the input.
/// `infer` evaluates in inference mode without touching any state.
pub trait Layer<S: Scalar> {
    fn name(&self) -> &str;

    fn forward(&mut self, x: &Tensor3<S>, mode: Mode) -> Result<Tensor3<S>>;

    fn infer(&self, x: &Tensor3<S>) -> Result<Tensor3<S>>;

    fn backward(&mut self, grad: &Tensor3<S>) -> Result<Tensor3<S>>;

    fn visit_params(&self, _f: &mut dyn FnMut(&Param<S>)) {}

    fn visit_params_mut(&mut self, _f: &mut dyn FnMut(&mut Param<S>)) {}
}

fn missing_cache(layer: &str) -> Error {
    Error::shape(layer, "backward called without a cached forward pass")
}

/// Centered uniform draw with bound `1 / sqrt(fan_in)`.
pub(crate) fn fill_uniform<S: Scalar, R: Rng + ?Sized>(
    values: &mut [S],
    fan_in: usize,
    rng: &mut R,
) {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    for v in values {
        *v = S::lit(rng.gen_range(-bound..=bound));
    }
}

#[derive(Debug, Clone)]
pub struct Conv1d<S> {
    name: String,
    geometry: ConvGeometry,
    pub weight: Param<S>,
    pub bias: Option<Param<S>>,
    input: Option<Tensor3<S>>,
}

impl<S: Scalar> Conv1d<S> {
    pub fn new(name: impl Into<String>, geometry: ConvGeometry, with_bias: bool) -> Self {
        let name = name.into();
        let weight = Param::filled(
            format!("{name}.weight"),
            vec![geometry.c_out, geometry.c_in, geometry.kernel],
            S::zero(),
        );
        let bias = with_bias
            .then(|| Param::filled(format!("{name}.bias"), vec![geometry.c_out], S::zero()));
        Conv1d {
            name,
            geometry,
            weight,
            bias,
            input: None,
        }
    }

    /// Stride-1 convolution with same-length padding.
    pub fn same(
        name: impl Into<String>,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        with_bias: bool,
    ) -> Self {
        let (pad_left, pad_right) = ops::same_padding(kernel);
        Self::new(
            name,
            ConvGeometry {
                c_in,
                c_out,
                kernel,
                stride: 1,
                pad_left,
                pad_right,
            },
            with_bias,
        )
    }

    pub fn geometry(&self) -> ConvGeometry {
        self.geometry
    }

    pub fn init<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let fan_in = self.geometry.c_in * self.geometry.kernel;
        fill_uniform(&mut self.weight.value, fan_in, rng);
        if let Some(b) = &mut self.bias {
            fill_uniform(&mut b.value, fan_in, rng);
        }
    }
}

impl<S: Scalar> Layer<S> for Conv1d<S> {
    fn name(&self) -> &str {
        &self.name
    }

    fn forward(&mut self, x: &Tensor3<S>, _mode: Mode) -> Result<Tensor3<S>> {
        let y = self.infer(x)?;
        self.input = Some(x.clone());
        Ok(y)
    }

    fn infer(&self, x: &Tensor3<S>) -> Result<Tensor3<S>> {
        ops::conv1d(
            &self.name,
            x,
            &self.weight.value,
            self.bias.as_ref().map(|b| b.value.as_slice()),
            self.geometry,
        )
    }

    fn backward(&mut self, grad: &Tensor3<S>) -> Result<Tensor3<S>> {
        let x = self.input.take().ok_or_else(|| missing_cache(&self.name))?;
        let (dx, dw, db) = ops::conv1d_backward(&x, &self.weight.value, grad, self.geometry);
        for (g, d) in self.weight.grad.iter_mut().zip(dw) {
            *g += d;
        }
        if let Some(b) = &mut self.bias {
            for (g, d) in b.grad.iter_mut().zip(db) {
                *g += d;
            }
        }
        Ok(dx)
    }

    fn visit_params(&self, f: &mut dyn FnMut(&Param<S>)) {
        f(&self.weight);
        if let Some(b) = &self.bias {
            f(b);
        }
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param<S>)) {
        f(&mut self.weight);
        if let Some(b) = &mut self.bias {
            f(b);
        }
    }
}

#[derive(Debug, Clone)]
struct BnCache<S> {
    x_hat: Tensor3<S>,
    inv_std: Vec<S>,
    mode: Mode,
}

/// Per-channel batch normalization with an affine transform and running
/// statistics updated by exponential moving average.
#[derive(Debug, Clone)]
pub struct BatchNorm1d<S> {
    name: String,
    pub scale: Param<S>,
    pub shift: Param<S>,
    pub running_mean: Param<S>,
    pub running_var: Param<S>,
    pub momentum: S,
    pub epsilon: S,
    cache: Option<BnCache<S>>,
}

impl<S: Scalar> BatchNorm1d<S> {
    pub const DEFAULT_MOMENTUM: f64 = 0.1;
    pub const DEFAULT_EPSILON: f64 = 1e-5;

    pub fn new(name: impl Into<String>, channels: usize) -> Self {
        let name = name.into();
        BatchNorm1d {
            scale: Param::filled(format!("{name}.scale"), vec![channels], S::one()),
            shift: Param::filled(format!("{name}.shift"), vec![channels], S::zero()),
            running_mean: Param::buffer(format!("{name}.running_mean"), vec![channels], S::zero()),
            running_var: Param::buffer(format!("{name}.running_var"), vec![channels], S::one()),
            momentum: S::lit(Self::DEFAULT_MOMENTUM),
            epsilon: S::lit(Self::DEFAULT_EPSILON),
            name,
            cache: None,
        }
    }

    pub fn channels(&self) -> usize {
        self.scale.len()
    }
}

impl<S: Scalar> Layer<S> for BatchNorm1d<S> {
    fn name(&self) -> &str {
        &self.name
    }

    fn forward(&mut self, x: &Tensor3<S>, mode: Mode) -> Result<Tensor3<S>> {
        if x.channels() != self.channels() {
            return Err(Error::shape(
                &self.name,
                format!(
                    "expected {} channels, got {}",
                    self.channels(),
                    x.channels()
                ),
            ));
        }
        match mode {
            Mode::Train => {
                let (y, x_hat, stats) =
                    ops::batch_norm_train(x, &self.scale.value, &self.shift.value, self.epsilon);
                let m = self.momentum;
                let keep = S::one() - m;
                for (r, &v) in self.running_mean.value.iter_mut().zip(&stats.mean) {
                    *r = keep * *r + m * v;
                }
                for (r, &v) in self.running_var.value.iter_mut().zip(&stats.var) {
                    *r = keep * *r + m * v;
                }
                self.cache = Some(BnCache {
                    x_hat,
                    inv_std: stats.inv_std,
                    mode,
                });
                Ok(y)
            }
            Mode::Infer => {
                let (y, x_hat, inv_std) = ops::batch_norm_infer(
                    x,
                    &self.scale.value,
                    &self.shift.value,
                    &self.running_mean.value,
                    &self.running_var.value,
                    self.epsilon,
                );
                self.cache = Some(BnCache {
                    x_hat,
                    inv_std,
                    mode,
                });
                Ok(y)
            }
        }
    }

    fn infer(&self, x: &Tensor3<S>) -> Result<Tensor3<S>> {
        if x.channels() != self.channels() {
            return Err(Error::shape(
                &self.name,
                format!(
                    "expected {} channels, got {}",
                    self.channels(),
                    x.channels()
                ),
            ));
        }
        Ok(ops::batch_norm_infer(
            x,
            &self.scale.value,
            &self.shift.value,
            &self.running_mean.value,
            &self.running_var.value,
            self.epsilon,
        )
        .0)
    }

    fn backward(&mut self, grad: &Tensor3<S>) -> Result<Tensor3<S>> {
        let cache = self.cache.take().ok_or_else(|| missing_cache(&self.name))?;
        let (dx, dscale, dshift) = match cache.mode {
            Mode::Train => ops::batch_norm_train_backward(
                grad,
                &cache.x_hat,
                &cache.inv_std,
                &self.scale.value,
            ),
            Mode::Infer => ops::batch_norm_infer_backward(
                grad,
                &cache.x_hat,
                &cache.inv_std,
                &self.scale.value,
            ),
        };
        for (g, d) in self.scale.grad.iter_mut().zip(dscale) {
            *g += d;
        }
        for (g, d) in self.shift.grad.iter_mut().zip(dshift) {
            *g += d;
        }
        Ok(dx)
    }

    fn visit_params(&self, f: &mut dyn FnMut(&Param<S>)) {
        f(&self.scale);
        f(&self.shift);
        f(&self.running_mean);
        f(&self.running_var);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param<S>)) {
        f(&mut self.scale);
        f(&mut self.shift);
        f(&mut self.running_mean);
        f(&mut self.running_var);
    }
}

#[derive(Debug, Clone)]
pub struct Relu<S> {
    name: String,
    output: Option<Tensor3<S>>,
}

impl<S: Scalar> Relu<S> {
    pub fn new(name: impl Into<String>) -> Self {
        Relu {
            name: name.into(),
            output: None,
        }
    }
}

impl<S: Scalar> Layer<S> for Relu<S> {
    fn name(&self) -> &str {
        &self.name
    }

    fn forward(&mut self, x: &Tensor3<S>, _mode: Mode) -> Result<Tensor3<S>> {
        let y = ops::relu(x);
        self.output = Some(y.clone());
        Ok(y)
    }

    fn infer(&self, x: &Tensor3<S>) -> Result<Tensor3<S>> {
        Ok(ops::relu(x))
    }

    fn backward(&mut self, grad: &Tensor3<S>) -> Result<Tensor3<S>> {
        let y = self
            .output
            .take()
            .ok_or_else(|| missing_cache(&self.name))?;
        Ok(ops::relu_backward(&y, grad))
    }
}

#[derive(Debug, Clone)]
pub struct MaxPool1d {
    name: String,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    cache: Option<((usize, usize, usize), Vec<usize>)>,
}

impl MaxPool1d {
    pub fn new(name: impl Into<String>, kernel: usize, stride: usize, pad: usize) -> Self {
        MaxPool1d {
            name: name.into(),
            kernel,
            stride,
            pad,
            cache: None,
        }
    }
}

impl<S: Scalar> Layer<S> for MaxPool1d {
    fn name(&self) -> &str {
        &self.name
    }

    fn forward(&mut self, x: &Tensor3<S>, _mode: Mode) -> Result<Tensor3<S>> {
        let (y, arg) = ops::max_pool(&self.name, x, self.kernel, self.stride, self.pad)?;
        self.cache = Some((x.shape(), arg));
        Ok(y)
    }

    fn infer(&self, x: &Tensor3<S>) -> Result<Tensor3<S>> {
        Ok(ops::max_pool(&self.name, x, self.kernel, self.stride, self.pad)?.0)
    }

    fn backward(&mut self, grad: &Tensor3<S>) -> Result<Tensor3<S>> {
        let (shape, arg) = self.cache.take().ok_or_else(|| missing_cache(&self.name))?;
        Ok(ops::max_pool_backward(shape, &arg, grad))
    }
}

#[derive(Debug, Clone)]
pub struct GlobalAvgPool {
    name: String,
    length: Option<usize>,
}

impl GlobalAvgPool {
    pub fn new(name: impl Into<String>) -> Self {
        GlobalAvgPool {
            name: name.into(),
            length: None,
        }
    }
}

impl<S: Scalar> Layer<S> for GlobalAvgPool {
    fn name(&self) -> &str {
        &self.name
    }

    fn forward(&mut self, x: &Tensor3<S>, _mode: Mode) -> Result<Tensor3<S>> {
        self.length = Some(x.length());
        Ok(ops::global_avg_pool(x))
    }

    fn infer(&self, x: &Tensor3<S>) -> Result<Tensor3<S>> {
        Ok(ops::global_avg_pool(x))
    }

    fn backward(&mut self, grad: &Tensor3<S>) -> Result<Tensor3<S>> {
        let len = self
            .length
            .take()
            .ok_or_else(|| missing_cache(&self.name))?;
        Ok(ops::global_avg_pool_backward(len, grad))
    }
}

/// Fully connected layer on length-1 tensors.
#[derive(Debug, Clone)]
pub struct Linear<S> {
    name: String,
    pub in_features: usize,
    pub out_features: usize,
    pub weight: Param<S>,
    pub bias: Param<S>,
    input: Option<Tensor3<S>>,
}

impl<S: Scalar> Linear<S> {
    pub fn new(name: impl Into<String>, in_features: usize, out_features: usize) -> Self {
        let name = name.into();
        Linear {
            weight: Param::filled(
                format!("{name}.weight"),
                vec![out_features, in_features],
                S::zero(),
            ),
            bias: Param::filled(format!("{name}.bias"), vec![out_features], S::zero()),
            name,
            in_features,
            out_features,
            input: None,
        }
    }

    pub fn init<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        fill_uniform(&mut self.weight.value, self.in_features, rng);
        fill_uniform(&mut self.bias.value, self.in_features, rng);
    }
}

impl<S: Scalar> Layer<S> for Linear<S> {
    fn name(&self) -> &str {
        &self.name
    }

    fn forward(&mut self, x: &Tensor3<S>, _mode: Mode) -> Result<Tensor3<S>> {
        let y = self.infer(x)?;
        self.input = Some(x.clone());
        Ok(y)
    }

    fn infer(&self, x: &Tensor3<S>) -> Result<Tensor3<S>> {
        ops::linear(
            &self.name,
            x,
            &self.weight.value,
            &self.bias.value,
            self.in_features,
            self.out_features,
        )
    }

    fn backward(&mut self, grad: &Tensor3<S>) -> Result<Tensor3<S>> {
        let x = self.input.take().ok_or_else(|| missing_cache(&self.name))?;
        let (dx, dw, db) = ops::linear_backward(
            &x,
            &self.weight.value,
            grad,
            self.in_features,
            self.out_features,
        );
        for (g, d) in self.weight.grad.iter_mut().zip(dw) {
            *g += d;
        }
        for (g, d) in self.bias.grad.iter_mut().zip(db) {
            *g += d;
        }
        Ok(dx)
    }

    fn visit_params(&self, f: &mut dyn FnMut(&Param<S>)) {
        f(&self.weight);
        f(&self.bias);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param<S>)) {
        f(&mut self.weight);
        f(&mut self.bias);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn bn_train_output_is_standardized() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let x = Tensor3::from_fn(4, 3, 9, |_, c, _| {
            rng.gen_range(-2.0..2.0) * (c + 1) as f64 + c as f64
        });
        let mut bn = BatchNorm1d::<f64>::new("bn", 3);
        bn.epsilon = 0.0;
        let y = bn.forward(&x, Mode::Train).unwrap();
        for c in 0..3 {
            let vals: Vec<f64> = (0..4).flat_map(|b| y.row(b, c).to_vec()).collect();
            let n = vals.len() as f64;
            let mean = vals.iter().sum::<f64>() / n;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            assert!(mean.abs() < 1e-9);
            assert!((var - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn bn_running_stats_move_by_momentum() {
        let x = Tensor3::from_vec(1, 1, 2, vec![1.0, 3.0]).unwrap();
        let mut bn = BatchNorm1d::<f64>::new("bn", 1);
        bn.forward(&x, Mode::Train).unwrap();
        assert!((bn.running_mean.value[0] - 0.2).abs() < 1e-15);
        assert!((bn.running_var.value[0] - 1.0).abs() < 1e-15);
        assert!(!bn.running_mean.trainable);
    }

    #[test]
    fn backward_without_forward_errors() {
        let mut conv = Conv1d::<f64>::same("c", 1, 1, 3, false);
        assert!(conv.backward(&Tensor3::zeros(1, 1, 4)).is_err());
    }

    #[test]
    fn unit_conv_is_identity() {
        let mut conv = Conv1d::<f64>::same("c", 2, 2, 1, true);
        conv.weight.value = vec![1.0, 0.0, 0.0, 1.0];
        let x = Tensor3::from_fn(3, 2, 5, |b, c, t| (b + 2 * c) as f64 - t as f64 * 0.3);
        assert_eq!(conv.infer(&x).unwrap(), x);
    }
}
