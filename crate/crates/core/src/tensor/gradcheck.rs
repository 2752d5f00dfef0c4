use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Layer, Mode, Tensor3};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Worst disagreement between analytic and central-difference gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// `max |analytic - numeric| / max(1, |analytic|, |numeric|)` over every
    /// input element and trainable parameter element.
    pub max_rel_error: f64,
    pub input_error: f64,
    pub param_error: f64,
    /// Where the maximum occurred, e.g. `input[17]` or `stem.conv.weight[3]`.
    pub worst: String,
    pub checked: usize,
}

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / 1f64.max(a.abs()).max(n.abs())
}

fn probe_loss<S: Scalar, L: Layer<S> + ?Sized>(
    layer: &mut L,
    x: &Tensor3<S>,
    probe: &[S],
    mode: Mode,
) -> Result<f64> {
    let y = layer.forward(x, mode)?;
    let loss: S = y.data().iter().zip(probe).map(|(&a, &b)| a * b).sum();
    let loss = loss.as_f64();
    if !loss.is_finite() {
        return Err(Error::NonFinite(format!("loss through {}", layer.name())));
    }
    Ok(loss)
}

/// Checks `layer`'s gradient rules against central differences of the scalar
/// loss `sum(output * probe)` for a random continuous input and probe.
pub fn grad_check<S: Scalar, L: Layer<S> + ?Sized>(
    layer: &mut L,
    input_shape: (usize, usize, usize),
    epsilon: f64,
    mode: Mode,
    seed: u64,
) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (b, c, l) = input_shape;
    let x = Tensor3::from_fn(b, c, l, |_, _, _| S::lit(rng.gen_range(-1.0..1.0)));

    layer.visit_params_mut(&mut |p| p.zero_grad());
    let y = layer.forward(&x, mode)?;
    let probe: Vec<S> = (0..y.data().len())
        .map(|_| S::lit(rng.gen_range(-1.0..1.0)))
        .collect();
    let dx = layer.backward(&y.with_data(probe.clone()))?;
    if !dx.all_finite() {
        return Err(Error::NonFinite(format!(
            "input gradient of {}",
            layer.name()
        )));
    }

    let eps = S::lit(epsilon);
    let two_eps = 2.0 * epsilon;
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        input_error: 0.0,
        param_error: 0.0,
        worst: String::new(),
        checked: 0,
    };

    let mut xp = x.clone();
    for i in 0..x.data().len() {
        let orig = xp.data()[i];
        xp.data_mut()[i] = orig + eps;
        let up = probe_loss(layer, &xp, &probe, mode)?;
        xp.data_mut()[i] = orig - eps;
        let down = probe_loss(layer, &xp, &probe, mode)?;
        xp.data_mut()[i] = orig;
        let e = rel_err(dx.data()[i].as_f64(), (up - down) / two_eps);
        report.checked += 1;
        report.input_error = report.input_error.max(e);
        if e > report.max_rel_error || report.worst.is_empty() {
            report.max_rel_error = report.max_rel_error.max(e);
            report.worst = format!("input[{i}]");
        }
    }

    // Snapshot analytic parameter gradients before perturbing anything.
    let mut analytic: Vec<(String, Vec<S>)> = Vec::new();
    layer.visit_params(&mut |p| {
        if p.trainable {
            analytic.push((p.name.clone(), p.grad.clone()));
        }
    });

    for (pi, (name, grads)) in analytic.iter().enumerate() {
        for (k, g) in grads.iter().enumerate() {
            let up = perturbed(layer, pi, k, eps, &x, &probe, mode)?;
            let down = perturbed(layer, pi, k, -eps, &x, &probe, mode)?;
            let e = rel_err(g.as_f64(), (up - down) / two_eps);
            report.checked += 1;
            report.param_error = report.param_error.max(e);
            if e > report.max_rel_error {
                report.max_rel_error = e;
                report.worst = format!("{name}[{k}]");
            }
        }
    }
    Ok(report)
}

fn perturbed<S: Scalar, L: Layer<S> + ?Sized>(
    layer: &mut L,
    param_index: usize,
    element: usize,
    delta: S,
    x: &Tensor3<S>,
    probe: &[S],
    mode: Mode,
) -> Result<f64> {
    nudge(layer, param_index, element, delta);
    let loss = probe_loss(layer, x, probe, mode);
    nudge(layer, param_index, element, -delta);
    loss
}

fn nudge<S: Scalar, L: Layer<S> + ?Sized>(
    layer: &mut L,
    param_index: usize,
    element: usize,
    delta: S,
) {
    let mut i = 0;
    layer.visit_params_mut(&mut |p| {
        if p.trainable {
            if i == param_index {
                p.value[element] += delta;
            }
            i += 1;
        }
    });
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::ops::ConvGeometry;
    use crate::tensor::{BatchNorm1d, Conv1d, GlobalAvgPool, Linear, MaxPool1d, Relu};

    fn init_conv(conv: &mut Conv1d<f64>, seed: u64) {
        conv.init(&mut ChaCha8Rng::seed_from_u64(seed));
    }

    #[test]
    fn linear_layer() {
        let mut fc = Linear::<f64>::new("fc", 5, 3);
        fc.init(&mut ChaCha8Rng::seed_from_u64(1));
        let r = grad_check(&mut fc, (4, 5, 1), 1e-5, Mode::Train, 2).unwrap();
        assert!(r.max_rel_error < 1e-6, "{r:?}");
    }

    #[test]
    fn strided_padded_conv() {
        let g = ConvGeometry {
            c_in: 3,
            c_out: 4,
            kernel: 3,
            stride: 2,
            pad_left: 1,
            pad_right: 1,
        };
        let mut conv = Conv1d::<f64>::new("conv", g, true);
        init_conv(&mut conv, 3);
        let r = grad_check(&mut conv, (2, 3, 11), 1e-5, Mode::Train, 4).unwrap();
        assert!(r.max_rel_error < 1e-4, "{r:?}");
    }

    #[test]
    fn even_kernel_same_conv() {
        let mut conv = Conv1d::<f64>::same("conv", 2, 2, 2, true);
        init_conv(&mut conv, 5);
        let r = grad_check(&mut conv, (2, 2, 7), 1e-5, Mode::Train, 6).unwrap();
        assert!(r.max_rel_error < 1e-4, "{r:?}");
    }

    #[test]
    fn batch_norm_both_modes() {
        let mut bn = BatchNorm1d::<f64>::new("bn", 3);
        bn.scale.value = vec![0.5, 1.5, -0.7];
        bn.shift.value = vec![0.1, -0.2, 0.3];
        let r = grad_check(&mut bn, (3, 3, 5), 1e-5, Mode::Train, 7).unwrap();
        assert!(r.max_rel_error < 1e-4, "{r:?}");
        bn.running_mean.value = vec![0.2, -0.1, 0.05];
        bn.running_var.value = vec![0.8, 1.3, 0.6];
        let r = grad_check(&mut bn, (3, 3, 5), 1e-5, Mode::Infer, 8).unwrap();
        assert!(r.max_rel_error < 1e-4, "{r:?}");
    }

    #[test]
    fn pointwise_and_pooling() {
        let r = grad_check(
            &mut Relu::<f64>::new("relu"),
            (2, 3, 6),
            1e-6,
            Mode::Train,
            9,
        )
        .unwrap();
        assert!(r.max_rel_error < 1e-4, "{r:?}");
        let r = grad_check::<f64, _>(
            &mut MaxPool1d::new("pool", 3, 2, 1),
            (2, 2, 9),
            1e-6,
            Mode::Train,
            10,
        )
        .unwrap();
        assert!(r.max_rel_error < 1e-4, "{r:?}");
        let r = grad_check::<f64, _>(
            &mut GlobalAvgPool::new("gap"),
            (2, 3, 7),
            1e-5,
            Mode::Train,
            11,
        )
        .unwrap();
        assert!(r.max_rel_error < 1e-6, "{r:?}");
    }
}
