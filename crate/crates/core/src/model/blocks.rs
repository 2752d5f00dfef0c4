use rand::Rng;

use super::spec::{StemSpec, Variant};
use crate::error::{Error, Result};
use crate::kernel_plan::KernelSet;
use crate::scalar::Scalar;
use crate::tensor::ops::{self, ConvGeometry};
use crate::tensor::{
    BatchNorm1d, Conv1d, GlobalAvgPool, Layer, Linear, MaxPool1d, Mode, Param, Relu, Tensor3,
};

/// Kernel-7 stride-2 convolution, batch norm, ReLU, max pooling.
#[derive(Debug, Clone)]
pub struct Stem<S> {
    pub conv: Conv1d<S>,
    pub bn: BatchNorm1d<S>,
    relu: Relu<S>,
    pool: MaxPool1d,
}

impl<S: Scalar> Stem<S> {
    pub fn new(leads: usize, spec: &StemSpec, bias: bool) -> Self {
        let pad = spec.conv_padding();
        let geometry = ConvGeometry {
            c_in: leads,
            c_out: spec.out_channels,
            kernel: spec.kernel,
            stride: spec.stride,
            pad_left: pad,
            pad_right: pad,
        };
        Stem {
            conv: Conv1d::new("stem.conv", geometry, bias),
            bn: BatchNorm1d::new("stem.bn", spec.out_channels),
            relu: Relu::new("stem.relu"),
            pool: MaxPool1d::new(
                "stem.pool",
                spec.pool_kernel,
                spec.pool_stride,
                spec.pool_pad,
            ),
        }
    }

    pub fn init<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        self.conv.init(rng);
    }
}

impl<S: Scalar> Layer<S> for Stem<S> {
    fn name(&self) -> &str {
        "stem"
    }

    fn forward(&mut self, x: &Tensor3<S>, mode: Mode) -> Result<Tensor3<S>> {
        let y = self.conv.forward(x, mode)?;
        let y = self.bn.forward(&y, mode)?;
        let y = self.relu.forward(&y, mode)?;
        self.pool.forward(&y, mode)
    }

    fn infer(&self, x: &Tensor3<S>) -> Result<Tensor3<S>> {
        let y = self.conv.infer(x)?;
        let y = self.bn.infer(&y)?;
        let y = Layer::<S>::infer(&self.relu, &y)?;
        Layer::<S>::infer(&self.pool, &y)
    }

    fn backward(&mut self, grad: &Tensor3<S>) -> Result<Tensor3<S>> {
        let g = Layer::<S>::backward(&mut self.pool, grad)?;
        let g = self.relu.backward(&g)?;
        let g = self.bn.backward(&g)?;
        self.conv.backward(&g)
    }

    fn visit_params(&self, f: &mut dyn FnMut(&Param<S>)) {
        self.conv.visit_params(f);
        self.bn.visit_params(f);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param<S>)) {
        self.conv.visit_params_mut(f);
        self.bn.visit_params_mut(f);
    }
}

/// Two kernel-3 convolutions with batch norm and an identity or 1x1
/// projection skip; ReLU after the addition.
#[derive(Debug, Clone)]
pub struct ResidualBlock<S> {
    name: String,
    pub conv1: Conv1d<S>,
    pub bn1: BatchNorm1d<S>,
    relu1: Relu<S>,
    pub conv2: Conv1d<S>,
    pub bn2: BatchNorm1d<S>,
    pub projection: Option<(Conv1d<S>, BatchNorm1d<S>)>,
    out_relu: Relu<S>,
}

impl<S: Scalar> ResidualBlock<S> {
    pub fn new(
        name: impl Into<String>,
        c_in: usize,
        c_out: usize,
        stride: usize,
        bias: bool,
    ) -> Self {
        let name = name.into();
        let conv1 = Conv1d::new(
            format!("{name}.conv1"),
            ConvGeometry {
                c_in,
                c_out,
                kernel: 3,
                stride,
                pad_left: 1,
                pad_right: 1,
            },
            bias,
        );
        let projection = (stride != 1 || c_in != c_out).then(|| {
            (
                Conv1d::new(
                    format!("{name}.proj"),
                    ConvGeometry {
                        c_in,
                        c_out,
                        kernel: 1,
                        stride,
                        pad_left: 0,
                        pad_right: 0,
                    },
                    bias,
                ),
                BatchNorm1d::new(format!("{name}.proj_bn"), c_out),
            )
        });
        ResidualBlock {
            conv1,
            bn1: BatchNorm1d::new(format!("{name}.bn1"), c_out),
            relu1: Relu::new(format!("{name}.relu1")),
            conv2: Conv1d::same(format!("{name}.conv2"), c_out, c_out, 3, bias),
            bn2: BatchNorm1d::new(format!("{name}.bn2"), c_out),
            projection,
            out_relu: Relu::new(format!("{name}.relu")),
            name,
        }
    }

    pub fn init<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        self.conv1.init(rng);
        self.conv2.init(rng);
        if let Some((p, _)) = &mut self.projection {
            p.init(rng);
        }
    }
}

impl<S: Scalar> Layer<S> for ResidualBlock<S> {
    fn name(&self) -> &str {
        &self.name
    }

    fn forward(&mut self, x: &Tensor3<S>, mode: Mode) -> Result<Tensor3<S>> {
        let a = self.conv1.forward(x, mode)?;
        let a = self.bn1.forward(&a, mode)?;
        let a = self.relu1.forward(&a, mode)?;
        let a = self.conv2.forward(&a, mode)?;
        let a = self.bn2.forward(&a, mode)?;
        let skip = match &mut self.projection {
            Some((conv, bn)) => {
                let s = conv.forward(x, mode)?;
                bn.forward(&s, mode)?
            }
            None => x.clone(),
        };
        self.out_relu.forward(&a.add(&skip)?, mode)
    }

    fn infer(&self, x: &Tensor3<S>) -> Result<Tensor3<S>> {
        let a = self.conv1.infer(x)?;
        let a = self.bn1.infer(&a)?;
        let a = self.relu1.infer(&a)?;
        let a = self.conv2.infer(&a)?;
        let a = self.bn2.infer(&a)?;
        let skip = match &self.projection {
            Some((conv, bn)) => bn.infer(&conv.infer(x)?)?,
            None => x.clone(),
        };
        self.out_relu.infer(&a.add(&skip)?)
    }

    fn backward(&mut self, grad: &Tensor3<S>) -> Result<Tensor3<S>> {
        let g = self.out_relu.backward(grad)?;
        let a = self.bn2.backward(&g)?;
        let a = self.conv2.backward(&a)?;
        let a = self.relu1.backward(&a)?;
        let a = self.bn1.backward(&a)?;
        let mut dx = self.conv1.backward(&a)?;
        match &mut self.projection {
            Some((conv, bn)) => {
                let s = bn.backward(&g)?;
                dx.add_assign(&conv.backward(&s)?);
            }
            None => dx.add_assign(&g),
        }
        Ok(dx)
    }

    fn visit_params(&self, f: &mut dyn FnMut(&Param<S>)) {
        self.conv1.visit_params(f);
        self.bn1.visit_params(f);
        self.conv2.visit_params(f);
        self.bn2.visit_params(f);
        if let Some((c, b)) = &self.projection {
            c.visit_params(f);
            b.visit_params(f);
        }
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param<S>)) {
        self.conv1.visit_params_mut(f);
        self.bn1.visit_params_mut(f);
        self.conv2.visit_params_mut(f);
        self.bn2.visit_params_mut(f);
        if let Some((c, b)) = &mut self.projection {
            c.visit_params_mut(f);
            b.visit_params_mut(f);
        }
    }
}

/// One parallel multi-kernel branch: same-length convolution plus batch norm.
#[derive(Debug, Clone)]
pub struct Branch<S> {
    pub conv: Conv1d<S>,
    pub bn: BatchNorm1d<S>,
}

impl<S: Scalar> Branch<S> {
    fn new(prefix: &str, kernel: usize, width: usize, bias: bool) -> Self {
        Branch {
            conv: Conv1d::same(
                format!("{prefix}.branch{kernel}.conv"),
                width,
                width,
                kernel,
                bias,
            ),
            bn: BatchNorm1d::new(format!("{prefix}.branch{kernel}.bn"), width),
        }
    }

    fn forward(&mut self, x: &Tensor3<S>, mode: Mode) -> Result<Tensor3<S>> {
        let y = self.conv.forward(x, mode)?;
        self.bn.forward(&y, mode)
    }

    fn infer(&self, x: &Tensor3<S>) -> Result<Tensor3<S>> {
        self.bn.infer(&self.conv.infer(x)?)
    }

    fn backward(&mut self, grad: &Tensor3<S>) -> Result<Tensor3<S>> {
        let g = self.bn.backward(grad)?;
        self.conv.backward(&g)
    }
}

#[derive(Debug, Clone)]
struct Bottleneck<S> {
    reduce: Conv1d<S>,
    reduce_bn: BatchNorm1d<S>,
    reduce_relu: Relu<S>,
    mid_relu: Relu<S>,
    expand: Conv1d<S>,
    expand_bn: BatchNorm1d<S>,
}

/// Multi-kernel block with a residual skip around it.
///
/// Full variant: 1x1 reduce to C/2 (BN, ReLU), one branch per kernel at C/2,
/// concat, ReLU, 1x1 expand back to C (BN), add input, ReLU.
/// No-bottleneck variant: branches at width C, summed, add input, ReLU.
#[derive(Debug, Clone)]
pub struct EcoScaleBlock<S> {
    name: String,
    channels: usize,
    kernel_set: KernelSet,
    bottleneck: Option<Bottleneck<S>>,
    pub branches: Vec<Branch<S>>,
    out_relu: Relu<S>,
}

impl<S: Scalar> EcoScaleBlock<S> {
    pub fn new(
        name: impl Into<String>,
        channels: usize,
        kernel_set: &KernelSet,
        variant: Variant,
        bias: bool,
    ) -> Result<Self> {
        let name = name.into();
        let (bottleneck, width) = match variant {
            Variant::Full => {
                if !channels.is_multiple_of(2) || channels == 0 {
                    return Err(Error::invalid(
                        format!("{name}.channels"),
                        format!("bottleneck needs an even channel count, got {channels}"),
                    ));
                }
                let half = channels / 2;
                let b = Bottleneck {
                    reduce: Conv1d::same(format!("{name}.reduce"), channels, half, 1, bias),
                    reduce_bn: BatchNorm1d::new(format!("{name}.reduce_bn"), half),
                    reduce_relu: Relu::new(format!("{name}.reduce_relu")),
                    mid_relu: Relu::new(format!("{name}.mid_relu")),
                    expand: Conv1d::same(
                        format!("{name}.expand"),
                        half * kernel_set.len(),
                        channels,
                        1,
                        bias,
                    ),
                    expand_bn: BatchNorm1d::new(format!("{name}.expand_bn"), channels),
                };
                (Some(b), half)
            }
            Variant::NoBottleneck => (None, channels),
            Variant::BackboneOnly => {
                return Err(Error::invalid(
                    format!("{name}.variant"),
                    "backbone_only has no multi-kernel blocks",
                ))
            }
        };
        let branches = kernel_set
            .kernels()
            .iter()
            .map(|&k| Branch::new(&name, k, width, bias))
            .collect();
        Ok(EcoScaleBlock {
            out_relu: Relu::new(format!("{name}.relu")),
            name,
            channels,
            kernel_set: kernel_set.clone(),
            bottleneck,
            branches,
        })
    }

    pub fn kernel_set(&self) -> &KernelSet {
        &self.kernel_set
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn init<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        if let Some(b) = &mut self.bottleneck {
            b.reduce.init(rng);
        }
        for br in &mut self.branches {
            br.conv.init(rng);
        }
        if let Some(b) = &mut self.bottleneck {
            b.expand.init(rng);
        }
    }

    fn check_input(&self, x: &Tensor3<S>) -> Result<()> {
        if x.channels() != self.channels {
            return Err(Error::shape(
                &self.name,
                format!("expected {} channels, got {}", self.channels, x.channels()),
            ));
        }
        Ok(())
    }
}

impl<S: Scalar> Layer<S> for EcoScaleBlock<S> {
    fn name(&self) -> &str {
        &self.name
    }

    fn forward(&mut self, x: &Tensor3<S>, mode: Mode) -> Result<Tensor3<S>> {
        self.check_input(x)?;
        let merged = match &mut self.bottleneck {
            Some(b) => {
                let r = b.reduce.forward(x, mode)?;
                let r = b.reduce_bn.forward(&r, mode)?;
                let r = b.reduce_relu.forward(&r, mode)?;
                let outs = self
                    .branches
                    .iter_mut()
                    .map(|br| br.forward(&r, mode))
                    .collect::<Result<Vec<_>>>()?;
                let cat = ops::concat_channels(&outs)?;
                let c = b.mid_relu.forward(&cat, mode)?;
                let e = b.expand.forward(&c, mode)?;
                b.expand_bn.forward(&e, mode)?
            }
            None => {
                let mut acc: Option<Tensor3<S>> = None;
                for br in &mut self.branches {
                    let y = br.forward(x, mode)?;
                    match &mut acc {
                        Some(a) => a.add_assign(&y),
                        None => acc = Some(y),
                    }
                }
                acc.expect("kernel sets are never empty")
            }
        };
        self.out_relu.forward(&merged.add(x)?, mode)
    }

    fn infer(&self, x: &Tensor3<S>) -> Result<Tensor3<S>> {
        self.check_input(x)?;
        let merged = match &self.bottleneck {
            Some(b) => {
                let r = b.reduce_bn.infer(&b.reduce.infer(x)?)?;
                let r = b.reduce_relu.infer(&r)?;
                let outs = self
                    .branches
                    .iter()
                    .map(|br| br.infer(&r))
                    .collect::<Result<Vec<_>>>()?;
                let c = b.mid_relu.infer(&ops::concat_channels(&outs)?)?;
                b.expand_bn.infer(&b.expand.infer(&c)?)?
            }
            None => {
                let mut acc: Option<Tensor3<S>> = None;
                for br in &self.branches {
                    let y = br.infer(x)?;
                    match &mut acc {
                        Some(a) => a.add_assign(&y),
                        None => acc = Some(y),
                    }
                }
                acc.expect("kernel sets are never empty")
            }
        };
        self.out_relu.infer(&merged.add(x)?)
    }

    fn backward(&mut self, grad: &Tensor3<S>) -> Result<Tensor3<S>> {
        let g = self.out_relu.backward(grad)?;
        let mut dx = g.clone();
        match &mut self.bottleneck {
            Some(b) => {
                let ge = b.expand_bn.backward(&g)?;
                let gc = b.expand.backward(&ge)?;
                let gcat = b.mid_relu.backward(&gc)?;
                let sizes = vec![gcat.channels() / self.branches.len(); self.branches.len()];
                let parts = ops::split_channels(&gcat, &sizes)?;
                let mut gr: Option<Tensor3<S>> = None;
                for (br, part) in self.branches.iter_mut().zip(&parts) {
                    let d = br.backward(part)?;
                    match &mut gr {
                        Some(a) => a.add_assign(&d),
                        None => gr = Some(d),
                    }
                }
                let gr = b.reduce_relu.backward(&gr.expect("non-empty"))?;
                let gr = b.reduce_bn.backward(&gr)?;
                dx.add_assign(&b.reduce.backward(&gr)?);
            }
            None => {
                for br in &mut self.branches {
                    dx.add_assign(&br.backward(&g)?);
                }
            }
        }
        Ok(dx)
    }

    fn visit_params(&self, f: &mut dyn FnMut(&Param<S>)) {
        if let Some(b) = &self.bottleneck {
            b.reduce.visit_params(f);
            b.reduce_bn.visit_params(f);
        }
        for br in &self.branches {
            br.conv.visit_params(f);
            br.bn.visit_params(f);
        }
        if let Some(b) = &self.bottleneck {
            b.expand.visit_params(f);
            b.expand_bn.visit_params(f);
        }
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param<S>)) {
        if let Some(b) = &mut self.bottleneck {
            b.reduce.visit_params_mut(f);
            b.reduce_bn.visit_params_mut(f);
        }
        for br in &mut self.branches {
            br.conv.visit_params_mut(f);
            br.bn.visit_params_mut(f);
        }
        if let Some(b) = &mut self.bottleneck {
            b.expand.visit_params_mut(f);
            b.expand_bn.visit_params_mut(f);
        }
    }
}

/// Global average pooling followed by a fully connected layer.
#[derive(Debug, Clone)]
pub struct Classifier<S> {
    gap: GlobalAvgPool,
    pub fc: Linear<S>,
}

impl<S: Scalar> Classifier<S> {
    pub fn new(in_features: usize, classes: usize) -> Self {
        Classifier {
            gap: GlobalAvgPool::new("head.gap"),
            fc: Linear::new("head.fc", in_features, classes),
        }
    }
}

impl<S: Scalar> Layer<S> for Classifier<S> {
    fn name(&self) -> &str {
        "head"
    }

    fn forward(&mut self, x: &Tensor3<S>, mode: Mode) -> Result<Tensor3<S>> {
        let v = self.gap.forward(x, mode)?;
        self.fc.forward(&v, mode)
    }

    fn infer(&self, x: &Tensor3<S>) -> Result<Tensor3<S>> {
        self.fc.infer(&Layer::<S>::infer(&self.gap, x)?)
    }

    fn backward(&mut self, grad: &Tensor3<S>) -> Result<Tensor3<S>> {
        let g = self.fc.backward(grad)?;
        Layer::<S>::backward(&mut self.gap, &g)
    }

    fn visit_params(&self, f: &mut dyn FnMut(&Param<S>)) {
        self.fc.visit_params(f);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param<S>)) {
        self.fc.visit_params_mut(f);
    }
}

/// Top-level units of a model, in forward order.
#[derive(Debug, Clone)]
pub enum Block<S> {
    Stem(Stem<S>),
    Residual(ResidualBlock<S>),
    EcoScale(EcoScaleBlock<S>),
    Classifier(Classifier<S>),
}

impl<S: Scalar> Block<S> {
    pub(crate) fn init<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        match self {
            Block::Stem(b) => b.init(rng),
            Block::Residual(b) => b.init(rng),
            Block::EcoScale(b) => b.init(rng),
            Block::Classifier(b) => b.fc.init(rng),
        }
    }

    fn layer(&self) -> &dyn Layer<S> {
        match self {
            Block::Stem(b) => b,
            Block::Residual(b) => b,
            Block::EcoScale(b) => b,
            Block::Classifier(b) => b,
        }
    }

    fn layer_mut(&mut self) -> &mut dyn Layer<S> {
        match self {
            Block::Stem(b) => b,
            Block::Residual(b) => b,
            Block::EcoScale(b) => b,
            Block::Classifier(b) => b,
        }
    }
}

impl<S: Scalar> Layer<S> for Block<S> {
    fn name(&self) -> &str {
        self.layer().name()
    }

    fn forward(&mut self, x: &Tensor3<S>, mode: Mode) -> Result<Tensor3<S>> {
        self.layer_mut().forward(x, mode)
    }

    fn infer(&self, x: &Tensor3<S>) -> Result<Tensor3<S>> {
        self.layer().infer(x)
    }

    fn backward(&mut self, grad: &Tensor3<S>) -> Result<Tensor3<S>> {
        self.layer_mut().backward(grad)
    }

    fn visit_params(&self, f: &mut dyn FnMut(&Param<S>)) {
        self.layer().visit_params(f)
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param<S>)) {
        self.layer_mut().visit_params_mut(f)
    }
}
