//! Analytic parameter and FLOP accounting computed from a [`ModelSpec`]
//! alone, plus the first-stage parameter ratio against a full-width
//! multi-kernel stage.

use std::fmt::Write as _;

use num_rational::Ratio;

use crate::error::{Error, Result};
use crate::kernel_plan::KernelSet;
use crate::model::{ModelSpec, Variant};
use crate::tensor::ops::{same_padding, window_out_len};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Conv,
    BatchNorm,
    Relu,
    MaxPool,
    Add,
    GlobalAvgPool,
    Linear,
}

impl LayerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LayerKind::Conv => "conv",
            LayerKind::BatchNorm => "bn",
            LayerKind::Relu => "relu",
            LayerKind::MaxPool => "maxpool",
            LayerKind::Add => "add",
            LayerKind::GlobalAvgPool => "gap",
            LayerKind::Linear => "linear",
        }
    }
}

/// One leaf operation. Counts are per record.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ComplexityRow {
    pub name: String,
    pub kind: LayerKind,
    /// Trainable weights excluding biases.
    pub weights: u64,
    pub biases: u64,
    /// Running statistics (not trainable).
    pub buffers: u64,
    pub macs: u64,
    pub element_ops: u64,
    pub out_channels: usize,
    pub out_length: usize,
}

impl ComplexityRow {
    pub fn params(&self) -> u64 {
        self.weights + self.biases
    }

    pub fn flops(&self) -> u64 {
        2 * self.macs
    }
}

/// Trainable parameters split by where they live.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Itemization {
    pub conv_weights: u64,
    pub conv_biases: u64,
    pub bn_affine: u64,
    pub linear_weights: u64,
    pub linear_biases: u64,
    pub bn_running: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ComplexityReport {
    pub input_length: usize,
    pub rows: Vec<ComplexityRow>,
    /// `(block name, (channels, length))` after every top-level block.
    pub block_shapes: Vec<(String, (usize, usize))>,
}

fn mega(n: u64) -> f64 {
    n as f64 / 1e6
}

fn giga(n: u64) -> f64 {
    n as f64 / 1e9
}

impl ComplexityReport {
    pub fn total_params(&self) -> u64 {
        self.rows.iter().map(ComplexityRow::params).sum()
    }

    pub fn total_buffers(&self) -> u64 {
        self.rows.iter().map(|r| r.buffers).sum()
    }

    pub fn total_macs(&self) -> u64 {
        self.rows.iter().map(|r| r.macs).sum()
    }

    pub fn total_flops(&self) -> u64 {
        2 * self.total_macs()
    }

    pub fn total_element_ops(&self) -> u64 {
        self.rows.iter().map(|r| r.element_ops).sum()
    }

    /// Rows whose name starts with `prefix`.
    pub fn filter(&self, prefix: &str) -> impl Iterator<Item = &ComplexityRow> {
        let prefix = prefix.to_string();
        self.rows
            .iter()
            .filter(move |r| r.name.starts_with(&prefix))
    }

    pub fn itemize(&self) -> Itemization {
        let mut it = Itemization::default();
        for r in &self.rows {
            match r.kind {
                LayerKind::Conv => {
                    it.conv_weights += r.weights;
                    it.conv_biases += r.biases;
                }
                LayerKind::BatchNorm => {
                    it.bn_affine += r.weights + r.biases;
                    it.bn_running += r.buffers;
                }
                LayerKind::Linear => {
                    it.linear_weights += r.weights;
                    it.linear_biases += r.biases;
                }
                _ => {}
            }
        }
        it
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "name,kind,params,biases,buffers,macs,flops,element_ops,out_channels,out_length\n",
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{}",
                r.name,
                r.kind.as_str(),
                r.params(),
                r.biases,
                r.buffers,
                r.macs,
                r.flops(),
                r.element_ops,
                r.out_channels,
                r.out_length
            );
        }
        let _ = writeln!(
            out,
            "total,,{},{},{},{},{},{},,",
            self.total_params(),
            self.rows.iter().map(|r| r.biases).sum::<u64>(),
            self.total_buffers(),
            self.total_macs(),
            self.total_flops(),
            self.total_element_ops()
        );
        out
    }

    pub fn to_table(&self) -> String {
        let w = self
            .rows
            .iter()
            .map(|r| r.name.len())
            .max()
            .unwrap_or(4)
            .max(5);
        let mut out = format!(
            "{:<w$} {:<7} {:>10} {:>8} {:>14} {:>12} {:>10}\n",
            "layer", "kind", "params", "buffers", "macs", "element_ops", "out"
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<w$} {:<7} {:>10} {:>8} {:>14} {:>12} {:>10}",
                r.name,
                r.kind.as_str(),
                r.params(),
                r.buffers,
                r.macs,
                r.element_ops,
                format!("{}x{}", r.out_channels, r.out_length)
            );
        }
        let _ = writeln!(
            out,
            "{:<w$} {:<7} {:>10} {:>8} {:>14} {:>12}",
            "total",
            "",
            self.total_params(),
            self.total_buffers(),
            self.total_macs(),
            self.total_element_ops()
        );
        out.push('\n');
        out.push_str(&self.summary());
        out
    }

    /// Totals in M/G units with the parameter itemization.
    pub fn summary(&self) -> String {
        let it = self.itemize();
        let mut out = String::new();
        let _ = writeln!(out, "input_length      {}", self.input_length);
        let _ = writeln!(
            out,
            "params            {} ({:.3}M)",
            self.total_params(),
            mega(self.total_params())
        );
        let _ = writeln!(out, "  conv weights    {}", it.conv_weights);
        let _ = writeln!(out, "  conv biases     {}", it.conv_biases);
        let _ = writeln!(out, "  bn affine       {}", it.bn_affine);
        let _ = writeln!(out, "  linear weights  {}", it.linear_weights);
        let _ = writeln!(out, "  linear biases   {}", it.linear_biases);
        let _ = writeln!(out, "bn running stats  {} (not trainable)", it.bn_running);
        let _ = writeln!(
            out,
            "macs              {} ({:.3}G)",
            self.total_macs(),
            giga(self.total_macs())
        );
        let _ = writeln!(
            out,
            "flops (2*macs)    {} ({:.3}G)",
            self.total_flops(),
            giga(self.total_flops())
        );
        let _ = writeln!(out, "element ops       {}", self.total_element_ops());
        out
    }
}

struct Walker {
    rows: Vec<ComplexityRow>,
    channels: usize,
    length: usize,
    bias: bool,
}

impl Walker {
    fn push(
        &mut self,
        name: String,
        kind: LayerKind,
        weights: u64,
        biases: u64,
        buffers: u64,
        macs: u64,
        ops: u64,
    ) {
        self.rows.push(ComplexityRow {
            name,
            kind,
            weights,
            biases,
            buffers,
            macs,
            element_ops: ops,
            out_channels: self.channels,
            out_length: self.length,
        });
    }

    fn size(&self) -> u64 {
        (self.channels * self.length) as u64
    }

    #[allow(clippy::too_many_arguments)]
    fn conv(
        &mut self,
        name: String,
        c_out: usize,
        k: usize,
        stride: usize,
        pad: (usize, usize),
    ) -> Result<()> {
        let out_len = window_out_len(self.length, k, stride, pad.0, pad.1).ok_or_else(|| {
            Error::shape(
                name.clone(),
                format!("kernel {k} does not fit input length {}", self.length),
            )
        })?;
        let weights = (c_out * self.channels * k) as u64;
        let biases = if self.bias { c_out as u64 } else { 0 };
        self.channels = c_out;
        self.length = out_len;
        let macs = weights * out_len as u64;
        self.push(name, LayerKind::Conv, weights, biases, 0, macs, 0);
        Ok(())
    }

    fn bn(&mut self, name: String) {
        let c = self.channels as u64;
        let ops = self.size();
        self.push(name, LayerKind::BatchNorm, c, c, 2 * c, 0, ops);
    }

    fn relu(&mut self, name: String) {
        let ops = self.size();
        self.push(name, LayerKind::Relu, 0, 0, 0, 0, ops);
    }

    fn add(&mut self, name: String, operands: usize) {
        let ops = self.size() * operands.saturating_sub(1) as u64;
        self.push(name, LayerKind::Add, 0, 0, 0, 0, ops);
    }
}

/// Parameter, MAC and element-op counts for `spec` at `input_length` samples.
pub fn analyze(spec: &ModelSpec, input_length: usize) -> Result<ComplexityReport> {
    spec.validate()?;
    let mut w = Walker {
        rows: Vec::new(),
        channels: spec.leads,
        length: input_length,
        bias: spec.conv_bias,
    };
    let mut shapes = Vec::new();

    let stem = &spec.stem;
    let pad = stem.conv_padding();
    w.conv(
        "stem.conv".into(),
        stem.out_channels,
        stem.kernel,
        stem.stride,
        (pad, pad),
    )?;
    w.bn("stem.bn".into());
    w.relu("stem.relu".into());
    w.length = window_out_len(
        w.length,
        stem.pool_kernel,
        stem.pool_stride,
        stem.pool_pad,
        stem.pool_pad,
    )
    .ok_or_else(|| Error::shape("stem.pool", "pooling window larger than its input"))?;
    let ops = w.size();
    w.push("stem.pool".into(), LayerKind::MaxPool, 0, 0, 0, 0, ops);
    shapes.push(("stem".to_string(), (w.channels, w.length)));

    for (i, st) in spec.stages.iter().enumerate() {
        let stage = format!("stage{}", i + 1);
        for j in 0..st.blocks {
            let name = format!("{stage}.block{}", j + 1);
            let stride = if j == 0 { st.stride } else { 1 };
            let (c_in, len_in) = (w.channels, w.length);
            w.conv(format!("{name}.conv1"), st.channels, 3, stride, (1, 1))?;
            w.bn(format!("{name}.bn1"));
            w.relu(format!("{name}.relu1"));
            w.conv(format!("{name}.conv2"), st.channels, 3, 1, same_padding(3))?;
            w.bn(format!("{name}.bn2"));
            let main = (w.channels, w.length);
            if stride != 1 || c_in != st.channels {
                w.channels = c_in;
                w.length = len_in;
                w.conv(format!("{name}.proj"), st.channels, 1, stride, (0, 0))?;
                w.bn(format!("{name}.proj_bn"));
                if (w.channels, w.length) != main {
                    return Err(Error::shape(
                        name,
                        "projection and main path disagree in length",
                    ));
                }
            }
            w.add(format!("{name}.add"), 2);
            w.relu(format!("{name}.relu"));
            shapes.push((name, (w.channels, w.length)));
        }
        if spec.variant.has_multiscale_blocks() {
            let plan = st
                .plan
                .as_ref()
                .ok_or_else(|| Error::invalid(format!("model.{stage}"), "missing kernel plan"))?;
            let name = format!("{stage}.eco");
            eco_block(&mut w, &name, st.channels, &plan.kernel_set, spec.variant)?;
            shapes.push((name, (w.channels, w.length)));
        }
    }

    let (c, len) = (w.channels, w.length);
    w.length = 1;
    w.push(
        "head.gap".into(),
        LayerKind::GlobalAvgPool,
        0,
        0,
        0,
        0,
        (c * len) as u64,
    );
    let m = spec.num_classes;
    w.channels = m;
    w.push(
        "head.fc".into(),
        LayerKind::Linear,
        (c * m) as u64,
        m as u64,
        0,
        (c * m) as u64,
        0,
    );
    shapes.push(("head".to_string(), (m, 1)));

    Ok(ComplexityReport {
        input_length,
        rows: w.rows,
        block_shapes: shapes,
    })
}

fn eco_block(
    w: &mut Walker,
    name: &str,
    channels: usize,
    set: &KernelSet,
    variant: Variant,
) -> Result<()> {
    let width = match variant {
        Variant::Full => {
            if !channels.is_multiple_of(2) {
                return Err(Error::invalid(
                    format!("{name}.channels"),
                    "bottleneck needs an even channel count",
                ));
            }
            w.conv(format!("{name}.reduce"), channels / 2, 1, 1, (0, 0))?;
            w.bn(format!("{name}.reduce_bn"));
            w.relu(format!("{name}.reduce_relu"));
            channels / 2
        }
        Variant::NoBottleneck => channels,
        Variant::BackboneOnly => return Ok(()),
    };
    let (c_in, len) = (w.channels, w.length);
    for &k in set.kernels() {
        w.channels = c_in;
        w.length = len;
        w.conv(
            format!("{name}.branch{k}.conv"),
            width,
            k,
            1,
            same_padding(k),
        )?;
        w.bn(format!("{name}.branch{k}.bn"));
    }
    if variant == Variant::Full {
        w.channels = width * set.len();
        w.relu(format!("{name}.mid_relu"));
        w.conv(format!("{name}.expand"), channels, 1, 1, (0, 0))?;
        w.bn(format!("{name}.expand_bn"));
    } else {
        w.add(format!("{name}.branch_sum"), set.len());
    }
    w.add(format!("{name}.add"), 2);
    w.relu(format!("{name}.relu"));
    Ok(())
}

/// Parameter column at `spec.input_length`.
pub fn count_params(spec: &ModelSpec) -> Result<ComplexityReport> {
    analyze(spec, spec.input_length)
}

/// MAC and FLOP columns at `input_length`.
pub fn count_flops(spec: &ModelSpec, input_length: usize) -> Result<ComplexityReport> {
    analyze(spec, input_length)
}

/// An exact ratio with its floating-point value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExactRatio(pub Ratio<u64>);

impl ExactRatio {
    pub fn value(&self) -> f64 {
        *self.0.numer() as f64 / *self.0.denom() as f64
    }
}

impl std::fmt::Display for ExactRatio {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} ({:.5})", self.0, self.value())
    }
}

fn check_even(c: usize) -> Result<()> {
    if c == 0 || !c.is_multiple_of(2) {
        return Err(Error::invalid(
            "channels",
            format!("must be even and positive, got {c}"),
        ));
    }
    Ok(())
}

/// Weights of the reducing 1x1 plus half-width branches, over the weights of
/// full-width branches on the same kernel set. Biases and the expanding 1x1
/// are left out.
pub fn first_stage_ratio_exact(p_k: usize, channels: usize) -> Result<ExactRatio> {
    check_even(channels)?;
    let set = KernelSet::with_max_prime(p_k)?;
    let c = channels as u64;
    let sum = set.kernel_sum() as u64;
    let eco = c * c / 2 + (c / 2) * (c / 2) * sum;
    let os = c * c * sum;
    Ok(ExactRatio(Ratio::new(eco, os)))
}

/// `(2 ln p + p^2) / (4 p^2)`.
pub fn ratio_closed_form(p_k: usize) -> f64 {
    let p = p_k as f64;
    (2.0 * p.ln() + p * p) / (4.0 * p * p)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OsComparison {
    pub ecoscale: ComplexityReport,
    pub oscnn: ComplexityReport,
    /// Ecoscale weights over full-width weights.
    pub ratio: ExactRatio,
}

impl OsComparison {
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<10} {:>12} {:>16}", "stage", "weights", "macs");
        for (name, r) in [("ecoscale", &self.ecoscale), ("os-cnn", &self.oscnn)] {
            let _ = writeln!(
                out,
                "{:<10} {:>12} {:>16}",
                name,
                r.total_params(),
                r.total_macs()
            );
        }
        let _ = writeln!(out, "ratio      {}", self.ratio);
        out
    }
}

/// One stage of parallel same-padded convolutions over the kernel set of
/// `p_k`: at full width `C -> C` for the comparison network, and behind a
/// `C -> C/2` 1x1 at half width for ours. Weights only.
pub fn compare_oscnn(
    p_k: usize,
    channels: usize,
    input_length: usize,
    include_second_1x1: bool,
) -> Result<OsComparison> {
    check_even(channels)?;
    let set = KernelSet::with_max_prime(p_k)?;
    let half = channels / 2;

    let mut os = Walker {
        rows: Vec::new(),
        channels,
        length: input_length,
        bias: false,
    };
    for &k in set.kernels() {
        os.channels = channels;
        os.length = input_length;
        os.conv(format!("os.branch{k}"), channels, k, 1, same_padding(k))?;
    }

    let mut eco = Walker {
        rows: Vec::new(),
        channels,
        length: input_length,
        bias: false,
    };
    eco.conv("eco.reduce".into(), half, 1, 1, (0, 0))?;
    for &k in set.kernels() {
        eco.channels = half;
        eco.length = input_length;
        eco.conv(format!("eco.branch{k}"), half, k, 1, same_padding(k))?;
    }
    if include_second_1x1 {
        eco.channels = half * set.len();
        eco.conv("eco.expand".into(), channels, 1, 1, (0, 0))?;
    }

    let report = |rows| ComplexityReport {
        input_length,
        rows,
        block_shapes: Vec::new(),
    };
    let (ecoscale, oscnn) = (report(eco.rows), report(os.rows));
    let ratio = ExactRatio(Ratio::new(ecoscale.total_params(), oscnn.total_params()));
    Ok(OsComparison {
        ecoscale,
        oscnn,
        ratio,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel_plan::primes_up_to;
    use crate::model::{build_model, BackboneConfig, StemSpec};
    use crate::tensor::Tensor3;
    use proptest::prelude::*;

    fn bare(leads: usize, stem_channels: usize, bias: bool) -> ModelSpec {
        ModelSpec {
            leads,
            input_length: 16,
            stem: StemSpec::standard(stem_channels),
            stages: vec![crate::model::StageSpec {
                blocks: 1,
                channels: 4,
                stride: 1,
                plan: None,
            }],
            num_classes: 2,
            variant: Variant::BackboneOnly,
            conv_bias: bias,
        }
    }

    #[test]
    fn linear_head_count() {
        let r = count_params(&bare(1, 4, false)).unwrap();
        let fc = r.rows.iter().find(|r| r.name == "head.fc").unwrap();
        assert_eq!(fc.params(), 10);
    }

    #[test]
    fn conv_with_bias_count() {
        let mut w = Walker {
            rows: vec![],
            channels: 2,
            length: 10,
            bias: true,
        };
        w.conv("c".into(), 2, 3, 1, same_padding(3)).unwrap();
        assert_eq!(w.rows[0].params(), 14);
    }

    #[test]
    fn pointwise_conv_macs() {
        let mut w = Walker {
            rows: vec![],
            channels: 1,
            length: 10,
            bias: false,
        };
        w.conv("c".into(), 1, 1, 1, (0, 0)).unwrap();
        assert_eq!(w.rows[0].macs, 10);
        assert_eq!(w.rows[0].flops(), 20);
    }

    #[test]
    fn first_stage_block_weights() {
        let set = KernelSet::with_max_prime(11).unwrap();
        let mut w = Walker {
            rows: vec![],
            channels: 64,
            length: 32,
            bias: false,
        };
        eco_block(&mut w, "e", 64, &set, Variant::Full).unwrap();
        let reduce = w
            .rows
            .iter()
            .find(|r| r.name == "e.reduce")
            .unwrap()
            .weights;
        let branches: u64 = w
            .rows
            .iter()
            .filter(|r| r.kind == LayerKind::Conv && r.name.contains("branch"))
            .map(|r| r.weights)
            .sum();
        assert_eq!((reduce, branches, reduce + branches), (2048, 29696, 31744));
    }

    #[test]
    fn ratio_examples() {
        let r = first_stage_ratio_exact(11, 64).unwrap();
        assert_eq!(r.0, Ratio::new(31, 116));
        assert!((r.value() - 0.26724).abs() < 1e-5);
        assert!((ratio_closed_form(11) - 0.25991).abs() < 1e-5);
        assert!((ratio_closed_form(1_000_003) - 0.25).abs() < 1e-9);
        assert!(first_stage_ratio_exact(11, 63).is_err());
        assert!(first_stage_ratio_exact(12, 64).is_err());
    }

    #[test]
    fn closed_form_within_five_percent() {
        for p in primes_up_to(199).into_iter().filter(|&p| p >= 11) {
            let exact = first_stage_ratio_exact(p, 64).unwrap().value();
            let gap = (exact - ratio_closed_form(p)).abs() / exact;
            assert!(gap < 0.05, "p_k={p}: {gap}");
        }
    }

    #[test]
    fn oscnn_examples() {
        let c = compare_oscnn(11, 64, 100, false).unwrap();
        assert_eq!(c.oscnn.total_params(), 118784);
        assert_eq!(c.ecoscale.total_params(), 31744);
        assert_eq!(c.ratio, first_stage_ratio_exact(11, 64).unwrap());

        let small = compare_oscnn(2, 2, 8, false).unwrap();
        assert_eq!(
            (small.oscnn.total_params(), small.ecoscale.total_params()),
            (12, 5)
        );
        assert_eq!(small.ratio.0, Ratio::new(5, 12));

        let with_expand = compare_oscnn(11, 64, 100, true).unwrap();
        assert_eq!(with_expand.ecoscale.total_params(), 31744 + 6 * 32 * 64);
    }

    #[test]
    fn stage_macs_follow_prime_sum() {
        let (len, c) = (256u64, 8u64);
        let probe = [11usize, 31, 101];
        let totals: Vec<f64> = probe
            .iter()
            .map(|&p| {
                let t = compare_oscnn(p, c as usize, len as usize, false)
                    .unwrap()
                    .oscnn
                    .total_macs();
                let sum = KernelSet::with_max_prime(p).unwrap().kernel_sum() as u64;
                assert_eq!(t, len * c * c * sum);
                t as f64
            })
            .collect();
        // least-squares fit of total = a * p^2 / ln p
        let basis: Vec<f64> = probe
            .iter()
            .map(|&p| (p * p) as f64 / (p as f64).ln())
            .collect();
        let a = basis.iter().zip(&totals).map(|(b, t)| b * t).sum::<f64>()
            / basis.iter().map(|b| b * b).sum::<f64>();
        for (b, t) in basis.iter().zip(&totals) {
            assert!(((a * b - t) / t).abs() < 0.1, "fit residual too large");
        }
    }

    #[test]
    fn ordering_for_reference_and_desk() {
        for base in [BackboneConfig::reference(), BackboneConfig::desk()] {
            let get = |v| count_params(&base.clone().with_variant(v).to_spec().unwrap()).unwrap();
            let (bb, full, nb) = (
                get(Variant::BackboneOnly),
                get(Variant::Full),
                get(Variant::NoBottleneck),
            );
            assert!(bb.total_params() < full.total_params());
            assert!(full.total_params() < nb.total_params());
            assert!(full.total_flops() < nb.total_flops());
        }
        let full = count_params(&BackboneConfig::reference().to_spec().unwrap()).unwrap();
        assert!(
            (4_000_000..=20_000_000).contains(&full.total_params()),
            "{}",
            full.total_params()
        );
    }

    #[test]
    fn macs_linear_in_length() {
        let spec = BackboneConfig::desk().to_spec().unwrap();
        let a = count_flops(&spec, 512).unwrap();
        let b = count_flops(&spec, 1024).unwrap();
        for (x, y) in a.rows.iter().zip(&b.rows) {
            if x.kind == LayerKind::Conv {
                assert_eq!(2 * x.macs, y.macs, "{}", x.name);
            }
        }
        assert_eq!(a.total_params(), b.total_params());
    }

    #[test]
    fn totals_are_column_sums() {
        let r = count_params(&BackboneConfig::desk().to_spec().unwrap()).unwrap();
        let it = r.itemize();
        assert_eq!(
            it.conv_weights + it.conv_biases + it.bn_affine + it.linear_weights + it.linear_biases,
            r.total_params()
        );
        assert_eq!(r.total_flops(), 2 * r.total_macs());
        let csv = r.to_csv();
        assert_eq!(csv.lines().count(), r.rows.len() + 2);
        assert!(r.to_table().contains("flops"));
    }

    fn random_config() -> impl Strategy<Value = BackboneConfig> {
        (
            1usize..4,
            1usize..4,
            prop::sample::select(vec![0usize, 1, 2]),
            any::<bool>(),
            2usize..6,
        )
            .prop_flat_map(|(leads, stages, variant, bias, classes)| {
                (
                    Just((leads, variant, bias, classes)),
                    prop::collection::vec((1usize..3, 1usize..4, 1usize..3), stages),
                    1usize..3,
                    4usize..24,
                )
            })
            .prop_map(
                |((leads, variant, bias, classes), st, stem, cover)| BackboneConfig {
                    leads,
                    input_length: 64,
                    stem_channels: 2 * stem,
                    blocks: st.iter().map(|s| s.0).collect(),
                    channels: st
                        .iter()
                        .scan(0, |acc, s| {
                            *acc += 2 * s.1;
                            Some(*acc)
                        })
                        .collect(),
                    strides: st.iter().map(|s| s.2).collect(),
                    initial_cover: cover,
                    strict_coverage: false,
                    num_classes: classes,
                    variant: Variant::ALL[variant],
                    conv_bias: bias,
                },
            )
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(20))]
        #[test]
        fn matches_instantiated_model(cfg in random_config()) {
            let spec = cfg.to_spec().unwrap();
            let report = count_params(&spec).unwrap();
            let model = build_model::<f64>(&spec, 1).unwrap();
            prop_assert_eq!(report.total_params(), model.num_trainable() as u64);
            prop_assert_eq!(report.total_buffers(), model.num_buffers() as u64);

            // Per layer: group the model's arrays by owning layer name.
            let mut by_layer = std::collections::BTreeMap::<String, (u64, u64)>::new();
            for (name, shape, trainable) in model.param_inventory() {
                let layer = name.rsplit_once('.').unwrap().0.to_string();
                let n: usize = shape.iter().product();
                let e = by_layer.entry(layer).or_default();
                if trainable { e.0 += n as u64 } else { e.1 += n as u64 }
            }
            let mut analytic = std::collections::BTreeMap::<String, (u64, u64)>::new();
            for r in report.rows.iter().filter(|r| r.params() + r.buffers > 0) {
                analytic.insert(r.name.clone(), (r.params(), r.buffers));
            }
            prop_assert_eq!(by_layer, analytic);

            let traced = model.trace_shapes(&Tensor3::zeros(1, spec.leads, spec.input_length)).unwrap();
            prop_assert_eq!(traced, report.block_shapes.clone());
        }
    }
}
