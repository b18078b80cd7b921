//! Desk-scale convolutional classifiers.

use crate::autodiff::init::{conv_kernel, dense_weights};
use crate::autodiff::{Graph, NodeId, ParamId, ParamStore};
use crate::error::{Error, Result};
use crate::gate::{attach_gate, GateNodes, GateNoise, GateParams, Relaxation, DEFAULT_REDUCTION};
use crate::rng::{Rng, Stream};
use crate::tensor::Tensor;

const KERNEL: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    /// Consumes `H/8 x W/8 x C'` coefficient tensors; no strided stem.
    Freq,
    /// Consumes `H x W x 3` RGB tensors through two stride-2 convolutions.
    Spatial,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Freq => "freq",
            ModelKind::Spatial => "spatial",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "freq" => Some(ModelKind::Freq),
            "spatial" => Some(ModelKind::Spatial),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GateSpec {
    pub reduction: usize,
    pub tau: f64,
    pub lambda: f64,
}

impl Default for GateSpec {
    fn default() -> Self {
        Self {
            reduction: DEFAULT_REDUCTION,
            tau: 1.0,
            lambda: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelSpec {
    pub kind: ModelKind,
    /// Extents of the network input tensor.
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub classes: usize,
    /// Output widths of the convolution stack.
    pub widths: Vec<usize>,
    pub gate: Option<GateSpec>,
    pub seed: u64,
}

impl ModelSpec {
    pub fn freq(height: usize, width: usize, channels: usize, classes: usize) -> Self {
        Self {
            kind: ModelKind::Freq,
            height,
            width,
            channels,
            classes,
            widths: vec![32, 32],
            gate: None,
            seed: 0,
        }
    }

    pub fn spatial(height: usize, width: usize, classes: usize) -> Self {
        Self {
            kind: ModelKind::Spatial,
            height,
            width,
            channels: 3,
            classes,
            widths: vec![16, 32, 32],
            gate: None,
            seed: 0,
        }
    }

    pub fn with_gate(mut self, gate: GateSpec) -> Self {
        self.gate = Some(gate);
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    fn strides(&self) -> Vec<usize> {
        match self.kind {
            ModelKind::Freq => vec![1; self.widths.len()],
            ModelKind::Spatial => (0..self.widths.len()).map(|i| if i < 2 { 2 } else { 1 }).collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 || self.channels == 0 {
            return Err(Error::config("input extents must be positive"));
        }
        if self.classes < 2 {
            return Err(Error::config(format!("need at least 2 classes, got {}", self.classes)));
        }
        if self.widths.is_empty() || self.widths.contains(&0) {
            return Err(Error::config(format!("invalid layer widths {:?}", self.widths)));
        }
        if self.kind == ModelKind::Spatial && self.channels != 3 {
            return Err(Error::config("spatial models take 3 input channels"));
        }
        if self.gate.is_some() && self.kind != ModelKind::Freq {
            return Err(Error::config("the gate attaches to frequency models only"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
struct ConvLayer {
    kernel: ParamId,
    bias: ParamId,
    stride: usize,
}

/// Parameters plus the layer layout needed to build per-sample graphs.
#[derive(Clone, Debug)]
pub struct Model {
    pub spec: ModelSpec,
    pub params: ParamStore,
    convs: Vec<ConvLayer>,
    fc_w: ParamId,
    fc_b: ParamId,
    gate: Option<GateParams>,
}

/// How the gate, if any, chooses bits for one forward pass.
#[derive(Clone, Copy, Debug)]
pub enum GateDrive<'a> {
    Noise {
        noise: &'a GateNoise,
        tau: f64,
        lambda: f64,
        relaxation: Relaxation,
    },
    /// Bypass the gate network and apply these bits directly.
    Fixed(&'a [bool]),
}

/// An unevaluated per-sample graph.
pub struct Forward {
    pub graph: Graph,
    pub logits: NodeId,
    /// Cross entropy plus the gate penalty, when a label was supplied.
    pub loss: Option<NodeId>,
    pub xent: Option<NodeId>,
    pub gate: Option<GateNodes>,
}

fn conv_name(i: usize, what: &str) -> String {
    format!("conv{}.{what}", i + 1)
}

impl Model {
    fn build(spec: ModelSpec) -> Result<Self> {
        spec.validate()?;
        let mut rng = Rng::new(spec.seed, Stream::Init);
        let mut params = ParamStore::new();
        let gate = match spec.gate {
            Some(gs) => Some(GateParams::init(
                &mut params,
                spec.channels,
                gs.reduction,
                gs.tau,
                gs.lambda,
                &mut rng,
            )?),
            None => None,
        };
        let mut convs = Vec::new();
        let mut cin = spec.channels;
        for (i, (&w, stride)) in spec.widths.iter().zip(spec.strides()).enumerate() {
            convs.push(ConvLayer {
                kernel: params.add(conv_name(i, "kernel"), conv_kernel(KERNEL, cin, w, &mut rng)),
                bias: params.add(conv_name(i, "bias"), Tensor::zeros(&[w])),
                stride,
            });
            cin = w;
        }
        let fc_w = params.add("fc.weight", dense_weights(cin, spec.classes, &mut rng));
        let fc_b = params.add("fc.bias", Tensor::zeros(&[spec.classes]));
        Ok(Self {
            spec,
            params,
            convs,
            fc_w,
            fc_b,
            gate,
        })
    }

    /// Replaces the parameters, keeping names and shapes.
    pub fn load_params(&mut self, store: ParamStore) -> Result<()> {
        if store.len() != self.params.len() {
            return Err(Error::Validation(format!(
                "{} parameter tensors supplied, model has {}",
                store.len(),
                self.params.len()
            )));
        }
        for ((_, n1, t1), (_, n2, t2)) in self.params.iter().zip(store.iter()) {
            if n1 != n2 || t1.dims() != t2.dims() {
                return Err(Error::Validation(format!(
                    "parameter {n2} {:?} does not match {n1} {:?}",
                    t2.dims(),
                    t1.dims()
                )));
            }
        }
        self.params = store;
        if let (Some(gs), Some(_)) = (self.spec.gate, &self.gate) {
            self.gate = Some(GateParams::find(&self.params, gs.tau, gs.lambda)?);
        }
        Ok(())
    }

    pub fn gate(&self) -> Option<&GateParams> {
        self.gate.as_ref()
    }

    pub fn parameter_count(&self) -> usize {
        self.params.scalar_count()
    }

    /// Parameters excluding the gate.
    pub fn backbone_parameter_count(&self) -> usize {
        self.params
            .iter()
            .filter(|(_, name, _)| !name.starts_with("gate."))
            .map(|(_, _, t)| t.len())
            .sum()
    }

    pub fn conv_kernel(&self, layer: usize) -> ParamId {
        self.convs[layer].kernel
    }

    fn check_input(&self, input: &Tensor) -> Result<()> {
        let s = &self.spec;
        if input.dims() != [s.height, s.width, s.channels] {
            return Err(Error::shape(format!(
                "model expects {}x{}x{}, got {:?}",
                s.height,
                s.width,
                s.channels,
                input.dims()
            )));
        }
        Ok(())
    }

    /// Builds the graph for one input; the gate must be driven iff present.
    pub fn forward_graph(
        &self,
        input: &Tensor,
        label: Option<usize>,
        drive: Option<GateDrive<'_>>,
    ) -> Result<Forward> {
        self.check_input(input)?;
        if let Some(l) = label {
            if l >= self.spec.classes {
                return Err(Error::config(format!(
                    "label {l} but model has {} classes",
                    self.spec.classes
                )));
            }
        }
        let mut g = Graph::new(&self.params);
        let x = g.constant(input.clone());
        let (mut h, gate) = match (&self.gate, drive) {
            (None, None) => (x, None),
            (None, Some(_)) => return Err(Error::config("model has no gate to drive")),
            (Some(_), None) => return Err(Error::config("gated model needs a gate drive")),
            (Some(gp), Some(GateDrive::Noise { noise, tau, lambda, relaxation })) => {
                let nodes = attach_gate(&mut g, x, gp, noise, tau, lambda, relaxation)?;
                (nodes.gated, Some(nodes))
            }
            (Some(gp), Some(GateDrive::Fixed(bits))) => {
                if bits.len() != gp.channels {
                    return Err(Error::shape("fixed bits do not match gate channels"));
                }
                let b = g.constant(Tensor::from_vec(bits.iter().map(|&b| f64::from(u8::from(b))).collect()));
                (g.scale_channels(x, b)?, None)
            }
        };
        for layer in &self.convs {
            let (k, b) = (g.param(layer.kernel), g.param(layer.bias));
            let c = g.conv2d(h, k, layer.stride, 1)?;
            let c = g.add_channels(c, b)?;
            h = g.relu(c);
        }
        let pooled = g.global_avg_pool(h)?;
        let (w, b) = (g.param(self.fc_w), g.param(self.fc_b));
        let logits = g.dense(pooled, w, b)?;
        let (loss, xent) = match label {
            None => (None, None),
            Some(l) => {
                let xent = g.softmax_xent(logits, l)?;
                let loss = match &gate {
                    Some(n) => g.add(xent, n.penalty)?,
                    None => xent,
                };
                (Some(loss), Some(xent))
            }
        };
        Ok(Forward {
            graph: g,
            logits,
            loss,
            xent,
            gate,
        })
    }

    /// Logits for one input with the gate (if any) driven as given.
    pub fn logits(&self, input: &Tensor, drive: Option<GateDrive<'_>>) -> Result<Vec<f64>> {
        let mut f = self.forward_graph(input, None, drive)?;
        f.graph.forward(&self.params)?;
        Ok(f.graph.value(f.logits)?.data().to_vec())
    }
}

/// Frequency-input network: optional gate, two 3x3 stride-1 convolutions,
/// global average pooling and a linear classifier.
pub fn build_freqnet(spec: ModelSpec) -> Result<Model> {
    if spec.kind != ModelKind::Freq {
        return Err(Error::config("build_freqnet needs a freq spec"));
    }
    Model::build(spec)
}

/// RGB baseline: two stride-2 and one stride-1 3x3 convolutions, pooling
/// and a linear classifier.
pub fn build_spatialnet(spec: ModelSpec) -> Result<Model> {
    if spec.kind != ModelKind::Spatial {
        return Err(Error::config("build_spatialnet needs a spatial spec"));
    }
    Model::build(spec)
}

pub fn build_model(spec: ModelSpec) -> Result<Model> {
    Model::build(spec)
}
