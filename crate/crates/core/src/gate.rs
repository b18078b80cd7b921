//! Trainable per-channel keep/drop gate.
//!
//! A squeeze step (global average pool) feeds a two-layer bottleneck whose
//! output `e` is turned into one score pair per channel,
//! `(softplus(alpha_i * e_i), softplus(beta_i * e_i))`, read as (off, on).
//! The pair is normalized linearly, so scores (7.5, 2.5) mean a 75% chance
//! of dropping the channel. Bits are drawn with the Gumbel-max trick; the
//! backward pass uses the tempered two-way softmax (straight-through).

use crate::autodiff::init::dense_weights;
use crate::autodiff::ops::{self, sigmoid, softplus, UnaryFn};
use crate::autodiff::{Graph, NodeId, ParamId, ParamStore};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Default bottleneck reduction ratio.
pub const DEFAULT_REDUCTION: usize = 16;

const U_MIN: f64 = 1e-20;
const U_MAX: f64 = 1.0 - 1e-12;

/// Parameter handles of one gate inside a [`ParamStore`].
#[derive(Clone, Debug, PartialEq)]
pub struct GateParams {
    pub channels: usize,
    pub hidden: usize,
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
    pub alpha: ParamId,
    pub beta: ParamId,
    pub tau: f64,
    pub lambda: f64,
}

/// Parameter names used by [`GateParams::init`] and [`GateParams::find`].
pub const GATE_PARAM_NAMES: [&str; 6] = ["gate.w1", "gate.b1", "gate.w2", "gate.b2", "gate.alpha", "gate.beta"];

pub fn hidden_width(channels: usize, reduction: usize) -> usize {
    (channels / reduction.max(1)).max(1)
}

fn check_hyper(tau: f64, lambda: f64) -> Result<()> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::config(format!("temperature must be positive, got {tau}")));
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::config(format!("regularizer weight must be >= 0, got {lambda}")));
    }
    Ok(())
}

impl GateParams {
    /// Adds freshly initialized gate parameters to `store`.
    ///
    /// `b2 = 1`, `alpha = 0`, `beta = 2` start every channel with an on
    /// probability near 0.75 so the downstream network sees data early on.
    pub fn init(
        store: &mut ParamStore,
        channels: usize,
        reduction: usize,
        tau: f64,
        lambda: f64,
        rng: &mut Rng,
    ) -> Result<Self> {
        check_hyper(tau, lambda)?;
        if channels == 0 {
            return Err(Error::config("gate needs at least one channel"));
        }
        let hidden = hidden_width(channels, reduction);
        let [n1, n2, n3, n4, n5, n6] = GATE_PARAM_NAMES;
        Ok(Self {
            channels,
            hidden,
            w1: store.add(n1, dense_weights(channels, hidden, rng)),
            b1: store.add(n2, Tensor::zeros(&[hidden])),
            w2: store.add(n3, dense_weights(hidden, channels, rng)),
            b2: store.add(n4, Tensor::full(&[channels], 1.0)),
            alpha: store.add(n5, Tensor::zeros(&[channels])),
            beta: store.add(n6, Tensor::full(&[channels], 2.0)),
            tau,
            lambda,
        })
    }

    /// Locates existing gate parameters by name and checks their shapes.
    pub fn find(store: &ParamStore, tau: f64, lambda: f64) -> Result<Self> {
        check_hyper(tau, lambda)?;
        let get = |name: &str| {
            store
                .find(name)
                .ok_or_else(|| Error::Validation(format!("missing gate parameter {name}")))
        };
        let [n1, n2, n3, n4, n5, n6] = GATE_PARAM_NAMES;
        let (w1, w2) = (get(n1)?, get(n3)?);
        let (channels, hidden) = match store.get(w1).dims() {
            &[c, h] => (c, h),
            d => return Err(Error::shape(format!("gate.w1 has extents {d:?}"))),
        };
        let gp = Self {
            channels,
            hidden,
            w1,
            b1: get(n2)?,
            w2,
            b2: get(n4)?,
            alpha: get(n5)?,
            beta: get(n6)?,
            tau,
            lambda,
        };
        let expect: [(ParamId, Vec<usize>); 5] = [
            (gp.b1, vec![hidden]),
            (gp.w2, vec![hidden, channels]),
            (gp.b2, vec![channels]),
            (gp.alpha, vec![channels]),
            (gp.beta, vec![channels]),
        ];
        for (id, dims) in expect {
            if store.get(id).dims() != &dims[..] {
                return Err(Error::shape(format!(
                    "{} has extents {:?}, expected {dims:?}",
                    store.name(id),
                    store.get(id).dims()
                )));
            }
        }
        Ok(gp)
    }
}

/// Score pair of one channel; off first, on second.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScorePair {
    pub off: f64,
    pub on: f64,
}

impl ScorePair {
    pub fn p_on(self) -> f64 {
        self.on / (self.off + self.on)
    }
}

/// Per-channel positive scores for input `x` (`H x W x C`).
pub fn gate_scores(x: &Tensor, store: &ParamStore, gp: &GateParams) -> Result<Vec<ScorePair>> {
    match x.dims() {
        [_, _, c] if *c == gp.channels => {}
        d => {
            return Err(Error::shape(format!(
                "gate expects HxWx{}, got {d:?}",
                gp.channels
            )))
        }
    }
    let s = ops::global_avg_pool(x)?;
    let h = ops::apply_unary(&ops::dense(&s, store.get(gp.w1), store.get(gp.b1))?, UnaryFn::Relu)?;
    let e = ops::dense(&h, store.get(gp.w2), store.get(gp.b2))?;
    let (a, b) = (store.get(gp.alpha).data(), store.get(gp.beta).data());
    Ok(e.data()
        .iter()
        .zip(a.iter().zip(b))
        .map(|(&e, (&a, &b))| ScorePair {
            off: softplus(a * e),
            on: softplus(b * e),
        })
        .collect())
}

/// One standard Gumbel draw, `-ln(-ln U)`.
pub fn gumbel_standard(rng: &mut Rng) -> f64 {
    gumbel_from_uniform(rng.uniform())
}

pub fn gumbel_from_uniform(u: f64) -> f64 {
    -(-u.clamp(U_MIN, U_MAX).ln()).ln()
}

/// Frozen Gumbel noise for every channel of one forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct GateNoise {
    pub off: Vec<f64>,
    pub on: Vec<f64>,
}

impl GateNoise {
    /// Draws `(off, on)` per channel, channel by channel.
    pub fn draw(channels: usize, rng: &mut Rng) -> Self {
        let (mut off, mut on) = (Vec::with_capacity(channels), Vec::with_capacity(channels));
        for _ in 0..channels {
            off.push(gumbel_standard(rng));
            on.push(gumbel_standard(rng));
        }
        Self { off, on }
    }

    /// No noise: bits become `[p_on > 0.5]`.
    pub fn zero(channels: usize) -> Self {
        Self {
            off: vec![0.0; channels],
            on: vec![0.0; channels],
        }
    }

    pub fn channels(&self) -> usize {
        self.off.len()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GateDecision {
    pub bits: Vec<bool>,
    /// `pi_on / (pi_off + pi_on)` per channel.
    pub p_on: Vec<f64>,
    /// On-component of `softmax((l + g) / tau)`.
    pub soft: Vec<f64>,
    pub noise: GateNoise,
}

impl GateDecision {
    pub fn channels_on(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }
}

/// Combines scores and given noise into a decision.
pub fn gate_decide(scores: &[ScorePair], tau: f64, noise: GateNoise) -> Result<GateDecision> {
    if !(tau > 0.0) {
        return Err(Error::Domain(format!("temperature must be positive, got {tau}")));
    }
    if noise.channels() != scores.len() {
        return Err(Error::shape("noise and score lengths differ"));
    }
    let mut d = GateDecision {
        bits: Vec::with_capacity(scores.len()),
        p_on: Vec::with_capacity(scores.len()),
        soft: Vec::with_capacity(scores.len()),
        noise,
    };
    for (i, s) in scores.iter().enumerate() {
        if !(s.off > 0.0 && s.on > 0.0 && s.off.is_finite() && s.on.is_finite()) {
            return Err(Error::Domain(format!(
                "channel {i} has non-positive scores ({}, {})",
                s.off, s.on
            )));
        }
        let off = s.off.ln() + d.noise.off[i];
        let on = s.on.ln() + d.noise.on[i];
        d.bits.push(on > off);
        d.p_on.push(s.p_on());
        d.soft.push(sigmoid((on - off) / tau));
    }
    Ok(d)
}

/// Draws fresh Gumbel noise and decides every channel.
pub fn gate_sample(scores: &[ScorePair], tau: f64, rng: &mut Rng) -> Result<GateDecision> {
    gate_decide(scores, tau, GateNoise::draw(scores.len(), rng))
}

/// How bits are chosen outside training.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum GateMode {
    /// Fresh Gumbel noise per input.
    #[default]
    Sample,
    /// `bit = [p_on > 0.5]`, deterministic.
    Threshold,
}

impl GateMode {
    pub fn name(self) -> &'static str {
        match self {
            GateMode::Sample => "sample",
            GateMode::Threshold => "threshold",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "sample" => Some(GateMode::Sample),
            "threshold" => Some(GateMode::Threshold),
            _ => None,
        }
    }

    pub fn noise(self, channels: usize, rng: &mut Rng) -> GateNoise {
        match self {
            GateMode::Sample => GateNoise::draw(channels, rng),
            GateMode::Threshold => GateNoise::zero(channels),
        }
    }
}

pub fn gate_infer(scores: &[ScorePair], tau: f64, mode: GateMode, rng: &mut Rng) -> Result<GateDecision> {
    gate_decide(scores, tau, mode.noise(scores.len(), rng))
}

/// Zeroes every channel whose bit is off.
pub fn gate_apply(x: &Tensor, bits: &[bool]) -> Result<Tensor> {
    match x.dims() {
        [_, _, c] if *c == bits.len() => {}
        d => return Err(Error::shape(format!("{} bits for tensor {d:?}", bits.len()))),
    }
    let mut out = x.clone();
    for px in out.data_mut().chunks_exact_mut(bits.len()) {
        for (v, &b) in px.iter_mut().zip(bits) {
            if !b {
                *v = 0.0;
            }
        }
    }
    Ok(out)
}

/// `lambda * number of channels on`.
pub fn selection_regularizer(bits: &[bool], lambda: f64) -> f64 {
    lambda * bits.iter().filter(|&&b| b).count() as f64
}

/// Forward value used by the gate inside a graph.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Relaxation {
    /// Hard bits forward, soft gradient backward.
    #[default]
    Hard,
    /// Soft probabilities forward and backward; a smooth surrogate used to
    /// verify gradients with finite differences.
    Soft,
}

/// Nodes created by [`attach_gate`].
#[derive(Clone, Copy, Debug)]
pub struct GateNodes {
    pub score_off: NodeId,
    pub score_on: NodeId,
    /// Noisy tempered logit difference; the bit is `[z > 0]`.
    pub z: NodeId,
    pub soft: NodeId,
    /// Per-channel multiplier applied to the input.
    pub bits: NodeId,
    pub gated: NodeId,
    /// `lambda * sum(bits)`.
    pub penalty: NodeId,
}

/// Builds the gate on top of `x` with frozen `noise`.
///
/// `tau` and `lambda` are passed explicitly so training can schedule them.
pub fn attach_gate(
    g: &mut Graph,
    x: NodeId,
    gp: &GateParams,
    noise: &GateNoise,
    tau: f64,
    lambda: f64,
    relaxation: Relaxation,
) -> Result<GateNodes> {
    if !(tau > 0.0) {
        return Err(Error::Domain(format!("temperature must be positive, got {tau}")));
    }
    if noise.channels() != gp.channels {
        return Err(Error::shape("noise length differs from gate channels"));
    }
    let s = g.global_avg_pool(x)?;
    let (w1, b1, w2, b2) = (g.param(gp.w1), g.param(gp.b1), g.param(gp.w2), g.param(gp.b2));
    let h = g.dense(s, w1, b1)?;
    let h = g.relu(h);
    let e = g.dense(h, w2, b2)?;
    let (alpha, beta) = (g.param(gp.alpha), g.param(gp.beta));
    let raw_off = g.mul(alpha, e)?;
    let raw_on = g.mul(beta, e)?;
    let score_off = g.softplus(raw_off);
    let score_on = g.softplus(raw_on);
    let l_off = g.log(score_off);
    let l_on = g.log(score_on);
    let neg_off = g.scale(l_off, -1.0)?;
    let diff = g.add(l_on, neg_off)?;
    let dg: Vec<f64> = noise.on.iter().zip(&noise.off).map(|(a, b)| a - b).collect();
    let noisy = g.offset(diff, Tensor::from_vec(dg))?;
    let z = g.scale(noisy, 1.0 / tau)?;
    // sigmoid(z) = exp(-softplus(-z)), built from the primitive set.
    let neg_z = g.scale(z, -1.0)?;
    let sp = g.softplus(neg_z);
    let log_soft = g.scale(sp, -1.0)?;
    let soft = g.exp(log_soft);
    let bits = match relaxation {
        Relaxation::Hard => g.straight_through(z, soft)?,
        Relaxation::Soft => soft,
    };
    let gated = g.scale_channels(x, bits)?;
    let penalty = g.sum(bits, lambda)?;
    Ok(GateNodes {
        score_off,
        score_on,
        z,
        soft,
        bits,
        gated,
        penalty,
    })
}

/// Reads the decision recorded by an evaluated graph.
pub fn read_decision(g: &Graph, nodes: &GateNodes, noise: GateNoise) -> Result<GateDecision> {
    let off = g.value(nodes.score_off)?.data();
    let on = g.value(nodes.score_on)?.data();
    Ok(GateDecision {
        bits: g.value(nodes.z)?.data().iter().map(|&z| z > 0.0).collect(),
        p_on: off.iter().zip(on).map(|(&a, &b)| b / (a + b)).collect(),
        soft: g.value(nodes.soft)?.data().to_vec(),
        noise,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{grad_check, GradCheckOptions};
    use crate::rng::Stream;

    fn pair(off: f64, on: f64) -> ScorePair {
        ScorePair { off, on }
    }

    #[test]
    fn worked_example_probability() {
        assert_eq!(pair(7.5, 2.5).p_on(), 0.25);
        assert_eq!(pair(3.0, 3.0).p_on(), 0.5);
    }

    #[test]
    fn gumbel_closed_forms() {
        assert!(gumbel_from_uniform((-1.0f64).exp()).abs() < 1e-15);
        assert!((gumbel_from_uniform((-std::f64::consts::E).exp()) + 1.0).abs() < 1e-12);
        assert!(gumbel_from_uniform(0.0).is_finite());
        assert!(gumbel_from_uniform(1.0).is_finite());
    }

    #[test]
    fn off_rate_follows_linear_normalization() {
        let mut rng = Rng::new(7, Stream::Gumbel);
        let n = 100_000;
        let scores = [pair(7.5, 2.5), pair(1.0, 1.0)];
        let mut off = [0usize; 2];
        for _ in 0..n {
            let d = gate_sample(&scores, 1.0, &mut rng).unwrap();
            for (o, b) in off.iter_mut().zip(&d.bits) {
                *o += usize::from(!b);
            }
        }
        assert!((off[0] as f64 / n as f64 - 0.75).abs() < 0.01);
        assert!((off[1] as f64 / n as f64 - 0.5).abs() < 0.01);
    }

    #[test]
    fn hard_matches_soft_argmax_and_temperature_limit() {
        let mut rng = Rng::new(1, Stream::Gumbel);
        let scores: Vec<_> = (0..50).map(|i| pair(0.1 + i as f64 * 0.2, 5.0 - i as f64 * 0.09)).collect();
        let noise = GateNoise::draw(50, &mut rng);
        let mut gaps = Vec::new();
        for tau in [1.0, 0.1, 0.01] {
            let d = gate_decide(&scores, tau, noise.clone()).unwrap();
            let mut gap = 0.0f64;
            for (&b, &s) in d.bits.iter().zip(&d.soft) {
                assert_eq!(b, s > 0.5);
                gap = gap.max((f64::from(u8::from(b)) - s).abs());
            }
            gaps.push(gap);
        }
        assert!(gaps[0] > gaps[1] && gaps[1] > gaps[2], "{gaps:?}");
    }

    #[test]
    fn threshold_mode_and_domain() {
        let mut rng = Rng::new(0, Stream::Gumbel);
        let d = gate_infer(&[pair(1.0, 3.0), pair(3.0, 1.0)], 1.0, GateMode::Threshold, &mut rng).unwrap();
        assert_eq!(d.bits, [true, false]);
        assert!(matches!(
            gate_sample(&[pair(0.0, 1.0)], 1.0, &mut rng),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn apply_and_regularizer() {
        let x = Tensor::new(vec![2, 1, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(gate_apply(&x, &[true; 3]).unwrap(), x);
        assert!(gate_apply(&x, &[false; 3]).unwrap().data().iter().all(|&v| v == 0.0));
        assert_eq!(gate_apply(&x, &[true, false, true]).unwrap().data(), &[1.0, 0.0, 3.0, 4.0, 0.0, 6.0]);
        let mut bits = vec![false; 192];
        bits[..24].fill(true);
        assert!((selection_regularizer(&bits, 0.1) - 2.4).abs() < 1e-12);
        assert_eq!(selection_regularizer(&bits, 0.0), 0.0);
    }

    fn gated_setup() -> (ParamStore, GateParams, Tensor, GateNoise) {
        let mut rng = Rng::new(3, Stream::Init);
        let mut store = ParamStore::new();
        let gp = GateParams::init(&mut store, 6, 2, 0.7, 0.1, &mut rng).unwrap();
        // Spread alpha/beta so the logits are not all alike.
        for (i, v) in store.get_mut(gp.alpha).data_mut().iter_mut().enumerate() {
            *v = 0.3 * i as f64 - 0.7;
        }
        let mut data_rng = Rng::new(4, Stream::Data);
        let x = Tensor::new(vec![3, 3, 6], (0..54).map(|_| data_rng.normal()).collect()).unwrap();
        let noise = GateNoise::draw(6, &mut Rng::new(5, Stream::Gumbel));
        (store, gp, x, noise)
    }

    #[test]
    fn graph_scores_match_direct_scores() {
        let (store, gp, x, noise) = gated_setup();
        let direct = gate_scores(&x, &store, &gp).unwrap();
        let mut g = Graph::new(&store);
        let xn = g.constant(x.clone());
        let nodes = attach_gate(&mut g, xn, &gp, &noise, gp.tau, gp.lambda, Relaxation::Hard).unwrap();
        g.forward(&store).unwrap();
        let from_graph = read_decision(&g, &nodes, noise.clone()).unwrap();
        let expected = gate_decide(&direct, gp.tau, noise).unwrap();
        assert_eq!(from_graph.bits, expected.bits);
        for (a, b) in from_graph.p_on.iter().zip(&expected.p_on) {
            assert!((a - b).abs() < 1e-12);
        }
        let gated = g.value(nodes.gated).unwrap();
        assert_eq!(gated, &gate_apply(&x, &expected.bits).unwrap());
        let penalty = g.scalar(nodes.penalty).unwrap();
        assert!((penalty - selection_regularizer(&expected.bits, 0.1)).abs() < 1e-12);
    }

    #[test]
    fn soft_relaxation_gradients() {
        let (store, gp, x, noise) = gated_setup();
        let mut g = Graph::new(&store);
        let xn = g.constant(x);
        let nodes = attach_gate(&mut g, xn, &gp, &noise, gp.tau, gp.lambda, Relaxation::Soft).unwrap();
        // Quadratic probe on the gated tensor plus the selection penalty.
        let sq = g.mul(nodes.gated, nodes.gated).unwrap();
        let probe = g.sum(sq, 0.5).unwrap();
        let loss = g.add(probe, nodes.penalty).unwrap();
        let report = grad_check(&mut g, loss, &store, &GradCheckOptions::default()).unwrap();
        assert!(report.passes(1e-5), "{:?}", report.worst());
    }

    #[test]
    fn straight_through_gradient_reaches_scores() {
        let (store, gp, x, noise) = gated_setup();
        let mut g = Graph::new(&store);
        let xn = g.constant(x);
        let nodes = attach_gate(&mut g, xn, &gp, &noise, gp.tau, gp.lambda, Relaxation::Hard).unwrap();
        g.forward(&store).unwrap();
        let grads = g.backward(nodes.penalty).unwrap();
        assert!(grads.get(gp.beta).data().iter().any(|&v| v != 0.0));
    }

    #[test]
    fn find_recovers_handles() {
        let (store, gp, _, _) = gated_setup();
        assert_eq!(GateParams::find(&store, gp.tau, gp.lambda).unwrap(), gp);
        assert!(GateParams::find(&ParamStore::new(), 1.0, 0.0).is_err());
    }
}
