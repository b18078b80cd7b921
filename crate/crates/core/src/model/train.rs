//! Minibatch SGD training and evaluation.

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::autodiff::{Gradients, Sgd};
use crate::error::{Error, Result};
use crate::gate::{read_decision, GateMode, GateNoise, Relaxation};
use crate::model::net::{GateDrive, Model};
use crate::rng::{Rng, Stream};
use crate::tensor::Tensor;

/// One prepared network input.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub input: Tensor,
    pub label: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Multiplier applied every `decay_interval` epochs.
    pub lr_decay: f64,
    pub decay_interval: usize,
    /// Final gate temperature for exponential annealing; `None` keeps it fixed.
    pub tau_final: Option<f64>,
    /// Epochs over which the gate penalty ramps linearly from 0 to its
    /// full weight. Without a ramp the penalty can switch every channel
    /// off before the classifier has learned to use any of them.
    pub lambda_warmup: usize,
    pub seed: u64,
    /// Worker threads for per-sample passes; results do not depend on it.
    pub threads: usize,
    /// Gate behaviour when scoring the validation split.
    pub eval_mode: GateMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.05,
            momentum: 0.9,
            weight_decay: 4e-5,
            epochs: 40,
            batch_size: 32,
            lr_decay: 0.1,
            decay_interval: 20,
            tau_final: None,
            lambda_warmup: 5,
            seed: 0,
            threads: 1,
            eval_mode: GateMode::Sample,
        }
    }
}

impl TrainConfig {
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.lr * self.lr_decay.powi((epoch / self.decay_interval.max(1)) as i32)
    }

    pub fn tau_at(&self, tau0: f64, epoch: usize) -> f64 {
        match self.tau_final {
            Some(t1) if self.epochs > 1 => tau0 * (t1 / tau0).powf(epoch as f64 / (self.epochs - 1) as f64),
            _ => tau0,
        }
    }

    pub fn lambda_at(&self, lambda: f64, epoch: usize) -> f64 {
        if epoch >= self.lambda_warmup {
            lambda
        } else {
            lambda * epoch as f64 / self.lambda_warmup as f64
        }
    }

    fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("batch size must be positive"));
        }
        if !(self.lr_decay > 0.0) {
            return Err(Error::config("learning-rate decay must be positive"));
        }
        if let Some(t) = self.tau_final {
            if !(t > 0.0) {
                return Err(Error::config("final temperature must be positive"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub split: Split,
    pub loss: f64,
    pub accuracy: f64,
    pub mean_channels_on: Option<f64>,
    pub lr: f64,
}

/// `epoch,split,loss,accuracy,mean_channels_on,lr`; ungated rows leave the
/// channel column empty.
pub fn metrics_csv(rows: &[EpochMetrics]) -> String {
    let mut s = String::from("epoch,split,loss,accuracy,mean_channels_on,lr\n");
    for r in rows {
        let on = r.mean_channels_on.map(|v| format!("{v:?}")).unwrap_or_default();
        let _ = writeln!(
            s,
            "{},{},{:?},{:?},{},{:?}",
            r.epoch,
            r.split.name(),
            r.loss,
            r.accuracy,
            on,
            r.lr
        );
    }
    s
}

struct PassResult {
    grads: Option<Gradients>,
    loss: f64,
    prediction: usize,
    bits: Option<Vec<bool>>,
}

fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &x)| if x > best.1 { (i, x) } else { best })
        .0
}

/// Gate temperature and penalty weight for one pass.
#[derive(Clone, Copy)]
struct GateSchedule {
    tau: f64,
    lambda: f64,
}

fn run_pass(
    model: &Model,
    sample: &Sample,
    noise: Option<GateNoise>,
    sched: GateSchedule,
    backward: bool,
) -> Result<PassResult> {
    let drive = noise.as_ref().map(|noise| GateDrive::Noise {
        noise,
        tau: sched.tau,
        lambda: sched.lambda,
        relaxation: Relaxation::Hard,
    });
    let mut f = model.forward_graph(&sample.input, Some(sample.label), drive)?;
    f.graph.forward(&model.params)?;
    let loss_node = f.loss.expect("label supplied");
    let loss = f.graph.scalar(loss_node)?;
    let prediction = argmax(f.graph.value(f.logits)?.data());
    let bits = match (&f.gate, noise) {
        (Some(nodes), Some(noise)) => Some(read_decision(&f.graph, nodes, noise)?.bits),
        _ => None,
    };
    let grads = if backward { Some(f.graph.backward(loss_node)?) } else { None };
    Ok(PassResult {
        grads,
        loss,
        prediction,
        bits,
    })
}

fn check_data(model: &Model, data: &[Sample]) -> Result<()> {
    if data.is_empty() {
        return Err(Error::InsufficientData("no samples".into()));
    }
    let k = model.spec.classes;
    if let Some(s) = data.iter().find(|s| s.label >= k) {
        return Err(Error::config(format!("label {} but model has {k} classes", s.label)));
    }
    Ok(())
}

/// Runs `f` over `indices`, keeping results in index order.
fn map_ordered<T, F>(pool: Option<&rayon::ThreadPool>, indices: &[usize], f: F) -> Vec<Result<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync,
{
    match pool {
        Some(p) => p.install(|| indices.par_iter().map(|&i| f(i)).collect()),
        None => indices.iter().map(|&i| f(i)).collect(),
    }
}

fn thread_pool(threads: usize) -> Result<Option<rayon::ThreadPool>> {
    if threads <= 1 {
        return Ok(None);
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map(Some)
        .map_err(|e| Error::config(format!("cannot start {threads} threads: {e}")))
}

const EVAL_FORK: u64 = (u32::MAX as u64) << 32;

fn training_noise(model: &Model, seed: u64, epoch: usize, index: usize) -> Option<GateNoise> {
    let gp = model.gate()?;
    let mut rng = Rng::new(seed, Stream::Gumbel).fork(((epoch as u64) << 32) | index as u64);
    Some(GateNoise::draw(gp.channels, &mut rng))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    pub accuracy: f64,
    pub mean_channels_on: Option<f64>,
    pub predictions: Vec<usize>,
    /// Per-sample gate bits over the model's input channels (gated models).
    pub decisions: Vec<Vec<bool>>,
}

/// Top-1 accuracy and gate decisions on `data`.
pub fn evaluate(model: &Model, data: &[Sample], mode: GateMode, seed: u64, threads: usize) -> Result<Evaluation> {
    check_data(model, data)?;
    let pool = thread_pool(threads)?;
    let sched = GateSchedule {
        tau: model.gate().map_or(1.0, |g| g.tau),
        lambda: model.gate().map_or(0.0, |g| g.lambda),
    };
    let idx: Vec<usize> = (0..data.len()).collect();
    let results = map_ordered(pool.as_ref(), &idx, |i| {
        let noise = model.gate().map(|gp| {
            let mut rng = Rng::new(seed, Stream::Gumbel).fork(EVAL_FORK | i as u64);
            mode.noise(gp.channels, &mut rng)
        });
        run_pass(model, &data[i], noise, sched, false)
    });
    let mut ev = Evaluation {
        loss: 0.0,
        accuracy: 0.0,
        mean_channels_on: None,
        predictions: Vec::with_capacity(data.len()),
        decisions: Vec::new(),
    };
    let mut correct = 0usize;
    for (r, s) in results.into_iter().zip(data) {
        let r = r?;
        ev.loss += r.loss;
        correct += usize::from(r.prediction == s.label);
        ev.predictions.push(r.prediction);
        if let Some(b) = r.bits {
            ev.decisions.push(b);
        }
    }
    let n = data.len() as f64;
    ev.loss /= n;
    ev.accuracy = correct as f64 / n;
    if !ev.decisions.is_empty() {
        let on: usize = ev.decisions.iter().map(|d| d.iter().filter(|&&b| b).count()).sum();
        ev.mean_channels_on = Some(on as f64 / n);
    }
    Ok(ev)
}

/// Trains `model` in place and returns one metrics row per epoch and split.
///
/// Each epoch shuffles the training set with a stream derived from the
/// seed and epoch; per-sample gradients inside a batch are summed in
/// sample-index order, so results are bit-identical for any thread count.
pub fn train(model: &mut Model, train: &[Sample], val: Option<&[Sample]>, cfg: &TrainConfig) -> Result<Vec<EpochMetrics>> {
    cfg.validate()?;
    check_data(model, train)?;
    if let Some(v) = val {
        check_data(model, v)?;
    }
    let pool = thread_pool(cfg.threads)?;
    let mut sgd = Sgd::new(cfg.lr, cfg.momentum, cfg.weight_decay)?;
    let (tau0, lambda) = model.gate().map_or((1.0, 0.0), |g| (g.tau, g.lambda));
    let mut rows = Vec::new();
    for epoch in 0..cfg.epochs {
        sgd.lr = cfg.lr_at(epoch);
        let sched = GateSchedule {
            tau: cfg.tau_at(tau0, epoch),
            lambda: cfg.lambda_at(lambda, epoch),
        };
        let mut order: Vec<usize> = (0..train.len()).collect();
        Rng::new(cfg.seed, Stream::Data).fork(epoch as u64).shuffle(&mut order);
        let (mut loss_sum, mut correct, mut on_sum) = (0.0, 0usize, 0usize);
        for (batch, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let mut idx = chunk.to_vec();
            idx.sort_unstable();
            let m: &Model = model;
            let results = map_ordered(pool.as_ref(), &idx, |i| {
                run_pass(m, &train[i], training_noise(m, cfg.seed, epoch, i), sched, true)
            });
            let mut grads = model.params.zeros_like();
            for (r, &i) in results.into_iter().zip(&idx) {
                let r = r.map_err(|e| match e {
                    Error::NonFinite { .. } => Error::Diverged {
                        epoch,
                        batch,
                        detail: format!("sample {i}: {e}"),
                    },
                    other => other,
                })?;
                if !r.loss.is_finite() {
                    return Err(Error::Diverged {
                        epoch,
                        batch,
                        detail: format!("loss {} on sample {i}", r.loss),
                    });
                }
                loss_sum += r.loss;
                correct += usize::from(r.prediction == train[i].label);
                on_sum += r.bits.map_or(0, |b| b.iter().filter(|&&x| x).count());
                grads.accumulate(r.grads.as_ref().expect("backward requested"));
            }
            grads.scale(1.0 / idx.len() as f64);
            sgd.step(&mut model.params, &grads)?;
            if let Some((_, name, _)) = model.params.iter().find(|(_, _, t)| !t.is_finite()) {
                return Err(Error::Diverged {
                    epoch,
                    batch,
                    detail: format!("parameter {name} became non-finite"),
                });
            }
        }
        let n = train.len() as f64;
        rows.push(EpochMetrics {
            epoch,
            split: Split::Train,
            loss: loss_sum / n,
            accuracy: correct as f64 / n,
            mean_channels_on: model.gate().map(|_| on_sum as f64 / n),
            lr: sgd.lr,
        });
        if let Some(v) = val {
            let ev = evaluate(model, v, cfg.eval_mode, cfg.seed, cfg.threads)?;
            rows.push(EpochMetrics {
                epoch,
                split: Split::Val,
                loss: ev.loss,
                accuracy: ev.accuracy,
                mean_channels_on: ev.mean_channels_on,
                lr: sgd.lr,
            });
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::net::{build_freqnet, GateSpec, ModelSpec};

    /// Class `k` raises channel `k` by a constant; otherwise Gaussian.
    fn toy(n: usize, classes: usize, channels: usize, seed: u64) -> Vec<Sample> {
        let mut rng = Rng::new(seed, Stream::Data);
        (0..n)
            .map(|i| {
                let label = i % classes;
                let mut data: Vec<f64> = (0..16 * channels).map(|_| rng.normal()).collect();
                for px in data.chunks_exact_mut(channels) {
                    px[label] += 2.0;
                }
                Sample {
                    input: Tensor::new(vec![4, 4, channels], data).unwrap(),
                    label,
                }
            })
            .collect()
    }

    fn small_spec() -> ModelSpec {
        ModelSpec {
            widths: vec![8, 8],
            ..ModelSpec::freq(4, 4, 6, 3)
        }
    }

    #[test]
    fn zero_lr_keeps_parameters() {
        let mut m = build_freqnet(small_spec()).unwrap();
        let before = m.params.clone();
        let cfg = TrainConfig { lr: 0.0, epochs: 2, batch_size: 8, ..Default::default() };
        train(&mut m, &toy(24, 3, 6, 1), None, &cfg).unwrap();
        for ((_, _, a), (_, _, b)) in before.iter().zip(m.params.iter()) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn overfits_one_batch() {
        let data = toy(32, 3, 6, 2);
        let mut m = build_freqnet(small_spec()).unwrap();
        let cfg = TrainConfig {
            epochs: 500,
            decay_interval: 1000,
            ..Default::default()
        };
        let rows = train(&mut m, &data, None, &cfg).unwrap();
        let last = rows.last().unwrap();
        let ev = evaluate(&m, &data, GateMode::Sample, 0, 1).unwrap();
        assert!(ev.loss < 0.01, "loss {} (last epoch {})", ev.loss, last.loss);
        assert_eq!(ev.accuracy, 1.0);
    }

    #[test]
    fn deterministic_across_runs_and_threads() {
        let data = toy(40, 3, 6, 3);
        let spec = small_spec().with_gate(GateSpec { reduction: 2, ..Default::default() });
        let cfg = TrainConfig { epochs: 3, batch_size: 8, decay_interval: 2, ..Default::default() };
        let run = |threads| {
            let mut m = build_freqnet(spec.clone()).unwrap();
            let rows = train(&mut m, &data, Some(&data[..12]), &TrainConfig { threads, ..cfg.clone() }).unwrap();
            (metrics_csv(&rows), m.params)
        };
        let (a, pa) = run(1);
        let (b, pb) = run(1);
        let (c, pc) = run(3);
        assert_eq!(a, b);
        assert_eq!(a, c);
        for (((_, _, x), (_, _, y)), (_, _, z)) in pa.iter().zip(pb.iter()).zip(pc.iter()) {
            assert_eq!(x, y);
            assert_eq!(x, z);
        }
        let lrs: Vec<&str> = a.lines().skip(1).map(|l| l.rsplit(',').next().unwrap()).collect();
        assert_eq!(lrs, ["0.05", "0.05", "0.05", "0.05", "0.005000000000000001", "0.005000000000000001"]);
    }

    #[test]
    fn chance_level_at_init() {
        let data = toy(2000, 4, 6, 4);
        let m = build_freqnet(ModelSpec { classes: 4, ..small_spec() }).unwrap();
        let ev = evaluate(&m, &data, GateMode::Sample, 0, 1).unwrap();
        assert!((ev.accuracy - 0.25).abs() <= 0.05, "{}", ev.accuracy);
        assert_eq!(ev.predictions.len(), 2000);
    }

    #[test]
    fn class_mismatch_and_divergence() {
        let mut m = build_freqnet(small_spec()).unwrap();
        let bad = toy(8, 4, 6, 5);
        assert!(matches!(evaluate(&m, &bad, GateMode::Sample, 0, 1), Err(Error::Config(_))));
        let cfg = TrainConfig { lr: 1e200, momentum: 0.0, epochs: 3, batch_size: 4, ..Default::default() };
        let err = train(&mut m, &toy(12, 3, 6, 6), None, &cfg).unwrap_err();
        assert!(matches!(err, Error::Diverged { .. }), "{err}");
    }

    #[test]
    fn gated_decisions_are_recorded() {
        let data = toy(10, 3, 6, 7);
        let m = build_freqnet(small_spec().with_gate(GateSpec { reduction: 2, ..Default::default() })).unwrap();
        let ev = evaluate(&m, &data, GateMode::Threshold, 0, 1).unwrap();
        assert_eq!(ev.decisions.len(), 10);
        assert!(ev.decisions.iter().all(|d| d.len() == 6));
        assert!(ev.mean_channels_on.is_some());
    }
}
