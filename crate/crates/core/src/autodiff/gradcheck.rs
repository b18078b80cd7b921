//! Central finite-difference verification of analytic gradients.

use crate::autodiff::graph::{Gradients, Graph, NodeId, ParamId, ParamStore};
use crate::error::{Error, Result};
use crate::rng::{Rng, Stream};

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    /// Central difference step.
    pub step: f64,
    /// Check at most this many entries per parameter tensor (sampled
    /// without replacement); `None` checks every entry.
    pub max_entries_per_param: Option<usize>,
    /// Gradients whose combined magnitude `|a| + |n|` falls below this are
    /// compared against the floor instead, so roundoff in near-zero
    /// gradients does not dominate.
    pub floor: f64,
    /// When a perturbation moves some ReLU or threshold input across zero,
    /// the difference quotient straddles a kink. The step is then divided by
    /// 10 up to this many times before the entry is flagged as a kink.
    pub kink_retries: usize,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-6,
            max_entries_per_param: None,
            floor: 1e-4,
            kink_retries: 3,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EntryCheck {
    pub param: ParamId,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
    /// Step actually used for the central difference.
    pub step: f64,
    /// Every tried step crossed a kink; excluded from the error summary.
    pub kink: bool,
}

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub entries: Vec<EntryCheck>,
    /// Over entries not flagged as kinks.
    pub max_rel_err: f64,
    pub mean_rel_err: f64,
    pub kinks: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_err < tolerance
    }

    pub fn worst(&self) -> Option<&EntryCheck> {
        self.entries
            .iter()
            .filter(|e| !e.kink)
            .max_by(|a, b| a.rel_err.total_cmp(&b.rel_err))
    }
}

/// `|a - n| / max(|a| + |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(floor)
}

/// Compares the graph's backward pass against central differences.
pub fn grad_check(
    graph: &mut Graph,
    loss: NodeId,
    params: &ParamStore,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport> {
    graph.forward(params)?;
    let analytic = graph.backward(loss)?;
    compare_gradients(graph, loss, params, &analytic, opts)
}

/// Compares supplied gradients against central differences of `loss`.
pub fn compare_gradients(
    graph: &mut Graph,
    loss: NodeId,
    params: &ParamStore,
    analytic: &Gradients,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport> {
    let mut work = params.clone();
    let mut rng = Rng::new(opts.seed, Stream::Data);
    let kinks = graph.kink_inputs();
    let mut entries = Vec::new();
    for id in params.ids() {
        let n = params.get(id).len();
        let mut idx: Vec<usize> = (0..n).collect();
        if let Some(k) = opts.max_entries_per_param {
            if k < n {
                rng.shuffle(&mut idx);
                idx.truncate(k);
                idx.sort_unstable();
            }
        }
        for i in idx {
            let orig = work.get(id).data()[i];
            let mut step = opts.step;
            let mut attempt = 0;
            let (numeric, kink) = loop {
                work.get_mut(id).data_mut()[i] = orig + step;
                let (plus, sp) = eval(graph, loss, &work, &kinks)?;
                work.get_mut(id).data_mut()[i] = orig - step;
                let (minus, sm) = eval(graph, loss, &work, &kinks)?;
                let numeric = (plus - minus) / (2.0 * step);
                let crossed = sp != sm;
                if !crossed || attempt == opts.kink_retries {
                    break (numeric, crossed);
                }
                attempt += 1;
                step /= 10.0;
            };
            work.get_mut(id).data_mut()[i] = orig;
            let a = analytic.get(id).data()[i];
            entries.push(EntryCheck {
                param: id,
                index: i,
                analytic: a,
                numeric,
                rel_err: relative_error(a, numeric, opts.floor),
                step,
                kink,
            });
        }
    }
    // Leave the graph holding the unperturbed values.
    graph.forward(params)?;
    let smooth: Vec<f64> = entries.iter().filter(|e| !e.kink).map(|e| e.rel_err).collect();
    let max_rel_err = smooth.iter().copied().fold(0.0, f64::max);
    let mean_rel_err = if smooth.is_empty() {
        0.0
    } else {
        smooth.iter().sum::<f64>() / smooth.len() as f64
    };
    Ok(GradCheckReport {
        kinks: entries.len() - smooth.len(),
        entries,
        max_rel_err,
        mean_rel_err,
    })
}

/// Loss plus the sign pattern of every kink input.
fn eval(graph: &mut Graph, loss: NodeId, params: &ParamStore, kinks: &[NodeId]) -> Result<(f64, Vec<bool>)> {
    graph.forward(params)?;
    let v = graph.scalar(loss)?;
    if !v.is_finite() {
        return Err(Error::NonFinite {
            node: loss.index(),
            op: graph.op_name(loss),
            detail: "loss is not finite".into(),
        });
    }
    let mut signs = Vec::new();
    for &k in kinks {
        signs.extend(graph.value(k)?.data().iter().map(|&x| x > 0.0));
    }
    Ok((v, signs))
}
