//! Per-channel running mean and variance (Welford).

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Accumulator over every spatial position of every channel.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelStats {
    n: u64,
    mean: Vec<f64>,
    m2: Vec<f64>,
    finalized: bool,
}

/// Finalized per-channel moments; population variance `M2 / n`.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelMoments {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
}

/// Added to the variance before standardizing.
pub const STANDARDIZE_EPS: f64 = 1e-5;

impl ChannelStats {
    pub fn new(channels: usize) -> Self {
        Self {
            n: 0,
            mean: vec![0.0; channels],
            m2: vec![0.0; channels],
            finalized: false,
        }
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn is_finalized(&self) -> bool {
        self.finalized
    }

    pub fn update(&mut self, sample: &Tensor) -> Result<()> {
        if self.finalized {
            return Err(Error::State("statistics already finalized".into()));
        }
        let c = *sample.dims().last().expect("rank >= 1");
        if c != self.channels() {
            return Err(Error::shape(format!(
                "sample has {c} channels, statistics track {}",
                self.channels()
            )));
        }
        for px in sample.data().chunks_exact(c) {
            self.n += 1;
            let n = self.n as f64;
            for ((m, s), &x) in self.mean.iter_mut().zip(&mut self.m2).zip(px) {
                let delta = x - *m;
                *m += delta / n;
                *s += delta * (x - *m);
            }
        }
        Ok(())
    }

    /// Chan et al. parallel combination of two accumulators.
    pub fn merge(&mut self, other: &ChannelStats) -> Result<()> {
        if self.finalized || other.finalized {
            return Err(Error::State("cannot merge finalized statistics".into()));
        }
        if other.channels() != self.channels() {
            return Err(Error::shape("channel counts differ"));
        }
        if other.n == 0 {
            return Ok(());
        }
        let (na, nb) = (self.n as f64, other.n as f64);
        let n = na + nb;
        for i in 0..self.channels() {
            let delta = other.mean[i] - self.mean[i];
            self.mean[i] += delta * nb / n;
            self.m2[i] += other.m2[i] + delta * delta * na * nb / n;
        }
        self.n += other.n;
        Ok(())
    }

    pub fn finalize(&mut self) -> Result<ChannelMoments> {
        if self.finalized {
            return Err(Error::State("statistics already finalized".into()));
        }
        if self.n < 2 {
            return Err(Error::InsufficientData(format!(
                "need at least 2 observations, have {}",
                self.n
            )));
        }
        self.finalized = true;
        let n = self.n as f64;
        Ok(ChannelMoments {
            mean: self.mean.clone(),
            variance: self.m2.iter().map(|s| (s / n).max(0.0)).collect(),
        })
    }
}

impl ChannelMoments {
    pub fn channels(&self) -> usize {
        self.mean.len()
    }

    /// Moments of a subset of channels, in the given order.
    pub fn select(&self, channels: &[usize]) -> Result<ChannelMoments> {
        if let Some(&bad) = channels.iter().find(|&&c| c >= self.channels()) {
            return Err(Error::config(format!("channel {bad} not in statistics")));
        }
        Ok(ChannelMoments {
            mean: channels.iter().map(|&c| self.mean[c]).collect(),
            variance: channels.iter().map(|&c| self.variance[c]).collect(),
        })
    }

    /// `(x - mean) / sqrt(variance + eps)` per channel, in place.
    pub fn standardize(&self, t: &mut Tensor) -> Result<()> {
        let c = *t.dims().last().expect("rank >= 1");
        if c != self.channels() {
            return Err(Error::config(format!(
                "tensor has {c} channels, statistics have {}",
                self.channels()
            )));
        }
        let inv: Vec<f64> = self
            .variance
            .iter()
            .map(|v| 1.0 / (v + STANDARDIZE_EPS).sqrt())
            .collect();
        for px in t.data_mut().chunks_exact_mut(c) {
            for ((x, m), s) in px.iter_mut().zip(&self.mean).zip(&inv) {
                *x = (*x - m) * s;
            }
        }
        Ok(())
    }

    /// `FDSTATS 1 <count>` then `<index> <mean> <variance>` per line.
    pub fn to_text(&self) -> String {
        let mut s = format!("FDSTATS 1 {}\n", self.channels());
        for (i, (m, v)) in self.mean.iter().zip(&self.variance).enumerate() {
            // `{:?}` prints the shortest representation that parses back exactly.
            let _ = writeln!(s, "{i} {m:?} {v:?}");
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or_else(|| Error::parse(1, "empty stats file"))?;
        let count: usize = match header.split_whitespace().collect::<Vec<_>>()[..] {
            ["FDSTATS", "1", n] => n
                .parse()
                .map_err(|_| Error::parse(1, format!("bad channel count {n:?}")))?,
            _ => return Err(Error::parse(1, "expected `FDSTATS 1 <channel_count>`")),
        };
        let mut mean = Vec::with_capacity(count);
        let mut variance = Vec::with_capacity(count);
        for (no, line) in lines {
            let line_no = no + 1;
            let fields: Vec<&str> = line.split_whitespace().collect();
            let [idx, m, v] = fields[..] else {
                return Err(Error::parse(line_no, "expected `<index> <mean> <variance>`"));
            };
            if idx.parse::<usize>().ok() != Some(mean.len()) {
                return Err(Error::parse(line_no, format!("expected index {}", mean.len())));
            }
            let num = |s: &str| {
                s.parse::<f64>()
                    .ok()
                    .filter(|x| x.is_finite())
                    .ok_or_else(|| Error::parse(line_no, format!("bad number {s:?}")))
            };
            let (m, v) = (num(m)?, num(v)?);
            if v < 0.0 {
                return Err(Error::parse(line_no, "negative variance"));
            }
            mean.push(m);
            variance.push(v);
        }
        if mean.len() != count {
            return Err(Error::Validation(format!(
                "header declares {count} channels, file has {}",
                mean.len()
            )));
        }
        Ok(Self { mean, variance })
    }
}
