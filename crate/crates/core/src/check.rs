//! Built-in oracle and invariant suite.
//!
//! Each check compares a production code path against an independent
//! reference (definitional loops, finite differences, closed forms) or
//! verifies an algebraic identity. The transform under test can be swapped
//! for a deliberately corrupted one to confirm the suite notices.

use std::fmt::Write as _;
use std::time::Instant;

use crate::autodiff::{compare_gradients, GradCheckOptions, GradCheckReport};
use crate::codec::dct::dct8x8_reference;
use crate::codec::pack::plane_to_blocks;
use crate::codec::{decode_planes, encode_full, pack_channels, unpack_channels, ycbcr_to_rgb, Block, BlockDct, RgbImage};
use crate::error::Result;
use crate::gate::{gate_sample, GateNoise, Relaxation, ScorePair};
use crate::model::{build_freqnet, build_spatialnet, GateDrive, GateSpec, Model, ModelSpec};
use crate::rng::{Rng, Stream};
use crate::select::{square_mask, triangle_mask, Component};
use crate::tensor::Tensor;

/// Relative-error bound for analytic vs numeric gradients.
pub const GRAD_TOLERANCE: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq)]
pub struct CheckRow {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

pub fn random_blocks(n: usize, seed: u64) -> Vec<Block> {
    let mut rng = Rng::new(seed, Stream::Data);
    (0..n)
        .map(|_| {
            let mut b = [0.0; 64];
            b.iter_mut().for_each(|v| *v = rng.uniform_range(0.0, 255.0));
            b
        })
        .collect()
}

pub fn random_image(width: usize, height: usize, rng: &mut Rng) -> RgbImage {
    RgbImage::new(width, height, (0..3 * width * height).map(|_| rng.below(256) as u8).collect())
        .expect("positive extents")
}

/// Largest deviation of `dct` from the four-loop definition.
pub fn dct_oracle_error(dct: &BlockDct, blocks: &[Block]) -> f64 {
    blocks
        .iter()
        .map(|b| {
            let fast = dct.forward(b);
            let slow = dct8x8_reference(b);
            fast.iter().zip(&slow).map(|(a, c)| (a - c).abs()).fold(0.0, f64::max)
        })
        .fold(0.0, f64::max)
}

/// `(energy error, inverse round-trip error)`, both maxima over blocks.
pub fn parseval_errors(dct: &BlockDct, blocks: &[Block]) -> (f64, f64) {
    let (mut energy, mut round_trip) = (0.0f64, 0.0f64);
    for b in blocks {
        let c = dct.forward(b);
        let ec: f64 = c.iter().map(|v| v * v).sum();
        let ep: f64 = b.iter().map(|v| (v - 128.0) * (v - 128.0)).sum();
        energy = energy.max((ec - ep).abs());
        let back = dct.inverse(&c);
        round_trip = round_trip.max(back.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max));
    }
    (energy, round_trip)
}

/// Largest 8-bit error of encode -> decode over `count` random images.
pub fn codec_round_trip_error(dct: &BlockDct, count: usize, size: usize, seed: u64) -> Result<u8> {
    let mut rng = Rng::new(seed, Stream::Data);
    let mut worst = 0u8;
    for _ in 0..count {
        let img = random_image(size, size, &mut rng);
        let t = encode_full(&img, dct);
        let back = ycbcr_to_rgb(&decode_planes(&t, dct)?);
        worst = worst.max(back.max_channel_diff(&img));
    }
    Ok(worst)
}

/// Whether pack/unpack are exact inverses on a random 32x32 plane.
pub fn pack_bijection_holds(seed: u64) -> Result<bool> {
    let mut rng = Rng::new(seed, Stream::Data);
    let plane: Vec<f64> = (0..32 * 32).map(|_| rng.normal()).collect();
    let grid = plane_to_blocks(&plane, 32, 32)?;
    let t = pack_channels(&grid);
    let back = unpack_channels(&t)?;
    Ok(back == grid && pack_channels(&back) == t)
}

fn random_tensor(dims: [usize; 3], rng: &mut Rng) -> Tensor {
    let n = dims.iter().product();
    Tensor::new(dims.to_vec(), (0..n).map(|_| rng.normal()).collect()).expect("positive extents")
}

fn check_model(model: &Model, input: &Tensor, label: usize, drive: Option<GateDrive<'_>>, seed: u64) -> Result<GradCheckReport> {
    let mut f = model.forward_graph(input, Some(label), drive)?;
    let loss = f.loss.expect("label supplied");
    f.graph.forward(&model.params)?;
    let analytic = f.graph.backward(loss)?;
    let opts = GradCheckOptions {
        max_entries_per_param: Some(24),
        seed,
        ..Default::default()
    };
    compare_gradients(&mut f.graph, loss, &model.params, &analytic, &opts)
}

/// Finite-difference checks of the three network variants at their desk
/// shapes: frequency net (8x8x24 input), spatial net (32x32x3) and the
/// gated frequency net with frozen Gumbel noise. The gate uses its soft
/// relaxation here because the hard forward is piecewise constant.
pub fn gradient_reports(seed: u64) -> Result<Vec<(&'static str, GradCheckReport)>> {
    let mut rng = Rng::new(seed, Stream::Data);
    let freq = build_freqnet(ModelSpec::freq(8, 8, 24, 4).with_seed(seed))?;
    let r1 = check_model(&freq, &random_tensor([8, 8, 24], &mut rng), 1, None, seed)?;

    let spatial = build_spatialnet(ModelSpec::spatial(32, 32, 4).with_seed(seed))?;
    let r2 = check_model(&spatial, &random_tensor([32, 32, 3], &mut rng), 2, None, seed)?;

    let gated = build_freqnet(ModelSpec::freq(8, 8, 24, 4).with_gate(GateSpec::default()).with_seed(seed))?;
    let noise = GateNoise::draw(24, &mut Rng::new(seed, Stream::Gumbel));
    let drive = GateDrive::Noise {
        noise: &noise,
        tau: 1.0,
        lambda: 0.1,
        relaxation: Relaxation::Soft,
    };
    let r3 = check_model(&gated, &random_tensor([8, 8, 24], &mut rng), 3, Some(drive), seed)?;
    Ok(vec![("freqnet", r1), ("spatialnet", r2), ("gated freqnet", r3)])
}

/// Fraction of `n` Gumbel-max draws that switch the channel off.
pub fn gumbel_off_rate(scores: ScorePair, n: usize, seed: u64) -> Result<f64> {
    let mut rng = Rng::new(seed, Stream::Gumbel);
    let mut off = 0usize;
    for _ in 0..n {
        off += usize::from(!gate_sample(&[scores], 1.0, &mut rng)?.bits[0]);
    }
    Ok(off as f64 / n as f64)
}

/// Nesting and DC membership of square and triangle masks for k = 1..64.
pub fn mask_invariants_hold() -> Result<bool> {
    for build in [square_mask, triangle_mask] {
        let mut prev = build(0, 0, 0)?;
        for k in 1..=64 {
            let m = build(k, k, k)?;
            let dc = Component::ALL.iter().all(|&c| m.component(c).contains(&0));
            if !prev.is_subset_of(&m) || !dc || m.len() != 3 * k {
                return Ok(false);
            }
            prev = m;
        }
    }
    Ok(true)
}

fn row(name: &'static str, passed: bool, detail: String) -> CheckRow {
    CheckRow { name, passed, detail }
}

fn failed(name: &'static str, err: impl std::fmt::Display) -> CheckRow {
    row(name, false, format!("error: {err}"))
}

/// Runs the whole suite against `dct` (normally [`BlockDct::standard`]).
pub fn run_checks(dct: &BlockDct, seed: u64) -> Vec<CheckRow> {
    let mut rows = Vec::new();
    let blocks = random_blocks(1000, seed);

    let t = Instant::now();
    let err = dct_oracle_error(dct, &blocks);
    rows.push(row(
        "dct oracle",
        err < 1e-9,
        format!("max |fast - definition| = {err:.3e} over 1000 blocks ({:.0?})", t.elapsed()),
    ));

    let (energy, round_trip) = parseval_errors(dct, &blocks);
    rows.push(row("parseval", energy < 1e-9, format!("max energy gap {energy:.3e}")));
    rows.push(row("idct round trip", round_trip < 1e-10, format!("max error {round_trip:.3e}")));

    rows.push(match codec_round_trip_error(dct, 20, 64, seed) {
        Ok(e) => row("pipeline round trip", e <= 2, format!("max 8-bit error {e} over 20 images")),
        Err(e) => failed("pipeline round trip", e),
    });

    rows.push(match pack_bijection_holds(seed) {
        Ok(ok) => row("pack bijection", ok, "32x32 plane".into()),
        Err(e) => failed("pack bijection", e),
    });

    rows.push(match mask_invariants_hold() {
        Ok(ok) => row("mask invariants", ok, "nesting and DC membership, k = 1..64".into()),
        Err(e) => failed("mask invariants", e),
    });

    match gradient_reports(seed) {
        Ok(reports) => {
            for (name, r) in reports {
                let label = match name {
                    "freqnet" => "gradient freqnet",
                    "spatialnet" => "gradient spatialnet",
                    _ => "gradient gated freqnet",
                };
                rows.push(row(
                    label,
                    r.passes(GRAD_TOLERANCE),
                    format!("max rel err {:.3e} over {} entries ({} at kinks)", r.max_rel_err, r.entries.len(), r.kinks),
                ));
            }
        }
        Err(e) => rows.push(failed("gradient checks", e)),
    }

    for (name, scores, expect) in [
        ("gumbel 7.5/2.5", ScorePair { off: 7.5, on: 2.5 }, 0.75),
        ("gumbel equal", ScorePair { off: 1.0, on: 1.0 }, 0.5),
    ] {
        rows.push(match gumbel_off_rate(scores, 100_000, seed) {
            Ok(r) => row(name, (r - expect).abs() <= 0.01, format!("off rate {r:.4}, expected {expect}")),
            Err(e) => failed(name, e),
        });
    }
    rows
}

pub fn format_table(rows: &[CheckRow]) -> String {
    let width = rows.iter().map(|r| r.name.len()).max().unwrap_or(0);
    let mut s = String::new();
    for r in rows {
        let _ = writeln!(
            s,
            "{:<width$}  {}  {}",
            r.name,
            if r.passed { "PASS" } else { "FAIL" },
            r.detail
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_build_passes() {
        let rows = run_checks(BlockDct::standard(), 0);
        assert!(rows.iter().all(|r| r.passed), "{}", format_table(&rows));
    }

    #[test]
    fn corrupted_dct_is_caught() {
        let rows = run_checks(&BlockDct::with_dc_scale(1.001), 0);
        let dct = rows.iter().find(|r| r.name == "dct oracle").unwrap();
        assert!(!dct.passed);
        assert!(format_table(&rows).contains("dct oracle"));
    }
}
