//! Input preparation and checkpoints.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::autodiff::ParamStore;
use crate::codec::{encode_image, ChannelMoments, ChannelStats, RgbImage};
use crate::dataio::{tensor_read, tensor_write, Dataset};
use crate::error::{Error, Result};
use crate::model::net::{build_model, GateSpec, Model, ModelKind, ModelSpec};
use crate::model::train::Sample;
use crate::select::{SelectionMask, TOTAL_CHANNELS};
use crate::tensor::Tensor;

/// 2x2 box average per channel, rounded to nearest.
pub fn downsample2x(img: &RgbImage) -> Result<RgbImage> {
    let (w, h) = (img.width(), img.height());
    if w % 2 != 0 || h % 2 != 0 {
        return Err(Error::shape(format!("downsampling needs even extents, got {w}x{h}")));
    }
    let mut out = Vec::with_capacity(3 * w * h / 4);
    for y in (0..h).step_by(2) {
        for x in (0..w).step_by(2) {
            let quad = [img.pixel(x, y), img.pixel(x + 1, y), img.pixel(x, y + 1), img.pixel(x + 1, y + 1)];
            for c in 0..3 {
                let sum: u32 = quad.iter().map(|p| u32::from(p[c])).sum();
                // Round half up: (sum + 2) / 4.
                out.push(((sum + 2) / 4) as u8);
            }
        }
    }
    RgbImage::new(w / 2, h / 2, out)
}

/// Pixels as an `H x W x 3` real tensor.
pub fn rgb_tensor(img: &RgbImage) -> Tensor {
    Tensor::new(
        vec![img.height(), img.width(), 3],
        img.pixels().iter().map(|&p| f64::from(p)).collect(),
    )
    .expect("rgb extents")
}

/// Deterministic image-to-tensor transform fitted on training images.
#[derive(Clone, Debug, PartialEq)]
pub struct Preprocess {
    pub kind: ModelKind,
    /// Channels kept by frequency models.
    pub mask: SelectionMask,
    /// Whether spatial models see 2x box-downsampled images.
    pub downsample: bool,
    pub stats: ChannelMoments,
}

impl Preprocess {
    fn raw(&self, img: &RgbImage) -> Result<Tensor> {
        match self.kind {
            ModelKind::Freq => Ok(encode_image(img, Some(&self.mask), None)?.tensor),
            ModelKind::Spatial if self.downsample => Ok(rgb_tensor(&downsample2x(img)?)),
            ModelKind::Spatial => Ok(rgb_tensor(img)),
        }
    }

    fn fit(kind: ModelKind, mask: SelectionMask, downsample: bool, images: &[RgbImage]) -> Result<Self> {
        let mut p = Self {
            kind,
            mask,
            downsample,
            stats: ChannelMoments { mean: Vec::new(), variance: Vec::new() },
        };
        let channels = match kind {
            ModelKind::Freq => p.mask.len(),
            ModelKind::Spatial => 3,
        };
        let mut acc = ChannelStats::new(channels);
        for img in images {
            acc.update(&p.raw(img)?)?;
        }
        p.stats = acc.finalize()?;
        Ok(p)
    }

    /// Frequency input restricted to `mask`, standardized with training moments.
    pub fn fit_freq(images: &[RgbImage], mask: SelectionMask) -> Result<Self> {
        Self::fit(ModelKind::Freq, mask, false, images)
    }

    /// RGB input, optionally downsampled, standardized per color channel.
    pub fn fit_spatial(images: &[RgbImage], downsample: bool) -> Result<Self> {
        Self::fit(ModelKind::Spatial, SelectionMask::all(), downsample, images)
    }

    pub fn apply(&self, img: &RgbImage) -> Result<Tensor> {
        let mut t = self.raw(img)?;
        self.stats.standardize(&mut t)?;
        Ok(t)
    }

    pub fn apply_dataset(&self, data: &Dataset) -> Result<Vec<Sample>> {
        data.images
            .iter()
            .zip(&data.manifest.samples)
            .map(|(img, s)| {
                Ok(Sample {
                    input: self.apply(img)?,
                    label: s.label,
                })
            })
            .collect()
    }

    /// Network input extents for an `height x width` image.
    pub fn input_dims(&self, height: usize, width: usize) -> [usize; 3] {
        match self.kind {
            ModelKind::Freq => [height.div_ceil(8), width.div_ceil(8), self.mask.len()],
            ModelKind::Spatial if self.downsample => [height / 2, width / 2, 3],
            ModelKind::Spatial => [height, width, 3],
        }
    }

    /// Spreads gate bits over the masked channels back to all 192.
    pub fn expand_decision(&self, bits: &[bool]) -> Result<Vec<bool>> {
        let channels = self.mask.channels();
        if bits.len() != channels.len() {
            return Err(Error::shape(format!(
                "{} bits for a {}-channel mask",
                bits.len(),
                channels.len()
            )));
        }
        let mut out = vec![false; TOTAL_CHANNELS];
        for (&c, &b) in channels.iter().zip(bits) {
            out[c] = b;
        }
        Ok(out)
    }
}

/// Trained model plus the preprocessing it expects.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: Model,
    pub preprocess: Preprocess,
}

const MANIFEST: &str = "checkpoint.txt";

impl Checkpoint {
    /// Writes `checkpoint.txt`, `mask.txt`, `stats.txt` and one FDT1 file per tensor.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let write = |name: &str, bytes: &[u8]| {
            let p = dir.join(name);
            fs::write(&p, bytes).map_err(|e| Error::io(&p, e))
        };
        let spec = &self.model.spec;
        let mut m = String::from("FDCKPT 1\n");
        let _ = writeln!(
            m,
            "MODEL {} {} {} {} {} {}",
            spec.kind.name(),
            spec.height,
            spec.width,
            spec.channels,
            spec.classes,
            spec.seed
        );
        let widths: Vec<String> = spec.widths.iter().map(usize::to_string).collect();
        let _ = writeln!(m, "WIDTHS {}", widths.join(" "));
        if let Some(g) = spec.gate {
            let _ = writeln!(m, "GATE {} {:?} {:?}", g.reduction, g.tau, g.lambda);
        }
        let _ = writeln!(m, "DOWNSAMPLE {}", u8::from(self.preprocess.downsample));
        let _ = writeln!(m, "MASK mask.txt");
        let _ = writeln!(m, "STATS stats.txt");
        write("mask.txt", self.preprocess.mask.to_text().as_bytes())?;
        write("stats.txt", self.preprocess.stats.to_text().as_bytes())?;
        for (_, name, t) in self.model.params.iter() {
            let file = format!("{name}.fdt");
            write(&file, &tensor_write(t)?)?;
            let _ = writeln!(m, "PARAM {name} {file}");
        }
        write(MANIFEST, m.as_bytes())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let read = |name: &str| {
            let p = dir.join(name);
            fs::read(&p).map_err(|e| Error::io(&p, e))
        };
        let text = String::from_utf8(read(MANIFEST)?)
            .map_err(|_| Error::Format("checkpoint manifest is not UTF-8".into()))?;
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        if lines.next().map(|(_, l)| l.trim()) != Some("FDCKPT 1") {
            return Err(Error::parse(1, "expected `FDCKPT 1`"));
        }
        fn num<T: std::str::FromStr>(s: &str, line: usize) -> Result<T> {
            s.parse().map_err(|_| Error::parse(line, format!("bad number {s:?}")))
        }
        let (mut spec, mut downsample, mut mask, mut stats) = (None, false, None, None);
        let mut gate = None;
        let mut widths = Vec::new();
        let mut params = ParamStore::new();
        for (no, line) in lines {
            let f: Vec<&str> = line.split_whitespace().collect();
            match f[..] {
                [] => {}
                ["MODEL", kind, h, w, c, k, seed] => {
                    let kind = ModelKind::parse(kind).ok_or_else(|| Error::parse(no, format!("unknown model kind {kind:?}")))?;
                    spec = Some(ModelSpec {
                        kind,
                        height: num(h, no)?,
                        width: num(w, no)?,
                        channels: num(c, no)?,
                        classes: num(k, no)?,
                        widths: Vec::new(),
                        gate: None,
                        seed: num(seed, no)?,
                    });
                }
                ["WIDTHS", ref rest @ ..] => {
                    widths = rest.iter().map(|s| num(s, no)).collect::<Result<_>>()?;
                }
                ["GATE", r, tau, lambda] => {
                    gate = Some(GateSpec {
                        reduction: num(r, no)?,
                        tau: num(tau, no)?,
                        lambda: num(lambda, no)?,
                    })
                }
                ["DOWNSAMPLE", d] => downsample = d == "1",
                ["MASK", file] => {
                    let text = String::from_utf8_lossy(&read(file)?).into_owned();
                    mask = Some(SelectionMask::parse(&text)?);
                }
                ["STATS", file] => {
                    let text = String::from_utf8_lossy(&read(file)?).into_owned();
                    stats = Some(ChannelMoments::parse(&text)?);
                }
                ["PARAM", name, file] => {
                    params.add(name, tensor_read(&read(file)?)?);
                }
                _ => return Err(Error::parse(no, format!("unrecognized line {line:?}"))),
            }
        }
        let mut spec = spec.ok_or_else(|| Error::Validation("checkpoint lacks a MODEL line".into()))?;
        spec.widths = widths;
        spec.gate = gate;
        let mut model = build_model(spec)?;
        model.load_params(params)?;
        let preprocess = Preprocess {
            kind: model.spec.kind,
            mask: mask.ok_or_else(|| Error::Validation("checkpoint lacks a MASK line".into()))?,
            downsample,
            stats: stats.ok_or_else(|| Error::Validation("checkpoint lacks a STATS line".into()))?,
        };
        Ok(Self { model, preprocess })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::{gen_band_dataset, BandConfig};
    use crate::model::net::build_freqnet;
    use crate::rng::{Rng, Stream};
    use crate::select::named_mask;

    #[test]
    fn downsample_cases() {
        let c = RgbImage::filled(4, 4, [7, 100, 255]);
        assert_eq!(downsample2x(&c).unwrap(), RgbImage::filled(2, 2, [7, 100, 255]));
        let mut checker = RgbImage::filled(4, 4, [0, 0, 0]);
        for y in 0..4 {
            for x in 0..4 {
                if (x + y) % 2 == 0 {
                    checker.set_pixel(x, y, [255, 255, 255]);
                }
            }
        }
        assert_eq!(downsample2x(&checker).unwrap(), RgbImage::filled(2, 2, [128, 128, 128]));
        assert!(downsample2x(&RgbImage::filled(3, 4, [0; 3])).is_err());

        let mut rng = Rng::new(8, Stream::Data);
        let img = RgbImage::new(6, 4, (0..72).map(|_| rng.below(256) as u8).collect()).unwrap();
        let d = downsample2x(&img).unwrap();
        for y in 0..2 {
            for x in 0..3 {
                for c in 0..3 {
                    let s: f64 = [(0, 0), (1, 0), (0, 1), (1, 1)]
                        .iter()
                        .map(|&(dx, dy)| f64::from(img.pixel(2 * x + dx, 2 * y + dy)[c]))
                        .sum();
                    assert_eq!(f64::from(d.pixel(x, y)[c]), (s / 4.0 + 0.5).floor());
                }
            }
        }
    }

    #[test]
    fn preprocess_standardizes_and_checkpoint_round_trips() {
        let cfg = BandConfig { samples_per_class: 3, height: 16, width: 16, ..Default::default() };
        let data = gen_band_dataset(&cfg).unwrap();
        let mask = named_mask("DCT-24S").unwrap();
        let pre = Preprocess::fit_freq(&data.images, mask).unwrap();
        let samples = pre.apply_dataset(&data).unwrap();
        assert_eq!(samples[0].input.dims(), pre.input_dims(16, 16));
        let mut mean = vec![0.0; 24];
        let mut n = 0.0;
        for s in &samples {
            for px in s.input.data().chunks_exact(24) {
                mean.iter_mut().zip(px).for_each(|(m, v)| *m += v);
                n += 1.0;
            }
        }
        assert!(mean.iter().all(|m| (m / n).abs() < 1e-8));

        let spec = ModelSpec::freq(2, 2, 24, 4).with_gate(GateSpec::default()).with_seed(3);
        let ck = Checkpoint { model: build_freqnet(spec).unwrap(), preprocess: pre };
        let dir = tempfile::tempdir().unwrap();
        ck.save(dir.path()).unwrap();
        let back = Checkpoint::load(dir.path()).unwrap();
        assert_eq!(back.preprocess, ck.preprocess);
        assert_eq!(back.model.spec, ck.model.spec);
        for ((_, n1, a), (_, n2, b)) in back.model.params.iter().zip(ck.model.params.iter()) {
            assert_eq!(n1, n2);
            assert!(a.max_abs_diff(b) <= 1e-6 * b.data().iter().fold(1.0f64, |m, v| m.max(v.abs())));
        }
        assert!(back.model.gate().is_some());

        let dir2 = tempfile::tempdir().unwrap();
        back.save(dir2.path()).unwrap();
        for entry in fs::read_dir(dir.path()).unwrap() {
            let p = entry.unwrap().path();
            let q = dir2.path().join(p.file_name().unwrap());
            assert_eq!(fs::read(&p).unwrap(), fs::read(q).unwrap(), "{p:?}");
        }
    }

    #[test]
    fn expand_decision_maps_mask_channels() {
        let mask = SelectionMask::from_channels([0, 65, 130]).unwrap();
        let pre = Preprocess {
            kind: ModelKind::Freq,
            mask,
            downsample: false,
            stats: ChannelMoments { mean: vec![0.0; 3], variance: vec![1.0; 3] },
        };
        let full = pre.expand_decision(&[true, false, true]).unwrap();
        assert_eq!(full.iter().filter(|&&b| b).count(), 2);
        assert!(full[0] && !full[65] && full[130]);
    }
}
