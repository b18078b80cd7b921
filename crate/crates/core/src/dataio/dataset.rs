//! Synthetic band-signature dataset.
//!
//! Every class owns a disjoint set of frequency channels. A sample is
//! synthesized directly in the coefficient domain: every coefficient of
//! every block gets Gaussian noise, and the class's signature channels
//! additionally get `±A` with an independent random sign per block. The
//! coefficients are inverse-transformed, converted to RGB and rounded to
//! 8-bit pixels.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::codec::{ycbcr_to_rgb, BlockDct, BlockGrid, RgbImage, YcbcrPlanes};
use crate::codec::pack::{blocks_to_plane, idct_grid};
use crate::dataio::pnm::{ppm_read, ppm_write};
use crate::error::{Error, Result};
use crate::rng::{Rng, Stream};
use crate::select::{Component, TOTAL_CHANNELS};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Regime {
    /// Signatures may use any of the 192 channels.
    Anywhere,
    /// Signatures restricted to `u + v >= 8`, which 2x box downsampling destroys.
    HighOnly,
}

impl Regime {
    pub fn name(self) -> &'static str {
        match self {
            Regime::Anywhere => "anywhere",
            Regime::HighOnly => "high_only",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "anywhere" => Some(Regime::Anywhere),
            "high_only" => Some(Regime::HighOnly),
            _ => None,
        }
    }

    pub fn allows(self, global: usize) -> bool {
        match self {
            Regime::Anywhere => global < TOTAL_CHANNELS,
            Regime::HighOnly => {
                let c = global % 64;
                global < TOTAL_CHANNELS && c / 8 + c % 8 >= 8
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BandConfig {
    pub classes: usize,
    pub samples_per_class: usize,
    pub signature_size: usize,
    pub amplitude: f64,
    pub sigma: f64,
    pub height: usize,
    pub width: usize,
    pub seed: u64,
    pub regime: Regime,
}

impl Default for BandConfig {
    fn default() -> Self {
        Self {
            classes: 4,
            samples_per_class: 100,
            signature_size: 3,
            amplitude: 64.0,
            sigma: 4.0,
            height: 64,
            width: 64,
            seed: 0,
            regime: Regime::Anywhere,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SampleEntry {
    pub path: String,
    pub label: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    pub classes: usize,
    pub signature_size: usize,
    pub amplitude: f64,
    pub sigma: f64,
    pub height: usize,
    pub width: usize,
    pub seed: u64,
    pub regime: Regime,
    /// Sorted global channel indices per class.
    pub signatures: Vec<Vec<usize>>,
    pub samples: Vec<SampleEntry>,
}

impl DatasetManifest {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Validation(m));
        if self.classes == 0 {
            return bad("class count must be positive".into());
        }
        if self.height % 8 != 0 || self.width % 8 != 0 || self.height == 0 || self.width == 0 {
            return bad(format!("extents {}x{} not multiples of 8", self.height, self.width));
        }
        if self.signatures.len() != self.classes {
            return bad(format!(
                "{} signature sets for {} classes",
                self.signatures.len(),
                self.classes
            ));
        }
        let mut owner = [usize::MAX; TOTAL_CHANNELS];
        for (k, sig) in self.signatures.iter().enumerate() {
            for &ch in sig {
                if !self.regime.allows(ch) {
                    return bad(format!("channel {ch} not allowed in regime {}", self.regime.name()));
                }
                if owner[ch] != usize::MAX {
                    return bad(format!(
                        "channel {ch} in signatures of classes {} and {k}",
                        owner[ch]
                    ));
                }
                owner[ch] = k;
            }
        }
        if let Some(s) = self.samples.iter().find(|s| s.label >= self.classes) {
            return bad(format!("label {} of {} out of range", s.label, s.path));
        }
        Ok(())
    }

    pub fn is_signature(&self, class: usize, channel: usize) -> bool {
        self.signatures[class].contains(&channel)
    }

    pub fn all_signature_channels(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self.signatures.iter().flatten().copied().collect();
        v.sort_unstable();
        v
    }

    pub fn to_text(&self) -> String {
        let mut s = format!(
            "FDDATA 1 {} {} {} {} {} {} {} {}\n",
            self.classes,
            self.signature_size,
            self.amplitude,
            self.sigma,
            self.height,
            self.width,
            self.seed,
            self.regime.name()
        );
        for (k, sig) in self.signatures.iter().enumerate() {
            for &ch in sig {
                let (comp, c) = Component::of_channel(ch);
                let _ = writeln!(s, "SIG {k} {} {c}", comp.tag());
            }
        }
        for e in &self.samples {
            let _ = writeln!(s, "SAMPLE {} {}", e.path, e.label);
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty());
        let (_, header) = lines.next().ok_or_else(|| Error::parse(1, "empty manifest"))?;
        let h: Vec<&str> = header.split_whitespace().collect();
        if h.len() != 10 || h[0] != "FDDATA" || h[1] != "1" {
            return Err(Error::parse(
                1,
                "expected `FDDATA 1 <K> <m> <A> <sigma> <H> <W> <seed> <regime>`",
            ));
        }
        fn num<T: std::str::FromStr>(s: &str, line: usize) -> Result<T> {
            s.parse().map_err(|_| Error::parse(line, format!("bad number {s:?}")))
        }
        let classes: usize = num(h[2], 1)?;
        let regime = Regime::parse(h[9]).ok_or_else(|| Error::parse(1, format!("unknown regime {:?}", h[9])))?;
        let mut m = DatasetManifest {
            classes,
            signature_size: num(h[3], 1)?,
            amplitude: num(h[4], 1)?,
            sigma: num(h[5], 1)?,
            height: num(h[6], 1)?,
            width: num(h[7], 1)?,
            seed: num(h[8], 1)?,
            regime,
            signatures: vec![Vec::new(); classes],
            samples: Vec::new(),
        };
        for (no, line) in lines {
            let f: Vec<&str> = line.split_whitespace().collect();
            match f[..] {
                ["SIG", k, tag, idx] => {
                    let k: usize = num(k, no)?;
                    let comp = Component::from_tag(tag)
                        .ok_or_else(|| Error::parse(no, format!("unknown component {tag:?}")))?;
                    let idx: usize = num(idx, no)?;
                    if idx >= 64 {
                        return Err(Error::parse(no, format!("index {idx} not in 0..64")));
                    }
                    m.signatures
                        .get_mut(k)
                        .ok_or_else(|| Error::Validation(format!("signature class {k} out of range")))?
                        .push(comp.channel(idx));
                }
                ["SAMPLE", path, label] => m.samples.push(SampleEntry {
                    path: path.to_string(),
                    label: num(label, no)?,
                }),
                _ => return Err(Error::parse(no, "expected a SIG or SAMPLE line")),
            }
        }
        m.signatures.iter_mut().for_each(|s| s.sort_unstable());
        m.validate()?;
        Ok(m)
    }
}

/// Manifest plus decoded images, index-aligned with `manifest.samples`.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub images: Vec<RgbImage>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.manifest.samples.iter().map(|s| s.label).collect()
    }

    /// First `per_class` samples of every class, then the rest.
    pub fn split_per_class(&self, per_class: usize) -> (Dataset, Dataset) {
        let mut seen = vec![0usize; self.manifest.classes];
        let (mut a, mut b) = (self.empty_like(), self.empty_like());
        for (entry, img) in self.manifest.samples.iter().zip(&self.images) {
            let dst = if seen[entry.label] < per_class { &mut a } else { &mut b };
            seen[entry.label] += 1;
            dst.manifest.samples.push(entry.clone());
            dst.images.push(img.clone());
        }
        (a, b)
    }

    fn empty_like(&self) -> Dataset {
        let mut manifest = self.manifest.clone();
        manifest.samples.clear();
        Dataset {
            manifest,
            images: Vec::new(),
        }
    }

    /// Writes `manifest.txt` and one PPM per sample into `dir`.
    pub fn write_to_dir(&self, dir: &Path) -> Result<PathBuf> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (entry, img) in self.manifest.samples.iter().zip(&self.images) {
            let p = dir.join(&entry.path);
            fs::write(&p, ppm_write(img)).map_err(|e| Error::io(&p, e))?;
        }
        let mpath = dir.join("manifest.txt");
        fs::write(&mpath, self.manifest.to_text()).map_err(|e| Error::io(&mpath, e))?;
        Ok(mpath)
    }

    /// Reads a manifest and the images it lists (paths relative to it).
    pub fn load(manifest_path: &Path) -> Result<Dataset> {
        let text = fs::read_to_string(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
        let manifest = DatasetManifest::parse(&text)?;
        let base = manifest_path.parent().unwrap_or(Path::new("."));
        let images = manifest
            .samples
            .iter()
            .map(|s| {
                let p = base.join(&s.path);
                let bytes = fs::read(&p).map_err(|e| Error::io(&p, e))?;
                ppm_read(&bytes)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Dataset { manifest, images })
    }
}

fn draw_signatures(cfg: &BandConfig) -> Result<Vec<Vec<usize>>> {
    let mut pool: Vec<usize> = (0..TOTAL_CHANNELS).filter(|&c| cfg.regime.allows(c)).collect();
    let need = cfg.classes * cfg.signature_size;
    if need > pool.len() {
        return Err(Error::config(format!(
            "{} classes x {} signature channels need {need} disjoint channels, regime {} has {}",
            cfg.classes,
            cfg.signature_size,
            cfg.regime.name(),
            pool.len()
        )));
    }
    let mut rng = Rng::new(cfg.seed, Stream::Data);
    rng.shuffle(&mut pool);
    Ok(pool
        .chunks_exact(cfg.signature_size.max(1))
        .take(cfg.classes)
        .map(|c| {
            let mut v = if cfg.signature_size == 0 { Vec::new() } else { c.to_vec() };
            v.sort_unstable();
            v
        })
        .collect())
}

/// Synthesizes one image of class `label` from a dedicated stream.
pub fn synthesize_sample(cfg: &BandConfig, signature: &[usize], rng: &mut Rng) -> RgbImage {
    let (rows, cols) = (cfg.height / 8, cfg.width / 8);
    let dct = BlockDct::standard();
    let mut planes = Vec::with_capacity(3);
    for comp in Component::ALL {
        let sig: Vec<usize> = signature
            .iter()
            .filter(|&&g| Component::of_channel(g).0 == comp)
            .map(|&g| g % 64)
            .collect();
        let mut grid = BlockGrid {
            rows,
            cols,
            blocks: vec![[0.0; 64]; rows * cols],
        };
        for block in &mut grid.blocks {
            for v in block.iter_mut() {
                *v = cfg.sigma * rng.normal();
            }
            for &c in &sig {
                block[c] += if rng.coin() { cfg.amplitude } else { -cfg.amplitude };
            }
        }
        planes.push(blocks_to_plane(&idct_grid(dct, &grid)));
    }
    let cr = planes.pop().expect("3 planes");
    let cb = planes.pop().expect("3 planes");
    let y = planes.pop().expect("3 planes");
    let planes = YcbcrPlanes::new(cfg.width, cfg.height, y, cb, cr).expect("plane extents");
    ycbcr_to_rgb(&planes)
}

/// Class-interleaved samples: sample `i` has label `i % K`.
pub fn gen_band_dataset(cfg: &BandConfig) -> Result<Dataset> {
    if cfg.classes == 0 || cfg.samples_per_class == 0 {
        return Err(Error::config("need at least one class and one sample per class"));
    }
    if cfg.height == 0 || cfg.width == 0 || cfg.height % 8 != 0 || cfg.width % 8 != 0 {
        return Err(Error::config(format!(
            "extents {}x{} must be positive multiples of 8",
            cfg.height, cfg.width
        )));
    }
    if !(cfg.sigma >= 0.0) || !cfg.amplitude.is_finite() {
        return Err(Error::config("amplitude must be finite and sigma nonnegative"));
    }
    let signatures = draw_signatures(cfg)?;
    let root = Rng::new(cfg.seed, Stream::Data);
    let total = cfg.classes * cfg.samples_per_class;
    let mut samples = Vec::with_capacity(total);
    let mut images = Vec::with_capacity(total);
    for i in 0..total {
        let label = i % cfg.classes;
        let mut rng = root.fork(i as u64);
        images.push(synthesize_sample(cfg, &signatures[label], &mut rng));
        samples.push(SampleEntry {
            path: format!("sample_{i:06}.ppm"),
            label,
        });
    }
    let manifest = DatasetManifest {
        classes: cfg.classes,
        signature_size: cfg.signature_size,
        amplitude: cfg.amplitude,
        sigma: cfg.sigma,
        height: cfg.height,
        width: cfg.width,
        seed: cfg.seed,
        regime: cfg.regime,
        signatures,
        samples,
    };
    manifest.validate()?;
    Ok(Dataset { manifest, images })
}
