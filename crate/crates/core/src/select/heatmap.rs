//! Per-channel selection frequencies aggregated over many samples.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::mask::{Component, CHANNELS_PER_COMPONENT, TOTAL_CHANNELS};
use crate::dataio::pgm_write;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HeatMap {
    counts: [[u64; CHANNELS_PER_COMPONENT]; 3],
    samples: u64,
}

impl Default for HeatMap {
    fn default() -> Self {
        Self::new()
    }
}

impl HeatMap {
    pub fn new() -> Self {
        Self {
            counts: [[0; CHANNELS_PER_COMPONENT]; 3],
            samples: 0,
        }
    }

    /// Builds a map from per-sample decisions over all 192 channels.
    pub fn from_decisions<'a, I>(decisions: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a [bool]>,
    {
        let mut map = Self::new();
        for d in decisions {
            map.record(d)?;
        }
        if map.samples == 0 {
            return Err(Error::InsufficientData("heat map needs at least one sample".into()));
        }
        Ok(map)
    }

    pub fn record(&mut self, decision: &[bool]) -> Result<()> {
        if decision.len() != TOTAL_CHANNELS {
            return Err(Error::shape(format!(
                "decision has {} entries, expected {TOTAL_CHANNELS}",
                decision.len()
            )));
        }
        for (g, &on) in decision.iter().enumerate() {
            if on {
                self.counts[g / CHANNELS_PER_COMPONENT][g % CHANNELS_PER_COMPONENT] += 1;
            }
        }
        self.samples += 1;
        Ok(())
    }

    pub fn merge(&mut self, other: &HeatMap) {
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        self.samples += other.samples;
    }

    pub fn samples(&self) -> u64 {
        self.samples
    }

    pub fn count(&self, comp: Component, c: usize) -> u64 {
        self.counts[comp.index()][c]
    }

    pub fn frequency(&self, comp: Component, c: usize) -> f64 {
        if self.samples == 0 {
            0.0
        } else {
            self.count(comp, c) as f64 / self.samples as f64
        }
    }

    /// Frequencies indexed by global channel.
    pub fn frequencies(&self) -> Vec<f64> {
        (0..TOTAL_CHANNELS)
            .map(|g| {
                let (comp, c) = Component::of_channel(g);
                self.frequency(comp, c)
            })
            .collect()
    }

    /// `component,u,v,frequency` with rows in component, u, v order.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("component,u,v,frequency\n");
        for comp in Component::ALL {
            for c in 0..CHANNELS_PER_COMPONENT {
                let _ = writeln!(s, "{},{},{},{:?}", comp.tag(), c / 8, c % 8, self.frequency(comp, c));
            }
        }
        s
    }

    /// 8x8 grayscale, darker means selected more often.
    pub fn to_pgm(&self, comp: Component) -> Vec<u8> {
        let gray: Vec<u8> = (0..CHANNELS_PER_COMPONENT)
            .map(|c| (255.0 * (1.0 - self.frequency(comp, c))).round().clamp(0.0, 255.0) as u8)
            .collect();
        pgm_write(8, 8, &gray)
    }

    /// Writes `<prefix>.csv` and `<prefix>_{y,cb,cr}.pgm`; returns the paths.
    pub fn write(&self, prefix: &Path) -> Result<Vec<PathBuf>> {
        let with_suffix = |suffix: &str| {
            let mut name = prefix.file_name().unwrap_or_default().to_os_string();
            name.push(suffix);
            prefix.with_file_name(name)
        };
        if let Some(dir) = prefix.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let mut out = Vec::new();
        let csv = with_suffix(".csv");
        fs::write(&csv, self.to_csv()).map_err(|e| Error::io(&csv, e))?;
        out.push(csv);
        for comp in Component::ALL {
            let p = with_suffix(&format!("_{}.pgm", comp.tag().to_ascii_lowercase()));
            fs::write(&p, self.to_pgm(comp)).map_err(|e| Error::io(&p, e))?;
            out.push(p);
        }
        Ok(out)
    }
}

/// Parses the CSV emitted by [`HeatMap::to_csv`] into per-global-channel frequencies.
pub fn parse_heatmap_csv(text: &str) -> Result<Vec<f64>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == "component,u,v,frequency" => {}
        _ => return Err(Error::parse(1, "expected header `component,u,v,frequency`")),
    }
    let mut freq = vec![f64::NAN; TOTAL_CHANNELS];
    for (i, line) in lines {
        let no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.trim().split(',').collect();
        let [tag, u, v, p] = f[..] else {
            return Err(Error::parse(no, "expected 4 fields"));
        };
        let comp = Component::from_tag(tag).ok_or_else(|| Error::parse(no, format!("unknown component {tag:?}")))?;
        let u: usize = u.parse().map_err(|_| Error::parse(no, "bad u"))?;
        let v: usize = v.parse().map_err(|_| Error::parse(no, "bad v"))?;
        let p: f64 = p.parse().map_err(|_| Error::parse(no, "bad frequency"))?;
        if u >= 8 || v >= 8 || !(0.0..=1.0).contains(&p) {
            return Err(Error::parse(no, "u, v or frequency out of range"));
        }
        freq[comp.channel(8 * u + v)] = p;
    }
    if let Some(g) = freq.iter().position(|p| p.is_nan()) {
        return Err(Error::Validation(format!("heat map CSV lacks channel {g}")));
    }
    Ok(freq)
}
