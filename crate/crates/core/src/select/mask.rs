//! Per-component frequency channel selections.

use std::fmt::Write as _;
use std::sync::OnceLock;

use crate::error::{Error, Result};

pub const CHANNELS_PER_COMPONENT: usize = 64;
pub const TOTAL_CHANNELS: usize = 3 * CHANNELS_PER_COMPONENT;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Component {
    Y = 0,
    Cb = 1,
    Cr = 2,
}

impl Component {
    pub const ALL: [Component; 3] = [Component::Y, Component::Cb, Component::Cr];

    pub fn tag(self) -> &'static str {
        match self {
            Component::Y => "Y",
            Component::Cb => "CB",
            Component::Cr => "CR",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        match tag {
            "Y" => Some(Component::Y),
            "CB" => Some(Component::Cb),
            "CR" => Some(Component::Cr),
            _ => None,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    /// Global channel index of frequency `c` in this component.
    pub fn channel(self, c: usize) -> usize {
        self.index() * CHANNELS_PER_COMPONENT + c
    }

    pub fn of_channel(global: usize) -> (Component, usize) {
        (Self::ALL[global / 64], global % 64)
    }
}

/// Sorted, duplicate-free channel sets for Y, Cb and Cr.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct SelectionMask {
    sets: [Vec<u8>; 3],
}

impl SelectionMask {
    pub fn new(y: Vec<u8>, cb: Vec<u8>, cr: Vec<u8>) -> Result<Self> {
        let mut sets = [y, cb, cr];
        for (set, comp) in sets.iter_mut().zip(Component::ALL) {
            set.sort_unstable();
            if let Some(&bad) = set.iter().find(|&&i| i as usize >= CHANNELS_PER_COMPONENT) {
                return Err(Error::Validation(format!("{} index {bad} out of range", comp.tag())));
            }
            if set.windows(2).any(|w| w[0] == w[1]) {
                return Err(Error::Validation(format!("duplicate {} index", comp.tag())));
            }
        }
        Ok(Self { sets })
    }

    /// Every channel of every component.
    pub fn all() -> Self {
        let full: Vec<u8> = (0..64).collect();
        Self {
            sets: [full.clone(), full.clone(), full],
        }
    }

    pub fn component(&self, c: Component) -> &[u8] {
        &self.sets[c.index()]
    }

    pub fn counts(&self) -> (usize, usize, usize) {
        (self.sets[0].len(), self.sets[1].len(), self.sets[2].len())
    }

    pub fn len(&self) -> usize {
        self.sets.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_all(&self) -> bool {
        self.len() == TOTAL_CHANNELS
    }

    /// Global indices (Y, then Cb, then Cr) in ascending order.
    pub fn channels(&self) -> Vec<usize> {
        Component::ALL
            .iter()
            .flat_map(|&c| self.sets[c.index()].iter().map(move |&i| c.channel(i as usize)))
            .collect()
    }

    pub fn contains(&self, global: usize) -> bool {
        if global >= TOTAL_CHANNELS {
            return false;
        }
        let (comp, c) = Component::of_channel(global);
        self.sets[comp.index()].binary_search(&(c as u8)).is_ok()
    }

    pub fn is_subset_of(&self, other: &SelectionMask) -> bool {
        self.channels().into_iter().all(|g| other.contains(g))
    }

    pub fn from_channels(channels: impl IntoIterator<Item = usize>) -> Result<Self> {
        let mut sets: [Vec<u8>; 3] = Default::default();
        for g in channels {
            if g >= TOTAL_CHANNELS {
                return Err(Error::Validation(format!("channel {g} out of range")));
            }
            let (comp, c) = Component::of_channel(g);
            sets[comp.index()].push(c as u8);
        }
        let [y, cb, cr] = sets;
        Self::new(y, cb, cr)
    }

    /// Canonical mask file text.
    pub fn to_text(&self) -> String {
        let mut s = String::from("FDMASK 1\n");
        for comp in Component::ALL {
            for i in &self.sets[comp.index()] {
                let _ = writeln!(s, "{} {i}", comp.tag());
            }
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        list_mask(text)
    }
}

fn check_count(k: usize) -> Result<()> {
    if k > CHANNELS_PER_COMPONENT {
        return Err(Error::Config(format!("channel count {k} exceeds 64")));
    }
    Ok(())
}

/// Cells ordered by square shell (`max(u, v)`), row-major within a shell.
fn shell_order() -> &'static [u8; 64] {
    static ORDER: OnceLock<[u8; 64]> = OnceLock::new();
    ORDER.get_or_init(|| {
        let mut cells: Vec<u8> = (0..64).collect();
        cells.sort_by_key(|&c| ((c / 8).max(c % 8), c));
        cells.try_into().expect("64 cells")
    })
}

/// JPEG zigzag scan of the 8x8 grid.
pub fn zigzag_order() -> &'static [u8; 64] {
    static ORDER: OnceLock<[u8; 64]> = OnceLock::new();
    ORDER.get_or_init(|| {
        let mut cells: Vec<u8> = (0..64).collect();
        cells.sort_by_key(|&c| {
            let (u, v) = (c / 8, c % 8);
            let d = u + v;
            // Odd anti-diagonals run top-right to bottom-left (u rising).
            let along = if d % 2 == 1 { u } else { v };
            (d, along)
        });
        cells.try_into().expect("64 cells")
    })
}

fn prefix(order: &[u8; 64], k: usize) -> Vec<u8> {
    order[..k].to_vec()
}

/// Upper-left squares: the smallest `s x s` square with `s*s >= k`,
/// trimmed to `k` cells by dropping cells of its outer shell in reverse
/// row-major order.
pub fn square_mask(k_y: usize, k_cb: usize, k_cr: usize) -> Result<SelectionMask> {
    for k in [k_y, k_cb, k_cr] {
        check_count(k)?;
    }
    let o = shell_order();
    SelectionMask::new(prefix(o, k_y), prefix(o, k_cb), prefix(o, k_cr))
}

/// Upper-left triangles: the first `k` cells in zigzag order.
pub fn triangle_mask(k_y: usize, k_cb: usize, k_cr: usize) -> Result<SelectionMask> {
    for k in [k_y, k_cb, k_cr] {
        check_count(k)?;
    }
    let o = zigzag_order();
    SelectionMask::new(prefix(o, k_y), prefix(o, k_cb), prefix(o, k_cr))
}

pub const NAMED_MASKS: [&str; 6] = ["DCT-24S", "DCT-24T", "DCT-48S", "DCT-48T", "DCT-64S", "DCT-64T"];

/// Per-component counts of a named variant.
pub fn named_counts(name: &str) -> Option<(usize, usize, usize)> {
    let (size, _) = name.strip_prefix("DCT-")?.split_at_checked(2)?;
    match size {
        "24" => Some((14, 5, 5)),
        "48" => Some((32, 8, 8)),
        "64" => Some((44, 10, 10)),
        _ => None,
    }
    .filter(|_| NAMED_MASKS.contains(&name))
}

pub fn named_mask(name: &str) -> Result<SelectionMask> {
    let (y, cb, cr) =
        named_counts(name).ok_or_else(|| Error::Config(format!("unknown mask name {name:?}")))?;
    if name.ends_with('S') {
        square_mask(y, cb, cr)
    } else {
        triangle_mask(y, cb, cr)
    }
}

/// Parses the `FDMASK 1` text format.
pub fn list_mask(text: &str) -> Result<SelectionMask> {
    let mut sets: [Vec<u8>; 3] = Default::default();
    let mut header_seen = false;
    for (no, raw) in text.lines().enumerate() {
        let line_no = no + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if !header_seen {
            if fields != ["FDMASK", "1"] {
                return Err(Error::parse(line_no, "expected header `FDMASK 1`"));
            }
            header_seen = true;
            continue;
        }
        let [tag, idx] = fields[..] else {
            return Err(Error::parse(line_no, "expected `<Y|CB|CR> <index>`"));
        };
        let comp = Component::from_tag(tag)
            .ok_or_else(|| Error::parse(line_no, format!("unknown component {tag:?}")))?;
        let idx: u8 = idx
            .parse()
            .ok()
            .filter(|&i: &u8| (i as usize) < CHANNELS_PER_COMPONENT)
            .ok_or_else(|| Error::parse(line_no, format!("index {idx:?} not in 0..64")))?;
        let set = &mut sets[comp.index()];
        if set.contains(&idx) {
            return Err(Error::parse(line_no, format!("duplicate {tag} {idx}")));
        }
        set.push(idx);
    }
    if !header_seen {
        return Err(Error::parse(1, "missing `FDMASK 1` header"));
    }
    let [y, cb, cr] = sets;
    SelectionMask::new(y, cb, cr)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_examples() {
        let m = square_mask(14, 5, 4).unwrap();
        assert_eq!(
            m.component(Component::Y),
            &[0, 1, 2, 3, 8, 9, 10, 11, 16, 17, 18, 19, 24, 25]
        );
        assert_eq!(m.component(Component::Cb), &[0, 1, 2, 8, 9]);
        assert_eq!(m.component(Component::Cr), &[0, 1, 8, 9]);
        let full = square_mask(64, 0, 0).unwrap();
        assert_eq!(full.component(Component::Y).len(), 64);
        assert!(full.component(Component::Cb).is_empty());
    }

    #[test]
    fn triangle_examples() {
        let m = triangle_mask(1, 3, 6).unwrap();
        assert_eq!(m.component(Component::Y), &[0]);
        assert_eq!(m.component(Component::Cb), &[0, 1, 8]);
        assert_eq!(m.component(Component::Cr), &[0, 1, 2, 8, 9, 16]);
    }

    #[test]
    fn zigzag_is_jpeg_order() {
        let z = zigzag_order();
        assert_eq!(&z[..10], &[0, 1, 8, 16, 9, 2, 3, 10, 17, 24]);
        assert_eq!(z[63], 63);
        let mut sorted = z.to_vec();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..64).collect::<Vec<u8>>());
    }

    #[test]
    fn counts_over_64_rejected() {
        assert!(matches!(square_mask(65, 0, 0), Err(Error::Config(_))));
        assert!(matches!(triangle_mask(0, 0, 65), Err(Error::Config(_))));
    }

    #[test]
    fn nesting_and_dc_membership() {
        for k in 1..64 {
            for f in [square_mask, triangle_mask] {
                let a = f(k, k, k).unwrap();
                let b = f(k + 1, k + 1, k + 1).unwrap();
                assert!(a.is_subset_of(&b), "k={k}");
                for comp in Component::ALL {
                    assert_eq!(a.component(comp)[0], 0);
                }
            }
        }
    }

    #[test]
    fn named_masks() {
        for name in NAMED_MASKS {
            let m = named_mask(name).unwrap();
            let n: usize = name[4..6].parse().unwrap();
            assert_eq!(m.len(), n, "{name}");
        }
        assert_eq!(named_mask("DCT-24S").unwrap().counts(), (14, 5, 5));
        assert_eq!(named_mask("DCT-48T").unwrap().counts(), (32, 8, 8));
        assert_eq!(named_mask("DCT-64S").unwrap().counts(), (44, 10, 10));
        assert!(matches!(named_mask("DCT-24D"), Err(Error::Config(_))));
        assert!(matches!(named_mask("DCT-32S"), Err(Error::Config(_))));
    }

    #[test]
    fn list_mask_parses() {
        let m = list_mask("FDMASK 1\n# comment\nY 1\nY 0\nCB 0  # trailing\n").unwrap();
        assert_eq!(m.component(Component::Y), &[0, 1]);
        assert_eq!(m.component(Component::Cb), &[0]);
        assert!(m.component(Component::Cr).is_empty());
        assert_eq!(m.to_text(), "FDMASK 1\nY 0\nY 1\nCB 0\n");
        assert_eq!(list_mask(&m.to_text()).unwrap(), m);
    }

    #[test]
    fn list_mask_errors_carry_line_numbers() {
        let line_of = |text: &str| match list_mask(text) {
            Err(Error::Parse { line, .. }) => line,
            other => panic!("{other:?}"),
        };
        assert_eq!(line_of("FDMASK 1\nY 0\nY 0\n"), 3);
        assert_eq!(line_of("FDMASK 1\nY 64\n"), 2);
        assert_eq!(line_of("FDMASK 1\nYY 3\n"), 2);
        assert_eq!(line_of("FDMASK 2\n"), 1);
        assert_eq!(line_of(""), 1);
    }

    #[test]
    fn global_channels() {
        let m = SelectionMask::new(vec![3], vec![0], vec![63]).unwrap();
        assert_eq!(m.channels(), vec![3, 64, 191]);
        assert!(m.contains(64) && !m.contains(65));
        assert_eq!(SelectionMask::from_channels(m.channels()).unwrap(), m);
    }
}
