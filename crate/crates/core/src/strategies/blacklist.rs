use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use super::StrategyError;
use crate::can_core::log::parse_frame;
use crate::can_core::CanFrame;

/// Traffic that minimization must never drop.
///
/// File form, one entry per line: a bare hex id (`0C0`) protects every frame
/// on that id, a full frame (`0C0#01FF`) protects only that payload. Blank
/// lines and lines starting with `#` are skipped.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Blacklist {
    ids: BTreeSet<u32>,
    frames: BTreeSet<(u32, Vec<u8>)>,
}

impl Blacklist {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_ids(ids: impl IntoIterator<Item = u32>) -> Self {
        Blacklist {
            ids: ids.into_iter().collect(),
            frames: BTreeSet::new(),
        }
    }

    pub fn insert_id(&mut self, id: u32) {
        self.ids.insert(id);
    }

    pub fn insert_frame(&mut self, frame: &CanFrame) {
        self.frames.insert((frame.id(), frame.data().to_vec()));
    }

    pub fn ids(&self) -> impl Iterator<Item = u32> + '_ {
        self.ids.iter().copied()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty() && self.frames.is_empty()
    }

    pub fn contains(&self, frame: &CanFrame) -> bool {
        self.ids.contains(&frame.id()) || self.frames.contains(&(frame.id(), frame.data().to_vec()))
    }

    pub fn merge(&mut self, other: &Blacklist) {
        self.ids.extend(other.ids.iter().copied());
        self.frames.extend(other.frames.iter().cloned());
    }

    pub fn load(path: &Path) -> Result<Self, StrategyError> {
        let text = fs::read_to_string(path).map_err(|e| StrategyError::Blacklist(format!("{}: {e}", path.display())))?;
        text.parse()
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        fs::write(path, self.to_string())
    }
}

impl FromStr for Blacklist {
    type Err = StrategyError;

    fn from_str(text: &str) -> Result<Self, Self::Err> {
        let mut out = Blacklist::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |why: String| StrategyError::Blacklist(format!("line {}: {why}", n + 1));
            if line.contains('#') {
                out.insert_frame(&parse_frame(line).map_err(bad)?);
            } else {
                let digits = line.trim_start_matches("0x");
                let id = u32::from_str_radix(digits, 16).map_err(|e| bad(e.to_string()))?;
                out.insert_id(id);
            }
        }
        Ok(out)
    }
}

impl fmt::Display for Blacklist {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for id in &self.ids {
            writeln!(f, "{id:03X}")?;
        }
        for (id, data) in &self.frames {
            let hex: String = data.iter().map(|b| format!("{b:02X}")).collect();
            writeln!(f, "{id:03X}#{hex}")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_roundtrip() {
        let b: Blacklist = "0C0\n\n# heartbeat partner\n0x2A1\n123#1122\n".parse().unwrap();
        assert!(b.contains(&CanFrame::standard(0x0C0, &[9]).unwrap()));
        assert!(b.contains(&CanFrame::standard(0x123, &[0x11, 0x22]).unwrap()));
        assert!(!b.contains(&CanFrame::standard(0x123, &[0x11]).unwrap()));
        assert_eq!(b.to_string(), "0C0\n2A1\n123#1122\n");
        assert_eq!(b.to_string().parse::<Blacklist>().unwrap(), b);
        assert!("zz\n".parse::<Blacklist>().is_err());
    }
}
