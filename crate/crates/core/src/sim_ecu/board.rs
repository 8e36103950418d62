use std::collections::BTreeMap;

use crate::{ChannelId, Micros};

/// Timestamped history of every physical output of the simulated targets.
///
/// Indicators are lamps (on/off); needles carry a 0–255 position. Only
/// changes are stored, so the state at any past instant can be recovered.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct OutputBoard {
    indicators: BTreeMap<ChannelId, Vec<(Micros, bool)>>,
    needles: BTreeMap<ChannelId, Vec<(Micros, u8)>>,
}

impl OutputBoard {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set_indicator(&mut self, channel: ChannelId, at: Micros, on: bool) {
        let hist = self.indicators.entry(channel).or_default();
        match hist.last_mut() {
            Some((_, last)) if *last == on => {}
            Some((t, last)) if *t == at => *last = on,
            _ => hist.push((at, on)),
        }
        // Collapse a same-instant toggle back to the previous level.
        if hist.len() >= 2 && hist[hist.len() - 1].1 == hist[hist.len() - 2].1 {
            hist.pop();
        }
    }

    pub fn set_needle(&mut self, channel: ChannelId, at: Micros, value: u8) {
        let hist = self.needles.entry(channel).or_default();
        if hist.last().is_some_and(|(_, v)| *v == value) {
            return;
        }
        hist.push((at, value));
    }

    /// Lamp state at `t` (changes at exactly `t` included). Unknown channels are off.
    pub fn indicator_at(&self, channel: ChannelId, t: Micros) -> bool {
        self.indicators.get(&channel).is_some_and(|h| {
            let i = h.partition_point(|(ts, _)| *ts <= t);
            i > 0 && h[i - 1].1
        })
    }

    pub fn needle_at(&self, channel: ChannelId, t: Micros) -> Option<u8> {
        let h = self.needles.get(&channel)?;
        let i = h.partition_point(|(ts, _)| *ts <= t);
        (i > 0).then(|| h[i - 1].1)
    }

    pub fn indicator_history(&self, channel: ChannelId) -> &[(Micros, bool)] {
        self.indicators.get(&channel).map_or(&[], |h| h.as_slice())
    }

    pub fn needle_history(&self, channel: ChannelId) -> &[(Micros, u8)] {
        self.needles.get(&channel).map_or(&[], |h| h.as_slice())
    }

    /// Times at which `channel` switched on, at or after `from`.
    pub fn activations(&self, channel: ChannelId, from: Micros) -> Vec<Micros> {
        self.indicator_history(channel)
            .iter()
            .filter(|(t, on)| *on && *t >= from)
            .map(|(t, _)| *t)
            .collect()
    }

    pub fn channels(&self) -> impl Iterator<Item = ChannelId> + '_ {
        self.indicators.keys().copied()
    }
}
