use super::{IndicatorState, OracleEvent, Transition};
use crate::{ChannelId, Micros};

/// Default attribution window: frames sent this long before an event are candidate causes.
pub const DEFAULT_ATTRIBUTION: Micros = 500_000;

/// Turns a per-channel stream of classified samples into on/off transition events.
///
/// A new state must be seen in `debounce` consecutive samples before it is
/// reported. The detector starts in the off state.
#[derive(Debug, Clone)]
pub struct EdgeDetector {
    oracle: String,
    channel: ChannelId,
    attribution: Micros,
    debounce: usize,
    state: IndicatorState,
    streak: usize,
}

impl EdgeDetector {
    pub fn new(oracle: impl Into<String>, channel: ChannelId, attribution: Micros) -> Self {
        EdgeDetector {
            oracle: oracle.into(),
            channel,
            attribution,
            debounce: 1,
            state: IndicatorState::Off,
            streak: 0,
        }
    }

    pub fn with_debounce(mut self, samples: usize) -> Self {
        self.debounce = samples.max(1);
        self
    }

    /// Start from `state` instead of off.
    pub fn with_state(mut self, state: IndicatorState) -> Self {
        self.state = state;
        self
    }

    pub fn state(&self) -> IndicatorState {
        self.state
    }

    pub fn feed(&mut self, t: Micros, sample: IndicatorState) -> Option<OracleEvent> {
        if sample == self.state {
            self.streak = 0;
            return None;
        }
        self.streak += 1;
        if self.streak < self.debounce {
            return None;
        }
        self.streak = 0;
        self.state = sample;
        Some(OracleEvent {
            oracle: self.oracle.clone(),
            channel: Some(self.channel),
            transition: match sample {
                IndicatorState::On => Transition::Activated,
                IndicatorState::Off => Transition::Deactivated,
            },
            timestamp: t,
            window_start: t.saturating_sub(self.attribution),
        })
    }
}

/// One event per on↔off transition of a channel's sample stream.
pub fn edge_events(
    oracle: &str,
    channel: ChannelId,
    attribution: Micros,
    samples: impl IntoIterator<Item = (Micros, IndicatorState)>,
) -> Vec<OracleEvent> {
    let mut det = EdgeDetector::new(oracle, channel, attribution);
    samples
        .into_iter()
        .filter_map(|(t, s)| det.feed(t, s))
        .collect()
}
