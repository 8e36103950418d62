use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{RawSample, SensorBackend, SensorChannel};
use crate::sim_ecu::OutputBoard;
use crate::{ChannelId, Micros};

pub const DEFAULT_NOISE: f64 = 0.02;

/// Instant whose light level a read at `now` reports, for a sensor configured
/// at `init` with integration time `period`. `None` while the buffer still
/// holds pre-configuration data.
pub fn sample_instant(init: Micros, period: Micros, now: Micros) -> Option<Micros> {
    let windows = now.checked_sub(init)? / period;
    (windows >= 2).then(|| init + (windows - 1) * period)
}

/// Sensors looking at an [`OutputBoard`].
#[derive(Debug, Clone)]
pub struct SimulatedBackend<'a> {
    board: &'a OutputBoard,
    seed: u64,
    noise: f64,
    configured_at: BTreeMap<ChannelId, Micros>,
}

impl<'a> SimulatedBackend<'a> {
    pub fn new(board: &'a OutputBoard, seed: u64, noise: f64) -> Self {
        SimulatedBackend {
            board,
            seed,
            noise,
            configured_at: BTreeMap::new(),
        }
    }

    fn noisy(&self, reference: [u16; 3], channel: ChannelId, sample: Micros, max: u16) -> [u16; 3] {
        let key = self.seed ^ u64::from(channel).rotate_left(48) ^ sample.wrapping_mul(0x9E37_79B9_7F4A_7C15);
        let mut rng = ChaCha8Rng::seed_from_u64(key);
        reference.map(|v| {
            let amp = (f64::from(v) * self.noise).floor() as i64;
            let n = if amp > 0 { rng.gen_range(-amp..=amp) } else { 0 };
            (i64::from(v) + n).clamp(0, i64::from(max)) as u16
        })
    }
}

impl SensorBackend for SimulatedBackend<'_> {
    fn init(&mut self, channel: &SensorChannel, now: Micros) {
        self.configured_at.insert(channel.id, now);
    }

    fn read(&mut self, channel: &SensorChannel, now: Micros) -> RawSample {
        let init = self.configured_at.get(&channel.id).copied().unwrap_or(now);
        match sample_instant(init, channel.integration_time(), now) {
            None => RawSample {
                rgb: [0; 3],
                stale: true,
            },
            Some(at) => {
                let reference = if self.board.indicator_at(channel.indicator, at) {
                    channel.on_profile()
                } else {
                    channel.off_profile()
                };
                RawSample {
                    rgb: self.noisy(reference, channel.id, at, channel.precision.max_count()),
                    stale: false,
                }
            }
        }
    }
}
