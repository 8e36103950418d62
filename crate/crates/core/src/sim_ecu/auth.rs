//! Receiver of authenticated application frames, with two optional flaws.
//!
//! A protected message is an application frame on `app_id` followed by a
//! companion frame on `auth_id` whose 8-byte payload is the tag
//!
//! ```text
//! HMAC-SHA256(key, id as u32 BE || len as u8 || payload || nonce as u64 BE)[..8]
//! ```
//!
//! Nonces are implicit counters. The receiver tracks `expected` (the next
//! nonce it anticipates) and `last_accepted`, and tries every nonce in
//! `[max(last_accepted + 1, expected - (window - 1)), expected + window - 1]`.
//! On success the display channel pulses and `expected` moves past the
//! accepted nonce.
//!
//! Flaws:
//! * `ext_id_bypass`: an extended frame whose low 11 bits equal `app_id`
//!   pulses the display without any check.
//! * `desync_on_flood`: an application frame that is never authenticated
//!   (replaced by the next one, or followed by a bad tag) still consumes a
//!   nonce. Once `window` nonces are lost the legitimate sender falls out of
//!   the window, and every later attempt pushes the counter further away.

use hmac::{Hmac, KeyInit, Mac};
use serde::{Deserialize, Serialize};
use sha2::Sha256;

use super::board::OutputBoard;
use super::SimError;
use crate::bus::{Node, NodeCtx};
use crate::can_core::{CanFrame, IdKind, STANDARD_ID_MAX};
use crate::{ChannelId, Micros};

pub const TAG_LEN: usize = 8;
pub const DEFAULT_WINDOW: u64 = 8;

/// Truncated keyed tag over one application frame and its nonce.
pub fn auth_tag(key: &[u8], frame: &CanFrame, nonce: u64) -> [u8; TAG_LEN] {
    let mut mac = Hmac::<Sha256>::new_from_slice(key).expect("HMAC accepts any key length");
    mac.update(&frame.id().to_be_bytes());
    mac.update(&[frame.len() as u8]);
    mac.update(frame.data());
    mac.update(&nonce.to_be_bytes());
    let full = mac.finalize().into_bytes();
    let mut tag = [0u8; TAG_LEN];
    tag.copy_from_slice(&full[..TAG_LEN]);
    tag
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuthBugs {
    #[serde(default)]
    pub ext_id_bypass: bool,
    #[serde(default)]
    pub desync_on_flood: bool,
}

fn default_window() -> u64 {
    DEFAULT_WINDOW
}

fn default_pulse_ms() -> u64 {
    100
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuthEcuConfig {
    /// Shared secret, hex encoded in config files.
    #[serde(with = "hex")]
    pub key: Vec<u8>,
    pub app_id: u32,
    pub auth_id: u32,
    pub display_channel: ChannelId,
    #[serde(default = "default_window")]
    pub window: u64,
    #[serde(default = "default_pulse_ms")]
    pub pulse_ms: u64,
    #[serde(default)]
    pub bugs: AuthBugs,
}

impl AuthEcuConfig {
    pub fn new(key: &[u8], app_id: u32, auth_id: u32, display_channel: ChannelId) -> Self {
        AuthEcuConfig {
            key: key.to_vec(),
            app_id,
            auth_id,
            display_channel,
            window: DEFAULT_WINDOW,
            pulse_ms: default_pulse_ms(),
            bugs: AuthBugs::default(),
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.key.is_empty() {
            return Err(SimError::Layout("auth key is empty".into()));
        }
        if self.app_id > STANDARD_ID_MAX || self.auth_id > STANDARD_ID_MAX || self.app_id == self.auth_id {
            return Err(SimError::Layout("app and auth ids must be distinct standard ids".into()));
        }
        if self.window == 0 || self.pulse_ms == 0 {
            return Err(SimError::Layout("window and pulse must be positive".into()));
        }
        Ok(())
    }
}

/// Pure receiver state.
#[derive(Debug, Clone)]
pub struct AuthState {
    config: AuthEcuConfig,
    expected: u64,
    last_accepted: u64,
    pending: Option<CanFrame>,
    accepted: u64,
}

impl AuthState {
    pub fn new(config: AuthEcuConfig) -> Self {
        AuthState {
            config,
            expected: 1,
            last_accepted: 0,
            pending: None,
            accepted: 0,
        }
    }

    pub fn config(&self) -> &AuthEcuConfig {
        &self.config
    }

    pub fn expected(&self) -> u64 {
        self.expected
    }

    pub fn accepted(&self) -> u64 {
        self.accepted
    }

    /// Nonces currently acceptable.
    pub fn window(&self) -> std::ops::RangeInclusive<u64> {
        let w = self.config.window;
        let lo = (self.last_accepted + 1).max(self.expected.saturating_sub(w - 1));
        lo..=self.expected + w - 1
    }

    fn lose_nonce(&mut self) {
        if self.config.bugs.desync_on_flood {
            self.expected += 1;
        }
    }

    /// Returns true when the display should pulse.
    pub fn step(&mut self, frame: &CanFrame) -> bool {
        let low_bits = frame.id() & STANDARD_ID_MAX;
        match frame.kind() {
            IdKind::Extended => self.config.bugs.ext_id_bypass && low_bits == self.config.app_id,
            IdKind::Standard if frame.id() == self.config.app_id => {
                if self.pending.replace(*frame).is_some() {
                    self.lose_nonce();
                }
                false
            }
            IdKind::Standard if frame.id() == self.config.auth_id => {
                let Some(app) = self.pending.take() else {
                    return false;
                };
                let hit = (frame.len() == TAG_LEN)
                    .then(|| {
                        self.window()
                            .find(|&n| auth_tag(&self.config.key, &app, n) == frame.data())
                    })
                    .flatten();
                match hit {
                    Some(n) => {
                        self.last_accepted = n;
                        self.expected = n + 1;
                        self.accepted += 1;
                        true
                    }
                    None => {
                        self.lose_nonce();
                        false
                    }
                }
            }
            IdKind::Standard => false,
        }
    }
}

const TOKEN_PULSE_END: u64 = 0;

#[derive(Debug, Clone)]
pub struct AuthEcu {
    state: AuthState,
    lit_until: Micros,
}

impl AuthEcu {
    pub fn new(config: AuthEcuConfig) -> Self {
        AuthEcu {
            state: AuthState::new(config),
            lit_until: 0,
        }
    }
}

impl Node<OutputBoard> for AuthEcu {
    fn on_attach(&mut self, ctx: &mut NodeCtx<'_, OutputBoard>) {
        let now = ctx.now();
        let ch = self.state.config.display_channel;
        ctx.world().set_indicator(ch, now, false);
    }

    fn on_frame(&mut self, frame: &CanFrame, ctx: &mut NodeCtx<'_, OutputBoard>) {
        if !self.state.step(frame) {
            return;
        }
        let now = ctx.now();
        self.lit_until = now + self.state.config.pulse_ms * 1_000;
        let ch = self.state.config.display_channel;
        ctx.world().set_indicator(ch, now, true);
        ctx.schedule(self.lit_until, TOKEN_PULSE_END);
    }

    fn on_timer(&mut self, _token: u64, ctx: &mut NodeCtx<'_, OutputBoard>) {
        let now = ctx.now();
        if now >= self.lit_until {
            let ch = self.state.config.display_channel;
            ctx.world().set_indicator(ch, now, false);
        }
    }
}

/// Legitimate sender: application frame, then its tag `gap` later, every `period`.
#[derive(Debug, Clone)]
pub struct AuthSender {
    key: Vec<u8>,
    app_id: u32,
    auth_id: u32,
    period: Micros,
    gap: Micros,
    nonce: u64,
    payload: Vec<u8>,
    start: Micros,
}

impl AuthSender {
    pub fn new(config: &AuthEcuConfig, period_ms: u64, payload: &[u8]) -> Self {
        AuthSender {
            key: config.key.clone(),
            app_id: config.app_id,
            auth_id: config.auth_id,
            period: period_ms * 1_000,
            gap: 500,
            nonce: 0,
            payload: payload.to_vec(),
            start: 0,
        }
    }

    /// First message goes out at `t` instead of one period after attach.
    pub fn starting_at(mut self, t: Micros) -> Self {
        self.start = t;
        self
    }

    pub fn nonce(&self) -> u64 {
        self.nonce
    }

    /// Frames of the next protected message, advancing the nonce.
    pub fn next_message(&mut self) -> (CanFrame, CanFrame) {
        self.nonce += 1;
        let app = CanFrame::standard(self.app_id, &self.payload).expect("validated app frame");
        let tag = auth_tag(&self.key, &app, self.nonce);
        let auth = CanFrame::standard(self.auth_id, &tag).expect("tag fits a frame");
        (app, auth)
    }
}

impl Node<OutputBoard> for AuthSender {
    fn on_attach(&mut self, ctx: &mut NodeCtx<'_, OutputBoard>) {
        let first = if self.start > 0 { self.start } else { ctx.now() + self.period };
        ctx.schedule(first, 0);
    }

    fn on_frame(&mut self, _frame: &CanFrame, _ctx: &mut NodeCtx<'_, OutputBoard>) {}

    fn on_timer(&mut self, _token: u64, ctx: &mut NodeCtx<'_, OutputBoard>) {
        let now = ctx.now();
        let (app, auth) = self.next_message();
        ctx.send(app);
        ctx.send_at(auth, now + self.gap);
        ctx.schedule(now + self.period, 0);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> AuthEcuConfig {
        AuthEcuConfig::new(b"0123456789abcdef", 0x123, 0x124, 40)
    }

    fn app(payload: &[u8]) -> CanFrame {
        CanFrame::standard(0x123, payload).unwrap()
    }

    fn auth(c: &AuthEcuConfig, app: &CanFrame, nonce: u64) -> CanFrame {
        CanFrame::standard(c.auth_id, &auth_tag(&c.key, app, nonce)).unwrap()
    }

    #[test]
    fn tag_depends_on_every_input() {
        let c = cfg();
        let a = app(&[1, 2]);
        let t = auth_tag(&c.key, &a, 1);
        assert_ne!(t, auth_tag(&c.key, &a, 2));
        assert_ne!(t, auth_tag(b"other key", &a, 1));
        assert_ne!(t, auth_tag(&c.key, &app(&[1, 3]), 1));
        assert_ne!(t, auth_tag(&c.key, &app(&[1, 2, 0]), 1));
    }

    #[test]
    fn valid_message_accepted_once() {
        let c = cfg();
        let mut s = AuthState::new(c.clone());
        let a = app(&[7]);
        assert!(!s.step(&a));
        assert!(s.step(&auth(&c, &a, 1)));
        assert_eq!(s.expected(), 2);
        assert!(!s.step(&a));
        assert!(!s.step(&auth(&c, &a, 1)), "replayed nonce");
    }

    #[test]
    fn sender_skipping_nonces_stays_inside_window() {
        let c = cfg();
        let mut s = AuthState::new(c.clone());
        let a = app(&[7]);
        s.step(&a);
        assert!(s.step(&auth(&c, &a, 8)));
        s.step(&a);
        assert!(!s.step(&auth(&c, &a, 17)));
    }

    #[test]
    fn extended_bypass() {
        let mut c = cfg();
        let ext = CanFrame::extended(0x1ABC_D123 & 0x1FFF_F800 | 0x123, &[]).unwrap();
        assert!(!AuthState::new(c.clone()).step(&ext));
        c.bugs.ext_id_bypass = true;
        assert!(AuthState::new(c).step(&ext));
    }

    fn flood_then_send(k: usize, desync: bool) -> Vec<bool> {
        let mut c = cfg();
        c.bugs.desync_on_flood = desync;
        let mut s = AuthState::new(c.clone());
        let mut sender = AuthSender::new(&c, 100, &[0x42]);
        let mut out = Vec::new();
        for round in 0..6 {
            if round == 1 {
                for j in 0..k {
                    s.step(&app(&[j as u8]));
                }
            }
            let (a, t) = sender.next_message();
            s.step(&a);
            out.push(s.step(&t));
        }
        out
    }

    #[test]
    fn flood_below_window_is_absorbed() {
        assert!(flood_then_send(7, true).iter().all(|&ok| ok));
    }

    #[test]
    fn flood_of_window_size_desyncs_for_good() {
        assert_eq!(flood_then_send(8, true), [true, false, false, false, false, false]);
        assert_eq!(flood_then_send(20, true), [true, false, false, false, false, false]);
    }

    #[test]
    fn flood_without_bug_is_harmless() {
        assert!(flood_then_send(50, false).iter().all(|&ok| ok));
    }

    #[test]
    fn config_hex_key() {
        let c: AuthEcuConfig = toml::from_str(
            "key = \"00FF10\"\napp_id = 0x123\nauth_id = 0x124\ndisplay_channel = 40\n",
        )
        .unwrap();
        assert_eq!(c.key, [0x00, 0xFF, 0x10]);
        assert_eq!(c.window, 8);
        assert!(!c.bugs.ext_id_bypass);
    }
}
