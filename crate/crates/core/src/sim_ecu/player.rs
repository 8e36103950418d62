//! Nodes that put scripted or periodic traffic on the bus.

use super::board::OutputBoard;
use crate::bus::{Node, NodeCtx};
use crate::can_core::CanFrame;
use crate::Micros;

/// Sends a fixed list of frames at absolute times.
#[derive(Debug, Clone)]
pub struct Player {
    script: Vec<(Micros, CanFrame)>,
    next: usize,
}

impl Player {
    /// `script` is sorted by time before use.
    pub fn new(mut script: Vec<(Micros, CanFrame)>) -> Self {
        script.sort_by_key(|(t, _)| *t);
        Player { script, next: 0 }
    }

    fn arm(&self, ctx: &mut NodeCtx<'_, OutputBoard>) {
        if let Some((t, _)) = self.script.get(self.next) {
            ctx.schedule(*t, 0);
        }
    }
}

impl Node<OutputBoard> for Player {
    fn on_attach(&mut self, ctx: &mut NodeCtx<'_, OutputBoard>) {
        self.arm(ctx);
    }

    fn on_frame(&mut self, _frame: &CanFrame, _ctx: &mut NodeCtx<'_, OutputBoard>) {}

    fn on_timer(&mut self, _token: u64, ctx: &mut NodeCtx<'_, OutputBoard>) {
        let now = ctx.now();
        while let Some((t, frame)) = self.script.get(self.next) {
            if *t > now {
                break;
            }
            ctx.send(*frame);
            self.next += 1;
        }
        self.arm(ctx);
    }
}

/// Repeats frames every `period`, starting at `offset`, until `until`.
/// Several frames are sent in turn.
#[derive(Debug, Clone)]
pub struct PeriodicSender {
    frames: Vec<CanFrame>,
    next: usize,
    period: Micros,
    offset: Micros,
    until: Option<Micros>,
}

impl PeriodicSender {
    pub fn new(frame: CanFrame, period: Micros, offset: Micros) -> Self {
        Self::cycling(vec![frame], period, offset)
    }

    pub fn cycling(frames: Vec<CanFrame>, period: Micros, offset: Micros) -> Self {
        assert!(period > 0, "period must be positive");
        assert!(!frames.is_empty(), "nothing to send");
        PeriodicSender {
            frames,
            next: 0,
            period,
            offset,
            until: None,
        }
    }

    pub fn until(mut self, t: Micros) -> Self {
        self.until = Some(t);
        self
    }
}

impl Node<OutputBoard> for PeriodicSender {
    fn on_attach(&mut self, ctx: &mut NodeCtx<'_, OutputBoard>) {
        let first = ctx.now() + self.offset;
        if self.until.is_none_or(|u| first <= u) {
            ctx.schedule(first, 0);
        }
    }

    fn on_frame(&mut self, _frame: &CanFrame, _ctx: &mut NodeCtx<'_, OutputBoard>) {}

    fn on_timer(&mut self, _token: u64, ctx: &mut NodeCtx<'_, OutputBoard>) {
        ctx.send(self.frames[self.next]);
        self.next = (self.next + 1) % self.frames.len();
        let next = ctx.now() + self.period;
        if self.until.is_none_or(|u| next <= u) {
            ctx.schedule(next, 0);
        }
    }
}
