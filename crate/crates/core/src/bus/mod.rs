//! Virtual broadcast CAN bus driven by a discrete-event scheduler.
//!
//! Nodes are attached either as active participants (a [`Node`] receiving
//! callbacks) or as passive ports whose inbound frames queue up until drained.
//! Pending frames contend for the bus whenever it goes idle: the lowest
//! arbitration key wins, ties go to the node attached first, then to
//! submission order. Delivery happens `wire_bits / bitrate` after the
//! transmission starts.
//!
//! The bus is generic over a world type `W` that every node callback can
//! mutate; the simulated testbench uses it for the physical output board.

mod clock;
pub mod transport;

use std::collections::{BTreeMap, VecDeque};

use thiserror::Error;

pub use clock::VirtualClock;
pub use transport::{Transport, TransportError, VirtualPort};

use crate::can_core::CanFrame;
use crate::Micros;

pub const DEFAULT_BITRATE: u32 = 500_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BusConfig {
    pub bitrate: u32,
    /// Keep a record of every transmission.
    pub record_trace: bool,
}

impl Default for BusConfig {
    fn default() -> Self {
        BusConfig {
            bitrate: DEFAULT_BITRATE,
            record_trace: true,
        }
    }
}

impl BusConfig {
    /// Transmission latency of `frame`, rounded up to whole microseconds.
    pub fn wire_time(&self, frame: &CanFrame) -> Micros {
        let bits = u64::from(frame.wire_bits()) * 1_000_000;
        bits.div_ceil(u64::from(self.bitrate))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BusError {
    #[error("bitrate must be positive")]
    ZeroBitrate,
    #[error("bus is sealed; no more nodes can attach")]
    Sealed,
    #[error("send at {at} is before the current time {now}")]
    InPast { at: Micros, now: Micros },
    #[error("run_until({target}) is before the current time {now}")]
    RunBackwards { target: Micros, now: Micros },
    #[error("unknown node {0}")]
    UnknownNode(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeHandle(usize);

impl NodeHandle {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Identifies one submitted frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Ticket(u64);

/// One completed transmission.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Transmission {
    pub ticket: Ticket,
    pub sender: NodeHandle,
    pub frame: CanFrame,
    pub submitted: Micros,
    pub started: Micros,
    pub delivered: Micros,
}

/// A bus participant. Callbacks run inside the simulation loop and must not block.
pub trait Node<W> {
    /// Called once when attached, with the clock at attach time.
    fn on_attach(&mut self, _ctx: &mut NodeCtx<'_, W>) {}

    fn on_frame(&mut self, frame: &CanFrame, ctx: &mut NodeCtx<'_, W>);

    fn on_timer(&mut self, _token: u64, _ctx: &mut NodeCtx<'_, W>) {}
}

/// What a node may do from inside a callback.
pub struct NodeCtx<'a, W> {
    me: NodeHandle,
    core: &'a mut Core<W>,
}

impl<W> NodeCtx<'_, W> {
    pub fn now(&self) -> Micros {
        self.core.clock.now()
    }

    pub fn me(&self) -> NodeHandle {
        self.me
    }

    /// Queue a frame for transmission now.
    pub fn send(&mut self, frame: CanFrame) -> Ticket {
        let now = self.now();
        self.core.submit(self.me, frame, now)
    }

    /// Queue a frame for transmission at a later time.
    pub fn send_at(&mut self, frame: CanFrame, at: Micros) -> Ticket {
        let at = at.max(self.now());
        self.core.submit(self.me, frame, at)
    }

    /// Request `on_timer(token)` at time `at` (clamped to now).
    pub fn schedule(&mut self, at: Micros, token: u64) {
        let at = at.max(self.now());
        self.core.schedule(self.me, at, token);
    }

    pub fn world(&mut self) -> &mut W {
        &mut self.core.world
    }
}

#[derive(Debug, Clone, Copy)]
struct Pending {
    ticket: Ticket,
    sender: NodeHandle,
    frame: CanFrame,
    submitted: Micros,
}

#[derive(Debug, Clone, Copy)]
enum Event {
    Delivery(Pending, Micros),
    Timer(NodeHandle, u64),
}

/// Deliveries sort before timers at the same instant.
const CLASS_DELIVERY: u8 = 0;
const CLASS_TIMER: u8 = 1;

struct Core<W> {
    config: BusConfig,
    clock: VirtualClock,
    busy_until: Micros,
    transmitting: bool,
    pending: Vec<Pending>,
    events: BTreeMap<(Micros, u8, u64), Event>,
    seq: u64,
    trace: Vec<Transmission>,
    delivered: u64,
    world: W,
}

impl<W> Core<W> {
    fn next_seq(&mut self) -> u64 {
        self.seq += 1;
        self.seq
    }

    fn submit(&mut self, sender: NodeHandle, frame: CanFrame, at: Micros) -> Ticket {
        let ticket = Ticket(self.next_seq());
        self.pending.push(Pending {
            ticket,
            sender,
            frame,
            submitted: at,
        });
        ticket
    }

    fn schedule(&mut self, node: NodeHandle, at: Micros, token: u64) {
        let seq = self.next_seq();
        self.events
            .insert((at, CLASS_TIMER, seq), Event::Timer(node, token));
    }

    /// Earliest instant at which a pending frame could start transmitting.
    fn next_start(&self) -> Option<Micros> {
        if self.transmitting {
            return None;
        }
        let earliest = self.pending.iter().map(|p| p.submitted).min()?;
        Some(earliest.max(self.busy_until))
    }

    fn start_transmission(&mut self, at: Micros) {
        let (idx, _) = self
            .pending
            .iter()
            .enumerate()
            .filter(|(_, p)| p.submitted <= at)
            .min_by_key(|(_, p)| (p.frame.arbitration_key(), p.sender, p.ticket))
            .expect("next_start implies an eligible frame");
        let winner = self.pending.swap_remove(idx);
        let delivered = at + self.config.wire_time(&winner.frame);
        self.transmitting = true;
        self.busy_until = delivered;
        self.events.insert(
            (delivered, CLASS_DELIVERY, winner.ticket.0),
            Event::Delivery(winner, at),
        );
    }
}

struct NodeSlot<W> {
    node: Option<Box<dyn Node<W>>>,
    active: bool,
    inbound: VecDeque<(Micros, CanFrame)>,
}

pub struct Bus<W = ()> {
    core: Core<W>,
    nodes: Vec<NodeSlot<W>>,
    sealed: bool,
}

impl Bus<()> {
    pub fn with_defaults() -> Self {
        Bus::new(BusConfig::default(), ()).expect("default config is valid")
    }
}

impl<W> Bus<W> {
    pub fn new(config: BusConfig, world: W) -> Result<Self, BusError> {
        if config.bitrate == 0 {
            return Err(BusError::ZeroBitrate);
        }
        Ok(Bus {
            core: Core {
                config,
                clock: VirtualClock::new(),
                busy_until: 0,
                transmitting: false,
                pending: Vec::new(),
                events: BTreeMap::new(),
                seq: 0,
                trace: Vec::new(),
                delivered: 0,
                world,
            },
            nodes: Vec::new(),
            sealed: false,
        })
    }

    pub fn config(&self) -> &BusConfig {
        &self.core.config
    }

    pub fn now(&self) -> Micros {
        self.core.clock.now()
    }

    pub fn world(&self) -> &W {
        &self.core.world
    }

    pub fn world_mut(&mut self) -> &mut W {
        &mut self.core.world
    }

    pub fn into_world(self) -> W {
        self.core.world
    }

    /// Refuse further attachments.
    pub fn seal(&mut self) {
        self.sealed = true;
    }

    /// Attach an active node; its `on_attach` runs immediately.
    pub fn attach(&mut self, node: Box<dyn Node<W>>) -> Result<NodeHandle, BusError> {
        let handle = self.push_slot(true)?;
        self.with_node(handle, Some(node), |node, ctx| node.on_attach(ctx));
        Ok(handle)
    }

    /// Attach a passive port whose received frames queue until drained.
    pub fn attach_port(&mut self) -> Result<NodeHandle, BusError> {
        self.push_slot(false)
    }

    fn push_slot(&mut self, active: bool) -> Result<NodeHandle, BusError> {
        if self.sealed {
            return Err(BusError::Sealed);
        }
        self.nodes.push(NodeSlot {
            node: None,
            active,
            inbound: VecDeque::new(),
        });
        Ok(NodeHandle(self.nodes.len() - 1))
    }

    fn with_node(
        &mut self,
        handle: NodeHandle,
        node: Option<Box<dyn Node<W>>>,
        f: impl FnOnce(&mut dyn Node<W>, &mut NodeCtx<'_, W>),
    ) {
        let slot = &mut self.nodes[handle.0];
        let Some(mut node) = node.or_else(|| slot.node.take()) else {
            return;
        };
        let mut ctx = NodeCtx {
            me: handle,
            core: &mut self.core,
        };
        f(node.as_mut(), &mut ctx);
        self.nodes[handle.0].node = Some(node);
    }

    /// Queue `frame` from `handle` for transmission at `at`.
    pub fn send(&mut self, handle: NodeHandle, frame: CanFrame, at: Micros) -> Result<Ticket, BusError> {
        if handle.0 >= self.nodes.len() {
            return Err(BusError::UnknownNode(handle.0));
        }
        let now = self.now();
        if at < now {
            return Err(BusError::InPast { at, now });
        }
        Ok(self.core.submit(handle, frame, at))
    }

    /// Frames a passive port has received so far.
    pub fn drain(&mut self, handle: NodeHandle) -> Vec<(Micros, CanFrame)> {
        self.nodes
            .get_mut(handle.0)
            .map(|s| s.inbound.drain(..).collect())
            .unwrap_or_default()
    }

    pub fn pop_inbound(&mut self, handle: NodeHandle) -> Option<(Micros, CanFrame)> {
        self.nodes.get_mut(handle.0)?.inbound.pop_front()
    }

    pub fn trace(&self) -> &[Transmission] {
        &self.core.trace
    }

    pub fn delivered_count(&self) -> u64 {
        self.core.delivered
    }

    pub fn delivery_time(&self, ticket: Ticket) -> Option<Micros> {
        self.core
            .trace
            .iter()
            .find(|t| t.ticket == ticket)
            .map(|t| t.delivered)
    }

    /// Nothing scheduled and nothing waiting for the bus.
    pub fn is_idle(&self) -> bool {
        self.core.pending.is_empty() && self.core.events.is_empty()
    }

    /// Process every delivery, transmission start and timer with time `<= t`, then set the clock to `t`.
    pub fn run_until(&mut self, t: Micros) -> Result<(), BusError> {
        self.run(t, true)
    }

    /// Like [`Bus::run_until`] but stops short of anything scheduled exactly at `t`,
    /// so frames submitted at `t` afterwards still take part in arbitration.
    pub fn run_before(&mut self, t: Micros) -> Result<(), BusError> {
        self.run(t, false)
    }

    fn run(&mut self, t: Micros, inclusive: bool) -> Result<(), BusError> {
        let now = self.now();
        if t < now {
            return Err(BusError::RunBackwards { target: t, now });
        }
        let due = |at: Micros| if inclusive { at <= t } else { at < t };
        loop {
            let next_event = self.core.events.keys().next().map(|k| k.0);
            let next_start = self.core.next_start();
            match (next_event, next_start) {
                (Some(ev), start) if start.is_none_or(|s| ev <= s) => {
                    if !due(ev) {
                        break;
                    }
                    let (_, event) = self.core.events.pop_first().expect("peeked");
                    self.core.clock.advance_to(ev);
                    self.dispatch(event);
                }
                (_, Some(start)) => {
                    if !due(start) {
                        break;
                    }
                    self.core.clock.advance_to(start);
                    self.core.start_transmission(start);
                }
                (None, None) => break,
                (Some(_), None) => unreachable!("handled by the first arm"),
            }
        }
        self.core.clock.advance_to(t.max(self.now()));
        Ok(())
    }

    /// Run until nothing remains scheduled (or `limit` is reached).
    pub fn run_to_idle(&mut self, limit: Micros) -> Result<(), BusError> {
        while !self.is_idle() {
            let next = self
                .core
                .events
                .keys()
                .next()
                .map(|k| k.0)
                .into_iter()
                .chain(self.core.next_start())
                .min()
                .expect("not idle");
            if next > limit {
                break;
            }
            self.run_until(next)?;
        }
        Ok(())
    }

    fn dispatch(&mut self, event: Event) {
        match event {
            Event::Timer(node, token) => {
                self.with_node(node, None, |n, ctx| n.on_timer(token, ctx));
            }
            Event::Delivery(p, started) => {
                self.core.transmitting = false;
                self.core.delivered += 1;
                let now = self.now();
                if self.core.config.record_trace {
                    self.core.trace.push(Transmission {
                        ticket: p.ticket,
                        sender: p.sender,
                        frame: p.frame,
                        submitted: p.submitted,
                        started,
                        delivered: now,
                    });
                }
                for i in 0..self.nodes.len() {
                    if i == p.sender.0 {
                        continue;
                    }
                    if self.nodes[i].active {
                        self.with_node(NodeHandle(i), None, |n, ctx| n.on_frame(&p.frame, ctx));
                    } else {
                        self.nodes[i].inbound.push_back((now, p.frame));
                    }
                }
            }
        }
    }
}
