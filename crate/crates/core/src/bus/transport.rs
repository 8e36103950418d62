use thiserror::Error;

use super::{Bus, BusError, NodeHandle};
use crate::can_core::CanFrame;
use crate::Micros;

#[derive(Debug, Error)]
pub enum TransportError {
    #[error(transparent)]
    Bus(#[from] BusError),
    #[error("transport closed")]
    Closed,
}

/// What a fuzzing strategy needs from the network: a clock, a way to put
/// frames on the wire at a given time, and the frames other nodes sent.
///
/// The virtual bus implements this through [`VirtualPort`]; a hardware
/// adapter would block in `send` until the requested time.
pub trait Transport {
    fn now(&self) -> Micros;

    fn send(&mut self, frame: CanFrame, at: Micros) -> Result<(), TransportError>;

    fn receive(&mut self) -> Option<(Micros, CanFrame)>;

    /// Let time pass up to `t` without sending.
    fn idle_until(&mut self, t: Micros) -> Result<(), TransportError>;
}

/// A passive port on a [`Bus`] used as a transport.
pub struct VirtualPort<'a, W> {
    bus: &'a mut Bus<W>,
    handle: NodeHandle,
}

impl<'a, W> VirtualPort<'a, W> {
    pub fn new(bus: &'a mut Bus<W>, handle: NodeHandle) -> Self {
        VirtualPort { bus, handle }
    }

    pub fn bus(&mut self) -> &mut Bus<W> {
        self.bus
    }
}

impl<W> Transport for VirtualPort<'_, W> {
    fn now(&self) -> Micros {
        self.bus.now()
    }

    fn send(&mut self, frame: CanFrame, at: Micros) -> Result<(), TransportError> {
        self.bus.run_before(at)?;
        self.bus.send(self.handle, frame, at)?;
        Ok(())
    }

    fn receive(&mut self) -> Option<(Micros, CanFrame)> {
        self.bus.pop_inbound(self.handle)
    }

    fn idle_until(&mut self, t: Micros) -> Result<(), TransportError> {
        self.bus.run_until(t)?;
        Ok(())
    }
}
