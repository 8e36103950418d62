use crate::Micros;

/// Monotone virtual time in microseconds, advanced only by the bus scheduler.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct VirtualClock {
    now: Micros,
}

impl VirtualClock {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn now(&self) -> Micros {
        self.now
    }

    pub(crate) fn advance_to(&mut self, t: Micros) {
        assert!(t >= self.now, "virtual clock moved backwards: {} -> {t}", self.now);
        self.now = t;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn advances_forward() {
        let mut c = VirtualClock::new();
        c.advance_to(5);
        c.advance_to(5);
        assert_eq!(c.now(), 5);
    }

    #[test]
    #[should_panic(expected = "backwards")]
    fn never_moves_back() {
        let mut c = VirtualClock::new();
        c.advance_to(5);
        c.advance_to(4);
    }
}
