use std::cell::Cell;
use std::rc::Rc;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
struct Counts {
    live: usize,
    peak: usize,
}

/// Live/peak counter of stored activation words, shared by every tape of
/// one worker (nested recompute tapes included).
#[derive(Clone, Debug, Default)]
pub struct ActivationMeter {
    counts: Rc<Cell<Counts>>,
}

impl ActivationMeter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn hold(&self, elements: usize) {
        let mut c = self.counts.get();
        c.live += elements;
        c.peak = c.peak.max(c.live);
        self.counts.set(c);
    }

    pub fn release(&self, elements: usize) {
        let mut c = self.counts.get();
        debug_assert!(c.live >= elements, "released more activations than held");
        c.live = c.live.saturating_sub(elements);
        self.counts.set(c);
    }

    pub fn live(&self) -> usize {
        self.counts.get().live
    }

    pub fn peak(&self) -> usize {
        self.counts.get().peak
    }

    /// Restart peak tracking from the current live count.
    pub fn reset_peak(&self) {
        let mut c = self.counts.get();
        c.peak = c.live;
        self.counts.set(c);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn peak_tracks_running_maximum() {
        let m = ActivationMeter::new();
        m.hold(10);
        m.hold(5);
        m.release(12);
        m.hold(4);
        assert_eq!(m.live(), 7);
        assert_eq!(m.peak(), 15);
        let shared = m.clone();
        shared.release(7);
        assert_eq!(m.live(), 0);
        m.reset_peak();
        assert_eq!(m.peak(), 0);
    }
}
