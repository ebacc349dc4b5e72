use std::fmt;

/// Cost of one normal↔secure world switch, in simulated microseconds (0.3 ms).
pub const WORLD_SWITCH_US: u64 = 300;

/// World-switch accounting. Time is derived from the count, so
/// `simulated_ms == 0.3 × switches` holds exactly in integer microseconds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SwitchLedger {
    switches: u64,
}

impl SwitchLedger {
    pub(crate) fn record(&mut self, n: u64) {
        self.switches += n;
    }

    pub fn switches(&self) -> u64 {
        self.switches
    }

    pub fn simulated_us(&self) -> u64 {
        self.switches * WORLD_SWITCH_US
    }

    pub fn simulated_ms(&self) -> f64 {
        self.simulated_us() as f64 / 1000.0
    }
}

/// One machine-parseable `key=value` line per lifecycle event.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceEvent {
    pub enclave: u64,
    pub fields: Vec<(&'static str, String)>,
}

impl fmt::Display for TraceEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "enclave={}", self.enclave)?;
        for (k, v) in &self.fields {
            write!(f, " {k}={v}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Default, Clone)]
pub struct TraceLog {
    events: Vec<TraceEvent>,
}

impl TraceLog {
    pub(crate) fn push(&mut self, event: TraceEvent) {
        log::trace!("{event}");
        self.events.push(event);
    }

    pub fn events(&self) -> &[TraceEvent] {
        &self.events
    }

    pub fn lines(&self) -> Vec<String> {
        self.events.iter().map(ToString::to_string).collect()
    }
}
