use std::collections::BTreeMap;
use std::fmt::Write as _;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EventKind {
    Attempt,
    LinkSuccess,
    Swap,
    ClassicalMsg,
    MemoryStore,
    MemoryRelease,
    BlockedAttempt,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::Attempt => "attempt",
            EventKind::LinkSuccess => "link-success",
            EventKind::Swap => "swap",
            EventKind::ClassicalMsg => "classical-msg",
            EventKind::MemoryStore => "memory-store",
            EventKind::MemoryRelease => "memory-release",
            EventKind::BlockedAttempt => "blocked-attempt",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EventRecord {
    pub time_s: f64,
    pub station: usize,
    pub kind: EventKind,
    /// Connection level (0 for elementary links).
    pub level: u32,
    /// Entangled pair created, stored, released or announced.
    pub pair: Option<u64>,
    /// Pairs consumed by a swap.
    pub inputs: Option<(u64, u64)>,
    /// Send time of a classical message.
    pub sent_s: Option<f64>,
    pub distance_km: Option<f64>,
    /// Number of attempts, for attempt and blocked-attempt records.
    pub count: Option<u64>,
}

impl EventRecord {
    pub fn new(time_s: f64, station: usize, kind: EventKind, level: u32) -> Self {
        EventRecord {
            time_s,
            station,
            kind,
            level,
            pair: None,
            inputs: None,
            sent_s: None,
            distance_km: None,
            count: None,
        }
    }

    pub fn pair(mut self, id: u64) -> Self {
        self.pair = Some(id);
        self
    }

    pub fn inputs(mut self, a: u64, b: u64) -> Self {
        self.inputs = Some((a, b));
        self
    }

    pub fn message(mut self, sent_s: f64, distance_km: f64) -> Self {
        self.sent_s = Some(sent_s);
        self.distance_km = Some(distance_km);
        self
    }

    pub fn count(mut self, n: u64) -> Self {
        self.count = Some(n);
        self
    }
}

/// Float formatting shared by logs and tables: 17 significant digits.
pub fn format_sig17(x: f64) -> String {
    format!("{x:.16e}")
}

/// Time-ordered trace of one simulated distribution.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EventLog {
    records: Vec<EventRecord>,
}

impl EventLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, record: EventRecord) {
        self.records.push(record);
    }

    /// Stable sort by time; ties keep insertion order.
    pub fn finish(&mut self) {
        self.records.sort_by(|a, b| a.time_s.total_cmp(&b.time_s));
    }

    pub fn records(&self) -> &[EventRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn count(&self, kind: EventKind) -> usize {
        self.records.iter().filter(|r| r.kind == kind).count()
    }

    /// Checks time order, message latency against `distance / c`, and that
    /// every swap input was created and announced before the swap.
    pub fn check_causality(&self, c_km_s: f64) -> Result<(), String> {
        let tol = 1e-12;
        if let Some(w) = self.records.windows(2).find(|w| w[1].time_s < w[0].time_s) {
            return Err(format!("time goes backwards at {}", w[1].time_s));
        }
        let mut created: BTreeMap<u64, f64> = BTreeMap::new();
        let mut announced: BTreeMap<u64, f64> = BTreeMap::new();
        for r in &self.records {
            match r.kind {
                EventKind::LinkSuccess => {
                    if let Some(id) = r.pair {
                        created.entry(id).or_insert(r.time_s);
                    }
                }
                EventKind::ClassicalMsg => {
                    let (Some(sent), Some(d)) = (r.sent_s, r.distance_km) else {
                        return Err(format!("message at {} lacks send time or distance", r.time_s));
                    };
                    if r.time_s - sent < d / c_km_s - tol {
                        return Err(format!("message at {} faster than light", r.time_s));
                    }
                    if let Some(id) = r.pair {
                        announced.entry(id).or_insert(r.time_s);
                    }
                }
                EventKind::Swap => {
                    let Some((a, b)) = r.inputs else {
                        return Err(format!("swap at {} without inputs", r.time_s));
                    };
                    for id in [a, b] {
                        match (created.get(&id), announced.get(&id)) {
                            (Some(&c), Some(&m)) if c <= r.time_s + tol && m <= r.time_s + tol => {}
                            _ => return Err(format!("swap at {} uses pair {id} before it exists", r.time_s)),
                        }
                    }
                    if let Some(id) = r.pair {
                        created.entry(id).or_insert(r.time_s);
                    }
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// Line-oriented `key = value` rendering, one event per line.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for (i, r) in self.records.iter().enumerate() {
            let _ = write!(
                out,
                "event_{i:06} = kind={} time_s={} station={} level={}",
                r.kind.as_str(),
                format_sig17(r.time_s),
                r.station,
                r.level
            );
            if let Some(p) = r.pair {
                let _ = write!(out, " pair={p}");
            }
            if let Some((a, b)) = r.inputs {
                let _ = write!(out, " inputs={a},{b}");
            }
            if let Some(s) = r.sent_s {
                let _ = write!(out, " sent_s={}", format_sig17(s));
            }
            if let Some(d) = r.distance_km {
                let _ = write!(out, " distance_km={}", format_sig17(d));
            }
            if let Some(n) = r.count {
                let _ = write!(out, " count={n}");
            }
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn causality_catches_early_swap() {
        let mut log = EventLog::new();
        log.push(EventRecord::new(1.0, 1, EventKind::LinkSuccess, 0).pair(1));
        log.push(
            EventRecord::new(1.5, 0, EventKind::ClassicalMsg, 0)
                .pair(1)
                .message(1.0, 75.0),
        );
        log.push(EventRecord::new(1.2, 2, EventKind::LinkSuccess, 0).pair(2));
        log.push(
            EventRecord::new(2.0, 1, EventKind::ClassicalMsg, 0)
                .pair(2)
                .message(1.2, 75.0),
        );
        log.push(EventRecord::new(1.9, 1, EventKind::Swap, 1).inputs(1, 2).pair(3));
        log.finish();
        assert!(log.check_causality(2e5).is_err());

        let mut ok = EventLog::new();
        for r in log.records().iter().filter(|r| r.kind != EventKind::Swap) {
            ok.push(r.clone());
        }
        ok.push(EventRecord::new(2.0, 1, EventKind::Swap, 1).inputs(1, 2).pair(3));
        ok.finish();
        assert_eq!(ok.check_causality(2e5), Ok(()));
    }

    #[test]
    fn superluminal_message() {
        let mut log = EventLog::new();
        log.push(EventRecord::new(1.0, 0, EventKind::ClassicalMsg, 0).message(0.9999, 75.0));
        assert!(log.check_causality(2e5).is_err());
    }

    #[test]
    fn render_format() {
        let mut log = EventLog::new();
        log.push(EventRecord::new(0.5, 3, EventKind::Attempt, 0).count(12));
        let text = log.render();
        assert_eq!(
            text,
            "event_000000 = kind=attempt time_s=5.0000000000000000e-1 station=3 level=0 count=12\n"
        );
        assert_eq!(format_sig17(8.012), "8.0120000000000005e0");
    }
}
