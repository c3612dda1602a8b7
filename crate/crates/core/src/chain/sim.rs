use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Geometric};
use rayon::prelude::*;

use super::events::{EventKind, EventLog, EventRecord};
use super::{memory_space, ChainParams, MemoryMode};
use crate::error::{check_positive, Error, Result};
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    /// `bins + 1` edges.
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn from_samples(samples: &[f64], bins: usize) -> Self {
        let lo = samples.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if samples.is_empty() || hi <= lo {
            let v = if samples.is_empty() { 0.0 } else { lo };
            return Histogram {
                edges: vec![v, v],
                counts: vec![samples.len() as u64],
            };
        }
        let width = (hi - lo) / bins as f64;
        let edges = (0..=bins).map(|k| lo + width * k as f64).collect();
        let mut counts = vec![0u64; bins];
        for &x in samples {
            let k = (((x - lo) / width) as usize).min(bins - 1);
            counts[k] += 1;
        }
        Histogram { edges, counts }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct McResult {
    pub trials: u64,
    /// Completion time per trial, in trial order.
    pub times_s: Vec<f64>,
    pub mean_time_s: f64,
    pub std_error_s: f64,
    pub histogram: Histogram,
    /// Trace of trial 0.
    pub events: EventLog,
    /// Level at which each trial first ran out of pairs.
    pub failed_levels: Vec<Option<u32>>,
    /// Trials whose chain first ran out of pairs at level `k + 1`.
    pub level_failures: Vec<u64>,
    pub failed_trials: u64,
    pub blocked_attempts: u64,
    /// First-link establishment time per segment: mean and standard error.
    pub link_time_mean_s: f64,
    pub link_time_sem_s: f64,
}

impl McResult {
    /// Fraction of trials failing at each level.
    pub fn residual_failure(&self) -> Vec<f64> {
        self.level_failures
            .iter()
            .map(|&k| k as f64 / self.trials as f64)
            .collect()
    }
}

#[derive(Debug, Clone, Copy)]
struct Pair {
    id: u64,
    ready: f64,
}

struct Trial {
    time: f64,
    failed_level: Option<u32>,
    blocked: u64,
    first_links: Vec<f64>,
    log: Option<EventLog>,
}

struct Setup {
    n: u32,
    segments: usize,
    links: u64,
    hop: f64,
    tau: f64,
    tau0: f64,
    l0: f64,
    p_c: f64,
    slots: u64,
    hold: u64,
    geometric: Geometric,
}

impl Setup {
    /// Pulse index used by the `a`-th attempt when memory holds `slots`
    /// attempts for `hold` pulses each.
    fn pulse(&self, a: u64) -> u64 {
        if self.slots >= self.hold {
            a
        } else {
            (a / self.slots) * self.hold + a % self.slots
        }
    }
}

fn run_trial(s: &Setup, seed: u64, index: u64, record: bool) -> Trial {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    let mut log = record.then(EventLog::new);
    let mut next_id = 0u64;
    let mut blocked = 0u64;
    let mut first_links = Vec::with_capacity(s.segments);
    let mut level: Vec<Vec<Pair>> = Vec::with_capacity(s.segments);

    for seg in 0..s.segments {
        let mut attempts = 0u64;
        let mut pairs = Vec::with_capacity(s.links as usize);
        for _ in 0..s.links {
            let tries = s.geometric.sample(&mut rng) + 1;
            let first = attempts;
            attempts += tries;
            let last = attempts - 1;
            let pulse = s.pulse(last);
            let skipped = (pulse - last) - (s.pulse(first) - first);
            let t_success = s.hop + (pulse + 1) as f64 * s.tau;
            let arrival = t_success + s.hop;
            if pairs.is_empty() {
                first_links.push(t_success);
            }
            let id = next_id;
            next_id += 1;
            if let Some(log) = log.as_mut() {
                let t_first = s.hop + (s.pulse(first) + 1) as f64 * s.tau;
                log.push(EventRecord::new(t_first, seg, EventKind::Attempt, 0).count(tries));
                if skipped > 0 {
                    log.push(EventRecord::new(t_first, seg, EventKind::BlockedAttempt, 0).count(skipped));
                }
                log.push(EventRecord::new(t_success, seg + 1, EventKind::LinkSuccess, 0).pair(id));
                log.push(
                    EventRecord::new(arrival, seg, EventKind::ClassicalMsg, 0)
                        .pair(id)
                        .message(t_success, s.l0),
                );
                log.push(EventRecord::new(arrival, seg, EventKind::MemoryStore, 0).pair(id));
            }
            pairs.push(Pair { id, ready: arrival });
        }
        blocked += s.pulse(attempts.saturating_sub(1)) - attempts.saturating_sub(1);
        level.push(pairs);
    }

    // every segment holds its links before any connection starts
    let mut clock = level.iter().flat_map(|p| p.iter().map(|x| x.ready)).fold(0.0, f64::max);
    let mut failed_level = None;
    for k in 1..=s.n {
        let span = 1usize << k;
        let msg_km = s.l0 * (span / 2) as f64;
        let msg_s = s.hop * (span / 2) as f64;
        let mut next = Vec::with_capacity(level.len() / 2);
        let mut busiest = 0usize;
        let mut announcements = Vec::new();
        for (j, halves) in level.chunks(2).enumerate() {
            let station = j * span + span / 2;
            let mut left = halves[0].clone();
            let mut right = halves[1].clone();
            let order = |a: &Pair, b: &Pair| a.ready.total_cmp(&b.ready).then(a.id.cmp(&b.id));
            left.sort_by(order);
            right.sort_by(order);
            let m = left.len().min(right.len());
            busiest = busiest.max(m);
            let mut t = clock;
            let mut merged = Vec::new();
            for (a, b) in left.iter().zip(&right) {
                t += s.tau0;
                let ok = rng.gen::<f64>() < s.p_c;
                let id = next_id;
                next_id += 1;
                if let Some(log) = log.as_mut() {
                    let mut rec = EventRecord::new(t, station, EventKind::Swap, k).inputs(a.id, b.id);
                    if ok {
                        rec = rec.pair(id);
                    }
                    log.push(rec);
                    log.push(EventRecord::new(t, station, EventKind::MemoryRelease, k).pair(a.id));
                    log.push(EventRecord::new(t, station, EventKind::MemoryRelease, k).pair(b.id));
                }
                if ok {
                    merged.push(Pair { id, ready: t + msg_s });
                    announcements.push((id, t, j * span, (j + 1) * span));
                }
            }
            if let Some(log) = log.as_mut() {
                for extra in left.iter().skip(m).chain(right.iter().skip(m)) {
                    log.push(EventRecord::new(t, station, EventKind::MemoryRelease, k).pair(extra.id));
                }
            }
            if merged.is_empty() && failed_level.is_none() {
                failed_level = Some(k);
            }
            next.push(merged);
        }
        if let Some(log) = log.as_mut() {
            for (id, sent, lo, hi) in announcements {
                for end in [lo, hi] {
                    log.push(
                        EventRecord::new(sent + msg_s, end, EventKind::ClassicalMsg, k)
                            .pair(id)
                            .message(sent, msg_km),
                    );
                }
            }
        }
        clock += busiest as f64 * s.tau0 + msg_s;
        level = next;
    }
    if let Some(log) = log.as_mut() {
        for p in level.iter().flatten() {
            log.push(EventRecord::new(clock, 0, EventKind::MemoryRelease, s.n).pair(p.id));
        }
        log.finish();
    }
    Trial {
        time: clock,
        failed_level,
        blocked,
        first_links,
        log,
    }
}

/// Seeded Monte Carlo of the connection strategy: fill every segment with
/// `r^n` links, then connect level by level. Trial `i` draws from ChaCha8
/// stream `i` of `seed`, so results do not depend on the thread count.
pub fn mc_distribute<T: Real>(p: &ChainParams<T>, seed: u64, trials: u64) -> Result<McResult> {
    p.validate()?;
    check_positive("trials", trials as f64)?;
    let n = p.levels()?;
    let hop = (p.l0_km / p.c_km_s).as_f64();
    let tau = p.tau().as_f64();
    let modes = match p.memory_modes {
        Some(m) => m,
        None => memory_space(p, MemoryMode::RateLimited)?,
    };
    let setup = Setup {
        n,
        segments: 1usize << n,
        links: p.links_required()?,
        hop,
        tau,
        tau0: p.tau0_s.as_f64(),
        l0: p.l0_km.as_f64(),
        p_c: p.p_c.as_f64(),
        slots: (modes / 2).max(1),
        hold: ((2.0 * hop / tau) - 1e-9).ceil().max(1.0) as u64,
        geometric: Geometric::new(p.p_g.as_f64()).map_err(|e| Error::Domain(e.to_string()))?,
    };
    let runs: Vec<Trial> = (0..trials)
        .into_par_iter()
        .map(|i| run_trial(&setup, seed, i, i == 0))
        .collect();

    let times_s: Vec<f64> = runs.iter().map(|r| r.time).collect();
    let mean = times_s.iter().sum::<f64>() / trials as f64;
    let var = if trials > 1 {
        times_s.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (trials - 1) as f64
    } else {
        0.0
    };
    let mut level_failures = vec![0u64; n as usize];
    for r in &runs {
        if let Some(k) = r.failed_level {
            level_failures[k as usize - 1] += 1;
        }
    }
    let links: Vec<f64> = runs.iter().flat_map(|r| r.first_links.iter().copied()).collect();
    let link_mean = links.iter().sum::<f64>() / links.len() as f64;
    let link_var = if links.len() > 1 {
        links.iter().map(|t| (t - link_mean).powi(2)).sum::<f64>() / (links.len() - 1) as f64
    } else {
        0.0
    };
    let events = runs.first().and_then(|r| r.log.clone()).unwrap_or_default();
    Ok(McResult {
        trials,
        mean_time_s: mean,
        std_error_s: (var / trials as f64).sqrt(),
        histogram: Histogram::from_samples(&times_s, 40),
        events,
        failed_trials: runs.iter().filter(|r| r.failed_level.is_some()).count() as u64,
        failed_levels: runs.iter().map(|r| r.failed_level).collect(),
        level_failures,
        blocked_attempts: runs.iter().map(|r| r.blocked).sum(),
        link_time_mean_s: link_mean,
        link_time_sem_s: (link_var / links.len() as f64).sqrt(),
        times_s,
    })
}
