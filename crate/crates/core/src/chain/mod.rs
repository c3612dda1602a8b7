//! Entanglement connection over a chain of `2^n` segments: closed-form
//! distribution time, memory requirement and final fidelity, plus a seeded
//! discrete-event simulation of the connection strategy.

mod events;
mod sim;

pub use events::{format_sig17, EventKind, EventLog, EventRecord};
pub use sim::{mc_distribute, Histogram, McResult};

use crate::error::{check_unit, Error, Result};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChainParams<T> {
    pub l0_km: T,
    pub l_km: T,
    pub f_hz: T,
    pub p_g: T,
    pub p_c: T,
    /// Time of one local Bell measurement.
    pub tau0_s: T,
    /// Photodiode dead time, if limiting.
    pub tau_d_s: Option<T>,
    pub c_km_s: T,
    pub eta_d: T,
    pub eta_m: T,
    /// Elementary-link fidelity.
    pub link_fidelity: T,
    /// Memory modes per half station; `None` uses [`memory_space`].
    pub memory_modes: Option<u64>,
}

impl<T: Real> ChainParams<T> {
    /// 1200 km over 75 km segments at 40 kHz, `P_g = 5e-5`, `P_c = 1/2`.
    pub fn table_default() -> Self {
        ChainParams {
            l0_km: T::lit(75.0),
            l_km: T::lit(1200.0),
            f_hz: T::lit(40e3),
            p_g: T::lit(5e-5),
            p_c: T::lit(0.5),
            tau0_s: T::zero(),
            tau_d_s: None,
            c_km_s: T::lit(2e5),
            eta_d: T::one(),
            eta_m: T::one(),
            link_fidelity: T::lit(0.9995),
            memory_modes: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("l0_km", self.l0_km),
            ("l_km", self.l_km),
            ("f_hz", self.f_hz),
            ("c_km_s", self.c_km_s),
        ] {
            positive(name, v)?;
        }
        for (name, v) in [("p_g", self.p_g), ("p_c", self.p_c)] {
            let x = v.as_f64();
            if !(x > 0.0 && x <= 1.0) {
                return Err(Error::InvalidParameter {
                    name,
                    value: x,
                    reason: "must lie in (0, 1]",
                });
            }
        }
        if !(self.tau0_s >= T::zero() && self.tau0_s.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "tau0_s",
                value: self.tau0_s.as_f64(),
                reason: "must be >= 0",
            });
        }
        if let Some(t) = self.tau_d_s {
            positive("tau_d_s", t)?;
        }
        check_unit("eta_d", self.eta_d.as_f64())?;
        check_unit("eta_m", self.eta_m.as_f64())?;
        check_unit("link_fidelity", self.link_fidelity.as_f64())?;
        if self.memory_modes == Some(0) {
            return Err(Error::InvalidParameter {
                name: "memory_modes",
                value: 0.0,
                reason: "must be >= 1",
            });
        }
        self.levels().map(|_| ())
    }

    /// `n = log2(L / L0)`.
    pub fn levels(&self) -> Result<u32> {
        levels(self.l_km, self.l0_km)
    }

    /// `r = ceil(1 / P_c)`.
    pub fn redundancy(&self) -> u64 {
        redundancy(self.p_c)
    }

    /// `r^n` elementary links per segment.
    pub fn links_required(&self) -> Result<u64> {
        let n = self.levels()?;
        self.redundancy()
            .checked_pow(n)
            .ok_or_else(|| Error::Domain("links per segment overflow u64".into()))
    }

    pub fn tau(&self) -> T {
        T::one() / self.f_hz
    }

    /// `T0 = L0/c + tau/P_g`.
    pub fn t0(&self) -> T {
        self.l0_km / self.c_km_s + self.tau() / self.p_g
    }
}

fn positive<T: Real>(name: &'static str, v: T) -> Result<()> {
    let x = v.as_f64();
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter {
            name,
            value: x,
            reason: "must be positive and finite",
        })
    }
}

/// `log2(L/L0)` when the ratio is an exact power of two.
pub fn levels<T: Real>(l_km: T, l0_km: T) -> Result<u32> {
    let ratio = (l_km / l0_km).as_f64();
    if !(ratio >= 1.0 && ratio.is_finite()) {
        return Err(Error::NotPowerOfTwo(ratio));
    }
    let n = ratio.log2().round();
    if (2f64.powf(n) / ratio - 1.0).abs() > 1e-9 || n > 62.0 {
        return Err(Error::NotPowerOfTwo(ratio));
    }
    Ok(n as u32)
}

pub fn redundancy<T: Real>(p_c: T) -> u64 {
    let r = (T::one() / p_c).as_f64();
    // guard against 1/0.5 landing a hair above 2
    let nearest = r.round();
    if (r - nearest).abs() < 1e-9 {
        nearest as u64
    } else {
        r.ceil() as u64
    }
}

fn powi<T: Real>(r: u64, k: u32) -> T {
    T::lit(r as f64).powi(k as i32)
}

/// Average distribution time, summed term by term:
/// `T0 r^n + sum_{k=1..n} 2^{k-1} L0/c + sum_{k=0..n-1} r^{n-k} tau0 + L0/c`.
pub fn t_tot<T: Real>(p: &ChainParams<T>) -> Result<T> {
    p.validate()?;
    let n = p.levels()?;
    let r = p.redundancy();
    let hop = p.l0_km / p.c_km_s;
    let mut total = p.t0() * powi(r, n);
    for k in 1..=n {
        total += T::lit(2f64.powi(k as i32 - 1)) * hop;
    }
    for k in 0..n {
        total += powi::<T>(r, n - k) * p.tau0_s;
    }
    Ok(total + hop)
}

/// Closed form `T0 r^n + (r^{n+1} - r)/(r - 1) tau0 + L/c` (`n tau0` for `r = 1`).
pub fn t_tot_closed<T: Real>(p: &ChainParams<T>) -> Result<T> {
    p.validate()?;
    let n = p.levels()?;
    let r = p.redundancy();
    let swaps = if r == 1 {
        T::lit(n as f64)
    } else {
        let rf = T::lit(r as f64);
        (powi::<T>(r, n + 1) - rf) / (rf - T::one())
    };
    Ok(p.t0() * powi(r, n) + swaps * p.tau0_s + p.l_km / p.c_km_s)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MemoryMode {
    RateLimited,
    DeadtimeLimited,
}

/// Lowest-rate extreme: `f` no more than 1% above `c / (2 L0)`.
pub fn is_minimal_rate<T: Real>(p: &ChainParams<T>) -> bool {
    (p.l0_km * p.f_hz / p.c_km_s).as_f64() <= 0.5 * 1.01
}

/// `4 ceil(L0 f / c)` without the extreme-rate override.
pub fn memory_space_formula<T: Real>(p: &ChainParams<T>) -> u64 {
    4 * ceil_ratio((p.l0_km * p.f_hz / p.c_km_s).as_f64())
}

fn ceil_ratio(x: f64) -> u64 {
    let nearest = x.round();
    if (x - nearest).abs() < 1e-9 * nearest.max(1.0) {
        nearest as u64
    } else {
        x.ceil() as u64
    }
}

/// Memory modes per half station.
pub fn memory_space<T: Real>(p: &ChainParams<T>, mode: MemoryMode) -> Result<u64> {
    match mode {
        MemoryMode::RateLimited => {
            positive("f_hz", p.f_hz)?;
            if is_minimal_rate(p) {
                Ok(2)
            } else {
                Ok(memory_space_formula(p))
            }
        }
        MemoryMode::DeadtimeLimited => {
            let tau_d = p.tau_d_s.ok_or(Error::InvalidParameter {
                name: "tau_d_s",
                value: f64::NAN,
                reason: "dead-time mode needs a dead time",
            })?;
            positive("tau_d_s", tau_d)?;
            Ok(4 * ceil_ratio((p.l0_km / (p.c_km_s * tau_d)).as_f64()))
        }
    }
}

/// `F' = F^{L/L0}`.
pub fn final_fidelity<T: Real>(fidelity: T, l_km: T, l0_km: T) -> Result<T> {
    if !(fidelity > T::zero() && fidelity <= T::one()) {
        return Err(Error::InvalidParameter {
            name: "fidelity",
            value: fidelity.as_f64(),
            reason: "must lie in (0, 1]",
        });
    }
    let ratio = (l_km / l0_km).as_f64();
    if !(ratio >= 1.0 && (ratio - ratio.round()).abs() < 1e-9) {
        return Err(Error::Domain(format!("L/L0 = {ratio} is not a positive integer")));
    }
    Ok(pow_binary(fidelity, ratio.round() as u64))
}

/// Left-to-right binary powering, so that `x^{2k} = (x^k)^2` bit for bit.
fn pow_binary<T: Real>(x: T, k: u64) -> T {
    let mut acc = T::one();
    for bit in (0..u64::BITS - k.leading_zeros()).rev() {
        acc = acc * acc;
        if k >> bit & 1 == 1 {
            acc *= x;
        }
    }
    acc
}

/// `P_c = eta_d^2 eta_m^2`.
pub fn pc_from_efficiencies<T: Real>(eta_d: T, eta_m: T) -> Result<T> {
    check_unit("eta_d", eta_d.as_f64())?;
    check_unit("eta_m", eta_m.as_f64())?;
    Ok(eta_d * eta_d * eta_m * eta_m)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleResult<T> {
    pub t_tot_s: T,
    pub m_e: u64,
    /// Formula value `4 ceil(L0 f / c)`, before the extreme-rate override.
    pub m_e_formula: u64,
    pub f_final: T,
    pub n_levels: u32,
    pub links_required: u64,
}

pub fn schedule<T: Real>(p: &ChainParams<T>) -> Result<ScheduleResult<T>> {
    Ok(ScheduleResult {
        t_tot_s: t_tot(p)?,
        m_e: memory_space(p, MemoryMode::RateLimited)?,
        m_e_formula: memory_space_formula(p),
        f_final: final_fidelity(p.link_fidelity, p.l_km, p.l0_km)?,
        n_levels: p.levels()?,
        links_required: p.links_required()?,
    })
}

/// Frequencies of the reference table.
pub const TABLE_FREQUENCIES_HZ: [f64; 5] = [1.33e3, 40e3, 1e6, 10e6, 100e6];
