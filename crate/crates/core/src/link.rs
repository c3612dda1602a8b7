//! Elementary-link generation over one fiber segment: the qubus parity
//! check between two stations, its closed-form success probability and
//! fidelity, and a seeded sampler of repeated attempts.

use std::sync::Arc;

use num_complex::Complex;
use num_traits::One;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::cmatrix::CMatrix;
use crate::error::{Error, Result};
use crate::hybrid::{BranchedDensity, BusKernel, HybridKet, ModeRegistry};
use crate::optics::{beam_split, phase_shift, xpm, DetectorParams};
use crate::parity::{decompose_input, full_transform, BellState, ModeMatrix, PortPair};
use crate::qnd::{default_delta, port_discriminate, MModule};
use crate::scalar::{cr, Real};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkParams<T> {
    /// Qubus amplitude (real).
    pub alpha: T,
    /// XPM phase per photon, radians.
    pub theta: T,
    pub l0_km: T,
    pub atten_km: T,
    pub f_hz: T,
    pub c_km_s: T,
    pub det: DetectorParams<T>,
    /// Probe amplitude of the port-discrimination modules.
    pub delta: T,
    /// Bright probe of the M module.
    pub gamma: T,
}

impl<T: Real> LinkParams<T> {
    /// 75 km segments, `|alpha theta|^2 = 1e-3`, 40 kHz, ideal detectors.
    pub fn paper_default() -> Self {
        let theta = T::lit(1e-3);
        Self::with_strength(T::lit(1e-3), theta)
    }

    /// Default segment with the given `|alpha theta|^2` and `theta`.
    pub fn with_strength(alpha_theta_sq: T, theta: T) -> Self {
        let probe = default_delta(theta).unwrap_or_else(|_| T::zero());
        LinkParams {
            alpha: alpha_theta_sq.sqrt() / theta.abs(),
            theta,
            l0_km: T::lit(75.0),
            atten_km: T::lit(25.0),
            f_hz: T::lit(40e3),
            c_km_s: T::lit(2e5),
            det: DetectorParams::ideal(),
            delta: probe,
            gamma: probe,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("alpha", self.alpha),
            ("l0_km", self.l0_km),
            ("atten_km", self.atten_km),
            ("f_hz", self.f_hz),
            ("c_km_s", self.c_km_s),
        ];
        for (name, v) in positive {
            let v = v.as_f64();
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter {
                    name,
                    value: v,
                    reason: "must be positive and finite",
                });
            }
        }
        if !self.theta.is_finite() {
            return Err(Error::InvalidParameter {
                name: "theta",
                value: self.theta.as_f64(),
                reason: "must be finite",
            });
        }
        self.det.validate()
    }

    /// Fiber transmission `e^{-L0/atten}`.
    pub fn eta(&self) -> T {
        (-self.l0_km / self.atten_km).exp()
    }

    /// Attempt period `1/f`.
    pub fn tau(&self) -> T {
        T::one() / self.f_hz
    }

    pub fn m_module(&self) -> MModule<T> {
        MModule {
            gamma: cr(self.gamma),
            theta: self.theta,
            det: self.det,
        }
    }
}

/// `P_g = (1 - e^{-2 eta |alpha sin theta|^2}) / 2`.
pub fn p_g_exact<T: Real>(p: &LinkParams<T>) -> T {
    let s = p.alpha * p.theta.sin();
    -(-T::lit(2.0) * p.eta() * s * s).exp_m1() * T::lit(0.5)
}

/// `P_g = (1 - (2F - 1)^{2 eta / (1 - eta)}) / 2`.
pub fn p_g_from_fidelity<T: Real>(fidelity: T, eta: T) -> Result<T> {
    if !(fidelity > T::lit(0.5) && fidelity <= T::one()) {
        return Err(Error::InvalidParameter {
            name: "fidelity",
            value: fidelity.as_f64(),
            reason: "must lie in (1/2, 1]",
        });
    }
    if !(eta > T::zero() && eta < T::one()) {
        return Err(Error::InvalidParameter {
            name: "eta",
            value: eta.as_f64(),
            reason: "must lie in (0, 1)",
        });
    }
    let expo = T::lit(2.0) * eta / (T::one() - eta);
    let base = T::lit(2.0) * fidelity - T::one();
    Ok(-(expo * base.ln()).exp_m1() * T::lit(0.5))
}

/// `|chi|^2` for `chi = <sqrt(1-eta) alpha e^{i theta}|sqrt(1-eta) alpha>`.
pub fn chi_sqr<T: Real>(p: &LinkParams<T>) -> T {
    let s = (p.theta * T::lit(0.5)).sin();
    // |chi| = exp(-(1-eta) alpha^2 (1 - cos theta))
    (-T::lit(4.0) * (T::one() - p.eta()) * p.alpha * p.alpha * s * s).exp()
}

/// `(1 + |chi|^2) / 2`.
pub fn link_fidelity<T: Real>(p: &LinkParams<T>) -> T {
    (T::one() + chi_sqr(p)) * T::lit(0.5)
}

/// `tau / P_g + L0 / c`.
pub fn mean_link_time<T: Real>(p: &LinkParams<T>) -> Result<T> {
    mean_link_time_for(p_g_exact(p), p.f_hz, p.l0_km, p.c_km_s)
}

pub fn mean_link_time_for<T: Real>(p_g: T, f_hz: T, l0_km: T, c_km_s: T) -> Result<T> {
    if p_g.is_nan() || p_g <= T::zero() {
        return Err(Error::ZeroProbability);
    }
    Ok(T::one() / f_hz / p_g + l0_km / c_km_s)
}

pub const FIG3_DISTANCES_KM: [f64; 5] = [15.0, 27.0, 50.0, 75.0, 100.0];

/// Fidelity grid from 0.999 to 0.99999, log-spaced in `1 - F`, with 0.9995.
pub fn default_fidelity_grid() -> Vec<f64> {
    let mut grid: Vec<f64> = (0..=20)
        .map(|k| 1.0 - 10f64.powf(-3.0 - 2.0 * k as f64 / 20.0))
        .collect();
    grid.push(0.9995);
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    grid
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Fig3Row<T> {
    pub l0_km: T,
    pub fidelity: T,
    pub p_g: T,
}

/// `P_g(F)` per segment length, rows ordered by distance then fidelity.
pub fn fig3_sweep<T: Real>(distances_km: &[T], fidelities: &[T], atten_km: T) -> Result<Vec<Fig3Row<T>>> {
    let mut rows = Vec::with_capacity(distances_km.len() * fidelities.len());
    for &l0 in distances_km {
        let eta = (-l0 / atten_km).exp();
        for &f in fidelities {
            rows.push(Fig3Row {
                l0_km: l0,
                fidelity: f,
                p_g: p_g_from_fidelity(f, eta)?,
            });
        }
    }
    Ok(rows)
}

/// Photons `AH, AV` (station A) and `BH, BV` (station B), buses `q1, q2`.
pub fn link_registry() -> Result<Arc<ModeRegistry>> {
    ModeRegistry::new(&[("AH", "A"), ("AV", "A"), ("BH", "B"), ("BV", "B")], &["q1", "q2"])
}

const POL: [&str; 2] = ["H", "V"];

fn polarization_ket<T: Real>(
    registry: Arc<ModeRegistry>,
    block: &CMatrix<T>,
    bus: Vec<Complex<T>>,
) -> Result<HybridKet<T>> {
    let mut terms = Vec::with_capacity(4);
    for (i, a) in POL.iter().enumerate() {
        for (j, b) in POL.iter().enumerate() {
            let pattern = registry.pattern(&[&format!("A{a}"), &format!("B{b}")])?;
            terms.push((block[(i, j)], pattern, bus.clone()));
        }
    }
    HybridKet::from_terms(registry, terms)
}

/// Bell state over the photons of [`link_registry`] (no buses).
pub fn bell_target<T: Real>(bell: BellState) -> Result<HybridKet<T>> {
    polarization_ket(link_registry()?.photons_only(), &bell.polarization_block(), Vec::new())
}

/// Runs the two-station qubus interaction on a normalized polarization
/// block (rows A: H, V; columns B: H, V): XPM at B, fiber loss on both
/// buses, XPM at A, phase shifters `-theta` and the final beam splitter.
pub fn link_evolution<T: Real>(block: &CMatrix<T>, p: &LinkParams<T>) -> Result<BranchedDensity<T>> {
    p.validate()?;
    let reg = link_registry()?;
    let ket = polarization_ket(reg.clone(), block, vec![cr(p.alpha); 2])?;
    ket.check_normalized()?;
    let (q1, q2) = (reg.bus("q1")?, reg.bus("q2")?);
    let ph = |n: &str| reg.photon(n);
    let (ah, av, bh, bv) = (ph("AH")?, ph("AV")?, ph("BH")?, ph("BV")?);
    let th = p.theta;
    let eta = p.eta();
    ket.to_density()
        .evolve(|k| xpm(&xpm(k, bh, q1, th)?, bv, q2, th))?
        .loss_channel(q1, eta)?
        .loss_channel(q2, eta)?
        .evolve(|k| {
            let k = xpm(&xpm(k, av, q1, th)?, ah, q2, th)?;
            let k = phase_shift(&phase_shift(&k, q1, -th)?, q2, -th)?;
            beam_split(&k, q1, q2)
        })
}

/// Outcome of the M module on one evolved link state.
#[derive(Debug, Clone)]
pub struct Herald<T> {
    pub success_probability: T,
    /// Normalized photonic state given success.
    pub posterior: Option<BranchedDensity<T>>,
    /// Fidelity of the posterior with the port's target Bell state.
    pub fidelity: Option<T>,
}

/// Success probability and heralded state for a port block.
pub fn herald<T: Real>(block: &CMatrix<T>, pair: PortPair, p: &LinkParams<T>) -> Result<Herald<T>> {
    let rho = link_evolution(block, p)?;
    let q1 = rho.registry().bus("q1")?;
    let m = p.m_module();
    let success = |a, b| m.success_kernel(a, b);
    let post = |a, b| m.posterior_kernel(a, b);
    let success_probability = rho
        .photon_marginal(&[BusKernel {
            bus: q1,
            kernel: &success,
        }])
        .trace()
        .max(T::zero());
    let marginal = rho.photon_marginal(&[BusKernel { bus: q1, kernel: &post }]);
    if marginal.trace().is_nan() || marginal.trace() <= T::zero() {
        return Ok(Herald {
            success_probability,
            posterior: None,
            fidelity: None,
        });
    }
    let posterior = marginal.to_density()?;
    let fidelity = posterior.fidelity_with(&bell_target(pair.target_bell())?)?;
    Ok(Herald {
        success_probability,
        posterior: Some(posterior),
        fidelity: Some(fidelity),
    })
}

/// Two-photon input to the link: a mixture of pure which-path states.
#[derive(Debug, Clone)]
pub struct LinkInput<T> {
    components: Vec<(T, ModeMatrix<T>)>,
}

impl<T: Real> LinkInput<T> {
    pub fn pure(state: ModeMatrix<T>) -> Result<Self> {
        let n = state.norm_sqr();
        if (n - T::one()).abs() > T::lit(1e-9) {
            return Err(Error::NotNormalized(n.sqrt().as_f64()));
        }
        Ok(LinkInput {
            components: vec![(T::one(), state)],
        })
    }

    /// Polarization state, rows A (H, V), columns B (H, V).
    pub fn polarization(block: &CMatrix<T>) -> Result<Self> {
        Self::pure(ModeMatrix::from_polarization(block))
    }

    pub fn bell(bell: BellState) -> Self {
        LinkInput {
            components: vec![(T::one(), ModeMatrix::from_polarization(&bell.polarization_block()))],
        }
    }

    /// `|HH>`.
    pub fn hh() -> Self {
        let mut b = CMatrix::zeros(2, 2);
        b[(0, 0)] = Complex::one();
        LinkInput {
            components: vec![(T::one(), ModeMatrix::from_polarization(&b))],
        }
    }

    /// Mixed input given in the Bell basis.
    pub fn mixed(rho: &CMatrix<T>) -> Result<Self> {
        let components = decompose_input(rho)?
            .into_iter()
            .map(|(w, v)| (w, ModeMatrix::from_bell_coefficients(&v)))
            .collect();
        Ok(LinkInput { components })
    }

    pub fn components(&self) -> &[(T, ModeMatrix<T>)] {
        &self.components
    }
}

/// Random full-rank two-photon density in the Bell basis (Ginibre).
pub fn random_bell_density<R: Rng + ?Sized>(rng: &mut R) -> CMatrix<f64> {
    let g = CMatrix::from_fn(4, 4, |_, _| {
        Complex::new(
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
        )
    });
    let rho = &g * &g.adjoint();
    let tr = rho.trace().re;
    rho.scale(Complex::new(1.0 / tr, 0.0))
}

#[derive(Debug, Clone)]
pub struct LinkOutcome<T> {
    pub success: bool,
    pub port: PortPair,
    pub posterior: Option<BranchedDensity<T>>,
    /// Fidelity with the port's target Bell state, on success.
    pub fidelity: Option<T>,
    pub elapsed_s: T,
}

#[derive(Debug, Clone)]
struct Branch<T> {
    probability: f64,
    port: PortPair,
    success: f64,
    herald: Arc<Herald<T>>,
}

/// Outcome distribution of one attempt, computed once and then sampled.
#[derive(Debug, Clone)]
pub struct LinkSimulator<T> {
    params: LinkParams<T>,
    branches: Vec<Branch<T>>,
    cumulative: Vec<f64>,
}

/// Aggregate of many sampled attempts.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkRun {
    pub attempts: u64,
    pub successes: u64,
    /// Successes per port pair, in [`PortPair::ALL`] order.
    pub port_successes: [u64; 4],
    /// Mean posterior fidelity over successful attempts.
    pub mean_fidelity: f64,
}

impl LinkRun {
    pub fn success_rate(&self) -> f64 {
        self.successes as f64 / self.attempts as f64
    }

    /// Binomial standard deviation of the rate for success probability `p`.
    pub fn sigma(&self, p: f64) -> f64 {
        (p * (1.0 - p) / self.attempts as f64).sqrt()
    }
}

const CHUNK: u64 = 1 << 16;

impl<T: Real> LinkSimulator<T> {
    /// Circuit, port discrimination and qubus stage for each pure input
    /// component and port pair.
    pub fn new(input: &LinkInput<T>, params: LinkParams<T>) -> Result<Self> {
        params.validate()?;
        let mut branches = Vec::new();
        for (weight, state) in input.components() {
            let out = full_transform(state)?;
            let disc = port_discriminate(&out.to_hybrid()?, cr(params.delta), params.theta, &params.det)?;
            for o in &disc.outcomes {
                let probability = (*weight * o.probability).as_f64();
                if probability <= 0.0 || o.projected.norm_sqr() <= T::zero() {
                    continue;
                }
                let block = crate::parity::project_port_pair(&out, o.pair).normalized()?;
                let h = herald(&block, o.pair, &params)?;
                branches.push(Branch {
                    probability,
                    port: o.pair,
                    success: h.success_probability.as_f64(),
                    herald: Arc::new(h),
                });
            }
        }
        if branches.is_empty() {
            return Err(Error::ZeroProbability);
        }
        let total: f64 = branches.iter().map(|b| b.probability).sum();
        let cumulative = branches
            .iter()
            .scan(0.0, |acc, b| {
                *acc += b.probability / total;
                Some(*acc)
            })
            .collect();
        Ok(LinkSimulator {
            params,
            branches,
            cumulative,
        })
    }

    /// Exact per-attempt success probability of the sampled model.
    pub fn success_probability(&self) -> f64 {
        let total: f64 = self.branches.iter().map(|b| b.probability).sum();
        self.branches.iter().map(|b| b.probability * b.success).sum::<f64>() / total
    }

    /// Exact success probability per port pair.
    pub fn port_success_probability(&self, pair: PortPair) -> f64 {
        let total: f64 = self.branches.iter().map(|b| b.probability).sum();
        self.branches
            .iter()
            .filter(|b| b.port == pair)
            .map(|b| b.probability * b.success)
            .sum::<f64>()
            / total
    }

    /// Probability that the port modules herald `pair`.
    pub fn port_probability(&self, pair: PortPair) -> f64 {
        let total: f64 = self.branches.iter().map(|b| b.probability).sum();
        self.branches
            .iter()
            .filter(|b| b.port == pair)
            .map(|b| b.probability)
            .sum::<f64>()
            / total
    }

    /// Success-weighted posterior fidelity.
    pub fn expected_fidelity(&self) -> f64 {
        let (mut num, mut den) = (0.0, 0.0);
        for b in &self.branches {
            if let Some(f) = b.herald.fidelity {
                num += b.probability * b.success * f.as_f64();
                den += b.probability * b.success;
            }
        }
        if den > 0.0 {
            num / den
        } else {
            f64::NAN
        }
    }

    fn pick<R: Rng + ?Sized>(&self, rng: &mut R) -> (usize, bool) {
        let u: f64 = rng.gen();
        let k = self
            .cumulative
            .partition_point(|&c| c <= u)
            .min(self.branches.len() - 1);
        let success = rng.gen::<f64>() < self.branches[k].success;
        (k, success)
    }

    pub fn attempt<R: Rng + ?Sized>(&self, rng: &mut R) -> LinkOutcome<T> {
        let (k, success) = self.pick(rng);
        let b = &self.branches[k];
        LinkOutcome {
            success,
            port: b.port,
            posterior: if success { b.herald.posterior.clone() } else { None },
            fidelity: if success { b.herald.fidelity } else { None },
            elapsed_s: self.params.tau(),
        }
    }

    /// Samples `attempts` independent attempts. Work is split into fixed
    /// chunks, each with its own ChaCha8 stream, so the result depends only
    /// on `(seed, attempts)`.
    pub fn run(&self, attempts: u64, seed: u64) -> LinkRun {
        let chunks = attempts.div_ceil(CHUNK);
        let parts: Vec<(u64, [u64; 4], f64)> = (0..chunks)
            .into_par_iter()
            .map(|chunk| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(chunk);
                let n = CHUNK.min(attempts - chunk * CHUNK);
                let mut ports = [0u64; 4];
                let mut fid = 0.0;
                let mut hits = 0;
                for _ in 0..n {
                    let (k, success) = self.pick(&mut rng);
                    if success {
                        let b = &self.branches[k];
                        hits += 1;
                        let slot = PortPair::ALL.iter().position(|&p| p == b.port).unwrap_or(0);
                        ports[slot] += 1;
                        fid += b.herald.fidelity.map(|f| f.as_f64()).unwrap_or(0.0);
                    }
                }
                (hits, ports, fid)
            })
            .collect();
        let mut port_successes = [0u64; 4];
        let (mut successes, mut fid) = (0u64, 0.0);
        for (h, ports, f) in parts {
            successes += h;
            fid += f;
            for (acc, p) in port_successes.iter_mut().zip(ports) {
                *acc += p;
            }
        }
        LinkRun {
            attempts,
            successes,
            port_successes,
            mean_fidelity: if successes > 0 {
                fid / successes as f64
            } else {
                f64::NAN
            },
        }
    }
}

/// One seeded attempt of the full pipeline.
pub fn simulate_attempt<T: Real>(input: &LinkInput<T>, p: &LinkParams<T>, seed: u64) -> Result<LinkOutcome<T>> {
    let sim = LinkSimulator::new(input, *p)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(sim.attempt(&mut rng))
}

impl<T: Real> Default for LinkParams<T> {
    fn default() -> Self {
        Self::paper_default()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hybrid::{fidelity_with, loss_channel};
    use crate::scalar::phase;
    use proptest::prelude::*;

    type C = Complex<f64>;

    fn params(eta: f64, alpha_theta_sq: f64, theta: f64) -> LinkParams<f64> {
        let mut p = LinkParams::with_strength(alpha_theta_sq, theta);
        p.l0_km = -eta.ln() * p.atten_km;
        p
    }

    fn lossless(alpha_theta_sq: f64, theta: f64) -> LinkParams<f64> {
        let mut p = LinkParams::with_strength(alpha_theta_sq, theta);
        p.l0_km = 1e-300;
        p
    }

    #[test]
    fn operating_point() {
        let p = LinkParams::<f64>::paper_default();
        assert!((p.eta() - (-3f64).exp()).abs() < 1e-15);
        let pg = p_g_exact(&p);
        assert!((pg / 5e-5 - 1.0).abs() < 0.02, "{pg}");
        assert!((pg - 4.9785e-5).abs() < 1e-9, "{pg}");
        assert!(link_fidelity(&p) >= 0.9995);
        let bound = 1.0 - (1.0 - p.eta()) * 1e-3 / 2.0;
        assert!(link_fidelity(&p) >= bound - 1e-9);
    }

    #[test]
    fn p_g_examples() {
        let mut p = LinkParams::<f64>::paper_default();
        p.theta = 0.0;
        assert_eq!(p_g_exact(&p), 0.0);
        let mut p = LinkParams::<f64>::with_strength(2.2164e-3, 1e-3);
        p.l0_km = 15.0;
        let pg = p_g_exact(&p);
        assert!((pg - 1.2149e-3).abs() < 1e-6, "{pg}");
        let via_f = p_g_from_fidelity(link_fidelity(&p), p.eta()).unwrap();
        assert!((via_f / pg - 1.0).abs() < 1e-6);
        assert!((link_fidelity(&p) - 0.9995).abs() < 1e-6);
    }

    #[test]
    fn p_g_from_fidelity_examples() {
        assert_eq!(p_g_from_fidelity(1.0, 0.3).unwrap(), 0.0);
        // one significant figure
        let pg = p_g_from_fidelity(0.9995, (-3f64).exp()).unwrap();
        assert!((pg - 5e-5).abs() < 0.5e-5, "{pg}");
        let pg15 = p_g_from_fidelity(0.9995, (-0.6f64).exp()).unwrap();
        assert!((pg15 - 1.2e-3).abs() < 0.02e-3, "{pg15}");
        assert!(p_g_from_fidelity(0.5, 0.3).is_err());
        assert!(p_g_from_fidelity(0.9, 1.0).is_err());
        assert!(p_g_from_fidelity(0.9, 0.0).is_err());
    }

    /// Oracle: two-mode lossy density built through the hybrid-state module.
    #[test]
    fn fidelity_matches_loss_channel() {
        let p = LinkParams {
            alpha: 1.0,
            theta: std::f64::consts::PI,
            l0_km: 25.0 * 2f64.ln(),
            ..LinkParams::paper_default()
        };
        assert!((p.eta() - 0.5).abs() < 1e-15);
        let expected = (1.0 + (-2f64).exp()) / 2.0;
        assert!((link_fidelity(&p) - expected).abs() < 1e-14);

        let reg = ModeRegistry::new(&[("H", "B"), ("V", "B")], &["bus1", "bus2"]).unwrap();
        let a = C::new(1.0, 0.0);
        let ae = a * phase(p.theta);
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let h = reg.pattern(&["H"]).unwrap();
        let v = reg.pattern(&["V"]).unwrap();
        let psi = HybridKet::from_terms(
            reg.clone(),
            vec![(C::new(s, 0.0), h, vec![ae, a]), (C::new(0.0, s), v, vec![a, ae])],
        )
        .unwrap();
        let rho = loss_channel(&psi, reg.bus("bus1").unwrap(), 0.5).unwrap();
        let rho = rho.loss_channel(reg.bus("bus2").unwrap(), 0.5).unwrap();
        let k = 0.5f64.sqrt();
        let phi1 = HybridKet::from_terms(
            reg.clone(),
            vec![
                (C::new(s, 0.0), h, vec![ae * k, a * k]),
                (C::new(0.0, s), v, vec![a * k, ae * k]),
            ],
        )
        .unwrap();
        assert!((fidelity_with(&rho, &phi1).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn lossless_fidelity_is_one() {
        let p = lossless(1e-3, 1e-3);
        assert_eq!(link_fidelity(&p), 1.0);
    }

    #[test]
    fn mean_link_time_examples() {
        let t: f64 = mean_link_time_for(5e-5, 1.33e3, 75.0, 2e5).unwrap();
        assert!((t * 16.0 - 240.6).abs() < 0.1, "{t}");
        let t: f64 = mean_link_time_for(5e-5, 1e7, 75.0, 2e5).unwrap();
        assert!((t - (2e-3 + 3.75e-4)).abs() < 1e-15);
        let t: f64 = mean_link_time_for(1.0, 40e3, 75.0, 2e5).unwrap();
        assert!((t - (1.0 / 40e3 + 75.0 / 2e5)).abs() < 1e-15);
        assert_eq!(mean_link_time_for(0.0, 1.0, 1.0, 1.0), Err(Error::ZeroProbability));
    }

    #[test]
    fn fig3_rows() {
        let d: Vec<f64> = FIG3_DISTANCES_KM.to_vec();
        let grid = default_fidelity_grid();
        assert!(grid.contains(&0.9995));
        assert!((grid[0] - 0.999).abs() < 1e-12 && (grid[grid.len() - 1] - 0.99999).abs() < 1e-12);
        let rows = fig3_sweep(&d, &grid, 25.0).unwrap();
        assert_eq!(rows.len(), 5 * grid.len());
        let at = |l: f64| rows.iter().find(|r| r.l0_km == l && r.fidelity == 0.9995).unwrap().p_g;
        assert!((at(75.0) - 5e-5).abs() < 0.5e-5);
        assert!((at(15.0) - 1.2e-3).abs() < 0.02e-3);
        for f in &grid {
            let col: Vec<f64> = rows.iter().filter(|r| r.fidelity == *f).map(|r| r.p_g).collect();
            assert!(col.windows(2).all(|w| w[1] < w[0]));
        }
    }

    /// Even branches leave bus 1 empty; odd branches carry `-+i sqrt(2 eta) alpha sin(theta)`.
    #[test]
    fn evolution_has_parity_structure() {
        let p = params(0.3, 1e-3, 0.02);
        let block = BellState::PhiPlus
            .polarization_block::<f64>()
            .add(&BellState::PsiPlus.polarization_block())
            .scale(C::new(std::f64::consts::FRAC_1_SQRT_2, 0.0));
        let rho = link_evolution(&block, &p).unwrap();
        let reg = rho.registry().clone();
        let q1 = reg.bus("q1").unwrap();
        let q2 = reg.bus("q2").unwrap();
        let beta = (2.0 * p.eta()).sqrt() * p.alpha * p.theta.sin();
        let even_q2 = C::new((2.0 * p.eta()).sqrt() * p.alpha, 0.0);
        for t in rho.branches().terms() {
            let d = reg.describe(t.pattern);
            let b1 = t.bus.get(q1);
            let b2 = t.bus.get(q2);
            match d.as_str() {
                "|AH,BH>" | "|AV,BV>" => {
                    assert!(b1.norm() < 1e-12);
                    assert!((b2 - even_q2).norm() < 1e-12);
                }
                "|AH,BV>" => assert!((b1 - C::new(0.0, -beta)).norm() < 1e-12, "{d} {b1}"),
                "|AV,BH>" => assert!((b1 - C::new(0.0, beta)).norm() < 1e-12, "{d} {b1}"),
                other => panic!("unexpected pattern {other}"),
            }
        }
    }

    /// State after both XPM stages, before the phase shifters.
    #[test]
    fn two_station_xpm_state() {
        let reg = link_registry().unwrap();
        let (q1, q2) = (reg.bus("q1").unwrap(), reg.bus("q2").unwrap());
        let ph = |n: &str| reg.photon(n).unwrap();
        let a = C::new(2.0, 0.0);
        let th = 0.1;
        let mut block = CMatrix::<f64>::zeros(2, 2);
        for i in 0..2 {
            for j in 0..2 {
                block[(i, j)] = C::new(0.5, 0.0);
            }
        }
        let k = polarization_ket(reg.clone(), &block, vec![a, a]).unwrap();
        let k = xpm(&xpm(&k, ph("BH"), q1, th).unwrap(), ph("BV"), q2, th).unwrap();
        let k = xpm(&xpm(&k, ph("AV"), q1, th).unwrap(), ph("AH"), q2, th).unwrap();
        let e = phase(th);
        for t in k.terms() {
            let labels = (t.bus.get(q1), t.bus.get(q2));
            let expected = match reg.describe(t.pattern).as_str() {
                "|AH,BH>" | "|AV,BV>" => (a * e, a * e),
                "|AH,BV>" => (a, a * e * e),
                "|AV,BH>" => (a * e * e, a),
                other => panic!("{other}"),
            };
            assert!((labels.0 - expected.0).norm() < 1e-12 && (labels.1 - expected.1).norm() < 1e-12);
        }
    }

    #[test]
    fn hh_lossless_heralds_psi_minus_on_kk() {
        let p = lossless(1e-3, 1e-3);
        let sim = LinkSimulator::new(&LinkInput::hh(), p).unwrap();
        let kk = sim.branches.iter().find(|b| b.port == PortPair::KK).expect("KK branch");
        assert_eq!(kk.port.target_bell(), BellState::PsiMinus);
        let f = kk.herald.fidelity.unwrap();
        assert!((f - 1.0).abs() < 1e-12, "{f}");
        let pg = p_g_exact(&p);
        // bright-probe miss probability e^{-20}
        assert!((sim.success_probability() / pg - 1.0).abs() < 1e-8);
    }

    #[test]
    fn posterior_fidelity_matches_closed_form() {
        let p = params((-3f64).exp(), 1e-3, 1e-3);
        let sim = LinkSimulator::new(&LinkInput::hh(), p).unwrap();
        let expected = link_fidelity(&p);
        for b in &sim.branches {
            let f = b.herald.fidelity.unwrap();
            assert!((f - expected).abs() < 1e-12, "{:?}: {f} vs {expected}", b.port);
        }
        assert!((sim.success_probability() / p_g_exact(&p) - 1.0).abs() < 1e-8);
    }

    #[test]
    fn success_probability_per_port_is_symmetric() {
        let p = params(0.4, 1e-3, 0.01);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let rho = random_bell_density(&mut rng);
        let sim = LinkSimulator::new(&LinkInput::mixed(&rho).unwrap(), p).unwrap();
        let pg = p_g_exact(&p);
        for pair in PortPair::ALL {
            let conditional = sim.port_success_probability(pair) / sim.port_probability(pair);
            assert!((conditional / pg - 1.0).abs() < 1e-8, "{pair}");
        }
    }

    #[test]
    fn sampled_rate_matches_exact() {
        let p = params(0.2, 1e-2, 0.05);
        let sim = LinkSimulator::new(&LinkInput::bell(BellState::PhiMinus), p).unwrap();
        let run = sim.run(2_000_000, 11);
        let pg = sim.success_probability();
        assert!((run.success_rate() - pg).abs() < 3.5 * run.sigma(pg));
        assert_eq!(run.port_successes.iter().sum::<u64>(), run.successes);
        assert_eq!(sim.run(200_000, 5), sim.run(200_000, 5));
        assert!((run.mean_fidelity - link_fidelity(&p)).abs() < 1e-12);
    }

    #[test]
    fn single_attempt_is_reproducible() {
        let p = LinkParams::<f64>::with_strength(0.3, 0.3);
        let input = LinkInput::hh();
        let a = simulate_attempt(&input, &p, 99).unwrap();
        let b = simulate_attempt(&input, &p, 99).unwrap();
        assert_eq!((a.success, a.port, a.fidelity), (b.success, b.port, b.fidelity));
        assert_eq!(a.elapsed_s, 1.0 / 40e3);
        let many: Vec<bool> = (0..200)
            .map(|s| simulate_attempt(&input, &p, s).unwrap().success)
            .collect();
        assert!(many.iter().any(|&x| x) && many.iter().any(|&x| !x));
    }

    #[test]
    fn rejects_unnormalized_input() {
        let mut b = CMatrix::<f64>::zeros(2, 2);
        b[(0, 0)] = C::new(2.0, 0.0);
        assert!(matches!(LinkInput::polarization(&b), Err(Error::NotNormalized(_))));
        assert!(link_evolution(&b, &LinkParams::paper_default()).is_err());
    }

    #[test]
    fn f32_closed_forms() {
        let p = LinkParams::<f32>::paper_default();
        assert!((p_g_exact(&p) / 4.9785e-5 - 1.0).abs() < 1e-3);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn p_g_below_half(eta in 0.0f64..1.0, at in 0.0f64..5.0, theta in 1e-4f64..3.0) {
            let p = params(eta.max(1e-300), at, theta);
            let pg = p_g_exact(&p);
            prop_assert!((0.0..0.5).contains(&pg));
        }

        #[test]
        fn independent_of_input(raw in proptest::collection::vec(-1.0f64..1.0, 32), eta in 0.05f64..0.95) {
            let g = CMatrix::from_fn(4, 4, |i, j| C::new(raw[8 * i + 2 * j], raw[8 * i + 2 * j + 1]));
            let rho = &g * &g.adjoint();
            let tr = rho.trace().re;
            prop_assume!(tr > 1e-2);
            let rho = rho.scale(C::new(1.0 / tr, 0.0));
            let p = params(eta, 1e-3, 1e-3);
            let sim = LinkSimulator::new(&LinkInput::mixed(&rho).unwrap(), p).unwrap();
            let reference = LinkSimulator::new(&LinkInput::hh(), p).unwrap();
            prop_assert!((sim.success_probability() / reference.success_probability() - 1.0).abs() < 1e-8);
            prop_assert!((sim.expected_fidelity() - reference.expected_fidelity()).abs() < 1e-10);
        }
    }
}
