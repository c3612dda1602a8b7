//! QND comparison modules: coherent-beam comparison, single-photon source
//! purification, the M module, and port discrimination with local probes.

use num_complex::Complex;

use crate::error::{check_unit, Error, Result};
use crate::hybrid::{BranchedDensity, BusKernel, HybridKet};
use crate::optics::{beam_split, xpm, DetectorParams};
use crate::parity::{Port, PortPair};
use crate::scalar::{cr, Real};

/// Heralded single-photon source: `rho = p_s |1><1| + (1 - p_s) |0><0|`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SourceState<T> {
    pub p_s: T,
}

impl<T: Real> SourceState<T> {
    pub fn new(p_s: T) -> Result<Self> {
        check_unit("p_s", p_s.as_f64())?;
        Ok(SourceState { p_s })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QndParams<T> {
    pub alpha0: Complex<T>,
    pub theta: T,
    pub det: DetectorParams<T>,
}

impl<T: Real> QndParams<T> {
    pub fn new(alpha0: Complex<T>, theta: T, det: DetectorParams<T>) -> Result<Self> {
        det.validate()?;
        if !theta.is_finite() || !alpha0.re.is_finite() || !alpha0.im.is_finite() {
            return Err(Error::Domain("QND parameters must be finite".into()));
        }
        Ok(QndParams { alpha0, theta, det })
    }

    /// `|beta_1|^2 = |alpha0 - alpha0 e^{i theta}|^2 / 2 = 2 |alpha0|^2 sin^2(theta/2)`.
    pub fn signal_intensity(&self) -> T {
        let s = (self.theta * T::lit(0.5)).sin();
        T::lit(2.0) * self.alpha0.norm_sqr() * s * s
    }
}

/// `P_S = 1 - exp(-|alpha0 - alpha0 e^{i theta}|^2 / 2)`.
pub fn comparison_success<T: Real>(q: &QndParams<T>) -> T {
    -(-q.signal_intensity()).exp_m1()
}

/// `P_E = 1 - P_S`.
pub fn comparison_error<T: Real>(q: &QndParams<T>) -> T {
    (-q.signal_intensity()).exp()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Purification<T> {
    pub click_prob: T,
    pub conditional_fidelity: T,
}

/// Click probability of the QND module on the source output, and the
/// fidelity of the post-click state with `|1>`.
pub fn purify_source<T: Real>(src: &SourceState<T>, q: &QndParams<T>) -> Result<Purification<T>> {
    check_unit("p_s", src.p_s.as_f64())?;
    q.det.validate()?;
    let photon = src.p_s * q.det.click_given_intensity(q.signal_intensity());
    let dark = (T::one() - src.p_s) * q.det.click_given_intensity(T::zero());
    let click_prob = photon + dark;
    if click_prob <= T::zero() {
        return Err(Error::ZeroProbability);
    }
    Ok(Purification {
        click_prob,
        conditional_fidelity: photon / click_prob,
    })
}

/// Amplitude of the comparison beam leaving the M module when the weak beam
/// carries a photon: `gamma (e^{i theta} - 1) / sqrt 2`.
pub fn m_comparison_beam<T: Real>(gamma: Complex<T>, theta: T) -> Complex<T> {
    gamma * (Complex::from_polar(T::one(), theta) - Complex::new(T::one(), T::zero())) * cr(T::FRAC_1_SQRT_2())
}

/// Click probability of the M-module photodiode for a weak beam `|w>`.
pub fn m_module_outcome<T: Real>(w: Complex<T>, gamma: Complex<T>, theta: T, det: &DetectorParams<T>) -> T {
    let x = w.norm_sqr();
    let bright = det.click_given_intensity(m_comparison_beam(gamma, theta).norm_sqr());
    let dark = det.click_given_intensity(T::zero());
    -(-x).exp_m1() * bright + (-x).exp() * dark
}

/// Probability of two or more photons in `|w>`: `1 - e^{-x}(1 + x)`.
pub fn multiphoton_residual<T: Real>(w: Complex<T>) -> T {
    let x = w.norm_sqr();
    // 1 - e^{-x}(1+x) = -expm1(-x) - x e^{-x}, kept accurate for small x
    let v = -(-x).exp_m1() - x * (-x).exp();
    v.max(T::zero())
}

/// Indirect photon detection on a weak beam: the beam's photon imprints
/// `theta` on the bright probe `gamma`, which is then compared and detected.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MModule<T> {
    pub gamma: Complex<T>,
    pub theta: T,
    pub det: DetectorParams<T>,
}

impl<T: Real> MModule<T> {
    pub fn new(gamma: Complex<T>, theta: T, det: DetectorParams<T>) -> Result<Self> {
        det.validate()?;
        Ok(MModule { gamma, theta, det })
    }

    /// Bright probe sized like [`default_delta`].
    pub fn with_default_probe(theta: T, det: DetectorParams<T>) -> Result<Self> {
        Self::new(cr(default_delta(theta)?), theta, det)
    }

    /// Click probability with the weak beam in vacuum.
    pub fn q0(&self) -> T {
        self.det.click_given_intensity(T::zero())
    }

    /// Click probability with a photon in the weak beam.
    pub fn q1(&self) -> T {
        self.det
            .click_given_intensity(m_comparison_beam(self.gamma, self.theta).norm_sqr())
    }

    pub fn click_probability(&self, w: Complex<T>) -> T {
        m_module_outcome(w, self.gamma, self.theta, &self.det)
    }

    /// `<a|M|b>` for the click element `M = q0 |0><0| + q1 (I - |0><0|)`.
    pub fn success_kernel(&self, a: Complex<T>, b: Complex<T>) -> Complex<T> {
        let vac = vacuum_projector(a, b);
        vac * cr(self.q0()) + (coherent(a, b) - vac) * cr(self.q1())
    }

    /// `<a|(I - M)|b>`.
    pub fn failure_kernel(&self, a: Complex<T>, b: Complex<T>) -> Complex<T> {
        coherent(a, b) - self.success_kernel(a, b)
    }

    /// Single-photon truncation of the click element,
    /// `q0 |0><0| + q1 |1><1|`, used for the heralded state.
    pub fn posterior_kernel(&self, a: Complex<T>, b: Complex<T>) -> Complex<T> {
        vacuum_projector(a, b) * (cr(self.q0()) + a.conj() * b * cr(self.q1()))
    }
}

fn coherent<T: Real>(a: Complex<T>, b: Complex<T>) -> Complex<T> {
    crate::hybrid::coherent_overlap(a, b)
}

/// `<a|0><0|b>`.
fn vacuum_projector<T: Real>(a: Complex<T>, b: Complex<T>) -> Complex<T> {
    cr((-(a.norm_sqr() + b.norm_sqr()) * T::lit(0.5)).exp())
}

/// Probe amplitude with `|delta (e^{i theta} - 1)|^2 / 2 = 20`.
pub fn default_delta<T: Real>(theta: T) -> Result<T> {
    let s = (theta * T::lit(0.5)).sin().abs();
    if s <= T::zero() {
        return Err(Error::InvalidParameter {
            name: "theta",
            value: theta.as_f64(),
            reason: "probe comparison needs a nonzero phase",
        });
    }
    // |e^{i theta} - 1| = 2 |sin(theta/2)|
    Ok(T::lit(40.0).sqrt() / (T::lit(2.0) * s))
}

/// Click pattern of the two local QND modules.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ClickPattern {
    pub a_click: bool,
    pub b_click: bool,
}

impl ClickPattern {
    pub const ALL: [ClickPattern; 4] = [
        ClickPattern {
            a_click: true,
            b_click: true,
        },
        ClickPattern {
            a_click: true,
            b_click: false,
        },
        ClickPattern {
            a_click: false,
            b_click: true,
        },
        ClickPattern {
            a_click: false,
            b_click: false,
        },
    ];

    /// A click flags the K port at that location.
    pub fn port_pair(self) -> PortPair {
        let port = |click| if click { Port::K } else { Port::R };
        PortPair {
            a: port(self.a_click),
            b: port(self.b_click),
        }
    }
}

#[derive(Debug, Clone)]
pub struct PortOutcome<T> {
    pub pattern: ClickPattern,
    pub pair: PortPair,
    pub probability: T,
    /// Input projected onto the pair's tracks (unnormalized).
    pub projected: HybridKet<T>,
    /// Normalized photonic state after the measurement, when it occurred.
    pub heralded: Option<BranchedDensity<T>>,
}

#[derive(Debug, Clone)]
pub struct PortDiscrimination<T> {
    pub outcomes: Vec<PortOutcome<T>>,
    /// `|<0|(delta e^{i theta} - delta)/sqrt 2>|`.
    pub residual_overlap: T,
}

impl<T: Real> PortDiscrimination<T> {
    /// `residual_overlap < 1e-4`.
    pub fn is_discriminating(&self) -> bool {
        self.residual_overlap < T::lit(1e-4)
    }

    pub fn outcome(&self, pattern: ClickPattern) -> &PortOutcome<T> {
        self.outcomes
            .iter()
            .find(|o| o.pattern == pattern)
            .expect("all four patterns present")
    }

    pub fn total_probability(&self) -> T {
        self.outcomes.iter().fold(T::zero(), |s, o| s + o.probability)
    }
}

/// Measures which output port holds the photon at each location, by
/// coupling a probe beam `delta` to the K tracks and detecting the
/// comparison beam. `state` is a circuit output over modes `A1..A8`, `B1..B8`.
pub fn port_discriminate<T: Real>(
    state: &HybridKet<T>,
    delta: Complex<T>,
    theta: T,
    det: &DetectorParams<T>,
) -> Result<PortDiscrimination<T>> {
    det.validate()?;
    let names = ["dA1", "dA2", "dB1", "dB2"];
    let probed = state.with_bus_modes(&names, &[delta; 4])?;
    let reg = probed.registry().clone();
    let [da1, da2, db1, db2] = names.map(|n| reg.bus(n));
    let (da1, da2, db1, db2) = (da1?, da2?, db1?, db2?);
    let mut s = probed;
    for (loc, bus) in [("A", da1), ("B", db1)] {
        let (h, v) = Port::K.tracks();
        for track in [h, v] {
            s = xpm(&s, reg.photon(&format!("{loc}{track}"))?, bus, theta)?;
        }
    }
    s = beam_split(&s, da1, da2)?;
    s = beam_split(&s, db1, db2)?;
    let rho = s.to_density();

    let click = |a: Complex<T>, b: Complex<T>| det.click_kernel(a, b);
    let none = |a: Complex<T>, b: Complex<T>| det.no_click_kernel(a, b);
    let mut outcomes = Vec::with_capacity(4);
    for pattern in ClickPattern::ALL {
        let ka: &dyn Fn(Complex<T>, Complex<T>) -> Complex<T> = if pattern.a_click { &click } else { &none };
        let kb: &dyn Fn(Complex<T>, Complex<T>) -> Complex<T> = if pattern.b_click { &click } else { &none };
        let marginal = rho.photon_marginal(&[BusKernel { bus: da1, kernel: ka }, BusKernel { bus: db1, kernel: kb }]);
        let probability = marginal.trace().max(T::zero());
        let pair = pattern.port_pair();
        let (ah, av) = pair.a_modes();
        let (bh, bv) = pair.b_modes();
        let sreg = state.registry();
        let keep: Vec<_> = [format!("A{ah}"), format!("A{av}")]
            .iter()
            .map(|n| sreg.photon(n))
            .collect::<Result<_>>()?;
        let keep_b: Vec<_> = [format!("B{bh}"), format!("B{bv}")]
            .iter()
            .map(|n| sreg.photon(n))
            .collect::<Result<_>>()?;
        let (projected, _) =
            state.project_pattern(|p| keep.iter().any(|&m| p.contains(m)) && keep_b.iter().any(|&m| p.contains(m)));
        let heralded = if probability > T::zero() {
            Some(marginal.to_density()?)
        } else {
            None
        };
        outcomes.push(PortOutcome {
            pattern,
            pair,
            probability,
            projected,
            heralded,
        });
    }
    let beam =
        delta * (Complex::from_polar(T::one(), theta) - Complex::new(T::one(), T::zero())) * cr(T::FRAC_1_SQRT_2());
    Ok(PortDiscrimination {
        outcomes,
        residual_overlap: (-beam.norm_sqr() * T::lit(0.5)).exp(),
    })
}

/// Default local probe for the given XPM phase, as a complex amplitude.
pub fn default_probe<T: Real>(theta: T) -> Result<Complex<T>> {
    Ok(cr(default_delta(theta)?))
}
