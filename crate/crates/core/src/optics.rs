//! Optical elements acting on the bus labels of a [`HybridKet`], and the
//! threshold-detector measurement model.

use num_complex::Complex;

use crate::error::{check_unit, Error, Result};
use crate::hybrid::{coherent_overlap, BusId, HybridKet, PhotonId};
use crate::scalar::{cr, phase, Real};

/// Threshold photodetector: efficiency `eta_d`, mean dark count `lambda`
/// per detection window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectorParams<T> {
    pub eta_d: T,
    pub lambda: T,
}

impl<T: Real> DetectorParams<T> {
    pub fn new(eta_d: T, lambda: T) -> Result<Self> {
        let d = DetectorParams { eta_d, lambda };
        d.validate()?;
        Ok(d)
    }

    /// Unit efficiency, no dark counts.
    pub fn ideal() -> Self {
        DetectorParams {
            eta_d: T::one(),
            lambda: T::zero(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_unit("eta_d", self.eta_d.as_f64())?;
        let l = self.lambda.as_f64();
        if !(l >= 0.0 && l.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "lambda",
                value: l,
                reason: "dark count mean must be >= 0",
            });
        }
        Ok(())
    }

    /// `<a|Pi_0|b>` for the no-click element
    /// `Pi_0 = sum_n e^{-lambda} (1 - eta_d)^n |n><n|`.
    pub fn no_click_kernel(&self, a: Complex<T>, b: Complex<T>) -> Complex<T> {
        coherent_overlap(a, b) * self.shift(a, b).exp()
    }

    /// `<a|Pi_1|b>`, `Pi_1 = I - Pi_0`.
    pub fn click_kernel(&self, a: Complex<T>, b: Complex<T>) -> Complex<T> {
        -coherent_overlap(a, b) * expm1(self.shift(a, b))
    }

    /// Exponent ratio of `<a|Pi_0|b>` to `<a|b>`.
    fn shift(&self, a: Complex<T>, b: Complex<T>) -> Complex<T> {
        cr(-self.lambda) - a.conj() * b * cr(self.eta_d)
    }

    /// `P_1(x) = 1 - e^{-lambda} e^{-eta_d x}` for a coherent state of
    /// mean photon number `x`.
    pub fn click_given_intensity(&self, x: T) -> T {
        -(-self.lambda - self.eta_d * x).exp_m1()
    }
}

/// `e^z - 1` without cancellation for small `|z|`.
fn expm1<T: Real>(z: Complex<T>) -> Complex<T> {
    let (s, c) = z.im.sin_cos();
    let half = (z.im * T::lit(0.5)).sin();
    let cis_m1 = Complex::new(-T::lit(2.0) * half * half, s);
    Complex::new(z.re.exp_m1() * c, z.re.exp_m1() * s) + cis_m1
}

/// Probability that the detector fires on the coherent state `|beam>`.
pub fn click_probability<T: Real>(beam: Complex<T>, det: &DetectorParams<T>) -> T {
    det.click_given_intensity(beam.norm_sqr())
}

/// Multiplies the amplitude on `bus` by `e^{i phi}` in every branch.
pub fn phase_shift<T: Real>(state: &HybridKet<T>, bus: BusId, phi: T) -> Result<HybridKet<T>> {
    state.registry().check_bus(bus)?;
    let u = phase(phi);
    Ok(state.map_labels(|t| {
        let mut l = t.bus.clone();
        l.set(bus, t.bus.get(bus) * u);
        l
    }))
}

/// 50/50 beam splitter: `(a, b) -> ((a - b)/sqrt 2, (a + b)/sqrt 2)`.
pub fn beam_split<T: Real>(state: &HybridKet<T>, first: BusId, second: BusId) -> Result<HybridKet<T>> {
    let reg = state.registry();
    reg.check_bus(first)?;
    reg.check_bus(second)?;
    if first == second {
        return Err(Error::Domain("beam splitter needs two distinct modes".into()));
    }
    let s = cr(T::FRAC_1_SQRT_2());
    Ok(state.map_labels(|t| {
        let (a, b) = (t.bus.get(first), t.bus.get(second));
        let mut l = t.bus.clone();
        l.set(first, (a - b) * s);
        l.set(second, (a + b) * s);
        l
    }))
}

/// Inverse of [`beam_split`]: `(a, b) -> ((a + b)/sqrt 2, (b - a)/sqrt 2)`.
pub fn beam_unsplit<T: Real>(state: &HybridKet<T>, first: BusId, second: BusId) -> Result<HybridKet<T>> {
    let reg = state.registry();
    reg.check_bus(first)?;
    reg.check_bus(second)?;
    let s = cr(T::FRAC_1_SQRT_2());
    Ok(state.map_labels(|t| {
        let (a, b) = (t.bus.get(first), t.bus.get(second));
        let mut l = t.bus.clone();
        l.set(first, (a + b) * s);
        l.set(second, (b - a) * s);
        l
    }))
}

/// Cross-phase modulation `exp(i theta n_photon n_bus)`: branches with a
/// photon in `photon` pick up `e^{i theta}` on `bus`.
pub fn xpm<T: Real>(state: &HybridKet<T>, photon: PhotonId, bus: BusId, theta: T) -> Result<HybridKet<T>> {
    let reg = state.registry();
    reg.check_photon(photon)?;
    reg.check_bus(bus)?;
    let u = phase(theta);
    Ok(state.map_labels(|t| {
        let mut l = t.bus.clone();
        if t.pattern.contains(photon) {
            l.set(bus, t.bus.get(bus) * u);
        }
        l
    }))
}
