//! Exact algebra for states that entangle single-photon patterns with
//! multimode coherent states.
//!
//! Coherent states are carried as complex labels and every inner product uses
//! the closed-form kernel `<a|b> = exp(-|a|^2/2 - |b|^2/2 + conj(a) b)`, so no
//! Fock-space truncation ever happens. Loss on a bus mode leaks which-branch
//! information into an environment; that is tracked by a Gram matrix of
//! environment overlaps in [`BranchedDensity`].

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use num_complex::Complex;
use num_traits::{One, Zero};

use crate::cmatrix::CMatrix;
use crate::error::{check_unit, Error, Result};
use crate::linalg::{hermitian_eigen, min_eigenvalue};
use crate::scalar::{cr, is_finite, Real};

/// Terms whose coefficient modulus is below this are dropped.
pub const PRUNE_THRESHOLD: f64 = 1e-15;

const MAX_PHOTON_MODES: usize = 64;

/// `<a|b>` for coherent states `|a>`, `|b>`.
pub fn coherent_overlap<T: Real>(a: Complex<T>, b: Complex<T>) -> Complex<T> {
    overlap_exponent(a, b).exp()
}

#[inline]
fn overlap_exponent<T: Real>(a: Complex<T>, b: Complex<T>) -> Complex<T> {
    // -(|a|^2 + |b|^2)/2 + conj(a) b = -|a - b|^2/2 + i Im(conj(a) b)
    Complex::new(-(a - b).norm_sqr() * T::lit(0.5), (a.conj() * b).im)
}

/// Identifier of a photonic mode inside a [`ModeRegistry`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PhotonId(usize);

impl PhotonId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Identifier of a coherent bus mode inside a [`ModeRegistry`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BusId(usize);

impl BusId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PhotonMode {
    pub name: String,
    /// Site tag; at most one photon may occupy a given location.
    pub location: String,
}

/// The declared photonic and bus modes shared by all terms of a state.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModeRegistry {
    photons: Vec<PhotonMode>,
    buses: Vec<String>,
}

impl ModeRegistry {
    /// `photons` are `(name, location)` pairs.
    pub fn new(photons: &[(&str, &str)], buses: &[&str]) -> Result<Arc<Self>> {
        if photons.len() > MAX_PHOTON_MODES {
            return Err(Error::Domain(format!(
                "at most {MAX_PHOTON_MODES} photonic modes are supported"
            )));
        }
        let mut seen = std::collections::BTreeSet::new();
        for name in photons.iter().map(|p| p.0).chain(buses.iter().copied()) {
            if !seen.insert(name) {
                return Err(Error::DuplicateMode(name.to_string()));
            }
        }
        Ok(Arc::new(ModeRegistry {
            photons: photons
                .iter()
                .map(|&(name, location)| PhotonMode {
                    name: name.to_string(),
                    location: location.to_string(),
                })
                .collect(),
            buses: buses.iter().map(|b| b.to_string()).collect(),
        }))
    }

    /// Same photonic modes, extra bus modes appended.
    pub fn with_buses(&self, extra: &[&str]) -> Result<Arc<Self>> {
        let photons: Vec<(&str, &str)> = self
            .photons
            .iter()
            .map(|p| (p.name.as_str(), p.location.as_str()))
            .collect();
        let buses: Vec<&str> = self
            .buses
            .iter()
            .map(String::as_str)
            .chain(extra.iter().copied())
            .collect();
        Self::new(&photons, &buses)
    }

    /// Same photonic modes, no bus modes.
    pub fn photons_only(&self) -> Arc<Self> {
        Arc::new(ModeRegistry {
            photons: self.photons.clone(),
            buses: Vec::new(),
        })
    }

    pub fn photon(&self, name: &str) -> Result<PhotonId> {
        self.photons
            .iter()
            .position(|p| p.name == name)
            .map(PhotonId)
            .ok_or_else(|| Error::UnknownMode(name.to_string()))
    }

    pub fn bus(&self, name: &str) -> Result<BusId> {
        self.buses
            .iter()
            .position(|b| b == name)
            .map(BusId)
            .ok_or_else(|| Error::UnknownMode(name.to_string()))
    }

    pub fn photon_mode(&self, id: PhotonId) -> &PhotonMode {
        &self.photons[id.0]
    }

    pub fn bus_name(&self, id: BusId) -> &str {
        &self.buses[id.0]
    }

    pub fn photon_count(&self) -> usize {
        self.photons.len()
    }

    pub fn bus_count(&self) -> usize {
        self.buses.len()
    }

    pub(crate) fn check_bus(&self, id: BusId) -> Result<()> {
        if id.0 < self.buses.len() {
            Ok(())
        } else {
            Err(Error::UnknownMode(format!("bus #{}", id.0)))
        }
    }

    pub(crate) fn check_photon(&self, id: PhotonId) -> Result<()> {
        if id.0 < self.photons.len() {
            Ok(())
        } else {
            Err(Error::UnknownMode(format!("photon #{}", id.0)))
        }
    }

    /// Pattern with one photon in each named mode.
    pub fn pattern(&self, names: &[&str]) -> Result<PhotonPattern> {
        let ids = names.iter().map(|n| self.photon(n)).collect::<Result<Vec<_>>>()?;
        self.pattern_of(&ids)
    }

    pub fn pattern_of(&self, ids: &[PhotonId]) -> Result<PhotonPattern> {
        let mut bits = 0u64;
        for &id in ids {
            self.check_photon(id)?;
            let bit = 1u64 << id.0;
            if bits & bit != 0 {
                return Err(Error::MultiPhoton(self.photons[id.0].location.clone()));
            }
            bits |= bit;
        }
        let pattern = PhotonPattern(bits);
        self.validate_pattern(pattern)?;
        Ok(pattern)
    }

    fn validate_pattern(&self, pattern: PhotonPattern) -> Result<()> {
        if self.photons.len() < MAX_PHOTON_MODES && pattern.0 >> self.photons.len() != 0 {
            return Err(Error::UnknownMode("photon bit outside registry".into()));
        }
        let mut locations = std::collections::BTreeSet::new();
        for id in pattern.modes() {
            let loc = &self.photons[id.0].location;
            if !locations.insert(loc.as_str()) {
                return Err(Error::MultiPhoton(loc.clone()));
            }
        }
        Ok(())
    }

    /// Human-readable pattern, e.g. `|AH,BV>`.
    pub fn describe(&self, pattern: PhotonPattern) -> String {
        let names: Vec<&str> = pattern.modes().map(|id| self.photons[id.0].name.as_str()).collect();
        format!("|{}>", names.join(","))
    }
}

/// Occupation of photonic modes (0 or 1 photon each), as a bit set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct PhotonPattern(u64);

impl PhotonPattern {
    pub const VACUUM: PhotonPattern = PhotonPattern(0);

    pub fn contains(self, id: PhotonId) -> bool {
        self.0 & (1u64 << id.0) != 0
    }

    pub fn photon_count(self) -> u32 {
        self.0.count_ones()
    }

    pub fn modes(self) -> impl Iterator<Item = PhotonId> {
        (0..MAX_PHOTON_MODES)
            .filter(move |&i| self.0 & (1u64 << i) != 0)
            .map(PhotonId)
    }
}

/// Per-bus-mode coherent amplitudes of one branch.
#[derive(Debug, Clone, PartialEq)]
pub struct CoherentLabel<T>(Vec<Complex<T>>);

impl<T: Real> CoherentLabel<T> {
    pub fn new(amplitudes: Vec<Complex<T>>) -> Self {
        CoherentLabel(amplitudes)
    }

    pub fn get(&self, bus: BusId) -> Complex<T> {
        self.0[bus.0]
    }

    pub fn set(&mut self, bus: BusId, value: Complex<T>) {
        self.0[bus.0] = value;
    }

    pub fn amplitudes(&self) -> &[Complex<T>] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Product of per-mode overlaps `prod_m <self_m|other_m>`.
    pub fn overlap(&self, other: &Self) -> Complex<T> {
        self.0
            .iter()
            .zip(&other.0)
            .fold(Complex::zero(), |s, (&a, &b)| s + overlap_exponent(a, b))
            .exp()
    }

    fn overlap_except(&self, other: &Self, skip: &[BusId]) -> Complex<T> {
        self.0
            .iter()
            .zip(&other.0)
            .enumerate()
            .filter(|(m, _)| !skip.iter().any(|b| b.0 == *m))
            .fold(Complex::zero(), |s, (_, (&a, &b))| s + overlap_exponent(a, b))
            .exp()
    }
}

/// One ket term: amplitude, photon pattern, and bus labels.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchTerm<T> {
    pub coeff: Complex<T>,
    pub pattern: PhotonPattern,
    pub bus: CoherentLabel<T>,
}

/// Superposition of photon patterns tensored with coherent bus labels.
#[derive(Debug, Clone, PartialEq)]
pub struct HybridKet<T> {
    registry: Arc<ModeRegistry>,
    terms: Vec<BranchTerm<T>>,
}

fn same_registry(a: &Arc<ModeRegistry>, b: &Arc<ModeRegistry>) -> bool {
    Arc::ptr_eq(a, b) || **a == **b
}

impl<T: Real> HybridKet<T> {
    /// Validates and builds a ket; terms with `|coeff| < 1e-15` are pruned.
    pub fn new(registry: Arc<ModeRegistry>, terms: Vec<BranchTerm<T>>) -> Result<Self> {
        for t in &terms {
            if t.bus.len() != registry.bus_count() {
                return Err(Error::RegistryMismatch);
            }
            registry.validate_pattern(t.pattern)?;
            if !is_finite(t.coeff) || !t.bus.0.iter().all(|&z| is_finite(z)) {
                return Err(Error::Domain("non-finite amplitude".into()));
            }
        }
        let eps = T::lit(PRUNE_THRESHOLD);
        let terms = terms.into_iter().filter(|t| t.coeff.norm() >= eps).collect();
        Ok(HybridKet { registry, terms })
    }

    /// Convenience constructor from `(coeff, pattern, bus amplitudes)` triples.
    pub fn from_terms(
        registry: Arc<ModeRegistry>,
        terms: Vec<(Complex<T>, PhotonPattern, Vec<Complex<T>>)>,
    ) -> Result<Self> {
        let terms = terms
            .into_iter()
            .map(|(coeff, pattern, bus)| BranchTerm {
                coeff,
                pattern,
                bus: CoherentLabel(bus),
            })
            .collect();
        Self::new(registry, terms)
    }

    /// Zero state over a registry.
    pub fn zero(registry: Arc<ModeRegistry>) -> Self {
        HybridKet {
            registry,
            terms: Vec::new(),
        }
    }

    pub fn registry(&self) -> &Arc<ModeRegistry> {
        &self.registry
    }

    pub fn terms(&self) -> &[BranchTerm<T>] {
        &self.terms
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    /// `<self|other>`.
    pub fn inner(&self, other: &Self) -> Result<Complex<T>> {
        if !same_registry(&self.registry, &other.registry) {
            return Err(Error::RegistryMismatch);
        }
        let mut acc = Complex::zero();
        for a in &self.terms {
            for b in &other.terms {
                if a.pattern == b.pattern {
                    acc += a.coeff.conj() * b.coeff * a.bus.overlap(&b.bus);
                }
            }
        }
        Ok(acc)
    }

    pub fn norm_sqr(&self) -> T {
        self.inner(self)
            .map(|z| z.re.max(T::zero()))
            .unwrap_or_else(|_| T::zero())
    }

    /// `sqrt(<psi|psi>)` with coherent overlaps between non-orthogonal terms.
    pub fn norm(&self) -> Result<T> {
        if self.terms.is_empty() {
            return Err(Error::EmptyState);
        }
        Ok(self.norm_sqr().sqrt())
    }

    pub fn normalized(&self) -> Result<Self> {
        let n = self.norm()?;
        if n <= T::zero() {
            return Err(Error::ZeroProbability);
        }
        Ok(self.scale(cr(T::one() / n)))
    }

    pub(crate) fn check_normalized(&self) -> Result<()> {
        let n = self.norm()?;
        if (n - T::one()).abs() > T::lit(1e-9) {
            return Err(Error::NotNormalized(n.as_f64()));
        }
        Ok(())
    }

    pub fn scale(&self, s: Complex<T>) -> Self {
        HybridKet {
            registry: self.registry.clone(),
            terms: self
                .terms
                .iter()
                .map(|t| BranchTerm {
                    coeff: t.coeff * s,
                    ..t.clone()
                })
                .collect(),
        }
    }

    /// Superposition `self + other`; identical (pattern, label) terms are merged.
    pub fn add(&self, other: &Self) -> Result<Self> {
        if !same_registry(&self.registry, &other.registry) {
            return Err(Error::RegistryMismatch);
        }
        let mut terms = self.terms.clone();
        for t in &other.terms {
            match terms.iter_mut().find(|u| u.pattern == t.pattern && u.bus == t.bus) {
                Some(u) => u.coeff += t.coeff,
                None => terms.push(t.clone()),
            }
        }
        Self::new(self.registry.clone(), terms)
    }

    /// Keeps the terms whose pattern satisfies `keep`. Returns the
    /// unnormalized projection and its squared norm.
    pub fn project_pattern(&self, keep: impl Fn(PhotonPattern) -> bool) -> (Self, T) {
        let projected = HybridKet {
            registry: self.registry.clone(),
            terms: self.terms.iter().filter(|t| keep(t.pattern)).cloned().collect(),
        };
        let p = if projected.terms.is_empty() {
            T::zero()
        } else {
            projected.norm_sqr()
        };
        (projected, p)
    }

    /// Rewrites every term's bus label; the term list is preserved as is.
    pub(crate) fn map_labels(&self, f: impl Fn(&BranchTerm<T>) -> CoherentLabel<T>) -> Self {
        HybridKet {
            registry: self.registry.clone(),
            terms: self
                .terms
                .iter()
                .map(|t| BranchTerm {
                    coeff: t.coeff,
                    pattern: t.pattern,
                    bus: f(t),
                })
                .collect(),
        }
    }

    /// Appends freshly created bus modes in the given coherent states.
    pub fn with_bus_modes(&self, names: &[&str], amplitudes: &[Complex<T>]) -> Result<Self> {
        if names.len() != amplitudes.len() {
            return Err(Error::Domain("one amplitude per new bus mode".into()));
        }
        let registry = self.registry.with_buses(names)?;
        let terms = self
            .terms
            .iter()
            .map(|t| {
                let mut bus = t.bus.0.clone();
                bus.extend_from_slice(amplitudes);
                BranchTerm {
                    coeff: t.coeff,
                    pattern: t.pattern,
                    bus: CoherentLabel(bus),
                }
            })
            .collect();
        Ok(HybridKet { registry, terms })
    }

    /// Pure-state density (Gram matrix of ones).
    pub fn to_density(&self) -> BranchedDensity<T> {
        let n = self.terms.len();
        BranchedDensity {
            branches: self.clone(),
            gram: CMatrix::from_fn(n, n, |_, _| Complex::one()),
        }
    }
}

impl<T: Real> fmt::Display for HybridKet<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, t) in self.terms.iter().enumerate() {
            if k > 0 {
                write!(f, " + ")?;
            }
            write!(
                f,
                "({:.6}{:+.6}i){}",
                t.coeff.re,
                t.coeff.im,
                self.registry.describe(t.pattern)
            )?;
            for (m, z) in t.bus.0.iter().enumerate() {
                write!(f, "|{:.6}{:+.6}i>_{}", z.re, z.im, self.registry.buses[m])?;
            }
        }
        Ok(())
    }
}

/// Mixed state `rho = sum_ij c_i conj(c_j) G_ij |b_i><b_j|` over branches
/// `c_i |b_i>`, where `G` collects environment overlaps.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchedDensity<T> {
    branches: HybridKet<T>,
    gram: CMatrix<T>,
}

/// Operator acting on one bus mode, given by its matrix elements between
/// coherent states: `kernel(bra, ket) = <bra|O|ket>`.
pub struct BusKernel<'a, T> {
    pub bus: BusId,
    pub kernel: &'a dyn Fn(Complex<T>, Complex<T>) -> Complex<T>,
}

/// Photonic reduced density matrix (buses traced out, possibly with
/// operators inserted) over the distinct photon patterns of a state.
#[derive(Debug, Clone)]
pub struct PhotonMarginal<T> {
    pub registry: Arc<ModeRegistry>,
    pub patterns: Vec<PhotonPattern>,
    pub matrix: CMatrix<T>,
}

impl<T: Real> PhotonMarginal<T> {
    pub fn trace(&self) -> T {
        self.matrix.trace().re
    }

    /// `<v|M|v>` for a photon-only vector given by pattern amplitudes.
    pub fn expectation(&self, vector: &[(PhotonPattern, Complex<T>)]) -> T {
        let amp: Vec<Complex<T>> = self
            .patterns
            .iter()
            .map(|p| {
                vector
                    .iter()
                    .filter(|(q, _)| q == p)
                    .fold(Complex::zero(), |s, (_, a)| s + a)
            })
            .collect();
        let mut acc = Complex::zero();
        for (i, ai) in amp.iter().enumerate() {
            for (j, aj) in amp.iter().enumerate() {
                acc += ai.conj() * self.matrix[(i, j)] * aj;
            }
        }
        acc.re
    }

    /// Normalized photon-only density over `registry.photons_only()`.
    pub fn to_density(&self) -> Result<BranchedDensity<T>> {
        let tr = self.trace();
        if tr <= T::zero() {
            return Err(Error::ZeroProbability);
        }
        let registry = self.registry.photons_only();
        let eps = T::lit(PRUNE_THRESHOLD);
        let keep: Vec<usize> = (0..self.patterns.len())
            .filter(|&i| self.matrix[(i, i)].re / tr > eps * eps)
            .collect();
        let amps: Vec<T> = keep.iter().map(|&i| (self.matrix[(i, i)].re / tr).sqrt()).collect();
        let terms = keep
            .iter()
            .zip(&amps)
            .map(|(&i, &a)| BranchTerm {
                coeff: cr(a),
                pattern: self.patterns[i],
                bus: CoherentLabel(Vec::new()),
            })
            .collect();
        let n = keep.len();
        let gram = CMatrix::from_fn(n, n, |a, b| {
            if a == b {
                Complex::one()
            } else {
                self.matrix[(keep[a], keep[b])] / tr / cr(amps[a] * amps[b])
            }
        });
        Ok(BranchedDensity {
            branches: HybridKet { registry, terms },
            gram,
        })
    }
}

impl<T: Real> BranchedDensity<T> {
    pub fn from_pure(state: &HybridKet<T>) -> Self {
        state.to_density()
    }

    pub fn branches(&self) -> &HybridKet<T> {
        &self.branches
    }

    pub fn gram(&self) -> &CMatrix<T> {
        &self.gram
    }

    pub fn registry(&self) -> &Arc<ModeRegistry> {
        &self.branches.registry
    }

    /// `M_ij = c_i conj(c_j) G_ij`, the branch-basis representation of rho.
    pub fn weight_matrix(&self) -> CMatrix<T> {
        let t = &self.branches.terms;
        CMatrix::from_fn(t.len(), t.len(), |i, j| {
            t[i].coeff * t[j].coeff.conj() * self.gram[(i, j)]
        })
    }

    /// Branch overlaps `S_ij = <b_i|b_j>` (coefficients excluded).
    fn branch_overlaps(&self) -> CMatrix<T> {
        let t = &self.branches.terms;
        CMatrix::from_fn(t.len(), t.len(), |i, j| {
            if t[i].pattern == t[j].pattern {
                t[i].bus.overlap(&t[j].bus)
            } else {
                Complex::zero()
            }
        })
    }

    pub fn trace(&self) -> T {
        self.photon_marginal(&[]).trace()
    }

    pub fn gram_min_eigenvalue(&self) -> T {
        if self.gram.rows() == 0 {
            return T::zero();
        }
        min_eigenvalue(&self.gram)
    }

    /// Sends `bus` through a beam splitter of transmission `eta`, the
    /// reflected part being lost to the environment.
    pub fn loss_channel(&self, bus: BusId, eta: T) -> Result<Self> {
        check_unit("eta", eta.as_f64())?;
        self.registry().check_bus(bus)?;
        let t = &self.branches.terms;
        let leak = (T::one() - eta).sqrt();
        let keep = eta.sqrt();
        let gram = CMatrix::from_fn(t.len(), t.len(), |i, j| {
            let ai = t[i].bus.get(bus) * leak;
            let aj = t[j].bus.get(bus) * leak;
            self.gram[(i, j)] * coherent_overlap(aj, ai)
        });
        let branches = self.branches.map_labels(|term| {
            let mut label = term.bus.clone();
            label.set(bus, term.bus.get(bus) * keep);
            label
        });
        Ok(BranchedDensity { branches, gram })
    }

    /// Applies a branch-preserving transformation (an optical unitary) to
    /// every branch. The Gram matrix is untouched.
    pub fn evolve(&self, f: impl FnOnce(&HybridKet<T>) -> Result<HybridKet<T>>) -> Result<Self> {
        let branches = f(&self.branches)?;
        let (before, after) = (self.branches.terms.len(), branches.terms.len());
        if before != after || !same_registry(&branches.registry, &self.branches.registry) {
            return Err(Error::BranchCountChanged { before, after });
        }
        Ok(BranchedDensity {
            branches,
            gram: self.gram.clone(),
        })
    }

    /// `<target|rho|target>`.
    pub fn fidelity_with(&self, target: &HybridKet<T>) -> Result<T> {
        if !same_registry(&target.registry, &self.branches.registry) {
            return Err(Error::RegistryMismatch);
        }
        target.check_normalized()?;
        let proj: Vec<Complex<T>> = self
            .branches
            .terms
            .iter()
            .map(|b| {
                target
                    .terms
                    .iter()
                    .filter(|t| t.pattern == b.pattern)
                    .fold(Complex::zero(), |s, t| s + t.coeff.conj() * t.bus.overlap(&b.bus))
            })
            .collect();
        let m = self.weight_matrix();
        let mut acc = Complex::zero();
        for i in 0..proj.len() {
            for j in 0..proj.len() {
                acc += m[(i, j)] * proj[i] * proj[j].conj();
            }
        }
        Ok(acc.re)
    }

    /// Traces out the bus modes, inserting the given single-mode operators
    /// on their buses, and returns the photonic reduced matrix.
    pub fn photon_marginal(&self, kernels: &[BusKernel<'_, T>]) -> PhotonMarginal<T> {
        let t = &self.branches.terms;
        let mut index: BTreeMap<PhotonPattern, usize> = BTreeMap::new();
        for term in t {
            let next = index.len();
            index.entry(term.pattern).or_insert(next);
        }
        // deterministic order: sorted by pattern bits
        let patterns: Vec<PhotonPattern> = index.keys().copied().collect();
        let pos: BTreeMap<PhotonPattern, usize> = patterns.iter().enumerate().map(|(k, &p)| (p, k)).collect();
        let skip: Vec<BusId> = kernels.iter().map(|k| k.bus).collect();
        let m = self.weight_matrix();
        let mut out = CMatrix::zeros(patterns.len(), patterns.len());
        for i in 0..t.len() {
            for j in 0..t.len() {
                let mut v = m[(i, j)] * t[j].bus.overlap_except(&t[i].bus, &skip);
                for k in kernels {
                    v *= (k.kernel)(t[j].bus.get(k.bus), t[i].bus.get(k.bus));
                }
                out[(pos[&t[i].pattern], pos[&t[j].pattern])] += v;
            }
        }
        PhotonMarginal {
            registry: self.branches.registry.clone(),
            patterns,
            matrix: out,
        }
    }

    /// Eigen-decomposition of the represented operator: weights in
    /// descending order with the corresponding normalized pure states.
    pub fn decompose(&self) -> Result<Vec<(T, HybridKet<T>)>> {
        if self.branches.terms.is_empty() {
            return Err(Error::EmptyState);
        }
        let s = hermitian_eigen(&self.branch_overlaps());
        let tol = T::lit(1e-12);
        let kept: Vec<usize> = (0..s.values.len()).filter(|&k| s.values[k] > tol).collect();
        let n = self.branches.terms.len();
        let r = kept.len();
        // W = U_r D_r^{-1/2}; e_k = sum_i b_i W_ik is orthonormal.
        let w = CMatrix::from_fn(n, r, |i, k| {
            s.vectors[(i, kept[k])] * cr(T::one() / s.values[kept[k]].sqrt())
        });
        let x = &w.adjoint() * &self.branch_overlaps();
        let rho_e = &(&x * &self.weight_matrix()) * &x.adjoint();
        let e = hermitian_eigen(&rho_e);
        let mut out = Vec::with_capacity(r);
        for k in 0..r {
            let z = CMatrix::from_fn(r, 1, |i, _| e.vectors[(i, k)]);
            let coeffs = &w * &z;
            let terms = self
                .branches
                .terms
                .iter()
                .enumerate()
                .map(|(i, b)| BranchTerm {
                    coeff: coeffs[(i, 0)],
                    pattern: b.pattern,
                    bus: b.bus.clone(),
                })
                .collect();
            let ket = HybridKet::new(self.branches.registry.clone(), terms)?;
            out.push((e.values[k], ket));
        }
        Ok(out)
    }
}

/// Sends one bus mode of a pure state through fiber loss of transmission `eta`.
pub fn loss_channel<T: Real>(state: &HybridKet<T>, bus: BusId, eta: T) -> Result<BranchedDensity<T>> {
    state.to_density().loss_channel(bus, eta)
}

/// `<target|rho|target>`.
pub fn fidelity_with<T: Real>(state: &BranchedDensity<T>, target: &HybridKet<T>) -> Result<T> {
    state.fidelity_with(target)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::phase;
    use proptest::prelude::*;

    type C = Complex<f64>;

    fn c(re: f64, im: f64) -> C {
        C::new(re, im)
    }

    fn reg() -> Arc<ModeRegistry> {
        ModeRegistry::new(&[("H", "B"), ("V", "B")], &["bus1", "bus2"]).unwrap()
    }

    /// Truncated Fock-space evaluation of `<a|b>`.
    fn fock_overlap(a: C, b: C) -> C {
        let mut term = C::new(1.0, 0.0);
        let mut sum = term;
        for n in 1..200 {
            term = term * a.conj() * b / n as f64;
            sum += term;
        }
        sum * (-(a.norm_sqr() + b.norm_sqr()) / 2.0).exp()
    }

    /// |H>|a e^{i th}>|a> + i|V>|a>|a e^{i th}>, unnormalized.
    fn bus_state(alpha: f64, theta: f64) -> HybridKet<f64> {
        let r = reg();
        let h = r.pattern(&["H"]).unwrap();
        let v = r.pattern(&["V"]).unwrap();
        let a = c(alpha, 0.0);
        let ath = a * phase(theta);
        HybridKet::from_terms(r, vec![(c(1.0, 0.0), h, vec![ath, a]), (c(0.0, 1.0), v, vec![a, ath])]).unwrap()
    }

    #[test]
    fn overlap_examples() {
        let a = c(0.7, -1.2);
        assert!((coherent_overlap(a, a) - c(1.0, 0.0)).norm() < 1e-15);
        let b = c(1.5, 0.4);
        let vac = coherent_overlap(c(0.0, 0.0), b);
        assert!((vac.re - (-b.norm_sqr() / 2.0).exp()).abs() < 1e-15 && vac.im.abs() < 1e-15);
        assert!((coherent_overlap(a, b) - fock_overlap(a, b)).norm() < 1e-12);
    }

    #[test]
    fn overlap_comparison_error_point() {
        // |alpha0 theta| = 2 sqrt 5 with theta -> 0
        let theta = 1e-6;
        let a0 = c(2.0 * 5f64.sqrt() / theta, 0.0);
        let ov = coherent_overlap(a0, a0 * phase(theta));
        assert!((ov.norm_sqr() / (-20f64).exp() - 1.0).abs() < 1e-6);
        let pe = (-0.5 * (a0 - a0 * phase(theta)).norm_sqr()).exp();
        assert!((pe / (-10f64).exp() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn norm_examples() {
        let r = reg();
        let h = r.pattern(&["H"]).unwrap();
        let v = r.pattern(&["V"]).unwrap();
        let single = HybridKet::from_terms(r.clone(), vec![(c(1.0, 0.0), h, vec![c(3.0, 1.0), c(-0.5, 0.0)])]).unwrap();
        assert!((single.norm().unwrap() - 1.0).abs() < 1e-14);

        let s = std::f64::consts::FRAC_1_SQRT_2;
        let a = c(1.3, 0.0);
        let sup = HybridKet::from_terms(r, vec![(c(s, 0.0), h, vec![a, a]), (c(0.0, s), v, vec![a, a])]).unwrap();
        assert!((sup.norm().unwrap() - 1.0).abs() < 1e-14);

        // direct Gram sum: cross terms vanish because H and V are orthogonal
        let psi = bus_state(2.0, 0.3);
        let mut gram_sum = 0.0;
        for a in psi.terms() {
            for b in psi.terms() {
                if a.pattern == b.pattern {
                    let bus: C = (0..2).map(|m| fock_overlap(a.bus.0[m], b.bus.0[m])).product();
                    gram_sum += (a.coeff.conj() * b.coeff * bus).re;
                }
            }
        }
        assert!((gram_sum.sqrt() - 2f64.sqrt()).abs() < 1e-12);
        assert!((psi.norm().unwrap() - 2f64.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn norm_of_empty_state_is_error() {
        assert_eq!(HybridKet::<f64>::zero(reg()).norm(), Err(Error::EmptyState));
    }

    #[test]
    fn rejects_two_photons_at_one_location() {
        let r = reg();
        assert!(matches!(r.pattern(&["H", "V"]), Err(Error::MultiPhoton(_))));
    }

    #[test]
    fn mismatched_registry_is_error() {
        let other = ModeRegistry::new(&[("X", "A")], &["bus1", "bus2"]).unwrap();
        let x = other.pattern(&["X"]).unwrap();
        let k = HybridKet::from_terms(other, vec![(c(1.0, 0.0), x, vec![c(0.0, 0.0); 2])]).unwrap();
        assert_eq!(bus_state(1.0, 0.1).inner(&k), Err(Error::RegistryMismatch));
    }

    #[test]
    fn project_examples() {
        let r = reg();
        let h = r.pattern(&["H"]).unwrap();
        let v = r.pattern(&["V"]).unwrap();
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let a = c(0.4, 0.0);
        let psi = HybridKet::from_terms(r, vec![(c(s, 0.0), h, vec![a, a]), (c(0.0, s), v, vec![a, a])]).unwrap();
        let (proj, p) = psi.project_pattern(|q| q == h);
        assert!((p - 0.5).abs() < 1e-14);
        assert_eq!(proj.terms().len(), 1);
        assert_eq!(proj.terms()[0].pattern, h);

        let (none, p0) = psi.project_pattern(|q| q == PhotonPattern::VACUUM);
        assert!(none.is_zero());
        assert_eq!(p0, 0.0);
    }

    #[test]
    fn zero_terms_are_pruned() {
        let r = reg();
        let h = r.pattern(&["H"]).unwrap();
        let k = HybridKet::from_terms(r, vec![(c(1e-16, 0.0), h, vec![c(0.0, 0.0); 2])]).unwrap();
        assert!(k.is_zero());
    }

    #[test]
    fn lossless_channel_keeps_purity() {
        let psi = bus_state(1.0, 0.2).normalized().unwrap();
        let rho = loss_channel(&psi, BusId(0), 1.0).unwrap();
        assert!(
            rho.gram()
                .sub(&CMatrix::from_fn(2, 2, |_, _| C::new(1.0, 0.0)))
                .max_abs()
                < 1e-15
        );
        assert!((rho.fidelity_with(&psi).unwrap() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn full_loss_leaks_which_path() {
        let psi = bus_state(1.1, 0.7).normalized().unwrap();
        let rho = loss_channel(&psi, BusId(0), 0.0).unwrap();
        let (ai, aj) = (psi.terms()[0].bus.0[0], psi.terms()[1].bus.0[0]);
        assert!((rho.gram()[(0, 1)] - coherent_overlap(aj, ai)).norm() < 1e-15);
    }

    /// Both bus modes through the same fiber: weights (1 +- |chi|^2)/2.
    #[test]
    fn two_mode_loss_gives_real_weights() {
        let (alpha, theta, eta) = (3.0, 0.4, 0.6);
        let psi = bus_state(alpha, theta).normalized().unwrap();
        let rho = loss_channel(&psi, BusId(0), eta)
            .and_then(|r| r.loss_channel(BusId(1), eta))
            .unwrap();
        let eps = (1.0 - eta).sqrt();
        let chi = coherent_overlap(c(eps * alpha, 0.0) * phase(theta), c(eps * alpha, 0.0));
        let off = rho.gram()[(0, 1)];
        assert!(off.im.abs() < 1e-15, "per-mode phases must cancel");
        assert!((off.re - chi.norm_sqr()).abs() < 1e-14);
        assert!((chi.norm() - (-(1.0 - eta) * alpha * alpha * (1.0 - theta.cos())).exp()).abs() < 1e-14);

        let parts = rho.decompose().unwrap();
        assert_eq!(parts.len(), 2);
        assert!((parts[0].0 - (1.0 + chi.norm_sqr()) / 2.0).abs() < 1e-12);
        assert!((parts[1].0 - (1.0 - chi.norm_sqr()) / 2.0).abs() < 1e-12);

        // eigenvectors are |Phi1>, |Phi2> (post-loss labels) up to phase
        let r = psi.registry().clone();
        let h = r.pattern(&["H"]).unwrap();
        let v = r.pattern(&["V"]).unwrap();
        let a = c(eta.sqrt() * alpha, 0.0);
        let ath = a * phase(theta);
        let s = std::f64::consts::FRAC_1_SQRT_2;
        for (k, sign) in [(0usize, 1.0), (1, -1.0)] {
            let phi = HybridKet::from_terms(
                r.clone(),
                vec![(c(s, 0.0), h, vec![ath, a]), (c(0.0, sign * s), v, vec![a, ath])],
            )
            .unwrap();
            let ov = phi.inner(&parts[k].1).unwrap();
            assert!((ov.norm() - 1.0).abs() < 1e-12);
            let f = rho.fidelity_with(&phi).unwrap();
            assert!((f - (1.0 + sign * chi.norm_sqr()) / 2.0).abs() < 1e-12);
        }
        assert!((rho.trace() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn loss_rejects_bad_inputs() {
        let psi = bus_state(1.0, 0.1).normalized().unwrap();
        assert!(loss_channel(&psi, BusId(5), 0.5).is_err());
        assert!(loss_channel(&psi, BusId(0), 1.5).is_err());
    }

    #[test]
    fn photon_marginal_matches_trace() {
        let psi = bus_state(0.8, 1.1).normalized().unwrap();
        let rho = loss_channel(&psi, BusId(1), 0.3).unwrap();
        let m = rho.photon_marginal(&[]);
        assert!((m.trace() - 1.0).abs() < 1e-13);
        let photon = m.to_density().unwrap();
        assert!((photon.trace() - 1.0).abs() < 1e-13);
        assert!(photon.gram_min_eigenvalue() > -1e-12);
    }

    #[test]
    fn works_in_f32() {
        let r = reg();
        let h = r.pattern(&["H"]).unwrap();
        let k = HybridKet::<f32>::from_terms(
            r,
            vec![(
                Complex::new(1.0, 0.0),
                h,
                vec![Complex::new(0.5, 0.0), Complex::new(0.0, 0.0)],
            )],
        )
        .unwrap();
        assert!((k.norm().unwrap() - 1.0).abs() < 1e-6);
    }

    fn amp() -> impl Strategy<Value = C> {
        (-3.0f64..3.0, -3.0f64..3.0).prop_map(|(re, im)| C::new(re, im))
    }

    proptest! {
        #[test]
        fn overlap_bounded_and_conjugate_symmetric(a in amp(), b in amp()) {
            let ab = coherent_overlap(a, b);
            prop_assert!(ab.norm() <= 1.0 + 1e-15);
            prop_assert!((ab - coherent_overlap(b, a).conj()).norm() < 1e-14);
            if (a - b).norm() > 1e-3 {
                prop_assert!(ab.norm() < 1.0);
            }
        }

        #[test]
        fn loss_composes(alpha in 0.1f64..3.0, theta in 0.0f64..3.0, e1 in 0.0f64..1.0, e2 in 0.0f64..1.0) {
            let psi = bus_state(alpha, theta).normalized().unwrap();
            let once = loss_channel(&psi, BusId(0), e1 * e2).unwrap();
            let twice = loss_channel(&psi, BusId(0), e1).unwrap().loss_channel(BusId(0), e2).unwrap();
            prop_assert!(once.gram().sub(twice.gram()).max_abs() < 1e-12);
        }

        #[test]
        fn gram_stays_psd(alpha in 0.1f64..4.0, theta in 0.0f64..3.0, etas in proptest::collection::vec(0.0f64..1.0, 1..6)) {
            let psi = bus_state(alpha, theta).normalized().unwrap();
            let mut rho = psi.to_density();
            for (k, e) in etas.iter().enumerate() {
                rho = rho.loss_channel(BusId(k % 2), *e).unwrap();
            }
            prop_assert!(rho.gram_min_eigenvalue() > -1e-12);
            prop_assert!((rho.trace() - 1.0).abs() < 1e-12);
        }
    }
}
