//! The local linear-optical circuit that maps any two-photon input onto
//! fixed even/odd Bell-state combinations over four pairs of output ports.
//!
//! A bi-photon state is stored as an 8x8 coefficient matrix `C`, with
//! `state = sum_mn C_mn a_m^dag b_n^dag |0>`; rows are the which-path modes at
//! location A, columns those at location B. Mode numbers are 1-based in the
//! public API. After the circuit, tracks 3,4 form port K and tracks 5,6 form
//! port R at each location, the lower index carrying H.

use std::fmt;
use std::sync::Arc;

use num_complex::Complex;
use num_traits::{One, Zero};

use crate::cmatrix::CMatrix;
use crate::error::{Error, Result};
use crate::hybrid::{HybridKet, ModeRegistry, PhotonPattern};
use crate::linalg::hermitian_eigen;
use crate::scalar::{c, cr, Real};

pub const MODES: usize = 8;

/// The four Bell states, in the order `B^1..B^4` of the which-path map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BellState {
    PhiPlus,
    PhiMinus,
    PsiPlus,
    PsiMinus,
}

impl BellState {
    pub const ALL: [BellState; 4] = [
        BellState::PhiPlus,
        BellState::PhiMinus,
        BellState::PsiPlus,
        BellState::PsiMinus,
    ];

    /// 1-based index `mu`.
    pub fn index(self) -> usize {
        match self {
            BellState::PhiPlus => 1,
            BellState::PhiMinus => 2,
            BellState::PsiPlus => 3,
            BellState::PsiMinus => 4,
        }
    }

    pub fn from_index(mu: usize) -> Result<Self> {
        Self::ALL
            .get(mu.wrapping_sub(1))
            .copied()
            .ok_or_else(|| Error::Domain(format!("Bell index {mu} not in 1..=4")))
    }

    pub fn is_even(self) -> bool {
        matches!(self, BellState::PhiPlus | BellState::PhiMinus)
    }

    pub fn name(self) -> &'static str {
        match self {
            BellState::PhiPlus => "Phi+",
            BellState::PhiMinus => "Phi-",
            BellState::PsiPlus => "Psi+",
            BellState::PsiMinus => "Psi-",
        }
    }

    /// 2x2 polarization amplitudes, rows = A (H, V), columns = B (H, V).
    pub fn polarization_block<T: Real>(self) -> CMatrix<T> {
        let s = T::FRAC_1_SQRT_2();
        let (hh, hv, vh, vv) = match self {
            BellState::PhiPlus => (s, T::zero(), T::zero(), s),
            BellState::PhiMinus => (s, T::zero(), T::zero(), -s),
            BellState::PsiPlus => (T::zero(), s, s, T::zero()),
            BellState::PsiMinus => (T::zero(), s, -s, T::zero()),
        };
        CMatrix::from_rows(&[vec![cr(hh), cr(hv)], vec![cr(vh), cr(vv)]])
    }
}

impl fmt::Display for BellState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Bi-photon state over the which-path modes 1..8 at A and at B.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeMatrix<T>(CMatrix<T>);

impl<T: Real> ModeMatrix<T> {
    pub fn zeros() -> Self {
        ModeMatrix(CMatrix::zeros(MODES, MODES))
    }

    pub fn from_matrix(m: CMatrix<T>) -> Result<Self> {
        if m.rows() != MODES || m.cols() != MODES {
            return Err(Error::Domain("mode matrix must be 8x8".into()));
        }
        Ok(ModeMatrix(m))
    }

    /// Embeds a polarization-space state (rows A: H, V; columns B: H, V)
    /// on the which-path modes {1, 2}.
    pub fn from_polarization(block: &CMatrix<T>) -> Self {
        assert_eq!((block.rows(), block.cols()), (2, 2));
        let mut m = Self::zeros();
        for i in 0..2 {
            for j in 0..2 {
                m.0[(i, j)] = block[(i, j)];
            }
        }
        m
    }

    /// `sum_mu c_mu |B^mu>` with `coeffs[mu - 1] = c_mu`.
    pub fn from_bell_coefficients(coeffs: &[Complex<T>; 4]) -> Self {
        let mut block = CMatrix::zeros(2, 2);
        for (b, &k) in BellState::ALL.iter().zip(coeffs) {
            block = block.add(&b.polarization_block().scale(k));
        }
        Self::from_polarization(&block)
    }

    /// Entry for 1-based modes `(m, n)`.
    pub fn get(&self, m: usize, n: usize) -> Complex<T> {
        self.0[(m - 1, n - 1)]
    }

    pub fn set(&mut self, m: usize, n: usize, value: Complex<T>) {
        self.0[(m - 1, n - 1)] = value;
    }

    pub fn matrix(&self) -> &CMatrix<T> {
        &self.0
    }

    pub fn norm_sqr(&self) -> T {
        self.0.norm_sqr()
    }

    /// Largest modulus outside the given 1-based row/column mode sets.
    pub fn max_outside(&self, rows: &[usize], cols: &[usize]) -> T {
        let mut worst = T::zero();
        for m in 1..=MODES {
            for n in 1..=MODES {
                if !(rows.contains(&m) && cols.contains(&n)) {
                    worst = worst.max(self.get(m, n).norm());
                }
            }
        }
        worst
    }

    /// Relabels modes 1 <-> 2 on both sides.
    pub fn swap_paths_12(&self) -> Self {
        let mut p = CMatrix::identity(MODES);
        p[(0, 0)] = Complex::zero();
        p[(1, 1)] = Complex::zero();
        p[(0, 1)] = Complex::one();
        p[(1, 0)] = Complex::one();
        ModeMatrix(&(&p * &self.0) * &p)
    }

    /// The state as a [`HybridKet`] over photonic modes `A1..A8`, `B1..B8`
    /// (no bus modes).
    pub fn to_hybrid(&self) -> Result<HybridKet<T>> {
        let registry = whichpath_registry()?;
        let mut terms = Vec::new();
        for m in 1..=MODES {
            for n in 1..=MODES {
                let z = self.get(m, n);
                if z.norm() > T::zero() {
                    let pattern = whichpath_pattern(&registry, m, n)?;
                    terms.push((z, pattern, Vec::new()));
                }
            }
        }
        HybridKet::from_terms(registry, terms)
    }
}

/// Registry with photonic modes `A1..A8` (location A) and `B1..B8` (location B).
pub fn whichpath_registry() -> Result<Arc<ModeRegistry>> {
    let names: Vec<(String, &str)> = (1..=MODES)
        .map(|m| (format!("A{m}"), "A"))
        .chain((1..=MODES).map(|n| (format!("B{n}"), "B")))
        .collect();
    let refs: Vec<(&str, &str)> = names.iter().map(|(n, l)| (n.as_str(), *l)).collect();
    ModeRegistry::new(&refs, &[])
}

/// Pattern with the A photon in track `m` and the B photon in track `n`.
pub fn whichpath_pattern(registry: &ModeRegistry, m: usize, n: usize) -> Result<PhotonPattern> {
    registry.pattern(&[&format!("A{m}"), &format!("B{n}")])
}

/// Which location a local operation acts on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    A,
    B,
}

/// An 8x8 unitary acting on one photon's which-path modes.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalUnitary<T> {
    pub name: String,
    pub matrix: CMatrix<T>,
}

impl<T: Real> LocalUnitary<T> {
    /// `max |U U^dag - I|`.
    pub fn unitarity_residual(&self) -> T {
        (&self.matrix * &self.matrix.adjoint())
            .sub(&CMatrix::identity(self.matrix.rows()))
            .max_abs()
    }
}

fn embed<T: Real>(block: &CMatrix<T>) -> CMatrix<T> {
    let mut m = CMatrix::identity(MODES);
    for i in 0..block.rows() {
        for j in 0..block.cols() {
            m[(i, j)] = block[(i, j)];
        }
    }
    m
}

fn blocks2<T: Real>(tl: &CMatrix<T>, tr: &CMatrix<T>, bl: &CMatrix<T>, br: &CMatrix<T>) -> CMatrix<T> {
    let n = tl.rows();
    CMatrix::from_fn(2 * n, 2 * n, |i, j| match (i < n, j < n) {
        (true, true) => tl[(i, j)],
        (true, false) => tr[(i, j - n)],
        (false, true) => bl[(i - n, j)],
        (false, false) => br[(i - n, j - n)],
    })
}

/// `U2 = [[0, iV], [I, 0]]` on modes 1..4, `V = [[0, 1], [-1, 0]]`.
pub fn u2_block<T: Real>() -> CMatrix<T> {
    let i2 = CMatrix::<T>::identity(2);
    let z2 = CMatrix::<T>::zeros(2, 2);
    let v = CMatrix::from_rows(&[
        vec![Complex::zero(), Complex::one()],
        vec![-Complex::<T>::one(), Complex::zero()],
    ]);
    blocks2(&z2, &v.scale(c(T::zero(), T::one())), &i2, &z2)
}

/// The four local unitaries, all embedded as 8x8 matrices.
pub fn build_unitaries<T: Real>() -> [LocalUnitary<T>; 4] {
    let i2 = CMatrix::<T>::identity(2);
    let s = cr(T::FRAC_1_SQRT_2());
    let u1 = blocks2(&i2.scale(s), &i2.scale(s), &i2.scale(-s), &i2.scale(s));
    let u1 = embed(&u1);
    let u2 = embed(&u2_block());
    let u3 = u1.transpose();
    let p1 = CMatrix::from_fn(4, 4, |i, j| {
        if i == j && i >= 2 {
            Complex::one()
        } else {
            Complex::zero()
        }
    });
    let p2 = CMatrix::from_fn(4, 4, |i, j| {
        if i == j && i < 2 {
            Complex::one()
        } else {
            Complex::zero()
        }
    });
    let u4 = blocks2(&p1, &p2, &p2, &p1.scale(cr(-T::one())));
    [
        LocalUnitary {
            name: "U1".into(),
            matrix: u1,
        },
        LocalUnitary {
            name: "U2".into(),
            matrix: u2,
        },
        LocalUnitary {
            name: "U3".into(),
            matrix: u3,
        },
        LocalUnitary {
            name: "U4".into(),
            matrix: u4,
        },
    ]
}

/// `|B^mu>` on which-path modes {1, 2}.
pub fn bell_to_whichpath<T: Real>(mu: usize) -> Result<ModeMatrix<T>> {
    let b = BellState::from_index(mu)?;
    Ok(ModeMatrix::from_polarization(&b.polarization_block()))
}

/// Side A: `C -> U C`; side B: `C -> C U^T`.
pub fn apply_local<T: Real>(state: &ModeMatrix<T>, u: &LocalUnitary<T>, side: Side) -> ModeMatrix<T> {
    match side {
        Side::A => ModeMatrix(&u.matrix * &state.0),
        Side::B => ModeMatrix(&state.0 * &u.matrix.transpose()),
    }
}

/// Runs `U1..U4` on both photons. The input must live on modes {1, 2}.
pub fn full_transform<T: Real>(state: &ModeMatrix<T>) -> Result<ModeMatrix<T>> {
    full_transform_with(state, &build_unitaries())
}

/// [`full_transform`] with caller-supplied unitaries.
pub fn full_transform_with<T: Real>(state: &ModeMatrix<T>, unitaries: &[LocalUnitary<T>]) -> Result<ModeMatrix<T>> {
    let tol = T::lit(1e-12);
    if state.max_outside(&[1, 2], &[1, 2]) > tol {
        return Err(Error::SupportViolation);
    }
    Ok(unitaries.iter().fold(state.clone(), |s, u| {
        apply_local(&apply_local(&s, u, Side::A), u, Side::B)
    }))
}

/// Output port at one location.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Port {
    K,
    R,
}

impl Port {
    /// Which-path tracks `(H, V)`.
    pub fn tracks(self) -> (usize, usize) {
        match self {
            Port::K => (3, 4),
            Port::R => (5, 6),
        }
    }
}

/// A pair of output ports, one at each location.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PortPair {
    pub a: Port,
    pub b: Port,
}

impl PortPair {
    pub const KK: PortPair = PortPair { a: Port::K, b: Port::K };
    pub const KR: PortPair = PortPair { a: Port::K, b: Port::R };
    pub const RK: PortPair = PortPair { a: Port::R, b: Port::K };
    pub const RR: PortPair = PortPair { a: Port::R, b: Port::R };
    pub const ALL: [PortPair; 4] = [PortPair::KK, PortPair::KR, PortPair::RK, PortPair::RR];

    pub fn label(self) -> &'static str {
        match (self.a, self.b) {
            (Port::K, Port::K) => "KA_KB",
            (Port::K, Port::R) => "KA_RB",
            (Port::R, Port::K) => "RA_KB",
            (Port::R, Port::R) => "RA_RB",
        }
    }

    pub fn a_modes(self) -> (usize, usize) {
        self.a.tracks()
    }

    pub fn b_modes(self) -> (usize, usize) {
        self.b.tracks()
    }

    /// Bell state left after the qubus parity check on this pair: the odd
    /// component is `Psi+` on K_A K_B / R_A R_B and `Psi-` on the cross
    /// pairs, and the opposite-phase weak beams flip its sign.
    pub fn target_bell(self) -> BellState {
        if self.a == self.b {
            BellState::PsiMinus
        } else {
            BellState::PsiPlus
        }
    }
}

impl fmt::Display for PortPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Two-photon polarization state found on a port pair.
#[derive(Debug, Clone, PartialEq)]
pub struct PortBlock<T> {
    pub pair: PortPair,
    /// Rows: A (H, V); columns: B (H, V). Unnormalized.
    pub amplitudes: CMatrix<T>,
    pub probability: T,
}

impl<T: Real> PortBlock<T> {
    /// Weight of the even (`HH`, `VV`) and odd (`HV`, `VH`) parts.
    pub fn parity_weights(&self) -> (T, T) {
        let a = &self.amplitudes;
        (
            a[(0, 0)].norm_sqr() + a[(1, 1)].norm_sqr(),
            a[(0, 1)].norm_sqr() + a[(1, 0)].norm_sqr(),
        )
    }

    /// Amplitude on a Bell state: `<bell|block>`.
    pub fn bell_amplitude(&self, bell: BellState) -> Complex<T> {
        bell.polarization_block::<T>().inner(&self.amplitudes)
    }

    pub fn normalized(&self) -> Result<CMatrix<T>> {
        if self.probability <= T::zero() {
            return Err(Error::ZeroProbability);
        }
        Ok(self.amplitudes.scale(cr(T::one() / self.probability.sqrt())))
    }
}

/// Extracts the 2x2 block of a port pair, relabeled to polarization.
pub fn project_port_pair<T: Real>(state: &ModeMatrix<T>, pair: PortPair) -> PortBlock<T> {
    let (ah, av) = pair.a_modes();
    let (bh, bv) = pair.b_modes();
    let amplitudes = state.0.select(&[ah - 1, av - 1], &[bh - 1, bv - 1]);
    let probability = amplitudes.norm_sqr();
    PortBlock {
        pair,
        amplitudes,
        probability,
    }
}

/// Number of singular values above `1e-10`.
pub fn schmidt_rank<T: Real>(block: &CMatrix<T>) -> Result<usize> {
    let sv = singular_values_2x2(block);
    let tol = T::lit(1e-10);
    let rank = sv.iter().filter(|&&s| s > tol).count();
    if rank == 0 {
        return Err(Error::ZeroBlock);
    }
    Ok(rank)
}

/// Singular values of a 2x2 matrix, descending.
pub fn singular_values_2x2<T: Real>(m: &CMatrix<T>) -> [T; 2] {
    assert_eq!((m.rows(), m.cols()), (2, 2), "expected a 2x2 block");
    let fro = m.norm_sqr();
    let det = (m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)]).norm();
    let half = T::lit(0.5);
    let disc = (fro * fro * half * half - det * det).max(T::zero()).sqrt();
    let big = (fro * half + disc).max(T::zero());
    let small = (fro * half - disc).max(T::zero());
    [big.sqrt(), small.sqrt()]
}

/// `|<a|b>| / (|a| |b|)`: 1 when the blocks are equal up to a phase.
pub fn collinearity<T: Real>(a: &CMatrix<T>, b: &CMatrix<T>) -> T {
    let na = a.norm_sqr().sqrt();
    let nb = b.norm_sqr().sqrt();
    if na <= T::zero() || nb <= T::zero() {
        return T::zero();
    }
    a.inner(b).norm() / (na * nb)
}

/// Pure components of a two-photon mixture given in the Bell basis
/// (`rho[mu-1][nu-1] = <B^mu|rho|B^nu>`), largest weight first.
pub fn decompose_input<T: Real>(rho: &CMatrix<T>) -> Result<Vec<(T, [Complex<T>; 4])>> {
    if rho.rows() != 4 || rho.cols() != 4 {
        return Err(Error::Domain("input density must be 4x4".into()));
    }
    let tr = rho.trace();
    if (tr.re - T::one()).abs() > T::lit(1e-9) || tr.im.abs() > T::lit(1e-9) {
        return Err(Error::NotNormalized(tr.re.as_f64()));
    }
    let e = hermitian_eigen(rho);
    if e.values.iter().any(|&v| v < T::lit(-1e-10)) {
        return Err(Error::Domain("input density is not positive semidefinite".into()));
    }
    Ok((0..4)
        .filter(|&k| e.values[k] > T::lit(1e-14))
        .map(|k| {
            let v = [
                e.vectors[(0, k)],
                e.vectors[(1, k)],
                e.vectors[(2, k)],
                e.vectors[(3, k)],
            ];
            (e.values[k], v)
        })
        .collect())
}

/// Reference port blocks for each Bell input, written out from the
/// polarization-basis table: `(pair, 2 * block)` for both nonzero pairs.
pub fn reference_blocks<T: Real>(bell: BellState) -> [(PortPair, CMatrix<T>); 2] {
    use BellState::*;
    let i = c(T::zero(), T::one());
    let one = Complex::<T>::one();
    let bell_m = |b: BellState| b.polarization_block::<T>();
    // (pair, coefficient on even Bell, even Bell, coefficient on odd Bell, odd Bell)
    let combo =
        |ce: Complex<T>, e: BellState, co: Complex<T>, o: BellState| bell_m(e).scale(ce).add(&bell_m(o).scale(co));
    match bell {
        PhiPlus => [
            (PortPair::KR, combo(-one, PhiPlus, i, PsiMinus)),
            (PortPair::RK, combo(-one, PhiPlus, -i, PsiMinus)),
        ],
        PhiMinus => [
            (PortPair::KK, combo(one, PhiMinus, i, PsiPlus)),
            (PortPair::RR, combo(one, PhiMinus, -i, PsiPlus)),
        ],
        PsiPlus => [
            (PortPair::KK, combo(-i, PhiMinus, one, PsiPlus)),
            (PortPair::RR, combo(i, PhiMinus, one, PsiPlus)),
        ],
        PsiMinus => [
            (PortPair::KR, combo(-i, PhiPlus, -one, PsiMinus)),
            (PortPair::RK, combo(i, PhiPlus, -one, PsiMinus)),
        ],
    }
}

/// One named numerical check of the circuit.
#[derive(Debug, Clone)]
pub struct CircuitCheck {
    pub name: String,
    pub residual: f64,
}

impl CircuitCheck {
    pub fn passed(&self, tol: f64) -> bool {
        self.residual < tol
    }
}

/// Row of the per-Bell-input block table.
#[derive(Debug, Clone)]
pub struct BlockRow {
    pub input: BellState,
    pub pair: PortPair,
    pub probability: f64,
    pub schmidt_rank: usize,
    pub even_weight: f64,
    pub odd_weight: f64,
    /// `[HH, HV, VH, VV]` amplitudes.
    pub amplitudes: [Complex<f64>; 4],
}

#[derive(Debug, Clone)]
pub struct CircuitReport {
    pub checks: Vec<CircuitCheck>,
    pub blocks: Vec<BlockRow>,
}

impl CircuitReport {
    pub fn failures(&self, tol: f64) -> Vec<&CircuitCheck> {
        self.checks.iter().filter(|c| !c.passed(tol)).collect()
    }
}

/// Runs the invariant suite of the circuit on the given unitaries.
pub fn verify_circuit<T: Real>(unitaries: &[LocalUnitary<T>; 4]) -> Result<CircuitReport> {
    let mut checks = Vec::new();
    let mut blocks = Vec::new();
    for u in unitaries {
        checks.push(CircuitCheck {
            name: format!("unitarity {}", u.name),
            residual: u.unitarity_residual().as_f64(),
        });
    }
    let outputs: Vec<ModeMatrix<T>> = BellState::ALL
        .iter()
        .map(|b| full_transform_with(&bell_to_whichpath(b.index())?, unitaries))
        .collect::<Result<_>>()?;

    for (bell, out) in BellState::ALL.iter().zip(&outputs) {
        let out_norm = (out.norm_sqr() - T::one()).abs().as_f64();
        checks.push(CircuitCheck {
            name: format!("{bell}: norm preserved"),
            residual: out_norm,
        });
        checks.push(CircuitCheck {
            name: format!("{bell}: support on tracks 3..6"),
            residual: out.max_outside(&[3, 4, 5, 6], &[3, 4, 5, 6]).as_f64(),
        });
        let reference = reference_blocks::<T>(*bell);
        for pair in PortPair::ALL {
            let blk = project_port_pair(out, pair);
            let expected = reference
                .iter()
                .find(|(p, _)| *p == pair)
                .map(|(_, m)| m.scale(cr(T::lit(0.5))))
                .unwrap_or_else(|| CMatrix::zeros(2, 2));
            checks.push(CircuitCheck {
                name: format!("{bell} -> {pair}: block matches table"),
                residual: blk.amplitudes.sub(&expected).max_abs().as_f64(),
            });
            if blk.probability > T::lit(1e-12) {
                let (even, odd) = blk.parity_weights();
                let rank = schmidt_rank(&blk.amplitudes)?;
                checks.push(CircuitCheck {
                    name: format!("{bell} -> {pair}: separable"),
                    residual: singular_values_2x2(&blk.amplitudes)[1].as_f64(),
                });
                checks.push(CircuitCheck {
                    name: format!("{bell} -> {pair}: parity split 1/4 + 1/4"),
                    residual: ((even - T::lit(0.25)).abs() + (odd - T::lit(0.25)).abs()).as_f64(),
                });
                let a = &blk.amplitudes;
                let cf = |z: Complex<T>| Complex::new(z.re.as_f64(), z.im.as_f64());
                blocks.push(BlockRow {
                    input: *bell,
                    pair,
                    probability: blk.probability.as_f64(),
                    schmidt_rank: rank,
                    even_weight: even.as_f64(),
                    odd_weight: odd.as_f64(),
                    amplitudes: [cf(a[(0, 0)]), cf(a[(0, 1)]), cf(a[(1, 0)]), cf(a[(1, 1)])],
                });
            }
        }
    }

    // 1 <-> 2 relabeling: B1, B3 invariant, B2, B4 change sign
    for (bell, out) in BellState::ALL.iter().zip(&outputs) {
        let swapped = full_transform_with(&bell_to_whichpath::<T>(bell.index())?.swap_paths_12(), unitaries)?;
        let sign = if matches!(bell, BellState::PhiPlus | BellState::PsiPlus) {
            T::one()
        } else {
            -T::one()
        };
        checks.push(CircuitCheck {
            name: format!("{bell}: path-permutation symmetry"),
            residual: swapped.0.sub(&out.0.scale(cr(sign))).max_abs().as_f64(),
        });
    }
    Ok(CircuitReport { checks, blocks })
}
