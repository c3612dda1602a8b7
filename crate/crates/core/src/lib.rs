//! Simulation of the qubus quantum repeater: exact hybrid photon/coherent
//! state algebra, the local parity circuit, elementary-link generation and
//! entanglement connection over a repeater chain.

pub mod chain;
pub mod cmatrix;
pub mod error;
pub mod hybrid;
pub mod linalg;
pub mod link;
pub mod optics;
pub mod parity;
pub mod qnd;
pub mod scalar;

pub use chain::{mc_distribute, ChainParams, EventLog, McResult, MemoryMode};
pub use cmatrix::CMatrix;
pub use error::{Error, Result};
pub use hybrid::{
    coherent_overlap, fidelity_with, loss_channel, BranchTerm, BranchedDensity, BusId, BusKernel, CoherentLabel,
    HybridKet, ModeRegistry, PhotonId, PhotonPattern,
};
pub use link::{LinkInput, LinkOutcome, LinkParams, LinkSimulator};
pub use optics::{beam_split, click_probability, phase_shift, xpm, DetectorParams};
pub use parity::{BellState, LocalUnitary, ModeMatrix, Port, PortPair, Side};
pub use qnd::{MModule, QndParams, SourceState};
pub use scalar::{ComplexAmplitude, Real};

pub use num_complex;

pub type HybridKet64 = HybridKet<f64>;
pub type BranchedDensity64 = BranchedDensity<f64>;
pub type ModeMatrix64 = ModeMatrix<f64>;
pub type DetectorParams64 = DetectorParams<f64>;
pub type QndParams64 = QndParams<f64>;
pub type LinkParams64 = LinkParams<f64>;
pub type ChainParams64 = ChainParams<f64>;
