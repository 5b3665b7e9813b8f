//! Gaussian beam quasimodes along broken null geodesics.

mod hierarchy;
mod quasimode;
mod reflect;
mod remainder;
mod riccati;

pub use hierarchy::{
    build_amplitude_jet, build_amplitude_jet_with, build_phase_jet, build_phase_jet_with,
    eikonal_defect_profile, im_phase_ratio, transport_defect_profile, AmplitudeJet,
    DefectProfile, PhaseJet,
};
pub use reflect::{beam_value, boundary_trace_decay, build_reflected_beam, ReflectedBeam, WallFrame};
pub(crate) use quasimode::locate;
pub use quasimode::{
    assemble_quasimode, cutoff, residual_decay, residual_field, transverse_width, DecayReport,
    Quasimode,
};
pub use remainder::{
    corrected_field, make_remainder, remainder_decay, sup_diff, RemainderReport, RemainderSource,
};
pub use riccati::{continuous_inv_sqrt, solve_riccati, RiccatiSolution};
