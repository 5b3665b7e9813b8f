//! Broken null geodesics, Fermi charts along them, boundary convexity,
//! reachable sets and covector selection.

mod chart;
mod convexity;
mod geodesic;
mod reach;
mod select;

pub use chart::{ChartNode, FermiChart, FermiChartOpts, conjugate_point_scan, ConjugateScan, TAU_CONJ};
pub use convexity::{null_convexity_scan, ConvexityReport};
pub use geodesic::{
    null_velocity, reflect_vector, shoot_null_geodesic, BrokenNullGeodesic, EndReason, GeoSample,
    ReflectionEvent, Segment, ShootOpts,
};
pub use reach::{reachable_set, ReachableSet, ReachOpts};
pub use select::{select_beam_covectors, BeamDirection, CovectorSelection, SelectOpts};
