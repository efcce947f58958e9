//! Lake geometry, synthetic drivers and the energy-closing teacher simulator.

pub mod drivers;
pub mod geometry;
mod lake;

pub use drivers::{default_start, synth_drivers, synth_drivers_from, Climate, ClimateParams};
pub use geometry::{interpolate_hypsography, make_geometry, LakeGeometry, Shape, LAYER_THICKNESS};
pub use lake::{
    attenuate_shortwave, freeze_up, shortwave_shares, simulate, SimConfig, SimOutput, KW_CLEAR, KW_DARK, KW_NORMAL,
    TRUTH_DIFFUSIVITY_FACTOR, TRUTH_KW_FACTOR, TRUTH_WIND_FACTOR,
};
