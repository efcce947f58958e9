//! Driver, observation, hypsography and field I/O plus feature assembly.

pub mod csvio;
pub mod features;
pub mod field;
pub mod hypso;
pub mod meteo;
pub mod obs;
pub mod split;

pub use features::{build_features, DayOfYear, FeatureMatrix, FeatureSpec, NormStats};
pub use field::{load_field, save_field, TemperatureField};
pub use hypso::{load_hypsography, save_hypsography};
pub use meteo::{load_drivers, save_drivers, DailyMeteo, MeteoSeries, DEFAULT_PRESSURE};
pub use obs::{load_observations, sample_observations, save_observations, Observation, ObservationSet, Source};
pub use split::{DateRange, SplitConfig, TimeSplit};
