//! Gaussian rate-distortion by prediction: reverse water-filling, the
//! predictive test channel, entropy-coded dithered quantization and the
//! dual decision-feedback equalizer.

// `!(x > 0)` is the NaN-rejecting form.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod dfe;
pub mod ecdq;
pub mod error;
pub mod filters;
pub mod num;
pub mod prediction;
pub mod spectra;
pub mod stats;
pub mod testchannel;
pub mod verify;
pub mod waterfill;

pub use error::{Error, Result};
pub use num::Real;

pub type PowerSpectrum64 = spectra::PowerSpectrum<f64>;
pub type PowerSpectrum32 = spectra::PowerSpectrum<f32>;
pub type WaterFillSolution64 = waterfill::WaterFillSolution<f64>;
pub type WaterFillSolution32 = waterfill::WaterFillSolution<f32>;
pub type FilterPair64 = filters::FilterPair<f64>;
pub type FilterPair32 = filters::FilterPair<f32>;
pub type PredictorCoeffs64 = prediction::PredictorCoeffs<f64>;
pub type PredictorCoeffs32 = prediction::PredictorCoeffs<f32>;
pub type SimConfig64 = testchannel::SimConfig<f64>;
pub type SimConfig32 = testchannel::SimConfig<f32>;
pub type SimResult64 = testchannel::SimResult<f64>;
pub type SimResult32 = testchannel::SimResult<f32>;
pub type Lattice64 = ecdq::Lattice<f64>;
pub type Lattice32 = ecdq::Lattice<f32>;
pub type EcdqRun64 = ecdq::EcdqRun<f64>;
pub type VqDpcmReport64 = ecdq::VqDpcmReport<f64>;
pub type ChannelModel64 = dfe::ChannelModel<f64>;
pub type ChannelModel32 = dfe::ChannelModel<f32>;
pub type DfeConfig64 = dfe::DfeConfig<f64>;
pub type DfeSolution64 = dfe::DfeSolution<f64>;
