//! Spatial evaluation: wideband MUSIC spectra, SI-SNR and the ITD/IPD/ILD
//! cue-preservation metrics.

mod cues;
mod metrics;
mod music;

pub use cues::{cue_deltas, gcc_phat_itd, gcc_phat_lag, CueReport, PairCues, ACTIVITY_RANGE_DB, CUE_PAIRS, MAX_ITD_SECONDS};
pub use metrics::{si_snr, si_snr_with_grad, SI_SNR_EPS};
pub use music::{band_covariances, music_from_covariances, music_spectrum, spatial_mse, MusicConfig, SpatialSpectrum};
