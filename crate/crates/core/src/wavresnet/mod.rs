//! Miniature wavelet residual network operating on directional subband
//! coefficients, with hand-written reverse-mode gradients and SGD training.

pub mod gradcheck;
pub mod infer;
pub mod network;
pub mod spectrum;
pub mod tensor;
pub mod train;

pub use gradcheck::{gradient_check, GradCheckConfig, GradCheckReport};
pub use infer::{denoise_stack, infer_image, NetworkDenoiser, DEFAULT_STRIDE};
pub use network::{ArchConfig, ForwardCache, Layout, Mode, Network, ParamEntry};
pub use spectrum::{feature_spectrum, module_spectra, tail_mass, SPECTRUM_WINDOW};
pub use tensor::Tensor;
pub use train::{
    train, CoefficientPair, SampleSource, SourceCounts, StageConfig, StageKind, StepRecord,
    TrainConfig, TrainReport, TrainState, Trainer, TrainingSample,
};
