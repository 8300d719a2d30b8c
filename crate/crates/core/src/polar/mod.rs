//! Classical polar coding: kernels, construction, encoding, SC and ML decoding.

mod construct;
mod encode;
mod kernel;
mod layout;
mod ml;
mod sc;

pub use construct::{bhattacharyya, construct_reliability, OrderSource, ReliabilityOrder, DEFAULT_DESIGN_ERASURE};
pub use encode::{embed_bits, plotkin_transform, polar_encode};
pub use kernel::{bipolar_plotkin_features, kernel_matrix, KernelMatrix};
pub use layout::{CodeLayout, NodeSpec};
pub use ml::{ml_decode, MlDecoder, ML_MAX_K};
pub use sc::{awgn_llrs, f_exact, f_minsum, g_update, sc_decode, ScMode, ScOutput};
