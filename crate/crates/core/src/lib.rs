//! Two-stream (RGB + optical flow) video accident classifier: a 3D-conv
//! inception backbone feeding stacked ConvLSTM layers, trained and evaluated
//! on windowed video clips. All kernels and their gradients are hand-written.

pub mod backbone;
pub mod bench;
pub mod config;
pub mod convlstm;
pub mod data;
pub mod detect;
pub mod error;
pub mod flow;
pub mod gradcheck;
pub mod head;
pub mod layers;
pub mod metrics;
pub mod model;
pub mod ops;
pub mod param;
pub mod synthetic;
pub mod tensor;
pub mod tensor_file;
pub mod train;
pub mod video;

pub use backbone::{BackboneConfig, Stream};
pub use config::{ModelConfig, VARIANTS};
pub use data::{Manifest, ManifestRow, Source, Split};
pub use detect::{DetectionResult, StreamDetector, WindowRecord};
pub use error::{Error, Result};
pub use flow::{FlowField, HornSchunck};
pub use metrics::MetricsReport;
pub use model::{Model, Prediction};
pub use ops::Label;
pub use param::Parameter;
pub use tensor::{Scalar, Tensor};
pub use train::{History, OptimizerKind, Sample, TrainConfig};
pub use video::{FrameSequence, PipelineConfig};
