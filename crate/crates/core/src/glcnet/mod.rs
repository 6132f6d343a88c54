//! The pretext objective: global style contrast on encoder features, local
//! matching contrast on decoder features, and the pretraining loop.

pub mod descriptor;
pub mod losses;
pub mod method;
pub mod regions;
pub mod train;

pub use descriptor::{extract_style, AvgPoolDescriptor, DescriptorRegistry, GlobalDescriptor, StyleDescriptor, StyleMode, StyleVector};
pub use losses::{global_style_loss, local_matching_loss, total_loss, GlobalLoss, HeadRef, LocalLoss};
pub use method::{Ablation, FlagMethod, GLCNetConfig, MethodRegistry, PretextMethod, ABLATION_METHODS};
pub use regions::{extract_local_features, local_features_backward, select_local_regions, LocalRegionSpec, Rect, RegionParams};
pub use train::{loss_csv, role_rng, run_pretraining, write_loss_logs, LossReport, PretrainOptions, PretrainOutcome, Pretrainer, StepOutput};
