pub mod correlation;
pub mod estimate;
pub mod features;
pub mod field;
pub mod gt;
pub mod warp;

pub use correlation::{correlate, CorrelationMode, CorrelationVolume};
pub use estimate::{estimate_flow, estimate_flow_detailed, match_pyramids, polish, CellFlow, FlowConfig};
pub use features::{build_feature_pyramid, FeatureMap, FeaturePyramid, FEATURE_DIM};
pub use field::FlowField;
pub use gt::gt_flow_from_geometry;
pub use warp::{forward_backward_consistency, ErrorMap, Warp};
