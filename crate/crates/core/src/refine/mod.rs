pub mod attention;
pub mod encoding;
pub mod layers;
pub mod upsample;

pub use attention::{cg_attention, dot_product_attention};
pub use encoding::{positional_decode, positional_encode, EncodedGeometryMap, EncodingConfig};
pub use layers::Tensor;
pub use upsample::{convex_upsample, UpsampleWeights, MASK_CHANNELS, UPSAMPLE};
pub mod net;
pub use net::{geometry_net_forward, AttentionMode, GeometryNet, NetOutput, RelPoseNet};
pub mod pose;
pub use pose::{
    estimate_query_geometry, refine_pose, relative_pose_step, Estimator, GeometrySource, QueryView, RefineNets,
    RefineTrace, RefinementConfig,
};
pub mod train;
pub use train::{micro_set, train_geo_head, MicroTrainConfig};
