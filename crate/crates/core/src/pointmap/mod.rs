//! ICP localization against a sparse voxel point map, intra-frame motion
//! correction and map update.

mod icp;
mod map;
mod slam;

pub use icp::{icp_align, undistort_frame, IcpConfig, IcpResult, SamplingMode};
pub use map::{update_map, MapCloud, MapPoint, DL_MAP};
pub(crate) use map::ByteReader;
pub(crate) use slam::aligned_points_and_normals;
pub use slam::{aligned_frame, run_slam, SlamConfig, SlamOutput};
