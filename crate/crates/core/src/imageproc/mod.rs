//! White-box image representations, synthetic frame pairs and Netpbm I/O.

mod affine;
mod guided;
mod image;
mod pnm;
mod segment;

pub use affine::{apply_affine, random_affine_pair, AffinePairSpec, AffineTransform, FramePair};
pub use guided::{guided_filter, GuidedFilterParams};
pub use image::{to_grayscale, Image, LUMA_WEIGHTS};
pub use pnm::{decode_pnm, encode_pnm, load_image, save_image};
pub use segment::{felzenszwalb_segment, region_color_fill, SegmentLabeling, SegmentParams};
