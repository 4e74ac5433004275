//! Software rasterizer for reference images and geometry maps.

pub mod crop;
pub mod geomap;
pub mod image;
pub mod raster;

pub use crop::{crop_and_resize, mask_crop_box, object_bbox, BBox, CropTransform};
pub use geomap::GeometryMap;
pub use image::ImageBuffer;
pub use raster::{render, render_geometry, Shading};
