//! Shared geometric types and file formats: point clouds, pinhole cameras,
//! float images, PLY and PNG I/O.

mod camera;
mod image;
mod ply;
mod point_cloud;

pub use camera::{Camera, CameraJson, Projection};
pub use image::Image;
pub use ply::{load_ply, parse_ply, save_ply, write_ply, PlyFormat};
pub use point_cloud::PointCloud;
