pub mod datagen;
pub mod floor_constants;
pub mod kernel_gd;
pub mod kernels;
pub mod mlp;
pub mod noise;
pub mod points;
pub mod quadrature;
pub mod schedules;
pub mod smoothing;
pub mod special;
