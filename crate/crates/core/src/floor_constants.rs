//! Eigenvalue floor constants, produced by `examples/calibrate_floors.rs`.
//! Each is half the smallest observed ratio `eta_min / shape` over the
//! calibration designs, stored as a natural logarithm.

pub const LN_C_LAPLACE: f64 = 4.148567;
pub const LN_C_TENSOR_LAPLACE: f64 = 8.241090;
pub const LN_C_GAUSSIAN: f64 = 5.465307;
