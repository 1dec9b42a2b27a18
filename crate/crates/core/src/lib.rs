//! Tucker-compressed volume-surface coupling matrices.
//!
//! A coupling matrix maps `m` surface edge currents to the `q = 3` field
//! components on every voxel of an `n1 x n2 x n3` grid. Each column is the
//! field of one source and is stored as `q` HOSVD-truncated Tucker tensors.
//! The matrix can instead be approximated by cross approximation, whose
//! left factor is compressed the same way.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod aca;
pub mod compression;
pub mod error;
pub mod exec;
pub mod experiments;
pub mod io;
pub mod kernels;
pub mod matvec;
pub mod tensor;

pub use aca::{
    aca_dense, row_of_compressed_u, tucker_aca, tucker_aca_scene, tucker_aca_with, ACAFactors,
    AcaOptions, MatrixOracle, UStore,
};
pub use compression::{
    compress_matrix, compress_matrix_with, memory_report, row_to_index, CompressedCoupling,
    MemoryReport, TuckerColumns, VoxelIndex,
};
pub use error::{Error, Result};
pub use exec::Exec;
pub use kernels::{
    assemble_column, assemble_full, EdgeSource, KernelSpec, Operator, Point, SceneSpec, VoxelGrid,
};
pub use tensor::{hosvd, mode_product, Tensor3, TuckerTensor};

/// Complex scalar used throughout.
pub type C64 = num_complex::Complex64;
