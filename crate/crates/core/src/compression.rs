//! Column-wise Tucker compression of a coupling matrix.
//!
//! Each of the `m` columns is split into its `q` component blocks, every
//! block is reshaped to the voxel grid and compressed independently with
//! truncated HOSVD. Columns are streamed: at most one dense column per
//! worker is alive at any time.

use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::kernels::{assemble_component, full_matrix_bytes, SceneSpec};
use crate::tensor::{hosvd_slice, TuckerTensor};

type C64 = Complex64;

/// Kernel id written to containers that were not produced from a scene.
pub const KERNEL_ID_NONE: u8 = u8::MAX;

/// Position of one coupling-matrix row: voxel `(f1, f2, f3)` and field
/// component.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct VoxelIndex {
    pub f1: usize,
    pub f2: usize,
    pub f3: usize,
    pub component: usize,
}

pub fn row_to_index(row: usize, dims: [usize; 3], q: usize) -> Result<VoxelIndex> {
    let [n1, n2, n3] = dims;
    let n_v = n1 * n2 * n3;
    if row >= q * n_v {
        return Err(Error::contract(format!(
            "row {row} out of range for {q} components of {dims:?} voxels"
        )));
    }
    let (component, v) = (row / n_v, row % n_v);
    Ok(VoxelIndex {
        f1: v % n1,
        f2: (v / n1) % n2,
        f3: v / (n1 * n2),
        component,
    })
}

pub fn index_to_row(idx: VoxelIndex, dims: [usize; 3], q: usize) -> Result<usize> {
    let [n1, n2, n3] = dims;
    if idx.f1 >= n1 || idx.f2 >= n2 || idx.f3 >= n3 || idx.component >= q {
        return Err(Error::contract(format!(
            "{idx:?} out of range for dims {dims:?}, q = {q}"
        )));
    }
    Ok(idx.component * n1 * n2 * n3 + idx.f1 + n1 * (idx.f2 + n2 * idx.f3))
}

/// `ncols` columns, each stored as `q` Tucker tensors over a common grid.
/// This is the compressed form shared by the coupling matrix and by the
/// `U` factor of a cross approximation.
#[derive(Clone, Debug, PartialEq)]
pub struct TuckerColumns {
    dims: [usize; 3],
    q: usize,
    columns: Vec<Vec<TuckerTensor>>,
}

impl TuckerColumns {
    pub fn new(dims: [usize; 3], q: usize, columns: Vec<Vec<TuckerTensor>>) -> Result<Self> {
        if q == 0 || dims.contains(&0) {
            return Err(Error::contract(format!(
                "invalid layout: dims {dims:?}, q = {q}"
            )));
        }
        for (j, col) in columns.iter().enumerate() {
            if col.len() != q {
                return Err(Error::contract(format!(
                    "column {j} has {} components, expected {q}",
                    col.len()
                )));
            }
            if let Some(t) = col.iter().find(|t| t.dims() != dims) {
                return Err(Error::contract(format!(
                    "column {j} holds a tensor of dims {:?}, expected {dims:?}",
                    t.dims()
                )));
            }
        }
        Ok(TuckerColumns { dims, q, columns })
    }

    pub fn empty(dims: [usize; 3], q: usize) -> Self {
        TuckerColumns {
            dims,
            q,
            columns: Vec::new(),
        }
    }

    pub(crate) fn push(&mut self, column: Vec<TuckerTensor>) {
        debug_assert_eq!(column.len(), self.q);
        self.columns.push(column);
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn n_voxels(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn n_rows(&self) -> usize {
        self.q * self.n_voxels()
    }

    pub fn ncols(&self) -> usize {
        self.columns.len()
    }

    pub fn column(&self, j: usize) -> &[TuckerTensor] {
        &self.columns[j]
    }

    pub fn columns(&self) -> &[Vec<TuckerTensor>] {
        &self.columns
    }

    pub fn tensors(&self) -> impl Iterator<Item = &TuckerTensor> {
        self.columns.iter().flatten()
    }

    /// Column `j` decompressed and flattened component-major.
    pub fn decompress_column(&self, j: usize) -> Vec<C64> {
        let mut out = Vec::with_capacity(self.n_rows());
        for t in &self.columns[j] {
            out.extend_from_slice(t.reconstruct().as_slice());
        }
        out
    }

    pub fn stored_scalars(&self) -> u64 {
        self.tensors().map(|t| t.stored_scalars() as u64).sum()
    }

    pub fn max_rank(&self) -> usize {
        self.tensors()
            .map(TuckerTensor::max_rank)
            .max()
            .unwrap_or(0)
    }

    pub fn mean_rank(&self) -> f64 {
        let (sum, n) = self
            .tensors()
            .flat_map(|t| t.ranks())
            .fold((0usize, 0usize), |(s, n), r| (s + r, n + 1));
        if n == 0 {
            0.0
        } else {
            sum as f64 / n as f64
        }
    }
}

/// Provenance recorded alongside a compressed matrix.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CouplingMeta {
    /// [`crate::kernels::Operator::id`], or [`KERNEL_ID_NONE`].
    pub kernel_id: u8,
    pub k0: f64,
    /// HOSVD tolerance the tensors were truncated at.
    pub eps: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CompressedCoupling {
    pub meta: CouplingMeta,
    pub columns: TuckerColumns,
}

impl CompressedCoupling {
    pub fn dims(&self) -> [usize; 3] {
        self.columns.dims()
    }

    pub fn q(&self) -> usize {
        self.columns.q()
    }

    pub fn m(&self) -> usize {
        self.columns.ncols()
    }

    pub fn n_rows(&self) -> usize {
        self.columns.n_rows()
    }
}

pub fn compress_matrix(scene: &SceneSpec, eps: f64) -> Result<CompressedCoupling> {
    compress_matrix_with(scene, eps, &Exec::default())
}

/// Assembles and compresses the coupling matrix of `scene` column by column.
///
/// Each worker holds one grid-shaped component block and the HOSVD
/// temporaries of that block, at most `(q + 1) n_v` scalars besides the
/// compressed output.
pub fn compress_matrix_with(
    scene: &SceneSpec,
    eps: f64,
    exec: &Exec,
) -> Result<CompressedCoupling> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::contract(format!(
            "compression tolerance must lie in (0, 1), got {eps}"
        )));
    }
    let dims = scene.grid.dims();
    let columns = exec.map(scene.m(), |j| {
        let compress = || -> Result<Vec<TuckerTensor>> {
            // One component block alive at a time keeps the working set
            // near two grid tensors.
            (0..scene.q())
                .map(|c| hosvd_slice(dims, &assemble_component(scene, j, c)?, eps))
                .collect()
        };
        compress().map_err(|e| e.in_column(j))
    });
    let columns = columns.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(CompressedCoupling {
        meta: CouplingMeta {
            kernel_id: scene.kernel.operator.id(),
            k0: scene.kernel.k0,
            eps,
        },
        columns: TuckerColumns::new(dims, scene.q(), columns)?,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MemoryReport {
    pub compressed_bytes: u64,
    pub full_bytes: u64,
    pub factor: f64,
    pub max_rank: usize,
}

/// Memory of the compressed matrix against its dense counterpart, both
/// counted at 16 bytes per complex scalar.
pub fn memory_report(cc: &CompressedCoupling) -> MemoryReport {
    let compressed_bytes = 16 * cc.columns.stored_scalars();
    let full_bytes = full_matrix_bytes(cc.q(), cc.columns.n_voxels(), cc.m());
    MemoryReport {
        compressed_bytes,
        full_bytes,
        factor: full_bytes as f64 / compressed_bytes as f64,
        max_rank: cc.columns.max_rank(),
    }
}
