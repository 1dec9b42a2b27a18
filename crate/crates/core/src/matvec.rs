//! Products with the compressed coupling matrix.
//!
//! The forward product `Y = Z X` walks the columns of `Z`, decompresses the
//! `q` tensors of column `j` and adds `Z[:, j] X[j, :]` into `Y`; the dense
//! matrix never exists. The adjoint `Y = Z* Φ` decompresses column `j` and
//! takes its conjugated inner product with every column of `Φ`, giving row
//! `j` of `Y`. Both accept any number `p` of right-hand sides.
//!
//! With more than one worker the forward product keeps one accumulator per
//! rayon split and sums them at the end, so results agree with the
//! sequential path only to rounding.

use std::ops::Add;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::aca::{ACAFactors, UStore};
use crate::compression::{CompressedCoupling, TuckerColumns};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::kernels::{assemble_full_with, SceneSpec};

type C64 = Complex64;

/// Column-major block of `p` vectors.
pub type MultiVector = DMatrix<C64>;

/// Operation counts gathered during a compressed product.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ProductStats {
    /// Complex multiply-adds spent decompressing tensors.
    pub decompress_ops: u64,
    /// Complex multiply-adds spent accumulating into the output.
    pub accumulate_ops: u64,
    /// Tensors decompressed.
    pub tensors: u64,
}

impl Add for ProductStats {
    type Output = ProductStats;

    fn add(self, o: ProductStats) -> ProductStats {
        ProductStats {
            decompress_ops: self.decompress_ops + o.decompress_ops,
            accumulate_ops: self.accumulate_ops + o.accumulate_ops,
            tensors: self.tensors + o.tensors,
        }
    }
}

pub fn forward(cc: &CompressedCoupling, x: &MultiVector) -> Result<MultiVector> {
    forward_with(cc, x, &Exec::default())
}

pub fn forward_with(cc: &CompressedCoupling, x: &MultiVector, exec: &Exec) -> Result<MultiVector> {
    Ok(forward_columns(&cc.columns, x, exec)?.0)
}

pub fn adjoint(cc: &CompressedCoupling, phi: &MultiVector) -> Result<MultiVector> {
    adjoint_with(cc, phi, &Exec::default())
}

pub fn adjoint_with(
    cc: &CompressedCoupling,
    phi: &MultiVector,
    exec: &Exec,
) -> Result<MultiVector> {
    Ok(adjoint_columns(&cc.columns, phi, exec)?.0)
}

/// `Y = C X` for a Tucker-compressed column set `C` (`q n_v x ncols`).
pub fn forward_columns(
    cols: &TuckerColumns,
    x: &MultiVector,
    exec: &Exec,
) -> Result<(MultiVector, ProductStats)> {
    if x.nrows() != cols.ncols() {
        return Err(Error::contract(format!(
            "forward product: X has {} rows but the matrix has {} columns",
            x.nrows(),
            cols.ncols()
        )));
    }
    let rows = cols.n_rows();
    let n_v = cols.n_voxels();
    let p = x.ncols();

    let init = || (vec![C64::new(0.0, 0.0); rows * p], ProductStats::default());
    let step = |(mut y, mut stats): (Vec<C64>, ProductStats), j: usize| {
        for (k, t) in cols.column(j).iter().enumerate() {
            let z = t.reconstruct();
            stats.decompress_ops += t.reconstruct_ops();
            stats.tensors += 1;
            for c in 0..p {
                let xj = x[(j, c)];
                let start = c * rows + k * n_v;
                for (yv, zv) in y[start..start + n_v].iter_mut().zip(z.as_slice()) {
                    *yv += zv * xj;
                }
            }
            stats.accumulate_ops += (n_v * p) as u64;
        }
        (y, stats)
    };
    let merge = |(mut a, sa): (Vec<C64>, ProductStats), (b, sb): (Vec<C64>, ProductStats)| {
        for (u, v) in a.iter_mut().zip(&b) {
            *u += v;
        }
        (a, sa + sb)
    };
    let (y, stats) = exec.fold(cols.ncols(), init, step, merge);
    Ok((DMatrix::from_vec(rows, p, y), stats))
}

/// `Y = C* Φ` for a Tucker-compressed column set `C`.
pub fn adjoint_columns(
    cols: &TuckerColumns,
    phi: &MultiVector,
    exec: &Exec,
) -> Result<(MultiVector, ProductStats)> {
    let rows = cols.n_rows();
    if phi.nrows() != rows {
        return Err(Error::contract(format!(
            "adjoint product: Φ has {} rows but the matrix has {rows}",
            phi.nrows()
        )));
    }
    let n_v = cols.n_voxels();
    let p = phi.ncols();
    let phi_data = phi.as_slice();

    let per_column = exec.map(cols.ncols(), |j| {
        let mut out = vec![C64::new(0.0, 0.0); p];
        let mut stats = ProductStats::default();
        for (k, t) in cols.column(j).iter().enumerate() {
            let z = t.reconstruct();
            stats.decompress_ops += t.reconstruct_ops();
            stats.tensors += 1;
            for (c, o) in out.iter_mut().enumerate() {
                let start = c * rows + k * n_v;
                let mut s = C64::new(0.0, 0.0);
                for (zv, fv) in z.as_slice().iter().zip(&phi_data[start..start + n_v]) {
                    s += zv.conj() * fv;
                }
                *o += s;
            }
            stats.accumulate_ops += (n_v * p) as u64;
        }
        (out, stats)
    });

    let m = cols.ncols();
    let mut y = DMatrix::zeros(m, p);
    let mut stats = ProductStats::default();
    for (j, (row, s)) in per_column.into_iter().enumerate() {
        for (c, v) in row.into_iter().enumerate() {
            y[(j, c)] = v;
        }
        stats = stats + s;
    }
    Ok((y, stats))
}

pub fn aca_forward(fac: &ACAFactors, x: &MultiVector) -> Result<MultiVector> {
    aca_forward_with(fac, x, &Exec::default())
}

/// `U (V* X)`, running the compressed forward product on `U` when it is
/// Tucker-compressed.
pub fn aca_forward_with(fac: &ACAFactors, x: &MultiVector, exec: &Exec) -> Result<MultiVector> {
    if x.nrows() != fac.n_cols() {
        return Err(Error::contract(format!(
            "ACA forward product: X has {} rows, expected {}",
            x.nrows(),
            fac.n_cols()
        )));
    }
    let w = fac.v().adjoint() * x;
    match fac.u() {
        UStore::Dense(u) => Ok(u * w),
        UStore::Tucker(cols) => Ok(forward_columns(cols, &w, exec)?.0),
    }
}

pub fn aca_adjoint(fac: &ACAFactors, phi: &MultiVector) -> Result<MultiVector> {
    aca_adjoint_with(fac, phi, &Exec::default())
}

/// `V (U* Φ)`.
pub fn aca_adjoint_with(fac: &ACAFactors, phi: &MultiVector, exec: &Exec) -> Result<MultiVector> {
    if phi.nrows() != fac.n_rows() {
        return Err(Error::contract(format!(
            "ACA adjoint product: Φ has {} rows, expected {}",
            phi.nrows(),
            fac.n_rows()
        )));
    }
    let z = match fac.u() {
        UStore::Dense(u) => u.adjoint() * phi,
        UStore::Tucker(cols) => adjoint_columns(cols, phi, exec)?.0,
    };
    Ok(fac.v() * z)
}

/// Ground-truth `Z X` through the dense matrix (subject to the memory cap).
pub fn dense_forward(scene: &SceneSpec, x: &MultiVector, exec: &Exec) -> Result<MultiVector> {
    if x.nrows() != scene.m() {
        return Err(Error::contract(format!(
            "dense forward product: X has {} rows, expected {}",
            x.nrows(),
            scene.m()
        )));
    }
    Ok(assemble_full_with(scene, exec)? * x)
}

/// Ground-truth `Z* Φ`.
pub fn dense_adjoint(scene: &SceneSpec, phi: &MultiVector, exec: &Exec) -> Result<MultiVector> {
    if phi.nrows() != scene.n_rows() {
        return Err(Error::contract(format!(
            "dense adjoint product: Φ has {} rows, expected {}",
            phi.nrows(),
            scene.n_rows()
        )));
    }
    Ok(assemble_full_with(scene, exec)?.adjoint() * phi)
}

/// `‖a - b‖_F / ‖b‖_F`.
pub fn relative_error(a: &MultiVector, b: &MultiVector) -> f64 {
    (a - b).norm() / b.norm()
}

/// Frobenius inner product `⟨a, b⟩ = Σ conj(a) b`.
pub fn inner(a: &MultiVector, b: &MultiVector) -> C64 {
    a.iter().zip(b.iter()).map(|(x, y)| x.conj() * y).sum()
}
