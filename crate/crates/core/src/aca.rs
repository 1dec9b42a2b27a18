//! Partial-pivot adaptive cross approximation `Z ≈ U V*`.
//!
//! Both variants share one loop. Step `k` takes the residual of pivot row
//! `i`, picks the column `j` of its largest entry, forms
//! `y = conj(r / r_j)` and the residual column `x = Z[:, j] - U V[j, :]*`,
//! and appends `x` to `U` and `y` to `V`. A running estimate `s` of
//! `‖U V*‖_F²` drives the stopping rule `‖x‖ ‖y‖ ≤ eps sqrt(s)`. The next
//! pivot row is the largest entry of `|x|` outside the current row.
//!
//! [`tucker_aca`] stores every new column of `U` as `q` HOSVD-compressed
//! tensors (tolerance `3 eps` by default). Residual rows then need only
//! single-element decompressions, and the residual column and the norm
//! update use the compressed forward and adjoint products, so the only
//! dense storage is one column of the matrix plus one decompressed tensor.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::compression::{row_to_index, TuckerColumns, KERNEL_ID_NONE};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::kernels::{assemble_column_flat, assemble_row, SceneSpec};
use crate::matvec::{adjoint_columns, forward_columns};
use crate::tensor::{hosvd_slice, TuckerTensor, ZERO_NORM};

type C64 = Complex64;

/// HOSVD tolerance used inside [`tucker_aca`], relative to the ACA tolerance.
pub const HOSVD_TOLERANCE_FACTOR: f64 = 3.0;

/// Relative step size treated as an exhausted residual. Such a step is
/// dropped rather than appended.
pub const ROUNDOFF_STEP: f64 = 1e-13;

/// Row and column access to an `m1 x m2` matrix that is never formed.
pub trait MatrixOracle: Sync {
    fn dims(&self) -> (usize, usize);
    fn row(&self, i: usize) -> Result<Vec<C64>>;
    fn col(&self, j: usize) -> Result<Vec<C64>>;
}

impl MatrixOracle for DMatrix<C64> {
    fn dims(&self) -> (usize, usize) {
        self.shape()
    }

    fn row(&self, i: usize) -> Result<Vec<C64>> {
        if i >= self.nrows() {
            return Err(Error::contract(format!("row {i} out of range")));
        }
        Ok(self.row(i).iter().copied().collect())
    }

    fn col(&self, j: usize) -> Result<Vec<C64>> {
        if j >= self.ncols() {
            return Err(Error::contract(format!("column {j} out of range")));
        }
        Ok(self.column(j).as_slice().to_vec())
    }
}

/// Coupling matrix of a scene: columns from [`assemble_column_flat`], rows
/// from direct kernel evaluation of one voxel component against every
/// source.
pub struct CouplingOracle<'a> {
    pub scene: &'a SceneSpec,
}

impl MatrixOracle for CouplingOracle<'_> {
    fn dims(&self) -> (usize, usize) {
        (self.scene.n_rows(), self.scene.m())
    }

    fn row(&self, i: usize) -> Result<Vec<C64>> {
        assemble_row(self.scene, i)
    }

    fn col(&self, j: usize) -> Result<Vec<C64>> {
        assemble_column_flat(self.scene, j).map_err(|e| e.in_column(j))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum UStore {
    Dense(DMatrix<C64>),
    Tucker(TuckerColumns),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ACAFactors {
    u: UStore,
    v: DMatrix<C64>,
    eps: f64,
    /// Kernel provenance for persistence; [`KERNEL_ID_NONE`] if unknown.
    pub kernel_id: u8,
    pub k0: f64,
    /// `‖x‖ ‖y‖ / sqrt(s)` at the last accepted step.
    pub stop_statistic: f64,
    /// True when the stopping rule (or a zero pivot) ended the loop.
    pub converged: bool,
}

impl ACAFactors {
    pub fn from_parts(u: UStore, v: DMatrix<C64>, eps: f64) -> Result<Self> {
        let (rows, rank) = match &u {
            UStore::Dense(u) => u.shape(),
            UStore::Tucker(c) => (c.n_rows(), c.ncols()),
        };
        if v.ncols() != rank {
            return Err(Error::contract(format!(
                "U has {rank} columns but V has {}",
                v.ncols()
            )));
        }
        if rank > rows.min(v.nrows()) {
            return Err(Error::contract(format!(
                "rank {rank} exceeds min({rows}, {})",
                v.nrows()
            )));
        }
        if v.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::Numeric("V holds non-finite entries".into()));
        }
        Ok(ACAFactors {
            u,
            v,
            eps,
            kernel_id: KERNEL_ID_NONE,
            k0: 0.0,
            stop_statistic: 0.0,
            converged: true,
        })
    }

    pub fn rank(&self) -> usize {
        self.v.ncols()
    }

    /// Rows of the approximated matrix (`m1`).
    pub fn n_rows(&self) -> usize {
        match &self.u {
            UStore::Dense(u) => u.nrows(),
            UStore::Tucker(c) => c.n_rows(),
        }
    }

    /// Columns of the approximated matrix (`m2`).
    pub fn n_cols(&self) -> usize {
        self.v.nrows()
    }

    pub fn u(&self) -> &UStore {
        &self.u
    }

    pub fn v(&self) -> &DMatrix<C64> {
        &self.v
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    /// Dense `U`, decompressing if necessary.
    pub fn dense_u(&self) -> DMatrix<C64> {
        match &self.u {
            UStore::Dense(u) => u.clone(),
            UStore::Tucker(c) => {
                let mut data = Vec::with_capacity(c.n_rows() * c.ncols());
                for l in 0..c.ncols() {
                    data.extend(c.decompress_column(l));
                }
                DMatrix::from_vec(c.n_rows(), c.ncols(), data)
            }
        }
    }

    /// `U V*` as a dense matrix (tests and small problems only).
    pub fn to_dense(&self) -> DMatrix<C64> {
        self.dense_u() * self.v.adjoint()
    }

    /// Largest Tucker rank over the compressed `U`, 0 for a dense store.
    pub fn max_tucker_rank(&self) -> usize {
        match &self.u {
            UStore::Dense(_) => 0,
            UStore::Tucker(c) => c.max_rank(),
        }
    }

    /// Stored complex scalars times 16 bytes.
    pub fn stored_bytes(&self) -> u64 {
        let u = match &self.u {
            UStore::Dense(u) => u.len() as u64,
            UStore::Tucker(c) => c.stored_scalars(),
        };
        16 * (u + self.v.len() as u64)
    }
}

#[derive(Clone, Debug)]
pub struct AcaOptions {
    /// HOSVD tolerance = `hosvd_factor * eps` for the compressed variant.
    pub hosvd_factor: f64,
    pub exec: Exec,
}

impl Default for AcaOptions {
    fn default() -> Self {
        AcaOptions {
            hosvd_factor: HOSVD_TOLERANCE_FACTOR,
            exec: Exec::default(),
        }
    }
}

/// Growing `U` factor; the two storage flavours of the same loop.
trait UFactor {
    fn rank(&self) -> usize;
    /// Row `i` of `U`.
    fn row(&self, i: usize) -> Result<Vec<C64>>;
    /// `x -= U w`.
    fn subtract_product(&self, w: &[C64], x: &mut Vec<C64>) -> Result<()>;
    /// `U* x`.
    fn adjoint_apply(&self, x: Vec<C64>) -> Result<(Vec<C64>, Vec<C64>)>;
    fn push(&mut self, x: Vec<C64>) -> Result<()>;
}

struct DenseU {
    rows: usize,
    cols: Vec<Vec<C64>>,
}

impl UFactor for DenseU {
    fn rank(&self) -> usize {
        self.cols.len()
    }

    fn row(&self, i: usize) -> Result<Vec<C64>> {
        Ok(self.cols.iter().map(|c| c[i]).collect())
    }

    fn subtract_product(&self, w: &[C64], x: &mut Vec<C64>) -> Result<()> {
        for (c, wl) in self.cols.iter().zip(w) {
            for (xv, cv) in x.iter_mut().zip(c) {
                *xv -= cv * wl;
            }
        }
        Ok(())
    }

    fn adjoint_apply(&self, x: Vec<C64>) -> Result<(Vec<C64>, Vec<C64>)> {
        let a = self
            .cols
            .iter()
            .map(|c| c.iter().zip(&x).map(|(u, v)| u.conj() * v).sum())
            .collect();
        Ok((a, x))
    }

    fn push(&mut self, x: Vec<C64>) -> Result<()> {
        debug_assert_eq!(x.len(), self.rows);
        self.cols.push(x);
        Ok(())
    }
}

struct CompressedU {
    cols: TuckerColumns,
    hosvd_eps: f64,
    exec: Exec,
}

impl UFactor for CompressedU {
    fn rank(&self) -> usize {
        self.cols.ncols()
    }

    fn row(&self, i: usize) -> Result<Vec<C64>> {
        compressed_row(&self.cols, i)
    }

    fn subtract_product(&self, w: &[C64], x: &mut Vec<C64>) -> Result<()> {
        if self.exec.workers == 1 {
            // Accumulate straight into x: one decompressed tensor at a time.
            let n_v = self.cols.n_voxels();
            for (col, wl) in self.cols.columns().iter().zip(w) {
                for (k, t) in col.iter().enumerate() {
                    let z = t.reconstruct();
                    for (xv, zv) in x[k * n_v..(k + 1) * n_v].iter_mut().zip(z.as_slice()) {
                        *xv -= zv * wl;
                    }
                }
            }
        } else {
            let wm = DMatrix::from_column_slice(w.len(), 1, w);
            let (p, _) = forward_columns(&self.cols, &wm, &self.exec)?;
            for (xv, pv) in x.iter_mut().zip(p.iter()) {
                *xv -= pv;
            }
        }
        Ok(())
    }

    fn adjoint_apply(&self, x: Vec<C64>) -> Result<(Vec<C64>, Vec<C64>)> {
        let xm = DMatrix::from_vec(x.len(), 1, x);
        let (a, _) = adjoint_columns(&self.cols, &xm, &self.exec)?;
        Ok((a.as_slice().to_vec(), xm.data.into()))
    }

    fn push(&mut self, x: Vec<C64>) -> Result<()> {
        let dims = self.cols.dims();
        let n_v = self.cols.n_voxels();
        let mut tensors = Vec::with_capacity(self.cols.q());
        for block in x.chunks_exact(n_v) {
            tensors.push(hosvd_slice(dims, block, self.hosvd_eps)?);
        }
        drop(x);
        self.cols.push(tensors);
        Ok(())
    }
}

/// Row `i` of a Tucker-compressed column set via element-wise decompression.
fn compressed_row(cols: &TuckerColumns, i: usize) -> Result<Vec<C64>> {
    let idx = row_to_index(i, cols.dims(), cols.q())?;
    Ok(cols
        .columns()
        .iter()
        .map(|c| c[idx.component].element_unchecked(idx.f1, idx.f2, idx.f3))
        .collect())
}

fn argmax_abs(v: &[C64]) -> (usize, f64) {
    let mut best = (0, -1.0);
    for (i, z) in v.iter().enumerate() {
        let a = z.norm_sqr();
        if a > best.1 {
            best = (i, a);
        }
    }
    (best.0, best.1.max(0.0).sqrt())
}

fn vec_norm(v: &[C64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

struct LoopOutcome {
    v: Vec<Vec<C64>>,
    stop_statistic: f64,
    converged: bool,
}

fn cross_loop(oracle: &dyn MatrixOracle, eps: f64, u: &mut dyn UFactor) -> Result<LoopOutcome> {
    let (m1, m2) = oracle.dims();
    let max_rank = m1.min(m2);
    let mut v: Vec<Vec<C64>> = Vec::new();
    let mut s = 0.0_f64;
    let mut out = LoopOutcome {
        v: Vec::new(),
        stop_statistic: f64::INFINITY,
        converged: false,
    };

    // First pivot row is row 0; all-zero leading rows are skipped.
    let mut i = 0;
    let mut first = loop {
        let r = oracle.row(i)?;
        if r.len() != m2 {
            return Err(Error::contract(format!(
                "oracle row has {} entries, expected {m2}",
                r.len()
            )));
        }
        if argmax_abs(&r).1 >= ZERO_NORM {
            break Some(r);
        }
        i += 1;
        if i == m1 {
            out.converged = true;
            out.stop_statistic = 0.0;
            return Ok(out);
        }
    };

    for _ in 0..max_rank {
        let mut r = match first.take() {
            Some(r) => r,
            None => oracle.row(i)?,
        };
        let rank = u.rank();
        if rank > 0 {
            let t = u.row(i)?;
            for (tl, vl) in t.iter().zip(&v) {
                for (rv, vv) in r.iter_mut().zip(vl) {
                    *rv -= tl * vv.conj();
                }
            }
        }
        let (j, pivot_abs) = argmax_abs(&r);
        if pivot_abs < ZERO_NORM {
            out.converged = true;
            break;
        }
        let pivot = r[j];
        let y: Vec<C64> = r.iter().map(|z| (z / pivot).conj()).collect();
        drop(r);

        let mut x = oracle.col(j)?;
        if x.len() != m1 {
            return Err(Error::contract(format!(
                "oracle column has {} entries, expected {m1}",
                x.len()
            )));
        }
        if rank > 0 {
            let w: Vec<C64> = v.iter().map(|vl| vl[j].conj()).collect();
            u.subtract_product(&w, &mut x)?;
        }

        let step = vec_norm(&x) * vec_norm(&y);
        let mut s_next = s + step * step;
        if rank > 0 {
            // ‖A + x y*‖² = ‖A‖² + ‖x‖²‖y‖² + 2 Re Σ_l (u_l* x) conj(v_l* y)
            let (ux, x_back) = u.adjoint_apply(x)?;
            x = x_back;
            let cross: f64 = ux
                .iter()
                .zip(&v)
                .map(|(a, vl)| {
                    let b: C64 = vl.iter().zip(&y).map(|(p, q)| p.conj() * q).sum();
                    (a * b.conj()).re
                })
                .sum();
            s_next += 2.0 * cross;
        }
        s = s_next.max(step * step);

        // Next pivot row: largest |x| outside the current row.
        let next_i = {
            let mut best = (i, -1.0);
            for (idx, z) in x.iter().enumerate() {
                let a = if idx == i { 0.0 } else { z.norm_sqr() };
                if a > best.1 {
                    best = (idx, a);
                }
            }
            best.0
        };

        out.stop_statistic = step / s.sqrt();
        if rank > 0 && out.stop_statistic <= ROUNDOFF_STEP {
            // The residual is rounding noise: a zero pivot in all but name.
            out.converged = true;
            break;
        }
        u.push(x)?;
        v.push(y);
        if step <= eps * s.sqrt() {
            out.converged = true;
            break;
        }
        i = next_i;
    }
    out.v = v;
    Ok(out)
}

fn check_eps(eps: f64) -> Result<()> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::contract(format!(
            "ACA tolerance must lie in (0, 1), got {eps}"
        )));
    }
    Ok(())
}

fn v_matrix(m2: usize, v: Vec<Vec<C64>>) -> DMatrix<C64> {
    let r = v.len();
    DMatrix::from_vec(m2, r, v.into_iter().flatten().collect())
}

/// Classical partial-pivot ACA with a dense `U`.
pub fn aca_dense(oracle: &dyn MatrixOracle, eps: f64) -> Result<ACAFactors> {
    check_eps(eps)?;
    let (m1, m2) = oracle.dims();
    let mut u = DenseU {
        rows: m1,
        cols: Vec::new(),
    };
    let out = cross_loop(oracle, eps, &mut u)?;
    let rank = u.cols.len();
    let umat = DMatrix::from_vec(m1, rank, u.cols.into_iter().flatten().collect());
    let mut fac = ACAFactors::from_parts(UStore::Dense(umat), v_matrix(m2, out.v), eps)?;
    fac.stop_statistic = out.stop_statistic;
    fac.converged = out.converged;
    Ok(fac)
}

pub fn tucker_aca(
    oracle: &dyn MatrixOracle,
    dims: [usize; 3],
    q: usize,
    eps: f64,
) -> Result<ACAFactors> {
    tucker_aca_with(oracle, dims, q, eps, &AcaOptions::default())
}

/// ACA whose `U` columns are stored as `q` Tucker tensors over `dims`.
///
/// Dense working memory is a few length-`m1` vectors (the sampled column,
/// the residual column, one decompressed block and HOSVD temporaries),
/// bounded by `2 m1` scalars on a single worker. `U` is never densified.
pub fn tucker_aca_with(
    oracle: &dyn MatrixOracle,
    dims: [usize; 3],
    q: usize,
    eps: f64,
    opts: &AcaOptions,
) -> Result<ACAFactors> {
    check_eps(eps)?;
    let (m1, m2) = oracle.dims();
    if m1 != q * dims.iter().product::<usize>() {
        return Err(Error::contract(format!(
            "matrix has {m1} rows but {q} components of {dims:?} voxels need {}",
            q * dims.iter().product::<usize>()
        )));
    }
    let mut u = CompressedU {
        cols: TuckerColumns::empty(dims, q),
        hosvd_eps: opts.hosvd_factor * eps,
        exec: opts.exec.clone(),
    };
    let out = cross_loop(oracle, eps, &mut u)?;
    let mut fac = ACAFactors::from_parts(UStore::Tucker(u.cols), v_matrix(m2, out.v), eps)?;
    fac.stop_statistic = out.stop_statistic;
    fac.converged = out.converged;
    Ok(fac)
}

/// [`tucker_aca_with`] on the coupling matrix of `scene`, recording the
/// kernel provenance.
pub fn tucker_aca_scene(scene: &SceneSpec, eps: f64, opts: &AcaOptions) -> Result<ACAFactors> {
    let oracle = CouplingOracle { scene };
    let mut fac = tucker_aca_with(&oracle, scene.grid.dims(), scene.q(), eps, opts)?;
    fac.kernel_id = scene.kernel.operator.id();
    fac.k0 = scene.kernel.k0;
    Ok(fac)
}

/// [`aca_dense`] on the coupling matrix of `scene`.
pub fn aca_dense_scene(scene: &SceneSpec, eps: f64) -> Result<ACAFactors> {
    let mut fac = aca_dense(&CouplingOracle { scene }, eps)?;
    fac.kernel_id = scene.kernel.operator.id();
    fac.k0 = scene.kernel.k0;
    Ok(fac)
}

/// Row `i` of `U` (length `r_c`). For a compressed store only the needed
/// element of each tensor is decompressed.
pub fn row_of_compressed_u(fac: &ACAFactors, i: usize) -> Result<Vec<C64>> {
    if i >= fac.n_rows() {
        return Err(Error::contract(format!(
            "row {i} out of range (m1 = {})",
            fac.n_rows()
        )));
    }
    match &fac.u {
        UStore::Dense(u) => Ok(u.row(i).iter().copied().collect()),
        UStore::Tucker(c) => compressed_row(c, i),
    }
}

/// Tucker tensors of the compressed `U`, if any.
pub fn compressed_u(fac: &ACAFactors) -> Option<&TuckerColumns> {
    match &fac.u {
        UStore::Tucker(c) => Some(c),
        UStore::Dense(_) => None,
    }
}

#[allow(dead_code)]
fn _assert_send_sync() {
    fn check<T: Send + Sync>() {}
    check::<ACAFactors>();
    check::<TuckerTensor>();
}
