//! Dense 3-way complex tensors and their truncated Tucker representation.
//!
//! Storage is always mode-1 fastest: entry `(i1, i2, i3)` of an
//! `n1 x n2 x n3` tensor lives at `i1 + n1 * (i2 + n2 * i3)`. With that
//! layout the mode-1 unfolding is the raw buffer read as a column-major
//! `n1 x (n2 n3)` matrix and the transposed mode-3 unfolding is the same
//! buffer read as `(n1 n2) x n3`, so only the mode-2 unfolding needs a
//! permuted copy.
//!
//! Tucker factors are computed with the classical (non-sequential) HOSVD:
//! every factor comes from the SVD of an unfolding of the *original* tensor,
//! so per-mode ranks depend only on that mode's spectrum and the truncation
//! is monotone in the tolerance.

use std::ops::Index;

use nalgebra::{DMatrix, DMatrixView, SVD};
use num_complex::Complex64;

use crate::error::{Error, Result};

type C64 = Complex64;

/// Norm below which a tensor is treated as exactly zero.
pub const ZERO_NORM: f64 = 1e-300;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor3 {
    dims: [usize; 3],
    data: Vec<C64>,
}

impl Tensor3 {
    pub fn zeros(dims: [usize; 3]) -> Self {
        Tensor3 {
            dims,
            data: vec![C64::new(0.0, 0.0); dims.iter().product()],
        }
    }

    pub fn from_vec(dims: [usize; 3], data: Vec<C64>) -> Result<Self> {
        if dims.contains(&0) {
            return Err(Error::contract(format!(
                "tensor dims {dims:?} must be positive"
            )));
        }
        let len: usize = dims.iter().product();
        if data.len() != len {
            return Err(Error::contract(format!(
                "tensor dims {dims:?} need {len} entries, got {}",
                data.len()
            )));
        }
        Ok(Tensor3 { dims, data })
    }

    pub fn from_fn(dims: [usize; 3], mut f: impl FnMut(usize, usize, usize) -> C64) -> Self {
        let mut data = Vec::with_capacity(dims.iter().product());
        for i3 in 0..dims[2] {
            for i2 in 0..dims[1] {
                for i1 in 0..dims[0] {
                    data.push(f(i1, i2, i3));
                }
            }
        }
        Tensor3 { dims, data }
    }

    /// Rank-1 tensor `a ⊗ b ⊗ c`.
    pub fn outer(a: &[C64], b: &[C64], c: &[C64]) -> Self {
        Self::from_fn([a.len(), b.len(), c.len()], |i, j, k| a[i] * b[j] * c[k])
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[C64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [C64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<C64> {
        self.data
    }

    #[inline]
    pub fn linear_index(&self, i1: usize, i2: usize, i3: usize) -> usize {
        i1 + self.dims[0] * (i2 + self.dims[1] * i3)
    }

    pub fn get(&self, i1: usize, i2: usize, i3: usize) -> Option<C64> {
        let [n1, n2, n3] = self.dims;
        (i1 < n1 && i2 < n2 && i3 < n3).then(|| self.data[self.linear_index(i1, i2, i3)])
    }

    pub fn norm_sqr(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum()
    }

    /// Frobenius norm.
    pub fn norm(&self) -> f64 {
        self.norm_sqr().sqrt()
    }

    /// Frobenius norm of `self - other`. Panics on mismatched dims.
    pub fn distance(&self, other: &Tensor3) -> f64 {
        assert_eq!(self.dims, other.dims, "tensor dims differ");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).norm_sqr())
            .sum::<f64>()
            .sqrt()
    }

    /// Mode-`mode` unfolding: mode as rows, the remaining modes (in
    /// increasing order, lower mode fastest) flattened as columns.
    pub fn unfold(&self, mode: usize) -> DMatrix<C64> {
        let [n1, n2, n3] = self.dims;
        match mode {
            0 => DMatrix::from_column_slice(n1, n2 * n3, &self.data),
            1 => DMatrix::from_fn(n2, n1 * n3, |i2, col| {
                self.data[self.linear_index(col % n1, i2, col / n1)]
            }),
            2 => DMatrix::from_fn(n3, n1 * n2, |i3, col| self.data[col + n1 * n2 * i3]),
            _ => panic!("mode {mode} out of range"),
        }
    }
}

impl Index<[usize; 3]> for Tensor3 {
    type Output = C64;

    fn index(&self, [i1, i2, i3]: [usize; 3]) -> &C64 {
        assert!(
            i1 < self.dims[0] && i2 < self.dims[1] && i3 < self.dims[2],
            "index ({i1}, {i2}, {i3}) out of bounds for dims {:?}",
            self.dims
        );
        &self.data[self.linear_index(i1, i2, i3)]
    }
}

/// Contracts `m` (shape `n x r`) with axis `mode` of a tensor whose extent
/// along that axis is `r`. The result has extent `n` along `mode`.
pub fn mode_product(t: &Tensor3, m: &DMatrix<C64>, mode: usize) -> Result<Tensor3> {
    if mode > 2 {
        return Err(Error::contract(format!("mode {mode} out of range (0..=2)")));
    }
    if m.ncols() != t.dims[mode] {
        return Err(Error::contract(format!(
            "mode-{} product: matrix has {} columns but tensor extent is {}",
            mode + 1,
            m.ncols(),
            t.dims[mode]
        )));
    }
    let (dims, data) = mode_product_raw(t.dims, &t.data, m, mode);
    Ok(Tensor3 { dims, data })
}

fn mode_product_raw(
    dims: [usize; 3],
    data: &[C64],
    m: &DMatrix<C64>,
    mode: usize,
) -> ([usize; 3], Vec<C64>) {
    let [n1, n2, n3] = dims;
    let p = m.nrows();
    match mode {
        0 => {
            let view = DMatrixView::from_slice(data, n1, n2 * n3);
            ([p, n2, n3], (m * view).data.into())
        }
        1 => {
            let mt = m.transpose();
            let mut out = Vec::with_capacity(n1 * p * n3);
            for slab in data.chunks_exact(n1 * n2) {
                let view = DMatrixView::from_slice(slab, n1, n2);
                out.extend_from_slice((view * &mt).as_slice());
            }
            ([n1, p, n3], out)
        }
        _ => {
            let view = DMatrixView::from_slice(data, n1 * n2, n3);
            ([n1, n2, p], (view * m.transpose()).data.into())
        }
    }
}

/// Truncated Tucker representation `core ×1 U¹ ×2 U² ×3 U³`.
#[derive(Clone, Debug, PartialEq)]
pub struct TuckerTensor {
    core: Tensor3,
    factors: [DMatrix<C64>; 3],
}

impl TuckerTensor {
    pub fn new(core: Tensor3, factors: [DMatrix<C64>; 3]) -> Result<Self> {
        for (g, f) in factors.iter().enumerate() {
            if f.ncols() != core.dims[g] {
                return Err(Error::contract(format!(
                    "factor {} has {} columns but core extent is {}",
                    g + 1,
                    f.ncols(),
                    core.dims[g]
                )));
            }
            if f.ncols() > f.nrows() {
                return Err(Error::contract(format!(
                    "factor {} rank {} exceeds dimension {}",
                    g + 1,
                    f.ncols(),
                    f.nrows()
                )));
            }
        }
        Ok(TuckerTensor { core, factors })
    }

    /// Rank-(1,1,1) representation of the zero tensor.
    pub fn zero(dims: [usize; 3]) -> Self {
        let factors = dims.map(|n| {
            let mut e = DMatrix::zeros(n, 1);
            e[(0, 0)] = C64::new(1.0, 0.0);
            e
        });
        TuckerTensor {
            core: Tensor3::zeros([1, 1, 1]),
            factors,
        }
    }

    pub fn dims(&self) -> [usize; 3] {
        [0, 1, 2].map(|g| self.factors[g].nrows())
    }

    pub fn ranks(&self) -> [usize; 3] {
        self.core.dims
    }

    pub fn max_rank(&self) -> usize {
        self.core.dims.into_iter().max().unwrap_or(0)
    }

    pub fn core(&self) -> &Tensor3 {
        &self.core
    }

    pub fn factor(&self, mode: usize) -> &DMatrix<C64> {
        &self.factors[mode]
    }

    pub fn factors(&self) -> &[DMatrix<C64>; 3] {
        &self.factors
    }

    /// Number of complex scalars held: `r1 r2 r3 + n1 r1 + n2 r2 + n3 r3`.
    pub fn stored_scalars(&self) -> usize {
        self.core.len() + self.factors.iter().map(|f| f.len()).sum::<usize>()
    }

    /// Complex multiply-adds spent by [`TuckerTensor::reconstruct`].
    pub fn reconstruct_ops(&self) -> u64 {
        let [n1, n2, n3] = self.dims();
        let [r1, r2, r3] = self.ranks();
        (n1 * r1 * r2 * r3 + n1 * n2 * r2 * r3 + n1 * n2 * n3 * r3) as u64
    }

    pub fn reconstruct(&self) -> Tensor3 {
        let (d, x) = mode_product_raw(self.core.dims, &self.core.data, &self.factors[0], 0);
        let (d, x) = mode_product_raw(d, &x, &self.factors[1], 1);
        let (dims, data) = mode_product_raw(d, &x, &self.factors[2], 2);
        Tensor3 { dims, data }
    }

    /// Single entry of the represented tensor in `O(r1 r2 r3)` without
    /// decompressing anything else.
    pub fn element(&self, i1: usize, i2: usize, i3: usize) -> Result<C64> {
        let dims = self.dims();
        if i1 >= dims[0] || i2 >= dims[1] || i3 >= dims[2] {
            return Err(Error::contract(format!(
                "element ({i1}, {i2}, {i3}) out of range for dims {dims:?}"
            )));
        }
        Ok(self.element_unchecked(i1, i2, i3))
    }

    pub(crate) fn element_unchecked(&self, i1: usize, i2: usize, i3: usize) -> C64 {
        let [r1, r2, r3] = self.core.dims;
        let [u1, u2, u3] = &self.factors;
        let core = &self.core.data;
        let mut acc = C64::new(0.0, 0.0);
        for c in 0..r3 {
            let mut plane = C64::new(0.0, 0.0);
            for b in 0..r2 {
                let fibre = &core[r1 * (b + r2 * c)..r1 * (b + r2 * c + 1)];
                let mut s = C64::new(0.0, 0.0);
                for (a, g) in fibre.iter().enumerate() {
                    s += g * u1[(i1, a)];
                }
                plane += s * u2[(i2, b)];
            }
            acc += plane * u3[(i3, c)];
        }
        acc
    }
}

/// Free-function form of [`TuckerTensor::reconstruct`].
pub fn reconstruct(tt: &TuckerTensor) -> Tensor3 {
    tt.reconstruct()
}

/// Free-function form of [`TuckerTensor::element`].
pub fn element(tt: &TuckerTensor, i1: usize, i2: usize, i3: usize) -> Result<C64> {
    tt.element(i1, i2, i3)
}

/// Truncated HOSVD with relative Frobenius tolerance `eps`.
///
/// Each mode keeps the smallest rank whose discarded squared singular values
/// sum to at most `eps² ‖t‖² / 3`, so the total error is bounded by
/// `eps ‖t‖`.
pub fn hosvd(t: &Tensor3, eps: f64) -> Result<TuckerTensor> {
    hosvd_slice(t.dims, &t.data, eps)
}

pub(crate) fn hosvd_slice(dims: [usize; 3], data: &[C64], eps: f64) -> Result<TuckerTensor> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::contract(format!(
            "HOSVD tolerance must be positive, got {eps}"
        )));
    }
    let [n1, n2, n3] = dims;
    debug_assert_eq!(data.len(), n1 * n2 * n3);

    let norm_sqr: f64 = data.iter().map(|z| z.norm_sqr()).sum();
    if norm_sqr.sqrt() < ZERO_NORM {
        return Ok(TuckerTensor::zero(dims));
    }
    let budget = eps * eps / 3.0 * norm_sqr;

    let u1 = {
        let a = DMatrix::from_column_slice(n1, n2 * n3, data);
        left_singular_basis(a, budget)?
    };
    let u2 = {
        let a = DMatrix::from_fn(n2, n1 * n3, |i2, col| {
            data[col % n1 + n1 * (i2 + n2 * (col / n1))]
        });
        left_singular_basis(a, budget)?
    };
    let u3 = {
        // Transpose of the mode-3 unfolding; its right singular vectors,
        // conjugated, are the left singular vectors we want.
        let a = DMatrix::from_column_slice(n1 * n2, n3, data);
        right_singular_basis_conj(a, budget)?
    };

    let (d, x) = mode_product_raw(dims, data, &u1.adjoint(), 0);
    let (d, x) = mode_product_raw(d, &x, &u2.adjoint(), 1);
    let (d, x) = mode_product_raw(d, &x, &u3.adjoint(), 2);
    let core = Tensor3 { dims: d, data: x };
    Ok(TuckerTensor {
        core,
        factors: [u1, u2, u3],
    })
}

fn svd(
    a: DMatrix<C64>,
    compute_u: bool,
    compute_v: bool,
) -> Result<SVD<C64, nalgebra::Dyn, nalgebra::Dyn>> {
    let (r, c) = a.shape();
    SVD::try_new(a, compute_u, compute_v, f64::EPSILON, 100_000)
        .ok_or_else(|| Error::Numeric(format!("SVD of a {r}x{c} unfolding did not converge")))
}

/// Descending order of singular values plus the truncation rank for `budget`.
fn truncation(sv: &[f64], budget: f64) -> (Vec<usize>, usize) {
    let mut order: Vec<usize> = (0..sv.len()).collect();
    order.sort_by(|&a, &b| sv[b].total_cmp(&sv[a]));
    let mut rank = order.len();
    let mut tail = 0.0;
    while rank > 1 {
        let s = sv[order[rank - 1]];
        if tail + s * s > budget {
            break;
        }
        tail += s * s;
        rank -= 1;
    }
    (order, rank)
}

fn left_singular_basis(a: DMatrix<C64>, budget: f64) -> Result<DMatrix<C64>> {
    let n = a.nrows();
    let dec = svd(a, true, false)?;
    let u = dec.u.expect("requested U");
    let (order, rank) = truncation(dec.singular_values.as_slice(), budget);
    Ok(DMatrix::from_fn(n, rank, |i, l| u[(i, order[l])]))
}

fn right_singular_basis_conj(a: DMatrix<C64>, budget: f64) -> Result<DMatrix<C64>> {
    let n = a.ncols();
    let dec = svd(a, false, true)?;
    // v_t = V^H, so conj(V)[i, l] = v_t[l, i].
    let v_t = dec.v_t.expect("requested V^H");
    let (order, rank) = truncation(dec.singular_values.as_slice(), budget);
    Ok(DMatrix::from_fn(n, rank, |i, l| v_t[(order[l], i)]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64) -> C64 {
        C64::new(re, 0.0)
    }

    fn rand_c(rng: &mut impl Rng) -> C64 {
        C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
    }

    fn rand_vec(rng: &mut impl Rng, n: usize) -> Vec<C64> {
        (0..n).map(|_| rand_c(rng)).collect()
    }

    fn rand_tensor(rng: &mut impl Rng, dims: [usize; 3]) -> Tensor3 {
        Tensor3::from_fn(dims, |_, _, _| rand_c(rng))
    }

    fn rand_matrix(rng: &mut impl Rng, r: usize, c: usize) -> DMatrix<C64> {
        DMatrix::from_fn(r, c, |_, _| rand_c(rng))
    }

    /// Independent triple loop straight from the index definition.
    fn mode_product_oracle(t: &Tensor3, m: &DMatrix<C64>, mode: usize) -> Tensor3 {
        let mut dims = t.dims();
        dims[mode] = m.nrows();
        Tensor3::from_fn(dims, |i, j, k| {
            let mut s = C64::new(0.0, 0.0);
            for x in 0..m.ncols() {
                let (idx, row) = match mode {
                    0 => ([x, j, k], i),
                    1 => ([i, x, k], j),
                    _ => ([i, j, x], k),
                };
                s += t[idx] * m[(row, x)];
            }
            s
        })
    }

    fn orthonormality_defect(u: &DMatrix<C64>) -> f64 {
        let g = u.adjoint() * u;
        (g - DMatrix::identity(u.ncols(), u.ncols())).norm()
    }

    #[test]
    fn linear_index_is_mode1_fastest() {
        let t = Tensor3::from_fn([2, 3, 4], |i, j, k| c((i + 10 * j + 100 * k) as f64));
        assert_eq!(t.linear_index(1, 2, 3), 1 + 2 * 2 + 2 * 3 * 3);
        assert_eq!(t.as_slice()[t.linear_index(1, 2, 3)], c(321.0));
        assert_eq!(t.get(2, 0, 0), None);
    }

    #[test]
    fn from_vec_rejects_wrong_length() {
        assert!(Tensor3::from_vec([2, 2, 2], vec![c(0.0); 7]).is_err());
        assert!(Tensor3::from_vec([0, 2, 2], vec![]).is_err());
    }

    #[test]
    fn mode_product_identity_leaves_tensor_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t = rand_tensor(&mut rng, [2, 3, 4]);
        let out = mode_product(&t, &DMatrix::identity(2, 2), 0).unwrap();
        assert_eq!(out, t);
    }

    #[test]
    fn mode_product_row_sums() {
        let t = Tensor3::from_fn([2, 2, 2], |_, _, _| c(1.0));
        let m = DMatrix::from_element(2, 2, c(1.0));
        let out = mode_product(&t, &m, 0).unwrap();
        assert_eq!(out.dims(), [2, 2, 2]);
        assert!(out.as_slice().iter().all(|&z| z == c(2.0)));
    }

    #[test]
    fn mode_product_matches_triple_loop_in_every_mode() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let t = rand_tensor(&mut rng, [4, 5, 6]);
        for mode in 0..3 {
            let m = rand_matrix(&mut rng, 7, t.dims()[mode]);
            let fast = mode_product(&t, &m, mode).unwrap();
            let slow = mode_product_oracle(&t, &m, mode);
            assert_eq!(fast.dims(), slow.dims());
            assert!(fast.distance(&slow) <= 1e-13 * slow.norm(), "mode {mode}");
        }
    }

    #[test]
    fn mode_product_dimension_mismatch_names_mode() {
        let t = Tensor3::zeros([2, 3, 4]);
        let err = mode_product(&t, &DMatrix::zeros(5, 2), 1).unwrap_err();
        assert!(
            matches!(err, Error::Contract(ref s) if s.contains("mode-2")),
            "{err}"
        );
        assert!(mode_product(&t, &DMatrix::zeros(5, 2), 3).is_err());
    }

    #[test]
    fn mode_products_commute_across_modes() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t = rand_tensor(&mut rng, [3, 4, 5]);
        let a = rand_matrix(&mut rng, 6, 3);
        let b = rand_matrix(&mut rng, 2, 4);
        let ab = mode_product(&mode_product(&t, &a, 0).unwrap(), &b, 1).unwrap();
        let ba = mode_product(&mode_product(&t, &b, 1).unwrap(), &a, 0).unwrap();
        assert!(ab.distance(&ba) <= 1e-12 * ab.norm());
    }

    #[test]
    fn unfold_matches_convention() {
        let t = Tensor3::from_fn([2, 3, 4], |i, j, k| c((i + 10 * j + 100 * k) as f64));
        // mode-2: rows i2, columns i1 + n1 * i3
        let u = t.unfold(1);
        assert_eq!(u.shape(), (3, 8));
        assert_eq!(u[(2, 1 + 2 * 3)], c(321.0));
        let u = t.unfold(2);
        assert_eq!(u[(3, 1 + 2 * 2)], c(321.0));
        let u = t.unfold(0);
        assert_eq!(u[(1, 2 + 3 * 3)], c(321.0));
    }

    #[test]
    fn hosvd_rank_one_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let t = Tensor3::outer(
            &rand_vec(&mut rng, 6),
            &rand_vec(&mut rng, 7),
            &rand_vec(&mut rng, 8),
        );
        let tt = hosvd(&t, 1e-8).unwrap();
        assert_eq!(tt.ranks(), [1, 1, 1]);
        assert!(tt.reconstruct().distance(&t) <= 1e-12 * t.norm());
    }

    #[test]
    fn hosvd_multilinear_rank_bounded_by_terms() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut t = Tensor3::zeros([20, 20, 20]);
        for _ in 0..5 {
            let term = Tensor3::outer(
                &rand_vec(&mut rng, 20),
                &rand_vec(&mut rng, 20),
                &rand_vec(&mut rng, 20),
            );
            for (a, b) in t.as_mut_slice().iter_mut().zip(term.as_slice()) {
                *a += b;
            }
        }
        let tt = hosvd(&t, 1e-8).unwrap();
        assert!(tt.ranks().iter().all(|&r| r <= 5), "{:?}", tt.ranks());
        assert!(tt.reconstruct().distance(&t) <= 1e-8 * t.norm());
    }

    #[test]
    fn hosvd_zero_tensor() {
        let t = Tensor3::zeros([3, 4, 5]);
        let tt = hosvd(&t, 1e-8).unwrap();
        assert_eq!(tt.ranks(), [1, 1, 1]);
        assert_eq!(tt.dims(), [3, 4, 5]);
        assert_eq!(tt.element(2, 3, 4).unwrap(), c(0.0));
        assert!(tt.reconstruct().as_slice().iter().all(|z| *z == c(0.0)));
        for f in tt.factors() {
            assert!(orthonormality_defect(f) == 0.0);
        }
    }

    #[test]
    fn hosvd_rejects_bad_tolerance() {
        let t = Tensor3::zeros([2, 2, 2]);
        assert!(hosvd(&t, 0.0).is_err());
        assert!(hosvd(&t, f64::NAN).is_err());
    }

    #[test]
    fn hosvd_thin_unfolding_caps_rank() {
        // n1 = 9 but the other modes only span 2 * 2 = 4 columns.
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let t = rand_tensor(&mut rng, [9, 2, 2]);
        let tt = hosvd(&t, 1e-12).unwrap();
        assert_eq!(tt.ranks(), [4, 2, 2]);
        assert!(tt.reconstruct().distance(&t) <= 1e-12 * t.norm());
    }

    #[test]
    fn reconstruct_unit_core() {
        let e1 = DMatrix::from_fn(3, 1, |i, _| if i == 0 { c(1.0) } else { c(0.0) });
        let tt = TuckerTensor::new(
            Tensor3::from_vec([1, 1, 1], vec![c(1.0)]).unwrap(),
            [e1.clone(), e1.clone(), e1],
        )
        .unwrap();
        let full = tt.reconstruct();
        assert_eq!(full.dims(), [3, 3, 3]);
        for (idx, z) in full.as_slice().iter().enumerate() {
            assert_eq!(*z, if idx == 0 { c(1.0) } else { c(0.0) });
        }
        assert_eq!(tt.element(0, 0, 0).unwrap(), c(1.0));
    }

    #[test]
    fn tucker_new_validates_shapes() {
        let core = Tensor3::zeros([2, 1, 1]);
        let f = DMatrix::zeros(3, 1);
        assert!(TuckerTensor::new(core.clone(), [f.clone(), f.clone(), f.clone()]).is_err());
        let wide = DMatrix::zeros(1, 2);
        assert!(TuckerTensor::new(core, [wide, f.clone(), f]).is_err());
    }

    #[test]
    fn element_matches_reconstruct_exhaustively() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let core = rand_tensor(&mut rng, [3, 2, 4]);
        let tt = TuckerTensor::new(
            core,
            [
                rand_matrix(&mut rng, 8, 3),
                rand_matrix(&mut rng, 7, 2),
                rand_matrix(&mut rng, 8, 4),
            ],
        )
        .unwrap();
        let full = tt.reconstruct();
        for i3 in 0..8 {
            for i2 in 0..7 {
                for i1 in 0..8 {
                    let e = tt.element(i1, i2, i3).unwrap();
                    let f = full[[i1, i2, i3]];
                    assert!((e - f).norm() <= 1e-12 * f.norm().max(1e-300));
                }
            }
        }
        assert!(tt.element(8, 0, 0).is_err());
    }

    #[test]
    fn stored_scalars_formula() {
        let tt = TuckerTensor::zero([5, 6, 7]);
        assert_eq!(tt.stored_scalars(), 1 + 5 + 6 + 7);
    }

    #[test]
    fn factors_are_orthonormal() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let t = rand_tensor(&mut rng, [10, 12, 9]);
        let tt = hosvd(&t, 1e-2).unwrap();
        for (g, f) in tt.factors().iter().enumerate() {
            assert!(
                orthonormality_defect(f) <= 1e-12 * f.ncols() as f64,
                "mode {g}"
            );
        }
    }
}
