//! Scene geometry and point-dipole Green's-function kernels.
//!
//! A coupling-matrix entry is the field produced at a voxel center by one
//! surface source, modelled as a point dipole at the edge midpoint carrying
//! `weight * direction`. Two operators are provided: the curl-curl
//! (electric-field) kernel and the curl (magnetic-field) kernel of the
//! scalar Helmholtz Green's function `g(R) = exp(-i k0 R) / (4 pi R)`.
//!
//! Rows of the assembled matrix are component-major: all `n_v` voxels of the
//! x-component, then y, then z, voxels ordered with `f1` fastest.

use std::f64::consts::PI;

use nalgebra::{DMatrix, Vector3};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::compression::row_to_index;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::tensor::Tensor3;

type C64 = Complex64;
pub type Point = Vector3<f64>;
pub type CVec3 = [C64; 3];

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Separations below this are treated as a singular self-interaction.
pub const MIN_SEPARATION: f64 = 1e-12;

/// Free-space wavenumber for a frequency in MHz.
pub fn wavenumber(freq_mhz: f64) -> f64 {
    2.0 * PI * freq_mhz * 1e6 / SPEED_OF_LIGHT
}

pub fn wavelength(freq_mhz: f64) -> f64 {
    SPEED_OF_LIGHT / (freq_mhz * 1e6)
}

#[derive(Clone, Debug, PartialEq)]
pub struct VoxelGrid {
    origin: Point,
    spacing: f64,
    dims: [usize; 3],
}

impl VoxelGrid {
    pub fn new(origin: Point, spacing: f64, dims: [usize; 3]) -> Result<Self> {
        if !(spacing > 0.0 && spacing.is_finite()) {
            return Err(Error::contract(format!(
                "voxel spacing must be positive, got {spacing}"
            )));
        }
        if dims.contains(&0) {
            return Err(Error::contract(format!(
                "grid dims {dims:?} must be positive"
            )));
        }
        Ok(VoxelGrid {
            origin,
            spacing,
            dims,
        })
    }

    /// Grid whose bounding box is centered on `center`.
    pub fn centered(center: Point, spacing: f64, dims: [usize; 3]) -> Result<Self> {
        let half = Point::new(dims[0] as f64, dims[1] as f64, dims[2] as f64) * (spacing / 2.0);
        Self::new(center - half, spacing, dims)
    }

    pub fn origin(&self) -> Point {
        self.origin
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn n_voxels(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn center(&self, i1: usize, i2: usize, i3: usize) -> Point {
        self.origin + Point::new(i1 as f64 + 0.5, i2 as f64 + 0.5, i3 as f64 + 0.5) * self.spacing
    }

    /// Voxel center closest to `p` (the grid is axis-separable, so this is
    /// the per-axis nearest center).
    pub fn nearest_center(&self, p: &Point) -> Point {
        let idx: [usize; 3] = std::array::from_fn(|a| {
            let t = ((p[a] - self.origin[a]) / self.spacing).floor();
            t.clamp(0.0, (self.dims[a] - 1) as f64) as usize
        });
        self.center(idx[0], idx[1], idx[2])
    }

    pub fn translated(&self, by: &Point) -> Self {
        VoxelGrid {
            origin: self.origin + by,
            ..self.clone()
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EdgeSource {
    pub midpoint: Point,
    pub direction: Point,
    pub weight: f64,
}

impl EdgeSource {
    pub fn new(midpoint: Point, direction: Point, weight: f64) -> Result<Self> {
        if ((direction.norm() - 1.0).abs()) > 1e-12 {
            return Err(Error::contract(format!(
                "source direction must be a unit vector, |d| = {}",
                direction.norm()
            )));
        }
        if !(weight > 0.0 && weight.is_finite()) {
            return Err(Error::contract(format!(
                "source weight must be positive, got {weight}"
            )));
        }
        Ok(EdgeSource {
            midpoint,
            direction,
            weight,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Operator {
    /// Curl-curl kernel: electric field of an electric current element.
    EField,
    /// Curl kernel: magnetic field of an electric current element.
    HField,
}

impl Operator {
    /// Identifier stored in the binary container header.
    pub fn id(self) -> u8 {
        match self {
            Operator::EField => 0,
            Operator::HField => 1,
        }
    }

    pub fn from_id(id: u8) -> Option<Self> {
        match id {
            0 => Some(Operator::EField),
            1 => Some(Operator::HField),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KernelSpec {
    pub operator: Operator,
    pub k0: f64,
    /// Field components per voxel (always 3 for piecewise-constant voxels).
    pub q: usize,
}

impl KernelSpec {
    pub fn new(operator: Operator, k0: f64) -> Result<Self> {
        if !(k0 >= 0.0 && k0.is_finite()) {
            return Err(Error::contract(format!(
                "wavenumber must be non-negative, got {k0}"
            )));
        }
        Ok(KernelSpec { operator, k0, q: 3 })
    }

    pub fn at_frequency(operator: Operator, freq_mhz: f64) -> Result<Self> {
        Self::new(operator, wavenumber(freq_mhz))
    }

    pub fn eval(&self, src: &EdgeSource, obs: &Point) -> Result<CVec3> {
        match self.operator {
            Operator::EField => efield_kernel(src, obs, self.k0),
            Operator::HField => hfield_kernel(src, obs, self.k0),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneSpec {
    pub grid: VoxelGrid,
    pub sources: Vec<EdgeSource>,
    pub kernel: KernelSpec,
}

impl SceneSpec {
    /// Builds a scene, rejecting any source whose midpoint lies within
    /// `2h` of a voxel center.
    pub fn new(grid: VoxelGrid, sources: Vec<EdgeSource>, kernel: KernelSpec) -> Result<Self> {
        if sources.is_empty() {
            return Err(Error::contract("a scene needs at least one source"));
        }
        if kernel.q != 3 {
            return Err(Error::contract(format!(
                "only q = 3 is supported, got {}",
                kernel.q
            )));
        }
        let guard = 2.0 * grid.spacing;
        for (j, s) in sources.iter().enumerate() {
            let d = (grid.nearest_center(&s.midpoint) - s.midpoint).norm();
            if d < guard {
                return Err(Error::Scene {
                    source_index: j,
                    reason: format!(
                        "midpoint is {d:.4} m from the nearest voxel center, closer than 2h = {guard:.4} m"
                    ),
                });
            }
        }
        Ok(SceneSpec {
            grid,
            sources,
            kernel,
        })
    }

    pub fn m(&self) -> usize {
        self.sources.len()
    }

    pub fn q(&self) -> usize {
        self.kernel.q
    }

    pub fn n_voxels(&self) -> usize {
        self.grid.n_voxels()
    }

    /// Row count of the coupling matrix, `q * n_v`.
    pub fn n_rows(&self) -> usize {
        self.q() * self.n_voxels()
    }

    pub fn translated(&self, by: &Point) -> Self {
        SceneSpec {
            grid: self.grid.translated(by),
            sources: self
                .sources
                .iter()
                .map(|s| EdgeSource {
                    midpoint: s.midpoint + by,
                    ..s.clone()
                })
                .collect(),
            kernel: self.kernel,
        }
    }
}

fn separation(r: &Point, rp: &Point) -> Result<(f64, Point)> {
    let d = r - rp;
    let dist = d.norm();
    if !(dist >= MIN_SEPARATION) {
        return Err(Error::Singularity { distance: dist });
    }
    Ok((dist, d / dist))
}

#[inline]
fn greens_at(dist: f64, k0: f64) -> C64 {
    C64::from_polar(1.0 / (4.0 * PI * dist), -k0 * dist)
}

/// Scalar Helmholtz Green's function `exp(-i k0 R) / (4 pi R)`.
pub fn greens(r: &Point, rp: &Point, k0: f64) -> Result<C64> {
    let (dist, _) = separation(r, rp)?;
    Ok(greens_at(dist, k0))
}

/// `curl curl (g p)` at `obs` for a dipole `weight * direction` at the source
/// midpoint, written as `A p + B (R̂·p) R̂` with
/// `A = g (k² - ik/R - 1/R²)` and `B = g (-k² + 3ik/R + 3/R²)`.
pub fn efield_kernel(src: &EdgeSource, obs: &Point, k0: f64) -> Result<CVec3> {
    if !(k0 > 0.0) {
        return Err(Error::contract(
            "the curl-curl kernel needs a positive wavenumber (k0 = 0 is the static limit)",
        ));
    }
    let (dist, rhat) = separation(obs, &src.midpoint)?;
    let g = greens_at(dist, k0) * src.weight;
    let inv = 1.0 / dist;
    let ik = C64::new(0.0, k0 * inv);
    let a = g * (C64::from(k0 * k0 - inv * inv) - ik);
    let b = g * (C64::from(3.0 * inv * inv - k0 * k0) + 3.0 * ik);
    let proj = b * rhat.dot(&src.direction);
    Ok(std::array::from_fn(|c| {
        a * src.direction[c] + proj * rhat[c]
    }))
}

/// `curl (g p)` at `obs`: `grad g × p` with `grad g = -(ik + 1/R) g R̂`.
pub fn hfield_kernel(src: &EdgeSource, obs: &Point, k0: f64) -> Result<CVec3> {
    let (dist, rhat) = separation(obs, &src.midpoint)?;
    let dg = -greens_at(dist, k0) * C64::new(1.0 / dist, k0) * src.weight;
    let cross = rhat.cross(&src.direction);
    Ok(std::array::from_fn(|c| dg * cross[c]))
}

/// Column `j` of the coupling matrix as `q` tensors shaped like the grid.
pub fn assemble_column(scene: &SceneSpec, j: usize) -> Result<Vec<Tensor3>> {
    let dims = scene.grid.dims();
    let flat = assemble_column_flat(scene, j)?;
    let n_v = scene.n_voxels();
    let mut out = Vec::with_capacity(scene.q());
    let mut rest = flat;
    while !rest.is_empty() {
        let tail = rest.split_off(n_v);
        out.push(Tensor3::from_vec(dims, rest)?);
        rest = tail;
    }
    Ok(out)
}

/// Column `j` flattened component-major (length `q * n_v`).
pub fn assemble_column_flat(scene: &SceneSpec, j: usize) -> Result<Vec<C64>> {
    let src = scene.sources.get(j).ok_or_else(|| {
        Error::contract(format!("source index {j} out of range (m = {})", scene.m()))
    })?;
    let [n1, n2, n3] = scene.grid.dims();
    let n_v = scene.n_voxels();
    let mut out = vec![C64::new(0.0, 0.0); scene.n_rows()];
    let mut v = 0;
    for i3 in 0..n3 {
        for i2 in 0..n2 {
            for i1 in 0..n1 {
                let f = scene.kernel.eval(src, &scene.grid.center(i1, i2, i3))?;
                for (c, val) in f.into_iter().enumerate() {
                    out[c * n_v + v] = val;
                }
                v += 1;
            }
        }
    }
    Ok(out)
}

/// Component `c` of column `j`, one grid-shaped block of length `n_v`.
pub fn assemble_component(scene: &SceneSpec, j: usize, c: usize) -> Result<Vec<C64>> {
    let src = scene.sources.get(j).ok_or_else(|| {
        Error::contract(format!("source index {j} out of range (m = {})", scene.m()))
    })?;
    if c >= scene.q() {
        return Err(Error::contract(format!(
            "component {c} out of range (q = {})",
            scene.q()
        )));
    }
    let [n1, n2, n3] = scene.grid.dims();
    let mut out = Vec::with_capacity(scene.n_voxels());
    for i3 in 0..n3 {
        for i2 in 0..n2 {
            for i1 in 0..n1 {
                out.push(scene.kernel.eval(src, &scene.grid.center(i1, i2, i3))?[c]);
            }
        }
    }
    Ok(out)
}

/// Row `row` of the coupling matrix: one voxel component against every
/// source, `O(m)` kernel evaluations.
pub fn assemble_row(scene: &SceneSpec, row: usize) -> Result<Vec<C64>> {
    let idx = row_to_index(row, scene.grid.dims(), scene.q())?;
    let obs = scene.grid.center(idx.f1, idx.f2, idx.f3);
    scene
        .sources
        .iter()
        .map(|s| scene.kernel.eval(s, &obs).map(|f| f[idx.component]))
        .collect()
}

/// Bytes of the dense `q n_v x m` matrix at 16 bytes per complex scalar.
pub fn full_matrix_bytes(q: usize, n_voxels: usize, m: usize) -> u64 {
    16 * q as u64 * n_voxels as u64 * m as u64
}

pub fn assemble_full(scene: &SceneSpec) -> Result<DMatrix<C64>> {
    assemble_full_with(scene, &Exec::default())
}

/// Dense coupling matrix, refused when it would exceed `exec.mem_cap_bytes`.
pub fn assemble_full_with(scene: &SceneSpec, exec: &Exec) -> Result<DMatrix<C64>> {
    let required = full_matrix_bytes(scene.q(), scene.n_voxels(), scene.m());
    if required > exec.mem_cap_bytes {
        return Err(Error::Capacity {
            what: "dense coupling matrix",
            required,
            cap: exec.mem_cap_bytes,
        });
    }
    let rows = scene.n_rows();
    let mut data = Vec::with_capacity(rows * scene.m());
    for col in exec.map(scene.m(), |j| {
        assemble_column_flat(scene, j).map_err(|e| e.in_column(j))
    }) {
        data.extend(col?);
    }
    Ok(DMatrix::from_vec(rows, scene.m(), data))
}

/// Circular loop of `n_segments` edges in the plane normal to ŷ through
/// `center`. Midpoints sit on the circle at the mid-angle of each segment,
/// directions are tangential and weights are the chord lengths.
pub fn make_loop_scene(
    radius: f64,
    center: Point,
    n_segments: usize,
    grid: VoxelGrid,
    kernel: KernelSpec,
) -> Result<SceneSpec> {
    if n_segments < 3 {
        return Err(Error::contract(format!(
            "a loop needs at least 3 segments, got {n_segments}"
        )));
    }
    if !(radius > 0.0) {
        return Err(Error::contract(format!(
            "loop radius must be positive, got {radius}"
        )));
    }
    let chord = 2.0 * radius * (PI / n_segments as f64).sin();
    let sources = (0..n_segments)
        .map(|l| {
            let phi = 2.0 * PI * (l as f64 + 0.5) / n_segments as f64;
            let (s, c) = phi.sin_cos();
            EdgeSource::new(
                center + Point::new(radius * c, 0.0, radius * s),
                Point::new(-s, 0.0, c),
                chord,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    SceneSpec::new(grid, sources, kernel)
}

/// Square plate of side `side` in the plane normal to ŷ, discretized on a
/// `k x k` lattice with `k = ceil(sqrt(n_edges))`. The first `n_edges`
/// cells (row-major) each carry one source at the cell center, directions
/// alternate between x̂ and ẑ in a checkerboard, and weights equal the
/// lattice pitch `side / k`.
pub fn make_plate_scene(
    side: f64,
    center: Point,
    n_edges: usize,
    grid: VoxelGrid,
    kernel: KernelSpec,
) -> Result<SceneSpec> {
    if n_edges == 0 {
        return Err(Error::contract("a plate needs at least one edge"));
    }
    if !(side > 0.0) {
        return Err(Error::contract(format!(
            "plate side must be positive, got {side}"
        )));
    }
    let k = plate_lattice_size(n_edges);
    let pitch = side / k as f64;
    let sources = (0..n_edges)
        .map(|e| {
            let (a, b) = (e % k, e / k);
            let offset = Point::new(
                -side / 2.0 + (a as f64 + 0.5) * pitch,
                0.0,
                -side / 2.0 + (b as f64 + 0.5) * pitch,
            );
            let dir = if (a + b) % 2 == 0 {
                Point::x()
            } else {
                Point::z()
            };
            EdgeSource::new(center + offset, dir, pitch)
        })
        .collect::<Result<Vec<_>>>()?;
    SceneSpec::new(grid, sources, kernel)
}

/// Lattice size `k = ceil(sqrt(n))` used by [`make_plate_scene`].
pub fn plate_lattice_size(n_edges: usize) -> usize {
    let mut k = (n_edges as f64).sqrt() as usize;
    while k * k < n_edges {
        k += 1;
    }
    k.max(1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn src(mid: Point, dir: Point) -> EdgeSource {
        EdgeSource::new(mid, dir.normalize(), 1.0).unwrap()
    }

    fn norm3(v: &CVec3) -> f64 {
        v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    fn rel_err3(a: &CVec3, b: &CVec3) -> f64 {
        let d: CVec3 = std::array::from_fn(|i| a[i] - b[i]);
        norm3(&d) / norm3(b)
    }

    fn small_grid(dims: [usize; 3]) -> VoxelGrid {
        VoxelGrid::centered(Point::zeros(), 0.05, dims).unwrap()
    }

    // Central-difference curl of a complex vector field.
    fn curl_fd(f: &dyn Fn(&Point) -> CVec3, r: &Point, h: f64) -> CVec3 {
        let d = |axis: usize, comp: usize| {
            let mut e = Point::zeros();
            e[axis] = h;
            (f(&(r + e))[comp] - f(&(r - e))[comp]) / (2.0 * h)
        };
        [d(1, 2) - d(2, 1), d(2, 0) - d(0, 2), d(0, 1) - d(1, 0)]
    }

    #[test]
    fn greens_static_and_phase() {
        let o = Point::zeros();
        let g = greens(&Point::x(), &o, 0.0).unwrap();
        assert!((g - C64::new(1.0 / (4.0 * PI), 0.0)).norm() < 1e-15);
        assert!((g.re - 0.0795774715).abs() < 1e-10);
        let g = greens(&Point::x(), &o, 2.0 * PI).unwrap();
        assert!((g - C64::new(1.0 / (4.0 * PI), 0.0)).norm() < 1e-15);
        for (r, k) in [(0.3, 7.0), (2.5, 1.3), (10.0, 40.0)] {
            let g = greens(&Point::new(0.0, r, 0.0), &o, k).unwrap();
            assert!((g.norm() - 1.0 / (4.0 * PI * r)).abs() < 1e-15);
        }
    }

    #[test]
    fn greens_singularity() {
        let p = Point::new(1.0, 2.0, 3.0);
        assert!(matches!(
            greens(&p, &p, 1.0),
            Err(Error::Singularity { .. })
        ));
        let s = src(p, Point::x());
        assert!(efield_kernel(&s, &p, 1.0).is_err());
        assert!(hfield_kernel(&s, &p, 1.0).is_err());
    }

    #[test]
    fn efield_rejects_static_limit() {
        let s = src(Point::zeros(), Point::x());
        assert!(matches!(
            efield_kernel(&s, &Point::y(), 0.0),
            Err(Error::Contract(_))
        ));
        assert!(hfield_kernel(&s, &Point::y(), 0.0).is_ok());
    }

    #[test]
    fn efield_transverse_far_field() {
        let k0 = 2.0 * PI * 10.0;
        let r = 50.0;
        let s = src(Point::zeros(), Point::z());
        let e = efield_kernel(&s, &Point::new(r, 0.0, 0.0), k0).unwrap();
        let expected = k0 * k0 / (4.0 * PI * r);
        assert!(e[0].norm() < 1e-12 * expected);
        assert!(e[1].norm() < 1e-12 * expected);
        assert!((e[2].norm() - expected).abs() / expected < 1e-3);
    }

    #[test]
    fn efield_radial_dipole() {
        let (r, k0) = (0.7, 3.0);
        let s = src(Point::zeros(), Point::x());
        let e = efield_kernel(&s, &Point::new(r, 0.0, 0.0), k0).unwrap();
        let g = 1.0 / (4.0 * PI * r);
        let expected = g * 2.0 * C64::new(1.0 / (r * r), k0 / r).norm();
        assert!((e[0].norm() - expected).abs() / expected < 1e-14);
        assert!(e[1].norm() == 0.0 && e[2].norm() == 0.0);
    }

    #[test]
    fn hfield_parallel_and_static() {
        let s = src(Point::zeros(), Point::x());
        let h = hfield_kernel(&s, &Point::new(2.0, 0.0, 0.0), 5.0).unwrap();
        assert_eq!(norm3(&h), 0.0);
        let w = 0.3;
        let s = EdgeSource::new(Point::zeros(), Point::z(), w).unwrap();
        let h = hfield_kernel(&s, &Point::x(), 0.0).unwrap();
        assert!((norm3(&h) - w / (4.0 * PI)).abs() < 1e-15);
    }

    #[test]
    fn kernels_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let mid = Point::new(rng.random(), rng.random(), rng.random());
            let dir = Point::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            );
            let s = src(mid, dir);
            let dist = rng.random_range(0.2..2.0);
            let u = Point::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            )
            .normalize();
            let obs = mid + u * dist;
            let k0 = rng.random_range(1.0..10.0);
            let h = 1e-4 * dist;
            let gp = |r: &Point| -> CVec3 {
                let g = greens(r, &s.midpoint, k0).unwrap();
                std::array::from_fn(|c| g * s.direction[c])
            };
            let curl = |r: &Point| curl_fd(&gp, r, h);
            let h_fd = curl(&obs);
            let e_fd = curl_fd(&curl, &obs, h);
            assert!(rel_err3(&hfield_kernel(&s, &obs, k0).unwrap(), &h_fd) < 1e-5);
            assert!(rel_err3(&efield_kernel(&s, &obs, k0).unwrap(), &e_fd) < 1e-5);
        }
    }

    #[test]
    fn scene_guard_names_source() {
        let grid = small_grid([4, 4, 4]);
        let kernel = KernelSpec::new(Operator::EField, 1.0).unwrap();
        let ok = src(Point::new(0.0, 1.0, 0.0), Point::x());
        let bad = src(Point::new(0.0, 0.15, 0.0), Point::x());
        let err = SceneSpec::new(grid.clone(), vec![ok.clone(), bad], kernel).unwrap_err();
        assert!(
            matches!(
                err,
                Error::Scene {
                    source_index: 1,
                    ..
                }
            ),
            "{err}"
        );
        assert!(SceneSpec::new(grid.clone(), vec![], kernel).is_err());
        assert!(SceneSpec::new(grid, vec![ok], kernel).is_ok());
    }

    #[test]
    fn single_voxel_column_is_kernel_vector() {
        let grid = small_grid([1, 1, 1]);
        let kernel = KernelSpec::new(Operator::EField, 2.0).unwrap();
        let s = src(Point::new(0.3, 0.4, 0.1), Point::new(1.0, 1.0, 0.0));
        let scene = SceneSpec::new(grid, vec![s.clone()], kernel).unwrap();
        let col = assemble_column(&scene, 0).unwrap();
        assert_eq!(col.len(), 3);
        let f = efield_kernel(&s, &Point::zeros(), 2.0).unwrap();
        for c in 0..3 {
            assert_eq!(col[c].dims(), [1, 1, 1]);
            assert_eq!(col[c].as_slice()[0], f[c]);
        }
        assert!(assemble_column(&scene, 1).is_err());
    }

    fn loop_scene(dims: [usize; 3], m: usize, op: Operator) -> SceneSpec {
        let grid = small_grid(dims);
        let kernel = KernelSpec::new(op, 4.0).unwrap();
        make_loop_scene(0.4, Point::new(0.0, 0.6, 0.0), m, grid, kernel).unwrap()
    }

    #[test]
    fn full_matrix_columns_are_flattened_columns() {
        let scene = loop_scene([2, 2, 2], 3, Operator::EField);
        let z = assemble_full(&scene).unwrap();
        assert_eq!(z.shape(), (24, 3));
        for j in 0..3 {
            let col = assemble_column(&scene, j).unwrap();
            let flat: Vec<C64> = col.iter().flat_map(|t| t.as_slice().to_vec()).collect();
            assert_eq!(z.column(j).as_slice(), flat.as_slice());
        }
        // spot entry: voxel (1,0,1), component y, source 2
        let v = 1 + 2 * 2;
        let f = efield_kernel(&scene.sources[2], &scene.grid.center(1, 0, 1), 4.0).unwrap();
        assert_eq!(z[(8 + v, 2)], f[1]);
    }

    #[test]
    fn rows_match_full_matrix() {
        let scene = loop_scene([3, 2, 2], 5, Operator::HField);
        let z = assemble_full(&scene).unwrap();
        for row in [0, 7, 12, 35] {
            let r = assemble_row(&scene, row).unwrap();
            assert_eq!(
                r.as_slice(),
                z.row(row).iter().copied().collect::<Vec<_>>().as_slice()
            );
        }
        assert!(assemble_row(&scene, 36).is_err());
    }

    #[test]
    fn full_matrix_respects_cap() {
        let scene = loop_scene([4, 4, 4], 8, Operator::EField);
        let need = full_matrix_bytes(3, 64, 8);
        assert_eq!(need, 3 * 64 * 8 * 16);
        let err = assemble_full_with(&scene, &Exec::default().mem_cap(need - 1)).unwrap_err();
        assert!(matches!(err, Error::Capacity { required, .. } if required == need));
        assert_eq!(err.exit_code(), 3);
        assert!(assemble_full_with(&scene, &Exec::default().mem_cap(need)).is_ok());
    }

    #[test]
    fn translation_invariance() {
        let scene = loop_scene([3, 3, 3], 4, Operator::EField);
        let moved = scene.translated(&Point::new(0.37, -1.2, 2.5));
        for j in 0..4 {
            let a = assemble_column_flat(&scene, j).unwrap();
            let b = assemble_column_flat(&moved, j).unwrap();
            let num: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).norm_sqr()).sum();
            let den: f64 = a.iter().map(|x| x.norm_sqr()).sum();
            assert!((num / den).sqrt() < 1e-12);
        }
    }

    #[test]
    fn mirror_symmetry() {
        // Two sources mirrored through the x = 0 plane with mirrored
        // directions; the grid is symmetric, so component fields mirror.
        let grid = small_grid([4, 3, 2]);
        let kernel = KernelSpec::new(Operator::EField, 3.0).unwrap();
        let d = Point::new(0.6, 0.8, 0.0);
        let a = src(Point::new(0.3, 0.7, 0.05), d);
        let b = src(Point::new(-0.3, 0.7, 0.05), Point::new(-0.6, 0.8, 0.0));
        let scene = SceneSpec::new(grid, vec![a, b], kernel).unwrap();
        let z = assemble_full(&scene).unwrap();
        let n_v = 24;
        for i3 in 0..2 {
            for i2 in 0..3 {
                for i1 in 0..4 {
                    let v = i1 + 4 * (i2 + 3 * i3);
                    let vm = (3 - i1) + 4 * (i2 + 3 * i3);
                    // x flips sign under the mirror, y and z do not
                    assert!((z[(v, 0)] + z[(vm, 1)]).norm() < 1e-12 * z[(v, 0)].norm().max(1e-30));
                    for c in 1..3 {
                        let (p, q) = (z[(c * n_v + v, 0)], z[(c * n_v + vm, 1)]);
                        assert!((p - q).norm() <= 1e-12 * p.norm().max(1e-30));
                    }
                }
            }
        }
    }

    #[test]
    fn kernels_decay_beyond_one_wavelength() {
        let k0 = 2.0 * PI;
        let s = src(Point::zeros(), Point::new(1.0, 2.0, 0.5));
        let dir = Point::new(0.3, -0.2, 1.0).normalize();
        let mut r: f64 = 1.0;
        while r < 1000.0 {
            for op in [Operator::EField, Operator::HField] {
                let k = KernelSpec::new(op, k0).unwrap();
                let near = norm3(&k.eval(&s, &(dir * r)).unwrap());
                let far = norm3(&k.eval(&s, &(dir * 2.0 * r)).unwrap());
                assert!(far < near, "{op:?} at R = {r}");
            }
            r *= 1.3;
        }
    }

    #[test]
    fn efield_coefficients_even_under_reversal() {
        // Swapping source and observation flips R̂ only; the field formula
        // uses R̂ twice in the projection term, so the output is unchanged.
        let p = Point::new(0.2, -0.5, 0.9).normalize();
        let (a, b) = (Point::new(0.1, 0.2, 0.3), Point::new(1.1, -0.4, 0.8));
        let e1 = efield_kernel(&src(a, p), &b, 3.3).unwrap();
        let e2 = efield_kernel(&src(b, p), &a, 3.3).unwrap();
        assert!(rel_err3(&e1, &e2) < 1e-14);
    }

    #[test]
    fn loop_geometry() {
        let grid = small_grid([2, 2, 2]);
        let kernel = KernelSpec::new(Operator::EField, 1.0).unwrap();
        let c = Point::new(0.0, 1.0, 0.0);
        let scene = make_loop_scene(0.5, c, 4, grid.clone(), kernel).unwrap();
        let h = 0.5 * (PI / 4.0).cos();
        for s in &scene.sources {
            let rel = s.midpoint - c;
            assert!((rel.x.abs() - h).abs() < 1e-15 && (rel.z.abs() - h).abs() < 1e-15);
            assert_eq!(rel.y, 0.0);
            assert!((rel.norm() - 0.5).abs() < 1e-15);
            assert!((s.weight - 2.0 * 0.5 * (PI / 4.0).sin()).abs() < 1e-15);
            assert!((s.weight - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
            assert!(s.direction.dot(&rel).abs() < 1e-15);
        }
        assert!(make_loop_scene(0.5, c, 2, grid.clone(), kernel).is_err());
        // loop through the grid violates the guard
        let err = make_loop_scene(0.02, Point::zeros(), 8, grid, kernel).unwrap_err();
        assert!(matches!(err, Error::Scene { .. }));
    }

    #[test]
    fn plate_geometry() {
        let grid = small_grid([2, 2, 2]);
        let kernel = KernelSpec::new(Operator::EField, 1.0).unwrap();
        let c = Point::new(0.0, 0.8, 0.0);
        let one = make_plate_scene(0.5, c, 1, grid.clone(), kernel).unwrap();
        assert_eq!(one.m(), 1);
        assert_eq!(one.sources[0].midpoint, c);
        let coarse = make_plate_scene(0.5, c, 9, grid.clone(), kernel).unwrap();
        let fine = make_plate_scene(0.5, c, 36, grid.clone(), kernel).unwrap();
        assert!((coarse.sources[0].weight - 2.0 * fine.sources[0].weight).abs() < 1e-15);
        let odd = make_plate_scene(0.5, c, 7, grid, kernel).unwrap();
        assert_eq!(odd.m(), 7);
        assert!((odd.sources[0].weight - 0.5 / 3.0).abs() < 1e-15);
        assert_ne!(odd.sources[0].direction, odd.sources[1].direction);
    }

    #[test]
    fn wavenumber_units() {
        assert!((wavenumber(299.792458) - 2.0 * PI).abs() < 1e-12);
        assert!((wavelength(299.792458) - 1.0).abs() < 1e-12);
    }
}
