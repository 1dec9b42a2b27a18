//! Desk-scale sweep drivers and the compress / bench plumbing behind the
//! command-line tool.
//!
//! Every runner takes an [`ExperimentConfig`] and returns typed rows; [`run`]
//! additionally writes the CSV table (or binary file) and a JSON metadata
//! document next to it. Tables hold no timings, so a fixed seed with one
//! worker gives byte-identical CSV.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::aca::{tucker_aca_scene, ACAFactors, AcaOptions, HOSVD_TOLERANCE_FACTOR};
use crate::compression::{compress_matrix_with, memory_report, CompressedCoupling};
use crate::error::{Error, Result};
use crate::exec::{Exec, DEFAULT_MEM_CAP_BYTES};
use crate::io::{load_any, save_cta, save_ctc, Stored};
use crate::kernels::{
    full_matrix_bytes, make_loop_scene, make_plate_scene, plate_lattice_size, wavelength,
    KernelSpec, Operator, Point, SceneSpec, VoxelGrid,
};
use crate::matvec::{
    aca_adjoint_with, aca_forward_with, adjoint_with, dense_adjoint, dense_forward, forward_with,
    relative_error, MultiVector,
};

type C64 = Complex64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Distance,
    Frequency,
    Mesh,
    Tolerance,
    Compress,
    MatvecBench,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Distance => "distance",
            ExperimentKind::Frequency => "frequency",
            ExperimentKind::Mesh => "mesh",
            ExperimentKind::Tolerance => "tolerance",
            ExperimentKind::Compress => "compress",
            ExperimentKind::MatvecBench => "matvec-bench",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceShape {
    Loop,
    Plate,
}

/// All experiment parameters. Lengths in metres, frequencies in MHz.
///
/// Built from [`ExperimentConfig::defaults`] for the kind, then overlaid
/// with JSON layers in order (see [`ExperimentConfig::from_layers`]).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub operator: Operator,
    /// Voxel counts per axis; ignored when `domain_side` sets the grid.
    pub grid_dims: [usize; 3],
    /// Voxel edge; ignored when `domain_side` sets the grid.
    pub spacing: f64,
    pub grid_center: [f64; 3],
    /// Frequency sweep: edge of the fixed cubic domain. The spacing follows
    /// the wavelength and the voxel count follows the spacing.
    pub domain_side: Option<f64>,
    pub points_per_wavelength: f64,
    pub freq_mhz: f64,
    pub frequencies_mhz: Vec<f64>,
    pub source: SourceShape,
    /// Source center is `(0, distance, 0)`.
    pub distance: f64,
    pub distances: Vec<f64>,
    pub loop_radius: f64,
    pub loop_segments: usize,
    pub plate_side: f64,
    /// Plate refinements (mesh sweep); the first entry is used elsewhere.
    pub plate_edges: Vec<usize>,
    pub eps: f64,
    pub tolerances: Vec<f64>,
    pub hosvd_factor: f64,
    /// Compress through the Tucker-based cross approximation.
    pub aca: bool,
    /// Right-hand sides per product in the bench and tolerance sweep.
    pub columns: usize,
    pub repeats: usize,
    pub input: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub workers: usize,
    pub mem_cap_bytes: u64,
    pub seed: u64,
}

impl ExperimentConfig {
    /// Desk-scale defaults for `kind`.
    pub fn defaults(kind: ExperimentKind) -> Self {
        let base = ExperimentConfig {
            kind,
            operator: Operator::EField,
            grid_dims: [26, 26, 26],
            spacing: 1.0 / 26.0,
            grid_center: [0.0; 3],
            domain_side: None,
            points_per_wavelength: 20.0,
            freq_mhz: 298.06,
            frequencies_mhz: vec![298.06],
            source: SourceShape::Loop,
            distance: 0.6,
            distances: vec![0.6],
            loop_radius: 0.5,
            loop_segments: 60,
            plate_side: 0.8,
            plate_edges: vec![16],
            eps: 1e-8,
            tolerances: vec![1e-3],
            hosvd_factor: HOSVD_TOLERANCE_FACTOR,
            aca: false,
            columns: 8,
            repeats: 3,
            input: None,
            out: None,
            workers: 0,
            mem_cap_bytes: DEFAULT_MEM_CAP_BYTES,
            seed: 0,
        };
        match kind {
            ExperimentKind::Distance => ExperimentConfig {
                distances: (0..10).map(|i| 0.60 + 0.05 * i as f64).collect(),
                ..base
            },
            ExperimentKind::Frequency => ExperimentConfig {
                domain_side: Some(1.0),
                frequencies_mhz: vec![300.0, 375.0, 450.0, 525.0, 600.0],
                distance: 0.65,
                ..base
            },
            ExperimentKind::Mesh => ExperimentConfig {
                source: SourceShape::Plate,
                plate_edges: vec![1, 4, 16, 64, 256],
                ..base
            },
            ExperimentKind::Tolerance => ExperimentConfig {
                grid_dims: [16, 16, 16],
                spacing: 1.0 / 16.0,
                freq_mhz: 123.0,
                distance: 1.5,
                loop_segments: 48,
                tolerances: vec![1e-3, 1e-4, 1e-5, 1e-6],
                ..base
            },
            ExperimentKind::Compress | ExperimentKind::MatvecBench => ExperimentConfig {
                grid_dims: [16, 16, 16],
                spacing: 1.0 / 16.0,
                loop_segments: 24,
                ..base
            },
        }
    }

    /// Defaults for `kind` overlaid by each JSON object in `layers`, later
    /// layers winning. Unknown keys are rejected.
    pub fn from_layers(kind: ExperimentKind, layers: &[Value]) -> Result<Self> {
        let mut merged = match serde_json::to_value(Self::defaults(kind)) {
            Ok(Value::Object(m)) => m,
            _ => unreachable!("config serializes to an object"),
        };
        for layer in layers {
            let Value::Object(obj) = layer else {
                return Err(Error::Config("configuration must be a JSON object".into()));
            };
            for (k, v) in obj {
                merged.insert(k.clone(), v.clone());
            }
        }
        let declared = merged.get("kind").cloned();
        let cfg: ExperimentConfig = serde_json::from_value(Value::Object(merged))
            .map_err(|e| Error::Config(e.to_string()))?;
        if cfg.kind != kind {
            return Err(Error::Config(format!(
                "configuration is for {:?}, not {}",
                declared.unwrap_or(Value::Null),
                kind.name()
            )));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Parses a single JSON document on top of the defaults.
    pub fn from_json(kind: ExperimentKind, text: &str) -> Result<Self> {
        let v: Value = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        Self::from_layers(kind, &[v])
    }

    pub fn exec(&self) -> Exec {
        Exec::with_workers(self.workers).mem_cap(self.mem_cap_bytes)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        let lists: [(&str, bool); 4] = [
            ("distances", self.distances.is_empty()),
            ("frequencies_mhz", self.frequencies_mhz.is_empty()),
            ("plate_edges", self.plate_edges.is_empty()),
            ("tolerances", self.tolerances.is_empty()),
        ];
        for (name, empty) in lists {
            if empty {
                return bad(format!("{name} must not be empty"));
            }
        }
        let positive = [
            ("spacing", self.spacing),
            ("points_per_wavelength", self.points_per_wavelength),
            ("freq_mhz", self.freq_mhz),
            ("loop_radius", self.loop_radius),
            ("plate_side", self.plate_side),
            ("hosvd_factor", self.hosvd_factor),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if let Some(side) = self.domain_side {
            if !(side > 0.0 && side.is_finite()) {
                return bad(format!("domain_side must be positive, got {side}"));
            }
        }
        if self
            .frequencies_mhz
            .iter()
            .any(|f| !(*f > 0.0 && f.is_finite()))
        {
            return bad("frequencies must be positive".into());
        }
        for e in std::iter::once(&self.eps).chain(&self.tolerances) {
            if !(*e > 0.0 && *e < 1.0) {
                return bad(format!("tolerances must lie in (0, 1), got {e}"));
            }
        }
        if self.grid_dims.contains(&0) {
            return bad("grid_dims must be positive".into());
        }
        if self.plate_edges.contains(&0) {
            return bad("plate_edges must be positive".into());
        }
        if self.columns == 0 || self.repeats == 0 {
            return bad("columns and repeats must be positive".into());
        }
        Ok(())
    }

    fn kernel(&self, freq_mhz: f64) -> Result<KernelSpec> {
        KernelSpec::at_frequency(self.operator, freq_mhz)
    }

    fn fixed_grid(&self) -> Result<VoxelGrid> {
        let c = self.grid_center;
        VoxelGrid::centered(Point::new(c[0], c[1], c[2]), self.spacing, self.grid_dims)
    }

    /// Grid for one frequency: fixed dims, or a fixed domain resampled at
    /// `wavelength / points_per_wavelength`.
    pub fn grid_at(&self, freq_mhz: f64) -> Result<VoxelGrid> {
        let h = wavelength(freq_mhz) / self.points_per_wavelength;
        let c = self.grid_center;
        let center = Point::new(c[0], c[1], c[2]);
        match self.domain_side {
            Some(side) => {
                let n = ((side / h).round() as usize).max(1);
                VoxelGrid::centered(center, h, [n; 3])
            }
            None => VoxelGrid::centered(center, h, self.grid_dims),
        }
    }

    /// Scene with the configured source at `(0, distance, 0)`.
    pub fn scene(
        &self,
        grid: VoxelGrid,
        kernel: KernelSpec,
        distance: f64,
        plate_edges: usize,
    ) -> Result<SceneSpec> {
        let center = Point::new(0.0, distance, 0.0);
        match self.source {
            SourceShape::Loop => {
                make_loop_scene(self.loop_radius, center, self.loop_segments, grid, kernel)
            }
            SourceShape::Plate => {
                make_plate_scene(self.plate_side, center, plate_edges, grid, kernel)
            }
        }
    }

    /// The single scene used by compress, bench and the tolerance sweep.
    pub fn base_scene(&self) -> Result<SceneSpec> {
        self.scene(
            self.fixed_grid()?,
            self.kernel(self.freq_mhz)?,
            self.distance,
            self.plate_edges[0],
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistanceRow {
    pub d: f64,
    pub max_rank: usize,
    pub compressed_bytes: u64,
    pub full_bytes: u64,
    pub factor: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrequencyRow {
    pub freq_mhz: f64,
    pub spacing: f64,
    pub n1: usize,
    pub n2: usize,
    pub n3: usize,
    pub max_rank: usize,
    pub compressed_bytes: u64,
    pub full_bytes: u64,
    pub factor: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeshRow {
    pub n_edges: usize,
    pub pitch: f64,
    pub max_rank: usize,
    pub mean_rank: f64,
    pub compressed_bytes: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToleranceRow {
    pub eps: f64,
    pub r_c: usize,
    pub max_tucker_rank: usize,
    pub matvec_rel_err: f64,
    pub adjoint_rel_err: f64,
    pub stored_bytes: u64,
}

fn at_distance<T>(d: f64, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Scene {
            source_index,
            reason,
        } => Error::Scene {
            source_index,
            reason: format!("at d = {d}: {reason}"),
        },
        other => other,
    })
}

pub fn run_distance_sweep(cfg: &ExperimentConfig) -> Result<Vec<DistanceRow>> {
    let exec = cfg.exec();
    let kernel = cfg.kernel(cfg.freq_mhz)?;
    let mut rows = Vec::with_capacity(cfg.distances.len());
    for &d in &cfg.distances {
        let scene = at_distance(
            d,
            cfg.scene(cfg.fixed_grid()?, kernel, d, cfg.plate_edges[0]),
        )?;
        let rep = memory_report(&compress_matrix_with(&scene, cfg.eps, &exec)?);
        rows.push(DistanceRow {
            d,
            max_rank: rep.max_rank,
            compressed_bytes: rep.compressed_bytes,
            full_bytes: rep.full_bytes,
            factor: rep.factor,
        });
    }
    Ok(rows)
}

pub fn run_frequency_sweep(cfg: &ExperimentConfig) -> Result<Vec<FrequencyRow>> {
    let exec = cfg.exec();
    let mut rows = Vec::with_capacity(cfg.frequencies_mhz.len());
    for &f in &cfg.frequencies_mhz {
        let grid = cfg.grid_at(f)?;
        let scene = cfg.scene(
            grid.clone(),
            cfg.kernel(f)?,
            cfg.distance,
            cfg.plate_edges[0],
        )?;
        let rep = memory_report(&compress_matrix_with(&scene, cfg.eps, &exec)?);
        let [n1, n2, n3] = grid.dims();
        rows.push(FrequencyRow {
            freq_mhz: f,
            spacing: grid.spacing(),
            n1,
            n2,
            n3,
            max_rank: rep.max_rank,
            compressed_bytes: rep.compressed_bytes,
            full_bytes: rep.full_bytes,
            factor: rep.factor,
        });
    }
    Ok(rows)
}

pub fn run_mesh_sweep(cfg: &ExperimentConfig) -> Result<Vec<MeshRow>> {
    let exec = cfg.exec();
    let kernel = cfg.kernel(cfg.freq_mhz)?;
    let mut rows = Vec::with_capacity(cfg.plate_edges.len());
    for &n in &cfg.plate_edges {
        let scene = ExperimentConfig {
            source: SourceShape::Plate,
            ..cfg.clone()
        }
        .scene(cfg.fixed_grid()?, kernel, cfg.distance, n)?;
        let cc = compress_matrix_with(&scene, cfg.eps, &exec)?;
        rows.push(MeshRow {
            n_edges: n,
            pitch: cfg.plate_side / plate_lattice_size(n) as f64,
            max_rank: cc.columns.max_rank(),
            mean_rank: cc.columns.mean_rank(),
            compressed_bytes: memory_report(&cc).compressed_bytes,
        });
    }
    Ok(rows)
}

pub fn run_tolerance_sweep(cfg: &ExperimentConfig) -> Result<Vec<ToleranceRow>> {
    let exec = cfg.exec();
    let scene = cfg.base_scene()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let x = random_block(&mut rng, scene.m(), cfg.columns);
    let phi = random_block(&mut rng, scene.n_rows(), cfg.columns);
    let y_ref = dense_forward(&scene, &x, &exec)?;
    let z_ref = dense_adjoint(&scene, &phi, &exec)?;
    let opts = AcaOptions {
        hosvd_factor: cfg.hosvd_factor,
        exec: exec.clone(),
    };
    let mut rows = Vec::with_capacity(cfg.tolerances.len());
    for &eps in &cfg.tolerances {
        let fac = tucker_aca_scene(&scene, eps, &opts)?;
        let y = aca_forward_with(&fac, &x, &exec)?;
        let z = aca_adjoint_with(&fac, &phi, &exec)?;
        rows.push(ToleranceRow {
            eps,
            r_c: fac.rank(),
            max_tucker_rank: fac.max_tucker_rank(),
            matvec_rel_err: relative_error(&y, &y_ref),
            adjoint_rel_err: relative_error(&z, &z_ref),
            stored_bytes: fac.stored_bytes(),
        });
    }
    Ok(rows)
}

/// `rows x cols` block with entries uniform in the unit square, drawn real
/// part first, column by column.
pub fn random_block(rng: &mut impl Rng, rows: usize, cols: usize) -> MultiVector {
    let mut data = Vec::with_capacity(rows * cols);
    for _ in 0..rows * cols {
        let re = rng.random_range(-1.0..1.0);
        let im = rng.random_range(-1.0..1.0);
        data.push(C64::new(re, im));
    }
    DMatrix::from_vec(rows, cols, data)
}

/// 64-bit FNV-1a over the little-endian bit patterns, as 16 hex digits.
pub fn digest(m: &MultiVector) -> String {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for z in m.iter() {
        for b in z.re.to_le_bytes().into_iter().chain(z.im.to_le_bytes()) {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    format!("{h:016x}")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompressSummary {
    /// "ctc" or "cta".
    pub format: String,
    pub path: Option<PathBuf>,
    pub m: usize,
    pub dims: [usize; 3],
    pub q: usize,
    pub eps: f64,
    /// Cross-approximation rank, when compressed that way.
    pub aca_rank: Option<usize>,
    pub max_rank: usize,
    pub compressed_bytes: u64,
    pub full_bytes: u64,
    pub factor: f64,
    pub seconds: f64,
}

/// Compressed form of the configured scene, in memory.
pub enum Compressed {
    Coupling(CompressedCoupling),
    Aca(ACAFactors),
}

pub fn compress_scene(cfg: &ExperimentConfig) -> Result<Compressed> {
    let scene = cfg.base_scene()?;
    let exec = cfg.exec();
    if cfg.aca {
        let opts = AcaOptions {
            hosvd_factor: cfg.hosvd_factor,
            exec,
        };
        Ok(Compressed::Aca(tucker_aca_scene(&scene, cfg.eps, &opts)?))
    } else {
        Ok(Compressed::Coupling(compress_matrix_with(
            &scene, cfg.eps, &exec,
        )?))
    }
}

/// Compresses the configured scene and writes it to `cfg.out` if set.
pub fn run_compress(cfg: &ExperimentConfig) -> Result<CompressSummary> {
    let start = Instant::now();
    let compressed = compress_scene(cfg)?;
    let seconds = start.elapsed().as_secs_f64();
    let summary = match &compressed {
        Compressed::Coupling(cc) => {
            if let Some(p) = &cfg.out {
                save_ctc(p, cc)?;
            }
            let rep = memory_report(cc);
            CompressSummary {
                format: "ctc".into(),
                path: cfg.out.clone(),
                m: cc.m(),
                dims: cc.dims(),
                q: cc.q(),
                eps: cfg.eps,
                aca_rank: None,
                max_rank: rep.max_rank,
                compressed_bytes: rep.compressed_bytes,
                full_bytes: rep.full_bytes,
                factor: rep.factor,
                seconds,
            }
        }
        Compressed::Aca(fac) => {
            if let Some(p) = &cfg.out {
                save_cta(p, fac)?;
            }
            let cols = crate::aca::compressed_u(fac).expect("tucker store");
            let full = full_matrix_bytes(cols.q(), cols.n_voxels(), fac.n_cols());
            CompressSummary {
                format: "cta".into(),
                path: cfg.out.clone(),
                m: fac.n_cols(),
                dims: cols.dims(),
                q: cols.q(),
                eps: cfg.eps,
                aca_rank: Some(fac.rank()),
                max_rank: fac.max_tucker_rank(),
                compressed_bytes: fac.stored_bytes(),
                full_bytes: full,
                factor: full as f64 / fac.stored_bytes().max(1) as f64,
                seconds,
            }
        }
    };
    Ok(summary)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub input: PathBuf,
    pub format: String,
    pub m: usize,
    pub n_rows: usize,
    pub columns: usize,
    pub repeats: usize,
    pub forward_seconds: f64,
    pub adjoint_seconds: f64,
    /// Errors against the dense matrix of the configured scene, when it
    /// matches the file and fits the memory cap.
    pub forward_rel_err: Option<f64>,
    pub adjoint_rel_err: Option<f64>,
    pub forward_digest: String,
    pub adjoint_digest: String,
}

/// Products with the stored operator on seeded random blocks: `X` is
/// `m x p`, drawn first, then `Phi` is `q n_v x p`.
pub fn bench_products(
    stored: &Stored,
    seed: u64,
    p: usize,
    exec: &Exec,
) -> Result<(MultiVector, MultiVector)> {
    let (m, rows) = match stored {
        Stored::Coupling(cc) => (cc.m(), cc.n_rows()),
        Stored::Aca(f) => (f.n_cols(), f.n_rows()),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = random_block(&mut rng, m, p);
    let phi = random_block(&mut rng, rows, p);
    match stored {
        Stored::Coupling(cc) => Ok((forward_with(cc, &x, exec)?, adjoint_with(cc, &phi, exec)?)),
        Stored::Aca(f) => Ok((
            aca_forward_with(f, &x, exec)?,
            aca_adjoint_with(f, &phi, exec)?,
        )),
    }
}

pub fn run_matvec_bench(cfg: &ExperimentConfig) -> Result<BenchReport> {
    let input = cfg
        .input
        .clone()
        .ok_or_else(|| Error::Config("matvec-bench needs an input file".into()))?;
    let stored = load_any(&input)?;
    let exec = cfg.exec();
    let (format, m, n_rows) = match &stored {
        Stored::Coupling(cc) => ("ctc", cc.m(), cc.n_rows()),
        Stored::Aca(f) => ("cta", f.n_cols(), f.n_rows()),
    };

    let mut fwd_best = f64::INFINITY;
    let mut adj_best = f64::INFINITY;
    let mut products = None;
    for _ in 0..cfg.repeats {
        // Timed separately so each figure covers one product only.
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let x = random_block(&mut rng, m, cfg.columns);
        let phi = random_block(&mut rng, n_rows, cfg.columns);
        let t = Instant::now();
        let y = match &stored {
            Stored::Coupling(cc) => forward_with(cc, &x, &exec)?,
            Stored::Aca(f) => aca_forward_with(f, &x, &exec)?,
        };
        fwd_best = fwd_best.min(t.elapsed().as_secs_f64());
        let t = Instant::now();
        let z = match &stored {
            Stored::Coupling(cc) => adjoint_with(cc, &phi, &exec)?,
            Stored::Aca(f) => aca_adjoint_with(f, &phi, &exec)?,
        };
        adj_best = adj_best.min(t.elapsed().as_secs_f64());
        products = Some((x, phi, y, z));
    }
    let (x, phi, y, z) = products.expect("at least one repeat");

    let (mut forward_rel_err, mut adjoint_rel_err) = (None, None);
    if let Ok(scene) = cfg.base_scene() {
        let fits = full_matrix_bytes(scene.q(), scene.n_voxels(), scene.m()) <= exec.mem_cap_bytes;
        if fits && scene.m() == m && scene.n_rows() == n_rows {
            forward_rel_err = Some(relative_error(&y, &dense_forward(&scene, &x, &exec)?));
            adjoint_rel_err = Some(relative_error(&z, &dense_adjoint(&scene, &phi, &exec)?));
        }
    }
    Ok(BenchReport {
        input,
        format: format.into(),
        m,
        n_rows,
        columns: cfg.columns,
        repeats: cfg.repeats,
        // A timer can read zero on very small problems; report one tick.
        forward_seconds: fwd_best.max(1e-9),
        adjoint_seconds: adj_best.max(1e-9),
        forward_rel_err,
        adjoint_rel_err,
        forward_digest: digest(&y),
        adjoint_digest: digest(&z),
    })
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Numeric(format!("csv: {other:?}")),
    }
}

/// Path of the JSON metadata written next to `out`.
pub fn metadata_path(out: &Path) -> PathBuf {
    let mut name = out
        .file_name()
        .map(|s| s.to_os_string())
        .unwrap_or_default();
    name.push(".json");
    out.with_file_name(name)
}

/// What [`run`] produced.
#[derive(Clone, Debug, Serialize)]
pub struct RunReport {
    pub kind: ExperimentKind,
    pub out: Option<PathBuf>,
    pub metadata: Option<PathBuf>,
    pub rows: usize,
    pub seconds: f64,
    /// Kind-specific result (rows, compress summary or bench report).
    pub result: Value,
}

/// Runs the configured experiment and writes its outputs.
///
/// Sweeps write a CSV table to `out`; compress writes the binary file;
/// every kind writes `<out>.json` with the configuration, timing and
/// kind-specific results.
pub fn run(cfg: &ExperimentConfig) -> Result<RunReport> {
    cfg.validate()?;
    let start = Instant::now();
    let out = cfg.out.as_deref();
    fn table<T: Serialize>(out: Option<&Path>, rows: &[T]) -> Result<(usize, Value)> {
        if let Some(p) = out {
            write_csv(p, rows)?;
        }
        Ok((
            rows.len(),
            serde_json::to_value(rows).expect("rows serialize"),
        ))
    }
    let (rows, result) = match cfg.kind {
        ExperimentKind::Distance => table(out, &run_distance_sweep(cfg)?)?,
        ExperimentKind::Frequency => table(out, &run_frequency_sweep(cfg)?)?,
        ExperimentKind::Mesh => table(out, &run_mesh_sweep(cfg)?)?,
        ExperimentKind::Tolerance => table(out, &run_tolerance_sweep(cfg)?)?,
        ExperimentKind::Compress => (
            1,
            serde_json::to_value(run_compress(cfg)?).expect("summary serializes"),
        ),
        ExperimentKind::MatvecBench => (
            1,
            serde_json::to_value(run_matvec_bench(cfg)?).expect("report serializes"),
        ),
    };
    let seconds = start.elapsed().as_secs_f64();
    let metadata = match out {
        Some(p) => {
            let meta_path = metadata_path(p);
            let mut meta = Map::new();
            meta.insert("tool".into(), Value::from(env!("CARGO_PKG_NAME")));
            meta.insert("version".into(), Value::from(env!("CARGO_PKG_VERSION")));
            meta.insert("kind".into(), Value::from(cfg.kind.name()));
            meta.insert("seed".into(), Value::from(cfg.seed));
            meta.insert(
                "workers".into(),
                Value::from(cfg.exec().effective_workers()),
            );
            meta.insert("wall_clock_seconds".into(), Value::from(seconds));
            meta.insert(
                "config".into(),
                serde_json::to_value(cfg).expect("config serializes"),
            );
            meta.insert("result".into(), result.clone());
            let text =
                serde_json::to_string_pretty(&Value::Object(meta)).expect("metadata serializes");
            fs::write(&meta_path, text + "\n")?;
            Some(meta_path)
        }
        None => None,
    };
    Ok(RunReport {
        kind: cfg.kind,
        out: cfg.out.clone(),
        metadata,
        rows,
        seconds,
        result,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(kind: ExperimentKind) -> ExperimentConfig {
        ExperimentConfig {
            grid_dims: [6, 6, 6],
            spacing: 1.0 / 6.0,
            loop_segments: 8,
            distance: 1.0,
            workers: 1,
            ..ExperimentConfig::defaults(kind)
        }
    }

    #[test]
    fn layers_override_defaults_in_order() {
        let a = serde_json::json!({"eps": 1e-4, "seed": 3});
        let b = serde_json::json!({"seed": 9});
        let cfg = ExperimentConfig::from_layers(ExperimentKind::Distance, &[a, b]).unwrap();
        assert_eq!(cfg.eps, 1e-4);
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.distances.len(), 10);
    }

    #[test]
    fn rejects_unknown_keys_wrong_kind_and_empty_lists() {
        let k = ExperimentKind::Distance;
        assert!(matches!(
            ExperimentConfig::from_json(k, r#"{"bogus": 1}"#),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            ExperimentConfig::from_json(k, r#"{"kind": "mesh"}"#),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            ExperimentConfig::from_json(k, r#"{"distances": []}"#),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            ExperimentConfig::from_json(k, r#"{"eps": 2.0}"#),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            ExperimentConfig::from_json(k, "[1]"),
            Err(Error::Config(_))
        ));
        assert_eq!(
            ExperimentConfig::from_json(k, "{").unwrap_err().exit_code(),
            2
        );
    }

    #[test]
    fn defaults_validate_for_every_kind() {
        use ExperimentKind::*;
        for k in [Distance, Frequency, Mesh, Tolerance, Compress, MatvecBench] {
            ExperimentConfig::defaults(k).validate().unwrap();
            let round = serde_json::to_string(&ExperimentConfig::defaults(k)).unwrap();
            assert_eq!(
                ExperimentConfig::from_json(k, &round).unwrap(),
                ExperimentConfig::defaults(k)
            );
        }
    }

    #[test]
    fn guard_violation_names_the_distance() {
        let cfg = ExperimentConfig {
            distances: vec![0.9, 0.45],
            ..tiny(ExperimentKind::Distance)
        };
        let msg = run_distance_sweep(&cfg).unwrap_err().to_string();
        assert!(msg.contains("d = 0.45"), "{msg}");
    }

    #[test]
    fn single_frequency_matches_compress_run() {
        let cfg = ExperimentConfig {
            frequencies_mhz: vec![300.0],
            domain_side: None,
            ..tiny(ExperimentKind::Frequency)
        };
        let row = &run_frequency_sweep(&cfg).unwrap()[0];
        let grid = cfg.grid_at(300.0).unwrap();
        let scene = cfg
            .scene(grid, cfg.kernel(300.0).unwrap(), cfg.distance, 1)
            .unwrap();
        let rep =
            memory_report(&compress_matrix_with(&scene, cfg.eps, &Exec::sequential()).unwrap());
        assert_eq!(row.compressed_bytes, rep.compressed_bytes);
        assert_eq!(row.max_rank, rep.max_rank);
        assert_eq!([row.n1, row.n2, row.n3], [6, 6, 6]);
    }

    #[test]
    fn fixed_domain_resamples_with_wavelength() {
        let cfg = ExperimentConfig::defaults(ExperimentKind::Frequency);
        let lo = cfg.grid_at(300.0).unwrap();
        let hi = cfg.grid_at(600.0).unwrap();
        assert!((lo.spacing() - wavelength(300.0) / 20.0).abs() < 1e-15);
        assert_eq!(hi.dims()[0], 2 * lo.dims()[0]);
    }

    #[test]
    fn single_edge_plate_is_one_column() {
        let cfg = ExperimentConfig {
            plate_edges: vec![1],
            ..tiny(ExperimentKind::Mesh)
        };
        let rows = run_mesh_sweep(&cfg).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].pitch, cfg.plate_side);
    }

    #[test]
    fn csv_is_byte_reproducible() {
        let dir = tempfile::tempdir().unwrap();
        let mut texts = Vec::new();
        for name in ["a.csv", "b.csv"] {
            let cfg = ExperimentConfig {
                distances: vec![0.8, 1.0],
                out: Some(dir.path().join(name)),
                seed: 5,
                ..tiny(ExperimentKind::Distance)
            };
            let rep = run(&cfg).unwrap();
            assert_eq!(rep.rows, 2);
            assert!(rep.metadata.unwrap().exists());
            texts.push(fs::read_to_string(dir.path().join(name)).unwrap());
        }
        assert_eq!(texts[0], texts[1]);
        assert!(texts[0].starts_with("d,max_rank,compressed_bytes,full_bytes,factor\n"));
    }

    #[test]
    fn digest_changes_with_any_bit() {
        let mut m = DMatrix::from_element(2, 2, C64::new(1.0, 0.0));
        let a = digest(&m);
        m[(1, 1)].im = f64::from_bits(1);
        assert_ne!(a, digest(&m));
        assert_eq!(a.len(), 16);
    }

    #[test]
    fn bench_without_input_is_config_error() {
        let cfg = tiny(ExperimentKind::MatvecBench);
        assert!(matches!(run_matvec_bench(&cfg), Err(Error::Config(_))));
    }
}
