//! Binary persistence, little-endian throughout.
//!
//! `CTC1` (compressed coupling matrix):
//!
//! ```text
//! "CTC1" | version u32 | q u32 | m u32 | n1 n2 n3 u32 | k0 f64 | eps f64 | kernel id u8
//! per column, per component:
//!     r1 r2 r3 u32 | core (r1 r2 r3 pairs, f1 fastest) | U1 U2 U3 (column-major pairs)
//! ```
//!
//! A pair is `(re f64, im f64)`. `CTA1` (cross approximation with a
//! compressed `U`) is
//!
//! ```text
//! "CTA1" | version u32 | m2 u32 | stop statistic f64 | converged u8
//! CTC1 payload for U with m = r_c, eps = ACA tolerance
//! V as m2 r_c pairs, column-major
//! ```
//!
//! Readers reject trailing bytes and report the byte offset of the first
//! problem. Floats are stored by bit pattern, so round trips are exact.

use std::fs::File;
use std::io::{BufReader, BufWriter, ErrorKind, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::aca::{ACAFactors, UStore};
use crate::compression::{CompressedCoupling, CouplingMeta, TuckerColumns};
use crate::error::{Error, Result};
use crate::tensor::{Tensor3, TuckerTensor};

type C64 = Complex64;

pub const CTC_MAGIC: [u8; 4] = *b"CTC1";
pub const CTA_MAGIC: [u8; 4] = *b"CTA1";
pub const FORMAT_VERSION: u32 = 1;

/// Either kind of file, as dispatched on its magic.
#[derive(Clone, Debug, PartialEq)]
pub enum Stored {
    Coupling(CompressedCoupling),
    Aca(ACAFactors),
}

struct Writer<W: Write> {
    inner: W,
}

impl<W: Write> Writer<W> {
    fn bytes(&mut self, b: &[u8]) -> Result<()> {
        self.inner.write_all(b)?;
        Ok(())
    }

    fn u32(&mut self, v: usize, what: &str) -> Result<()> {
        let v = u32::try_from(v)
            .map_err(|_| Error::contract(format!("{what} = {v} does not fit in u32")))?;
        self.bytes(&v.to_le_bytes())
    }

    fn f64(&mut self, v: f64) -> Result<()> {
        self.bytes(&v.to_le_bytes())
    }

    fn c64s<'a>(&mut self, vals: impl IntoIterator<Item = &'a C64>) -> Result<()> {
        for z in vals {
            self.f64(z.re)?;
            self.f64(z.im)?;
        }
        Ok(())
    }
}

struct Reader<R: Read> {
    inner: R,
    offset: u64,
}

impl<R: Read> Reader<R> {
    fn fail<T>(&self, message: impl Into<String>) -> Result<T> {
        Err(Error::Format {
            offset: self.offset,
            message: message.into(),
        })
    }

    fn exact(&mut self, buf: &mut [u8], what: &str) -> Result<()> {
        match self.inner.read_exact(buf) {
            Ok(()) => {
                self.offset += buf.len() as u64;
                Ok(())
            }
            Err(e) if e.kind() == ErrorKind::UnexpectedEof => {
                self.fail(format!("unexpected end of file while reading {what}"))
            }
            Err(e) => Err(e.into()),
        }
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        let mut b = [0u8; 1];
        self.exact(&mut b, what)?;
        Ok(b[0])
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        let mut b = [0u8; 4];
        self.exact(&mut b, what)?;
        Ok(u32::from_le_bytes(b) as usize)
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        let mut b = [0u8; 8];
        self.exact(&mut b, what)?;
        Ok(f64::from_le_bytes(b))
    }

    fn c64s(&mut self, n: usize, what: &str) -> Result<Vec<C64>> {
        // No up-front reservation: a corrupt header must not trigger a huge
        // allocation before the data runs out.
        let mut out = Vec::new();
        for _ in 0..n {
            let re = self.f64(what)?;
            let im = self.f64(what)?;
            out.push(C64::new(re, im));
        }
        Ok(out)
    }

    fn magic(&mut self) -> Result<[u8; 4]> {
        let mut b = [0u8; 4];
        self.exact(&mut b, "magic")?;
        Ok(b)
    }

    fn version(&mut self) -> Result<()> {
        let at = self.offset;
        let v = self.u32("version")?;
        if v as u32 != FORMAT_VERSION {
            return Err(Error::Format {
                offset: at,
                message: format!("unsupported version {v}"),
            });
        }
        Ok(())
    }

    fn expect_end(&mut self) -> Result<()> {
        let mut b = [0u8; 1];
        match self.inner.read(&mut b) {
            Ok(0) => Ok(()),
            Ok(_) => self.fail("trailing bytes after payload"),
            Err(e) => Err(e.into()),
        }
    }
}

fn write_ctc_body<W: Write>(
    w: &mut Writer<W>,
    meta: &CouplingMeta,
    cols: &TuckerColumns,
) -> Result<()> {
    w.bytes(&CTC_MAGIC)?;
    w.u32(FORMAT_VERSION as usize, "version")?;
    w.u32(cols.q(), "q")?;
    w.u32(cols.ncols(), "m")?;
    for (d, name) in cols.dims().iter().zip(["n1", "n2", "n3"]) {
        w.u32(*d, name)?;
    }
    w.f64(meta.k0)?;
    w.f64(meta.eps)?;
    w.bytes(&[meta.kernel_id])?;
    for t in cols.tensors() {
        for (r, name) in t.ranks().iter().zip(["r1", "r2", "r3"]) {
            w.u32(*r, name)?;
        }
        w.c64s(t.core().as_slice())?;
        for f in t.factors() {
            w.c64s(f.as_slice())?;
        }
    }
    Ok(())
}

fn read_ctc_body<R: Read>(r: &mut Reader<R>) -> Result<(CouplingMeta, TuckerColumns)> {
    let magic = r.magic()?;
    if magic != CTC_MAGIC {
        return Err(Error::Format {
            offset: r.offset - 4,
            message: format!(
                "bad magic {:?}, expected \"CTC1\"",
                String::from_utf8_lossy(&magic)
            ),
        });
    }
    r.version()?;
    let q = r.u32("q")?;
    let m = r.u32("m")?;
    let dims = [r.u32("n1")?, r.u32("n2")?, r.u32("n3")?];
    if q == 0 || dims.contains(&0) {
        return r.fail(format!("degenerate header: q = {q}, dims = {dims:?}"));
    }
    let k0 = r.f64("k0")?;
    let eps = r.f64("eps")?;
    let kernel_id = r.u8("kernel id")?;

    let mut columns = Vec::new();
    for _ in 0..m {
        let mut comps = Vec::with_capacity(q);
        for _ in 0..q {
            let at = r.offset;
            let ranks = [r.u32("r1")?, r.u32("r2")?, r.u32("r3")?];
            for (rk, n) in ranks.iter().zip(dims) {
                if *rk == 0 || *rk > n {
                    return Err(Error::Format {
                        offset: at,
                        message: format!("Tucker ranks {ranks:?} invalid for dims {dims:?}"),
                    });
                }
            }
            let core = r.c64s(ranks.iter().product(), "core")?;
            let mut factors = Vec::with_capacity(3);
            for (n, rk) in dims.iter().zip(ranks) {
                factors.push(DMatrix::from_vec(*n, rk, r.c64s(n * rk, "factor")?));
            }
            let factors: [DMatrix<C64>; 3] = factors.try_into().expect("three factors");
            let core = Tensor3::from_vec(ranks, core).expect("core length matches ranks");
            let t = TuckerTensor::new(core, factors).map_err(|e| Error::Format {
                offset: at,
                message: e.to_string(),
            })?;
            comps.push(t);
        }
        columns.push(comps);
    }
    let cols = TuckerColumns::new(dims, q, columns).map_err(|e| Error::Format {
        offset: r.offset,
        message: e.to_string(),
    })?;
    Ok((CouplingMeta { kernel_id, k0, eps }, cols))
}

pub fn write_ctc(out: impl Write, cc: &CompressedCoupling) -> Result<()> {
    let mut w = Writer { inner: out };
    write_ctc_body(&mut w, &cc.meta, &cc.columns)?;
    w.inner.flush()?;
    Ok(())
}

pub fn read_ctc(input: impl Read) -> Result<CompressedCoupling> {
    let mut r = Reader {
        inner: input,
        offset: 0,
    };
    let (meta, columns) = read_ctc_body(&mut r)?;
    r.expect_end()?;
    Ok(CompressedCoupling { meta, columns })
}

/// Writes a cross approximation. Only a Tucker-compressed `U` can be stored.
pub fn write_cta(out: impl Write, fac: &ACAFactors) -> Result<()> {
    let UStore::Tucker(cols) = fac.u() else {
        return Err(Error::contract(
            "only a compressed U can be written as CTA1",
        ));
    };
    let mut w = Writer { inner: out };
    w.bytes(&CTA_MAGIC)?;
    w.u32(FORMAT_VERSION as usize, "version")?;
    w.u32(fac.n_cols(), "m2")?;
    w.f64(fac.stop_statistic)?;
    w.bytes(&[fac.converged as u8])?;
    let meta = CouplingMeta {
        kernel_id: fac.kernel_id,
        k0: fac.k0,
        eps: fac.eps(),
    };
    write_ctc_body(&mut w, &meta, cols)?;
    w.c64s(fac.v().as_slice())?;
    w.inner.flush()?;
    Ok(())
}

fn read_cta_after_magic<R: Read>(r: &mut Reader<R>) -> Result<ACAFactors> {
    r.version()?;
    let m2 = r.u32("m2")?;
    let stop_statistic = r.f64("stop statistic")?;
    let at = r.offset;
    let converged = match r.u8("converged flag")? {
        0 => false,
        1 => true,
        b => {
            return Err(Error::Format {
                offset: at,
                message: format!("converged flag must be 0 or 1, got {b}"),
            })
        }
    };
    let (meta, cols) = read_ctc_body(r)?;
    let rank = cols.ncols();
    let at = r.offset;
    let v = DMatrix::from_vec(m2, rank, r.c64s(m2 * rank, "V")?);
    let mut fac =
        ACAFactors::from_parts(UStore::Tucker(cols), v, meta.eps).map_err(|e| Error::Format {
            offset: at,
            message: e.to_string(),
        })?;
    fac.kernel_id = meta.kernel_id;
    fac.k0 = meta.k0;
    fac.stop_statistic = stop_statistic;
    fac.converged = converged;
    Ok(fac)
}

pub fn read_cta(input: impl Read) -> Result<ACAFactors> {
    let mut r = Reader {
        inner: input,
        offset: 0,
    };
    let magic = r.magic()?;
    if magic != CTA_MAGIC {
        return Err(Error::Format {
            offset: 0,
            message: format!(
                "bad magic {:?}, expected \"CTA1\"",
                String::from_utf8_lossy(&magic)
            ),
        });
    }
    let fac = read_cta_after_magic(&mut r)?;
    r.expect_end()?;
    Ok(fac)
}

/// Reads either format, dispatching on the magic.
pub fn read_any(input: impl Read) -> Result<Stored> {
    let mut r = Reader {
        inner: input,
        offset: 0,
    };
    let magic = r.magic()?;
    let stored = match &magic {
        m if *m == CTA_MAGIC => Stored::Aca(read_cta_after_magic(&mut r)?),
        m if *m == CTC_MAGIC => {
            // Re-feed the magic to the shared body reader.
            let mut chained = Reader {
                inner: (&CTC_MAGIC[..]).chain(&mut r.inner),
                offset: 0,
            };
            let (meta, columns) = read_ctc_body(&mut chained)?;
            chained.expect_end()?;
            return Ok(Stored::Coupling(CompressedCoupling { meta, columns }));
        }
        _ => {
            return Err(Error::Format {
                offset: 0,
                message: format!("unknown magic {:?}", String::from_utf8_lossy(&magic)),
            })
        }
    };
    r.expect_end()?;
    Ok(stored)
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path)?))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

pub fn save_ctc(path: impl AsRef<Path>, cc: &CompressedCoupling) -> Result<()> {
    write_ctc(create(path.as_ref())?, cc)
}

pub fn load_ctc(path: impl AsRef<Path>) -> Result<CompressedCoupling> {
    read_ctc(open(path.as_ref())?)
}

pub fn save_cta(path: impl AsRef<Path>, fac: &ACAFactors) -> Result<()> {
    write_cta(create(path.as_ref())?, fac)
}

pub fn load_cta(path: impl AsRef<Path>) -> Result<ACAFactors> {
    read_cta(open(path.as_ref())?)
}

pub fn load_any(path: impl AsRef<Path>) -> Result<Stored> {
    read_any(open(path.as_ref())?)
}
