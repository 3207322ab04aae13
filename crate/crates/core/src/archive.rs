//! Retained MCMC draws and their framed binary encoding.
//!
//! A draw file starts with [`MAGIC`] and is followed by records, each a
//! little-endian `u32` payload length and the payload itself.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::gdp::Partition;

pub const MAGIC: &[u8; 8] = b"NCDRAWS1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Mean,
    Nested,
}

impl ModelKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ModelKind::Mean => "mean",
            ModelKind::Nested => "nested",
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(ModelKind::Mean),
            "nested" => Ok(ModelKind::Nested),
            other => Err(Error::invalid(format!("unknown model '{other}' (expected mean or nested)"))),
        }
    }
}

/// One occupied atom. `top` is the subject-level component; `bottom` the
/// curve-level component within it (always 0 in the mean model).
#[derive(Debug, Clone, PartialEq)]
pub struct AtomRecord {
    pub top: u32,
    pub bottom: u32,
    pub theta: Vec<f64>,
    pub sigma2: f64,
    pub lambda: Vec<bool>,
}

impl AtomRecord {
    /// `Lambda theta`.
    pub fn effective(&self) -> Vec<f64> {
        self.theta.iter().zip(&self.lambda).map(|(t, &l)| if l { *t } else { 0.0 }).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Draw {
    pub iteration: u64,
    pub log_posterior: f64,
    /// Subject-level component of each subject.
    pub z: Vec<u32>,
    /// Curve-level components per subject (empty in the mean model).
    pub c: Vec<Vec<u32>>,
    pub atoms: Vec<AtomRecord>,
    /// `(a, b)` in the mean model, `(a1, b1, a2, b2)` in the nested model.
    pub concentrations: Vec<f64>,
    pub gamma: f64,
    pub nu2: f64,
    pub omega_norm: f64,
    /// Frobenius norm of `Sigma`; `None` in the nested model.
    pub sigma_norm: Option<f64>,
}

impl Draw {
    pub fn subject_partition(&self) -> Partition {
        Partition::from_labels(&self.z)
    }

    pub fn atom(&self, top: u32, bottom: u32) -> Option<&AtomRecord> {
        self.atoms.iter().find(|a| a.top == top && a.bottom == bottom)
    }

    /// Atom generating replicate `j` of subject `i`.
    pub fn curve_atom(&self, i: usize, j: usize) -> Option<&AtomRecord> {
        let top = *self.z.get(i)?;
        let bottom = if self.c.is_empty() { 0 } else { *self.c.get(i)?.get(j)? };
        self.atom(top, bottom)
    }

    pub fn occupied_top(&self) -> usize {
        let mut z = self.z.clone();
        z.sort_unstable();
        z.dedup();
        z.len()
    }

    /// Number of distinct occupied `(top, bottom)` pairs.
    pub fn occupied_curve_clusters(&self) -> usize {
        self.atoms.len()
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&self.iteration.to_le_bytes());
        put_f64(&mut out, self.log_posterior);
        put_u32s(&mut out, &self.z);
        put_u32(&mut out, self.c.len() as u32);
        for ci in &self.c {
            put_u32s(&mut out, ci);
        }
        put_u32(&mut out, self.atoms.len() as u32);
        for a in &self.atoms {
            put_u32(&mut out, a.top);
            put_u32(&mut out, a.bottom);
            put_f64s(&mut out, &a.theta);
            put_f64(&mut out, a.sigma2);
            put_u32(&mut out, a.lambda.len() as u32);
            out.extend(a.lambda.iter().map(|&l| l as u8));
        }
        put_f64s(&mut out, &self.concentrations);
        put_f64(&mut out, self.gamma);
        put_f64(&mut out, self.nu2);
        put_f64(&mut out, self.omega_norm);
        match self.sigma_norm {
            Some(v) => {
                out.push(1);
                put_f64(&mut out, v);
            }
            None => out.push(0),
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor { buf: bytes, pos: 0 };
        let iteration = u64::from_le_bytes(cur.take(8)?.try_into().expect("8 bytes"));
        let log_posterior = cur.f64()?;
        let z = cur.u32s()?;
        let nc = cur.u32()? as usize;
        let mut c = Vec::with_capacity(nc.min(1 << 20));
        for _ in 0..nc {
            c.push(cur.u32s()?);
        }
        let na = cur.u32()? as usize;
        let mut atoms = Vec::with_capacity(na.min(1 << 20));
        for _ in 0..na {
            let top = cur.u32()?;
            let bottom = cur.u32()?;
            let theta = cur.f64s()?;
            let sigma2 = cur.f64()?;
            let nl = cur.u32()? as usize;
            let lambda = cur.take(nl)?.iter().map(|&b| b != 0).collect();
            atoms.push(AtomRecord { top, bottom, theta, sigma2, lambda });
        }
        let concentrations = cur.f64s()?;
        let gamma = cur.f64()?;
        let nu2 = cur.f64()?;
        let omega_norm = cur.f64()?;
        let sigma_norm = match cur.take(1)?[0] {
            0 => None,
            _ => Some(cur.f64()?),
        };
        if cur.pos != bytes.len() {
            return Err(Error::Archive(format!("{} trailing bytes in record", bytes.len() - cur.pos)));
        }
        Ok(Self { iteration, log_posterior, z, c, atoms, concentrations, gamma, nu2, omega_norm, sigma_norm })
    }
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_f64(out: &mut Vec<u8>, v: f64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_u32s(out: &mut Vec<u8>, v: &[u32]) {
    put_u32(out, v.len() as u32);
    for x in v {
        put_u32(out, *x);
    }
}

fn put_f64s(out: &mut Vec<u8>, v: &[f64]) {
    put_u32(out, v.len() as u32);
    for x in v {
        put_f64(out, *x);
    }
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Archive("truncated record".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn u32s(&mut self) -> Result<Vec<u32>> {
        let n = self.u32()? as usize;
        (0..n).map(|_| self.u32()).collect()
    }

    fn f64s(&mut self) -> Result<Vec<f64>> {
        let n = self.u32()? as usize;
        (0..n).map(|_| self.f64()).collect()
    }
}

/// Streaming writer of framed draw records.
pub struct DrawWriter<W: Write> {
    inner: W,
    count: u64,
}

impl<W: Write> DrawWriter<W> {
    pub fn new(mut inner: W) -> Result<Self> {
        inner.write_all(MAGIC).map_err(io_err)?;
        Ok(Self { inner, count: 0 })
    }

    pub fn write(&mut self, draw: &Draw) -> Result<()> {
        let payload = draw.encode();
        let len = u32::try_from(payload.len()).map_err(|_| Error::Archive("record exceeds 4 GiB".into()))?;
        self.inner.write_all(&len.to_le_bytes()).map_err(io_err)?;
        self.inner.write_all(&payload).map_err(io_err)?;
        self.count += 1;
        Ok(())
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn finish(mut self) -> Result<W> {
        self.inner.flush().map_err(io_err)?;
        Ok(self.inner)
    }
}

fn io_err(e: std::io::Error) -> Error {
    Error::Archive(e.to_string())
}

/// Read every record from a draw stream.
pub fn read_draws<R: Read>(mut r: R) -> Result<Vec<Draw>> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|_| Error::Archive("missing draw-file header".into()))?;
    if &magic != MAGIC {
        return Err(Error::Archive("bad draw-file header".into()));
    }
    let mut out = Vec::new();
    loop {
        let mut len = [0u8; 4];
        match r.read(&mut len[..1]) {
            Ok(0) => break,
            Ok(_) => {}
            Err(e) => return Err(io_err(e)),
        }
        r.read_exact(&mut len[1..]).map_err(|_| Error::Archive("truncated record length".into()))?;
        let mut payload = vec![0u8; u32::from_le_bytes(len) as usize];
        r.read_exact(&mut payload).map_err(|_| Error::Archive("truncated record".into()))?;
        out.push(Draw::decode(&payload)?);
    }
    Ok(out)
}
