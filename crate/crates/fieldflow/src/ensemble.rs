//! Seeded field-sample collections with provenance metadata, and their
//! on-disk format.
//!
//! A stored ensemble is one file: the magic line `FLDENS1\n`, a little-endian
//! u64 header length, a JSON metadata document, then the raw payload —
//! little-endian IEEE-754 f64, sample-major, sites row-major. The metadata
//! records a SHA-256 of the payload; reads verify it.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{FlowError, Result};
use crate::lattice::{build_geometry, Field, LatticeGeometry};
use crate::spectral::{gff_covariance, sample_gaussian};
use crate::stats::{batch_mean_se, MCEstimate};

const MAGIC: &[u8; 8] = b"FLDENS1\n";
pub const FORMAT_VERSION: u32 = 1;

/// Which measure an ensemble was drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MeasureTag {
    #[serde(rename = "gff")]
    Gff,
    #[serde(rename = "mcmc-nu")]
    McmcNu,
    #[serde(rename = "transport-nu")]
    TransportNu,
    #[serde(rename = "bridge-nu")]
    BridgeNu,
}

impl MeasureTag {
    pub fn as_str(&self) -> &'static str {
        match self {
            MeasureTag::Gff => "gff",
            MeasureTag::McmcNu => "mcmc-nu",
            MeasureTag::TransportNu => "transport-nu",
            MeasureTag::BridgeNu => "bridge-nu",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometryMeta {
    pub d: usize,
    pub side: f64,
    pub eps: f64,
    pub sites_per_side: usize,
    pub num_sites: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleMeta {
    pub format_version: u32,
    pub geometry: GeometryMeta,
    pub measure: MeasureTag,
    pub seed: u64,
    pub count: usize,
    /// Free-form description of how the samples were produced.
    pub method: String,
    /// Creation parameters (sampler settings, horizons, tolerances).
    pub creation: serde_json::Value,
    pub payload_sha256: String,
}

/// An in-memory collection of field samples over one geometry.
#[derive(Debug, Clone)]
pub struct FieldEnsemble {
    geometry: LatticeGeometry,
    count: usize,
    data: Vec<f64>,
    pub measure: MeasureTag,
    pub seed: u64,
    pub method: String,
    pub creation: serde_json::Value,
}

impl FieldEnsemble {
    pub fn new(
        geometry: LatticeGeometry,
        measure: MeasureTag,
        seed: u64,
        method: impl Into<String>,
    ) -> Self {
        Self {
            geometry,
            count: 0,
            data: Vec::new(),
            measure,
            seed,
            method: method.into(),
            creation: serde_json::Value::Null,
        }
    }

    pub fn from_fields(
        geometry: LatticeGeometry,
        fields: Vec<Field>,
        measure: MeasureTag,
        seed: u64,
        method: impl Into<String>,
    ) -> Self {
        let mut e = Self::new(geometry, measure, seed, method);
        for f in fields {
            e.push(&f);
        }
        e
    }

    /// Draw `n` exact free-field samples.
    pub fn gff(
        geometry: LatticeGeometry,
        mass: crate::lattice::MassParams,
        n: usize,
        seed: u64,
    ) -> Result<Self> {
        let cov = gff_covariance(geometry, mass);
        let mut e = Self::new(geometry, MeasureTag::Gff, seed, "exact spectral sampler");
        for i in 0..n {
            let f = sample_gaussian(&cov, seed, i as u64)?;
            e.push(&f);
        }
        Ok(e)
    }

    pub fn push(&mut self, field: &Field) {
        assert_eq!(field.geometry(), self.geometry);
        self.data.extend_from_slice(field.values());
        self.count += 1;
    }

    pub fn push_values(&mut self, values: &[f64]) {
        assert_eq!(values.len(), self.geometry.num_sites());
        self.data.extend_from_slice(values);
        self.count += 1;
    }

    pub fn geometry(&self) -> LatticeGeometry {
        self.geometry
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        let s = self.geometry.num_sites();
        &self.data[i * s..(i + 1) * s]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.geometry.num_sites())
    }

    pub fn field(&self, i: usize) -> Field {
        Field::new(self.geometry, self.sample(i).to_vec()).expect("stored samples are finite")
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn describe(&self) -> String {
        format!("{} ({}, n = {})", self.method, self.measure.as_str(), self.count)
    }

    /// Mean of an observable with a batch-means standard error (valid for
    /// both iid and chain-ordered ensembles).
    pub fn observable<F: Fn(&[f64]) -> f64>(&self, f: F) -> MCEstimate {
        let vals: Vec<f64> = self.iter().map(|s| f(s)).collect();
        batch_mean_se(&vals, 32)
    }

    /// Mode statistic `|φ̂_k|²/N^d`, whose mean under a spectral covariance
    /// `f` is `f(a(k))`.
    pub fn mode_variance(&self, k_index: usize) -> MCEstimate {
        let geom = self.geometry;
        let norm = geom.num_sites() as f64;
        let vals: Vec<f64> = self
            .iter()
            .map(|s| {
                let freq = crate::fft::forward(&geom, s);
                freq[k_index].norm_sqr() / norm
            })
            .collect();
        batch_mean_se(&vals, 32)
    }

    /// Two-point function ⟨φ_0 φ_x⟩ for every x, with batch-means errors.
    pub fn two_point_row(&self) -> Vec<MCEstimate> {
        let s = self.geometry.num_sites();
        (0..s)
            .map(|x| self.observable(|f| f[0] * f[x]))
            .collect()
    }
}

fn geometry_meta(geom: LatticeGeometry) -> GeometryMeta {
    GeometryMeta {
        d: geom.dimension(),
        side: geom.side_length(),
        eps: geom.spacing(),
        sites_per_side: geom.sites_per_side(),
        num_sites: geom.num_sites(),
    }
}

fn payload_bytes(data: &[f64]) -> Vec<u8> {
    let mut bytes = Vec::with_capacity(data.len() * 8);
    for v in data {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    bytes
}

fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut s = String::with_capacity(64);
    for b in digest {
        s.push_str(&format!("{b:02x}"));
    }
    s
}

/// Write an ensemble; the round trip through [`read_ensemble`] is bitwise
/// exact.
pub fn write_ensemble(path: &Path, ensemble: &FieldEnsemble) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    let payload = payload_bytes(&ensemble.data);
    let meta = EnsembleMeta {
        format_version: FORMAT_VERSION,
        geometry: geometry_meta(ensemble.geometry),
        measure: ensemble.measure,
        seed: ensemble.seed,
        count: ensemble.count,
        method: ensemble.method.clone(),
        creation: ensemble.creation.clone(),
        payload_sha256: sha256_hex(&payload),
    };
    let header = serde_json::to_vec(&meta)?;
    let mut f = std::fs::File::create(path)?;
    f.write_all(MAGIC)?;
    f.write_all(&(header.len() as u64).to_le_bytes())?;
    f.write_all(&header)?;
    f.write_all(&payload)?;
    Ok(())
}

/// Read an ensemble, verifying payload length and hash.
pub fn read_ensemble(path: &Path) -> Result<FieldEnsemble> {
    let mut f = std::fs::File::open(path)?;
    let mut magic = [0u8; 8];
    f.read_exact(&mut magic)
        .map_err(|_| FlowError::CorruptEnsemble("missing magic".into()))?;
    if &magic != MAGIC {
        return Err(FlowError::CorruptEnsemble("bad magic".into()));
    }
    let mut len_bytes = [0u8; 8];
    f.read_exact(&mut len_bytes)
        .map_err(|_| FlowError::CorruptEnsemble("missing header length".into()))?;
    let header_len = u64::from_le_bytes(len_bytes) as usize;
    let mut header = vec![0u8; header_len];
    f.read_exact(&mut header)
        .map_err(|_| FlowError::CorruptEnsemble("truncated header".into()))?;
    let meta: EnsembleMeta = serde_json::from_slice(&header)?;
    if meta.format_version != FORMAT_VERSION {
        return Err(FlowError::CorruptEnsemble(format!(
            "unsupported format version {}",
            meta.format_version
        )));
    }
    let expected = meta.count * meta.geometry.num_sites * 8;
    let mut payload = Vec::new();
    f.read_to_end(&mut payload)?;
    if payload.len() != expected {
        return Err(FlowError::CorruptEnsemble(format!(
            "payload length {} != expected {expected}",
            payload.len()
        )));
    }
    if sha256_hex(&payload) != meta.payload_sha256 {
        return Err(FlowError::CorruptEnsemble("payload hash mismatch".into()));
    }
    let geometry = build_geometry(meta.geometry.d, meta.geometry.side, meta.geometry.eps)?;
    if geometry.num_sites() != meta.geometry.num_sites {
        return Err(FlowError::CorruptEnsemble(
            "geometry metadata inconsistent".into(),
        ));
    }
    let data: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(FieldEnsemble {
        geometry,
        count: meta.count,
        data,
        measure: meta.measure,
        seed: meta.seed,
        method: meta.method,
        creation: meta.creation,
    })
}
