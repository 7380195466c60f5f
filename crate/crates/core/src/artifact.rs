//! Versioned binary container for trained models.
//!
//! ```text
//! offset   size  field
//! 0        8     magic "MFILLMDL"
//! 8        4     format version, u32 little-endian
//! 12       1     model kind tag (1 mean, 2 interp, 3 knn, 4 missforest, 5 attention)
//! 13       4     header length H, u32 little-endian
//! 17       H     header, UTF-8 JSON (kind, configuration, norm stats, metadata)
//! 17+H     8     payload length P in f64 values, u64 little-endian
//! 25+H     8·P   payload, f64 little-endian
//! 25+H+8P  32    SHA-256 of every preceding byte
//! ```
//!
//! Payloads: mean/interp hold the 24 column means; knn and missforest hold
//! their training rows row-major (missing cells as NaN); attention holds
//! every parameter tensor row-major in network order.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use chrono::Timelike;

use crate::data::{CompleteRow, DayRow, HourlySeries, NormStats, HOURS};
use crate::error::{Error, Result};
use crate::impute::{Imputer, InterpImputer, KnnConfig, KnnImputer, MeanImputer, MissForestConfig, MissForestImputer, TrainedModel};
use crate::neural::{AttentionConfig, AttentionNet, EpochRecord, TrainedAttentionImputer};
use crate::preprocess::{build_day_matrix, DayTimezone};
use crate::rng::PRNG_NAME;

pub const MAGIC: &[u8; 8] = b"MFILLMDL";
pub const FORMAT_VERSION: u32 = 1;
const CHECKSUM_LEN: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactMetadata {
    pub tool_version: String,
    pub prng: String,
    pub seed: u64,
    /// "dedicated" or "common".
    pub mode: String,
    pub buildings: Vec<String>,
}

impl ArtifactMetadata {
    pub fn new(seed: u64, mode: &str, buildings: Vec<String>) -> Self {
        Self {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            prng: PRNG_NAME.to_string(),
            seed,
            mode: mode.to_string(),
            buildings,
        }
    }
}

/// A trained model with the normalization it expects, keyed by building.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelArtifact {
    pub model: TrainedModel,
    pub norm: BTreeMap<String, NormStats>,
    pub metadata: ArtifactMetadata,
}

#[derive(Serialize, Deserialize)]
struct Header {
    kind: String,
    config: Value,
    norm: BTreeMap<String, NormStats>,
    metadata: ArtifactMetadata,
}

#[derive(Serialize, Deserialize)]
struct AttentionHeader {
    network: AttentionConfig,
    history: Vec<EpochRecord>,
    best_epoch: usize,
}

fn kind_tag(kind: &str) -> u8 {
    match kind {
        "mean" => 1,
        "interp" => 2,
        "knn" => 3,
        "missforest" => 4,
        _ => 5,
    }
}

fn flatten_complete(rows: &[CompleteRow]) -> Vec<f64> {
    rows.iter().flatten().copied().collect()
}

impl ModelArtifact {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let (config, payload): (Value, Vec<f64>) = match &self.model {
            TrainedModel::Mean(m) => (Value::Null, m.means.to_vec()),
            TrainedModel::Interp(m) => (Value::Null, m.means.to_vec()),
            TrainedModel::Knn(m) => (serde_json::to_value(m.config)?, flatten_complete(&m.train)),
            TrainedModel::MissForest(m) => (
                serde_json::to_value(m.config)?,
                m.train.iter().flatten().map(|v| v.unwrap_or(f64::NAN)).collect(),
            ),
            TrainedModel::Attention(m) => (
                serde_json::to_value(AttentionHeader {
                    network: m.net.config.clone(),
                    history: m.history.clone(),
                    best_epoch: m.best_epoch,
                })?,
                m.net.params.iter().flat_map(|p| p.iter().copied()).collect(),
            ),
        };
        let kind = self.model.kind();
        let header = serde_json::to_vec(&Header {
            kind: kind.to_string(),
            config,
            norm: self.norm.clone(),
            metadata: self.metadata.clone(),
        })?;
        let mut out = Vec::with_capacity(25 + header.len() + 8 * payload.len() + CHECKSUM_LEN);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.push(kind_tag(kind));
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
        for v in &payload {
            out.extend_from_slice(&v.to_le_bytes());
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        Ok(out)
    }

    /// Parses an artifact, optionally insisting on a model kind.
    pub fn from_bytes(bytes: &[u8], expected_kind: Option<&str>) -> Result<Self> {
        if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
            return Err(Error::BadMagic);
        }
        if bytes.len() < 12 + CHECKSUM_LEN {
            return Err(Error::Checksum);
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(Error::VersionMismatch {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        let (body, checksum) = bytes.split_at(bytes.len() - CHECKSUM_LEN);
        if Sha256::digest(body).as_slice() != checksum {
            return Err(Error::Checksum);
        }
        let mut cur = Cursor { bytes: body, pos: 12 };
        let tag = cur.take(1)?[0];
        let header_len = u32::from_le_bytes(cur.take(4)?.try_into().expect("4 bytes")) as usize;
        let header: Header = serde_json::from_slice(cur.take(header_len)?)?;
        let n = u64::from_le_bytes(cur.take(8)?.try_into().expect("8 bytes")) as usize;
        let raw = cur.take(n.checked_mul(8).ok_or(Error::Checksum)?)?;
        if cur.pos != body.len() || kind_tag(&header.kind) != tag {
            return Err(Error::Checksum);
        }
        if let Some(expected) = expected_kind {
            if expected != header.kind {
                return Err(Error::KindMismatch {
                    found: header.kind,
                    expected: expected.to_string(),
                });
            }
        }
        let payload: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let model = decode_model(&header.kind, header.config, &payload)?;
        Ok(Self {
            model,
            norm: header.norm,
            metadata: header.metadata,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path.display(), e))
    }

    pub fn load(path: &Path, expected_kind: Option<&str>) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path.display(), e))?;
        Self::from_bytes(&bytes, expected_kind)
    }

    /// Fills the missing slots of one building's series. Days with no
    /// observed slot at all are left missing. Returns the filled series and
    /// the number of slots filled.
    pub fn impute_series(&self, series: &HourlySeries, tz: DayTimezone) -> Result<(HourlySeries, usize)> {
        let stats = self.norm.get(&series.building_id).ok_or_else(|| {
            Error::Config(format!("artifact has no normalization for building `{}`", series.building_id))
        })?;
        let matrix = build_day_matrix(series, tz)?;
        let lead = series.start_hour.with_timezone(&tz.offset()).hour() as usize;
        let rows: Vec<usize> = (0..matrix.n_rows())
            .filter(|&r| {
                let row = &matrix.values[r];
                row.iter().any(Option::is_some) && row.iter().any(Option::is_none)
            })
            .collect();
        let inputs: Vec<DayRow> = rows.iter().map(|&r| stats.apply_row(&matrix.values[r])).collect();
        let outputs = self.model.impute_batch(&inputs)?;
        let mut out = series.clone();
        let mut filled = 0;
        for (&r, filled_row) in rows.iter().zip(&outputs) {
            for col in 0..HOURS {
                let Some(slot) = (r * HOURS + col).checked_sub(lead).filter(|&s| s < out.len()) else {
                    continue;
                };
                if out.values[slot].is_none() {
                    out.values[slot] = Some(stats.invert(col, filled_row[col]));
                    filled += 1;
                }
            }
        }
        Ok((out, filled))
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or(Error::Checksum)?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }
}

fn rows_of<T>(payload: &[f64], f: impl Fn(f64) -> T) -> Result<Vec<[T; HOURS]>> {
    if payload.len() % HOURS != 0 {
        return Err(Error::Shape("payload is not a whole number of day rows".into()));
    }
    Ok(payload
        .chunks_exact(HOURS)
        .map(|c| std::array::from_fn(|j| f(c[j])))
        .collect())
}

fn decode_model(kind: &str, config: Value, payload: &[f64]) -> Result<TrainedModel> {
    let means = || -> Result<[f64; HOURS]> {
        payload
            .try_into()
            .map_err(|_| Error::Shape("expected 24 column means".into()))
    };
    Ok(match kind {
        "mean" => TrainedModel::Mean(MeanImputer { means: means()? }),
        "interp" => TrainedModel::Interp(InterpImputer { means: means()? }),
        "knn" => {
            let config: KnnConfig = serde_json::from_value(config)?;
            TrainedModel::Knn(KnnImputer::fit(&rows_of(payload, |v| v)?, config)?)
        }
        "missforest" => {
            let config: MissForestConfig = serde_json::from_value(config)?;
            let rows: Vec<DayRow> = rows_of(payload, |v| (!v.is_nan()).then_some(v))?;
            TrainedModel::MissForest(MissForestImputer::fit(&rows, config)?)
        }
        "attention" => {
            let h: AttentionHeader = serde_json::from_value(config)?;
            let mut params = Vec::new();
            let mut offset = 0;
            for (r, c) in h.network.param_shapes() {
                let end = offset + r * c;
                let slice = payload
                    .get(offset..end)
                    .ok_or_else(|| Error::Shape("attention payload too short".into()))?;
                params.push(ndarray::Array2::from_shape_vec((r, c), slice.to_vec()).expect("sized"));
                offset = end;
            }
            if offset != payload.len() {
                return Err(Error::Shape("attention payload too long".into()));
            }
            if h.best_epoch == 0 || h.best_epoch > h.history.len() {
                return Err(Error::Shape("best epoch outside the training history".into()));
            }
            TrainedModel::Attention(TrainedAttentionImputer {
                net: AttentionNet::from_params(h.network, params)?,
                history: h.history,
                best_epoch: h.best_epoch,
            })
        }
        other => {
            return Err(Error::KindMismatch {
                found: other.to_string(),
                expected: "a known model kind".into(),
            })
        }
    })
}
