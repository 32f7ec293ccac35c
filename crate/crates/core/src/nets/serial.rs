//! Binary model file: magic `IRKN`, little-endian u32 format version, u64
//! header length, a JSON header (architecture, input encoding and parameter
//! shapes), then every parameter as little-endian f64 in header order.

use serde::{Deserialize, Serialize};

use super::model::{HeadKind, Layout, NetConfig, NetKind, NetModel};
use super::params::{Param, ParamStore};
use super::NetError;
use crate::dataset::{FeatureMask, Scaler};
use crate::numcore::Matrix;

pub const NET_FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8; 4] = b"IRKN";

#[derive(Serialize, Deserialize)]
struct Header {
    kind: NetKind,
    config: NetConfig,
    layout: Layout,
    head: HeadKind,
    mask: FeatureMask,
    scaler: Scaler,
    target_mean: f64,
    target_std: f64,
    params: Vec<ParamMeta>,
}

#[derive(Serialize, Deserialize)]
struct ParamMeta {
    name: String,
    rows: usize,
    cols: usize,
    frozen: bool,
}

impl NetModel {
    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            kind: self.kind,
            config: self.config,
            layout: self.layout.clone(),
            head: self.head,
            mask: self.mask,
            scaler: self.scaler.clone(),
            target_mean: self.target_mean,
            target_std: self.target_std,
            params: self
                .params
                .params
                .iter()
                .map(|p| ParamMeta {
                    name: p.name.clone(),
                    rows: p.value.rows(),
                    cols: p.value.cols(),
                    frozen: p.frozen,
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(16 + json.len() + 8 * self.params.n_scalars());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&NET_FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for p in &self.params.params {
            for v in p.value.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, NetError> {
        let bad = |m: &str| NetError::Format(m.to_string());
        if bytes.len() < 16 || &bytes[..4] != MAGIC {
            return Err(bad("not a network model file"));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != NET_FORMAT_VERSION {
            return Err(NetError::Format(format!("unsupported format version {version}")));
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let body = bytes.get(16..16 + hlen).ok_or_else(|| bad("truncated header"))?;
        let header: Header = serde_json::from_slice(body).map_err(|e| NetError::Format(format!("header: {e}")))?;
        let mut off = 16 + hlen;
        let mut store = ParamStore::default();
        for meta in header.params {
            let n = meta.rows * meta.cols;
            let raw = bytes.get(off..off + 8 * n).ok_or_else(|| bad("truncated parameters"))?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            off += 8 * n;
            store.params.push(Param {
                name: meta.name,
                value: Matrix::from_vec(meta.rows, meta.cols, data)?,
                frozen: meta.frozen,
            });
        }
        if off != bytes.len() {
            return Err(bad("trailing bytes after parameters"));
        }
        // the architecture must agree with the stored tensors
        let fresh = NetModel::new(header.kind, header.layout.clone(), header.head, header.config)?;
        let expected: Vec<(&str, (usize, usize))> = fresh
            .params
            .params
            .iter()
            .map(|p| (p.name.as_str(), p.value.shape()))
            .collect();
        let found: Vec<(&str, (usize, usize))> = store
            .params
            .iter()
            .map(|p| (p.name.as_str(), p.value.shape()))
            .collect();
        if expected != found {
            return Err(bad("parameter shapes do not match the architecture"));
        }
        Ok(NetModel {
            kind: header.kind,
            config: header.config,
            layout: header.layout,
            head: header.head,
            mask: header.mask,
            scaler: header.scaler,
            target_mean: header.target_mean,
            target_std: header.target_std,
            params: store,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact() {
        let cfg = NetConfig {
            dim: 8,
            heads: 2,
            layers: 1,
            ..NetConfig::default()
        };
        let layout = Layout {
            n_numeric: 7,
            cat_vocab: vec![2, 4],
        };
        let mut m = NetModel::new(NetKind::TabKanet, layout, HeadKind::Regression, cfg).unwrap();
        m.target_mean = 40.0;
        m.target_std = 6.5;
        m.params.freeze("kan");
        let bytes = m.to_bytes();
        let back = NetModel::from_bytes(&bytes).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn rejects_damage() {
        let m = NetModel::new(
            NetKind::Linear,
            Layout {
                n_numeric: 2,
                cat_vocab: vec![],
            },
            HeadKind::Classification,
            NetConfig::default(),
        )
        .unwrap();
        let bytes = m.to_bytes();
        assert!(NetModel::from_bytes(&bytes[..bytes.len() - 3]).is_err());
        assert!(NetModel::from_bytes(b"nope").is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(NetModel::from_bytes(&extra).is_err());
    }
}
