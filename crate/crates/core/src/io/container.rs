//! `.qemodel` container: an 8-byte magic, a little-endian `u64` manifest
//! length, the JSON manifest, then the weight blob of little-endian `f64`s.
//! Manifest offsets and lengths are in bytes relative to the blob start.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::netgraph::{Layer, LayerKind, LayerSpec, Model};
use crate::quantizer::SchemeMap;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"QEMODEL\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    version: u32,
    input_shape: Vec<usize>,
    layers: Vec<ManifestLayer>,
    blob_bytes: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestLayer {
    name: String,
    kind: LayerKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    stride: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    padding: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    kernel: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    weights: Option<BlobSegment>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    bias: Option<BlobSegment>,
}

#[derive(Debug, Serialize, Deserialize)]
struct BlobSegment {
    shape: Vec<usize>,
    offset: u64,
    bytes: u64,
}

fn push_tensor(blob: &mut Vec<u8>, t: &Tensor) -> BlobSegment {
    let offset = blob.len() as u64;
    for v in t.data() {
        blob.extend_from_slice(&v.to_le_bytes());
    }
    BlobSegment {
        shape: t.shape().to_vec(),
        offset,
        bytes: blob.len() as u64 - offset,
    }
}

pub fn encode_model(model: &Model) -> Vec<u8> {
    let mut blob = Vec::new();
    let layers = model
        .layers()
        .iter()
        .map(|spec| {
            let mut entry = ManifestLayer {
                name: spec.name.clone(),
                kind: spec.kind(),
                stride: None,
                padding: None,
                kernel: None,
                weights: spec.layer.weights().map(|w| push_tensor(&mut blob, w)),
                bias: spec.layer.bias().map(|b| push_tensor(&mut blob, b)),
            };
            match spec.layer {
                Layer::Conv2d {
                    stride, padding, ..
                } => {
                    entry.stride = Some(stride);
                    entry.padding = Some(padding);
                }
                Layer::Maxpool2d { kernel, stride } => {
                    entry.kernel = Some(kernel);
                    entry.stride = Some(stride);
                }
                _ => {}
            }
            entry
        })
        .collect();
    let manifest = Manifest {
        version: FORMAT_VERSION,
        input_shape: model.input_shape().to_vec(),
        layers,
        blob_bytes: blob.len() as u64,
    };
    let json = serde_json::to_vec(&manifest).expect("manifest serializes");
    let mut out = Vec::with_capacity(16 + json.len() + blob.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&blob);
    out
}

fn read_tensor(layer: &str, seg: &BlobSegment, blob: &[u8]) -> Result<Tensor> {
    let elements: u64 = seg.shape.iter().map(|&d| d as u64).product();
    if seg.shape.is_empty() || elements * 8 != seg.bytes {
        return Err(Error::Validation(format!(
            "layer `{layer}`: shape {:?} needs {} bytes but the manifest records {}",
            seg.shape,
            elements * 8,
            seg.bytes
        )));
    }
    let end = seg.offset.checked_add(seg.bytes);
    let bytes = match end {
        Some(end) if end <= blob.len() as u64 => &blob[seg.offset as usize..end as usize],
        _ => {
            return Err(Error::TruncatedBlob {
                layer: layer.to_string(),
                offset: seg.offset,
                needed: seg.bytes,
                available: blob.len() as u64,
            })
        }
    };
    let data = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    Tensor::new(seg.shape.clone(), data)
        .map_err(|e| Error::Validation(format!("layer `{layer}`: {e}")))
}

fn hyper(layer: &ManifestLayer, field: &str, value: Option<usize>) -> Result<usize> {
    value.ok_or_else(|| {
        Error::CorruptManifest(format!(
            "{} layer `{}` lacks `{field}`",
            layer.kind, layer.name
        ))
    })
}

pub fn decode_model(bytes: &[u8]) -> Result<Model> {
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(Error::CorruptManifest("missing qemodel magic".into()));
    }
    let json_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
    let json_end = 16u64
        .checked_add(json_len)
        .filter(|&e| e <= bytes.len() as u64)
        .ok_or_else(|| Error::CorruptManifest("manifest length exceeds file size".into()))?
        as usize;
    let manifest: Manifest = serde_json::from_slice(&bytes[16..json_end])
        .map_err(|e| Error::CorruptManifest(e.to_string()))?;
    if manifest.version != FORMAT_VERSION {
        return Err(Error::CorruptManifest(format!(
            "unsupported format version {}",
            manifest.version
        )));
    }
    let blob = &bytes[json_end..];

    let mut layers = Vec::with_capacity(manifest.layers.len());
    for entry in &manifest.layers {
        let name = entry.name.as_str();
        let weighted = matches!(entry.kind, LayerKind::Dense | LayerKind::Conv2d);
        if weighted != entry.weights.is_some() || (!weighted && entry.bias.is_some()) {
            return Err(Error::Validation(format!(
                "{} layer `{name}` has inconsistent tensor entries",
                entry.kind
            )));
        }
        let weights = entry
            .weights
            .as_ref()
            .map(|s| read_tensor(name, s, blob))
            .transpose()?;
        let bias = entry
            .bias
            .as_ref()
            .map(|s| read_tensor(name, s, blob))
            .transpose()?;
        let layer = match entry.kind {
            LayerKind::Dense => Layer::Dense {
                weights: weights.expect("checked"),
                bias,
            },
            LayerKind::Conv2d => Layer::Conv2d {
                weights: weights.expect("checked"),
                bias,
                stride: hyper(entry, "stride", entry.stride)?,
                padding: hyper(entry, "padding", entry.padding)?,
            },
            LayerKind::Relu => Layer::Relu,
            LayerKind::Maxpool2d => Layer::Maxpool2d {
                kernel: hyper(entry, "kernel", entry.kernel)?,
                stride: hyper(entry, "stride", entry.stride)?,
            },
            LayerKind::Flatten => Layer::Flatten,
        };
        layers.push(LayerSpec::new(name, layer));
    }
    if blob.len() as u64 != manifest.blob_bytes {
        let last = manifest
            .layers
            .last()
            .map(|l| l.name.clone())
            .unwrap_or_default();
        if (blob.len() as u64) < manifest.blob_bytes {
            return Err(Error::TruncatedBlob {
                layer: last,
                offset: 0,
                needed: manifest.blob_bytes,
                available: blob.len() as u64,
            });
        }
        return Err(Error::Validation(format!(
            "blob has {} trailing bytes",
            blob.len() as u64 - manifest.blob_bytes
        )));
    }
    Model::new(manifest.input_shape, layers).map_err(|e| match e {
        Error::Layer { .. } | Error::Validation(_) => Error::Validation(e.to_string()),
        other => other,
    })
}

pub fn save_model(path: impl AsRef<Path>, model: &Model) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_model(model)).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<Model> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_model(&bytes)
}

#[derive(Serialize, Deserialize)]
struct SchemeFile {
    layers: SchemeMap,
}

pub fn encode_schemes(schemes: &SchemeMap) -> String {
    serde_json::to_string_pretty(&SchemeFile {
        layers: schemes.clone(),
    })
    .expect("schemes serialize")
}

pub fn decode_schemes(text: &str) -> Result<SchemeMap> {
    serde_json::from_str::<SchemeFile>(text)
        .map(|f| f.layers)
        .map_err(|e| Error::Validation(format!("scheme file: {e}")))
}

pub fn save_schemes(path: impl AsRef<Path>, schemes: &SchemeMap) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_schemes(schemes) + "\n").map_err(|e| Error::io(path, e))
}

pub fn load_schemes(path: impl AsRef<Path>) -> Result<SchemeMap> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    decode_schemes(&text)
}
