//! Network checkpoints.
//!
//! Binary layout, all integers little-endian:
//!
//! ```text
//! magic     8 bytes  "ELPHNET\0"
//! version   u32
//! hlen      u64      length of the JSON header
//! header    hlen bytes: {"layers": [LayerSpec...], "elephant": [{d, learnable} | null...]}
//! values    f64 LE, per layer: weights row-major, bias, then a and h for elephant layers
//! ```
//!
//! The binary form reproduces every bit of every parameter. The JSON form is
//! meant for inspection.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::activation::ElephantParams;
use crate::error::{Error, Result};
use crate::linalg::{DenseMatrix, DenseVector};
use crate::network::{validate_specs, Layer, LayerSpec, Network};

pub const MAGIC: &[u8; 8] = b"ELPHNET\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ElephantMeta {
    d: u32,
    learnable: bool,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    layers: Vec<LayerSpec>,
    elephant: Vec<Option<ElephantMeta>>,
}

fn value_count(specs: &[LayerSpec], elephant: &[Option<ElephantMeta>]) -> usize {
    specs
        .iter()
        .zip(elephant)
        .map(|(s, e)| {
            s.in_features * s.out_features
                + s.out_features
                + if e.is_some() { 2 * s.out_features } else { 0 }
        })
        .sum()
}

pub fn to_bytes(net: &Network) -> Result<Vec<u8>> {
    let header = Header {
        layers: net.specs(),
        elephant: net
            .layers()
            .iter()
            .map(|l| {
                l.elephant.as_ref().map(|e| ElephantMeta {
                    d: e.d,
                    learnable: e.learnable,
                })
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::Format(e.to_string()))?;
    let n = value_count(&header.layers, &header.elephant);
    let mut out = Vec::with_capacity(20 + json.len() + 8 * n);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for l in net.layers() {
        let mut put = |vs: &[f64]| {
            for v in vs {
                out.extend_from_slice(&v.to_le_bytes());
            }
        };
        put(l.weights.as_slice());
        put(&l.bias);
        if let Some(e) = &l.elephant {
            put(&e.a);
            put(&e.h);
        }
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.buf.len()).ok_or_else(|| {
            Error::Format(format!("truncated checkpoint while reading {what} at byte {}", self.pos))
        })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn f64s(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| Error::Format("size overflow".into()))?, what)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}

pub fn from_bytes(buf: &[u8]) -> Result<Network> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(8, "magic")? != MAGIC {
        return Err(Error::Format("not a network checkpoint (bad magic)".into()));
    }
    let version = u32::from_le_bytes(r.take(4, "version")?.try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!(
            "unsupported checkpoint version {version}, expected {FORMAT_VERSION}"
        )));
    }
    let hlen = u64::from_le_bytes(r.take(8, "header length")?.try_into().expect("8 bytes"));
    let hlen = usize::try_from(hlen).map_err(|_| Error::Format("header too large".into()))?;
    let header: Header = serde_json::from_slice(r.take(hlen, "header")?)
        .map_err(|e| Error::Format(format!("bad header: {e}")))?;
    validate_specs(&header.layers).map_err(|e| Error::Format(e.to_string()))?;
    if header.elephant.len() != header.layers.len() {
        return Err(Error::Format("header elephant list does not match layers".into()));
    }
    let mut layers = Vec::with_capacity(header.layers.len());
    for (i, (spec, meta)) in header.layers.into_iter().zip(header.elephant).enumerate() {
        let what = format!("layer {i}");
        let w = r.f64s(spec.in_features * spec.out_features, &what)?;
        let b = r.f64s(spec.out_features, &what)?;
        let elephant = match meta {
            Some(m) => Some(ElephantParams {
                a: r.f64s(spec.out_features, &what)?,
                h: r.f64s(spec.out_features, &what)?,
                d: m.d,
                learnable: m.learnable,
            }),
            None => None,
        };
        layers.push(Layer {
            weights: DenseMatrix::from_vec(spec.out_features, spec.in_features, w)?,
            bias: DenseVector(b),
            elephant,
            spec,
        });
    }
    if r.pos != buf.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes after checkpoint data",
            buf.len() - r.pos
        )));
    }
    Network::from_parts(layers).map_err(|e| Error::Format(e.to_string()))
}

pub fn save_binary(net: &Network, path: &Path) -> Result<()> {
    std::fs::write(path, to_bytes(net)?)?;
    Ok(())
}

pub fn load_binary(path: &Path) -> Result<Network> {
    from_bytes(&std::fs::read(path)?)
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct JsonLayer {
    spec: LayerSpec,
    weights: Vec<Vec<f64>>,
    bias: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    elephant: Option<ElephantParams>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct JsonNetwork {
    format_version: u32,
    layers: Vec<JsonLayer>,
}

pub fn to_json(net: &Network) -> Result<String> {
    let doc = JsonNetwork {
        format_version: FORMAT_VERSION,
        layers: net
            .layers()
            .iter()
            .map(|l| JsonLayer {
                spec: l.spec.clone(),
                weights: (0..l.weights.rows()).map(|r| l.weights.row(r).to_vec()).collect(),
                bias: l.bias.0.clone(),
                elephant: l.elephant.clone(),
            })
            .collect(),
    };
    serde_json::to_string_pretty(&doc).map_err(|e| Error::Format(e.to_string()))
}

pub fn from_json(s: &str) -> Result<Network> {
    let doc: JsonNetwork = serde_json::from_str(s).map_err(|e| Error::Format(e.to_string()))?;
    if doc.format_version != FORMAT_VERSION {
        return Err(Error::Format(format!(
            "unsupported checkpoint version {}, expected {FORMAT_VERSION}",
            doc.format_version
        )));
    }
    let layers = doc
        .layers
        .into_iter()
        .map(|l| {
            Ok(Layer {
                weights: DenseMatrix::from_rows(&l.weights)?,
                bias: DenseVector(l.bias),
                elephant: l.elephant,
                spec: l.spec,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Network::from_parts(layers).map_err(|e| Error::Format(e.to_string()))
}

pub fn save_json(net: &Network, path: &Path) -> Result<()> {
    std::fs::write(path, to_json(net)?)?;
    Ok(())
}

pub fn load_json(path: &Path) -> Result<Network> {
    from_json(&std::fs::read_to_string(path)?)
}
