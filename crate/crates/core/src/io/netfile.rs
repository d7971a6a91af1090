//! Two-layer network files: a `key=value` text header closed by an `end`
//! line, followed by the parameter blocks as FMAT images in the order `W`
//! (m × d), `b1` (1 × m, if biased), `a` (1 × m), `b2` (1 × 1, if biased).

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use super::fmat;
use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;
use crate::nets::{ActivationKind, TwoLayerNet};

const FORMAT: &str = "samrank-net";

const RESERVED: &[&str] = &["format", "version", "kind", "d_in", "neurons", "activation", "biases", "seed", "end"];

/// `extra` entries are written after the fixed header keys, in order.
pub fn encode(net: &TwoLayerNet, seed: u64, extra: &[(String, String)]) -> Result<Vec<u8>> {
    let mut header = format!(
        "format={FORMAT}\nversion=1\nkind=two_layer\nd_in={}\nneurons={}\nactivation={}\nbiases={}\nseed={seed}\n",
        net.weights().cols(),
        net.neurons(),
        net.activation(),
        net.has_biases(),
    );
    for (k, v) in extra {
        if RESERVED.contains(&k.as_str()) || k.contains('=') || k.contains('\n') || v.contains('\n') {
            return Err(Error::invalid(format!("header key `{k}` cannot be written")));
        }
        header.push_str(&format!("{k}={v}\n"));
    }
    header.push_str("end\n");
    let mut out = header.into_bytes();
    let row = |v: &[f64]| DenseMatrix::new(1, v.len(), v.to_vec()).expect("finite parameters");
    out.extend(fmat::encode(net.weights()));
    if let Some(b1) = net.hidden_bias() {
        out.extend(fmat::encode(&row(b1)));
    }
    out.extend(fmat::encode(&row(net.output_weights())));
    if let Some(b2) = net.output_bias() {
        out.extend(fmat::encode(&row(&[b2])));
    }
    Ok(out)
}

fn header_err(offset: usize, message: impl Into<String>) -> Error {
    Error::Format {
        offset: offset as u64,
        message: message.into(),
    }
}

/// Parsed header fields plus the network.
#[derive(Clone, Debug, PartialEq)]
pub struct NetFile {
    pub header: BTreeMap<String, String>,
    pub net: TwoLayerNet,
}

impl NetFile {
    pub fn seed(&self) -> Option<u64> {
        self.header.get("seed").and_then(|s| s.parse().ok())
    }
}

fn field<'a>(header: &'a BTreeMap<String, String>, key: &str) -> Result<&'a str> {
    header
        .get(key)
        .map(String::as_str)
        .ok_or_else(|| header_err(0, format!("missing header key `{key}`")))
}

fn parse_field<T: std::str::FromStr>(header: &BTreeMap<String, String>, key: &str) -> Result<T> {
    let raw = field(header, key)?;
    raw.parse()
        .map_err(|_| header_err(0, format!("bad value `{raw}` for header key `{key}`")))
}

pub fn decode(bytes: &[u8]) -> Result<NetFile> {
    let mut header = BTreeMap::new();
    let mut pos = 0;
    loop {
        let Some(len) = bytes[pos..].iter().position(|&b| b == b'\n') else {
            return Err(header_err(pos, "header is not terminated by an `end` line"));
        };
        let line = std::str::from_utf8(&bytes[pos..pos + len])
            .map_err(|_| header_err(pos, "header line is not UTF-8"))?;
        let start = pos;
        pos += len + 1;
        if line == "end" {
            break;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| header_err(start, format!("expected key=value, found `{line}`")))?;
        header.insert(k.to_string(), v.to_string());
    }
    if field(&header, "format")? != FORMAT {
        return Err(header_err(0, format!("not a {FORMAT} file")));
    }
    if field(&header, "kind")? != "two_layer" {
        return Err(header_err(0, "only two_layer networks are supported"));
    }
    let d_in: usize = parse_field(&header, "d_in")?;
    let m: usize = parse_field(&header, "neurons")?;
    let act: ActivationKind = parse_field(&header, "activation")?;
    let biases: bool = parse_field(&header, "biases")?;

    let mut next_block = |rows: usize, cols: usize, name: &str| -> Result<DenseMatrix> {
        let len = fmat::HEADER_LEN + 8 * rows * cols;
        if bytes.len() < pos + len {
            return Err(header_err(
                bytes.len(),
                format!("block `{name}`: expected {} bytes, found {}", pos + len, bytes.len()),
            ));
        }
        let block = fmat::decode(&bytes[pos..pos + len]).map_err(|e| match e {
            Error::Format { offset, message } => header_err(pos + offset as usize, format!("block `{name}`: {message}")),
            other => other,
        })?;
        if block.shape() != (rows, cols) {
            return Err(header_err(pos, format!("block `{name}` has shape {:?}, expected {:?}", block.shape(), (rows, cols))));
        }
        pos += len;
        Ok(block)
    };
    let w = next_block(m, d_in, "W")?;
    let b1 = if biases { Some(next_block(1, m, "b1")?.into_data()) } else { None };
    let a = next_block(1, m, "a")?.into_data();
    let b2 = if biases { Some(next_block(1, 1, "b2")?.data()[0]) } else { None };
    if pos != bytes.len() {
        return Err(header_err(pos, format!("expected {pos} bytes, found {}", bytes.len())));
    }
    let net = TwoLayerNet::with_biases(w, a, b1, b2, act)?;
    Ok(NetFile { header, net })
}

pub fn save(path: &Path, net: &TwoLayerNet, seed: u64, extra: &[(String, String)]) -> Result<()> {
    fs::write(path, encode(net, seed, extra)?)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<NetFile> {
    decode(&fs::read(path)?)
}
