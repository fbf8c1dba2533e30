//! Checkpoint files shared by every model-holding module.
//!
//! Binary layout (little-endian):
//!
//! ```text
//! "CMT1" | version u32 | network count u32
//! per network: layer count u32
//!   per layer: rows u32 | cols u32 | rows*cols f64 (row-major) | rows f64 biases
//!   scaling flag u32 (0 or 1)
//!   if 1: in_shift, in_scale (input dim f64 each) | out_shift, out_scale (output dim f64 each)
//! ```
//!
//! The text export writes a shape preamble followed by one value per line in
//! Rust's shortest round-trip float notation, so it parses back bit-exactly.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use super::{Dense, Mlp, Scaling};
use crate::bytes::Reader;
use crate::{Error, Result};

pub const MAGIC: &[u8; 4] = b"CMT1";
pub const VERSION: u32 = 2;

pub fn encode(networks: &[&Mlp]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(networks.len() as u32).to_le_bytes());
    for net in networks {
        out.extend_from_slice(&(net.layers().len() as u32).to_le_bytes());
        for layer in net.layers() {
            out.extend_from_slice(&(layer.out_dim() as u32).to_le_bytes());
            out.extend_from_slice(&(layer.in_dim() as u32).to_le_bytes());
            for v in layer.weights().iter().chain(layer.biases()) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        match net.scaling() {
            None => out.extend_from_slice(&0u32.to_le_bytes()),
            Some(s) => {
                out.extend_from_slice(&1u32.to_le_bytes());
                for v in s
                    .in_shift
                    .iter()
                    .chain(&s.in_scale)
                    .chain(&s.out_shift)
                    .chain(&s.out_scale)
                {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
    }
    out
}

pub fn decode(bytes: &[u8], origin: &Path) -> Result<Vec<Mlp>> {
    let mut r = Reader::new(bytes, origin);
    if r.take(4)? != MAGIC {
        return Err(Error::load(origin, "bad magic, not a CMT1 checkpoint"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::load(
            origin,
            format!("unsupported checkpoint version {version}"),
        ));
    }
    let count = r.u32()? as usize;
    let mut nets = Vec::with_capacity(count.min(1024));
    for n in 0..count {
        let layer_count = r.u32()? as usize;
        if layer_count == 0 {
            return Err(Error::load(origin, format!("network {n} has no layers")));
        }
        let mut layers = Vec::with_capacity(layer_count.min(64));
        for _ in 0..layer_count {
            let rows = r.u32()? as usize;
            let cols = r.u32()? as usize;
            let weights = r.f64s(rows * cols)?;
            let biases = r.f64s(rows)?;
            layers.push(
                Dense::new(rows, cols, weights, biases)
                    .map_err(|e| Error::load(origin, e.to_string()))?,
            );
        }
        let mut net = Mlp::from_layers(layers)
            .map_err(|e| Error::load(origin, format!("network {n}: {e}")))?;
        let scaling = match r.u32()? {
            0 => None,
            1 => {
                let (i, o) = (net.input_dim(), net.output_dim());
                Some(Scaling {
                    in_shift: r.f64s(i)?,
                    in_scale: r.f64s(i)?,
                    out_shift: r.f64s(o)?,
                    out_scale: r.f64s(o)?,
                })
            }
            f => {
                return Err(Error::load(
                    origin,
                    format!("network {n}: bad scaling flag {f}"),
                ))
            }
        };
        net.set_scaling(scaling)
            .map_err(|e| Error::load(origin, format!("network {n}: {e}")))?;
        nets.push(net);
    }
    if !r.is_empty() {
        return Err(Error::load(origin, "trailing bytes after last network"));
    }
    Ok(nets)
}

pub fn save(path: &Path, networks: &[&Mlp]) -> Result<()> {
    fs::write(path, encode(networks)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Vec<Mlp>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}

pub fn export_text(networks: &[Mlp], out: &mut impl Write) -> std::io::Result<()> {
    writeln!(out, "# CMT1 text export")?;
    writeln!(out, "networks {}", networks.len())?;
    for (n, net) in networks.iter().enumerate() {
        writeln!(out, "network {n} layers {}", net.layers().len())?;
        for (l, layer) in net.layers().iter().enumerate() {
            writeln!(
                out,
                "layer {l} rows {} cols {}",
                layer.out_dim(),
                layer.in_dim()
            )?;
            for v in layer.weights().iter().chain(layer.biases()) {
                writeln!(out, "{v:?}")?;
            }
        }
        match net.scaling() {
            None => writeln!(out, "scaling 0")?,
            Some(s) => {
                writeln!(out, "scaling 1")?;
                for v in s
                    .in_shift
                    .iter()
                    .chain(&s.in_scale)
                    .chain(&s.out_shift)
                    .chain(&s.out_scale)
                {
                    writeln!(out, "{v:?}")?;
                }
            }
        }
    }
    Ok(())
}

pub fn export_text_file(networks: &[Mlp], path: &Path) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    export_text(networks, &mut w)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

pub fn import_text(text: &str) -> Result<Vec<Mlp>> {
    let mut lines = text
        .lines()
        .filter(|l| !l.starts_with('#') && !l.trim().is_empty());
    fn header<'a>(lines: &mut impl Iterator<Item = &'a str>, expect: &str) -> Result<Vec<usize>> {
        let bad = |msg: String| Error::Config(format!("text checkpoint: {msg}"));
        let line = lines
            .next()
            .ok_or_else(|| bad(format!("missing '{expect}' line")))?;
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.first() != Some(&expect) {
            return Err(bad(format!("expected '{expect}', got '{line}'")));
        }
        parts
            .iter()
            .skip(1)
            .filter_map(|p| p.parse::<usize>().ok())
            .map(Ok)
            .collect()
    }
    fn value<'a>(lines: &mut impl Iterator<Item = &'a str>) -> Result<f64> {
        let line = lines
            .next()
            .ok_or_else(|| Error::Config("text checkpoint: truncated values".into()))?;
        line.trim()
            .parse::<f64>()
            .map_err(|e| Error::Config(format!("text checkpoint: '{line}': {e}")))
    }
    let count = header(&mut lines, "networks")?[0];
    let mut nets = Vec::with_capacity(count);
    for _ in 0..count {
        let layer_count = header(&mut lines, "network")?[1];
        let mut layers = Vec::with_capacity(layer_count);
        for _ in 0..layer_count {
            let dims = header(&mut lines, "layer")?;
            let (rows, cols) = (dims[1], dims[2]);
            let mut values = Vec::with_capacity(rows * cols + rows);
            for _ in 0..rows * cols + rows {
                values.push(value(&mut lines)?);
            }
            let biases = values.split_off(rows * cols);
            layers.push(Dense::new(rows, cols, values, biases)?);
        }
        let mut net = Mlp::from_layers(layers)?;
        if header(&mut lines, "scaling")?[0] == 1 {
            let (i, o) = (net.input_dim(), net.output_dim());
            let mut take = |n: usize| {
                (0..n)
                    .map(|_| value(&mut lines))
                    .collect::<Result<Vec<f64>>>()
            };
            let scaling = Scaling {
                in_shift: take(i)?,
                in_scale: take(i)?,
                out_shift: take(o)?,
                out_scale: take(o)?,
            };
            net.set_scaling(Some(scaling))?;
        }
        nets.push(net);
    }
    Ok(nets)
}
