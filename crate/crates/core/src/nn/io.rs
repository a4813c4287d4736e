//! Versioned little-endian binary format for [`NetworkParams`].
//!
//! Layout: magic `XBARNET\0`, `u32` version, `u32` layer count, then per
//! layer a `u32` kind (0 dense, 1 conv), a `u32` activation (0 none, 1 relu),
//! the `u32` dimensions of the kind, the weights row by row and the biases,
//! all as `f64`.

use std::path::Path;

use super::{Activation, Architecture, LayerKind, LayerParams, LayerSpec, NetworkParams};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

const MAGIC: &[u8; 8] = b"XBARNET\0";
const VERSION: u32 = 1;

pub fn to_bytes(params: &NetworkParams) -> Vec<u8> {
    let mut out = Vec::new();
    let u32le = |out: &mut Vec<u8>, v: usize| out.extend_from_slice(&(v as u32).to_le_bytes());
    out.extend_from_slice(MAGIC);
    u32le(&mut out, VERSION as usize);
    u32le(&mut out, params.layers.len());
    for (spec, p) in params.arch.layers.iter().zip(&params.layers) {
        match spec.kind {
            LayerKind::Dense { inputs, outputs } => {
                u32le(&mut out, 0);
                u32le(&mut out, matches!(spec.activation, Activation::Relu) as usize);
                u32le(&mut out, inputs);
                u32le(&mut out, outputs);
            }
            LayerKind::Conv {
                in_channels,
                out_channels,
                in_h,
                in_w,
                kernel_h,
                kernel_w,
            } => {
                u32le(&mut out, 1);
                u32le(&mut out, matches!(spec.activation, Activation::Relu) as usize);
                for d in [in_channels, out_channels, in_h, in_w, kernel_h, kernel_w] {
                    u32le(&mut out, d);
                }
            }
        }
        for v in p.weights.as_slice().iter().chain(&p.bias) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos + n;
        if end > self.bytes.len() {
            return Err(Error::format("parameter file", format!("truncated at byte {}", self.pos)));
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| Error::format("parameter file", "size overflow"))?)?;
        Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }
}

pub fn from_bytes(bytes: &[u8]) -> Result<NetworkParams> {
    let bad = |d: String| Error::format("parameter file", d);
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(8)? != MAGIC {
        return Err(bad("bad magic".into()));
    }
    let version = c.u32()?;
    if version != VERSION as usize {
        return Err(bad(format!("unsupported version {version}")));
    }
    let n = c.u32()?;
    let mut specs = Vec::with_capacity(n);
    let mut layers = Vec::with_capacity(n);
    for i in 0..n {
        let kind = c.u32()?;
        let activation = match c.u32()? {
            0 => Activation::None,
            1 => Activation::Relu,
            a => return Err(bad(format!("layer {i}: unknown activation code {a}"))),
        };
        let spec = match kind {
            0 => LayerSpec::dense(c.u32()?, c.u32()?, activation),
            1 => {
                let d: Vec<usize> = (0..6).map(|_| c.u32()).collect::<Result<_>>()?;
                LayerSpec::conv(d[0], d[1], (d[2], d[3]), (d[4], d[5]), activation)
            }
            k => return Err(bad(format!("layer {i}: unknown kind code {k}"))),
        };
        let weights = Matrix::from_vec(spec.neurons(), spec.fan_in(), c.f64s(spec.neurons() * spec.fan_in())?)?;
        let bias = c.f64s(spec.neurons())?;
        specs.push(spec);
        layers.push(LayerParams { weights, bias });
    }
    if c.pos != bytes.len() {
        return Err(bad(format!("{} trailing bytes", bytes.len() - c.pos)));
    }
    let params = NetworkParams {
        arch: Architecture::new(specs)?,
        layers,
    };
    params.validate()?;
    Ok(params)
}

pub fn save(params: &NetworkParams, path: &Path) -> Result<()> {
    std::fs::write(path, to_bytes(params))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<NetworkParams> {
    from_bytes(&std::fs::read(path)?)
}
