//! Versioned binary checkpoint: network spec, every parameter tensor
//! (including batch-norm running statistics), and optionally the Adam
//! state. Floats are stored as raw little-endian bits, so a round trip
//! is bit-exact.

use super::{AdamParams, BatchNormState, ConvParams, FcParams, LayerSpec, LayerState, Network, NetworkSpec, OptimizerState};
use crate::{Error, Result};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

const MAGIC: &[u8; 8] = b"SPAIRCK1";

struct Writer<W: Write> {
    inner: W,
}

impl<W: Write> Writer<W> {
    fn u8(&mut self, v: u8) -> Result<()> {
        self.bytes(&[v])
    }

    fn u32(&mut self, v: u32) -> Result<()> {
        self.bytes(&v.to_le_bytes())
    }

    fn u64(&mut self, v: u64) -> Result<()> {
        self.bytes(&v.to_le_bytes())
    }

    fn f64(&mut self, v: f64) -> Result<()> {
        self.bytes(&v.to_bits().to_le_bytes())
    }

    fn vec(&mut self, v: &[f64]) -> Result<()> {
        self.u64(v.len() as u64)?;
        for &x in v {
            self.f64(x)?;
        }
        Ok(())
    }

    fn bytes(&mut self, b: &[u8]) -> Result<()> {
        self.inner
            .write_all(b)
            .map_err(|e| Error::io("writing checkpoint", e))
    }
}

struct Reader<R: Read> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn u8(&mut self) -> Result<u8> {
        let mut b = [0u8; 1];
        self.fill(&mut b)?;
        Ok(b[0])
    }

    fn u32(&mut self) -> Result<u32> {
        let mut b = [0u8; 4];
        self.fill(&mut b)?;
        Ok(u32::from_le_bytes(b))
    }

    fn u64(&mut self) -> Result<u64> {
        let mut b = [0u8; 8];
        self.fill(&mut b)?;
        Ok(u64::from_le_bytes(b))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_bits(self.u64()?))
    }

    fn vec(&mut self) -> Result<Vec<f64>> {
        let len = self.u64()? as usize;
        if len > (1 << 32) {
            return Err(Error::Checkpoint(format!("implausible tensor length {len}")));
        }
        let mut v = Vec::with_capacity(len);
        for _ in 0..len {
            v.push(self.f64()?);
        }
        Ok(v)
    }

    fn fill(&mut self, buf: &mut [u8]) -> Result<()> {
        self.inner
            .read_exact(buf)
            .map_err(|e| Error::io("reading checkpoint", e))
    }
}

/// Writes the network (and optionally optimizer state) to `path`.
pub fn save_checkpoint(path: &Path, net: &Network, opt: Option<&OptimizerState>) -> Result<()> {
    let file = std::fs::File::create(path)
        .map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
    let mut w = Writer {
        inner: BufWriter::new(file),
    };
    w.bytes(MAGIC)?;
    let (c, h, wd) = net.spec.input;
    w.u32(c as u32)?;
    w.u32(h as u32)?;
    w.u32(wd as u32)?;
    w.u32(net.spec.layers.len() as u32)?;
    for layer in &net.spec.layers {
        match *layer {
            LayerSpec::BatchNorm => w.u8(0)?,
            LayerSpec::Conv3x3 { out_channels } => {
                w.u8(1)?;
                w.u32(out_channels as u32)?;
            }
            LayerSpec::ReLU => w.u8(2)?,
            LayerSpec::MaxPool2x2 => w.u8(3)?,
            LayerSpec::Dropout { rate } => {
                w.u8(4)?;
                w.f64(rate)?;
            }
            LayerSpec::FullyConnected { out_units } => {
                w.u8(5)?;
                w.u32(out_units as u32)?;
            }
            LayerSpec::Softmax => w.u8(6)?,
        }
    }
    for layer in &net.layers {
        match layer {
            LayerState::BatchNorm(bn) => {
                w.vec(&bn.gamma)?;
                w.vec(&bn.beta)?;
                w.vec(&bn.running_mean)?;
                w.vec(&bn.running_var)?;
                w.f64(bn.momentum)?;
                w.f64(bn.eps)?;
            }
            LayerState::Conv(p) => {
                w.vec(&p.w)?;
                w.vec(&p.b)?;
            }
            LayerState::Fc(p) => {
                w.vec(&p.w)?;
                w.vec(&p.b)?;
            }
            _ => {}
        }
    }
    match opt {
        None => w.u8(0)?,
        Some(state) => {
            w.u8(1)?;
            w.f64(state.hyper.learning_rate)?;
            w.f64(state.hyper.beta1)?;
            w.f64(state.hyper.beta2)?;
            w.f64(state.hyper.epsilon)?;
            w.u64(state.step)?;
            w.u32(state.m.len() as u32)?;
            for m in &state.m {
                w.vec(m)?;
            }
            for v in &state.v {
                w.vec(v)?;
            }
        }
    }
    w.inner
        .flush()
        .map_err(|e| Error::io("flushing checkpoint", e))
}

/// Reads a checkpoint written by [`save_checkpoint`].
pub fn load_checkpoint(path: &Path) -> Result<(Network, Option<OptimizerState>)> {
    let file = std::fs::File::open(path)
        .map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
    let mut r = Reader {
        inner: BufReader::new(file),
    };
    let mut magic = [0u8; 8];
    r.fill(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint(format!(
            "bad magic {magic:02x?}; not a checkpoint or an unsupported version"
        )));
    }
    let input = (r.u32()? as usize, r.u32()? as usize, r.u32()? as usize);
    let n_layers = r.u32()? as usize;
    if n_layers > 10_000 {
        return Err(Error::Checkpoint(format!("implausible layer count {n_layers}")));
    }
    let mut layers_spec = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        let layer = match r.u8()? {
            0 => LayerSpec::BatchNorm,
            1 => LayerSpec::Conv3x3 {
                out_channels: r.u32()? as usize,
            },
            2 => LayerSpec::ReLU,
            3 => LayerSpec::MaxPool2x2,
            4 => LayerSpec::Dropout { rate: r.f64()? },
            5 => LayerSpec::FullyConnected {
                out_units: r.u32()? as usize,
            },
            6 => LayerSpec::Softmax,
            t => return Err(Error::Checkpoint(format!("unknown layer tag {t}"))),
        };
        layers_spec.push(layer);
    }
    let spec = NetworkSpec {
        input,
        layers: layers_spec,
    };
    let shapes = spec
        .shape_chain()
        .map_err(|e| Error::Checkpoint(format!("stored spec is invalid: {e}")))?;

    let mut layers = Vec::with_capacity(spec.layers.len());
    let mut cur = spec.input;
    for (i, layer) in spec.layers.iter().enumerate() {
        let state = match *layer {
            LayerSpec::BatchNorm => {
                let gamma = r.vec()?;
                let beta = r.vec()?;
                let running_mean = r.vec()?;
                let running_var = r.vec()?;
                let momentum = r.f64()?;
                let eps = r.f64()?;
                if gamma.len() != cur.0
                    || beta.len() != cur.0
                    || running_mean.len() != cur.0
                    || running_var.len() != cur.0
                {
                    return Err(Error::Checkpoint(format!(
                        "layer {i}: batch-norm tensors do not match {} channels",
                        cur.0
                    )));
                }
                LayerState::BatchNorm(BatchNormState {
                    gamma,
                    beta,
                    running_mean,
                    running_var,
                    momentum,
                    eps,
                })
            }
            LayerSpec::Conv3x3 { out_channels } => {
                let w = r.vec()?;
                let b = r.vec()?;
                if w.len() != out_channels * cur.0 * 9 || b.len() != out_channels {
                    return Err(Error::Checkpoint(format!(
                        "layer {i}: conv tensors do not match {}->{} channels",
                        cur.0, out_channels
                    )));
                }
                LayerState::Conv(ConvParams {
                    w,
                    b,
                    in_c: cur.0,
                    out_c: out_channels,
                })
            }
            LayerSpec::ReLU => LayerState::ReLU,
            LayerSpec::MaxPool2x2 => LayerState::MaxPool,
            LayerSpec::Dropout { rate } => LayerState::Dropout { rate },
            LayerSpec::FullyConnected { out_units } => {
                let w = r.vec()?;
                let b = r.vec()?;
                let in_dim = cur.0 * cur.1 * cur.2;
                if w.len() != out_units * in_dim || b.len() != out_units {
                    return Err(Error::Checkpoint(format!(
                        "layer {i}: fc tensors do not match {in_dim}->{out_units}"
                    )));
                }
                LayerState::Fc(FcParams {
                    w,
                    b,
                    in_dim,
                    out_dim: out_units,
                })
            }
            LayerSpec::Softmax => LayerState::Softmax,
        };
        layers.push(state);
        cur = shapes[i];
    }
    let net = Network { spec, layers };

    let opt = match r.u8()? {
        0 => None,
        1 => {
            let hyper = AdamParams {
                learning_rate: r.f64()?,
                beta1: r.f64()?,
                beta2: r.f64()?,
                epsilon: r.f64()?,
            };
            let step = r.u64()?;
            let n_tensors = r.u32()? as usize;
            let mut m = Vec::with_capacity(n_tensors);
            for _ in 0..n_tensors {
                m.push(r.vec()?);
            }
            let mut v = Vec::with_capacity(n_tensors);
            for _ in 0..n_tensors {
                v.push(r.vec()?);
            }
            let expected: Vec<usize> = net.param_tensors().iter().map(|t| t.len()).collect();
            let got_m: Vec<usize> = m.iter().map(Vec::len).collect();
            let got_v: Vec<usize> = v.iter().map(Vec::len).collect();
            if got_m != expected || got_v != expected {
                return Err(Error::Checkpoint(
                    "optimizer moments do not match the network parameters".into(),
                ));
            }
            Some(OptimizerState::from_parts(m, v, step, hyper))
        }
        t => return Err(Error::Checkpoint(format!("unknown optimizer flag {t}"))),
    };
    Ok((net, opt))
}
