//! Binary checkpoint container for [`FieldParams`].
//!
//! Layout, all integers `u32` little-endian, all reals `f64` little-endian:
//!
//! ```text
//! magic            8 bytes  "SDFILLCK"
//! format_version   u32      (currently 1)
//! encoding_levels  u32
//! include_input    u32      0 or 1
//! network_count    u32      2: sdf, then color
//! per network:
//!   layer_count    u32
//!   per layer:
//!     in_dim       u32
//!     out_dim      u32
//!     activation   u32      0 identity, 1 relu, 2 silu, 3 sigmoid
//!     residual     u32      0 or 1
//!     weight       f64 x (out_dim * in_dim), row-major
//!     bias         f64 x out_dim
//! ```

use std::io::{Read, Write};

use super::{Activation, EncodingConfig, FieldParams, Linear, Mlp};
use crate::error::{format_error, Result};
use crate::scalar::Scalar;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"SDFILLCK";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn write_checkpoint<T: Scalar, W: Write>(params: &FieldParams<T>, mut w: W) -> Result<()> {
    w.write_all(CHECKPOINT_MAGIC)?;
    let u = |w: &mut W, v: u32| w.write_all(&v.to_le_bytes());
    u(&mut w, CHECKPOINT_VERSION)?;
    u(&mut w, params.encoding.levels as u32)?;
    u(&mut w, u32::from(params.encoding.include_input))?;
    u(&mut w, 2)?;
    for net in [&params.sdf, &params.color] {
        u(&mut w, net.layers.len() as u32)?;
        for l in &net.layers {
            u(&mut w, l.in_dim as u32)?;
            u(&mut w, l.out_dim as u32)?;
            u(&mut w, l.activation.code())?;
            u(&mut w, u32::from(l.residual))?;
            for v in l.weight.iter().chain(&l.bias) {
                w.write_all(&v.f64().to_le_bytes())?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

struct Reader<R> {
    inner: R,
    offset: usize,
}

impl<R: Read> Reader<R> {
    fn bytes<const N: usize>(&mut self, what: &str) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        self.inner.read_exact(&mut buf).map_err(|e| {
            format_error("checkpoint", format!("byte {}", self.offset), format!("reading {what}: {e}"))
        })?;
        self.offset += N;
        Ok(buf)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes::<4>(what)?))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.bytes::<8>(what)?))
    }

    fn fail(&self, msg: impl Into<String>) -> crate::error::Error {
        format_error("checkpoint", format!("byte {}", self.offset), msg)
    }
}

pub fn read_checkpoint<T: Scalar, R: Read>(r: R) -> Result<FieldParams<T>> {
    let mut rd = Reader { inner: r, offset: 0 };
    let magic = rd.bytes::<8>("magic")?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(rd.fail("bad magic"));
    }
    let version = rd.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(rd.fail(format!("unsupported format version {version}")));
    }
    let levels = rd.u32("encoding levels")? as usize;
    let include_input = match rd.u32("include_input")? {
        0 => false,
        1 => true,
        v => return Err(rd.fail(format!("include_input flag {v}"))),
    };
    let encoding = EncodingConfig { levels, include_input };
    if rd.u32("network count")? != 2 {
        return Err(rd.fail("expected two networks"));
    }
    let mut nets = Vec::with_capacity(2);
    for _ in 0..2 {
        let count = rd.u32("layer count")? as usize;
        if count == 0 || count > 64 {
            return Err(rd.fail(format!("implausible layer count {count}")));
        }
        let mut layers = Vec::with_capacity(count);
        for _ in 0..count {
            let in_dim = rd.u32("in_dim")? as usize;
            let out_dim = rd.u32("out_dim")? as usize;
            if in_dim == 0 || out_dim == 0 || in_dim * out_dim > 1 << 26 {
                return Err(rd.fail(format!("implausible layer shape {out_dim}x{in_dim}")));
            }
            let act = rd.u32("activation")?;
            let activation = Activation::from_code(act).ok_or_else(|| rd.fail(format!("activation code {act}")))?;
            let residual = rd.u32("residual")? != 0;
            if residual && in_dim != out_dim {
                return Err(rd.fail("residual layer must be square"));
            }
            let mut layer = Linear::<T>::zeros(in_dim, out_dim, activation, residual);
            for v in layer.weight.iter_mut() {
                *v = T::of(rd.f64("weight")?);
            }
            for v in layer.bias.iter_mut() {
                *v = T::of(rd.f64("bias")?);
            }
            layers.push(layer);
        }
        nets.push(Mlp { layers });
    }
    let color = nets.pop().expect("two networks");
    let sdf = nets.pop().expect("two networks");
    if sdf.input_dim() != encoding.output_dim() || color.input_dim() != encoding.output_dim() {
        return Err(rd.fail("network input width disagrees with encoding"));
    }
    if sdf.output_dim() != 1 || color.output_dim() != 3 {
        return Err(rd.fail("unexpected network output width"));
    }
    Ok(FieldParams { encoding, sdf, color })
}
