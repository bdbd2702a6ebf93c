//! `OFP1` parameter checkpoints.
//!
//! Layout (all little-endian):
//!
//! | bytes | content |
//! |-------|---------|
//! | 4     | magic `OFP1` |
//! | 10×4  | u32: n_levels, table_size, features_per_entry, base_resolution, finest_resolution, hidden_width, density_hidden_layers, color_hidden_layers, geo_feature_dim, sh_degree |
//! | 8     | f64 grid_init_scale |
//! | 6×8   | f64 aabb min xyz, max xyz |
//! | 8     | u64 parameter count |
//! | 4×n   | f32 parameters |
//!
//! Parameter order: grid (level, slot, feature), then the density MLP
//! layers, then the color MLP layers; each layer input-major.

use super::{FieldConfig, HashField, HashGridConfig};
use crate::datamodel::Aabb;
use crate::error::{Error, Result};
use crate::scalar::Real;

const MAGIC: &[u8; 4] = b"OFP1";

pub fn write_checkpoint<T: Real>(field: &HashField<T>) -> Vec<u8> {
    let c = field.config();
    let mut out = Vec::with_capacity(4 + 40 + 8 + 48 + 8 + 4 * field.n_params());
    out.extend_from_slice(MAGIC);
    for v in [
        c.grid.n_levels,
        c.grid.table_size,
        c.grid.features_per_entry,
        c.grid.base_resolution,
        c.grid.finest_resolution,
        c.hidden_width,
        c.density_hidden_layers,
        c.color_hidden_layers,
        c.geo_feature_dim,
        c.sh_degree,
    ] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    out.extend_from_slice(&c.grid_init_scale.to_le_bytes());
    let b = field.aabb();
    for v in b.min.iter().chain(&b.max) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&(field.n_params() as u64).to_le_bytes());
    for p in field.params() {
        out.extend_from_slice(&(p.to_f64_lossy() as f32).to_le_bytes());
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.at + n > self.bytes.len() {
            return Err(Error::Format {
                kind: "checkpoint",
                why: "truncated".into(),
            });
        }
        let s = &self.bytes[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn read_checkpoint<T: Real>(bytes: &[u8]) -> Result<HashField<T>> {
    let mut cur = Cursor { bytes, at: 0 };
    if cur.take(4)? != MAGIC {
        return Err(Error::Format {
            kind: "checkpoint",
            why: "missing OFP1 magic".into(),
        });
    }
    let grid = HashGridConfig {
        n_levels: cur.u32()?,
        table_size: cur.u32()?,
        features_per_entry: cur.u32()?,
        base_resolution: cur.u32()?,
        finest_resolution: cur.u32()?,
    };
    let config = FieldConfig {
        grid,
        hidden_width: cur.u32()?,
        density_hidden_layers: cur.u32()?,
        color_hidden_layers: cur.u32()?,
        geo_feature_dim: cur.u32()?,
        sh_degree: cur.u32()?,
        grid_init_scale: cur.f64()?,
    };
    let mut min = [0.0; 3];
    let mut max = [0.0; 3];
    for v in min.iter_mut().chain(max.iter_mut()) {
        *v = cur.f64()?;
    }
    let n = u64::from_le_bytes(cur.take(8)?.try_into().unwrap()) as usize;
    let mut field = HashField::<T>::zeros(config, Aabb::new(min, max)?)?;
    if n != field.n_params() {
        return Err(Error::Format {
            kind: "checkpoint",
            why: format!("{n} parameters for a config that needs {}", field.n_params()),
        });
    }
    let payload = cur.take(4 * n)?;
    if cur.at != bytes.len() {
        return Err(Error::Format {
            kind: "checkpoint",
            why: "trailing bytes".into(),
        });
    }
    for (p, c) in field.params_mut().iter_mut().zip(payload.chunks_exact(4)) {
        *p = T::lit(f32::from_le_bytes(c.try_into().unwrap()) as f64);
    }
    Ok(field)
}
