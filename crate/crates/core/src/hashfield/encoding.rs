//! Multiresolution hash-grid encoding.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::scalar::Real;

const PRIMES: [u32; 3] = [1, 2_654_435_761, 805_459_861];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HashGridConfig {
    pub n_levels: usize,
    /// Entries per level.
    pub table_size: usize,
    pub features_per_entry: usize,
    /// Cells per axis at the coarsest level.
    pub base_resolution: usize,
    /// Cells per axis at the finest level.
    pub finest_resolution: usize,
}

impl Default for HashGridConfig {
    fn default() -> Self {
        Self {
            n_levels: 16,
            table_size: 1 << 19,
            features_per_entry: 2,
            base_resolution: 16,
            finest_resolution: 2048,
        }
    }
}

impl HashGridConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_levels == 0 || self.table_size == 0 || self.features_per_entry == 0 {
            return Err(invalid("hash grid", "levels, table size and features must be positive"));
        }
        if self.table_size > u32::MAX as usize {
            return Err(invalid("hash grid", "table size exceeds 2^32"));
        }
        if self.base_resolution == 0 || self.finest_resolution < self.base_resolution {
            return Err(invalid("hash grid", "need 0 < base_resolution <= finest_resolution"));
        }
        Ok(())
    }

    /// Per-level growth factor `b`.
    pub fn growth(&self) -> f64 {
        if self.n_levels == 1 {
            return 1.0;
        }
        ((self.finest_resolution as f64).ln() - (self.base_resolution as f64).ln())
            / (self.n_levels - 1) as f64
    }

    /// `floor(base * b^l)`.
    pub fn resolution(&self, level: usize) -> usize {
        let r = self.base_resolution as f64 * (self.growth() * level as f64).exp();
        // Exact powers can land a hair below the integer.
        ((r + 1e-9).floor() as usize).max(1)
    }

    pub fn output_dim(&self) -> usize {
        self.n_levels * self.features_per_entry
    }

    pub fn n_params(&self) -> usize {
        self.n_levels * self.table_size * self.features_per_entry
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Level {
    pub resolution: usize,
    pub dense: bool,
}

#[inline]
pub fn spatial_hash(c: [u32; 3], table_size: usize) -> usize {
    let h = c[0].wrapping_mul(PRIMES[0]) ^ c[1].wrapping_mul(PRIMES[1]) ^ c[2].wrapping_mul(PRIMES[2]);
    h as usize % table_size
}

#[derive(Clone, Debug)]
pub struct Encoding {
    config: HashGridConfig,
    levels: Vec<Level>,
}

/// Corner lookup for one sample: 8 entry indices and the cell-local fraction
/// per level, enough to replay interpolation in the backward pass.
#[derive(Clone, Debug, Default)]
pub struct EncodingCache<T> {
    /// Parameter offset of each corner's first feature, `[level][corner]`.
    pub corners: Vec<u32>,
    pub fracs: Vec<[T; 3]>,
    /// Axes where the normalized position was clamped to the unit cube.
    pub clamped: [bool; 3],
}

impl<T: Real> EncodingCache<T> {
    pub fn new(n_levels: usize) -> Self {
        Self {
            corners: vec![0; n_levels * 8],
            fracs: vec![[T::zero(); 3]; n_levels],
            clamped: [false; 3],
        }
    }
}

/// Trilinear weight of corner `c` (bit k set = upper corner on axis k).
#[inline]
pub fn corner_weight<T: Real>(frac: [T; 3], c: usize) -> T {
    let mut w = T::one();
    for k in 0..3 {
        w *= if c >> k & 1 == 1 { frac[k] } else { T::one() - frac[k] };
    }
    w
}

impl Encoding {
    pub fn new(config: HashGridConfig) -> Self {
        let levels = (0..config.n_levels)
            .map(|l| {
                let resolution = config.resolution(l);
                let dense_size = (resolution as u128 + 1).pow(3);
                Level {
                    resolution,
                    dense: dense_size <= config.table_size as u128,
                }
            })
            .collect();
        Self { config, levels }
    }

    pub fn config(&self) -> &HashGridConfig {
        &self.config
    }

    pub fn levels(&self) -> &[Level] {
        &self.levels
    }

    /// Table slot of integer grid vertex `c` on `level`.
    #[inline]
    pub fn slot(&self, level: usize, c: [u32; 3]) -> usize {
        let lv = self.levels[level];
        if lv.dense {
            let s = lv.resolution + 1;
            c[0] as usize + s * (c[1] as usize + s * c[2] as usize)
        } else {
            spatial_hash(c, self.config.table_size)
        }
    }

    /// Offset of the first feature of `slot` on `level` in the grid block.
    #[inline]
    pub fn entry_offset(&self, level: usize, slot: usize) -> usize {
        (level * self.config.table_size + slot) * self.config.features_per_entry
    }

    /// Locates the cell containing `unit` (already in `[0,1]^3`) on `level`.
    #[inline]
    pub fn locate<T: Real>(&self, level: usize, unit: [T; 3]) -> ([u32; 3], [T; 3]) {
        let res = self.levels[level].resolution;
        let res_t = T::lit(res as f64);
        let mut cell = [0u32; 3];
        let mut frac = [T::zero(); 3];
        for k in 0..3 {
            let p = unit[k] * res_t;
            let c = p.floor().to_usize().unwrap_or(0).min(res - 1);
            cell[k] = c as u32;
            frac[k] = p - T::lit(c as f64);
        }
        (cell, frac)
    }

    /// Encodes a normalized position; writes `n_levels * F` features.
    pub fn encode<T: Real>(
        &self,
        grid: &[T],
        unit: [T; 3],
        out: &mut [T],
        cache: &mut EncodingCache<T>,
    ) {
        let f = self.config.features_per_entry;
        out.iter_mut().for_each(|o| *o = T::zero());
        for l in 0..self.levels.len() {
            let (cell, frac) = self.locate(l, unit);
            cache.fracs[l] = frac;
            let feat = &mut out[l * f..(l + 1) * f];
            for c in 0..8 {
                let corner = [0, 1, 2].map(|k| cell[k] + (c >> k & 1) as u32);
                let off = self.entry_offset(l, self.slot(l, corner));
                cache.corners[l * 8 + c] = off as u32;
                let w = corner_weight(frac, c);
                for j in 0..f {
                    feat[j] += w * grid[off + j];
                }
            }
        }
    }

    /// Backward pass: scatters grid gradients through `push(offset, value)`
    /// and returns the gradient w.r.t. the normalized position.
    pub fn backward<T: Real>(
        &self,
        grid: &[T],
        d_out: &[T],
        cache: &EncodingCache<T>,
        mut push: impl FnMut(usize, T),
    ) -> [T; 3] {
        let f = self.config.features_per_entry;
        let mut d_unit = [T::zero(); 3];
        for l in 0..self.levels.len() {
            let frac = cache.fracs[l];
            let g = &d_out[l * f..(l + 1) * f];
            let res = T::lit(self.levels[l].resolution as f64);
            for c in 0..8 {
                let off = cache.corners[l * 8 + c] as usize;
                let w = corner_weight(frac, c);
                let mut proj = T::zero();
                for j in 0..f {
                    if g[j] != T::zero() {
                        push(off + j, w * g[j]);
                    }
                    proj += g[j] * grid[off + j];
                }
                if proj == T::zero() {
                    continue;
                }
                for k in 0..3 {
                    // d w_c / d frac_k
                    let mut dw = if c >> k & 1 == 1 { T::one() } else { -T::one() };
                    for m in 0..3 {
                        if m != k {
                            dw *= if c >> m & 1 == 1 { frac[m] } else { T::one() - frac[m] };
                        }
                    }
                    d_unit[k] += proj * dw * res;
                }
            }
        }
        for k in 0..3 {
            if cache.clamped[k] {
                d_unit[k] = T::zero();
            }
        }
        d_unit
    }
}
