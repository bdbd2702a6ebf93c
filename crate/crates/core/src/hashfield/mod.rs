//! Per-object radiance field: hash-grid encoding, a density MLP and a
//! view-dependent color MLP, with hand-written reverse mode for every
//! parameter and for the input position and direction.

mod checkpoint;
mod encoding;
mod mlp;
pub mod sh;

use serde::{Deserialize, Serialize};

pub use checkpoint::{read_checkpoint, write_checkpoint};
pub use encoding::{corner_weight, spatial_hash, Encoding, EncodingCache, HashGridConfig, Level};
pub use mlp::MlpLayout;

use crate::datamodel::{Aabb, Rng};
use crate::error::{invalid, Error, Result};
use crate::scalar::Real;

/// Raw density above this value is clamped before the exponential.
pub const DENSITY_RAW_CLAMP: f64 = 12.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FieldConfig {
    pub grid: HashGridConfig,
    pub hidden_width: usize,
    pub density_hidden_layers: usize,
    pub color_hidden_layers: usize,
    /// Density-MLP outputs beyond the raw density, fed to the color MLP.
    pub geo_feature_dim: usize,
    pub sh_degree: usize,
    /// Grid features start uniform in `[-s, s]`.
    pub grid_init_scale: f64,
}

impl Default for FieldConfig {
    fn default() -> Self {
        Self {
            grid: HashGridConfig::default(),
            hidden_width: 64,
            density_hidden_layers: 1,
            color_hidden_layers: 2,
            geo_feature_dim: 15,
            sh_degree: 4,
            grid_init_scale: 1e-4,
        }
    }
}

impl FieldConfig {
    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        if self.hidden_width == 0 {
            return Err(invalid("field", "hidden width must be positive"));
        }
        if !(1..=4).contains(&self.sh_degree) {
            return Err(invalid("field", "spherical-harmonics degree must be in 1..=4"));
        }
        Ok(())
    }

    fn density_dims(&self) -> Vec<usize> {
        let mut d = vec![self.grid.output_dim()];
        d.extend(std::iter::repeat(self.hidden_width).take(self.density_hidden_layers));
        d.push(1 + self.geo_feature_dim);
        d
    }

    fn color_dims(&self) -> Vec<usize> {
        let mut d = vec![self.geo_feature_dim + sh::n_coeffs(self.sh_degree)];
        d.extend(std::iter::repeat(self.hidden_width).take(self.color_hidden_layers));
        d.push(3);
        d
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FieldOutput<T> {
    pub sigma: T,
    pub color: [T; 3],
}

/// Gradient of a scalar objective w.r.t. one sample's inputs (world frame).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PointGrad<T> {
    pub position: [T; 3],
    pub direction: [T; 3],
}

/// Activations retained by [`HashField::forward`] for the backward pass.
#[derive(Clone, Debug)]
pub struct SampleCache<T> {
    enc: EncodingCache<T>,
    density_acts: Vec<Vec<T>>,
    color_acts: Vec<Vec<T>>,
    dir: [T; 3],
    raw: T,
    sigma: T,
    color: [T; 3],
}

/// Reusable buffers for [`HashField::backward`].
#[derive(Clone, Debug)]
pub struct BackwardScratch<T> {
    density: Vec<Vec<T>>,
    color: Vec<Vec<T>>,
    d_density_out: Vec<T>,
    d_color_in: Vec<T>,
    d_enc: Vec<T>,
}

/// Gradient accumulator: dense for the MLPs, sparse `(offset, value)`
/// pairs for the grid so workers can be merged in a fixed order.
#[derive(Clone, Debug)]
pub struct FieldGrads<T> {
    pub mlp: Vec<T>,
    pub grid: Vec<(u32, T)>,
}

impl<T: Real> FieldGrads<T> {
    pub fn clear(&mut self) {
        self.mlp.iter_mut().for_each(|g| *g = T::zero());
        self.grid.clear();
    }

    /// Adds these gradients into a dense vector laid out like the parameters.
    pub fn add_to_dense(&self, grid_len: usize, dense: &mut [T]) {
        for &(i, v) in &self.grid {
            dense[i as usize] += v;
        }
        for (d, &g) in dense[grid_len..].iter_mut().zip(&self.mlp) {
            *d += g;
        }
    }

    pub fn to_dense(&self, n_params: usize, grid_len: usize) -> Vec<T> {
        let mut d = vec![T::zero(); n_params];
        self.add_to_dense(grid_len, &mut d);
        d
    }
}

#[derive(Clone, Debug)]
pub struct HashField<T> {
    config: FieldConfig,
    aabb: Aabb,
    encoding: Encoding,
    density: MlpLayout,
    color: MlpLayout,
    grid_len: usize,
    aabb_min: [T; 3],
    inv_extent: [T; 3],
    params: Vec<T>,
}

impl<T: Real> HashField<T> {
    /// All-zero parameters.
    pub fn zeros(config: FieldConfig, aabb: Aabb) -> Result<Self> {
        config.validate()?;
        aabb.validate()?;
        let grid_len = config.grid.n_params();
        let density = MlpLayout::new(config.density_dims(), 0);
        let color = MlpLayout::new(config.color_dims(), density.len());
        let n = grid_len + density.len() + color.len();
        let ext = aabb.extent();
        Ok(Self {
            encoding: Encoding::new(config.grid),
            config,
            aabb,
            density,
            color,
            grid_len,
            aabb_min: aabb.min.map(T::lit),
            inv_extent: ext.map(|e| T::lit(1.0 / e)),
            params: vec![T::zero(); n],
        })
    }

    /// Grid uniform in `[-s, s]`; each MLP layer uniform with a fan-in
    /// scaled bound (`sqrt(6/fan_in)` before ReLU, `sqrt(3/fan_in)` at outputs).
    pub fn new(config: FieldConfig, aabb: Aabb, rng: &mut Rng) -> Result<Self> {
        let mut f = Self::zeros(config, aabb)?;
        let s = config.grid_init_scale;
        for p in &mut f.params[..f.grid_len] {
            *p = T::lit(rng.uniform_range(-s, s));
        }
        let g = f.grid_len;
        for layout in [f.density.clone(), f.color.clone()] {
            for k in 0..layout.n_layers() {
                let fan_in = layout.dims()[k] as f64;
                let gain = if k + 1 == layout.n_layers() { 3.0 } else { 6.0 };
                let bound = (gain / fan_in).sqrt();
                for p in &mut f.params[g + layout.layer_range(k).start..g + layout.layer_range(k).end] {
                    *p = T::lit(rng.uniform_range(-bound, bound));
                }
            }
        }
        Ok(f)
    }

    pub fn config(&self) -> &FieldConfig {
        &self.config
    }

    pub fn aabb(&self) -> &Aabb {
        &self.aabb
    }

    pub fn encoding(&self) -> &Encoding {
        &self.encoding
    }

    /// Layout of the density network; offsets count from the end of the grid block.
    pub fn density_layout(&self) -> &MlpLayout {
        &self.density
    }

    /// Layout of the color network; offsets count from the end of the grid block.
    pub fn color_layout(&self) -> &MlpLayout {
        &self.color
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    /// Length of the grid block at the front of the parameter vector.
    pub fn grid_len(&self) -> usize {
        self.grid_len
    }

    pub fn check_finite(&self) -> Result<()> {
        if self.params.iter().all(|p| p.is_finite()) {
            Ok(())
        } else {
            Err(Error::DivergedParameters)
        }
    }

    /// Replaces the parameters (length must match).
    pub fn set_params(&mut self, params: Vec<T>) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(invalid(
                "field parameters",
                format!("expected {}, got {}", self.params.len(), params.len()),
            ));
        }
        self.params = params;
        Ok(())
    }

    /// Same parameters in another scalar type.
    pub fn cast<U: Real>(&self) -> HashField<U> {
        let mut out = HashField::<U>::zeros(self.config, self.aabb).expect("validated config");
        for (o, &p) in out.params.iter_mut().zip(&self.params) {
            *o = U::lit(p.to_f64_lossy());
        }
        out
    }

    pub fn new_cache(&self) -> SampleCache<T> {
        SampleCache {
            enc: EncodingCache::new(self.config.grid.n_levels),
            density_acts: self.density.activation_buffers(),
            color_acts: self.color.activation_buffers(),
            dir: [T::zero(); 3],
            raw: T::zero(),
            sigma: T::zero(),
            color: [T::zero(); 3],
        }
    }

    pub fn new_scratch(&self) -> BackwardScratch<T> {
        BackwardScratch {
            density: self.density.activation_buffers(),
            color: self.color.activation_buffers(),
            d_density_out: vec![T::zero(); self.density.output_dim()],
            d_color_in: vec![T::zero(); self.color.input_dim()],
            d_enc: vec![T::zero(); self.density.input_dim()],
        }
    }

    pub fn new_grads(&self) -> FieldGrads<T> {
        FieldGrads {
            mlp: vec![T::zero(); self.params.len() - self.grid_len],
            grid: Vec::new(),
        }
    }

    /// World position to the box-normalized unit cube, clamped.
    #[inline]
    pub fn normalize(&self, p: [T; 3]) -> ([T; 3], [bool; 3]) {
        let mut u = [T::zero(); 3];
        let mut clamped = [false; 3];
        for k in 0..3 {
            let v = (p[k] - self.aabb_min[k]) * self.inv_extent[k];
            clamped[k] = v < T::zero() || v > T::one();
            u[k] = v.max(T::zero()).min(T::one());
        }
        (u, clamped)
    }

    /// Hash-grid features at a world position.
    pub fn encode(&self, position: [T; 3]) -> Vec<T> {
        let (u, _) = self.normalize(position);
        let mut out = vec![T::zero(); self.config.grid.output_dim()];
        let mut cache = EncodingCache::new(self.config.grid.n_levels);
        self.encoding
            .encode(&self.params[..self.grid_len], u, &mut out, &mut cache);
        out
    }

    /// Evaluates density and color at one sample, keeping activations in `cache`.
    pub fn forward(
        &self,
        position: [T; 3],
        direction: [T; 3],
        cache: &mut SampleCache<T>,
    ) -> Result<FieldOutput<T>> {
        let (u, clamped) = self.normalize(position);
        cache.enc.clamped = clamped;
        let (grid, mlp) = self.params.split_at(self.grid_len);
        self.encoding
            .encode(grid, u, &mut cache.density_acts[0], &mut cache.enc);
        self.density.forward(mlp, &mut cache.density_acts);
        let out = cache.density_acts.last().unwrap();
        let raw = out[0];
        let geo = self.config.geo_feature_dim;
        cache.color_acts[0][..geo].copy_from_slice(&out[1..]);
        sh::basis(direction, &mut cache.color_acts[0][geo..]);
        self.color.forward(mlp, &mut cache.color_acts);
        let logits = cache.color_acts.last().unwrap();
        let color = [0, 1, 2].map(|k| T::one() / (T::one() + (-logits[k]).exp()));
        let sigma = raw.min(T::lit(DENSITY_RAW_CLAMP)).exp();
        if !(sigma.is_finite() && color.iter().all(|c| c.is_finite())) {
            return Err(Error::DivergedParameters);
        }
        cache.dir = direction;
        cache.raw = raw;
        cache.sigma = sigma;
        cache.color = color;
        Ok(FieldOutput { sigma, color })
    }

    /// Reverse pass for one sample. Parameter gradients are accumulated in
    /// `grads`; the returned value is the gradient w.r.t. the sample's world
    /// position and (unnormalized) view direction.
    pub fn backward(
        &self,
        d_sigma: T,
        d_color: [T; 3],
        cache: &SampleCache<T>,
        grads: &mut FieldGrads<T>,
        scratch: &mut BackwardScratch<T>,
    ) -> PointGrad<T> {
        let (grid, mlp) = self.params.split_at(self.grid_len);
        let d_raw = if cache.raw < T::lit(DENSITY_RAW_CLAMP) {
            d_sigma * cache.sigma
        } else {
            T::zero()
        };
        let d_logits: [T; 3] =
            [0, 1, 2].map(|k| d_color[k] * cache.color[k] * (T::one() - cache.color[k]));
        self.color.backward(
            mlp,
            &cache.color_acts,
            &d_logits,
            &mut grads.mlp,
            &mut scratch.color,
            &mut scratch.d_color_in,
        );
        let geo = self.config.geo_feature_dim;
        scratch.d_density_out[0] = d_raw;
        scratch.d_density_out[1..].copy_from_slice(&scratch.d_color_in[..geo]);
        let direction = sh::basis_vjp(cache.dir, &scratch.d_color_in[geo..]);
        self.density.backward(
            mlp,
            &cache.density_acts,
            &scratch.d_density_out,
            &mut grads.mlp,
            &mut scratch.density,
            &mut scratch.d_enc,
        );
        let sink = &mut grads.grid;
        let d_unit = self
            .encoding
            .backward(grid, &scratch.d_enc, &cache.enc, |i, v| sink.push((i as u32, v)));
        PointGrad {
            position: [0, 1, 2].map(|k| d_unit[k] * self.inv_extent[k]),
            direction,
        }
    }
}
