use serde::{Deserialize, Serialize};

use crate::isolation::RayClass;
use crate::scalar::Real;

/// Transmittance below which a ray counts as opaque for depth supervision
/// and below which marching stops.
pub const OPAQUE_TRANSMITTANCE: f64 = 1e-4;

/// Smoothing inside the color residual norm so its gradient stays finite
/// at zero.
pub const NORM_EPS: f64 = 1e-6;

/// How negative rays (and the background behind any ray) are supervised.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NegativeTarget {
    /// The random color is composited behind every ray, `Ĉ + T·c_random`,
    /// and negatives are trained towards `c_random`. An empty field matches
    /// any random color exactly.
    #[default]
    Composited,
    /// `Ĉ − c_random` without compositing.
    Literal,
}

/// Color residual for one ray, `None` for masked rays.
///
/// `gt_color` is required for positive rays.
pub fn rgb_residual<T: Real>(
    class: RayClass,
    color: [T; 3],
    t_final: T,
    gt_color: Option<[T; 3]>,
    c_random: [T; 3],
    mode: NegativeTarget,
) -> Option<[T; 3]> {
    let pred = match mode {
        NegativeTarget::Composited => [0, 1, 2].map(|k| color[k] + t_final * c_random[k]),
        NegativeTarget::Literal => color,
    };
    let target = match class {
        RayClass::Masked => return None,
        RayClass::Positive => gt_color.expect("positive rays carry a color"),
        RayClass::Negative => c_random,
    };
    Some([0, 1, 2].map(|k| pred[k] - target[k]))
}

/// `|D̂ − d_gt|` for positive, opaque rays with a depth measurement; zero
/// otherwise.
pub fn depth_residual<T: Real>(class: RayClass, depth: T, t_final: T, d_gt: Option<T>) -> T {
    match depth_gate(class, t_final, d_gt) {
        Some(d) => (depth - d).abs(),
        None => T::zero(),
    }
}

pub(crate) fn depth_gate<T: Real>(class: RayClass, t_final: T, d_gt: Option<T>) -> Option<T> {
    let d = d_gt?;
    (class == RayClass::Positive && t_final < T::lit(OPAQUE_TRANSMITTANCE) && d > T::zero()).then_some(d)
}

/// Smoothed Euclidean norm and its gradient.
pub(crate) fn norm_and_grad<T: Real>(e: [T; 3]) -> (T, [T; 3]) {
    let n = (e[0] * e[0] + e[1] * e[1] + e[2] * e[2] + T::lit(NORM_EPS * NORM_EPS)).sqrt();
    (n, e.map(|x| x / n))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::Rng;

    #[test]
    fn positive_match_is_zero() {
        let c = [0.2f64, 0.4, 0.6];
        for mode in [NegativeTarget::Composited, NegativeTarget::Literal] {
            let r = rgb_residual(RayClass::Positive, c, 0.0, Some(c), [0.9; 3], mode).unwrap();
            assert_eq!(r, [0.0; 3]);
        }
    }

    #[test]
    fn masked_has_no_residual() {
        let r = rgb_residual(RayClass::Masked, [0.1f64; 3], 0.3, None, [0.5; 3], NegativeTarget::Composited);
        assert!(r.is_none());
    }

    #[test]
    fn literal_negative_on_empty_field() {
        // E|c|^2 = 3 * E[u^2] = 1 for u ~ U(0, 1).
        let mut rng = Rng::new(8);
        let n = 200_000;
        let mut sum = 0.0;
        for _ in 0..n {
            let c = [rng.uniform(), rng.uniform(), rng.uniform()];
            let r = rgb_residual(RayClass::Negative, [0.0; 3], 1.0, None, c, NegativeTarget::Literal).unwrap();
            sum += r.iter().map(|x| x * x).sum::<f64>();
        }
        let mean = sum / n as f64;
        // Standard error of |c|^2 is about sqrt(var / n) with var = 3 * (1/5 - 1/9).
        let se = (3.0 * (0.2 - 1.0 / 9.0) / n as f64).sqrt();
        assert!((mean - 1.0).abs() < 5.0 * se, "{mean}");
    }

    #[test]
    fn composited_negative_on_empty_field_is_zero() {
        let c = [0.3, 0.8, 0.1];
        let r = rgb_residual(RayClass::Negative, [0.0f64; 3], 1.0, None, c, NegativeTarget::Composited).unwrap();
        assert_eq!(r, [0.0; 3]);
    }

    #[test]
    fn depth_gate_cases() {
        assert_eq!(depth_residual(RayClass::Positive, 1.0f64, 0.5, Some(0.9)), 0.0);
        assert_eq!(depth_residual(RayClass::Positive, 0.9f64, 1e-6, Some(0.9)), 0.0);
        assert!((depth_residual(RayClass::Positive, 1.0f64, 1e-6, Some(0.9)) - 0.1).abs() < 1e-12);
        assert_eq!(depth_residual(RayClass::Positive, 1.0f64, 1e-6, Some(0.0)), 0.0);
        assert_eq!(depth_residual(RayClass::Positive, 1.0f64, 1e-6, None), 0.0);
        assert_eq!(depth_residual(RayClass::Negative, 1.0f64, 1e-6, Some(0.9)), 0.0);
    }
}
