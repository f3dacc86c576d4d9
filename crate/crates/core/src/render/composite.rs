//! Front-to-back alpha compositing and its adjoint.

/// Opacity of a density sample over a segment: `1 - exp(-sigma * delta)`.
pub fn density_alpha(sigma: f64, delta: f64) -> f64 {
    -(-sigma * delta).exp_m1()
}

/// `d alpha / d sigma` for [`density_alpha`].
pub fn density_alpha_grad(sigma: f64, delta: f64) -> f64 {
    delta * (-sigma * delta).exp()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Opacity of the interval between two SDF samples.
///
/// `alpha = max((Phi(s_i) - Phi(s_next)) / Phi(s_i), 0)` with `Phi(s) = sigmoid(sharpness * s)`.
/// Always in `[0, 1]`.
pub fn sdf_alpha(s_i: f64, s_next: f64, sharpness: f64) -> f64 {
    sdf_alpha_grad(s_i, s_next, sharpness).0
}

/// NeuS alpha and its partials `(alpha, d/ds_i, d/ds_next, d/dsharpness)`.
pub fn sdf_alpha_grad(s_i: f64, s_next: f64, sharpness: f64) -> (f64, f64, f64, f64) {
    let (a, b) = (sharpness * s_i, sharpness * s_next);
    let (pa, pb) = (sigmoid(a), sigmoid(b));
    if pa <= 0.0 {
        return (0.0, 0.0, 0.0, 0.0);
    }
    let alpha = (pa - pb) / pa;
    if !(alpha > 0.0) {
        return (0.0, 0.0, 0.0, 0.0);
    }
    let alpha = alpha.min(1.0);
    // alpha = 1 - pb / pa
    let ratio = pb / pa;
    let dpa = pa * (1.0 - pa);
    let dpb = pb * (1.0 - pb);
    let d_a = ratio * dpa / pa; // d alpha / d a
    let d_b = -dpb / pa; // d alpha / d b
    (alpha, d_a * sharpness, d_b * sharpness, d_a * s_i + d_b * s_next)
}

/// Result of compositing one ray.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Composite {
    pub color: [f64; 3],
    /// Transmittance after the last sample.
    pub transmittance: f64,
    /// Accumulated opacity `sum_i T_i alpha_i`.
    pub opacity: f64,
}

/// `C = sum_i T_i alpha_i c_i + T_N bg` with `T_i = prod_{j<i} (1 - alpha_j)`.
///
/// Samples must already be in front-to-back order.
pub fn composite(alphas: &[f64], colors: &[[f64; 3]], background: [f64; 3]) -> Composite {
    debug_assert_eq!(alphas.len(), colors.len());
    let mut t = 1.0;
    let mut color = [0.0; 3];
    let mut opacity = 0.0;
    for (&a, c) in alphas.iter().zip(colors) {
        let w = t * a;
        for k in 0..3 {
            color[k] += w * c[k];
        }
        opacity += w;
        t *= 1.0 - a;
    }
    for k in 0..3 {
        color[k] += t * background[k];
    }
    Composite { color, transmittance: t, opacity }
}

/// Adjoint of [`composite`]'s color for an upstream `d_color`.
///
/// Returns `(dL/dalpha_i, dL/dc_i)`. Uses the suffix radiance
/// `R_i = alpha_i c_i + (1 - alpha_i) R_{i+1}`, `R_N = bg`, so that
/// `dC/dalpha_i = T_i (c_i - R_{i+1})` without dividing by `1 - alpha_i`.
pub fn composite_backward(alphas: &[f64], colors: &[[f64; 3]], background: [f64; 3], d_color: [f64; 3]) -> (Vec<f64>, Vec<[f64; 3]>) {
    let n = alphas.len();
    let mut trans = Vec::with_capacity(n);
    let mut t = 1.0;
    for &a in alphas {
        trans.push(t);
        t *= 1.0 - a;
    }
    let mut d_alpha = vec![0.0; n];
    let mut d_c = vec![[0.0; 3]; n];
    let mut suffix = background;
    for i in (0..n).rev() {
        let (a, c) = (alphas[i], colors[i]);
        let mut g = 0.0;
        for k in 0..3 {
            g += d_color[k] * (c[k] - suffix[k]);
            d_c[i][k] = d_color[k] * trans[i] * a;
            suffix[k] = a * c[k] + (1.0 - a) * suffix[k];
        }
        d_alpha[i] = trans[i] * g;
    }
    (d_alpha, d_c)
}

/// Adjoint of the accumulated opacity: `dO/dalpha_i = T_i * T_{>i}` where the
/// second factor is the transmittance of everything behind `i`.
pub fn opacity_backward(alphas: &[f64], d_opacity: f64) -> Vec<f64> {
    // O = 1 - prod (1 - alpha_j)
    let n = alphas.len();
    let mut prefix = vec![1.0; n + 1];
    for i in 0..n {
        prefix[i + 1] = prefix[i] * (1.0 - alphas[i]);
    }
    let mut out = vec![0.0; n];
    let mut suffix = 1.0;
    for i in (0..n).rev() {
        out[i] = d_opacity * prefix[i] * suffix;
        suffix *= 1.0 - alphas[i];
    }
    out
}

/// Order in which to composite merged samples: indices sorted by depth, ties kept stable.
pub fn depth_order(depths: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..depths.len()).collect();
    idx.sort_by(|&a, &b| depths[a].total_cmp(&depths[b]));
    idx
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::LN_2;

    #[test]
    fn empty_ray_is_background() {
        let c = composite(&[], &[], [0.1, 0.2, 0.3]);
        assert_eq!(c.color, [0.1, 0.2, 0.3]);
        assert_eq!(c.transmittance, 1.0);
        assert_eq!(c.opacity, 0.0);
    }

    #[test]
    fn two_sample_hand_case() {
        let a = density_alpha(LN_2, 1.0);
        let c = composite(&[a, a], &[[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]], [0.0; 3]);
        assert!((c.color[0] - 0.5).abs() < 1e-12);
        assert!((c.color[1] - 0.25).abs() < 1e-12);
        assert_eq!(c.color[2], 0.0);
    }

    #[test]
    fn opaque_sample_saturates() {
        let c = composite(&[density_alpha(20.0, 1.0)], &[[1.0, 0.0, 0.0]], [0.0; 3]);
        assert!((c.color[0] - 1.0).abs() < 1e-8);
        assert!((c.transmittance - 2.061e-9).abs() < 1e-12);
    }

    #[test]
    fn neus_alpha_cases() {
        assert_eq!(sdf_alpha(0.3, 0.3, 20.0), 0.0);
        assert_eq!(sdf_alpha(-0.1, 0.1, 20.0), 0.0);
        assert!(sdf_alpha(0.1, -0.1, 1e4) > 1.0 - 1e-12);
        let a = sdf_alpha(0.05, 0.01, 20.0);
        assert!(a > 0.0 && a < 1.0);
    }

    #[test]
    fn neus_alpha_partials_match_differences() {
        let (s0, s1, k) = (0.04, -0.02, 30.0);
        let (_, da, db, dk) = sdf_alpha_grad(s0, s1, k);
        let h = 1e-7;
        let fd_a = (sdf_alpha(s0 + h, s1, k) - sdf_alpha(s0 - h, s1, k)) / (2.0 * h);
        let fd_b = (sdf_alpha(s0, s1 + h, k) - sdf_alpha(s0, s1 - h, k)) / (2.0 * h);
        let fd_k = (sdf_alpha(s0, s1, k + h) - sdf_alpha(s0, s1, k - h)) / (2.0 * h);
        assert!((da - fd_a).abs() < 1e-5 * fd_a.abs().max(1.0));
        assert!((db - fd_b).abs() < 1e-5 * fd_b.abs().max(1.0));
        assert!((dk - fd_k).abs() < 1e-5 * fd_k.abs().max(1.0));
    }

    #[test]
    fn backward_matches_differences() {
        let alphas = [0.2, 0.7, 0.1, 0.4];
        let colors = [[0.1, 0.5, 0.9], [0.8, 0.2, 0.3], [0.4, 0.4, 0.0], [1.0, 0.6, 0.2]];
        let bg = [0.3, 0.1, 0.2];
        let up = [0.7, -1.2, 0.4];
        let (da, dc) = composite_backward(&alphas, &colors, bg, up);
        let loss = |a: &[f64], c: &[[f64; 3]]| {
            let r = composite(a, c, bg).color;
            (0..3).map(|k| up[k] * r[k]).sum::<f64>()
        };
        let h = 1e-7;
        for i in 0..4 {
            let (mut p, mut m) = (alphas, alphas);
            p[i] += h;
            m[i] -= h;
            assert!((da[i] - (loss(&p, &colors) - loss(&m, &colors)) / (2.0 * h)).abs() < 1e-7);
            for k in 0..3 {
                let (mut p, mut m) = (colors, colors);
                p[i][k] += h;
                m[i][k] -= h;
                assert!((dc[i][k] - (loss(&alphas, &p) - loss(&alphas, &m)) / (2.0 * h)).abs() < 1e-7);
            }
        }
        let dop = opacity_backward(&alphas, 1.0);
        for i in 0..4 {
            let (mut p, mut m) = (alphas, alphas);
            p[i] += h;
            m[i] -= h;
            let fd = (composite(&p, &colors, bg).opacity - composite(&m, &colors, bg).opacity) / (2.0 * h);
            assert!((dop[i] - fd).abs() < 1e-7);
        }
    }
}
