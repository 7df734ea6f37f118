//! Separable Gaussian smoothing for scalar grids and vector fields.

fn kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil().max(1.0) as usize;
    let k: Vec<f64> = (0..=2 * radius)
        .map(|i| {
            let d = i as f64 - radius as f64;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Gaussian blur with per-tap renormalization at the borders, so constants
/// are preserved exactly up to rounding. `sigma <= 0` returns a copy.
pub fn gaussian_smooth(data: &[f64], dims: [usize; 3], sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return data.to_vec();
    }
    let k = kernel(sigma);
    let r = (k.len() / 2) as i64;
    let mut cur = data.to_vec();
    let mut next = vec![0.0; data.len()];
    let strides = [1, dims[0], dims[0] * dims[1]];
    for axis in 0..3 {
        let n = dims[axis] as i64;
        if n == 1 {
            continue;
        }
        let stride = strides[axis];
        for (i, out) in next.iter_mut().enumerate() {
            let pos = ((i / stride) % dims[axis]) as i64;
            let lo = (pos - r).max(0);
            let hi = (pos + r).min(n - 1);
            let mut acc = 0.0;
            let mut wsum = 0.0;
            for q in lo..=hi {
                let w = k[(q - pos + r) as usize];
                let j = (i as i64 + (q - pos) * stride as i64) as usize;
                acc += w * cur[j];
                wsum += w;
            }
            *out = acc / wsum;
        }
        std::mem::swap(&mut cur, &mut next);
    }
    cur
}

/// Smooths each component of an interleaved `[x, y, z]` vector buffer.
pub fn gaussian_smooth_vectors(flat: &[f64], dims: [usize; 3], sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return flat.to_vec();
    }
    let n = flat.len() / 3;
    let mut out = vec![0.0; flat.len()];
    for c in 0..3 {
        let comp: Vec<f64> = (0..n).map(|i| flat[3 * i + c]).collect();
        let s = gaussian_smooth(&comp, dims, sigma);
        for (i, v) in s.into_iter().enumerate() {
            out[3 * i + c] = v;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preserves_constants_and_mass_center() {
        let dims = [7, 5, 4];
        let d = vec![3.0; 140];
        let s = gaussian_smooth(&d, dims, 1.5);
        assert!(s.iter().all(|v| (v - 3.0).abs() < 1e-12));

        // far from the borders the renormalization is inactive
        let n = 13;
        let c = 6 + n * (6 + n * 6);
        let mut spike = vec![0.0; n * n * n];
        spike[c] = 1.0;
        let s = gaussian_smooth(&spike, [n, n, n], 1.0);
        let total: f64 = s.iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert!(s[c] > s[c + 1]);
        assert!((s[c + 1] - s[c - 1]).abs() < 1e-15);
    }

    #[test]
    fn zero_sigma_is_copy() {
        let d: Vec<f64> = (0..24).map(f64::from).collect();
        assert_eq!(gaussian_smooth(&d, [2, 3, 4], 0.0), d);
    }
}
