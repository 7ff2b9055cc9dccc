//! Dense kernels over row-major buffers. Activations are f64, weights f32.

pub const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044_715;

/// `y[n x dout] = x[n x din] * w[din x dout] + b`.
pub fn linear(x: &[f64], n: usize, din: usize, w: &[f32], b: &[f32], dout: usize) -> Vec<f64> {
    debug_assert_eq!(x.len(), n * din);
    debug_assert_eq!(w.len(), din * dout);
    let mut y = vec![0.0; n * dout];
    for i in 0..n {
        let row = &mut y[i * dout..(i + 1) * dout];
        for (r, &bj) in row.iter_mut().zip(b) {
            *r = bj as f64;
        }
        for k in 0..din {
            let xk = x[i * din + k];
            if xk == 0.0 {
                continue;
            }
            let wk = &w[k * dout..(k + 1) * dout];
            for (r, &wkj) in row.iter_mut().zip(wk) {
                *r += xk * wkj as f64;
            }
        }
    }
    y
}

/// Backward of [`linear`]: accumulates into `dw`/`db` and returns `dx`.
#[allow(clippy::too_many_arguments)]
pub fn linear_backward(
    x: &[f64],
    dy: &[f64],
    n: usize,
    din: usize,
    dout: usize,
    w: &[f32],
    dw: &mut [f64],
    db: &mut [f64],
) -> Vec<f64> {
    let mut dx = vec![0.0; n * din];
    for i in 0..n {
        let dyi = &dy[i * dout..(i + 1) * dout];
        for (g, &d) in db.iter_mut().zip(dyi) {
            *g += d;
        }
        for k in 0..din {
            let xk = x[i * din + k];
            let wk = &w[k * dout..(k + 1) * dout];
            let dwk = &mut dw[k * dout..(k + 1) * dout];
            let mut acc = 0.0;
            for ((g, &d), &wkj) in dwk.iter_mut().zip(dyi).zip(wk) {
                *g += xk * d;
                acc += d * wkj as f64;
            }
            dx[i * din + k] = acc;
        }
    }
    dx
}

#[derive(Debug, Clone, Default)]
pub struct LnCache {
    pub xhat: Vec<f64>,
    pub inv_std: Vec<f64>,
}

pub fn layer_norm(
    x: &[f64],
    n: usize,
    d: usize,
    gamma: &[f32],
    beta: &[f32],
) -> (Vec<f64>, LnCache) {
    let mut y = vec![0.0; n * d];
    let mut xhat = vec![0.0; n * d];
    let mut inv_std = vec![0.0; n];
    for i in 0..n {
        let row = &x[i * d..(i + 1) * d];
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let is = 1.0 / (var + LN_EPS).sqrt();
        inv_std[i] = is;
        for c in 0..d {
            let h = (row[c] - mean) * is;
            xhat[i * d + c] = h;
            y[i * d + c] = h * gamma[c] as f64 + beta[c] as f64;
        }
    }
    (y, LnCache { xhat, inv_std })
}

pub fn layer_norm_backward(
    dy: &[f64],
    cache: &LnCache,
    n: usize,
    d: usize,
    gamma: &[f32],
    dgamma: &mut [f64],
    dbeta: &mut [f64],
) -> Vec<f64> {
    let mut dx = vec![0.0; n * d];
    let mut dxhat = vec![0.0; d];
    for i in 0..n {
        let xh = &cache.xhat[i * d..(i + 1) * d];
        let dyi = &dy[i * d..(i + 1) * d];
        let mut mean_dxhat = 0.0;
        let mut mean_dxhat_xhat = 0.0;
        for c in 0..d {
            dgamma[c] += dyi[c] * xh[c];
            dbeta[c] += dyi[c];
            dxhat[c] = dyi[c] * gamma[c] as f64;
            mean_dxhat += dxhat[c];
            mean_dxhat_xhat += dxhat[c] * xh[c];
        }
        mean_dxhat /= d as f64;
        mean_dxhat_xhat /= d as f64;
        let is = cache.inv_std[i];
        for c in 0..d {
            dx[i * d + c] = is * (dxhat[c] - mean_dxhat - xh[c] * mean_dxhat_xhat);
        }
    }
    dx
}

/// Tanh-approximated GELU.
pub fn gelu(u: f64) -> f64 {
    0.5 * u * (1.0 + (GELU_C * (u + GELU_A * u * u * u)).tanh())
}

pub fn gelu_grad(u: f64) -> f64 {
    let t = (GELU_C * (u + GELU_A * u * u * u)).tanh();
    0.5 * (1.0 + t) + 0.5 * u * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * u * u)
}

/// In-place max-subtracted softmax; returns log of the normalizer (log-sum-exp).
pub fn softmax_in_place(row: &mut [f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
    max + sum.ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut r = vec![1000.0, 1001.0, -5.0];
        let lse = softmax_in_place(&mut r);
        assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((lse - (1001.0 + (1.0 + (-1.0f64).exp() + (-1006.0f64).exp()).ln())).abs() < 1e-9);
    }

    #[test]
    fn gelu_derivative_matches_finite_difference() {
        for &u in &[-3.0, -0.7, 0.0, 0.4, 2.5] {
            let h = 1e-6;
            let fd = (gelu(u + h) - gelu(u - h)) / (2.0 * h);
            assert!((fd - gelu_grad(u)).abs() < 1e-8, "{u}");
        }
    }

    #[test]
    fn linear_matches_hand_product() {
        // [1 2] * [[1 0 2], [0 1 3]] + [0.5 0 0]
        let y = linear(
            &[1.0, 2.0],
            1,
            2,
            &[1.0, 0.0, 2.0, 0.0, 1.0, 3.0],
            &[0.5, 0.0, 0.0],
            3,
        );
        assert_eq!(y, vec![1.5, 2.0, 8.0]);
    }
}
