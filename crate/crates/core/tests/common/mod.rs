// Independent reference implementations used by the integration tests.
// They favour the most literal formulation over speed.

#![allow(dead_code, clippy::needless_range_loop)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use repscope::cam::GapHead;
use repscope::matrix::Matrix;
use repscope::tensorio::Tensor;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut ChaCha8Rng, dims: Vec<usize>, lo: f32, hi: f32) -> Tensor {
    let n = dims.iter().product();
    Tensor::new(dims, (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// Cross-correlation with zero padding, one output element at a time.
pub fn conv_reference(input: &Tensor, weight: &Tensor, bias: &Tensor, stride: usize, pad: usize) -> Vec<Vec<Vec<f64>>> {
    let (c_in, h, w) = (input.dims()[0], input.dims()[1], input.dims()[2]);
    let (c_out, kh, kw) = (weight.dims()[0], weight.dims()[2], weight.dims()[3]);
    let h_out = (h + 2 * pad - kh) / stride + 1;
    let w_out = (w + 2 * pad - kw) / stride + 1;
    let x = |c: usize, y: isize, xx: isize| -> f64 {
        if y < 0 || xx < 0 || y >= h as isize || xx >= w as isize {
            0.0
        } else {
            input.data()[(c * h + y as usize) * w + xx as usize] as f64
        }
    };
    let mut out = vec![vec![vec![0.0; w_out]; h_out]; c_out];
    for o in 0..c_out {
        for oy in 0..h_out {
            for ox in 0..w_out {
                let mut acc = bias.data()[o] as f64;
                for c in 0..c_in {
                    for ky in 0..kh {
                        for kx in 0..kw {
                            let iy = (oy * stride + ky) as isize - pad as isize;
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            let wv = weight.data()[((o * c_in + c) * kh + ky) * kw + kx] as f64;
                            acc += wv * x(c, iy, ix);
                        }
                    }
                }
                out[o][oy][ox] = acc;
            }
        }
    }
    out
}

/// Pearson correlation written as the textbook ratio of sums.
pub fn pearson_reference(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let sa: f64 = a.iter().sum();
    let sb: f64 = b.iter().sum();
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - sa / n) * (y - sb / n)).sum();
    let da: f64 = a.iter().map(|x| (x - sa / n).powi(2)).sum::<f64>().sqrt();
    let db: f64 = b.iter().map(|y| (y - sb / n).powi(2)).sum::<f64>().sqrt();
    num / (da * db)
}

/// Spearman via ranks computed by counting: rank = 1 + #smaller + (#equal - 1) / 2.
pub fn spearman_reference(a: &[f64], b: &[f64]) -> f64 {
    let ranks = |v: &[f64]| -> Vec<f64> {
        v.iter()
            .map(|&x| {
                let smaller = v.iter().filter(|&&y| y < x).count() as f64;
                let equal = v.iter().filter(|&&y| y == x).count() as f64;
                1.0 + smaller + (equal - 1.0) / 2.0
            })
            .collect()
    };
    pearson_reference(&ranks(a), &ranks(b))
}

/// Align-corners bilinear resampling, evaluated pixel by pixel.
pub fn bilinear_reference(grid: &[Vec<f64>], out_h: usize, out_w: usize) -> Vec<Vec<f64>> {
    let h = grid.len();
    let w = grid[0].len();
    let coord = |i: usize, n_out: usize, n_in: usize| -> f64 {
        if n_out == 1 || n_in == 1 {
            0.0
        } else {
            i as f64 * (n_in - 1) as f64 / (n_out - 1) as f64
        }
    };
    let mut out = vec![vec![0.0; out_w]; out_h];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let y = coord(i, out_h, h);
            let x = coord(j, out_w, w);
            let (y0, x0) = (y.floor() as usize, x.floor() as usize);
            let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
            let (fy, fx) = (y - y0 as f64, x - x0 as f64);
            *v = grid[y0][x0] * (1.0 - fy) * (1.0 - fx)
                + grid[y0][x1] * (1.0 - fy) * fx
                + grid[y1][x0] * fy * (1.0 - fx)
                + grid[y1][x1] * fy * fx;
        }
    }
    out
}

/// Softmax cross-entropy plus `l2/2 * |W|^2`, computed without any shared code.
pub fn loss_reference(features: &Matrix, labels: &[usize], n_classes: usize, l2: f64, w: &[f64], b: &[f64]) -> f64 {
    let k = features.cols();
    let mut total = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        let x = features.row(i);
        let z: Vec<f64> = (0..n_classes)
            .map(|c| b[c] + (0..k).map(|j| w[c * k + j] * x[j]).sum::<f64>())
            .collect();
        let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        total += lse - z[y];
    }
    total / labels.len() as f64 + 0.5 * l2 * w.iter().map(|v| v * v).sum::<f64>()
}

/// Central differences of `loss_reference` over every parameter; returns
/// (dW, db).
pub fn finite_difference_grad(
    features: &Matrix,
    labels: &[usize],
    n_classes: usize,
    l2: f64,
    w: &[f64],
    b: &[f64],
    h: f64,
) -> (Vec<f64>, Vec<f64>) {
    let f = |w: &[f64], b: &[f64]| loss_reference(features, labels, n_classes, l2, w, b);
    let gw = (0..w.len())
        .map(|i| {
            let mut p = w.to_vec();
            let mut m = w.to_vec();
            p[i] += h;
            m[i] -= h;
            (f(&p, b) - f(&m, b)) / (2.0 * h)
        })
        .collect();
    let gb = (0..b.len())
        .map(|i| {
            let mut p = b.to_vec();
            let mut m = b.to_vec();
            p[i] += h;
            m[i] -= h;
            (f(w, &p) - f(w, &m)) / (2.0 * h)
        })
        .collect();
    (gw, gb)
}

/// Euclidean distances between the rows of `points`.
pub fn distances(points: &[Vec<f64>]) -> Matrix {
    let n = points.len();
    Matrix::from_fn(n, n, |i, j| {
        points[i]
            .iter()
            .zip(&points[j])
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt()
    })
}

pub fn relative_frobenius(a: &Matrix, b: &Matrix) -> f64 {
    let diff: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt();
    diff / b.frobenius()
}

/// Random head with weights in [-1, 1].
pub fn random_head(rng: &mut ChaCha8Rng, n_classes: usize, n_channels: usize) -> GapHead {
    let w = (0..n_classes * n_channels)
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    let b = (0..n_classes).map(|_| rng.random_range(-1.0..1.0)).collect();
    GapHead::new("layer", n_classes, n_channels, w, b).unwrap()
}

/// Two Gaussian blobs in `dim` dimensions, centred at -offset and +offset
/// on every axis.
pub fn two_blobs(rng: &mut ChaCha8Rng, per_class: usize, dim: usize, offset: f64, sd: f64) -> (Matrix, Vec<usize>) {
    use rand_distr::{Distribution, Normal};
    let normal = Normal::new(0.0, sd).unwrap();
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for class in 0..2 {
        let centre = if class == 0 { -offset } else { offset };
        for _ in 0..per_class {
            rows.push((0..dim).map(|_| centre + normal.sample(rng)).collect::<Vec<f64>>());
            labels.push(class);
        }
    }
    (Matrix::from_rows(&rows).unwrap(), labels)
}

/// The blobs are separable iff a threshold on the projection onto the
/// difference of class means splits them; this checks that margin.
pub fn separable_along_mean_difference(x: &Matrix, labels: &[usize]) -> bool {
    let dim = x.cols();
    let mut means = [vec![0.0; dim], vec![0.0; dim]];
    let mut counts = [0.0f64; 2];
    for (i, &y) in labels.iter().enumerate() {
        counts[y] += 1.0;
        for j in 0..dim {
            means[y][j] += x[(i, j)];
        }
    }
    let dir: Vec<f64> = (0..dim)
        .map(|j| means[1][j] / counts[1] - means[0][j] / counts[0])
        .collect();
    let proj = |i: usize| (0..dim).map(|j| x[(i, j)] * dir[j]).sum::<f64>();
    let max0 = (0..labels.len())
        .filter(|&i| labels[i] == 0)
        .map(proj)
        .fold(f64::NEG_INFINITY, f64::max);
    let min1 = (0..labels.len())
        .filter(|&i| labels[i] == 1)
        .map(proj)
        .fold(f64::INFINITY, f64::min);
    max0 < min1
}
