//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use poisonlab::data::{LabeledExample, TaskKind};
use poisonlab::models::loss;
use poisonlab::vector::Vector;

/// Central differences of the loss with step `h`.
pub fn fd_gradient(kind: TaskKind, alpha: &[f64], ex: &LabeledExample, h: f64) -> Vec<f64> {
    (0..alpha.len())
        .map(|j| {
            let mut up = alpha.to_vec();
            up[j] += h;
            let mut down = alpha.to_vec();
            down[j] -= h;
            (loss(kind, &up, ex).unwrap() - loss(kind, &down, ex).unwrap()) / (2.0 * h)
        })
        .collect()
}

/// Whether `σ(t/s) − s` reaches zero on `(0, 1)`, by scanning `n` values of `s`
/// (half on a geometric grid towards 0, half uniform).
pub fn logistic_root_exists(t: f64, n: usize) -> bool {
    let f = |s: f64| 1.0 / (1.0 + (-t / s).exp()) - s;
    let half = n / 2;
    let geometric = (0..half).map(|i| 10f64.powf(-12.0 + 12.0 * i as f64 / half as f64) * 0.5);
    let uniform = (1..n - half).map(|i| i as f64 / (n - half) as f64);
    geometric.chain(uniform).any(|s| s > 0.0 && s < 1.0 && f(s) >= 0.0)
}

pub fn distance_sum(points: &[[f64; 2]], y: [f64; 2]) -> f64 {
    points.iter().map(|p| ((p[0] - y[0]).powi(2) + (p[1] - y[1]).powi(2)).sqrt()).sum()
}

/// Brute-force minimizer of the sum of distances: a 201×201 grid over the
/// bounding box, then repeated zooms around the best grid point.
pub fn geomed_grid_oracle(points: &[[f64; 2]]) -> ([f64; 2], f64) {
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for p in points {
        for k in 0..2 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    let mut center = [(lo[0] + hi[0]) / 2.0, (lo[1] + hi[1]) / 2.0];
    let mut half = ((hi[0] - lo[0]).max(hi[1] - lo[1]) / 2.0).max(1e-9);
    let steps = 200;
    let mut best = (center, distance_sum(points, center));
    while half > 1e-12 {
        let spacing = 2.0 * half / steps as f64;
        for i in 0..=steps {
            for j in 0..=steps {
                let y = [center[0] - half + i as f64 * spacing, center[1] - half + j as f64 * spacing];
                let v = distance_sum(points, y);
                if v < best.1 {
                    best = (y, v);
                }
            }
        }
        for p in points {
            let v = distance_sum(points, *p);
            if v < best.1 {
                best = (*p, v);
            }
        }
        center = best.0;
        half = 4.0 * spacing;
    }
    best
}

/// Least-squares solution of `X α = y` from the normal equations, by
/// Gaussian elimination with partial pivoting.
pub fn least_squares(rows: &[Vec<f64>], y: &[f64]) -> Vec<f64> {
    let d = rows[0].len();
    let mut a = vec![vec![0.0; d + 1]; d];
    for (x, &t) in rows.iter().zip(y) {
        for i in 0..d {
            for j in 0..d {
                a[i][j] += x[i] * x[j];
            }
            a[i][d] += x[i] * t;
        }
    }
    for col in 0..d {
        let pivot = (col..d).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
        a.swap(col, pivot);
        for r in 0..d {
            if r != col {
                let f = a[r][col] / a[col][col];
                for c in col..=d {
                    a[r][c] -= f * a[col][c];
                }
            }
        }
    }
    (0..d).map(|i| a[i][d] / a[i][i]).collect()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn vector(values: &[f64]) -> Vector {
    Vector::new(values.to_vec()).unwrap()
}
