//! Independent reference implementations used only by the test targets.
#![allow(dead_code)]

use f1rapm_core::DesignRow;

/// Gram system `(XᵀWX + λI, XᵀWy)` built row by row.
fn normal_system(rows: &[DesignRow], n_cols: usize, lambda: f64) -> (Vec<Vec<f64>>, Vec<f64>) {
    let mut a = vec![vec![0.0; n_cols]; n_cols];
    let mut b = vec![0.0; n_cols];
    for r in rows {
        let mut x = vec![0.0; n_cols];
        for &(c, v) in &r.features {
            x[c] += v;
        }
        for i in 0..n_cols {
            b[i] += r.weight * x[i] * r.response;
            for j in 0..n_cols {
                a[i][j] += r.weight * x[i] * x[j];
            }
        }
    }
    for (i, row) in a.iter_mut().enumerate() {
        row[i] += lambda;
    }
    (a, b)
}

/// Nesterov-accelerated gradient descent on `Σ w (y - xβ)² + λ‖β‖²`, run until
/// the gradient norm is below `tol`.
pub fn ridge_gradient_descent(rows: &[DesignRow], n_cols: usize, lambda: f64, tol: f64) -> Vec<f64> {
    let (a, b) = normal_system(rows, n_cols, lambda);
    let grad = |beta: &[f64]| -> Vec<f64> {
        (0..n_cols)
            .map(|i| 2.0 * ((0..n_cols).map(|j| a[i][j] * beta[j]).sum::<f64>() - b[i]))
            .collect()
    };
    // Lipschitz bound from the row-sum norm.
    let lip = 2.0
        * a.iter()
            .map(|row| row.iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max);
    let step = 1.0 / lip;
    let mut beta = vec![0.0; n_cols];
    let mut prev = beta.clone();
    let mut t = 1.0f64;
    for _ in 0..5_000_000 {
        let t_next = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
        let momentum = (t - 1.0) / t_next;
        let y: Vec<f64> = beta.iter().zip(&prev).map(|(b, p)| b + momentum * (b - p)).collect();
        let g = grad(&y);
        let next: Vec<f64> = y.iter().zip(&g).map(|(y, g)| y - step * g).collect();
        prev = std::mem::replace(&mut beta, next);
        t = t_next;
        let g_now = grad(&beta);
        if g_now.iter().map(|v| v * v).sum::<f64>().sqrt() < tol {
            break;
        }
        // Restart momentum when the objective direction turns.
        if g_now.iter().zip(beta.iter().zip(&prev)).map(|(g, (b, p))| g * (b - p)).sum::<f64>() > 0.0 {
            t = 1.0;
        }
    }
    beta
}

/// Penalized negative log-likelihood with an unpenalized intercept.
pub fn logistic_objective(rows: &[DesignRow], intercept: f64, beta: &[f64], lambda: f64) -> f64 {
    let mut nll = 0.0;
    for r in rows {
        let z = intercept + r.features.iter().map(|&(c, v)| beta[c] * v).sum::<f64>();
        nll += r.weight * ((1.0 + z.exp()).ln() - r.response * z);
    }
    nll + 0.5 * lambda * beta.iter().map(|b| b * b).sum::<f64>()
}

/// Exhaustive grid minimization over (intercept, β₀, β₁), zooming in around the
/// best cell until the spacing is below `resolution`.
pub fn logistic_grid_search(rows: &[DesignRow], lambda: f64, resolution: f64) -> (f64, [f64; 2]) {
    let mut center = [0.0f64; 3];
    let mut half = 8.0f64;
    let steps = 40;
    while half / steps as f64 > resolution / 4.0 {
        let h = 2.0 * half / steps as f64;
        let mut best = (f64::INFINITY, center);
        for i in 0..=steps {
            for j in 0..=steps {
                for k in 0..=steps {
                    let p = [
                        center[0] - half + h * i as f64,
                        center[1] - half + h * j as f64,
                        center[2] - half + h * k as f64,
                    ];
                    let f = logistic_objective(rows, p[0], &p[1..], lambda);
                    if f < best.0 {
                        best = (f, p);
                    }
                }
            }
        }
        center = best.1;
        half = 4.0 * h;
    }
    (center[0], [center[1], center[2]])
}

/// Kendall tau-a by enumerating every pair.
pub fn kendall_brute(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len();
    let (mut c, mut d) = (0i64, 0i64);
    for i in 0..n {
        for j in i + 1..n {
            let s = (a[i] - a[j]) * (b[i] - b[j]);
            if s > 0.0 {
                c += 1;
            } else if s < 0.0 {
                d += 1;
            }
        }
    }
    (c - d) as f64 / (n * (n - 1) / 2) as f64
}

/// Average ranks, ties sharing the mean of their positions.
pub fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            ranks[idx[k]] = r;
        }
        i = j + 1;
    }
    ranks
}

pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    let (ra, rb) = (average_ranks(a), average_ranks(b));
    let n = a.len() as f64;
    let ma = ra.iter().sum::<f64>() / n;
    let mb = rb.iter().sum::<f64>() / n;
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

/// Cleveland's local linear LOESS at `x0` with `q` nearest neighbours and
/// tricube weights, returning the local line `(intercept at x0, slope)`.
pub fn textbook_loess_line(xs: &[f64], ys: &[f64], x0: f64, q: usize) -> (f64, f64) {
    let mut dist: Vec<(f64, usize)> = xs.iter().enumerate().map(|(i, x)| ((x - x0).abs(), i)).collect();
    dist.sort_by(|a, b| a.0.total_cmp(&b.0));
    let h = dist[q - 1].0;
    let (mut sw, mut sx, mut sy) = (0.0, 0.0, 0.0);
    let mut pts = Vec::new();
    for &(d, i) in &dist[..q] {
        let u = d / h;
        let w = if u < 1.0 { (1.0 - u.powi(3)).powi(3) } else { 0.0 };
        pts.push((w, xs[i], ys[i]));
        sw += w;
        sx += w * xs[i];
        sy += w * ys[i];
    }
    let (mx, my) = (sx / sw, sy / sw);
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for (w, x, y) in pts {
        sxx += w * (x - mx) * (x - mx);
        sxy += w * (x - mx) * (y - my);
    }
    let slope = sxy / sxx;
    (my + slope * (x0 - mx), slope)
}
