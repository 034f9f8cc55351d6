//! Reference implementations used by the integration tests and the
//! acceptance run. Everything outside `fixtures` is independent of the
//! library's numerics.
#![allow(dead_code)]

pub mod fixtures;

/// Cyclic Jacobi eigendecomposition of a symmetric matrix.
/// Returns eigenvalues descending and the matching eigenvectors as rows.
pub fn jacobi_eigen(a: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = a.len();
    let mut a: Vec<Vec<f64>> = a.to_vec();
    let mut v: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| f64::from(u8::from(i == j))).collect()).collect();
    for _sweep in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| a[i][j] * a[i][j]).sum();
        let scale: f64 = (0..n).map(|i| a[i][i] * a[i][i]).sum::<f64>().max(1e-300);
        if off <= 1e-30 * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let (vkp, vkq) = (v[k][p], v[k][q]);
                    v[k][p] = c * vkp - s * vkq;
                    v[k][q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&i, &j| a[j][j].total_cmp(&a[i][i]));
    let vals = idx.iter().map(|&i| a[i][i]).collect();
    let vecs = idx.iter().map(|&i| (0..n).map(|k| v[k][i]).collect()).collect();
    (vals, vecs)
}

/// Gaussian elimination with partial pivoting.
pub fn lu_solve(a: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
    let n = b.len();
    let mut m: Vec<Vec<f64>> = a.to_vec();
    let mut x = b.to_vec();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs())).unwrap();
        m.swap(col, piv);
        x.swap(col, piv);
        for row in col + 1..n {
            let f = m[row][col] / m[col][col];
            if f != 0.0 {
                for k in col..n {
                    m[row][k] -= f * m[col][k];
                }
                x[row] -= f * x[col];
            }
        }
    }
    for col in (0..n).rev() {
        let s: f64 = (col + 1..n).map(|k| m[col][k] * x[k]).sum();
        x[col] = (x[col] - s) / m[col][col];
    }
    x
}

/// Dense finite-volume system for a fully active `h x w` rectangle with
/// `u = left` on the left edge, `u = right` on the right edge and no-flow
/// top and bottom. Cells are numbered row-major.
pub fn dense_fv_system(h: usize, w: usize, t: &[f64], left: f64, right: f64) -> (Vec<Vec<f64>>, Vec<f64>) {
    let n = h * w;
    let mut a = vec![vec![0.0; n]; n];
    let mut b = vec![0.0; n];
    for i in 0..h {
        for j in 0..w {
            let c = i * w + j;
            let mut link = |d: usize| {
                let k = 1.0 / (0.5 / t[c] + 0.5 / t[d]);
                a[c][c] += k;
                a[c][d] -= k;
            };
            if i > 0 {
                link(c - w);
            }
            if i + 1 < h {
                link(c + w);
            }
            if j > 0 {
                link(c - 1);
            }
            if j + 1 < w {
                link(c + 1);
            }
            if j == 0 {
                a[c][c] += 2.0 * t[c];
                b[c] += 2.0 * t[c] * left;
            }
            if j + 1 == w {
                a[c][c] += 2.0 * t[c];
                b[c] += 2.0 * t[c] * right;
            }
        }
    }
    (a, b)
}

pub fn mat_mul(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let (n, k, m) = (a.len(), b.len(), b[0].len());
    (0..n).map(|i| (0..m).map(|j| (0..k).map(|p| a[i][p] * b[p][j]).sum()).collect()).collect()
}

pub fn transpose(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
    (0..a[0].len()).map(|j| a.iter().map(|row| row[j]).collect()).collect()
}

/// Generalized symmetric-definite eigenproblem `M a = t B a` through the
/// symmetric square root of `B` (both from Jacobi): eigenvalues descending
/// and eigenvectors normalized to `a^T B a = 1`, as rows.
pub fn gevp_oracle(m: &[Vec<f64>], b: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = m.len();
    let (bv, bq) = jacobi_eigen(b);
    // B^{-1/2} = Q diag(1/sqrt(l)) Q^T with Q's columns the eigenvectors
    let q = transpose(&bq);
    let d: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 / bv[i].sqrt() } else { 0.0 }).collect())
        .collect();
    let bih = mat_mul(&mat_mul(&q, &d), &bq);
    let s = mat_mul(&mat_mul(&bih, m), &bih);
    let sym: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| 0.5 * (s[i][j] + s[j][i])).collect()).collect();
    let (vals, vecs) = jacobi_eigen(&sym);
    let a = vecs
        .iter()
        .map(|y| (0..n).map(|i| (0..n).map(|k| bih[i][k] * y[k]).sum()).collect())
        .collect();
    (vals, a)
}

/// `det(M - t B)` for 3x3 matrices.
pub fn det3_pencil(m: &[Vec<f64>], b: &[Vec<f64>], t: f64) -> f64 {
    let a: Vec<Vec<f64>> = (0..3).map(|i| (0..3).map(|j| m[i][j] - t * b[i][j]).collect()).collect();
    a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1]) - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
        + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0])
}

/// Roots of `det(M - t B)` on `[lo, hi]` by scanning and bisection.
pub fn det3_roots(m: &[Vec<f64>], b: &[Vec<f64>], lo: f64, hi: f64) -> Vec<f64> {
    let steps = 20000;
    let mut roots = Vec::new();
    let f = |t: f64| det3_pencil(m, b, t);
    let mut prev_t = lo;
    let mut prev = f(lo);
    for s in 1..=steps {
        let t = lo + (hi - lo) * s as f64 / steps as f64;
        let v = f(t);
        if prev == 0.0 {
            roots.push(prev_t);
        } else if prev.signum() != v.signum() && v != 0.0 {
            let (mut a, mut bb) = (prev_t, t);
            let fa0 = prev;
            for _ in 0..200 {
                let mid = 0.5 * (a + bb);
                if f(mid).signum() == fa0.signum() {
                    a = mid;
                } else {
                    bb = mid;
                }
            }
            roots.push(0.5 * (a + bb));
        }
        prev = v;
        prev_t = t;
    }
    roots.sort_by(|a, b| b.total_cmp(a));
    roots
}

/// Null vector of a 3x3 matrix of rank 2 via the largest row cross product.
pub fn null_vector3(a: &[Vec<f64>]) -> Vec<f64> {
    let cross = |u: &[f64], v: &[f64]| vec![u[1] * v[2] - u[2] * v[1], u[2] * v[0] - u[0] * v[2], u[0] * v[1] - u[1] * v[0]];
    let cands = [cross(&a[0], &a[1]), cross(&a[0], &a[2]), cross(&a[1], &a[2])];
    cands
        .into_iter()
        .max_by(|x, y| {
            let nx: f64 = x.iter().map(|v| v * v).sum();
            let ny: f64 = y.iter().map(|v| v * v).sum();
            nx.total_cmp(&ny)
        })
        .unwrap()
}

/// Sample covariance (divisor N - 1) of `rows x cols` row-major data.
pub fn sample_cov(data: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = data.len();
    let c = data[0].len();
    let mean: Vec<f64> = (0..c).map(|j| data.iter().map(|r| r[j]).sum::<f64>() / n as f64).collect();
    (0..c)
        .map(|i| {
            (0..c)
                .map(|j| data.iter().map(|r| (r[i] - mean[i]) * (r[j] - mean[j])).sum::<f64>() / (n - 1) as f64)
                .collect()
        })
        .collect()
}

/// Box-Muller standard normals from a splitmix64 stream, independent of
/// the library's generators.
pub struct RefNormal {
    state: u64,
    spare: Option<f64>,
}

impl RefNormal {
    pub fn new(seed: u64) -> Self {
        Self { state: seed, spare: None }
    }

    fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    pub fn uniform(&mut self) -> f64 {
        ((self.next_u64() >> 11) as f64 + 0.5) / (1u64 << 53) as f64
    }

    pub fn normal(&mut self) -> f64 {
        if let Some(s) = self.spare.take() {
            return s;
        }
        let (u1, u2) = (self.uniform(), self.uniform());
        let r = (-2.0 * u1.ln()).sqrt();
        let th = 2.0 * std::f64::consts::PI * u2;
        self.spare = Some(r * th.sin());
        r * th.cos()
    }
}

/// Monte-Carlo KL divergence of `N(g, diag exp h)` from `N(0, I)` as the
/// mean log-density ratio over `n` draws from the first distribution.
pub fn mc_kl(g: &[f64], h: &[f64], n: usize, seed: u64) -> f64 {
    let mut rng = RefNormal::new(seed);
    let mut acc = 0.0;
    for _ in 0..n {
        let mut lr = 0.0;
        for i in 0..g.len() {
            let e = rng.normal();
            let z = g[i] + e * (0.5 * h[i]).exp();
            // log q(z) - log p(z), constants cancel
            lr += -0.5 * h[i] - 0.5 * e * e + 0.5 * z * z;
        }
        acc += lr;
    }
    acc / n as f64
}
