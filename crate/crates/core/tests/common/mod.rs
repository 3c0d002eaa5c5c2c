//! Independent reference implementations used as test oracles. These avoid
//! the library's code paths on purpose: plain loops, explicit Gauss-Jordan
//! inverses, exhaustive searches.
#![allow(dead_code)]

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_vectors(rng: &mut impl Rng, n: usize, d: usize, scale: f64) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| (0..d).map(|_| rng.gen_range(-scale..scale)).collect())
        .collect()
}

pub fn naive_rbf(a: &[f64], b: &[f64], gamma: f64) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        s += (a[i] - b[i]).powi(2);
    }
    (-gamma * s).exp()
}

pub fn naive_gram(v: &[Vec<f64>], gamma: f64, lambda: f64) -> Vec<Vec<f64>> {
    let n = v.len();
    let mut g = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            g[i][j] = naive_rbf(&v[i], &v[j], gamma) + if i == j { lambda } else { 0.0 };
        }
    }
    g
}

/// Gauss-Jordan inverse with partial pivoting.
pub fn inverse(m: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = m.len();
    let mut a: Vec<Vec<f64>> = m.to_vec();
    let mut inv: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    for c in 0..n {
        let p = (c..n).max_by(|&x, &y| a[x][c].abs().total_cmp(&a[y][c].abs())).unwrap();
        a.swap(c, p);
        inv.swap(c, p);
        let d = a[c][c];
        for j in 0..n {
            a[c][j] /= d;
            inv[c][j] /= d;
        }
        for r in 0..n {
            if r != c {
                let f = a[r][c];
                for j in 0..n {
                    a[r][j] -= f * a[c][j];
                    inv[r][j] -= f * inv[c][j];
                }
            }
        }
    }
    inv
}

pub fn mat_vec(m: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    m.iter()
        .map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum())
        .collect()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Twin GP divergence evaluated with explicit inverses.
#[allow(clippy::too_many_arguments)]
pub fn naive_objective(
    rs: &[Vec<f64>],
    xs: &[Vec<f64>],
    gamma_r: f64,
    lambda_r: f64,
    gamma_x: f64,
    lambda_x: f64,
    r: &[f64],
    x: &[f64],
) -> f64 {
    let kr_inv = inverse(&naive_gram(rs, gamma_r, lambda_r));
    let kx_inv = inverse(&naive_gram(xs, gamma_x, lambda_x));
    let k_r: Vec<f64> = rs.iter().map(|ri| naive_rbf(ri, r, gamma_r)).collect();
    let k_x: Vec<f64> = xs.iter().map(|xi| naive_rbf(xi, x, gamma_x)).collect();
    let eta = 1.0 + lambda_r - dot(&k_r, &mat_vec(&kr_inv, &k_r));
    let var_x = 1.0 + lambda_x - dot(&k_x, &mat_vec(&kx_inv, &k_x));
    1.0 + lambda_x - 2.0 * dot(&k_x, &mat_vec(&kr_inv, &k_r)) - eta * var_x.ln()
}

/// Exhaustive 1-D minimizer over `[lo, hi]` with the given step.
pub fn grid_argmin(f: impl Fn(f64) -> f64, lo: f64, hi: f64, step: f64) -> f64 {
    let n = ((hi - lo) / step).round() as usize;
    let mut best = (f64::INFINITY, lo);
    for i in 0..=n {
        let x = lo + i as f64 * step;
        let v = f(x);
        if v < best.0 {
            best = (v, x);
        }
    }
    best.1
}

pub fn euclid(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        s += (a[i] - b[i]) * (a[i] - b[i]);
    }
    s.sqrt()
}

/// Linkage distance between two clusters computed from scratch over all
/// member pairs. `kind`: 0 single, 1 complete, 2 average.
pub fn linkage_distance(points: &[Vec<f64>], a: &[usize], b: &[usize], kind: u8) -> f64 {
    let mut ds = Vec::new();
    for &i in a {
        for &j in b {
            ds.push(euclid(&points[i], &points[j]));
        }
    }
    match kind {
        0 => ds.iter().cloned().fold(f64::INFINITY, f64::min),
        1 => ds.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        _ => ds.iter().sum::<f64>() / ds.len() as f64,
    }
}

/// Greedy agglomeration by exhaustive pair search. Clusters are named by
/// their smallest member; ties go to the smallest (a, b) name pair.
/// Returns (labels in first-appearance order, merge list of (a, b, distance)).
pub fn greedy_merge(points: &[Vec<f64>], k: usize, kind: u8) -> (Vec<usize>, Vec<(usize, usize, f64)>) {
    let mut clusters: Vec<Vec<usize>> = (0..points.len()).map(|i| vec![i]).collect();
    let mut merges = Vec::new();
    while clusters.len() > k {
        let mut best: Option<(f64, usize, usize)> = None;
        for x in 0..clusters.len() {
            for y in x + 1..clusters.len() {
                let d = linkage_distance(points, &clusters[x], &clusters[y], kind);
                let better = match best {
                    None => true,
                    Some((bd, bx, by)) => {
                        d < bd || (d == bd && (clusters[x][0], clusters[y][0]) < (clusters[bx][0], clusters[by][0]))
                    }
                };
                if better {
                    best = Some((d, x, y));
                }
            }
        }
        let (d, x, y) = best.unwrap();
        merges.push((clusters[x][0], clusters[y][0], d));
        let moved = clusters.remove(y);
        clusters[x].extend(moved);
        clusters[x].sort();
        clusters.sort_by_key(|c| c[0]);
    }
    let mut owner = vec![0; points.len()];
    for (c, members) in clusters.iter().enumerate() {
        for &m in members {
            owner[m] = c;
        }
    }
    let mut relabel: Vec<Option<usize>> = vec![None; clusters.len()];
    let mut next = 0;
    let labels = owner
        .iter()
        .map(|&o| {
            *relabel[o].get_or_insert_with(|| {
                next += 1;
                next - 1
            })
        })
        .collect();
    (labels, merges)
}
