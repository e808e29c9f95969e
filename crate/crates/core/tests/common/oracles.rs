//! Direct, unoptimised reference implementations for the metric tests.
#![allow(dead_code)]

use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;

pub fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

fn rows(x: &Array2<f64>) -> Vec<Vec<f64>> {
    x.outer_iter().map(|r| r.to_vec()).collect()
}

fn clusters(labels: &[usize]) -> Vec<usize> {
    let mut c: Vec<usize> = labels.to_vec();
    c.sort_unstable();
    c.dedup();
    c
}

pub fn silhouette(x: &Array2<f64>, labels: &[usize]) -> f64 {
    let p = rows(x);
    let mut s = 0.0;
    for i in 0..p.len() {
        let same: Vec<usize> = (0..p.len()).filter(|&j| j != i && labels[j] == labels[i]).collect();
        if same.is_empty() {
            continue;
        }
        let a = same.iter().map(|&j| euclid(&p[i], &p[j])).sum::<f64>() / same.len() as f64;
        let mut b = f64::MAX;
        for c in clusters(labels) {
            if c == labels[i] {
                continue;
            }
            let other: Vec<usize> = (0..p.len()).filter(|&j| labels[j] == c).collect();
            b = b.min(other.iter().map(|&j| euclid(&p[i], &p[j])).sum::<f64>() / other.len() as f64);
        }
        s += (b - a) / a.max(b);
    }
    s / p.len() as f64
}

fn centroid(p: &[Vec<f64>], members: &[usize]) -> Vec<f64> {
    let d = p[0].len();
    (0..d).map(|k| members.iter().map(|&j| p[j][k]).sum::<f64>() / members.len() as f64).collect()
}

pub fn davies_bouldin(x: &Array2<f64>, labels: &[usize]) -> f64 {
    let p = rows(x);
    let cs = clusters(labels);
    let members: Vec<Vec<usize>> = cs.iter().map(|&c| (0..p.len()).filter(|&j| labels[j] == c).collect()).collect();
    let cents: Vec<Vec<f64>> = members.iter().map(|m| centroid(&p, m)).collect();
    let scatter: Vec<f64> =
        members.iter().zip(&cents).map(|(m, c)| m.iter().map(|&j| euclid(&p[j], c)).sum::<f64>() / m.len() as f64).collect();
    let k = cs.len();
    let mut total = 0.0;
    for i in 0..k {
        let worst = (0..k)
            .filter(|&j| j != i)
            .map(|j| (scatter[i] + scatter[j]) / euclid(&cents[i], &cents[j]))
            .fold(f64::MIN, f64::max);
        total += worst;
    }
    total / k as f64
}

/// Uses the decomposition total scatter = within + between.
pub fn calinski_harabasz(x: &Array2<f64>, labels: &[usize]) -> f64 {
    let p = rows(x);
    let all: Vec<usize> = (0..p.len()).collect();
    let grand = centroid(&p, &all);
    let total: f64 = p.iter().map(|r| euclid(r, &grand).powi(2)).sum();
    let cs = clusters(labels);
    let mut within = 0.0;
    for &c in &cs {
        let m: Vec<usize> = (0..p.len()).filter(|&j| labels[j] == c).collect();
        let ce = centroid(&p, &m);
        within += m.iter().map(|&j| euclid(&p[j], &ce).powi(2)).sum::<f64>();
    }
    let (n, k) = (p.len() as f64, cs.len() as f64);
    ((total - within) / (k - 1.0)) / (within / (n - k))
}

pub fn dunn(x: &Array2<f64>, labels: &[usize]) -> f64 {
    let p = rows(x);
    let cs = clusters(labels);
    let mut min_sep = f64::MAX;
    let mut max_diam: f64 = 0.0;
    for &a in &cs {
        for &b in &cs {
            for i in (0..p.len()).filter(|&i| labels[i] == a) {
                for j in (0..p.len()).filter(|&j| labels[j] == b) {
                    let d = euclid(&p[i], &p[j]);
                    if a == b {
                        max_diam = max_diam.max(d);
                    } else {
                        min_sep = min_sep.min(d);
                    }
                }
            }
        }
    }
    min_sep / max_diam
}

/// One-pass sums formula.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (sa, sb) = (a.iter().sum::<f64>(), b.iter().sum::<f64>());
    let sab: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let saa: f64 = a.iter().map(|x| x * x).sum();
    let sbb: f64 = b.iter().map(|y| y * y).sum();
    (n * sab - sa * sb) / ((n * saa - sa * sa).sqrt() * (n * sbb - sb * sb).sqrt())
}

/// Non-separable 11×11 window evaluated at every valid position.
pub fn ssim(a: &Array2<f64>, b: &Array2<f64>, range: f64) -> f64 {
    let mut w = [[0.0; 11]; 11];
    let mut tot = 0.0;
    for (i, row) in w.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let (di, dj) = (i as f64 - 5.0, j as f64 - 5.0);
            *v = (-(di * di + dj * dj) / (2.0 * 1.5 * 1.5)).exp();
            tot += *v;
        }
    }
    let c1 = (0.01 * range).powi(2);
    let c2 = (0.03 * range).powi(2);
    let (h, wd) = a.dim();
    let mut acc = 0.0;
    let mut count = 0.0;
    for r in 0..=h - 11 {
        for c in 0..=wd - 11 {
            let (mut ma, mut mb, mut maa, mut mbb, mut mab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for i in 0..11 {
                for j in 0..11 {
                    let g = w[i][j] / tot;
                    let (x, y) = (a[[r + i, c + j]], b[[r + i, c + j]]);
                    ma += g * x;
                    mb += g * y;
                    maa += g * x * x;
                    mbb += g * y * y;
                    mab += g * x * y;
                }
            }
            let (va, vb, cov) = (maa - ma * ma, mbb - mb * mb, mab - ma * mb);
            acc += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            count += 1.0;
        }
    }
    acc / count
}

/// Explained variance with correlations computed by [`pearson`].
pub fn gev(maps: &Array2<f64>, templates: &Array2<f64>) -> (f64, Vec<usize>) {
    let t = rows(templates);
    let mut num = 0.0;
    let mut den = 0.0;
    let mut labels = Vec::new();
    for m in rows(maps) {
        let mean = m.iter().sum::<f64>() / m.len() as f64;
        let gfp2 = m.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / m.len() as f64;
        let rs: Vec<f64> = t.iter().map(|tk| pearson(&m, tk)).collect();
        let best = (0..rs.len()).fold(0, |b, k| if rs[k].abs() > rs[b].abs() { k } else { b });
        labels.push(best);
        num += gfp2 * rs[best] * rs[best];
        den += gfp2;
    }
    (num / den, labels)
}

/// Gaussian blobs with every cluster populated.
pub fn random_clustering<R: Rng>(rng: &mut R) -> (Array2<f64>, Vec<usize>) {
    let k = rng.gen_range(2..6);
    let n = rng.gen_range(k + 8..60);
    let d = rng.gen_range(1..6);
    let spread: f64 = rng.gen_range(0.5..4.0);
    let centres = Array2::from_shape_simple_fn((k, d), || spread * rng.sample::<f64, _>(StandardNormal));
    let labels: Vec<usize> = (0..n).map(|i| if i < k { i } else { rng.gen_range(0..k) }).collect();
    let x = Array2::from_shape_fn((n, d), |(i, j)| centres[[labels[i], j]] + rng.sample::<f64, _>(StandardNormal));
    (x, labels)
}
