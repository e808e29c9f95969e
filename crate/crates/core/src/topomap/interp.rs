//! Clough–Tocher piecewise-cubic interpolation of scattered 2-D data.
//!
//! Each Delaunay triangle is split at its centroid into three cubic Bézier
//! patches that join with C1 continuity. Vertex gradients come from a
//! distance-weighted least-squares quadratic fit over the two-ring
//! neighbourhood, so the whole interpolant is linear in the data values.
//! Outside the convex hull the value at the nearest hull point is extended
//! along the gradient interpolated there.

use std::collections::{BTreeSet, HashMap};

use nalgebra::{DMatrix, DVector};
use ndarray::Array2;
use spade::{DelaunayTriangulation, Point2, Triangulation};

use crate::error::{Error, Result};

type P = [f64; 2];

fn sub(a: P, b: P) -> P {
    [a[0] - b[0], a[1] - b[1]]
}

fn dot(a: P, b: P) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

#[derive(Debug, Clone)]
pub struct CloughTocher {
    points: Vec<P>,
    triangles: Vec<[usize; 3]>,
    hull_edges: Vec<[usize; 2]>,
    /// Row `i` maps the value vector to `∂f/∂x` (resp. `∂f/∂y`) at vertex `i`.
    grad_x: Array2<f64>,
    grad_y: Array2<f64>,
}

/// Where a query point falls.
#[derive(Debug, Clone, Copy)]
enum Location {
    Inside { tri: usize, bary: [f64; 3] },
    Outside { edge: usize, t: f64, foot: P },
}

impl CloughTocher {
    pub fn new(points: &[P]) -> Result<Self> {
        if points.len() < 4 {
            return Err(Error::invalid(format!("interpolation needs at least 4 points, got {}", points.len())));
        }
        let mut dt = DelaunayTriangulation::<Point2<f64>>::new();
        let mut handle_to_index = HashMap::new();
        for (i, p) in points.iter().enumerate() {
            let h = dt
                .insert(Point2::new(p[0], p[1]))
                .map_err(|e| Error::invalid(format!("cannot triangulate point {i}: {e:?}")))?;
            if handle_to_index.insert(h.index(), i).is_some() {
                return Err(Error::degenerate(format!("point {i} duplicates an earlier point")));
            }
        }
        let triangles: Vec<[usize; 3]> = dt
            .inner_faces()
            .map(|f| {
                let v = f.vertices();
                [0, 1, 2].map(|k| handle_to_index[&v[k].fix().index()])
            })
            .collect();
        if triangles.is_empty() {
            return Err(Error::degenerate("electrode positions are collinear"));
        }
        let mut edge_count: HashMap<[usize; 2], usize> = HashMap::new();
        for t in &triangles {
            for k in 0..3 {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                *edge_count.entry([a.min(b), a.max(b)]).or_default() += 1;
            }
        }
        let mut hull_edges: Vec<[usize; 2]> = edge_count.iter().filter(|(_, &c)| c == 1).map(|(e, _)| *e).collect();
        hull_edges.sort_unstable();
        let (grad_x, grad_y) = gradient_operators(points, &triangles);
        Ok(Self { points: points.to_vec(), triangles, hull_edges, grad_x, grad_y })
    }

    pub fn n_points(&self) -> usize {
        self.points.len()
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    fn locate(&self, p: P) -> Location {
        for (ti, t) in self.triangles.iter().enumerate() {
            let [a, b, c] = t.map(|i| self.points[i]);
            let det = (b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]);
            let l1 = ((p[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (p[1] - a[1])) / det;
            let l2 = ((b[0] - a[0]) * (p[1] - a[1]) - (p[0] - a[0]) * (b[1] - a[1])) / det;
            let l0 = 1.0 - l1 - l2;
            let tol = -1e-12;
            if l0 >= tol && l1 >= tol && l2 >= tol {
                return Location::Inside { tri: ti, bary: [l0, l1, l2] };
            }
        }
        let mut best = (f64::INFINITY, 0, 0.0, [0.0, 0.0]);
        for (ei, e) in self.hull_edges.iter().enumerate() {
            let (a, b) = (self.points[e[0]], self.points[e[1]]);
            let ab = sub(b, a);
            let t = (dot(sub(p, a), ab) / dot(ab, ab)).clamp(0.0, 1.0);
            let foot = [a[0] + t * ab[0], a[1] + t * ab[1]];
            let d = dot(sub(p, foot), sub(p, foot));
            if d < best.0 {
                best = (d, ei, t, foot);
            }
        }
        Location::Outside { edge: best.1, t: best.2, foot: best.3 }
    }

    /// Vertex gradients for a value vector.
    pub fn gradients(&self, values: &[f64]) -> Vec<P> {
        let v = ndarray::ArrayView1::from(values);
        let gx = self.grad_x.dot(&v);
        let gy = self.grad_y.dot(&v);
        gx.iter().zip(gy.iter()).map(|(&x, &y)| [x, y]).collect()
    }

    pub fn eval(&self, values: &[f64], p: P) -> f64 {
        assert_eq!(values.len(), self.points.len(), "one value per point");
        let g = self.gradients(values);
        self.eval_at(values, &g, self.locate(p), p)
    }

    fn eval_at(&self, f: &[f64], g: &[P], loc: Location, p: P) -> f64 {
        match loc {
            Location::Inside { tri, bary } => self.eval_triangle(f, g, tri, bary),
            Location::Outside { edge, t, foot } => {
                let [a, b] = self.hull_edges[edge];
                let (pa, pb) = (self.points[a], self.points[b]);
                let ab = sub(pb, pa);
                let bab = f[a] + dot(g[a], ab) / 3.0;
                let bba = f[b] - dot(g[b], ab) / 3.0;
                let s = 1.0 - t;
                let on_edge = s * s * s * f[a] + 3.0 * s * s * t * bab + 3.0 * s * t * t * bba + t * t * t * f[b];
                let grad = [s * g[a][0] + t * g[b][0], s * g[a][1] + t * g[b][1]];
                on_edge + dot(grad, sub(p, foot))
            }
        }
    }

    fn eval_triangle(&self, f: &[f64], g: &[P], tri: usize, lam: [f64; 3]) -> f64 {
        let v = self.triangles[tri];
        let pos = v.map(|i| self.points[i]);
        let fv = v.map(|i| f[i]);
        let gv = v.map(|i| g[i]);
        let q = [(pos[0][0] + pos[1][0] + pos[2][0]) / 3.0, (pos[0][1] + pos[1][1] + pos[2][1]) / 3.0];
        // b[i][j]: edge ordinate next to vertex i on edge i→j.
        let mut b = [[0.0; 3]; 3];
        let mut a = [0.0; 3];
        for i in 0..3 {
            for j in 0..3 {
                if i != j {
                    b[i][j] = fv[i] + dot(gv[i], sub(pos[j], pos[i])) / 3.0;
                }
            }
            a[i] = fv[i] + dot(gv[i], sub(q, pos[i])) / 3.0;
        }
        // c[i]: centre ordinate of the sub-triangle opposite vertex i, chosen
        // so the cross-boundary derivative is linear along the outer edge.
        let mut c = [0.0; 3];
        for i in 0..3 {
            let (j, k) = ((i + 1) % 3, (i + 2) % 3);
            let e = sub(pos[k], pos[j]);
            let m = [(pos[j][0] + pos[k][0]) / 2.0, (pos[j][1] + pos[k][1]) / 2.0];
            let r = dot(sub(q, m), e) / dot(e, e);
            let (du, dv) = (-0.5 + r, -0.5 - r);
            let e0 = du * fv[j] + dv * b[j][k] + a[j];
            let e2 = du * b[k][j] + dv * fv[k] + a[k];
            c[i] = 0.5 * (e0 + e2) - du * b[j][k] - dv * b[k][j];
        }
        // e_pt[j]: ordinate on the internal edge from vertex j to the centroid.
        let mut e_pt = [0.0; 3];
        for j in 0..3 {
            let (i, k) = ((j + 2) % 3, (j + 1) % 3);
            e_pt[j] = (a[j] + c[i] + c[k]) / 3.0;
        }
        let qv = (e_pt[0] + e_pt[1] + e_pt[2]) / 3.0;

        let i = (0..3).min_by(|&x, &y| lam[x].total_cmp(&lam[y])).expect("three vertices");
        let (j, k) = ((i + 1) % 3, (i + 2) % 3);
        let w = 3.0 * lam[i];
        let u = lam[j] - lam[i];
        let v = lam[k] - lam[i];
        u * u * u * fv[j]
            + v * v * v * fv[k]
            + w * w * w * qv
            + 3.0 * u * u * v * b[j][k]
            + 3.0 * u * v * v * b[k][j]
            + 3.0 * u * u * w * a[j]
            + 3.0 * v * v * w * a[k]
            + 3.0 * u * w * w * e_pt[j]
            + 3.0 * v * w * w * e_pt[k]
            + 6.0 * u * v * w * c[i]
    }

    /// Dense `(queries, points)` matrix `W` with `W·f` = interpolated values at `queries`.
    pub fn weight_matrix(&self, queries: &[P]) -> Array2<f64> {
        let n = self.points.len();
        let locs: Vec<Location> = queries.iter().map(|&q| self.locate(q)).collect();
        let mut w = Array2::zeros((queries.len(), n));
        let mut unit = vec![0.0; n];
        for col in 0..n {
            unit.iter_mut().for_each(|u| *u = 0.0);
            unit[col] = 1.0;
            let g = self.gradients(&unit);
            for (row, (&loc, &q)) in locs.iter().zip(queries).enumerate() {
                w[[row, col]] = self.eval_at(&unit, &g, loc, q);
            }
        }
        w
    }
}

/// Linear operators giving vertex gradients from values.
fn gradient_operators(points: &[P], triangles: &[[usize; 3]]) -> (Array2<f64>, Array2<f64>) {
    let n = points.len();
    let mut adj = vec![BTreeSet::new(); n];
    for t in triangles {
        for k in 0..3 {
            let (a, b) = (t[k], t[(k + 1) % 3]);
            adj[a].insert(b);
            adj[b].insert(a);
        }
    }
    let mut gx = Array2::zeros((n, n));
    let mut gy = Array2::zeros((n, n));
    for i in 0..n {
        let mut ring: BTreeSet<usize> = adj[i].clone();
        for &j in &adj[i] {
            ring.extend(adj[j].iter().copied());
        }
        ring.remove(&i);
        let nb: Vec<usize> = ring.into_iter().collect();
        // Full quadratic where well posed, otherwise a plane.
        let quad = nb.len() >= 6;
        let cols = if quad { 5 } else { 2 };
        let mut a = DMatrix::<f64>::zeros(nb.len(), cols);
        let mut wts = DVector::<f64>::zeros(nb.len());
        for (r, &j) in nb.iter().enumerate() {
            let d = sub(points[j], points[i]);
            let w = 1.0 / dot(d, d);
            wts[r] = w.sqrt();
            let row = [d[0], d[1], 0.5 * d[0] * d[0], d[0] * d[1], 0.5 * d[1] * d[1]];
            for c in 0..cols {
                a[(r, c)] = row[c] * wts[r];
            }
        }
        let pinv = match a.clone().pseudo_inverse(1e-12) {
            Ok(p) => p,
            Err(_) => continue,
        };
        // gradient = pinv · diag(w) · (f_nb − f_i)
        for (r, &j) in nb.iter().enumerate() {
            let cx = pinv[(0, r)] * wts[r];
            let cy = pinv[(1, r)] * wts[r];
            gx[[i, j]] += cx;
            gy[[i, j]] += cy;
            gx[[i, i]] -= cx;
            gy[[i, i]] -= cy;
        }
    }
    (gx, gy)
}
