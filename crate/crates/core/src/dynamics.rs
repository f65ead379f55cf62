//! Field evaluation, the analytic Jacobian, equilibrium search and linear
//! stability classification.

use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::construct::{linspace, VectorFieldSpec};
use crate::error::{Error, Result};
use crate::factor::{product_jet, product_magnitude};

/// Relative tolerance below which an eigenvalue counts as zero.
pub const HYPERBOLICITY_TOL: f64 = 1e-12;

/// Write the field at `p` into `out` (both of length `spec.dim`).
pub fn eval_field_into(spec: &VectorFieldSpec, p: &[f64], out: &mut [f64]) {
    let x = p[0];
    let mut dx = -spec.epsilon * spec.axis_value(x);
    for pc in &spec.planes {
        let y = p[pc.plane];
        if y != 0.0 {
            dx += y * pc.f_value(x, y);
            out[pc.plane] = y * pc.g_value(x, y);
        } else {
            out[pc.plane] = 0.0;
        }
    }
    out[0] = dx;
}

pub fn eval_field(spec: &VectorFieldSpec, p: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; spec.dim];
    eval_field_into(spec, p, &mut out);
    out
}

/// Magnitude scale of the field at `p`: sum of absolute term sizes.
pub fn field_scale(spec: &VectorFieldSpec, p: &[f64]) -> f64 {
    let x = p[0];
    let mut s = spec.epsilon * spec.axis_value(x).abs();
    for pc in &spec.planes {
        let y = p[pc.plane];
        s += y.abs() * (product_magnitude(&pc.f, x, y) + product_magnitude(&pc.g, x, y));
    }
    s
}

/// Exact Jacobian assembled from factor jets.
pub fn jacobian(spec: &VectorFieldSpec, p: &[f64]) -> DMatrix<f64> {
    let mut j = DMatrix::zeros(spec.dim, spec.dim);
    jacobian_into(spec, p, &mut j);
    j
}

pub fn jacobian_into(spec: &VectorFieldSpec, p: &[f64], j: &mut DMatrix<f64>) {
    j.fill(0.0);
    let x = p[0];
    let axis = spec.axis.jet(x, 0.0);
    let mut dxx = -spec.epsilon * axis.dx;
    for pc in &spec.planes {
        let c = pc.plane;
        let y = p[c];
        let f = product_jet(&pc.f, x, y);
        let g = product_jet(&pc.g, x, y);
        let s = f64::from(pc.sign);
        dxx += y * f.dx;
        j[(0, c)] = f.value + y * f.dy;
        j[(c, 0)] = s * y * g.dx;
        j[(c, c)] = s * (g.value + y * g.dy);
    }
    j[(0, 0)] = dxx;
}

/// Central-difference Jacobian with step `h`.
pub fn jacobian_fd(spec: &VectorFieldSpec, p: &[f64], h: f64) -> DMatrix<f64> {
    let dim = spec.dim;
    let mut j = DMatrix::zeros(dim, dim);
    let mut q = p.to_vec();
    for c in 0..dim {
        q[c] = p[c] + h;
        let fp = eval_field(spec, &q);
        q[c] = p[c] - h;
        let fm = eval_field(spec, &q);
        q[c] = p[c];
        for r in 0..dim {
            j[(r, c)] = (fp[r] - fm[r]) / (2.0 * h);
        }
    }
    j
}

/// `max |J - J_fd| / max |J|` at `p`.
pub fn jacobian_fd_error(spec: &VectorFieldSpec, p: &[f64], h: f64) -> f64 {
    let exact = jacobian(spec, p);
    let fd = jacobian_fd(spec, p, h);
    let scale = exact.amax();
    let diff = (&exact - &fd).amax();
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

/// Uniform random points in `x in [0, 2n]`, `y_j in [0, 2]`.
pub fn random_interior_points<R: Rng>(spec: &VectorFieldSpec, count: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let x_hi = 2.0 * spec.n as f64;
    (0..count)
        .map(|_| {
            let mut p = Vec::with_capacity(spec.dim);
            p.push(rng.random_range(0.0..x_hi));
            for _ in 1..spec.dim {
                p.push(rng.random_range(0.0..2.0));
            }
            p
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Eigenvalue {
    pub re: f64,
    pub im: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Equilibrium {
    pub coords: Vec<f64>,
    pub on_axis: bool,
    pub is_node: bool,
    pub node_index: Option<usize>,
    /// On the axis: the Jacobian diagonal in coordinate order.
    pub eigenvalues: Vec<Eigenvalue>,
    pub plane: Option<usize>,
    pub epsilon: f64,
    /// Magnitude of the expression behind each eigenvalue, for the zero test.
    #[serde(skip)]
    pub eigenvalue_scales: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sign {
    Negative,
    Positive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StabilityLabel {
    Sink,
    Saddle,
    Source,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StabilitySignature {
    /// Sign of the real part of each eigenvalue, in eigenvalue order.
    pub signs: Vec<Sign>,
    pub label: StabilityLabel,
}

/// Size of the terms summed into each diagonal entry at `(x, 0, ..., 0)`.
pub fn axis_diagonal_scales(spec: &VectorFieldSpec, x: f64) -> Vec<f64> {
    let roots = spec.axis_roots();
    let mut axis = 0.0;
    for (i, _) in roots.iter().enumerate() {
        axis += roots
            .iter()
            .enumerate()
            .filter(|(m, _)| *m != i)
            .map(|(_, &r)| (x - r as f64).abs())
            .product::<f64>();
    }
    let mut s = Vec::with_capacity(spec.dim);
    s.push(spec.epsilon * axis);
    s.extend(spec.planes.iter().map(|pc| product_magnitude(&pc.g, x, 0.0)));
    s
}

/// Diagonal of the Jacobian at `(x, 0, ..., 0)`: `(-eps A'(x), sigma_j g_j(x, 0))`.
pub fn axis_diagonal(spec: &VectorFieldSpec, x: f64) -> Vec<f64> {
    let mut d = Vec::with_capacity(spec.dim);
    d.push(-spec.epsilon * spec.axis.jet(x, 0.0).dx);
    d.extend(spec.planes.iter().map(|pc| pc.g_value(x, 0.0)));
    d
}

fn axis_equilibrium(spec: &VectorFieldSpec, x: f64) -> Equilibrium {
    let rounded = x.round();
    let odd = rounded as i64 % 2 == 1 && (x - rounded).abs() <= 1e-9;
    let k = ((rounded as i64 + 1) / 2) as usize;
    let is_node = odd && (1..=spec.n).contains(&k);
    let mut coords = vec![0.0; spec.dim];
    coords[0] = x;
    Equilibrium {
        coords,
        on_axis: true,
        is_node,
        node_index: is_node.then_some(k),
        eigenvalues: axis_diagonal(spec, x)
            .into_iter()
            .map(|re| Eigenvalue { re, im: 0.0 })
            .collect(),
        plane: None,
        epsilon: spec.epsilon,
        eigenvalue_scales: axis_diagonal_scales(spec, x),
    }
}

/// Zeros of the axis component on `[0, 2n]` by sign-change bracketing and
/// bisection; exactly `2n - 1` are expected.
pub fn find_axis_equilibria(spec: &VectorFieldSpec) -> Result<Vec<Equilibrium>> {
    let hi = 2.0 * spec.n as f64;
    let count = 64 * spec.n + 1;
    let grid: Vec<f64> = linspace(0.0, hi, count).collect();
    let values: Vec<f64> = grid.iter().map(|&x| spec.axis_value(x)).collect();
    let mut roots = Vec::new();
    for i in 0..grid.len() {
        if values[i] == 0.0 {
            roots.push(grid[i]);
            continue;
        }
        if i + 1 < grid.len() && values[i + 1] != 0.0 && values[i].signum() != values[i + 1].signum() {
            let (mut a, mut b) = (grid[i], grid[i + 1]);
            let sa = values[i].signum();
            while b - a > 1e-15 * b.abs().max(1.0) {
                let m = 0.5 * (a + b);
                if m <= a || m >= b {
                    break;
                }
                let vm = spec.axis_value(m);
                if vm == 0.0 {
                    a = m;
                    b = m;
                } else if vm.signum() == sa {
                    a = m;
                } else {
                    b = m;
                }
            }
            roots.push(0.5 * (a + b));
        }
    }
    if roots.len() != 2 * spec.n - 1 {
        return Err(Error::ConstructionViolation(format!(
            "found {} axis equilibria, expected {}",
            roots.len(),
            2 * spec.n - 1
        )));
    }
    Ok(roots.into_iter().map(|x| axis_equilibrium(spec, x)).collect())
}

/// Equilibrium record of node `k` with its exact diagonal spectrum.
pub fn node_equilibrium(spec: &VectorFieldSpec, k: usize) -> Equilibrium {
    axis_equilibrium(spec, spec.node_positions[k - 1])
}

fn plane_residual(spec: &VectorFieldSpec, j: usize, x: f64, y: f64) -> ([f64; 2], [[f64; 2]; 2]) {
    let pc = &spec.planes[j - 1];
    let axis = spec.axis.jet(x, 0.0);
    let f = product_jet(&pc.f, x, y);
    let g = product_jet(&pc.g, x, y);
    (
        [-spec.epsilon * axis.value + y * f.value, g.value],
        [
            [-spec.epsilon * axis.dx + y * f.dx, f.value + y * f.dy],
            [g.dx, g.dy],
        ],
    )
}

fn newton_plane(spec: &VectorFieldSpec, j: usize, x0: f64, y0: f64) -> Option<(f64, f64)> {
    let (mut x, mut y) = (x0, y0);
    for _ in 0..60 {
        let (r, m) = plane_residual(spec, j, x, y);
        let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
        if !det.is_finite() || det == 0.0 {
            return None;
        }
        let sx = (r[0] * m[1][1] - r[1] * m[0][1]) / det;
        let sy = (m[0][0] * r[1] - m[1][0] * r[0]) / det;
        x -= sx;
        y -= sy;
        if !(x.is_finite() && y.is_finite()) || x.abs() > 1e3 || y.abs() > 1e3 {
            return None;
        }
        if sx.abs() + sy.abs() <= 1e-14 * (1.0 + x.abs()) {
            break;
        }
    }
    let pc = &spec.planes[j - 1];
    let (r, _) = plane_residual(spec, j, x, y);
    let scale_x = spec.epsilon * spec.axis_value(x).abs() + y.abs() * product_magnitude(&pc.f, x, y);
    let scale_g = product_magnitude(&pc.g, x, y);
    (r[0].abs() <= 1e-9 * (1.0 + scale_x) && r[1].abs() <= 1e-9 * (1.0 + scale_g)).then_some((x, y))
}

/// Off-axis equilibria of plane `j` inside `x in [0, 2n]`, `y in (0, 2]`.
pub fn find_plane_equilibria(spec: &VectorFieldSpec, plane: usize) -> Result<Vec<Equilibrium>> {
    spec.plane(plane)?;
    let hi = 2.0 * spec.n as f64;
    let xs: Vec<f64> = linspace(0.0, hi, 200).collect();
    let ys: Vec<f64> = linspace(0.0, 2.0, 200).collect();
    let seeds: Vec<(f64, f64)> = xs
        .iter()
        .flat_map(|&x| ys.iter().map(move |&y| (x, y)))
        .collect();
    let hits: Vec<Option<(f64, f64)>> = seeds
        .par_iter()
        .map(|&(x, y)| newton_plane(spec, plane, x, y))
        .collect();
    let discarded = hits.iter().filter(|h| h.is_none()).count();
    log::debug!("plane {plane}: {discarded} of {} seeds did not converge", seeds.len());

    let mut found: Vec<(f64, f64)> = Vec::new();
    for (x, y) in hits.into_iter().flatten() {
        if !(y > 1e-6 && y <= 2.0 && (0.0..=hi).contains(&x)) {
            continue;
        }
        if found
            .iter()
            .all(|&(fx, fy)| (fx - x).hypot(fy - y) > 1e-6)
        {
            found.push((x, y));
        }
    }
    found.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));

    Ok(found
        .into_iter()
        .map(|(x, y)| {
            let mut coords = vec![0.0; spec.dim];
            coords[0] = x;
            coords[plane] = y;
            let jac = jacobian(spec, &coords);
            let scale = jac.amax();
            let eig = jac.complex_eigenvalues();
            let mut eigenvalues: Vec<Eigenvalue> = eig
                .iter()
                .map(|c| Eigenvalue { re: c.re, im: c.im })
                .collect();
            eigenvalues.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
            Equilibrium {
                coords,
                on_axis: false,
                is_node: false,
                node_index: None,
                eigenvalues,
                plane: Some(plane),
                epsilon: spec.epsilon,
                eigenvalue_scales: vec![scale; spec.dim],
            }
        })
        .collect())
}

/// Eigenvalues of the 2x2 block on the `(x, y_j)` coordinates.
pub fn restricted_eigenvalues(spec: &VectorFieldSpec, p: &[f64], plane: usize) -> [Eigenvalue; 2] {
    let j = jacobian(spec, p);
    let (a, b, c, d) = (j[(0, 0)], j[(0, plane)], j[(plane, 0)], j[(plane, plane)]);
    let tr = a + d;
    let disc = (a - d) * (a - d) + 4.0 * b * c;
    if disc >= 0.0 {
        let s = disc.sqrt();
        // Stable root pair, avoiding cancellation.
        let q = 0.5 * (tr + tr.signum() * s);
        let det = a * d - b * c;
        let (l1, l2) = if q == 0.0 {
            (0.5 * (tr - s), 0.5 * (tr + s))
        } else {
            let (u, v) = (q, det / q);
            (u.min(v), u.max(v))
        };
        [Eigenvalue { re: l1, im: 0.0 }, Eigenvalue { re: l2, im: 0.0 }]
    } else {
        let im = 0.5 * (-disc).sqrt();
        [
            Eigenvalue { re: 0.5 * tr, im: -im },
            Eigenvalue { re: 0.5 * tr, im },
        ]
    }
}

/// Sign pattern and sink/saddle/source label of a hyperbolic equilibrium.
pub fn classify(eq: &Equilibrium) -> Result<StabilitySignature> {
    let fallback = eq
        .eigenvalues
        .iter()
        .map(|e| e.re.abs().max(e.im.abs()))
        .fold(0.0, f64::max);
    let mut signs = Vec::with_capacity(eq.eigenvalues.len());
    for (i, e) in eq.eigenvalues.iter().enumerate() {
        let scale = eq.eigenvalue_scales.get(i).copied().unwrap_or(fallback);
        if e.re.abs() <= HYPERBOLICITY_TOL * scale || e.re == 0.0 {
            return Err(Error::NonHyperbolic {
                coords: eq.coords.clone(),
                epsilon: eq.epsilon,
                eigenvalue: e.re,
            });
        }
        signs.push(if e.re < 0.0 { Sign::Negative } else { Sign::Positive });
    }
    let label = if signs.iter().all(|s| *s == Sign::Negative) {
        StabilityLabel::Sink
    } else if signs.iter().all(|s| *s == Sign::Positive) {
        StabilityLabel::Source
    } else {
        StabilityLabel::Saddle
    };
    Ok(StabilitySignature { signs, label })
}

/// One row per equilibrium: coordinates, flags and eigenvalues.
pub fn equilibria_csv(equilibria: &[Equilibrium]) -> Result<Vec<u8>> {
    let dim = equilibria.first().map_or(0, |e| e.coords.len());
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["x".to_string()];
    header.extend((1..dim).map(|j| format!("y{j}")));
    header.extend(["on_axis", "is_node", "node_index", "plane"].map(String::from));
    for i in 0..dim {
        header.push(format!("re{i}"));
        header.push(format!("im{i}"));
    }
    w.write_record(&header)?;
    for e in equilibria {
        let mut row: Vec<String> = e.coords.iter().map(|v| format!("{v:.17e}")).collect();
        row.push(e.on_axis.to_string());
        row.push(e.is_node.to_string());
        row.push(e.node_index.map_or(String::new(), |k| k.to_string()));
        row.push(e.plane.map_or(String::new(), |k| k.to_string()));
        for ev in &e.eigenvalues {
            row.push(format!("{:.17e}", ev.re));
            row.push(format!("{:.17e}", ev.im));
        }
        w.write_record(&row)?;
    }
    w.into_inner()
        .map_err(|e| Error::Io(e.into_error()))
}
