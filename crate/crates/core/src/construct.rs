//! Construction of the factored polynomial vector field.
//!
//! The field on `R^{dim}` with coordinates `(x, y_1, ..., y_{dim-1})` reads
//!
//! ```text
//! x'   = -eps * prod_{k=1}^{2n-1} (x - k) + sum_j y_j f_j(x, y_j)
//! y_j' = sigma_j * y_j * g_j(x, y_j)
//! ```
//!
//! where every `f_j` and `g_j` is kept as an ordered list of [`FactorTerm`]s.
//! Nodes sit at `x = 2k - 1` on the x-axis. Explicit mode reproduces the
//! hand-built systems for `n = 3..=6`; general mode assembles the field for
//! any `n >= 4` from index sets and wide blocking ellipses.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::factor::{product, FactorTerm};

/// Largest node count accepted by the builders.
pub const MAX_NODES: usize = 40;

/// Default ratio between the axis perturbation and the plane terms.
pub const DEFAULT_KAPPA: f64 = 0.01;

/// x-coordinate of node `k` (1-based).
#[inline]
pub fn node_x(k: usize) -> f64 {
    (2 * k) as f64 - 1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BuildMode {
    Explicit,
    General,
}

/// The `f_j` / `g_j` pair of one invariant plane `P_0j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlaneComponents {
    pub plane: usize,
    /// Factors of `f_j`; the x-component term is `y_j * prod(f)`.
    pub f: Vec<FactorTerm>,
    /// Leading sign of the `y_j` component, `+1` or `-1`.
    pub sign: i8,
    /// Factors of `g_j`; the component is `sign * y_j * prod(g)`.
    pub g: Vec<FactorTerm>,
}

impl PlaneComponents {
    pub fn f_value(&self, x: f64, y: f64) -> f64 {
        product(&self.f, x, y)
    }

    /// `sign * prod(g)`, the growth rate of `y_j`.
    pub fn g_value(&self, x: f64, y: f64) -> f64 {
        f64::from(self.sign) * product(&self.g, x, y)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VectorFieldSpec {
    pub n: usize,
    pub dim: usize,
    pub mode: BuildMode,
    pub epsilon: f64,
    /// The `AxisProduct` factor of the x-component (scaled by `-epsilon`).
    pub axis: FactorTerm,
    /// One entry per plane, `planes[j - 1].plane == j`.
    pub planes: Vec<PlaneComponents>,
    pub node_positions: Vec<f64>,
}

impl VectorFieldSpec {
    pub fn plane_count(&self) -> usize {
        self.planes.len()
    }

    pub fn plane(&self, j: usize) -> Result<&PlaneComponents> {
        self.planes
            .get(j.wrapping_sub(1))
            .ok_or_else(|| Error::InvalidArgument(format!("plane {j} does not exist for dim {}", self.dim)))
    }

    pub fn with_epsilon(&self, epsilon: f64) -> Self {
        let mut spec = self.clone();
        spec.epsilon = epsilon;
        spec
    }

    pub fn axis_roots(&self) -> &[i64] {
        match &self.axis {
            FactorTerm::AxisProduct { axis_roots } => axis_roots,
            _ => &[],
        }
    }

    pub fn axis_value(&self, x: f64) -> f64 {
        self.axis.eval(x, 0.0)
    }

    /// Node `k` as a point of `R^dim`.
    pub fn node_point(&self, k: usize) -> Vec<f64> {
        let mut p = vec![0.0; self.dim];
        p[0] = self.node_positions[k - 1];
        p
    }

    /// Domain box: `x in [-1, 2n + 1]`, `y_j in [0, 4]`.
    pub fn domain(&self) -> Domain {
        Domain {
            x_min: -1.0,
            x_max: 2.0 * self.n as f64 + 1.0,
            y_max: 4.0,
        }
    }

    /// Check the structural invariants every builder output must satisfy.
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::ConstructionViolation(msg));
        if self.planes.len() + 1 != self.dim {
            return fail(format!("{} planes for dim {}", self.planes.len(), self.dim));
        }
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return fail(format!("epsilon must be finite and non-negative, got {}", self.epsilon));
        }
        let expected_roots: Vec<i64> = (1..=(2 * self.n as i64 - 1)).collect();
        if self.axis_roots() != expected_roots.as_slice() {
            return fail("axis product must have roots 1..2n-1".into());
        }
        for (i, pc) in self.planes.iter().enumerate() {
            if pc.plane != i + 1 {
                return fail(format!("plane list out of order at position {i}"));
            }
            if pc.sign != 1 && pc.sign != -1 {
                return fail(format!("plane {} has sign {}", pc.plane, pc.sign));
            }
            for term in pc.f.iter().chain(&pc.g) {
                if let FactorTerm::WideEllipse { a, b, cover, .. } = *term {
                    let half = f64::from(cover) - 0.5;
                    if !(a > b && b > half * half) {
                        return fail(format!(
                            "ellipse in plane {} violates a > b > (l - 1/2)^2: a={a}, b={b}, l={cover}",
                            pc.plane
                        ));
                    }
                }
                if matches!(term, FactorTerm::AxisProduct { .. }) {
                    return fail("axis product inside a plane component".into());
                }
            }
        }
        for (k, &xk) in self.node_positions.iter().enumerate() {
            if xk != node_x(k + 1) {
                return fail(format!("node {} placed at {xk}", k + 1));
            }
            if self.axis_value(xk) != 0.0 {
                return fail(format!("axis product does not vanish at node {}", k + 1));
            }
        }
        Ok(())
    }

    /// The factored system as text, one component per block.
    pub fn render_equations(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "# n = {}, dim = {}, mode = {:?}, epsilon = {:e}",
            self.n, self.dim, self.mode, self.epsilon
        );
        let nodes: Vec<String> = self.node_positions.iter().map(|x| x.to_string()).collect();
        let _ = writeln!(out, "# nodes at x = {}", nodes.join(", "));
        let _ = writeln!(out, "x' = -eps * {}", self.axis.render("x"));
        for pc in &self.planes {
            let y = format!("y{}", pc.plane);
            let factors: Vec<String> = pc.f.iter().map(|t| t.render(&y)).collect();
            let _ = writeln!(out, "     + {y} * {}", factors.join(" * "));
        }
        for pc in &self.planes {
            let y = format!("y{}", pc.plane);
            let sign = if pc.sign < 0 { "-" } else { "" };
            let factors: Vec<String> = pc.g.iter().map(|t| t.render(&y)).collect();
            let _ = writeln!(out, "{y}' = {sign}{y} * {}", factors.join(" * "));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    pub x_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

/// Index sets selecting the circle/parabola factor attached to each node in
/// the general construction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexSets {
    pub n: usize,
    /// Nodes with a circle centered at `xi_k + 1/2`, per plane.
    pub plus: BTreeMap<usize, BTreeSet<usize>>,
    /// Nodes with a circle centered at `xi_k - 1/2`, per plane.
    pub minus: BTreeMap<usize, BTreeSet<usize>>,
    /// Nodes followed by a separating left parabola at `xi_k + 1`, planes 3..=5.
    pub tilde: BTreeMap<usize, BTreeSet<usize>>,
}

impl IndexSets {
    /// Nodes carrying a left parabola `P-` in plane `j` (connection targets).
    pub fn parabola_nodes(&self, j: usize) -> BTreeSet<usize> {
        (1..=self.n)
            .filter(|k| !self.plus[&j].contains(k) && !self.minus[&j].contains(k))
            .collect()
    }
}

/// Index sets for the general construction, `n >= 4`.
pub fn index_sets(n: usize) -> Result<IndexSets> {
    if n < 4 {
        return Err(Error::Unsupported(format!(
            "the general construction starts at n = 4, got n = {n}"
        )));
    }
    let all: BTreeSet<usize> = (1..=n).collect();
    let mut plus = BTreeMap::new();
    let mut minus = BTreeMap::new();
    let mut tilde = BTreeMap::new();

    plus.insert(1, BTreeSet::new());
    minus.insert(1, (2..=n).collect());
    plus.insert(2, BTreeSet::from([1]));
    minus.insert(2, (3..=n).collect());

    for j in 3..=5 {
        let minus_j: BTreeSet<usize> = match (n % 3, j) {
            (0, 3) | (1, 4) | (2, 5) => BTreeSet::new(),
            (0, 5) | (1, 3) | (2, 4) => BTreeSet::from([n]),
            _ => BTreeSet::from([n - 1, n]),
        };
        // {j, j+3, j+6, ...}: the residue class of j modulo 3, starting at j.
        let class: BTreeSet<usize> = (j..=n).step_by(3).collect();
        let plus_j: BTreeSet<usize> = all
            .iter()
            .copied()
            .filter(|k| !class.contains(k) && !minus_j.contains(k))
            .collect();
        // Every parabola node except the largest gets a separating parabola.
        let mut targets: Vec<usize> = all
            .iter()
            .copied()
            .filter(|k| !plus_j.contains(k) && !minus_j.contains(k))
            .collect();
        targets.pop();
        plus.insert(j, plus_j);
        minus.insert(j, minus_j);
        tilde.insert(j, targets.into_iter().collect());
    }
    Ok(IndexSets {
        n,
        plus,
        minus,
        tilde,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WideEllipseParams {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

/// Height/width coefficients of a blocking ellipse covering `l` circles.
pub fn ellipse_coefficients(l: u32) -> Result<(f64, f64)> {
    match l {
        0 => Err(Error::InvalidArgument(
            "a wide ellipse must cover at least one circle".into(),
        )),
        1 => Ok((4.0, 0.5)),
        2 => Ok((16.0, 3.0)),
        3 => Ok((64.0, 7.0)),
        _ => {
            let half = f64::from(l) - 0.5;
            let b = half * half + 0.75;
            let a = 4f64.powi(l.min(5) as i32).min(1024.0).max(2.0 * b);
            Ok((a, b))
        }
    }
}

/// Parameters of the wide ellipse in plane 1 or 2 covering `l` circles.
pub fn wide_ellipse_params(l: u32, plane: usize) -> Result<WideEllipseParams> {
    let (a, b) = ellipse_coefficients(l)?;
    let c = match plane {
        1 => f64::from(l) + 1.5,
        2 => f64::from(l) + 3.5,
        _ => {
            return Err(Error::InvalidArgument(format!(
                "wide ellipses are placed in planes 1 and 2 only, got plane {plane}"
            )))
        }
    };
    Ok(WideEllipseParams { a, b, c })
}

fn ellipse(cover: u32, center: f64) -> FactorTerm {
    let (a, b) = ellipse_coefficients(cover).expect("cover >= 1");
    FactorTerm::WideEllipse {
        anchor: center,
        a,
        b,
        cover,
    }
}

fn left(anchor: f64) -> FactorTerm {
    FactorTerm::ParabolaLeft { anchor }
}

fn right(anchor: f64) -> FactorTerm {
    FactorTerm::ParabolaRight { anchor }
}

fn circle_right(k: usize) -> FactorTerm {
    FactorTerm::CircleRightCentered { anchor: node_x(k) }
}

fn circle_left(k: usize) -> FactorTerm {
    FactorTerm::CircleLeftCentered { anchor: node_x(k) }
}

fn axis_factor(n: usize) -> FactorTerm {
    FactorTerm::AxisProduct {
        axis_roots: (1..=(2 * n as i64 - 1)).collect(),
    }
}

fn check_epsilon(epsilon: f64) -> Result<()> {
    if epsilon > 0.0 && epsilon.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "epsilon must be positive and finite, got {epsilon}"
        )))
    }
}

fn assemble(
    n: usize,
    dim: usize,
    mode: BuildMode,
    epsilon: f64,
    planes: Vec<(Vec<FactorTerm>, i8, Vec<FactorTerm>)>,
) -> VectorFieldSpec {
    VectorFieldSpec {
        n,
        dim,
        mode,
        epsilon,
        axis: axis_factor(n),
        planes: planes
            .into_iter()
            .enumerate()
            .map(|(i, (f, sign, g))| PlaneComponents {
                plane: i + 1,
                f,
                sign,
                g,
            })
            .collect(),
        node_positions: (1..=n).map(node_x).collect(),
    }
}

/// `f_j` of the hand-built systems: left parabola at the target, circles
/// centered right of every node to its left and left of every node to its right.
fn explicit_f(n: usize, j: usize) -> Vec<FactorTerm> {
    let mut f = vec![left(node_x(j))];
    f.extend((1..j).map(circle_right));
    f.extend((j + 1..=n).map(circle_left));
    f
}

/// The literal systems for `n = 3, 4, 5, 6`.
pub fn build_explicit(n: usize, epsilon: f64) -> Result<VectorFieldSpec> {
    check_epsilon(epsilon)?;
    let xi = node_x;
    let spec = match n {
        3 => assemble(
            3,
            4,
            BuildMode::Explicit,
            epsilon,
            vec![
                (explicit_f(3, 1), -1, vec![right(xi(1) + 0.5)]),
                (
                    explicit_f(3, 2),
                    1,
                    vec![left(xi(2) - 0.5), right(xi(2) + 0.5)],
                ),
                (explicit_f(3, 3), 1, vec![left(xi(3) - 0.5)]),
            ],
        ),
        4 => {
            let e = |c: f64| FactorTerm::WideEllipse {
                anchor: c,
                a: 4.0,
                b: 0.5,
                cover: 1,
            };
            assemble(
                4,
                5,
                BuildMode::Explicit,
                epsilon,
                vec![
                    (explicit_f(4, 1), -1, vec![right(xi(1) + 0.5), e(xi(2) - 0.5)]),
                    (
                        explicit_f(4, 2),
                        1,
                        vec![left(xi(2) - 0.5), right(xi(2) + 0.5), e(xi(3) - 0.5)],
                    ),
                    (
                        explicit_f(4, 3),
                        1,
                        vec![left(xi(3) - 0.5), left(xi(3) + 0.5), e(xi(4) - 0.5)],
                    ),
                    (explicit_f(4, 4), 1, vec![left(xi(4) - 0.5), e(xi(1) + 0.5)]),
                ],
            )
        }
        5 => {
            let e1 = |c: f64| FactorTerm::WideEllipse {
                anchor: c,
                a: 4.0,
                b: 0.5,
                cover: 1,
            };
            let e2 = |c: f64| FactorTerm::WideEllipse {
                anchor: c,
                a: 16.0,
                b: 3.0,
                cover: 2,
            };
            assemble(
                5,
                6,
                BuildMode::Explicit,
                epsilon,
                vec![
                    (explicit_f(5, 1), -1, vec![right(xi(1) + 0.5), e2(xi(2) + 0.5)]),
                    (
                        explicit_f(5, 2),
                        1,
                        vec![left(xi(2) - 0.5), right(xi(2) + 0.5), e2(xi(3) + 0.5)],
                    ),
                    (
                        explicit_f(5, 3),
                        1,
                        vec![left(xi(3) - 0.5), left(xi(3) + 0.5), e2(xi(4) + 0.5)],
                    ),
                    (
                        explicit_f(5, 4),
                        1,
                        vec![
                            left(xi(4) - 0.5),
                            left(xi(4) + 0.5),
                            e1(xi(1) + 0.5),
                            e1(xi(5) - 0.5),
                        ],
                    ),
                    (explicit_f(5, 5), 1, vec![left(xi(5) - 0.5), e2(xi(2) - 0.5)]),
                ],
            )
        }
        6 => {
            let e1 = |c: f64| FactorTerm::WideEllipse {
                anchor: c,
                a: 4.0,
                b: 0.5,
                cover: 1,
            };
            let e2 = |c: f64| FactorTerm::WideEllipse {
                anchor: c,
                a: 16.0,
                b: 3.0,
                cover: 2,
            };
            let e3 = |c: f64| FactorTerm::WideEllipse {
                anchor: c,
                a: 64.0,
                b: 7.0,
                cover: 3,
            };
            // Plane 3 carries the incoming connections of nodes 3 and 6.
            let f3 = vec![
                left(xi(3)),
                circle_right(1),
                circle_right(2),
                left(xi(6)),
                circle_right(4),
                circle_right(5),
                left(xi(3) + 1.0),
            ];
            let f4 = vec![
                left(xi(4)),
                circle_right(1),
                circle_right(2),
                circle_right(3),
                circle_left(5),
                circle_left(6),
            ];
            let f5 = vec![
                left(xi(5)),
                circle_right(1),
                circle_right(2),
                circle_right(3),
                circle_right(4),
                circle_left(6),
            ];
            assemble(
                6,
                6,
                BuildMode::Explicit,
                epsilon,
                vec![
                    (explicit_f(6, 1), -1, vec![right(xi(1) + 0.5), e3(xi(3) - 0.5)]),
                    (
                        explicit_f(6, 2),
                        1,
                        vec![left(xi(2) - 0.5), right(xi(2) + 0.5), e3(xi(4) - 0.5)],
                    ),
                    (
                        f3,
                        1,
                        vec![left(xi(3) - 0.5), left(xi(3) + 0.5), left(xi(6) - 0.5)],
                    ),
                    (
                        f4,
                        1,
                        vec![
                            left(xi(4) - 0.5),
                            left(xi(4) + 0.5),
                            e1(xi(1) + 0.5),
                            e2(xi(5) + 0.5),
                        ],
                    ),
                    (
                        f5,
                        1,
                        vec![
                            left(xi(5) - 0.5),
                            left(xi(5) + 0.5),
                            e1(xi(6) - 0.5),
                            e2(xi(2) - 0.5),
                        ],
                    ),
                ],
            )
        }
        _ => {
            return Err(Error::InvalidArgument(format!(
                "explicit systems exist for n = 3, 4, 5, 6 only, got n = {n}"
            )))
        }
    };
    Ok(spec)
}

/// Left-parabola pair at `xi_t -/+ 1/2`.
fn parabola_pair(t: usize) -> [FactorTerm; 2] {
    [left(node_x(t) - 0.5), left(node_x(t) + 0.5)]
}

/// Pairs for targets `3m + offset`, `m = 1..=count`.
fn parabola_pairs(offset: usize, count: usize) -> Vec<FactorTerm> {
    (1..=count)
        .flat_map(|m| parabola_pair(3 * m + offset))
        .collect()
}

/// The general six-dimensional system for `4 <= n <= MAX_NODES`.
pub fn build_general(n: usize, epsilon: f64) -> Result<VectorFieldSpec> {
    if n > MAX_NODES {
        return Err(Error::TooLarge { n, max: MAX_NODES });
    }
    let sets = index_sets(n)?;
    check_epsilon(epsilon)?;

    let f_of = |j: usize| -> Vec<FactorTerm> {
        let tilde = sets.tilde.get(&j);
        let mut f = Vec::with_capacity(n + 3);
        for k in 1..=n {
            if sets.plus[&j].contains(&k) {
                f.push(circle_right(k));
            } else if sets.minus[&j].contains(&k) {
                f.push(circle_left(k));
            } else {
                f.push(left(node_x(k)));
                if tilde.is_some_and(|t| t.contains(&k)) {
                    f.push(left(node_x(k) + 1.0));
                }
            }
        }
        f
    };

    let l = (n - 3) as u32;
    let p1 = wide_ellipse_params(l, 1)?;
    let p2 = wide_ellipse_params(l, 2)?;
    let wide = |p: WideEllipseParams| FactorTerm::WideEllipse {
        anchor: p.c,
        a: p.a,
        b: p.b,
        cover: l,
    };
    let xi = node_x;
    let xn = xi(n);
    let k = n / 3;

    let g1 = vec![right(xi(1) + 0.5), wide(p1)];
    let g2 = vec![left(xi(2) - 0.5), right(xi(2) + 0.5), wide(p2)];
    let (g3, g4, g5) = match n % 3 {
        0 => (
            [vec![left(xn - 0.5)], parabola_pairs(0, k - 1)].concat(),
            [
                vec![ellipse(1, xi(1) + 0.5), ellipse(2, xn - 1.5)],
                parabola_pairs(1, k - 1),
            ]
            .concat(),
            [
                vec![ellipse(2, xi(1) + 1.5), ellipse(1, xn - 0.5)],
                parabola_pairs(2, k - 1),
            ]
            .concat(),
        ),
        1 => (
            [vec![ellipse(1, xn - 0.5)], parabola_pairs(0, k)].concat(),
            [
                vec![left(xn - 0.5), ellipse(1, xi(1) + 0.5)],
                parabola_pairs(1, k - 1),
            ]
            .concat(),
            [
                vec![ellipse(2, xi(1) + 1.5), ellipse(2, xn - 1.5)],
                parabola_pairs(2, k - 1),
            ]
            .concat(),
        ),
        _ => (
            [vec![ellipse(2, xn - 1.5)], parabola_pairs(0, k)].concat(),
            [
                vec![ellipse(1, xi(1) + 0.5), ellipse(1, xn - 0.5)],
                parabola_pairs(1, k),
            ]
            .concat(),
            [
                vec![left(xn - 0.5), ellipse(2, xi(1) + 1.5)],
                parabola_pairs(2, k - 1),
            ]
            .concat(),
        ),
    };

    Ok(assemble(
        n,
        6,
        BuildMode::General,
        epsilon,
        vec![
            (f_of(1), -1, g1),
            (f_of(2), 1, g2),
            (f_of(3), 1, g3),
            (f_of(4), 1, g4),
            (f_of(5), 1, g5),
        ],
    ))
}

/// Build in the requested mode; `None` picks explicit for `n <= 6`.
pub fn build(n: usize, mode: Option<BuildMode>, epsilon: f64) -> Result<VectorFieldSpec> {
    if n > MAX_NODES {
        return Err(Error::TooLarge { n, max: MAX_NODES });
    }
    match mode.unwrap_or(if n <= 6 {
        BuildMode::Explicit
    } else {
        BuildMode::General
    }) {
        BuildMode::Explicit => build_explicit(n, epsilon),
        BuildMode::General => build_general(n, epsilon),
    }
}

/// Uniform grid of `count` points over `[lo, hi]`, endpoints included.
pub(crate) fn linspace(lo: f64, hi: f64, count: usize) -> impl Iterator<Item = f64> {
    let step = (hi - lo) / (count - 1) as f64;
    (0..count).map(move |i| if i + 1 == count { hi } else { lo + step * i as f64 })
}

/// Largest `eps = 10^-p`, `p = 0..=30`, whose axis term stays below `kappa`
/// times the weakest plane term on a 1000-point grid over `[0, 2n]`.
pub fn calibrate_epsilon(spec: &VectorFieldSpec, kappa: f64) -> Result<f64> {
    if kappa.is_nan() || kappa >= 1.0 {
        return Err(Error::InvalidArgument(format!(
            "kappa must lie in (0, 1), got {kappa}"
        )));
    }
    let hi = 2.0 * spec.n as f64;
    let grid: Vec<f64> = linspace(0.0, hi, 1000).collect();
    let axis_max = grid
        .iter()
        .map(|&x| spec.axis_value(x).abs())
        .fold(0.0, f64::max);
    let plane_min = spec
        .planes
        .iter()
        .map(|pc| grid.iter().map(|&x| pc.f_value(x, 0.0).abs()).fold(0.0, f64::max))
        .fold(f64::INFINITY, f64::min);
    for p in 0..=30 {
        let eps: f64 = format!("1e-{p}").parse().expect("valid float literal");
        if eps * axis_max <= kappa * plane_min {
            return Ok(eps);
        }
    }
    Err(Error::CalibrationFailure { kappa })
}
