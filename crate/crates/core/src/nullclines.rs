//! Nullcline curves inside the invariant planes, sampled per factor.
//!
//! In the plane `P_0j` the x-nullcline is `-eps A(x) + y f_j(x, y) = 0` and
//! the y-nullcline (away from the axis) is `g_j(x, y) = 0`. With `eps = 0`
//! every factor of `f_j` and `g_j` contributes one closed-form curve; for
//! `eps > 0` the x-curves are polished onto the perturbed zero set.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::construct::VectorFieldSpec;
use crate::error::{Error, Result};
use crate::factor::{product, product_jet, product_magnitude, FactorTerm};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Which {
    XNullcline,
    YNullcline,
}

impl Which {
    pub fn short(self) -> &'static str {
        match self {
            Which::XNullcline => "x",
            Which::YNullcline => "y",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NullclineMode {
    EpsZero,
    EpsActual,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NullclineCurve {
    pub plane: usize,
    pub curve_id: usize,
    pub which: Which,
    pub source_factor: FactorTerm,
    /// Polyline in `(x, y_j)`.
    pub points: Vec<[f64; 2]>,
    pub axis_intersections: Vec<f64>,
    /// False when polishing dropped at least one point.
    pub complete: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Crossing {
    Positive,
    Negative,
    Degenerate,
}

pub const MIN_SAMPLES: usize = 16;
const Y_TOP: f64 = 2.0;

/// Closed-form points of `term = 0` with `y >= 0` inside `[0, x_hi] x [0, 2]`.
fn analytic_points(term: &FactorTerm, samples: usize, x_hi: f64) -> Vec<[f64; 2]> {
    let s = samples.max(2);
    let frac = |i: usize| i as f64 / (s - 1) as f64;
    let arc = |cx: f64, rx: f64, ry: f64| -> Vec<[f64; 2]> {
        (0..s)
            .map(|i| {
                let th = std::f64::consts::PI * frac(i);
                [cx + rx * th.cos(), ry * th.sin()]
            })
            .collect()
    };
    let raw: Vec<[f64; 2]> = match *term {
        FactorTerm::ParabolaRight { anchor } => {
            let top = Y_TOP.min((x_hi - anchor).max(0.0).sqrt());
            (0..s)
                .map(|i| {
                    let y = top * frac(i);
                    [anchor + y * y, y]
                })
                .collect()
        }
        FactorTerm::ParabolaLeft { anchor } => {
            let top = Y_TOP.min(anchor.max(0.0).sqrt());
            (0..s)
                .map(|i| {
                    let y = top * frac(i);
                    [anchor - y * y, y]
                })
                .collect()
        }
        FactorTerm::CircleRightCentered { anchor } => arc(anchor + 0.5, 0.5, 0.5),
        FactorTerm::CircleLeftCentered { anchor } => arc(anchor - 0.5, 0.5, 0.5),
        FactorTerm::WideEllipse { anchor, a, b, .. } => arc(anchor, b.sqrt(), (b / a).sqrt()),
        FactorTerm::AxisProduct { .. } => Vec::new(),
    };
    raw.into_iter()
        .filter(|p| p[0] >= 0.0 && p[0] <= x_hi && p[1] >= 0.0 && p[1] <= Y_TOP)
        .collect()
}

/// Newton in `x` at fixed `y` onto `-eps A(x) + y f(x, y) = 0`.
fn polish_x_point(spec: &VectorFieldSpec, plane: usize, x0: f64, y: f64) -> Option<f64> {
    let pc = &spec.planes[plane - 1];
    let mut x = x0;
    for _ in 0..50 {
        let a = spec.axis.jet(x, 0.0);
        let f = product_jet(&pc.f, x, y);
        let val = -spec.epsilon * a.value + y * f.value;
        let der = -spec.epsilon * a.dx + y * f.dx;
        if der == 0.0 || !der.is_finite() {
            return None;
        }
        let step = val / der;
        x -= step;
        if step.abs() <= 1e-15 * (1.0 + x.abs()) {
            break;
        }
    }
    let val = -spec.epsilon * spec.axis_value(x) + y * product(&pc.f, x, y);
    let scale = spec.epsilon * spec.axis_value(x).abs() + y * product_magnitude(&pc.f, x, y);
    (val.abs() <= 1e-8 * (1.0 + scale) && (x - x0).abs() <= 0.25).then_some(x)
}

/// One curve per factor of `f_j` (x-nullclines) and `g_j` (y-nullclines),
/// restricted to the plane box `x in [0, 2n]`, `y in [0, 2]`. Factors with no
/// arc inside the box produce no curve.
pub fn sample_nullclines(
    spec: &VectorFieldSpec,
    plane: usize,
    samples_per_curve: usize,
    mode: NullclineMode,
) -> Result<Vec<NullclineCurve>> {
    if samples_per_curve < MIN_SAMPLES {
        return Err(Error::InvalidArgument(format!(
            "samples_per_curve must be at least {MIN_SAMPLES}, got {samples_per_curve}"
        )));
    }
    let pc = spec.plane(plane)?;
    let x_hi = 2.0 * spec.n as f64;
    let mut curves = Vec::new();
    let tagged = pc
        .f
        .iter()
        .map(|t| (Which::XNullcline, t))
        .chain(pc.g.iter().map(|t| (Which::YNullcline, t)));
    for (which, term) in tagged {
        let mut points = analytic_points(term, samples_per_curve, x_hi);
        if points.is_empty() {
            continue;
        }
        let mut complete = true;
        if mode == NullclineMode::EpsActual && which == Which::XNullcline && spec.epsilon != 0.0 {
            let before = points.len();
            points = points
                .into_iter()
                .filter_map(|[x, y]| polish_x_point(spec, plane, x, y).map(|px| [px, y]))
                .collect();
            complete = points.len() == before;
        }
        let axis_intersections = term
            .axis_zeros()
            .into_iter()
            .filter(|z| (0.0..=x_hi).contains(z))
            .collect();
        curves.push(NullclineCurve {
            plane,
            curve_id: curves.len(),
            which,
            source_factor: term.clone(),
            points,
            axis_intersections,
            complete,
        });
    }
    Ok(curves)
}

/// Sign of the field component transverse to `curve` at `point`.
pub fn crossing_direction(spec: &VectorFieldSpec, curve: &NullclineCurve, point: [f64; 2]) -> Result<Crossing> {
    let pc = spec.plane(curve.plane)?;
    let [x, y] = point;
    let value = match curve.which {
        Which::XNullcline => y * pc.g_value(x, y),
        Which::YNullcline => -spec.epsilon * spec.axis_value(x) + y * pc.f_value(x, y),
    };
    Ok(if value.abs() < 1e-10 {
        Crossing::Degenerate
    } else if value > 0.0 {
        Crossing::Positive
    } else {
        Crossing::Negative
    })
}

/// x-intervals of `(0, 2n)` where the near-axis x-nullcline branch
/// `y = eps A(x) / f_j(x, 0)` rises above the axis. A coherent plane has none.
pub fn axis_branch_intervals(spec: &VectorFieldSpec, plane: usize) -> Result<Vec<(f64, f64)>> {
    let pc = spec.plane(plane)?;
    if spec.epsilon == 0.0 {
        return Ok(Vec::new());
    }
    const PER_UNIT: usize = 16;
    let mut intervals: Vec<(f64, f64)> = Vec::new();
    let mut open: Option<(f64, f64)> = None;
    for m in 0..(2 * spec.n) {
        for i in 0..PER_UNIT {
            let x = m as f64 + (i as f64 + 0.5) / PER_UNIT as f64;
            let intrudes = spec.axis_value(x) * pc.f_value(x, 0.0) > 0.0;
            match (&mut open, intrudes) {
                (Some(iv), true) => iv.1 = x,
                (None, true) => open = Some((x, x)),
                (Some(_), false) => intervals.extend(open.take()),
                (None, false) => {}
            }
        }
    }
    intervals.extend(open);
    Ok(intervals)
}

/// CSV with columns `plane, curve_id, which, x, y`.
pub fn nullclines_csv(curves: &[NullclineCurve]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["plane", "curve_id", "which", "x", "y"])?;
    for c in curves {
        for p in &c.points {
            w.write_record([
                c.plane.to_string(),
                c.curve_id.to_string(),
                c.which.short().to_string(),
                format!("{:.17e}", p[0]),
                format!("{:.17e}", p[1]),
            ])?;
        }
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

/// Single-file SVG of one plane: x-nullclines dashed blue, y-nullclines
/// solid red, nodes as dots, optional trajectories in grey.
pub fn render_svg(
    spec: &VectorFieldSpec,
    plane: usize,
    curves: &[NullclineCurve],
    trajectories: &[Vec<[f64; 2]>],
) -> String {
    let (width, height, margin) = (900.0, 320.0, 30.0);
    let x_hi = 2.0 * spec.n as f64;
    let sx = (width - 2.0 * margin) / x_hi;
    let sy = (height - 2.0 * margin) / Y_TOP;
    let px = |x: f64| margin + x * sx;
    let py = |y: f64| height - margin - y * sy;
    let path = |pts: &[[f64; 2]]| -> String {
        pts.iter()
            .map(|p| format!("{:.3},{:.3}", px(p[0]), py(p[1])))
            .collect::<Vec<_>>()
            .join(" ")
    };

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{margin}" y="18" font-family="sans-serif" font-size="13">n = {}, plane {plane} (x, y{plane})</text>"#,
        spec.n
    );
    let _ = writeln!(
        s,
        r#"<line x1="{:.3}" y1="{:.3}" x2="{:.3}" y2="{:.3}" stroke="black" stroke-width="1"/>"#,
        px(0.0),
        py(0.0),
        px(x_hi),
        py(0.0)
    );
    for c in curves {
        if c.points.len() < 2 {
            continue;
        }
        let style = match c.which {
            Which::XNullcline => r##"stroke="#1f4fd1" stroke-dasharray="6 4""##,
            Which::YNullcline => r##"stroke="#c8102e""##,
        };
        let _ = writeln!(
            s,
            r#"<polyline points="{}" fill="none" {style} stroke-width="1.5"><title>{} {}</title></polyline>"#,
            path(&c.points),
            c.which.short(),
            c.source_factor.kind_name()
        );
    }
    for t in trajectories {
        if t.len() >= 2 {
            let _ = writeln!(
                s,
                r##"<polyline points="{}" fill="none" stroke="#555555" stroke-width="1"/>"##,
                path(t)
            );
        }
    }
    for (k, &x) in spec.node_positions.iter().enumerate() {
        let _ = writeln!(
            s,
            r#"<circle cx="{:.3}" cy="{:.3}" r="4" fill="black"><title>node {}</title></circle>"#,
            px(x),
            py(0.0),
            k + 1
        );
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::construct::{build, build_explicit};
    use crate::dynamics::{eval_field, find_plane_equilibria};

    fn kinds(curves: &[NullclineCurve], which: Which) -> Vec<&'static str> {
        curves
            .iter()
            .filter(|c| c.which == which)
            .map(|c| c.source_factor.kind_name())
            .collect()
    }

    #[test]
    fn three_nodes_plane_one_curves() {
        let spec = build_explicit(3, 0.01).unwrap();
        let curves = sample_nullclines(&spec, 1, 64, NullclineMode::EpsZero).unwrap();
        assert_eq!(kinds(&curves, Which::XNullcline).len(), 3);
        let y: Vec<_> = curves.iter().filter(|c| c.which == Which::YNullcline).collect();
        assert_eq!(y.len(), 1);
        assert_eq!(y[0].source_factor, FactorTerm::ParabolaRight { anchor: 1.5 });
        let x_axis: Vec<Vec<f64>> = curves
            .iter()
            .filter(|c| c.which == Which::XNullcline)
            .map(|c| c.axis_intersections.clone())
            .collect();
        assert_eq!(x_axis, vec![vec![1.0], vec![2.0, 3.0], vec![4.0, 5.0]]);
    }

    #[test]
    fn eps_zero_points_lie_on_their_factor() {
        for n in [3, 6, 9] {
            let spec = build(n, None, 0.01).unwrap();
            for j in 1..spec.dim {
                for c in sample_nullclines(&spec, j, 128, NullclineMode::EpsZero).unwrap() {
                    for p in &c.points {
                        assert!(c.source_factor.eval(p[0], p[1]).abs() <= 1e-8 * (1.0 + p[0].abs()));
                    }
                }
            }
        }
    }

    #[test]
    fn eps_actual_points_solve_the_x_equation() {
        let spec = build_explicit(4, 0.01).unwrap();
        let curves = sample_nullclines(&spec, 1, 64, NullclineMode::EpsActual).unwrap();
        for c in curves.iter().filter(|c| c.which == Which::XNullcline) {
            for p in &c.points {
                let v = eval_field(&spec, &[p[0], p[1], 0.0, 0.0, 0.0]);
                let pc = &spec.planes[0];
                let scale = 0.01 * spec.axis_value(p[0]).abs() + p[1] * product_magnitude(&pc.f, p[0], p[1]);
                assert!(v[0].abs() <= 1e-8 * (1.0 + scale));
            }
        }
    }

    #[test]
    fn circle_left_axis_intersections() {
        let spec = build_explicit(3, 0.01).unwrap();
        let curves = sample_nullclines(&spec, 1, 32, NullclineMode::EpsZero).unwrap();
        let c = curves
            .iter()
            .find(|c| c.source_factor == FactorTerm::CircleLeftCentered { anchor: 3.0 })
            .unwrap();
        assert_eq!(c.axis_intersections, vec![2.0, 3.0]);
    }

    #[test]
    fn six_nodes_plane_three_has_separating_parabola() {
        let spec = build_explicit(6, 0.01).unwrap();
        let curves = sample_nullclines(&spec, 3, 32, NullclineMode::EpsZero).unwrap();
        assert!(curves.iter().any(|c| c.which == Which::XNullcline
            && c.source_factor == FactorTerm::ParabolaLeft { anchor: 6.0 }
            && c.axis_intersections == vec![6.0]));
    }

    #[test]
    fn factor_to_curve_bijection() {
        for n in [3, 4, 5, 6, 8] {
            let spec = build(n, None, 0.01).unwrap();
            for pc in &spec.planes {
                let curves = sample_nullclines(&spec, pc.plane, 32, NullclineMode::EpsZero).unwrap();
                let x_hi = 2.0 * n as f64;
                let in_box = |t: &FactorTerm| !analytic_points(t, 32, x_hi).is_empty();
                let expected = pc.f.iter().chain(&pc.g).filter(|t| in_box(t)).count();
                assert_eq!(curves.len(), expected);
                for (i, c) in curves.iter().enumerate() {
                    assert_eq!(c.curve_id, i);
                }
            }
        }
    }

    #[test]
    fn parabolas_of_equal_orientation_never_meet() {
        for n in 3..=12 {
            let spec = build(n, None, 0.01).unwrap();
            for pc in &spec.planes {
                for xf in pc.f.iter().filter(|t| matches!(t, FactorTerm::ParabolaLeft { .. })) {
                    for yg in pc.g.iter().filter(|t| matches!(t, FactorTerm::ParabolaLeft { .. })) {
                        let a = analytic_points(xf, 256, 2.0 * n as f64);
                        let b = analytic_points(yg, 256, 2.0 * n as f64);
                        let min = a
                            .iter()
                            .flat_map(|p| b.iter().map(move |q| (p[0] - q[0]).hypot(p[1] - q[1])))
                            .fold(f64::INFINITY, f64::min);
                        assert!(min > 0.1, "n={n} plane {}: {xf:?} vs {yg:?}", pc.plane);
                    }
                }
            }
        }
    }

    #[test]
    fn off_axis_equilibria_sit_on_curve_intersections() {
        let spec = build_explicit(4, 0.01).unwrap().with_epsilon(0.0);
        let eqs = find_plane_equilibria(&spec, 1).unwrap();
        let pc = &spec.planes[0];
        for e in &eqs {
            let (x, y) = (e.coords[0], e.coords[1]);
            assert!(pc.f.iter().any(|t| t.eval(x, y).abs() < 1e-6));
            assert!(pc.g.iter().any(|t| t.eval(x, y).abs() < 1e-6));
        }
    }

    #[test]
    fn axis_sign_alternates_between_equilibria() {
        let spec = build_explicit(3, 0.01).unwrap();
        let mut signs = Vec::new();
        for m in 0..6 {
            let v = eval_field(&spec, &[m as f64 + 0.5, 0.0, 0.0, 0.0]);
            signs.push(v[0] > 0.0);
        }
        assert_eq!(signs, vec![true, false, true, false, true, false]);
    }

    #[test]
    fn crossing_matches_independent_sign_analysis() {
        // On the circle through 2 and 3 in plane 1 of the three-node system,
        // y1' = -y1 (y1^2 - x + 3/2) and y1^2 - x + 3/2 <= 1/4 - 2 + 3/2 < 0.
        let spec = build_explicit(3, 0.01).unwrap();
        let curves = sample_nullclines(&spec, 1, 64, NullclineMode::EpsZero).unwrap();
        let circle = curves
            .iter()
            .find(|c| c.source_factor == FactorTerm::CircleLeftCentered { anchor: 3.0 })
            .unwrap();
        for p in circle.points.iter().filter(|p| p[1] > 1e-3) {
            assert_eq!(crossing_direction(&spec, circle, *p).unwrap(), Crossing::Positive);
        }
        // On the y-curve, x' written out by hand for plane 1.
        let para = curves.iter().find(|c| c.which == Which::YNullcline).unwrap();
        for p in para.points.iter().filter(|p| p[1] > 1e-3) {
            let [x, y] = *p;
            let axis: f64 = (1..=5).map(|k| x - k as f64).product();
            let f1 = (-y * y - x + 1.0)
                * (y * y + (x - 2.5).powi(2) - 0.25)
                * (y * y + (x - 4.5).powi(2) - 0.25);
            let expect = -0.01 * axis + y * f1;
            let got = crossing_direction(&spec, para, *p).unwrap();
            assert_eq!(got, if expect > 0.0 { Crossing::Positive } else { Crossing::Negative });
        }
    }

    #[test]
    fn axis_branch_stays_below_the_axis() {
        for n in 3..=12 {
            let spec = build(n, None, 0.01).unwrap();
            for j in 1..spec.dim {
                assert!(axis_branch_intervals(&spec, j).unwrap().is_empty(), "n={n} plane {j}");
            }
        }
    }

    #[test]
    fn csv_and_svg_outputs() {
        let spec = build_explicit(4, 0.01).unwrap();
        let curves = sample_nullclines(&spec, 1, 32, NullclineMode::EpsZero).unwrap();
        let csv = String::from_utf8(nullclines_csv(&curves).unwrap()).unwrap();
        assert!(csv.starts_with("plane,curve_id,which,x,y\n"));
        let rows = curves.iter().map(|c| c.points.len()).sum::<usize>();
        assert_eq!(csv.lines().count(), rows + 1);
        let svg = render_svg(&spec, 1, &curves, &[vec![[5.0, 0.0], [4.0, 0.5]]]);
        assert!(svg.starts_with("<svg"));
        assert_eq!(svg.matches("<circle").count(), 4);
        assert_eq!(svg.matches("stroke-dasharray").count(), 4);
    }

    #[test]
    fn too_few_samples_rejected() {
        let spec = build_explicit(3, 0.01).unwrap();
        assert!(sample_nullclines(&spec, 1, 8, NullclineMode::EpsZero).is_err());
        assert!(sample_nullclines(&spec, 9, 32, NullclineMode::EpsZero).is_err());
    }
}
