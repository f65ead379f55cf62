//! Numerical verification that a field realizes its DNN graph.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::construct::VectorFieldSpec;
use crate::dynamics::{classify, find_axis_equilibria, node_equilibrium, restricted_eigenvalues, Sign};
use crate::error::{Error, Result};
use crate::graph::{DnnGraph, Edge};
use crate::integrate::{integrate, EventBall, IntegrateOptions, Method, TerminalEvent};
use crate::nullclines::axis_branch_intervals;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VerifyParams {
    /// Offset of the start point from the source node along `y_j`.
    pub delta: f64,
    /// Radius of the balls placed around every node.
    pub eta: f64,
    pub t_max: f64,
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub method: Method,
}

impl Default for VerifyParams {
    fn default() -> Self {
        Self {
            delta: 1e-3,
            eta: 1e-2,
            t_max: 1e4,
            rel_tol: 1e-8,
            abs_tol: 1e-10,
            method: Method::Auto,
        }
    }
}

impl VerifyParams {
    pub fn validate(&self) -> Result<()> {
        if !(1e-6..=1e-2).contains(&self.delta) {
            return Err(Error::InvalidArgument(format!(
                "delta must lie in [1e-6, 1e-2], got {}",
                self.delta
            )));
        }
        if !(self.eta > self.delta && self.eta.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "eta must exceed delta ({}), got {}",
                self.delta, self.eta
            )));
        }
        Ok(())
    }

    pub fn integrate_options(&self) -> IntegrateOptions {
        IntegrateOptions {
            t_max: self.t_max,
            rel_tol: self.rel_tol,
            abs_tol: self.abs_tol,
            method: self.method,
            record_samples: false,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Verified,
    Failed,
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConnectionReport {
    pub source: usize,
    pub target: usize,
    pub plane: usize,
    pub verdict: Verdict,
    pub flight_time: f64,
    /// Distance from the final point to the target node.
    pub miss_distance: f64,
    pub start_offset: f64,
    pub terminal_event: TerminalEvent,
    /// Node whose ball was entered, when it is not the target.
    pub hit_node: Option<usize>,
    pub steps: usize,
    pub pinned_drift: f64,
}

impl ConnectionReport {
    pub fn edge(&self) -> Edge {
        Edge::new(self.source, self.target)
    }
}

/// Shoot from `source + delta * e_{y_plane}` and record which node ball is
/// entered first. The source ball only counts once the trajectory has left it.
pub fn verify_edge_in_plane(
    spec: &VectorFieldSpec,
    edge: Edge,
    plane: usize,
    params: &VerifyParams,
) -> Result<ConnectionReport> {
    params.validate()?;
    spec.plane(plane)?;
    for k in [edge.source, edge.target] {
        if !(1..=spec.n).contains(&k) {
            return Err(Error::InvalidArgument(format!("node {k} out of range for n = {}", spec.n)));
        }
    }
    let mut start = spec.node_point(edge.source);
    start[plane] = params.delta;
    let balls: Vec<EventBall> = (1..=spec.n)
        .map(|k| EventBall {
            center: spec.node_point(k),
            radius: params.eta,
        })
        .collect();
    let traj = integrate(spec, &start, &params.integrate_options(), &balls)?;
    let target = spec.node_point(edge.target);
    let miss = traj
        .final_point
        .iter()
        .zip(&target)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        .sqrt();
    let (verdict, hit_node) = match traj.terminal_event {
        TerminalEvent::EnteredBall { id } if id + 1 == edge.target => (Verdict::Verified, None),
        TerminalEvent::EnteredBall { id } => (Verdict::Failed, Some(id + 1)),
        _ => {
            // Never escaping the source neighbourhood counts as returning to it.
            let home = spec.node_point(edge.source);
            let d = traj
                .final_point
                .iter()
                .zip(&home)
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt();
            (Verdict::Failed, (d <= params.eta).then_some(edge.source))
        }
    };
    Ok(ConnectionReport {
        source: edge.source,
        target: edge.target,
        plane,
        verdict,
        flight_time: traj.final_time,
        miss_distance: miss,
        start_offset: params.delta,
        terminal_event: traj.terminal_event,
        hit_node,
        steps: traj.accepted_steps,
        pinned_drift: traj.pinned_drift,
    })
}

/// Verify one prescribed edge of `graph` in its assigned plane.
pub fn verify_edge(
    spec: &VectorFieldSpec,
    graph: &DnnGraph,
    edge: Edge,
    params: &VerifyParams,
) -> Result<ConnectionReport> {
    let plane = graph
        .plane_of_edge(edge)
        .ok_or_else(|| Error::InvalidArgument(format!("edge {edge} is not in the DNN graph on {} nodes", graph.n())))?;
    verify_edge_in_plane(spec, edge, plane, params)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbsenceReport {
    pub node: usize,
    pub plane: usize,
    /// Eigenvalues of the `(x, y_plane)` block at the node.
    pub restricted_eigenvalues: [f64; 2],
    pub verdict: Verdict,
}

/// Every node that neither leaves nor enters through `plane` must be a sink
/// of the flow restricted to that plane.
pub fn verify_absence(spec: &VectorFieldSpec, graph: &DnnGraph, plane: usize) -> Result<Vec<AbsenceReport>> {
    spec.plane(plane)?;
    Ok(graph
        .non_connecting_nodes(plane)
        .into_iter()
        .map(|k| {
            let ev = restricted_eigenvalues(spec, &spec.node_point(k), plane);
            let sink = ev.iter().all(|e| e.re < 0.0);
            AbsenceReport {
                node: k,
                plane,
                restricted_eigenvalues: [ev[0].re, ev[1].re],
                verdict: if sink { Verdict::Verified } else { Verdict::Failed },
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxisCheck {
    pub found: usize,
    pub expected: usize,
    /// Largest distance of a located equilibrium from its integer.
    pub max_offset: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignPatternCheck {
    pub violations: Vec<String>,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoherenceEntry {
    pub plane: usize,
    pub intrusions: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RealizationReport {
    pub n: usize,
    pub dim: usize,
    pub epsilon: f64,
    pub params: VerifyParams,
    pub axis_equilibria: AxisCheck,
    pub sign_pattern: SignPatternCheck,
    pub axis_coherence: Vec<CoherenceEntry>,
    pub edges: Vec<ConnectionReport>,
    pub absences: Vec<AbsenceReport>,
    pub causes: Vec<String>,
    pub verified: bool,
}

fn sign_pattern(spec: &VectorFieldSpec, graph: &DnnGraph) -> Result<SignPatternCheck> {
    let mut violations = Vec::new();
    for k in 1..=spec.n {
        let sig = classify(&node_equilibrium(spec, k))?;
        if sig.signs[0] != Sign::Negative {
            violations.push(format!("node {k}: x-eigenvalue is not negative"));
        }
        let out = graph.outgoing_planes(k);
        for j in 1..spec.dim {
            let positive = sig.signs[j] == Sign::Positive;
            if positive != out.contains(&j) {
                violations.push(format!(
                    "node {k}: y{j}-eigenvalue is {} but plane {j} {} an outgoing edge",
                    if positive { "positive" } else { "negative" },
                    if out.contains(&j) { "carries" } else { "carries no" }
                ));
            }
        }
    }
    Ok(SignPatternCheck {
        passed: violations.is_empty(),
        violations,
    })
}

/// Run every check and combine them. Non-hyperbolic nodes abort with an error;
/// every other failure is itemized in `causes`.
pub fn verify_realization(spec: &VectorFieldSpec, graph: &DnnGraph, params: &VerifyParams) -> Result<RealizationReport> {
    params.validate()?;
    if spec.n != graph.n() {
        return Err(Error::InvalidArgument(format!(
            "field built for n = {} but graph has n = {}",
            spec.n,
            graph.n()
        )));
    }
    let mut causes = Vec::new();

    let expected = 2 * spec.n - 1;
    let axis = match find_axis_equilibria(spec) {
        Ok(eqs) => {
            let max_offset = eqs
                .iter()
                .map(|e| (e.coords[0] - e.coords[0].round()).abs())
                .fold(0.0, f64::max);
            let odd_nodes = eqs.iter().filter(|e| e.is_node).count() == spec.n;
            let passed = max_offset <= 1e-9 && odd_nodes;
            AxisCheck {
                found: eqs.len(),
                expected,
                max_offset,
                passed,
            }
        }
        Err(Error::ConstructionViolation(msg)) => {
            causes.push(msg);
            AxisCheck {
                found: 0,
                expected,
                max_offset: f64::NAN,
                passed: false,
            }
        }
        Err(e) => return Err(e),
    };
    if !axis.passed && causes.is_empty() {
        causes.push("axis equilibria are not at the integers".into());
    }

    let sign = sign_pattern(spec, graph)?;
    causes.extend(sign.violations.iter().cloned());

    let mut coherence = Vec::new();
    for j in 1..spec.dim {
        let intrusions: Vec<[f64; 2]> = axis_branch_intervals(spec, j)?
            .into_iter()
            .map(|(a, b)| [a, b])
            .collect();
        for iv in &intrusions {
            causes.push(format!(
                "plane {j}: x-nullcline branch rises above the axis on [{:.4}, {:.4}]",
                iv[0], iv[1]
            ));
        }
        coherence.push(CoherenceEntry { plane: j, intrusions });
    }

    let mut edges: Vec<ConnectionReport> = graph
        .edges()
        .par_iter()
        .map(|&e| verify_edge(spec, graph, e, params))
        .collect::<Result<_>>()?;
    edges.sort_by_key(|r| (r.plane, r.source, r.target));
    for r in edges.iter().filter(|r| r.verdict != Verdict::Verified) {
        causes.push(match r.hit_node {
            Some(h) => format!("edge {}: trajectory reached node {h}", r.edge()),
            None => format!("edge {}: ended with {:?}", r.edge(), r.terminal_event),
        });
    }

    let mut absences = Vec::new();
    for j in 1..spec.dim {
        absences.extend(verify_absence(spec, graph, j)?);
    }
    for a in absences.iter().filter(|a| a.verdict != Verdict::Verified) {
        causes.push(format!("node {} is not a sink within plane {}", a.node, a.plane));
    }

    Ok(RealizationReport {
        n: spec.n,
        dim: spec.dim,
        epsilon: spec.epsilon,
        params: *params,
        axis_equilibria: axis,
        sign_pattern: sign,
        axis_coherence: coherence,
        edges,
        absences,
        verified: causes.is_empty(),
        causes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::construct::{build, build_explicit, build_general};
    use crate::factor::FactorTerm;
    use crate::graph::build_graph;

    #[test]
    fn four_nodes_edge_three_to_one() {
        let spec = build_explicit(4, 0.01).unwrap();
        let graph = build_graph(4).unwrap();
        let r = verify_edge(&spec, &graph, Edge::new(3, 1), &VerifyParams::default()).unwrap();
        assert_eq!(r.verdict, Verdict::Verified);
        assert_eq!(r.plane, 1);
        assert!(r.miss_distance <= 1e-2 + 1e-9);
    }

    #[test]
    fn six_nodes_edge_four_to_six() {
        let spec = build_explicit(6, 0.01).unwrap();
        let graph = build_graph(6).unwrap();
        let r = verify_edge(&spec, &graph, Edge::new(4, 6), &VerifyParams::default()).unwrap();
        assert_eq!((r.verdict, r.plane), (Verdict::Verified, 3));
    }

    #[test]
    fn hypothetical_edge_is_blocked() {
        let spec = build_explicit(4, 0.01).unwrap();
        let r = verify_edge_in_plane(&spec, Edge::new(2, 1), 1, &VerifyParams::default()).unwrap();
        assert_eq!(r.verdict, Verdict::Failed);
        assert_eq!(r.hit_node, Some(2));
    }

    #[test]
    fn edge_outside_graph_rejected() {
        let spec = build_explicit(4, 0.01).unwrap();
        let graph = build_graph(4).unwrap();
        assert!(verify_edge(&spec, &graph, Edge::new(2, 1), &VerifyParams::default()).is_err());
    }

    #[test]
    fn parameter_bounds() {
        let bad = [
            VerifyParams { delta: 1e-7, ..Default::default() },
            VerifyParams { delta: 0.02, eta: 0.05, ..Default::default() },
            VerifyParams { eta: 1e-3, ..Default::default() },
        ];
        for p in bad {
            assert!(p.validate().is_err());
        }
    }

    #[test]
    fn absence_examples() {
        let spec = build_explicit(4, 0.01).unwrap();
        let a = verify_absence(&spec, &build_graph(4).unwrap(), 1).unwrap();
        assert_eq!(a.len(), 1);
        assert_eq!((a[0].node, a[0].verdict), (2, Verdict::Verified));
        assert!(a[0].restricted_eigenvalues.iter().all(|v| *v < 0.0));

        let spec = build_explicit(5, 0.01).unwrap();
        let a = verify_absence(&spec, &build_graph(5).unwrap(), 1).unwrap();
        assert_eq!(a.iter().map(|r| r.node).collect::<Vec<_>>(), vec![2, 3]);
        assert!(a.iter().all(|r| r.verdict == Verdict::Verified));

        let spec = build_explicit(3, 0.01).unwrap();
        let g = build_graph(3).unwrap();
        assert!((1..=3).all(|j| verify_absence(&spec, &g, j).unwrap().is_empty()));
    }

    #[test]
    fn full_realization_small_n() {
        for n in [3, 5] {
            let spec = build(n, None, 0.01).unwrap();
            let graph = build_graph(n).unwrap();
            let report = verify_realization(&spec, &graph, &VerifyParams::default()).unwrap();
            assert!(report.verified, "n={n}: {:?}", report.causes);
            assert_eq!(report.edges.len(), 2 * n);
            let keys: Vec<_> = report.edges.iter().map(|r| (r.plane, r.source)).collect();
            let mut sorted = keys.clone();
            sorted.sort();
            assert_eq!(keys, sorted);
        }
    }

    #[test]
    fn tampered_factor_is_caught() {
        let mut spec = build_explicit(4, 0.01).unwrap();
        let f = &mut spec.planes[0].f;
        let i = f
            .iter()
            .position(|t| matches!(t, FactorTerm::CircleLeftCentered { .. }))
            .unwrap();
        let FactorTerm::CircleLeftCentered { anchor } = f[i] else { unreachable!() };
        f[i] = FactorTerm::CircleRightCentered { anchor };
        let report = verify_realization(&spec, &build_graph(4).unwrap(), &VerifyParams::default()).unwrap();
        assert!(!report.verified);
        assert!(report.axis_coherence.iter().any(|c| !c.intrusions.is_empty()));
    }

    #[test]
    fn general_four_nodes_fails_coherence() {
        let spec = build_general(4, 0.01).unwrap();
        let report = verify_realization(&spec, &build_graph(4).unwrap(), &VerifyParams::default()).unwrap();
        assert!(!report.verified);
        assert!(!report.axis_coherence[4].intrusions.is_empty());
    }

    #[test]
    fn mismatched_sizes_rejected() {
        let spec = build_explicit(4, 0.01).unwrap();
        assert!(verify_realization(&spec, &build_graph(5).unwrap(), &VerifyParams::default()).is_err());
    }
}
