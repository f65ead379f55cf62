//! Transition-matrix stability of two-node cycles.
//!
//! At a node of a quasi-simple cycle the basic matrix acts on the log-scale
//! coordinates `(outgoing, transverse...)`. Its first column is
//! `-lambda / e_out` for the incoming eigenvalue followed by every transverse
//! eigenvalue in plane order; the remaining columns are identity columns.
//! The return map to the incoming section of node `i` is `M_i * M_k`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::construct::VectorFieldSpec;
use crate::dynamics::axis_diagonal;
use crate::error::{Error, Result};
use crate::graph::{DnnGraph, Edge};

/// Distance from 1 below which the leading eigenvalue is not classified.
pub const LAMBDA_TOL: f64 = 1e-9;
/// Relative size below which an eigenvector component counts as zero.
pub const COMPONENT_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransverseRate {
    pub plane: usize,
    /// Signed eigenvalue in the `y_plane` direction.
    pub eigenvalue: f64,
}

/// Eigenvalue magnitudes at one node of a cycle, by role.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeRates {
    pub node: usize,
    /// `r`: magnitude of the (negative) x-eigenvalue.
    pub radial: f64,
    pub incoming_plane: usize,
    /// `c`: magnitude of the contracting eigenvalue along the incoming connection.
    pub contracting: f64,
    pub outgoing_plane: usize,
    /// `e`: the expanding eigenvalue along the outgoing connection.
    pub expanding: f64,
    pub transverse: Vec<TransverseRate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleSpec {
    pub nodes: (usize, usize),
    /// Planes carrying `i -> k` and `k -> i`.
    pub planes: (usize, usize),
    pub eigen_data: [NodeRates; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionData {
    pub nodes: (usize, usize),
    /// Basic matrices `M_i`, `M_k` as rows.
    pub basic_matrices: Vec<Vec<Vec<f64>>>,
    /// Return maps to the incoming sections of `i` and `k`.
    pub products: Vec<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CycleVerdict {
    CompletelyUnstable,
    FragmentarilyAsymptoticallyStable,
    Indeterminate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SectionVerdict {
    /// Node whose incoming section the return map starts from.
    pub section: usize,
    /// Non-trivial eigenvalue, the top-left entry of the product.
    pub alpha: f64,
    pub lambda_max: f64,
    pub w_max: Vec<f64>,
    /// Entries below `alpha` in the first column. With `alpha > 1` the cycle
    /// attracts a positive-measure set only if all of them are positive.
    pub inequality_values: Vec<f64>,
    pub lambda_real: bool,
    pub lambda_above_one: Option<bool>,
    pub same_sign: Option<bool>,
    pub verdict: CycleVerdict,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleClassification {
    pub sections: Vec<SectionVerdict>,
    /// Stable only if every section is; unstable if any section is.
    pub verdict: CycleVerdict,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleAnalysis {
    pub cycle: CycleSpec,
    /// True when every transverse eigenvalue at both nodes is positive.
    pub transverse_expanding: bool,
    pub transition: TransitionData,
    pub classification: CycleClassification,
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|r| m.row(r).iter().copied().collect()).collect()
}

fn from_rows(r: &[Vec<f64>]) -> DMatrix<f64> {
    let n = r.len();
    DMatrix::from_fn(n, n, |i, j| r[i][j])
}

/// Basic transition matrix of one node.
pub fn basic_matrix(rates: &NodeRates) -> Result<DMatrix<f64>> {
    let e = rates.expanding;
    if !(e > 0.0 && e.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "node {}: expanding rate must be positive, got {e}",
            rates.node
        )));
    }
    if rates.contracting.is_nan() || rates.contracting <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "node {}: contracting rate must be positive, got {}",
            rates.node, rates.contracting
        )));
    }
    let size = rates.transverse.len() + 1;
    let mut m = DMatrix::identity(size, size);
    m[(0, 0)] = rates.contracting / e;
    for (r, t) in rates.transverse.iter().enumerate() {
        m[(r + 1, 0)] = -t.eigenvalue / e;
    }
    Ok(m)
}

pub fn build_transition_matrices(cycle: &CycleSpec) -> Result<TransitionData> {
    let [a, b] = &cycle.eigen_data;
    let planes_a: Vec<usize> = a.transverse.iter().map(|t| t.plane).collect();
    let planes_b: Vec<usize> = b.transverse.iter().map(|t| t.plane).collect();
    if planes_a != planes_b {
        return Err(Error::InvalidArgument(
            "both nodes of a cycle must share their transverse planes".into(),
        ));
    }
    let ma = basic_matrix(a)?;
    let mb = basic_matrix(b)?;
    let pa = &ma * &mb;
    let pb = &mb * &ma;
    Ok(TransitionData {
        nodes: cycle.nodes,
        basic_matrices: vec![rows(&ma), rows(&mb)],
        products: vec![rows(&pa), rows(&pb)],
    })
}

/// Leading eigenvalue, its eigenvector and the sign test on a product whose
/// columns after the first are identity columns.
pub fn classify_matrix(section: usize, m: &DMatrix<f64>) -> Result<SectionVerdict> {
    let n = m.nrows();
    for c in 1..n {
        for r in 0..n {
            let want = if r == c { 1.0 } else { 0.0 };
            if m[(r, c)] != want {
                return Err(Error::InvalidArgument(format!(
                    "transition matrix column {c} is not an identity column"
                )));
            }
        }
    }
    let alpha = m[(0, 0)];
    let below: Vec<f64> = (1..n).map(|r| m[(r, 0)]).collect();
    // Triangular: eigenvalues are alpha and 1 (n - 1 times), all real.
    let base = SectionVerdict {
        section,
        alpha,
        lambda_max: alpha.abs().max(1.0),
        w_max: Vec::new(),
        inequality_values: below.clone(),
        lambda_real: true,
        lambda_above_one: None,
        same_sign: None,
        verdict: CycleVerdict::Indeterminate,
    };
    if (alpha - 1.0).abs() <= LAMBDA_TOL || alpha <= -1.0 + LAMBDA_TOL {
        return Ok(base);
    }
    if alpha < 1.0 {
        // lambda_max = 1 from the identity block; any first-axis vector works.
        let mut w = vec![0.0; n];
        w[1.min(n - 1)] = 1.0;
        return Ok(SectionVerdict {
            lambda_max: 1.0,
            w_max: w,
            lambda_above_one: Some(false),
            verdict: CycleVerdict::CompletelyUnstable,
            ..base
        });
    }
    let mut w = vec![1.0];
    w.extend(below.iter().map(|v| v / (alpha - 1.0)));
    let scale = w.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    let zero = w.iter().any(|v| v.abs() <= COMPONENT_TOL * scale);
    let same = w.iter().all(|v| *v > 0.0);
    Ok(SectionVerdict {
        lambda_max: alpha,
        w_max: w,
        lambda_above_one: Some(true),
        same_sign: if zero { None } else { Some(same) },
        verdict: if zero {
            CycleVerdict::Indeterminate
        } else if same {
            CycleVerdict::FragmentarilyAsymptoticallyStable
        } else {
            CycleVerdict::CompletelyUnstable
        },
        ..base
    })
}

pub fn classify_cycle(td: &TransitionData) -> Result<CycleClassification> {
    let sections = [td.nodes.0, td.nodes.1]
        .iter()
        .zip(&td.products)
        .map(|(&node, p)| classify_matrix(node, &from_rows(p)))
        .collect::<Result<Vec<_>>>()?;
    let verdict = if sections.iter().any(|s| s.verdict == CycleVerdict::CompletelyUnstable) {
        CycleVerdict::CompletelyUnstable
    } else if sections.iter().any(|s| s.verdict == CycleVerdict::Indeterminate) {
        CycleVerdict::Indeterminate
    } else {
        CycleVerdict::FragmentarilyAsymptoticallyStable
    };
    Ok(CycleClassification { sections, verdict })
}

fn node_rates(spec: &VectorFieldSpec, node: usize, incoming: usize, outgoing: usize) -> Result<NodeRates> {
    let diag = axis_diagonal(spec, spec.node_positions[node - 1]);
    let c = -diag[incoming];
    let e = diag[outgoing];
    if !(c > 0.0 && e > 0.0) {
        return Err(Error::Numerical(format!(
            "node {node}: eigenvalue signs do not match the cycle (incoming {}, outgoing {})",
            diag[incoming], diag[outgoing]
        )));
    }
    Ok(NodeRates {
        node,
        radial: -diag[0],
        incoming_plane: incoming,
        contracting: c,
        outgoing_plane: outgoing,
        expanding: e,
        transverse: (1..spec.dim)
            .filter(|&j| j != incoming && j != outgoing)
            .map(|j| TransverseRate {
                plane: j,
                eigenvalue: diag[j],
            })
            .collect(),
    })
}

/// Eigenvalue data of the 2-cycle `i -> k -> i`, read from the node Jacobians.
pub fn cycle_spec(spec: &VectorFieldSpec, graph: &DnnGraph, i: usize, k: usize) -> Result<CycleSpec> {
    let (Some(p_ik), Some(p_ki)) = (graph.plane_of_edge(Edge::new(i, k)), graph.plane_of_edge(Edge::new(k, i))) else {
        return Err(Error::InvalidArgument(format!("{i} and {k} do not form a 2-cycle")));
    };
    Ok(CycleSpec {
        nodes: (i, k),
        planes: (p_ik, p_ki),
        eigen_data: [node_rates(spec, i, p_ki, p_ik)?, node_rates(spec, k, p_ik, p_ki)?],
    })
}

pub fn analyze_network_cycles(spec: &VectorFieldSpec, graph: &DnnGraph) -> Result<Vec<CycleAnalysis>> {
    graph
        .two_cycles()
        .into_iter()
        .map(|(i, k)| {
            let cycle = cycle_spec(spec, graph, i, k)?;
            let transition = build_transition_matrices(&cycle)?;
            let classification = classify_cycle(&transition)?;
            let transverse_expanding = cycle
                .eigen_data
                .iter()
                .all(|r| r.transverse.iter().all(|t| t.eigenvalue > 0.0));
            Ok(CycleAnalysis {
                cycle,
                transverse_expanding,
                transition,
                classification,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::construct::build;
    use crate::graph::build_graph;
    use proptest::prelude::*;

    fn rates(node: usize, c: f64, e: f64, transverse: &[(usize, f64)]) -> NodeRates {
        NodeRates {
            node,
            radial: 1.0,
            incoming_plane: 0,
            contracting: c,
            outgoing_plane: 0,
            expanding: e,
            transverse: transverse
                .iter()
                .map(|&(plane, eigenvalue)| TransverseRate { plane, eigenvalue })
                .collect(),
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn hand_cycle(c11: f64, e13: f64, e12: f64, c14: f64, c33: f64, e31: f64, c32: f64, e34: f64) -> CycleSpec {
        CycleSpec {
            nodes: (1, 3),
            planes: (3, 1),
            eigen_data: [
                rates(1, c11, e13, &[(2, e12), (4, -c14)]),
                rates(3, c33, e31, &[(2, -c32), (4, e34)]),
            ],
        }
    }

    #[test]
    fn hand_multiplied_product() {
        let td = build_transition_matrices(&hand_cycle(2.0, 1.0, 1.0, 1.0, 2.0, 1.0, 1.0, 1.0)).unwrap();
        let first: Vec<f64> = td.products[0].iter().map(|r| r[0]).collect();
        assert_eq!(first, vec![4.0, -1.0, 1.0]);
    }

    #[test]
    fn basic_matrix_shape() {
        let m = basic_matrix(&rates(1, 2.0, 4.0, &[(2, 3.0), (4, -1.0)])).unwrap();
        assert_eq!(m[(0, 0)], 0.5);
        assert_eq!(m[(1, 0)], -0.75);
        assert_eq!(m[(2, 0)], 0.25);
        for c in 1..3 {
            for r in 0..3 {
                assert_eq!(m[(r, c)], if r == c { 1.0 } else { 0.0 });
            }
        }
        assert!(basic_matrix(&rates(1, 2.0, 0.0, &[])).is_err());
    }

    #[test]
    fn unit_rates_are_indeterminate() {
        let td = build_transition_matrices(&hand_cycle(1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0)).unwrap();
        let c = classify_cycle(&td).unwrap();
        for s in &c.sections {
            assert_eq!(s.lambda_max, 1.0);
            assert_eq!(s.verdict, CycleVerdict::Indeterminate);
        }
    }

    #[test]
    fn two_by_two_eigenvector() {
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, -1.0, 1.0]);
        let v = classify_matrix(1, &m).unwrap();
        assert_eq!(v.lambda_max, 2.0);
        assert_eq!(v.w_max, vec![1.0, -1.0]);
        assert_eq!(v.verdict, CycleVerdict::CompletelyUnstable);
    }

    #[test]
    fn contracting_product_is_unstable() {
        // c11 c33 <= e13 e31
        let td = build_transition_matrices(&hand_cycle(1.0, 2.0, 0.1, 3.0, 1.0, 1.0, 3.0, 0.1)).unwrap();
        let c = classify_cycle(&td).unwrap();
        assert_eq!(c.verdict, CycleVerdict::CompletelyUnstable);
        assert!(c.sections.iter().all(|s| s.lambda_above_one == Some(false)));
    }

    #[test]
    fn all_four_inequalities_give_stability() {
        // c11 c33 = 9 > e13 e31 = 1; transverse terms small and helpful.
        let (c11, e13, e12, c14, c33, e31, c32, e34) = (3.0, 1.0, 0.1, 2.0, 3.0, 1.0, 2.0, 0.1);
        let ineq = [
            -e12 * c33 / (e13 * e31) + c32 / e31,
            c14 * c33 / (e13 * e31) - e34 / e31,
            c11 * c32 / (e13 * e31) - e12 / e13,
            -c11 * e34 / (e13 * e31) + c14 / e13,
        ];
        assert!(ineq.iter().all(|v| *v > 0.0));
        let td = build_transition_matrices(&hand_cycle(c11, e13, e12, c14, c33, e31, c32, e34)).unwrap();
        let c = classify_cycle(&td).unwrap();
        assert_eq!(c.verdict, CycleVerdict::FragmentarilyAsymptoticallyStable);
        let mut got: Vec<f64> = c.sections.iter().flat_map(|s| s.inequality_values.clone()).collect();
        let mut want = ineq.to_vec();
        got.sort_by(f64::total_cmp);
        want.sort_by(f64::total_cmp);
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-12);
        }
    }

    #[test]
    fn three_node_cycles_are_unstable() {
        let spec = build(3, None, 0.01).unwrap();
        let out = analyze_network_cycles(&spec, &build_graph(3).unwrap()).unwrap();
        assert_eq!(out.len(), 3);
        for a in &out {
            assert!(a.transverse_expanding);
            assert_eq!(a.classification.verdict, CycleVerdict::CompletelyUnstable);
            assert_eq!(a.transition.basic_matrices[0].len(), 2);
        }
    }

    #[test]
    fn four_node_cycles() {
        let spec = build(4, None, 0.01).unwrap();
        let out = analyze_network_cycles(&spec, &build_graph(4).unwrap()).unwrap();
        assert_eq!(out.iter().map(|a| a.cycle.nodes).collect::<Vec<_>>(), vec![(1, 3), (2, 4)]);
        let c13 = &out[0].cycle;
        assert_eq!(c13.planes, (3, 1));
        assert_eq!(c13.eigen_data[0].contracting, 0.875);
        assert_eq!(c13.eigen_data[1].contracting, 0.4375);
        assert_eq!(out[0].transition.basic_matrices[0].len(), 3);
        for a in &out {
            assert_eq!(a.classification.verdict, CycleVerdict::CompletelyUnstable);
            assert!(a.classification.sections.iter().all(|s| s.lambda_above_one == Some(false)));
        }
    }

    #[test]
    fn larger_networks_have_no_two_cycles() {
        for n in [5, 6, 9] {
            let spec = build(n, None, 0.01).unwrap();
            assert!(analyze_network_cycles(&spec, &build_graph(n).unwrap()).unwrap().is_empty());
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn expanding_transverse_breaks_sign_test(alpha in 1.0001f64..1e3, beta in -1e3f64..-1e-6) {
            let m = DMatrix::from_row_slice(2, 2, &[alpha, 0.0, beta, 1.0]);
            let v = classify_matrix(1, &m).unwrap();
            prop_assert_eq!(v.same_sign, Some(false));
            prop_assert_eq!(v.verdict, CycleVerdict::CompletelyUnstable);
        }

        #[test]
        fn both_sections_share_lambda(c1 in 0.1f64..10.0, e1 in 0.1f64..10.0, t1 in -5.0f64..5.0,
                                      c2 in 0.1f64..10.0, e2 in 0.1f64..10.0, t2 in -5.0f64..5.0) {
            let cycle = CycleSpec {
                nodes: (1, 2),
                planes: (2, 1),
                eigen_data: [rates(1, c1, e1, &[(3, t1)]), rates(2, c2, e2, &[(3, t2)])],
            };
            let td = build_transition_matrices(&cycle).unwrap();
            let c = classify_cycle(&td).unwrap();
            prop_assert!((c.sections[0].lambda_max - c.sections[1].lambda_max).abs() <= 1e-12 * c.sections[0].lambda_max);
        }
    }
}
