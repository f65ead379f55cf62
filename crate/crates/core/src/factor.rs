//! Conic and parabolic factors of the field components, evaluated in
//! factored form together with their gradients.

use serde::{Deserialize, Serialize};

/// One factor of a component product, as a function of `(x, y)` where `y` is
/// the coordinate of the plane the component belongs to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum FactorTerm {
    /// `y^2 - x + anchor`: parabola opening to the right.
    ParabolaRight { anchor: f64 },
    /// `-y^2 - x + anchor`: parabola opening to the left.
    ParabolaLeft { anchor: f64 },
    /// `y^2 + (x - (anchor + 1/2))^2 - 1/4`: circle through `anchor` and `anchor + 1`.
    CircleRightCentered { anchor: f64 },
    /// `y^2 + (x - (anchor - 1/2))^2 - 1/4`: circle through `anchor - 1` and `anchor`.
    CircleLeftCentered { anchor: f64 },
    /// `a y^2 + (x - anchor)^2 - b`, covering `cover` consecutive circles.
    WideEllipse { anchor: f64, a: f64, b: f64, cover: u32 },
    /// `prod_k (x - k)` over the listed integer roots.
    AxisProduct { axis_roots: Vec<i64> },
}

/// Value and first partial derivatives of a scalar function of `(x, y)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jet {
    pub value: f64,
    pub dx: f64,
    pub dy: f64,
}

impl Jet {
    pub const ONE: Jet = Jet {
        value: 1.0,
        dx: 0.0,
        dy: 0.0,
    };

    #[inline]
    fn mul(self, other: Jet) -> Jet {
        Jet {
            value: self.value * other.value,
            dx: self.dx * other.value + self.value * other.dx,
            dy: self.dy * other.value + self.value * other.dy,
        }
    }
}

impl FactorTerm {
    pub fn kind_name(&self) -> &'static str {
        match self {
            FactorTerm::ParabolaRight { .. } => "ParabolaRight",
            FactorTerm::ParabolaLeft { .. } => "ParabolaLeft",
            FactorTerm::CircleRightCentered { .. } => "CircleRightCentered",
            FactorTerm::CircleLeftCentered { .. } => "CircleLeftCentered",
            FactorTerm::WideEllipse { .. } => "WideEllipse",
            FactorTerm::AxisProduct { .. } => "AxisProduct",
        }
    }

    /// The ellipse/circle center, parabola vertex, or `None` for the axis product.
    pub fn center(&self) -> Option<f64> {
        match *self {
            FactorTerm::ParabolaRight { anchor } | FactorTerm::ParabolaLeft { anchor } => {
                Some(anchor)
            }
            FactorTerm::CircleRightCentered { anchor } => Some(anchor + 0.5),
            FactorTerm::CircleLeftCentered { anchor } => Some(anchor - 0.5),
            FactorTerm::WideEllipse { anchor, .. } => Some(anchor),
            FactorTerm::AxisProduct { .. } => None,
        }
    }

    #[inline]
    pub fn eval(&self, x: f64, y: f64) -> f64 {
        let y2 = y * y;
        match self {
            FactorTerm::ParabolaRight { anchor } => y2 - x + anchor,
            FactorTerm::ParabolaLeft { anchor } => -y2 - x + anchor,
            FactorTerm::CircleRightCentered { anchor } => {
                let d = x - (anchor + 0.5);
                y2 + d * d - 0.25
            }
            FactorTerm::CircleLeftCentered { anchor } => {
                let d = x - (anchor - 0.5);
                y2 + d * d - 0.25
            }
            FactorTerm::WideEllipse { anchor, a, b, .. } => {
                let d = x - anchor;
                a * y2 + d * d - b
            }
            FactorTerm::AxisProduct { axis_roots } => {
                axis_roots.iter().fold(1.0, |acc, &k| acc * (x - k as f64))
            }
        }
    }

    #[inline]
    pub fn jet(&self, x: f64, y: f64) -> Jet {
        let y2 = y * y;
        match self {
            FactorTerm::ParabolaRight { anchor } => Jet {
                value: y2 - x + anchor,
                dx: -1.0,
                dy: 2.0 * y,
            },
            FactorTerm::ParabolaLeft { anchor } => Jet {
                value: -y2 - x + anchor,
                dx: -1.0,
                dy: -2.0 * y,
            },
            FactorTerm::CircleRightCentered { anchor } => {
                let d = x - (anchor + 0.5);
                Jet {
                    value: y2 + d * d - 0.25,
                    dx: 2.0 * d,
                    dy: 2.0 * y,
                }
            }
            FactorTerm::CircleLeftCentered { anchor } => {
                let d = x - (anchor - 0.5);
                Jet {
                    value: y2 + d * d - 0.25,
                    dx: 2.0 * d,
                    dy: 2.0 * y,
                }
            }
            FactorTerm::WideEllipse { anchor, a, b, .. } => {
                let d = x - anchor;
                Jet {
                    value: a * y2 + d * d - b,
                    dx: 2.0 * d,
                    dy: 2.0 * a * y,
                }
            }
            FactorTerm::AxisProduct { axis_roots } => {
                let mut jet = Jet::ONE;
                for &k in axis_roots {
                    jet = jet.mul(Jet {
                        value: x - k as f64,
                        dx: 1.0,
                        dy: 0.0,
                    });
                }
                jet
            }
        }
    }

    /// Real zeros on the x-axis (`y = 0`), sorted.
    pub fn axis_zeros(&self) -> Vec<f64> {
        match self {
            FactorTerm::ParabolaRight { anchor } | FactorTerm::ParabolaLeft { anchor } => {
                vec![*anchor]
            }
            FactorTerm::CircleRightCentered { anchor } => vec![*anchor, anchor + 1.0],
            FactorTerm::CircleLeftCentered { anchor } => vec![anchor - 1.0, *anchor],
            FactorTerm::WideEllipse { anchor, b, .. } => {
                if *b > 0.0 {
                    let r = b.sqrt();
                    vec![anchor - r, anchor + r]
                } else {
                    Vec::new()
                }
            }
            FactorTerm::AxisProduct { axis_roots } => {
                let mut roots: Vec<f64> = axis_roots.iter().map(|&k| k as f64).collect();
                roots.sort_by(f64::total_cmp);
                roots
            }
        }
    }

    /// Exact sort key used to compare factor lists as multisets.
    pub fn canonical_key(&self) -> (u8, Vec<u64>) {
        match self {
            FactorTerm::ParabolaRight { anchor } => (0, vec![anchor.to_bits()]),
            FactorTerm::ParabolaLeft { anchor } => (1, vec![anchor.to_bits()]),
            FactorTerm::CircleRightCentered { anchor } => (2, vec![anchor.to_bits()]),
            FactorTerm::CircleLeftCentered { anchor } => (3, vec![anchor.to_bits()]),
            FactorTerm::WideEllipse { anchor, a, b, cover } => (
                4,
                vec![anchor.to_bits(), a.to_bits(), b.to_bits(), *cover as u64],
            ),
            FactorTerm::AxisProduct { axis_roots } => {
                let mut roots: Vec<u64> = axis_roots.iter().map(|&k| k as u64).collect();
                roots.sort_unstable();
                (5, roots)
            }
        }
    }

    /// Human-readable expression, e.g. `(-y3^2 - x + 6)`.
    pub fn render(&self, y: &str) -> String {
        fn shift(c: f64) -> String {
            if c >= 0.0 {
                format!("x - {c}")
            } else {
                format!("x + {}", -c)
            }
        }
        match self {
            FactorTerm::ParabolaRight { anchor } => format!("({y}^2 - x + {anchor})"),
            FactorTerm::ParabolaLeft { anchor } => format!("(-{y}^2 - x + {anchor})"),
            FactorTerm::CircleRightCentered { anchor } => {
                format!("({y}^2 + ({})^2 - 1/4)", shift(anchor + 0.5))
            }
            FactorTerm::CircleLeftCentered { anchor } => {
                format!("({y}^2 + ({})^2 - 1/4)", shift(anchor - 0.5))
            }
            FactorTerm::WideEllipse { anchor, a, b, .. } => {
                format!("({a}{y}^2 + ({})^2 - {b})", shift(*anchor))
            }
            FactorTerm::AxisProduct { axis_roots } => {
                let lo = axis_roots.iter().min().copied().unwrap_or(0);
                let hi = axis_roots.iter().max().copied().unwrap_or(0);
                format!("prod_{{k={lo}}}^{{{hi}}} (x - k)")
            }
        }
    }
}

/// Product of `factors` at `(x, y)`; no expansion into monomials.
#[inline]
pub fn product(factors: &[FactorTerm], x: f64, y: f64) -> f64 {
    factors.iter().fold(1.0, |acc, f| acc * f.eval(x, y))
}

/// Product and gradient by running product-rule accumulation: after the
/// `i`-th factor the jet holds the prefix product and its derivative.
#[inline]
pub fn product_jet(factors: &[FactorTerm], x: f64, y: f64) -> Jet {
    factors
        .iter()
        .fold(Jet::ONE, |acc, f| acc.mul(f.jet(x, y)))
}

/// Product of absolute factor values; a magnitude scale for residual checks.
pub fn product_magnitude(factors: &[FactorTerm], x: f64, y: f64) -> f64 {
    factors.iter().fold(1.0, |acc, f| acc * f.eval(x, y).abs())
}

/// Multiset equality of two factor lists.
pub fn same_multiset(a: &[FactorTerm], b: &[FactorTerm]) -> bool {
    let mut ka: Vec<_> = a.iter().map(FactorTerm::canonical_key).collect();
    let mut kb: Vec<_> = b.iter().map(FactorTerm::canonical_key).collect();
    ka.sort();
    kb.sort();
    ka == kb
}
