//! Adaptive trajectory integration with exact plane pinning and ball events.
//!
//! The default method is the Dormand–Prince 5(4) pair with PI step control.
//! Long runs near strongly contracting nodes turn stiff; when the step size is
//! repeatedly limited by stability rather than accuracy the integrator switches
//! to a linearly implicit Rosenbrock 2(3) pair with the exact Jacobian.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::construct::VectorFieldSpec;
use crate::dynamics::{eval_field_into, jacobian_into};
use crate::error::{Error, Result};

const SAFETY: f64 = 0.9;
const FAC_MIN: f64 = 0.2;
const FAC_MAX: f64 = 5.0;
const PI_ALPHA: f64 = 0.17;
const PI_BETA: f64 = 0.04;
const MIN_STEP: f64 = 1e-14;
const EVENT_TOL: f64 = 1e-9;
const STIFF_LIMIT: f64 = 3.25;
const STIFF_COUNT: usize = 15;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventBall {
    pub center: Vec<f64>,
    pub radius: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Dormand–Prince, switching to Rosenbrock once stiffness is detected.
    Auto,
    Dopri,
    Rosenbrock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntegrateOptions {
    pub t_max: f64,
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub method: Method,
    /// Integrate the time-reversed field.
    pub backward: bool,
    /// Abort with a numerical error after this many accepted steps.
    pub max_steps: usize,
    pub record_samples: bool,
}

impl Default for IntegrateOptions {
    fn default() -> Self {
        Self {
            t_max: 1e4,
            rel_tol: 1e-8,
            abs_tol: 1e-10,
            method: Method::Auto,
            backward: false,
            max_steps: 50_000_000,
            record_samples: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "kebab-case")]
pub enum TerminalEvent {
    EnteredBall { id: usize },
    TMaxReached,
    LeftDomain,
    StepUnderflow,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub t: f64,
    pub point: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub samples: Vec<Sample>,
    pub terminal_event: TerminalEvent,
    pub final_time: f64,
    pub final_point: Vec<f64>,
    pub accepted_steps: usize,
    pub rejected_steps: usize,
    /// Time at which the integrator switched to the implicit method.
    pub stiff_switch_time: Option<f64>,
    /// Largest |y_i| produced by a step, before re-pinning, over coordinates
    /// that started at exactly zero.
    pub pinned_drift: f64,
}

impl Trajectory {
    /// Samples as CSV with columns `t, x, y1, ...`.
    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let dim = self.final_point.len();
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["t".to_string(), "x".to_string()];
        header.extend((1..dim).map(|j| format!("y{j}")));
        w.write_record(&header)?;
        for s in &self.samples {
            let mut row = vec![format!("{:.17e}", s.t)];
            row.extend(s.point.iter().map(|v| format!("{v:.17e}")));
            w.write_record(&row)?;
        }
        w.into_inner().map_err(|e| Error::Io(e.into_error()))
    }
}

// Dormand–Prince 5(4) tableau.
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

struct System<'a> {
    spec: &'a VectorFieldSpec,
    direction: f64,
    jac: DMatrix<f64>,
}

impl System<'_> {
    fn rhs(&self, y: &[f64], out: &mut [f64]) {
        eval_field_into(self.spec, y, out);
        if self.direction < 0.0 {
            out.iter_mut().for_each(|v| *v = -*v);
        }
    }

    fn jacobian(&mut self, y: &[f64]) {
        jacobian_into(self.spec, y, &mut self.jac);
        if self.direction < 0.0 {
            self.jac.neg_mut();
        }
    }
}

struct StepResult {
    y: Vec<f64>,
    err: f64,
    /// `h * |lambda|` estimate from the last two stages (explicit steps only).
    stiffness: f64,
    f_new: Vec<f64>,
}

fn error_norm(err: &[f64], y0: &[f64], y1: &[f64], rel: f64, abs: f64) -> f64 {
    let sum: f64 = err
        .iter()
        .zip(y0.iter().zip(y1))
        .map(|(e, (a, b))| {
            let sc = abs + rel * a.abs().max(b.abs());
            (e / sc).powi(2)
        })
        .sum();
    (sum / err.len() as f64).sqrt()
}

fn dopri_step(sys: &System, y: &[f64], f0: &[f64], h: f64, rel: f64, abs: f64) -> StepResult {
    let dim = y.len();
    let mut k: Vec<Vec<f64>> = vec![f0.to_vec()];
    let mut stage = vec![0.0; dim];
    for s in 1..7 {
        for i in 0..dim {
            let mut acc = 0.0;
            for (m, km) in k.iter().enumerate() {
                acc += A[s][m] * km[i];
            }
            stage[i] = y[i] + h * acc;
        }
        let mut ks = vec![0.0; dim];
        sys.rhs(&stage, &mut ks);
        k.push(ks);
    }
    // After the loop `stage` holds the 5th-order solution (last row of A).
    let y_new = stage.clone();
    // Sixth stage point, for the stiffness estimate.
    let stage6: Vec<f64> = (0..dim)
        .map(|i| y[i] + h * (0..5).map(|m| A[5][m] * k[m][i]).sum::<f64>())
        .collect();
    let err_vec: Vec<f64> = (0..dim)
        .map(|i| h * (0..7).map(|m| E[m] * k[m][i]).sum::<f64>())
        .collect();
    let err = error_norm(&err_vec, y, &y_new, rel, abs);
    let num: f64 = (0..dim).map(|i| (k[6][i] - k[5][i]).powi(2)).sum::<f64>().sqrt();
    let den: f64 = (0..dim).map(|i| (y_new[i] - stage6[i]).powi(2)).sum::<f64>().sqrt();
    let stiffness = if den > 0.0 { h * num / den } else { 0.0 };
    StepResult {
        y: y_new,
        err,
        stiffness,
        f_new: k.pop().expect("seven stages"),
    }
}

fn rosenbrock_step(
    sys: &mut System,
    y: &[f64],
    f0: &[f64],
    h: f64,
    rel: f64,
    abs: f64,
) -> Option<StepResult> {
    let dim = y.len();
    let d = 1.0 / (2.0 + std::f64::consts::SQRT_2);
    let e32 = 6.0 + std::f64::consts::SQRT_2;
    sys.jacobian(y);
    let w = DMatrix::identity(dim, dim) - &sys.jac * (h * d);
    let lu = w.lu();
    let solve = |b: DVector<f64>| lu.solve(&b);

    let f0v = DVector::from_column_slice(f0);
    let k1 = solve(f0v.clone())?;
    let mid: Vec<f64> = (0..dim).map(|i| y[i] + 0.5 * h * k1[i]).collect();
    let mut f1 = vec![0.0; dim];
    sys.rhs(&mid, &mut f1);
    let f1v = DVector::from_vec(f1);
    let k2 = solve(&f1v - &k1)? + &k1;
    let y_new: Vec<f64> = (0..dim).map(|i| y[i] + h * k2[i]).collect();
    let mut f2 = vec![0.0; dim];
    sys.rhs(&y_new, &mut f2);
    let f2v = DVector::from_column_slice(&f2);
    let k3 = solve(&f2v - (&k2 - &f1v) * e32 - (&k1 - &f0v) * 2.0)?;
    let err_vec: Vec<f64> = (0..dim)
        .map(|i| h / 6.0 * (k1[i] - 2.0 * k2[i] + k3[i]))
        .collect();
    if y_new.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let err = error_norm(&err_vec, y, &y_new, rel, abs);
    Some(StepResult {
        y: y_new,
        err,
        stiffness: 0.0,
        f_new: f2,
    })
}

fn initial_step(sys: &System, y: &[f64], f0: &[f64], rel: f64, abs: f64, t_max: f64) -> f64 {
    let dim = y.len();
    let sc: Vec<f64> = y.iter().map(|v| abs + rel * v.abs()).collect();
    let rms = |v: &[f64]| -> f64 {
        (v.iter().zip(&sc).map(|(a, s)| (a / s).powi(2)).sum::<f64>() / dim as f64).sqrt()
    };
    let d0 = rms(y);
    let d1 = rms(f0);
    let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    let y1: Vec<f64> = (0..dim).map(|i| y[i] + h0 * f0[i]).collect();
    let mut f1 = vec![0.0; dim];
    sys.rhs(&y1, &mut f1);
    let diff: Vec<f64> = (0..dim).map(|i| f1[i] - f0[i]).collect();
    let d2 = rms(&diff) / h0;
    let m = d1.max(d2);
    let h1 = if m <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / m).powf(0.2)
    };
    (100.0 * h0).min(h1).min(t_max)
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| (u - v).powi(2)).sum::<f64>().sqrt()
}

fn validate(spec: &VectorFieldSpec, start: &[f64], opts: &IntegrateOptions) -> Result<()> {
    if start.len() != spec.dim {
        return Err(Error::InvalidArgument(format!(
            "start point has {} coordinates, field has {}",
            start.len(),
            spec.dim
        )));
    }
    let d = spec.domain();
    if !(start[0] >= d.x_min && start[0] <= d.x_max)
        || start[1..].iter().any(|y| !(*y >= 0.0 && *y <= d.y_max))
    {
        return Err(Error::InvalidArgument(format!(
            "start point {start:?} lies outside the domain box"
        )));
    }
    for (name, tol) in [("rel_tol", opts.rel_tol), ("abs_tol", opts.abs_tol)] {
        if !(tol > 0.0 && tol <= 1e-2) {
            return Err(Error::InvalidArgument(format!("{name} must lie in (0, 1e-2], got {tol}")));
        }
    }
    if !(opts.t_max > 0.0 && opts.t_max.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "t_max must be positive and finite, got {}",
            opts.t_max
        )));
    }
    Ok(())
}

/// Integrate from `start` until a ball is entered, the domain box is left,
/// `t_max` is reached or the step size underflows.
///
/// A ball only becomes active once the trajectory has been outside it, so a
/// start inside a ball (the source neighbourhood) does not end the run.
pub fn integrate(
    spec: &VectorFieldSpec,
    start: &[f64],
    opts: &IntegrateOptions,
    events: &[EventBall],
) -> Result<Trajectory> {
    validate(spec, start, opts)?;
    let dim = spec.dim;
    let domain = spec.domain();
    let mut sys = System {
        spec,
        direction: if opts.backward { -1.0 } else { 1.0 },
        jac: DMatrix::zeros(dim, dim),
    };
    let pinned: Vec<usize> = (1..dim).filter(|&i| start[i] == 0.0).collect();
    let mut armed: Vec<bool> = events
        .iter()
        .map(|b| distance(start, &b.center) > b.radius)
        .collect();

    let mut y = start.to_vec();
    let mut t = 0.0;
    let mut f = vec![0.0; dim];
    sys.rhs(&y, &mut f);
    let mut h = initial_step(&sys, &y, &f, opts.rel_tol, opts.abs_tol, opts.t_max);
    let mut implicit = opts.method == Method::Rosenbrock;
    let mut stiff_switch_time = None;
    let mut stiff_hits = 0usize;
    let mut calm = 0usize;
    let mut err_prev: f64 = 1e-4;
    let mut rejected_last = false;
    let mut accepted = 0usize;
    let mut rejected = 0usize;
    let mut pinned_drift: f64 = 0.0;
    let mut samples = Vec::new();
    if opts.record_samples {
        samples.push(Sample { t, point: y.clone() });
    }

    let in_armed_ball = |p: &[f64], armed: &[bool]| -> Option<usize> {
        events
            .iter()
            .enumerate()
            .find(|(i, b)| armed[*i] && distance(p, &b.center) <= b.radius)
            .map(|(i, _)| i)
    };

    let terminal = loop {
        if t >= opts.t_max {
            break TerminalEvent::TMaxReached;
        }
        if accepted >= opts.max_steps {
            return Err(Error::Numerical(format!(
                "integration exceeded {} steps at t = {t}",
                opts.max_steps
            )));
        }
        h = h.min(opts.t_max - t);
        if h < MIN_STEP {
            break TerminalEvent::StepUnderflow;
        }

        let step = if implicit {
            match rosenbrock_step(&mut sys, &y, &f, h, opts.rel_tol, opts.abs_tol) {
                Some(s) => s,
                None => {
                    h *= 0.5;
                    rejected += 1;
                    continue;
                }
            }
        } else {
            dopri_step(&sys, &y, &f, h, opts.rel_tol, opts.abs_tol)
        };
        let order_exp = if implicit { 1.0 / 3.0 } else { 0.2 };

        if !step.err.is_finite() || step.err > 1.0 {
            let fac = if step.err.is_finite() {
                (SAFETY * step.err.powf(-order_exp)).max(FAC_MIN)
            } else {
                FAC_MIN
            };
            h *= fac.min(1.0);
            rejected += 1;
            rejected_last = true;
            continue;
        }

        let mut y_new = step.y;
        let mut f_new = step.f_new;
        for &i in &pinned {
            pinned_drift = pinned_drift.max(y_new[i].abs());
            y_new[i] = 0.0;
            f_new[i] = 0.0;
        }

        if !implicit && opts.method == Method::Auto {
            if step.stiffness > STIFF_LIMIT {
                calm = 0;
                stiff_hits += 1;
                if stiff_hits >= STIFF_COUNT {
                    implicit = true;
                    stiff_switch_time = Some(t + h);
                    log::debug!("stiffness detected at t = {}; switching to Rosenbrock", t + h);
                }
            } else {
                calm += 1;
                if calm >= 6 {
                    stiff_hits = 0;
                }
            }
        }

        let left = y_new[0] < domain.x_min
            || y_new[0] > domain.x_max
            || y_new[1..].iter().any(|v| *v > domain.y_max || *v < -opts.abs_tol)
            || y_new.iter().any(|v| !v.is_finite());

        if !left {
            if let Some(mut id) = in_armed_ball(&y_new, &armed) {
                // Bisect the step size for the first entry into an armed ball.
                let (mut lo, mut hi) = (0.0, h);
                let mut point = y_new.clone();
                for _ in 0..200 {
                    let d = distance(&point, &events[id].center);
                    if (events[id].radius - d).abs() <= EVENT_TOL || hi - lo <= MIN_STEP {
                        break;
                    }
                    let mid = 0.5 * (lo + hi);
                    let trial = if implicit {
                        rosenbrock_step(&mut sys, &y, &f, mid, opts.rel_tol, opts.abs_tol)
                            .map(|s| s.y)
                    } else {
                        Some(dopri_step(&sys, &y, &f, mid, opts.rel_tol, opts.abs_tol).y)
                    };
                    let Some(mut trial) = trial else { break };
                    for &i in &pinned {
                        trial[i] = 0.0;
                    }
                    match in_armed_ball(&trial, &armed) {
                        Some(hit) => {
                            hi = mid;
                            point = trial;
                            id = hit;
                        }
                        None => lo = mid,
                    }
                }
                t += hi;
                accepted += 1;
                if opts.record_samples {
                    samples.push(Sample { t, point: point.clone() });
                }
                y = point;
                break TerminalEvent::EnteredBall { id };
            }
        }

        t += h;
        accepted += 1;
        y = y_new;
        f = f_new;
        if opts.record_samples {
            samples.push(Sample { t, point: y.clone() });
        }
        if left {
            break TerminalEvent::LeftDomain;
        }
        for (i, b) in events.iter().enumerate() {
            if !armed[i] && distance(&y, &b.center) > b.radius {
                armed[i] = true;
            }
        }

        let err = step.err.max(1e-10);
        let mut fac = if implicit {
            SAFETY * err.powf(-order_exp)
        } else {
            SAFETY * err.powf(-PI_ALPHA) * err_prev.powf(PI_BETA)
        };
        fac = fac.clamp(FAC_MIN, FAC_MAX);
        if rejected_last {
            fac = fac.min(1.0);
        }
        h *= fac;
        err_prev = err;
        rejected_last = false;
    };

    Ok(Trajectory {
        samples,
        terminal_event: terminal,
        final_time: t,
        final_point: y,
        accepted_steps: accepted,
        rejected_steps: rejected,
        stiff_switch_time,
        pinned_drift,
    })
}
