//! Dormand–Prince 5(4) integrator for autonomous systems with exit detection.
//!
//! The integrator advances `y' = f(y)` towards a target time (either sign) and
//! watches a membership predicate. When an accepted step ends outside, the
//! crossing is located by bisection on the step length, re-stepping from the
//! last accepted state.

use crate::expr::ExprError;

/// Right-hand side of an autonomous system.
pub trait System {
    fn dim(&self) -> usize;
    fn rhs(&self, y: &[f64], out: &mut [f64]) -> Result<(), ExprError>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegratorOptions {
    pub rtol: f64,
    pub atol: f64,
    /// Upper bound on |h|; also the maximum spacing of recorded samples.
    pub max_step: f64,
    /// Steps shrunk below this (after guard failures or error control) end the run.
    pub min_step: f64,
    /// Width of the final bisection bracket around an exit time.
    pub exit_tol: f64,
    pub max_steps: usize,
}

impl Default for IntegratorOptions {
    fn default() -> Self {
        IntegratorOptions {
            rtol: 1e-9,
            atol: 1e-12,
            max_step: 0.1,
            min_step: 1e-14,
            exit_tol: 1e-12,
            max_steps: 2_000_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum End {
    /// The target time was reached inside.
    Reached,
    /// The state left the predicate between `t_in` and `t_out`.
    /// `y_out` is `None` when the right-hand side could not be evaluated
    /// (domain guard), which ends the chart rather than crossing a boundary.
    Exited {
        t_in: f64,
        y_in: Vec<f64>,
        t_out: f64,
        y_out: Option<Vec<f64>>,
        guard: Option<String>,
    },
    /// Error control drove the step below `min_step`, or the step budget ran out.
    Underflow { t: f64, y: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    /// `(t, y)` at the start, after every accepted step and at the end.
    pub samples: Vec<(f64, Vec<f64>)>,
    pub end: End,
}

impl Trajectory {
    pub fn last(&self) -> &(f64, Vec<f64>) {
        self.samples.last().expect("trajectory holds its initial sample")
    }
}

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

struct Stepper<'a, S: System + ?Sized> {
    sys: &'a S,
    k: [Vec<f64>; 7],
    tmp: Vec<f64>,
}

impl<'a, S: System + ?Sized> Stepper<'a, S> {
    fn new(sys: &'a S) -> Self {
        let n = sys.dim();
        Stepper {
            sys,
            k: std::array::from_fn(|_| vec![0.0; n]),
            tmp: vec![0.0; n],
        }
    }

    fn stage(&mut self, y: &[f64], h: f64, coeffs: &[f64], out: usize) -> Result<(), ExprError> {
        for i in 0..y.len() {
            let mut acc = 0.0;
            for (j, a) in coeffs.iter().enumerate() {
                acc += a * self.k[j][i];
            }
            self.tmp[i] = y[i] + h * acc;
        }
        let (tmp, k) = (&self.tmp, &mut self.k);
        self.sys.rhs(tmp, &mut k[out])
    }

    /// One step of signed size `h` from `y`; returns the 5th-order state and
    /// the embedded error vector. `k[0]` must already hold `f(y)`.
    fn step(&mut self, y: &[f64], h: f64) -> Result<(Vec<f64>, Vec<f64>), ExprError> {
        self.stage(y, h, &[A21], 1)?;
        self.stage(y, h, &[A31, A32], 2)?;
        self.stage(y, h, &[A41, A42, A43], 3)?;
        self.stage(y, h, &[A51, A52, A53, A54], 4)?;
        self.stage(y, h, &[A61, A62, A63, A64, A65], 5)?;
        let n = y.len();
        let mut y_new = vec![0.0; n];
        for i in 0..n {
            y_new[i] = y[i]
                + h * (B1 * self.k[0][i]
                    + B3 * self.k[2][i]
                    + B4 * self.k[3][i]
                    + B5 * self.k[4][i]
                    + B6 * self.k[5][i]);
        }
        let (k, sys) = (&mut self.k, self.sys);
        sys.rhs(&y_new, &mut k[6])?;
        let mut err = vec![0.0; n];
        for i in 0..n {
            err[i] = h
                * (E1 * self.k[0][i]
                    + E3 * self.k[2][i]
                    + E4 * self.k[3][i]
                    + E5 * self.k[4][i]
                    + E6 * self.k[5][i]
                    + E7 * self.k[6][i]);
        }
        if y_new.iter().any(|v| !v.is_finite()) {
            return Err(ExprError::Domain {
                op: "overflow",
                expr: "integrator state".into(),
                point: y.to_vec(),
            });
        }
        Ok((y_new, err))
    }
}

fn error_norm(y: &[f64], y_new: &[f64], err: &[f64], opts: &IntegratorOptions) -> f64 {
    let n = y.len().max(1) as f64;
    let s: f64 = y
        .iter()
        .zip(y_new)
        .zip(err)
        .map(|((a, b), e)| {
            let sc = opts.atol + opts.rtol * a.abs().max(b.abs());
            (e / sc) * (e / sc)
        })
        .sum();
    (s / n).sqrt()
}

/// Integrates from `y0` at `t = 0` to `t_end` while `inside` holds.
///
/// `inside(y0)` is assumed; callers check the initial point themselves.
pub fn integrate<S, F>(
    sys: &S,
    y0: &[f64],
    t_end: f64,
    inside: F,
    opts: &IntegratorOptions,
) -> Trajectory
where
    S: System + ?Sized,
    F: Fn(&[f64]) -> bool,
{
    let mut samples = vec![(0.0, y0.to_vec())];
    if t_end == 0.0 {
        return Trajectory {
            samples,
            end: End::Reached,
        };
    }
    let dir = t_end.signum();
    let span = t_end.abs();
    let mut stepper = Stepper::new(sys);
    let mut y = y0.to_vec();
    let mut t = 0.0f64;

    if let Err(e) = sys.rhs(&y, &mut stepper.k[0]) {
        return Trajectory {
            samples,
            end: End::Exited {
                t_in: 0.0,
                y_in: y,
                t_out: 0.0,
                y_out: None,
                guard: Some(e.to_string()),
            },
        };
    }
    let mut h = initial_step(&y, &stepper.k[0], opts).min(span);
    let mut steps = 0usize;

    while t < span {
        steps += 1;
        if steps > opts.max_steps {
            return Trajectory {
                samples,
                end: End::Underflow { t: dir * t, y },
            };
        }
        let last = span - t <= h;
        let h_try = if last { span - t } else { h };
        match stepper.step(&y, dir * h_try) {
            Err(e) => {
                h = h_try * 0.5;
                if h < opts.min_step {
                    return Trajectory {
                        end: End::Exited {
                            t_in: dir * t,
                            y_in: y,
                            t_out: dir * (t + h_try),
                            y_out: None,
                            guard: Some(e.to_string()),
                        },
                        samples,
                    };
                }
                sys.rhs(&y, &mut stepper.k[0]).expect("rhs held at the accepted state");
            }
            Ok((y_new, err)) => {
                let en = error_norm(&y, &y_new, &err, opts);
                if en > 1.0 {
                    let factor = (0.9 * en.powf(-0.2)).clamp(0.2, 1.0);
                    h = h_try * factor;
                    if h < opts.min_step {
                        return Trajectory {
                            samples,
                            end: End::Underflow { t: dir * t, y },
                        };
                    }
                    sys.rhs(&y, &mut stepper.k[0]).expect("rhs held at the accepted state");
                    continue;
                }
                if !inside(&y_new) {
                    let end = locate_exit(&mut stepper, &y, t, h_try, dir, &inside, opts);
                    if let End::Exited { t_in, y_in, .. } = &end {
                        if *t_in != dir * t {
                            samples.push((*t_in, y_in.clone()));
                        }
                    }
                    return Trajectory { samples, end };
                }
                t = if last { span } else { t + h_try };
                y = y_new;
                samples.push((dir * t, y.clone()));
                let k6 = stepper.k[6].clone();
                stepper.k[0] = k6;
                let factor = if en == 0.0 {
                    5.0
                } else {
                    (0.9 * en.powf(-0.2)).clamp(0.2, 5.0)
                };
                h = (h_try * factor).min(opts.max_step);
                if last {
                    break;
                }
            }
        }
    }
    Trajectory {
        samples,
        end: End::Reached,
    }
}

fn initial_step(y: &[f64], f: &[f64], opts: &IntegratorOptions) -> f64 {
    let sc: Vec<f64> = y.iter().map(|v| opts.atol + opts.rtol * v.abs()).collect();
    let d0 = y.iter().zip(&sc).map(|(v, s)| (v / s).powi(2)).sum::<f64>().sqrt();
    let d1 = f.iter().zip(&sc).map(|(v, s)| (v / s).powi(2)).sum::<f64>().sqrt();
    let h0 = if d0 < 1e-5 || d1 < 1e-5 {
        1e-6
    } else {
        0.01 * d0 / d1
    };
    h0.min(opts.max_step).max(opts.min_step)
}

fn locate_exit<S, F>(
    stepper: &mut Stepper<'_, S>,
    y: &[f64],
    t: f64,
    h: f64,
    dir: f64,
    inside: &F,
    opts: &IntegratorOptions,
) -> End
where
    S: System + ?Sized,
    F: Fn(&[f64]) -> bool,
{
    let k0 = stepper.k[0].clone();
    let (mut lo, mut hi) = (0.0f64, h);
    let mut y_lo = y.to_vec();
    let mut y_hi: Option<Vec<f64>> = None;
    let mut guard = None;
    while hi - lo > opts.exit_tol {
        let mid = 0.5 * (lo + hi);
        stepper.k[0].copy_from_slice(&k0);
        match stepper.step(y, dir * mid) {
            Ok((ym, _)) if inside(&ym) => {
                lo = mid;
                y_lo = ym;
            }
            Ok((ym, _)) => {
                hi = mid;
                y_hi = Some(ym);
                guard = None;
            }
            Err(e) => {
                hi = mid;
                y_hi = None;
                guard = Some(e.to_string());
            }
        }
    }
    if y_hi.is_none() && guard.is_none() {
        stepper.k[0].copy_from_slice(&k0);
        match stepper.step(y, dir * hi) {
            Ok((yh, _)) => y_hi = Some(yh),
            Err(e) => guard = Some(e.to_string()),
        }
    }
    End::Exited {
        t_in: dir * (t + lo),
        y_in: y_lo,
        t_out: dir * (t + hi),
        y_out: y_hi,
        guard,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Linear(f64);
    impl System for Linear {
        fn dim(&self) -> usize {
            1
        }
        fn rhs(&self, y: &[f64], out: &mut [f64]) -> Result<(), ExprError> {
            out[0] = self.0 * y[0];
            Ok(())
        }
    }

    struct Rotation;
    impl System for Rotation {
        fn dim(&self) -> usize {
            2
        }
        fn rhs(&self, y: &[f64], out: &mut [f64]) -> Result<(), ExprError> {
            out[0] = -y[1];
            out[1] = y[0];
            Ok(())
        }
    }

    #[test]
    fn exponential_growth_matches_closed_form() {
        let tr = integrate(&Linear(0.7), &[1.3], 2.0, |_| true, &IntegratorOptions::default());
        assert_eq!(tr.end, End::Reached);
        let (t, y) = tr.last();
        assert_eq!(*t, 2.0);
        assert!((y[0] - 1.3 * (1.4f64).exp()).abs() < 1e-8);
    }

    #[test]
    fn backward_time() {
        let tr = integrate(&Linear(1.0), &[1.0], -1.0, |_| true, &IntegratorOptions::default());
        let (t, y) = tr.last();
        assert_eq!(*t, -1.0);
        assert!((y[0] - (-1.0f64).exp()).abs() < 1e-10);
    }

    #[test]
    fn rotation_closes_after_full_turn() {
        let tr = integrate(
            &Rotation,
            &[1.0, 0.0],
            2.0 * std::f64::consts::PI,
            |_| true,
            &IntegratorOptions::default(),
        );
        let (_, y) = tr.last();
        assert!((y[0] - 1.0).abs() < 1e-7 && y[1].abs() < 1e-7, "{y:?}");
        for w in tr.samples.windows(2) {
            assert!(w[1].0 - w[0].0 <= 0.1 + 1e-15);
        }
    }

    #[test]
    fn exit_located_by_bisection() {
        // y' = 1 from 0, leaves {y <= 0.5} at t = 0.5.
        struct Unit;
        impl System for Unit {
            fn dim(&self) -> usize {
                1
            }
            fn rhs(&self, _: &[f64], out: &mut [f64]) -> Result<(), ExprError> {
                out[0] = 1.0;
                Ok(())
            }
        }
        let tr = integrate(&Unit, &[0.0], 3.0, |y| y[0] <= 0.5, &IntegratorOptions::default());
        match tr.end {
            End::Exited {
                t_in, t_out, y_out, ..
            } => {
                assert!(t_in <= 0.5 && t_out >= 0.5);
                assert!(t_out - t_in <= 1e-12);
                assert!(y_out.is_some());
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn guard_failures_end_the_chart() {
        // y' = 1/(1 - y) blows up at y = 1 (in finite time 0.5).
        struct Blow;
        impl System for Blow {
            fn dim(&self) -> usize {
                1
            }
            fn rhs(&self, y: &[f64], out: &mut [f64]) -> Result<(), ExprError> {
                let d = 1.0 - y[0];
                if d <= 0.0 {
                    return Err(ExprError::Domain {
                        op: "sqrt of negative value",
                        expr: "test".into(),
                        point: y.to_vec(),
                    });
                }
                out[0] = 1.0 / d.sqrt();
                Ok(())
            }
        }
        let tr = integrate(&Blow, &[0.0], 5.0, |_| true, &IntegratorOptions::default());
        let t_stop = match tr.end {
            End::Exited { t_in, .. } => t_in,
            End::Underflow { t, .. } => t,
            End::Reached => panic!("blow-up was not detected"),
        };
        assert!((t_stop - 2.0 / 3.0).abs() < 1e-3, "{t_stop}");
    }
}
