//! Adam and L-BFGS with a strong Wolfe line search.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(len: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    /// One bias-corrected update of `params` in place.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grad.len() != self.m.len() {
            return Err(Error::Shape(format!(
                "adam state {} vs params {} vs grad {}",
                self.m.len(),
                params.len(),
                grad.len()
            )));
        }
        if let Some(index) = grad.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFiniteGradient { index });
        }
        self.t += 1;
        let t = self.t as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= self.lr * mh / (vh.sqrt() + self.eps);
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LbfgsOptions {
    pub max_iters: usize,
    pub history: usize,
    pub c1: f64,
    pub c2: f64,
    pub max_trials: usize,
    pub grad_tol: f64,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        Self {
            max_iters: 100,
            history: 20,
            c1: 1e-4,
            c2: 0.9,
            max_trials: 25,
            grad_tol: 1e-10,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LbfgsStatus {
    MaxIterations,
    GradientTolerance,
    LineSearchFailed,
}

/// One accepted step, kept so callers can audit the Wolfe conditions.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub alpha: f64,
    pub f0: f64,
    pub f1: f64,
    pub slope0: f64,
    pub slope1: f64,
}

#[derive(Clone, Debug)]
pub struct LbfgsOutcome {
    pub x: Vec<f64>,
    pub value: f64,
    pub grad: Vec<f64>,
    pub iterations: usize,
    pub evaluations: usize,
    pub status: LbfgsStatus,
    pub steps: Vec<StepRecord>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm_inf(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

struct Probe {
    f: f64,
    g: Vec<f64>,
    x: Vec<f64>,
    slope: f64,
}

/// Minimizes `objective` from `x0`. Trial points whose objective errors or
/// is non-finite are treated as `+∞` and the step is shrunk.
pub fn lbfgs_minimize<F>(mut objective: F, x0: Vec<f64>, opts: &LbfgsOptions) -> Result<LbfgsOutcome>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let (mut f, mut g) = objective(&x0)?;
    if !f.is_finite() {
        return Err(Error::InvalidArgument("objective not finite at the starting point".into()));
    }
    if let Some(index) = g.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFiniteGradient { index });
    }
    let mut x = x0;
    let mut evaluations = 1;
    let mut s_hist: Vec<Vec<f64>> = Vec::new();
    let mut y_hist: Vec<Vec<f64>> = Vec::new();
    let mut steps = Vec::new();
    let mut status = LbfgsStatus::MaxIterations;
    let mut iterations = 0;
    while iterations < opts.max_iters {
        if norm_inf(&g) <= opts.grad_tol {
            status = LbfgsStatus::GradientTolerance;
            break;
        }
        let mut dir = two_loop(&g, &s_hist, &y_hist);
        let mut slope0 = dot(&g, &dir);
        if !(slope0 < 0.0) {
            s_hist.clear();
            y_hist.clear();
            dir = g.iter().map(|v| -v).collect();
            slope0 = dot(&g, &dir);
        }
        let alpha0 = if s_hist.is_empty() { (1.0 / norm_inf(&g)).min(1.0) } else { 1.0 };
        let mut found = strong_wolfe(&mut objective, &x, f, slope0, &dir, alpha0, opts, &mut evaluations);
        if found.is_none() && !s_hist.is_empty() {
            log::debug!("line search failed on quasi-Newton direction; retrying steepest descent");
            s_hist.clear();
            y_hist.clear();
            dir = g.iter().map(|v| -v).collect();
            slope0 = dot(&g, &dir);
            let alpha0 = (1.0 / norm_inf(&g)).min(1.0);
            found = strong_wolfe(&mut objective, &x, f, slope0, &dir, alpha0, opts, &mut evaluations);
        }
        let Some((alpha, probe)) = found else {
            status = LbfgsStatus::LineSearchFailed;
            break;
        };
        steps.push(StepRecord {
            alpha,
            f0: f,
            f1: probe.f,
            slope0,
            slope1: probe.slope,
        });
        let s: Vec<f64> = probe.x.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = probe.g.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() && sy > 0.0 {
            if s_hist.len() == opts.history {
                s_hist.remove(0);
                y_hist.remove(0);
            }
            s_hist.push(s);
            y_hist.push(y);
        }
        x = probe.x;
        f = probe.f;
        g = probe.g;
        iterations += 1;
        log::trace!("lbfgs iter {iterations}: f = {f:.16e}");
    }
    if status == LbfgsStatus::MaxIterations && norm_inf(&g) <= opts.grad_tol {
        status = LbfgsStatus::GradientTolerance;
    }
    Ok(LbfgsOutcome {
        x,
        value: f,
        grad: g,
        iterations,
        evaluations,
        status,
        steps,
    })
}

fn two_loop(g: &[f64], s_hist: &[Vec<f64>], y_hist: &[Vec<f64>]) -> Vec<f64> {
    let mut q: Vec<f64> = g.to_vec();
    let h = s_hist.len();
    let mut alphas = vec![0.0; h];
    let rho: Vec<f64> = (0..h).map(|i| 1.0 / dot(&s_hist[i], &y_hist[i])).collect();
    for i in (0..h).rev() {
        let a = rho[i] * dot(&s_hist[i], &q);
        alphas[i] = a;
        for (qv, yv) in q.iter_mut().zip(&y_hist[i]) {
            *qv -= a * yv;
        }
    }
    if h > 0 {
        let gamma = dot(&s_hist[h - 1], &y_hist[h - 1]) / dot(&y_hist[h - 1], &y_hist[h - 1]);
        q.iter_mut().for_each(|v| *v *= gamma);
    }
    for i in 0..h {
        let b = rho[i] * dot(&y_hist[i], &q);
        for (qv, sv) in q.iter_mut().zip(&s_hist[i]) {
            *qv += (alphas[i] - b) * sv;
        }
    }
    q.iter_mut().for_each(|v| *v = -*v);
    q
}

fn probe<F>(objective: &mut F, x: &[f64], dir: &[f64], alpha: f64, evaluations: &mut usize) -> Probe
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let xt: Vec<f64> = x.iter().zip(dir).map(|(a, d)| a + alpha * d).collect();
    *evaluations += 1;
    match objective(&xt) {
        Ok((f, g)) if f.is_finite() && g.iter().all(|v| v.is_finite()) => {
            let slope = dot(&g, dir);
            Probe { f, g, x: xt, slope }
        }
        Ok(_) => Probe { f: f64::INFINITY, g: Vec::new(), x: xt, slope: f64::NAN },
        Err(e) => {
            log::debug!("trial step {alpha:e} rejected: {e}");
            Probe { f: f64::INFINITY, g: Vec::new(), x: xt, slope: f64::NAN }
        }
    }
}

/// Minimizer of the cubic through two points with slopes, or `None`.
fn cubic_min(a: f64, fa: f64, da: f64, b: f64, fb: f64, db: f64) -> Option<f64> {
    let d1 = da + db - 3.0 * (fa - fb) / (a - b);
    let disc = d1 * d1 - da * db;
    if !(disc >= 0.0) {
        return None;
    }
    let d2 = (b - a).signum() * disc.sqrt();
    let t = b - (b - a) * (db + d2 - d1) / (db - da + 2.0 * d2);
    t.is_finite().then_some(t)
}

#[allow(clippy::too_many_arguments)]
fn strong_wolfe<F>(
    objective: &mut F,
    x: &[f64],
    f0: f64,
    slope0: f64,
    dir: &[f64],
    alpha0: f64,
    opts: &LbfgsOptions,
    evaluations: &mut usize,
) -> Option<(f64, Probe)>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let armijo = |alpha: f64, f: f64| f <= f0 + opts.c1 * alpha * slope0;
    let curvature = |slope: f64| slope.abs() <= -opts.c2 * slope0;
    let (mut a_prev, mut f_prev, mut s_prev) = (0.0, f0, slope0);
    let mut alpha = alpha0;
    let mut trials = 0;
    let mut bracket = None;
    while trials < opts.max_trials {
        trials += 1;
        let p = probe(objective, x, dir, alpha, evaluations);
        if !p.f.is_finite() {
            alpha = a_prev + 0.5 * (alpha - a_prev);
            continue;
        }
        if !armijo(alpha, p.f) || (trials > 1 && p.f >= f_prev) {
            bracket = Some(((a_prev, f_prev, s_prev), (alpha, p.f, p.slope)));
            break;
        }
        if curvature(p.slope) {
            return Some((alpha, p));
        }
        if p.slope >= 0.0 {
            bracket = Some(((alpha, p.f, p.slope), (a_prev, f_prev, s_prev)));
            break;
        }
        a_prev = alpha;
        f_prev = p.f;
        s_prev = p.slope;
        alpha *= 2.0;
    }
    let ((mut lo, mut f_lo, mut s_lo), (mut hi, mut f_hi, mut s_hi)) = bracket?;
    while trials < opts.max_trials {
        trials += 1;
        let (left, right) = if lo < hi { (lo, hi) } else { (hi, lo) };
        let width = right - left;
        let alpha = match cubic_min(lo, f_lo, s_lo, hi, f_hi, s_hi) {
            Some(t) if t > left + 0.1 * width && t < right - 0.1 * width => t,
            _ => 0.5 * (lo + hi),
        };
        if width <= 1e-16 * right.abs().max(1e-300) {
            return None;
        }
        let p = probe(objective, x, dir, alpha, evaluations);
        if !p.f.is_finite() || !armijo(alpha, p.f) || p.f >= f_lo {
            hi = alpha;
            f_hi = if p.f.is_finite() { p.f } else { f64::MAX };
            s_hi = if p.slope.is_finite() { p.slope } else { 0.0 };
        } else {
            if curvature(p.slope) {
                return Some((alpha, p));
            }
            if p.slope * (hi - lo) >= 0.0 {
                hi = lo;
                f_hi = f_lo;
                s_hi = s_lo;
            }
            lo = alpha;
            f_lo = p.f;
            s_lo = p.slope;
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_zero_gradient_keeps_params() {
        let mut s = AdamState::new(3, 0.1);
        let mut x = vec![1.0, -2.0, 3.0];
        s.step(&mut x, &[0.0; 3]).unwrap();
        assert_eq!(x, vec![1.0, -2.0, 3.0]);
        assert_eq!(s.t, 1);
    }

    #[test]
    fn adam_first_step_is_sign() {
        let mut s = AdamState::new(2, 0.01);
        let mut x = vec![0.0, 0.0];
        s.step(&mut x, &[3.0, 3.0]).unwrap();
        for v in x {
            assert!((v + 0.01).abs() < 1e-9);
        }
    }

    #[test]
    fn adam_minimizes_quadratic() {
        let mut s = AdamState::new(2, 0.1);
        let mut x = vec![1.0, 1.0];
        // Hand recurrence oracle: the same update written out for one coordinate.
        let (mut m, mut v, mut xr) = (0.0f64, 0.0f64, 1.0f64);
        for t in 1..=500 {
            let g: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
            s.step(&mut x, &g).unwrap();
            let gr = 2.0 * xr;
            m = 0.9 * m + (1.0 - 0.9) * gr;
            v = 0.999 * v + (1.0 - 0.999) * gr * gr;
            xr -= 0.1 * (m / (1.0 - 0.9f64.powi(t))) / ((v / (1.0 - 0.999f64.powi(t))).sqrt() + 1e-8);
            assert_eq!(x[0], xr);
        }
        assert!((x[0] * x[0] + x[1] * x[1]).sqrt() < 1e-3);
    }

    #[test]
    fn adam_rejects_bad_input() {
        let mut s = AdamState::new(2, 0.1);
        let mut x = vec![0.0; 2];
        assert!(s.step(&mut x, &[f64::NAN, 0.0]).is_err());
        assert!(s.step(&mut x, &[0.0]).is_err());
    }

    fn check_wolfe(out: &LbfgsOutcome, opts: &LbfgsOptions) {
        for s in &out.steps {
            assert!(s.f1 <= s.f0 + opts.c1 * s.alpha * s.slope0);
            assert!(s.slope1.abs() <= -opts.c2 * s.slope0 + 1e-15);
            assert!(s.f1 <= s.f0);
        }
    }

    #[test]
    fn lbfgs_quadratic() {
        let opts = LbfgsOptions { max_iters: 30, ..Default::default() };
        let out = lbfgs_minimize(
            |x| Ok((0.5 * (x[0] * x[0] + 10.0 * x[1] * x[1]), vec![x[0], 10.0 * x[1]])),
            vec![1.0, 1.0],
            &opts,
        )
        .unwrap();
        assert!((out.x[0].powi(2) + out.x[1].powi(2)).sqrt() <= 1e-8);
        check_wolfe(&out, &opts);
    }

    #[test]
    fn lbfgs_rosenbrock() {
        let opts = LbfgsOptions { max_iters: 200, ..Default::default() };
        let rosen = |x: &[f64]| {
            let (a, b) = (x[0], x[1]);
            let f = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
            let g = vec![-2.0 * (1.0 - a) - 400.0 * a * (b - a * a), 200.0 * (b - a * a)];
            Ok((f, g))
        };
        let out = lbfgs_minimize(rosen, vec![-1.2, 1.0], &opts).unwrap();
        assert!(out.value <= 1e-10, "f = {}", out.value);
        check_wolfe(&out, &opts);
    }

    #[test]
    fn lbfgs_stationary_start() {
        let out = lbfgs_minimize(|x| Ok((x[0] * x[0], vec![2.0 * x[0]])), vec![0.0], &LbfgsOptions::default()).unwrap();
        assert_eq!(out.x, vec![0.0]);
        assert_eq!(out.iterations, 0);
        assert_eq!(out.status, LbfgsStatus::GradientTolerance);
    }

    #[test]
    fn lbfgs_survives_non_finite_trials() {
        // f = x² for x > -0.5, undefined beyond; a unit step from 2 overshoots into the bad region.
        let f = |x: &[f64]| {
            if x[0] < -0.5 {
                Err(Error::InvalidArgument("outside".into()))
            } else {
                Ok(((x[0] - 0.1).powi(2), vec![2.0 * (x[0] - 0.1)]))
            }
        };
        let out = lbfgs_minimize(f, vec![2.0], &LbfgsOptions { max_iters: 50, ..Default::default() }).unwrap();
        assert!((out.x[0] - 0.1).abs() < 1e-8);
    }
}
