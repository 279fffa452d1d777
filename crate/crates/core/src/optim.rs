//! Derivative-free simplex search and Newton polishing for posterior modes.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct NelderMeadSettings {
    pub f_tol: f64,
    pub x_tol: f64,
    pub max_evals: usize,
    pub restarts: usize,
}

impl Default for NelderMeadSettings {
    fn default() -> Self {
        NelderMeadSettings { f_tol: 1e-10, x_tol: 1e-10, max_evals: 40_000, restarts: 2 }
    }
}

#[derive(Debug, Clone)]
pub struct Optimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub evals: usize,
}

/// Maximise `f` from `x0` with initial simplex edge lengths `steps`.
/// Non-finite values are treated as −∞.
pub fn nelder_mead_max<F: Fn(&[f64]) -> f64>(f: F, x0: &[f64], steps: &[f64], s: &NelderMeadSettings) -> Result<Optimum> {
    let neg = |x: &[f64]| {
        let v = f(x);
        if v.is_nan() || v == f64::INFINITY {
            f64::INFINITY
        } else {
            -v
        }
    };
    let mut start = x0.to_vec();
    let mut total = 0;
    let mut best = None;
    for _ in 0..=s.restarts {
        let (x, v, ev) = nm_min(&neg, &start, steps, s);
        total += ev;
        let improved = match &best {
            None => true,
            Some((_, bv)) => v < *bv - s.f_tol,
        };
        best = Some((x.clone(), v));
        start = x;
        if !improved {
            break;
        }
    }
    let (x, v) = best.unwrap();
    if !v.is_finite() {
        return Err(Error::Numerical("simplex search found no point with finite objective".into()));
    }
    Ok(Optimum { x, value: -v, evals: total })
}

fn nm_min<F: Fn(&[f64]) -> f64>(f: &F, x0: &[f64], steps: &[f64], s: &NelderMeadSettings) -> (Vec<f64>, f64, usize) {
    let n = x0.len();
    let nf = n as f64;
    let (alpha, beta, gamma, delta) = (1.0, 1.0 + 2.0 / nf, 0.75 - 0.5 / nf, 1.0 - 1.0 / nf);
    let mut pts: Vec<Vec<f64>> = vec![x0.to_vec()];
    for i in 0..n {
        let mut p = x0.to_vec();
        p[i] += steps[i];
        pts.push(p);
    }
    let mut vals: Vec<f64> = pts.iter().map(|p| f(p)).collect();
    let mut evals = n + 1;
    let combine = |a: &[f64], b: &[f64], t: f64| -> Vec<f64> { a.iter().zip(b).map(|(x, y)| x + t * (y - x)).collect() };
    while evals < s.max_evals {
        let mut idx: Vec<usize> = (0..=n).collect();
        idx.sort_by(|&a, &b| vals[a].partial_cmp(&vals[b]).unwrap_or(std::cmp::Ordering::Equal));
        pts = idx.iter().map(|&i| pts[i].clone()).collect();
        vals = idx.iter().map(|&i| vals[i]).collect();
        let fspread = (vals[n] - vals[0]).abs();
        let xspread = pts[1..]
            .iter()
            .flat_map(|p| p.iter().zip(&pts[0]).map(|(a, b)| (a - b).abs() / (1.0 + b.abs())))
            .fold(0.0f64, f64::max);
        if vals[0].is_finite() && fspread <= s.f_tol && xspread <= s.x_tol {
            break;
        }
        let mut c = vec![0.0; n];
        for p in &pts[..n] {
            for (ci, pi) in c.iter_mut().zip(p) {
                *ci += pi / nf;
            }
        }
        let xr = combine(&c, &pts[n], -alpha);
        let fr = f(&xr);
        evals += 1;
        if fr < vals[0] {
            let xe = combine(&c, &pts[n], -alpha * beta);
            let fe = f(&xe);
            evals += 1;
            if fe < fr {
                pts[n] = xe;
                vals[n] = fe;
            } else {
                pts[n] = xr;
                vals[n] = fr;
            }
        } else if fr < vals[n - 1] {
            pts[n] = xr;
            vals[n] = fr;
        } else {
            let (xc, fc) = if fr < vals[n] {
                let xc = combine(&c, &xr, gamma);
                let fc = f(&xc);
                (xc, fc)
            } else {
                let xc = combine(&c, &pts[n], gamma);
                let fc = f(&xc);
                (xc, fc)
            };
            evals += 1;
            if fc < vals[n].min(fr) {
                pts[n] = xc;
                vals[n] = fc;
            } else {
                for i in 1..=n {
                    pts[i] = combine(&pts[0], &pts[i], delta);
                    vals[i] = f(&pts[i]);
                }
                evals += n;
            }
        }
    }
    let i = (0..=n).min_by(|&a, &b| vals[a].partial_cmp(&vals[b]).unwrap_or(std::cmp::Ordering::Equal)).unwrap();
    (pts[i].clone(), vals[i], evals)
}

/// Central-difference Hessian of a gradient function.
pub fn hessian_from_gradient<G: Fn(&[f64]) -> Vec<f64>>(grad: &G, x: &[f64], scale: &[f64]) -> DMatrix<f64> {
    let n = x.len();
    let mut h = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        let hj = 1e-5 * x[j].abs().max(scale[j]);
        let mut xp = x.to_vec();
        let mut xm = x.to_vec();
        xp[j] += hj;
        xm[j] -= hj;
        let (gp, gm) = (grad(&xp), grad(&xm));
        for i in 0..n {
            h[(i, j)] = (gp[i] - gm[i]) / (2.0 * hj);
        }
    }
    0.5 * (&h + h.transpose())
}

/// Newton iterations on a smooth maximisation problem starting near the optimum.
/// Returns the input unchanged if the Hessian is not negative definite.
pub fn newton_polish<F, G>(f: &F, grad: &G, x0: &[f64], scale: &[f64], max_iter: usize) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64,
    G: Fn(&[f64]) -> Vec<f64>,
{
    let mut x = x0.to_vec();
    let mut fx = f(&x);
    for _ in 0..max_iter {
        let g = DVector::from_vec(grad(&x));
        if g.iter().any(|v| !v.is_finite()) {
            break;
        }
        let h = hessian_from_gradient(grad, &x, scale);
        let Some(ch) = (-h).cholesky() else { break };
        let step = ch.solve(&g);
        let mut t = 1.0;
        let mut moved = false;
        for _ in 0..30 {
            let xn: Vec<f64> = x.iter().zip(step.iter()).map(|(a, d)| a + t * d).collect();
            let fnew = f(&xn);
            if fnew.is_finite() && fnew >= fx - 1e-12 * fx.abs().max(1.0) {
                let small = step.iter().zip(&x).all(|(d, a)| (t * d).abs() <= 1e-13 * (1.0 + a.abs()));
                x = xn;
                fx = fnew.max(fx);
                moved = !small;
                break;
            }
            t *= 0.5;
        }
        if !moved {
            break;
        }
    }
    x
}

/// Scalar root of `f` on `[a, b]` with a sign change: bisection to a relative
/// width of 1e-6, then safeguarded secant steps.
pub fn bracketed_root<F: Fn(f64) -> Result<f64>>(f: F, mut a: f64, mut b: f64, tol: f64) -> Result<f64> {
    let mut fa = f(a)?;
    let mut fb = f(b)?;
    if fa == 0.0 {
        return Ok(a);
    }
    if fb == 0.0 {
        return Ok(b);
    }
    if fa.signum() == fb.signum() {
        return Err(Error::Selection(format!("no sign change on [{a}, {b}]")));
    }
    while (b - a).abs() > 1e-6 * (a.abs() + b.abs()) {
        let c = 0.5 * (a + b);
        let fc = f(c)?;
        if fc == 0.0 {
            return Ok(c);
        }
        if fc.signum() == fa.signum() {
            a = c;
            fa = fc;
        } else {
            b = c;
            fb = fc;
        }
    }
    // Illinois variant of regula falsi
    let mut side = 0i8;
    let mut prev = f64::NAN;
    for _ in 0..100 {
        let c = (a * fb - b * fa) / (fb - fa);
        let fc = f(c)?;
        if fc == 0.0 {
            return Ok(c);
        }
        if fc.signum() == fb.signum() {
            b = c;
            fb = fc;
            if side == -1 {
                fa *= 0.5;
            }
            side = -1;
        } else {
            a = c;
            fa = fc;
            if side == 1 {
                fb *= 0.5;
            }
            side = 1;
        }
        if (b - a).abs() <= tol * c.abs().max(1.0) || (c - prev).abs() <= tol * c.abs().max(1.0) {
            return Ok(c);
        }
        prev = c;
    }
    Ok(if fa.abs() < fb.abs() { a } else { b })
}
