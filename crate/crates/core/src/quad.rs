//! Adaptive Gauss–Kronrod quadrature (vector valued, infinite intervals via
//! rational maps) and Gauss–Laguerre rules.

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadSettings {
    /// Absolute tolerance on each component.
    pub abs_tol: f64,
    /// Relative tolerance on each component.
    pub rel_tol: f64,
    /// Maximum number of subintervals before giving up.
    pub max_intervals: usize,
}

impl Default for QuadSettings {
    fn default() -> Self {
        QuadSettings { abs_tol: 1e-8, rel_tol: 1e-12, max_intervals: 4000 }
    }
}

/// Integration domain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Domain {
    Finite(f64, f64),
    /// `[a, ∞)`
    Above(f64),
    /// `(−∞, b]`
    Below(f64),
    Whole,
}

#[derive(Debug, Clone, Copy)]
pub struct QuadOutput<const N: usize> {
    pub value: [f64; N],
    pub error: [f64; N],
    pub evals: usize,
}

const XGK: [f64; 11] = [
    0.995657163025808080735527280689003,
    0.973906528517171720077964012084452,
    0.930157491355708226001207180059508,
    0.865063366688984510732096688423493,
    0.780817726586416897063717578345042,
    0.679409568299024406234327365114874,
    0.562757134668604683339000099272694,
    0.433395394129247190799265943165784,
    0.294392862701460198131126603103866,
    0.148874338981631210884826001129720,
    0.0,
];
const WGK: [f64; 11] = [
    0.011694638867371874278064396062192,
    0.032558162307964727478818972459390,
    0.054755896574351996031381300244580,
    0.075039674810919952767043140916190,
    0.093125454583697605535065465083366,
    0.109387158802297641899210590325805,
    0.123491976262065851077208292741900,
    0.134709217311473325928054001771707,
    0.142775938577060080797094273138717,
    0.147739104901338491374841515972068,
    0.149445554002916905664936468389821,
];
// Gauss weights for XGK[1], XGK[3], ..., XGK[9].
const WG: [f64; 5] = [
    0.066671344308688137593568809893332,
    0.149451349150580593145776339657697,
    0.219086362515982043995534934228163,
    0.269266719309996355091226921569469,
    0.295524224714752870173892994651338,
];

struct Segment<const N: usize> {
    a: f64,
    b: f64,
    val: [f64; N],
    err: [f64; N],
}

fn gk21<const N: usize, F: Fn(f64) -> [f64; N]>(f: &F, a: f64, b: f64) -> Result<Segment<N>> {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let mut k = [0.0; N];
    let mut g = [0.0; N];
    let mut add = |x: f64, wk: f64, wg: f64| -> Result<()> {
        let y = f(x);
        for i in 0..N {
            if !y[i].is_finite() {
                return Err(Error::Numerical(format!("non-finite integrand {} at {x}", y[i])));
            }
            k[i] += wk * y[i];
            g[i] += wg * y[i];
        }
        Ok(())
    };
    add(c, WGK[10], 0.0)?;
    for j in 0..10 {
        let wg = if j % 2 == 1 { WG[j / 2] } else { 0.0 };
        add(c - h * XGK[j], WGK[j], wg)?;
        add(c + h * XGK[j], WGK[j], wg)?;
    }
    let mut val = [0.0; N];
    let mut err = [0.0; N];
    for i in 0..N {
        val[i] = k[i] * h;
        err[i] = ((k[i] - g[i]) * h).abs();
    }
    Ok(Segment { a, b, val, err })
}

/// Integrate a vector-valued function on a finite interval split at `points`.
fn adapt<const N: usize, F: Fn(f64) -> [f64; N]>(
    f: &F,
    a: f64,
    b: f64,
    points: &[f64],
    s: &QuadSettings,
) -> Result<QuadOutput<N>> {
    let mut cuts: Vec<f64> = vec![a];
    let mut inner: Vec<f64> = points.iter().copied().filter(|&p| p > a && p < b).collect();
    inner.sort_by(|x, y| x.partial_cmp(y).unwrap());
    cuts.extend(inner);
    cuts.push(b);
    let mut segs = Vec::with_capacity(64);
    for w in cuts.windows(2) {
        if w[1] > w[0] {
            segs.push(gk21(f, w[0], w[1])?);
        }
    }
    let mut evals = 21 * segs.len();
    loop {
        let mut tot = [0.0; N];
        let mut etot = [0.0; N];
        for sg in &segs {
            for i in 0..N {
                tot[i] += sg.val[i];
                etot[i] += sg.err[i];
            }
        }
        let tol: [f64; N] = std::array::from_fn(|i| s.abs_tol.max(s.rel_tol * tot[i].abs()));
        if (0..N).all(|i| etot[i] <= tol[i]) {
            return Ok(QuadOutput { value: tot, error: etot, evals });
        }
        let worst = |sg: &Segment<N>| (0..N).map(|i| sg.err[i] / tol[i]).sum::<f64>();
        let (idx, _) = segs
            .iter()
            .enumerate()
            .map(|(j, sg)| (j, worst(sg)))
            .fold((0, f64::NEG_INFINITY), |acc, x| if x.1 > acc.1 { x } else { acc });
        let sg = &segs[idx];
        let mid = 0.5 * (sg.a + sg.b);
        let stuck = !(mid > sg.a && mid < sg.b) || (sg.b - sg.a) <= 1e-13 * (sg.a.abs() + sg.b.abs()).max(1e-300);
        if segs.len() >= s.max_intervals || stuck {
            let i = (0..N).max_by(|&x, &y| (etot[x] / tol[x]).partial_cmp(&(etot[y] / tol[y])).unwrap()).unwrap();
            return Err(Error::Quadrature { estimate: tot[i], achieved: etot[i], tolerance: tol[i] });
        }
        let (a0, b0) = (sg.a, sg.b);
        let left = gk21(f, a0, mid)?;
        let right = gk21(f, mid, b0)?;
        evals += 42;
        segs[idx] = left;
        segs.push(right);
    }
}

/// Integrate `f` over `dom` to the requested tolerances. `points` are known
/// kinks or support edges in the original variable.
pub fn integrate_vec<const N: usize, F: Fn(f64) -> [f64; N]>(
    f: F,
    dom: Domain,
    points: &[f64],
    s: &QuadSettings,
) -> Result<QuadOutput<N>> {
    let scale = |y: [f64; N], j: f64| -> [f64; N] { std::array::from_fn(|i| if y[i] == 0.0 { 0.0 } else { y[i] * j }) };
    match dom {
        Domain::Finite(a, b) => {
            if !(a.is_finite() && b.is_finite()) {
                return Err(Error::Domain("finite interval with non-finite end".into()));
            }
            if b < a {
                let r = adapt(&f, b, a, points, s)?;
                return Ok(QuadOutput { value: r.value.map(|v| -v), ..r });
            }
            adapt(&f, a, b, points, s)
        }
        Domain::Above(a) => {
            // x = a + t/(1 − t)
            let g = |t: f64| {
                let d = 1.0 - t;
                scale(f(a + t / d), 1.0 / (d * d))
            };
            let tp: Vec<f64> = points.iter().filter(|&&p| p > a).map(|&p| (p - a) / (1.0 + p - a)).collect();
            adapt(&g, 0.0, 1.0, &tp, s)
        }
        Domain::Below(b) => {
            // x = b − t/(1 − t)
            let g = |t: f64| {
                let d = 1.0 - t;
                scale(f(b - t / d), 1.0 / (d * d))
            };
            let tp: Vec<f64> = points.iter().filter(|&&p| p < b).map(|&p| (b - p) / (1.0 + b - p)).collect();
            adapt(&g, 0.0, 1.0, &tp, s)
        }
        Domain::Whole => {
            // x = t/(1 − t²)
            let g = |t: f64| {
                let d = 1.0 - t * t;
                scale(f(t / d), (1.0 + t * t) / (d * d))
            };
            let tp: Vec<f64> = points
                .iter()
                .map(|&p| if p == 0.0 { 0.0 } else { (-1.0 + (1.0 + 4.0 * p * p).sqrt()) / (2.0 * p) })
                .collect();
            adapt(&g, -1.0, 1.0, &tp, s)
        }
    }
}

/// Scalar convenience wrapper around [`integrate_vec`].
pub fn integrate<F: Fn(f64) -> f64>(f: F, dom: Domain, points: &[f64], s: &QuadSettings) -> Result<(f64, f64)> {
    let r = integrate_vec(|x| [f(x)], dom, points, s)?;
    Ok((r.value[0], r.error[0]))
}

/// Gauss–Laguerre rule for `∫_0^∞ e^{−x} f(x) dx`.
pub struct LaguerreRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl LaguerreRule {
    pub fn new(n: usize) -> Self {
        // Golub–Welsch seeds, then Newton polish on L_n.
        let mut jm = nalgebra::DMatrix::<f64>::zeros(n, n);
        for i in 0..n {
            jm[(i, i)] = (2 * i + 1) as f64;
            if i + 1 < n {
                jm[(i, i + 1)] = (i + 1) as f64;
                jm[(i + 1, i)] = (i + 1) as f64;
            }
        }
        let eig = jm.symmetric_eigen();
        let mut nodes: Vec<f64> = eig.eigenvalues.iter().copied().collect();
        nodes.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut weights = Vec::with_capacity(n);
        for x in nodes.iter_mut() {
            for _ in 0..10 {
                let (ln, dln, _) = laguerre(n, *x);
                let dx = ln / dln;
                *x -= dx;
                if dx.abs() <= 1e-16 * x.abs() {
                    break;
                }
            }
            let (_, dln, _) = laguerre(n, *x);
            weights.push(1.0 / (*x * dln * dln));
        }
        LaguerreRule { nodes, weights }
    }

    pub fn get(n: usize) -> &'static LaguerreRule {
        static R32: OnceLock<LaguerreRule> = OnceLock::new();
        static R64: OnceLock<LaguerreRule> = OnceLock::new();
        match n {
            32 => R32.get_or_init(|| LaguerreRule::new(32)),
            64 => R64.get_or_init(|| LaguerreRule::new(64)),
            _ => panic!("only 32 and 64 point cached rules are available"),
        }
    }
}

/// (L_n(x), L_n'(x), L_{n+1}(x)) by the three-term recurrence, n ≥ 1.
fn laguerre(n: usize, x: f64) -> (f64, f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = 1.0 - x;
    for k in 1..n {
        let kf = k as f64;
        let p2 = ((2.0 * kf + 1.0 - x) * p1 - kf * p0) / (kf + 1.0);
        p0 = p1;
        p1 = p2;
    }
    let nf = n as f64;
    let dp = nf * (p1 - p0) / x;
    let pn1 = ((2.0 * nf + 1.0 - x) * p1 - nf * p0) / (nf + 1.0);
    (p1, dp, pn1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_exact() {
        let (v, _) = integrate(|x| 3.0 * x * x - x + 2.0, Domain::Finite(-1.0, 2.0), &[], &QuadSettings::default()).unwrap();
        assert!((v - (8.0 + 1.0 - 1.5 + 6.0)).abs() < 1e-13);
    }

    #[test]
    fn infinite_domains() {
        let s = QuadSettings { abs_tol: 1e-12, rel_tol: 1e-12, ..Default::default() };
        let (v, _) = integrate(|x| (-2.0 * x).exp() * 2.0, Domain::Above(0.0), &[], &s).unwrap();
        assert!((v - 1.0).abs() < 1e-11);
        let (v, _) = integrate(|x| (-0.5 * x * x).exp(), Domain::Whole, &[], &s).unwrap();
        assert!((v - (2.0 * std::f64::consts::PI).sqrt()).abs() < 1e-11);
        let (v, _) = integrate(|x| x.exp(), Domain::Below(1.0), &[], &s).unwrap();
        assert!((v - 1f64.exp()).abs() < 1e-10);
    }

    #[test]
    fn subdivision_points_do_not_change_result() {
        let s = QuadSettings { abs_tol: 1e-12, rel_tol: 1e-12, ..Default::default() };
        let f = |x: f64| (x.sin() * 3.0).exp() / (1.0 + x * x);
        let (a, _) = integrate(f, Domain::Finite(-4.0, 7.0), &[], &s).unwrap();
        let (b, _) = integrate(f, Domain::Finite(-4.0, 7.0), &[-1.0, 0.3, 2.5, 6.9], &s).unwrap();
        assert!((a - b).abs() < 1e-10);
    }

    #[test]
    fn kink_handled() {
        let (v, _) = integrate(|x: f64| x.abs(), Domain::Finite(-1.0, 2.0), &[], &QuadSettings::default()).unwrap();
        assert!((v - 2.5).abs() < 1e-8);
    }

    #[test]
    fn reports_failure() {
        let s = QuadSettings { abs_tol: 1e-14, rel_tol: 0.0, max_intervals: 3 };
        let r = integrate(|x: f64| (200.0 * x).sin(), Domain::Finite(0.0, 10.0), &[], &s);
        assert!(matches!(r, Err(Error::Quadrature { .. })));
    }

    #[test]
    fn laguerre_moments() {
        for n in [32, 64] {
            let r = LaguerreRule::get(n);
            let mom = |k: i32| r.nodes.iter().zip(&r.weights).map(|(x, w)| w * x.powi(k)).sum::<f64>();
            let mut fact = 1.0;
            for k in 0..12 {
                if k > 0 {
                    fact *= k as f64;
                }
                assert!(((mom(k) - fact) / fact).abs() < 1e-12, "n={n} k={k}");
            }
        }
    }
}
