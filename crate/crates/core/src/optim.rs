//! Derivative-free minimizers: Nelder-Mead simplex and a cyclic
//! coordinate refinement built on Brent's 1-D method.

use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy)]
pub struct NelderMeadOptions<T> {
    /// Relative spread of objective values across the simplex at which
    /// the search stops.
    pub f_rel_tol: T,
    /// Absolute floor for the spread (needed when the optimum is ~0).
    pub f_abs_tol: T,
    pub max_evals: usize,
    /// Edge length of the initial simplex along each axis.
    pub initial_step: T,
}

impl<T: Scalar> Default for NelderMeadOptions<T> {
    fn default() -> Self {
        Self {
            f_rel_tol: T::lit(1e-9),
            f_abs_tol: T::lit(1e-24),
            max_evals: 4000,
            initial_step: T::lit(0.5),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Minimum<T> {
    pub x: Vec<T>,
    pub f: T,
    pub evals: usize,
    pub converged: bool,
}

fn sanitize<T: Scalar>(v: T) -> T {
    if v.is_nan() {
        T::infinity()
    } else {
        v
    }
}

pub fn nelder_mead<T, F>(f: F, x0: &[T], opts: &NelderMeadOptions<T>) -> Minimum<T>
where
    T: Scalar,
    F: Fn(&[T]) -> T,
{
    let n = x0.len();
    let eval = |x: &[T]| sanitize(f(x));
    let (alpha, gamma, rho, sigma) = (T::one(), T::lit(2.0), T::lit(0.5), T::lit(0.5));

    let mut simplex: Vec<Vec<T>> = Vec::with_capacity(n + 1);
    simplex.push(x0.to_vec());
    for i in 0..n {
        let mut v = x0.to_vec();
        v[i] = v[i] + opts.initial_step;
        simplex.push(v);
    }
    let mut values: Vec<T> = simplex.iter().map(|v| eval(v)).collect();
    let mut evals = n + 1;
    let mut converged = false;

    while evals < opts.max_evals {
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap());
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        values = order.iter().map(|&i| values[i]).collect();

        let (best, worst) = (values[0], values[n]);
        if best.is_finite()
            && worst.is_finite()
            && worst - best <= opts.f_rel_tol * best.abs() + opts.f_abs_tol
        {
            converged = true;
            break;
        }

        let mut centroid = vec![T::zero(); n];
        for v in &simplex[..n] {
            for (c, &vi) in centroid.iter_mut().zip(v) {
                *c = *c + vi;
            }
        }
        let nf = T::from_count(n);
        centroid.iter_mut().for_each(|c| *c = *c / nf);
        let along = |t: T| -> Vec<T> {
            centroid
                .iter()
                .zip(&simplex[n])
                .map(|(&c, &w)| c + t * (c - w))
                .collect()
        };

        let xr = along(alpha);
        let fr = eval(&xr);
        evals += 1;
        if fr < values[0] {
            let xe = along(gamma);
            let fe = eval(&xe);
            evals += 1;
            if fe < fr {
                simplex[n] = xe;
                values[n] = fe;
            } else {
                simplex[n] = xr;
                values[n] = fr;
            }
            continue;
        }
        if fr < values[n - 1] {
            simplex[n] = xr;
            values[n] = fr;
            continue;
        }
        let (xc, fc) = if fr < values[n] {
            let xc = along(rho);
            let fc = eval(&xc);
            (xc, fc)
        } else {
            let xc = along(-rho);
            let fc = eval(&xc);
            (xc, fc)
        };
        evals += 1;
        if fc < values[n].min(fr) {
            simplex[n] = xc;
            values[n] = fc;
            continue;
        }
        let x_best = simplex[0].clone();
        for i in 1..=n {
            for (xi, &bi) in simplex[i].iter_mut().zip(&x_best) {
                *xi = bi + sigma * (*xi - bi);
            }
            values[i] = eval(&simplex[i]);
        }
        evals += n;
    }

    let (ib, _) = values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .unwrap();
    Minimum {
        x: simplex[ib].clone(),
        f: values[ib],
        evals,
        converged,
    }
}

/// Brent's method on `[a, c]` with an interior point `b` where
/// `f(b) < f(a), f(c)`. Returns `(xmin, fmin)`.
fn brent<T: Scalar, F: Fn(T) -> T>(f: &F, a: T, b: T, c: T, tol: T, max_iter: usize) -> (T, T) {
    let cgold = T::lit(0.381_966_011_250_105_1);
    let zeps = T::lit(1e-300).max(T::min_positive_value());
    let (mut lo, mut hi) = if a < c { (a, c) } else { (c, a) };
    let (mut x, mut w, mut v) = (b, b, b);
    let mut fx = f(x);
    let (mut fw, mut fv) = (fx, fx);
    let mut d = T::zero();
    let mut e = T::zero();
    let two = T::lit(2.0);
    let half = T::lit(0.5);
    for _ in 0..max_iter {
        let xm = half * (lo + hi);
        let tol1 = tol * x.abs() + zeps;
        let tol2 = two * tol1;
        if (x - xm).abs() <= tol2 - half * (hi - lo) {
            break;
        }
        let mut golden = true;
        if e.abs() > tol1 {
            let r = (x - w) * (fx - fv);
            let mut q = (x - v) * (fx - fw);
            let mut p = (x - v) * q - (x - w) * r;
            q = two * (q - r);
            if q > T::zero() {
                p = -p;
            }
            q = q.abs();
            let etemp = e;
            e = d;
            if !(p.abs() >= (half * q * etemp).abs() || p <= q * (lo - x) || p >= q * (hi - x)) {
                d = p / q;
                let u = x + d;
                if u - lo < tol2 || hi - u < tol2 {
                    d = if xm - x >= T::zero() { tol1 } else { -tol1 };
                }
                golden = false;
            }
        }
        if golden {
            e = if x >= xm { lo - x } else { hi - x };
            d = cgold * e;
        }
        let u = if d.abs() >= tol1 {
            x + d
        } else if d >= T::zero() {
            x + tol1
        } else {
            x - tol1
        };
        let fu = f(u);
        if fu <= fx {
            if u >= x {
                lo = x;
            } else {
                hi = x;
            }
            v = w;
            fv = fw;
            w = x;
            fw = fx;
            x = u;
            fx = fu;
        } else {
            if u < x {
                lo = u;
            } else {
                hi = u;
            }
            if fu <= fw || w == x {
                v = w;
                fv = fw;
                w = u;
                fw = fu;
            } else if fu <= fv || v == x || v == w {
                v = u;
                fv = fu;
            }
        }
    }
    (x, fx)
}

/// Line search along one axis from `x0` (value `f0`). Returns the improved
/// coordinate and value, or `None` if no bracket with a lower value is found.
fn axis_minimize<T: Scalar, F: Fn(T) -> T>(g: &F, x0: T, f0: T, step: T) -> Option<(T, T)> {
    let h = step;
    let (fp, fm) = (sanitize(g(x0 + h)), sanitize(g(x0 - h)));
    if fp >= f0 && fm >= f0 {
        if h < T::lit(1e-14) * (T::one() + x0.abs()) {
            return None;
        }
        let (x, fx) = brent(&|t| sanitize(g(t)), x0 - h, x0, x0 + h, T::lit(1e-12), 200);
        return (fx < f0).then_some((x, fx));
    }
    // Downhill: walk outward until the value rises again.
    let dir = if fp < fm { T::one() } else { -T::one() };
    let mut a = x0;
    let mut b = x0 + dir * h;
    let mut fb = fp.min(fm);
    let mut stride = h;
    for _ in 0..60 {
        stride = stride * T::lit(1.618_033_988_749_895);
        let c = b + dir * stride;
        let fc = sanitize(g(c));
        if fc >= fb {
            let (x, fx) = brent(&|t| sanitize(g(t)), a, b, c, T::lit(1e-12), 200);
            return (fx < f0).then_some((x, fx));
        }
        a = b;
        b = c;
        fb = fc;
    }
    Some((b, fb))
}

/// Cyclic coordinate descent with a Brent line search per axis.
pub fn coordinate_refine<T, F>(f: F, x0: &[T], max_sweeps: usize) -> Minimum<T>
where
    T: Scalar,
    F: Fn(&[T]) -> T,
{
    let mut x = x0.to_vec();
    let mut fx = sanitize(f(&x));
    let mut evals = 1usize;
    let mut converged = false;
    let eval_count = std::cell::Cell::new(0usize);
    for _ in 0..max_sweeps {
        let start = fx;
        for i in 0..x.len() {
            let g = |t: T| {
                eval_count.set(eval_count.get() + 1);
                let mut y = x.clone();
                y[i] = t;
                f(&y)
            };
            let step = T::lit(1e-3) * (T::one() + x[i].abs());
            if let Some((xi, fi)) = axis_minimize(&g, x[i], fx, step) {
                x[i] = xi;
                fx = fi;
            }
        }
        if start - fx <= T::lit(1e-15) * fx.abs() + T::lit(1e-30) {
            converged = true;
            break;
        }
    }
    evals += eval_count.get();
    Minimum {
        x,
        f: fx,
        evals,
        converged,
    }
}
