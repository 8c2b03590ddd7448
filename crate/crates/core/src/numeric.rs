//! Small shared numerics: Gauss–Legendre rules, bracketed root finding,
//! smooth bump test functions.

use std::collections::HashMap;
use std::sync::{Mutex, OnceLock};

/// Legendre polynomial value and derivative at `x` by the three-term recurrence.
fn legendre_pd(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

/// Nodes and weights of the `n`-point Gauss–Legendre rule on `[-1, 1]`.
///
/// Computed by Newton iteration from Chebyshev initial guesses and cached.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    type RuleCache = Mutex<HashMap<usize, (Vec<f64>, Vec<f64>)>>;
    static CACHE: OnceLock<RuleCache> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(hit) = cache.lock().unwrap().get(&n) {
        return hit.clone();
    }
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, dp) = legendre_pd(n, x);
            let dx = -p / dp;
            x += dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let (_, dp) = legendre_pd(n, x);
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        weights[i] = w;
        nodes[n - 1 - i] = x;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    cache
        .lock()
        .unwrap()
        .insert(n, (nodes.clone(), weights.clone()));
    (nodes, weights)
}

/// Integrate `f` over `[a, b]` with an `n`-point Gauss–Legendre rule.
pub fn integrate_gl(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    if a == b {
        return 0.0;
    }
    let (xs, ws) = gauss_legendre(n);
    let mid = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let mut acc = 0.0;
    for (x, w) in xs.iter().zip(ws.iter()) {
        acc += w * f(mid + half * x);
    }
    acc * half
}

/// Brent's method on a bracketing interval. `f(a)` and `f(b)` must have
/// opposite signs (zero endpoint values are returned directly).
pub fn brent(f: impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    let (mut a, mut b) = (a, b);
    let mut fa = f(a);
    let mut fb = f(b);
    if fa == 0.0 {
        return a;
    }
    if fb == 0.0 {
        return b;
    }
    debug_assert!(fa * fb < 0.0, "brent: endpoints do not bracket a root");
    if fa.abs() < fb.abs() {
        std::mem::swap(&mut a, &mut b);
        std::mem::swap(&mut fa, &mut fb);
    }
    let mut c = a;
    let mut fc = fa;
    let mut d = b - a;
    let mut mflag = true;
    for _ in 0..200 {
        if fb == 0.0 || (b - a).abs() < tol {
            return b;
        }
        let mut s = if fa != fc && fb != fc {
            // inverse quadratic interpolation
            a * fb * fc / ((fa - fb) * (fa - fc))
                + b * fa * fc / ((fb - fa) * (fb - fc))
                + c * fa * fb / ((fc - fa) * (fc - fb))
        } else {
            b - fb * (b - a) / (fb - fa)
        };
        let lo = (3.0 * a + b) / 4.0;
        let cond = !((lo.min(b) < s && s < lo.max(b))
            && !(mflag && (s - b).abs() >= (b - c).abs() / 2.0)
            && !(!mflag && (s - b).abs() >= (c - d).abs() / 2.0));
        if cond {
            s = 0.5 * (a + b);
            mflag = true;
        } else {
            mflag = false;
        }
        let fs = f(s);
        d = c;
        c = b;
        fc = fb;
        if fa * fs < 0.0 {
            b = s;
            fb = fs;
        } else {
            a = s;
            fa = fs;
        }
        if fa.abs() < fb.abs() {
            std::mem::swap(&mut a, &mut b);
            std::mem::swap(&mut fa, &mut fb);
        }
    }
    b
}

/// A compactly supported test function given by value/derivative callables.
pub trait TestFunction {
    fn value(&self, x: f64) -> f64;
    fn derivative(&self, x: f64) -> f64;
}

/// A smooth bump supported on `(center - halfwidth, center + halfwidth)`,
/// `exp(-1/(1-t²))` in the scaled coordinate. Used as weak-form test function.
#[derive(Clone, Copy, Debug)]
pub struct Bump {
    pub center: f64,
    pub halfwidth: f64,
}

impl TestFunction for Bump {
    fn value(&self, x: f64) -> f64 {
        Bump::value(self, x)
    }

    fn derivative(&self, x: f64) -> f64 {
        Bump::derivative(self, x)
    }
}

impl Bump {
    pub fn value(&self, x: f64) -> f64 {
        let t = (x - self.center) / self.halfwidth;
        if t.abs() >= 1.0 {
            0.0
        } else {
            (-1.0 / (1.0 - t * t)).exp()
        }
    }

    pub fn derivative(&self, x: f64) -> f64 {
        let t = (x - self.center) / self.halfwidth;
        if t.abs() >= 1.0 {
            0.0
        } else {
            let u = 1.0 - t * t;
            (-1.0 / u).exp() * (-2.0 * t / (u * u)) / self.halfwidth
        }
    }

    pub fn support(&self) -> (f64, f64) {
        (self.center - self.halfwidth, self.center + self.halfwidth)
    }
}

/// FNV-1a over bytes; used for content-addressed cache keys.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Run `jobs` closures over `workers` threads, returning results in job order.
/// With `workers <= 1` everything runs on the calling thread.
pub fn run_indexed<T, F>(jobs: Vec<F>, workers: usize) -> Vec<T>
where
    T: Send,
    F: FnOnce() -> T + Send,
{
    if workers <= 1 || jobs.len() <= 1 {
        return jobs.into_iter().map(|f| f()).collect();
    }
    let n = jobs.len();
    let mut slots: Vec<Option<T>> = (0..n).map(|_| None).collect();
    let queue: Vec<(usize, F)> = jobs.into_iter().enumerate().collect();
    let queue = Mutex::new(queue);
    let slots_mx = Mutex::new(&mut slots);
    std::thread::scope(|scope| {
        for _ in 0..workers.min(n) {
            scope.spawn(|| loop {
                let job = queue.lock().unwrap().pop();
                match job {
                    Some((i, f)) => {
                        let out = f();
                        slots_mx.lock().unwrap()[i] = Some(out);
                    }
                    None => break,
                }
            });
        }
    });
    slots.into_iter().map(|s| s.unwrap()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gl_integrates_polynomials_exactly() {
        // 5-point rule is exact through degree 9
        let exact = 2.0 / 10.0; // int_{-1}^{1} x^9 dx = 0; use x^8: 2/9
        let v = integrate_gl(|x| x.powi(8), -1.0, 1.0, 5);
        assert!((v - 2.0 / 9.0).abs() < 1e-14, "{v}");
        let v9 = integrate_gl(|x| x.powi(9), -1.0, 1.0, 5);
        assert!(v9.abs() < 1e-15);
        let _ = exact;
    }

    #[test]
    fn gl_nodes_symmetric_and_weights_sum_to_two() {
        for n in [1, 2, 7, 32, 256] {
            let (xs, ws) = gauss_legendre(n);
            let s: f64 = ws.iter().sum();
            assert!((s - 2.0).abs() < 1e-12);
            for i in 0..n {
                assert!((xs[i] + xs[n - 1 - i]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn brent_finds_simple_roots() {
        let r = brent(|x| x * x - 2.0, 0.0, 2.0, 1e-15);
        assert!((r - 2.0_f64.sqrt()).abs() < 1e-12);
        let r2 = brent(|x| x.cos(), 0.0, 3.0, 1e-15);
        assert!((r2 - std::f64::consts::FRAC_PI_2).abs() < 1e-12);
    }

    #[test]
    fn bump_derivative_matches_finite_difference() {
        let b = Bump {
            center: 1.0,
            halfwidth: 0.5,
        };
        for &x in &[0.7, 0.9, 1.0, 1.2, 1.45] {
            let h = 1e-6;
            let fd = (b.value(x + h) - b.value(x - h)) / (2.0 * h);
            assert!((b.derivative(x) - fd).abs() < 1e-6, "x={x}");
        }
    }

    #[test]
    fn run_indexed_preserves_order() {
        let jobs: Vec<_> = (0..57).map(|i| move || i * i).collect();
        let out = run_indexed(jobs, 4);
        assert_eq!(out, (0..57).map(|i| i * i).collect::<Vec<_>>());
    }
}
