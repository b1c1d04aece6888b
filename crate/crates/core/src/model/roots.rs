//! Polynomial roots and small dense eigenvalue problems, generic over the scalar.
//!
//! Polynomials are monic and given by their remaining coefficients in
//! descending order: `[a_{n-1}, ..., a_1, a_0]` stands for
//! `x^n + a_{n-1} x^{n-1} + ... + a_0`.

use num_complex::Complex;

use crate::scalar::Scalar;

/// All complex roots of a monic polynomial, with multiplicity.
pub fn monic_roots<T: Scalar>(coeffs: &[T]) -> Vec<Complex<T>> {
    let mut c: Vec<T> = coeffs.to_vec();
    let mut roots = Vec::with_capacity(c.len());
    // exact zero roots
    while let Some(&last) = c.last() {
        if last == T::zero() {
            c.pop();
            roots.push(Complex::new(T::zero(), T::zero()));
        } else {
            break;
        }
    }
    match c.len() {
        0 => {}
        1 => roots.push(Complex::new(-c[0], T::zero())),
        2 => roots.extend(quadratic_roots(c[0], c[1])),
        3 => roots.extend(cubic_roots(c[0], c[1], c[2])),
        _ => roots.extend(aberth(&c)),
    }
    roots
}

/// Roots of `x^2 + b x + c` without cancellation in the real case.
pub fn quadratic_roots<T: Scalar>(b: T, c: T) -> [Complex<T>; 2] {
    let two = T::lit(2.0);
    let disc = b * b - T::lit(4.0) * c;
    if disc >= T::zero() {
        let sq = disc.sqrt();
        let q = if b >= T::zero() {
            -(b + sq) / two
        } else {
            (sq - b) / two
        };
        let r2 = if q != T::zero() { c / q } else { T::zero() };
        [Complex::new(q, T::zero()), Complex::new(r2, T::zero())]
    } else {
        let re = -b / two;
        let im = (-disc).sqrt() / two;
        [Complex::new(re, im), Complex::new(re, -im)]
    }
}

/// Roots of `x^3 + a x^2 + b x + c`: a real root by bisection on the Cauchy
/// bracket, then deflation to a quadratic.
pub fn cubic_roots<T: Scalar>(a: T, b: T, c: T) -> [Complex<T>; 3] {
    let p = |x: T| ((x + a) * x + b) * x + c;
    let bound = T::one() + a.abs().max(b.abs()).max(c.abs());
    let (mut lo, mut hi) = (-bound, bound);
    let mut root = T::zero();
    for _ in 0..4000 {
        let mid = (lo + hi) / T::lit(2.0);
        let pm = p(mid);
        root = mid;
        if pm == T::zero() || mid <= lo || mid >= hi {
            break;
        }
        if pm < T::zero() {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    // x^3 + a x^2 + b x + c = (x - r)(x^2 + (a + r) x + (b + r (a + r)))
    let b1 = a + root;
    let c1 = b + root * b1;
    let [q1, q2] = quadratic_roots(b1, c1);
    [Complex::new(root, T::zero()), q1, q2]
}

fn horner<T: Scalar>(coeffs: &[T], z: Complex<T>) -> (Complex<T>, Complex<T>) {
    // value and derivative of the monic polynomial at z
    let mut p = Complex::new(T::one(), T::zero());
    let mut dp = Complex::new(T::zero(), T::zero());
    for &ck in coeffs {
        dp = dp * z + p;
        p = p * z + Complex::new(ck, T::zero());
    }
    (p, dp)
}

fn aberth<T: Scalar>(coeffs: &[T]) -> Vec<Complex<T>> {
    let n = coeffs.len();
    let radius = T::one() + coeffs.iter().fold(T::zero(), |m, c| m.max(c.abs()));
    let mut z: Vec<Complex<T>> = (0..n)
        .map(|k| {
            let ang = T::lit(2.0 * std::f64::consts::PI * k as f64 / n as f64 + 0.4);
            Complex::new(radius * ang.cos(), radius * ang.sin()) * T::lit(0.5)
        })
        .collect();
    let tol = T::epsilon() * T::lit(16.0);
    for _ in 0..500 {
        let mut moved = T::zero();
        for i in 0..n {
            let (p, dp) = horner(coeffs, z[i]);
            if p.norm() == T::zero() {
                continue;
            }
            let ratio = p / dp;
            let mut s = Complex::new(T::zero(), T::zero());
            for j in 0..n {
                if j != i {
                    s = s + Complex::new(T::one(), T::zero()) / (z[i] - z[j]);
                }
            }
            let step = ratio / (Complex::new(T::one(), T::zero()) - ratio * s);
            if step.re.is_finite() && step.im.is_finite() {
                z[i] = z[i] - step;
                moved = moved.max(step.norm() / (T::one() + z[i].norm()));
            }
        }
        if moved <= tol {
            break;
        }
    }
    z
}

/// Characteristic polynomial coefficients of a square matrix
/// (Faddeev-LeVerrier), in the monic descending layout used above.
pub fn char_poly<T: Scalar>(m: &[Vec<T>]) -> Vec<T> {
    let n = m.len();
    let mut coeffs = Vec::with_capacity(n);
    // M_k = A M_{k-1} + c_{n-k+1} I, c_{n-k} = -tr(A M_k) / k
    let mut mk: Vec<Vec<T>> = vec![vec![T::zero(); n]; n];
    let mut c_prev = T::one();
    for k in 1..=n {
        let mut next = matmul(m, &mk);
        for (i, row) in next.iter_mut().enumerate() {
            row[i] = row[i] + c_prev;
        }
        let am = matmul(m, &next);
        let tr: T = (0..n).map(|i| am[i][i]).sum();
        let ck = -tr / T::lit(k as f64);
        coeffs.push(ck);
        mk = next;
        c_prev = ck;
    }
    coeffs
}

fn matmul<T: Scalar>(a: &[Vec<T>], b: &[Vec<T>]) -> Vec<Vec<T>> {
    let n = a.len();
    let mut out = vec![vec![T::zero(); n]; n];
    for i in 0..n {
        for k in 0..n {
            let aik = a[i][k];
            if aik == T::zero() {
                continue;
            }
            for j in 0..n {
                out[i][j] = out[i][j] + aik * b[k][j];
            }
        }
    }
    out
}

/// Eigenvalues of a small dense matrix via its characteristic polynomial.
pub fn eigenvalues<T: Scalar>(m: &[Vec<T>]) -> Vec<Complex<T>> {
    monic_roots(&char_poly(m))
}
