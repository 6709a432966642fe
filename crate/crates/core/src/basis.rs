//! Tensor-product Legendre bases on host boxes, element mass matrices and L2 projection.
//!
//! Coefficients of a `K`-component field are stored mode-major: entry `m * K + u` is the
//! coefficient of mode `m` for component `u`. Mode `m = i2 * (p + 1) + i1` is the product
//! of the 1D polynomials of degree `i1` in `x1` and `i2` in `x2`.

use crate::error::{Error, Result};
use crate::quadrature::{QuadRule, Rect};
use crate::real::{Real, Vec2};

/// Largest supported order.
pub const MAX_ORDER: usize = 7;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Basis<T> {
    pub order: usize,
    pub lo: Vec2<T>,
    pub size: Vec2<T>,
    /// Orthonormal on the host box; otherwise the single constant function 1 (used for FV
    /// averages in level transfers).
    pub normalized: bool,
}

/// Legendre values and derivatives up to degree `p` at `xi`.
fn legendre<T: Real>(p: usize, xi: T, vals: &mut [T], ders: &mut [T]) {
    vals[0] = T::one();
    ders[0] = T::zero();
    if p == 0 {
        return;
    }
    vals[1] = xi;
    ders[1] = T::one();
    for n in 1..p {
        let nf = T::from_usize(n).unwrap();
        let a = T::from_usize(2 * n + 1).unwrap();
        vals[n + 1] = (a * xi * vals[n] - nf * vals[n - 1]) / (nf + T::one());
        ders[n + 1] = ders[n - 1] + a * vals[n];
    }
}

impl<T: Real> Basis<T> {
    pub fn new(order: usize, host: &Rect<T>) -> Self {
        assert!(order <= MAX_ORDER, "basis order {order} exceeds {MAX_ORDER}");
        Basis {
            order,
            lo: host.lo,
            size: host.size(),
            normalized: true,
        }
    }

    pub fn piecewise_constant(host: &Rect<T>) -> Self {
        Basis {
            order: 0,
            lo: host.lo,
            size: host.size(),
            normalized: false,
        }
    }

    pub fn len(&self) -> usize {
        (self.order + 1) * (self.order + 1)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    fn one_d(&self, x: Vec2<T>, vals: &mut [[T; MAX_ORDER + 1]; 2], ders: &mut [[T; MAX_ORDER + 1]; 2]) {
        let p = self.order;
        for k in 0..2 {
            if !self.normalized {
                vals[k][0] = T::one();
                ders[k][0] = T::zero();
                continue;
            }
            let h = self.size[k];
            let xi = T::two() * (x[k] - self.lo[k]) / h - T::one();
            legendre(p, xi, &mut vals[k], &mut ders[k]);
            for n in 0..=p {
                let s = (T::from_usize(2 * n + 1).unwrap() / h).sqrt();
                vals[k][n] *= s;
                ders[k][n] *= s * T::two() / h;
            }
        }
    }

    /// Values of all basis functions at `x`.
    pub fn eval_into(&self, x: Vec2<T>, out: &mut [T]) {
        let mut v = [[T::zero(); MAX_ORDER + 1]; 2];
        let mut d = v;
        self.one_d(x, &mut v, &mut d);
        let n = self.order + 1;
        for i2 in 0..n {
            for i1 in 0..n {
                out[i2 * n + i1] = v[0][i1] * v[1][i2];
            }
        }
    }

    /// Gradients of all basis functions at `x`.
    pub fn grad_into(&self, x: Vec2<T>, out: &mut [Vec2<T>]) {
        let mut v = [[T::zero(); MAX_ORDER + 1]; 2];
        let mut d = v;
        self.one_d(x, &mut v, &mut d);
        let n = self.order + 1;
        for i2 in 0..n {
            for i1 in 0..n {
                out[i2 * n + i1] = [d[0][i1] * v[1][i2], v[0][i1] * d[1][i2]];
            }
        }
    }

    pub fn eval(&self, x: Vec2<T>) -> Vec<T> {
        let mut out = vec![T::zero(); self.len()];
        self.eval_into(x, &mut out);
        out
    }

    pub fn eval_grad(&self, x: Vec2<T>) -> Vec<Vec2<T>> {
        let mut out = vec![[T::zero(); 2]; self.len()];
        self.grad_into(x, &mut out);
        out
    }

    /// Field value at `x` of coefficients laid out mode-major.
    pub fn evaluate<const K: usize>(&self, coeffs: &[T], x: Vec2<T>) -> [T; K] {
        let mut b = [T::zero(); (MAX_ORDER + 1) * (MAX_ORDER + 1)];
        self.eval_into(x, &mut b);
        let mut u = [T::zero(); K];
        for (m, bm) in b[..self.len()].iter().enumerate() {
            for k in 0..K {
                u[k] += *bm * coeffs[m * K + k];
            }
        }
        u
    }

    /// Field gradient at `x`: `out[k][d]` is the derivative of component `k` along `x_d`.
    pub fn evaluate_grad<const K: usize>(&self, coeffs: &[T], x: Vec2<T>) -> [Vec2<T>; K] {
        let mut g = [[T::zero(); 2]; (MAX_ORDER + 1) * (MAX_ORDER + 1)];
        self.grad_into(x, &mut g);
        let mut out = [[T::zero(); 2]; K];
        for (m, gm) in g[..self.len()].iter().enumerate() {
            for k in 0..K {
                out[k][0] += gm[0] * coeffs[m * K + k];
                out[k][1] += gm[1] * coeffs[m * K + k];
            }
        }
        out
    }
}

/// Dense symmetric positive definite element matrix with its Cholesky factor.
#[derive(Clone, Debug, PartialEq)]
pub struct MassMatrix<T> {
    pub n: usize,
    /// Row-major entries.
    pub matrix: Vec<T>,
    /// Lower Cholesky factor, row-major; empty for the identity.
    factor: Vec<T>,
}

impl<T: Real> MassMatrix<T> {
    pub fn identity(n: usize) -> Self {
        let mut matrix = vec![T::zero(); n * n];
        for i in 0..n {
            matrix[i * n + i] = T::one();
        }
        MassMatrix {
            n,
            matrix,
            factor: Vec::new(),
        }
    }

    /// `M = sum_g w_g B(x_g)^T B(x_g)`.
    pub fn assemble(rule: &QuadRule<T>, basis: &Basis<T>) -> Result<Self> {
        let n = basis.len();
        let mut matrix = vec![T::zero(); n * n];
        let mut b = vec![T::zero(); n];
        for (x, &w) in rule.points.iter().zip(&rule.weights) {
            basis.eval_into(*x, &mut b);
            for i in 0..n {
                let wi = w * b[i];
                for j in 0..=i {
                    matrix[i * n + j] += wi * b[j];
                }
            }
        }
        for i in 0..n {
            for j in 0..i {
                matrix[j * n + i] = matrix[i * n + j];
            }
        }
        MassMatrix::from_matrix(n, matrix)
    }

    /// Factors a symmetric matrix; fails if a pivot drops below `1e-14` times the
    /// largest diagonal entry.
    pub fn from_matrix(n: usize, matrix: Vec<T>) -> Result<Self> {
        let max_diag = (0..n).map(|i| matrix[i * n + i]).fold(T::zero(), T::max);
        let tol = T::lit(1e-14) * max_diag;
        let mut l = vec![T::zero(); n * n];
        for j in 0..n {
            let mut d = matrix[j * n + j];
            for k in 0..j {
                d -= l[j * n + k] * l[j * n + k];
            }
            if !(d > tol) || !(max_diag > T::zero()) {
                return Err(Error::DegenerateElement { element: usize::MAX });
            }
            let d = d.sqrt();
            l[j * n + j] = d;
            for i in j + 1..n {
                let mut s = matrix[i * n + j];
                for k in 0..j {
                    s -= l[i * n + k] * l[j * n + k];
                }
                l[i * n + j] = s / d;
            }
        }
        Ok(MassMatrix {
            n,
            matrix,
            factor: l,
        })
    }

    pub fn is_identity(&self) -> bool {
        self.factor.is_empty()
    }

    /// Solves `M x = b` in place for `k` interleaved right-hand sides (`b[m * k + u]`).
    pub fn solve(&self, b: &mut [T], k: usize) {
        if self.is_identity() {
            return;
        }
        let n = self.n;
        let l = &self.factor;
        for u in 0..k {
            for i in 0..n {
                let mut s = b[i * k + u];
                for j in 0..i {
                    s -= l[i * n + j] * b[j * k + u];
                }
                b[i * k + u] = s / l[i * n + i];
            }
            for i in (0..n).rev() {
                let mut s = b[i * k + u];
                for j in i + 1..n {
                    s -= l[j * n + i] * b[j * k + u];
                }
                b[i * k + u] = s / l[i * n + i];
            }
        }
    }

    /// `M x` for `k` interleaved vectors.
    pub fn apply(&self, x: &[T], k: usize) -> Vec<T> {
        let n = self.n;
        let mut y = vec![T::zero(); n * k];
        for i in 0..n {
            for j in 0..n {
                let m = self.matrix[i * n + j];
                for u in 0..k {
                    y[i * k + u] += m * x[j * k + u];
                }
            }
        }
        y
    }
}

/// `int B^T f dV` over `rule`, mode-major.
pub fn moments<T: Real, const K: usize>(rule: &QuadRule<T>, basis: &Basis<T>, f: impl Fn(Vec2<T>) -> [T; K]) -> Vec<T> {
    let n = basis.len();
    let mut out = vec![T::zero(); n * K];
    let mut b = vec![T::zero(); n];
    for (x, &w) in rule.points.iter().zip(&rule.weights) {
        basis.eval_into(*x, &mut b);
        let v = f(*x);
        for m in 0..n {
            let wb = w * b[m];
            for k in 0..K {
                out[m * K + k] += wb * v[k];
            }
        }
    }
    out
}

/// Galerkin projection `M^-1 int B^T f dV`.
pub fn project<T: Real, const K: usize>(
    rule: &QuadRule<T>,
    basis: &Basis<T>,
    mass: &MassMatrix<T>,
    f: impl Fn(Vec2<T>) -> [T; K],
) -> Vec<T> {
    let mut c = moments(rule, basis, f);
    mass.solve(&mut c, K);
    c
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::levelset::LevelSet;
    use crate::quadrature::{tensor_rule, volume_rule, QuadSpec};
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn unit() -> Rect<f64> {
        Rect::new([0.0, 0.0], [1.0, 1.0])
    }

    #[test]
    fn constant_and_odd_modes() {
        let host = Rect::new([0.5, 1.0], [0.75, 1.5]);
        let b = Basis::new(2, &host);
        let v = b.eval([0.6, 1.2]);
        assert_relative_eq!(v[0], 1.0 / (0.25f64 * 0.5).sqrt(), max_relative = 1e-15);
        let c = b.eval(host.center());
        assert!(c[1].abs() < 1e-15 && c[3].abs() < 1e-15);
        let pc = Basis::piecewise_constant(&host);
        assert_eq!(pc.eval([9.0, -3.0]), vec![1.0]);
    }

    #[test]
    fn orthonormal_on_host() {
        for p in 0..=3 {
            let host = Rect::new([0.2, -0.1], [0.45, 0.3]);
            let m = MassMatrix::assemble(&tensor_rule(&host, p + 1), &Basis::new(p, &host)).unwrap();
            for i in 0..m.n {
                for j in 0..m.n {
                    let id: f64 = if i == j { 1.0 } else { 0.0 };
                    assert!((m.matrix[i * m.n + j] - id).abs() < 1e-13);
                }
            }
        }
    }

    #[test]
    fn gradient_matches_central_difference() {
        let mut rng = rand::rngs::StdRng::seed_from_u64(1);
        let host = Rect::new([0.0, 0.0], [0.3, 0.2]);
        let b = Basis::new(3, &host);
        for _ in 0..20 {
            let x = [rng.gen_range(-0.1..0.4), rng.gen_range(-0.1..0.3)];
            let g = b.eval_grad(x);
            let h = 1e-6;
            for k in 0..2 {
                let mut xp = x;
                let mut xm = x;
                xp[k] += h;
                xm[k] -= h;
                let (vp, vm) = (b.eval(xp), b.eval(xm));
                for m in 0..b.len() {
                    let fd: f64 = (vp[m] - vm[m]) / (2.0 * h);
                    let gk: f64 = g[m][k];
                    assert!((fd - gk).abs() <= 1e-8 * gk.abs().max(1.0), "{fd} {gk}");
                }
            }
        }
    }

    #[test]
    fn half_cell_mass() {
        let phi = LevelSet::half_plane([1.0, 0.0], 0.5).unwrap();
        let rule = volume_rule(&unit(), &phi, &QuadSpec::new(3)).unwrap();
        let m = MassMatrix::assemble(&rule, &Basis::new(0, &unit())).unwrap();
        assert_relative_eq!(m.matrix[0], 0.5, epsilon = 1e-14);
    }

    #[test]
    fn degenerate_matrix_is_rejected() {
        // a single point cannot support a linear basis
        let rule = QuadRule {
            points: vec![[0.5, 0.5]],
            weights: vec![1.0],
        };
        assert!(matches!(
            MassMatrix::assemble(&rule, &Basis::new(1, &unit())),
            Err(Error::DegenerateElement { .. })
        ));
    }

    #[test]
    fn projection_examples() {
        let host = Rect::new([0.0, 0.0], [0.5, 0.25]);
        let b = Basis::new(2, &host);
        let rule = tensor_rule(&host, 4);
        let m = MassMatrix::identity(b.len());
        let c = project(&rule, &b, &m, |_| [3.0]);
        assert_relative_eq!(c[0], 3.0 * (0.125f64).sqrt(), max_relative = 1e-14);
        assert!(c[1..].iter().all(|v| v.abs() < 1e-14));
        for k in 0..b.len() {
            let c = project(&rule, &b, &m, |x| [b.eval(x)[k]]);
            for (j, v) in c.iter().enumerate() {
                let e = if j == k { 1.0 } else { 0.0 };
                assert!((v - e).abs() < 1e-13);
            }
        }
    }

    /// Least-squares fit of a degree-3 tensor polynomial on dense samples of the cut
    /// region, solved with nalgebra.
    fn lsq_oracle(phi: &LevelSet<f64>, host: &Rect<f64>, f: impl Fn([f64; 2]) -> f64, at: [f64; 2]) -> f64 {
        let b = Basis::new(3, host);
        let mut rows = Vec::new();
        let mut rhs = Vec::new();
        let n = 200;
        for i in 0..n {
            for j in 0..n {
                let x = [
                    host.lo[0] + (i as f64 + 0.5) / n as f64 * host.size()[0],
                    host.lo[1] + (j as f64 + 0.5) / n as f64 * host.size()[1],
                ];
                if phi.value(x) < 0.0 {
                    rows.push(b.eval(x));
                    rhs.push(f(x));
                }
            }
        }
        let a = nalgebra::DMatrix::from_fn(rows.len(), b.len(), |i, j| rows[i][j]);
        let y = nalgebra::DVector::from_vec(rhs);
        let c = a.svd(true, true).solve(&y, 1e-14).unwrap();
        b.eval(at).iter().zip(c.iter()).map(|(u, v)| u * v).sum()
    }

    #[test]
    fn projection_on_cut_element_matches_lsq_of_polynomial_part() {
        // For a smooth field well approximated at p = 3, the L2 projection and a dense
        // least-squares fit agree up to the (small) approximation error.
        let phi = LevelSet::disc([0.0, 0.0], 1.0).unwrap();
        let host = Rect::new([0.6, 0.5], [0.8, 0.7]);
        let rule = volume_rule(&host, &phi, &QuadSpec::new(8)).unwrap();
        let b = Basis::new(3, &host);
        let m = MassMatrix::assemble(&rule, &b).unwrap();
        let f = |x: [f64; 2]| (x[0] + 2.0 * x[1]).sin();
        let c = project(&rule, &b, &m, |x| [f(x)]);
        let centroid = [
            rule.integrate(|x| x[0]) / rule.measure(),
            rule.integrate(|x| x[1]) / rule.measure(),
        ];
        let got: f64 = b.eval(centroid).iter().zip(&c).map(|(u, v)| u * v).sum();
        let oracle = lsq_oracle(&phi, &host, f, centroid);
        assert!((got - oracle).abs() / oracle.abs() < 1e-6, "{got} {oracle}");
    }

    proptest! {
        #[test]
        fn reproduces_polynomials_on_cut_elements(coef in proptest::collection::vec(-2.0f64..2.0, 16), cx in 0.3f64..0.9, seed in 0u64..1000) {
            let phi = LevelSet::disc([cx, 0.1], 0.35).unwrap();
            let host = Rect::new([0.5, 0.0], [0.75, 0.25]);
            let rule = volume_rule(&host, &phi, &QuadSpec::new(5)).unwrap();
            prop_assume!(rule.measure() > 0.05 * host.area());
            for p in 0..=3usize {
                let b = Basis::new(p, &host);
                let m = MassMatrix::assemble(&rule, &b).unwrap();
                let g = |x: [f64; 2]| {
                    let mut s = 0.0;
                    for i in 0..=p {
                        for j in 0..=p {
                            s += coef[i * 4 + j] * x[0].powi(i as i32) * x[1].powi(j as i32);
                        }
                    }
                    s
                };
                let c = project(&rule, &b, &m, |x| [g(x)]);
                let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
                for _ in 0..10 {
                    let x = [rng.gen_range(0.5..0.75), rng.gen_range(0.0..0.25)];
                    let v: f64 = b.eval(x).iter().zip(&c).map(|(u, v)| u * v).sum();
                    prop_assert!((v - g(x)).abs() <= 1e-10 * g(x).abs().max(1.0));
                }
                // average preservation: the projection integrates like the field
                let avg = rule.integrate(|x| b.evaluate::<1>(&c, x)[0]);
                let exact = rule.integrate(g);
                prop_assert!((avg - exact).abs() < 1e-12 * exact.abs().max(1.0));
            }
        }

        #[test]
        fn solve_residual(seed in 0u64..200) {
            let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
            let phi = LevelSet::disc([rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)], 0.5).unwrap();
            let rule = volume_rule(&unit(), &phi, &QuadSpec::new(5)).unwrap();
            prop_assume!(rule.measure() > 0.1);
            let b = Basis::new(2, &unit());
            let m = MassMatrix::assemble(&rule, &b).unwrap();
            let r: Vec<f64> = (0..b.len() * 4).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let mut x = r.clone();
            m.solve(&mut x, 4);
            let back = m.apply(&x, 4);
            let scale = x.iter().fold(1.0f64, |a, v| a.max(v.abs()));
            for (a, b) in back.iter().zip(&r) {
                prop_assert!((a - b).abs() < 1e-12 * scale);
            }
            // dense LU oracle
            let dm = nalgebra::DMatrix::from_row_slice(m.n, m.n, &m.matrix);
            let lu = dm.lu();
            for u in 0..4 {
                let col = nalgebra::DVector::from_fn(m.n, |i, _| r[i * 4 + u]);
                let sol = lu.solve(&col).unwrap();
                for i in 0..m.n {
                    prop_assert!((sol[i] - x[i * 4 + u]).abs() <= 1e-10 * scale);
                }
            }
        }
    }

    #[test]
    fn works_in_f32() {
        let host = Rect::new([0.0f32, 0.0], [1.0, 1.0]);
        let b = Basis::new(2, &host);
        let m = MassMatrix::assemble(&tensor_rule(&host, 3), &b).unwrap();
        assert!((m.matrix[0] - 1.0).abs() < 1e-5);
    }
}
