//! Quadrature on implicitly defined regions `{phi < 0}` and interfaces `{phi = 0}`
//! restricted to axis-aligned boxes and segments.
//!
//! Cut boxes are handled by dimension reduction: a height direction `k` along which
//! `phi` is strictly monotone is picked, the base interval is split at the points
//! where the interface leaves through the top or bottom face, and on every piece the
//! interface is the graph of a smooth function, so nested Gauss rules stay high order.
//! Boxes where no such direction exists are bisected.

use std::sync::OnceLock;

use crate::error::{Error, Result};
use crate::levelset::LevelSet;
use crate::real::{norm, Real, Vec2};

const MAX_DEPTH: usize = 12;
/// Largest angle (radians) the level-set normal may turn across a box integrated in one piece.
const MAX_TURN: f64 = 0.15;
/// Gauss points per base segment of a height-function integration, in units of `q`.
const BASE_POINTS: usize = 2;
const GAUSS_TABLE_MAX: usize = 24;

/// Nodes and weights of the `q`-point Gauss-Legendre rule on `[-1, 1]`.
pub fn gauss_legendre(q: usize) -> (&'static [f64], &'static [f64]) {
    static TABLE: OnceLock<Vec<(Vec<f64>, Vec<f64>)>> = OnceLock::new();
    assert!(
        (1..=GAUSS_TABLE_MAX).contains(&q),
        "Gauss rule with {q} points not tabulated"
    );
    let t = TABLE.get_or_init(|| (0..=GAUSS_TABLE_MAX).map(compute_gauss).collect());
    (&t[q].0, &t[q].1)
}

fn compute_gauss(q: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; q];
    let mut w = vec![0.0; q];
    for i in 0..q.div_ceil(2) {
        // Chebyshev initial guess then Newton on P_q.
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (q as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for n in 2..=q {
                let p2 = ((2 * n - 1) as f64 * z * p1 - (n - 1) as f64 * p0) / n as f64;
                p0 = p1;
                p1 = p2;
            }
            let pq = if q == 1 { z } else { p1 };
            let pqm1 = if q == 1 { 1.0 } else { p0 };
            dp = q as f64 * (z * pq - pqm1) / (z * z - 1.0);
            let dz = pq / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        if q == 1 {
            z = 0.0;
            dp = 1.0;
        }
        x[i] = -z;
        x[q - 1 - i] = z;
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        w[i] = wi;
        w[q - 1 - i] = wi;
    }
    (x, w)
}

/// Axis-aligned box `[lo, hi]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rect<T> {
    pub lo: Vec2<T>,
    pub hi: Vec2<T>,
}

impl<T: Real> Rect<T> {
    pub fn new(lo: Vec2<T>, hi: Vec2<T>) -> Self {
        Rect { lo, hi }
    }

    pub fn center(&self) -> Vec2<T> {
        [
            (self.lo[0] + self.hi[0]) * T::half(),
            (self.lo[1] + self.hi[1]) * T::half(),
        ]
    }

    pub fn size(&self) -> Vec2<T> {
        [self.hi[0] - self.lo[0], self.hi[1] - self.lo[1]]
    }

    pub fn area(&self) -> T {
        let s = self.size();
        s[0] * s[1]
    }

    pub fn contains(&self, x: Vec2<T>) -> bool {
        x[0] >= self.lo[0] && x[0] <= self.hi[0] && x[1] >= self.lo[1] && x[1] <= self.hi[1]
    }

    fn quadrants(&self) -> [Rect<T>; 4] {
        let c = self.center();
        [
            Rect::new(self.lo, c),
            Rect::new([c[0], self.lo[1]], [self.hi[0], c[1]]),
            Rect::new([self.lo[0], c[1]], [c[0], self.hi[1]]),
            Rect::new(c, self.hi),
        ]
    }
}

/// Gauss points per direction and root-finding tolerance (relative to the interval length).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QuadSpec<T> {
    pub order: usize,
    pub tol: T,
}

impl<T: Real> QuadSpec<T> {
    pub fn new(order: usize) -> Self {
        QuadSpec {
            order,
            tol: T::lit(1e-12),
        }
    }
}

/// Points with strictly positive weights.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct QuadRule<T> {
    pub points: Vec<Vec2<T>>,
    pub weights: Vec<T>,
}

impl<T: Real> QuadRule<T> {
    pub fn empty() -> Self {
        QuadRule {
            points: Vec::new(),
            weights: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn measure(&self) -> T {
        self.weights.iter().copied().sum()
    }

    pub fn integrate(&self, f: impl Fn(Vec2<T>) -> T) -> T {
        self.points
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(x))
            .sum()
    }

    pub fn extend(&mut self, other: &QuadRule<T>) {
        self.points.extend_from_slice(&other.points);
        self.weights.extend_from_slice(&other.weights);
    }

    fn push(&mut self, x: Vec2<T>, w: T) {
        if w > T::zero() {
            self.points.push(x);
            self.weights.push(w);
        }
    }
}

/// Interface quadrature with unit normals pointing out of the fluid.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SurfaceRule<T> {
    pub points: Vec<Vec2<T>>,
    pub weights: Vec<T>,
    pub normals: Vec<Vec2<T>>,
}

impl<T: Real> SurfaceRule<T> {
    pub fn empty() -> Self {
        SurfaceRule {
            points: Vec::new(),
            weights: Vec::new(),
            normals: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn measure(&self) -> T {
        self.weights.iter().copied().sum()
    }

    pub fn integrate(&self, f: impl Fn(Vec2<T>, Vec2<T>) -> T) -> T {
        (0..self.len())
            .map(|g| self.weights[g] * f(self.points[g], self.normals[g]))
            .sum()
    }

    pub fn extend(&mut self, other: &SurfaceRule<T>) {
        self.points.extend_from_slice(&other.points);
        self.weights.extend_from_slice(&other.weights);
        self.normals.extend_from_slice(&other.normals);
    }
}

/// Volume and interface rules of one box.
#[derive(Clone, Debug, Default)]
pub struct CellRules<T> {
    pub volume: QuadRule<T>,
    pub surface: SurfaceRule<T>,
}

/// Tensor-product Gauss rule on a full box.
pub fn tensor_rule<T: Real>(b: &Rect<T>, q: usize) -> QuadRule<T> {
    let (x, w) = gauss_legendre(q);
    let s = b.size();
    let c = b.center();
    let mut r = QuadRule::empty();
    for j in 0..q {
        for i in 0..q {
            let p = [
                c[0] + T::half() * s[0] * T::lit(x[i]),
                c[1] + T::half() * s[1] * T::lit(x[j]),
            ];
            r.push(p, T::lit(0.25 * w[i] * w[j]) * s[0] * s[1]);
        }
    }
    r
}

/// Gauss rule on `[a, b]` as (abscissa, weight) pairs.
fn line_gauss<T: Real>(a: T, b: T, q: usize) -> impl Iterator<Item = (T, T)> {
    let (x, w) = gauss_legendre(q);
    let c = (a + b) * T::half();
    let h = (b - a) * T::half();
    x.iter()
        .zip(w)
        .map(move |(&xi, &wi)| (c + h * T::lit(xi), h * T::lit(wi)))
}

fn quad_error(reason: impl Into<String>) -> Error {
    Error::Quadrature {
        cell: [usize::MAX, usize::MAX],
        reason: reason.into(),
    }
}

/// Brent's method on a bracket with `f(a) * f(b) < 0`.
fn brent<T: Real>(f: &dyn Fn(T) -> T, mut a: T, mut b: T, mut fa: T, mut fb: T, tol: T) -> T {
    let two = T::two();
    let mut c = a;
    let mut fc = fa;
    let mut d = b - a;
    let mut e = d;
    for _ in 0..200 {
        if (fb > T::zero()) == (fc > T::zero()) {
            c = a;
            fc = fa;
            d = b - a;
            e = d;
        }
        if fc.abs() < fb.abs() {
            a = b;
            b = c;
            c = a;
            fa = fb;
            fb = fc;
            fc = fa;
        }
        let tol1 = two * T::epsilon() * b.abs() + T::half() * tol;
        let xm = T::half() * (c - b);
        if xm.abs() <= tol1 || fb == T::zero() {
            return b;
        }
        if e.abs() >= tol1 && fa.abs() > fb.abs() {
            let s = fb / fa;
            let (mut p, mut q);
            if a == c {
                p = two * xm * s;
                q = T::one() - s;
            } else {
                let qq = fa / fc;
                let r = fb / fc;
                p = s * (two * xm * qq * (qq - r) - (b - a) * (r - T::one()));
                q = (qq - T::one()) * (r - T::one()) * (s - T::one());
            }
            if p > T::zero() {
                q = -q;
            }
            p = p.abs();
            let min1 = T::lit(3.0) * xm * q - (tol1 * q).abs();
            let min2 = (e * q).abs();
            if two * p < min1.min(min2) {
                e = d;
                d = p / q;
            } else {
                d = xm;
                e = d;
            }
        } else {
            d = xm;
            e = d;
        }
        a = b;
        fa = fb;
        b = if d.abs() > tol1 {
            b + d
        } else if xm > T::zero() {
            b + tol1
        } else {
            b - tol1
        };
        fb = f(b);
    }
    b
}

/// Roots of `f` in the open interval `(a, b)` detected by sign changes on `n` samples.
fn sampled_roots<T: Real>(f: &dyn Fn(T) -> T, a: T, b: T, n: usize, tol: T) -> Result<Vec<T>> {
    let mut roots = Vec::new();
    let step = (b - a) / T::from_usize(n).unwrap();
    let mut x0 = a;
    let mut f0 = f(a);
    for i in 1..=n {
        let x1 = if i == n { b } else { a + step * T::from_usize(i).unwrap() };
        let f1 = f(x1);
        if !f0.is_finite() || !f1.is_finite() {
            return Err(quad_error("level set returned a non-finite value"));
        }
        if f1 == T::zero() && i < n {
            roots.push(x1);
        } else if (f0 < T::zero() && f1 > T::zero()) || (f0 > T::zero() && f1 < T::zero()) {
            roots.push(brent(f, x0, x1, f0, f1, tol));
        }
        x0 = x1;
        f0 = f1;
    }
    Ok(roots)
}

struct Builder<'a, T: Real> {
    phi: &'a LevelSet<T>,
    q: usize,
    tol: T,
    out: CellRules<T>,
}

impl<T: Real> Builder<'_, T> {
    fn recurse(&mut self, b: Rect<T>, depth: usize) -> Result<()> {
        let c = b.center();
        let v = self.phi.value(c);
        if !v.is_finite() {
            return Err(quad_error("level set returned a non-finite value"));
        }
        let half_diag = norm(b.size()) * T::half();
        if v.abs() > self.phi.lipschitz_bound(b.lo, b.hi) * half_diag {
            if v < T::zero() {
                self.out.volume.extend(&tensor_rule(&b, self.q));
            }
            return Ok(());
        }
        match self.height_direction(&b) {
            Some(k) => self.height_integrate(&b, k, false),
            None if depth < MAX_DEPTH => {
                for sub in b.quadrants() {
                    self.recurse(sub, depth + 1)?;
                }
                Ok(())
            }
            None => {
                let g = self.phi.gradient(c);
                let k = if g[0].abs() >= g[1].abs() { 0 } else { 1 };
                self.height_integrate(&b, k, true)
            }
        }
    }

    /// A direction in which `phi` is strictly monotone on a 5x5 sample of the box.
    fn height_direction(&self, b: &Rect<T>) -> Option<usize> {
        let g = self.phi.gradient(b.center());
        let order = if g[0].abs() >= g[1].abs() { [0, 1] } else { [1, 0] };
        let s = b.size();
        let n = 4;
        let grads: Vec<Vec2<T>> = (0..=n)
            .flat_map(|j| (0..=n).map(move |i| (i, j)))
            .map(|(i, j)| {
                let x = [
                    b.lo[0] + s[0] * T::from_usize(i).unwrap() / T::from_usize(n).unwrap(),
                    b.lo[1] + s[1] * T::from_usize(j).unwrap() / T::from_usize(n).unwrap(),
                ];
                self.phi.gradient(x)
            })
            .collect();
        // Keep the interface within a box close to straight so that the graph over the
        // base stays far (relative to the box) from its nearest singularity.
        let gn = norm(g);
        if gn > T::zero() {
            let cos_max = T::lit(MAX_TURN).cos();
            let turned = grads.iter().any(|gs| {
                let n = norm(*gs);
                n == T::zero() || (gs[0] * g[0] + gs[1] * g[1]) / (n * gn) < cos_max
            });
            if turned {
                return None;
            }
        }
        let frac = T::lit(0.05);
        order.into_iter().find(|&k| {
            let sign = g[k].signum();
            g[k] != T::zero()
                && grads
                    .iter()
                    .all(|gs| gs[k] * sign > T::zero() && gs[k].abs() >= frac * norm(*gs))
        })
    }

    fn height_integrate(&mut self, b: &Rect<T>, k: usize, multi: bool) -> Result<()> {
        let j = 1 - k;
        let phi = self.phi;
        let at = |s: T, t: T| -> Vec2<T> {
            let mut x = [T::zero(); 2];
            x[j] = s;
            x[k] = t;
            x
        };
        let (slo, shi) = (b.lo[j], b.hi[j]);
        let (tlo, thi) = (b.lo[k], b.hi[k]);
        let ns = 4 * self.q + 8;
        let stol = self.tol * (shi - slo);
        let ttol = self.tol * (thi - tlo);

        let mut breaks = vec![slo, shi];
        for t in [tlo, thi] {
            let f = |s: T| phi.value(at(s, t));
            breaks.extend(sampled_roots(&f, slo, shi, ns, stol)?);
        }
        if multi {
            for i in 1..16 {
                breaks.push(slo + (shi - slo) * T::from_usize(i).unwrap() / T::lit(16.0));
            }
        }
        breaks.sort_by(|a, b| a.partial_cmp(b).unwrap());
        breaks.dedup_by(|a, b| (*a - *b).abs() <= stol);

        for w in breaks.windows(2) {
            let (a, bb) = (w[0], w[1]);
            if bb - a <= stol {
                continue;
            }
            for (s, ws) in line_gauss(a, bb, BASE_POINTS * self.q) {
                let f = |t: T| phi.value(at(s, t));
                let (f0, f1) = (f(tlo), f(thi));
                if !f0.is_finite() || !f1.is_finite() {
                    return Err(quad_error("level set returned a non-finite value"));
                }
                let mut roots = Vec::new();
                let mut segments = Vec::new();
                if multi {
                    let mut pts = vec![tlo];
                    for r in sampled_roots(&f, tlo, thi, 32, ttol)? {
                        roots.push(r);
                        pts.push(r);
                    }
                    pts.push(thi);
                    for seg in pts.windows(2) {
                        if f((seg[0] + seg[1]) * T::half()) < T::zero() {
                            segments.push((seg[0], seg[1]));
                        }
                    }
                } else if f0 < T::zero() && f1 < T::zero() {
                    segments.push((tlo, thi));
                } else if f0 < T::zero() || f1 < T::zero() {
                    let r = if f0 == T::zero() {
                        tlo
                    } else if f1 == T::zero() {
                        thi
                    } else {
                        brent(&f, tlo, thi, f0, f1, ttol)
                    };
                    roots.push(r);
                    if f0 < T::zero() {
                        segments.push((tlo, r));
                    } else {
                        segments.push((r, thi));
                    }
                }
                for (t0, t1) in segments {
                    for (t, wt) in line_gauss(t0, t1, self.q) {
                        self.out.volume.push(at(s, t), ws * wt);
                    }
                }
                for r in roots {
                    let x = at(s, r);
                    let g = phi.gradient(x);
                    let gn = norm(g);
                    if g[k] == T::zero() || gn == T::zero() {
                        continue;
                    }
                    let w = ws * gn / g[k].abs();
                    if w > T::zero() {
                        self.out.surface.points.push(x);
                        self.out.surface.weights.push(w);
                        self.out.surface.normals.push([g[0] / gn, g[1] / gn]);
                    }
                }
            }
        }
        Ok(())
    }
}

/// Volume rule for `{phi < 0}` and interface rule for `{phi = 0}` inside `cell`.
///
/// A box the interface does not reach gets exactly the tensor Gauss rule (or nothing).
pub fn cell_rules<T: Real>(cell: &Rect<T>, phi: &LevelSet<T>, spec: &QuadSpec<T>) -> Result<CellRules<T>> {
    let mut b = Builder {
        phi,
        q: spec.order,
        tol: spec.tol.max(T::epsilon() * T::lit(8.0)),
        out: CellRules::default(),
    };
    b.recurse(*cell, 0)?;
    let mut out = b.out;
    if out.surface.is_empty() {
        if !out.volume.is_empty() {
            out.volume = tensor_rule(cell, spec.order);
        }
    } else {
        close_surface(cell, phi, spec, &mut out.surface)?;
    }
    Ok(out)
}

/// Shifts the weighted normals of the interface rule so that, together with the fluid
/// parts of the four cell faces, `sum w n` vanishes to round-off. The shift is of the
/// size of the quadrature error and keeps uniform states exactly steady.
fn close_surface<T: Real>(
    cell: &Rect<T>,
    phi: &LevelSet<T>,
    spec: &QuadSpec<T>,
    surface: &mut SurfaceRule<T>,
) -> Result<()> {
    let s = cell.size();
    let left = face_rule(cell.lo, 1, s[1], phi, spec)?.measure();
    let right = face_rule([cell.hi[0], cell.lo[1]], 1, s[1], phi, spec)?.measure();
    let bottom = face_rule(cell.lo, 0, s[0], phi, spec)?.measure();
    let top = face_rule([cell.lo[0], cell.hi[1]], 0, s[0], phi, spec)?.measure();
    let target = [left - right, bottom - top];
    let total = surface.measure();
    let mut sum = [T::zero(); 2];
    for g in 0..surface.len() {
        for k in 0..2 {
            sum[k] += surface.weights[g] * surface.normals[g][k];
        }
    }
    let shift = [(target[0] - sum[0]) / total, (target[1] - sum[1]) / total];
    for g in 0..surface.len() {
        let w = surface.weights[g];
        let v = [
            w * surface.normals[g][0] + shift[0] * w,
            w * surface.normals[g][1] + shift[1] * w,
        ];
        let len = norm(v);
        surface.weights[g] = len;
        surface.normals[g] = [v[0] / len, v[1] / len];
    }
    Ok(())
}

pub fn volume_rule<T: Real>(cell: &Rect<T>, phi: &LevelSet<T>, spec: &QuadSpec<T>) -> Result<QuadRule<T>> {
    Ok(cell_rules(cell, phi, spec)?.volume)
}

pub fn surface_rule<T: Real>(cell: &Rect<T>, phi: &LevelSet<T>, spec: &QuadSpec<T>) -> Result<SurfaceRule<T>> {
    Ok(cell_rules(cell, phi, spec)?.surface)
}

/// Rule on the fluid part of the segment from `start` of length `length` along `axis`.
pub fn face_rule<T: Real>(
    start: Vec2<T>,
    axis: usize,
    length: T,
    phi: &LevelSet<T>,
    spec: &QuadSpec<T>,
) -> Result<QuadRule<T>> {
    let at = |s: T| {
        let mut x = start;
        x[axis] += s;
        x
    };
    let f = |s: T| phi.value(at(s));
    let tol = spec.tol.max(T::epsilon() * T::lit(8.0)) * length;
    let mid = f(length * T::half());
    let half = length * T::half();
    let mut rule = QuadRule::empty();
    if mid.abs() > phi.lipschitz_bound(start, at(length)) * half {
        if mid < T::zero() {
            for (s, w) in line_gauss(T::zero(), length, spec.order) {
                rule.push(at(s), w);
            }
        }
        return Ok(rule);
    }
    let mut pts = vec![T::zero()];
    pts.extend(sampled_roots(&f, T::zero(), length, 4 * spec.order + 8, tol)?);
    pts.push(length);
    for seg in pts.windows(2) {
        if seg[1] - seg[0] <= tol {
            continue;
        }
        if f((seg[0] + seg[1]) * T::half()) < T::zero() {
            for (s, w) in line_gauss(seg[0], seg[1], spec.order) {
                rule.push(at(s), w);
            }
        }
    }
    Ok(rule)
}
