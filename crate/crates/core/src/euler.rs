//! Ideal-gas Euler kernels: state conversions, fluxes, eigenstructure, Riemann solvers,
//! shock jump relations and the supersonic-vortex exact solution.

use std::sync::atomic::{AtomicUsize, Ordering};

use crate::error::{Error, Result};
use crate::real::{Real, Vec2};

/// Conserved variables `(rho, rho v, rho E)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Conserved<T> {
    pub rho: T,
    pub mom: Vec2<T>,
    pub energy: T,
}

impl<T: Real> Conserved<T> {
    pub fn new(rho: T, mom: Vec2<T>, energy: T) -> Self {
        Conserved { rho, mom, energy }
    }

    pub fn from_array(u: [T; 4]) -> Self {
        Conserved {
            rho: u[0],
            mom: [u[1], u[2]],
            energy: u[3],
        }
    }

    pub fn to_array(self) -> [T; 4] {
        [self.rho, self.mom[0], self.mom[1], self.energy]
    }
}

/// Primitive variables `(rho, v, p)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Primitive<T> {
    pub rho: T,
    pub vel: Vec2<T>,
    pub p: T,
}

impl<T: Real> Primitive<T> {
    pub fn new(rho: T, vel: Vec2<T>, p: T) -> Self {
        Primitive { rho, vel, p }
    }

    pub fn from_array(q: [T; 4]) -> Self {
        Primitive {
            rho: q[0],
            vel: [q[1], q[2]],
            p: q[3],
        }
    }

    pub fn to_array(self) -> [T; 4] {
        [self.rho, self.vel[0], self.vel[1], self.p]
    }

    pub fn is_physical(&self) -> bool {
        self.rho > T::zero() && self.p > T::zero() && self.rho.is_finite() && self.p.is_finite()
    }
}

/// Left/right eigenvectors (rows of `left`, columns of `right`) of the primitive-variable
/// quasi-linear matrix in direction `k`, ordered `v_k - a, v_k, v_k, v_k + a`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Eigen<T> {
    pub left: [[T; 4]; 4],
    pub right: [[T; 4]; 4],
    pub values: [T; 4],
}

static FALLBACKS: AtomicUsize = AtomicUsize::new(0);

/// Number of times the two-shock iteration failed and the HLL flux was used instead.
pub fn riemann_fallback_count() -> usize {
    FALLBACKS.load(Ordering::Relaxed)
}

/// Ideal gas with constant ratio of specific heats.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Gas<T> {
    pub gamma: T,
}

impl<T: Real> Default for Gas<T> {
    fn default() -> Self {
        Gas { gamma: T::lit(1.4) }
    }
}

fn to_f64<T: Real>(x: T) -> f64 {
    x.to_f64().unwrap_or(f64::NAN)
}

pub fn matvec<T: Real>(m: &[[T; 4]; 4], x: &[T; 4]) -> [T; 4] {
    let mut y = [T::zero(); 4];
    for i in 0..4 {
        for j in 0..4 {
            y[i] += m[i][j] * x[j];
        }
    }
    y
}

impl<T: Real> Gas<T> {
    pub fn new(gamma: T) -> Result<Self> {
        if gamma > T::one() && gamma.is_finite() {
            Ok(Gas { gamma })
        } else {
            Err(Error::Parameter(format!("gamma must exceed 1, got {gamma}")))
        }
    }

    pub fn pressure(&self, u: &[T; 4]) -> T {
        let ke = T::half() * (u[1] * u[1] + u[2] * u[2]) / u[0];
        (self.gamma - T::one()) * (u[3] - ke)
    }

    pub fn to_primitive(&self, u: &Conserved<T>) -> Result<Primitive<T>> {
        let q = self.primitive_unchecked(&u.to_array());
        if q.is_physical() {
            Ok(q)
        } else {
            Err(Error::NonPhysical {
                rho: to_f64(q.rho),
                pressure: to_f64(q.p),
            })
        }
    }

    /// Conversion without positivity checks.
    pub fn primitive_unchecked(&self, u: &[T; 4]) -> Primitive<T> {
        Primitive {
            rho: u[0],
            vel: [u[1] / u[0], u[2] / u[0]],
            p: self.pressure(u),
        }
    }

    pub fn to_conserved(&self, q: &Primitive<T>) -> Conserved<T> {
        let ke = T::half() * q.rho * (q.vel[0] * q.vel[0] + q.vel[1] * q.vel[1]);
        Conserved {
            rho: q.rho,
            mom: [q.rho * q.vel[0], q.rho * q.vel[1]],
            energy: q.p / (self.gamma - T::one()) + ke,
        }
    }

    pub fn sound_speed(&self, q: &Primitive<T>) -> T {
        (self.gamma * q.p / q.rho).sqrt()
    }

    /// Flux in direction `k` of the conserved state `u`.
    pub fn flux(&self, u: &[T; 4], k: usize) -> [T; 4] {
        let q = self.primitive_unchecked(u);
        self.flux_primitive(&q, k)
    }

    pub fn flux_primitive(&self, q: &Primitive<T>, k: usize) -> [T; 4] {
        let vk = q.vel[k];
        let e = q.p / (self.gamma - T::one())
            + T::half() * q.rho * (q.vel[0] * q.vel[0] + q.vel[1] * q.vel[1]);
        let mut f = [
            q.rho * vk,
            q.rho * q.vel[0] * vk,
            q.rho * q.vel[1] * vk,
            (e + q.p) * vk,
        ];
        f[1 + k] += q.p;
        f
    }

    /// Flux through a face with unit normal `n`.
    pub fn normal_flux(&self, q: &Primitive<T>, n: Vec2<T>) -> [T; 4] {
        let f0 = self.flux_primitive(q, 0);
        let f1 = self.flux_primitive(q, 1);
        [
            f0[0] * n[0] + f1[0] * n[1],
            f0[1] * n[0] + f1[1] * n[1],
            f0[2] * n[0] + f1[2] * n[1],
            f0[3] * n[0] + f1[3] * n[1],
        ]
    }

    /// `dU/dQ` at `q`.
    pub fn dudq(&self, q: &Primitive<T>) -> [[T; 4]; 4] {
        let z = T::zero();
        let (u, v) = (q.vel[0], q.vel[1]);
        [
            [T::one(), z, z, z],
            [u, q.rho, z, z],
            [v, z, q.rho, z],
            [
                T::half() * (u * u + v * v),
                q.rho * u,
                q.rho * v,
                T::one() / (self.gamma - T::one()),
            ],
        ]
    }

    pub fn eigen(&self, q: &Primitive<T>, k: usize) -> Result<Eigen<T>> {
        if !q.is_physical() {
            return Err(Error::NonPhysical {
                rho: to_f64(q.rho),
                pressure: to_f64(q.p),
            });
        }
        let z = T::zero();
        let one = T::one();
        let a = self.sound_speed(q);
        let rho = q.rho;
        let h = T::half();
        // Columns of the primitive vector (rho, v_k, v_t, p) in direction k.
        let (n, t) = if k == 0 { (1, 2) } else { (2, 1) };
        let mut left = [[z; 4]; 4];
        let mut right = [[z; 4]; 4];
        left[0][n] = -rho * h / a;
        left[0][3] = h / (a * a);
        left[1][0] = one;
        left[1][3] = -one / (a * a);
        left[2][t] = one;
        left[3][n] = rho * h / a;
        left[3][3] = h / (a * a);

        right[0][0] = one;
        right[n][0] = -a / rho;
        right[3][0] = a * a;
        right[0][1] = one;
        right[t][2] = one;
        right[0][3] = one;
        right[n][3] = a / rho;
        right[3][3] = a * a;
        let vk = q.vel[k];
        Ok(Eigen {
            left,
            right,
            values: [vk - a, vk, vk, vk + a],
        })
    }

    /// Star pressure and velocity of the two-shock approximation for 1D states
    /// `(rho, u, p)`, or `None` if the iteration fails.
    pub fn two_shock_star(&self, l: [T; 3], r: [T; 3]) -> Option<(T, T)> {
        let g = self.gamma;
        let alpha = (g + T::one()) / (T::two() * g);
        let cl = (g * l[2] * l[0]).sqrt();
        let cr = (g * r[2] * r[0]).sqrt();
        let al = cl / l[0];
        let ar = cr / r[0];
        let floor = T::lit(1e-10) * l[2].min(r[2]);
        // Linearised (PVRS) initial guess.
        let rho_bar = T::half() * (l[0] + r[0]);
        let a_bar = T::half() * (al + ar);
        let mut p = (T::half() * (l[2] + r[2]) - T::half() * (r[1] - l[1]) * rho_bar * a_bar).max(floor);
        let wave = |p: T, c: T, pk: T| -> (T, T) {
            let w2 = c * c * (T::one() + alpha * (p / pk - T::one()));
            let w = w2.max(T::zero()).sqrt();
            let dw = c * c * alpha / (T::two() * pk * w);
            let f = (p - pk) / w;
            let df = (w - (p - pk) * dw) / (w * w);
            (f, df)
        };
        for _ in 0..50 {
            let (fl, dfl) = wave(p, cl, l[2]);
            let (fr, dfr) = wave(p, cr, r[2]);
            let f = l[1] - r[1] - fl - fr;
            let df = -dfl - dfr;
            if !f.is_finite() || !df.is_finite() || df == T::zero() {
                return None;
            }
            let mut next = p - f / df;
            if next <= T::zero() {
                next = (T::half() * p).max(floor);
            }
            let done = (next - p).abs() <= T::lit(1e-10) * next;
            p = next;
            if done {
                let (fl, _) = wave(p, cl, l[2]);
                let (fr, _) = wave(p, cr, r[2]);
                let u = T::half() * ((l[1] - fl) + (r[1] + fr));
                return Some((p, u));
            }
        }
        None
    }

    /// Numerical flux through a face with unit normal `n` from the two-shock
    /// approximate Riemann solver (HLL if the iteration fails).
    pub fn riemann_two_shock(&self, ql: &Primitive<T>, qr: &Primitive<T>, n: Vec2<T>) -> [T; 4] {
        let tn = [-n[1], n[0]];
        let rot = |q: &Primitive<T>| {
            [
                q.rho,
                q.vel[0] * n[0] + q.vel[1] * n[1],
                q.vel[0] * tn[0] + q.vel[1] * tn[1],
                q.p,
            ]
        };
        let l = rot(ql);
        let r = rot(qr);
        let f = match self.two_shock_star([l[0], l[1], l[3]], [r[0], r[1], r[3]]) {
            Some((ps, us)) => {
                let s = self.sample_star(&l, &r, ps, us);
                self.flux_primitive(&Primitive::from_array(s), 0)
            }
            None => {
                FALLBACKS.fetch_add(1, Ordering::Relaxed);
                self.hll(&l, &r)
            }
        };
        [
            f[0],
            f[1] * n[0] + f[2] * tn[0],
            f[1] * n[1] + f[2] * tn[1],
            f[3],
        ]
    }

    /// Interface state (`x/t = 0`) in the normal frame `(rho, u_n, u_t, p)`.
    fn sample_star(&self, l: &[T; 4], r: &[T; 4], ps: T, us: T) -> [T; 4] {
        let g = self.gamma;
        let gm = g - T::one();
        let gp = g + T::one();
        let alpha = gp / (T::two() * g);
        let left = us >= T::zero();
        // Mirror the right problem onto the left one.
        let (k, sgn) = if left { (l, T::one()) } else { (r, -T::one()) };
        let uk = sgn * k[1];
        let u_star = sgn * us;
        let (rho, p) = (k[0], k[3]);
        let a = (g * p / rho).sqrt();
        let state = if ps >= p {
            let w2 = g * p * rho * (T::one() + alpha * (ps / p - T::one()));
            let shock = uk - w2.sqrt() / rho;
            if shock >= T::zero() {
                [rho, uk, p]
            } else {
                let rs = T::one() / (T::one() / rho - (ps - p) / w2);
                [rs, u_star, ps]
            }
        } else {
            let rs = rho * (ps / p).powf(T::one() / g);
            let as_ = (g * ps / rs).sqrt();
            if uk - a >= T::zero() {
                [rho, uk, p]
            } else if u_star - as_ <= T::zero() {
                [rs, u_star, ps]
            } else {
                let uf = T::two() / gp * (a + T::half() * gm * uk);
                let rf = rho * (uf / a).powf(T::two() / gm);
                let pf = p * (rf / rho).powf(g);
                [rf, uf, pf]
            }
        };
        [state[0], sgn * state[1], k[2], state[2]]
    }

    fn hll(&self, l: &[T; 4], r: &[T; 4]) -> [T; 4] {
        let ql = Primitive::from_array(*l);
        let qr = Primitive::from_array(*r);
        let al = self.sound_speed(&ql);
        let ar = self.sound_speed(&qr);
        let sl = (l[1] - al).min(r[1] - ar);
        let sr = (l[1] + al).max(r[1] + ar);
        let fl = self.flux_primitive(&ql, 0);
        let fr = self.flux_primitive(&qr, 0);
        if sl >= T::zero() {
            return fl;
        }
        if sr <= T::zero() {
            return fr;
        }
        let ul = self.to_conserved(&ql).to_array();
        let ur = self.to_conserved(&qr).to_array();
        let mut f = [T::zero(); 4];
        for i in 0..4 {
            f[i] = (sr * fl[i] - sl * fr[i] + sl * sr * (ur[i] - ul[i])) / (sr - sl);
        }
        f
    }

    /// State behind a shock of Mach number `mach` running in `+x` into `ahead`.
    pub fn post_shock_state(&self, mach: T, ahead: &Primitive<T>) -> Result<Primitive<T>> {
        if !(mach >= T::one()) {
            return Err(Error::Parameter(format!("shock Mach number must be >= 1, got {mach}")));
        }
        let g = self.gamma;
        let m2 = mach * mach;
        let ratio = (g + T::one()) * m2 / ((g - T::one()) * m2 + T::two());
        let p = ahead.p * (T::two() * g * m2 - (g - T::one())) / (g + T::one());
        let a = self.sound_speed(ahead);
        let u = ahead.vel[0] + mach * a * (T::one() - T::one() / ratio);
        Ok(Primitive {
            rho: ahead.rho * ratio,
            vel: [u, ahead.vel[1]],
            p,
        })
    }
}

/// Parameters of the isentropic supersonic vortex.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VortexParams<T> {
    pub rho_i: T,
    pub a_i: T,
    pub mach_i: T,
    pub r_i: T,
}

impl<T: Real> Default for VortexParams<T> {
    fn default() -> Self {
        VortexParams {
            rho_i: T::one(),
            a_i: T::one(),
            mach_i: T::lit(2.25),
            r_i: T::one(),
        }
    }
}

/// Exact supersonic vortex at `x` (annulus centred at the origin).
pub fn vortex_exact<T: Real>(x: Vec2<T>, params: &VortexParams<T>, gas: &Gas<T>) -> Primitive<T> {
    let g = gas.gamma;
    let r2 = x[0] * x[0] + x[1] * x[1];
    let r = r2.sqrt();
    let m2 = params.mach_i * params.mach_i;
    let base = T::one() + T::half() * (g - T::one()) * m2 * (T::one() - params.r_i * params.r_i / r2);
    let rho = params.rho_i * base.powf(T::one() / (g - T::one()));
    let p_i = params.rho_i * params.a_i * params.a_i / g;
    let p = p_i * (rho / params.rho_i).powf(g);
    let vt = params.a_i * params.mach_i * params.r_i / r;
    Primitive {
        rho,
        vel: [-vt * x[1] / r, vt * x[0] / r],
        p,
    }
}

/// Exact solution of the 1D Riemann problem for states `(rho, u, p)`.
#[derive(Clone, Copy, Debug)]
pub struct ExactRiemann<T> {
    gas: Gas<T>,
    l: [T; 3],
    r: [T; 3],
    pub p_star: T,
    pub u_star: T,
}

impl<T: Real> ExactRiemann<T> {
    pub fn new(l: [T; 3], r: [T; 3], gas: Gas<T>) -> Result<Self> {
        let g = gas.gamma;
        for s in [&l, &r] {
            if !(s[0] > T::zero() && s[2] > T::zero()) {
                return Err(Error::NonPhysical {
                    rho: to_f64(s[0]),
                    pressure: to_f64(s[2]),
                });
            }
        }
        let al = (g * l[2] / l[0]).sqrt();
        let ar = (g * r[2] / r[0]).sqrt();
        let du = r[1] - l[1];
        if T::two() * (al + ar) / (g - T::one()) <= du {
            return Err(Error::Vacuum);
        }
        let f = |p: T, s: &[T; 3], a: T| -> (T, T) {
            if p > s[2] {
                let ak = T::two() / ((g + T::one()) * s[0]);
                let bk = (g - T::one()) / (g + T::one()) * s[2];
                let q = (ak / (p + bk)).sqrt();
                (
                    (p - s[2]) * q,
                    q * (T::one() - T::half() * (p - s[2]) / (bk + p)),
                )
            } else {
                let e = (g - T::one()) / (T::two() * g);
                (
                    T::two() * a / (g - T::one()) * ((p / s[2]).powf(e) - T::one()),
                    T::one() / (s[0] * a) * (p / s[2]).powf(-(g + T::one()) / (T::two() * g)),
                )
            }
        };
        let tiny = T::lit(1e-14) * l[2].min(r[2]);
        // Two-rarefaction guess: exact when both waves are rarefactions.
        let e = (g - T::one()) / (T::two() * g);
        let two_rare = ((al + ar - T::half() * (g - T::one()) * du)
            / (al / l[2].powf(e) + ar / r[2].powf(e)))
        .powf(T::one() / e);
        let mut p = two_rare.max(tiny);
        let mut converged = false;
        for _ in 0..200 {
            let (fl, dl) = f(p, &l, al);
            let (fr, dr) = f(p, &r, ar);
            let mut next = p - (fl + fr + du) / (dl + dr);
            if next <= T::zero() {
                next = (T::lit(0.1) * p).max(tiny);
            }
            let change = T::two() * (next - p).abs() / (next + p);
            p = next;
            if change <= T::lit(1e-12) {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::Vacuum);
        }
        let (fl, _) = f(p, &l, al);
        let (fr, _) = f(p, &r, ar);
        let u = T::half() * (l[1] + r[1]) + T::half() * (fr - fl);
        Ok(ExactRiemann {
            gas,
            l,
            r,
            p_star: p,
            u_star: u,
        })
    }

    /// Density left and right of the contact.
    pub fn star_densities(&self) -> (T, T) {
        (self.star_density(&self.l), self.star_density(&self.r))
    }

    fn star_density(&self, s: &[T; 3]) -> T {
        let g = self.gamma();
        let ps = self.p_star;
        if ps > s[2] {
            let k = (g - T::one()) / (g + T::one());
            s[0] * (ps / s[2] + k) / (k * ps / s[2] + T::one())
        } else {
            s[0] * (ps / s[2]).powf(T::one() / g)
        }
    }

    fn gamma(&self) -> T {
        self.gas.gamma
    }

    /// Speed of the left (`false`) or right (`true`) shock, if that wave is a shock.
    pub fn shock_speed(&self, right: bool) -> Option<T> {
        let g = self.gamma();
        let (s, sgn) = if right { (&self.r, T::one()) } else { (&self.l, -T::one()) };
        if self.p_star <= s[2] {
            return None;
        }
        let a = (g * s[2] / s[0]).sqrt();
        let m = ((g + T::one()) / (T::two() * g) * self.p_star / s[2] + (g - T::one()) / (T::two() * g)).sqrt();
        Some(s[1] + sgn * a * m)
    }

    /// Solution `(rho, u, p)` at `xi = x / t`.
    pub fn sample(&self, xi: T) -> [T; 3] {
        let g = self.gamma();
        let gm = g - T::one();
        let gp = g + T::one();
        let left = xi <= self.u_star;
        let (s, sgn) = if left { (&self.l, T::one()) } else { (&self.r, -T::one()) };
        // Mirror the right side onto the left problem.
        let x = sgn * xi;
        let u = sgn * s[1];
        let us = sgn * self.u_star;
        let (rho, p) = (s[0], s[2]);
        let a = (g * p / rho).sqrt();
        let ps = self.p_star;
        let rs = self.star_density(s);
        let out = if ps > p {
            let m = (gp / (T::two() * g) * ps / p + gm / (T::two() * g)).sqrt();
            if x <= u - a * m {
                [rho, u, p]
            } else {
                [rs, us, ps]
            }
        } else {
            let as_ = a * (ps / p).powf(gm / (T::two() * g));
            if x <= u - a {
                [rho, u, p]
            } else if x >= us - as_ {
                [rs, us, ps]
            } else {
                let c = T::two() / gp + gm / (gp * a) * (u - x);
                let rf = rho * c.powf(T::two() / gm);
                let uf = T::two() / gp * (a + T::half() * gm * u + x);
                let pf = p * c.powf(T::two() * g / gm);
                [rf, uf, pf]
            }
        };
        [out[0], sgn * out[1], out[2]]
    }
}

/// Exact Riemann solution for 2D primitive states separated by a line normal to `x`;
/// the tangential velocity is carried by the contact.
pub fn riemann_exact<T: Real>(ql: &Primitive<T>, qr: &Primitive<T>, gas: Gas<T>, xi: T) -> Result<Primitive<T>> {
    let solver = ExactRiemann::new([ql.rho, ql.vel[0], ql.p], [qr.rho, qr.vel[0], qr.p], gas)?;
    let s = solver.sample(xi);
    let vt = if xi <= solver.u_star { ql.vel[1] } else { qr.vel[1] };
    Ok(Primitive {
        rho: s[0],
        vel: [s[1], vt],
        p: s[2],
    })
}
