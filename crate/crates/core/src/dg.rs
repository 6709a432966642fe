//! Semidiscrete residuals of the dG levels.
//!
//! The finite-volume level is handled by the same assembly with the piecewise-constant
//! basis `B = 1` and mass `m^e`; only its trace (the limited linear reconstruction) and
//! the absence of a volume term differ.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::moments;
use crate::error::{Error, Result};
use crate::{Basis, Conserved, Gas, MassMatrix, Primitive};
use crate::fv::Gradients;
use crate::mesh::{FaceKind, Mesh, Side};

/// Number of conserved unknowns in 2D.
pub const NU: usize = 4;

/// Written `"dg<p>"` or `"fv"` in configuration files.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Scheme {
    Dg(usize),
    Fv,
}

impl std::str::FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Scheme> {
        let t = s.trim().to_ascii_lowercase();
        if t == "fv" {
            return Ok(Scheme::Fv);
        }
        t.strip_prefix("dg")
            .and_then(|p| p.parse().ok())
            .map(Scheme::Dg)
            .ok_or_else(|| Error::Config(format!("unknown scheme '{s}' (expected dg<p> or fv)")))
    }
}

impl TryFrom<String> for Scheme {
    type Error = Error;

    fn try_from(s: String) -> Result<Scheme> {
        s.parse()
    }
}

impl From<Scheme> for String {
    fn from(s: Scheme) -> String {
        s.name()
    }
}

impl Scheme {
    /// Polynomial order of the stored representation (FV stores averages).
    pub fn order(self) -> usize {
        match self {
            Scheme::Dg(p) => p,
            Scheme::Fv => 0,
        }
    }

    /// Formal spatial order of accuracy.
    pub fn accuracy(self) -> usize {
        match self {
            Scheme::Dg(p) => p + 1,
            Scheme::Fv => 2,
        }
    }

    pub fn modes(self) -> usize {
        (self.order() + 1) * (self.order() + 1)
    }

    /// Unknowns per element.
    pub fn block(self) -> usize {
        self.modes() * NU
    }

    /// Courant coefficient `C` of the level.
    pub fn courant(self) -> f64 {
        match self {
            Scheme::Dg(p) => 1.0 / (2 * p + 1) as f64,
            Scheme::Fv => 0.3,
        }
    }

    /// Gauss points per direction for volume and face rules.
    pub fn quad_order(self) -> usize {
        match self {
            Scheme::Dg(p) => p + 2,
            Scheme::Fv => 2,
        }
    }

    /// Scheme id written to snapshots: the dG order, or -1 for FV.
    pub fn id(self) -> i32 {
        match self {
            Scheme::Dg(p) => p as i32,
            Scheme::Fv => -1,
        }
    }

    pub fn name(self) -> String {
        match self {
            Scheme::Dg(p) => format!("dg{p}"),
            Scheme::Fv => "fv".into(),
        }
    }
}

/// Values and gradients of the basis at the reference rule of an uncut element; shared
/// by all uncut elements of a level because the orthonormal scaling only depends on `h`.
#[derive(Clone, Debug)]
struct UncutTable {
    weights: Vec<f64>,
    values: Vec<f64>,
    grads: Vec<[f64; 2]>,
}

/// Per-element bases, mass matrices and averaging weights of one level.
#[derive(Clone, Debug)]
pub struct Space {
    pub scheme: Scheme,
    pub bases: Vec<Basis>,
    pub mass: Vec<MassMatrix>,
    /// `int b_m dV / m^e`: the element average is `sum_m avg[m] X_m`.
    pub avg: Vec<Vec<f64>>,
    table: Option<UncutTable>,
}

impl Space {
    pub fn new(mesh: &Mesh, scheme: Scheme) -> Result<Space> {
        let n = mesh.elements.len();
        let built: Vec<(Basis, MassMatrix, Vec<f64>)> = (0..n)
            .into_par_iter()
            .map(|e| {
                let el = &mesh.elements[e];
                let rule = mesh.volume_rule(e);
                let (basis, mass) = match scheme {
                    Scheme::Fv => (
                        Basis::piecewise_constant(&el.host_box),
                        MassMatrix::from_matrix(1, vec![el.volume]),
                    ),
                    Scheme::Dg(p) => {
                        let basis = Basis::new(p, &el.host_box);
                        let mass = if el.is_cut() {
                            MassMatrix::assemble(&rule, &basis)
                        } else {
                            Ok(MassMatrix::identity(basis.len()))
                        };
                        (basis, mass)
                    }
                };
                let mass = mass.map_err(|_| Error::DegenerateElement { element: e })?;
                let mut avg = moments(&rule, &basis, |_| [1.0]);
                for a in avg.iter_mut() {
                    *a /= el.volume;
                }
                Ok((basis, mass, avg))
            })
            .collect::<Result<_>>()?;
        let table = match scheme {
            Scheme::Dg(p) => {
                let h = mesh.grid.h;
                let basis = Basis::new(p, &crate::Rect::new([0.0, 0.0], h));
                let r = &mesh.reference;
                let offsets: Vec<[f64; 2]> = r.points.iter().map(|x| [x[0] * h[0], x[1] * h[1]]).collect();
                let weights = r.weights.iter().map(|w| w * h[0] * h[1]).collect();
                let mut values = Vec::new();
                let mut grads = Vec::new();
                for x in &offsets {
                    values.extend(basis.eval(*x));
                    grads.extend(basis.eval_grad(*x));
                }
                Some(UncutTable {
                    weights,
                    values,
                    grads,
                })
            }
            Scheme::Fv => None,
        };
        let mut bases = Vec::with_capacity(n);
        let mut mass = Vec::with_capacity(n);
        let mut avg = Vec::with_capacity(n);
        for (b, m, a) in built {
            bases.push(b);
            mass.push(m);
            avg.push(a);
        }
        Ok(Space {
            scheme,
            bases,
            mass,
            avg,
            table,
        })
    }

    pub fn block(&self) -> usize {
        self.scheme.block()
    }

    pub fn len(&self) -> usize {
        self.bases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bases.is_empty()
    }

    /// Element average of the conserved variables.
    pub fn average(&self, state: &[f64], e: usize) -> [f64; NU] {
        let nb = self.block();
        let c = &state[e * nb..(e + 1) * nb];
        let mut u = [0.0; NU];
        for (m, a) in self.avg[e].iter().enumerate() {
            for k in 0..NU {
                u[k] += a * c[m * NU + k];
            }
        }
        u
    }

    /// Coefficients of the constant state `u` on element `e`.
    pub fn constant(&self, e: usize, u: [f64; NU]) -> Vec<f64> {
        let nb = self.block();
        let mut c = vec![0.0; nb];
        // The constant function is the first mode up to scaling.
        let b0 = self.bases[e].eval(self.bases[e].lo)[0];
        for k in 0..NU {
            c[k] = u[k] / b0;
        }
        c
    }

    /// Galerkin projection of a primitive field onto the level.
    pub fn project(&self, mesh: &Mesh, gas: &Gas, f: &(dyn Fn([f64; 2]) -> Primitive + Sync)) -> Vec<f64> {
        let blocks: Vec<Vec<f64>> = (0..self.len())
            .into_par_iter()
            .map(|e| {
                let rule = mesh.volume_rule(e);
                crate::basis::project(&rule, &self.bases[e], &self.mass[e], |x| gas.to_conserved(&f(x)).to_array())
            })
            .collect();
        blocks.concat()
    }
}

/// Closure of a side of the background rectangle.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SideBc {
    Wall,
    Outflow,
    /// Ghost state from the scenario's boundary-state function.
    Dirichlet,
    Periodic,
}

pub type StateFn = Arc<dyn Fn([f64; 2], f64) -> Primitive + Send + Sync>;

/// Boundary closures of a scenario. Embedded boundaries are always walls.
#[derive(Clone)]
pub struct Boundary {
    /// Indexed by [`Side::index`].
    pub sides: [SideBc; 4],
    pub state: Option<StateFn>,
}

impl std::fmt::Debug for Boundary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Boundary").field("sides", &self.sides).finish()
    }
}

/// Mirror state for a slip wall with outward normal `n`.
pub fn wall_ghost(q: &Primitive, n: [f64; 2]) -> Primitive {
    let vn = q.vel[0] * n[0] + q.vel[1] * n[1];
    Primitive::new(q.rho, [q.vel[0] - 2.0 * vn * n[0], q.vel[1] - 2.0 * vn * n[1]], q.p)
}

impl Boundary {
    pub fn walls() -> Boundary {
        Boundary {
            sides: [SideBc::Wall; 4],
            state: None,
        }
    }

    pub fn periodic() -> Boundary {
        Boundary {
            sides: [SideBc::Periodic; 4],
            state: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.sides.contains(&SideBc::Dirichlet) && self.state.is_none() {
            return Err(Error::Config("Dirichlet side without a boundary state".into()));
        }
        for (a, b) in [(0, 1), (2, 3)] {
            if (self.sides[a] == SideBc::Periodic) != (self.sides[b] == SideBc::Periodic) {
                return Err(Error::Config("periodic sides must come in pairs".into()));
            }
        }
        Ok(())
    }

    pub fn periodic_axes(&self) -> [bool; 2] {
        [self.sides[0] == SideBc::Periodic, self.sides[2] == SideBc::Periodic]
    }

    pub fn ghost(&self, side: Side, x: [f64; 2], t: f64, inner: &Primitive, n: [f64; 2]) -> Primitive {
        match self.sides[side.index()] {
            SideBc::Wall | SideBc::Periodic => wall_ghost(inner, n),
            SideBc::Outflow => *inner,
            SideBc::Dirichlet => (self.state.as_ref().expect("validated boundary"))(x, t),
        }
    }
}

/// Point evaluation of a level's solution.
#[derive(Clone, Copy)]
pub enum Trace<'a> {
    Dg { space: &'a Space, state: &'a [f64] },
    Fv {
        mesh: &'a Mesh,
        state: &'a [f64],
        grads: &'a Gradients,
    },
}

impl Trace<'_> {
    pub fn eval(&self, e: usize, x: [f64; 2]) -> [f64; NU] {
        match *self {
            Trace::Dg { space, state } => {
                let nb = space.block();
                space.bases[e].evaluate::<NU>(&state[e * nb..(e + 1) * nb], x)
            }
            Trace::Fv { mesh, state, grads } => {
                let c = mesh.elements[e].centroid;
                let s = &grads.slopes[e];
                let mut u = [0.0; NU];
                for k in 0..NU {
                    u[k] = state[e * NU + k] + s[k][0] * (x[0] - c[0]) + s[k][1] * (x[1] - c[1]);
                }
                u
            }
        }
    }
}

/// Everything a level residual needs besides its own trace.
pub struct Context<'a> {
    pub level: usize,
    pub gas: &'a Gas,
    pub boundary: &'a Boundary,
    pub t: f64,
    /// Elements covered by the next finer level: frozen, and their faces are supplied by
    /// the finer level.
    pub covered: Option<&'a [bool]>,
    /// Next coarser level for the coarse-fine faces, with the refinement ratio.
    pub coarse: Option<(&'a Mesh, Trace<'a>, usize)>,
}

/// Flux leaving the finer level through a coarse-fine face quadrature point; the coarser
/// level receives it with the opposite sign.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InterfaceFlux {
    pub coarse_element: usize,
    pub x: [f64; 2],
    pub weight: f64,
    pub flux: [f64; NU],
}

#[derive(Clone, Debug, Default)]
pub struct Residual {
    /// Per-element right-hand sides before the mass solve.
    pub rhs: Vec<f64>,
    pub to_coarse: Vec<InterfaceFlux>,
}

fn physical(gas: &Gas, u: [f64; NU], level: usize, element: usize) -> Result<Primitive> {
    gas.to_primitive(&Conserved::from_array(u)).map_err(|_| {
        let q = gas.primitive_unchecked(&u);
        Error::Positivity {
            level,
            element,
            rho: q.rho,
            pressure: q.p,
        }
    })
}

/// One face's contributions: `(element, block)` pairs and interface fluxes.
type FaceOut = (Vec<(usize, Vec<f64>)>, Vec<InterfaceFlux>);

fn accumulate(basis: &Basis, x: [f64; 2], scale: f64, flux: &[f64; NU], out: &mut [f64], b: &mut [f64]) {
    basis.eval_into(x, b);
    for (m, bm) in b.iter().enumerate() {
        let s = scale * bm;
        for k in 0..NU {
            out[m * NU + k] += s * flux[k];
        }
    }
}

fn is_covered(ctx: &Context, e: usize) -> bool {
    ctx.covered.map(|c| c[e]).unwrap_or(false)
}

/// Periodic image of `x` inside the box of cell `c` of `mesh`.
fn periodic_image(mesh: &Mesh, c: crate::CellIndex, x: [f64; 2]) -> [f64; 2] {
    let b = mesh.grid.cell_box(c);
    let mut y = x;
    for k in 0..2 {
        if !mesh.grid.periodic[k] {
            continue;
        }
        let len = mesh.grid.h[k] * mesh.grid.n[k] as f64;
        let mid = 0.5 * (b.lo[k] + b.hi[k]);
        y[k] -= ((x[k] - mid) / len).round() * len;
    }
    y
}

/// Residual `A^e` of every element of a level (volume term for dG plus all face and
/// embedded-boundary terms).
pub fn residual(mesh: &Mesh, space: &Space, trace: &Trace, ctx: &Context) -> Result<Residual> {
    let nb = space.block();
    let ne = mesh.elements.len();
    let gas = ctx.gas;
    let level = ctx.level;

    // Volume and embedded-boundary terms, element by element.
    let blocks: Vec<Vec<f64>> = (0..ne)
        .into_par_iter()
        .map(|e| {
            let mut r = vec![0.0; nb];
            if is_covered(ctx, e) {
                return Ok(r);
            }
            let el = &mesh.elements[e];
            let basis = &space.bases[e];
            let mut b = vec![0.0; basis.len()];
            if let Scheme::Dg(_) = space.scheme {
                let c = match trace {
                    Trace::Dg { state, .. } => &state[e * nb..(e + 1) * nb],
                    Trace::Fv { .. } => unreachable!("dG space with FV trace"),
                };
                let add_point = |g: &[[f64; 2]], w: f64, vals: &[f64], r: &mut [f64]| -> Result<()> {
                    let mut u = [0.0; NU];
                    for (m, v) in vals.iter().enumerate() {
                        for k in 0..NU {
                            u[k] += v * c[m * NU + k];
                        }
                    }
                    let q = physical(gas, u, level, e)?;
                    let f0 = gas.flux_primitive(&q, 0);
                    let f1 = gas.flux_primitive(&q, 1);
                    for (m, gm) in g.iter().enumerate() {
                        for k in 0..NU {
                            r[m * NU + k] += w * (gm[0] * f0[k] + gm[1] * f1[k]);
                        }
                    }
                    Ok(())
                };
                match (&el.geometry, &space.table) {
                    (None, Some(t)) => {
                        let n = basis.len();
                        for g in 0..t.weights.len() {
                            add_point(
                                &t.grads[g * n..(g + 1) * n],
                                t.weights[g],
                                &t.values[g * n..(g + 1) * n],
                                &mut r,
                            )?;
                        }
                    }
                    _ => {
                        let rule = mesh.volume_rule(e);
                        let mut gr = vec![[0.0; 2]; basis.len()];
                        for (x, &w) in rule.points.iter().zip(&rule.weights) {
                            basis.eval_into(*x, &mut b);
                            basis.grad_into(*x, &mut gr);
                            add_point(&gr, w, &b, &mut r)?;
                        }
                    }
                }
            }
            if let Some(s) = el.surface_rule() {
                for ((x, &w), n) in s.points.iter().zip(&s.weights).zip(&s.normals) {
                    let q = physical(gas, trace.eval(e, *x), level, e)?;
                    let f = gas.riemann_two_shock(&q, &wall_ghost(&q, *n), *n);
                    accumulate(basis, *x, -w, &f, &mut r, &mut b);
                }
            }
            Ok(r)
        })
        .collect::<Result<_>>()?;

    let faces: Vec<FaceOut> = mesh
        .faces
        .par_iter()
        .map(|face| face_terms(space, trace, ctx, face))
        .collect::<Result<_>>()?;

    let mut rhs = blocks.concat();
    let mut to_coarse = Vec::new();
    for (contribs, fluxes) in faces {
        for (e, block) in contribs {
            for (a, v) in rhs[e * nb..(e + 1) * nb].iter_mut().zip(block) {
                *a += v;
            }
        }
        to_coarse.extend(fluxes);
    }
    Ok(Residual { rhs, to_coarse })
}

fn face_terms(space: &Space, trace: &Trace, ctx: &Context, face: &crate::mesh::Face) -> Result<FaceOut> {
    let nb = space.block();
    let gas = ctx.gas;
    let level = ctx.level;
    let n = face.normal;
    let rule = &face.rule;
    let mut out = Vec::new();
    let mut fluxes = Vec::new();
    match face.kind {
        FaceKind::Internal { left, right, shift } => {
            if is_covered(ctx, left) || is_covered(ctx, right) {
                return Ok((out, fluxes));
            }
            let (bl, br) = (&space.bases[left], &space.bases[right]);
            let mut rl = vec![0.0; nb];
            let mut rr = vec![0.0; nb];
            let mut b = vec![0.0; bl.len()];
            for (x, &w) in rule.points.iter().zip(&rule.weights) {
                let xr = [x[0] - shift[0], x[1] - shift[1]];
                let ql = physical(gas, trace.eval(left, *x), level, left)?;
                let qr = physical(gas, trace.eval(right, xr), level, right)?;
                let f = gas.riemann_two_shock(&ql, &qr, n);
                accumulate(bl, *x, -w, &f, &mut rl, &mut b);
                accumulate(br, xr, w, &f, &mut rr, &mut b);
            }
            out.push((left, rl));
            out.push((right, rr));
        }
        FaceKind::Domain { elem, side } => {
            if is_covered(ctx, elem) {
                return Ok((out, fluxes));
            }
            let basis = &space.bases[elem];
            let mut r = vec![0.0; nb];
            let mut b = vec![0.0; basis.len()];
            for (x, &w) in rule.points.iter().zip(&rule.weights) {
                let q = physical(gas, trace.eval(elem, *x), level, elem)?;
                let g = ctx.boundary.ghost(side, *x, ctx.t, &q, n);
                let f = gas.riemann_two_shock(&q, &g, n);
                accumulate(basis, *x, -w, &f, &mut r, &mut b);
            }
            out.push((elem, r));
        }
        FaceKind::Wall { elem } => {
            if is_covered(ctx, elem) {
                return Ok((out, fluxes));
            }
            let basis = &space.bases[elem];
            let mut r = vec![0.0; nb];
            let mut b = vec![0.0; basis.len()];
            for (x, &w) in rule.points.iter().zip(&rule.weights) {
                let q = physical(gas, trace.eval(elem, *x), level, elem)?;
                let f = gas.riemann_two_shock(&q, &wall_ghost(&q, n), n);
                accumulate(basis, *x, -w, &f, &mut r, &mut b);
            }
            out.push((elem, r));
        }
        FaceKind::CoarseFine { elem, outside } => {
            if is_covered(ctx, elem) {
                return Ok((out, fluxes));
            }
            let basis = &space.bases[elem];
            let mut r = vec![0.0; nb];
            let mut b = vec![0.0; basis.len()];
            let (cmesh, ctrace, ratio) = ctx.coarse.as_ref().ok_or_else(|| {
                Error::Transfer(format!("coarse-fine face on level {level} without a coarser level"))
            })?;
            let cc = [outside[0] / ratio, outside[1] / ratio];
            let ce = cmesh.element_of_cell(cc);
            for (x, &w) in rule.points.iter().zip(&rule.weights) {
                let q = physical(gas, trace.eval(elem, *x), level, elem)?;
                let f = match ce {
                    Some(ce) => {
                        let xc = periodic_image(cmesh, cc, *x);
                        let qc = physical(gas, ctrace.eval(ce, xc), level.saturating_sub(1), ce)?;
                        let f = gas.riemann_two_shock(&q, &qc, n);
                        fluxes.push(InterfaceFlux {
                            coarse_element: ce,
                            x: xc,
                            weight: w,
                            flux: f,
                        });
                        f
                    }
                    None => gas.riemann_two_shock(&q, &wall_ghost(&q, n), n),
                };
                accumulate(basis, *x, -w, &f, &mut r, &mut b);
            }
            out.push((elem, r));
        }
    }
    Ok((out, fluxes))
}

/// Adds the fluxes a finer level sent through coarse-fine faces to the coarse residual.
pub fn add_interface_fluxes(space: &Space, rhs: &mut [f64], fluxes: &[InterfaceFlux]) {
    let nb = space.block();
    let mut b = vec![0.0; space.scheme.modes()];
    for f in fluxes {
        let e = f.coarse_element;
        accumulate(&space.bases[e], f.x, f.weight, &f.flux, &mut rhs[e * nb..(e + 1) * nb], &mut b);
    }
}

/// `X' = M^-1 A` per element, in place.
pub fn apply_mass_inverse(space: &Space, rhs: &mut [f64]) {
    let nb = space.block();
    rhs.par_chunks_mut(nb).enumerate().for_each(|(e, r)| space.mass[e].solve(r, NU));
}

/// Time derivative of a single level without coarse or fine neighbours.
pub fn time_derivative(mesh: &Mesh, space: &Space, trace: &Trace, ctx: &Context) -> Result<Vec<f64>> {
    let mut r = residual(mesh, space, trace, ctx)?.rhs;
    apply_mass_inverse(space, &mut r);
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::BackgroundGrid;
    use crate::quadrature::QuadSpec;
    use crate::LevelSet;
    use approx::assert_relative_eq;

    fn ctx<'a>(gas: &'a Gas, boundary: &'a Boundary) -> Context<'a> {
        Context {
            level: 0,
            gas,
            boundary,
            t: 0.0,
            covered: None,
            coarse: None,
        }
    }

    #[test]
    fn scheme_constants() {
        assert_relative_eq!(Scheme::Dg(2).courant(), 0.2);
        assert_relative_eq!(Scheme::Fv.courant(), 0.3);
        assert_eq!(Scheme::Dg(3).block(), 64);
        assert_eq!(Scheme::Fv.block(), 4);
    }

    #[test]
    fn freestream_at_rest_in_closed_annulus() {
        let gas = Gas::default();
        let phi = LevelSet::annulus(1.0, 1.384).unwrap();
        let grid = BackgroundGrid::new([0.0, 0.0], [1.43, 1.43], [12, 12]).unwrap();
        let boundary = Boundary::walls();
        let q0 = Primitive::new(1.0, [0.0, 0.0], 1.0 / 1.4);
        let u0 = gas.to_conserved(&q0).to_array();
        for p in 0..=3 {
            let scheme = Scheme::Dg(p);
            let mesh = Mesh::build(&grid, &phi, 0.3, &QuadSpec::new(scheme.quad_order())).unwrap();
            let space = Space::new(&mesh, scheme).unwrap();
            let state = space.project(&mesh, &gas, &|_| q0);
            for e in 0..space.len() {
                let avg = space.average(&state, e);
                for k in 0..NU {
                    assert!((avg[k] - u0[k]).abs() < 1e-12);
                }
            }
            let trace = Trace::Dg { space: &space, state: &state };
            let r = residual(&mesh, &space, &trace, &ctx(&gas, &boundary)).unwrap();
            let pressure_scale = q0.p * mesh.grid.h[0];
            let worst = r.rhs.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            assert!(worst < 1e-8 * pressure_scale, "p = {p}: {worst}");
        }
    }

    #[test]
    fn mass_inverse_residual() {
        let phi = LevelSet::circle([0.5, 0.5], 0.23).unwrap();
        let grid = BackgroundGrid::new([0.0, 0.0], [1.0, 1.0], [8, 8]).unwrap();
        let mesh = Mesh::build(&grid, &phi, 0.3, &QuadSpec::new(5)).unwrap();
        let space = Space::new(&mesh, Scheme::Dg(2)).unwrap();
        let nb = space.block();
        let r: Vec<f64> = (0..space.len() * nb).map(|i| ((i * 7919) % 113) as f64 / 113.0 - 0.5).collect();
        let mut x = r.clone();
        apply_mass_inverse(&space, &mut x);
        for e in 0..space.len() {
            let back = space.mass[e].apply(&x[e * nb..(e + 1) * nb], NU);
            let scale = x[e * nb..(e + 1) * nb].iter().fold(1.0f64, |a, v| a.max(v.abs()));
            for (a, b) in back.iter().zip(&r[e * nb..(e + 1) * nb]) {
                assert!((a - b).abs() < 1e-12 * scale);
            }
            if !mesh.elements[e].is_cut() {
                assert_eq!(&x[e * nb..(e + 1) * nb], &r[e * nb..(e + 1) * nb]);
            }
        }
    }

    #[test]
    fn p0_matches_first_order_finite_volume() {
        let gas = Gas::default();
        let n = 10;
        let grid = BackgroundGrid::new([0.0, 0.0], [1.0, 1.0], [n, n])
            .unwrap()
            .with_periodic([true, true]);
        let mesh = Mesh::build(&grid, &LevelSet::uncut(), 0.3, &QuadSpec::new(2)).unwrap();
        let space = Space::new(&mesh, Scheme::Dg(0)).unwrap();
        let field = |x: [f64; 2]| {
            Primitive::new(
                1.0 + 0.3 * (6.0 * x[0]).sin(),
                [0.5 + 0.1 * (6.0 * x[1]).cos(), -0.2],
                1.0 + 0.2 * (6.0 * (x[0] + x[1])).sin(),
            )
        };
        let state = space.project(&mesh, &gas, &field);
        let boundary = Boundary::periodic();
        let trace = Trace::Dg { space: &space, state: &state };
        let d = time_derivative(&mesh, &space, &trace, &ctx(&gas, &boundary)).unwrap();
        // first-order FV oracle on the cell averages
        let h = 1.0 / n as f64;
        let avg: Vec<[f64; 4]> = (0..space.len()).map(|e| space.average(&state, e)).collect();
        let prim = |e: usize| gas.to_primitive(&Conserved::from_array(avg[e])).unwrap();
        let mut total_mass = 0.0;
        for e in 0..space.len() {
            let c = mesh.elements[e].host;
            let mut du = [0.0; 4];
            for (axis, sgn) in [(0, 1isize), (0, -1), (1, 1), (1, -1)] {
                let mut dir = [0isize; 2];
                dir[axis] = sgn;
                let (nbr, _) = grid.neighbor(c, dir).unwrap();
                let f = mesh.element_of_cell(nbr).unwrap();
                let mut nrm = [0.0; 2];
                nrm[axis] = sgn as f64;
                let flux = gas.riemann_two_shock(&prim(e), &prim(f), nrm);
                for k in 0..4 {
                    du[k] -= flux[k] * h / (h * h);
                }
            }
            let got = space.average(&d, e);
            for k in 0..4 {
                assert!((got[k] - du[k]).abs() < 1e-11 * du[k].abs().max(1.0), "{got:?} {du:?}");
            }
            total_mass += got[0] * h * h;
        }
        assert!(total_mass.abs() < 1e-13);
    }
}
