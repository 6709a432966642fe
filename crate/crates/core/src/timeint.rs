//! Explicit SSP Runge-Kutta stepping of the whole hierarchy with one global time step.

use crate::amr::Hierarchy;
use crate::dg::{add_interface_fluxes, apply_mass_inverse, residual, Boundary, Context, InterfaceFlux, Trace};
use crate::error::{Error, Result};
use crate::fv::{self, Gradients};
use crate::Conserved;

/// Shu-Osher form: stage `i` is `sum_j alpha_ij u_j + tau beta_ij L(u_j)` over earlier
/// stages `j` (stage 0 is the step start).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RkScheme {
    ForwardEuler,
    Ssp2,
    Ssp3,
    /// Five stages, fourth order (Spiteri-Ruuth).
    Ssp54,
}

type Row = &'static [(usize, f64, f64)];

const EULER: [Row; 1] = [&[(0, 1.0, 1.0)]];
const SSP2: [Row; 2] = [&[(0, 1.0, 1.0)], &[(0, 0.5, 0.0), (1, 0.5, 0.5)]];
const SSP3: [Row; 3] = [
    &[(0, 1.0, 1.0)],
    &[(0, 0.75, 0.0), (1, 0.25, 0.25)],
    &[(0, 1.0 / 3.0, 0.0), (2, 2.0 / 3.0, 2.0 / 3.0)],
];
const SSP54: [Row; 5] = [
    &[(0, 1.0, 0.391752226571890)],
    &[(0, 0.444370493651235, 0.0), (1, 0.555629506348765, 0.368410593050371)],
    &[(0, 0.620101851488403, 0.0), (2, 0.379898148511597, 0.251891774271694)],
    &[(0, 0.178079954393132, 0.0), (3, 0.821920045606868, 0.544974750228521)],
    &[
        (2, 0.517231671970585, 0.0),
        (3, 0.096059710526147, 0.063692468666290),
        (4, 0.386708617503269, 0.226007483236906),
    ],
];

impl RkScheme {
    /// Scheme matching a spatial order of accuracy.
    pub fn for_accuracy(order: usize) -> RkScheme {
        match order {
            0..=2 => RkScheme::Ssp2,
            3 => RkScheme::Ssp3,
            _ => RkScheme::Ssp54,
        }
    }

    pub fn rows(self) -> &'static [Row] {
        match self {
            RkScheme::ForwardEuler => &EULER,
            RkScheme::Ssp2 => &SSP2,
            RkScheme::Ssp3 => &SSP3,
            RkScheme::Ssp54 => &SSP54,
        }
    }

    pub fn stages(self) -> usize {
        self.rows().len()
    }

    pub fn order(self) -> usize {
        match self {
            RkScheme::ForwardEuler => 1,
            RkScheme::Ssp2 => 2,
            RkScheme::Ssp3 => 3,
            RkScheme::Ssp54 => 4,
        }
    }

    /// Stage times as fractions of the step.
    pub fn nodes(self) -> Vec<f64> {
        let mut c = vec![0.0];
        for row in self.rows() {
            c.push(row.iter().map(|&(j, a, b)| a * c[j] + b).sum());
        }
        c
    }
}

/// RK scheme for the highest spatial order among the configured levels.
pub fn select_rk(h: &Hierarchy) -> RkScheme {
    let order = h.config.levels.iter().map(|l| l.scheme.accuracy()).max().unwrap_or(1);
    RkScheme::for_accuracy(order)
}

/// `tau_l = sigma h_l C_l nu_l / lambda_l`, with `lambda_l` the largest `|v| + a` over the
/// element averages of the level.
pub fn level_dt(h: &Hierarchy, l: usize, sigma: f64) -> Result<f64> {
    let level = &h.levels[l];
    let mut lambda: f64 = 0.0;
    for e in 0..level.mesh.elements.len() {
        let u = level.space.average(&level.state, e);
        let q = h.gas.to_primitive(&Conserved::from_array(u)).map_err(|_| {
            let q = h.gas.primitive_unchecked(&u);
            Error::Positivity {
                level: l,
                element: e,
                rho: q.rho,
                pressure: q.p,
            }
        })?;
        let speed = q.vel[0].hypot(q.vel[1]) + h.gas.sound_speed(&q);
        lambda = lambda.max(speed);
    }
    let hmin = level.mesh.grid.h[0].min(level.mesh.grid.h[1]);
    Ok(sigma * hmin * level.scheme.courant() * level.nu_bar / lambda)
}

/// Global step: the smallest level step.
pub fn compute_dt(h: &Hierarchy, sigma: f64) -> Result<f64> {
    let mut tau = f64::INFINITY;
    for l in 0..h.levels.len() {
        tau = tau.min(level_dt(h, l, sigma)?);
    }
    Ok(tau)
}

/// Shortens `tau` so that the step ends exactly on `stop` when it would overshoot it.
pub fn clip_dt(t: f64, tau: f64, stop: f64) -> f64 {
    if t + tau >= stop {
        (stop - t).max(0.0)
    } else {
        tau
    }
}

/// Limiter diagnostics gathered at every stage.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct StageAudit {
    pub stages: usize,
    /// Largest Barth-Jespersen bound violation of any finite-volume reconstruction.
    pub max_bound_violation: f64,
}

/// `M^-1 A(X)` for every level at once: finer levels first so that their coarse-fine
/// fluxes reach the coarser residuals before the mass solve.
pub fn rhs(
    h: &Hierarchy,
    states: &[Vec<f64>],
    t: f64,
    boundary: &Boundary,
    mut audit: Option<&mut StageAudit>,
) -> Result<Vec<Vec<f64>>> {
    let n = h.levels.len();
    let mut grads: Vec<Option<Gradients>> = Vec::with_capacity(n);
    for (l, level) in h.levels.iter().enumerate() {
        let g = h.fv_gradients(l, &states[l])?;
        if let (Some(g), Some(st), Some(a)) = (&g, &level.stencil, audit.as_deref_mut()) {
            let v = fv::bound_violation(&level.mesh, st, &states[l], g);
            a.max_bound_violation = a.max_bound_violation.max(v);
        }
        grads.push(g);
    }
    if let Some(a) = audit {
        a.stages += 1;
    }
    let traces: Vec<Trace> = h
        .levels
        .iter()
        .enumerate()
        .map(|(l, level)| match &grads[l] {
            Some(g) => Trace::Fv {
                mesh: &level.mesh,
                state: &states[l],
                grads: g,
            },
            None => Trace::Dg {
                space: &level.space,
                state: &states[l],
            },
        })
        .collect();
    let mut out = vec![Vec::new(); n];
    let mut pending: Vec<InterfaceFlux> = Vec::new();
    for l in (0..n).rev() {
        let level = &h.levels[l];
        let ctx = Context {
            level: l,
            gas: &h.gas,
            boundary,
            t,
            covered: Some(&level.covered),
            coarse: (l > 0).then(|| (&*h.levels[l - 1].mesh, traces[l - 1], h.config.levels[l].ratio)),
        };
        let r = residual(&level.mesh, &level.space, &traces[l], &ctx)?;
        let mut d = r.rhs;
        add_interface_fluxes(&level.space, &mut d, &pending);
        pending = r.to_coarse;
        apply_mass_inverse(&level.space, &mut d);
        out[l] = d;
    }
    Ok(out)
}

/// Advances all levels by `tau` and restricts the result onto covered coarse elements.
/// On error the hierarchy is left untouched.
pub fn step(
    h: &mut Hierarchy,
    boundary: &Boundary,
    t: f64,
    tau: f64,
    rk: RkScheme,
    mut audit: Option<&mut StageAudit>,
) -> Result<()> {
    let nodes = rk.nodes();
    let mut stages: Vec<Vec<Vec<f64>>> = vec![h.levels.iter().map(|l| l.state.clone()).collect()];
    let mut derivs: Vec<Option<Vec<Vec<f64>>>> = Vec::new();
    for row in rk.rows() {
        let mut next: Vec<Vec<f64>> = stages[0].iter().map(|s| vec![0.0; s.len()]).collect();
        for &(j, alpha, beta) in row.iter() {
            if beta != 0.0 {
                if derivs.len() <= j {
                    derivs.resize(j + 1, None);
                }
                if derivs[j].is_none() {
                    derivs[j] = Some(rhs(h, &stages[j], t + nodes[j] * tau, boundary, audit.as_deref_mut())?);
                }
            }
            let d = derivs.get(j).and_then(|d| d.as_ref());
            for (l, out) in next.iter_mut().enumerate() {
                let u = &stages[j][l];
                match d {
                    Some(d) if beta != 0.0 => {
                        let dl = &d[l];
                        for ((o, a), b) in out.iter_mut().zip(u).zip(dl) {
                            *o += alpha * a + tau * beta * b;
                        }
                    }
                    _ => {
                        for (o, a) in out.iter_mut().zip(u) {
                            *o += alpha * a;
                        }
                    }
                }
            }
        }
        stages.push(next);
    }
    let last = stages.pop().expect("at least one stage");
    for (level, s) in h.levels.iter_mut().zip(last) {
        level.state = s;
    }
    h.restrict_all();
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::amr::{HierarchyConfig, LevelConfig};
    use crate::dg::Scheme;
    use crate::mesh::BackgroundGrid;
    use crate::{Gas, LevelSet, Primitive};

    fn single(scheme: Scheme, n: usize, ic: &(dyn Fn([f64; 2]) -> Primitive + Sync)) -> Hierarchy {
        let grid = BackgroundGrid::new([0.0, 0.0], [1.0, 1.0], [n, n]).unwrap().with_periodic([true, true]);
        let config = HierarchyConfig {
            levels: vec![LevelConfig {
                scheme,
                ratio: 1,
                nu_bar: 0.3,
                kappa_rho: 1.0,
            }],
            kappa_s: -2.0,
            buffer: 1,
            limit_fv: true,
        };
        Hierarchy::new(config, grid, LevelSet::uncut(), Gas::default(), ic).unwrap()
    }

    #[test]
    fn convex_rows() {
        for rk in [RkScheme::ForwardEuler, RkScheme::Ssp2, RkScheme::Ssp3, RkScheme::Ssp54] {
            for row in rk.rows() {
                let s: f64 = row.iter().map(|r| r.1).sum();
                assert!((s - 1.0).abs() < 1e-14, "{rk:?}");
                assert!(row.iter().all(|r| r.1 >= 0.0 && r.2 >= 0.0));
            }
            assert_eq!(rk.stages(), rk.rows().len());
        }
        assert!((RkScheme::Ssp3.nodes()[2] - 0.5).abs() < 1e-15);
        assert_eq!(RkScheme::for_accuracy(Scheme::Dg(1).accuracy()), RkScheme::Ssp2);
        assert_eq!(RkScheme::for_accuracy(Scheme::Fv.accuracy()), RkScheme::Ssp2);
        assert_eq!(RkScheme::for_accuracy(Scheme::Dg(2).accuracy()), RkScheme::Ssp3);
        assert_eq!(RkScheme::for_accuracy(Scheme::Dg(3).accuracy()), RkScheme::Ssp54);
    }

    #[test]
    fn sod_left_state_time_step() {
        let h = single(Scheme::Fv, 64, &|_| Primitive::new(1.0, [0.0; 2], 1.0));
        let oracle = (1.0 / 64.0) * 0.3 * 0.3 / 1.4f64.sqrt();
        let tau = compute_dt(&h, 1.0).unwrap();
        assert!((tau - oracle).abs() < 1e-15, "{tau} {oracle}");
        assert_eq!(clip_dt(0.19999, tau, 0.2), 0.2 - 0.19999);
        assert_eq!(clip_dt(0.0, tau, 0.2), tau);
    }

    #[test]
    fn forward_euler_is_one_rhs_application() {
        let ic = |x: [f64; 2]| Primitive::new(1.0 + 0.2 * (6.0 * x[0]).sin(), [0.3, 0.1], 1.0);
        let mut h = single(Scheme::Dg(1), 6, &ic);
        let b = Boundary::periodic();
        let u0 = vec![h.levels[0].state.clone()];
        let d = rhs(&h, &u0, 0.0, &b, None).unwrap();
        step(&mut h, &b, 0.0, 1e-3, RkScheme::ForwardEuler, None).unwrap();
        for ((a, u), dv) in h.levels[0].state.iter().zip(&u0[0]).zip(&d[0]) {
            assert_eq!(*a, u + 1e-3 * dv);
        }
    }

    #[test]
    fn uniform_flow_is_unchanged() {
        let q = Primitive::new(1.0, [0.4, -0.3], 0.8);
        for scheme in [Scheme::Fv, Scheme::Dg(2)] {
            let mut h = single(scheme, 8, &|_| q);
            let b = Boundary::periodic();
            let u0 = h.levels[0].state.clone();
            let rk = select_rk(&h);
            let mut t = 0.0;
            for _ in 0..100 {
                let tau = compute_dt(&h, 0.9).unwrap();
                step(&mut h, &b, t, tau, rk, None).unwrap();
                t += tau;
            }
            let worst = h.levels[0].state.iter().zip(&u0).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
            assert!(worst < 1e-14, "{scheme:?}: {worst}");
        }
    }
}
