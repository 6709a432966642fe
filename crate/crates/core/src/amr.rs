//! Level hierarchy: Galerkin transfers between levels, tagging, and regridding.
//!
//! Elements of a level whose cells are all refined by the next level are *covered*. They
//! are not advanced; after every step they receive the restriction of the finer data.

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use rayon::prelude::*;

use crate::basis::project;
use crate::dg::{Scheme, Space, NU};
use crate::error::{Error, Result};
use crate::fv::{self, Gradients, Stencil};
use crate::mesh::{choose_target, classify, BackgroundGrid, CellClass, CellInfo, CellMask, FaceKind, Mesh};
use crate::{Basis, CellIndex, Gas, LevelSet, MassMatrix, Primitive, QuadSpec};

/// Regrid passes allowed to repair nesting before giving up.
const MAX_REGRID_ATTEMPTS: usize = 5;

/// Relative density jump across a face that tags both sides while the initial hierarchy
/// is built; discontinuities of the initial data lying on faces are invisible to the
/// element-local indicators.
const INITIAL_JUMP_TOL: f64 = 1e-2;

#[derive(Clone, Debug, PartialEq)]
pub struct LevelConfig {
    pub scheme: Scheme,
    /// Refinement ratio from the next coarser level (ignored on level 0).
    pub ratio: usize,
    pub nu_bar: f64,
    /// Density-gradient threshold for tagging this level when the next one is dG.
    pub kappa_rho: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HierarchyConfig {
    pub levels: Vec<LevelConfig>,
    /// Shock-sensor offset used to tag the level below a finite-volume level.
    pub kappa_s: f64,
    /// Buffer of cells added around tags.
    pub buffer: usize,
    /// Limit finite-volume slopes; off gives the plain least-squares reconstruction.
    pub limit_fv: bool,
}

impl HierarchyConfig {
    pub fn validate(&self) -> Result<()> {
        let n = self.levels.len();
        if n == 0 {
            return Err(Error::Config("at least one level is required".into()));
        }
        for (l, lc) in self.levels.iter().enumerate() {
            if lc.scheme == Scheme::Fv && l + 1 != n {
                return Err(Error::Config(format!("finite volumes are only allowed on the finest level, found on level {l}")));
            }
            if let Scheme::Dg(p) = lc.scheme {
                if p > crate::basis::MAX_ORDER {
                    return Err(Error::Config(format!("level {l}: dG order {p} exceeds {}", crate::basis::MAX_ORDER)));
                }
            }
            if l > 0 && lc.ratio == 0 {
                return Err(Error::Config(format!("level {l}: refinement ratio must be at least 1")));
            }
            if !(lc.nu_bar > 0.0 && lc.nu_bar < 1.0) {
                return Err(Error::Config(format!("level {l}: volume fraction threshold must lie in (0, 1)")));
            }
            if l + 1 < n && self.levels[l + 1].scheme == Scheme::Fv && lc.scheme.order() == 0 {
                return Err(Error::Config(format!("level {l}: the shock sensor needs a dG order of at least 1")));
            }
        }
        Ok(())
    }

    pub fn spec(&self, l: usize) -> QuadSpec {
        QuadSpec::new(self.levels[l].scheme.quad_order())
    }
}

/// `G = sum_x w B_fine(x)^T B_coarse(x)` over the part of a fine element inside one coarse
/// element, row-major `n_fine x n_coarse`.
#[derive(Clone, Debug)]
pub struct TransferBlock {
    pub fine: usize,
    pub coarse: usize,
    pub g: Vec<f64>,
}

/// Interpolation `X_f = M_f^-1 sum G X_c` and its adjoint restriction
/// `X_c = M_c^-1 sum G^T X_f` between two adjacent levels.
#[derive(Clone, Debug, Default)]
pub struct Transfer {
    pub blocks: Vec<TransferBlock>,
    by_fine: Vec<Vec<usize>>,
    by_coarse: Vec<Vec<usize>>,
}

impl Transfer {
    /// Overlap rules are the fine volume rules split by the coarse element containing
    /// each point.
    pub fn new(fine: (&Mesh, &Space), coarse: (&Mesh, &Space)) -> Result<Transfer> {
        let (fm, fs) = fine;
        let (cm, cs) = coarse;
        let per_fine: Vec<Vec<TransferBlock>> = (0..fm.elements.len())
            .into_par_iter()
            .map(|e| {
                let rule = fm.volume_rule(e);
                let bf = &fs.bases[e];
                let mut parts: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
                let mut vf = vec![0.0; bf.len()];
                let mut vc = Vec::new();
                for (x, &w) in rule.points.iter().zip(&rule.weights) {
                    let cell = cm.grid.locate(*x);
                    let ce = cm.element_of_cell(cell).ok_or_else(|| {
                        Error::Transfer(format!("fine element {e} has no coarse element at {x:?} (coarse cell {cell:?})"))
                    })?;
                    let bc = &cs.bases[ce];
                    vc.resize(bc.len(), 0.0);
                    bf.eval_into(*x, &mut vf);
                    bc.eval_into(*x, &mut vc);
                    let g = parts.entry(ce).or_insert_with(|| vec![0.0; bf.len() * bc.len()]);
                    for (i, fi) in vf.iter().enumerate() {
                        let row = &mut g[i * vc.len()..(i + 1) * vc.len()];
                        for (gij, cj) in row.iter_mut().zip(&vc) {
                            *gij += w * fi * cj;
                        }
                    }
                }
                Ok(parts
                    .into_iter()
                    .map(|(coarse, g)| TransferBlock { fine: e, coarse, g })
                    .collect())
            })
            .collect::<Result<_>>()?;
        let mut blocks = Vec::new();
        let mut by_fine = vec![Vec::new(); fm.elements.len()];
        let mut by_coarse = vec![Vec::new(); cm.elements.len()];
        for b in per_fine.into_iter().flatten() {
            by_fine[b.fine].push(blocks.len());
            by_coarse[b.coarse].push(blocks.len());
            blocks.push(b);
        }
        Ok(Transfer {
            blocks,
            by_fine,
            by_coarse,
        })
    }

    /// Interpolates onto the fine elements selected by `only` (all if `None`).
    pub fn interpolate(&self, fine: &Space, coarse: &Space, xc: &[f64], xf: &mut [f64], only: Option<&[bool]>) {
        let (nbf, nbc) = (fine.block(), coarse.block());
        xf.par_chunks_mut(nbf).enumerate().for_each(|(e, out)| {
            if only.is_some_and(|o| !o[e]) {
                return;
            }
            out.iter_mut().for_each(|v| *v = 0.0);
            for &bi in &self.by_fine[e] {
                let b = &self.blocks[bi];
                let c = &xc[b.coarse * nbc..(b.coarse + 1) * nbc];
                let nc = nbc / NU;
                for i in 0..nbf / NU {
                    for j in 0..nc {
                        let g = b.g[i * nc + j];
                        for k in 0..NU {
                            out[i * NU + k] += g * c[j * NU + k];
                        }
                    }
                }
            }
            fine.mass[e].solve(out, NU);
        });
    }

    /// Overwrites the coarse elements flagged in `covered` with the restriction of `xf`.
    pub fn restrict(&self, fine: &Space, coarse: &Space, xf: &[f64], xc: &mut [f64], covered: &[bool]) {
        let (nbf, nbc) = (fine.block(), coarse.block());
        xc.par_chunks_mut(nbc).enumerate().for_each(|(e, out)| {
            if !covered[e] {
                return;
            }
            out.iter_mut().for_each(|v| *v = 0.0);
            let nc = nbc / NU;
            for &bi in &self.by_coarse[e] {
                let b = &self.blocks[bi];
                let f = &xf[b.fine * nbf..(b.fine + 1) * nbf];
                for i in 0..nbf / NU {
                    for j in 0..nc {
                        let g = b.g[i * nc + j];
                        for k in 0..NU {
                            out[j * NU + k] += g * f[i * NU + k];
                        }
                    }
                }
            }
            coarse.mass[e].solve(out, NU);
        });
    }

    /// Fine elements overlapping coarse element `e`.
    pub fn fine_of(&self, e: usize) -> impl Iterator<Item = usize> + '_ {
        self.by_coarse[e].iter().map(|&b| self.blocks[b].fine)
    }

    /// Coarse elements overlapping fine element `e`.
    pub fn coarse_of(&self, e: usize) -> impl Iterator<Item = usize> + '_ {
        self.by_fine[e].iter().map(|&b| self.blocks[b].coarse)
    }
}

/// `(1/m^e) int |grad rho| dV` per element. Finite-volume levels use `grads`.
pub fn density_gradient_indicator(mesh: &Mesh, space: &Space, state: &[f64], grads: Option<&Gradients>) -> Vec<f64> {
    let nb = space.block();
    (0..mesh.elements.len())
        .into_par_iter()
        .map(|e| match space.scheme {
            Scheme::Fv => grads.map_or(0.0, |g| {
                let s = g.slopes[e][0];
                s[0].hypot(s[1])
            }),
            Scheme::Dg(_) => {
                let rule = mesh.volume_rule(e);
                let c = &state[e * nb..(e + 1) * nb];
                let basis = &space.bases[e];
                let mut sum = 0.0;
                for (x, &w) in rule.points.iter().zip(&rule.weights) {
                    let g = basis.evaluate_grad::<NU>(c, *x)[0];
                    sum += w * g[0].hypot(g[1]);
                }
                sum / mesh.elements[e].volume
            }
        })
        .collect()
}

/// Smoothness indicator `int (U - U~)^2 / int U^2` of the density, with `U~` the Galerkin
/// projection onto the degree `p - 1` space of the same element.
pub fn smoothness(mesh: &Mesh, space: &Space, state: &[f64]) -> Result<Vec<f64>> {
    let p = match space.scheme {
        Scheme::Dg(p) if p >= 1 => p,
        s => return Err(Error::Parameter(format!("the shock sensor needs dG order >= 1, got {}", s.name()))),
    };
    let nb = space.block();
    (0..mesh.elements.len())
        .into_par_iter()
        .map(|e| {
            let el = &mesh.elements[e];
            let rule = mesh.volume_rule(e);
            let c = &state[e * nb..(e + 1) * nb];
            let basis = &space.bases[e];
            let low = Basis::new(p - 1, &el.host_box);
            let mass = if el.is_cut() {
                MassMatrix::assemble(&rule, &low).map_err(|_| Error::DegenerateElement { element: e })?
            } else {
                MassMatrix::identity(low.len())
            };
            let u = |x: [f64; 2]| basis.evaluate::<NU>(c, x)[0];
            let lc = project(&rule, &low, &mass, |x| [u(x)]);
            let (mut num, mut den) = (0.0, 0.0);
            for (x, &w) in rule.points.iter().zip(&rule.weights) {
                let v = u(*x);
                let d = v - low.evaluate::<1>(&lc, *x)[0];
                num += w * d * d;
                den += w * v * v;
            }
            Ok(if den > 0.0 { num / den } else { 0.0 })
        })
        .collect()
}

/// Trigger `log10 s > -4 log10 p + kappa_s`; `s = 0` never triggers.
pub fn sensor_fires(s: f64, p: usize, kappa_s: f64) -> bool {
    s > 0.0 && s.log10() > -4.0 * (p as f64).log10() + kappa_s
}

/// Elements with a relative density jump above `tol` across one of their faces.
pub fn face_jump_tags(mesh: &Mesh, space: &Space, state: &[f64], tol: f64) -> Vec<bool> {
    let nb = space.block();
    let rho = |e: usize, x: [f64; 2]| space.bases[e].evaluate::<NU>(&state[e * nb..(e + 1) * nb], x)[0];
    let mut tags = vec![false; mesh.elements.len()];
    for face in &mesh.faces {
        if let FaceKind::Internal { left, right, shift } = face.kind {
            let jump = face.rule.points.iter().any(|x| {
                let (a, b) = (rho(left, *x), rho(right, [x[0] - shift[0], x[1] - shift[1]]));
                (a - b).abs() > tol * a.abs().min(b.abs())
            });
            if jump {
                tags[left] = true;
                tags[right] = true;
            }
        }
    }
    tags
}

/// One level of the hierarchy.
#[derive(Clone, Debug)]
pub struct Level {
    pub scheme: Scheme,
    pub nu_bar: f64,
    pub mesh: Arc<Mesh>,
    pub space: Arc<Space>,
    pub stencil: Option<Arc<Stencil>>,
    pub state: Vec<f64>,
    /// Elements whose cells are all refined by the next finer level.
    pub covered: Vec<bool>,
    /// Transfer to the next coarser level.
    pub transfer: Option<Arc<Transfer>>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RegridReport {
    /// Element count of every level.
    pub elements: Vec<usize>,
    pub attempts: usize,
    /// Elements copied unchanged, per level.
    pub copied: Vec<usize>,
}

pub type InitialState<'a> = &'a (dyn Fn([f64; 2]) -> Primitive + Sync);

pub struct Hierarchy {
    pub config: HierarchyConfig,
    pub phi: LevelSet,
    pub gas: Gas,
    /// Full background grid of every configured level.
    pub grids: Vec<BackgroundGrid>,
    pub levels: Vec<Level>,
    /// Classification cache per configured level.
    caches: Vec<HashMap<usize, CellInfo>>,
}

fn fill_fresh(mesh: &Mesh, space: &Space, gas: &Gas, ic: InitialState, state: &mut [f64], fresh: &[bool]) {
    let nb = space.block();
    state.par_chunks_mut(nb).enumerate().for_each(|(e, out)| {
        if !fresh[e] {
            return;
        }
        let rule = mesh.volume_rule(e);
        let c = project(&rule, &space.bases[e], &space.mass[e], |x| gas.to_conserved(&ic(x)).to_array());
        out.copy_from_slice(&c);
    });
}

impl Hierarchy {
    /// Builds level 0 from `grid0`, then lets the finer levels appear by repeated regrids,
    /// projecting `ic` onto every new element.
    pub fn new(config: HierarchyConfig, grid0: BackgroundGrid, phi: LevelSet, gas: Gas, ic: InitialState) -> Result<Hierarchy> {
        config.validate()?;
        let mut grids = vec![grid0.clone()];
        for l in 1..config.levels.len() {
            let g = grids[l - 1].refined(config.levels[l].ratio);
            grids.push(g);
        }
        let lc = &config.levels[0];
        let mesh = Mesh::build(&grid0, &phi, lc.nu_bar, &config.spec(0))?;
        let space = Space::new(&mesh, lc.scheme)?;
        let state = space.project(&mesh, &gas, ic);
        let stencil = (lc.scheme == Scheme::Fv).then(|| Arc::new(Stencil::new(&mesh)));
        let mut caches = vec![HashMap::new(); config.levels.len()];
        caches[0] = mesh.cells.clone();
        let n = mesh.elements.len();
        let mut h = Hierarchy {
            levels: vec![Level {
                scheme: lc.scheme,
                nu_bar: lc.nu_bar,
                mesh: Arc::new(mesh),
                space: Arc::new(space),
                stencil,
                state,
                covered: vec![false; n],
                transfer: None,
            }],
            config,
            phi,
            gas,
            grids,
            caches,
        };
        for _ in 1..h.config.levels.len() {
            h.regrid_with(Some(ic))?;
        }
        Ok(h)
    }

    /// Slopes of a finite-volume level for `state`; `None` on dG levels.
    pub fn fv_gradients(&self, l: usize, state: &[f64]) -> Result<Option<Gradients>> {
        let level = &self.levels[l];
        match (&level.stencil, level.scheme) {
            (Some(st), Scheme::Fv) if self.config.limit_fv => fv::limit(&level.mesh, st, state, &self.gas, l).map(Some),
            (Some(st), Scheme::Fv) => fv::unlimited(&level.mesh, st, state, &self.gas, l).map(Some),
            _ => Ok(None),
        }
    }

    pub fn finest(&self) -> usize {
        self.levels.len() - 1
    }

    /// Cells of level `l` whose elements are tagged for refinement.
    pub fn tags(&self, l: usize) -> Result<CellMask> {
        self.tags_with(l, false)
    }

    fn tags_with(&self, l: usize, initial: bool) -> Result<CellMask> {
        let level = &self.levels[l];
        let mesh = &level.mesh;
        let next = self.config.levels[l + 1].scheme;
        let tagged: Vec<bool> = if next == Scheme::Fv {
            let p = level.scheme.order();
            smoothness(mesh, &level.space, &level.state)?
                .into_iter()
                .map(|s| sensor_fires(s, p, self.config.kappa_s))
                .collect()
        } else {
            let grads = self.fv_gradients(l, &level.state)?;
            let kappa = self.config.levels[l].kappa_rho;
            density_gradient_indicator(mesh, &level.space, &level.state, grads.as_ref())
                .into_iter()
                .map(|g| g > kappa)
                .collect()
        };
        let mut tagged = tagged;
        if initial && level.scheme != Scheme::Fv {
            for (t, j) in tagged.iter_mut().zip(face_jump_tags(mesh, &level.space, &level.state, INITIAL_JUMP_TOL)) {
                *t |= j;
            }
        }
        let mut mask = CellMask::empty(mesh.grid.n);
        for (el, _) in mesh.elements.iter().zip(&tagged).filter(|(_, &t)| t) {
            for &c in &el.cells {
                mask.set(c, true);
            }
        }
        Ok(mask)
    }

    /// Rebuilds all levels above 0 from the current tags; new fine regions are
    /// interpolated from below.
    pub fn regrid(&mut self) -> Result<RegridReport> {
        self.regrid_with(None)
    }

    fn ensure_classified(&mut self, l: usize, mask: &CellMask) -> Result<()> {
        let grid = &self.grids[l];
        let cache = &self.caches[l];
        let todo: Vec<CellIndex> = mask.cells().filter(|&c| !cache.contains_key(&grid.linear(c))).collect();
        if todo.is_empty() {
            return Ok(());
        }
        let lc = &self.config.levels[l];
        let infos = classify(grid, &todo, &self.phi, lc.nu_bar, &self.config.spec(l))?;
        let cache = &mut self.caches[l];
        for (c, info) in todo.into_iter().zip(infos) {
            cache.insert(grid.linear(c), info);
        }
        Ok(())
    }

    /// Merge target of a small cell on the unrestricted grid of level `l`.
    fn full_target(&self, l: usize, c: CellIndex) -> Result<CellIndex> {
        let grid = &self.grids[l];
        let cache = &self.caches[l];
        choose_target(
            c,
            |j| cache.get(&grid.linear(j)).filter(|i| i.class.is_valid()).map(|i| i.nu),
            grid,
        )
    }

    /// Grows `mask` until merge groups of level `l` are whole and every coarse element
    /// touched by it is entirely refined.
    fn close_mask(&mut self, l: usize, mask: &mut CellMask, coarse: &Mesh) -> Result<()> {
        let ratio = self.config.levels[l].ratio;
        loop {
            let mut changed = false;
            let halo = mask.dilate(&self.grids[l], 2);
            self.ensure_classified(l, &halo)?;
            let grid = self.grids[l].clone();
            let cells: Vec<CellIndex> = mask.cells().collect();
            for c in cells {
                let class = self.caches[l][&grid.linear(c)].class;
                if class == CellClass::Small {
                    let t = self.full_target(l, c)?;
                    if !mask.contains(t) {
                        mask.set(t, true);
                        changed = true;
                    }
                } else if class.is_valid() {
                    for dj in -1..=1 {
                        for di in -1..=1 {
                            let Some(s) = grid.neighbor_no_wrap(c, [di, dj]) else { continue };
                            if mask.contains(s) || self.caches[l][&grid.linear(s)].class != CellClass::Small {
                                continue;
                            }
                            if self.full_target(l, s)? == c {
                                mask.set(s, true);
                                changed = true;
                            }
                        }
                    }
                }
                let parent = [c[0] / ratio, c[1] / ratio];
                if let Some(e) = coarse.element_of_cell(parent) {
                    for cc in &coarse.elements[e].cells {
                        for j in 0..ratio {
                            for i in 0..ratio {
                                let child = [cc[0] * ratio + i, cc[1] * ratio + j];
                                if !mask.contains(child) {
                                    mask.set(child, true);
                                    changed = true;
                                }
                            }
                        }
                    }
                }
            }
            if !changed {
                return Ok(());
            }
        }
    }

    fn regrid_with(&mut self, ic: Option<InitialState>) -> Result<RegridReport> {
        let nconf = self.config.levels.len();
        if nconf == 1 {
            return Ok(RegridReport {
                elements: vec![self.levels[0].mesh.elements.len()],
                attempts: 1,
                copied: vec![0],
            });
        }
        let buffer = self.config.buffer;
        let ntag = self.levels.len().min(nconf - 1);
        let tags: Vec<CellMask> = (0..ntag).map(|l| self.tags_with(l, ic.is_some())).collect::<Result<_>>()?;
        let mut extra: Vec<CellMask> = (0..nconf - 1).map(|l| CellMask::empty(self.grids[l].n)).collect();

        for attempt in 1..=MAX_REGRID_ATTEMPTS {
            // Cells of each level to refine, closed downwards so that every refined
            // region keeps a buffer of parent cells around it.
            let mut refine: Vec<CellMask> = (0..nconf - 1)
                .map(|l| {
                    let mut m = if l < ntag { tags[l].clone() } else { CellMask::empty(self.grids[l].n) };
                    m.union_with(&extra[l]);
                    m.dilate(&self.grids[l], buffer)
                })
                .collect();
            for l in (0..nconf.saturating_sub(2)).rev() {
                let ratio = self.config.levels[l + 1].ratio;
                let up = refine[l + 1].dilate(&self.grids[l + 1], buffer.max(1)).coarsen(ratio);
                refine[l].union_with(&up);
            }

            let mut levels = vec![self.levels[0].clone()];
            let mut copied = vec![0];
            let mut violation = false;
            for l in 1..nconf {
                let ratio = self.config.levels[l].ratio;
                let mut mask = refine[l - 1].refine(ratio);
                if mask.is_empty() {
                    break;
                }
                let coarse = levels[l - 1].mesh.clone();
                self.close_mask(l, &mut mask, &coarse)?;
                // Proper nesting: every fine cell and its neighbours sit on active parents.
                for c in mask.dilate(&self.grids[l], 1).cells() {
                    let parent = [c[0] / ratio, c[1] / ratio];
                    if !coarse.active.contains(parent) {
                        violation = true;
                        if l >= 2 {
                            let r = self.config.levels[l - 1].ratio;
                            extra[l - 2].set([parent[0] / r, parent[1] / r], true);
                        }
                    }
                }
                if violation {
                    break;
                }
                let (level, ncopy) = self.build_level(l, mask, &levels[l - 1], ic)?;
                levels.push(level);
                copied.push(ncopy);
            }
            if violation {
                continue;
            }

            for l in 0..levels.len() {
                let covered = match levels.get(l + 1) {
                    Some(fine) => {
                        let ratio = self.config.levels[l + 1].ratio;
                        levels[l]
                            .mesh
                            .elements
                            .iter()
                            .map(|el| {
                                el.cells.iter().all(|c| {
                                    (0..ratio * ratio)
                                        .all(|k| fine.mesh.active.contains([c[0] * ratio + k % ratio, c[1] * ratio + k / ratio]))
                                })
                            })
                            .collect()
                    }
                    None => vec![false; levels[l].mesh.elements.len()],
                };
                levels[l].covered = covered;
            }
            self.levels = levels;
            self.restrict_all();
            return Ok(RegridReport {
                elements: self.levels.iter().map(|l| l.mesh.elements.len()).collect(),
                attempts: attempt,
                copied,
            });
        }
        Err(Error::Transfer(format!(
            "regrid did not reach a properly nested hierarchy in {MAX_REGRID_ATTEMPTS} attempts"
        )))
    }

    fn build_level(&mut self, l: usize, mask: CellMask, coarse: &Level, ic: Option<InitialState>) -> Result<(Level, usize)> {
        let lc = self.config.levels[l].clone();
        let old = self.levels.get(l);
        if let Some(old) = old.filter(|o| o.mesh.active == mask) {
            let transfer = match &old.transfer {
                Some(t) if self.levels[l - 1].mesh.active == coarse.mesh.active => t.clone(),
                _ => Arc::new(Transfer::new((&old.mesh, &old.space), (&coarse.mesh, &coarse.space))?),
            };
            let n = old.mesh.elements.len();
            let level = Level {
                transfer: Some(transfer),
                covered: vec![false; n],
                ..old.clone()
            };
            return Ok((level, n));
        }

        let mesh = Mesh::build_masked(&self.grids[l], &self.phi, lc.nu_bar, &self.config.spec(l), &mask, Some(&self.caches[l]))?;
        for (k, info) in &mesh.cells {
            self.caches[l].entry(*k).or_insert_with(|| info.clone());
        }
        let space = Space::new(&mesh, lc.scheme)?;
        let transfer = Transfer::new((&mesh, &space), (&coarse.mesh, &coarse.space))?;
        let nb = space.block();
        let mut state = vec![0.0; mesh.elements.len() * nb];
        let mut fresh = vec![true; mesh.elements.len()];
        let mut ncopy = 0;
        if let Some(old) = self.levels.get(l) {
            let by_host: HashMap<usize, usize> = old
                .mesh
                .elements
                .iter()
                .enumerate()
                .map(|(e, el)| (old.mesh.grid.linear(el.host), e))
                .collect();
            for (e, el) in mesh.elements.iter().enumerate() {
                if let Some(&oe) = by_host.get(&mesh.grid.linear(el.host)) {
                    if old.mesh.elements[oe].cells == el.cells {
                        state[e * nb..(e + 1) * nb].copy_from_slice(&old.state[oe * nb..(oe + 1) * nb]);
                        fresh[e] = false;
                        ncopy += 1;
                    }
                }
            }
        }
        match ic {
            Some(ic) => fill_fresh(&mesh, &space, &self.gas, ic, &mut state, &fresh),
            None => transfer.interpolate(&space, &coarse.space, &coarse.state, &mut state, Some(&fresh)),
        }
        let stencil = (lc.scheme == Scheme::Fv).then(|| Arc::new(Stencil::new(&mesh)));
        let n = mesh.elements.len();
        Ok((
            Level {
                scheme: lc.scheme,
                nu_bar: lc.nu_bar,
                mesh: Arc::new(mesh),
                space: Arc::new(space),
                stencil,
                state,
                covered: vec![false; n],
                transfer: Some(Arc::new(transfer)),
            },
            ncopy,
        ))
    }

    /// Restricts every level onto the covered elements of the one below, finest first.
    pub fn restrict_all(&mut self) {
        for l in (1..self.levels.len()).rev() {
            let (lo, hi) = self.levels.split_at_mut(l);
            let (coarse, fine) = (&mut lo[l - 1], &hi[0]);
            if let Some(t) = &fine.transfer {
                t.restrict(&fine.space, &coarse.space, &fine.state, &mut coarse.state, &coarse.covered);
            }
        }
    }

    /// Integrals of the conserved variables over the composite (uncovered) mesh.
    pub fn totals(&self) -> [f64; NU] {
        let mut out = [0.0; NU];
        for level in &self.levels {
            for (e, el) in level.mesh.elements.iter().enumerate() {
                if level.covered[e] {
                    continue;
                }
                let u = level.space.average(&level.state, e);
                for k in 0..NU {
                    out[k] += el.volume * u[k];
                }
            }
        }
        out
    }

    /// Checks proper nesting and the coverage invariant; returns a description of the
    /// first violation.
    pub fn audit(&self) -> std::result::Result<(), String> {
        for l in 1..self.levels.len() {
            let ratio = self.config.levels[l].ratio;
            let coarse = &self.levels[l - 1];
            let fine = &self.levels[l];
            for c in fine.mesh.active.dilate(&fine.mesh.grid, 1).cells() {
                if !coarse.mesh.active.contains([c[0] / ratio, c[1] / ratio]) {
                    return Err(format!("level {l} cell {c:?} (or its neighbour) lacks an active parent"));
                }
            }
            for (e, el) in coarse.mesh.elements.iter().enumerate() {
                let children = el.cells.iter().flat_map(|c| {
                    (0..ratio * ratio).map(move |k| [c[0] * ratio + k % ratio, c[1] * ratio + k / ratio])
                });
                let n = children.clone().filter(|&c| fine.mesh.active.contains(c)).count();
                if n != 0 && n != el.cells.len() * ratio * ratio {
                    return Err(format!("level {} element {e} is partially refined", l - 1));
                }
                if (n != 0) != coarse.covered[e] {
                    return Err(format!("level {} element {e} has a stale covered flag", l - 1));
                }
            }
            for (&s, &t) in &fine.mesh.targets {
                let sc = fine.mesh.grid.index(s);
                if fine.mesh.active.contains(sc) != fine.mesh.active.contains(t) {
                    return Err(format!("level {l}: small cell {sc:?} and its target {t:?} differ in refinement"));
                }
            }
        }
        Ok(())
    }
}
