//! Background grids, cell classification by volume fraction, small-cell merging and the
//! element/face topology of the implicitly defined mesh.

use std::borrow::Cow;
use std::collections::{BTreeMap, HashMap};
use std::io::Write;
use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{CellIndex, Error, Result};
use crate::quadrature::{cell_rules, face_rule, tensor_rule, CellRules};
use crate::{LevelSet, QuadRule, QuadSpec, Rect, SurfaceRule};

/// Uniform Cartesian grid covering a rectangle.
#[derive(Clone, Debug, PartialEq)]
pub struct BackgroundGrid {
    pub origin: [f64; 2],
    pub h: [f64; 2],
    pub n: [usize; 2],
    pub periodic: [bool; 2],
}

impl BackgroundGrid {
    pub fn new(lo: [f64; 2], hi: [f64; 2], n: [usize; 2]) -> Result<Self> {
        if n[0] == 0 || n[1] == 0 || !(hi[0] > lo[0] && hi[1] > lo[1]) {
            return Err(Error::Parameter(format!(
                "grid needs positive extent and cell counts, got [{lo:?}, {hi:?}] with {n:?}"
            )));
        }
        Ok(BackgroundGrid {
            origin: lo,
            h: [(hi[0] - lo[0]) / n[0] as f64, (hi[1] - lo[1]) / n[1] as f64],
            n,
            periodic: [false, false],
        })
    }

    pub fn with_periodic(mut self, periodic: [bool; 2]) -> Self {
        self.periodic = periodic;
        self
    }

    /// The same rectangle with every cell split `ratio` times per direction.
    pub fn refined(&self, ratio: usize) -> Self {
        BackgroundGrid {
            origin: self.origin,
            h: [self.h[0] / ratio as f64, self.h[1] / ratio as f64],
            n: [self.n[0] * ratio, self.n[1] * ratio],
            periodic: self.periodic,
        }
    }

    pub fn len(&self) -> usize {
        self.n[0] * self.n[1]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn hi(&self) -> [f64; 2] {
        [
            self.origin[0] + self.h[0] * self.n[0] as f64,
            self.origin[1] + self.h[1] * self.n[1] as f64,
        ]
    }

    pub fn linear(&self, i: CellIndex) -> usize {
        i[0] + self.n[0] * i[1]
    }

    pub fn index(&self, lin: usize) -> CellIndex {
        [lin % self.n[0], lin / self.n[0]]
    }

    pub fn cell_box(&self, i: CellIndex) -> Rect {
        let lo = [
            self.origin[0] + self.h[0] * i[0] as f64,
            self.origin[1] + self.h[1] * i[1] as f64,
        ];
        Rect::new(lo, [lo[0] + self.h[0], lo[1] + self.h[1]])
    }

    /// Cell containing `x`, clamped to the grid.
    pub fn locate(&self, x: [f64; 2]) -> CellIndex {
        let f = |k: usize| {
            let s = ((x[k] - self.origin[k]) / self.h[k]).floor();
            (s.max(0.0) as usize).min(self.n[k] - 1)
        };
        [f(0), f(1)]
    }

    /// Neighbour offset by `d`, wrapping periodic directions. The second value is the
    /// translation to apply to points of the neighbour to bring them next to `i`.
    pub fn neighbor(&self, i: CellIndex, d: [isize; 2]) -> Option<(CellIndex, [f64; 2])> {
        let mut out = [0; 2];
        let mut shift = [0.0; 2];
        for k in 0..2 {
            let j = i[k] as isize + d[k];
            let n = self.n[k] as isize;
            if (0..n).contains(&j) {
                out[k] = j as usize;
            } else if self.periodic[k] {
                let w = j.rem_euclid(n);
                out[k] = w as usize;
                let period = self.h[k] * self.n[k] as f64;
                shift[k] = if j < 0 { -period } else { period };
            } else {
                return None;
            }
        }
        Some((out, shift))
    }

    /// Neighbour without periodic wrapping.
    pub fn neighbor_no_wrap(&self, i: CellIndex, d: [isize; 2]) -> Option<CellIndex> {
        let a = i[0] as isize + d[0];
        let b = i[1] as isize + d[1];
        if a < 0 || b < 0 || a >= self.n[0] as isize || b >= self.n[1] as isize {
            None
        } else {
            Some([a as usize, b as usize])
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum CellClass {
    Entire,
    Empty,
    Large,
    Small,
}

impl CellClass {
    /// Entire and Large cells host elements.
    pub fn is_valid(self) -> bool {
        matches!(self, CellClass::Entire | CellClass::Large)
    }

    pub fn name(self) -> &'static str {
        match self {
            CellClass::Entire => "entire",
            CellClass::Empty => "empty",
            CellClass::Large => "large",
            CellClass::Small => "small",
        }
    }
}

/// Volume fractions below this are treated as empty.
pub const NU_EMPTY: f64 = 1e-12;

pub fn classify_fraction(nu: f64, nu_bar: f64, rules: &CellRules<f64>) -> CellClass {
    if nu < NU_EMPTY {
        CellClass::Empty
    } else if nu >= 1.0 && rules.surface.is_empty() {
        CellClass::Entire
    } else if nu > nu_bar {
        CellClass::Large
    } else {
        CellClass::Small
    }
}

#[derive(Clone, Debug)]
pub struct CellInfo {
    pub class: CellClass,
    pub nu: f64,
    /// Rules of cut cells; uncut cells use the tensor rule of their box.
    pub rules: Option<Arc<CellRules<f64>>>,
}

/// Classifies `cells` of `grid` in parallel.
pub fn classify(
    grid: &BackgroundGrid,
    cells: &[CellIndex],
    phi: &LevelSet,
    nu_bar: f64,
    spec: &QuadSpec,
) -> Result<Vec<CellInfo>> {
    if !(nu_bar > 0.0 && nu_bar < 1.0) {
        return Err(Error::Parameter(format!(
            "volume fraction threshold must lie in (0, 1), got {nu_bar}"
        )));
    }
    let area = grid.h[0] * grid.h[1];
    cells
        .par_iter()
        .map(|&i| {
            let b = grid.cell_box(i);
            let rules = cell_rules(&b, phi, spec).map_err(|e| match e {
                Error::Quadrature { reason, .. } => Error::Quadrature { cell: i, reason },
                other => other,
            })?;
            let nu = (rules.volume.measure() / area).min(1.0);
            let class = classify_fraction(nu, nu_bar, &rules);
            let rules = match class {
                CellClass::Entire | CellClass::Empty => None,
                _ => Some(Arc::new(rules)),
            };
            Ok(CellInfo { class, nu, rules })
        })
        .collect()
}

/// Picks the merge target of a small cell among `candidates` (valid, active neighbours):
/// face neighbours before corner neighbours, then larger volume fraction, then lowest
/// `(i1, i2)`.
pub fn choose_target(
    cell: CellIndex,
    candidates: impl Fn(CellIndex) -> Option<f64>,
    grid: &BackgroundGrid,
) -> Result<CellIndex> {
    const FACE: [[isize; 2]; 4] = [[-1, 0], [1, 0], [0, -1], [0, 1]];
    const CORNER: [[isize; 2]; 4] = [[-1, -1], [1, -1], [-1, 1], [1, 1]];
    for set in [FACE, CORNER] {
        let mut best: Option<(f64, CellIndex)> = None;
        for d in set {
            let Some(j) = grid.neighbor_no_wrap(cell, d) else {
                continue;
            };
            let Some(nu) = candidates(j) else { continue };
            let better = match best {
                None => true,
                Some((bn, bj)) => nu > bn || (nu == bn && (j[0], j[1]) < (bj[0], bj[1])),
            };
            if better {
                best = Some((nu, j));
            }
        }
        if let Some((_, j)) = best {
            return Ok(j);
        }
    }
    Err(Error::UnmergeableCell { cell })
}

/// Set of active cells of a grid.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CellMask {
    pub n: [usize; 2],
    bits: Vec<bool>,
}

impl CellMask {
    pub fn full(n: [usize; 2]) -> Self {
        CellMask {
            n,
            bits: vec![true; n[0] * n[1]],
        }
    }

    pub fn empty(n: [usize; 2]) -> Self {
        CellMask {
            n,
            bits: vec![false; n[0] * n[1]],
        }
    }

    pub fn contains(&self, i: CellIndex) -> bool {
        i[0] < self.n[0] && i[1] < self.n[1] && self.bits[i[0] + self.n[0] * i[1]]
    }

    pub fn set(&mut self, i: CellIndex, v: bool) {
        self.bits[i[0] + self.n[0] * i[1]] = v;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    /// Adds the cells of `other`; returns whether anything changed.
    pub fn union_with(&mut self, other: &CellMask) -> bool {
        let mut changed = false;
        for (a, &b) in self.bits.iter_mut().zip(&other.bits) {
            if b && !*a {
                *a = true;
                changed = true;
            }
        }
        changed
    }

    /// Children of every cell on the grid refined by `ratio`.
    pub fn refine(&self, ratio: usize) -> CellMask {
        let mut out = CellMask::empty([self.n[0] * ratio, self.n[1] * ratio]);
        for c in self.cells() {
            for j in 0..ratio {
                for i in 0..ratio {
                    out.set([c[0] * ratio + i, c[1] * ratio + j], true);
                }
            }
        }
        out
    }

    /// Parents of every cell on the grid coarsened by `ratio`.
    pub fn coarsen(&self, ratio: usize) -> CellMask {
        let mut out = CellMask::empty([self.n[0] / ratio, self.n[1] / ratio]);
        for c in self.cells() {
            out.set([c[0] / ratio, c[1] / ratio], true);
        }
        out
    }

    /// Cells within `width` cells (Chebyshev distance, periodic wrap) of the mask.
    pub fn dilate(&self, grid: &BackgroundGrid, width: usize) -> CellMask {
        let w = width as isize;
        let mut out = self.clone();
        for c in self.cells() {
            for dj in -w..=w {
                for di in -w..=w {
                    if let Some((j, _)) = grid.neighbor(c, [di, dj]) {
                        out.set(j, true);
                    }
                }
            }
        }
        out
    }

    /// Active cells in linear order.
    pub fn cells(&self) -> impl Iterator<Item = CellIndex> + '_ {
        let n0 = self.n[0];
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(move |(l, _)| [l % n0, l / n0])
    }
}

#[derive(Clone, Debug)]
pub struct ElementGeometry {
    pub volume: QuadRule,
    pub surface: SurfaceRule,
}

/// A valid host cell plus the small cells merged into it.
#[derive(Clone, Debug)]
pub struct Element {
    pub host: CellIndex,
    /// Constituent cells, host first.
    pub cells: Vec<CellIndex>,
    pub host_box: Rect,
    pub volume: f64,
    pub centroid: [f64; 2],
    /// Explicit rules of cut or merged elements; `None` for plain uncut cells.
    pub geometry: Option<Arc<ElementGeometry>>,
}

impl Element {
    pub fn is_cut(&self) -> bool {
        self.geometry.is_some()
    }

    /// Volume rule; uncut elements map `reference` (a rule on the unit square).
    pub fn volume_rule<'a>(&'a self, reference: &QuadRule) -> Cow<'a, QuadRule> {
        match &self.geometry {
            Some(g) => Cow::Borrowed(&g.volume),
            None => Cow::Owned(map_reference(reference, &self.host_box)),
        }
    }

    pub fn surface_rule(&self) -> Option<&SurfaceRule> {
        self.geometry.as_ref().map(|g| &g.surface)
    }

    /// Bounding box of all constituent cells.
    pub fn bounding_box(&self, grid: &BackgroundGrid) -> Rect {
        let mut r = self.host_box;
        for &c in &self.cells[1..] {
            let b = grid.cell_box(c);
            for k in 0..2 {
                r.lo[k] = r.lo[k].min(b.lo[k]);
                r.hi[k] = r.hi[k].max(b.hi[k]);
            }
        }
        r
    }
}

pub fn map_reference(reference: &QuadRule, b: &Rect) -> QuadRule {
    let s = b.size();
    QuadRule {
        points: reference
            .points
            .iter()
            .map(|p| [b.lo[0] + s[0] * p[0], b.lo[1] + s[1] * p[1]])
            .collect(),
        weights: reference.weights.iter().map(|w| w * s[0] * s[1]).collect(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Side {
    XLo,
    XHi,
    YLo,
    YHi,
}

impl Side {
    pub const ALL: [Side; 4] = [Side::XLo, Side::XHi, Side::YLo, Side::YHi];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_axis(axis: usize, high: bool) -> Side {
        match (axis, high) {
            (0, false) => Side::XLo,
            (0, true) => Side::XHi,
            (_, false) => Side::YLo,
            (_, true) => Side::YHi,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum FaceKind {
    /// Between two elements; the normal points from `left` to `right`. Points of `right`
    /// are evaluated at `x - shift` (periodic wrap).
    Internal {
        left: usize,
        right: usize,
        shift: [f64; 2],
    },
    /// On the boundary of the background rectangle.
    Domain { elem: usize, side: Side },
    /// Fluid part of an edge shared with an empty cell; closed as a wall.
    Wall { elem: usize },
    /// Towards an inactive cell; the coarser level supplies the outer trace.
    CoarseFine { elem: usize, outside: CellIndex },
}

#[derive(Clone, Debug)]
pub struct Face {
    pub kind: FaceKind,
    /// Axis the face is normal to.
    pub axis: usize,
    /// Unit normal: left to right for internal faces, outward otherwise.
    pub normal: [f64; 2],
    pub rule: QuadRule,
}

/// The implicitly defined mesh on the active cells of a grid.
#[derive(Clone, Debug)]
pub struct Mesh {
    pub grid: BackgroundGrid,
    pub phi: LevelSet,
    pub spec: QuadSpec,
    pub nu_bar: f64,
    pub active: CellMask,
    /// Classified cells: active cells and their 3x3 neighbourhoods.
    pub cells: HashMap<usize, CellInfo>,
    /// Merge target of each active small cell.
    pub targets: BTreeMap<usize, CellIndex>,
    pub elements: Vec<Element>,
    pub faces: Vec<Face>,
    /// Element of each active cell with fluid.
    pub cell_element: HashMap<usize, usize>,
    /// Tensor rule on the unit square.
    pub reference: QuadRule,
}

impl Mesh {
    /// Mesh on the whole grid.
    pub fn build(grid: &BackgroundGrid, phi: &LevelSet, nu_bar: f64, spec: &QuadSpec) -> Result<Mesh> {
        Mesh::build_masked(grid, phi, nu_bar, spec, &CellMask::full(grid.n), None)
    }

    /// Mesh on the cells of `active`. Classification of cells already known to the
    /// caller can be passed in `known` to avoid recomputing quadrature.
    pub fn build_masked(
        grid: &BackgroundGrid,
        phi: &LevelSet,
        nu_bar: f64,
        spec: &QuadSpec,
        active: &CellMask,
        known: Option<&HashMap<usize, CellInfo>>,
    ) -> Result<Mesh> {
        let mut halo = CellMask::empty(grid.n);
        for c in active.cells() {
            for dj in -1..=1 {
                for di in -1..=1 {
                    if let Some((j, _)) = grid.neighbor(c, [di, dj]) {
                        halo.set(j, true);
                    }
                }
            }
        }
        let mut cells = HashMap::new();
        let mut todo = Vec::new();
        for c in halo.cells() {
            let l = grid.linear(c);
            match known.and_then(|k| k.get(&l)) {
                Some(info) => {
                    cells.insert(l, info.clone());
                }
                None => todo.push(c),
            }
        }
        let infos = classify(grid, &todo, phi, nu_bar, spec)?;
        for (c, info) in todo.into_iter().zip(infos) {
            cells.insert(grid.linear(c), info);
        }
        Mesh::assemble(grid.clone(), phi.clone(), *spec, nu_bar, active.clone(), cells)
    }

    fn assemble(
        grid: BackgroundGrid,
        phi: LevelSet,
        spec: QuadSpec,
        nu_bar: f64,
        active: CellMask,
        cells: HashMap<usize, CellInfo>,
    ) -> Result<Mesh> {
        let info = |c: CellIndex| cells.get(&grid.linear(c));
        let valid_active = |c: CellIndex| {
            if !active.contains(c) {
                return None;
            }
            info(c).filter(|i| i.class.is_valid()).map(|i| i.nu)
        };

        let mut targets = BTreeMap::new();
        for c in active.cells() {
            if info(c).map(|i| i.class) == Some(CellClass::Small) {
                let t = choose_target(c, valid_active, &grid)?;
                targets.insert(grid.linear(c), t);
            }
        }

        let mut merged: BTreeMap<usize, Vec<CellIndex>> = BTreeMap::new();
        for (&s, &t) in &targets {
            merged.entry(grid.linear(t)).or_default().push(grid.index(s));
        }

        let reference = tensor_rule(&Rect::new([0.0, 0.0], [1.0, 1.0]), spec.order);
        let hosts: Vec<CellIndex> = active
            .cells()
            .filter(|&c| info(c).map(|i| i.class.is_valid()).unwrap_or(false))
            .collect();
        let elements: Vec<Element> = hosts
            .par_iter()
            .map(|&host| {
                let mut list = vec![host];
                if let Some(m) = merged.get(&grid.linear(host)) {
                    list.extend_from_slice(m);
                }
                build_element(&grid, &cells, list, &reference, spec.order)
            })
            .collect();

        let mut cell_element = HashMap::new();
        for (e, el) in elements.iter().enumerate() {
            for &c in &el.cells {
                cell_element.insert(grid.linear(c), e);
            }
        }

        let mut mesh = Mesh {
            grid,
            phi,
            spec,
            nu_bar,
            active,
            cells,
            targets,
            elements,
            faces: Vec::new(),
            cell_element,
            reference,
        };
        mesh.faces = mesh.build_faces()?;
        Ok(mesh)
    }

    fn build_faces(&self) -> Result<Vec<Face>> {
        let grid = &self.grid;
        let mut owned: Vec<usize> = self.cell_element.keys().copied().collect();
        owned.sort_unstable();
        let mut edges = Vec::new();
        for &l in &owned {
            let c = grid.index(l);
            for (axis, high) in [(0, false), (0, true), (1, false), (1, true)] {
                let mut d = [0isize; 2];
                d[axis] = if high { 1 } else { -1 };
                match grid.neighbor(c, d) {
                    Some((j, shift)) if self.cell_element.contains_key(&grid.linear(j)) => {
                        let (e, f) = (self.cell_element[&l], self.cell_element[&grid.linear(j)]);
                        if high && e != f {
                            edges.push((c, axis, high, Some((j, shift))));
                        }
                    }
                    other => edges.push((c, axis, high, other)),
                }
            }
        }
        let faces: Vec<Option<Face>> = edges
            .par_iter()
            .map(|&(c, axis, high, nb)| self.make_face(c, axis, high, nb))
            .collect::<Result<Vec<_>>>()?;
        Ok(faces.into_iter().flatten().collect())
    }

    fn make_face(
        &self,
        c: CellIndex,
        axis: usize,
        high: bool,
        nb: Option<(CellIndex, [f64; 2])>,
    ) -> Result<Option<Face>> {
        let grid = &self.grid;
        let b = grid.cell_box(c);
        let mut start = b.lo;
        if high {
            start[axis] = b.hi[axis];
        }
        let along = 1 - axis;
        let rule = face_rule(start, along, grid.h[along], &self.phi, &self.spec).map_err(|e| match e {
            Error::Quadrature { reason, .. } => Error::Quadrature { cell: c, reason },
            other => other,
        })?;
        if rule.is_empty() {
            return Ok(None);
        }
        let elem = self.cell_element[&grid.linear(c)];
        let mut normal = [0.0; 2];
        normal[axis] = if high { 1.0 } else { -1.0 };
        let kind = match nb {
            None => FaceKind::Domain {
                elem,
                side: Side::from_axis(axis, high),
            },
            Some((j, shift)) => match self.cell_element.get(&grid.linear(j)) {
                Some(&right) => FaceKind::Internal {
                    left: elem,
                    right,
                    shift,
                },
                None if self.active.contains(j) => FaceKind::Wall { elem },
                None => FaceKind::CoarseFine { elem, outside: j },
            },
        };
        Ok(Some(Face {
            kind,
            axis,
            normal,
            rule,
        }))
    }

    pub fn element_of_cell(&self, c: CellIndex) -> Option<usize> {
        self.cell_element.get(&self.grid.linear(c)).copied()
    }

    pub fn cell_info(&self, c: CellIndex) -> Option<&CellInfo> {
        self.cells.get(&self.grid.linear(c))
    }

    pub fn class(&self, c: CellIndex) -> Option<CellClass> {
        self.cell_info(c).map(|i| i.class)
    }

    /// Total fluid volume of the mesh.
    pub fn total_volume(&self) -> f64 {
        self.elements.iter().map(|e| e.volume).sum()
    }

    pub fn volume_rule(&self, e: usize) -> Cow<'_, QuadRule> {
        self.elements[e].volume_rule(&self.reference)
    }

    /// Element whose constituent cells contain `x` and whose fluid region contains it.
    pub fn locate(&self, x: [f64; 2]) -> Option<usize> {
        if self.phi.value(x) >= 0.0 {
            return None;
        }
        let hi = self.grid.hi();
        if x[0] < self.grid.origin[0] || x[1] < self.grid.origin[1] || x[0] > hi[0] || x[1] > hi[1] {
            return None;
        }
        self.element_of_cell(self.grid.locate(x))
    }

    /// Writes one row per classified cell: `i1,i2,class,nu,target_i1,target_i2`.
    pub fn write_debug_csv(&self, out: &mut impl Write) -> Result<()> {
        writeln!(out, "i1,i2,class,nu,target_i1,target_i2")?;
        let mut keys: Vec<usize> = self.cells.keys().copied().collect();
        keys.sort_unstable();
        for l in keys {
            let c = self.grid.index(l);
            if !self.active.contains(c) {
                continue;
            }
            let info = &self.cells[&l];
            let target = match info.class {
                CellClass::Small => self.targets.get(&l).copied(),
                CellClass::Entire | CellClass::Large => Some(c),
                CellClass::Empty => None,
            };
            let (t1, t2) = target
                .map(|t| (t[0].to_string(), t[1].to_string()))
                .unwrap_or_default();
            writeln!(
                out,
                "{},{},{},{:.16e},{},{}",
                c[0],
                c[1],
                info.class.name(),
                info.nu + 0.0,
                t1,
                t2
            )?;
        }
        Ok(())
    }
}

fn build_element(
    grid: &BackgroundGrid,
    cells: &HashMap<usize, CellInfo>,
    list: Vec<CellIndex>,
    reference: &QuadRule,
    q: usize,
) -> Element {
    let host = list[0];
    let host_box = grid.cell_box(host);
    let host_info = &cells[&grid.linear(host)];
    let geometry = if list.len() == 1 && host_info.rules.is_none() {
        None
    } else {
        let mut volume = QuadRule::empty();
        let mut surface = SurfaceRule::empty();
        for &c in &list {
            let b = grid.cell_box(c);
            match &cells[&grid.linear(c)].rules {
                Some(r) => {
                    volume.extend(&r.volume);
                    surface.extend(&r.surface);
                }
                None => volume.extend(&tensor_rule(&b, q)),
            }
        }
        Some(Arc::new(ElementGeometry { volume, surface }))
    };
    let rule = match &geometry {
        Some(g) => Cow::Borrowed(&g.volume),
        None => Cow::Owned(map_reference(reference, &host_box)),
    };
    let volume = rule.measure();
    let mut centroid = [0.0; 2];
    for (p, w) in rule.points.iter().zip(&rule.weights) {
        centroid[0] += w * p[0];
        centroid[1] += w * p[1];
    }
    centroid = [centroid[0] / volume, centroid[1] / volume];
    Element {
        host,
        cells: list,
        host_box,
        volume,
        centroid,
        geometry,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn spec() -> QuadSpec {
        QuadSpec::new(4)
    }

    #[test]
    fn classify_half_plane_example() {
        let grid = BackgroundGrid::new([0.0, 0.0], [1.0, 1.0], [2, 2]).unwrap();
        let phi = LevelSet::half_plane([1.0, 0.0], 0.55).unwrap();
        let cells: Vec<_> = (0..4).map(|l| grid.index(l)).collect();
        let info = classify(&grid, &cells, &phi, 0.3, &spec()).unwrap();
        for (c, i) in cells.iter().zip(&info) {
            if c[0] == 0 {
                assert_eq!(i.class, CellClass::Entire);
                assert_eq!(i.nu, 1.0);
            } else {
                assert_eq!(i.class, CellClass::Small);
                assert_relative_eq!(i.nu, 0.1, epsilon = 1e-13);
            }
        }
        assert!(classify(&grid, &cells, &phi, 1.0, &spec()).is_err());
    }

    #[test]
    fn classify_uncut_and_annulus_origin() {
        let grid = BackgroundGrid::new([0.0, 0.0], [1.0, 1.0], [3, 3]).unwrap();
        let cells: Vec<_> = (0..9).map(|l| grid.index(l)).collect();
        let info = classify(&grid, &cells, &LevelSet::uncut(), 0.3, &spec()).unwrap();
        assert!(info.iter().all(|i| i.class == CellClass::Entire));

        let grid = BackgroundGrid::new([0.0, 0.0], [1.43, 1.43], [16, 16]).unwrap();
        let phi = LevelSet::annulus(1.0, 1.384).unwrap();
        let info = classify(&grid, &[[0, 0]], &phi, 0.3, &spec()).unwrap();
        assert_eq!(info[0].class, CellClass::Empty);
    }

    #[test]
    fn merge_ordering() {
        let grid = BackgroundGrid::new([0.0, 0.0], [3.0, 3.0], [3, 3]).unwrap();
        // face neighbours {Large 0.5, Entire 1}
        let nus = |c: CellIndex| match c {
            [0, 1] => Some(0.5),
            [1, 0] => Some(1.0),
            [0, 0] => Some(1.0),
            _ => None,
        };
        assert_eq!(choose_target([1, 1], nus, &grid).unwrap(), [1, 0]);
        // corner neighbour only
        let corner = |c: CellIndex| (c == [2, 2]).then_some(0.8);
        assert_eq!(choose_target([1, 1], corner, &grid).unwrap(), [2, 2]);
        // equal fractions: lowest (i1, i2)
        let tie = |c: CellIndex| matches!(c, [1, 0] | [0, 1] | [2, 1]).then_some(1.0);
        assert_eq!(choose_target([1, 1], tie, &grid).unwrap(), [0, 1]);
        assert_eq!(
            choose_target([1, 1], |_| None, &grid),
            Err(Error::UnmergeableCell { cell: [1, 1] })
        );
    }

    #[test]
    fn uncut_mesh_topology() {
        let grid = BackgroundGrid::new([0.0, 0.0], [1.0, 1.0], [4, 4]).unwrap();
        let mesh = Mesh::build(&grid, &LevelSet::uncut(), 0.3, &spec()).unwrap();
        assert_eq!(mesh.elements.len(), 16);
        let internal = mesh
            .faces
            .iter()
            .filter(|f| matches!(f.kind, FaceKind::Internal { .. }))
            .count();
        let domain = mesh
            .faces
            .iter()
            .filter(|f| matches!(f.kind, FaceKind::Domain { .. }))
            .count();
        assert_eq!(internal, 24);
        assert_eq!(domain, 16);
        assert!(mesh.elements.iter().all(|e| !e.is_cut()));
    }

    #[test]
    fn periodic_grid_has_only_internal_faces() {
        let grid = BackgroundGrid::new([0.0, 0.0], [1.0, 1.0], [4, 4])
            .unwrap()
            .with_periodic([true, true]);
        let mesh = Mesh::build(&grid, &LevelSet::uncut(), 0.3, &spec()).unwrap();
        assert_eq!(mesh.faces.len(), 32);
        assert!(mesh
            .faces
            .iter()
            .all(|f| matches!(f.kind, FaceKind::Internal { .. })));
    }

    #[test]
    fn merged_half_plane_mesh() {
        let grid = BackgroundGrid::new([0.0, 0.0], [1.0, 1.0], [2, 2]).unwrap();
        let phi = LevelSet::half_plane([1.0, 0.0], 0.55).unwrap();
        let mesh = Mesh::build(&grid, &phi, 0.3, &spec()).unwrap();
        assert_eq!(mesh.elements.len(), 2);
        for e in &mesh.elements {
            assert_eq!(e.cells.len(), 2);
            assert_relative_eq!(e.volume, 0.25 + 0.025, epsilon = 1e-13);
        }
        assert_eq!(mesh.targets.len(), 2);
        assert_eq!(mesh.targets[&grid.linear([1, 0])], [0, 0]);
        assert_eq!(mesh.targets[&grid.linear([1, 1])], [0, 1]);
    }

    #[test]
    fn element_count_is_valid_cell_count() {
        let grid = BackgroundGrid::new([0.0, 0.0], [1.43, 1.43], [16, 16]).unwrap();
        let phi = LevelSet::annulus(1.0, 1.384).unwrap();
        let mesh = Mesh::build(&grid, &phi, 0.3, &spec()).unwrap();
        let valid = mesh.cells.values().filter(|i| i.class.is_valid()).count();
        assert_eq!(mesh.elements.len(), valid);
        for e in &mesh.elements {
            assert!(mesh.class(e.host).unwrap().is_valid());
            for &c in &e.cells[1..] {
                assert_eq!(mesh.class(c), Some(CellClass::Small));
            }
        }
        for &s in mesh.targets.keys() {
            assert!(mesh.cell_element.contains_key(&s));
        }
    }

    /// Clips a convex polygon against the half plane `a . x <= b` (Sutherland-Hodgman).
    fn clip(poly: &[[f64; 2]], a: [f64; 2], b: f64) -> Vec<[f64; 2]> {
        let inside = |p: &[f64; 2]| a[0] * p[0] + a[1] * p[1] <= b;
        let mut out = Vec::new();
        for i in 0..poly.len() {
            let p = poly[i];
            let q = poly[(i + 1) % poly.len()];
            let (ip, iq) = (inside(&p), inside(&q));
            if ip {
                out.push(p);
            }
            if ip != iq {
                let fp = a[0] * p[0] + a[1] * p[1] - b;
                let fq = a[0] * q[0] + a[1] * q[1] - b;
                let t = fp / (fp - fq);
                out.push([p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]);
            }
        }
        out
    }

    fn shoelace(poly: &[[f64; 2]]) -> f64 {
        let mut a = 0.0;
        for i in 0..poly.len() {
            let p = poly[i];
            let q = poly[(i + 1) % poly.len()];
            a += p[0] * q[1] - q[0] * p[1];
        }
        0.5 * a.abs()
    }

    #[test]
    fn partition_of_measure() {
        let pi = std::f64::consts::PI;
        let grid = BackgroundGrid::new([0.0, 0.0], [1.43, 1.43], [16, 16]).unwrap();
        let mesh = Mesh::build(&grid, &LevelSet::annulus(1.0, 1.384).unwrap(), 0.3, &spec()).unwrap();
        assert_relative_eq!(
            mesh.total_volume(),
            0.25 * pi * (1.384f64.powi(2) - 1.0),
            max_relative = 1e-8
        );

        let grid = BackgroundGrid::new([0.0, 0.0], [1.0, 1.0], [32, 32]).unwrap();
        let mesh = Mesh::build(&grid, &LevelSet::circle([0.5, 0.5], 0.1).unwrap(), 0.3, &spec()).unwrap();
        assert_relative_eq!(mesh.total_volume(), 1.0 - pi * 0.01, max_relative = 1e-8);

        let th = 30f64.to_radians();
        let mesh = Mesh::build(
            &grid,
            &LevelSet::tilted_strip([0.5, 0.5], 0.1, th).unwrap(),
            0.3,
            &spec(),
        )
        .unwrap();
        let n = [-th.sin(), th.cos()];
        let c = n[0] * 0.5 + n[1] * 0.5;
        let square = [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]];
        let poly = clip(&clip(&square, n, c + 0.1), [-n[0], -n[1]], -(c - 0.1));
        assert_relative_eq!(mesh.total_volume(), shoelace(&poly), max_relative = 1e-8);
    }

    #[test]
    fn element_divergence_closure() {
        let grid = BackgroundGrid::new([0.0, 0.0], [1.43, 1.43], [24, 24]).unwrap();
        let mesh = Mesh::build(&grid, &LevelSet::annulus(1.0, 1.384).unwrap(), 0.3, &QuadSpec::new(3)).unwrap();
        let mut sums = vec![[0.0f64; 2]; mesh.elements.len()];
        for f in &mesh.faces {
            let m = f.rule.measure();
            let (a, b) = match f.kind {
                FaceKind::Internal { left, right, .. } => (left, Some(right)),
                FaceKind::Domain { elem, .. } | FaceKind::Wall { elem } | FaceKind::CoarseFine { elem, .. } => (elem, None),
            };
            for k in 0..2 {
                sums[a][k] += m * f.normal[k];
                if let Some(b) = b {
                    sums[b][k] -= m * f.normal[k];
                }
            }
        }
        for (e, el) in mesh.elements.iter().enumerate() {
            if let Some(s) = el.surface_rule() {
                for g in 0..s.len() {
                    for k in 0..2 {
                        sums[e][k] += s.weights[g] * s.normals[g][k];
                    }
                }
            }
            let perimeter = 4.0 * grid.h[0] * el.cells.len() as f64;
            assert!(sums[e][0].abs().max(sums[e][1].abs()) <= 1e-8 * perimeter);
        }
    }

    #[test]
    fn debug_csv_lists_targets() {
        let grid = BackgroundGrid::new([0.0, 0.0], [1.0, 1.0], [2, 2]).unwrap();
        let phi = LevelSet::half_plane([1.0, 0.0], 0.55).unwrap();
        let mesh = Mesh::build(&grid, &phi, 0.3, &spec()).unwrap();
        let mut buf = Vec::new();
        mesh.write_debug_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "i1,i2,class,nu,target_i1,target_i2");
        assert_eq!(lines.len(), 5);
        assert!(lines[2].starts_with("1,0,small,"));
        assert!(lines[2].ends_with(",0,0"));
    }

    #[test]
    fn masked_mesh_has_coarse_fine_faces() {
        let grid = BackgroundGrid::new([0.0, 0.0], [1.0, 1.0], [4, 4]).unwrap();
        let mut mask = CellMask::empty(grid.n);
        mask.set([1, 1], true);
        mask.set([2, 1], true);
        let mesh = Mesh::build_masked(&grid, &LevelSet::uncut(), 0.3, &spec(), &mask, None).unwrap();
        assert_eq!(mesh.elements.len(), 2);
        let cf = mesh
            .faces
            .iter()
            .filter(|f| matches!(f.kind, FaceKind::CoarseFine { .. }))
            .count();
        assert_eq!(cf, 6);
    }
}
