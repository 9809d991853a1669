//! Multilevel substructuring of the periodic grid.
//!
//! Level 1 elements are the fine cells and level 1 dofs are the grid nodes.
//! Level `i` substructures are aligned blocks of `ratio_i^dim` level `i`
//! elements; each level `i` substructure becomes one level `i+1` element
//! whose dofs are its coarse dofs. Every substructure at a level is a
//! translate of every other one, so local numbering, classification and
//! constraint rows are stored once per level ([`LocalPattern`]).
//!
//! Dofs are classified by the set of substructures that share them. Under
//! periodicity a dof shared by 2^k substructures lies on a corner (k = dim),
//! an edge, or a face, and the sharing set identifies the geometric entity.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::mesh_fe::{cell_nodes, lex_index, unravel, GridSpec};

/// Coarse degrees of freedom: corner values, edge averages, face averages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CoarseSpace {
    C,
    E,
    CE,
    CEF,
}

impl CoarseSpace {
    pub fn uses_corners(self) -> bool {
        matches!(self, CoarseSpace::C | CoarseSpace::CE | CoarseSpace::CEF)
    }

    pub fn uses_edges(self) -> bool {
        !matches!(self, CoarseSpace::C)
    }

    pub fn uses_faces(self) -> bool {
        matches!(self, CoarseSpace::CEF)
    }

    pub fn selects(self, kind: DofCategory) -> bool {
        match kind {
            DofCategory::Interior => false,
            DofCategory::Corner => self.uses_corners(),
            DofCategory::Edge => self.uses_edges(),
            DofCategory::Face => self.uses_faces(),
        }
    }

    pub fn check_dim(self, dim: usize) -> Result<()> {
        let ok = match self {
            CoarseSpace::C | CoarseSpace::CE => true,
            CoarseSpace::E | CoarseSpace::CEF => dim == 3,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::UnsupportedCoarseSpace {
                space: self.to_string(),
                dim,
            })
        }
    }
}

impl fmt::Display for CoarseSpace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            CoarseSpace::C => "C",
            CoarseSpace::E => "E",
            CoarseSpace::CE => "CE",
            CoarseSpace::CEF => "CEF",
        };
        f.write_str(s)
    }
}

impl FromStr for CoarseSpace {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().replace('+', "").as_str() {
            "C" => Ok(CoarseSpace::C),
            "E" => Ok(CoarseSpace::E),
            "CE" => Ok(CoarseSpace::CE),
            "CEF" => Ok(CoarseSpace::CEF),
            other => Err(format!(
                "unknown coarse space '{other}' (expected C, E, CE or CEF)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HierarchySpec {
    pub dim: usize,
    /// Coarsening ratio `H_i / H_{i-1}` for each substructuring level.
    pub ratios: Vec<usize>,
    pub coarse_space: CoarseSpace,
    /// Substructures per axis on the coarsest substructuring level.
    pub coarsest_per_axis: usize,
}

impl HierarchySpec {
    pub const COARSEST_PER_AXIS: usize = 4;

    pub fn new(dim: usize, ratios: Vec<usize>, coarse_space: CoarseSpace) -> Self {
        HierarchySpec {
            dim,
            ratios,
            coarse_space,
            coarsest_per_axis: Self::COARSEST_PER_AXIS,
        }
    }

    /// `levels` levels with the same ratio everywhere.
    pub fn uniform(dim: usize, levels: usize, ratio: usize, coarse_space: CoarseSpace) -> Self {
        Self::new(dim, vec![ratio; levels.saturating_sub(1)], coarse_space)
    }

    pub fn with_coarsest_per_axis(mut self, per_axis: usize) -> Self {
        self.coarsest_per_axis = per_axis;
        self
    }

    /// Number of levels `L`, counting the exactly solved coarsest one.
    pub fn levels(&self) -> usize {
        self.ratios.len() + 1
    }

    pub fn cells_per_axis(&self) -> usize {
        self.coarsest_per_axis * self.ratios.iter().product::<usize>()
    }

    pub fn num_dofs(&self) -> usize {
        self.cells_per_axis().pow(self.dim as u32)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim != 2 && self.dim != 3 {
            return Err(Error::UnsupportedDimension(self.dim));
        }
        if self.ratios.is_empty() {
            return Err(Error::InvalidHierarchy(
                "at least two levels are required".into(),
            ));
        }
        if let Some(r) = self.ratios.iter().find(|&&r| r < 2) {
            return Err(Error::InvalidHierarchy(format!("ratio {r} < 2")));
        }
        if self.coarsest_per_axis < 3 {
            return Err(Error::InvalidHierarchy(format!(
                "{} coarsest substructures per axis (need at least 3)",
                self.coarsest_per_axis
            )));
        }
        self.coarse_space.check_dim(self.dim)
    }

    pub fn grid(&self) -> Result<GridSpec> {
        self.validate()?;
        GridSpec::unit(self.dim, self.cells_per_axis())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DofCategory {
    Interior,
    Face,
    Edge,
    Corner,
}

impl DofCategory {
    fn from_multiplicity(dim: usize, mult: usize) -> Option<Self> {
        match (dim, mult) {
            (_, 1) => Some(DofCategory::Interior),
            (2, 2) => Some(DofCategory::Edge),
            (2, 4) => Some(DofCategory::Corner),
            (3, 2) => Some(DofCategory::Face),
            (3, 4) => Some(DofCategory::Edge),
            (3, 8) => Some(DofCategory::Corner),
            _ => None,
        }
    }

    /// Geometric count of such entities on the boundary of one substructure.
    fn per_substructure(self, dim: usize) -> usize {
        match (self, dim) {
            (DofCategory::Corner, d) => 1 << d,
            (DofCategory::Edge, 2) => 4,
            (DofCategory::Edge, _) => 12,
            (DofCategory::Face, _) => 6,
            (DofCategory::Interior, _) => 1,
        }
    }
}

/// A set of local dofs forming one corner, edge or face of a substructure.
#[derive(Debug, Clone, PartialEq)]
pub struct DofGroup {
    pub kind: DofCategory,
    pub members: Vec<usize>,
}

/// Local numbering and classification shared by all substructures of a level.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalPattern {
    pub n_local: usize,
    /// For each element of the block (lexicographic), element-local to
    /// substructure-local dof map.
    pub elem_local: Vec<Vec<usize>>,
    pub category: Vec<DofCategory>,
    pub multiplicity: Vec<usize>,
    pub interior: Vec<usize>,
    pub interface: Vec<usize>,
    /// All corner/edge/face groups, ordered by their smallest local dof.
    pub groups: Vec<DofGroup>,
    /// Indices into `groups` selected by the coarse space; one coarse dof each.
    pub coarse_groups: Vec<usize>,
}

impl LocalPattern {
    pub fn n_coarse(&self) -> usize {
        self.coarse_groups.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Substructure {
    /// Local to level-global dof map.
    pub dofs: Vec<usize>,
    /// Local coarse dof to global coarse dof (= next-level dof) map.
    pub coarse: Vec<usize>,
}

/// One substructuring level `i` (1-based).
#[derive(Debug, Clone)]
pub struct Level {
    pub index: usize,
    pub dim: usize,
    pub n_dofs: usize,
    pub elems_per_axis: usize,
    /// Element to level-global dof map; for `index >= 2` these are the
    /// coarse dofs of the previous level's substructures.
    pub elem_dofs: Vec<Vec<usize>>,
    pub ratio: usize,
    pub subs_per_axis: usize,
    pub substructures: Vec<Substructure>,
    pub pattern: LocalPattern,
    /// Number of substructures sharing each level-global dof.
    pub multiplicity: Vec<usize>,
    pub n_coarse: usize,
}

impl Level {
    pub fn num_substructures(&self) -> usize {
        self.substructures.len()
    }

    pub fn interface_size(&self) -> usize {
        self.multiplicity.iter().filter(|&&m| m > 1).count()
    }
}

#[derive(Debug, Clone)]
pub struct Hierarchy {
    pub spec: HierarchySpec,
    pub grid: GridSpec,
    /// Levels `1..L-1`; the level `L` problem is the coarse problem of the last.
    pub levels: Vec<Level>,
}

impl Hierarchy {
    pub fn num_levels(&self) -> usize {
        self.levels.len() + 1
    }

    pub fn n(&self) -> usize {
        self.grid.num_nodes()
    }

    /// Interface size of the finest substructuring.
    pub fn n_gamma(&self) -> usize {
        self.levels[0].interface_size()
    }

    pub fn coarsest_size(&self) -> usize {
        self.levels.last().map_or(0, |l| l.n_coarse)
    }

    pub fn level(&self, level: usize) -> Result<&Level> {
        if level == 0 || level > self.levels.len() {
            return Err(Error::LevelOutOfRange {
                level,
                max: self.levels.len(),
            });
        }
        Ok(&self.levels[level - 1])
    }
}

pub fn build_hierarchy(spec: &HierarchySpec, grid: &GridSpec) -> Result<Hierarchy> {
    spec.validate()?;
    grid.validate()?;
    if grid.dim != spec.dim || grid.cells_per_axis != spec.cells_per_axis() {
        return Err(Error::InvalidHierarchy(format!(
            "grid {}D with {} cells per axis does not match {}D hierarchy needing {}",
            grid.dim,
            grid.cells_per_axis,
            spec.dim,
            spec.cells_per_axis()
        )));
    }
    let dim = spec.dim;
    let n = grid.cells_per_axis;
    let mut n_dofs = grid.num_nodes();
    let mut elems_per_axis = n;
    let mut elem_dofs: Vec<Vec<usize>> = (0..grid.num_cells())
        .map(|c| cell_nodes(c, n, dim))
        .collect();

    let mut levels = Vec::with_capacity(spec.ratios.len());
    for (k, &ratio) in spec.ratios.iter().enumerate() {
        let level = build_level(
            k + 1,
            dim,
            n_dofs,
            elems_per_axis,
            elem_dofs,
            ratio,
            spec.coarse_space,
        )?;
        n_dofs = level.n_coarse;
        elems_per_axis = level.subs_per_axis;
        elem_dofs = level
            .substructures
            .iter()
            .map(|s| s.coarse.clone())
            .collect();
        levels.push(level);
    }
    Ok(Hierarchy {
        spec: spec.clone(),
        grid: *grid,
        levels,
    })
}

fn block_elements(sub: usize, subs_per_axis: usize, ratio: usize, dim: usize) -> Vec<usize> {
    let base = unravel(sub, subs_per_axis, dim);
    let epa = subs_per_axis * ratio;
    (0..ratio.pow(dim as u32))
        .map(|o| {
            let off = unravel(o, ratio, dim);
            let mut c = [0usize; 3];
            for a in 0..dim {
                c[a] = base[a] * ratio + off[a];
            }
            lex_index(&c[..dim], epa)
        })
        .collect()
}

fn build_level(
    index: usize,
    dim: usize,
    n_dofs: usize,
    elems_per_axis: usize,
    elem_dofs: Vec<Vec<usize>>,
    ratio: usize,
    coarse_space: CoarseSpace,
) -> Result<Level> {
    if elems_per_axis % ratio != 0 {
        return Err(Error::InvalidHierarchy(format!(
            "level {index}: {elems_per_axis} elements per axis not divisible by ratio {ratio}"
        )));
    }
    let subs_per_axis = elems_per_axis / ratio;
    let n_subs = subs_per_axis.pow(dim as u32);

    // Local numbering by first appearance while walking the block.
    let mut substructures = Vec::with_capacity(n_subs);
    let mut pattern_elem_local: Option<Vec<Vec<usize>>> = None;
    let mut g2l: HashMap<usize, usize> = HashMap::new();
    for s in 0..n_subs {
        g2l.clear();
        let mut dofs = Vec::new();
        let mut elem_local = Vec::new();
        for e in block_elements(s, subs_per_axis, ratio, dim) {
            let map: Vec<usize> = elem_dofs[e]
                .iter()
                .map(|&g| {
                    *g2l.entry(g).or_insert_with(|| {
                        dofs.push(g);
                        dofs.len() - 1
                    })
                })
                .collect();
            elem_local.push(map);
        }
        match &pattern_elem_local {
            None => pattern_elem_local = Some(elem_local),
            Some(p) if *p != elem_local => return Err(Error::NotCongruent(index)),
            Some(_) => {}
        }
        substructures.push(Substructure {
            dofs,
            coarse: Vec::new(),
        });
    }
    let elem_local = pattern_elem_local.expect("at least one substructure");
    let n_local = substructures[0].dofs.len();

    // dof -> sharing substructures, CSR layout
    let mut offsets = vec![0usize; n_dofs + 1];
    for sub in &substructures {
        for &g in &sub.dofs {
            offsets[g + 1] += 1;
        }
    }
    for i in 0..n_dofs {
        offsets[i + 1] += offsets[i];
    }
    let mut fill = offsets.clone();
    let mut sharing = vec![0u32; offsets[n_dofs]];
    for (s, sub) in substructures.iter().enumerate() {
        for &g in &sub.dofs {
            sharing[fill[g]] = s as u32;
            fill[g] += 1;
        }
    }
    let multiplicity: Vec<usize> = (0..n_dofs).map(|g| offsets[g + 1] - offsets[g]).collect();
    if let Some(g) = multiplicity.iter().position(|&m| m == 0) {
        return Err(Error::InvalidHierarchy(format!(
            "level {index}: dof {g} belongs to no substructure"
        )));
    }
    let shared_by = |g: usize| &sharing[offsets[g]..offsets[g + 1]];

    // Classification of substructure 0, checked against every other one.
    let local_mult: Vec<usize> = substructures[0]
        .dofs
        .iter()
        .map(|&g| multiplicity[g])
        .collect();
    let category = local_mult
        .iter()
        .map(|&m| {
            DofCategory::from_multiplicity(dim, m).ok_or_else(|| {
                Error::InvalidHierarchy(format!(
                    "level {index}: dof shared by {m} substructures in {dim}D"
                ))
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let interior: Vec<usize> = (0..n_local)
        .filter(|&l| category[l] == DofCategory::Interior)
        .collect();
    let interface: Vec<usize> = (0..n_local)
        .filter(|&l| category[l] != DofCategory::Interior)
        .collect();

    let mut groups: Vec<DofGroup> = Vec::new();
    let mut key_to_group: HashMap<&[u32], usize> = HashMap::new();
    for &l in &interface {
        let key = shared_by(substructures[0].dofs[l]);
        let gi = *key_to_group.entry(key).or_insert_with(|| {
            groups.push(DofGroup {
                kind: category[l],
                members: Vec::new(),
            });
            groups.len() - 1
        });
        groups[gi].members.push(l);
    }

    for kind in [DofCategory::Corner, DofCategory::Edge, DofCategory::Face] {
        if !coarse_space.selects(kind) {
            continue;
        }
        let found = groups.iter().filter(|g| g.kind == kind).count();
        let expected = kind.per_substructure(dim);
        if found != expected {
            return Err(Error::DegenerateConstraint(format!(
                "level {index}: found {found} {kind:?} sets per substructure, expected {expected}"
            )));
        }
    }
    let coarse_groups: Vec<usize> = (0..groups.len())
        .filter(|&g| coarse_space.selects(groups[g].kind))
        .collect();

    // Global coarse numbering keyed by the sharing set of each entity.
    let mut coarse_ids: HashMap<Vec<u32>, usize> = HashMap::new();
    for sub in substructures.iter_mut() {
        for (l, &g) in sub.dofs.iter().enumerate() {
            if multiplicity[g] != local_mult[l] {
                return Err(Error::NotCongruent(index));
            }
        }
        for group in &groups {
            let key = shared_by(sub.dofs[group.members[0]]);
            if group.members[1..]
                .iter()
                .any(|&m| shared_by(sub.dofs[m]) != key)
            {
                return Err(Error::NotCongruent(index));
            }
        }
        sub.coarse = coarse_groups
            .iter()
            .map(|&gi| {
                let key = shared_by(sub.dofs[groups[gi].members[0]]).to_vec();
                let next = coarse_ids.len();
                *coarse_ids.entry(key).or_insert(next)
            })
            .collect();
    }

    Ok(Level {
        index,
        dim,
        n_dofs,
        elems_per_axis,
        elem_dofs,
        ratio,
        subs_per_axis,
        substructures,
        pattern: LocalPattern {
            n_local,
            elem_local,
            category,
            multiplicity: local_mult,
            interior,
            interface,
            groups,
            coarse_groups,
        },
        multiplicity,
        n_coarse: coarse_ids.len(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DofClassification {
    pub level: usize,
    pub category: Vec<DofCategory>,
    /// Level-global dofs shared by at least two substructures.
    pub interface: Vec<usize>,
}

impl DofClassification {
    pub fn count(&self, kind: DofCategory) -> usize {
        self.category.iter().filter(|&&c| c == kind).count()
    }
}

pub fn classify_dofs(hierarchy: &Hierarchy, level: usize) -> Result<DofClassification> {
    let lvl = hierarchy.level(level)?;
    let category = lvl
        .multiplicity
        .iter()
        .map(|&m| {
            DofCategory::from_multiplicity(lvl.dim, m)
                .ok_or_else(|| Error::InvalidHierarchy(format!("multiplicity {m}")))
        })
        .collect::<Result<Vec<_>>>()?;
    let interface = (0..lvl.n_dofs)
        .filter(|&g| lvl.multiplicity[g] > 1)
        .collect();
    Ok(DofClassification {
        level,
        category,
        interface,
    })
}

/// Coarse dof constraint operators of one level.
#[derive(Debug, Clone, PartialEq)]
pub struct CoarseConstraints {
    /// `n_coarse x n_local` rows of point values and arithmetic averages,
    /// identical on every substructure.
    pub matrix: DMatrix<f64>,
    pub kinds: Vec<DofCategory>,
    /// Per substructure, local coarse row to global coarse dof.
    pub global: Vec<Vec<usize>>,
    pub n_global: usize,
}

pub fn coarse_dof_constraints(
    hierarchy: &Hierarchy,
    level: usize,
    coarse_space: CoarseSpace,
) -> Result<CoarseConstraints> {
    let lvl = hierarchy.level(level)?;
    coarse_space.check_dim(lvl.dim)?;
    if coarse_space != hierarchy.spec.coarse_space {
        return Err(Error::InvalidHierarchy(format!(
            "hierarchy was built for coarse space {}, not {coarse_space}",
            hierarchy.spec.coarse_space
        )));
    }
    Ok(level_constraints(lvl))
}

pub(crate) fn level_constraints(lvl: &Level) -> CoarseConstraints {
    let p = &lvl.pattern;
    let mut matrix = DMatrix::zeros(p.n_coarse(), p.n_local);
    let mut kinds = Vec::with_capacity(p.n_coarse());
    for (row, &gi) in p.coarse_groups.iter().enumerate() {
        let group = &p.groups[gi];
        let w = 1.0 / group.members.len() as f64;
        for &m in &group.members {
            matrix[(row, m)] = w;
        }
        kinds.push(group.kind);
    }
    CoarseConstraints {
        matrix,
        kinds,
        global: lvl.substructures.iter().map(|s| s.coarse.clone()).collect(),
        n_global: lvl.n_coarse,
    }
}
