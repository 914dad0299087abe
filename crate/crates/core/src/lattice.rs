//! Geometry of the tilted square lattice with open boundaries.
//!
//! Tensor nodes sit on an `(L+1) x (L+1)` grid. Every link of that grid carries
//! one Ising spin, and every pair of cyclically adjacent legs around a node
//! (up-right, right-down, down-left, left-up) is one Ising bond owned by that
//! node. The spins and bonds form a square lattice rotated by 45 degrees with
//! respect to the tensor grid; bonds are the qubits of the wavefunction.

use serde::Serialize;

use crate::error::{Error, Result};

/// Leg directions of a tensor node, in the fixed order used for indexing.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum Leg {
    Up = 0,
    Right = 1,
    Down = 2,
    Left = 3,
}

impl Leg {
    pub const ALL: [Leg; 4] = [Leg::Up, Leg::Right, Leg::Down, Leg::Left];
}

/// Leg pairs that form the bonds owned by one node, in ownership order.
const BOND_LEG_PAIRS: [(Leg, Leg); 4] = [
    (Leg::Up, Leg::Right),
    (Leg::Right, Leg::Down),
    (Leg::Down, Leg::Left),
    (Leg::Left, Leg::Up),
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Orientation {
    Horizontal,
    Vertical,
}

/// A spin living on the link between two neighbouring tensor nodes.
#[derive(Clone, Debug, Serialize)]
pub struct Spin {
    pub orientation: Orientation,
    /// Node indices joined by this link (left/top first).
    pub nodes: [usize; 2],
}

/// An Ising bond between two spins that are adjacent legs of `owner`.
#[derive(Clone, Debug, Serialize)]
pub struct Bond {
    pub spins: [usize; 2],
    pub owner: usize,
    pub legs: [Leg; 2],
}

#[derive(Clone, Debug, Serialize)]
pub struct LatticeGeometry {
    size: usize,
    /// `(row, col)` of every node, row-major.
    nodes: Vec<(usize, usize)>,
    spins: Vec<Spin>,
    bonds: Vec<Bond>,
    /// Spin index on each leg of each node, `None` where the leg leaves the system.
    node_legs: Vec<[Option<usize>; 4]>,
    /// Bond indices owned by each node, contiguous and in leg-pair order.
    node_bonds: Vec<Vec<usize>>,
}

/// Builds the geometry for linear size `size`.
pub fn build_lattice(size: i64) -> Result<LatticeGeometry> {
    if size < 1 {
        return Err(Error::InvalidSize(size));
    }
    Ok(LatticeGeometry::new(size as usize))
}

impl LatticeGeometry {
    fn new(l: usize) -> Self {
        let side = l + 1;
        let node = |r: usize, c: usize| r * side + c;
        let nodes: Vec<_> = (0..side)
            .flat_map(|r| (0..side).map(move |c| (r, c)))
            .collect();

        let mut spins = Vec::with_capacity(2 * l * side);
        for r in 0..side {
            for c in 0..l {
                spins.push(Spin {
                    orientation: Orientation::Horizontal,
                    nodes: [node(r, c), node(r, c + 1)],
                });
            }
        }
        for r in 0..l {
            for c in 0..side {
                spins.push(Spin {
                    orientation: Orientation::Vertical,
                    nodes: [node(r, c), node(r + 1, c)],
                });
            }
        }
        let horizontal = |r: usize, c: usize| r * l + c;
        let vertical = |r: usize, c: usize| l * side + r * side + c;

        let mut node_legs = Vec::with_capacity(nodes.len());
        for &(r, c) in &nodes {
            node_legs.push([
                (r > 0).then(|| vertical(r - 1, c)),
                (c < l).then(|| horizontal(r, c)),
                (r < l).then(|| vertical(r, c)),
                (c > 0).then(|| horizontal(r, c - 1)),
            ]);
        }

        let mut bonds = Vec::with_capacity(4 * l * l);
        let mut node_bonds = Vec::with_capacity(nodes.len());
        for (owner, legs) in node_legs.iter().enumerate() {
            let mut owned = Vec::new();
            for &(a, b) in &BOND_LEG_PAIRS {
                if let (Some(sa), Some(sb)) = (legs[a as usize], legs[b as usize]) {
                    owned.push(bonds.len());
                    bonds.push(Bond {
                        spins: [sa, sb],
                        owner,
                        legs: [a, b],
                    });
                }
            }
            node_bonds.push(owned);
        }

        LatticeGeometry {
            size: l,
            nodes,
            spins,
            bonds,
            node_legs,
            node_bonds,
        }
    }

    /// Linear size `L`.
    pub fn size(&self) -> usize {
        self.size
    }

    /// Number of nodes along one side of the tensor grid, `L + 1`.
    pub fn side(&self) -> usize {
        self.size + 1
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn n_spins(&self) -> usize {
        self.spins.len()
    }

    pub fn n_bonds(&self) -> usize {
        self.bonds.len()
    }

    pub fn node_index(&self, row: usize, col: usize) -> usize {
        row * self.side() + col
    }

    pub fn node_position(&self, node: usize) -> (usize, usize) {
        self.nodes[node]
    }

    pub fn spins(&self) -> &[Spin] {
        &self.spins
    }

    pub fn bonds(&self) -> &[Bond] {
        &self.bonds
    }

    pub fn bond(&self, id: usize) -> &Bond {
        &self.bonds[id]
    }

    pub fn node_legs(&self, node: usize) -> &[Option<usize>; 4] {
        &self.node_legs[node]
    }

    pub fn node_bonds(&self, node: usize) -> &[usize] {
        &self.node_bonds[node]
    }

    /// Bond owned by `node` joining legs `a` and `b`, if present.
    pub fn bond_at(&self, node: usize, a: Leg, b: Leg) -> Option<usize> {
        self.node_bonds[node]
            .iter()
            .copied()
            .find(|&id| self.bonds[id].legs == [a, b] || self.bonds[id].legs == [b, a])
    }

    /// Elementary plaquettes of the Ising lattice, each listed as its four bonds.
    ///
    /// Interior nodes contribute the square of their own four bonds; every face of
    /// the tensor grid contributes the square made of one bond from each corner.
    pub fn plaquettes(&self) -> Vec<[usize; 4]> {
        let l = self.size;
        let mut out = Vec::new();
        for node in 0..self.n_nodes() {
            if let [a, b, c, d] = self.node_bonds[node][..] {
                out.push([a, b, c, d]);
            }
        }
        for r in 0..l {
            for c in 0..l {
                let tl = self.node_index(r, c);
                let tr = self.node_index(r, c + 1);
                let bl = self.node_index(r + 1, c);
                let br = self.node_index(r + 1, c + 1);
                let get = |n, a, b| self.bond_at(n, a, b).expect("face bond exists");
                out.push([
                    get(tl, Leg::Right, Leg::Down),
                    get(tr, Leg::Down, Leg::Left),
                    get(br, Leg::Left, Leg::Up),
                    get(bl, Leg::Up, Leg::Right),
                ]);
            }
        }
        out
    }

    /// JSON document describing nodes, spins, bonds and ownership, plus the
    /// Levin-Wen label of every bond when `L` is a multiple of 5 (null otherwise).
    pub fn to_json(&self) -> serde_json::Value {
        let mut doc = serde_json::to_value(self).expect("geometry serializes");
        doc["region_labels"] = match levin_wen_regions(self) {
            Ok(regions) => serde_json::to_value(regions.labels()).expect("labels serialize"),
            Err(_) => serde_json::Value::Null,
        };
        doc
    }
}

/// Levin-Wen region label of a bond.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum Region {
    A,
    B,
    C,
    Complement,
}

/// Region unions for which entropies enter the Levin-Wen combination.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, serde::Deserialize)]
pub enum RegionUnion {
    AC,
    BC,
    C,
    ABC,
}

impl RegionUnion {
    pub const ALL: [RegionUnion; 4] = [
        RegionUnion::AC,
        RegionUnion::BC,
        RegionUnion::C,
        RegionUnion::ABC,
    ];

    pub fn contains(self, region: Region) -> bool {
        match self {
            RegionUnion::AC => matches!(region, Region::A | Region::C),
            RegionUnion::BC => matches!(region, Region::B | Region::C),
            RegionUnion::C => region == Region::C,
            RegionUnion::ABC => region != Region::Complement,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            RegionUnion::AC => "AC",
            RegionUnion::BC => "BC",
            RegionUnion::C => "C",
            RegionUnion::ABC => "ABC",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL
            .into_iter()
            .find(|r| r.label().eq_ignore_ascii_case(s))
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct RegionPartition {
    size: usize,
    /// Label of every bond, indexed by bond id.
    labels: Vec<Region>,
    /// `(row, col)` cell of every tensor node in the 5x5 cell grid.
    node_cells: Vec<(usize, usize)>,
}

const A_CELLS: [(usize, usize); 3] = [(1, 1), (1, 2), (1, 3)];
const B_CELLS: [(usize, usize); 3] = [(3, 1), (3, 2), (3, 3)];
const C_CELLS: [(usize, usize); 2] = [(2, 1), (2, 3)];

fn cell_region(cell: (usize, usize)) -> Region {
    if A_CELLS.contains(&cell) {
        Region::A
    } else if B_CELLS.contains(&cell) {
        Region::B
    } else if C_CELLS.contains(&cell) {
        Region::C
    } else {
        Region::Complement
    }
}

/// Splits the bonds into the Levin-Wen regions on a 5x5 grid of cells.
///
/// Node coordinate `i` falls into cell `ceil(i / s) - 1` (clamped at 0) with
/// `s = L / 5`, so nodes sitting on a cell border go to the lower cell.
pub fn levin_wen_regions(geometry: &LatticeGeometry) -> Result<RegionPartition> {
    let l = geometry.size();
    if !l.is_multiple_of(5) {
        return Err(Error::UnsupportedPartition(l));
    }
    let step = l / 5;
    let cell_of = |i: usize| if i == 0 { 0 } else { ((i - 1) / step).min(4) };
    let node_cells: Vec<_> = (0..geometry.n_nodes())
        .map(|n| {
            let (r, c) = geometry.node_position(n);
            (cell_of(r), cell_of(c))
        })
        .collect();
    let labels = geometry
        .bonds()
        .iter()
        .map(|b| cell_region(node_cells[b.owner]))
        .collect();
    Ok(RegionPartition {
        size: l,
        labels,
        node_cells,
    })
}

impl RegionPartition {
    pub fn label(&self, bond: usize) -> Region {
        self.labels[bond]
    }

    pub fn labels(&self) -> &[Region] {
        &self.labels
    }

    pub fn node_cell(&self, node: usize) -> (usize, usize) {
        self.node_cells[node]
    }

    pub fn bonds(&self, region: Region) -> Vec<usize> {
        self.select(|r| r == region)
    }

    pub fn union(&self, union: RegionUnion) -> Vec<usize> {
        self.select(|r| union.contains(r))
    }

    /// Membership mask of a region union, indexed by bond id.
    pub fn mask(&self, union: RegionUnion) -> Vec<bool> {
        self.labels.iter().map(|&r| union.contains(r)).collect()
    }

    fn select(&self, keep: impl Fn(Region) -> bool) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, &r)| keep(r))
            .map(|(i, _)| i)
            .collect()
    }

    pub fn size(&self) -> usize {
        self.size
    }
}

/// A straight string of bonds crossed by a dual-lattice segment.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct AnyonPath {
    pub bonds: Vec<usize>,
    pub length: usize,
    pub start_col: usize,
}

impl AnyonPath {
    pub fn is_empty(&self) -> bool {
        self.bonds.is_empty()
    }

    pub fn describe(&self) -> String {
        format!("diag(col={},len={})", self.start_col, self.length)
    }
}

/// Default path length, `floor(L / 2)`.
pub fn default_path_length(geometry: &LatticeGeometry) -> usize {
    geometry.size() / 2
}

/// Dual-lattice segment of `length` bonds entering from the top-right corner.
pub fn anyon_path(geometry: &LatticeGeometry, length: usize) -> Result<AnyonPath> {
    anyon_path_from(geometry, geometry.size(), length)
}

/// Dual-lattice segment entering the system at top-boundary node `(0, start_col)`.
///
/// The segment runs along a diagonal of the tensor grid, which is a lattice
/// axis of the tilted Ising lattice. It alternately crosses the down-left bond
/// of node `(k, start_col - k)` and the up-right bond of node
/// `(k + 1, start_col - k - 1)`.
pub fn anyon_path_from(
    geometry: &LatticeGeometry,
    start_col: usize,
    length: usize,
) -> Result<AnyonPath> {
    let l = geometry.size();
    if length > l || start_col > l {
        return Err(Error::PathTooLong { length, size: l });
    }
    let mut bonds = Vec::with_capacity(length);
    let mut k = 0usize;
    while bonds.len() < length {
        if k > start_col || k > l {
            return Err(Error::PathTooLong { length, size: l });
        }
        let col = start_col - k;
        if k >= 1 {
            match geometry.bond_at(geometry.node_index(k, col), Leg::Up, Leg::Right) {
                Some(b) => bonds.push(b),
                None => return Err(Error::PathTooLong { length, size: l }),
            }
        }
        if bonds.len() < length {
            if k >= l || col == 0 {
                return Err(Error::PathTooLong { length, size: l });
            }
            let b = geometry
                .bond_at(geometry.node_index(k, col), Leg::Down, Leg::Left)
                .expect("down-left bond exists away from the bottom and left edges");
            bonds.push(b);
        }
        k += 1;
    }
    Ok(AnyonPath {
        bonds,
        length,
        start_col,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn l5_has_36_nodes() {
        let g = build_lattice(5).unwrap();
        assert_eq!(g.n_nodes(), 36);
    }

    #[test]
    fn l1_by_hand() {
        let g = build_lattice(1).unwrap();
        assert_eq!((g.n_nodes(), g.n_spins(), g.n_bonds()), (4, 4, 4));
        for n in 0..4 {
            assert_eq!(g.node_bonds(n).len(), 1);
        }
        // top-left corner couples its right leg (top spin) to its down leg (left spin)
        let b = g.bond(g.node_bonds(0)[0]);
        assert_eq!(b.legs, [Leg::Right, Leg::Down]);
        assert_eq!(b.spins, [0, 2]);
    }

    #[test]
    fn rejects_nonpositive_size() {
        assert!(matches!(build_lattice(0), Err(Error::InvalidSize(0))));
        assert!(matches!(build_lattice(-3), Err(Error::InvalidSize(-3))));
    }

    #[test]
    fn ownership_counts() {
        for l in 1..=7 {
            let g = build_lattice(l).unwrap();
            let l = l as usize;
            assert_eq!(g.n_spins(), 2 * l * (l + 1));
            assert_eq!(g.n_nodes(), (l + 1) * (l + 1));
            let total: usize = (0..g.n_nodes()).map(|n| g.node_bonds(n).len()).sum();
            assert_eq!(total, g.n_bonds());
            for n in 0..g.n_nodes() {
                let (r, c) = g.node_position(n);
                let edge = (r == 0 || r == l) as usize + (c == 0 || c == l) as usize;
                let expected = [4, 2, 1][edge];
                assert_eq!(g.node_bonds(n).len(), expected, "node {n} at ({r},{c})");
                for &b in g.node_bonds(n) {
                    assert_eq!(g.bond(b).owner, n);
                }
            }
        }
    }

    #[test]
    fn every_spin_has_two_to_four_bonds() {
        let g = build_lattice(4).unwrap();
        let mut degree = vec![0; g.n_spins()];
        for b in g.bonds() {
            degree[b.spins[0]] += 1;
            degree[b.spins[1]] += 1;
        }
        assert!(degree.iter().all(|&d| (2..=4).contains(&d)));
    }

    #[test]
    fn plaquettes_cover_each_bond_at_most_twice() {
        let g = build_lattice(3).unwrap();
        let mut count = vec![0; g.n_bonds()];
        for p in g.plaquettes() {
            for b in p {
                count[b] += 1;
            }
        }
        assert!(count.iter().all(|&c| (1..=2).contains(&c)));
    }

    fn grid_adjacent(a: (usize, usize), b: (usize, usize)) -> bool {
        a.0.abs_diff(b.0) + a.1.abs_diff(b.1) == 1
    }

    #[test]
    fn levin_wen_l5_disjoint_and_separated() {
        let g = build_lattice(5).unwrap();
        let p = levin_wen_regions(&g).unwrap();
        let a: HashSet<_> = p.bonds(Region::A).into_iter().collect();
        let b: HashSet<_> = p.bonds(Region::B).into_iter().collect();
        let c: HashSet<_> = p.bonds(Region::C).into_iter().collect();
        let d: HashSet<_> = p.bonds(Region::Complement).into_iter().collect();
        assert!(!a.is_empty() && !b.is_empty() && !c.is_empty());
        assert_eq!(a.len() + b.len() + c.len() + d.len(), g.n_bonds());
        assert!(a.is_disjoint(&b) && a.is_disjoint(&c) && b.is_disjoint(&c));
        for &ba in &a {
            for &bb in &b {
                let na = g.node_position(g.bond(ba).owner);
                let nb = g.node_position(g.bond(bb).owner);
                assert!(!grid_adjacent(na, nb) && na != nb);
            }
        }
    }

    fn complement_components(cells: &HashSet<(usize, usize)>) -> Vec<HashSet<(usize, usize)>> {
        let mut seen = HashSet::new();
        let mut comps = Vec::new();
        for &start in cells {
            if !seen.insert(start) {
                continue;
            }
            let mut comp = HashSet::from([start]);
            let mut stack = vec![start];
            while let Some(cur) = stack.pop() {
                for &next in cells {
                    if grid_adjacent(cur, next) && seen.insert(next) {
                        comp.insert(next);
                        stack.push(next);
                    }
                }
            }
            comps.push(comp);
        }
        comps
    }

    #[test]
    fn levin_wen_l5_complement_has_hole_and_exterior() {
        let g = build_lattice(5).unwrap();
        let p = levin_wen_regions(&g).unwrap();
        let cells: HashSet<_> = (0..5)
            .flat_map(|r| (0..5).map(move |c| (r, c)))
            .filter(|&cell| cell_region(cell) == Region::Complement)
            .collect();
        assert_eq!(cells.len(), 17);
        let mut sizes: Vec<_> = complement_components(&cells)
            .iter()
            .map(|c| c.len())
            .collect();
        sizes.sort();
        assert_eq!(sizes, vec![1, 16]);

        // same topology at the level of tensor nodes
        for l in [5, 10] {
            let g = build_lattice(l).unwrap();
            let p = levin_wen_regions(&g).unwrap();
            let nodes: HashSet<_> = g
                .bonds()
                .iter()
                .enumerate()
                .filter(|(i, _)| p.label(*i) == Region::Complement)
                .map(|(_, b)| g.node_position(b.owner))
                .collect();
            assert_eq!(complement_components(&nodes).len(), 2, "L={l}");
        }
        let _ = p;
    }

    #[test]
    fn levin_wen_rejects_non_multiple_of_five() {
        let g = build_lattice(7).unwrap();
        assert!(matches!(
            levin_wen_regions(&g),
            Err(Error::UnsupportedPartition(7))
        ));
    }

    #[test]
    fn levin_wen_is_deterministic() {
        let g = build_lattice(10).unwrap();
        let a = levin_wen_regions(&g).unwrap();
        let b = levin_wen_regions(&g).unwrap();
        assert_eq!(a.labels(), b.labels());
    }

    #[test]
    fn unions_are_consistent() {
        let g = build_lattice(5).unwrap();
        let p = levin_wen_regions(&g).unwrap();
        let n = |r| p.bonds(r).len();
        assert_eq!(p.union(RegionUnion::AC).len(), n(Region::A) + n(Region::C));
        assert_eq!(p.union(RegionUnion::BC).len(), n(Region::B) + n(Region::C));
        assert_eq!(
            p.union(RegionUnion::ABC).len(),
            n(Region::A) + n(Region::B) + n(Region::C)
        );
        assert_eq!(
            p.mask(RegionUnion::C).iter().filter(|&&m| m).count(),
            n(Region::C)
        );
    }

    fn share_plaquette(g: &LatticeGeometry, a: usize, b: usize) -> bool {
        g.plaquettes()
            .iter()
            .any(|p| p.contains(&a) && p.contains(&b))
    }

    #[test]
    fn anyon_path_consecutive_on_dual_lattice() {
        let g = build_lattice(5).unwrap();
        let path = anyon_path(&g, 2).unwrap();
        assert_eq!(path.bonds.len(), 2);
        assert!(share_plaquette(&g, path.bonds[0], path.bonds[1]));

        let long = anyon_path(&g, 5).unwrap();
        for w in long.bonds.windows(2) {
            assert!(share_plaquette(&g, w[0], w[1]));
        }
        let unique: HashSet<_> = long.bonds.iter().collect();
        assert_eq!(unique.len(), 5);
        // first bond touches the open boundary: it lies on exactly one plaquette
        let on = g
            .plaquettes()
            .iter()
            .filter(|p| p.contains(&long.bonds[0]))
            .count();
        assert_eq!(on, 1);
    }

    #[test]
    fn anyon_path_is_straight() {
        // consecutive plaquettes visited by the path advance by one diagonal step
        let g = build_lattice(6).unwrap();
        let path = anyon_path(&g, 6).unwrap();
        let owners: Vec<_> = path
            .bonds
            .iter()
            .map(|&b| g.node_position(g.bond(b).owner))
            .collect();
        for w in owners.windows(2) {
            let (r0, c0) = w[0];
            let (r1, c1) = w[1];
            assert!(r1 >= r0 && c1 <= c0);
            assert!(r1 - r0 + c0 - c1 <= 2);
        }
    }

    #[test]
    fn anyon_path_edge_cases() {
        let g = build_lattice(5).unwrap();
        assert!(anyon_path(&g, 0).unwrap().is_empty());
        assert!(matches!(anyon_path(&g, 6), Err(Error::PathTooLong { .. })));
        assert_eq!(default_path_length(&g), 2);
        for l in 1..=8 {
            let g = build_lattice(l).unwrap();
            assert_eq!(anyon_path(&g, l as usize).unwrap().bonds.len(), l as usize);
        }
    }

    #[test]
    fn geometry_exports_json() {
        let g = build_lattice(2).unwrap();
        let v = g.to_json();
        assert_eq!(v["bonds"].as_array().unwrap().len(), 16);
        assert_eq!(v["spins"].as_array().unwrap().len(), 12);
        assert!(v["region_labels"].is_null());
        let v = build_lattice(5).unwrap().to_json();
        let labels = v["region_labels"].as_array().unwrap();
        assert_eq!(labels.len(), 100);
        assert!(labels.iter().any(|l| l == "A"));
    }
}
