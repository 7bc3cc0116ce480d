//! Structured meshes over the cube `(-2, 2)^3`, uniform time grids and
//! overlapping space-time decompositions.
//!
//! Nodes are numbered lexicographically with `x1` fastest. Each cubic cell is
//! split into six tetrahedra along its main diagonal (Kuhn subdivision), which
//! yields a conforming mesh without hanging faces.

use std::ops::Range;

use crate::{Error, Result};

/// Half-width of the cube in every direction (`L = S = H = 2`).
pub const HALF_WIDTH: f64 = 2.0;

/// Volume of the computational domain.
pub const DOMAIN_VOLUME: f64 = 64.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BoundaryTag {
    Interior,
    /// `|x1| = L` or `|x2| = S`.
    Dirichlet,
    /// `|x3| = H` and not Dirichlet.
    Neumann,
}

#[derive(Clone, Debug)]
pub struct SpatialMesh {
    cells: usize,
    h: f64,
    nodes: Vec<[f64; 3]>,
    tets: Vec<[usize; 4]>,
    tags: Vec<BoundaryTag>,
}

impl SpatialMesh {
    /// Uniform mesh with `cells` cells per axis.
    pub fn build(cells: usize) -> Result<Self> {
        if cells == 0 {
            return Err(Error::InvalidArgument("mesh needs at least one cell per axis".into()));
        }
        let np = cells + 1;
        let mut nodes = Vec::with_capacity(np * np * np);
        let mut tags = Vec::with_capacity(np * np * np);
        for k in 0..np {
            for j in 0..np {
                for i in 0..np {
                    nodes.push([
                        axis_coordinate(i, cells),
                        axis_coordinate(j, cells),
                        axis_coordinate(k, cells),
                    ]);
                    let side = |a: usize| a == 0 || a == cells;
                    let tag = if side(i) || side(j) {
                        BoundaryTag::Dirichlet
                    } else if side(k) {
                        BoundaryTag::Neumann
                    } else {
                        BoundaryTag::Interior
                    };
                    tags.push(tag);
                }
            }
        }

        let mut mesh = SpatialMesh {
            cells,
            h: 2.0 * HALF_WIDTH / cells as f64,
            nodes,
            tets: Vec::with_capacity(6 * cells * cells * cells),
            tags,
        };

        const PERMUTATIONS: [[usize; 3]; 6] = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
        for k in 0..cells {
            for j in 0..cells {
                for i in 0..cells {
                    for perm in PERMUTATIONS {
                        let mut corner = [i, j, k];
                        let mut tet = [0usize; 4];
                        tet[0] = mesh.node_index(corner[0], corner[1], corner[2]);
                        for (step, &axis) in perm.iter().enumerate() {
                            corner[axis] += 1;
                            tet[step + 1] = mesh.node_index(corner[0], corner[1], corner[2]);
                        }
                        if mesh.signed_volume(&tet) < 0.0 {
                            tet.swap(2, 3);
                        }
                        mesh.tets.push(tet);
                    }
                }
            }
        }
        Ok(mesh)
    }

    pub fn cells(&self) -> usize {
        self.cells
    }

    /// Cell edge length.
    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn nodes_per_axis(&self) -> usize {
        self.cells + 1
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> &[[f64; 3]] {
        &self.nodes
    }

    pub fn tets(&self) -> &[[usize; 4]] {
        &self.tets
    }

    pub fn tags(&self) -> &[BoundaryTag] {
        &self.tags
    }

    pub fn tag(&self, node: usize) -> BoundaryTag {
        self.tags[node]
    }

    pub fn is_dirichlet(&self, node: usize) -> bool {
        self.tags[node] == BoundaryTag::Dirichlet
    }

    pub fn node_index(&self, i: usize, j: usize, k: usize) -> usize {
        let np = self.cells + 1;
        i + np * (j + np * k)
    }

    pub fn node_ijk(&self, node: usize) -> [usize; 3] {
        let np = self.cells + 1;
        [node % np, (node / np) % np, node / (np * np)]
    }

    /// Coordinate of grid line `i` along any axis.
    pub fn axis_coordinate(&self, i: usize) -> f64 {
        axis_coordinate(i, self.cells)
    }

    pub fn signed_volume(&self, tet: &[usize; 4]) -> f64 {
        let p: [[f64; 3]; 4] = tet.map(|n| self.nodes[n]);
        tet_signed_volume(&p)
    }

    /// Nearest mesh node to `point`; rejects points outside the closed cube.
    pub fn nearest_node(&self, point: [f64; 3]) -> Result<usize> {
        let tol = 1e-12 * HALF_WIDTH;
        let mut ijk = [0usize; 3];
        for (axis, &x) in point.iter().enumerate() {
            if !x.is_finite() || x < -HALF_WIDTH - tol || x > HALF_WIDTH + tol {
                return Err(Error::InvalidArgument(format!(
                    "point {point:?} lies outside the domain"
                )));
            }
            let s = ((x + HALF_WIDTH) / self.h).round();
            ijk[axis] = (s.max(0.0) as usize).min(self.cells);
        }
        Ok(self.node_index(ijk[0], ijk[1], ijk[2]))
    }

    /// Boundary triangles lying on the Neumann faces `|x3| = H`.
    pub fn neumann_faces(&self) -> Vec<[usize; 3]> {
        const FACES: [[usize; 3]; 4] = [[1, 2, 3], [0, 2, 3], [0, 1, 3], [0, 1, 2]];
        let mut faces = Vec::new();
        for tet in &self.tets {
            for face in FACES {
                let tri = face.map(|v| tet[v]);
                let ks = tri.map(|n| self.node_ijk(n)[2]);
                if ks.iter().all(|&k| k == 0) || ks.iter().all(|&k| k == self.cells) {
                    faces.push(tri);
                }
            }
        }
        faces
    }

    /// For every node, the tetrahedra that contain it.
    pub fn node_to_tets(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.num_nodes()];
        for (t, tet) in self.tets.iter().enumerate() {
            for &n in tet {
                adj[n].push(t);
            }
        }
        adj
    }
}

fn axis_coordinate(i: usize, cells: usize) -> f64 {
    -HALF_WIDTH + 2.0 * HALF_WIDTH * i as f64 / cells as f64
}

pub(crate) fn tet_signed_volume(p: &[[f64; 3]; 4]) -> f64 {
    let d = |a: usize| [p[a][0] - p[0][0], p[a][1] - p[0][1], p[a][2] - p[0][2]];
    let (a, b, c) = (d(1), d(2), d(3));
    let det =
        a[0] * (b[1] * c[2] - b[2] * c[1]) - a[1] * (b[0] * c[2] - b[2] * c[0]) + a[2] * (b[0] * c[1] - b[1] * c[0]);
    det / 6.0
}

/// Uniform partition `0 = t^0 < ... < t^M = T`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimeGrid {
    steps: usize,
    t_final: f64,
}

impl TimeGrid {
    pub fn build(steps: usize, t_final: f64) -> Result<Self> {
        if steps < 2 {
            return Err(Error::InvalidArgument(format!(
                "time grid needs at least 2 steps, got {steps}"
            )));
        }
        if !(t_final > 0.0 && t_final.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "final time must be positive, got {t_final}"
            )));
        }
        Ok(TimeGrid { steps, t_final })
    }

    /// Number of time steps `M`.
    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Number of time levels `M + 1`.
    pub fn levels(&self) -> usize {
        self.steps + 1
    }

    pub fn t_final(&self) -> f64 {
        self.t_final
    }

    pub fn tau(&self) -> f64 {
        self.t_final / self.steps as f64
    }

    /// `t^n`; exact at both ends.
    pub fn time(&self, n: usize) -> f64 {
        if n == self.steps {
            self.t_final
        } else {
            self.t_final * n as f64 / self.steps as f64
        }
    }
}

/// One axis (or the time axis) of a decomposition.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AxisPart {
    /// Owned cells, inclusive.
    pub owned_cells: (usize, usize),
    /// Owned cells grown by the overlap, inclusive and clamped.
    pub extended_cells: (usize, usize),
    /// Owned grid points; the owned point ranges of all parts partition the axis.
    pub owned_points: Range<usize>,
    /// Owned points grown by the overlap on each side, clamped.
    pub extended_points: Range<usize>,
}

/// Split `cells` cells (and `cells + 1` grid points) into `parts` contiguous
/// pieces; remainder cells go to the last piece.
pub fn split_axis(cells: usize, parts: usize, overlap: usize) -> Result<Vec<AxisPart>> {
    if parts == 0 || parts > cells {
        return Err(Error::InvalidArgument(format!(
            "cannot split {cells} cells into {parts} parts"
        )));
    }
    let width = cells / parts;
    Ok((0..parts)
        .map(|q| {
            let first = q * width;
            let last = if q + 1 == parts { cells - 1 } else { (q + 1) * width - 1 };
            let point_end = if q + 1 == parts { cells + 1 } else { last + 1 };
            AxisPart {
                owned_cells: (first, last),
                extended_cells: (first.saturating_sub(overlap), (last + overlap).min(cells - 1)),
                owned_points: first..point_end,
                extended_points: first.saturating_sub(overlap)..(point_end + overlap).min(cells + 1),
            }
        })
        .collect())
}

/// Space-time subdomain `Ω_i × (T_{j-1}, T_j)` and its overlapping extension.
#[derive(Clone, Debug)]
pub struct Subdomain {
    pub id: usize,
    /// Part index along x1, x2, x3.
    pub space_part: [usize; 3],
    pub time_part: usize,
    /// Owned grid-point ranges along x1, x2, x3 and time levels.
    pub owned: [Range<usize>; 4],
    pub extended: [Range<usize>; 4],
}

impl Subdomain {
    fn count(ranges: &[Range<usize>; 4]) -> usize {
        ranges.iter().map(|r| r.len()).product()
    }

    pub fn owned_len(&self) -> usize {
        Self::count(&self.owned)
    }

    pub fn extended_len(&self) -> usize {
        Self::count(&self.extended)
    }
}

/// Overlapping decomposition of the space-time cylinder `Θ = Ω × (0, T)`.
///
/// Point blocks are indexed as `step * num_nodes + node`, matching the KKT
/// ordering; [`Self::owned_blocks`] and [`Self::extended_blocks`] return them
/// sorted.
#[derive(Clone, Debug)]
pub struct SpaceTimeDecomposition {
    cells: usize,
    steps: usize,
    parts: [usize; 3],
    time_parts: usize,
    overlap: usize,
    coarse: bool,
    subdomains: Vec<Subdomain>,
}

impl SpaceTimeDecomposition {
    pub fn build(
        mesh: &SpatialMesh,
        grid: &TimeGrid,
        parts: [usize; 3],
        time_parts: usize,
        overlap: usize,
    ) -> Result<Self> {
        if time_parts == 0 || time_parts > grid.steps() {
            return Err(Error::InvalidArgument(format!(
                "cannot split {} time steps into {time_parts} parts",
                grid.steps()
            )));
        }
        let axes: Vec<Vec<AxisPart>> = parts
            .iter()
            .map(|&p| split_axis(mesh.cells(), p, overlap))
            .collect::<Result<_>>()?;
        let time = split_axis(grid.steps(), time_parts, overlap)?;

        let mut subdomains = Vec::with_capacity(parts.iter().product::<usize>() * time_parts);
        for (tp, tpart) in time.iter().enumerate() {
            for (pz, zpart) in axes[2].iter().enumerate() {
                for (py, ypart) in axes[1].iter().enumerate() {
                    for (px, xpart) in axes[0].iter().enumerate() {
                        subdomains.push(Subdomain {
                            id: subdomains.len(),
                            space_part: [px, py, pz],
                            time_part: tp,
                            owned: [
                                xpart.owned_points.clone(),
                                ypart.owned_points.clone(),
                                zpart.owned_points.clone(),
                                tpart.owned_points.clone(),
                            ],
                            extended: [
                                xpart.extended_points.clone(),
                                ypart.extended_points.clone(),
                                zpart.extended_points.clone(),
                                tpart.extended_points.clone(),
                            ],
                        });
                    }
                }
            }
        }
        Ok(SpaceTimeDecomposition {
            cells: mesh.cells(),
            steps: grid.steps(),
            parts,
            time_parts,
            overlap,
            coarse: false,
            subdomains,
        })
    }

    /// Mark as a decomposition of the coarse level.
    pub fn into_coarse(mut self) -> Self {
        self.coarse = true;
        self
    }

    pub fn is_coarse(&self) -> bool {
        self.coarse
    }

    pub fn subdomains(&self) -> &[Subdomain] {
        &self.subdomains
    }

    pub fn len(&self) -> usize {
        self.subdomains.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subdomains.is_empty()
    }

    pub fn space_parts(&self) -> usize {
        self.parts.iter().product()
    }

    pub fn time_parts(&self) -> usize {
        self.time_parts
    }

    pub fn overlap(&self) -> usize {
        self.overlap
    }

    pub fn num_nodes(&self) -> usize {
        (self.cells + 1).pow(3)
    }

    /// Total number of point blocks `N (M + 1)`.
    pub fn num_blocks(&self) -> usize {
        self.num_nodes() * (self.steps + 1)
    }

    fn blocks(&self, ranges: &[Range<usize>; 4]) -> Vec<usize> {
        let np = self.cells + 1;
        let n_nodes = self.num_nodes();
        let mut out = Vec::with_capacity(Subdomain::count(ranges));
        for t in ranges[3].clone() {
            for k in ranges[2].clone() {
                for j in ranges[1].clone() {
                    let base = t * n_nodes + np * (j + np * k);
                    out.extend(ranges[0].clone().map(|i| base + i));
                }
            }
        }
        out
    }

    pub fn owned_blocks(&self, sd: &Subdomain) -> Vec<usize> {
        self.blocks(&sd.owned)
    }

    pub fn extended_blocks(&self, sd: &Subdomain) -> Vec<usize> {
        self.blocks(&sd.extended)
    }
}

/// Fine and coarse meshes whose coarse nodes are a subset of the fine ones.
#[derive(Clone, Debug)]
pub struct NestedPair {
    pub fine: SpatialMesh,
    pub fine_grid: TimeGrid,
    pub coarse: SpatialMesh,
    pub coarse_grid: TimeGrid,
    pub ratio_space: usize,
    pub ratio_time: usize,
}

impl NestedPair {
    pub fn build(
        fine_cells: usize,
        fine_steps: usize,
        ratio_space: usize,
        ratio_time: usize,
        t_final: f64,
    ) -> Result<Self> {
        if ratio_space == 0 || ratio_time == 0 {
            return Err(Error::InvalidArgument("coarsening ratios must be positive".into()));
        }
        if !fine_cells.is_multiple_of(ratio_space) || !fine_steps.is_multiple_of(ratio_time) {
            return Err(Error::InvalidArgument(format!(
                "non-nested coarsening: {fine_cells} cells / {ratio_space}, {fine_steps} steps / {ratio_time}"
            )));
        }
        Ok(NestedPair {
            fine: SpatialMesh::build(fine_cells)?,
            fine_grid: TimeGrid::build(fine_steps, t_final)?,
            coarse: SpatialMesh::build(fine_cells / ratio_space)?,
            coarse_grid: TimeGrid::build(fine_steps / ratio_time, t_final)?,
            ratio_space,
            ratio_time,
        })
    }

    /// Fine node coinciding with coarse node `node`.
    pub fn fine_node_of(&self, node: usize) -> usize {
        let [i, j, k] = self.coarse.node_ijk(node);
        let r = self.ratio_space;
        self.fine.node_index(r * i, r * j, r * k)
    }

    /// Fine time level coinciding with coarse level `n`.
    pub fn fine_level_of(&self, n: usize) -> usize {
        n * self.ratio_time
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_cell_mesh() {
        let m = SpatialMesh::build(1).unwrap();
        assert_eq!(m.num_nodes(), 8);
        assert_eq!(m.tets().len(), 6);
        assert_eq!(m.h(), 4.0);
        assert!(m.tags().iter().all(|&t| t != BoundaryTag::Interior));
    }

    #[test]
    fn two_cell_mesh_has_one_interior_node_at_origin() {
        let m = SpatialMesh::build(2).unwrap();
        assert_eq!(m.num_nodes(), 27);
        assert_eq!(m.tets().len(), 48);
        let interior: Vec<usize> = (0..27).filter(|&n| m.tag(n) == BoundaryTag::Interior).collect();
        assert_eq!(interior.len(), 1);
        assert_eq!(m.nodes()[interior[0]], [0.0, 0.0, 0.0]);
    }

    #[test]
    fn zero_cells_rejected() {
        assert!(SpatialMesh::build(0).is_err());
    }

    #[test]
    fn tags_follow_face_definitions() {
        let m = SpatialMesh::build(8).unwrap();
        let a = m.nearest_node([2.0, 0.5, -1.0]).unwrap();
        assert_eq!(m.nodes()[a], [2.0, 0.5, -1.0]);
        assert_eq!(m.tag(a), BoundaryTag::Dirichlet);
        let b = m.nearest_node([0.5, 0.5, 2.0]).unwrap();
        assert_eq!(m.tag(b), BoundaryTag::Neumann);
        // corner edge: Dirichlet wins
        let c = m.nearest_node([2.0, 0.0, 2.0]).unwrap();
        assert_eq!(m.tag(c), BoundaryTag::Dirichlet);
    }

    #[test]
    fn volumes_positive_and_sum_to_domain() {
        for n in [1, 2, 3, 5] {
            let m = SpatialMesh::build(n).unwrap();
            let mut total = 0.0;
            for tet in m.tets() {
                let v = m.signed_volume(tet);
                assert!(v > 0.0);
                total += v;
            }
            assert!((total - DOMAIN_VOLUME).abs() <= 1e-12 * DOMAIN_VOLUME);
        }
    }

    #[test]
    fn neumann_faces_cover_top_and_bottom() {
        let m = SpatialMesh::build(3).unwrap();
        let faces = m.neumann_faces();
        // two triangles per boundary square, two faces of 3x3 squares
        assert_eq!(faces.len(), 2 * 2 * 9);
    }

    #[test]
    fn time_grid_values() {
        let g = TimeGrid::build(4, 1.0).unwrap();
        assert_eq!(g.tau(), 0.25);
        assert_eq!(g.time(2), 0.5);
        assert_eq!(g.time(0), 0.0);
        assert_eq!(g.time(4), 1.0);
        for m in [39, 47] {
            let g = TimeGrid::build(m, 1.0).unwrap();
            assert_eq!(g.tau(), 1.0 / m as f64);
            assert_eq!(g.time(m), 1.0);
        }
        assert!(TimeGrid::build(1, 1.0).is_err());
    }

    #[test]
    fn axis_split_example() {
        let parts = split_axis(8, 2, 1).unwrap();
        assert_eq!(parts[0].owned_cells, (0, 3));
        assert_eq!(parts[1].owned_cells, (4, 7));
        assert_eq!(parts[0].extended_cells, (0, 4));
        assert_eq!(parts[1].extended_cells, (3, 7));
        assert_eq!(parts[0].owned_points, 0..4);
        assert_eq!(parts[1].owned_points, 4..9);
        assert_eq!(parts[0].extended_points, 0..5);
        assert_eq!(parts[1].extended_points, 3..9);
    }

    #[test]
    fn remainder_goes_to_last_part() {
        let parts = split_axis(10, 3, 0).unwrap();
        assert_eq!(parts[0].owned_cells, (0, 2));
        assert_eq!(parts[1].owned_cells, (3, 5));
        assert_eq!(parts[2].owned_cells, (6, 9));
        assert!(split_axis(2, 3, 0).is_err());
    }

    #[test]
    fn decomposition_counts() {
        let m = SpatialMesh::build(8).unwrap();
        let g = TimeGrid::build(8, 1.0).unwrap();
        let d = SpaceTimeDecomposition::build(&m, &g, [2, 2, 2], 2, 1).unwrap();
        assert_eq!(d.len(), 16);
        let mut seen = vec![0u8; d.num_blocks()];
        for sd in d.subdomains() {
            for b in d.owned_blocks(sd) {
                seen[b] += 1;
            }
        }
        assert_eq!(seen.len(), 9usize.pow(3) * 9);
        assert!(seen.iter().all(|&c| c == 1));
        assert!(SpaceTimeDecomposition::build(&m, &g, [2, 2, 2], 9, 1).is_err());
        assert!(SpaceTimeDecomposition::build(&m, &g, [9, 1, 1], 1, 1).is_err());
    }

    #[test]
    fn single_subdomain_extends_to_everything() {
        let m = SpatialMesh::build(3).unwrap();
        let g = TimeGrid::build(4, 1.0).unwrap();
        for overlap in [0, 1, 3] {
            let d = SpaceTimeDecomposition::build(&m, &g, [1, 1, 1], 1, overlap).unwrap();
            let ext = d.extended_blocks(&d.subdomains()[0]);
            assert_eq!(ext, (0..d.num_blocks()).collect::<Vec<_>>());
        }
    }

    #[test]
    fn nested_pairs() {
        let p = NestedPair::build(16, 16, 2, 2, 1.0).unwrap();
        assert_eq!(p.coarse.cells(), 8);
        assert_eq!(p.coarse_grid.steps(), 8);
        for c in 0..p.coarse.num_nodes() {
            assert_eq!(p.coarse.nodes()[c], p.fine.nodes()[p.fine_node_of(c)]);
        }
        for n in 0..=8 {
            assert_eq!(p.coarse_grid.time(n), p.fine_grid.time(p.fine_level_of(n)));
        }

        let p = NestedPair::build(9, 8, 3, 1, 1.0).unwrap();
        assert_eq!(p.coarse.cells(), 3);
        assert_eq!(p.coarse_grid.steps(), 8);
        for c in 0..p.coarse.num_nodes() {
            let x = p.coarse.nodes()[c];
            let f = p.fine.nearest_node(x).unwrap();
            assert_eq!(p.fine.nodes()[f], x);
            assert_eq!(f, p.fine_node_of(c));
        }

        let p = NestedPair::build(40, 40, 2, 2, 1.0).unwrap();
        let fine = p.fine.num_nodes() * p.fine_grid.levels();
        let coarse = p.coarse.num_nodes() * p.coarse_grid.levels();
        let ratio = fine as f64 / coarse as f64;
        assert!((ratio - 16.0).abs() < 1.5, "ratio {ratio}");

        assert!(NestedPair::build(9, 8, 2, 2, 1.0).is_err());
        assert!(NestedPair::build(8, 9, 2, 2, 1.0).is_err());
    }
}
