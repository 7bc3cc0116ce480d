//! P1 finite elements on the tetrahedral mesh and the 1D temporal matrices.
//!
//! All spatial matrices produced here share one sparsity pattern, the node
//! adjacency graph of the mesh, so they can be combined entrywise.

use crate::linalg::CsrMatrix;
use crate::mesh::{tet_signed_volume, SpatialMesh, TimeGrid, HALF_WIDTH};
use crate::{par, Error, Result};

/// Element matrices of one tetrahedron.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ElementMatrices {
    pub volume: f64,
    /// `(a ∇φ_i, ∇φ_j)`
    pub stiffness: [[f64; 4]; 4],
    /// `(∇φ_i, ∇φ_j)`
    pub unit_stiffness: [[f64; 4]; 4],
    /// `(φ_i, φ_j)`
    pub mass: [[f64; 4]; 4],
    /// `(∇·(v φ_i), φ_j)`; for constant `v` every row is constant.
    pub convection: [[f64; 4]; 4],
}

/// Gradients of the four barycentric coordinates.
pub fn barycentric_gradients(p: &[[f64; 3]; 4]) -> Result<([[f64; 3]; 4], f64)> {
    let volume = tet_signed_volume(p);
    if volume.abs() <= 1e-14 * edge_scale(p).powi(3) {
        return Err(Error::DegenerateElement { index: 0, volume });
    }
    let e: [[f64; 3]; 3] = std::array::from_fn(|k| std::array::from_fn(|c| p[k + 1][c] - p[0][c]));
    // Rows of the inverse transpose of [e1 e2 e3] via cross products.
    let cross = |a: [f64; 3], b: [f64; 3]| {
        [
            a[1] * b[2] - a[2] * b[1],
            a[2] * b[0] - a[0] * b[2],
            a[0] * b[1] - a[1] * b[0],
        ]
    };
    let det = 6.0 * volume;
    let g1 = cross(e[1], e[2]).map(|v| v / det);
    let g2 = cross(e[2], e[0]).map(|v| v / det);
    let g3 = cross(e[0], e[1]).map(|v| v / det);
    let g0 = std::array::from_fn(|c| -(g1[c] + g2[c] + g3[c]));
    Ok(([g0, g1, g2, g3], volume))
}

fn edge_scale(p: &[[f64; 3]; 4]) -> f64 {
    let mut s = 0.0f64;
    for a in 1..4 {
        for c in 0..3 {
            s = s.max((p[a][c] - p[0][c]).abs());
        }
    }
    s.max(f64::MIN_POSITIVE)
}

/// Exact P1 element integrals with diffusivity `a` constant on the element
/// and constant velocity `v`.
pub fn element_matrices(p: &[[f64; 3]; 4], a: f64, v: [f64; 3]) -> Result<ElementMatrices> {
    let (g, volume) = barycentric_gradients(p)?;
    if volume < 0.0 {
        return Err(Error::DegenerateElement { index: 0, volume });
    }
    let dot = |x: [f64; 3], y: [f64; 3]| x[0] * y[0] + x[1] * y[1] + x[2] * y[2];
    let mut out = ElementMatrices {
        volume,
        stiffness: [[0.0; 4]; 4],
        unit_stiffness: [[0.0; 4]; 4],
        mass: [[0.0; 4]; 4],
        convection: [[0.0; 4]; 4],
    };
    for i in 0..4 {
        let vg = dot(v, g[i]) * volume / 4.0;
        for j in 0..4 {
            let k = dot(g[i], g[j]) * volume;
            out.unit_stiffness[i][j] = k;
            out.stiffness[i][j] = a * k;
            out.mass[i][j] = volume / if i == j { 10.0 } else { 20.0 };
            out.convection[i][j] = vg;
        }
    }
    Ok(out)
}

/// Global spatial matrices over the node adjacency pattern.
#[derive(Clone, Debug)]
pub struct SpatialOperators {
    /// Diffusion `A`.
    pub stiffness: CsrMatrix,
    /// Mass `B`.
    pub mass: CsrMatrix,
    /// Convection `E`, stored as `e_ij = (∇·(vφ_i), φ_j)`.
    pub convection: CsrMatrix,
    /// Stiffness with unit coefficient, used by the regularization.
    pub unit_stiffness: CsrMatrix,
    /// Mass matrix of the Neumann boundary faces.
    pub face_mass: CsrMatrix,
}

impl SpatialOperators {
    pub fn dim(&self) -> usize {
        self.mass.dim()
    }

    /// `A + Eᵀ`: row `i` is the state equation tested with `φ_i`.
    pub fn state_transport(&self) -> CsrMatrix {
        let et = self
            .convection
            .transpose_same_pattern()
            .expect("adjacency pattern is symmetric");
        CsrMatrix::linear_combination(&[(1.0, &self.stiffness), (1.0, &et)]).expect("shared pattern")
    }

    /// `A + E`: row `i` is the adjoint equation tested with `φ_i`.
    pub fn adjoint_transport(&self) -> CsrMatrix {
        CsrMatrix::linear_combination(&[(1.0, &self.stiffness), (1.0, &self.convection)]).expect("shared pattern")
    }
}

/// Node adjacency pattern: `j` appears in row `i` iff both share a tetrahedron.
pub fn adjacency_pattern(mesh: &SpatialMesh) -> (Vec<usize>, Vec<usize>) {
    let node_tets = mesh.node_to_tets();
    let rows: Vec<Vec<usize>> = par::map_indexed(mesh.num_nodes(), |i| {
        let mut cols: Vec<usize> = node_tets[i].iter().flat_map(|&t| mesh.tets()[t]).collect();
        cols.sort_unstable();
        cols.dedup();
        cols
    });
    let mut row_ptr = Vec::with_capacity(rows.len() + 1);
    row_ptr.push(0);
    let mut cols = Vec::with_capacity(rows.iter().map(Vec::len).sum());
    for r in rows {
        cols.extend(r);
        row_ptr.push(cols.len());
    }
    (row_ptr, cols)
}

/// Assemble `A`, `B`, `E`, the unit stiffness and the Neumann face mass.
///
/// `a` is sampled at element centroids. Rows are assembled independently, so
/// the result does not depend on the worker count.
pub fn assemble_spatial<F>(mesh: &SpatialMesh, a: F, v: [f64; 3]) -> Result<SpatialOperators>
where
    F: Fn([f64; 3]) -> f64 + Sync + Send,
{
    let nodes = mesh.nodes();
    let elements: Vec<Result<ElementMatrices>> = par::map_slice(mesh.tets(), |tet| {
        let p = tet.map(|n| nodes[n]);
        let centroid = std::array::from_fn(|c| p.iter().map(|q| q[c]).sum::<f64>() / 4.0);
        element_matrices(&p, a(centroid), v)
    });
    let elements: Vec<ElementMatrices> = elements
        .into_iter()
        .enumerate()
        .map(|(t, e)| {
            e.map_err(|err| match err {
                Error::DegenerateElement { volume, .. } => Error::DegenerateElement { index: t, volume },
                other => other,
            })
        })
        .collect::<Result<_>>()?;

    let (row_ptr, cols) = adjacency_pattern(mesh);
    let n = mesh.num_nodes();
    let mut stiffness = CsrMatrix::zeros(n, row_ptr.clone(), cols.clone())?;
    let mut mass = stiffness.clone();
    let mut convection = stiffness.clone();
    let mut unit_stiffness = stiffness.clone();
    let mut face_mass = stiffness.clone();

    let node_tets = mesh.node_to_tets();
    let row_values: Vec<[Vec<f64>; 4]> = par::map_indexed(n, |i| {
        let start = row_ptr[i];
        let row_cols = &cols[start..row_ptr[i + 1]];
        let mut vals: [Vec<f64>; 4] = std::array::from_fn(|_| vec![0.0; row_cols.len()]);
        for &t in &node_tets[i] {
            let tet = mesh.tets()[t];
            let li = tet.iter().position(|&x| x == i).unwrap_or(0);
            let el = &elements[t];
            for (lj, &j) in tet.iter().enumerate() {
                let p = row_cols.binary_search(&j).unwrap_or(0);
                vals[0][p] += el.stiffness[li][lj];
                vals[1][p] += el.mass[li][lj];
                vals[2][p] += el.convection[li][lj];
                vals[3][p] += el.unit_stiffness[li][lj];
            }
        }
        vals
    });
    for (i, vals) in row_values.into_iter().enumerate() {
        let r = row_ptr[i]..row_ptr[i + 1];
        stiffness.values_mut()[r.clone()].copy_from_slice(&vals[0]);
        mass.values_mut()[r.clone()].copy_from_slice(&vals[1]);
        convection.values_mut()[r.clone()].copy_from_slice(&vals[2]);
        unit_stiffness.values_mut()[r].copy_from_slice(&vals[3]);
    }

    for tri in mesh.neumann_faces() {
        let area = triangle_area(&tri.map(|n| nodes[n]));
        for &i in &tri {
            for &j in &tri {
                let p = face_mass
                    .find(i, j)
                    .ok_or_else(|| Error::InvalidArgument("face edge outside mesh pattern".into()))?;
                face_mass.values_mut()[p] += area / if i == j { 6.0 } else { 12.0 };
            }
        }
    }

    Ok(SpatialOperators {
        stiffness,
        mass,
        convection,
        unit_stiffness,
        face_mass,
    })
}

fn triangle_area(p: &[[f64; 3]; 3]) -> f64 {
    let u: [f64; 3] = std::array::from_fn(|c| p[1][c] - p[0][c]);
    let w: [f64; 3] = std::array::from_fn(|c| p[2][c] - p[0][c]);
    let c = [
        u[1] * w[2] - u[2] * w[1],
        u[2] * w[0] - u[0] * w[2],
        u[0] * w[1] - u[1] * w[0],
    ];
    0.5 * (c[0] * c[0] + c[1] * c[1] + c[2] * c[2]).sqrt()
}

/// 1D mass and stiffness matrices of the hat functions on the time grid.
#[derive(Clone, Debug)]
pub struct TemporalOperators {
    tau: f64,
    levels: usize,
    /// `Mt[m][n] = (θ_m, θ_n)`
    pub mass: CsrMatrix,
    /// `Lt[m][n] = (θ'_m, θ'_n)`
    pub stiffness: CsrMatrix,
}

impl TemporalOperators {
    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    /// Entry of `Mt`; zero unless `|m - n| <= 1`.
    pub fn mt(&self, m: usize, n: usize) -> f64 {
        self.mass.get(m, n)
    }

    /// Entry of `Lt`.
    pub fn lt(&self, m: usize, n: usize) -> f64 {
        self.stiffness.get(m, n)
    }
}

pub fn assemble_temporal(grid: &TimeGrid) -> TemporalOperators {
    let levels = grid.levels();
    let tau = grid.tau();
    let mut row_ptr = vec![0];
    let mut cols = Vec::new();
    for m in 0..levels {
        cols.extend(m.saturating_sub(1)..(m + 2).min(levels));
        row_ptr.push(cols.len());
    }
    let mut mass = CsrMatrix::zeros(levels, row_ptr.clone(), cols.clone()).expect("tridiagonal pattern is well formed");
    let mut stiffness = mass.clone();
    for m in 0..levels {
        let end = m == 0 || m == levels - 1;
        for n in m.saturating_sub(1)..(m + 2).min(levels) {
            let (mv, lv) = if m == n {
                if end {
                    (tau / 3.0, 1.0 / tau)
                } else {
                    (2.0 * tau / 3.0, 2.0 / tau)
                }
            } else {
                (tau / 6.0, -1.0 / tau)
            };
            let p = mass.find(m, n).expect("entry in pattern");
            mass.values_mut()[p] = mv;
            stiffness.values_mut()[p] = lv;
        }
    }
    TemporalOperators {
        tau,
        levels,
        mass,
        stiffness,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum RegKind {
    /// `β1 ‖∂t f‖² + β2 ‖∇f‖²`
    H1H1,
    /// `β1 ‖∂t f‖² + β2 ‖f‖²`
    H1L2,
}

impl std::str::FromStr for RegKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "h1h1" => Ok(RegKind::H1H1),
            "h1l2" => Ok(RegKind::H1L2),
            _ => Err(Error::InvalidArgument(format!("unknown regularization kind `{s}`"))),
        }
    }
}

impl std::fmt::Display for RegKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            RegKind::H1H1 => "h1h1",
            RegKind::H1L2 => "h1l2",
        })
    }
}

/// Tikhonov regularization `β1/2 ‖∂t f‖² + β2/2 ‖·‖²` of the source.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RegularizationSpec {
    pub beta1: f64,
    pub beta2: f64,
    pub kind: RegKind,
}

impl RegularizationSpec {
    pub fn new(beta1: f64, beta2: f64, kind: RegKind) -> Result<Self> {
        let r = RegularizationSpec { beta1, beta2, kind };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta1 >= 0.0 && self.beta2 >= 0.0) || !self.beta1.is_finite() || !self.beta2.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "regularization weights must be finite and non-negative, got beta1={} beta2={}",
                self.beta1, self.beta2
            )));
        }
        if self.beta1 == 0.0 && self.beta2 == 0.0 {
            return Err(Error::InvalidArgument(
                "beta1 and beta2 are both zero; the source block would be singular".into(),
            ));
        }
        Ok(())
    }

    /// Spatial matrix multiplying `β2`.
    pub fn spatial_matrix<'a>(&self, ops: &'a SpatialOperators) -> &'a CsrMatrix {
        match self.kind {
            RegKind::H1H1 => &ops.unit_stiffness,
            RegKind::H1L2 => &ops.mass,
        }
    }

    /// Entry `p` (position in the shared spatial pattern) of the block
    /// `W^{mn} = β1 Lt[m,n] B + β2 Mt[m,n] S`.
    #[inline]
    pub fn w_entry(
        &self,
        spatial: &SpatialOperators,
        temporal: &TemporalOperators,
        m: usize,
        n: usize,
        p: usize,
    ) -> f64 {
        let b = spatial.mass.values()[p];
        let s = self.spatial_matrix(spatial).values()[p];
        self.beta1 * temporal.lt(m, n) * b + self.beta2 * temporal.mt(m, n) * s
    }
}

/// Measurement locations snapped to mesh nodes; the diagonal of `B3`.
#[derive(Clone, Debug, PartialEq)]
pub struct Measurements {
    /// Distinct node indices, ascending.
    pub nodes: Vec<usize>,
    /// `diag[i] = 1` at measured nodes, 0 elsewhere.
    pub diag: Vec<f64>,
}

impl Measurements {
    /// Mark the given node indices (duplicates collapse).
    pub fn from_nodes(num_nodes: usize, nodes: &[usize]) -> Result<Self> {
        let mut nodes = nodes.to_vec();
        nodes.sort_unstable();
        nodes.dedup();
        if let Some(&bad) = nodes.last().filter(|&&n| n >= num_nodes) {
            return Err(Error::InvalidArgument(format!(
                "node {bad} outside mesh of {num_nodes} nodes"
            )));
        }
        let mut diag = vec![0.0; num_nodes];
        for &n in &nodes {
            diag[n] = 1.0;
        }
        Ok(Measurements { nodes, diag })
    }

    pub fn trace(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_measured(&self, node: usize) -> bool {
        self.diag[node] != 0.0
    }
}

/// Snap each point to its nearest node and mark the distinct nodes.
pub fn build_b3(mesh: &SpatialMesh, points: &[[f64; 3]]) -> Result<Measurements> {
    let nodes = points
        .iter()
        .map(|&p| mesh.nearest_node(p))
        .collect::<Result<Vec<_>>>()?;
    Measurements::from_nodes(mesh.num_nodes(), &nodes)
}

/// `s × s × s` cell-centred points spread uniformly over the domain.
pub fn uniform_points(s: usize) -> Vec<[f64; 3]> {
    let c = |k: usize| -HALF_WIDTH + 2.0 * HALF_WIDTH * (k as f64 + 0.5) / s as f64;
    let mut pts = Vec::with_capacity(s * s * s);
    for k in 0..s {
        for j in 0..s {
            for i in 0..s {
                pts.push([c(i), c(j), c(k)]);
            }
        }
    }
    pts
}
