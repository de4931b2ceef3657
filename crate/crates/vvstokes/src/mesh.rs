//! Conforming tetrahedral meshes of the unit cube with oriented facets and
//! boundary-part labels.
//!
//! The structured generator uses the Kuhn split (six tetrahedra per subcube,
//! all sharing the cube diagonal), which is conforming across subcubes and
//! quasiuniform at every resolution. Facets are stored as sorted global
//! vertex triples; each interior facet's normal points from its lower-index
//! adjacent tetrahedron towards the higher-index one, and boundary normals
//! point outward. Assembly and dof-orientation logic rely on this convention.

use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("mesh resolution must be at least 1")]
    ZeroResolution,
    #[error("tetrahedron {0} is degenerate (zero volume)")]
    DegenerateTet(usize),
    #[error("boundary facet {0:?} has no label")]
    UnlabeledBoundaryFacet([usize; 3]),
    #[error("labeled facet {0:?} is not a boundary facet of the mesh")]
    LabelOnNonBoundaryFacet([usize; 3]),
    #[error("mesh parse error: {0}")]
    Parse(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FacetLabel {
    Interior,
    DirichletBoundary,
    NeumannBoundary,
}

/// An axis-aligned face of the unit cube, used to select the outflow part.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CubeFace {
    XMin,
    XMax,
    YMin,
    YMax,
    ZMin,
    ZMax,
}

impl CubeFace {
    fn contains(&self, c: &Vector3<f64>) -> bool {
        let eps = 1e-12;
        match self {
            CubeFace::XMin => c.x < eps,
            CubeFace::XMax => c.x > 1.0 - eps,
            CubeFace::YMin => c.y < eps,
            CubeFace::YMax => c.y > 1.0 - eps,
            CubeFace::ZMin => c.z < eps,
            CubeFace::ZMax => c.z > 1.0 - eps,
        }
    }
}

impl std::str::FromStr for CubeFace {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "xmin" | "x0" | "x=0" => Ok(CubeFace::XMin),
            "xmax" | "x1" | "x=1" => Ok(CubeFace::XMax),
            "ymin" | "y0" | "y=0" => Ok(CubeFace::YMin),
            "ymax" | "y1" | "y=1" => Ok(CubeFace::YMax),
            "zmin" | "z0" | "z=0" => Ok(CubeFace::ZMin),
            "zmax" | "z1" | "z=1" => Ok(CubeFace::ZMax),
            other => Err(format!("unknown cube face '{other}'")),
        }
    }
}

/// Adjacency of one facet: the one or two (tet index, local facet index)
/// pairs, lower tet index first.
#[derive(Debug, Clone)]
pub struct FacetAdjacency {
    pub tets: Vec<(usize, usize)>,
}

impl FacetAdjacency {
    pub fn is_boundary(&self) -> bool {
        self.tets.len() == 1
    }
}

#[derive(Debug, Clone)]
pub struct Mesh {
    pub vertices: Vec<Vector3<f64>>,
    /// Vertex indices per tetrahedron, ordered for positive volume.
    pub tets: Vec<[usize; 4]>,
    /// Sorted global vertex triples, lexicographically ordered.
    pub facets: Vec<[usize; 3]>,
    pub facet_to_tets: Vec<FacetAdjacency>,
    pub facet_label: Vec<FacetLabel>,
    /// Unit normals: lower adjacent tet to higher for interior facets,
    /// outward for boundary facets.
    pub facet_normal: Vec<Vector3<f64>>,
    pub h_max: f64,
    /// Facet diameters (longest edge).
    pub h_facet: Vec<f64>,
}

/// Geometric data of one tetrahedron.
#[derive(Debug, Clone)]
pub struct ElementGeometry {
    /// Affine map x = v0 + J ξ from the reference tet.
    pub jacobian: Matrix3<f64>,
    pub v0: Vector3<f64>,
    pub volume: f64,
    pub diameter: f64,
    pub centroid: Vector3<f64>,
    pub vertices: [Vector3<f64>; 4],
}

/// Orthonormal frame and measure data of one facet.
#[derive(Debug, Clone)]
pub struct FacetFrame {
    pub normal: Vector3<f64>,
    pub tangent1: Vector3<f64>,
    pub tangent2: Vector3<f64>,
    pub area: f64,
    pub centroid: Vector3<f64>,
    pub diameter: f64,
    pub vertices: [Vector3<f64>; 3],
}

/// Conforming Kuhn triangulation of (0,1)³ with `n` subcubes per direction;
/// facets on `neumann_face` are labeled Neumann, the rest of the boundary
/// Dirichlet.
pub fn build_structured_cube(n: usize, neumann_face: CubeFace) -> Result<Mesh, MeshError> {
    if n == 0 {
        return Err(MeshError::ZeroResolution);
    }
    let np = n + 1;
    let vid = |i: usize, j: usize, k: usize| i + np * (j + np * k);
    let mut vertices = Vec::with_capacity(np * np * np);
    for idx in 0..np * np * np {
        let i = idx % np;
        let j = (idx / np) % np;
        let k = idx / (np * np);
        vertices.push(Vector3::new(i as f64 / n as f64, j as f64 / n as f64, k as f64 / n as f64));
    }

    // Six path tetrahedra per subcube, all containing the diagonal from the
    // low corner to the high corner.
    const PERMS: [[usize; 3]; 6] = [
        [0, 1, 2],
        [0, 2, 1],
        [1, 0, 2],
        [1, 2, 0],
        [2, 0, 1],
        [2, 1, 0],
    ];
    let mut tets = Vec::with_capacity(6 * n * n * n);
    for k in 0..n {
        for j in 0..n {
            for i in 0..n {
                let corner = [i, j, k];
                for perm in PERMS {
                    let mut steps = [corner; 4];
                    for s in 1..4 {
                        steps[s] = steps[s - 1];
                        steps[s][perm[s - 1]] += 1;
                    }
                    let mut tet = steps.map(|p| vid(p[0], p[1], p[2]));
                    if perm_is_odd(&perm) {
                        tet.swap(1, 2);
                    }
                    tets.push(tet);
                }
            }
        }
    }

    from_raw(vertices, tets, |centroid| {
        if neumann_face.contains(centroid) {
            FacetLabel::NeumannBoundary
        } else {
            FacetLabel::DirichletBoundary
        }
    })
}

fn perm_is_odd(p: &[usize; 3]) -> bool {
    let mut inv = 0;
    for a in 0..3 {
        for b in a + 1..3 {
            if p[a] > p[b] {
                inv += 1;
            }
        }
    }
    inv % 2 == 1
}

/// Build a mesh from raw vertex and tet lists; boundary facets are labeled by
/// the given classifier applied to the facet centroid. Tets with negative
/// orientation are reordered; degenerate tets are rejected.
pub fn from_raw<F>(
    vertices: Vec<Vector3<f64>>,
    mut tets: Vec<[usize; 4]>,
    boundary_label: F,
) -> Result<Mesh, MeshError>
where
    F: Fn(&Vector3<f64>) -> FacetLabel,
{
    for (t, tet) in tets.iter_mut().enumerate() {
        let vol = signed_volume(&vertices, tet);
        if vol < 0.0 {
            tet.swap(2, 3);
        }
        let vol = signed_volume(&vertices, tet);
        if vol <= 0.0 {
            return Err(MeshError::DegenerateTet(t));
        }
    }

    // Enumerate facets as sorted vertex triples, lexicographically ordered.
    let mut triples: Vec<[usize; 3]> = Vec::with_capacity(4 * tets.len());
    for tet in &tets {
        for local in 0..4 {
            triples.push(local_facet_vertices(tet, local));
        }
    }
    triples.sort_unstable();
    triples.dedup();
    let facet_index = |tri: &[usize; 3]| triples.binary_search(tri).expect("facet present");

    let mut facet_to_tets: Vec<FacetAdjacency> =
        (0..triples.len()).map(|_| FacetAdjacency { tets: Vec::new() }).collect();
    for (t, tet) in tets.iter().enumerate() {
        for local in 0..4 {
            let tri = local_facet_vertices(tet, local);
            facet_to_tets[facet_index(&tri)].tets.push((t, local));
        }
    }
    for adj in &mut facet_to_tets {
        adj.tets.sort_unstable();
        debug_assert!(matches!(adj.tets.len(), 1 | 2));
    }

    let tet_centroid = |t: usize| -> Vector3<f64> {
        tets[t].iter().map(|&v| vertices[v]).sum::<Vector3<f64>>() / 4.0
    };

    let mut facet_label = Vec::with_capacity(triples.len());
    let mut facet_normal = Vec::with_capacity(triples.len());
    let mut h_facet = Vec::with_capacity(triples.len());
    for (f, tri) in triples.iter().enumerate() {
        let [a, b, c] = tri.map(|v| vertices[v]);
        let raw = (b - a).cross(&(c - a));
        let area2 = raw.norm();
        if area2 == 0.0 {
            return Err(MeshError::DegenerateTet(facet_to_tets[f].tets[0].0));
        }
        let n0 = raw / area2;
        let centroid = (a + b + c) / 3.0;
        let adj = &facet_to_tets[f];
        let oriented = if adj.is_boundary() {
            let inward = tet_centroid(adj.tets[0].0) - centroid;
            if n0.dot(&inward) > 0.0 {
                -n0
            } else {
                n0
            }
        } else {
            let towards_higher = tet_centroid(adj.tets[1].0) - tet_centroid(adj.tets[0].0);
            if n0.dot(&towards_higher) < 0.0 {
                -n0
            } else {
                n0
            }
        };
        facet_normal.push(oriented);
        facet_label.push(if adj.is_boundary() {
            boundary_label(&centroid)
        } else {
            FacetLabel::Interior
        });
        h_facet.push(
            (b - a).norm().max((c - a).norm()).max((c - b).norm()),
        );
    }

    let h_max = (0..tets.len())
        .map(|t| tet_diameter(&vertices, &tets[t]))
        .fold(0.0_f64, f64::max);

    Ok(Mesh {
        vertices,
        tets,
        facets: triples,
        facet_to_tets,
        facet_label,
        facet_normal,
        h_max,
        h_facet,
    })
}

/// Vertices of the local facet opposite local vertex `local`, sorted.
pub fn local_facet_vertices(tet: &[usize; 4], local: usize) -> [usize; 3] {
    let mut tri = [0usize; 3];
    let mut w = 0;
    for (m, &v) in tet.iter().enumerate() {
        if m != local {
            tri[w] = v;
            w += 1;
        }
    }
    tri.sort_unstable();
    tri
}

fn signed_volume(vertices: &[Vector3<f64>], tet: &[usize; 4]) -> f64 {
    let [a, b, c, d] = tet.map(|v| vertices[v]);
    (b - a).cross(&(c - a)).dot(&(d - a)) / 6.0
}

fn tet_diameter(vertices: &[Vector3<f64>], tet: &[usize; 4]) -> f64 {
    let p = tet.map(|v| vertices[v]);
    let mut d: f64 = 0.0;
    for i in 0..4 {
        for j in i + 1..4 {
            d = d.max((p[i] - p[j]).norm());
        }
    }
    d
}

impl Mesh {
    pub fn n_tets(&self) -> usize {
        self.tets.len()
    }

    pub fn n_facets(&self) -> usize {
        self.facets.len()
    }

    pub fn n_boundary_facets(&self) -> usize {
        self.facet_to_tets.iter().filter(|a| a.is_boundary()).count()
    }

    pub fn facet_id(&self, tri: &[usize; 3]) -> Option<usize> {
        let mut s = *tri;
        s.sort_unstable();
        self.facets.binary_search(&s).ok()
    }

    pub fn element_geometry(&self, t: usize) -> ElementGeometry {
        let verts = self.tets[t].map(|v| self.vertices[v]);
        let jacobian = Matrix3::from_columns(&[
            verts[1] - verts[0],
            verts[2] - verts[0],
            verts[3] - verts[0],
        ]);
        let det = jacobian.determinant();
        ElementGeometry {
            jacobian,
            v0: verts[0],
            volume: det / 6.0,
            diameter: tet_diameter(&self.vertices, &self.tets[t]),
            centroid: verts.iter().sum::<Vector3<f64>>() / 4.0,
            vertices: verts,
        }
    }

    pub fn facet_frame(&self, f: usize) -> FacetFrame {
        let verts = self.facets[f].map(|v| self.vertices[v]);
        let normal = self.facet_normal[f];
        let t1 = (verts[1] - verts[0]).normalize();
        let t2 = normal.cross(&t1);
        FacetFrame {
            normal,
            tangent1: t1,
            tangent2: t2,
            area: 0.5 * (verts[1] - verts[0]).cross(&(verts[2] - verts[0])).norm(),
            centroid: (verts[0] + verts[1] + verts[2]) / 3.0,
            diameter: self.h_facet[f],
            vertices: verts,
        }
    }

    /// Outward normal of tet `t` on its local facet `local` as a sign factor
    /// relative to the stored global facet normal: +1 when they agree.
    ///
    /// By the orientation convention this is +1 exactly for the lower-index
    /// adjacent tet (and for the unique tet of a boundary facet).
    pub fn outward_sign(&self, f: usize, t: usize) -> f64 {
        let adj = &self.facet_to_tets[f];
        if adj.tets[0].0 == t {
            1.0
        } else {
            -1.0
        }
    }

    /// Parse the ASCII mesh format: `nv nt`, then nv vertex lines `x y z`,
    /// then nt tet lines `v0 v1 v2 v3`, then one line per boundary facet
    /// `a b c label` with label `dirichlet`/`neumann` (or `d`/`n`).
    pub fn from_ascii(text: &str) -> Result<Mesh, MeshError> {
        let mut tokens = text.split_whitespace();
        let mut next = || tokens.next().ok_or_else(|| MeshError::Parse("unexpected end of input".into()));
        let nv: usize = next()?
            .parse()
            .map_err(|e| MeshError::Parse(format!("vertex count: {e}")))?;
        let nt: usize = next()?
            .parse()
            .map_err(|e| MeshError::Parse(format!("tet count: {e}")))?;
        let mut vertices = Vec::with_capacity(nv);
        for _ in 0..nv {
            let mut p = [0.0; 3];
            for q in &mut p {
                *q = next()?
                    .parse()
                    .map_err(|e| MeshError::Parse(format!("vertex coordinate: {e}")))?;
            }
            vertices.push(Vector3::new(p[0], p[1], p[2]));
        }
        let mut tets = Vec::with_capacity(nt);
        for _ in 0..nt {
            let mut tet = [0usize; 4];
            for q in &mut tet {
                *q = next()?
                    .parse()
                    .map_err(|e| MeshError::Parse(format!("tet vertex index: {e}")))?;
            }
            tets.push(tet);
        }
        let mut labels: Vec<([usize; 3], FacetLabel)> = Vec::new();
        loop {
            let Some(tok) = tokens.next() else { break };
            let mut tri = [0usize; 3];
            tri[0] = tok
                .parse()
                .map_err(|e| MeshError::Parse(format!("facet vertex index: {e}")))?;
            for q in tri.iter_mut().skip(1) {
                *q = tokens
                    .next()
                    .ok_or_else(|| MeshError::Parse("truncated facet line".into()))?
                    .parse()
                    .map_err(|e| MeshError::Parse(format!("facet vertex index: {e}")))?;
            }
            tri.sort_unstable();
            let label = match tokens
                .next()
                .ok_or_else(|| MeshError::Parse("facet line missing label".into()))?
                .to_ascii_lowercase()
                .as_str()
            {
                "dirichlet" | "d" => FacetLabel::DirichletBoundary,
                "neumann" | "n" => FacetLabel::NeumannBoundary,
                other => return Err(MeshError::Parse(format!("unknown facet label '{other}'"))),
            };
            labels.push((tri, label));
        }

        let mesh = from_raw(vertices, tets, |_| FacetLabel::DirichletBoundary)?;
        // Overwrite labels from the file; every boundary facet must be named.
        let mut mesh = mesh;
        let mut seen = vec![false; mesh.n_facets()];
        for (tri, label) in labels {
            let Some(f) = mesh.facet_id(&tri) else {
                return Err(MeshError::LabelOnNonBoundaryFacet(tri));
            };
            if !mesh.facet_to_tets[f].is_boundary() {
                return Err(MeshError::LabelOnNonBoundaryFacet(tri));
            }
            mesh.facet_label[f] = label;
            seen[f] = true;
        }
        for f in 0..mesh.n_facets() {
            if mesh.facet_to_tets[f].is_boundary() && !seen[f] {
                return Err(MeshError::UnlabeledBoundaryFacet(mesh.facets[f]));
            }
        }
        Ok(mesh)
    }

    /// Relabel boundary facets in place (test and experiment helper).
    pub fn relabel_boundary<F>(&mut self, label: F)
    where
        F: Fn(&Vector3<f64>) -> FacetLabel,
    {
        for f in 0..self.n_facets() {
            if self.facet_to_tets[f].is_boundary() {
                let frame_centroid = {
                    let verts = self.facets[f].map(|v| self.vertices[v]);
                    (verts[0] + verts[1] + verts[2]) / 3.0
                };
                self.facet_label[f] = label(&frame_centroid);
            }
        }
    }
}
