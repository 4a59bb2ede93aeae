//! Conforming P1 triangulations of polygonal 2D domains.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum BoundaryLabel {
    Dirichlet,
    Neumann,
}

impl fmt::Display for BoundaryLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BoundaryLabel::Dirichlet => write!(f, "DIRICHLET"),
            BoundaryLabel::Neumann => write!(f, "NEUMANN"),
        }
    }
}

impl FromStr for BoundaryLabel {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "DIRICHLET" => Ok(BoundaryLabel::Dirichlet),
            "NEUMANN" => Ok(BoundaryLabel::Neumann),
            other => Err(format!("unknown boundary label `{other}`")),
        }
    }
}

/// Sides of the unit square, used to label generated meshes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
    Bottom,
    Top,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BoundaryEdge {
    pub nodes: [usize; 2],
    pub label: BoundaryLabel,
    /// Unit outward normal.
    pub normal: [f64; 2],
    pub length: f64,
    /// The unique triangle containing this edge.
    pub triangle: usize,
    /// Side of the unit square for generated meshes, `None` for loaded ones.
    pub side: Option<Side>,
}

/// Constant-per-element geometric data of a P1 triangle.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TriangleGeometry {
    pub area: f64,
    /// Gradients of the three barycentric basis functions.
    pub grads: [[f64; 2]; 3],
}

#[derive(Clone, Debug)]
pub struct Mesh2D {
    nodes: Vec<[f64; 2]>,
    triangles: Vec<[usize; 3]>,
    boundary: Vec<BoundaryEdge>,
    geometry: Vec<TriangleGeometry>,
    node_areas: Vec<f64>,
}

fn signed_area(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
}

fn triangle_geometry(p: [[f64; 2]; 3]) -> TriangleGeometry {
    let area = signed_area(p[0], p[1], p[2]);
    let inv = 1.0 / (2.0 * area);
    let grads = [
        [(p[1][1] - p[2][1]) * inv, (p[2][0] - p[1][0]) * inv],
        [(p[2][1] - p[0][1]) * inv, (p[0][0] - p[2][0]) * inv],
        [(p[0][1] - p[1][1]) * inv, (p[1][0] - p[0][0]) * inv],
    ];
    TriangleGeometry { area, grads }
}

fn edge_key(a: usize, b: usize) -> (usize, usize) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

/// A boundary edge as read from a file or produced by a generator, before
/// normals and adjacency are computed.
#[derive(Clone, Debug)]
pub struct RawBoundaryEdge {
    pub nodes: [usize; 2],
    pub label: Option<BoundaryLabel>,
    pub side: Option<Side>,
}

impl Mesh2D {
    /// Builds a mesh and checks every invariant: positive orientation,
    /// boundary edges tiling the topological boundary, nonempty Dirichlet part.
    pub fn new(
        nodes: Vec<[f64; 2]>,
        triangles: Vec<[usize; 3]>,
        boundary: Vec<RawBoundaryEdge>,
    ) -> Result<Self> {
        for (t, tri) in triangles.iter().enumerate() {
            for &n in tri {
                if n >= nodes.len() {
                    return Err(Error::MeshValidation(format!(
                        "triangle {t} references missing node {n}"
                    )));
                }
            }
            let a = signed_area(nodes[tri[0]], nodes[tri[1]], nodes[tri[2]]);
            if a <= 0.0 {
                return Err(Error::MeshValidation(format!(
                    "triangle {t} has non-positive signed area {a:e} (clockwise or degenerate)"
                )));
            }
        }

        let mut edge_owner: HashMap<(usize, usize), Vec<(usize, usize)>> = HashMap::new();
        for (t, tri) in triangles.iter().enumerate() {
            for i in 0..3 {
                let key = edge_key(tri[i], tri[(i + 1) % 3]);
                edge_owner.entry(key).or_default().push((t, tri[(i + 2) % 3]));
            }
        }
        for (key, owners) in &edge_owner {
            if owners.len() > 2 {
                return Err(Error::MeshValidation(format!(
                    "edge ({}, {}) is shared by {} triangles",
                    key.0,
                    key.1,
                    owners.len()
                )));
            }
        }

        let mut seen: HashMap<(usize, usize), usize> = HashMap::new();
        let mut edges = Vec::with_capacity(boundary.len());
        for (id, raw) in boundary.iter().enumerate() {
            let [a, b] = raw.nodes;
            let label = raw.label.ok_or_else(|| {
                Error::MeshValidation(format!("boundary edge {id} ({a}, {b}) has no label"))
            })?;
            let key = edge_key(a, b);
            if let Some(prev) = seen.insert(key, id) {
                return Err(Error::MeshValidation(format!(
                    "boundary edges {prev} and {id} are duplicates"
                )));
            }
            let owners = edge_owner.get(&key).ok_or_else(|| {
                Error::MeshValidation(format!("boundary edge {id} ({a}, {b}) is not a mesh edge"))
            })?;
            if owners.len() != 1 {
                return Err(Error::MeshValidation(format!(
                    "boundary edge {id} ({a}, {b}) is an interior edge"
                )));
            }
            let (triangle, opposite) = owners[0];
            let (pa, pb, pc) = (nodes[a], nodes[b], nodes[opposite]);
            let dx = pb[0] - pa[0];
            let dy = pb[1] - pa[1];
            let length = (dx * dx + dy * dy).sqrt();
            let mut normal = [dy / length, -dx / length];
            let mid = [0.5 * (pa[0] + pb[0]), 0.5 * (pa[1] + pb[1])];
            if normal[0] * (pc[0] - mid[0]) + normal[1] * (pc[1] - mid[1]) > 0.0 {
                normal = [-normal[0], -normal[1]];
            }
            edges.push(BoundaryEdge {
                nodes: raw.nodes,
                label,
                normal,
                length,
                triangle,
                side: raw.side,
            });
        }
        for (key, owners) in &edge_owner {
            if owners.len() == 1 && !seen.contains_key(key) {
                return Err(Error::MeshValidation(format!(
                    "boundary edge ({}, {}) is unlabeled",
                    key.0, key.1
                )));
            }
        }
        if !edges.iter().any(|e| e.label == BoundaryLabel::Dirichlet) {
            return Err(Error::MeshValidation(
                "the Dirichlet boundary part is empty".into(),
            ));
        }

        let geometry: Vec<TriangleGeometry> = triangles
            .iter()
            .map(|t| triangle_geometry([nodes[t[0]], nodes[t[1]], nodes[t[2]]]))
            .collect();
        let mut node_areas = vec![0.0; nodes.len()];
        for (tri, g) in triangles.iter().zip(&geometry) {
            for &n in tri {
                node_areas[n] += g.area / 3.0;
            }
        }

        Ok(Self {
            nodes,
            triangles,
            boundary: edges,
            geometry,
            node_areas,
        })
    }

    pub fn nodes(&self) -> &[[f64; 2]] {
        &self.nodes
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn boundary_edges(&self) -> &[BoundaryEdge] {
        &self.boundary
    }

    pub fn geometry(&self) -> &[TriangleGeometry] {
        &self.geometry
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn n_triangles(&self) -> usize {
        self.triangles.len()
    }

    /// Lumped nodal areas, `∫ φ_i dx`.
    pub fn node_areas(&self) -> &[f64] {
        &self.node_areas
    }

    pub fn total_area(&self) -> f64 {
        self.geometry.iter().map(|g| g.area).sum()
    }

    pub fn dirichlet_nodes(&self) -> Vec<usize> {
        let mut flag = vec![false; self.nodes.len()];
        for e in &self.boundary {
            if e.label == BoundaryLabel::Dirichlet {
                flag[e.nodes[0]] = true;
                flag[e.nodes[1]] = true;
            }
        }
        (0..self.nodes.len()).filter(|&n| flag[n]).collect()
    }

    pub fn all_dirichlet(&self) -> bool {
        self.boundary
            .iter()
            .all(|e| e.label == BoundaryLabel::Dirichlet)
    }

    /// Writes the mesh in the line-oriented text format read by [`load_mesh`].
    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = std::io::BufWriter::new(fs::File::create(path)?);
        writeln!(out, "NODES {}", self.nodes.len())?;
        for (i, p) in self.nodes.iter().enumerate() {
            writeln!(out, "{i} {:.17e} {:.17e}", p[0], p[1])?;
        }
        writeln!(out, "TRIANGLES {}", self.triangles.len())?;
        for (i, t) in self.triangles.iter().enumerate() {
            writeln!(out, "{i} {} {} {}", t[0], t[1], t[2])?;
        }
        writeln!(out, "BOUNDARY {}", self.boundary.len())?;
        for (i, e) in self.boundary.iter().enumerate() {
            writeln!(out, "{i} {} {} {}", e.nodes[0], e.nodes[1], e.label)?;
        }
        Ok(())
    }
}

/// Structured mesh of `[0,1]²` with `n × n` cells, each split along its
/// lower-left to upper-right diagonal.
pub fn generate_unit_square(n: usize, dirichlet_sides: &[Side]) -> Result<Mesh2D> {
    if n == 0 {
        return Err(Error::Config("unit square resolution must be at least 1".into()));
    }
    if dirichlet_sides.is_empty() {
        return Err(Error::Config(
            "at least one Dirichlet side is required".into(),
        ));
    }
    let h = 1.0 / n as f64;
    let id = |i: usize, j: usize| j * (n + 1) + i;
    let mut nodes = Vec::with_capacity((n + 1) * (n + 1));
    for j in 0..=n {
        for i in 0..=n {
            nodes.push([i as f64 * h, j as f64 * h]);
        }
    }
    let mut triangles = Vec::with_capacity(2 * n * n);
    for j in 0..n {
        for i in 0..n {
            let (a, b, c, d) = (id(i, j), id(i + 1, j), id(i + 1, j + 1), id(i, j + 1));
            triangles.push([a, b, c]);
            triangles.push([a, c, d]);
        }
    }
    let label = |side: Side| {
        Some(if dirichlet_sides.contains(&side) {
            BoundaryLabel::Dirichlet
        } else {
            BoundaryLabel::Neumann
        })
    };
    let mut boundary = Vec::with_capacity(4 * n);
    for i in 0..n {
        boundary.push(RawBoundaryEdge {
            nodes: [id(i, 0), id(i + 1, 0)],
            label: label(Side::Bottom),
            side: Some(Side::Bottom),
        });
    }
    for j in 0..n {
        boundary.push(RawBoundaryEdge {
            nodes: [id(n, j), id(n, j + 1)],
            label: label(Side::Right),
            side: Some(Side::Right),
        });
    }
    for i in (0..n).rev() {
        boundary.push(RawBoundaryEdge {
            nodes: [id(i + 1, n), id(i, n)],
            label: label(Side::Top),
            side: Some(Side::Top),
        });
    }
    for j in (0..n).rev() {
        boundary.push(RawBoundaryEdge {
            nodes: [id(0, j + 1), id(0, j)],
            label: label(Side::Left),
            side: Some(Side::Left),
        });
    }
    Mesh2D::new(nodes, triangles, boundary)
}

/// Reads a mesh file; clockwise triangles are rejected.
pub fn load_mesh(path: impl AsRef<Path>) -> Result<Mesh2D> {
    load_mesh_with(path, false)
}

/// Reads a mesh file. With `repair_orientation`, clockwise triangles are
/// reoriented (two indices swapped) and a warning is logged.
pub fn load_mesh_with(path: impl AsRef<Path>, repair_orientation: bool) -> Result<Mesh2D> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    let (nodes, mut triangles, boundary) = parse_mesh(path, &text)?;
    if repair_orientation {
        for (t, tri) in triangles.iter_mut().enumerate() {
            let ok = tri.iter().all(|&n| n < nodes.len());
            if ok && signed_area(nodes[tri[0]], nodes[tri[1]], nodes[tri[2]]) < 0.0 {
                log::warn!("triangle {t} is clockwise; swapping nodes 1 and 2");
                tri.swap(1, 2);
            }
        }
    }
    Mesh2D::new(nodes, triangles, boundary)
}

type ParsedMesh = (Vec<[f64; 2]>, Vec<[usize; 3]>, Vec<RawBoundaryEdge>);

fn parse_mesh(path: &Path, text: &str) -> Result<ParsedMesh> {
    let perr = |line: usize, msg: String| Error::Parse {
        path: PathBuf::from(path),
        line,
        msg,
    };
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
        .filter(|(_, l)| !l.is_empty());

    fn header<'a>(
        lines: &mut impl Iterator<Item = (usize, &'a str)>,
        name: &str,
        perr: &impl Fn(usize, String) -> Error,
    ) -> Result<usize> {
        let (ln, l) = lines
            .next()
            .ok_or_else(|| perr(0, format!("missing `{name}` section")))?;
        let mut tok = l.split_whitespace();
        if tok.next() != Some(name) {
            return Err(perr(ln, format!("expected `{name} <count>`")));
        }
        tok.next()
            .and_then(|c| c.parse().ok())
            .ok_or_else(|| perr(ln, format!("bad count in `{name}` header")))
    }

    fn expect_id(ln: usize, tok: Option<&str>, want: usize, perr: &impl Fn(usize, String) -> Error) -> Result<()> {
        let id: usize = tok
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| perr(ln, "missing or malformed id".into()))?;
        if id != want {
            return Err(perr(ln, format!("ids must be dense and 0-based: expected {want}, found {id}")));
        }
        Ok(())
    }

    let k = header(&mut lines, "NODES", &perr)?;
    let mut nodes = Vec::with_capacity(k);
    for i in 0..k {
        let (ln, l) = lines.next().ok_or_else(|| perr(0, "truncated NODES section".into()))?;
        let mut tok = l.split_whitespace();
        expect_id(ln, tok.next(), i, &perr)?;
        let mut xy = [0.0; 2];
        for c in &mut xy {
            *c = tok
                .next()
                .and_then(|t| t.parse().ok())
                .ok_or_else(|| perr(ln, "malformed coordinate".into()))?;
        }
        nodes.push(xy);
    }

    let m = header(&mut lines, "TRIANGLES", &perr)?;
    let mut triangles = Vec::with_capacity(m);
    for i in 0..m {
        let (ln, l) = lines.next().ok_or_else(|| perr(0, "truncated TRIANGLES section".into()))?;
        let mut tok = l.split_whitespace();
        expect_id(ln, tok.next(), i, &perr)?;
        let mut tri = [0usize; 3];
        for c in &mut tri {
            *c = tok
                .next()
                .and_then(|t| t.parse().ok())
                .ok_or_else(|| perr(ln, "malformed node index".into()))?;
        }
        triangles.push(tri);
    }

    let b = header(&mut lines, "BOUNDARY", &perr)?;
    let mut boundary = Vec::with_capacity(b);
    for i in 0..b {
        let (ln, l) = lines.next().ok_or_else(|| perr(0, "truncated BOUNDARY section".into()))?;
        let mut tok = l.split_whitespace();
        expect_id(ln, tok.next(), i, &perr)?;
        let mut e = [0usize; 2];
        for c in &mut e {
            *c = tok
                .next()
                .and_then(|t| t.parse().ok())
                .ok_or_else(|| perr(ln, "malformed node index".into()))?;
        }
        let label = match tok.next() {
            None => None,
            Some(s) => Some(s.parse::<BoundaryLabel>().map_err(|m| perr(ln, m))?),
        };
        boundary.push(RawBoundaryEdge {
            nodes: e,
            label,
            side: None,
        });
    }
    if let Some((ln, _)) = lines.next() {
        return Err(perr(ln, "trailing content after BOUNDARY section".into()));
    }
    Ok((nodes, triangles, boundary))
}

/// Degree-of-freedom numbering for scalar and vector P1 fields.
///
/// Scalar dofs coincide with node indices; the vector dof of component `c`
/// at node `n` is `2n + c`.
#[derive(Clone, Debug)]
pub struct DofMap {
    n_nodes: usize,
    constrained: Vec<usize>,
    free: Vec<usize>,
    free_index: Vec<Option<usize>>,
}

impl DofMap {
    pub fn new(mesh: &Mesh2D) -> Self {
        let n_nodes = mesh.n_nodes();
        let mut is_constrained = vec![false; 2 * n_nodes];
        for n in mesh.dirichlet_nodes() {
            is_constrained[2 * n] = true;
            is_constrained[2 * n + 1] = true;
        }
        let mut constrained = Vec::new();
        let mut free = Vec::new();
        let mut free_index = vec![None; 2 * n_nodes];
        for (d, &c) in is_constrained.iter().enumerate() {
            if c {
                constrained.push(d);
            } else {
                free_index[d] = Some(free.len());
                free.push(d);
            }
        }
        Self {
            n_nodes,
            constrained,
            free,
            free_index,
        }
    }

    pub fn n_scalar(&self) -> usize {
        self.n_nodes
    }

    pub fn n_vector(&self) -> usize {
        2 * self.n_nodes
    }

    pub fn vector_dof(&self, node: usize, component: usize) -> usize {
        debug_assert!(component < 2);
        2 * node + component
    }

    /// Inverse of [`DofMap::vector_dof`].
    pub fn node_of(&self, dof: usize) -> (usize, usize) {
        (dof / 2, dof % 2)
    }

    pub fn constrained(&self) -> &[usize] {
        &self.constrained
    }

    pub fn free(&self) -> &[usize] {
        &self.free
    }

    pub fn free_index(&self, dof: usize) -> Option<usize> {
        self.free_index[dof]
    }

    pub fn is_constrained(&self, dof: usize) -> bool {
        self.free_index[dof].is_none()
    }

    /// Restriction of a full vector to the free dofs.
    pub fn restrict(&self, full: &[f64]) -> Vec<f64> {
        self.free.iter().map(|&d| full[d]).collect()
    }

    /// Extension by zero of a free-dof vector.
    pub fn extend(&self, reduced: &[f64]) -> Vec<f64> {
        let mut full = vec![0.0; self.n_vector()];
        for (&d, &v) in self.free.iter().zip(reduced) {
            full[d] = v;
        }
        full
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const ALL: [Side; 4] = [Side::Left, Side::Right, Side::Bottom, Side::Top];

    fn write_tmp(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn smallest_structured_mesh() {
        let m = generate_unit_square(1, &[Side::Left]).unwrap();
        assert_eq!(m.n_nodes(), 4);
        assert_eq!(m.n_triangles(), 2);
        assert_eq!(m.boundary_edges().len(), 4);
        let nd = m
            .boundary_edges()
            .iter()
            .filter(|e| e.label == BoundaryLabel::Dirichlet)
            .count();
        assert_eq!(nd, 1);
    }

    #[test]
    fn all_dirichlet_counts() {
        let m = generate_unit_square(2, &ALL).unwrap();
        assert_eq!(m.n_nodes(), 9);
        assert_eq!(m.n_triangles(), 8);
        assert_eq!(
            m.boundary_edges()
                .iter()
                .filter(|e| e.label == BoundaryLabel::Dirichlet)
                .count(),
            8
        );
        assert!(m.all_dirichlet());
    }

    #[test]
    fn areas_sum_to_one() {
        let m = generate_unit_square(16, &[Side::Left, Side::Right]).unwrap();
        assert!((m.total_area() - 1.0).abs() <= 1e-12);
        let lumped: f64 = m.node_areas().iter().sum();
        assert!((lumped - 1.0).abs() <= 1e-12);
        assert!(m.geometry().iter().all(|g| g.area > 0.0));
    }

    #[test]
    fn empty_dirichlet_rejected() {
        assert!(matches!(generate_unit_square(3, &[]), Err(Error::Config(_))));
        assert!(matches!(generate_unit_square(0, &[Side::Left]), Err(Error::Config(_))));
    }

    #[test]
    fn normals_are_unit_and_outward() {
        let m = generate_unit_square(5, &[Side::Bottom]).unwrap();
        for e in m.boundary_edges() {
            let n = e.normal;
            assert!(((n[0] * n[0] + n[1] * n[1]).sqrt() - 1.0).abs() < 1e-14);
            let tri = m.triangles()[e.triangle];
            let opp = *tri.iter().find(|&&v| v != e.nodes[0] && v != e.nodes[1]).unwrap();
            let (a, b, c) = (m.nodes()[e.nodes[0]], m.nodes()[e.nodes[1]], m.nodes()[opp]);
            let mid = [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])];
            assert!(n[0] * (c[0] - mid[0]) + n[1] * (c[1] - mid[1]) < 0.0);
            let expect = match e.side.unwrap() {
                Side::Left => [-1.0, 0.0],
                Side::Right => [1.0, 0.0],
                Side::Bottom => [0.0, -1.0],
                Side::Top => [0.0, 1.0],
            };
            assert!((n[0] - expect[0]).abs() < 1e-14 && (n[1] - expect[1]).abs() < 1e-14);
        }
    }

    #[test]
    fn dofmap_partition_and_round_trip() {
        let m = generate_unit_square(4, &[Side::Left]).unwrap();
        let d = DofMap::new(&m);
        assert_eq!(d.free().len() + d.constrained().len(), d.n_vector());
        // left side has 5 nodes
        assert_eq!(d.constrained().len(), 10);
        for &c in d.constrained() {
            let (node, _) = d.node_of(c);
            assert!(m.nodes()[node][0].abs() < 1e-15);
        }
        for k in 0..d.n_vector() {
            let (n, c) = d.node_of(k);
            assert_eq!(d.vector_dof(n, c), k);
        }
        let x: Vec<f64> = (0..d.free().len()).map(|i| i as f64 + 1.0).collect();
        assert_eq!(d.restrict(&d.extend(&x)), x);
    }

    const TWO_TRIANGLES: &str = "\
# unit square, two triangles
NODES 4
0 0 0
1 1 0
2 1 1
3 0 1
TRIANGLES 2
0 0 1 2
1 0 2 3
BOUNDARY 4
0 0 1 NEUMANN
1 1 2 NEUMANN
2 2 3 NEUMANN
3 3 0 DIRICHLET
";

    #[test]
    fn load_well_formed() {
        let f = write_tmp(TWO_TRIANGLES);
        let m = load_mesh(f.path()).unwrap();
        assert_eq!(m.n_triangles(), 2);
        assert_eq!(m.dirichlet_nodes(), vec![0, 3]);
    }

    #[test]
    fn clockwise_triangle_names_id() {
        let f = write_tmp(&TWO_TRIANGLES.replace("1 0 2 3", "1 0 3 2"));
        let err = load_mesh(f.path()).unwrap_err();
        assert!(matches!(err, Error::MeshValidation(ref m) if m.contains("triangle 1")), "{err}");
        let repaired = load_mesh_with(f.path(), true).unwrap();
        assert_eq!(repaired.triangles()[1], [0, 2, 3]);
    }

    #[test]
    fn unlabeled_boundary_edge() {
        let f = write_tmp(&TWO_TRIANGLES.replace("2 2 3 NEUMANN", "2 2 3"));
        assert!(matches!(load_mesh(f.path()), Err(Error::MeshValidation(_))));
        let text = TWO_TRIANGLES
            .replace("BOUNDARY 4", "BOUNDARY 3")
            .replace("3 3 0 DIRICHLET\n", "")
            .replace("2 2 3 NEUMANN", "2 3 0 DIRICHLET");
        let f = write_tmp(&text);
        let err = load_mesh(f.path()).unwrap_err();
        assert!(err.to_string().contains("unlabeled"), "{err}");
    }

    #[test]
    fn malformed_is_parse_error() {
        let f = write_tmp(&TWO_TRIANGLES.replace("2 1 1", "2 1 x"));
        assert!(matches!(load_mesh(f.path()), Err(Error::Parse { line: 5, .. })));
        let f = write_tmp(&TWO_TRIANGLES.replace("3 3 0 DIRICHLET", "3 3 0 CLAMPED"));
        assert!(matches!(load_mesh(f.path()), Err(Error::Parse { .. })));
    }

    #[test]
    fn empty_dirichlet_in_file() {
        let f = write_tmp(&TWO_TRIANGLES.replace("DIRICHLET", "NEUMANN"));
        assert!(matches!(load_mesh(f.path()), Err(Error::MeshValidation(_))));
    }

    #[test]
    fn write_then_load() {
        let m = generate_unit_square(3, &[Side::Left, Side::Top]).unwrap();
        let f = tempfile::NamedTempFile::new().unwrap();
        m.write(f.path()).unwrap();
        let back = load_mesh(f.path()).unwrap();
        assert_eq!(back.nodes(), m.nodes());
        assert_eq!(back.triangles(), m.triangles());
        assert_eq!(back.dirichlet_nodes(), m.dirichlet_nodes());
    }
}
