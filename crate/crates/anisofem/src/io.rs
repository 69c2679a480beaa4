//! MEDIT `.mesh`/`.sol` and legacy VTK file I/O.
//!
//! ASCII only, 1-based indices at the file boundary, LF line endings, floats
//! printed with 12 significant digits so that write∘read∘write is
//! byte-identical. `.sol` tensors use the lower-triangle row order
//! `a11 a21 a22 a31 a32 a33`.

use crate::error::{Error, Result};
use crate::geometry::{SymTensor3, Vec3};
use crate::mesh::TetMesh;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

fn fmt_f64(x: f64) -> String {
    format!("{x:.11e}")
}

struct LineReader<'a> {
    path: String,
    tokens: Vec<(usize, &'a str)>,
    pos: usize,
}

impl<'a> LineReader<'a> {
    fn new(path: &Path, text: &'a str) -> Self {
        let mut tokens = Vec::new();
        for (ln, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("");
            for tok in line.split_whitespace() {
                tokens.push((ln + 1, tok));
            }
        }
        Self {
            path: path.display().to_string(),
            tokens,
            pos: 0,
        }
    }

    fn err(&self, line: usize, msg: impl Into<String>) -> Error {
        Error::Parse {
            path: self.path.clone(),
            line,
            msg: msg.into(),
        }
    }

    fn peek(&self) -> Option<(usize, &'a str)> {
        self.tokens.get(self.pos).copied()
    }

    fn next_tok(&mut self, what: &str) -> Result<(usize, &'a str)> {
        let t = self
            .peek()
            .ok_or_else(|| self.err(self.tokens.last().map_or(0, |t| t.0), format!("unexpected end of file, expected {what}")))?;
        self.pos += 1;
        Ok(t)
    }

    fn next_usize(&mut self, what: &str) -> Result<usize> {
        let (ln, tok) = self.next_tok(what)?;
        tok.parse()
            .map_err(|_| self.err(ln, format!("expected {what}, got '{tok}'")))
    }

    fn next_i64(&mut self, what: &str) -> Result<i64> {
        let (ln, tok) = self.next_tok(what)?;
        tok.parse()
            .map_err(|_| self.err(ln, format!("expected {what}, got '{tok}'")))
    }

    fn next_f64(&mut self, what: &str) -> Result<f64> {
        let (ln, tok) = self.next_tok(what)?;
        tok.parse()
            .map_err(|_| self.err(ln, format!("expected {what}, got '{tok}'")))
    }

    /// 1-based index converted to 0-based.
    fn next_index(&mut self, what: &str, count: usize) -> Result<usize> {
        let (ln, tok) = self.next_tok(what)?;
        let v: i64 = tok
            .parse()
            .map_err(|_| self.err(ln, format!("expected {what}, got '{tok}'")))?;
        if v < 1 {
            return Err(self.err(ln, format!("{what} {v} is not a valid 1-based index")));
        }
        let v = (v - 1) as usize;
        if v >= count {
            return Err(self.err(ln, format!("{what} {} exceeds count {count}", v + 1)));
        }
        Ok(v)
    }
}

/// Write an ASCII MEDIT `.mesh` file.
pub fn write_medit(mesh: &TetMesh, path: impl AsRef<Path>) -> Result<()> {
    let mut out = String::new();
    out.push_str("MeshVersionFormatted 2\nDimension 3\n");
    writeln!(out, "Vertices\n{}", mesh.n_vertices()).unwrap();
    for v in mesh.vertices() {
        writeln!(out, "{} {} {} 0", fmt_f64(v.x), fmt_f64(v.y), fmt_f64(v.z)).unwrap();
    }
    writeln!(out, "Triangles\n{}", mesh.n_facets()).unwrap();
    for (f, tag) in mesh.facets().iter().zip(mesh.facet_tags()) {
        writeln!(out, "{} {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1, tag).unwrap();
    }
    writeln!(out, "Tetrahedra\n{}", mesh.n_elements()).unwrap();
    for (t, tag) in mesh.tets().iter().zip(mesh.tet_tags()) {
        writeln!(out, "{} {} {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1, t[3] + 1, tag).unwrap();
    }
    out.push_str("End\n");
    fs::write(path, out)?;
    Ok(())
}

/// Read an ASCII MEDIT `.mesh` file. Sections other than Vertices, Triangles
/// and Tetrahedra are skipped when their record layout is known.
pub fn read_medit(path: impl AsRef<Path>) -> Result<TetMesh> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    let mut r = LineReader::new(path, &text);
    let mut vertices: Vec<Vec3> = Vec::new();
    let mut tets: Vec<[usize; 4]> = Vec::new();
    let mut tet_tags: Vec<i32> = Vec::new();
    let mut facets: Vec<[usize; 3]> = Vec::new();
    let mut facet_tags: Vec<i32> = Vec::new();

    while let Some((ln, kw)) = r.peek() {
        r.pos += 1;
        match kw {
            "MeshVersionFormatted" => {
                r.next_usize("format version")?;
            }
            "Dimension" => {
                let d = r.next_usize("dimension")?;
                if d != 3 {
                    return Err(r.err(ln, format!("dimension {d} is not supported, expected 3")));
                }
            }
            "Vertices" => {
                let n = r.next_usize("vertex count")?;
                vertices.reserve(n);
                for _ in 0..n {
                    let x = r.next_f64("x coordinate")?;
                    let y = r.next_f64("y coordinate")?;
                    let z = r.next_f64("z coordinate")?;
                    r.next_i64("vertex tag")?;
                    vertices.push(Vec3::new(x, y, z));
                }
            }
            "Triangles" => {
                let n = r.next_usize("triangle count")?;
                for _ in 0..n {
                    let a = r.next_index("triangle vertex", vertices.len())?;
                    let b = r.next_index("triangle vertex", vertices.len())?;
                    let c = r.next_index("triangle vertex", vertices.len())?;
                    let tag = r.next_i64("triangle tag")? as i32;
                    facets.push([a, b, c]);
                    facet_tags.push(tag);
                }
            }
            "Tetrahedra" => {
                let n = r.next_usize("tetrahedron count")?;
                for _ in 0..n {
                    let mut t = [0usize; 4];
                    for s in &mut t {
                        *s = r.next_index("tetrahedron vertex", vertices.len())?;
                    }
                    let tag = r.next_i64("tetrahedron tag")? as i32;
                    tets.push(t);
                    tet_tags.push(tag);
                }
            }
            // skippable sections with known record widths
            "Edges" => skip_records(&mut r, 3)?,
            "Corners" | "Ridges" | "RequiredVertices" | "RequiredEdges" | "RequiredTriangles" => {
                skip_records(&mut r, 1)?
            }
            "Normals" | "Tangents" => skip_records(&mut r, 3)?,
            "NormalAtVertices" | "TangentAtVertices" => skip_records(&mut r, 2)?,
            "End" => break,
            other => return Err(r.err(ln, format!("unknown keyword '{other}'"))),
        }
    }
    TetMesh::new(vertices, tets, tet_tags, facets, facet_tags)
}

fn skip_records(r: &mut LineReader, width: usize) -> Result<()> {
    let n = r.next_usize("record count")?;
    for _ in 0..n * width {
        r.next_tok("record entry")?;
    }
    Ok(())
}

/// Where a `.sol` field lives.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SolLocation {
    Vertex,
    Element,
}

/// Payload of a `.sol` file: scalars or symmetric tensors.
#[derive(Clone, Debug)]
pub enum SolData {
    Scalar(Vec<f64>),
    Tensor(Vec<SymTensor3>),
}

impl SolData {
    pub fn len(&self) -> usize {
        match self {
            SolData::Scalar(v) => v.len(),
            SolData::Tensor(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Write a MEDIT `.sol` field attached to vertices or elements.
pub fn write_sol(location: SolLocation, data: &SolData, path: impl AsRef<Path>) -> Result<()> {
    let mut out = String::new();
    out.push_str("MeshVersionFormatted 2\nDimension 3\n");
    let kw = match location {
        SolLocation::Vertex => "SolAtVertices",
        SolLocation::Element => "SolAtTetrahedra",
    };
    writeln!(out, "{kw}\n{}", data.len()).unwrap();
    match data {
        SolData::Scalar(v) => {
            out.push_str("1 1\n");
            for x in v {
                writeln!(out, "{}", fmt_f64(*x)).unwrap();
            }
        }
        SolData::Tensor(v) => {
            out.push_str("1 3\n");
            for t in v {
                let l = t.to_lower();
                writeln!(
                    out,
                    "{} {} {} {} {} {}",
                    fmt_f64(l[0]),
                    fmt_f64(l[1]),
                    fmt_f64(l[2]),
                    fmt_f64(l[3]),
                    fmt_f64(l[4]),
                    fmt_f64(l[5])
                )
                .unwrap();
            }
        }
    }
    out.push_str("End\n");
    fs::write(path, out)?;
    Ok(())
}

/// Read a `.sol` field and check its entry count against the mesh.
pub fn read_sol(path: impl AsRef<Path>, mesh: &TetMesh) -> Result<(SolLocation, SolData)> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    let mut r = LineReader::new(path, &text);
    while let Some((ln, kw)) = r.peek() {
        r.pos += 1;
        match kw {
            "MeshVersionFormatted" => {
                r.next_usize("format version")?;
            }
            "Dimension" => {
                r.next_usize("dimension")?;
            }
            "SolAtVertices" | "SolAtTetrahedra" => {
                let location = if kw == "SolAtVertices" {
                    SolLocation::Vertex
                } else {
                    SolLocation::Element
                };
                let n = r.next_usize("solution count")?;
                let expected = match location {
                    SolLocation::Vertex => mesh.n_vertices(),
                    SolLocation::Element => mesh.n_elements(),
                };
                if n != expected {
                    return Err(Error::SizeMismatch { expected, got: n });
                }
                let nfields = r.next_usize("field count")?;
                if nfields != 1 {
                    return Err(r.err(ln, format!("{nfields} fields per entity not supported")));
                }
                let ftype = r.next_usize("field type")?;
                let data = match ftype {
                    1 => {
                        let mut v = Vec::with_capacity(n);
                        for _ in 0..n {
                            v.push(r.next_f64("scalar value")?);
                        }
                        SolData::Scalar(v)
                    }
                    3 => {
                        let mut v = Vec::with_capacity(n);
                        for _ in 0..n {
                            let mut l = [0.0; 6];
                            for x in &mut l {
                                *x = r.next_f64("tensor entry")?;
                            }
                            v.push(SymTensor3::from_lower(l));
                        }
                        SolData::Tensor(v)
                    }
                    other => return Err(r.err(ln, format!("field type {other} not supported"))),
                };
                return Ok((location, data));
            }
            "End" => break,
            other => return Err(r.err(ln, format!("unknown keyword '{other}'"))),
        }
    }
    Err(Error::Parse {
        path: path.display().to_string(),
        line: 0,
        msg: "no solution section found".into(),
    })
}

/// Write a legacy ASCII VTK unstructured grid (cell type 10) with optional
/// scalar fields on points and cells.
pub fn write_vtk(
    mesh: &TetMesh,
    point_fields: &[(&str, &[f64])],
    cell_fields: &[(&str, &[f64])],
    path: impl AsRef<Path>,
) -> Result<()> {
    for (name, data) in point_fields {
        if data.len() != mesh.n_vertices() {
            return Err(Error::SizeMismatch {
                expected: mesh.n_vertices(),
                got: data.len(),
            });
        }
        debug_assert!(!name.contains(char::is_whitespace));
    }
    for (name, data) in cell_fields {
        if data.len() != mesh.n_elements() {
            return Err(Error::SizeMismatch {
                expected: mesh.n_elements(),
                got: data.len(),
            });
        }
        debug_assert!(!name.contains(char::is_whitespace));
    }
    let mut out = String::new();
    out.push_str("# vtk DataFile Version 3.0\nanisofem output\nASCII\nDATASET UNSTRUCTURED_GRID\n");
    writeln!(out, "POINTS {} double", mesh.n_vertices()).unwrap();
    for v in mesh.vertices() {
        writeln!(out, "{} {} {}", fmt_f64(v.x), fmt_f64(v.y), fmt_f64(v.z)).unwrap();
    }
    writeln!(out, "CELLS {} {}", mesh.n_elements(), 5 * mesh.n_elements()).unwrap();
    for t in mesh.tets() {
        writeln!(out, "4 {} {} {} {}", t[0], t[1], t[2], t[3]).unwrap();
    }
    writeln!(out, "CELL_TYPES {}", mesh.n_elements()).unwrap();
    for _ in 0..mesh.n_elements() {
        out.push_str("10\n");
    }
    if !point_fields.is_empty() {
        writeln!(out, "POINT_DATA {}", mesh.n_vertices()).unwrap();
        for (name, data) in point_fields {
            writeln!(out, "SCALARS {name} double 1\nLOOKUP_TABLE default").unwrap();
            for x in *data {
                writeln!(out, "{}", fmt_f64(*x)).unwrap();
            }
        }
    }
    if !cell_fields.is_empty() {
        writeln!(out, "CELL_DATA {}", mesh.n_elements()).unwrap();
        for (name, data) in cell_fields {
            writeln!(out, "SCALARS {name} double 1\nLOOKUP_TABLE default").unwrap();
            for x in *data {
                writeln!(out, "{}", fmt_f64(*x)).unwrap();
            }
        }
    }
    fs::write(path, out)?;
    Ok(())
}
