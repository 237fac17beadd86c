//! Minimal PLY reader/writer: `ascii 1.0` and `binary_little_endian 1.0`,
//! vertex element with `x,y,z` (float/double) and `red,green,blue` (uchar).
//! Other elements and properties are skipped.

use std::fs;
use std::io::{Cursor, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::PointCloud;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Encoding {
    Ascii,
    BinaryLe,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Scalar {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl Scalar {
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "char" | "int8" => Scalar::I8,
            "uchar" | "uint8" => Scalar::U8,
            "short" | "int16" => Scalar::I16,
            "ushort" | "uint16" => Scalar::U16,
            "int" | "int32" => Scalar::I32,
            "uint" | "uint32" => Scalar::U32,
            "float" | "float32" => Scalar::F32,
            "double" | "float64" => Scalar::F64,
            _ => return None,
        })
    }

    fn is_float(self) -> bool {
        matches!(self, Scalar::F32 | Scalar::F64)
    }

    fn read_le(self, r: &mut Cursor<&[u8]>) -> std::io::Result<f64> {
        Ok(match self {
            Scalar::I8 => r.read_i8()? as f64,
            Scalar::U8 => r.read_u8()? as f64,
            Scalar::I16 => r.read_i16::<LittleEndian>()? as f64,
            Scalar::U16 => r.read_u16::<LittleEndian>()? as f64,
            Scalar::I32 => r.read_i32::<LittleEndian>()? as f64,
            Scalar::U32 => r.read_u32::<LittleEndian>()? as f64,
            Scalar::F32 => r.read_f32::<LittleEndian>()? as f64,
            Scalar::F64 => r.read_f64::<LittleEndian>()?,
        })
    }
}

#[derive(Debug, Clone)]
enum PropKind {
    Scalar(Scalar),
    List { count: Scalar, item: Scalar },
}

#[derive(Debug, Clone)]
struct Property {
    name: String,
    kind: PropKind,
    line: usize,
}

#[derive(Debug, Clone)]
struct Element {
    name: String,
    count: usize,
    props: Vec<Property>,
}

struct Header {
    encoding: Encoding,
    elements: Vec<Element>,
    /// Number of header lines, `end_header` included.
    lines: usize,
    body_offset: usize,
}

fn parse_header(bytes: &[u8], path: &Path) -> Result<Header> {
    let mut offset = 0;
    let mut line_no = 0;
    let mut encoding = None;
    let mut elements: Vec<Element> = Vec::new();
    loop {
        let rest = &bytes[offset..];
        let Some(nl) = rest.iter().position(|&b| b == b'\n') else {
            return Err(Error::format(path, line_no + 1, "header is not terminated by end_header"));
        };
        line_no += 1;
        let raw = &rest[..nl];
        offset += nl + 1;
        let line = std::str::from_utf8(raw)
            .map_err(|_| Error::format(path, line_no, "header line is not valid UTF-8"))?
            .trim_end_matches('\r')
            .trim();
        let mut tok = line.split_whitespace();
        let keyword = tok.next().unwrap_or("");
        if line_no == 1 {
            if line != "ply" {
                return Err(Error::format(path, 1, "first line must be `ply`"));
            }
            continue;
        }
        match keyword {
            "" | "comment" | "obj_info" => {}
            "format" => {
                let fmt = tok.next().unwrap_or("");
                let version = tok.next().unwrap_or("");
                if version != "1.0" {
                    return Err(Error::format(path, line_no, format!("unsupported PLY version `{version}`")));
                }
                encoding = Some(match fmt {
                    "ascii" => Encoding::Ascii,
                    "binary_little_endian" => Encoding::BinaryLe,
                    other => {
                        return Err(Error::format(path, line_no, format!("unsupported format `{other}`")))
                    }
                });
            }
            "element" => {
                let name = tok
                    .next()
                    .ok_or_else(|| Error::format(path, line_no, "element without a name"))?;
                let count = tok
                    .next()
                    .and_then(|c| c.parse::<usize>().ok())
                    .ok_or_else(|| Error::format(path, line_no, "element count is not a non-negative integer"))?;
                elements.push(Element {
                    name: name.to_string(),
                    count,
                    props: Vec::new(),
                });
            }
            "property" => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| Error::format(path, line_no, "property declared before any element"))?;
                let ty = tok.next().unwrap_or("");
                let kind = if ty == "list" {
                    let count = tok.next().and_then(Scalar::parse);
                    let item = tok.next().and_then(Scalar::parse);
                    match (count, item) {
                        (Some(count), Some(item)) => PropKind::List { count, item },
                        _ => return Err(Error::format(path, line_no, "malformed list property")),
                    }
                } else {
                    PropKind::Scalar(Scalar::parse(ty).ok_or_else(|| {
                        Error::format(path, line_no, format!("unknown property type `{ty}`"))
                    })?)
                };
                let name = tok
                    .next()
                    .ok_or_else(|| Error::format(path, line_no, "property without a name"))?;
                el.props.push(Property {
                    name: name.to_string(),
                    kind,
                    line: line_no,
                });
            }
            "end_header" => break,
            other => {
                return Err(Error::format(path, line_no, format!("unexpected header keyword `{other}`")))
            }
        }
    }
    let encoding =
        encoding.ok_or_else(|| Error::format(path, line_no, "header has no format line"))?;
    Ok(Header {
        encoding,
        elements,
        lines: line_no,
        body_offset: offset,
    })
}

/// Indices of x,y,z,red,green,blue within the vertex properties.
struct VertexLayout {
    slots: [usize; 6],
}

fn vertex_layout(el: &Element, header_lines: usize, path: &Path) -> Result<VertexLayout> {
    const NAMES: [&str; 6] = ["x", "y", "z", "red", "green", "blue"];
    let mut slots = [usize::MAX; 6];
    for (i, p) in el.props.iter().enumerate() {
        if let Some(k) = NAMES.iter().position(|n| *n == p.name) {
            match p.kind {
                PropKind::Scalar(s) if k < 3 && !s.is_float() => {
                    return Err(Error::format(path, p.line, format!("coordinate `{}` must be float or double", p.name)))
                }
                PropKind::Scalar(s) if k >= 3 && s != Scalar::U8 => {
                    return Err(Error::format(path, p.line, format!("color `{}` must be uchar", p.name)))
                }
                PropKind::List { .. } => {
                    return Err(Error::format(path, p.line, format!("`{}` must be a scalar property", p.name)))
                }
                _ => slots[k] = i,
            }
        }
    }
    if let Some(k) = slots.iter().position(|&s| s == usize::MAX) {
        return Err(Error::format(
            path,
            header_lines,
            format!("vertex element lacks required property `{}`", NAMES[k]),
        ));
    }
    Ok(VertexLayout { slots })
}

/// Loads a PLY point cloud; colors are rescaled from `[0,255]` to `[0,1]`.
pub fn load_ply(path: impl AsRef<Path>) -> Result<PointCloud> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_ply(&bytes, path)
}

fn parse_ply(bytes: &[u8], path: &Path) -> Result<PointCloud> {
    let header = parse_header(bytes, path)?;
    let vidx = header
        .elements
        .iter()
        .position(|e| e.name == "vertex")
        .ok_or_else(|| Error::format(path, header.lines, "no vertex element declared"))?;
    let vertex = &header.elements[vidx];
    let layout = vertex_layout(vertex, header.lines, path)?;
    if vertex.count == 0 {
        return Err(Error::EmptyCloud);
    }
    let body = &bytes[header.body_offset..];
    let rows = match header.encoding {
        Encoding::Ascii => read_ascii(body, &header, vidx, path)?,
        Encoding::BinaryLe => read_binary(body, &header, vidx, path)?,
    };
    let mut positions = Vec::with_capacity(rows.len());
    let mut colors = Vec::with_capacity(rows.len());
    for row in rows {
        let s = &layout.slots;
        positions.push([row[s[0]], row[s[1]], row[s[2]]]);
        colors.push([row[s[3]] / 255.0, row[s[4]] / 255.0, row[s[5]] / 255.0]);
    }
    PointCloud::non_empty(positions, colors)
}

fn read_ascii(body: &[u8], header: &Header, vidx: usize, path: &Path) -> Result<Vec<Vec<f64>>> {
    let text = std::str::from_utf8(body)
        .map_err(|_| Error::format(path, header.lines + 1, "ASCII body is not valid UTF-8"))?;
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (header.lines + 1 + i, l.trim()))
        .filter(|(_, l)| !l.is_empty());
    for el in &header.elements[..vidx] {
        for _ in 0..el.count {
            lines
                .next()
                .ok_or_else(|| Error::format(path, header.lines, format!("file ends inside element `{}`", el.name)))?;
        }
    }
    let vertex = &header.elements[vidx];
    let mut rows = Vec::with_capacity(vertex.count);
    for v in 0..vertex.count {
        let (line_no, line) = lines.next().ok_or_else(|| {
            Error::format(path, header.lines, format!("expected {} vertices, found {v}", vertex.count))
        })?;
        let mut toks = line.split_whitespace();
        let mut row = Vec::with_capacity(vertex.props.len());
        for p in &vertex.props {
            let mut next = || -> Result<f64> {
                toks.next()
                    .and_then(|t| t.parse::<f64>().ok())
                    .ok_or_else(|| Error::format(path, line_no, format!("bad or missing value for `{}`", p.name)))
            };
            match p.kind {
                PropKind::Scalar(_) => row.push(next()?),
                PropKind::List { .. } => {
                    let n = next()? as usize;
                    for _ in 0..n {
                        next()?;
                    }
                    row.push(f64::NAN);
                }
            }
        }
        rows.push(row);
    }
    Ok(rows)
}

fn read_binary(body: &[u8], header: &Header, vidx: usize, path: &Path) -> Result<Vec<Vec<f64>>> {
    let mut cur = Cursor::new(body);
    let truncated = |what: &str| {
        Error::format(path, header.lines, format!("binary body truncated while reading {what}"))
    };
    let read_row = |el: &Element, cur: &mut Cursor<&[u8]>| -> Result<Vec<f64>> {
        let mut row = Vec::with_capacity(el.props.len());
        for p in &el.props {
            match p.kind {
                PropKind::Scalar(s) => row.push(s.read_le(cur).map_err(|_| truncated(&el.name))?),
                PropKind::List { count, item } => {
                    let n = count.read_le(cur).map_err(|_| truncated(&el.name))? as usize;
                    for _ in 0..n {
                        item.read_le(cur).map_err(|_| truncated(&el.name))?;
                    }
                    row.push(f64::NAN);
                }
            }
        }
        Ok(row)
    };
    for el in &header.elements[..vidx] {
        for _ in 0..el.count {
            read_row(el, &mut cur)?;
        }
    }
    let vertex = &header.elements[vidx];
    (0..vertex.count).map(|_| read_row(vertex, &mut cur)).collect()
}

fn to_u8(c: f64) -> u8 {
    (c * 255.0).round().clamp(0.0, 255.0) as u8
}

/// Writes `cloud` as PLY with double-precision coordinates and 8-bit colors.
pub fn save_ply(cloud: &PointCloud, path: impl AsRef<Path>, binary: bool) -> Result<()> {
    let path = path.as_ref();
    cloud.ensure_non_empty()?;
    let mut out = Vec::new();
    let format = if binary { "binary_little_endian" } else { "ascii" };
    let header = format!(
        "ply\nformat {format} 1.0\nelement vertex {}\nproperty double x\nproperty double y\nproperty double z\nproperty uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n",
        cloud.point_count()
    );
    out.extend_from_slice(header.as_bytes());
    for (p, c) in cloud.positions().iter().zip(cloud.colors()) {
        if binary {
            for v in p {
                out.write_f64::<LittleEndian>(*v).expect("vec write");
            }
            for v in c {
                out.push(to_u8(*v));
            }
        } else {
            writeln!(
                out,
                "{} {} {} {} {} {}",
                p[0],
                p[1],
                p[2],
                to_u8(c[0]),
                to_u8(c[1]),
                to_u8(c[2])
            )
            .expect("vec write");
        }
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))?;
    Ok(())
}


#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn random_cloud(n: usize, seed: u64) -> PointCloud {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let positions = (0..n)
            .map(|_| [rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)])
            .collect();
        let colors = (0..n)
            .map(|_| [rng.random::<u8>(), rng.random::<u8>(), rng.random::<u8>()].map(|c| c as f64 / 255.0))
            .collect();
        PointCloud::new(positions, colors).unwrap()
    }

    #[test]
    fn single_ascii_vertex() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("one.ply");
        fs::write(
            &p,
            "ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\nproperty float z\nproperty uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n0 0 0 255 0 0\n",
        )
        .unwrap();
        let c = load_ply(&p).unwrap();
        assert_eq!(c.positions(), &[[0.0, 0.0, 0.0]]);
        assert_eq!(c.colors(), &[[1.0, 0.0, 0.0]]);
    }

    #[test]
    fn binary_equals_ascii_encoding() {
        let dir = tempfile::tempdir().unwrap();
        let cloud = random_cloud(100, 3);
        let a = dir.path().join("a.ply");
        let b = dir.path().join("b.ply");
        save_ply(&cloud, &a, false).unwrap();
        save_ply(&cloud, &b, true).unwrap();
        assert_eq!(load_ply(&a).unwrap(), load_ply(&b).unwrap());
        assert_eq!(load_ply(&b).unwrap(), cloud);
    }

    #[test]
    fn binary_is_smaller() {
        let dir = tempfile::tempdir().unwrap();
        let cloud = random_cloud(1000, 4);
        let a = dir.path().join("a.ply");
        let b = dir.path().join("b.ply");
        save_ply(&cloud, &a, false).unwrap();
        save_ply(&cloud, &b, true).unwrap();
        let sa = fs::metadata(&a).unwrap().len();
        let sb = fs::metadata(&b).unwrap().len();
        assert!(sb < sa, "binary {sb} vs ascii {sa}");
    }

    #[test]
    fn float32_binary_with_extra_properties_and_faces() {
        let mut bytes = b"ply\nformat binary_little_endian 1.0\ncomment x\nelement vertex 2\nproperty float x\nproperty float y\nproperty float z\nproperty float nx\nproperty uchar red\nproperty uchar green\nproperty uchar blue\nproperty uchar alpha\nelement face 1\nproperty list uchar int vertex_indices\nend_header\n".to_vec();
        for i in 0..2 {
            for v in [i as f32, 0.5, -1.0, 9.0] {
                bytes.write_f32::<LittleEndian>(v).unwrap();
            }
            bytes.extend_from_slice(&[0, 51, 255, 7]);
        }
        bytes.push(3);
        for i in 0..3 {
            bytes.write_i32::<LittleEndian>(i).unwrap();
        }
        let c = parse_ply(&bytes, Path::new("mem.ply")).unwrap();
        assert_eq!(c.point_count(), 2);
        assert_eq!(c.positions()[1], [1.0, 0.5, -1.0]);
        assert_eq!(c.colors()[0], [0.0, 0.2, 1.0]);
    }

    #[test]
    fn missing_color_names_the_line() {
        let bytes = b"ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\nproperty float z\nend_header\n0 0 0\n";
        match parse_ply(bytes, Path::new("m.ply")) {
            Err(Error::Format { line, message, .. }) => {
                assert_eq!(line, 7);
                assert!(message.contains("red"), "{message}");
            }
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn bad_property_type_names_the_line() {
        let bytes = b"ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty quux y\nend_header\n";
        match parse_ply(bytes, Path::new("m.ply")) {
            Err(Error::Format { line, .. }) => assert_eq!(line, 5),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn zero_vertices_is_empty_error() {
        let bytes = b"ply\nformat ascii 1.0\nelement vertex 0\nproperty float x\nproperty float y\nproperty float z\nproperty uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n";
        assert!(matches!(parse_ply(bytes, Path::new("e.ply")), Err(Error::EmptyCloud)));
    }

    #[test]
    fn missing_file_is_io_error() {
        assert!(matches!(load_ply("/nonexistent/x.ply"), Err(Error::Io { .. })));
    }

    #[test]
    fn empty_cloud_cannot_be_saved() {
        let dir = tempfile::tempdir().unwrap();
        let empty = PointCloud::new(vec![], vec![]).unwrap();
        assert!(matches!(
            save_ply(&empty, dir.path().join("e.ply"), false),
            Err(Error::EmptyCloud)
        ));
    }

    #[test]
    fn unwritable_path_is_io_error() {
        let cloud = random_cloud(1, 0);
        assert!(matches!(
            save_ply(&cloud, "/nonexistent-dir/x.ply", true),
            Err(Error::Io { .. })
        ));
    }

    proptest::proptest! {
        #[test]
        fn roundtrip_within_color_quantization(
            pts in proptest::collection::vec(
                (-1e3f64..1e3, -1e3f64..1e3, -1e3f64..1e3, 0.0f64..=1.0, 0.0f64..=1.0, 0.0f64..=1.0),
                1..40,
            ),
            binary in proptest::bool::ANY,
        ) {
            let positions: Vec<_> = pts.iter().map(|p| [p.0, p.1, p.2]).collect();
            let colors: Vec<_> = pts.iter().map(|p| [p.3, p.4, p.5]).collect();
            let cloud = PointCloud::new(positions, colors).unwrap();
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("r.ply");
            save_ply(&cloud, &path, binary).unwrap();
            let back = load_ply(&path).unwrap();
            proptest::prop_assert_eq!(back.positions(), cloud.positions());
            for (a, b) in back.colors().iter().zip(cloud.colors()) {
                for k in 0..3 {
                    proptest::prop_assert!((a[k] - b[k]).abs() <= 0.5 / 255.0 + 1e-12);
                }
            }
        }
    }
}
