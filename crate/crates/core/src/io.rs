//! Plain-text point cloud formats and result files.
//!
//! XYZ: one point per line, `x y z [intensity] [label]`, whitespace
//! separated. Label 0 is wood, 1 is leaf; a missing trailing column means
//! unknown. A `-` placeholder marks a missing intensity or label when a
//! later column is present. Lines starting with `#` are comments.
//!
//! PLY: ASCII only. The `vertex` element must carry `x`, `y`, `z`; optional
//! `intensity` and `label` properties are read when present. Other elements
//! and properties are skipped.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::cloud::{Label, Point, PointCloud};
use crate::error::{Error, Result};
use crate::keypoints::KeyPointSet;
use crate::eval::RegistrationReport;
use crate::skeleton::SkeletonGraph;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CloudFileFormat {
    XyzAscii,
    PlyAscii,
}

impl CloudFileFormat {
    pub fn from_path(path: &Path) -> Result<Self> {
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase);
        match ext.as_deref() {
            Some("xyz") | Some("txt") => Ok(Self::XyzAscii),
            Some("ply") => Ok(Self::PlyAscii),
            other => Err(Error::UnsupportedFormat(format!(
                "cannot infer format from extension {:?} of {}",
                other.unwrap_or(""),
                path.display()
            ))),
        }
    }

    fn resolve(path: &Path, format: Option<CloudFileFormat>) -> Result<Self> {
        match format {
            Some(f) => Ok(f),
            None => Self::from_path(path),
        }
    }
}

impl std::str::FromStr for CloudFileFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "xyz" => Ok(Self::XyzAscii),
            "ply" => Ok(Self::PlyAscii),
            other => Err(Error::UnsupportedFormat(other.to_string())),
        }
    }
}

/// Reads a cloud; the format is inferred from the extension unless given.
pub fn read_cloud(path: impl AsRef<Path>, format: Option<CloudFileFormat>) -> Result<PointCloud> {
    let path = path.as_ref();
    let format = CloudFileFormat::resolve(path, format)?;
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let text = String::from_utf8(bytes).map_err(|_| {
        Error::UnsupportedFormat(format!("{} is not UTF-8 text", path.display()))
    })?;
    let mut cloud = match format {
        CloudFileFormat::XyzAscii => parse_xyz(&text, path)?,
        CloudFileFormat::PlyAscii => parse_ply(&text, path)?,
    };
    if cloud.frame_id.is_empty() {
        cloud.frame_id = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
    }
    Ok(cloud)
}

pub fn write_cloud(
    cloud: &PointCloud,
    path: impl AsRef<Path>,
    format: Option<CloudFileFormat>,
) -> Result<()> {
    let path = path.as_ref();
    let text = match CloudFileFormat::resolve(path, format)? {
        CloudFileFormat::XyzAscii => format_xyz(cloud),
        CloudFileFormat::PlyAscii => format_ply(cloud),
    };
    write_text(path, &text)
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn parse_coord(tok: &str, path: &Path, line: usize) -> Result<f64> {
    let v: f64 = tok
        .parse()
        .map_err(|_| parse_err(path, line, format!("invalid number `{tok}`")))?;
    if !v.is_finite() {
        return Err(parse_err(path, line, format!("non-finite coordinate `{tok}`")));
    }
    Ok(v)
}

pub fn parse_xyz(text: &str, path: &Path) -> Result<PointCloud> {
    let mut points = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        if !(3..=5).contains(&toks.len()) {
            return Err(parse_err(
                path,
                line_no,
                format!("expected 3 to 5 columns, found {}", toks.len()),
            ));
        }
        let mut p = Point::new(
            parse_coord(toks[0], path, line_no)?,
            parse_coord(toks[1], path, line_no)?,
            parse_coord(toks[2], path, line_no)?,
        );
        if let Some(&tok) = toks.get(3) {
            if tok != "-" {
                p.intensity = Some(parse_coord(tok, path, line_no)?);
            }
        }
        if let Some(&tok) = toks.get(4) {
            if tok != "-" {
                let code: i64 = tok
                    .parse()
                    .map_err(|_| parse_err(path, line_no, format!("invalid label `{tok}`")))?;
                p.label = Label::from_code(code).ok_or_else(|| {
                    parse_err(path, line_no, format!("label must be 0 or 1, got {code}"))
                })?;
            }
        }
        points.push(p);
    }
    if points.is_empty() {
        return Err(Error::EmptyCloud);
    }
    PointCloud::new(points, "")
}

pub fn format_xyz(cloud: &PointCloud) -> String {
    let has_label = cloud.points().iter().any(|p| p.label != Label::Unknown);
    let has_intensity = has_label || cloud.points().iter().any(|p| p.intensity.is_some());
    let mut out = String::with_capacity(cloud.len() * 48);
    for p in cloud.points() {
        let v = p.position;
        // `{}` on f64 prints the shortest representation that round-trips.
        write!(out, "{} {} {}", v.x, v.y, v.z).unwrap();
        if has_intensity {
            match p.intensity {
                Some(i) => write!(out, " {i}").unwrap(),
                None => out.push_str(" -"),
            }
        }
        if has_label {
            match p.label.code() {
                Some(c) => write!(out, " {c}").unwrap(),
                None => out.push_str(" -"),
            }
        }
        out.push('\n');
    }
    out
}

struct PlyElement {
    name: String,
    count: usize,
    /// Scalar property names; `None` for list properties.
    props: Vec<Option<String>>,
}

pub fn parse_ply(text: &str, path: &Path) -> Result<PointCloud> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, l)) if l.trim() == "ply" => {}
        _ => return Err(parse_err(path, 1, "missing `ply` magic")),
    }
    let mut elements: Vec<PlyElement> = Vec::new();
    let mut header_done = false;
    for (i, raw) in lines.by_ref() {
        let line_no = i + 1;
        let toks: Vec<&str> = raw.split_whitespace().collect();
        match toks.as_slice() {
            [] => {}
            ["comment", ..] | ["obj_info", ..] => {}
            ["format", fmt, ..] => {
                if *fmt != "ascii" {
                    return Err(Error::UnsupportedFormat(format!(
                        "{}: PLY format `{fmt}` (only ascii is supported)",
                        path.display()
                    )));
                }
            }
            ["element", name, count] => {
                let count = count
                    .parse()
                    .map_err(|_| parse_err(path, line_no, "invalid element count"))?;
                elements.push(PlyElement {
                    name: name.to_string(),
                    count,
                    props: Vec::new(),
                });
            }
            ["property", "list", ..] => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| parse_err(path, line_no, "property before element"))?;
                el.props.push(None);
            }
            ["property", _ty, name] => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| parse_err(path, line_no, "property before element"))?;
                el.props.push(Some(name.to_string()));
            }
            ["end_header"] => {
                header_done = true;
                break;
            }
            _ => return Err(parse_err(path, line_no, format!("unexpected header line `{raw}`"))),
        }
    }
    if !header_done {
        return Err(parse_err(path, 1, "missing end_header"));
    }

    let mut points = Vec::new();
    let mut body = lines.filter(|(_, l)| !l.trim().is_empty());
    for el in &elements {
        if el.name != "vertex" {
            for _ in 0..el.count {
                body.next()
                    .ok_or_else(|| parse_err(path, 0, format!("truncated `{}` element", el.name)))?;
            }
            continue;
        }
        if el.props.iter().any(Option::is_none) {
            return Err(Error::UnsupportedFormat("list properties on vertex".into()));
        }
        let col = |name: &str| el.props.iter().position(|p| p.as_deref() == Some(name));
        let (Some(cx), Some(cy), Some(cz)) = (col("x"), col("y"), col("z")) else {
            return Err(parse_err(path, 0, "vertex element lacks x/y/z"));
        };
        let ci = col("intensity");
        let cl = col("label");
        for _ in 0..el.count {
            let (i, raw) = body
                .next()
                .ok_or_else(|| parse_err(path, 0, "fewer vertices than declared"))?;
            let line_no = i + 1;
            let toks: Vec<&str> = raw.split_whitespace().collect();
            if toks.len() != el.props.len() {
                return Err(parse_err(
                    path,
                    line_no,
                    format!("expected {} values, found {}", el.props.len(), toks.len()),
                ));
            }
            let mut p = Point::new(
                parse_coord(toks[cx], path, line_no)?,
                parse_coord(toks[cy], path, line_no)?,
                parse_coord(toks[cz], path, line_no)?,
            );
            if let Some(ci) = ci {
                let v: f64 = toks[ci]
                    .parse()
                    .map_err(|_| parse_err(path, line_no, "invalid intensity"))?;
                p.intensity = v.is_finite().then_some(v);
            }
            if let Some(cl) = cl {
                let v: f64 = toks[cl]
                    .parse()
                    .map_err(|_| parse_err(path, line_no, "invalid label"))?;
                p.label = if v.fract() == 0.0 {
                    Label::from_code(v as i64).unwrap_or(Label::Unknown)
                } else {
                    Label::Unknown
                };
            }
            points.push(p);
        }
    }
    if points.is_empty() {
        return Err(Error::EmptyCloud);
    }
    PointCloud::new(points, "")
}

pub fn format_ply(cloud: &PointCloud) -> String {
    let has_intensity = cloud.points().iter().any(|p| p.intensity.is_some());
    let has_label = cloud.points().iter().any(|p| p.label != Label::Unknown);
    let mut out = String::with_capacity(cloud.len() * 48 + 256);
    out.push_str("ply\nformat ascii 1.0\n");
    if !cloud.frame_id.is_empty() {
        writeln!(out, "comment frame {}", cloud.frame_id).unwrap();
    }
    writeln!(out, "element vertex {}", cloud.len()).unwrap();
    out.push_str("property double x\nproperty double y\nproperty double z\n");
    if has_intensity {
        out.push_str("property double intensity\n");
    }
    if has_label {
        out.push_str("property int label\n");
    }
    out.push_str("end_header\n");
    for p in cloud.points() {
        let v = p.position;
        write!(out, "{} {} {}", v.x, v.y, v.z).unwrap();
        if has_intensity {
            match p.intensity {
                Some(i) => write!(out, " {i}").unwrap(),
                None => out.push_str(" nan"),
            }
        }
        if has_label {
            write!(out, " {}", p.label.code().map_or(-1, i32::from)).unwrap();
        }
        out.push('\n');
    }
    out
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Serializes a registration report as pretty-printed JSON.
pub fn write_report(report: &RegistrationReport, path: impl AsRef<Path>) -> Result<()> {
    let json = report_json(report)?;
    write_text(path.as_ref(), &json)
}

pub fn report_json(report: &RegistrationReport) -> Result<String> {
    let mut json =
        serde_json::to_string_pretty(report).map_err(|e| Error::Serialize(e.to_string()))?;
    json.push('\n');
    Ok(json)
}

/// Writes skeleton node positions (XYZ) and an `id_a id_b` edge list.
pub fn write_skeleton(
    skeleton: &SkeletonGraph,
    nodes_path: impl AsRef<Path>,
    edges_path: impl AsRef<Path>,
) -> Result<()> {
    let mut nodes = String::new();
    for n in skeleton.nodes() {
        writeln!(nodes, "{} {} {}", n.position.x, n.position.y, n.position.z).unwrap();
    }
    let mut edges = String::new();
    for (a, b) in skeleton.edges() {
        writeln!(edges, "{a} {b}").unwrap();
    }
    write_text(nodes_path.as_ref(), &nodes)?;
    write_text(edges_path.as_ref(), &edges)
}

/// Writes key points as `x y z kind path_rank`, kind one of root/branch/end.
pub fn write_keypoints(keypoints: &KeyPointSet, path: impl AsRef<Path>) -> Result<()> {
    let mut out = String::from("# x y z kind path_rank\n");
    for k in keypoints.points() {
        writeln!(
            out,
            "{} {} {} {} {}",
            k.position.x,
            k.position.y,
            k.position.z,
            k.kind.as_str(),
            k.path_rank
        )
        .unwrap();
    }
    write_text(path.as_ref(), &out)
}
