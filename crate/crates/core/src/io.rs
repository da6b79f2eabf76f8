//! On-disk formats. All text formats are line-oriented, whitespace-separated,
//! with `#` comments; floats are written with Rust's shortest round-trip
//! formatting so load(save(x)) is exact.
//!
//! Scene file (`.scene.txt`):
//! ```text
//! splatscene 1
//! # optional comment lines
//! dim <embedding_dim> <semantic_dim>
//! bound <minx> <miny> <minz> <maxx> <maxy> <maxz>
//! count <n>
//! <n> primitive lines:
//!   px py pz  sx sy sz  qw qx qy qz  opacity  r g b  <d instance floats> <d_s semantic floats>
//! ```
//!
//! Label maps are binary 16-bit PGM (P5, maxval 65535, big-endian samples).
//! Embedding maps are a 16-byte header (magic "EMAP", then H, W, d as u32
//! little-endian) followed by H*W*d IEEE-754 f32 values, little-endian,
//! row-major with the embedding dimension fastest; a sibling d = 1 file
//! carries coverage when needed.
//!
//! The manifest (`manifest.txt`) lists the scene file, per-view cameras,
//! mask paths, and each view's train/eval role.

use std::fmt::Write as _;
use std::io::{BufRead, Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::{Matrix4, Quaternion, Vector2, Vector3};

use crate::model::{
    Aabb, Camera, GaussianPrimitive, LabelKind, LabelMap, Scene, MAX_LABEL,
};
use crate::train::LossRecord;
use crate::{Error, Result};

fn fmt_err(what: &str, detail: impl Into<String>) -> Error {
    Error::format(what.to_string(), detail.into())
}

fn push_floats(line: &mut String, values: &[f64]) {
    for v in values {
        let _ = write!(line, " {v}");
    }
}

/// Serialize a scene with optional leading comment lines (metadata such as
/// the generating seed).
pub fn write_scene(path: &Path, scene: &Scene, comments: &[String]) -> Result<()> {
    let mut out = String::new();
    out.push_str("splatscene 1\n");
    for c in comments {
        let _ = writeln!(out, "# {c}");
    }
    let _ = writeln!(out, "dim {} {}", scene.embedding_dim, scene.semantic_dim);
    let b = &scene.bound;
    let _ = writeln!(
        out,
        "bound {} {} {} {} {} {}",
        b.min.x, b.min.y, b.min.z, b.max.x, b.max.y, b.max.z
    );
    let _ = writeln!(out, "count {}", scene.primitives.len());
    for p in &scene.primitives {
        let mut line = String::new();
        push_floats(&mut line, &[p.position.x, p.position.y, p.position.z]);
        push_floats(&mut line, &[p.scale.x, p.scale.y, p.scale.z]);
        push_floats(&mut line, &[p.rotation.w, p.rotation.i, p.rotation.j, p.rotation.k]);
        push_floats(&mut line, &[p.opacity]);
        push_floats(&mut line, &p.color);
        push_floats(&mut line, &p.instance_embedding);
        push_floats(&mut line, &p.semantic_embedding);
        let _ = writeln!(out, "{}", line.trim_start());
    }
    std::fs::write(path, out)?;
    Ok(())
}

struct Tokens<'a> {
    tokens: std::str::SplitAsciiWhitespace<'a>,
    what: &'a str,
}

impl<'a> Tokens<'a> {
    fn next_f64(&mut self) -> Result<f64> {
        let token = self
            .tokens
            .next()
            .ok_or_else(|| fmt_err(self.what, "missing numeric field"))?;
        token
            .parse()
            .map_err(|e| fmt_err(self.what, format!("bad float {token:?}: {e}")))
    }
}

/// Parse a scene file written by [`write_scene`].
pub fn read_scene(path: &Path) -> Result<Scene> {
    let text = std::fs::read_to_string(path)?;
    let what = format!("scene file {}", path.display());
    let mut lines = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'));
    let header = lines.next().ok_or_else(|| fmt_err(&what, "empty file"))?;
    if header != "splatscene 1" {
        return Err(fmt_err(&what, format!("bad header {header:?}")));
    }
    let dim_line = lines.next().ok_or_else(|| fmt_err(&what, "missing dim line"))?;
    let mut parts = dim_line.split_ascii_whitespace();
    if parts.next() != Some("dim") {
        return Err(fmt_err(&what, "expected dim line"));
    }
    let embedding_dim: usize = parts
        .next()
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| fmt_err(&what, "bad embedding dim"))?;
    let semantic_dim: usize = parts
        .next()
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| fmt_err(&what, "bad semantic dim"))?;

    let bound_line = lines.next().ok_or_else(|| fmt_err(&what, "missing bound"))?;
    let mut t = Tokens {
        tokens: bound_line.split_ascii_whitespace(),
        what: &what,
    };
    if t.tokens.next() != Some("bound") {
        return Err(fmt_err(&what, "expected bound line"));
    }
    let bound = Aabb {
        min: Vector3::new(t.next_f64()?, t.next_f64()?, t.next_f64()?),
        max: Vector3::new(t.next_f64()?, t.next_f64()?, t.next_f64()?),
    };

    let count_line = lines.next().ok_or_else(|| fmt_err(&what, "missing count"))?;
    let count: usize = count_line
        .strip_prefix("count ")
        .and_then(|t| t.trim().parse().ok())
        .ok_or_else(|| fmt_err(&what, "bad count line"))?;

    let mut primitives = Vec::with_capacity(count);
    for _ in 0..count {
        let line = lines
            .next()
            .ok_or_else(|| fmt_err(&what, "truncated primitive list"))?;
        let mut t = Tokens {
            tokens: line.split_ascii_whitespace(),
            what: &what,
        };
        let position = Vector3::new(t.next_f64()?, t.next_f64()?, t.next_f64()?);
        let scale = Vector3::new(t.next_f64()?, t.next_f64()?, t.next_f64()?);
        let rotation = Quaternion::new(t.next_f64()?, t.next_f64()?, t.next_f64()?, t.next_f64()?);
        let opacity = t.next_f64()?;
        let color = [t.next_f64()?, t.next_f64()?, t.next_f64()?];
        let instance_embedding = (0..embedding_dim)
            .map(|_| t.next_f64())
            .collect::<Result<Vec<f64>>>()?;
        let semantic_embedding = (0..semantic_dim)
            .map(|_| t.next_f64())
            .collect::<Result<Vec<f64>>>()?;
        primitives.push(GaussianPrimitive {
            position,
            scale,
            rotation,
            opacity,
            color,
            instance_embedding,
            semantic_embedding,
        });
    }
    Ok(Scene {
        primitives,
        embedding_dim,
        semantic_dim,
        bound,
    })
}

/// Write a label map as binary 16-bit PGM. Labels above 65535 are rejected.
pub fn write_pgm(path: &Path, map: &LabelMap, comment: Option<&str>) -> Result<()> {
    if let Some(&too_big) = map.labels.iter().find(|&&l| l > 65535) {
        return Err(Error::format(
            format!("pgm file {}", path.display()),
            format!("label {too_big} exceeds the 16-bit PGM range"),
        ));
    }
    let mut out = Vec::with_capacity(map.labels.len() * 2 + 64);
    out.extend_from_slice(b"P5\n");
    if let Some(c) = comment {
        out.extend_from_slice(format!("# {c}\n").as_bytes());
    }
    out.extend_from_slice(format!("{} {}\n65535\n", map.width, map.height).as_bytes());
    for &l in &map.labels {
        out.extend_from_slice(&(l as u16).to_be_bytes());
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Read a binary 16-bit PGM written by [`write_pgm`] (also accepts
/// maxval <= 255 single-byte files).
pub fn read_pgm(path: &Path, kind: LabelKind) -> Result<LabelMap> {
    let what = format!("pgm file {}", path.display());
    let data = std::fs::read(path)?;
    let mut reader = std::io::BufReader::new(&data[..]);
    let mut header_fields = Vec::new();
    let mut line = String::new();
    while header_fields.len() < 4 {
        line.clear();
        if reader.read_line(&mut line)? == 0 {
            return Err(fmt_err(&what, "truncated header"));
        }
        let content = line.split('#').next().unwrap_or("");
        header_fields.extend(content.split_ascii_whitespace().map(str::to_string));
    }
    if header_fields[0] != "P5" {
        return Err(fmt_err(&what, "not a binary PGM (P5)"));
    }
    let width: usize = header_fields[1]
        .parse()
        .map_err(|_| fmt_err(&what, "bad width"))?;
    let height: usize = header_fields[2]
        .parse()
        .map_err(|_| fmt_err(&what, "bad height"))?;
    let maxval: u32 = header_fields[3]
        .parse()
        .map_err(|_| fmt_err(&what, "bad maxval"))?;
    let mut payload = Vec::new();
    reader.read_to_end(&mut payload)?;
    let expected = width * height * if maxval > 255 { 2 } else { 1 };
    if payload.len() != expected {
        return Err(fmt_err(
            &what,
            format!("expected {expected} sample bytes, found {}", payload.len()),
        ));
    }
    let labels: Vec<u32> = if maxval > 255 {
        payload
            .chunks_exact(2)
            .map(|b| u16::from_be_bytes([b[0], b[1]]) as u32)
            .collect()
    } else {
        payload.iter().map(|&b| b as u32).collect()
    };
    if let Some(&l) = labels.iter().find(|&&l| l > MAX_LABEL) {
        return Err(fmt_err(&what, format!("label {l} out of range")));
    }
    Ok(LabelMap::new(width, height, kind, labels))
}

const EMAP_MAGIC: &[u8; 4] = b"EMAP";

/// Write embedding-map values: 16-byte header (magic, H, W, d) then f32
/// little-endian values. Coverage and blend weights are not stored.
pub fn write_emap(path: &Path, map: &crate::model::EmbeddingMap) -> Result<()> {
    let mut out = Vec::with_capacity(16 + map.values.len() * 4);
    out.extend_from_slice(EMAP_MAGIC);
    out.extend_from_slice(&(map.height as u32).to_le_bytes());
    out.extend_from_slice(&(map.width as u32).to_le_bytes());
    out.extend_from_slice(&(map.dim as u32).to_le_bytes());
    for &v in &map.values {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Read an embedding-map file: returns (height, width, dim, values).
pub fn read_emap(path: &Path) -> Result<(usize, usize, usize, Vec<f64>)> {
    let what = format!("embedding map {}", path.display());
    let data = std::fs::read(path)?;
    if data.len() < 16 || &data[0..4] != EMAP_MAGIC {
        return Err(fmt_err(&what, "bad magic"));
    }
    let u32_at = |off: usize| u32::from_le_bytes(data[off..off + 4].try_into().unwrap()) as usize;
    let (h, w, d) = (u32_at(4), u32_at(8), u32_at(12));
    let expected = 16 + h * w * d * 4;
    if data.len() != expected {
        return Err(fmt_err(
            &what,
            format!("expected {expected} bytes, found {}", data.len()),
        ));
    }
    let values = data[16..]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
        .collect();
    Ok((h, w, d, values))
}

/// One view entry in a dataset manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifestView {
    pub index: usize,
    pub camera: Camera,
    /// Role is "train" or "eval".
    pub is_eval: bool,
    pub train_instance: PathBuf,
    pub gt_instance: PathBuf,
    pub gt_semantic: PathBuf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub scene: PathBuf,
    pub views: Vec<ManifestView>,
    /// key = value metadata echoed from the generating configuration.
    pub metadata: Vec<(String, String)>,
}

pub fn write_manifest(path: &Path, manifest: &Manifest) -> Result<()> {
    let mut out = String::new();
    out.push_str("splatmanifest 1\n");
    for (k, v) in &manifest.metadata {
        let _ = writeln!(out, "# {k} = {v}");
    }
    let _ = writeln!(out, "scene {}", manifest.scene.display());
    let _ = writeln!(out, "views {}", manifest.views.len());
    for v in &manifest.views {
        let cam = &v.camera;
        let mut line = format!(
            "view {} role {} size {} {} focal {} {} principal {} {} pose",
            v.index,
            if v.is_eval { "eval" } else { "train" },
            cam.width,
            cam.height,
            cam.focal.x,
            cam.focal.y,
            cam.principal_point.x,
            cam.principal_point.y
        );
        for r in 0..4 {
            for c in 0..4 {
                let _ = write!(line, " {}", cam.world_to_camera[(r, c)]);
            }
        }
        let _ = write!(
            line,
            " train_instance {} gt_instance {} gt_semantic {}",
            v.train_instance.display(),
            v.gt_instance.display(),
            v.gt_semantic.display()
        );
        let _ = writeln!(out, "{line}");
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let what = format!("manifest {}", path.display());
    let text = std::fs::read_to_string(path)?;
    let mut metadata = Vec::new();
    for line in text.lines() {
        if let Some(rest) = line.trim().strip_prefix('#') {
            if let Some((k, v)) = rest.split_once('=') {
                metadata.push((k.trim().to_string(), v.trim().to_string()));
            }
        }
    }
    let mut lines = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'));
    if lines.next() != Some("splatmanifest 1") {
        return Err(fmt_err(&what, "bad header"));
    }
    let scene_line = lines.next().ok_or_else(|| fmt_err(&what, "missing scene"))?;
    let scene = PathBuf::from(
        scene_line
            .strip_prefix("scene ")
            .ok_or_else(|| fmt_err(&what, "expected scene line"))?,
    );
    let count_line = lines.next().ok_or_else(|| fmt_err(&what, "missing views"))?;
    let count: usize = count_line
        .strip_prefix("views ")
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| fmt_err(&what, "bad views line"))?;
    let mut views = Vec::with_capacity(count);
    for _ in 0..count {
        let line = lines.next().ok_or_else(|| fmt_err(&what, "truncated view list"))?;
        let mut tokens = line.split_ascii_whitespace();
        let mut expect = |word: &str| -> Result<()> {
            match tokens.next() {
                Some(t) if t == word => Ok(()),
                other => Err(fmt_err(&what, format!("expected {word:?}, found {other:?}"))),
            }
        };
        expect("view")?;
        let mut tokens2 = line.split_ascii_whitespace().skip(1);
        let index: usize = tokens2
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| fmt_err(&what, "bad view index"))?;
        let mut rest: Vec<&str> = tokens2.collect();
        // parse keyword fields in order
        let take = |rest: &mut Vec<&str>, key: &str, n: usize| -> Result<Vec<String>> {
            if rest.first() != Some(&key) {
                return Err(fmt_err(&what, format!("expected field {key}")));
            }
            if rest.len() < n + 1 {
                return Err(fmt_err(&what, format!("field {key} truncated")));
            }
            let vals = rest[1..=n].iter().map(|s| s.to_string()).collect();
            rest.drain(0..=n);
            Ok(vals)
        };
        let role = take(&mut rest, "role", 1)?;
        let size = take(&mut rest, "size", 2)?;
        let focal = take(&mut rest, "focal", 2)?;
        let principal = take(&mut rest, "principal", 2)?;
        let pose = take(&mut rest, "pose", 16)?;
        let train_instance = take(&mut rest, "train_instance", 1)?;
        let gt_instance = take(&mut rest, "gt_instance", 1)?;
        let gt_semantic = take(&mut rest, "gt_semantic", 1)?;
        let f = |s: &String| -> Result<f64> {
            s.parse().map_err(|e| fmt_err(&what, format!("bad float {s:?}: {e}")))
        };
        let mut pose_matrix = Matrix4::zeros();
        for (i, v) in pose.iter().enumerate() {
            pose_matrix[(i / 4, i % 4)] = f(v)?;
        }
        views.push(ManifestView {
            index,
            camera: Camera {
                world_to_camera: pose_matrix,
                focal: Vector2::new(f(&focal[0])?, f(&focal[1])?),
                principal_point: Vector2::new(f(&principal[0])?, f(&principal[1])?),
                width: size[0].parse().map_err(|_| fmt_err(&what, "bad width"))?,
                height: size[1].parse().map_err(|_| fmt_err(&what, "bad height"))?,
            },
            is_eval: role[0] == "eval",
            train_instance: PathBuf::from(&train_instance[0]),
            gt_instance: PathBuf::from(&gt_instance[0]),
            gt_semantic: PathBuf::from(&gt_semantic[0]),
        });
    }
    Ok(Manifest {
        scene,
        views,
        metadata,
    })
}

/// Write the loss history as CSV with a leading `# key = value` comment per
/// metadata entry.
pub fn write_loss_csv(path: &Path, history: &[LossRecord], metadata: &[(String, String)]) -> Result<()> {
    let mut out = String::new();
    for (k, v) in metadata {
        let _ = writeln!(out, "# {k} = {v}");
    }
    out.push_str("iteration,cluster,triplet,reg3d,total\n");
    for r in history {
        let _ = writeln!(out, "{},{},{},{},{}", r.iteration, r.cluster, r.triplet, r.reg3d, r.total);
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Write a d x d projection matrix as text.
pub fn write_matrix(path: &Path, dim: usize, values: &[f64]) -> Result<()> {
    let mut out = format!("matrix {dim} {dim}\n");
    for r in 0..dim {
        let mut line = String::new();
        push_floats(&mut line, &values[r * dim..(r + 1) * dim]);
        let _ = writeln!(out, "{}", line.trim_start());
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn read_matrix(path: &Path) -> Result<(usize, Vec<f64>)> {
    let what = format!("matrix {}", path.display());
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines.next().ok_or_else(|| fmt_err(&what, "empty"))?;
    let dims: Vec<usize> = header
        .strip_prefix("matrix ")
        .map(|r| r.split_ascii_whitespace().filter_map(|t| t.parse().ok()).collect())
        .unwrap_or_default();
    if dims.len() != 2 || dims[0] != dims[1] {
        return Err(fmt_err(&what, "bad header"));
    }
    let mut values = Vec::with_capacity(dims[0] * dims[1]);
    for line in lines {
        for token in line.split_ascii_whitespace() {
            values.push(token.parse().map_err(|e| fmt_err(&what, format!("bad float: {e}")))?);
        }
    }
    if values.len() != dims[0] * dims[1] {
        return Err(fmt_err(&what, "wrong number of entries"));
    }
    Ok((dims[0], values))
}

/// Minimal SVG line plot of the loss series (one polyline per term).
pub fn write_loss_svg(path: &Path, history: &[LossRecord]) -> Result<()> {
    let (w, h, pad) = (720.0, 360.0, 40.0);
    let series: [(&str, &str, Box<dyn Fn(&LossRecord) -> f64>); 4] = [
        ("cluster", "#1f77b4", Box::new(|r| r.cluster)),
        ("triplet", "#ff7f0e", Box::new(|r| r.triplet)),
        ("reg3d", "#2ca02c", Box::new(|r| r.reg3d)),
        ("total", "#d62728", Box::new(|r| r.total)),
    ];
    let n = history.len().max(1);
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for r in history {
        for (_, _, f) in &series {
            lo = lo.min(f(r));
            hi = hi.max(f(r));
        }
    }
    if !lo.is_finite() || lo == hi {
        lo = 0.0;
        hi = 1.0;
    }
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n\
         <rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n"
    );
    for (si, (name, color, f)) in series.iter().enumerate() {
        let mut points = String::new();
        for (i, r) in history.iter().enumerate() {
            let x = pad + (w - 2.0 * pad) * i as f64 / (n - 1).max(1) as f64;
            let y = h - pad - (h - 2.0 * pad) * (f(r) - lo) / (hi - lo);
            let _ = write!(points, "{x:.1},{y:.1} ");
        }
        let _ = writeln!(
            svg,
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>",
            points.trim_end()
        );
        let _ = writeln!(
            svg,
            "<text x=\"{}\" y=\"{}\" fill=\"{color}\" font-size=\"12\">{name}</text>",
            pad + 80.0 * si as f64,
            16.0
        );
    }
    let _ = writeln!(svg, "</svg>");
    std::fs::write(path, svg)?;
    Ok(())
}

/// Parse a `key = value` config file: one pair per line, `#` comments.
pub fn read_key_values(path: &Path) -> Result<Vec<(String, String)>> {
    let what = format!("config {}", path.display());
    let text = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| fmt_err(&what, format!("line {}: expected key = value", ln + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

/// Atomically-ish write JSON (canonical key order comes from the Value's
/// sorted maps).
pub fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let mut out = serde_json::to_string_pretty(value)
        .map_err(|e| fmt_err("json", e.to_string()))?;
    out.push('\n');
    let mut file = std::fs::File::create(path)?;
    file.write_all(out.as_bytes())?;
    Ok(())
}
