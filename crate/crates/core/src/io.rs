//! File formats: basis and hair-map binaries, strand text export, PFM/PGM
//! images, PNG previews and key-value descriptors.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};

use crate::codec::{band_count, Point, Strand, StrandBasis};
use crate::error::{Error, Result};
use crate::gabor::Image;
use crate::hairmap::{HairMap, PcaHairMap};
use crate::losses::TargetMaps;
use crate::render::RenderBuffers;
use crate::scalp::{CameraModel, HeadModel};

const BASIS_MAGIC: &[u8; 5] = b"SBAS1";
const HAIRMAP_MAGIC: &[u8; 5] = b"HMAP1";
/// Tag for the unitary DFT normalization used by the codec.
pub const NORMALIZATION_UNITARY: u32 = 1;

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|source| Error::File { path: path.to_owned(), source })
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| Error::File { path: path.to_owned(), source })
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).map_err(|source| Error::File { path: path.to_owned(), source })
}

fn format_err(msg: impl Into<String>) -> Error {
    Error::Format(msg.into())
}

/// Little-endian cursor over a byte slice.
struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.bytes.len()).ok_or_else(|| format_err("unexpected end of data"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        (0..n).map(|_| self.f64()).collect()
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(format_err(format!("{} trailing bytes", self.bytes.len() - self.pos)));
        }
        Ok(())
    }
}

fn dim(v: usize) -> Result<u32> {
    u32::try_from(v).map_err(|_| format_err("dimension does not fit the file format"))
}

/// Basis layout: magic, `u32` point count, band count, component count and
/// normalization tag; the mean spectrum and the component rows as `f64`;
/// then a `u32` flag and, when set, one variance per component.
pub fn basis_to_bytes(basis: &StrandBasis) -> Result<Vec<u8>> {
    let mut out = BASIS_MAGIC.to_vec();
    for v in [basis.point_count(), basis.num_bands(), basis.num_components()] {
        out.extend(dim(v)?.to_le_bytes());
    }
    out.extend(NORMALIZATION_UNITARY.to_le_bytes());
    out.extend(basis.mean().iter().flat_map(|v| v.to_le_bytes()));
    for row in basis.components().row_iter() {
        out.extend(row.iter().flat_map(|v| v.to_le_bytes()));
    }
    match basis.explained_variance() {
        Some(var) => {
            out.extend(1u32.to_le_bytes());
            out.extend(var.iter().flat_map(|v| v.to_le_bytes()));
        }
        None => out.extend(0u32.to_le_bytes()),
    }
    Ok(out)
}

pub fn basis_from_bytes(bytes: &[u8]) -> Result<StrandBasis> {
    let mut r = Reader::new(bytes);
    if r.take(5)? != BASIS_MAGIC {
        return Err(format_err("not a basis file"));
    }
    let (l, k, c, tag) = (r.u32()? as usize, r.u32()? as usize, r.u32()? as usize, r.u32()?);
    if tag != NORMALIZATION_UNITARY {
        return Err(format_err(format!("unknown DFT normalization tag {tag}")));
    }
    if l < 2 || k != band_count(l) {
        return Err(format_err(format!("band count {k} does not match point count {l}")));
    }
    let d = 6 * k;
    if c > d {
        return Err(format_err("more components than frequency dimensions"));
    }
    let mean = DVector::from_vec(r.f64s(d)?);
    let components = DMatrix::from_row_slice(c, d, &r.f64s(c * d)?);
    let basis = StrandBasis::new(l, components, mean)?;
    let basis = match r.u32()? {
        0 => basis,
        1 => basis.with_explained_variance(r.f64s(c)?),
        f => return Err(format_err(format!("bad variance flag {f}"))),
    };
    r.finish()?;
    Ok(basis)
}

pub fn write_basis(path: &Path, basis: &StrandBasis) -> Result<()> {
    write_file(path, basis_to_bytes(basis)?)
}

pub fn read_basis(path: &Path) -> Result<StrandBasis> {
    basis_from_bytes(&read_bytes(path)?)
}

/// Hair-map layout: magic, `u32` width, height and component count, every
/// texel's coefficients, then the baldness plane, all `f32`.
pub fn hairmap_to_bytes(map: &PcaHairMap) -> Result<Vec<u8>> {
    let mut out = HAIRMAP_MAGIC.to_vec();
    for v in [map.width(), map.height(), map.num_components()] {
        out.extend(dim(v)?.to_le_bytes());
    }
    out.extend(map.coeffs().iter().flat_map(|v| (*v as f32).to_le_bytes()));
    out.extend(map.baldness().iter().flat_map(|v| (*v as f32).to_le_bytes()));
    Ok(out)
}

pub fn hairmap_from_bytes(bytes: &[u8]) -> Result<PcaHairMap> {
    let mut r = Reader::new(bytes);
    if r.take(5)? != HAIRMAP_MAGIC {
        return Err(format_err("not a hair-map file"));
    }
    let (w, h, c) = (r.u32()? as usize, r.u32()? as usize, r.u32()? as usize);
    let n = w.checked_mul(h).and_then(|t| t.checked_mul(c)).ok_or_else(|| format_err("hair map too large"))?;
    if n.saturating_mul(4) > bytes.len() {
        return Err(format_err("unexpected end of data"));
    }
    let coeffs = (0..n).map(|_| r.f32().map(f64::from)).collect::<Result<Vec<_>>>()?;
    let bald = (0..w * h).map(|_| r.f32().map(f64::from)).collect::<Result<Vec<_>>>()?;
    r.finish()?;
    PcaHairMap::new(w, h, c, coeffs, bald)
}

pub fn write_hairmap(path: &Path, map: &PcaHairMap) -> Result<()> {
    write_file(path, hairmap_to_bytes(map)?)
}

pub fn read_hairmap(path: &Path) -> Result<PcaHairMap> {
    hairmap_from_bytes(&read_bytes(path)?)
}

/// One strand per line: the point count, then `x y z` for every point.
pub fn strands_to_text<'a>(strands: impl IntoIterator<Item = &'a Strand>) -> String {
    let mut out = String::new();
    for s in strands {
        let _ = write!(out, "{}", s.len());
        for p in s.points() {
            let _ = write!(out, " {} {} {}", p.x, p.y, p.z);
        }
        out.push('\n');
    }
    out
}

pub fn strands_from_text(text: &str) -> Result<Vec<Strand>> {
    let mut out = Vec::new();
    for (no, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut fields = line.split_ascii_whitespace();
        let bad = |what: &str| format_err(format!("strand line {}: {what}", no + 1));
        let n: usize = fields.next().and_then(|f| f.parse().ok()).ok_or_else(|| bad("missing point count"))?;
        let vals = fields.map(|f| f.parse::<f64>().map_err(|_| bad("bad number"))).collect::<Result<Vec<_>>>()?;
        if vals.len() != 3 * n {
            return Err(bad(&format!("expected {} coordinates, got {}", 3 * n, vals.len())));
        }
        out.push(Strand::from_flat(&vals)?);
    }
    Ok(out)
}

/// Active strands of a hair map, in texel order.
pub fn write_strands(path: &Path, hair: &HairMap) -> Result<()> {
    write_file(path, strands_to_text(hair.active().map(|(_, s)| s)))
}

pub fn read_strands(path: &Path) -> Result<Vec<Strand>> {
    strands_from_text(&read_text(path)?)
}

/// A float image with 1 or 3 interleaved channels, top row first.
#[derive(Clone, Debug, PartialEq)]
pub struct FloatImage {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl FloatImage {
    pub fn gray(width: usize, height: usize, values: &[f64]) -> Self {
        Self { width, height, channels: 1, data: values.iter().map(|v| *v as f32).collect() }
    }

    /// Two-component vectors stored in the first two of three channels.
    pub fn vectors(width: usize, height: usize, values: &[[f64; 2]]) -> Self {
        let data = values.iter().flat_map(|v| [v[0] as f32, v[1] as f32, 0.0]).collect();
        Self { width, height, channels: 3, data }
    }

    pub fn to_gray(&self) -> Result<Vec<f64>> {
        if self.channels != 1 {
            return Err(format_err("expected a single-channel map"));
        }
        Ok(self.data.iter().map(|v| f64::from(*v)).collect())
    }

    pub fn to_vectors(&self) -> Result<Vec<[f64; 2]>> {
        if self.channels != 3 {
            return Err(format_err("expected a three-channel map"));
        }
        Ok(self.data.chunks_exact(3).map(|c| [f64::from(c[0]), f64::from(c[1])]).collect())
    }

    pub fn to_image(&self) -> Result<Image> {
        Image::new(self.width, self.height, self.to_gray()?)
    }
}

/// Little-endian PFM; rows are stored bottom-up as the format requires.
pub fn pfm_to_bytes(img: &FloatImage) -> Result<Vec<u8>> {
    let tag = match img.channels {
        1 => "Pf",
        3 => "PF",
        c => return Err(Error::InvalidInput(format!("PFM holds 1 or 3 channels, not {c}"))),
    };
    if img.data.len() != img.width * img.height * img.channels {
        return Err(Error::Shape("image data does not match its size".into()));
    }
    let mut out = format!("{tag}\n{} {}\n-1.0\n", img.width, img.height).into_bytes();
    let row = img.width * img.channels;
    for y in (0..img.height).rev() {
        out.extend(img.data[y * row..(y + 1) * row].iter().flat_map(|v| v.to_le_bytes()));
    }
    Ok(out)
}

pub fn pfm_from_bytes(bytes: &[u8]) -> Result<FloatImage> {
    // Header: three whitespace-terminated tokens, then one whitespace byte.
    let mut tokens = Vec::new();
    let mut pos = 0;
    while tokens.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(format_err("truncated PFM header"));
        }
        tokens.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| format_err("PFM header is not text"))?);
    }
    pos += 1;
    let channels = match tokens[0] {
        "Pf" => 1,
        "PF" => 3,
        t => return Err(format_err(format!("bad PFM tag {t}"))),
    };
    let parse = |t: &str| t.parse::<usize>().map_err(|_| format_err("bad PFM size"));
    let (width, height) = (parse(tokens[1])?, parse(tokens[2])?);
    let scale: f64 = tokens[3].parse().map_err(|_| format_err("bad PFM scale"))?;
    if scale == 0.0 || !scale.is_finite() {
        return Err(format_err("bad PFM scale"));
    }
    let row = width * channels;
    let need = row * height * 4;
    let body = bytes.get(pos..).filter(|b| b.len() == need).ok_or_else(|| format_err("PFM body has the wrong length"))?;
    let decode = |c: &[u8]| {
        let b: [u8; 4] = c.try_into().expect("4 bytes");
        if scale < 0.0 { f32::from_le_bytes(b) } else { f32::from_be_bytes(b) }
    };
    let mut data = vec![0.0f32; row * height];
    for (k, chunk) in body.chunks_exact(4).enumerate() {
        let (fy, x) = (k / row, k % row);
        data[(height - 1 - fy) * row + x] = decode(chunk);
    }
    Ok(FloatImage { width, height, channels, data })
}

pub fn write_pfm(path: &Path, img: &FloatImage) -> Result<()> {
    write_file(path, pfm_to_bytes(img)?)
}

pub fn read_pfm(path: &Path) -> Result<FloatImage> {
    pfm_from_bytes(&read_bytes(path)?)
}

/// Binary 8-bit PGM; set pixels are written as 255.
pub fn mask_to_pgm(width: usize, height: usize, mask: &[bool]) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend(mask.iter().map(|m| if *m { 255u8 } else { 0 }));
    out
}

/// Any nonzero sample counts as set. Comments in the header are skipped.
pub fn mask_from_pgm(bytes: &[u8]) -> Result<(usize, usize, Vec<bool>)> {
    let mut tokens = Vec::new();
    let mut pos = 0;
    while tokens.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(format_err("truncated PGM header"));
        }
        tokens.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    pos += 1;
    if tokens[0] != "P5" {
        return Err(format_err("only binary PGM (P5) is supported"));
    }
    let parse = |t: &str| t.parse::<usize>().map_err(|_| format_err("bad PGM header"));
    let (w, h, max) = (parse(&tokens[1])?, parse(&tokens[2])?, parse(&tokens[3])?);
    let per = match max {
        1..=255 => 1,
        256..=65535 => 2,
        _ => return Err(format_err("bad PGM maxval")),
    };
    let body = bytes.get(pos..).filter(|b| b.len() == w * h * per).ok_or_else(|| format_err("PGM body has the wrong length"))?;
    Ok((w, h, body.chunks_exact(per).map(|c| c.iter().any(|b| *b != 0)).collect()))
}

pub fn write_mask(path: &Path, width: usize, height: usize, mask: &[bool]) -> Result<()> {
    write_file(path, mask_to_pgm(width, height, mask))
}

pub fn read_mask(path: &Path) -> Result<(usize, usize, Vec<bool>)> {
    mask_from_pgm(&read_bytes(path)?)
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [u8; 3] {
    let h6 = (h.rem_euclid(1.0)) * 6.0;
    let c = v * s;
    let x = c * (1.0 - (h6 % 2.0 - 1.0).abs());
    let (r, g, b) = match h6 as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r, g, b].map(|u| ((u + m).clamp(0.0, 1.0) * 255.0).round() as u8)
}

/// Direction preview: hue from the angle, brightness from the magnitude.
pub fn write_direction_png(path: &Path, width: usize, height: usize, dirs: &[[f64; 2]]) -> Result<()> {
    let mut img = image::RgbImage::new(width as u32, height as u32);
    for (i, d) in dirs.iter().enumerate() {
        let mag = (d[0] * d[0] + d[1] * d[1]).sqrt().min(1.0);
        let hue = d[1].atan2(d[0]) / std::f64::consts::TAU;
        img.put_pixel((i % width) as u32, (i / width) as u32, image::Rgb(hsv_to_rgb(hue, 1.0, mag)));
    }
    img.save(path).map_err(|e| format_err(format!("PNG export failed: {e}")))
}

/// Grayscale preview of values in `[0, 1]`.
pub fn write_gray_png(path: &Path, width: usize, height: usize, values: &[f64]) -> Result<()> {
    let data = values.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
    let img = image::GrayImage::from_raw(width as u32, height as u32, data).ok_or_else(|| Error::Shape("preview size mismatch".into()))?;
    img.save(path).map_err(|e| format_err(format!("PNG export failed: {e}")))
}

/// `key value...` lines; `#` starts a comment. Keys must be unique.
pub fn parse_kv(text: &str) -> Result<BTreeMap<String, Vec<String>>> {
    let mut out = BTreeMap::new();
    for (no, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let line = line.replacen('=', " ", 1);
        let mut fields = line.split_ascii_whitespace().map(str::to_owned);
        let key = fields.next().expect("non-empty line");
        let values: Vec<String> = fields.collect();
        if values.is_empty() {
            return Err(Error::Config(format!("line {}: `{key}` has no value", no + 1)));
        }
        if out.insert(key.clone(), values).is_some() {
            return Err(Error::Config(format!("line {}: `{key}` given twice", no + 1)));
        }
    }
    Ok(out)
}

/// Typed access to a parsed key-value file; every key must be consumed.
pub struct KvFile {
    entries: BTreeMap<String, Vec<String>>,
    origin: String,
}

impl KvFile {
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        Ok(Self { entries: parse_kv(text)?, origin: origin.to_owned() })
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::parse(&read_text(path)?, &path.display().to_string())
    }

    pub fn take(&mut self, key: &str) -> Option<Vec<String>> {
        self.entries.remove(key)
    }

    pub fn floats(&mut self, key: &str, n: usize) -> Result<Option<Vec<f64>>> {
        let Some(vals) = self.take(key) else { return Ok(None) };
        if vals.len() != n {
            return Err(Error::Config(format!("{}: `{key}` needs {n} values, got {}", self.origin, vals.len())));
        }
        vals.iter()
            .map(|v| v.parse::<f64>().map_err(|_| Error::Config(format!("{}: `{key}` has non-numeric value `{v}`", self.origin))))
            .collect::<Result<Vec<_>>>()
            .map(Some)
    }

    pub fn float(&mut self, key: &str) -> Result<Option<f64>> {
        Ok(self.floats(key, 1)?.map(|v| v[0]))
    }

    pub fn parsed<T: std::str::FromStr>(&mut self, key: &str) -> Result<Option<T>> {
        let Some(vals) = self.take(key) else { return Ok(None) };
        match vals.as_slice() {
            [v] => v.parse().map(Some).map_err(|_| Error::Config(format!("{}: bad value `{v}` for `{key}`", self.origin))),
            _ => Err(Error::Config(format!("{}: `{key}` takes one value", self.origin))),
        }
    }

    pub fn require_floats(&mut self, key: &str, n: usize) -> Result<Vec<f64>> {
        self.floats(key, n)?.ok_or_else(|| Error::Config(format!("{}: missing `{key}`", self.origin)))
    }

    /// Fails on any key nobody asked for.
    pub fn finish(self) -> Result<()> {
        match self.entries.keys().next() {
            Some(k) => Err(Error::Config(format!("{}: unknown key `{k}`", self.origin))),
            None => Ok(()),
        }
    }
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x}")).collect::<Vec<_>>().join(" ")
}

pub fn camera_to_kv(cam: &CameraModel) -> String {
    let r: Vec<f64> = (0..3).flat_map(|i| (0..3).map(move |j| (i, j))).map(|(i, j)| cam.rotation[(i, j)]).collect();
    format!(
        "fx {}\nfy {}\ncx {}\ncy {}\nR {}\nt {}\nW {}\nH {}\n",
        cam.fx,
        cam.fy,
        cam.cx,
        cam.cy,
        join(&r),
        join(cam.translation.as_slice()),
        cam.width,
        cam.height
    )
}

pub fn camera_from_kv(text: &str, origin: &str) -> Result<CameraModel> {
    let mut kv = KvFile::parse(text, origin)?;
    let one = |kv: &mut KvFile, k: &str| kv.require_floats(k, 1).map(|v| v[0]);
    let (fx, fy, cx, cy) = (one(&mut kv, "fx")?, one(&mut kv, "fy")?, one(&mut kv, "cx")?, one(&mut kv, "cy")?);
    let r = kv.require_floats("R", 9)?;
    let t = kv.require_floats("t", 3)?;
    let size = |kv: &mut KvFile, k: &str| -> Result<usize> {
        kv.parsed::<usize>(k)?.ok_or_else(|| Error::Config(format!("{origin}: missing `{k}`")))
    };
    let (width, height) = (size(&mut kv, "W")?, size(&mut kv, "H")?);
    kv.finish()?;
    let cam = CameraModel { fx, fy, cx, cy, rotation: Matrix3::from_row_slice(&r), translation: Vector3::from_column_slice(&t), width, height };
    cam.validate()?;
    Ok(cam)
}

pub fn write_camera(path: &Path, cam: &CameraModel) -> Result<()> {
    write_file(path, camera_to_kv(cam))
}

pub fn read_camera(path: &Path) -> Result<CameraModel> {
    camera_from_kv(&read_text(path)?, &path.display().to_string())
}

pub fn head_to_kv(head: &HeadModel) -> String {
    format!(
        "center {}\nradii {}\ncap {} {}\n",
        join(head.center.as_slice()),
        join(head.radii.as_slice()),
        head.cap.0,
        head.cap.1
    )
}

pub fn head_from_kv(text: &str, origin: &str) -> Result<HeadModel> {
    let mut kv = KvFile::parse(text, origin)?;
    let center = kv.require_floats("center", 3)?;
    let radii = kv.require_floats("radii", 3)?;
    let cap = kv.require_floats("cap", 2)?;
    kv.finish()?;
    let head = HeadModel { center: Point::from_column_slice(&center), radii: Vector3::from_column_slice(&radii), cap: (cap[0], cap[1]) };
    head.validate()?;
    Ok(head)
}

pub fn write_head(path: &Path, head: &HeadModel) -> Result<()> {
    write_file(path, head_to_kv(head))
}

pub fn read_head(path: &Path) -> Result<HeadModel> {
    head_from_kv(&read_text(path)?, &path.display().to_string())
}

/// File names of a render or target bundle inside a directory.
pub mod names {
    pub const SILHOUETTE: &str = "silhouette.pfm";
    pub const DIRECTION: &str = "direction.pfm";
    pub const DEPTH: &str = "depth.pfm";
    pub const DEPTH_MASK: &str = "depth_mask.pgm";
    pub const DEPTH_NORM: &str = "depth.kv";
    pub const CAMERA: &str = "cam.kv";
    pub const HEAD: &str = "head.kv";
}

/// Writes silhouette, direction, depth and depth-valid mask as maps.
pub fn write_render(dir: &Path, render: &RenderBuffers) -> Result<()> {
    fs::create_dir_all(dir).map_err(|source| Error::File { path: dir.to_owned(), source })?;
    let (w, h) = (render.width, render.height);
    write_pfm(&dir.join(names::SILHOUETTE), &FloatImage::gray(w, h, &render.silhouette))?;
    write_pfm(&dir.join(names::DIRECTION), &FloatImage::vectors(w, h, &render.direction))?;
    write_pfm(&dir.join(names::DEPTH), &FloatImage::gray(w, h, &render.depth))?;
    write_mask(&dir.join(names::DEPTH_MASK), w, h, &render.depth_valid)
}

/// Reads a bundle written by [`write_render`] back as buffers (no trace).
pub fn read_render(dir: &Path) -> Result<RenderBuffers> {
    let sil = read_pfm(&dir.join(names::SILHOUETTE))?;
    let (w, h) = (sil.width, sil.height);
    let dir_map = read_pfm(&dir.join(names::DIRECTION))?;
    let depth = read_pfm(&dir.join(names::DEPTH))?;
    let (mw, mh, valid) = read_mask(&dir.join(names::DEPTH_MASK))?;
    if [dir_map.width, depth.width, mw] != [w; 3] || [dir_map.height, depth.height, mh] != [h; 3] {
        return Err(Error::Shape("maps in the bundle differ in size".into()));
    }
    Ok(RenderBuffers {
        width: w,
        height: h,
        silhouette: sil.to_gray()?,
        direction: dir_map.to_vectors()?,
        depth: depth.to_gray()?,
        depth_valid: valid,
        trace: None,
    })
}

/// Target maps plus their depth normalization (`depth.kv`).
pub fn write_targets(dir: &Path, t: &TargetMaps) -> Result<()> {
    let as_render = RenderBuffers {
        width: t.width,
        height: t.height,
        silhouette: t.silhouette.clone(),
        direction: t.direction.clone(),
        depth: t.depth.clone(),
        depth_valid: t.depth_valid.clone(),
        trace: None,
    };
    write_render(dir, &as_render)?;
    write_file(&dir.join(names::DEPTH_NORM), format!("offset {}\nscale {}\n", t.depth_offset, t.depth_scale))
}

/// Reads target maps. Without `depth.kv` the depth is taken as already
/// normalized camera depth (offset 0, scale 1). Values are snapped into the
/// ranges the losses expect, since maps are stored in single precision.
pub fn read_targets(dir: &Path) -> Result<TargetMaps> {
    let r = read_render(dir)?;
    let norm_path = dir.join(names::DEPTH_NORM);
    let (mut offset, mut scale) = (0.0, 1.0);
    if norm_path.exists() {
        let mut kv = KvFile::read(&norm_path)?;
        offset = kv.float("offset")?.unwrap_or(0.0);
        scale = kv.float("scale")?.unwrap_or(1.0);
        kv.finish()?;
    }
    let silhouette: Vec<f64> = r.silhouette.iter().map(|s| s.clamp(0.0, 1.0)).collect();
    let direction = r
        .direction
        .iter()
        .zip(&silhouette)
        .map(|(d, s)| {
            let n = (d[0] * d[0] + d[1] * d[1]).sqrt();
            match (*s == 0.0, n > 1.0) {
                (true, _) => [0.0, 0.0],
                (false, true) => [d[0] / n, d[1] / n],
                _ => *d,
            }
        })
        .collect();
    let t = TargetMaps {
        width: r.width,
        height: r.height,
        silhouette,
        direction,
        depth: r.depth,
        depth_valid: r.depth_valid,
        depth_offset: offset,
        depth_scale: scale,
    };
    t.validate()?;
    Ok(t)
}
