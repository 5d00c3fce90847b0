//! The two synthetic shape benchmarks, their rasterizer, and dataset disk I/O.
//!
//! Rectangle-Triangle: a stroked rectangle with square or rounded corners and
//! a stroked triangle (equilateral or right-angled) strictly inside it; the
//! two binary attributes give four classes. Circles-Squares: two filled,
//! non-overlapping objects; the multiset {circle, square} gives three classes.
//!
//! Rasterization is binary (signed-distance threshold, no anti-aliasing), and
//! every image is a pure function of (dataset seed, index), so generation can
//! run image-parallel without affecting output.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::rng::{derive, stream};

const IMG_TAG: u64 = 0x1147_3a6e;

#[derive(Clone, Debug)]
pub struct LabeledDataset {
    pub name: String,
    pub seed: u64,
    pub image_size: usize,
    pub class_count: usize,
    /// Binary images [H, W, 1] with values in {0, 1}.
    pub images: Vec<Tensor<f32>>,
    pub labels: Vec<u8>,
}

impl LabeledDataset {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.images.len() != self.labels.len() {
            return Err(Error::Data(format!(
                "{} images but {} labels",
                self.images.len(),
                self.labels.len()
            )));
        }
        let s = self.image_size;
        for (i, img) in self.images.iter().enumerate() {
            if img.shape() != [s, s, 1] {
                return Err(Error::Data(format!("image {i} has shape {:?}", img.shape())));
            }
            if img.data().iter().any(|&v| v != 0.0 && v != 1.0) {
                return Err(Error::Data(format!("image {i} is not binary")));
            }
        }
        if self.labels.iter().any(|&l| (l as usize) >= self.class_count) {
            return Err(Error::Data("label out of range".into()));
        }
        Ok(())
    }

    /// Stack selected images into a batch tensor [B, H, W, 1].
    pub fn batch(&self, indices: &[usize]) -> Tensor<f32> {
        let s = self.image_size;
        let mut out = Tensor::zeros(&[indices.len(), s, s, 1]);
        for (bi, &i) in indices.iter().enumerate() {
            out.data_mut()[bi * s * s..(bi + 1) * s * s].copy_from_slice(self.images[i].data());
        }
        out
    }
}

// ── Signed distance shapes ──────────────────────────────────────────────

#[derive(Clone, Copy, Debug)]
struct Vec2 {
    x: f32,
    y: f32,
}

impl Vec2 {
    fn new(x: f32, y: f32) -> Self {
        Vec2 { x, y }
    }
    fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x - o.x, self.y - o.y)
    }
    fn dot(self, o: Vec2) -> f32 {
        self.x * o.x + self.y * o.y
    }
    fn len(self) -> f32 {
        self.dot(self).sqrt()
    }
    fn scale(self, s: f32) -> Vec2 {
        Vec2::new(self.x * s, self.y * s)
    }
    fn rotate(self, theta: f32) -> Vec2 {
        let (s, c) = theta.sin_cos();
        Vec2::new(c * self.x - s * self.y, s * self.x + c * self.y)
    }
}

/// Rounded-rectangle SDF; `half` are the half-extents, `r` the corner radius
/// (0 gives square corners). Negative inside.
fn sd_round_rect(p: Vec2, center: Vec2, half: Vec2, r: f32) -> f32 {
    let d = p.sub(center);
    let q = Vec2::new(d.x.abs() - half.x + r, d.y.abs() - half.y + r);
    let outside = Vec2::new(q.x.max(0.0), q.y.max(0.0)).len();
    outside + q.x.max(q.y).min(0.0) - r
}

fn sd_circle(p: Vec2, center: Vec2, r: f32) -> f32 {
    p.sub(center).len() - r
}

/// Triangle SDF from its three vertices. Negative inside.
fn sd_triangle(p: Vec2, v0: Vec2, v1: Vec2, v2: Vec2) -> f32 {
    let e0 = v1.sub(v0);
    let e1 = v2.sub(v1);
    let e2 = v0.sub(v2);
    let p0 = p.sub(v0);
    let p1 = p.sub(v1);
    let p2 = p.sub(v2);
    let clamp01 = |v: f32| v.clamp(0.0, 1.0);
    let d0 = p0.sub(e0.scale(clamp01(p0.dot(e0) / e0.dot(e0))));
    let d1 = p1.sub(e1.scale(clamp01(p1.dot(e1) / e1.dot(e1))));
    let d2 = p2.sub(e2.scale(clamp01(p2.dot(e2) / e2.dot(e2))));
    let dist = d0.len().min(d1.len()).min(d2.len());
    let cross = |a: Vec2, b: Vec2| a.x * b.y - a.y * b.x;
    let s0 = cross(e0, p0);
    let s1 = cross(e1, p1);
    let s2 = cross(e2, p2);
    let inside = (s0 >= 0.0 && s1 >= 0.0 && s2 >= 0.0) || (s0 <= 0.0 && s1 <= 0.0 && s2 <= 0.0);
    if inside {
        -dist
    } else {
        dist
    }
}

// ── Rectangle-Triangle ──────────────────────────────────────────────────

#[derive(Clone, Debug)]
pub(crate) struct RtSpec {
    pub center: (f32, f32),
    pub half: (f32, f32),
    pub corner_radius: f32,
    pub tri: [(f32, f32); 3],
    pub stroke_half: f32,
    #[allow(dead_code)]
    pub label: u8,
}

fn stroke_width(image_size: usize) -> f32 {
    (0.015 * image_size as f32).max(1.5)
}

pub(crate) fn sample_rt_spec(rng: &mut ChaCha8Rng, image_size: usize, label: u8) -> RtSpec {
    let s = image_size as f32;
    let stroke = stroke_width(image_size);
    let round_corner = label >= 2;
    let right_angled = label % 2 == 1;

    let half_w = rng.random_range(0.40..0.70) * s / 2.0;
    let half_h = rng.random_range(0.40..0.70) * s / 2.0;
    let pad = stroke / 2.0 + 2.0;
    let cx = rng.random_range(half_w + pad..s - half_w - pad);
    let cy = rng.random_range(half_h + pad..s - half_h - pad);
    let min_side = 2.0 * half_w.min(half_h);
    let corner_radius = if round_corner { rng.random_range(0.08..0.15) * min_side } else { 0.0 };

    // Triangle sized against the rectangle interior; its bounding circle (plus
    // stroke) must fit strictly inside the interior edge of the rectangle.
    let interior = half_w.min(half_h) - stroke - 2.0;
    let side = rng.random_range(0.3..0.6) * 2.0 * interior;
    let theta = rng.random_range(0.0..std::f32::consts::TAU);
    let (local, mut circum) = if right_angled {
        // Isoceles right triangle with legs `side`, circumcenter at origin.
        let a = side / 2.0;
        (
            [Vec2::new(-a, -a), Vec2::new(a, -a), Vec2::new(-a, a)],
            side / std::f32::consts::SQRT_2,
        )
    } else {
        let r = side / 3.0f32.sqrt();
        let v = |k: f32| {
            let ang = k * std::f32::consts::TAU / 3.0;
            Vec2::new(r * ang.cos(), r * ang.sin())
        };
        ([v(0.0), v(1.0), v(2.0)], side / 3.0f32.sqrt())
    };
    circum += stroke / 2.0;

    // Rejection-sample the triangle center; shrink if the draw keeps failing
    // (ranges above make that essentially unreachable).
    let mut scale = 1.0f32;
    let (tcx, tcy) = loop {
        let reach = (interior - circum * scale).max(0.5);
        let tx = cx + rng.random_range(-reach..reach);
        let ty = cy + rng.random_range(-reach..reach);
        let sd = sd_round_rect(Vec2::new(tx, ty), Vec2::new(cx, cy), Vec2::new(half_w, half_h), corner_radius);
        if sd <= -(stroke / 2.0 + circum * scale + 0.5) {
            break (tx, ty);
        }
        scale *= 0.92;
    };

    let tri = local.map(|v| {
        let r = v.scale(scale).rotate(theta);
        (tcx + r.x, tcy + r.y)
    });

    RtSpec {
        center: (cx, cy),
        half: (half_w, half_h),
        corner_radius,
        tri,
        stroke_half: stroke / 2.0,
        label,
    }
}

fn raster_rt(spec: &RtSpec, image_size: usize) -> Tensor<f32> {
    let mut img = Tensor::zeros(&[image_size, image_size, 1]);
    let center = Vec2::new(spec.center.0, spec.center.1);
    let half = Vec2::new(spec.half.0, spec.half.1);
    let v0 = Vec2::new(spec.tri[0].0, spec.tri[0].1);
    let v1 = Vec2::new(spec.tri[1].0, spec.tri[1].1);
    let v2 = Vec2::new(spec.tri[2].0, spec.tri[2].1);
    let data = img.data_mut();
    for py in 0..image_size {
        for px in 0..image_size {
            let p = Vec2::new(px as f32 + 0.5, py as f32 + 0.5);
            let rect = sd_round_rect(p, center, half, spec.corner_radius).abs() <= spec.stroke_half;
            let tri = sd_triangle(p, v0, v1, v2).abs() <= spec.stroke_half;
            if rect || tri {
                data[py * image_size + px] = 1.0;
            }
        }
    }
    img
}

/// Rectangle-Triangle benchmark: four classes from
/// {square-corner, round-corner} x {equilateral, right-angled}.
pub fn gen_rectangle_triangle(n: usize, image_size: usize, seed: u64) -> Result<LabeledDataset> {
    if n < 4 {
        return Err(Error::Config(format!("rectangle-triangle needs n >= 4, got {n}")));
    }
    check_image_size(image_size)?;
    let images: Vec<Tensor<f32>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream(derive(seed, &[IMG_TAG, i as u64]));
            let spec = sample_rt_spec(&mut rng, image_size, (i % 4) as u8);
            raster_rt(&spec, image_size)
        })
        .collect();
    let labels = (0..n).map(|i| (i % 4) as u8).collect();
    Ok(LabeledDataset {
        name: "rectangle-triangle".into(),
        seed,
        image_size,
        class_count: 4,
        images,
        labels,
    })
}

// ── Circles-Squares ─────────────────────────────────────────────────────

#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) enum Obj {
    Circle,
    Square,
}

#[derive(Clone, Debug)]
pub(crate) struct CsSpec {
    pub objects: [(Obj, f32, f32, f32); 2], // (kind, cx, cy, half-size)
    #[allow(dead_code)]
    pub label: u8,
}

pub(crate) fn sample_cs_spec(
    rng: &mut ChaCha8Rng,
    image_size: usize,
    label: u8,
    size_range: (f32, f32),
) -> Result<CsSpec> {
    let s = image_size as f32;
    let kinds = match label {
        0 => [Obj::Circle, Obj::Circle],
        1 => [Obj::Square, Obj::Circle],
        _ => [Obj::Square, Obj::Square],
    };
    // Bounded retries; sizes are redrawn per attempt.
    for _ in 0..100 {
        let mut placed: [(Obj, f32, f32, f32); 2] = [(Obj::Circle, 0.0, 0.0, 0.0); 2];
        let mut ok = true;
        for (slot, &kind) in kinds.iter().enumerate() {
            let half = rng.random_range(size_range.0..size_range.1) * s / 2.0;
            let circum = match kind {
                Obj::Circle => half,
                Obj::Square => half * std::f32::consts::SQRT_2,
            };
            let lo = half + 2.0;
            let hi = s - half - 2.0;
            if lo >= hi {
                ok = false;
                break;
            }
            let mut found = false;
            for _ in 0..100 {
                let cx = rng.random_range(lo..hi);
                let cy = rng.random_range(lo..hi);
                if slot == 0 {
                    placed[0] = (kind, cx, cy, half);
                    found = true;
                    break;
                }
                let (k0, x0, y0, h0) = placed[0];
                let c0 = match k0 {
                    Obj::Circle => h0,
                    Obj::Square => h0 * std::f32::consts::SQRT_2,
                };
                let dist = ((cx - x0).powi(2) + (cy - y0).powi(2)).sqrt();
                if dist >= c0 + circum + 3.0 {
                    placed[1] = (kind, cx, cy, half);
                    found = true;
                    break;
                }
            }
            if !found {
                ok = false;
                break;
            }
        }
        if ok {
            return Ok(CsSpec { objects: placed, label });
        }
    }
    Err(Error::Data(format!(
        "could not place two non-overlapping objects in a {image_size}px image"
    )))
}

fn raster_cs(spec: &CsSpec, image_size: usize) -> Tensor<f32> {
    let mut img = Tensor::zeros(&[image_size, image_size, 1]);
    let data = img.data_mut();
    for py in 0..image_size {
        for px in 0..image_size {
            let p = Vec2::new(px as f32 + 0.5, py as f32 + 0.5);
            let hit = spec.objects.iter().any(|&(kind, cx, cy, half)| match kind {
                Obj::Circle => sd_circle(p, Vec2::new(cx, cy), half) <= 0.0,
                Obj::Square => sd_round_rect(p, Vec2::new(cx, cy), Vec2::new(half, half), 0.0) <= 0.0,
            });
            if hit {
                data[py * image_size + px] = 1.0;
            }
        }
    }
    img
}

/// Circles-Squares benchmark: two circles / square + circle / two squares.
pub fn gen_circles_squares(n: usize, image_size: usize, seed: u64) -> Result<LabeledDataset> {
    if n < 3 {
        return Err(Error::Config(format!("circles-squares needs n >= 3, got {n}")));
    }
    check_image_size(image_size)?;
    let images: Vec<Result<Tensor<f32>>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream(derive(seed, &[IMG_TAG, i as u64]));
            let spec = sample_cs_spec(&mut rng, image_size, (i % 3) as u8, (0.20, 0.35))?;
            Ok(raster_cs(&spec, image_size))
        })
        .collect();
    let images = images.into_iter().collect::<Result<Vec<_>>>()?;
    let labels = (0..n).map(|i| (i % 3) as u8).collect();
    Ok(LabeledDataset {
        name: "circles-squares".into(),
        seed,
        image_size,
        class_count: 3,
        images,
        labels,
    })
}

fn check_image_size(image_size: usize) -> Result<()> {
    if image_size < 32 {
        return Err(Error::Config(format!(
            "image_size {image_size} too small to fit nested shapes (minimum 32)"
        )));
    }
    Ok(())
}

// ── PGM + manifest I/O ──────────────────────────────────────────────────

/// 8-bit binary PGM (P5) with values 0 or 255 only.
pub fn write_pgm_binary(path: &Path, img: &Tensor<f32>) -> Result<()> {
    let (h, w) = (img.dim(0), img.dim(1));
    let mut bytes = Vec::with_capacity(h * w + 32);
    bytes.extend_from_slice(format!("P5\n{w} {h}\n255\n").as_bytes());
    for &v in img.data() {
        if v == 0.0 {
            bytes.push(0);
        } else if v == 1.0 {
            bytes.push(255);
        } else {
            return Err(Error::Data(format!("non-binary pixel value {v}")));
        }
    }
    fs::write(path, bytes)?;
    Ok(())
}

/// Grayscale PGM for previews: values in [0,1] quantized to 0..255.
pub fn write_pgm_gray(path: &Path, img: &Tensor<f32>) -> Result<()> {
    let (h, w) = (img.dim(0), img.dim(1));
    let mut bytes = Vec::with_capacity(h * w + 32);
    bytes.extend_from_slice(format!("P5\n{w} {h}\n255\n").as_bytes());
    for &v in img.data() {
        bytes.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
    }
    fs::write(path, bytes)?;
    Ok(())
}

fn parse_pgm(bytes: &[u8], path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    // Header tokens separated by whitespace; `#` comments run to end of line.
    let mut pos = 0usize;
    let mut tokens = Vec::new();
    while tokens.len() < 4 && pos < bytes.len() {
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
        if start < pos {
            tokens.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad(path, "header"))?);
        }
    }
    if tokens.len() < 4 || tokens[0] != "P5" {
        return Err(bad(path, "not a P5 PGM"));
    }
    let w: usize = tokens[1].parse().map_err(|_| bad(path, "width"))?;
    let h: usize = tokens[2].parse().map_err(|_| bad(path, "height"))?;
    let maxval: usize = tokens[3].parse().map_err(|_| bad(path, "maxval"))?;
    if maxval != 255 {
        return Err(bad(path, "maxval must be 255"));
    }
    pos += 1; // single whitespace byte after maxval
    if bytes.len() < pos + w * h {
        return Err(bad(path, "truncated pixel data"));
    }
    Ok((w, h, bytes[pos..pos + w * h].to_vec()))
}

fn bad(path: &Path, what: &str) -> Error {
    Error::Data(format!("{}: {what}", path.display()))
}

/// Strict loader for dataset images: pixels must be exactly 0 or 255.
pub fn read_pgm_binary(path: &Path) -> Result<Tensor<f32>> {
    let bytes = fs::read(path)?;
    let (w, h, pixels) = parse_pgm(&bytes, path)?;
    let mut img = Tensor::zeros(&[h, w, 1]);
    for (dst, &b) in img.data_mut().iter_mut().zip(pixels.iter()) {
        *dst = match b {
            0 => 0.0,
            255 => 1.0,
            other => return Err(bad(path, &format!("non-binary pixel byte {other}"))),
        };
    }
    Ok(img)
}

/// Write a dataset directory: one PGM per image, `manifest.csv`
/// (`filename,label`), and a `meta.txt` sidecar with name, seed, image_size,
/// class_count and a CRC-32 over all image bytes in manifest order.
pub fn write_dataset(ds: &LabeledDataset, dir: &Path) -> Result<PathBuf> {
    ds.validate()?;
    fs::create_dir_all(dir)?;
    let mut manifest = String::from("filename,label\n");
    let mut crc = crc32fast::Hasher::new();
    for (i, (img, label)) in ds.images.iter().zip(ds.labels.iter()).enumerate() {
        let filename = format!("im_{i:05}.pgm");
        write_pgm_binary(&dir.join(&filename), img)?;
        crc.update(&fs::read(dir.join(&filename))?);
        manifest.push_str(&format!("{filename},{label}\n"));
    }
    let manifest_path = dir.join("manifest.csv");
    let mut f = fs::File::create(&manifest_path)?;
    f.write_all(manifest.as_bytes())?;
    f.flush()?;

    let meta = format!(
        "name = {}\nseed = {}\nimage_size = {}\nclass_count = {}\nchecksum = {:08x}\n",
        ds.name,
        ds.seed,
        ds.image_size,
        ds.class_count,
        crc.finalize()
    );
    fs::write(dir.join("meta.txt"), meta)?;
    Ok(manifest_path)
}

/// Load a dataset directory written by [`write_dataset`], verifying the
/// manifest row count against the directory contents and the checksum.
pub fn load_dataset(dir: &Path) -> Result<LabeledDataset> {
    let meta_raw = fs::read_to_string(dir.join("meta.txt"))
        .map_err(|e| Error::Data(format!("{}: meta.txt: {e}", dir.display())))?;
    let mut name = String::new();
    let mut seed = 0u64;
    let mut image_size = 0usize;
    let mut class_count = 0usize;
    let mut checksum = 0u32;
    for line in meta_raw.lines() {
        let Some((k, v)) = line.split_once('=') else { continue };
        let (k, v) = (k.trim(), v.trim());
        match k {
            "name" => name = v.to_string(),
            "seed" => seed = v.parse().map_err(|_| Error::Data("bad seed in meta".into()))?,
            "image_size" => {
                image_size = v.parse().map_err(|_| Error::Data("bad image_size in meta".into()))?
            }
            "class_count" => {
                class_count = v.parse().map_err(|_| Error::Data("bad class_count in meta".into()))?
            }
            "checksum" => {
                checksum = u32::from_str_radix(v, 16)
                    .map_err(|_| Error::Data("bad checksum in meta".into()))?
            }
            _ => return Err(Error::Data(format!("unknown meta key {k}"))),
        }
    }

    let manifest_raw = fs::read_to_string(dir.join("manifest.csv"))
        .map_err(|e| Error::Data(format!("{}: manifest.csv: {e}", dir.display())))?;
    let mut rows = Vec::new();
    for (ln, line) in manifest_raw.lines().enumerate() {
        if ln == 0 {
            if line != "filename,label" {
                return Err(Error::Data(format!("bad manifest header: {line}")));
            }
            continue;
        }
        let Some((file, label)) = line.split_once(',') else {
            return Err(Error::Data(format!("bad manifest row: {line}")));
        };
        let label: u8 = label.parse().map_err(|_| Error::Data(format!("bad label: {line}")))?;
        rows.push((file.to_string(), label));
    }

    let pgm_count = fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().extension().map(|x| x == "pgm").unwrap_or(false))
        .count();
    if pgm_count != rows.len() {
        return Err(Error::Data(format!(
            "manifest lists {} images but directory holds {pgm_count} PGM files",
            rows.len()
        )));
    }

    let mut crc = crc32fast::Hasher::new();
    let mut images = Vec::with_capacity(rows.len());
    let mut labels = Vec::with_capacity(rows.len());
    for (file, label) in &rows {
        let path = dir.join(file);
        let mut bytes = Vec::new();
        fs::File::open(&path)
            .map_err(|e| Error::Data(format!("missing image {}: {e}", path.display())))?
            .read_to_end(&mut bytes)?;
        crc.update(&bytes);
        let (w, h, pixels) = parse_pgm(&bytes, &path)?;
        if w != image_size || h != image_size {
            return Err(bad(&path, "image size does not match meta"));
        }
        let mut img = Tensor::zeros(&[h, w, 1]);
        for (dst, &b) in img.data_mut().iter_mut().zip(pixels.iter()) {
            *dst = match b {
                0 => 0.0,
                255 => 1.0,
                other => return Err(bad(&path, &format!("non-binary pixel byte {other}"))),
            };
        }
        images.push(img);
        labels.push(*label);
    }
    if crc.finalize() != checksum {
        return Err(Error::Data(format!("{}: checksum mismatch", dir.display())));
    }

    let ds = LabeledDataset { name, seed, image_size, class_count, images, labels };
    ds.validate()?;
    Ok(ds)
}
