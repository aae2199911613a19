//! On-disk formats: binary splat files and optimizer sidecars, PNG/PPM
//! images and label maps, OBJ meshes.
//!
//! Splat file layout (all little-endian):
//!
//! ```text
//! magic      8 bytes  "MSHSPLAT"
//! version    u32
//! count      u64
//! record     u32      bytes per record
//! layout     u32 length + ASCII field list
//! records    count × record
//! ```
//!
//! Each record holds f64 fields `mu[3] q[4] s[3] opacity color[3]`, a u16
//! label, a u8 flag byte (bit 0: bound, bit 1: decoupled), then the binding:
//! u64 triangle and f64 `bary[3] h offset[3] rest_offset[3] q_local[4]
//! s_local[3]` (zeros when unbound).

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::imaging::{Image, LabelMap, Mask};
use crate::optim::{AdamState, Schedule};
use crate::rig::{MeshBinding, MeshFrame};
use crate::splat::{GaussianSplat, Quat, Vec3};

pub const SPLAT_MAGIC: &[u8; 8] = b"MSHSPLAT";
pub const SPLAT_VERSION: u32 = 1;
pub const SPLAT_LAYOUT: &str =
    "mu:f64x3,q:f64x4,s:f64x3,opacity:f64,color:f64x3,label:u16,flags:u8,tri:u64,bary:f64x3,h:f64,offset:f64x3,rest:f64x3,q_local:f64x4,s_local:f64x3";
const RECORD_BYTES: usize = 14 * 8 + 2 + 1 + 8 + 17 * 8;

pub const ADAM_MAGIC: &[u8; 8] = b"MSHADAM\0";
pub const ADAM_VERSION: u32 = 1;

/// Little-endian cursor over a byte buffer that reports truncation.
struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    context: String,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8], context: &Path) -> Self {
        Self {
            buf,
            pos: 0,
            context: context.display().to_string(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::parse(
                &self.context,
                format!("truncated at byte {}", self.pos),
            ));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(
            self.take(2)?.try_into().expect("2 bytes"),
        ))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn vec3(&mut self) -> Result<Vec3> {
        Ok(Vec3::new(self.f64()?, self.f64()?, self.f64()?))
    }

    fn quat(&mut self) -> Result<Quat> {
        Ok(Quat::new(
            self.f64()?,
            self.f64()?,
            self.f64()?,
            self.f64()?,
        ))
    }
}

fn put_vec3(out: &mut Vec<u8>, v: &Vec3) {
    for x in v.iter() {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

fn put_quat(out: &mut Vec<u8>, q: &Quat) {
    for x in [q.w, q.i, q.j, q.k] {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

/// Serializes a scene to bytes.
pub fn encode_scene(scene: &[GaussianSplat]) -> Vec<u8> {
    let mut out = Vec::with_capacity(32 + SPLAT_LAYOUT.len() + scene.len() * RECORD_BYTES);
    out.extend_from_slice(SPLAT_MAGIC);
    out.extend_from_slice(&SPLAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(scene.len() as u64).to_le_bytes());
    out.extend_from_slice(&(RECORD_BYTES as u32).to_le_bytes());
    out.extend_from_slice(&(SPLAT_LAYOUT.len() as u32).to_le_bytes());
    out.extend_from_slice(SPLAT_LAYOUT.as_bytes());
    for s in scene {
        put_vec3(&mut out, &s.mu);
        put_quat(&mut out, &s.rotation);
        put_vec3(&mut out, &s.scale);
        out.extend_from_slice(&s.opacity.to_le_bytes());
        put_vec3(&mut out, &s.color);
        out.extend_from_slice(&s.label.to_le_bytes());
        let flags = s.binding.is_some() as u8 | (s.decoupled as u8) << 1;
        out.push(flags);
        match &s.binding {
            Some(b) => {
                out.extend_from_slice(&(b.triangle as u64).to_le_bytes());
                for x in b.barycentric {
                    out.extend_from_slice(&x.to_le_bytes());
                }
                out.extend_from_slice(&b.normal_offset.to_le_bytes());
                put_vec3(&mut out, &b.offset);
                put_vec3(&mut out, &b.rest_offset);
                put_quat(&mut out, &b.local_rotation);
                put_vec3(&mut out, &b.local_scale);
            }
            None => out.extend(std::iter::repeat_n(0u8, 8 + 17 * 8)),
        }
    }
    out
}

/// Parses a scene, validating every splat. Nothing is returned on error.
pub fn decode_scene(bytes: &[u8], context: &Path) -> Result<Vec<GaussianSplat>> {
    let mut r = Reader::new(bytes, context);
    if r.take(8)? != SPLAT_MAGIC {
        return Err(Error::parse(&r.context, "not a splat file (bad magic)"));
    }
    let version = r.u32()?;
    if version != SPLAT_VERSION {
        return Err(Error::Version {
            found: version,
            expected: SPLAT_VERSION,
        });
    }
    let count = r.u64()? as usize;
    let record = r.u32()? as usize;
    let layout_len = r.u32()? as usize;
    let layout = r.take(layout_len)?;
    if record != RECORD_BYTES || layout != SPLAT_LAYOUT.as_bytes() {
        return Err(Error::parse(&r.context, "unsupported record layout"));
    }
    if (bytes.len() - r.pos) != count.saturating_mul(RECORD_BYTES) {
        return Err(Error::parse(
            &r.context,
            format!(
                "expected {count} records, found {} bytes",
                bytes.len() - r.pos
            ),
        ));
    }
    let mut scene = Vec::with_capacity(count);
    for i in 0..count {
        let mu = r.vec3()?;
        let rotation = r.quat()?;
        let scale = r.vec3()?;
        let opacity = r.f64()?;
        let color = r.vec3()?;
        let label = r.u16()?;
        let flags = r.u8()?;
        let triangle = r.u64()? as usize;
        let barycentric = [r.f64()?, r.f64()?, r.f64()?];
        let normal_offset = r.f64()?;
        let offset = r.vec3()?;
        let rest_offset = r.vec3()?;
        let local_rotation = r.quat()?;
        let local_scale = r.vec3()?;
        if flags > 3 {
            return Err(Error::parse(
                &r.context,
                format!("record {i}: bad flags {flags}"),
            ));
        }
        let splat = GaussianSplat {
            mu,
            rotation,
            scale,
            opacity,
            color,
            label,
            binding: (flags & 1 == 1).then_some(MeshBinding {
                triangle,
                barycentric,
                normal_offset,
                offset,
                rest_offset,
                local_rotation,
                local_scale,
            }),
            decoupled: flags & 2 == 2,
        };
        splat
            .validate()
            .map_err(|e| Error::parse(&r.context, format!("record {i}: {e}")))?;
        scene.push(splat);
    }
    Ok(scene)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn save_scene(path: &Path, scene: &[GaussianSplat]) -> Result<()> {
    write_file(path, &encode_scene(scene))
}

pub fn load_scene(path: &Path) -> Result<Vec<GaussianSplat>> {
    decode_scene(&read_file(path)?, path)
}

/// Optimizer sidecar: moments, step count, hyperparameters and schedule.
pub fn encode_adam(state: &AdamState) -> Vec<u8> {
    let mut out = Vec::with_capacity(64 + 16 * state.len());
    out.extend_from_slice(ADAM_MAGIC);
    out.extend_from_slice(&ADAM_VERSION.to_le_bytes());
    out.extend_from_slice(&(state.len() as u64).to_le_bytes());
    out.extend_from_slice(&state.step.to_le_bytes());
    for x in [
        state.beta1,
        state.beta2,
        state.eps,
        state.schedule.lr_start,
        state.schedule.lr_end,
    ] {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out.extend_from_slice(&(state.schedule.iterations as u64).to_le_bytes());
    for x in state.m.iter().chain(&state.v) {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out
}

pub fn decode_adam(bytes: &[u8], context: &Path) -> Result<AdamState> {
    let mut r = Reader::new(bytes, context);
    if r.take(8)? != ADAM_MAGIC {
        return Err(Error::parse(
            &r.context,
            "not an optimizer sidecar (bad magic)",
        ));
    }
    let version = r.u32()?;
    if version != ADAM_VERSION {
        return Err(Error::Version {
            found: version,
            expected: ADAM_VERSION,
        });
    }
    let len = r.u64()? as usize;
    let step = r.u64()?;
    let (beta1, beta2, eps, lr_start, lr_end) = (r.f64()?, r.f64()?, r.f64()?, r.f64()?, r.f64()?);
    let iterations = r.u64()? as usize;
    if bytes.len() - r.pos != len.saturating_mul(16) {
        return Err(Error::parse(
            &r.context,
            "moment vectors have the wrong length",
        ));
    }
    let m = (0..len).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
    let v = (0..len).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
    Ok(AdamState {
        m,
        v,
        step,
        beta1,
        beta2,
        eps,
        schedule: Schedule {
            lr_start,
            lr_end,
            iterations,
        },
    })
}

pub fn save_adam(path: &Path, state: &AdamState) -> Result<()> {
    write_file(path, &encode_adam(state))
}

pub fn load_adam(path: &Path) -> Result<AdamState> {
    decode_adam(&read_file(path)?, path)
}

/// Writes an 8-bit RGB image; PNG unless the extension is `.ppm`.
pub fn save_image(path: &Path, image: &Image) -> Result<()> {
    let buf = image::RgbImage::from_raw(image.width as u32, image.height as u32, image.to_rgb8())
        .expect("buffer matches dimensions");
    let mut bytes = Vec::new();
    let format = image_format(path);
    buf.write_to(&mut std::io::Cursor::new(&mut bytes), format)?;
    write_file(path, &bytes)
}

fn image_format(path: &Path) -> image::ImageFormat {
    match path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .as_deref()
    {
        Some("ppm") | Some("pnm") => image::ImageFormat::Pnm,
        _ => image::ImageFormat::Png,
    }
}

/// Reads a PNG or PPM image into `[0, 1]` floats.
pub fn load_image(path: &Path) -> Result<Image> {
    let bytes = read_file(path)?;
    let img = image::load_from_memory_with_format(&bytes, image_format(path))?.to_rgb8();
    Image::from_rgb8(img.width() as usize, img.height() as usize, img.as_raw())
}

/// Writes a label map as an 8-bit grayscale PNG whose values are label ids.
pub fn save_label_map(path: &Path, labels: &LabelMap) -> Result<()> {
    if let Some(l) = labels.labels.iter().find(|l| **l > 255) {
        return Err(Error::InvalidParameter(format!(
            "label {l} does not fit in 8 bits"
        )));
    }
    let raw: Vec<u8> = labels.labels.iter().map(|l| *l as u8).collect();
    let buf = image::GrayImage::from_raw(labels.width as u32, labels.height as u32, raw)
        .expect("buffer matches dimensions");
    let mut bytes = Vec::new();
    buf.write_to(
        &mut std::io::Cursor::new(&mut bytes),
        image::ImageFormat::Png,
    )?;
    write_file(path, &bytes)
}

pub fn load_label_map(path: &Path) -> Result<LabelMap> {
    let img = image::load_from_memory(&read_file(path)?)?.to_luma8();
    Ok(LabelMap {
        width: img.width() as usize,
        height: img.height() as usize,
        labels: img.as_raw().iter().map(|v| *v as u16).collect(),
    })
}

/// Writes a mask as a black/white PNG.
pub fn save_mask(path: &Path, mask: &Mask) -> Result<()> {
    let raw: Vec<u8> = mask.bits.iter().map(|b| if *b { 255 } else { 0 }).collect();
    let buf = image::GrayImage::from_raw(mask.width as u32, mask.height as u32, raw)
        .expect("buffer matches dimensions");
    let mut bytes = Vec::new();
    buf.write_to(
        &mut std::io::Cursor::new(&mut bytes),
        image::ImageFormat::Png,
    )?;
    write_file(path, &bytes)
}

/// Reads a mask; pixels at or above mid-gray are set.
pub fn load_mask(path: &Path) -> Result<Mask> {
    let img = image::load_from_memory(&read_file(path)?)?.to_luma8();
    Ok(Mask {
        width: img.width() as usize,
        height: img.height() as usize,
        bits: img.as_raw().iter().map(|v| *v >= 128).collect(),
    })
}

/// Serializes a mesh as OBJ text (`v` and `f` lines). Coordinates use the
/// shortest representation that parses back to the same `f64`.
pub fn encode_obj(mesh: &MeshFrame) -> String {
    let mut out = String::new();
    for v in &mesh.vertices {
        out.push_str(&format!("v {} {} {}\n", v.x, v.y, v.z));
    }
    for [a, b, c] in &mesh.triangles {
        out.push_str(&format!("f {} {} {}\n", a + 1, b + 1, c + 1));
    }
    out
}

/// Parses the OBJ subset used here: `v` and triangular `f` lines (with
/// optional `/vt/vn` suffixes). Other statements are ignored.
pub fn decode_obj(text: &str, t: usize, context: &Path) -> Result<MeshFrame> {
    let ctx = context.display().to_string();
    let mut vertices = Vec::new();
    let mut triangles = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let mut parts = line.split_whitespace();
        match parts.next() {
            Some("v") => {
                let xyz: Vec<f64> = parts
                    .take(3)
                    .map(|s| s.parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|e| Error::parse(&ctx, format!("line {}: {e}", n + 1)))?;
                if xyz.len() != 3 {
                    return Err(Error::parse(
                        &ctx,
                        format!("line {}: vertex needs 3 coordinates", n + 1),
                    ));
                }
                vertices.push(Vec3::new(xyz[0], xyz[1], xyz[2]));
            }
            Some("f") => {
                let idx: Vec<usize> = parts
                    .map(|s| s.split('/').next().unwrap_or("").parse::<usize>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|e| Error::parse(&ctx, format!("line {}: {e}", n + 1)))?;
                if idx.len() != 3 || idx.contains(&0) {
                    return Err(Error::parse(
                        &ctx,
                        format!("line {}: faces must be 1-based triangles", n + 1),
                    ));
                }
                triangles.push([idx[0] - 1, idx[1] - 1, idx[2] - 1]);
            }
            _ => {}
        }
    }
    MeshFrame::new(vertices, triangles, t).map_err(|e| Error::parse(&ctx, e.to_string()))
}

pub fn save_obj(path: &Path, mesh: &MeshFrame) -> Result<()> {
    write_file(path, encode_obj(mesh).as_bytes())
}

pub fn load_obj(path: &Path, t: usize) -> Result<MeshFrame> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    decode_obj(&text, t, path)
}
