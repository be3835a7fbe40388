//! Binary dataset files: `AFDS`, format version, manifest JSON, records.
//!
//! All integers and floats are little-endian. Each record is length-prefixed
//! so readers can skip records without decoding them.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{generate_scene, BlobKind, Occluder, OccluderKind, PixelRect, Scene, SceneConfig};
use crate::body::{BBox, CameraModel, KinematicTree, WeakCamera, NUM_JOINTS, NUM_SHAPE, POSE_DIM};
use crate::condition::CTX_DIM;
use crate::error::{Error, Result};
use crate::heatmaps::{Heatmap, GRID_CELLS, GRID_H, GRID_W};
use crate::masks::{PersonMask, Provenance, MASK_SIZE};

pub const DATASET_MAGIC: &[u8; 4] = b"AFDS";
pub const DATASET_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub format: String,
    pub version: u32,
    pub count: usize,
    /// Scene `i` is generated from seed `base_seed + i`.
    pub base_seed: u64,
    pub config: SceneConfig,
    pub skeleton: KinematicTree,
    pub grid: [usize; 2],
    pub crop_size: usize,
}

impl DatasetManifest {
    pub fn new(count: usize, base_seed: u64, config: SceneConfig, skeleton: KinematicTree) -> Self {
        Self {
            format: "ambiflow-dataset".into(),
            version: DATASET_VERSION,
            count,
            base_seed,
            config,
            skeleton,
            grid: [GRID_W, GRID_H],
            crop_size: MASK_SIZE,
        }
    }
}

#[derive(Default)]
struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64s(&mut self, v: &[f64]) {
        v.iter().for_each(|x| self.f64(*x));
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Dataset(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn f64s<const N: usize>(&mut self) -> Result<[f64; N]> {
        let mut out = [0.0; N];
        for v in out.iter_mut() {
            *v = self.f64()?;
        }
        Ok(out)
    }
}

fn encode_scene(s: &Scene) -> Vec<u8> {
    let mut w = Writer::default();
    w.u64(s.seed);
    w.f64s(&s.theta);
    w.f64s(&s.beta);
    let c = &s.camera;
    w.f64s(&[c.weak.s, c.weak.tx, c.weak.ty, c.bbox.cx, c.bbox.cy, c.bbox.size, c.focal, c.image_w, c.image_h]);
    w.u8(s.occluders.len() as u8);
    for o in &s.occluders {
        for v in [o.rect.x0, o.rect.y0, o.rect.x1, o.rect.y1] {
            w.u32(v as u32);
        }
        w.u8(matches!(o.kind, OccluderKind::Person) as u8);
    }
    for p in &s.gt2d {
        w.f64s(p);
    }
    for k in 0..NUM_JOINTS {
        w.u8(s.occluded[k] as u8);
        w.u8(s.blobs[k].code());
        w.u8(s.modes[k].len() as u8);
        for m in &s.modes[k] {
            w.f64s(m);
        }
    }
    let flags = s.mask_available as u8
        | (s.mask.object_occluded as u8) << 1
        | (s.wrong_detection as u8) << 2
        | ((s.mask.provenance == Provenance::Union) as u8) << 3;
    w.u8(flags);
    w.f64s(&s.ctx);
    for v in s.heatmap.data() {
        w.0.extend_from_slice(&v.to_le_bytes());
    }
    for chunk in s.mask.bits().chunks(8) {
        w.u8(chunk.iter().enumerate().fold(0u8, |acc, (i, &b)| acc | (b as u8) << i));
    }
    w.0
}

fn decode_scene(buf: &[u8]) -> Result<Scene> {
    let mut r = Reader { buf, pos: 0 };
    let seed = r.u64()?;
    let theta = r.f64s::<POSE_DIM>()?.to_vec();
    let beta = r.f64s::<NUM_SHAPE>()?;
    let c = r.f64s::<9>()?;
    let camera = CameraModel {
        weak: WeakCamera { s: c[0], tx: c[1], ty: c[2] },
        bbox: BBox { cx: c[3], cy: c[4], size: c[5] },
        focal: c[6],
        image_w: c[7],
        image_h: c[8],
    };
    let n_occ = r.u8()?;
    let mut occluders = Vec::with_capacity(n_occ as usize);
    for _ in 0..n_occ {
        let v = [r.u32()?, r.u32()?, r.u32()?, r.u32()?].map(|x| x as usize);
        let kind = if r.u8()? == 1 { OccluderKind::Person } else { OccluderKind::Object };
        occluders.push(Occluder { rect: PixelRect { x0: v[0], y0: v[1], x1: v[2], y1: v[3] }, kind });
    }
    let mut gt2d = Vec::with_capacity(NUM_JOINTS);
    for _ in 0..NUM_JOINTS {
        gt2d.push(r.f64s::<2>()?);
    }
    let (mut occluded, mut blobs, mut modes) = (Vec::new(), Vec::new(), Vec::new());
    for _ in 0..NUM_JOINTS {
        occluded.push(r.u8()? != 0);
        let code = r.u8()?;
        blobs.push(BlobKind::from_code(code).ok_or_else(|| Error::Dataset(format!("blob code {code}")))?);
        let n = r.u8()?;
        let mut m = Vec::with_capacity(n as usize);
        for _ in 0..n {
            m.push(r.f64s::<2>()?);
        }
        modes.push(m);
    }
    let flags = r.u8()?;
    let ctx = r.f64s::<CTX_DIM>()?;
    let hm_bytes = r.take(NUM_JOINTS * GRID_CELLS * 4)?;
    let data = hm_bytes.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes"))).collect();
    let heatmap = Heatmap::from_data(NUM_JOINTS, data)?;
    let packed = r.take(MASK_SIZE * MASK_SIZE / 8)?;
    let bits = packed.iter().flat_map(|byte| (0..8).map(move |i| byte >> i & 1 == 1)).collect();
    let mut mask = PersonMask::from_bits(bits)?;
    mask.object_occluded = flags & 2 != 0;
    mask.provenance = if flags & 8 != 0 { Provenance::Union } else { Provenance::Single };
    if r.pos != buf.len() {
        return Err(Error::Dataset(format!("{} trailing bytes in record", buf.len() - r.pos)));
    }
    Ok(Scene {
        seed,
        theta,
        beta,
        camera,
        occluders,
        gt2d,
        occluded,
        blobs,
        modes,
        heatmap,
        mask,
        mask_available: flags & 1 != 0,
        wrong_detection: flags & 4 != 0,
        ctx,
    })
}

/// Serializes a dataset into bytes.
pub fn encode_dataset(manifest: &DatasetManifest, scenes: &[Scene]) -> Result<Vec<u8>> {
    if manifest.count != scenes.len() {
        return Err(Error::Dataset(format!("manifest count {} but {} scenes", manifest.count, scenes.len())));
    }
    let json = serde_json::to_vec(manifest)?;
    let mut w = Writer::default();
    w.0.extend_from_slice(DATASET_MAGIC);
    w.u32(DATASET_VERSION);
    w.u64(json.len() as u64);
    w.0.extend_from_slice(&json);
    for s in scenes {
        let rec = encode_scene(s);
        w.u64(rec.len() as u64);
        w.0.extend_from_slice(&rec);
    }
    Ok(w.0)
}

pub fn decode_dataset(bytes: &[u8]) -> Result<(DatasetManifest, Vec<Scene>)> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4)? != DATASET_MAGIC {
        return Err(Error::Dataset("not a dataset file".into()));
    }
    let version = r.u32()?;
    if version != DATASET_VERSION {
        return Err(Error::Dataset(format!("unsupported format version {version}")));
    }
    let len = r.u64()? as usize;
    let manifest: DatasetManifest = serde_json::from_slice(r.take(len)?)?;
    let mut scenes = Vec::with_capacity(manifest.count);
    while r.pos < bytes.len() {
        let len = r.u64()? as usize;
        scenes.push(decode_scene(r.take(len)?)?);
    }
    if scenes.len() != manifest.count {
        return Err(Error::Dataset(format!("manifest count {} but {} records", manifest.count, scenes.len())));
    }
    Ok((manifest, scenes))
}

fn sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let mut tmp = PathBuf::from(dir);
    tmp.push(format!(".{}.tmp", path.file_name().and_then(|n| n.to_str()).unwrap_or("out")));
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Writes the dataset and its sidecar manifest; returns the SHA-256 of the
/// dataset bytes as lowercase hex.
pub fn write_dataset(path: &Path, manifest: &DatasetManifest, scenes: &[Scene]) -> Result<String> {
    let bytes = encode_dataset(manifest, scenes)?;
    write_atomic(path, &bytes)?;
    write_atomic(&sidecar(path), &serde_json::to_vec_pretty(manifest)?)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub fn read_dataset(path: &Path) -> Result<(DatasetManifest, Vec<Scene>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_dataset(&bytes)
}

/// Generates `n` scenes from seeds `seed + i` and writes them to `path`.
pub fn generate_dataset(n: usize, seed: u64, config: &SceneConfig, path: &Path) -> Result<String> {
    let tree = KinematicTree::standard();
    let scenes = (0..n as u64).map(|i| generate_scene(seed + i, config, &tree)).collect::<Result<Vec<_>>>()?;
    write_dataset(path, &DatasetManifest::new(n, seed, *config, tree), &scenes)
}
