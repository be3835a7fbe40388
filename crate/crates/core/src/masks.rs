//! Binary person masks over the crop, their union, and exact distance fields.

use serde::{Deserialize, Serialize};

use crate::body::CROP_SIZE;
use crate::error::{Error, Result};

pub const MASK_SIZE: usize = CROP_SIZE;
/// Default in-mask fraction below which a person counts as object-occluded.
pub const OCCLUSION_TAU: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Single,
    Union,
}

/// `256 × 256` row-major binary mask in crop pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct PersonMask {
    bits: Vec<bool>,
    pub provenance: Provenance,
    pub object_occluded: bool,
}

impl PersonMask {
    pub fn empty() -> Self {
        Self { bits: vec![false; MASK_SIZE * MASK_SIZE], provenance: Provenance::Single, object_occluded: false }
    }

    pub fn full() -> Self {
        Self { bits: vec![true; MASK_SIZE * MASK_SIZE], ..Self::empty() }
    }

    pub fn from_bits(bits: Vec<bool>) -> Result<Self> {
        if bits.len() != MASK_SIZE * MASK_SIZE {
            return Err(Error::shape("mask bits", MASK_SIZE * MASK_SIZE, bits.len()));
        }
        Ok(Self { bits, ..Self::empty() })
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * MASK_SIZE + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.bits[y * MASK_SIZE + x] = v;
    }

    pub fn area(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    /// Floor-to-pixel containment of a crop point; false outside the grid.
    pub fn inside(&self, p: [f64; 2]) -> bool {
        pixel_of(p).is_some_and(|(x, y)| self.get(x, y))
    }
}

fn pixel_of(p: [f64; 2]) -> Option<(usize, usize)> {
    let (x, y) = (p[0].floor(), p[1].floor());
    let n = MASK_SIZE as f64;
    (x >= 0.0 && y >= 0.0 && x < n && y < n).then_some((x as usize, y as usize))
}

/// Pixel-wise OR of all masks.
pub fn union_masks(masks: &[PersonMask]) -> Result<PersonMask> {
    let first = masks.first().ok_or_else(|| Error::InvalidArgument("union of no masks".into()))?;
    let mut out = first.clone();
    for m in &masks[1..] {
        for (a, &b) in out.bits.iter_mut().zip(&m.bits) {
            *a |= b;
        }
        out.object_occluded |= m.object_occluded;
    }
    out.provenance = Provenance::Union;
    Ok(out)
}

/// Exact Euclidean distance, in pixels, from every pixel to the nearest
/// mask pixel.
#[derive(Debug, Clone)]
pub struct DistanceField {
    dist: Vec<f64>,
    boundary: Vec<(i64, i64)>,
}

const FAR: f64 = 1e20;

/// Lower envelope of parabolas `(q − p)² + f(p)` over one line.
fn edt_1d(f: &[f64], out: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    let mut k = 0usize;
    v[0] = 0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in 1..n {
        let intersect = |p: usize| ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * (q as f64 - p as f64));
        let mut s = intersect(v[k]);
        while s <= z[k] {
            k -= 1;
            s = intersect(v[k]);
        }
        k += 1;
        v[k] = q;
        z[k] = s;
        z[k + 1] = f64::INFINITY;
    }
    k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let d = q as f64 - v[k] as f64;
        *o = d * d + f[v[k]];
    }
}

pub fn distance_transform(mask: &PersonMask) -> Result<DistanceField> {
    if mask.is_empty() {
        return Err(Error::EmptyMask);
    }
    let n = MASK_SIZE;
    let mut grid: Vec<f64> = mask.bits.iter().map(|&b| if b { 0.0 } else { FAR }).collect();
    let mut f = vec![0.0; n];
    let mut out = vec![0.0; n];
    let mut v = vec![0usize; n];
    let mut z = vec![0.0; n + 1];
    for x in 0..n {
        for y in 0..n {
            f[y] = grid[y * n + x];
        }
        edt_1d(&f, &mut out, &mut v, &mut z);
        for y in 0..n {
            grid[y * n + x] = out[y];
        }
    }
    for y in 0..n {
        f.copy_from_slice(&grid[y * n..(y + 1) * n]);
        edt_1d(&f, &mut out, &mut v, &mut z);
        grid[y * n..(y + 1) * n].copy_from_slice(&out);
    }
    let boundary = (0..n)
        .flat_map(|y| (0..n).map(move |x| (x, y)))
        .filter(|&(x, y)| {
            mask.get(x, y)
                && (x == 0 || y == 0 || x == n - 1 || y == n - 1 || {
                    !(mask.get(x - 1, y) && mask.get(x + 1, y) && mask.get(x, y - 1) && mask.get(x, y + 1))
                })
        })
        .map(|(x, y)| (x as i64, y as i64))
        .collect();
    Ok(DistanceField { dist: grid.into_iter().map(f64::sqrt).collect(), boundary })
}

impl DistanceField {
    pub fn at_pixel(&self, x: usize, y: usize) -> f64 {
        self.dist[y * MASK_SIZE + x]
    }

    /// Distance from the pixel containing `p` to the nearest mask pixel.
    /// Points beyond the crop use the same pixel-lattice distance.
    pub fn distance(&self, p: [f64; 2]) -> f64 {
        if let Some((x, y)) = pixel_of(p) {
            return self.at_pixel(x, y);
        }
        let (px, py) = (p[0].floor(), p[1].floor());
        self.boundary
            .iter()
            .map(|&(x, y)| {
                let (dx, dy) = (px - x as f64, py - y as f64);
                dx * dx + dy * dy
            })
            .fold(f64::INFINITY, f64::min)
            .sqrt()
    }
}

/// True when fewer than `tau` of the in-crop body points fall inside the mask.
pub fn detect_object_occlusion(points: &[[f64; 2]], mask: &PersonMask, tau: f64) -> Result<bool> {
    let in_crop: Vec<_> = points.iter().filter(|p| pixel_of(**p).is_some()).collect();
    if in_crop.is_empty() {
        return Err(Error::InvalidArgument("no body point inside the crop".into()));
    }
    let inside = in_crop.iter().filter(|p| mask.inside(***p)).count();
    Ok((inside as f64) < tau * in_crop.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_mask(rng: &mut ChaCha8Rng, density: f64) -> PersonMask {
        PersonMask::from_bits((0..MASK_SIZE * MASK_SIZE).map(|_| rng.gen_bool(density)).collect()).unwrap()
    }

    #[test]
    fn union_laws() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (a, b) = (random_mask(&mut rng, 0.1), random_mask(&mut rng, 0.1));
        let ab = union_masks(&[a.clone(), b.clone()]).unwrap();
        assert_eq!(ab.provenance, Provenance::Union);
        assert_eq!(ab.bits, union_masks(&[b.clone(), a.clone()]).unwrap().bits);
        assert_eq!(union_masks(&[a.clone(), a.clone()]).unwrap().bits, a.bits);
        for i in 0..a.bits.len() {
            assert!(!a.bits[i] || ab.bits[i]);
            assert!(!b.bits[i] || ab.bits[i]);
        }
        assert_eq!(union_masks(std::slice::from_ref(&a)).unwrap().bits, a.bits);
    }

    #[test]
    fn disjoint_union_adds_areas() {
        let mut a = PersonMask::empty();
        let mut b = PersonMask::empty();
        for x in 0..10 {
            a.set(x, 0, true);
            b.set(x, 5, true);
        }
        assert_eq!(union_masks(&[a, b]).unwrap().area(), 20);
    }

    #[test]
    fn inside_floors_and_bounds() {
        let mut m = PersonMask::empty();
        m.set(3, 7, true);
        assert!(m.inside([3.0, 7.0]) && m.inside([3.99, 7.5]));
        assert!(!m.inside([4.0, 7.0]));
        assert!(!m.inside([-1.0, 5.0]));
        assert!(!PersonMask::full().inside([256.0, 1.0]));
    }

    #[test]
    fn distance_examples() {
        assert!(distance_transform(&PersonMask::full()).unwrap().dist.iter().all(|&d| d == 0.0));
        let mut m = PersonMask::empty();
        m.set(10, 10, true);
        let df = distance_transform(&m).unwrap();
        assert_eq!(df.at_pixel(13, 14), 5.0);
        assert!(matches!(distance_transform(&PersonMask::empty()), Err(Error::EmptyMask)));
    }

    #[test]
    fn distance_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m = random_mask(&mut rng, 0.0005);
        let df = distance_transform(&m).unwrap();
        let pts: Vec<(usize, usize)> =
            (0..MASK_SIZE).flat_map(|y| (0..MASK_SIZE).map(move |x| (x, y))).filter(|&(x, y)| m.get(x, y)).collect();
        for _ in 0..2000 {
            let (x, y) = (rng.gen_range(0..MASK_SIZE), rng.gen_range(0..MASK_SIZE));
            let brute = pts
                .iter()
                .map(|&(a, b)| ((a as f64 - x as f64).powi(2) + (b as f64 - y as f64).powi(2)).sqrt())
                .fold(f64::INFINITY, f64::min);
            assert!((df.at_pixel(x, y) - brute).abs() < 1e-9);
            assert_eq!(df.at_pixel(x, y) == 0.0, m.get(x, y));
        }
        for _ in 0..200 {
            let p: [f64; 2] = [rng.gen_range(-80.0..340.0), rng.gen_range(-80.0..340.0)];
            let (fx, fy) = (p[0].floor(), p[1].floor());
            let brute = pts
                .iter()
                .map(|&(a, b)| ((a as f64 - fx).powi(2) + (b as f64 - fy).powi(2)).sqrt())
                .fold(f64::INFINITY, f64::min);
            assert!((df.distance(p) - brute).abs() < 1e-9);
        }
    }

    #[test]
    fn distance_is_lipschitz() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = random_mask(&mut rng, 0.001);
        let df = distance_transform(&m).unwrap();
        for _ in 0..5000 {
            let (x1, y1) = (rng.gen_range(0..MASK_SIZE), rng.gen_range(0..MASK_SIZE));
            let (x2, y2) = (rng.gen_range(0..MASK_SIZE), rng.gen_range(0..MASK_SIZE));
            let d = ((x1 as f64 - x2 as f64).powi(2) + (y1 as f64 - y2 as f64).powi(2)).sqrt();
            assert!((df.at_pixel(x1, y1) - df.at_pixel(x2, y2)).abs() <= d + 1e-9);
        }
    }

    #[test]
    fn occlusion_flag_counts() {
        let mut m = PersonMask::empty();
        for x in 0..100 {
            for y in 0..100 {
                m.set(x, y, true);
            }
        }
        let inside: Vec<[f64; 2]> = (0..10).map(|i| [i as f64 * 5.0, 10.0]).collect();
        assert!(!detect_object_occlusion(&inside, &m, 0.9).unwrap());
        let outside: Vec<[f64; 2]> = (0..10).map(|i| [150.0 + i as f64, 150.0]).collect();
        assert!(detect_object_occlusion(&outside, &m, 0.9).unwrap());
        let mut mixed = inside.clone();
        mixed[0] = [200.0, 200.0];
        assert!(!detect_object_occlusion(&mixed, &m, 0.9).unwrap());
        mixed[1] = [200.0, 201.0];
        assert!(detect_object_occlusion(&mixed, &m, 0.9).unwrap());
        mixed.push([-5.0, -5.0]);
        assert!(detect_object_occlusion(&mixed, &m, 0.9).unwrap());
        assert!(detect_object_occlusion(&[[-1.0, 0.0]], &m, 0.9).is_err());
    }
}
