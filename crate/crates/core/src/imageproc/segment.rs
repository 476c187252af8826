//! Graph-based segmentation (Felzenszwalb–Huttenlocher) and region filling.

use super::Image;
use crate::error::{dim_err, Error, Result};

/// Segmentation parameters. `k` is in 0–255 colour units.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SegmentParams {
    pub k: f64,
    pub sigma: f64,
    pub min_size: usize,
}

impl Default for SegmentParams {
    fn default() -> Self {
        SegmentParams {
            k: 100.0,
            sigma: 0.8,
            min_size: 50,
        }
    }
}

impl SegmentParams {
    /// Defaults with `min_size` scaled from 256x256 to the given area.
    pub fn for_size(height: usize, width: usize) -> Self {
        let d = Self::default();
        let scaled = (d.min_size as f64 * (height * width) as f64 / (256.0 * 256.0)).round();
        SegmentParams {
            min_size: (scaled as usize).max(1),
            ..d
        }
    }
}

/// Per-pixel region ids, dense in `[0, count)`, numbered in row-major order
/// of each region's first pixel.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SegmentLabeling {
    pub height: usize,
    pub width: usize,
    pub labels: Vec<usize>,
    pub count: usize,
    /// Pixel indices (row-major) of each region.
    pub regions: Vec<Vec<usize>>,
}

impl SegmentLabeling {
    /// Builds a labeling from arbitrary per-pixel keys, renumbering densely.
    pub fn from_keys(height: usize, width: usize, keys: &[usize]) -> Result<Self> {
        if keys.len() != height * width {
            return dim_err("segment labeling: key count does not match image size");
        }
        let mut remap = std::collections::HashMap::new();
        let mut labels = Vec::with_capacity(keys.len());
        let mut regions: Vec<Vec<usize>> = Vec::new();
        for (p, key) in keys.iter().enumerate() {
            let next = remap.len();
            let id = *remap.entry(key).or_insert(next);
            if id == regions.len() {
                regions.push(Vec::new());
            }
            regions[id].push(p);
            labels.push(id);
        }
        Ok(SegmentLabeling {
            height,
            width,
            labels,
            count: regions.len(),
            regions,
        })
    }
}

struct DisjointSets {
    parent: Vec<usize>,
    size: Vec<usize>,
    /// Largest edge weight merged into the component so far.
    internal: Vec<f64>,
}

impl DisjointSets {
    fn new(n: usize) -> Self {
        DisjointSets {
            parent: (0..n).collect(),
            size: vec![1; n],
            internal: vec![0.0; n],
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize, w: f64) {
        let (big, small) = if self.size[a] >= self.size[b] { (a, b) } else { (b, a) };
        self.parent[small] = big;
        self.size[big] += self.size[small];
        self.internal[big] = self.internal[big].max(self.internal[small]).max(w);
    }
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let sigma = sigma.max(0.01);
    let len = (sigma * 4.0).ceil() as usize + 1;
    let mut k: Vec<f64> = (0..len).map(|i| (-0.5 * (i as f64 / sigma).powi(2)).exp()).collect();
    let total = k[0] + 2.0 * k[1..].iter().sum::<f64>();
    k.iter_mut().for_each(|v| *v /= total);
    k
}

/// Separable symmetric blur with clamped borders.
fn smooth(plane: &[f64], h: usize, w: usize, sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return plane.to_vec();
    }
    let k = gaussian_kernel(sigma);
    let pass = |src: &[f64], horizontal: bool| -> Vec<f64> {
        let mut out = vec![0.0; src.len()];
        for y in 0..h {
            for x in 0..w {
                let at = |d: isize| -> f64 {
                    if horizontal {
                        let xx = (x as isize + d).clamp(0, w as isize - 1) as usize;
                        src[y * w + xx]
                    } else {
                        let yy = (y as isize + d).clamp(0, h as isize - 1) as usize;
                        src[yy * w + x]
                    }
                };
                let mut s = k[0] * at(0);
                for (i, kv) in k.iter().enumerate().skip(1) {
                    s += kv * (at(i as isize) + at(-(i as isize)));
                }
                out[y * w + x] = s;
            }
        }
        out
    };
    pass(&pass(plane, true), false)
}

/// Segments `img` by Kruskal-order merging on the 8-connected pixel grid:
/// two components merge when the joining edge is no heavier than
/// `min(Int(C1) + k/|C1|, Int(C2) + k/|C2|)`. Components smaller than
/// `min_size` are then absorbed along the remaining edges in weight order.
/// Ties are broken by edge index, so the result is deterministic.
pub fn felzenszwalb_segment(img: &Image, params: &SegmentParams) -> Result<SegmentLabeling> {
    if !(params.k > 0.0) || params.min_size == 0 || !(params.sigma >= 0.0) {
        return Err(Error::Contract(format!("invalid segmentation parameters {params:?}")));
    }
    let (h, w) = (img.height(), img.width());
    let planes: Vec<Vec<f64>> = (0..img.channels())
        .map(|c| {
            let scaled: Vec<f64> = img.plane(c).iter().map(|v| v * 255.0).collect();
            smooth(&scaled, h, w, params.sigma)
        })
        .collect();
    let dist = |a: usize, b: usize| -> f64 {
        planes.iter().map(|p| (p[a] - p[b]).powi(2)).sum::<f64>().sqrt()
    };

    let mut edges: Vec<(usize, usize, f64)> = Vec::with_capacity(4 * h * w);
    for y in 0..h {
        for x in 0..w {
            let a = y * w + x;
            if x + 1 < w {
                edges.push((a, a + 1, dist(a, a + 1)));
            }
            if y + 1 < h {
                edges.push((a, a + w, dist(a, a + w)));
            }
            if x + 1 < w && y + 1 < h {
                edges.push((a, a + w + 1, dist(a, a + w + 1)));
            }
            if x + 1 < w && y > 0 {
                edges.push((a, a - w + 1, dist(a, a - w + 1)));
            }
        }
    }
    // Stable: equal weights keep their creation order.
    edges.sort_by(|p, q| p.2.total_cmp(&q.2));

    let mut sets = DisjointSets::new(h * w);
    for &(a, b, wt) in &edges {
        let (ra, rb) = (sets.find(a), sets.find(b));
        if ra == rb {
            continue;
        }
        let limit_a = sets.internal[ra] + params.k / sets.size[ra] as f64;
        let limit_b = sets.internal[rb] + params.k / sets.size[rb] as f64;
        if wt <= limit_a.min(limit_b) {
            sets.union(ra, rb, wt);
        }
    }
    for &(a, b, wt) in &edges {
        let (ra, rb) = (sets.find(a), sets.find(b));
        if ra != rb && (sets.size[ra] < params.min_size || sets.size[rb] < params.min_size) {
            sets.union(ra, rb, wt);
        }
    }
    let roots: Vec<usize> = (0..h * w).map(|p| sets.find(p)).collect();
    SegmentLabeling::from_keys(h, w, &roots)
}

/// Replaces every pixel by the mean colour of its region. A region whose
/// pixels already share one value per channel keeps that value exactly.
pub fn region_color_fill(img: &Image, seg: &SegmentLabeling) -> Result<Image> {
    if seg.height != img.height() || seg.width != img.width() || seg.labels.len() != img.height() * img.width() {
        return dim_err(format!(
            "region fill: labeling {}x{} does not cover image {}x{}",
            seg.height,
            seg.width,
            img.height(),
            img.width()
        ));
    }
    let plane_len = img.height() * img.width();
    let mut data = vec![0.0; img.data().len()];
    for c in 0..img.channels() {
        let plane = img.plane(c);
        for region in &seg.regions {
            let first = plane[region[0]];
            let value = if region.iter().all(|&p| plane[p] == first) {
                first
            } else {
                region.iter().map(|&p| plane[p]).sum::<f64>() / region.len() as f64
            };
            for &p in region {
                data[c * plane_len + p] = value.clamp(0.0, 1.0);
            }
        }
    }
    Image::new(img.channels(), img.height(), img.width(), data)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn random_image(c: usize, h: usize, w: usize, seed: u64) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::new(c, h, w, (0..c * h * w).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap()
    }

    fn half_black_white() -> Image {
        Image::new(1, 8, 8, (0..64).map(|i| if i % 8 < 4 { 0.0 } else { 1.0 }).collect()).unwrap()
    }

    /// Flood-fills 4-connected equal-valued pixels with a plain union-find.
    fn equal_value_components(img: &Image) -> SegmentLabeling {
        let (h, w) = (img.height(), img.width());
        let mut parent: Vec<usize> = (0..h * w).collect();
        fn find(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                x = p[x];
            }
            x
        }
        let same = |a: usize, b: usize| (0..img.channels()).all(|c| img.plane(c)[a] == img.plane(c)[b]);
        for y in 0..h {
            for x in 0..w {
                let a = y * w + x;
                for b in [(x + 1 < w).then(|| a + 1), (y + 1 < h).then(|| a + w)].into_iter().flatten() {
                    if same(a, b) {
                        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
                        parent[ra.max(rb)] = ra.min(rb);
                    }
                }
            }
        }
        let keys: Vec<usize> = (0..h * w).map(|p| find(&mut parent, p)).collect();
        SegmentLabeling::from_keys(h, w, &keys).unwrap()
    }

    #[test]
    fn constant_image_is_one_region() {
        let img = Image::filled(3, 6, 9, 0.3).unwrap();
        let seg = felzenszwalb_segment(&img, &SegmentParams::default()).unwrap();
        assert_eq!(seg.count, 1);
        assert_eq!(seg, equal_value_components(&img));
    }

    #[test]
    fn half_split_gives_two_regions_at_the_boundary() {
        let img = half_black_white();
        let params = SegmentParams {
            k: 10.0,
            sigma: 0.0,
            min_size: 1,
        };
        let seg = felzenszwalb_segment(&img, &params).unwrap();
        assert_eq!(seg.count, 2);
        for p in 0..64 {
            assert_eq!(seg.labels[p], usize::from(p % 8 >= 4));
        }
        assert_eq!(seg, equal_value_components(&img));
    }

    #[test]
    fn whole_image_min_size_forces_one_region() {
        let img = random_image(3, 7, 5, 3);
        let params = SegmentParams {
            min_size: 35,
            ..SegmentParams::default()
        };
        assert_eq!(felzenszwalb_segment(&img, &params).unwrap().count, 1);
    }

    #[test]
    fn labels_are_dense_and_cover_every_pixel() {
        let img = random_image(3, 12, 10, 4);
        let seg = felzenszwalb_segment(&img, &SegmentParams::for_size(12, 10)).unwrap();
        assert_eq!(seg.regions.iter().map(Vec::len).sum::<usize>(), 120);
        assert!(seg.labels.iter().all(|&l| l < seg.count));
        for (id, region) in seg.regions.iter().enumerate() {
            assert!(region.iter().all(|&p| seg.labels[p] == id));
        }
        assert_eq!(seg, felzenszwalb_segment(&img, &SegmentParams::for_size(12, 10)).unwrap());
    }

    #[test]
    fn min_size_scaling() {
        assert_eq!(SegmentParams::for_size(256, 256).min_size, 50);
        assert_eq!(SegmentParams::for_size(64, 64).min_size, 3);
        assert_eq!(SegmentParams::for_size(8, 8).min_size, 1);
    }

    #[test]
    fn fill_examples() {
        let img = random_image(3, 4, 5, 5);
        let one = SegmentLabeling::from_keys(4, 5, &[7; 20]).unwrap();
        let filled = region_color_fill(&img, &one).unwrap();
        for c in 0..3 {
            let mean = img.plane(c).iter().sum::<f64>() / 20.0;
            assert!(filled.plane(c).iter().all(|v| (v - mean).abs() < 1e-15));
        }

        let two = half_black_white();
        let seg = equal_value_components(&two);
        assert_eq!(region_color_fill(&two, &seg).unwrap(), two);

        let wrong = SegmentLabeling::from_keys(2, 2, &[0; 4]).unwrap();
        assert!(region_color_fill(&img, &wrong).is_err());
    }

    #[test]
    fn fill_matches_accumulation_oracle() {
        let img = random_image(3, 9, 7, 6);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let keys: Vec<usize> = (0..63).map(|_| rng.random_range(0..5)).collect();
        let seg = SegmentLabeling::from_keys(9, 7, &keys).unwrap();
        let filled = region_color_fill(&img, &seg).unwrap();
        for c in 0..3 {
            let mut sums = [0.0; 5];
            let mut counts = [0usize; 5];
            for (p, &k) in keys.iter().enumerate() {
                sums[k] += img.plane(c)[p];
                counts[k] += 1;
            }
            for (p, &k) in keys.iter().enumerate() {
                assert!((filled.plane(c)[p] - sums[k] / counts[k] as f64).abs() < 1e-12);
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn fill_is_idempotent(seed in 0u64..100_000) {
            let img = random_image(3, 10, 10, seed);
            let seg = felzenszwalb_segment(&img, &SegmentParams { k: 300.0, sigma: 0.5, min_size: 4 }).unwrap();
            let once = region_color_fill(&img, &seg).unwrap();
            prop_assert_eq!(region_color_fill(&once, &seg).unwrap(), once);
        }

        #[test]
        fn segmentation_is_deterministic(seed in 0u64..100_000) {
            let img = random_image(3, 8, 9, seed);
            let p = SegmentParams { k: 150.0, sigma: 0.8, min_size: 3 };
            prop_assert_eq!(felzenszwalb_segment(&img, &p).unwrap(), felzenszwalb_segment(&img, &p).unwrap());
        }
    }
}
