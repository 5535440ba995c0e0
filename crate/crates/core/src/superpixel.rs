use crate::cc::label_components;
use crate::error::{EsaError, Result};
use crate::raster::{Image, RegionMap};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlicParams {
    pub k: usize,
    pub compactness: f64,
    pub max_iters: usize,
    pub connectivity_min_ratio: f64,
}

impl Default for SlicParams {
    fn default() -> Self {
        SlicParams { k: 1000, compactness: 0.1, max_iters: 10, connectivity_min_ratio: 0.25 }
    }
}

fn srgb_linear(c: u8) -> f64 {
    let c = c as f64 / 255.0;
    if c <= 0.04045 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

fn lab_f(t: f64) -> f64 {
    const DELTA: f64 = 6.0 / 29.0;
    if t > DELTA * DELTA * DELTA {
        t.cbrt()
    } else {
        t / (3.0 * DELTA * DELTA) + 4.0 / 29.0
    }
}

pub fn rgb_to_lab_pixel(rgb: [u8; 3]) -> [f64; 3] {
    let r = srgb_linear(rgb[0]);
    let g = srgb_linear(rgb[1]);
    let b = srgb_linear(rgb[2]);
    let x = 0.4124564 * r + 0.3575761 * g + 0.1804375 * b;
    let y = 0.2126729 * r + 0.7151522 * g + 0.0721750 * b;
    let z = 0.0193339 * r + 0.1191920 * g + 0.9503041 * b;
    let fx = lab_f(x / 0.95047);
    let fy = lab_f(y / 1.0);
    let fz = lab_f(z / 1.08883);
    [116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)]
}

/// CIELAB (D65) conversion for every pixel, row-major.
pub fn rgb_to_lab(img: &Image) -> Vec<[f64; 3]> {
    (0..img.height * img.width)
        .map(|p| rgb_to_lab_pixel(img.pixel(p / img.width, p % img.width)))
        .collect()
}

#[derive(Clone, Copy)]
struct Center {
    l: f64,
    a: f64,
    b: f64,
    x: f64,
    y: f64,
}

fn gradient(lab: &[[f64; 3]], h: usize, w: usize, y: usize, x: usize) -> f64 {
    let at = |yy: usize, xx: usize| lab[yy * w + xx];
    let xl = at(y, x.saturating_sub(1));
    let xr = at(y, (x + 1).min(w - 1));
    let yu = at(y.saturating_sub(1), x);
    let yd = at((y + 1).min(h - 1), x);
    let dx: f64 = (0..3).map(|i| (xr[i] - xl[i]) * (xr[i] - xl[i])).sum();
    let dy: f64 = (0..3).map(|i| (yd[i] - yu[i]) * (yd[i] - yu[i])).sum();
    dx + dy
}

/// SLIC superpixels: localized k-means over (L,a,b,x,y) with
/// D = d_lab + (compactness / S_grid) * d_xy, followed by absorption of
/// undersized 4-connected components into their largest neighbor.
pub fn slic(img: &Image, params: &SlicParams) -> Result<RegionMap> {
    let h = img.height;
    let w = img.width;
    let hw = h * w;
    if params.k < 1 || params.k > hw {
        return Err(EsaError::config("slic.k", format!("{} outside [1, {hw}]", params.k)));
    }
    if params.max_iters < 1 {
        return Err(EsaError::config("slic.max_iters", "must be at least 1".to_string()));
    }
    if !params.compactness.is_finite() || params.compactness < 0.0 {
        return Err(EsaError::config("slic.compactness", "must be nonnegative".to_string()));
    }
    if !(params.connectivity_min_ratio > 0.0 && params.connectivity_min_ratio <= 1.0) {
        return Err(EsaError::config("slic.min_region_ratio", "must be in (0,1]".to_string()));
    }

    let lab = rgb_to_lab(img);
    let s_grid = (hw as f64 / params.k as f64).sqrt();
    let ny = (h as f64 / s_grid).round().clamp(1.0, h as f64) as usize;
    let nx = (params.k as f64 / ny as f64).round().clamp(1.0, w as f64) as usize;

    let mut centers = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            let cx = ((i as f64 + 0.5) * w as f64 / nx as f64).floor() as usize;
            let cy = ((j as f64 + 0.5) * h as f64 / ny as f64).floor() as usize;
            let mut best = (cy, cx);
            let mut best_g = gradient(&lab, h, w, cy, cx);
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    let py = cy as i64 + dy;
                    let px = cx as i64 + dx;
                    if py < 0 || px < 0 || py >= h as i64 || px >= w as i64 {
                        continue;
                    }
                    let g = gradient(&lab, h, w, py as usize, px as usize);
                    if g < best_g {
                        best_g = g;
                        best = (py as usize, px as usize);
                    }
                }
            }
            let p = best.0 * w + best.1;
            centers.push(Center {
                l: lab[p][0],
                a: lab[p][1],
                b: lab[p][2],
                x: best.1 as f64,
                y: best.0 as f64,
            });
        }
    }

    let spatial_weight = params.compactness / s_grid;
    let dist_to = |c: &Center, p: usize, x: usize, y: usize| {
        let dl = lab[p][0] - c.l;
        let da = lab[p][1] - c.a;
        let db = lab[p][2] - c.b;
        let d_lab = (dl * dl + da * da + db * db).sqrt();
        let dx = x as f64 - c.x;
        let dy = y as f64 - c.y;
        d_lab + spatial_weight * (dx * dx + dy * dy).sqrt()
    };

    let mut labels = vec![u32::MAX; hw];
    let mut dists = vec![f64::INFINITY; hw];
    for _ in 0..params.max_iters {
        labels.fill(u32::MAX);
        dists.fill(f64::INFINITY);
        for (ci, c) in centers.iter().enumerate() {
            let x0 = (c.x - s_grid).floor().max(0.0) as usize;
            let x1 = ((c.x + s_grid).ceil() as usize).min(w - 1);
            let y0 = (c.y - s_grid).floor().max(0.0) as usize;
            let y1 = ((c.y + s_grid).ceil() as usize).min(h - 1);
            for y in y0..=y1 {
                for x in x0..=x1 {
                    let p = y * w + x;
                    let d = dist_to(c, p, x, y);
                    if d < dists[p] {
                        dists[p] = d;
                        labels[p] = ci as u32;
                    }
                }
            }
        }
        for p in 0..hw {
            if labels[p] == u32::MAX {
                let (x, y) = (p % w, p / w);
                for (ci, c) in centers.iter().enumerate() {
                    let d = dist_to(c, p, x, y);
                    if d < dists[p] {
                        dists[p] = d;
                        labels[p] = ci as u32;
                    }
                }
            }
        }

        let mut sums = vec![[0.0f64; 5]; centers.len()];
        let mut counts = vec![0usize; centers.len()];
        for p in 0..hw {
            let ci = labels[p] as usize;
            let s = &mut sums[ci];
            s[0] += lab[p][0];
            s[1] += lab[p][1];
            s[2] += lab[p][2];
            s[3] += (p % w) as f64;
            s[4] += (p / w) as f64;
            counts[ci] += 1;
        }
        for (ci, c) in centers.iter_mut().enumerate() {
            if counts[ci] > 0 {
                let n = counts[ci] as f64;
                c.l = sums[ci][0] / n;
                c.a = sums[ci][1] / n;
                c.b = sums[ci][2] / n;
                c.x = sums[ci][3] / n;
                c.y = sums[ci][4] / n;
            }
        }
    }

    let min_size = params.connectivity_min_ratio * hw as f64 / centers.len() as f64;
    loop {
        let (comp, ncomp) = label_components(&labels, h, w);
        let mut sizes = vec![0usize; ncomp];
        for &c in &comp {
            sizes[c as usize] += 1;
        }
        let mut small: Option<u32> = None;
        for (c, &sz) in sizes.iter().enumerate() {
            if (sz as f64) < min_size && small.is_none_or(|b| sz < sizes[b as usize]) {
                small = Some(c as u32);
            }
        }
        let Some(target) = small else { break };
        let mut best: Option<(usize, u32, u32)> = None;
        for p in 0..hw {
            if comp[p] != target {
                continue;
            }
            let (x, y) = (p % w, p / w);
            let mut consider = |q: usize| {
                let cq = comp[q];
                if cq != target {
                    let cand = (sizes[cq as usize], u32::MAX - cq, labels[q]);
                    if best.is_none_or(|b| (cand.0, cand.1) > (b.0, b.1)) {
                        best = Some(cand);
                    }
                }
            };
            if x > 0 {
                consider(p - 1);
            }
            if x + 1 < w {
                consider(p + 1);
            }
            if y > 0 {
                consider(p - w);
            }
            if y + 1 < h {
                consider(p + w);
            }
        }
        let Some((_, _, new_label)) = best else { break };
        for p in 0..hw {
            if comp[p] == target {
                labels[p] = new_label;
            }
        }
    }

    let (comp, ncomp) = label_components(&labels, h, w);
    RegionMap::new(h, w, ncomp, comp, None)
}

/// Non-overlapping cell×cell tiles with row-major ids; edge tiles truncated.
pub fn grid_regions(height: usize, width: usize, cell: usize) -> Result<RegionMap> {
    if cell < 1 {
        return Err(EsaError::config("select.cell", "must be at least 1".to_string()));
    }
    let tx = width.div_ceil(cell);
    let ty = height.div_ceil(cell);
    let mut assignment = Vec::with_capacity(height * width);
    for y in 0..height {
        for x in 0..width {
            assignment.push(((y / cell) * tx + x / cell) as u32);
        }
    }
    RegionMap::new(height, width, tx * ty, assignment, None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::Image;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise_image(h: usize, w: usize, seed: u64) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<u8> = (0..h * w * 3).map(|_| rng.random()).collect();
        Image::new(h, w, data).unwrap()
    }

    fn two_halves(n: usize) -> Image {
        let mut img = Image::filled(n, n, [0, 0, 0]);
        for y in 0..n {
            for x in n / 2..n {
                img.set_pixel(y, x, [255, 255, 255]);
            }
        }
        img
    }

    #[test]
    fn white_black_lab() {
        let lab = rgb_to_lab_pixel([255, 255, 255]);
        assert!((lab[0] - 100.0).abs() < 0.01, "{:?}", lab);
        assert!(lab[1].abs() <= 0.01 && lab[2].abs() <= 0.01, "{:?}", lab);
        let lab = rgb_to_lab_pixel([0, 0, 0]);
        assert!(lab[0].abs() < 1e-9 && lab[1].abs() < 1e-9 && lab[2].abs() < 1e-9);
    }

    #[test]
    fn mid_gray_lab_matches_scalar_chain() {
        let lab = rgb_to_lab_pixel([119, 119, 119]);
        let lin = ((119.0f64 / 255.0 + 0.055) / 1.055).powf(2.4);
        let yy = 0.2126729 * lin + 0.7151522 * lin + 0.0721750 * lin;
        let expect_l = 116.0 * yy.cbrt() - 16.0;
        assert!((lab[0] - expect_l).abs() < 1e-9, "{} vs {expect_l}", lab[0]);
        assert!(lab[1].abs() <= 0.01 && lab[2].abs() <= 0.01, "{:?}", lab);
    }

    #[test]
    fn uniform_image_gives_grid_cells() {
        let img = Image::filled(60, 60, [90, 120, 200]);
        let r = slic(&img, &SlicParams { k: 9, ..Default::default() }).unwrap();
        assert_eq!(r.count, 9);
        for area in r.areas() {
            assert!((200..=600).contains(&area), "area {area}");
        }
    }

    #[test]
    fn halves_boundary_recall_is_perfect() {
        let img = two_halves(60);
        let r = slic(&img, &SlicParams { k: 4, ..Default::default() }).unwrap();
        for members in r.members() {
            let left = members.iter().filter(|&&p| p % 60 < 30).count();
            assert!(left == 0 || left == members.len(), "region spans the color edge");
        }
    }

    #[test]
    fn degenerate_k_every_pixel_own_region() {
        let img = Image::filled(8, 8, [10, 10, 10]);
        let r = slic(&img, &SlicParams { k: 64, ..Default::default() }).unwrap();
        assert_eq!(r.count, 64);
        assert!(r.areas().iter().all(|&a| a == 1));
    }

    #[test]
    fn k_above_pixel_count_rejected() {
        let img = Image::filled(4, 4, [0, 0, 0]);
        let err = slic(&img, &SlicParams { k: 17, ..Default::default() }).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn deterministic_on_noise() {
        let img = noise_image(48, 48, 11);
        let p = SlicParams { k: 16, ..Default::default() };
        let a = slic(&img, &p).unwrap();
        let b = slic(&img, &p).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn regions_are_connected_components() {
        let img = noise_image(48, 48, 3);
        let r = slic(&img, &SlicParams { k: 16, ..Default::default() }).unwrap();
        let (_, ncomp) = crate::cc::label_components(&r.assignment, 48, 48);
        assert_eq!(ncomp, r.count);
    }

    #[test]
    fn count_stays_near_k() {
        let img = noise_image(128, 128, 5);
        let r = slic(&img, &SlicParams { k: 64, ..Default::default() }).unwrap();
        assert!(r.count >= 16 && r.count <= 128, "count {}", r.count);
    }

    fn mean_perimeter_ratio(r: &RegionMap) -> f64 {
        let (h, w) = (r.height, r.width);
        let mut perim = vec![0usize; r.count];
        for y in 0..h {
            for x in 0..w {
                let id = r.id(y, x) as usize;
                let mut edge = |other: Option<u32>| {
                    if other != Some(id as u32) {
                        perim[id] += 1;
                    }
                };
                edge((x > 0).then(|| r.id(y, x - 1)));
                edge((x + 1 < w).then(|| r.id(y, x + 1)));
                edge((y > 0).then(|| r.id(y - 1, x)));
                edge((y + 1 < h).then(|| r.id(y + 1, x)));
            }
        }
        let areas = r.areas();
        (0..r.count)
            .map(|i| (perim[i] * perim[i]) as f64 / areas[i] as f64)
            .sum::<f64>()
            / r.count as f64
    }

    #[test]
    fn higher_compactness_is_not_less_compact() {
        let img = noise_image(48, 48, 21);
        let loose = slic(&img, &SlicParams { k: 16, compactness: 0.05, ..Default::default() }).unwrap();
        let tight = slic(&img, &SlicParams { k: 16, compactness: 80.0, ..Default::default() }).unwrap();
        let (a, b) = (mean_perimeter_ratio(&tight), mean_perimeter_ratio(&loose));
        assert!(a <= b, "tight {a} vs loose {b}");
    }

    #[test]
    fn grid_6x6_cell3() {
        let r = grid_regions(6, 6, 3).unwrap();
        assert_eq!(r.count, 4);
        assert!(r.areas().iter().all(|&a| a == 9));
    }

    #[test]
    fn grid_cell1_is_pixel_identity() {
        let r = grid_regions(3, 4, 1).unwrap();
        assert_eq!(r.count, 12);
        assert_eq!(r.assignment, (0..12u32).collect::<Vec<_>>());
    }

    #[test]
    fn grid_5x5_cell3_truncates_edges() {
        let r = grid_regions(5, 5, 3).unwrap();
        assert_eq!(r.count, 4);
        let mut areas = r.areas();
        areas.sort_unstable();
        assert_eq!(areas, vec![4, 6, 6, 9]);
    }
}
