use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{EsaError, Result};
use crate::raster::{Image, LabelMap};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DatasetSpec {
    pub seed: u64,
    pub images: usize,
    pub size: usize,
    pub classes: usize,
    pub shapes_per_image: usize,
    pub palette_shift: i32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Domain {
    Source,
    Target,
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 || self.classes > 254 {
            return Err(EsaError::config("dataset.classes", format!("{} outside [2,254]", self.classes)));
        }
        if self.size < 16 {
            return Err(EsaError::config("dataset.size", format!("{} below minimum 16", self.size)));
        }
        Ok(())
    }
}

fn clamp_u8(v: i32) -> u8 {
    v.clamp(0, 255) as u8
}

/// Class colors for a domain. The target palette is the source palette with
/// `palette_shift` added to every channel, clamped to [0,255].
pub fn palette(spec: &DatasetSpec, domain: Domain) -> Vec<[u8; 3]> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut colors: Vec<[u8; 3]> = Vec::with_capacity(spec.classes);
    let mut min_dist = 48i32;
    let mut attempts = 0u32;
    while colors.len() < spec.classes {
        let cand = [rng.random::<u8>(), rng.random::<u8>(), rng.random::<u8>()];
        let ok = colors.iter().all(|c| {
            (0..3).map(|i| (c[i] as i32 - cand[i] as i32).abs()).max().unwrap() >= min_dist
        });
        if ok {
            colors.push(cand);
            attempts = 0;
        } else {
            attempts += 1;
            if attempts > 200 {
                min_dist = (min_dist / 2).max(1);
                attempts = 0;
            }
        }
    }
    if domain == Domain::Target {
        for c in &mut colors {
            for ch in c.iter_mut() {
                *ch = clamp_u8(*ch as i32 + spec.palette_shift);
            }
        }
    }
    colors
}

/// Deterministic two-domain shape dataset. Shape layouts depend only on
/// (seed, image index); the domain selects the palette, so the domain gap is
/// purely an appearance shift.
pub fn generate_dataset(spec: &DatasetSpec, domain: Domain) -> Result<Vec<(Image, LabelMap)>> {
    spec.validate()?;
    let colors = palette(spec, domain);
    let size = spec.size;
    let mut out = Vec::with_capacity(spec.images);
    for i in 0..spec.images {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(1 + i as u64);
        let mut img = Image::filled(size, size, colors[0]);
        let mut labels = LabelMap::filled(size, size, spec.classes, 0)?;
        for _ in 0..spec.shapes_per_image {
            let class = rng.random_range(1..spec.classes) as u8;
            let color = colors[class as usize];
            match rng.random_range(0..3u32) {
                0 => {
                    let sw = rng.random_range(size / 8..=size / 3);
                    let sh = rng.random_range(size / 8..=size / 3);
                    let x0 = rng.random_range(0..=size - sw);
                    let y0 = rng.random_range(0..=size - sh);
                    for y in y0..y0 + sh {
                        for x in x0..x0 + sw {
                            img.set_pixel(y, x, color);
                            labels.set(y, x, class);
                        }
                    }
                }
                1 => {
                    let r = rng.random_range(size / 10..=size / 5);
                    let cx = rng.random_range(r..size - r) as i64;
                    let cy = rng.random_range(r..size - r) as i64;
                    let rr = (r * r) as i64;
                    for y in (cy - r as i64)..=(cy + r as i64) {
                        for x in (cx - r as i64)..=(cx + r as i64) {
                            if (x - cx) * (x - cx) + (y - cy) * (y - cy) <= rr {
                                img.set_pixel(y as usize, x as usize, color);
                                labels.set(y as usize, x as usize, class);
                            }
                        }
                    }
                }
                _ => {
                    let th = rng.random_range(size / 8..=size / 3);
                    let bw = rng.random_range(size / 8..=size / 3);
                    let ay = rng.random_range(0..size - th);
                    let ax = rng.random_range(0..size);
                    for dy in 0..th {
                        let half = bw * dy / th;
                        let x0 = ax.saturating_sub(half);
                        let x1 = (ax + half).min(size - 1);
                        for x in x0..=x1 {
                            img.set_pixel(ay + dy, x, color);
                            labels.set(ay + dy, x, class);
                        }
                    }
                }
            }
        }
        out.push((img, labels));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> DatasetSpec {
        DatasetSpec { seed: 7, images: 3, size: 32, classes: 5, shapes_per_image: 6, palette_shift: 40 }
    }

    #[test]
    fn background_only_when_no_shapes() {
        let s = DatasetSpec { shapes_per_image: 0, ..spec() };
        let data = generate_dataset(&s, Domain::Source).unwrap();
        let pal = palette(&s, Domain::Source);
        for (img, labels) in &data {
            assert!(labels.data.iter().all(|&v| v == 0));
            assert!((0..32 * 32).all(|i| img.pixel(i / 32, i % 32) == pal[0]));
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let a = generate_dataset(&spec(), Domain::Target).unwrap();
        let b = generate_dataset(&spec(), Domain::Target).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_shift_makes_domains_identical() {
        let s = DatasetSpec { palette_shift: 0, ..spec() };
        let src = generate_dataset(&s, Domain::Source).unwrap();
        let tgt = generate_dataset(&s, Domain::Target).unwrap();
        assert_eq!(src, tgt);
    }

    #[test]
    fn pixels_match_palette_of_label() {
        for domain in [Domain::Source, Domain::Target] {
            let pal = palette(&spec(), domain);
            for (img, labels) in generate_dataset(&spec(), domain).unwrap() {
                for y in 0..labels.height {
                    for x in 0..labels.width {
                        assert_eq!(img.pixel(y, x), pal[labels.get(y, x) as usize]);
                    }
                }
            }
        }
    }

    #[test]
    fn layouts_differ_across_images() {
        let data = generate_dataset(&spec(), Domain::Source).unwrap();
        assert_ne!(data[0].1, data[1].1);
        assert_ne!(data[1].1, data[2].1);
    }

    #[test]
    fn palette_colors_distinct() {
        let pal = palette(&spec(), Domain::Source);
        for i in 0..pal.len() {
            for j in i + 1..pal.len() {
                assert_ne!(pal[i], pal[j]);
            }
        }
    }

    #[test]
    fn invalid_spec_rejected() {
        let s = DatasetSpec { classes: 1, ..spec() };
        assert_eq!(generate_dataset(&s, Domain::Source).unwrap_err().exit_code(), 2);
        let s = DatasetSpec { size: 8, ..spec() };
        assert!(generate_dataset(&s, Domain::Source).is_err());
    }
}
