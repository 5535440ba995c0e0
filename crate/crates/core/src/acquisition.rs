use crate::error::{EsaError, Result};
use crate::raster::{ProbabilityMap, RegionMap};

/// Per-pixel nonnegative scores, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelScoreMap {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScoreMode {
    Impurity,
    Uncertainty,
    Product,
}

impl std::str::FromStr for ScoreMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "impurity" => Ok(ScoreMode::Impurity),
            "uncertainty" => Ok(ScoreMode::Uncertainty),
            "product" => Ok(ScoreMode::Product),
            other => Err(format!("unknown score mode '{other}'")),
        }
    }
}

impl std::fmt::Display for ScoreMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ScoreMode::Impurity => "impurity",
            ScoreMode::Uncertainty => "uncertainty",
            ScoreMode::Product => "product",
        })
    }
}

/// Predictive entropy −Σ_c P·ln P per pixel, natural log, 0·ln 0 = 0.
pub fn pixel_entropy(p: &ProbabilityMap) -> PixelScoreMap {
    let mut values = Vec::with_capacity(p.height * p.width);
    for px in 0..p.height * p.width {
        let row = &p.data[px * p.channels..(px + 1) * p.channels];
        let mut h = 0.0;
        for &v in row {
            if v > 0.0 {
                h -= v * v.ln();
            }
        }
        values.push(h);
    }
    PixelScoreMap { height: p.height, width: p.width, values }
}

/// 1 − max_c P per pixel; higher means less confident.
pub fn sconf_score(p: &ProbabilityMap) -> PixelScoreMap {
    let mut values = Vec::with_capacity(p.height * p.width);
    for px in 0..p.height * p.width {
        let row = &p.data[px * p.channels..(px + 1) * p.channels];
        let max = row.iter().fold(0.0f64, |m, &v| if v > m { v } else { m });
        values.push(1.0 - max);
    }
    PixelScoreMap { height: p.height, width: p.width, values }
}

fn check_dims(h1: usize, w1: usize, h2: usize, w2: usize) -> Result<()> {
    if (h1, w1) != (h2, w2) {
        return Err(EsaError::invariant(format!(
            "dimension mismatch: {h1}x{w1} vs {h2}x{w2}"
        )));
    }
    Ok(())
}

/// Arithmetic mean of pixel scores within each region.
pub fn region_mean_score(scores: &PixelScoreMap, regions: &RegionMap) -> Result<Vec<f64>> {
    check_dims(scores.height, scores.width, regions.height, regions.width)?;
    let mut sums = vec![0.0f64; regions.count];
    let mut counts = vec![0usize; regions.count];
    for (p, &r) in regions.assignment.iter().enumerate() {
        sums[r as usize] += scores.values[p];
        counts[r as usize] += 1;
    }
    Ok(sums.iter().zip(&counts).map(|(&s, &n)| s / n as f64).collect())
}

/// Region uncertainty: mean predictive entropy per region.
pub fn acquisition(p: &ProbabilityMap, regions: &RegionMap) -> Result<Vec<f64>> {
    region_mean_score(&pixel_entropy(p), regions)
}

fn argmax_class(row: &[f64]) -> usize {
    let mut best = 0usize;
    for (c, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = c;
        }
    }
    best
}

/// Entropy of the predicted-class histogram inside each region.
pub fn region_impurity(p: &ProbabilityMap, regions: &RegionMap) -> Result<Vec<f64>> {
    check_dims(p.height, p.width, regions.height, regions.width)?;
    let c = p.channels;
    let mut hist = vec![0u32; regions.count * c];
    let mut totals = vec![0u32; regions.count];
    for (px, &r) in regions.assignment.iter().enumerate() {
        let row = &p.data[px * c..(px + 1) * c];
        hist[r as usize * c + argmax_class(row)] += 1;
        totals[r as usize] += 1;
    }
    let mut out = Vec::with_capacity(regions.count);
    for r in 0..regions.count {
        let n = totals[r] as f64;
        let mut imp = 0.0;
        for &count in &hist[r * c..(r + 1) * c] {
            if count > 0 {
                let frac = count as f64 / n;
                imp -= frac * frac.ln();
            }
        }
        out.push(imp);
    }
    Ok(out)
}

/// Region scores under the chosen criterion; `product` multiplies impurity
/// and uncertainty elementwise.
pub fn combined_score(p: &ProbabilityMap, regions: &RegionMap, mode: ScoreMode) -> Result<Vec<f64>> {
    match mode {
        ScoreMode::Impurity => region_impurity(p, regions),
        ScoreMode::Uncertainty => acquisition(p, regions),
        ScoreMode::Product => {
            let imp = region_impurity(p, regions)?;
            let unc = acquisition(p, regions)?;
            Ok(imp.iter().zip(&unc).map(|(&a, &b)| a * b).collect())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::ProbabilityMap;
    use crate::testutil::{random_prob_map, random_region_map};

    const LN4: f64 = 1.3862943611198906;

    #[test]
    fn entropy_uniform_hits_ln4() {
        let p = ProbabilityMap::new(1, 1, 4, vec![0.25; 4]).unwrap();
        let h = pixel_entropy(&p);
        assert!((h.values[0] - LN4).abs() <= 1e-9, "{}", h.values[0]);
    }

    #[test]
    fn entropy_one_hot_is_zero() {
        let p = ProbabilityMap::new(1, 1, 3, vec![0.0, 1.0, 0.0]).unwrap();
        assert_eq!(pixel_entropy(&p).values[0], 0.0);
    }

    #[test]
    fn entropy_matches_scalar_sum() {
        let p = ProbabilityMap::new(1, 1, 3, vec![0.7, 0.2, 0.1]).unwrap();
        let expect = 0.8018185525433373;
        assert!((pixel_entropy(&p).values[0] - expect).abs() <= 1e-9);
    }

    #[test]
    fn entropy_bounded_by_ln_c() {
        for seed in 0..20 {
            let c = 2 + (seed as usize % 7);
            let p = random_prob_map(6, 6, c, seed);
            let h = pixel_entropy(&p);
            let lim = (c as f64).ln() + 1e-12;
            assert!(h.values.iter().all(|&v| v >= 0.0 && v <= lim));
        }
    }

    #[test]
    fn region_mean_basics() {
        let s = PixelScoreMap { height: 1, width: 3, values: vec![0.2, 0.4, 0.6] };
        let r = RegionMap::new(1, 3, 1, vec![0, 0, 0], None).unwrap();
        let m = region_mean_score(&s, &r).unwrap();
        assert!((m[0] - 0.4).abs() < 1e-12);

        let r = RegionMap::new(1, 3, 3, vec![0, 1, 2], None).unwrap();
        let m = region_mean_score(&s, &r).unwrap();
        assert_eq!(m, vec![0.2, 0.4, 0.6]);
    }

    #[test]
    fn region_mean_matches_brute_force() {
        for seed in 0..20 {
            let p = random_prob_map(8, 8, 4, seed);
            let scores = pixel_entropy(&p);
            let regions = random_region_map(8, 8, 5, seed + 100);
            let got = region_mean_score(&scores, &regions).unwrap();
            for r in 0..5u32 {
                let px: Vec<usize> = (0..64).filter(|&p| regions.assignment[p] == r).collect();
                let mean = px.iter().map(|&p| scores.values[p]).sum::<f64>() / px.len() as f64;
                assert!((got[r as usize] - mean).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn region_mean_of_constant_is_constant() {
        let s = PixelScoreMap { height: 4, width: 4, values: vec![0.31; 16] };
        let regions = random_region_map(4, 4, 5, 9);
        let m = region_mean_score(&s, &regions).unwrap();
        assert!(m.iter().all(|&v| (v - 0.31).abs() < 1e-12));
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let s = PixelScoreMap { height: 2, width: 2, values: vec![0.0; 4] };
        let r = RegionMap::new(1, 3, 1, vec![0, 0, 0], None).unwrap();
        let err = region_mean_score(&s, &r).unwrap_err();
        assert_eq!(err.exit_code(), 4);
    }

    #[test]
    fn acquisition_equals_composition_bitwise() {
        let p = random_prob_map(8, 8, 5, 7);
        let regions = random_region_map(8, 8, 6, 8);
        let a = acquisition(&p, &regions).unwrap();
        let b = region_mean_score(&pixel_entropy(&p), &regions).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn acquisition_uniform_and_onehot() {
        let uniform = ProbabilityMap::new(2, 2, 4, vec![0.25; 16]).unwrap();
        let regions = RegionMap::new(2, 2, 2, vec![0, 0, 1, 1], None).unwrap();
        for v in acquisition(&uniform, &regions).unwrap() {
            assert!((v - LN4).abs() <= 1e-9);
        }
        let mut onehot = vec![0.0; 16];
        for px in 0..4 {
            onehot[px * 4 + px % 4] = 1.0;
        }
        let onehot = ProbabilityMap::new(2, 2, 4, onehot).unwrap();
        assert_eq!(acquisition(&onehot, &regions).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn impurity_single_class_is_zero() {
        let mut data = vec![0.0; 8];
        for px in 0..4 {
            data[px * 2] = 0.9;
            data[px * 2 + 1] = 0.1;
        }
        let p = ProbabilityMap::new(2, 2, 2, data).unwrap();
        let r = RegionMap::new(2, 2, 1, vec![0; 4], None).unwrap();
        assert_eq!(region_impurity(&p, &r).unwrap(), vec![0.0]);
    }

    #[test]
    fn impurity_half_half_is_ln2() {
        let data = vec![0.9, 0.1, 0.9, 0.1, 0.1, 0.9, 0.1, 0.9];
        let p = ProbabilityMap::new(2, 2, 2, data).unwrap();
        let r = RegionMap::new(2, 2, 1, vec![0; 4], None).unwrap();
        let imp = region_impurity(&p, &r).unwrap();
        assert!((imp[0] - 2.0f64.ln()).abs() <= 1e-9);
    }

    #[test]
    fn impurity_matches_histogram_brute_force() {
        for seed in 0..20 {
            let c = 3 + seed as usize % 4;
            let p = random_prob_map(8, 8, c, seed * 3 + 1);
            let regions = random_region_map(8, 8, 6, seed * 7 + 2);
            let got = region_impurity(&p, &regions).unwrap();
            for r in 0..6u32 {
                let px: Vec<usize> = (0..64).filter(|&q| regions.assignment[q] == r).collect();
                let mut hist = vec![0usize; c];
                for &q in &px {
                    let row = &p.data[q * c..(q + 1) * c];
                    let mut best = 0;
                    for i in 1..c {
                        if row[i] > row[best] {
                            best = i;
                        }
                    }
                    hist[best] += 1;
                }
                let mut expect = 0.0;
                for &h in &hist {
                    if h > 0 {
                        let f = h as f64 / px.len() as f64;
                        expect -= f * f.ln();
                    }
                }
                assert!((got[r as usize] - expect).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn impurity_invariant_under_class_permutation() {
        let p = random_prob_map(6, 6, 4, 33);
        let regions = random_region_map(6, 6, 4, 34);
        let perm = [2usize, 0, 3, 1];
        let mut data = vec![0.0; p.data.len()];
        for px in 0..36 {
            for c in 0..4 {
                data[px * 4 + perm[c]] = p.data[px * 4 + c];
            }
        }
        let q = ProbabilityMap::new(6, 6, 4, data).unwrap();
        let a = region_impurity(&p, &regions).unwrap();
        let b = region_impurity(&q, &regions).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() <= 1e-12);
        }
    }

    #[test]
    fn sconf_basics() {
        let p = ProbabilityMap::new(1, 2, 4, vec![1.0, 0.0, 0.0, 0.0, 0.25, 0.25, 0.25, 0.25]).unwrap();
        let s = sconf_score(&p);
        assert_eq!(s.values[0], 0.0);
        assert!((s.values[1] - 0.75).abs() <= 1e-12);
    }

    #[test]
    fn sconf_matches_scalar_oracle() {
        let p = random_prob_map(5, 5, 6, 77);
        let s = sconf_score(&p);
        for px in 0..25 {
            let row = &p.data[px * 6..(px + 1) * 6];
            let mut max = row[0];
            for &v in row {
                if v > max {
                    max = v;
                }
            }
            assert!((s.values[px] - (1.0 - max)).abs() <= 1e-9);
        }
    }

    #[test]
    fn combined_modes() {
        let p = random_prob_map(6, 6, 3, 50);
        let regions = random_region_map(6, 6, 4, 51);
        let unc = combined_score(&p, &regions, ScoreMode::Uncertainty).unwrap();
        assert_eq!(unc, acquisition(&p, &regions).unwrap());
        let imp = combined_score(&p, &regions, ScoreMode::Impurity).unwrap();
        assert_eq!(imp, region_impurity(&p, &regions).unwrap());
        let prod = combined_score(&p, &regions, ScoreMode::Product).unwrap();
        for r in 0..4 {
            assert!((prod[r] - imp[r] * unc[r]).abs() <= 1e-12);
        }
    }

    #[test]
    fn product_with_zero_impurity_is_zero() {
        let mut data = vec![0.0; 9 * 2];
        for px in 0..9 {
            data[px * 2] = 0.6;
            data[px * 2 + 1] = 0.4;
        }
        let p = ProbabilityMap::new(3, 3, 2, data).unwrap();
        let r = RegionMap::new(3, 3, 1, vec![0; 9], None).unwrap();
        let prod = combined_score(&p, &r, ScoreMode::Product).unwrap();
        assert_eq!(prod, vec![0.0]);
    }

    #[test]
    fn scaling_preserves_region_argsort() {
        let p = random_prob_map(8, 8, 4, 90);
        let regions = random_region_map(8, 8, 7, 91);
        let base = acquisition(&p, &regions).unwrap();
        let scaled = {
            let h = pixel_entropy(&p);
            let s = PixelScoreMap {
                height: h.height,
                width: h.width,
                values: h.values.iter().map(|v| v * 3.5).collect(),
            };
            region_mean_score(&s, &regions).unwrap()
        };
        let order = |v: &[f64]| {
            let mut idx: Vec<usize> = (0..v.len()).collect();
            idx.sort_by(|&a, &b| v[b].total_cmp(&v[a]).then(a.cmp(&b)));
            idx
        };
        assert_eq!(order(&base), order(&scaled));
    }
}
