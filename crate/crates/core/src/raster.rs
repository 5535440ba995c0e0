use std::path::Path;

use crate::error::{EsaError, Result};

/// Label value marking pixels without a class assignment.
pub const IGNORE: u8 = 255;

pub const ROW_SUM_TOL: f64 = 1e-5;

/// H×W 8-bit sRGB raster, row-major, channel interleaved.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    pub height: usize,
    pub width: usize,
    pub data: Vec<u8>,
}

impl Image {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(EsaError::invariant("image dimensions must be at least 1x1"));
        }
        if data.len() != height * width * 3 {
            return Err(EsaError::invariant(format!(
                "image data length {} does not match {}x{}x3",
                data.len(),
                height,
                width
            )));
        }
        Ok(Image { height, width, data })
    }

    pub fn filled(height: usize, width: usize, rgb: [u8; 3]) -> Self {
        let mut data = Vec::with_capacity(height * width * 3);
        for _ in 0..height * width {
            data.extend_from_slice(&rgb);
        }
        Image { height, width, data }
    }

    #[inline]
    pub fn pixel(&self, y: usize, x: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set_pixel(&mut self, y: usize, x: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }
}

/// H×W class ids in [0, classes) with IGNORE (255) passing through.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    pub height: usize,
    pub width: usize,
    pub classes: usize,
    pub data: Vec<u8>,
}

impl LabelMap {
    pub fn new(height: usize, width: usize, classes: usize, data: Vec<u8>) -> Result<Self> {
        check_labels(height, width, classes, &data).map_err(EsaError::invariant)?;
        Ok(LabelMap { height, width, classes, data })
    }

    pub fn filled(height: usize, width: usize, classes: usize, value: u8) -> Result<Self> {
        LabelMap::new(height, width, classes, vec![value; height * width])
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> u8 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, value: u8) {
        self.data[y * self.width + x] = value;
    }

    pub fn labeled_pixels(&self) -> usize {
        self.data.iter().filter(|&&v| v != IGNORE).count()
    }
}

fn check_labels(height: usize, width: usize, classes: usize, data: &[u8]) -> std::result::Result<(), String> {
    if height == 0 || width == 0 {
        return Err("label map dimensions must be at least 1x1".into());
    }
    if classes == 0 || classes > 254 {
        return Err(format!("class count {classes} outside [1,254]"));
    }
    if data.len() != height * width {
        return Err(format!("label data length {} does not match {height}x{width}", data.len()));
    }
    for (i, &v) in data.iter().enumerate() {
        if v != IGNORE && v as usize >= classes {
            return Err(format!(
                "invalid class id {v} for {classes} classes at pixel ({}, {})",
                i / width,
                i % width
            ));
        }
    }
    Ok(())
}

/// H×W×C softmax probabilities, row-major, channel fastest. Stored as f64,
/// serialized as f32.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityMap {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl ProbabilityMap {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        check_probs(height, width, channels, &data).map_err(EsaError::invariant)?;
        Ok(ProbabilityMap { height, width, channels, data })
    }

    #[inline]
    pub fn row(&self, y: usize, x: usize) -> &[f64] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }
}

fn check_probs(height: usize, width: usize, channels: usize, data: &[f64]) -> std::result::Result<(), String> {
    if height == 0 || width == 0 || channels == 0 {
        return Err("probability map dimensions must be at least 1x1x1".into());
    }
    if data.len() != height * width * channels {
        return Err(format!(
            "probability data length {} does not match {height}x{width}x{channels}",
            data.len()
        ));
    }
    for (i, &v) in data.iter().enumerate() {
        if !(0.0..=1.0).contains(&v) {
            let p = i / channels;
            return Err(format!(
                "probability {v} at ({}, {}, {}) outside [0,1]",
                p / width,
                p % width,
                i % channels
            ));
        }
    }
    let mut worst = (0usize, 0usize, 0.0f64, 0.0f64);
    for p in 0..height * width {
        let sum: f64 = data[p * channels..(p + 1) * channels].iter().sum();
        let dev = (sum - 1.0).abs();
        if dev > worst.3 {
            worst = (p / width, p % width, sum, dev);
        }
    }
    if worst.3 > ROW_SUM_TOL {
        return Err(format!(
            "non-normalized row ({}, {}) sums to {}",
            worst.0, worst.1, worst.2
        ));
    }
    Ok(())
}

/// H×W partition into regions 0..count, with optional per-region scores in [0,1].
#[derive(Debug, Clone, PartialEq)]
pub struct RegionMap {
    pub height: usize,
    pub width: usize,
    pub count: usize,
    pub assignment: Vec<u32>,
    pub scores: Option<Vec<f32>>,
}

impl RegionMap {
    pub fn new(
        height: usize,
        width: usize,
        count: usize,
        assignment: Vec<u32>,
        scores: Option<Vec<f32>>,
    ) -> Result<Self> {
        check_regions(height, width, count, &assignment, scores.as_deref())
            .map_err(EsaError::invariant)?;
        Ok(RegionMap { height, width, count, assignment, scores })
    }

    #[inline]
    pub fn id(&self, y: usize, x: usize) -> u32 {
        self.assignment[y * self.width + x]
    }

    /// Pixel indices of every region, indexed by region id.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut m = vec![Vec::new(); self.count];
        for (i, &r) in self.assignment.iter().enumerate() {
            m[r as usize].push(i);
        }
        m
    }

    pub fn areas(&self) -> Vec<usize> {
        let mut a = vec![0usize; self.count];
        for &r in &self.assignment {
            a[r as usize] += 1;
        }
        a
    }
}

fn check_regions(
    height: usize,
    width: usize,
    count: usize,
    assignment: &[u32],
    scores: Option<&[f32]>,
) -> std::result::Result<(), String> {
    if height == 0 || width == 0 {
        return Err("region map dimensions must be at least 1x1".into());
    }
    if assignment.len() != height * width {
        return Err(format!(
            "region assignment length {} does not match {height}x{width}",
            assignment.len()
        ));
    }
    if count == 0 {
        return Err("region count must be at least 1".into());
    }
    let mut seen = vec![false; count];
    for (i, &r) in assignment.iter().enumerate() {
        if r as usize >= count {
            return Err(format!(
                "region id {r} >= count {count} at pixel ({}, {})",
                i / width,
                i % width
            ));
        }
        seen[r as usize] = true;
    }
    if let Some(miss) = seen.iter().position(|&s| !s) {
        return Err(format!("missing region id {miss}"));
    }
    if let Some(s) = scores {
        if s.len() != count {
            return Err(format!("scores length {} does not match count {count}", s.len()));
        }
        for (r, &v) in s.iter().enumerate() {
            if !(0.0..=1.0).contains(&v) {
                return Err(format!("score {v} for region {r} outside [0,1]"));
            }
        }
    }
    Ok(())
}

pub(crate) struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    pub(crate) fn new(data: &'a [u8], path: &'a Path) -> Self {
        Cursor { data, pos: 0, path }
    }

    fn err(&self, offset: usize, message: impl Into<String>) -> EsaError {
        EsaError::format(self.path, offset as u64, message)
    }

    fn skip_space(&mut self) {
        while self.pos < self.data.len() {
            match self.data[self.pos] {
                b' ' | b'\t' | b'\r' | b'\n' => self.pos += 1,
                b'#' => {
                    while self.pos < self.data.len() && self.data[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                _ => break,
            }
        }
    }

    fn ascii_u32(&mut self, what: &str) -> Result<(u32, usize)> {
        self.skip_space();
        let start = self.pos;
        while self.pos < self.data.len() && self.data[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if self.pos == start {
            return Err(self.err(start, format!("malformed header: expected {what}")));
        }
        let tok = std::str::from_utf8(&self.data[start..self.pos]).unwrap();
        let v = tok
            .parse::<u32>()
            .map_err(|_| self.err(start, format!("malformed header: bad {what} '{tok}'")))?;
        Ok((v, start))
    }

    fn single_space(&mut self) -> Result<()> {
        if self.pos >= self.data.len()
            || !matches!(self.data[self.pos], b' ' | b'\t' | b'\r' | b'\n')
        {
            return Err(self.err(self.pos, "malformed header: expected whitespace before payload"));
        }
        self.pos += 1;
        Ok(())
    }

    pub(crate) fn payload(&mut self, len: usize, what: &str) -> Result<&'a [u8]> {
        if self.data.len() - self.pos < len {
            return Err(self.err(self.data.len(), format!("truncated payload: {what}")));
        }
        let out = &self.data[self.pos..self.pos + len];
        self.pos += len;
        Ok(out)
    }

    pub(crate) fn finish(&self) -> Result<()> {
        if self.pos != self.data.len() {
            return Err(self.err(self.pos, "trailing data after payload"));
        }
        Ok(())
    }

    pub(crate) fn le_u32(&mut self, what: &str) -> Result<u32> {
        let b = self.payload(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    pub(crate) fn magic(&mut self, expect: &[u8; 4]) -> Result<()> {
        let got = self.payload(4, "magic")?;
        if got != expect {
            return Err(self.err(0, format!("bad magic: expected {:?}", std::str::from_utf8(expect).unwrap())));
        }
        Ok(())
    }

    pub(crate) fn version(&mut self, expect: u32) -> Result<()> {
        let off = self.pos;
        let v = self.le_u32("version")?;
        if v != expect {
            return Err(self.err(off, format!("unsupported version {v}, expected {expect}")));
        }
        Ok(())
    }
}

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| EsaError::io(path, e))
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| EsaError::io(path, e))
}

fn pnm_header(path: &Path, cur: &mut Cursor, magic: &[u8; 2]) -> Result<(usize, usize)> {
    let m = cur.payload(2, "magic")?;
    if m != magic {
        return Err(EsaError::format(
            path,
            0,
            format!("bad magic: expected {}", std::str::from_utf8(magic).unwrap()),
        ));
    }
    let (w, _) = cur.ascii_u32("width")?;
    let (h, _) = cur.ascii_u32("height")?;
    let (maxval, off) = cur.ascii_u32("maxval")?;
    if maxval != 255 {
        return Err(cur.err(off, format!("depth {maxval} unsupported, expected 255")));
    }
    if w == 0 || h == 0 {
        return Err(cur.err(2, "zero image dimension"));
    }
    cur.single_space()?;
    Ok((h as usize, w as usize))
}

/// Reads a binary PPM (P6, maxval 255).
pub fn read_image(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let bytes = read_file(path)?;
    let mut cur = Cursor::new(&bytes, path);
    let (h, w) = pnm_header(path, &mut cur, b"P6")?;
    let payload = cur.payload(h * w * 3, "pixel data")?.to_vec();
    cur.finish()?;
    Image::new(h, w, payload)
}

/// Writes a binary PPM (P6, maxval 255).
pub fn write_image(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    let mut bytes = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    bytes.extend_from_slice(&img.data);
    write_file(path.as_ref(), &bytes)
}

/// Reads a binary PGM (P5, maxval 255) as a label map over `classes` classes.
pub fn read_label_map(path: impl AsRef<Path>, classes: usize) -> Result<LabelMap> {
    let path = path.as_ref();
    let bytes = read_file(path)?;
    let mut cur = Cursor::new(&bytes, path);
    let (h, w) = pnm_header(path, &mut cur, b"P5")?;
    let payload_off = cur.pos;
    let payload = cur.payload(h * w, "label data")?.to_vec();
    cur.finish()?;
    if classes == 0 || classes > 254 {
        return Err(EsaError::config("classes", format!("class count {classes} outside [1,254]")));
    }
    for (i, &v) in payload.iter().enumerate() {
        if v != IGNORE && v as usize >= classes {
            return Err(EsaError::format(
                path,
                (payload_off + i) as u64,
                format!("invalid class id {v} for {classes} classes"),
            ));
        }
    }
    LabelMap::new(h, w, classes, payload)
}

/// Writes a label map as binary PGM (P5, maxval 255).
pub fn write_label_map(labels: &LabelMap, path: impl AsRef<Path>) -> Result<()> {
    let mut bytes = format!("P5\n{} {}\n255\n", labels.width, labels.height).into_bytes();
    bytes.extend_from_slice(&labels.data);
    write_file(path.as_ref(), &bytes)
}

/// Reads an ESAT probability tensor: magic "ESAT", u32-LE version 1, height,
/// width, channels, then H·W·C f32-LE values, channel index fastest.
pub fn read_prob_map(path: impl AsRef<Path>) -> Result<ProbabilityMap> {
    let path = path.as_ref();
    let bytes = read_file(path)?;
    let mut cur = Cursor::new(&bytes, path);
    cur.magic(b"ESAT")?;
    cur.version(1)?;
    let h = cur.le_u32("height")? as usize;
    let w = cur.le_u32("width")? as usize;
    let c = cur.le_u32("channels")? as usize;
    let n = h
        .checked_mul(w)
        .and_then(|x| x.checked_mul(c))
        .ok_or_else(|| cur.err(8, "dimension overflow"))?;
    let payload = cur.payload(n * 4, "probability data")?;
    cur.finish()?;
    let data: Vec<f64> = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
        .collect();
    check_probs(h, w, c, &data).map_err(|m| EsaError::format(path, 20, m))?;
    Ok(ProbabilityMap { height: h, width: w, channels: c, data })
}

/// Writes an ESAT probability tensor. Values are stored as f32.
pub fn write_prob_map(p: &ProbabilityMap, path: impl AsRef<Path>) -> Result<()> {
    let mut bytes = Vec::with_capacity(20 + p.data.len() * 4);
    bytes.extend_from_slice(b"ESAT");
    bytes.extend_from_slice(&1u32.to_le_bytes());
    bytes.extend_from_slice(&(p.height as u32).to_le_bytes());
    bytes.extend_from_slice(&(p.width as u32).to_le_bytes());
    bytes.extend_from_slice(&(p.channels as u32).to_le_bytes());
    for &v in &p.data {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    write_file(path.as_ref(), &bytes)
}

/// Reads an ESAR region map: magic "ESAR", u32-LE version 1, height, width,
/// count, u8 has_scores, then H·W u32-LE region ids, then count f32-LE scores
/// when has_scores is 1.
pub fn read_region_map(path: impl AsRef<Path>) -> Result<RegionMap> {
    let path = path.as_ref();
    let bytes = read_file(path)?;
    let mut cur = Cursor::new(&bytes, path);
    cur.magic(b"ESAR")?;
    cur.version(1)?;
    let h = cur.le_u32("height")? as usize;
    let w = cur.le_u32("width")? as usize;
    let count = cur.le_u32("count")? as usize;
    let flag_off = cur.pos;
    let has_scores = cur.payload(1, "has_scores")?[0];
    if has_scores > 1 {
        return Err(cur.err(flag_off, format!("has_scores must be 0 or 1, got {has_scores}")));
    }
    let n = h.checked_mul(w).ok_or_else(|| cur.err(8, "dimension overflow"))?;
    let ids_off = cur.pos;
    let ids: Vec<u32> = cur
        .payload(n * 4, "region ids")?
        .chunks_exact(4)
        .map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    let scores = if has_scores == 1 {
        Some(
            cur.payload(count * 4, "region scores")?
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect::<Vec<f32>>(),
        )
    } else {
        None
    };
    cur.finish()?;
    check_regions(h, w, count, &ids, scores.as_deref())
        .map_err(|m| EsaError::format(path, ids_off as u64, m))?;
    Ok(RegionMap { height: h, width: w, count, assignment: ids, scores })
}

/// Writes an ESAR region map.
pub fn write_region_map(r: &RegionMap, path: impl AsRef<Path>) -> Result<()> {
    let mut bytes = Vec::with_capacity(17 + r.assignment.len() * 4);
    bytes.extend_from_slice(b"ESAR");
    bytes.extend_from_slice(&1u32.to_le_bytes());
    bytes.extend_from_slice(&(r.height as u32).to_le_bytes());
    bytes.extend_from_slice(&(r.width as u32).to_le_bytes());
    bytes.extend_from_slice(&(r.count as u32).to_le_bytes());
    bytes.push(r.scores.is_some() as u8);
    for &id in &r.assignment {
        bytes.extend_from_slice(&id.to_le_bytes());
    }
    if let Some(scores) = &r.scores {
        for &s in scores {
            bytes.extend_from_slice(&s.to_le_bytes());
        }
    }
    write_file(path.as_ref(), &bytes)
}
