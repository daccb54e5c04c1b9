//! Masked-region preprocessing.
//!
//! A scene image hides its target object under a flat key color. Preprocessing
//! runs four steps in order:
//!
//! 1. [`extract_mask`] keys the raster into a [`BinaryMask`].
//! 2. [`largest_component`] keeps only the biggest connected region.
//! 3. [`padded_bbox`] grows that region's bounding box by a fixed margin.
//! 4. [`crop_and_refine`] crops the raster to the box and keys it again, so
//!    fragments of the object that fell outside the largest component but
//!    inside the padded box are recovered.
//!
//! [`preprocess`] chains all four and reports the intermediate statistics.

use std::fmt;
use std::str::FromStr;

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};

/// Key color painted over the hidden object in scene images.
pub const DEFAULT_MASK_COLOR: [u8; 3] = [135, 206, 235];

/// Margin added on every side of the largest component's bounding box.
pub const DEFAULT_PADDING: u32 = 10;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MaskError {
    #[error("mask has no foreground pixels")]
    EmptyMask,
    #[error("no key-colored pixel survives the crop {0}")]
    EmptyRefinedMask(BBox),
    #[error("bounding box {bbox} does not fit a {width}x{height} image")]
    InvalidBBox { bbox: BBox, width: u32, height: u32 },
    #[error("mask of {width}x{height} needs {expected} bits, got {got}")]
    LengthMismatch {
        width: u32,
        height: u32,
        expected: usize,
        got: usize,
    },
    #[error("invalid mask row {row}: {reason}")]
    BadRow { row: usize, reason: String },
}

/// Row-major boolean raster.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    width: u32,
    height: u32,
    bits: Vec<bool>,
}

impl BinaryMask {
    /// All-false mask.
    pub fn new(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            bits: vec![false; width as usize * height as usize],
        }
    }

    pub fn from_bits(width: u32, height: u32, bits: Vec<bool>) -> Result<Self, MaskError> {
        let expected = width as usize * height as usize;
        if bits.len() != expected {
            return Err(MaskError::LengthMismatch {
                width,
                height,
                expected,
                got: bits.len(),
            });
        }
        Ok(Self { width, height, bits })
    }

    /// Builds a mask from rows of `'1'`/`'0'` characters, top row first.
    ///
    /// ```
    /// use samurai::mask::BinaryMask;
    ///
    /// let m = BinaryMask::from_rows(&["110", "010", "001"]).unwrap();
    /// assert_eq!((m.width(), m.height(), m.popcount()), (3, 3, 4));
    /// assert!(m.get(1, 1));
    /// ```
    pub fn from_rows<S: AsRef<str>>(rows: &[S]) -> Result<Self, MaskError> {
        let width = rows.first().map_or(0, |r| r.as_ref().chars().count());
        let mut bits = Vec::with_capacity(width * rows.len());
        for (row, line) in rows.iter().enumerate() {
            let line = line.as_ref();
            if line.chars().count() != width {
                return Err(MaskError::BadRow {
                    row,
                    reason: format!("expected {width} columns"),
                });
            }
            for c in line.chars() {
                match c {
                    '1' => bits.push(true),
                    '0' => bits.push(false),
                    other => {
                        return Err(MaskError::BadRow {
                            row,
                            reason: format!("unexpected character {other:?}"),
                        })
                    }
                }
            }
        }
        Self::from_bits(width as u32, rows.len() as u32, bits)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    #[inline]
    fn index(&self, x: u32, y: u32) -> usize {
        y as usize * self.width as usize + x as usize
    }

    /// Panics if `(x, y)` is out of bounds.
    pub fn get(&self, x: u32, y: u32) -> bool {
        assert!(x < self.width && y < self.height, "pixel out of bounds");
        self.bits[self.index(x, y)]
    }

    pub fn set(&mut self, x: u32, y: u32, value: bool) {
        assert!(x < self.width && y < self.height, "pixel out of bounds");
        let i = self.index(x, y);
        self.bits[i] = value;
    }

    pub fn popcount(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    /// Row-major indices of the true pixels, ascending.
    pub fn true_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.bits.iter().enumerate().filter_map(|(i, b)| b.then_some(i))
    }

    /// Tight bounds of the true pixels, or `None` for an all-false mask.
    pub fn tight_bbox(&self) -> Option<BBox> {
        let w = self.width as usize;
        let mut it = self.true_indices();
        let first = it.next()?;
        let (mut x0, mut y0) = (first % w, first / w);
        let (mut x1, mut y1) = (x0, y0);
        for i in it {
            let (x, y) = (i % w, i / w);
            x0 = x0.min(x);
            x1 = x1.max(x);
            y0 = y0.min(y);
            y1 = y1.max(y);
        }
        Some(BBox {
            x0: x0 as u32,
            y0: y0 as u32,
            x1: x1 as u32 + 1,
            y1: y1 as u32 + 1,
        })
    }

    /// True iff every true pixel of `self` is also true in `other`.
    pub fn is_subset_of(&self, other: &BinaryMask) -> bool {
        self.width == other.width
            && self.height == other.height
            && self.bits.iter().zip(&other.bits).all(|(a, b)| !a || *b)
    }
}

/// Half-open pixel rectangle: `x0..x1` by `y0..y1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BBox {
    pub x0: u32,
    pub y0: u32,
    pub x1: u32,
    pub y1: u32,
}

impl BBox {
    pub fn width(&self) -> u32 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> u32 {
        self.y1 - self.y0
    }

    pub fn contains(&self, other: &BBox) -> bool {
        self.x0 <= other.x0 && self.y0 <= other.y0 && self.x1 >= other.x1 && self.y1 >= other.y1
    }

    fn fits(&self, width: u32, height: u32) -> bool {
        self.x0 < self.x1 && self.y0 < self.y1 && self.x1 <= width && self.y1 <= height
    }
}

impl fmt::Display for BBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})-({},{})", self.x0, self.y0, self.x1, self.y1)
    }
}

/// Key color plus a per-channel absolute tolerance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskKey {
    pub r: u8,
    pub g: u8,
    pub b: u8,
    pub tolerance: u8,
}

impl MaskKey {
    pub const fn new(color: [u8; 3], tolerance: u8) -> Self {
        Self {
            r: color[0],
            g: color[1],
            b: color[2],
            tolerance,
        }
    }

    pub fn color(&self) -> [u8; 3] {
        [self.r, self.g, self.b]
    }

    /// Max-channel absolute difference against the key, compared to the tolerance.
    #[inline]
    pub fn matches(&self, px: &Rgb<u8>) -> bool {
        let [r, g, b] = px.0;
        r.abs_diff(self.r) <= self.tolerance
            && g.abs_diff(self.g) <= self.tolerance
            && b.abs_diff(self.b) <= self.tolerance
    }
}

impl Default for MaskKey {
    fn default() -> Self {
        Self::new(DEFAULT_MASK_COLOR, 0)
    }
}

/// Pixel adjacency used by connected-component labeling.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Connectivity {
    #[serde(rename = "4")]
    Four,
    #[default]
    #[serde(rename = "8")]
    Eight,
}

impl FromStr for Connectivity {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "4" => Ok(Self::Four),
            "8" => Ok(Self::Eight),
            other => Err(format!("connectivity must be 4 or 8, got {other:?}")),
        }
    }
}

impl fmt::Display for Connectivity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Four => "4",
            Self::Eight => "8",
        })
    }
}

pub fn extract_mask(image: &RgbImage, key: &MaskKey) -> BinaryMask {
    let bits = image.pixels().map(|px| key.matches(px)).collect();
    BinaryMask {
        width: image.width(),
        height: image.height(),
        bits,
    }
}

/// One connected region of true pixels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Component {
    /// 1-based position in the sorted component list.
    pub label: u32,
    /// Row-major pixel indices, ascending.
    pub pixels: Vec<usize>,
    pub size: usize,
}

impl Component {
    pub fn min_index(&self) -> usize {
        self.pixels[0]
    }
}

fn find(parent: &mut [u32], mut x: u32) -> u32 {
    while parent[x as usize] != x {
        let next = parent[x as usize];
        parent[x as usize] = parent[next as usize];
        x = next;
    }
    x
}

fn union(parent: &mut [u32], a: u32, b: u32) -> u32 {
    let ra = find(parent, a);
    let rb = find(parent, b);
    let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
    parent[hi as usize] = lo;
    lo
}

/// Two-pass union-find labeling.
///
/// The result is sorted by size descending, then by smallest row-major pixel
/// index ascending, and labels are assigned 1.. in that order.
pub fn connected_components(mask: &BinaryMask, connectivity: Connectivity) -> Vec<Component> {
    let w = mask.width as usize;
    let h = mask.height as usize;
    let mut labels = vec![0u32; w * h];
    // parent[0] is the background sentinel.
    let mut parent: Vec<u32> = vec![0];

    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if !mask.bits[i] {
                continue;
            }
            let mut neighbours = [0u32; 4];
            let mut n = 0;
            if x > 0 && labels[i - 1] != 0 {
                neighbours[n] = labels[i - 1];
                n += 1;
            }
            if y > 0 {
                let up = i - w;
                if labels[up] != 0 {
                    neighbours[n] = labels[up];
                    n += 1;
                }
                if connectivity == Connectivity::Eight {
                    if x > 0 && labels[up - 1] != 0 {
                        neighbours[n] = labels[up - 1];
                        n += 1;
                    }
                    if x + 1 < w && labels[up + 1] != 0 {
                        neighbours[n] = labels[up + 1];
                        n += 1;
                    }
                }
            }
            labels[i] = if n == 0 {
                let l = parent.len() as u32;
                parent.push(l);
                l
            } else {
                let mut root = neighbours[0];
                for &other in &neighbours[1..n] {
                    root = union(&mut parent, root, other);
                }
                find(&mut parent, root)
            };
        }
    }

    // Second pass: resolve roots, gathering pixels in raster order.
    let mut slot_of_root = vec![usize::MAX; parent.len()];
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for (i, &l) in labels.iter().enumerate() {
        if l == 0 {
            continue;
        }
        let root = find(&mut parent, l) as usize;
        if slot_of_root[root] == usize::MAX {
            slot_of_root[root] = groups.len();
            groups.push(Vec::new());
        }
        groups[slot_of_root[root]].push(i);
    }

    // Groups are created in order of their first pixel, so a stable sort on
    // size alone yields the (size desc, min index asc) order.
    groups.sort_by_key(|g| std::cmp::Reverse(g.len()));
    groups
        .into_iter()
        .enumerate()
        .map(|(k, pixels)| Component {
            label: k as u32 + 1,
            size: pixels.len(),
            pixels,
        })
        .collect()
}

pub fn largest_component(mask: &BinaryMask, connectivity: Connectivity) -> Result<BinaryMask, MaskError> {
    let components = connected_components(mask, connectivity);
    let first = components.first().ok_or(MaskError::EmptyMask)?;
    let mut out = BinaryMask::new(mask.width, mask.height);
    for &i in &first.pixels {
        out.bits[i] = true;
    }
    Ok(out)
}

/// Tight bounds of the true pixels grown by `padding` and clamped to the mask.
pub fn padded_bbox(mask: &BinaryMask, padding: u32) -> Result<BBox, MaskError> {
    let tight = mask.tight_bbox().ok_or(MaskError::EmptyMask)?;
    Ok(BBox {
        x0: tight.x0.saturating_sub(padding),
        y0: tight.y0.saturating_sub(padding),
        x1: tight.x1.saturating_add(padding).min(mask.width),
        y1: tight.y1.saturating_add(padding).min(mask.height),
    })
}

/// The padded crop of a scene and its re-keyed mask.
#[derive(Debug, Clone, PartialEq)]
pub struct CroppedQuery {
    pub scene_id: String,
    pub crop_rgb: RgbImage,
    pub refined_mask: BinaryMask,
}

pub fn crop_and_refine(scene_id: &str, image: &RgbImage, bbox: BBox, key: &MaskKey) -> Result<CroppedQuery, MaskError> {
    if !bbox.fits(image.width(), image.height()) {
        return Err(MaskError::InvalidBBox {
            bbox,
            width: image.width(),
            height: image.height(),
        });
    }
    let crop_rgb = image::imageops::crop_imm(image, bbox.x0, bbox.y0, bbox.width(), bbox.height()).to_image();
    let refined_mask = extract_mask(&crop_rgb, key);
    if refined_mask.popcount() == 0 {
        return Err(MaskError::EmptyRefinedMask(bbox));
    }
    Ok(CroppedQuery {
        scene_id: scene_id.to_owned(),
        crop_rgb,
        refined_mask,
    })
}

/// White foreground on black background, 3 channels.
pub fn render_silhouette(mask: &BinaryMask) -> RgbImage {
    RgbImage::from_fn(mask.width, mask.height, |x, y| {
        if mask.get(x, y) {
            Rgb([255, 255, 255])
        } else {
            Rgb([0, 0, 0])
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreprocessParams {
    pub key: MaskKey,
    pub padding: u32,
    pub connectivity: Connectivity,
}

impl Default for PreprocessParams {
    fn default() -> Self {
        Self {
            key: MaskKey::default(),
            padding: DEFAULT_PADDING,
            connectivity: Connectivity::Eight,
        }
    }
}

/// Statistics recorded alongside each preprocessed scene.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreprocessReport {
    pub scene_id: String,
    pub image_width: u32,
    pub image_height: u32,
    pub bbox: BBox,
    /// Sizes of every connected component in the keyed mask, largest first.
    pub component_sizes: Vec<usize>,
    pub mask_popcount: usize,
    pub largest_popcount: usize,
    pub refined_popcount: usize,
    pub params: PreprocessParams,
}

/// Runs the four preprocessing steps on one scene.
///
/// ```
/// use image::{Rgb, RgbImage};
/// use samurai::mask::{preprocess, PreprocessParams, DEFAULT_MASK_COLOR};
///
/// let mut img = RgbImage::from_pixel(100, 100, Rgb([10, 10, 10]));
/// for y in 20..30 {
///     for x in 20..30 {
///         img.put_pixel(x, y, Rgb(DEFAULT_MASK_COLOR));
///     }
/// }
/// let (query, report) = preprocess("s1", &img, &PreprocessParams::default()).unwrap();
/// assert_eq!((report.bbox.x0, report.bbox.y0, report.bbox.x1, report.bbox.y1), (10, 10, 40, 40));
/// assert_eq!(query.refined_mask.popcount(), 100);
/// ```
pub fn preprocess(
    scene_id: &str,
    image: &RgbImage,
    params: &PreprocessParams,
) -> Result<(CroppedQuery, PreprocessReport), MaskError> {
    let mask = extract_mask(image, &params.key);
    let components = connected_components(&mask, params.connectivity);
    let largest = largest_component(&mask, params.connectivity)?;
    let bbox = padded_bbox(&largest, params.padding)?;
    let query = crop_and_refine(scene_id, image, bbox, &params.key)?;
    let report = PreprocessReport {
        scene_id: scene_id.to_owned(),
        image_width: image.width(),
        image_height: image.height(),
        bbox,
        component_sizes: components.iter().map(|c| c.size).collect(),
        mask_popcount: mask.popcount(),
        largest_popcount: largest.popcount(),
        refined_popcount: query.refined_mask.popcount(),
        params: *params,
    };
    Ok((query, report))
}
