//! Bounding-box arithmetic in image pixel space.
//!
//! Boxes use continuous corner coordinates: a box `(x1, y1, x2, y2)` covers
//! the half-open region `[x1, x2) x [y1, y2)` and its area is
//! `(x2 - x1) * (y2 - y1)`.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Height in pixels of one "page" of a tall webpage screenshot.
pub const DEFAULT_PAGE_HEIGHT: u32 = 980;
/// Capture viewport width for webpage screenshots.
pub const CAPTURE_WIDTH: u32 = 980;
/// Screenshots are truncated to four pages.
pub const CAPTURE_MAX_HEIGHT: u32 = 3920;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeomError {
    #[error("invalid box ({x1}, {y1}, {x2}, {y2}): {reason}")]
    InvalidBox {
        x1: f64,
        y1: f64,
        x2: f64,
        y2: f64,
        reason: &'static str,
    },
    #[error("box does not overlap the {width}x{height} image")]
    NoOverlap { width: u32, height: u32 },
    #[error("image dimensions must be non-zero (got {width}x{height})")]
    ZeroDims { width: u32, height: u32 },
    #[error("box {inner} is not contained in {outer}")]
    NotContained { inner: BBox, outer: BBox },
}

/// Unvalidated rectangle, e.g. coordinates straight out of a model generation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl Rect {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Self {
        Self { x1, y1, x2, y2 }
    }
}

/// Axis-aligned evidence box with top-left `(x1, y1)` and bottom-right `(x2, y2)`.
///
/// Construction rejects zero-area, inverted, negative and non-finite boxes,
/// so every `BBox` in circulation has positive area.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    x1: f64,
    y1: f64,
    x2: f64,
    y2: f64,
}

impl BBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self, GeomError> {
        let invalid = |reason| GeomError::InvalidBox {
            x1,
            y1,
            x2,
            y2,
            reason,
        };
        if ![x1, y1, x2, y2].iter().all(|v| v.is_finite()) {
            return Err(invalid("non-finite coordinate"));
        }
        if x1 < 0.0 || y1 < 0.0 {
            return Err(invalid("negative coordinate"));
        }
        if x1 >= x2 || y1 >= y2 {
            return Err(invalid("zero or negative extent"));
        }
        Ok(Self { x1, y1, x2, y2 })
    }

    pub fn x1(&self) -> f64 {
        self.x1
    }
    pub fn y1(&self) -> f64 {
        self.y1
    }
    pub fn x2(&self) -> f64 {
        self.x2
    }
    pub fn y2(&self) -> f64 {
        self.y2
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x1 + self.x2) / 2.0, (self.y1 + self.y2) / 2.0)
    }

    pub fn as_rect(&self) -> Rect {
        Rect::new(self.x1, self.y1, self.x2, self.y2)
    }

    /// `true` when `other` lies entirely within `self` (shared edges allowed).
    pub fn contains(&self, other: &BBox) -> bool {
        self.x1 <= other.x1 && self.y1 <= other.y1 && self.x2 >= other.x2 && self.y2 >= other.y2
    }

    pub fn contains_point(&self, x: f64, y: f64) -> bool {
        x >= self.x1 && x < self.x2 && y >= self.y1 && y < self.y2
    }

    /// Area of the overlap with `other`; zero when disjoint or touching.
    pub fn intersection_area(&self, other: &BBox) -> f64 {
        let w = self.x2.min(other.x2) - self.x1.max(other.x1);
        let h = self.y2.min(other.y2) - self.y1.max(other.y1);
        if w <= 0.0 || h <= 0.0 {
            0.0
        } else {
            w * h
        }
    }

    pub fn within(&self, dims: &ImageDims) -> bool {
        self.x2 <= dims.width as f64 && self.y2 <= dims.height as f64
    }

    /// Renders as `[(x1, y1), (x2, y2)]`, the form used in prompts and targets.
    pub fn to_corner_string(&self) -> String {
        format!("[({}, {}), ({}, {})]", self.x1, self.y1, self.x2, self.y2)
    }
}

impl fmt::Display for BBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_corner_string())
    }
}

// JSON form is [[x1, y1], [x2, y2]].
impl Serialize for BBox {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        [[self.x1, self.y1], [self.x2, self.y2]].serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for BBox {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let [[x1, y1], [x2, y2]] = <[[f64; 2]; 2]>::deserialize(deserializer)?;
        BBox::new(x1, y1, x2, y2).map_err(serde::de::Error::custom)
    }
}

/// Box in fractions of image width/height.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormBBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageDims {
    pub width: u32,
    pub height: u32,
    #[serde(default = "default_page_height")]
    pub page_height: u32,
}

fn default_page_height() -> u32 {
    DEFAULT_PAGE_HEIGHT
}

impl ImageDims {
    pub fn new(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            page_height: DEFAULT_PAGE_HEIGHT,
        }
    }

    pub fn with_page_height(mut self, page_height: u32) -> Self {
        self.page_height = page_height;
        self
    }

    fn check_nonzero(&self) -> Result<(), GeomError> {
        if self.width == 0 || self.height == 0 {
            return Err(GeomError::ZeroDims {
                width: self.width,
                height: self.height,
            });
        }
        Ok(())
    }

    /// The whole image as a box.
    pub fn full_box(&self) -> Result<BBox, GeomError> {
        self.check_nonzero()?;
        BBox::new(0.0, 0.0, self.width as f64, self.height as f64)
    }
}

/// Retained sub-region of an image for crop augmentation.
pub type CropRect = BBox;

/// Intersection over union. Exact on the continuous-area convention.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection_area(b);
    if inter == 0.0 {
        return 0.0;
    }
    if a == b {
        return 1.0;
    }
    inter / (a.area() + b.area() - inter)
}

/// Clamps a rectangle to `[0, width] x [0, height]`.
pub fn clip(r: Rect, dims: &ImageDims) -> Result<BBox, GeomError> {
    dims.check_nonzero()?;
    let (w, h) = (dims.width as f64, dims.height as f64);
    if ![r.x1, r.y1, r.x2, r.y2].iter().all(|v| v.is_finite()) {
        return Err(GeomError::InvalidBox {
            x1: r.x1,
            y1: r.y1,
            x2: r.x2,
            y2: r.y2,
            reason: "non-finite coordinate",
        });
    }
    let x1 = r.x1.clamp(0.0, w);
    let y1 = r.y1.clamp(0.0, h);
    let x2 = r.x2.clamp(0.0, w);
    let y2 = r.y2.clamp(0.0, h);
    if r.x1 < r.x2 && r.y1 < r.y2 && (x1 >= x2 || y1 >= y2) {
        return Err(GeomError::NoOverlap {
            width: dims.width,
            height: dims.height,
        });
    }
    BBox::new(x1, y1, x2, y2)
}

pub fn normalize(b: &BBox, dims: &ImageDims) -> Result<NormBBox, GeomError> {
    dims.check_nonzero()?;
    let (w, h) = (dims.width as f64, dims.height as f64);
    Ok(NormBBox {
        x1: b.x1 / w,
        y1: b.y1 / h,
        x2: b.x2 / w,
        y2: b.y2 / h,
    })
}

pub fn denormalize(n: &NormBBox, dims: &ImageDims) -> Result<BBox, GeomError> {
    dims.check_nonzero()?;
    let (w, h) = (dims.width as f64, dims.height as f64);
    BBox::new(n.x1 * w, n.y1 * h, n.x2 * w, n.y2 * h)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CropConfig {
    /// Fraction of the available slack each side may lose, in `[0, 1]`.
    /// `1.0` allows cropping right up to the gold box.
    pub max_slack_fraction: f64,
}

impl Default for CropConfig {
    fn default() -> Self {
        Self {
            max_slack_fraction: 1.0,
        }
    }
}

/// Samples an integer-aligned crop that keeps `gold` intact.
///
/// Each side's margin is drawn independently and uniformly from the integer
/// slack between the gold edge and the image edge.
pub fn sample_crop<R: Rng + ?Sized>(
    dims: &ImageDims,
    gold: &BBox,
    rng: &mut R,
    cfg: &CropConfig,
) -> CropRect {
    let frac = cfg.max_slack_fraction.clamp(0.0, 1.0);
    let (w, h) = (dims.width as u64, dims.height as u64);

    let left_slack = gold.x1.floor() as u64;
    let top_slack = gold.y1.floor() as u64;
    let right_edge = (gold.x2.ceil() as u64).min(w);
    let bottom_edge = (gold.y2.ceil() as u64).min(h);
    let right_slack = w - right_edge;
    let bottom_slack = h - bottom_edge;

    let mut draw = |slack: u64| -> u64 {
        let bound = (slack as f64 * frac).floor() as u64;
        rng.random_range(0..=bound)
    };
    let x1 = draw(left_slack);
    let y1 = draw(top_slack);
    let x2 = w - draw(right_slack);
    let y2 = h - draw(bottom_slack);

    BBox::new(x1 as f64, y1 as f64, x2 as f64, y2 as f64)
        .expect("crop contains a positive-area gold box")
}

/// Translates `b` into the coordinate frame of `crop`.
pub fn remap_bbox(b: &BBox, crop: &CropRect) -> Result<BBox, GeomError> {
    if !crop.contains(b) {
        return Err(GeomError::NotContained {
            inner: *b,
            outer: *crop,
        });
    }
    BBox::new(
        b.x1 - crop.x1,
        b.y1 - crop.y1,
        b.x2 - crop.x1,
        b.y2 - crop.y1,
    )
}

/// Pixel dimensions of an image after applying `crop`.
pub fn cropped_dims(crop: &CropRect, original: &ImageDims) -> ImageDims {
    ImageDims {
        width: crop.width().round() as u32,
        height: crop.height().round() as u32,
        page_height: original.page_height,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PageLocation {
    FirstPage,
    BeyondFirstPage,
}

/// A box starting exactly on the page boundary belongs to the second page.
pub fn page_category(b: &BBox, dims: &ImageDims) -> PageLocation {
    if b.y1 < dims.page_height as f64 {
        PageLocation::FirstPage
    } else {
        PageLocation::BeyondFirstPage
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn bb(x1: f64, y1: f64, x2: f64, y2: f64) -> BBox {
        BBox::new(x1, y1, x2, y2).unwrap()
    }

    /// Counts unit cells covered by each box on the integer grid.
    fn grid_iou(a: &BBox, b: &BBox) -> f64 {
        let (mut inter, mut union) = (0u64, 0u64);
        let max = a.x2.max(b.x2).max(a.y2).max(b.y2) as i64;
        for y in 0..max {
            for x in 0..max {
                let (cx, cy) = (x as f64 + 0.5, y as f64 + 0.5);
                let ia = a.contains_point(cx, cy);
                let ib = b.contains_point(cx, cy);
                inter += (ia && ib) as u64;
                union += (ia || ib) as u64;
            }
        }
        inter as f64 / union as f64
    }

    #[test]
    fn iou_examples() {
        let a = bb(0.0, 0.0, 10.0, 10.0);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &bb(20.0, 20.0, 30.0, 30.0)), 0.0);
        let b = bb(5.0, 5.0, 15.0, 15.0);
        let expected = grid_iou(&a, &b);
        assert!((expected - 25.0 / 175.0).abs() < 1e-12);
        assert!((iou(&a, &b) - expected).abs() < 1e-12);
    }

    #[test]
    fn touching_boxes_do_not_overlap() {
        assert_eq!(iou(&bb(0.0, 0.0, 10.0, 10.0), &bb(10.0, 0.0, 20.0, 10.0)), 0.0);
    }

    #[test]
    fn degenerate_boxes_rejected() {
        assert!(BBox::new(0.0, 0.0, 0.0, 10.0).is_err());
        assert!(BBox::new(5.0, 0.0, 4.0, 10.0).is_err());
        assert!(BBox::new(0.0, 3.0, 10.0, 3.0).is_err());
        assert!(BBox::new(-1.0, 0.0, 10.0, 10.0).is_err());
        assert!(BBox::new(0.0, 0.0, f64::NAN, 10.0).is_err());
    }

    #[test]
    fn clip_examples() {
        let d = ImageDims::new(100, 100);
        assert_eq!(clip(Rect::new(0.0, 0.0, 10.0, 10.0), &d).unwrap(), bb(0.0, 0.0, 10.0, 10.0));
        assert_eq!(clip(Rect::new(-5.0, -5.0, 10.0, 10.0), &d).unwrap(), bb(0.0, 0.0, 10.0, 10.0));
        // oracle: per-coordinate min(max(v, 0), extent)
        let r = Rect::new(90.0, 90.0, 120.0, 120.0);
        let want = bb(
            r.x1.max(0.0).min(100.0),
            r.y1.max(0.0).min(100.0),
            r.x2.max(0.0).min(100.0),
            r.y2.max(0.0).min(100.0),
        );
        assert_eq!(clip(r, &d).unwrap(), want);
        assert_eq!(want, bb(90.0, 90.0, 100.0, 100.0));
    }

    #[test]
    fn clip_outside_is_error() {
        let d = ImageDims::new(100, 100);
        assert!(matches!(
            clip(Rect::new(150.0, 150.0, 200.0, 200.0), &d),
            Err(GeomError::NoOverlap { .. })
        ));
        assert!(matches!(
            clip(Rect::new(-20.0, 0.0, -5.0, 10.0), &d),
            Err(GeomError::NoOverlap { .. })
        ));
        assert!(matches!(
            clip(Rect::new(10.0, 10.0, 5.0, 20.0), &d),
            Err(GeomError::InvalidBox { .. })
        ));
    }

    #[test]
    fn normalize_examples() {
        let d = ImageDims::new(980, 3920);
        let n = normalize(&bb(0.0, 0.0, 980.0, 980.0), &d).unwrap();
        assert_eq!(n, NormBBox { x1: 0.0, y1: 0.0, x2: 1.0, y2: 0.25 });

        let full = ImageDims::new(640, 480);
        let n = normalize(&full.full_box().unwrap(), &full).unwrap();
        assert_eq!(n, NormBBox { x1: 0.0, y1: 0.0, x2: 1.0, y2: 1.0 });

        let b = bb(123.0, 456.0, 789.0, 900.0);
        let back = denormalize(&normalize(&b, &d).unwrap(), &d).unwrap();
        assert!((back.x1 - 123.0).abs() < 1.0);
        assert!((back.y1 - 456.0).abs() < 1.0);
        assert!((back.x2 - 789.0).abs() < 1.0);
        assert!((back.y2 - 900.0).abs() < 1.0);

        assert!(normalize(&b, &ImageDims::new(0, 10)).is_err());
    }

    #[test]
    fn crop_without_slack_is_full_image() {
        let d = ImageDims::new(50, 70);
        let gold = d.full_box().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(sample_crop(&d, &gold, &mut rng, &CropConfig::default()), gold);
    }

    #[test]
    fn crop_is_reproducible() {
        let d = ImageDims::new(100, 100);
        let gold = bb(10.0, 10.0, 20.0, 20.0);
        let a = sample_crop(&d, &gold, &mut ChaCha8Rng::seed_from_u64(42), &CropConfig::default());
        let b = sample_crop(&d, &gold, &mut ChaCha8Rng::seed_from_u64(42), &CropConfig::default());
        assert_eq!(a, b);
        assert!(a.contains(&gold));
    }

    #[test]
    fn zero_slack_fraction_keeps_full_image() {
        let d = ImageDims::new(100, 100);
        let gold = bb(10.0, 10.0, 20.0, 20.0);
        let cfg = CropConfig { max_slack_fraction: 0.0 };
        let c = sample_crop(&d, &gold, &mut ChaCha8Rng::seed_from_u64(3), &cfg);
        assert_eq!(c, d.full_box().unwrap());
    }

    #[test]
    fn remap_examples() {
        let b = bb(10.0, 10.0, 20.0, 20.0);
        assert_eq!(remap_bbox(&b, &bb(0.0, 0.0, 100.0, 100.0)).unwrap(), b);
        assert_eq!(remap_bbox(&b, &bb(5.0, 5.0, 50.0, 50.0)).unwrap(), bb(5.0, 5.0, 15.0, 15.0));
        assert_eq!(remap_bbox(&b, &b).unwrap(), bb(0.0, 0.0, 10.0, 10.0));
        assert!(matches!(
            remap_bbox(&b, &bb(12.0, 0.0, 50.0, 50.0)),
            Err(GeomError::NotContained { .. })
        ));
    }

    #[test]
    fn page_boundary() {
        let d = ImageDims::new(980, 3920);
        assert_eq!(page_category(&bb(0.0, 0.0, 10.0, 10.0), &d), PageLocation::FirstPage);
        assert_eq!(page_category(&bb(0.0, 979.0, 10.0, 990.0), &d), PageLocation::FirstPage);
        assert_eq!(page_category(&bb(0.0, 980.0, 10.0, 990.0), &d), PageLocation::BeyondFirstPage);
    }

    #[test]
    fn json_corner_form() {
        let b = bb(10.0, 20.0, 110.0, 220.0);
        let s = serde_json::to_string(&b).unwrap();
        assert_eq!(s, "[[10.0,20.0],[110.0,220.0]]");
        assert_eq!(serde_json::from_str::<BBox>(&s).unwrap(), b);
        assert!(serde_json::from_str::<BBox>("[[10,20],[5,220]]").is_err());
        assert_eq!(b.to_corner_string(), "[(10, 20), (110, 220)]");
    }

    fn int_box() -> impl Strategy<Value = BBox> {
        (0u32..199, 0u32..199, 1u32..200, 1u32..200).prop_map(|(x, y, w, h)| {
            let x2 = (x + w).min(200).max(x + 1);
            let y2 = (y + h).min(200).max(y + 1);
            BBox::new(x as f64, y as f64, x2 as f64, y2 as f64).unwrap()
        })
    }

    proptest! {
        #[test]
        fn iou_symmetric_and_bounded(a in int_box(), b in int_box()) {
            let ab = iou(&a, &b);
            prop_assert_eq!(ab, iou(&b, &a));
            prop_assert!((0.0..=1.0).contains(&ab));
            prop_assert_eq!(iou(&a, &a), 1.0);
        }

        #[test]
        fn remap_preserves_size(x in 0u32..80, y in 0u32..80, w in 1u32..20, h in 1u32..20, seed: u64) {
            let d = ImageDims::new(100, 100);
            let gold = BBox::new(x as f64, y as f64, (x + w) as f64, (y + h) as f64).unwrap();
            let crop = sample_crop(&d, &gold, &mut ChaCha8Rng::seed_from_u64(seed), &CropConfig::default());
            prop_assert!(crop.contains(&gold));
            prop_assert!(crop.within(&d));
            let r = remap_bbox(&gold, &crop).unwrap();
            prop_assert_eq!(r.width(), gold.width());
            prop_assert_eq!(r.height(), gold.height());
            prop_assert!(r.within(&cropped_dims(&crop, &d)));
        }

        #[test]
        fn normalize_round_trip(x in 0u32..970, y in 0u32..3900, w in 1u32..10, h in 1u32..20) {
            let d = ImageDims::new(980, 3920);
            let b = BBox::new(x as f64, y as f64, (x + w) as f64, (y + h) as f64).unwrap();
            let back = denormalize(&normalize(&b, &d).unwrap(), &d).unwrap();
            prop_assert!((back.x1() - b.x1()).abs() < 1.0);
            prop_assert!((back.y1() - b.y1()).abs() < 1.0);
            prop_assert!((back.x2() - b.x2()).abs() < 1.0);
            prop_assert!((back.y2() - b.y2()).abs() < 1.0);
        }
    }
}
