//! Deconvolution pass from a final-layer filter back to input pixels, and
//! pattern localisation by intersecting the per-filter regions.

use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::backbone::{BackboneError, BackboneSpec, ForwardTrace, Layer};
use crate::bbox::BBox;
use crate::miner::{binarize, detect, MinerError, PatternBank, ThresholdVector, VisualPattern};
use crate::synthdata::encode_image;
use crate::tensor::{conv2d_transpose, max_unpool, ImageTensor, Shape, Tensor, TensorError};

#[derive(Debug, Error)]
pub enum LocalizeError {
    #[error(transparent)]
    Backbone(#[from] BackboneError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Miner(#[from] MinerError),
    #[error("filter {filter} out of range for {count} filters")]
    FilterOutOfRange { filter: usize, count: usize },
    #[error("region sizes differ: {0}x{1} vs {2}x{3}")]
    DimMismatch(usize, usize, usize, usize),
    #[error("no regions to intersect")]
    NoRegions,
    #[error("cannot write output: {0}")]
    Io(#[from] std::io::Error),
    #[error("box list line {line}: {message}")]
    Parse { line: usize, message: String },
}

/// Per-pixel attribution magnitude, one value per input pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct DeconvMap {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f32>,
}

impl DeconvMap {
    pub fn get(&self, y: usize, x: usize) -> f32 {
        self.values[y * self.width + x]
    }

    pub fn max(&self) -> f32 {
        self.values.iter().fold(0.0f32, |m, v| m.max(v.abs()))
    }
}

/// Binary pixel mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Region {
    pub height: usize,
    pub width: usize,
    pub mask: Vec<bool>,
}

impl Region {
    pub fn empty(height: usize, width: usize) -> Self {
        Region {
            height,
            width,
            mask: vec![false; height * width],
        }
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.mask[y * self.width + x]
    }

    pub fn count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.mask.iter().any(|&m| m)
    }

    /// 8-bit graymap bytes: 255 inside the region, 0 outside.
    pub fn to_pgm(&self) -> Vec<u8> {
        let values = self
            .mask
            .iter()
            .map(|&m| if m { 1.0 } else { 0.0 })
            .collect();
        let t = Tensor::from_vec(Shape::new(1, self.height, self.width), values)
            .expect("mask length matches its dimensions");
        encode_image(&t).expect("one-channel images always encode")
    }

    pub fn write_pgm(&self, path: &Path) -> Result<(), LocalizeError> {
        std::fs::write(path, self.to_pgm())?;
        Ok(())
    }
}

/// Signed attribution of `filter`'s global maximum on the input, shaped
/// like the input image. The final map is seeded with the activation value
/// at the argmax cell; convolutions are undone with their transpose, pools
/// with their recorded switches, and ReLUs are passed through.
pub fn deconv_raw(
    trace: &ForwardTrace,
    spec: &BackboneSpec,
    filter: usize,
) -> Result<Tensor, LocalizeError> {
    trace.check_against(spec)?;
    let count = spec.filter_count();
    if filter >= count {
        return Err(LocalizeError::FilterOutOfRange { filter, count });
    }
    let final_map = trace.final_map();
    let (row, col) = trace.argmax[filter];
    let mut grad = Tensor::zeros(final_map.shape());
    grad.set(filter, row, col, final_map.get(filter, row, col));
    for (i, layer) in spec.layers().iter().enumerate().rev() {
        let in_shape: Shape = if i == 0 {
            trace.input_shape
        } else {
            trace.activations[i - 1].shape()
        };
        grad = match layer {
            Layer::Conv(k) => conv2d_transpose(&grad, k, in_shape)?,
            Layer::Relu => grad,
            Layer::MaxPool { .. } => {
                let switches = trace.switches[i].as_ref().ok_or_else(|| {
                    BackboneError::TraceMismatch(format!("layer {i} has no switches"))
                })?;
                max_unpool(&grad, switches)?
            }
        };
    }
    Ok(grad)
}

/// Channel-summed absolute value of [`deconv_raw`].
pub fn deconv_filter(
    trace: &ForwardTrace,
    spec: &BackboneSpec,
    filter: usize,
) -> Result<DeconvMap, LocalizeError> {
    let raw = deconv_raw(trace, spec, filter)?;
    let (h, w) = (raw.height(), raw.width());
    let mut values = vec![0.0f32; h * w];
    for c in 0..raw.channels() {
        for (v, r) in values.iter_mut().zip(raw.plane(c)) {
            *v += r.abs();
        }
    }
    Ok(DeconvMap {
        height: h,
        width: w,
        values,
    })
}

/// Pixels whose magnitude exceeds `tau` times the map's maximum. An
/// all-zero map gives an empty region.
pub fn region_of(map: &DeconvMap, tau: f32) -> Region {
    let max = map.max();
    let cut = tau * max;
    Region {
        height: map.height,
        width: map.width,
        mask: map
            .values
            .iter()
            .map(|v| max > 0.0 && v.abs() > cut)
            .collect(),
    }
}

/// Pixelwise AND of all regions.
pub fn intersect_regions(regions: &[Region]) -> Result<Region, LocalizeError> {
    let first = regions.first().ok_or(LocalizeError::NoRegions)?;
    let mut out = first.clone();
    for r in &regions[1..] {
        if (r.height, r.width) != (first.height, first.width) {
            return Err(LocalizeError::DimMismatch(
                first.height,
                first.width,
                r.height,
                r.width,
            ));
        }
        for (a, &b) in out.mask.iter_mut().zip(&r.mask) {
            *a &= b;
        }
    }
    Ok(out)
}

/// Tight box around the region, `None` when it is empty.
pub fn bbox_of(region: &Region) -> Option<BBox> {
    let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
    for y in 0..region.height {
        for x in 0..region.width {
            if region.get(y, x) {
                x0 = x0.min(x);
                y0 = y0.min(y);
                x1 = x1.max(x + 1);
                y1 = y1.max(y + 1);
            }
        }
    }
    BBox::new(x0, y0, x1, y1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Localization {
    pub region: Region,
    pub bbox: BBox,
}

/// Localises `pattern` using an existing forward trace. Returns `None` when
/// the pattern is not detected or its filter regions do not overlap.
pub fn localize_in_trace(
    trace: &ForwardTrace,
    spec: &BackboneSpec,
    pattern: &VisualPattern,
    thresholds: &ThresholdVector,
    tau: f32,
) -> Result<Option<Localization>, LocalizeError> {
    let count = spec.filter_count();
    if let Some(&filter) = pattern.filters.iter().find(|&&f| f >= count) {
        return Err(LocalizeError::FilterOutOfRange { filter, count });
    }
    let profile = binarize("", &trace.pooled, thresholds)?;
    if !detect(pattern, &profile) {
        return Ok(None);
    }
    let regions = pattern
        .filters
        .iter()
        .map(|&f| deconv_filter(trace, spec, f).map(|m| region_of(&m, tau)))
        .collect::<Result<Vec<_>, _>>()?;
    let region = intersect_regions(&regions)?;
    Ok(bbox_of(&region).map(|bbox| Localization { region, bbox }))
}

/// Forward pass plus [`localize_in_trace`].
pub fn localize_pattern(
    image: &ImageTensor,
    spec: &BackboneSpec,
    pattern: &VisualPattern,
    thresholds: &ThresholdVector,
    tau: f32,
) -> Result<Option<Localization>, LocalizeError> {
    let trace = spec.forward(image)?;
    localize_in_trace(&trace, spec, pattern, thresholds, tau)
}

/// One localised pattern in one image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Proposal {
    pub image: String,
    /// `<class>/<neuron>` naming the pattern's bank and row.
    pub pattern: String,
    pub bbox: BBox,
}

/// A bank pattern in proposal order.
#[derive(Debug, Clone, Copy)]
pub struct RankedPattern<'a> {
    pub class: &'a str,
    pub pattern: &'a VisualPattern,
    pub thresholds: &'a ThresholdVector,
    /// Training positive rate minus negative rate.
    pub gap: f64,
}

/// Patterns of all banks ordered by decreasing training gap, then bank
/// order, then neuron.
pub fn rank_patterns(banks: &[PatternBank]) -> Vec<RankedPattern<'_>> {
    let mut ranked: Vec<(usize, RankedPattern)> = banks
        .iter()
        .enumerate()
        .flat_map(|(bi, bank)| {
            bank.patterns.iter().map(move |(p, st)| {
                (
                    bi,
                    RankedPattern {
                        class: &bank.class,
                        pattern: p,
                        thresholds: &bank.thresholds,
                        gap: st.gap(),
                    },
                )
            })
        })
        .collect();
    ranked.sort_by(|a, b| {
        b.1.gap
            .total_cmp(&a.1.gap)
            .then(a.0.cmp(&b.0))
            .then(a.1.pattern.neuron.cmp(&b.1.pattern.neuron))
    });
    ranked.into_iter().map(|(_, r)| r).collect()
}

/// Localises detected patterns in rank order until `max` boxes are found.
pub fn propose_in_trace(
    image: &str,
    trace: &ForwardTrace,
    spec: &BackboneSpec,
    ranked: &[RankedPattern],
    tau: f32,
    max: usize,
) -> Result<Vec<(Proposal, Region)>, LocalizeError> {
    let mut found = Vec::new();
    for r in ranked {
        if found.len() >= max {
            break;
        }
        if let Some(loc) = localize_in_trace(trace, spec, r.pattern, r.thresholds, tau)? {
            let proposal = Proposal {
                image: image.to_string(),
                pattern: format!("{}/{}", r.class, r.pattern.neuron),
                bbox: loc.bbox,
            };
            found.push((proposal, loc.region));
        }
    }
    Ok(found)
}

pub const BOXES_VERSION: u32 = 1;

/// Box list text:
///
/// ```text
/// patternnet-boxes 1
/// fingerprint <hex>
/// dataset <hex>
/// box <image-id> <pattern-id> <x_min> <y_min> <x_max> <y_max>
/// ```
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BoxList {
    pub fingerprint: String,
    /// Digest of the manifest whose images were searched.
    pub dataset: String,
    pub proposals: Vec<Proposal>,
}

impl BoxList {
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "patternnet-boxes {BOXES_VERSION}\nfingerprint {}\ndataset {}\n",
            self.fingerprint, self.dataset
        );
        for p in &self.proposals {
            let _ = writeln!(out, "box {} {} {}", p.image, p.pattern, p.bbox);
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self, LocalizeError> {
        let err = |line: usize, message: String| LocalizeError::Parse { line, message };
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
        match lines.next() {
            Some((_, l)) if l == format!("patternnet-boxes {BOXES_VERSION}") => {}
            Some((n, l)) => return Err(err(n, format!("bad header {l:?}"))),
            None => return Err(err(0, "empty box list".into())),
        }
        let mut fingerprint = None;
        let mut dataset = None;
        let mut proposals = Vec::new();
        for (n, line) in lines {
            let fields: Vec<&str> = line.split_whitespace().collect();
            match fields.as_slice() {
                ["fingerprint", v] => fingerprint = Some(v.to_string()),
                ["dataset", v] => dataset = Some(v.to_string()),
                ["box", image, pattern, coords @ ..] if coords.len() == 4 => {
                    let mut c = [0usize; 4];
                    for (dst, v) in c.iter_mut().zip(coords) {
                        *dst = v
                            .parse()
                            .map_err(|_| err(n, format!("bad coordinate {v:?}")))?;
                    }
                    let bbox = BBox::new(c[0], c[1], c[2], c[3])
                        .ok_or_else(|| err(n, "empty box".into()))?;
                    proposals.push(Proposal {
                        image: image.to_string(),
                        pattern: pattern.to_string(),
                        bbox,
                    });
                }
                _ => return Err(err(n, format!("unrecognised line {line:?}"))),
            }
        }
        Ok(BoxList {
            fingerprint: fingerprint.ok_or_else(|| err(0, "missing fingerprint line".into()))?,
            dataset: dataset.ok_or_else(|| err(0, "missing dataset line".into()))?,
            proposals,
        })
    }

    pub fn write(&self, path: &Path) -> Result<(), LocalizeError> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self, LocalizeError> {
        BoxList::parse(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::miner::ThresholdPolicy;
    use crate::tensor::ConvKernel;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_map(rng: &mut ChaCha8Rng, h: usize, w: usize) -> DeconvMap {
        DeconvMap {
            height: h,
            width: w,
            values: (0..h * w).map(|_| rng.gen_range(-1.0f32..1.0)).collect(),
        }
    }

    fn random_region(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Region {
        Region {
            height: h,
            width: w,
            mask: (0..h * w).map(|_| rng.gen_bool(0.5)).collect(),
        }
    }

    #[test]
    fn identity_backbone_attributes_only_the_argmax() {
        let mut k = ConvKernel::zeros(1, 1, 1, 1, 1, 0);
        k.set_weight(0, 0, 0, 0, 1.0);
        let spec = BackboneSpec::new(vec![Layer::Conv(k)]).unwrap();
        let mut img = Tensor::filled(Shape::new(1, 5, 6), 0.1);
        img.set(0, 3, 2, 0.9);
        let trace = spec.forward(&img).unwrap();
        let map = deconv_filter(&trace, &spec, 0).unwrap();
        for y in 0..5 {
            for x in 0..6 {
                let expected = if (y, x) == (3, 2) { 0.9 } else { 0.0 };
                assert_eq!(map.get(y, x), expected);
            }
        }
        assert!(matches!(
            deconv_filter(&trace, &spec, 1),
            Err(LocalizeError::FilterOutOfRange { .. })
        ));
    }

    #[test]
    fn region_examples() {
        let mut map = DeconvMap {
            height: 2,
            width: 3,
            values: vec![0.0; 6],
        };
        assert!(region_of(&map, 0.1).is_empty());
        map.values[4] = 0.3;
        let r = region_of(&map, 0.0);
        assert_eq!(r.count(), 1);
        assert!(r.get(1, 1));
    }

    #[test]
    fn bbox_examples() {
        let mut r = Region::empty(6, 7);
        assert_eq!(bbox_of(&r), None);
        r.mask[3 * 7 + 4] = true;
        assert_eq!(bbox_of(&r), BBox::new(4, 3, 5, 4));
        r.mask.iter_mut().for_each(|m| *m = true);
        assert_eq!(bbox_of(&r), BBox::new(0, 0, 7, 6));
    }

    #[test]
    fn intersection_identities() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let r = random_region(&mut rng, 5, 4);
        assert_eq!(intersect_regions(&[r.clone(), r.clone()]).unwrap(), r);
        let e = Region::empty(5, 4);
        assert!(intersect_regions(&[r.clone(), e]).unwrap().is_empty());
        assert!(matches!(
            intersect_regions(&[r, Region::empty(4, 5)]),
            Err(LocalizeError::DimMismatch(..))
        ));
        assert!(matches!(
            intersect_regions(&[]),
            Err(LocalizeError::NoRegions)
        ));
    }

    #[test]
    fn undetected_pattern_gives_none() {
        let mut k = ConvKernel::zeros(2, 1, 1, 1, 1, 0);
        k.set_weight(0, 0, 0, 0, 1.0);
        k.set_weight(1, 0, 0, 0, -1.0);
        let spec = BackboneSpec::new(vec![Layer::Conv(k)]).unwrap();
        let img = Tensor::filled(Shape::new(1, 4, 4), 0.5);
        let thresholds = ThresholdVector {
            values: vec![0.0, 0.0],
            policy: ThresholdPolicy::default(),
        };
        let pattern = VisualPattern {
            neuron: 0,
            filters: vec![0, 1],
            weights: vec![1.0, 1.0],
        };
        assert_eq!(
            localize_pattern(&img, &spec, &pattern, &thresholds, 0.1).unwrap(),
            None
        );
        let single = VisualPattern {
            filters: vec![0],
            weights: vec![1.0],
            ..pattern
        };
        let loc = localize_pattern(&img, &spec, &single, &thresholds, 0.1)
            .unwrap()
            .unwrap();
        assert_eq!(loc.bbox, BBox::new(0, 0, 1, 1).unwrap());
    }

    #[test]
    fn box_list_round_trip() {
        let list = BoxList {
            fingerprint: "ab12".into(),
            dataset: "cd34".into(),
            proposals: vec![Proposal {
                image: "img00001".into(),
                pattern: "cross/3".into(),
                bbox: BBox::new(1, 2, 10, 12).unwrap(),
            }],
        };
        assert_eq!(BoxList::parse(&list.to_text()).unwrap(), list);
        assert!(BoxList::parse("patternnet-boxes 1\nfingerprint a\nbox i p 3 3 3 4\n").is_err());
    }

    #[test]
    fn mask_pgm_has_header_and_pixels() {
        let mut r = Region::empty(2, 3);
        r.mask[1] = true;
        let bytes = r.to_pgm();
        assert!(bytes.starts_with(b"P5\n3 2\n255\n"));
        assert_eq!(&bytes[bytes.len() - 6..], &[0, 255, 0, 0, 0, 0]);
    }

    proptest! {
        #[test]
        fn region_matches_elementwise(seed in any::<u64>(), h in 1usize..9, w in 1usize..9) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let map = random_map(&mut rng, h, w);
            let r = region_of(&map, 0.5);
            let max = map.values.iter().fold(0.0f32, |m, v| m.max(v.abs()));
            for i in 0..h * w {
                prop_assert_eq!(r.mask[i], map.values[i].abs() > 0.5 * max);
            }
        }

        #[test]
        fn intersection_matches_pixel_loop(seed in any::<u64>(), n in 1usize..5) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let regions: Vec<Region> = (0..n).map(|_| random_region(&mut rng, 6, 5)).collect();
            let got = intersect_regions(&regions).unwrap();
            for y in 0..6 {
                for x in 0..5 {
                    let all = regions.iter().all(|r| r.get(y, x));
                    prop_assert_eq!(got.get(y, x), all);
                    for r in &regions {
                        prop_assert!(!got.get(y, x) || r.get(y, x));
                    }
                }
            }
        }

        #[test]
        fn bbox_matches_scan(seed in any::<u64>(), density in 0.0f64..0.3) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut r = Region::empty(7, 9);
            r.mask.iter_mut().for_each(|m| *m = rng.gen_bool(density));
            let pts: Vec<(usize, usize)> = (0..7).flat_map(|y| (0..9).map(move |x| (x, y))).filter(|&(x, y)| r.get(y, x)).collect();
            match bbox_of(&r) {
                None => prop_assert!(pts.is_empty()),
                Some(b) => {
                    prop_assert_eq!(b.x_min, pts.iter().map(|p| p.0).min().unwrap());
                    prop_assert_eq!(b.x_max, pts.iter().map(|p| p.0).max().unwrap() + 1);
                    prop_assert_eq!(b.y_min, pts.iter().map(|p| p.1).min().unwrap());
                    prop_assert_eq!(b.y_max, pts.iter().map(|p| p.1).max().unwrap() + 1);
                    prop_assert!(b.within(9, 7));
                }
            }
        }
    }
}
