//! Motif shapes that get planted into synthetic images.

use std::fmt;
use std::str::FromStr;

use crate::bbox::BBox;
use crate::tensor::ImageTensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MotifKind {
    Cross,
    Ring,
    Checker,
    CornerL,
    Stripes,
}

impl MotifKind {
    pub const ALL: [MotifKind; 5] = [
        MotifKind::Cross,
        MotifKind::Ring,
        MotifKind::Checker,
        MotifKind::CornerL,
        MotifKind::Stripes,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MotifKind::Cross => "cross",
            MotifKind::Ring => "ring",
            MotifKind::Checker => "checker",
            MotifKind::CornerL => "corner-l",
            MotifKind::Stripes => "stripes",
        }
    }
}

impl fmt::Display for MotifKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MotifKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        MotifKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown motif kind {s:?}"))
    }
}

/// A motif kind drawn at `size x size` pixels in `color`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MotifSpec {
    pub kind: MotifKind,
    pub size: usize,
    pub color: [f32; 3],
}

impl MotifSpec {
    pub fn new(kind: MotifKind, size: usize) -> Self {
        MotifSpec {
            kind,
            size,
            color: [0.92, 0.92, 0.92],
        }
    }

    pub fn with_color(mut self, color: [f32; 3]) -> Self {
        self.color = color;
        self
    }

    fn stroke(&self) -> usize {
        (self.size / 4).max(2)
    }

    /// Whether local pixel `(y, x)` of the motif square is painted, and with
    /// the foreground (`Some(true)`) or the checker's dark cells
    /// (`Some(false)`).
    fn paint_at(&self, y: usize, x: usize) -> Option<bool> {
        let s = self.size;
        let t = self.stroke();
        match self.kind {
            MotifKind::Cross => {
                let lo = (s - t) / 2;
                let on = (lo..lo + t).contains(&y) || (lo..lo + t).contains(&x);
                on.then_some(true)
            }
            MotifKind::Ring => {
                let c = (s as f32 - 1.0) / 2.0;
                let (dy, dx) = (y as f32 - c, x as f32 - c);
                let r = (dy * dy + dx * dx).sqrt();
                let outer = s as f32 / 2.0;
                let inner = outer - (s as f32 / 5.0).max(2.0);
                (r < outer && r >= inner).then_some(true)
            }
            MotifKind::Checker => {
                let cell = (s / 3).max(1);
                Some((y / cell + x / cell).is_multiple_of(2))
            }
            MotifKind::CornerL => (x < t || y >= s - t).then_some(true),
            MotifKind::Stripes => {
                let bar = (s / 4).max(2);
                ((y % (2 * bar)) < bar).then_some(true)
            }
        }
    }

    /// Paints the motif with its top-left corner at `(x0, y0)` and returns
    /// the tight box around the painted pixels. `intensity` scales the
    /// foreground contrast against `background`.
    pub fn render(
        &self,
        image: &mut ImageTensor,
        x0: usize,
        y0: usize,
        intensity: f32,
        background: f32,
    ) -> Option<BBox> {
        let (mut xmin, mut ymin, mut xmax, mut ymax) = (usize::MAX, usize::MAX, 0, 0);
        let fg: Vec<f32> = self
            .color
            .iter()
            .map(|&c| background + (c - background) * intensity)
            .collect();
        let dark = background - (background - 0.08) * intensity;
        for y in 0..self.size {
            for x in 0..self.size {
                let Some(foreground) = self.paint_at(y, x) else {
                    continue;
                };
                let (iy, ix) = (y0 + y, x0 + x);
                if iy >= image.height() || ix >= image.width() {
                    continue;
                }
                for c in 0..image.channels() {
                    let v = if foreground { fg[c.min(2)] } else { dark };
                    image.set(c, iy, ix, v.clamp(0.0, 1.0));
                }
                xmin = xmin.min(ix);
                ymin = ymin.min(iy);
                xmax = xmax.max(ix + 1);
                ymax = ymax.max(iy + 1);
            }
        }
        BBox::new(xmin, ymin, xmax, ymax)
    }

    /// `kind:size:r:g:b`
    pub fn to_token(&self) -> String {
        format!(
            "{}:{}:{}:{}:{}",
            self.kind, self.size, self.color[0], self.color[1], self.color[2]
        )
    }

    pub fn from_token(s: &str) -> Result<Self, String> {
        let parts: Vec<&str> = s.split(':').collect();
        let (kind, size, color) = match parts.as_slice() {
            [k] => (*k, None, None),
            [k, sz] => (*k, Some(*sz), None),
            [k, sz, r, g, b] => (*k, Some(*sz), Some([*r, *g, *b])),
            _ => return Err(format!("bad motif {s:?}; expected kind[:size[:r:g:b]]")),
        };
        let mut spec = MotifSpec::new(kind.parse()?, 16);
        if let Some(sz) = size {
            spec.size = sz.parse().map_err(|_| format!("bad motif size {sz:?}"))?;
            if spec.size < 4 {
                return Err(format!("motif size {} below 4", spec.size));
            }
        }
        if let Some(rgb) = color {
            for (dst, v) in spec.color.iter_mut().zip(rgb) {
                let x: f32 = v
                    .parse()
                    .map_err(|_| format!("bad colour component {v:?}"))?;
                if !(0.0..=1.0).contains(&x) {
                    return Err(format!("colour component {x} outside [0, 1]"));
                }
                *dst = x;
            }
        }
        Ok(spec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{Shape, Tensor};

    #[test]
    fn tokens_round_trip() {
        for kind in MotifKind::ALL {
            let m = MotifSpec::new(kind, 14).with_color([0.9, 0.2, 0.1]);
            assert_eq!(MotifSpec::from_token(&m.to_token()).unwrap(), m);
        }
        assert_eq!(MotifSpec::from_token("ring").unwrap().size, 16);
        assert!(MotifSpec::from_token("blob:3").is_err());
    }

    #[test]
    fn render_box_is_tight_and_pixels_differ() {
        for kind in MotifKind::ALL {
            let mut img = Tensor::filled(Shape::new(3, 40, 40), 0.5);
            let m = MotifSpec::new(kind, 16);
            let b = m.render(&mut img, 10, 7, 1.0, 0.5).unwrap();
            assert!(
                b.x_min >= 10 && b.y_min >= 7 && b.x_max <= 26 && b.y_max <= 23,
                "{kind}"
            );
            // every box edge row/column has a painted pixel
            let painted = |x: usize, y: usize| (0..3).any(|c| img.get(c, y, x) != 0.5);
            assert!((b.x_min..b.x_max).any(|x| painted(x, b.y_min)), "{kind}");
            assert!(
                (b.x_min..b.x_max).any(|x| painted(x, b.y_max - 1)),
                "{kind}"
            );
            assert!((b.y_min..b.y_max).any(|y| painted(b.x_min, y)), "{kind}");
            assert!(
                (b.y_min..b.y_max).any(|y| painted(b.x_max - 1, y)),
                "{kind}"
            );
            // nothing outside the box changed
            for y in 0..40 {
                for x in 0..40 {
                    if !b.contains(x, y) {
                        assert!(!painted(x, y), "{kind} leaked at {x},{y}");
                    }
                }
            }
        }
    }
}
