use std::fmt;

/// Axis-aligned pixel box, half-open: `x_min <= x < x_max`, `y_min <= y < y_max`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BBox {
    pub x_min: usize,
    pub y_min: usize,
    pub x_max: usize,
    pub y_max: usize,
}

impl BBox {
    /// `None` unless the box has positive width and height.
    pub fn new(x_min: usize, y_min: usize, x_max: usize, y_max: usize) -> Option<Self> {
        (x_min < x_max && y_min < y_max).then_some(BBox {
            x_min,
            y_min,
            x_max,
            y_max,
        })
    }

    pub fn width(&self) -> usize {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> usize {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> usize {
        self.width() * self.height()
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        (self.x_min..self.x_max).contains(&x) && (self.y_min..self.y_max).contains(&y)
    }

    pub fn intersection_area(&self, other: &BBox) -> usize {
        let w = self
            .x_max
            .min(other.x_max)
            .saturating_sub(self.x_min.max(other.x_min));
        let h = self
            .y_max
            .min(other.y_max)
            .saturating_sub(self.y_min.max(other.y_min));
        w * h
    }

    pub fn within(&self, width: usize, height: usize) -> bool {
        self.x_max <= width && self.y_max <= height
    }

    /// Centre in pixel coordinates.
    pub fn center(&self) -> (f64, f64) {
        (
            (self.x_min + self.x_max) as f64 / 2.0,
            (self.y_min + self.y_max) as f64 / 2.0,
        )
    }
}

impl fmt::Display for BBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {} {} {}",
            self.x_min, self.y_min, self.x_max, self.y_max
        )
    }
}
