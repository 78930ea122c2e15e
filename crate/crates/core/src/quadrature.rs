use crate::mesh::{Point, Rect};

/// Two-point Gauss rule on [0, 1] as (position, weight).
pub const GAUSS2: [(f64, f64); 2] = [
    (0.211_324_865_405_187_1, 0.5),
    (0.788_675_134_594_812_9, 0.5),
];

/// 2x2 Gauss points of a rectangle in reference coordinates, with weights
/// summing to one: `(xi, eta, weight)`.
pub fn gauss2x2() -> [(f64, f64, f64); 4] {
    let [(a, wa), (b, wb)] = GAUSS2;
    [(a, a, wa * wa), (b, a, wb * wa), (a, b, wa * wb), (b, b, wb * wb)]
}

pub fn map_point(rect: &Rect, xi: f64, eta: f64) -> Point {
    Point::new(
        rect.min.x + xi * rect.width(),
        rect.min.y + eta * rect.height(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_for_cubics() {
        let q: f64 = GAUSS2.iter().map(|(x, w)| w * x.powi(3)).sum();
        assert!((q - 0.25).abs() < 1e-15);
        let w: f64 = gauss2x2().iter().map(|p| p.2).sum();
        assert!((w - 1.0).abs() < 1e-15);
    }
}
