//! Tensor Gauss–Legendre rules on the unit reference square and the
//! bilinear shape functions that live on it.

/// Gauss–Legendre rule on `[0, 1]`.
#[derive(Debug, Clone, Copy)]
pub struct GaussRule {
    pub points: &'static [f64],
    pub weights: &'static [f64],
}

const G2_OFF: f64 = 0.211_324_865_405_187_1; // (1 − 1/√3)/2
const G3_OFF: f64 = 0.112_701_665_379_258_3; // (1 − √(3/5))/2

pub const GAUSS2: GaussRule = GaussRule {
    points: &[G2_OFF, 1.0 - G2_OFF],
    weights: &[0.5, 0.5],
};

pub const GAUSS3: GaussRule = GaussRule {
    points: &[G3_OFF, 0.5, 1.0 - G3_OFF],
    weights: &[5.0 / 18.0, 8.0 / 18.0, 5.0 / 18.0],
};

impl GaussRule {
    /// Tensor points `(s, t, weight)` on the unit square.
    pub fn tensor(&self) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
        self.points.iter().zip(self.weights).flat_map(move |(&t, &wt)| {
            self.points
                .iter()
                .zip(self.weights)
                .map(move |(&s, &ws)| (s, t, ws * wt))
        })
    }
}

/// Q1 shape values at local `(s, t)`, corners counterclockwise from `(0,0)`.
#[inline]
pub fn q1_values(s: f64, t: f64) -> [f64; 4] {
    [(1.0 - s) * (1.0 - t), s * (1.0 - t), s * t, (1.0 - s) * t]
}

/// Local gradients `[∂/∂s, ∂/∂t]` of the Q1 shape functions.
#[inline]
pub fn q1_local_gradients(s: f64, t: f64) -> [[f64; 2]; 4] {
    [[-(1.0 - t), -(1.0 - s)], [1.0 - t, -s], [t, s], [-t, 1.0 - s]]
}
