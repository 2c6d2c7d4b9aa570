//! Uniform periodic grid over the ring angle [0, 2π).

use crate::float::{fl, Float};

/// Uniform angular grid with `n` samples, θ_i = 2πi/n.
#[derive(Debug, Clone, PartialEq)]
pub struct AngularGrid<T> {
    n: usize,
    dtheta: T,
}

impl<T: Float> AngularGrid<T> {
    pub fn new(n: usize) -> Self {
        assert!(n > 0, "grid must have at least one point");
        Self {
            n,
            dtheta: T::TAU() / fl(n as f64),
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn dtheta(&self) -> T {
        self.dtheta
    }

    pub fn theta(&self, i: usize) -> T {
        fl::<T>(i as f64) * self.dtheta
    }

    /// Signed distance from θ_i to `center`, wrapped into (−π, π].
    pub fn wrapped_distance(&self, i: usize, center: T) -> T {
        let mut d = self.theta(i) - center;
        let tau = T::TAU();
        while d > T::PI() {
            d -= tau;
        }
        while d <= -T::PI() {
            d += tau;
        }
        d
    }

    /// Trapezoid rule on the periodic grid (equals Δθ·Σ values).
    pub fn integrate(&self, values: &[T]) -> T {
        debug_assert_eq!(values.len(), self.n);
        values.iter().fold(T::zero(), |acc, &v| acc + v) * self.dtheta
    }

    /// Mean of a sampled function over the ring.
    pub fn mean(&self, values: &[T]) -> T {
        self.integrate(values) / T::TAU()
    }

    /// Integer FFT wavenumber for bin `i` (0, 1, …, n/2−1, −n/2, …, −1).
    pub fn wavenumber(&self, i: usize) -> i64 {
        if i < self.n / 2 {
            i as i64
        } else {
            i as i64 - self.n as i64
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_of_cosine_vanishes() {
        let grid = AngularGrid::<f64>::new(256);
        let values: Vec<f64> = (0..256).map(|i| grid.theta(i).cos()).collect();
        assert!(grid.mean(&values).abs() < 1e-14);
    }

    #[test]
    fn wavenumbers_cover_symmetric_range() {
        let grid = AngularGrid::<f64>::new(8);
        let ks: Vec<i64> = (0..8).map(|i| grid.wavenumber(i)).collect();
        assert_eq!(ks, vec![0, 1, 2, 3, -4, -3, -2, -1]);
    }

    #[test]
    fn wrapped_distance_stays_in_principal_branch() {
        let grid = AngularGrid::<f64>::new(16);
        for i in 0..16 {
            let d = grid.wrapped_distance(i, 5.9);
            assert!(d > -std::f64::consts::PI && d <= std::f64::consts::PI);
        }
    }
}
