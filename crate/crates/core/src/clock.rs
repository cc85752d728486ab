//! Finite periodic lattice standing in for the clock Hilbert space.
//!
//! The internal basis is orthonormal, `<t_k|t_l> = delta_kl`. A continuum
//! amplitude `f(t)` corresponds to the stored component `f(t_k) sqrt(dt)`.
//! The frequency operator is spectral: `Omega = F^dagger diag(omega_j) F` with
//! `(F^dagger)_{kj} = exp(i omega_j t_k) / sqrt(N)` over the signed lattice
//! `j = -N/2 .. N/2-1`. On smooth vectors it acts as `-i d/dt`.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::tensor::{Operator, Space, SpaceLabel, StateVector, C64};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClockGrid {
    n: usize,
    t_min: f64,
    t_max: f64,
}

impl ClockGrid {
    pub const MIN_SAMPLES: usize = 8;

    pub fn new(n: usize, t_min: f64, t_max: f64) -> Result<Self> {
        if n < Self::MIN_SAMPLES || !n.is_power_of_two() {
            return Err(Error::InvalidGrid(format!(
                "sample count {n} must be a power of two >= {}",
                Self::MIN_SAMPLES
            )));
        }
        if !(t_min.is_finite() && t_max.is_finite()) || t_max <= t_min {
            return Err(Error::InvalidGrid(format!(
                "window [{t_min}, {t_max}) is empty or not finite"
            )));
        }
        Ok(Self { n, t_min, t_max })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn t_min(&self) -> f64 {
        self.t_min
    }

    pub fn t_max(&self) -> f64 {
        self.t_max
    }

    pub fn period(&self) -> f64 {
        self.t_max - self.t_min
    }

    pub fn dt(&self) -> f64 {
        self.period() / self.n as f64
    }

    pub fn time(&self, k: usize) -> f64 {
        self.t_min + k as f64 * self.dt()
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.n).map(|k| self.time(k)).collect()
    }

    /// Frequency spacing `2 pi / (N dt)`.
    pub fn d_omega(&self) -> f64 {
        2.0 * PI / self.period()
    }

    pub fn min_frequency_index(&self) -> i64 {
        -(self.n as i64) / 2
    }

    pub fn max_frequency_index(&self) -> i64 {
        self.n as i64 / 2 - 1
    }

    pub fn frequency_indices(&self) -> std::ops::RangeInclusive<i64> {
        self.min_frequency_index()..=self.max_frequency_index()
    }

    pub fn frequency(&self, j: i64) -> f64 {
        j as f64 * self.d_omega()
    }

    fn check_frequency_index(&self, j: i64) -> Result<()> {
        if self.frequency_indices().contains(&j) {
            Ok(())
        } else {
            Err(Error::FrequencyOutOfRange {
                index: j,
                min: self.min_frequency_index(),
                max: self.max_frequency_index(),
            })
        }
    }

    /// Frequency attached to FFT bin `m` (bins `>= N/2` carry negative frequencies).
    fn bin_frequency(&self, m: usize) -> f64 {
        let j = if m >= self.n / 2 {
            m as i64 - self.n as i64
        } else {
            m as i64
        };
        self.frequency(j)
    }

    fn bin_of(&self, j: i64) -> usize {
        j.rem_euclid(self.n as i64) as usize
    }

    /// Whether `t` lies in the closed window `[t_min, t_max]`.
    pub fn contains(&self, t: f64) -> bool {
        t >= self.t_min && t <= self.t_max
    }

    /// Index of the grid point nearest to `t`.
    pub fn nearest_index(&self, t: f64) -> Result<usize> {
        let x = ((t - self.t_min) / self.dt()).round();
        if !t.is_finite() || x < 0.0 || x > (self.n - 1) as f64 {
            return Err(Error::TimeOutsideWindow {
                t,
                t_min: self.t_min,
                t_max: self.t_max,
            });
        }
        Ok(x as usize)
    }

    /// Index of the first grid point at or after `t`, if any.
    pub fn first_index_at_or_after(&self, t: f64) -> Option<usize> {
        (0..self.n).find(|&k| self.time(k) >= t)
    }

    pub fn label(&self) -> SpaceLabel {
        SpaceLabel {
            space: Space::Clock,
            dim: self.n,
        }
    }
}

/// Time operator `diag(t_0, ..., t_{N-1})`.
pub fn time_operator(grid: &ClockGrid) -> Operator {
    let diag = DVector::from_iterator(grid.len(), grid.times().into_iter().map(C64::from));
    Operator::from_trusted(
        vec![grid.label()],
        DMatrix::from_diagonal(&diag),
        true,
        false,
    )
}

/// Dense spectral frequency operator on the clock.
pub fn omega_operator(grid: &ClockGrid) -> Operator {
    let n = grid.len();
    let dt = grid.dt();
    // Omega_{kl} = (1/N) sum_j omega_j exp(i omega_j (k - l) dt), tabulated by offset
    let kernel: Vec<C64> = (0..n)
        .map(|offset| {
            grid.frequency_indices()
                .map(|j| {
                    let w = grid.frequency(j);
                    C64::from_polar(w, w * offset as f64 * dt)
                })
                .sum::<C64>()
                / n as f64
        })
        .collect();
    let raw = DMatrix::from_fn(n, n, |k, l| kernel[(k + n - l) % n]);
    let sym = (&raw + raw.adjoint()) * C64::new(0.5, 0.0);
    Operator::from_trusted(vec![grid.label()], sym, true, false)
}

/// FFT-backed application of the frequency operator.
pub struct OmegaTransform {
    grid: ClockGrid,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl OmegaTransform {
    pub fn new(grid: &ClockGrid) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            grid: *grid,
            forward: planner.plan_fft_forward(grid.len()),
            inverse: planner.plan_fft_inverse(grid.len()),
        }
    }

    /// In-place `data <- Omega data` for one clock-indexed column.
    pub fn apply_in_place(&self, data: &mut [C64]) {
        assert_eq!(data.len(), self.grid.len());
        self.forward.process(data);
        let scale = 1.0 / self.grid.len() as f64;
        for (m, z) in data.iter_mut().enumerate() {
            *z *= self.grid.bin_frequency(m) * scale;
        }
        self.inverse.process(data);
    }

    pub fn apply(&self, data: &[C64]) -> Vec<C64> {
        let mut out = data.to_vec();
        self.apply_in_place(&mut out);
        out
    }

    /// `F data`, returned in signed frequency order `j = -N/2 .. N/2-1`.
    pub fn to_frequency(&self, data: &[C64]) -> Vec<C64> {
        let n = self.grid.len();
        let mut buf = data.to_vec();
        self.forward.process(&mut buf);
        let norm = 1.0 / (n as f64).sqrt();
        self.grid
            .frequency_indices()
            .map(|j| {
                let phase = C64::from_polar(norm, -self.grid.frequency(j) * self.grid.t_min());
                buf[self.grid.bin_of(j)] * phase
            })
            .collect()
    }
}

/// Frequency eigenvector `|omega_j>`: column `j` of `F^dagger`.
pub fn frequency_vector(grid: &ClockGrid, j: i64) -> Result<StateVector> {
    grid.check_frequency_index(j)?;
    let w = grid.frequency(j);
    let norm = 1.0 / (grid.len() as f64).sqrt();
    let amps: Vec<C64> = grid
        .times()
        .into_iter()
        .map(|t| C64::from_polar(norm, w * t))
        .collect();
    StateVector::from_slice(vec![grid.label()], &amps)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EnvelopeKind {
    Flat,
    Gaussian { n: f64, center: f64 },
    Custom,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Truncation {
    /// Half-width the window should cover on each side of the center.
    pub required_half_width: f64,
}

/// Normalized clock weights `phi_k` with `sum |phi_k|^2 = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Envelope {
    grid: ClockGrid,
    weights: Vec<C64>,
    kind: EnvelopeKind,
    truncation: Option<Truncation>,
}

impl Envelope {
    pub fn flat(grid: &ClockGrid) -> Envelope {
        let w = C64::from(1.0 / (grid.len() as f64).sqrt());
        Envelope {
            grid: *grid,
            weights: vec![w; grid.len()],
            kind: EnvelopeKind::Flat,
            truncation: None,
        }
    }

    /// `phi_k ∝ exp(-t_k^2 / n)`.
    pub fn gaussian(grid: &ClockGrid, n: f64) -> Result<Envelope> {
        Self::gaussian_at(grid, n, 0.0)
    }

    pub fn gaussian_at(grid: &ClockGrid, n: f64, center: f64) -> Result<Envelope> {
        if !(n.is_finite() && n > 0.0) {
            return Err(Error::InvalidGrid(format!("gaussian width {n} must be positive")));
        }
        let weights: Vec<C64> = grid
            .times()
            .into_iter()
            .map(|t| C64::from((-(t - center).powi(2) / n).exp()))
            .collect();
        let mut env = Self::from_weights(grid, weights)?;
        env.kind = EnvelopeKind::Gaussian { n, center };

        // three amplitude standard deviations sqrt(n/2) on each side
        let half = 3.0 * (n / 2.0).sqrt();
        let last = grid.time(grid.len() - 1);
        if center - half < grid.t_min() || center + half > last {
            log::warn!(
                "gaussian envelope n={n} centered at {center} is truncated by window [{}, {})",
                grid.t_min(),
                grid.t_max()
            );
            env.truncation = Some(Truncation {
                required_half_width: half,
            });
        }
        Ok(env)
    }

    /// Normalizes arbitrary weights.
    pub fn from_weights(grid: &ClockGrid, weights: Vec<C64>) -> Result<Envelope> {
        if weights.len() != grid.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} envelope weights for {} grid points",
                weights.len(),
                grid.len()
            )));
        }
        let norm = weights.iter().map(|w| w.norm_sqr()).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::DegenerateEnvelope);
        }
        Ok(Envelope {
            grid: *grid,
            weights: weights.into_iter().map(|w| w / norm).collect(),
            kind: EnvelopeKind::Custom,
            truncation: None,
        })
    }

    pub fn grid(&self) -> &ClockGrid {
        &self.grid
    }

    pub fn weights(&self) -> &[C64] {
        &self.weights
    }

    pub fn weight(&self, k: usize) -> C64 {
        self.weights[k]
    }

    pub fn kind(&self) -> EnvelopeKind {
        self.kind
    }

    pub fn truncation(&self) -> Option<Truncation> {
        self.truncation
    }

    pub fn is_flat(&self) -> bool {
        matches!(self.kind, EnvelopeKind::Flat)
    }

    /// The envelope as a clock vector `|phi>_T`.
    pub fn to_state(&self) -> StateVector {
        StateVector::from_slice(vec![self.grid.label()], &self.weights)
            .expect("envelope length matches its grid")
    }

    /// Spectral time derivative of the continuum weight, in stored units.
    pub fn derivative(&self) -> Vec<C64> {
        // d/dt = i Omega
        let omega = OmegaTransform::new(&self.grid);
        omega
            .apply(&self.weights)
            .into_iter()
            .map(|z| z * C64::i())
            .collect()
    }
}

/// `‖([T, Omega] - i) g‖ / ‖g‖` for a clock vector `g`.
pub fn commutator_defect(grid: &ClockGrid, g: &[C64]) -> f64 {
    assert_eq!(g.len(), grid.len());
    let omega = OmegaTransform::new(grid);
    let times = grid.times();
    let omega_g = omega.apply(g);
    let tg: Vec<C64> = g.iter().zip(&times).map(|(z, &t)| z * t).collect();
    let omega_tg = omega.apply(&tg);
    let mut num = 0.0;
    let mut den = 0.0;
    for k in 0..grid.len() {
        let r = times[k] * omega_g[k] - omega_tg[k] - C64::i() * g[k];
        num += r.norm_sqr();
        den += g[k].norm_sqr();
    }
    (num / den).sqrt()
}

/// Commutator defect on a Gaussian of width `n` centered in the window.
pub fn commutator_floor(grid: &ClockGrid, n: f64) -> Result<f64> {
    let center = 0.5 * (grid.t_min() + grid.t_max());
    let env = Envelope::gaussian_at(grid, n, center)?;
    Ok(commutator_defect(grid, env.weights()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{apply, HermitianEigen};

    #[test]
    fn make_grid_basic() {
        let g = ClockGrid::new(8, 0.0, 8.0).unwrap();
        assert_eq!(g.dt(), 1.0);
        assert_eq!(g.times(), (0..8).map(f64::from).collect::<Vec<_>>());
    }

    #[test]
    fn make_grid_frequency_lattice() {
        let g = ClockGrid::new(8, -4.0, 4.0).unwrap();
        assert_eq!(g.time(0), -4.0);
        assert!((g.d_omega() - PI / 4.0).abs() < 1e-15);
        let ws: Vec<f64> = g.frequency_indices().map(|j| g.frequency(j)).collect();
        assert_eq!(ws.len(), 8);
        assert!((ws[0] + PI).abs() < 1e-15);
        assert!((ws[7] - 3.0 * PI / 4.0).abs() < 1e-15);
    }

    #[test]
    fn make_grid_rejects_bad_input() {
        assert!(ClockGrid::new(7, 0.0, 1.0).is_err());
        assert!(ClockGrid::new(4, 0.0, 1.0).is_err());
        assert!(ClockGrid::new(8, 1.0, 1.0).is_err());
        assert!(ClockGrid::new(8, 0.0, f64::NAN).is_err());
    }

    #[test]
    fn nearest_index_snaps_and_guards() {
        let g = ClockGrid::new(8, 0.0, 8.0).unwrap();
        assert_eq!(g.nearest_index(2.4).unwrap(), 2);
        assert_eq!(g.nearest_index(2.6).unwrap(), 3);
        assert_eq!(g.nearest_index(7.4).unwrap(), 7);
        assert!(g.nearest_index(7.6).is_err());
        assert!(g.nearest_index(-0.6).is_err());
    }

    #[test]
    fn time_operator_diagonal_and_trace() {
        let g = ClockGrid::new(8, 0.0, 8.0).unwrap();
        let t = time_operator(&g);
        for k in 0..8 {
            assert_eq!(t.matrix()[(k, k)], C64::from(k as f64));
        }
        let g = ClockGrid::new(16, -1.5, 2.5).unwrap();
        let t = time_operator(&g);
        let trace: f64 = (0..16).map(|k| t.matrix()[(k, k)].re).sum();
        let closed = 16.0 * (g.t_min() + 15.0 * g.dt() / 2.0);
        assert!((trace - closed).abs() < 1e-12);
    }

    #[test]
    fn omega_flat_vector_is_null() {
        let g = ClockGrid::new(32, -3.0, 5.0).unwrap();
        let om = omega_operator(&g);
        let flat = Envelope::flat(&g).to_state();
        let out = apply(&om, &flat).unwrap();
        assert!(out.norm() < 1e-12);
    }

    #[test]
    fn omega_eigenrelation_on_sampled_waves() {
        let g = ClockGrid::new(32, -3.0, 5.0).unwrap();
        let om = omega_operator(&g);
        let fft = OmegaTransform::new(&g);
        for j in g.frequency_indices() {
            let w = g.frequency(j);
            let col: Vec<C64> = g.times().iter().map(|&t| C64::from_polar(1.0, w * t)).collect();
            let v = StateVector::from_slice(vec![g.label()], &col).unwrap();
            let dense = apply(&om, &v).unwrap();
            let spectral = fft.apply(&col);
            for k in 0..g.len() {
                assert!((dense.amplitudes()[k] - col[k] * w).norm() < 1e-10);
                assert!((spectral[k] - col[k] * w).norm() < 1e-10);
            }
        }
    }

    #[test]
    fn omega_spectrum_is_the_lattice() {
        let g = ClockGrid::new(8, 0.0, 3.0).unwrap();
        let om = omega_operator(&g);
        assert!(om.hermitian_deviation() <= 1e-10);
        let eig = HermitianEigen::new(&om).unwrap().sorted_eigenvalues();
        let lattice: Vec<f64> = g.frequency_indices().map(|j| g.frequency(j)).collect();
        for (a, b) in eig.iter().zip(&lattice) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn frequency_vectors_orthonormal() {
        let g = ClockGrid::new(16, -2.0, 2.0).unwrap();
        let zero = frequency_vector(&g, 0).unwrap();
        let s = 1.0 / 4.0;
        assert!(zero.amplitudes().iter().all(|z| (z - C64::from(s)).norm() < 1e-15));
        for j in g.frequency_indices() {
            let a = frequency_vector(&g, j).unwrap();
            for l in g.frequency_indices() {
                let b = frequency_vector(&g, l).unwrap();
                let expected = if j == l { 1.0 } else { 0.0 };
                assert!((a.inner(&b).unwrap() - C64::from(expected)).norm() < 1e-13);
            }
        }
        assert!(frequency_vector(&g, 8).is_err());
        assert!(frequency_vector(&g, -9).is_err());
    }

    #[test]
    fn gaussian_overlap_is_sampled_fourier_transform() {
        let g = ClockGrid::new(256, -16.0, 16.0).unwrap();
        let n = 2.0;
        let env = Envelope::gaussian(&g, n).unwrap();
        let phi = env.to_state();
        for j in [-20i64, -3, 0, 1, 7, 25] {
            let w = g.frequency(j);
            let overlap = frequency_vector(&g, j).unwrap().inner(&phi).unwrap();
            // continuum transform of (2/(n pi))^{1/4} exp(-t^2/n)
            let ft = (2.0 / (n * PI)).powf(0.25) * (n / 2.0).sqrt() * (-n * w * w / 4.0).exp();
            let expected = g.d_omega().sqrt() * ft;
            assert!((overlap - C64::from(expected)).norm() < 1e-3, "j={j}");
        }
    }

    #[test]
    fn gaussian_second_moment() {
        let g = ClockGrid::new(256, -8.0, 8.0).unwrap();
        let env = Envelope::gaussian(&g, 1.0).unwrap();
        let norm: f64 = env.weights().iter().map(|w| w.norm_sqr()).sum();
        assert!((norm - 1.0).abs() < 1e-12);
        let m2: f64 = env
            .weights()
            .iter()
            .zip(g.times())
            .map(|(w, t)| w.norm_sqr() * t * t)
            .sum();
        assert!((m2 - 0.25).abs() < 0.0025, "{m2}");
        assert!(env.truncation().is_none());
    }

    #[test]
    fn gaussian_wide_limit_is_flat() {
        let g = ClockGrid::new(64, -1.0, 1.0).unwrap();
        let env = Envelope::gaussian(&g, 1e9).unwrap();
        let mags: Vec<f64> = env.weights().iter().map(|w| w.norm()).collect();
        let ratio = mags.iter().cloned().fold(0.0, f64::max) / mags.iter().cloned().fold(1.0, f64::min);
        assert!(ratio < 1.0 + 1e-8);
    }

    #[test]
    fn gaussian_off_window_is_flagged() {
        let g = ClockGrid::new(64, 2.0, 10.0).unwrap();
        let env = Envelope::gaussian(&g, 1.0).unwrap();
        assert!(env.truncation().is_some());
        let far = ClockGrid::new(64, 1000.0, 1001.0).unwrap();
        assert_eq!(Envelope::gaussian(&far, 0.01), Err(Error::DegenerateEnvelope));
    }

    #[test]
    fn commutator_floor_small_and_shrinking() {
        let c256 = commutator_floor(&ClockGrid::new(256, -32.0, 32.0).unwrap(), 0.5).unwrap();
        let c512 = commutator_floor(&ClockGrid::new(512, -32.0, 32.0).unwrap(), 0.5).unwrap();
        assert!(c256 <= 0.01, "{c256}");
        assert!(c512 <= c256 / 2.0, "{c512} vs {c256}");
    }

    #[test]
    fn to_frequency_matches_overlaps() {
        let g = ClockGrid::new(16, -1.0, 3.0).unwrap();
        let data: Vec<C64> = (0..16).map(|k| C64::new((k as f64).sin(), 0.1 * k as f64)).collect();
        let v = StateVector::from_slice(vec![g.label()], &data).unwrap();
        let spec = OmegaTransform::new(&g).to_frequency(&data);
        for (i, j) in g.frequency_indices().enumerate() {
            let direct = frequency_vector(&g, j).unwrap().inner(&v).unwrap();
            assert!((spec[i] - direct).norm() < 1e-13);
        }
    }
}
