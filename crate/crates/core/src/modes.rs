//! Laguerre-Gauss mode basis of a parabolic graded-index fiber.
//!
//! The guided modes of an ideal parabolic-profile fiber are the
//! Laguerre-Gauss solutions of a 2-D harmonic oscillator with fundamental
//! waist `w = sqrt(a λ / (π NA))`, where `a` is the core radius. Modes are
//! ordered by their group order `2p + |l|`; the number of guided modes per
//! polarization is approximately `V²/8` with `V = 2π a NA / λ`.
//!
//! The basis is rendered once on a square detection grid. Detection is
//! modeled as a coherent projection onto a unit-norm Gaussian collection
//! mode (the core mode of a collection fiber placed at the detector
//! position); [`ModeBasis::collection_vector`] precomputes the overlap of
//! that collection mode with every basis mode so downstream rate
//! computations reduce to small dot products.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Errors from basis construction and detector geometry.
#[derive(Debug, Error)]
pub enum ModeError {
    #[error("fiber parameter {name} must be positive, got {value}")]
    InvalidFiber { name: &'static str, value: f64 },
    #[error("mode truncation {requested} exceeds the fiber capacity of {capacity} modes")]
    TruncationExceedsCapacity { requested: usize, capacity: usize },
    #[error(
        "grid too coarse: {samples_across:.2} samples across the fundamental waist (need >= 8)"
    )]
    GridTooCoarse { samples_across: f64 },
    #[error(
        "grid side {side_um} um must cover at least 3 fundamental waists ({required_um:.1} um)"
    )]
    GridTooSmall { side_um: f64, required_um: f64 },
    #[error("grid needs at least 64 samples per side, got {samples}")]
    TooFewSamples { samples: usize },
    #[error("detector at ({x_um}, {y_um}) um lies outside the grid (half side {half_um} um)")]
    DetectorOutsideGrid { x_um: f64, y_um: f64, half_um: f64 },
    #[error("coefficient vector has {got} entries but the basis holds {expected} modes")]
    CoefficientLength { got: usize, expected: usize },
    #[error("field was rendered on a different grid ({got} vs {expected} samples)")]
    GridMismatch { got: usize, expected: usize },
}

/// Geometry and truncation of the multimode fiber.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FiberSpec {
    /// Core radius in micrometers.
    pub core_radius_um: f64,
    /// Numerical aperture of the fiber.
    pub numerical_aperture: f64,
    /// Vacuum wavelength of the guided light in nanometers.
    pub wavelength_nm: f64,
    /// Number of guided modes kept in the simulation.
    pub mode_truncation: usize,
}

impl FiberSpec {
    /// Validate positivity of the geometric parameters.
    pub fn validate(&self) -> Result<(), ModeError> {
        for (name, value) in [
            ("core_radius_um", self.core_radius_um),
            ("numerical_aperture", self.numerical_aperture),
            ("wavelength_nm", self.wavelength_nm),
        ] {
            if value <= 0.0 || !value.is_finite() {
                return Err(ModeError::InvalidFiber { name, value });
            }
        }
        if self.mode_truncation == 0 {
            return Err(ModeError::InvalidFiber {
                name: "mode_truncation",
                value: 0.0,
            });
        }
        Ok(())
    }

    /// Normalized frequency `V = 2π a NA / λ`.
    pub fn v_number(&self) -> f64 {
        let wavelength_um = self.wavelength_nm * 1e-3;
        2.0 * std::f64::consts::PI * self.core_radius_um * self.numerical_aperture / wavelength_um
    }

    /// Guided-mode capacity per polarization for a parabolic profile, `V²/8`.
    pub fn mode_capacity(&self) -> usize {
        (self.v_number().powi(2) / 8.0).floor() as usize
    }

    /// Fundamental-mode waist `w = sqrt(a λ / (π NA))` in micrometers
    /// (1/e² intensity radius); also the speckle grain scale at the facet.
    pub fn fundamental_waist_um(&self) -> f64 {
        let wavelength_um = self.wavelength_nm * 1e-3;
        (self.core_radius_um * wavelength_um / (std::f64::consts::PI * self.numerical_aperture))
            .sqrt()
    }
}

/// Square detection grid centered on the fiber axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    /// Physical side length in micrometers.
    pub side_um: f64,
    /// Samples per side.
    pub samples: usize,
}

impl GridSpec {
    /// Sample pitch in micrometers.
    pub fn pitch_um(&self) -> f64 {
        self.side_um / self.samples as f64
    }

    /// Area element of one pixel in square micrometers.
    pub fn pixel_area_um2(&self) -> f64 {
        self.pitch_um() * self.pitch_um()
    }

    /// Coordinate of pixel center `i` along either axis.
    pub fn coord_um(&self, i: usize) -> f64 {
        -0.5 * self.side_um + (i as f64 + 0.5) * self.pitch_um()
    }

    /// Total pixel count.
    pub fn len(&self) -> usize {
        self.samples * self.samples
    }

    /// True when the grid holds no pixels.
    pub fn is_empty(&self) -> bool {
        self.samples == 0
    }

    /// Flat row-major index for pixel `(ix, iy)`; `iy` is the slow axis.
    pub fn index(&self, ix: usize, iy: usize) -> usize {
        iy * self.samples + ix
    }
}

/// Radial and azimuthal indices of one Laguerre-Gauss mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModeIndex {
    pub radial: u32,
    pub azimuthal: i32,
}

impl ModeIndex {
    /// Mode-group order `2p + |l|`; modes of one group are near-degenerate.
    pub fn group(&self) -> u32 {
        2 * self.radial + self.azimuthal.unsigned_abs()
    }
}

/// Enumerate the first `count` mode indices ordered by group, then by
/// ascending azimuthal index within the group. The first mode is (p=0, l=0).
pub fn mode_indices(count: usize) -> Vec<ModeIndex> {
    let mut out = Vec::with_capacity(count);
    let mut group = 0u32;
    while out.len() < count {
        let g = group as i32;
        let mut l = -g;
        while l <= g && out.len() < count {
            out.push(ModeIndex {
                radial: ((g - l.abs()) / 2) as u32,
                azimuthal: l,
            });
            l += 2;
        }
        group += 1;
    }
    out
}

/// A complex scalar field sampled on a [`GridSpec`].
#[derive(Debug, Clone)]
pub struct ComplexField {
    pub grid: GridSpec,
    /// Row-major pixel values.
    pub values: DVector<Complex64>,
}

impl ComplexField {
    /// Total power `∫ |E|² dA` by pairwise summation over pixels.
    pub fn total_power(&self) -> f64 {
        let norms: Vec<f64> = self.values.iter().map(|z| z.norm_sqr()).collect();
        crate::metrics::pairwise_sum(&norms) * self.grid.pixel_area_um2()
    }

    /// Intensity `|E|²` per pixel.
    pub fn intensity(&self) -> Vec<f64> {
        self.values.iter().map(|z| z.norm_sqr()).collect()
    }
}

/// Position and collection-mode size of a detector.
///
/// The collection mode is a unit-norm Gaussian of waist `radius_um`
/// centered at `(x_um, y_um)`: the fundamental mode of the collection
/// fiber the detector feeds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorSpec {
    pub x_um: f64,
    pub y_um: f64,
    pub radius_um: f64,
}

impl DetectorSpec {
    pub fn new(x_um: f64, y_um: f64, radius_um: f64) -> Self {
        Self {
            x_um,
            y_um,
            radius_um,
        }
    }

    fn check_inside(&self, grid: &GridSpec) -> Result<(), ModeError> {
        let half = 0.5 * grid.side_um;
        if self.x_um.abs() >= half
            || self.y_um.abs() >= half
            || self.radius_um <= 0.0
            || !self.radius_um.is_finite()
        {
            return Err(ModeError::DetectorOutsideGrid {
                x_um: self.x_um,
                y_um: self.y_um,
                half_um: half,
            });
        }
        Ok(())
    }

    /// Amplitude of the collection Gaussian at `(x, y)`, normalized so the
    /// mode carries unit power: `g(r) = sqrt(2/π)/w · exp(−|r−r₀|²/w²)`.
    pub fn mode_amplitude(&self, x_um: f64, y_um: f64) -> f64 {
        let w = self.radius_um;
        let d2 = (x_um - self.x_um).powi(2) + (y_um - self.y_um).powi(2);
        (2.0 / std::f64::consts::PI).sqrt() / w * (-d2 / (w * w)).exp()
    }
}

/// The rendered Laguerre-Gauss basis: mode fields sampled on the grid.
#[derive(Debug, Clone)]
pub struct ModeBasis {
    pub fiber: FiberSpec,
    pub grid: GridSpec,
    /// Fundamental waist in micrometers (cached from the fiber spec).
    pub waist_um: f64,
    pub indices: Vec<ModeIndex>,
    /// Pixel-major matrix: `fields[(pixel, mode)]`.
    fields: DMatrix<Complex64>,
}

impl ModeBasis {
    /// Build and render the basis, enforcing capacity and sampling limits.
    pub fn new(fiber: FiberSpec, grid: GridSpec) -> Result<Self, ModeError> {
        fiber.validate()?;
        let capacity = fiber.mode_capacity();
        if fiber.mode_truncation > capacity {
            return Err(ModeError::TruncationExceedsCapacity {
                requested: fiber.mode_truncation,
                capacity,
            });
        }
        if grid.samples < 64 {
            return Err(ModeError::TooFewSamples {
                samples: grid.samples,
            });
        }
        let waist = fiber.fundamental_waist_um();
        let samples_across = waist / grid.pitch_um();
        if samples_across < 8.0 {
            return Err(ModeError::GridTooCoarse { samples_across });
        }
        if grid.side_um < 3.0 * waist {
            return Err(ModeError::GridTooSmall {
                side_um: grid.side_um,
                required_um: 3.0 * waist,
            });
        }

        let indices = mode_indices(fiber.mode_truncation);
        let n_px = grid.len();
        let columns: Vec<Vec<Complex64>> = indices
            .par_iter()
            .map(|idx| render_mode(idx, waist, &grid))
            .collect();
        let mut fields = DMatrix::zeros(n_px, indices.len());
        for (m, col) in columns.iter().enumerate() {
            for (p, &z) in col.iter().enumerate() {
                fields[(p, m)] = z;
            }
        }
        Ok(Self {
            fiber,
            grid,
            waist_um: waist,
            indices,
            fields,
        })
    }

    /// Number of modes in the basis.
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    /// True when the basis holds no modes (never after construction).
    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Superpose the basis with `coeffs` into a field on the grid.
    pub fn render_field(&self, coeffs: &DVector<Complex64>) -> Result<ComplexField, ModeError> {
        if coeffs.len() != self.len() {
            return Err(ModeError::CoefficientLength {
                got: coeffs.len(),
                expected: self.len(),
            });
        }
        Ok(ComplexField {
            grid: self.grid,
            values: &self.fields * coeffs,
        })
    }

    /// Overlap `⟨g_det|φ_n⟩` of the detector collection mode with every
    /// basis mode. The Gaussian is evaluated on a window of ±6 waists
    /// around the detector; the truncated tail is below 1e−15 relative.
    pub fn collection_vector(&self, det: &DetectorSpec) -> Result<DVector<Complex64>, ModeError> {
        det.check_inside(&self.grid)?;
        let g = &self.grid;
        let reach = 6.0 * det.radius_um;
        let pitch = g.pitch_um();
        let to_idx = |c: f64| ((c + 0.5 * g.side_um) / pitch).floor();
        let clamp = |v: f64| (v.max(0.0) as usize).min(g.samples - 1);
        let ix0 = clamp(to_idx(det.x_um - reach));
        let ix1 = clamp(to_idx(det.x_um + reach));
        let iy0 = clamp(to_idx(det.y_um - reach));
        let iy1 = clamp(to_idx(det.y_um + reach));

        let mut acc = DVector::<Complex64>::zeros(self.len());
        let area = g.pixel_area_um2();
        for iy in iy0..=iy1 {
            let y = g.coord_um(iy);
            for ix in ix0..=ix1 {
                let x = g.coord_um(ix);
                let gv = det.mode_amplitude(x, y) * area;
                if gv == 0.0 {
                    continue;
                }
                let px = g.index(ix, iy);
                let row = self.fields.row(px);
                for m in 0..self.len() {
                    acc[m] += gv * row[m];
                }
            }
        }
        Ok(acc)
    }

    /// Gram matrix `∫ φ_m* φ_n dA` of the rendered basis (validation aid).
    pub fn gram_matrix(&self) -> DMatrix<Complex64> {
        let area = Complex64::new(self.grid.pixel_area_um2(), 0.0);
        self.fields.adjoint() * &self.fields * area
    }

    /// Per-pixel mean intensity under uniform incoherent illumination of
    /// all modes: the envelope every speckle pattern shares.
    pub fn mean_intensity_envelope(&self) -> Vec<f64> {
        let norm = 1.0 / self.len() as f64;
        (0..self.grid.len())
            .map(|px| {
                self.fields
                    .row(px)
                    .iter()
                    .map(|z| z.norm_sqr())
                    .sum::<f64>()
                    * norm
            })
            .collect()
    }
}

/// Coherent overlap `⟨g_det|field⟩` evaluated over the whole grid.
///
/// This is the reference path for detection; rate computations use the
/// algebraically identical [`ModeBasis::collection_vector`] contraction.
pub fn collection_amplitude(
    field: &ComplexField,
    det: &DetectorSpec,
) -> Result<Complex64, ModeError> {
    det.check_inside(&field.grid)?;
    let g = &field.grid;
    let area = g.pixel_area_um2();
    let mut acc = Complex64::new(0.0, 0.0);
    for iy in 0..g.samples {
        let y = g.coord_um(iy);
        for ix in 0..g.samples {
            let x = g.coord_um(ix);
            let gv = det.mode_amplitude(x, y);
            if gv != 0.0 {
                acc += gv * field.values[g.index(ix, iy)];
            }
        }
    }
    Ok(acc * area)
}

/// Evaluate one normalized Laguerre-Gauss mode over the grid.
fn render_mode(idx: &ModeIndex, waist_um: f64, grid: &GridSpec) -> Vec<Complex64> {
    let p = idx.radial;
    let l_abs = idx.azimuthal.unsigned_abs();
    let l = idx.azimuthal;
    // sqrt(p! / (p+|l|)!) as a stable product.
    let mut fact_ratio_sqrt = 1.0f64;
    for j in 1..=l_abs {
        fact_ratio_sqrt /= ((p + j) as f64).sqrt();
    }
    let norm = (2.0 / std::f64::consts::PI).sqrt() * fact_ratio_sqrt / waist_um;

    let mut out = Vec::with_capacity(grid.len());
    for iy in 0..grid.samples {
        let y = grid.coord_um(iy);
        for ix in 0..grid.samples {
            let x = grid.coord_um(ix);
            let r2 = x * x + y * y;
            let rho2 = 2.0 * r2 / (waist_um * waist_um);
            let radial = norm
                * rho2.powf(l_abs as f64 / 2.0)
                * laguerre(p, l_abs as f64, rho2)
                * (-r2 / (waist_um * waist_um)).exp();
            let phase = l as f64 * y.atan2(x);
            out.push(Complex64::new(phase.cos(), phase.sin()) * radial);
        }
    }
    out
}

/// Generalized Laguerre polynomial `L_p^α(x)` by the three-term recurrence.
fn laguerre(p: u32, alpha: f64, x: f64) -> f64 {
    if p == 0 {
        return 1.0;
    }
    let mut lm1 = 1.0;
    let mut lk = 1.0 + alpha - x;
    for k in 2..=p {
        let kf = k as f64;
        let next = ((2.0 * kf - 1.0 + alpha - x) * lk - (kf - 1.0 + alpha) * lm1) / kf;
        lm1 = lk;
        lk = next;
    }
    lk
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    pub fn default_fiber(truncation: usize) -> FiberSpec {
        FiberSpec {
            core_radius_um: 25.0,
            numerical_aperture: 0.2,
            wavelength_nm: 807.6,
            mode_truncation: truncation,
        }
    }

    pub fn default_grid() -> GridSpec {
        GridSpec {
            side_um: 120.0,
            samples: 256,
        }
    }

    #[test]
    fn capacity_and_waist_for_default_geometry() {
        let f = default_fiber(30);
        // V = 2π·25·0.2/0.8076 = 38.90 → V²/8 = 189 modes.
        assert!((f.v_number() - 38.90).abs() < 0.01);
        assert_eq!(f.mode_capacity(), 189);
        assert!((150..=400).contains(&f.mode_capacity()));
        // w = sqrt(25·0.8076 / (π·0.2)) = 5.669 µm.
        assert!((f.fundamental_waist_um() - 5.669).abs() < 1e-3);
    }

    #[test]
    fn mode_ordering_starts_with_fundamental() {
        let idx = mode_indices(6);
        assert_eq!(
            idx[0],
            ModeIndex {
                radial: 0,
                azimuthal: 0
            }
        );
        assert_eq!(
            idx[1],
            ModeIndex {
                radial: 0,
                azimuthal: -1
            }
        );
        assert_eq!(
            idx[2],
            ModeIndex {
                radial: 0,
                azimuthal: 1
            }
        );
        // group 2: l = -2, 0, 2 with p = 0, 1, 0
        assert_eq!(
            idx[3],
            ModeIndex {
                radial: 0,
                azimuthal: -2
            }
        );
        assert_eq!(
            idx[4],
            ModeIndex {
                radial: 1,
                azimuthal: 0
            }
        );
        assert_eq!(
            idx[5],
            ModeIndex {
                radial: 0,
                azimuthal: 2
            }
        );
        // groups are filled in nondecreasing order
        let many = mode_indices(60);
        for pair in many.windows(2) {
            assert!(pair[0].group() <= pair[1].group());
        }
    }

    #[test]
    fn rendered_basis_is_orthonormal() {
        for truncation in [30usize, 60] {
            let basis = ModeBasis::new(default_fiber(truncation), default_grid()).unwrap();
            let gram = basis.gram_matrix();
            let mut worst = 0.0f64;
            for i in 0..truncation {
                for j in 0..truncation {
                    let target = if i == j { 1.0 } else { 0.0 };
                    worst = worst.max((gram[(i, j)] - Complex64::new(target, 0.0)).norm());
                }
            }
            assert!(
                worst < 1e-3,
                "Gram deviation {worst:.2e} at truncation {truncation}"
            );
        }
    }

    #[test]
    fn parseval_holds_on_the_grid() {
        let basis = ModeBasis::new(default_fiber(30), default_grid()).unwrap();
        let mut rng = crate::seeds::stream(5, "parseval", 0);
        let coeffs = crate::fiber::random_unit_vector(30, &mut rng);
        let field = basis.render_field(&coeffs).unwrap();
        let power = field.total_power();
        assert!(
            (power - 1.0).abs() < 1e-3,
            "unit-norm coefficients carry grid power {power}"
        );
    }

    #[test]
    fn capacity_violation_is_rejected() {
        let err = ModeBasis::new(default_fiber(200), default_grid()).unwrap_err();
        assert!(matches!(
            err,
            ModeError::TruncationExceedsCapacity {
                requested: 200,
                capacity: 189
            }
        ));
    }

    #[test]
    fn coarse_grid_is_rejected() {
        // 120 µm over 64 samples: 1.875 µm pitch → ~3 samples per waist.
        let err = ModeBasis::new(
            default_fiber(30),
            GridSpec {
                side_um: 120.0,
                samples: 64,
            },
        )
        .unwrap_err();
        assert!(matches!(err, ModeError::GridTooCoarse { .. }));
    }

    #[test]
    fn detector_outside_grid_is_rejected() {
        let basis = ModeBasis::new(default_fiber(30), default_grid()).unwrap();
        let det = DetectorSpec::new(70.0, 0.0, 4.0);
        assert!(matches!(
            basis.collection_vector(&det),
            Err(ModeError::DetectorOutsideGrid { .. })
        ));
    }

    #[test]
    fn collection_self_overlap_is_unity() {
        let basis = ModeBasis::new(default_fiber(30), default_grid()).unwrap();
        let det = DetectorSpec::new(3.0, -2.0, 4.0);
        let g: Vec<Complex64> = {
            let grid = basis.grid;
            let mut v = Vec::with_capacity(grid.len());
            for iy in 0..grid.samples {
                for ix in 0..grid.samples {
                    v.push(Complex64::new(
                        det.mode_amplitude(grid.coord_um(ix), grid.coord_um(iy)),
                        0.0,
                    ));
                }
            }
            v
        };
        let field = ComplexField {
            grid: basis.grid,
            values: DVector::from_vec(g),
        };
        let amp = collection_amplitude(&field, &det).unwrap();
        assert!(
            (amp - Complex64::new(1.0, 0.0)).norm() < 1e-6,
            "self overlap {amp}"
        );
    }

    #[test]
    fn collection_vector_matches_reference_path() {
        // The windowed mode-space contraction and the full-grid overlap are
        // the same sum in different orders; they must agree far below the
        // physics tolerances.
        let basis = ModeBasis::new(default_fiber(30), default_grid()).unwrap();
        let det = DetectorSpec::new(-5.0, 4.0, 4.0);
        let mut rng = crate::seeds::stream(17, "cv", 0);
        let coeffs = crate::fiber::random_unit_vector(30, &mut rng);
        let field = basis.render_field(&coeffs).unwrap();
        let via_field = collection_amplitude(&field, &det).unwrap();
        let via_vector = basis.collection_vector(&det).unwrap().transpose() * &coeffs;
        assert!((via_field - via_vector[(0, 0)]).norm() < 1e-10);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(8))]
        #[test]
        fn rendering_is_linear(seed in 0u64..1000, a_re in -2.0f64..2.0, b_im in -2.0f64..2.0) {
            let basis = ModeBasis::new(
                default_fiber(12),
                GridSpec { side_um: 80.0, samples: 128 },
            )
            .unwrap();
            let mut rng = crate::seeds::stream(seed, "linear", 0);
            let c1 = crate::fiber::random_unit_vector(12, &mut rng);
            let c2 = crate::fiber::random_unit_vector(12, &mut rng);
            let a = Complex64::new(a_re, 0.3);
            let b = Complex64::new(-0.7, b_im);
            let combined = basis.render_field(&(&c1 * a + &c2 * b)).unwrap();
            let separate = basis.render_field(&c1).unwrap().values * a
                + basis.render_field(&c2).unwrap().values * b;
            let worst = (&combined.values - &separate)
                .iter()
                .map(|z| z.norm())
                .fold(0.0f64, f64::max);
            prop_assert!(worst < 1e-12, "linearity violated by {}", worst);
        }
    }
}
