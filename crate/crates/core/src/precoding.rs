//! Zero-forcing precoders, their quantized and estimated versions, and the
//! equivalent perturbation `Delta` with `H * P = D (I + Delta)`.
//!
//! With `Q = I + D^-1 F`, the ideal precoder is `Q^-1` and a perturbed one is
//! `(Q + E1)^-1 + E2`, where `E1` is channel-estimation error and `E2` is
//! quantization error. Then `Delta = Q E2 - E1 (Q + E1)^-1`.

use rand::RngCore;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::channel::ChannelSnapshot;
use crate::error::{Error, Result};
use crate::linalg::{invert_refined, CMatrix, C64};
use crate::rng::{self, Purpose};

/// Relative tolerance on `H * P - D (I + Delta)`.
pub const IDENTITY_TOLERANCE: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum E1Model {
    #[default]
    None,
    /// Complex Gaussian entries, row `i` with variance `1 / (n_samples * SNR_i)`.
    Gaussian { n_samples: u64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum E2Model {
    /// Round every component to the nearest multiple of `2^-d`.
    #[default]
    DeterministicRounding,
    /// Add i.i.d. uniform `[-2^-d, 2^-d]` noise to every component.
    UniformRandom,
    /// No quantization error.
    Zero,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerturbationSpec {
    /// Bits per real or imaginary component, sign excluded.
    pub d_bits: u32,
    #[serde(default)]
    pub e1_model: E1Model,
    #[serde(default)]
    pub e2_model: E2Model,
    #[serde(default)]
    pub seed: u64,
    /// Scale the precoder into the unit box before quantizing instead of
    /// rejecting out-of-range entries. Rounding only.
    #[serde(default)]
    pub normalize: bool,
}

impl PerturbationSpec {
    pub fn new(d_bits: u32, e2_model: E2Model, seed: u64) -> Self {
        Self {
            d_bits,
            e1_model: E1Model::None,
            e2_model,
            seed,
            normalize: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=52).contains(&self.d_bits) {
            return Err(Error::InvalidParams(format!(
                "word length must be between 1 and 52 bits, got {}",
                self.d_bits
            )));
        }
        if let E1Model::Gaussian { n_samples: 0 } = self.e1_model {
            return Err(Error::InvalidParams("estimation needs at least one sample".into()));
        }
        Ok(())
    }

    /// Quantization step `2^-d`.
    pub fn step(&self) -> f64 {
        (-(self.d_bits as f64)).exp2()
    }
}

/// `Q^-1` with `Q = I + D^-1 F`, so that `H * P = diag(D)`.
pub fn ideal_precoder(snapshot: &ChannelSnapshot) -> Result<CMatrix> {
    invert_refined(&snapshot.normalized())
        .map(|(inv, _)| inv)
        .map_err(|condition| Error::SingularChannel {
            tone: None,
            freq: snapshot.freq,
            condition,
        })
}

/// A quantized precoder. The stored fixed-point matrix is `stored`; the
/// precoder actually applied is `scale * stored = p + e2`.
#[derive(Clone, Debug)]
pub struct QuantizedPrecoder {
    pub stored: CMatrix,
    pub scale: f64,
    /// Effective error `scale * stored - p`.
    pub e2: CMatrix,
}

impl QuantizedPrecoder {
    pub fn effective(&self) -> CMatrix {
        &self.stored * C64::new(self.scale, 0.0)
    }
}

fn check_unit_box(p: &CMatrix) -> Result<()> {
    for i in 0..p.nrows() {
        for j in 0..p.ncols() {
            let z = p[(i, j)];
            for value in [z.re, z.im] {
                if !(value.abs() <= 1.0) {
                    return Err(Error::RangeError { row: i, col: j, value });
                }
            }
        }
    }
    Ok(())
}

fn round_to_step(x: f64, levels: f64) -> f64 {
    (x * levels).round() / levels
}

/// Quantizes `p` per `spec`. Uniform draws come from the stream addressed by
/// `(spec.seed, cell)`.
pub fn quantize_precoder(p: &CMatrix, spec: &PerturbationSpec, cell: u64) -> Result<QuantizedPrecoder> {
    spec.validate()?;
    // Only a rounding quantizer has a storage range; uniform errors are drawn
    // directly in the unit of the precoder.
    let rounding = spec.e2_model == E2Model::DeterministicRounding;
    let scale = if rounding && spec.normalize {
        let largest = p
            .iter()
            .map(|z| z.re.abs().max(z.im.abs()))
            .fold(0.0, f64::max);
        if largest.is_finite() && largest > 1.0 {
            largest
        } else {
            1.0
        }
    } else {
        1.0
    };
    let scaled = if scale == 1.0 { p.clone() } else { p / C64::new(scale, 0.0) };
    if rounding {
        check_unit_box(&scaled)?;
    }

    let stored = match spec.e2_model {
        E2Model::Zero => scaled.clone(),
        E2Model::DeterministicRounding => {
            let levels = (spec.d_bits as f64).exp2();
            scaled.map(|z| C64::new(round_to_step(z.re, levels), round_to_step(z.im, levels)))
        }
        E2Model::UniformRandom => {
            let mut draws = rng::stream(spec.seed, Purpose::QuantizationError, cell);
            &scaled + uniform_error(scaled.nrows(), spec.step(), &mut draws)
        }
    };
    let e2 = (&stored - &scaled) * C64::new(scale, 0.0);
    Ok(QuantizedPrecoder { stored, scale, e2 })
}

/// `p x p` matrix with i.i.d. uniform `[-step, step)` real and imaginary
/// parts, drawn row-major, real part first.
pub fn uniform_error<R: RngCore>(p: usize, step: f64, rng: &mut R) -> CMatrix {
    let mut m = CMatrix::zeros(p, p);
    for i in 0..p {
        for j in 0..p {
            let re = rng::symmetric_uniform(rng);
            let im = rng::symmetric_uniform(rng);
            m[(i, j)] = C64::new(step * re, step * im);
        }
    }
    m
}

/// Estimation error with row `i` of variance `1 / (n_samples * snr[i])`,
/// split evenly between real and imaginary parts.
pub fn gaussian_error<R: RngCore>(n_samples: u64, snr: &[f64], rng: &mut R) -> Result<CMatrix> {
    let p = snr.len();
    if n_samples == 0 {
        return Err(Error::InvalidParams("estimation needs at least one sample".into()));
    }
    let mut m = CMatrix::zeros(p, p);
    for (i, &s) in snr.iter().enumerate() {
        if !(s > 0.0 && s.is_finite()) {
            return Err(Error::InvalidParams(format!(
                "estimation error needs a positive finite SNR, user {i} has {s}"
            )));
        }
        let sd = (0.5 / (n_samples as f64 * s)).sqrt();
        for j in 0..p {
            let re: f64 = StandardNormal.sample(rng);
            let im: f64 = StandardNormal.sample(rng);
            m[(i, j)] = C64::new(sd * re, sd * im);
        }
    }
    Ok(m)
}

/// `Q E2 - E1 (Q + E1)^-1`, checked against `H * P = D (I + Delta)`.
pub fn build_delta(snapshot: &ChannelSnapshot, e1: &CMatrix, e2: &CMatrix) -> Result<CMatrix> {
    Ok(build_bundle_parts(snapshot, e1, e2)?.1)
}

fn build_bundle_parts(snapshot: &ChannelSnapshot, e1: &CMatrix, e2: &CMatrix) -> Result<(CMatrix, CMatrix)> {
    let p = snapshot.users();
    if e1.shape() != (p, p) || e2.shape() != (p, p) {
        return Err(Error::InvalidParams(format!("perturbations must be {p} x {p}")));
    }
    let q = snapshot.normalized();
    let singular = |condition| Error::SingularChannel {
        tone: None,
        freq: snapshot.freq,
        condition,
    };
    let (inner_inv, _) = invert_refined(&(&q + e1)).map_err(singular)?;
    let delta = &q * e2 - e1 * &inner_inv;
    let perturbed = inner_inv + e2;

    let lhs = &snapshot.h * &perturbed;
    let mut worst = 0.0f64;
    for i in 0..p {
        let di = snapshot.d[i];
        for j in 0..p {
            let kron = if i == j { 1.0 } else { 0.0 };
            let rhs = di * (delta[(i, j)] + kron);
            worst = worst.max((lhs[(i, j)] - rhs).norm() / di.norm());
        }
    }
    if !(worst <= IDENTITY_TOLERANCE) {
        return Err(Error::NumericalError(format!(
            "H P deviates from D (I + Delta) by {worst:.3e} (relative) at {} Hz",
            snapshot.freq
        )));
    }
    Ok((perturbed, delta))
}

/// Largest `|Delta_ij|` possible under quantization error bounded by `2^-d`
/// per component and no estimation error.
pub fn delta_entry_bound(snapshot: &ChannelSnapshot, d: u32) -> f64 {
    delta_entry_bound_for(snapshot.r, d)
}

pub fn delta_entry_bound_for(r: f64, d: u32) -> f64 {
    (0.5 - d as f64).exp2() * (1.0 + r)
}

#[derive(Clone, Debug)]
pub struct PrecoderBundle {
    pub p_ideal: CMatrix,
    pub p_perturbed: CMatrix,
    pub e1: CMatrix,
    pub e2: CMatrix,
    pub delta: CMatrix,
}

impl PrecoderBundle {
    /// Bundle for given error matrices.
    pub fn from_errors(snapshot: &ChannelSnapshot, e1: CMatrix, e2: CMatrix) -> Result<Self> {
        let p_ideal = ideal_precoder(snapshot)?;
        let (p_perturbed, delta) = build_bundle_parts(snapshot, &e1, &e2)?;
        Ok(Self {
            p_ideal,
            p_perturbed,
            e1,
            e2,
            delta,
        })
    }

    /// Bundle with errors drawn per `spec`. `snr` is only used by a Gaussian
    /// estimation-error model; `cell` addresses the random streams.
    pub fn perturb(snapshot: &ChannelSnapshot, spec: &PerturbationSpec, snr: &[f64], cell: u64) -> Result<Self> {
        spec.validate()?;
        let p = snapshot.users();
        let e1 = match spec.e1_model {
            E1Model::None => CMatrix::zeros(p, p),
            E1Model::Gaussian { n_samples } => {
                let mut draws = rng::stream(spec.seed, Purpose::EstimationError, cell);
                gaussian_error(n_samples, snr, &mut draws)?
            }
        };
        // The quantizer acts on the precoder computed from the estimate.
        let (p_estimated, _) = invert_refined(&(snapshot.normalized() + &e1)).map_err(|condition| {
            Error::SingularChannel {
                tone: None,
                freq: snapshot.freq,
                condition,
            }
        })?;
        let quantized = quantize_precoder(&p_estimated, spec, cell)?;
        Self::from_errors(snapshot, e1, quantized.e2)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{identity, max_abs};

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn snapshot(h: &[C64], p: usize) -> ChannelSnapshot {
        ChannelSnapshot::new(1e6, CMatrix::from_row_slice(p, p, h)).unwrap()
    }

    fn sample_channel() -> ChannelSnapshot {
        snapshot(
            &[
                c(0.8, 0.1),
                c(0.05, -0.02),
                c(0.01, 0.03),
                c(-0.04, 0.02),
                c(0.5, -0.3),
                c(0.02, 0.0),
                c(0.03, 0.01),
                c(0.0, -0.06),
                c(0.2, 0.6),
            ],
            3,
        )
    }

    #[test]
    fn diagonal_channel_needs_no_precoding() {
        let s = snapshot(&[c(0.5, 0.2), c(0.0, 0.0), c(0.0, 0.0), c(0.3, -0.1)], 2);
        assert_eq!(ideal_precoder(&s).unwrap(), identity(2));
    }

    #[test]
    fn precoder_diagonalizes() {
        let s = snapshot(&[c(1.0, 0.0), c(0.1, 0.0), c(0.1, 0.0), c(1.0, 0.0)], 2);
        let p = ideal_precoder(&s).unwrap();
        let hp = &s.h * &p;
        assert!(hp[(0, 1)].norm() <= 1e-12 && hp[(1, 0)].norm() <= 1e-12);
        assert!((hp[(0, 0)] - s.d[0]).norm() <= 1e-12);
    }

    #[test]
    fn rounding_examples() {
        let spec = PerturbationSpec::new(2, E2Model::DeterministicRounding, 0);
        let p = CMatrix::from_row_slice(1, 1, &[c(0.3, -0.3)]);
        let q = quantize_precoder(&p, &spec, 0).unwrap();
        assert_eq!(q.stored[(0, 0)], c(0.25, -0.25));
        assert!((q.e2[(0, 0)].re + 0.05).abs() < 1e-15);

        for d in [1, 7, 20] {
            let spec = PerturbationSpec::new(d, E2Model::DeterministicRounding, 0);
            let q = quantize_precoder(&identity(3), &spec, 0).unwrap();
            assert_eq!(q.stored, identity(3));
            assert_eq!(q.e2, CMatrix::zeros(3, 3));
        }
    }

    #[test]
    fn out_of_range_entries_are_rejected_or_normalized() {
        let p = CMatrix::from_row_slice(2, 2, &[c(1.0, 0.0), c(0.2, -1.5), c(0.0, 0.0), c(1.0, 0.0)]);
        let mut spec = PerturbationSpec::new(10, E2Model::DeterministicRounding, 0);
        assert!(matches!(
            quantize_precoder(&p, &spec, 0),
            Err(Error::RangeError { row: 0, col: 1, .. })
        ));
        spec.normalize = true;
        let q = quantize_precoder(&p, &spec, 0).unwrap();
        assert_eq!(q.scale, 1.5);
        assert!(max_abs(&(q.effective() - &p - &q.e2)) < 1e-15);
        assert!(q.stored.iter().all(|z| z.re.abs() <= 1.0 && z.im.abs() <= 1.0));
    }

    #[test]
    fn uniform_errors_respect_step() {
        let spec = PerturbationSpec::new(6, E2Model::UniformRandom, 17);
        let p = CMatrix::from_element(4, 4, c(0.25, -0.125));
        let step = spec.step();
        for cell in 0..50 {
            let q = quantize_precoder(&p, &spec, cell).unwrap();
            assert!(q.e2.iter().all(|z| z.re.abs() <= step && z.im.abs() <= step));
        }
    }

    #[test]
    fn delta_vanishes_without_errors() {
        let s = sample_channel();
        let zero = CMatrix::zeros(3, 3);
        assert_eq!(build_delta(&s, &zero, &zero).unwrap(), zero);
        let b = PrecoderBundle::from_errors(&s, zero.clone(), zero.clone()).unwrap();
        assert!(max_abs(&(b.p_perturbed - b.p_ideal)) < 1e-15);
    }

    #[test]
    fn delta_without_estimation_error() {
        let s = sample_channel();
        let mut draws = rng::stream(5, Purpose::QuantizationError, 0);
        let e2 = uniform_error(3, 1e-3, &mut draws);
        let delta = build_delta(&s, &CMatrix::zeros(3, 3), &e2).unwrap();
        let expected = s.normalized() * &e2;
        assert!(max_abs(&(delta - expected)) < 1e-15);
    }

    #[test]
    fn delta_with_both_errors_satisfies_identity() {
        let s = sample_channel();
        let mut draws = rng::stream(9, Purpose::EstimationError, 0);
        let e1 = gaussian_error(1000, &[1e4, 1e5, 1e6], &mut draws).unwrap();
        let e2 = uniform_error(3, 1e-4, &mut draws);
        let delta = build_delta(&s, &e1, &e2).unwrap();
        let (inv, _) = invert_refined(&(s.normalized() + &e1)).unwrap();
        let lhs = &s.h * (inv + &e2);
        let rhs = CMatrix::from_diagonal(&nalgebra::DVector::from_vec(s.d.clone())) * (identity(3) + delta);
        assert!(max_abs(&(lhs - rhs)) <= 1e-10);
    }

    #[test]
    fn entry_bound_examples() {
        let s = snapshot(&[c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(1.0, 0.0)], 2);
        assert!((delta_entry_bound(&s, 1) - 0.5f64.sqrt()).abs() < 1e-15);
        let b = delta_entry_bound_for(0.1596, 14);
        assert!(((b - 1.0009e-4) / b).abs() < 1e-4, "{b}");
    }

    #[test]
    fn perturb_is_seeded() {
        let s = sample_channel();
        let mut spec = PerturbationSpec::new(8, E2Model::UniformRandom, 3);
        spec.e1_model = E1Model::Gaussian { n_samples: 1000 };
        let snr = [1e5; 3];
        let a = PrecoderBundle::perturb(&s, &spec, &snr, 4).unwrap();
        let b = PrecoderBundle::perturb(&s, &spec, &snr, 4).unwrap();
        let c = PrecoderBundle::perturb(&s, &spec, &snr, 5).unwrap();
        assert_eq!(a.delta, b.delta);
        assert_ne!(a.delta, c.delta);
    }

    #[test]
    fn bad_specs() {
        assert!(PerturbationSpec::new(0, E2Model::Zero, 0).validate().is_err());
        let mut spec = PerturbationSpec::new(4, E2Model::Zero, 0);
        spec.e1_model = E1Model::Gaussian { n_samples: 0 };
        assert!(spec.validate().is_err());
    }
}
