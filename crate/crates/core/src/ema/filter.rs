//! Zero-phase Butterworth low-pass filtering.
//!
//! The filter is designed as cascaded second-order sections via the bilinear
//! transform with frequency prewarping, and run forward then backward over an
//! odd-reflected extension of the signal. Each pass starts from the
//! steady-state response to a step of the first sample.

use std::f64::consts::PI;

use ndarray::Axis as NdAxis;

use super::{EmaError, EmaTrajectory};
use crate::Scalar;

/// Order used for trajectory smoothing.
pub const DEFAULT_ORDER: usize = 5;

/// Default trajectory cutoff in Hz.
pub const DEFAULT_CUTOFF_HZ: f64 = 6.0;

/// Second-order section in transposed direct form II, `a0 = 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad<F> {
    pub b: [F; 3],
    pub a: [F; 2],
}

impl<F: Scalar> Biquad<F> {
    fn dc_gain(&self) -> F {
        (self.b[0] + self.b[1] + self.b[2]) / (F::one() + self.a[0] + self.a[1])
    }

    /// State after an infinitely long unit step.
    fn step_state(&self) -> [F; 2] {
        let y = self.dc_gain();
        [y - self.b[0], self.b[2] - self.a[1] * y]
    }

    fn run(&self, signal: &mut [F], mut state: [F; 2]) {
        let [b0, b1, b2] = self.b;
        let [a1, a2] = self.a;
        for x in signal.iter_mut() {
            let input = *x;
            let y = b0 * input + state[0];
            state[0] = b1 * input - a1 * y + state[1];
            state[1] = b2 * input - a2 * y;
            *x = y;
        }
    }

    fn response(&self, omega: f64) -> (f64, f64) {
        // H(e^{jw}) = (b0 + b1 z^-1 + b2 z^-2) / (1 + a1 z^-1 + a2 z^-2)
        let (c1, s1) = (omega.cos(), -omega.sin());
        let (c2, s2) = ((2.0 * omega).cos(), -(2.0 * omega).sin());
        let b: Vec<f64> = self.b.iter().map(|v| v.to_f64_lossy()).collect();
        let a: Vec<f64> = self.a.iter().map(|v| v.to_f64_lossy()).collect();
        let num = (b[0] + b[1] * c1 + b[2] * c2, b[1] * s1 + b[2] * s2);
        let den = (1.0 + a[0] * c1 + a[1] * c2, a[0] * s1 + a[1] * s2);
        let d = den.0 * den.0 + den.1 * den.1;
        (
            (num.0 * den.0 + num.1 * den.1) / d,
            (num.1 * den.0 - num.0 * den.1) / d,
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ButterworthLowpass<F> {
    pub order: usize,
    pub cutoff: f64,
    pub sample_rate: f64,
    pub sections: Vec<Biquad<F>>,
}

impl<F: Scalar> ButterworthLowpass<F> {
    pub fn design(order: usize, cutoff: f64, sample_rate: f64) -> Result<Self, EmaError> {
        let nyquist = sample_rate / 2.0;
        if !(cutoff < nyquist) {
            return Err(EmaError::CutoffAboveNyquist { cutoff, nyquist });
        }
        if !(cutoff > 0.0) || order == 0 {
            return Err(EmaError::Invalid(format!(
                "low-pass needs a positive cutoff and order, got {cutoff} Hz / order {order}"
            )));
        }
        let w = (PI * cutoff / sample_rate).tan();
        let w2 = w * w;
        let mut sections = Vec::with_capacity(order.div_ceil(2));
        if order % 2 == 1 {
            let norm = 1.0 / (1.0 + w);
            sections.push(Biquad {
                b: [F::lit(w * norm), F::lit(w * norm), F::zero()],
                a: [F::lit((w - 1.0) * norm), F::zero()],
            });
        }
        for k in 0..order / 2 {
            // conjugate pole pair at angle pi (2k + n + 1) / (2n), n = order
            let theta = PI * (2 * k + order + 1) as f64 / (2 * order) as f64;
            let inv_q = -2.0 * theta.cos();
            let norm = 1.0 / (1.0 + w * inv_q + w2);
            let b0 = w2 * norm;
            sections.push(Biquad {
                b: [F::lit(b0), F::lit(2.0 * b0), F::lit(b0)],
                a: [
                    F::lit(2.0 * (w2 - 1.0) * norm),
                    F::lit((1.0 - w * inv_q + w2) * norm),
                ],
            });
        }
        Ok(Self {
            order,
            cutoff,
            sample_rate,
            sections,
        })
    }

    /// Edge extension used by [`ButterworthLowpass::filtfilt`].
    pub fn pad_len(&self) -> usize {
        3 * (self.order + 1)
    }

    /// Shortest signal accepted by [`ButterworthLowpass::filtfilt`].
    pub fn min_len(&self) -> usize {
        3 * self.order + 1
    }

    /// Magnitude of the single-pass response at `freq` Hz.
    pub fn magnitude(&self, freq: f64) -> f64 {
        let omega = 2.0 * PI * freq / self.sample_rate;
        self.sections
            .iter()
            .map(|s| {
                let (re, im) = s.response(omega);
                (re * re + im * im).sqrt()
            })
            .product()
    }

    /// Fraction of white-noise power surviving [`ButterworthLowpass::filtfilt`],
    /// i.e. the mean of `|H|⁴` over `[0, fs/2]`.
    pub fn noise_power_gain(&self) -> f64 {
        let n = 20_000;
        let nyquist = self.sample_rate / 2.0;
        (0..n)
            .map(|i| self.magnitude((i as f64 + 0.5) / n as f64 * nyquist).powi(4))
            .sum::<f64>()
            / n as f64
    }

    fn run_cascade(&self, signal: &mut [F]) {
        let x0 = signal[0];
        let mut gain = F::one();
        for section in &self.sections {
            let [z0, z1] = section.step_state();
            section.run(signal, [z0 * gain * x0, z1 * gain * x0]);
            gain *= section.dc_gain();
        }
    }

    /// Forward-backward filtering with odd reflection at both ends.
    pub fn filtfilt(&self, signal: &[F]) -> Result<Vec<F>, EmaError> {
        let n = signal.len();
        if n < self.min_len() {
            return Err(EmaError::ClipTooShortForFilter {
                frames: n,
                required: self.min_len(),
            });
        }
        let pad = self.pad_len().min(n - 1);
        let two = F::lit(2.0);
        let mut ext = Vec::with_capacity(n + 2 * pad);
        ext.extend((1..=pad).rev().map(|i| two * signal[0] - signal[i]));
        ext.extend_from_slice(signal);
        ext.extend((1..=pad).map(|i| two * signal[n - 1] - signal[n - 1 - i]));

        self.run_cascade(&mut ext);
        ext.reverse();
        self.run_cascade(&mut ext);
        ext.reverse();
        Ok(ext[pad..pad + n].to_vec())
    }
}

/// Zero-phase order-5 Butterworth low-pass, applied to every channel
/// independently.
pub fn lowpass_filter<F: Scalar>(
    traj: &EmaTrajectory<F>,
    cutoff: f64,
) -> Result<EmaTrajectory<F>, EmaError> {
    let filter = ButterworthLowpass::<F>::design(DEFAULT_ORDER, cutoff, traj.frame_rate)?;
    let mut out = traj.samples.clone();
    for mut column in out.axis_iter_mut(NdAxis(1)) {
        let filtered = filter.filtfilt(&column.to_vec())?;
        for (dst, v) in column.iter_mut().zip(filtered) {
            *dst = v;
        }
    }
    Ok(traj.with_samples(out))
}
