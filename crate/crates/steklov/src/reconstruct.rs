//! Recovery of the characteristic polynomial from a root sequence.
//!
//! The route follows the factorization of an even entire function of order
//! one: the truncated product
//!
//! ```text
//! Q(σ) = σ^{2m₀} · Π_{0 < σ_m ≤ cutoff} (1 − σ²/σ_m²)
//! ```
//!
//! approximates `F/C` on a window well inside the cutoff, and the mean
//! transform `A[Q](z) = (1/T) ∫₀ᵀ e^{−isz} Q(s) ds` exposes the frequencies
//! of `F` as peaks and the amplitudes as peak values, up to one overall
//! normalization fixed by the unit amplitude at the top frequency.
//!
//! Truncating the product at a finite cutoff multiplies `F/C` by the smooth
//! envelope `exp(σ² Σ_{m > M} σ_m^{−2})`, which is enormous at the window
//! edge and ruins the transform's frequency resolution if left in place.
//! The evaluator therefore compensates with the tail integral of the
//! Weyl-extrapolated root density by default; the raw truncated product is
//! available behind a flag.

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::charpoly::CharPoly;
use crate::spectra::{PerturbedSpectrum, QuasiSpectrum};

pub const DEFAULT_MARGIN: f64 = 4.0;
pub const DEFAULT_THETA: f64 = 0.01;
pub const DEFAULT_C0_TOL: f64 = 1e-2;

#[derive(Debug, Error)]
pub enum ReconstructError {
    #[error("σ = {sigma} exceeds the evaluation window {window}")]
    WindowExceeded { sigma: f64, window: f64 },
    #[error("spectrum reaches {reach} but the window {window} needs margin {margin}")]
    InsufficientSpectrum { reach: f64, window: f64, margin: f64 },
    #[error("partial products at M/2 and M differ by {diff:e}; product may diverge")]
    DivergenceSuspected { diff: f64 },
    #[error("transform resolution 2π/T = {resolution} cannot separate peaks at grid step {dz}")]
    ResolutionTooCoarse { resolution: f64, dz: f64 },
    #[error("detected {count} frequencies, not a power of two")]
    FrequencyCountNotPow2 { count: usize },
    #[error("peaks at {a} and {b} sit within one resolution cell {cell}")]
    ThresholdAmbiguous { a: f64, b: f64, cell: f64 },
    #[error("spectrum counting slope is unstable ({first} vs {second}); not asymptotically linear")]
    SlopeUnstable { first: f64, second: f64 },
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
}

/// Anything that looks like a sorted root/eigenvalue sequence.
pub trait SpectrumLike {
    fn values(&self) -> &[f64];
    /// Number of leading zero entries (the product prefactor is
    /// `σ^{2·zero_entries}`).
    fn zero_entries(&self) -> usize;
}

impl SpectrumLike for QuasiSpectrum {
    fn values(&self) -> &[f64] {
        &self.values
    }
    fn zero_entries(&self) -> usize {
        self.zero_half_mult
    }
}

impl SpectrumLike for PerturbedSpectrum {
    fn values(&self) -> &[f64] {
        &self.values
    }
    fn zero_entries(&self) -> usize {
        self.zero_count
    }
}

/// Evaluates the truncated even product over a fixed window.
#[derive(Debug, Clone)]
pub struct ProductEvaluator {
    positive: Vec<f64>,
    zero_count: usize,
    sigma_win: f64,
    near_tol: f64,
    compensate: bool,
    /// Start of the extrapolated tail (half a mean spacing past the last
    /// root).
    tail_start: f64,
    /// Root density (count per unit σ) used for the tail model.
    tail_slope: f64,
}

impl ProductEvaluator {
    /// Builds an evaluator with the default margin (4) and tail
    /// compensation on.
    pub fn new<S: SpectrumLike>(spectrum: &S, sigma_win: f64) -> Result<Self, ReconstructError> {
        Self::with_options(spectrum, sigma_win, DEFAULT_MARGIN, true)
    }

    /// `margin ≥ 4` controls how far past the window the spectrum must
    /// reach; `compensate` toggles the Weyl-tail correction.
    pub fn with_options<S: SpectrumLike>(
        spectrum: &S,
        sigma_win: f64,
        margin: f64,
        compensate: bool,
    ) -> Result<Self, ReconstructError> {
        if !(sigma_win > 0.0) {
            return Err(ReconstructError::InvalidParams(format!(
                "window must be positive, got {sigma_win}"
            )));
        }
        if margin < 4.0 {
            return Err(ReconstructError::InvalidParams(format!(
                "margin must be at least 4, got {margin}"
            )));
        }
        let values = spectrum.values();
        let zero_count = spectrum.zero_entries();
        let positive: Vec<f64> = values[zero_count..].to_vec();
        let reach = positive.last().copied().unwrap_or(0.0);
        if reach < margin * sigma_win {
            return Err(ReconstructError::InsufficientSpectrum {
                reach,
                window: sigma_win,
                margin,
            });
        }
        let count = values.len() as f64;
        let tail_slope = count / reach;
        let spacing = 1.0 / tail_slope;
        Ok(ProductEvaluator {
            positive,
            zero_count,
            sigma_win,
            near_tol: spacing / 4.0,
            compensate,
            tail_start: reach + spacing / 2.0,
            tail_slope,
        })
    }

    pub fn sigma_win(&self) -> f64 {
        self.sigma_win
    }

    pub fn factor_count(&self) -> usize {
        self.positive.len()
    }

    /// Replaces the tail density, e.g. once the perimeter is known exactly.
    pub fn set_tail_slope(&mut self, slope: f64) {
        self.tail_slope = slope;
    }

    /// `σ_win² Σ_{m>M} σ̂_m^{−2}` for the extrapolated tail: the log-scale
    /// envelope the truncation introduces at the window edge.
    pub fn truncation_exponent(&self) -> f64 {
        self.sigma_win.powi(2) * self.tail_slope / self.tail_start
    }

    /// The product value at `σ`, in sign × log-magnitude form internally.
    pub fn eval(&self, sigma: f64) -> Result<f64, ReconstructError> {
        if sigma.abs() > self.sigma_win {
            return Err(ReconstructError::WindowExceeded {
                sigma,
                window: self.sigma_win,
            });
        }
        Ok(self.eval_unchecked(sigma))
    }

    pub(crate) fn eval_unchecked(&self, sigma: f64) -> f64 {
        let s = sigma.abs();
        if s == 0.0 {
            return if self.zero_count > 0 { 0.0 } else { 1.0 };
        }
        let mut log_sum = 2.0 * self.zero_count as f64 * s.ln();
        let mut sign = 1.0f64;
        // Factors within near_tol of a root multiply directly so the log
        // never sees a near-zero argument.
        let mut direct = 1.0f64;
        let mut chunk = 1.0f64;
        let mut in_chunk = 0u32;
        for &root in &self.positive {
            let u = (root - s) * (root + s) / (root * root);
            if (root - s).abs() < self.near_tol {
                direct *= u;
                continue;
            }
            chunk *= u;
            in_chunk += 1;
            if in_chunk == 16 {
                sign *= chunk.signum();
                log_sum += chunk.abs().ln();
                chunk = 1.0;
                in_chunk = 0;
            }
        }
        if in_chunk > 0 {
            sign *= chunk.signum();
            log_sum += chunk.abs().ln();
        }
        if self.compensate {
            log_sum += self.tail_log_correction(s);
        }
        sign * direct * log_sum.exp()
    }

    /// `ln Π_{tail} (1 − s²/σ̂_m²)` for roots continuing past the cutoff at
    /// the modelled density, via the closed form
    /// `∫ ln(1 − s²/x²) dx = −[2x₀ln x₀ − (x₀−s)ln(x₀−s) − (x₀+s)ln(x₀+s)]`
    /// on the midpoint-rule continuation.
    fn tail_log_correction(&self, s: f64) -> f64 {
        let x0 = self.tail_start;
        self.tail_slope
            * (2.0 * x0 * x0.ln() - (x0 - s) * (x0 - s).ln() - (x0 + s) * (x0 + s).ln())
    }
}

/// Value of the limit constant `C₀` relating the perturbed and unperturbed
/// products, with a Richardson-style tail estimate.
#[derive(Debug, Clone, Serialize)]
pub struct C0Result {
    pub value: f64,
    /// `|P_M − P_{M/2}|`, the change over the last doubling.
    pub tail_bound: f64,
}

/// Evaluates `C₀` truncated at `m_cut` factors, selecting the branch by the
/// sign of `n₀ − m₀` (the zero counts of the two sequences).
pub fn compute_c0(
    sigma: &QuasiSpectrum,
    lambda: &PerturbedSpectrum,
    m_cut: usize,
    c0_tol: f64,
) -> Result<C0Result, ReconstructError> {
    let m0 = sigma.zero_half_mult;
    let n0 = lambda.zero_count;
    let s = &sigma.values;
    let l = &lambda.values;
    let m_cut = m_cut.min(s.len()).min(l.len());
    if m_cut <= m0.max(n0) {
        return Err(ReconstructError::InvalidParams(format!(
            "cutoff {m_cut} leaves no factors past the zero blocks ({m0}, {n0})"
        )));
    }

    // One-based index ranges translated to 0-based slices.
    let partial = |cut: usize| -> f64 {
        let mut log_sum = 0.0f64;
        let mut sign = 1.0f64;
        match n0.cmp(&m0) {
            std::cmp::Ordering::Equal => {
                for m in m0..cut {
                    log_sum += 2.0 * (s[m].ln() - l[m].ln());
                }
            }
            std::cmp::Ordering::Greater => {
                if (n0 - m0) % 2 == 1 {
                    sign = -1.0;
                }
                for item in s.iter().take(n0).skip(m0) {
                    log_sum += 2.0 * item.ln();
                }
                for m in n0..cut {
                    log_sum += 2.0 * (s[m].ln() - l[m].ln());
                }
            }
            std::cmp::Ordering::Less => {
                if (m0 - n0) % 2 == 1 {
                    sign = -1.0;
                }
                for item in l.iter().take(m0).skip(n0) {
                    log_sum -= 2.0 * item.ln();
                }
                for m in m0..cut {
                    log_sum += 2.0 * (s[m].ln() - l[m].ln());
                }
            }
        }
        sign * log_sum.exp()
    };

    let full = partial(m_cut);
    let half = partial((m_cut / 2).max(m0.max(n0) + 1));
    let tail_bound = (full - half).abs();
    if tail_bound > c0_tol * full.abs().max(f64::MIN_POSITIVE) {
        return Err(ReconstructError::DivergenceSuspected { diff: tail_bound });
    }
    Ok(C0Result {
        value: full,
        tail_bound,
    })
}

/// Real part of the mean transform on a uniform `z` grid.
#[derive(Debug, Clone, Serialize)]
pub struct MeanTransform {
    pub z_grid: Vec<f64>,
    pub values: Vec<f64>,
    pub integration_length: f64,
}

/// Uniform-grid samples of a function on `[0, T]` with trapezoid weights,
/// shared by every transform evaluation.
struct QGrid {
    step: f64,
    samples: Vec<f64>,
    t_len: f64,
}

impl QGrid {
    fn build(f: impl Fn(f64) -> f64 + Sync, t_len: f64, z_max: f64) -> QGrid {
        let target = std::f64::consts::PI / (8.0 * z_max.max(1e-12));
        let n = ((t_len / target).ceil() as usize).max(16);
        let step = t_len / n as f64;
        let samples: Vec<f64> = (0..=n)
            .into_par_iter()
            .map(|i| f(i as f64 * step))
            .collect();
        QGrid {
            step,
            samples,
            t_len,
        }
    }

    /// `(1/T) Σ″ w_i f(s_i) e^{−i s_i z}` as `(re, im)`.
    fn transform_at(&self, z: f64) -> (f64, f64) {
        let n = self.samples.len() - 1;
        let (mut re, mut im) = (0.0, 0.0);
        for (i, &q) in self.samples.iter().enumerate() {
            let w = if i == 0 || i == n { 0.5 } else { 1.0 };
            let phase = self.step * i as f64 * z;
            re += w * q * phase.cos();
            im -= w * q * phase.sin();
        }
        let scale = self.step / self.t_len;
        (re * scale, im * scale)
    }

    /// Discrete window kernel: the transform this grid assigns to
    /// `cos(t·s)`, in closed form. `t = 0` gives the kernel of a constant.
    fn kernel(&self, z: f64, t: f64) -> (f64, f64) {
        let scale = self.step / self.t_len * 0.5;
        if t == 0.0 {
            let (ar, ai) = self.geometric(z);
            return (ar * 2.0 * scale, ai * 2.0 * scale);
        }
        let (ar, ai) = self.geometric(z - t);
        let (br, bi) = self.geometric(z + t);
        ((ar + br) * scale, (ai + bi) * scale)
    }

    /// `Σ″ w_i e^{−i s_i Δ}` via the geometric series.
    fn geometric(&self, delta: f64) -> (f64, f64) {
        let n = self.samples.len() - 1;
        let hd = self.step * delta;
        if hd.abs() < 1e-9 {
            // Series limit; hd stays far from ±2π by construction.
            return (n as f64, -(0.5 * (n as f64) * (n as f64)) * hd);
        }
        // Σ_{i=0}^{n} e^{−i·i·hd} = (1 − e^{−i(n+1)hd}) / (1 − e^{−i·hd})
        let (s1, c1) = hd.sin_cos();
        let (sn, cn) = ((n as f64 + 1.0) * hd).sin_cos();
        let (num_r, num_i) = (1.0 - cn, sn);
        let (den_r, den_i) = (1.0 - c1, s1);
        let den = den_r * den_r + den_i * den_i;
        let full_r = (num_r * den_r + num_i * den_i) / den;
        let full_i = (num_i * den_r - num_r * den_i) / den;
        // Trapezoid end-weights subtract half of the first and last terms.
        let (s_end, c_end) = (n as f64 * hd).sin_cos();
        (full_r - 0.5 * (1.0 + c_end), full_i + 0.5 * s_end)
    }
}

/// The mean transform of the product on `[z_min, z_max]` with step `dz`,
/// integrating over `[0, T]` by the trapezoid rule with step `≤ π/(8·z_max)`.
pub fn mean_transform(
    p: &ProductEvaluator,
    z_min: f64,
    z_max: f64,
    dz: f64,
    t_len: f64,
) -> Result<MeanTransform, ReconstructError> {
    if t_len > p.sigma_win() {
        return Err(ReconstructError::WindowExceeded {
            sigma: t_len,
            window: p.sigma_win(),
        });
    }
    mean_transform_of(|s| p.eval_unchecked(s), z_min, z_max, dz, t_len)
}

/// The same transform applied to an arbitrary function; used for linearity
/// checks and synthetic inputs.
pub fn mean_transform_of(
    f: impl Fn(f64) -> f64 + Sync,
    z_min: f64,
    z_max: f64,
    dz: f64,
    t_len: f64,
) -> Result<MeanTransform, ReconstructError> {
    if !(dz > 0.0 && t_len > 0.0 && z_max >= z_min) {
        return Err(ReconstructError::InvalidParams(format!(
            "need dz > 0, T > 0, z_max ≥ z_min; got dz={dz}, T={t_len}, z∈[{z_min},{z_max}]"
        )));
    }
    let resolution = 2.0 * std::f64::consts::PI / t_len;
    if resolution > 4.0 * dz {
        return Err(ReconstructError::ResolutionTooCoarse { resolution, dz });
    }
    let grid = QGrid::build(f, t_len, z_max.abs().max(z_min.abs()));
    let count = ((z_max - z_min) / dz).round() as usize;
    let z_grid: Vec<f64> = (0..=count).map(|i| z_min + i as f64 * dz).collect();
    let values: Vec<f64> = z_grid.par_iter().map(|&z| grid.transform_at(z).0).collect();
    Ok(MeanTransform {
        z_grid,
        values,
        integration_length: t_len,
    })
}

/// Options for [`recover_charpoly`].
#[derive(Debug, Clone)]
pub struct RecoveryOpts {
    /// Spectrum reach divided by evaluation window.
    pub margin: f64,
    /// Integration length `T`; defaults to the full window.
    pub t_integration: Option<f64>,
    /// Transform grid step; defaults to a quarter of the resolution `2π/T`.
    pub dz: Option<f64>,
    /// Peak acceptance threshold relative to the strongest peak.
    pub theta: f64,
    /// Search frequencies up to `z_max_factor ×` the Weyl perimeter
    /// estimate.
    pub z_max_factor: f64,
    /// Compensate the truncation envelope (see module docs).
    pub compensate_tail: bool,
    /// Extract amplitudes by a joint least-squares fit over the integration
    /// grid (inverts inter-peak leakage); otherwise read them off the peak
    /// values `r_k = 2C₁A(t_k)` directly.
    pub lsq_amplitudes: bool,
    /// Re-run the transform once with the tail density pinned to the
    /// detected perimeter.
    pub two_pass: bool,
    pub max_peaks: usize,
    /// Relative slope drift over the sequence halves that still counts as
    /// asymptotically linear.
    pub slope_stability_tol: f64,
}

impl Default for RecoveryOpts {
    fn default() -> Self {
        RecoveryOpts {
            margin: DEFAULT_MARGIN,
            t_integration: None,
            dz: None,
            theta: DEFAULT_THETA,
            z_max_factor: 1.25,
            compensate_tail: true,
            lsq_amplitudes: true,
            two_pass: true,
            max_peaks: 64,
            slope_stability_tol: 0.1,
        }
    }
}

/// Diagnostics accompanying a recovered polynomial.
#[derive(Debug, Clone, Serialize)]
pub struct RecoveryDiagnostics {
    /// Weyl perimeter estimate from the counting slope.
    pub perimeter_estimate: f64,
    /// Refined top frequency (the recovered perimeter).
    pub perimeter: f64,
    pub window: f64,
    pub t_integration: f64,
    pub dz: f64,
    pub normalization: f64,
    /// Raw transform peak values before normalization, frequency-sorted.
    pub peak_heights: Vec<f64>,
}

/// A recovered characteristic polynomial with diagnostics.
#[derive(Debug, Clone)]
pub struct Recovery {
    pub char_poly: CharPoly,
    pub diagnostics: RecoveryDiagnostics,
}

struct Peak {
    freq: f64,
    height: f64,
}

/// Recovers the characteristic polynomial from a root or eigenvalue
/// sequence.
///
/// Pipeline: build the (tail-compensated) product, sweep the mean transform
/// over `[0, z_max]`, extract peaks greedily with exact re-evaluation and
/// kernel deflation, then either solve a joint least-squares system for the
/// amplitudes or read them from the peak values, and normalize so the top
/// frequency carries amplitude one. The detected frequency count must be a
/// power of two.
pub fn recover_charpoly<S: SpectrumLike>(
    lambda: &S,
    opts: &RecoveryOpts,
) -> Result<Recovery, ReconstructError> {
    let values = lambda.values();
    if values.len() < 32 {
        return Err(ReconstructError::InvalidParams(format!(
            "need at least 32 spectrum entries, got {}",
            values.len()
        )));
    }
    check_slope_stability(values, opts.slope_stability_tol)?;

    let reach = *values.last().expect("non-empty");
    let sigma_win = reach / opts.margin;
    let t_len = opts.t_integration.unwrap_or(sigma_win).min(sigma_win);
    let resolution = 2.0 * std::f64::consts::PI / t_len;
    let dz = opts.dz.unwrap_or(resolution / 4.0);

    let count_slope = values.len() as f64 / reach;
    let perimeter_estimate = std::f64::consts::PI * count_slope;
    let z_max = opts.z_max_factor * perimeter_estimate;

    let mut evaluator =
        ProductEvaluator::with_options(lambda, sigma_win, opts.margin, opts.compensate_tail)?;

    let mut pass = run_transform_pass(&evaluator, t_len, dz, z_max, opts)?;
    if opts.two_pass && opts.compensate_tail {
        if let Some(l_hat) = pass.peaks.iter().map(|p| p.freq).reduce(f64::max) {
            evaluator.set_tail_slope(l_hat / std::f64::consts::PI);
            pass = run_transform_pass(&evaluator, t_len, dz, z_max, opts)?;
        }
    }
    let PassResult { grid, mut peaks } = pass;

    peaks.sort_by(|a, b| a.freq.total_cmp(&b.freq));
    for w in peaks.windows(2) {
        if w[1].freq - w[0].freq < resolution {
            return Err(ReconstructError::ThresholdAmbiguous {
                a: w[0].freq,
                b: w[1].freq,
                cell: resolution,
            });
        }
    }
    if !peaks.len().is_power_of_two() {
        return Err(ReconstructError::FrequencyCountNotPow2 { count: peaks.len() });
    }

    let freqs: Vec<f64> = peaks.iter().map(|p| p.freq).collect();
    let (mut coeffs, constant) = if opts.lsq_amplitudes {
        lsq_amplitudes(&grid, &freqs)?
    } else {
        let coeffs: Vec<f64> = peaks.iter().map(|p| 2.0 * p.height).collect();
        (coeffs, grid.transform_at(0.0).0)
    };

    // Normalize so the top frequency has amplitude exactly one; the sign of
    // the normalization constant follows the top peak.
    let top = *coeffs.last().expect("power of two is non-zero");
    if top == 0.0 {
        return Err(ReconstructError::InvalidParams(
            "top-frequency amplitude vanished; threshold or window mismatch".into(),
        ));
    }
    let mut constant = constant;
    for c in &mut coeffs {
        *c /= top;
    }
    constant /= top;

    let char_poly = CharPoly::from_parts(freqs.clone(), coeffs, -constant)
        .map_err(|e| ReconstructError::InvalidParams(e.to_string()))?;
    Ok(Recovery {
        char_poly,
        diagnostics: RecoveryDiagnostics {
            perimeter_estimate,
            perimeter: *freqs.last().expect("non-empty"),
            window: sigma_win,
            t_integration: t_len,
            dz,
            normalization: 1.0 / top,
            peak_heights: peaks.iter().map(|p| p.height).collect(),
        },
    })
}

fn check_slope_stability(values: &[f64], tol: f64) -> Result<(), ReconstructError> {
    // Least-squares slope of λ_m against its one-based rank.
    let slope = |vals: &[f64], offset: usize| -> f64 {
        let n = vals.len() as f64;
        let mean_m = offset as f64 + (n - 1.0) / 2.0;
        let mean_v = vals.iter().sum::<f64>() / n;
        let mut num = 0.0;
        let mut den = 0.0;
        for (i, &v) in vals.iter().enumerate() {
            let dm = offset as f64 + i as f64 - mean_m;
            num += dm * (v - mean_v);
            den += dm * dm;
        }
        num / den
    };
    let full = slope(values, 0);
    let half = slope(&values[values.len() / 2..], values.len() / 2);
    if !(full > 0.0) || (half - full).abs() > tol * full {
        return Err(ReconstructError::SlopeUnstable {
            first: full,
            second: half,
        });
    }
    Ok(())
}

struct PassResult {
    grid: QGrid,
    peaks: Vec<Peak>,
}

/// One transform sweep: sample `Q`, compute the complex transform on the
/// `z` grid, and pull peaks out greedily. Each accepted peak is refined by
/// parabolic iteration on exact transform values, and its discrete window
/// kernel is deflated from the grid so its sidelobes cannot masquerade as
/// smaller peaks.
fn run_transform_pass(
    evaluator: &ProductEvaluator,
    t_len: f64,
    dz: f64,
    z_max: f64,
    opts: &RecoveryOpts,
) -> Result<PassResult, ReconstructError> {
    if t_len > evaluator.sigma_win() {
        return Err(ReconstructError::WindowExceeded {
            sigma: t_len,
            window: evaluator.sigma_win(),
        });
    }
    let resolution = 2.0 * std::f64::consts::PI / t_len;
    if resolution > 4.0 * dz {
        return Err(ReconstructError::ResolutionTooCoarse { resolution, dz });
    }

    let grid = QGrid::build(|s| evaluator.eval_unchecked(s), t_len, z_max);

    let n_z = (z_max / dz).ceil() as usize;
    let zs: Vec<f64> = (0..=n_z).map(|i| i as f64 * dz).collect();
    let mut residual: Vec<(f64, f64)> = zs.par_iter().map(|&z| grid.transform_at(z)).collect();

    // Remove the constant component first so the DC lobe cannot shadow low
    // frequencies; the final fit re-estimates it.
    let mut extracted: Vec<(f64, f64)> = Vec::new(); // (freq; 0 for DC, coeff)
    let dc = grid.transform_at(0.0);
    let x_dc = project(dc, grid.kernel(0.0, 0.0));
    deflate(&mut residual, &zs, &grid, 0.0, x_dc);
    extracted.push((0.0, x_dc));

    let dc_guard = 0.75 * resolution;
    let mut peaks: Vec<Peak> = Vec::new();
    let floor = {
        let max0 = residual
            .iter()
            .zip(&zs)
            .filter(|(_, &z)| z > dc_guard)
            .map(|(v, _)| modulus(*v))
            .fold(0.0f64, f64::max);
        opts.theta * max0
    };

    for _ in 0..opts.max_peaks {
        let (idx, peak_mod) = residual
            .iter()
            .enumerate()
            .filter(|(i, _)| zs[*i] > dc_guard)
            .map(|(i, v)| (i, modulus(*v)))
            .fold((0usize, 0.0f64), |best, cur| {
                if cur.1 > best.1 {
                    cur
                } else {
                    best
                }
            });
        if peak_mod < floor || peak_mod == 0.0 {
            break;
        }
        // Residual at arbitrary z: raw transform minus every deflated
        // kernel.
        let residual_at = |z: f64| -> (f64, f64) {
            let (mut re, mut im) = grid.transform_at(z);
            for &(t, x) in &extracted {
                let k = grid.kernel(z, t);
                re -= x * k.0;
                im -= x * k.1;
            }
            (re, im)
        };
        let t_hat = refine_peak(&residual_at, zs[idx], dz);
        let x_hat = project(residual_at(t_hat), grid.kernel(t_hat, t_hat));
        deflate(&mut residual, &zs, &grid, t_hat, x_hat);
        extracted.push((t_hat, x_hat));
        peaks.push(Peak {
            freq: t_hat,
            height: grid.transform_at(t_hat).0,
        });
    }

    Ok(PassResult { grid, peaks })
}

fn modulus(v: (f64, f64)) -> f64 {
    v.0.hypot(v.1)
}

/// Least-squares coefficient of a real multiple of the kernel.
fn project(value: (f64, f64), kernel: (f64, f64)) -> f64 {
    let denom = kernel.0 * kernel.0 + kernel.1 * kernel.1;
    if denom == 0.0 {
        0.0
    } else {
        (value.0 * kernel.0 + value.1 * kernel.1) / denom
    }
}

fn deflate(residual: &mut [(f64, f64)], zs: &[f64], grid: &QGrid, t: f64, x: f64) {
    residual
        .par_iter_mut()
        .zip(zs.par_iter())
        .for_each(|(v, &z)| {
            let k = grid.kernel(z, t);
            v.0 -= x * k.0;
            v.1 -= x * k.1;
        });
}

/// Parabolic maximization of the residual modulus with exact evaluations.
fn refine_peak(residual_at: &impl Fn(f64) -> (f64, f64), z0: f64, dz: f64) -> f64 {
    let mut center = z0;
    let mut half = dz;
    for _ in 0..12 {
        let (a, b, c) = (center - half, center, center + half);
        let (fa, fb, fc) = (
            modulus(residual_at(a)),
            modulus(residual_at(b)),
            modulus(residual_at(c)),
        );
        let denom = fa - 2.0 * fb + fc;
        let shift = if denom != 0.0 {
            (0.5 * (fa - fc) / denom * half).clamp(-half, half)
        } else {
            0.0
        };
        center += shift;
        half *= 0.5;
        if half < 1e-7 * dz {
            break;
        }
    }
    center.max(0.0)
}

/// Joint least-squares fit of `Q(s) ≈ Σ_j x_j cos(t_j s) + x_c` over the
/// integration grid with trapezoid weights. Returns the cosine coefficients
/// (frequency order) and the constant.
fn lsq_amplitudes(grid: &QGrid, freqs: &[f64]) -> Result<(Vec<f64>, f64), ReconstructError> {
    let k = freqs.len();
    let dim = k + 1;
    let n = grid.samples.len();
    let mut normal = vec![0.0f64; dim * dim];
    let mut rhs = vec![0.0f64; dim];
    let mut row = vec![0.0f64; dim];
    for i in 0..n {
        let s = grid.step * i as f64;
        let w = if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
        for (j, &t) in freqs.iter().enumerate() {
            row[j] = (t * s).cos();
        }
        row[k] = 1.0;
        let q = grid.samples[i];
        for a in 0..dim {
            rhs[a] += w * row[a] * q;
            for b in a..dim {
                normal[a * dim + b] += w * row[a] * row[b];
            }
        }
    }
    for a in 0..dim {
        for b in 0..a {
            normal[a * dim + b] = normal[b * dim + a];
        }
    }
    let x = solve_dense(&mut normal, &mut rhs, dim).ok_or_else(|| {
        ReconstructError::InvalidParams("singular normal equations in amplitude fit".into())
    })?;
    Ok((x[..k].to_vec(), x[k]))
}

/// Gaussian elimination with partial pivoting on a small dense system.
fn solve_dense(a: &mut [f64], b: &mut [f64], dim: usize) -> Option<Vec<f64>> {
    for col in 0..dim {
        let mut pivot = col;
        for r in col + 1..dim {
            if a[r * dim + col].abs() > a[pivot * dim + col].abs() {
                pivot = r;
            }
        }
        if a[pivot * dim + col] == 0.0 {
            return None;
        }
        if pivot != col {
            for c in 0..dim {
                a.swap(col * dim + c, pivot * dim + c);
            }
            b.swap(col, pivot);
        }
        let d = a[col * dim + col];
        for r in col + 1..dim {
            let f = a[r * dim + col] / d;
            if f == 0.0 {
                continue;
            }
            for c in col..dim {
                a[r * dim + c] -= f * a[col * dim + c];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = vec![0.0; dim];
    for col in (0..dim).rev() {
        let mut acc = b[col];
        for c in col + 1..dim {
            acc -= a[col * dim + c] * x[c];
        }
        x[col] = acc / a[col * dim + col];
    }
    Some(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::charpoly::CharPoly;
    use crate::spectra::{find_quasi_eigenvalues, perturb_spectrum, PerturbOpts, RootOpts};

    fn cosine_spectrum(sigma_max: f64) -> QuasiSpectrum {
        let f = CharPoly::from_parts(vec![1.0], vec![1.0], 0.0).unwrap();
        find_quasi_eigenvalues(&f, sigma_max, &RootOpts::default()).unwrap()
    }

    #[test]
    fn product_at_zero_is_one() {
        let s = cosine_spectrum(200.0);
        let p = ProductEvaluator::new(&s, 40.0).unwrap();
        assert!((p.eval(0.0).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn product_vanishes_at_roots() {
        let s = cosine_spectrum(200.0);
        let first = s.values[0];
        let p = ProductEvaluator::new(&s, 40.0).unwrap();
        let nearby = p.eval(first + 0.5).unwrap().abs();
        assert!(p.eval(first).unwrap().abs() <= 1e-12 * nearby.max(1.0));
    }

    #[test]
    fn product_ratio_matches_cosine() {
        // Π(1 − σ²/σ_m²) over cos-roots reproduces cos up to a constant
        // that cancels in ratios.
        let s = cosine_spectrum(200.0);
        let p = ProductEvaluator::new(&s, 48.0).unwrap();
        let ratio = p.eval(1.0).unwrap() / p.eval(2.0).unwrap();
        let want = 1.0f64.cos() / 2.0f64.cos();
        assert!(
            (ratio - want).abs() < 1e-3 * want.abs(),
            "{ratio} vs {want}"
        );
    }

    #[test]
    fn window_guard_fires() {
        let s = cosine_spectrum(200.0);
        let p = ProductEvaluator::new(&s, 40.0).unwrap();
        assert!(matches!(
            p.eval(41.0),
            Err(ReconstructError::WindowExceeded { .. })
        ));
        assert!(matches!(
            ProductEvaluator::new(&s, 60.0),
            Err(ReconstructError::InsufficientSpectrum { .. })
        ));
    }

    #[test]
    fn c0_is_one_for_identical_sequences() {
        let s = cosine_spectrum(300.0);
        let l = perturb_spectrum(
            &s,
            &PerturbOpts {
                amplitude: 0.0,
                decay: 1.0,
                seed: 0,
                force_zero_first: false,
            },
        );
        let c0 = compute_c0(&s, &l, s.values.len(), DEFAULT_C0_TOL).unwrap();
        assert!((c0.value - 1.0).abs() < 1e-12);
        assert!(c0.tail_bound < 1e-12);
    }

    #[test]
    fn c0_converges_for_decaying_perturbation() {
        let s = cosine_spectrum(40_000.0);
        let l = perturb_spectrum(
            &s,
            &PerturbOpts {
                amplitude: 0.1,
                decay: 1.5,
                seed: 11,
                force_zero_first: false,
            },
        );
        let c0 = compute_c0(&s, &l, 10_000, DEFAULT_C0_TOL).unwrap();
        assert!(c0.value.is_finite() && c0.value > 0.0);
        assert!(c0.tail_bound < 1e-3, "tail {}", c0.tail_bound);
    }

    #[test]
    fn c0_middle_branch_sign() {
        // Force n₀ = m₀ + 1: the leading factor is −σ₁².
        let s = cosine_spectrum(300.0);
        let l = perturb_spectrum(
            &s,
            &PerturbOpts {
                amplitude: 0.0,
                decay: 1.0,
                seed: 0,
                force_zero_first: true,
            },
        );
        assert_eq!(l.zero_count, 1);
        let c0 = compute_c0(&s, &l, s.values.len(), 10.0).unwrap();
        let want = -s.values[0] * s.values[0];
        assert!(
            (c0.value - want).abs() < 1e-9 * want.abs(),
            "{} vs {want}",
            c0.value
        );
    }

    #[test]
    fn transform_of_pure_cosine_peaks_at_its_frequency() {
        let q = 3.0f64;
        let t_len = 200.0;
        let a = mean_transform_of(|s| (q * s).cos(), 0.0, 5.0, 0.01, t_len).unwrap();
        let at = |z: f64| {
            let idx = ((z - a.z_grid[0]) / 0.01).round() as usize;
            a.values[idx]
        };
        assert!((at(q) - 0.5).abs() < 2.0 / t_len, "peak {}", at(q));
        assert!(at(1.0).abs() < 4.0 / t_len);
        assert!(at(4.3).abs() < 4.0 / t_len);
    }

    #[test]
    fn transform_of_constant_concentrates_at_zero() {
        let t_len = 100.0;
        let a = mean_transform_of(|_| 0.7, 0.0, 2.0, 0.1, t_len).unwrap();
        assert!((a.values[0] - 0.7).abs() < 1e-9);
        let idx = (1.0 / 0.1) as usize;
        assert!(a.values[idx].abs() < 4.0 * 0.7 / t_len);
    }

    #[test]
    fn transform_is_linear() {
        let f1 = |s: f64| (2.0 * s).cos();
        let f2 = |s: f64| (3.3 * s).cos();
        let (a, b) = (1.7, -0.4);
        let t_len = 60.0;
        let lhs = mean_transform_of(|s| a * f1(s) + b * f2(s), 0.0, 4.0, 0.05, t_len).unwrap();
        let t1 = mean_transform_of(f1, 0.0, 4.0, 0.05, t_len).unwrap();
        let t2 = mean_transform_of(f2, 0.0, 4.0, 0.05, t_len).unwrap();
        for i in 0..lhs.values.len() {
            let want = a * t1.values[i] + b * t2.values[i];
            assert!((lhs.values[i] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn resolution_guard_fires() {
        let err = mean_transform_of(|s| s.cos(), 0.0, 2.0, 0.01, 10.0).unwrap_err();
        assert!(matches!(err, ReconstructError::ResolutionTooCoarse { .. }));
    }

    #[test]
    fn recover_pure_cosine() {
        let s = cosine_spectrum(400.0);
        let rec = recover_charpoly(&s, &RecoveryOpts::default()).unwrap();
        let f = rec.char_poly;
        assert_eq!(f.freqs.len(), 1);
        let cell = 2.0 * std::f64::consts::PI / rec.diagnostics.t_integration;
        assert!((f.freqs[0] - 1.0).abs() < cell, "freq {}", f.freqs[0]);
        assert!((f.amps[0] - 1.0).abs() < 0.05);
        assert!(f.const_term.abs() < 0.05);
    }

    #[test]
    fn recover_eight_term_example_from_exact_roots() {
        let spec = crate::charpoly::PolygonSpec::from_cosines(
            &[0.5, -2.0 / 3.0, 0.25, 0.2],
            vec![
                std::f64::consts::E,
                std::f64::consts::PI,
                2.414213562373095,
                0.41421356237309515,
            ],
        )
        .unwrap();
        let f = crate::charpoly::build_char_poly(&spec).unwrap();
        let s = find_quasi_eigenvalues(&f, 4400.0, &RootOpts::default()).unwrap();
        let rec = match recover_charpoly(&s, &RecoveryOpts::default()) {
            Ok(r) => r,
            Err(e) => panic!("recovery failed: {e}"),
        };
        let g = rec.char_poly;
        assert_eq!(g.freqs.len(), 8, "freqs: {:?}", g.freqs);
        for k in 0..8 {
            assert!(
                (g.freqs[k] - f.freqs[k]).abs() < 5e-3,
                "freq {k}: {} vs {}",
                g.freqs[k],
                f.freqs[k]
            );
            assert!(
                (g.amps[k] - f.amps[k]).abs() < 0.02,
                "amp {k}: {} vs {}",
                g.amps[k],
                f.amps[k]
            );
        }
        assert!(
            (g.const_term - f.const_term).abs() < 0.02,
            "const {} vs {}",
            g.const_term,
            f.const_term
        );
    }

    #[test]
    fn recover_pure_cosine_without_lsq() {
        let s = cosine_spectrum(400.0);
        let rec = recover_charpoly(
            &s,
            &RecoveryOpts {
                lsq_amplitudes: false,
                ..RecoveryOpts::default()
            },
        )
        .unwrap();
        let f = rec.char_poly;
        assert_eq!(f.freqs.len(), 1);
        assert!((f.freqs[0] - 1.0).abs() < 0.05);
        assert!((f.amps[0] - 1.0).abs() < 1e-12, "normalized top amplitude");
        assert!(f.const_term.abs() < 0.05);
    }
}
