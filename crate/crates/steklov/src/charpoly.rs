//! Polygon data and the characteristic trigonometric polynomial.
//!
//! A curvilinear polygon enters the spectral machinery only through its side
//! lengths `ℓ_j > 0` and the cosines `c_j = cos(π²/(2α_j))` of its angles
//! `α_j ∈ (0, π)`. The characteristic polynomial is the even trigonometric
//! polynomial
//!
//! ```text
//! F(σ) = Σ_{ζ} p_ζ · cos(|ℓ·ζ| σ) − Π_j sin(π²/(2α_j)),
//! ```
//!
//! where `ζ` runs over the 2^(n−1) sign vectors with first entry `+1` and
//! `p_ζ` is the product of `c_j` over the cyclic sign-change positions of
//! `ζ`. This module builds, evaluates, and compares these polynomials, and
//! classifies polygon data (admissible / special / exceptional).

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Hard cap on the number of vertices: term enumeration is `2^(n−1)` and the
/// admissibility check is `3^n`, so anything beyond this is rejected instead
/// of silently blowing up.
pub const MAX_VERTICES: usize = 20;

/// Merged amplitudes smaller than this (relative to the largest amplitude)
/// are dropped from the polynomial. Exact special-angle cancellations leave
/// residues of order 1e−16; genuine amplitudes of interest sit far above.
pub const DROP_AMP_TOL: f64 = 1e-13;

/// Default relative tolerance (times the perimeter) for merging coincident
/// frequencies.
pub const DEFAULT_TOL_FREQ_REL: f64 = 1e-9;

/// Default tolerance on `|c_j|` below which an angle counts as special.
pub const DEFAULT_TOL_SPECIAL: f64 = 1e-10;

/// Default tolerance on `1 − |c_j|` below which an angle counts as
/// exceptional.
pub const DEFAULT_EPS_ANGLE: f64 = 1e-10;

/// Default relative incommensurability margin for admissibility checks.
pub const DEFAULT_TOL_COMM: f64 = 1e-6;

/// Errors from polygon validation and polynomial construction.
#[derive(Debug, Error)]
pub enum CharPolyError {
    #[error("invalid polygon data: {0}")]
    InvalidSpec(String),
    #[error("polygon has {n} vertices; exhaustive enumeration is limited to {max}")]
    SizeTooLarge { n: usize, max: usize },
    #[error("invalid characteristic polynomial: {0}")]
    InvalidCharPoly(String),
}

/// Parity of an exceptional angle `π/(2k)`, i.e. the sign `(−1)^k`, and of
/// an exceptional boundary component (even when the end parities agree).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Parity {
    Even,
    Odd,
}

impl Parity {
    pub fn sign(self) -> f64 {
        match self {
            Parity::Even => 1.0,
            Parity::Odd => -1.0,
        }
    }

    pub fn from_sign(s: f64) -> Parity {
        if s >= 0.0 {
            Parity::Even
        } else {
            Parity::Odd
        }
    }
}

/// Classification of a single angle by its cosine value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AngleClass {
    /// `0 < |c| < 1`: carries full information.
    Ordinary,
    /// `c = 0` (`α = π/(2k+1)`): kills amplitudes.
    Special,
    /// `|c| = 1` (`α = π/(2k)`): decouples boundary components.
    Exceptional(Parity),
}

/// A curvilinear polygon reduced to the data the spectrum can see: angles in
/// `(0, π)` and positive side lengths, enumerated clockwise with the cyclic
/// convention that angle `j` sits between sides `j` and `j+1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PolygonSpecRaw")]
pub struct PolygonSpec {
    angles: Vec<f64>,
    lengths: Vec<f64>,
}

/// Raw serde form: either `{"angles": [...], "lengths": [...]}` or
/// `{"cosines": [...], "lengths": [...]}`.
#[derive(Deserialize)]
struct PolygonSpecRaw {
    #[serde(default)]
    angles: Option<Vec<f64>>,
    #[serde(default)]
    cosines: Option<Vec<f64>>,
    lengths: Vec<f64>,
}

impl TryFrom<PolygonSpecRaw> for PolygonSpec {
    type Error = CharPolyError;

    fn try_from(raw: PolygonSpecRaw) -> Result<Self, CharPolyError> {
        match (raw.angles, raw.cosines) {
            (Some(a), None) => PolygonSpec::new(a, raw.lengths),
            (None, Some(c)) => PolygonSpec::from_cosines(&c, raw.lengths),
            (Some(_), Some(_)) => Err(CharPolyError::InvalidSpec(
                "give either angles or cosines, not both".into(),
            )),
            (None, None) => Err(CharPolyError::InvalidSpec(
                "missing angles or cosines".into(),
            )),
        }
    }
}

impl PolygonSpec {
    /// Validates and stores polygon data. Angles are radians in `(0, π)`,
    /// lengths are positive, and both vectors share the size `n ≥ 1`.
    pub fn new(angles: Vec<f64>, lengths: Vec<f64>) -> Result<Self, CharPolyError> {
        if angles.is_empty() || angles.len() != lengths.len() {
            return Err(CharPolyError::InvalidSpec(format!(
                "need matching non-empty angle/length vectors, got {} and {}",
                angles.len(),
                lengths.len()
            )));
        }
        if angles.len() > MAX_VERTICES {
            return Err(CharPolyError::SizeTooLarge {
                n: angles.len(),
                max: MAX_VERTICES,
            });
        }
        for (j, &a) in angles.iter().enumerate() {
            if !(a.is_finite() && a > 0.0 && a < std::f64::consts::PI) {
                return Err(CharPolyError::InvalidSpec(format!(
                    "angle {j} = {a} is not in (0, π)"
                )));
            }
        }
        for (j, &l) in lengths.iter().enumerate() {
            if !(l.is_finite() && l > 0.0) {
                return Err(CharPolyError::InvalidSpec(format!(
                    "length {j} = {l} is not positive"
                )));
            }
        }
        Ok(PolygonSpec { angles, lengths })
    }

    /// Builds a spec from angle cosines, choosing for each cosine the angle
    /// branch `α = π²/(2(arccos c + 2π))` with non-negative `sin(π²/(2α))`.
    /// The spectrum only ever sees `c_j` and the sine signs, so this branch
    /// choice is canonical.
    pub fn from_cosines(cosines: &[f64], lengths: Vec<f64>) -> Result<Self, CharPolyError> {
        for (j, &c) in cosines.iter().enumerate() {
            if !(c.is_finite() && (-1.0..=1.0).contains(&c)) {
                return Err(CharPolyError::InvalidSpec(format!(
                    "cosine {j} = {c} is not in [-1, 1]"
                )));
            }
        }
        let angles = cosines
            .iter()
            .map(|&c| std::f64::consts::PI.powi(2) / (2.0 * (c.acos() + 2.0 * std::f64::consts::PI)))
            .collect();
        PolygonSpec::new(angles, lengths)
    }

    pub fn n(&self) -> usize {
        self.angles.len()
    }

    pub fn angles(&self) -> &[f64] {
        &self.angles
    }

    pub fn lengths(&self) -> &[f64] {
        &self.lengths
    }

    /// Perimeter `L = Σ ℓ_j`.
    pub fn perimeter(&self) -> f64 {
        self.lengths.iter().sum()
    }

    /// `sin(π²/(2α_j))` for each angle; the product forms the constant term.
    pub fn sines(&self) -> Vec<f64> {
        self.angles
            .iter()
            .map(|&a| (std::f64::consts::PI.powi(2) / (2.0 * a)).sin())
            .collect()
    }
}

/// The cosine vector `c_j = cos(π²/(2α_j))` with per-angle classification.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CosineVector {
    pub values: Vec<f64>,
    pub classes: Vec<AngleClass>,
}

impl CosineVector {
    pub fn has_special(&self) -> bool {
        self.classes.iter().any(|c| matches!(c, AngleClass::Special))
    }

    pub fn has_exceptional(&self) -> bool {
        self.classes
            .iter()
            .any(|c| matches!(c, AngleClass::Exceptional(_)))
    }
}

/// Classifies a cosine value with the given thresholds.
pub fn classify_cosine(c: f64, tol_special: f64, eps_angle: f64) -> AngleClass {
    if c.abs() <= tol_special {
        AngleClass::Special
    } else if 1.0 - c.abs() <= eps_angle {
        AngleClass::Exceptional(Parity::from_sign(c))
    } else {
        AngleClass::Ordinary
    }
}

/// Computes the cosine vector of a polygon and classifies each angle with
/// the default thresholds.
pub fn cosine_vector(spec: &PolygonSpec) -> CosineVector {
    let values: Vec<f64> = spec
        .angles()
        .iter()
        .map(|&a| (std::f64::consts::PI.powi(2) / (2.0 * a)).cos())
        .collect();
    let classes = values
        .iter()
        .map(|&c| classify_cosine(c, DEFAULT_TOL_SPECIAL, DEFAULT_EPS_ANGLE))
        .collect();
    CosineVector { values, classes }
}

/// All angles in `(0, π)` whose cosine `cos(π²/(2α))` equals `c`, for the
/// first `max_branches` branches with non-negative sine, smallest branch
/// argument first. Purely a convenience: recovery results stay in cosine
/// form because the branch is not spectrally determined.
pub fn angles_with_cosine(c: f64, max_branches: usize) -> Vec<f64> {
    let mut out = Vec::new();
    let base = c.clamp(-1.0, 1.0).acos();
    let mut k = 0u32;
    while out.len() < max_branches && k < 1_000 {
        let theta = base + 2.0 * std::f64::consts::PI * f64::from(k);
        let alpha = std::f64::consts::PI.powi(2) / (2.0 * theta);
        if alpha < std::f64::consts::PI {
            out.push(alpha);
        }
        k += 1;
    }
    out
}

/// A vector of signs `±1` over the polygon sides. The change set is the set
/// of cyclic positions `j` with `ζ_j ≠ ζ_{j+1}` (index `n+1 ≡ 1`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SignVector(pub Vec<i8>);

impl SignVector {
    /// The `k`-th vector (binary counting over the n−1 free positions) of
    /// the half-set `{+1} × {±1}^{n−1}`.
    pub fn from_mask(n: usize, mask: usize) -> SignVector {
        let mut v = Vec::with_capacity(n);
        v.push(1i8);
        for j in 0..n - 1 {
            v.push(if mask >> j & 1 == 1 { -1 } else { 1 });
        }
        SignVector(v)
    }

    /// Cyclic sign-change positions, 0-based: `j` is in the set when
    /// `ζ_j ≠ ζ_{j+1 mod n}`.
    pub fn change_set(&self) -> Vec<usize> {
        let n = self.0.len();
        (0..n).filter(|&j| self.0[j] != self.0[(j + 1) % n]).collect()
    }

    pub fn dot(&self, lengths: &[f64]) -> f64 {
        self.0
            .iter()
            .zip(lengths)
            .map(|(&s, &l)| f64::from(s) * l)
            .sum()
    }

    /// The coefficient `p_ζ`: product of cosines over the change set.
    pub fn coefficient(&self, cosines: &[f64]) -> f64 {
        self.change_set().iter().map(|&j| cosines[j]).product()
    }
}

/// The characteristic polynomial in merged form
/// `F(σ) = Σ_k amps[k]·cos(freqs[k]·σ) − const_term`, with strictly
/// increasing positive frequencies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CharPolyRaw")]
pub struct CharPoly {
    pub freqs: Vec<f64>,
    pub amps: Vec<f64>,
    pub const_term: f64,
}

#[derive(Deserialize)]
struct CharPolyRaw {
    freqs: Vec<f64>,
    amps: Vec<f64>,
    const_term: f64,
}

impl TryFrom<CharPolyRaw> for CharPoly {
    type Error = CharPolyError;

    fn try_from(raw: CharPolyRaw) -> Result<Self, CharPolyError> {
        CharPoly::from_parts(raw.freqs, raw.amps, raw.const_term)
    }
}

impl CharPoly {
    /// Builds a polynomial from unsorted frequency/amplitude pairs,
    /// validating positivity and strict separation.
    pub fn from_parts(
        freqs: Vec<f64>,
        amps: Vec<f64>,
        const_term: f64,
    ) -> Result<Self, CharPolyError> {
        if freqs.is_empty() || freqs.len() != amps.len() {
            return Err(CharPolyError::InvalidCharPoly(format!(
                "need matching non-empty freq/amp vectors, got {} and {}",
                freqs.len(),
                amps.len()
            )));
        }
        let mut pairs: Vec<(f64, f64)> = freqs.into_iter().zip(amps).collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        for w in pairs.windows(2) {
            if w[1].0 <= w[0].0 {
                return Err(CharPolyError::InvalidCharPoly(format!(
                    "frequencies {} and {} are not strictly increasing",
                    w[0].0, w[1].0
                )));
            }
        }
        if pairs[0].0 <= 0.0 || !pairs[0].0.is_finite() {
            return Err(CharPolyError::InvalidCharPoly(format!(
                "frequency {} is not positive",
                pairs[0].0
            )));
        }
        let (freqs, amps) = pairs.into_iter().unzip();
        Ok(CharPoly {
            freqs,
            amps,
            const_term,
        })
    }

    pub fn max_freq(&self) -> f64 {
        *self.freqs.last().expect("non-empty by construction")
    }

    /// `Σ|r_k| + |r₀|`, the natural scale of `|F|`.
    pub fn amp_scale(&self) -> f64 {
        self.amps.iter().map(|a| a.abs()).sum::<f64>() + self.const_term.abs()
    }

    /// Scale of the `d`-th derivative, `Σ|r_k|·t_k^d`.
    pub fn deriv_scale(&self, d: u32) -> f64 {
        self.freqs
            .iter()
            .zip(&self.amps)
            .map(|(&t, &r)| r.abs() * t.powi(d as i32))
            .sum()
    }

    pub fn eval(&self, sigma: f64) -> f64 {
        self.freqs
            .iter()
            .zip(&self.amps)
            .map(|(&t, &r)| r * (t * sigma).cos())
            .sum::<f64>()
            - self.const_term
    }

    pub fn deriv(&self, sigma: f64) -> f64 {
        -self
            .freqs
            .iter()
            .zip(&self.amps)
            .map(|(&t, &r)| r * t * (t * sigma).sin())
            .sum::<f64>()
    }

    pub fn deriv2(&self, sigma: f64) -> f64 {
        -self
            .freqs
            .iter()
            .zip(&self.amps)
            .map(|(&t, &r)| r * t * t * (t * sigma).cos())
            .sum::<f64>()
    }

    /// Even-order derivative `F^{(2d)}(0)`; all odd-order derivatives vanish
    /// identically at 0 by evenness.
    pub fn even_deriv_at_zero(&self, d: u32) -> f64 {
        if d == 0 {
            return self.eval(0.0);
        }
        let sign = if d % 2 == 0 { 1.0 } else { -1.0 };
        sign * self
            .freqs
            .iter()
            .zip(&self.amps)
            .map(|(&t, &r)| r * t.powi(2 * d as i32))
            .sum::<f64>()
    }
}

/// Evaluates the `order`-th derivative of `F` at `σ` (term-wise exact).
///
/// Panics when `order > 2`; higher derivatives at generic points are not
/// part of the pipeline.
pub fn eval_char_poly(f: &CharPoly, sigma: f64, order: u8) -> f64 {
    match order {
        0 => f.eval(sigma),
        1 => f.deriv(sigma),
        2 => f.deriv2(sigma),
        _ => panic!("eval_char_poly supports orders 0..=2, got {order}"),
    }
}

/// Outcome of the admissibility test.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AdmissibilityReport {
    /// True when `min_{ζ ≠ 0, ζ ∈ {−1,0,1}^n} |ζ·ℓ| > tol_comm · L`.
    pub incommensurable: bool,
    /// The attained minimum of `|ζ·ℓ|` over nonzero sign vectors.
    pub min_combination: f64,
    /// Indices of special angles (`|c_j| ≤ tol_special`).
    pub special_angles: Vec<usize>,
    /// Indices of exceptional angles (`|c_j| ≥ 1 − tol_special` scaled test).
    pub exceptional_angles: Vec<usize>,
    /// True when building the polynomial would merge distinct sign-vector
    /// frequencies (a symptom of commensurable lengths).
    pub merged_frequencies: bool,
}

impl AdmissibilityReport {
    /// Admissible in the strict sense: incommensurable lengths and no
    /// special angles.
    pub fn admissible(&self) -> bool {
        self.incommensurable && self.special_angles.is_empty()
    }
}

/// Exhaustively tests incommensurability of the lengths over `{−1, 0, 1}`
/// and flags special / exceptional angles.
///
/// The scan covers all `3^n − 1` nonzero coefficient vectors, so `n` is
/// capped at [`MAX_VERTICES`].
pub fn check_admissible(
    spec: &PolygonSpec,
    tol_comm: f64,
    tol_special: f64,
) -> Result<AdmissibilityReport, CharPolyError> {
    let n = spec.n();
    if n > MAX_VERTICES {
        return Err(CharPolyError::SizeTooLarge {
            n,
            max: MAX_VERTICES,
        });
    }
    let lengths = spec.lengths();
    let total = spec.perimeter();

    // Half of the 3^n - 1 nonzero vectors suffices: |ζ·ℓ| = |(−ζ)·ℓ|.
    let mut min_combination = f64::INFINITY;
    let mut coeffs = vec![0i8; n];
    loop {
        // Increment the balanced-ternary counter.
        let mut j = 0;
        loop {
            if j == n {
                break;
            }
            if coeffs[j] < 1 {
                coeffs[j] += 1;
                break;
            }
            coeffs[j] = -1;
            j += 1;
        }
        if j == n {
            break;
        }
        let dot: f64 = coeffs
            .iter()
            .zip(lengths)
            .map(|(&c, &l)| f64::from(c) * l)
            .sum();
        min_combination = min_combination.min(dot.abs());
    }

    let cos = cosine_vector(spec);
    let mut special_angles = Vec::new();
    let mut exceptional_angles = Vec::new();
    for (j, &c) in cos.values.iter().enumerate() {
        match classify_cosine(c, tol_special, DEFAULT_EPS_ANGLE) {
            AngleClass::Special => special_angles.push(j),
            AngleClass::Exceptional(_) => exceptional_angles.push(j),
            AngleClass::Ordinary => {}
        }
    }

    // Frequency collision scan mirrors what build_char_poly would merge.
    let tol_freq = DEFAULT_TOL_FREQ_REL * total;
    let mut freqs: Vec<f64> = (0..1usize << (n - 1))
        .map(|mask| SignVector::from_mask(n, mask).dot(lengths).abs())
        .collect();
    freqs.sort_by(f64::total_cmp);
    let merged_frequencies = freqs.windows(2).any(|w| w[1] - w[0] <= tol_freq);

    Ok(AdmissibilityReport {
        incommensurable: min_combination > tol_comm * total,
        min_combination,
        special_angles,
        exceptional_angles,
        merged_frequencies,
    })
}

/// Options for [`build_char_poly_with`].
#[derive(Debug, Clone)]
pub struct BuildOpts {
    /// Frequencies closer than `tol_freq_rel · L` merge into one term.
    pub tol_freq_rel: f64,
    /// Merged amplitudes below `drop_amp_tol · max|amp|` are dropped.
    pub drop_amp_tol: f64,
}

impl Default for BuildOpts {
    fn default() -> Self {
        BuildOpts {
            tol_freq_rel: DEFAULT_TOL_FREQ_REL,
            drop_amp_tol: DROP_AMP_TOL,
        }
    }
}

/// Builds the characteristic polynomial of a polygon with default options.
pub fn build_char_poly(spec: &PolygonSpec) -> Result<CharPoly, CharPolyError> {
    build_char_poly_with(spec, &BuildOpts::default())
}

/// Builds the characteristic polynomial of a polygon.
///
/// Enumerates the `2^(n−1)` sign vectors in binary-counting order, merges
/// terms whose frequencies coincide within `tol_freq_rel · L` (summing
/// amplitudes, averaging frequencies), folds any near-zero frequency into
/// the constant term with the convention `F = Σ r_k cos(t_k σ) − r₀`, and
/// drops vanishing amplitudes. The amplitude of the top frequency is 1 by
/// construction; if a merge alters it, the merged value is kept.
pub fn build_char_poly_with(
    spec: &PolygonSpec,
    opts: &BuildOpts,
) -> Result<CharPoly, CharPolyError> {
    let n = spec.n();
    if n > MAX_VERTICES {
        return Err(CharPolyError::SizeTooLarge {
            n,
            max: MAX_VERTICES,
        });
    }
    let lengths = spec.lengths();
    let cosines = cosine_vector(spec).values;
    let tol_freq = opts.tol_freq_rel * spec.perimeter();

    let mut terms: Vec<(f64, f64)> = (0..1usize << (n - 1))
        .map(|mask| {
            let zeta = SignVector::from_mask(n, mask);
            (zeta.dot(lengths).abs(), zeta.coefficient(&cosines))
        })
        .collect();
    terms.sort_by(|a, b| a.0.total_cmp(&b.0));

    // Cluster by frequency gap and merge.
    let mut freqs = Vec::new();
    let mut amps = Vec::new();
    let mut zero_fold = 0.0;
    let mut i = 0;
    while i < terms.len() {
        let mut j = i + 1;
        while j < terms.len() && terms[j].0 - terms[j - 1].0 <= tol_freq {
            j += 1;
        }
        let cluster = &terms[i..j];
        let amp: f64 = cluster.iter().map(|t| t.1).sum();
        let freq = cluster.iter().map(|t| t.0).sum::<f64>() / cluster.len() as f64;
        if freq.abs() <= tol_freq {
            zero_fold += amp;
        } else {
            freqs.push(freq);
            amps.push(amp);
        }
        i = j;
    }

    let sines: f64 = spec.sines().iter().product();
    let const_term = sines - zero_fold;

    let max_amp = amps.iter().fold(0.0f64, |m, a| m.max(a.abs())).max(1.0);
    let keep: Vec<bool> = amps
        .iter()
        .map(|a| a.abs() > opts.drop_amp_tol * max_amp)
        .collect();
    let freqs: Vec<f64> = freqs
        .iter()
        .zip(&keep)
        .filter(|(_, &k)| k)
        .map(|(&f, _)| f)
        .collect();
    let amps: Vec<f64> = amps
        .iter()
        .zip(&keep)
        .filter(|(_, &k)| k)
        .map(|(&a, _)| a)
        .collect();

    if freqs.is_empty() {
        return Err(CharPolyError::InvalidCharPoly(
            "all amplitudes vanished; polygon data is degenerate".into(),
        ));
    }
    CharPoly::from_parts(freqs, amps, const_term)
}

/// Compares two side-length/cosine cycles up to cyclic shift, reversal of
/// orientation, and one global cosine sign flip.
///
/// The cycles pair side `ℓ_i` with the angle cosine `c_i` that follows it;
/// under reversal starting at position `s` the pairs become
/// `(ℓ_{s−i}, c_{s−i−1})`, which realizes the index shift that reversal
/// induces on the cosine vector.
pub fn loose_equivalent_cycles(
    len_a: &[f64],
    cos_a: &[f64],
    len_b: &[f64],
    cos_b: &[f64],
    tol: f64,
) -> bool {
    let n = len_a.len();
    if n != len_b.len() || cos_a.len() != n || cos_b.len() != n {
        return false;
    }
    let idx = |i: isize| -> usize { i.rem_euclid(n as isize) as usize };
    for shift in 0..n as isize {
        for reversed in [false, true] {
            let matches_len = (0..n as isize).all(|i| {
                let b = if reversed {
                    len_b[idx(shift - i)]
                } else {
                    len_b[idx(shift + i)]
                };
                (len_a[i as usize] - b).abs() <= tol
            });
            if !matches_len {
                continue;
            }
            for sign in [1.0, -1.0] {
                let matches_cos = (0..n as isize).all(|i| {
                    let b = if reversed {
                        cos_b[idx(shift - i - 1)]
                    } else {
                        cos_b[idx(shift + i)]
                    };
                    (cos_a[i as usize] - sign * b).abs() <= tol
                });
                if matches_cos {
                    return true;
                }
            }
        }
    }
    false
}
