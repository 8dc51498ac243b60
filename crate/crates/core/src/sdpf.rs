//! The 49-element sparse directional Parseval frame (SDPF) of 5×5 filters.
//!
//! Construction:
//!
//! 1. a B-spline low-pass `h0` whose square-rooted vectorisation `c` is a
//!    unit vector,
//! 2. 24 hand-picked difference filters (first and second order, every
//!    discrete orientation of the 5×5 grid), divided entrywise by `c` and
//!    scaled by the largest `λ` keeping `Q = [c; D1(λ)]` non-expansive,
//! 3. a completion `D2 = Σ2·Vᵀ` from the SVD of `Q`, so that the rows of
//!    `M = [c; D1(λ*); D2]` satisfy `MᵀM = I`.
//!
//! The dictionary filters are the rows of `M` multiplied entrywise by `c`
//! (the first one being `c∘c = h0`).

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::linalg::{Mat, Svd};

/// Side length of every filter.
pub const FILTER_SIZE: usize = 5;
/// Number of entries of a filter (dimension of the frame's space).
pub const FILTER_LEN: usize = FILTER_SIZE * FILTER_SIZE;
/// Number of hand-picked difference filters.
pub const NUM_DIFFERENCE: usize = 24;
/// Total number of dictionary filters.
pub const DICTIONARY_LEN: usize = 1 + NUM_DIFFERENCE + NUM_DIFFERENCE;

/// 1-D coefficients of the fourth-order cardinal B-spline, before the `1/16`.
const BSPLINE: [f64; FILTER_SIZE] = [1.0, 4.0, 6.0, 4.0, 1.0];

/// Directions `(Δcol, Δrow)` from the centre, `Δrow` pointing up.
///
/// Outer ring counter-clockwise from the diagonal corner pair, then the
/// inner ring, horizontal pairs last. Each antipodal pair of the
/// Chebyshev radius-1 and radius-2 rings appears once.
pub const DIRECTIONS: [(i32, i32); 12] = [
    (2, 2),
    (1, 2),
    (0, 2),
    (-1, 2),
    (-2, 2),
    (-2, 1),
    (2, 1),
    (1, 1),
    (0, 1),
    (-1, 1),
    (2, 0),
    (1, 0),
];

/// Frobenius tolerance on `MᵀM - I`.
pub const PARSEVAL_TOL: f64 = 1e-10;
/// Relative tolerance of the random-vector energy check.
pub const ENERGY_TOL: f64 = 1e-8;
/// Tolerance on the dot product between high-pass rows and `c`.
pub const ORTHOGONALITY_TOL: f64 = 1e-12;
/// Singular values of `Q` above `1 + SIGMA_REJECT` are an error.
pub const SIGMA_REJECT: f64 = 1e-9;
/// Singular values within this of 1 are clamped before `√(1 - σ²)`.
pub const SIGMA_CLAMP: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum SdpfError {
    #[error("scaling factor must be positive, got {0}")]
    NonPositiveLambda(f64),
    #[error("difference filter matrix has zero spectral norm")]
    DegenerateDifferenceMatrix,
    #[error("singular value {0} exceeds 1; no Parseval completion exists")]
    SingularValueAboveOne(f64),
    #[error("closed-form and bisection scaling disagree: {closed_form} vs {bisection}")]
    LambdaMismatch { closed_form: f64, bisection: f64 },
    #[error("low-pass filter must be strictly positive")]
    NonPositiveLowpass,
    #[error("expected {expected} filters, got {got}")]
    WrongFilterCount { expected: usize, got: usize },
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("dictionary failed verification: {0}")]
    Verification(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Provenance of a dictionary filter. Indices are 1-based.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FilterTag {
    Lowpass,
    FirstOrder(u8),
    SecondOrder(u8),
    Completion(u8),
}

impl fmt::Display for FilterTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FilterTag::Lowpass => write!(f, "lowpass"),
            FilterTag::FirstOrder(k) => write!(f, "first_order({k})"),
            FilterTag::SecondOrder(k) => write!(f, "second_order({k})"),
            FilterTag::Completion(k) => write!(f, "completion({k})"),
        }
    }
}

impl FromStr for FilterTag {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "lowpass" {
            return Ok(FilterTag::Lowpass);
        }
        let (name, rest) = s.split_once('(').ok_or_else(|| format!("unknown tag `{s}`"))?;
        let k: u8 = rest
            .strip_suffix(')')
            .and_then(|n| n.parse().ok())
            .ok_or_else(|| format!("bad tag index in `{s}`"))?;
        match name {
            "first_order" => Ok(FilterTag::FirstOrder(k)),
            "second_order" => Ok(FilterTag::SecondOrder(k)),
            "completion" => Ok(FilterTag::Completion(k)),
            _ => Err(format!("unknown tag `{s}`")),
        }
    }
}

/// Expected tag of dictionary position `i` (0-based).
pub fn tag_for_index(i: usize) -> FilterTag {
    match i {
        0 => FilterTag::Lowpass,
        1..=12 => FilterTag::FirstOrder(i as u8),
        13..=24 => FilterTag::SecondOrder((i - 12) as u8),
        _ => FilterTag::Completion((i - 24) as u8),
    }
}

/// A 5×5 filter. `entries[r][q]`: row `r` grows downward, column `q`
/// rightward, matching how filters are printed.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Filter5x5 {
    pub entries: [[f64; FILTER_SIZE]; FILTER_SIZE],
    pub tag: FilterTag,
}

impl Filter5x5 {
    pub fn zeros(tag: FilterTag) -> Self {
        Self { entries: [[0.0; FILTER_SIZE]; FILTER_SIZE], tag }
    }

    /// Entries top row first, left to right (the convolution kernel layout).
    pub fn row_major(&self) -> [f64; FILTER_LEN] {
        let mut out = [0.0; FILTER_LEN];
        for (r, row) in self.entries.iter().enumerate() {
            out[r * FILTER_SIZE..(r + 1) * FILTER_SIZE].copy_from_slice(row);
        }
        out
    }

    pub fn from_row_major(values: &[f64], tag: FilterTag) -> Self {
        assert_eq!(values.len(), FILTER_LEN);
        let mut f = Self::zeros(tag);
        for (k, &v) in values.iter().enumerate() {
            f.entries[k / FILTER_SIZE][k % FILTER_SIZE] = v;
        }
        f
    }

    pub fn sum(&self) -> f64 {
        self.entries.iter().flatten().sum()
    }

    pub fn nonzero_count(&self) -> usize {
        self.entries.iter().flatten().filter(|&&v| v != 0.0).count()
    }

    pub fn scaled(&self, s: f64) -> Self {
        let mut f = *self;
        f.entries.iter_mut().flatten().for_each(|v| *v *= s);
        f
    }
}

/// The vectorisation `Λ`: bottom row first, left to right within a row.
pub fn vectorize(f: &Filter5x5) -> [f64; FILTER_LEN] {
    let mut v = [0.0; FILTER_LEN];
    for (k, slot) in v.iter_mut().enumerate() {
        *slot = f.entries[FILTER_SIZE - 1 - k / FILTER_SIZE][k % FILTER_SIZE];
    }
    v
}

/// Inverse of [`vectorize`].
pub fn devectorize(v: &[f64], tag: FilterTag) -> Filter5x5 {
    assert_eq!(v.len(), FILTER_LEN);
    let mut f = Filter5x5::zeros(tag);
    for (k, &x) in v.iter().enumerate() {
        f.entries[FILTER_SIZE - 1 - k / FILTER_SIZE][k % FILTER_SIZE] = x;
    }
    f
}

/// Tensor product of `(1,4,6,4,1)/16` with itself; entries sum to one.
pub fn build_lowpass() -> Filter5x5 {
    let mut f = Filter5x5::zeros(FilterTag::Lowpass);
    for r in 0..FILTER_SIZE {
        for q in 0..FILTER_SIZE {
            f.entries[r][q] = BSPLINE[r] * BSPLINE[q] / 256.0;
        }
    }
    f
}

fn grid_position((dcol, drow): (i32, i32), sign: i32) -> (usize, usize) {
    let center = (FILTER_SIZE / 2) as i32;
    ((center - sign * drow) as usize, (center + sign * dcol) as usize)
}

/// The 12 first-order then 12 second-order central difference filters at
/// unit scale, in [`DIRECTIONS`] order.
pub fn build_difference_filters() -> Vec<Filter5x5> {
    let center = FILTER_SIZE / 2;
    let first = DIRECTIONS.iter().enumerate().map(|(i, &u)| {
        let mut f = Filter5x5::zeros(FilterTag::FirstOrder(i as u8 + 1));
        let (r, q) = grid_position(u, 1);
        f.entries[r][q] = 1.0;
        let (r, q) = grid_position(u, -1);
        f.entries[r][q] = -1.0;
        f
    });
    let second = DIRECTIONS.iter().enumerate().map(|(i, &u)| {
        let mut f = Filter5x5::zeros(FilterTag::SecondOrder(i as u8 + 1));
        f.entries[center][center] = 2.0;
        let (r, q) = grid_position(u, 1);
        f.entries[r][q] = -1.0;
        let (r, q) = grid_position(u, -1);
        f.entries[r][q] = -1.0;
        f
    });
    first.chain(second).collect()
}

/// `c = √Λ(h0)`, a strictly positive unit vector.
pub fn lowpass_root() -> [f64; FILTER_LEN] {
    vectorize(&build_lowpass()).map(f64::sqrt)
}

/// Rows `λ·Λ(h_i)/c` for the 24 difference filters.
pub fn build_d1(lambda: f64) -> Result<Mat, SdpfError> {
    if !(lambda > 0.0) {
        return Err(SdpfError::NonPositiveLambda(lambda));
    }
    let c = lowpass_root();
    let rows: Vec<Vec<f64>> = build_difference_filters()
        .iter()
        .map(|h| vectorize(h).iter().zip(&c).map(|(x, ck)| lambda * x / ck).collect())
        .collect();
    Ok(Mat::from_rows(&rows))
}

/// `Q(λ) = [c; D1(λ)]`, 25×25.
pub fn build_q(lambda: f64) -> Result<Mat, SdpfError> {
    let d1 = build_d1(lambda)?;
    let mut q = Mat::zeros(FILTER_LEN, FILTER_LEN);
    q.row_mut(0).copy_from_slice(&lowpass_root());
    for i in 0..NUM_DIFFERENCE {
        q.row_mut(i + 1).copy_from_slice(d1.row(i));
    }
    Ok(q)
}

/// `1/σ_max(D1(1))`. Exact because every row of `D1` is orthogonal to
/// the unit vector `c`, so `QᵀQ` splits into `ccᵀ` and `λ²·D1ᵀD1`.
pub fn lambda_star_closed_form() -> Result<f64, SdpfError> {
    let sigma = build_d1(1.0)?.spectral_norm();
    if sigma == 0.0 {
        return Err(SdpfError::DegenerateDifferenceMatrix);
    }
    Ok(1.0 / sigma)
}

/// Largest `λ` with `σ_max(Q(λ)) ≤ 1` found by bisection on the spectral
/// norm of `Q`, without using the block structure.
pub fn lambda_star_bisection(rel_tol: f64) -> Result<f64, SdpfError> {
    // σ_max(Q(λ)) is exactly 1 on the admissible side; allow rounding noise.
    let admissible = |l: f64| build_q(l).map(|q| q.spectral_norm() <= 1.0 + 1e-13);
    let mut lo = 0.0;
    let mut hi = 1.0;
    while admissible(hi)? {
        lo = hi;
        hi *= 2.0;
        if hi > 1e12 {
            return Err(SdpfError::DegenerateDifferenceMatrix);
        }
    }
    while hi - lo > rel_tol * hi {
        let mid = 0.5 * (lo + hi);
        if admissible(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

/// Optimal scaling of the difference filters. The closed form is
/// cross-checked against bisection (agreement to `1e-10` relative).
pub fn solve_lambda_star() -> Result<f64, SdpfError> {
    let closed_form = lambda_star_closed_form()?;
    let bisection = lambda_star_bisection(1e-13)?;
    if (closed_form - bisection).abs() > 1e-10 * closed_form {
        return Err(SdpfError::LambdaMismatch { closed_form, bisection });
    }
    Ok(closed_form)
}

/// Output of [`svd_complete`].
#[derive(Clone, Debug)]
pub struct Completion {
    /// The 24 retained rows of `Σ2·Vᵀ`.
    pub rows: Mat,
    /// Norm of the discarded row belonging to `σ1 = 1`.
    pub dropped_row_norm: f64,
    /// Singular values of `Q` before clamping.
    pub singular_values: Vec<f64>,
}

/// Completes the rows of a non-expansive 25×25 `Q` to a Parseval frame.
pub fn svd_complete(q: &Mat) -> Result<Completion, SdpfError> {
    assert_eq!((q.rows(), q.cols()), (FILTER_LEN, FILTER_LEN));
    let svd = Svd::new(q);
    if let Some(&s) = svd.singular_values.iter().find(|&&s| s > 1.0 + SIGMA_REJECT) {
        return Err(SdpfError::SingularValueAboveOne(s));
    }
    let weight = |s: f64| {
        let s = if s > 1.0 - SIGMA_CLAMP { 1.0 } else { s };
        (1.0 - s * s).sqrt()
    };
    let full: Vec<Vec<f64>> = (0..FILTER_LEN)
        .map(|i| {
            let w = weight(svd.singular_values[i]);
            (0..FILTER_LEN).map(|k| w * svd.v[(k, i)]).collect()
        })
        .collect();
    let dropped_row_norm = full[0].iter().map(|x| x * x).sum::<f64>().sqrt();
    Ok(Completion {
        rows: Mat::from_rows(&full[1..]),
        dropped_row_norm,
        singular_values: svd.singular_values,
    })
}

/// The assembled frame and its filters.
#[derive(Clone, Debug, PartialEq)]
pub struct Dictionary {
    pub filters: Vec<Filter5x5>,
    pub lambda_star: f64,
    /// `√Λ(h0)`.
    pub c: [f64; FILTER_LEN],
    /// 49×25 frame matrix; row `i` is `Λ(filter_i) / c`.
    pub frame: Mat,
}

/// Builds the full dictionary from scratch.
pub fn assemble_dictionary() -> Result<Dictionary, SdpfError> {
    let lambda_star = solve_lambda_star()?;
    let c = lowpass_root();
    let d1 = build_d1(lambda_star)?;
    let q = build_q(lambda_star)?;
    let completion = svd_complete(&q)?;

    let mut frame = Mat::zeros(DICTIONARY_LEN, FILTER_LEN);
    frame.row_mut(0).copy_from_slice(&c);
    for i in 0..NUM_DIFFERENCE {
        frame.row_mut(1 + i).copy_from_slice(d1.row(i));
        frame.row_mut(1 + NUM_DIFFERENCE + i).copy_from_slice(completion.rows.row(i));
    }

    let mut filters = Vec::with_capacity(DICTIONARY_LEN);
    filters.push(build_lowpass());
    for (i, h) in build_difference_filters().iter().enumerate() {
        // Same as Λ⁻¹(d(λ*, h)∘c), without the round trip through 1/c.
        filters.push(h.scaled(lambda_star));
        debug_assert_eq!(h.tag, tag_for_index(i + 1));
    }
    for i in 0..NUM_DIFFERENCE {
        let row: Vec<f64> = completion.rows.row(i).iter().zip(&c).map(|(y, ck)| y * ck).collect();
        filters.push(devectorize(&row, tag_for_index(1 + NUM_DIFFERENCE + i)));
    }

    Ok(Dictionary { filters, lambda_star, c, frame })
}

impl Dictionary {
    /// Rebuilds `c` and the frame matrix from filters alone.
    pub fn from_filters(filters: Vec<Filter5x5>, lambda_star: f64) -> Result<Self, SdpfError> {
        if filters.len() != DICTIONARY_LEN {
            return Err(SdpfError::WrongFilterCount { expected: DICTIONARY_LEN, got: filters.len() });
        }
        let a = vectorize(&filters[0]);
        if a.iter().any(|&x| !(x > 0.0)) {
            return Err(SdpfError::NonPositiveLowpass);
        }
        let c = a.map(f64::sqrt);
        let mut frame = Mat::zeros(DICTIONARY_LEN, FILTER_LEN);
        frame.row_mut(0).copy_from_slice(&c);
        for (i, f) in filters.iter().enumerate().skip(1) {
            let v = vectorize(f);
            for (k, slot) in frame.row_mut(i).iter_mut().enumerate() {
                *slot = v[k] / c[k];
            }
        }
        Ok(Self { filters, lambda_star, c, frame })
    }

    /// Filters as row-major 5×5 kernels, in dictionary order.
    pub fn kernels(&self) -> Vec<[f64; FILTER_LEN]> {
        self.filters.iter().map(Filter5x5::row_major).collect()
    }
}

/// Outcome of one verification check.
#[derive(Clone, Debug)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug)]
pub struct VerificationReport {
    pub checks: Vec<Check>,
}

impl VerificationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn failures(&self) -> Vec<&Check> {
        self.checks.iter().filter(|c| !c.passed).collect()
    }
}

impl fmt::Display for VerificationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            writeln!(f, "{} {:<22} {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail)?;
        }
        Ok(())
    }
}

/// Seed for the random energy-conservation vectors.
pub const ENERGY_CHECK_SEED: u64 = 0x5D9F_0001;
pub const ENERGY_CHECK_VECTORS: usize = 1000;

/// Runs every structural and frame check; failures are reported, never raised.
pub fn verify_dictionary(d: &Dictionary) -> VerificationReport {
    let mut checks = Vec::new();
    let m = &d.frame;

    let tags_ok = d.filters.len() == DICTIONARY_LEN
        && d.filters.iter().enumerate().all(|(i, f)| f.tag == tag_for_index(i));
    checks.push(Check {
        name: "structure",
        passed: tags_ok && m.rows() == DICTIONARY_LEN && m.cols() == FILTER_LEN,
        detail: format!("{} filters, frame {}x{}", d.filters.len(), m.rows(), m.cols()),
    });
    if m.rows() != DICTIONARY_LEN || m.cols() != FILTER_LEN {
        return VerificationReport { checks };
    }

    let dev = m.gram().frobenius_distance(&Mat::identity(FILTER_LEN));
    checks.push(Check {
        name: "parseval_identity",
        passed: dev < PARSEVAL_TOL,
        detail: format!("|MtM - I|_F = {dev:.3e}"),
    });

    let mut rng = ChaCha8Rng::seed_from_u64(ENERGY_CHECK_SEED);
    let mut worst_energy = 0.0f64;
    let mut worst_recon = 0.0f64;
    for _ in 0..ENERGY_CHECK_VECTORS {
        let v: Vec<f64> = (0..FILTER_LEN).map(|_| rng.random_range(-1.0..1.0)).collect();
        let norm2: f64 = v.iter().map(|x| x * x).sum();
        let mut energy = 0.0;
        let mut recon = [0.0; FILTER_LEN];
        for i in 0..m.rows() {
            let row = m.row(i);
            let coef: f64 = row.iter().zip(&v).map(|(a, b)| a * b).sum();
            energy += coef * coef;
            recon.iter_mut().zip(row).for_each(|(r, a)| *r += coef * a);
        }
        worst_energy = worst_energy.max((energy - norm2).abs() / norm2);
        let err2: f64 = recon.iter().zip(&v).map(|(a, b)| (a - b) * (a - b)).sum();
        worst_recon = worst_recon.max((err2 / norm2).sqrt());
    }
    checks.push(Check {
        name: "energy_conservation",
        passed: worst_energy < ENERGY_TOL,
        detail: format!("max rel deviation {worst_energy:.3e} over {ENERGY_CHECK_VECTORS} vectors"),
    });
    checks.push(Check {
        name: "reconstruction",
        passed: worst_recon < ENERGY_TOL,
        detail: format!("max rel error {worst_recon:.3e}"),
    });

    let first = m.row(0);
    let worst_dot = (1..m.rows())
        .map(|i| m.row(i).iter().zip(first).map(|(a, b)| a * b).sum::<f64>().abs())
        .fold(0.0, f64::max);
    checks.push(Check {
        name: "highpass_orthogonal",
        passed: worst_dot < ORTHOGONALITY_TOL,
        detail: format!("max |<m_i, m_1>| = {worst_dot:.3e}"),
    });

    let max_norm = (0..m.rows())
        .map(|i| m.row(i).iter().map(|x| x * x).sum::<f64>().sqrt())
        .fold(0.0, f64::max);
    checks.push(Check {
        name: "row_norms",
        passed: max_norm <= 1.0 + ORTHOGONALITY_TOL,
        detail: format!("max row norm {max_norm:.15}"),
    });

    let support = support_violations(d);
    checks.push(Check {
        name: "filter_support",
        passed: support.is_empty(),
        detail: if support.is_empty() { "ok".into() } else { support.join("; ") },
    });

    let mut worst_link = 0.0f64;
    for (i, f) in d.filters.iter().enumerate() {
        let v = vectorize(f);
        for k in 0..FILTER_LEN {
            let expected = if i == 0 { d.c[k] * d.c[k] } else { m[(i, k)] * d.c[k] };
            worst_link = worst_link.max((v[k] - expected).abs());
        }
    }
    checks.push(Check {
        name: "filters_match_frame",
        passed: worst_link < 1e-14,
        detail: format!("max |filter - frame∘c| = {worst_link:.3e}"),
    });

    VerificationReport { checks }
}

fn support_violations(d: &Dictionary) -> Vec<String> {
    let mut issues = Vec::new();
    let lam = d.lambda_star;
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-15 * b.abs().max(1.0);
    let center = FILTER_SIZE / 2;
    for (i, f) in d.filters.iter().enumerate() {
        match f.tag {
            FilterTag::Lowpass => {
                if f.entries.iter().flatten().any(|&v| !(v > 0.0)) || !close(f.sum(), 1.0) {
                    issues.push(format!("filter {}: low-pass not positive with unit sum", i + 1));
                }
            }
            FilterTag::FirstOrder(k) => {
                let u = DIRECTIONS[(k - 1) as usize];
                let (pr, pq) = grid_position(u, 1);
                let (nr, nq) = grid_position(u, -1);
                if f.nonzero_count() != 2
                    || !close(f.entries[pr][pq], lam)
                    || !close(f.entries[nr][nq], -lam)
                {
                    issues.push(format!("filter {}: first-order support", i + 1));
                }
            }
            FilterTag::SecondOrder(k) => {
                let u = DIRECTIONS[(k - 1) as usize];
                let (pr, pq) = grid_position(u, 1);
                let (nr, nq) = grid_position(u, -1);
                if f.nonzero_count() != 3
                    || !close(f.entries[center][center], 2.0 * lam)
                    || !close(f.entries[pr][pq], -lam)
                    || !close(f.entries[nr][nq], -lam)
                {
                    issues.push(format!("filter {}: second-order support", i + 1));
                }
            }
            FilterTag::Completion(_) => {}
        }
    }
    issues
}

/// Text serialisation: a header line, then `<index> <tag> <25 entries>`
/// per filter, entries top row first.
pub fn export_to_string(d: &Dictionary) -> String {
    let mut out = format!(
        "SDPF v1 size={FILTER_SIZE} count={} lambda={:.16e}\n",
        d.filters.len(),
        d.lambda_star
    );
    for (i, f) in d.filters.iter().enumerate() {
        out.push_str(&format!("{} {}", i + 1, f.tag));
        for v in f.row_major() {
            out.push_str(&format!(" {v:.16e}"));
        }
        out.push('\n');
    }
    out
}

/// Parses the text format and re-verifies the result.
pub fn import_from_str(text: &str) -> Result<Dictionary, SdpfError> {
    let parse_err = |line: usize, msg: &str| SdpfError::Parse { line, msg: msg.to_string() };
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| parse_err(1, "empty file"))?;
    let mut fields = header.split_whitespace();
    if fields.next() != Some("SDPF") || fields.next() != Some("v1") {
        return Err(parse_err(1, "missing `SDPF v1` magic"));
    }
    let mut size = None;
    let mut count = None;
    let mut lambda = None;
    for kv in fields {
        let (k, v) = kv.split_once('=').ok_or_else(|| parse_err(1, "expected key=value"))?;
        match k {
            "size" => size = v.parse::<usize>().ok(),
            "count" => count = v.parse::<usize>().ok(),
            "lambda" => lambda = v.parse::<f64>().ok(),
            _ => return Err(parse_err(1, &format!("unknown header key `{k}`"))),
        }
    }
    if size != Some(FILTER_SIZE) {
        return Err(parse_err(1, "unsupported filter size"));
    }
    let count = count.ok_or_else(|| parse_err(1, "missing count"))?;
    let lambda = lambda.ok_or_else(|| parse_err(1, "missing lambda"))?;

    let mut filters = Vec::with_capacity(count);
    for (i, line) in lines.enumerate().take(count) {
        let lineno = i + 2;
        let mut toks = line.split_whitespace();
        let idx: usize = toks
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| parse_err(lineno, "missing index"))?;
        if idx != i + 1 {
            return Err(parse_err(lineno, "filter index out of sequence"));
        }
        let tag: FilterTag = toks
            .next()
            .ok_or_else(|| parse_err(lineno, "missing tag"))?
            .parse()
            .map_err(|e: String| parse_err(lineno, &e))?;
        let values: Vec<f64> = toks
            .map(|t| t.parse::<f64>().map_err(|_| parse_err(lineno, &format!("bad number `{t}`"))))
            .collect::<Result<_, _>>()?;
        if values.len() != FILTER_LEN {
            return Err(parse_err(lineno, &format!("expected {FILTER_LEN} entries, got {}", values.len())));
        }
        filters.push(Filter5x5::from_row_major(&values, tag));
    }
    if filters.len() != count {
        return Err(parse_err(filters.len() + 2, "file truncated"));
    }
    let dict = Dictionary::from_filters(filters, lambda)?;
    let report = verify_dictionary(&dict);
    if !report.passed() {
        let names: Vec<_> = report.failures().iter().map(|c| c.name).collect();
        return Err(SdpfError::Verification(names.join(", ")));
    }
    Ok(dict)
}

pub fn export_dictionary(d: &Dictionary, path: impl AsRef<Path>) -> Result<(), SdpfError> {
    fs::write(path, export_to_string(d))?;
    Ok(())
}

pub fn import_dictionary(path: impl AsRef<Path>) -> Result<Dictionary, SdpfError> {
    import_from_str(&fs::read_to_string(path)?)
}
