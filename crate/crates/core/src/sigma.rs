//! Spectral data of `Sigma = T T^T`: distinct eigenvalues, multiplicities and
//! the dimensions of `T`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative tolerance under which two eigenvalues are treated as one.
pub const MERGE_TOL: f64 = 1e-10;
/// Tolerance on `(1/K) sum l_i s_i = 1`.
pub const NORMALIZATION_TOL: f64 = 1e-12;

/// Distinct nonzero eigenvalues `s` (strictly descending) of `T T^T` with
/// integer multiplicities `l`, for `T` of shape `n_rows x n_cols`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SigmaSpectrum {
    s: Vec<f64>,
    l: Vec<usize>,
    n_rows: usize,
    n_cols: usize,
}

/// Model constants shared by every circular-law computation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub tau: f64,
    pub z_mod: f64,
    pub z_band_min: f64,
}

impl Default for ModelParams {
    fn default() -> Self {
        Self {
            tau: 0.05,
            z_mod: 0.0,
            z_band_min: 0.05,
        }
    }
}

impl ModelParams {
    pub fn with_z(z_mod: f64) -> Self {
        Self {
            z_mod,
            ..Self::default()
        }
    }

    /// Rejects `|z|` inside the band `||z|^2 - 1| < z_band_min`.
    pub fn check_band(&self) -> Result<()> {
        check_z_band(self.z_mod, self.z_band_min)
    }
}

pub fn check_z_band(z_mod: f64, band: f64) -> Result<()> {
    if !(z_mod.is_finite() && z_mod >= 0.0) {
        return Err(Error::InvalidParameter(format!("|z| must be finite and >= 0, got {z_mod}")));
    }
    if (z_mod * z_mod - 1.0).abs() < band {
        return Err(Error::ExcludedBand { z_mod, band });
    }
    Ok(())
}

fn group_descending(mut pairs: Vec<(f64, usize)>) -> (Vec<f64>, Vec<usize>) {
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut s: Vec<f64> = Vec::new();
    let mut l: Vec<usize> = Vec::new();
    // weighted mean of merged values keeps the trace exact
    let mut acc = 0.0;
    for (v, m) in pairs {
        if let Some(last) = s.last_mut() {
            let cnt = *l.last().unwrap();
            if (*last - v).abs() <= MERGE_TOL * last.abs().max(v.abs()) {
                acc += v * m as f64;
                let total = cnt + m;
                *l.last_mut().unwrap() = total;
                *last = acc / total as f64;
                continue;
            }
        }
        acc = v * m as f64;
        s.push(v);
        l.push(m);
    }
    (s, l)
}

impl SigmaSpectrum {
    /// Strict constructor: values positive, multiplicities summing to
    /// `min(n_rows, n_cols)` and `(1/K) sum l_i s_i = 1`. Equal values are merged.
    pub fn new(s: Vec<f64>, l: Vec<usize>, n_rows: usize, n_cols: usize) -> Result<Self> {
        let spec = Self::unnormalized(s, l, n_rows, n_cols)?;
        let mean = spec.mean();
        if (mean - 1.0).abs() > NORMALIZATION_TOL {
            return Err(Error::InvalidSpectrum(format!(
                "(1/K) sum l_i s_i = {mean}, expected 1 (normalize first)"
            )));
        }
        Ok(spec)
    }

    /// Groups and validates without the normalization requirement.
    pub fn unnormalized(s: Vec<f64>, l: Vec<usize>, n_rows: usize, n_cols: usize) -> Result<Self> {
        if s.is_empty() {
            return Err(Error::InvalidSpectrum("empty spectrum".into()));
        }
        if s.len() != l.len() {
            return Err(Error::InvalidSpectrum(format!(
                "{} values but {} multiplicities",
                s.len(),
                l.len()
            )));
        }
        if n_rows == 0 || n_cols == 0 {
            return Err(Error::InvalidSpectrum("dimensions must be >= 1".into()));
        }
        if let Some(bad) = s.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
            return Err(Error::InvalidSpectrum(format!("eigenvalue {bad} is not positive")));
        }
        if l.iter().any(|&m| m == 0) {
            return Err(Error::InvalidSpectrum("zero multiplicity".into()));
        }
        let k = n_rows.min(n_cols);
        let total: usize = l.iter().sum();
        if total != k {
            return Err(Error::InvalidSpectrum(format!(
                "multiplicities sum to {total}, expected K = {k}"
            )));
        }
        let (s, l) = group_descending(s.into_iter().zip(l).collect());
        Ok(Self { s, l, n_rows, n_cols })
    }

    /// `Sigma = I` of size `K = n`.
    pub fn identity(n: usize) -> Self {
        Self {
            s: vec![1.0],
            l: vec![n],
            n_rows: n,
            n_cols: n,
        }
    }

    /// Equal-weight two-point spectrum `{hi, lo}` on a square `n x n` model
    /// (`n` even). Values are used as given.
    pub fn two_point(hi: f64, lo: f64, n: usize) -> Result<Self> {
        if n % 2 != 0 {
            return Err(Error::InvalidParameter("two_point needs even n".into()));
        }
        Self::new(vec![hi, lo], vec![n / 2, n / 2], n, n)
    }

    /// Two-point spectrum `{32/17, 2/17}` with equal weights, the standard
    /// non-trivial example used throughout the tests.
    pub fn bimodal(n: usize) -> Self {
        Self::two_point(32.0 / 17.0, 2.0 / 17.0, n).expect("valid two-point spectrum")
    }

    pub fn s(&self) -> &[f64] {
        &self.s
    }

    pub fn l(&self) -> &[usize] {
        &self.l
    }

    /// Number of distinct eigenvalues.
    pub fn n_distinct(&self) -> usize {
        self.s.len()
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn k(&self) -> usize {
        self.n_rows.min(self.n_cols)
    }

    /// `l_i / K`.
    pub fn weights(&self) -> Vec<f64> {
        let k = self.k() as f64;
        self.l.iter().map(|&m| m as f64 / k).collect()
    }

    /// `(1/K) sum l_i s_i`.
    pub fn mean(&self) -> f64 {
        self.s.iter().zip(self.weights()).map(|(s, w)| s * w).sum()
    }

    /// `t_0 = ((1/K) sum l_i / s_i)^{-1}`.
    pub fn harmonic_mean_t0(&self) -> f64 {
        let inv: f64 = self.s.iter().zip(self.weights()).map(|(s, w)| w / s).sum();
        1.0 / inv
    }

    /// The `K` eigenvalues with multiplicities, descending.
    pub fn expand(&self) -> Vec<f64> {
        self.s
            .iter()
            .zip(&self.l)
            .flat_map(|(&s, &m)| std::iter::repeat_n(s, m))
            .collect()
    }

    /// Singular values of `T`, `sqrt(s_i)` repeated, descending.
    pub fn singular_values(&self) -> Vec<f64> {
        self.expand().into_iter().map(f64::sqrt).collect()
    }

    /// Same spectrum for a model of different size with the same weights.
    pub fn rescaled_dims(&self, n_rows: usize, n_cols: usize) -> Result<Self> {
        let k_old = self.k();
        let k_new = n_rows.min(n_cols);
        let mut l = Vec::with_capacity(self.l.len());
        for &m in &self.l {
            if (m * k_new) % k_old != 0 {
                return Err(Error::InvalidParameter(format!(
                    "multiplicity {m}/{k_old} does not scale to K = {k_new}"
                )));
            }
            l.push(m * k_new / k_old);
        }
        Self::unnormalized(self.s.clone(), l, n_rows, n_cols)
    }

    /// Checks `tau <= s_n`, `s_1 <= 1/tau` and `tau <= M/N <= 1/tau`.
    pub fn check_tau(&self, tau: f64) -> Result<()> {
        let s1 = self.s[0];
        let sn = *self.s.last().unwrap();
        if sn < tau || s1 > 1.0 / tau {
            return Err(Error::InvalidSpectrum(format!(
                "eigenvalues [{sn}, {s1}] outside [tau, 1/tau] for tau = {tau}"
            )));
        }
        let ratio = self.n_cols as f64 / self.n_rows as f64;
        if ratio < tau || ratio > 1.0 / tau {
            return Err(Error::InvalidSpectrum(format!(
                "aspect ratio M/N = {ratio} outside [tau, 1/tau]"
            )));
        }
        Ok(())
    }

    /// Rescales so that `(1/K) sum l_i s_i = 1`; returns the factor applied.
    pub fn normalize(&self) -> (Self, f64) {
        let ratio = 1.0 / self.mean();
        let s: Vec<f64> = self.s.iter().map(|v| v * ratio).collect();
        let (s, l) = group_descending(s.into_iter().zip(self.l.iter().copied()).collect());
        (
            Self {
                s,
                l,
                n_rows: self.n_rows,
                n_cols: self.n_cols,
            },
            ratio,
        )
    }
}

/// Groups squared singular values `d_i^2` of `T` into a spectrum of `T T^T`.
pub fn sigma_from_singular_values(
    d: &[f64],
    n_rows: usize,
    n_cols: usize,
    auto_normalize: bool,
) -> Result<SigmaSpectrum> {
    if d.is_empty() {
        return Err(Error::InvalidSpectrum("no singular values".into()));
    }
    let k = n_rows.min(n_cols);
    if d.len() != k {
        return Err(Error::InvalidSpectrum(format!(
            "{} singular values given, expected K = {k}",
            d.len()
        )));
    }
    if let Some(bad) = d.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
        return Err(Error::InvalidSpectrum(format!("singular value {bad} is not positive")));
    }
    let spec = SigmaSpectrum::unnormalized(d.iter().map(|x| x * x).collect(), vec![1; k], n_rows, n_cols)?;
    if auto_normalize {
        Ok(spec.normalize().0)
    } else {
        let mean = spec.mean();
        if (mean - 1.0).abs() > NORMALIZATION_TOL {
            return Err(Error::InvalidSpectrum(format!(
                "(1/K) sum d_i^2 = {mean}, expected 1 (enable normalization)"
            )));
        }
        Ok(spec)
    }
}

/// Parses a number, allowing a single `a/b` fraction and `sqrt(x)`.
pub fn parse_number(tok: &str) -> Result<f64> {
    let t = tok.trim();
    if let Some(inner) = t.strip_prefix("sqrt(").and_then(|r| r.strip_suffix(')')) {
        return Ok(parse_number(inner)?.sqrt());
    }
    if let Some((a, b)) = t.split_once('/') {
        let num = parse_number(a)?;
        let den = parse_number(b)?;
        return Ok(num / den);
    }
    if let Some((a, b)) = t.split_once('*') {
        return Ok(parse_number(a)? * parse_number(b)?);
    }
    t.parse::<f64>()
        .map_err(|_| Error::Parse(format!("not a number: '{t}'")))
}

fn parse_list(raw: &str) -> Result<Vec<String>> {
    let body = raw
        .trim()
        .strip_prefix('[')
        .and_then(|r| r.strip_suffix(']'))
        .ok_or_else(|| Error::Parse(format!("expected [..] list, got '{raw}'")))?;
    Ok(body
        .split(',')
        .map(|x| x.trim().to_string())
        .filter(|x| !x.is_empty())
        .collect())
}

/// Parsed contents of a spectrum file.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SpectrumFile {
    pub s: Option<Vec<f64>>,
    pub l: Option<Vec<usize>>,
    pub d: Option<Vec<f64>>,
    pub n_rows: Option<usize>,
    pub n_cols: Option<usize>,
    pub normalize: bool,
}

impl SpectrumFile {
    /// Key-value text: `s = [..]`, `l = [..]`, `N = ..`, `M = ..`, or
    /// `d = [..]` with raw singular values; optional `normalize = true`.
    /// `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut out = SpectrumFile::default();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, val) = line
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("line {}: expected key = value", lineno + 1)))?;
            let val = val.trim();
            match key.trim() {
                "s" => out.s = Some(parse_list(val)?.iter().map(|x| parse_number(x)).collect::<Result<_>>()?),
                "d" => out.d = Some(parse_list(val)?.iter().map(|x| parse_number(x)).collect::<Result<_>>()?),
                "l" => {
                    out.l = Some(
                        parse_list(val)?
                            .iter()
                            .map(|x| x.parse::<usize>().map_err(|_| Error::Parse(format!("bad multiplicity '{x}'"))))
                            .collect::<Result<_>>()?,
                    )
                }
                "N" => out.n_rows = Some(val.parse().map_err(|_| Error::Parse(format!("bad N '{val}'")))?),
                "M" => out.n_cols = Some(val.parse().map_err(|_| Error::Parse(format!("bad M '{val}'")))?),
                "normalize" => {
                    out.normalize = match val {
                        "true" | "1" | "yes" => true,
                        "false" | "0" | "no" => false,
                        _ => return Err(Error::Parse(format!("bad normalize flag '{val}'"))),
                    }
                }
                other => return Err(Error::Parse(format!("line {}: unknown key '{other}'", lineno + 1))),
            }
        }
        Ok(out)
    }

    pub fn into_spectrum(self) -> Result<SigmaSpectrum> {
        let n = self.n_rows.ok_or_else(|| Error::Parse("missing N".into()))?;
        let m = self.n_cols.unwrap_or(n);
        match (self.s, self.l, self.d) {
            (Some(s), Some(l), None) => {
                let spec = SigmaSpectrum::unnormalized(s, l, n, m)?;
                if self.normalize {
                    Ok(spec.normalize().0)
                } else {
                    SigmaSpectrum::new(spec.s, spec.l, n, m)
                }
            }
            (Some(s), None, None) if s.len() == 1 => {
                let spec = SigmaSpectrum::unnormalized(s, vec![n.min(m)], n, m)?;
                Ok(if self.normalize { spec.normalize().0 } else { SigmaSpectrum::new(spec.s, spec.l, n, m)? })
            }
            (None, None, Some(d)) => sigma_from_singular_values(&d, n, m, self.normalize),
            _ => Err(Error::Parse("give either s and l, or d".into())),
        }
    }
}

/// Renders a spectrum in the key-value file format.
pub fn format_spectrum_file(spec: &SigmaSpectrum) -> String {
    let s: Vec<String> = spec.s.iter().map(|v| format!("{v:.17e}")).collect();
    let l: Vec<String> = spec.l.iter().map(|v| v.to_string()).collect();
    format!(
        "s = [{}]\nl = [{}]\nN = {}\nM = {}\n",
        s.join(", "),
        l.join(", "),
        spec.n_rows,
        spec.n_cols
    )
}
