//! Critical exponents, the `k <-> m` dictionary and the regime classifier.
//!
//! `r` and `s` may be `f64::INFINITY`.

use serde::{Deserialize, Serialize};

use crate::diagnostics::energy;
use crate::error::{invalid, Result};
use crate::grid::Field;

fn check_dim(n: usize) -> Result<()> {
    if n == 2 || n == 3 {
        Ok(())
    } else {
        Err(invalid(format!("critical exponents are defined for N = 2, 3, got N = {n}")))
    }
}

/// `k_cr(r) = (2r-1)/(r-1)` for `N = 2`, `(5r-3)/(2r-3)` for `N = 3`.
pub fn k_critical(n: usize, r: f64) -> Result<f64> {
    check_dim(n)?;
    if !(r > n as f64 / 2.0) {
        return Err(invalid(format!("r must exceed N/2 = {}, got {r}", n as f64 / 2.0)));
    }
    Ok(match (n, r.is_infinite()) {
        (2, true) => 2.0,
        (2, false) => (2.0 * r - 1.0) / (r - 1.0),
        (_, true) => 2.5,
        (_, false) => (5.0 * r - 3.0) / (2.0 * r - 3.0),
    })
}

/// Lower end of the `k` window in which a critical time exponent exists:
/// `r/(r-1)` (open) for `N = 2`, `r/(r-3/2)` (closed) for `N = 3`.
pub fn k_lower(n: usize, r: f64) -> Result<f64> {
    check_dim(n)?;
    let shift = if n == 2 { 1.0 } else { 1.5 };
    Ok(if r.is_infinite() { 1.0 } else { r / (r - shift) })
}

/// Critical time integrability `s_cr(k, r)`, or `None` outside its window.
///
/// `N = 2`: `r / (r - (k-1)(r-1))` for `k` in `(r/(r-1), k_cr)`.
/// `N = 3`: `r(k+2) / (r(5-2k) + 3(k-1))` for `k` in `[r/(r-3/2), k_cr]`
/// (infinite at `k = k_cr`).
pub fn s_critical(n: usize, k: f64, r: f64) -> Option<f64> {
    let kc = k_critical(n, r).ok()?;
    let lo = k_lower(n, r).ok()?;
    if !(k > 1.0) {
        return None;
    }
    match n {
        2 if k > lo && k < kc => Some(if r.is_infinite() { 1.0 / (2.0 - k) } else { r / (r - (k - 1.0) * (r - 1.0)) }),
        3 if k >= lo && k <= kc => {
            let value = if r.is_infinite() {
                (k + 2.0) / (5.0 - 2.0 * k)
            } else {
                let den = r * (5.0 - 2.0 * k) + 3.0 * (k - 1.0);
                if den <= 0.0 {
                    f64::INFINITY
                } else {
                    r * (k + 2.0) / den
                }
            };
            Some(if k == kc { f64::INFINITY } else { value })
        }
        _ => None,
    }
}

/// `m = k / (k - 1)`.
pub fn pme_exponent(k: f64) -> Result<f64> {
    if !(k > 1.0) {
        return Err(invalid(format!("k must exceed 1, got {k}")));
    }
    Ok(k / (k - 1.0))
}

/// `k = m / (m - 1)`, the inverse of [`pme_exponent`] (the map is an involution).
pub fn k_from_m(m: f64) -> Result<f64> {
    if !(m > 1.0) {
        return Err(invalid(format!("m must exceed 1, got {m}")));
    }
    Ok(m / (m - 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    /// Exponential `H^1` decay for a time-homogeneous source.
    Thm11Exponential,
    /// Convergence for a time-dependent source.
    Thm12Convergent,
    OpenRegion,
    Invalid,
}

impl Verdict {
    pub fn as_str(&self) -> &'static str {
        match self {
            Verdict::Thm11Exponential => "thm11_exponential",
            Verdict::Thm12Convergent => "thm12_convergent",
            Verdict::OpenRegion => "open_region",
            Verdict::Invalid => "invalid",
        }
    }
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegimeQuery {
    pub n: usize,
    pub k: f64,
    pub r: f64,
    pub s: f64,
    pub time_homogeneous: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeReport {
    pub n: usize,
    pub k: f64,
    #[serde(with = "extended_float")]
    pub r: f64,
    #[serde(with = "extended_float")]
    pub s: f64,
    pub k_cr: Option<f64>,
    #[serde(with = "extended_float_opt")]
    pub s_cr: Option<f64>,
    pub verdict: Verdict,
    pub initial_energy: Option<f64>,
    pub notes: Vec<String>,
}

/// JSON has no infinity; exponents serialize it as the string `"inf"`.
pub mod extended_float {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_infinite() && *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(*v)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) if t == "inf" || t == "infinity" => Ok(f64::INFINITY),
            Repr::Text(t) => Err(serde::de::Error::custom(format!("expected a number or \"inf\", got {t:?}"))),
        }
    }
}

mod extended_float_opt {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            Some(x) => super::extended_float::serialize(x, s),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
        #[derive(serde::Deserialize)]
        struct Wrap(#[serde(with = "super::extended_float")] f64);
        Ok(Option::<Wrap>::deserialize(d)?.map(|w| w.0))
    }
}

fn invalid_report(q: &RegimeQuery, reason: String) -> RegimeReport {
    RegimeReport {
        n: q.n,
        k: q.k,
        r: q.r,
        s: q.s,
        k_cr: None,
        s_cr: None,
        verdict: Verdict::Invalid,
        initial_energy: None,
        notes: vec![reason],
    }
}

/// Decides which convergence statement, if any, covers `(N, k, r, s)`.
///
/// `N = 2` includes the boundary `k = k_cr` and uses an open `s` window;
/// `N = 3` excludes `k = k_cr` from the exponential case and closes the `s`
/// window at `s_cr`. With `v0` and `f0`, `E(v0)` is evaluated as well.
pub fn classify_regime(q: &RegimeQuery, v0: Option<&Field>, f0: Option<&Field>) -> RegimeReport {
    if q.n != 2 && q.n != 3 {
        return invalid_report(q, format!("convergence statements cover N = 2, 3 only (N = {})", q.n));
    }
    if !(q.k > 1.0) {
        return invalid_report(q, format!("k must exceed 1 (k = {})", q.k));
    }
    if !(q.r > q.n as f64 / 2.0) {
        return invalid_report(q, format!("r must exceed N/2 (r = {})", q.r));
    }
    if !(q.s >= 1.0) {
        return invalid_report(q, format!("s must lie in [1, inf] (s = {})", q.s));
    }
    let kc = k_critical(q.n, q.r).expect("checked above");
    let lo = k_lower(q.n, q.r).expect("checked above");
    let s_cr = s_critical(q.n, q.k, q.r);
    let s_inf = q.s.is_infinite();
    let mut notes = Vec::new();

    let verdict = if q.n == 2 {
        if q.k >= kc && s_inf && q.time_homogeneous {
            Verdict::Thm11Exponential
        } else if (q.k >= kc && s_inf) || (q.k > lo && q.k < kc && s_cr.is_some_and(|sc| q.s < sc)) {
            Verdict::Thm12Convergent
        } else {
            Verdict::OpenRegion
        }
    } else if q.k > kc && s_inf && q.time_homogeneous {
        Verdict::Thm11Exponential
    } else if (q.k > kc && s_inf) || (q.k >= lo && q.k <= kc && s_cr.is_some_and(|sc| q.s <= sc)) {
        Verdict::Thm12Convergent
    } else {
        Verdict::OpenRegion
    };

    let integrability = if q.n == 2 { "int v0^-(k+eps) < inf" } else { "int v0^-(3k/2) < inf" };
    match v0 {
        Some(v) if v.check_positive().is_ok() => {
            notes.push(format!("{integrability}: satisfied (discrete, positive data)"))
        }
        Some(_) => notes.push(format!("{integrability}: not satisfied (v0 has nonpositive cells)")),
        None => notes.push(format!("{integrability}: not checked (no v0 supplied)")),
    }
    if q.time_homogeneous {
        notes.push("source is time-homogeneous: int ||f_t||_2 dt = 0".into());
    } else {
        notes.push("int ||f_t||_2 dt < inf: not checked here (see time-variation proxy)".into());
    }
    let initial_energy = match (v0, f0) {
        (Some(v), Some(f)) => energy(v, f).ok(),
        _ => None,
    };
    if let Some(e) = initial_energy {
        notes.push(format!("E(v0) = {e:.6e}; E(v0) < 0 is {}", e < 0.0));
    }
    if q.n == 2 && q.r.is_infinite() && q.k > 1.0 && q.k < 2.0 {
        notes.push(format!(
            "for N = 2, r = inf the alternative closed form (k+2)/(5-2k) = {:.6} is also quoted for this range; \
             s_cr here uses r/(r-(k-1)(r-1)) -> 1/(2-k) = {:.6}",
            (q.k + 2.0) / (5.0 - 2.0 * q.k),
            1.0 / (2.0 - q.k)
        ));
    }

    RegimeReport { n: q.n, k: q.k, r: q.r, s: q.s, k_cr: Some(kc), s_cr, verdict, initial_energy, notes }
}
