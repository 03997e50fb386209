//! Box bound `B` such that an optimal atomic measure is supported in `[0, B]`.
//!
//! For one asset whose deepest out-of-the-money call (strike `k`) trades at
//! price `a > 0`, with second-moment cap `M`, every atom of an optimal
//! measure lies below `(M + sqrt(M (M - 4 a k))) / (2 a)`. When `a = 0` any
//! `B > k` suffices. For several assets the per-asset values are maximized,
//! which is a heuristic rather than a certificate.

use log::warn;
use serde::Serialize;
use thiserror::Error;

use crate::model::GmpProblem;

/// Safety margin applied to the closed-form bound.
pub const MARGIN: f64 = 1.01;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SupportError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("no bound available: {0}")]
    NoBoundAvailable(String),
}

/// `(M + sqrt(M (M - 4 a k))) / (2 a)` for `a > 0`, and `k` for `a = 0`.
pub fn support_bound(a: f64, k: f64, m: f64) -> Result<f64, SupportError> {
    if !(a >= 0.0 && k >= 0.0 && m > 0.0) || !a.is_finite() || !k.is_finite() || !m.is_finite() {
        return Err(SupportError::InvalidInput(format!(
            "need a >= 0, k >= 0, M > 0 (a={a}, k={k}, M={m})"
        )));
    }
    if a == 0.0 {
        return Ok(k);
    }
    let disc = m * (m - 4.0 * a * k);
    if disc < 0.0 {
        return Err(SupportError::InvalidInput(format!(
            "M = {m} < 4ak = {}: data inconsistent with the moment cap",
            4.0 * a * k
        )));
    }
    Ok((m + disc.sqrt()) / (2.0 * a))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundSuggestion {
    /// The value to use for `B`.
    pub value: f64,
    /// Per-asset bounds (with margin) from the closed form, when available.
    pub per_asset: Vec<Option<f64>>,
    /// `true` if `value` is the user's override.
    pub user_override: bool,
    /// The data-derived bound (with margin), when every asset has one.
    pub computed: Option<f64>,
    pub warning: Option<String>,
}

/// Data-derived `B` for `p`, or the configured value with a warning when it
/// falls below the data-derived one.
pub fn suggest_b(p: &GmpProblem) -> Result<BoundSuggestion, SupportError> {
    let mut per_asset = Vec::with_capacity(p.n);
    let mut missing = Vec::new();
    for a in 0..p.n {
        let deepest = p.options_of(a).last();
        let v = match deepest {
            Some(o) if p.has_cap() => match support_bound(o.price, o.strike, p.moment_cap) {
                Ok(v) => Some(v * MARGIN),
                Err(_) => None,
            },
            _ => None,
        };
        if v.is_none() {
            missing.push(p.asset_names[a].clone());
        }
        per_asset.push(v);
    }
    let computed = if missing.is_empty() {
        Some(per_asset.iter().flatten().cloned().fold(0.0, f64::max))
    } else {
        None
    };
    if p.box_bound_user {
        let warning = match computed {
            Some(c) if p.box_bound < c => Some(format!(
                "configured B = {} is below the data-derived bound {c:.6}",
                p.box_bound
            )),
            None => Some(format!(
                "no data-derived bound for {}; using configured B = {}",
                missing.join(", "),
                p.box_bound
            )),
            _ => None,
        };
        if let Some(w) = &warning {
            warn!("{w}");
        }
        return Ok(BoundSuggestion {
            value: p.box_bound,
            per_asset,
            user_override: true,
            computed,
            warning,
        });
    }
    match computed {
        Some(value) => Ok(BoundSuggestion {
            value,
            per_asset,
            user_override: false,
            computed,
            warning: if p.n > 1 {
                Some("multivariate bound is a per-asset heuristic".into())
            } else {
                None
            },
        }),
        None => Err(SupportError::NoBoundAvailable(format!(
            "assets without a usable option price or moment cap: {}",
            missing.join(", ")
        ))),
    }
}
