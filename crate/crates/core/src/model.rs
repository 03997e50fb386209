//! Problem description: assets with observed call prices, polynomial moment
//! constraints, the payoff to bound, the moment cap `M` and the box `[0, B]^n`.
//!
//! Problems are read from a JSON document:
//!
//! ```json
//! {
//!   "assets": [{"name": "MSFT", "options": [{"strike": 95, "price": 12.875}]}],
//!   "payoff": {"kind": "single_call", "strike": 105},
//!   "moment_constraints": [{"coeffs": [{"exponents": [1], "value": 1}], "rhs": 100, "relation": "eq"}],
//!   "M": 200000,
//!   "B": 400
//! }
//! ```

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::poly::{MultiIndex, Polynomial};
use crate::support;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("validation error: {0}")]
    Validation(String),
}

fn invalid<T>(msg: impl Into<String>) -> Result<T, ModelError> {
    Err(ModelError::Validation(msg.into()))
}

/// Affine function `coeffs . x + offset`; as a region it means `>= 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Affine {
    pub coeffs: Vec<f64>,
    pub offset: f64,
}

impl Affine {
    pub fn new(coeffs: Vec<f64>, offset: f64) -> Self {
        Affine { coeffs, offset }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.offset + self.coeffs.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
    }

    pub fn to_polynomial(&self) -> Polynomial {
        Polynomial::affine(&self.coeffs, self.offset)
    }

    /// Index of the single nonzero coefficient, if there is exactly one.
    pub fn axis(&self) -> Option<usize> {
        let mut nz = self.coeffs.iter().enumerate().filter(|(_, c)| **c != 0.0);
        match (nz.next(), nz.next()) {
            (Some((i, _)), None) => Some(i),
            _ => None,
        }
    }
}

/// `max(0, piece)` restricted to where `piece` is the active maximum.
#[derive(Debug, Clone, PartialEq)]
pub struct PayoffPiece {
    pub piece: Affine,
    /// Halfspaces (`>= 0`) whose intersection is the activation region.
    pub region: Vec<Affine>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PayoffKind {
    #[serde(alias = "weighted-basket", alias = "basket")]
    WeightedBasket,
    #[serde(alias = "call-on-max")]
    CallOnMax,
    #[serde(alias = "single-call")]
    SingleCall,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PayoffSpec {
    pub kind: PayoffKind,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub weights: Vec<f64>,
    pub strike: f64,
}

impl PayoffSpec {
    /// Evaluates the payoff at a price vector.
    pub fn value(&self, x: &[f64]) -> f64 {
        match self.kind {
            PayoffKind::WeightedBasket => {
                let s: f64 = self.weights.iter().zip(x).map(|(w, v)| w * v).sum();
                (s - self.strike).max(0.0)
            }
            PayoffKind::CallOnMax => {
                let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                (m - self.strike).max(0.0)
            }
            PayoffKind::SingleCall => (x[0] - self.strike).max(0.0),
        }
    }
}

/// Observed call price; `asset` is 0-based.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservedOption {
    pub asset: usize,
    pub strike: f64,
    pub price: f64,
}

impl ObservedOption {
    /// The option payoff's affine piece `x_asset - strike`.
    pub fn piece(&self, n: usize) -> Affine {
        let mut c = vec![0.0; n];
        c[self.asset] = 1.0;
        Affine::new(c, -self.strike)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    #[serde(alias = "=", alias = "==", alias = "equality", alias = "equal")]
    Eq,
    #[serde(alias = "<=", alias = "less_equal", alias = "less-equal")]
    Le,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MomentConstraint {
    pub f: Polynomial,
    pub rhs: f64,
    pub relation: Relation,
}

/// A validated bound-computation instance.
#[derive(Debug, Clone, PartialEq)]
pub struct GmpProblem {
    pub n: usize,
    pub asset_names: Vec<String>,
    pub payoff: PayoffSpec,
    /// Sorted by asset, then strike.
    pub options: Vec<ObservedOption>,
    pub moments: Vec<MomentConstraint>,
    /// `f64::INFINITY` when no cap is imposed.
    pub moment_cap: f64,
    pub box_bound: f64,
    /// Whether `box_bound` came from the configuration (as opposed to
    /// being computed from the data).
    pub box_bound_user: bool,
    pub d: u32,
}

impl GmpProblem {
    /// Options written on one asset, in strike order.
    pub fn options_of(&self, asset: usize) -> impl Iterator<Item = &ObservedOption> {
        self.options.iter().filter(move |o| o.asset == asset)
    }

    /// Largest degree among payoff pieces, option payoffs and moment
    /// constraint polynomials.
    pub fn max_degree(&self) -> u32 {
        self.moments.iter().map(|m| m.f.degree()).max().unwrap_or(0).max(1)
    }

    pub fn has_cap(&self) -> bool {
        self.moment_cap.is_finite()
    }

    pub fn with_strike(&self, k: f64) -> GmpProblem {
        let mut p = self.clone();
        p.payoff.strike = k;
        p
    }

    pub fn to_config(&self) -> ProblemConfig {
        ProblemConfig {
            assets: (0..self.n)
                .map(|a| AssetConfig {
                    name: self.asset_names[a].clone(),
                    options: self
                        .options_of(a)
                        .map(|o| OptionConfig {
                            strike: o.strike,
                            price: o.price,
                        })
                        .collect(),
                })
                .collect(),
            payoff: self.payoff.clone(),
            moment_constraints: self
                .moments
                .iter()
                .map(|m| MomentConstraintConfig {
                    coeffs: m
                        .f
                        .terms()
                        .map(|(a, c)| TermConfig {
                            exponents: a.exponents().to_vec(),
                            value: c,
                        })
                        .collect(),
                    rhs: m.rhs,
                    relation: m.relation,
                })
                .collect(),
            m: if self.has_cap() {
                Some(self.moment_cap)
            } else {
                None
            },
            b: if self.box_bound_user {
                Some(self.box_bound)
            } else {
                None
            },
            d: Some(self.d),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_config()).expect("config serializes")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptionConfig {
    pub strike: f64,
    pub price: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssetConfig {
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub options: Vec<OptionConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TermConfig {
    pub exponents: Vec<u32>,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentConstraintConfig {
    pub coeffs: Vec<TermConfig>,
    pub rhs: f64,
    #[serde(default = "default_relation")]
    pub relation: Relation,
}

fn default_relation() -> Relation {
    Relation::Eq
}

/// Raw configuration document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub assets: Vec<AssetConfig>,
    pub payoff: PayoffSpec,
    #[serde(default)]
    pub moment_constraints: Vec<MomentConstraintConfig>,
    #[serde(rename = "M", default, skip_serializing_if = "Option::is_none")]
    pub m: Option<f64>,
    #[serde(rename = "B", default, skip_serializing_if = "Option::is_none")]
    pub b: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d: Option<u32>,
}

/// Parses and validates a JSON configuration.
pub fn load_problem(config_text: &str) -> Result<GmpProblem, ModelError> {
    let cfg: ProblemConfig =
        serde_json::from_str(config_text).map_err(|e| ModelError::Parse(e.to_string()))?;
    from_config(cfg)
}

pub fn from_config(cfg: ProblemConfig) -> Result<GmpProblem, ModelError> {
    let n = cfg.assets.len();
    if n == 0 {
        return invalid("at least one asset is required");
    }
    let mut options = Vec::new();
    let mut names = Vec::with_capacity(n);
    for (a, asset) in cfg.assets.iter().enumerate() {
        names.push(if asset.name.is_empty() {
            format!("x{}", a + 1)
        } else {
            asset.name.clone()
        });
        let mut opts: Vec<ObservedOption> = asset
            .options
            .iter()
            .map(|o| ObservedOption {
                asset: a,
                strike: o.strike,
                price: o.price,
            })
            .collect();
        for o in &opts {
            if !o.strike.is_finite() || o.strike < 0.0 {
                return invalid(format!("asset {}: strike {} must be >= 0", names[a], o.strike));
            }
            if !o.price.is_finite() || o.price < 0.0 {
                return invalid(format!("asset {}: negative price {}", names[a], o.price));
            }
        }
        opts.sort_by(|x, y| x.strike.total_cmp(&y.strike));
        if opts.windows(2).any(|w| w[0].strike == w[1].strike) {
            return invalid(format!("asset {}: duplicate strikes", names[a]));
        }
        options.extend(opts);
    }

    let mut moments = Vec::new();
    for (i, mc) in cfg.moment_constraints.iter().enumerate() {
        if mc.coeffs.iter().any(|t| t.exponents.len() != n) {
            return invalid(format!("moment constraint {i}: exponent arrays must have length {n}"));
        }
        if !mc.rhs.is_finite() || mc.coeffs.iter().any(|t| !t.value.is_finite()) {
            return invalid(format!("moment constraint {i}: non-finite data"));
        }
        let f = Polynomial::from_terms(
            n,
            mc.coeffs
                .iter()
                .map(|t| (MultiIndex::new(t.exponents.clone()), t.value)),
        );
        if f.degree() < 1 {
            return invalid(format!("moment constraint {i}: polynomial must have degree >= 1"));
        }
        moments.push(MomentConstraint {
            f,
            rhs: mc.rhs,
            relation: mc.relation,
        });
    }
    if options.is_empty() && moments.is_empty() {
        return invalid("no option prices and no moment constraints given");
    }

    let payoff = cfg.payoff.clone();
    if !payoff.strike.is_finite() || payoff.strike < 0.0 {
        return invalid("payoff strike must be >= 0");
    }
    match payoff.kind {
        PayoffKind::WeightedBasket => {
            if payoff.weights.len() != n {
                return invalid(format!("basket needs {n} weights"));
            }
            if payoff.weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
                return invalid("basket weights must be finite and >= 0");
            }
            if payoff.weights.iter().all(|w| *w == 0.0) {
                return invalid("basket weights are all zero");
            }
        }
        PayoffKind::CallOnMax | PayoffKind::SingleCall => {
            if !payoff.weights.is_empty() {
                return invalid("weights are only allowed for weighted_basket payoffs");
            }
        }
    }

    let moment_cap = match cfg.m {
        Some(m) if m.is_finite() && m > 0.0 => m,
        Some(m) if m == f64::INFINITY => f64::INFINITY,
        Some(m) => return invalid(format!("M must be > 0, got {m}")),
        None => f64::INFINITY,
    };

    let d_max = moments.iter().map(|m| m.f.degree()).max().unwrap_or(0).max(1);
    let d_min = {
        let d = d_max + 1;
        d + d % 2
    };
    let d = match cfg.d {
        Some(d) if d % 2 != 0 => return invalid(format!("d must be even, got {d}")),
        Some(d) if d < d_max + 1 => {
            return invalid(format!("d must be >= max degree + 1 = {}", d_max + 1))
        }
        Some(d) => d,
        None => d_min,
    };

    let mut problem = GmpProblem {
        n,
        asset_names: names,
        payoff,
        options,
        moments,
        moment_cap,
        box_bound: cfg.b.unwrap_or(f64::NAN),
        box_bound_user: cfg.b.is_some(),
        d,
    };
    match cfg.b {
        Some(b) => {
            if !b.is_finite() || b <= 0.0 {
                return invalid(format!("B must be > 0, got {b}"));
            }
        }
        None => {
            let s = support::suggest_b(&problem)
                .map_err(|e| ModelError::Validation(format!("B not given and {e}")))?;
            problem.box_bound = s.value;
        }
    }
    validate_box(&problem)?;
    Ok(problem)
}

fn validate_box(p: &GmpProblem) -> Result<(), ModelError> {
    let b = p.box_bound;
    if let Some(o) = p.options.iter().find(|o| o.strike >= b) {
        return invalid(format!("B = {b} must exceed every strike (found {})", o.strike));
    }
    let k = p.payoff.strike;
    let reach = match p.payoff.kind {
        PayoffKind::WeightedBasket => b * p.payoff.weights.iter().sum::<f64>(),
        PayoffKind::CallOnMax | PayoffKind::SingleCall => b,
    };
    if k >= reach {
        return invalid(format!(
            "payoff strike {k} is not reachable inside [0, {b}]^n; increase B"
        ));
    }
    Ok(())
}

/// Affine pieces of the payoff with their activation regions.
pub fn payoff_pieces(p: &PayoffSpec, n: usize) -> Vec<PayoffPiece> {
    let k = p.strike;
    match p.kind {
        PayoffKind::WeightedBasket => {
            let piece = Affine::new(p.weights.clone(), -k);
            vec![PayoffPiece {
                region: vec![piece.clone()],
                piece,
            }]
        }
        PayoffKind::SingleCall => {
            let mut c = vec![0.0; n];
            c[0] = 1.0;
            let piece = Affine::new(c, -k);
            vec![PayoffPiece {
                region: vec![piece.clone()],
                piece,
            }]
        }
        PayoffKind::CallOnMax => (0..n)
            .map(|j| {
                let mut c = vec![0.0; n];
                c[j] = 1.0;
                let piece = Affine::new(c, -k);
                let mut region = vec![piece.clone()];
                for i in 0..n {
                    if i != j {
                        let mut h = vec![0.0; n];
                        h[j] = 1.0;
                        h[i] = -1.0;
                        region.push(Affine::new(h, 0.0));
                    }
                }
                PayoffPiece { piece, region }
            })
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const MICROSOFT: &str = r#"{
        "assets": [{"name": "MSFT", "options": [
            {"strike": 95, "price": 12.875}, {"strike": 100, "price": 8.375},
            {"strike": 110, "price": 1.875}, {"strike": 115, "price": 0.625},
            {"strike": 120, "price": 0.25}]}],
        "payoff": {"kind": "single_call", "strike": 105},
        "M": 200000, "B": 400
    }"#;

    #[test]
    fn loads_microsoft() {
        let p = load_problem(MICROSOFT).unwrap();
        assert_eq!(p.n, 1);
        assert_eq!(p.options.len(), 5);
        assert_eq!(p.d, 2);
        assert_eq!(p.box_bound, 400.0);
    }

    #[test]
    fn rejects_empty_feasibility_data() {
        let text = r#"{"assets": [{"name": "a", "options": []}],
            "payoff": {"kind": "single_call", "strike": 1}, "M": 1, "B": 10}"#;
        assert!(matches!(load_problem(text), Err(ModelError::Validation(_))));
    }

    #[test]
    fn rejects_bad_data() {
        let dup = MICROSOFT.replace("\"strike\": 100", "\"strike\": 95");
        assert!(matches!(load_problem(&dup), Err(ModelError::Validation(_))));
        let small_b = MICROSOFT.replace("\"B\": 400", "\"B\": 110");
        assert!(matches!(load_problem(&small_b), Err(ModelError::Validation(_))));
        let neg_m = MICROSOFT.replace("\"M\": 200000", "\"M\": -1");
        assert!(matches!(load_problem(&neg_m), Err(ModelError::Validation(_))));
        let neg_price = MICROSOFT.replace("0.625", "-0.625");
        assert!(matches!(load_problem(&neg_price), Err(ModelError::Validation(_))));
        assert!(matches!(load_problem("{"), Err(ModelError::Parse(_))));
    }

    #[test]
    fn default_d_is_even_and_exceeds_degree() {
        let text = r#"{"assets": [{"name": "a"}, {"name": "b"}, {"name": "c"}],
            "payoff": {"kind": "call_on_max", "strike": 40},
            "moment_constraints": [
              {"coeffs": [{"exponents": [1,0,0], "value": 1}], "rhs": 44.21, "relation": "eq"},
              {"coeffs": [{"exponents": [1,1,0], "value": 1}], "rhs": 2119.4, "relation": "eq"}],
            "M": 1e12, "B": 2000}"#;
        let p = load_problem(text).unwrap();
        assert_eq!(p.n, 3);
        assert_eq!(p.d, 4);
    }

    #[test]
    fn round_trip() {
        let p = load_problem(MICROSOFT).unwrap();
        let q = load_problem(&p.to_json()).unwrap();
        assert_eq!(p, q);
    }

    #[test]
    fn pieces() {
        let single = PayoffSpec {
            kind: PayoffKind::SingleCall,
            weights: vec![],
            strike: 105.0,
        };
        let ps = payoff_pieces(&single, 1);
        assert_eq!(ps.len(), 1);
        assert_eq!(ps[0].piece, Affine::new(vec![1.0], -105.0));

        let basket = PayoffSpec {
            kind: PayoffKind::WeightedBasket,
            weights: vec![0.5, 0.5],
            strike: 105.0,
        };
        let ps = payoff_pieces(&basket, 2);
        assert_eq!(ps.len(), 1);
        assert_eq!(ps[0].region, vec![Affine::new(vec![0.5, 0.5], -105.0)]);

        let com = PayoffSpec {
            kind: PayoffKind::CallOnMax,
            weights: vec![],
            strike: 40.0,
        };
        let ps = payoff_pieces(&com, 3);
        assert_eq!(ps.len(), 3);
        assert!(ps.iter().all(|p| p.region.len() == 3));
    }
}
