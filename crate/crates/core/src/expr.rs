//! Thin wrapper over `exmex` for the scalar expressions used in config
//! descriptors (field entries, terminal maps).

use std::fmt;

use exmex::prelude::*;

use crate::error::{BsviError, Result};

/// A parsed scalar expression over named variables. Variable values are
/// supplied by name through [`ScalarExpr::eval_with`].
#[derive(Clone)]
pub struct ScalarExpr {
    source: String,
    flat: FlatEx<f64>,
}

impl ScalarExpr {
    /// Parses `source`, rejecting any variable not in `allowed`.
    pub fn parse(source: &str, allowed: &[&str]) -> Result<Self> {
        let flat = exmex::parse::<f64>(source).map_err(|e| BsviError::Expression {
            expr: source.to_string(),
            reason: e.to_string(),
        })?;
        for name in flat.var_names() {
            if !allowed.contains(&name.as_str()) {
                return Err(BsviError::Expression {
                    expr: source.to_string(),
                    reason: format!("unknown variable `{name}` (allowed: {allowed:?})"),
                });
            }
        }
        Ok(Self {
            source: source.to_string(),
            flat,
        })
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn uses(&self, name: &str) -> bool {
        self.flat.var_names().iter().any(|v| v == name)
    }

    /// Evaluates with `lookup` mapping each variable name to its value.
    pub fn eval_with(&self, lookup: impl Fn(&str) -> f64) -> f64 {
        let names = self.flat.var_names();
        let mut vals = [0.0f64; 8];
        if names.len() <= vals.len() {
            for (slot, name) in vals.iter_mut().zip(names) {
                *slot = lookup(name);
            }
            self.flat.eval(&vals[..names.len()]).unwrap_or(f64::NAN)
        } else {
            let v: Vec<f64> = names.iter().map(|n| lookup(n)).collect();
            self.flat.eval(&v).unwrap_or(f64::NAN)
        }
    }
}

impl fmt::Debug for ScalarExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ScalarExpr({:?})", self.source)
    }
}

impl PartialEq for ScalarExpr {
    fn eq(&self, other: &Self) -> bool {
        self.source == other.source
    }
}

/// Variable names `prefix1..prefixN`.
pub(crate) fn indexed_names(prefix: &str, n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("{prefix}{i}")).collect()
}

/// Resolves `name` as either a bare `prefix` (component 0 when d = 1) or
/// `prefix<i>` (1-based).
pub(crate) fn indexed_lookup(name: &str, prefix: &str, values: &[f64]) -> Option<f64> {
    if name == prefix {
        return values.first().copied();
    }
    let idx: usize = name.strip_prefix(prefix)?.parse().ok()?;
    values.get(idx.checked_sub(1)?).copied()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_evaluates_by_name() {
        let e = ScalarExpr::parse("2 + sin(y1) * t", &["t", "y1"]).unwrap();
        let v = e.eval_with(|n| if n == "t" { 2.0 } else { std::f64::consts::FRAC_PI_2 });
        assert!((v - 4.0).abs() < 1e-14);
        assert!(e.uses("y1"));
    }

    #[test]
    fn rejects_unknown_variables() {
        assert!(ScalarExpr::parse("z + 1", &["x"]).is_err());
    }

    #[test]
    fn indexed_lookup_handles_bare_and_numbered() {
        let v = [3.0, 4.0];
        assert_eq!(indexed_lookup("x", "x", &v), Some(3.0));
        assert_eq!(indexed_lookup("x2", "x", &v), Some(4.0));
        assert_eq!(indexed_lookup("x3", "x", &v), None);
        assert_eq!(indexed_lookup("x0", "x", &v), None);
    }
}
