//! Scalar expressions in `x` used for coefficients and profiles.

use std::fmt;

use exmex::prelude::*;
use serde::Deserialize;

/// A compiled expression with at most the free variable `x`.
#[derive(Clone)]
pub struct Expr {
    text: String,
    flat: FlatEx<f64>,
    uses_x: bool,
}

impl fmt::Debug for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_tuple("Expr").field(&self.text).finish()
    }
}

impl Expr {
    pub fn parse(text: &str) -> Result<Self, String> {
        let flat = exmex::parse::<f64>(text).map_err(|e| format!("cannot parse `{text}`: {e}"))?;
        let names = flat.var_names();
        if let Some(bad) = names.iter().find(|n| n.as_str() != "x") {
            return Err(format!(
                "`{text}` uses unknown variable `{bad}` (only `x` is allowed)"
            ));
        }
        let uses_x = !names.is_empty();
        Ok(Self {
            text: text.to_string(),
            flat,
            uses_x,
        })
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn eval(&self, x: f64) -> f64 {
        let args: &[f64] = if self.uses_x { &[x] } else { &[] };
        self.flat.eval(args).unwrap_or(f64::NAN)
    }

    /// Value of an expression without `x`.
    pub fn constant(&self) -> Result<f64, String> {
        if self.uses_x {
            return Err(format!("`{}` must not depend on x", self.text));
        }
        Ok(self.eval(0.0))
    }
}

/// Config value given as a number or as an expression string.
#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum NumberOrExpr {
    Number(f64),
    Text(String),
}

impl NumberOrExpr {
    pub fn compile(&self) -> Result<Expr, String> {
        match self {
            Self::Number(v) => Expr::parse(&format!("{v:?}")),
            Self::Text(t) => Expr::parse(t),
        }
    }

    pub fn constant(&self) -> Result<f64, String> {
        match self {
            Self::Number(v) => Ok(*v),
            Self::Text(t) => Expr::parse(t)?.constant(),
        }
    }
}

impl Default for NumberOrExpr {
    fn default() -> Self {
        Self::Number(1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn evaluates_profiles() {
        let e = Expr::parse("-cos(x)").unwrap();
        assert!((e.eval(0.2) + 0.2f64.cos()).abs() < 1e-15);
        let e = Expr::parse("8.5*x*(1-x)").unwrap();
        assert!((e.eval(0.5) - 2.125).abs() < 1e-15);
        assert_eq!(Expr::parse("3").unwrap().constant().unwrap(), 3.0);
        assert!(
            (Expr::parse("PI/4").unwrap().constant().unwrap() - std::f64::consts::FRAC_PI_4).abs()
                < 1e-15
        );
    }

    #[test]
    fn rejects_unknown_variables() {
        assert!(Expr::parse("y + 1").is_err());
        assert!(Expr::parse("x +").is_err());
        assert!(Expr::parse("x").unwrap().constant().is_err());
    }

    #[test]
    fn numbers_round_trip() {
        assert_eq!(
            NumberOrExpr::Number(-10.0).compile().unwrap().eval(0.3),
            -10.0
        );
        assert_eq!(
            NumberOrExpr::Number(1e-3).compile().unwrap().eval(0.3),
            1e-3
        );
    }
}
