//! Problem documents in JSON.
//!
//! ```json
//! {
//!   "state_dim": 1,
//!   "control_dim": 1,
//!   "dynamics": ["-y1^3 + u1"],
//!   "cost_rate": "(y1 - 0.5)^2 + u1^2",
//!   "control_lower": [-4],
//!   "control_upper": [4]
//! }
//! ```

use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::expr::Expr;
use super::{builtin, ControlSystem, LinearizationData, ProblemSpec};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProblemDocument {
    #[serde(default)]
    pub name: Option<String>,
    pub state_dim: usize,
    pub control_dim: usize,
    pub dynamics: Vec<String>,
    pub cost_rate: String,
    pub control_lower: Vec<f64>,
    pub control_upper: Vec<f64>,
    #[serde(default)]
    pub velocity_bound_hint: Option<f64>,
}

struct ExprSystem {
    state_dim: usize,
    dynamics: Vec<Expr>,
    cost: Expr,
}

impl ExprSystem {
    fn stack(y: &[f64], u: &[f64]) -> Vec<f64> {
        y.iter().chain(u).copied().collect()
    }
}

impl ControlSystem for ExprSystem {
    fn dynamics(&self, y: &[f64], u: &[f64], out: &mut [f64]) {
        let vars = Self::stack(y, u);
        for (o, e) in out.iter_mut().zip(&self.dynamics) {
            *o = e.eval(&vars);
        }
    }

    fn cost_rate(&self, y: &[f64], u: &[f64]) -> f64 {
        self.cost.eval(&Self::stack(y, u))
    }

    fn derivatives(&self, y: &[f64], u: &[f64]) -> Option<LinearizationData> {
        let vars = Self::stack(y, u);
        let n = self.state_dim;
        let p = vars.len() - n;
        let mut a = DMatrix::zeros(n, n);
        let mut b = DMatrix::zeros(n, p);
        for (i, e) in self.dynamics.iter().enumerate() {
            let (_, g) = e.eval_grad(&vars);
            for j in 0..n {
                a[(i, j)] = g[j];
            }
            for j in 0..p {
                b[(i, j)] = g[n + j];
            }
        }
        let (_, g) = self.cost.eval_grad(&vars);
        Some(LinearizationData {
            a,
            b,
            cost_grad_y: DVector::from_column_slice(&g[..n]),
            cost_grad_u: DVector::from_column_slice(&g[n..]),
        })
    }
}

impl ProblemDocument {
    pub fn into_spec(self) -> Result<ProblemSpec> {
        let (n, p) = (self.state_dim, self.control_dim);
        if self.dynamics.len() != n {
            return Err(Error::Dimension(format!(
                "{} dynamics expressions for state_dim {n}",
                self.dynamics.len()
            )));
        }
        let dynamics = self
            .dynamics
            .iter()
            .map(|s| Expr::parse(s, n, p))
            .collect::<Result<Vec<_>>>()?;
        let cost = Expr::parse(&self.cost_rate, n, p)?;
        let system = ExprSystem {
            state_dim: n,
            dynamics,
            cost,
        };
        let mut spec = ProblemSpec::new(
            self.name.unwrap_or_else(|| "custom".to_string()),
            n,
            p,
            Arc::new(system),
            DVector::from_vec(self.control_lower),
            DVector::from_vec(self.control_upper),
        )?;
        spec.velocity_bound_hint = self.velocity_bound_hint;
        Ok(spec)
    }
}

pub fn from_json_str(text: &str) -> Result<ProblemSpec> {
    let doc: ProblemDocument =
        serde_json::from_str(text).map_err(|e| Error::Parse(format!("problem document: {e}")))?;
    doc.into_spec()
}

/// Resolves a built-in name first, then falls back to reading a JSON file.
pub fn load_problem(source: &str) -> Result<ProblemSpec> {
    if let Ok(spec) = builtin::by_name(source) {
        return Ok(spec);
    }
    let path = Path::new(source);
    if !path.exists() {
        return Err(Error::Parse(format!(
            "'{source}' is neither a built-in problem ({}) nor an existing file",
            builtin::NAMES.join(", ")
        )));
    }
    from_json_str(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    const P3_DOC: &str = r#"{
        "state_dim": 1, "control_dim": 1,
        "dynamics": ["-y1^3 + u1"],
        "cost_rate": "(y1 - 0.5)^2 + u1^2",
        "control_lower": [-4], "control_upper": [4]
    }"#;

    #[test]
    fn json_problem_matches_builtin() {
        let doc = from_json_str(P3_DOC).unwrap();
        let builtin = builtin::p3();
        for &(y, u) in &[(0.3, -1.2), (1.5, 2.0), (-0.7, 0.1)] {
            let mut a = [0.0];
            let mut b = [0.0];
            doc.dynamics_into(&[y], &[u], &mut a);
            builtin.dynamics_into(&[y], &[u], &mut b);
            assert_eq!(a, b);
            assert!((doc.cost_rate(&[y], &[u]) - builtin.cost_rate(&[y], &[u])).abs() < 1e-15);
            let la = doc.derivatives(&[y], &[u]);
            let lb = builtin.derivatives(&[y], &[u]);
            assert!((la.a[(0, 0)] - lb.a[(0, 0)]).abs() < 1e-14);
            assert!((la.cost_grad_y[0] - lb.cost_grad_y[0]).abs() < 1e-14);
        }
        assert!(doc.has_analytic_derivatives());
    }

    #[test]
    fn rejects_inconsistent_documents() {
        let bad = P3_DOC.replace(r#"["-y1^3 + u1"]"#, r#"["u1", "u1"]"#);
        assert!(from_json_str(&bad).is_err());
        let bad = P3_DOC.replace("[-4]", "[5]");
        assert!(from_json_str(&bad).is_err());
        assert!(from_json_str("{}").is_err());
    }

    #[test]
    fn load_by_name_or_path() {
        assert_eq!(load_problem("P2").unwrap().state_dim, 2);
        assert!(load_problem("no-such-problem").is_err());
    }
}
