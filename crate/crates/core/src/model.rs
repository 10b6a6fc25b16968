//! Fitted models of every kind behind one serializable type.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::baselines::linear::LinearQuantileModel;
use crate::baselines::tree::QuantileTreeModel;
use crate::error::{Error, Result};
use crate::expr::{self, ComplexityTable, Expr, FeatureNames};
use crate::loss::QuantileLevel;
use crate::matrix::Matrix;
use crate::pareto::{ParetoFront, Selection};

/// A closed-form expression over named features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymbolicModel {
    pub expression: String,
    /// Column names in feature-index order; empty when unknown.
    #[serde(default)]
    pub features: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<QuantileLevel>,
    pub complexity: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_loss: Option<f64>,
}

impl SymbolicModel {
    pub fn new(expr: &Expr, features: &[String], tau: Option<QuantileLevel>, complexity: u32, train_loss: Option<f64>) -> Self {
        let names = FeatureNames::new(features);
        let expression = expr::format_expr(expr, names.printable().then_some(&names));
        Self {
            expression,
            features: features.to_vec(),
            tau,
            complexity,
            train_loss,
        }
    }

    /// Parses the expression, resolving names against the stored features.
    pub fn expr(&self) -> Result<Expr> {
        expr::parse_with_names(&self.expression, &FeatureNames::new(&self.features))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FittedModel {
    Symbolic(SymbolicModel),
    Linear {
        #[serde(flatten)]
        model: LinearQuantileModel,
        #[serde(default)]
        features: Vec<String>,
    },
    Tree {
        #[serde(flatten)]
        model: QuantileTreeModel,
        #[serde(default)]
        features: Vec<String>,
    },
}

impl FittedModel {
    pub fn features(&self) -> &[String] {
        match self {
            FittedModel::Symbolic(m) => &m.features,
            FittedModel::Linear { features, .. } | FittedModel::Tree { features, .. } => features,
        }
    }

    pub fn tau(&self) -> Option<QuantileLevel> {
        match self {
            FittedModel::Symbolic(m) => m.tau,
            FittedModel::Linear { model, .. } => Some(model.tau),
            FittedModel::Tree { model, .. } => Some(model.tau),
        }
    }

    pub fn parsimony(&self) -> Result<u32> {
        Ok(match self {
            FittedModel::Symbolic(m) => expr::parsimony(&m.expr()?, &ComplexityTable::default()),
            FittedModel::Linear { model, .. } => model.parsimony(),
            FittedModel::Tree { model, .. } => model.parsimony(),
        })
    }

    /// Predicts one value per row of `x`. When both the model and the input
    /// carry column names, columns are matched by name; otherwise by
    /// position.
    pub fn predict(&self, x: &Matrix, names: Option<&[String]>) -> Result<Vec<f64>> {
        if x.nrows() == 0 {
            return Err(Error::EmptyInput("no rows to predict".into()));
        }
        let aligned = align_columns(x, self.features(), names)?;
        let x = aligned.as_ref().unwrap_or(x);
        match self {
            FittedModel::Symbolic(m) => {
                let e = m.expr()?;
                if !m.features.is_empty() && x.ncols() != m.features.len() {
                    return Err(Error::ColumnCount {
                        expected: m.features.len(),
                        found: x.ncols(),
                    });
                }
                Ok(expr::evaluate(&e, x)?.values)
            }
            FittedModel::Linear { model, .. } => model.predict(x),
            FittedModel::Tree { model, .. } => model.predict(x),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Accepts the JSON form, or a bare expression in plain text whose
    /// feature names are resolved against `names`.
    pub fn from_text(text: &str, names: Option<&[String]>) -> Result<Self> {
        let trimmed = text.trim();
        if trimmed.is_empty() {
            return Err(Error::Model("model file is empty".into()));
        }
        if trimmed.starts_with('{') {
            let model: FittedModel = serde_json::from_str(trimmed)?;
            model.validate()?;
            return Ok(model);
        }
        let features = names.map(<[String]>::to_vec).unwrap_or_default();
        let e = expr::parse_with_names(trimmed, &FeatureNames::new(&features))?;
        let complexity = expr::parsimony(&e, &ComplexityTable::default());
        Ok(FittedModel::Symbolic(SymbolicModel::new(&e, &features, None, complexity, None)))
    }

    pub fn load(path: impl AsRef<Path>, names: Option<&[String]>) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?, names)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut text = self.to_json()?;
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }

    fn validate(&self) -> Result<()> {
        match self {
            FittedModel::Symbolic(m) => {
                let e = m.expr()?;
                if let (Some(max), false) = (e.max_feature(), m.features.is_empty()) {
                    if max >= m.features.len() {
                        return Err(Error::Model(format!(
                            "expression uses feature {max} but only {} are declared",
                            m.features.len()
                        )));
                    }
                }
            }
            FittedModel::Linear { model, features } => {
                if !features.is_empty() && features.len() != model.coefficients.len() {
                    return Err(Error::Model("feature list does not match coefficients".into()));
                }
            }
            FittedModel::Tree { model, features } => {
                if model.nodes.is_empty() {
                    return Err(Error::Model("tree has no nodes".into()));
                }
                for node in &model.nodes {
                    if let crate::baselines::tree::TreeNode::Split { feature, left, right, .. } = *node {
                        if feature >= model.nfeatures || left >= model.nodes.len() || right >= model.nodes.len() {
                            return Err(Error::Model("tree node points out of range".into()));
                        }
                    }
                }
                if !features.is_empty() && features.len() != model.nfeatures {
                    return Err(Error::Model("feature list does not match tree arity".into()));
                }
            }
        }
        Ok(())
    }
}

/// The front entry picked by `selection`, as a symbolic model.
pub fn from_front(front: &ParetoFront, selection: Selection, features: &[String]) -> Result<FittedModel> {
    let e = front.select(selection)?;
    Ok(FittedModel::Symbolic(SymbolicModel::new(
        &e.expr,
        features,
        Some(front.tau()),
        e.complexity,
        Some(e.loss),
    )))
}

/// Reorders `x` into the model's column order when both sides are named
/// and every model feature is present; `None` means use `x` unchanged.
fn align_columns(x: &Matrix, model: &[String], input: Option<&[String]>) -> Result<Option<Matrix>> {
    let Some(input) = input else { return Ok(None) };
    if model.is_empty() || model == input {
        return Ok(None);
    }
    let lookup = FeatureNames::new(input);
    let cols: Option<Vec<usize>> = model.iter().map(|n| lookup.lookup(n)).collect();
    match cols {
        Some(cols) => Ok(Some(x.select_columns(&cols))),
        None if input.len() == model.len() => Ok(None),
        None => Err(Error::UnknownFeature(
            model.iter().find(|n| lookup.lookup(n).is_none()).cloned().unwrap_or_default(),
        )),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baselines::tree::TreeNode;

    fn names(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    fn q(t: f64) -> QuantileLevel {
        QuantileLevel::new(t).unwrap()
    }

    #[test]
    fn plain_text_positional_model() {
        let m = FittedModel::from_text("x0\n", None).unwrap();
        let x = Matrix::from_rows(&[[1.0], [2.0]]).unwrap();
        assert_eq!(m.predict(&x, None).unwrap(), vec![1.0, 2.0]);
        assert_eq!(m.parsimony().unwrap(), 1);
    }

    #[test]
    fn named_expression_hand_arithmetic() {
        let cols = names(&["GCD", "TP", "AWC"]);
        let text = "7.216*GCD + 0.003*GCD*(TP + 0.045*GCD - 7.22*AWC) + 1676.6";
        let m = FittedModel::from_text(text, Some(&cols)).unwrap();
        let x = Matrix::from_rows(&[[100.0, 0.0, 0.0]]).unwrap();
        let p = m.predict(&x, Some(&cols)).unwrap();
        assert!((p[0] - 2399.55).abs() < 1e-9, "{}", p[0]);
    }

    #[test]
    fn json_round_trip_and_name_alignment() {
        let e = expr::parse("x0 - 2*x1").unwrap();
        let model = FittedModel::Symbolic(SymbolicModel::new(&e, &names(&["a", "b"]), Some(q(0.9)), 5, Some(0.25)));
        let back = FittedModel::from_text(&model.to_json().unwrap(), None).unwrap();
        assert_eq!(back, model);
        let x = Matrix::from_rows(&[[1.0, 10.0]]).unwrap();
        assert_eq!(back.predict(&x, Some(&names(&["b", "a"]))).unwrap(), vec![8.0]);
        assert_eq!(back.predict(&x, None).unwrap(), vec![-19.0]);
        let wide = Matrix::from_rows(&[[1.0, 10.0, 3.0]]).unwrap();
        assert!(matches!(back.predict(&wide, None), Err(Error::ColumnCount { .. })));
        assert!(back.predict(&wide, Some(&names(&["c", "b", "a"]))).is_ok());
        assert!(matches!(
            back.predict(&wide, Some(&names(&["c", "d", "e"]))),
            Err(Error::UnknownFeature(_))
        ));
    }

    #[test]
    fn baseline_models_round_trip() {
        let lin = FittedModel::Linear {
            model: LinearQuantileModel {
                coefficients: vec![3.0],
                intercept: 2.0,
                tau: q(0.5),
                rank_deficient: false,
            },
            features: names(&["x"]),
        };
        let tree = FittedModel::Tree {
            model: QuantileTreeModel {
                nodes: vec![
                    TreeNode::Split {
                        feature: 0,
                        threshold: 0.5,
                        left: 1,
                        right: 2,
                    },
                    TreeNode::Leaf { value: -1.0, samples: 3 },
                    TreeNode::Leaf { value: 1.0, samples: 4 },
                ],
                tau: q(0.9),
                min_samples_leaf: 3,
                nfeatures: 1,
            },
            features: names(&["x"]),
        };
        let x = Matrix::from_rows(&[[0.0], [1.0]]).unwrap();
        for (m, expect, pars) in [(lin, vec![2.0, 5.0], 2), (tree, vec![-1.0, 1.0], 3)] {
            let json = m.to_json().unwrap();
            let back = FittedModel::from_text(&json, None).unwrap();
            assert_eq!(back, m);
            assert_eq!(back.predict(&x, None).unwrap(), expect);
            assert_eq!(back.parsimony().unwrap(), pars);
        }
    }

    #[test]
    fn rejects_broken_files() {
        assert!(FittedModel::from_text("  ", None).is_err());
        assert!(FittedModel::from_text("x0 +", None).is_err());
        assert!(FittedModel::from_text(r#"{"kind":"tree","nodes":[],"tau":0.5,"min_samples_leaf":1,"nfeatures":1}"#, None).is_err());
        assert!(FittedModel::from_text(r#"{"kind":"symbolic","expression":"x3","features":["a"],"complexity":1}"#, None).is_err());
    }
}
