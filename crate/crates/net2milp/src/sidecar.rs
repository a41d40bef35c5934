//! JSON sidecars: the unit-to-variable map of an encoded model, and bound
//! sets.

use net2milp_core::bounds::BoundSet;
use net2milp_core::encode::{LayerVars, VarMap};
use net2milp_core::milp::{MilpModel, VarId};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SidecarError {
    #[error("sidecar: {0}")]
    Json(#[from] serde_json::Error),
    #[error("variable {0:?} is not in the model")]
    UnknownName(String),
}

/// Variable names per unit, in flattened unit order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarMapDoc {
    pub input: Vec<String>,
    pub layers: Vec<LayerDoc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LayerDoc {
    Relu {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        pre: Option<Vec<String>>,
        out: Vec<String>,
        neg: Vec<String>,
        active: Vec<String>,
    },
    Linear {
        out: Vec<String>,
    },
    Pool {
        out: Vec<String>,
        select: Vec<Vec<String>>,
    },
    Flatten {
        out: Vec<String>,
    },
}

impl VarMapDoc {
    pub fn new(model: &MilpModel, vars: &VarMap) -> Self {
        let names = |ids: &[VarId]| ids.iter().map(|&v| model.var(v).name.clone()).collect::<Vec<_>>();
        let layers = vars
            .layers
            .iter()
            .map(|l| match l {
                LayerVars::Relu { pre, out, neg, active } => LayerDoc::Relu {
                    pre: pre.as_deref().map(names),
                    out: names(out),
                    neg: names(neg),
                    active: names(active),
                },
                LayerVars::Linear { out } => LayerDoc::Linear { out: names(out) },
                LayerVars::Pool { out, select } => LayerDoc::Pool {
                    out: names(out),
                    select: select.iter().map(|s| names(s)).collect(),
                },
                LayerVars::Flatten { out } => LayerDoc::Flatten { out: names(out) },
            })
            .collect();
        Self {
            input: names(&vars.input),
            layers,
        }
    }

    /// Resolves names against `model`, typically one read back from LP text.
    pub fn resolve(&self, model: &MilpModel) -> Result<VarMap, SidecarError> {
        let ids = |names: &[String]| {
            names
                .iter()
                .map(|n| model.var_by_name(n).ok_or_else(|| SidecarError::UnknownName(n.clone())))
                .collect::<Result<Vec<_>, _>>()
        };
        let layers = self
            .layers
            .iter()
            .map(|l| {
                Ok(match l {
                    LayerDoc::Relu { pre, out, neg, active } => LayerVars::Relu {
                        pre: pre.as_deref().map(ids).transpose()?,
                        out: ids(out)?,
                        neg: ids(neg)?,
                        active: ids(active)?,
                    },
                    LayerDoc::Linear { out } => LayerVars::Linear { out: ids(out)? },
                    LayerDoc::Pool { out, select } => LayerVars::Pool {
                        out: ids(out)?,
                        select: select.iter().map(|s| ids(s)).collect::<Result<_, _>>()?,
                    },
                    LayerDoc::Flatten { out } => LayerVars::Flatten { out: ids(out)? },
                })
            })
            .collect::<Result<Vec<_>, SidecarError>>()?;
        Ok(VarMap {
            input: ids(&self.input)?,
            layers,
        })
    }
}

pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("sidecar documents always serialize");
    s.push('\n');
    s
}

pub fn varmap_json(model: &MilpModel, vars: &VarMap) -> String {
    to_json(&VarMapDoc::new(model, vars))
}

pub fn parse_varmap(text: &str) -> Result<VarMapDoc, SidecarError> {
    Ok(serde_json::from_str(text)?)
}

/// Bound sets are serialized field by field: `input`, then per layer `pre`
/// (affine layers) and `post`, each a list of `{lo, hi}` in unit order.
pub fn bounds_json(bounds: &BoundSet) -> String {
    to_json(bounds)
}

pub fn parse_bounds(text: &str) -> Result<BoundSet, SidecarError> {
    Ok(serde_json::from_str(text)?)
}
