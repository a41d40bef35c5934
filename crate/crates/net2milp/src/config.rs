//! `--config` files: JSON objects whose sections override library defaults.
//! Command-line flags override the file in turn.
//!
//! ```json
//! {"adversarial": {"margin": 1.5}, "solver": {"node_limit": 50000}}
//! ```

use net2milp_core::adversarial::AdversarialConfig;
use net2milp_core::bounds::TightenConfig;
use net2milp_core::encode::{CnnEncodeConfig, DnnEncodeConfig};
use net2milp_core::solver::bnb::BnbConfig;
use net2milp_core::train::{InitScheme, TrainConfig};
use serde::{Deserialize, Serialize};

macro_rules! overlay {
    ($target:expr, $section:expr, $($field:ident),+) => {
        $(if let Some(v) = $section.$field {
            $target.$field = v;
        })+
    };
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub train: TrainSection,
    pub dnn: DnnSection,
    pub cnn: CnnSection,
    pub adversarial: AdversarialSection,
    pub solver: SolverSection,
    pub bounds: BoundsSection,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub learning_rate: Option<f64>,
    pub epochs: Option<usize>,
    pub init: Option<InitScheme>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DnnSection {
    pub unit_cost: Option<f64>,
    pub activation_penalty: Option<f64>,
    pub input_cost: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CnnSection {
    pub map_cost: Option<f64>,
    pub conv_cost: Option<f64>,
    pub rectified_cost: Option<f64>,
    pub conv_penalty: Option<f64>,
    pub pool_penalty: Option<f64>,
    pub hidden_cost: Option<f64>,
    pub hidden_penalty: Option<f64>,
    pub output_cost: Option<f64>,
    pub input_cost: Option<f64>,
    pub include_biases: Option<bool>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdversarialSection {
    pub margin: Option<f64>,
    pub eps_max: Option<f64>,
    pub target_cost: Option<f64>,
    pub other_cost: Option<f64>,
    pub activation_penalty: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSection {
    pub node_limit: Option<usize>,
    pub gap: Option<f64>,
    /// Seconds.
    pub time_budget: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoundsSection {
    /// Seconds per unit subproblem in exact mode.
    pub unit_budget: Option<f64>,
    pub unit_node_limit: Option<usize>,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn train(&self) -> TrainConfig {
        let mut c = TrainConfig::default();
        overlay!(c, self.train, learning_rate, epochs, init);
        c
    }

    pub fn dnn(&self) -> DnnEncodeConfig {
        let mut c = DnnEncodeConfig::default();
        overlay!(c, self.dnn, unit_cost, activation_penalty, input_cost);
        c
    }

    pub fn cnn(&self) -> CnnEncodeConfig {
        let mut c = CnnEncodeConfig::default();
        overlay!(
            c,
            self.cnn,
            map_cost,
            conv_cost,
            rectified_cost,
            conv_penalty,
            pool_penalty,
            hidden_cost,
            hidden_penalty,
            output_cost,
            input_cost,
            include_biases
        );
        c
    }

    pub fn adversarial(&self) -> AdversarialConfig {
        let mut c = AdversarialConfig::default();
        overlay!(c, self.adversarial, margin, eps_max, target_cost, other_cost, activation_penalty);
        c
    }

    pub fn solver(&self) -> BnbConfig {
        let mut c = BnbConfig::default();
        overlay!(c, self.solver, node_limit, gap);
        c.time_budget = self.solver.time_budget.or(c.time_budget);
        c
    }

    pub fn tighten(&self) -> TightenConfig {
        let mut c = TightenConfig::default();
        overlay!(c, self.bounds, unit_node_limit);
        c.unit_budget = self.bounds.unit_budget.or(c.unit_budget);
        c
    }
}
