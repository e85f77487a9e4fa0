//! Declarative run configuration, loaded from TOML and overridden by flags.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use tempora_core::consistency::{TripleMining, TripleSemantics};
use tempora_core::evaluation::EvalScope;
use tempora_core::gateway::GatewayConfig;
use tempora_core::pairing::PairingRuleConfig;
use tempora_core::prompting::Strategy;
use tempora_core::synth::NoiseConfig;

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub synth: SynthSection,
    pub pairing: PairingRuleConfig,
    pub prompting: PromptingSection,
    pub gateway: GatewayConfig,
    pub query: QuerySection,
    pub consistency: ConsistencySection,
    pub repair: RepairSection,
    pub evaluation: EvaluationSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    pub seed: u64,
    pub docs: usize,
    pub events: usize,
    pub noise: NoiseConfig,
    pub noise_seed: u64,
}

impl Default for SynthSection {
    fn default() -> Self {
        SynthSection {
            seed: 0,
            docs: 5,
            events: 30,
            noise: NoiseConfig::default(),
            noise_seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PromptingSection {
    pub strategy: Strategy,
    /// Base seed; pair `i` uses `order_seed + i`.
    pub order_seed: u64,
}

impl Default for PromptingSection {
    fn default() -> Self {
        PromptingSection {
            strategy: Strategy::BatchQa,
            order_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuerySection {
    /// Largest tolerated fraction of failed pairs before exiting with 3.
    pub max_failure_rate: f64,
}

impl Default for QuerySection {
    fn default() -> Self {
        QuerySection {
            max_failure_rate: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct ConsistencySection {
    pub semantics: TripleSemantics,
    pub mining: TripleMining,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ScalarKind {
    /// Exact rational arithmetic.
    #[default]
    Exact,
    F64,
    F32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RepairSection {
    pub time_limit_secs: f64,
    pub node_limit: Option<u64>,
    pub mining: TripleMining,
    pub scalar: ScalarKind,
    pub parallel: bool,
}

impl Default for RepairSection {
    fn default() -> Self {
        RepairSection {
            time_limit_secs: 10.0,
            node_limit: None,
            mining: TripleMining::default(),
            scalar: ScalarKind::default(),
            parallel: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationSection {
    pub scope: EvalScope,
    pub bins: usize,
    pub combine_worder: bool,
}

impl Default for EvaluationSection {
    fn default() -> Self {
        EvaluationSection {
            scope: EvalScope::default(),
            bins: 10,
            combine_worder: false,
        }
    }
}

impl Config {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Config::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
    }

    /// SHA-256 of the resolved configuration.
    pub fn digest(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_toml_fills_defaults() {
        let c: Config = toml::from_str(
            "[synth]\ndocs = 2\n[gateway]\nmode = \"REPLAY\"\ncache_path = \"c.jsonl\"\n[evaluation]\nscope = \"candidate_intersect_gold\"\n",
        )
        .unwrap();
        assert_eq!(c.synth.docs, 2);
        assert_eq!(c.synth.events, 30);
        assert_eq!(c.evaluation.scope, EvalScope::CandidateIntersectGold);
        assert_eq!(c.gateway.max_in_flight, 4);
        assert!(toml::from_str::<Config>("[synth]\nbogus = 1\n").is_err());
        assert_ne!(c.digest(), Config::default().digest());
    }
}
