use serde::{Deserialize, Serialize};

use crate::genmodel::VaeConfig;
use crate::lbm::LbmConfig;
use crate::qd::SphenConfig;
use crate::validate::{scoped, Violation};

use super::StoreError;

/// Which evaluator a run simulates its acquisitions with.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvaluatorKind {
    #[default]
    Lbm,
    Synthetic,
}

/// Everything a run needs, as stored in `config.json`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FullConfig {
    pub sphen: SphenConfig,
    pub lbm: LbmConfig,
    pub vae: VaeConfig,
    pub evaluator: EvaluatorKind,
}

impl FullConfig {
    /// Small presets that finish on a laptop.
    pub fn desk() -> Self {
        Self {
            sphen: SphenConfig::desk(),
            lbm: LbmConfig::desk(),
            vae: VaeConfig::default(),
            evaluator: EvaluatorKind::Lbm,
        }
    }

    pub fn violations(&self) -> Vec<Violation> {
        let mut v = scoped("sphen", self.sphen.violations());
        v.extend(scoped("lbm", self.lbm.violations()));
        v.extend(scoped("vae", self.vae.violations()));
        if self.vae.input_resolution != self.sphen.resolution {
            v.push(Violation::new(
                "vae.input_resolution",
                format!("must equal sphen.resolution ({})", self.sphen.resolution),
            ));
        }
        v
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

/// Parses a JSON config, filling absent fields with defaults, and reports
/// every violated invariant at once.
pub fn parse_config(text: &str) -> Result<FullConfig, StoreError> {
    let config: FullConfig = serde_json::from_str(text).map_err(|e| {
        let field = match e.classify() {
            serde_json::error::Category::Data => {
                unknown_field(&e.to_string()).unwrap_or_else(|| "config".into())
            }
            _ => "config".into(),
        };
        StoreError::Validation(vec![Violation::new(field, e.to_string())])
    })?;
    let problems = config.violations();
    if problems.is_empty() {
        Ok(config)
    } else {
        Err(StoreError::Validation(problems))
    }
}

fn unknown_field(message: &str) -> Option<String> {
    let rest = message.strip_prefix("unknown field `")?;
    Some(rest[..rest.find('`')?].to_string())
}
