//! Deterministic scenarios: typists, attacks, end-to-end runs and campaigns.

pub mod attack;
pub mod campaign;
pub mod scenario;
pub mod typist;

pub use attack::{apply_mutation, mutate_value, AttackKind, AttackScript, Attacker};
pub use scenario::{classify, replay, run_scenario, OutcomeClass, ReplayError, ScenarioOutcome, ScenarioParams};
pub use typist::{Typist, TypistModel};
pub use campaign::{parse_config, run_campaign, AttackMix, CampaignConfig, CampaignReport, CampaignStats, FormChoice, Thresholds};
