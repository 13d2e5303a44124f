//! Shipped configuration, embedded at compile time from `configs/`.

use std::path::PathBuf;

use crate::taxonomy::ActionTaxonomy;
use crate::world::Scenario;

pub const TAXONOMY_TOML: &str = include_str!("../../../configs/taxonomy.toml");
pub const NEUTRAL_SCENARIO_TOML: &str = include_str!("../../../configs/scenario_neutral.toml");
pub const SYSTEM_TEMPLATE: &str = include_str!("../../../configs/prompts/system.txt");
pub const USER_TEMPLATE: &str = include_str!("../../../configs/prompts/user.txt");
pub const WORLD_SYSTEM_TEMPLATE: &str = include_str!("../../../configs/prompts/world_system.txt");
pub const WORLD_USER_TEMPLATE: &str = include_str!("../../../configs/prompts/world_user.txt");

pub fn taxonomy() -> ActionTaxonomy {
    ActionTaxonomy::from_toml_str(TAXONOMY_TOML).expect("shipped taxonomy is valid")
}

pub fn scenario() -> Scenario {
    Scenario::from_toml_str(NEUTRAL_SCENARIO_TOML).expect("shipped scenario is valid")
}

/// Location of the `configs/` directory in a source checkout.
pub fn configs_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}
