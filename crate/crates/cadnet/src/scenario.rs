//! Scenario and rulebook files. The defaults ship with the crate.

use std::path::Path;

use cadnet_core::world::{RuleBook, ScenarioSpec, World};

use crate::error::{IoError, IoResult};

pub const DEFAULT_SCENARIO: &str = include_str!("../data/scenario.toml");
pub const DEFAULT_RULEBOOK: &str = include_str!("../data/rulebook.toml");

pub fn parse_scenario(text: &str) -> IoResult<ScenarioSpec> {
    toml::from_str(text).map_err(|e| IoError::Format(format!("scenario: {e}")))
}

pub fn parse_rulebook(text: &str) -> IoResult<RuleBook> {
    toml::from_str(text).map_err(|e| IoError::Format(format!("rulebook: {e}")))
}

pub fn load_scenario(path: Option<&Path>) -> IoResult<ScenarioSpec> {
    match path {
        Some(p) => parse_scenario(&read(p)?),
        None => parse_scenario(DEFAULT_SCENARIO),
    }
}

pub fn load_rulebook(path: Option<&Path>) -> IoResult<RuleBook> {
    match path {
        Some(p) => parse_rulebook(&read(p)?),
        None => parse_rulebook(DEFAULT_RULEBOOK),
    }
}

fn read(p: &Path) -> IoResult<String> {
    std::fs::read_to_string(p).map_err(|source| IoError::File { path: p.to_owned(), source })
}

/// The default world and rulebook, validated against each other.
pub fn default_world() -> IoResult<(World, RuleBook)> {
    let world = World::new(load_scenario(None)?)?;
    let rules = load_rulebook(None)?;
    rules.validate(&world.classes)?;
    Ok((world, rules))
}
