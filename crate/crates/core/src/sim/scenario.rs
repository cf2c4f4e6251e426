use std::path::Path;

use serde::{Deserialize, Serialize};

use super::BackgroundJob;

/// Background load for simulated resources, read from a TOML file:
///
/// ```toml
/// [[background]]
/// resource = "A"
/// arrival_s = 0.0
/// cores = 64
/// runtime_s = 100.0
/// ```
///
/// An empty file is a valid scenario with no load.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub background: Vec<ScenarioEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioEntry {
    pub resource: String,
    pub arrival_s: f64,
    pub cores: u32,
    pub runtime_s: f64,
}

impl Scenario {
    pub fn parse(text: &str) -> Result<Self, String> {
        let scenario: Scenario = toml::from_str(text).map_err(|e| e.to_string())?;
        for e in &scenario.background {
            if !(e.arrival_s.is_finite() && e.arrival_s >= 0.0) {
                return Err(format!("{}: arrival_s must be a non-negative number", e.resource));
            }
            if !(e.runtime_s.is_finite() && e.runtime_s >= 0.0) {
                return Err(format!("{}: runtime_s must be a non-negative number", e.resource));
            }
        }
        Ok(scenario)
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        Self::parse(&text).map_err(|e| format!("{}: {e}", path.display()))
    }

    pub fn for_resource(&self, resource: &str) -> Vec<BackgroundJob> {
        self.background
            .iter()
            .filter(|e| e.resource == resource)
            .map(|e| BackgroundJob {
                arrival_s: e.arrival_s,
                cores: e.cores,
                runtime_s: e.runtime_s,
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_and_populated() {
        assert_eq!(Scenario::parse("").unwrap(), Scenario::default());
        let s = Scenario::parse(
            "[[background]]\nresource = \"A\"\narrival_s = 5.0\ncores = 8\nruntime_s = 20.0\n",
        )
        .unwrap();
        assert_eq!(s.for_resource("A").len(), 1);
        assert!(s.for_resource("B").is_empty());
        assert!(Scenario::parse("[[background]]\nresource = \"A\"\narrival_s = -1.0\ncores = 8\nruntime_s = 1.0\n").is_err());
    }
}
