use std::collections::BTreeSet;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::WlmError;
use crate::access::{BackendKind, LocalBackend, ResourceAccess, SimBatchBackend};
use crate::sim::{QueueTimeModel, Scenario, SimCluster};
use crate::state::{validate_uid, Registry};

/// One resource the workload manager may place pilots on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResourceCatalogEntry {
    pub resource_id: String,
    pub nodes: u32,
    pub cores_per_node: u32,
    #[serde(default)]
    pub gpus_per_node: u32,
    pub max_walltime_s: f64,
    pub backend: BackendKind,
    #[serde(default)]
    pub queue_time_model: QueueTimeModel,
    #[serde(default = "default_queue")]
    pub queue: String,
}

fn default_queue() -> String {
    "default".into()
}

impl ResourceCatalogEntry {
    pub fn new(resource_id: &str, nodes: u32, cores_per_node: u32, backend: BackendKind) -> Self {
        Self {
            resource_id: resource_id.into(),
            nodes,
            cores_per_node,
            gpus_per_node: 0,
            max_walltime_s: 86_400.0,
            backend,
            queue_time_model: QueueTimeModel::default(),
            queue: default_queue(),
        }
    }

    pub fn total_cores(&self) -> u32 {
        self.nodes * self.cores_per_node
    }

    pub fn total_gpus(&self) -> u32 {
        self.nodes * self.gpus_per_node
    }

    pub fn validate(&self) -> Result<(), String> {
        let id = &self.resource_id;
        validate_uid(id).map_err(|e| e.to_string())?;
        if self.nodes == 0 || self.cores_per_node == 0 {
            return Err(format!("{id}: nodes and cores_per_node must be positive"));
        }
        if self.nodes.checked_mul(self.cores_per_node).is_none() || self.nodes.checked_mul(self.gpus_per_node).is_none() {
            return Err(format!("{id}: capacity overflows"));
        }
        if !(self.max_walltime_s.is_finite() && self.max_walltime_s > 0.0) {
            return Err(format!("{id}: max_walltime_s must be positive"));
        }
        self.queue_time_model.validate().map_err(|e| format!("{id}: {e}"))
    }
}

/// The resource catalog file:
///
/// ```toml
/// [[resources]]
/// resource_id = "B"
/// nodes = 2
/// cores_per_node = 16
/// max_walltime_s = 3600
/// backend = "simbatch"
/// queue_time_model = { kind = "constant", delay_s = 10 }
/// ```
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Catalog {
    #[serde(default)]
    pub resources: Vec<ResourceCatalogEntry>,
}

impl Catalog {
    pub fn new(resources: Vec<ResourceCatalogEntry>) -> Result<Self, WlmError> {
        let catalog = Self { resources };
        catalog.validate()?;
        Ok(catalog)
    }

    pub fn parse(text: &str) -> Result<Self, WlmError> {
        let catalog: Catalog = toml::from_str(text).map_err(|e| WlmError::Catalog(e.to_string()))?;
        catalog.validate()?;
        Ok(catalog)
    }

    pub fn load(path: &Path) -> Result<Self, WlmError> {
        let text = std::fs::read_to_string(path).map_err(|e| WlmError::Catalog(format!("{}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| WlmError::Catalog(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<(), WlmError> {
        let mut seen = BTreeSet::new();
        for entry in &self.resources {
            entry.validate().map_err(WlmError::Catalog)?;
            if !seen.insert(entry.resource_id.as_str()) {
                return Err(WlmError::Catalog(format!("resource `{}` listed twice", entry.resource_id)));
            }
        }
        Ok(())
    }

    pub fn get(&self, resource_id: &str) -> Option<&ResourceCatalogEntry> {
        self.resources.iter().find(|r| r.resource_id == resource_id)
    }

    pub fn without(&self, resource_id: &str) -> Self {
        Self {
            resources: self.resources.iter().filter(|r| r.resource_id != resource_id).cloned().collect(),
        }
    }

    /// One backend per entry. Simulated resources get their share of the
    /// scenario's background load.
    pub fn build_access(&self, registry: Arc<Registry>, scenario: Option<&Scenario>) -> Result<ResourceAccess, WlmError> {
        let mode = registry.clock().mode();
        let mut access = ResourceAccess::new(registry);
        for entry in &self.resources {
            match entry.backend {
                BackendKind::Local => access.attach(Box::new(LocalBackend::new(
                    &entry.resource_id,
                    entry.total_cores(),
                    entry.total_gpus(),
                    mode,
                )))?,
                BackendKind::Simbatch => {
                    let mut cluster = SimCluster::new(
                        &entry.resource_id,
                        entry.nodes,
                        entry.cores_per_node,
                        entry.gpus_per_node,
                        entry.queue_time_model.clone(),
                    );
                    if let Some(scenario) = scenario {
                        cluster.inject_background_load(&scenario.for_resource(&entry.resource_id))?;
                    }
                    access.attach(Box::new(SimBatchBackend::new(cluster)))?;
                }
            }
        }
        Ok(access)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_catalog() {
        let c = Catalog::parse(
            r#"
[[resources]]
resource_id = "A"
nodes = 1
cores_per_node = 8
max_walltime_s = 3600
backend = "simbatch"
queue_time_model = { kind = "constant", delay_s = 100 }

[[resources]]
resource_id = "local"
nodes = 1
cores_per_node = 4
max_walltime_s = 600
backend = "local"
"#,
        )
        .unwrap();
        assert_eq!(c.resources.len(), 2);
        assert_eq!(c.resources[0].queue_time_model, QueueTimeModel::constant(100.0));
        assert_eq!(c.resources[1].queue_time_model, QueueTimeModel::Backlog);
        assert_eq!(c.without("A").resources.len(), 1);
    }

    #[test]
    fn rejects_bad_entries() {
        let mut e = ResourceCatalogEntry::new("A", 1, 8, BackendKind::Local);
        assert!(Catalog::new(vec![e.clone(), e.clone()]).is_err());
        e.nodes = 0;
        assert!(Catalog::new(vec![e]).is_err());
        assert!(Catalog::parse("[[resources]]\nresource_id = \"x\"").is_err());
        assert!(Catalog::parse("").unwrap().resources.is_empty());
    }
}
