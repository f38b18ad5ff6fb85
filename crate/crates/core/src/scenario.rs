//! Scenario files (TOML). Unknown keys anywhere are rejected.
//!
//! ```toml
//! name = "hall-a"
//! nodes = 38
//! n_active = 12
//! seed = 1
//! energy_params = "energy.toml"   # relative to this file
//!
//! [mac]
//! mode = "lbt"
//! tps_policy = "redraw"
//!
//! [app]
//! polls = 10
//!
//! [[jam]]
//! start_us = 0
//! end_us = 20000
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::channel::JamInterval;
use crate::energy::EnergyParams;
use crate::error::SimError;
use crate::mac::MacParams;
use crate::radio::RadioParams;
use crate::time::SimTime;
use crate::warehouse::{Inventory, UnicastJob, WarehouseParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JamSpec {
    pub start_us: u64,
    pub end_us: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InventoryEntry {
    pub node: u8,
    pub product: u16,
    pub quantity: u16,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    /// Number of nodes besides the access point; addresses 1..=nodes.
    pub nodes: usize,
    /// Nodes holding the polled product; defaults to all of them.
    pub n_active: Option<usize>,
    pub seed: u64,
    pub energy_params: Option<PathBuf>,
    pub radio: RadioParams,
    pub mac: MacParams,
    pub energy: Option<EnergyParams>,
    pub app: WarehouseParams,
    /// Explicit inventory; when empty, nodes 1..=n_active hold the polled
    /// product and the rest hold another one.
    pub inventory: Vec<InventoryEntry>,
    pub jam: Vec<JamSpec>,
    pub unicast: Vec<UnicastJob>,
}

impl Default for Scenario {
    fn default() -> Self {
        Scenario {
            name: "warehouse".into(),
            nodes: 38,
            n_active: None,
            seed: 1,
            energy_params: None,
            radio: RadioParams::default(),
            mac: MacParams::default(),
            energy: None,
            app: WarehouseParams::default(),
            inventory: Vec::new(),
            jam: Vec::new(),
            unicast: Vec::new(),
        }
    }
}

/// A scenario with its energy parameters resolved.
#[derive(Debug, Clone)]
pub struct LoadedScenario {
    pub scenario: Scenario,
    pub energy: EnergyParams,
    pub source: String,
}

impl Scenario {
    pub fn from_toml_str(text: &str, source: &str) -> Result<Self, SimError> {
        let s: Scenario = toml::from_str(text).map_err(|e| SimError::config(source, "scenario", e.to_string()))?;
        s.validate(source)?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<LoadedScenario, SimError> {
        let source = path.display().to_string();
        let text = std::fs::read_to_string(path)
            .map_err(|e| SimError::config(&source, "file", format!("cannot read scenario: {e}")))?;
        let scenario = Self::from_toml_str(&text, &source)?;
        let base = path.parent().unwrap_or(Path::new("."));
        scenario.resolve(base, &source)
    }

    /// Attach energy parameters: an inline `[energy]` table, or the file
    /// named by `energy_params` (relative to `base`), or the defaults.
    pub fn resolve(self, base: &Path, source: &str) -> Result<LoadedScenario, SimError> {
        let energy = match (&self.energy, &self.energy_params) {
            (Some(_), Some(_)) => {
                return Err(SimError::config(
                    source,
                    "energy_params",
                    "give either an [energy] table or an energy_params file, not both",
                ))
            }
            (Some(e), None) => e.clone(),
            (None, Some(p)) => EnergyParams::load(&base.join(p))?,
            (None, None) => EnergyParams::default(),
        };
        energy.model(source)?;
        Ok(LoadedScenario {
            scenario: self,
            energy,
            source: source.to_string(),
        })
    }

    pub fn validate(&self, source: &str) -> Result<(), SimError> {
        if self.nodes == 0 || self.nodes > 254 {
            return Err(SimError::config(source, "nodes", format!("{} is outside 1..=254", self.nodes)));
        }
        if let Some(n) = self.n_active {
            if n > self.nodes {
                return Err(SimError::config(
                    source,
                    "n_active",
                    format!("{n} exceeds the node count {}", self.nodes),
                ));
            }
        }
        self.radio.validate(source)?;
        self.mac.validate(source)?;
        self.app.validate(source)?;
        for (k, j) in self.jam.iter().enumerate() {
            if j.end_us <= j.start_us {
                return Err(SimError::config(source, format!("jam[{k}]"), "end_us must exceed start_us"));
            }
        }
        for (k, e) in self.inventory.iter().enumerate() {
            if e.node == 0 || usize::from(e.node) > self.nodes {
                return Err(SimError::config(source, format!("inventory[{k}].node"), format!("no node {}", e.node)));
            }
        }
        for (k, u) in self.unicast.iter().enumerate() {
            if u.dst == 0 || usize::from(u.dst) > self.nodes {
                return Err(SimError::config(source, format!("unicast[{k}].dst"), format!("no node {}", u.dst)));
            }
        }
        Ok(())
    }

    pub fn n_active(&self) -> usize {
        self.n_active.unwrap_or(self.nodes)
    }

    pub fn jams(&self) -> Vec<JamInterval> {
        self.jam
            .iter()
            .map(|j| JamInterval {
                start: SimTime::from_us(j.start_us),
                end: SimTime::from_us(j.end_us),
            })
            .collect()
    }

    /// Inventory of nodes 1..=nodes (index 0 of the result is node 1).
    pub fn inventories(&self, n_active: usize) -> Vec<Option<Inventory>> {
        if !self.inventory.is_empty() {
            let mut v = vec![None; self.nodes];
            for e in &self.inventory {
                v[usize::from(e.node) - 1] = Some(Inventory {
                    product: e.product,
                    quantity: e.quantity,
                });
            }
            return v;
        }
        (1..=self.nodes)
            .map(|a| {
                let product = if a <= n_active {
                    self.app.product
                } else {
                    self.app.product.wrapping_add(1)
                };
                Some(Inventory {
                    product,
                    quantity: self.app.quantity,
                })
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let s = Scenario::from_toml_str("", "inline").unwrap();
        assert_eq!(s, Scenario::default());
        assert_eq!(s.n_active(), 38);
    }

    #[test]
    fn unknown_keys_rejected_with_position() {
        let err = Scenario::from_toml_str("nodes = 4\n[mac]\nt_f = 5\n", "inline").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("t_f") && msg.contains("line 3"), "{msg}");
        assert_eq!(err.exit_code(), 1);
    }

    #[test]
    fn bad_values_rejected() {
        assert!(Scenario::from_toml_str("nodes = 4\nn_active = 5\n", "x").is_err());
        assert!(Scenario::from_toml_str("[[jam]]\nstart_us = 5\nend_us = 5\n", "x").is_err());
        assert!(Scenario::from_toml_str("[mac]\nmode = \"csma\"\n", "x").is_err());
    }

    #[test]
    fn default_inventory_marks_first_nodes_active() {
        let s = Scenario {
            nodes: 4,
            ..Scenario::default()
        };
        let inv = s.inventories(2);
        let p = s.app.product;
        assert_eq!(inv.iter().filter(|i| i.unwrap().product == p).count(), 2);
        assert_eq!(inv[0].unwrap().product, p);
        assert_ne!(inv[3].unwrap().product, p);
    }

    #[test]
    fn missing_file_is_a_config_error() {
        let err = Scenario::load(Path::new("/nonexistent/scenario.toml")).unwrap_err();
        assert_eq!(err.exit_code(), 1);
    }
}
