use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Dense handle for a registered actor.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ActorId(pub(crate) u32);

impl ActorId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// Four-level location of a component: system, node, module, unit.
/// Displayed as `sys/node(0,0)/router/in_east`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ComponentPath {
    pub system: String,
    pub node: String,
    pub module: String,
    pub unit: String,
}

impl ComponentPath {
    pub fn new(
        system: impl Into<String>,
        node: impl Into<String>,
        module: impl Into<String>,
        unit: impl Into<String>,
    ) -> Self {
        ComponentPath {
            system: system.into(),
            node: node.into(),
            module: module.into(),
            unit: unit.into(),
        }
    }
}

impl fmt::Display for ComponentPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}/{}/{}", self.system, self.node, self.module, self.unit)
    }
}

#[derive(Debug, thiserror::Error)]
#[error("component path must have four '/'-separated segments: {0:?}")]
pub struct PathParseError(String);

impl FromStr for ComponentPath {
    type Err = PathParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split('/').collect();
        match parts.as_slice() {
            [a, b, c, d] if parts.iter().all(|p| !p.is_empty()) => Ok(ComponentPath::new(*a, *b, *c, *d)),
            _ => Err(PathParseError(s.to_string())),
        }
    }
}
