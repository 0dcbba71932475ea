use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::Serialize;

use crate::kv::{KvDoc, KvError};
use crate::time::SimTime;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum UnitKind {
    InputUnit,
    OutputUnit,
    SwitchAllocator,
    PeLut,
    PeSram,
    PeNeuron,
    Nic,
}

impl UnitKind {
    pub const ALL: [UnitKind; 7] = [
        UnitKind::InputUnit,
        UnitKind::OutputUnit,
        UnitKind::SwitchAllocator,
        UnitKind::PeLut,
        UnitKind::PeSram,
        UnitKind::PeNeuron,
        UnitKind::Nic,
    ];

    pub fn name(self) -> &'static str {
        match self {
            UnitKind::InputUnit => "input_unit",
            UnitKind::OutputUnit => "output_unit",
            UnitKind::SwitchAllocator => "switch_allocator",
            UnitKind::PeLut => "pe_lut",
            UnitKind::PeSram => "pe_sram",
            UnitKind::PeNeuron => "pe_neuron",
            UnitKind::Nic => "nic",
        }
    }

    pub fn is_interconnect(self) -> bool {
        matches!(
            self,
            UnitKind::InputUnit | UnitKind::OutputUnit | UnitKind::SwitchAllocator | UnitKind::Nic
        )
    }
}

impl fmt::Display for UnitKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for UnitKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        UnitKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown unit kind `{s}`"))
    }
}

/// Per-unit technology figures in integer units: picoseconds, nanowatts,
/// square micrometres and femtojoules.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct UnitTech {
    pub forward_latency: SimTime,
    pub backward_latency: SimTime,
    pub leakage_power_nw: u64,
    pub area_um2: u64,
    pub dynamic_energy_fj: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct TechParams {
    units: BTreeMap<UnitKind, UnitTech>,
}

#[derive(Debug, thiserror::Error)]
pub enum TechError {
    #[error("cannot read technology file {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("technology file: {0}")]
    Kv(#[from] KvError),
    #[error("technology file has no entry for unit kind `{0}`")]
    Missing(UnitKind),
    #[error("technology entry `{kind}`: {message}")]
    Invalid { kind: UnitKind, message: String },
}

const FIELDS: [&str; 5] = [
    "forward_latency_ps",
    "backward_latency_ps",
    "leakage_power_nw",
    "area_um2",
    "dynamic_energy_fj",
];

/// Router figures are the 180 nm synthesis results for the three router units.
/// NIC and PE rows, and every dynamic energy, are placeholders for the user to
/// calibrate.
pub const DEFAULT_TECH: &str = "\
format_version = 1

input_unit.forward_latency_ps = 1200
input_unit.backward_latency_ps = 1500
input_unit.leakage_power_nw = 63000
input_unit.area_um2 = 20547
input_unit.dynamic_energy_fj = 450       # placeholder, user-calibrated

output_unit.forward_latency_ps = 1600
output_unit.backward_latency_ps = 2000
output_unit.leakage_power_nw = 44000
output_unit.area_um2 = 14536
output_unit.dynamic_energy_fj = 320      # placeholder, user-calibrated

switch_allocator.forward_latency_ps = 1900
switch_allocator.backward_latency_ps = 2400
switch_allocator.leakage_power_nw = 31000
switch_allocator.area_um2 = 10764
switch_allocator.dynamic_energy_fj = 240 # placeholder, user-calibrated

# NIC and PE rows: placeholder, user-calibrated
nic.forward_latency_ps = 1000
nic.backward_latency_ps = 1200
nic.leakage_power_nw = 30000
nic.area_um2 = 9800
nic.dynamic_energy_fj = 200

pe_lut.forward_latency_ps = 1400
pe_lut.backward_latency_ps = 1500
pe_lut.leakage_power_nw = 52000
pe_lut.area_um2 = 18000
pe_lut.dynamic_energy_fj = 380

pe_sram.forward_latency_ps = 2500
pe_sram.backward_latency_ps = 2600
pe_sram.leakage_power_nw = 120000
pe_sram.area_um2 = 64000
pe_sram.dynamic_energy_fj = 950

pe_neuron.forward_latency_ps = 1800
pe_neuron.backward_latency_ps = 2000
pe_neuron.leakage_power_nw = 40000
pe_neuron.area_um2 = 26000
pe_neuron.dynamic_energy_fj = 520
";

impl TechParams {
    pub fn default_180nm() -> Self {
        Self::parse(DEFAULT_TECH).expect("built-in technology file parses")
    }

    pub fn load(path: &Path) -> Result<Self, TechError> {
        let text = std::fs::read_to_string(path).map_err(|source| TechError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, TechError> {
        let doc = KvDoc::parse(text)?;
        doc.reject_unknown(|k| {
            k == "format_version"
                || k.split_once('.').is_some_and(|(unit, field)| {
                    unit.parse::<UnitKind>().is_ok() && FIELDS.contains(&field)
                })
        })?;
        if doc.contains("format_version") {
            doc.check_version(1)?;
        }
        let mut units = BTreeMap::new();
        for kind in UnitKind::ALL {
            let key = |f: &str| format!("{}.{f}", kind.name());
            let present = FIELDS.iter().filter(|f| doc.contains(&key(f))).count();
            if present == 0 {
                continue;
            }
            if present < FIELDS.len() {
                let missing = FIELDS.iter().find(|f| !doc.contains(&key(f))).expect("some missing");
                return Err(TechError::Invalid {
                    kind,
                    message: format!("missing `{}`", key(missing)),
                });
            }
            let t = UnitTech {
                forward_latency: SimTime(doc.get(&key("forward_latency_ps"))?),
                backward_latency: SimTime(doc.get(&key("backward_latency_ps"))?),
                leakage_power_nw: doc.get(&key("leakage_power_nw"))?,
                area_um2: doc.get(&key("area_um2"))?,
                dynamic_energy_fj: doc.get(&key("dynamic_energy_fj"))?,
            };
            units.insert(kind, t);
        }
        let tech = TechParams { units };
        tech.check()?;
        Ok(tech)
    }

    fn check(&self) -> Result<(), TechError> {
        for (&kind, t) in &self.units {
            if t.forward_latency == SimTime::ZERO || t.backward_latency == SimTime::ZERO {
                return Err(TechError::Invalid {
                    kind,
                    message: "latencies must be positive".into(),
                });
            }
        }
        Ok(())
    }

    pub fn with(mut self, kind: UnitKind, t: UnitTech) -> Self {
        self.units.insert(kind, t);
        self
    }

    pub fn get(&self, kind: UnitKind) -> Result<&UnitTech, TechError> {
        self.units.get(&kind).ok_or(TechError::Missing(kind))
    }

    pub fn kinds(&self) -> impl Iterator<Item = UnitKind> + '_ {
        self.units.keys().copied()
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from("format_version = 1\n");
        for (kind, t) in &self.units {
            let k = kind.name();
            s.push_str(&format!(
                "{k}.forward_latency_ps = {}\n{k}.backward_latency_ps = {}\n{k}.leakage_power_nw = {}\n\
                 {k}.area_um2 = {}\n{k}.dynamic_energy_fj = {}\n",
                t.forward_latency.as_ps(),
                t.backward_latency.as_ps(),
                t.leakage_power_nw,
                t.area_um2,
                t.dynamic_energy_fj
            ));
        }
        s
    }
}
