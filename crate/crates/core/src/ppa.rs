//! Switching-activity ledger and PPA (latency, energy, area) computation.
//!
//! Energy is accumulated in integer zeptojoules: leakage in nW times time in
//! ps is exactly zJ, and a femtojoule is 10^6 zJ. Reports round to 0.01 pJ
//! for display but keep the exact integers alongside.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};

use serde::Serialize;

use crate::hw::{unit_inventory, ArchConfig, TechError, TechParams, UnitKind};
use crate::kernel::{ActorId, ComponentPath};
use crate::scalar::Scalar;
use crate::time::SimTime;

pub const REPORT_FORMAT_VERSION: u32 = 1;
pub const ZJ_PER_FJ: u128 = 1_000_000;
pub const ZJ_PER_PJ: u128 = 1_000_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum EventKind {
    /// Handshake-controller `fire` of a router or NIC unit.
    Fire,
    Lookup,
    WeightFetch,
    Integrate,
}

impl EventKind {
    /// The event that carries dynamic energy for a unit kind.
    pub fn energy_event(kind: UnitKind) -> EventKind {
        match kind {
            UnitKind::InputUnit | UnitKind::OutputUnit | UnitKind::SwitchAllocator | UnitKind::Nic => {
                EventKind::Fire
            }
            UnitKind::PeLut => EventKind::Lookup,
            UnitKind::PeSram => EventKind::WeightFetch,
            UnitKind::PeNeuron => EventKind::Integrate,
        }
    }
}

/// An instantiated hardware unit: charged for leakage and area whether or not
/// any actor drives it.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct UnitInfo {
    pub path: ComponentPath,
    pub kind: UnitKind,
}

pub type LedgerKey = (ActorId, EventKind, Option<u16>);

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PpaError {
    #[error("activity recorded for unregistered actor {0:?}")]
    UnknownActor(ActorId),
    #[error("cannot merge ledgers: {0}")]
    Merge(String),
    #[error("{0}")]
    Tech(String),
    #[error("PPA values must be positive: {0}")]
    NonPositive(&'static str),
    #[error("report line {line}: {message}")]
    Report { line: usize, message: String },
}

impl From<TechError> for PpaError {
    fn from(e: TechError) -> Self {
        PpaError::Tech(e.to_string())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ActivityLedger {
    units: Vec<UnitInfo>,
    actor_unit: BTreeMap<ActorId, usize>,
    counts: BTreeMap<LedgerKey, u64>,
}

impl ActivityLedger {
    pub fn new(units: Vec<UnitInfo>) -> Self {
        ActivityLedger {
            units,
            ..Default::default()
        }
    }

    pub fn units(&self) -> &[UnitInfo] {
        &self.units
    }

    /// Declares that `actor` drives `units[unit]`.
    pub fn register(&mut self, actor: ActorId, unit: usize) {
        assert!(unit < self.units.len(), "unit index out of range");
        self.actor_unit.insert(actor, unit);
    }

    pub fn unit_of(&self, actor: ActorId) -> Option<&UnitInfo> {
        self.actor_unit.get(&actor).map(|&u| &self.units[u])
    }

    pub fn record(&mut self, actor: ActorId, event: EventKind, layer: Option<u16>) -> Result<(), PpaError> {
        self.add(actor, event, layer, 1)
    }

    pub fn add(&mut self, actor: ActorId, event: EventKind, layer: Option<u16>, n: u64) -> Result<(), PpaError> {
        if !self.actor_unit.contains_key(&actor) {
            return Err(PpaError::UnknownActor(actor));
        }
        if n > 0 {
            *self.counts.entry((actor, event, layer)).or_default() += n;
        }
        Ok(())
    }

    /// Adds `other`'s counts. Both ledgers must describe the same hardware.
    pub fn merge(&mut self, other: &ActivityLedger) -> Result<(), PpaError> {
        if self.units.is_empty() {
            self.units = other.units.clone();
        } else if !other.units.is_empty() && self.units != other.units {
            return Err(PpaError::Merge("ledgers describe different hardware".into()));
        }
        for (&a, &u) in &other.actor_unit {
            match self.actor_unit.insert(a, u) {
                Some(prev) if prev != u => {
                    return Err(PpaError::Merge(format!("actor {a:?} bound to two units")));
                }
                _ => {}
            }
        }
        for (&k, &n) in &other.counts {
            *self.counts.entry(k).or_default() += n;
        }
        Ok(())
    }

    pub fn counts(&self) -> &BTreeMap<LedgerKey, u64> {
        &self.counts
    }

    /// Events of one kind recorded by `actor`, over all layers.
    pub fn count(&self, actor: ActorId, event: EventKind) -> u64 {
        self.counts
            .range((actor, event, None)..=(actor, event, Some(u16::MAX)))
            .map(|(_, &n)| n)
            .sum()
    }

    pub fn total(&self, event: EventKind) -> u64 {
        self.counts.iter().filter(|(k, _)| k.1 == event).map(|(_, &n)| n).sum()
    }

    /// Energy-bearing event count per unit.
    pub fn unit_firings(&self) -> Vec<u64> {
        let mut out = vec![0; self.units.len()];
        for (&(a, ev, _), &n) in &self.counts {
            let u = self.actor_unit[&a];
            if ev == EventKind::energy_event(self.units[u].kind) {
                out[u] += n;
            }
        }
        out
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct Energy {
    pub dynamic_zj: u128,
    pub leakage_zj: u128,
}

impl Energy {
    pub fn total_zj(&self) -> u128 {
        self.dynamic_zj + self.leakage_zj
    }

    pub fn total_pj<F: Scalar>(&self) -> F {
        zj_to_pj(self.total_zj())
    }
}

pub fn zj_to_pj<F: Scalar>(zj: u128) -> F {
    <F as num_traits::FromPrimitive>::from_u128(zj).expect("finite") / F::lit(ZJ_PER_PJ as f64)
}

/// `zJ` rendered in pJ with two decimals, rounding half up.
pub fn fmt_pj(zj: u128) -> String {
    let centi = (zj + ZJ_PER_PJ / 200) / (ZJ_PER_PJ / 100);
    format!("{}.{:02}", centi / 100, centi % 100)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct UnitRow {
    pub path: String,
    pub kind: UnitKind,
    pub firings: u64,
    pub dynamic_zj: u128,
    pub leakage_zj: u128,
}

pub fn unit_rows(ledger: &ActivityLedger, tech: &TechParams, sim_time: SimTime) -> Result<Vec<UnitRow>, PpaError> {
    let firings = ledger.unit_firings();
    ledger
        .units()
        .iter()
        .zip(firings)
        .map(|(u, f)| {
            let t = tech.get(u.kind)?;
            Ok(UnitRow {
                path: u.path.to_string(),
                kind: u.kind,
                firings: f,
                dynamic_zj: f as u128 * t.dynamic_energy_fj as u128 * ZJ_PER_FJ,
                leakage_zj: t.leakage_power_nw as u128 * sim_time.as_ps() as u128,
            })
        })
        .collect()
}

/// Dynamic energy of every counted event plus leakage of every unit over
/// `sim_time`.
pub fn energy_total(ledger: &ActivityLedger, tech: &TechParams, sim_time: SimTime) -> Result<Energy, PpaError> {
    let rows = unit_rows(ledger, tech, sim_time)?;
    Ok(Energy {
        dynamic_zj: rows.iter().map(|r| r.dynamic_zj).sum(),
        leakage_zj: rows.iter().map(|r| r.leakage_zj).sum(),
    })
}

pub fn area_total(units: &[UnitInfo], tech: &TechParams) -> Result<u64, PpaError> {
    units
        .iter()
        .map(|u| Ok(tech.get(u.kind)?.area_um2))
        .sum()
}

pub fn arch_area(arch: &ArchConfig, tech: &TechParams) -> Result<u64, PpaError> {
    area_total(&unit_inventory(arch.mesh_dims), tech)
}

/// Energy-delay product in s·nJ from energy in pJ.
pub fn edp<F: Scalar>(energy_pj: F, latency: SimTime) -> F {
    energy_pj / F::lit(1_000.0) * latency.as_secs::<F>()
}

/// One barrier-delimited simulation phase: evaluation of `layer` at `timestep`
/// and the traffic it caused.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct Phase {
    pub timestep: u32,
    pub layer: u16,
    pub start: SimTime,
    pub end: SimTime,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct LayerRow {
    pub layer: u16,
    /// PE dynamic energy of events caused by this layer's spikes.
    pub energy_zj: u128,
    pub latency: SimTime,
}

/// Per-layer PE dynamic energy and phase time, plus the interconnect's
/// dynamic energy reported on its own.
pub fn layer_breakdown(
    ledger: &ActivityLedger,
    tech: &TechParams,
    phases: &[Phase],
    num_layers: usize,
) -> Result<(Vec<LayerRow>, u128), PpaError> {
    let mut rows: Vec<LayerRow> = (0..num_layers)
        .map(|l| LayerRow {
            layer: l as u16,
            energy_zj: 0,
            latency: SimTime::ZERO,
        })
        .collect();
    let mut interconnect = 0u128;
    for (&(a, ev, layer), &n) in ledger.counts() {
        let unit = ledger.unit_of(a).ok_or(PpaError::UnknownActor(a))?;
        if ev != EventKind::energy_event(unit.kind) {
            continue;
        }
        let e = n as u128 * tech.get(unit.kind)?.dynamic_energy_fj as u128 * ZJ_PER_FJ;
        if unit.kind.is_interconnect() {
            interconnect += e;
        } else if let Some(row) = layer.and_then(|l| rows.get_mut(l as usize)) {
            row.energy_zj += e;
        }
    }
    for p in phases {
        if let Some(row) = rows.get_mut(p.layer as usize) {
            row.latency += p.end - p.start;
        }
    }
    Ok((rows, interconnect))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum Metric {
    Latency,
    Energy,
    Area,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::Latency, Metric::Energy, Metric::Area];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Latency => "latency",
            Metric::Energy => "energy",
            Metric::Area => "area",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Upper bounds on latency, energy (pJ) and area (µm²).
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PpaTargets<F> {
    pub t_latency: SimTime,
    pub t_energy_pj: F,
    pub t_area_um2: F,
}

impl<F: Scalar> PpaTargets<F> {
    pub fn unbounded() -> Self {
        PpaTargets {
            t_latency: SimTime::MAX,
            t_energy_pj: F::infinity(),
            t_area_um2: F::infinity(),
        }
    }

    pub fn is_valid(&self) -> bool {
        self.t_latency > SimTime::ZERO && self.t_energy_pj > F::zero() && self.t_area_um2 > F::zero()
    }

    /// Metrics whose value exceeds the target; equality satisfies.
    pub fn violations(&self, ppa: &PpaReport) -> Vec<Metric> {
        let mut v = Vec::new();
        if ppa.latency > self.t_latency {
            v.push(Metric::Latency);
        }
        if ppa.energy_pj::<F>() > self.t_energy_pj {
            v.push(Metric::Energy);
        }
        if F::from_u64(ppa.area_um2).unwrap_or_else(F::infinity) > self.t_area_um2 {
            v.push(Metric::Area);
        }
        v
    }

    /// `(value / target)` per metric.
    pub fn ratios(&self, ppa: &PpaReport) -> [F; 3] {
        [
            F::from_u64(ppa.latency.as_ps()).unwrap_or_else(F::infinity)
                / F::from_u64(self.t_latency.as_ps()).unwrap_or_else(F::infinity),
            ppa.energy_pj::<F>() / self.t_energy_pj,
            F::from_u64(ppa.area_um2).unwrap_or_else(F::infinity) / self.t_area_um2,
        ]
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct PpaReport {
    pub latency: SimTime,
    pub energy: Energy,
    pub area_um2: u64,
    pub interconnect_zj: u128,
    pub units: Vec<UnitRow>,
    pub layers: Vec<LayerRow>,
    pub truncated: bool,
    pub events_processed: u64,
}

impl PpaReport {
    pub fn from_run(
        ledger: &ActivityLedger,
        tech: &TechParams,
        phases: &[Phase],
        num_layers: usize,
        latency: SimTime,
        truncated: bool,
        events_processed: u64,
    ) -> Result<Self, PpaError> {
        let units = unit_rows(ledger, tech, latency)?;
        let energy = Energy {
            dynamic_zj: units.iter().map(|r| r.dynamic_zj).sum(),
            leakage_zj: units.iter().map(|r| r.leakage_zj).sum(),
        };
        let (layers, interconnect_zj) = layer_breakdown(ledger, tech, phases, num_layers)?;
        Ok(PpaReport {
            latency,
            energy,
            area_um2: area_total(ledger.units(), tech)?,
            interconnect_zj,
            units,
            layers,
            truncated,
            events_processed,
        })
    }

    pub fn energy_pj<F: Scalar>(&self) -> F {
        self.energy.total_pj()
    }

    pub fn latency_ns<F: Scalar>(&self) -> F {
        self.latency.as_ns()
    }

    pub fn area<F: Scalar>(&self) -> F {
        F::from_u64(self.area_um2).unwrap_or_else(F::infinity)
    }

    pub fn edp<F: Scalar>(&self) -> F {
        edp(self.energy_pj::<F>(), self.latency)
    }

    pub fn summary_line(&self) -> String {
        format!(
            "L={} E={} pJ A={} um2 EDP={:.2e} s*nJ{}",
            self.latency,
            fmt_pj(self.energy.total_zj()),
            self.area_um2,
            self.edp::<f64>(),
            if self.truncated { " (truncated)" } else { "" }
        )
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "format_version = {REPORT_FORMAT_VERSION}");
        let _ = writeln!(s, "truncated = {}", self.truncated);
        let _ = writeln!(s, "\n[summary]");
        let _ = writeln!(s, "latency_ps = {}", self.latency.as_ps());
        let _ = writeln!(s, "latency_ns = {:.3}", self.latency_ns::<f64>());
        let _ = writeln!(s, "energy_zj = {}", self.energy.total_zj());
        let _ = writeln!(s, "energy_pj = {}", fmt_pj(self.energy.total_zj()));
        let _ = writeln!(s, "dynamic_zj = {}", self.energy.dynamic_zj);
        let _ = writeln!(s, "leakage_zj = {}", self.energy.leakage_zj);
        let _ = writeln!(s, "interconnect_zj = {}", self.interconnect_zj);
        let _ = writeln!(s, "area_um2 = {}", self.area_um2);
        let _ = writeln!(s, "edp_snj = {:.6e}", self.edp::<f64>());
        let _ = writeln!(s, "events_processed = {}", self.events_processed);
        let _ = writeln!(s, "\n[units]");
        let _ = writeln!(s, "path,kind,firings,dynamic_zj,leakage_zj,dynamic_pj,leakage_pj");
        for u in &self.units {
            s.push_str(&crate::csvline::row([
                u.path.clone(),
                u.kind.to_string(),
                u.firings.to_string(),
                u.dynamic_zj.to_string(),
                u.leakage_zj.to_string(),
                fmt_pj(u.dynamic_zj),
                fmt_pj(u.leakage_zj),
            ]));
        }
        let _ = writeln!(s, "\n[layers]");
        let _ = writeln!(s, "layer,energy_zj,energy_pj,latency_ps,latency_ns");
        for l in &self.layers {
            let _ = writeln!(
                s,
                "{},{},{},{},{:.3}",
                l.layer,
                l.energy_zj,
                fmt_pj(l.energy_zj),
                l.latency.as_ps(),
                l.latency.as_ns::<f64>()
            );
        }
        s
    }

    /// Reads back what `to_text` wrote. Only the exact integer columns are
    /// used; rounded display columns are ignored.
    pub fn parse(text: &str) -> Result<Self, PpaError> {
        let err = |line: usize, message: String| PpaError::Report { line, message };
        let mut section = "";
        let mut header: BTreeMap<String, (String, usize)> = BTreeMap::new();
        let mut summary: BTreeMap<String, (String, usize)> = BTreeMap::new();
        let mut units = Vec::new();
        let mut layers = Vec::new();
        let mut saw_columns = false;
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let l = raw.trim();
            if l.is_empty() {
                continue;
            }
            if l.starts_with('[') {
                section = match l {
                    "[summary]" => "summary",
                    "[units]" => "units",
                    "[layers]" => "layers",
                    other => return Err(err(line, format!("unknown section {other}"))),
                };
                saw_columns = false;
                continue;
            }
            match section {
                "" | "summary" => {
                    let (k, v) = l
                        .split_once('=')
                        .ok_or_else(|| err(line, format!("expected `key = value`, found {l:?}")))?;
                    let target = if section.is_empty() { &mut header } else { &mut summary };
                    target.insert(k.trim().to_string(), (v.trim().to_string(), line));
                }
                _ if !saw_columns => saw_columns = true,
                "units" => {
                    let f = crate::csvline::fields(l).map_err(|e| err(line, e))?;
                    if f.len() != 7 {
                        return Err(err(line, format!("unit row needs 7 columns, found {}", f.len())));
                    }
                    let p = |s: &str| s.parse::<u128>().map_err(|e| err(line, e.to_string()));
                    units.push(UnitRow {
                        path: f[0].clone(),
                        kind: f[1].parse().map_err(|e: String| err(line, e))?,
                        firings: p(&f[2])? as u64,
                        dynamic_zj: p(&f[3])?,
                        leakage_zj: p(&f[4])?,
                    });
                }
                "layers" => {
                    let f: Vec<&str> = l.split(',').collect();
                    if f.len() != 5 {
                        return Err(err(line, format!("layer row needs 5 columns, found {}", f.len())));
                    }
                    let p = |s: &str| s.parse::<u128>().map_err(|e| err(line, e.to_string()));
                    layers.push(LayerRow {
                        layer: p(f[0])? as u16,
                        energy_zj: p(f[1])?,
                        latency: SimTime(p(f[3])? as u64),
                    });
                }
                _ => unreachable!(),
            }
        }
        let get = |m: &BTreeMap<String, (String, usize)>, k: &str| -> Result<u128, PpaError> {
            let (v, line) = m.get(k).ok_or_else(|| err(0, format!("missing `{k}`")))?;
            v.parse::<u128>().map_err(|e| err(*line, format!("`{k}`: {e}")))
        };
        let version = get(&header, "format_version")?;
        if version != REPORT_FORMAT_VERSION as u128 {
            return Err(err(1, format!("unsupported format_version {version}")));
        }
        let truncated = match header.get("truncated").map(|v| v.0.as_str()) {
            Some("true") => true,
            Some("false") => false,
            _ => return Err(err(2, "missing or malformed `truncated`".into())),
        };
        let report = PpaReport {
            latency: SimTime(get(&summary, "latency_ps")? as u64),
            energy: Energy {
                dynamic_zj: get(&summary, "dynamic_zj")?,
                leakage_zj: get(&summary, "leakage_zj")?,
            },
            area_um2: get(&summary, "area_um2")? as u64,
            interconnect_zj: get(&summary, "interconnect_zj")?,
            units,
            layers,
            truncated,
            events_processed: get(&summary, "events_processed")? as u64,
        };
        if get(&summary, "energy_zj")? != report.energy.total_zj() {
            return Err(err(0, "energy_zj is not dynamic_zj + leakage_zj".into()));
        }
        Ok(report)
    }
}
