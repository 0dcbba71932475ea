use std::collections::BTreeMap;
use std::fmt::Write;
use std::fs;

use anyhow::anyhow;
use neuromesh::ppa::PpaReport;

use crate::manifest::RunManifest;
use crate::{CliError, CliResult, Format, InputCtx, ReportArgs};

/// Stored report split into its summary keys and layer rows, as written.
struct Stored {
    summary: BTreeMap<String, String>,
    layers: Vec<Vec<String>>,
    truncated: bool,
}

fn read_stored(text: &str) -> Stored {
    let mut summary = BTreeMap::new();
    let mut layers = Vec::new();
    let mut section = "";
    let mut header_seen = false;
    for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
        if line.starts_with('[') {
            section = if line == "[summary]" { "summary" } else if line == "[layers]" { "layers" } else { "other" };
            header_seen = false;
            continue;
        }
        match section {
            "summary" => {
                if let Some((k, v)) = line.split_once('=') {
                    summary.insert(k.trim().to_string(), v.trim().to_string());
                }
            }
            "layers" if !header_seen => header_seen = true,
            "layers" => layers.push(line.split(',').map(str::to_string).collect()),
            _ => {}
        }
    }
    let truncated = text.lines().any(|l| l.replace(' ', "") == "truncated=true");
    Stored { summary, layers, truncated }
}

/// EDP as stored, shown with two decimals of mantissa.
fn edp_display(stored: &str) -> String {
    stored.parse::<f64>().map(|v| format!("{v:.2e}")).unwrap_or_else(|_| stored.to_string())
}

pub fn render(a: &ReportArgs) -> CliResult<String> {
    let m = RunManifest::load(&a.run_dir)?;
    let name = m.report.clone().ok_or_else(|| {
        CliError::Input(anyhow!("run directory {} holds no PPA report ({} run without results)", a.run_dir.display(), m.command))
    })?;
    let path = a.run_dir.join(&name);
    let text = fs::read_to_string(&path).input(|| format!("run directory is incomplete: cannot read {}", path.display()))?;
    // refuse damaged files before showing anything
    PpaReport::parse(&text).input(|| format!("{}", path.display()))?;
    let st = read_stored(&text);
    let get = |k: &str| st.summary.get(k).cloned().unwrap_or_default();
    let mut s = String::new();
    match a.format {
        Format::Table => {
            let _ = writeln!(
                s,
                "# {} run, seed {}, report {name}{}",
                m.command,
                m.seed,
                if st.truncated { ", truncated" } else { "" }
            );
            let _ = writeln!(s, "{:<14} {:>16}", "metric", "value");
            for (label, v) in [
                ("latency_ns", get("latency_ns")),
                ("energy_pj", get("energy_pj")),
                ("area_um2", get("area_um2")),
                ("edp_snj", edp_display(&get("edp_snj"))),
                ("truncated", st.truncated.to_string()),
            ] {
                let _ = writeln!(s, "{label:<14} {v:>16}");
            }
            let _ = writeln!(s, "\n{:<6} {:>14} {:>14}", "layer", "energy_pj", "latency_ns");
            for row in &st.layers {
                if row.len() == 5 {
                    let _ = writeln!(s, "{:<6} {:>14} {:>14}", row[0], row[2], row[4]);
                }
            }
            let disp = a.run_dir.join("dispositions.csv");
            if let Ok(d) = fs::read_to_string(disp) {
                let _ = writeln!(s, "\ncandidates");
                s.push_str(&d);
            }
        }
        Format::Csv => {
            let _ = writeln!(s, "# command={},seed={},truncated={}", m.command, m.seed, st.truncated);
            let _ = writeln!(s, "latency_ps,latency_ns,energy_zj,energy_pj,area_um2,edp_snj,truncated");
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{}",
                get("latency_ps"),
                get("latency_ns"),
                get("energy_zj"),
                get("energy_pj"),
                get("area_um2"),
                get("edp_snj"),
                st.truncated
            );
            let _ = writeln!(s, "\nlayer,energy_zj,energy_pj,latency_ps,latency_ns");
            for row in &st.layers {
                let _ = writeln!(s, "{}", row.join(","));
            }
        }
    }
    Ok(s)
}
