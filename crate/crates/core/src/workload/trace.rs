use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::model::SnnModel;

pub const TRACE_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct SpikeRecord {
    pub timestep: u32,
    pub layer: u16,
    pub neuron: u32,
}

impl SpikeRecord {
    pub const fn new(timestep: u32, layer: u16, neuron: u32) -> Self {
        SpikeRecord {
            timestep,
            layer,
            neuron,
        }
    }
}

/// Spikes of one run, sorted by `(timestep, layer, neuron)` without duplicates.
/// Layer 0 holds the input spikes.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct SpikeTrace {
    pub model_hash: String,
    pub timesteps: u32,
    pub layer_sizes: Vec<u32>,
    records: Vec<SpikeRecord>,
}

#[derive(Debug, thiserror::Error)]
pub enum TraceError {
    #[error("cannot access trace file {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("trace line {line}: {message}")]
    Format { line: usize, message: String },
    #[error("trace line {line}: record {record:?} is not after the previous one (records must be sorted by timestep, layer, neuron and unique)")]
    Unsorted { line: usize, record: SpikeRecord },
    #[error("trace line {line}: {message}")]
    OutOfRange { line: usize, message: String },
    #[error("trace was generated for model {found}, not {expected}")]
    HashMismatch { expected: String, found: String },
    #[error("trace shape {found:?}/{found_t} timesteps does not match model {expected:?}/{expected_t}")]
    ShapeMismatch {
        expected: Vec<u32>,
        expected_t: u32,
        found: Vec<u32>,
        found_t: u32,
    },
}

impl SpikeTrace {
    pub fn empty(model: &SnnModel) -> Self {
        SpikeTrace {
            model_hash: model.hash(),
            timesteps: model.timesteps,
            layer_sizes: model.layer_sizes(),
            records: Vec::new(),
        }
    }

    /// Builds a trace from unordered records; duplicates collapse.
    pub fn from_records(
        model_hash: String,
        timesteps: u32,
        layer_sizes: Vec<u32>,
        mut records: Vec<SpikeRecord>,
    ) -> Result<Self, TraceError> {
        records.sort_unstable();
        records.dedup();
        let t = SpikeTrace {
            model_hash,
            timesteps,
            layer_sizes,
            records: Vec::new(),
        };
        for (i, r) in records.iter().enumerate() {
            t.check_range(i + 1, r)?;
        }
        Ok(SpikeTrace { records, ..t })
    }

    pub fn for_model(model: &SnnModel, records: Vec<SpikeRecord>) -> Result<Self, TraceError> {
        Self::from_records(model.hash(), model.timesteps, model.layer_sizes(), records)
    }

    pub fn records(&self) -> &[SpikeRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Records of one `(timestep, layer)` slice.
    pub fn slice(&self, timestep: u32, layer: u16) -> &[SpikeRecord] {
        let lo = self
            .records
            .partition_point(|r| (r.timestep, r.layer) < (timestep, layer));
        let hi = self
            .records
            .partition_point(|r| (r.timestep, r.layer) <= (timestep, layer));
        &self.records[lo..hi]
    }

    pub fn count_in_layer(&self, layer: u16) -> usize {
        self.records.iter().filter(|r| r.layer == layer).count()
    }

    /// Only the input spikes.
    pub fn input_only(&self) -> SpikeTrace {
        SpikeTrace {
            records: self.records.iter().copied().filter(|r| r.layer == 0).collect(),
            ..self.clone()
        }
    }

    pub fn check_model(&self, model: &SnnModel) -> Result<(), TraceError> {
        let hash = model.hash();
        if self.model_hash != hash {
            return Err(TraceError::HashMismatch {
                expected: hash,
                found: self.model_hash.clone(),
            });
        }
        if self.layer_sizes != model.layer_sizes() || self.timesteps != model.timesteps {
            return Err(TraceError::ShapeMismatch {
                expected: model.layer_sizes(),
                expected_t: model.timesteps,
                found: self.layer_sizes.clone(),
                found_t: self.timesteps,
            });
        }
        Ok(())
    }

    fn check_range(&self, line: usize, r: &SpikeRecord) -> Result<(), TraceError> {
        if r.timestep >= self.timesteps {
            return Err(TraceError::OutOfRange {
                line,
                message: format!("timestep {} >= {}", r.timestep, self.timesteps),
            });
        }
        let Some(&size) = self.layer_sizes.get(r.layer as usize) else {
            return Err(TraceError::OutOfRange {
                line,
                message: format!("layer {} >= {}", r.layer, self.layer_sizes.len()),
            });
        };
        if r.neuron >= size {
            return Err(TraceError::OutOfRange {
                line,
                message: format!("neuron {} >= layer {} size {}", r.neuron, r.layer, size),
            });
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::with_capacity(32 + self.records.len() * 8);
        let sizes: Vec<String> = self.layer_sizes.iter().map(u32::to_string).collect();
        let _ = writeln!(s, "format_version={TRACE_FORMAT_VERSION}");
        let _ = writeln!(
            s,
            "model_hash={},timesteps={},layer_sizes={}",
            self.model_hash,
            self.timesteps,
            sizes.join(";")
        );
        for r in &self.records {
            let _ = writeln!(s, "{},{},{}", r.timestep, r.layer, r.neuron);
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self, TraceError> {
        let mut lines = text.lines().enumerate();
        let fmt_err = |line: usize, message: String| TraceError::Format { line, message };
        let (_, first) = lines
            .next()
            .ok_or_else(|| fmt_err(1, "empty trace file".into()))?;
        match first.trim().strip_prefix("format_version=") {
            Some(v) if v.trim() == TRACE_FORMAT_VERSION.to_string() => {}
            Some(v) => return Err(fmt_err(1, format!("unsupported format_version {v}"))),
            None => return Err(fmt_err(1, "expected `format_version=` header".into())),
        }
        let (_, header) = lines
            .next()
            .ok_or_else(|| fmt_err(2, "missing header line".into()))?;
        let mut hash = None;
        let mut timesteps = None;
        let mut sizes = None;
        for field in header.trim().split(',') {
            let (k, v) = field
                .split_once('=')
                .ok_or_else(|| fmt_err(2, format!("malformed header field {field:?}")))?;
            match k {
                "model_hash" => hash = Some(v.to_string()),
                "timesteps" => {
                    timesteps = Some(v.parse::<u32>().map_err(|e| fmt_err(2, format!("timesteps: {e}")))?)
                }
                "layer_sizes" => {
                    let parsed: Result<Vec<u32>, _> = v.split(';').map(str::parse).collect();
                    sizes = Some(parsed.map_err(|e| fmt_err(2, format!("layer_sizes: {e}")))?);
                }
                other => return Err(fmt_err(2, format!("unknown header field `{other}`"))),
            }
        }
        let mut trace = SpikeTrace {
            model_hash: hash.ok_or_else(|| fmt_err(2, "missing model_hash".into()))?,
            timesteps: timesteps.ok_or_else(|| fmt_err(2, "missing timesteps".into()))?,
            layer_sizes: sizes.ok_or_else(|| fmt_err(2, "missing layer_sizes".into()))?,
            records: Vec::new(),
        };
        for (i, raw) in lines {
            let line = i + 1;
            let raw = raw.trim();
            if raw.is_empty() {
                continue;
            }
            let parts: Vec<&str> = raw.split(',').collect();
            let [t, l, n] = parts.as_slice() else {
                return Err(fmt_err(line, format!("expected `timestep,layer,neuron`, found {raw:?}")));
            };
            let rec = SpikeRecord {
                timestep: t.parse().map_err(|e| fmt_err(line, format!("timestep: {e}")))?,
                layer: l.parse().map_err(|e| fmt_err(line, format!("layer: {e}")))?,
                neuron: n.parse().map_err(|e| fmt_err(line, format!("neuron: {e}")))?,
            };
            trace.check_range(line, &rec)?;
            if trace.records.last().is_some_and(|p| *p >= rec) {
                return Err(TraceError::Unsorted { line, record: rec });
            }
            trace.records.push(rec);
        }
        Ok(trace)
    }

    pub fn load(path: &Path) -> Result<Self, TraceError> {
        let text = std::fs::read_to_string(path).map_err(|source| TraceError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn save(&self, path: &Path) -> Result<(), TraceError> {
        std::fs::write(path, self.to_text()).map_err(|source| TraceError::Io {
            path: path.display().to_string(),
            source,
        })
    }
}

/// Bernoulli input spikes: every `(timestep, input neuron)` fires with
/// probability `rate`.
pub fn random_input(model: &SnnModel, seed: u64, rate: f64) -> SpikeTrace {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::new();
    for t in 0..model.timesteps {
        for n in 0..model.input.size() {
            if rng.gen_bool(rate.clamp(0.0, 1.0)) {
                records.push(SpikeRecord::new(t, 0, n));
            }
        }
    }
    SpikeTrace::for_model(model, records).expect("generated records are in range")
}
