//! Per-slot short-term memory: copyable utterance positions, encoded ontology
//! values, encoded specials and a learned stop row, scored by the decoder.

use serde::{Deserialize, Serialize};

use crate::data_model::SlotSpec;
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RowKind {
    /// Utterance position (0-based).
    Copy(usize),
    /// Index into `SlotSpec::values`.
    Generate(usize),
    /// Index into `SlotSpec::specials`.
    Special(usize),
    Stop,
}

/// Row order: copy block, generate block, specials, stop.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MemoryLayout {
    pub n_copy: usize,
    pub n_values: usize,
    pub n_specials: usize,
}

impl MemoryLayout {
    pub fn new(n_copy: usize, n_values: usize, n_specials: usize) -> Self {
        MemoryLayout {
            n_copy,
            n_values,
            n_specials,
        }
    }

    pub fn rows(&self) -> usize {
        self.n_copy + self.n_values + self.n_specials + 1
    }

    pub fn kind(&self, row: usize) -> RowKind {
        let g = self.n_copy;
        let s = g + self.n_values;
        let stop = s + self.n_specials;
        match row {
            r if r < g => RowKind::Copy(r),
            r if r < s => RowKind::Generate(r - g),
            r if r < stop => RowKind::Special(r - s),
            r if r == stop => RowKind::Stop,
            r => panic!("row {r} outside memory of {} rows", self.rows()),
        }
    }

    pub fn copy_row(&self, position: usize) -> Option<usize> {
        (position < self.n_copy).then_some(position)
    }

    pub fn generate_row(&self, value: usize) -> usize {
        assert!(value < self.n_values);
        self.n_copy + value
    }

    pub fn special_row(&self, special: usize) -> usize {
        assert!(special < self.n_specials);
        self.n_copy + self.n_values + special
    }

    pub fn stop_row(&self) -> usize {
        self.rows() - 1
    }

    /// Rows eligible after the first step of a copy: the copy block and stop.
    pub fn continuation_rows(&self) -> Vec<usize> {
        (0..self.n_copy).chain(std::iter::once(self.stop_row())).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MemoryEntry {
    pub kind: RowKind,
    pub surface: String,
}

#[derive(Debug, Clone)]
pub struct SlotMemory {
    pub slot: usize,
    pub layout: MemoryLayout,
    pub entries: Vec<MemoryEntry>,
    /// `rows × d_rnn`
    pub matrix: Var,
}

/// Stacks `[h_u; value_rows; stop]`. `value_rows` holds the encoded values
/// followed by the encoded specials, in ontology order. `h_u = None` leaves
/// the copy block empty.
pub fn build_memory(
    g: &mut Graph,
    slot: usize,
    spec: &SlotSpec,
    utterance: &[String],
    h_u: Option<Var>,
    value_rows: Var,
    stop: Var,
) -> Result<SlotMemory> {
    let (vr, d) = g.shape(value_rows);
    if vr != spec.values.len() + spec.specials.len() {
        return Err(Error::Contract(format!(
            "slot {}: {vr} value rows for {} values and specials",
            spec.name,
            spec.values.len() + spec.specials.len()
        )));
    }
    if g.shape(stop) != (1, d) {
        return Err(Error::Contract(format!("slot {}: stop row has shape {:?}, expected (1, {d})", spec.name, g.shape(stop))));
    }
    let mut parts = Vec::with_capacity(3);
    let mut entries = Vec::new();
    let n_copy = match h_u {
        Some(h) => {
            let (n, hd) = g.shape(h);
            if hd != d || n != utterance.len() {
                return Err(Error::Contract(format!(
                    "slot {}: utterance states {:?} do not match {} tokens of width {d}",
                    spec.name,
                    (n, hd),
                    utterance.len()
                )));
            }
            parts.push(h);
            entries.extend(utterance.iter().enumerate().map(|(i, t)| MemoryEntry {
                kind: RowKind::Copy(i),
                surface: t.clone(),
            }));
            n
        }
        None => 0,
    };
    entries.extend(spec.values.iter().enumerate().map(|(i, v)| MemoryEntry {
        kind: RowKind::Generate(i),
        surface: v.clone(),
    }));
    entries.extend(spec.specials.iter().enumerate().map(|(i, v)| MemoryEntry {
        kind: RowKind::Special(i),
        surface: v.clone(),
    }));
    entries.push(MemoryEntry {
        kind: RowKind::Stop,
        surface: String::new(),
    });
    parts.push(value_rows);
    parts.push(stop);
    let matrix = g.concat_rows(&parts);
    Ok(SlotMemory {
        slot,
        layout: MemoryLayout::new(n_copy, spec.values.len(), spec.specials.len()),
        entries,
        matrix,
    })
}

/// Raw scores `M sᵀ`, one per row.
pub fn score_memory(m: &Tensor, s: &[f64]) -> Vec<f64> {
    assert_eq!(m.cols, s.len(), "state width does not match memory");
    (0..m.rows).map(|r| crate::tensor::dot(m.row(r), s)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DistMode {
    Softmax,
    Sigmoid,
}

/// Probabilities over the rows of one slot memory.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodeDistribution {
    pub probs: Vec<f64>,
    pub mode: DistMode,
}

impl DecodeDistribution {
    fn mass(&self, layout: &MemoryLayout, pred: impl Fn(RowKind) -> bool) -> f64 {
        self.probs
            .iter()
            .enumerate()
            .filter(|(r, _)| pred(layout.kind(*r)))
            .map(|(_, p)| p)
            .sum()
    }

    pub fn copy_mass(&self, layout: &MemoryLayout) -> f64 {
        self.mass(layout, |k| matches!(k, RowKind::Copy(_)))
    }

    /// Generate and special rows.
    pub fn generate_mass(&self, layout: &MemoryLayout) -> f64 {
        self.mass(layout, |k| matches!(k, RowKind::Generate(_) | RowKind::Special(_)))
    }

    pub fn stop_mass(&self, layout: &MemoryLayout) -> f64 {
        self.probs[layout.stop_row()]
    }

    /// Mass of every row showing `surface`, copy and generate alike.
    pub fn surface_mass(&self, entries: &[MemoryEntry], surface: &str) -> f64 {
        entries
            .iter()
            .zip(&self.probs)
            .filter(|(e, _)| e.kind != RowKind::Stop && e.surface == surface)
            .map(|(_, p)| p)
            .sum()
    }

    pub fn total(&self) -> f64 {
        self.probs.iter().sum()
    }
}
