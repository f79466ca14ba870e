use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Captioning,
    VqaOpen,
    VqaMc,
    Rec,
    Instruction,
}

/// A slot value: free text, or a normalized [x_min, y_min, x_max, y_max] box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SlotValue {
    BBox([f64; 4]),
    Text(String),
}

impl SlotValue {
    /// Rendered form: boxes print with 3 decimal places.
    pub fn render(&self) -> String {
        match self {
            SlotValue::Text(s) => s.clone(),
            SlotValue::BBox([x0, y0, x1, y1]) => {
                format!("[{x0:.3}, {y0:.3}, {x1:.3}, {y1:.3}]")
            }
        }
    }
}

/// One raw task record as it arrives from a dataset dump.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RawRecord {
    #[serde(default)]
    pub id: String,
    pub dataset: String,
    pub task: Task,
    pub image_id: String,
    pub slots: BTreeMap<String, SlotValue>,
}

impl RawRecord {
    /// Boxes must be normalized with ordered corners.
    pub fn validate(&self) -> Result<(), crate::InstructizeError> {
        for (name, v) in &self.slots {
            if let SlotValue::BBox([x0, y0, x1, y1]) = v {
                let inside = [x0, y0, x1, y1].iter().all(|c| (0.0..=1.0).contains(*c));
                if !inside || x0 > x1 || y0 > y1 {
                    return Err(crate::InstructizeError::BadBBox {
                        slot: name.clone(),
                        bbox: [*x0, *y0, *x1, *y1],
                    });
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    Dataset(String),
    Task(Task),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Forward,
    Inverted,
}

/// A prompt template. The body holds {slot} placeholders; everything after
/// the final "AI:" is the target segment and must be exactly the target slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Template {
    pub scope: Scope,
    pub direction: Direction,
    pub body: String,
    pub target: String,
}

impl Template {
    pub fn validate(&self) -> Result<(), crate::InstructizeError> {
        let tail = format!("AI: {{{}}}", self.target);
        if !self.body.ends_with(&tail) {
            return Err(crate::InstructizeError::BadTemplate(format!(
                "body must end with \"{tail}\""
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Granularity {
    /// One template set per dataset.
    Fine,
    /// One template set shared by all datasets of a task.
    Coarse,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Diversity {
    /// Always the scope's first forward template.
    Single,
    /// Uniform among the scope's templates.
    Multi,
    /// Like multi, but an inverted template is chosen with probability
    /// (#inverted / #total) and the record's slot roles are swapped.
    MultiFlip,
}

/// A rendered, possibly multi-turn training example.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InstructionExample {
    pub image_id: String,
    /// (input text, target text) per turn.
    pub turns: Vec<(String, String)>,
    /// Source record ids, one per kept turn.
    pub provenance: Vec<String>,
}

/// Dedup key: lowercased, whitespace-collapsed target text.
pub fn normalize_target(s: &str) -> String {
    s.to_lowercase().split_whitespace().collect::<Vec<_>>().join(" ")
}
