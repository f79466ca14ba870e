use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::types::{Direction, Diversity, Granularity, RawRecord, Scope, Task, Template};
use crate::InstructizeError;

/// An ordered set of templates; lookups are scoped per dataset (fine) or per
/// task (coarse).
#[derive(Debug, Clone)]
pub struct Registry {
    templates: Vec<Template>,
}

impl Registry {
    pub fn new(templates: Vec<Template>) -> Result<Registry, InstructizeError> {
        for t in &templates {
            t.validate()?;
        }
        Ok(Registry { templates })
    }

    pub fn from_json(json: &str) -> Result<Registry, InstructizeError> {
        let templates: Vec<Template> = serde_json::from_str(json)?;
        Registry::new(templates)
    }

    pub fn templates(&self) -> &[Template] {
        &self.templates
    }

    /// Templates visible to a record at the requested granularity, in
    /// registry order.
    pub fn scoped(&self, record: &RawRecord, granularity: Granularity) -> Vec<&Template> {
        self.templates
            .iter()
            .filter(|t| match (&t.scope, granularity) {
                (Scope::Dataset(d), Granularity::Fine) => *d == record.dataset,
                (Scope::Task(task), Granularity::Coarse) => *task == record.task,
                _ => false,
            })
            .collect()
    }

    pub fn select_template(
        &self,
        record: &RawRecord,
        granularity: Granularity,
        diversity: Diversity,
        rng: &mut ChaCha8Rng,
    ) -> Result<&Template, InstructizeError> {
        let scoped = self.scoped(record, granularity);
        if scoped.is_empty() {
            return Err(InstructizeError::EmptyScope {
                dataset: record.dataset.clone(),
                task: record.task,
                granularity,
            });
        }
        Ok(match diversity {
            Diversity::Single => scoped[0],
            Diversity::Multi => scoped[rng.gen_range(0..scoped.len())],
            Diversity::MultiFlip => {
                let inverted: Vec<&&Template> = scoped
                    .iter()
                    .filter(|t| t.direction == Direction::Inverted)
                    .collect();
                let p = inverted.len() as f64 / scoped.len() as f64;
                if !inverted.is_empty() && rng.gen_bool(p) {
                    inverted[rng.gen_range(0..inverted.len())]
                } else {
                    let forward: Vec<&&Template> = scoped
                        .iter()
                        .filter(|t| t.direction == Direction::Forward)
                        .collect();
                    forward[rng.gen_range(0..forward.len())]
                }
            }
        })
    }
}

fn dataset(name: &str, body: &str, target: &str) -> Template {
    Template {
        scope: Scope::Dataset(name.into()),
        direction: Direction::Forward,
        body: body.into(),
        target: target.into(),
    }
}

fn task(t: Task, body: &str, target: &str) -> Template {
    Template {
        scope: Scope::Task(t),
        direction: Direction::Forward,
        body: body.into(),
        target: target.into(),
    }
}

const VQA_BODY: &str =
    "Human: Answer the question using a single word or phrase. {question} AI: {answer}";
const REC_BODY: &str =
    "Human: Provide the bounding box coordinate of the region this sentence describes: {phrase} AI: {bbox}";

/// The built-in per-dataset templates, one registry entry per table row.
/// Grounded-captioning rows for the referring-expression datasets sit after
/// their grounding rows, so `single` diversity picks grounding.
pub fn builtin_fine() -> Registry {
    Registry::new(vec![
        dataset("blipcapfilt", "AI: {caption}", "caption"),
        dataset("coyo100m", "AI: {caption}", "caption"),
        dataset("vqav2", VQA_BODY, "answer"),
        dataset("gqa", VQA_BODY, "answer"),
        dataset("ocrvqa", VQA_BODY, "answer"),
        dataset(
            "vsr",
            "Human: Answer the question using a single word or phrase. {question} Please answer yes or no. AI: {answer}",
            "answer",
        ),
        dataset(
            "scienceqa",
            "Human: Answer with the option's letter from the given choices directly. {question} Context: {context} There are several options: {option} AI: {answer}",
            "answer",
        ),
        dataset(
            "aokvqa",
            "Answer with the option's letter from the given choices directly. {question} There are several options: {option} AI: {answer}",
            "answer",
        ),
        dataset("refcoco", REC_BODY, "bbox"),
        dataset(
            "refcoco",
            "Human: Provide a description for the region {bbox}, utilizing positional words to refer to objects. Example: 'The large blue teddy bear next to the red balloon' AI: {phrase}",
            "phrase",
        ),
        dataset("refcoco+", REC_BODY, "bbox"),
        dataset(
            "refcoco+",
            "Human: Provide a description for the region {bbox}, focusing on the appearance of objects without using positional words. Example: 'The large blue teddy bear holding a red balloon.' AI: {phrase}",
            "phrase",
        ),
        dataset("refcocog", REC_BODY, "bbox"),
        dataset(
            "refcocog",
            "Human: Provide a description for the region {bbox}, using detailed and descriptive expressions to refer to objects. Example: 'The large blue teddy bear holding a red balloon with a joyful expression.' AI: {phrase}",
            "phrase",
        ),
        dataset("vg", REC_BODY, "bbox"),
        dataset(
            "vg",
            "Human: Provide a short description for this region: {bbox} AI: {phrase}",
            "phrase",
        ),
        dataset("llava150k", "Human: {instruction} AI: {response}", "response"),
        dataset("sharegpt", "Human: {instruction} AI: {response}", "response"),
    ])
    .expect("built-in templates are well-formed")
}

/// Task-scoped templates for coarse granularity: one shared template per
/// task, using only slots every dataset of the task carries.
pub fn builtin_coarse() -> Registry {
    Registry::new(vec![
        task(Task::Captioning, "AI: {caption}", "caption"),
        task(Task::VqaOpen, VQA_BODY, "answer"),
        task(
            Task::VqaMc,
            "Human: Answer with the option's letter from the given choices directly. {question} There are several options: {option} AI: {answer}",
            "answer",
        ),
        task(Task::Rec, REC_BODY, "bbox"),
        task(
            Task::Instruction,
            "Human: {instruction} AI: {response}",
            "response",
        ),
    ])
    .expect("built-in templates are well-formed")
}

/// Fine and coarse built-ins merged, so one registry serves either
/// granularity.
pub fn builtin() -> Registry {
    let mut templates = builtin_fine().templates.clone();
    templates.extend(builtin_coarse().templates.clone());
    Registry { templates }
}
