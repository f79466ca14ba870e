use std::collections::{BTreeMap, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use instructize::{
    builtin, builtin_coarse, builtin_fine, image_seed, invert, merge_multiturn, normalize_target,
    read_records, render, write_examples, Direction, Diversity, Granularity, InstructizeError,
    RawRecord, Registry, Scope, SlotValue, Task, Template,
};

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn full_record(dataset: &str, task: Task) -> RawRecord {
    let mut slots = BTreeMap::new();
    slots.insert(
        "question".into(),
        SlotValue::Text("What color is the large ball?".into()),
    );
    slots.insert("answer".into(), SlotValue::Text("red".into()));
    slots.insert(
        "caption".into(),
        SlotValue::Text("A dog runs on the beach.".into()),
    );
    slots.insert(
        "phrase".into(),
        SlotValue::Text("the large blue teddy bear".into()),
    );
    slots.insert("bbox".into(), SlotValue::BBox([0.1, 0.2, 0.3, 0.4]));
    slots.insert(
        "context".into(),
        SlotValue::Text("A diagram of the water cycle.".into()),
    );
    slots.insert(
        "option".into(),
        SlotValue::Text("(A) red (B) blue (C) green".into()),
    );
    slots.insert(
        "instruction".into(),
        SlotValue::Text("Describe the image in one sentence.".into()),
    );
    slots.insert(
        "response".into(),
        SlotValue::Text("A dog chases a ball along the shore.".into()),
    );
    RawRecord {
        id: format!("{dataset}-0"),
        dataset: dataset.into(),
        task,
        image_id: "img0".into(),
        slots,
    }
}

fn vqa_record(id: &str, image: &str, question: &str, answer: &str) -> RawRecord {
    let mut slots = BTreeMap::new();
    slots.insert("question".into(), SlotValue::Text(question.into()));
    slots.insert("answer".into(), SlotValue::Text(answer.into()));
    RawRecord {
        id: id.into(),
        dataset: "vqav2".into(),
        task: Task::VqaOpen,
        image_id: image.into(),
        slots,
    }
}

// Rendering is deterministic and byte-exact against the golden file, which
// instantiates every built-in template on one synthetic record.

#[test]
fn every_builtin_template_matches_the_golden_file() {
    let golden = include_str!("golden_renders.txt");
    let mut blocks = Vec::new();
    let mut lines = golden.lines().filter(|l| !l.starts_with('#') || l.starts_with("###"));
    while let Some(header) = lines.next() {
        let mut parts = header.strip_prefix("### ").expect("header line").split(' ');
        let dataset = parts.next().unwrap().to_string();
        let index: usize = parts.next().unwrap().parse().unwrap();
        let input = lines.next().expect("input line").to_string();
        let target = lines.next().expect("target line").to_string();
        blocks.push((dataset, index, input, target));
    }

    let registry = builtin_fine();
    let mut per_dataset: BTreeMap<String, usize> = BTreeMap::new();
    let mut rendered = Vec::new();
    for t in registry.templates() {
        let Scope::Dataset(name) = &t.scope else {
            panic!("fine registry is dataset-scoped")
        };
        let idx = per_dataset.entry(name.clone()).or_insert(0);
        let task = match name.as_str() {
            "blipcapfilt" | "coyo100m" => Task::Captioning,
            "vqav2" | "gqa" | "ocrvqa" | "vsr" => Task::VqaOpen,
            "scienceqa" | "aokvqa" => Task::VqaMc,
            "llava150k" | "sharegpt" => Task::Instruction,
            _ => Task::Rec,
        };
        let (input, target) = render(t, &full_record(name, task)).unwrap();
        rendered.push((name.clone(), *idx, input, target));
        *idx += 1;
    }
    assert_eq!(rendered.len(), blocks.len(), "template count drifted");
    for (got, want) in rendered.iter().zip(&blocks) {
        assert_eq!(got, want, "render diverged for {} #{}", want.0, want.1);
    }
}

#[test]
fn rendering_rejects_missing_slots_by_name() {
    let registry = builtin_fine();
    let mut rec = vqa_record("r", "img", "Why?", "because");
    rec.slots.remove("answer");
    let template = registry
        .select_template(&rec, Granularity::Fine, Diversity::Single, &mut rng(0))
        .unwrap();
    let err = render(template, &rec).err().unwrap();
    match err {
        InstructizeError::MissingSlot { slot, .. } => assert_eq!(slot, "answer"),
        other => panic!("unexpected error {other}"),
    }
}

#[test]
fn malformed_boxes_are_rejected() {
    let mut rec = full_record("refcoco", Task::Rec);
    rec.slots
        .insert("bbox".into(), SlotValue::BBox([0.5, 0.2, 0.3, 0.4]));
    assert!(matches!(
        rec.validate().err().unwrap(),
        InstructizeError::BadBBox { .. }
    ));
}

// Template selection.

#[test]
fn single_diversity_is_rng_independent() {
    let registry = builtin_fine();
    let rec = full_record("gqa", Task::VqaOpen);
    let a = registry
        .select_template(&rec, Granularity::Fine, Diversity::Single, &mut rng(1))
        .unwrap();
    let b = registry
        .select_template(&rec, Granularity::Fine, Diversity::Single, &mut rng(999))
        .unwrap();
    assert_eq!(a, b);
    assert!(a.body.contains("single word or phrase"));
}

#[test]
fn coarse_granularity_collapses_referring_datasets_fine_keeps_them_distinct() {
    let registry = builtin();
    let datasets = ["refcoco", "refcoco+", "refcocog"];
    let coarse: Vec<&Template> = datasets
        .iter()
        .map(|d| {
            registry
                .select_template(
                    &full_record(d, Task::Rec),
                    Granularity::Coarse,
                    Diversity::Single,
                    &mut rng(2),
                )
                .unwrap()
        })
        .collect();
    assert_eq!(coarse[0], coarse[1]);
    assert_eq!(coarse[1], coarse[2]);

    // Fine: the grounded-captioning bodies (index 1 per dataset) differ.
    let bodies: HashSet<&str> = datasets
        .iter()
        .map(|d| {
            registry.scoped(&full_record(d, Task::Rec), Granularity::Fine)[1]
                .body
                .as_str()
        })
        .collect();
    assert_eq!(bodies.len(), 3);
}

#[test]
fn unknown_scope_is_rejected() {
    let registry = builtin_fine();
    let rec = full_record("nonexistent", Task::VqaOpen);
    assert!(matches!(
        registry
            .select_template(&rec, Granularity::Fine, Diversity::Single, &mut rng(3))
            .err()
            .unwrap(),
        InstructizeError::EmptyScope { .. }
    ));
}

#[test]
fn multi_flip_picks_inverted_templates_at_their_registry_fraction() {
    // 10 templates for one dataset, 3 inverted.
    let mut templates = Vec::new();
    for i in 0..10 {
        templates.push(Template {
            scope: Scope::Dataset("d".into()),
            direction: if i < 3 {
                Direction::Inverted
            } else {
                Direction::Forward
            },
            body: format!("Human: variant {i} {{question}} AI: {{answer}}"),
            target: "answer".into(),
        });
    }
    let registry = Registry::new(templates).unwrap();
    let mut rec = vqa_record("r", "img", "Why?", "because");
    rec.dataset = "d".into();
    let mut r = rng(4);
    let n = 100_000;
    let mut inverted = 0usize;
    for _ in 0..n {
        let t = registry
            .select_template(&rec, Granularity::Fine, Diversity::MultiFlip, &mut r)
            .unwrap();
        if t.direction == Direction::Inverted {
            inverted += 1;
        }
    }
    let frac = inverted as f64 / n as f64;
    assert!((frac - 0.3).abs() < 0.01, "inverted fraction {frac}");
}

#[test]
fn multi_diversity_reaches_every_template_in_scope() {
    let registry = builtin_fine();
    let rec = full_record("refcoco", Task::Rec);
    let mut r = rng(5);
    let mut seen = HashSet::new();
    for _ in 0..100 {
        let t = registry
            .select_template(&rec, Granularity::Fine, Diversity::Multi, &mut r)
            .unwrap();
        seen.insert(t.body.clone());
    }
    assert_eq!(seen.len(), 2);
}

// Inversion.

#[test]
fn vqa_inversion_swaps_question_and_answer_and_is_an_involution() {
    let rec = vqa_record("r", "img", "What color?", "red");
    let inv = invert(&rec).unwrap();
    assert_eq!(inv.slots["question"], SlotValue::Text("red".into()));
    assert_eq!(inv.slots["answer"], SlotValue::Text("What color?".into()));
    let back = invert(&inv).unwrap();
    assert_eq!(back.slots, rec.slots);
}

#[test]
fn captioning_inversion_needs_an_auxiliary_slot() {
    let mut slots = BTreeMap::new();
    slots.insert("caption".into(), SlotValue::Text("A dog.".into()));
    let rec = RawRecord {
        id: "c".into(),
        dataset: "coyo100m".into(),
        task: Task::Captioning,
        image_id: "img".into(),
        slots,
    };
    assert!(matches!(
        invert(&rec).err().unwrap(),
        InstructizeError::MissingSlot { .. }
    ));
}

#[test]
fn only_open_vqa_and_captioning_invert() {
    let rec = full_record("refcoco", Task::Rec);
    assert!(matches!(
        invert(&rec).err().unwrap(),
        InstructizeError::NotInvertible { task: Task::Rec }
    ));
}

// Multi-turn merging.

#[test]
fn dedup_keeps_the_first_turn_per_normalized_target() {
    let registry = builtin_fine();
    let records = vec![
        vqa_record("a", "img", "Is it day?", "yes"),
        vqa_record("b", "img", "Is it bright?", "Yes"),
        vqa_record("c", "img", "Is it night?", "no"),
    ];
    let ex = merge_multiturn(
        &registry,
        &records,
        Granularity::Fine,
        Diversity::Single,
        10,
        true,
        &mut rng(6),
    )
    .unwrap();
    let targets: Vec<&str> = ex.turns.iter().map(|(_, t)| t.as_str()).collect();
    assert_eq!(targets, ["yes", "no"]);
    assert_eq!(ex.provenance, ["a", "c"]);

    let ex = merge_multiturn(
        &registry,
        &records,
        Granularity::Fine,
        Diversity::Single,
        10,
        false,
        &mut rng(6),
    )
    .unwrap();
    assert_eq!(ex.turns.len(), 3);
}

#[test]
fn max_turns_truncates_with_matching_provenance() {
    let registry = builtin_fine();
    let records: Vec<RawRecord> = (0..7)
        .map(|i| vqa_record(&format!("r{i}"), "img", &format!("Q{i}?"), &format!("A{i}")))
        .collect();
    let ex = merge_multiturn(
        &registry,
        &records,
        Granularity::Fine,
        Diversity::Single,
        5,
        false,
        &mut rng(7),
    )
    .unwrap();
    assert_eq!(ex.turns.len(), 5);
    assert_eq!(ex.provenance.len(), 5);
    assert_eq!(ex.provenance, ["r0", "r1", "r2", "r3", "r4"]);
}

#[test]
fn merging_rejects_empty_or_mixed_image_batches() {
    let registry = builtin_fine();
    assert!(matches!(
        merge_multiturn(
            &registry,
            &[],
            Granularity::Fine,
            Diversity::Single,
            5,
            false,
            &mut rng(8)
        )
        .err()
        .unwrap(),
        InstructizeError::NoRecords
    ));
    let records = vec![
        vqa_record("a", "img1", "Q?", "A"),
        vqa_record("b", "img2", "Q?", "B"),
    ];
    assert!(matches!(
        merge_multiturn(
            &registry,
            &records,
            Granularity::Fine,
            Diversity::Single,
            5,
            false,
            &mut rng(9)
        )
        .err()
        .unwrap(),
        InstructizeError::MixedImages { .. }
    ));
}

#[test]
fn dedup_never_leaves_repeated_normalized_targets() {
    let registry = builtin_fine();
    let answers = [
        "yes", "Yes", " YES ", "no", "No", "blue", "  blue ", "sky  blue", "Sky Blue", "42",
    ];
    let mut r = rng(10);
    for _ in 0..10_000 {
        let n = r.gen_range(1..8);
        let records: Vec<RawRecord> = (0..n)
            .map(|i| {
                let a = answers[r.gen_range(0..answers.len())];
                vqa_record(&format!("r{i}"), "img", "Q?", a)
            })
            .collect();
        let ex = merge_multiturn(
            &registry,
            &records,
            Granularity::Fine,
            Diversity::Single,
            usize::MAX,
            true,
            &mut r,
        )
        .unwrap();
        let mut seen = HashSet::new();
        for (_, t) in &ex.turns {
            assert!(seen.insert(normalize_target(t)), "duplicate target {t:?}");
        }
    }
}

// Plumbing.

#[test]
fn jsonl_roundtrip_and_seed_stream_are_stable() {
    let records = vec![
        vqa_record("a", "img1", "Q1?", "A1"),
        vqa_record("b", "img2", "Q2?", "A2"),
    ];
    let mut jsonl = Vec::new();
    for rec in &records {
        serde_json::to_writer(&mut jsonl, rec).unwrap();
        jsonl.push(b'\n');
    }
    let back = read_records(&jsonl[..]).unwrap();
    assert_eq!(back.len(), 2);
    assert_eq!(back[1].slots["answer"], SlotValue::Text("A2".into()));

    let registry = builtin_fine();
    let ex = merge_multiturn(
        &registry,
        &back[..1],
        Granularity::Fine,
        Diversity::Single,
        1,
        false,
        &mut rng(11),
    )
    .unwrap();
    let mut out = Vec::new();
    write_examples(&mut out, &[ex]).unwrap();
    assert!(std::str::from_utf8(&out).unwrap().contains("img1"));

    assert_eq!(image_seed(7, "img1"), image_seed(7, "img1"));
    assert_ne!(image_seed(7, "img1"), image_seed(7, "img2"));
    assert_ne!(image_seed(7, "img1"), image_seed(8, "img1"));
}

#[test]
fn bbox_slot_values_deserialize_from_json_arrays() {
    let rec: RawRecord = serde_json::from_str(
        r#"{"dataset":"refcoco","task":"rec","image_id":"i","slots":{"phrase":"a cat","bbox":[0.1,0.2,0.3,0.4]}}"#,
    )
    .unwrap();
    assert_eq!(rec.slots["bbox"], SlotValue::BBox([0.1, 0.2, 0.3, 0.4]));
    assert_eq!(rec.slots["bbox"].render(), "[0.100, 0.200, 0.300, 0.400]");
}
