mod common;

use common::{golden, GOLDEN_TEMPLATES};
use mtkit::templates::{parse, render, PromptSpec, Shot, TemplateId, MAX_SHOTS};
use proptest::prelude::*;

#[test]
fn golden_files_match_byte_for_byte() {
    for name in GOLDEN_TEMPLATES {
        let (spec, expected) = golden(name);
        assert_eq!(spec.template.as_str(), name);
        let rendered = render(&spec).unwrap();
        assert_eq!(rendered.as_bytes(), expected.as_slice(), "{name}");
        assert_eq!(parse(&rendered).unwrap(), spec, "{name}");
    }
}

#[test]
fn zero_shot_example_from_the_docs() {
    let spec = PromptSpec {
        template: TemplateId::ZeroShot,
        source_language: "German".into(),
        target_language: "English".into(),
        source: "Hallo Welt".into(),
        shots: vec![],
    };
    assert_eq!(
        render(&spec).unwrap(),
        "Translate the source text from German to English.\nSource: Hallo Welt\nTarget:"
    );
}

#[test]
fn wrong_shot_counts_are_rejected() {
    let (mut spec, _) = golden("few_shot_2");
    spec.shots.clear();
    assert!(render(&spec).unwrap_err().to_string().starts_with("shot_count_mismatch"));
    let (mut spec, _) = golden("zero_shot");
    spec.shots.push(Shot {
        source: "a".into(),
        target: "b".into(),
    });
    assert!(render(&spec).is_err());
}

fn slot_text() -> impl Strategy<Value = String> {
    // Printable text without line breaks; a leading non-space keeps the
    // slot non-empty. The "Target:" filter mirrors the validation rule.
    "[A-Za-zÀ-ÿ0-9.,!?'\"-][A-Za-zÀ-ÿ0-9 .,:;!?'\"()-]{0,40}"
        .prop_filter("no label text", |s| !s.contains("Target:"))
}

fn language() -> impl Strategy<Value = String> {
    prop::sample::select(vec!["German", "English", "Chinese", "Portuguese", "Russian", "Old Norse"])
        .prop_map(String::from)
}

pub fn spec_strategy() -> impl Strategy<Value = PromptSpec> {
    let template = prop::sample::select(vec![
        TemplateId::ZeroShot,
        TemplateId::FewShot1,
        TemplateId::FewShot2,
        TemplateId::FewShot3,
    ]);
    (template, language(), language(), slot_text(), 1..=MAX_SHOTS).prop_flat_map(|(t, x, y, src, n)| {
        let n = if t == TemplateId::ZeroShot { 0 } else { n };
        prop::collection::vec((slot_text(), slot_text()), n).prop_map(move |shots| PromptSpec {
            template: t,
            source_language: x.clone(),
            target_language: y.clone(),
            source: src.clone(),
            shots: shots
                .into_iter()
                .map(|(source, target)| Shot { source, target })
                .collect(),
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn parse_inverts_render(spec in spec_strategy()) {
        let text = render(&spec).unwrap();
        prop_assert!(!text.ends_with('\n'));
        prop_assert!(text.matches("Target:").count() <= spec.shots.len() + 1);
        prop_assert_eq!(parse(&text).unwrap(), spec);
    }
}
