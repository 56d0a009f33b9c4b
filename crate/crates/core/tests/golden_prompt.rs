//! The rendered default prompt is pinned byte-for-byte. Set `FEATSEL_BLESS=1`
//! to rewrite the golden file after an intentional template change.

use std::path::PathBuf;

use featsel_core::prompting::build_prompt;
use featsel_core::{Category, FeatureCatalog, FeatureRecord, Requirement, SelectionConfig, SelectionState};

fn golden_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name)
}

fn check(name: &str, rendered: &str) {
    let path = golden_path(name);
    if std::env::var_os("FEATSEL_BLESS").is_some() {
        std::fs::write(&path, rendered).unwrap();
    }
    let expected = std::fs::read_to_string(&path).unwrap();
    assert_eq!(rendered, expected, "prompt drifted from {}", path.display());
}

fn catalog() -> FeatureCatalog {
    FeatureCatalog::new(vec![
        FeatureRecord::new("user_age_days", "Days since the account was created.")
            .with_group("account")
            .with_category(Category::Dense)
            .with_number("importance", 0.42),
        FeatureRecord::new("ctr_7d", "Click-through rate over the trailing seven days,\nsmoothed.")
            .with_group("engagement")
            .with_category(Category::Float)
            .with_number("coverage", 0.97)
            .with_number("importance", 0.8),
        FeatureRecord::new("last_topic_ids", "Identifiers of recently viewed topics.")
            .with_category(Category::Sparse),
    ])
    .unwrap()
}

#[test]
fn first_step_prompt() {
    let state = SelectionState::new(catalog().names());
    let prompt = build_prompt(&state, &catalog(), &SelectionConfig::default()).unwrap();
    check("first_step.txt", &prompt.rendered);
}

#[test]
fn later_step_prompt_with_requirement() {
    let mut state = SelectionState::new(vec!["user_age_days".into(), "last_topic_ids".into()]);
    state.selected.push("ctr_7d".into());
    let config = SelectionConfig {
        requirements: vec![Requirement::group_consolidation()],
        max_desc_chars: 20,
        ..SelectionConfig::default()
    };
    let prompt = build_prompt(&state, &catalog(), &config).unwrap();
    check("later_step_grouped.txt", &prompt.rendered);
}
