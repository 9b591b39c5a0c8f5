mod common;

use common::*;

fn check(hyp: &str, labeling_id: &str) {
    let bundle = case_study("hypmix.toml");
    let prompt = golden_prompt(&bundle, hyp, &labeling(labeling_id));
    let path = golden_path(hyp, labeling_id);
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::write(&path, &prompt).unwrap();
    }
    let expected = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    assert_eq!(prompt, expected, "{} drifted", path.display());
    if labeling_id == "A" {
        assert!(prompt.contains(table_sentence(hyp)), "{hyp}: initial sentence missing");
    } else {
        assert!(prompt.contains(table_stem(hyp)), "{hyp}/{labeling_id}: sentence stem missing");
        assert!(!prompt.contains("MEASURE-F1-X"), "{hyp}/{labeling_id}: labeling A leaked");
    }
}

#[test]
fn golden_prompts_match() {
    for hyp in GOLDEN_HYPOTHESES {
        for l in ["A", "B", "C"] {
            check(hyp, l);
        }
    }
}
