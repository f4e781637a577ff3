use reviewmine_core::classify::{parse_label_response, Label, LabelSet};

fn expected(spec: &str) -> LabelSet {
    LabelSet::from_labels(spec.split(',').map(|l| match l {
        "feature_request" => Label::FeatureRequest,
        "problem_report" => Label::ProblemReport,
        "irrelevant" => Label::Irrelevant,
        other => panic!("unknown label {other}"),
    }))
}

#[test]
fn recovers_every_fixture_response() {
    let fixture = include_str!("../../../fixtures/label_responses.tsv");
    let mut recovered = 0;
    let mut total = 0;
    for line in fixture.lines() {
        let (labels, response) = line.split_once('\t').unwrap();
        total += 1;
        match parse_label_response(response) {
            Ok(set) if set == expected(labels) => recovered += 1,
            other => eprintln!("mismatch for {response:?}: {other:?}"),
        }
    }
    assert_eq!(total, 30);
    assert_eq!(recovered, 30);
}
