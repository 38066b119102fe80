use mimic_core::ontology::Ontology;
use mimic_core::recognizer::{builtin_actions, match_actions, ActionInstance};
use mimic_core::scene::{analyze_initial, DEFAULT_INIT_WINDOW};
use mimic_core::synthgen::{builtin_templates, compile, generate, NoiseModel};

fn key(i: &ActionInstance) -> (String, String, u64, u64) {
    (i.action.clone(), i.bindings.to_string(), i.start, i.end)
}

#[test]
fn clean_traces_recognize_exactly() {
    let o = Ontology::builtin();
    let defs = builtin_actions(false);
    for t in builtin_templates() {
        for seed in 0..40 {
            let s = compile(&t, seed, &o).unwrap();
            let (trace, labels) = generate(&s, &NoiseModel::clean()).unwrap();
            let scene = analyze_initial(&trace, &o, DEFAULT_INIT_WINDOW).unwrap();
            let got = match_actions(&trace, &scene, &o, &s.thresholds, &defs).unwrap();
            let want: Vec<_> = labels.instances.iter().map(key).collect();
            let have: Vec<_> = got.instances.iter().map(key).collect();
            assert_eq!(have, want, "{} seed {seed}", t.name);
        }
    }
}

#[test]
fn clean_traces_recognize_exactly_across_th_n() {
    let o = Ontology::builtin();
    let defs = builtin_actions(false);
    for th_n in [1, 2, 3, 8, 12] {
        for mut t in builtin_templates() {
            t.thresholds.th_n = Some(th_n);
            for seed in 0..4 {
                let s = compile(&t, seed, &o).unwrap();
                let (trace, labels) = generate(&s, &NoiseModel::clean()).unwrap();
                let scene = analyze_initial(&trace, &o, DEFAULT_INIT_WINDOW).unwrap();
                let got = match_actions(&trace, &scene, &o, &s.thresholds, &defs).unwrap();
                let want: Vec<_> = labels.instances.iter().map(key).collect();
                let have: Vec<_> = got.instances.iter().map(key).collect();
                assert_eq!(have, want, "{} th_n {th_n} seed {seed}", t.name);
            }
        }
    }
}

#[test]
fn clean_corpus_report_is_all_ones() {
    use mimic_core::report::{evaluate_corpus, render_text, CorpusItem, ReportOptions};
    let o = Ontology::builtin();
    let items: Vec<CorpusItem> = builtin_templates()
        .iter()
        .enumerate()
        .map(|(k, t)| {
            let s = compile(t, k as u64, &o).unwrap();
            let (trace, labels) = generate(&s, &NoiseModel::clean()).unwrap();
            CorpusItem { id: format!("{k}"), activity: t.activity.clone(), trace, labels }
        })
        .collect();
    let (report, _) = evaluate_corpus(&items, &o, &builtin_actions(false), &ReportOptions::default()).unwrap();
    println!("{}", render_text(&report));
    for t in report.tables() {
        for (r, c, rate) in t.rates() {
            assert_eq!(rate, 1.0, "{} {r} {c}", t.name);
        }
    }
    assert_eq!(report.precision(), 1.0);
    assert_eq!(report.recall(), 1.0);
}
