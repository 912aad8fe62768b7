use gcsim_cli::config::ScenarioSelection;
use gcsim_cli::parse_config;
use proptest::prelude::*;

const KEYS: &[&str] = &[
    "cvsr.mu_r",
    "cvsr.n_ac",
    "cvsr.gap",
    "cvsr.fringing",
    "solver.dt",
    "solver.settle_cycles",
    "scenarios",
    "scenario.x",
    "sweep.steps",
    "sweep.i_dc_from",
    "output.dir",
    "bogus",
];

fn line() -> impl Strategy<Value = String> {
    prop_oneof![
        (prop::sample::select(KEYS), "[ -~]{0,12}").prop_map(|(k, v)| format!("{k} = {v}")),
        "[ -~]{0,24}",
        Just("# comment".to_string()),
        Just(String::new()),
    ]
}

proptest! {
    #[test]
    fn parse_is_total(text in "\\PC{0,200}") {
        let _ = parse_config(&text);
    }

    #[test]
    fn keyed_lines_are_total_and_located(lines in prop::collection::vec(line(), 0..12)) {
        let text = lines.join("\n");
        if let Err(e) = parse_config(&text) {
            prop_assert!(!e.diagnostics.is_empty());
            for d in &e.diagnostics {
                prop_assert!(d.line <= lines.len());
            }
        }
    }

    #[test]
    fn valid_overrides_round_trip(mu_r in 2.0f64..1e6, n_ac in 1u32..10_000, steps in 2usize..50) {
        let text = format!(
            "cvsr.mu_r = {mu_r}\ncvsr.n_ac = {n_ac}\nsweep.i_dc_from = 0\nsweep.i_dc_to = 1\nsweep.steps = {steps}\n"
        );
        let c = parse_config(&text).unwrap();
        prop_assert_eq!(c.cvsr.mu_r, mu_r);
        prop_assert_eq!(c.cvsr.n_ac, n_ac);
        prop_assert!(matches!(c.scenarios, ScenarioSelection::Sweep(ref s) if s.steps == steps));
        prop_assert_eq!(c.scenario_list().len(), steps);
    }
}
