use chemnet_core::scenario::{run_golden, Golden};

#[test]
fn golden_scenarios_pass_for_several_seeds() {
    for g in Golden::ALL {
        for seed in [1, 2, 3, 17, 4242] {
            if let Err((trace, d)) = run_golden(g, seed) {
                let app: Vec<String> = trace
                    .lines()
                    .iter()
                    .filter(|l| !matches!(l.event, "GRADIENT" | "GATHER" | "DELIVER"))
                    .map(|l| l.to_string())
                    .collect();
                panic!("{g} seed {seed}: {d}\n{}", app.join("\n"));
            }
        }
    }
}
