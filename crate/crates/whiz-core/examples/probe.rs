// temporary probe: belief calibration at tiny source counts
use whiz_core::finders::{em_mle_factfinder, whiz_claim_factfinder};
use whiz_core::metrics::rmse_beliefs;
use whiz_core::synth::{gen_scenario, P1Mode, ScenarioConfig};

fn main() {
    let cfg = ScenarioConfig {
        n_sources: 2,
        n_claims: 50,
        claims_per_source: 10,
        true_claim_ratio: 0.5,
        p1_mode: P1Mode::Fixed(0.9),
        p2_range: (0.5, 1.0),
        demand_ratio: 1.0,
        base_observations: 10,
        seed: 12345,
    };
    let (graph, truth) = gen_scenario::<f64>(&cfg).unwrap();
    let labels = truth.claim_labels.unwrap();
    for (name, scores) in [
        ("whiz(3,2,50)", whiz_claim_factfinder(&graph, 3.0, 2.0, 50.0, 200, 1e-8).unwrap()),
        ("whiz(3,2,200)", whiz_claim_factfinder(&graph, 3.0, 2.0, 200.0, 200, 1e-8).unwrap()),
        ("em_mle", em_mle_factfinder(&graph, 0.5, 200, 1e-8).unwrap()),
    ] {
        let r = rmse_beliefs(&scores.claim_belief, &labels).unwrap();
        let mut asserted: Vec<(usize, f64, bool)> = graph
            .assertions()
            .iter()
            .map(|a| (a.claim, scores.claim_belief[a.claim], labels[a.claim]))
            .collect();
        asserted.sort_by(|a, b| a.0.cmp(&b.0));
        asserted.dedup_by_key(|t| t.0);
        println!("{name}: rmse={r:.4} iters={} a={:?}", scores.iterations, &scores.source_trust);
        for (c, b, l) in asserted.iter().take(12) {
            println!("   claim {c}: belief {b:.3} label {l}");
        }
    }
}
