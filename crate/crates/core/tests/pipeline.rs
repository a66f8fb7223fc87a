use prunemeta::io;
use prunemeta::objective::{collect_activation_stats, synthetic_calibration};
use prunemeta::search::{exhaustive_search, random_search, RandomSearchParams};
use prunemeta::*;

fn tiny() -> EvalContext {
    let config = ModelConfig { vocab_size: 16, d_model: 8, n_layers: 1, n_heads: 2, d_ff: 8, max_seq_len: 8 };
    let weights = init_model(config, 11).unwrap();
    let calib = synthetic_calibration(16, 2, 6, 5);
    EvalContext::new(weights, calib, SparsitySpec::n_m(2, 4).unwrap()).unwrap()
}

#[test]
fn searches_agree_with_enumeration() {
    let ctx = tiny();
    let table = exhaustive_search(&ctx, 2).unwrap();
    assert_eq!(table.len(), 2401);
    assert!(table.windows(2).all(|w| w[0].l_div <= w[1].l_div));

    let full = random_search(&ctx, &RandomSearchParams { budget: 2401, seed: 1, without_replacement: true, jobs: 1 })
        .unwrap();
    assert_eq!(full.best_l_div.to_bits(), table[0].l_div.to_bits());
    assert_eq!(full.distinct_configs_evaluated, 2401);

    let nsga = nsga2_search(&ctx, &SearchParams { budget: 120, seed: 4, ..Default::default() }).unwrap();
    assert!(nsga.evaluations_used <= 120);
    assert!(nsga.best_l_div >= table[0].l_div);
    let logged = table.iter().find(|r| r.config == nsga.best_config).unwrap();
    assert_eq!(logged.l_div.to_bits(), nsga.best_l_div.to_bits());
}

#[test]
fn files_round_trip_through_the_pipeline() {
    let ctx = tiny();
    let dir = tempfile::tempdir().unwrap();
    let (m, c, s) = (dir.path().join("m.opsh"), dir.path().join("c.jsonl"), dir.path().join("s.json"));
    io::write_model(&m, ctx.weights()).unwrap();
    io::write_calib(&c, ctx.calib()).unwrap();
    let weights = io::read_model(&m).unwrap();
    let calib = io::read_calib(&c).unwrap();
    assert_eq!(&weights, ctx.weights());
    let stats = collect_activation_stats(&weights, &calib).unwrap();
    io::write_stats(&s, &stats).unwrap();
    assert_eq!(io::read_stats(&s).unwrap(), stats);

    let kind = preset("optishear-l3-gsm8k").unwrap();
    let (_, masks) = prune_model(&weights, &stats, &kind, ctx.spec()).unwrap();
    let l_div = evaluate_config(&ctx, &kind).unwrap().l_div;
    assert!(l_div > 0.0 && l_div.is_finite());
    for mask in masks.values() {
        assert_eq!(mask.kept() * 2, mask.rows() * mask.cols());
    }
}
