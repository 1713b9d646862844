//! Skip-gram behaviour on a generated substitution corpus: "rise" and
//! "rebound" fill the same slot of one template, the other seed words fill
//! the slot of a second template with a disjoint context vocabulary.

use newsmotion::embedding::{cosine, rank_by_seed_similarity, train_skipgram, SkipGramConfig};
use newsmotion::lexicon::default_seeds;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn corpus() -> Vec<Vec<String>> {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let names: Vec<String> = (0..30).map(|i| format!("firm{i}")).collect();
    let up_ctx: Vec<String> = (0..40).map(|i| format!("upctx{i}")).collect();
    let down_ctx: Vec<String> = (0..40).map(|i| format!("downctx{i}")).collect();
    let other_seeds: Vec<String> = default_seeds().into_iter().filter(|s| s != "rise").collect();
    (0..10_000)
        .map(|_| {
            let (slot, ctx) = if rng.gen_bool(0.5) {
                let w = if rng.gen_bool(0.5) { "rise" } else { "rebound" };
                (w.to_string(), &up_ctx)
            } else {
                (other_seeds[rng.gen_range(0..other_seeds.len())].clone(), &down_ctx)
            };
            let mut s = vec![names[rng.gen_range(0..names.len())].clone(), "shares".into(), slot];
            s.extend((0..3).map(|_| ctx[rng.gen_range(0..ctx.len())].clone()));
            s
        })
        .collect()
}

#[test]
fn substitutable_tokens_end_up_close() {
    let table = train_skipgram(&corpus(), &SkipGramConfig::default()).unwrap();
    let c = cosine(table.vector("rise").unwrap(), table.vector("rebound").unwrap()).unwrap();
    assert!(c > 0.9, "cosine(rise, rebound) = {c}");
}

#[test]
fn rebound_ranks_near_the_top_for_seed_rise() {
    let table = train_skipgram(&corpus(), &SkipGramConfig::default()).unwrap();
    let seeds = default_seeds();
    let ranked = rank_by_seed_similarity(&table, &seeds).unwrap();
    let non_seed: Vec<&str> = ranked
        .iter()
        .map(|(w, _)| w.as_str())
        .filter(|w| !seeds.iter().any(|s| s == w))
        .collect();
    let pos = non_seed.iter().position(|&w| w == "rebound").unwrap();
    assert!(
        pos < 20,
        "rebound at non-seed rank {pos}: {:?}",
        &non_seed[..25.min(non_seed.len())]
    );
    assert!(ranked.iter().filter(|(w, _)| seeds.contains(w)).all(|(_, s)| *s == 1.0));
}

#[test]
fn training_is_bit_reproducible() {
    let cfg = SkipGramConfig {
        epochs: 1,
        ..Default::default()
    };
    let corpus = corpus();
    assert_eq!(
        train_skipgram(&corpus, &cfg).unwrap(),
        train_skipgram(&corpus, &cfg).unwrap()
    );
}
