mod support;

use inetcep::query::samples;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn engine_agrees_with_oracle_on_random_traces() {
    support::engine_matches_oracle(7, 40, 200).unwrap();
}

#[test]
fn batching_does_not_change_results() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for q in samples::ALL {
        let trace = support::random_trace(&mut rng, &support::sources_of(q), 300);
        let a = support::engine_emissions(&mut ChaCha8Rng::seed_from_u64(1), q, &trace);
        let b = support::engine_emissions(&mut ChaCha8Rng::seed_from_u64(2), q, &trace);
        assert_eq!(a, b, "{q}");
    }
}
