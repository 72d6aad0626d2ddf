//! Fixtures shared by the benchmarks.

use illdeath::simulate::scenario;
use illdeath::{generate_dataset, ObservedRecord};

/// Observed records of one replication of a named scenario.
pub fn records(name: &str, seed: u64) -> Vec<ObservedRecord> {
    let cfg = scenario(name).expect("known scenario").with_seed(seed);
    generate_dataset(&cfg).expect("valid scenario").records
}

#[cfg(test)]
mod tests {
    #[test]
    fn fixture_sizes() {
        assert_eq!(super::records("A", 1).len(), 1000);
        assert_eq!(super::records("R", 1).len(), 400);
    }
}
