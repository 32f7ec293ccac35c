use crate::numcore::Rng;

/// Ordered target statistics under a seeded permutation, with the global
/// label mean as prior and prior weight 1.
pub fn ordered_target_encode(codes: &[u32], labels: &[f64], seed: u64) -> Vec<f64> {
    let n = codes.len().min(labels.len());
    let prior = if n == 0 {
        0.0
    } else {
        labels[..n].iter().sum::<f64>() / n as f64
    };
    let perm = Rng::new(seed).permutation(n);
    ordered_target_encode_with(codes, labels, &perm, prior, 1.0)
}

/// Row `perm[k]` is encoded from rows `perm[..k]` of the same category:
/// `(Σ labels + a·prior) / (count + a)`.
pub fn ordered_target_encode_with(codes: &[u32], labels: &[f64], perm: &[usize], prior: f64, a: f64) -> Vec<f64> {
    let mut sums: std::collections::HashMap<u32, (f64, f64)> = std::collections::HashMap::new();
    let mut out = vec![prior; codes.len()];
    for &row in perm {
        let c = codes[row];
        let (s, k) = sums.entry(c).or_insert((0.0, 0.0));
        out[row] = (*s + a * prior) / (*k + a);
        *s += labels[row];
        *k += 1.0;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_recurrence() {
        let enc = ordered_target_encode_with(&[0, 0, 0], &[1.0, 1.0, 1.0], &[0, 1, 2], 0.5, 1.0);
        assert_eq!(enc[0], 0.5);
        assert_eq!(enc[1], 0.75);
        assert!((enc[2] - 5.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn first_row_gets_prior() {
        let labels = [1.0, 0.0, 1.0, 1.0];
        let perm = Rng::new(4).permutation(4);
        let enc = ordered_target_encode(&[2, 2, 2, 2], &labels, 4);
        assert_eq!(enc[perm[0]], 0.75);
    }

    #[test]
    fn categories_are_independent() {
        let perm = [3, 0, 2, 1, 4, 5];
        let codes = [0, 1, 0, 1, 0, 1];
        let labels = [1.0, 0.0, 0.0, 1.0, 1.0, 1.0];
        let both = ordered_target_encode_with(&codes, &labels, &perm, 0.5, 1.0);
        // changing category-1 labels leaves category-0 codes untouched
        let mut other = labels;
        other[1] = 1.0;
        other[3] = 0.0;
        let changed = ordered_target_encode_with(&codes, &other, &perm, 0.5, 1.0);
        for i in [0, 2, 4] {
            assert_eq!(both[i], changed[i]);
        }
    }
}
