//! Unit-cost Levenshtein distance, used by the decoding-penalty loss and by
//! the retrieval dictionary correction.

/// Minimal number of single-symbol insertions, deletions and substitutions
/// turning `a` into `b`. Two-row dynamic program.
pub fn edit_distance<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    if a.is_empty() {
        return b.len();
    }
    if b.is_empty() {
        return a.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0usize; b.len() + 1];
    for (i, ai) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, bj) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ai != bj);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Edit distance over Unicode scalar values.
pub fn edit_distance_str(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    edit_distance(&a, &b)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kitten_sitting_is_three() {
        assert_eq!(edit_distance_str("kitten", "sitting"), 3);
    }

    #[test]
    fn identical_strings_are_zero() {
        for s in ["", "a", "abcdef"] {
            assert_eq!(edit_distance_str(s, s), 0);
        }
    }

    #[test]
    fn pure_insertions() {
        assert_eq!(edit_distance_str("", "abc"), 3);
        assert_eq!(edit_distance_str("abc", ""), 3);
    }

    #[test]
    fn works_on_label_slices() {
        assert_eq!(edit_distance(&[1usize, 2, 3], &[1, 3]), 1);
        assert_eq!(edit_distance(&[1usize], &[2]), 1);
    }
}
