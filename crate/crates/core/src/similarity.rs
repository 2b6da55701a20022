//! Ratcliff/Obershelp "gestalt" similarity, the ratio `2*M / (|a| + |b|)`
//! where `M` counts characters in recursively found longest common blocks.

fn longest_common_block(a: &[char], b: &[char]) -> (usize, usize, usize) {
    // (start in a, start in b, length); earliest block in `a` wins ties, then earliest in `b`
    let mut best = (0, 0, 0);
    let mut prev = vec![0usize; b.len() + 1];
    for i in 0..a.len() {
        let mut cur = vec![0usize; b.len() + 1];
        for j in 0..b.len() {
            if a[i] == b[j] {
                cur[j + 1] = prev[j] + 1;
                let len = cur[j + 1];
                if len > best.2 {
                    best = (i + 1 - len, j + 1 - len, len);
                }
            }
        }
        prev = cur;
    }
    best
}

fn matching_chars(a: &[char], b: &[char]) -> usize {
    let (i, j, len) = longest_common_block(a, b);
    if len == 0 {
        return 0;
    }
    len + matching_chars(&a[..i], &b[..j]) + matching_chars(&a[i + len..], &b[j + len..])
}

pub fn ratio(a: &str, b: &str) -> f64 {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let total = a.len() + b.len();
    if total == 0 {
        return 1.0;
    }
    2.0 * matching_chars(&a, &b) as f64 / total as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_ratios() {
        assert_eq!(ratio("abc", "abc"), 1.0);
        assert_eq!(ratio("abc", "xyz"), 0.0);
        assert_eq!(ratio("", ""), 1.0);
        // "output" is a 6-char block inside "output-format": 12 / 19
        assert!((ratio("output", "output-format") - 12.0 / 19.0).abs() < 1e-12);
        assert!((ratio("output", "output format/style") - 12.0 / 25.0).abs() < 1e-12);
        // blocks "ab" then "d": 2*3/8
        assert!((ratio("abcd", "abxd") - 0.75).abs() < 1e-12);
    }

    #[test]
    fn symmetric_on_simple_inputs() {
        for (a, b) in [("kitten", "sitting"), ("context", "contxt"), ("role", "profile/role")] {
            assert!((ratio(a, b) - ratio(b, a)).abs() < 1e-12);
        }
    }
}
