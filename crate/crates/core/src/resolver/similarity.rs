//! String similarity, phonetic keys and blocking keys for entity resolution.

use crate::error::{Error, Result};

/// Jaro similarity over Unicode scalar values.
pub fn jaro(a: &str, b: &str) -> f64 {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    if a.is_empty() && b.is_empty() {
        return 1.0;
    }
    if a.is_empty() || b.is_empty() {
        return 0.0;
    }
    let window = (a.len().max(b.len()) / 2).saturating_sub(1);
    let mut a_hit = vec![false; a.len()];
    let mut b_hit = vec![false; b.len()];
    let mut matches = 0usize;
    for (i, ca) in a.iter().enumerate() {
        let lo = i.saturating_sub(window);
        let hi = (i + window + 1).min(b.len());
        for j in lo..hi {
            if !b_hit[j] && b[j] == *ca {
                a_hit[i] = true;
                b_hit[j] = true;
                matches += 1;
                break;
            }
        }
    }
    if matches == 0 {
        return 0.0;
    }
    let mut transpositions = 0usize;
    let mut j = 0usize;
    for (i, ca) in a.iter().enumerate() {
        if !a_hit[i] {
            continue;
        }
        while !b_hit[j] {
            j += 1;
        }
        if *ca != b[j] {
            transpositions += 1;
        }
        j += 1;
    }
    let m = matches as f64;
    (m / a.len() as f64 + m / b.len() as f64 + (m - (transpositions / 2) as f64) / m) / 3.0
}

/// Jaro-Winkler with prefix scale 0.1 over at most four leading characters,
/// applied when the Jaro score exceeds 0.7.
pub fn jaro_winkler(a: &str, b: &str) -> f64 {
    let j = jaro(a, b);
    if j <= 0.7 {
        return j;
    }
    let prefix = a.chars().zip(b.chars()).take(4).take_while(|(x, y)| x == y).count();
    j + 0.1 * prefix as f64 * (1.0 - j)
}

/// Case-insensitive Jaro-Winkler.
pub fn name_similarity(a: &str, b: &str) -> f64 {
    jaro_winkler(&a.to_lowercase(), &b.to_lowercase())
}

fn soundex_digit(c: char) -> Option<char> {
    Some(match c {
        'B' | 'F' | 'P' | 'V' => '1',
        'C' | 'G' | 'J' | 'K' | 'Q' | 'S' | 'X' | 'Z' => '2',
        'D' | 'T' => '3',
        'L' => '4',
        'M' | 'N' => '5',
        'R' => '6',
        _ => return None,
    })
}

/// American Soundex of an uppercase ASCII-letter word.
fn soundex(word: &[char]) -> String {
    let mut out = String::with_capacity(4);
    out.push(word[0]);
    let mut last = soundex_digit(word[0]);
    for &c in &word[1..] {
        let d = soundex_digit(c);
        match d {
            Some(d) if Some(d) != last => {
                out.push(d);
                if out.len() == 4 {
                    break;
                }
                last = Some(d);
            }
            Some(_) => {}
            // H and W do not separate equal codes; vowels do.
            None if c == 'H' || c == 'W' => {}
            None => last = None,
        }
    }
    while out.len() < 4 {
        out.push('0');
    }
    out
}

/// Uppercase, rewrite PH→F, CK→K, KN→N, WR→R left to right, then Soundex per
/// token. Multi-token names yield space-separated codes.
pub fn phonetic_key(name: &str) -> Result<String> {
    let mut codes = Vec::new();
    for token in name.split(|c: char| !c.is_ascii_alphabetic()).filter(|t| !t.is_empty()) {
        let upper: Vec<char> = token.to_ascii_uppercase().chars().collect();
        let mut rewritten = Vec::with_capacity(upper.len());
        let mut i = 0;
        while i < upper.len() {
            let pair = (upper[i], upper.get(i + 1).copied());
            let replacement = match pair {
                ('P', Some('H')) => Some('F'),
                ('C', Some('K')) => Some('K'),
                ('K', Some('N')) => Some('N'),
                ('W', Some('R')) => Some('R'),
                _ => None,
            };
            match replacement {
                Some(r) => {
                    rewritten.push(r);
                    i += 2;
                }
                None => {
                    rewritten.push(upper[i]);
                    i += 1;
                }
            }
        }
        codes.push(soundex(&rewritten));
    }
    if codes.is_empty() {
        return Err(Error::EmptyName);
    }
    Ok(codes.join(" "))
}

/// Token and three-character-prefix keys used to block fuzzy comparison.
pub fn blocking_keys(name: &str) -> Vec<String> {
    let mut keys = Vec::new();
    for token in name.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()) {
        let t = token.to_lowercase();
        let prefix: String = t.chars().take(3).collect();
        keys.push(format!("p:{prefix}"));
        keys.push(format!("t:{t}"));
    }
    keys.sort();
    keys.dedup();
    keys
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn textbook_jaro_winkler_values() {
        assert!((jaro_winkler("MARTHA", "MARHTA") - 0.961_111).abs() < 1e-6);
        assert!((jaro_winkler("DWAYNE", "DUANE") - 0.84).abs() < 1e-6);
        assert!((jaro_winkler("DIXON", "DICKSONX") - 0.813_333).abs() < 1e-6);
        assert_eq!(jaro_winkler("", ""), 1.0);
        assert_eq!(jaro_winkler("abc", ""), 0.0);
    }

    #[test]
    fn phonetic_examples() {
        assert_eq!(phonetic_key("Phillip").unwrap(), "F410");
        assert_eq!(phonetic_key("Filip").unwrap(), "F410");
        assert_eq!(phonetic_key("Knight").unwrap(), "N230");
        assert_eq!(phonetic_key("Night").unwrap(), "N230");
        assert_eq!(phonetic_key("A").unwrap(), "A000");
        assert_eq!(phonetic_key("Robert").unwrap(), "R163");
        assert_eq!(phonetic_key("Rupert").unwrap(), "R163");
        assert_eq!(phonetic_key("Ashcraft").unwrap(), "A261");
        assert_eq!(phonetic_key("Tymczak").unwrap(), "T522");
        assert_eq!(phonetic_key("Pfister").unwrap(), "P236");
        assert_eq!(phonetic_key("John Smith").unwrap(), "J500 S530");
        assert!(matches!(phonetic_key("  42 "), Err(Error::EmptyName)));
    }

    #[test]
    fn digraphs_apply_left_to_right() {
        // "CKN": CK→K consumes the C and K, N stays.
        assert_eq!(phonetic_key("ACKN").unwrap(), "A250");
        assert_eq!(phonetic_key("AKN").unwrap(), "A500");
        assert_eq!(phonetic_key("Wright").unwrap(), phonetic_key("Right").unwrap());
    }

    #[test]
    fn blocking_shares_tokens_and_prefixes() {
        let a = blocking_keys("John Smith");
        assert!(a.contains(&"t:john".to_string()));
        assert!(a.contains(&"p:smi".to_string()));
        let c = blocking_keys("Alice Wu");
        assert!(a.iter().all(|k| !c.contains(k)));
    }
}
