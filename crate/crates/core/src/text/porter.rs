//! The original Porter (1980) suffix-stripping algorithm.
//!
//! Only lowercase ASCII alphabetic words are stemmed; anything else (hashtags,
//! mentions, emoticons, URLs, contractions, numbers) is returned unchanged.

/// Stem a single word.
pub fn porter_stem(word: &str) -> String {
    if word.len() <= 2 || !word.bytes().all(|b| b.is_ascii_lowercase()) {
        return word.to_string();
    }
    let mut w = Word(word.as_bytes().to_vec());
    w.step1a();
    w.step1b();
    w.step1c();
    w.step2();
    w.step3();
    w.step4();
    w.step5a();
    w.step5b();
    // Only ASCII bytes were ever written.
    String::from_utf8(w.0).expect("ascii")
}

/// Step 2 alone, exposed so individual rules can be checked in isolation.
pub fn porter_step2(word: &str) -> String {
    let mut w = Word(word.as_bytes().to_vec());
    w.step2();
    String::from_utf8(w.0).expect("ascii")
}

struct Word(Vec<u8>);

impl Word {
    fn is_cons(&self, i: usize) -> bool {
        match self.0[i] {
            b'a' | b'e' | b'i' | b'o' | b'u' => false,
            b'y' => i == 0 || !self.is_cons(i - 1),
            _ => true,
        }
    }

    /// Number of VC sequences in the first `len` letters.
    fn measure(&self, len: usize) -> usize {
        let mut i = 0;
        while i < len && self.is_cons(i) {
            i += 1;
        }
        let mut m = 0;
        loop {
            while i < len && !self.is_cons(i) {
                i += 1;
            }
            if i >= len {
                return m;
            }
            while i < len && self.is_cons(i) {
                i += 1;
            }
            m += 1;
        }
    }

    fn has_vowel(&self, len: usize) -> bool {
        (0..len).any(|i| !self.is_cons(i))
    }

    /// Stem of length `len` ends with a double consonant.
    fn double_cons(&self, len: usize) -> bool {
        len >= 2 && self.0[len - 1] == self.0[len - 2] && self.is_cons(len - 1)
    }

    /// Stem of length `len` ends consonant-vowel-consonant, last not w, x or y.
    fn cvc(&self, len: usize) -> bool {
        if len < 3 {
            return false;
        }
        let i = len - 1;
        self.is_cons(i - 2)
            && !self.is_cons(i - 1)
            && self.is_cons(i)
            && !matches!(self.0[i], b'w' | b'x' | b'y')
    }

    fn ends(&self, suffix: &str) -> bool {
        self.0.ends_with(suffix.as_bytes())
    }

    fn stem_len(&self, suffix: &str) -> usize {
        self.0.len() - suffix.len()
    }

    fn replace(&mut self, suffix: &str, with: &str) {
        let n = self.stem_len(suffix);
        self.0.truncate(n);
        self.0.extend_from_slice(with.as_bytes());
    }

    /// Apply the first (longest) matching rule if the stem's measure exceeds `min_m`.
    fn apply_rules(&mut self, rules: &[(&str, &str)], min_m: usize) {
        for (suffix, with) in rules {
            if self.ends(suffix) {
                if self.measure(self.stem_len(suffix)) > min_m {
                    self.replace(suffix, with);
                }
                return;
            }
        }
    }

    fn step1a(&mut self) {
        if self.ends("sses") {
            self.replace("sses", "ss");
        } else if self.ends("ies") {
            self.replace("ies", "i");
        } else if self.ends("ss") {
        } else if self.ends("s") {
            self.replace("s", "");
        }
    }

    fn step1b(&mut self) {
        if self.ends("eed") {
            if self.measure(self.stem_len("eed")) > 0 {
                self.replace("eed", "ee");
            }
            return;
        }
        let removed = if self.ends("ed") && self.has_vowel(self.stem_len("ed")) {
            self.replace("ed", "");
            true
        } else if self.ends("ing") && self.has_vowel(self.stem_len("ing")) {
            self.replace("ing", "");
            true
        } else {
            false
        };
        if !removed {
            return;
        }
        if self.ends("at") {
            self.replace("at", "ate");
        } else if self.ends("bl") {
            self.replace("bl", "ble");
        } else if self.ends("iz") {
            self.replace("iz", "ize");
        } else if self.double_cons(self.0.len()) {
            if !matches!(self.0[self.0.len() - 1], b'l' | b's' | b'z') {
                self.0.pop();
            }
        } else if self.measure(self.0.len()) == 1 && self.cvc(self.0.len()) {
            self.0.push(b'e');
        }
    }

    fn step1c(&mut self) {
        if self.ends("y") && self.has_vowel(self.stem_len("y")) {
            self.replace("y", "i");
        }
    }

    fn step2(&mut self) {
        const RULES: &[(&str, &str)] = &[
            ("ational", "ate"),
            ("tional", "tion"),
            ("enci", "ence"),
            ("anci", "ance"),
            ("izer", "ize"),
            ("abli", "able"),
            ("alli", "al"),
            ("entli", "ent"),
            ("eli", "e"),
            ("ousli", "ous"),
            ("ization", "ize"),
            ("ation", "ate"),
            ("ator", "ate"),
            ("alism", "al"),
            ("iveness", "ive"),
            ("fulness", "ful"),
            ("ousness", "ous"),
            ("aliti", "al"),
            ("iviti", "ive"),
            ("biliti", "ble"),
        ];
        self.apply_rules(RULES, 0);
    }

    fn step3(&mut self) {
        const RULES: &[(&str, &str)] = &[
            ("icate", "ic"),
            ("ative", ""),
            ("alize", "al"),
            ("iciti", "ic"),
            ("ical", "ic"),
            ("ful", ""),
            ("ness", ""),
        ];
        self.apply_rules(RULES, 0);
    }

    fn step4(&mut self) {
        const SUFFIXES: &[&str] = &[
            "al", "ance", "ence", "er", "ic", "able", "ible", "ant", "ement", "ment", "ent",
            "ion", "ou", "ism", "ate", "iti", "ous", "ive", "ize",
        ];
        // Longest match wins; "ement" must be tried before "ment" and "ent".
        let Some(suffix) = SUFFIXES
            .iter()
            .filter(|s| self.ends(s))
            .max_by_key(|s| s.len())
        else {
            return;
        };
        let n = self.stem_len(suffix);
        if self.measure(n) <= 1 {
            return;
        }
        if *suffix == "ion" && !(n > 0 && matches!(self.0[n - 1], b's' | b't')) {
            return;
        }
        self.0.truncate(n);
    }

    fn step5a(&mut self) {
        if !self.ends("e") {
            return;
        }
        let n = self.stem_len("e");
        let m = self.measure(n);
        if m > 1 || (m == 1 && !self.cvc(n)) {
            self.0.truncate(n);
        }
    }

    fn step5b(&mut self) {
        let n = self.0.len();
        if self.measure(n) > 1 && self.double_cons(n) && self.0[n - 1] == b'l' {
            self.0.pop();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn step1_rules() {
        assert_eq!(porter_stem("caresses"), "caress");
        assert_eq!(porter_stem("ponies"), "poni");
        assert_eq!(porter_stem("ties"), "ti");
        assert_eq!(porter_stem("caress"), "caress");
        assert_eq!(porter_stem("cats"), "cat");
        assert_eq!(porter_stem("feed"), "feed");
        assert_eq!(porter_stem("agreed"), "agre");
        assert_eq!(porter_stem("plastered"), "plaster");
        assert_eq!(porter_stem("motoring"), "motor");
        assert_eq!(porter_stem("sing"), "sing");
        assert_eq!(porter_stem("conflated"), "conflat");
        assert_eq!(porter_stem("hopping"), "hop");
        assert_eq!(porter_stem("falling"), "fall");
        assert_eq!(porter_stem("filing"), "file");
        assert_eq!(porter_stem("happy"), "happi");
        assert_eq!(porter_stem("sky"), "sky");
    }

    #[test]
    fn step2_in_isolation() {
        assert_eq!(porter_step2("relational"), "relate");
        assert_eq!(porter_step2("conditional"), "condition");
        assert_eq!(porter_step2("rational"), "rational");
        assert_eq!(porter_step2("digitizer"), "digitize");
        assert_eq!(porter_step2("vietnamization"), "vietnamize");
    }

    #[test]
    fn full_algorithm_reference_outputs() {
        // Pairs from the reference vocabulary distributed with the algorithm.
        let cases = [
            ("relational", "relat"),
            ("generalizations", "gener"),
            ("oscillators", "oscil"),
            ("triplicate", "triplic"),
            ("hopeful", "hope"),
            ("goodness", "good"),
            ("revival", "reviv"),
            ("adjustable", "adjust"),
            ("replacement", "replac"),
            ("adoption", "adopt"),
            ("controlling", "control"),
            ("rolling", "roll"),
            ("depression", "depress"),
            ("depressed", "depress"),
            ("crying", "cry"),
        ];
        for (word, stem) in cases {
            assert_eq!(porter_stem(word), stem, "{word}");
        }
    }

    #[test]
    fn non_alphabetic_passes_through() {
        for tok in ["#depression", "@friend", ":-(", "i'm", "http://t.co/x", "2020", "Cats"] {
            assert_eq!(porter_stem(tok), tok);
        }
    }
}
