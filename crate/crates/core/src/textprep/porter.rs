//! Porter's 1980 suffix-stripping stemmer (steps 1a through 5b).
//!
//! Operates on lowercase ASCII words. Anything else (non-ASCII letters,
//! digits, words of length <= 2) is returned unchanged.

/// Stem a single lowercase word.
pub fn stem(word: &str) -> String {
    if word.len() <= 2 || !word.bytes().all(|b| b.is_ascii_lowercase()) {
        return word.to_string();
    }
    let mut w = Word {
        b: word.as_bytes().to_vec(),
    };
    w.step1a();
    w.step1b();
    w.step1c();
    w.step2();
    w.step3();
    w.step4();
    w.step5a();
    w.step5b();
    // only ASCII bytes were ever written
    String::from_utf8(w.b).expect("ascii")
}

struct Word {
    b: Vec<u8>,
}

const STEP2: &[(&str, &str)] = &[
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

const STEP3: &[(&str, &str)] = &[
    ("icate", "ic"),
    ("ative", ""),
    ("alize", "al"),
    ("iciti", "ic"),
    ("ical", "ic"),
    ("ful", ""),
    ("ness", ""),
];

const STEP4: &[&str] = &[
    "al", "ance", "ence", "er", "ic", "able", "ible", "ant", "ement", "ment", "ent", "ion", "ou",
    "ism", "ate", "iti", "ous", "ive", "ize",
];

impl Word {
    /// Is the letter at `i` a consonant? `y` is a consonant at the start or
    /// after a vowel.
    fn cons(&self, i: usize) -> bool {
        match self.b[i] {
            b'a' | b'e' | b'i' | b'o' | b'u' => false,
            b'y' => i == 0 || !self.cons(i - 1),
            _ => true,
        }
    }

    /// Measure m of the prefix `b[..len]`: the number of VC sequences.
    fn measure(&self, len: usize) -> usize {
        let mut m = 0;
        let mut i = 0;
        while i < len && self.cons(i) {
            i += 1;
        }
        while i < len {
            while i < len && !self.cons(i) {
                i += 1;
            }
            if i >= len {
                break;
            }
            m += 1;
            while i < len && self.cons(i) {
                i += 1;
            }
        }
        m
    }

    fn has_vowel(&self, len: usize) -> bool {
        (0..len).any(|i| !self.cons(i))
    }

    fn double_cons(&self, len: usize) -> bool {
        len >= 2 && self.b[len - 1] == self.b[len - 2] && self.cons(len - 1)
    }

    /// `*o`: prefix ends consonant-vowel-consonant, last not w, x or y.
    fn cvc(&self, len: usize) -> bool {
        if len < 3 || !self.cons(len - 1) || self.cons(len - 2) || !self.cons(len - 3) {
            return false;
        }
        !matches!(self.b[len - 1], b'w' | b'x' | b'y')
    }

    fn ends(&self, suffix: &str) -> bool {
        self.b.ends_with(suffix.as_bytes())
    }

    fn replace_suffix(&mut self, suffix_len: usize, with: &str) {
        let n = self.b.len() - suffix_len;
        self.b.truncate(n);
        self.b.extend_from_slice(with.as_bytes());
    }

    fn step1a(&mut self) {
        if self.ends("sses") {
            self.replace_suffix(4, "ss");
        } else if self.ends("ies") {
            self.replace_suffix(3, "i");
        } else if self.ends("ss") {
        } else if self.ends("s") {
            self.replace_suffix(1, "");
        }
    }

    fn step1b(&mut self) {
        let len = self.b.len();
        if self.ends("eed") {
            if self.measure(len - 3) > 0 {
                self.replace_suffix(3, "ee");
            }
            return;
        }
        let cut = if self.ends("ed") && self.has_vowel(len - 2) {
            2
        } else if self.ends("ing") && self.has_vowel(len - 3) {
            3
        } else {
            return;
        };
        self.replace_suffix(cut, "");
        let len = self.b.len();
        if self.ends("at") || self.ends("bl") || self.ends("iz") {
            self.b.push(b'e');
        } else if self.double_cons(len) && !matches!(self.b[len - 1], b'l' | b's' | b'z') {
            self.b.pop();
        } else if self.measure(len) == 1 && self.cvc(len) {
            self.b.push(b'e');
        }
    }

    fn step1c(&mut self) {
        let len = self.b.len();
        if self.ends("y") && self.has_vowel(len - 1) {
            self.b[len - 1] = b'i';
        }
    }

    /// Longest matching suffix from `rules`; replace when m(stem) > 0.
    fn apply_rules(&mut self, rules: &[(&str, &str)]) {
        let best = rules
            .iter()
            .filter(|(s, _)| self.ends(s))
            .max_by_key(|(s, _)| s.len());
        if let Some((suffix, with)) = best {
            if self.measure(self.b.len() - suffix.len()) > 0 {
                self.replace_suffix(suffix.len(), with);
            }
        }
    }

    fn step2(&mut self) {
        self.apply_rules(STEP2);
    }

    fn step3(&mut self) {
        self.apply_rules(STEP3);
    }

    fn step4(&mut self) {
        let Some(suffix) = STEP4
            .iter()
            .filter(|s| self.ends(s))
            .max_by_key(|s| s.len())
        else {
            return;
        };
        let stem_len = self.b.len() - suffix.len();
        if self.measure(stem_len) <= 1 {
            return;
        }
        if *suffix == "ion" && !(stem_len > 0 && matches!(self.b[stem_len - 1], b's' | b't')) {
            return;
        }
        self.b.truncate(stem_len);
    }

    fn step5a(&mut self) {
        if !self.ends("e") {
            return;
        }
        let stem_len = self.b.len() - 1;
        let m = self.measure(stem_len);
        if m > 1 || (m == 1 && !self.cvc(stem_len)) {
            self.b.truncate(stem_len);
        }
    }

    fn step5b(&mut self) {
        let len = self.b.len();
        if self.measure(len) > 1 && self.double_cons(len) && self.b[len - 1] == b'l' {
            self.b.pop();
        }
    }
}
