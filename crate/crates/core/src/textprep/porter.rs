//! Porter (1980) suffix-stripping stemmer.
//!
//! Follows the original rule set: step 2 maps `abli -> able` and has no
//! `logi` rule. Words shorter than three letters are returned unchanged, as
//! are tokens containing anything other than ASCII lowercase letters.

pub fn stem(word: &str) -> String {
    if word.len() <= 2 || !word.bytes().all(|b| b.is_ascii_lowercase()) {
        return word.to_string();
    }
    let mut s = Stemmer { b: word.as_bytes().to_vec(), len: word.len(), stem: 0 };
    s.step1ab();
    if s.len > 1 {
        s.step1c();
        s.step2();
        s.step3();
        s.step4();
        s.step5();
    }
    s.b.truncate(s.len);
    // only ASCII letters were ever written
    String::from_utf8(s.b).expect("ascii")
}

struct Stemmer {
    b: Vec<u8>,
    /// Length of the current word.
    len: usize,
    /// Length of the stem left by the last successful `ends`.
    stem: usize,
}

impl Stemmer {
    fn cons(&self, i: usize) -> bool {
        match self.b[i] {
            b'a' | b'e' | b'i' | b'o' | b'u' => false,
            b'y' => i == 0 || !self.cons(i - 1),
            _ => true,
        }
    }

    /// Number of VC sequences in the first `n` letters.
    fn measure(&self, n: usize) -> usize {
        let mut count = 0;
        let mut i = 0;
        while i < n && self.cons(i) {
            i += 1;
        }
        loop {
            while i < n && !self.cons(i) {
                i += 1;
            }
            if i >= n {
                return count;
            }
            while i < n && self.cons(i) {
                i += 1;
            }
            count += 1;
        }
    }

    fn m(&self) -> usize {
        self.measure(self.stem)
    }

    fn vowel_in_stem(&self) -> bool {
        (0..self.stem).any(|i| !self.cons(i))
    }

    fn double_consonant(&self, i: usize) -> bool {
        i >= 1 && self.b[i] == self.b[i - 1] && self.cons(i)
    }

    /// consonant-vowel-consonant ending at i, last consonant not w, x or y.
    fn cvc(&self, i: usize) -> bool {
        if i < 2 || !self.cons(i) || self.cons(i - 1) || !self.cons(i - 2) {
            return false;
        }
        !matches!(self.b[i], b'w' | b'x' | b'y')
    }

    fn last(&self) -> u8 {
        self.b[self.len - 1]
    }

    fn penultimate(&self) -> Option<u8> {
        (self.len >= 2).then(|| self.b[self.len - 2])
    }

    fn ends(&mut self, suffix: &str) -> bool {
        let s = suffix.as_bytes();
        if s.len() > self.len || &self.b[self.len - s.len()..self.len] != s {
            return false;
        }
        self.stem = self.len - s.len();
        true
    }

    fn set_to(&mut self, s: &str) {
        self.b.truncate(self.stem);
        self.b.extend_from_slice(s.as_bytes());
        self.len = self.stem + s.len();
    }

    fn replace_if_measured(&mut self, s: &str) {
        if self.m() > 0 {
            self.set_to(s);
        }
    }

    fn step1ab(&mut self) {
        if self.last() == b's' {
            if self.ends("sses") {
                self.len -= 2;
            } else if self.ends("ies") {
                self.set_to("i");
            } else if self.penultimate() != Some(b's') {
                self.len -= 1;
            }
        }
        if self.ends("eed") {
            if self.m() > 0 {
                self.len -= 1;
            }
        } else if (self.ends("ed") || self.ends("ing")) && self.vowel_in_stem() {
            self.len = self.stem;
            if self.ends("at") {
                self.set_to("ate");
            } else if self.ends("bl") {
                self.set_to("ble");
            } else if self.ends("iz") {
                self.set_to("ize");
            } else if self.double_consonant(self.len - 1) {
                if !matches!(self.last(), b'l' | b's' | b'z') {
                    self.len -= 1;
                }
            } else {
                self.stem = self.len;
                if self.m() == 1 && self.cvc(self.len - 1) {
                    self.set_to("e");
                }
            }
        }
        self.b.truncate(self.len);
    }

    fn step1c(&mut self) {
        if self.ends("y") && self.vowel_in_stem() {
            let i = self.len - 1;
            self.b[i] = b'i';
        }
    }

    fn rules(&mut self, table: &[(&str, &str)]) {
        for (from, to) in table {
            if self.ends(from) {
                self.replace_if_measured(to);
                return;
            }
        }
    }

    fn step2(&mut self) {
        let table: &[(&str, &str)] = match self.penultimate() {
            Some(b'a') => &[("ational", "ate"), ("tional", "tion")],
            Some(b'c') => &[("enci", "ence"), ("anci", "ance")],
            Some(b'e') => &[("izer", "ize")],
            Some(b'l') => &[("abli", "able"), ("alli", "al"), ("entli", "ent"), ("eli", "e"), ("ousli", "ous")],
            Some(b'o') => &[("ization", "ize"), ("ation", "ate"), ("ator", "ate")],
            Some(b's') => &[("alism", "al"), ("iveness", "ive"), ("fulness", "ful"), ("ousness", "ous")],
            Some(b't') => &[("aliti", "al"), ("iviti", "ive"), ("biliti", "ble")],
            _ => return,
        };
        self.rules(table);
    }

    fn step3(&mut self) {
        let table: &[(&str, &str)] = match self.last() {
            b'e' => &[("icate", "ic"), ("ative", ""), ("alize", "al")],
            b'i' => &[("iciti", "ic")],
            b'l' => &[("ical", "ic"), ("ful", "")],
            b's' => &[("ness", "")],
            _ => return,
        };
        self.rules(table);
    }

    fn step4(&mut self) {
        let matched = match self.penultimate() {
            Some(b'a') => self.ends("al"),
            Some(b'c') => self.ends("ance") || self.ends("ence"),
            Some(b'e') => self.ends("er"),
            Some(b'i') => self.ends("ic"),
            Some(b'l') => self.ends("able") || self.ends("ible"),
            Some(b'n') => self.ends("ant") || self.ends("ement") || self.ends("ment") || self.ends("ent"),
            Some(b'o') => {
                (self.ends("ion") && self.stem > 0 && matches!(self.b[self.stem - 1], b's' | b't')) || self.ends("ou")
            }
            Some(b's') => self.ends("ism"),
            Some(b't') => self.ends("ate") || self.ends("iti"),
            Some(b'u') => self.ends("ous"),
            Some(b'v') => self.ends("ive"),
            Some(b'z') => self.ends("ize"),
            _ => false,
        };
        if matched && self.m() > 1 {
            self.len = self.stem;
        }
    }

    fn step5(&mut self) {
        if self.last() == b'e' {
            let a = self.measure(self.len - 1);
            if a > 1 || (a == 1 && !self.cvc(self.len - 2)) {
                self.len -= 1;
            }
        }
        if self.last() == b'l' && self.double_consonant(self.len - 1) && self.measure(self.len) > 1 {
            self.len -= 1;
        }
    }
}
