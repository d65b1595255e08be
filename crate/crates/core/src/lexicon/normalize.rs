//! Lexicon entry normalization and Penn Treebank style tokenization.

use std::sync::OnceLock;

use regex::Regex;

/// Characters stripped from the end of an entry.
const TRAILING: &[char] = &['.', ',', ';', ':', '/', '\\', '?'];

/// Removes parenthesized spans, strips trailing punctuation, tokenizes and
/// lower-cases. An empty result means the entry should be skipped.
pub fn normalize_entry(raw: &str) -> Vec<String> {
    let without_parens = remove_parenthesized(raw);
    let stripped = without_parens
        .trim()
        .trim_end_matches(|c: char| TRAILING.contains(&c) || c.is_whitespace());
    ptb_tokenize(stripped).into_iter().map(|t| t.to_lowercase()).collect()
}

fn remove_parenthesized(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut depth = 0usize;
    for c in s.chars() {
        match c {
            '(' => depth += 1,
            ')' if depth > 0 => depth -= 1,
            ')' => {}
            _ if depth == 0 => out.push(c),
            _ => {}
        }
    }
    out
}

struct Rule {
    re: Regex,
    rep: &'static str,
}

fn rules() -> &'static [Rule] {
    static RULES: OnceLock<Vec<Rule>> = OnceLock::new();
    RULES.get_or_init(|| {
        let table: &[(&str, &str)] = &[
            // opening quotes
            (r#"^""#, "`` "),
            (r#"([ (\[{<])""#, "$1 `` "),
            // punctuation
            (r"\.\.\.", " ... "),
            (r"[,;:@#$%&]", " $0 "),
            (r#"([^.])([.])([\])}>"']*)[ \t]*$"#, "$1 $2$3 "),
            (r"[?!]", " $0 "),
            (r"[\]\[(){}<>]", " $0 "),
            (r"--", " -- "),
            (r"$", " "),
            (r"^", " "),
            // closing quotes and clitics
            (r#"""#, " '' "),
            (r"([^'])' ", "$1 ' "),
            (r"'([sSmMdD]) ", " '$1 "),
            (r"'ll ", " 'll "),
            (r"'re ", " 're "),
            (r"'ve ", " 've "),
            (r"n't ", " n't "),
            (r"'LL ", " 'LL "),
            (r"'RE ", " 'RE "),
            (r"'VE ", " 'VE "),
            (r"N'T ", " N'T "),
            (r" ([Cc])annot ", " ${1}an not "),
            (r" ([Dd])'ye ", " ${1}' ye "),
            (r" ([Gg])imme ", " ${1}im me "),
            (r" ([Gg])onna ", " ${1}on na "),
            (r" ([Gg])otta ", " ${1}ot ta "),
            (r" ([Ll])emme ", " ${1}em me "),
            (r" ([Mm])ore'n ", " ${1}ore 'n "),
            (r" '([Tt])is ", " '$1 is "),
            (r" '([Tt])was ", " '$1 was "),
            (r" ([Ww])anna ", " ${1}an na "),
        ];
        table
            .iter()
            .map(|(p, rep)| Rule {
                re: Regex::new(p).expect("static tokenizer pattern"),
                rep,
            })
            .collect()
    })
}

/// Penn Treebank tokenizer (the classic sed rule set).
pub fn ptb_tokenize(text: &str) -> Vec<String> {
    let mut s = text.to_string();
    for rule in rules() {
        s = rule.re.replace_all(&s, rule.rep).into_owned();
    }
    s.split_whitespace().map(str::to_string).collect()
}
