//! Text normalization: mojibake repair, emoji and invisible-character removal,
//! canonical spaces and dashes, and one spacing convention around quotes and colons.
//!
//! Quote glyphs are kept as found. Only the spacing around them changes.

use std::collections::BTreeMap;

use serde::Serialize;
use unicode_normalization::UnicodeNormalization;

/// Per-call accounting of what [`normalize_text`] changed.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct NormalizationReport {
    /// Input length in chars.
    pub input_len: usize,
    /// Output length in chars.
    pub output_len: usize,
    pub replacements: BTreeMap<&'static str, usize>,
}

impl NormalizationReport {
    fn bump(&mut self, rule: &'static str, n: usize) {
        if n > 0 {
            *self.replacements.entry(rule).or_default() += n;
        }
    }

    pub fn total_replacements(&self) -> usize {
        self.replacements.values().sum()
    }
}

// cp1252 glyphs occupying 0x80..=0x9F.
const CP1252_HIGH: [(char, u8); 27] = [
    ('€', 0x80),
    ('‚', 0x82),
    ('ƒ', 0x83),
    ('„', 0x84),
    ('…', 0x85),
    ('†', 0x86),
    ('‡', 0x87),
    ('ˆ', 0x88),
    ('‰', 0x89),
    ('Š', 0x8A),
    ('‹', 0x8B),
    ('Œ', 0x8C),
    ('Ž', 0x8E),
    ('‘', 0x91),
    ('’', 0x92),
    ('“', 0x93),
    ('”', 0x94),
    ('•', 0x95),
    ('–', 0x96),
    ('—', 0x97),
    ('˜', 0x98),
    ('™', 0x99),
    ('š', 0x9A),
    ('›', 0x9B),
    ('œ', 0x9C),
    ('ž', 0x9E),
    ('Ÿ', 0x9F),
];

/// Byte a char would have had if UTF-8 bytes had been decoded as Latin-1 or cp1252.
fn single_byte(c: char) -> Option<u8> {
    let cp = c as u32;
    if cp <= 0xFF {
        return Some(cp as u8);
    }
    CP1252_HIGH.iter().find(|(g, _)| *g == c).map(|(_, b)| *b)
}

fn continuation_len(lead: u8) -> Option<usize> {
    match lead {
        0xC2..=0xDF => Some(1),
        0xE0..=0xEF => Some(2),
        0xF0..=0xF4 => Some(3),
        _ => None,
    }
}

/// Repaired chars must land in blocks that real mojibake decodes to.
fn plausible_repair(c: char) -> bool {
    matches!(c as u32,
        0x00A0..=0x024F
        | 0x1E00..=0x1EFF
        | 0x2000..=0x206F
        | 0x20A0..=0x214F
        | 0x2190..=0x21FF
        | 0x2600..=0x27BF
        | 0x1F000..=0x1FAFF)
}

fn fix_encoding_once(s: &str) -> (String, usize) {
    let chars: Vec<char> = s.chars().collect();
    let mut out = String::with_capacity(s.len());
    let mut fixes = 0;
    let mut i = 0;
    while i < chars.len() {
        if let Some(lead) = single_byte(chars[i]).filter(|b| *b >= 0x80) {
            if let Some(n) = continuation_len(lead) {
                if i + n < chars.len() {
                    let mut bytes = vec![lead];
                    let ok = chars[i + 1..=i + n].iter().all(|&c| match single_byte(c) {
                        Some(b @ 0x80..=0xBF) => {
                            bytes.push(b);
                            true
                        }
                        _ => false,
                    });
                    if ok {
                        if let Ok(decoded) = std::str::from_utf8(&bytes) {
                            if decoded.chars().all(plausible_repair) {
                                out.push_str(decoded);
                                fixes += 1;
                                i += n + 1;
                                continue;
                            }
                        }
                    }
                }
            }
        }
        out.push(chars[i]);
        i += 1;
    }
    (out, fixes)
}

fn fix_encoding_counted(raw: &str) -> (String, usize) {
    let mut cur = raw.to_owned();
    let mut total = 0;
    // Each round peels one layer of double encoding and strictly shortens the text.
    loop {
        let (next, n) = fix_encoding_once(&cur);
        if n == 0 {
            break;
        }
        total += n;
        cur = next;
    }
    (cur, total)
}

/// Repairs UTF-8 text that was decoded as Latin-1/cp1252 somewhere upstream.
pub fn fix_encoding(raw: &str) -> String {
    fix_encoding_counted(raw).0
}

fn is_invisible(c: char) -> bool {
    matches!(c as u32,
        // format characters
        0x00AD | 0x0600..=0x0605 | 0x061C | 0x06DD | 0x070F | 0x0890..=0x0891 | 0x08E2
        | 0x180E | 0x200B..=0x200F | 0x202A..=0x202E | 0x2060..=0x2064 | 0x2066..=0x206F
        | 0xFEFF | 0xFFF9..=0xFFFB | 0x110BD | 0x110CD | 0x13430..=0x1343F
        | 0x1BCA0..=0x1BCA3 | 0x1D173..=0x1D17A | 0xE0001 | 0xE0020..=0xE007F
        // remaining default-ignorables
        | 0x034F | 0x115F..=0x1160 | 0x17B4..=0x17B5 | 0x180B..=0x180D | 0x180F
        | 0x3164 | 0xFE00..=0xFE0F | 0xFFA0 | 0xFFF0..=0xFFF8 | 0xE0000..=0xE0FFF)
}

fn is_emoji(c: char) -> bool {
    matches!(c as u32,
        0x1F000..=0x1FAFF
        | 0x2600..=0x275A
        | 0x2761..=0x2767
        | 0x2776..=0x27BF
        | 0x231A..=0x231B | 0x2328 | 0x23CF | 0x23E9..=0x23F3 | 0x23F8..=0x23FA
        | 0x2B05..=0x2B07 | 0x2B1B..=0x2B1C | 0x2B50 | 0x2B55
        | 0x20E3 | 0x3030 | 0x303D | 0x3297 | 0x3299)
}

fn is_space_variant(c: char) -> bool {
    matches!(
        c,
        '\t' | '\u{000B}' | '\u{000C}' | '\u{00A0}' | '\u{1680}' | '\u{2000}'
            ..='\u{200A}' | '\u{202F}' | '\u{205F}' | '\u{3000}'
    )
}

fn is_dash_variant(c: char) -> bool {
    matches!(
        c,
        '\u{058A}' | '\u{2010}'
            ..='\u{2015}' | '\u{2212}' | '\u{2E3A}' | '\u{2E3B}' | '\u{FE58}' | '\u{FE63}' | '\u{FF0D}'
    )
}

fn is_line_break(c: char) -> bool {
    matches!(c, '\n' | '\r' | '\u{0085}' | '\u{2028}' | '\u{2029}')
}

/// Maps one char class at a time; emoji runs become a space only when they glue two words.
fn map_chars(s: &str, report: &mut NormalizationReport) -> String {
    let chars: Vec<char> = s.chars().collect();
    let mut out = String::with_capacity(s.len());
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c == '\r' && chars.get(i + 1) == Some(&'\n') {
            i += 1;
            continue;
        }
        if is_emoji(c) {
            let start = i;
            while i < chars.len() && (is_emoji(chars[i]) || is_invisible(chars[i])) {
                i += 1;
            }
            report.bump("emoji", i - start);
            let before = out.chars().last().is_some_and(char::is_alphanumeric);
            let after = chars.get(i).is_some_and(|c| c.is_alphanumeric());
            if before && after {
                out.push(' ');
            }
            continue;
        }
        if is_line_break(c) {
            if c != '\n' {
                report.bump("line_break", 1);
            }
            out.push('\n');
        } else if is_space_variant(c) {
            report.bump("space", 1);
            out.push(' ');
        } else if is_dash_variant(c) {
            report.bump("dash", 1);
            out.push('-');
        } else if is_invisible(c) {
            report.bump("invisible", 1);
        } else if c.is_control() {
            report.bump("control", 1);
        } else {
            out.push(c);
        }
        i += 1;
    }
    out
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum QuoteRole {
    Open,
    Close,
}

fn quote_family(c: char) -> Option<u8> {
    match c {
        '«' | '»' => Some(0),
        '‹' | '›' => Some(1),
        '"' | '“' | '”' | '„' | '‟' => Some(2),
        _ => None,
    }
}

/// Quote roles within one line, paired by order of appearance per family.
/// Families with an odd count are left alone.
fn quote_roles(line: &[char]) -> Vec<Option<QuoteRole>> {
    let mut roles = vec![None; line.len()];
    for fam in 0..3u8 {
        let pos: Vec<usize> = (0..line.len())
            .filter(|&i| quote_family(line[i]) == Some(fam))
            .collect();
        if pos.is_empty() || !pos.len().is_multiple_of(2) {
            continue;
        }
        for (k, &p) in pos.iter().enumerate() {
            roles[p] = Some(if k % 2 == 0 { QuoteRole::Open } else { QuoteRole::Close });
        }
    }
    roles
}

fn fix_quote_spacing_line(line: &str, report: &mut NormalizationReport) -> String {
    let chars: Vec<char> = line.chars().collect();
    let roles = quote_roles(&chars);
    let mut out: Vec<char> = Vec::with_capacity(chars.len());
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        match roles[i] {
            Some(QuoteRole::Close) => {
                let mut removed = 0;
                while out.last() == Some(&' ') {
                    out.pop();
                    removed += 1;
                }
                report.bump("quote_spacing", removed);
                // colon belongs after the closing quote
                let inner_nonempty = out.len() >= 2 && roles_open_before(&out);
                if out.last() == Some(&':') && inner_nonempty {
                    out.pop();
                    out.push(c);
                    out.push(':');
                    report.bump("colon_spacing", 1);
                } else {
                    out.push(c);
                }
                i += 1;
            }
            Some(QuoteRole::Open) => {
                out.push(c);
                i += 1;
                let mut removed = 0;
                while i < chars.len() && chars[i] == ' ' {
                    i += 1;
                    removed += 1;
                }
                report.bump("quote_spacing", removed);
            }
            None => {
                if c == ':' && chars.get(i + 1).is_none_or(|n| *n == ' ') {
                    let mut removed = 0;
                    while out.last() == Some(&' ') {
                        out.pop();
                        removed += 1;
                    }
                    report.bump("colon_spacing", removed);
                }
                out.push(c);
                i += 1;
            }
        }
    }
    out.into_iter().collect()
}

// The char before a colon that precedes a closing quote must not itself be a quote.
fn roles_open_before(out: &[char]) -> bool {
    out.len() >= 2 && quote_family(out[out.len() - 2]).is_none()
}

fn collapse_spaces(s: &str, report: &mut NormalizationReport) -> String {
    let mut lines = Vec::new();
    for line in s.split('\n') {
        let mut buf = String::with_capacity(line.len());
        let mut prev_space = true;
        for c in line.chars() {
            if c == ' ' {
                if prev_space {
                    report.bump("collapse", 1);
                    continue;
                }
                prev_space = true;
            } else {
                prev_space = false;
            }
            buf.push(c);
        }
        if buf.ends_with(' ') {
            buf.pop();
            report.bump("collapse", 1);
        }
        if !buf.is_empty() {
            lines.push(buf);
        }
    }
    lines.join("\n")
}

fn normalize_pass(s: &str, report: &mut NormalizationReport) -> String {
    let nfc: String = s.nfc().collect();
    let (fixed, n) = fix_encoding_counted(&nfc);
    report.bump("encoding", n);
    let mapped = map_chars(&fixed, report);
    let quoted: Vec<String> = mapped
        .split('\n')
        .map(|line| fix_quote_spacing_line(line, report))
        .collect();
    collapse_spaces(&quoted.join("\n"), report)
}

/// Full normalization. Repeats single passes until the text is stable, so the
/// result is a fixed point.
pub fn normalize_text(raw: &str) -> (String, NormalizationReport) {
    let mut report = NormalizationReport {
        input_len: raw.chars().count(),
        ..Default::default()
    };
    let mut cur = normalize_pass(raw, &mut report);
    for _ in 0..16 {
        let next = normalize_pass(&cur, &mut report);
        if next == cur {
            break;
        }
        cur = next;
    }
    report.output_len = cur.chars().count();
    (cur, report)
}

/// Convenience wrapper dropping the report.
pub fn normalize(raw: &str) -> String {
    normalize_text(raw).0
}
