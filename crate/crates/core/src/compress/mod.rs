//! Three-granularity rendering of captured terminal output.
//!
//! Every executed instruction is stored raw, then rendered at three levels:
//! `fine` is the raw output normalized at the character level, `coarse` is a
//! one-paragraph instruction/outcome overview, and `abstract` is a running
//! stage-wise progress narrative folded over the coarse entries. Planning
//! roles read only the granularity assigned to them by [`GranularityPolicy`].

mod summarize;

pub use summarize::{fallback_coarse, summarize_abstract, summarize_coarse, SummaryOutcome};

use serde::{Deserialize, Serialize};

/// Detail level of a memory rendering.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Granularity {
    Fine,
    Coarse,
    Abstract,
}

impl std::fmt::Display for Granularity {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Granularity::Fine => "fine",
            Granularity::Coarse => "coarse",
            Granularity::Abstract => "abstract",
        })
    }
}

/// Which granularity each planning role reads when its prompt is assembled.
///
/// The executor always writes fine text; it never reads renderings.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GranularityPolicy {
    pub reasoner: Granularity,
    pub assistant: Granularity,
}

impl Default for GranularityPolicy {
    fn default() -> Self {
        GranularityPolicy {
            reasoner: Granularity::Abstract,
            assistant: Granularity::Coarse,
        }
    }
}

/// Size ceilings for the three renderings. Characters for the summaries,
/// bytes for the normalized raw text.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Budgets {
    pub fine_cap_bytes: usize,
    pub coarse_chars: usize,
    pub abstract_chars: usize,
}

pub const DEFAULT_FINE_CAP: usize = 16 * 1024;

impl Default for Budgets {
    fn default() -> Self {
        Budgets {
            fine_cap_bytes: DEFAULT_FINE_CAP,
            coarse_chars: 512,
            abstract_chars: 1024,
        }
    }
}

/// Normalizes raw terminal output into fine-granularity text using the
/// default size cap. Total over arbitrary bytes and idempotent.
pub fn normalize(raw: &[u8]) -> String {
    normalize_with_cap(raw, DEFAULT_FINE_CAP)
}

/// Normalization with an explicit byte cap.
///
/// Steps, in order: lossy UTF-8 decode (invalid sequences become U+FFFD),
/// ANSI escape removal, carriage-return overwrite resolution (each line keeps
/// its final rewrite), removal of remaining control characters other than
/// `\n` and `\t`, and head+tail truncation to `cap` bytes with an elision
/// marker. Applying it twice gives the same text as applying it once.
pub fn normalize_with_cap(raw: &[u8], cap: usize) -> String {
    let decoded = String::from_utf8_lossy(raw);
    let stripped = strip_escapes(&decoded);
    let resolved = resolve_carriage_returns(&stripped);
    let clean: String = resolved
        .chars()
        .filter(|&c| c == '\n' || c == '\t' || (c >= ' ' && c != '\u{7f}'))
        .collect();
    cap_head_tail(clean, cap)
}

/// Removes ESC-introduced terminal escape sequences: CSI (`ESC [` through a
/// final byte in `@`..`~`), OSC (`ESC ]` through BEL or `ESC \`), SS3
/// (`ESC O` plus one byte), charset designation (`ESC (`/`ESC )` plus one
/// byte), and any other two-byte `ESC x` sequence.
fn strip_escapes(input: &str) -> String {
    let mut out = String::with_capacity(input.len());
    let mut chars = input.chars().peekable();
    while let Some(c) = chars.next() {
        if c != '\u{1b}' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('[') => {
                // parameter and intermediate bytes, then one final byte
                for c2 in chars.by_ref() {
                    if ('\u{40}'..='\u{7e}').contains(&c2) {
                        break;
                    }
                }
            }
            Some(']') => {
                let mut prev_esc = false;
                for c2 in chars.by_ref() {
                    if c2 == '\u{7}' || (prev_esc && c2 == '\\') {
                        break;
                    }
                    prev_esc = c2 == '\u{1b}';
                }
            }
            Some('O') | Some('(') | Some(')') => {
                chars.next();
            }
            // two-byte sequence, or a bare ESC at end of input
            Some(_) | None => {}
        }
    }
    out
}

/// Resolves carriage-return overwrites: within each line, only the text after
/// the last rewrite survives. A `\r\n` pair is an ordinary line ending, and a
/// trailing `\r` with nothing after it leaves the previous content visible.
fn resolve_carriage_returns(input: &str) -> String {
    let mut out = String::with_capacity(input.len());
    for (i, line) in input.split('\n').enumerate() {
        if i > 0 {
            out.push('\n');
        }
        if !line.contains('\r') {
            out.push_str(line);
            continue;
        }
        let segments: Vec<&str> = line.split('\r').collect();
        let last = *segments.last().unwrap();
        if !last.is_empty() {
            out.push_str(last);
        } else if let Some(seg) = segments.iter().rev().find(|s| !s.is_empty()) {
            out.push_str(seg);
        }
    }
    out
}

/// Truncates to `cap` bytes by keeping the head and tail around an elision
/// marker. Splits only at character boundaries.
fn cap_head_tail(text: String, cap: usize) -> String {
    if text.len() <= cap {
        return text;
    }
    // Reserve room for the marker itself; 64 bytes covers any u64 count.
    let budget = cap.saturating_sub(64).max(2);
    let head_budget = budget / 2;
    let tail_budget = budget - head_budget;

    let mut head_end = head_budget;
    while !text.is_char_boundary(head_end) {
        head_end -= 1;
    }
    let mut tail_start = text.len() - tail_budget;
    while !text.is_char_boundary(tail_start) {
        tail_start += 1;
    }
    let omitted = tail_start - head_end;
    format!(
        "{}\n[... {} bytes omitted ...]\n{}",
        &text[..head_end],
        omitted,
        &text[tail_start..]
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn strips_color_codes() {
        assert_eq!(normalize(b"\x1b[31mroot\x1b[0m@host"), "root@host");
    }

    #[test]
    fn resolves_progress_bar_rewrites() {
        assert_eq!(normalize(b"progress 10%\rprogress 99%\rdone\n"), "done\n");
    }

    #[test]
    fn crlf_is_a_plain_line_ending() {
        assert_eq!(normalize(b"hello\r\nworld\r\n"), "hello\nworld\n");
    }

    #[test]
    fn trailing_cr_keeps_visible_text() {
        assert_eq!(normalize(b"spinner |\r"), "spinner |");
    }

    #[test]
    fn drops_control_bytes_keeps_tabs() {
        assert_eq!(normalize(b"a\x00b\x07c\td\x7fe"), "abc\tde");
    }

    #[test]
    fn invalid_utf8_becomes_replacement_marker() {
        let out = normalize(b"ok \xff\xfe end");
        assert!(out.starts_with("ok "));
        assert!(out.contains('\u{fffd}'));
        assert!(out.ends_with(" end"));
    }

    #[test]
    fn osc_title_sequences_removed() {
        assert_eq!(normalize(b"\x1b]0;window title\x07visible"), "visible");
        assert_eq!(normalize(b"\x1b]8;;http://x\x1b\\link"), "link");
    }

    #[test]
    fn csi_with_params_and_intermediates_removed() {
        assert_eq!(normalize(b"\x1b[1;32;40mtext\x1b[?25lmore"), "textmore");
    }

    #[test]
    fn bare_escape_at_end_is_dropped() {
        assert_eq!(normalize(b"tail\x1b"), "tail");
    }

    #[test]
    fn no_forbidden_control_bytes_in_output() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let len = rng.gen_range(0..512);
            let raw: Vec<u8> = (0..len).map(|_| rng.gen()).collect();
            let out = normalize(&raw);
            for b in out.bytes() {
                assert!(
                    b == b'\n' || b == b'\t' || !(b < 0x20 || b == 0x7f),
                    "forbidden byte {b:#x} in output"
                );
            }
        }
    }

    #[test]
    fn idempotent_over_random_bytes() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        for round in 0..1000 {
            let len = rng.gen_range(0..1024);
            let raw: Vec<u8> = (0..len).map(|_| rng.gen()).collect();
            let once = normalize(&raw);
            let twice = normalize(once.as_bytes());
            assert_eq!(once, twice, "round {round} not idempotent: {raw:?}");
        }
    }

    #[test]
    fn idempotent_over_escape_heavy_corpus() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9001);
        let vocab: &[&[u8]] = &[
            b"\x1b[31m", b"\x1b[0m", b"\x1b]0;t\x07", b"\r", b"\r\n", b"\n",
            b"\t", b"x", b"ok", b"\x1bO", b"\x1b(B", b"\x00", b"\xc3\xa9", b"\xff",
        ];
        for _ in 0..1000 {
            let n = rng.gen_range(0..40);
            let mut raw = Vec::new();
            for _ in 0..n {
                raw.extend_from_slice(vocab[rng.gen_range(0..vocab.len())]);
            }
            let once = normalize(&raw);
            assert_eq!(once, normalize(once.as_bytes()));
        }
    }

    #[test]
    fn cap_keeps_head_and_tail() {
        let mut raw = Vec::new();
        raw.extend_from_slice(b"HEAD-MARK ");
        raw.extend_from_slice(&vec![b'x'; 40_000]);
        raw.extend_from_slice(b" TAIL-MARK");
        let out = normalize(&raw);
        assert!(out.len() <= DEFAULT_FINE_CAP, "len {}", out.len());
        assert!(out.starts_with("HEAD-MARK "));
        assert!(out.ends_with(" TAIL-MARK"));
        assert!(out.contains("bytes omitted"));
        // capping is stable under re-application too
        assert_eq!(out, normalize(out.as_bytes()));
    }

    #[test]
    fn cap_boundary_exact() {
        let raw = vec![b'a'; DEFAULT_FINE_CAP];
        assert_eq!(normalize(&raw).len(), DEFAULT_FINE_CAP);
        let raw = vec![b'a'; DEFAULT_FINE_CAP + 1];
        let out = normalize(&raw);
        assert!(out.len() <= DEFAULT_FINE_CAP);
        assert!(out.contains("bytes omitted"));
    }

    #[test]
    fn cap_respects_multibyte_boundaries() {
        let raw = "é".repeat(20_000);
        let out = normalize_with_cap(raw.as_bytes(), 1000);
        assert!(out.len() <= 1000);
        assert!(out.contains("bytes omitted"));
        assert_eq!(out, normalize_with_cap(out.as_bytes(), 1000));
    }

    #[test]
    fn default_policy_routes_roles() {
        let p = GranularityPolicy::default();
        assert_eq!(p.reasoner, Granularity::Abstract);
        assert_eq!(p.assistant, Granularity::Coarse);
    }
}
