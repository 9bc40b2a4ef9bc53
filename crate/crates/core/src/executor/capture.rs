//! Bounded capture of process output.
//!
//! Readers feed raw bytes in; the buffer keeps at most `cap` bytes split
//! evenly between the head and a ring-buffered tail, so an exploit that
//! floods the terminal cannot flood the agent.

use std::collections::VecDeque;

pub const DEFAULT_RAW_CAP: usize = 1024 * 1024;

#[derive(Debug)]
pub struct CappedBuffer {
    head: Vec<u8>,
    tail: VecDeque<u8>,
    head_cap: usize,
    tail_cap: usize,
    total_seen: u64,
}

impl CappedBuffer {
    pub fn new(cap: usize) -> CappedBuffer {
        let head_cap = cap / 2;
        CappedBuffer {
            head: Vec::new(),
            tail: VecDeque::new(),
            head_cap,
            tail_cap: cap - head_cap,
            total_seen: 0,
        }
    }

    pub fn push(&mut self, bytes: &[u8]) {
        self.total_seen += bytes.len() as u64;
        let mut rest = bytes;
        if self.head.len() < self.head_cap {
            let take = (self.head_cap - self.head.len()).min(rest.len());
            self.head.extend_from_slice(&rest[..take]);
            rest = &rest[take..];
        }
        for &b in rest {
            if self.tail.len() == self.tail_cap {
                self.tail.pop_front();
            }
            self.tail.push_back(b);
        }
    }

    pub fn truncated(&self) -> bool {
        self.total_seen > (self.head.len() + self.tail.len()) as u64
    }

    pub fn total_seen(&self) -> u64 {
        self.total_seen
    }

    /// Assembled capture; when bytes were dropped an omission marker sits
    /// between head and tail.
    pub fn into_bytes(self) -> Vec<u8> {
        let dropped = self.total_seen - (self.head.len() + self.tail.len()) as u64;
        let mut out = self.head;
        if dropped > 0 {
            out.extend_from_slice(format!("\n[... {dropped} bytes omitted ...]\n").as_bytes());
        }
        out.extend(self.tail);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_input_passes_through() {
        let mut buf = CappedBuffer::new(64);
        buf.push(b"hello ");
        buf.push(b"world");
        assert!(!buf.truncated());
        assert_eq!(buf.into_bytes(), b"hello world");
    }

    #[test]
    fn overflow_keeps_head_and_tail() {
        let mut buf = CappedBuffer::new(20);
        // 10 head + 10 tail
        for i in 0..100u8 {
            buf.push(&[b'a' + (i % 26)]);
        }
        assert!(buf.truncated());
        let out = buf.into_bytes();
        let text = String::from_utf8_lossy(&out);
        assert!(text.starts_with("abcdefghij"), "head preserved: {text}");
        assert!(text.contains("[... 80 bytes omitted ...]"));
        // last 10 of the sequence: indices 90..100 -> letters (90..100)%26
        let expect_tail: String = (90..100u8).map(|i| (b'a' + (i % 26)) as char).collect();
        assert!(text.ends_with(&expect_tail), "tail preserved: {text}");
    }

    #[test]
    fn exact_cap_is_not_truncated() {
        let mut buf = CappedBuffer::new(10);
        buf.push(b"0123456789");
        assert!(!buf.truncated());
        assert_eq!(buf.into_bytes(), b"0123456789");
    }

    #[test]
    fn chunk_boundaries_do_not_matter() {
        let data: Vec<u8> = (0..5000).map(|i| (i % 251) as u8).collect();
        let mut one = CappedBuffer::new(1000);
        one.push(&data);
        let mut many = CappedBuffer::new(1000);
        for chunk in data.chunks(7) {
            many.push(chunk);
        }
        assert_eq!(one.into_bytes(), many.into_bytes());
    }
}
